//! Dyadic periodic lattices on `[-L, L)` with the endpoints identified.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::{Error, Result};

/// Largest lattice dimension accepted unless the caller raises it.
pub const DEFAULT_MAX_DIM: usize = 2048;

/// The lattice `A_m = {-L, -L + h, ..., L - h}` with `h = L 2^-m`.
///
/// Points are never stored; `x_j = -L + j h` is recomputed from the index so
/// that nested lattices agree bit for bit at shared points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    level: u32,
    half_width: f64,
    spacing: f64,
    len: usize,
}

impl Grid {
    /// Builds the level-`m` lattice, refusing dimensions above `max_dim`.
    pub fn with_limit(level: u32, half_width: f64, max_dim: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "half width must be positive and finite, got {half_width}"
            )));
        }
        let dim = 1usize
            .checked_shl(level + 1)
            .filter(|&d| d <= max_dim && level < 62)
            .ok_or(Error::ResourceGuard {
                level,
                dim: if level < 62 { 1usize << (level + 1) } else { usize::MAX },
                max_dim,
            })?;
        Ok(Grid {
            level,
            half_width,
            spacing: half_width * (-(level as f64)).exp2(),
            len: dim,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Number of lattice points, `2^(m+1)`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, index: usize) -> f64 {
        -self.half_width + index as f64 * self.spacing
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(move |j| self.point(j))
    }

    /// Reduces a signed index modulo the lattice size.
    pub fn wrap(&self, index: isize) -> usize {
        index.rem_euclid(self.len as isize) as usize
    }

    pub fn next(&self, index: usize) -> usize {
        if index + 1 == self.len {
            0
        } else {
            index + 1
        }
    }

    pub fn prev(&self, index: usize) -> usize {
        if index == 0 {
            self.len - 1
        } else {
            index - 1
        }
    }

    /// Whether `self` is a sub-lattice of `finer` (same width, lower level).
    pub fn nests_in(&self, finer: &Grid) -> bool {
        self.half_width == finer.half_width && self.level <= finer.level
    }
}

/// Builds the level-`m` lattice under the default resource guard.
pub fn build_grid(level: u32, half_width: f64) -> Result<Grid> {
    Grid::with_limit(level, half_width, DEFAULT_MAX_DIM)
}

/// Distance on the circle of circumference `2L`: `min_n |x - y - 2Ln|`.
pub fn periodic_distance(x: f64, y: f64, half_width: f64) -> f64 {
    let period = 2.0 * half_width;
    let r = (x - y).rem_euclid(period);
    r.min(period - r)
}

/// Momenta `pi k / L` for `k = -N/2 .. N/2 - 1`, one per lattice point.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumSet {
    half_width: f64,
    len: usize,
}

impl MomentumSet {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spacing(&self) -> f64 {
        PI / self.half_width
    }

    /// Integer labels `k` in ascending order.
    pub fn wavenumbers(&self) -> impl Iterator<Item = i64> {
        let half = (self.len / 2) as i64;
        -half..half
    }

    pub fn momenta(&self) -> Vec<f64> {
        self.wavenumbers().map(|k| k as f64 * PI / self.half_width).collect()
    }
}

pub fn momentum_set(grid: &Grid) -> MomentumSet {
    MomentumSet {
        half_width: grid.half_width,
        len: grid.len,
    }
}

/// `exp(i pi num / den)` with the angle reduced exactly in integers first.
pub(crate) fn unit_phase(num: i64, den: i64) -> Complex64 {
    let reduced = num.rem_euclid(2 * den);
    let angle = PI * reduced as f64 / den as f64;
    Complex64::new(angle.cos(), angle.sin())
}

/// `exp(i p_k x_j)` for wavenumber `k` and lattice index `j`.
///
/// `p_k x_j = pi k (2j - N) / N`, evaluated from integers.
pub(crate) fn plane_wave(k: i64, j: usize, n: usize) -> Complex64 {
    let n = n as i64;
    unit_phase(k * (2 * j as i64 - n), n)
}

/// `f_hat(p) = h sum_x f(x) exp(-i p x)`, momenta in ascending order.
pub fn fourier_transform(grid: &Grid, values: &[Complex64]) -> Result<Vec<Complex64>> {
    check_len(grid, values.len())?;
    let n = grid.len();
    let h = grid.spacing();
    Ok(momentum_set(grid)
        .wavenumbers()
        .map(|k| {
            let sum: Complex64 = values
                .iter()
                .enumerate()
                .map(|(j, f)| f * plane_wave(k, j, n).conj())
                .sum();
            sum * h
        })
        .collect())
}

/// `f(x) = (1/2L) sum_p f_hat(p) exp(i p x)`.
pub fn inverse_fourier_transform(grid: &Grid, spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
    check_len(grid, spectrum.len())?;
    let n = grid.len();
    let scale = 1.0 / (2.0 * grid.half_width());
    Ok((0..n)
        .map(|j| {
            let sum: Complex64 = momentum_set(grid)
                .wavenumbers()
                .zip(spectrum)
                .map(|(k, f)| f * plane_wave(k, j, n))
                .sum();
            sum * scale
        })
        .collect())
}

pub(crate) fn check_len(grid: &Grid, found: usize) -> Result<()> {
    if found != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            found,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn level_zero_has_two_points() {
        let g = build_grid(0, 1.0).unwrap();
        assert_eq!(g.points().collect::<Vec<_>>(), vec![-1.0, 0.0]);
        assert_eq!(g.spacing(), 1.0);
    }

    #[test]
    fn level_sizes_follow_dyadic_rule() {
        let g = build_grid(2, 1.0).unwrap();
        assert_eq!((g.len(), g.spacing()), (8, 0.25));
        let g = build_grid(3, 2.0).unwrap();
        assert_eq!((g.len(), g.spacing()), (16, 0.25));
        assert_eq!(g.point(0), -2.0);
        assert_eq!(g.point(15), 2.0 - 0.25);
    }

    #[test]
    fn resource_guard_rejects_large_levels() {
        assert!(matches!(build_grid(11, 1.0), Err(Error::ResourceGuard { .. })));
        assert!(build_grid(10, 1.0).is_ok());
        assert!(Grid::with_limit(12, 1.0, 8192).is_ok());
        assert!(matches!(build_grid(200, 1.0), Err(Error::ResourceGuard { .. })));
        assert!(build_grid(3, 0.0).is_err());
    }

    #[test]
    fn wrap_is_modular() {
        let g = build_grid(1, 1.0).unwrap();
        assert_eq!(g.wrap(-1), 3);
        assert_eq!(g.wrap(4), 0);
        assert_eq!(g.next(3), 0);
        assert_eq!(g.prev(0), 3);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(periodic_distance(0.3, 0.3, 1.0), 0.0);
        assert_eq!(periodic_distance(-1.0, 1.0, 1.0), 0.0);
        assert_abs_diff_eq!(periodic_distance(0.9, -0.9, 1.0), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn momentum_examples() {
        let pi = std::f64::consts::PI;
        let g = build_grid(0, pi).unwrap();
        let p = momentum_set(&g).momenta();
        assert_abs_diff_eq!(p[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-15);
        let g = build_grid(1, pi).unwrap();
        let p = momentum_set(&g).momenta();
        for (a, b) in p.iter().zip([-2.0, -1.0, 0.0, 1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        for m in 0..6 {
            let g = build_grid(m, 1.3).unwrap();
            let ms = momentum_set(&g);
            assert_eq!(ms.len(), g.len());
            assert!(ms.momenta().contains(&0.0));
        }
    }

    #[test]
    fn plane_waves_are_periodic() {
        for m in 0..5 {
            let g = build_grid(m, 1.0).unwrap();
            let n = g.len();
            for k in momentum_set(&g).wavenumbers() {
                // x_N = L coincides with x_0 = -L.
                let wrapped = unit_phase(k * n as i64, n as i64);
                assert_abs_diff_eq!((wrapped - plane_wave(k, 0, n)).norm(), 0.0, epsilon = 1e-14);
                let direct = Complex64::new(0.0, k as f64 * std::f64::consts::PI * g.point(1)).exp();
                assert_abs_diff_eq!((direct - plane_wave(k, 1, n)).norm(), 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn transform_rejects_wrong_length() {
        let g = build_grid(2, 1.0).unwrap();
        assert!(fourier_transform(&g, &[Complex64::new(1.0, 0.0); 3]).is_err());
    }

    proptest! {
        #[test]
        fn transform_round_trip(m in 0u32..6, seed in proptest::collection::vec(-5.0f64..5.0, 128)) {
            let g = build_grid(m, 1.7).unwrap();
            let f: Vec<Complex64> = (0..g.len())
                .map(|j| Complex64::new(seed[j], seed[(j * 7 + 3) % 128]))
                .collect();
            let back = inverse_fourier_transform(&g, &fourier_transform(&g, &f).unwrap()).unwrap();
            let scale = f.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
            for (a, b) in f.iter().zip(&back) {
                prop_assert!((a - b).norm() <= 1e-12 * scale);
            }
        }

        #[test]
        fn distance_triangle_inequality(x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
            let l = 2.0;
            let d = |a, b| periodic_distance(a, b, l);
            prop_assert!(d(x, z) <= d(x, y) + d(y, z) + 1e-12);
            prop_assert!(d(x, y) <= l + 1e-15);
            prop_assert!((d(x, y) - d(y, x)).abs() < 1e-15);
        }
    }
}
