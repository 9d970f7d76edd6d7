//! Central-difference stencils and the periodic tridiagonal Markov generator
//! `L = (sigma^2 / 2) Delta + mu Nabla`.

use crate::coefficients::CoefficientField;
use crate::lattice::{check_len, Grid};
use crate::{Matrix, Result};

/// `(f(x + h) - f(x - h)) / 2h`, periodic.
pub fn apply_nabla(grid: &Grid, f: &[f64]) -> Result<Vec<f64>> {
    check_len(grid, f.len())?;
    let h = grid.spacing();
    Ok((0..grid.len())
        .map(|j| (f[grid.next(j)] - f[grid.prev(j)]) / (2.0 * h))
        .collect())
}

/// `(f(x + h) + f(x - h) - 2 f(x)) / h^2`, periodic.
pub fn apply_delta(grid: &Grid, f: &[f64]) -> Result<Vec<f64>> {
    check_len(grid, f.len())?;
    let h = grid.spacing();
    Ok((0..grid.len())
        .map(|j| (f[grid.next(j)] + f[grid.prev(j)] - 2.0 * f[j]) / (h * h))
        .collect())
}

/// Cyclic tridiagonal operator: row `j` couples to `j + 1` through `up[j]` and
/// to `j - 1` through `down[j]` (indices mod `N`).
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicTridiagonalOperator {
    grid: Grid,
    diag: Vec<f64>,
    up: Vec<f64>,
    down: Vec<f64>,
}

impl PeriodicTridiagonalOperator {
    pub fn new(grid: Grid, diag: Vec<f64>, up: Vec<f64>, down: Vec<f64>) -> Result<Self> {
        check_len(&grid, diag.len())?;
        check_len(&grid, up.len())?;
        check_len(&grid, down.len())?;
        Ok(PeriodicTridiagonalOperator { grid, diag, up, down })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn level(&self) -> u32 {
        self.grid.level()
    }

    pub fn spacing(&self) -> f64 {
        self.grid.spacing()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn up(&self) -> &[f64] {
        &self.up
    }

    pub fn down(&self) -> &[f64] {
        &self.down
    }

    /// All off-diagonal rates strictly positive.
    pub fn is_markov(&self) -> bool {
        self.up.iter().chain(&self.down).all(|r| *r > 0.0)
    }

    /// Largest `|diag[j] + up[j] + down[j]|`.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.dim())
            .map(|j| (self.diag[j] + self.up[j] + self.down[j]).abs())
            .fold(0.0, f64::max)
    }

    /// Jump rate from site `from` to its neighbour in direction `step` (+1 or -1).
    pub fn rate(&self, from: usize, step: i8) -> f64 {
        if step > 0 {
            self.up[from]
        } else {
            self.down[from]
        }
    }

    /// `(L f)(j) = diag[j] f(j) + up[j] f(j+1) + down[j] f(j-1)`.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        check_len(&self.grid, f.len())?;
        Ok((0..self.dim())
            .map(|j| self.diag[j] * f[j] + self.up[j] * f[self.grid.next(j)] + self.down[j] * f[self.grid.prev(j)])
            .collect())
    }

    /// Dense matrix; entries for `N = 2` accumulate both couplings.
    pub fn to_dense(&self) -> Matrix {
        let n = self.dim();
        let mut a = Matrix::zeros(n, n);
        for j in 0..n {
            a[(j, j)] += self.diag[j];
            a[(j, self.grid.next(j))] += self.up[j];
            a[(j, self.grid.prev(j))] += self.down[j];
        }
        a
    }

    /// `L * M`: the operator acting on the row (source) index of `m`.
    pub fn left_multiply(&self, m: &Matrix) -> Matrix {
        let n = self.dim();
        debug_assert_eq!(m.nrows(), n);
        let mut out = Matrix::zeros(n, m.ncols());
        for c in 0..m.ncols() {
            let col = m.column(c);
            for j in 0..n {
                out[(j, c)] =
                    self.diag[j] * col[j] + self.up[j] * col[self.grid.next(j)] + self.down[j] * col[self.grid.prev(j)];
            }
        }
        out
    }

    /// `M * L`: the transposed operator acting on the column (target) index.
    pub fn right_multiply(&self, m: &Matrix) -> Matrix {
        let n = self.dim();
        debug_assert_eq!(m.ncols(), n);
        let mut out = Matrix::zeros(m.nrows(), n);
        for y in 0..n {
            let prev = self.grid.prev(y);
            let next = self.grid.next(y);
            // Column y of M L collects M(., y) diag[y], M(., y-1) up[y-1], M(., y+1) down[y+1].
            for x in 0..m.nrows() {
                out[(x, y)] = m[(x, y)] * self.diag[y] + m[(x, prev)] * self.up[prev] + m[(x, next)] * self.down[next];
            }
        }
        out
    }
}

/// Assembles the generator on `grid`.
///
/// Below `m_zero` some rates may be nonpositive; the operator is still built
/// and [`PeriodicTridiagonalOperator::is_markov`] reports the defect.
pub fn build_generator(field: &CoefficientField, grid: &Grid) -> Result<PeriodicTridiagonalOperator> {
    let (vol, drift) = field.sample(grid)?;
    let h = grid.spacing();
    let diffusive: Vec<f64> = vol.iter().map(|v| v / (2.0 * h * h)).collect();
    let advective: Vec<f64> = drift.iter().map(|mu| mu / (2.0 * h)).collect();
    let diag = vol.iter().map(|v| -v / (h * h)).collect();
    let up = diffusive.iter().zip(&advective).map(|(d, a)| d + a).collect();
    let down = diffusive.iter().zip(&advective).map(|(d, a)| d - a).collect();
    PeriodicTridiagonalOperator::new(*grid, diag, up, down)
}

/// Matrix transpose in banded form: `up'[j] = down[j+1]`, `down'[j] = up[j-1]`.
pub fn adjoint(op: &PeriodicTridiagonalOperator) -> PeriodicTridiagonalOperator {
    let g = op.grid;
    let n = op.dim();
    PeriodicTridiagonalOperator {
        grid: g,
        diag: op.diag.clone(),
        up: (0..n).map(|j| op.down[g.next(j)]).collect(),
        down: (0..n).map(|j| op.up[g.prev(j)]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{m_zero, make_family, Family};
    use crate::lattice::{build_grid, momentum_set, plane_wave};
    use crate::spectral::symbol;
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;
    use proptest::prelude::*;

    #[test]
    fn stencils_kill_constants() {
        let g = build_grid(3, 1.0).unwrap();
        let c = vec![2.5; g.len()];
        assert!(apply_nabla(&g, &c).unwrap().iter().all(|v| *v == 0.0));
        assert!(apply_delta(&g, &c).unwrap().iter().all(|v| *v == 0.0));
        assert!(apply_nabla(&g, &c[1..]).is_err());
    }

    #[test]
    fn nabla_of_sine() {
        let g = build_grid(4, 1.0).unwrap();
        let pi = std::f64::consts::PI;
        let f: Vec<f64> = g.points().map(|x| (pi * x).sin()).collect();
        let d = apply_nabla(&g, &f).unwrap();
        let h = g.spacing();
        for (j, x) in g.points().enumerate() {
            assert_abs_diff_eq!(d[j], (pi * x).cos() * (pi * h).sin() / h, epsilon = 1e-13);
        }
    }

    #[test]
    fn stencil_eigenvalues_on_plane_waves() {
        let g = build_grid(3, 1.0).unwrap();
        let n = g.len();
        let h = g.spacing();
        for (k, p) in momentum_set(&g).wavenumbers().zip(momentum_set(&g).momenta()) {
            let wave: Vec<Complex64> = (0..n).map(|j| plane_wave(k, j, n)).collect();
            let re: Vec<f64> = wave.iter().map(|z| z.re).collect();
            let im: Vec<f64> = wave.iter().map(|z| z.im).collect();
            let (nr, ni) = (apply_nabla(&g, &re).unwrap(), apply_nabla(&g, &im).unwrap());
            let (dr, di) = (apply_delta(&g, &re).unwrap(), apply_delta(&g, &im).unwrap());
            let nabla_eig = Complex64::new(0.0, (h * p).sin() / h);
            let delta_eig = 2.0 * ((h * p).cos() - 1.0) / (h * h);
            for j in 0..n {
                assert_abs_diff_eq!(
                    (Complex64::new(nr[j], ni[j]) - nabla_eig * wave[j]).norm(),
                    0.0,
                    epsilon = 1e-12
                );
                assert_abs_diff_eq!(
                    (Complex64::new(dr[j], di[j]) - delta_eig * wave[j]).norm(),
                    0.0,
                    epsilon = 1e-11
                );
            }
        }
    }

    #[test]
    fn delta_of_indicator() {
        let g = build_grid(2, 4.0).unwrap();
        assert_eq!(g.spacing(), 1.0);
        let mut f = vec![0.0; g.len()];
        f[3] = 1.0;
        let d = apply_delta(&g, &f).unwrap();
        assert_eq!(&d[2..5], &[1.0, -2.0, 1.0]);
        assert!(d.iter().enumerate().all(|(j, v)| (2..5).contains(&j) || *v == 0.0));
    }

    #[test]
    fn generator_entries() {
        let g = build_grid(1, 1.0).unwrap();
        assert_eq!(g.spacing(), 0.5);
        let op = build_generator(&make_family(&Family::constant(1.0, 0.0), 1.0).unwrap(), &g).unwrap();
        assert!(op.up().iter().chain(op.down()).all(|r| *r == 2.0));
        assert!(op.diag().iter().all(|d| *d == -4.0));
        let op = build_generator(&make_family(&Family::constant(1.0, 0.5), 1.0).unwrap(), &g).unwrap();
        assert!(op.up().iter().all(|r| *r == 2.5));
        assert!(op.down().iter().all(|r| *r == 1.5));
        assert_eq!(op.max_row_sum(), 0.0);
    }

    #[test]
    fn generator_flags_non_markov_levels() {
        let f = make_family(&Family::constant(1.0, 10.0), 1.0).unwrap();
        let m0 = m_zero(&f);
        assert!(!build_generator(&f, &build_grid(m0 - 1, 1.0).unwrap())
            .unwrap()
            .is_markov());
        assert!(build_generator(&f, &build_grid(m0, 1.0).unwrap()).unwrap().is_markov());
    }

    #[test]
    fn generator_diagonalised_by_plane_waves() {
        for (sigma2, mu) in [(1.0, 0.0), (0.25, -1.0), (4.0, 0.5)] {
            let g = build_grid(4, 1.0).unwrap();
            let op = build_generator(&make_family(&Family::constant(sigma2, mu), 1.0).unwrap(), &g).unwrap();
            let dense = op.to_dense();
            let n = g.len();
            for (k, p) in momentum_set(&g).wavenumbers().zip(momentum_set(&g).momenta()) {
                // The symbol is the eigenvalue on exp(-ipx).
                let wave: Vec<Complex64> = (0..n).map(|j| plane_wave(k, j, n).conj()).collect();
                let eig = symbol(p, g.spacing(), sigma2.sqrt(), mu);
                for x in 0..n {
                    let lf: Complex64 = (0..n).map(|y| dense[(x, y)] * wave[y]).sum();
                    assert!((lf - eig * wave[x]).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn adjoint_examples() {
        let g = build_grid(3, 1.0).unwrap();
        let sym = build_generator(&make_family(&Family::constant(2.0, 0.0), 1.0).unwrap(), &g).unwrap();
        assert_eq!(adjoint(&sym), sym);
        let op = build_generator(&make_family(&Family::default_trig(), 1.0).unwrap(), &g).unwrap();
        assert_eq!(adjoint(&adjoint(&op)), op);
        assert_eq!(adjoint(&op).to_dense(), op.to_dense().transpose());
        let drift = build_generator(&make_family(&Family::constant(1.0, 0.5), 1.0).unwrap(), &g).unwrap();
        let dense = drift.to_dense();
        let adj = adjoint(&drift);
        for j in 0..g.len() {
            let col: f64 = dense.column(j).sum();
            assert_abs_diff_eq!(col, adj.diag()[j] + adj.up()[j] + adj.down()[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn two_point_lattice_accumulates() {
        let g = build_grid(0, 1.0).unwrap();
        let op = build_generator(&make_family(&Family::constant(1.0, 0.3), 1.0).unwrap(), &g).unwrap();
        let d = op.to_dense();
        assert_abs_diff_eq!(d[(0, 1)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.row(0).sum(), 0.0, epsilon = 1e-15);
        assert_eq!(adjoint(&op).to_dense(), d.transpose());
    }

    #[test]
    fn banded_products_match_dense() {
        let g = build_grid(2, 1.0).unwrap();
        let op = build_generator(&make_family(&Family::default_trig(), 1.0).unwrap(), &g).unwrap();
        let m = Matrix::from_fn(8, 8, |i, j| ((i * 3 + j * 5) % 7) as f64 - 2.0);
        let dense = op.to_dense();
        assert!((op.left_multiply(&m) - &dense * &m).abs().max() < 1e-12);
        assert!((op.right_multiply(&m) - &m * &dense).abs().max() < 1e-12);
    }

    proptest! {
        #[test]
        fn generator_invariants(m in 0u32..7, a in 1.0f64..3.0, b in -0.6f64..0.6, c in -3.0f64..3.0) {
            let fam = Family::TrigSmooth {
                vol_squared: crate::coefficients::TrigPoly::constant(a).with_term(1, b, 0.0).with_term(3, 0.0, b / 2.0),
                drift: crate::coefficients::TrigPoly::constant(c).with_term(2, 0.0, c),
            };
            let f = make_family(&fam, 1.0).unwrap();
            let g = build_grid(m, 1.0).unwrap();
            let op = build_generator(&f, &g).unwrap();
            let scale = op.diag().iter().map(|d| d.abs()).fold(0.0, f64::max);
            prop_assert!(op.max_row_sum() <= 1e-12 * scale.max(1.0));
            let lc = op.apply(&vec![1.0; g.len()]).unwrap();
            prop_assert!(lc.iter().all(|v| v.abs() <= 1e-13 * scale.max(1.0)));
            if m >= m_zero(&f) {
                prop_assert!(op.is_markov());
            }
        }
    }
}
