//! Exact kernels for constant coefficients, summed as Fourier series over the
//! momentum set, plus the elementary trigonometric bounds behind the smooth
//! convergence rate.
//!
//! With constant `sigma` and `mu` the generator is circulant, so every kernel
//! here depends on `(x, y)` only through `y - x`. Each series is summed once
//! per lattice offset in ascending momentum order and then spread over the
//! matrix.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lattice::{momentum_set, unit_phase, Grid};
use crate::propagator::{dirac_kernel, EulerStep, KernelMatrix, Scheme};
use crate::{Error, Matrix, Result};

const IMAGINARY_TOLERANCE: f64 = 1e-11;

/// Exponent `sigma^2 p^2 t / 2` beyond which continuum modes are dropped.
const GAUSSIAN_CUTOFF: f64 = 40.0;

/// `l(p) = -i mu sin(hp)/h + sigma^2 (cos hp - 1)/h^2`, the eigenvalue of the
/// generator on `exp(-ipx)`.
pub fn symbol(p: f64, h: f64, sigma: f64, mu: f64) -> Complex64 {
    let x = h * p;
    Complex64::new(sigma * sigma * (x.cos() - 1.0) / (h * h), -mu * x.sin() / h)
}

/// The continuum symbol `-i mu p - sigma^2 p^2 / 2`.
pub fn continuum_symbol(p: f64, sigma: f64, mu: f64) -> Complex64 {
    Complex64::new(-0.5 * sigma * sigma * p * p, -mu * p)
}

/// `v[d] = (1/2L) sum_p c(p) exp(i p d h)` for every offset `d`, plus the
/// largest imaginary part met.
fn offset_series(grid: &Grid, coefficient: impl Fn(f64) -> Complex64) -> (Vec<f64>, f64) {
    let n = grid.len();
    let ms = momentum_set(grid);
    let coefficients: Vec<(i64, Complex64)> = ms
        .wavenumbers()
        .zip(ms.momenta())
        .map(|(k, p)| (k, coefficient(p)))
        .collect();
    let scale = 1.0 / (2.0 * grid.half_width());
    let mut residue: f64 = 0.0;
    let values = (0..n as i64)
        .map(|d| {
            // p d h = 2 pi k d / N
            let sum: Complex64 = coefficients
                .iter()
                .map(|(k, c)| c * unit_phase(2 * k * d, n as i64))
                .sum();
            residue = residue.max((sum.im * scale).abs());
            sum.re * scale
        })
        .collect();
    (values, residue)
}

/// Spreads an offset vector into the circulant matrix `u(x, y) = v[y - x]`.
fn circulant(grid: &Grid, offsets: &[f64]) -> Matrix {
    let n = grid.len();
    Matrix::from_fn(n, n, |x, y| offsets[(y + n - x) % n])
}

fn check_real(residue: f64, offsets: &[f64]) -> Result<()> {
    let scale = offsets.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let tolerance = IMAGINARY_TOLERANCE * scale;
    if !(residue <= tolerance) {
        return Err(Error::Consistency {
            what: "imaginary part of a Fourier kernel",
            discrepancy: residue,
            tolerance,
        });
    }
    Ok(())
}

fn check_coefficients(sigma: f64, mu: f64, t: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need sigma > 0 and finite mu, got sigma = {sigma}, mu = {mu}"
        )));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidParameter(format!("time must be nonnegative, got {t}")));
    }
    Ok(())
}

/// Semidiscrete kernel `(1/2L) sum_p exp(t l(p)) exp(ip(y - x))`.
pub fn fourier_kernel(sigma: f64, mu: f64, grid: &Grid, t: f64) -> Result<KernelMatrix> {
    check_coefficients(sigma, mu, t)?;
    if t == 0.0 {
        return Ok(dirac_kernel(grid, Scheme::Spectral));
    }
    let h = grid.spacing();
    let (offsets, residue) = offset_series(grid, |p| (symbol(p, h, sigma, mu) * t).exp());
    check_real(residue, &offsets)?;
    Ok(KernelMatrix {
        grid: *grid,
        time: t,
        scheme: Scheme::Spectral,
        values: circulant(grid, &offsets),
    })
}

fn complex_pow(mut base: Complex64, mut n: u64) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    while n > 0 {
        if n & 1 == 1 {
            acc *= base;
        }
        base *= base;
        n >>= 1;
    }
    acc
}

/// Euler kernel `(1/2L) sum_p (1 + dt l(p))^n exp(ip(y - x))`, `n dt = t`.
pub fn fourier_kernel_discrete(sigma: f64, mu: f64, grid: &Grid, t: f64, step: EulerStep) -> Result<KernelMatrix> {
    check_coefficients(sigma, mu, t)?;
    if (step.horizon() - t).abs() > 1e-12 * t.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidParameter(format!(
            "{} steps of {} do not reach t = {t}",
            step.n_steps, step.delta_t
        )));
    }
    let h = grid.spacing();
    let factor = 1.0 - step.delta_t * sigma * sigma / (h * h);
    if !(factor > 0.0) {
        return Err(Error::Unstable { index: 0, factor });
    }
    let (offsets, residue) = offset_series(grid, |p| {
        complex_pow(1.0 + symbol(p, h, sigma, mu) * step.delta_t, step.n_steps)
    });
    check_real(residue, &offsets)?;
    Ok(KernelMatrix {
        grid: *grid,
        time: t,
        scheme: Scheme::SpectralEuler {
            delta_t: step.delta_t,
            n_steps: step.n_steps,
        },
        values: circulant(grid, &offsets),
    })
}

/// Central first and second differences of the semidiscrete kernel in `x`,
/// from the stencil eigenvalues `-i sin(hp)/h` and `2(cos hp - 1)/h^2` on
/// `exp(-ipx)`.
pub fn kernel_space_derivatives(sigma: f64, mu: f64, grid: &Grid, t: f64) -> Result<(Matrix, Matrix)> {
    check_coefficients(sigma, mu, t)?;
    let h = grid.spacing();
    let propagate = |p: f64| (symbol(p, h, sigma, mu) * t).exp();
    let (first, r1) = offset_series(grid, |p| propagate(p) * Complex64::new(0.0, -(h * p).sin() / h));
    check_real(r1, &first)?;
    let (second, r2) = offset_series(grid, |p| propagate(p) * (2.0 * ((h * p).cos() - 1.0) / (h * h)));
    check_real(r2, &second)?;
    Ok((circulant(grid, &first), circulant(grid, &second)))
}

/// Periodised continuum kernel on the lattice points, with modes dropped once
/// `exp(-sigma^2 p^2 t / 2) < e^-40`.
pub fn continuum_kernel(sigma: f64, mu: f64, grid: &Grid, t: f64) -> Result<KernelMatrix> {
    check_coefficients(sigma, mu, t)?;
    if t == 0.0 {
        return Err(Error::InvalidParameter(
            "the continuum kernel is singular at t = 0".into(),
        ));
    }
    let l = grid.half_width();
    let dp = std::f64::consts::PI / l;
    let p_max = (2.0 * GAUSSIAN_CUTOFF / (sigma * sigma * t)).sqrt();
    let modes = (p_max / dp).ceil() as u64;
    let offsets: Vec<f64> = (0..grid.len())
        .map(|d| {
            let s = d as f64 * grid.spacing() - mu * t;
            // Smallest terms first.
            let tail: f64 = (1..=modes)
                .rev()
                .map(|k| {
                    let p = k as f64 * dp;
                    (-0.5 * sigma * sigma * p * p * t).exp() * (p * s).cos()
                })
                .sum();
            (1.0 + 2.0 * tail) / (2.0 * l)
        })
        .collect();
    Ok(KernelMatrix {
        grid: *grid,
        time: t,
        scheme: Scheme::Continuum,
        values: circulant(grid, &offsets),
    })
}

/// The four elementary bounds, written in `x = hp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrigInequality {
    /// `x^3/2 - x^5/8 <= sin x - sin(2x)/2 <= x^3/2` for `0 <= x <= sqrt 2`.
    SineDifference,
    /// `-x^4/8 <= (cos x - 1) - (cos 2x - 1)/4 <= -x^4/8 + x^6/48`.
    CosineDifference,
    /// `-x^2/2 <= cos x - 1 <= -x^2/2 + x^4/24`.
    CosineTaylor,
    /// `cos x - 1 <= -x^2/4` for `|x| <= sqrt(2/3)`.
    QuarterBound,
}

impl TrigInequality {
    pub const ALL: [TrigInequality; 4] = [
        TrigInequality::SineDifference,
        TrigInequality::CosineDifference,
        TrigInequality::CosineTaylor,
        TrigInequality::QuarterBound,
    ];

    /// `(lower, middle, upper)` at `x = hp`; `lower` is `-inf` for one-sided bounds.
    fn sides(self, x: f64) -> (f64, f64, f64) {
        let x2 = x * x;
        match self {
            TrigInequality::SineDifference => {
                let a = x.abs();
                let s = (0.5 * a).sin();
                // sin a - sin(2a)/2 = 2 sin a sin^2(a/2), free of cancellation.
                let mid = 2.0 * a.sin() * s * s;
                let cube = a * a * a;
                (0.5 * cube - cube * a * a / 8.0, mid, 0.5 * cube)
            }
            TrigInequality::CosineDifference => {
                let s = (0.5 * x).sin();
                let mid = -2.0 * s.powi(4);
                let quartic = x2 * x2;
                (-quartic / 8.0, mid, -quartic / 8.0 + quartic * x2 / 48.0)
            }
            TrigInequality::CosineTaylor => {
                let s = (0.5 * x).sin();
                (-0.5 * x2, -2.0 * s * s, -0.5 * x2 + x2 * x2 / 24.0)
            }
            TrigInequality::QuarterBound => {
                let s = (0.5 * x).sin();
                (f64::NEG_INFINITY, -2.0 * s * s, -0.25 * x2)
            }
        }
    }

    fn domain(self) -> f64 {
        match self {
            TrigInequality::QuarterBound => (2.0f64 / 3.0).sqrt(),
            _ => 2.0f64.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigViolation {
    pub inequality: TrigInequality,
    pub h: f64,
    pub p: f64,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigReport {
    pub samples: usize,
    /// Samples inside each inequality's domain, in [`TrigInequality::ALL`] order.
    pub checked: [usize; 4],
    pub violations: Vec<TrigViolation>,
}

impl TrigReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the bounds at `(h, p)` pairs with `h` uniform in `(0, h_max]` and
/// `|p| <= sqrt(2)/h`, plus the point `p = 0`.
///
/// A sample counts as a violation only beyond a few ulps of the sides.
pub fn trig_inequality_suite(h_max: f64, samples: usize, seed: u64) -> Result<TrigReport> {
    if !(h_max.is_finite() && h_max > 0.0) {
        return Err(Error::InvalidParameter(format!("h_max must be positive, got {h_max}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TrigReport {
        samples,
        checked: [0; 4],
        violations: Vec::new(),
    };
    for i in 0..samples {
        let h = h_max * (1.0 - rng.gen::<f64>());
        let p = if i == 0 {
            0.0
        } else {
            rng.gen_range(-1.0..=1.0) * 2.0f64.sqrt() / h
        };
        let x = h * p;
        for (slot, inequality) in TrigInequality::ALL.iter().enumerate() {
            if x.abs() > inequality.domain() {
                continue;
            }
            report.checked[slot] += 1;
            let (lower, value, upper) = inequality.sides(x);
            let slack = 4.0 * f64::EPSILON * (value.abs() + upper.abs());
            let low_ok = lower == f64::NEG_INFINITY || lower <= value + slack + 4.0 * f64::EPSILON * lower.abs();
            if !(low_ok && value <= upper + slack) {
                report.violations.push(TrigViolation {
                    inequality: *inequality,
                    h,
                    p,
                    lower,
                    value,
                    upper,
                });
            }
        }
    }
    Ok(report)
}
