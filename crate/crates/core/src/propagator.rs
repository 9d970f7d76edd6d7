//! Semidiscrete kernels `u_m = h^-1 exp(tL)` and explicit Euler kernels
//! `u_m^dt = h^-1 (1 + dt L)^(t/dt)`, with their time derivatives.

use serde::{Deserialize, Serialize};

use crate::expm::{expm, matrix_power};
use crate::generator::PeriodicTridiagonalOperator;
use crate::lattice::Grid;
use crate::{Error, Matrix, Result};

/// Safety factor applied to the explicit stability limit.
pub const STABILITY_SAFETY: f64 = 0.9;

const MASS_TOLERANCE: f64 = 1e-10;
const NEGATIVITY_TOLERANCE: f64 = 1e-12;
const DERIVATIVE_TOLERANCE: f64 = 1e-9;
const EULER_IDENTITY_TOLERANCE: f64 = 1e-10;

/// How a kernel was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme {
    Semidiscrete,
    Euler {
        delta_t: f64,
        n_steps: u64,
    },
    /// Constant-coefficient Fourier series of the semidiscrete kernel.
    Spectral,
    /// Constant-coefficient Fourier series of the Euler kernel.
    SpectralEuler {
        delta_t: f64,
        n_steps: u64,
    },
    /// Periodised continuum kernel with the exact symbol.
    Continuum,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Semidiscrete => "semidiscrete",
            Scheme::Euler { .. } => "euler",
            Scheme::Spectral => "spectral",
            Scheme::SpectralEuler { .. } => "spectral_euler",
            Scheme::Continuum => "continuum",
        }
    }

    pub fn delta_t(&self) -> Option<f64> {
        match *self {
            Scheme::Euler { delta_t, .. } | Scheme::SpectralEuler { delta_t, .. } => Some(delta_t),
            _ => None,
        }
    }
}

/// Dense kernel `u(x, y; t)` on one lattice; row is the source point `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub grid: Grid,
    pub time: f64,
    pub scheme: Scheme,
    pub values: Matrix,
}

impl KernelMatrix {
    pub fn level(&self) -> u32 {
        self.grid.level()
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[(x, y)]
    }

    /// `max_x |h sum_y u(x, y) - 1|`.
    pub fn mass_defect(&self) -> f64 {
        let h = self.grid.spacing();
        self.values
            .row_iter()
            .map(|r| (h * r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.values.min()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.abs().max()
    }

    /// Checks nonnegativity (to `-1e-12`) and unit row mass (to `1e-10`).
    pub fn check_markov(&self) -> Result<()> {
        let min = self.min_entry();
        if min < -NEGATIVITY_TOLERANCE {
            return Err(Error::Consistency {
                what: "kernel nonnegativity",
                discrepancy: -min,
                tolerance: NEGATIVITY_TOLERANCE,
            });
        }
        let defect = self.mass_defect();
        if !(defect <= MASS_TOLERANCE) {
            return Err(Error::Consistency {
                what: "kernel row mass",
                discrepancy: defect,
                tolerance: MASS_TOLERANCE,
            });
        }
        Ok(())
    }

    /// `h sum_z self(x, z) other(z, y)`: composition of transition densities.
    pub fn compose(&self, other: &KernelMatrix) -> Result<Matrix> {
        if self.grid != other.grid {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(&self.values * &other.values * self.grid.spacing())
    }
}

/// `delta_m(x - y)`: `1/h` on the diagonal.
pub fn dirac_kernel(grid: &Grid, scheme: Scheme) -> KernelMatrix {
    let n = grid.len();
    KernelMatrix {
        grid: *grid,
        time: 0.0,
        scheme,
        values: Matrix::identity(n, n) / grid.spacing(),
    }
}

/// Semidiscrete kernel `h^-1 exp(t L)`.
pub fn expm_kernel(op: &PeriodicTridiagonalOperator, t: f64) -> Result<KernelMatrix> {
    check_time(t)?;
    if t == 0.0 {
        return Ok(dirac_kernel(op.grid(), Scheme::Semidiscrete));
    }
    let e = expm(&(op.to_dense() * t))?;
    Ok(KernelMatrix {
        grid: *op.grid(),
        time: t,
        scheme: Scheme::Semidiscrete,
        values: e / op.spacing(),
    })
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidParameter(format!("time must be nonnegative, got {t}")));
    }
    Ok(())
}

/// `d/dt u` computed as `u L` (forward equation), after checking that it
/// agrees with `L u` (backward equation).
pub fn time_derivative(op: &PeriodicTridiagonalOperator, kernel: &KernelMatrix) -> Result<Matrix> {
    if kernel.grid != *op.grid() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: kernel.dim(),
        });
    }
    let forward = op.right_multiply(&kernel.values);
    let backward = op.left_multiply(&kernel.values);
    let discrepancy = (&forward - &backward).abs().max();
    let tolerance = DERIVATIVE_TOLERANCE * forward.abs().max().max(1.0);
    if !(discrepancy <= tolerance) {
        return Err(Error::Consistency {
            what: "forward and backward time derivatives",
            discrepancy,
            tolerance,
        });
    }
    Ok(forward)
}

/// Largest explicit step keeping `1 + dt L(x, x) > 0`, times [`STABILITY_SAFETY`].
pub fn max_stable_dt(op: &PeriodicTridiagonalOperator) -> f64 {
    let rate = op.diag().iter().map(|d| d.abs()).fold(0.0, f64::max);
    STABILITY_SAFETY / rate
}

/// Explicit step `dt` repeated `n_steps` times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerStep {
    pub delta_t: f64,
    pub n_steps: u64,
}

impl EulerStep {
    pub fn new(delta_t: f64, n_steps: u64) -> Result<Self> {
        if !(delta_t.is_finite() && delta_t > 0.0) || n_steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "Euler step needs dt > 0 and at least one step, got dt = {delta_t}, n = {n_steps}"
            )));
        }
        Ok(EulerStep { delta_t, n_steps })
    }

    /// `max_stable_dt` shrunk so that `t / dt` is an integer.
    pub fn for_horizon(op: &PeriodicTridiagonalOperator, t: f64) -> Result<Self> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Euler horizon must be positive, got {t}"
            )));
        }
        let n = (t / max_stable_dt(op)).ceil().max(1.0) as u64;
        EulerStep::new(t / n as f64, n)
    }

    pub fn horizon(&self) -> f64 {
        self.delta_t * self.n_steps as f64
    }

    /// Rejects steps with some `1 + dt L(x, x) <= 0`.
    pub fn check_stable(&self, op: &PeriodicTridiagonalOperator) -> Result<()> {
        for (index, d) in op.diag().iter().enumerate() {
            let factor = 1.0 + self.delta_t * d;
            if !(factor > 0.0) {
                return Err(Error::Unstable { index, factor });
            }
        }
        Ok(())
    }

    fn check_horizon(&self, t: f64) -> Result<()> {
        if (self.horizon() - t).abs() > 1e-12 * t.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidParameter(format!(
                "{} steps of {} do not reach t = {t}",
                self.n_steps, self.delta_t
            )));
        }
        Ok(())
    }
}

fn one_step_matrix(op: &PeriodicTridiagonalOperator, delta_t: f64) -> Matrix {
    let n = op.dim();
    Matrix::identity(n, n) + op.to_dense() * delta_t
}

/// Euler kernel `h^-1 (1 + dt L)^n` with `n dt = t`.
pub fn euler_kernel(op: &PeriodicTridiagonalOperator, t: f64, step: EulerStep) -> Result<KernelMatrix> {
    step.check_horizon(t)?;
    step.check_stable(op)?;
    let p = one_step_matrix(op, step.delta_t);
    Ok(KernelMatrix {
        grid: *op.grid(),
        time: t,
        scheme: Scheme::Euler {
            delta_t: step.delta_t,
            n_steps: step.n_steps,
        },
        values: matrix_power(&p, step.n_steps) / op.spacing(),
    })
}

/// Forward difference `(u^dt(t + dt) - u^dt(t)) / dt`, returned in the exact
/// form `u^dt(t) L` after checking the two agree.
pub fn euler_time_derivative(op: &PeriodicTridiagonalOperator, t: f64, step: EulerStep) -> Result<Matrix> {
    let kernel = euler_kernel(op, t, step)?;
    euler_derivative_of(op, &kernel, step)
}

pub(crate) fn euler_derivative_of(
    op: &PeriodicTridiagonalOperator,
    kernel: &KernelMatrix,
    step: EulerStep,
) -> Result<Matrix> {
    let exact = op.right_multiply(&kernel.values);
    // u(t + dt) = u(t) (1 + dt L)
    let next = &kernel.values + &exact * step.delta_t;
    let forward = (next - &kernel.values) / step.delta_t;
    let discrepancy = (&forward - &exact).abs().max();
    let tolerance = EULER_IDENTITY_TOLERANCE * exact.abs().max().max(1.0);
    if !(discrepancy <= tolerance) {
        return Err(Error::Consistency {
            what: "Euler forward difference",
            discrepancy,
            tolerance,
        });
    }
    Ok(exact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_family, Family};
    use crate::generator::build_generator;
    use crate::lattice::{build_grid, periodic_distance};

    fn operator(family: Family, m: u32) -> PeriodicTridiagonalOperator {
        let f = make_family(&family, 1.0).unwrap();
        build_generator(&f, &build_grid(m, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn zero_time_is_dirac() {
        let op = operator(Family::constant(1.0, 0.0), 3);
        let k = expm_kernel(&op, 0.0).unwrap();
        let h = op.spacing();
        for x in 0..op.dim() {
            for y in 0..op.dim() {
                assert_eq!(k.get(x, y), if x == y { 1.0 / h } else { 0.0 });
            }
        }
        assert!(expm_kernel(&op, -1.0).is_err());
    }

    #[test]
    fn expm_kernel_is_markov() {
        for fam in [
            Family::default_trig(),
            Family::hoelder(0.5),
            Family::constant(0.25, -1.0),
        ] {
            let op = operator(fam, 4);
            for t in [1e-4, 0.05, 0.5, 5.0] {
                expm_kernel(&op, t).unwrap().check_markov().unwrap();
            }
        }
    }

    #[test]
    fn semigroup_property() {
        let op = operator(Family::default_trig(), 5);
        let a = expm_kernel(&op, 0.1).unwrap();
        let b = expm_kernel(&op, 0.15).unwrap();
        let ab = expm_kernel(&op, 0.25).unwrap();
        assert!((a.compose(&b).unwrap() - &ab.values).abs().max() < 1e-9);
    }

    #[test]
    fn symmetric_translation_invariant_kernel() {
        let op = operator(Family::constant(1.5, 0.0), 4);
        let k = expm_kernel(&op, 0.07).unwrap();
        let g = op.grid();
        let n = op.dim();
        for x in 0..n {
            for y in 0..n {
                assert!((k.get(x, y) - k.get(y, x)).abs() < 1e-11);
                // Depends on x, y only through their periodic distance.
                let d = periodic_distance(g.point(x), g.point(y), 1.0);
                let steps = (d / g.spacing()).round() as usize;
                assert!((k.get(x, y) - k.get(0, steps)).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn derivative_agrees_with_central_difference() {
        let op = operator(Family::constant(1.0, 0.0), 3);
        let t = 0.1;
        let eps = 1e-4;
        let d = time_derivative(&op, &expm_kernel(&op, t).unwrap()).unwrap();
        let fd = (expm_kernel(&op, t + eps).unwrap().values - expm_kernel(&op, t - eps).unwrap().values) / (2.0 * eps);
        let scale = d.abs().max();
        assert!((&d - fd).abs().max() < 1e-6 * scale);
        let h = op.spacing();
        for r in d.row_iter() {
            assert!((h * r.sum()).abs() < 1e-9);
        }
    }

    #[test]
    fn derivative_vanishes_at_equilibrium() {
        let op = operator(Family::default_trig(), 3);
        let t = 50.0;
        let d = time_derivative(&op, &expm_kernel(&op, t).unwrap()).unwrap();
        assert!(d.abs().max() < 1e-9);
    }

    #[test]
    fn stable_dt_examples() {
        let op = operator(Family::constant(1.0, 0.0), 2);
        assert!((max_stable_dt(&op) - 0.05625).abs() < 1e-15);
        let op4 = operator(Family::constant(4.0, 0.0), 2);
        assert!((max_stable_dt(&op4) - 0.9 * 0.015625).abs() < 1e-15);
        let op_fine = operator(Family::constant(1.0, 0.0), 3);
        assert!((max_stable_dt(&op) / max_stable_dt(&op_fine) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn step_policy_divides_horizon() {
        let op = operator(Family::default_trig(), 5);
        let step = EulerStep::for_horizon(&op, 0.25).unwrap();
        assert!(step.delta_t <= max_stable_dt(&op));
        assert!((step.horizon() - 0.25).abs() < 1e-15);
        step.check_stable(&op).unwrap();
    }

    #[test]
    fn single_euler_step() {
        let op = operator(Family::default_trig(), 3);
        let dt = 0.5 * max_stable_dt(&op);
        let k = euler_kernel(&op, dt, EulerStep::new(dt, 1).unwrap()).unwrap();
        let n = op.dim();
        let expected = (Matrix::identity(n, n) + op.to_dense() * dt) / op.spacing();
        assert!((k.values - expected).abs().max() < 1e-12);
    }

    #[test]
    fn euler_rejects_unstable_or_mismatched_steps() {
        let op = operator(Family::constant(1.0, 0.0), 3);
        let dt = 2.0 / 64.0 * 1.5;
        assert!(matches!(
            euler_kernel(&op, dt, EulerStep::new(dt, 1).unwrap()),
            Err(Error::Unstable { .. })
        ));
        let step = EulerStep::new(0.001, 10).unwrap();
        assert!(euler_kernel(&op, 0.5, step).is_err());
    }

    #[test]
    fn euler_kernel_is_markov_and_derivative_consistent() {
        let op = operator(Family::default_trig(), 4);
        let t = 0.1;
        let step = EulerStep::for_horizon(&op, t).unwrap();
        let k = euler_kernel(&op, t, step).unwrap();
        k.check_markov().unwrap();
        let d = euler_time_derivative(&op, t, step).unwrap();
        assert!((&d - op.left_multiply(&k.values)).abs().max() < 1e-9);
        let h = op.spacing();
        for r in d.row_iter() {
            assert!((h * r.sum()).abs() < 1e-9);
        }
    }

    #[test]
    fn euler_converges_as_dt_halves() {
        let op = operator(Family::default_trig(), 3);
        let t = 0.2;
        let exact = expm_kernel(&op, t).unwrap();
        let base = EulerStep::for_horizon(&op, t).unwrap();
        let mut last = f64::INFINITY;
        for refine in 0..4 {
            let n = base.n_steps << refine;
            let k = euler_kernel(&op, t, EulerStep::new(t / n as f64, n).unwrap()).unwrap();
            let diff = (&k.values - &exact.values).abs().max();
            assert!(diff < last);
            last = diff;
        }
    }
}
