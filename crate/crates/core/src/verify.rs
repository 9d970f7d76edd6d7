//! Self-checks run by `diffkernel verify`: oracle equivalences, Markov
//! invariants, path-expansion bounds and the exact stencil identities.
//!
//! Every check reduces to a measured number and a tolerance; it passes when
//! `measured <= tolerance * scale`. Scaling by zero turns every check with a
//! nonzero residual into a failure, which is how fault injection is tested.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coefficients::{m_zero, make_family, stats, Family};
use crate::dyson::{
    conv_power, conv_power_quadrature, count_paths, discrete_taylor_check, enumerate_paths, lbar_residual, path_weight,
    path_weight_quadrature, q_max, resum_row, walk_displacements, weight_bound_table,
};
use crate::generator::{apply_delta, apply_nabla, build_generator, PeriodicTridiagonalOperator};
use crate::lattice::{build_grid, fourier_transform, inverse_fourier_transform, momentum_set, periodic_distance, Grid};
use crate::propagator::{euler_kernel, expm_kernel, EulerStep};
use crate::spectral::{
    fourier_kernel, fourier_kernel_discrete, kernel_space_derivatives, symbol, trig_inequality_suite,
};
use crate::{Error, Result};

pub const SUITES: [&str; 6] = ["lattice", "generator", "spectral", "markov", "dyson", "trig"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub tolerance_scale: f64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Recorder {
    suite: &'static str,
    scale: f64,
    checks: Vec<CheckResult>,
}

impl Recorder {
    fn check(&mut self, name: &str, measured: f64, tolerance: f64) {
        self.checks.push(CheckResult {
            suite: self.suite.to_string(),
            name: name.to_string(),
            measured,
            tolerance,
            passed: measured <= tolerance * self.scale,
        });
    }
}

/// Runs the named suites (all when `only` is empty) in a fixed order.
pub fn run_suites(only: &[String], seed: u64, tolerance_scale: f64) -> Result<VerifyReport> {
    if let Some(unknown) = only.iter().find(|s| !SUITES.contains(&s.as_str())) {
        return Err(Error::Config(format!(
            "unknown suite {unknown:?}; expected one of {}",
            SUITES.join(", ")
        )));
    }
    if !(tolerance_scale.is_finite() && tolerance_scale >= 0.0) {
        return Err(Error::Config(format!(
            "tolerance scale must be nonnegative, got {tolerance_scale}"
        )));
    }
    let mut checks = Vec::new();
    for (i, suite) in SUITES.iter().enumerate() {
        if !only.is_empty() && !only.iter().any(|s| s == suite) {
            continue;
        }
        let mut rec = Recorder {
            suite,
            scale: tolerance_scale,
            checks: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        match *suite {
            "lattice" => lattice_suite(&mut rec, &mut rng)?,
            "generator" => generator_suite(&mut rec)?,
            "spectral" => spectral_suite(&mut rec)?,
            "markov" => markov_suite(&mut rec)?,
            "dyson" => dyson_suite(&mut rec, &mut rng)?,
            _ => trig_suite(&mut rec, seed)?,
        }
        checks.extend(rec.checks);
    }
    Ok(VerifyReport {
        seed,
        tolerance_scale,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

fn lattice_suite(rec: &mut Recorder, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut round_trip: f64 = 0.0;
    let mut periodicity: f64 = 0.0;
    for m in 0..7 {
        let g = build_grid(m, 1.3)?;
        let f: Vec<Complex64> = (0..g.len())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let back = inverse_fourier_transform(&g, &fourier_transform(&g, &f)?)?;
        let scale = f.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let err = f.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        round_trip = round_trip.max(err / scale);
        let x0 = g.point(0);
        for p in momentum_set(&g).momenta() {
            let wave = |x: f64| Complex64::new(0.0, p * x).exp();
            periodicity = periodicity.max((wave(x0 + 2.0 * g.half_width()) - wave(x0)).norm());
        }
    }
    rec.check("fourier_round_trip", round_trip, 1e-12);
    rec.check("plane_wave_periodicity", periodicity, 1e-12);

    let mut excess: f64 = 0.0;
    for _ in 0..1000 {
        let [x, y, z]: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let d = |a, b| periodic_distance(a, b, 1.0);
        excess = excess.max(d(x, z) - d(x, y) - d(y, z));
    }
    rec.check("distance_triangle_inequality", excess.max(0.0), 1e-12);
    Ok(())
}

fn generator_suite(rec: &mut Recorder) -> Result<()> {
    let field = make_family(&Family::default_trig(), 1.0)?;
    let mut row_sum: f64 = 0.0;
    let mut defects = 0usize;
    for m in 0..9 {
        let op = build_generator(&field, &build_grid(m, 1.0)?)?;
        let scale = op.diag().iter().fold(1.0, |a: f64, d| a.max(d.abs()));
        row_sum = row_sum.max(op.max_row_sum() / scale);
        if m >= m_zero(&field) && !op.is_markov() {
            defects += 1;
        }
    }
    rec.check("row_sums_vanish", row_sum, 1e-13);
    rec.check("markov_above_m_zero", defects as f64, 0.0);

    let mut eigen: f64 = 0.0;
    for (vol, drift) in [(1.0, 0.0), (0.25, -1.0), (4.0, 0.5)] {
        let g = build_grid(4, 1.0)?;
        let op = build_generator(&make_family(&Family::constant(vol, drift), 1.0)?, &g)?;
        let h = g.spacing();
        for p in momentum_set(&g).momenta() {
            // exp(-ipx) has eigenvalue l(p).
            let re: Vec<f64> = g.points().map(|x| (p * x).cos()).collect();
            let im: Vec<f64> = g.points().map(|x| -(p * x).sin()).collect();
            let (lr, li) = (op.apply(&re)?, op.apply(&im)?);
            let l = symbol(p, h, vol.sqrt(), drift);
            for j in 0..g.len() {
                let f = Complex64::new(re[j], im[j]);
                eigen = eigen.max((Complex64::new(lr[j], li[j]) - l * f).norm());
            }
        }
    }
    rec.check("fourier_diagonalisation", eigen, 1e-10);
    Ok(())
}

fn constant_operator(sigma: f64, mu: f64, m: u32) -> Result<PeriodicTridiagonalOperator> {
    build_generator(
        &make_family(&Family::constant(sigma * sigma, mu), 1.0)?,
        &build_grid(m, 1.0)?,
    )
}

fn spectral_suite(rec: &mut Recorder) -> Result<()> {
    let mut semidiscrete: f64 = 0.0;
    let mut euler: f64 = 0.0;
    let mut derivatives: f64 = 0.0;
    for sigma in [0.5, 1.0, 2.0] {
        for mu in [0.0, 0.5, -1.0] {
            for m in 3..6 {
                let op = constant_operator(sigma, mu, m)?;
                let g = *op.grid();
                for t in [0.05, 0.25] {
                    let e = expm_kernel(&op, t)?;
                    let f = fourier_kernel(sigma, mu, &g, t)?;
                    semidiscrete = semidiscrete.max((&e.values - &f.values).abs().max());
                    let step = EulerStep::for_horizon(&op, t)?;
                    let ek = euler_kernel(&op, t, step)?;
                    let fk = fourier_kernel_discrete(sigma, mu, &g, t, step)?;
                    euler = euler.max((ek.values - fk.values).abs().max());
                    let (first, second) = kernel_space_derivatives(sigma, mu, &g, t)?;
                    for y in 0..g.len() {
                        let col: Vec<f64> = f.values.column(y).iter().copied().collect();
                        let (nab, del) = (apply_nabla(&g, &col)?, apply_delta(&g, &col)?);
                        for x in 0..g.len() {
                            derivatives = derivatives
                                .max((first[(x, y)] - nab[x]).abs())
                                .max((second[(x, y)] - del[x]).abs());
                        }
                    }
                }
            }
        }
    }
    rec.check("expm_matches_fourier", semidiscrete, 1e-10);
    rec.check("euler_matches_discrete_fourier", euler, 1e-10);
    rec.check("derivative_series_match_stencils", derivatives, 1e-10);
    Ok(())
}

fn markov_suite(rec: &mut Recorder) -> Result<()> {
    let mut negativity: f64 = 0.0;
    let mut mass: f64 = 0.0;
    let mut semigroup: f64 = 0.0;
    for family in [Family::default_trig(), Family::hoelder(0.5), Family::log_modulus()] {
        let field = make_family(&family, 1.0)?;
        for m in m_zero(&field).max(2)..7 {
            let op = build_generator(&field, &build_grid(m, 1.0)?)?;
            let (s, t) = (0.03, 0.07);
            let a = expm_kernel(&op, s)?;
            let b = expm_kernel(&op, t)?;
            let ab = expm_kernel(&op, s + t)?;
            let eul = euler_kernel(&op, t, EulerStep::for_horizon(&op, t)?)?;
            for k in [&a, &b, &ab, &eul] {
                negativity = negativity.max(-k.min_entry());
                mass = mass.max(k.mass_defect());
            }
            semigroup = semigroup.max((a.compose(&b)? - &ab.values).abs().max());
        }
    }
    rec.check("nonnegative_entries", negativity.max(0.0), 1e-12);
    rec.check("unit_row_mass", mass, 1e-10);
    rec.check("semigroup", semigroup, 1e-9);
    Ok(())
}

fn dyson_suite(rec: &mut Recorder, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut mismatches = 0u32;
    for q in 0..=12u32 {
        let hist = walk_displacements(q);
        for k in -(q as i64)..=q as i64 {
            if count_paths(q, k) != hist.get(&k).copied().unwrap_or(0) {
                mismatches += 1;
            }
        }
    }
    rec.check("count_paths_matches_enumeration", mismatches as f64, 0.0);

    let field = make_family(&Family::default_trig(), 1.0)?;
    let mut conv: f64 = 0.0;
    let mut bound: f64 = 0.0;
    let mut resum: f64 = 0.0;
    let mut quadrature: f64 = 0.0;
    for m in [1, 2] {
        let g = build_grid(m, 1.0)?;
        let op = build_generator(&field, &g)?;
        let s = stats(&field, &g)?;
        let h = g.spacing();
        for q in 1..=14 {
            let t = 0.05 * q as f64;
            let exact = conv_power(q, t, &s, h)?;
            let quad = conv_power_quadrature(q, t, &s, h)?;
            conv = conv.max(((exact - quad) / exact).abs());
        }
        for i in 1..=16 {
            let t = 0.5 * i as f64 / 16.0;
            for row in weight_bound_table(&op, &s, t, 10)? {
                bound = bound.max(row.max_weight / row.bound);
            }
        }
        let t = 0.05;
        let exact = expm_kernel(&op, t)?;
        let cap = q_max(&s, t, h).max(20);
        for x in 0..g.len() {
            for (y, r) in resum_row(&op, x, t, cap)?.iter().enumerate() {
                resum = resum.max((r.value - exact.get(x, y)).abs());
            }
        }
        for path in enumerate_paths(&g, 0, 2 % g.len(), 6)?.iter().take(8) {
            let w = path_weight(&op, path, t)?.value;
            quadrature = quadrature.max(((w - path_weight_quadrature(&op, path, t)?) / w).abs());
        }
    }
    rec.check("conv_power_matches_quadrature", conv, 1e-8);
    rec.check("weights_below_conv_power", bound, 1.0);
    rec.check("resummation_matches_expm", resum, 1e-6);
    rec.check("path_weight_matches_quadrature", quadrature, 1e-8);

    let mut lbar: f64 = 0.0;
    let mut taylor: f64 = 0.0;
    for m in 3..7 {
        let g = build_grid(m, 1.0)?;
        for _ in 0..20 {
            let (lb, ta) = random_identity_residuals(&g, rng)?;
            lbar = lbar.max(lb);
            taylor = taylor.max(ta);
        }
    }
    rec.check("lbar_decomposition", lbar, 1e-12);
    rec.check("discrete_taylor", taylor, 1e-13);
    Ok(())
}

/// Relative residuals of both identities for one random field on `grid`.
pub fn random_identity_residuals(grid: &Grid, rng: &mut impl Rng) -> Result<(f64, f64)> {
    let n = grid.len();
    let vol: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let drift: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let field = make_family(
        &Family::Tabulated {
            vol_squared: vol.clone(),
            drift: drift.clone(),
        },
        grid.half_width(),
    )?;
    let op = build_generator(&field, grid)?;
    let mut lbar: f64 = 0.0;
    for j in 0..n {
        lbar = lbar.max(lbar_residual(&op, &vol, &drift, j)?.relative());
    }
    let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
    Ok((lbar, discrete_taylor_check(&f, grid)?.relative()))
}

fn trig_suite(rec: &mut Recorder, seed: u64) -> Result<()> {
    let report = trig_inequality_suite(1.0, 10_000, seed)?;
    rec.check("trig_inequalities", report.violations.len() as f64, 0.0);
    let unchecked = report.checked.iter().filter(|c| **c == 0).count();
    rec.check("trig_domains_sampled", unchecked as f64, 0.0);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn light_suites_pass() {
        let only: Vec<String> = ["lattice", "generator", "trig"].iter().map(|s| s.to_string()).collect();
        let r = run_suites(&only, 3, 1.0).unwrap();
        assert!(r.passed, "{:?}", r.failures().collect::<Vec<_>>());
        assert!(r
            .checks
            .iter()
            .all(|c| ["lattice", "generator", "trig"].contains(&c.suite.as_str())));
    }

    #[test]
    fn zero_scale_fails() {
        let r = run_suites(&["lattice".to_string()], 3, 0.0).unwrap();
        assert!(!r.passed);
        assert!(r.failures().any(|c| c.name == "fourier_round_trip"));
    }

    #[test]
    fn unknown_suite_is_config_error() {
        assert!(run_suites(&["nope".to_string()], 0, 1.0).unwrap_err().is_config_error());
    }
}
