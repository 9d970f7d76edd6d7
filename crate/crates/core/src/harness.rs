//! Multi-level convergence campaigns: kernels on nested lattices, their sup
//! differences at shared points, and least-squares rate fits in log space.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{inverse_log_modulus, m_zero, make_family, stats, CoefficientField, Family, Smoothness};
use crate::dump::exact;
use crate::generator::{build_generator, PeriodicTridiagonalOperator};
use crate::lattice::{Grid, DEFAULT_MAX_DIM};
use crate::propagator::{euler_derivative_of, euler_kernel, expm_kernel, time_derivative, EulerStep, KernelMatrix};
use crate::spectral::fourier_kernel;
use crate::{Error, Matrix, Result};

/// Fewest levels a campaign accepts: three pairwise differences to fit.
pub const MIN_LEVELS: usize = 4;

/// Differences below this multiple of `eps * |u|` are treated as roundoff.
const ROUNDOFF_FLOOR: f64 = 1e3;

fn check_nested(coarse: &Grid, fine: &Grid) -> Result<usize> {
    if !coarse.nests_in(fine) {
        return Err(Error::NotNested(format!(
            "level {} on [-{}, {}) does not nest in level {} on [-{}, {})",
            coarse.level(),
            coarse.half_width(),
            coarse.half_width(),
            fine.level(),
            fine.half_width(),
            fine.half_width()
        )));
    }
    Ok(1 << (fine.level() - coarse.level()))
}

/// `max |a(x, y) - b(x, y)|` over coarse lattice pairs, reading `b` at the
/// nested fine indices.
pub fn restricted_sup_diff(coarse: &Grid, a: &Matrix, fine: &Grid, b: &Matrix) -> Result<f64> {
    let stride = check_nested(coarse, fine)?;
    let n = coarse.len();
    if a.shape() != (n, n) || b.shape() != (fine.len(), fine.len()) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.nrows(),
        });
    }
    let mut diff: f64 = 0.0;
    for x in 0..n {
        for y in 0..n {
            diff = diff.max((a[(x, y)] - b[(x * stride, y * stride)]).abs());
        }
    }
    Ok(diff)
}

/// Sup difference of two kernels at the coarse lattice points.
pub fn sup_diff(coarse: &KernelMatrix, fine: &KernelMatrix) -> Result<f64> {
    if coarse.time != fine.time {
        return Err(Error::NotNested(format!(
            "kernels at different times {} and {}",
            coarse.time, fine.time
        )));
    }
    restricted_sup_diff(&coarse.grid, &coarse.values, &fine.grid, &fine.values)
}

/// Sup difference of the time derivatives `u L` at the coarse lattice points.
pub fn derivative_sup_diff(
    coarse: (&PeriodicTridiagonalOperator, &KernelMatrix),
    fine: (&PeriodicTridiagonalOperator, &KernelMatrix),
) -> Result<f64> {
    if coarse.1.time != fine.1.time {
        return Err(Error::NotNested("kernels at different times".into()));
    }
    let a = time_derivative(coarse.0, coarse.1)?;
    let b = time_derivative(fine.0, fine.1)?;
    restricted_sup_diff(&coarse.1.grid, &a, &fine.1.grid, &b)
}

/// Slope of `ln diff` against `ln h` and the largest deviation from the line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub gamma_hat: f64,
    pub intercept: f64,
    pub residual: f64,
    pub points: usize,
}

pub fn fit_rate(h_values: &[f64], diffs: &[f64]) -> Result<RateFit> {
    if h_values.len() != diffs.len() {
        return Err(Error::DimensionMismatch {
            expected: h_values.len(),
            found: diffs.len(),
        });
    }
    if diffs.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "a rate fit needs at least 3 points, got {}",
            diffs.len()
        )));
    }
    if let Some((index, &value)) = diffs.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
        return Err(Error::NonPositiveDifference { index, value });
    }
    if let Some(h) = h_values.iter().find(|h| !(**h > 0.0)) {
        return Err(Error::InvalidParameter(format!("spacing {h} is not positive")));
    }
    let xs: Vec<f64> = h_values.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = diffs.iter().map(|d| d.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("all spacings are equal".into()));
    }
    let gamma_hat = sxy / sxx;
    let intercept = my - gamma_hat * mx;
    let residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - gamma_hat * x).abs())
        .fold(0.0, f64::max);
    Ok(RateFit {
        gamma_hat,
        intercept,
        residual,
        points: xs.len(),
    })
}

/// Which kernels a campaign computes besides the semidiscrete one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeSet {
    pub euler: bool,
    /// Fourier-series oracle; constant coefficients only.
    pub spectral: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub family: Family,
    pub half_width: f64,
    /// Horizon; defaults to `0.25 L^2 / Sigma_0^2` on the finest level.
    pub t: Option<f64>,
    pub m_min: u32,
    pub m_max: u32,
    pub schemes: SchemeSet,
    pub max_dim: usize,
}

impl CampaignConfig {
    pub fn new(family: Family, m_min: u32, m_max: u32) -> Self {
        CampaignConfig {
            family,
            half_width: 1.0,
            t: None,
            m_min,
            m_max,
            schemes: SchemeSet::default(),
            max_dim: DEFAULT_MAX_DIM,
        }
    }

    pub fn with_t(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    pub fn with_euler(mut self) -> Self {
        self.schemes.euler = true;
        self
    }
}

/// Diffusive time scale `0.25 L^2 / Sigma_0^2`.
pub fn default_time(field: &CoefficientField, grid: &Grid) -> Result<f64> {
    let s = stats(field, grid)?;
    let l = field.half_width();
    Ok(0.25 * l * l / (s.sigma0 * s.sigma0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerRecord {
    pub delta_t: f64,
    pub n_steps: u64,
    /// `sup |u_m - u_m^dt|` on the level's own lattice.
    pub kernel_diff: f64,
    /// Same for the time derivatives.
    pub derivative_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LevelStatus {
    Ok,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: u32,
    pub h: f64,
    pub kernel_sup: Option<f64>,
    pub euler: Option<EulerRecord>,
    /// `sup |u_m - u_m^spectral|` for constant coefficients.
    pub spectral_diff: Option<f64>,
    #[serde(flatten)]
    pub status: LevelStatus,
}

/// Differences between consecutive levels `m` and `m + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub coarse: u32,
    pub fine: u32,
    pub h: f64,
    pub kernel_diff: f64,
    pub derivative_diff: f64,
    /// `kernel_diff / rho(h)` for modulus families.
    pub modulus_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub field: Family,
    pub half_width: f64,
    pub t: f64,
    pub levels: Vec<LevelRecord>,
    pub pairs: Vec<PairRecord>,
    pub kernel_fit: Option<RateFit>,
    pub derivative_fit: Option<RateFit>,
    pub euler_fit: Option<RateFit>,
    pub euler_derivative_fit: Option<RateFit>,
    /// `min{2, k + alpha, j + beta}`; absent for modulus families.
    pub theoretical_rate: Option<f64>,
    pub vol_smoothness: Smoothness,
    pub drift_smoothness: Smoothness,
    /// Largest over smallest `kernel_diff / rho(h)`, for modulus families.
    pub modulus_spread: Option<f64>,
}

impl ConvergenceReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Flat table `level,h,sup_diff_kernel,sup_diff_derivative,euler_diff,gamma_hat`;
    /// pair differences sit on the coarse level's row, missing values are empty.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(exact).unwrap_or_default();
        let gamma = opt(self.kernel_fit.map(|f| f.gamma_hat));
        let mut out = String::from("level,h,sup_diff_kernel,sup_diff_derivative,euler_diff,gamma_hat\n");
        for rec in &self.levels {
            let pair = self.pairs.iter().find(|p| p.coarse == rec.level);
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                rec.level,
                exact(rec.h),
                opt(pair.map(|p| p.kernel_diff)),
                opt(pair.map(|p| p.derivative_diff)),
                opt(rec.euler.as_ref().map(|e| e.kernel_diff)),
                gamma
            ));
        }
        out
    }
}

/// One row of the flat report table.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub level: u32,
    pub h: f64,
    pub sup_diff_kernel: Option<f64>,
    pub sup_diff_derivative: Option<f64>,
    pub euler_diff: Option<f64>,
    pub gamma_hat: Option<f64>,
}

pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("level,h,sup_diff_kernel,sup_diff_derivative,euler_diff,gamma_hat") {
        return Err(Error::Config("report CSV header is missing".into()));
    }
    lines
        .map(|line| {
            let bad = || Error::Config(format!("malformed report CSV line {line:?}"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad())
                }
            };
            Ok(CsvRow {
                level: f[0].parse().map_err(|_| bad())?,
                h: f[1].parse().map_err(|_| bad())?,
                sup_diff_kernel: opt(f[2])?,
                sup_diff_derivative: opt(f[3])?,
                euler_diff: opt(f[4])?,
                gamma_hat: opt(f[5])?,
            })
        })
        .collect()
}

/// Everything computed on one level.
struct LevelData {
    op: PeriodicTridiagonalOperator,
    kernel: KernelMatrix,
    derivative: Matrix,
    euler: Option<EulerRecord>,
    spectral_diff: Option<f64>,
}

fn compute_level(field: &CoefficientField, config: &CampaignConfig, level: u32, t: f64) -> Result<LevelData> {
    let grid = Grid::with_limit(level, config.half_width, config.max_dim)?;
    let op = build_generator(field, &grid)?;
    let kernel = expm_kernel(&op, t)?;
    kernel.check_markov()?;
    let derivative = time_derivative(&op, &kernel)?;
    let euler = if config.schemes.euler {
        let step = EulerStep::for_horizon(&op, t)?;
        let ek = euler_kernel(&op, t, step)?;
        ek.check_markov()?;
        let ed = euler_derivative_of(&op, &ek, step)?;
        Some(EulerRecord {
            delta_t: step.delta_t,
            n_steps: step.n_steps,
            kernel_diff: (&ek.values - &kernel.values).abs().max(),
            derivative_diff: (ed - &derivative).abs().max(),
        })
    } else {
        None
    };
    let spectral_diff = match (config.schemes.spectral, field.is_constant()) {
        (false, _) => None,
        (true, Some((vol, drift))) => {
            let f = fourier_kernel(vol.sqrt(), drift, &grid, t)?;
            Some((f.values - &kernel.values).abs().max())
        }
        (true, None) => return Err(Error::Config("the spectral oracle needs constant coefficients".into())),
    };
    Ok(LevelData {
        op,
        kernel,
        derivative,
        euler,
        spectral_diff,
    })
}

/// Fit over the points above the roundoff floor, if at least three remain.
fn fit_above_floor(points: &[(f64, f64, f64)]) -> Option<RateFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, d, scale)| *d >= ROUNDOFF_FLOOR * f64::EPSILON * scale)
        .map(|(h, d, _)| (*h, *d))
        .collect();
    let (h, d): (Vec<f64>, Vec<f64>) = kept.into_iter().unzip();
    fit_rate(&h, &d).ok()
}

fn validate(config: &CampaignConfig, field: &CoefficientField) -> Result<()> {
    if config.m_max < config.m_min || ((config.m_max - config.m_min + 1) as usize) < MIN_LEVELS {
        return Err(Error::Config(format!(
            "levels {}..={} give fewer than {MIN_LEVELS} levels; a rate fit needs at least 3 differences",
            config.m_min, config.m_max
        )));
    }
    let m0 = m_zero(field);
    if config.m_min < m0 {
        return Err(Error::Config(format!(
            "level {} is below the Markov threshold m_zero = {m0}",
            config.m_min
        )));
    }
    // Trip the resource guard before any work starts.
    Grid::with_limit(config.m_max, config.half_width, config.max_dim)?;
    if let Some(t) = config.t {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Config(format!("campaign time must be positive, got {t}")));
        }
    }
    Ok(())
}

/// Kernels on every level in parallel, then consecutive-level differences and
/// rate fits. A failing level is recorded with its error and left out.
pub fn run_campaign(config: &CampaignConfig) -> Result<ConvergenceReport> {
    let field = make_family(&config.family, config.half_width)?;
    validate(config, &field)?;
    let finest = Grid::with_limit(config.m_max, config.half_width, config.max_dim)?;
    let t = match config.t {
        Some(t) => t,
        None => default_time(&field, &finest)?,
    };
    let levels: Vec<u32> = (config.m_min..=config.m_max).collect();
    let data: Vec<Result<LevelData>> = levels
        .par_iter()
        .map(|&m| compute_level(&field, config, m, t))
        .collect();
    if let Some(Err(e)) = data.iter().find(|d| matches!(d, Err(e) if e.is_config_error())) {
        return Err(Error::Config(e.to_string()));
    }

    let records: Vec<LevelRecord> = levels
        .iter()
        .zip(&data)
        .map(|(&level, d)| {
            let h = config.half_width * (-(level as f64)).exp2();
            match d {
                Ok(d) => LevelRecord {
                    level,
                    h,
                    kernel_sup: Some(d.kernel.sup_norm()),
                    euler: d.euler.clone(),
                    spectral_diff: d.spectral_diff,
                    status: LevelStatus::Ok,
                },
                Err(e) => LevelRecord {
                    level,
                    h,
                    kernel_sup: None,
                    euler: None,
                    spectral_diff: None,
                    status: LevelStatus::Failed { error: e.to_string() },
                },
            }
        })
        .collect();

    let modulus = field.theoretical_rate().is_none();
    let mut pairs = Vec::new();
    for w in data.windows(2) {
        if let [Ok(a), Ok(b)] = w {
            let h = a.kernel.grid.spacing();
            let kernel_diff = sup_diff(&a.kernel, &b.kernel)?;
            let derivative_diff = restricted_sup_diff(&a.kernel.grid, &a.derivative, &b.kernel.grid, &b.derivative)?;
            debug_assert_eq!(a.op.level() + 1, b.op.level());
            pairs.push(PairRecord {
                coarse: a.kernel.level(),
                fine: b.kernel.level(),
                h,
                kernel_diff,
                derivative_diff,
                modulus_ratio: modulus.then(|| kernel_diff / inverse_log_modulus(h)),
            });
        }
    }

    let scale_of = |level: u32| -> f64 {
        data.iter()
            .flatten()
            .find(|d| d.kernel.level() == level)
            .map_or(1.0, |d| d.kernel.sup_norm())
    };
    let kernel_points: Vec<(f64, f64, f64)> = pairs.iter().map(|p| (p.h, p.kernel_diff, scale_of(p.coarse))).collect();
    let derivative_points: Vec<(f64, f64, f64)> = pairs
        .iter()
        .map(|p| {
            let scale = data
                .iter()
                .flatten()
                .find(|d| d.kernel.level() == p.coarse)
                .map_or(1.0, |d| d.derivative.abs().max());
            (p.h, p.derivative_diff, scale)
        })
        .collect();
    let euler_points = |pick: fn(&EulerRecord) -> f64| -> Vec<(f64, f64, f64)> {
        records
            .iter()
            .filter_map(|r| r.euler.as_ref().map(|e| (r.h, pick(e), r.kernel_sup.unwrap_or(1.0))))
            .collect()
    };

    let (kernel_fit, derivative_fit, modulus_spread) = if modulus {
        let ratios: Vec<f64> = pairs.iter().filter_map(|p| p.modulus_ratio).collect();
        let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        (None, None, (!ratios.is_empty()).then(|| max / min))
    } else {
        (
            fit_above_floor(&kernel_points),
            fit_above_floor(&derivative_points),
            None,
        )
    };

    Ok(ConvergenceReport {
        field: config.family.clone(),
        half_width: config.half_width,
        t,
        euler_fit: config
            .schemes
            .euler
            .then(|| fit_above_floor(&euler_points(|e| e.kernel_diff)))
            .flatten(),
        euler_derivative_fit: config
            .schemes
            .euler
            .then(|| fit_above_floor(&euler_points(|e| e.derivative_diff)))
            .flatten(),
        levels: records,
        pairs,
        kernel_fit,
        derivative_fit,
        theoretical_rate: field.theoretical_rate(),
        vol_smoothness: field.vol_smoothness(),
        drift_smoothness: field.drift_smoothness(),
        modulus_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_grid;

    fn kernel(family: Family, m: u32, t: f64) -> (PeriodicTridiagonalOperator, KernelMatrix) {
        let f = make_family(&family, 1.0).unwrap();
        let op = build_generator(&f, &build_grid(m, 1.0).unwrap()).unwrap();
        let k = expm_kernel(&op, t).unwrap();
        (op, k)
    }

    #[test]
    fn fit_examples() {
        let h = [0.1, 0.05, 0.025];
        let f = fit_rate(&h, &[1e-2, 2.5e-3, 6.25e-4]).unwrap();
        assert!((f.gamma_hat - 2.0).abs() < 1e-12 && f.residual < 1e-12);
        let f = fit_rate(&h, &[1e-2, 5e-3, 2.5e-3]).unwrap();
        assert!((f.gamma_hat - 1.0).abs() < 1e-12);
        let h4 = [0.1, 0.05, 0.025, 0.0125];
        let base = [1e-2, 2.5e-3, 6.25e-4, 1.5625e-4];
        for i in 0..4 {
            let mut d = base;
            d[i] *= 1.1;
            let shift = (fit_rate(&h4, &d).unwrap().gamma_hat - 2.0).abs();
            assert!(shift <= 0.07, "{shift}");
        }
        assert!(matches!(
            fit_rate(&h, &[1.0, 0.0, 1.0]),
            Err(Error::NonPositiveDifference { index: 1, .. })
        ));
        assert!(fit_rate(&h[..2], &[1.0, 0.5]).is_err());
    }

    #[test]
    fn sup_diff_examples() {
        let (_, a) = kernel(Family::constant(1.0, 0.0), 4, 0.25);
        assert_eq!(sup_diff(&a, &a).unwrap(), 0.0);
        let (_, b) = kernel(Family::constant(1.0, 0.0), 5, 0.25);
        let (_, c) = kernel(Family::constant(1.0, 0.0), 6, 0.25);
        let d45 = sup_diff(&a, &b).unwrap();
        let d56 = sup_diff(&b, &c).unwrap();
        let d46 = sup_diff(&a, &c).unwrap();
        assert!(d45 > 0.0 && d56 < d45);
        assert!(d46 <= d45 + d56 * (1.0 + 1e-12));
        assert!(sup_diff(&b, &a).is_err());
        let (_, other) = kernel(Family::constant(1.0, 0.0), 5, 0.3);
        assert!(sup_diff(&a, &other).is_err());
    }

    #[test]
    fn derivative_diffs_shrink_for_smooth_fields() {
        let t = 0.25;
        let (o4, k4) = kernel(Family::default_trig(), 4, t);
        let (o5, k5) = kernel(Family::default_trig(), 5, t);
        let (o6, k6) = kernel(Family::default_trig(), 6, t);
        assert_eq!(derivative_sup_diff((&o4, &k4), (&o4, &k4)).unwrap(), 0.0);
        let a = derivative_sup_diff((&o4, &k4), (&o5, &k5)).unwrap();
        let b = derivative_sup_diff((&o5, &k5), (&o6, &k6)).unwrap();
        let ratio = a / b;
        assert!(ratio > 3.0 && ratio < 5.0, "{ratio}");
    }

    #[test]
    fn constant_campaign_has_rate_two() {
        let config = CampaignConfig::new(Family::constant(1.0, 0.0), 4, 7).with_t(0.25);
        let r = run_campaign(&config).unwrap();
        assert_eq!(r.pairs.len(), 3);
        let g = r.kernel_fit.unwrap().gamma_hat;
        assert!((1.85..=2.15).contains(&g), "{g}");
        assert_eq!(r.theoretical_rate, Some(2.0));
    }

    #[test]
    fn campaign_rejects_bad_ranges() {
        let short = CampaignConfig::new(Family::default_trig(), 4, 4);
        assert!(matches!(run_campaign(&short), Err(Error::Config(_))));
        let low = CampaignConfig::new(Family::constant(1.0, 10.0), 1, 5);
        assert!(matches!(run_campaign(&low), Err(Error::Config(_))));
        let mut big = CampaignConfig::new(Family::default_trig(), 8, 11);
        big.max_dim = 1024;
        assert!(run_campaign(&big).unwrap_err().is_config_error());
        let mut spectral = CampaignConfig::new(Family::default_trig(), 3, 6);
        spectral.schemes.spectral = true;
        assert!(run_campaign(&spectral).is_err());
    }

    #[test]
    fn report_round_trips() {
        let mut config = CampaignConfig::new(Family::constant(1.0, 0.5), 3, 6).with_euler();
        config.schemes.spectral = true;
        let r = run_campaign(&config).unwrap();
        assert!(r.levels.iter().all(|l| l.spectral_diff.unwrap() < 1e-10));
        let back = ConvergenceReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let rows = parse_report_csv(&r.to_csv()).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].sup_diff_kernel, Some(r.pairs[0].kernel_diff));
        assert_eq!(rows[3].sup_diff_kernel, None);
        assert_eq!(
            rows[2].euler_diff,
            Some(r.levels[2].euler.as_ref().unwrap().kernel_diff)
        );
    }

    #[test]
    fn default_time_is_diffusive_scale() {
        let f = make_family(&Family::constant(4.0, 0.0), 1.0).unwrap();
        let t = default_time(&f, &build_grid(3, 1.0).unwrap()).unwrap();
        assert!((t - 0.0625).abs() < 1e-15);
    }
}
