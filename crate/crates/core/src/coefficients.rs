//! Volatility and drift coefficient families with a declared smoothness class.
//!
//! Every family is periodic on `[-L, L)`. The variance rate `vol_squared` must
//! stay strictly positive; the drift is unrestricted.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::lattice::{periodic_distance, Grid};
use crate::{Error, Result};

/// One harmonic `cos * cos(k pi x / L) + sin * sin(k pi x / L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub harmonic: u32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Finite trigonometric polynomial on the circle of circumference `2L`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrigPoly {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl TrigPoly {
    pub fn constant(value: f64) -> Self {
        TrigPoly {
            constant: value,
            terms: Vec::new(),
        }
    }

    pub fn with_term(mut self, harmonic: u32, cos: f64, sin: f64) -> Self {
        self.terms.push(TrigTerm { harmonic, cos, sin });
        self
    }

    fn eval(&self, x: f64, half_width: f64) -> f64 {
        self.terms.iter().fold(self.constant, |acc, t| {
            let arg = t.harmonic as f64 * PI * x / half_width;
            acc + t.cos * arg.cos() + t.sin * arg.sin()
        })
    }

    fn amplitude(&self) -> f64 {
        self.terms.iter().map(|t| t.cos.abs() + t.sin.abs()).sum()
    }
}

/// Family descriptor: what the configuration file names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `vol_squared` and `drift` constant.
    Constant { vol_squared: f64, drift: f64 },
    /// Trigonometric polynomials, class `C^inf`.
    TrigSmooth { vol_squared: TrigPoly, drift: TrigPoly },
    /// `vol_squared = a + b g_k(x)` where `g_0 = d(x, 0)^alpha` and `g_{i+1}` is
    /// the zero-mean periodic antiderivative of `g_i - mean(g_i)`; class `C^{k,alpha}`.
    HoelderBump {
        a: f64,
        b: f64,
        alpha: f64,
        #[serde(default)]
        k: u32,
        #[serde(default)]
        drift: f64,
    },
    /// `vol_squared = a + b / max(1, -ln(d(x, 0) / 2L))`: uniformly continuous
    /// with modulus `1/|ln d|`, not Hoelder.
    LogModulus {
        a: f64,
        b: f64,
        #[serde(default)]
        drift: f64,
    },
    /// Equally spaced samples on `[-L, L)`, interpolated linearly and periodically.
    Tabulated { vol_squared: Vec<f64>, drift: Vec<f64> },
}

impl Family {
    /// `1.5 + 0.5 sin(pi x / L)` with drift `0.5 cos(pi x / L)`.
    pub fn default_trig() -> Self {
        Family::TrigSmooth {
            vol_squared: TrigPoly::constant(1.5).with_term(1, 0.0, 0.5),
            drift: TrigPoly::constant(0.0).with_term(1, 0.5, 0.0),
        }
    }

    /// Cusp of exponent `alpha` at the origin, no drift.
    pub fn hoelder(alpha: f64) -> Self {
        Family::HoelderBump {
            a: 1.0,
            b: 0.5,
            alpha,
            k: 0,
            drift: 0.0,
        }
    }

    pub fn log_modulus() -> Self {
        Family::LogModulus {
            a: 1.0,
            b: 0.5,
            drift: 0.0,
        }
    }

    pub fn constant(vol_squared: f64, drift: f64) -> Self {
        Family::Constant { vol_squared, drift }
    }
}

/// Regularity class of one coefficient function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Smoothness {
    /// At least two bounded derivatives.
    Smooth,
    Hoelder {
        k: u32,
        alpha: f64,
    },
    /// Modulus of continuity `rho(d) = 1/|ln d|`.
    InverseLogModulus,
}

impl Smoothness {
    /// `k + alpha`, infinite for smooth functions, `None` for a pure modulus.
    pub fn order(&self) -> Option<f64> {
        match *self {
            Smoothness::Smooth => Some(f64::INFINITY),
            Smoothness::Hoelder { k, alpha } => Some(k as f64 + alpha),
            Smoothness::InverseLogModulus => None,
        }
    }
}

/// Modulus of continuity `1/|ln d|` used for the log family.
pub fn inverse_log_modulus(d: f64) -> f64 {
    1.0 / d.ln().abs()
}

/// Compiled scalar profile.
#[derive(Debug, Clone, PartialEq)]
enum Profile {
    Constant(f64),
    Trig(TrigPoly),
    Bump { a: f64, b: f64, shape: HoelderShape },
    Log { a: f64, b: f64 },
    Table(Vec<f64>),
}

/// `g_k(x) = coef * sgn(x)^k |x|^(alpha + k) + poly(x)` on `[-L, L]`.
#[derive(Debug, Clone, PartialEq)]
struct HoelderShape {
    alpha: f64,
    k: u32,
    coef: f64,
    poly: Vec<f64>,
}

impl HoelderShape {
    fn new(alpha: f64, k: u32, half_width: f64) -> Self {
        let l = half_width;
        let mut coef = 1.0;
        let mut poly: Vec<f64> = vec![0.0];
        for i in 0..k {
            let beta = alpha + i as f64;
            let mean = power_term_mean(coef, beta, i, l) + poly_mean(&poly, l);
            // Integrate g_i - mean from 0 to x.
            let mut next = vec![0.0; poly.len() + 1];
            for (n, c) in poly.iter().enumerate() {
                next[n + 1] = c / (n + 1) as f64;
            }
            next[1] -= mean;
            coef /= beta + 1.0;
            poly = next;
            let recentre = power_term_mean(coef, beta + 1.0, i + 1, l) + poly_mean(&poly, l);
            poly[0] -= recentre;
        }
        HoelderShape { alpha, k, coef, poly }
    }

    fn eval(&self, x: f64, half_width: f64) -> f64 {
        let x = reduce(x, half_width);
        let sign = if self.k % 2 == 1 && x < 0.0 { -1.0 } else { 1.0 };
        let singular = self.coef * sign * x.abs().powf(self.alpha + self.k as f64);
        let poly = self.poly.iter().rev().fold(0.0, |acc, c| acc * x + c);
        singular + poly
    }
}

fn power_term_mean(coef: f64, beta: f64, k: u32, l: f64) -> f64 {
    if k % 2 == 1 {
        0.0
    } else {
        coef * l.powf(beta) / (beta + 1.0)
    }
}

fn poly_mean(poly: &[f64], l: f64) -> f64 {
    poly.iter()
        .enumerate()
        .filter(|(n, _)| n % 2 == 0)
        .map(|(n, c)| c * l.powi(n as i32) / (n as f64 + 1.0))
        .sum()
}

/// Representative of `x` in `[-L, L)`.
fn reduce(x: f64, half_width: f64) -> f64 {
    (x + half_width).rem_euclid(2.0 * half_width) - half_width
}

impl Profile {
    fn eval(&self, x: f64, half_width: f64) -> f64 {
        match self {
            Profile::Constant(c) => *c,
            Profile::Trig(p) => p.eval(x, half_width),
            Profile::Bump { a, b, shape } => a + b * shape.eval(x, half_width),
            Profile::Log { a, b } => {
                let d = periodic_distance(x, 0.0, half_width);
                let denom = (-(d / (2.0 * half_width)).ln()).max(1.0);
                a + b / denom
            }
            Profile::Table(values) => {
                let n = values.len();
                let s = (reduce(x, half_width) + half_width) / (2.0 * half_width) * n as f64;
                let i = (s.floor() as usize).min(n - 1);
                let frac = s - i as f64;
                values[i] * (1.0 - frac) + values[(i + 1) % n] * frac
            }
        }
    }
}

/// A compiled coefficient pair on `[-L, L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    half_width: f64,
    family: Family,
    vol_squared: Profile,
    drift: Profile,
    vol_smoothness: Smoothness,
    drift_smoothness: Smoothness,
}

impl CoefficientField {
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn vol_squared(&self, x: f64) -> f64 {
        self.vol_squared.eval(x, self.half_width)
    }

    pub fn drift(&self, x: f64) -> f64 {
        self.drift.eval(x, self.half_width)
    }

    pub fn vol_smoothness(&self) -> Smoothness {
        self.vol_smoothness
    }

    pub fn drift_smoothness(&self) -> Smoothness {
        self.drift_smoothness
    }

    /// `min{2, k + alpha, j + beta}`, or `None` when a coefficient is only
    /// uniformly continuous.
    pub fn theoretical_rate(&self) -> Option<f64> {
        let a = self.vol_smoothness.order()?;
        let b = self.drift_smoothness.order()?;
        Some(a.min(b).min(2.0))
    }

    pub fn is_constant(&self) -> Option<(f64, f64)> {
        match self.family {
            Family::Constant { vol_squared, drift } => Some((vol_squared, drift)),
            _ => None,
        }
    }

    /// `(vol_squared, drift)` sampled on the lattice.
    pub fn sample(&self, grid: &Grid) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_grid(grid)?;
        Ok(grid.points().map(|x| (self.vol_squared(x), self.drift(x))).unzip())
    }

    pub(crate) fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.half_width() != self.half_width {
            return Err(Error::InvalidParameter(format!(
                "field lives on [-{0}, {0}) but grid has half width {1}",
                self.half_width,
                grid.half_width()
            )));
        }
        Ok(())
    }
}

/// Compiles a family descriptor on `[-L, L)` and checks ellipticity.
pub fn make_family(family: &Family, half_width: f64) -> Result<CoefficientField> {
    if !(half_width.is_finite() && half_width > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "half width must be positive, got {half_width}"
        )));
    }
    let finite = |name: &str, v: f64| {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{name} must be finite")))
        }
    };
    let smooth = Smoothness::Smooth;
    let (vol, drift, vol_s, drift_s) = match family {
        Family::Constant { vol_squared, drift } => {
            finite("vol_squared", *vol_squared)?;
            finite("drift", *drift)?;
            if *vol_squared <= 0.0 {
                return Err(Error::Ellipticity {
                    x: -half_width,
                    value: *vol_squared,
                });
            }
            (
                Profile::Constant(*vol_squared),
                Profile::Constant(*drift),
                smooth,
                smooth,
            )
        }
        Family::TrigSmooth { vol_squared, drift } => {
            if vol_squared.constant <= vol_squared.amplitude() {
                // The bound is only sufficient; fall back to sampling.
                let profile = Profile::Trig(vol_squared.clone());
                check_sampled_positive(&profile, half_width)?;
            }
            (
                Profile::Trig(vol_squared.clone()),
                Profile::Trig(drift.clone()),
                smooth,
                smooth,
            )
        }
        Family::HoelderBump { a, b, alpha, k, drift } => {
            if !(*alpha > 0.0 && *alpha <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "Hoelder exponent must lie in (0, 1], got {alpha}"
                )));
            }
            let shape = HoelderShape::new(*alpha, *k, half_width);
            let sup = if *k == 0 {
                half_width.powf(*alpha)
            } else {
                sampled_sup(|x| shape.eval(x, half_width).abs(), half_width)
            };
            if *a <= b.abs() * sup {
                return Err(Error::Ellipticity {
                    x: if *b < 0.0 { half_width } else { 0.0 },
                    value: a - b.abs() * sup,
                });
            }
            (
                Profile::Bump { a: *a, b: *b, shape },
                Profile::Constant(*drift),
                Smoothness::Hoelder { k: *k, alpha: *alpha },
                smooth,
            )
        }
        Family::LogModulus { a, b, drift } => {
            // The shape ranges over [0, 1].
            let inf = a + b.min(0.0);
            if inf <= 0.0 {
                return Err(Error::Ellipticity {
                    x: half_width,
                    value: inf,
                });
            }
            (
                Profile::Log { a: *a, b: *b },
                Profile::Constant(*drift),
                Smoothness::InverseLogModulus,
                smooth,
            )
        }
        Family::Tabulated { vol_squared, drift } => {
            if vol_squared.is_empty() || vol_squared.len() != drift.len() {
                return Err(Error::InvalidParameter(
                    "tabulated coefficients need equally many non-empty samples".into(),
                ));
            }
            let step = 2.0 * half_width / vol_squared.len() as f64;
            if let Some((i, v)) = vol_squared
                .iter()
                .enumerate()
                .find(|(_, v)| !(v.is_finite() && **v > 0.0))
            {
                return Err(Error::Ellipticity {
                    x: -half_width + i as f64 * step,
                    value: *v,
                });
            }
            let lipschitz = Smoothness::Hoelder { k: 0, alpha: 1.0 };
            (
                Profile::Table(vol_squared.clone()),
                Profile::Table(drift.clone()),
                lipschitz,
                lipschitz,
            )
        }
    };
    Ok(CoefficientField {
        half_width,
        family: family.clone(),
        vol_squared: vol,
        drift,
        vol_smoothness: vol_s,
        drift_smoothness: drift_s,
    })
}

const SUP_SAMPLES: usize = 1 << 14;

fn sampled_sup(f: impl Fn(f64) -> f64, half_width: f64) -> f64 {
    let step = 2.0 * half_width / SUP_SAMPLES as f64;
    (0..SUP_SAMPLES)
        .map(|j| f(-half_width + j as f64 * step))
        .fold(0.0, f64::max)
}

fn check_sampled_positive(profile: &Profile, half_width: f64) -> Result<()> {
    let step = 2.0 * half_width / SUP_SAMPLES as f64;
    for j in 0..SUP_SAMPLES {
        let x = -half_width + j as f64 * step;
        let v = profile.eval(x, half_width);
        if !(v > 0.0) {
            return Err(Error::Ellipticity { x, value: v });
        }
    }
    Ok(())
}

/// Lattice constants `Sigma_0 = inf sigma`, `Sigma_1 = sup sqrt(sigma^2 + h|mu|)`,
/// `M = sup |mu|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub sigma0: f64,
    pub sigma1: f64,
    pub big_m: f64,
}

pub fn stats(field: &CoefficientField, grid: &Grid) -> Result<FieldStats> {
    let (vol, drift) = field.sample(grid)?;
    let h = grid.spacing();
    let mut min_vol = f64::INFINITY;
    let mut sigma1_sq: f64 = 0.0;
    let mut big_m: f64 = 0.0;
    for (j, (v, mu)) in vol.iter().zip(&drift).enumerate() {
        if !(*v > 0.0) {
            return Err(Error::Ellipticity {
                x: grid.point(j),
                value: *v,
            });
        }
        min_vol = min_vol.min(*v);
        sigma1_sq = sigma1_sq.max(v + h * mu.abs());
        big_m = big_m.max(mu.abs());
    }
    Ok(FieldStats {
        sigma0: min_vol.sqrt(),
        sigma1: sigma1_sq.sqrt(),
        big_m,
    })
}

const M_ZERO_OVERSAMPLING: u32 = 4;
const M_ZERO_SEARCH_LIMIT: u32 = 40;

/// Least level `m` with `sigma^2(x) / (2 h_m^2) > |mu(x)| / (2 h_m)` at the
/// level's own points and on a 16x finer sampling.
pub fn m_zero(field: &CoefficientField) -> u32 {
    let l = field.half_width();
    (0..M_ZERO_SEARCH_LIMIT)
        .find(|&m| {
            let h = l * (-(m as f64)).exp2();
            let fine = 1usize << (m + 1 + M_ZERO_OVERSAMPLING);
            let step = 2.0 * l / fine as f64;
            (0..fine).all(|j| {
                let x = -l + j as f64 * step;
                let v = field.vol_squared(x);
                v / (2.0 * h * h) > field.drift(x).abs() / (2.0 * h)
            })
        })
        .unwrap_or(M_ZERO_SEARCH_LIMIT)
}
