//! Path expansion of the semidiscrete kernel and the exact three-point
//! identities behind the reduced-smoothness rates.
//!
//! A path starts at `x`, waits at each visited site `g_j` for an
//! exponentially distributed time with rate `-L(g_j, g_j)` and jumps to a
//! nearest neighbour. Summing, over all nearest-neighbour paths from `x` to
//! `y`, the product of jump rates times the time-ordered integral
//!
//! ```text
//! C(t) = int_{s_0 + ... + s_q = t} prod_j exp(L(g_j, g_j) s_j)
//! ```
//!
//! reproduces `exp(tL)(x, y)`. The weight of a path is that product; the
//! kernel is `1/h` times the sum of weights, including the jump-free path.
//!
//! `C(t)` equals `t^q exp[z_0, ..., z_q]`, a divided difference of `exp` at
//! `z_j = t L(g_j, g_j)`. After shifting by `c = min z_j` every `w_j = z_j - c`
//! is nonnegative and
//!
//! ```text
//! exp[w_0, ..., w_q] = sum_k h_k(w) / (k + q)!
//! ```
//!
//! with `h_k` the complete homogeneous symmetric polynomials. All terms are
//! positive, so the series is free of the cancellation that plagues the
//! partial-fraction form when rates nearly coincide.

use std::collections::BTreeMap;
use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::coefficients::{stats, CoefficientField, FieldStats};
use crate::generator::{apply_delta, apply_nabla, build_generator, PeriodicTridiagonalOperator};
use crate::lattice::{check_len, Grid};
use crate::{Error, Result};

/// Largest number of paths a resummation may visit.
pub const PATH_LIMIT: u128 = 10_000_000;

/// Series spread beyond which the shifted divided difference is refused.
const MAX_SPREAD: f64 = 500.0;
const SERIES_TOLERANCE: f64 = 1e-18;
const QUADRATURE_STEPS: usize = 1 << 12;

/// A nearest-neighbour jump sequence on a periodic lattice of `len` points.
///
/// Steps rather than sites are stored so that the two neighbours of a site on
/// the two-point lattice stay distinguishable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SymbolicPath {
    len: usize,
    start: usize,
    steps: Vec<i8>,
}

impl SymbolicPath {
    pub fn new(grid: &Grid, start: usize, steps: Vec<i8>) -> Result<Self> {
        if start >= grid.len() {
            return Err(Error::InvalidParameter(format!(
                "start site {start} outside a lattice of {} points",
                grid.len()
            )));
        }
        if let Some(s) = steps.iter().find(|s| s.abs() != 1) {
            return Err(Error::InvalidParameter(format!("path step {s} is not +1 or -1")));
        }
        Ok(SymbolicPath {
            len: grid.len(),
            start,
            steps,
        })
    }

    /// Builds a path from visited sites; on two points a jump is read as `+1`.
    pub fn from_sites(grid: &Grid, sites: &[usize]) -> Result<Self> {
        let (&start, rest) = sites
            .split_first()
            .ok_or_else(|| Error::InvalidParameter("a path needs at least one site".into()))?;
        let mut steps = Vec::with_capacity(rest.len());
        let mut here = start;
        for &next in rest {
            let step = if next == grid.next(here) {
                1
            } else if next == grid.prev(here) {
                -1
            } else {
                return Err(Error::InvalidParameter(format!(
                    "sites {here} and {next} are not neighbours"
                )));
            };
            steps.push(step);
            here = next;
        }
        SymbolicPath::new(grid, start, steps)
    }

    pub fn jumps(&self) -> usize {
        self.steps.len()
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn steps(&self) -> &[i8] {
        &self.steps
    }

    pub fn sites(&self) -> Vec<usize> {
        let n = self.len as isize;
        let mut here = self.start as isize;
        let mut out = vec![self.start];
        for s in &self.steps {
            here = (here + *s as isize).rem_euclid(n);
            out.push(here as usize);
        }
        out
    }

    pub fn end(&self) -> usize {
        let shift: isize = self.steps.iter().map(|s| *s as isize).sum();
        (self.start as isize + shift).rem_euclid(self.len as isize) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathWeight {
    pub value: f64,
    pub error_estimate: f64,
}

/// Number of series terms for a spread `w`: `w^K / K! < 1e-18` and `K > 2w`.
fn series_terms(spread: f64) -> Result<usize> {
    if !(spread.is_finite() && spread <= MAX_SPREAD) {
        return Err(Error::InvalidParameter(format!(
            "diagonal rates spread by {spread} over the horizon, above {MAX_SPREAD}"
        )));
    }
    let mut k = 0usize;
    let mut term = 1.0;
    while !(k as f64 > 2.0 * spread && term < SERIES_TOLERANCE) {
        k += 1;
        term *= spread / k as f64;
    }
    Ok(k)
}

/// `E[k] <- E[k] + (w/k) E[k-1]`: adds one variable to `h_k(w) / k!`.
fn absorb(prev: &[f64], w: f64, out: &mut [f64]) {
    out[0] = 1.0;
    for k in 1..out.len() {
        out[k] = prev[k] + w / k as f64 * out[k - 1];
    }
}

/// `1 / binom(k + q, q)` for `k = 0..terms`.
fn inverse_binomials(q: usize, terms: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(terms + 1);
    let mut r = 1.0;
    out.push(r);
    for k in 1..=terms {
        r *= k as f64 / (k + q) as f64;
        out.push(r);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `int_{s_0 + ... + s_q = t} prod_j exp(d_j s_j)` for `q + 1` rates `d_j`.
pub fn exponential_convolution(rates: &[f64], t: f64) -> Result<f64> {
    if rates.is_empty() {
        return Err(Error::InvalidParameter("need at least one rate".into()));
    }
    if !(t.is_finite() && t >= 0.0) || rates.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidParameter("rates and time must be finite, t >= 0".into()));
    }
    let q = rates.len() - 1;
    let shift = rates.iter().fold(f64::INFINITY, |a, d| a.min(t * d));
    let spread = rates.iter().fold(0.0f64, |a, d| a.max(t * d - shift));
    let terms = series_terms(spread)?;
    let mut e = vec![0.0; terms + 1];
    e[0] = 1.0;
    let mut next = vec![0.0; terms + 1];
    for d in rates {
        absorb(&e, t * d - shift, &mut next);
        std::mem::swap(&mut e, &mut next);
    }
    let scale: f64 = (1..=q).map(|j| t / j as f64).product();
    Ok(shift.exp() * scale * dot(&e, &inverse_binomials(q, terms)))
}

/// Trapezoidal iterated convolution on `steps` intervals.
fn trapezoid_convolution(rates: &[f64], t: f64, steps: usize) -> f64 {
    let dt = t / steps as f64;
    let mut f: Vec<f64> = (0..=steps).map(|i| (rates[0] * i as f64 * dt).exp()).collect();
    let mut g = vec![0.0; steps + 1];
    for d in &rates[1..] {
        let decay = (d * dt).exp();
        g[0] = 0.0;
        for i in 0..steps {
            g[i + 1] = decay * g[i] + 0.5 * dt * (f[i] * decay + f[i + 1]);
        }
        std::mem::swap(&mut f, &mut g);
    }
    f[steps]
}

/// [`exponential_convolution`] by trapezoidal quadrature on `steps` and
/// `steps / 2` intervals, combined by Richardson extrapolation.
pub fn exponential_convolution_quadrature(rates: &[f64], t: f64, steps: usize) -> Result<f64> {
    if rates.is_empty() || steps < 2 || steps % 2 == 1 {
        return Err(Error::InvalidParameter(
            "quadrature needs a rate and an even number of steps".into(),
        ));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidParameter(format!("time must be nonnegative, got {t}")));
    }
    let fine = trapezoid_convolution(rates, t, steps);
    let coarse = trapezoid_convolution(rates, t, steps / 2);
    Ok((4.0 * fine - coarse) / 3.0)
}

fn check_markov(op: &PeriodicTridiagonalOperator) -> Result<()> {
    let g = op.grid();
    for j in 0..op.dim() {
        for (step, to) in [(1i8, g.next(j)), (-1, g.prev(j))] {
            let rate = op.rate(j, step);
            if !(rate > 0.0) {
                return Err(Error::NonPositiveRate { from: j, to, rate });
            }
        }
    }
    Ok(())
}

fn check_path(op: &PeriodicTridiagonalOperator, path: &SymbolicPath) -> Result<()> {
    check_len(op.grid(), path.len)
}

/// Product of jump rates along `path` times its waiting-time integral.
pub fn path_weight(op: &PeriodicTridiagonalOperator, path: &SymbolicPath, t: f64) -> Result<PathWeight> {
    check_path(op, path)?;
    let sites = path.sites();
    let mut rate_product = 1.0;
    for (site, step) in sites.iter().zip(path.steps()) {
        let rate = op.rate(*site, *step);
        if !(rate > 0.0) {
            let to = op.grid().wrap(*site as isize + *step as isize);
            return Err(Error::NonPositiveRate { from: *site, to, rate });
        }
        rate_product *= rate;
    }
    let rates: Vec<f64> = sites.iter().map(|s| op.diag()[*s]).collect();
    let value = rate_product * exponential_convolution(&rates, t)?;
    let error_estimate = value * (4.0 * (2 * rates.len() + 8) as f64 * f64::EPSILON + 2.0 * SERIES_TOLERANCE);
    Ok(PathWeight { value, error_estimate })
}

/// [`path_weight`] with the waiting-time integral done by quadrature on 4096
/// intervals; an independent check of the series.
pub fn path_weight_quadrature(op: &PeriodicTridiagonalOperator, path: &SymbolicPath, t: f64) -> Result<f64> {
    check_path(op, path)?;
    let sites = path.sites();
    let rate_product: f64 = sites.iter().zip(path.steps()).map(|(s, st)| op.rate(*s, *st)).product();
    let rates: Vec<f64> = sites.iter().map(|s| op.diag()[*s]).collect();
    Ok(rate_product * exponential_convolution_quadrature(&rates, t, QUADRATURE_STEPS)?)
}

/// Walks of `q` unit steps on the integer line ending at displacement `k`.
pub fn count_paths(q: u32, k: i64) -> u128 {
    let q_i = q as i64;
    if k.abs() > q_i || (q_i + k).rem_euclid(2) != 0 {
        return 0;
    }
    binomial(q as u64, ((q_i + k) / 2) as u64)
}

/// `binom(q, q/2 + k)` read literally; `None` when `q/2 + k` is not an
/// integer in `0..=q`. Where defined it counts walks ending at `2k`.
pub fn count_paths_formula(q: u32, k: i64) -> Option<u128> {
    if q % 2 == 1 {
        return None;
    }
    let upper = (q / 2) as i64 + k;
    (0..=q as i64)
        .contains(&upper)
        .then(|| binomial(q as u64, upper as u64))
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Brute-force displacement histogram of all `2^q` walks on the line.
pub fn walk_displacements(q: u32) -> BTreeMap<i64, u128> {
    let mut out = BTreeMap::new();
    for bits in 0u64..(1u64 << q) {
        let up = bits.count_ones() as i64;
        *out.entry(2 * up - q as i64).or_insert(0) += 1;
    }
    out
}

/// All `q`-jump paths from `from` to `to`, in lexicographic step order (`-1` first).
pub fn enumerate_paths(grid: &Grid, from: usize, to: usize, q: u32) -> Result<Vec<SymbolicPath>> {
    let total = 1u128.checked_shl(q).unwrap_or(u128::MAX);
    if total > PATH_LIMIT {
        return Err(Error::PathExplosion {
            count: total,
            limit: PATH_LIMIT,
        });
    }
    let mut out = Vec::new();
    for bits in 0u64..(1u64 << q) {
        // Most significant bit is the first step; a set bit means +1.
        let steps: Vec<i8> = (0..q).rev().map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect();
        let path = SymbolicPath::new(grid, from, steps)?;
        if path.end() == to {
            out.push(path);
        }
    }
    Ok(out)
}

/// `(Sigma_1^2 / 2h^2)^q t^(q-1) / (q-1)! exp(-Sigma_0^2 t / 2h^2)`, the
/// `q`-fold self-convolution of `phi(t) = (Sigma_1^2 / 2h^2) exp(-Sigma_0^2 t / 2h^2)`.
pub fn conv_power(q: u32, t: f64, stats: &FieldStats, h: f64) -> Result<f64> {
    if q == 0 {
        return Err(Error::InvalidParameter("convolution power needs q >= 1".into()));
    }
    if !(t.is_finite() && t >= 0.0 && h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need t >= 0 and h > 0, got t = {t}, h = {h}"
        )));
    }
    let rate = stats.sigma1 * stats.sigma1 / (2.0 * h * h);
    let decay = stats.sigma0 * stats.sigma0 / (2.0 * h * h);
    if t == 0.0 {
        return Ok(if q == 1 { rate } else { 0.0 });
    }
    let log_factorial: f64 = (1..q).map(|j| (j as f64).ln()).sum();
    let log = q as f64 * rate.ln() + (q - 1) as f64 * t.ln() - log_factorial - decay * t;
    Ok(log.exp())
}

/// [`conv_power`] by quadrature, as an independent check.
pub fn conv_power_quadrature(q: u32, t: f64, stats: &FieldStats, h: f64) -> Result<f64> {
    if q == 0 {
        return Err(Error::InvalidParameter("convolution power needs q >= 1".into()));
    }
    let rate = stats.sigma1 * stats.sigma1 / (2.0 * h * h);
    let decay = stats.sigma0 * stats.sigma0 / (2.0 * h * h);
    let rates = vec![-decay; q as usize];
    Ok(rate.powi(q as i32) * exponential_convolution_quadrature(&rates, t, QUADRATURE_STEPS)?)
}

/// `sqrt(q / 2 pi) / t * exp(-Sigma_0^2 t / 2h^2 - q)`, which dominates
/// [`conv_power`] once `q >= q_max`.
pub fn tail_bound(q: u32, t: f64, stats: &FieldStats, h: f64) -> f64 {
    let decay = stats.sigma0 * stats.sigma0 / (2.0 * h * h);
    (q as f64 / (2.0 * PI)).sqrt() / t * (-decay * t - q as f64).exp()
}

/// `ceil(e^2 Sigma_1^2 t / 2h^2)`, at least 1.
pub fn q_max(stats: &FieldStats, t: f64, h: f64) -> u32 {
    let raw = E * E * stats.sigma1 * stats.sigma1 * t / (2.0 * h * h);
    // Absorb rounding so that exact integers are not bumped up by one.
    let q = (raw * (1.0 - 8.0 * f64::EPSILON)).ceil();
    q.max(1.0).min(u32::MAX as f64) as u32
}

/// Depth-first walker accumulating weights by jump count and end site.
///
/// The divided-difference series is carried along the path, one variable per
/// visited site, using a shift common to the whole lattice.
struct Walker<'a> {
    op: &'a PeriodicTridiagonalOperator,
    t: f64,
    q_cap: usize,
    target: Option<usize>,
    /// `t L(j, j) - c` per site.
    spread: Vec<f64>,
    /// `1 / binom(k + q, q)` per depth.
    inverse_binomials: Vec<Vec<f64>>,
    series: Vec<Vec<f64>>,
    /// Weight sums indexed by `[q][end]`.
    sums: Vec<Vec<f64>>,
    max_weight: Vec<f64>,
}

impl<'a> Walker<'a> {
    fn new(op: &'a PeriodicTridiagonalOperator, t: f64, q_cap: usize, target: Option<usize>) -> Result<(Self, f64)> {
        let shift = op.diag().iter().fold(f64::INFINITY, |a, d| a.min(t * d));
        let spread: Vec<f64> = op.diag().iter().map(|d| t * d - shift).collect();
        let terms = series_terms(spread.iter().fold(0.0, |a: f64, w| a.max(*w)))?;
        let walker = Walker {
            op,
            t,
            q_cap,
            target,
            spread,
            inverse_binomials: (0..=q_cap).map(|q| inverse_binomials(q, terms)).collect(),
            series: vec![vec![0.0; terms + 1]; q_cap + 1],
            sums: vec![vec![0.0; op.dim()]; q_cap + 1],
            max_weight: vec![0.0; q_cap + 1],
        };
        Ok((walker, shift.exp()))
    }

    fn reachable(&self, site: usize, depth: usize) -> bool {
        match self.target {
            None => true,
            Some(y) => {
                let n = self.op.dim();
                let gap = (site + n - y) % n;
                gap.min(n - gap) <= self.q_cap - depth
            }
        }
    }

    fn start(&mut self, x: usize, factor: f64) {
        let mut empty = vec![0.0; self.series[0].len()];
        empty[0] = 1.0;
        absorb(&empty, self.spread[x], &mut self.series[0]);
        self.record(x, 0, factor);
    }

    fn record(&mut self, site: usize, depth: usize, factor: f64) {
        let w = factor * dot(&self.series[depth], &self.inverse_binomials[depth]);
        self.sums[depth][site] += w;
        self.max_weight[depth] = self.max_weight[depth].max(w);
    }

    fn step(&mut self, site: usize, depth: usize, factor: f64, step: i8) {
        let g = self.op.grid();
        let next = if step > 0 { g.next(site) } else { g.prev(site) };
        if !self.reachable(next, depth + 1) {
            return;
        }
        let (done, rest) = self.series.split_at_mut(depth + 1);
        absorb(&done[depth], self.spread[next], &mut rest[0]);
        // Rate product and t^q / q! are folded in one jump at a time.
        let factor = factor * self.op.rate(site, step) * self.t / (depth + 1) as f64;
        self.record(next, depth + 1, factor);
        self.descend(next, depth + 1, factor);
    }

    fn descend(&mut self, site: usize, depth: usize, factor: f64) {
        if depth == self.q_cap {
            return;
        }
        self.step(site, depth, factor, -1);
        self.step(site, depth, factor, 1);
    }

    fn fork(&self) -> Self {
        Walker {
            op: self.op,
            t: self.t,
            q_cap: self.q_cap,
            target: self.target,
            spread: self.spread.clone(),
            inverse_binomials: self.inverse_binomials.clone(),
            series: self.series.clone(),
            sums: vec![vec![0.0; self.op.dim()]; self.q_cap + 1],
            max_weight: vec![0.0; self.q_cap + 1],
        }
    }

    fn merge(&mut self, other: Walker<'_>) {
        for (a, b) in self.sums.iter_mut().zip(other.sums) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.max_weight.iter_mut().zip(other.max_weight) {
            *a = a.max(b);
        }
    }
}

/// Runs a walk from `x`; the two first-step branches run in parallel and are
/// merged in a fixed order.
fn walk(op: &PeriodicTridiagonalOperator, x: usize, t: f64, q_cap: usize, target: Option<usize>) -> Result<Walker<'_>> {
    let (mut root, scale) = Walker::new(op, t, q_cap, target)?;
    root.start(x, scale);
    if q_cap > 0 {
        let mut left = root.fork();
        let mut right = root.fork();
        rayon::join(|| left.step(x, 0, scale, -1), || right.step(x, 0, scale, 1));
        root.merge(left);
        root.merge(right);
    }
    Ok(root)
}

fn check_resummation(op: &PeriodicTridiagonalOperator, t: f64, q_cap: u32) -> Result<()> {
    check_markov(op)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidParameter(format!("time must be nonnegative, got {t}")));
    }
    let count = 1u128.checked_shl(q_cap + 1).map_or(u128::MAX, |c| c - 1);
    if q_cap >= 120 || count > PATH_LIMIT {
        return Err(Error::PathExplosion {
            count,
            limit: PATH_LIMIT,
        });
    }
    Ok(())
}

/// Truncated path sum for one kernel entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resummation {
    pub value: f64,
    /// Contribution of each jump count `0..=q_cap`, already divided by `h`.
    pub terms: Vec<f64>,
    /// Rigorous bound on the omitted terms with more than `q_cap` jumps.
    pub tail_bound: f64,
}

/// `(1/h)` times the summed weights of all paths from `x` to `y` with at most
/// `q_cap` jumps: the kernel `u(x, y; t)` truncated in the jump count.
pub fn resum_kernel(op: &PeriodicTridiagonalOperator, x: usize, y: usize, t: f64, q_cap: u32) -> Result<Resummation> {
    check_resummation(op, t, q_cap)?;
    if x >= op.dim() || y >= op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: x.max(y) + 1,
        });
    }
    let walker = walk(op, x, t, q_cap as usize, Some(y))?;
    Ok(assemble(op, &walker, y, t, q_cap))
}

/// [`resum_kernel`] for every end point of row `x`.
pub fn resum_row(op: &PeriodicTridiagonalOperator, x: usize, t: f64, q_cap: u32) -> Result<Vec<Resummation>> {
    check_resummation(op, t, q_cap)?;
    if x >= op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: x + 1,
        });
    }
    let walker = walk(op, x, t, q_cap as usize, None)?;
    Ok((0..op.dim()).map(|y| assemble(op, &walker, y, t, q_cap)).collect())
}

fn assemble(op: &PeriodicTridiagonalOperator, walker: &Walker<'_>, y: usize, t: f64, q_cap: u32) -> Resummation {
    let h = op.spacing();
    let terms: Vec<f64> = walker.sums.iter().map(|s| s[y] / h).collect();
    Resummation {
        value: terms.iter().sum(),
        terms,
        tail_bound: truncation_bound(op, t, q_cap),
    }
}

/// `(1/h) e^{t max L(j,j)} sum_{q > q_cap} (lambda t)^q / q!` with
/// `lambda = max |L(j, j)|`, which bounds every omitted term.
fn truncation_bound(op: &PeriodicTridiagonalOperator, t: f64, q_cap: u32) -> f64 {
    let lambda = op.diag().iter().fold(0.0f64, |a, d| a.max(d.abs()));
    let top = op.diag().iter().fold(f64::NEG_INFINITY, |a, d| a.max(*d));
    let x = lambda * t;
    // Work in logs so that large x neither overflows nor underflows early.
    let mut log_term = 0.0;
    let mut tail = 0.0;
    for q in 1..(q_cap as usize + 10_000) {
        log_term += x.ln() - (q as f64).ln();
        if q as u32 > q_cap {
            let term = (log_term + top * t).exp();
            tail += term;
            if term < 1e-300 || term < tail * 1e-17 && q as f64 > x {
                break;
            }
        }
    }
    tail / op.spacing()
}

/// One line of the weight-versus-bound table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBoundRow {
    pub q: u32,
    pub paths: u128,
    pub max_weight: f64,
    pub bound: f64,
}

impl WeightBoundRow {
    pub fn holds(&self) -> bool {
        self.max_weight <= self.bound * (1.0 + 1e-12)
    }
}

/// Largest weight among all `q`-jump paths on the lattice, against
/// [`conv_power`], for `q = 1..=q_limit`.
pub fn weight_bound_table(
    op: &PeriodicTridiagonalOperator,
    field_stats: &FieldStats,
    t: f64,
    q_limit: u32,
) -> Result<Vec<WeightBoundRow>> {
    check_resummation(op, t, q_limit)?;
    let mut max_weight = vec![0.0f64; q_limit as usize + 1];
    for x in 0..op.dim() {
        let walker = walk(op, x, t, q_limit as usize, None)?;
        for (a, b) in max_weight.iter_mut().zip(&walker.max_weight) {
            *a = a.max(*b);
        }
    }
    let h = op.spacing();
    (1..=q_limit)
        .map(|q| {
            Ok(WeightBoundRow {
                q,
                paths: op.dim() as u128 * (1u128 << q),
                max_weight: max_weight[q as usize],
                bound: conv_power(q, t, field_stats, h)?,
            })
        })
        .collect()
}

/// CSV with columns `q,paths,max_weight,bound`.
pub fn weight_table_csv(rows: &[WeightBoundRow]) -> String {
    let mut out = String::from("q,paths,max_weight,bound\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.16e},{:.16e}\n", r.q, r.paths, r.max_weight, r.bound));
    }
    out
}

/// Absolute residual of an identity and the scale it should be read against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub residual: f64,
    pub scale: f64,
}

impl IdentityResidual {
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            self.residual
        } else {
            self.residual / self.scale
        }
    }
}

pub type Block = [[f64; 3]; 3];

/// Generator restricted to the stencil around site `j`, rows and columns
/// ordered `(x + h, x, x - h)`; couplings leaving the three sites are dropped.
pub fn lbar_matrix(op: &PeriodicTridiagonalOperator, j: usize) -> Block {
    let g = op.grid();
    let (next, prev) = (g.next(j), g.prev(j));
    let (d, u, w) = (op.diag(), op.up(), op.down());
    [[d[next], w[next], 0.0], [u[j], d[j], w[j]], [0.0, u[prev], d[prev]]]
}

/// The four blocks of the exact expansion `h^-2 B0 + h^-1 B1 + B2 + h B3`,
/// built from discrete derivatives of `v = sigma^2` and `mu` at site `j`.
pub fn lbar_blocks(grid: &Grid, vol: &[f64], drift: &[f64], j: usize) -> Result<[Block; 4]> {
    let nv = apply_nabla(grid, vol)?[j];
    let dv = apply_delta(grid, vol)?[j];
    let nm = apply_nabla(grid, drift)?[j];
    let dm = apply_delta(grid, drift)?[j];
    let (v, mu) = (vol[j], drift[j]);
    let side = 0.25 * dv - 0.5 * nm;
    Ok([
        [[-v, 0.5 * v, 0.0], [0.5 * v, -v, 0.5 * v], [0.0, 0.5 * v, -v]],
        [
            [-nv, 0.5 * nv - 0.5 * mu, 0.0],
            [0.5 * mu, 0.0, -0.5 * mu],
            [0.0, -0.5 * nv + 0.5 * mu, nv],
        ],
        [[-0.5 * dv, side, 0.0], [0.0; 3], [0.0, side, -0.5 * dv]],
        [[0.0, -0.25 * dm, 0.0], [0.0; 3], [0.0, 0.25 * dm, 0.0]],
    ])
}

/// Largest entry of `Lbar - (h^-2 B0 + h^-1 B1 + B2 + h B3)` at site `j`,
/// scaled by the largest entry of `Lbar`.
pub fn lbar_decomposition_check(field: &CoefficientField, grid: &Grid, j: usize) -> Result<IdentityResidual> {
    if j >= grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            found: j + 1,
        });
    }
    let op = build_generator(field, grid)?;
    let (vol, drift) = field.sample(grid)?;
    lbar_residual(&op, &vol, &drift, j)
}

pub(crate) fn lbar_residual(
    op: &PeriodicTridiagonalOperator,
    vol: &[f64],
    drift: &[f64],
    j: usize,
) -> Result<IdentityResidual> {
    let grid = op.grid();
    let h = grid.spacing();
    let lbar = lbar_matrix(op, j);
    let blocks = lbar_blocks(grid, vol, drift, j)?;
    let weights = [1.0 / (h * h), 1.0 / h, 1.0, h];
    let mut residual: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            let expansion: f64 = blocks.iter().zip(weights).map(|(b, w)| w * b[r][c]).sum();
            residual = residual.max((lbar[r][c] - expansion).abs());
            scale = scale.max(lbar[r][c].abs());
        }
    }
    Ok(IdentityResidual { residual, scale })
}

/// Residual of `f(x +- h) = f(x) +- h Nabla f(x) + (h^2 / 2) Delta f(x)` over
/// all sites, against `max |f|`.
pub fn discrete_taylor_check(f: &[f64], grid: &Grid) -> Result<IdentityResidual> {
    let nabla = apply_nabla(grid, f)?;
    let delta = apply_delta(grid, f)?;
    let h = grid.spacing();
    let mut residual: f64 = 0.0;
    for j in 0..grid.len() {
        let even = f[j] + 0.5 * h * h * delta[j];
        residual = residual
            .max((f[grid.next(j)] - (even + h * nabla[j])).abs())
            .max((f[grid.prev(j)] - (even - h * nabla[j])).abs());
    }
    Ok(IdentityResidual {
        residual,
        scale: f.iter().fold(0.0, |a, v| a.max(v.abs())),
    })
}

/// Statistics and largest jump count worth resumming on `grid`.
pub fn resummation_cap(field: &CoefficientField, grid: &Grid, t: f64, floor: u32) -> Result<u32> {
    let s = stats(field, grid)?;
    Ok(q_max(&s, t, grid.spacing()).max(floor))
}
