//! Monte Carlo estimators over independent paths.
//!
//! Paths fan out over the rayon pool. Per-path results are collected in path
//! order and reduced sequentially, so every estimate is bitwise independent of
//! the thread count.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::noise::{coarsen_noise, NoiseIncrements, NoiseRecord};
use crate::rng::StreamKey;
use crate::scheme::{draw_noise, simulate_bem_path, simulate_tem_path, Grid, PathState};
use crate::truncation::TruncationPolicy;

/// Running mean and variance (Welford), mergeable.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&self, other: &Moments) -> Moments {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64;
        Moments { n, mean, m2 }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sample_variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.sample_variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorResult {
    pub estimate: f64,
    pub std_error: f64,
    pub num_paths: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl EstimatorResult {
    pub fn from_moments(m: &Moments) -> Self {
        let se = m.std_error();
        Self {
            estimate: m.mean(),
            std_error: se,
            num_paths: m.count(),
            ci_low: m.mean() - 1.96 * se,
            ci_high: m.mean() + 1.96 * se,
        }
    }

    pub fn from_samples(samples: &[f64]) -> Self {
        Self::from_moments(&samples.iter().copied().collect())
    }
}

fn replay_record(spec: &ModelSpec, grid: Grid, key: StreamKey, noise: &NoiseIncrements) -> Box<NoiseRecord> {
    Box::new(NoiseRecord {
        seed: key.master_seed,
        path_index: key.path_index,
        delay_steps: grid.delay_steps as u64,
        lambda: spec.lambda,
        noise: noise.clone(),
    })
}

fn check_finite(spec: &ModelSpec, path: &PathState, key: StreamKey, noise: &NoiseIncrements) -> Result<()> {
    match path.values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(j) => Err(Error::NonFinite {
            path_index: key.path_index,
            step: j.saturating_sub(path.grid.delay_steps),
            record: replay_record(spec, path.grid, key, noise),
        }),
    }
}

/// One truncated path for `key`, with NaN/inf detection.
pub fn run_tem_path(
    spec: &ModelSpec,
    policy: &TruncationPolicy,
    grid: Grid,
    key: StreamKey,
) -> Result<(PathState, NoiseIncrements)> {
    let noise = draw_noise(spec, grid, key)?;
    let path = simulate_tem_path(spec, policy, grid, &noise)?;
    check_finite(spec, &path, key, &noise)?;
    Ok((path, noise))
}

/// Per-path values in path order.
pub fn per_path<T, F>(num_paths: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..num_paths).into_par_iter().map(f).collect()
}

/// Mean of `payoff` over truncated paths `0..num_paths`.
pub fn estimate<F>(
    spec: &ModelSpec,
    policy: &TruncationPolicy,
    grid: Grid,
    num_paths: u64,
    seed: u64,
    payoff: F,
) -> Result<EstimatorResult>
where
    F: Fn(&PathState) -> f64 + Sync + Send,
{
    policy.band(grid.delta)?;
    let samples = per_path(num_paths, |i| {
        let (path, _) = run_tem_path(spec, policy, grid, StreamKey::new(seed, i))?;
        Ok(payoff(&path))
    })?;
    Ok(EstimatorResult::from_samples(&samples))
}

/// `exp(-Σ_{k<K} X(t_k) Δ)`: the exact integral of the step process over [0, T].
pub fn discount_factor(path: &PathState) -> f64 {
    let integral: f64 = path.forward()[..path.steps_done()].iter().sum::<f64>() * path.grid.delta;
    (-integral).exp()
}

/// `(X(T) - strike)^+` if the step process stays strictly below `barrier` on [0, T].
pub fn barrier_payoff(path: &PathState, strike: f64, barrier: f64) -> f64 {
    let running_max = path.forward().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if running_max < barrier {
        (path.terminal() - strike).max(0.0)
    } else {
        0.0
    }
}

pub fn bond_price(
    spec: &ModelSpec,
    policy: &TruncationPolicy,
    grid: Grid,
    num_paths: u64,
    seed: u64,
) -> Result<EstimatorResult> {
    estimate(spec, policy, grid, num_paths, seed, discount_factor)
}

#[allow(clippy::too_many_arguments)]
pub fn barrier_option_price(
    spec: &ModelSpec,
    policy: &TruncationPolicy,
    grid: Grid,
    strike: f64,
    barrier: f64,
    num_paths: u64,
    seed: u64,
) -> Result<EstimatorResult> {
    if !(strike >= 0.0) {
        return Err(Error::Domain(format!("strike must be >= 0, got {strike}")));
    }
    if !(barrier > 0.0) {
        return Err(Error::Domain(format!("barrier must be > 0, got {barrier}")));
    }
    estimate(spec, policy, grid, num_paths, seed, |p| barrier_payoff(p, strike, barrier))
}

pub fn terminal_mean(
    spec: &ModelSpec,
    policy: &TruncationPolicy,
    grid: Grid,
    num_paths: u64,
    seed: u64,
) -> Result<EstimatorResult> {
    estimate(spec, policy, grid, num_paths, seed, PathState::terminal)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    /// Effective steps, strictly decreasing.
    pub step_sizes: Vec<f64>,
    /// `E[sup_t |x_Δ - x_ref|^p]^(1/p)`.
    pub errors: Vec<f64>,
    /// Delta-method standard errors of `errors`.
    pub std_errors: Vec<f64>,
    pub reference_step: f64,
    pub p: f64,
    pub num_paths: u64,
    /// Least-squares slope of log2 error against log2 Δ, when at least two
    /// errors are positive.
    pub fitted_order: Option<f64>,
}

/// Unweighted least-squares slope of `ys` on `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Coarse grids, sorted coarse to fine, each with its refinement factor
/// relative to `reference`.
fn coupled_grids(tau: f64, horizon: f64, coarse: &[f64], reference: &Grid) -> Result<Vec<(Grid, usize)>> {
    let mut grids = Vec::with_capacity(coarse.len());
    for &d in coarse {
        let g = Grid::snap(tau, d, horizon)?;
        if !reference.delay_steps.is_multiple_of(g.delay_steps) {
            return Err(Error::Grid(format!(
                "step {d} (effective {}) is not a multiple of the reference step {}",
                g.delta, reference.delta
            )));
        }
        let factor = reference.delay_steps / g.delay_steps;
        if g.num_steps * factor != reference.num_steps {
            return Err(Error::Grid(format!(
                "step {d}: horizon {} does not align with the reference grid ({} steps)",
                g.horizon(),
                reference.num_steps
            )));
        }
        grids.push((g, factor));
    }
    grids.sort_by(|a, b| b.0.delta.total_cmp(&a.0.delta));
    if grids.windows(2).any(|w| w[0].0.delay_steps == w[1].0.delay_steps) {
        return Err(Error::Grid("duplicate step sizes in ladder".into()));
    }
    Ok(grids)
}

/// Strong error of the truncated scheme against a fine truncated reference
/// sharing the same Brownian, Poisson and chain randomness.
#[allow(clippy::too_many_arguments)]
pub fn strong_error(
    spec: &ModelSpec,
    policy: &TruncationPolicy,
    coarse_deltas: &[f64],
    reference_delta: f64,
    horizon: f64,
    p: f64,
    num_paths: u64,
    seed: u64,
) -> Result<ConvergenceReport> {
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("error exponent p must be >= 1, got {p}")));
    }
    if coarse_deltas.is_empty() {
        return Err(Error::Grid("empty step ladder".into()));
    }
    let reference = Grid::snap(spec.tau, reference_delta, horizon)?;
    let grids = coupled_grids(spec.tau, horizon, coarse_deltas, &reference)?;
    for (g, _) in &grids {
        policy.band(g.delta)?;
    }

    let sups: Vec<Vec<f64>> = per_path(num_paths, |i| {
        let key = StreamKey::new(seed, i);
        let (fine_path, fine_noise) = run_tem_path(spec, policy, reference, key)?;
        let fine = fine_path.forward();
        grids
            .iter()
            .map(|&(g, factor)| {
                let noise = coarsen_noise(&fine_noise, factor)?;
                let path = simulate_tem_path(spec, policy, g, &noise)?;
                check_finite(spec, &path, key, &fine_noise)?;
                Ok(path
                    .forward()
                    .iter()
                    .enumerate()
                    .map(|(k, x)| (x - fine[k * factor]).abs())
                    .fold(0.0, f64::max))
            })
            .collect()
    })?;

    let mut errors = Vec::with_capacity(grids.len());
    let mut std_errors = Vec::with_capacity(grids.len());
    for j in 0..grids.len() {
        let m: Moments = sups.iter().map(|s| s[j].powf(p)).collect();
        let err = m.mean().powf(1.0 / p);
        let se = if m.mean() > 0.0 {
            m.std_error() * m.mean().powf(1.0 / p - 1.0) / p
        } else {
            0.0
        };
        errors.push(err);
        std_errors.push(se);
    }
    let step_sizes: Vec<f64> = grids.iter().map(|(g, _)| g.delta).collect();
    let (lx, ly): (Vec<f64>, Vec<f64>) = step_sizes
        .iter()
        .zip(&errors)
        .filter(|(_, e)| **e > 0.0)
        .map(|(d, e)| (d.log2(), e.log2()))
        .unzip();
    Ok(ConvergenceReport {
        step_sizes,
        errors,
        std_errors,
        reference_step: reference.delta,
        p,
        num_paths,
        fitted_order: least_squares_slope(&lx, &ly),
    })
}

/// Distribution of the per-path sup distance between the truncated and the
/// backward scheme on shared noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeComparison {
    pub delta: f64,
    pub num_paths: u64,
    pub mean: f64,
    pub std_error: f64,
    pub max: f64,
    /// `(level, value)` for levels 0.05, 0.25, 0.5, 0.75, 0.95.
    pub quantiles: Vec<(f64, f64)>,
}

impl SchemeComparison {
    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - 1.96 * self.std_error, self.mean + 1.96 * self.std_error)
    }
}

impl fmt::Display for SchemeComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "delta = {:e}: mean sup distance {:.6e} ± {:.2e} (max {:.6e}, {} paths)",
            self.delta, self.mean, self.std_error, self.max, self.num_paths
        )
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = level.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn scheme_comparison(
    spec: &ModelSpec,
    policy: &TruncationPolicy,
    grid: Grid,
    num_paths: u64,
    seed: u64,
) -> Result<SchemeComparison> {
    policy.band(grid.delta)?;
    let distances = per_path(num_paths, |i| {
        let key = StreamKey::new(seed, i);
        let (tem, noise) = run_tem_path(spec, policy, grid, key)?;
        let bem = simulate_bem_path(spec, grid, &noise).map_err(|e| Error::OnPath {
            path_index: i,
            message: e.to_string(),
            record: replay_record(spec, grid, key, &noise),
        })?;
        check_finite(spec, &bem, key, &noise)?;
        Ok(tem
            .forward()
            .iter()
            .zip(bem.forward())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    })?;
    let m: Moments = distances.iter().copied().collect();
    let mut sorted = distances;
    sorted.sort_by(f64::total_cmp);
    let quantiles = [0.05, 0.25, 0.5, 0.75, 0.95]
        .into_iter()
        .map(|q| (q, quantile_sorted(&sorted, q)))
        .collect();
    Ok(SchemeComparison {
        delta: grid.delta,
        num_paths,
        mean: m.mean(),
        std_error: m.std_error(),
        max: sorted.last().copied().unwrap_or(0.0),
        quantiles,
    })
}

/// Sample `E|X(t_k)|^p` for `k = 0..=K`.
pub fn moment_profile(
    spec: &ModelSpec,
    policy: &TruncationPolicy,
    grid: Grid,
    p: f64,
    num_paths: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    policy.band(grid.delta)?;
    let powers = per_path(num_paths, |i| {
        let (path, _) = run_tem_path(spec, policy, grid, StreamKey::new(seed, i))?;
        Ok(path.forward().iter().map(|x| x.abs().powf(p)).collect::<Vec<f64>>())
    })?;
    let mut acc = vec![Moments::default(); grid.num_steps + 1];
    for row in &powers {
        for (m, &v) in acc.iter_mut().zip(row) {
            m.push(v);
        }
    }
    Ok(acc.iter().map(Moments::mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InitialSegment, RegimeParams, Volatility};
    use crate::truncation::PowerMu;
    use approx::assert_abs_diff_eq;

    fn constant_spec() -> ModelSpec {
        let mut s = ModelSpec::two_regime_example();
        s.regimes = vec![RegimeParams::new(0.0, 0.0, 0.0, 0.0, 0.0).unwrap(); 2];
        s.include_inverse_drift = false;
        s.volatility = Volatility::zero();
        s.lambda = 0.0;
        s
    }

    fn quadratic(spec: &ModelSpec, q: f64) -> TruncationPolicy {
        TruncationPolicy::new(spec, PowerMu::QUADRATIC3, q, None).unwrap()
    }

    #[test]
    fn moments_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let all: Moments = xs.iter().copied().collect();
        let a: Moments = xs[..313].iter().copied().collect();
        let b: Moments = xs[313..].iter().copied().collect();
        let merged = a.merge(&b);
        assert_abs_diff_eq!(merged.mean(), all.mean(), epsilon = 1e-12);
        assert_abs_diff_eq!(merged.sample_variance(), all.sample_variance(), epsilon = 1e-10);
        assert_eq!(merged.count(), 1000);
        assert_eq!(Moments::default().merge(&a), a);
    }

    #[test]
    fn identical_samples_have_zero_error() {
        let r = EstimatorResult::from_samples(&[0.980_198_673_306_755_1; 50]);
        assert_eq!(r.std_error, 0.0);
        assert_eq!(r.ci_low, r.estimate);
        assert_eq!(r.num_paths, 50);
    }

    #[test]
    fn constant_path_bond() {
        let spec = constant_spec();
        let policy = quadratic(&spec, 0.25);
        let grid = Grid::snap(1.0, 1e-3, 1.0).unwrap();
        let r = bond_price(&spec, &policy, grid, 16, 1).unwrap();
        assert_abs_diff_eq!(r.estimate, (-0.02f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.estimate, 0.980_199, epsilon = 1e-6);
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn barrier_payoff_arithmetic() {
        let spec = constant_spec();
        let grid = Grid::snap(1.0, 0.1, 1.0).unwrap();
        let mut path = PathState::initial(&spec, grid, vec![0; 11]);
        path.values.extend([0.03, 0.04, 0.06, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05]);
        assert_abs_diff_eq!(barrier_payoff(&path, 0.03, 0.1), 0.02, epsilon = 1e-15);
        assert_eq!(barrier_payoff(&path, 0.03, 0.06), 0.0);
        assert_eq!(barrier_payoff(&path, 0.07, 1.0), 0.0);
    }

    #[test]
    fn immediate_knockout() {
        let spec = ModelSpec::two_regime_example();
        let policy = quadratic(&spec, 2.0 / 3.0);
        let grid = Grid::snap(1.0, 1e-2, 1.0).unwrap();
        let r = barrier_option_price(&spec, &policy, grid, 0.0, 0.02, 200, 3).unwrap();
        assert_eq!((r.estimate, r.std_error), (0.0, 0.0));
        assert!(barrier_option_price(&spec, &policy, grid, -1.0, 0.02, 1, 3).is_err());
    }

    #[test]
    fn uncapped_barrier_is_terminal_mean() {
        let spec = ModelSpec::two_regime_example();
        let policy = quadratic(&spec, 2.0 / 3.0);
        let grid = Grid::snap(1.0, 1e-2, 1.0).unwrap();
        let a = barrier_option_price(&spec, &policy, grid, 0.0, f64::INFINITY, 300, 5).unwrap();
        let b = terminal_mean(&spec, &policy, grid, 300, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimates_independent_of_threads() {
        let spec = ModelSpec::two_regime_example();
        let policy = quadratic(&spec, 2.0 / 3.0);
        let grid = Grid::snap(1.0, 1e-2, 1.0).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| bond_price(&spec, &policy, grid, 257, 9).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn bond_in_unit_interval_for_positive_paths() {
        let spec = ModelSpec::two_regime_example();
        let policy = quadratic(&spec, 2.0 / 3.0);
        let grid = Grid::snap(1.0, 1e-2, 1.0).unwrap();
        let samples = per_path(100, |i| {
            let (p, _) = run_tem_path(&spec, &policy, grid, StreamKey::new(4, i))?;
            Ok((p.forward().iter().all(|&x| x >= 0.0), discount_factor(&p)))
        })
        .unwrap();
        for (nonneg, d) in samples {
            if nonneg {
                assert!(d > 0.0 && d <= 1.0);
            }
        }
    }

    #[test]
    fn self_comparison_has_zero_error() {
        let spec = ModelSpec::two_regime_example();
        let policy = quadratic(&spec, 2.0 / 3.0);
        let r = strong_error(&spec, &policy, &[1.0 / 64.0], 1.0 / 64.0, 1.0, 2.0, 20, 1).unwrap();
        assert_eq!(r.errors, vec![0.0]);
        assert_eq!(r.fitted_order, None);
    }

    #[test]
    fn ladder_must_divide_reference() {
        let spec = ModelSpec::two_regime_example();
        let policy = quadratic(&spec, 2.0 / 3.0);
        let err = strong_error(&spec, &policy, &[1.0 / 32.0, 1.0 / 48.0], 1.0 / 256.0, 1.0, 2.0, 4, 1).unwrap_err();
        assert!(err.to_string().contains("0.0208"), "{err}");
    }

    #[test]
    fn deterministic_euler_order_one() {
        let mut spec = ModelSpec::two_regime_example();
        spec.regimes.truncate(1);
        spec.generator = crate::chain::GeneratorMatrix::new(vec![vec![0.0]]).unwrap();
        spec.volatility = Volatility::constant(vec![0.0]);
        spec.lambda = 0.0;
        spec.initial_segment = InitialSegment::constant(1.0);
        let policy = quadratic(&spec, 2.0 / 3.0);
        let ladder: Vec<f64> = (5..=9).map(|e| 2f64.powi(-e)).collect();
        let r = strong_error(&spec, &policy, &ladder, 2f64.powi(-14), 2.0, 2.0, 1, 0).unwrap();
        let order = r.fitted_order.unwrap();
        assert!((order - 1.0).abs() < 0.1, "{r:?}");
    }

    #[test]
    fn scheme_comparison_without_drift_is_zero() {
        let mut spec = constant_spec();
        spec.volatility = Volatility::constant(vec![0.2, 0.1]);
        spec.lambda = 1.0;
        let policy = quadratic(&spec, 0.25);
        let grid = Grid::snap(1.0, 1e-2, 1.0).unwrap();
        let c = scheme_comparison(&spec, &policy, grid, 50, 2).unwrap();
        assert!(c.max < 1e-13, "{c}");
    }

    #[test]
    fn scheme_comparison_is_deterministic() {
        let mut spec = ModelSpec::two_regime_example();
        spec.include_inverse_drift = false;
        let policy = quadratic(&spec, 2.0 / 3.0);
        let grid = Grid::snap(1.0, 1e-2, 1.0).unwrap();
        let a = scheme_comparison(&spec, &policy, grid, 1, 6).unwrap();
        let b = scheme_comparison(&spec, &policy, grid, 1, 6).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.quantiles.len(), 5);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert_eq!(quantile_sorted(&v, 0.1), 1.4);
    }

    #[test]
    fn slope_of_line() {
        assert_eq!(least_squares_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]), Some(2.0));
        assert_eq!(least_squares_slope(&[1.0], &[1.0]), None);
    }
}
