//! Time steppers on the delay-aligned grid `t_k = kΔ`, `Δ = τ/M`.
//!
//! [`simulate_tem_path`] is the truncated explicit scheme. [`simulate_bem_path`]
//! is a drift-implicit backward scheme used only as a reference: diffusion and
//! jump stay explicit, the drift is solved for at the new point.

use std::io::Write;

use crate::chain::matrix_exponential;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Regime};
use crate::noise::{make_noise, NoiseIncrements};
use crate::rng::StreamKey;
use crate::truncation::{Band, TruncationPolicy};

/// Step grid snapped so the delay is an exact number of steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub delta: f64,
    /// M, steps per delay.
    pub delay_steps: usize,
    /// K, steps on [0, T].
    pub num_steps: usize,
    pub requested_delta: f64,
    pub requested_horizon: f64,
}

impl Grid {
    /// `M = round(τ/Δ)`, `Δ = τ/M`, `K = round(T/Δ)`.
    pub fn snap(tau: f64, delta: f64, horizon: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Grid(format!("step must be > 0, got {delta}")));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Grid(format!("horizon must be >= 0, got {horizon}")));
        }
        if !(tau > 0.0) {
            return Err(Error::Grid(format!("delay must be > 0, got {tau}")));
        }
        let m = (tau / delta).round().max(1.0) as usize;
        let eff = tau / m as f64;
        let k = (horizon / eff).round() as usize;
        Ok(Self {
            delta: eff,
            delay_steps: m,
            num_steps: k,
            requested_delta: delta,
            requested_horizon: horizon,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.num_steps as f64 * self.delta
    }

    pub fn tau(&self) -> f64 {
        self.delay_steps as f64 * self.delta
    }

    pub fn was_snapped(&self) -> bool {
        self.delta != self.requested_delta || self.horizon() != self.requested_horizon
    }

    /// Grid with `factor` times as many steps per delay.
    pub fn refine(&self, factor: usize) -> Self {
        let m = self.delay_steps * factor;
        Self {
            delta: self.tau() / m as f64,
            delay_steps: m,
            num_steps: self.num_steps * factor,
            requested_delta: self.requested_delta / factor as f64,
            requested_horizon: self.requested_horizon,
        }
    }
}

/// Simulated trajectory on `k = -M..=K`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathState {
    pub grid: Grid,
    /// `values[k + M] = X(t_k)`.
    pub values: Vec<f64>,
    /// `regimes[k] = r(t_k)` for `k = 0..=K`.
    pub regimes: Vec<Regime>,
}

impl PathState {
    /// Initial segment only: `X(t_k) = ξ(t_k)` for `k = -M..=0`.
    pub fn initial(spec: &ModelSpec, grid: Grid, regimes: Vec<Regime>) -> Self {
        let m = grid.delay_steps;
        let mut values = Vec::with_capacity(m + grid.num_steps + 1);
        for j in 0..=m {
            let t = (j as f64 - m as f64) * grid.delta;
            values.push(spec.initial_segment.eval(t, spec.tau));
        }
        Self { grid, values, regimes }
    }

    /// `X(t_k)`, `k >= -M`.
    #[inline]
    pub fn value(&self, k: isize) -> f64 {
        self.values[(k + self.grid.delay_steps as isize) as usize]
    }

    /// Values on `t_0..=t_K`.
    pub fn forward(&self) -> &[f64] {
        &self.values[self.grid.delay_steps..]
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("path has at least the initial point")
    }

    /// Piecewise-constant step process: `X(t_k)` on `[t_k, t_{k+1})`.
    pub fn step_process(&self, t: f64) -> f64 {
        let m = self.grid.delay_steps as isize;
        let k = (t / self.grid.delta).floor() as isize;
        let k = k.clamp(-m, self.values.len() as isize - 1 - m);
        self.value(k)
    }

    /// Number of computed forward steps.
    pub fn steps_done(&self) -> usize {
        self.values.len() - 1 - self.grid.delay_steps
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// One explicit truncated step from `t_k`:
///
/// `X + f_Δ(X, r) Δ + φ(X(t_{k-M}), r) g_Δ(X) dB + h(X, r) dN`.
#[inline]
pub fn tem_step(state: &PathState, k: usize, d_brownian: f64, d_jumps: u32, spec: &ModelSpec, band: &Band) -> f64 {
    let m = state.grid.delay_steps;
    let x = state.values[m + k];
    let delayed = state.values[k];
    let r = state.regimes[k];
    x + band.drift(spec, x, r) * state.grid.delta
        + spec.volatility.eval(delayed, r) * band.diffusion(spec, x) * d_brownian
        + spec.jump(x, r) * d_jumps as f64
}

fn check_noise(grid: &Grid, noise: &NoiseIncrements) -> Result<()> {
    noise.check()?;
    if noise.num_steps() != grid.num_steps {
        return Err(Error::Grid(format!(
            "noise has {} steps, grid has {}",
            noise.num_steps(),
            grid.num_steps
        )));
    }
    if (noise.delta - grid.delta).abs() > 1e-12 * grid.delta {
        return Err(Error::Grid(format!("noise step {} differs from grid step {}", noise.delta, grid.delta)));
    }
    Ok(())
}

/// Truncated explicit path driven by `noise`. A pure function of its inputs.
pub fn simulate_tem_path(
    spec: &ModelSpec,
    policy: &TruncationPolicy,
    grid: Grid,
    noise: &NoiseIncrements,
) -> Result<PathState> {
    check_noise(&grid, noise)?;
    let band = policy.band(grid.delta)?;
    let mut state = PathState::initial(spec, grid, noise.regimes.clone());
    for k in 0..grid.num_steps {
        let next = tem_step(&state, k, noise.brownian[k], noise.poisson[k], spec, &band);
        state.values.push(next);
    }
    Ok(state)
}

/// Draws the noise for path `key` on `grid` and runs the truncated scheme.
pub fn simulate_tem(
    spec: &ModelSpec,
    policy: &TruncationPolicy,
    grid: Grid,
    key: StreamKey,
) -> Result<(PathState, NoiseIncrements)> {
    let noise = draw_noise(spec, grid, key)?;
    let path = simulate_tem_path(spec, policy, grid, &noise)?;
    Ok((path, noise))
}

pub fn draw_noise(spec: &ModelSpec, grid: Grid, key: StreamKey) -> Result<NoiseIncrements> {
    let p = matrix_exponential(&spec.generator, grid.delta)?;
    make_noise(grid.delta, grid.num_steps, spec.lambda, &p, spec.initial_regime, key)
}

/// Drift used inside the implicit solve. With the inverse term the domain is
/// `(0, ∞)`; without it, `f` is extended to `z < 0` by `f(0, i)`.
#[inline]
fn implicit_drift(spec: &ModelSpec, z: f64, r: Regime) -> (f64, f64) {
    if !spec.include_inverse_drift && z < 0.0 {
        return (spec.drift_unchecked(0.0, r), 0.0);
    }
    (spec.drift_unchecked(z, r), spec.drift_derivative(z, r))
}

const BEM_MAX_ITER: usize = 200;
const BEM_MAX_EXPANSIONS: usize = 1100;

/// One drift-implicit step: solves
/// `Z = X + f(Z, r) Δ + φ(X(t_{k-M}), r) g(X) dB + h(X, r) dN`
/// by Newton's method safeguarded with bisection on a sign-change bracket.
pub fn bem_step(state: &PathState, k: usize, d_brownian: f64, d_jumps: u32, spec: &ModelSpec) -> Result<f64> {
    let m = state.grid.delay_steps;
    let delta = state.grid.delta;
    let x = state.values[m + k];
    let delayed = state.values[k];
    let r = state.regimes[k];
    let explicit = x
        + spec.volatility.eval(delayed, r) * spec.diffusion(x) * d_brownian
        + spec.jump(x, r) * d_jumps as f64;
    let residual = |z: f64| z - delta * implicit_drift(spec, z, r).0 - explicit;
    let fail = |reason: String| Error::ImplicitSolve {
        step: k,
        x,
        regime: r,
        reason,
    };

    let mut hi = explicit.abs() + 1.0;
    let mut n = 0;
    while !(residual(hi) > 0.0) {
        hi *= 2.0;
        n += 1;
        if n > BEM_MAX_EXPANSIONS || !hi.is_finite() {
            return Err(fail("no upper bracket".into()));
        }
    }
    let mut lo = if spec.include_inverse_drift {
        let mut lo = hi.min(x.abs().max(f64::MIN_POSITIVE)) / 2.0;
        while !(residual(lo) < 0.0) {
            lo /= 2.0;
            if lo < 1e-300 {
                return Err(fail("no positive root: residual stays >= 0 near 0".into()));
            }
        }
        lo
    } else {
        let mut lo = -(explicit.abs() + 1.0);
        let mut n = 0;
        while !(residual(lo) < 0.0) {
            lo *= 2.0;
            n += 1;
            if n > BEM_MAX_EXPANSIONS || !lo.is_finite() {
                return Err(fail("no lower bracket".into()));
            }
        }
        lo
    };

    let mut z = if x > lo && x < hi { x } else { 0.5 * (lo + hi) };
    for _ in 0..BEM_MAX_ITER {
        let (f, df) = implicit_drift(spec, z, r);
        let res = z - delta * f - explicit;
        if res == 0.0 {
            return Ok(z);
        }
        if res < 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let newton = z - res / (1.0 - delta * df);
        let next = if newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let scale = z.abs().max(1e-300);
        if (next - z).abs() <= 1e-15 * scale || hi - lo <= 1e-15 * scale {
            return Ok(next);
        }
        z = next;
    }
    Err(fail(format!("no convergence in {BEM_MAX_ITER} iterations")))
}

/// Backward scheme path driven by `noise`.
pub fn simulate_bem_path(spec: &ModelSpec, grid: Grid, noise: &NoiseIncrements) -> Result<PathState> {
    check_noise(&grid, noise)?;
    let mut state = PathState::initial(spec, grid, noise.regimes.clone());
    for k in 0..grid.num_steps {
        let next = bem_step(&state, k, noise.brownian[k], noise.poisson[k], spec)?;
        state.values.push(next);
    }
    Ok(state)
}

/// CSV with columns `k,t,X,regime,dB,dN` for `k = -M..=K`, regimes 1-based.
/// Rows without an increment leave `dB` and `dN` empty; rows before `t_0`
/// carry the initial regime.
pub fn write_path_csv<W: Write>(mut w: W, path: &PathState, noise: &NoiseIncrements) -> std::io::Result<()> {
    let m = path.grid.delay_steps as isize;
    let k_max = path.steps_done() as isize;
    writeln!(w, "k,t,X,regime,dB,dN")?;
    for k in -m..=k_max {
        let t = k as f64 * path.grid.delta;
        let x = path.value(k);
        let r = path.regimes[k.max(0) as usize] + 1;
        if k >= 0 && k < k_max {
            let ku = k as usize;
            writeln!(w, "{k},{t},{x},{r},{},{}", noise.brownian[ku], noise.poisson[ku])?;
        } else {
            writeln!(w, "{k},{t},{x},{r},,")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RegimeParams, Volatility};
    use crate::truncation::PowerMu;
    use approx::assert_abs_diff_eq;

    fn example() -> ModelSpec {
        ModelSpec::two_regime_example()
    }

    fn preset(spec: &ModelSpec) -> TruncationPolicy {
        TruncationPolicy::new(spec, PowerMu::QUADRATIC3, 2.0 / 3.0, None).unwrap()
    }

    fn flat_spec() -> ModelSpec {
        let mut s = example();
        s.regimes = vec![RegimeParams::new(0.0, 0.0, 0.0, 0.0, 2.0).unwrap(); 2];
        s.include_inverse_drift = false;
        s.volatility = Volatility::zero();
        s
    }

    #[test]
    fn grid_snapping() {
        let g = Grid::snap(1.0, 0.3, 2.0).unwrap();
        assert_eq!(g.delay_steps, 3);
        assert_abs_diff_eq!(g.delta, 1.0 / 3.0);
        assert_eq!(g.num_steps, 6);
        assert!(g.was_snapped());
        let g = Grid::snap(1.0, 1e-3, 2.0).unwrap();
        assert_eq!((g.delay_steps, g.num_steps), (1000, 2000));
        assert_eq!(g.tau(), 1.0);
        let g = Grid::snap(1.0, 0.25, 1.1).unwrap();
        assert_eq!(g.num_steps, 4);
        assert_eq!(g.horizon(), 1.0);
        assert!(Grid::snap(1.0, 0.0, 1.0).is_err());
        let f = Grid::snap(1.0, 0.25, 2.0).unwrap().refine(4);
        assert_eq!((f.delay_steps, f.num_steps, f.delta), (16, 32, 1.0 / 16.0));
    }

    #[test]
    fn zero_noise_step_is_drift_only() {
        let spec = example();
        let policy = preset(&spec);
        let grid = Grid::snap(1.0, 1e-3, 1.0).unwrap();
        let band = policy.band(grid.delta).unwrap();
        let state = PathState::initial(&spec, grid, vec![1; 2]);
        let x = state.value(0);
        assert_eq!(tem_step(&state, 0, 0.0, 0, &spec, &band), x + band.drift(&spec, x, 1) * grid.delta);
    }

    #[test]
    fn first_step_composition() {
        let spec = example();
        let policy = preset(&spec);
        let grid = Grid::snap(1.0, 1e-3, 1.0).unwrap();
        let band = policy.band(grid.delta).unwrap();
        let state = PathState::initial(&spec, grid, vec![0; 2]);
        // mpmath: 0.02 + f(1/sqrt(100/3), 1) 1e-3 + phi(0.02, 1) 0.02^1.25 0.01
        assert_abs_diff_eq!(
            tem_step(&state, 0, 0.01, 0, &spec, &band),
            0.021_553_922_591_485_481,
            epsilon = 1e-15
        );
    }

    #[test]
    fn isolated_jump_channel() {
        let mut spec = flat_spec();
        spec.initial_segment = crate::model::InitialSegment::constant(0.5);
        let policy = TruncationPolicy::new(&spec, PowerMu::QUADRATIC3, 0.25, None).unwrap();
        let grid = Grid::snap(1.0, 1e-3, 1.0).unwrap();
        let band = policy.band(grid.delta).unwrap();
        let state = PathState::initial(&spec, grid, vec![1; 2]);
        assert_abs_diff_eq!(tem_step(&state, 0, 0.3, 2, &spec, &band), 2.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_horizon_is_initial_segment() {
        let spec = example();
        let policy = preset(&spec);
        let grid = Grid::snap(1.0, 0.01, 0.0).unwrap();
        let (path, noise) = simulate_tem(&spec, &policy, grid, StreamKey::new(1, 0)).unwrap();
        assert_eq!(path.values, vec![0.02; 101]);
        assert_eq!(noise.num_steps(), 0);
    }

    #[test]
    fn paths_are_reproducible() {
        let spec = example();
        let policy = preset(&spec);
        let grid = Grid::snap(1.0, 1e-3, 2.0).unwrap();
        let (a, na) = simulate_tem(&spec, &policy, grid, StreamKey::new(11, 4)).unwrap();
        let (b, _) = simulate_tem(&spec, &policy, grid, StreamKey::new(11, 4)).unwrap();
        assert_eq!(a, b);
        let c = simulate_tem_path(&spec, &policy, grid, &na).unwrap();
        assert_eq!(a, c);
        assert!(a.all_finite());
        assert_eq!(a.values.len(), 1000 + 2000 + 1);
    }

    #[test]
    fn noise_grid_mismatch_is_rejected() {
        let spec = example();
        let policy = preset(&spec);
        let grid = Grid::snap(1.0, 1e-2, 1.0).unwrap();
        let noise = NoiseIncrements::quiet(1e-2, 50, 0);
        assert!(simulate_tem_path(&spec, &policy, grid, &noise).is_err());
        assert!(simulate_bem_path(&spec, grid, &noise).is_err());
    }

    #[test]
    fn step_process_is_left_continuous_steps() {
        let spec = example();
        let policy = preset(&spec);
        let grid = Grid::snap(1.0, 0.1, 1.0).unwrap();
        let (path, _) = simulate_tem(&spec, &policy, grid, StreamKey::new(2, 0)).unwrap();
        assert_eq!(path.step_process(0.0), path.value(0));
        assert_eq!(path.step_process(0.15), path.value(1));
        assert_eq!(path.step_process(0.1999), path.value(1));
        assert_eq!(path.step_process(-0.55), path.value(-6));
        assert_eq!(path.step_process(5.0), path.terminal());
    }

    #[test]
    fn bem_fixed_point_with_zero_drift() {
        let spec = flat_spec();
        let grid = Grid::snap(1.0, 0.1, 1.0).unwrap();
        let state = PathState::initial(&spec, grid, vec![0; 11]);
        assert_eq!(bem_step(&state, 0, 0.0, 0, &spec).unwrap(), 0.02);
    }

    #[test]
    fn bem_linear_decay_closed_form() {
        let mut spec = flat_spec();
        spec.regimes = vec![RegimeParams::new(0.0, 0.0, 0.0, 1.0, 0.0).unwrap(); 2];
        spec.rho = 1.0;
        spec.initial_segment = crate::model::InitialSegment::constant(1.0);
        let grid = Grid::snap(1.0, 0.1, 1.0).unwrap();
        let state = PathState::initial(&spec, grid, vec![0; 11]);
        // Z = 1 - 0.1 Z
        assert_abs_diff_eq!(bem_step(&state, 0, 0.0, 0, &spec).unwrap(), 1.0 / 1.1, epsilon = 1e-15);
    }

    #[test]
    fn bem_solves_the_implicit_equation() {
        let spec = example();
        let grid = Grid::snap(1.0, 1e-2, 1.0).unwrap();
        let mut state = PathState::initial(&spec, grid, vec![1; 101]);
        state.values[grid.delay_steps] = 0.7;
        let z = bem_step(&state, 0, 0.05, 1, &spec).unwrap();
        let explicit = 0.7 + spec.volatility.eval(0.02, 1) * spec.diffusion(0.7) * 0.05 + spec.jump(0.7, 1);
        assert!(z > 0.0);
        assert_abs_diff_eq!(z, explicit + spec.drift(z, 1).unwrap() * grid.delta, epsilon = 1e-12);
    }

    #[test]
    fn bem_stays_positive_with_inverse_drift() {
        let spec = example();
        let grid = Grid::snap(1.0, 1e-2, 2.0).unwrap();
        for p in 0..20 {
            let noise = draw_noise(&spec, grid, StreamKey::new(8, p)).unwrap();
            let path = simulate_bem_path(&spec, grid, &noise).unwrap();
            assert!(path.forward().iter().all(|&v| v > 0.0), "path {p}");
        }
    }

    #[test]
    fn bem_without_inverse_term_crosses_zero() {
        let mut spec = example();
        spec.include_inverse_drift = false;
        let grid = Grid::snap(1.0, 1e-2, 1.0).unwrap();
        let noise = NoiseIncrements::quiet(grid.delta, grid.num_steps, 0);
        let path = simulate_bem_path(&spec, grid, &noise).unwrap();
        // below zero the extended drift is the constant f(0, 1) = -0.2
        let k = path.forward().iter().position(|&v| v < 0.0).unwrap();
        for w in path.forward()[k..].windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], -0.2 * grid.delta, epsilon = 1e-14);
        }
    }

    #[test]
    fn tem_and_bem_agree_without_drift() {
        let mut spec = flat_spec();
        spec.volatility = Volatility::constant(vec![0.3, 0.2]);
        let policy = TruncationPolicy::new(&spec, PowerMu::QUADRATIC3, 0.25, None).unwrap();
        let grid = Grid::snap(1.0, 1e-2, 1.0).unwrap();
        let noise = draw_noise(&spec, grid, StreamKey::new(3, 3)).unwrap();
        let a = simulate_tem_path(&spec, &policy, grid, &noise).unwrap();
        let b = simulate_bem_path(&spec, grid, &noise).unwrap();
        // g is untruncated inside the band; the path stays well below its upper edge
        assert!(a.forward().iter().all(|&v| v < policy.band(grid.delta).unwrap().upper));
        for (x, z) in a.values.iter().zip(&b.values) {
            assert_abs_diff_eq!(x, z, epsilon = 1e-14);
        }
    }

    #[test]
    fn path_csv_layout() {
        let spec = example();
        let policy = preset(&spec);
        let grid = Grid::snap(1.0, 0.1, 1.0).unwrap();
        let (path, noise) = simulate_tem(&spec, &policy, grid, StreamKey::new(1, 0)).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&mut buf, &path, &noise).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 10 + 10 + 1);
        assert_eq!(lines[0], "k,t,X,regime,dB,dN");
        assert_eq!(lines[1], "-10,-1,0.02,1,,");
        assert!(lines[11].starts_with("0,0,0.02,1,"));
        assert!(lines[21].ends_with(",,"));
    }
}
