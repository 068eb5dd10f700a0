//! Coefficients of the regime-switching jump SDDE
//!
//! ```text
//! dx(t) = f(x(t-), r(t)) dt + phi(x((t - tau)-), r(t)) g(x(t-)) dB(t) + h(x(t-), r(t)) dN(t)
//! f(x, i) = a_m1(i)/x - a_0(i) + a_1(i) x - a_2(i) x^rho
//! g(x)    = x^theta
//! h(x, i) = a_3(i) x
//! ```
//!
//! Regimes are 0-based internally. Config files and CSV output use 1-based
//! regime labels.

use std::fmt;
use std::sync::Arc;

use crate::chain::GeneratorMatrix;
use crate::error::{Error, Result};

/// Regime index, 0-based.
pub type Regime = usize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeParams {
    /// Coefficient of the x⁻¹ drift term.
    pub alpha_m1: f64,
    pub alpha_0: f64,
    pub alpha_1: f64,
    /// Coefficient of the superlinear x^ρ drift term.
    pub alpha_2: f64,
    /// Jump scale, h(x) = alpha_3 x.
    pub alpha_3: f64,
}

impl RegimeParams {
    /// Rejects negative or non-finite coefficients. Strict positivity is a
    /// model assumption and is reported by [`ModelSpec::validate_assumptions`].
    pub fn new(alpha_m1: f64, alpha_0: f64, alpha_1: f64, alpha_2: f64, alpha_3: f64) -> Result<Self> {
        let p = Self {
            alpha_m1,
            alpha_0,
            alpha_1,
            alpha_2,
            alpha_3,
        };
        for (name, v) in p.named() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidModel(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(p)
    }

    fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("alpha_m1", self.alpha_m1),
            ("alpha_0", self.alpha_0),
            ("alpha_1", self.alpha_1),
            ("alpha_2", self.alpha_2),
            ("alpha_3", self.alpha_3),
        ]
    }
}

/// The two-regime sigmoid-type volatility, evaluated exactly as
/// `c_i (1 + (e^y - e^-y)) / (e^y + e^-y)` for `y >= 0` and `c_i / 2` otherwise,
/// with `c_0 = 1/2`, `c_1 = 1/4`.
///
/// The ratio is computed as `c_i (1/(2 cosh y) + tanh y)`, which is the same
/// expression and does not overflow for large `y`.
///
/// # Panics
/// If `regime > 1`.
pub fn sigmoid_volatility(y: f64, regime: Regime) -> f64 {
    let c = match regime {
        0 => 0.5,
        1 => 0.25,
        _ => panic!("two-regime sigmoid volatility has no regime index {regime}"),
    };
    if y >= 0.0 {
        c * (0.5 / y.cosh() + y.tanh())
    } else {
        0.5 * c
    }
}

/// Supremum of [`sigmoid_volatility`] in the given regime. The maximum of
/// `1/(2 cosh y) + tanh y` sits at `sinh y = 2` and equals `sqrt(5)/2`.
pub fn sigmoid_volatility_sup(regime: Regime) -> f64 {
    let c = if regime == 0 { 0.5 } else { 0.25 };
    c * 5f64.sqrt() / 2.0
}

type VolFn = Arc<dyn Fn(f64, Regime) -> f64 + Send + Sync>;
type SegmentFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum VolatilityKind {
    /// Registered name `sigmoid_s5`.
    SigmoidTwoRegime,
    /// Registered name `constant`: one level per regime.
    Constant(Vec<f64>),
    /// Registered name `zero`.
    Zero,
    Custom(VolFn),
}

impl fmt::Debug for VolatilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SigmoidTwoRegime => write!(f, "SigmoidTwoRegime"),
            Self::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Self::Zero => write!(f, "Zero"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Volatility φ(y, i) of the delayed state together with its claimed uniform
/// bound σ.
#[derive(Clone, Debug)]
pub struct Volatility {
    kind: VolatilityKind,
    bound_sigma: f64,
}

impl Volatility {
    pub fn sigmoid_two_regime() -> Self {
        Self {
            kind: VolatilityKind::SigmoidTwoRegime,
            bound_sigma: sigmoid_volatility_sup(0),
        }
    }

    pub fn constant(levels: Vec<f64>) -> Self {
        let bound_sigma = levels.iter().cloned().fold(0.0, f64::max);
        Self {
            kind: VolatilityKind::Constant(levels),
            bound_sigma,
        }
    }

    pub fn zero() -> Self {
        Self {
            kind: VolatilityKind::Zero,
            bound_sigma: 0.0,
        }
    }

    pub fn custom<F>(f: F, bound_sigma: f64) -> Self
    where
        F: Fn(f64, Regime) -> f64 + Send + Sync + 'static,
    {
        Self {
            kind: VolatilityKind::Custom(Arc::new(f)),
            bound_sigma,
        }
    }

    /// Override the claimed bound σ. The claim is checked, not trusted, by
    /// [`ModelSpec::validate_assumptions`].
    pub fn with_bound(mut self, bound_sigma: f64) -> Self {
        self.bound_sigma = bound_sigma;
        self
    }

    pub fn by_name(name: &str, levels: Option<Vec<f64>>) -> Result<Self> {
        match name {
            "sigmoid_s5" => Ok(Self::sigmoid_two_regime()),
            "zero" => Ok(Self::zero()),
            "constant" => levels
                .map(Self::constant)
                .ok_or_else(|| Error::InvalidModel("constant volatility needs `levels`".into())),
            other => Err(Error::InvalidModel(format!(
                "unknown volatility `{other}` (expected sigmoid_s5, constant, zero)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            VolatilityKind::SigmoidTwoRegime => "sigmoid_s5",
            VolatilityKind::Constant(_) => "constant",
            VolatilityKind::Zero => "zero",
            VolatilityKind::Custom(_) => "custom",
        }
    }

    pub fn kind(&self) -> &VolatilityKind {
        &self.kind
    }

    pub fn bound_sigma(&self) -> f64 {
        self.bound_sigma
    }

    /// φ(y, i), extended to negative delayed values by φ(y, i) = φ(0, i).
    #[inline]
    pub fn eval(&self, y: f64, regime: Regime) -> f64 {
        let y = if y < 0.0 { 0.0 } else { y };
        match &self.kind {
            VolatilityKind::SigmoidTwoRegime => sigmoid_volatility(y, regime),
            VolatilityKind::Constant(levels) => levels[regime],
            VolatilityKind::Zero => 0.0,
            VolatilityKind::Custom(f) => f(y, regime),
        }
    }

    fn regimes_supported(&self) -> Option<usize> {
        match &self.kind {
            VolatilityKind::SigmoidTwoRegime => Some(2),
            VolatilityKind::Constant(levels) => Some(levels.len()),
            _ => None,
        }
    }
}

#[derive(Clone)]
pub enum SegmentShape {
    Constant(f64),
    /// Linear from `start` at t = -τ to `end` at t = 0.
    Linear { start: f64, end: f64 },
    Custom(SegmentFn),
}

impl fmt::Debug for SegmentShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Self::Linear { start, end } => f.debug_struct("Linear").field("start", start).field("end", end).finish(),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Initial data ξ on [-τ, 0] with its claimed Hölder constant and exponent.
#[derive(Clone, Debug)]
pub struct InitialSegment {
    pub shape: SegmentShape,
    pub holder_constant: f64,
    pub holder_exponent: f64,
}

impl InitialSegment {
    pub fn constant(value: f64) -> Self {
        Self {
            shape: SegmentShape::Constant(value),
            holder_constant: 1.0,
            holder_exponent: 1.0,
        }
    }

    pub fn linear(start: f64, end: f64, tau: f64) -> Self {
        Self {
            shape: SegmentShape::Linear { start, end },
            holder_constant: ((end - start) / tau).abs().max(f64::MIN_POSITIVE),
            holder_exponent: 1.0,
        }
    }

    pub fn custom<F>(f: F, holder_constant: f64, holder_exponent: f64) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            shape: SegmentShape::Custom(Arc::new(f)),
            holder_constant,
            holder_exponent,
        }
    }

    /// ξ(t) for t in [-τ, 0].
    pub fn eval(&self, t: f64, tau: f64) -> f64 {
        match &self.shape {
            SegmentShape::Constant(v) => *v,
            SegmentShape::Linear { start, end } => start + (end - start) * (t + tau) / tau,
            SegmentShape::Custom(f) => f(t),
        }
    }
}

/// Full parameterization of the SDDE.
///
/// All fields are plain data; call [`ModelSpec::check_structure`] after
/// assembling one by hand. The constructors in this crate already do.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub regimes: Vec<RegimeParams>,
    pub rho: f64,
    pub theta: f64,
    pub tau: f64,
    pub lambda: f64,
    pub volatility: Volatility,
    pub initial_segment: InitialSegment,
    pub initial_regime: Regime,
    pub include_inverse_drift: bool,
    pub generator: GeneratorMatrix,
}

impl ModelSpec {
    /// The two-regime worked example: ξ ≡ 0.02, r₀ = regime 1, Γ = [[-2, 2], [1, -1]],
    /// ρ = 2, θ = 5/4, sigmoid volatility. λ = 1 and τ = 1 are defaults, not
    /// values from the example.
    pub fn two_regime_example() -> Self {
        Self {
            regimes: vec![
                RegimeParams::new(0.3, 0.2, 0.1, 0.5, 1.0).unwrap(),
                RegimeParams::new(0.2, 0.3, 0.2, 0.6, 2.0).unwrap(),
            ],
            rho: 2.0,
            theta: 1.25,
            tau: 1.0,
            lambda: 1.0,
            volatility: Volatility::sigmoid_two_regime(),
            initial_segment: InitialSegment::constant(0.02),
            initial_regime: 0,
            include_inverse_drift: true,
            generator: GeneratorMatrix::new(vec![vec![-2.0, 2.0], vec![1.0, -1.0]]).unwrap(),
        }
    }

    pub fn num_regimes(&self) -> usize {
        self.regimes.len()
    }

    /// Hard structural requirements. Violations make simulation meaningless,
    /// so they are errors rather than report entries.
    pub fn check_structure(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::InvalidModel("at least one regime is required".into()));
        }
        let n = self.regimes.len();
        if self.generator.dim() != n {
            return Err(Error::InvalidModel(format!(
                "generator is {0}x{0} but there are {n} regimes",
                self.generator.dim()
            )));
        }
        if self.initial_regime >= n {
            return Err(Error::InvalidModel(format!(
                "initial regime {} outside 1..={n}",
                self.initial_regime + 1
            )));
        }
        if let Some(m) = self.volatility.regimes_supported() {
            if m < n {
                return Err(Error::InvalidModel(format!(
                    "volatility `{}` defines {m} regimes, model has {n}",
                    self.volatility.name()
                )));
            }
        }
        for (name, v) in [("rho", self.rho), ("theta", self.theta)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidModel(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidModel(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidModel(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// f(x, i). Fails only when the inverse term is enabled and x = 0.
    pub fn drift(&self, x: f64, regime: Regime) -> Result<f64> {
        if self.include_inverse_drift && x == 0.0 {
            return Err(Error::Domain("drift x⁻¹ term is undefined at x = 0".into()));
        }
        Ok(self.drift_unchecked(x, regime))
    }

    /// f(x, i) without the x = 0 check. `x^ρ` is `sign(x)|x|^ρ` for x < 0.
    #[inline]
    pub fn drift_unchecked(&self, x: f64, regime: Regime) -> f64 {
        let a = &self.regimes[regime];
        let power = x.signum() * x.abs().powf(self.rho);
        let mut v = -a.alpha_0 + a.alpha_1 * x - a.alpha_2 * power;
        if self.include_inverse_drift {
            v += a.alpha_m1 / x;
        }
        v
    }

    /// Derivative of f in x on x > 0.
    #[inline]
    pub(crate) fn drift_derivative(&self, x: f64, regime: Regime) -> f64 {
        let a = &self.regimes[regime];
        let mut d = a.alpha_1 - a.alpha_2 * self.rho * x.abs().powf(self.rho - 1.0);
        if self.include_inverse_drift {
            d -= a.alpha_m1 / (x * x);
        }
        d
    }

    /// g(x) = x^θ on x ≥ 0, and 0 for x < 0.
    #[inline]
    pub fn diffusion(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            x.powf(self.theta)
        }
    }

    /// h(x, i) = α₃(i) x on x ≥ 0, and 0 for x < 0.
    #[inline]
    pub fn jump(&self, x: f64, regime: Regime) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            self.regimes[regime].alpha_3 * x
        }
    }

    pub fn validate_assumptions(&self, opts: &ValidationOptions) -> ValidationReport {
        let mut checks = Vec::new();

        checks.push(match self.check_structure() {
            Ok(()) => Check::pass("structure", "regimes, generator, initial regime consistent"),
            Err(e) => {
                // Nothing below is safe to evaluate.
                checks.push(Check::fail("structure", e.to_string()));
                return ValidationReport { checks };
            }
        });

        let mut bad = Vec::new();
        for (i, a) in self.regimes.iter().enumerate() {
            let strict: &[(&str, f64)] = if self.include_inverse_drift {
                &[("alpha_m1", a.alpha_m1), ("alpha_0", a.alpha_0), ("alpha_1", a.alpha_1), ("alpha_2", a.alpha_2)]
            } else {
                &[("alpha_0", a.alpha_0), ("alpha_1", a.alpha_1), ("alpha_2", a.alpha_2)]
            };
            for (name, v) in strict {
                if *v <= 0.0 {
                    bad.push(format!("regime {}: {name} = {v}", i + 1));
                }
            }
        }
        checks.push(if bad.is_empty() {
            Check::pass("coefficient positivity", "all drift coefficients > 0")
        } else {
            Check::fail("coefficient positivity", bad.join("; "))
        });

        // Assumption: 1 + rho > 2 theta with rho, theta > 1.
        let growth = 1.0 + self.rho > 2.0 * self.theta && self.rho > 1.0 && self.theta > 1.0;
        checks.push(Check::new(
            "growth condition 1+rho > 2 theta, rho, theta > 1",
            growth,
            format!("1+rho = {}, 2 theta = {}", 1.0 + self.rho, 2.0 * self.theta),
        ));

        checks.push(self.check_volatility_bound(opts));
        checks.push(self.check_volatility_lipschitz(opts));
        checks.push(self.check_initial_segment(opts));

        ValidationReport { checks }
    }

    fn check_volatility_bound(&self, opts: &ValidationOptions) -> Check {
        let sigma = self.volatility.bound_sigma();
        let n = opts.grid_points.max(2);
        let (lo, hi) = (-opts.y_max / 10.0, opts.y_max);
        let mut worst = f64::NEG_INFINITY;
        let mut worst_at = (0.0, 0);
        let mut negative = None;
        for i in 0..self.num_regimes() {
            for j in 0..n {
                let y = lo + (hi - lo) * j as f64 / (n - 1) as f64;
                let v = self.volatility.eval(y, i);
                if !(v >= 0.0) && negative.is_none() {
                    negative = Some((y, i));
                }
                if v > worst || v.is_nan() {
                    worst = v;
                    worst_at = (y, i);
                }
            }
        }
        let name = "volatility bounded by sigma";
        if let Some((y, i)) = negative {
            return Check::fail(name, format!("phi({y}, {}) < 0 or NaN", i + 1));
        }
        if worst > sigma || worst.is_nan() {
            Check::fail(
                name,
                format!("phi({}, {}) = {worst} exceeds sigma = {sigma}", worst_at.0, worst_at.1 + 1),
            )
        } else {
            Check::pass(name, format!("max sampled phi = {worst:.6} <= sigma = {sigma:.6}"))
        }
    }

    fn check_volatility_lipschitz(&self, opts: &ValidationOptions) -> Check {
        let r = opts.lipschitz_radius;
        let n = opts.grid_points.max(2);
        let (lo, hi) = (1.0 / r, r);
        let mut l = 0.0f64;
        for i in 0..self.num_regimes() {
            let mut prev = (lo, self.volatility.eval(lo, i));
            for j in 1..n {
                let y = lo + (hi - lo) * j as f64 / (n - 1) as f64;
                let v = self.volatility.eval(y, i);
                l = l.max(((v - prev.1) / (y - prev.0)).abs());
                prev = (y, v);
            }
        }
        Check::new(
            "volatility locally Lipschitz",
            l.is_finite(),
            format!("sampled L_R = {l:.6} on [{lo}, {hi}]"),
        )
    }

    fn check_initial_segment(&self, opts: &ValidationOptions) -> Check {
        let name = "initial segment positive and Hoelder";
        let n = opts.grid_points.max(2);
        let tau = self.tau;
        let seg = &self.initial_segment;
        let ts: Vec<f64> = (0..n).map(|j| -tau + tau * j as f64 / (n - 1) as f64).collect();
        let vals: Vec<f64> = ts.iter().map(|&t| seg.eval(t, tau)).collect();
        if let Some(j) = vals.iter().position(|v| !(*v > 0.0)) {
            return Check::fail(name, format!("xi({}) = {} is not positive", ts[j], vals[j]));
        }
        if !(seg.holder_constant > 0.0 && seg.holder_exponent > 0.0 && seg.holder_exponent <= 1.0) {
            return Check::fail(
                name,
                format!(
                    "need K3 > 0 and exponent in (0, 1], got K3 = {}, exponent = {}",
                    seg.holder_constant, seg.holder_exponent
                ),
            );
        }
        // Pairs at dyadic strides: a heuristic, not a proof.
        let mut stride = 1;
        while stride < n {
            for j in 0..n - stride {
                let lhs = (vals[j + stride] - vals[j]).abs();
                let rhs = seg.holder_constant * (ts[j + stride] - ts[j]).abs().powf(seg.holder_exponent);
                if lhs > rhs * (1.0 + 1e-12) + 1e-15 {
                    return Check::fail(
                        name,
                        format!("|xi({}) - xi({})| = {lhs:e} > {rhs:e}", ts[j + stride], ts[j]),
                    );
                }
            }
            stride *= 2;
        }
        Check::pass(
            name,
            format!(
                "{n} grid points, K3 = {}, exponent = {}",
                seg.holder_constant, seg.holder_exponent
            ),
        )
    }

    /// Grid check of the one-sided growth bound
    /// `x f(x,i) + (p-1)/2 |phi(y,i) g(x)|^2 <= K4 (1 + x^2)`.
    ///
    /// The bound is judged to hold when the ratio's maximum over the x grid is
    /// finite and not attained at, or still rising toward, the upper grid edge.
    pub fn khasminskii_check(&self, p: f64, x_grid: &[f64], y_grid: &[f64]) -> KhasminskiiReport {
        let phi_sq_sup: Vec<f64> = (0..self.num_regimes())
            .map(|i| y_grid.iter().map(|&y| self.volatility.eval(y, i).powi(2)).fold(0.0, f64::max))
            .collect();
        let ratios: Vec<f64> = x_grid
            .iter()
            .map(|&x| {
                (0..self.num_regimes())
                    .map(|i| {
                        let g = self.diffusion(x);
                        (x * self.drift_unchecked(x, i) + 0.5 * (p - 1.0) * phi_sq_sup[i] * g * g) / (1.0 + x * x)
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let (argmax, k4) = ratios
            .iter()
            .cloned()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
        let last = ratios.len().saturating_sub(1);
        let rising_at_edge = last > 0 && ratios[last] > ratios[last - 1];
        KhasminskiiReport {
            holds: k4.is_finite() && ratios.iter().all(|r| r.is_finite()) && argmax != last && !rising_at_edge,
            k4,
            argmax_x: x_grid.get(argmax).copied().unwrap_or(f64::NAN),
        }
    }

    /// The ratio in [`Self::khasminskii_check`] at a single point.
    pub fn khasminskii_integrand(&self, x: f64, y: f64, regime: Regime, p: f64) -> f64 {
        let pg = self.volatility.eval(y, regime) * self.diffusion(x);
        x * self.drift_unchecked(x, regime) + 0.5 * (p - 1.0) * pg * pg
    }
}

#[derive(Clone, Debug)]
pub struct ValidationOptions {
    pub grid_points: usize,
    /// Upper end of the y grid for the volatility bound.
    pub y_max: f64,
    /// R in the local Lipschitz check on [1/R, R].
    pub lipschitz_radius: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            grid_points: 10_000,
            y_max: 50.0,
            lipschitz_radius: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
    pub fn pass(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::new(name, true, detail)
    }
    pub fn fail(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::new(name, false, detail)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name_prefix: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name.starts_with(name_prefix))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KhasminskiiReport {
    pub holds: bool,
    /// Largest sampled ratio, the fitted K4.
    pub k4: f64,
    pub argmax_x: f64,
}

/// Log-spaced grid of `n` points on [lo, hi], lo > 0.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|j| (a + (b - a) * j as f64 / (n - 1).max(1) as f64).exp()).collect()
}

pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1).max(1) as f64).collect()
}
