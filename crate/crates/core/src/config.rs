//! TOML run configuration.
//!
//! Only `model.rho`, `model.theta`, `model.regimes` and `model.generator` are
//! required; everything else has a default. [`RunConfig::resolved_toml`]
//! writes the configuration back out with every default filled in.

use serde::{Deserialize, Serialize};

use crate::chain::GeneratorMatrix;
use crate::error::{Error, Result};
use crate::model::{InitialSegment, ModelSpec, RegimeParams, Volatility};
use crate::scheme::Grid;
use crate::truncation::{default_mu_for, PowerMu, TruncationPolicy};

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub truncation: TruncationConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub rho: f64,
    pub theta: f64,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "yes")]
    pub include_inverse_drift: bool,
    /// 1-based.
    #[serde(default = "first")]
    pub initial_regime: usize,
    /// Row-major N×N.
    pub generator: Vec<f64>,
    #[serde(default)]
    pub volatility: VolatilityConfig,
    #[serde(default)]
    pub initial_segment: SegmentConfig,
    pub regimes: Vec<RegimeConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub alpha_m1: f64,
    pub alpha_0: f64,
    pub alpha_1: f64,
    pub alpha_2: f64,
    pub alpha_3: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VolatilityConfig {
    /// `sigmoid_s5`, `constant` or `zero`.
    pub kind: String,
    /// Per-regime levels for `constant`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<f64>,
    /// Overrides the kind's own bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_sigma: Option<f64>,
}

impl Default for VolatilityConfig {
    fn default() -> Self {
        Self {
            kind: "sigmoid_s5".into(),
            levels: Vec::new(),
            bound_sigma: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentConfig {
    Constant {
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        holder_constant: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        holder_exponent: Option<f64>,
    },
    Linear {
        start: f64,
        end: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        holder_constant: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        holder_exponent: Option<f64>,
    },
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self::Constant {
            value: 0.02,
            holder_constant: None,
            holder_exponent: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    /// q in `psi(Δ) = Δ^-q`.
    pub psi_exponent: f64,
    /// `fitted` or `quadratic3` (`mu(u) = 3u²`).
    pub mu: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_star: Option<f64>,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            psi_exponent: 0.25,
            mu: "fitted".into(),
            delta_star: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub delta: f64,
    pub horizon: f64,
    pub num_paths: u64,
    pub seed: u64,
    /// Worker threads; 0 is the machine's parallelism. Never affects results,
    /// so it is not echoed.
    #[serde(default, skip_serializing)]
    pub threads: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            horizon: 2.0,
            num_paths: 1000,
            seed: 1,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub strike: f64,
    pub barrier: f64,
    /// Coarse ladder for `converge`.
    pub deltas: Vec<f64>,
    pub reference_delta: f64,
    pub p: f64,
    /// Steps for `compare-schemes`.
    pub compare_deltas: Vec<f64>,
    /// Moment order for moment profiles.
    pub moment_p: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strike: 0.7,
            barrier: 1.5,
            deltas: (7..=11).map(|e| 2f64.powi(-e)).collect(),
            reference_delta: 2f64.powi(-14),
            p: 2.0,
            compare_deltas: vec![1e-3, 2.5e-4],
            moment_p: 4.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn first() -> usize {
    1
}

/// Command-line overrides; `None` keeps the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub no_inverse_drift: bool,
    pub psi_exponent: Option<f64>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().trim().to_string();
            if path == "." || path.is_empty() {
                Error::Config(msg)
            } else {
                Error::Config(format!("{path}: {msg}"))
            }
        })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// The worked two-regime example with theory defaults for truncation.
    pub fn two_regime_example() -> Self {
        let spec = ModelSpec::two_regime_example();
        Self {
            model: ModelConfig {
                rho: spec.rho,
                theta: spec.theta,
                tau: spec.tau,
                lambda: spec.lambda,
                include_inverse_drift: true,
                initial_regime: 1,
                generator: spec.generator.to_row_major(),
                volatility: VolatilityConfig::default(),
                initial_segment: SegmentConfig::default(),
                regimes: spec
                    .regimes
                    .iter()
                    .map(|r| RegimeConfig {
                        alpha_m1: r.alpha_m1,
                        alpha_0: r.alpha_0,
                        alpha_1: r.alpha_1,
                        alpha_2: r.alpha_2,
                        alpha_3: r.alpha_3,
                    })
                    .collect(),
            },
            truncation: TruncationConfig::default(),
            simulation: SimulationConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.simulation.seed = s;
        }
        if let Some(t) = o.threads {
            self.simulation.threads = t;
        }
        if o.no_inverse_drift {
            self.model.include_inverse_drift = false;
        }
        if let Some(q) = o.psi_exponent {
            self.truncation.psi_exponent = q;
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let n = m.regimes.len();
        if n == 0 {
            return Err(Error::Config("model.regimes: at least one regime is required".into()));
        }
        let regimes = m
            .regimes
            .iter()
            .enumerate()
            .map(|(i, r)| {
                RegimeParams::new(r.alpha_m1, r.alpha_0, r.alpha_1, r.alpha_2, r.alpha_3)
                    .map_err(|e| Error::Config(format!("model.regimes[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if m.generator.len() != n * n {
            return Err(Error::Config(format!(
                "model.generator: expected {} entries for {n} regimes, got {}",
                n * n,
                m.generator.len()
            )));
        }
        let generator = GeneratorMatrix::from_row_major(n, &m.generator)
            .map_err(|e| Error::Config(format!("model.generator: {e}")))?;
        if m.initial_regime == 0 || m.initial_regime > n {
            return Err(Error::Config(format!(
                "model.initial_regime: must be in 1..={n}, got {}",
                m.initial_regime
            )));
        }
        let levels = (!m.volatility.levels.is_empty()).then(|| m.volatility.levels.clone());
        let mut volatility = Volatility::by_name(&m.volatility.kind, levels)
            .map_err(|e| Error::Config(format!("model.volatility: {e}")))?;
        if let Some(b) = m.volatility.bound_sigma {
            volatility = volatility.with_bound(b);
        }
        let initial_segment = match m.initial_segment {
            SegmentConfig::Constant {
                value,
                holder_constant,
                holder_exponent,
            } => with_holder(InitialSegment::constant(value), holder_constant, holder_exponent),
            SegmentConfig::Linear {
                start,
                end,
                holder_constant,
                holder_exponent,
            } => with_holder(InitialSegment::linear(start, end, m.tau), holder_constant, holder_exponent),
        };
        let spec = ModelSpec {
            regimes,
            rho: m.rho,
            theta: m.theta,
            tau: m.tau,
            lambda: m.lambda,
            volatility,
            initial_segment,
            initial_regime: m.initial_regime - 1,
            include_inverse_drift: m.include_inverse_drift,
            generator,
        };
        spec.check_structure().map_err(|e| Error::Config(format!("model: {e}")))?;
        Ok(spec)
    }

    pub fn mu(&self, spec: &ModelSpec) -> Result<PowerMu> {
        match self.truncation.mu.as_str() {
            "fitted" => default_mu_for(spec),
            "quadratic3" => Ok(PowerMu::QUADRATIC3),
            other => Err(Error::Config(format!(
                "truncation.mu: unknown preset {other:?} (expected \"fitted\" or \"quadratic3\")"
            ))),
        }
    }

    pub fn policy(&self, spec: &ModelSpec) -> Result<TruncationPolicy> {
        TruncationPolicy::new(spec, self.mu(spec)?, self.truncation.psi_exponent, self.truncation.delta_star)
    }

    pub fn grid(&self, spec: &ModelSpec) -> Result<Grid> {
        Grid::snap(spec.tau, self.simulation.delta, self.simulation.horizon)
    }

    /// The configuration with defaults materialized, as TOML.
    pub fn resolved_toml(&self) -> String {
        let mut resolved = self.clone();
        if resolved.model.volatility.bound_sigma.is_none() {
            if let Ok(spec) = self.model_spec() {
                resolved.model.volatility.bound_sigma = Some(spec.volatility.bound_sigma());
            }
        }
        if let Ok(spec) = self.model_spec() {
            let seg = &mut resolved.model.initial_segment;
            let (SegmentConfig::Constant {
                holder_constant,
                holder_exponent,
                ..
            }
            | SegmentConfig::Linear {
                holder_constant,
                holder_exponent,
                ..
            }) = seg;
            holder_constant.get_or_insert(spec.initial_segment.holder_constant);
            holder_exponent.get_or_insert(spec.initial_segment.holder_exponent);
        }
        toml::to_string(&resolved).expect("config serializes")
    }
}

fn with_holder(mut seg: InitialSegment, c: Option<f64>, e: Option<f64>) -> InitialSegment {
    if let Some(c) = c {
        seg.holder_constant = c;
    }
    if let Some(e) = e {
        seg.holder_exponent = e;
    }
    seg
}
