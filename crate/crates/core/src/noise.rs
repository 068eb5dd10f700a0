//! Brownian, Poisson and regime randomness for one path.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::chain::{sample_chain_path_with, TransitionMatrix};
use crate::error::{Error, Result};
use crate::model::Regime;
use crate::rng::{Channel, StreamKey};

/// Increments on the grid `t_k = kΔ`, `k = 0..K`.
///
/// `brownian[k]` and `poisson[k]` drive the step from `t_k` to `t_{k+1}`;
/// `regimes[k]` is the chain state at `t_k` and has `K + 1` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseIncrements {
    pub delta: f64,
    pub brownian: Vec<f64>,
    pub poisson: Vec<u32>,
    pub regimes: Vec<Regime>,
}

impl NoiseIncrements {
    pub fn num_steps(&self) -> usize {
        self.brownian.len()
    }

    pub fn check(&self) -> Result<()> {
        let k = self.brownian.len();
        if self.poisson.len() != k || self.regimes.len() != k + 1 {
            return Err(Error::Grid(format!(
                "inconsistent noise lengths: {} brownian, {} poisson, {} regimes",
                k,
                self.poisson.len(),
                self.regimes.len()
            )));
        }
        Ok(())
    }

    /// Noise-free increments with the chain frozen in `regime`.
    pub fn quiet(delta: f64, num_steps: usize, regime: Regime) -> Self {
        Self {
            delta,
            brownian: vec![0.0; num_steps],
            poisson: vec![0; num_steps],
            regimes: vec![regime; num_steps + 1],
        }
    }
}

/// Draws `ΔB_k ~ N(0, Δ)`, `ΔN_k ~ Poisson(λΔ)` and the chain path, each from
/// its own stream of `key`.
pub fn make_noise(
    delta: f64,
    num_steps: usize,
    lambda: f64,
    transition: &TransitionMatrix,
    r0: Regime,
    key: StreamKey,
) -> Result<NoiseIncrements> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("step must be > 0, got {delta}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("jump intensity must be >= 0, got {lambda}")));
    }
    if (transition.step() - delta).abs() > 1e-12 * delta {
        return Err(Error::Grid(format!(
            "transition matrix built for step {} used with step {delta}",
            transition.step()
        )));
    }
    let sd = delta.sqrt();
    let mut rng = key.rng(Channel::Brownian);
    let brownian = (0..num_steps)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let poisson = if lambda == 0.0 {
        vec![0; num_steps]
    } else {
        let dist = Poisson::new(lambda * delta).map_err(|e| Error::Domain(e.to_string()))?;
        let mut rng = key.rng(Channel::Poisson);
        (0..num_steps).map(|_| dist.sample(&mut rng) as u32).collect()
    };

    let mut rng = key.rng(Channel::Chain);
    let regimes = sample_chain_path_with(transition, r0, num_steps, &mut rng);
    Ok(NoiseIncrements {
        delta,
        brownian,
        poisson,
        regimes,
    })
}

/// Block sums of the fine increments and the fine chain sampled at coarse
/// nodes; the coarse step is `factor` fine steps.
pub fn coarsen_noise(fine: &NoiseIncrements, factor: usize) -> Result<NoiseIncrements> {
    fine.check()?;
    if factor == 0 || !fine.num_steps().is_multiple_of(factor) {
        return Err(Error::Grid(format!(
            "coarsening factor {factor} does not divide {} fine steps",
            fine.num_steps()
        )));
    }
    if factor == 1 {
        return Ok(fine.clone());
    }
    let brownian = fine.brownian.chunks(factor).map(|c| c.iter().sum()).collect();
    let poisson = fine.poisson.chunks(factor).map(|c| c.iter().sum()).collect();
    let regimes = fine.regimes.iter().step_by(factor).copied().collect();
    Ok(NoiseIncrements {
        delta: fine.delta * factor as f64,
        brownian,
        poisson,
        regimes,
    })
}

const RECORD_MAGIC: &[u8; 4] = b"TEMN";
const RECORD_VERSION: u32 = 1;

/// Self-contained replay record for one path.
///
/// Little-endian layout:
///
/// | field        | type              |
/// |--------------|-------------------|
/// | magic        | `b"TEMN"`         |
/// | version      | u32 (= 1)         |
/// | seed         | u64               |
/// | path_index   | u64               |
/// | delta        | f64               |
/// | delay_steps  | u64 (M)           |
/// | lambda       | f64               |
/// | num_steps    | u64 (K)           |
/// | brownian     | K × f64           |
/// | poisson      | K × u32           |
/// | regimes      | (K+1) × u32, 0-based |
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRecord {
    pub seed: u64,
    pub path_index: u64,
    pub delay_steps: u64,
    pub lambda: f64,
    pub noise: NoiseIncrements,
}

impl NoiseRecord {
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = &self.noise;
        w.write_all(RECORD_MAGIC)?;
        w.write_all(&RECORD_VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.path_index.to_le_bytes())?;
        w.write_all(&n.delta.to_le_bytes())?;
        w.write_all(&self.delay_steps.to_le_bytes())?;
        w.write_all(&self.lambda.to_le_bytes())?;
        w.write_all(&(n.brownian.len() as u64).to_le_bytes())?;
        for v in &n.brownian {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &n.poisson {
            w.write_all(&v.to_le_bytes())?;
        }
        for &r in &n.regimes {
            w.write_all(&(r as u32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> std::io::Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b)?;
            Ok(b)
        }
        if &take::<4, _>(&mut r)? != RECORD_MAGIC {
            return Err(Error::Config("not a noise record (bad magic)".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != RECORD_VERSION {
            return Err(Error::Config(format!("unsupported noise record version {version}")));
        }
        let seed = u64::from_le_bytes(take(&mut r)?);
        let path_index = u64::from_le_bytes(take(&mut r)?);
        let delta = f64::from_le_bytes(take(&mut r)?);
        let delay_steps = u64::from_le_bytes(take(&mut r)?);
        let lambda = f64::from_le_bytes(take(&mut r)?);
        let k = u64::from_le_bytes(take(&mut r)?) as usize;
        let mut brownian = Vec::with_capacity(k);
        for _ in 0..k {
            brownian.push(f64::from_le_bytes(take(&mut r)?));
        }
        let mut poisson = Vec::with_capacity(k);
        for _ in 0..k {
            poisson.push(u32::from_le_bytes(take(&mut r)?));
        }
        let mut regimes = Vec::with_capacity(k + 1);
        for _ in 0..=k {
            regimes.push(u32::from_le_bytes(take(&mut r)?) as Regime);
        }
        Ok(Self {
            seed,
            path_index,
            delay_steps,
            lambda,
            noise: NoiseIncrements {
                delta,
                brownian,
                poisson,
                regimes,
            },
        })
    }
}
