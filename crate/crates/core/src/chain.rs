//! Finite-state Markov chain: generator validation, one-step transition
//! matrix `P(Δ) = exp(ΔΓ)`, and the cumulative-sum sampler on the step grid.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Regime;

const GENERATOR_TOL: f64 = 1e-10;

/// Generator Γ: nonnegative off-diagonal rates, rows summing to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorMatrix {
    entries: DMatrix<f64>,
}

impl GeneratorMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidGenerator("empty matrix".into()));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::InvalidGenerator(format!("row {} has {} entries, expected {n}", bad + 1, rows[bad].len())));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_row_major(n, &flat)
    }

    pub fn from_row_major(n: usize, flat: &[f64]) -> Result<Self> {
        if n == 0 || flat.len() != n * n {
            return Err(Error::InvalidGenerator(format!(
                "expected {} row-major entries for a {n}x{n} matrix, got {}",
                n * n,
                flat.len()
            )));
        }
        let entries = DMatrix::from_row_slice(n, n, flat);
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let v = entries[(i, j)];
                if !v.is_finite() {
                    return Err(Error::InvalidGenerator(format!("entry ({}, {}) is not finite", i + 1, j + 1)));
                }
                if i != j && v < -GENERATOR_TOL {
                    return Err(Error::InvalidGenerator(format!("negative rate {v} at ({}, {})", i + 1, j + 1)));
                }
                sum += v;
            }
            if sum.abs() > GENERATOR_TOL {
                return Err(Error::InvalidGenerator(format!("row {} sums to {sum}, not 0", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn rate(&self, i: Regime, j: Regime) -> f64 {
        self.entries[(i, j)]
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|ij| self.entries[ij]).collect()
    }

    /// Every state reachable from every other through positive rates.
    pub fn is_irreducible(&self) -> bool {
        let n = self.dim();
        (0..n).all(|start| {
            let mut seen = vec![false; n];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                for (j, s) in seen.iter_mut().enumerate() {
                    if !*s && i != j && self.entries[(i, j)] > 0.0 {
                        *s = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        })
    }
}

/// One-step transition probabilities `P(Δ)` for a fixed step.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    entries: DMatrix<f64>,
    step: f64,
}

impl TransitionMatrix {
    pub fn identity(n: usize, step: f64) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
            step,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn prob(&self, i: Regime, j: Regime) -> f64 {
        self.entries[(i, j)]
    }
}

/// `exp(ΔΓ)` by scaling and squaring with an 18-term Taylor series.
///
/// The argument is scaled by `2^-s` until its infinity norm is at most 1/2.
/// Rounding can leave entries around -1e-17; those are clamped to zero and each
/// row is renormalized so the result is exactly stochastic to machine precision.
pub fn matrix_exponential(generator: &GeneratorMatrix, delta: f64) -> Result<TransitionMatrix> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Domain(format!("step must be > 0, got {delta}")));
    }
    let n = generator.dim();
    let a = generator.entries() * delta;
    let norm = (0..n).map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm > 0.5 {
        scaled_norm /= 2.0;
        squarings += 1;
    }
    let a = a / 2f64.powi(squarings as i32);

    const TERMS: usize = 18;
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=TERMS {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }

    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            if sum[(i, j)] < 0.0 {
                sum[(i, j)] = 0.0;
            }
            row_sum += sum[(i, j)];
        }
        for j in 0..n {
            sum[(i, j)] /= row_sum;
        }
    }
    Ok(TransitionMatrix { entries: sum, step: delta })
}

/// The smallest state `j` whose cumulative row probability strictly exceeds
/// `u`; the last state when `u` reaches the cumulative sum through `N-1`.
#[inline]
pub fn sample_chain_step(current: Regime, p: &TransitionMatrix, u: f64) -> Regime {
    let n = p.dim();
    let mut cum = 0.0;
    for j in 0..n - 1 {
        cum += p.entries[(current, j)];
        if u < cum {
            return j;
        }
    }
    n - 1
}

/// Chain trajectory `r_0 .. r_num_steps` on the grid `kΔ` using precomputed `P(Δ)`.
pub fn sample_chain_path_with<R: Rng + ?Sized>(
    p: &TransitionMatrix,
    r0: Regime,
    num_steps: usize,
    rng: &mut R,
) -> Vec<Regime> {
    let mut path = Vec::with_capacity(num_steps + 1);
    let mut r = r0;
    path.push(r);
    for _ in 0..num_steps {
        r = sample_chain_step(r, p, rng.random::<f64>());
        path.push(r);
    }
    path
}

pub fn sample_chain_path<R: Rng + ?Sized>(
    generator: &GeneratorMatrix,
    r0: Regime,
    delta: f64,
    num_steps: usize,
    rng: &mut R,
) -> Result<Vec<Regime>> {
    let p = matrix_exponential(generator, delta)?;
    Ok(sample_chain_path_with(&p, r0, num_steps, rng))
}

/// π with πΓ = 0 and Σπ = 1, for an irreducible generator.
pub fn stationary_distribution(generator: &GeneratorMatrix) -> Result<Vec<f64>> {
    let n = generator.dim();
    if !generator.is_irreducible() {
        return Err(Error::Singular("generator is reducible; stationary law is not unique".into()));
    }
    let mut system = generator.entries().transpose();
    for j in 0..n {
        system[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("linear system for the stationary law is singular".into()))?;
    Ok(pi.iter().copied().collect())
}

/// CSV with columns `step,time,state`, states 1-based.
pub fn write_regime_csv<W: Write>(mut w: W, regimes: &[Regime], delta: f64) -> std::io::Result<()> {
    writeln!(w, "step,time,state")?;
    for (k, r) in regimes.iter().enumerate() {
        writeln!(w, "{k},{},{}", k as f64 * delta, r + 1)?;
    }
    Ok(())
}
