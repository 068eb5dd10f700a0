//! Truncation machinery for the explicit scheme.
//!
//! A strictly increasing `mu` dominates `sup_{1/r <= x <= r} |f(x,i)| ∨ g(x)`.
//! With `psi(Δ) = Δ^-q`, the state is clamped into the band
//! `[1/mu⁻¹(psi(Δ)), mu⁻¹(psi(Δ))]` before `f` and `g` are evaluated, so both
//! truncated coefficients are bounded by `psi(Δ)`.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{log_grid, ModelSpec, Regime};

/// `mu(u) = scale * u^exponent`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerMu {
    pub scale: f64,
    pub exponent: f64,
}

impl PowerMu {
    /// `mu(u) = 3u²`, the hand-derived majorant for the two-regime example.
    pub const QUADRATIC3: PowerMu = PowerMu {
        scale: 3.0,
        exponent: 2.0,
    };

    pub fn eval(&self, r: f64) -> f64 {
        self.scale * r.powf(self.exponent)
    }

    pub fn inverse(&self, u: f64) -> f64 {
        (u / self.scale).powf(1.0 / self.exponent)
    }
}

/// Largest `r` at which the domination condition is grid-checked.
const MU_CHECK_MAX_R: f64 = 1e4;
const MU_CHECK_POINTS: usize = 4000;
const FIT_SAFETY: f64 = 1.05;

/// Running sup of `max_i |f(x,i)| ∨ g(x)` over `[1/r, r]` for `r` on a log grid.
fn coefficient_envelope(spec: &ModelSpec, r_max: f64, n: usize) -> Vec<(f64, f64)> {
    let ln_max = r_max.ln();
    let value = |x: f64| {
        (0..spec.num_regimes())
            .map(|i| spec.drift_unchecked(x, i).abs())
            .fold(spec.diffusion(x), f64::max)
    };
    let mut sup = value(1.0);
    let mut out = Vec::with_capacity(n + 1);
    out.push((1.0, sup));
    for k in 1..=n {
        let r = (ln_max * k as f64 / n as f64).exp();
        sup = sup.max(value(r)).max(value(1.0 / r));
        out.push((r, sup));
    }
    out
}

/// Grid check that `mu(r) >= sup_{1/r <= x <= r}(|f| ∨ g)` for `1 <= r <= r_max`.
pub fn verify_mu(spec: &ModelSpec, mu: &PowerMu, r_max: f64) -> Result<()> {
    for (r, sup) in coefficient_envelope(spec, r_max.max(MU_CHECK_MAX_R), MU_CHECK_POINTS) {
        if !(mu.eval(r) >= sup) {
            return Err(Error::Truncation(format!(
                "mu({r}) = {} does not dominate sup |f| ∨ g = {sup}",
                mu.eval(r)
            )));
        }
    }
    Ok(())
}

/// Power-law `mu(u) = C u^(max(rho, theta, 1) + 1)`; `C` is the grid maximum of
/// the envelope over `u^exponent`, padded by 5%, then re-verified.
pub fn default_mu_for(spec: &ModelSpec) -> Result<PowerMu> {
    spec.check_structure()?;
    let exponent = spec.rho.max(spec.theta).max(1.0) + 1.0;
    let scale = coefficient_envelope(spec, MU_CHECK_MAX_R, MU_CHECK_POINTS)
        .into_iter()
        .map(|(r, sup)| sup / r.powf(exponent))
        .fold(0.0, f64::max)
        * FIT_SAFETY;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Truncation(format!("could not fit mu: constant = {scale}")));
    }
    let mu = PowerMu { scale, exponent };
    verify_mu(spec, &mu, MU_CHECK_MAX_R)?;
    Ok(mu)
}

/// `Δ^-q`.
pub fn psi(delta: f64, psi_exponent: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("psi needs a step > 0, got {delta}")));
    }
    Ok(delta.powf(-psi_exponent))
}

/// Whether `Δ^(1/4) psi(Δ) <= 1`, with a relative slack of 1e-12 for rounding.
pub fn rate_condition_holds(delta: f64, psi_exponent: f64) -> bool {
    delta.powf(0.25) * delta.powf(-psi_exponent) <= 1.0 + 1e-12
}

const DELTA_STAR_FLOOR: f64 = 1e-12;
const DELTA_STAR_RESOLUTION: f64 = 1e-6;
const POSITIVITY_POINTS: usize = 2000;

/// Largest `Δ* in (0, 1)` with `mu⁻¹(psi(Δ*)) > 1` and, when the inverse drift
/// term is present, `f(x, i) > 0` on a dense grid of `x in (0, Δ*)`.
///
/// Bisection on the log scale; both conditions only get easier as Δ shrinks.
pub fn delta_star_search(spec: &ModelSpec, mu: &PowerMu, psi_exponent: f64) -> Result<f64> {
    let admissible = |delta: f64| -> bool {
        if !(mu.inverse(delta.powf(-psi_exponent)) > 1.0) {
            return false;
        }
        if spec.include_inverse_drift {
            let xs = log_grid(delta * 1e-9, delta * (1.0 - 1e-9), POSITIVITY_POINTS);
            (0..spec.num_regimes()).all(|i| xs.iter().all(|&x| spec.drift_unchecked(x, i) > 0.0))
        } else {
            true
        }
    };
    let mut lo = DELTA_STAR_FLOOR;
    if !admissible(lo) {
        return Err(Error::Truncation(format!("no admissible step-size bound above {DELTA_STAR_FLOOR}")));
    }
    let mut hi = 1.0 - 1e-9;
    if admissible(hi) {
        return Ok(hi);
    }
    while hi - lo > DELTA_STAR_RESOLUTION * hi {
        let mid = (lo * hi).sqrt();
        if admissible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncationPolicy {
    mu: PowerMu,
    psi_exponent: f64,
    delta_star: f64,
    warnings: Vec<String>,
}

impl TruncationPolicy {
    /// Verifies the domination condition for `mu`, then either searches for
    /// `Δ*` or checks the supplied override against `mu⁻¹(psi(Δ*)) > 1`.
    pub fn new(spec: &ModelSpec, mu: PowerMu, psi_exponent: f64, delta_star: Option<f64>) -> Result<Self> {
        spec.check_structure()?;
        if !(psi_exponent.is_finite() && psi_exponent > 0.0) {
            return Err(Error::Truncation(format!("psi exponent must be > 0, got {psi_exponent}")));
        }
        if !(mu.scale > 0.0 && mu.exponent > 0.0) {
            return Err(Error::Truncation(format!("mu must be increasing, got {mu:?}")));
        }
        verify_mu(spec, &mu, MU_CHECK_MAX_R)?;
        let delta_star = match delta_star {
            Some(d) => {
                if !(d > 0.0 && d < 1.0) {
                    return Err(Error::Truncation(format!("delta_star must lie in (0, 1), got {d}")));
                }
                if !(mu.inverse(psi(d, psi_exponent)?) > 1.0) {
                    return Err(Error::Truncation(format!(
                        "delta_star = {d} gives mu⁻¹(psi) = {} <= 1",
                        mu.inverse(psi(d, psi_exponent)?)
                    )));
                }
                d
            }
            None => delta_star_search(spec, &mu, psi_exponent)?,
        };
        let mut warnings = Vec::new();
        if psi_exponent > 0.25 {
            let w = format!(
                "psi(Δ) = Δ^-{psi_exponent} violates Δ^(1/4) psi(Δ) <= 1 for every Δ < 1 \
                 (e.g. {:.4} at Δ = 1e-3)",
                1e-3f64.powf(0.25 - psi_exponent)
            );
            log::warn!("{w}");
            warnings.push(w);
        }
        Ok(Self {
            mu,
            psi_exponent,
            delta_star,
            warnings,
        })
    }

    pub fn mu(&self) -> PowerMu {
        self.mu
    }

    pub fn psi_exponent(&self) -> f64 {
        self.psi_exponent
    }

    pub fn delta_star(&self) -> f64 {
        self.delta_star
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn psi(&self, delta: f64) -> Result<f64> {
        psi(delta, self.psi_exponent)
    }

    /// Clamping band for step `delta`, which must lie in `(0, Δ*]`.
    pub fn band(&self, delta: f64) -> Result<Band> {
        if !(delta > 0.0) {
            return Err(Error::Domain(format!("step must be > 0, got {delta}")));
        }
        if delta > self.delta_star * (1.0 + 1e-12) {
            return Err(Error::Truncation(format!(
                "step {delta} exceeds the admissible bound Δ* = {}",
                self.delta_star
            )));
        }
        Ok(self.band_unchecked(delta))
    }

    /// Band without the `Δ <= Δ*` check. The band may be empty or inverted.
    pub fn band_unchecked(&self, delta: f64) -> Band {
        let psi = delta.powf(-self.psi_exponent);
        let upper = self.mu.inverse(psi);
        Band {
            lower: 1.0 / upper,
            upper,
            psi,
        }
    }

    pub fn truncated_drift(&self, spec: &ModelSpec, x: f64, regime: Regime, delta: f64) -> Result<f64> {
        Ok(self.band(delta)?.drift(spec, x, regime))
    }

    pub fn truncated_diffusion(&self, spec: &ModelSpec, x: f64, delta: f64) -> Result<f64> {
        Ok(self.band(delta)?.diffusion(spec, x))
    }

    /// Band endpoints and the two bound checks for each step in `deltas`.
    pub fn audit(&self, spec: &ModelSpec, deltas: &[f64]) -> PolicyAudit {
        let rows = deltas
            .iter()
            .map(|&delta| {
                let band = self.band_unchecked(delta);
                let xs: Vec<f64> = (0..2001)
                    .map(|j| -2.0 * band.upper + 4.0 * band.upper * j as f64 / 2000.0)
                    .chain([band.lower, band.upper])
                    .collect();
                let coefficient_bound = band.upper > 1.0
                    && (0..spec.num_regimes()).all(|i| {
                        xs.iter()
                            .all(|&x| band.drift(spec, x, i).abs().max(band.diffusion(spec, x)) <= band.psi)
                    });
                AuditRow {
                    delta,
                    psi: band.psi,
                    lower: band.lower,
                    upper: band.upper,
                    admissible: delta <= self.delta_star,
                    rate_condition: rate_condition_holds(delta, self.psi_exponent),
                    coefficient_bound,
                }
            })
            .collect();
        PolicyAudit {
            mu: self.mu,
            psi_exponent: self.psi_exponent,
            delta_star: self.delta_star,
            rows,
        }
    }
}

/// Truncation band for one step size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
    pub psi: f64,
}

impl Band {
    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        // written as max(lower, min(x, upper)) so the lower edge wins if they cross
        self.lower.max(x.min(self.upper))
    }

    /// `f_Δ(x, i) = f(1/mu⁻¹(psi) ∨ (x ∧ mu⁻¹(psi)), i)`.
    #[inline]
    pub fn drift(&self, spec: &ModelSpec, x: f64, regime: Regime) -> f64 {
        spec.drift_unchecked(self.clamp(x), regime)
    }

    /// `g_Δ(x) = g(x ∧ mu⁻¹(psi))` for `x >= 0`, else 0.
    #[inline]
    pub fn diffusion(&self, spec: &ModelSpec, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            spec.diffusion(x.min(self.upper))
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lower..=self.upper).contains(&x)
    }
}

#[derive(Clone, Debug)]
pub struct AuditRow {
    pub delta: f64,
    pub psi: f64,
    pub lower: f64,
    pub upper: f64,
    pub admissible: bool,
    pub rate_condition: bool,
    pub coefficient_bound: bool,
}

#[derive(Clone, Debug)]
pub struct PolicyAudit {
    pub mu: PowerMu,
    pub psi_exponent: f64,
    pub delta_star: f64,
    pub rows: Vec<AuditRow>,
}

impl PolicyAudit {
    /// The hard checks; the rate condition is advisory.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| !r.admissible || r.coefficient_bound)
    }
}

impl fmt::Display for PolicyAudit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "mu(u) = {} u^{}, psi(delta) = delta^-{}, delta* = {:.6e}",
            self.mu.scale, self.mu.exponent, self.psi_exponent, self.delta_star
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "delta = {:.3e}: psi = {:.6}, band = [{:.6}, {:.6}], admissible = {}, \
                 [{}] rate condition, [{}] coefficient bound",
                r.delta,
                r.psi,
                r.lower,
                r.upper,
                r.admissible,
                if r.rate_condition { "PASS" } else { "WARN" },
                if r.coefficient_bound { "PASS" } else { "FAIL" },
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linear_grid, RegimeParams};
    use approx::assert_abs_diff_eq;

    fn example() -> ModelSpec {
        ModelSpec::two_regime_example()
    }

    fn preset_policy(spec: &ModelSpec) -> TruncationPolicy {
        TruncationPolicy::new(spec, PowerMu::QUADRATIC3, 2.0 / 3.0, None).unwrap()
    }

    #[test]
    fn quadratic_mu_and_inverse() {
        let mu = PowerMu::QUADRATIC3;
        assert_eq!(mu.eval(2.0), 12.0);
        assert_abs_diff_eq!(mu.inverse(12.0), 2.0, epsilon = 1e-15);
        for r in [1.0, 2.0, 10.0] {
            assert_abs_diff_eq!(mu.inverse(mu.eval(r)), r, epsilon = 1e-12);
        }
        verify_mu(&example(), &mu, 1e4).unwrap();
    }

    #[test]
    fn envelope_at_one() {
        let env = coefficient_envelope(&example(), 10.0, 10);
        // |f(1,1)| = 0.3, |f(1,2)| = 0.5, g(1) = 1
        assert_eq!(env[0], (1.0, 1.0));
        assert!(env[0].1 <= PowerMu::QUADRATIC3.eval(1.0));
    }

    #[test]
    fn fitted_mu_dominates() {
        let spec = example();
        let mu = default_mu_for(&spec).unwrap();
        assert_eq!(mu.exponent, 3.0);
        verify_mu(&spec, &mu, 1e4).unwrap();

        let mut no_inv = spec.clone();
        no_inv.include_inverse_drift = false;
        let mu = default_mu_for(&no_inv).unwrap();
        verify_mu(&no_inv, &mu, 1e4).unwrap();
    }

    #[test]
    fn too_small_mu_is_rejected() {
        let mu = PowerMu { scale: 0.1, exponent: 2.0 };
        assert!(TruncationPolicy::new(&example(), mu, 0.25, None).is_err());
    }

    #[test]
    fn psi_values() {
        assert_abs_diff_eq!(psi(1e-3, 2.0 / 3.0).unwrap(), 100.0, epsilon = 1e-10);
        assert_abs_diff_eq!(psi(1e-4, 0.25).unwrap(), 10.0, epsilon = 1e-12);
        assert!(rate_condition_holds(1e-4, 0.25));
        assert!(!rate_condition_holds(1e-3, 2.0 / 3.0));
        for q in [0.1, 0.25, 2.0 / 3.0, 3.0] {
            assert_eq!(psi(1.0, q).unwrap(), 1.0);
        }
        assert!(psi(0.0, 0.25).is_err());
        assert!(psi(-1.0, 0.25).is_err());
    }

    #[test]
    fn preset_warns_default_does_not() {
        let spec = example();
        assert_eq!(preset_policy(&spec).warnings().len(), 1);
        let compliant = TruncationPolicy::new(&spec, PowerMu::QUADRATIC3, 0.25, None).unwrap();
        assert!(compliant.warnings().is_empty());
    }

    #[test]
    fn truncated_drift_values() {
        let spec = example();
        let policy = preset_policy(&spec);
        let band = policy.band(1e-3).unwrap();
        assert_abs_diff_eq!(band.upper, (100.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        // mpmath: f(sqrt(100/3), 1)
        assert_abs_diff_eq!(
            policy.truncated_drift(&spec, 10.0, 0, 1e-3).unwrap(),
            -16.237_354_873_249_975,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(policy.truncated_drift(&spec, 1.0, 0, 1e-3).unwrap(), -0.3, epsilon = 1e-14);
        let at_lower = spec.drift(band.lower, 0).unwrap();
        assert_eq!(policy.truncated_drift(&spec, -5.0, 0, 1e-3).unwrap(), at_lower);
        assert_abs_diff_eq!(band.lower, 0.173_205_080_756_887_73, epsilon = 1e-14);
    }

    #[test]
    fn truncated_diffusion_values() {
        let spec = example();
        let policy = preset_policy(&spec);
        // mpmath: sqrt(100/3)^1.25
        assert_abs_diff_eq!(
            policy.truncated_diffusion(&spec, 10.0, 1e-3).unwrap(),
            8.949_509_137_628_265,
            epsilon = 1e-10
        );
        assert_eq!(policy.truncated_diffusion(&spec, -0.3, 1e-3).unwrap(), 0.0);
        assert_eq!(policy.truncated_diffusion(&spec, 1.0, 1e-3).unwrap(), 1.0);
        // no lower clamp on g
        assert_eq!(policy.truncated_diffusion(&spec, 0.02, 1e-3).unwrap(), spec.diffusion(0.02));
    }

    #[test]
    fn step_above_delta_star_is_rejected() {
        let spec = example();
        let policy = preset_policy(&spec);
        assert!(policy.band(0.5).is_err());
        assert!(policy.band(0.0).is_err());
    }

    /// Brute-force oracle: scan Δ on a fine log grid and keep the largest one
    /// passing both conditions.
    fn delta_star_scan(spec: &ModelSpec, mu: &PowerMu, q: f64) -> f64 {
        let mut best = 0.0;
        for d in log_grid(1e-8, 0.999, 20_000) {
            let cond1 = mu.inverse(d.powf(-q)) > 1.0;
            let cond2 = !spec.include_inverse_drift
                || linear_grid(d * 1e-6, d, 500)
                    .into_iter()
                    .all(|x| (0..spec.num_regimes()).all(|i| spec.drift_unchecked(x, i) > 0.0));
            if cond1 && cond2 {
                best = d;
            }
        }
        best
    }

    #[test]
    fn delta_star_for_example() {
        let spec = example();
        let q = 2.0 / 3.0;
        let found = delta_star_search(&spec, &PowerMu::QUADRATIC3, q).unwrap();
        let bound = 3f64.powf(-1.5);
        assert!(found < bound && found > bound * (1.0 - 1e-5), "{found}");
        let scanned = delta_star_scan(&spec, &PowerMu::QUADRATIC3, q);
        assert!((found - scanned).abs() / found < 1e-3, "{found} vs {scanned}");
    }

    #[test]
    fn delta_star_shrinks_with_large_constant_drift() {
        let mut spec = example();
        spec.regimes[0] = RegimeParams::new(0.3, 1e3, 0.1, 0.5, 1.0).unwrap();
        let q = 2.0 / 3.0;
        let found = delta_star_search(&spec, &PowerMu::QUADRATIC3, q).unwrap();
        let scanned = delta_star_scan(&spec, &PowerMu::QUADRATIC3, q);
        assert!(found < 1e-3, "{found}");
        assert!((found - scanned).abs() / found < 1e-3, "{found} vs {scanned}");
    }

    #[test]
    fn delta_star_without_inverse_drift_uses_first_condition() {
        let mut spec = example();
        spec.include_inverse_drift = false;
        let found = delta_star_search(&spec, &PowerMu::QUADRATIC3, 0.25).unwrap();
        let bound = 3f64.powi(-4);
        assert!(found < bound && found > bound * (1.0 - 1e-5), "{found}");
    }

    #[test]
    fn delta_star_search_fails_when_nothing_is_admissible() {
        let mut spec = example();
        spec.regimes[0] = RegimeParams::new(0.0, 1.0, 0.1, 0.5, 1.0).unwrap();
        assert!(delta_star_search(&spec, &PowerMu::QUADRATIC3, 0.25).is_err());
    }

    #[test]
    fn bands_are_nested() {
        let spec = example();
        let policy = preset_policy(&spec);
        let deltas = log_grid(1e-6, policy.delta_star(), 50);
        for w in deltas.windows(2) {
            let (small, large) = (policy.band(w[0]).unwrap(), policy.band(w[1]).unwrap());
            assert!(small.lower <= large.lower && small.upper >= large.upper);
        }
    }

    #[test]
    fn audit_for_example() {
        let spec = example();
        let audit = preset_policy(&spec).audit(&spec, &[1e-2, 1e-3, 1e-4]);
        assert!(audit.passed(), "{audit}");
        assert!(audit.rows.iter().all(|r| !r.rate_condition));
        assert!(audit.to_string().contains("WARN"));
    }
}
