//! Closed-form stability and generalization bounds.
//!
//! Every recursion solution goes through [`geometric_series`] and its
//! companions, which stay accurate near the removable singularity at x = 1.
//! Bounds that depend on a validity condition return
//! [`BoundValue::NotApplicable`] when the condition fails.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::ReceptiveFieldMap;
use crate::objective::{ConstantsCertificate, Objective};
use crate::sgd::SgdConfig;

const LIMIT_WIDTH: f64 = 1e-9;

/// (x^T − 1)/(x − 1) = 1 + x + … + x^{T−1}.
pub fn geometric_series(x: f64, t: u64) -> f64 {
    if t == 0 {
        return 0.0;
    }
    let tf = t as f64;
    let e = x - 1.0;
    if e.abs() < LIMIT_WIDTH {
        return tf + tf * (tf - 1.0) / 2.0 * e + tf * (tf - 1.0) * (tf - 2.0) / 6.0 * e * e;
    }
    if x > 0.0 {
        (tf * e.ln_1p()).exp_m1() / e
    } else {
        (x.powf(tf) - 1.0) / e
    }
}

/// (x^{2T} − x^T)/(x² − x) = x^{T−1}·(x^T − 1)/(x − 1); tends to T at x = 1.
pub fn geometric_companion(x: f64, t: u64) -> f64 {
    if t == 0 {
        return 0.0;
    }
    x.powf((t - 1) as f64) * geometric_series(x, t)
}

/// (1 − x^T)/(1 − x)², the last term of the printed variance expression.
/// Unlike the other kernels this has a pole at x = 1; it returns +∞ there.
pub fn printed_tail_kernel(x: f64, t: u64) -> f64 {
    if t == 0 {
        return 0.0;
    }
    if (x - 1.0).abs() < LIMIT_WIDTH {
        return f64::INFINITY;
    }
    geometric_series(x, t) / (1.0 - x)
}

/// Iterates E_t = z·E_{t−1} + y and V_t = z²·V_{t−1} + 2yz·E_{t−1} + y² from
/// zero, returning (E_T, V_T).
pub fn iterate_moments(z: f64, y: f64, t: u64) -> (f64, f64) {
    let (mut e, mut v) = (0.0f64, 0.0f64);
    for _ in 0..t {
        v = z * z * v + 2.0 * y * z * e + y * y;
        e = z * e + y;
    }
    (e, v)
}

/// A bound that may be invalid under the given parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundValue {
    Value(f64),
    NotApplicable(String),
}

impl BoundValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            BoundValue::Value(v) => Some(*v),
            BoundValue::NotApplicable(_) => None,
        }
    }

    pub fn is_applicable(&self) -> bool {
        matches!(self, BoundValue::Value(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundRegime {
    StronglyConvex,
    NonConvex,
}

/// Named validity check with its evaluated left-hand side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub expression: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Whether failure invalidates the dependent bounds.
    pub gating: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SgdBoundParams {
    pub constants: ConstantsCertificate,
    pub step: f64,
    pub steps: u64,
    pub n: usize,
    /// Receptive-field cardinalities 𝒩_i.
    pub field_sizes: Vec<usize>,
    pub regime: BoundRegime,
}

impl SgdBoundParams {
    pub fn new(
        constants: ConstantsCertificate,
        step: f64,
        steps: u64,
        field_sizes: Vec<usize>,
        regime: BoundRegime,
    ) -> Result<Self> {
        let n = field_sizes.len();
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one vertex".into()));
        }
        if let Some(&k) = field_sizes.iter().find(|&&k| k == 0 || k > n) {
            return Err(Error::InvalidArgument(format!(
                "receptive field size {k} outside 1..={n}"
            )));
        }
        if !(step >= 0.0 && step.is_finite()) {
            return Err(Error::InvalidArgument("step size must be non-negative".into()));
        }
        let c = &constants;
        let all = [c.lambda, c.gamma, c.lipschitz, c.zeta, c.loss_bound, c.sample_diameter];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("constants must be finite and non-negative".into()));
        }
        if regime == BoundRegime::StronglyConvex && !(c.gamma > 0.0 && c.lambda >= c.gamma) {
            return Err(Error::InvalidArgument(
                "strongly convex regime needs λ ≥ γ > 0".into(),
            ));
        }
        Ok(SgdBoundParams {
            constants,
            step,
            steps,
            n,
            field_sizes,
            regime,
        })
    }

    /// Parameters of an SGD run; refuses step schedules.
    pub fn from_parts(obj: &Objective, rf: &ReceptiveFieldMap, cfg: &SgdConfig) -> Result<Self> {
        if !cfg.is_constant() {
            return Err(Error::InvalidArgument(
                "bounds are only defined for a constant step size".into(),
            ));
        }
        let c = *obj.constants();
        let regime = if obj.is_convex() && c.gamma > 0.0 {
            BoundRegime::StronglyConvex
        } else {
            BoundRegime::NonConvex
        };
        SgdBoundParams::new(c, cfg.step, cfg.steps as u64, rf.cardinalities(), regime)
    }

    pub fn sparsity(&self, i: usize) -> f64 {
        self.field_sizes[i] as f64 / self.n as f64
    }

    /// Per-step additive term α·B_Z·ζ·(𝒩_i − 1)/N + 2α𝓛/N.
    pub fn additive_term(&self, i: usize) -> f64 {
        let c = &self.constants;
        let n = self.n as f64;
        self.step * c.sample_diameter * c.zeta * (self.field_sizes[i] as f64 - 1.0) / n
            + 2.0 * self.step * c.lipschitz / n
    }

    /// (N − 1)/N·αλ.
    pub fn nonconvex_multiplier(&self) -> f64 {
        (self.n as f64 - 1.0) / self.n as f64 * self.step * self.constants.lambda
    }

    /// Multiplier of vertex i in the active regime.
    pub fn multiplier(&self, i: usize) -> f64 {
        match self.regime {
            BoundRegime::StronglyConvex => convex_recursion_constants(self, i).0,
            BoundRegime::NonConvex => self.nonconvex_multiplier(),
        }
    }

    pub fn conditions(&self) -> BTreeMap<String, ConditionCheck> {
        let c = &self.constants;
        let (a, l, g) = (self.step, c.lambda, c.gamma);
        let mut out = BTreeMap::new();
        match self.regime {
            BoundRegime::StronglyConvex => {
                let v = a.powi(4) * l * l + 2.0 * a * l * g / (l + g);
                out.insert(
                    "step_condition".into(),
                    ConditionCheck {
                        expression: "α⁴λ² + 2αλγ/(λ+γ) ≤ 1".into(),
                        value: v,
                        threshold: 1.0,
                        passed: v <= 1.0,
                        gating: true,
                    },
                );
                let v = a * (l + g);
                out.insert(
                    "contraction_range".into(),
                    ConditionCheck {
                        expression: "α(λ+γ) ≤ 2".into(),
                        value: v,
                        threshold: 2.0,
                        passed: v <= 2.0,
                        gating: true,
                    },
                );
            }
            BoundRegime::NonConvex => {
                let m = self.nonconvex_multiplier();
                out.insert(
                    "bounded_in_steps".into(),
                    ConditionCheck {
                        expression: "(N−1)/N·αλ ≤ 1".into(),
                        value: m,
                        threshold: 1.0,
                        passed: m <= 1.0,
                        gating: false,
                    },
                );
            }
        }
        out
    }

    fn gate(&self) -> Option<String> {
        self.conditions()
            .into_iter()
            .find(|(_, c)| c.gating && !c.passed)
            .map(|(name, c)| format!("{name} failed: {} (value {})", c.expression, c.value))
    }
}

/// (multiplier, additive term) of the strongly convex first-moment recursion
/// for vertex i, and whether the step condition holds.
pub fn convex_recursion_constants(p: &SgdBoundParams, i: usize) -> (f64, f64, bool) {
    let c = &p.constants;
    let (a, l, g) = (p.step, c.lambda, c.gamma);
    let n = p.n as f64;
    let z = p.sparsity(i) * a * l * (g / (l + g) - a) + a * a * l / n + (1.0 - a * l * g / (l + g));
    let cond = a.powi(4) * l * l + 2.0 * a * l * g / (l + g) <= 1.0;
    (z, p.additive_term(i), cond)
}

/// Per-vertex expected type-2 stability bounds 𝓛·geom(multiplier, T)·additive.
pub fn expected_stability_per_vertex(p: &SgdBoundParams) -> Vec<BoundValue> {
    if let Some(reason) = p.gate() {
        return vec![BoundValue::NotApplicable(reason); p.n];
    }
    (0..p.n)
        .map(|i| {
            BoundValue::Value(
                p.constants.lipschitz * geometric_series(p.multiplier(i), p.steps) * p.additive_term(i),
            )
        })
        .collect()
}

/// Expected type-2 stability bound for vertex `i`, or the sup over vertices.
pub fn expected_stability_bound(p: &SgdBoundParams, i: Option<usize>) -> BoundValue {
    let all = expected_stability_per_vertex(p);
    match i {
        Some(i) => all[i].clone(),
        None => sup_values(&all),
    }
}

fn sup_values(v: &[BoundValue]) -> BoundValue {
    let mut best = 0.0f64;
    for b in v {
        match b {
            BoundValue::Value(x) => best = best.max(*x),
            na => return na.clone(),
        }
    }
    BoundValue::Value(best)
}

/// Second-moment terms per vertex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    /// Exact solution of the second-moment recursion, equal to E_T².
    pub exact: Vec<f64>,
    /// 2Y²·(x^{2T} − x^T)/(x² − x) + Y²·(1 − x^T)/(1 − x)², the printed form
    /// used inside the high-probability bounds.
    pub printed: Vec<f64>,
    pub exact_sum: f64,
    pub printed_sum: f64,
}

pub fn variance_bound(p: &SgdBoundParams) -> VarianceReport {
    let mut exact = Vec::with_capacity(p.n);
    let mut printed = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let x = p.multiplier(i);
        let y = p.additive_term(i);
        let e = geometric_series(x, p.steps) * y;
        exact.push(e * e);
        printed.push(if y == 0.0 || p.steps == 0 {
            0.0
        } else {
            2.0 * y * y * geometric_companion(x, p.steps) + y * y * printed_tail_kernel(x, p.steps)
        });
    }
    VarianceReport {
        exact_sum: exact.iter().sum(),
        printed_sum: printed.iter().sum(),
        exact,
        printed,
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("δ must lie in (0, 1), got {delta}")))
    }
}

fn printed_variance_gate(v: &VarianceReport) -> Option<String> {
    v.printed
        .iter()
        .any(|x| x.is_nan() || *x < 0.0)
        .then(|| "printed variance term is negative (multiplier above 1)".to_string())
}

/// High-probability type-2 stability bound of the active regime.
pub fn highprob_stability_bound(p: &SgdBoundParams, delta: f64) -> Result<BoundValue> {
    check_delta(delta)?;
    if let Some(reason) = p.gate() {
        return Ok(BoundValue::NotApplicable(reason));
    }
    let var = variance_bound(p);
    if let Some(reason) = printed_variance_gate(&var) {
        return Ok(BoundValue::NotApplicable(reason));
    }
    let c = &p.constants;
    let log_term = (2.0 / delta).ln();
    let value = match p.regime {
        BoundRegime::StronglyConvex => {
            let sup_e = (0..p.n)
                .map(|i| geometric_series(p.multiplier(i), p.steps) * p.additive_term(i))
                .fold(0.0, f64::max);
            let k = (c.lambda - c.gamma) * (log_term / 8.0).sqrt();
            (c.lipschitz + k) * sup_e + k * (sup_e + (var.printed_sum / delta).sqrt()).powi(2)
        }
        BoundRegime::NonConvex => {
            let sup_y = (0..p.n).map(|i| p.additive_term(i)).fold(0.0, f64::max);
            let m = p.nonconvex_multiplier();
            c.lipschitz * geometric_series(m, p.steps) * sup_y * (1.0 + (log_term / 2.0).sqrt())
                + c.lipschitz * (log_term / delta * var.printed_sum).sqrt()
        }
    };
    Ok(BoundValue::Value(value))
}

/// High-probability generalization gap of T-step SGD:
/// `[(2 − 1/N)·√(2N log(2/δ)) + 2]·sup_i envelope_i + (B_L/N)·√(2N log(2/δ))`.
pub fn sgd_generalization_bound(p: &SgdBoundParams, delta: f64) -> Result<BoundValue> {
    check_delta(delta)?;
    if let Some(reason) = p.gate() {
        return Ok(BoundValue::NotApplicable(reason));
    }
    let var = variance_bound(p);
    if let Some(reason) = printed_variance_gate(&var) {
        return Ok(BoundValue::NotApplicable(reason));
    }
    let c = &p.constants;
    let envelope = (0..p.n)
        .map(|i| {
            let first = c.lipschitz * geometric_series(p.multiplier(i), p.steps) * p.additive_term(i);
            match p.regime {
                BoundRegime::StronglyConvex => {
                    first
                        + (1.0 / (4.0 * delta)).sqrt()
                            * (c.lambda - c.gamma)
                            * (4.0 / delta * var.printed[i])
                }
                BoundRegime::NonConvex => {
                    first * (1.0 + (1.0 / delta).sqrt()) + (4.0 / delta * var.printed[i]).sqrt()
                }
            }
        })
        .fold(0.0, f64::max);
    Ok(BoundValue::Value(
        highprob_prefactor(p.n, delta) * envelope + loss_tail_term(c.loss_bound, p.n, delta),
    ))
}

/// (2 − 1/N)·√(2N log(2/δ)) + 2.
pub fn highprob_prefactor(n: usize, delta: f64) -> f64 {
    let nf = n as f64;
    (2.0 - 1.0 / nf) * (2.0 * nf * (2.0 / delta).ln()).sqrt() + 2.0
}

/// (B_L/N)·√(2N log(2/δ)).
pub fn loss_tail_term(loss_bound: f64, n: usize, delta: f64) -> f64 {
    let nf = n as f64;
    loss_bound / nf * (2.0 * nf * (2.0 / delta).ln()).sqrt()
}

/// Everything the calculator knows about one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub params: SgdBoundParams,
    pub delta: f64,
    pub multipliers: Vec<f64>,
    pub additive_terms: Vec<f64>,
    pub expected_beta2_i: Vec<BoundValue>,
    pub expected_beta2: BoundValue,
    pub variance: VarianceReport,
    pub highprob_beta2: BoundValue,
    pub generalization: BoundValue,
    pub conditions: BTreeMap<String, ConditionCheck>,
    pub flags: Vec<String>,
}

pub fn bound_report(p: &SgdBoundParams, delta: f64) -> Result<BoundReport> {
    let expected_beta2_i = expected_stability_per_vertex(p);
    let conditions = p.conditions();
    let mut flags = Vec::new();
    if conditions.values().any(|c| !c.gating && !c.passed) {
        flags.push("divergent in T".to_string());
    }
    Ok(BoundReport {
        params: p.clone(),
        delta,
        multipliers: (0..p.n).map(|i| p.multiplier(i)).collect(),
        additive_terms: (0..p.n).map(|i| p.additive_term(i)).collect(),
        expected_beta2: sup_values(&expected_beta2_i),
        expected_beta2_i,
        variance: variance_bound(p),
        highprob_beta2: highprob_stability_bound(p, delta)?,
        generalization: sgd_generalization_bound(p, delta)?,
        conditions,
        flags,
    })
}

fn check_dobrushin(alpha_dob: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha_dob) {
        Ok(())
    } else {
        Err(Error::Condition(format!(
            "Dobrushin coefficient must lie in [0, 1), got {alpha_dob}"
        )))
    }
}

/// Surplus of the single-graph generalization bound:
/// `2·d̄·β₂ + √(2Σ((2 − 2d_i)β₁ + d_i(β₂ + B_L))²)·√(log(1/δ)/(1 − α))`.
pub fn generalization_bound_single(
    beta1: f64,
    beta2: f64,
    loss_bound: f64,
    sparsity: &[f64],
    alpha_dob: f64,
    delta: f64,
) -> Result<f64> {
    check_dobrushin(alpha_dob)?;
    check_delta(delta)?;
    if beta1 > beta2 || beta1 < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need 0 ≤ β₁ ≤ β₂, got β₁ = {beta1}, β₂ = {beta2}"
        )));
    }
    let d_bar: f64 = sparsity.iter().sum();
    let s: f64 = sparsity
        .iter()
        .map(|d| ((2.0 - 2.0 * d) * beta1 + d * (beta2 + loss_bound)).powi(2))
        .sum();
    Ok(2.0 * d_bar * beta2 + (2.0 * s).sqrt() * ((1.0 / delta).ln() / (1.0 - alpha_dob)).sqrt())
}

/// Surplus of the m-graph bound:
/// `Nμ + √(2mΣ((2 − d_i/m)μ + d_i B_L/m)²)·√(log(1/δ)/(1 − α))`.
pub fn generalization_bound_mgraph(
    mu: f64,
    loss_bound: f64,
    sparsity: &[f64],
    m: usize,
    alpha_dob: f64,
    delta: f64,
) -> Result<f64> {
    check_dobrushin(alpha_dob)?;
    check_delta(delta)?;
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let mf = m as f64;
    let s: f64 = sparsity
        .iter()
        .map(|d| ((2.0 - d / mf) * mu + d * loss_bound / mf).powi(2))
        .sum();
    Ok(sparsity.len() as f64 * mu
        + (2.0 * mf * s).sqrt() * ((1.0 / delta).ln() / (1.0 - alpha_dob)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBound {
    pub probability: f64,
    /// All c_i are zero while t > 0.
    pub degenerate: bool,
}

/// `exp(−(1 − α)t²/(2Σc_i²))`, clipped to [0, 1].
pub fn concentration_tail(c: &[f64], alpha_dob: f64, t: f64) -> Result<TailBound> {
    if !(alpha_dob < 1.0) {
        return Err(Error::Condition(format!(
            "Dobrushin coefficient must be below 1, got {alpha_dob}"
        )));
    }
    if c.iter().any(|v| *v < 0.0) || t < 0.0 {
        return Err(Error::InvalidArgument("need c_i ≥ 0 and t ≥ 0".into()));
    }
    let s: f64 = c.iter().map(|v| v * v).sum();
    if s == 0.0 {
        return Ok(if t > 0.0 {
            TailBound { probability: 0.0, degenerate: true }
        } else {
            TailBound { probability: 1.0, degenerate: false }
        });
    }
    let p = (-(1.0 - alpha_dob) * t * t / (2.0 * s)).exp();
    Ok(TailBound {
        probability: p.clamp(0.0, 1.0),
        degenerate: false,
    })
}

/// Smallest admissible ε: sup over d ∈ 1..=d_max of 2(2 − slack)·d·β₂.
pub fn srm_epsilon_floor(beta2: f64, slack: f64, d_max: usize) -> f64 {
    (1..=d_max)
        .map(|d| 2.0 * (2.0 - slack) * d as f64 * beta2)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Unclipped `2Σ_{d=1}^{d_max} exp(−(ε/2 + (slack − 2)dβ₂)²/(2N((2 − 2d)β₁ + d(β₂ + B_L))²))`.
pub fn srm_confidence_sum(
    beta1: f64,
    beta2: f64,
    loss_bound: f64,
    slack: f64,
    d_max: usize,
    n: usize,
    epsilon: f64,
) -> Result<f64> {
    if d_max == 0 || n == 0 {
        return Err(Error::InvalidArgument("need d_max ≥ 1 and N ≥ 1".into()));
    }
    let floor = srm_epsilon_floor(beta2, slack, d_max);
    if epsilon < floor {
        return Err(Error::Condition(format!(
            "ε = {epsilon} is below the admissible floor {floor}"
        )));
    }
    let nf = n as f64;
    Ok(2.0
        * (1..=d_max)
            .map(|d| {
                let df = d as f64;
                let num = (epsilon / 2.0 + (slack - 2.0) * df * beta2).powi(2);
                let den = 2.0 * nf * ((2.0 - 2.0 * df) * beta1 + df * (beta2 + loss_bound)).powi(2);
                if den == 0.0 {
                    if num > 0.0 { 0.0 } else { 1.0 }
                } else {
                    (-num / den).exp()
                }
            })
            .sum::<f64>())
}

/// Failure probability of the sparse selection guarantee, clipped to [0, 1].
pub fn srm_confidence(
    beta1: f64,
    beta2: f64,
    loss_bound: f64,
    slack: f64,
    d_max: usize,
    n: usize,
    epsilon: f64,
) -> Result<f64> {
    Ok(srm_confidence_sum(beta1, beta2, loss_bound, slack, d_max, n, epsilon)?.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn unit_constants(lambda: f64, gamma: f64) -> ConstantsCertificate {
        ConstantsCertificate {
            lambda,
            gamma,
            lipschitz: 1.0,
            zeta: 1.0,
            loss_bound: 1.0,
            sample_diameter: 1.0,
            radius: 1.0,
        }
    }

    /// λ = γ = 1, α = 0.1, N = 10, every 𝒩_i = 2, unit constants.
    fn reference(lambda: f64) -> SgdBoundParams {
        SgdBoundParams::new(unit_constants(lambda, 1.0), 0.1, 10, vec![2; 10], BoundRegime::StronglyConvex).unwrap()
    }

    #[test]
    fn geometric_series_examples() {
        assert_eq!(geometric_series(1.0, 7), 7.0);
        assert!((geometric_series(2.0, 3) - 7.0).abs() < 1e-12);
        let looped: f64 = (0..10).map(|k| 0.959f64.powi(k)).sum();
        assert!(rel(geometric_series(0.959, 10), looped) < 1e-13);
        assert!(rel(geometric_series(0.959, 10), 8.342_934_913_297_878) < 1e-12);
        assert_eq!(geometric_series(0.5, 0), 0.0);
        assert_eq!(geometric_companion(1.0, 9), 9.0);
        assert_eq!(geometric_series(0.0, 5), 1.0);
    }

    #[test]
    fn convex_constants_reference_values() {
        let p = reference(1.0);
        let (z, y, ok) = convex_recursion_constants(&p, 0);
        assert!((z - 0.959).abs() < 1e-12);
        assert!((y - 0.03).abs() < 1e-12);
        assert!(ok);
        let cond = p.conditions()["step_condition"].value;
        assert!((cond - 0.1001).abs() < 1e-12);
        let e = expected_stability_bound(&p, None).value().unwrap();
        assert!(rel(e, 0.250_288_047_398_936_3) < 1e-12);
    }

    #[test]
    fn zero_step_limits() {
        let p = SgdBoundParams::new(unit_constants(1.0, 1.0), 0.0, 10, vec![2; 10], BoundRegime::StronglyConvex).unwrap();
        let (z, y, _) = convex_recursion_constants(&p, 0);
        assert_eq!((z, y), (1.0, 0.0));
        assert_eq!(expected_stability_bound(&p, None), BoundValue::Value(0.0));
    }

    #[test]
    fn isolated_vertex_has_hit_term_only() {
        let p = SgdBoundParams::new(unit_constants(1.0, 1.0), 0.1, 10, vec![1; 10], BoundRegime::StronglyConvex).unwrap();
        assert!((p.additive_term(0) - 2.0 * 0.1 / 10.0).abs() < 1e-15);
    }

    #[test]
    fn no_steps_means_no_instability() {
        let mut p = reference(1.0);
        p.steps = 0;
        assert_eq!(expected_stability_bound(&p, None), BoundValue::Value(0.0));
        assert_eq!(variance_bound(&p).printed_sum, 0.0);
        assert_eq!(variance_bound(&p).exact_sum, 0.0);
    }

    #[test]
    fn variance_terms_reference_values() {
        let v = variance_bound(&reference(1.0));
        assert!(rel(v.printed[0], 0.193_440_480_013_266_86) < 1e-12);
        let (_, it) = iterate_moments(0.959, 0.03, 10);
        assert!(rel(v.exact[0], it) < 1e-12);
        assert!(rel(v.exact[0], 0.062_644_106_670_772_19) < 1e-12);
    }

    #[test]
    fn highprob_reference_values() {
        let hp = highprob_stability_bound(&reference(1.0), 0.1).unwrap().value().unwrap();
        assert!(rel(hp, 0.250_288_047_398_936_34) < 1e-9);
        let hp2 = highprob_stability_bound(&reference(2.0), 0.1).unwrap().value().unwrap();
        assert!(rel(hp2, 9.800_507_627_813_43) < 1e-9);
        let gen = sgd_generalization_bound(&reference(2.0), 0.1).unwrap().value().unwrap();
        assert!(rel(gen, 148.454_074_572_010_57) < 1e-9);
    }

    #[test]
    fn highprob_monotone_in_delta() {
        let p = reference(2.0);
        let deltas = [0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5];
        let vals: Vec<f64> = deltas
            .iter()
            .map(|&d| highprob_stability_bound(&p, d).unwrap().value().unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        assert!(highprob_stability_bound(&p, 1.0).is_err());
    }

    #[test]
    fn failed_step_condition_is_not_applicable() {
        let p = SgdBoundParams::new(unit_constants(4.0, 1.0), 0.7, 10, vec![2; 10], BoundRegime::StronglyConvex).unwrap();
        assert!(!p.conditions()["step_condition"].passed);
        assert!(!expected_stability_bound(&p, None).is_applicable());
        assert!(!highprob_stability_bound(&p, 0.1).unwrap().is_applicable());
        assert!(!sgd_generalization_bound(&p, 0.1).unwrap().is_applicable());
    }

    #[test]
    fn nonconvex_multiplier_limits() {
        // λ = 0: multiplier 0, geometric factor 1.
        let p = SgdBoundParams::new(unit_constants(0.0, 0.0), 0.1, 25, vec![3; 8], BoundRegime::NonConvex).unwrap();
        assert_eq!(p.nonconvex_multiplier(), 0.0);
        let b = expected_stability_bound(&p, None).value().unwrap();
        assert!(rel(b, p.additive_term(0)) < 1e-12);
        // Multiplier exactly 1: the arithmetic sequence 𝓛·T·𝒫Y.
        let p = SgdBoundParams::new(unit_constants(8.0 / 7.0 * 10.0, 0.0), 0.1, 25, vec![3; 8], BoundRegime::NonConvex).unwrap();
        assert!((p.nonconvex_multiplier() - 1.0).abs() < 1e-12);
        let b = expected_stability_bound(&p, None).value().unwrap();
        assert!(rel(b, 25.0 * p.additive_term(0)) < 1e-7);
    }

    #[test]
    fn divergent_nonconvex_is_flagged_not_refused() {
        let p = SgdBoundParams::new(unit_constants(30.0, 0.0), 0.1, 10, vec![3; 8], BoundRegime::NonConvex).unwrap();
        let r = bound_report(&p, 0.1).unwrap();
        assert!(r.flags.iter().any(|f| f == "divergent in T"));
        assert!(r.expected_beta2.is_applicable());
    }

    #[test]
    fn single_graph_reductions() {
        let n = 10;
        let d = vec![1.0 / n as f64; n];
        let only_loss = generalization_bound_single(0.0, 0.0, 1.0, &d, 0.0, 0.1).unwrap();
        let expect = 1.0 / (n as f64).sqrt() * (2.0 * 10f64.ln()).sqrt();
        assert!(rel(only_loss, expect) < 1e-12);
        let b = 0.05;
        let v = generalization_bound_single(b, b, 1.0, &d, 0.0, 0.1).unwrap();
        let nf = n as f64;
        let classical = 2.0 * b + (2.0 * nf).sqrt() * ((2.0 - 2.0 / nf) * b + (b + 1.0) / nf) * 10f64.ln().sqrt();
        assert!(rel(v, classical) < 1e-12);
        assert!(rel(v, 1.423_297_382_760_947) < 1e-12);
        assert!(generalization_bound_single(b, b, 1.0, &d, 1.0, 0.1).is_err());
        let grid: Vec<f64> = [0.0, 0.3, 0.6, 0.9, 0.99]
            .iter()
            .map(|&a| generalization_bound_single(b, b, 1.0, &d, a, 0.1).unwrap())
            .collect();
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn mgraph_values() {
        let d = vec![0.25; 4];
        let v = generalization_bound_mgraph(0.1, 1.0, &d, 1, 0.0, 0.1).unwrap();
        assert!(rel(v, 2.224_071_122_345_945_3) < 1e-12);
        let zero = generalization_bound_mgraph(0.0, 1.0, &d, 3, 0.2, 0.1).unwrap();
        let expect = (2.0 * 3.0 * 4.0 * (0.25f64 / 3.0).powi(2)).sqrt() * (10f64.ln() / 0.8).sqrt();
        assert!(rel(zero, expect) < 1e-12);
        assert!(generalization_bound_mgraph(0.1, 1.0, &d, 0, 0.0, 0.1).is_err());
    }

    #[test]
    fn concentration_tail_values() {
        let c = vec![1.0; 4];
        assert_eq!(concentration_tail(&c, 0.0, 0.0).unwrap().probability, 1.0);
        let p = concentration_tail(&c, 0.0, 2.0).unwrap().probability;
        assert!((p - 0.606_530_659_712_633_4).abs() < 1e-15);
        let d = concentration_tail(&[0.0, 0.0], 0.3, 1.0).unwrap();
        assert!(d.degenerate && d.probability == 0.0);
        let grid: Vec<f64> = [0.0, 0.5, 0.9, 0.99]
            .iter()
            .map(|&a| concentration_tail(&c, a, 2.0).unwrap().probability)
            .collect();
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn srm_confidence_values() {
        let raw = srm_confidence_sum(0.0, 0.0, 1.0, 1.0, 1, 8, 2.0).unwrap();
        assert!(rel(raw, 1.878_826_125_626_951_6) < 1e-12);
        assert!(rel(raw, 2.0 * (-4.0f64 / 64.0).exp()) < 1e-12);
        assert_eq!(srm_confidence(0.0, 0.0, 1.0, 1.0, 1, 8, 2.0).unwrap(), 1.0);
        assert!(srm_confidence(0.01, 0.02, 1.0, 1.0, 3, 100, 1e6).unwrap() < 1e-12);
        let floor = srm_epsilon_floor(0.1, 1.0, 3);
        assert!((floor - 0.6).abs() < 1e-15);
        assert!(srm_confidence(0.0, 0.1, 1.0, 1.0, 3, 10, 0.5).is_err());
        let by_d: Vec<f64> = (1..6)
            .map(|d| srm_confidence_sum(0.01, 0.02, 1.0, 1.0, d, 200, 3.0).unwrap())
            .collect();
        assert!(by_d.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn generalization_decreases_with_n_at_fixed_field_size() {
        let vals: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| {
                let p = SgdBoundParams::new(unit_constants(2.0, 1.0), 0.05, 50, vec![3; n], BoundRegime::StronglyConvex).unwrap();
                sgd_generalization_bound(&p, 0.1).unwrap().value().unwrap()
            })
            .collect();
        assert!(vals.windows(2).all(|w| w[0] > w[1]), "{vals:?}");
    }

    #[test]
    fn highprob_loss_term_alone() {
        let v = loss_tail_term(2.0, 10, 0.1);
        assert!(rel(v, 0.2 * (20.0 * 20f64.ln()).sqrt()) < 1e-15);
    }

    proptest! {
        #[test]
        fn kernels_match_iteration(x in 0.01f64..1.9, t in 0u64..300, near in proptest::bool::ANY, eps in -1e-6f64..1e-6) {
            let x = if near { 1.0 + eps } else { x };
            let looped: f64 = (0..t).map(|k| x.powi(k as i32)).sum();
            let g = geometric_series(x, t);
            prop_assert!((g - looped).abs() <= 1e-9 * looped.abs().max(1e-300) + 1e-300);
            let comp_loop: f64 = (0..t).map(|k| x.powi((t - 1 + k) as i32)).sum();
            prop_assert!((geometric_companion(x, t) - comp_loop).abs() <= 1e-9 * comp_loop.abs().max(1e-300) + 1e-300);
        }

        #[test]
        fn exact_second_moment_matches_iteration(z in 0.5f64..1.05, y in 0.0f64..0.1, t in 0u64..200, near in proptest::bool::ANY, eps in -1e-6f64..1e-6) {
            let z = if near { 1.0 + eps } else { z };
            let (e, v) = iterate_moments(z, y, t);
            let closed = geometric_series(z, t) * y;
            prop_assert!((closed - e).abs() <= 1e-9 * e.abs() + 1e-300);
            prop_assert!((closed * closed - v).abs() <= 1e-9 * v.abs() + 1e-300);
        }

        #[test]
        fn bounds_non_negative_and_monotone_in_beta(b in 0.0f64..0.2, db in 0.0f64..0.1, alpha in 0.0f64..0.95) {
            let d = vec![0.2; 5];
            let lo = generalization_bound_single(b, b, 1.0, &d, alpha, 0.1).unwrap();
            let hi = generalization_bound_single(b + db, b + db, 1.0, &d, alpha, 0.1).unwrap();
            prop_assert!(lo >= 0.0 && hi >= lo);
            let mlo = generalization_bound_mgraph(b, 1.0, &d, 2, alpha, 0.1).unwrap();
            let mhi = generalization_bound_mgraph(b + db, 1.0, &d, 2, alpha, 0.1).unwrap();
            prop_assert!(mlo >= 0.0 && mhi >= mlo);
        }
    }
}
