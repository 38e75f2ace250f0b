//! Plain and coupled SGD over vertex-indexed objectives.
//!
//! Each step draws n_t uniformly from [N] (with replacement) and applies
//! `G(w, α, n_t) = proj(w − α ∇f(𝔖_{n_t}, w))`. The coupled run repeats the
//! index stream on a sample set that differs at one vertex, which yields the
//! divergence sequence ‖δ^i w_t‖ analysed by the stability bounds.

use std::io::{self, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::ReceptiveFieldMap;
use crate::objective::{
    dist, norm, random_in_ball, random_local_sample, local_samples, ConstantsCertificate,
    LocalSample, Objective,
};
use crate::rng::{child_rng, rng_from};
use crate::sampler::SampleSet;

/// Step size schedule. Bounds only accept [`StepSchedule::Constant`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum StepSchedule {
    Constant,
    /// α_t = α / t^power.
    Decay { power: f64 },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SgdConfig {
    pub step: f64,
    pub steps: usize,
    pub seed: u64,
    pub schedule: StepSchedule,
    /// Project onto the admissible ball after each step.
    pub project: bool,
    /// Starting point; zeros when absent.
    pub initial: Option<Vec<f64>>,
}

impl SgdConfig {
    pub fn new(step: f64, steps: usize, seed: u64) -> Self {
        SgdConfig {
            step,
            steps,
            seed,
            schedule: StepSchedule::Constant,
            project: true,
            initial: None,
        }
    }

    pub fn with_initial(mut self, w0: Vec<f64>) -> Self {
        self.initial = Some(w0);
        self
    }

    pub fn with_schedule(mut self, s: StepSchedule) -> Self {
        self.schedule = s;
        self
    }

    /// α_t for t = 1, 2, ….
    pub fn step_at(&self, t: usize) -> f64 {
        match self.schedule {
            StepSchedule::Constant => self.step,
            StepSchedule::Decay { power } => self.step / (t.max(1) as f64).powf(power),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.schedule == StepSchedule::Constant
    }

    fn validate(&self) -> Result<()> {
        if !(self.step >= 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step size must be finite and non-negative, got {}",
                self.step
            )));
        }
        Ok(())
    }
}

/// n_1 … n_T, i.i.d. uniform on [N].
pub fn index_stream(n: usize, steps: usize, seed: u64) -> Vec<usize> {
    let mut rng = child_rng(seed, "sgd/index", 0);
    (0..steps).map(|_| rng.random_range(0..n)).collect()
}

/// One update on a precomputed local sample.
pub fn step_local(w: &[f64], alpha: f64, s: &LocalSample, obj: &Objective, project: bool) -> Result<Vec<f64>> {
    let g = obj.gradient(s, w);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient {g:?} at w = {w:?}, local sample {s:?}"
        )));
    }
    let mut out: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - alpha * b).collect();
    if project {
        obj.project(&mut out);
    }
    Ok(out)
}

/// `proj(w − α ∇f(𝔖_i, w))`.
pub fn sgd_step(
    w: &[f64],
    alpha: f64,
    i: usize,
    z: &SampleSet,
    rf: &ReceptiveFieldMap,
    obj: &Objective,
) -> Result<Vec<f64>> {
    if i >= z.len() {
        return Err(Error::IndexOutOfRange { index: i, n: z.len() });
    }
    step_local(w, alpha, &LocalSample::gather(z, rf, i), obj, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// w_0 … w_T.
    pub weights: Vec<Vec<f64>>,
    /// n_1 … n_T.
    pub indices: Vec<usize>,
    pub config: SgdConfig,
}

impl Trajectory {
    pub fn final_weights(&self) -> &[f64] {
        self.weights.last().expect("trajectory holds w_0")
    }
}

fn initial_point(obj: &Objective, cfg: &SgdConfig) -> Result<Vec<f64>> {
    match &cfg.initial {
        Some(w) if w.len() != obj.dim() => Err(Error::InvalidArgument(format!(
            "initial point has length {}, objective dim is {}",
            w.len(),
            obj.dim()
        ))),
        Some(w) => Ok(w.clone()),
        None => Ok(vec![0.0; obj.dim()]),
    }
}

/// Runs SGD on precomputed local samples with a given index stream.
pub fn run_on_locals(
    locals: &[LocalSample],
    indices: &[usize],
    obj: &Objective,
    cfg: &SgdConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut w = initial_point(obj, cfg)?;
    let mut weights = Vec::with_capacity(indices.len() + 1);
    weights.push(w.clone());
    for (t, &n) in indices.iter().enumerate() {
        w = step_local(&w, cfg.step_at(t + 1), &locals[n], obj, cfg.project)?;
        weights.push(w.clone());
    }
    Ok(weights)
}

/// Final weights only, without storing the path.
pub fn final_weights_on_locals(
    locals: &[LocalSample],
    indices: &[usize],
    obj: &Objective,
    cfg: &SgdConfig,
) -> Result<Vec<f64>> {
    let mut w = initial_point(obj, cfg)?;
    for (t, &n) in indices.iter().enumerate() {
        w = step_local(&w, cfg.step_at(t + 1), &locals[n], obj, cfg.project)?;
    }
    Ok(w)
}

pub fn train(z: &SampleSet, rf: &ReceptiveFieldMap, obj: &Objective, cfg: &SgdConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if z.is_empty() {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    let locals = local_samples(z, rf);
    let indices = index_stream(z.len(), cfg.steps, cfg.seed);
    let weights = run_on_locals(&locals, &indices, obj, cfg)?;
    Ok(Trajectory {
        weights,
        indices,
        config: cfg.clone(),
    })
}

/// (1/N) Σ_i f(𝔖_i, w).
pub fn empirical_risk(obj: &Objective, locals: &[LocalSample], w: &[f64]) -> f64 {
    locals.iter().map(|s| obj.evaluate(s, w)).sum::<f64>() / locals.len() as f64
}

/// ‖(1/N) Σ_i ∇f(𝔖_i, w)‖.
pub fn full_gradient_norm(obj: &Objective, locals: &[LocalSample], w: &[f64]) -> f64 {
    let mut g = vec![0.0; w.len()];
    for s in locals {
        for (a, b) in g.iter_mut().zip(obj.gradient(s, w)) {
            *a += b;
        }
    }
    norm(&g) / locals.len() as f64
}

/// Relation of the step's index n_t to the perturbed vertex i.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum StepCase {
    /// i ∈ Ξ(n_t) and n_t ≠ i.
    InField,
    /// n_t = i.
    Hit,
    /// i ∉ Ξ(n_t).
    Outside,
}

impl StepCase {
    pub fn classify(rf: &ReceptiveFieldMap, i: usize, n_t: usize) -> Self {
        if n_t == i {
            StepCase::Hit
        } else if rf.contains(n_t, i) {
            StepCase::InField
        } else {
            StepCase::Outside
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StepCase::InField => "in_field",
            StepCase::Hit => "hit",
            StepCase::Outside => "outside",
        }
    }
}

/// Which strongly convex in-field envelope applies to a step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Regime {
    /// α⁴λ² + 2αλγ/(λ+γ) ≤ 1.
    Small,
    /// 1 − α⁴λ² ≤ 2αλγ/(λ+γ) ≤ 1.
    Large,
    /// 2αλγ/(λ+γ) > 1.
    Outside,
}

pub fn regime(alpha: f64, lambda: f64, gamma: f64) -> Regime {
    let q = 2.0 * alpha * lambda * gamma / (lambda + gamma);
    if q + alpha.powi(4) * lambda * lambda <= 1.0 {
        Regime::Small
    } else if q <= 1.0 {
        Regime::Large
    } else {
        Regime::Outside
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTrace {
    pub base: Trajectory,
    pub perturbed: Trajectory,
    /// The vertex whose sample differs.
    pub vertex: usize,
    /// ‖δ^i w_t‖ for t = 0 … T.
    pub delta_norms: Vec<f64>,
    /// Case of each step t = 1 … T.
    pub cases: Vec<StepCase>,
    pub regime: Regime,
}

impl CoupledTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,n_t,w_norm,delta_norm,case")?;
        writeln!(w, "0,,{},{},", norm(&self.base.weights[0]), self.delta_norms[0])?;
        for t in 1..self.delta_norms.len() {
            writeln!(
                w,
                "{t},{},{},{},{}",
                self.base.indices[t - 1],
                norm(&self.base.weights[t]),
                self.delta_norms[t],
                self.cases[t - 1].label()
            )?;
        }
        Ok(())
    }
}

/// Runs SGD on `z` and on `z_i` with identical w_0 and index stream.
pub fn coupled_train(
    z: &SampleSet,
    z_i: &SampleSet,
    rf: &ReceptiveFieldMap,
    obj: &Objective,
    cfg: &SgdConfig,
) -> Result<CoupledTrace> {
    if z.len() != z_i.len() {
        return Err(Error::InvalidArgument("sample sets differ in size".into()));
    }
    let diff = z.differing_vertices(z_i);
    let vertex = match diff.as_slice() {
        [i] => *i,
        [] => match z_i.perturbed.iter().copied().collect::<Vec<_>>().as_slice() {
            [i] => *i,
            _ => {
                return Err(Error::InvalidArgument(
                    "cannot identify the perturbed vertex".into(),
                ))
            }
        },
        _ => {
            return Err(Error::InvalidArgument(format!(
                "sample sets differ at {} vertices, expected one",
                diff.len()
            )))
        }
    };
    let base = train(z, rf, obj, cfg)?;
    let perturbed = train(z_i, rf, obj, cfg)?;
    debug_assert_eq!(base.indices, perturbed.indices);
    let delta_norms = base
        .weights
        .iter()
        .zip(&perturbed.weights)
        .map(|(a, b)| dist(a, b))
        .collect();
    let cases = base
        .indices
        .iter()
        .map(|&n| StepCase::classify(rf, vertex, n))
        .collect();
    let c = obj.constants();
    Ok(CoupledTrace {
        regime: regime(cfg.step, c.lambda, c.gamma),
        base,
        perturbed,
        vertex,
        delta_norms,
        cases,
    })
}

/// Right-hand side of the per-step divergence bound for one step.
///
/// Strongly convex objectives use the contraction `1 − αλγ/(λ+γ)`; the
/// in-field step uses `α²λ` in the small-step regime. Otherwise the
/// expansion `1 + αλ` applies.
pub fn case_bound(
    case: StepCase,
    prev: f64,
    alpha: f64,
    c: &ConstantsCertificate,
    strongly_convex: bool,
) -> f64 {
    let (l, g) = (c.lambda, c.gamma);
    let data = alpha * c.sample_diameter * c.zeta;
    let hit = prev + 2.0 * alpha * c.lipschitz;
    if strongly_convex {
        let contraction = 1.0 - alpha * l * g / (l + g);
        match case {
            StepCase::InField => match regime(alpha, l, g) {
                Regime::Small => alpha * alpha * l * prev + data,
                _ => contraction * prev + data,
            },
            StepCase::Hit => hit,
            StepCase::Outside => contraction * prev,
        }
    } else {
        let expansion = 1.0 + alpha * l;
        match case {
            StepCase::InField => expansion * prev + data,
            StepCase::Hit => hit,
            StepCase::Outside => expansion * prev,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnvelopeReport {
    pub steps: usize,
    pub violations: usize,
    /// max_t (‖δw_t‖ − bound_t), negative when every step holds with room.
    pub max_excess: f64,
    pub first_violation: Option<usize>,
}

/// Rechecks every step of a coupled trace against [`case_bound`].
pub fn envelope_check(trace: &CoupledTrace, obj: &Objective, tol: f64) -> EnvelopeReport {
    let c = obj.constants();
    let strongly = obj.is_convex() && c.gamma > 0.0;
    let mut rep = EnvelopeReport {
        max_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    for t in 1..trace.delta_norms.len() {
        let alpha = trace.base.config.step_at(t);
        let b = case_bound(trace.cases[t - 1], trace.delta_norms[t - 1], alpha, c, strongly);
        let excess = trace.delta_norms[t] - b;
        rep.steps += 1;
        rep.max_excess = rep.max_excess.max(excess);
        if excess > tol {
            rep.violations += 1;
            rep.first_violation.get_or_insert(t);
        }
    }
    rep
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ContractionReport {
    pub max_ratio: f64,
    /// ratio ≤ 1 + αλ.
    pub expansive_ok: bool,
    /// ratio ≤ 1; `None` unless convex and α ≤ 2/λ.
    pub nonexpansive_ok: Option<bool>,
    /// ratio ≤ 1 − αλγ/(λ+γ); `None` unless γ > 0 and α ≤ 2/(λ+γ).
    pub contractive_ok: Option<bool>,
    pub contraction_factor: f64,
}

/// Empirical Lipschitz constant of the unprojected update map w ↦ w − α∇f.
pub fn contraction_check(obj: &Objective, alpha: f64, trials: usize, seed: u64) -> ContractionReport {
    let mut rng = rng_from(seed);
    let r = obj.domain().radius;
    let mut max_ratio = 0.0f64;
    let map = |s: &LocalSample, w: &[f64]| -> Vec<f64> {
        w.iter().zip(obj.gradient(s, w)).map(|(a, g)| a - alpha * g).collect()
    };
    for _ in 0..trials {
        let s = random_local_sample(obj, &mut rng);
        let w = random_in_ball(&mut rng, obj.dim(), r);
        let w2 = random_in_ball(&mut rng, obj.dim(), r);
        let d = dist(&w, &w2);
        if d > 0.0 {
            max_ratio = max_ratio.max(dist(&map(&s, &w), &map(&s, &w2)) / d);
        }
    }
    let c = obj.constants();
    let (l, g) = (c.lambda, c.gamma);
    let factor = 1.0 - alpha * l * g / (l + g);
    let tol = 1e-9;
    ContractionReport {
        max_ratio,
        expansive_ok: max_ratio <= 1.0 + alpha * l + tol,
        nonexpansive_ok: (obj.is_convex() && alpha <= 2.0 / l).then(|| max_ratio <= 1.0 + tol),
        contractive_ok: (obj.is_convex() && g > 0.0 && alpha <= 2.0 / (l + g))
            .then(|| max_ratio <= factor + tol),
        contraction_factor: factor,
    }
}

/// First step t ≥ 1 whose receptive field contains `i`, if any.
pub fn first_visit(indices: &[usize], rf: &ReceptiveFieldMap, i: usize) -> Option<usize> {
    indices.iter().position(|&n| rf.contains(n, i)).map(|p| p + 1)
}

/// Survival curve of the first visit time Γ to vertex i over `runs`
/// independent index streams: `(t, P̂(Γ > t), (1 − d_i)^t, standard error)`.
pub fn visit_survival(
    rf: &ReceptiveFieldMap,
    i: usize,
    runs: usize,
    horizon: usize,
    seed: u64,
) -> Vec<(usize, f64, f64, f64)> {
    let n = rf.num_vertices();
    let d_i = rf.cardinality(i) as f64 / n as f64;
    let firsts: Vec<Option<usize>> = (0..runs)
        .map(|k| {
            let s = crate::rng::derive(seed, "sgd/visit", k as u64);
            first_visit(&index_stream(n, horizon, s), rf, i)
        })
        .collect();
    (0..=horizon)
        .map(|t| {
            let surv = firsts.iter().filter(|f| f.is_none_or(|v| v > t)).count() as f64 / runs as f64;
            let p = (1.0 - d_i).powi(t as i32);
            (t, surv, p, (p * (1.0 - p) / runs as f64).sqrt())
        })
        .collect()
}
