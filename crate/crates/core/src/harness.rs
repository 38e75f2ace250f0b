//! Monte Carlo and exhaustive estimation of multi-fidelity stability,
//! m-graph uniform stability and the generalization gap.
//!
//! All estimates are maxima over finitely many draws, hence lower estimates
//! of the definitional suprema. Perturbation pairs and test sets come from
//! independent seed streams; pair `k` always uses `derive(seed, "pair", k)`,
//! so increasing K only adds pairs.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::ReceptiveFieldMap;
use crate::objective::{local_samples, LocalSample, Objective};
use crate::rng::derive;
use crate::sampler::{IsingSpec, ReplaceMode, SampleSet, VertexSample, VertexSource};
use crate::sgd::{final_weights_on_locals, index_stream, SgdConfig};

/// A deterministic learning algorithm with a per-vertex loss.
pub trait Learner: Sync {
    type Model: Send + Sync + PartialEq;

    fn id(&self) -> String;

    /// Trains on one or more sample sets (pooled vertices).
    fn fit(&self, train: &[SampleSet], seed: u64) -> Result<Self::Model>;

    /// L(h(𝒯′_j), Y′_j) on a test set.
    fn vertex_loss(&self, model: &Self::Model, test: &SampleSet, j: usize) -> f64;

    fn loss_bound(&self) -> f64;

    fn losses(&self, model: &Self::Model, test: &SampleSet) -> Vec<f64> {
        (0..test.len()).map(|j| self.vertex_loss(model, test, j)).collect()
    }
}

/// T-step SGD on an objective; the loss is the objective itself.
#[derive(Debug, Clone)]
pub struct SgdLearner {
    pub objective: Objective,
    pub rf: ReceptiveFieldMap,
    pub step: f64,
    pub steps: usize,
}

impl SgdLearner {
    pub fn new(objective: Objective, rf: ReceptiveFieldMap, step: f64, steps: usize) -> Self {
        SgdLearner {
            objective,
            rf,
            step,
            steps,
        }
    }

    pub fn config(&self, seed: u64) -> SgdConfig {
        SgdConfig::new(self.step, self.steps, seed)
    }
}

impl Learner for SgdLearner {
    type Model = Vec<f64>;

    fn id(&self) -> String {
        format!("sgd/{}/alpha={}/T={}", self.objective.name(), self.step, self.steps)
    }

    fn fit(&self, train: &[SampleSet], seed: u64) -> Result<Vec<f64>> {
        let locals: Vec<LocalSample> = train.iter().flat_map(|z| local_samples(z, &self.rf)).collect();
        if locals.is_empty() {
            return Err(Error::InvalidArgument("empty training data".into()));
        }
        let indices = index_stream(locals.len(), self.steps, seed);
        final_weights_on_locals(&locals, &indices, &self.objective, &self.config(seed))
    }

    fn vertex_loss(&self, model: &Vec<f64>, test: &SampleSet, j: usize) -> f64 {
        self.objective.evaluate(&LocalSample::gather(test, &self.rf, j), model)
    }

    fn loss_bound(&self) -> f64 {
        self.objective.constants().loss_bound
    }
}

/// Predicts a fixed value regardless of the data; loss (c − y)².
#[derive(Debug, Clone, Copy)]
pub struct ConstantLearner {
    pub value: f64,
    pub b_y: f64,
}

impl Learner for ConstantLearner {
    type Model = f64;

    fn id(&self) -> String {
        format!("constant/{}", self.value)
    }

    fn fit(&self, _train: &[SampleSet], _seed: u64) -> Result<f64> {
        Ok(self.value)
    }

    fn vertex_loss(&self, model: &f64, test: &SampleSet, j: usize) -> f64 {
        (model - test.samples[j].y).powi(2)
    }

    fn loss_bound(&self) -> f64 {
        (self.value.abs() + self.b_y).powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StabilityEstimate {
    pub beta1_i: Vec<f64>,
    pub beta2_i: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub mu: Option<f64>,
    pub discrepancy: f64,
    /// Perturbation pairs K.
    pub pairs: usize,
    /// Test sets K′.
    pub test_sets: usize,
    pub seed: u64,
    pub algorithm: String,
}

impl StabilityEstimate {
    fn from_vertices(beta1_i: Vec<f64>, beta2_i: Vec<f64>, pairs: usize, test_sets: usize, seed: u64, algorithm: String) -> Self {
        let beta1 = beta1_i.iter().copied().fold(0.0, f64::max);
        let beta2 = beta2_i.iter().copied().fold(0.0, f64::max);
        StabilityEstimate {
            beta1_i,
            beta2_i,
            beta1,
            beta2,
            mu: None,
            discrepancy: beta2 - beta1,
            pairs,
            test_sets,
            seed,
            algorithm,
        }
    }

    /// CSV: `i,beta1_i,beta2_i,K,K_test,seed`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "i,beta1_i,beta2_i,K,K_test,seed")?;
        for (i, (b1, b2)) in self.beta1_i.iter().zip(&self.beta2_i).enumerate() {
            writeln!(w, "{i},{b1},{b2},{},{},{}", self.pairs, self.test_sets, self.seed)?;
        }
        Ok(())
    }
}

fn replace_seed(seed: u64, pair: usize, graph: usize, vertex: usize) -> u64 {
    let base = derive(seed, "replace", pair as u64);
    let base = if graph == 0 { base } else { derive(base, "graph", graph as u64) };
    derive(base, "vertex", vertex as u64)
}

fn fit_seed(seed: u64, pair: usize) -> u64 {
    derive(seed, "fit", pair as u64)
}

/// Test sets: K′ fresh draws plus one set per extreme candidate index.
fn test_sets(source: &dyn VertexSource, k_test: usize, seed: u64) -> Result<Vec<SampleSet>> {
    let mut out: Vec<SampleSet> = (0..k_test)
        .map(|t| source.draw(derive(seed, "test", t as u64)))
        .collect::<Result<_>>()?;
    if let Some(template) = out.first().cloned() {
        let n = source.num_vertices();
        let cands: Vec<Vec<VertexSample>> = (0..n).map(|j| source.extreme_candidates(j)).collect();
        let count = cands.iter().map(Vec::len).min().unwrap_or(0);
        for c in 0..count {
            let mut set = template.clone();
            for (j, cj) in cands.iter().enumerate() {
                set.samples[j] = cj[c].clone();
            }
            set.spins = None;
            out.push(set);
        }
    }
    Ok(out)
}

fn check_counts(k: usize, k_test: usize) -> Result<()> {
    if k == 0 || k_test == 0 {
        Err(Error::InvalidArgument("need K ≥ 1 and K′ ≥ 1".into()))
    } else {
        Ok(())
    }
}

fn check_determinism<L: Learner>(alg: &L, z: &SampleSet, seed: u64) -> Result<()> {
    if alg.fit(std::slice::from_ref(z), seed)? != alg.fit(std::slice::from_ref(z), seed)? {
        return Err(Error::NonDeterministic(format!(
            "{} returned different models for identical inputs",
            alg.id()
        )));
    }
    Ok(())
}

/// Per-vertex (β̂₁, β̂₂) maxima for the given vertices over one pair.
fn pair_maxima<L: Learner>(
    alg: &L,
    source: &dyn VertexSource,
    rf: &ReceptiveFieldMap,
    vertices: &[usize],
    tests: &[SampleSet],
    pair: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let z = source.draw(derive(seed, "pair", pair as u64))?;
    let fs = fit_seed(seed, pair);
    let model = alg.fit(std::slice::from_ref(&z), fs)?;
    let base: Vec<Vec<f64>> = tests.iter().map(|t| alg.losses(&model, t)).collect();
    vertices
        .iter()
        .map(|&i| {
            let zi = source.replace(&z, &[i], ReplaceMode::FreshMarginal, replace_seed(seed, pair, 0, i))?;
            let mi = alg.fit(std::slice::from_ref(&zi), fs)?;
            let (mut b1, mut b2) = (0.0f64, 0.0f64);
            for (t, bl) in tests.iter().zip(&base) {
                for (j, (a, b)) in bl.iter().zip(alg.losses(&mi, t)).enumerate() {
                    let d = (a - b).abs();
                    b2 = b2.max(d);
                    if !rf.contains(i, j) {
                        b1 = b1.max(d);
                    }
                }
            }
            Ok((b1, b2))
        })
        .collect()
}

fn estimate_for<L: Learner>(
    alg: &L,
    source: &dyn VertexSource,
    rf: &ReceptiveFieldMap,
    vertices: &[usize],
    k: usize,
    k_test: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    check_counts(k, k_test)?;
    if let Some(&i) = vertices.iter().find(|&&i| i >= source.num_vertices()) {
        return Err(Error::IndexOutOfRange { index: i, n: source.num_vertices() });
    }
    let probe = source.draw(derive(seed, "pair", 0))?;
    check_determinism(alg, &probe, fit_seed(seed, 0))?;
    let tests = test_sets(source, k_test, seed)?;
    let per_pair: Vec<Vec<(f64, f64)>> = (0..k)
        .into_par_iter()
        .map(|p| pair_maxima(alg, source, rf, vertices, &tests, p, seed))
        .collect::<Result<_>>()?;
    let mut out = vec![(0.0f64, 0.0f64); vertices.len()];
    for pair in per_pair {
        for (o, (b1, b2)) in out.iter_mut().zip(pair) {
            o.0 = o.0.max(b1);
            o.1 = o.1.max(b2);
        }
    }
    Ok(out)
}

/// (β̂_{1,i}, β̂_{2,i}) from K perturbation pairs and K′ test sets.
pub fn estimate_vertex_stability<L: Learner>(
    alg: &L,
    source: &dyn VertexSource,
    rf: &ReceptiveFieldMap,
    i: usize,
    k: usize,
    k_test: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    Ok(estimate_for(alg, source, rf, &[i], k, k_test, seed)?[0])
}

/// Stability estimates for every vertex.
pub fn estimate_stability<L: Learner>(
    alg: &L,
    source: &dyn VertexSource,
    rf: &ReceptiveFieldMap,
    k: usize,
    k_test: usize,
    seed: u64,
) -> Result<StabilityEstimate> {
    let vertices: Vec<usize> = (0..source.num_vertices()).collect();
    let est = estimate_for(alg, source, rf, &vertices, k, k_test, seed)?;
    let (b1, b2): (Vec<f64>, Vec<f64>) = est.into_iter().unzip();
    Ok(StabilityEstimate::from_vertices(b1, b2, k, k_test, seed, alg.id()))
}

/// m-graph uniform stability μ̂: sup over pool sizes m′ = 1..=m, over which
/// pooled graph is perturbed and over all of its vertices.
///
/// The first graph of pair k is the same draw the β̂ pipeline uses, so with
/// m = 1 this reproduces β̂₂ on shared seeds.
pub fn estimate_mu<L: Learner>(
    alg: &L,
    source: &dyn VertexSource,
    m: usize,
    k: usize,
    k_test: usize,
    seed: u64,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    check_counts(k, k_test)?;
    let n = source.num_vertices();
    let tests = test_sets(source, k_test, seed)?;
    let per_pair: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|p| -> Result<f64> {
            let mut pool = vec![source.draw(derive(seed, "pair", p as u64))?];
            for l in 1..m {
                pool.push(source.draw(derive(derive(seed, "pair-extra", p as u64), "graph", l as u64))?);
            }
            let fs = fit_seed(seed, p);
            let mut best = 0.0f64;
            for size in 1..=m {
                let train = &pool[..size];
                let model = alg.fit(train, fs)?;
                let base: Vec<Vec<f64>> = tests.iter().map(|t| alg.losses(&model, t)).collect();
                for l in 0..size {
                    for i in 0..n {
                        let mut pert = train.to_vec();
                        pert[l] = source.replace(&train[l], &[i], ReplaceMode::FreshMarginal, replace_seed(seed, p, l, i))?;
                        let mi = alg.fit(&pert, fs)?;
                        for (t, bl) in tests.iter().zip(&base) {
                            for (a, b) in bl.iter().zip(alg.losses(&mi, t)) {
                                best = best.max((a - b).abs());
                            }
                        }
                    }
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok(per_pair.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GapSample {
    /// R̂_test − R̂_train.
    pub phi: f64,
    pub train_risk: f64,
    pub test_risk: f64,
    pub test_graphs: usize,
    pub seed: u64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Φ̂ = R̂_test − R̂_train over `trials` fresh training sets.
pub fn estimate_generalization_gap<L: Learner>(
    alg: &L,
    source: &dyn VertexSource,
    test_graphs: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<GapSample>> {
    if test_graphs == 0 {
        return Err(Error::InvalidArgument("need at least one test graph".into()));
    }
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = derive(seed, "gap", t as u64);
            let z = source.draw(s)?;
            let model = alg.fit(std::slice::from_ref(&z), derive(s, "fit", 0))?;
            let train_risk = mean(&alg.losses(&model, &z));
            let test_risk = (0..test_graphs)
                .map(|g| Ok(mean(&alg.losses(&model, &source.draw(derive(s, "test", g as u64))?))))
                .collect::<Result<Vec<f64>>>()
                .map(|v| mean(&v))?;
            Ok(GapSample {
                phi: test_risk - train_risk,
                train_risk,
                test_risk,
                test_graphs,
                seed: s,
            })
        })
        .collect()
}

/// Every configuration of a small Gibbs family, with probabilities, and the
/// marginal support of each vertex sample.
#[derive(Debug, Clone)]
pub struct ExhaustiveSpace {
    pub states: Vec<(SampleSet, f64)>,
    pub candidates: Vec<Vec<VertexSample>>,
}

/// Largest N handled by [`ExhaustiveSpace`].
pub const EXHAUSTIVE_MAX_N: usize = 8;

impl ExhaustiveSpace {
    pub fn from_ising(spec: &IsingSpec) -> Result<Self> {
        let n = spec.n();
        if n > EXHAUSTIVE_MAX_N {
            return Err(Error::Capacity(format!(
                "exhaustive mode supports N ≤ {EXHAUSTIVE_MAX_N}, got {n}"
            )));
        }
        let states: Vec<(SampleSet, f64)> = spec
            .enumerate_states()?
            .into_iter()
            .map(|(s, p)| (spec.sample_set(s, 0), p))
            .collect();
        let mut candidates: Vec<Vec<VertexSample>> = vec![Vec::new(); n];
        for (z, _) in &states {
            for (i, c) in candidates.iter_mut().enumerate() {
                if !c.contains(&z.samples[i]) {
                    c.push(z.samples[i].clone());
                }
            }
        }
        Ok(ExhaustiveSpace { states, candidates })
    }

    pub fn n(&self) -> usize {
        self.candidates.len()
    }

    /// Draws a configuration by inverse CDF on a uniform number in [0, 1).
    pub fn sample(&self, u: f64) -> &SampleSet {
        let mut acc = 0.0;
        for (z, p) in &self.states {
            acc += p;
            if u < acc {
                return z;
            }
        }
        &self.states.last().expect("non-empty state space").0
    }
}

/// Exact risk E_{Z′}[(1/N) Σ_j L(h, Z′_j)].
pub fn exact_risk<L: Learner>(alg: &L, model: &L::Model, space: &ExhaustiveSpace) -> f64 {
    space
        .states
        .iter()
        .map(|(z, p)| p * mean(&alg.losses(model, z)))
        .sum()
}

/// Exact (β₁, β₂) over every configuration in the support, every replacement
/// of vertex i by a value in its marginal support, and every test
/// configuration.
pub fn exhaustive_stability<L: Learner>(
    alg: &L,
    space: &ExhaustiveSpace,
    rf: &ReceptiveFieldMap,
    fit_seed: u64,
) -> Result<StabilityEstimate> {
    let n = space.n();
    let tests: Vec<&SampleSet> = space.states.iter().map(|(z, _)| z).collect();
    let table = |m: &L::Model| -> Vec<Vec<f64>> { tests.iter().map(|t| alg.losses(m, t)).collect() };
    let per_state: Vec<Vec<(f64, f64)>> = space
        .states
        .par_iter()
        .map(|(z, _)| -> Result<Vec<(f64, f64)>> {
            let base = table(&alg.fit(std::slice::from_ref(z), fit_seed)?);
            (0..n)
                .map(|i| {
                    let (mut b1, mut b2) = (0.0f64, 0.0f64);
                    for c in &space.candidates[i] {
                        if *c == z.samples[i] {
                            continue;
                        }
                        let mut zi = z.clone();
                        zi.samples[i] = c.clone();
                        zi.spins = None;
                        let pert = table(&alg.fit(std::slice::from_ref(&zi), fit_seed)?);
                        for (ra, rb) in base.iter().zip(&pert) {
                            for (j, (a, b)) in ra.iter().zip(rb).enumerate() {
                                let d = (a - b).abs();
                                b2 = b2.max(d);
                                if !rf.contains(i, j) {
                                    b1 = b1.max(d);
                                }
                            }
                        }
                    }
                    Ok((b1, b2))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut b1 = vec![0.0f64; n];
    let mut b2 = vec![0.0f64; n];
    for s in per_state {
        for (i, (a, b)) in s.into_iter().enumerate() {
            b1[i] = b1[i].max(a);
            b2[i] = b2[i].max(b);
        }
    }
    Ok(StabilityEstimate::from_vertices(b1, b2, space.states.len(), tests.len(), fit_seed, alg.id()))
}

/// Largest loss shift sup |L(h_Z) − L(h_{Z^Λ})| over supported Z, every
/// replacement of the Λ samples by values in their marginal supports, every
/// test configuration and vertex.
pub fn exhaustive_set_shift<L: Learner>(
    alg: &L,
    space: &ExhaustiveSpace,
    lambda: &[usize],
    fit_seed: u64,
) -> Result<f64> {
    let tests: Vec<&SampleSet> = space.states.iter().map(|(z, _)| z).collect();
    let table = |m: &L::Model| -> Vec<Vec<f64>> { tests.iter().map(|t| alg.losses(m, t)).collect() };
    let choices: Vec<&Vec<VertexSample>> = lambda.iter().map(|&i| &space.candidates[i]).collect();
    let combos: usize = choices.iter().map(|c| c.len()).product();
    let shifts: Vec<f64> = space
        .states
        .par_iter()
        .map(|(z, _)| -> Result<f64> {
            let base = table(&alg.fit(std::slice::from_ref(z), fit_seed)?);
            let mut best = 0.0f64;
            for mut code in 0..combos {
                let mut zl = z.clone();
                zl.spins = None;
                for (&i, c) in lambda.iter().zip(&choices) {
                    zl.samples[i] = c[code % c.len()].clone();
                    code /= c.len();
                }
                let pert = table(&alg.fit(std::slice::from_ref(&zl), fit_seed)?);
                for (ra, rb) in base.iter().zip(&pert) {
                    for (a, b) in ra.iter().zip(rb) {
                        best = best.max((a - b).abs());
                    }
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok(shifts.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::objective::make_strongly_convex_objective;
    use crate::sampler::IidSpec;

    fn sgd(n: usize, steps: usize) -> (SgdLearner, IidSpec) {
        let rf = ReceptiveFieldMap::one_hop(&Graph::cycle(n));
        let obj = make_strongly_convex_objective(2, 2.0, 0.5, 1.0, 1.0).unwrap();
        (SgdLearner::new(obj, rf, 0.05, steps), IidSpec::new(n, 2))
    }

    #[test]
    fn constant_learner_is_perfectly_stable() {
        let src = IidSpec::new(6, 2);
        let rf = ReceptiveFieldMap::one_hop(&Graph::cycle(6));
        let alg = ConstantLearner { value: 0.2, b_y: 1.0 };
        let e = estimate_stability(&alg, &src, &rf, 4, 3, 1).unwrap();
        assert_eq!((e.beta1, e.beta2), (0.0, 0.0));
        assert_eq!(estimate_mu(&alg, &src, 2, 3, 2, 1).unwrap(), 0.0);
    }

    #[test]
    fn zero_steps_is_perfectly_stable() {
        let (alg, src) = sgd(6, 0);
        let e = estimate_stability(&alg, &src, &alg.rf, 4, 3, 1).unwrap();
        assert_eq!(e.beta2, 0.0);
    }

    #[test]
    fn ordering_and_bounds() {
        let (alg, src) = sgd(8, 100);
        let e = estimate_stability(&alg, &src, &alg.rf, 6, 4, 2).unwrap();
        assert!(e.beta1 <= e.beta2);
        assert!(e.beta2 <= alg.loss_bound());
        assert!(e.beta1_i.iter().zip(&e.beta2_i).all(|(a, b)| a <= b));
        assert!(e.beta2 > 0.0);
    }

    #[test]
    fn monotone_in_pairs() {
        let (alg, src) = sgd(6, 60);
        let small = estimate_vertex_stability(&alg, &src, &alg.rf, 2, 8, 3, 5).unwrap();
        let large = estimate_vertex_stability(&alg, &src, &alg.rf, 2, 64, 3, 5).unwrap();
        assert!(large.1 >= small.1 && large.0 >= small.0);
    }

    #[test]
    fn vertex_and_all_vertex_estimates_agree() {
        let (alg, src) = sgd(6, 60);
        let all = estimate_stability(&alg, &src, &alg.rf, 5, 3, 9).unwrap();
        let one = estimate_vertex_stability(&alg, &src, &alg.rf, 4, 5, 3, 9).unwrap();
        assert_eq!((all.beta1_i[4], all.beta2_i[4]), one);
    }

    #[test]
    fn mu_reduces_to_beta2_and_dominates_it() {
        let (alg, src) = sgd(5, 40);
        let e = estimate_stability(&alg, &src, &alg.rf, 4, 3, 7).unwrap();
        let mu1 = estimate_mu(&alg, &src, 1, 4, 3, 7).unwrap();
        assert_eq!(mu1, e.beta2);
        let mu2 = estimate_mu(&alg, &src, 2, 4, 3, 7).unwrap();
        assert!(mu2 >= e.beta2);
    }

    struct Flaky(std::sync::atomic::AtomicU64);

    impl Learner for Flaky {
        type Model = u64;
        fn id(&self) -> String {
            "flaky".into()
        }
        fn fit(&self, _: &[SampleSet], _: u64) -> Result<u64> {
            Ok(self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst))
        }
        fn vertex_loss(&self, _: &u64, _: &SampleSet, _: usize) -> f64 {
            0.0
        }
        fn loss_bound(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn nondeterministic_learner_rejected() {
        let src = IidSpec::new(4, 1);
        let rf = ReceptiveFieldMap::one_hop(&Graph::cycle(4));
        let r = estimate_stability(&Flaky(Default::default()), &src, &rf, 2, 2, 0);
        assert!(matches!(r, Err(Error::NonDeterministic(_))));
    }

    #[test]
    fn constant_learner_gap_is_centered() {
        let src = IidSpec::new(10, 2).with_label_noise(1.0);
        let alg = ConstantLearner { value: 0.0, b_y: 1.0 };
        let gaps = estimate_generalization_gap(&alg, &src, 4, 400, 3).unwrap();
        let phis: Vec<f64> = gaps.iter().map(|g| g.phi).collect();
        let m = mean(&phis);
        let sd = (phis.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (phis.len() - 1) as f64).sqrt();
        assert!(m.abs() <= 3.0 * sd / (phis.len() as f64).sqrt());
        assert!(phis.iter().all(|p| p.abs() <= alg.loss_bound()));
    }

    #[test]
    fn exhaustive_matches_definitions_on_tiny_instance() {
        let g = Graph::path(4);
        let rf = ReceptiveFieldMap::one_hop(&g);
        let spec = IsingSpec::on_graph(&g, 0.3, 0.1).unwrap().with_features(2, 1.0);
        let space = ExhaustiveSpace::from_ising(&spec).unwrap();
        assert_eq!(space.states.len(), 16);
        assert!((space.states.iter().map(|s| s.1).sum::<f64>() - 1.0).abs() < 1e-12);
        let obj = make_strongly_convex_objective(2, 2.0, 0.5, 1.0, 1.0).unwrap();
        let alg = SgdLearner::new(obj, rf.clone(), 0.1, 30);
        let exact = exhaustive_stability(&alg, &space, &rf, 4).unwrap();
        assert!(exact.beta1 <= exact.beta2 && exact.beta2 > 0.0);
        // Monte Carlo with the same fit seed never exceeds the exhaustive value.
        let src = crate::sampler::IsingSampler::new(spec.with_burn_in(50));
        let mc = estimate_stability(&alg, &src, &rf, 8, 4, 4).unwrap();
        assert!(mc.beta2 <= alg.loss_bound());
        // Union check: a two-vertex replacement moves losses by at
        // most twice the single-vertex supremum.
        let shift = exhaustive_set_shift(&alg, &space, &[0, 2], 4).unwrap();
        assert!(shift <= 2.0 * exact.beta2 + 1e-12);
    }

    #[test]
    fn exhaustive_capacity() {
        let spec = IsingSpec::independent(vec![0.0; 9]);
        assert!(matches!(ExhaustiveSpace::from_ising(&spec), Err(Error::Capacity(_))));
    }

    #[test]
    fn estimate_csv_shape() {
        let (alg, src) = sgd(4, 10);
        let e = estimate_stability(&alg, &src, &alg.rf, 2, 2, 1).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
