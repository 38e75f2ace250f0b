//! Experiment kinds. All randomness comes from the master seed through the
//! named streams `sampler`, `sgd`, `harness` and `gnn`.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use graphstab::bounds::{
    bound_report, concentration_tail, expected_stability_per_vertex, geometric_series, highprob_stability_bound,
    BoundRegime, BoundReport, BoundValue, SgdBoundParams,
};
use graphstab::gnn::{gnn_stability_experiment, GnnExperiment, GnnMethod, PerturbationKind};
use graphstab::harness::{estimate_mu, estimate_stability, SgdLearner};
use graphstab::objective::{make_nonconvex_objective, make_strongly_convex_objective};
use graphstab::rng::{child_rng, derive};
use graphstab::sampler::{
    dobrushin_exact, glauber_states, IidSpec, IsingSampler, LabelRule, ReplaceMode, VertexSource,
};
use graphstab::sgd::{coupled_train, envelope_check};
use graphstab::srm::{fit_class_weighted, select_sparse, srm_report, DegreeClassFamily, SelectionMode, SparseLearner};
use graphstab::{ConstantsCertificate, Graph, IsingSpec, Objective, ReceptiveFieldMap, SampleSet};

use crate::config::{Config, BOUNDS_KEYS, KNOWN_KEYS};
use crate::output::Artifacts;
use crate::CliError;

pub fn run(path: &Path) -> Result<(), CliError> {
    let cfg = Config::load(path, KNOWN_KEYS)?;
    let seed: u64 = cfg.require("seed")?;
    let kind: String = cfg.require("kind")?;
    let start = Instant::now();
    let mut out = Artifacts::create(&cfg.output_dir(), &cfg.sha256)?;
    let ctx = Ctx { cfg: &cfg, seed };
    match kind.as_str() {
        "sample" => ctx.sample(&mut out)?,
        "train" => ctx.train(&mut out)?,
        "stability" => ctx.stability(&mut out)?,
        "compare" => ctx.compare(&mut out)?,
        "bounds" => ctx.bounds(&mut out)?,
        "gnn" => ctx.gnn(&mut out)?,
        "srm" => ctx.srm(&mut out)?,
        "concentration" => ctx.concentration(&mut out)?,
        other => return Err(CliError::Config(format!("unknown experiment kind `{other}`"))),
    }
    let manifest = serde_json::json!({
        "kind": kind,
        "seed": seed,
        "config_sha256": cfg.sha256,
        "config": cfg.values(),
        "versions": { "graphstab": env!("CARGO_PKG_VERSION") },
        "wall_time_secs": start.elapsed().as_secs_f64(),
        "files": out.files,
    });
    std::fs::write(out.dir().join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

struct Ctx<'a> {
    cfg: &'a Config,
    seed: u64,
}

/// Shown as `NA` in tables when a bound is gated.
fn cell(b: &BoundValue) -> String {
    b.value().map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl Ctx<'_> {
    fn stream(&self, name: &str, index: u64) -> u64 {
        derive(self.seed, name, index)
    }

    fn graph(&self) -> Result<Graph, CliError> {
        let kind = self.cfg.raw("graph.kind").unwrap_or("cycle");
        if kind == "edge_list" {
            let path = self
                .cfg
                .existing_path("graph.path")?
                .ok_or_else(|| CliError::Config("edge_list graph needs `graph.path`".into()))?;
            let text = std::fs::read_to_string(path)?;
            return Ok(Graph::parse_edge_list(&text, self.cfg.get("graph.n")?)?);
        }
        let n: usize = self.cfg.require("graph.n")?;
        Ok(match kind {
            "cycle" => Graph::cycle(n),
            "path" => Graph::path(n),
            "star" => Graph::star(n),
            "complete" => Graph::complete(n),
            "erdos_renyi" => Graph::erdos_renyi(n, self.cfg.require("graph.p")?, &mut child_rng(self.seed, "graph", 0)),
            other => return Err(CliError::Config(format!("unknown graph kind `{other}`"))),
        })
    }

    fn dim(&self) -> Result<usize, CliError> {
        self.cfg.or("sampler.dim", 2)
    }

    fn bounds_xy(&self) -> Result<(f64, f64), CliError> {
        Ok((self.cfg.or("sampler.b_x", 1.0)?, self.cfg.or("sampler.b_y", 1.0)?))
    }

    fn ising(&self, g: &Graph) -> Result<IsingSpec, CliError> {
        let (b_x, b_y) = self.bounds_xy()?;
        let rule = match self.cfg.raw("sampler.labels").unwrap_or("own_spin") {
            "own_spin" => LabelRule::OwnSpin,
            "field_mean" => LabelRule::FieldMean(ReceptiveFieldMap::one_hop(g)),
            other => return Err(CliError::Config(format!("unknown label rule `{other}`"))),
        };
        Ok(IsingSpec::on_graph(g, self.cfg.or("sampler.coupling", 0.2)?, self.cfg.or("sampler.field", 0.0)?)?
            .with_features(self.dim()?, b_x)
            .with_labels(rule, b_y)
            .with_burn_in(self.cfg.or("sampler.burn_in", 1000)?))
    }

    fn source(&self, g: &Graph) -> Result<Box<dyn VertexSource>, CliError> {
        let (b_x, b_y) = self.bounds_xy()?;
        match self.cfg.raw("sampler.kind").unwrap_or("iid") {
            "iid" => Ok(Box::new(
                IidSpec::new(g.num_vertices(), self.dim()?)
                    .with_bounds(b_x, b_y)
                    .with_label_noise(self.cfg.or("sampler.label_noise", 0.1)?),
            )),
            "ising" => Ok(Box::new(IsingSampler::new(self.ising(g)?))),
            other => Err(CliError::Config(format!("unknown sampler kind `{other}`"))),
        }
    }

    fn objective(&self) -> Result<Objective, CliError> {
        let (b_x, b_y) = self.bounds_xy()?;
        let lambda = self.cfg.or("objective.lambda", 2.0)?;
        Ok(match self.cfg.raw("objective.kind").unwrap_or("quadratic") {
            "quadratic" => make_strongly_convex_objective(self.dim()?, lambda, self.cfg.or("objective.gamma", 0.5)?, b_x, b_y)?,
            "ripple" => make_nonconvex_objective(self.dim()?, lambda, b_x, b_y, self.cfg.or("objective.amplitude", 1.0)?)?,
            other => return Err(CliError::Config(format!("unknown objective kind `{other}`"))),
        })
    }

    fn learner(&self, rf: &ReceptiveFieldMap) -> Result<SgdLearner, CliError> {
        Ok(SgdLearner::new(
            self.objective()?,
            rf.clone(),
            self.cfg.or("sgd.step", 0.05)?,
            self.cfg.or("sgd.steps", 200)?,
        ))
    }

    fn sizes(&self) -> Result<(usize, usize), CliError> {
        Ok((self.cfg.or("harness.pairs", 16)?, self.cfg.or("harness.test_sets", 8)?))
    }

    fn sample(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let g = self.graph()?;
        let z = self.source(&g)?.draw(self.stream("sampler", 0))?;
        out.csv("samples.csv", |w| z.write_csv(w))?;
        out.json(
            "summary.json",
            &serde_json::json!({ "n": z.len(), "dim": z.dim(), "empirical_diameter": z.empirical_diameter() }),
        )
    }

    fn train(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let g = self.graph()?;
        let rf = ReceptiveFieldMap::one_hop(&g);
        let src = self.source(&g)?;
        let alg = self.learner(&rf)?;
        let vertex: usize = self.cfg.or("harness.vertex", 0)?;
        let trials: usize = self.cfg.or("harness.trials", 1)?;
        if trials == 0 || vertex >= g.num_vertices() {
            return Err(CliError::Config("need harness.trials ≥ 1 and harness.vertex < N".into()));
        }
        let traces = (0..trials as u64)
            .into_par_iter()
            .map(|r| -> Result<_, CliError> {
                let z = src.draw(self.stream("sampler", r))?;
                let zi = src.replace(&z, &[vertex], ReplaceMode::FreshMarginal, self.stream("sampler/replace", r))?;
                Ok(coupled_train(&z, &zi, &rf, &alg.objective, &alg.config(self.stream("sgd", r)))?)
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.csv("trace.csv", |w| traces[0].write_csv(w))?;

        let p = SgdBoundParams::from_parts(&alg.objective, &rf, &alg.config(0))?;
        let gated = matches!(expected_stability_per_vertex(&p)[vertex], BoundValue::NotApplicable(_));
        #[derive(Serialize)]
        struct Row {
            t: usize,
            mean_delta: f64,
            max_delta: f64,
            envelope: String,
        }
        let rows: Vec<Row> = (0..=alg.steps)
            .map(|t| {
                let d: Vec<f64> = traces.iter().map(|tr| tr.delta_norms[t]).collect();
                let env = geometric_series(p.multiplier(vertex), t as u64) * p.additive_term(vertex);
                Row {
                    t,
                    mean_delta: d.iter().sum::<f64>() / d.len() as f64,
                    max_delta: d.iter().copied().fold(0.0, f64::max),
                    envelope: if gated { "NA".into() } else { env.to_string() },
                }
            })
            .collect();
        out.table("envelope.csv", &rows)?;
        let violations: usize = traces.iter().map(|tr| envelope_check(tr, &alg.objective, 1e-9).violations).sum();
        out.json(
            "summary.json",
            &serde_json::json!({ "trials": trials, "vertex": vertex, "step_envelope_violations": violations }),
        )
    }

    fn stability(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let g = self.graph()?;
        let rf = ReceptiveFieldMap::one_hop(&g);
        let src = self.source(&g)?;
        let alg = self.learner(&rf)?;
        let (k, kt) = self.sizes()?;
        let hs = self.stream("harness", 0);
        let mut est = estimate_stability(&alg, src.as_ref(), &rf, k, kt, hs)?;
        if let Some(m) = self.cfg.get::<usize>("harness.m")? {
            est.mu = Some(estimate_mu(&alg, src.as_ref(), m, k, kt, hs)?);
        }
        out.csv("stability.csv", |w| est.write_csv(w))?;
        out.json(
            "summary.json",
            &serde_json::json!({
                "beta1": est.beta1, "beta2": est.beta2, "mu": est.mu, "discrepancy": est.discrepancy,
                "algorithm": est.algorithm,
            }),
        )
    }

    fn compare(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let g = self.graph()?;
        let rf = ReceptiveFieldMap::one_hop(&g);
        let src = self.source(&g)?;
        let alg = self.learner(&rf)?;
        let (k, kt) = self.sizes()?;
        let est = estimate_stability(&alg, src.as_ref(), &rf, k, kt, self.stream("harness", 0))?;
        let p = SgdBoundParams::from_parts(&alg.objective, &rf, &alg.config(0))?;
        let expected = expected_stability_per_vertex(&p);
        let hp = highprob_stability_bound(&p, self.cfg.or("bounds.delta", 0.1)?)?;
        #[derive(Serialize)]
        struct Row {
            vertex: String,
            beta2_empirical: f64,
            expected_bound: String,
            highprob_bound: String,
            dominated: String,
        }
        let row = |vertex: String, b: f64, e: &BoundValue| Row {
            vertex,
            beta2_empirical: b,
            expected_bound: cell(e),
            highprob_bound: cell(&hp),
            dominated: e.value().map_or("NA".into(), |v| u8::from(b <= v).to_string()),
        };
        let mut rows: Vec<Row> =
            est.beta2_i.iter().zip(&expected).enumerate().map(|(i, (b, e))| row(i.to_string(), *b, e)).collect();
        let sup = graphstab::bounds::expected_stability_bound(&p, None);
        rows.push(row("sup".into(), est.beta2, &sup));
        out.table("compare.csv", &rows)
    }

    fn bounds(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let g = self.graph()?;
        let rf = ReceptiveFieldMap::one_hop(&g);
        let alg = self.learner(&rf)?;
        let p = SgdBoundParams::from_parts(&alg.objective, &rf, &alg.config(0))?;
        let report = bound_report(&p, self.cfg.or("bounds.delta", 0.1)?)?;
        write_bound_table(out, &report)?;
        out.json("bounds.json", &report)
    }

    fn gnn(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let kind = match self.cfg.raw("gnn.kind").unwrap_or("label") {
            "label" => PerturbationKind::Label,
            "feature" => PerturbationKind::Feature,
            other => return Err(CliError::Config(format!("unknown gnn perturbation `{other}`"))),
        };
        let method = match self.cfg.raw("gnn.method").unwrap_or("projected") {
            "projected" => GnnMethod::ProjectedClosedForm,
            "rowwise" => GnnMethod::ExactRowwise,
            other => return Err(CliError::Config(format!("unknown gnn method `{other}`"))),
        };
        let sizes: Vec<usize> = match self.cfg.raw("gnn.sizes") {
            Some(_) => self.cfg.list("gnn.sizes", &[])?,
            None => vec![self.cfg.require("graph.n")?],
        };
        let densities: Vec<f64> = self.cfg.list("gnn.densities", &[])?;
        let reps: usize = self.cfg.or("gnn.replicates", 1)?;
        let trials: usize = self.cfg.or("gnn.trials", 4)?;
        let eps: f64 = self.cfg.or("gnn.epsilon", 0.01)?;
        let mut jobs = Vec::new();
        for &n in &sizes {
            for d in densities.iter().map(|d| Some(*d)).chain(densities.is_empty().then_some(None)) {
                for r in 0..reps {
                    jobs.push((n, d, r));
                }
            }
        }
        #[derive(Serialize)]
        struct Row {
            n: usize,
            density: String,
            replicate: usize,
            sup_d: f64,
            inf_d: f64,
            kind: &'static str,
            beta1: f64,
            beta2: f64,
            discrepancy: f64,
            trials: usize,
            seed: u64,
        }
        let rows = jobs
            .par_iter()
            .enumerate()
            .map(|(idx, &(n, density, r))| -> Result<Row, CliError> {
                let s = self.stream("gnn", idx as u64);
                let g = match density {
                    Some(p) => Graph::erdos_renyi(n, p, &mut child_rng(s, "graph", 0)),
                    None if sizes.len() == 1 && self.cfg.raw("gnn.sizes").is_none() => self.graph()?,
                    None => Graph::cycle(n),
                };
                let exp = GnnExperiment::new(kind, trials, derive(s, "experiment", 0))
                    .with_method(method)
                    .with_epsilon(eps);
                let rep = gnn_stability_experiment(&g, &exp)?;
                Ok(Row {
                    n,
                    density: density.map_or("NA".into(), |d| d.to_string()),
                    replicate: r,
                    sup_d: rep.sup_d,
                    inf_d: rep.inf_d,
                    kind: kind.label(),
                    beta1: rep.beta1,
                    beta2: rep.beta2,
                    discrepancy: rep.discrepancy,
                    trials,
                    seed: rep.seed,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.table("gnn.csv", &rows)
    }

    fn srm(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let g = self.graph()?;
        let rf = ReceptiveFieldMap::one_hop(&g);
        let src = self.source(&g)?;
        let (_, b_y) = self.bounds_xy()?;
        let d_max: usize = self.cfg.or("srm.d_max", 3)?;
        let slack: f64 = self.cfg.or("srm.slack", 1.0)?;
        let mode = match self.cfg.raw("srm.mode").unwrap_or("penalized") {
            "penalized" => SelectionMode::Penalized,
            "truncated" => SelectionMode::Truncated(self.cfg.require("srm.degree")?),
            other => return Err(CliError::Config(format!("unknown srm mode `{other}`"))),
        };
        let (k, kt) = self.sizes()?;
        let base = DegreeClassFamily::new(&rf, d_max, self.dim()?, b_y)?;
        let per_class = (1..=d_max)
            .into_par_iter()
            .map(|d| {
                let alg = SparseLearner { family: &base, d };
                estimate_stability(&alg, src.as_ref(), &rf, k, kt, self.stream("harness", d as u64))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let family = base
            .clone()
            .with_stability(per_class.iter().map(|e| e.beta1).collect(), per_class.iter().map(|e| e.beta2).collect())?;
        let z = src.draw(self.stream("sampler", 0))?;
        let sel = select_sparse(&family, &z, slack, mode)?;
        out.csv("srm.csv", |w| sel.write_csv(w))?;

        let held_out = (0..kt as u64)
            .map(|t| src.draw(self.stream("sampler/test", t)))
            .collect::<Result<Vec<SampleSet>, _>>()?;
        let weighted: Vec<(&SampleSet, f64)> = held_out.iter().map(|z| (z, 1.0 / kt as f64)).collect();
        let comparators = (1..=d_max)
            .map(|d| fit_class_weighted(&family, &weighted, d))
            .collect::<Result<Vec<_>, _>>()?;
        let beta2 = family.beta2.iter().copied().fold(0.0, f64::max);
        let floor = graphstab::bounds::srm_epsilon_floor(beta2, slack, d_max);
        let epsilon = self.cfg.or("srm.epsilon", floor.max(0.5))?;
        let report = srm_report(
            &family,
            &sel,
            epsilon,
            self.cfg.or("srm.delta", 0.1)?,
            |w, d| family.risk(w, d, &weighted),
            &comparators,
        )?;
        out.json("srm.json", &report)
    }

    fn concentration(&self, out: &mut Artifacts) -> Result<(), CliError> {
        let g = self.graph()?;
        let spec = self.ising(&g)?;
        let alpha = dobrushin_exact(&spec)?;
        let states = spec.enumerate_states()?;
        // Φ = Σ z_i / 2 changes by at most 1 per coordinate.
        let phi = |s: &[i8]| s.iter().map(|&v| f64::from(v)).sum::<f64>() / 2.0;
        let mean: f64 = states.iter().map(|(s, p)| p * phi(s)).sum();
        let draws: usize = self.cfg.or("concentration.draws", 100_000)?;
        let burn = self.cfg.or("sampler.burn_in", 1000)?;
        let thin = self.cfg.or("concentration.thin", 5)?;
        let devs: Vec<f64> = glauber_states(&spec, burn, thin, draws, self.stream("sampler", 0))
            .iter()
            .map(|s| phi(s) - mean)
            .collect();
        let c = vec![1.0; spec.n()];
        let grid: Vec<f64> = self.cfg.list("concentration.grid", &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0])?;
        #[derive(Serialize)]
        struct Row {
            t: f64,
            empirical: f64,
            bound: f64,
        }
        let rows = grid
            .iter()
            .map(|&t| {
                Ok(Row {
                    t,
                    empirical: devs.iter().filter(|d| **d >= t).count() as f64 / draws.max(1) as f64,
                    bound: concentration_tail(&c, alpha, t)?.probability,
                })
            })
            .collect::<Result<Vec<_>, graphstab::Error>>()?;
        out.table("tail.csv", &rows)?;
        out.json("summary.json", &serde_json::json!({ "dobrushin": alpha, "mean_phi": mean, "draws": draws }))
    }
}

fn write_bound_table(out: &mut Artifacts, r: &BoundReport) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Row {
        quantity: String,
        value: String,
    }
    let mut rows = vec![
        Row { quantity: "expected_beta2".into(), value: cell(&r.expected_beta2) },
        Row { quantity: "highprob_beta2".into(), value: cell(&r.highprob_beta2) },
        Row { quantity: "generalization".into(), value: cell(&r.generalization) },
        Row { quantity: "variance_exact_sum".into(), value: r.variance.exact_sum.to_string() },
        Row { quantity: "variance_printed_sum".into(), value: r.variance.printed_sum.to_string() },
    ];
    for (name, c) in &r.conditions {
        rows.push(Row { quantity: format!("condition/{name}"), value: u8::from(c.passed).to_string() });
    }
    out.table("bounds.csv", &rows)
}

/// Builds a bound report from a standalone params file.
pub fn bounds_from_params(path: &Path) -> Result<BoundReport, CliError> {
    let cfg = Config::load(path, BOUNDS_KEYS)?;
    let regime = match cfg.raw("regime").unwrap_or("strongly_convex") {
        "strongly_convex" => BoundRegime::StronglyConvex,
        "nonconvex" => BoundRegime::NonConvex,
        other => return Err(CliError::Config(format!("unknown regime `{other}`"))),
    };
    let constants = ConstantsCertificate {
        lambda: cfg.require("lambda")?,
        gamma: cfg.or("gamma", 0.0)?,
        lipschitz: cfg.require("lipschitz")?,
        zeta: cfg.require("zeta")?,
        loss_bound: cfg.require("loss_bound")?,
        sample_diameter: cfg.require("sample_diameter")?,
        radius: cfg.or("radius", 1.0)?,
    };
    // Receptive-field cardinalities, one per vertex.
    let field_sizes: Vec<usize> = cfg.list("field_sizes", &[])?;
    let p = SgdBoundParams::new(constants, cfg.require("step")?, cfg.require("steps")?, field_sizes, regime)?;
    Ok(bound_report(&p, cfg.or("delta", 0.1)?)?)
}
