//! Vertex samplers: an independent baseline and a binary Gibbs (Ising) family
//! with exactly enumerable Dobrushin coefficient.
//!
//! Both samplers produce a [`SampleSet`] of per-vertex `(x, y)` pairs and can
//! replace the samples of a vertex subset Λ, realizing the perturbed sets
//! `Z^Λ` used by the stability definitions.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, ReceptiveFieldMap};
use crate::rng::{child_rng, derive};

/// Feature/label pair Z_i = (X_i, Y_i).
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl VertexSample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        VertexSample { x, y }
    }

    /// Euclidean distance between the stacked vectors (x, y).
    pub fn distance(&self, other: &VertexSample) -> f64 {
        let dx: f64 = self
            .x
            .iter()
            .zip(&other.x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (dx + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Where a sample set came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub sampler: String,
    pub seed: u64,
}

/// One draw of all N vertex samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<VertexSample>,
    /// Underlying spin configuration for Gibbs-generated sets.
    pub spins: Option<Vec<i8>>,
    pub provenance: Provenance,
    /// Λ: vertices replaced relative to the parent set (empty for fresh draws).
    pub perturbed: BTreeSet<usize>,
}

impl SampleSet {
    pub fn new(samples: Vec<VertexSample>, provenance: Provenance) -> Self {
        SampleSet {
            samples,
            spins: None,
            provenance,
            perturbed: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// Vertices where `self` and `other` hold different samples.
    pub fn differing_vertices(&self, other: &SampleSet) -> Vec<usize> {
        self.samples
            .iter()
            .zip(&other.samples)
            .enumerate()
            .filter_map(|(i, (a, b))| (a != b).then_some(i))
            .collect()
    }

    /// Largest pairwise distance between vertex samples.
    pub fn empirical_diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.samples.iter().enumerate() {
            for b in &self.samples[i + 1..] {
                best = best.max(a.distance(b));
            }
        }
        best
    }

    /// CSV: `vertex,x0,...,x{d-1},label,perturbed`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.dim();
        let mut header = vec!["vertex".to_string()];
        header.extend((0..d).map(|k| format!("x{k}")));
        header.push("label".into());
        header.push("perturbed".into());
        writeln!(w, "{}", header.join(","))?;
        for (i, s) in self.samples.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(s.x.iter().map(|v| v.to_string()));
            row.push(s.y.to_string());
            row.push(u8::from(self.perturbed.contains(&i)).to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Upper bound on sup_{i,j} ‖Z_i − Z_j‖ given feature and label bounds.
pub fn diameter_bound(b_x: f64, b_y: f64) -> f64 {
    2.0 * (b_x * b_x + b_y * b_y).sqrt()
}

/// How replaced vertices are redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplaceMode {
    /// From the marginal law of the replaced vertices.
    FreshMarginal,
    /// From the conditional law given all other vertices.
    FreshConditional,
}

/// Common interface of the samplers, used by the stability harness.
pub trait VertexSource: Sync {
    fn num_vertices(&self) -> usize;
    fn dim(&self) -> usize;
    fn draw(&self, seed: u64) -> Result<SampleSet>;
    fn replace(
        &self,
        z: &SampleSet,
        lambda: &[usize],
        mode: ReplaceMode,
        seed: u64,
    ) -> Result<SampleSet>;
    /// Sup of ‖Z_i − Z_j‖ over the sample space.
    fn diameter(&self) -> f64;
    /// Extreme replacement values for vertex `i`, tried in addition to random
    /// redraws when estimating suprema.
    fn extreme_candidates(&self, _i: usize) -> Vec<VertexSample> {
        Vec::new()
    }
}

fn check_lambda(z: &SampleSet, lambda: &[usize]) -> Result<()> {
    match lambda.iter().find(|&&i| i >= z.len()) {
        Some(&i) => Err(Error::IndexOutOfRange { index: i, n: z.len() }),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Independent sampler
// ---------------------------------------------------------------------------

/// Independent vertices: features uniform on the cube
/// `[−B_X/√dim, B_X/√dim]^dim` (so ‖x‖ ≤ B_X), labels
/// `B_y·((1−η)·s + η·u)` with `s` the normalized feature mean and `u` uniform
/// noise on [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct IidSpec {
    pub n: usize,
    pub dim: usize,
    pub b_x: f64,
    pub b_y: f64,
    pub label_noise: f64,
}

impl IidSpec {
    pub fn new(n: usize, dim: usize) -> Self {
        IidSpec {
            n,
            dim,
            b_x: 1.0,
            b_y: 1.0,
            label_noise: 0.5,
        }
    }

    pub fn with_bounds(mut self, b_x: f64, b_y: f64) -> Self {
        self.b_x = b_x;
        self.b_y = b_y;
        self
    }

    pub fn with_label_noise(mut self, eta: f64) -> Self {
        self.label_noise = eta;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dim must be at least 1".into()));
        }
        if !(self.b_x > 0.0 && self.b_y > 0.0) {
            return Err(Error::InvalidArgument("bounds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::InvalidArgument("label noise must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn draw_vertex(&self, rng: &mut ChaCha8Rng) -> VertexSample {
        let half = self.b_x / (self.dim as f64).sqrt();
        let x: Vec<f64> = (0..self.dim)
            .map(|_| rng.random_range(-half..=half))
            .collect();
        let s = x.iter().sum::<f64>() / (self.dim as f64 * half);
        let u: f64 = rng.random_range(-1.0..=1.0);
        let y = self.b_y * ((1.0 - self.label_noise) * s + self.label_noise * u);
        VertexSample::new(x, y.clamp(-self.b_y, self.b_y))
    }

    fn draw_vertex_seeded(&self, seed: u64, i: usize) -> VertexSample {
        self.draw_vertex(&mut child_rng(seed, "iid/vertex", i as u64))
    }
}

/// Draws N independent vertex samples (Dobrushin coefficient 0).
pub fn sample_iid(g: &Graph, spec: &IidSpec, seed: u64) -> Result<SampleSet> {
    let spec = IidSpec {
        n: g.num_vertices(),
        ..spec.clone()
    };
    spec.draw(seed)
}

impl VertexSource for IidSpec {
    fn num_vertices(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn draw(&self, seed: u64) -> Result<SampleSet> {
        self.validate()?;
        let samples = (0..self.n).map(|i| self.draw_vertex_seeded(seed, i)).collect();
        Ok(SampleSet::new(
            samples,
            Provenance {
                sampler: "iid".into(),
                seed,
            },
        ))
    }

    /// Both modes coincide for independent vertices.
    fn replace(
        &self,
        z: &SampleSet,
        lambda: &[usize],
        _mode: ReplaceMode,
        seed: u64,
    ) -> Result<SampleSet> {
        check_lambda(z, lambda)?;
        let mut out = z.clone();
        out.perturbed = lambda.iter().copied().collect();
        for &i in &out.perturbed {
            out.samples[i] = self.draw_vertex(&mut child_rng(seed, "iid/replace", i as u64));
        }
        Ok(out)
    }

    fn diameter(&self) -> f64 {
        diameter_bound(self.b_x, self.b_y)
    }

    fn extreme_candidates(&self, _i: usize) -> Vec<VertexSample> {
        let half = self.b_x / (self.dim as f64).sqrt();
        [1.0, -1.0]
            .iter()
            .flat_map(|&sx| {
                [1.0, -1.0].iter().map(move |&sy| {
                    VertexSample::new(vec![sx * half; self.dim], sy * self.b_y)
                })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Ising / Gibbs family
// ---------------------------------------------------------------------------

/// Label rule of the Gibbs family.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelRule {
    /// y_i = clamp(z_i, ±B_y).
    OwnSpin,
    /// y_i = clamp(mean of z_j over Ξ(i), ±B_y).
    FieldMean(ReceptiveFieldMap),
}

/// Binary spin Gibbs measure ∝ exp(Σ_{i<j} J_ij z_i z_j + Σ_i h_i z_i) with
/// a feature embedding and a label rule.
///
/// Spin z_i maps to the feature `z_i·B_X·e_{i mod dim}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingSpec {
    coupling: Vec<Vec<f64>>,
    field: Vec<f64>,
    pub dim: usize,
    pub b_x: f64,
    pub b_y: f64,
    pub label: LabelRule,
    /// Minimum number of full sweeps before a state is reported.
    pub burn_in: usize,
}

/// Largest N for which [`dobrushin_exact`] enumerates.
pub const DOBRUSHIN_EXACT_MAX_N: usize = 12;
/// Largest N for which the Gibbs measure is enumerated state by state.
pub const ENUMERATION_MAX_N: usize = 16;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl IsingSpec {
    pub fn new(coupling: Vec<Vec<f64>>, field: Vec<f64>) -> Result<Self> {
        let n = field.len();
        if coupling.len() != n || coupling.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument(format!(
                "coupling must be {n}x{n}"
            )));
        }
        for i in 0..n {
            if !field[i].is_finite() {
                return Err(Error::NonFinite(format!("external field h[{i}]")));
            }
            for j in 0..n {
                let v = coupling[i][j];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("coupling J[{i}][{j}]")));
                }
                if i == j && v != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "coupling diagonal J[{i}][{i}] must be zero"
                    )));
                }
                if v != coupling[j][i] {
                    return Err(Error::InvalidArgument(format!(
                        "coupling not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(IsingSpec {
            coupling,
            field,
            dim: 1,
            b_x: 1.0,
            b_y: 1.0,
            label: LabelRule::OwnSpin,
            burn_in: 1000,
        })
    }

    /// Product measure with external fields only.
    pub fn independent(field: Vec<f64>) -> Self {
        let n = field.len();
        IsingSpec::new(vec![vec![0.0; n]; n], field).expect("zero coupling is valid")
    }

    /// Uniform coupling `j` on the edges of `g`, uniform field `h`.
    pub fn on_graph(g: &Graph, j: f64, h: f64) -> Result<Self> {
        let n = g.num_vertices();
        let mut c = vec![vec![0.0; n]; n];
        for (a, b) in g.edges() {
            c[a][b] = j;
            c[b][a] = j;
        }
        IsingSpec::new(c, vec![h; n])
    }

    pub fn with_features(mut self, dim: usize, b_x: f64) -> Self {
        self.dim = dim.max(1);
        self.b_x = b_x;
        self
    }

    pub fn with_labels(mut self, rule: LabelRule, b_y: f64) -> Self {
        self.label = rule;
        self.b_y = b_y;
        self
    }

    pub fn with_burn_in(mut self, sweeps: usize) -> Self {
        self.burn_in = sweeps;
        self
    }

    pub fn n(&self) -> usize {
        self.field.len()
    }

    pub fn coupling(&self) -> &[Vec<f64>] {
        &self.coupling
    }

    pub fn field(&self) -> &[f64] {
        &self.field
    }

    /// Local field h_i + Σ_j J_ij z_j.
    pub fn local_field(&self, spins: &[i8], i: usize) -> f64 {
        self.field[i]
            + self.coupling[i]
                .iter()
                .zip(spins)
                .map(|(j, &z)| j * f64::from(z))
                .sum::<f64>()
    }

    /// P(z_i = +1 | rest).
    pub fn conditional_up(&self, spins: &[i8], i: usize) -> f64 {
        sigmoid(2.0 * self.local_field(spins, i))
    }

    /// Unnormalized log-density of a configuration.
    pub fn log_weight(&self, spins: &[i8]) -> f64 {
        let n = self.n();
        let mut e = 0.0;
        for i in 0..n {
            let zi = f64::from(spins[i]);
            e += self.field[i] * zi;
            for j in i + 1..n {
                e += self.coupling[i][j] * zi * f64::from(spins[j]);
            }
        }
        e
    }

    pub fn feature(&self, i: usize, spin: i8) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        x[i % self.dim] = f64::from(spin) * self.b_x;
        x
    }

    pub fn label_of(&self, spins: &[i8], i: usize) -> f64 {
        let raw = match &self.label {
            LabelRule::OwnSpin => f64::from(spins[i]),
            LabelRule::FieldMean(rf) => {
                let f = rf.field(i);
                f.iter().map(|&j| f64::from(spins[j])).sum::<f64>() / f.len() as f64
            }
        };
        raw.clamp(-self.b_y, self.b_y)
    }

    pub fn vertex_sample(&self, spins: &[i8], i: usize) -> VertexSample {
        VertexSample::new(self.feature(i, spins[i]), self.label_of(spins, i))
    }

    /// Builds the sample set induced by a spin configuration.
    pub fn sample_set(&self, spins: Vec<i8>, seed: u64) -> SampleSet {
        let samples = (0..self.n()).map(|i| self.vertex_sample(&spins, i)).collect();
        let mut set = SampleSet::new(
            samples,
            Provenance {
                sampler: "ising".into(),
                seed,
            },
        );
        set.spins = Some(spins);
        set
    }

    fn validate_sampling(&self) -> Result<()> {
        if let LabelRule::FieldMean(rf) = &self.label {
            if rf.num_vertices() != self.n() {
                return Err(Error::InvalidArgument(
                    "label receptive fields do not match vertex count".into(),
                ));
            }
        }
        Ok(())
    }

    /// All 2^N configurations with their normalized probabilities.
    pub fn enumerate_states(&self) -> Result<Vec<(Vec<i8>, f64)>> {
        let n = self.n();
        if n > ENUMERATION_MAX_N {
            return Err(Error::Capacity(format!(
                "state enumeration supports N ≤ {ENUMERATION_MAX_N}, got {n}"
            )));
        }
        let states: Vec<Vec<i8>> = (0..1u32 << n).map(|m| spins_of(m, n)).collect();
        let logw: Vec<f64> = states.iter().map(|s| self.log_weight(s)).collect();
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok(states.into_iter().zip(w.into_iter().map(|v| v / z)).collect())
    }
}

/// Spin configuration encoded by the bits of `mask` (bit set ↦ +1).
pub fn spins_of(mask: u32, n: usize) -> Vec<i8> {
    (0..n)
        .map(|i| if mask >> i & 1 == 1 { 1 } else { -1 })
        .collect()
}

/// Single-site heat-bath (Glauber) chain.
pub struct GlauberChain<'a> {
    spec: &'a IsingSpec,
    spins: Vec<i8>,
    rng: ChaCha8Rng,
}

impl<'a> GlauberChain<'a> {
    /// Starts from a uniformly random configuration.
    pub fn new(spec: &'a IsingSpec, seed: u64) -> Self {
        let mut rng = child_rng(seed, "glauber", 0);
        let spins = (0..spec.n())
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        GlauberChain { spec, spins, rng }
    }

    pub fn update(&mut self, i: usize) {
        let p = self.spec.conditional_up(&self.spins, i);
        self.spins[i] = if self.rng.random::<f64>() < p { 1 } else { -1 };
    }

    /// One systematic-scan sweep over all vertices.
    pub fn sweep(&mut self) {
        for i in 0..self.spins.len() {
            self.update(i);
        }
    }

    pub fn run(&mut self, sweeps: usize) {
        for _ in 0..sweeps {
            self.sweep();
        }
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }
}

/// Runs `sweeps` Glauber sweeps and returns the resulting sample set.
pub fn glauber_sample(spec: &IsingSpec, sweeps: usize, seed: u64) -> Result<SampleSet> {
    spec.validate_sampling()?;
    if sweeps < spec.burn_in {
        return Err(Error::InvalidArgument(format!(
            "{sweeps} sweeps is below the burn-in threshold {}",
            spec.burn_in
        )));
    }
    let mut chain = GlauberChain::new(spec, seed);
    chain.run(sweeps);
    Ok(spec.sample_set(chain.spins, seed))
}

/// `count` states from one chain: burn-in, then one state every `thin` sweeps.
pub fn glauber_states(
    spec: &IsingSpec,
    burn_in: usize,
    thin: usize,
    count: usize,
    seed: u64,
) -> Vec<Vec<i8>> {
    let mut chain = GlauberChain::new(spec, seed);
    chain.run(burn_in);
    (0..count)
        .map(|_| {
            chain.run(thin.max(1));
            chain.spins.clone()
        })
        .collect()
}

/// Exact Dobrushin coefficient α = max_{i≠j} I_ij by enumeration of the
/// conditioning configurations.
///
/// For binary spins the conditional of z_i is Bernoulli, so the total
/// variation between two conditionals is the difference of their up
/// probabilities.
pub fn dobrushin_exact(spec: &IsingSpec) -> Result<f64> {
    let n = spec.n();
    if n > DOBRUSHIN_EXACT_MAX_N {
        return Err(Error::Capacity(format!(
            "dobrushin_exact enumerates N ≤ {DOBRUSHIN_EXACT_MAX_N} (got {n}); use dobrushin_upper_bound"
        )));
    }
    let mut alpha = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let others: Vec<usize> = (0..n).filter(|&k| k != i && k != j).collect();
            let jij = spec.coupling[i][j];
            for mask in 0..1u32 << others.len() {
                let mut base = spec.field[i];
                for (b, &k) in others.iter().enumerate() {
                    let z = if mask >> b & 1 == 1 { 1.0 } else { -1.0 };
                    base += spec.coupling[i][k] * z;
                }
                let tv = (sigmoid(2.0 * (base + jij)) - sigmoid(2.0 * (base - jij))).abs();
                alpha = alpha.max(tv);
            }
        }
    }
    Ok(alpha)
}

/// max_i Σ_{j≠i} tanh(|J_ij|): bounds every influence I_ij (and every row
/// sum of the influence matrix) of a binary Gibbs measure.
pub fn dobrushin_upper_bound(spec: &IsingSpec) -> f64 {
    spec.coupling
        .iter()
        .map(|row| row.iter().map(|j| j.abs().tanh()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Replaces the vertices in Λ. See [`ReplaceMode`].
pub fn replace_vertices(
    source: &dyn VertexSource,
    z: &SampleSet,
    lambda: &[usize],
    mode: ReplaceMode,
    seed: u64,
) -> Result<SampleSet> {
    source.replace(z, lambda, mode, seed)
}

/// Gibbs sampler as a [`VertexSource`]: each draw is an independent chain run
/// for `spec.burn_in` sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingSampler {
    pub spec: IsingSpec,
}

impl IsingSampler {
    pub fn new(spec: IsingSpec) -> Self {
        IsingSampler { spec }
    }

    fn conditional_resample(&self, spins: &mut [i8], lambda: &[usize], rng: &mut ChaCha8Rng) {
        if lambda.len() <= 12 {
            // Exact draw from the joint conditional of the Λ spins.
            let weights: Vec<f64> = (0..1u32 << lambda.len())
                .map(|m| {
                    for (b, &i) in lambda.iter().enumerate() {
                        spins[i] = if m >> b & 1 == 1 { 1 } else { -1 };
                    }
                    self.spec.log_weight(spins)
                })
                .collect();
            let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = weights.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = w.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = w.len() - 1;
            for (m, wm) in w.iter().enumerate() {
                if u < *wm {
                    pick = m;
                    break;
                }
                u -= wm;
            }
            for (b, &i) in lambda.iter().enumerate() {
                spins[i] = if pick >> b & 1 == 1 { 1 } else { -1 };
            }
        } else {
            for _ in 0..self.spec.burn_in {
                for &i in lambda {
                    let p = self.spec.conditional_up(spins, i);
                    spins[i] = if rng.random::<f64>() < p { 1 } else { -1 };
                }
            }
        }
    }
}

impl VertexSource for IsingSampler {
    fn num_vertices(&self) -> usize {
        self.spec.n()
    }

    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn draw(&self, seed: u64) -> Result<SampleSet> {
        glauber_sample(&self.spec, self.spec.burn_in, seed)
    }

    fn replace(
        &self,
        z: &SampleSet,
        lambda: &[usize],
        mode: ReplaceMode,
        seed: u64,
    ) -> Result<SampleSet> {
        check_lambda(z, lambda)?;
        let mut out = z.clone();
        out.perturbed = lambda.iter().copied().collect();
        if lambda.is_empty() {
            return Ok(out);
        }
        let lam: Vec<usize> = out.perturbed.iter().copied().collect();
        let new_spins = match mode {
            ReplaceMode::FreshMarginal => {
                let fresh = glauber_sample(&self.spec, self.spec.burn_in, derive(seed, "marginal", 0))?;
                let fresh_spins = fresh.spins.expect("gibbs draws carry spins");
                for &i in &lam {
                    out.samples[i] = fresh.samples[i].clone();
                }
                let mut s = z.spins.clone().unwrap_or_else(|| fresh_spins.clone());
                for &i in &lam {
                    s[i] = fresh_spins[i];
                }
                s
            }
            ReplaceMode::FreshConditional => {
                let mut s = z.spins.clone().ok_or_else(|| {
                    Error::InvalidArgument(
                        "conditional replacement needs the spin configuration".into(),
                    )
                })?;
                let mut rng = child_rng(seed, "conditional", 0);
                self.conditional_resample(&mut s, &lam, &mut rng);
                for &i in &lam {
                    out.samples[i] = self.spec.vertex_sample(&s, i);
                }
                s
            }
        };
        out.spins = Some(new_spins);
        Ok(out)
    }

    fn diameter(&self) -> f64 {
        diameter_bound(self.spec.b_x, self.spec.b_y.min(1.0))
    }

    fn extreme_candidates(&self, i: usize) -> Vec<VertexSample> {
        let by = self.spec.b_y.min(1.0);
        [1i8, -1]
            .iter()
            .flat_map(|&s| {
                [by, -by]
                    .into_iter()
                    .map(move |y| VertexSample::new(self.spec.feature(i, s), y))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_spin(j: f64) -> IsingSpec {
        IsingSpec::new(vec![vec![0.0, j], vec![j, 0.0]], vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn iid_is_deterministic_and_bounded() {
        let g = Graph::cycle(6);
        let spec = IidSpec::new(6, 3);
        let a = sample_iid(&g, &spec, 11).unwrap();
        let b = sample_iid(&g, &spec, 11).unwrap();
        assert_eq!(a, b);
        for s in &a.samples {
            let norm = s.x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= spec.b_x + 1e-12);
            assert!(s.y.abs() <= spec.b_y);
        }
        assert!(a.empirical_diameter() <= spec.diameter());
    }

    #[test]
    fn iid_single_vertex() {
        let z = sample_iid(&Graph::empty(1), &IidSpec::new(1, 2), 3).unwrap();
        assert_eq!(z.len(), 1);
        assert_eq!(z.dim(), 2);
    }

    #[test]
    fn iid_rejects_zero_dim() {
        assert!(sample_iid(&Graph::empty(2), &IidSpec::new(2, 0), 0).is_err());
    }

    #[test]
    fn replace_empty_lambda_is_identity() {
        let spec = IidSpec::new(5, 2);
        let z = spec.draw(1).unwrap();
        let z2 = replace_vertices(&spec, &z, &[], ReplaceMode::FreshMarginal, 9).unwrap();
        assert_eq!(z.samples, z2.samples);
        assert!(z2.perturbed.is_empty());
    }

    #[test]
    fn replace_single_vertex_changes_only_that_vertex() {
        let spec = IidSpec::new(7, 2);
        let z = spec.draw(1).unwrap();
        let zi = spec.replace(&z, &[3], ReplaceMode::FreshMarginal, 5).unwrap();
        assert_eq!(zi.differing_vertices(&z), vec![3]);
        assert_eq!(zi.perturbed.iter().copied().collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn replace_rejects_out_of_range() {
        let spec = IidSpec::new(3, 1);
        let z = spec.draw(1).unwrap();
        assert!(spec.replace(&z, &[3], ReplaceMode::FreshMarginal, 0).is_err());
    }

    #[test]
    fn ising_rejects_non_finite_or_asymmetric_coupling() {
        assert!(matches!(
            IsingSpec::new(vec![vec![0.0, f64::NAN], vec![f64::NAN, 0.0]], vec![0.0; 2]),
            Err(Error::NonFinite(_))
        ));
        assert!(IsingSpec::new(vec![vec![0.0, 1.0], vec![0.5, 0.0]], vec![0.0; 2]).is_err());
        assert!(IsingSpec::new(vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![0.0; 2]).is_err());
    }

    #[test]
    fn glauber_is_deterministic() {
        let spec = IsingSpec::on_graph(&Graph::cycle(5), 0.3, 0.1).unwrap();
        let a = glauber_sample(&spec, 1000, 4).unwrap();
        let b = glauber_sample(&spec, 1000, 4).unwrap();
        assert_eq!(a, b);
        assert!(glauber_sample(&spec, 10, 4).is_err());
    }

    #[test]
    fn independent_spins_match_tanh_magnetization() {
        let h = vec![0.3, -0.7, 0.0];
        let spec = IsingSpec::independent(h.clone());
        let draws = 40_000;
        let states = glauber_states(&spec, 10, 1, draws, 8);
        for (i, hi) in h.iter().enumerate() {
            let mean = states.iter().map(|s| f64::from(s[i])).sum::<f64>() / draws as f64;
            let var = 1.0 - hi.tanh().powi(2);
            let se = (var / draws as f64).sqrt();
            assert!((mean - hi.tanh()).abs() < 3.0 * se + 1e-12, "vertex {i}: {mean} vs {}", hi.tanh());
        }
    }

    #[test]
    fn two_spin_agreement_probability() {
        let spec = two_spin(0.5);
        let draws = 40_000;
        let states = glauber_states(&spec, 100, 1, draws, 21);
        // Successive sweeps of this chain are correlated; use every 5th state.
        let thinned: Vec<_> = states.iter().step_by(5).collect();
        let m = thinned.len() as f64;
        let agree = thinned.iter().filter(|s| s[0] == s[1]).count() as f64 / m;
        let p = 0.5f64.exp() / (0.5f64.exp() + (-0.5f64).exp());
        let se = (p * (1.0 - p) / m).sqrt();
        assert!((agree - p).abs() < 3.0 * se, "{agree} vs {p}");
    }

    #[test]
    fn exact_enumeration_matches_two_spin_partition_function() {
        let states = two_spin(0.5).enumerate_states().unwrap();
        let agree: f64 = states.iter().filter(|(s, _)| s[0] == s[1]).map(|(_, p)| p).sum();
        assert!((agree - 0.731_058_578_630_005).abs() < 1e-12);
    }

    #[test]
    fn dobrushin_of_product_measure_is_zero() {
        let spec = IsingSpec::independent(vec![0.2, -0.1, 0.4, 0.0]);
        assert_eq!(dobrushin_exact(&spec).unwrap(), 0.0);
        assert_eq!(dobrushin_upper_bound(&spec), 0.0);
    }

    #[test]
    fn dobrushin_two_spin_is_tanh() {
        let spec = two_spin(0.5);
        // Hand enumeration: TV = σ(1) − σ(−1) = 2σ(1) − 1 = tanh(0.5).
        let a = dobrushin_exact(&spec).unwrap();
        assert!((a - 0.462_117_157_260_009_74).abs() < 1e-12);
        assert!((dobrushin_upper_bound(&spec) - a).abs() < 1e-15);
    }

    #[test]
    fn dobrushin_monotone_in_coupling() {
        let vals: Vec<f64> = (1..=10)
            .map(|k| dobrushin_exact(&two_spin(0.1 * k as f64)).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn dobrushin_capacity_error() {
        let spec = IsingSpec::independent(vec![0.0; 13]);
        assert!(matches!(dobrushin_exact(&spec), Err(Error::Capacity(_))));
    }

    #[test]
    fn dobrushin_invariant_under_relabeling() {
        let mut rng = crate::rng::rng_from(5);
        let n = 5;
        let mut c = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.random_range(-0.4..0.4);
                c[i][j] = v;
                c[j][i] = v;
            }
        }
        let h: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let perm = [3usize, 0, 4, 1, 2];
        let mut pc = vec![vec![0.0; n]; n];
        let mut ph = vec![0.0; n];
        for i in 0..n {
            ph[perm[i]] = h[i];
            for j in 0..n {
                pc[perm[i]][perm[j]] = c[i][j];
            }
        }
        let a = dobrushin_exact(&IsingSpec::new(c, h).unwrap()).unwrap();
        let b = dobrushin_exact(&IsingSpec::new(pc, ph).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn conditional_replacement_matches_two_spin_conditional() {
        let sampler = IsingSampler::new(two_spin(0.5).with_burn_in(50));
        let base = sampler.spec.sample_set(vec![1, 1], 0);
        // P(z_0 = +1 | z_1 = +1) = σ(2·0.5).
        let p = sigmoid(1.0);
        let draws = 20_000;
        let ups = (0..draws)
            .filter(|&k| {
                let r = sampler
                    .replace(&base, &[0], ReplaceMode::FreshConditional, k as u64)
                    .unwrap();
                r.spins.unwrap()[0] == 1
            })
            .count() as f64
            / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((ups - p).abs() < 3.0 * se, "{ups} vs {p}");
    }

    #[test]
    fn ising_replacement_touches_only_lambda() {
        let g = Graph::cycle(6);
        let rf = ReceptiveFieldMap::one_hop(&g);
        let spec = IsingSpec::on_graph(&g, 0.2, 0.0)
            .unwrap()
            .with_features(2, 1.0)
            .with_labels(LabelRule::FieldMean(rf), 1.0)
            .with_burn_in(100);
        let sampler = IsingSampler::new(spec);
        let z = sampler.draw(3).unwrap();
        for mode in [ReplaceMode::FreshMarginal, ReplaceMode::FreshConditional] {
            for seed in 0..20 {
                let r = sampler.replace(&z, &[1, 4], mode, seed).unwrap();
                let diff = r.differing_vertices(&z);
                assert!(diff.iter().all(|i| [1, 4].contains(i)));
            }
        }
        assert!(z.empirical_diameter() <= sampler.diameter() + 1e-12);
    }
}
