//! Receptive-field objectives with certified constants.
//!
//! A local sample 𝔖_i is summarized by the mean feature over Ξ(i) and the
//! label of vertex i; the hypothesis is the linear read-out ⟨w, m⟩. Weights
//! live in a ball of radius `radius`, which makes the Lipschitz and loss
//! bounds finite.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::ReceptiveFieldMap;
use crate::rng::rng_from;
use crate::sampler::{diameter_bound, SampleSet};

/// Bounded domain: ‖x‖ ≤ b_x, |y| ≤ b_y, ‖w‖ ≤ radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub b_x: f64,
    pub b_y: f64,
    pub radius: f64,
}

/// Mean feature of Ξ(i) and the label of i.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSample {
    pub mean_feature: Vec<f64>,
    pub label: f64,
}

impl LocalSample {
    pub fn new(mean_feature: Vec<f64>, label: f64) -> Self {
        LocalSample { mean_feature, label }
    }

    /// 𝔖_i gathered from a sample set.
    pub fn gather(z: &SampleSet, rf: &ReceptiveFieldMap, i: usize) -> Self {
        let field = rf.field(i);
        let mut m = vec![0.0; z.dim()];
        for &j in field {
            for (a, b) in m.iter_mut().zip(&z.samples[j].x) {
                *a += b;
            }
        }
        let k = field.len() as f64;
        m.iter_mut().for_each(|v| *v /= k);
        LocalSample::new(m, z.samples[i].y)
    }
}

/// All N local samples of a sample set.
pub fn local_samples(z: &SampleSet, rf: &ReceptiveFieldMap) -> Vec<LocalSample> {
    (0..z.len()).map(|i| LocalSample::gather(z, rf, i)).collect()
}

/// Declared constants of an objective on its domain.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ConstantsCertificate {
    /// Smoothness.
    pub lambda: f64,
    /// Strong convexity (0 for the non-convex family).
    pub gamma: f64,
    /// Lipschitz constant of f in w.
    pub lipschitz: f64,
    /// Lipschitz constant of ∇f in a single vertex sample.
    pub zeta: f64,
    /// Loss bound.
    pub loss_bound: f64,
    /// Sample-space diameter.
    pub sample_diameter: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Family {
    Quadratic,
    Ripple { amplitude: f64 },
}

/// Loss objective `f(𝔖_i, w)` with its certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    family: Family,
    dim: usize,
    /// Weight of the squared-error term.
    scale: f64,
    /// Ridge weight, equal to the certified strong convexity.
    ridge: f64,
    direction: Vec<f64>,
    domain: Domain,
    cert: ConstantsCertificate,
}

/// λ-smooth, γ-strongly convex ridge objective
/// `½·s·(⟨w, m⟩ − y)² + (γ/2)‖w‖²` with `s = (λ − γ)/B_X²`, so the Hessian
/// `s·m mᵀ + γI` has spectrum in [γ, λ]. Weights are confined to the unit ball;
/// see [`Objective::with_radius`].
pub fn make_strongly_convex_objective(
    dim: usize,
    lambda: f64,
    gamma: f64,
    b_x: f64,
    b_y: f64,
) -> Result<Objective> {
    if !(gamma > 0.0 && lambda >= gamma) {
        return Err(Error::InvalidArgument(format!(
            "need λ ≥ γ > 0, got λ = {lambda}, γ = {gamma}"
        )));
    }
    Objective::build(Family::Quadratic, dim, lambda, gamma, b_x, b_y, 1.0)
}

/// Squared error plus a ripple `a·(1 − cos⟨u, w⟩)` along the fixed unit
/// direction `u = (1, …, 1)/√dim`. The curvature of the ripple lies in
/// [−a, a], so the data term gets weight `(λ − a)/B_X²`. Weights are confined
/// to the ball of radius π, which contains the concave part of the ripple.
pub fn make_nonconvex_objective(
    dim: usize,
    lambda: f64,
    b_x: f64,
    b_y: f64,
    amplitude: f64,
) -> Result<Objective> {
    if !(amplitude >= 0.0 && lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need λ > 0 and a ≥ 0, got λ = {lambda}, a = {amplitude}"
        )));
    }
    if amplitude > lambda {
        return Err(Error::InvalidArgument(format!(
            "ripple curvature {amplitude} exceeds λ = {lambda}"
        )));
    }
    Objective::build(
        Family::Ripple { amplitude },
        dim,
        lambda,
        0.0,
        b_x,
        b_y,
        std::f64::consts::PI,
    )
}

/// The pure regularizer `(γ/2)‖w‖²` (no data term), λ = γ.
pub fn make_pure_regularizer(dim: usize, gamma: f64) -> Result<Objective> {
    make_strongly_convex_objective(dim, gamma, gamma, 1.0, 1.0)
}

impl Objective {
    fn build(
        family: Family,
        dim: usize,
        lambda: f64,
        gamma: f64,
        b_x: f64,
        b_y: f64,
        radius: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dim must be at least 1".into()));
        }
        if !(b_x > 0.0 && b_y >= 0.0 && radius > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(
                "domain bounds must be positive and finite".into(),
            ));
        }
        let curvature = match family {
            Family::Quadratic => gamma,
            Family::Ripple { amplitude } => amplitude,
        };
        let scale = (lambda - curvature) / (b_x * b_x);
        let mut obj = Objective {
            family,
            dim,
            scale,
            ridge: gamma,
            direction: vec![1.0 / (dim as f64).sqrt(); dim],
            domain: Domain { b_x, b_y, radius },
            cert: ConstantsCertificate {
                lambda,
                gamma,
                lipschitz: 0.0,
                zeta: 0.0,
                loss_bound: 0.0,
                sample_diameter: 0.0,
                radius,
            },
        };
        obj.recertify();
        Ok(obj)
    }

    fn recertify(&mut self) {
        let Domain { b_x, b_y, radius: r } = self.domain;
        let s = self.scale;
        let resid = r * b_x + b_y;
        let (extra_lip, extra_loss) = match self.family {
            Family::Quadratic => (self.ridge * r, self.ridge * r * r / 2.0),
            Family::Ripple { amplitude } => (amplitude, 2.0 * amplitude),
        };
        self.cert.lipschitz = s * resid * b_x + extra_lip;
        self.cert.zeta = s * (2.0 * r * b_x + b_y + b_x);
        self.cert.loss_bound = 0.5 * s * resid * resid + extra_loss;
        self.cert.sample_diameter = diameter_bound(b_x, b_y);
        self.cert.radius = r;
    }

    /// Same objective on a ball of another radius; the certificate is
    /// recomputed.
    pub fn with_radius(mut self, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument("radius must be positive".into()));
        }
        self.domain.radius = radius;
        self.recertify();
        Ok(self)
    }

    /// Replaces the declared certificate (used to test certification).
    pub fn with_certificate(mut self, cert: ConstantsCertificate) -> Self {
        self.cert = cert;
        self
    }

    pub fn constants(&self) -> &ConstantsCertificate {
        &self.cert
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_convex(&self) -> bool {
        matches!(self.family, Family::Quadratic)
            || matches!(self.family, Family::Ripple { amplitude } if amplitude == 0.0)
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            Family::Quadratic => "quadratic",
            Family::Ripple { .. } => "ripple",
        }
    }

    /// h_w(𝒯_i) = ⟨w, m⟩.
    pub fn predict(&self, mean_feature: &[f64], w: &[f64]) -> f64 {
        dot(w, mean_feature)
    }

    pub fn evaluate(&self, s: &LocalSample, w: &[f64]) -> f64 {
        let r = self.predict(&s.mean_feature, w) - s.label;
        let data = 0.5 * self.scale * r * r;
        match self.family {
            Family::Quadratic => data + 0.5 * self.ridge * dot(w, w),
            Family::Ripple { amplitude } => {
                data + amplitude * (1.0 - dot(&self.direction, w).cos())
            }
        }
    }

    pub fn gradient(&self, s: &LocalSample, w: &[f64]) -> Vec<f64> {
        let r = self.predict(&s.mean_feature, w) - s.label;
        let mut g: Vec<f64> = s.mean_feature.iter().map(|m| self.scale * r * m).collect();
        match self.family {
            Family::Quadratic => {
                for (gk, wk) in g.iter_mut().zip(w) {
                    *gk += self.ridge * wk;
                }
            }
            Family::Ripple { amplitude } => {
                let c = amplitude * dot(&self.direction, w).sin();
                for (gk, uk) in g.iter_mut().zip(&self.direction) {
                    *gk += c * uk;
                }
            }
        }
        g
    }

    pub fn hessian(&self, s: &LocalSample, w: &[f64]) -> DMatrix<f64> {
        let m = &s.mean_feature;
        let mut h = DMatrix::from_fn(self.dim, self.dim, |a, b| self.scale * m[a] * m[b]);
        match self.family {
            Family::Quadratic => {
                for k in 0..self.dim {
                    h[(k, k)] += self.ridge;
                }
            }
            Family::Ripple { amplitude } => {
                let c = amplitude * dot(&self.direction, w).cos();
                let u = &self.direction;
                h += DMatrix::from_fn(self.dim, self.dim, |a, b| c * u[a] * u[b]);
            }
        }
        h
    }

    /// Projection onto the admissible ball.
    pub fn project(&self, w: &mut [f64]) {
        let n = norm(w);
        if n > self.domain.radius {
            let f = self.domain.radius / n;
            w.iter_mut().for_each(|v| *v *= f);
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Random point with ‖v‖ ≤ r; lands on the sphere a quarter of the time.
pub(crate) fn random_in_ball(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = norm(&v).max(1e-300);
    let radius = if rng.random::<f64>() < 0.25 {
        r
    } else {
        r * rng.random::<f64>().powf(1.0 / dim as f64)
    };
    v.iter_mut().for_each(|x| *x *= radius / n);
    v
}

fn random_label(rng: &mut ChaCha8Rng, b_y: f64) -> f64 {
    if rng.random::<f64>() < 0.25 {
        if rng.random::<bool>() { b_y } else { -b_y }
    } else {
        rng.random_range(-1.0..=1.0) * b_y
    }
}

/// Random admissible local sample.
pub fn random_local_sample(obj: &Objective, rng: &mut ChaCha8Rng) -> LocalSample {
    let d = obj.domain;
    LocalSample::new(
        random_in_ball(rng, obj.dim, d.b_x),
        random_label(rng, d.b_y),
    )
}

/// Empirical maxima found by [`certify_constants`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EmpiricalCertificate {
    pub smoothness: f64,
    pub lipschitz: f64,
    pub zeta: f64,
    pub max_loss: f64,
    pub min_loss: f64,
    pub trials: usize,
}

struct Tracker {
    value: f64,
    witness: Vec<Vec<f64>>,
}

impl Tracker {
    fn new() -> Self {
        Tracker {
            value: 0.0,
            witness: Vec::new(),
        }
    }

    fn offer(&mut self, v: f64, witness: impl FnOnce() -> Vec<Vec<f64>>) {
        if v > self.value {
            self.value = v;
            self.witness = witness();
        }
    }
}

/// Samples admissible inputs and checks each declared constant.
///
/// Besides random pairs, every trial also probes the pair `(w, w + ε·m̂)`
/// along the top Hessian direction of the data term, where the smoothness
/// ratio is largest. The zeta ratio perturbs one member of a random receptive
/// field of size 1 to 5.
pub fn certify_constants(obj: &Objective, trials: usize, seed: u64) -> Result<EmpiricalCertificate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut rng = rng_from(seed);
    let d = obj.domain;
    let mut smooth = Tracker::new();
    let mut lip = Tracker::new();
    let mut zeta = Tracker::new();
    let mut max_loss = Tracker::new();
    let mut min_loss = f64::INFINITY;
    for _ in 0..trials {
        let s = random_local_sample(obj, &mut rng);
        let w = random_in_ball(&mut rng, obj.dim, d.radius);
        let mut candidates = vec![random_in_ball(&mut rng, obj.dim, d.radius)];
        let mn = norm(&s.mean_feature);
        if mn > 0.0 {
            let eps = 1e-3 * d.radius;
            let mut v: Vec<f64> = w
                .iter()
                .zip(&s.mean_feature)
                .map(|(a, b)| a + eps * b / mn)
                .collect();
            obj.project(&mut v);
            candidates.push(v);
        }
        let gw = obj.gradient(&s, &w);
        let fw = obj.evaluate(&s, &w);
        max_loss.offer(fw, || vec![w.clone(), s.mean_feature.clone(), vec![s.label]]);
        min_loss = min_loss.min(fw);
        for w2 in candidates {
            let dw = dist(&w, &w2);
            if dw == 0.0 {
                continue;
            }
            let g2 = obj.gradient(&s, &w2);
            smooth.offer(dist(&gw, &g2) / dw, || {
                vec![w.clone(), w2.clone(), s.mean_feature.clone(), vec![s.label]]
            });
            let f2 = obj.evaluate(&s, &w2);
            lip.offer((fw - f2).abs() / dw, || {
                vec![w.clone(), w2.clone(), s.mean_feature.clone(), vec![s.label]]
            });
        }

        // Gradient-vs-sample: replace one vertex of a small receptive field.
        let k = rng.random_range(1..=5usize);
        let xs: Vec<Vec<f64>> = (0..k).map(|_| random_in_ball(&mut rng, obj.dim, d.b_x)).collect();
        let y = random_label(&mut rng, d.b_y);
        let j = rng.random_range(0..k);
        let xj = random_in_ball(&mut rng, obj.dim, d.b_x);
        // Index 0 plays the role of the centre vertex i, whose label may change.
        let yj = if j == 0 { random_label(&mut rng, d.b_y) } else { y };
        let mean = |xs: &[Vec<f64>]| -> Vec<f64> {
            (0..obj.dim)
                .map(|c| xs.iter().map(|x| x[c]).sum::<f64>() / k as f64)
                .collect()
        };
        let s1 = LocalSample::new(mean(&xs), y);
        let mut xs2 = xs.clone();
        xs2[j] = xj.clone();
        let s2 = LocalSample::new(mean(&xs2), yj);
        let dz = (dist(&xs[j], &xj).powi(2) + (y - yj).powi(2)).sqrt();
        if dz > 0.0 {
            let ratio = dist(&obj.gradient(&s1, &w), &obj.gradient(&s2, &w)) / dz;
            zeta.offer(ratio, || {
                vec![w.clone(), s1.mean_feature.clone(), vec![s1.label], s2.mean_feature.clone(), vec![s2.label]]
            });
        }
    }
    let c = obj.cert;
    let checks = [
        ("lambda", c.lambda, smooth),
        ("lipschitz", c.lipschitz, lip),
        ("zeta", c.zeta, zeta),
        ("loss_bound", c.loss_bound, max_loss),
    ];
    let mut out = EmpiricalCertificate {
        min_loss,
        trials,
        ..Default::default()
    };
    for (name, declared, t) in checks {
        if t.value > declared + 1e-9 {
            return Err(Error::Certification {
                constant: name,
                declared,
                observed: t.value,
                witness: t.witness,
            });
        }
        match name {
            "lambda" => out.smoothness = t.value,
            "lipschitz" => out.lipschitz = t.value,
            "zeta" => out.zeta = t.value,
            _ => out.max_loss = t.value,
        }
    }
    if min_loss < 0.0 {
        return Err(Error::Certification {
            constant: "non_negativity",
            declared: 0.0,
            observed: min_loss,
            witness: Vec::new(),
        });
    }
    Ok(out)
}

/// Pairs on the 1-D slice `θ·u`, θ on a grid over [−radius, radius].
fn slice_pairs(obj: &Objective, steps: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let r = obj.domain.radius;
    let grid: Vec<f64> = (0..=steps)
        .map(|k| -r + 2.0 * r * k as f64 / steps as f64)
        .collect();
    let at = |t: f64| obj.direction.iter().map(|u| u * t).collect::<Vec<_>>();
    let mut out = Vec::new();
    for (a, &ta) in grid.iter().enumerate() {
        for &tb in &grid[a + 1..] {
            out.push((at(ta), at(tb)));
        }
    }
    out
}

/// max over sampled pairs of (1/λ)‖∇f(v) − ∇f(w)‖² − ⟨∇f(v) − ∇f(w), v − w⟩.
/// Non-positive (up to rounding) for convex λ-smooth objectives.
pub fn cocoercivity_check(obj: &Objective, trials: usize, seed: u64) -> f64 {
    let lambda = obj.cert.lambda;
    let violation = |s: &LocalSample, v: &[f64], w: &[f64]| {
        let gv = obj.gradient(s, v);
        let gw = obj.gradient(s, w);
        let dg: Vec<f64> = gv.iter().zip(&gw).map(|(a, b)| a - b).collect();
        let dx: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - b).collect();
        dot(&dg, &dg) / lambda - dot(&dg, &dx)
    };
    let mut rng = rng_from(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let s = random_local_sample(obj, &mut rng);
        let v = random_in_ball(&mut rng, obj.dim, obj.domain.radius);
        let w = random_in_ball(&mut rng, obj.dim, obj.domain.radius);
        worst = worst.max(violation(&s, &v, &w));
    }
    let flat = LocalSample::new(vec![0.0; obj.dim], 0.0);
    for (v, w) in slice_pairs(obj, 64) {
        worst = worst.max(violation(&flat, &v, &w));
    }
    worst
}

/// max over sampled pairs of f(v) + ⟨∇f(v), u − v⟩ + (γ/2)‖u − v‖² − f(u).
pub fn strong_convexity_check(obj: &Objective, trials: usize, seed: u64) -> f64 {
    let mut rng = rng_from(seed);
    let gamma = obj.cert.gamma;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let s = random_local_sample(obj, &mut rng);
        let u = random_in_ball(&mut rng, obj.dim, obj.domain.radius);
        let v = random_in_ball(&mut rng, obj.dim, obj.domain.radius);
        let du: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let lhs = obj.evaluate(&s, &v) + dot(&obj.gradient(&s, &v), &du) + 0.5 * gamma * dot(&du, &du);
        worst = worst.max(lhs - obj.evaluate(&s, &u));
    }
    worst
}

/// A pair with ⟨∇f(w) − ∇f(w′), w − w′⟩ < 0 on the 1-D slice along the
/// ripple direction, if one exists.
pub fn nonconvexity_witness(obj: &Objective) -> Option<(Vec<f64>, Vec<f64>)> {
    let flat = LocalSample::new(vec![0.0; obj.dim], 0.0);
    slice_pairs(obj, 64).into_iter().find(|(v, w)| {
        let dg: Vec<f64> = obj
            .gradient(&flat, v)
            .iter()
            .zip(obj.gradient(&flat, w))
            .map(|(a, b)| a - b)
            .collect();
        let dx: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - b).collect();
        dot(&dg, &dx) < -1e-12
    })
}

/// max over random points of ‖∇f − FD(f)‖ / max(1, ‖∇f‖), central
/// differences with step `1e-5·radius`.
pub fn gradient_check(obj: &Objective, points: usize, seed: u64) -> f64 {
    let mut rng = rng_from(seed);
    let h = 1e-5 * obj.domain.radius;
    let mut worst = 0.0f64;
    for _ in 0..points {
        let s = random_local_sample(obj, &mut rng);
        let w = random_in_ball(&mut rng, obj.dim, obj.domain.radius);
        let g = obj.gradient(&s, &w);
        let fd: Vec<f64> = (0..obj.dim)
            .map(|k| {
                let mut a = w.clone();
                let mut b = w.clone();
                a[k] += h;
                b[k] -= h;
                (obj.evaluate(&s, &a) - obj.evaluate(&s, &b)) / (2.0 * h)
            })
            .collect();
        worst = worst.max(dist(&g, &fd) / norm(&g).max(1.0));
    }
    worst
}

/// Extreme Hessian eigenvalues at a point.
pub fn hessian_spectrum(obj: &Objective, s: &LocalSample, w: &[f64]) -> (f64, f64) {
    let e = SymmetricEigen::new(obj.hessian(s, w)).eigenvalues;
    (e.min(), e.max())
}
