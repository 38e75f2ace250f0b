//! One-layer linear equivariant GNN `ŷ = Ã X w` with a fixed read-out `w`
//! and a masked ridge fit of the propagation matrix Ã.
//!
//! The objective is `½‖y − Ã v‖² + (γ/2)‖Ã‖_F²` with `v = Xw`, minimized over
//! matrices supported on the receptive-field mask. Two solvers are provided:
//! the mask projection of the unconstrained minimizer `y vᵀ/(γ + ‖v‖²)`, and
//! the exact support-constrained minimizer, whose rows decouple.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Graph, ReceptiveFieldMap};
use crate::rng::{child_rng, derive};
use crate::sampler::{IidSpec, VertexSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnMethod {
    /// Π ⊗ (y vᵀ/(γ + ‖v‖²)).
    ProjectedClosedForm,
    /// Row i: y_i v_j/(γ + Σ_{k∈Ξ(i)} v_k²) on the mask.
    ExactRowwise,
}

impl GnnMethod {
    pub fn label(self) -> &'static str {
        match self {
            GnnMethod::ProjectedClosedForm => "projected_closed_form",
            GnnMethod::ExactRowwise => "exact_rowwise",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnProblem {
    /// N rows of m features.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub mask: ReceptiveFieldMap,
    pub gamma: f64,
}

impl GnnProblem {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>, w: Vec<f64>, mask: ReceptiveFieldMap, gamma: f64) -> Result<Self> {
        let n = mask.num_vertices();
        if x.len() != n || y.len() != n {
            return Err(Error::InvalidArgument(format!(
                "expected {n} feature rows and labels, got {} and {}",
                x.len(),
                y.len()
            )));
        }
        if x.iter().any(|r| r.len() != w.len()) {
            return Err(Error::InvalidArgument("feature rows must match the read-out length".into()));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("ridge parameter must be positive, got {gamma}")));
        }
        let finite = x.iter().flatten().chain(&y).chain(&w).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("GNN problem data".into()));
        }
        Ok(GnnProblem { x, y, w, mask, gamma })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// v = Xw.
    pub fn propagated(&self) -> Vec<f64> {
        self.x
            .iter()
            .map(|r| r.iter().zip(&self.w).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnSolution {
    pub a: DMatrix<f64>,
    pub method: GnnMethod,
    pub objective: f64,
}

/// Coefficients of Ã row by row, aligned with the mask's field lists.
pub(crate) fn row_coefficients(y: &[f64], v: &[f64], mask: &ReceptiveFieldMap, gamma: f64, method: GnnMethod) -> Vec<Vec<f64>> {
    let total: f64 = v.iter().map(|x| x * x).sum();
    (0..y.len())
        .map(|i| {
            let field = mask.field(i);
            let denom = gamma
                + match method {
                    GnnMethod::ProjectedClosedForm => total,
                    GnnMethod::ExactRowwise => field.iter().map(|&k| v[k] * v[k]).sum(),
                };
            field.iter().map(|&k| y[i] * v[k] / denom).collect()
        })
        .collect()
}

fn dense(rows: &[Vec<f64>], mask: &ReceptiveFieldMap) -> DMatrix<f64> {
    let n = rows.len();
    let mut a = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (&k, &c) in mask.field(i).iter().zip(row) {
            a[(i, k)] = c;
        }
    }
    a
}

fn fit(p: &GnnProblem, method: GnnMethod) -> GnnSolution {
    let rows = row_coefficients(&p.y, &p.propagated(), &p.mask, p.gamma, method);
    let a = dense(&rows, &p.mask);
    let objective = objective_unchecked(p, &a);
    GnnSolution { a, method, objective }
}

/// Mask projection of the unconstrained minimizer, via the rank-one identity
/// `y vᵀ (v vᵀ + γI)⁻¹ = y vᵀ/(γ + ‖v‖²)`.
pub fn fit_paper_closed_form(p: &GnnProblem) -> GnnSolution {
    fit(p, GnnMethod::ProjectedClosedForm)
}

/// Exact minimizer over matrices supported on the mask.
pub fn fit_exact_rowwise(p: &GnnProblem) -> GnnSolution {
    fit(p, GnnMethod::ExactRowwise)
}

/// Zeroes every entry outside the mask.
pub fn apply_mask(a: &DMatrix<f64>, mask: &ReceptiveFieldMap) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| if mask.contains(i, j) { a[(i, j)] } else { 0.0 })
}

fn objective_unchecked(p: &GnnProblem, a: &DMatrix<f64>) -> f64 {
    let v = nalgebra::DVector::from_vec(p.propagated());
    let y = nalgebra::DVector::from_column_slice(&p.y);
    0.5 * (y - a * v).norm_squared() + 0.5 * p.gamma * a.norm_squared()
}

/// ½‖y − Ã v‖² + (γ/2)‖Ã‖_F².
pub fn gnn_objective(p: &GnnProblem, a: &DMatrix<f64>) -> Result<f64> {
    let n = p.n();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::InvalidArgument(format!("Ã must be {n}x{n}")));
    }
    for i in 0..n {
        for j in 0..n {
            if a[(i, j)] != 0.0 && !p.mask.contains(i, j) {
                return Err(Error::InvalidArgument(format!(
                    "Ã has support at ({i}, {j}) outside the mask"
                )));
            }
        }
    }
    Ok(objective_unchecked(p, a))
}

/// Unmasked gradient −(y − Ãv)vᵀ + γÃ.
pub fn gnn_gradient(p: &GnnProblem, a: &DMatrix<f64>) -> DMatrix<f64> {
    let v = nalgebra::DVector::from_vec(p.propagated());
    let y = nalgebra::DVector::from_column_slice(&p.y);
    let r = y - a * &v;
    -(r * v.transpose()) + a * p.gamma
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// y_i ↦ −sign(y_i)·B_y.
    Label,
    /// x_i ↦ x_i + ε·ŵ.
    Feature,
}

impl PerturbationKind {
    pub fn label(self) -> &'static str {
        match self {
            PerturbationKind::Label => "label",
            PerturbationKind::Feature => "feature",
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GnnExperiment {
    pub dim: usize,
    pub b_x: f64,
    pub b_y: f64,
    pub b_w: f64,
    pub gamma: f64,
    pub kind: PerturbationKind,
    pub method: GnnMethod,
    /// Training instances.
    pub trials: usize,
    /// Monte Carlo test-feature draws per instance.
    pub test_draws: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl GnnExperiment {
    pub fn new(kind: PerturbationKind, trials: usize, seed: u64) -> Self {
        GnnExperiment {
            dim: 3,
            b_x: 1.0,
            b_y: 1.0,
            b_w: 1.0,
            gamma: 1.0,
            kind,
            method: GnnMethod::ProjectedClosedForm,
            trials,
            test_draws: 256,
            epsilon: 0.01,
            seed,
        }
    }

    pub fn with_method(mut self, m: GnnMethod) -> Self {
        self.method = m;
        self
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = eps;
        self
    }

    fn read_out(&self) -> Vec<f64> {
        vec![self.b_w / (self.dim as f64).sqrt(); self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GnnStabilityReport {
    pub n: usize,
    pub sup_d: f64,
    pub inf_d: f64,
    pub kind: PerturbationKind,
    pub method: GnnMethod,
    pub beta1: f64,
    pub beta2: f64,
    pub discrepancy: f64,
    pub beta1_i: Vec<f64>,
    pub beta2_i: Vec<f64>,
    /// inf_i and sup_i of β̂_{2,i} − β̂_{1,i}.
    pub gap_inf: f64,
    pub gap_sup: f64,
    pub trials: usize,
    pub seed: u64,
}

/// sup over y′ ∈ [−B_y, B_y] of |(p − y′)² − (q − y′)²|.
pub fn label_sup_loss_difference(p: f64, q: f64, b_y: f64) -> f64 {
    (p - q).abs() * ((p + q).abs() + 2.0 * b_y)
}

fn row_dot(row: &[f64], field: &[usize], v: &[f64]) -> f64 {
    row.iter().zip(field).map(|(c, &k)| c * v[k]).sum()
}

/// Loss-difference sup for each test vertex, maximized over the test draws
/// and the per-row sign corners.
fn per_vertex_sup(
    base: &[Vec<f64>],
    pert: &[Vec<f64>],
    mask: &ReceptiveFieldMap,
    tests: &[Vec<f64>],
    corner: f64,
    b_y: f64,
    rows: impl Iterator<Item = usize>,
) -> Vec<(usize, f64)> {
    rows.map(|j| {
        let field = mask.field(j);
        let (a, b) = (&base[j], &pert[j]);
        let mut best = 0.0f64;
        for v in tests {
            let (p, q) = (row_dot(a, field, v), row_dot(b, field, v));
            best = best.max(label_sup_loss_difference(p, q, b_y));
        }
        // Corners aligned with the row difference and with the row sum.
        let corners: [fn(f64, f64) -> f64; 2] = [|ca, cb| y_sign(cb - ca), |ca, cb| y_sign(ca + cb)];
        for sign_of in corners {
            let (mut p, mut q) = (0.0, 0.0);
            for (ca, cb) in a.iter().zip(b) {
                let s = corner * sign_of(*ca, *cb);
                p += ca * s;
                q += cb * s;
            }
            best = best.max(label_sup_loss_difference(p, q, b_y));
        }
        (j, best)
    })
    .collect()
}

fn y_sign(x: f64) -> f64 {
    if x >= 0.0 { 1.0 } else { -1.0 }
}

/// Type-1/type-2 stability of the fitted GNN under single-vertex label or
/// first-order feature perturbations.
///
/// Every vertex is perturbed in every training instance. Test features are
/// drawn from the training feature law; all-plus and all-minus corners
/// (±B_X along ŵ) and per-row sign corners are added. The sup over the test
/// label is exact.
pub fn gnn_stability_experiment(g: &Graph, exp: &GnnExperiment) -> Result<GnnStabilityReport> {
    if exp.kind == PerturbationKind::Feature && exp.epsilon >= 0.1 * exp.b_x {
        return Err(Error::InvalidArgument(format!(
            "feature perturbation ε = {} is not first order (need ε < 0.1·B_X)",
            exp.epsilon
        )));
    }
    if exp.trials == 0 || exp.dim == 0 {
        return Err(Error::InvalidArgument("need trials ≥ 1 and dim ≥ 1".into()));
    }
    let n = g.num_vertices();
    let mask = ReceptiveFieldMap::one_hop(g);
    let w = exp.read_out();
    let w_norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let w_hat: Vec<f64> = w.iter().map(|x| x / w_norm).collect();
    let corner = exp.b_x * w_norm;
    let source = IidSpec::new(n, exp.dim)
        .with_bounds(exp.b_x, exp.b_y)
        .with_label_noise(1.0);

    let per_trial: Vec<(Vec<f64>, Vec<f64>)> = (0..exp.trials)
        .into_par_iter()
        .map(|trial| -> Result<(Vec<f64>, Vec<f64>)> {
            let z = source.draw(derive(exp.seed, "gnn/train", trial as u64))?;
            let x: Vec<Vec<f64>> = z.samples.iter().map(|s| s.x.clone()).collect();
            let y = z.labels();
            let v: Vec<f64> = x.iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
            let base = row_coefficients(&y, &v, &mask, exp.gamma, exp.method);

            let mut rng = child_rng(exp.seed, "gnn/test", trial as u64);
            let mut tests: Vec<Vec<f64>> = (0..exp.test_draws)
                .map(|_| {
                    (0..n)
                        .map(|_| {
                            let half = exp.b_x / (exp.dim as f64).sqrt();
                            (0..exp.dim).map(|k| rng.random_range(-half..=half) * w[k]).sum()
                        })
                        .collect()
                })
                .collect();
            tests.push(vec![corner; n]);
            tests.push(vec![-corner; n]);

            let mut b1 = vec![0.0f64; n];
            let mut b2 = vec![0.0f64; n];
            for i in 0..n {
                let sups = match exp.kind {
                    PerturbationKind::Label => {
                        let mut y2 = y.clone();
                        y2[i] = -y_sign(y[i]) * exp.b_y;
                        let pert = row_coefficients(&y2, &v, &mask, exp.gamma, exp.method);
                        // Only row i of Ã moves.
                        let mut out: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, 0.0)).collect();
                        out.extend(per_vertex_sup(&base, &pert, &mask, &tests, corner, exp.b_y, std::iter::once(i)));
                        out
                    }
                    PerturbationKind::Feature => {
                        let mut v2 = v.clone();
                        v2[i] += exp.epsilon * w_hat.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                        let pert = row_coefficients(&y, &v2, &mask, exp.gamma, exp.method);
                        per_vertex_sup(&base, &pert, &mask, &tests, corner, exp.b_y, 0..n)
                    }
                };
                for (j, s) in sups {
                    b2[i] = b2[i].max(s);
                    if !mask.contains(i, j) {
                        b1[i] = b1[i].max(s);
                    }
                }
            }
            Ok((b1, b2))
        })
        .collect::<Result<_>>()?;

    let mut beta1_i = vec![0.0f64; n];
    let mut beta2_i = vec![0.0f64; n];
    for (b1, b2) in per_trial {
        for i in 0..n {
            beta1_i[i] = beta1_i[i].max(b1[i]);
            beta2_i[i] = beta2_i[i].max(b2[i]);
        }
    }
    let gaps: Vec<f64> = beta2_i.iter().zip(&beta1_i).map(|(a, b)| a - b).collect();
    let beta1 = beta1_i.iter().copied().fold(0.0, f64::max);
    let beta2 = beta2_i.iter().copied().fold(0.0, f64::max);
    let stats = mask.sparsity_stats();
    Ok(GnnStabilityReport {
        n,
        sup_d: stats.sup_d,
        inf_d: stats.inf_d,
        kind: exp.kind,
        method: exp.method,
        beta1,
        beta2,
        discrepancy: beta2 - beta1,
        beta1_i,
        beta2_i,
        gap_inf: gaps.iter().copied().fold(f64::INFINITY, f64::min),
        gap_sup: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        trials: exp.trials,
        seed: exp.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn random_problem(g: &Graph, seed: u64) -> GnnProblem {
        let mut rng = rng_from(seed);
        let n = g.num_vertices();
        let x = (0..n).map(|_| (0..2).map(|_| rng.random_range(-0.7..0.7)).collect()).collect();
        let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        GnnProblem::new(x, y, vec![0.6, -0.8], ReceptiveFieldMap::one_hop(g), 0.5).unwrap()
    }

    #[test]
    fn hand_example_two_vertices() {
        let p = GnnProblem::new(
            vec![vec![1.0], vec![1.0]],
            vec![1.0, 0.0],
            vec![1.0],
            ReceptiveFieldMap::one_hop(&Graph::complete(2)),
            1.0,
        )
        .unwrap();
        let s = fit_paper_closed_form(&p);
        let expect = DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0]);
        assert!((s.a.clone() - expect).abs().max() < 1e-15);
        // Direct inverse of M = v vᵀ + γI.
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let yv = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let direct = yv * m.try_inverse().unwrap();
        assert!((s.a - direct).abs().max() < 1e-15);
    }

    #[test]
    fn zero_labels_give_zero_matrix() {
        let mut p = random_problem(&Graph::cycle(5), 1);
        p.y = vec![0.0; 5];
        assert_eq!(fit_paper_closed_form(&p).a, DMatrix::zeros(5, 5));
        assert_eq!(gnn_objective(&p, &DMatrix::zeros(5, 5)).unwrap(), 0.0);
    }

    #[test]
    fn zero_matrix_objective_is_half_label_norm() {
        let p = random_problem(&Graph::cycle(5), 2);
        let half: f64 = 0.5 * p.y.iter().map(|v| v * v).sum::<f64>();
        assert!((gnn_objective(&p, &DMatrix::zeros(5, 5)).unwrap() - half).abs() < 1e-15);
    }

    #[test]
    fn solutions_vanish_off_mask() {
        let g = Graph::path(6);
        let p = random_problem(&g, 3);
        for s in [fit_paper_closed_form(&p), fit_exact_rowwise(&p)] {
            for i in 0..6 {
                for j in 0..6 {
                    if !p.mask.contains(i, j) {
                        assert_eq!(s.a[(i, j)], 0.0);
                    }
                }
            }
            assert_eq!(apply_mask(&apply_mask(&s.a, &p.mask), &p.mask), apply_mask(&s.a, &p.mask));
        }
    }

    #[test]
    fn self_only_mask_is_scalar_ridge() {
        let p = random_problem(&Graph::empty(4), 4);
        let s = fit_exact_rowwise(&p);
        let v = p.propagated();
        for i in 0..4 {
            assert!((s.a[(i, i)] - p.y[i] * v[i] / (p.gamma + v[i] * v[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn full_mask_paper_form_is_stationary_and_matches_oracle() {
        let p = random_problem(&Graph::complete(7), 5);
        let a = fit_paper_closed_form(&p);
        let b = fit_exact_rowwise(&p);
        assert_eq!(a.a, b.a);
        assert!(gnn_gradient(&p, &a.a).norm() <= 1e-10);
    }

    #[test]
    fn rowwise_is_masked_stationary_and_no_worse() {
        for seed in 0..20 {
            let mut rng = rng_from(seed);
            let g = Graph::erdos_renyi(9, 0.3, &mut rng);
            let p = random_problem(&g, seed);
            let exact = fit_exact_rowwise(&p);
            let paper = fit_paper_closed_form(&p);
            let grad = apply_mask(&gnn_gradient(&p, &exact.a), &p.mask);
            assert!(grad.abs().max() <= 1e-10);
            assert!(exact.objective <= paper.objective + 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = random_problem(&Graph::cycle(5), 8);
        let a = fit_paper_closed_form(&p).a;
        let grad = gnn_gradient(&p, &a);
        let h = 1e-6;
        for (i, j) in [(0, 1), (2, 2), (4, 0)] {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[(i, j)] += h;
            am[(i, j)] -= h;
            let fd = (objective_unchecked(&p, &ap) - objective_unchecked(&p, &am)) / (2.0 * h);
            assert!((fd - grad[(i, j)]).abs() < 1e-8);
        }
    }

    #[test]
    fn support_violation_rejected() {
        let p = random_problem(&Graph::path(4), 9);
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 3)] = 1.0;
        assert!(gnn_objective(&p, &a).is_err());
    }

    #[test]
    fn solutions_are_linear_in_labels() {
        let p = random_problem(&Graph::cycle(6), 10);
        let mut q = p.clone();
        q.y.iter_mut().for_each(|v| *v *= -2.5);
        for (f, name) in [(fit_paper_closed_form as fn(&GnnProblem) -> GnnSolution, "paper"), (fit_exact_rowwise, "exact")] {
            let diff = (f(&p).a * -2.5 - f(&q).a).abs().max();
            assert!(diff < 1e-14, "{name}");
        }
    }

    #[test]
    fn label_perturbation_moves_only_row_i() {
        let p = random_problem(&Graph::cycle(6), 11);
        let mut q = p.clone();
        q.y[2] = -q.y[2];
        let d = fit_paper_closed_form(&q).a - fit_paper_closed_form(&p).a;
        for r in 0..6 {
            for c in 0..6 {
                if r != 2 {
                    assert_eq!(d[(r, c)], 0.0);
                }
            }
        }
    }

    #[test]
    fn null_label_perturbation_gives_zero() {
        assert_eq!(label_sup_loss_difference(0.3, 0.3, 1.0), 0.0);
        // Endpoint check: the difference is affine in the test label.
        let (p, q, b) = (0.4, -0.1, 1.0);
        let brute = [-b, b]
            .iter()
            .map(|yy: &f64| ((p - yy).powi(2) - (q - yy).powi(2)).abs())
            .fold(0.0, f64::max);
        assert!((label_sup_loss_difference(p, q, b) - brute).abs() < 1e-15);
    }

    #[test]
    fn label_experiment_has_zero_type1() {
        let g = Graph::cycle(12);
        let r = gnn_stability_experiment(&g, &GnnExperiment::new(PerturbationKind::Label, 4, 3)).unwrap();
        assert_eq!(r.beta1, 0.0);
        assert!(r.beta2 > 0.0);
        assert!(r.beta1_i.iter().zip(&r.beta2_i).all(|(a, b)| a <= b));
    }

    #[test]
    fn feature_experiment_off_field_is_small() {
        let g = Graph::cycle(16);
        let exp = GnnExperiment::new(PerturbationKind::Feature, 4, 3).with_epsilon(0.01);
        let r = gnn_stability_experiment(&g, &exp).unwrap();
        assert!(r.beta1 < 0.5 * r.beta2, "{} vs {}", r.beta1, r.beta2);
        let exact = gnn_stability_experiment(&g, &exp.clone().with_method(GnnMethod::ExactRowwise)).unwrap();
        assert_eq!(exact.beta1, 0.0);
        assert!(gnn_stability_experiment(&g, &exp.with_epsilon(0.2)).is_err());
    }

    #[test]
    fn experiment_is_deterministic() {
        let g = Graph::cycle(10);
        let exp = GnnExperiment::new(PerturbationKind::Feature, 3, 17);
        assert_eq!(gnn_stability_experiment(&g, &exp).unwrap(), gnn_stability_experiment(&g, &exp).unwrap());
    }
}
