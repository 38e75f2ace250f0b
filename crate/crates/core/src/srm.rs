//! Degree-penalized model selection over nested receptive-field classes.
//!
//! Class d predicts `y_i` from the first d members of Ξ(i), ordered by index
//! distance to i (i itself first), with one weight block per position:
//! `h(𝒯_i) = Σ_{k<d} ⟨w_k, x_{ξ_k(i)}⟩`. Missing positions contribute zero,
//! so every class contains the smaller ones.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::bounds::{srm_confidence, srm_epsilon_floor};
use crate::error::{Error, Result};
use crate::graph::ReceptiveFieldMap;
use crate::harness::Learner;
use crate::sampler::SampleSet;

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeClassFamily {
    orders: Vec<Vec<usize>>,
    pub d_max: usize,
    pub dim: usize,
    pub b_y: f64,
    /// Type-1 stability per class (index d − 1).
    pub beta1: Vec<f64>,
    /// Type-2 stability per class, made non-decreasing in d.
    pub beta2: Vec<f64>,
}

impl DegreeClassFamily {
    pub fn new(rf: &ReceptiveFieldMap, d_max: usize, dim: usize, b_y: f64) -> Result<Self> {
        if d_max == 0 {
            return Err(Error::InvalidArgument("empty class family (d_max = 0)".into()));
        }
        let n = rf.num_vertices();
        let orders = (0..n)
            .map(|i| {
                let mut f = rf.field(i).to_vec();
                f.sort_by_key(|&j| (j.abs_diff(i), j));
                f
            })
            .collect();
        Ok(DegreeClassFamily {
            orders,
            d_max,
            dim,
            b_y,
            beta1: vec![0.0; d_max],
            beta2: vec![0.0; d_max],
        })
    }

    /// Sets per-class stabilities. β₂ is replaced by its running maximum, so
    /// a class is never treated as more stable than a class it contains.
    pub fn with_stability(mut self, beta1: Vec<f64>, beta2: Vec<f64>) -> Result<Self> {
        if beta1.len() != self.d_max || beta2.len() != self.d_max {
            return Err(Error::InvalidArgument(format!(
                "need {} per-class stabilities",
                self.d_max
            )));
        }
        let mut run = 0.0f64;
        self.beta2 = beta2
            .into_iter()
            .map(|b| {
                run = run.max(b);
                run
            })
            .collect();
        self.beta1 = beta1;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.orders.len()
    }

    /// First d members of Ξ(i) by index distance.
    pub fn truncated_field(&self, i: usize, d: usize) -> &[usize] {
        let o = &self.orders[i];
        &o[..d.min(o.len())]
    }

    /// Feature row of vertex i in class d.
    pub fn features(&self, z: &SampleSet, i: usize, d: usize) -> Vec<f64> {
        let mut row = vec![0.0; d * self.dim];
        for (k, &j) in self.truncated_field(i, d).iter().enumerate() {
            row[k * self.dim..(k + 1) * self.dim].copy_from_slice(&z.samples[j].x);
        }
        row
    }

    pub fn predict(&self, w: &[f64], z: &SampleSet, i: usize, d: usize) -> f64 {
        self.features(z, i, d).iter().zip(w).map(|(a, b)| a * b).sum()
    }

    /// (clip(h) − y)², bounded by 4B_y².
    pub fn clipped_loss(&self, w: &[f64], z: &SampleSet, i: usize, d: usize) -> f64 {
        let p = self.predict(w, z, i, d).clamp(-self.b_y, self.b_y);
        (p - z.samples[i].y).powi(2)
    }

    pub fn loss_bound(&self) -> f64 {
        4.0 * self.b_y * self.b_y
    }

    /// Clipped risk averaged over weighted sample sets.
    pub fn risk(&self, w: &[f64], d: usize, sets: &[(&SampleSet, f64)]) -> f64 {
        sets.iter()
            .map(|(z, p)| {
                p * (0..z.len()).map(|i| self.clipped_loss(w, z, i, d)).sum::<f64>() / z.len() as f64
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassFit {
    pub d: usize,
    pub weights: Vec<f64>,
    /// Unclipped mean squared error of the least-squares fit.
    pub risk: f64,
}

/// Weighted least squares of class d over sample sets with weights
/// (minimum-norm solution by SVD).
pub fn fit_class_weighted(family: &DegreeClassFamily, sets: &[(&SampleSet, f64)], d: usize) -> Result<ClassFit> {
    if d == 0 || d > family.d_max {
        return Err(Error::InvalidArgument(format!("degree {d} outside 1..={}", family.d_max)));
    }
    let n = family.n();
    let cols = d * family.dim;
    let rows = sets.len() * n;
    let mut a = DMatrix::zeros(rows, cols);
    let mut b = DVector::zeros(rows);
    for (s, (z, p)) in sets.iter().enumerate() {
        let scale = (p / n as f64).sqrt();
        for i in 0..n {
            let r = s * n + i;
            for (c, v) in family.features(z, i, d).into_iter().enumerate() {
                a[(r, c)] = scale * v;
            }
            b[r] = scale * z.samples[i].y;
        }
    }
    let svd = a.clone().svd(true, true);
    let w = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::NonFinite(format!("least squares failed: {e}")))?;
    let risk = (a * &w - b).norm_squared();
    Ok(ClassFit {
        d,
        weights: w.iter().copied().collect(),
        risk,
    })
}

/// Empirical risk minimizer of class d on one sample set.
pub fn fit_class(family: &DegreeClassFamily, z: &SampleSet, d: usize) -> Result<ClassFit> {
    fit_class_weighted(family, &[(z, 1.0)], d)
}

/// Least-squares fit of a single class as a [`Learner`], with clipped loss.
#[derive(Debug, Clone)]
pub struct SparseLearner<'a> {
    pub family: &'a DegreeClassFamily,
    pub d: usize,
}

impl Learner for SparseLearner<'_> {
    type Model = Vec<f64>;

    fn id(&self) -> String {
        format!("least-squares/d={}", self.d)
    }

    fn fit(&self, train: &[SampleSet], _seed: u64) -> Result<Vec<f64>> {
        let sets: Vec<(&SampleSet, f64)> = train.iter().map(|z| (z, 1.0 / train.len() as f64)).collect();
        Ok(fit_class_weighted(self.family, &sets, self.d)?.weights)
    }

    fn vertex_loss(&self, model: &Vec<f64>, test: &SampleSet, j: usize) -> f64 {
        self.family.clipped_loss(model, test, j, self.d)
    }

    fn loss_bound(&self) -> f64 {
        self.family.loss_bound()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// argmin over d of R̂(h_d) + 2·slack·d·β₂(d).
    Penalized,
    /// Plain ERM restricted to one class.
    Truncated(usize),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ClassRow {
    pub d: usize,
    pub risk: f64,
    pub penalty: f64,
    pub penalized: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub chosen: ClassFit,
    pub penalized_risk: f64,
    pub slack: f64,
    pub fits: Vec<ClassFit>,
    pub table: Vec<ClassRow>,
}

impl Selection {
    pub fn degree(&self) -> usize {
        self.chosen.d
    }

    /// CSV: `d,class_risk,penalty,penalized_risk,selected`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "d,class_risk,penalty,penalized_risk,selected")?;
        for r in &self.table {
            writeln!(w, "{},{},{},{},{}", r.d, r.risk, r.penalty, r.penalized, u8::from(r.selected))?;
        }
        Ok(())
    }
}

/// Fits every class and selects a degree; ties go to the smaller d.
pub fn select_sparse(family: &DegreeClassFamily, z: &SampleSet, slack: f64, mode: SelectionMode) -> Result<Selection> {
    if !(slack >= 0.0) {
        return Err(Error::InvalidArgument(format!("slack must be non-negative, got {slack}")));
    }
    let fits: Vec<ClassFit> = (1..=family.d_max).map(|d| fit_class(family, z, d)).collect::<Result<_>>()?;
    let mut table: Vec<ClassRow> = fits
        .iter()
        .map(|f| {
            let penalty = 2.0 * slack * f.d as f64 * family.beta2[f.d - 1];
            ClassRow {
                d: f.d,
                risk: f.risk,
                penalty,
                penalized: f.risk + penalty,
                selected: false,
            }
        })
        .collect();
    let pick = match mode {
        SelectionMode::Truncated(d) => {
            if d == 0 || d > family.d_max {
                return Err(Error::InvalidArgument(format!("degree {d} outside 1..={}", family.d_max)));
            }
            d - 1
        }
        SelectionMode::Penalized => {
            let mut best = 0;
            for (k, r) in table.iter().enumerate() {
                if r.penalized < table[best].penalized {
                    best = k;
                }
            }
            best
        }
    };
    table[pick].selected = true;
    Ok(Selection {
        chosen: fits[pick].clone(),
        penalized_risk: table[pick].penalized,
        slack,
        fits,
        table,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SrmReport {
    pub degree: usize,
    pub slack: f64,
    pub epsilon: f64,
    pub epsilon_floor: f64,
    /// Failure probability of the oracle inequality.
    pub confidence: f64,
    pub meets_target: bool,
    /// R(h_sparse).
    pub lhs: f64,
    /// min over comparators of R(h) + (slack + 2)·d(h)·β₂ + ε.
    pub rhs: f64,
    pub holds: bool,
    /// The floor is positive (slack < 2 with positive β₂).
    pub positive_floor: bool,
}

/// Pairs a selection with its guarantee. `risk(w, d)` estimates the true
/// risk (e.g. on held-out graphs or by enumeration); the right-hand side is
/// minimized over `comparators`, which should include the per-class fits.
pub fn srm_report(
    family: &DegreeClassFamily,
    selection: &Selection,
    epsilon: f64,
    delta_target: f64,
    risk: impl Fn(&[f64], usize) -> f64,
    comparators: &[ClassFit],
) -> Result<SrmReport> {
    let beta1 = family.beta1.iter().copied().fold(0.0, f64::max);
    let beta2 = family.beta2.iter().copied().fold(0.0, f64::max);
    let floor = srm_epsilon_floor(beta2, selection.slack, family.d_max);
    let confidence = srm_confidence(
        beta1,
        beta2,
        family.loss_bound(),
        selection.slack,
        family.d_max,
        family.n(),
        epsilon,
    )?;
    let lhs = risk(&selection.chosen.weights, selection.chosen.d);
    let rhs = comparators
        .iter()
        .chain(&selection.fits)
        .map(|c| risk(&c.weights, c.d) + (selection.slack + 2.0) * c.d as f64 * beta2)
        .fold(f64::INFINITY, f64::min)
        + epsilon;
    Ok(SrmReport {
        degree: selection.chosen.d,
        slack: selection.slack,
        epsilon,
        epsilon_floor: floor,
        confidence,
        meets_target: confidence <= delta_target,
        lhs,
        rhs,
        holds: lhs <= rhs,
        positive_floor: floor > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::sampler::{IidSpec, VertexSource};

    fn family(n: usize, d_max: usize) -> (DegreeClassFamily, SampleSet) {
        let rf = ReceptiveFieldMap::one_hop(&Graph::cycle(n));
        let fam = DegreeClassFamily::new(&rf, d_max, 2, 1.0).unwrap();
        (fam, IidSpec::new(n, 2).with_label_noise(0.3).draw(4).unwrap())
    }

    #[test]
    fn truncated_fields_are_nested_and_self_first() {
        let (fam, _) = family(6, 3);
        assert_eq!(fam.truncated_field(0, 1), &[0]);
        assert_eq!(fam.truncated_field(0, 3), &[0, 1, 5]);
        assert_eq!(fam.truncated_field(3, 2), &[3, 2]);
    }

    #[test]
    fn class_risk_non_increasing_in_degree() {
        for seed in 0..10 {
            let (fam, _) = family(10, 3);
            let z = IidSpec::new(10, 2).draw(seed).unwrap();
            let risks: Vec<f64> = (1..=3).map(|d| fit_class(&fam, &z, d).unwrap().risk).collect();
            assert!(risks.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{risks:?}");
        }
    }

    #[test]
    fn zero_slack_is_plain_erm_over_largest_class() {
        let (fam, z) = family(10, 3);
        let fam = fam.with_stability(vec![0.0; 3], vec![0.1, 0.2, 0.3]).unwrap();
        let s = select_sparse(&fam, &z, 0.0, SelectionMode::Penalized).unwrap();
        let best = s.fits.iter().map(|f| f.risk).fold(f64::INFINITY, f64::min);
        assert_eq!(s.chosen.risk, best);
        let zero = fam.clone().with_stability(vec![0.0; 3], vec![0.0; 3]).unwrap();
        let s0 = select_sparse(&zero, &z, 5.0, SelectionMode::Penalized).unwrap();
        assert_eq!(s0.degree(), s.degree());
    }

    #[test]
    fn degree_non_increasing_in_slack() {
        for seed in 0..10 {
            let (fam, _) = family(12, 3);
            let z = IidSpec::new(12, 2).draw(seed).unwrap();
            let fam = fam.with_stability(vec![0.0; 3], vec![0.02, 0.03, 0.05]).unwrap();
            let ds: Vec<usize> = [0.0, 0.1, 1.0, 10.0]
                .iter()
                .map(|&l| select_sparse(&fam, &z, l, SelectionMode::Penalized).unwrap().degree())
                .collect();
            assert!(ds.windows(2).all(|w| w[1] <= w[0]), "{ds:?}");
        }
    }

    #[test]
    fn ties_go_to_smaller_degree_and_no_dominated_choice() {
        let (fam, _) = family(6, 3);
        // Constant labels are fitted exactly by the own-feature class only if
        // features allow it; with zero labels every class has zero risk.
        let mut z = IidSpec::new(6, 2).draw(1).unwrap();
        z.samples.iter_mut().for_each(|s| s.y = 0.0);
        let s = select_sparse(&fam, &z, 1.0, SelectionMode::Penalized).unwrap();
        assert_eq!(s.degree(), 1);
        for r in &s.table {
            assert!(s.penalized_risk <= r.penalized);
        }
    }

    #[test]
    fn truncated_mode_and_errors() {
        let (fam, z) = family(6, 3);
        let s = select_sparse(&fam, &z, 1.0, SelectionMode::Truncated(2)).unwrap();
        assert_eq!(s.degree(), 2);
        assert!(select_sparse(&fam, &z, 1.0, SelectionMode::Truncated(4)).is_err());
        assert!(DegreeClassFamily::new(&ReceptiveFieldMap::one_hop(&Graph::cycle(4)), 0, 1, 1.0).is_err());
    }

    #[test]
    fn report_single_class_at_floor() {
        let (fam, z) = family(8, 1);
        let fam = fam.with_stability(vec![0.0], vec![0.0]).unwrap();
        let s = select_sparse(&fam, &z, 1.0, SelectionMode::Penalized).unwrap();
        let r = srm_report(&fam, &s, 0.0, 0.1, |w, d| fam.risk(w, d, &[(&z, 1.0)]), &[]).unwrap();
        assert_eq!(r.epsilon_floor, 0.0);
        assert_eq!(r.confidence, 1.0);
        assert!(r.holds);
        assert!(r.lhs <= fam.loss_bound());
    }

    #[test]
    fn report_rejects_epsilon_below_floor() {
        let (fam, z) = family(8, 2);
        let fam = fam.with_stability(vec![0.0; 2], vec![0.1, 0.1]).unwrap();
        let s = select_sparse(&fam, &z, 1.0, SelectionMode::Penalized).unwrap();
        assert!(srm_report(&fam, &s, 0.1, 0.1, |_, _| 0.0, &[]).is_err());
    }

    #[test]
    fn selection_csv() {
        let (fam, z) = family(6, 3);
        let s = select_sparse(&fam, &z, 0.5, SelectionMode::Penalized).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().filter(|l| l.ends_with(",1")).count(), 1);
    }
}
