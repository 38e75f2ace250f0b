//! Graph topology, receptive fields and sparsity statistics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};

/// Undirected simple graph with dense boolean adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<bool>>,
}

impl Graph {
    /// Builds a graph on `n` vertices. Pairs are undirected; duplicates and
    /// reversed duplicates collapse to one edge.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Graph {
            n,
            edges: BTreeSet::new(),
            adjacency: vec![vec![false; n]; n],
        };
        for &(a, b) in edges {
            g.add_edge(a, b)?;
        }
        Ok(g)
    }

    pub fn empty(n: usize) -> Self {
        Graph::new(n, &[]).expect("empty graph is valid")
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::new(n, &edges).expect("path is valid")
    }

    pub fn cycle(n: usize) -> Self {
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        if n > 2 {
            edges.push((n - 1, 0));
        }
        Graph::new(n, &edges).expect("cycle is valid")
    }

    /// Star with centre 0.
    pub fn star(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
        Graph::new(n, &edges).expect("star is valid")
    }

    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        Graph::new(n, &edges).expect("complete graph is valid")
    }

    /// Erdős–Rényi graph: each unordered pair is an edge with probability `p`.
    pub fn erdos_renyi<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Self {
        let mut g = Graph::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    g.add_edge(i, j).expect("indices in range");
                }
            }
        }
        g
    }

    /// Parses the edge-list text format: one `i j` pair per line, 0-indexed,
    /// blank lines and `#` comments ignored. When `n` is `None` the vertex
    /// count is one past the largest index seen.
    pub fn parse_edge_list(text: &str, n: Option<usize>) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    msg: "expected two vertex indices".into(),
                })?
                .parse::<usize>()
                .map_err(|e| Error::Parse {
                    line: lineno + 1,
                    msg: e.to_string(),
                })
            };
            let a = parse(it.next())?;
            let b = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: "trailing tokens".into(),
                });
            }
            pairs.push((a, b));
        }
        let n = n.unwrap_or_else(|| {
            pairs
                .iter()
                .map(|&(a, b)| a.max(b) + 1)
                .max()
                .unwrap_or(0)
        });
        Graph::new(n, &pairs)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for &(a, b) in &self.edges {
            writeln!(out, "{a} {b}").unwrap();
        }
        out
    }

    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<()> {
        for idx in [a, b] {
            if idx >= self.n {
                return Err(Error::IndexOutOfRange { index: idx, n: self.n });
            }
        }
        if a == b {
            return Err(Error::SelfLoop(a));
        }
        self.edges.insert((a.min(b), a.max(b)));
        self.adjacency[a][b] = true;
        self.adjacency[b][a] = true;
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.n && b < self.n && self.adjacency[a][b]
    }

    pub fn adjacency(&self) -> &[Vec<bool>] {
        &self.adjacency
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[i]
            .iter()
            .enumerate()
            .filter_map(|(j, &e)| e.then_some(j))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }
}

/// Receptive fields Ξ(i) for every vertex.
///
/// Every field contains its own vertex and membership is symmetric:
/// `j ∈ Ξ(i)` iff `i ∈ Ξ(j)`. Fields are stored sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceptiveFieldMap {
    n: usize,
    fields: Vec<Vec<usize>>,
    member: Vec<Vec<bool>>,
}

/// Normalized sparsity d_i = 𝒩_i / N and its aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityStats {
    pub d: Vec<f64>,
    /// Σ_i d_i.
    pub d_bar: f64,
    pub sup_d: f64,
    pub inf_d: f64,
}

impl ReceptiveFieldMap {
    /// Ξ(i) = {i} ∪ neighbors(i).
    pub fn one_hop(g: &Graph) -> Self {
        let n = g.num_vertices();
        let fields = (0..n)
            .map(|i| {
                let mut f: Vec<usize> = g.neighbors(i).collect();
                f.push(i);
                f.sort_unstable();
                f
            })
            .collect();
        Self::from_sorted(n, fields)
    }

    /// Validates an explicit field map for self-inclusion and symmetry.
    pub fn from_fields(n: usize, fields: Vec<Vec<usize>>) -> Result<Self> {
        if fields.len() != n {
            return Err(Error::InvalidReceptiveField(format!(
                "expected {n} fields, got {}",
                fields.len()
            )));
        }
        let mut sorted = Vec::with_capacity(n);
        for (i, f) in fields.into_iter().enumerate() {
            let set: BTreeSet<usize> = f.into_iter().collect();
            if let Some(&bad) = set.iter().find(|&&j| j >= n) {
                return Err(Error::IndexOutOfRange { index: bad, n });
            }
            if !set.contains(&i) {
                return Err(Error::InvalidReceptiveField(format!(
                    "vertex {i} is not in its own field"
                )));
            }
            sorted.push(set.into_iter().collect::<Vec<_>>());
        }
        let map = Self::from_sorted(n, sorted);
        for i in 0..n {
            for &j in &map.fields[i] {
                if !map.member[j][i] {
                    return Err(Error::InvalidReceptiveField(format!(
                        "{j} ∈ Ξ({i}) but {i} ∉ Ξ({j})"
                    )));
                }
            }
        }
        Ok(map)
    }

    fn from_sorted(n: usize, fields: Vec<Vec<usize>>) -> Self {
        let mut member = vec![vec![false; n]; n];
        for (i, f) in fields.iter().enumerate() {
            for &j in f {
                member[i][j] = true;
            }
        }
        ReceptiveFieldMap { n, fields, member }
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    pub fn field(&self, i: usize) -> &[usize] {
        &self.fields[i]
    }

    pub fn fields(&self) -> &[Vec<usize>] {
        &self.fields
    }

    /// `j ∈ Ξ(i)`.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.member[i][j]
    }

    /// 𝒩_i = card(Ξ(i)).
    pub fn cardinality(&self, i: usize) -> usize {
        self.fields[i].len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.fields.iter().map(Vec::len).collect()
    }

    /// The membership matrix, used as the support mask of the GNN.
    pub fn mask(&self) -> &[Vec<bool>] {
        &self.member
    }

    pub fn sparsity_stats(&self) -> SparsityStats {
        sparsity_from_cardinalities(&self.cardinalities(), self.n)
    }
}

/// d_i = 𝒩_i/N, d̄ = Σ d_i, sup and inf over vertices.
pub fn sparsity_from_cardinalities(card: &[usize], n: usize) -> SparsityStats {
    let nf = n as f64;
    let d: Vec<f64> = card.iter().map(|&c| c as f64 / nf).collect();
    let d_bar = card.iter().sum::<usize>() as f64 / nf;
    let sup_d = d.iter().copied().fold(0.0, f64::max);
    let inf_d = d.iter().copied().fold(f64::INFINITY, f64::min);
    SparsityStats {
        d,
        d_bar,
        sup_d,
        inf_d: if card.is_empty() { 0.0 } else { inf_d },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;

    #[test]
    fn single_edge_sets_both_directions() {
        let g = Graph::new(3, &[(0, 1)]).unwrap();
        let set: Vec<(usize, usize)> = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&(i, j)| g.has_edge(i, j))
            .collect();
        assert_eq!(set, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn empty_graph_has_no_adjacency() {
        let g = Graph::new(2, &[]).unwrap();
        assert!(g.adjacency().iter().flatten().all(|&e| !e));
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn duplicate_pairs_deduplicate() {
        let g = Graph::new(4, &[(0, 1), (1, 0), (2, 3)]).unwrap();
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn rejects_out_of_range_and_self_loops() {
        assert_eq!(
            Graph::new(3, &[(0, 3)]),
            Err(Error::IndexOutOfRange { index: 3, n: 3 })
        );
        assert_eq!(Graph::new(3, &[(1, 1)]), Err(Error::SelfLoop(1)));
    }

    #[test]
    fn path_receptive_fields() {
        let rf = ReceptiveFieldMap::one_hop(&Graph::path(3));
        assert_eq!(rf.field(1), &[0, 1, 2]);
        assert_eq!(rf.field(0), &[0, 1]);
        let s = rf.sparsity_stats();
        assert_eq!(s.d[1], 1.0);
        assert_eq!(s.d[0], 2.0 / 3.0);
    }

    #[test]
    fn isolated_vertices_have_unit_average_sparsity() {
        let rf = ReceptiveFieldMap::one_hop(&Graph::empty(5));
        let s = rf.sparsity_stats();
        assert!(s.d.iter().all(|&d| d == 0.2));
        assert_eq!(s.d_bar, 1.0);
        let s10 = sparsity_from_cardinalities(&[1; 10], 10);
        assert_eq!(s10.d_bar, 1.0);
    }

    #[test]
    fn complete_graph_has_full_fields() {
        let s = ReceptiveFieldMap::one_hop(&Graph::complete(4)).sparsity_stats();
        assert!(s.d.iter().all(|&d| d == 1.0));
        assert_eq!(s.d_bar, 4.0);
    }

    #[test]
    fn sparsity_arithmetic() {
        let s = sparsity_from_cardinalities(&[2, 2, 3], 3);
        assert_eq!(s.d, vec![2.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert!((s.d_bar - 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.sup_d, 1.0);
    }

    #[test]
    fn star_sparsity() {
        let s = ReceptiveFieldMap::one_hop(&Graph::star(5)).sparsity_stats();
        assert_eq!(s.d[0], 1.0);
        assert!(s.d[1..].iter().all(|&d| d == 0.4));
        assert_eq!(s.sup_d, 1.0);
    }

    #[test]
    fn explicit_fields_are_validated() {
        assert!(ReceptiveFieldMap::from_fields(2, vec![vec![0, 1], vec![1]]).is_err());
        assert!(ReceptiveFieldMap::from_fields(2, vec![vec![1], vec![0, 1]]).is_err());
        let ok = ReceptiveFieldMap::from_fields(2, vec![vec![1, 0], vec![0, 1]]).unwrap();
        assert_eq!(ok, ReceptiveFieldMap::one_hop(&Graph::complete(2)));
    }

    #[test]
    fn edge_list_round_trip() {
        let text = "0 1\n\n# comment\n2 3\n1 0\n";
        let g = Graph::parse_edge_list(text, None).unwrap();
        assert_eq!(g.num_vertices(), 4);
        assert_eq!(g.num_edges(), 2);
        let again = Graph::parse_edge_list(&g.to_edge_list(), Some(4)).unwrap();
        assert_eq!(g, again);
        assert!(matches!(
            Graph::parse_edge_list("0 x", None),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn one_hop_fields_are_self_inclusive_and_symmetric(n in 1usize..30, p in 0.0f64..1.0, seed: u64) {
            let g = Graph::erdos_renyi(n, p, &mut rng_from(seed));
            let rf = ReceptiveFieldMap::one_hop(&g);
            for i in 0..n {
                prop_assert!(rf.contains(i, i));
                for j in 0..n {
                    prop_assert_eq!(rf.contains(i, j), rf.contains(j, i));
                }
            }
            let s = rf.sparsity_stats();
            prop_assert_eq!(s.d_bar == 1.0, g.num_edges() == 0);
        }

        #[test]
        fn sup_sparsity_monotone_under_edge_addition(n in 2usize..20, p in 0.0f64..0.6, seed: u64, a in 0usize..20, b in 0usize..20) {
            let mut g = Graph::erdos_renyi(n, p, &mut rng_from(seed));
            let before = ReceptiveFieldMap::one_hop(&g).sparsity_stats().sup_d;
            let (a, b) = (a % n, b % n);
            if a != b {
                g.add_edge(a, b).unwrap();
            }
            let after = ReceptiveFieldMap::one_hop(&g).sparsity_stats().sup_d;
            prop_assert!(after >= before);
        }
    }
}
