//! Directed graphs, bi-degree sequences and node parameters.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, domain, Error, Result};
use crate::model::EdgeMean;

const WORD: usize = 64;

/// A simple directed graph on nodes `0..n` stored as bit-packed adjacency rows.
///
/// Nodes are 0-based in memory; edge-list files use 1-based ids.
#[derive(Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl std::fmt::Debug for DirectedGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirectedGraph")
            .field("n", &self.n)
            .field("edges", &self.edge_count())
            .finish()
    }
}

impl DirectedGraph {
    /// The empty graph on `n >= 2` nodes.
    pub fn empty(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(domain(format!("a graph needs at least 2 nodes, got {n}")));
        }
        let words = n.div_ceil(WORD);
        Ok(Self {
            n,
            words,
            bits: vec![0; n * words],
        })
    }

    /// Build from 0-based `(src, dst)` pairs. Duplicates collapse.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = Self::empty(n)?;
        for (i, j) in edges {
            g.insert(i, j)?;
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && self.bits[i * self.words + j / WORD] >> (j % WORD) & 1 == 1
    }

    /// Insert `i -> j`; returns `false` when the edge was already present.
    pub fn insert(&mut self, i: usize, j: usize) -> Result<bool> {
        if i >= self.n || j >= self.n {
            return Err(contract(format!("edge ({i}, {j}) out of range for n = {}", self.n)));
        }
        if i == j {
            return Err(contract(format!("self-loop at node {i}")));
        }
        let w = &mut self.bits[i * self.words + j / WORD];
        let mask = 1u64 << (j % WORD);
        let fresh = *w & mask == 0;
        *w |= mask;
        Ok(fresh)
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// 0-based edges in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            (0..self.n).filter(move |&j| self.has_edge(i, j)).map(move |j| (i, j))
        })
    }

    /// Serialize to the edge-list text format (1-based ids, `n=` header).
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n={}", self.n);
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{} {}", i + 1, j + 1);
        }
        out
    }
}

/// Out- and in-degree sequences `(d+, d-)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiDegree {
    pub out_deg: Vec<usize>,
    pub in_deg: Vec<usize>,
}

impl BiDegree {
    pub fn n(&self) -> usize {
        self.out_deg.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out_deg.iter().sum()
    }
}

/// Row and column sums of the adjacency matrix.
pub fn degrees(g: &DirectedGraph) -> BiDegree {
    let n = g.n;
    let mut out_deg = vec![0; n];
    let mut in_deg = vec![0; n];
    for i in 0..n {
        let row = &g.bits[i * g.words..(i + 1) * g.words];
        out_deg[i] = row.iter().map(|w| w.count_ones() as usize).sum();
        for (k, &w) in row.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                let b = w.trailing_zeros() as usize;
                in_deg[k * WORD + b] += 1;
                w &= w - 1;
            }
        }
    }
    BiDegree { out_deg, in_deg }
}

/// Node parameters `(alpha_1..alpha_n, beta_1..beta_n)` with `beta_n = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl ParameterVector {
    /// `alpha` of length `n` and `beta` of length `n` (last entry zero) or `n - 1`.
    pub fn new(alpha: Vec<f64>, mut beta: Vec<f64>) -> Result<Self> {
        let n = alpha.len();
        if n < 2 {
            return Err(domain(format!("need at least 2 nodes, got {n}")));
        }
        if beta.len() + 1 == n {
            beta.push(0.0);
        }
        if beta.len() != n {
            return Err(contract(format!(
                "beta has length {}, expected {} or {}",
                beta.len(),
                n - 1,
                n
            )));
        }
        if beta[n - 1] != 0.0 {
            return Err(contract(format!("beta_n must be 0, got {}", beta[n - 1])));
        }
        if alpha.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(domain("parameters must be finite"));
        }
        Ok(Self { alpha, beta })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            alpha: vec![0.0; n],
            beta: vec![0.0; n],
        }
    }

    /// Unpack the free vector `theta = (alpha_1..alpha_n, beta_1..beta_{n-1})`.
    pub fn from_free(theta: &[f64]) -> Result<Self> {
        if theta.len() < 3 || theta.len().is_multiple_of(2) {
            return Err(contract(format!(
                "free parameter vector must have odd length 2n - 1 >= 3, got {}",
                theta.len()
            )));
        }
        let n = theta.len().div_ceil(2);
        Self::new(theta[..n].to_vec(), theta[n..].to_vec())
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// All `n` in-parameters; the last is always zero.
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// The `2n - 1` free coordinates.
    pub fn to_free(&self) -> Vec<f64> {
        let n = self.n();
        self.alpha.iter().chain(&self.beta[..n - 1]).copied().collect()
    }

    /// Overwrite from free coordinates without re-validation.
    pub(crate) fn set_free(&mut self, theta: &[f64]) {
        let n = self.n();
        self.alpha.copy_from_slice(&theta[..n]);
        self.beta[..n - 1].copy_from_slice(&theta[n..]);
    }

    pub fn max_abs(&self) -> f64 {
        self.alpha.iter().chain(&self.beta).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max_{i != j} |alpha_i + beta_j|`.
    pub fn max_abs_sum(&self) -> f64 {
        let mut q: f64 = 0.0;
        for (i, a) in self.alpha.iter().enumerate() {
            for (j, b) in self.beta.iter().enumerate() {
                if i != j {
                    q = q.max((a + b).abs());
                }
            }
        }
        q
    }
}

/// Expected out- and in-degrees `sum_{k != i} mu(alpha_i + beta_k)` for every node.
pub fn expected_degrees<M: EdgeMean + ?Sized>(theta: &ParameterVector, model: &M) -> (Vec<f64>, Vec<f64>) {
    let n = theta.n();
    let mut out = vec![0.0; n];
    let mut inn = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let p = model.mu(theta.alpha[i] + theta.beta[j]);
                out[i] += p;
                inn[j] += p;
            }
        }
    }
    (out, inn)
}

/// Draw every ordered pair `i != j` independently as Bernoulli(`mu(alpha_i + beta_j)`).
///
/// Pairs are visited row-major with one uniform per pair, so the graph is a
/// deterministic function of the RNG state.
pub fn sample_graph<M, R>(theta: &ParameterVector, model: &M, rng: &mut R) -> DirectedGraph
where
    M: EdgeMean + ?Sized,
    R: Rng + ?Sized,
{
    let n = theta.n();
    let mut g = DirectedGraph::empty(n).expect("ParameterVector has n >= 2");
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = model.mu(theta.alpha[i] + theta.beta[j]);
            if rng.random::<f64>() < p {
                g.bits[i * g.words + j / WORD] |= 1u64 << (j % WORD);
            }
        }
    }
    g
}

/// Result of reading an edge list.
#[derive(Debug, Clone)]
pub struct ParsedGraph {
    pub graph: DirectedGraph,
    /// Number of edge lines that repeated an earlier edge.
    pub duplicates: usize,
}

/// Parse the whitespace-separated edge-list format.
///
/// One `<src> <dst>` pair per line with 1-based ids; blank lines and lines
/// starting with `#` are skipped; an optional first content line `n=<count>`
/// declares the node count (otherwise the largest id seen is used).
pub fn parse_edge_list(text: &[u8]) -> Result<ParsedGraph> {
    let text = std::str::from_utf8(text).map_err(|e| {
        let line = text[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::Parse {
            line,
            msg: "input is not valid UTF-8".into(),
        }
    })?;

    let mut declared: Option<usize> = None;
    let mut seen_content = false;
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    let mut max_id = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_content {
            seen_content = true;
            if let Some(rest) = line.strip_prefix("n=") {
                let n = rest.trim().parse::<usize>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("invalid node count header '{line}'"),
                })?;
                declared = Some(n);
                continue;
            }
        }
        let mut fields = line.split_whitespace();
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected '<src> <dst>', got '{line}'"),
            });
        };
        let parse_id = |s: &str| -> Result<usize> {
            let v = s.parse::<i64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid node id '{s}'"),
            })?;
            if v < 1 {
                return Err(Error::Validation {
                    line: lineno,
                    msg: format!("node ids are 1-based, got {v}"),
                });
            }
            Ok(v as usize)
        };
        let (src, dst) = (parse_id(a)?, parse_id(b)?);
        if src == dst {
            return Err(Error::Validation {
                line: lineno,
                msg: format!("self-loop {src} -> {dst} is not allowed"),
            });
        }
        max_id = max_id.max(src).max(dst);
        edges.push((lineno, src, dst));
    }

    let n = match declared {
        Some(d) if d < max_id => {
            return Err(Error::Validation {
                line: edges.iter().find(|e| e.1 > d || e.2 > d).map_or(1, |e| e.0),
                msg: format!("node id {max_id} exceeds declared n={d}"),
            })
        }
        Some(d) => d,
        None => max_id,
    };
    let mut graph = DirectedGraph::empty(n).map_err(|_| Error::Validation {
        line: 1,
        msg: format!("edge list describes {n} node(s); at least 2 are required"),
    })?;
    let mut duplicates = 0;
    for (_, src, dst) in edges {
        if !graph.insert(src - 1, dst - 1)? {
            duplicates += 1;
        }
    }
    Ok(ParsedGraph { graph, duplicates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Probit;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degrees_of_small_graphs() {
        let g = DirectedGraph::empty(5).unwrap();
        let d = degrees(&g);
        assert_eq!(d.out_deg, vec![0; 5]);
        assert_eq!(d.in_deg, vec![0; 5]);

        let complete = DirectedGraph::from_edges(
            4,
            (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j))),
        )
        .unwrap();
        let d = degrees(&complete);
        assert_eq!(d.out_deg, vec![3; 4]);
        assert_eq!(d.in_deg, vec![3; 4]);

        let cycle = DirectedGraph::from_edges(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        let d = degrees(&cycle);
        assert_eq!(d.out_deg, vec![1, 1, 1]);
        assert_eq!(d.in_deg, vec![1, 1, 1]);
    }

    #[test]
    fn degrees_span_word_boundaries() {
        let n = 130;
        let g = DirectedGraph::from_edges(n, [(0, 129), (129, 0), (64, 63), (5, 64)]).unwrap();
        let d = degrees(&g);
        assert_eq!(d.out_deg[0], 1);
        assert_eq!(d.in_deg[129], 1);
        assert_eq!(d.in_deg[64], 1);
        assert_eq!(d.in_deg[63], 1);
        assert_eq!(d.edge_count(), 4);
    }

    #[test]
    fn parse_simple_list() {
        let p = parse_edge_list(b"1 2\n2 3\n").unwrap();
        assert_eq!(p.graph.n(), 3);
        assert!(p.graph.has_edge(0, 1) && p.graph.has_edge(1, 2));
        assert_eq!(p.graph.edge_count(), 2);
        assert_eq!(degrees(&p.graph).out_deg, vec![1, 1, 0]);
    }

    #[test]
    fn parse_header_comments_and_duplicates() {
        let p = parse_edge_list(b"# friends\nn=6\n1 2\n\n1   2\n# tail\n3\t1\n").unwrap();
        assert_eq!(p.graph.n(), 6);
        assert_eq!(p.graph.edge_count(), 2);
        assert_eq!(p.duplicates, 1);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_edge_list(b"3 3\n") {
            Err(Error::Validation { line: 1, msg }) => assert!(msg.contains("self-loop")),
            other => panic!("unexpected {other:?}"),
        }
        match parse_edge_list(b"1 2\n0 1\n") {
            Err(Error::Validation { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_edge_list(b"1 2\n2 x\n") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_edge_list(b"1 2 3\n") {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_edge_list(b"n=2\n1 3\n").is_err());
        assert!(parse_edge_list(b"").is_err());
    }

    #[test]
    fn parameter_vector_contract() {
        assert!(ParameterVector::new(vec![0.0, 1.0], vec![1.0, 0.5]).is_err());
        let p = ParameterVector::new(vec![0.1, 0.2, 0.3], vec![1.0, 2.0]).unwrap();
        assert_eq!(p.beta(), &[1.0, 2.0, 0.0]);
        assert_eq!(p.to_free(), vec![0.1, 0.2, 0.3, 1.0, 2.0]);
        assert_eq!(ParameterVector::from_free(&p.to_free()).unwrap(), p);
        assert!(ParameterVector::new(vec![f64::NAN, 0.0], vec![0.0]).is_err());
        assert!(ParameterVector::from_free(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_parameters_give_half_density() {
        let theta = ParameterVector::zeros(50);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reps = 41; // 41 * 50 * 49 ~ 1e5 pair draws
        let mut edges = 0usize;
        for _ in 0..reps {
            edges += sample_graph(&theta, &Probit, &mut rng).edge_count();
        }
        let trials = (reps * 50 * 49) as f64;
        let density = edges as f64 / trials;
        let se = (0.25 / trials).sqrt();
        assert!((density - 0.5).abs() < 3.0 * se, "density {density}");
    }

    #[test]
    fn very_negative_parameters_give_empty_graph() {
        let theta = ParameterVector::new(vec![-10.0; 20], vec![0.0; 20]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_graph(&theta, &Probit, &mut rng).edge_count(), 0);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let theta = ParameterVector::new(vec![0.3; 12], vec![-0.2; 12].into_iter().take(11).collect()).unwrap();
        let a = sample_graph(&theta, &Probit, &mut ChaCha8Rng::seed_from_u64(99));
        let b = sample_graph(&theta, &Probit, &mut ChaCha8Rng::seed_from_u64(99));
        assert_eq!(a, b);
    }

    #[test]
    fn average_degrees_match_expectation() {
        // n = 20, R = 1e4 replications, 3-sigma bands per node.
        let n = 20;
        let alpha: Vec<f64> = (0..n).map(|i| 1.0 - 2.0 * i as f64 / (n - 1) as f64).collect();
        let beta: Vec<f64> = (0..n - 1).map(|i| 0.5 - 0.05 * i as f64).collect();
        let theta = ParameterVector::new(alpha, beta).unwrap();
        let (exp_out, exp_in) = expected_degrees(&theta, &Probit);
        let reps = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut sum_out = vec![0.0; n];
        let mut sum_in = vec![0.0; n];
        for _ in 0..reps {
            let d = degrees(&sample_graph(&theta, &Probit, &mut rng));
            for i in 0..n {
                sum_out[i] += d.out_deg[i] as f64;
                sum_in[i] += d.in_deg[i] as f64;
            }
        }
        for i in 0..n {
            let var_out: f64 = (0..n)
                .filter(|&k| k != i)
                .map(|k| {
                    let p = Probit.mu(theta.alpha()[i] + theta.beta()[k]);
                    p * (1.0 - p)
                })
                .sum();
            let se = (var_out / reps as f64).sqrt();
            assert!((sum_out[i] / reps as f64 - exp_out[i]).abs() < 3.0 * se, "out {i}");
            let var_in: f64 = (0..n)
                .filter(|&k| k != i)
                .map(|k| {
                    let p = Probit.mu(theta.alpha()[k] + theta.beta()[i]);
                    p * (1.0 - p)
                })
                .sum();
            let se = (var_in / reps as f64).sqrt();
            assert!((sum_in[i] / reps as f64 - exp_in[i]).abs() < 3.0 * se, "in {i}");
        }
    }

    proptest! {
        #[test]
        fn edge_list_round_trip(n in 2usize..90, raw in prop::collection::vec((0usize..90, 0usize..90), 0..300)) {
            let edges: Vec<_> = raw.into_iter().map(|(a, b)| (a % n, b % n)).filter(|(a, b)| a != b).collect();
            let g = DirectedGraph::from_edges(n, edges).unwrap();
            let back = parse_edge_list(g.to_edge_list().as_bytes()).unwrap();
            prop_assert_eq!(back.duplicates, 0);
            prop_assert_eq!(&back.graph, &g);
            let d = degrees(&g);
            prop_assert_eq!(d.out_deg.iter().sum::<usize>(), d.in_deg.iter().sum::<usize>());
            prop_assert_eq!(d.edge_count(), g.edge_count());
            prop_assert!(d.out_deg.iter().chain(&d.in_deg).all(|&v| v < n));
        }
    }
}
