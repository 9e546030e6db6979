//! Seeded generation of Erdos-Renyi, Barabasi-Albert and 2d-grid graphs.
//!
//! Every graph is a pure function of `(master_seed, index)`: each index gets
//! its own ChaCha stream, so datasets come out identical no matter how many
//! threads build them.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_WEIGHT: f64 = 0.2;
pub const MAX_WEIGHT: f64 = 1.0;
pub const DEFAULT_BA_ATTACHMENT: usize = 4;

/// Undirected simple graph with edge weights and a source node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    pub n: usize,
    pub source: usize,
    /// `(u, v, w)` with `u < v`, sorted, no duplicates.
    pub edges: Vec<(usize, usize, f64)>,
}

impl WeightedGraph {
    pub fn new(n: usize, source: usize, mut edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        for e in edges.iter_mut() {
            if e.0 > e.1 {
                std::mem::swap(&mut e.0, &mut e.1);
            }
        }
        edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let g = WeightedGraph { n, source, edges };
        g.validate()?;
        Ok(g)
    }

    /// Checks simplicity, weight range and source bounds.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::arg("graph must have at least one node"));
        }
        if self.source >= self.n {
            return Err(Error::arg(format!("source {} out of range for n={}", self.source, self.n)));
        }
        let mut seen = BTreeSet::new();
        for &(u, v, w) in &self.edges {
            if u >= v {
                return Err(Error::arg(format!("edge ({u},{v}) must satisfy u < v")));
            }
            if v >= self.n {
                return Err(Error::arg(format!("edge ({u},{v}) out of range for n={}", self.n)));
            }
            if !(MIN_WEIGHT..=MAX_WEIGHT).contains(&w) {
                return Err(Error::arg(format!("edge ({u},{v}) weight {w} outside [0.2, 1.0]")));
            }
            if !seen.insert((u, v)) {
                return Err(Error::arg(format!("duplicate edge ({u},{v})")));
            }
        }
        Ok(())
    }

    /// Neighbour lists `(neighbour, weight)`, each sorted by neighbour index.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v, w) in &self.edges {
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        for list in adj.iter_mut() {
            list.sort_by_key(|&(v, _)| v);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(u, v, _) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::arg("permutation length must equal n"));
        }
        let edges = self.edges.iter().map(|&(u, v, w)| (perm[u], perm[v], w)).collect();
        WeightedGraph::new(self.n, perm[self.source], edges)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Er,
    Ba,
    Grid,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Er, Family::Ba, Family::Grid];

    pub fn name(self) -> &'static str {
        match self {
            Family::Er => "er",
            Family::Ba => "ba",
            Family::Grid => "grid",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "er" => Ok(Family::Er),
            "ba" => Ok(Family::Ba),
            "grid" | "2d-grid" => Ok(Family::Grid),
            other => Err(Error::arg(format!("unknown graph family '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub family: Family,
    pub n: usize,
    pub count: usize,
    pub master_seed: u64,
    /// Edges added per new node in Barabasi-Albert graphs.
    #[serde(default = "default_ba_m")]
    pub ba_attachment: usize,
}

fn default_ba_m() -> usize {
    DEFAULT_BA_ATTACHMENT
}

impl DatasetSpec {
    pub fn new(family: Family, n: usize, count: usize, master_seed: u64) -> Self {
        DatasetSpec { family, n, count, master_seed, ba_attachment: DEFAULT_BA_ATTACHMENT }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::arg("dataset count must be at least 1"));
        }
        if self.n < 2 {
            return Err(Error::arg("graphs need at least 2 nodes"));
        }
        if self.family == Family::Ba && self.ba_attachment == 0 {
            return Err(Error::arg("Barabasi-Albert attachment must be positive"));
        }
        Ok(())
    }
}

/// Edge probability for Erdos-Renyi graphs: `min(log2(n) / n, 0.5)`.
pub fn er_probability(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::arg(format!("er_probability needs n >= 2, got {n}")));
    }
    let n = n as f64;
    Ok((n.log2() / n).min(0.5))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream index into an independent 64-bit seed.
pub fn stream_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index.wrapping_mul(0xD6E8_FEB8_6659_FD93)))
}

pub(crate) fn stream_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master_seed, index))
}

fn draw_weight(rng: &mut impl Rng) -> f64 {
    MIN_WEIGHT + (MAX_WEIGHT - MIN_WEIGHT) * rng.gen::<f64>()
}

/// Near-square factorisation `rows * cols = n` with `rows <= cols`.
/// Primes give the degenerate `1 x n` path.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let mut rows = (n as f64).sqrt() as usize;
    while rows > 1 && n % rows != 0 {
        rows -= 1;
    }
    let rows = rows.max(1);
    (rows, n / rows)
}

fn er_edges(n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let p = er_probability(n).expect("DatasetSpec::validate requires n >= 2");
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

fn ba_edges(n: usize, m: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    // Seed graph: star on the first min(m + 1, n) nodes.
    let seed_nodes = (m + 1).min(n);
    let mut edges: Vec<(usize, usize)> = (1..seed_nodes).map(|v| (0, v)).collect();
    let mut endpoints: Vec<usize> = edges.iter().flat_map(|&(u, v)| [u, v]).collect();
    for new in seed_nodes..n {
        let mut targets = BTreeSet::new();
        while targets.len() < m {
            targets.insert(endpoints[rng.gen_range(0..endpoints.len())]);
        }
        for &t in &targets {
            edges.push((t, new));
            endpoints.push(t);
            endpoints.push(new);
        }
    }
    edges
}

fn grid_edges(n: usize) -> Vec<(usize, usize)> {
    let (rows, cols) = grid_shape(n);
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let id = r * cols + c;
            if c + 1 < cols {
                edges.push((id, id + 1));
            }
            if r + 1 < rows {
                edges.push((id, id + cols));
            }
        }
    }
    edges
}

/// Builds graph `index` of the dataset. Depends only on `(master_seed, index)`.
pub fn generate_graph(spec: &DatasetSpec, index: usize) -> Result<WeightedGraph> {
    spec.validate()?;
    if index >= spec.count {
        return Err(Error::arg(format!("graph index {index} out of range for count {}", spec.count)));
    }
    let mut rng = stream_rng(spec.master_seed, index as u64);
    let topology = match spec.family {
        Family::Er => er_edges(spec.n, &mut rng),
        Family::Ba => ba_edges(spec.n, spec.ba_attachment, &mut rng),
        Family::Grid => grid_edges(spec.n),
    };
    let edges = topology.into_iter().map(|(u, v)| (u, v, draw_weight(&mut rng))).collect();
    let source = rng.gen_range(0..spec.n);
    WeightedGraph::new(spec.n, source, edges)
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<WeightedGraph>> {
    spec.validate()?;
    (0..spec.count).into_par_iter().map(|i| generate_graph(spec, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn er_probability_values() {
        let p20 = er_probability(20).unwrap();
        assert!((p20 - 20f64.log2() / 20.0).abs() < 1e-15);
        assert!((p20 - 0.216_096_404_744_368_1).abs() < 1e-12);
        assert_eq!(er_probability(2).unwrap(), 0.5);
        assert_eq!(er_probability(4).unwrap(), 0.5);
        assert!(er_probability(1).is_err());
        assert!(er_probability(0).is_err());
    }

    #[test]
    fn grid_shapes() {
        assert_eq!(grid_shape(20), (4, 5));
        assert_eq!(grid_shape(16), (4, 4));
        assert_eq!(grid_shape(5), (1, 5));
        assert_eq!(grid_shape(12), (3, 4));
        assert_eq!(grid_shape(2), (1, 2));
    }

    #[test]
    fn grid_edge_counts() {
        let g = generate_graph(&DatasetSpec::new(Family::Grid, 20, 1, 7), 0).unwrap();
        assert_eq!(g.edges.len(), 31);
        let g = generate_graph(&DatasetSpec::new(Family::Grid, 5, 1, 7), 0).unwrap();
        assert_eq!(g.edges.len(), 4);
    }

    #[test]
    fn grid_corner_degrees() {
        let g = generate_graph(&DatasetSpec::new(Family::Grid, 24, 1, 3), 0).unwrap();
        let deg = g.degrees();
        assert!(deg.iter().all(|d| (2..=4).contains(d)));
        assert_eq!(deg.iter().filter(|&&d| d == 2).count(), 4);
    }

    #[test]
    fn dataset_rejects_zero_count() {
        assert!(generate_dataset(&DatasetSpec::new(Family::Er, 20, 0, 1)).is_err());
        assert!(generate_dataset(&DatasetSpec::new(Family::Er, 1, 3, 1)).is_err());
    }

    #[test]
    fn graph_index_out_of_range() {
        let spec = DatasetSpec::new(Family::Ba, 10, 2, 1);
        assert!(generate_graph(&spec, 2).is_err());
    }

    #[test]
    fn dataset_matches_individual_graphs() {
        let spec = DatasetSpec::new(Family::Ba, 15, 12, 99);
        let all = generate_dataset(&spec).unwrap();
        for i in (0..12).rev() {
            assert_eq!(all[i], generate_graph(&spec, i).unwrap());
        }
    }

    #[test]
    fn weights_in_range() {
        let spec = DatasetSpec::new(Family::Er, 20, 100, 5);
        for g in generate_dataset(&spec).unwrap() {
            assert!(g.edges.iter().all(|e| (0.2..=1.0).contains(&e.2)));
        }
    }

    #[test]
    fn rejects_invalid_graphs() {
        assert!(WeightedGraph::new(3, 0, vec![(0, 0, 0.5)]).is_err());
        assert!(WeightedGraph::new(3, 0, vec![(0, 1, 0.5), (1, 0, 0.6)]).is_err());
        assert!(WeightedGraph::new(3, 0, vec![(0, 1, 1.5)]).is_err());
        assert!(WeightedGraph::new(3, 3, vec![]).is_err());
        assert!(WeightedGraph::new(3, 0, vec![(0, 5, 0.5)]).is_err());
    }

    #[test]
    fn ba_small_n_is_star() {
        let g = generate_graph(&DatasetSpec::new(Family::Ba, 3, 1, 0), 0).unwrap();
        assert_eq!(g.edges.iter().map(|e| (e.0, e.1)).collect::<Vec<_>>(), vec![(0, 1), (0, 2)]);
    }
}
