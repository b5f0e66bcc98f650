//! Directed Erdős–Rényi graphs: parameters, sampling and exhaustive enumeration.
//!
//! Every ordered pair `(i, j)` with `i != j` carries an edge independently with
//! probability `p`. An edge `(i, j)` means agent `i` reads the state of agent
//! `j`, so the out-degree of `i` is the number of neighbours it averages over.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Geometric;

use crate::error::{Error, Result};

/// Largest node count accepted by [`enumerate_graphs`] (2^20 realizations).
pub const MAX_ENUMERATION_NODES: usize = 5;

/// The `(n, p)` pair defining the graph ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    n: usize,
    p: f64,
}

impl ModelParams {
    /// `p = 0` is rejected: the expected weight matrix is then the identity and
    /// no consensus takes place.
    pub fn new(n: usize, p: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewNodes(n));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidProbability(p));
        }
        Ok(Self { n, p })
    }

    /// Parameters with expected out-degree scale `c`, i.e. `p = c / n`.
    pub fn with_degree(n: usize, c: f64) -> Result<Self> {
        Self::new(n, c / n as f64)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `q = 1 - p`.
    pub fn q(&self) -> f64 {
        1.0 - self.p
    }
}

/// Seed plus replication stream. Each stream is an independent ChaCha8 stream,
/// so a replication's graph sequence never depends on scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GraphSeed {
    pub seed: u64,
    pub stream: u64,
}

impl GraphSeed {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    /// A new base seed for a labelled sub-experiment (e.g. one sweep row).
    pub fn derive(self, label: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(label.wrapping_add(0x5851_f42d_4c95_7f2d))),
            stream: 0,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One realization: adjacency rows as bitsets plus cached out-degrees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    words_per_row: usize,
    bits: Vec<u64>,
    out_degrees: Vec<usize>,
}

impl DirectedGraph {
    pub fn empty(n: usize) -> Self {
        let words_per_row = n.div_ceil(64).max(1);
        Self {
            n,
            words_per_row,
            bits: vec![0; n * words_per_row],
            out_degrees: vec![0; n],
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut g = Self::empty(n);
        g.fill_complete();
        g
    }

    /// Self-loops in `edges` are ignored.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut g = Self::empty(n);
        for (i, j) in edges {
            if i != j {
                g.insert_edge(i, j);
            }
        }
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let w = self.bits[i * self.words_per_row + j / 64];
        w >> (j % 64) & 1 == 1
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.out_degrees[i]
    }

    pub fn out_degrees(&self) -> &[usize] {
        &self.out_degrees
    }

    pub fn edge_count(&self) -> usize {
        self.out_degrees.iter().sum()
    }

    /// Targets of the edges leaving `i`, ascending.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.bits[i * self.words_per_row..(i + 1) * self.words_per_row];
        row.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }

    fn insert_edge(&mut self, i: usize, j: usize) {
        debug_assert!(i != j && i < self.n && j < self.n);
        let slot = &mut self.bits[i * self.words_per_row + j / 64];
        let mask = 1u64 << (j % 64);
        if *slot & mask == 0 {
            *slot |= mask;
            self.out_degrees[i] += 1;
        }
    }

    fn clear(&mut self) {
        self.bits.iter_mut().for_each(|w| *w = 0);
        self.out_degrees.iter_mut().for_each(|d| *d = 0);
    }

    fn fill_complete(&mut self) {
        self.clear();
        for i in 0..self.n {
            for j in (0..self.n).filter(|&j| j != i) {
                self.insert_edge(i, j);
            }
        }
    }
}

/// Reusable sampler; keeps the skip distribution between draws.
#[derive(Debug, Clone)]
pub struct GraphSampler {
    params: ModelParams,
    skip: Geometric,
}

impl GraphSampler {
    pub fn new(params: ModelParams) -> Self {
        // p was validated to lie in (0, 1].
        let skip = Geometric::new(params.p()).expect("valid probability");
        Self { params, skip }
    }

    pub fn params(&self) -> ModelParams {
        self.params
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DirectedGraph {
        let mut g = DirectedGraph::empty(self.params.n());
        self.sample_into(rng, &mut g);
        g
    }

    /// Overwrites `graph` with a fresh realization.
    ///
    /// Each row walks its `n - 1` off-diagonal slots with geometric gaps, which
    /// is equivalent to an independent Bernoulli(p) draw per slot.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, graph: &mut DirectedGraph) {
        let n = self.params.n();
        assert_eq!(graph.n(), n, "graph buffer has wrong size");
        if self.params.p() >= 1.0 {
            graph.fill_complete();
            return;
        }
        graph.clear();
        let slots = (n - 1) as u64;
        for i in 0..n {
            let mut pos: u64 = 0;
            loop {
                let gap = rng.sample(self.skip);
                pos = match pos.checked_add(gap) {
                    Some(v) if v < slots => v,
                    _ => break,
                };
                let t = pos as usize;
                let j = if t < i { t } else { t + 1 };
                graph.insert_edge(i, j);
                pos += 1;
            }
        }
    }
}

/// Draws one graph from `G(n, p)`.
pub fn sample_graph<R: Rng + ?Sized>(params: ModelParams, rng: &mut R) -> DirectedGraph {
    GraphSampler::new(params).sample(rng)
}

/// Number of off-diagonal slots `n(n-1)`.
pub fn slot_count(n: usize) -> usize {
    n * (n - 1)
}

/// Graph whose edge set is given by the bits of `index`, slot `k` enumerating
/// the off-diagonal pairs in row-major order.
pub fn graph_from_index(n: usize, index: u64) -> DirectedGraph {
    let mut g = DirectedGraph::empty(n);
    let mut k = 0;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            if index >> k & 1 == 1 {
                g.insert_edge(i, j);
            }
            k += 1;
        }
    }
    g
}

/// Probability of a specific realization with `edges` edges.
pub fn realization_probability(params: ModelParams, edges: usize) -> f64 {
    let m = slot_count(params.n());
    let absent = (m - edges) as i32;
    params.p().powi(edges as i32) * params.q().powi(absent)
}

/// Iterator over all `2^{n(n-1)}` realizations with their probabilities.
#[derive(Debug, Clone)]
pub struct GraphEnumeration {
    params: ModelParams,
    next: u64,
    end: u64,
}

impl Iterator for GraphEnumeration {
    type Item = (DirectedGraph, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.end {
            return None;
        }
        let g = graph_from_index(self.params.n(), self.next);
        self.next += 1;
        let prob = realization_probability(self.params, g.edge_count());
        Some((g, prob))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for GraphEnumeration {}

pub fn check_enumerable(n: usize) -> Result<()> {
    if n > MAX_ENUMERATION_NODES {
        return Err(Error::EnumerationTooLarge {
            n,
            max: MAX_ENUMERATION_NODES,
        });
    }
    Ok(())
}

pub fn enumerate_graphs(params: ModelParams) -> Result<GraphEnumeration> {
    check_enumerable(params.n())?;
    Ok(GraphEnumeration {
        params,
        next: 0,
        end: 1u64 << slot_count(params.n()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

    #[test]
    fn rejects_bad_params() {
        assert_eq!(ModelParams::new(1, 0.5), Err(Error::TooFewNodes(1)));
        assert_eq!(ModelParams::new(3, 0.0), Err(Error::InvalidProbability(0.0)));
        assert!(ModelParams::new(3, 1.5).is_err());
        assert!(ModelParams::new(3, f64::NAN).is_err());
        assert!(ModelParams::new(2, 1.0).is_ok());
    }

    #[test]
    fn p_one_gives_complete_digraph() {
        let mut rng = GraphSeed::new(1).rng();
        for n in [3, 5] {
            let g = sample_graph(ModelParams::new(n, 1.0).unwrap(), &mut rng);
            assert_eq!(g, DirectedGraph::complete(n));
            assert!(g.out_degrees().iter().all(|&d| d == n - 1));
        }
    }

    #[test]
    fn no_self_loops_and_consistent_degrees() {
        let params = ModelParams::new(70, 0.4).unwrap();
        let sampler = GraphSampler::new(params);
        let mut rng = GraphSeed::new(3).rng();
        for _ in 0..20 {
            let g = sampler.sample(&mut rng);
            for i in 0..70 {
                assert!(!g.has_edge(i, i));
                let listed: Vec<_> = g.neighbors(i).collect();
                assert_eq!(listed.len(), g.out_degree(i));
                assert_eq!(
                    (0..70).filter(|&j| g.has_edge(i, j)).count(),
                    g.out_degree(i)
                );
            }
        }
    }

    #[test]
    fn n2_edge_frequency_matches_p() {
        let params = ModelParams::new(2, 0.5).unwrap();
        let sampler = GraphSampler::new(params);
        let mut rng = GraphSeed::new(11).rng();
        let draws = 100_000;
        let mut hits = 0usize;
        for _ in 0..draws {
            let g = sampler.sample(&mut rng);
            hits += g.has_edge(0, 1) as usize;
        }
        let freq = hits as f64 / draws as f64;
        let band = 3.0 * (0.25f64 / draws as f64).sqrt();
        assert!((freq - 0.5).abs() <= band, "freq {freq}");
    }

    #[test]
    fn out_degree_chi_square_binomial() {
        let (n, p) = (8, 0.3);
        let params = ModelParams::new(n, p).unwrap();
        let sampler = GraphSampler::new(params);
        let mut rng = GraphSeed::new(2024).rng();
        let samples = 100_000;
        let mut counts = vec![0usize; n];
        for _ in 0..samples {
            counts[sampler.sample(&mut rng).out_degree(0)] += 1;
        }
        let law = Binomial::new(p, (n - 1) as u64).unwrap();
        // pool cells so each expected count is at least 5
        let mut cells: Vec<(f64, f64)> = Vec::new();
        let (mut obs, mut exp) = (0.0, 0.0);
        for (k, &c) in counts.iter().enumerate() {
            obs += c as f64;
            exp += law.pmf(k as u64) * samples as f64;
            if exp >= 5.0 {
                cells.push((obs, exp));
                obs = 0.0;
                exp = 0.0;
            }
        }
        if exp > 0.0 {
            let last = cells.last_mut().unwrap();
            last.0 += obs;
            last.1 += exp;
        }
        let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
        let dof = (cells.len() - 1) as f64;
        let critical = ChiSquared::new(dof).unwrap().inverse_cdf(0.999);
        assert!(stat < critical, "chi2 {stat} >= {critical}");
    }

    #[test]
    fn same_seed_same_sequence() {
        let params = ModelParams::new(12, 0.2).unwrap();
        let sampler = GraphSampler::new(params);
        let seed = GraphSeed::new(99).with_stream(4);
        let mut a = seed.rng();
        let mut b = seed.rng();
        for _ in 0..50 {
            assert_eq!(sampler.sample(&mut a), sampler.sample(&mut b));
        }
        let mut c = seed.with_stream(5).rng();
        let mut a = seed.rng();
        let differs = (0..50).any(|_| sampler.sample(&mut a) != sampler.sample(&mut c));
        assert!(differs);
    }

    #[test]
    fn enumeration_n2_uniform_at_half() {
        let params = ModelParams::new(2, 0.5).unwrap();
        let all: Vec<_> = enumerate_graphs(params).unwrap().collect();
        assert_eq!(all.len(), 4);
        assert!(all.iter().all(|(_, pr)| *pr == 0.25));
    }

    #[test]
    fn enumeration_n2_p_one() {
        let params = ModelParams::new(2, 1.0).unwrap();
        for (g, pr) in enumerate_graphs(params).unwrap() {
            if g == DirectedGraph::complete(2) {
                assert_eq!(pr, 1.0);
            } else {
                assert_eq!(pr, 0.0);
            }
        }
    }

    #[test]
    fn enumeration_probabilities_sum_to_one() {
        let e = enumerate_graphs(ModelParams::new(3, 0.3).unwrap()).unwrap();
        assert_eq!(e.len(), 64);
        let total: f64 = e.map(|(_, pr)| pr).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for n in 2..=4 {
            for p in [0.1, 0.5, 0.9] {
                let total: f64 = enumerate_graphs(ModelParams::new(n, p).unwrap())
                    .unwrap()
                    .map(|(_, pr)| pr)
                    .sum();
                assert!((total - 1.0).abs() < 1e-12, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn enumeration_rejects_large_n() {
        let params = ModelParams::new(6, 0.5).unwrap();
        assert!(matches!(
            enumerate_graphs(params),
            Err(Error::EnumerationTooLarge { n: 6, .. })
        ));
    }

    #[test]
    fn enumeration_is_exhaustive_and_distinct() {
        let params = ModelParams::new(3, 0.5).unwrap();
        let graphs: std::collections::HashSet<Vec<(usize, usize)>> = enumerate_graphs(params)
            .unwrap()
            .map(|(g, _)| {
                (0..3)
                    .flat_map(|i| g.neighbors(i).map(move |j| (i, j)).collect::<Vec<_>>())
                    .collect()
            })
            .collect();
        assert_eq!(graphs.len(), 64);
    }
}
