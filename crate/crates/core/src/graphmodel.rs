//! Problem instances: view graphs, generators, synthetic measurements and
//! the JSON problem/solution files.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::sym_eig;
use crate::so3::{exp_map, random_tangent_gaussian, random_uniform, Rotation, TangentVector};

/// Generators give up after this many disconnected draws.
pub const MAX_CONNECT_RETRIES: usize = 1000;

/// Undirected simple graph, edges stored as `(i, j)` with `i < j`.
///
/// Connectivity is enforced by the generators and by [`ViewGraph::new`],
/// not here, so a deliberately disconnected topology can still be built.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Canonicalizes and sorts the edges; rejects loops, duplicates and
    /// out-of-range endpoints.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidParam(format!("self-loop at vertex {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::InvalidParam(format!(
                    "edge ({a}, {b}) out of range for n = {n}"
                )));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::InvalidParam(format!("duplicate edge {e:?}")));
            }
            out.push(e);
        }
        out.sort_unstable();
        Ok(Topology { n, edges: out })
    }

    pub fn cycle(n: usize) -> Self {
        Topology::new(n, (0..n).map(|i| (i, (i + 1) % n))).expect("cycle needs n >= 3")
    }

    pub fn complete(n: usize) -> Self {
        Topology::new(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))).unwrap()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_connected(&self) -> bool {
        is_connected(self.n, &self.edges)
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        laplacian(self.n, &self.edges, None)
    }

    /// Second-smallest Laplacian eigenvalue; zero iff disconnected.
    pub fn algebraic_connectivity(&self) -> Result<f64> {
        algebraic_connectivity(&self.laplacian())
    }
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return true;
    }
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

/// `L = D − A`, optionally with per-edge weights (same order as `edges`).
pub fn laplacian(n: usize, edges: &[(usize, usize)], weights: Option<&[f64]>) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for (k, &(i, j)) in edges.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[k]);
        l[(i, i)] += w;
        l[(j, j)] += w;
        l[(i, j)] -= w;
        l[(j, i)] -= w;
    }
    l
}

/// λ₂ of a Laplacian. For a single vertex this is defined as 0.
pub fn algebraic_connectivity(l: &DMatrix<f64>) -> Result<f64> {
    if l.nrows() < 2 {
        return Ok(0.0);
    }
    Ok(sym_eig(l)?.values[1])
}

/// Watts-Strogatz small-world graph.
///
/// Ring lattice where every vertex links to its `k/2` neighbours on each
/// side; then, one lattice layer at a time, each edge `(u, u+j)` has its far
/// endpoint replaced with probability `p` by a uniformly chosen vertex that
/// is neither `u` nor already adjacent to it. Disconnected draws are redone.
pub fn gen_watts_strogatz<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    p: f64,
    rng: &mut R,
) -> Result<Topology> {
    if !k.is_multiple_of(2) || k < 2 || k >= n {
        return Err(Error::InvalidParam(format!(
            "Watts-Strogatz needs even k with 2 <= k < n (got n = {n}, k = {k})"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParam(format!("rewiring probability {p} not in [0, 1]")));
    }
    for _ in 0..MAX_CONNECT_RETRIES {
        let mut adj: Vec<HashSet<usize>> = vec![HashSet::new(); n];
        for u in 0..n {
            for j in 1..=k / 2 {
                let v = (u + j) % n;
                adj[u].insert(v);
                adj[v].insert(u);
            }
        }
        if p > 0.0 {
            for j in 1..=k / 2 {
                for u in 0..n {
                    let v = (u + j) % n;
                    if !adj[u].contains(&v) || rng.random::<f64>() >= p {
                        continue;
                    }
                    if adj[u].len() >= n - 1 {
                        continue;
                    }
                    let w = loop {
                        let w = rng.random_range(0..n);
                        if w != u && !adj[u].contains(&w) {
                            break w;
                        }
                    };
                    adj[u].remove(&v);
                    adj[v].remove(&u);
                    adj[u].insert(w);
                    adj[w].insert(u);
                }
            }
        }
        let mut edges = Vec::with_capacity(n * k / 2);
        for (u, nbrs) in adj.iter().enumerate() {
            edges.extend(nbrs.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        if is_connected(n, &edges) {
            return Topology::new(n, edges);
        }
    }
    Err(Error::Disconnected)
}

/// Uniform random connected graph with exactly `m` edges.
///
/// Draws are rejected until connected. When that keeps failing (sparse `m`,
/// where almost no `G(n, m)` draw is connected) the sample is taken instead
/// from an edge-replacement Markov chain on connected graphs started at a
/// uniform spanning tree plus random extra edges; the chain's stationary law
/// is uniform over connected `m`-edge graphs.
pub fn gen_gnm<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Topology> {
    let max_edges = n * n.saturating_sub(1) / 2;
    if n < 2 || m + 1 < n || m > max_edges {
        return Err(Error::InvalidParam(format!(
            "G(n, m) needs n - 1 <= m <= n(n-1)/2 (got n = {n}, m = {m})"
        )));
    }
    let pair = |idx: usize| -> (usize, usize) {
        // row-major enumeration of the strict upper triangle
        let mut i = 0;
        let mut rem = idx;
        while rem >= n - 1 - i {
            rem -= n - 1 - i;
            i += 1;
        }
        (i, i + 1 + rem)
    };
    let rejection_tries = if m < n + n / 2 { 50 } else { MAX_CONNECT_RETRIES };
    for _ in 0..rejection_tries {
        let edges: Vec<(usize, usize)> = index::sample(rng, max_edges, m)
            .into_iter()
            .map(pair)
            .collect();
        if is_connected(n, &edges) {
            return Topology::new(n, edges);
        }
    }
    Ok(connected_gnm_chain(n, m, rng))
}

fn connected_gnm_chain<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Topology {
    // Aldous-Broder on K_n gives a uniform spanning tree
    let mut present: HashSet<(usize, usize)> = HashSet::new();
    let mut visited = vec![false; n];
    let mut cur = rng.random_range(0..n);
    visited[cur] = true;
    let mut count = 1;
    while count < n {
        let mut next = rng.random_range(0..n - 1);
        if next >= cur {
            next += 1;
        }
        if !visited[next] {
            visited[next] = true;
            count += 1;
            present.insert((cur.min(next), cur.max(next)));
        }
        cur = next;
    }
    while present.len() < m {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            present.insert((a.min(b), a.max(b)));
        }
    }
    let mut edges: Vec<(usize, usize)> = present.iter().copied().collect();
    edges.sort_unstable();
    let max_edges = n * (n - 1) / 2;
    if m < max_edges {
        for _ in 0..20 * m {
            let k = rng.random_range(0..edges.len());
            let (a, b) = loop {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                let e = (a.min(b), a.max(b));
                if a != b && !present.contains(&e) {
                    break e;
                }
            };
            let old = edges[k];
            edges[k] = (a, b);
            if is_connected(n, &edges) {
                present.remove(&old);
                present.insert((a, b));
            } else {
                edges[k] = old;
            }
        }
    }
    Topology::new(n, edges).expect("chain keeps a simple graph")
}

/// Graph family plus parameters, as used by the CLI and sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "graph", rename_all = "lowercase")]
pub enum GraphSpec {
    Ws { n: usize, k: usize, p_rewire: f64 },
    Gnm { n: usize, m: usize },
}

impl GraphSpec {
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Topology> {
        match *self {
            GraphSpec::Ws { n, k, p_rewire } => gen_watts_strogatz(n, k, p_rewire, rng),
            GraphSpec::Gnm { n, m } => gen_gnm(n, m, rng),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            GraphSpec::Ws { n, k, p_rewire } => format!("ws_n{n}_k{k}_p{p_rewire}"),
            GraphSpec::Gnm { n, m } => format!("gnm_n{n}_m{m}"),
        }
    }
}

/// One measured edge; `measurement` estimates `R_i R_jᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub measurement: Rotation,
}

/// A connected view graph with one relative rotation per edge.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGraph {
    n: usize,
    edges: Vec<Edge>,
    lookup: HashMap<(usize, usize), usize>,
}

impl ViewGraph {
    /// Builds a graph, storing each edge as `i < j` (transposing the
    /// measurement when given as `j > i`). Rejects disconnected graphs.
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut canon = Vec::with_capacity(edges.len());
        for e in edges {
            if e.i < e.j {
                canon.push(e);
            } else {
                canon.push(Edge {
                    i: e.j,
                    j: e.i,
                    measurement: e.measurement.transpose(),
                });
            }
        }
        let topo = Topology::new(n, canon.iter().map(|e| (e.i, e.j)))?;
        if !topo.is_connected() {
            return Err(Error::Disconnected);
        }
        canon.sort_by_key(|e| (e.i, e.j));
        let lookup = canon
            .iter()
            .enumerate()
            .map(|(k, e)| ((e.i, e.j), k))
            .collect();
        Ok(ViewGraph {
            n,
            edges: canon,
            lookup,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Measurement of `R_i R_jᵀ`; `(j, i)` returns the transpose.
    pub fn measurement(&self, i: usize, j: usize) -> Option<Rotation> {
        if i < j {
            self.lookup.get(&(i, j)).map(|&k| self.edges[k].measurement)
        } else {
            self.lookup
                .get(&(j, i))
                .map(|&k| self.edges[k].measurement.transpose())
        }
    }

    pub fn topology(&self) -> Topology {
        Topology {
            n: self.n,
            edges: self.edges.iter().map(|e| (e.i, e.j)).collect(),
        }
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        self.topology().laplacian()
    }

    pub fn with_edge(&self, edge: Edge) -> Result<Self> {
        let mut edges = self.edges.clone();
        edges.push(edge);
        ViewGraph::new(self.n, edges)
    }

    pub fn to_file(&self, meta: ProblemMeta) -> ProblemFile {
        ProblemFile {
            n: self.n,
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    i: e.i,
                    j: e.j,
                    r: e.measurement,
                })
                .collect(),
            meta,
        }
    }

    pub fn from_file(file: &ProblemFile) -> Result<Self> {
        ViewGraph::new(
            file.n,
            file.edges
                .iter()
                .map(|e| Edge {
                    i: e.i,
                    j: e.j,
                    measurement: e.r,
                })
                .collect(),
        )
    }
}

/// An assignment of absolute rotations, one per vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub rotations: Vec<Rotation>,
}

impl Solution {
    pub fn new(rotations: Vec<Rotation>) -> Self {
        Solution { rotations }
    }

    pub fn identity(n: usize) -> Self {
        Solution {
            rotations: vec![Rotation::identity(); n],
        }
    }

    /// Haar-uniform point of SO(3)^n.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Solution {
            rotations: (0..n).map(|_| random_uniform(rng)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    /// Gauge action `R_i ↦ R_i S`.
    pub fn right_mul(&self, s: &Rotation) -> Self {
        Solution {
            rotations: self.rotations.iter().map(|r| r * s).collect(),
        }
    }

    /// `R_i ↦ R_i exp([x_i]_×)` for a vertex-major tangent vector.
    pub fn retract(&self, x: &DVector<f64>) -> Self {
        assert_eq!(x.len(), 3 * self.len());
        Solution {
            rotations: self
                .rotations
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let v = Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
                    r * &exp_map(&TangentVector(v))
                })
                .collect(),
        }
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                actual: self.len(),
            });
        }
        Ok(())
    }
}

/// Measurement noise model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Inlier tangent-space standard deviation, radians.
    pub sigma_n: f64,
    /// Per-edge probability that the measurement is a uniform outlier.
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma_n: f64, outlier_fraction: f64, seed: u64) -> Result<Self> {
        if !(sigma_n >= 0.0) {
            return Err(Error::InvalidParam(format!("sigma_n {sigma_n} must be >= 0")));
        }
        if !(0.0..=1.0).contains(&outlier_fraction) {
            return Err(Error::InvalidParam(format!(
                "outlier fraction {outlier_fraction} not in [0, 1]"
            )));
        }
        Ok(NoiseSpec {
            sigma_n,
            outlier_fraction,
            seed,
        })
    }
}

/// Samples a Haar-uniform ground truth and noisy measurements.
///
/// Inlier edges get `R_i R_jᵀ · exp(N(0, σ_n² I₃))`; with probability
/// `outlier_fraction` an edge is replaced by a uniform rotation. Every edge
/// consumes the same random draws whatever the parameters, so two calls with
/// the same seed share the ground truth and the underlying noise directions.
pub fn synthesize<R: Rng + ?Sized>(
    topology: &Topology,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<(ViewGraph, Solution)> {
    if !topology.is_connected() {
        return Err(Error::Disconnected);
    }
    let truth = Solution::random(topology.n, rng);
    let mut edges = Vec::with_capacity(topology.num_edges());
    for &(i, j) in &topology.edges {
        let u: f64 = rng.random();
        let tangent = random_tangent_gaussian(noise.sigma_n, rng);
        let outlier = random_uniform(rng);
        let exact = truth.rotations[i] * truth.rotations[j].transpose();
        let measurement = if u < noise.outlier_fraction {
            outlier
        } else if noise.sigma_n == 0.0 {
            exact
        } else {
            exact * exp_map(&tangent)
        };
        edges.push(Edge { i, j, measurement });
    }
    Ok((ViewGraph::new(topology.n, edges)?, truth))
}

/// Topology and measurements drawn from one random source seeded with
/// `noise.seed`: the graph first, then ground truth and edge noise.
pub fn generate_instance(spec: &GraphSpec, noise: &NoiseSpec) -> Result<(ViewGraph, Solution)> {
    let mut rng = crate::rng_from_seed(noise.seed);
    let topology = spec.generate(&mut rng)?;
    synthesize(&topology, noise, &mut rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub i: usize,
    pub j: usize,
    #[serde(rename = "R")]
    pub r: Rotation,
}

/// Provenance of a problem file; every field is optional on read.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GraphSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlier_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
}

/// On-disk problem: `{ "n", "edges": [{"i", "j", "R"}], "meta" }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    pub edges: Vec<EdgeRecord>,
    #[serde(default)]
    pub meta: ProblemMeta,
}

pub fn write_problem(path: &Path, vg: &ViewGraph, meta: ProblemMeta) -> Result<()> {
    let text = serde_json::to_string_pretty(&vg.to_file(meta))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_problem(path: &Path) -> Result<(ViewGraph, ProblemMeta)> {
    let text = std::fs::read_to_string(path)?;
    let file: ProblemFile = serde_json::from_str(&text)?;
    Ok((ViewGraph::from_file(&file)?, file.meta))
}

pub fn write_solution(path: &Path, sol: &Solution) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(sol)?)?;
    Ok(())
}

pub fn read_solution(path: &Path) -> Result<Solution> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
