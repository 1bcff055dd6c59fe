//! Landscape of local minima: deduplication modulo gauge, diffusion-map
//! embedding, the dominant-minimum percentage and noise/connectivity sweeps.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::{chordal_aligned_distance, quotient_distance};
use crate::graphmodel::{synthesize, GraphSpec, NoiseSpec, Solution, ViewGraph};
use crate::numerics::sym_eig;
use crate::solver::{random_restart_campaign, SolveOptions, SolveResult};
use crate::{rng_for_stream, rng_from_seed};

pub const DEFAULT_MERGE_TOL: f64 = 0.01;
pub const DEFAULT_SIGMA_D: f64 = std::f64::consts::FRAC_PI_4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtlasOptions {
    /// Solutions closer than this (quotient distance, radians) are merged.
    pub merge_tol: f64,
    /// Kernel width: `exp(−d²/σ_d)`.
    pub sigma_d: f64,
    /// Use `exp(−d²/σ_d²)` instead.
    pub kernel_squared: bool,
}

impl Default for AtlasOptions {
    fn default() -> Self {
        AtlasOptions {
            merge_tol: DEFAULT_MERGE_TOL,
            sigma_d: DEFAULT_SIGMA_D,
            kernel_squared: false,
        }
    }
}

impl AtlasOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.merge_tol > 0.0) {
            return Err(Error::InvalidParam("merge tolerance must be positive".into()));
        }
        if !(self.sigma_d > 0.0) || !self.sigma_d.is_finite() {
            return Err(Error::InvalidParam("kernel width sigma_d must be positive".into()));
        }
        Ok(())
    }
}

/// A group of solutions identified as the same minimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Lowest-cost member (ties go to the lower index).
    pub representative: usize,
    /// Input indices, ascending.
    pub members: Vec<usize>,
}

impl Cluster {
    pub fn multiplicity(&self) -> usize {
        self.members.len()
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Single-linkage clustering under `quotient_distance < merge_tol`.
///
/// Clusters are ordered by representative cost, then representative index.
pub fn dedup_solutions(solutions: &[&Solution], costs: &[f64], merge_tol: f64) -> Result<Vec<Cluster>> {
    if !(merge_tol > 0.0) {
        return Err(Error::InvalidParam("merge tolerance must be positive".into()));
    }
    if solutions.len() != costs.len() {
        return Err(Error::SizeMismatch {
            expected: solutions.len(),
            actual: costs.len(),
        });
    }
    let n = solutions.len();
    let mut sets = DisjointSets::new(n);
    let vertices = solutions.first().map_or(0, |s| s.len());
    let screen = merge_tol * (1.0 + 2.0 * (vertices as f64).sqrt());
    for a in 0..n {
        for b in a + 1..n {
            // pairs already linked cannot change the partition
            if sets.find(a) == sets.find(b) {
                continue;
            }
            // Within merge_tol every Q_i sits within merge_tol of the optimal
            // gauge, so the chordal alignment is within about merge_tol of it
            // too and its distance is at most merge_tol·(1 + √n). Anything
            // beyond twice that slack cannot merge.
            if chordal_aligned_distance(solutions[a], solutions[b])? > screen {
                continue;
            }
            if quotient_distance(solutions[a], solutions[b])? < merge_tol {
                sets.union(a, b);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for k in 0..n {
        let root = sets.find(k);
        groups.entry(root).or_default().push(k);
    }
    let mut clusters: Vec<Cluster> = groups
        .into_values()
        .map(|members| {
            let representative = *members
                .iter()
                .min_by(|&&x, &&y| costs[x].total_cmp(&costs[y]).then(x.cmp(&y)))
                .expect("nonempty group");
            Cluster {
                representative,
                members,
            }
        })
        .collect();
    clusters.sort_by(|x, y| {
        costs[x.representative]
            .total_cmp(&costs[y.representative])
            .then(x.representative.cmp(&y.representative))
    });
    Ok(clusters)
}

pub fn dedup(results: &[SolveResult], merge_tol: f64) -> Result<Vec<Cluster>> {
    let sols: Vec<&Solution> = results.iter().map(|r| &r.solution).collect();
    let costs: Vec<f64> = results.iter().map(|r| r.final_cost).collect();
    dedup_solutions(&sols, &costs, merge_tol)
}

pub fn distance_matrix(solutions: &[&Solution]) -> Result<DMatrix<f64>> {
    let n = solutions.len();
    let mut d = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a + 1..n {
            let v = quotient_distance(solutions[a], solutions[b])?;
            d[(a, b)] = v;
            d[(b, a)] = v;
        }
    }
    Ok(d)
}

/// Two-dimensional diffusion-map coordinates of a distance matrix.
///
/// With `K = exp(−d²/σ_d)` and row sums `D`, the symmetric operator
/// `D^{-1/2} K D^{-1/2}` has eigenpairs `(λ_k, φ_k)`; the right eigenvectors
/// of the Markov matrix are `ψ_k = D^{-1/2} φ_k` and point `a` maps to
/// `(λ₂ ψ₂[a], λ₃ ψ₃[a])`. The trivial top pair is skipped. Each axis is
/// flipped so its largest-magnitude entry is positive.
pub fn embed(dist: &DMatrix<f64>, sigma_d: f64, kernel_squared: bool) -> Result<Vec<[f64; 2]>> {
    let n = dist.nrows();
    if n == 0 || dist.ncols() != n {
        return Err(Error::InvalidParam("distance matrix must be square and nonempty".into()));
    }
    if !(sigma_d > 0.0) {
        return Err(Error::InvalidParam("kernel width sigma_d must be positive".into()));
    }
    if n == 1 {
        return Ok(vec![[0.0, 0.0]]);
    }
    let width = if kernel_squared { sigma_d * sigma_d } else { sigma_d };
    let k = dist.map(|d| (-d * d / width).exp());
    let deg: Vec<f64> = (0..n).map(|a| k.row(a).sum()).collect();
    let m = DMatrix::from_fn(n, n, |a, b| k[(a, b)] / (deg[a] * deg[b]).sqrt());
    let eig = sym_eig(&m)?;

    let mut coords = vec![[0.0; 2]; n];
    for axis in 0..2 {
        // eigenvalues ascending: the trivial one is last
        let Some(idx) = (n - 1).checked_sub(axis + 1) else { break };
        let lambda = eig.values[idx];
        let mut col: Vec<f64> = (0..n)
            .map(|a| lambda * eig.vectors[(a, idx)] / deg[a].sqrt())
            .collect();
        let lead = col
            .iter()
            .copied()
            .max_by(|x, y| x.abs().total_cmp(&y.abs()))
            .unwrap_or(0.0);
        if lead < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for (a, v) in col.into_iter().enumerate() {
            coords[a][axis] = v;
        }
    }
    Ok(coords)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub id: usize,
    pub cost: f64,
    pub multiplicity: usize,
    /// Campaign index of the representative run.
    pub representative_run: usize,
    pub runs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimaAtlas {
    pub minima: Vec<Minimum>,
    /// Quotient distances between representatives.
    pub dist: Vec<Vec<f64>>,
    pub embedding: Vec<[f64; 2]>,
    /// Percentage of converged runs in the highest-multiplicity minimum.
    pub pct_max: f64,
    pub n_runs: usize,
    pub n_converged: usize,
    /// Indices of runs excluded because they did not converge.
    pub non_converged: Vec<usize>,
    pub options: AtlasOptions,
    pub note: String,
    #[serde(skip)]
    pub representatives: Vec<Solution>,
}

impl MinimaAtlas {
    pub fn n_minima(&self) -> usize {
        self.minima.len()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "id,cost,multiplicity,x,y")?;
        for (m, xy) in self.minima.iter().zip(&self.embedding) {
            writeln!(out, "{},{:e},{},{:e},{:e}", m.id, m.cost, m.multiplicity, xy[0], xy[1])?;
        }
        Ok(())
    }

    /// Scatter plot: low cost is small and blue, high cost large and red;
    /// grey dots scattered around a minimum count its extra hits.
    pub fn to_svg(&self) -> String {
        const SIZE: f64 = 640.0;
        const MARGIN: f64 = 60.0;
        const PALETTE: [&str; 5] = ["#2b83ba", "#80bfab", "#c7e8ad", "#fdae61", "#d7191c"];
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &self.embedding {
            xmin = xmin.min(p[0]);
            xmax = xmax.max(p[0]);
            ymin = ymin.min(p[1]);
            ymax = ymax.max(p[1]);
        }
        let span = (xmax - xmin).max(ymax - ymin).max(1e-12);
        let to_px = |p: &[f64; 2]| {
            let inner = SIZE - 2.0 * MARGIN;
            let cx = MARGIN + inner * (0.5 + (p[0] - 0.5 * (xmin + xmax)) / span);
            let cy = MARGIN + inner * (0.5 - (p[1] - 0.5 * (ymin + ymax)) / span);
            (cx, cy)
        };
        let cmin = self.minima.iter().map(|m| m.cost).fold(f64::MAX, f64::min);
        let cmax = self.minima.iter().map(|m| m.cost).fold(f64::MIN, f64::max);
        let crange = (cmax - cmin).max(1e-300);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="10" y="20" font-family="sans-serif" font-size="13">{} minima, {} of {} runs converged, pct_max = {:.1}</text>"#,
            self.n_minima(),
            self.n_converged,
            self.n_runs,
            self.pct_max
        );
        let mut rng = rng_from_seed(0);
        // largest circles first so small ones stay visible
        let mut order: Vec<usize> = (0..self.minima.len()).collect();
        order.sort_by(|&a, &b| self.minima[b].cost.total_cmp(&self.minima[a].cost));
        for &k in &order {
            let m = &self.minima[k];
            let t = if cmax > cmin { (m.cost - cmin) / crange } else { 0.0 };
            let radius = 4.0 + 12.0 * t;
            let color = PALETTE[((t * PALETTE.len() as f64) as usize).min(PALETTE.len() - 1)];
            let (cx, cy) = to_px(&self.embedding[k]);
            for _ in 1..m.multiplicity.min(500) {
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                let rad = radius + rng.random_range(1.0..10.0);
                let _ = writeln!(
                    svg,
                    r##"<circle cx="{:.2}" cy="{:.2}" r="1.2" fill="#999999"/>"##,
                    cx + rad * ang.cos(),
                    cy + rad * ang.sin()
                );
            }
            let _ = writeln!(
                svg,
                r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="{radius:.2}" fill="{color}" stroke="#333333" stroke-width="0.5"><title>id {} cost {:.6} multiplicity {}</title></circle>"##,
                m.id, m.cost, m.multiplicity
            );
        }
        svg.push_str("</svg>\n");
        svg
    }

    /// Writes `atlas.json`, `atlas.csv` and `atlas.svg` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_json(&dir.join("atlas.json"))?;
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("atlas.csv"))?))?;
        std::fs::write(dir.join("atlas.svg"), self.to_svg())?;
        Ok(())
    }
}

/// Builds the atlas of an existing campaign.
pub fn atlas_from_results(results: &[SolveResult], opts: &AtlasOptions) -> Result<MinimaAtlas> {
    opts.validate()?;
    let converged: Vec<usize> = (0..results.len()).filter(|&k| results[k].converged).collect();
    let non_converged: Vec<usize> = (0..results.len()).filter(|&k| !results[k].converged).collect();
    if converged.is_empty() {
        return Err(Error::NoConvergedRuns { runs: results.len() });
    }
    let sols: Vec<&Solution> = converged.iter().map(|&k| &results[k].solution).collect();
    let costs: Vec<f64> = converged.iter().map(|&k| results[k].final_cost).collect();
    let clusters = dedup_solutions(&sols, &costs, opts.merge_tol)?;

    let reps: Vec<&Solution> = clusters.iter().map(|c| sols[c.representative]).collect();
    let dist = distance_matrix(&reps)?;
    let embedding = embed(&dist, opts.sigma_d, opts.kernel_squared)?;
    let max_mult = clusters.iter().map(Cluster::multiplicity).max().unwrap_or(0);
    let minima = clusters
        .iter()
        .enumerate()
        .map(|(id, c)| Minimum {
            id,
            cost: costs[c.representative],
            multiplicity: c.multiplicity(),
            representative_run: converged[c.representative],
            runs: c.members.iter().map(|&m| converged[m]).collect(),
        })
        .collect();
    Ok(MinimaAtlas {
        minima,
        dist: (0..dist.nrows()).map(|r| dist.row(r).iter().copied().collect()).collect(),
        embedding,
        pct_max: 100.0 * max_mult as f64 / converged.len() as f64,
        n_runs: results.len(),
        n_converged: converged.len(),
        non_converged,
        options: *opts,
        note: "pct_max and multiplicities count converged runs only; non-converged runs are listed separately".into(),
        representatives: reps.into_iter().cloned().collect(),
    })
}

/// Campaign, deduplication and embedding in one call.
pub fn build_atlas(
    vg: &ViewGraph,
    solve: &SolveOptions,
    n_runs: usize,
    opts: &AtlasOptions,
) -> Result<(MinimaAtlas, Vec<SolveResult>)> {
    opts.validate()?;
    let results = random_restart_campaign(vg, solve, n_runs)?;
    let atlas = atlas_from_results(&results, opts)?;
    Ok((atlas, results))
}

/// Grid of graphs × noise levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub graphs: Vec<GraphSpec>,
    pub sigma_n_deg: Vec<f64>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub outlier_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub atlas: AtlasOptions,
}

fn default_restarts() -> usize {
    200
}

fn default_p() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub graph: String,
    pub lambda2: f64,
    pub sigma_n_deg: f64,
    pub pct_max: Option<f64>,
    pub n_minima: Option<usize>,
    pub error: Option<String>,
}

/// Seeds of one graph in a sweep: topology, synthetic instance and campaign.
///
/// They depend only on the graph index, so every noise level of a graph
/// shares its topology, ground truth, noise directions and initial guesses.
fn graph_seeds(seed: u64, g: usize) -> (u64, u64, u64) {
    let base = 3 * g as u64;
    let campaign = rng_for_stream(seed, base + 2).random::<u64>();
    (base, base + 1, campaign)
}

/// One atlas per (graph, noise level) cell. Cell failures are recorded in
/// the row and do not stop the sweep.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    Ok(sweep_with_atlases(spec)?.into_iter().map(|(row, _)| row).collect())
}

/// [`sweep`], also returning each successful cell's atlas. Rows are in
/// graph-major order.
pub fn sweep_with_atlases(spec: &SweepSpec) -> Result<Vec<(SweepRow, Option<MinimaAtlas>)>> {
    if spec.graphs.is_empty() || spec.sigma_n_deg.is_empty() {
        return Err(Error::InvalidParam("sweep needs at least one graph and one noise level".into()));
    }
    if spec.restarts == 0 {
        return Err(Error::InvalidParam("sweep needs at least one restart".into()));
    }
    spec.atlas.validate()?;
    SolveOptions::with_p(spec.p).validate()?;

    let cells: Vec<(usize, f64)> = (0..spec.graphs.len())
        .flat_map(|g| spec.sigma_n_deg.iter().map(move |&s| (g, s)))
        .collect();
    let rows = cells
        .into_par_iter()
        .map(|(g, sigma_deg)| {
            let gspec = &spec.graphs[g];
            let (topo_stream, synth_stream, campaign_seed) = graph_seeds(spec.seed, g);
            let mut row = SweepRow {
                graph: gspec.label(),
                lambda2: f64::NAN,
                sigma_n_deg: sigma_deg,
                pct_max: None,
                n_minima: None,
                error: None,
            };
            let outcome = (|| -> Result<MinimaAtlas> {
                let topo = gspec.generate(&mut rng_for_stream(spec.seed, topo_stream))?;
                row.lambda2 = topo.algebraic_connectivity()?;
                let noise = NoiseSpec::new(sigma_deg.to_radians(), spec.outlier_fraction, spec.seed)?;
                let (vg, _) = synthesize(&topo, &noise, &mut rng_for_stream(spec.seed, synth_stream))?;
                let solve = SolveOptions {
                    p: spec.p,
                    seed: campaign_seed,
                    ..Default::default()
                };
                Ok(build_atlas(&vg, &solve, spec.restarts, &spec.atlas)?.0)
            })();
            match outcome {
                Ok(atlas) => {
                    row.pct_max = Some(atlas.pct_max);
                    row.n_minima = Some(atlas.n_minima());
                    (row, Some(atlas))
                }
                Err(e) => {
                    row.error = Some(e.to_string());
                    (row, None)
                }
            }
        })
        .collect();
    Ok(rows)
}

/// The synthetic instance used by a sweep cell, for inspection or replay.
pub fn sweep_cell_instance(spec: &SweepSpec, g: usize, sigma_deg: f64) -> Result<(ViewGraph, Solution, SolveOptions)> {
    let gspec = spec
        .graphs
        .get(g)
        .ok_or_else(|| Error::InvalidParam(format!("no graph with index {g}")))?;
    let (topo_stream, synth_stream, campaign_seed) = graph_seeds(spec.seed, g);
    let topo = gspec.generate(&mut rng_for_stream(spec.seed, topo_stream))?;
    let noise = NoiseSpec::new(sigma_deg.to_radians(), spec.outlier_fraction, spec.seed)?;
    let (vg, truth) = synthesize(&topo, &noise, &mut rng_for_stream(spec.seed, synth_stream))?;
    let solve = SolveOptions {
        p: spec.p,
        seed: campaign_seed,
        ..Default::default()
    };
    Ok((vg, truth, solve))
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "lambda2,sigma_n_deg,pct_max,n_minima")?;
    for r in rows {
        let pct = r.pct_max.map(|v| format!("{v}")).unwrap_or_default();
        let nm = r.n_minima.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", r.lambda2, r.sigma_n_deg, pct, nm)?;
    }
    Ok(())
}
