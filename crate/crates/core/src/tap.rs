//! Traffic assignment instances.
//!
//! A random Barabási–Albert network is expanded into a directed multigraph,
//! origin/destination pairs are sampled, and each pair routes its demand
//! over its `k` shortest simple paths by hop count. The decision variable is
//! the path-flow vector; the feasible set is a product of scaled simplices.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ConstraintSystem;
use crate::problems::{power_iteration, KnownOptimum, Objective, Problem};
use crate::rng;

/// Directed multigraph; edge ids are indices into `edges`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiGraph {
    pub num_vertices: usize,
    /// `(tail, head)`
    pub edges: Vec<(usize, usize)>,
}

impl DiGraph {
    fn out_edges(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_vertices];
        for (id, &(tail, _)) in self.edges.iter().enumerate() {
            out[tail].push(id);
        }
        out
    }

    fn in_edges(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_vertices];
        for (id, &(_, head)) in self.edges.iter().enumerate() {
            inc[head].push(id);
        }
        inc
    }

    pub fn degree_sum(&self) -> usize {
        2 * self.edges.len()
    }
}

/// Barabási–Albert preferential attachment, each undirected edge `{u, v}`
/// emitted as the opposed pair `u→v`, `v→u`.
///
/// Starts from `attachment_m` isolated vertices; each new vertex attaches to
/// `attachment_m` distinct existing vertices drawn proportionally to degree.
pub fn generate_barabasi_albert(num_vertices: usize, attachment_m: usize, seed: u64) -> Result<DiGraph> {
    if attachment_m == 0 || num_vertices <= attachment_m {
        return Err(Error::InvalidParameter(format!(
            "need attachment_m >= 1 and num_vertices > attachment_m, got {num_vertices}, {attachment_m}"
        )));
    }
    let mut rng = rng::stream(seed, "tap/graph");
    let mut edges = Vec::new();
    let mut repeated: Vec<usize> = Vec::new();
    let mut targets: Vec<usize> = (0..attachment_m).collect();
    for source in attachment_m..num_vertices {
        for &t in &targets {
            edges.push((source, t));
            edges.push((t, source));
        }
        repeated.extend_from_slice(&targets);
        repeated.extend(std::iter::repeat_n(source, attachment_m));
        let mut chosen: Vec<usize> = Vec::with_capacity(attachment_m);
        while chosen.len() < attachment_m {
            let pick = repeated[rng.random_range(0..repeated.len())];
            if !chosen.contains(&pick) {
                chosen.push(pick);
            }
        }
        targets = chosen;
    }
    Ok(DiGraph { num_vertices, edges })
}

/// Hop distance from every vertex to `destination`, honoring removed vertices and edges.
fn hops_to(graph: &DiGraph, in_edges: &[Vec<usize>], destination: usize, vertex_ok: &[bool], edge_ok: &[bool]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; graph.num_vertices];
    if !vertex_ok[destination] {
        return dist;
    }
    dist[destination] = 0;
    let mut queue = VecDeque::from([destination]);
    while let Some(v) = queue.pop_front() {
        for &e in &in_edges[v] {
            let (u, _) = graph.edges[e];
            if edge_ok[e] && vertex_ok[u] && dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Lexicographically smallest min-hop path (as edge ids) from `source`.
fn best_path(
    graph: &DiGraph,
    out_edges: &[Vec<usize>],
    in_edges: &[Vec<usize>],
    source: usize,
    destination: usize,
    vertex_ok: &[bool],
    edge_ok: &[bool],
) -> Option<Vec<usize>> {
    let dist = hops_to(graph, in_edges, destination, vertex_ok, edge_ok);
    if dist[source] == usize::MAX {
        return None;
    }
    let mut path = Vec::with_capacity(dist[source]);
    let mut at = source;
    while at != destination {
        let next = out_edges[at]
            .iter()
            .copied()
            .filter(|&e| {
                let (_, w) = graph.edges[e];
                edge_ok[e] && vertex_ok[w] && dist[w] != usize::MAX && dist[w] + 1 == dist[at]
            })
            .min()?;
        path.push(next);
        at = graph.edges[next].1;
    }
    Some(path)
}

/// Up to `k` distinct simple paths from `origin` to `destination`, ordered
/// by hop count and then lexicographically by edge ids (Yen's algorithm
/// with unit weights).
pub fn enumerate_min_hop_paths(graph: &DiGraph, origin: usize, destination: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = graph.num_vertices;
    if origin >= n || destination >= n {
        return Err(Error::InvalidParameter(format!("vertex out of range (graph has {n} vertices)")));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    if origin == destination {
        return Err(Error::InvalidParameter("origin equals destination".into()));
    }
    let out_edges = graph.out_edges();
    let in_edges = graph.in_edges();
    let all_vertices = vec![true; n];
    let all_edges = vec![true; graph.edges.len()];
    let first = best_path(graph, &out_edges, &in_edges, origin, destination, &all_vertices, &all_edges)
        .ok_or(Error::Unreachable { origin, destination })?;

    let mut accepted: Vec<Vec<usize>> = vec![first];
    let mut candidates: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();
    while accepted.len() < k {
        let last = accepted.last().expect("nonempty").clone();
        let mut vertex_ok = vec![true; n];
        let mut spur_node = origin;
        for i in 0..last.len() {
            let root = &last[..i];
            let mut edge_ok = all_edges.clone();
            for p in &accepted {
                if p.len() > i && p[..i] == *root {
                    edge_ok[p[i]] = false;
                }
            }
            if let Some(spur) = best_path(graph, &out_edges, &in_edges, spur_node, destination, &vertex_ok, &edge_ok) {
                let mut full = root.to_vec();
                full.extend(spur);
                candidates.insert((full.len(), full));
            }
            vertex_ok[spur_node] = false;
            spur_node = graph.edges[last[i]].1;
        }
        match candidates.pop_first() {
            Some((_, path)) => accepted.push(path),
            None => break,
        }
    }
    Ok(accepted)
}

/// Directed edge with linear latency `a + b·w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapEdge {
    pub tail: usize,
    pub head: usize,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: usize,
    pub destination: usize,
    pub demand: f64,
    /// Each path is a list of edge ids.
    pub paths: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TapInstanceData {
    vertices: usize,
    edges: Vec<TapEdge>,
    od_pairs: Vec<OdPair>,
}

/// Network, demands, path sets and the incidence structure between them.
///
/// Path-flow coordinates are numbered consecutively, pair by pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TapInstanceData", into = "TapInstanceData")]
pub struct TapInstance {
    num_vertices: usize,
    edges: Vec<TapEdge>,
    od_pairs: Vec<OdPair>,
    path_edges: Vec<Vec<usize>>,
    edge_paths: Vec<Vec<usize>>,
    block_ranges: Vec<std::ops::Range<usize>>,
}

impl TryFrom<TapInstanceData> for TapInstance {
    type Error = Error;

    fn try_from(data: TapInstanceData) -> Result<Self> {
        TapInstance::new(data.vertices, data.edges, data.od_pairs)
    }
}

impl From<TapInstance> for TapInstanceData {
    fn from(inst: TapInstance) -> Self {
        TapInstanceData { vertices: inst.num_vertices, edges: inst.edges, od_pairs: inst.od_pairs }
    }
}

impl TapInstance {
    pub fn new(num_vertices: usize, edges: Vec<TapEdge>, od_pairs: Vec<OdPair>) -> Result<Self> {
        for (id, e) in edges.iter().enumerate() {
            if e.tail >= num_vertices || e.head >= num_vertices {
                return Err(Error::InvalidParameter(format!("edge {id} references a missing vertex")));
            }
            if !(e.a >= 0.0 && e.b >= 0.0) {
                return Err(Error::InvalidParameter(format!("edge {id} has a decreasing cost")));
            }
        }
        let mut path_edges = Vec::new();
        let mut block_ranges = Vec::with_capacity(od_pairs.len());
        for (i, od) in od_pairs.iter().enumerate() {
            if !(od.demand >= 0.0) {
                return Err(Error::InvalidParameter(format!("pair {i} has negative demand")));
            }
            if od.paths.is_empty() {
                return Err(Error::InvalidParameter(format!("pair {i} has no paths")));
            }
            let start = path_edges.len();
            for p in &od.paths {
                let mut at = od.origin;
                for &e in p {
                    let edge = edges.get(e).ok_or_else(|| Error::InvalidParameter(format!("pair {i}: unknown edge {e}")))?;
                    if edge.tail != at {
                        return Err(Error::InvalidParameter(format!("pair {i}: path is not head-to-tail")));
                    }
                    at = edge.head;
                }
                if p.is_empty() || at != od.destination {
                    return Err(Error::InvalidParameter(format!("pair {i}: path does not reach the destination")));
                }
                path_edges.push(p.clone());
            }
            block_ranges.push(start..path_edges.len());
        }
        let mut edge_paths = vec![Vec::new(); edges.len()];
        for (p, es) in path_edges.iter().enumerate() {
            for &e in es {
                edge_paths[e].push(p);
            }
        }
        Ok(Self { num_vertices, edges, od_pairs, path_edges, edge_paths, block_ranges })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn edges(&self) -> &[TapEdge] {
        &self.edges
    }

    pub fn od_pairs(&self) -> &[OdPair] {
        &self.od_pairs
    }

    pub fn num_paths(&self) -> usize {
        self.path_edges.len()
    }

    /// Edge ids of path-flow coordinate `p`.
    pub fn path_edges(&self, p: usize) -> &[usize] {
        &self.path_edges[p]
    }

    /// Path-flow coordinates routed over edge `e` (with multiplicity).
    pub fn edge_paths(&self, e: usize) -> &[usize] {
        &self.edge_paths[e]
    }

    /// `κ_e`: how many paths use edge `e`.
    pub fn edge_multiplicity(&self, e: usize) -> usize {
        self.edge_paths[e].len()
    }

    pub fn block_ranges(&self) -> &[std::ops::Range<usize>] {
        &self.block_ranges
    }

    /// `Σ_{p ∈ P^i} x_p = m^i` for every pair.
    pub fn constraints(&self) -> Result<ConstraintSystem> {
        let blocks = self.block_ranges.iter().map(|r| r.clone().collect()).collect();
        let totals = self.od_pairs.iter().map(|od| od.demand).collect();
        ConstraintSystem::block_simplex(self.num_paths(), blocks, totals)
    }

    /// Each demand split evenly over its paths.
    pub fn uniform_assignment(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.num_paths());
        for (od, range) in self.od_pairs.iter().zip(&self.block_ranges) {
            let share = od.demand / range.len() as f64;
            for p in range.clone() {
                x[p] = share;
            }
        }
        x
    }

    /// Edge loads `w_e = Σ_{p ∋ e} x_p`.
    pub fn loads(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dimension(x)?;
        let mut w = DVector::zeros(self.edges.len());
        for (p, es) in self.path_edges.iter().enumerate() {
            for &e in es {
                w[e] += x[p];
            }
        }
        Ok(w)
    }

    fn check_dimension(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.num_paths() {
            return Err(Error::DimensionMismatch { expected: self.num_paths(), got: x.len() });
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Which aggregate latency is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapObjectiveMode {
    /// `Σ_p Σ_{e ∈ p} c_e(w_e) = Σ_e κ_e c_e(w_e)`
    #[default]
    PathCostSum,
    /// `Σ_e w_e c_e(w_e)`
    TotalEdgeLatency,
}

pub fn tap_objective(instance: &TapInstance, mode: TapObjectiveMode, x: &DVector<f64>) -> Result<f64> {
    let w = instance.loads(x)?;
    Ok(instance
        .edges
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            let cost = edge.a + edge.b * w[e];
            match mode {
                TapObjectiveMode::PathCostSum => instance.edge_multiplicity(e) as f64 * cost,
                TapObjectiveMode::TotalEdgeLatency => w[e] * cost,
            }
        })
        .sum())
}

pub fn tap_gradient(instance: &TapInstance, mode: TapObjectiveMode, x: &DVector<f64>) -> Result<DVector<f64>> {
    let w = instance.loads(x)?;
    let marginal: Vec<f64> = instance
        .edges
        .iter()
        .enumerate()
        .map(|(e, edge)| match mode {
            TapObjectiveMode::PathCostSum => instance.edge_multiplicity(e) as f64 * edge.b,
            TapObjectiveMode::TotalEdgeLatency => edge.a + 2.0 * edge.b * w[e],
        })
        .collect();
    Ok(DVector::from_iterator(
        instance.num_paths(),
        instance.path_edges.iter().map(|es| es.iter().map(|&e| marginal[e]).sum()),
    ))
}

/// [`Objective`] adapter for a TAP instance.
#[derive(Debug, Clone)]
pub struct TapObjective {
    pub instance: Arc<TapInstance>,
    pub mode: TapObjectiveMode,
}

impl Objective for TapObjective {
    fn dimension(&self) -> usize {
        self.instance.num_paths()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        tap_objective(&self.instance, self.mode, x).expect("dimension checked by the solver")
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        tap_gradient(&self.instance, self.mode, x).expect("dimension checked by the solver")
    }
}

/// Lipschitz constant of the TAP gradient.
///
/// Zero for the (linear) path-cost sum; for total edge latency the spectral
/// norm of `2 Bᵀ diag(b) B` with `B` the edge–path incidence matrix.
pub fn tap_lipschitz(instance: &TapInstance, mode: TapObjectiveMode) -> f64 {
    match mode {
        TapObjectiveMode::PathCostSum => 0.0,
        TapObjectiveMode::TotalEdgeLatency => {
            let slope: Vec<f64> = instance.edges.iter().map(|edge| 2.0 * edge.b).collect();
            let apply = |x: &DVector<f64>| {
                let w = instance.loads(x).expect("dimension");
                DVector::from_iterator(
                    instance.num_paths(),
                    instance.path_edges.iter().map(|es| es.iter().map(|&e| slope[e] * w[e]).sum()),
                )
            };
            // Row-sum bound as a fallback when the iteration stalls.
            power_iteration(instance.num_paths(), 1000, apply).unwrap_or_else(|| {
                instance
                    .path_edges
                    .iter()
                    .map(|es| es.iter().map(|&e| slope[e] * instance.edge_multiplicity(e) as f64).sum::<f64>())
                    .fold(0.0, f64::max)
            })
        }
    }
}

/// Exact optimum of the path-cost sum: all demand on the cheapest path of each pair.
pub fn path_cost_sum_optimum(instance: &TapInstance) -> (DVector<f64>, f64) {
    let zero = DVector::zeros(instance.num_paths());
    let g = tap_gradient(instance, TapObjectiveMode::PathCostSum, &zero).expect("dimension");
    let mut x = zero.clone();
    for (od, range) in instance.od_pairs.iter().zip(&instance.block_ranges) {
        let best = range
            .clone()
            .min_by(|&p, &q| g[p].total_cmp(&g[q]).then(p.cmp(&q)))
            .expect("nonempty block");
        x[best] = od.demand;
    }
    let f = tap_objective(instance, TapObjectiveMode::PathCostSum, &x).expect("dimension");
    (x, f)
}

/// Builds the optimization problem, started at the uniform assignment.
pub fn tap_problem(instance: Arc<TapInstance>, mode: TapObjectiveMode) -> Result<Problem> {
    let cs = instance.constraints()?;
    let l = tap_lipschitz(&instance, mode);
    let start = instance.uniform_assignment();
    let mut problem = Problem::new(
        match mode {
            TapObjectiveMode::PathCostSum => "tap-path-cost",
            TapObjectiveMode::TotalEdgeLatency => "tap-edge-latency",
        },
        Arc::new(TapObjective { instance: instance.clone(), mode }),
        cs,
        l,
    )?
    .with_start(start);
    if mode == TapObjectiveMode::PathCostSum {
        let (x, f) = path_cost_sum_optimum(&instance);
        problem = problem.with_known_optimum(KnownOptimum { x: Some(x), f });
    }
    Ok(problem)
}

/// Parameters of [`generate_tap_instance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapGenConfig {
    pub vertices: usize,
    pub od_pairs: usize,
    pub paths_per_pair: usize,
    #[serde(default = "default_attachment")]
    pub attachment_m: usize,
    pub seed: u64,
}

fn default_attachment() -> usize {
    2
}

impl TapGenConfig {
    pub fn new(vertices: usize, od_pairs: usize, paths_per_pair: usize, seed: u64) -> Self {
        Self { vertices, od_pairs, paths_per_pair, attachment_m: default_attachment(), seed }
    }
}

/// Random instance plus its uniform-assignment starting point.
///
/// Demands are drawn from `U[10⁻³, 1]` so that every block has positive
/// mass; edge costs from `a ~ U[0, 10]`, `b ~ U[0, 1]`.
pub fn generate_tap_instance(cfg: &TapGenConfig) -> Result<(TapInstance, DVector<f64>)> {
    if cfg.od_pairs == 0 || cfg.paths_per_pair == 0 {
        return Err(Error::InvalidParameter("od_pairs and paths_per_pair must be positive".into()));
    }
    let graph = generate_barabasi_albert(cfg.vertices, cfg.attachment_m, cfg.seed)?;
    let n = graph.num_vertices;
    if cfg.od_pairs > n * (n - 1) {
        return Err(Error::GenerationFailed(format!("only {} ordered pairs exist", n * (n - 1))));
    }

    let mut rng = rng::stream(cfg.seed, "tap/cost");
    let edges: Vec<TapEdge> = graph
        .edges
        .iter()
        .map(|&(tail, head)| TapEdge { tail, head, a: rng.random_range(0.0..10.0), b: rng.random_range(0.0..1.0) })
        .collect();

    let mut od_rng = rng::stream(cfg.seed, "tap/od");
    let mut demand_rng = rng::stream(cfg.seed, "tap/demand");
    let mut used = BTreeSet::new();
    let mut od_pairs = Vec::with_capacity(cfg.od_pairs);
    let budget = 100 * cfg.od_pairs + 1000;
    let mut attempts = 0;
    while od_pairs.len() < cfg.od_pairs {
        attempts += 1;
        if attempts > budget {
            return Err(Error::GenerationFailed(format!(
                "sampled {} of {} reachable pairs within {budget} attempts",
                od_pairs.len(),
                cfg.od_pairs
            )));
        }
        let o = od_rng.random_range(0..n);
        let d = od_rng.random_range(0..n);
        if o == d || used.contains(&(o, d)) {
            continue;
        }
        let paths = match enumerate_min_hop_paths(&graph, o, d, cfg.paths_per_pair) {
            Ok(p) => p,
            Err(Error::Unreachable { .. }) => continue,
            Err(e) => return Err(e),
        };
        used.insert((o, d));
        let demand = demand_rng.random_range(1e-3..=1.0);
        od_pairs.push(OdPair { origin: o, destination: d, demand, paths });
    }
    let instance = TapInstance::new(n, edges, od_pairs)?;
    let start = instance.uniform_assignment();
    Ok((instance, start))
}
