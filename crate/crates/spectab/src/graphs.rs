//! Feature dependency graph estimation and diagnostics.
//!
//! Association graphs (Pearson, Spearman) use absolute correlation as edge
//! weight; the Chow-Liu tree maximizes total pairwise mutual information;
//! NOTEARS fits a directed acyclic graph by augmented-Lagrangian continuous
//! optimization. Externally computed adjacency matrices can be imported.
//!
//! Diagnostics follow the graph-entropy and Fiedler-value definitions:
//! per-node normalized entropy of the outgoing weight distribution, and the
//! second-smallest eigenvalue of the unnormalized Laplacian.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Estimation method that produced a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMethod {
    Pearson,
    Spearman,
    ChowLiu,
    Notears,
    Imported,
}

/// Weighted feature graph with provenance.
///
/// Weights are nonnegative with a zero diagonal; undirected graphs have an
/// exactly symmetric weight matrix.
#[derive(Debug, Clone)]
pub struct FeatureGraph {
    pub weights: Array2<f64>,
    pub directed: bool,
    pub method: GraphMethod,
    pub params: BTreeMap<String, f64>,
    /// False when NOTEARS hit `rho_max` before satisfying the acyclicity
    /// tolerance; true for every other method.
    pub converged: bool,
}

impl FeatureGraph {
    pub fn n_nodes(&self) -> usize {
        self.weights.nrows()
    }

    fn new(weights: Array2<f64>, directed: bool, method: GraphMethod) -> Self {
        FeatureGraph { weights, directed, method, params: BTreeMap::new(), converged: true }
    }
}

/// Structural diagnostics of a graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDiagnostics {
    /// Mean per-node normalized entropy over non-isolated nodes, in [0,1].
    pub entropy: f64,
    /// Second-smallest Laplacian eigenvalue, clipped at 0.
    pub fiedler: f64,
    /// Per-node normalized entropies (0.0 recorded for isolated nodes,
    /// which are excluded from the mean).
    pub per_node_entropy: Vec<f64>,
    /// True when every node is isolated, making the entropy vacuous.
    pub degenerate: bool,
}

fn pearson_of(x: &[f64], y: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx < 1e-24 || vy < 1e-24 {
        return 0.0;
    }
    (cov / (vx * vy).sqrt()).clamp(-1.0, 1.0)
}

fn association_graph(x: &Array2<f64>, transform_ranks: bool) -> Result<Array2<f64>> {
    let (m, d) = (x.nrows(), x.ncols());
    if m < 2 {
        return Err(Error::EmptyInput("association graphs need at least 2 rows".into()));
    }
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let col: Vec<f64> = x.column(j).to_vec();
            if transform_ranks {
                average_ranks(&col)
            } else {
                col
            }
        })
        .collect();
    let mut w = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in (i + 1)..d {
            let r = pearson_of(&cols[i], &cols[j]).abs();
            w[[i, j]] = r;
            w[[j, i]] = r;
        }
    }
    Ok(w)
}

/// Undirected graph with weights |pearson(x_i, x_j)|. Constant columns get
/// zero weight to every neighbor.
pub fn pearson_graph(x: &Array2<f64>) -> Result<FeatureGraph> {
    Ok(FeatureGraph::new(association_graph(x, false)?, false, GraphMethod::Pearson))
}

/// Undirected graph with weights |pearson| of average-rank transforms.
pub fn spearman_graph(x: &Array2<f64>) -> Result<FeatureGraph> {
    Ok(FeatureGraph::new(association_graph(x, true)?, false, GraphMethod::Spearman))
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the mean of ranks i+1..=j+1.
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

fn bin_column(values: &[f64]) -> (Vec<usize>, usize) {
    let m = values.len();
    let is_binary = values.iter().all(|&v| v == 0.0 || v == 1.0);
    if is_binary {
        return (values.iter().map(|&v| (v > 0.5) as usize).collect(), 2);
    }
    let b = ((m as f64).sqrt().ceil() as usize).min(32).max(1);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return (vec![0; m], 1);
    }
    let width = (max - min) / b as f64;
    let idx = values
        .iter()
        .map(|&v| (((v - min) / width) as usize).min(b - 1))
        .collect();
    (idx, b)
}

/// Plug-in mutual information over a joint histogram, in nats.
///
/// Continuous axes use `B = min(ceil(sqrt(m)), 32)` equal-width bins;
/// columns whose values are all in {0,1} use those two native bins.
pub fn mutual_information(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "MI columns of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    let m = x.len();
    if m < 2 {
        return Err(Error::EmptyInput("MI needs at least 2 rows".into()));
    }
    let (bx, nx) = bin_column(x);
    let (by, ny) = bin_column(y);
    let mut joint = vec![0.0f64; nx * ny];
    let mut px = vec![0.0f64; nx];
    let mut py = vec![0.0f64; ny];
    let w = 1.0 / m as f64;
    for (&i, &j) in bx.iter().zip(by.iter()) {
        joint[i * ny + j] += w;
        px[i] += w;
        py[j] += w;
    }
    let mut mi = 0.0;
    for i in 0..nx {
        for j in 0..ny {
            let p = joint[i * ny + j];
            if p > 0.0 {
                mi += p * (p / (px[i] * py[j])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Maximum-weight spanning tree by Kruskal with deterministic tie-breaking:
/// edges sorted by descending weight, then ascending (min id, max id).
pub fn max_spanning_tree(weights: &Array2<f64>) -> Vec<(usize, usize)> {
    let d = weights.nrows();
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in (i + 1)..d {
            edges.push((i, j));
        }
    }
    edges.sort_by(|&(a, b), &(c, e)| {
        weights[[c, e]]
            .total_cmp(&weights[[a, b]])
            .then(a.cmp(&c))
            .then(b.cmp(&e))
    });
    let mut parent: Vec<usize> = (0..d).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut tree = Vec::with_capacity(d - 1);
    for (i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            tree.push((i, j));
            if tree.len() == d - 1 {
                break;
            }
        }
    }
    tree
}

/// Chow-Liu dependency tree: the maximum-weight spanning tree of pairwise
/// mutual information, with MI values as edge weights.
pub fn chow_liu_tree(x: &Array2<f64>) -> Result<FeatureGraph> {
    let d = x.ncols();
    if d < 2 {
        return Err(Error::InvalidArgument("Chow-Liu needs at least 2 features".into()));
    }
    let cols: Vec<Vec<f64>> = (0..d).map(|j| x.column(j).to_vec()).collect();
    let mut mi = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in (i + 1)..d {
            let v = mutual_information(&cols[i], &cols[j])?;
            mi[[i, j]] = v;
            mi[[j, i]] = v;
        }
    }
    let tree = max_spanning_tree(&mi);
    let mut w = Array2::<f64>::zeros((d, d));
    for (i, j) in tree {
        w[[i, j]] = mi[[i, j]];
        w[[j, i]] = mi[[i, j]];
    }
    Ok(FeatureGraph::new(w, false, GraphMethod::ChowLiu))
}

/// NOTEARS hyperparameters (outer-loop iteration cap, acyclicity tolerance,
/// penalty cap, edge threshold).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NotearsConfig {
    pub lambda1: f64,
    pub max_iter: usize,
    pub h_tol: f64,
    pub rho_max: f64,
    pub w_threshold: f64,
}

impl Default for NotearsConfig {
    fn default() -> Self {
        NotearsConfig {
            lambda1: 0.1,
            max_iter: 100,
            h_tol: 1e-8,
            rho_max: 1e16,
            w_threshold: 0.3,
        }
    }
}

/// Acyclicity function h(W) = tr(exp(W o W)) - d and its gradient
/// exp(W o W)^T o 2W.
fn h_value_grad(w: &Array2<f64>) -> (f64, Array2<f64>) {
    let d = w.nrows();
    let ww = w * w;
    let e = linalg::matrix_exp(&ww);
    let h = (0..d).map(|i| e[[i, i]]).sum::<f64>() - d as f64;
    let grad = &e.t().to_owned() * &(w * 2.0);
    (h, grad)
}

struct NotearsProblem {
    sxx: Array2<f64>,
    m: f64,
    d: usize,
    lambda1: f64,
    rho: f64,
    alpha: f64,
}

impl NotearsProblem {
    fn unpack(&self, theta: &[f64]) -> Array2<f64> {
        let d = self.d;
        let mut w = Array2::<f64>::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                w[[i, j]] = theta[i * d + j] - theta[d * d + i * d + j];
            }
        }
        w
    }

    fn objective_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let d = self.d;
        let w = self.unpack(theta);
        let sw = self.sxx.dot(&w);
        // (1/2m) ||X - XW||_F^2 = (1/2m) tr((I-W)^T Sxx (I-W)).
        let mut loss = 0.0;
        for i in 0..d {
            loss += self.sxx[[i, i]];
        }
        for i in 0..d {
            for j in 0..d {
                loss += w[[i, j]] * (sw[[i, j]] - 2.0 * self.sxx[[i, j]]);
            }
        }
        loss /= 2.0 * self.m;
        let g_loss = (&sw - &self.sxx) / self.m;

        let (h, g_h) = h_value_grad(&w);
        let f = loss
            + self.lambda1 * theta.iter().sum::<f64>()
            + 0.5 * self.rho * h * h
            + self.alpha * h;
        let g_w = &g_loss + &(&g_h * (self.rho * h + self.alpha));

        let mut grad = vec![0.0; 2 * d * d];
        for i in 0..d {
            for j in 0..d {
                grad[i * d + j] = g_w[[i, j]] + self.lambda1;
                grad[d * d + i * d + j] = -g_w[[i, j]] + self.lambda1;
            }
        }
        (f, grad)
    }

    fn project(&self, theta: &mut [f64]) {
        let d = self.d;
        for v in theta.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        for i in 0..d {
            theta[i * d + i] = 0.0;
            theta[d * d + i * d + i] = 0.0;
        }
    }
}

/// Projected L-BFGS over the nonnegative double-variable split (w+, w-).
fn projected_lbfgs(problem: &NotearsProblem, theta0: Vec<f64>, max_iter: usize) -> Vec<f64> {
    let n = theta0.len();
    let mut theta = theta0;
    problem.project(&mut theta);
    let (mut f, mut g) = problem.objective_grad(&theta);

    let hist = 10;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();

    for _ in 0..max_iter {
        // KKT residual: projected gradient step distance.
        let mut kkt: f64 = 0.0;
        {
            let mut probe: Vec<f64> = theta.iter().zip(g.iter()).map(|(t, gi)| t - gi).collect();
            problem.project(&mut probe);
            for i in 0..n {
                kkt = kkt.max((probe[i] - theta[i]).abs());
            }
        }
        if kkt < 1e-7 {
            break;
        }

        // Two-loop recursion for the quasi-Newton direction.
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for idx in (0..k).rev() {
            let rho_i = 1.0
                / s_hist[idx]
                    .iter()
                    .zip(y_hist[idx].iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            let a = rho_i * s_hist[idx].iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>();
            alphas[idx] = a;
            for i in 0..n {
                q[i] -= a * y_hist[idx][i];
            }
        }
        if k > 0 {
            let sy: f64 = s_hist[k - 1].iter().zip(y_hist[k - 1].iter()).map(|(a, b)| a * b).sum();
            let yy: f64 = y_hist[k - 1].iter().map(|y| y * y).sum();
            let scale = sy / yy;
            for v in q.iter_mut() {
                *v *= scale;
            }
        }
        for idx in 0..k {
            let rho_i = 1.0
                / s_hist[idx]
                    .iter()
                    .zip(y_hist[idx].iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            let beta = rho_i * y_hist[idx].iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..n {
                q[i] += (alphas[idx] - beta) * s_hist[idx][i];
            }
        }
        let dir: Vec<f64> = q.iter().map(|v| -v).collect();

        // Backtracking Armijo search along the projected arc.
        let mut t = 1.0;
        let mut accepted = false;
        let mut theta_new = theta.clone();
        for _ in 0..40 {
            for i in 0..n {
                theta_new[i] = theta[i] + t * dir[i];
            }
            problem.project(&mut theta_new);
            let decrease: f64 = g
                .iter()
                .zip(theta_new.iter().zip(theta.iter()))
                .map(|(gi, (tn, to))| gi * (tn - to))
                .sum();
            let f_new = problem.objective_grad(&theta_new).0;
            if f_new <= f + 1e-4 * decrease && decrease < 0.0 {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Fall back to a projected gradient step.
            let mut t2 = 1.0;
            for _ in 0..60 {
                for i in 0..n {
                    theta_new[i] = theta[i] - t2 * g[i];
                }
                problem.project(&mut theta_new);
                let f_new = problem.objective_grad(&theta_new).0;
                if f_new < f {
                    accepted = true;
                    break;
                }
                t2 *= 0.5;
            }
            if !accepted {
                break;
            }
            s_hist.clear();
            y_hist.clear();
        }

        let (f2, g2) = problem.objective_grad(&theta_new);
        let s: Vec<f64> = theta_new.iter().zip(theta.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g2.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        if sy > 1e-10 {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > hist {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        if (f - f2).abs() < 1e-14 * (1.0 + f.abs()) {
            theta = theta_new;
            break;
        }
        theta = theta_new;
        f = f2;
        g = g2;
    }
    theta
}

/// Finds one directed cycle, if any, as a list of edges.
fn find_cycle(adj: &Array2<f64>) -> Option<Vec<(usize, usize)>> {
    let d = adj.nrows();
    // 0 = unvisited, 1 = on stack, 2 = done.
    let mut state = vec![0u8; d];
    let mut stack: Vec<(usize, usize)> = Vec::new();

    fn dfs(
        v: usize,
        adj: &Array2<f64>,
        state: &mut [u8],
        stack: &mut Vec<(usize, usize)>,
    ) -> Option<Vec<(usize, usize)>> {
        state[v] = 1;
        for u in 0..adj.nrows() {
            if adj[[v, u]] == 0.0 {
                continue;
            }
            if state[u] == 1 {
                // Found a back edge; extract the cycle from the stack.
                let mut cycle = vec![(v, u)];
                for &(a, b) in stack.iter().rev() {
                    cycle.push((a, b));
                    if a == u {
                        break;
                    }
                }
                cycle.reverse();
                return Some(cycle);
            }
            if state[u] == 0 {
                stack.push((v, u));
                if let Some(c) = dfs(u, adj, state, stack) {
                    return Some(c);
                }
                stack.pop();
            }
        }
        state[v] = 2;
        None
    }

    for v in 0..d {
        if state[v] == 0 {
            if let Some(c) = dfs(v, adj, &mut state, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}

/// NOTEARS linear DAG estimation.
///
/// Minimizes `(1/2m)||X - XW||_F^2 + lambda1*||W||_1` subject to
/// `h(W) = tr(exp(W o W)) - d = 0` by augmented Lagrangian; the inner solver
/// is projected L-BFGS over the `(w+, w-) >= 0` split. Entries below
/// `w_threshold` in magnitude are zeroed; any residual cycle is broken by
/// removing its smallest-weight edge, so the result is always acyclic.
/// If `rho_max` is reached before `h <= h_tol`, the best iterate is returned
/// with `converged = false`.
pub fn notears(x: &Array2<f64>, cfg: &NotearsConfig) -> Result<FeatureGraph> {
    let (m, d) = (x.nrows(), x.ncols());
    if m < 2 || d < 1 {
        return Err(Error::EmptyInput("NOTEARS needs at least 2 rows and 1 column".into()));
    }
    let sxx = x.t().dot(x);
    let mut problem = NotearsProblem {
        sxx,
        m: m as f64,
        d,
        lambda1: cfg.lambda1,
        rho: 1.0,
        alpha: 0.0,
    };

    let mut theta = vec![0.0; 2 * d * d];
    let mut h = f64::INFINITY;
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let (theta_new, h_new) = loop {
            let candidate = projected_lbfgs(&problem, theta.clone(), 500);
            let w = problem.unpack(&candidate);
            let h_candidate = h_value_grad(&w).0;
            if h_candidate > 0.25 * h && problem.rho < cfg.rho_max {
                problem.rho *= 10.0;
            } else {
                break (candidate, h_candidate);
            }
        };
        theta = theta_new;
        h = h_new;
        problem.alpha += problem.rho * h;
        if h <= cfg.h_tol {
            converged = true;
            break;
        }
        if problem.rho >= cfg.rho_max {
            break;
        }
    }

    let w_raw = problem.unpack(&theta);
    let mut w = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            if i != j && w_raw[[i, j]].abs() >= cfg.w_threshold {
                w[[i, j]] = w_raw[[i, j]].abs();
            }
        }
    }
    // Guarantee acyclicity: drop the weakest edge of each remaining cycle.
    while let Some(cycle) = find_cycle(&w) {
        let (&(i, j), _) = cycle
            .iter()
            .map(|e| (e, w[[e.0, e.1]]))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)))
            .unwrap();
        w[[i, j]] = 0.0;
    }

    let mut graph = FeatureGraph::new(w, true, GraphMethod::Notears);
    graph.converged = converged;
    graph.params.insert("lambda1".into(), cfg.lambda1);
    graph.params.insert("max_iter".into(), cfg.max_iter as f64);
    graph.params.insert("h_tol".into(), cfg.h_tol);
    graph.params.insert("rho_max".into(), cfg.rho_max);
    graph.params.insert("w_threshold".into(), cfg.w_threshold);
    Ok(graph)
}

/// Per-node normalized entropies of the outgoing weight distribution,
/// the non-isolated mean, and whether every node was isolated.
pub fn graph_entropy(graph: &FeatureGraph) -> Result<(f64, Vec<f64>, bool)> {
    let n = graph.n_nodes();
    if n < 2 {
        return Err(Error::InvalidArgument("graph entropy needs at least 2 nodes".into()));
    }
    let norm = ((n - 1) as f64).ln();
    let mut per_node = vec![0.0; n];
    let mut sum = 0.0;
    let mut active = 0usize;
    for i in 0..n {
        let total: f64 = (0..n).filter(|&j| j != i).map(|j| graph.weights[[i, j]]).sum();
        if total <= 0.0 {
            continue;
        }
        active += 1;
        if norm > 0.0 {
            let mut h = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let p = graph.weights[[i, j]] / total;
                if p > 0.0 {
                    h -= p * p.ln();
                }
            }
            per_node[i] = h / norm;
        }
        // n = 2 is degenerate (single neighbor): entropy defined as 0.
        sum += per_node[i];
    }
    if active == 0 {
        return Ok((0.0, per_node, true));
    }
    Ok((sum / active as f64, per_node, false))
}

/// Second-smallest eigenvalue of `L = D - A_sym`, clipped at 0.
pub fn fiedler_value(graph: &FeatureGraph) -> Result<f64> {
    let n = graph.n_nodes();
    if n < 2 {
        return Err(Error::InvalidArgument("Fiedler value needs at least 2 nodes".into()));
    }
    let a_sym = (&graph.weights + &graph.weights.t().to_owned()) * 0.5;
    let mut l = -a_sym.clone();
    for i in 0..n {
        l[[i, i]] = a_sym.row(i).sum();
    }
    let (vals, _) = linalg::jacobi_eigh(&l)?;
    Ok(vals[1].max(0.0))
}

/// Combined entropy and Fiedler diagnostics.
pub fn diagnostics(graph: &FeatureGraph) -> Result<GraphDiagnostics> {
    let (entropy, per_node_entropy, degenerate) = graph_entropy(graph)?;
    let fiedler = fiedler_value(graph)?;
    Ok(GraphDiagnostics { entropy, fiedler, per_node_entropy, degenerate })
}

/// Loads an externally computed adjacency matrix (headerless dense CSV).
///
/// Entries are taken in absolute value and the diagonal is zeroed. With
/// `expect_nodes` given, a size mismatch is an error.
pub fn import_graph(path: &Path, directed: bool, expect_nodes: Option<usize>) -> Result<FeatureGraph> {
    let weights = read_dense_matrix(path)?;
    let n = weights.nrows();
    if weights.ncols() != n {
        return Err(Error::GraphImport(format!(
            "adjacency matrix must be square, got {}x{}",
            n,
            weights.ncols()
        )));
    }
    if let Some(d) = expect_nodes {
        if n != d {
            return Err(Error::DimensionMismatch(format!(
                "imported graph has {n} nodes, feature table has {d}"
            )));
        }
    }
    let mut w = weights.mapv(f64::abs);
    for i in 0..n {
        w[[i, i]] = 0.0;
    }
    if !directed {
        w = (&w + &w.t().to_owned()) * 0.5;
    }
    let mut graph = FeatureGraph::new(w, directed, GraphMethod::Imported);
    graph.params.insert("directed".into(), directed as u8 as f64);
    Ok(graph)
}

fn read_dense_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row: std::result::Result<Vec<f64>, _> =
            record.iter().map(|s| s.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::GraphImport(format!("bad matrix cell: {e}")))?);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("empty matrix file".into()));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::GraphImport("ragged matrix rows".into()));
    }
    let mut out = Array2::<f64>::zeros((rows.len(), ncols));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct GraphSidecar {
    method: GraphMethod,
    directed: bool,
    converged: bool,
    params: BTreeMap<String, f64>,
}

/// Writes the weight matrix as headerless CSV plus a `.meta.json` sidecar.
pub fn save_graph(graph: &FeatureGraph, csv_path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(csv_path)?;
    for row in graph.weights.rows() {
        let fields: Vec<String> = row.iter().map(|x| format!("{x:.17e}")).collect();
        writer.write_record(&fields)?;
    }
    writer.flush()?;
    let sidecar = GraphSidecar {
        method: graph.method,
        directed: graph.directed,
        converged: graph.converged,
        params: graph.params.clone(),
    };
    let mut meta = csv_path.as_os_str().to_os_string();
    meta.push(".meta.json");
    std::fs::write(meta, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a graph written by [`save_graph`].
pub fn load_graph(csv_path: &Path) -> Result<FeatureGraph> {
    let weights = read_dense_matrix(csv_path)?;
    let mut meta = csv_path.as_os_str().to_os_string();
    meta.push(".meta.json");
    let sidecar: GraphSidecar = serde_json::from_str(&std::fs::read_to_string(meta)?)?;
    Ok(FeatureGraph {
        weights,
        directed: sidecar.directed,
        method: sidecar.method,
        params: sidecar.params,
        converged: sidecar.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn two_columns(x1: &[f64], x2: &[f64]) -> Array2<f64> {
        let m = x1.len();
        let mut x = Array2::<f64>::zeros((m, 2));
        for i in 0..m {
            x[[i, 0]] = x1[i];
            x[[i, 1]] = x2[i];
        }
        x
    }

    #[test]
    fn pearson_perfect_linear_dependence() {
        let x1 = [1.0, 2.0, 3.0, 4.0];
        let x2: Vec<f64> = x1.iter().map(|v| 2.0 * v).collect();
        let g = pearson_graph(&two_columns(&x1, &x2)).unwrap();
        assert_relative_eq!(g.weights[[0, 1]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_takes_absolute_value() {
        let x1 = [1.0, 2.0, 3.0, 4.0];
        let x2: Vec<f64> = x1.iter().map(|v| -v).collect();
        let g = pearson_graph(&two_columns(&x1, &x2)).unwrap();
        assert_relative_eq!(g.weights[[0, 1]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_hand_computed_value() {
        let g = pearson_graph(&two_columns(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0])).unwrap();
        assert_relative_eq!(g.weights[[0, 1]], 0.8, epsilon = 1e-12);
        assert_eq!(g.weights[[0, 1]], g.weights[[1, 0]]);
    }

    #[test]
    fn pearson_constant_column_gets_zero_weight() {
        let g = pearson_graph(&two_columns(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(g.weights[[0, 1]], 0.0);
    }

    #[test]
    fn spearman_invariant_under_monotone_maps() {
        let x1: Vec<f64> = (1..=20).map(|i| i as f64 - 10.0).collect();
        let x2: Vec<f64> = x1.iter().map(|v| v.powi(3)).collect();
        let g = spearman_graph(&two_columns(&x1, &x2)).unwrap();
        assert_relative_eq!(g.weights[[0, 1]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spearman_handles_ties_with_average_ranks() {
        assert_eq!(average_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        let g = spearman_graph(&two_columns(&[1.0, 1.0, 2.0], &[3.0, 3.0, 5.0])).unwrap();
        assert_relative_eq!(g.weights[[0, 1]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spearman_near_zero_for_independent_permutations() {
        let mut passes = 0;
        for seed in 1..=5u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let m = 1000;
            let x1: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x2: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = spearman_graph(&two_columns(&x1, &x2)).unwrap();
            if g.weights[[0, 1]] < 0.1 {
                passes += 1;
            }
        }
        assert!(passes >= 4, "only {passes}/5 seeds below 0.1");
    }

    #[test]
    fn mi_of_identical_column_is_marginal_entropy() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mi = mutual_information(&x, &x).unwrap();
        // Independent route: entropy of the binned marginal.
        let (bins, nb) = bin_column(&x);
        let mut counts = vec![0.0; nb];
        for &b in &bins {
            counts[b] += 1.0 / x.len() as f64;
        }
        let entropy: f64 = counts.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
        assert_relative_eq!(mi, entropy, epsilon = 1e-12);
        assert!(mi > 0.0);
    }

    #[test]
    fn mi_closed_form_for_diagonal_joint() {
        let mut x = vec![0.0; 100];
        let mut y = vec![0.0; 100];
        for i in 50..100 {
            x[i] = 1.0;
            y[i] = 1.0;
        }
        let mi = mutual_information(&x, &y).unwrap();
        assert_relative_eq!(mi, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn mi_small_for_independent_uniforms() {
        let mut passes = 0;
        for seed in 1..=5u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let m = 10000;
            let x: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            let y: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            if mutual_information(&x, &y).unwrap() <= 0.05 {
                passes += 1;
            }
        }
        assert!(passes >= 4, "only {passes}/5 seeds at or below 0.05 nats");
    }

    #[test]
    fn chow_liu_two_features_single_edge() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x1: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = x1.iter().map(|v| v + 0.1 * rng.gen_range(-1.0..1.0)).collect();
        let g = chow_liu_tree(&two_columns(&x1, &x2)).unwrap();
        assert!(g.weights[[0, 1]] > 0.0);
    }

    #[test]
    fn max_spanning_tree_three_nodes() {
        let mi = array![[0.0, 0.9, 0.5], [0.9, 0.0, 0.1], [0.5, 0.1, 0.0]];
        let tree = max_spanning_tree(&mi);
        assert_eq!(tree, vec![(0, 1), (0, 2)]);
    }

    /// Brute-force oracle: enumerate every spanning tree and return the
    /// maximum-weight one (unique on generic weights).
    fn brute_force_mst(w: &Array2<f64>) -> Vec<(usize, usize)> {
        let d = w.nrows();
        let all: Vec<(usize, usize)> =
            (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).collect();
        let e = all.len();
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        for mask in 0u32..(1 << e) {
            if mask.count_ones() as usize != d - 1 {
                continue;
            }
            let edges: Vec<(usize, usize)> =
                (0..e).filter(|&k| mask & (1 << k) != 0).map(|k| all[k]).collect();
            if !is_spanning(&edges, d) {
                continue;
            }
            let total: f64 = edges.iter().map(|&(i, j)| w[[i, j]]).sum();
            if best.as_ref().map_or(true, |(bw, _)| total > *bw) {
                best = Some((total, edges));
            }
        }
        best.unwrap().1
    }

    fn is_spanning(edges: &[(usize, usize)], d: usize) -> bool {
        let mut parent: Vec<usize> = (0..d).collect();
        fn find(p: &mut Vec<usize>, mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for &(i, j) in edges {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a == b {
                return false;
            }
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        (0..d).all(|i| find(&mut parent, i) == root)
    }

    #[test]
    fn kruskal_matches_brute_force_enumeration() {
        for seed in 0..12u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let d = 3 + (seed % 4) as usize;
            let mut w = Array2::<f64>::zeros((d, d));
            for i in 0..d {
                for j in (i + 1)..d {
                    let v: f64 = rng.gen_range(0.0..1.0);
                    w[[i, j]] = v;
                    w[[j, i]] = v;
                }
            }
            let fast: Vec<(usize, usize)> = {
                let mut t = max_spanning_tree(&w);
                t.sort_unstable();
                t
            };
            let mut slow = brute_force_mst(&w);
            slow.sort_unstable();
            assert_eq!(fast, slow, "seed {seed}, d {d}");
        }
    }

    #[test]
    fn kruskal_tie_break_prefers_smallest_node_ids() {
        // All four edges of a 4-cycle tie; the greedy order must pick
        // (0,1), (0,2), (0,3) by the (min id, max id) rule.
        let mut w = Array2::<f64>::zeros((4, 4));
        for i in 0..4 {
            for j in (i + 1)..4 {
                w[[i, j]] = 0.5;
                w[[j, i]] = 0.5;
            }
        }
        assert_eq!(max_spanning_tree(&w), vec![(0, 1), (0, 2), (0, 3)]);
    }

    #[test]
    fn notears_huge_l1_gives_empty_graph() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let m = 200;
        let mut x = Array2::<f64>::zeros((m, 3));
        for i in 0..m {
            for j in 0..3 {
                x[[i, j]] = rng.gen_range(-1.0..1.0);
            }
        }
        let cfg = NotearsConfig { lambda1: 1e6, ..NotearsConfig::default() };
        let g = notears(&x, &cfg).unwrap();
        assert!(g.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn notears_recovers_two_node_chain() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let m = 2000;
        let mut x = Array2::<f64>::zeros((m, 2));
        for i in 0..m {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            x[[i, 0]] = e1;
            x[[i, 1]] = 0.9 * e1 + e2;
        }
        let g = notears(&x, &NotearsConfig::default()).unwrap();
        assert!(g.weights[[0, 1]] > 0.0, "true edge missing");
        assert_eq!(g.weights[[1, 0]], 0.0, "reverse edge present");
        assert!(g.converged);
        // L1 shrinks the coefficient by about lambda1; only the support matters.
        assert!((0.6..=1.0).contains(&g.weights[[0, 1]]));
    }

    #[test]
    fn notears_empty_for_independent_columns() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let m = 2000;
        let mut x = Array2::<f64>::zeros((m, 3));
        for i in 0..m {
            for j in 0..3 {
                x[[i, j]] = StandardNormal.sample(&mut rng);
            }
        }
        let g = notears(&x, &NotearsConfig::default()).unwrap();
        assert!(g.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn notears_output_is_acyclic() {
        use rand_distr::{Distribution, StandardNormal};
        for seed in 0..5u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let m = 300;
            let d = 4;
            let mut x = Array2::<f64>::zeros((m, d));
            for i in 0..m {
                let mut prev: f64 = StandardNormal.sample(&mut rng);
                x[[i, 0]] = prev;
                for j in 1..d {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    prev = 0.8 * prev + e;
                    x[[i, j]] = prev;
                }
            }
            let g = notears(&x, &NotearsConfig::default()).unwrap();
            assert!(find_cycle(&g.weights).is_none(), "seed {seed} produced a cycle");
        }
    }

    #[test]
    fn entropy_of_complete_graph_is_one() {
        for n in [3, 5, 8] {
            let mut w = Array2::<f64>::ones((n, n));
            for i in 0..n {
                w[[i, i]] = 0.0;
            }
            let g = FeatureGraph::new(w, false, GraphMethod::Imported);
            let (h, _, degenerate) = graph_entropy(&g).unwrap();
            assert!(!degenerate);
            assert_relative_eq!(h, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn entropy_of_three_node_path() {
        let w = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let g = FeatureGraph::new(w, false, GraphMethod::Imported);
        let (h, per_node, _) = graph_entropy(&g).unwrap();
        assert_relative_eq!(h, 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(per_node[1], 1.0, epsilon = 1e-12);
        assert_eq!(per_node[0], 0.0);
    }

    #[test]
    fn entropy_single_edge_on_three_nodes() {
        let w = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let g = FeatureGraph::new(w, false, GraphMethod::Imported);
        let (h, _, degenerate) = graph_entropy(&g).unwrap();
        assert_eq!(h, 0.0);
        assert!(!degenerate);
    }

    #[test]
    fn entropy_is_scale_invariant_and_bounded() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n = 6;
        let mut w = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let v: f64 = rng.gen_range(0.0..1.0);
                let v = if v < 0.3 { 0.0 } else { v };
                w[[i, j]] = v;
                w[[j, i]] = v;
            }
        }
        let g1 = FeatureGraph::new(w.clone(), false, GraphMethod::Imported);
        let g2 = FeatureGraph::new(w * 37.5, false, GraphMethod::Imported);
        let (h1, _, _) = graph_entropy(&g1).unwrap();
        let (h2, _, _) = graph_entropy(&g2).unwrap();
        assert_relative_eq!(h1, h2, epsilon = 1e-12);
        assert!((0.0..=1.0).contains(&h1));
    }

    #[test]
    fn entropy_all_isolated_is_degenerate() {
        let g = FeatureGraph::new(Array2::zeros((4, 4)), false, GraphMethod::Imported);
        let (h, _, degenerate) = graph_entropy(&g).unwrap();
        assert_eq!(h, 0.0);
        assert!(degenerate);
    }

    #[test]
    fn fiedler_zero_for_disconnected() {
        let w = array![
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, 0.0]
        ];
        let g = FeatureGraph::new(w, false, GraphMethod::Imported);
        assert_relative_eq!(fiedler_value(&g).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn fiedler_of_single_edge_is_two() {
        let w = array![[0.0, 1.0], [1.0, 0.0]];
        let g = FeatureGraph::new(w, false, GraphMethod::Imported);
        assert_relative_eq!(fiedler_value(&g).unwrap(), 2.0, epsilon = 1e-10);
    }

    #[test]
    fn fiedler_of_complete_graph_is_n() {
        for n in [3, 4, 6] {
            let mut w = Array2::<f64>::ones((n, n));
            for i in 0..n {
                w[[i, i]] = 0.0;
            }
            let g = FeatureGraph::new(w, false, GraphMethod::Imported);
            assert_relative_eq!(fiedler_value(&g).unwrap(), n as f64, epsilon = 1e-8);
        }
    }

    #[test]
    fn fiedler_scales_linearly_with_weights() {
        let w = array![[0.0, 0.7, 0.2], [0.7, 0.0, 0.4], [0.2, 0.4, 0.0]];
        let g1 = FeatureGraph::new(w.clone(), false, GraphMethod::Imported);
        let g2 = FeatureGraph::new(w * 3.0, false, GraphMethod::Imported);
        let f1 = fiedler_value(&g1).unwrap();
        let f2 = fiedler_value(&g2).unwrap();
        assert_relative_eq!(f2, 3.0 * f1, epsilon = 1e-9);
    }

    #[test]
    fn import_graph_zeroes_diagonal_and_takes_abs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adj.csv");
        std::fs::write(&path, "1.0,-0.5\n0.0,1.0\n").unwrap();
        let g = import_graph(&path, true, Some(2)).unwrap();
        assert_eq!(g.weights[[0, 0]], 0.0);
        assert_eq!(g.weights[[1, 1]], 0.0);
        assert_eq!(g.weights[[0, 1]], 0.5);
    }

    #[test]
    fn import_graph_checks_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adj.csv");
        std::fs::write(&path, "0,1\n1,0\n").unwrap();
        assert!(import_graph(&path, false, Some(5)).is_err());
    }

    #[test]
    fn graph_roundtrips_through_csv() {
        let w = array![[0.0, 0.25], [0.25, 0.0]];
        let mut g = FeatureGraph::new(w, false, GraphMethod::Spearman);
        g.params.insert("note".into(), 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.csv");
        save_graph(&g, &path).unwrap();
        let back = load_graph(&path).unwrap();
        assert_eq!(back.method, GraphMethod::Spearman);
        assert_eq!(back.weights, g.weights);
        assert!(!back.directed);
    }
}
