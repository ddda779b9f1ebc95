//! Exact-marginal feasibility of a support pattern, via bipartite max-flow.
//!
//! A nonnegative matrix with support inside a given pattern and exact row
//! sums `r` / column sums `c` exists iff the max flow of the transportation
//! network (source -> rows with capacity `r`, pattern edges with infinite
//! capacity, columns -> sink with capacity `c`) saturates the total mass.
//! On top of the yes/no answer this module classifies which pattern entries
//! are forced to zero in *every* feasible plan; removing them leaves the
//! support the Sinkhorn limit actually lives on, which turns sublinear
//! boundary convergence into an ordinary interior problem.

use crate::matrix::{check_equal_mass, Dense, MarginalVector, NonnegMatrix};
use crate::error::Result;

/// A support pattern: the positions allowed to be positive.
#[derive(Debug, Clone)]
pub struct SupportPattern {
    rows: usize,
    cols: usize,
    mask: Vec<bool>,
}

impl SupportPattern {
    pub fn new(rows: usize, cols: usize, entries: &[(usize, usize)]) -> Self {
        let mut mask = vec![false; rows * cols];
        for &(i, j) in entries {
            mask[i * cols + j] = true;
        }
        Self { rows, cols, mask }
    }

    pub fn from_matrix(m: &NonnegMatrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            mask: m.as_slice().iter().map(|&v| v > 0.0).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.cols + j]
    }
}

/// Outcome of [`feasibility_check`].
#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible,
    /// No feasible plan exists. The witness is a set of rows whose joint mass
    /// exceeds the mass of every column they can reach.
    Infeasible {
        witness_rows: Vec<usize>,
        witness_cols: Vec<usize>,
        row_mass: f64,
        col_mass: f64,
    },
}

/// Decide whether a plan with the given support and exact marginals exists.
pub fn feasibility_check(
    pattern: &SupportPattern,
    r: &MarginalVector,
    c: &MarginalVector,
) -> Result<Feasibility> {
    check_equal_mass(r, c)?;
    let mut net = TransportNetwork::build(pattern, r, c);
    let flow = net.max_flow();
    let mass = r.mass();
    if mass - flow <= 1e-9 * mass.max(1.0) {
        return Ok(Feasibility::Feasible);
    }
    // Min-cut witness: rows reachable from the source in the residual graph,
    // together with every column they can reach.
    let reach = net.reachable_from_source();
    let witness_rows: Vec<usize> = (0..pattern.rows)
        .filter(|&i| reach[net.row_node(i)])
        .collect();
    let mut witness_cols: Vec<usize> = Vec::new();
    for j in 0..pattern.cols {
        if witness_rows.iter().any(|&i| pattern.contains(i, j)) {
            witness_cols.push(j);
        }
    }
    let row_mass = witness_rows.iter().map(|&i| r.values()[i]).sum();
    let col_mass = witness_cols.iter().map(|&j| c.values()[j]).sum();
    Ok(Feasibility::Infeasible {
        witness_rows,
        witness_cols,
        row_mass,
        col_mass,
    })
}

/// Pattern entries that carry zero mass in every feasible plan.
///
/// Returns `None` when the pattern itself is infeasible (then the question
/// does not apply). An entry can be positive in some feasible plan iff its
/// edge carries flow in the computed max flow, or its row and column nodes
/// lie in the same strongly connected component of the residual graph.
pub fn forced_zero_entries(
    pattern: &SupportPattern,
    r: &MarginalVector,
    c: &MarginalVector,
) -> Option<Vec<(usize, usize)>> {
    let mut net = TransportNetwork::build(pattern, r, c);
    let flow = net.max_flow();
    let mass = r.mass();
    if mass - flow > 1e-9 * mass.max(1.0) {
        return None;
    }
    let scc = net.residual_scc();
    let mut forced = Vec::new();
    for i in 0..pattern.rows {
        for j in 0..pattern.cols {
            if !pattern.contains(i, j) {
                continue;
            }
            let e = net.pattern_edge[i * pattern.cols + j];
            if net.edges[e].flow > 0.0 {
                continue;
            }
            if scc[net.row_node(i)] != scc[net.col_node(j)] {
                forced.push((i, j));
            }
        }
    }
    Some(forced)
}

/// Zero out the forced-zero entries of `m` for the marginals `(r, c)`.
///
/// Returns `None` when nothing changes (already on the feasible support, or
/// the marginals are infeasible for the pattern so no trimming is sound).
pub fn trimmed_to_feasible_support(
    m: &NonnegMatrix,
    r: &MarginalVector,
    c: &MarginalVector,
) -> Option<NonnegMatrix> {
    let pattern = SupportPattern::from_matrix(m);
    let forced = forced_zero_entries(&pattern, r, c)?;
    if forced.is_empty() {
        return None;
    }
    let (rows, cols, mut data) = m.clone().into_parts();
    for (i, j) in forced {
        data[i * cols + j] = 0.0;
    }
    Some(NonnegMatrix::new(rows, cols, data).expect("feasible support keeps rows and columns alive"))
}

struct Edge {
    to: usize,
    cap: f64,
    flow: f64,
}

/// Source, row nodes, column nodes, sink. Paired edge layout: edge `2k+1`
/// is the reverse of edge `2k`.
struct TransportNetwork {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
    pattern_edge: Vec<usize>,
    n_rows: usize,
    node_count: usize,
}

impl TransportNetwork {
    fn build(pattern: &SupportPattern, r: &MarginalVector, c: &MarginalVector) -> Self {
        let (n, m) = (pattern.rows, pattern.cols);
        let node_count = n + m + 2;
        let mut net = Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); node_count],
            pattern_edge: vec![usize::MAX; n * m],
            n_rows: n,
            node_count,
        };
        for i in 0..n {
            net.add_edge(net.source(), net.row_node(i), r.values()[i]);
        }
        for i in 0..n {
            for j in 0..m {
                if pattern.contains(i, j) {
                    let e = net.add_edge(net.row_node(i), net.col_node(j), f64::INFINITY);
                    net.pattern_edge[i * m + j] = e;
                }
            }
        }
        for j in 0..m {
            net.add_edge(net.col_node(j), net.sink(), c.values()[j]);
        }
        net
    }

    fn source(&self) -> usize {
        0
    }
    fn row_node(&self, i: usize) -> usize {
        1 + i
    }
    fn col_node(&self, j: usize) -> usize {
        1 + self.n_rows + j
    }
    fn sink(&self) -> usize {
        self.node_count - 1
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, flow: 0.0 });
        self.edges.push(Edge { to: from, cap: 0.0, flow: 0.0 });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    fn residual(&self, e: usize) -> f64 {
        self.edges[e].cap - self.edges[e].flow
    }

    /// Edmonds-Karp. Every interior edge has infinite capacity, so each
    /// augmentation saturates a source or sink edge and the number of
    /// augmenting rounds is at most rows + cols.
    fn max_flow(&mut self) -> f64 {
        let (s, t) = (self.source(), self.sink());
        let mut total = 0.0;
        loop {
            let mut pred: Vec<Option<usize>> = vec![None; self.node_count];
            let mut queue = std::collections::VecDeque::from([s]);
            'bfs: while let Some(u) = queue.pop_front() {
                for &e in &self.adj[u] {
                    let v = self.edges[e].to;
                    if v != s && pred[v].is_none() && self.residual(e) > 0.0 {
                        pred[v] = Some(e);
                        if v == t {
                            break 'bfs;
                        }
                        queue.push_back(v);
                    }
                }
            }
            let Some(mut e) = pred[t] else { break };
            let mut bottleneck = f64::INFINITY;
            loop {
                bottleneck = bottleneck.min(self.residual(e));
                let from = self.edges[e ^ 1].to;
                if from == s {
                    break;
                }
                e = pred[from].expect("path reaches the source");
            }
            if !(bottleneck > 0.0) || bottleneck.is_infinite() {
                break;
            }
            let mut e = pred[t].unwrap();
            loop {
                self.edges[e].flow += bottleneck;
                self.edges[e ^ 1].flow -= bottleneck;
                let from = self.edges[e ^ 1].to;
                if from == s {
                    break;
                }
                e = pred[from].unwrap();
            }
            total += bottleneck;
        }
        total
    }

    fn reachable_from_source(&self) -> Vec<bool> {
        let mut seen = vec![false; self.node_count];
        seen[self.source()] = true;
        let mut stack = vec![self.source()];
        while let Some(u) = stack.pop() {
            for &e in &self.adj[u] {
                let v = self.edges[e].to;
                if !seen[v] && self.residual(e) > 0.0 {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    /// Strongly connected components of the residual graph (Kosaraju).
    fn residual_scc(&self) -> Vec<usize> {
        let fwd: Vec<Vec<usize>> = (0..self.node_count)
            .map(|u| {
                self.adj[u]
                    .iter()
                    .filter(|&&e| self.residual(e) > 0.0)
                    .map(|&e| self.edges[e].to)
                    .collect()
            })
            .collect();
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); self.node_count];
        for (u, outs) in fwd.iter().enumerate() {
            for &v in outs {
                rev[v].push(u);
            }
        }

        // First pass: record nodes by DFS finish time.
        let mut order = Vec::with_capacity(self.node_count);
        let mut seen = vec![false; self.node_count];
        for start in 0..self.node_count {
            if seen[start] {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            seen[start] = true;
            while let Some(&mut (u, ref mut next)) = stack.last_mut() {
                if let Some(&v) = fwd[u].get(*next) {
                    *next += 1;
                    if !seen[v] {
                        seen[v] = true;
                        stack.push((v, 0));
                    }
                } else {
                    order.push(u);
                    stack.pop();
                }
            }
        }

        // Second pass: components on the transposed graph in reverse order.
        let mut comp = vec![usize::MAX; self.node_count];
        let mut current = 0;
        for &start in order.iter().rev() {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            comp[start] = current;
            while let Some(u) = stack.pop() {
                for &v in &rev[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = current;
                        stack.push(v);
                    }
                }
            }
            current += 1;
        }
        comp
    }
}
