//! Node-weighted shortest paths on a 4-connected directed grid.
//!
//! A path's decision vector is its node indicator (one entry per tile), so a
//! species' path length is `c . x` for that species' row of node costs. Node
//! costs become edge costs by charging each edge the cost of its head node,
//! with the source cost added once.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{check_len, Error, Result};
use crate::owa::{CriteriaMatrix, OwaWeights};

/// Lower clamp applied to predicted node costs before a forward solve.
pub const NEGATIVE_WEIGHT_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridGraph {
    rows: usize,
    cols: usize,
    source: usize,
    sink: usize,
    /// Directed edges `(tail, head)`, both orientations of every grid link.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl GridGraph {
    /// Grid from the top-left tile to the bottom-right tile.
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows * cols < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid {rows}x{cols} needs at least two tiles"
            )));
        }
        Self::with_terminals(rows, cols, 0, rows * cols - 1)
    }

    pub fn with_terminals(rows: usize, cols: usize, source: usize, sink: usize) -> Result<Self> {
        let n = rows * cols;
        if source >= n || sink >= n || source == sink {
            return Err(Error::InvalidArgument(format!(
                "invalid terminals {source} -> {sink} on {n} nodes"
            )));
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let u = r * cols + c;
                // fixed neighbor order: up, left, right, down
                if r > 0 {
                    adjacency[u].push(u - cols);
                }
                if c > 0 {
                    adjacency[u].push(u - 1);
                }
                if c + 1 < cols {
                    adjacency[u].push(u + 1);
                }
                if r + 1 < rows {
                    adjacency[u].push(u + cols);
                }
                for &v in &adjacency[u] {
                    edges.push((u, v));
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            source,
            sink,
            edges,
            adjacency,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn node_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    /// Node-arc incidence matrix, row-major `nodes x edges`: `-1` at the tail,
    /// `+1` at the head.
    pub fn incidence(&self) -> Vec<Vec<i8>> {
        let mut a = vec![vec![0i8; self.edges.len()]; self.node_count()];
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            a[u][e] = -1;
            a[v][e] = 1;
        }
        a
    }

    /// Right-hand side of the flow conservation system `A x = b`.
    pub fn flow_rhs(&self) -> Vec<i8> {
        let mut b = vec![0i8; self.node_count()];
        b[self.source] = -1;
        b[self.sink] = 1;
        b
    }

    /// Edge costs under the head-node convention.
    pub fn edge_costs(&self, node_costs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.node_count(), node_costs.len())?;
        Ok(self.edges.iter().map(|&(_, v)| node_costs[v]).collect())
    }

    /// True when `x` is the 0/1 indicator of an induced simple path from source to sink.
    pub fn is_path_indicator(&self, x: &[f64]) -> bool {
        if x.len() != self.node_count() {
            return false;
        }
        if x.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return false;
        }
        let on = |u: usize| x[u] == 1.0;
        if !on(self.source) || !on(self.sink) {
            return false;
        }
        for u in 0..self.node_count() {
            if !on(u) {
                continue;
            }
            let deg = self.adjacency[u].iter().filter(|&&v| on(v)).count();
            let want = if u == self.source || u == self.sink { 1 } else { 2 };
            if deg != want {
                return false;
            }
        }
        // walk from the source and make sure every selected node is visited
        let total = x.iter().filter(|v| **v == 1.0).count();
        let mut prev = usize::MAX;
        let mut cur = self.source;
        let mut seen = 1;
        while cur != self.sink {
            let next = self.adjacency[cur]
                .iter()
                .copied()
                .find(|&v| on(v) && v != prev);
            match next {
                Some(v) => {
                    prev = cur;
                    cur = v;
                    seen += 1;
                }
                None => return false,
            }
        }
        seen == total
    }

    /// Flow-conservation residual `max |A x_e - b|` of an edge indicator.
    pub fn flow_violation(&self, edge_x: &[f64]) -> f64 {
        let mut net = vec![0.0; self.node_count()];
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            net[u] -= edge_x[e];
            net[v] += edge_x[e];
        }
        let b = self.flow_rhs();
        net.iter()
            .zip(&b)
            .map(|(a, b)| (a - *b as f64).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    /// Visited nodes from source to sink.
    pub nodes: Vec<usize>,
    pub node_indicator: Vec<f64>,
    pub edge_indicator: Vec<f64>,
    pub cost: f64,
}

impl GridPath {
    fn from_nodes(graph: &GridGraph, nodes: Vec<usize>, cost: f64) -> Self {
        let mut node_indicator = vec![0.0; graph.node_count()];
        for &u in &nodes {
            node_indicator[u] = 1.0;
        }
        let mut edge_indicator = vec![0.0; graph.edge_count()];
        for pair in nodes.windows(2) {
            if let Some(e) = graph.edges.iter().position(|&(a, b)| a == pair[0] && b == pair[1]) {
                edge_indicator[e] = 1.0;
            }
        }
        Self {
            nodes,
            node_indicator,
            edge_indicator,
            cost,
        }
    }
}

#[derive(PartialEq)]
struct HeapItem {
    cost: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, then on node id
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source distances under node costs; `dist[v]` includes the costs of
/// both endpoints.
fn dijkstra(graph: &GridGraph, costs: &[f64], from: usize) -> (Vec<f64>, Vec<usize>) {
    let n = graph.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[from] = costs[from];
    heap.push(HeapItem {
        cost: costs[from],
        node: from,
    });
    while let Some(HeapItem { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        for &v in graph.neighbors(node) {
            let cand = cost + costs[v];
            if cand < dist[v] {
                dist[v] = cand;
                pred[v] = node;
                heap.push(HeapItem { cost: cand, node: v });
            }
        }
    }
    (dist, pred)
}

fn clamped(costs: &[f64]) -> Result<Vec<f64>> {
    if costs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("node costs"));
    }
    Ok(costs.iter().map(|v| v.max(NEGATIVE_WEIGHT_CLAMP)).collect())
}

/// Minimum-cost source-to-sink path under node costs. Costs below
/// [`NEGATIVE_WEIGHT_CLAMP`] are raised to it; the reported cost uses the
/// clamped values.
pub fn solve_shortest_path(graph: &GridGraph, node_costs: &[f64]) -> Result<GridPath> {
    check_len(graph.node_count(), node_costs.len())?;
    let costs = clamped(node_costs)?;
    let (dist, pred) = dijkstra(graph, &costs, graph.source);
    if !dist[graph.sink].is_finite() {
        return Err(Error::Unreachable {
            from: graph.source,
            sink: graph.sink,
        });
    }
    let mut nodes = vec![graph.sink];
    let mut cur = graph.sink;
    while cur != graph.source {
        cur = pred[cur];
        nodes.push(cur);
    }
    nodes.reverse();
    Ok(GridPath::from_nodes(graph, nodes, dist[graph.sink]))
}

/// Fair aggregate of species path lengths: weights applied to lengths sorted
/// in decreasing order, so the longest length gets the largest weight. Equals
/// `-OWA_w(-y)`.
pub fn owa_path_cost(w: &[f64], lengths: &[f64]) -> f64 {
    let mut s = lengths.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    w.iter().zip(&s).map(|(a, b)| a * b).sum()
}

struct Search<'a> {
    graph: &'a GridGraph,
    costs: &'a [Vec<f64>],
    w: &'a [f64],
    /// `to_sink[k][u]`: cheapest species-k cost from `u` to the sink, excluding `u`.
    to_sink: Vec<Vec<f64>>,
    on_path: Vec<bool>,
    path: Vec<usize>,
    acc: Vec<f64>,
    best: f64,
    best_path: Vec<usize>,
}

impl Search<'_> {
    fn dfs(&mut self, u: usize) {
        if u == self.graph.sink {
            let value = owa_path_cost(self.w, &self.acc);
            if value < self.best {
                self.best = value;
                self.best_path.clone_from(&self.path);
            }
            return;
        }
        let m = self.costs.len();
        let neighbors = self.graph.neighbors(u).to_vec();
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(neighbors.len());
        let mut bound = vec![0.0; m];
        for v in neighbors {
            if self.on_path[v] {
                continue;
            }
            for k in 0..m {
                bound[k] = self.acc[k] + self.costs[k][v] + self.to_sink[k][v];
            }
            let lb = owa_path_cost(self.w, &bound);
            if lb < self.best {
                order.push((lb, v));
            }
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (lb, v) in order {
            if lb >= self.best {
                break;
            }
            // an induced-path shortcut check: a node adjacent to an earlier path node
            // other than u can never be on an optimal path with positive costs
            let shortcut = self
                .graph
                .neighbors(v)
                .iter()
                .any(|&x| x != u && self.on_path[x]);
            if shortcut {
                continue;
            }
            self.on_path[v] = true;
            self.path.push(v);
            for k in 0..m {
                self.acc[k] += self.costs[k][v];
            }
            self.dfs(v);
            for k in 0..m {
                self.acc[k] -= self.costs[k][v];
            }
            self.path.pop();
            self.on_path[v] = false;
        }
    }
}

/// Exact minimizer of the fair aggregate path length over all simple
/// source-to-sink paths, by depth-first branch and bound. The bound adds each
/// species' remaining shortest distance to the partial lengths, which is valid
/// because the aggregate is monotone. Rows of `c` are per-species node costs.
pub fn solve_owa_shortest_path_exact(
    graph: &GridGraph,
    w: &OwaWeights,
    c: &CriteriaMatrix,
) -> Result<GridPath> {
    check_len(w.len(), c.m())?;
    check_len(graph.node_count(), c.n())?;
    let costs: Vec<Vec<f64>> = (0..c.m())
        .map(|k| clamped(&c.matrix().row(k).iter().copied().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let to_sink: Vec<Vec<f64>> = costs
        .iter()
        .map(|row| {
            let (d, _) = dijkstra(graph, row, graph.sink);
            // d[u] includes both endpoints; drop u's own cost
            d.iter().zip(row).map(|(a, b)| a - b).collect()
        })
        .collect();
    // incumbents: per-species shortest paths and the unweighted-sum path
    let mut best = f64::INFINITY;
    let mut best_path = Vec::new();
    let mut seeds: Vec<Vec<f64>> = costs.clone();
    seeds.push(
        (0..graph.node_count())
            .map(|u| costs.iter().map(|r| r[u]).sum())
            .collect(),
    );
    for seed in &seeds {
        let p = solve_shortest_path(graph, seed)?;
        let lengths: Vec<f64> = costs
            .iter()
            .map(|r| p.nodes.iter().map(|&u| r[u]).sum())
            .collect();
        let v = owa_path_cost(w.as_slice(), &lengths);
        if v < best {
            best = v;
            best_path = p.nodes;
        }
    }
    let mut on_path = vec![false; graph.node_count()];
    on_path[graph.source] = true;
    let mut search = Search {
        graph,
        costs: &costs,
        w: w.as_slice(),
        to_sink,
        on_path,
        path: vec![graph.source],
        acc: costs.iter().map(|r| r[graph.source]).collect(),
        best,
        best_path,
    };
    search.dfs(graph.source);
    let nodes = search.best_path;
    Ok(GridPath::from_nodes(graph, nodes, search.best))
}
