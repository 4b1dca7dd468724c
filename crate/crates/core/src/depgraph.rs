//! Package dependency graph and its structural metrics.
//!
//! An edge `p1 -> p2` means `p1` depends on `p2`. Cycles are handled on the
//! strongly-connected-component condensation:
//!
//! - the dependency tree size of a package is the number of distinct other
//!   packages reachable from it;
//! - the dependency chain depth of a package is the longest condensation path
//!   from its component, counting one per inter-component edge plus
//!   `size - 1` for every component on the path. On acyclic graphs this is
//!   the ordinary longest path length in edges.

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::snapshot::Snapshot;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("package `{0}` is not a node of the dependency graph")]
    UnknownPackage(String),
    #[error("dependency graph has no nodes")]
    EmptyGraph,
}

/// A dependency that names a package absent from the snapshot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Unresolved {
    pub depender: String,
    pub missing: String,
}

#[derive(Debug)]
pub struct DependencyGraph {
    names: Vec<String>,
    index: HashMap<String, u32>,
    adjacency: Vec<Vec<u32>>,
    unresolved: Vec<Unresolved>,
    removed_disconnected: usize,
    metrics: OnceLock<Metrics>,
}

#[derive(Debug)]
struct Metrics {
    closure: Vec<u64>,
    depth: Vec<u64>,
}

impl DependencyGraph {
    /// Builds a graph from node names and `(depender, dependee)` pairs.
    /// Self-edges and duplicate edges are dropped; edges naming unknown nodes
    /// are recorded as unresolved.
    pub fn from_edges<N, E, S>(nodes: N, edges: E) -> Self
    where
        N: IntoIterator<Item = S>,
        E: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut names: Vec<String> = nodes.into_iter().map(Into::into).collect();
        names.sort();
        names.dedup();
        let index: HashMap<String, u32> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        let mut adjacency = vec![Vec::new(); names.len()];
        let mut unresolved = Vec::new();
        for (from, to) in edges {
            let (from, to): (String, String) = (from.into(), to.into());
            let Some(&u) = index.get(&from) else { continue };
            match index.get(&to) {
                Some(&v) if v != u => adjacency[u as usize].push(v),
                Some(_) => {}
                None => unresolved.push(Unresolved {
                    depender: from,
                    missing: to,
                }),
            }
        }
        for succ in &mut adjacency {
            succ.sort_unstable();
            succ.dedup();
        }
        unresolved.sort();
        DependencyGraph {
            names,
            index,
            adjacency,
            unresolved,
            removed_disconnected: 0,
            metrics: OnceLock::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Node names in ascending order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn unresolved(&self) -> &[Unresolved] {
        &self.unresolved
    }

    /// Nodes dropped by [`prune_disconnected`] to produce this graph.
    pub fn removed_disconnected(&self) -> usize {
        self.removed_disconnected
    }

    fn node(&self, name: &str) -> Result<usize, GraphError> {
        self.index
            .get(name)
            .map(|&i| i as usize)
            .ok_or_else(|| GraphError::UnknownPackage(name.to_string()))
    }

    pub fn dependencies(&self, name: &str) -> Result<Vec<&str>, GraphError> {
        let u = self.node(name)?;
        Ok(self.adjacency[u]
            .iter()
            .map(|&v| self.names[v as usize].as_str())
            .collect())
    }

    pub fn outdegree(&self, name: &str) -> Result<usize, GraphError> {
        Ok(self.adjacency[self.node(name)?].len())
    }

    /// Resolved edges as `(depender, dependee)` in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.adjacency.iter().enumerate().flat_map(move |(u, succ)| {
            succ.iter()
                .map(move |&v| (self.names[u].as_str(), self.names[v as usize].as_str()))
        })
    }

    /// Writes one `depender dependee` line per resolved edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (from, to) in self.edges() {
            writeln!(out, "{from} {to}")?;
        }
        Ok(())
    }

    fn metrics(&self) -> &Metrics {
        self.metrics.get_or_init(|| compute_metrics(&self.adjacency))
    }

    /// Number of distinct packages reachable from `name`, excluding itself.
    pub fn closure_size(&self, name: &str) -> Result<u64, GraphError> {
        let u = self.node(name)?;
        Ok(self.metrics().closure[u])
    }

    /// Length of the longest dependency chain starting at `name`.
    pub fn chain_depth(&self, name: &str) -> Result<u64, GraphError> {
        let u = self.node(name)?;
        Ok(self.metrics().depth[u])
    }

    /// Closure size of every node, in [`names`](Self::names) order.
    pub fn closure_sizes(&self) -> &[u64] {
        &self.metrics().closure
    }

    /// Chain depth of every node, in [`names`](Self::names) order.
    pub fn chain_depths(&self) -> &[u64] {
        &self.metrics().depth
    }
}

/// One node per snapshot record; one edge per declared dependency that names
/// a record of the snapshot (exact name first, then case-insensitive).
pub fn build_graph(snapshot: &Snapshot) -> DependencyGraph {
    let names: Vec<&str> = snapshot.names().collect();
    let mut edges = Vec::new();
    for record in snapshot.records() {
        for dep in &record.dependencies {
            let target = snapshot
                .lookup(dep)
                .map_or(dep.as_str(), |r| r.name.as_str());
            edges.push((record.name.as_str(), target));
        }
    }
    DependencyGraph::from_edges(names, edges)
}

/// Removes nodes with neither dependencies nor dependents.
pub fn prune_disconnected(graph: &DependencyGraph) -> (DependencyGraph, usize) {
    let n = graph.node_count();
    let mut connected = vec![false; n];
    for (u, succ) in graph.adjacency.iter().enumerate() {
        if !succ.is_empty() {
            connected[u] = true;
        }
        for &v in succ {
            connected[v as usize] = true;
        }
    }
    let keep: Vec<&str> = graph
        .names
        .iter()
        .zip(&connected)
        .filter(|(_, &c)| c)
        .map(|(name, _)| name.as_str())
        .collect();
    let removed = n - keep.len();
    let mut pruned = DependencyGraph::from_edges(keep, graph.edges());
    pruned.unresolved = graph
        .unresolved
        .iter()
        .filter(|u| pruned.contains(&u.depender))
        .cloned()
        .collect();
    pruned.removed_disconnected = graph.removed_disconnected + removed;
    (pruned, removed)
}

const UNVISITED: u32 = u32::MAX;

/// Tarjan's algorithm without recursion. Components are numbered in
/// completion order, so every successor component of `c` has an id below `c`.
fn strongly_connected(adj: &[Vec<u32>]) -> (Vec<u32>, Vec<u32>) {
    let n = adj.len();
    let mut order = vec![UNVISITED; n];
    let mut low = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<u32> = Vec::new();
    let mut comp_of = vec![UNVISITED; n];
    let mut comp_size: Vec<u32> = Vec::new();
    let mut call: Vec<(u32, usize)> = Vec::new();
    let mut counter = 0u32;

    for root in 0..n as u32 {
        if order[root as usize] != UNVISITED {
            continue;
        }
        order[root as usize] = counter;
        low[root as usize] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root as usize] = true;
        call.push((root, 0));

        while let Some(frame) = call.last_mut() {
            let v = frame.0 as usize;
            if frame.1 < adj[v].len() {
                let w = adj[v][frame.1] as usize;
                frame.1 += 1;
                if order[w] == UNVISITED {
                    order[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w as u32);
                    on_stack[w] = true;
                    call.push((w as u32, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(order[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                let p = parent as usize;
                low[p] = low[p].min(low[v]);
            }
            if low[v] == order[v] {
                let id = comp_size.len() as u32;
                let mut size = 0;
                loop {
                    let w = stack.pop().expect("component root is on the stack") as usize;
                    on_stack[w] = false;
                    comp_of[w] = id;
                    size += 1;
                    if w == v {
                        break;
                    }
                }
                comp_size.push(size);
            }
        }
    }
    (comp_of, comp_size)
}

fn compute_metrics(adj: &[Vec<u32>]) -> Metrics {
    let (comp_of, comp_size) = strongly_connected(adj);
    let comps = comp_size.len();

    let mut dag: Vec<Vec<u32>> = vec![Vec::new(); comps];
    for (u, succ) in adj.iter().enumerate() {
        let cu = comp_of[u];
        for &v in succ {
            let cv = comp_of[v as usize];
            if cu != cv {
                dag[cu as usize].push(cv);
            }
        }
    }
    for succ in &mut dag {
        succ.sort_unstable();
        succ.dedup();
    }

    // successors have smaller ids, so ascending order is a valid DP order
    let mut depth = vec![0u64; comps];
    for c in 0..comps {
        let own = comp_size[c] as u64 - 1;
        let below = dag[c].iter().map(|&d| 1 + depth[d as usize]).max().unwrap_or(0);
        depth[c] = own + below;
    }

    // Total size of the components reachable from each component (itself
    // excluded). A component with one successor `d` reaches exactly `d` plus
    // what `d` reaches, so only branching components need a traversal.
    let mut reach: Vec<u64> = (0..comps)
        .into_par_iter()
        .map_init(
            || (vec![u32::MAX; comps], Vec::new()),
            |(stamp, work), c| {
                if dag[c].len() < 2 {
                    return 0;
                }
                let mut total = 0u64;
                stamp[c] = c as u32;
                work.clear();
                work.push(c as u32);
                while let Some(x) = work.pop() {
                    for &d in &dag[x as usize] {
                        if stamp[d as usize] != c as u32 {
                            stamp[d as usize] = c as u32;
                            total += comp_size[d as usize] as u64;
                            work.push(d);
                        }
                    }
                }
                total
            },
        )
        .collect();
    for c in 0..comps {
        if let [d] = dag[c][..] {
            reach[c] = comp_size[d as usize] as u64 + reach[d as usize];
        }
    }

    let closure = comp_of
        .iter()
        .map(|&c| comp_size[c as usize] as u64 - 1 + reach[c as usize])
        .collect();
    let depth = comp_of.iter().map(|&c| depth[c as usize]).collect();
    Metrics { closure, depth }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub avg_outdegree: f64,
    pub avg_tree_size: f64,
    pub avg_tree_depth: f64,
    pub disconnected_removed: usize,
}

pub fn graph_summary(graph: &DependencyGraph) -> Result<GraphStats, GraphError> {
    let n = graph.node_count();
    if n == 0 {
        return Err(GraphError::EmptyGraph);
    }
    let edges = graph.edge_count() as f64;
    let size: u64 = graph.closure_sizes().iter().sum();
    let depth: u64 = graph.chain_depths().iter().sum();
    Ok(GraphStats {
        node_count: n,
        avg_outdegree: edges / n as f64,
        avg_tree_size: size as f64 / n as f64,
        avg_tree_depth: depth as f64 / n as f64,
        disconnected_removed: graph.removed_disconnected(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub size: u64,
    /// Nodes with closure size at most `size`.
    pub cumulative: usize,
    pub fraction: f64,
}

/// Empirical CDF of dependency tree sizes, one point per distinct size.
pub fn closure_size_distribution(graph: &DependencyGraph) -> Result<Vec<CdfPoint>, GraphError> {
    let n = graph.node_count();
    if n == 0 {
        return Err(GraphError::EmptyGraph);
    }
    let mut sizes = graph.closure_sizes().to_vec();
    sizes.sort_unstable();
    let mut points: Vec<CdfPoint> = Vec::new();
    for (i, &s) in sizes.iter().enumerate() {
        let cumulative = i + 1;
        match points.last_mut() {
            Some(p) if p.size == s => {
                p.cumulative = cumulative;
                p.fraction = cumulative as f64 / n as f64;
            }
            _ => points.push(CdfPoint {
                size: s,
                cumulative,
                fraction: cumulative as f64 / n as f64,
            }),
        }
    }
    Ok(points)
}
