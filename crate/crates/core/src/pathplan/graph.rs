use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{charge_steps, EdgeCostTable, RoadNetwork};
use crate::dmop::SocGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugEdge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
    /// road edge driven; `None` for the source and sink connectors
    pub road_edge: Option<usize>,
    /// level credited on arrival before any charging at the head node
    pub credit: usize,
}

/// Road nodes times SoC levels, plus a source `s` and a sink `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedGraph {
    pub road_nodes: usize,
    pub levels: usize,
    pub edges: Vec<AugEdge>,
    adj: Vec<Vec<usize>>,
}

impl AugmentedGraph {
    pub fn node(&self, road: usize, level: usize) -> usize {
        road * self.levels + level
    }

    pub fn source(&self) -> usize {
        self.road_nodes * self.levels
    }

    pub fn sink(&self) -> usize {
        self.road_nodes * self.levels + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.road_nodes * self.levels + 2
    }

    /// `(road node, level)` of an expanded node; `None` for `s` and `t`.
    pub fn decode(&self, node: usize) -> Option<(usize, usize)> {
        (node < self.source()).then(|| (node / self.levels, node % self.levels))
    }

    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = &AugEdge> + '_ {
        self.adj[node].iter().map(move |&k| &self.edges[k])
    }

    fn push(&mut self, edge: AugEdge) {
        self.adj[edge.from].push(self.edges.len());
        self.edges.push(edge);
    }

    /// Distances and predecessor edges from `src`.
    pub fn dijkstra(&self, src: usize) -> (Vec<f64>, Vec<Option<usize>>) {
        let n = self.num_nodes();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(Item(0.0, src));
        while let Some(Item(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &k in &self.adj[u] {
                let e = &self.edges[k];
                let nd = d + e.weight;
                if nd < dist[e.to] {
                    dist[e.to] = nd;
                    pred[e.to] = Some(k);
                    heap.push(Item(nd, e.to));
                }
            }
        }
        (dist, pred)
    }

    /// Edge indices of the predecessor chain ending at `target`.
    pub fn walk(&self, pred: &[Option<usize>], target: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut v = target;
        while let Some(k) = pred[v] {
            out.push(k);
            v = self.edges[k].from;
        }
        out.reverse();
        out
    }

    pub fn all_pairs(&self) -> Distances {
        let n = self.num_nodes();
        let rows: Vec<(Vec<f64>, Vec<Option<usize>>)> = (0..n).into_par_iter().map(|s| self.dijkstra(s)).collect();
        let mut dist = Vec::with_capacity(n * n);
        let mut pred = Vec::with_capacity(n * n);
        for (d, p) in rows {
            dist.extend(d);
            pred.extend(p);
        }
        Distances { n, dist, pred }
    }
}

/// All-pairs shortest distances with predecessor edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Distances {
    n: usize,
    dist: Vec<f64>,
    pred: Vec<Option<usize>>,
}

impl Distances {
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.dist[from * self.n + to]
    }

    pub fn walk(&self, graph: &AugmentedGraph, from: usize, to: usize) -> Vec<usize> {
        graph.walk(&self.pred[from * self.n..(from + 1) * self.n], to)
    }
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Builds the expanded graph.
///
/// With `charging` off this is the no-charge subgraph: each road edge links
/// `u^B` to `v^B'` and `s` reaches only the source at the (floored) initial
/// level. With charging on, arriving at `v` may add up to `v`'s charge cap; at
/// nodes where charging is free only the highest reachable level is linked.
pub fn build_augmented_graph(
    network: &RoadNetwork,
    grid: &SocGrid,
    tables: &[EdgeCostTable],
    charging: bool,
) -> AugmentedGraph {
    let levels = grid.levels;
    let road_nodes = network.nodes.len();
    let mut g =
        AugmentedGraph { road_nodes, levels, edges: Vec::new(), adj: vec![Vec::new(); road_nodes * levels + 2] };
    let cap = network.tank_capacity;
    let steps = |v: usize| if charging { charge_steps(network.nodes[v].charge_cap, grid) } else { 0 };
    let top = levels - 1;

    let b0 = grid.bucket(network.b0);
    let s = g.source();
    for b in b0..=(b0 + steps(network.source)).min(top) {
        let to = g.node(network.source, b);
        g.push(AugEdge { from: s, to, weight: cap - network.g0, road_edge: None, credit: b0 });
    }
    for (k, (edge, table)) in network.edges.iter().zip(tables).enumerate() {
        let head = &network.nodes[edge.to];
        let k_v = steps(edge.to);
        for i in 0..levels {
            for j in 0..levels {
                let w = table.z(i, j);
                if !(w <= cap) {
                    continue;
                }
                let top_j = (j + k_v).min(top);
                let first = if head.charge_price == 0.0 { top_j } else { j };
                for jj in first..=top_j {
                    let (from, to) = (g.node(edge.from, i), g.node(edge.to, jj));
                    g.push(AugEdge { from, to, weight: w, road_edge: Some(k), credit: j });
                }
            }
        }
    }
    let t = g.sink();
    for b in 0..levels {
        let from = g.node(network.dest, b);
        g.push(AugEdge { from, to: t, weight: 0.0, road_edge: None, credit: b });
    }
    g
}
