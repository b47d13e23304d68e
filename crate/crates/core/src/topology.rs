//! Switching communication graphs.
//!
//! An edge `from -> to` means agent `to` receives the position of agent
//! `from`; its weight is the coupling `a[to][from]`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::TopologyError;

pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-6;
const TOL_BALANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    n: usize,
    edges: Vec<Edge>,
}

impl WeightedDigraph {
    /// Builds a graph over nodes `0..n`, rejecting self-loops, duplicate
    /// edges, and weights not strictly above `floor`.
    pub fn new(n: usize, edges: Vec<Edge>, floor: f64) -> Result<Self, TopologyError> {
        let mut seen = std::collections::HashSet::new();
        for e in &edges {
            if e.from >= n || e.to >= n {
                return Err(TopologyError::NodeOutOfRange {
                    from: e.from,
                    to: e.to,
                    n,
                });
            }
            if e.from == e.to {
                return Err(TopologyError::SelfLoop(e.from));
            }
            if !(e.weight.is_finite() && e.weight > floor) {
                return Err(TopologyError::WeightBelowFloor {
                    from: e.from,
                    to: e.to,
                    weight: e.weight,
                    floor,
                });
            }
            if !seen.insert((e.from, e.to)) {
                return Err(TopologyError::DuplicateEdge {
                    from: e.from,
                    to: e.to,
                });
            }
        }
        Ok(Self { n, edges })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            edges: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `(j, a_ij)` for every neighbour `j` that node `i` hears.
    pub fn in_neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.edges
            .iter()
            .filter(move |e| e.to == i)
            .map(|e| (e.from, e.weight))
    }

    pub fn in_degree(&self, i: usize) -> f64 {
        self.in_neighbors(i).map(|(_, w)| w).sum()
    }

    pub fn out_degree(&self, i: usize) -> f64 {
        self.edges
            .iter()
            .filter(|e| e.from == i)
            .map(|e| e.weight)
            .sum()
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            l[(e.to, e.from)] -= e.weight;
        }
        for i in 0..self.n {
            let off: f64 = (0..self.n).filter(|&j| j != i).map(|j| l[(i, j)]).sum();
            l[(i, i)] = -off;
        }
        l
    }

    pub fn is_balanced(&self) -> bool {
        self.unbalanced_nodes().is_empty()
    }

    pub fn unbalanced_nodes(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| (self.in_degree(i) - self.out_degree(i)).abs() > TOL_BALANCE)
            .collect()
    }

    pub fn is_strongly_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let mut g = DiGraph::<(), ()>::with_capacity(self.n, self.edges.len());
        let nodes: Vec<_> = (0..self.n).map(|_| g.add_node(())).collect();
        for e in &self.edges {
            g.add_edge(nodes[e.from], nodes[e.to], ());
        }
        tarjan_scc(&g).len() == 1
    }
}

/// Edge-set union; a shared edge keeps its largest weight.
pub fn union_graph(gs: &[&WeightedDigraph]) -> Result<WeightedDigraph, TopologyError> {
    let n = gs.first().map_or(0, |g| g.n);
    let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for g in gs {
        if g.n != n {
            return Err(TopologyError::NodeCountMismatch(n, g.n));
        }
        for e in &g.edges {
            let w = merged.entry((e.from, e.to)).or_insert(e.weight);
            *w = w.max(e.weight);
        }
    }
    Ok(WeightedDigraph {
        n,
        edges: merged
            .into_iter()
            .map(|((from, to), weight)| Edge { from, to, weight })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEntry {
    pub dwell: usize,
    pub graph: WeightedDigraph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScheduleMode {
    Cyclic,
    /// Each period visits the entries in a fresh seeded random order.
    RandomPermutation {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    period_steps: usize,
    entries: Vec<ScheduleEntry>,
    mode: ScheduleMode,
    // For cyclic mode: step offset at which each entry starts.
    starts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyReport {
    pub balanced_all: bool,
    /// `(entry, node)` pairs where in- and out-degree differ.
    pub unbalanced: Vec<(usize, usize)>,
    pub jointly_connected: bool,
    pub eta_steps: usize,
    /// Per node, the largest diagonal Laplacian entry over all entries.
    pub max_out_degree_row: Vec<f64>,
}

impl GraphSchedule {
    pub fn new(
        period_steps: usize,
        entries: Vec<ScheduleEntry>,
        mode: ScheduleMode,
    ) -> Result<Self, TopologyError> {
        let first = entries
            .first()
            .ok_or_else(|| TopologyError::InvalidSchedule("no entries".into()))?;
        let n = first.graph.n;
        if n == 0 {
            return Err(TopologyError::InvalidSchedule(
                "graphs have no nodes".into(),
            ));
        }
        for (idx, e) in entries.iter().enumerate() {
            if e.dwell == 0 {
                return Err(TopologyError::InvalidSchedule(format!(
                    "entry {} has zero dwell",
                    idx + 1
                )));
            }
            if e.graph.n != n {
                return Err(TopologyError::NodeCountMismatch(n, e.graph.n));
            }
        }
        let total: usize = entries.iter().map(|e| e.dwell).sum();
        if total != period_steps {
            return Err(TopologyError::InvalidSchedule(format!(
                "dwells sum to {total} but period_steps is {period_steps}"
            )));
        }
        let starts = entries
            .iter()
            .scan(0, |acc, e| {
                let s = *acc;
                *acc += e.dwell;
                Some(s)
            })
            .collect();
        Ok(Self {
            period_steps,
            entries,
            mode,
            starts,
        })
    }

    /// A single graph held at every step.
    pub fn constant(graph: WeightedDigraph) -> Self {
        Self::new(
            1,
            vec![ScheduleEntry { dwell: 1, graph }],
            ScheduleMode::Cyclic,
        )
        .expect("one-entry schedule is valid")
    }

    pub fn n(&self) -> usize {
        self.entries[0].graph.n
    }

    pub fn period_steps(&self) -> usize {
        self.period_steps
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    fn order_for_period(&self, period: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        if let ScheduleMode::RandomPermutation { seed } = self.mode {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (period as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            order.shuffle(&mut rng);
        }
        order
    }

    /// Index of the entry active at step `k`.
    pub fn entry_at(&self, k: usize) -> usize {
        let offset = k % self.period_steps;
        match self.mode {
            ScheduleMode::Cyclic => self.starts.partition_point(|&s| s <= offset) - 1,
            ScheduleMode::RandomPermutation { .. } => {
                let mut acc = 0;
                for idx in self.order_for_period(k / self.period_steps) {
                    acc += self.entries[idx].dwell;
                    if offset < acc {
                        return idx;
                    }
                }
                unreachable!("dwells cover the period")
            }
        }
    }

    pub fn graph_at(&self, k: usize) -> &WeightedDigraph {
        &self.entries[self.entry_at(k)].graph
    }

    pub fn validate(&self) -> TopologyReport {
        let n = self.n();
        let unbalanced: Vec<(usize, usize)> = self
            .entries
            .iter()
            .enumerate()
            .flat_map(|(idx, e)| {
                e.graph
                    .unbalanced_nodes()
                    .into_iter()
                    .map(move |i| (idx, i))
            })
            .collect();
        let graphs: Vec<&WeightedDigraph> = self.entries.iter().map(|e| &e.graph).collect();
        let jointly_connected = union_graph(&graphs)
            .map(|g| g.is_strongly_connected())
            .unwrap_or(false);
        let eta_steps = if !jointly_connected {
            self.period_steps
        } else {
            match self.mode {
                ScheduleMode::Cyclic => self.cyclic_eta(),
                // Orders differ between periods, so only aligned full
                // periods are guaranteed to cover every entry.
                ScheduleMode::RandomPermutation { .. } => self.period_steps,
            }
        };
        let max_out_degree_row = (0..n)
            .map(|i| {
                self.entries
                    .iter()
                    .map(|e| e.graph.in_degree(i))
                    .fold(0.0, f64::max)
            })
            .collect();
        TopologyReport {
            balanced_all: unbalanced.is_empty(),
            unbalanced,
            jointly_connected,
            eta_steps,
            max_out_degree_row,
        }
    }

    /// Smallest `w` such that every run of `w` consecutive steps has a
    /// strongly connected union. Runs starting mid-entry are never worse than
    /// the run starting at that entry's first step, so only entry starts are
    /// scanned.
    fn cyclic_eta(&self) -> usize {
        let count = self.entries.len();
        let mut eta = 1;
        for first in 0..count {
            let mut acc: Vec<&WeightedDigraph> = Vec::new();
            let mut span = 0;
            for hop in 0..count {
                let idx = (first + hop) % count;
                acc.push(&self.entries[idx].graph);
                let union = union_graph(&acc).expect("entries share n");
                if union.is_strongly_connected() {
                    eta = eta.max(span + 1);
                    break;
                }
                span += self.entries[idx].dwell;
            }
        }
        eta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> WeightedDigraph {
        WeightedDigraph::new(
            n,
            edges
                .iter()
                .map(|&(from, to, weight)| Edge { from, to, weight })
                .collect(),
            DEFAULT_WEIGHT_FLOOR,
        )
        .unwrap()
    }

    fn bidirectional_ring(n: usize, w: f64) -> WeightedDigraph {
        let mut edges = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            edges.push((i, j, w));
            edges.push((j, i, w));
        }
        graph(n, &edges)
    }

    #[test]
    fn laplacian_examples() {
        let g = graph(2, &[(0, 1, 0.5), (1, 0, 0.5)]);
        assert_eq!(
            g.laplacian(),
            DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5])
        );
        assert_eq!(graph(3, &[]).laplacian(), DMatrix::zeros(3, 3));
        let ring = bidirectional_ring(8, 0.5);
        let l = ring.laplacian();
        for i in 0..8 {
            assert_eq!(l[(i, i)], 0.5 * 2.0);
        }
    }

    #[test]
    fn construction_rejects_bad_edges() {
        let e = |from, to, weight| Edge { from, to, weight };
        assert_eq!(
            WeightedDigraph::new(2, vec![e(0, 0, 1.0)], 1e-6),
            Err(TopologyError::SelfLoop(0))
        );
        assert!(WeightedDigraph::new(2, vec![e(0, 2, 1.0)], 1e-6).is_err());
        assert!(WeightedDigraph::new(2, vec![e(0, 1, 1e-7)], 1e-6).is_err());
        assert!(WeightedDigraph::new(2, vec![e(0, 1, 1.0), e(0, 1, 2.0)], 1e-6).is_err());
    }

    #[test]
    fn balance_and_connectivity() {
        assert!(graph(2, &[(0, 1, 0.5), (1, 0, 0.5)]).is_balanced());
        assert!(!graph(2, &[(0, 1, 0.5)]).is_balanced());
        assert!(bidirectional_ring(5, 0.3).is_balanced());
        assert!(
            graph(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)]).is_strongly_connected()
        );
        assert!(!graph(3, &[(0, 1, 1.0), (1, 2, 1.0)]).is_strongly_connected());
        assert!(bidirectional_ring(8, 0.5).is_strongly_connected());
    }

    #[test]
    fn union_examples() {
        let a = graph(2, &[(0, 1, 0.5)]);
        let b = graph(2, &[(1, 0, 0.5)]);
        let u = union_graph(&[&a, &b]).unwrap();
        assert_eq!(u.edges().len(), 2);
        assert_eq!(union_graph(&[&a, &a]).unwrap(), a);
        assert_eq!(
            union_graph(&[&a, &graph(3, &[])]),
            Err(TopologyError::NodeCountMismatch(2, 3))
        );
    }

    #[test]
    fn schedule_examples() {
        let a = graph(2, &[(0, 1, 0.5), (1, 0, 0.5)]);
        let held = GraphSchedule::constant(a.clone());
        let rep = held.validate();
        assert!(rep.balanced_all && rep.jointly_connected);
        assert_eq!(rep.eta_steps, 1);

        let alternating = GraphSchedule::new(
            2,
            vec![
                ScheduleEntry {
                    dwell: 1,
                    graph: a.clone(),
                },
                ScheduleEntry {
                    dwell: 1,
                    graph: WeightedDigraph::empty(2),
                },
            ],
            ScheduleMode::Cyclic,
        )
        .unwrap();
        let rep = alternating.validate();
        assert!(rep.jointly_connected);
        assert_eq!(rep.eta_steps, 2);

        let oneway = GraphSchedule::constant(graph(2, &[(0, 1, 0.5)]));
        let rep = oneway.validate();
        assert!(!rep.balanced_all);
        assert_eq!(rep.unbalanced, vec![(0, 0), (0, 1)]);
    }

    #[test]
    fn graph_at_wraps() {
        let a = graph(2, &[(0, 1, 0.5), (1, 0, 0.5)]);
        let b = WeightedDigraph::empty(2);
        let s = GraphSchedule::new(
            5,
            vec![
                ScheduleEntry {
                    dwell: 2,
                    graph: a.clone(),
                },
                ScheduleEntry {
                    dwell: 3,
                    graph: b.clone(),
                },
            ],
            ScheduleMode::Cyclic,
        )
        .unwrap();
        assert_eq!(s.graph_at(0), &a);
        assert_eq!(s.graph_at(2), &b);
        assert_eq!(s.graph_at(5), &a);
        assert!(GraphSchedule::new(4, s.entries().to_vec(), ScheduleMode::Cyclic).is_err());
    }

    #[test]
    fn random_permutation_covers_each_entry_once_per_period() {
        let entries: Vec<ScheduleEntry> = (0..4)
            .map(|i| ScheduleEntry {
                dwell: i + 1,
                graph: graph(4, &[(i, (i + 1) % 4, 1.0)]),
            })
            .collect();
        let s =
            GraphSchedule::new(10, entries, ScheduleMode::RandomPermutation { seed: 7 }).unwrap();
        for period in 0..20 {
            let mut steps = [0usize; 4];
            for k in period * 10..(period + 1) * 10 {
                steps[s.entry_at(k)] += 1;
            }
            assert_eq!(steps, [1, 2, 3, 4]);
        }
        assert_eq!(s.validate().eta_steps, 10);
    }

    fn arb_graph(n: usize) -> impl Strategy<Value = WeightedDigraph> {
        proptest::collection::btree_map((0..n, 0..n), 0.01f64..2.0, 0..(n * n)).prop_map(move |m| {
            let edges = m
                .into_iter()
                .filter(|((a, b), _)| a != b)
                .map(|((from, to), weight)| Edge { from, to, weight })
                .collect();
            WeightedDigraph::new(n, edges, DEFAULT_WEIGHT_FLOOR).unwrap()
        })
    }

    fn edge_set(g: &WeightedDigraph) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = g.edges().iter().map(|e| (e.from, e.to)).collect();
        v.sort();
        v
    }

    proptest! {
        #[test]
        fn laplacian_rows_sum_to_zero(g in arb_graph(6)) {
            let l = g.laplacian();
            for i in 0..6 {
                let off: f64 = (0..6).filter(|&j| j != i).map(|j| l[(i, j)]).sum();
                prop_assert_eq!(l[(i, i)] + off, 0.0);
            }
        }

        #[test]
        fn balanced_graphs_have_zero_column_sums(g in arb_graph(5)) {
            let mut edges = g.edges().to_vec();
            edges.extend(g.edges().iter().map(|e| Edge { from: e.to, to: e.from, weight: e.weight }));
            let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            for e in edges {
                let w = sym.entry((e.from.min(e.to), e.from.max(e.to))).or_insert(e.weight);
                *w = w.max(e.weight);
            }
            let both: Vec<Edge> = sym
                .into_iter()
                .flat_map(|((a, b), w)| [Edge { from: a, to: b, weight: w }, Edge { from: b, to: a, weight: w }])
                .collect();
            let g = WeightedDigraph::new(5, both, DEFAULT_WEIGHT_FLOOR).unwrap();
            prop_assert!(g.is_balanced());
            let l = g.laplacian();
            for j in 0..5 {
                prop_assert!(l.column(j).sum().abs() <= 1e-12);
            }
        }

        #[test]
        fn union_is_associative_and_commutative(a in arb_graph(4), b in arb_graph(4), c in arb_graph(4)) {
            let ab = union_graph(&[&a, &b]).unwrap();
            let ba = union_graph(&[&b, &a]).unwrap();
            prop_assert_eq!(edge_set(&ab), edge_set(&ba));
            let left = union_graph(&[&ab, &c]).unwrap();
            let bc = union_graph(&[&b, &c]).unwrap();
            let right = union_graph(&[&a, &bc]).unwrap();
            prop_assert_eq!(edge_set(&left), edge_set(&right));
        }
    }
}
