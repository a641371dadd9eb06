//! The k best DAGs over all variables.
//!
//! Every DAG over `W` has a sink `s`; removing it leaves a DAG over `W \ {s}`
//! and the parents of `s` are a subset of `W \ {s}`. So the k best networks
//! over `W` with sink `s` are the k best sums
//! `value(i, j) = score(bestParents_s[W∖{s}][i]) + score(bestNets[W∖{s}][j])`,
//! found by a best-first walk over the `(i, j)` lattice from `(1, 1)`. The k
//! best over `W` are the k best of the per-sink candidates; a DAG with several
//! sinks shows up once per sink and is inserted only once.
//!
//! Queue entries store only how they were built (sink, parent rank,
//! sub-network rank). Graphs are rebuilt from those records when needed.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::Serialize;

use crate::bits::{self, VarSet};
use crate::error::{Error, Result};
use crate::exec::{Exec, MemoryBudget};
use crate::graph;
use crate::kbest_parents::ParentTable;

/// A DAG with its total log score and its rank in a k-best list.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoredNetwork {
    pub parents: Vec<VarSet>,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

impl ScoredNetwork {
    /// Sorts by score descending, then canonical graph order, and renumbers ranks.
    pub fn sort_and_rank(networks: &mut [ScoredNetwork]) {
        networks.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| graph::canonical_cmp(&a.parents, &b.parents))
        });
        for (i, net) in networks.iter_mut().enumerate() {
            net.rank = i + 1;
        }
    }
}

const NO_SINK: u8 = u8::MAX;

#[derive(Clone, Copy, Debug)]
struct NetEntry {
    score: f64,
    /// Sum of per-node keys; independent of construction order.
    hash: u64,
    parent_rank: u32,
    sub_rank: u32,
    sink: u8,
}

/// How a queue entry over `W` was built.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConstructionRecord {
    pub sink: usize,
    /// 0-based rank into `bestParents_sink[W \ {sink}]`.
    pub parent_rank: usize,
    /// 0-based rank into `bestNets[W \ {sink}]`.
    pub sub_rank: usize,
}

#[inline]
fn node_key(v: usize, parents: VarSet) -> u64 {
    let mut z = ((v as u64) << 32 | parents as u64) ^ 0x243f_6a88_85a3_08d3;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Read-only view of one `bestNets[W]`.
#[derive(Clone, Copy)]
pub struct NetQueue<'a> {
    subset: VarSet,
    entries: &'a [NetEntry],
}

impl NetQueue<'_> {
    pub fn subset(&self) -> VarSet {
        self.subset
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Log score of the `rank`-th (0-based) network.
    pub fn score(&self, rank: usize) -> f64 {
        self.entries[rank].score
    }

    /// `None` for the empty network over the empty set.
    pub fn record(&self, rank: usize) -> Option<ConstructionRecord> {
        let e = &self.entries[rank];
        (e.sink != NO_SINK).then_some(ConstructionRecord {
            sink: e.sink as usize,
            parent_rank: e.parent_rank as usize,
            sub_rank: e.sub_rank as usize,
        })
    }
}

/// Counters from one search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    /// Number of (subset, sink) pairs searched.
    pub subset_sink_iterations: u64,
    /// Lattice nodes popped, summed over all pairs.
    pub lattice_nodes_visited: u64,
    /// Largest number of lattice nodes popped for a single pair.
    pub max_lattice_nodes: u64,
    /// Candidates rejected because the same DAG was already queued.
    pub duplicates_suppressed: u64,
}

impl SearchStats {
    fn absorb(&mut self, other: &SearchStats) {
        self.subset_sink_iterations += other.subset_sink_iterations;
        self.lattice_nodes_visited += other.lattice_nodes_visited;
        self.max_lattice_nodes = self.max_lattice_nodes.max(other.max_lattice_nodes);
        self.duplicates_suppressed += other.duplicates_suppressed;
    }
}

/// A node of the `(i, j)` lattice; indices are 0-based.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeNode {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(PartialEq)]
struct Frontier(LatticeNode);

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .value
            .total_cmp(&other.0.value)
            .then_with(|| (other.0.i, other.0.j).cmp(&(self.0.i, self.0.j)))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Best-first enumeration of `value(i, j)` over a `rows × cols` grid where
/// `value` is non-increasing in both indices. Yields nodes in non-increasing
/// value order.
pub struct LatticeSearch<F> {
    rows: usize,
    cols: usize,
    value: F,
    heap: BinaryHeap<Frontier>,
    seen: HashSet<(u32, u32)>,
    popped: u64,
}

impl<F: Fn(usize, usize) -> f64> LatticeSearch<F> {
    pub fn new(rows: usize, cols: usize, value: F) -> Self {
        let mut search = LatticeSearch {
            rows,
            cols,
            value,
            heap: BinaryHeap::new(),
            seen: HashSet::new(),
            popped: 0,
        };
        search.push(0, 0);
        search
    }

    fn push(&mut self, i: usize, j: usize) {
        if i < self.rows && j < self.cols && self.seen.insert((i as u32, j as u32)) {
            let value = (self.value)(i, j);
            self.heap.push(Frontier(LatticeNode { i, j, value }));
        }
    }

    /// Nodes returned so far.
    pub fn visited(&self) -> u64 {
        self.popped
    }
}

impl<F: Fn(usize, usize) -> f64> Iterator for LatticeSearch<F> {
    type Item = LatticeNode;

    fn next(&mut self) -> Option<LatticeNode> {
        let Frontier(node) = self.heap.pop()?;
        self.popped += 1;
        self.push(node.i + 1, node.j);
        self.push(node.i, node.j + 1);
        Some(node)
    }
}

/// `value(i, j)` of the lattice for sink `sink` over `bestNets[W ∖ {sink}]`,
/// with 1-based ranks.
pub fn lattice_value(
    sink: usize,
    i: usize,
    j: usize,
    parents: &ParentTable,
    sub_networks: NetQueue<'_>,
) -> Result<f64> {
    if bits::contains(sub_networks.subset(), sink) {
        return Err(Error::contract(
            "sink must not be in the sub-network's variable set",
        ));
    }
    let queue = parents.queue(sink, sub_networks.subset());
    if i == 0 || j == 0 || i > queue.len() || j > sub_networks.len() {
        return Err(Error::contract(format!(
            "lattice index ({i}, {j}) outside {}×{}",
            queue.len(),
            sub_networks.len()
        )));
    }
    Ok(queue[i - 1].score + sub_networks.score(j - 1))
}

/// Candidate for `bestNets[W]`; greater means worse.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    entry: NetEntry,
}

impl Candidate {
    fn key(&self) -> (u64, u8, u32, u32) {
        (
            self.entry.hash,
            self.entry.sink,
            self.entry.parent_rank,
            self.entry.sub_rank,
        )
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .entry
            .score
            .total_cmp(&self.entry.score)
            .then_with(|| self.key().cmp(&other.key()))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All `bestNets[W]` queues from one run of the dynamic program.
pub struct NetTables {
    n: usize,
    k: usize,
    queues: Vec<Vec<NetEntry>>,
    stats: SearchStats,
}

/// Labeled DAG counts by Robinson's recurrence, saturating in `f64`.
pub fn dag_count(n: usize) -> f64 {
    let mut a = vec![1.0f64; n + 1];
    for m in 1..=n {
        let mut total = 0.0;
        for s in 1..=m {
            let sign = if s % 2 == 1 { 1.0 } else { -1.0 };
            total +=
                sign * bits::binomial(m, s) as f64 * 2f64.powi((s * (m - s)) as i32) * a[m - s];
        }
        a[m] = total;
    }
    a[n]
}

impl NetTables {
    pub fn estimate_bytes(n: usize, k: usize) -> u64 {
        let per_entry = std::mem::size_of::<NetEntry>() as u64;
        (0..=n)
            .map(|size| {
                let len = dag_count(size).min(k as f64) as u64;
                bits::binomial(n, size) * (len * per_entry + 24)
            })
            .sum()
    }

    pub fn build(
        parents: &ParentTable,
        k: usize,
        exec: Exec,
        budget: MemoryBudget,
    ) -> Result<Self> {
        let n = parents.n();
        if k == 0 {
            return Err(Error::contract("k must be at least 1"));
        }
        if parents.k() < k {
            return Err(Error::contract(format!(
                "parent table holds {} sets per queue but k = {k}",
                parents.k()
            )));
        }
        budget.check("network table", NetTables::estimate_bytes(n, k))?;

        let mut tables = NetTables {
            n,
            k,
            queues: vec![Vec::new(); 1 << n],
            stats: SearchStats::default(),
        };
        tables.queues[0] = vec![NetEntry {
            score: 0.0,
            hash: 0,
            parent_rank: 0,
            sub_rank: 0,
            sink: NO_SINK,
        }];

        for layer in bits::by_cardinality(n).into_iter().skip(1) {
            let results = exec.map(&layer, |&w| tables.best_over(parents, w));
            for (&w, (queue, stats)) in layer.iter().zip(results) {
                tables.queues[w as usize] = queue;
                tables.stats.absorb(&stats);
            }
        }
        Ok(tables)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn stats(&self) -> SearchStats {
        self.stats
    }

    pub fn queue(&self, subset: VarSet) -> NetQueue<'_> {
        NetQueue {
            subset,
            entries: &self.queues[subset as usize],
        }
    }

    /// Rebuilds the `rank`-th (0-based) network over `subset` into `out`
    /// (length n; entries outside `subset` are zeroed). Returns per-node local scores
    /// through `node_scores` when given.
    pub fn materialize_into(
        &self,
        parents: &ParentTable,
        subset: VarSet,
        rank: usize,
        out: &mut [VarSet],
        mut node_scores: Option<&mut [f64]>,
    ) {
        out.iter_mut().for_each(|p| *p = 0);
        let mut w = subset;
        let mut r = rank;
        while w != 0 {
            let e = self.queues[w as usize][r];
            let s = e.sink as usize;
            let rest = w & !bits::singleton(s);
            let pe = parents.queue(s, rest)[e.parent_rank as usize];
            out[s] = pe.mask;
            if let Some(ns) = node_scores.as_deref_mut() {
                ns[s] = pe.score;
            }
            w = rest;
            r = e.sub_rank as usize;
        }
    }

    pub fn materialize(&self, parents: &ParentTable, subset: VarSet, rank: usize) -> Vec<VarSet> {
        let mut out = vec![0; self.n];
        self.materialize_into(parents, subset, rank, &mut out, None);
        out
    }

    fn materialize_candidate(
        &self,
        parents: &ParentTable,
        w: VarSet,
        e: &NetEntry,
        out: &mut [VarSet],
    ) {
        let s = e.sink as usize;
        let rest = w & !bits::singleton(s);
        self.materialize_into(parents, rest, e.sub_rank as usize, out, None);
        out[s] = parents.queue(s, rest)[e.parent_rank as usize].mask;
    }

    /// Computes `bestNets[w]` from the finished smaller queues.
    fn best_over(&self, parents: &ParentTable, w: VarSet) -> (Vec<NetEntry>, SearchStats) {
        let k = self.k;
        let mut stats = SearchStats::default();
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let mut members: HashMap<u64, Vec<NetEntry>> = HashMap::new();
        let mut scratch_a = vec![0; self.n];
        let mut scratch_b = vec![0; self.n];

        for s in bits::members(w) {
            let rest = w & !bits::singleton(s);
            let pq = parents.queue(s, rest);
            let sub = &self.queues[rest as usize];
            let mut search = LatticeSearch::new(pq.len().min(k), sub.len(), |i, j| {
                pq[i].score + sub[j].score
            });

            for node in search.by_ref() {
                let worst = (heap.len() >= k).then(|| heap.peek().unwrap().entry);
                if let Some(worst) = worst {
                    if node.value < worst.score {
                        break;
                    }
                }
                let entry = NetEntry {
                    score: node.value,
                    hash: sub[node.j].hash.wrapping_add(node_key(s, pq[node.i].mask)),
                    parent_rank: node.i as u32,
                    sub_rank: node.j as u32,
                    sink: s as u8,
                };
                let cand = Candidate { entry };
                if let Some(worst) = worst {
                    if cand >= (Candidate { entry: worst }) {
                        continue;
                    }
                }
                if let Some(same_hash) = members.get(&entry.hash) {
                    self.materialize_candidate(parents, w, &entry, &mut scratch_a);
                    let duplicate = same_hash.iter().any(|m| {
                        self.materialize_candidate(parents, w, m, &mut scratch_b);
                        scratch_a == scratch_b
                    });
                    if duplicate {
                        stats.duplicates_suppressed += 1;
                        continue;
                    }
                }
                heap.push(cand);
                members.entry(entry.hash).or_default().push(entry);
                if heap.len() > k {
                    let evicted = heap.pop().unwrap().entry;
                    let bucket = members.get_mut(&evicted.hash).unwrap();
                    let pos = bucket
                        .iter()
                        .position(|m| {
                            (m.sink, m.parent_rank, m.sub_rank)
                                == (evicted.sink, evicted.parent_rank, evicted.sub_rank)
                        })
                        .unwrap();
                    bucket.swap_remove(pos);
                    if bucket.is_empty() {
                        members.remove(&evicted.hash);
                    }
                }
            }
            stats.subset_sink_iterations += 1;
            stats.lattice_nodes_visited += search.visited();
            stats.max_lattice_nodes = stats.max_lattice_nodes.max(search.visited());
        }

        let queue = heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| c.entry)
            .collect();
        (queue, stats)
    }

    /// The final list over all variables, rescored node by node and ranked.
    pub fn networks(&self, parents: &ParentTable) -> Vec<ScoredNetwork> {
        let full = bits::full(self.n);
        let mut node_scores = vec![0.0; self.n];
        let mut out: Vec<ScoredNetwork> = (0..self.queues[full as usize].len())
            .map(|rank| {
                let mut g = vec![0; self.n];
                self.materialize_into(parents, full, rank, &mut g, Some(&mut node_scores));
                ScoredNetwork {
                    parents: g,
                    score: node_scores.iter().sum(),
                    rank: 0,
                }
            })
            .collect();
        ScoredNetwork::sort_and_rank(&mut out);
        out
    }
}

/// Result of a k-best search.
#[derive(Clone, Debug)]
pub struct KBestSearch {
    pub networks: Vec<ScoredNetwork>,
    pub stats: SearchStats,
}

/// The `min(k, #DAGs)` best networks, best first.
pub fn kbest_networks(
    parents: &ParentTable,
    k: usize,
    exec: Exec,
    budget: MemoryBudget,
) -> Result<KBestSearch> {
    let tables = NetTables::build(parents, k, exec, budget)?;
    let networks = tables.networks(parents);
    debug_assert!(networks.iter().all(|g| graph::is_acyclic(&g.parents)));
    Ok(KBestSearch {
        networks,
        stats: tables.stats(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::scoring::{all_local_scores, LocalScoreTable};

    fn setup(n: usize, rows: usize, k: usize) -> (LocalScoreTable, ParentTable) {
        let data: Vec<Vec<usize>> = (0..rows)
            .map(|r| (0..n).map(|c| ((r * 31 + c * 7) ^ (r >> c)) % 2).collect())
            .collect();
        let d = Dataset::from_codes(
            (0..n).map(|i| format!("x{i}")).collect(),
            &vec![2; n],
            &data,
        )
        .unwrap();
        let t = all_local_scores(&d, 1.0, None, Exec::Sequential, MemoryBudget::default()).unwrap();
        let pt = ParentTable::build(&t, k, Exec::Sequential, MemoryBudget::default()).unwrap();
        (t, pt)
    }

    #[test]
    fn robinson_counts() {
        let expected = [1.0, 1.0, 3.0, 25.0, 543.0, 29281.0, 3781503.0];
        for (n, &a) in expected.iter().enumerate() {
            assert_eq!(dag_count(n), a);
        }
    }

    #[test]
    fn lattice_yields_sorted_values() {
        let rows = [5.0, 3.0, 2.5];
        let cols = [1.0, 0.5, -4.0];
        let got: Vec<f64> = LatticeSearch::new(3, 3, |i, j| rows[i] + cols[j])
            .map(|n| n.value)
            .collect();
        let mut all: Vec<f64> = rows
            .iter()
            .flat_map(|r| cols.iter().map(move |c| r + c))
            .collect();
        all.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(got, all);
    }

    #[test]
    fn lattice_top_four_of_grid() {
        let rows = [-1.0, -1.2, -5.0];
        let cols = [-2.0, -2.1, -2.15];
        let top: Vec<(usize, usize)> = LatticeSearch::new(3, 3, |i, j| rows[i] + cols[j])
            .take(4)
            .map(|n| (n.i, n.j))
            .collect();
        assert_eq!(top, vec![(0, 0), (0, 1), (0, 2), (1, 0)]);
    }

    #[test]
    fn single_variable() {
        let (t, pt) = setup(1, 6, 5);
        let res = kbest_networks(&pt, 5, Exec::Sequential, MemoryBudget::default()).unwrap();
        assert_eq!(res.networks.len(), 1);
        assert_eq!(res.networks[0].parents, vec![0]);
        assert_eq!(res.networks[0].score, t.get(0, 0));
    }

    #[test]
    fn two_variables_all_three_dags() {
        let (t, pt) = setup(2, 9, 3);
        let res = kbest_networks(&pt, 3, Exec::Sequential, MemoryBudget::default()).unwrap();
        assert_eq!(res.networks.len(), 3);
        let mut graphs: Vec<_> = res.networks.iter().map(|g| g.parents.clone()).collect();
        graphs.sort();
        assert_eq!(graphs, vec![vec![0, 0], vec![0, 1], vec![2, 0]]);
        let xy = t.network_score(&[0, 1]).unwrap();
        let yx = t.network_score(&[2, 0]).unwrap();
        assert!((xy - yx).abs() < 1e-9);
        assert_eq!(res.stats.subset_sink_iterations, 4);
    }

    #[test]
    fn lattice_value_definition() {
        let (t, pt) = setup(3, 10, 4);
        let tables = NetTables::build(&pt, 4, Exec::Sequential, MemoryBudget::default()).unwrap();
        let sub = tables.queue(0b011);
        let v11 = lattice_value(2, 1, 1, &pt, sub).unwrap();
        assert_eq!(v11, pt.queue(2, 0b011)[0].score + sub.score(0));
        assert!(lattice_value(2, 2, 1, &pt, sub).unwrap() <= v11);
        assert!(lattice_value(2, 1, 2, &pt, sub).unwrap() <= v11);
        assert!(lattice_value(2, 0, 1, &pt, sub).is_err());
        assert!(lattice_value(2, 1, 99, &pt, sub).is_err());
        assert!(lattice_value(1, 1, 1, &pt, sub).is_err());
        let base = lattice_value(0, 1, 1, &pt, tables.queue(0)).unwrap();
        assert_eq!(base, t.get(0, 0));
    }

    #[test]
    fn k_one_matches_optimal_dp() {
        let (t, pt) = setup(4, 30, 1);
        let res = kbest_networks(&pt, 1, Exec::Sequential, MemoryBudget::default()).unwrap();
        // classic optimal-network recursion: best[W] = max_s best[W\s] + bestParent_s(W\s)
        let n = 4;
        let mut best = vec![f64::NEG_INFINITY; 1 << n];
        best[0] = 0.0;
        for w in 1..(1u32 << n) {
            for s in bits::members(w) {
                let rest = w & !(1 << s);
                let bp = bits::subsets(rest)
                    .map(|p| t.get(s, p))
                    .fold(f64::NEG_INFINITY, f64::max);
                best[w as usize] = best[w as usize].max(best[rest as usize] + bp);
            }
        }
        assert!((res.networks[0].score - best[15]).abs() < 1e-9);
    }

    #[test]
    fn sinks_have_no_children_within_subset() {
        let (_, pt) = setup(4, 20, 6);
        let tables = NetTables::build(&pt, 6, Exec::Sequential, MemoryBudget::default()).unwrap();
        for w in 1..16u32 {
            let q = tables.queue(w);
            for r in 0..q.len() {
                let rec = q.record(r).unwrap();
                let g = tables.materialize(&pt, w, r);
                assert!(bits::members(w).all(|u| !bits::contains(g[u], rec.sink)));
                assert!(bits::members(!w & 0xf).all(|u| g[u] == 0));
            }
        }
    }

    #[test]
    fn work_counters() {
        let (_, pt) = setup(5, 25, 7);
        let res = kbest_networks(&pt, 7, Exec::Sequential, MemoryBudget::default()).unwrap();
        assert_eq!(res.stats.subset_sink_iterations, 5 * (1 << 4));
        assert!(res.stats.max_lattice_nodes <= 49);
    }

    #[test]
    fn parallel_matches_sequential() {
        let (_, pt) = setup(5, 40, 12);
        let a = kbest_networks(&pt, 12, Exec::Sequential, MemoryBudget::default()).unwrap();
        let b = kbest_networks(&pt, 12, Exec::Parallel, MemoryBudget::default()).unwrap();
        assert_eq!(a.networks, b.networks);
        assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn rejects_undersized_parent_table() {
        let (_, pt) = setup(3, 10, 2);
        assert!(matches!(
            kbest_networks(&pt, 3, Exec::Sequential, MemoryBudget::default()),
            Err(Error::Contract(_))
        ));
        assert!(kbest_networks(&pt, 2, Exec::Sequential, MemoryBudget(10))
            .unwrap_err()
            .is_refusal());
    }
}
