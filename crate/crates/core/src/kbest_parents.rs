//! The k best parent sets of every variable within every candidate set.
//!
//! For candidate set `C`, the k best subsets are the k best among `C` itself
//! and the k best of each `C \ {c}`. Candidate sets are processed layer by
//! layer in increasing cardinality, so every smaller queue is final before it
//! is merged.

use std::cmp::Ordering;

use serde::Serialize;

use crate::bits::{self, VarSet};
use crate::error::{Error, Result};
use crate::exec::{Exec, MemoryBudget};
use crate::scoring::LocalScoreTable;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParentEntry {
    pub score: f64,
    pub mask: VarSet,
}

impl ParentEntry {
    /// Queue order: higher score first, then smaller mask.
    #[inline]
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.mask.cmp(&other.mask))
    }
}

/// A bounded, sorted, duplicate-free list of parent sets.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParentQueue {
    entries: Vec<ParentEntry>,
    capacity: usize,
}

impl ParentQueue {
    pub fn new(capacity: usize) -> Self {
        ParentQueue {
            entries: Vec::new(),
            capacity,
        }
    }

    /// Sorts, deduplicates and truncates arbitrary entries.
    pub fn from_entries(mut entries: Vec<ParentEntry>, capacity: usize) -> Self {
        entries.sort_by(ParentEntry::rank_cmp);
        entries.dedup_by_key(|e| e.mask);
        entries.truncate(capacity);
        ParentQueue { entries, capacity }
    }

    pub fn entries(&self) -> &[ParentEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Inserts `entry` if the queue has room or it outranks the current minimum.
    /// The caller guarantees `entry.mask` is not already queued.
    pub fn offer(&mut self, entry: ParentEntry) -> bool {
        offer(&mut self.entries, entry, self.capacity)
    }
}

fn offer(queue: &mut Vec<ParentEntry>, entry: ParentEntry, k: usize) -> bool {
    if !entry.score.is_finite() || k == 0 {
        return false;
    }
    if queue.len() >= k {
        match queue.last() {
            Some(last) if entry.rank_cmp(last) == Ordering::Less => {
                queue.pop();
            }
            _ => return false,
        }
    }
    let pos = queue.partition_point(|e| e.rank_cmp(&entry) == Ordering::Less);
    queue.insert(pos, entry);
    true
}

/// Two-pointer merge of sorted queues keeping the top `k`, with shared masks kept once.
pub fn merge_queues(a: &ParentQueue, b: &ParentQueue, k: usize) -> ParentQueue {
    let mut out = Vec::with_capacity(k.min(a.len() + b.len()));
    merge_into(&a.entries, &b.entries, k, &mut out);
    ParentQueue {
        entries: out,
        capacity: k,
    }
}

fn merge_into(a: &[ParentEntry], b: &[ParentEntry], k: usize, out: &mut Vec<ParentEntry>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while out.len() < k && (i < a.len() || j < b.len()) {
        let next = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => match x.rank_cmp(y) {
                Ordering::Less => {
                    i += 1;
                    *x
                }
                Ordering::Greater => {
                    j += 1;
                    *y
                }
                Ordering::Equal => {
                    i += 1;
                    j += 1;
                    *x
                }
            },
            (Some(x), None) => {
                i += 1;
                *x
            }
            (None, Some(y)) => {
                j += 1;
                *y
            }
            (None, None) => unreachable!(),
        };
        out.push(next);
    }
}

/// How many parent sets a candidate set of size `size` admits under `cap`.
fn admissible_count(size: usize, cap: Option<usize>) -> u64 {
    let top = cap.map_or(size, |c| c.min(size));
    (0..=top).map(|j| bits::binomial(size, j)).sum()
}

/// All queues for one variable, stored contiguously.
#[derive(Clone, Debug)]
pub struct VarParents {
    var: usize,
    /// Indexed by the candidate set compressed over `V \ {var}`; one extra end sentinel.
    offsets: Vec<usize>,
    entries: Vec<ParentEntry>,
    merges: u64,
}

impl VarParents {
    pub fn var(&self) -> usize {
        self.var
    }

    #[inline]
    pub fn queue_at(&self, compressed: usize) -> &[ParentEntry] {
        &self.entries[self.offsets[compressed]..self.offsets[compressed + 1]]
    }

    /// k best parent sets drawn from `candidates`, a mask over all variables.
    pub fn queue(&self, candidates: VarSet) -> &[ParentEntry] {
        self.queue_at(bits::compress(candidates, self.var))
    }

    /// Number of pairwise merges performed while building.
    pub fn merge_count(&self) -> u64 {
        self.merges
    }
}

/// Runs the layered dynamic program for one variable.
pub fn best_parents(table: &LocalScoreTable, var: usize, k: usize) -> Result<VarParents> {
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    if var >= table.n() {
        return Err(Error::contract(format!("variable {var} out of range")));
    }
    let m = table.n() - 1;
    let cells = 1usize << m;
    let cap = table.max_parents();
    let scores = table.variable_scores(var);

    let mut offsets = Vec::with_capacity(cells + 1);
    let mut total = 0usize;
    for idx in 0..cells {
        offsets.push(total);
        total += admissible_count(bits::len(idx as VarSet), cap).min(k as u64) as usize;
    }
    offsets.push(total);

    let mut entries = vec![
        ParentEntry {
            score: f64::NEG_INFINITY,
            mask: 0,
        };
        total
    ];
    let mut acc = Vec::with_capacity(k);
    let mut scratch = Vec::with_capacity(k);
    let mut merges = 0u64;

    for layer in bits::by_cardinality(m) {
        for set in layer {
            acc.clear();
            let idx = set as usize;
            for c in bits::members(set) {
                let sub = (set & !bits::singleton(c)) as usize;
                let sub_queue = &entries[offsets[sub]..offsets[sub + 1]];
                merge_into(&acc, sub_queue, k, &mut scratch);
                std::mem::swap(&mut acc, &mut scratch);
                merges += 1;
            }
            offer(
                &mut acc,
                ParentEntry {
                    score: scores[idx],
                    mask: bits::expand(idx, var),
                },
                k,
            );
            let slot = &mut entries[offsets[idx]..offsets[idx + 1]];
            debug_assert_eq!(slot.len(), acc.len());
            slot.copy_from_slice(&acc);
        }
    }

    Ok(VarParents {
        var,
        offsets,
        entries,
        merges,
    })
}

/// k best parent sets for every (variable, candidate set).
#[derive(Clone, Debug)]
pub struct ParentTable {
    k: usize,
    vars: Vec<VarParents>,
}

impl ParentTable {
    /// Bytes needed for `n` variables at capacity `k`, uncapped in-degree.
    pub fn estimate_bytes(n: usize, k: usize, cap: Option<usize>) -> u64 {
        if n == 0 {
            return 0;
        }
        let m = n - 1;
        let per_var: u64 = (0..=m)
            .map(|c| {
                let queue = admissible_count(c, cap).min(k as u64);
                bits::binomial(m, c) * (queue * std::mem::size_of::<ParentEntry>() as u64 + 8)
            })
            .sum();
        per_var * n as u64
    }

    pub fn build(
        table: &LocalScoreTable,
        k: usize,
        exec: Exec,
        budget: MemoryBudget,
    ) -> Result<Self> {
        budget.check(
            "parent set table",
            ParentTable::estimate_bytes(table.n(), k, table.max_parents()),
        )?;
        let vars = exec
            .map_range(table.n(), |v| best_parents(table, v, k))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(ParentTable { k, vars })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.vars.len()
    }

    pub fn var(&self, v: usize) -> &VarParents {
        &self.vars[v]
    }

    #[inline]
    pub fn queue(&self, v: usize, candidates: VarSet) -> &[ParentEntry] {
        self.vars[v].queue(candidates)
    }

    /// One queue as JSON, with parent sets listed by variable index.
    pub fn queue_json(&self, v: usize, candidates: VarSet) -> serde_json::Value {
        let entries: Vec<_> = self
            .queue(v, candidates)
            .iter()
            .map(|e| {
                serde_json::json!({
                    "score": e.score,
                    "parents": bits::members(e.mask).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({
            "variable": v,
            "candidates": bits::members(candidates).collect::<Vec<_>>(),
            "k": self.k,
            "entries": entries,
        })
    }
}
