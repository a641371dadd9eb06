//! Brute-force ground truth over every labeled DAG, for up to six variables.
//!
//! DAGs are generated by peeling sinks: a DAG over `W` is its largest-index
//! sink `s`, a DAG over `W \ {s}` and a parent set for `s`. Requiring the
//! parent set to cover every sink of the smaller DAG above `s` makes `s` the
//! largest sink of the result, so each DAG is produced exactly once without a
//! seen-set.

use std::collections::BinaryHeap;

use crate::bits::{self, VarSet};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::exec::{Exec, MemoryBudget};
use crate::graph::{self, Feature};
use crate::kbest_dags::{dag_count, ScoredNetwork};
use crate::scoring::{self, LocalScoreTable};

pub const MAX_ORACLE_VARS: usize = 6;

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::contract("need at least one variable"));
    }
    if n > MAX_ORACLE_VARS {
        return Err(Error::Refused {
            what: format!(
                "exhaustive enumeration of {} DAGs on {n} nodes",
                dag_count(n)
            ),
            required: dag_count(n) as u64,
            limit: dag_count(MAX_ORACLE_VARS) as u64,
        });
    }
    Ok(())
}

fn extend(w: VarSet, parents: &mut [VarSet], visit: &mut dyn FnMut(&mut [VarSet])) {
    if w == 0 {
        visit(parents);
        return;
    }
    for s in bits::members(w) {
        extend_with_sink(w, s, parents, visit);
    }
}

fn extend_with_sink(
    w: VarSet,
    s: usize,
    parents: &mut [VarSet],
    visit: &mut dyn FnMut(&mut [VarSet]),
) {
    let rest = w & !bits::singleton(s);
    extend(rest, parents, &mut |p: &mut [VarSet]| {
        let has_child = bits::members(rest).fold(0, |acc, u| acc | p[u]);
        let sinks = rest & !has_child;
        let above = sinks & !((2u32 << s).wrapping_sub(1));
        for extra in bits::subsets(rest & !above) {
            p[s] = above | extra;
            visit(p);
        }
        p[s] = 0;
    });
}

/// Calls `visit` once for every labeled DAG on `n` nodes, in a fixed order.
pub fn enumerate_dags<F: FnMut(&[VarSet])>(n: usize, mut visit: F) -> Result<()> {
    check_size(n)?;
    let mut parents = vec![0; n];
    extend(bits::full(n), &mut parents, &mut |p| visit(p));
    Ok(())
}

/// Enumerates the DAGs whose largest sink is `sink`; the shards over all sinks
/// partition the full enumeration.
pub fn enumerate_shard<F: FnMut(&[VarSet])>(n: usize, sink: usize, mut visit: F) -> Result<()> {
    check_size(n)?;
    if sink >= n {
        return Err(Error::contract("sink out of range"));
    }
    let mut parents = vec![0; n];
    extend_with_sink(bits::full(n), sink, &mut parents, &mut |p| visit(p));
    Ok(())
}

/// Streaming `ln Σ exp(x)`.
#[derive(Clone, Copy, Debug)]
struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    fn new() -> Self {
        LogSum {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    fn merge(&mut self, other: LogSum) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max > self.max {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        } else {
            self.sum += other.sum * (other.max - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Exact posteriors over the full DAG space of a scored dataset.
pub struct Oracle<'a> {
    table: &'a LocalScoreTable,
    log_evidence: f64,
    exec: Exec,
}

impl<'a> Oracle<'a> {
    pub fn new(table: &'a LocalScoreTable, exec: Exec) -> Result<Self> {
        let n = table.n();
        check_size(n)?;
        let shards = exec.map_range(n, |s| {
            let mut acc = LogSum::new();
            enumerate_shard(n, s, |g| acc.add(table.network_score_unchecked(g))).map(|_| acc)
        });
        let mut total = LogSum::new();
        for shard in shards {
            total.merge(shard?);
        }
        Ok(Oracle {
            table,
            log_evidence: total.value(),
            exec,
        })
    }

    /// `ln P(D)` up to the shared structure-prior constant.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    pub fn table(&self) -> &LocalScoreTable {
        self.table
    }

    /// Exact `P(G|D)`.
    pub fn posterior(&self, parents: &[VarSet]) -> Result<f64> {
        Ok((self.table.network_score(parents)? - self.log_evidence).exp())
    }

    /// Exact posterior of any structural predicate.
    pub fn posterior_of<F: Fn(&[VarSet]) -> bool + Sync>(&self, holds: F) -> Result<f64> {
        let n = self.table.n();
        let shards = self.exec.map_range(n, |s| {
            let mut acc = LogSum::new();
            enumerate_shard(n, s, |g| {
                if holds(g) {
                    acc.add(self.table.network_score_unchecked(g));
                }
            })
            .map(|_| acc)
        });
        let mut total = LogSum::new();
        for shard in shards {
            total.merge(shard?);
        }
        Ok((total.value() - self.log_evidence).exp().min(1.0))
    }

    pub fn feature_posterior(&self, feature: &Feature) -> Result<f64> {
        feature.validate(self.table.n())?;
        self.posterior_of(|g| feature.holds(g))
    }

    /// Every DAG with its score, ranked like the k-best search ranks its output.
    pub fn all_networks(&self) -> Result<Vec<ScoredNetwork>> {
        let mut out = Vec::with_capacity(dag_count(self.table.n()) as usize);
        enumerate_dags(self.table.n(), |g| {
            out.push(ScoredNetwork {
                parents: g.to_vec(),
                score: self.table.network_score_unchecked(g),
                rank: 0,
            })
        })?;
        ScoredNetwork::sort_and_rank(&mut out);
        Ok(out)
    }

    /// The `k` best DAGs by exhaustive scoring.
    pub fn brute_topk(&self, k: usize) -> Result<Vec<ScoredNetwork>> {
        if k == 0 {
            return Err(Error::contract("k must be at least 1"));
        }
        let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
        enumerate_dags(self.table.n(), |g| {
            let cand = Ranked(ScoredNetwork {
                parents: g.to_vec(),
                score: self.table.network_score_unchecked(g),
                rank: 0,
            });
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().unwrap() {
                heap.pop();
                heap.push(cand);
            }
        })?;
        let mut out: Vec<ScoredNetwork> = heap.into_iter().map(|r| r.0).collect();
        ScoredNetwork::sort_and_rank(&mut out);
        Ok(out)
    }
}

/// Ordering where greater means worse rank.
struct Ranked(ScoredNetwork);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .0
            .score
            .total_cmp(&self.0.score)
            .then_with(|| graph::canonical_cmp(&self.0.parents, &other.0.parents))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// `ln P(D)` for a dataset, scoring every DAG.
pub fn exact_log_evidence(data: &Dataset, ess: f64) -> Result<f64> {
    check_size(data.n())?;
    let table =
        scoring::all_local_scores(data, ess, None, Exec::Sequential, MemoryBudget::UNLIMITED)?;
    Ok(Oracle::new(&table, Exec::Sequential)?.log_evidence())
}

/// Exact `P(f|D)` for a dataset.
pub fn exact_feature_posterior(data: &Dataset, ess: f64, feature: &Feature) -> Result<f64> {
    check_size(data.n())?;
    let table =
        scoring::all_local_scores(data, ess, None, Exec::Sequential, MemoryBudget::UNLIMITED)?;
    Oracle::new(&table, Exec::Sequential)?.feature_posterior(feature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn counts_match_recurrence() {
        for n in 1..=5 {
            let mut count = 0u64;
            let mut seen = HashSet::new();
            enumerate_dags(n, |g| {
                count += 1;
                assert!(graph::is_acyclic(g));
                seen.insert(g.to_vec());
            })
            .unwrap();
            assert_eq!(count as f64, dag_count(n), "n = {n}");
            assert_eq!(seen.len() as u64, count);
        }
    }

    #[test]
    fn six_nodes_count() {
        let mut count = 0u64;
        enumerate_dags(6, |_| count += 1).unwrap();
        assert_eq!(count, 3_781_503);
    }

    #[test]
    fn shards_partition() {
        let total: u64 = (0..4)
            .map(|s| {
                let mut c = 0u64;
                enumerate_shard(4, s, |_| c += 1).unwrap();
                c
            })
            .sum();
        assert_eq!(total, 543);
    }

    #[test]
    fn refuses_seven_nodes() {
        let err = enumerate_dags(7, |_| {}).unwrap_err();
        assert!(err.is_refusal());
        assert!(err.to_string().contains("1138779265"));
    }

    #[test]
    fn single_binary_variable_evidence() {
        let d = Dataset::from_codes(vec!["x".into()], &[2], &[vec![0], vec![1]]).unwrap();
        let z = exact_log_evidence(&d, 1.0).unwrap();
        assert!((z + 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logsum_merge_is_consistent() {
        let xs = [-3.0, -1.0, -700.0, -2.5, -1.0];
        let mut a = LogSum::new();
        xs.iter().for_each(|&x| a.add(x));
        let mut b = LogSum::new();
        let mut c = LogSum::new();
        xs[..2].iter().for_each(|&x| b.add(x));
        xs[2..].iter().for_each(|&x| c.add(x));
        b.merge(c);
        assert!((a.value() - b.value()).abs() < 1e-13);
        assert!((a.value() - crate::posterior::log_sum_exp(xs)).abs() < 1e-13);
    }
}
