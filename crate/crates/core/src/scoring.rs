//! BDeu local scores and decomposable network scores.
//!
//! For child `i` with parent set `Pa` and `q = Π_{p∈Pa} r_p` parent
//! configurations, the log local score is
//!
//! ```text
//! Σ_j [lnΓ(α/q) − lnΓ(α/q + N_ij)] + Σ_jk [lnΓ(α/(r_i q) + N_ijk) − lnΓ(α/(r_i q))]
//! ```
//!
//! with `α` the equivalent sample size. Configurations that never occur
//! contribute exactly zero, so only observed ones are visited. The uniform
//! structure prior is a shared constant and is left out.

use std::io::{Read, Write};

use statrs::function::gamma::ln_gamma;

use crate::bits::{self, VarSet};
use crate::dataset::{ContingencyTable, Dataset};
use crate::error::{Error, Result};
use crate::exec::{Exec, MemoryBudget};
use crate::graph;

/// `lnΓ(alpha + count) − lnΓ(alpha)`.
#[inline]
fn ln_rising(alpha: f64, count: u32) -> f64 {
    match count {
        0 => 0.0,
        1..=8 => {
            let mut prod = alpha;
            for t in 1..count {
                prod *= alpha + t as f64;
            }
            prod.ln()
        }
        _ => ln_gamma(alpha + count as f64) - ln_gamma(alpha),
    }
}

fn parent_configurations(data: &Dataset, parents: VarSet) -> f64 {
    bits::members(parents)
        .map(|p| data.arity(p) as f64)
        .product()
}

/// BDeu log marginal likelihood of `child`'s column given `parents`.
pub fn local_score(data: &Dataset, child: usize, parents: VarSet, ess: f64) -> Result<f64> {
    data.check_family(child, parents)?;
    check_ess(ess)?;
    Ok(local_score_unchecked(data, child, parents, ess))
}

fn local_score_unchecked(data: &Dataset, child: usize, parents: VarSet, ess: f64) -> f64 {
    let q = parent_configurations(data, parents);
    let r = data.arity(child) as f64;
    let alpha_j = ess / q;
    let alpha_jk = ess / (q * r);
    let mut score = 0.0;
    data.for_each_config(child, parents, |counts, _| {
        let total: u32 = counts.iter().sum();
        score -= ln_rising(alpha_j, total);
        for &c in counts {
            score += ln_rising(alpha_jk, c);
        }
    });
    score
}

/// The same score computed from an explicit contingency table.
pub fn score_from_counts(table: &ContingencyTable, q: f64, ess: f64) -> f64 {
    let r = table.child_arity as f64;
    let alpha_j = ess / q;
    let alpha_jk = ess / (q * r);
    table
        .configs
        .iter()
        .map(|cfg| {
            let cells: f64 = cfg
                .counts
                .iter()
                .map(|&c| ln_gamma(alpha_jk + c as f64) - ln_gamma(alpha_jk))
                .sum();
            ln_gamma(alpha_j) - ln_gamma(alpha_j + cfg.total as f64) + cells
        })
        .sum()
}

fn check_ess(ess: f64) -> Result<()> {
    if ess.is_finite() && ess > 0.0 {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "equivalent sample size must be positive, got {ess}"
        )))
    }
}

/// Log local scores for every (variable, parent set) pair.
///
/// Variable `i`'s scores are indexed by parent sets over `V \ {i}`, compressed
/// to `0..2^(n-1)` with [`bits::compress`]. Parent sets above the in-degree cap
/// hold `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalScoreTable {
    n: usize,
    ess: f64,
    max_parents: Option<usize>,
    scores: Vec<Vec<f64>>,
}

impl LocalScoreTable {
    pub fn estimate_bytes(n: usize) -> u64 {
        (n as u64) << n.saturating_sub(1) << 3
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ess(&self) -> f64 {
        self.ess
    }

    pub fn max_parents(&self) -> Option<usize> {
        self.max_parents
    }

    /// Total number of stored (variable, parent set) entries.
    pub fn len(&self) -> usize {
        self.scores.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Score of `var` with parent set `parents` (a mask over all variables).
    #[inline]
    pub fn get(&self, var: usize, parents: VarSet) -> f64 {
        self.scores[var][bits::compress(parents, var)]
    }

    pub fn admissible(&self, parents: VarSet) -> bool {
        self.max_parents.is_none_or(|cap| bits::len(parents) <= cap)
    }

    /// Scores for `var`, indexed by compressed parent set.
    pub fn variable_scores(&self, var: usize) -> &[f64] {
        &self.scores[var]
    }

    /// Sum of local scores of a DAG given as one parent set per node.
    pub fn network_score(&self, parents: &[VarSet]) -> Result<f64> {
        if parents.len() != self.n {
            return Err(Error::contract(format!(
                "graph has {} nodes, table has {}",
                parents.len(),
                self.n
            )));
        }
        for (v, &pa) in parents.iter().enumerate() {
            if bits::contains(pa, v) || pa >> self.n != 0 {
                return Err(Error::contract(format!("invalid parent set for node {v}")));
            }
            if !self.admissible(pa) {
                return Err(Error::contract(format!(
                    "node {v} has {} parents, above the cap",
                    bits::len(pa)
                )));
            }
        }
        if !graph::is_acyclic(parents) {
            return Err(Error::contract("graph is cyclic"));
        }
        Ok(self.network_score_unchecked(parents))
    }

    #[inline]
    pub(crate) fn network_score_unchecked(&self, parents: &[VarSet]) -> f64 {
        parents
            .iter()
            .enumerate()
            .map(|(v, &pa)| self.get(v, pa))
            .sum()
    }

    pub fn write_cache<W: Write>(&self, mut w: W, data_hash: &[u8; 32]) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&self.ess.to_le_bytes())?;
        let cap = self.max_parents.map(|c| c as u32).unwrap_or(u32::MAX);
        w.write_all(&cap.to_le_bytes())?;
        w.write_all(data_hash)?;
        for var in &self.scores {
            for s in var {
                w.write_all(&s.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a cache written by [`write_cache`](Self::write_cache). Fails unless the
    /// header matches the requested dataset hash and parameters exactly.
    pub fn read_cache<R: Read>(
        mut r: R,
        data_hash: &[u8; 32],
        ess: f64,
        max_parents: Option<usize>,
    ) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Cache("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let cached_ess = f64::from_le_bytes(b8);
        r.read_exact(&mut b4)?;
        let cap = u32::from_le_bytes(b4);
        let cached_cap = (cap != u32::MAX).then_some(cap as usize);
        let mut hash = [0u8; 32];
        r.read_exact(&mut hash)?;
        if &hash != data_hash {
            return Err(Error::Cache("dataset hash does not match".into()));
        }
        if cached_ess.to_bits() != ess.to_bits() || cached_cap != max_parents {
            return Err(Error::Cache("score parameters do not match".into()));
        }
        if n == 0 || n > bits::MAX_VARS {
            return Err(Error::Cache(format!("bad variable count {n}")));
        }
        let per_var = 1usize << (n - 1);
        let mut buf = vec![0u8; per_var * 8];
        let mut scores = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            scores.push(
                buf.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        Ok(LocalScoreTable {
            n,
            ess,
            max_parents,
            scores,
        })
    }
}

const CACHE_MAGIC: &[u8; 8] = b"KBNLS\0\0\x01";

/// Computes every local score. Cells are independent and run under `exec`.
pub fn all_local_scores(
    data: &Dataset,
    ess: f64,
    max_parents: Option<usize>,
    exec: Exec,
    budget: MemoryBudget,
) -> Result<LocalScoreTable> {
    check_ess(ess)?;
    let n = data.n();
    budget.check("local score table", LocalScoreTable::estimate_bytes(n))?;
    let per_var = 1usize << (n - 1);
    let cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|v| (0..per_var).map(move |idx| (v, idx)))
        .collect();
    let flat = exec.map(&cells, |&(v, idx)| {
        let parents = bits::expand(idx, v);
        if max_parents.is_some_and(|cap| bits::len(parents) > cap) {
            f64::NEG_INFINITY
        } else {
            local_score_unchecked(data, v, parents, ess)
        }
    });
    let scores = flat.chunks(per_var).map(<[f64]>::to_vec).collect();
    Ok(LocalScoreTable {
        n,
        ess,
        max_parents,
        scores,
    })
}

/// Scores a graph directly from data, without a precomputed table.
pub fn score_graph(data: &Dataset, parents: &[VarSet], ess: f64) -> Result<f64> {
    if parents.len() != data.n() {
        return Err(Error::contract("graph size does not match dataset"));
    }
    if !graph::is_acyclic(parents) {
        return Err(Error::contract("graph is cyclic"));
    }
    parents
        .iter()
        .enumerate()
        .map(|(v, &pa)| local_score(data, v, pa, ess))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(rows: &[&[usize]]) -> Dataset {
        let n = rows.first().map_or(1, |r| r.len());
        let rows: Vec<Vec<usize>> = rows.iter().map(|r| r.to_vec()).collect();
        Dataset::from_codes(
            (0..n).map(|i| format!("x{i}")).collect(),
            &vec![2; n],
            &rows,
        )
        .unwrap()
    }

    /// Beta(½,½)-binomial for one 0 and one 1: ∫θ(1−θ) Beta(θ; ½, ½) dθ = B(1.5,1.5)/B(.5,.5) = 1/8.
    #[test]
    fn single_binary_variable() {
        let d = binary(&[&[0], &[1]]);
        let s = local_score(&d, 0, 0, 1.0).unwrap();
        assert!((s - (-3.0 * 2f64.ln())).abs() < 1e-12, "{s}");
        assert!((s.exp() - 0.125).abs() < 1e-14);
    }

    #[test]
    fn empty_data_scores_zero() {
        let d = binary(&[&[0, 1, 1]]).empty_like();
        for pa in [0, 0b010, 0b110] {
            assert_eq!(local_score(&d, 0, pa, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn likelihood_equivalence_two_vars() {
        let d = binary(&[
            &[0, 0],
            &[0, 1],
            &[1, 1],
            &[1, 1],
            &[0, 0],
            &[1, 0],
            &[1, 1],
        ]);
        for ess in [0.5, 1.0, 7.0] {
            let xy = local_score(&d, 0, 0, ess).unwrap() + local_score(&d, 1, 0b01, ess).unwrap();
            let yx = local_score(&d, 1, 0, ess).unwrap() + local_score(&d, 0, 0b10, ess).unwrap();
            assert!((xy - yx).abs() < 1e-9);
        }
    }

    #[test]
    fn rising_factorial_matches_gamma() {
        for alpha in [1e-6, 0.0833, 0.5, 3.0] {
            for c in 0..20u32 {
                let direct = ln_gamma(alpha + c as f64) - ln_gamma(alpha);
                assert!((ln_rising(alpha, c) - direct).abs() < 1e-11 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn counts_route_matches_fast_route() {
        let rows: Vec<Vec<usize>> = (0..30)
            .map(|r| vec![r % 3, (r / 3) % 2, (r * r) % 4])
            .collect();
        let d = Dataset::from_codes(vec!["a".into(), "b".into(), "c".into()], &[3, 2, 4], &rows)
            .unwrap();
        for child in 0..3 {
            for pa in bits::subsets(bits::full(3) & !(1 << child)) {
                let ct = d.count_table(child, pa).unwrap();
                let q = parent_configurations(&d, pa);
                let a = score_from_counts(&ct, q, 1.0);
                let b = local_score(&d, child, pa, 1.0).unwrap();
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn table_sizes_and_entries() {
        let rows: Vec<Vec<usize>> = (0..25)
            .map(|r| (0..5).map(|c| (r >> c) % 2).collect())
            .collect();
        let d =
            Dataset::from_codes((0..5).map(|i| format!("x{i}")).collect(), &[2; 5], &rows).unwrap();
        let t = all_local_scores(&d, 1.0, None, Exec::Sequential, MemoryBudget::default()).unwrap();
        assert_eq!(t.len(), 80);
        for v in 0..5 {
            for pa in bits::subsets(bits::full(5) & !(1 << v)) {
                assert_eq!(t.get(v, pa), local_score(&d, v, pa, 1.0).unwrap());
            }
        }
        let empty = all_local_scores(
            &d.empty_like(),
            1.0,
            None,
            Exec::Sequential,
            MemoryBudget::default(),
        )
        .unwrap();
        assert!((0..5).all(|v| empty.variable_scores(v).iter().all(|&s| s == 0.0)));
    }

    #[test]
    fn cap_marks_large_sets() {
        let d = binary(&[&[0, 1, 0], &[1, 1, 0], &[0, 0, 1]]);
        let t =
            all_local_scores(&d, 1.0, Some(1), Exec::Sequential, MemoryBudget::default()).unwrap();
        assert_eq!(t.len(), 12);
        assert_eq!(t.get(0, 0b110), f64::NEG_INFINITY);
        assert!(t.get(0, 0b010).is_finite());
        assert!(t.network_score(&[0b110, 0, 0]).is_err());
    }

    #[test]
    fn budget_refusal() {
        let d = binary(&[&[0, 1, 0], &[1, 1, 0]]);
        let err = all_local_scores(&d, 1.0, None, Exec::Sequential, MemoryBudget(8)).unwrap_err();
        assert!(err.is_refusal());
    }

    #[test]
    fn network_score_definitions() {
        let d = binary(&[&[0, 1], &[1, 1], &[1, 0], &[0, 0], &[1, 1]]);
        let t = all_local_scores(&d, 1.0, None, Exec::Sequential, MemoryBudget::default()).unwrap();
        assert_eq!(t.network_score(&[0, 0]).unwrap(), t.get(0, 0) + t.get(1, 0));
        assert_eq!(
            t.network_score(&[0, 0b01]).unwrap(),
            t.get(0, 0) + t.get(1, 0b01)
        );
        assert!(matches!(
            t.network_score(&[0b10, 0b01]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn cache_round_trip_and_mismatch() {
        let d = binary(&[&[0, 1, 1], &[1, 1, 0], &[1, 0, 0]]);
        let t =
            all_local_scores(&d, 1.0, Some(1), Exec::Sequential, MemoryBudget::default()).unwrap();
        let hash = d.content_hash();
        let mut buf = Vec::new();
        t.write_cache(&mut buf, &hash).unwrap();
        let back = LocalScoreTable::read_cache(buf.as_slice(), &hash, 1.0, Some(1)).unwrap();
        assert_eq!(back.scores.len(), 3);
        for v in 0..3 {
            for (a, b) in back.variable_scores(v).iter().zip(t.variable_scores(v)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        let other = binary(&[&[0, 1, 1], &[1, 1, 0], &[0, 0, 0]]).content_hash();
        assert!(matches!(
            LocalScoreTable::read_cache(buf.as_slice(), &other, 1.0, Some(1)),
            Err(Error::Cache(_))
        ));
        assert!(LocalScoreTable::read_cache(buf.as_slice(), &hash, 2.0, Some(1)).is_err());
    }
}
