#![allow(dead_code)]

use kbestnet::eval::{random_gold_network, sample};
use kbestnet::scoring::all_local_scores;
use kbestnet::{Dataset, Exec, LocalScoreTable, MemoryBudget, ScoredNetwork};

/// Data sampled from a random network with in-degree ≤ 2 and arities in {2, 3}.
pub fn synthetic(n: usize, rows: usize, seed: u64) -> Dataset {
    let gold = random_gold_network(n, 2.min(n - 1), seed).unwrap();
    sample(&gold, rows, seed.wrapping_add(1)).unwrap()
}

pub fn scores(data: &Dataset) -> LocalScoreTable {
    all_local_scores(data, 1.0, None, Exec::Sequential, MemoryBudget::UNLIMITED).unwrap()
}

/// Equal-score levels of a ranked list, grouped with tolerance `tol`.
pub fn levels(networks: &[ScoredNetwork], tol: f64) -> Vec<Vec<&ScoredNetwork>> {
    let mut out: Vec<Vec<&ScoredNetwork>> = Vec::new();
    for g in networks {
        match out.last_mut() {
            Some(level) if (level[0].score - g.score).abs() <= tol => level.push(g),
            _ => out.push(vec![g]),
        }
    }
    out
}

/// Checks that two ranked lists agree: scores elementwise within `tol`, and
/// identical graph sets at every score level except possibly the last, where
/// the cut at k may fall inside a tie (there `a` must draw from `full`).
pub fn same_up_to_ties(
    a: &[ScoredNetwork],
    b: &[ScoredNetwork],
    full_last_level: &[Vec<u32>],
    tol: f64,
) -> Result<(), String> {
    if a.len() != b.len() {
        return Err(format!("lengths {} vs {}", a.len(), b.len()));
    }
    for (x, y) in a.iter().zip(b) {
        if (x.score - y.score).abs() > tol {
            return Err(format!("rank {}: {} vs {}", x.rank, x.score, y.score));
        }
    }
    let la = levels(a, tol);
    let lb = levels(b, tol);
    if la.len() != lb.len() {
        return Err("different tie structure".into());
    }
    let last = la.len() - 1;
    for (i, (x, y)) in la.iter().zip(&lb).enumerate() {
        let mut gx: Vec<&Vec<u32>> = x.iter().map(|g| &g.parents).collect();
        let mut gy: Vec<&Vec<u32>> = y.iter().map(|g| &g.parents).collect();
        gx.sort();
        gy.sort();
        if i < last {
            if gx != gy {
                return Err(format!("level {i} graph sets differ"));
            }
        } else if !gx.iter().all(|g| full_last_level.contains(g)) {
            return Err("last level contains a graph outside the tie".into());
        }
    }
    Ok(())
}
