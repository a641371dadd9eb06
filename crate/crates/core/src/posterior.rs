//! Bayesian model averaging over a set of scored networks.
//!
//! Each network's weight is its joint score normalized over the set,
//! `P̂(G|D) = P(G,D) / Σ_{G'∈𝒢} P(G',D)`. Feature posteriors are weighted
//! indicator sums; predictive probabilities mix per-network evidence ratios.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bits::VarSet;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::Feature;
use crate::kbest_dags::ScoredNetwork;
use crate::scoring;

/// λ above which an ensemble is conventionally considered to cover the
/// plausible models (Occam's window).
pub const LAMBDA_CUTOFF: f64 = 20.0;

/// Δ may exceed one by at most this much before it is treated as an error.
pub const DELTA_TOLERANCE: f64 = 1e-6;

/// Numerically stable `ln Σ exp(x)`, summed in iteration order.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedEnsemble {
    networks: Vec<ScoredNetwork>,
    log_weights: Vec<f64>,
    log_mass: f64,
}

impl WeightedEnsemble {
    /// Networks must be ordered best first (as returned by the search).
    pub fn new(networks: Vec<ScoredNetwork>) -> Result<Self> {
        if networks.is_empty() {
            return Err(Error::contract("ensemble needs at least one network"));
        }
        if let Some(bad) = networks.iter().find(|g| !g.score.is_finite()) {
            return Err(Error::contract(format!(
                "network of rank {} has non-finite score {}",
                bad.rank, bad.score
            )));
        }
        let log_mass = log_sum_exp(networks.iter().map(|g| g.score));
        let log_weights = networks.iter().map(|g| g.score - log_mass).collect();
        Ok(WeightedEnsemble {
            networks,
            log_weights,
            log_mass,
        })
    }

    pub fn networks(&self) -> &[ScoredNetwork] {
        &self.networks
    }

    pub fn len(&self) -> usize {
        self.networks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.networks.is_empty()
    }

    /// `ln P̂(G|D)` per network.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    /// `ln Σ_{G∈𝒢} P(G, D)`, up to the shared structure-prior constant.
    pub fn log_mass(&self) -> f64 {
        self.log_mass
    }

    fn n(&self) -> usize {
        self.networks[0].parents.len()
    }

    /// Weighted share of networks satisfying `holds`.
    pub fn posterior_of<F: Fn(&[VarSet]) -> bool>(&self, holds: F) -> f64 {
        let p: f64 = self
            .networks
            .iter()
            .zip(&self.log_weights)
            .filter(|(g, _)| holds(&g.parents))
            .map(|(_, w)| w.exp())
            .sum();
        p.clamp(0.0, 1.0)
    }

    pub fn feature_posterior(&self, feature: &Feature) -> Result<f64> {
        feature.validate(self.n())?;
        Ok(self.posterior_of(|g| feature.holds(g)))
    }

    /// Share of the exact evidence captured: `Δ = Σ_{G∈𝒢} P(G,D) / P(D)`.
    pub fn delta(&self, exact_log_evidence: f64) -> Result<f64> {
        let delta = (self.log_mass - exact_log_evidence).exp();
        if !delta.is_finite() || delta > 1.0 + DELTA_TOLERANCE {
            return Err(Error::Numerical(format!(
                "ensemble mass exceeds the exact evidence (Δ = {delta})"
            )));
        }
        Ok(delta.min(1.0))
    }

    /// `ln λ`: log posterior ratio of the best to the worst network in the set.
    pub fn ln_lambda(&self) -> f64 {
        self.networks[0].score - self.networks[self.networks.len() - 1].score
    }

    pub fn lambda(&self) -> f64 {
        self.ln_lambda().exp()
    }

    /// `ln P̂(D_new | D)`, mixing `score(G : D_new ∪ D) − score(G : D)` over the ensemble.
    ///
    /// Each network is rescored from scratch on the pooled data. When `new_data`
    /// introduces categories unseen in `data`, both terms use the widened schema.
    pub fn predict(&self, data: &Dataset, new_data: &Dataset, ess: f64) -> Result<f64> {
        if data.n() != self.n() {
            return Err(Error::SchemaMismatch(format!(
                "ensemble has {} variables, data has {}",
                self.n(),
                data.n()
            )));
        }
        let pooled = data.concat(new_data)?;
        let base = data.recode_into(&pooled)?;
        let mut pooled_cache: HashMap<(usize, VarSet), f64> = HashMap::new();
        let mut base_cache: HashMap<(usize, VarSet), f64> = HashMap::new();
        let mut terms = Vec::with_capacity(self.len());
        for (g, w) in self.networks.iter().zip(&self.log_weights) {
            let mut ratio = 0.0;
            for (v, &pa) in g.parents.iter().enumerate() {
                let joint = match pooled_cache.get(&(v, pa)) {
                    Some(&s) => s,
                    None => {
                        let s = scoring::local_score(&pooled, v, pa, ess)?;
                        pooled_cache.insert((v, pa), s);
                        s
                    }
                };
                let marginal = match base_cache.get(&(v, pa)) {
                    Some(&s) => s,
                    None => {
                        let s = scoring::local_score(&base, v, pa, ess)?;
                        base_cache.insert((v, pa), s);
                        s
                    }
                };
                ratio += joint - marginal;
            }
            terms.push(w + ratio);
        }
        Ok(log_sum_exp(terms))
    }
}

/// Bounds on the exact posterior of a hypothesis given its ensemble estimate:
/// `Δ·p̂ ≤ P(h|D) ≤ Δ·p̂ + 1 − Δ`.
pub fn bounds(p_hat: f64, delta: f64) -> (f64, f64) {
    let lower = delta * p_hat;
    (lower, lower + 1.0 - delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEstimate {
    pub kind: String,
    pub u: usize,
    pub v: usize,
    pub p_hat: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub features: Vec<FeatureEstimate>,
    pub delta: Option<f64>,
    pub lambda: f64,
    pub ln_lambda: f64,
    /// Whether λ exceeds [`LAMBDA_CUTOFF`]; advisory only.
    pub lambda_above_cutoff: bool,
    pub k: usize,
    pub ess: f64,
    pub max_parents: Option<usize>,
}

impl PosteriorReport {
    pub fn build(
        ensemble: &WeightedEnsemble,
        features: &[Feature],
        delta: Option<f64>,
        ess: f64,
        max_parents: Option<usize>,
    ) -> Result<Self> {
        let features = features
            .iter()
            .map(|f| {
                let p_hat = ensemble.feature_posterior(f)?;
                let (u, v) = f.endpoints();
                let b = delta.map(|d| bounds(p_hat, d));
                Ok(FeatureEstimate {
                    kind: f.kind().to_string(),
                    u,
                    v,
                    p_hat,
                    lower: b.map(|b| b.0),
                    upper: b.map(|b| b.1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ln_lambda = ensemble.ln_lambda();
        Ok(PosteriorReport {
            features,
            delta,
            lambda: ln_lambda.exp(),
            ln_lambda,
            lambda_above_cutoff: ln_lambda > LAMBDA_CUTOFF.ln(),
            k: ensemble.len(),
            ess,
            max_parents,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(parents: Vec<VarSet>, score: f64, rank: usize) -> ScoredNetwork {
        ScoredNetwork {
            parents,
            score,
            rank,
        }
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(
            log_sum_exp([f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
        assert!((log_sum_exp([-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp([3.0]), 3.0);
    }

    #[test]
    fn weights() {
        let one = WeightedEnsemble::new(vec![net(vec![0, 0], -5.0, 1)]).unwrap();
        assert_eq!(one.weights(), vec![1.0]);
        assert_eq!(one.lambda(), 1.0);

        let two = WeightedEnsemble::new(vec![net(vec![0, 1], -5.0, 1), net(vec![2, 0], -5.0, 2)])
            .unwrap();
        assert!(two.weights().iter().all(|w| (w - 0.5).abs() < 1e-15));

        let gap = WeightedEnsemble::new(vec![net(vec![0, 1], -4.0, 1), net(vec![0, 0], -5.0, 2)])
            .unwrap();
        let w = gap.weights();
        assert!((w[0] - 0.7310585786300049).abs() < 1e-12);
        assert!((w[1] - 0.2689414213699951).abs() < 1e-12);
        assert!((gap.lambda() - std::f64::consts::E).abs() < 1e-12);
        assert!(WeightedEnsemble::new(vec![]).is_err());
    }

    #[test]
    fn feature_posteriors() {
        let e = WeightedEnsemble::new(vec![
            net(vec![0, 0b01, 0b010], -1.0, 1),
            net(vec![0b10, 0, 0b010], -2.0, 2),
        ])
        .unwrap();
        let w = e.weights();
        let edge01 = e
            .feature_posterior(&Feature::DirectedEdge { u: 0, v: 1 })
            .unwrap();
        let edge10 = e
            .feature_posterior(&Feature::DirectedEdge { u: 1, v: 0 })
            .unwrap();
        let adj = e
            .feature_posterior(&Feature::Adjacency { u: 0, v: 1 })
            .unwrap();
        assert!((edge01 - w[0]).abs() < 1e-15);
        assert!((adj - (edge01 + edge10)).abs() < 1e-15);
        assert!(
            (e.feature_posterior(&Feature::DirectedEdge { u: 1, v: 2 })
                .unwrap()
                - 1.0)
                .abs()
                < 1e-15
        );
        let path = e
            .feature_posterior(&Feature::DirectedPath { u: 0, v: 2 })
            .unwrap();
        assert!(path >= edge01);
        assert!(e
            .feature_posterior(&Feature::DirectedEdge { u: 0, v: 3 })
            .is_err());
    }

    #[test]
    fn bounds_arithmetic() {
        let (lo, hi) = bounds(0.3, 1.0);
        assert!(lo == 0.3 && (hi - 0.3).abs() < 1e-15);
        let (lo, hi) = bounds(0.4, 0.5);
        assert!((lo - 0.2).abs() < 1e-15 && (hi - 0.7).abs() < 1e-15);
    }

    #[test]
    fn delta_checks_consistency() {
        let e = WeightedEnsemble::new(vec![net(vec![0], -2.0, 1)]).unwrap();
        assert_eq!(e.delta(-2.0).unwrap(), 1.0);
        assert!((e.delta(-2.0 + 2f64.ln()).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(e.delta(-3.0), Err(Error::Numerical(_))));
        assert_eq!(e.delta(-2.0 - 1e-9).unwrap(), 1.0);
    }

    #[test]
    fn predictive_symmetry_and_empty_new_data() {
        let d = Dataset::from_codes(vec!["x".into()], &[2], &[vec![0], vec![1]]).unwrap();
        let score = scoring::local_score(&d, 0, 0, 1.0).unwrap();
        let e = WeightedEnsemble::new(vec![net(vec![0], score, 1)]).unwrap();
        assert_eq!(e.predict(&d, &d.empty_like(), 1.0).unwrap(), 0.0);
        let new = Dataset::from_codes(vec!["x".into()], &[2], &[vec![0]]).unwrap();
        assert!((e.predict(&d, &new, 1.0).unwrap() - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn report_fields() {
        let e = WeightedEnsemble::new(vec![net(vec![0, 1], -1.0, 1), net(vec![0, 0], -5.0, 2)])
            .unwrap();
        let r = PosteriorReport::build(
            &e,
            &[Feature::DirectedEdge { u: 0, v: 1 }],
            Some(0.5),
            1.0,
            None,
        )
        .unwrap();
        assert_eq!(r.k, 2);
        assert!(r.lambda_above_cutoff);
        let f = &r.features[0];
        assert_eq!(f.kind, "directed_edge");
        assert!(f.lower.unwrap() <= f.p_hat && f.p_hat <= f.upper.unwrap());
        let js = serde_json::to_value(&r).unwrap();
        assert!(js["features"][0]["p_hat"].is_number());
    }
}
