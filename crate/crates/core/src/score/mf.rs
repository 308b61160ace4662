//! One-dimensional matrix factorization bridging backend.
//!
//! Fits r̂(u,i) = μ + b_u + b_i + f_u·f_i to explicit votes (up → 1,
//! down → 0) by seeded SGD on
//!
//! ```text
//! L = ½ Σ (r − r̂)² + ½ reg (Σ b_u² + Σ b_i² + Σ f_u² + Σ f_i²)
//! ```
//!
//! The item intercept μ + b_i is what remains of an item's approval once the
//! rater-factor alignment has been explained away.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ReactionMatrix, Result, ScoreError};
use crate::rng;
use crate::{CitizenId, ContentId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfParams {
    pub reg: f64,
    pub epochs: usize,
    pub lr: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for MfParams {
    fn default() -> Self {
        Self {
            reg: 0.1,
            epochs: 400,
            lr: 0.05,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfFit {
    pub beta_raw: BTreeMap<ContentId, f64>,
    pub mu: f64,
    pub rater_bias: BTreeMap<CitizenId, f64>,
    pub rater_factor: BTreeMap<CitizenId, f64>,
    pub item_bias: BTreeMap<ContentId, f64>,
    pub item_factor: BTreeMap<ContentId, f64>,
    /// Regularized loss after the last epoch.
    pub loss: f64,
}

/// Fits the factor model on explicit votes cast by `raters`.
pub fn bridging_mf(reactions: &ReactionMatrix, raters: &BTreeSet<CitizenId>, params: &MfParams) -> Result<MfFit> {
    let mut obs: Vec<(usize, usize, f64)> = Vec::new();
    let mut users: Vec<CitizenId> = Vec::new();
    let mut user_index: BTreeMap<CitizenId, usize> = BTreeMap::new();
    let mut items: Vec<ContentId> = Vec::new();
    for m in reactions.contents() {
        let votes: Vec<(CitizenId, f64)> = reactions
            .records_for(m)
            .filter(|(p, r)| r.reaction.is_explicit() && raters.contains(p))
            .map(|(p, r)| (p, if r.reaction.value() > 0 { 1.0 } else { 0.0 }))
            .collect();
        if votes.is_empty() {
            continue;
        }
        let i = items.len();
        items.push(m);
        for (p, v) in votes {
            let u = *user_index.entry(p).or_insert_with(|| {
                users.push(p);
                users.len() - 1
            });
            obs.push((u, i, v));
        }
    }
    if users.len() < 2 || items.len() < 2 {
        return Err(ScoreError::InsufficientData(format!(
            "{} raters and {} rated items; need at least 2 of each",
            users.len(),
            items.len()
        )));
    }

    let mut user_n = vec![0.0f64; users.len()];
    let mut item_n = vec![0.0f64; items.len()];
    for &(u, i, _) in &obs {
        user_n[u] += 1.0;
        item_n[i] += 1.0;
    }

    let mut rng = rng::seeded(params.seed);
    let mut mu = obs.iter().map(|o| o.2).sum::<f64>() / obs.len() as f64;
    let mut bu = vec![0.0; users.len()];
    let mut bi = vec![0.0; items.len()];
    let mut fu: Vec<f64> = (0..users.len())
        .map(|_| params.init_scale * (rng.random::<f64>() * 2.0 - 1.0))
        .collect();
    let mut fi: Vec<f64> = (0..items.len())
        .map(|_| params.init_scale * (rng.random::<f64>() * 2.0 - 1.0))
        .collect();

    let reg = params.reg;
    let mut order: Vec<usize> = (0..obs.len()).collect();
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let lr = params.lr / (1.0 + 10.0 * epoch as f64 / params.epochs.max(1) as f64);
        for &k in &order {
            let (u, i, r) = obs[k];
            let err = r - (mu + bu[u] + bi[i] + fu[u] * fi[i]);
            // Per-sample share of the regularizer so one epoch sums to the
            // full-batch gradient.
            let (ru, ri) = (reg / user_n[u], reg / item_n[i]);
            mu += lr * err;
            bu[u] += lr * (err - ru * bu[u]);
            bi[i] += lr * (err - ri * bi[i]);
            let (f_u, f_i) = (fu[u], fi[i]);
            fu[u] += lr * (err * f_i - ru * f_u);
            fi[i] += lr * (err * f_u - ri * f_i);
        }
    }

    let sse: f64 = obs
        .iter()
        .map(|&(u, i, r)| {
            let e = r - (mu + bu[u] + bi[i] + fu[u] * fi[i]);
            e * e
        })
        .sum();
    let penalty: f64 = [&bu, &bi, &fu, &fi]
        .iter()
        .flat_map(|v| v.iter())
        .map(|x| x * x)
        .sum();
    let loss = 0.5 * sse + 0.5 * reg * penalty;

    Ok(MfFit {
        beta_raw: items
            .iter()
            .zip(&bi)
            .map(|(&m, &b)| (m, (mu + b).clamp(0.0, 1.0)))
            .collect(),
        mu,
        rater_bias: users.iter().copied().zip(bu).collect(),
        rater_factor: users.iter().copied().zip(fu).collect(),
        item_bias: items.iter().copied().zip(bi).collect(),
        item_factor: items.iter().copied().zip(fi).collect(),
        loss,
    })
}
