use std::collections::HashMap;

use echoloop_neural::{Adam, Module, SessionRng};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{TextCvae, TextTerms};
use super::vocab::Vocabulary;
use crate::corpus::{AlignedLine, ClipRecord};
use crate::error::{CoreError, Result};
use crate::latent::{LatentDistribution, Origin};

/// A training line and the index of the clip it is aligned with.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPair {
    pub tokens: Vec<usize>,
    pub clip: usize,
}

/// Join the alignment table against the manifest. Lines with no known token are skipped.
pub fn aligned_pairs(aligned: &[AlignedLine], manifest: &[ClipRecord], vocab: &Vocabulary) -> Result<Vec<TextPair>> {
    let index: HashMap<&str, usize> = manifest.iter().enumerate().map(|(i, r)| (r.clip_id.as_str(), i)).collect();
    let mut pairs = Vec::with_capacity(aligned.len());
    for a in aligned {
        let clip = *index
            .get(a.clip_id.as_str())
            .ok_or_else(|| CoreError::UnknownClip(a.clip_id.clone()))?;
        match vocab.encode_strict(&a.text) {
            Ok(tokens) => pairs.push(TextPair { tokens, clip }),
            Err(_) => log::warn!("skipping aligned line for {} with no known token", a.clip_id),
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f32,
    pub lr_end: f32,
    /// Steps over which the learning rate falls linearly from start to end.
    pub anneal_steps: u64,
    /// Temperature for the per-epoch z_s draws.
    pub tau: f32,
    pub seed: u64,
}

impl Default for TextTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr_start: 5e-3,
            lr_end: 1e-5,
            anneal_steps: 3000,
            tau: 1.0,
            seed: 0,
        }
    }
}

impl TextTrainConfig {
    pub fn lr_at(&self, step: u64) -> f32 {
        let frac = (step as f64 / self.anneal_steps.max(1) as f64).min(1.0);
        (self.lr_start as f64 * (1.0 - frac) + self.lr_end as f64 * frac) as f32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextStep {
    pub lr: f32,
    /// Batch means per line.
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
    pub nll_per_token: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TextTrace {
    pub steps: Vec<TextStep>,
}

impl TextTrace {
    /// Mean per-token NLL over the last `n` steps.
    pub fn recent_nll_per_token(&self, n: usize) -> f64 {
        let tail = &self.steps[self.steps.len().saturating_sub(n)..];
        tail.iter().map(|s| s.nll_per_token).sum::<f64>() / tail.len().max(1) as f64
    }
}

pub fn train(
    model: &mut TextCvae,
    pairs: &[TextPair],
    posteriors: &[LatentDistribution],
    cfg: &TextTrainConfig,
) -> Result<TextTrace> {
    if pairs.is_empty() || cfg.batch_size == 0 {
        return Err(CoreError::Config("text training needs aligned pairs and a positive batch size".into()));
    }
    if let Some(p) = pairs.iter().find(|p| p.clip >= posteriors.len()) {
        return Err(CoreError::Config(format!("pair refers to clip {} of {}", p.clip, posteriors.len())));
    }
    let mut rng = SessionRng::new(cfg.seed);
    let mut opt = Adam::new(cfg.lr_start);
    let mut trace = TextTrace::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut last_good = model.clone();
    for _ in 0..cfg.epochs {
        let codes = posteriors
            .iter()
            .map(|d| d.sample(cfg.tau, Origin::Spec, &mut rng).map(|c| c.z))
            .collect::<Result<Vec<_>>>()?;
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grad();
            let mut sum = TextTerms {
                nll: 0.0,
                kl: 0.0,
                total: 0.0,
                tokens: 0,
            };
            for &i in batch {
                let t = model.accumulate_gradients(&pairs[i].tokens, &codes[pairs[i].clip], &mut rng)?;
                sum.nll += t.nll;
                sum.kl += t.kl;
                sum.tokens += t.tokens;
            }
            let n = batch.len() as f64;
            if !(sum.nll + sum.kl).is_finite() || !model.grads_finite() {
                *model = last_good;
                return Err(CoreError::Diverged {
                    step: trace.steps.len() as u64,
                    detail: format!("nll {} kl {}", sum.nll, sum.kl),
                });
            }
            let lr = cfg.lr_at(trace.steps.len() as u64);
            opt.lr = lr;
            model.scale_grad(1.0 / n as f32);
            opt.step(model.params_mut().into_iter().map(|(_, p)| p));
            last_good.clone_from(model);
            trace.steps.push(TextStep {
                lr,
                nll: sum.nll / n,
                kl: sum.kl / n,
                total: (sum.nll + sum.kl) / n,
                nll_per_token: sum.nll / sum.tokens as f64,
            });
        }
        log::info!(
            "text-cvae step {}: nll/token {:.3} kl {:.2}",
            trace.steps.len(),
            trace.recent_nll_per_token(10),
            trace.steps.last().map_or(0.0, |s| s.kl)
        );
    }
    Ok(trace)
}

/// Per-token validation scores, all with z_s at the clip's posterior mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextValidation {
    /// (NLL at z_t = posterior mean + KL) / tokens; an ELBO-style bound.
    pub bound_per_token: f64,
    /// Teacher-forced NLL at z_t = posterior mean.
    pub nll_per_token: f64,
    /// Teacher-forced NLL at z_t = 0, the prior mean: the line explained by z_s alone.
    pub prior_nll_per_token: f64,
}

pub fn validate(model: &TextCvae, pairs: &[TextPair], posteriors: &[LatentDistribution]) -> Result<TextValidation> {
    let zero = vec![0.0; model.config().latent_dim];
    let (mut bound, mut nll, mut prior, mut tokens) = (0.0, 0.0, 0.0, 0usize);
    for p in pairs {
        let z_s = &posteriors[p.clip].mean;
        let t = model.evaluate(&p.tokens, z_s)?;
        bound += t.total;
        nll += t.nll;
        prior += model.sequence_nll(&p.tokens, &zero, z_s)?;
        tokens += t.tokens;
    }
    let n = tokens.max(1) as f64;
    Ok(TextValidation {
        bound_per_token: bound / n,
        nll_per_token: nll / n,
        prior_nll_per_token: prior / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_anneals_linearly_then_holds() {
        let cfg = TextTrainConfig::default();
        assert_eq!(cfg.lr_at(0), 5e-3);
        assert!((cfg.lr_at(1500) - (5e-3 + 1e-5) / 2.0).abs() < 1e-8);
        assert_eq!(cfg.lr_at(3000), 1e-5);
        assert_eq!(cfg.lr_at(10_000), 1e-5);
    }
}
