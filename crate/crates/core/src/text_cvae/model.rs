use std::path::Path;

use echoloop_neural::activation::{softmax, tanh_backward, tanh_inplace};
use echoloop_neural::lstm::LstmTrace;
use echoloop_neural::param::{prefixed, prefixed_mut};
use echoloop_neural::{loss, Checkpoint, Dense, Embedding, Lstm, LstmState, Module, Param, SessionRng};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ranker::{LineSource, LyricLine};
use super::vocab::{Vocabulary, BOS, EOS, PAD, UNK};
use crate::error::{CoreError, Result};
use crate::latent::{normal, LatentCode, LatentDistribution, LATENT_DIM};

pub const CHECKPOINT_KIND: &str = "text-cvae";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextCvaeConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Size of the audio code appended to every encoder and decoder input.
    pub cond_dim: usize,
    pub word_dropout: f32,
    pub max_len: usize,
}

impl Default for TextCvaeConfig {
    fn default() -> Self {
        Self {
            embed_dim: 300,
            hidden_dim: 64,
            latent_dim: LATENT_DIM,
            cond_dim: LATENT_DIM,
            word_dropout: 0.2,
            max_len: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub count: usize,
    pub max_len: usize,
    /// Softmax temperature for token sampling; ignored when `greedy`.
    pub temperature: f32,
    /// Scale of the prior draw for z_t; 0 decodes from z_t = 0.
    pub tau: f32,
    pub greedy: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            count: 100,
            max_len: 20,
            temperature: 0.8,
            tau: 1.0,
            greedy: false,
        }
    }
}

/// Loss terms for one line; `total == nll + kl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextTerms {
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
    /// Predicted positions, including EOS.
    pub tokens: usize,
}

#[derive(Serialize, Deserialize)]
struct StoredConfig {
    model: TextCvaeConfig,
    vocab: Vocabulary,
}

#[derive(Debug, Clone)]
pub struct TextCvae {
    cfg: TextCvaeConfig,
    vocab: Vocabulary,
    embedding: Embedding,
    enc_fwd: Lstm,
    enc_bwd: Lstm,
    mu: Dense,
    log_sigma: Dense,
    init: Dense,
    decoder: Lstm,
    out: Dense,
}

struct EncoderPass {
    fwd: LstmTrace,
    bwd: LstmTrace,
    hcat: Vec<f32>,
    mu: Vec<f32>,
    log_sigma: Vec<f32>,
}

impl TextCvae {
    pub fn new(cfg: TextCvaeConfig, vocab: Vocabulary, rng: &mut SessionRng) -> Result<Self> {
        if vocab.is_empty() {
            return Err(CoreError::Config("vocabulary has no tokens beyond the specials".into()));
        }
        if cfg.max_len == 0 || !(0.0..1.0).contains(&cfg.word_dropout) {
            return Err(CoreError::Config("max_len must be positive and word dropout in [0, 1)".into()));
        }
        let (e, h, l, c, v) = (cfg.embed_dim, cfg.hidden_dim, cfg.latent_dim, cfg.cond_dim, vocab.len());
        Ok(Self {
            embedding: Embedding::new(v, e, rng),
            enc_fwd: Lstm::new(e + c, h, rng),
            enc_bwd: Lstm::new(e + c, h, rng),
            mu: Dense::new(2 * h, l, rng),
            log_sigma: Dense::new(2 * h, l, rng),
            init: Dense::new(l + c, h, rng),
            decoder: Lstm::new(e + c, h, rng),
            out: Dense::new(h, v, rng),
            cfg,
            vocab,
        })
    }

    pub fn config(&self) -> &TextCvaeConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn check_cond(&self, z_s: &[f32]) -> Result<()> {
        if z_s.len() != self.cfg.cond_dim {
            return Err(CoreError::Config(format!(
                "conditioning code has {} dims, model expects {}",
                z_s.len(),
                self.cfg.cond_dim
            )));
        }
        Ok(())
    }

    fn step_input(&self, token: usize, z_s: &[f32]) -> Result<Vec<f32>> {
        let mut x = self.embedding.lookup(token)?.to_vec();
        x.extend_from_slice(z_s);
        Ok(x)
    }

    fn encode_pass(&self, tokens: &[usize], z_s: &[f32]) -> Result<EncoderPass> {
        let h = self.cfg.hidden_dim;
        let inputs = tokens
            .iter()
            .map(|&t| self.step_input(t, z_s))
            .collect::<Result<Vec<_>>>()?;
        let (_, last_f, fwd) = self.enc_fwd.forward_sequence(&inputs, LstmState::zeros(h))?;
        let reversed: Vec<Vec<f32>> = inputs.iter().rev().cloned().collect();
        let (_, last_b, bwd) = self.enc_bwd.forward_sequence(&reversed, LstmState::zeros(h))?;
        let mut hcat = last_f.h;
        hcat.extend_from_slice(&last_b.h);
        let mu = self.mu.forward(&hcat, 1)?;
        let log_sigma = self.log_sigma.forward(&hcat, 1)?;
        Ok(EncoderPass {
            fwd,
            bwd,
            hcat,
            mu,
            log_sigma,
        })
    }

    /// q(z_t | line, z_s). Rejects empty or all-UNK lines.
    pub fn encode_tokens(&self, tokens: &[usize], z_s: &LatentCode) -> Result<LatentDistribution> {
        if tokens.is_empty() || tokens.iter().all(|&t| t == UNK) {
            return Err(CoreError::RejectedLine("line has no in-vocabulary token".into()));
        }
        self.check_cond(&z_s.z)?;
        let pass = self.encode_pass(&tokens[..tokens.len().min(self.cfg.max_len)], &z_s.z)?;
        Ok(LatentDistribution {
            mean: pass.mu,
            log_sigma: pass.log_sigma,
        })
    }

    pub fn encode_line(&self, line: &LyricLine, z_s: &LatentCode) -> Result<LatentDistribution> {
        self.encode_tokens(&line.tokens, z_s)
    }

    /// Tokenize user text into a line; OOV words become UNK.
    pub fn user_line(&self, text: &str) -> Result<LyricLine> {
        let mut tokens = self.vocab.encode_strict(text)?;
        tokens.truncate(self.cfg.max_len);
        Ok(LyricLine {
            tokens,
            text: text.trim().to_string(),
            source: LineSource::User,
            conditioning_clip_id: None,
            ranker_score: None,
        })
    }

    fn initial_state(&self, z_t: &[f32], z_s: &[f32]) -> Result<(Vec<f32>, LstmState)> {
        let mut init_in = z_t.to_vec();
        init_in.extend_from_slice(z_s);
        let mut h0 = self.init.forward(&init_in, 1)?;
        tanh_inplace(&mut h0);
        let state = LstmState {
            c: vec![0.0; h0.len()],
            h: h0,
        };
        Ok((init_in, state))
    }

    /// Decode one line from a given z_t.
    pub fn decode_line<R: Rng + ?Sized>(
        &self,
        z_t: &[f32],
        z_s: &LatentCode,
        cfg: &GenerateConfig,
        rng: &mut R,
    ) -> Result<LyricLine> {
        self.check_cond(&z_s.z)?;
        let (_, mut state) = self.initial_state(z_t, &z_s.z)?;
        let mut prev = BOS;
        let mut tokens = Vec::new();
        while tokens.len() < cfg.max_len.min(self.cfg.max_len) {
            let (next, _) = self.decoder.step(&self.step_input(prev, &z_s.z)?, &state)?;
            state = next;
            let mut logits = self.out.forward(&state.h, 1)?;
            logits[PAD] = f32::NEG_INFINITY;
            logits[BOS] = f32::NEG_INFINITY;
            if tokens.is_empty() {
                logits[EOS] = f32::NEG_INFINITY;
            }
            let tok = if cfg.greedy {
                argmax(&logits)
            } else {
                let t = cfg.temperature.max(1e-3);
                logits.iter_mut().for_each(|l| *l /= t);
                sample_index(&softmax(&logits), rng)
            };
            if tok == EOS {
                break;
            }
            tokens.push(tok);
            prev = tok;
        }
        Ok(LyricLine {
            text: self.vocab.decode(&tokens),
            tokens,
            source: LineSource::Generated,
            conditioning_clip_id: None,
            ranker_score: None,
        })
    }

    /// `cfg.count` candidate lines, each from its own prior draw of z_t.
    pub fn generate_lines<R: Rng + ?Sized>(
        &self,
        z_s: &LatentCode,
        conditioning_clip_id: Option<&str>,
        cfg: &GenerateConfig,
        rng: &mut R,
    ) -> Result<Vec<LyricLine>> {
        (0..cfg.count)
            .map(|_| {
                let z_t: Vec<f32> = (0..self.cfg.latent_dim).map(|_| cfg.tau * normal(rng)).collect();
                let mut line = self.decode_line(&z_t, z_s, cfg, rng)?;
                line.conditioning_clip_id = conditioning_clip_id.map(str::to_string);
                Ok(line)
            })
            .collect()
    }

    /// Teacher-forced NLL of `tokens` (plus EOS) from a fixed z_t, without gradients.
    pub fn sequence_nll(&self, tokens: &[usize], z_t: &[f32], z_s: &[f32]) -> Result<f64> {
        let (_, state) = self.initial_state(z_t, z_s)?;
        let ids = decoder_ids(tokens, None);
        let inputs = ids.iter().map(|&t| self.step_input(t, z_s)).collect::<Result<Vec<_>>>()?;
        let (hs, _, _) = self.decoder.forward_sequence(&inputs, state)?;
        let logits = self.logits(&hs)?;
        Ok(loss::nll_sequence(&logits, &targets(tokens))?.0)
    }

    /// Deterministic per-line terms with z_t = posterior mean.
    pub fn evaluate(&self, tokens: &[usize], z_s: &[f32]) -> Result<TextTerms> {
        let enc = self.encode_pass(tokens, z_s)?;
        let nll = self.sequence_nll(tokens, &enc.mu, z_s)?;
        let (kl, _, _) = loss::kl_gaussian(&enc.mu, &enc.log_sigma)?;
        Ok(TextTerms {
            nll,
            kl,
            total: nll + kl,
            tokens: tokens.len() + 1,
        })
    }

    fn logits(&self, hs: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        let flat: Vec<f32> = hs.concat();
        let all = self.out.forward(&flat, hs.len())?;
        Ok(all.chunks(self.vocab.len()).map(<[f32]>::to_vec).collect())
    }

    /// Forward and backward for one (line, z_s) pair with word dropout and
    /// the reparameterized z_t. Gradients accumulate; nothing flows into z_s.
    pub fn accumulate_gradients(&mut self, tokens: &[usize], z_s: &[f32], rng: &mut SessionRng) -> Result<TextTerms> {
        if tokens.is_empty() {
            return Err(CoreError::RejectedLine("empty training line".into()));
        }
        let tokens = &tokens[..tokens.len().min(self.cfg.max_len)];
        let (h, l, e) = (self.cfg.hidden_dim, self.cfg.latent_dim, self.cfg.embed_dim);
        let enc = self.encode_pass(tokens, z_s)?;
        let eps: Vec<f32> = (0..l).map(|_| normal(rng)).collect();
        let sigma: Vec<f32> = enc.log_sigma.iter().map(|v| v.exp()).collect();
        let z_t: Vec<f32> = (0..l).map(|i| enc.mu[i] + eps[i] * sigma[i]).collect();

        let (init_in, state0) = self.initial_state(&z_t, z_s)?;
        let h0 = state0.h.clone();
        let dec_ids = decoder_ids(tokens, Some((&mut *rng, self.cfg.word_dropout)));
        let dec_inputs = dec_ids
            .iter()
            .map(|&t| self.step_input(t, z_s))
            .collect::<Result<Vec<_>>>()?;
        let (hs, _, dec_trace) = self.decoder.forward_sequence(&dec_inputs, state0)?;
        let logits = self.logits(&hs)?;
        let (nll, dlogits) = loss::nll_sequence(&logits, &targets(tokens))?;
        let (kl, dmu_kl, dls_kl) = loss::kl_gaussian(&enc.mu, &enc.log_sigma)?;

        let dflat = self.out.backward(&hs.concat(), &dlogits.concat(), hs.len())?;
        let dhs: Vec<Vec<f32>> = dflat.chunks(h).map(<[f32]>::to_vec).collect();
        let (dxs, d_init) = self.decoder.backward_sequence(&dec_trace, &dhs, None)?;
        for (&id, dx) in dec_ids.iter().zip(&dxs) {
            self.embedding.accumulate(id, &dx[..e]);
        }
        let mut dpre = d_init.h;
        tanh_backward(&h0, &mut dpre);
        let d_init_in = self.init.backward(&init_in, &dpre, 1)?;

        let dmu: Vec<f32> = (0..l).map(|i| d_init_in[i] + dmu_kl[i]).collect();
        let dls: Vec<f32> = (0..l).map(|i| d_init_in[i] * eps[i] * sigma[i] + dls_kl[i]).collect();
        let mut dhcat = self.mu.backward(&enc.hcat, &dmu, 1)?;
        let d2 = self.log_sigma.backward(&enc.hcat, &dls, 1)?;
        dhcat.iter_mut().zip(&d2).for_each(|(a, b)| *a += b);

        let n = tokens.len();
        let zeros = vec![vec![0.0; h]; n];
        let final_f = LstmState {
            h: dhcat[..h].to_vec(),
            c: vec![0.0; h],
        };
        let final_b = LstmState {
            h: dhcat[h..].to_vec(),
            c: vec![0.0; h],
        };
        let (dxf, _) = self.enc_fwd.backward_sequence(&enc.fwd, &zeros, Some(&final_f))?;
        let (dxb, _) = self.enc_bwd.backward_sequence(&enc.bwd, &zeros, Some(&final_b))?;
        for (i, &tok) in tokens.iter().enumerate() {
            self.embedding.accumulate(tok, &dxf[i][..e]);
            self.embedding.accumulate(tok, &dxb[n - 1 - i][..e]);
        }
        Ok(TextTerms {
            nll,
            kl,
            total: nll + kl,
            tokens: n + 1,
        })
    }

    pub fn checkpoint(&self, step: u64, rng: &SessionRng) -> Result<Checkpoint> {
        let stored = StoredConfig {
            model: self.cfg.clone(),
            vocab: self.vocab.clone(),
        };
        Ok(Checkpoint::capture(CHECKPOINT_KIND, self, step, rng, serde_json::to_string(&stored)?))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let stored: StoredConfig = serde_json::from_str(&ckpt.config)?;
        let mut model = Self::new(stored.model, stored.vocab, &mut SessionRng::new(0))?;
        ckpt.restore(&mut model)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>, step: u64, rng: &SessionRng) -> Result<()> {
        Ok(self.checkpoint(step, rng)?.save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// BOS followed by the line; with dropout, line tokens become UNK at `rate`.
fn decoder_ids(tokens: &[usize], dropout: Option<(&mut SessionRng, f32)>) -> Vec<usize> {
    let mut ids: Vec<usize> = std::iter::once(BOS).chain(tokens.iter().copied()).collect();
    if let Some((rng, rate)) = dropout {
        for id in ids.iter_mut().skip(1) {
            if rng.random::<f32>() < rate {
                *id = UNK;
            }
        }
    }
    ids
}

fn targets(tokens: &[usize]) -> Vec<usize> {
    tokens.iter().copied().chain(std::iter::once(EOS)).collect()
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn sample_index<R: Rng + ?Sized>(probs: &[f32], rng: &mut R) -> usize {
    let mut u: f32 = rng.random();
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    argmax(probs)
}

impl Module for TextCvae {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut out = prefixed("embedding", self.embedding.params());
        out.extend(prefixed("enc_fwd", self.enc_fwd.params()));
        out.extend(prefixed("enc_bwd", self.enc_bwd.params()));
        out.extend(prefixed("mu", self.mu.params()));
        out.extend(prefixed("log_sigma", self.log_sigma.params()));
        out.extend(prefixed("init", self.init.params()));
        out.extend(prefixed("decoder", self.decoder.params()));
        out.extend(prefixed("out", self.out.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = prefixed_mut("embedding", self.embedding.params_mut());
        out.extend(prefixed_mut("enc_fwd", self.enc_fwd.params_mut()));
        out.extend(prefixed_mut("enc_bwd", self.enc_bwd.params_mut()));
        out.extend(prefixed_mut("mu", self.mu.params_mut()));
        out.extend(prefixed_mut("log_sigma", self.log_sigma.params_mut()));
        out.extend(prefixed_mut("init", self.init.params_mut()));
        out.extend(prefixed_mut("decoder", self.decoder.params_mut()));
        out.extend(prefixed_mut("out", self.out.params_mut()));
        out
    }
}
