//! Convolutional VAE over padded mel-spectrograms.
//!
//! Encoder: four `Conv2d` (k=6, s=2) with ReLU and dropout, then dense μ and
//! log σ heads. Decoder: dense projection, four `ConvTranspose2d` with ReLU
//! between them and a sigmoid at the end. Output padding on the transposed
//! layers is derived so the decoder reproduces the encoder's input size.

use std::path::Path;

use echoloop_neural::activation::{dropout_mask, relu_backward, relu_inplace, sigmoid_inplace};
use echoloop_neural::conv::{conv_output_size, conv_transpose_output_size, ConvCache};
use echoloop_neural::param::{prefixed, prefixed_mut};
use echoloop_neural::{loss, Adam, Checkpoint, Conv2d, ConvTranspose2d, Dense, Module, Param, SessionRng, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::MelSpectrogram;
use crate::error::{CoreError, Result};
use crate::latent::{normal, LatentCode, LatentDistribution, LATENT_DIM};

pub const CHECKPOINT_KIND: &str = "spec-vae";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecVaeConfig {
    /// Side of the square model input; spectrograms are zero-padded to it.
    pub input_size: usize,
    pub channels: [usize; 4],
    pub kernel: usize,
    pub stride: usize,
    pub latent_dim: usize,
    pub dropout: f32,
    /// Start the μ / log σ heads at zero.
    pub zero_heads: bool,
}

impl Default for SpecVaeConfig {
    fn default() -> Self {
        Self {
            input_size: 94,
            channels: [8, 16, 32, 32],
            kernel: 6,
            stride: 2,
            latent_dim: LATENT_DIM,
            dropout: 0.2,
            zero_heads: false,
        }
    }
}

impl SpecVaeConfig {
    /// Spatial sizes from input to bottleneck, e.g. `[94, 45, 20, 8, 2]`.
    pub fn encoder_chain(&self) -> Result<Vec<usize>> {
        let mut sizes = vec![self.input_size];
        for layer in 0..4 {
            let input = sizes[layer];
            let out = conv_output_size(input, self.kernel, self.stride).map_err(|e| {
                CoreError::Config(format!("encoder layer {} cannot take a {input}x{input} input: {e}", layer + 1))
            })?;
            sizes.push(out);
        }
        Ok(sizes)
    }

    fn output_paddings(&self, chain: &[usize]) -> Result<[usize; 4]> {
        let mut pads = [0; 4];
        for (i, pad) in pads.iter_mut().enumerate() {
            let (small, big) = (chain[4 - i], chain[3 - i]);
            let natural = conv_transpose_output_size(small, self.kernel, self.stride);
            if big < natural || big - natural >= self.stride {
                return Err(CoreError::Config(format!(
                    "decoder cannot map {small} back to {big} with kernel {} stride {}",
                    self.kernel, self.stride
                )));
            }
            *pad = big - natural;
        }
        Ok(pads)
    }
}

#[derive(Debug, Clone)]
pub struct SpecVae {
    cfg: SpecVaeConfig,
    chain: Vec<usize>,
    encoder: Vec<Conv2d>,
    mu: Dense,
    log_sigma: Dense,
    project: Dense,
    decoder: Vec<ConvTranspose2d>,
}

struct EncoderPass {
    caches: Vec<ConvCache>,
    /// Post-ReLU activations, before dropout.
    activations: Vec<Tensor>,
    masks: Vec<Option<Vec<f32>>>,
    flat: Vec<f32>,
    mu: Vec<f32>,
    log_sigma: Vec<f32>,
}

struct DecoderPass {
    /// Input to each transposed layer.
    inputs: Vec<Tensor>,
    logits: Vec<f32>,
}

/// Loss terms for one sample or a batch mean. `total == bce + kl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub bce: f64,
    pub kl: f64,
    pub total: f64,
}

impl ElboTerms {
    fn new(bce: f64, kl: f64) -> Self {
        Self { bce, kl, total: bce + kl }
    }
}

impl SpecVae {
    pub fn new(cfg: SpecVaeConfig, rng: &mut SessionRng) -> Result<Self> {
        let chain = cfg.encoder_chain()?;
        let pads = cfg.output_paddings(&chain)?;
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(CoreError::Config(format!("dropout {} outside [0, 1)", cfg.dropout)));
        }
        let c = cfg.channels;
        let ins = [1, c[0], c[1], c[2]];
        let encoder = (0..4)
            .map(|i| Conv2d::new(ins[i], c[i], cfg.kernel, cfg.stride, rng))
            .collect();
        let flat = c[3] * chain[4] * chain[4];
        let (mu, log_sigma) = if cfg.zero_heads {
            (Dense::zeroed(flat, cfg.latent_dim), Dense::zeroed(flat, cfg.latent_dim))
        } else {
            (Dense::new(flat, cfg.latent_dim, rng), Dense::new(flat, cfg.latent_dim, rng))
        };
        let project = Dense::new(cfg.latent_dim, flat, rng);
        let outs = [c[2], c[1], c[0], 1];
        let dec_ins = [c[3], c[2], c[1], c[0]];
        let decoder = (0..4)
            .map(|i| ConvTranspose2d::new(dec_ins[i], outs[i], cfg.kernel, cfg.stride, rng).with_output_padding(pads[i]))
            .collect();
        Ok(Self {
            cfg,
            chain,
            encoder,
            mu,
            log_sigma,
            project,
            decoder,
        })
    }

    pub fn config(&self) -> &SpecVaeConfig {
        &self.cfg
    }

    pub fn encoder_chain(&self) -> &[usize] {
        &self.chain
    }

    fn input(&self, spec: &MelSpectrogram) -> Result<Tensor> {
        let n = self.cfg.input_size;
        if spec.values.len() != spec.n_mels * spec.n_frames {
            return Err(CoreError::Config(format!(
                "spectrogram claims {}x{} but holds {} values",
                spec.n_mels,
                spec.n_frames,
                spec.values.len()
            )));
        }
        Ok(Tensor::new(vec![1, n, n], spec.padded(n))?)
    }

    fn encode_pass(&self, x: &Tensor, dropout: Option<&mut SessionRng>) -> Result<EncoderPass> {
        let mut caches = Vec::with_capacity(4);
        let mut activations = Vec::with_capacity(4);
        let mut masks = Vec::with_capacity(4);
        let mut h = x.clone();
        let mut rng = dropout;
        for conv in &self.encoder {
            let (mut y, cache) = conv.forward(&h)?;
            relu_inplace(y.data_mut());
            let mut next = y.clone();
            let mask = match rng.as_deref_mut() {
                Some(r) if self.cfg.dropout > 0.0 => {
                    let m = dropout_mask(y.len(), self.cfg.dropout, r);
                    next.data_mut().iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                    Some(m)
                }
                _ => None,
            };
            caches.push(cache);
            activations.push(y);
            masks.push(mask);
            h = next;
        }
        let flat = h.into_data();
        let mu = self.mu.forward(&flat, 1)?;
        let log_sigma = self.log_sigma.forward(&flat, 1)?;
        Ok(EncoderPass {
            caches,
            activations,
            masks,
            flat,
            mu,
            log_sigma,
        })
    }

    fn decode_pass(&self, z: &[f32]) -> Result<DecoderPass> {
        let c = self.cfg.channels[3];
        let b = self.chain[4];
        let mut h = Tensor::new(vec![c, b, b], self.project.forward(z, 1)?)?;
        let mut inputs = Vec::with_capacity(4);
        for (i, layer) in self.decoder.iter().enumerate() {
            let mut y = layer.forward(&h)?;
            if i < 3 {
                relu_inplace(y.data_mut());
            }
            inputs.push(h);
            h = y;
        }
        Ok(DecoderPass {
            inputs,
            logits: h.into_data(),
        })
    }

    pub fn encode(&self, spec: &MelSpectrogram) -> Result<LatentDistribution> {
        let pass = self.encode_pass(&self.input(spec)?, None)?;
        let dist = LatentDistribution {
            mean: pass.mu,
            log_sigma: pass.log_sigma,
        };
        if !dist.is_finite() {
            return Err(CoreError::Neural(echoloop_neural::NeuralError::NonFinite("spec-vae encoder")));
        }
        Ok(dist)
    }

    /// Sigmoid reconstruction at the padded input size.
    pub fn decode(&self, z: &LatentCode) -> Result<MelSpectrogram> {
        if z.z.len() != self.cfg.latent_dim {
            return Err(CoreError::Config(format!("latent has {} dims, model expects {}", z.z.len(), self.cfg.latent_dim)));
        }
        let mut values = self.decode_pass(&z.z)?.logits;
        sigmoid_inplace(&mut values);
        // f32 sigmoid saturates to exactly 0 or 1 past |x| ≈ 17
        for v in &mut values {
            *v = v.clamp(f32::EPSILON, 1.0 - f32::EPSILON);
        }
        let n = self.cfg.input_size;
        Ok(MelSpectrogram {
            n_mels: n,
            n_frames: n,
            values,
            config_id: format!("spec-vae-{n}"),
        })
    }

    /// BCE (summed over the padded canvas) of the reconstruction from the posterior mean.
    pub fn reconstruction_bce(&self, spec: &MelSpectrogram) -> Result<f64> {
        let x = self.input(spec)?;
        let dist = self.encode(spec)?;
        let logits = self.decode_pass(&dist.mean)?.logits;
        let (mean, _) = loss::bce_with_logits(&logits, x.data())?;
        Ok(mean * logits.len() as f64)
    }

    /// Deterministic ELBO terms: no dropout, z = μ.
    pub fn elbo(&self, spec: &MelSpectrogram) -> Result<ElboTerms> {
        let x = self.input(spec)?;
        let enc = self.encode_pass(&x, None)?;
        let logits = self.decode_pass(&enc.mu)?.logits;
        let (bce, _) = loss::bce_with_logits(&logits, x.data())?;
        let (kl, _, _) = loss::kl_gaussian(&enc.mu, &enc.log_sigma)?;
        Ok(ElboTerms::new(bce * logits.len() as f64, kl))
    }

    /// One training sample: forward with dropout and reparameterization,
    /// backward into the accumulated gradients. `rng: None` disables dropout
    /// and the latent noise.
    pub fn accumulate_gradients(&mut self, spec: &MelSpectrogram, tau: f32, rng: Option<&mut SessionRng>) -> Result<ElboTerms> {
        match rng {
            Some(r) => self.accumulate(spec, tau, Some(r)),
            None => self.accumulate(spec, 0.0, None),
        }
    }

    fn accumulate(&mut self, spec: &MelSpectrogram, tau: f32, mut rng: Option<&mut SessionRng>) -> Result<ElboTerms> {
        let x = self.input(spec)?;
        let enc = self.encode_pass(&x, rng.as_deref_mut())?;
        let eps: Vec<f32> = match rng {
            Some(r) => (0..self.cfg.latent_dim).map(|_| normal(r)).collect(),
            None => vec![0.0; self.cfg.latent_dim],
        };
        let sigma: Vec<f32> = enc.log_sigma.iter().map(|ls| ls.exp()).collect();
        let z: Vec<f32> = (0..eps.len()).map(|i| enc.mu[i] + tau * eps[i] * sigma[i]).collect();
        let dec = self.decode_pass(&z)?;

        let cells = dec.logits.len() as f64;
        let (bce_mean, mut grad) = loss::bce_with_logits(&dec.logits, x.data())?;
        grad.iter_mut().for_each(|g| *g *= cells as f32);
        let (kl, dmu_kl, dls_kl) = loss::kl_gaussian(&enc.mu, &enc.log_sigma)?;
        let terms = ElboTerms::new(bce_mean * cells, kl);

        let mut g = Tensor::new(vec![1, self.cfg.input_size, self.cfg.input_size], grad)?;
        for i in (0..4).rev() {
            if i < 3 {
                // The post-ReLU output of layer i is the stored input of layer i + 1.
                relu_backward(dec.inputs[i + 1].data(), g.data_mut());
            }
            g = self.decoder[i].backward(&dec.inputs[i], &g)?;
        }
        let dz = self.project.backward(&z, g.data(), 1)?;
        let dmu: Vec<f32> = (0..dz.len()).map(|i| dz[i] + dmu_kl[i]).collect();
        let dls: Vec<f32> = (0..dz.len())
            .map(|i| dz[i] * tau * eps[i] * sigma[i] + dls_kl[i])
            .collect();
        let mut dflat = self.mu.backward(&enc.flat, &dmu, 1)?;
        let d2 = self.log_sigma.backward(&enc.flat, &dls, 1)?;
        dflat.iter_mut().zip(&d2).for_each(|(a, b)| *a += b);

        let mut g = Tensor::new(enc.activations[3].shape().to_vec(), dflat)?;
        for i in (0..4).rev() {
            if let Some(mask) = &enc.masks[i] {
                g.data_mut().iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
            }
            relu_backward(enc.activations[i].data(), g.data_mut());
            g = self.encoder[i].backward(&enc.caches[i], &g)?;
        }
        Ok(terms)
    }

    pub fn checkpoint(&self, step: u64, rng: &SessionRng) -> Result<Checkpoint> {
        Ok(Checkpoint::capture(CHECKPOINT_KIND, self, step, rng, serde_json::to_string(&self.cfg)?))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let cfg: SpecVaeConfig = serde_json::from_str(&ckpt.config)?;
        let mut model = Self::new(cfg, &mut SessionRng::new(0))?;
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

impl Module for SpecVae {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            out.extend(prefixed(&format!("enc{i}"), l.params()));
        }
        out.extend(prefixed("mu", self.mu.params()));
        out.extend(prefixed("log_sigma", self.log_sigma.params()));
        out.extend(prefixed("project", self.project.params()));
        for (i, l) in self.decoder.iter().enumerate() {
            out.extend(prefixed(&format!("dec{i}"), l.params()));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.iter_mut().enumerate() {
            out.extend(prefixed_mut(&format!("enc{i}"), l.params_mut()));
        }
        out.extend(prefixed_mut("mu", self.mu.params_mut()));
        out.extend(prefixed_mut("log_sigma", self.log_sigma.params_mut()));
        out.extend(prefixed_mut("project", self.project.params_mut()));
        for (i, l) in self.decoder.iter_mut().enumerate() {
            out.extend(prefixed_mut(&format!("dec{i}"), l.params_mut()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecVaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub tau: f32,
    pub seed: u64,
}

impl Default for SpecVaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            lr: 1e-4,
            tau: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SpecVaeTrace {
    /// Batch-mean terms for every optimizer step.
    pub steps: Vec<ElboTerms>,
    /// Mean of the step terms within each epoch.
    pub epochs: Vec<ElboTerms>,
    /// Reconstruction BCE of the first training sample from its posterior mean, after each epoch.
    pub probe_bce: Vec<f64>,
}

/// Train in place. On a non-finite loss the model is rolled back to the
/// last good weights and `CoreError::Diverged` is returned.
pub fn train(model: &mut SpecVae, data: &[MelSpectrogram], cfg: &SpecVaeTrainConfig) -> Result<SpecVaeTrace> {
    if cfg.batch_size == 0 || data.len() < 2 * cfg.batch_size {
        return Err(CoreError::Config(format!(
            "need at least two batches of {} spectrograms, got {}",
            cfg.batch_size,
            data.len()
        )));
    }
    let mut rng = SessionRng::new(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let mut trace = SpecVaeTrace::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last_good = model.clone();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let first_step = trace.steps.len();
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grad();
            let (mut bce, mut kl) = (0.0, 0.0);
            for &i in batch {
                let t = model.accumulate(&data[i], cfg.tau, Some(&mut rng))?;
                bce += t.bce;
                kl += t.kl;
            }
            let n = batch.len() as f64;
            let terms = ElboTerms::new(bce / n, kl / n);
            if !terms.total.is_finite() || !model.grads_finite() {
                *model = last_good;
                return Err(CoreError::Diverged {
                    step: trace.steps.len() as u64,
                    detail: format!("loss {:?}", terms),
                });
            }
            model.scale_grad(1.0 / n as f32);
            opt.step(model.params_mut().into_iter().map(|(_, p)| p));
            trace.steps.push(terms);
            last_good.clone_from(model);
        }
        let window = &trace.steps[first_step..];
        let k = window.len() as f64;
        trace.epochs.push(ElboTerms::new(
            window.iter().map(|t| t.bce).sum::<f64>() / k,
            window.iter().map(|t| t.kl).sum::<f64>() / k,
        ));
        trace.probe_bce.push(model.reconstruction_bce(&data[0])?);
        log::info!(
            "spec-vae epoch {}: bce {:.1} kl {:.2} total {:.1}",
            trace.epochs.len(),
            trace.epochs.last().unwrap().bce,
            trace.epochs.last().unwrap().kl,
            trace.epochs.last().unwrap().total
        );
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Origin;

    #[test]
    fn default_chain() {
        assert_eq!(SpecVaeConfig::default().encoder_chain().unwrap(), vec![94, 45, 20, 8, 2]);
    }

    #[test]
    fn unpadded_64_rejected() {
        let cfg = SpecVaeConfig {
            input_size: 64,
            ..Default::default()
        };
        let err = SpecVae::new(cfg, &mut SessionRng::new(0)).unwrap_err();
        assert!(err.to_string().contains("layer 4"), "{err}");
    }

    #[test]
    fn decoder_restores_input_size() {
        let model = SpecVae::new(SpecVaeConfig::default(), &mut SessionRng::new(0)).unwrap();
        let out = model.decode(&LatentCode::new(vec![0.1; 128], Origin::Spec)).unwrap();
        assert_eq!((out.n_mels, out.n_frames), (94, 94));
        assert!(out.values.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
