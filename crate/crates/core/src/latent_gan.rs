//! Next-clip latent prediction.
//!
//! G maps `fuse(z_prev, z_t)` to ẑ. D sees `z_t + z_next` as real and
//! `z_t + ẑ` as generated. G minimizes the non-saturating adversarial loss
//! plus `λ · MSE(ẑ, z_next)`. One D update per G update.

use std::io::Write;
use std::path::Path;

use echoloop_neural::activation::{leaky_relu_backward, leaky_relu_inplace, sigmoid};
use echoloop_neural::linalg::gemm;
use echoloop_neural::param::{prefixed, prefixed_mut};
use echoloop_neural::{loss, Adam, Checkpoint, Dense, Module, Param, SessionRng, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{AlignedLine, ClipRecord};
use crate::error::{CoreError, Result};
use crate::latent::{LatentCode, LatentDistribution, Origin, LATENT_DIM};
use crate::text_cvae::TextCvae;

pub const CHECKPOINT_KIND: &str = "latent-gan";
const SLOPE: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Add,
    Hadamard,
    Weighted,
}

impl std::str::FromStr for FusionMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(Self::Add),
            "hadamard" => Ok(Self::Hadamard),
            "weighted" => Ok(Self::Weighted),
            other => Err(CoreError::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub fusion: FusionMode,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub lambda_mse: f32,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            fusion: FusionMode::Add,
            latent_dim: LATENT_DIM,
            hidden_dim: 256,
            lambda_mse: 2.0,
        }
    }
}

/// Three dense layers with leaky ReLU between them.
#[derive(Debug, Clone)]
struct Mlp {
    layers: [Dense; 3],
}

struct MlpPass {
    /// Input to each layer.
    inputs: Vec<Vec<f32>>,
    out: Vec<f32>,
}

impl Mlp {
    fn new(dims: [usize; 4], rng: &mut SessionRng) -> Self {
        Self {
            layers: [
                Dense::new(dims[0], dims[1], rng),
                Dense::new(dims[1], dims[2], rng),
                Dense::new(dims[2], dims[3], rng),
            ],
        }
    }

    fn forward(&self, x: &[f32], batch: usize) -> Result<MlpPass> {
        let mut inputs = Vec::with_capacity(3);
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&h, batch)?;
            if i < 2 {
                leaky_relu_inplace(&mut y, SLOPE);
            }
            inputs.push(h);
            h = y;
        }
        Ok(MlpPass { inputs, out: h })
    }

    fn backward(&mut self, pass: &MlpPass, grad: &[f32], batch: usize) -> Result<Vec<f32>> {
        let mut g = grad.to_vec();
        for i in (0..3).rev() {
            if i < 2 {
                leaky_relu_backward(&pass.inputs[i + 1], &mut g, SLOPE);
            }
            g = self.layers[i].backward(&pass.inputs[i], &g, batch)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(prefixed(&format!("l{i}"), l.params()));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(prefixed_mut(&format!("l{i}"), l.params_mut()));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GanModel {
    cfg: GanConfig,
    generator: Mlp,
    discriminator: Mlp,
    /// `W_s`, `W_t` for weighted fusion; identity at initialization.
    w_s: Param,
    w_t: Param,
}

fn identity(n: usize) -> Param {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    Param::new(Tensor::new(vec![n, n], data).expect("square"))
}

/// Row-batched `x W^T` for a square `W`.
fn matmul_t(x: &[f32], w: &Param, batch: usize, n: usize) -> Vec<f32> {
    let mut y = vec![0.0; batch * n];
    gemm(false, true, batch, n, n, 1.0, x, w.data(), 0.0, &mut y);
    y
}

impl GanModel {
    pub fn new(cfg: GanConfig, rng: &mut SessionRng) -> Result<Self> {
        if cfg.latent_dim == 0 || cfg.hidden_dim == 0 || !(cfg.lambda_mse >= 0.0) {
            return Err(CoreError::Config("gan dimensions must be positive and λ non-negative".into()));
        }
        let (l, h) = (cfg.latent_dim, cfg.hidden_dim);
        Ok(Self {
            generator: Mlp::new([l, h, h, l], rng),
            discriminator: Mlp::new([l, h, h, 1], rng),
            w_s: identity(l),
            w_t: identity(l),
            cfg,
        })
    }

    pub fn config(&self) -> &GanConfig {
        &self.cfg
    }

    pub fn set_fusion_weights(&mut self, w_s: Vec<f32>, w_t: Vec<f32>) -> Result<()> {
        let n = self.cfg.latent_dim;
        self.w_s.value = Tensor::new(vec![n, n], w_s)?;
        self.w_t.value = Tensor::new(vec![n, n], w_t)?;
        Ok(())
    }

    /// Row-batched fusion of `[batch, L]` inputs.
    pub fn fuse_batch(&self, z_prev: &[f32], z_t: &[f32], batch: usize) -> Vec<f32> {
        let n = self.cfg.latent_dim;
        match self.cfg.fusion {
            FusionMode::Add => z_prev.iter().zip(z_t).map(|(a, b)| a + b).collect(),
            FusionMode::Hadamard => z_prev.iter().zip(z_t).map(|(a, b)| a * b).collect(),
            FusionMode::Weighted => {
                let mut y = matmul_t(z_prev, &self.w_s, batch, n);
                y.iter_mut().zip(matmul_t(z_t, &self.w_t, batch, n)).for_each(|(a, b)| *a += b);
                y
            }
        }
    }

    /// Accumulates `W_s`, `W_t` gradients in weighted mode; other modes have no parameters.
    fn fuse_backward(&mut self, z_prev: &[f32], z_t: &[f32], grad: &[f32], batch: usize) {
        if self.cfg.fusion == FusionMode::Weighted {
            let n = self.cfg.latent_dim;
            gemm(true, false, n, n, batch, 1.0, grad, z_prev, 1.0, &mut self.w_s.grad);
            gemm(true, false, n, n, batch, 1.0, grad, z_t, 1.0, &mut self.w_t.grad);
        }
    }

    fn check(&self, v: &[f32], what: &str) -> Result<()> {
        if v.len() != self.cfg.latent_dim {
            return Err(CoreError::Config(format!(
                "{what} has {} dims, expected {}",
                v.len(),
                self.cfg.latent_dim
            )));
        }
        Ok(())
    }

    pub fn fuse(&self, z_prev: &[f32], z_t: &[f32]) -> Result<Vec<f32>> {
        self.check(z_prev, "z_prev")?;
        self.check(z_t, "z_t")?;
        Ok(self.fuse_batch(z_prev, z_t, 1))
    }

    /// ẑ = G(fuse(z_prev, z_t)).
    pub fn predict_next(&self, z_prev: &LatentCode, z_t: &LatentCode) -> Result<LatentCode> {
        let fused = self.fuse(&z_prev.z, &z_t.z)?;
        Ok(LatentCode::new(self.generator.forward(&fused, 1)?.out, Origin::GanPredicted))
    }

    /// D's probability that `z_t + candidate` is a real pairing.
    pub fn discriminate(&self, z_t: &[f32], candidate: &[f32]) -> Result<f32> {
        self.check(z_t, "z_t")?;
        self.check(candidate, "candidate")?;
        let x: Vec<f32> = z_t.iter().zip(candidate).map(|(a, b)| a + b).collect();
        Ok(sigmoid(self.discriminator.forward(&x, 1)?.out[0]))
    }

    fn generator_params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.generator.params_mut().into_iter().map(|(_, p)| p).collect();
        if self.cfg.fusion == FusionMode::Weighted {
            out.push(&mut self.w_s);
            out.push(&mut self.w_t);
        }
        out
    }

    pub fn checkpoint(&self, step: u64, rng: &SessionRng) -> Result<Checkpoint> {
        Ok(Checkpoint::capture(CHECKPOINT_KIND, self, step, rng, serde_json::to_string(&self.cfg)?))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let cfg: GanConfig = serde_json::from_str(&ckpt.config)?;
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

impl Module for GanModel {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut out = prefixed("g", self.generator.params());
        out.extend(prefixed("d", self.discriminator.params()));
        out.push(("fusion.w_s".into(), &self.w_s));
        out.push(("fusion.w_t".into(), &self.w_t));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = prefixed_mut("g", self.generator.params_mut());
        out.extend(prefixed_mut("d", self.discriminator.params_mut()));
        out.push(("fusion.w_s".into(), &mut self.w_s));
        out.push(("fusion.w_t".into(), &mut self.w_t));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleSample {
    pub z_s_prev: Vec<f32>,
    pub z_t: Vec<f32>,
    pub z_s_next: Vec<f32>,
}

/// Consecutive clips `(i-1, i)` of each composition joined with the latent
/// of the line aligned to clip `i`. Each clip's code is sampled once and
/// reused in both roles; the line is encoded under the previous clip's
/// code, as it is at inference time.
pub fn build_triples(
    manifest: &[ClipRecord],
    posteriors: &[LatentDistribution],
    aligned: &[AlignedLine],
    text: &TextCvae,
    tau: f32,
    rng: &mut SessionRng,
) -> Result<Vec<TripleSample>> {
    if manifest.len() != posteriors.len() {
        return Err(CoreError::Config(format!(
            "{} manifest records but {} posteriors",
            manifest.len(),
            posteriors.len()
        )));
    }
    let codes = posteriors
        .iter()
        .map(|d| d.sample(tau, Origin::Spec, rng))
        .collect::<Result<Vec<_>>>()?;
    let lines: std::collections::HashMap<&str, &str> =
        aligned.iter().map(|a| (a.clip_id.as_str(), a.text.as_str())).collect();
    let mut by_composition: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (i, r) in manifest.iter().enumerate() {
        by_composition.entry(&r.composition_id).or_default().push(i);
    }
    let mut triples = Vec::new();
    for clips in by_composition.values_mut() {
        clips.sort_by(|&a, &b| manifest[a].offset_s.total_cmp(&manifest[b].offset_s));
        for pair in clips.windows(2) {
            let (prev, next) = (pair[0], pair[1]);
            let Some(text_line) = lines.get(manifest[next].clip_id.as_str()) else {
                continue;
            };
            let Ok(tokens) = text.vocab().encode_strict(text_line) else {
                continue;
            };
            let z_t = text.encode_tokens(&tokens, &codes[prev])?.sample(tau, Origin::Text, rng)?;
            triples.push(TripleSample {
                z_s_prev: codes[prev].z.clone(),
                z_t: z_t.z,
                z_s_next: codes[next].z.clone(),
            });
        }
    }
    Ok(triples)
}

/// `u32` count, then per record three `LATENT_DIM` f32 vectors, all little-endian.
pub fn write_triples(path: impl AsRef<Path>, triples: &[TripleSample]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(&(triples.len() as u32).to_le_bytes())?;
    for t in triples {
        for v in [&t.z_s_prev, &t.z_t, &t.z_s_next] {
            if v.len() != LATENT_DIM {
                return Err(CoreError::Config(format!("triple vector has {} dims", v.len())));
            }
            for x in v {
                out.write_all(&x.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_triples(path: impl AsRef<Path>) -> Result<Vec<TripleSample>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let bad = |detail: String| CoreError::Format {
        path: path.display().to_string(),
        detail,
    };
    if bytes.len() < 4 {
        return Err(bad("missing count header".into()));
    }
    let count = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let record = 3 * LATENT_DIM * 4;
    if bytes.len() != 4 + count * record {
        return Err(bad(format!("{count} records need {} bytes, found {}", 4 + count * record, bytes.len())));
    }
    let floats: Vec<f32> = bytes[4..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(floats
        .chunks_exact(3 * LATENT_DIM)
        .map(|r| TripleSample {
            z_s_prev: r[..LATENT_DIM].to_vec(),
            z_t: r[LATENT_DIM..2 * LATENT_DIM].to_vec(),
            z_s_next: r[2 * LATENT_DIM..].to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    /// Consecutive steps of perfect D accuracy before a collapse warning.
    pub collapse_window: usize,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            collapse_window: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanStep {
    pub d_loss: f64,
    pub g_adv: f64,
    pub mse: f64,
    /// D accuracy on the batch it was just trained on, before the update.
    pub d_accuracy: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GanTrace {
    pub steps: Vec<GanStep>,
    /// Step indices at which a collapse warning fired.
    pub collapse_warnings: Vec<usize>,
}

/// Counts consecutive steps of perfect discriminator accuracy.
#[derive(Debug, Clone)]
pub struct CollapseMonitor {
    window: usize,
    run: usize,
}

impl CollapseMonitor {
    pub fn new(window: usize) -> Self {
        Self { window, run: 0 }
    }

    /// True once per completed window of perfect accuracy.
    pub fn observe(&mut self, d_accuracy: f64) -> bool {
        self.run = if d_accuracy >= 1.0 { self.run + 1 } else { 0 };
        if self.window > 0 && self.run == self.window {
            self.run = 0;
            return true;
        }
        false
    }
}

fn stack(rows: &[&Vec<f32>]) -> Vec<f32> {
    rows.iter().flat_map(|r| r.iter().copied()).collect()
}

pub fn train(model: &mut GanModel, triples: &[TripleSample], cfg: &GanTrainConfig) -> Result<GanTrace> {
    if triples.is_empty() || cfg.batch_size == 0 {
        return Err(CoreError::Config("gan training needs triples and a positive batch size".into()));
    }
    let l = model.cfg.latent_dim;
    if let Some(t) = triples
        .iter()
        .find(|t| t.z_s_prev.len() != l || t.z_t.len() != l || t.z_s_next.len() != l)
    {
        return Err(CoreError::Config(format!("triple with dims {}/{}/{}", t.z_s_prev.len(), t.z_t.len(), t.z_s_next.len())));
    }
    let mut rng = SessionRng::new(cfg.seed);
    let mut opt_d = Adam::new(cfg.lr);
    let mut opt_g = Adam::new(cfg.lr);
    let mut trace = GanTrace::default();
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut monitor = CollapseMonitor::new(cfg.collapse_window);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let prev = stack(&batch.iter().map(|&i| &triples[i].z_s_prev).collect::<Vec<_>>());
            let zt = stack(&batch.iter().map(|&i| &triples[i].z_t).collect::<Vec<_>>());
            let next = stack(&batch.iter().map(|&i| &triples[i].z_s_next).collect::<Vec<_>>());

            let fused = model.fuse_batch(&prev, &zt, b);
            let g_pass = model.generator.forward(&fused, b)?;
            let z_hat = &g_pass.out;

            // Discriminator: real rows first, generated rows second.
            let mut d_in: Vec<f32> = zt.iter().zip(&next).map(|(a, c)| a + c).collect();
            d_in.extend(zt.iter().zip(z_hat).map(|(a, c)| a + c));
            let labels: Vec<f32> = (0..2 * b).map(|i| if i < b { 1.0 } else { 0.0 }).collect();
            model.discriminator.params_mut().into_iter().for_each(|(_, p)| p.zero_grad());
            let d_pass = model.discriminator.forward(&d_in, 2 * b)?;
            let (d_mean, d_grad) = loss::bce_with_logits(&d_pass.out, &labels)?;
            let correct = d_pass
                .out
                .iter()
                .zip(&labels)
                .filter(|(logit, y)| (**logit > 0.0) == (**y > 0.5))
                .count();
            model.discriminator.backward(&d_pass, &d_grad, 2 * b)?;
            opt_d.step(model.discriminator.params_mut().into_iter().map(|(_, p)| p));

            // Generator: fool the updated D and regress onto z_next.
            let fake_in: Vec<f32> = zt.iter().zip(z_hat).map(|(a, c)| a + c).collect();
            let f_pass = model.discriminator.forward(&fake_in, b)?;
            let (adv, adv_grad) = loss::bce_with_logits(&f_pass.out, &vec![1.0; b])?;
            let d_fake = model.discriminator.backward(&f_pass, &adv_grad, b)?;
            model.discriminator.params_mut().into_iter().for_each(|(_, p)| p.zero_grad());
            let (mse, mse_grad) = loss::mse(z_hat, &next)?;
            let dz: Vec<f32> = d_fake
                .iter()
                .zip(&mse_grad)
                .map(|(a, m)| a + model.cfg.lambda_mse * m)
                .collect();
            model.generator.params_mut().into_iter().for_each(|(_, p)| p.zero_grad());
            model.w_s.zero_grad();
            model.w_t.zero_grad();
            let d_fused = model.generator.backward(&g_pass, &dz, b)?;
            model.fuse_backward(&prev, &zt, &d_fused, b);
            opt_g.step(model.generator_params_mut());

            let step = GanStep {
                d_loss: 2.0 * d_mean,
                g_adv: adv,
                mse,
                d_accuracy: correct as f64 / (2 * b) as f64,
            };
            if !(step.d_loss.is_finite() && step.g_adv.is_finite() && step.mse.is_finite()) {
                return Err(CoreError::Diverged {
                    step: trace.steps.len() as u64,
                    detail: format!("{step:?}"),
                });
            }
            if monitor.observe(step.d_accuracy) {
                log::warn!(
                    "discriminator accuracy pinned at 1.0 for {} steps (step {}); generator may have collapsed",
                    cfg.collapse_window,
                    trace.steps.len()
                );
                trace.collapse_warnings.push(trace.steps.len());
            }
            trace.steps.push(step);
        }
    }
    Ok(trace)
}

/// Mean squared error of G's predictions over a dataset.
pub fn prediction_mse(model: &GanModel, triples: &[TripleSample]) -> Result<f64> {
    let mut total = 0.0;
    for t in triples {
        let z = model.generator.forward(&model.fuse(&t.z_s_prev, &t.z_t)?, 1)?.out;
        total += loss::mse(&z, &t.z_s_next)?.0;
    }
    Ok(total / triples.len().max(1) as f64)
}

/// D accuracy over real pairings and G's current predictions.
pub fn discriminator_accuracy(model: &GanModel, triples: &[TripleSample]) -> Result<f64> {
    let mut correct = 0usize;
    for t in triples {
        let z_hat = model.generator.forward(&model.fuse(&t.z_s_prev, &t.z_t)?, 1)?.out;
        correct += usize::from(model.discriminate(&t.z_t, &t.z_s_next)? > 0.5);
        correct += usize::from(model.discriminate(&t.z_t, &z_hat)? <= 0.5);
    }
    Ok(correct as f64 / (2 * triples.len().max(1)) as f64)
}
