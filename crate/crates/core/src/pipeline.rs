//! End-to-end training on a synthetic corpus, and loading trained artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use echoloop_neural::SessionRng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    generate_synthetic_corpus, read_jsonl, ClipRecord, MelSpectrogram, RecordingStore, SpectroConfig, SyntheticCorpus,
    SyntheticCorpusSpec,
};
use crate::error::Result;
use crate::latent::LatentDistribution;
use crate::latent_gan::{self, GanConfig, GanModel, GanTrace, GanTrainConfig, TripleSample};
use crate::retrieval::LatentIndex;
use crate::session::{default_ranker, SessionModels};
use crate::spec_vae::{self, SpecVae, SpecVaeConfig, SpecVaeTrace, SpecVaeTrainConfig};
use crate::text_cvae::{self, aligned_pairs, TextCvae, TextCvaeConfig, TextTrace, TextTrainConfig, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: SyntheticCorpusSpec,
    pub spectro: SpectroConfig,
    pub spec_vae: SpecVaeConfig,
    pub spec_train: SpecVaeTrainConfig,
    pub text: TextCvaeConfig,
    pub text_train: TextTrainConfig,
    pub min_word_freq: usize,
    pub gan: GanConfig,
    pub gan_train: GanTrainConfig,
    pub triples_tau: f32,
    pub index_tau: f32,
    pub seed: u64,
}

impl Default for PipelineConfig {
    /// Desk-scale settings: the full synthetic corpus, a shortened spec-VAE
    /// schedule at a higher learning rate, and a few text epochs.
    fn default() -> Self {
        Self {
            corpus: SyntheticCorpusSpec::default(),
            spectro: SpectroConfig::default(),
            spec_vae: SpecVaeConfig::default(),
            spec_train: SpecVaeTrainConfig {
                epochs: 30,
                lr: 1e-3,
                ..Default::default()
            },
            text: TextCvaeConfig::default(),
            text_train: TextTrainConfig {
                epochs: 5,
                ..Default::default()
            },
            min_word_freq: 2,
            gan: GanConfig::default(),
            gan_train: GanTrainConfig::default(),
            triples_tau: 1.0,
            index_tau: 1.0,
            seed: 0,
        }
    }
}

pub struct TrainedSystem {
    pub config: PipelineConfig,
    pub corpus: SyntheticCorpus,
    pub spectrograms: Vec<MelSpectrogram>,
    pub spec_vae: SpecVae,
    pub spec_trace: SpecVaeTrace,
    pub posteriors: Vec<LatentDistribution>,
    pub text: TextCvae,
    pub text_trace: TextTrace,
    pub triples: Vec<TripleSample>,
    pub gan: GanModel,
    pub gan_trace: GanTrace,
    pub index: LatentIndex,
}

pub fn run(cfg: &PipelineConfig) -> Result<TrainedSystem> {
    let root = SessionRng::new(cfg.seed);
    let t = Instant::now();
    let corpus = generate_synthetic_corpus(&cfg.corpus)?;
    let spectrograms = corpus.spectrograms(&cfg.spectro)?;
    log::info!("corpus: {} clips in {:.1?}", corpus.manifest.len(), t.elapsed());

    let mut spec = SpecVae::new(cfg.spec_vae.clone(), &mut root.fork(1))?;
    let spec_trace = spec_vae::train(&mut spec, &spectrograms, &cfg.spec_train)?;
    let posteriors = spectrograms.iter().map(|s| spec.encode(s)).collect::<Result<Vec<_>>>()?;
    log::info!("spec-vae trained in {:.1?}", t.elapsed());

    let lines: Vec<&str> = corpus.aligned.iter().map(|a| a.text.as_str()).collect();
    let vocab = Vocabulary::build(&lines, cfg.min_word_freq);
    let pairs = aligned_pairs(&corpus.aligned, &corpus.manifest, &vocab)?;
    let mut text = TextCvae::new(cfg.text.clone(), vocab, &mut root.fork(2))?;
    let text_trace = text_cvae::train(&mut text, &pairs, &posteriors, &cfg.text_train)?;
    log::info!("text-cvae trained in {:.1?}", t.elapsed());

    let triples = latent_gan::build_triples(
        &corpus.manifest,
        &posteriors,
        &corpus.aligned,
        &text,
        cfg.triples_tau,
        &mut root.fork(3),
    )?;
    let mut gan = GanModel::new(cfg.gan.clone(), &mut root.fork(4))?;
    let gan_trace = latent_gan::train(&mut gan, &triples, &cfg.gan_train)?;
    log::info!("gan trained on {} triples in {:.1?}", triples.len(), t.elapsed());

    let index = LatentIndex::build(&corpus.manifest, &spectrograms, &spec, cfg.index_tau, &mut root.fork(5))?;
    Ok(TrainedSystem {
        config: cfg.clone(),
        corpus,
        spectrograms,
        spec_vae: spec,
        spec_trace,
        posteriors,
        text,
        text_trace,
        triples,
        gan,
        gan_trace,
        index,
    })
}

/// Loads each record's spectrogram; record paths are relative to `corpus_dir`.
pub fn load_spectrograms(manifest: &[ClipRecord], corpus_dir: impl AsRef<Path>, cfg: &SpectroConfig) -> Result<Vec<MelSpectrogram>> {
    let dir = corpus_dir.as_ref();
    let id = cfg.id();
    manifest
        .iter()
        .map(|r| MelSpectrogram::load(dir.join(&r.spectrogram_path), &id))
        .collect()
}

/// Where a trained system lives on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub manifest: PathBuf,
    pub recordings: PathBuf,
    pub spec_ckpt: PathBuf,
    pub text_ckpt: PathBuf,
    pub gan_ckpt: PathBuf,
    pub index: PathBuf,
}

impl ArtifactPaths {
    /// The layout [`TrainedSystem::save`] writes under `dir`.
    pub fn under(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            manifest: d.join("corpus/manifest.jsonl"),
            recordings: d.join("corpus/recordings"),
            spec_ckpt: d.join("models/spec_vae.ckpt"),
            text_ckpt: d.join("models/text_cvae.ckpt"),
            gan_ckpt: d.join("models/gan.ckpt"),
            index: d.join("models/index.bin"),
        }
    }
}

impl TrainedSystem {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<ArtifactPaths> {
        let dir = dir.as_ref();
        let paths = ArtifactPaths::under(dir);
        self.corpus.write(dir.join("corpus"), &self.config.spectro)?;
        std::fs::create_dir_all(dir.join("models"))?;
        let rng = SessionRng::new(self.config.seed);
        self.spec_vae.save(&paths.spec_ckpt, self.spec_trace.steps.len() as u64, &rng)?;
        self.text.save(&paths.text_ckpt, self.text_trace.steps.len() as u64, &rng)?;
        self.gan.save(&paths.gan_ckpt, self.gan_trace.steps.len() as u64, &rng)?;
        latent_gan::write_triples(dir.join("models/triples.bin"), &self.triples)?;
        self.index.save(&paths.index)?;
        std::fs::write(dir.join("pipeline.json"), serde_json::to_vec_pretty(&self.config)?)?;
        Ok(paths)
    }

    pub fn models(&self) -> SessionModels {
        let mut manifest = self.corpus.manifest.clone();
        manifest.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        SessionModels {
            spec_vae: self.spec_vae.clone(),
            text: self.text.clone(),
            gan: self.gan.clone(),
            index: self.index.clone(),
            manifest,
            recordings: RecordingStore::from_synthetic(&self.corpus),
            spectro: self.config.spectro.clone(),
            ranker: default_ranker(),
        }
    }
}

impl SessionModels {
    pub fn load(paths: &ArtifactPaths, spectro: SpectroConfig) -> Result<Self> {
        let mut manifest: Vec<ClipRecord> = read_jsonl(&paths.manifest)?;
        manifest.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        let models = Self {
            spec_vae: SpecVae::load(&paths.spec_ckpt)?,
            text: TextCvae::load(&paths.text_ckpt)?,
            gan: GanModel::load(&paths.gan_ckpt)?,
            index: LatentIndex::load(&paths.index)?,
            recordings: RecordingStore::load_dir(&paths.recordings, spectro.sample_rate)?,
            manifest,
            spectro,
            ranker: default_ranker(),
        };
        models.validate()?;
        Ok(models)
    }
}
