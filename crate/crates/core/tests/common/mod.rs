#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use echoloop_core::corpus::SyntheticCorpusSpec;
use echoloop_core::latent_gan::GanTrainConfig;
use echoloop_core::pipeline::{run, PipelineConfig, TrainedSystem};
use echoloop_core::session::SessionModels;
use echoloop_core::spec_vae::SpecVaeTrainConfig;
use echoloop_core::text_cvae::TextTrainConfig;

/// Six compositions of six clips, briefly trained. Good enough for loop
/// mechanics, not for retrieval quality.
pub fn small_system() -> &'static TrainedSystem {
    static SYSTEM: OnceLock<TrainedSystem> = OnceLock::new();
    SYSTEM.get_or_init(|| {
        let cfg = PipelineConfig {
            corpus: SyntheticCorpusSpec {
                drone: 2,
                percussion: 2,
                keyboard: 2,
                clips_per_composition: 6,
                ..Default::default()
            },
            spec_train: SpecVaeTrainConfig {
                epochs: 2,
                lr: 1e-3,
                ..Default::default()
            },
            text_train: TextTrainConfig {
                epochs: 2,
                batch_size: 8,
                ..Default::default()
            },
            gan_train: GanTrainConfig {
                epochs: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        run(&cfg).unwrap()
    })
}

pub fn small_models() -> Arc<SessionModels> {
    static MODELS: OnceLock<Arc<SessionModels>> = OnceLock::new();
    MODELS.get_or_init(|| Arc::new(small_system().models())).clone()
}

/// The default desk-scale pipeline: 576 clips, full training schedule.
pub fn full_system() -> &'static TrainedSystem {
    static SYSTEM: OnceLock<TrainedSystem> = OnceLock::new();
    SYSTEM.get_or_init(|| run(&PipelineConfig::default()).unwrap())
}

pub fn full_models() -> Arc<SessionModels> {
    static MODELS: OnceLock<Arc<SessionModels>> = OnceLock::new();
    MODELS.get_or_init(|| Arc::new(full_system().models())).clone()
}
