use std::path::{Path, PathBuf};

use echoloop_core::corpus::SpectroConfig;
use echoloop_core::evalsuite::{EvalConfig, PairsConfig, IMPACT_NS, PRECISION_CUTOFFS};
use echoloop_core::pipeline::ArtifactPaths;
use echoloop_core::session::SessionConfig;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// Settings for `run` and `eval`, read from TOML. Relative paths resolve
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Directory holding a trained system in the `train-all` layout.
    pub artifacts: Option<PathBuf>,
    /// Explicit artifact paths; wins over `artifacts`.
    pub paths: Option<ArtifactPaths>,
    pub tcp_addr: String,
    pub http_addr: String,
    pub feedback_log: PathBuf,
    /// Stream seconds per wall-clock second.
    pub playback_speed: f64,
    /// Stream seconds before a clip boundary at which the next step is computed.
    pub compute_lead_s: f64,
    pub session: SessionConfig,
    pub spectro: SpectroConfig,
    pub eval: EvalSection,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            artifacts: None,
            paths: None,
            tcp_addr: "127.0.0.1:7400".into(),
            http_addr: "127.0.0.1:7401".into(),
            feedback_log: PathBuf::from("feedback.jsonl"),
            playback_speed: 1.0,
            compute_lead_s: 2.0,
            session: SessionConfig::default(),
            spectro: SpectroConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Conditioning clips; empty means every `stride`-th catalogue clip.
    pub clips: Vec<String>,
    pub stride: usize,
    pub cutoffs: Vec<usize>,
    pub iterations: usize,
    pub impact_n: Vec<usize>,
    pub out_dir: PathBuf,
    pub settings: EvalConfig,
    pub pairs: PairsConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            clips: Vec::new(),
            stride: 1,
            cutoffs: PRECISION_CUTOFFS.to_vec(),
            iterations: 10,
            impact_n: IMPACT_NS.to_vec(),
            out_dir: PathBuf::from("eval"),
            settings: EvalConfig::default(),
            pairs: PairsConfig::default(),
        }
    }
}

pub const ENV_OVERRIDES: [&str; 5] = [
    "ECHOLOOP_TCP_ADDR",
    "ECHOLOOP_HTTP_ADDR",
    "ECHOLOOP_ARTIFACTS",
    "ECHOLOOP_FEEDBACK_LOG",
    "ECHOLOOP_PLAYBACK_SPEED",
];

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_relative(path.parent().unwrap_or(Path::new(".")));
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        if let Some(v) = lookup("ECHOLOOP_TCP_ADDR") {
            self.tcp_addr = v;
        }
        if let Some(v) = lookup("ECHOLOOP_HTTP_ADDR") {
            self.http_addr = v;
        }
        if let Some(v) = lookup("ECHOLOOP_ARTIFACTS") {
            self.artifacts = Some(v.into());
            self.paths = None;
        }
        if let Some(v) = lookup("ECHOLOOP_FEEDBACK_LOG") {
            self.feedback_log = v.into();
        }
        if let Some(v) = lookup("ECHOLOOP_PLAYBACK_SPEED") {
            self.playback_speed = v
                .parse()
                .map_err(|_| ServiceError::Config(format!("ECHOLOOP_PLAYBACK_SPEED={v:?} is not a number")))?;
        }
        Ok(())
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(a) = &mut self.artifacts {
            fix(a);
        }
        if let Some(p) = &mut self.paths {
            for q in [&mut p.manifest, &mut p.recordings, &mut p.spec_ckpt, &mut p.text_ckpt, &mut p.gan_ckpt, &mut p.index] {
                fix(q);
            }
        }
        fix(&mut self.feedback_log);
        fix(&mut self.eval.out_dir);
    }

    pub fn artifact_paths(&self) -> Result<ArtifactPaths, ServiceError> {
        match (&self.paths, &self.artifacts) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(ArtifactPaths::under(dir)),
            (None, None) => Err(ServiceError::Config("set `artifacts` or `paths`".into())),
        }
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if !(self.playback_speed.is_finite() && self.playback_speed > 0.0) {
            return Err(ServiceError::Config("playback_speed must be positive".into()));
        }
        if !(self.compute_lead_s >= 0.0) {
            return Err(ServiceError::Config("compute_lead_s must be non-negative".into()));
        }
        self.session.validate()?;
        Ok(())
    }
}
