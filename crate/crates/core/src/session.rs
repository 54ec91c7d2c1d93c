//! The generative loop: clip → line → predicted clip → retrieved clip, repeated.
//!
//! Conditioning precedence for a step is live clip > pinned clip > the clip
//! that just played. A submitted user line replaces the generated line for
//! exactly one step.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use echoloop_neural::SessionRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AudioClip, ClipRecord, Instrument, MelAnalyzer, RecordingStore, SpectroConfig};
use crate::error::{CoreError, Result};
use crate::latent::{LatentCode, Origin};
use crate::latent_gan::GanModel;
use crate::retrieval::{select, DiversityConfig, DiversityController, InstrumentMask, LatentIndex, SelectStrategy};
use crate::spec_vae::SpecVae;
use crate::text_cvae::{rank_and_select, GenerateConfig, HeuristicRanker, LineRanker, LyricLine, TextCvae};

/// Everything the loop reads but never mutates.
pub struct SessionModels {
    pub spec_vae: SpecVae,
    pub text: TextCvae,
    pub gan: GanModel,
    pub index: LatentIndex,
    pub manifest: Vec<ClipRecord>,
    pub recordings: RecordingStore,
    pub spectro: SpectroConfig,
    pub ranker: Box<dyn LineRanker>,
}

impl SessionModels {
    /// Checks that every catalogue clip is indexed and has its source audio.
    pub fn validate(&self) -> Result<()> {
        if self.manifest.is_empty() {
            return Err(CoreError::Config("empty catalogue".into()));
        }
        if !self.manifest.windows(2).all(|w| w[0].clip_id < w[1].clip_id) {
            return Err(CoreError::Config("catalogue must be sorted by clip id without duplicates".into()));
        }
        for r in &self.manifest {
            if self.index.get(&r.clip_id).is_none() {
                return Err(CoreError::UnknownClip(format!("{} is missing from the index", r.clip_id)));
            }
            if self.recordings.duration_s(&r.recording_id).is_none() {
                return Err(CoreError::UnknownClip(format!("recording {} is not loaded", r.recording_id)));
            }
        }
        if self.index.len() != self.manifest.len() {
            return Err(CoreError::Config(format!(
                "index has {} entries for {} catalogue clips",
                self.index.len(),
                self.manifest.len()
            )));
        }
        Ok(())
    }

    pub fn clip(&self, clip_id: &str) -> Result<&ClipRecord> {
        self.manifest
            .binary_search_by(|r| r.clip_id.as_str().cmp(clip_id))
            .map(|i| &self.manifest[i])
            .map_err(|_| CoreError::UnknownClip(clip_id.to_string()))
    }

    fn code(&self, clip_id: &str) -> Result<LatentCode> {
        self.index
            .get(clip_id)
            .map(|e| e.latent())
            .ok_or_else(|| CoreError::UnknownClip(clip_id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub seed: u64,
    pub candidates: usize,
    pub line_top_k: usize,
    pub generate: GenerateConfig,
    /// Posterior temperature for the chosen line's z_t.
    pub tau: f32,
    pub strategy: SelectStrategy,
    pub diversity: DiversityConfig,
    pub duration_s: (f64, f64),
    pub crossfade_s: (f64, f64),
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            candidates: 100,
            line_top_k: 10,
            generate: GenerateConfig::default(),
            tau: 1.0,
            strategy: SelectStrategy::TopK,
            diversity: DiversityConfig::default(),
            duration_s: (10.0, 40.0),
            crossfade_s: (2.0, 6.0),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        let (d0, d1) = self.duration_s;
        let (c0, c1) = self.crossfade_s;
        if !(d0 > 0.0 && d0 <= d1 && c0 >= 0.0 && c0 <= c1 && c1 < d0) {
            return Err(CoreError::Config(format!(
                "durations {d0}..{d1} s must be positive and longer than crossfades of {c0}..{c1} s"
            )));
        }
        if self.candidates == 0 || self.line_top_k == 0 {
            return Err(CoreError::Config("candidates and line top-k must be positive".into()));
        }
        DiversityController::new(self.diversity.clone()).map(drop)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    Autonomous,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditioningSource {
    Previous,
    Pinned,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub clip_id: String,
    pub recording_id: String,
    pub offset_s: f64,
    pub duration_s: f64,
    pub crossfade_in_s: f64,
    pub crossfade_out_s: f64,
}

/// Equal-power gains at `frac` ∈ [0, 1] through a crossfade.
pub fn crossfade_gains(frac: f64) -> (f64, f64) {
    let theta = frac.clamp(0.0, 1.0) * std::f64::consts::FRAC_PI_2;
    (theta.cos(), theta.sin())
}

/// Per-sample `(g_out, g_in)` across a crossfade of `n` samples.
pub fn crossfade_curve(n: usize) -> Vec<(f64, f64)> {
    let denom = n.saturating_sub(1).max(1) as f64;
    (0..n).map(|i| crossfade_gains(i as f64 / denom)).collect()
}

/// Duration drawn from the configured range and cut at the end of the
/// source recording; the incoming crossfade mirrors the previous outgoing one.
pub fn schedule_clip<R: Rng + ?Sized>(
    recordings: &RecordingStore,
    clip: &ClipRecord,
    cfg: &SessionConfig,
    previous_crossfade_out: f64,
    rng: &mut R,
) -> Result<ScheduleEntry> {
    let available = recordings
        .duration_s(&clip.recording_id)
        .ok_or_else(|| CoreError::UnknownClip(clip.recording_id.clone()))?
        - clip.offset_s;
    if available <= 0.0 {
        return Err(CoreError::Config(format!("{} starts past the end of its recording", clip.clip_id)));
    }
    let (d0, d1) = cfg.duration_s;
    let duration = rng.random_range(d0..=d1).min(available);
    let (c0, c1) = cfg.crossfade_s;
    let half = duration / 2.0;
    let crossfade_out = rng.random_range(c0..=c1).min(half);
    Ok(ScheduleEntry {
        clip_id: clip.clip_id.clone(),
        recording_id: clip.recording_id.clone(),
        offset_s: clip.offset_s,
        duration_s: duration,
        crossfade_in_s: previous_crossfade_out.min(half),
        crossfade_out_s: crossfade_out,
    })
}

/// Renders consecutive schedule entries into one buffer. Each entry starts
/// where the previous one begins its outgoing crossfade.
pub fn render_schedule(recordings: &RecordingStore, entries: &[ScheduleEntry], max_s: f64) -> Result<Vec<f32>> {
    let sr = recordings.sample_rate() as f64;
    let total = (max_s * sr).round() as usize;
    let mut out = vec![0.0f32; total];
    let mut start = 0.0f64;
    for e in entries {
        let audio = recordings
            .slice(&e.recording_id, e.offset_s, e.duration_s)
            .ok_or_else(|| CoreError::UnknownClip(e.recording_id.clone()))?;
        let begin = (start * sr).round() as usize;
        let fade_in = (e.crossfade_in_s * sr).round() as usize;
        let fade_out = (e.crossfade_out_s * sr).round() as usize;
        let in_curve = crossfade_curve(fade_in);
        let out_curve = crossfade_curve(fade_out);
        let n = audio.len();
        for (i, &x) in audio.iter().enumerate() {
            let Some(slot) = out.get_mut(begin + i) else { break };
            let mut g = 1.0;
            if i < fade_in {
                g *= in_curve[i].1;
            }
            if n - i <= fade_out {
                g *= out_curve[fade_out - (n - i)].0;
            }
            *slot += (g * x as f64) as f32;
        }
        start += e.duration_s - e.crossfade_out_s;
        if begin >= total {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: u64,
    pub timestamp_ms: u64,
    pub clip_id: String,
    pub line_id: Option<u64>,
    pub line: Option<LyricLine>,
    pub conditioning: ConditioningSource,
    /// Clip whose code conditioned the step; `None` for live audio.
    pub conditioning_clip_id: Option<String>,
    pub k: usize,
    pub similarity: Option<f64>,
    pub schedule: ScheduleEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub line: LyricLine,
    pub line_id: u64,
    pub clip: ClipRecord,
    pub schedule: ScheduleEntry,
}

pub struct Session {
    models: Arc<SessionModels>,
    cfg: SessionConfig,
    analyzer: MelAnalyzer,
    mode: SessionMode,
    current_clip: ClipRecord,
    current_code: LatentCode,
    pinned: Option<ClipRecord>,
    live_code: Option<LatentCode>,
    pending_user_line: Option<LyricLine>,
    mask: InstrumentMask,
    controller: DiversityController,
    history: Vec<HistoryRecord>,
    rng: SessionRng,
    step: u64,
    last_crossfade_out: f64,
    last_timestamp_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Session {
    /// Starts from a uniformly drawn catalogue clip, which becomes the first history entry.
    pub fn new(models: Arc<SessionModels>, cfg: SessionConfig) -> Result<Self> {
        cfg.validate()?;
        models.validate()?;
        let mut rng = SessionRng::new(cfg.seed);
        let seed_clip = models.manifest[rng.random_range(0..models.manifest.len())].clone();
        let mut session = Self {
            analyzer: MelAnalyzer::new(&models.spectro)?,
            controller: DiversityController::new(cfg.diversity.clone())?,
            current_code: models.code(&seed_clip.clip_id)?,
            current_clip: seed_clip.clone(),
            models,
            cfg,
            mode: SessionMode::Autonomous,
            pinned: None,
            live_code: None,
            pending_user_line: None,
            mask: InstrumentMask::default(),
            history: Vec::new(),
            rng,
            step: 0,
            last_crossfade_out: 0.0,
            last_timestamp_ms: 0,
        };
        let schedule = session.schedule(&seed_clip)?;
        session.last_crossfade_out = schedule.crossfade_out_s;
        session.push_history(HistoryRecord {
            step: 0,
            timestamp_ms: 0,
            clip_id: seed_clip.clip_id,
            line_id: None,
            line: None,
            conditioning: ConditioningSource::Previous,
            conditioning_clip_id: None,
            k: 0,
            similarity: None,
            schedule,
        });
        Ok(session)
    }

    pub fn models(&self) -> &Arc<SessionModels> {
        &self.models
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn mode(&self) -> SessionMode {
        self.mode
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    pub fn current_clip(&self) -> &ClipRecord {
        &self.current_clip
    }

    pub fn pinned(&self) -> Option<&ClipRecord> {
        self.pinned.as_ref()
    }

    pub fn mask(&self) -> &InstrumentMask {
        &self.mask
    }

    pub fn controller(&self) -> &DiversityController {
        &self.controller
    }

    pub fn pending_user_line(&self) -> Option<&LyricLine> {
        self.pending_user_line.as_ref()
    }

    pub fn set_mode(&mut self, mode: SessionMode) {
        if mode == SessionMode::Autonomous {
            self.live_code = None;
        }
        self.mode = mode;
    }

    pub fn pin(&mut self, clip_id: Option<&str>) -> Result<()> {
        self.pinned = clip_id.map(|id| self.models.clip(id).cloned()).transpose()?;
        Ok(())
    }

    /// Makes a catalogue clip the loop's previous clip, as if it had just played.
    pub fn select_clip(&mut self, clip_id: &str) -> Result<()> {
        let clip = self.models.clip(clip_id)?.clone();
        self.current_code = self.models.code(clip_id)?;
        self.current_clip = clip;
        Ok(())
    }

    pub fn set_instrument(&mut self, instrument: Instrument, enabled: bool) {
        if enabled {
            self.mask.excluded.remove(&instrument);
        } else {
            self.mask.excluded.insert(instrument);
        }
    }

    pub fn set_mask(&mut self, excluded: BTreeSet<Instrument>) {
        self.mask.excluded = excluded;
    }

    pub fn set_manual_k(&mut self, k: usize) -> Result<()> {
        let (lo, hi) = (self.cfg.diversity.k_min, self.cfg.diversity.k_max);
        if !(lo..=hi).contains(&k) {
            return Err(CoreError::Config(format!("k {k} outside {lo}..={hi}")));
        }
        self.controller.set_manual(k);
        Ok(())
    }

    pub fn set_auto_k(&mut self) {
        self.controller.set_auto();
    }

    /// Queues a line for the next step, replacing any line already queued.
    pub fn submit_line(&mut self, text: &str) -> Result<()> {
        self.pending_user_line = Some(self.models.text.user_line(text)?);
        Ok(())
    }

    /// Encodes a live window; its code conditions the next step.
    pub fn ingest_live_clip(&mut self, audio: &AudioClip) -> Result<LatentCode> {
        if self.mode != SessionMode::Live {
            return Err(CoreError::Mode("live audio requires live mode".into()));
        }
        if audio.sample_rate != self.models.spectro.sample_rate {
            return Err(CoreError::SampleRate {
                expected: self.models.spectro.sample_rate,
                got: audio.sample_rate,
            });
        }
        let spec = self.analyzer.compute(audio)?;
        let code = self
            .models
            .spec_vae
            .encode(&spec)?
            .sample(self.cfg.tau, Origin::Spec, &mut self.rng)?;
        self.live_code = Some(code.clone());
        Ok(code)
    }

    pub fn schedule(&mut self, clip: &ClipRecord) -> Result<ScheduleEntry> {
        schedule_clip(&self.models.recordings, clip, &self.cfg, self.last_crossfade_out, &mut self.rng)
    }

    fn push_history(&mut self, mut record: HistoryRecord) {
        let ts = now_ms().max(self.last_timestamp_ms + 1);
        record.timestamp_ms = ts;
        self.last_timestamp_ms = ts;
        self.history.push(record);
    }

    /// One loop iteration. On error nothing observable changes, including the RNG.
    pub fn step(&mut self) -> Result<StepOutput> {
        let models = Arc::clone(&self.models);
        let mut rng = self.rng.clone();
        let (source, cond_clip, cond) = if let Some(code) = self.live_code.clone() {
            (ConditioningSource::Live, None, code)
        } else if let Some(pin) = &self.pinned {
            (ConditioningSource::Pinned, Some(pin.clip_id.clone()), models.code(&pin.clip_id)?)
        } else {
            (
                ConditioningSource::Previous,
                Some(self.current_clip.clip_id.clone()),
                self.current_code.clone(),
            )
        };

        let line = match &self.pending_user_line {
            Some(user) => {
                let mut line = user.clone();
                line.conditioning_clip_id = cond_clip.clone();
                line
            }
            None => {
                let gen = GenerateConfig {
                    count: self.cfg.candidates,
                    ..self.cfg.generate.clone()
                };
                let lines = models.text.generate_lines(&cond, cond_clip.as_deref(), &gen, &mut rng)?;
                rank_and_select(lines, models.ranker.as_ref(), self.cfg.line_top_k, &mut rng)?
            }
        };

        let z_t = models.text.encode_line(&line, &cond)?.sample(self.cfg.tau, Origin::Text, &mut rng)?;
        let predicted = models.gan.predict_next(&cond, &z_t)?;
        let k = self.controller.next_k(self.step);
        let ranked = models.index.rank(&predicted.z, &self.mask)?;
        let chosen = select(&ranked, k, self.cfg.strategy, &mut rng)?.clone();
        let clip = models.clip(&chosen.clip_id)?.clone();

        // Commit.
        self.rng = rng;
        let schedule = self.schedule(&clip)?;
        self.last_crossfade_out = schedule.crossfade_out_s;
        self.step += 1;
        self.pending_user_line = None;
        self.live_code = None;
        self.current_code = models.code(&clip.clip_id)?;
        self.current_clip = clip.clone();
        self.push_history(HistoryRecord {
            step: self.step,
            timestamp_ms: 0,
            clip_id: clip.clip_id.clone(),
            line_id: Some(self.step),
            line: Some(line.clone()),
            conditioning: source,
            conditioning_clip_id: cond_clip,
            k,
            similarity: Some(chosen.cosine),
            schedule: schedule.clone(),
        });
        Ok(StepOutput {
            line,
            line_id: self.step,
            clip,
            schedule,
        })
    }

    pub fn line(&self, line_id: u64) -> Option<&HistoryRecord> {
        self.history.iter().find(|h| h.line_id == Some(line_id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub timestamp_ms: u64,
    pub line_id: u64,
    pub line: String,
    pub conditioning_clip_id: Option<String>,
    pub clip_id: String,
}

impl FeedbackRecord {
    pub fn from_history(record: &HistoryRecord) -> Option<Self> {
        Some(Self {
            timestamp_ms: now_ms(),
            line_id: record.line_id?,
            line: record.line.as_ref()?.text.clone(),
            conditioning_clip_id: record.conditioning_clip_id.clone(),
            clip_id: record.clip_id.clone(),
        })
    }
}

/// Append-only JSONL; each record is synced before `append` returns.
pub struct FeedbackLog {
    path: PathBuf,
    file: File,
}

impl FeedbackLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &FeedbackRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<FeedbackRecord>> {
        crate::corpus::read_jsonl(path)
    }
}

/// Default line ranker for sessions built without one.
pub fn default_ranker() -> Box<dyn LineRanker> {
    Box::new(HeuristicRanker::default())
}
