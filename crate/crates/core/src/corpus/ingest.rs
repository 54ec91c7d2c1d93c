use std::collections::BTreeMap;
use std::path::Path;

use super::audio::{read_wav, segment_recording, write_wav, AudioClip};
use super::manifest::{build_manifest, clip_id, write_jsonl, Annotations, ClipRecord};
use super::spectro::{MelAnalyzer, SpectroConfig};
use super::synth::SyntheticCorpus;
use crate::error::{CoreError, Result};

/// Full-length source recordings, kept in memory for scheduling and playback.
#[derive(Debug, Clone, Default)]
pub struct RecordingStore {
    sample_rate: u32,
    recordings: BTreeMap<String, Vec<f32>>,
}

impl RecordingStore {
    pub fn new(sample_rate: u32) -> Self {
        Self {
            sample_rate,
            recordings: BTreeMap::new(),
        }
    }

    pub fn from_synthetic(corpus: &SyntheticCorpus) -> Self {
        let mut store = Self::new(corpus.spec.sample_rate);
        for r in &corpus.recordings {
            store.insert(&r.composition_id, r.samples.clone());
        }
        store
    }

    /// Load every `*.wav` in a directory, keyed by file stem.
    pub fn load_dir(dir: impl AsRef<Path>, sample_rate: u32) -> Result<Self> {
        let mut store = Self::new(sample_rate);
        for path in wav_files(dir.as_ref())? {
            let (samples, sr) = read_wav(&path)?;
            if sr != sample_rate {
                return Err(CoreError::SampleRate {
                    expected: sample_rate,
                    got: sr,
                });
            }
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            store.insert(&stem, samples);
        }
        Ok(store)
    }

    pub fn insert(&mut self, recording_id: &str, samples: Vec<f32>) {
        self.recordings.insert(recording_id.to_string(), samples);
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self, recording_id: &str) -> Option<f64> {
        self.recordings
            .get(recording_id)
            .map(|s| s.len() as f64 / self.sample_rate as f64)
    }

    /// Audio from `offset_s`, at most `duration_s` long, truncated at the end of the recording.
    pub fn slice(&self, recording_id: &str, offset_s: f64, duration_s: f64) -> Option<&[f32]> {
        let samples = self.recordings.get(recording_id)?;
        let sr = self.sample_rate as f64;
        let start = ((offset_s * sr).round() as usize).min(samples.len());
        let end = (start + (duration_s * sr).round() as usize).min(samples.len());
        Some(&samples[start..end])
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }
}

fn wav_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

/// File names of all clip WAVs in a directory, sorted.
pub fn scan_clip_files(dir: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(wav_files(dir.as_ref())?
        .into_iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect())
}

/// Segment every recording in `in_dir` into 10 s clips and write clips,
/// spectrograms, a copy of each recording and `manifest.jsonl` under `out_dir`.
pub fn ingest(
    in_dir: impl AsRef<Path>,
    annotations: &Annotations,
    out_dir: impl AsRef<Path>,
    cfg: &SpectroConfig,
) -> Result<Vec<ClipRecord>> {
    let out = out_dir.as_ref();
    for sub in ["recordings", "clips", "spectrograms"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    let analyzer = MelAnalyzer::new(cfg)?;
    for path in wav_files(in_dir.as_ref())? {
        let recording_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if recording_id.contains("__") {
            return Err(CoreError::Format {
                path: path.display().to_string(),
                detail: "recording names may not contain \"__\"".into(),
            });
        }
        let (samples, sr) = read_wav(&path)?;
        if sr != cfg.sample_rate {
            return Err(CoreError::SampleRate {
                expected: cfg.sample_rate,
                got: sr,
            });
        }
        let recording = AudioClip::new(samples, sr, &recording_id, 0.0);
        recording.validate()?;
        for clip in segment_recording(&recording, cfg.clip_s, cfg.clip_s)? {
            let id = clip_id(&recording_id, clip.offset_s);
            write_wav(out.join("clips").join(format!("{id}.wav")), &clip.samples, sr)?;
            analyzer
                .compute(&clip)?
                .save(out.join("spectrograms").join(format!("{id}.spec")))?;
        }
        write_wav(out.join("recordings").join(format!("{recording_id}.wav")), &recording.samples, sr)?;
    }
    let manifest = build_manifest(&scan_clip_files(out.join("clips"))?, annotations, "spectrograms")?;
    write_jsonl(out.join("manifest.jsonl"), &manifest)?;
    Ok(manifest)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Annotations> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
