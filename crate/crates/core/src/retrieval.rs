//! Exact cosine search over the catalogue's latent codes.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use noise::{NoiseFn, Perlin};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClipRecord, Instrument, MelSpectrogram};
use crate::error::{CoreError, Result};
use crate::latent::{LatentCode, Origin, LATENT_DIM};
use crate::spec_vae::SpecVae;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub clip_id: String,
    pub instrument_tags: BTreeSet<Instrument>,
    pub code: Vec<f32>,
    /// Unit-normalized copy of `code` in f64.
    unit: Vec<f64>,
}

fn unit(v: &[f32]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    (norm.is_finite() && norm > 0.0).then(|| v.iter().map(|&x| f64::from(x) / norm).collect())
}

impl IndexEntry {
    pub fn new(clip_id: String, instrument_tags: BTreeSet<Instrument>, code: Vec<f32>) -> Result<Self> {
        let unit = unit(&code).ok_or_else(|| CoreError::InvalidQuery(format!("code for {clip_id} is zero or non-finite")))?;
        Ok(Self {
            clip_id,
            instrument_tags,
            code,
            unit,
        })
    }

    pub fn latent(&self) -> LatentCode {
        LatentCode::new(self.code.clone(), Origin::Spec)
    }
}

/// Instruments the performer has deselected.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentMask {
    pub excluded: BTreeSet<Instrument>,
}

impl InstrumentMask {
    pub fn allows(&self, tags: &BTreeSet<Instrument>) -> bool {
        self.excluded.is_disjoint(tags)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectStrategy {
    Argmax,
    TopK,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    pub clip_id: String,
    pub cosine: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatentIndex {
    entries: Vec<IndexEntry>,
}

impl LatentIndex {
    pub fn from_entries(mut entries: Vec<IndexEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        if let Some(w) = entries.windows(2).find(|w| w[0].clip_id == w[1].clip_id) {
            return Err(CoreError::DuplicateClip(w[0].clip_id.clone()));
        }
        Ok(Self { entries })
    }

    /// One posterior sample per clip; `tau = 0` stores the means.
    pub fn build<R: Rng + ?Sized>(
        manifest: &[ClipRecord],
        spectrograms: &[MelSpectrogram],
        vae: &SpecVae,
        tau: f32,
        rng: &mut R,
    ) -> Result<Self> {
        if manifest.len() != spectrograms.len() {
            return Err(CoreError::Config(format!(
                "{} records but {} spectrograms",
                manifest.len(),
                spectrograms.len()
            )));
        }
        let mut entries = Vec::with_capacity(manifest.len());
        for (record, spec) in manifest.iter().zip(spectrograms) {
            let code = vae.encode(spec)?.sample(tau, Origin::Spec, rng)?;
            entries.push(IndexEntry::new(record.clip_id.clone(), record.instrument_tags.clone(), code.z)?);
        }
        Self::from_entries(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, clip_id: &str) -> Option<&IndexEntry> {
        self.entries
            .binary_search_by(|e| e.clip_id.as_str().cmp(clip_id))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Every clip the mask allows, by descending cosine, ties by ascending id.
    pub fn rank(&self, query: &[f32], mask: &InstrumentMask) -> Result<Vec<Ranked>> {
        if query.len() != LATENT_DIM {
            return Err(CoreError::InvalidQuery(format!("{} dims, expected {LATENT_DIM}", query.len())));
        }
        let q = unit(query).ok_or_else(|| CoreError::InvalidQuery("zero or non-finite query".into()))?;
        let mut ranked: Vec<Ranked> = self
            .entries
            .iter()
            .filter(|e| mask.allows(&e.instrument_tags))
            .map(|e| Ranked {
                clip_id: e.clip_id.clone(),
                cosine: e.unit.iter().zip(&q).map(|(a, b)| a * b).sum(),
            })
            .collect();
        if ranked.is_empty() {
            return Err(CoreError::EmptyCandidates);
        }
        // Entries are already in id order, so a stable sort keeps ties by id.
        ranked.sort_by(|a, b| b.cosine.total_cmp(&a.cosine));
        Ok(ranked)
    }

    /// `u32` count, then per entry a `u32` id length, the id bytes, a `u8`
    /// tag bitmask and `LATENT_DIM` f32 values, all little-endian.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            out.write_all(&(e.clip_id.len() as u32).to_le_bytes())?;
            out.write_all(e.clip_id.as_bytes())?;
            let bits = Instrument::ALL
                .iter()
                .enumerate()
                .filter(|(_, i)| e.instrument_tags.contains(i))
                .fold(0u8, |acc, (bit, _)| acc | 1 << bit);
            out.write_all(&[bits])?;
            for x in &e.code {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        let bad = |detail: &str| CoreError::Format {
            path: path.display().to_string(),
            detail: detail.to_string(),
        };
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated index file"))?;
            pos += n;
            Ok(s)
        };
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let id = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("clip id is not utf-8"))?;
            let bits = take(1)?[0];
            let tags = Instrument::ALL
                .iter()
                .enumerate()
                .filter(|(bit, _)| bits & (1 << bit) != 0)
                .map(|(_, i)| *i)
                .collect();
            let code = take(4 * LATENT_DIM)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(IndexEntry::new(id, tags, code)?);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after last entry"));
        }
        Self::from_entries(entries)
    }
}

/// Argmax takes the head; top-K draws uniformly from the first `k`.
pub fn select<'a, R: Rng + ?Sized>(
    ranked: &'a [Ranked],
    k: usize,
    strategy: SelectStrategy,
    rng: &mut R,
) -> Result<&'a Ranked> {
    if ranked.is_empty() {
        return Err(CoreError::EmptyCandidates);
    }
    match strategy {
        SelectStrategy::Argmax => Ok(&ranked[0]),
        SelectStrategy::TopK => {
            let mut k = k.max(1);
            if k > ranked.len() {
                log::warn!("top-k {k} exceeds {} candidates; clamping", ranked.len());
                k = ranked.len();
            }
            Ok(&ranked[rng.random_range(0..k)])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiversityMode {
    AutoPerlin,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiversityConfig {
    pub mode: DiversityMode,
    pub k_min: usize,
    pub k_max: usize,
    pub manual_k: usize,
    pub frequency: f64,
    pub octaves: u32,
    pub seed: u32,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            mode: DiversityMode::AutoPerlin,
            k_min: 1,
            k_max: 10,
            manual_k: 3,
            frequency: 0.05,
            octaves: 2,
            seed: 0,
        }
    }
}

/// 1-D Perlin noise at these octave weights peaks near ±0.8; this gain
/// lets k reach both ends of its range.
const PERLIN_GAIN: f64 = 1.25;

#[derive(Debug, Clone)]
pub struct DiversityController {
    cfg: DiversityConfig,
    perlin: Perlin,
}

impl DiversityController {
    pub fn new(cfg: DiversityConfig) -> Result<Self> {
        if cfg.k_min == 0 || cfg.k_min > cfg.k_max {
            return Err(CoreError::Config(format!("need 1 <= k_min <= k_max, got {}..{}", cfg.k_min, cfg.k_max)));
        }
        if cfg.octaves == 0 || !(cfg.frequency.is_finite() && cfg.frequency > 0.0) {
            return Err(CoreError::Config("perlin needs a positive frequency and at least one octave".into()));
        }
        Ok(Self {
            perlin: Perlin::new(cfg.seed),
            cfg,
        })
    }

    pub fn config(&self) -> &DiversityConfig {
        &self.cfg
    }

    pub fn set_manual(&mut self, k: usize) {
        self.cfg.mode = DiversityMode::Manual;
        self.cfg.manual_k = k;
    }

    pub fn set_auto(&mut self) {
        self.cfg.mode = DiversityMode::AutoPerlin;
    }

    /// Fractal 1-D noise in [-1, 1].
    pub fn noise(&self, t: u64) -> f64 {
        let x = t as f64 * self.cfg.frequency;
        let (mut sum, mut norm, mut amp, mut freq) = (0.0, 0.0, 1.0, 1.0);
        for _ in 0..self.cfg.octaves {
            sum += amp * self.perlin.get([x * freq]);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        (PERLIN_GAIN * sum / norm).clamp(-1.0, 1.0)
    }

    pub fn next_k(&self, t: u64) -> usize {
        match self.cfg.mode {
            DiversityMode::Manual => self.cfg.manual_k.clamp(self.cfg.k_min, self.cfg.k_max),
            DiversityMode::AutoPerlin => {
                let span = (self.cfg.k_max - self.cfg.k_min) as f64;
                let k = self.cfg.k_min as f64 + span * (self.noise(t) + 1.0) / 2.0;
                (k.round() as usize).clamp(self.cfg.k_min, self.cfg.k_max)
            }
        }
    }
}
