//! Deterministic labeled corpus for desk-scale experiments.
//!
//! Three families with audibly different textures, and lyric lines drawn from
//! mood-word banks tied to each family so text and audio share structure.

use std::collections::{BTreeMap, BTreeSet};
use std::f32::consts::TAU;
use std::path::Path;

use echoloop_neural::SessionRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::audio::{write_wav, AudioClip};
use super::manifest::{clip_id, write_jsonl, AlignedLine, Annotations, ClipRecord, Instrument};
use super::spectro::{MelAnalyzer, MelSpectrogram, SpectroConfig};
use crate::error::{CoreError, Result};

pub const FAMILIES: [Instrument; 3] = [Instrument::Drone, Instrument::Percussion, Instrument::Keyboard];

pub const NOTE_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpusSpec {
    pub drone: usize,
    pub percussion: usize,
    pub keyboard: usize,
    pub clips_per_composition: usize,
    /// Inclusive range for the number of lyric lines per composition.
    pub lines_per_composition: (usize, usize),
    /// Pitch class (0 = C) per composition id; unlisted compositions draw one.
    pub keys: BTreeMap<String, u8>,
    pub seed: u64,
    pub sample_rate: u32,
    pub clip_s: f64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            drone: 12,
            percussion: 12,
            keyboard: 12,
            clips_per_composition: 16,
            lines_per_composition: (8, 8),
            keys: BTreeMap::new(),
            seed: 7,
            sample_rate: 22050,
            clip_s: 10.0,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn count(&self, family: Instrument) -> usize {
        match family {
            Instrument::Drone => self.drone,
            Instrument::Percussion => self.percussion,
            Instrument::Keyboard => self.keyboard,
            Instrument::Guitar => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lines_per_composition;
        if !(5..=20).contains(&lo) || !(lo..=20).contains(&hi) {
            return Err(CoreError::Config(format!("lines per composition {lo}..={hi} outside 5..=20")));
        }
        if self.clips_per_composition == 0 || self.clip_s <= 0.0 || self.sample_rate == 0 {
            return Err(CoreError::Config("clip count, clip length and sample rate must be positive".into()));
        }
        if let Some((id, k)) = self.keys.iter().find(|(_, k)| **k > 11) {
            return Err(CoreError::Config(format!("key {k} for {id} is not a pitch class")));
        }
        Ok(())
    }
}

pub fn composition_id(family: Instrument, index: usize) -> String {
    format!("{family}-{index:02}")
}

#[derive(Debug, Clone)]
pub struct SyntheticRecording {
    pub composition_id: String,
    pub family: Instrument,
    pub key: u8,
    pub samples: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub spec: SyntheticCorpusSpec,
    pub recordings: Vec<SyntheticRecording>,
    pub manifest: Vec<ClipRecord>,
    pub lyrics: BTreeMap<String, Vec<String>>,
    pub aligned: Vec<AlignedLine>,
}

pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let root = SessionRng::new(spec.seed);
    let mut recordings = Vec::new();
    let mut manifest = Vec::new();
    let mut lyrics = BTreeMap::new();
    let mut aligned = Vec::new();
    for (f, family) in FAMILIES.into_iter().enumerate() {
        for index in 0..spec.count(family) {
            let id = composition_id(family, index);
            let mut rng = root.fork((f as u64) << 32 | index as u64);
            let drawn_key = rng.random_range(0..12u8);
            let key = spec.keys.get(&id).copied().unwrap_or(drawn_key);
            let n_samples = (spec.clips_per_composition as f64 * spec.clip_s * spec.sample_rate as f64).round() as usize;
            let samples = match family {
                Instrument::Drone => drone(key, n_samples, spec.sample_rate, &mut rng),
                Instrument::Percussion => percussion(n_samples, spec.sample_rate, &mut rng),
                _ => keyboard(key, n_samples, spec.sample_rate, &mut rng),
            };
            let (lo, hi) = spec.lines_per_composition;
            let n_lines = rng.random_range(lo..=hi);
            let lines = lyric_lines(family, n_lines, &mut rng);
            for c in 0..spec.clips_per_composition {
                let offset_s = c as f64 * spec.clip_s;
                let cid = clip_id(&id, offset_s);
                aligned.push(AlignedLine {
                    clip_id: cid.clone(),
                    text: lines[c % lines.len()].clone(),
                });
                manifest.push(ClipRecord {
                    spectrogram_path: format!("spectrograms/{cid}.spec"),
                    clip_id: cid,
                    composition_id: id.clone(),
                    instrument_tags: BTreeSet::from([family]),
                    recording_id: id.clone(),
                    offset_s,
                });
            }
            lyrics.insert(id.clone(), lines);
            recordings.push(SyntheticRecording {
                composition_id: id,
                family,
                key,
                samples,
            });
        }
    }
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        recordings,
        manifest,
        lyrics,
        aligned,
    })
}

impl SyntheticCorpus {
    pub fn recording(&self, recording_id: &str) -> Option<&SyntheticRecording> {
        self.recordings.iter().find(|r| r.composition_id == recording_id)
    }

    pub fn clip_audio(&self, record: &ClipRecord) -> Result<AudioClip> {
        let rec = self
            .recording(&record.recording_id)
            .ok_or_else(|| CoreError::UnknownClip(record.clip_id.clone()))?;
        let sr = self.spec.sample_rate as f64;
        let start = (record.offset_s * sr).round() as usize;
        let len = (self.spec.clip_s * sr).round() as usize;
        let samples = rec
            .samples
            .get(start..start + len)
            .ok_or_else(|| CoreError::UnknownClip(record.clip_id.clone()))?
            .to_vec();
        Ok(AudioClip::new(samples, self.spec.sample_rate, &rec.composition_id, record.offset_s))
    }

    /// Spectrograms in manifest order.
    pub fn spectrograms(&self, cfg: &SpectroConfig) -> Result<Vec<MelSpectrogram>> {
        let analyzer = MelAnalyzer::new(cfg)?;
        self.manifest
            .iter()
            .map(|r| analyzer.compute(&self.clip_audio(r)?))
            .collect()
    }

    pub fn annotations(&self) -> Annotations {
        self.recordings
            .iter()
            .map(|r| (r.composition_id.clone(), BTreeSet::from([r.family])))
            .collect()
    }

    /// Write recordings, annotations, manifest, spectrograms and the aligned lyric table.
    pub fn write(&self, dir: impl AsRef<Path>, cfg: &SpectroConfig) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("recordings"))?;
        std::fs::create_dir_all(dir.join("spectrograms"))?;
        for rec in &self.recordings {
            write_wav(
                dir.join("recordings").join(format!("{}.wav", rec.composition_id)),
                &rec.samples,
                self.spec.sample_rate,
            )?;
        }
        for (record, spec) in self.manifest.iter().zip(self.spectrograms(cfg)?) {
            spec.save(dir.join(&record.spectrogram_path))?;
        }
        std::fs::write(dir.join("annotations.json"), serde_json::to_vec_pretty(&self.annotations())?)?;
        std::fs::write(dir.join("synth_spec.json"), serde_json::to_vec_pretty(&self.spec)?)?;
        write_jsonl(dir.join("manifest.jsonl"), &self.manifest)?;
        write_jsonl(dir.join("aligned.jsonl"), &self.aligned)?;
        Ok(())
    }
}

fn midi_hz(note: f32) -> f32 {
    440.0 * 2f32.powf((note - 69.0) / 12.0)
}

fn normalize(samples: &mut [f32], peak: f32) {
    let max = samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if max > 0.0 {
        let g = peak / max;
        samples.iter_mut().for_each(|s| *s *= g);
    }
}

/// Slowly breathing harmonic stack rooted low in the composition's key.
fn drone(key: u8, n: usize, sr: u32, rng: &mut SessionRng) -> Vec<f32> {
    let f0 = midi_hz(36.0 + key as f32 + 12.0 * rng.random_range(0..2) as f32);
    let brightness: f32 = rng.random_range(0.35..0.85);
    let partials: Vec<(f32, f32, f32, f32)> = (1..=8)
        .map(|k| {
            let detune = 1.0 + rng.random_range(-0.002f32..0.002);
            let lfo = rng.random_range(0.03f32..0.15);
            (f0 * k as f32 * detune, brightness.powi(k - 1), lfo, rng.random_range(0.0..TAU))
        })
        .collect();
    let dt = 1.0 / sr as f32;
    let mut out = vec![0.0f32; n];
    for (freq, amp, lfo, phase) in partials {
        if freq >= sr as f32 / 2.0 {
            continue;
        }
        let mut osc = Oscillator::new(freq, sr, phase);
        for (i, s) in out.iter_mut().enumerate() {
            let t = i as f32 * dt;
            *s += amp * (1.0 + 0.4 * (TAU * lfo * t + phase).sin()) * osc.next();
        }
    }
    normalize(&mut out, 0.7);
    out
}

/// Band-passed noise bursts on a sixteen-step grid.
fn percussion(n: usize, sr: u32, rng: &mut SessionRng) -> Vec<f32> {
    let bpm: f32 = rng.random_range(80.0..160.0);
    let centre: f32 = 2f32.powf(rng.random_range(8.5f32..12.5));
    let decay_s: f32 = rng.random_range(0.03..0.2);
    let density: f32 = rng.random_range(0.25..0.6);
    let mut pattern: Vec<f32> = (0..16)
        .map(|_| if rng.random::<f32>() < density { rng.random_range(0.4..1.0) } else { 0.0 })
        .collect();
    pattern[0] = 1.0;
    let step = (60.0 / bpm / 4.0 * sr as f32) as usize;
    let decay = (-1.0 / (decay_s * sr as f32)).exp();
    let mut filter = BandPass::new(centre, 2.0, sr);
    let mut out = vec![0.0f32; n];
    let mut env = 0.0f32;
    for (i, s) in out.iter_mut().enumerate() {
        if i % step == 0 {
            let accent = pattern[(i / step) % 16];
            if accent > 0.0 {
                env = accent;
            }
        }
        let noise = if env > 1e-4 { rng.random_range(-1.0f32..1.0) } else { 0.0 };
        *s = filter.process(noise * env);
        env *= decay;
    }
    normalize(&mut out, 0.7);
    out
}

/// Arpeggiated triads over a I-IV-I-V progression with a sustained bass root.
fn keyboard(key: u8, n: usize, sr: u32, rng: &mut SessionRng) -> Vec<f32> {
    let minor = rng.random_bool(0.5);
    let third = if minor { 3.0 } else { 4.0 };
    let base = 60.0 + key as f32 + 12.0 * rng.random_range(0..2) as f32 - 12.0;
    let rate: f32 = rng.random_range(3.0..8.0);
    let bar_s: f32 = rng.random_range(1.5..3.0);
    let up_down = rng.random_bool(0.5);
    let note_len = (sr as f32 / rate) as usize;
    let bar = (bar_s * sr as f32) as usize;
    let degrees = [0.0, 5.0, 0.0, 7.0];
    let shape: Vec<f32> = if up_down {
        vec![0.0, third, 7.0, 12.0, 7.0, third]
    } else {
        vec![0.0, third, 7.0, 12.0]
    };
    let decay = (-1.0 / (0.35 * sr as f32)).exp();
    let mut out = vec![0.0f32; n];
    let mut note_start = 0;
    let mut idx = 0;
    while note_start < n {
        let chord = degrees[(note_start / bar) % degrees.len()];
        let pitch = base + chord + shape[idx % shape.len()];
        let end = (note_start + note_len * 2).min(n);
        let mut env = 1.0f32;
        let mut oscs = [
            Oscillator::new(midi_hz(pitch), sr, 0.0),
            Oscillator::new(2.0 * midi_hz(pitch), sr, 0.0),
            Oscillator::new(3.0 * midi_hz(pitch), sr, 0.0),
        ];
        for s in &mut out[note_start..end] {
            *s += env * (oscs[0].next() + 0.5 * oscs[1].next() + 0.25 * oscs[2].next());
            env *= decay;
        }
        note_start += note_len;
        idx += 1;
    }
    let mut bar_start = 0;
    while bar_start < n {
        let chord = degrees[(bar_start / bar) % degrees.len()];
        let mut osc = Oscillator::new(midi_hz(base - 12.0 + chord), sr, 0.0);
        let end = (bar_start + bar).min(n);
        for (j, s) in out[bar_start..end].iter_mut().enumerate() {
            let fade = ((j.min(end - bar_start - j)) as f32 / 200.0).min(1.0);
            *s += 0.6 * fade * osc.next();
        }
        bar_start += bar;
    }
    normalize(&mut out, 0.7);
    out
}

/// Sine oscillator by complex rotation; renormalized to avoid amplitude drift.
struct Oscillator {
    re: f64,
    im: f64,
    c: f64,
    s: f64,
    count: u32,
}

impl Oscillator {
    fn new(freq: f32, sr: u32, phase: f32) -> Self {
        let w = std::f64::consts::TAU * freq as f64 / sr as f64;
        Self {
            re: (phase as f64).cos(),
            im: (phase as f64).sin(),
            c: w.cos(),
            s: w.sin(),
            count: 0,
        }
    }

    fn next(&mut self) -> f32 {
        let out = self.im as f32;
        let re = self.re * self.c - self.im * self.s;
        self.im = self.re * self.s + self.im * self.c;
        self.re = re;
        self.count += 1;
        if self.count % 4096 == 0 {
            let r = (self.re * self.re + self.im * self.im).sqrt();
            self.re /= r;
            self.im /= r;
        }
        out
    }
}

/// RBJ constant-peak band-pass biquad.
struct BandPass {
    b0: f32,
    b2: f32,
    a1: f32,
    a2: f32,
    x1: f32,
    x2: f32,
    y1: f32,
    y2: f32,
}

impl BandPass {
    fn new(centre: f32, q: f32, sr: u32) -> Self {
        let w = TAU * centre.min(sr as f32 * 0.45) / sr as f32;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn process(&mut self, x: f32) -> f32 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

struct MoodBank {
    adjectives: &'static [&'static str],
    nouns: &'static [&'static str],
    verbs: &'static [&'static str],
}

const DRONE_WORDS: MoodBank = MoodBank {
    adjectives: &["endless", "hollow", "drifting", "distant", "slow", "deep", "fading", "vast", "silent", "dim"],
    nouns: &["ocean", "horizon", "fog", "cathedral", "void", "tide", "mist", "shadow", "dream", "sky"],
    verbs: &["drifts", "hums", "sleeps", "breathes", "dissolves", "lingers", "floats", "waits"],
};

const PERCUSSION_WORDS: MoodBank = MoodBank {
    adjectives: &["sharp", "broken", "restless", "electric", "rapid", "burning", "wild", "iron", "loud", "jagged"],
    nouns: &["heart", "street", "engine", "hammer", "fire", "pulse", "storm", "wire", "city", "drum"],
    verbs: &["beats", "runs", "crashes", "pounds", "snaps", "races", "strikes", "shakes"],
};

const KEYBOARD_WORDS: MoodBank = MoodBank {
    adjectives: &["golden", "gentle", "bright", "tender", "warm", "soft", "clear", "sweet", "quiet", "glowing"],
    nouns: &["morning", "window", "letter", "garden", "song", "river", "light", "room", "voice", "spring"],
    verbs: &["sings", "shines", "opens", "remembers", "dances", "returns", "glows", "rises"],
};

const TEMPLATES: &[&str] = &[
    "the {a} {n} {v}",
    "the {a} {n} {v} in the {n}",
    "{a} {n} {v} again",
    "i hear the {n} {v}",
    "my {n} is {a} and {a}",
    "we walk through the {a} {n}",
    "like a {a} {n} the {n} {v}",
    "under the {n} my {a} {n} {v}",
];

fn lyric_lines(family: Instrument, count: usize, rng: &mut SessionRng) -> Vec<String> {
    let bank = match family {
        Instrument::Drone => &DRONE_WORDS,
        Instrument::Percussion => &PERCUSSION_WORDS,
        _ => &KEYBOARD_WORDS,
    };
    // Each composition leans on a subset of its family's words.
    let pick = |words: &'static [&'static str], k: usize, rng: &mut SessionRng| -> Vec<&'static str> {
        let mut pool = words.to_vec();
        (0..k).map(|_| pool.swap_remove(rng.random_range(0..pool.len()))).collect()
    };
    let adjectives = pick(bank.adjectives, 4, rng);
    let nouns = pick(bank.nouns, 4, rng);
    let verbs = pick(bank.verbs, 3, rng);
    (0..count)
        .map(|_| {
            let template = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
            template
                .split(' ')
                .map(|w| match w {
                    "{a}" => adjectives[rng.random_range(0..adjectives.len())],
                    "{n}" => nouns[rng.random_range(0..nouns.len())],
                    "{v}" => verbs[rng.random_range(0..verbs.len())],
                    other => other,
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

pub fn key_name(key: u8) -> &'static str {
    NOTE_NAMES[key as usize % 12]
}
