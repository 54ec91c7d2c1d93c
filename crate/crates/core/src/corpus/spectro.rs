use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::audio::AudioClip;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectroConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop_size: usize,
    pub n_mels: usize,
    /// STFT frames are mean-pooled down to this many columns.
    pub n_frames: usize,
    pub log_floor_db: f64,
    pub clip_s: f64,
}

impl Default for SpectroConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            fft_size: 1024,
            hop_size: 256,
            n_mels: 64,
            n_frames: 64,
            log_floor_db: -80.0,
            clip_s: 10.0,
        }
    }
}

impl SpectroConfig {
    pub fn id(&self) -> String {
        format!(
            "sr{}-fft{}-hop{}-mel{}-fr{}-floor{}",
            self.sample_rate, self.fft_size, self.hop_size, self.n_mels, self.n_frames, self.log_floor_db
        )
    }

    pub fn stft_frames(&self, n_samples: usize) -> usize {
        if n_samples <= self.fft_size {
            1
        } else {
            (n_samples - self.fft_size) / self.hop_size + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CoreError::Config(format!("spectrogram config: {msg}")));
        if self.sample_rate == 0 || self.fft_size < 2 || self.hop_size == 0 || self.n_mels == 0 || self.n_frames == 0 {
            return bad("all sizes must be positive");
        }
        if self.log_floor_db >= 0.0 || !self.log_floor_db.is_finite() {
            return bad("log floor must be a finite negative dB value");
        }
        let samples = (self.clip_s * self.sample_rate as f64).round() as usize;
        let available = self.stft_frames(samples);
        if self.n_frames > available {
            return bad(&format!(
                "{} output frames but a {} s clip only yields {available} STFT frames",
                self.n_frames, self.clip_s
            ));
        }
        if self.n_mels > self.fft_size / 2 {
            return bad("more mel bands than FFT bins");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    pub n_mels: usize,
    pub n_frames: usize,
    /// Row-major `[n_mels][n_frames]`.
    pub values: Vec<f32>,
    pub config_id: String,
}

impl MelSpectrogram {
    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.n_frames + frame]
    }

    /// Copy into a zeroed `size × size` canvas, top-left aligned, cropping anything beyond it.
    pub fn padded(&self, size: usize) -> Vec<f32> {
        let mut out = vec![0.0; size * size];
        for m in 0..self.n_mels.min(size) {
            let cols = self.n_frames.min(size);
            out[m * size..m * size + cols]
                .copy_from_slice(&self.values[m * self.n_frames..m * self.n_frames + cols]);
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.values.len());
        out.extend_from_slice(&(self.n_mels as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_frames as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], config_id: &str) -> std::result::Result<Self, String> {
        if bytes.len() < 8 {
            return Err("missing 8-byte header".into());
        }
        let n_mels = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let n_frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let want = 8 + 4 * n_mels * n_frames;
        if bytes.len() != want {
            return Err(format!("expected {want} bytes for {n_mels}x{n_frames}, found {}", bytes.len()));
        }
        let values = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            n_mels,
            n_frames,
            values,
            config_id: config_id.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, config_id: &str) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, config_id).map_err(|detail| CoreError::Format {
            path: path.display().to_string(),
            detail,
        })
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequency of a mel band, in Hz.
pub fn mel_center_hz(cfg: &SpectroConfig, band: usize) -> f64 {
    let top = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    mel_to_hz(top * (band + 1) as f64 / (cfg.n_mels + 1) as f64)
}

/// Reusable STFT + mel projection for one configuration.
pub struct MelAnalyzer {
    cfg: SpectroConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// Sparse triangular filters: (first bin, weights).
    filters: Vec<(usize, Vec<f64>)>,
    /// Power of a full-scale sine at a bin centre; 0 dB.
    reference_power: f64,
}

impl MelAnalyzer {
    pub fn new(cfg: &SpectroConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.fft_size;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let window: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let window_sum: f64 = window.iter().sum();
        Ok(Self {
            cfg: cfg.clone(),
            fft,
            filters: mel_filters(cfg),
            reference_power: (window_sum / 2.0).powi(2),
            window,
        })
    }

    pub fn config(&self) -> &SpectroConfig {
        &self.cfg
    }

    /// Raw mel-band power per STFT frame, `[frame][mel]`.
    pub fn mel_power_frames(&self, clip: &AudioClip) -> Result<Vec<Vec<f64>>> {
        if clip.sample_rate != self.cfg.sample_rate {
            return Err(CoreError::SampleRate {
                expected: self.cfg.sample_rate,
                got: clip.sample_rate,
            });
        }
        clip.validate()?;
        let n = self.cfg.fft_size;
        let frames = self.cfg.stft_frames(clip.samples.len());
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n / 2 + 1];
        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            let start = f * self.cfg.hop_size;
            for (i, slot) in buf.iter_mut().enumerate() {
                let s = clip.samples.get(start + i).copied().unwrap_or(0.0) as f64;
                *slot = Complex::new(s * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            out.push(
                self.filters
                    .iter()
                    .map(|(first, w)| w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum())
                    .collect(),
            );
        }
        Ok(out)
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        let frames = self.mel_power_frames(clip)?;
        let (n_mels, n_out) = (self.cfg.n_mels, self.cfg.n_frames);
        let floor = self.cfg.log_floor_db;
        let floor_power = self.reference_power * 10f64.powf(floor / 10.0);
        let mut values = vec![0.0f32; n_mels * n_out];
        let total = frames.len();
        for g in 0..n_out {
            let lo = g * total / n_out;
            let hi = ((g + 1) * total / n_out).max(lo + 1).min(total);
            let lo = lo.min(hi - 1);
            for m in 0..n_mels {
                let mean = frames[lo..hi].iter().map(|fr| fr[m]).sum::<f64>() / (hi - lo) as f64;
                let db = if mean <= floor_power {
                    floor
                } else {
                    (10.0 * (mean / self.reference_power).log10()).clamp(floor, 0.0)
                };
                values[m * n_out + g] = ((db - floor) / -floor) as f32;
            }
        }
        Ok(MelSpectrogram {
            n_mels,
            n_frames: n_out,
            values,
            config_id: self.cfg.id(),
        })
    }
}

pub fn compute_mel_spectrogram(clip: &AudioClip, cfg: &SpectroConfig) -> Result<MelSpectrogram> {
    MelAnalyzer::new(cfg)?.compute(clip)
}

fn mel_filters(cfg: &SpectroConfig) -> Vec<(usize, Vec<f64>)> {
    let bins = cfg.fft_size / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let top = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let weights: Vec<(usize, f64)> = (0..bins)
                .filter_map(|b| {
                    let f = b as f64 * bin_hz;
                    let w = if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((b, w))
                })
                .collect();
            let first = weights.first().map(|w| w.0).unwrap_or(0);
            (first, weights.into_iter().map(|w| w.1).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        SpectroConfig::default().validate().unwrap();
        let cfg = SpectroConfig::default();
        assert_eq!(cfg.stft_frames(220500), 858);
    }

    #[test]
    fn too_many_frames_rejected() {
        let cfg = SpectroConfig {
            n_frames: 5000,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn every_filter_has_support() {
        for (_, w) in mel_filters(&SpectroConfig::default()) {
            assert!(!w.is_empty());
        }
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 440.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn bytes_round_trip() {
        let spec = MelSpectrogram {
            n_mels: 2,
            n_frames: 3,
            values: vec![0.0, 0.1, 0.2, 0.3, 0.4, 1.0],
            config_id: "x".into(),
        };
        let bytes = spec.to_bytes();
        assert_eq!(&bytes[0..8], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(MelSpectrogram::from_bytes(&bytes, "x").unwrap(), spec);
        assert!(MelSpectrogram::from_bytes(&bytes[..bytes.len() - 1], "x").is_err());
    }

    #[test]
    fn padding_places_top_left() {
        let spec = MelSpectrogram {
            n_mels: 2,
            n_frames: 2,
            values: vec![1.0, 2.0, 3.0, 4.0],
            config_id: String::new(),
        };
        assert_eq!(spec.padded(3), vec![1.0, 2.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(spec.padded(1), vec![1.0]);
    }

    #[test]
    fn wrong_sample_rate_rejected() {
        let clip = AudioClip::new(vec![0.0; 22050], 16000, "r", 0.0);
        assert!(matches!(
            compute_mel_spectrogram(&clip, &SpectroConfig::default()),
            Err(CoreError::SampleRate { .. })
        ));
    }
}
