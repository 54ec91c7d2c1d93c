use std::path::Path;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub recording_id: String,
    pub offset_s: f64,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32, recording_id: impl Into<String>, offset_s: f64) -> Self {
        Self {
            samples,
            sample_rate,
            recording_id: recording_id.into(),
            offset_s,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Index and count of non-finite samples, if any.
    pub fn non_finite(&self) -> Option<(usize, usize)> {
        let first = self.samples.iter().position(|s| !s.is_finite())?;
        let count = self.samples.iter().filter(|s| !s.is_finite()).count();
        Some((first, count))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((first, count)) = self.non_finite() {
            return Err(CoreError::InvalidAudio {
                recording_id: self.recording_id.clone(),
                detail: format!("{count} non-finite samples, first at index {first}"),
            });
        }
        Ok(())
    }
}

/// Cut a recording into fixed windows. Any tail shorter than the window is dropped.
pub fn segment_recording(recording: &AudioClip, window_s: f64, stride_s: f64) -> Result<Vec<AudioClip>> {
    if !(window_s > 0.0 && stride_s > 0.0) {
        return Err(CoreError::Config(format!(
            "window ({window_s}) and stride ({stride_s}) must be positive"
        )));
    }
    let sr = recording.sample_rate as f64;
    let window = (window_s * sr).round() as usize;
    let total = recording.samples.len();
    if window > total {
        log::warn!(
            "recording {} ({:.2} s) is shorter than the {window_s} s window; no clips produced",
            recording.recording_id,
            recording.duration_s()
        );
        return Ok(Vec::new());
    }
    let mut clips = Vec::new();
    for k in 0.. {
        let offset_s = k as f64 * stride_s;
        let start = (offset_s * sr).round() as usize;
        if start + window > total {
            break;
        }
        clips.push(AudioClip::new(
            recording.samples[start..start + window].to_vec(),
            recording.sample_rate,
            recording.recording_id.clone(),
            recording.offset_s + offset_s,
        ));
    }
    Ok(clips)
}

/// Read a WAV file as mono f32. Multi-channel input is averaged.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f32>, u32)> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Write mono 16-bit PCM. Samples are clamped to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let mut writer = hound::WavWriter::create(path.as_ref(), wav_spec(sample_rate))?;
    for &s in samples {
        writer.write_sample(to_pcm16(s))?;
    }
    writer.finalize()?;
    Ok(())
}

/// Encode mono 16-bit PCM into an in-memory WAV file.
pub fn wav_bytes(samples: &[f32], sample_rate: u32) -> Result<Vec<u8>> {
    let mut cursor = std::io::Cursor::new(Vec::with_capacity(44 + samples.len() * 2));
    {
        let mut writer = hound::WavWriter::new(&mut cursor, wav_spec(sample_rate))?;
        for &s in samples {
            writer.write_sample(to_pcm16(s))?;
        }
        writer.finalize()?;
    }
    Ok(cursor.into_inner())
}

fn wav_spec(sample_rate: u32) -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

fn to_pcm16(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recording(seconds: f64) -> AudioClip {
        let sr = 100;
        AudioClip::new(vec![0.0; (seconds * sr as f64) as usize], sr, "rec", 0.0)
    }

    fn offsets(clips: &[AudioClip]) -> Vec<f64> {
        clips.iter().map(|c| c.offset_s).collect()
    }

    #[test]
    fn exact_division() {
        let clips = segment_recording(&recording(30.0), 10.0, 10.0).unwrap();
        assert_eq!(offsets(&clips), vec![0.0, 10.0, 20.0]);
        assert!(clips.iter().all(|c| (c.duration_s() - 10.0).abs() < 1e-9));
    }

    #[test]
    fn remainder_dropped() {
        let clips = segment_recording(&recording(25.0), 10.0, 10.0).unwrap();
        assert_eq!(offsets(&clips), vec![0.0, 10.0]);
    }

    #[test]
    fn overlapping_stride() {
        let clips = segment_recording(&recording(30.0), 10.0, 5.0).unwrap();
        assert_eq!(offsets(&clips), vec![0.0, 5.0, 10.0, 15.0, 20.0]);
    }

    #[test]
    fn short_recording_gives_nothing() {
        assert!(segment_recording(&recording(4.0), 10.0, 10.0).unwrap().is_empty());
    }

    #[test]
    fn bad_window_rejected() {
        assert!(segment_recording(&recording(30.0), 0.0, 10.0).is_err());
        assert!(segment_recording(&recording(30.0), 10.0, -1.0).is_err());
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f32> = (0..1000).map(|i| (i as f32 * 0.01).sin() * 0.5).collect();
        write_wav(&path, &samples, 22050).unwrap();
        let (back, sr) = read_wav(&path).unwrap();
        assert_eq!(sr, 22050);
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() < 1e-4);
        }
        assert_eq!(std::fs::read(&path).unwrap(), wav_bytes(&samples, 22050).unwrap());
    }

    #[test]
    fn non_finite_reported() {
        let mut clip = recording(1.0);
        clip.samples[7] = f32::NAN;
        clip.samples[9] = f32::INFINITY;
        assert_eq!(clip.non_finite(), Some((7, 2)));
        assert!(clip.validate().is_err());
    }
}
