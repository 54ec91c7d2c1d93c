use std::collections::BTreeMap;

use echoloop_core::corpus::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn clip(samples: Vec<f32>) -> AudioClip {
    AudioClip::new(samples, 22050, "test", 0.0)
}

const TEN_S: usize = 220500;

#[test]
fn silence_maps_to_zero() {
    let spec = compute_mel_spectrogram(&clip(vec![0.0; TEN_S]), &SpectroConfig::default()).unwrap();
    assert_eq!((spec.n_mels, spec.n_frames), (64, 64));
    assert!(spec.values.iter().all(|&v| v == 0.0));
}

#[test]
fn white_noise_fills_every_cell() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    let noise: Vec<f32> = (0..TEN_S).map(|_| rng.random_range(-1.0..1.0)).collect();
    let spec = compute_mel_spectrogram(&clip(noise), &SpectroConfig::default()).unwrap();
    assert!(spec.values.iter().all(|&v| v > 0.0));
    assert!(spec.values.iter().cloned().fold(0.0, f32::max) >= 0.5);
}

#[test]
fn sine_energy_concentrates_at_its_band() {
    let cfg = SpectroConfig::default();
    let analyzer = MelAnalyzer::new(&cfg).unwrap();
    for band in [5, 20, 30, 45, 60] {
        let f = mel_center_hz(&cfg, band);
        let tone: Vec<f32> = (0..TEN_S / 4)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / 22050.0).sin()) as f32)
            .collect();
        let frames = analyzer.mel_power_frames(&clip(tone)).unwrap();
        for frame in &frames {
            let total: f64 = frame.iter().sum();
            let near: f64 = frame[band - 1..=band + 1].iter().sum();
            assert!(near / total >= 0.8, "band {band}: ratio {}", near / total);
        }
    }
}

#[test]
fn non_finite_sample_rejected_with_diagnostics() {
    let mut samples = vec![0.0; TEN_S];
    samples[1234] = f32::NAN;
    let err = compute_mel_spectrogram(&clip(samples), &SpectroConfig::default()).unwrap_err();
    assert!(err.to_string().contains("1234"), "{err}");
}

#[test]
fn spectrogram_is_bit_deterministic() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(9);
    let audio: Vec<f32> = (0..TEN_S).map(|_| rng.random_range(-0.3..0.3)).collect();
    let cfg = SpectroConfig::default();
    let a = compute_mel_spectrogram(&clip(audio.clone()), &cfg).unwrap();
    let b = compute_mel_spectrogram(&clip(audio), &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn synthetic_manifest_is_deterministic() {
    let spec = SyntheticCorpusSpec {
        drone: 1,
        percussion: 1,
        keyboard: 1,
        clips_per_composition: 2,
        seed: 7,
        ..Default::default()
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let cfg = SpectroConfig::default();
    generate_synthetic_corpus(&spec).unwrap().write(dir_a.path(), &cfg).unwrap();
    generate_synthetic_corpus(&spec).unwrap().write(dir_b.path(), &cfg).unwrap();
    for file in ["manifest.jsonl", "aligned.jsonl", "recordings/drone-00.wav", "spectrograms/keyboard-00__0010000.spec"] {
        assert_eq!(
            std::fs::read(dir_a.path().join(file)).unwrap(),
            std::fs::read(dir_b.path().join(file)).unwrap(),
            "{file}"
        );
    }
    let manifest: Vec<ClipRecord> = read_jsonl(dir_a.path().join("manifest.jsonl")).unwrap();
    validate_manifest(&manifest).unwrap();
    let other = generate_synthetic_corpus(&SyntheticCorpusSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(other.recordings[0].samples, generate_synthetic_corpus(&SyntheticCorpusSpec { seed: 7, ..other.spec.clone() }).unwrap().recordings[0].samples);
}

#[test]
fn four_compositions_by_eight_clips() {
    let spec = SyntheticCorpusSpec {
        drone: 2,
        percussion: 1,
        keyboard: 1,
        clips_per_composition: 8,
        clip_s: 1.0,
        ..Default::default()
    };
    assert_eq!(generate_synthetic_corpus(&spec).unwrap().manifest.len(), 32);
}

fn dominant_band(corpus: &SyntheticCorpus, composition: &str, cfg: &SpectroConfig) -> usize {
    let analyzer = MelAnalyzer::new(cfg).unwrap();
    let mut mean = vec![0.0f64; cfg.n_mels];
    for record in corpus.manifest.iter().filter(|r| r.composition_id == composition) {
        let spec = analyzer.compute(&corpus.clip_audio(record).unwrap()).unwrap();
        for (m, slot) in mean.iter_mut().enumerate() {
            *slot += (0..spec.n_frames).map(|f| spec.get(m, f) as f64).sum::<f64>();
        }
    }
    (0..cfg.n_mels).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap()
}

#[test]
fn keyboard_keys_change_dominant_band() {
    let spec = SyntheticCorpusSpec {
        drone: 0,
        percussion: 0,
        keyboard: 2,
        clips_per_composition: 2,
        keys: BTreeMap::from([("keyboard-00".into(), 0), ("keyboard-01".into(), 6)]),
        ..Default::default()
    };
    let corpus = generate_synthetic_corpus(&spec).unwrap();
    let cfg = SpectroConfig::default();
    let c = dominant_band(&corpus, "keyboard-00", &cfg);
    let fs = dominant_band(&corpus, "keyboard-01", &cfg);
    assert_ne!(c, fs, "C and F# both peak at band {c}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn corpus_spectrograms_stay_in_unit_range(seed in 0u64..1000) {
        let spec = SyntheticCorpusSpec {
            drone: 1,
            percussion: 1,
            keyboard: 1,
            clips_per_composition: 2,
            seed,
            ..Default::default()
        };
        let corpus = generate_synthetic_corpus(&spec).unwrap();
        for s in corpus.spectrograms(&SpectroConfig::default()).unwrap() {
            prop_assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let ids: std::collections::HashSet<_> = corpus.manifest.iter().map(|r| &r.clip_id).collect();
        prop_assert_eq!(ids.len(), corpus.manifest.len());
    }

    #[test]
    fn segmentation_offsets(len_s in 1u32..60, window in 1u32..15, stride in 1u32..15) {
        let rec = AudioClip::new(vec![0.0; len_s as usize * 100], 100, "r", 0.0);
        let clips = segment_recording(&rec, window as f64, stride as f64).unwrap();
        let expected = if window > len_s { 0 } else { (len_s - window) / stride + 1 };
        prop_assert_eq!(clips.len(), expected as usize);
        for (k, c) in clips.iter().enumerate() {
            prop_assert_eq!(c.offset_s, (k as u32 * stride) as f64);
            prop_assert_eq!(c.samples.len(), window as usize * 100);
        }
    }
}
