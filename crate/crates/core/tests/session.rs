mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use echoloop_core::corpus::{AudioClip, Instrument};
use echoloop_core::session::*;
use echoloop_core::text_cvae::LineSource;
use echoloop_core::CoreError;

fn models() -> Arc<SessionModels> {
    common::small_models()
}

fn session(seed: u64) -> Session {
    Session::new(
        models(),
        SessionConfig {
            seed,
            ..Default::default()
        },
    )
    .unwrap()
}

fn trace(s: &mut Session, steps: usize) -> Vec<(String, String)> {
    (0..steps)
        .map(|_| {
            let out = s.step().unwrap();
            (out.line.text, out.clip.clip_id)
        })
        .collect()
}

#[test]
fn fixed_seed_traces_repeat() {
    let a = trace(&mut session(5), 5);
    let b = trace(&mut session(5), 5);
    assert_eq!(a, b);
    assert_ne!(a, trace(&mut session(6), 5));
}

#[test]
fn pinned_clip_conditions_every_step() {
    let mut s = session(1);
    let pin = models().manifest[3].clip_id.clone();
    s.pin(Some(&pin)).unwrap();
    trace(&mut s, 5);
    for h in &s.history()[1..] {
        assert_eq!(h.conditioning, ConditioningSource::Pinned);
        assert_eq!(h.conditioning_clip_id.as_deref(), Some(pin.as_str()));
    }
    s.pin(None).unwrap();
    let prev = s.current_clip().clip_id.clone();
    s.step().unwrap();
    let last = s.history().last().unwrap();
    assert_eq!(last.conditioning, ConditioningSource::Previous);
    assert_eq!(last.conditioning_clip_id.as_deref(), Some(prev.as_str()));
    assert!(matches!(s.pin(Some("nope")), Err(CoreError::UnknownClip(_))));
}

#[test]
fn user_line_applies_for_exactly_one_step() {
    let mut s = session(2);
    trace(&mut s, 2);
    let text = models().text.vocab().token(4).to_string() + " " + models().text.vocab().token(5);
    s.submit_line(&text).unwrap();
    let used = s.step().unwrap();
    assert_eq!(used.line.text, text);
    assert_eq!(used.line.source, LineSource::User);
    let next = s.step().unwrap();
    assert_eq!(next.line.source, LineSource::Generated);
    assert!(s.pending_user_line().is_none());
}

#[test]
fn unusable_user_line_is_rejected() {
    let mut s = session(2);
    assert!(matches!(s.submit_line("qqqq zzzz"), Err(CoreError::RejectedLine(_))));
    assert!(s.pending_user_line().is_none());
}

#[test]
fn live_beats_pinned_beats_previous() {
    let m = models();
    let mut s = session(3);
    let silence = AudioClip::new(vec![0.0; 220_500], m.spectro.sample_rate, "live", 0.0);
    assert!(matches!(s.ingest_live_clip(&silence), Err(CoreError::Mode(_))));

    s.set_mode(SessionMode::Live);
    let code = s.ingest_live_clip(&silence).unwrap();
    assert!(code.z.iter().all(|x| x.is_finite()));
    s.pin(Some(&m.manifest[0].clip_id)).unwrap();
    s.step().unwrap();
    let h = s.history().last().unwrap();
    assert_eq!(h.conditioning, ConditioningSource::Live);
    assert_eq!(h.conditioning_clip_id, None);
    s.step().unwrap();
    assert_eq!(s.history().last().unwrap().conditioning, ConditioningSource::Pinned);

    let wrong_rate = AudioClip::new(vec![0.0; 1000], 8000, "live", 0.0);
    assert!(matches!(s.ingest_live_clip(&wrong_rate), Err(CoreError::SampleRate { .. })));
}

#[test]
fn masked_instruments_never_play() {
    let mut s = session(4);
    s.set_instrument(Instrument::Drone, false);
    for _ in 0..10 {
        let out = s.step().unwrap();
        assert!(!out.clip.instrument_tags.contains(&Instrument::Drone));
    }
    s.set_instrument(Instrument::Drone, true);
    assert!(s.mask().excluded.is_empty());
}

#[test]
fn empty_mask_result_leaves_state_untouched() {
    let mut s = session(5);
    trace(&mut s, 2);
    s.submit_line(models().text.vocab().token(4)).unwrap();
    let history = s.history().to_vec();
    let current = s.current_clip().clone();
    s.set_mask(Instrument::ALL.iter().copied().collect::<BTreeSet<_>>());
    assert!(matches!(s.step(), Err(CoreError::EmptyCandidates)));
    assert_eq!(s.history(), &history[..]);
    assert_eq!(s.current_clip(), &current);
    assert!(s.pending_user_line().is_some());

    // The failed step consumed no randomness.
    let mut twin = session(5);
    trace(&mut twin, 2);
    twin.submit_line(models().text.vocab().token(4)).unwrap();
    s.set_mask(BTreeSet::new());
    assert_eq!(trace(&mut s, 3), trace(&mut twin, 3));
}

#[test]
fn history_is_ordered_and_complete() {
    let mut s = session(6);
    let outs: Vec<_> = (0..6).map(|_| s.step().unwrap()).collect();
    let h = s.history();
    assert_eq!(h.len(), 7);
    assert!(h.windows(2).all(|w| w[0].timestamp_ms < w[1].timestamp_ms));
    assert!(h[0].line.is_none());
    for (rec, out) in h[1..].iter().zip(&outs) {
        assert_eq!(rec.clip_id, out.clip.clip_id);
        assert_eq!(rec.line.as_ref(), Some(&out.line));
        assert_eq!(rec.line_id, Some(out.line_id));
        assert!((1..=10).contains(&rec.k));
    }
    assert_eq!(s.line(3).unwrap().clip_id, outs[2].clip.clip_id);
}

#[test]
fn manual_k_with_argmax_is_deterministic_per_query() {
    let mut s = Session::new(
        models(),
        SessionConfig {
            seed: 7,
            strategy: echoloop_core::retrieval::SelectStrategy::Argmax,
            ..Default::default()
        },
    )
    .unwrap();
    s.set_manual_k(4).unwrap();
    assert!(s.set_manual_k(99).is_err());
    s.step().unwrap();
    let h = s.history().last().unwrap();
    assert_eq!(h.k, 4);
    let top = models().index.rank(&[], &Default::default());
    assert!(top.is_err());
}

#[test]
fn schedules_respect_ranges_and_chain_crossfades() {
    let mut s = session(8);
    let mut prev_out = s.history()[0].schedule.crossfade_out_s;
    for _ in 0..20 {
        let e = s.step().unwrap().schedule;
        assert!((10.0..=40.0).contains(&e.duration_s), "{e:?}");
        assert!((2.0..=6.0).contains(&e.crossfade_out_s));
        assert_eq!(e.crossfade_in_s, prev_out.min(e.duration_s / 2.0));
        prev_out = e.crossfade_out_s;
    }
}

#[test]
fn schedule_truncates_at_recording_end() {
    let m = models();
    let mut s = session(9);
    let recording = &m.manifest[0].recording_id;
    let total = m.recordings.duration_s(recording).unwrap();
    let mut late = m.manifest.iter().filter(|r| &r.recording_id == recording).last().unwrap().clone();
    late.offset_s = total - 12.0;
    for _ in 0..200 {
        let e = s.schedule(&late).unwrap();
        assert!(e.duration_s <= 12.0 + 1e-9 && e.duration_s >= 10.0);
    }
}

#[test]
fn untruncated_durations_average_near_midpoint() {
    use rand::SeedableRng;
    let mut store = echoloop_core::corpus::RecordingStore::new(22050);
    store.insert("long", vec![0.0; 22050 * 100]);
    let clip = echoloop_core::corpus::ClipRecord {
        clip_id: "long__0000000".into(),
        composition_id: "long".into(),
        instrument_tags: [Instrument::Drone].into_iter().collect(),
        recording_id: "long".into(),
        offset_s: 0.0,
        spectrogram_path: String::new(),
    };
    let cfg = SessionConfig::default();
    let mut rng = rand::rngs::StdRng::seed_from_u64(10);
    let durations: Vec<f64> = (0..1000)
        .map(|_| schedule_clip(&store, &clip, &cfg, 0.0, &mut rng).unwrap().duration_s)
        .collect();
    let mean = durations.iter().sum::<f64>() / 1000.0;
    assert!((24.0..=26.0).contains(&mean), "{mean}");
    assert!(durations.iter().all(|d| (10.0..=40.0).contains(d)));
}

#[test]
fn crossfade_gains_are_equal_power() {
    for n in [1, 2, 3, 44_100, 132_300] {
        let curve = crossfade_curve(n);
        assert_eq!(curve.len(), n);
        for (g_out, g_in) in curve {
            assert!((g_out * g_out + g_in * g_in - 1.0).abs() < 1e-6);
        }
    }
    assert_eq!(crossfade_gains(0.0), (1.0, 0.0));
    let (o, i) = crossfade_gains(1.0);
    assert!(o.abs() < 1e-15 && (i - 1.0).abs() < 1e-15);
}

#[test]
fn rendered_constant_signal_keeps_power_through_crossfades() {
    let mut store = echoloop_core::corpus::RecordingStore::new(100);
    store.insert("a", vec![1.0; 100 * 60]);
    let entry = |offset: f64, fade_in: f64, fade_out: f64| ScheduleEntry {
        clip_id: format!("a__{offset}"),
        recording_id: "a".into(),
        offset_s: offset,
        duration_s: 20.0,
        crossfade_in_s: fade_in,
        crossfade_out_s: fade_out,
    };
    let entries = [entry(0.0, 0.0, 4.0), entry(10.0, 4.0, 3.0)];
    let out = render_schedule(&store, &entries, 40.0).unwrap();
    assert_eq!(out.len(), 4000);
    // Mid-crossfade: g_out + g_in of one constant signal is sqrt(2) at θ = π/4.
    assert!((out[1800] - 2f32.sqrt()).abs() < 0.02, "{}", out[1800]);
    assert_eq!(out[1000], 1.0);
    assert_eq!(out[3700], 0.0);
    assert!(out[3500] > 0.0 && out[3500] < 1.0);
}

#[test]
fn feedback_log_appends_durable_records() {
    let mut s = session(11);
    trace(&mut s, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/feedback.jsonl");
    {
        let mut log = FeedbackLog::open(&path).unwrap();
        for id in [1, 3] {
            log.append(&FeedbackRecord::from_history(s.line(id).unwrap()).unwrap()).unwrap();
        }
    }
    let mut log = FeedbackLog::open(&path).unwrap();
    log.append(&FeedbackRecord::from_history(s.line(2).unwrap()).unwrap()).unwrap();
    let back = FeedbackLog::read_all(&path).unwrap();
    assert_eq!(back.iter().map(|r| r.line_id).collect::<Vec<_>>(), [1, 3, 2]);
    assert_eq!(back[0].line, s.line(1).unwrap().line.as_ref().unwrap().text);
    assert!(FeedbackRecord::from_history(&s.history()[0]).is_none());
}

#[test]
fn config_validation() {
    let bad = SessionConfig {
        duration_s: (10.0, 5.0),
        ..Default::default()
    };
    assert!(Session::new(models(), bad).is_err());
    let overlap = SessionConfig {
        crossfade_s: (2.0, 12.0),
        ..Default::default()
    };
    assert!(overlap.validate().is_err());
}
