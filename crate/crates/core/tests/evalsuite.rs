mod common;

use std::collections::BTreeSet;

use echoloop_core::evalsuite::*;
use echoloop_core::session::{SessionConfig, SessionModels};
use proptest::prelude::*;

fn ids(models: &SessionModels) -> Vec<String> {
    models.manifest.iter().map(|r| r.clip_id.clone()).collect()
}

/// Fewer candidate lines keep the briefly trained fixture fast.
fn quick() -> EvalConfig {
    EvalConfig {
        candidates: 10,
        ..Default::default()
    }
}

fn with_compositions(f: impl Fn(usize) -> String) -> SessionModels {
    let mut m = common::small_system().models();
    for (i, r) in m.manifest.iter_mut().enumerate() {
        r.composition_id = f(i);
    }
    m
}

#[test]
fn precision_zero_when_every_clip_is_its_own_composition() {
    let m = with_compositions(|i| format!("solo{i}"));
    let report = eval_precision(&m, &ids(&m)[..8], &PRECISION_CUTOFFS, &quick()).unwrap();
    assert!(report.overall.precision.values().all(|&p| p == 0.0), "{report:?}");
    assert_eq!(report.overall.random_baseline, 0.0);
    assert_eq!(report.overall.clips, 8);
}

#[test]
fn precision_one_for_single_composition() {
    let m = with_compositions(|_| "all".into());
    let n = m.manifest.len();
    let cutoffs = [n - 1, 10, 5, 1];
    let report = eval_precision(&m, &ids(&m)[..8], &cutoffs, &quick()).unwrap();
    assert!(report.overall.precision.values().all(|&p| p == 1.0), "{report:?}");
    assert_eq!(report.overall.random_baseline, 1.0);
    for row in report.categories.values() {
        assert!(row.precision.values().all(|&p| p == 1.0));
    }
}

#[test]
fn precision_is_deterministic_and_bounded() {
    let m = common::small_models();
    let cfg = EvalConfig {
        line_top_k: 1,
        ..quick()
    };
    let clips = ids(&m);
    let a = eval_precision(&m, &clips, &[20, 5, 1], &cfg).unwrap();
    assert_eq!(a, eval_precision(&m, &clips, &[20, 5, 1], &cfg).unwrap());
    for row in a.categories.values().chain([&a.overall]) {
        assert!(row.precision.values().all(|p| (0.0..=1.0).contains(p)));
    }
    // 6 clips per composition in a 36-clip catalogue
    assert!((a.overall.random_baseline - 5.0 / 35.0).abs() < 1e-12);
    let tagged: usize = a.categories.values().map(|r| r.clips).sum();
    assert!(tagged >= clips.len());
}

#[test]
fn random_baseline_matches_uniform_expectation() {
    assert!((random_baseline(16, 576) - 15.0 / 575.0).abs() < 1e-15);
    assert_eq!(random_baseline(1, 10), 0.0);
    assert_eq!(random_baseline(5, 1), 0.0);
    // Expected hits in the top k of a uniform shuffle of the other N-1 clips.
    let (size, n, k) = (4usize, 12usize, 3usize);
    let mut rng = echoloop_neural::SessionRng::new(1);
    let trials = 200_000;
    let mut total = 0.0;
    for _ in 0..trials {
        let mut others: Vec<bool> = (0..n - 1).map(|i| i < size - 1).collect();
        rand::seq::SliceRandom::shuffle(others.as_mut_slice(), &mut rng);
        total += others[..k].iter().filter(|&&b| b).count() as f64 / k as f64;
    }
    assert!((total / trials as f64 - random_baseline(size, n)).abs() < 0.003);
}

fn list(ids: &[usize]) -> Vec<String> {
    ids.iter().map(|i| format!("c{i}")).collect()
}

#[test]
fn impact_fixtures_hit_both_bounds() {
    let same: Vec<Vec<String>> = (0..10).map(|_| list(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10])).collect();
    for n in IMPACT_NS {
        assert_eq!(impact_at(&same, n), 0.1);
    }
    let disjoint: Vec<Vec<String>> = (0..10).map(|i| list(&(i * 10..i * 10 + 10).collect::<Vec<_>>())).collect();
    for n in IMPACT_NS {
        assert_eq!(impact_at(&disjoint, n), 1.0);
    }
}

proptest! {
    #[test]
    fn impact_stays_within_bounds(
        lists in prop::collection::vec(prop::collection::vec(0usize..15, 10), 10),
        n in 1usize..=10,
    ) {
        // distinct ids within each list, as in a ranking
        let lists: Vec<Vec<String>> = lists
            .iter()
            .enumerate()
            .map(|(j, l)| {
                let mut seen = BTreeSet::new();
                let mut out: Vec<usize> = l.iter().copied().filter(|x| seen.insert(*x)).collect();
                out.extend((100 + 10 * j..).take(10 - out.len()));
                list(&out)
            })
            .collect();
        let v = impact_at(&lists, n);
        prop_assert!((0.1..=1.0).contains(&v), "{}", v);
    }
}

#[test]
fn impact_on_trained_system_is_bounded_and_deterministic() {
    let m = common::small_models();
    let clips = ids(&m)[..6].to_vec();
    let cfg = quick();
    let a = eval_impact(&m, &clips, 10, &IMPACT_NS, &cfg).unwrap();
    assert_eq!(a, eval_impact(&m, &clips, 10, &IMPACT_NS, &cfg).unwrap());
    for row in a.categories.values().chain([&a.overall]) {
        for n in IMPACT_NS {
            assert!((0.1..=1.0).contains(&row.impact[&n]), "{row:?}");
            assert!(row.variance[&n] >= 0.0);
        }
    }
}

#[test]
fn bad_inputs_are_config_errors() {
    let m = common::small_models();
    let cfg = quick();
    assert!(eval_precision(&m, &[], &[1], &cfg).is_err());
    assert!(eval_precision(&m, &ids(&m)[..1], &[0], &cfg).is_err());
    assert!(eval_precision(&m, &["nope".to_string()], &[1], &cfg).is_err());
    assert!(eval_impact(&m, &ids(&m)[..1], 0, &[2], &cfg).is_err());
}

#[test]
fn tables_list_every_category() {
    let m = common::small_models();
    let p = eval_precision(&m, &ids(&m), &PRECISION_CUTOFFS, &quick()).unwrap();
    let t = p.to_table();
    for name in p.categories.keys().chain([&"overall".to_string()]) {
        assert!(t.contains(name.as_str()), "{t}");
    }
    assert!(t.contains("P@50") && t.contains("P@1"));
}

#[test]
fn listening_pairs_export() {
    let dir = tempfile::tempdir().unwrap();
    let session = SessionConfig {
        candidates: 10,
        ..Default::default()
    };
    let pairs = PairsConfig {
        duration_s: 12.0,
        ..Default::default()
    };
    let keys = export_listening_pairs(common::small_models(), &session, &pairs, dir.path()).unwrap();
    assert_eq!(keys.len(), 30);
    let wavs = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wav"))
        .count();
    assert_eq!(wavs, 60);
    let stored: Vec<PairKey> = serde_json::from_slice(&std::fs::read(dir.path().join("key.json")).unwrap()).unwrap();
    assert_eq!(stored, keys);
    let heads = keys.iter().filter(|k| k.test_position == PairPosition::A).count();
    assert!((7..=23).contains(&heads), "{heads}");
    let (samples, sr) = echoloop_core::corpus::read_wav(dir.path().join(&keys[0].a)).unwrap();
    assert_eq!(samples.len(), 12 * sr as usize);
}
