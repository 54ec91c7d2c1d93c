//! Automatic evaluation: same-composition precision, line impact, and
//! listening-test pair export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use echoloop_neural::SessionRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_wav, ClipRecord};
use crate::error::{CoreError, Result};
use crate::latent::Origin;
use crate::retrieval::InstrumentMask;
use crate::session::{render_schedule, schedule_clip, Session, SessionConfig, SessionModels};
use crate::text_cvae::{rank_and_select, GenerateConfig};

pub const PRECISION_CUTOFFS: [usize; 5] = [50, 20, 10, 5, 1];
pub const IMPACT_NS: [usize; 3] = [10, 5, 2];

/// Published figures from a private corpus. Reported beside measurements,
/// never asserted.
pub mod reference {
    pub const OVERALL_P_AT_1: f64 = 0.4423;
    pub const OVERALL_P_AT_50: f64 = 0.2588;
    pub const DRONE_P_AT_1: f64 = 0.5217;
    pub const OVERALL_IMPACT_AT_2: f64 = 0.2048;
    pub const IMPACT_VARIANCE: [(usize, f64); 3] = [(10, 0.0019), (5, 0.0036), (2, 0.0045)];
    pub const LISTENING_ACCURACY: f64 = 0.783;
}

/// P@k with the conditioning clip removed from the ranking.
pub fn precision_at(ranked_compositions: &[&str], composition: &str, k: usize) -> f64 {
    let hits = ranked_compositions.iter().take(k).filter(|c| **c == composition).count();
    hits as f64 / k as f64
}

/// Expected P@k for uniform random retrieval: `(clips in composition − 1) / (N − 1)`.
pub fn random_baseline(composition_size: usize, catalogue: usize) -> f64 {
    if catalogue <= 1 {
        return 0.0;
    }
    composition_size.saturating_sub(1) as f64 / (catalogue - 1) as f64
}

/// Unique clips across all lists over the largest possible count.
pub fn impact_at(lists: &[Vec<String>], n: usize) -> f64 {
    if lists.is_empty() || n == 0 {
        return 0.0;
    }
    let unique: BTreeSet<&String> = lists.iter().flat_map(|l| l.iter().take(n)).collect();
    unique.len() as f64 / (n * lists.len()) as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRow {
    pub clips: usize,
    /// Cutoff → mean P@k.
    pub precision: BTreeMap<usize, f64>,
    pub random_baseline: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub categories: BTreeMap<String, PrecisionRow>,
    pub overall: PrecisionRow,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImpactRow {
    pub clips: usize,
    pub impact: BTreeMap<usize, f64>,
    /// Population variance across conditioning clips.
    pub variance: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub iterations: usize,
    pub categories: BTreeMap<String, ImpactRow>,
    pub overall: ImpactRow,
}

/// Settings shared by both evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seed: u64,
    pub candidates: usize,
    pub line_top_k: usize,
    pub generate: GenerateConfig,
    pub tau: f32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let s = SessionConfig::default();
        Self {
            seed: 0,
            candidates: s.candidates,
            line_top_k: s.line_top_k,
            generate: s.generate,
            tau: s.tau,
        }
    }
}

/// One pass of the loop from a fixed conditioning clip, returning the
/// ranked catalogue without that clip.
fn predict_ranking(models: &SessionModels, clip: &ClipRecord, cfg: &EvalConfig, rng: &mut SessionRng) -> Result<Vec<String>> {
    let cond = models
        .index
        .get(&clip.clip_id)
        .ok_or_else(|| CoreError::UnknownClip(clip.clip_id.clone()))?
        .latent();
    let gen = GenerateConfig {
        count: cfg.candidates,
        ..cfg.generate.clone()
    };
    let lines = models.text.generate_lines(&cond, Some(&clip.clip_id), &gen, rng)?;
    let line = rank_and_select(lines, models.ranker.as_ref(), cfg.line_top_k, rng)?;
    let z_t = models.text.encode_line(&line, &cond)?.sample(cfg.tau, Origin::Text, rng)?;
    let predicted = models.gan.predict_next(&cond, &z_t)?;
    Ok(models
        .index
        .rank(&predicted.z, &InstrumentMask::default())?
        .into_iter()
        .filter(|r| r.clip_id != clip.clip_id)
        .map(|r| r.clip_id)
        .collect())
}

fn categories(clip: &ClipRecord) -> impl Iterator<Item = String> + '_ {
    clip.instrument_tags.iter().map(|t| t.to_string())
}

fn resolve<'a>(models: &'a SessionModels, ids: &[String]) -> Result<Vec<&'a ClipRecord>> {
    if ids.is_empty() {
        return Err(CoreError::Config("no conditioning clips".into()));
    }
    ids.iter().map(|id| models.clip(id)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64
}

pub fn eval_precision(
    models: &SessionModels,
    conditioning: &[String],
    cutoffs: &[usize],
    cfg: &EvalConfig,
) -> Result<PrecisionReport> {
    let clips = resolve(models, conditioning)?;
    if cutoffs.contains(&0) {
        return Err(CoreError::Config("cutoffs must be positive".into()));
    }
    let composition_of: BTreeMap<&str, &str> = models
        .manifest
        .iter()
        .map(|r| (r.clip_id.as_str(), r.composition_id.as_str()))
        .collect();
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &models.manifest {
        *sizes.entry(r.composition_id.as_str()).or_default() += 1;
    }
    let n = models.manifest.len();

    // Per clip: (categories, P@k per cutoff, baseline).
    let mut per_clip = Vec::with_capacity(clips.len());
    for (i, clip) in clips.iter().enumerate() {
        let mut rng = SessionRng::new(cfg.seed).fork(i as u64);
        let ranked = predict_ranking(models, clip, cfg, &mut rng)?;
        let comps: Vec<&str> = ranked.iter().map(|id| composition_of[id.as_str()]).collect();
        let p: Vec<f64> = cutoffs.iter().map(|&k| precision_at(&comps, &clip.composition_id, k)).collect();
        per_clip.push((clip, p, random_baseline(sizes[clip.composition_id.as_str()], n)));
    }

    let row = |members: &[&(&&ClipRecord, Vec<f64>, f64)]| PrecisionRow {
        clips: members.len(),
        precision: cutoffs
            .iter()
            .enumerate()
            .map(|(j, &k)| (k, mean(&members.iter().map(|m| m.1[j]).collect::<Vec<_>>())))
            .collect(),
        random_baseline: mean(&members.iter().map(|m| m.2).collect::<Vec<_>>()),
    };
    let all: Vec<_> = per_clip.iter().collect();
    let mut report = PrecisionReport {
        overall: row(&all),
        ..Default::default()
    };
    let names: BTreeSet<String> = clips.iter().flat_map(|c| categories(c)).collect();
    for name in names {
        let members: Vec<_> = per_clip.iter().filter(|m| categories(m.0).any(|c| c == name)).collect();
        report.categories.insert(name, row(&members));
    }
    Ok(report)
}

pub fn eval_impact(
    models: &SessionModels,
    fixed: &[String],
    iterations: usize,
    ns: &[usize],
    cfg: &EvalConfig,
) -> Result<ImpactReport> {
    let clips = resolve(models, fixed)?;
    if iterations == 0 || ns.contains(&0) {
        return Err(CoreError::Config("iterations and n must be positive".into()));
    }
    let mut per_clip = Vec::with_capacity(clips.len());
    for (i, clip) in clips.iter().enumerate() {
        let mut rng = SessionRng::new(cfg.seed).fork(i as u64);
        let lists = (0..iterations)
            .map(|_| predict_ranking(models, clip, cfg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        per_clip.push((clip, ns.iter().map(|&n| impact_at(&lists, n)).collect::<Vec<f64>>()));
    }
    let row = |members: &[&(&&ClipRecord, Vec<f64>)]| {
        let column = |j: usize| members.iter().map(|m| m.1[j]).collect::<Vec<_>>();
        ImpactRow {
            clips: members.len(),
            impact: ns.iter().enumerate().map(|(j, &n)| (n, mean(&column(j)))).collect(),
            variance: ns.iter().enumerate().map(|(j, &n)| (n, variance(&column(j)))).collect(),
        }
    };
    let all: Vec<_> = per_clip.iter().collect();
    let mut report = ImpactReport {
        iterations,
        overall: row(&all),
        ..Default::default()
    };
    let names: BTreeSet<String> = clips.iter().flat_map(|c| categories(c)).collect();
    for name in names {
        let members: Vec<_> = per_clip.iter().filter(|m| categories(m.0).any(|c| c == name)).collect();
        report.categories.insert(name, row(&members));
    }
    Ok(report)
}

fn table(title: &str, keys: &[usize], label: &str, rows: Vec<(String, usize, &BTreeMap<usize, f64>)>) -> String {
    let mut out = format!("{title}\n{:<12} {:>6}", "category", "clips");
    for k in keys {
        let _ = write!(out, " {:>8}", format!("{label}{k}"));
    }
    out.push('\n');
    for (name, clips, values) in rows {
        let _ = write!(out, "{name:<12} {clips:>6}");
        for k in keys {
            let _ = write!(out, " {:>8.4}", values.get(k).copied().unwrap_or(f64::NAN));
        }
        out.push('\n');
    }
    out
}

impl PrecisionReport {
    pub fn to_table(&self) -> String {
        let keys: Vec<usize> = self.overall.precision.keys().rev().copied().collect();
        let mut rows: Vec<_> = self.categories.iter().map(|(n, r)| (n.clone(), r.clips, &r.precision)).collect();
        rows.push(("overall".into(), self.overall.clips, &self.overall.precision));
        let mut out = table("Same-composition precision", &keys, "P@", rows);
        let _ = writeln!(out, "random baseline {:.4}", self.overall.random_baseline);
        out
    }
}

impl ImpactReport {
    pub fn to_table(&self) -> String {
        let keys: Vec<usize> = self.overall.impact.keys().rev().copied().collect();
        let mut rows: Vec<_> = self.categories.iter().map(|(n, r)| (n.clone(), r.clips, &r.impact)).collect();
        rows.push(("overall".into(), self.overall.clips, &self.overall.impact));
        let mut out = table(&format!("Impact over {} iterations", self.iterations), &keys, "I@", rows);
        let var: Vec<_> = keys.iter().map(|k| format!("{:.4}", self.overall.variance[k])).collect();
        let _ = writeln!(out, "overall variance {}", var.join(" "));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairPosition {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairKey {
    pub pair: usize,
    pub a: String,
    pub b: String,
    pub test_position: PairPosition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairsConfig {
    pub count: usize,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for PairsConfig {
    fn default() -> Self {
        Self {
            count: 30,
            duration_s: 60.0,
            seed: 0,
        }
    }
}

/// Writes `pair_NN_a.wav`/`pair_NN_b.wav` for each pair and the answer key
/// to `key.json`. Test audio comes from an autonomous session; control audio
/// strings uniformly drawn clips through the same scheduler.
pub fn export_listening_pairs(
    models: Arc<SessionModels>,
    session_cfg: &SessionConfig,
    cfg: &PairsConfig,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PairKey>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    if cfg.count == 0 || !(cfg.duration_s > 0.0) {
        return Err(CoreError::Config("pair count and duration must be positive".into()));
    }
    let mut rng = SessionRng::new(cfg.seed);
    let mut keys = Vec::with_capacity(cfg.count);
    for pair in 0..cfg.count {
        let mut session = Session::new(
            Arc::clone(&models),
            SessionConfig {
                seed: rng.random(),
                ..session_cfg.clone()
            },
        )?;
        let mut test = vec![session.history()[0].schedule.clone()];
        while test.iter().map(|e| e.duration_s - e.crossfade_out_s).sum::<f64>() < cfg.duration_s {
            test.push(session.step()?.schedule);
        }

        let mut control = Vec::new();
        let mut prev_out = 0.0;
        while control.iter().map(|e: &crate::session::ScheduleEntry| e.duration_s - e.crossfade_out_s).sum::<f64>() < cfg.duration_s {
            let clip = &models.manifest[rng.random_range(0..models.manifest.len())];
            let entry = schedule_clip(&models.recordings, clip, session_cfg, prev_out, &mut rng)?;
            prev_out = entry.crossfade_out_s;
            control.push(entry);
        }

        let test_audio = render_schedule(&models.recordings, &test, cfg.duration_s)?;
        let control_audio = render_schedule(&models.recordings, &control, cfg.duration_s)?;
        let test_position = if rng.random_bool(0.5) { PairPosition::A } else { PairPosition::B };
        let (a_audio, b_audio) = match test_position {
            PairPosition::A => (&test_audio, &control_audio),
            PairPosition::B => (&control_audio, &test_audio),
        };
        let a = format!("pair_{pair:02}_a.wav");
        let b = format!("pair_{pair:02}_b.wav");
        let sr = models.recordings.sample_rate();
        write_wav(out_dir.join(&a), a_audio, sr)?;
        write_wav(out_dir.join(&b), b_audio, sr)?;
        keys.push(PairKey {
            pair,
            a,
            b,
            test_position,
        });
    }
    std::fs::write(out_dir.join("key.json"), serde_json::to_vec_pretty(&keys)?)?;
    Ok(keys)
}
