use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::UNK;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineSource {
    Generated,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyricLine {
    /// Token ids without specials.
    pub tokens: Vec<usize>,
    pub text: String,
    pub source: LineSource,
    pub conditioning_clip_id: Option<String>,
    pub ranker_score: Option<f64>,
}

/// Scores a line in [0, 1]; must be deterministic.
pub trait LineRanker: Send + Sync {
    fn score(&self, line: &LyricLine) -> f64;
}

/// Stand-in quality score: length window, token variety, no stutter, no UNK.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicRanker {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for HeuristicRanker {
    fn default() -> Self {
        Self { min_len: 4, max_len: 12 }
    }
}

impl LineRanker for HeuristicRanker {
    fn score(&self, line: &LyricLine) -> f64 {
        let n = line.tokens.len();
        if n == 0 {
            return 0.0;
        }
        let length = if n < self.min_len {
            n as f64 / self.min_len as f64
        } else if n > self.max_len {
            (1.0 - (n - self.max_len) as f64 / self.max_len as f64).max(0.0)
        } else {
            1.0
        };
        let mut distinct = line.tokens.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let variety = distinct.len() as f64 / n as f64;
        let longest_run = line
            .tokens
            .chunk_by(|a, b| a == b)
            .map(<[usize]>::len)
            .max()
            .unwrap_or(0);
        let stutter = if longest_run >= 3 { 0.3 } else { 1.0 };
        let unk = line.tokens.iter().filter(|&&t| t == UNK).count() as f64 / n as f64;
        ((0.5 * length + 0.5 * variety) * stutter * (1.0 - unk)).clamp(0.0, 1.0)
    }
}

/// Score every line, keep the `k` best (stable on ties) and draw one uniformly.
pub fn rank_and_select<R: Rng + ?Sized>(
    lines: Vec<LyricLine>,
    ranker: &dyn LineRanker,
    k: usize,
    rng: &mut R,
) -> Result<LyricLine> {
    if lines.is_empty() {
        return Err(CoreError::Config("no candidate lines to rank".into()));
    }
    if k == 0 {
        return Err(CoreError::Config("top-K must be at least 1".into()));
    }
    let mut scored: Vec<(f64, LyricLine)> = lines.into_iter().map(|l| (ranker.score(&l), l)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.truncate(k);
    let pick = rng.random_range(0..scored.len());
    let (score, mut line) = scored.swap_remove(pick);
    line.ranker_score = Some(score);
    Ok(line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use echoloop_neural::SessionRng;

    fn line(tokens: &[usize]) -> LyricLine {
        LyricLine {
            tokens: tokens.to_vec(),
            text: String::new(),
            source: LineSource::Generated,
            conditioning_clip_id: None,
            ranker_score: None,
        }
    }

    #[test]
    fn repeated_run_scores_lower() {
        let r = HeuristicRanker::default();
        assert!(r.score(&line(&[4, 5, 6, 6, 6, 7])) < r.score(&line(&[4, 5, 6, 7, 8, 9])));
    }

    #[test]
    fn unk_scores_lower() {
        let r = HeuristicRanker::default();
        assert!(r.score(&line(&[4, UNK, 6, 7, 8])) < r.score(&line(&[4, 5, 6, 7, 8])));
    }

    #[test]
    fn k1_is_argmax() {
        let r = HeuristicRanker::default();
        let lines = vec![line(&[4]), line(&[4, 5, 6, 7, 8]), line(&[4, 4, 4, 4])];
        let mut rng = SessionRng::new(0);
        for _ in 0..20 {
            let best = rank_and_select(lines.clone(), &r, 1, &mut rng).unwrap();
            assert_eq!(best.tokens, vec![4, 5, 6, 7, 8]);
            assert!(best.ranker_score.is_some());
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        let mut rng = SessionRng::new(0);
        assert!(rank_and_select(vec![], &HeuristicRanker::default(), 10, &mut rng).is_err());
    }
}
