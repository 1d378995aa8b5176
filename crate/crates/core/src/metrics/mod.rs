//! Scoring and reporting: equal error rate, cumulative score
//! distributions, and spectrograms.

pub mod plot;
pub mod report;

use crate::audio::Waveform;
use crate::{Error, Result};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

/// Trial class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Key {
    Bonafide,
    Spoof,
}

impl Key {
    pub fn as_str(self) -> &'static str {
        match self {
            Key::Bonafide => "bonafide",
            Key::Spoof => "spoof",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bonafide" => Some(Key::Bonafide),
            "spoof" => Some(Key::Spoof),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub utt_id: String,
    pub score: f64,
    pub key: Key,
}

/// Labeled detection scores (bona fide-class logits, higher = more
/// bona fide).
#[derive(Debug, Clone, Default)]
pub struct ScoreSet {
    entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite score for {}",
                    e.utt_id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn push(&mut self, utt_id: impl Into<String>, score: f64, key: Key) {
        self.entries.push(ScoreEntry {
            utt_id: utt_id.into(),
            score,
            key,
        });
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores_of(&self, key: Key) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.key == key)
            .map(|e| e.score)
            .collect()
    }
}

/// Writes `utt_id<TAB>score` lines.
pub fn write_score_file(
    path: impl AsRef<std::path::Path>,
    scores: &[(String, f64)],
) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for (utt, score) in scores {
        text.push_str(&format!("{utt}\t{score}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads `utt_id<TAB>score` lines.
pub fn read_score_file(path: impl AsRef<std::path::Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let (utt, score) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `utt_id<TAB>score`".into()))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| err(format!("bad score \"{score}\"")))?;
        out.push((utt.to_string(), score));
    }
    Ok(out)
}

/// Joins scores with protocol keys into a [`ScoreSet`]. Scored utterances
/// missing from the key map are an error; unscored protocol entries are
/// simply absent.
pub fn join_scores(
    scores: &[(String, f64)],
    keys: &std::collections::HashMap<String, Key>,
) -> Result<ScoreSet> {
    let mut set = ScoreSet::default();
    for (utt, score) in scores {
        let key = keys.get(utt).ok_or_else(|| {
            Error::InvalidInput(format!("scored utterance {utt} is not in the protocol"))
        })?;
        set.push(utt.clone(), *score, *key);
    }
    Ok(set)
}

/// Equal error rate with linear interpolation at the crossing.
///
/// Thresholds are swept at score boundaries (midpoints between adjacent
/// distinct scores, plus sentinels outside the range). At threshold t,
/// FAR(t) is the fraction of spoof trials scored >= t and FRR(t) the
/// fraction of bona fide trials scored < t; the EER and its threshold are
/// linearly interpolated between the two adjacent operating points where
/// FAR - FRR changes sign.
///
/// Returns `(eer, threshold)` with eer in [0, 1].
pub fn compute_eer(scores: &ScoreSet) -> Result<(f64, f64)> {
    let mut bona = scores.scores_of(Key::Bonafide);
    let mut spoof = scores.scores_of(Key::Spoof);
    if bona.is_empty() || spoof.is_empty() {
        return Err(Error::InvalidInput(format!(
            "EER needs both classes: {} bona fide, {} spoof",
            bona.len(),
            spoof.len()
        )));
    }
    bona.sort_by(f64::total_cmp);
    spoof.sort_by(f64::total_cmp);

    let mut distinct: Vec<f64> = bona.iter().chain(spoof.iter()).copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let mut thresholds = Vec::with_capacity(distinct.len() + 1);
    thresholds.push(distinct[0] - 1.0);
    for pair in distinct.windows(2) {
        thresholds.push(0.5 * (pair[0] + pair[1]));
    }
    thresholds.push(distinct[distinct.len() - 1] + 1.0);

    // count of elements in `sorted` that are < t
    let count_below = |sorted: &[f64], t: f64| sorted.partition_point(|&s| s < t);

    let far = |t: f64| (spoof.len() - count_below(&spoof, t)) as f64 / spoof.len() as f64;
    let frr = |t: f64| count_below(&bona, t) as f64 / bona.len() as f64;

    let mut prev_t = thresholds[0];
    let mut prev_far = far(prev_t);
    let mut prev_frr = frr(prev_t);
    debug_assert!(prev_far - prev_frr > 0.0);
    for &t in &thresholds[1..] {
        let cur_far = far(t);
        let cur_frr = frr(t);
        let prev_d = prev_far - prev_frr;
        let cur_d = cur_far - cur_frr;
        if cur_d <= 0.0 {
            let alpha = prev_d / (prev_d - cur_d);
            let eer = prev_frr + alpha * (cur_frr - prev_frr);
            let threshold = prev_t + alpha * (t - prev_t);
            return Ok((eer, threshold));
        }
        prev_t = t;
        prev_far = cur_far;
        prev_frr = cur_frr;
    }
    unreachable!("FAR - FRR spans +1..-1 over the sentinel range");
}

/// Cumulative score distributions per class over a shared grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CdfTable {
    pub grid: Vec<f64>,
    /// (class, cumulative fraction at each grid point); only classes
    /// present in the score set appear.
    pub per_class: Vec<(Key, Vec<f64>)>,
}

/// Empirical CDFs of both classes on `bins` evenly spaced grid points over
/// the observed score range.
pub fn score_distribution(scores: &ScoreSet, bins: usize) -> Result<CdfTable> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("empty score set".into()));
    }
    let bins = bins.max(1);
    let all: Vec<f64> = scores.entries().iter().map(|e| e.score).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid: Vec<f64> = if bins == 1 || lo == hi {
        vec![hi]
    } else {
        (0..bins)
            .map(|i| {
                if i == bins - 1 {
                    hi // exact endpoint so the max score is always covered
                } else {
                    lo + (hi - lo) * i as f64 / (bins - 1) as f64
                }
            })
            .collect()
    };
    let mut per_class = Vec::new();
    for key in [Key::Bonafide, Key::Spoof] {
        let mut class_scores = scores.scores_of(key);
        if class_scores.is_empty() {
            continue;
        }
        class_scores.sort_by(f64::total_cmp);
        let n = class_scores.len() as f64;
        let cdf = grid
            .iter()
            .map(|&g| class_scores.partition_point(|&s| s <= g) as f64 / n)
            .collect();
        per_class.push((key, cdf));
    }
    Ok(CdfTable { grid, per_class })
}

/// Log-magnitude short-time spectrogram.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    /// Row-major (frames x bins), dB relative to the global maximum,
    /// floored at -80.
    pub values_db: Vec<f64>,
}

pub const SPEC_DB_FLOOR: f64 = -80.0;

/// Short-time magnitude spectrogram with a periodic Hann window,
/// log-scaled relative to the peak magnitude and floored at -80 dB.
pub fn spectrogram(wav: &Waveform, frame: usize, hop: usize) -> Result<Spectrogram> {
    if frame == 0 || hop == 0 {
        return Err(Error::InvalidInput("frame and hop must be positive".into()));
    }
    let len = wav.len();
    if len < frame {
        return Err(Error::InvalidInput(format!(
            "waveform of {len} samples shorter than the {frame}-sample analysis frame"
        )));
    }
    let frames = (len - frame) / hop + 1;
    let bins = frame / 2 + 1;

    let window: Vec<f64> = (0..frame)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / frame as f64).cos()))
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(frame);
    let samples = wav.samples_f64();

    let mut mags = vec![0.0; frames * bins];
    let mut buf = vec![Complex64::default(); frame];
    for f in 0..frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            mags[f * bins + k] = buf[k].norm();
        }
    }

    let max = mags.iter().copied().fold(0.0f64, f64::max);
    let values_db = if max <= 0.0 {
        vec![SPEC_DB_FLOOR; frames * bins]
    } else {
        mags.iter()
            .map(|&m| {
                if m <= 0.0 {
                    SPEC_DB_FLOOR
                } else {
                    (20.0 * (m / max).log10()).max(SPEC_DB_FLOOR)
                }
            })
            .collect()
    };

    Ok(Spectrogram {
        frames,
        bins,
        values_db,
    })
}
