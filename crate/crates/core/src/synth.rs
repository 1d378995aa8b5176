//! Synthetic multi-speaker corpus for desk-scale runs.
//!
//! Each speaker is a harmonic signature: a fundamental and a per-speaker
//! envelope over its harmonics. Bona fide utterances jitter the envelope
//! and phases. "Spoofed" utterances imitate the target speaker with
//! systematic synthesis artifacts — a spectral tilt, an additive
//! non-harmonic buzz whose frequency depends on the attack system, and a
//! raised noise floor. The artifacts are spectral, so a time-domain
//! masking model can plausibly remove them, which is the behavior the toy
//! pipeline exists to demonstrate.

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::metrics::Key;
use crate::nn::init::{mix_seed, rng_from_seed, Rng};
use crate::proto::TrialRecord;
use crate::Result;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub const SYSTEMS: [&str; 6] = ["A01", "A02", "A03", "A04", "A05", "A06"];
const HARMONICS: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub speakers: usize,
    pub bona_per_speaker: usize,
    /// Spoofed utterances per speaker; systems rotate A01..A06.
    pub spoofs_per_speaker: usize,
    /// Additional held-out utterances per speaker for the evaluation
    /// protocol (same speakers, fresh renderings).
    pub eval_bona_per_speaker: usize,
    pub eval_spoofs_per_speaker: usize,
    pub length: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn toy(seed: u64) -> Self {
        Self {
            speakers: 8,
            bona_per_speaker: 32,
            spoofs_per_speaker: 32,
            eval_bona_per_speaker: 6,
            eval_spoofs_per_speaker: 6,
            length: 4000,
            seed,
        }
    }
}

struct SpeakerSignature {
    f0: f64,
    envelope: [f64; HARMONICS],
}

fn signature(speaker: usize, seed: u64) -> SpeakerSignature {
    let mut rng = rng_from_seed(mix_seed(seed, &format!("speaker-{speaker}")));
    let f0 = 105.0 + 17.0 * speaker as f64 + rng.gen_range(-3.0..3.0);
    let mut envelope = [0.0; HARMONICS];
    for (h, e) in envelope.iter_mut().enumerate() {
        let rolloff = 1.0 / (1.0 + h as f64 * 0.35);
        *e = rolloff * rng.gen_range(0.25..1.0);
    }
    SpeakerSignature { f0, envelope }
}

fn render(
    sig: &SpeakerSignature,
    length: usize,
    tilt: f64,
    buzz: Option<f64>,
    noise_sigma: f64,
    rng: &mut Rng,
) -> Waveform {
    let mut samples = vec![0.0f64; length];
    let two_pi = 2.0 * std::f64::consts::PI;
    for h in 0..HARMONICS {
        let freq = sig.f0 * (h + 1) as f64;
        if freq >= SAMPLE_RATE as f64 / 2.0 {
            break;
        }
        let amp = sig.envelope[h] * tilt.powi(h as i32) * rng.gen_range(0.85..1.15);
        let phase = rng.gen_range(0.0..two_pi);
        for (i, s) in samples.iter_mut().enumerate() {
            *s += amp * (two_pi * freq * i as f64 / SAMPLE_RATE as f64 + phase).sin();
        }
    }
    if let Some(buzz_freq) = buzz {
        let phase = rng.gen_range(0.0..two_pi);
        for (i, s) in samples.iter_mut().enumerate() {
            *s += 0.9 * (two_pi * buzz_freq * i as f64 / SAMPLE_RATE as f64 + phase).sin();
        }
    }
    for s in samples.iter_mut() {
        *s += rng.gen_range(-1.0..1.0) * noise_sigma;
    }
    let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-9);
    let scale = 0.5 / peak;
    Waveform::new(
        samples.iter().map(|&v| (v * scale) as f32).collect(),
        SAMPLE_RATE,
    )
    .expect("synthesized waveform is finite and nonempty")
}

fn speaker_name(s: usize) -> String {
    format!("SP{s:02}")
}

fn bona_utt(sig: &SpeakerSignature, length: usize, seed: u64, s: usize, u: usize) -> Waveform {
    let mut rng = rng_from_seed(mix_seed(seed, &format!("bona-{s}-{u}")));
    render(sig, length, 1.0, None, 0.01, &mut rng)
}

fn spoof_utt(sig: &SpeakerSignature, length: usize, seed: u64, s: usize, u: usize) -> Waveform {
    let sys_idx = u % SYSTEMS.len();
    let mut rng = rng_from_seed(mix_seed(seed, &format!("spoof-{s}-{u}")));
    // Synthesis artifacts: brighter tilt, a system-specific buzz tone well
    // above the harmonic stack, and more noise.
    let buzz = 2800.0 + 140.0 * sys_idx as f64;
    render(sig, length, 1.35, Some(buzz), 0.02, &mut rng)
}

fn corpus_side(
    config: &SynthConfig,
    bona_range: std::ops::Range<usize>,
    spoof_range: std::ops::Range<usize>,
) -> Vec<(TrialRecord, Waveform)> {
    let mut out = Vec::new();
    for s in 0..config.speakers {
        let sig = signature(s, config.seed);
        let speaker_id = speaker_name(s);
        for u in bona_range.clone() {
            out.push((
                TrialRecord {
                    speaker_id: speaker_id.clone(),
                    utt_id: format!("U_{speaker_id}_B{u:03}"),
                    system_id: "-".into(),
                    key: Key::Bonafide,
                },
                bona_utt(&sig, config.length, config.seed, s, u),
            ));
        }
        for u in spoof_range.clone() {
            out.push((
                TrialRecord {
                    speaker_id: speaker_id.clone(),
                    utt_id: format!("U_{speaker_id}_S{u:03}"),
                    system_id: SYSTEMS[u % SYSTEMS.len()].into(),
                    key: Key::Spoof,
                },
                spoof_utt(&sig, config.length, config.seed, s, u),
            ));
        }
    }
    out
}

/// Generates the training-side corpus: every record carries its waveform.
/// Bona fide utterances come first per speaker, then spoofed ones.
pub fn generate_corpus(config: &SynthConfig) -> Result<Vec<(TrialRecord, Waveform)>> {
    Ok(corpus_side(
        config,
        0..config.bona_per_speaker,
        0..config.spoofs_per_speaker,
    ))
}

/// Generates the held-out evaluation corpus: the same speakers, fresh
/// renderings with disjoint utterance ids.
pub fn generate_eval_corpus(config: &SynthConfig) -> Result<Vec<(TrialRecord, Waveform)>> {
    Ok(corpus_side(
        config,
        config.bona_per_speaker..config.bona_per_speaker + config.eval_bona_per_speaker,
        config.spoofs_per_speaker..config.spoofs_per_speaker + config.eval_spoofs_per_speaker,
    ))
}

/// Writes training and evaluation corpora as WAV files plus two protocol
/// files. Returns (train records, eval records) in protocol order.
pub fn write_corpus(
    config: &SynthConfig,
    audio_dir: impl AsRef<std::path::Path>,
    train_protocol: impl AsRef<std::path::Path>,
    eval_protocol: impl AsRef<std::path::Path>,
) -> Result<(Vec<TrialRecord>, Vec<TrialRecord>)> {
    let audio_dir = audio_dir.as_ref();
    std::fs::create_dir_all(audio_dir).map_err(|e| crate::Error::io(audio_dir, e))?;
    let write_side = |corpus: Vec<(TrialRecord, Waveform)>| -> Result<Vec<TrialRecord>> {
        let mut records = Vec::with_capacity(corpus.len());
        for (record, wav) in corpus {
            crate::audio::write_audio(&wav, audio_dir.join(format!("{}.wav", record.utt_id)))?;
            records.push(record);
        }
        Ok(records)
    };
    let train = write_side(generate_corpus(config)?)?;
    let eval = write_side(generate_eval_corpus(config)?)?;
    crate::proto::write_protocol(&train, train_protocol)?;
    crate::proto::write_protocol(&eval, eval_protocol)?;
    Ok((train, eval))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape_and_determinism() {
        let cfg = SynthConfig {
            speakers: 3,
            bona_per_speaker: 2,
            spoofs_per_speaker: 4,
            eval_bona_per_speaker: 1,
            eval_spoofs_per_speaker: 1,
            length: 800,
            seed: 5,
        };
        let a = generate_corpus(&cfg).unwrap();
        assert_eq!(a.len(), 3 * (2 + 4));
        let b = generate_corpus(&cfg).unwrap();
        for ((ra, wa), (rb, wb)) in a.iter().zip(&b) {
            assert_eq!(ra, rb);
            assert_eq!(wa, wb);
        }
        for (r, w) in &a {
            assert_eq!(w.len(), 800);
            assert_eq!((r.key == Key::Bonafide), (r.system_id == "-"));
        }
        // spoof systems rotate through the ladder
        let systems: std::collections::HashSet<_> = a
            .iter()
            .filter(|(r, _)| r.key == Key::Spoof)
            .map(|(r, _)| r.system_id.clone())
            .collect();
        assert!(systems.len() >= 4);
    }

    #[test]
    fn spoofs_differ_spectrally_from_bona_fide() {
        let cfg = SynthConfig {
            speakers: 1,
            bona_per_speaker: 1,
            spoofs_per_speaker: 1,
            eval_bona_per_speaker: 0,
            eval_spoofs_per_speaker: 0,
            length: 2048,
            seed: 9,
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let bona = &corpus[0].1;
        let spoof = &corpus[1].1;
        // The buzz band (around 2.8 kHz) carries far more energy in the
        // spoofed signal.
        let band_energy = |w: &Waveform| {
            let spec = crate::metrics::spectrogram(w, 512, 256).unwrap();
            let lo = 2600 * 512 / 16000;
            let hi = 3200 * 512 / 16000;
            let mut e = 0.0;
            for f in 0..spec.frames {
                for k in lo..=hi {
                    e += spec.values_db[f * spec.bins + k];
                }
            }
            e / (spec.frames * (hi - lo + 1)) as f64
        };
        let b = band_energy(bona);
        let s = band_energy(spoof);
        assert!(s > b + 10.0, "spoof band {s} dB vs bona fide {b} dB");
    }
}
