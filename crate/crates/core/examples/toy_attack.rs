//! End-to-end toy attack run with timing, for eyeballing the pipeline:
//! synthesize a corpus, split it, train the attacker's extractor and
//! enhancement model, train the defender's countermeasure, and measure
//! how far enhancement shifts embedding similarity and detection scores
//! on held-out data.

use spoofbench_core::antispoof::{bonafide_score, train_antispoof, AntispoofModel};
use spoofbench_core::audio::Waveform;
use spoofbench_core::config::{Profile, RunConfig};
use spoofbench_core::enhancer::{enhance, train_enhancer, EnhancerModel, SpoofPair};
use spoofbench_core::frontend::build_tiny_frontend;
use spoofbench_core::metrics::{compute_eer, score_distribution, Key, ScoreSet};
use spoofbench_core::nn::init::mix_seed;
use spoofbench_core::proto::{make_split, pair_for_enhancement, Scenario, SplitPlan, TrialRecord};
use spoofbench_core::spkembed::{
    extract_embedding, train_extractor, ExtractorTrainConfig, SpeakerExtractor,
};
use spoofbench_core::synth::{generate_corpus, generate_eval_corpus};
use std::collections::HashMap;
use std::time::Instant;

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let mut cfg = RunConfig::defaults(Profile::Toy);
    cfg.reseed(seed);
    let t0 = Instant::now();

    let corpus = generate_corpus(&cfg.synth).unwrap();
    let eval_corpus = generate_eval_corpus(&cfg.synth).unwrap();
    let wav_of: HashMap<String, Waveform> = corpus
        .iter()
        .chain(&eval_corpus)
        .map(|(r, w)| (r.utt_id.clone(), w.clone()))
        .collect();
    let records: Vec<TrialRecord> = corpus.iter().map(|(r, _)| r.clone()).collect();
    println!("[{:6.1?}] corpus: {} train / {} eval", t0.elapsed(), records.len(), eval_corpus.len());

    let split = make_split(&records, &SplitPlan::standard(Scenario::Disjoint, seed)).unwrap();
    println!(
        "[{:6.1?}] split: attacker {} / defender {}",
        t0.elapsed(),
        split.attacker.len(),
        split.defender.len()
    );

    // speaker index map
    let mut speakers: Vec<String> = records.iter().map(|r| r.speaker_id.clone()).collect();
    speakers.sort();
    speakers.dedup();
    let spk_index: HashMap<&str, usize> = speakers
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();

    // attacker: extractor on attacker bona fide
    let attacker_bona: Vec<(Waveform, usize)> = split
        .attacker
        .iter()
        .filter(|r| r.key == Key::Bonafide)
        .map(|r| (wav_of[&r.utt_id].clone(), spk_index[r.speaker_id.as_str()]))
        .collect();
    let mut extractor = SpeakerExtractor::new(
        build_tiny_frontend(&cfg.frontend, mix_seed(seed, "attacker-frontend")).unwrap(),
    );
    let out = train_extractor(
        &mut extractor,
        &attacker_bona,
        &cfg.spkembed.schedule(),
        &cfg.spkembed.aam(speakers.len()),
        &ExtractorTrainConfig { batch: cfg.spkembed.batch, seed },
    )
    .unwrap();
    extractor.freeze();
    println!(
        "[{:6.1?}] extractor: {} iters, loss {:.3} -> {:.3}",
        t0.elapsed(),
        out.report.iterations,
        out.report.epoch_losses.first().unwrap(),
        out.report.epoch_losses.last().unwrap()
    );

    // attacker: enhancer on attacker pairs
    let pairing = pair_for_enhancement(&split.attacker, seed).unwrap();
    let pairs: Vec<SpoofPair> = pairing
        .pairs
        .iter()
        .map(|p| {
            SpoofPair::new(
                wav_of[&p.spoof.utt_id].clone(),
                wav_of[&p.bonafide.utt_id].clone(),
                p.spoof.speaker_id.clone(),
            )
            .unwrap()
        })
        .collect();
    let mut enhancer = EnhancerModel::new(cfg.enhancer.clone()).unwrap();
    let report = train_enhancer(&mut enhancer, &pairs, &extractor, &cfg.enhancer).unwrap();
    println!(
        "[{:6.1?}] enhancer: {} pairs, loss {:.4} -> {:.4}",
        t0.elapsed(),
        pairs.len(),
        report.epoch_losses.first().unwrap(),
        report.epoch_losses.last().unwrap()
    );

    // defender: antispoof on defender set
    let defender_data: Vec<(Waveform, Key)> = split
        .defender
        .iter()
        .map(|r| (wav_of[&r.utt_id].clone(), r.key))
        .collect();
    let mut cm = AntispoofModel::new(
        build_tiny_frontend(&cfg.frontend, mix_seed(seed, "defender-frontend")).unwrap(),
        cfg.antispoof.clone(),
    )
    .unwrap();
    let report = train_antispoof(&mut cm, &defender_data, None, &cfg.antispoof).unwrap();
    println!(
        "[{:6.1?}] antispoof: loss {:.3} -> {:.3}",
        t0.elapsed(),
        report.epoch_losses.first().unwrap(),
        report.epoch_losses.last().unwrap()
    );

    // held-out measurements
    let eval_bona: Vec<&(TrialRecord, Waveform)> = eval_corpus
        .iter()
        .filter(|(r, _)| r.key == Key::Bonafide)
        .collect();
    let eval_spoof: Vec<&(TrialRecord, Waveform)> = eval_corpus
        .iter()
        .filter(|(r, _)| r.key == Key::Spoof)
        .collect();

    let mut eval_refs: HashMap<&str, Vec<spoofbench_core::spkembed::SpeakerEmbedding>> =
        HashMap::new();
    for (r, w) in &eval_bona {
        eval_refs
            .entry(r.speaker_id.as_str())
            .or_default()
            .push(extract_embedding(w, &extractor).unwrap());
    }
    let mut train_refs: HashMap<&str, Vec<spoofbench_core::spkembed::SpeakerEmbedding>> =
        HashMap::new();
    for r in split.attacker.iter().filter(|r| r.key == Key::Bonafide) {
        train_refs
            .entry(r.speaker_id.as_str())
            .or_default()
            .push(extract_embedding(&wav_of[&r.utt_id], &extractor).unwrap());
    }

    let mut cos_orig = Vec::new();
    let mut cos_enh = Vec::new();
    let mut cos_orig_tr = Vec::new();
    let mut cos_enh_tr = Vec::new();
    for (r, spoof_wav) in &eval_spoof {
        let e_orig = extract_embedding(spoof_wav, &extractor).unwrap();
        let enhanced = enhance(spoof_wav, &enhancer).unwrap();
        let e_enh = extract_embedding(&enhanced, &extractor).unwrap();
        for e_ref in &eval_refs[r.speaker_id.as_str()] {
            cos_orig.push(e_orig.cosine(e_ref).unwrap());
            cos_enh.push(e_enh.cosine(e_ref).unwrap());
        }
        for e_ref in &train_refs[r.speaker_id.as_str()] {
            cos_orig_tr.push(e_orig.cosine(e_ref).unwrap());
            cos_enh_tr.push(e_enh.cosine(e_ref).unwrap());
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let union_orig: Vec<f64> = cos_orig.iter().chain(&cos_orig_tr).copied().collect();
    let union_enh: Vec<f64> = cos_enh.iter().chain(&cos_enh_tr).copied().collect();
    println!(
        "[{:6.1?}] embedding cosine on held-out pairs: original {:.4}, enhanced {:.4}, gain {:+.4}",
        t0.elapsed(),
        mean(&union_orig),
        mean(&union_enh),
        mean(&union_enh) - mean(&union_orig)
    );

    // (b) detection-score CDFs against the defender
    let mut scores_orig = ScoreSet::default();
    let mut scores_enh = ScoreSet::default();
    let mut eer_orig_set = ScoreSet::default();
    let mut eer_enh_set = ScoreSet::default();
    for (r, w) in &eval_bona {
        let s = bonafide_score(w, &mut cm).unwrap();
        eer_orig_set.push(r.utt_id.clone(), s, Key::Bonafide);
        eer_enh_set.push(r.utt_id.clone(), s, Key::Bonafide);
    }
    for (r, w) in &eval_spoof {
        let s_orig = bonafide_score(w, &mut cm).unwrap();
        let enhanced = enhance(w, &enhancer).unwrap();
        let s_enh = bonafide_score(&enhanced, &mut cm).unwrap();
        scores_orig.push(r.utt_id.clone(), s_orig, Key::Spoof);
        scores_enh.push(r.utt_id.clone(), s_enh, Key::Spoof);
        eer_orig_set.push(r.utt_id.clone(), s_orig, Key::Spoof);
        eer_enh_set.push(r.utt_id.clone(), s_enh, Key::Spoof);
    }
    // shared grid over both spoof conditions
    let all: Vec<f64> = scores_orig
        .entries()
        .iter()
        .chain(scores_enh.entries())
        .map(|e| e.score)
        .collect();
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let grid: Vec<f64> = (0..200)
        .map(|i| lo + (hi - lo) * i as f64 / 199.0)
        .collect();
    let cdf = |set: &ScoreSet, g: f64| {
        let v = set.scores_of(Key::Spoof);
        v.iter().filter(|&&s| s <= g).count() as f64 / v.len() as f64
    };
    let dominated = grid
        .iter()
        .filter(|&&g| cdf(&scores_enh, g) <= cdf(&scores_orig, g))
        .count();
    let _ = score_distribution(&scores_orig, 10);
    println!(
        "[{:6.1?}] spoof-score CDF right-shift dominance: {}/{} grid points",
        t0.elapsed(),
        dominated,
        grid.len()
    );
    let (eer_o, _) = compute_eer(&eer_orig_set).unwrap();
    let (eer_e, _) = compute_eer(&eer_enh_set).unwrap();
    println!(
        "[{:6.1?}] defender EER: original {:.1}%, enhanced {:.1}%",
        t0.elapsed(),
        eer_o * 100.0,
        eer_e * 100.0
    );
}
