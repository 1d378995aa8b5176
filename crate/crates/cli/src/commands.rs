//! Subcommand implementations.

use anyhow::{bail, Context};
use spoofbench_core::antispoof::{bonafide_score, train_antispoof, AntispoofModel};
use spoofbench_core::audio::{align_length, read_audio, AlignMode, AlignPolicy, Waveform};
use spoofbench_core::checkpoint::Container;
use spoofbench_core::config::RunConfig;
use spoofbench_core::enhancer::{
    batch_enhance, enhance, parse_manifest, train_enhancer, Disposition, EnhancerModel, SpoofPair,
};
use spoofbench_core::frontend::build_tiny_frontend;
use spoofbench_core::metrics::report::{emit_report, RunCell};
use spoofbench_core::metrics::{
    compute_eer, join_scores, plot, read_score_file, spectrogram, write_score_file, Key,
};
use spoofbench_core::nn::init::mix_seed;
use spoofbench_core::proto::{
    make_split, pair_for_enhancement, parse_protocol, write_protocol, Scenario, SideSummary,
    SplitPlan, TrialRecord,
};
use spoofbench_core::spkembed::{
    train_extractor, ExtractorTrainConfig, SpeakerExtractor,
};
use spoofbench_core::synth::write_corpus;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

pub struct RunContext {
    run_dir: PathBuf,
    pub cfg: RunConfig,
}

impl RunContext {
    pub fn new(run_dir: PathBuf, cfg: RunConfig) -> Self {
        Self { run_dir, cfg }
    }

    fn subdir(&self, name: &str) -> anyhow::Result<PathBuf> {
        let dir = self.run_dir.join(name);
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    /// Snapshots the effective config and run metadata; called by every
    /// subcommand so any run can be replayed from its manifest.
    fn write_manifest(&self, command: &str) -> anyhow::Result<()> {
        let config_dir = self.subdir("config")?;
        std::fs::write(config_dir.join("run.cfg"), self.cfg.to_text())?;
        let manifest = serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "profile": self.cfg.profile.as_str(),
            "seed": self.cfg.seed,
            "last_command": command,
        });
        std::fs::write(
            config_dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    fn eval_policy(&self) -> AlignPolicy {
        AlignPolicy {
            target_length: self.cfg.audio.target_length,
            mode: AlignMode::FixedStart,
            seed: 0,
        }
    }

    /// Training alignment: seeded random crop, one stream per utterance so
    /// corpus order does not couple crops.
    fn train_policy(&self, utt_id: &str) -> AlignPolicy {
        AlignPolicy {
            target_length: self.cfg.audio.target_length,
            mode: AlignMode::RandomCrop,
            seed: mix_seed(self.cfg.seed, utt_id),
        }
    }
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    Ok(())
}

fn load_aligned(
    records: &[TrialRecord],
    audio_dir: &Path,
    policy_of: impl Fn(&TrialRecord) -> AlignPolicy,
) -> anyhow::Result<Vec<(TrialRecord, Waveform)>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let path = audio_dir.join(format!("{}.wav", r.utt_id));
        let wav = read_audio(&path).with_context(|| format!("trial {}", r.utt_id))?;
        let aligned = align_length(&wav, &policy_of(r))?;
        out.push((r.clone(), aligned));
    }
    Ok(out)
}

pub fn synth_data(ctx: &RunContext, out_dir: Option<PathBuf>) -> anyhow::Result<()> {
    ctx.write_manifest("synth-data")?;
    let out_dir = match out_dir {
        Some(d) => d,
        None => ctx.subdir("data")?,
    };
    std::fs::create_dir_all(&out_dir)?;
    let audio_dir = out_dir.join("audio");
    let (train, eval) = write_corpus(
        &ctx.cfg.synth,
        &audio_dir,
        out_dir.join("train.proto"),
        out_dir.join("eval.proto"),
    )?;
    println!(
        "wrote {} train and {} eval trials under {}",
        train.len(),
        eval.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn split_data(
    ctx: &RunContext,
    scenario: &str,
    protocol: &Path,
    out_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    ctx.write_manifest("split-data")?;
    let scenario = Scenario::parse(scenario)
        .with_context(|| format!("unknown scenario \"{scenario}\""))?;
    let out_dir = match out_dir {
        Some(d) => d,
        None => ctx.subdir("split")?,
    };
    std::fs::create_dir_all(&out_dir)?;
    let records = parse_protocol(protocol)?;
    let plan = SplitPlan::standard(scenario, ctx.cfg.seed);
    let outcome = make_split(&records, &plan)?;
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    write_protocol(&outcome.attacker, out_dir.join("attacker.proto"))?;
    write_protocol(&outcome.defender, out_dir.join("defender.proto"))?;
    let summary = serde_json::json!({
        "scenario": match scenario {
            Scenario::Disjoint => "disjoint",
            Scenario::SharedDefenderFull => "shared_defender_full",
        },
        "seed": ctx.cfg.seed,
        "attacker": SideSummary::of(&outcome.attacker),
        "defender": SideSummary::of(&outcome.defender),
        "warnings": outcome.warnings,
    });
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "attacker {} trials, defender {} trials -> {}",
        outcome.attacker.len(),
        outcome.defender.len(),
        out_dir.display()
    );
    Ok(())
}

/// Stable speaker indexing: sorted unique speaker ids.
fn speaker_index(records: &[TrialRecord]) -> (Vec<String>, HashMap<String, usize>) {
    let mut speakers: Vec<String> = records.iter().map(|r| r.speaker_id.clone()).collect();
    speakers.sort();
    speakers.dedup();
    let index = speakers
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    (speakers, index)
}

pub fn train_spkemb(
    ctx: &RunContext,
    protocol: &Path,
    audio_dir: &Path,
    out: Option<PathBuf>,
    no_freeze: bool,
) -> anyhow::Result<()> {
    ctx.write_manifest("train-spkemb")?;
    let out = match out {
        Some(p) => p,
        None => ctx.subdir("checkpoints")?.join("extractor.ckpt"),
    };
    ensure_parent(&out)?;
    let records = parse_protocol(protocol)?;
    let bona: Vec<TrialRecord> = records
        .iter()
        .filter(|r| r.key == Key::Bonafide)
        .cloned()
        .collect();
    let (speakers, index) = speaker_index(&bona);
    let data = load_aligned(&bona, audio_dir, |r| ctx.train_policy(&r.utt_id))?;
    let dataset: Vec<(Waveform, usize)> = data
        .into_iter()
        .map(|(r, w)| (w, index[&r.speaker_id]))
        .collect();

    let frontend = build_tiny_frontend(&ctx.cfg.frontend, mix_seed(ctx.cfg.seed, "attacker-frontend"))?;
    let mut extractor = SpeakerExtractor::new(frontend);
    let outcome = train_extractor(
        &mut extractor,
        &dataset,
        &ctx.cfg.spkembed.schedule(),
        &ctx.cfg.spkembed.aam(speakers.len()),
        &ExtractorTrainConfig {
            batch: ctx.cfg.spkembed.batch,
            seed: ctx.cfg.seed,
        },
    )?;
    if !no_freeze {
        extractor.freeze();
    }
    extractor.to_container()?.save(&out)?;
    println!(
        "extractor: {} speakers, {} iterations, epoch loss {:.4} -> {:.4}, saved to {}",
        speakers.len(),
        outcome.report.iterations,
        outcome.report.epoch_losses.first().unwrap_or(&f64::NAN),
        outcome.report.epoch_losses.last().unwrap_or(&f64::NAN),
        out.display()
    );
    Ok(())
}

pub fn train_enhance(
    ctx: &RunContext,
    protocol: &Path,
    audio_dir: &Path,
    extractor_path: &Path,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    ctx.write_manifest("train-enhance")?;
    let out = match out {
        Some(p) => p,
        None => ctx.subdir("checkpoints")?.join("enhancer.ckpt"),
    };
    ensure_parent(&out)?;
    let extractor = SpeakerExtractor::from_container(&Container::load(extractor_path)?)?;
    let records = parse_protocol(protocol)?;
    let pairing = pair_for_enhancement(&records, ctx.cfg.seed)?;
    for warning in &pairing.warnings {
        eprintln!("warning: {warning}");
    }
    let mut wav_cache: HashMap<String, Waveform> = HashMap::new();
    let mut load = |r: &TrialRecord| -> anyhow::Result<Waveform> {
        if let Some(w) = wav_cache.get(&r.utt_id) {
            return Ok(w.clone());
        }
        let path = audio_dir.join(format!("{}.wav", r.utt_id));
        let wav = read_audio(&path).with_context(|| format!("trial {}", r.utt_id))?;
        let aligned = align_length(&wav, &ctx.train_policy(&r.utt_id))?;
        wav_cache.insert(r.utt_id.clone(), aligned.clone());
        Ok(aligned)
    };
    let mut pairs = Vec::with_capacity(pairing.pairs.len());
    for p in &pairing.pairs {
        pairs.push(SpoofPair::new(
            load(&p.spoof)?,
            load(&p.bonafide)?,
            p.spoof.speaker_id.clone(),
        )?);
    }

    let mut model = EnhancerModel::new(ctx.cfg.enhancer.clone())?;
    let report = train_enhancer(&mut model, &pairs, &extractor, &ctx.cfg.enhancer)?;
    model.to_container()?.save(&out)?;
    println!(
        "enhancer: {} pairs, epoch loss {:.4} -> {:.4}, saved to {}",
        pairs.len(),
        report.epoch_losses.first().unwrap_or(&f64::NAN),
        report.epoch_losses.last().unwrap_or(&f64::NAN),
        out.display()
    );
    Ok(())
}

pub fn train_antispoof_cmd(
    ctx: &RunContext,
    protocol: &Path,
    audio_dir: &Path,
    dev_protocol: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    ctx.write_manifest("train-antispoof")?;
    let out = match out {
        Some(p) => p,
        None => ctx.subdir("checkpoints")?.join("antispoof.ckpt"),
    };
    ensure_parent(&out)?;
    let records = parse_protocol(protocol)?;
    let data: Vec<(Waveform, Key)> =
        load_aligned(&records, audio_dir, |r| ctx.train_policy(&r.utt_id))?
            .into_iter()
            .map(|(r, w)| (w, r.key))
            .collect();
    let dev: Option<Vec<(Waveform, Key)>> = match dev_protocol {
        None => None,
        Some(path) => {
            let dev_records = parse_protocol(&path)?;
            Some(
                load_aligned(&dev_records, audio_dir, |_| ctx.eval_policy())?
                    .into_iter()
                    .map(|(r, w)| (w, r.key))
                    .collect(),
            )
        }
    };

    let frontend = build_tiny_frontend(&ctx.cfg.frontend, mix_seed(ctx.cfg.seed, "defender-frontend"))?;
    let mut model = AntispoofModel::new(frontend, ctx.cfg.antispoof.clone())?;
    let report = train_antispoof(&mut model, &data, dev.as_deref(), &ctx.cfg.antispoof)?;
    model.to_container()?.save(&out)?;
    print!(
        "antispoof: {} trials, epoch loss {:.4} -> {:.4}",
        data.len(),
        report.epoch_losses.first().unwrap_or(&f64::NAN),
        report.epoch_losses.last().unwrap_or(&f64::NAN),
    );
    if let Some(best) = report.best_epoch {
        print!(", best dev epoch {best}");
    }
    println!(", saved to {}", out.display());
    Ok(())
}

pub fn enhance_cmd(
    ctx: &RunContext,
    model: &Path,
    protocol: &Path,
    audio_dir: &Path,
    out_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    ctx.write_manifest("enhance")?;
    let out_dir = match out_dir {
        Some(d) => d,
        None => ctx.subdir("enhanced")?,
    };
    let model = EnhancerModel::from_container(&Container::load(model)?)?;
    let records = parse_protocol(protocol)?;
    let report = batch_enhance(&records, audio_dir, &model, &ctx.eval_policy(), &out_dir)?;
    println!(
        "enhanced {} spoofed and passed through {} bona fide trials -> {}",
        report
            .entries
            .iter()
            .filter(|e| e.disposition == Disposition::Enhanced)
            .count(),
        report
            .entries
            .iter()
            .filter(|e| e.disposition == Disposition::Passthrough)
            .count(),
        report.manifest_path.display()
    );
    if !report.failures.is_empty() {
        for failure in &report.failures {
            eprintln!("failed: {failure}");
        }
        bail!("{} of {} trials failed", report.failures.len(), records.len());
    }
    Ok(())
}

pub fn score_cmd(
    ctx: &RunContext,
    model: &Path,
    protocol: &Path,
    audio_dir: &Path,
    manifest: Option<PathBuf>,
    enhancer: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    ctx.write_manifest("score")?;
    if manifest.is_some() && enhancer.is_some() {
        bail!("--manifest and --enhancer are mutually exclusive");
    }
    let out = match out {
        Some(p) => p,
        None => ctx.subdir("scores")?.join("scores.txt"),
    };
    ensure_parent(&out)?;
    let mut cm = AntispoofModel::from_container(&Container::load(model)?)?;
    let records = parse_protocol(protocol)?;

    // Optional redirect of spoofed trials to enhanced files on disk.
    let enhanced_path: HashMap<String, PathBuf> = match &manifest {
        None => HashMap::new(),
        Some(m) => {
            let base = m
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."));
            parse_manifest(m)?
                .into_iter()
                .map(|e| (e.utt_id, base.join(e.relative_path)))
                .collect()
        }
    };
    let in_memory: Option<EnhancerModel> = match &enhancer {
        None => None,
        Some(p) => Some(EnhancerModel::from_container(&Container::load(p)?)?),
    };

    let policy = ctx.eval_policy();
    let mut scores = Vec::with_capacity(records.len());
    for r in &records {
        let path = enhanced_path
            .get(&r.utt_id)
            .cloned()
            .unwrap_or_else(|| audio_dir.join(format!("{}.wav", r.utt_id)));
        let wav = read_audio(&path).with_context(|| format!("trial {}", r.utt_id))?;
        let mut aligned = align_length(&wav, &policy)?;
        if let (Some(model), Key::Spoof) = (&in_memory, r.key) {
            aligned = enhance(&aligned, model)?;
        }
        let score = bonafide_score(&aligned, &mut cm)?;
        scores.push((r.utt_id.clone(), score));
    }
    write_score_file(&out, &scores)?;
    println!("scored {} trials -> {}", scores.len(), out.display());
    Ok(())
}

pub fn eval_eer(_ctx: &RunContext, scores: &Path, protocol: &Path) -> anyhow::Result<()> {
    let score_list = read_score_file(scores)?;
    let records = parse_protocol(protocol)?;
    let keys: HashMap<String, Key> = records
        .into_iter()
        .map(|r| (r.utt_id, r.key))
        .collect();
    let set = join_scores(&score_list, &keys)?;
    let (eer, threshold) = compute_eer(&set)?;
    println!("EER: {:.2}%", eer * 100.0);
    println!("threshold: {threshold}");
    Ok(())
}

pub fn report(
    ctx: &RunContext,
    protocol: &Path,
    scores_dir: &Path,
    out_dir: Option<PathBuf>,
    spectrogram_pair: Option<String>,
) -> anyhow::Result<()> {
    ctx.write_manifest("report")?;
    let out_dir = match out_dir {
        Some(d) => d,
        None => ctx.subdir("report")?,
    };
    let records = parse_protocol(protocol)?;
    let keys: HashMap<String, Key> = records
        .into_iter()
        .map(|r| (r.utt_id, r.key))
        .collect();

    let mut cells = Vec::new();
    let mut names: Vec<PathBuf> = std::fs::read_dir(scores_dir)
        .with_context(|| format!("reading {}", scores_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    names.sort();
    for path in names {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let Some((antispoof, condition)) = stem.split_once("__") else {
            eprintln!(
                "warning: skipping {} (expected <antispoof>__<condition>.txt)",
                path.display()
            );
            continue;
        };
        let scores = read_score_file(&path)?;
        let set = join_scores(&scores, &keys)?;
        cells.push(RunCell {
            antispoof: antispoof.to_string(),
            enhancement: condition.to_string(),
            scores: Some(set),
        });
    }
    if cells.is_empty() {
        bail!(
            "no `<antispoof>__<condition>.txt` score files in {}",
            scores_dir.display()
        );
    }
    let bundle = emit_report(&cells, ctx.cfg.eval.cdf_bins, &out_dir)?;
    for warning in &bundle.warnings {
        eprintln!("warning: {warning}");
    }

    if let Some(pair) = spectrogram_pair {
        let (orig, enh) = pair
            .split_once(',')
            .context("--spectrogram-pair expects original.wav,enhanced.wav")?;
        for (tag, path) in [("original", orig.trim()), ("enhanced", enh.trim())] {
            let wav = read_audio(path)?;
            let spec = spectrogram(
                &wav,
                ctx.cfg.eval.spectrogram_frame,
                ctx.cfg.eval.spectrogram_hop,
            )?;
            let out = out_dir.join(format!("spectrogram_{tag}.png"));
            plot::save_spectrogram_png(&out, &spec)?;
        }
    }
    println!(
        "report: {} cells, {} images -> {}",
        cells.len(),
        bundle.images.len(),
        out_dir.display()
    );
    Ok(())
}
