//! End-to-end pipeline checks through the real binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spoofbench"))
}

/// Small-but-complete settings: enough structure to exercise every stage,
/// sized for CI rather than attack strength.
fn small_args() -> Vec<String> {
    [
        "synth.speakers=3",
        "synth.bona_per_speaker=6",
        "synth.spoofs_per_speaker=6",
        "synth.eval_bona_per_speaker=2",
        "synth.eval_spoofs_per_speaker=2",
        "synth.length=2000",
        "audio.target_length=2000",
        "spkembed.total_iters=40",
        "enhancer.epochs=2",
        "antispoof.max_epochs=2",
    ]
    .iter()
    .flat_map(|kv| ["--set".to_string(), kv.to_string()])
    .collect()
}

fn run_ok(dir: &Path, run: &str, args: &[&str]) -> String {
    let mut cmd = bin();
    cmd.current_dir(dir)
        .args(small_args())
        .args(["--run", run])
        .args(args);
    let out = cmd.output().expect("spawn spoofbench");
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn full_pipeline(dir: &Path, run: &str, seed: &str) -> PathBuf {
    let r = |args: &[&str]| {
        let mut v = vec!["--seed", seed];
        v.extend_from_slice(args);
        run_ok(dir, run, &v)
    };
    r(&["synth-data"]);
    r(&[
        "split-data",
        "--scenario",
        "disjoint",
        &format!("{run}/data/train.proto"),
    ]);
    r(&[
        "train-spkemb",
        "--protocol",
        &format!("{run}/split/attacker.proto"),
        "--audio-dir",
        &format!("{run}/data/audio"),
    ]);
    r(&[
        "train-enhance",
        "--protocol",
        &format!("{run}/split/attacker.proto"),
        "--audio-dir",
        &format!("{run}/data/audio"),
        "--extractor",
        &format!("{run}/checkpoints/extractor.ckpt"),
    ]);
    r(&[
        "train-antispoof",
        "--protocol",
        &format!("{run}/split/defender.proto"),
        "--audio-dir",
        &format!("{run}/data/audio"),
    ]);
    r(&[
        "enhance",
        "--model",
        &format!("{run}/checkpoints/enhancer.ckpt"),
        "--protocol",
        &format!("{run}/data/eval.proto"),
        "--audio-dir",
        &format!("{run}/data/audio"),
    ]);
    r(&[
        "score",
        "--model",
        &format!("{run}/checkpoints/antispoof.ckpt"),
        "--protocol",
        &format!("{run}/data/eval.proto"),
        "--audio-dir",
        &format!("{run}/data/audio"),
        "--out",
        &format!("{run}/scores/tiny__none.txt"),
    ]);
    r(&[
        "score",
        "--model",
        &format!("{run}/checkpoints/antispoof.ckpt"),
        "--protocol",
        &format!("{run}/data/eval.proto"),
        "--audio-dir",
        &format!("{run}/data/audio"),
        "--manifest",
        &format!("{run}/enhanced/manifest.txt"),
        "--out",
        &format!("{run}/scores/tiny__enhanced.txt"),
    ]);
    let eer_out = r(&[
        "eval-eer",
        &format!("{run}/scores/tiny__none.txt"),
        &format!("{run}/data/eval.proto"),
    ]);
    assert!(
        eer_out.lines().next().unwrap_or("").starts_with("EER: "),
        "eval-eer output: {eer_out}"
    );
    r(&[
        "report",
        "--protocol",
        &format!("{run}/data/eval.proto"),
        "--scores-dir",
        &format!("{run}/scores"),
    ]);
    dir.join(run)
}

#[test]
fn toy_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let run = full_pipeline(dir.path(), "run1", "5");

    for artifact in [
        "config/run.cfg",
        "config/manifest.json",
        "split/attacker.proto",
        "split/defender.proto",
        "split/summary.json",
        "checkpoints/extractor.ckpt",
        "checkpoints/enhancer.ckpt",
        "checkpoints/antispoof.ckpt",
        "enhanced/manifest.txt",
        "scores/tiny__none.txt",
        "scores/tiny__enhanced.txt",
        "report/table.csv",
        "report/table.json",
    ] {
        assert!(run.join(artifact).exists(), "missing {artifact}");
    }

    let csv = std::fs::read_to_string(run.join("report/table.csv")).unwrap();
    assert!(csv.starts_with("antispoof,"), "csv: {csv}");
    assert_eq!(csv.lines().count(), 2, "one model row: {csv}");

    // Score files carry every eval trial.
    let eval_lines = std::fs::read_to_string(run.join("data/eval.proto"))
        .unwrap()
        .lines()
        .count();
    let score_lines = std::fs::read_to_string(run.join("scores/tiny__none.txt"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(eval_lines, score_lines);
}

#[test]
fn identical_seeds_reproduce_splits_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let run_a = full_pipeline(dir.path(), "runA", "9");
    let run_b = full_pipeline(dir.path(), "runB", "9");

    for file in [
        "split/attacker.proto",
        "split/defender.proto",
        "scores/tiny__none.txt",
        "scores/tiny__enhanced.txt",
    ] {
        let a = std::fs::read(run_a.join(file)).unwrap();
        let b = std::fs::read(run_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identically seeded runs");
    }

    // The snapshot config replays the run: a third run configured only
    // from runA's snapshot reproduces its scores.
    let snapshot = run_a.join("config/run.cfg");
    let rc = |args: &[&str]| {
        let mut cmd = bin();
        cmd.current_dir(dir.path())
            .args(["--config", snapshot.to_str().unwrap(), "--run", "runC"])
            .args(args);
        let out = cmd.output().unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    rc(&["synth-data"]);
    rc(&["split-data", "--scenario", "disjoint", "runC/data/train.proto"]);
    let a = std::fs::read(run_a.join("split/attacker.proto")).unwrap();
    let c = std::fs::read(dir.path().join("runC/split/attacker.proto")).unwrap();
    assert_eq!(a, c, "snapshot config did not reproduce the split");
}

#[test]
fn different_seeds_change_the_split() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), "s1", &["--seed", "1", "synth-data"]);
    run_ok(
        dir.path(),
        "s1",
        &["--seed", "1", "split-data", "s1/data/train.proto", "s1/split1"],
    );
    run_ok(
        dir.path(),
        "s1",
        &["--seed", "2", "split-data", "s1/data/train.proto", "s1/split2"],
    );
    let a = std::fs::read(dir.path().join("s1/split1/attacker.proto")).unwrap();
    let b = std::fs::read(dir.path().join("s1/split2/attacker.proto")).unwrap();
    assert_ne!(a, b, "different seeds should halve bona fide differently");
}

#[test]
fn env_seed_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), "e1", &["--seed", "1", "synth-data"]);
    // --seed 2 overridden back to 1 by the environment: same split as seed 1.
    let mut cmd = bin();
    cmd.current_dir(dir.path())
        .args(small_args())
        .args(["--run", "e1", "--seed", "1"])
        .args(["split-data", "e1/data/train.proto", "e1/split-seed1"]);
    assert!(cmd.output().unwrap().status.success());
    let mut cmd = bin();
    cmd.current_dir(dir.path())
        .env("SPOOFBENCH_SEED", "1")
        .args(small_args())
        .args(["--run", "e1", "--seed", "2"])
        .args(["split-data", "e1/data/train.proto", "e1/split-env"]);
    assert!(cmd.output().unwrap().status.success());
    let a = std::fs::read(dir.path().join("e1/split-seed1/attacker.proto")).unwrap();
    let b = std::fs::read(dir.path().join("e1/split-env/attacker.proto")).unwrap();
    assert_eq!(a, b, "SPOOFBENCH_SEED must override --seed");
}

#[test]
fn subcommands_do_not_mutate_inputs() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), "m1", &["--seed", "3", "synth-data"]);
    let proto = dir.path().join("m1/data/train.proto");
    let before = std::fs::read(&proto).unwrap();
    let wav = dir.path().join("m1/data/audio/U_SP00_B000.wav");
    let wav_before = std::fs::read(&wav).unwrap();
    run_ok(
        dir.path(),
        "m1",
        &["--seed", "3", "split-data", "m1/data/train.proto"],
    );
    assert_eq!(before, std::fs::read(&proto).unwrap());
    assert_eq!(wav_before, std::fs::read(&wav).unwrap());
}

#[test]
fn exit_codes_follow_convention() {
    // Unknown subcommand: usage error, exit 2 (clap convention).
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // Unknown flag: usage error as well.
    let out = bin().args(["eval-eer", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // Invariant violation / missing input: diagnostic, exit 1.
    let out = bin()
        .args(["eval-eer", "/nonexistent/scores.txt", "/nonexistent/proto.txt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}
