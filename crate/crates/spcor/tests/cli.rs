use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spcor::featstore::{load_manifest, read_raw};
use spcor::pipeline::BeliefSidecar;
use spcor::selection::read_selection;
use spcor_core::stream::FeatureStream;
use spcor_core::synth::reference_sampler;

fn spcor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spcor")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = spcor(args);
    assert!(
        out.status.success(),
        "spcor {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn every_subcommand_has_help() {
    for cmd in ["gen-synth", "sample", "fuse", "train", "eval", "gradcheck", "replay"] {
        let out = ok(&[cmd, "--help"]);
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{cmd}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(spcor(&["gradcheck", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(spcor(&["sample", "--out", "x.json"]).status.code(), Some(2));
    assert_eq!(spcor(&["gradcheck", "--module", "bogus"]).status.code(), Some(2));
    assert_eq!(spcor(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = spcor(&["sample", "--manifest", s(&dir.path().join("none.json")), "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("none.json"));
}

#[test]
fn gen_synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-synth", "--seed", "7", "--out", s(&a)]);
    ok(&["gen-synth", "--seed", "7", "--out", s(&b)]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() >= 13);
    assert_eq!(ta, tb);

    let c = dir.path().join("c");
    ok(&["gen-synth", "--seed", "8", "--out", s(&c)]);
    assert_ne!(tree(&c), ta);
}

#[test]
fn gen_synth_jobs_do_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let common = ["gen-synth", "--seed", "3", "--episodes", "7", "--team-sizes", "1,4", "--n-frames", "64"];
    ok(&[&common[..], &["--out", s(&a), "--jobs", "1"]].concat());
    ok(&[&common[..], &["--out", s(&b), "--jobs", "3"]].concat());
    assert_eq!(tree(&a), tree(&b));
    assert!(a.join("ep-00006/manifest.json").is_file());
}

#[test]
fn sample_matches_reference_sampler() {
    let dir = tempfile::tempdir().unwrap();
    let ep_dir = dir.path().join("ep");
    ok(&["gen-synth", "--seed", "11", "--team-sizes", "4", "--out", s(&ep_dir)]);
    let sel_path = dir.path().join("sel.json");
    ok(&["sample", "--manifest", s(&ep_dir.join("manifest.json")), "--out", s(&sel_path)]);
    let sel = read_selection(&sel_path).unwrap();

    let ep = load_manifest(&ep_dir.join("manifest.json")).unwrap();
    let clips: Vec<FeatureStream<f64>> = ep.robots.iter().map(|r| r.clip.cast()).collect();
    let q: Vec<f64> = ep.queries[0].embedding.data().iter().map(|&v| v as f64).collect();
    let expected = reference_sampler(&clips, &q, &sel.config);
    assert_eq!(sel.selection(), expected);
    assert!(sel.per_robot.iter().all(|r| r.frames.len() == 8));
}

#[test]
fn printed_config_replays_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ep_dir = dir.path().join("ep");
    ok(&["gen-synth", "--seed", "2", "--out", s(&ep_dir)]);
    let sel_path = dir.path().join("sel.json");
    let out = ok(&[
        "sample",
        "--manifest",
        s(&ep_dir.join("manifest.json")),
        "--k",
        "5",
        "--no-semantic-refine",
        "--out",
        s(&sel_path),
    ]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().find(|l| l.starts_with("config: ")).unwrap();
    let first = fs::read(&sel_path).unwrap();
    fs::remove_file(&sel_path).unwrap();

    let cfg_path = dir.path().join("run.json");
    fs::write(&cfg_path, line).unwrap();
    ok(&["replay", "--config", s(&cfg_path)]);
    assert_eq!(fs::read(&sel_path).unwrap(), first);
    assert!(String::from_utf8(first).unwrap().contains("\"k\": 5"));
}

#[test]
fn gradcheck_exit_code_follows_threshold() {
    let out = ok(&["gradcheck", "--module", "fusion", "--instances", "2"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("[ok]"));
    let strict = spcor(&["gradcheck", "--module", "fusion", "--instances", "2", "--threshold", "0"]);
    assert_eq!(strict.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&strict.stdout).contains("FAIL"));
}

/// Small model flags so these tests stay quick.
const SMALL: [&str; 10] = [
    "--d-state", "16", "--d-belief", "16", "--d-spectral", "8", "--d-pose", "8", "--d-lm", "16",
];

#[test]
fn untrained_checkpoint_scores_chance_on_balanced_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-synth", "--seed", "5", "--episodes", "80", "--team-sizes", "4", "--n-frames", "64", "--out", s(&data)]);
    let ckpt = dir.path().join("init.spck");
    ok(&[
        &["train", "--train-dir", s(&data), "--max-steps", "0", "--out", s(&ckpt)][..],
        &SMALL[..],
    ]
    .concat());
    let table = dir.path().join("table.txt");
    let out = ok(&["eval", "--test-dir", s(&data), "--checkpoint", s(&ckpt), "--out", s(&table)]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let acc: f64 = stdout.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((acc - 0.25).abs() <= 0.15, "accuracy {acc}");
    assert_eq!(fs::read_to_string(&table).unwrap(), stdout);
}

#[test]
fn fuse_writes_belief_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-synth", "--seed", "6", "--episodes", "4", "--team-sizes", "3", "--n-frames", "64", "--out", s(&data)]);
    let ckpt = dir.path().join("m.spck");
    ok(&[&["train", "--train-dir", s(&data), "--max-steps", "2", "--out", s(&ckpt)][..], &SMALL[..]].concat());
    let manifest = data.join("ep-00000/manifest.json");
    let sel = dir.path().join("sel.json");
    ok(&["sample", "--manifest", s(&manifest), "--out", s(&sel)]);
    let z = dir.path().join("z.spcr");
    ok(&[
        "fuse",
        "--manifest",
        s(&manifest),
        "--selection",
        s(&sel),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&z),
    ]);
    let raw = read_raw(&z).unwrap();
    assert_eq!((raw.n_frames, raw.dim), (1, 16));
    let side: BeliefSidecar = serde_json::from_str(&fs::read_to_string(dir.path().join("z.json")).unwrap()).unwrap();
    assert_eq!(side.robot_ids, vec![0, 1, 2]);
    assert!((side.weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(dir.path().join("m.log.csv").is_file());
    let log = fs::read_to_string(dir.path().join("m.log.csv")).unwrap();
    assert!(log.starts_with("step,loss_total,loss_lm,loss_distill,grad_norm\n"));
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn training_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-synth", "--seed", "9", "--episodes", "12", "--team-sizes", "2,3", "--n-frames", "64", "--out", s(&data)]);
    let run = |name: &str, jobs: &str| {
        let p = dir.path().join(name);
        ok(&[
            &["train", "--train-dir", s(&data), "--epochs", "2", "--batch-size", "3", "--out", s(&p), "--jobs", jobs][..],
            &SMALL[..],
        ]
        .concat());
        fs::read(p).unwrap()
    };
    assert_eq!(run("a.spck", "1"), run("b.spck", "4"));
}
