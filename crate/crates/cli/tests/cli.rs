use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use odseg::data::{load_directory, DatasetSpec, SampleSource, SourceTag, SyntheticSet};

fn odseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odseg")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn spec_file(dir: &Path, name: &str, role: &str, seed: u64) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, format!("kind = synthetic\nrole = {role}\nnum_classes = 4\nimage_size = 32\ncount = 1\nseed = {seed}\n")).unwrap();
    p
}

fn gen(dir: &Path, name: &str, role: &str, seed: u64, count: usize) -> PathBuf {
    let spec = spec_file(dir, &format!("{name}.spec"), role, seed);
    let out = dir.join(name);
    let r = odseg(&["gen", "--spec", s(&spec), "--out", s(&out), "--count", &count.to_string()]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    out
}

const TRAIN: &str = "\
num_classes = 4
head_kind = twohead
epochs = 1
batch_size = 4
learning_rate = 1e-3
seed = 1
paste = true
negatives_mode = full
crop = 32
widths = 4, 4, 8, 8
train.kind = directory
train.path = inliers
negatives.kind = directory
negatives.path = negatives
";

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "inliers", "inlier", 0, 6);
    gen(dir.path(), "negatives", "negative", 0, 4);
    let cfg = dir.path().join("train.cfg");
    fs::write(&cfg, TRAIN).unwrap();
    (dir, cfg)
}

fn train(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--config", s(cfg), "--out", s(out)];
    args.extend_from_slice(extra);
    odseg(&args)
}

#[test]
fn gen_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a", "negative_bb", 3, 3);
    let b = gen(dir.path(), "b", "negative_bb", 3, 3);
    for f in ["manifest.json", "images/00002.png", "labels/00001.png"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ds = load_directory(&DatasetSpec::directory(&a, 4)).unwrap();
    let direct = SyntheticSet::new(DatasetSpec::synthetic(SourceTag::NegativeBb, 4, 32, 3, 3)).unwrap();
    for i in 0..3 {
        assert_eq!(ds.sample(i).unwrap().labels, direct.sample(i).unwrap().labels);
    }

    let empty = gen(dir.path(), "empty", "inlier", 0, 0);
    assert!(empty.join("manifest.json").exists());
    assert_eq!(fs::read_dir(empty.join("images")).unwrap().count(), 0);
}

#[test]
fn config_errors_are_usage_errors() {
    let (dir, cfg) = setup();
    let out = dir.path().join("m.ckpt");
    fs::write(&cfg, TRAIN.replace("epochs = 1\n", "")).unwrap();
    let r = train(&cfg, &out, &[]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("`epochs`"), "{}", stderr(&r));

    fs::write(&cfg, format!("{TRAIN}seed = 2\n")).unwrap();
    let r = train(&cfg, &out, &[]);
    assert_eq!(code(&r), 1);
    assert!(stderr(&r).contains("duplicate key `seed`"));

    fs::write(&cfg, format!("{TRAIN}epoch = 2\n")).unwrap();
    assert!(stderr(&train(&cfg, &out, &[])).contains("unknown key `epoch`"));
    assert!(!out.exists());
}

#[test]
fn train_eval_pipeline() {
    let (dir, cfg) = setup();
    let d = dir.path();
    let a = d.join("a.ckpt");
    let r = train(&cfg, &a, &["--seed", "5"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let log = fs::read_to_string(d.join("a.log.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "loss_total", "loss_mc", "loss_th", "loss_aux", "wall_seconds"] {
        assert!(line.get(key).is_some(), "{key} missing from {line}");
    }

    // The override beats the file: equal to a run whose file says seed 5.
    fs::write(&cfg, TRAIN.replace("seed = 1", "seed = 5")).unwrap();
    let b = d.join("b.ckpt");
    assert_eq!(code(&train(&cfg, &b, &[])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let inl = d.join("inliers");
    let neg = d.join("negatives");
    let eval = |report: &Path, extra: &[&str]| {
        let mut args = vec!["eval", "--ckpt", s(&a), "--data", s(&inl), "--data", s(&neg), "--report", s(report), "--no-hazards"];
        args.extend_from_slice(extra);
        odseg(&args)
    };
    let r1 = d.join("r1.json");
    let r2 = d.join("r2.json");
    let out = eval(&r1, &["--assays", "3", "--maps", s(&d.join("maps"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(code(&eval(&r2, &["--assays", "3"])), 0);
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&r1).unwrap()).unwrap();
    assert_eq!(report["score"], "twohead");
    assert!(report["ap_mean"].as_f64().unwrap() <= 1.0);
    assert!(d.join("maps/inlier_00000_merged.png").exists());
    assert!(d.join("maps/negative_00003_score.png").exists());

    let r = eval(&d.join("r3.json"), &["--score", "max-sigma"]);
    assert_eq!(code(&r), 1, "{}", stderr(&r));
    let r = odseg(&["eval", "--ckpt", s(&a), "--data", s(&inl), "--report", s(&d.join("r4.json"))]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));

    fs::write(d.join("bad.ckpt"), b"ODSG").unwrap();
    let r = odseg(&["eval", "--ckpt", s(&d.join("bad.ckpt")), "--data", s(&inl), "--report", s(&r1)]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("truncated"));
}

#[test]
fn gradcheck_exit_codes() {
    let r = odseg(&["gradcheck", "--seeds", "2", "--filter", "conv2d"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(String::from_utf8_lossy(&r.stdout).contains("pass"));
    let r = odseg(&["gradcheck", "--seeds", "1", "--filter", "conv2d", "--inject-fault"]);
    assert_eq!(code(&r), 3);
    assert_eq!(code(&odseg(&["gradcheck", "--filter", "no-such-case"])), 1);
    assert_eq!(code(&odseg(&["gradcheck", "--bogus"])), 1);
    assert_eq!(code(&odseg(&["--help"])), 0);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["twohead.cfg", "baseline.cfg", "bb.cfg"] {
        odseg::config::load_train_config(&root.join(name), None).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for name in ["train.spec", "negatives_bb.spec", "val.spec", "val_negatives.spec"] {
        odseg::config::load_dataset_spec(&root.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
