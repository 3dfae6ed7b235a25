//! Acceptance criteria 1 to 8. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use odseg::checkpoint::Checkpoint;
use odseg::data::io::write_dataset;
use odseg::data::{form_batch, paste_negative, DatasetSpec, SampleSource, SourceTag, Stream, SyntheticSet, PASTE_FRACTION};
use odseg::inference::{
    merge, mutual_information, score_cplus1, score_cplus1_diff, score_confidence, score_max_sigma, score_max_softmax,
    score_mc_dropout, score_odin, score_twohead,
};
use odseg::losses::{loss_aux, loss_kl, loss_mc, loss_ml, loss_th, LabelPair, Z_OUTLIER};
use odseg::metrics::{ap_assays, average_precision, EvalReport};
use odseg::trainer::{evaluate, train, EvalOptions, NegativesMode, TrainConfig};
use odseg::verification::{self, SuiteOptions};
use odseg::{HeadKind, Mode, Model, ModelConfig, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let reports = verification::run(&SuiteOptions::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).map(|r| format!("{} ({:.2e})", r.name, r.max_rel_err)).collect();
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let seeds = reports.first().map_or(0, |r| r.seeds);
    check(
        failed.is_empty() && seeds == 20 && secs < 60.0,
        format!("{} cases x {seeds} seeds, worst rel err {worst:.2e}, {secs:.1} s, failing: {failed:?}", reports.len()),
    )
}

fn px(y: u8, z: u8) -> Vec<LabelPair> {
    vec![LabelPair::new(1, 1, vec![y], vec![z]).unwrap()]
}

fn c2_hand_values() -> Outcome {
    let mut t = Tape::<f64>::new();
    let leaf = |t: &mut Tape<f64>, v: &[f64]| t.leaf(Tensor::new(vec![1, v.len(), 1, 1], v.to_vec()).unwrap());
    let mut got = Vec::new();
    let s = leaf(&mut t, &[0.0; 3]);
    let v = loss_mc(&mut t, s, &px(0, 1), &[1.0; 3], None).unwrap();
    got.push(("mc", t.value(v).item(), 1.0986));
    let s = leaf(&mut t, &[0.0; 2]);
    let v = loss_ml(&mut t, s, &px(0, 1)).unwrap();
    got.push(("ml inlier", t.value(v).item(), 1.3863));
    let v = loss_ml(&mut t, s, &px(2, Z_OUTLIER)).unwrap();
    got.push(("ml outlier", t.value(v).item(), 1.3863));
    let v = loss_aux(&mut t, &[s], &[2], &[LabelPair::filled(2, 2, 0)], 2).unwrap();
    got.push(("aux (1,0)", t.value(v).item(), 0.6931));
    let mixed = LabelPair::new(2, 2, vec![0, 0, 0, 1], vec![1; 4]).unwrap();
    let s2 = leaf(&mut t, &[0.75f64.ln(), 0.25f64.ln()]);
    let v = loss_aux(&mut t, &[s2], &[2], &[mixed], 2).unwrap();
    got.push(("aux (0.75,0.25)", t.value(v).item(), 0.5623));
    let v = loss_th(&mut t, s, &px(0, 1)).unwrap();
    got.push(("th", t.value(v).item(), 0.6931));
    let s3 = leaf(&mut t, &[0.9f64.ln(), 0.1f64.ln()]);
    let v = loss_kl(&mut t, s3, &px(2, Z_OUTLIER)).unwrap();
    got.push(("kl", t.value(v).item(), 0.5108));
    let c = t.leaf(Tensor::new(vec![1, 1, 1, 1], vec![0.5]).unwrap());
    let v = odseg::losses::loss_conf(&mut t, c, &px(0, 1), 3).unwrap();
    got.push(("conf", t.value(v).item(), 0.6931));
    let bad: Vec<_> = got.iter().filter(|(_, g, w)| format!("{g:.4}") != format!("{w:.4}")).collect();
    let summary: Vec<_> = got.iter().map(|(n, g, _)| format!("{n}={g:.4}")).collect();
    check(bad.is_empty(), summary.join(" "))
}

/// AP by its definition: mean over positives of precision at their rank,
/// every member of a tie block sharing the block's last rank.
fn brute_force_ap(scores: &[f32], labels: &[bool]) -> f64 {
    let mut pos: Vec<f32> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    pos.sort_by(|a, b| b.total_cmp(a));
    let mut sum = 0.0;
    for &s in &pos {
        let rank = scores.iter().filter(|&&o| o >= s).count();
        let hits = pos.iter().filter(|&&o| o >= s).count();
        sum += hits as f64 / rank as f64;
    }
    sum / pos.len() as f64
}

fn c3_ap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=64);
        let levels = rng.gen_range(1..=8);
        let scores: Vec<f32> = (0..n).map(|_| rng.gen_range(0..levels) as f32 / levels as f32).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[rng.gen_range(0..n)] = true;
        if average_precision(&scores, &labels).unwrap() != brute_force_ap(&scores, &labels) {
            mismatches += 1;
        }
    }
    let inl: Vec<Vec<f32>> = (0..20).map(|_| (0..500).map(|_| rng.gen()).collect()).collect();
    let neg: Vec<Vec<f32>> = (0..60).map(|_| (0..500).map(|_| rng.gen()).collect()).collect();
    let (mean, std) = ap_assays(&inl, &neg, 50, 7).map_err(|e| e.to_string())?;
    check(
        mismatches == 0 && (0.45..=0.55).contains(&mean),
        format!("{mismatches}/1000 brute-force mismatches, random assay AP {mean:.4} +- {std:.4}"),
    )
}

fn c4_data() -> Outcome {
    let inl = SyntheticSet::new(DatasetSpec::synthetic(SourceTag::Inlier, 4, 64, 50, 0)).map_err(|e| e.to_string())?;
    let neg = SyntheticSet::new(DatasetSpec::synthetic(SourceTag::Negative, 4, 64, 50, 0)).map_err(|e| e.to_string())?;
    let mut si = Stream::new(&inl, 1).unwrap();
    let mut sn = Stream::new(&neg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut inliers, mut total) = (0usize, 0usize);
    for _ in 0..1000 {
        let batch = form_batch(&mut si, Some(&mut sn), 8, false, 4, &mut rng).map_err(|e| e.to_string())?;
        inliers += batch.iter().filter(|s| !s.source.is_negative()).count();
        total += batch.len();
    }
    let share = inliers as f64 / total as f64;
    let target = PASTE_FRACTION * 64.0 * 64.0;
    let (mut lo, mut hi) = (usize::MAX, 0);
    for i in 0..200 {
        let pasted = paste_negative(&inl.sample(i % 50).unwrap(), &neg.sample(i % 37).unwrap(), PASTE_FRACTION, 4, &mut rng)
            .map_err(|e| e.to_string())?;
        let area = pasted.labels.z.iter().filter(|&&z| z == Z_OUTLIER).count();
        lo = lo.min(area);
        hi = hi.max(area);
    }
    let ok_area = lo as f64 >= 0.9 * target && hi as f64 <= 1.1 * target;
    check(
        (0.45..=0.55).contains(&share) && ok_area,
        format!("inlier share {share:.4} over 1000 batches, pasted area {lo}..{hi} px (target {target:.1} +- 10%)"),
    )
}

struct ToyRoads {
    train: SyntheticSet,
    train_neg: SyntheticSet,
    val: SyntheticSet,
    val_neg: SyntheticSet,
}

fn toyroads(size: usize, train_count: usize, val_count: usize) -> ToyRoads {
    let set = |role, count, seed| SyntheticSet::new(DatasetSpec::synthetic(role, 4, size, count, seed)).unwrap();
    ToyRoads {
        train: set(SourceTag::Inlier, train_count, 0),
        train_neg: set(SourceTag::Negative, train_count, 0),
        val: set(SourceTag::Inlier, val_count, 1000),
        val_neg: set(SourceTag::Negative, val_count, 1000),
    }
}

fn run(cfg: &TrainConfig, data: &ToyRoads) -> Result<Model<f32>, String> {
    let negatives: Option<&dyn SampleSource> = (cfg.negatives_mode != NegativesMode::None).then_some(&data.train_neg as _);
    let out = train(cfg, &data.train, negatives, &mut |_, _| Ok(())).map_err(|e| e.to_string())?;
    Ok(out.checkpoint.model)
}

fn eval(model: &Model<f32>, data: &ToyRoads, score: odseg::inference::ScoreMode) -> Result<EvalReport, String> {
    let mut opts = EvalOptions::new(score);
    opts.hazards = false;
    evaluate(model, &data.val, &data.val_neg, &opts).map_err(|e| e.to_string())
}

fn c5_trend() -> Outcome {
    use odseg::inference::ScoreMode;
    let start = Instant::now();
    let data = toyroads(64, 200, 50);
    let mut base = TrainConfig::new(4, HeadKind::Multiclass);
    base.negatives_mode = NegativesMode::None;
    base.paste = false;
    let mut two = TrainConfig::new(4, HeadKind::Twohead);
    two.negatives_mode = NegativesMode::Full;
    two.paste = true;
    let base_report = eval(&run(&base, &data)?, &data, ScoreMode::MaxSoftmax)?;
    let two_report = eval(&run(&two, &data)?, &data, ScoreMode::Twohead)?;
    let secs = start.elapsed().as_secs_f64();
    let lift = two_report.pasted_ap - base_report.pasted_ap;
    let gap = (two_report.miou - base_report.miou).abs();
    let detail = format!(
        "pasted AP baseline {:.4} -> twohead {:.4} (lift {lift:.4}); whole-image AP {:.4} +- {:.4}; mIoU baseline {:.4} twohead {:.4}; {secs:.0} s",
        base_report.pasted_ap, two_report.pasted_ap, two_report.ap_mean, two_report.ap_std, base_report.miou, two_report.miou
    );
    check(
        lift >= 0.20 && two_report.pasted_ap >= 0.90 && two_report.ap_mean >= 0.99 && gap <= 0.02 && secs <= 900.0,
        detail,
    )
}

fn c6_isolation() -> Outcome {
    let data = toyroads(32, 40, 1);
    let small = |kind| {
        let mut cfg = TrainConfig::new(4, kind);
        cfg.model.backbone_widths = [8, 8, 16, 16];
        cfg.model.dropout_p = 0.2;
        cfg.epochs = 2;
        cfg.crop = 32;
        cfg
    };
    let mut two = small(HeadKind::Twohead);
    two.loss.lambda_th = 0.0;
    let mut multi = small(HeadKind::Multiclass);
    multi.loss.lambda_kl = 0.0;
    let a = run(&two, &data)?;
    let b = run(&multi, &data)?;
    let heads: BTreeMap<_, _> = a.params().iter().filter(|(k, _)| k.starts_with("head.class.")).collect();
    let differing: Vec<_> = heads.iter().filter(|(k, v)| b.params().get(k.as_str()) != Some(v)).map(|(k, _)| k.as_str()).collect();
    let shared = a.params().iter().filter(|(k, v)| b.params().get(k.as_str()) == Some(v)).count();
    check(
        !heads.is_empty() && differing.is_empty(),
        format!("{} class-head tensors, {} differing; {shared} of {} shared tensors identical", heads.len(), differing.len(), b.params().len()),
    )
}

fn c7_inference() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut notes = Vec::new();
    let mut ok = true;
    let logits = Tensor::<f32>::from_fn(vec![2, 5, 4, 4], |_| rng.gen_range(-30.0..30.0));
    let two = Tensor::<f32>::from_fn(vec![2, 2, 4, 4], |_| rng.gen_range(-30.0..30.0));
    let conf = Tensor::<f32>::from_fn(vec![2, 1, 4, 4], |_| rng.gen_range(0.0..1.0));
    let all = [
        score_max_softmax(&logits),
        score_max_sigma(&logits),
        score_cplus1(&logits),
        score_cplus1_diff(&logits),
        score_twohead(&two),
        score_confidence(&conf),
    ];
    let in_range = all.iter().all(|s| s.as_ref().map_or(false, |t| t.data().iter().all(|v| (0.0..=1.0).contains(v))));
    ok &= in_range;
    notes.push(format!("ranges {}", if in_range { "ok" } else { "violated" }));

    let shift = |t: &Tensor<f32>, c: f32| t.map(|v| v + c);
    let mut worst = 0.0f32;
    for c in [-7.5f32, 3.25, 12.0] {
        worst = worst.max(score_cplus1(&logits).unwrap().max_abs_diff(&score_cplus1(&shift(&logits, c)).unwrap()));
        worst = worst.max(score_twohead(&two).unwrap().max_abs_diff(&score_twohead(&shift(&two, c)).unwrap()));
    }
    ok &= worst <= 1e-6;
    notes.push(format!("shift drift {worst:.1e}"));

    let cp = Tensor::new(vec![2, 1, 3], vec![0.3, 0.3, 0.3, 0.7, 0.7, 0.7]).unwrap();
    let op = Tensor::new(vec![1, 3], vec![0.5, 0.5f32.next_up(), 0.5f32.next_down()]).unwrap();
    let merged = merge(&cp, &op, 0.5).map_err(|e| e.to_string())?;
    ok &= merged == [1, 2, 1];
    notes.push(format!("merge at threshold {merged:?}"));

    let cfg = ModelConfig {
        backbone_widths: [4, 4, 8, 8],
        ..ModelConfig::new(3, HeadKind::Multiclass)
    };
    let model = Model::<f32>::build(cfg.clone(), 1).map_err(|e| e.to_string())?;
    let img = Tensor::<f32>::from_fn(vec![2, 3, 32, 32], |_| rng.gen_range(-2.0..2.0));
    let odin = score_odin(&model, &img, 1.0, 0.0).map_err(|e| e.to_string())?;
    let msp = score_max_softmax(&model.predict(&img, Mode::Eval, &mut rng).map_err(|e| e.to_string())?.class_logits).unwrap();
    ok &= odin == msp;
    notes.push(format!("odin(T=1, eps=0) {} max-softmax", if odin == msp { "==" } else { "!=" }));

    let (_, mi0) = score_mc_dropout(&model, &img, 5, &mut rng).map_err(|e| e.to_string())?;
    let zero = mi0.data().iter().all(|&v| v == 0.0);
    let dropped = Model::<f32>::build(ModelConfig { dropout_p: 0.5, ..cfg }, 1).map_err(|e| e.to_string())?;
    let (_, mi) = score_mc_dropout(&dropped, &img, 8, &mut rng).map_err(|e| e.to_string())?;
    let min_mi = mi.data().iter().copied().fold(f32::INFINITY, f32::min);
    let random: Vec<_> = (0..6)
        .map(|_| {
            let t = Tensor::<f32>::from_fn(vec![1, 4, 3, 3], |_| rng.gen_range(-5.0..5.0));
            odseg::autodiff::ops::softmax(&t, 1).unwrap()
        })
        .collect();
    let (_, mi_r) = mutual_information(&random).map_err(|e| e.to_string())?;
    let min_all = mi_r.data().iter().copied().fold(min_mi, f32::min);
    ok &= zero && min_all as f64 >= -1e-9;
    notes.push(format!("MI at p=0 {}, min MI {min_all:.2e}", if zero { "0" } else { "nonzero" }));
    check(ok, notes.join("; "))
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c8_persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        backbone_widths: [4, 8, 8, 16],
        dropout_p: 0.1,
        ..ModelConfig::new(4, HeadKind::Twohead)
    };
    let ck = Checkpoint {
        model: Model::build(cfg, 8).map_err(|e| e.to_string())?,
        seed: 8,
        epoch: 3,
    };
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    ck.save(&p1).map_err(|e| e.to_string())?;
    Checkpoint::load(&p1).and_then(|c| c.save(&p2)).map_err(|e| e.to_string())?;
    let same_ckpt = std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap();

    let spec = DatasetSpec::synthetic(SourceTag::NegativeBb, 4, 64, 6, 5);
    let (d1, d2) = (dir.path().join("d1"), dir.path().join("d2"));
    write_dataset(&SyntheticSet::new(spec.clone()).unwrap(), 4, 6, &d1).map_err(|e| e.to_string())?;
    write_dataset(&SyntheticSet::new(spec).unwrap(), 4, 6, &d2).map_err(|e| e.to_string())?;
    let (f1, f2) = (files_under(&d1), files_under(&d2));
    check(
        same_ckpt && f1 == f2 && f1.len() == 13,
        format!("checkpoint round trip {}, dataset {} files {}", if same_ckpt { "identical" } else { "differs" }, f1.len(), if f1 == f2 { "identical" } else { "differ" }),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 gradient verification", c1_gradients),
        ("2 hand-value losses", c2_hand_values),
        ("3 AP oracle", c3_ap),
        ("4 data pipeline statistics", c4_data),
        ("5 desk-scale trend", c5_trend),
        ("6 two-head isolation", c6_isolation),
        ("7 inference invariants", c7_inference),
        ("8 persistence", c8_persistence),
    ];
    let only = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failures = 0;
    for (name, f) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        match f() {
            Ok(d) => println!("PASS criterion {name}: {d}"),
            Err(d) => {
                failures += 1;
                println!("FAIL criterion {name}: {d}");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
