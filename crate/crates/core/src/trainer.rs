//! Deterministic training loop and the two-setup evaluation.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::checkpoint::Checkpoint;
use crate::data::{augment, collate, denormalize, form_batch, normalize, paste_negative, Sample, SampleSource, Stream};
use crate::error::{Error, Result};
use crate::inference::{predict, PredictionMaps, ScoreMode, ScoreOptions};
use crate::losses::{total_loss, LabelPair, LossConfig, Z_INLIER, Z_OUTLIER};
use crate::metrics::{ap_assays, average_precision, hazard_drop, miou, EvalReport};
use crate::model::{is_backbone_param, HeadKind, Mode, Model, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativesMode {
    /// Whole negative images.
    Full,
    /// Negatives labeled only inside a bounding box.
    Bb,
    /// No negative data.
    None,
}

impl std::str::FromStr for NegativesMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(NegativesMode::Full),
            "bb" => Ok(NegativesMode::Bb),
            "none" => Ok(NegativesMode::None),
            _ => Err(Error::invalid("negatives_mode", format!("unknown mode `{s}` (full, bb, none)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Backbone parameters train at `learning_rate / pretrained_lr_divisor`.
    pub pretrained_lr_divisor: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    pub paste: bool,
    pub negatives_mode: NegativesMode,
    pub threshold: f64,
    /// Side of the square training crops.
    pub crop: usize,
    /// Confidence interpolation of the multi-class term on every second
    /// batch (confidence head).
    pub interpolate: bool,
    pub model: ModelConfig,
    pub loss: LossConfig,
}

impl TrainConfig {
    pub fn new(num_classes: usize, head_kind: HeadKind) -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            learning_rate: 4e-4,
            pretrained_lr_divisor: 4.0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            paste: true,
            negatives_mode: NegativesMode::Full,
            threshold: 0.5,
            crop: 64,
            interpolate: true,
            model: ModelConfig::new(num_classes, head_kind),
            loss: LossConfig::new(num_classes, head_kind),
        }
    }

    pub fn head_kind(&self) -> HeadKind {
        self.model.head_kind
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate)));
        }
        if !(self.pretrained_lr_divisor > 0.0) {
            return Err(Error::Config("pretrained_lr_divisor must be positive".into()));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        if self.crop == 0 || self.crop % 32 != 0 {
            return Err(Error::Config(format!("crop {} must be a positive multiple of 32", self.crop)));
        }
        Ok(())
    }
}

/// Adam with bias correction; moments live in parameter name order.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    step: i32,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

impl Adam {
    /// One update of the named parameters; `lr` gives each name its rate.
    pub fn step(
        &mut self,
        model: &mut Model<f32>,
        grads: &[(String, Tensor<f32>)],
        lr: impl Fn(&str) -> f64,
        betas: (f64, f64),
        eps: f64,
    ) -> Result<()> {
        self.step += 1;
        let (b1, b2) = (betas.0 as f32, betas.1 as f32);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let eps = eps as f32;
        for (name, g) in grads {
            let p = model.param_mut(name).ok_or_else(|| Error::invalid("adam", format!("unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            let rate = lr(name) as f32;
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w -= rate * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub batches: usize,
    pub loss_total: f64,
    /// Mean unweighted loss terms, keyed `loss_<term>`.
    #[serde(flatten)]
    pub components: BTreeMap<String, f64>,
    pub wall_seconds: f64,
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Independent seed `k` derived from `seed`.
pub fn sub_seed(seed: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng.next_u64()
}

/// Trains a fresh model. An epoch ends once every inlier image has been
/// drawn once; negatives cycle independently. `on_epoch` sees each log
/// line and the current checkpoint.
pub fn train(
    cfg: &TrainConfig,
    inliers: &dyn SampleSource,
    negatives: Option<&dyn SampleSource>,
    on_epoch: &mut dyn FnMut(&EpochLog, &Checkpoint) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let negatives = match (cfg.negatives_mode, negatives) {
        (NegativesMode::None, _) => None,
        (_, Some(n)) => Some(n),
        (_, None) => return Err(Error::Config("negative data is required unless negatives_mode = none".into())),
    };
    let nc = cfg.model.num_classes;
    let kind = cfg.head_kind();
    let mut model = Model::<f32>::build(cfg.model.clone(), cfg.seed)?;
    let mut loss_cfg = cfg.loss.clone();
    let mut inlier_stream = Stream::new(inliers, sub_seed(cfg.seed, 1))?;
    let mut negative_stream = negatives.map(|n| Stream::new(n, sub_seed(cfg.seed, 2))).transpose()?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 3));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 4));
    let mut adam = Adam::default();
    let backbone_lr = cfg.learning_rate / cfg.pretrained_lr_divisor;
    let lr = |name: &str| if is_backbone_param(name) { backbone_lr } else { cfg.learning_rate };
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let target = (epoch + 1) * inliers.len();
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut total = 0.0;
        let mut batches = 0;
        while inlier_stream.delivered() < target {
            let batch = form_batch(&mut inlier_stream, negative_stream.as_mut(), cfg.batch_size, cfg.paste, nc, &mut data_rng)?;
            let batch = batch.iter().map(|s| augment(s, cfg.crop, &mut data_rng)).collect::<Result<Vec<_>>>()?;
            let (images, labels) = collate(&batch)?;
            let mut tape = Tape::new();
            let x = tape.constant(images);
            let pass = model.forward(&mut tape, x, Mode::Train, &mut dropout_rng)?;
            let loss = total_loss(&mut tape, kind, &pass.out, &labels, &loss_cfg, nc, cfg.interpolate && step % 2 == 1)?;
            let value = tape.value(loss.total).item() as f64;
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batches,
                    seed: cfg.seed,
                });
            }
            let names: Vec<String> = pass.params.keys().cloned().collect();
            let vars: Vec<_> = pass.params.values().copied().collect();
            let grads = tape.grad(loss.total, &vars)?;
            let named: Vec<(String, Tensor<f32>)> = names.into_iter().zip(grads).collect();
            adam.step(&mut model, &named, lr, cfg.adam_betas, cfg.adam_eps)?;
            model.apply_bn_stats(&pass.bn_stats);
            for (name, v) in &loss.components {
                *sums.entry(format!("loss_{name}")).or_default() += v;
                if *name == "c" {
                    loss_cfg.adapt_lambda_c(*v);
                }
            }
            total += value;
            batches += 1;
            step += 1;
        }
        let n = batches.max(1) as f64;
        let line = EpochLog {
            epoch,
            batches,
            loss_total: total / n,
            components: sums.into_iter().map(|(k, v)| (k, v / n)).collect(),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        let ck = Checkpoint {
            model: model.clone(),
            seed: cfg.seed,
            epoch: epoch + 1,
        };
        on_epoch(&line, &ck)?;
        log.push(line);
    }
    Ok(TrainOutput {
        checkpoint: Checkpoint {
            model,
            seed: cfg.seed,
            epoch: cfg.epochs,
        },
        log,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub score: ScoreMode,
    pub score_opts: ScoreOptions,
    pub assays: usize,
    pub seed: u64,
    /// Area fraction of negatives pasted into inlier images; at least 0.01.
    pub paste_fraction: f64,
    pub batch_size: usize,
    /// Also measure mIoU under synthetic image degradations.
    pub hazards: bool,
}

impl EvalOptions {
    pub fn new(score: ScoreMode) -> Self {
        Self {
            score,
            score_opts: ScoreOptions::default(),
            assays: 50,
            seed: 0,
            paste_fraction: 0.05,
            batch_size: 8,
            hazards: true,
        }
    }
}

/// Synthetic degradations of the hazard table.
pub const HAZARDS: [&str; 3] = ["blur", "noise", "overexposure"];

/// Applies hazard `name` to a normalized image.
pub fn apply_hazard(image: &Tensor<f32>, name: &str, seed: u64) -> Result<Tensor<f32>> {
    let raw = denormalize(image)?;
    let (h, w) = (raw.shape()[1], raw.shape()[2]);
    let out = match name {
        "blur" => Tensor::from_fn(vec![3, h, w], |k| {
            let (c, i, j) = (k / (h * w), k / w % h, k % w);
            let mut acc = 0.0;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let ii = (i as i64 + di).clamp(0, h as i64 - 1) as usize;
                    let jj = (j as i64 + dj).clamp(0, w as i64 - 1) as usize;
                    acc += raw.data()[c * h * w + ii * w + jj];
                }
            }
            acc / 9.0
        }),
        "noise" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0f32, 20.0).expect("valid sigma");
            Tensor::from_fn(raw.shape().to_vec(), |k| (raw.data()[k] + normal.sample(&mut rng)).clamp(0.0, 255.0))
        }
        "overexposure" => raw.map(|v| (v * 1.5 + 40.0).min(255.0)),
        _ => return Err(Error::invalid("hazard", format!("unknown hazard `{name}`"))),
    };
    normalize(&out)
}

/// Predictions for every sample of `samples`, in order.
pub fn predict_samples(model: &Model<f32>, samples: &[Sample], opts: &EvalOptions, rng: &mut ChaCha8Rng) -> Result<Vec<PredictionMaps>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(opts.batch_size.max(1)) {
        let (images, _) = collate(chunk)?;
        out.extend(predict(model, &images, opts.score, &opts.score_opts, rng)?);
    }
    Ok(out)
}

fn load_all(source: &dyn SampleSource) -> Result<Vec<Sample>> {
    (0..source.len()).map(|i| source.sample(i)).collect()
}

/// Outlier scores of the pixels whose `z` equals `z`.
fn pixels_with(maps: &PredictionMaps, labels: &LabelPair, z: u8) -> Vec<f32> {
    maps.outlier_prob.data().iter().zip(&labels.z).filter(|(_, &lz)| lz == z).map(|(&s, _)| s).collect()
}

/// Both validation setups: whole negative images against inlier images
/// (mean and spread over assays), and negatives pasted into inlier images.
/// mIoU is measured on the merged predictions of clean inlier images.
pub fn evaluate(model: &Model<f32>, inliers: &dyn SampleSource, negatives: &dyn SampleSource, opts: &EvalOptions) -> Result<EvalReport> {
    let head = model.config().head_kind;
    if !opts.score.supports(head) {
        return Err(Error::invalid("evaluate", format!("score `{}` does not apply to a {head} model", opts.score)));
    }
    if inliers.is_empty() || negatives.is_empty() {
        return Err(Error::invalid("evaluate", "evaluation needs inlier and negative images"));
    }
    if opts.paste_fraction < 0.01 {
        return Err(Error::invalid("evaluate", "pasted negatives must cover at least 1% of the image"));
    }
    let nc = model.config().num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(opts.seed, 1));
    let clean = load_all(inliers)?;
    let negs = load_all(negatives)?;

    let clean_maps = predict_samples(model, &clean, opts, &mut rng)?;
    let inlier_pool: Vec<Vec<f32>> = clean_maps.iter().zip(&clean).map(|(m, s)| pixels_with(m, &s.labels, Z_INLIER)).collect();
    let neg_maps = predict_samples(model, &negs, opts, &mut rng)?;
    let neg_pool: Vec<Vec<f32>> = neg_maps.iter().zip(&negs).map(|(m, s)| pixels_with(m, &s.labels, Z_OUTLIER)).collect();
    let (ap_mean, ap_std) = ap_assays(&inlier_pool, &neg_pool, opts.assays, sub_seed(opts.seed, 2))?;

    let gts: Vec<LabelPair> = clean.iter().map(|s| s.labels.clone()).collect();
    let merged: Vec<Vec<u8>> = clean_maps.iter().map(|m| m.merged.clone()).collect();
    let (per_class_iou, clean_miou) = miou(&merged, &gts, nc)?;

    let pasted = clean
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut prng = ChaCha8Rng::seed_from_u64(sub_seed(opts.seed, 3));
            prng.set_stream(i as u64);
            let neg = &negs[prng.gen_range(0..negs.len())];
            paste_negative(s, neg, opts.paste_fraction, nc, &mut prng)
        })
        .collect::<Result<Vec<_>>>()?;
    let pasted_maps = predict_samples(model, &pasted, opts, &mut rng)?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (m, s) in pasted_maps.iter().zip(&pasted) {
        for (&p, &z) in m.outlier_prob.data().iter().zip(&s.labels.z) {
            if z <= Z_INLIER {
                scores.push(p);
                labels.push(z == Z_OUTLIER);
            }
        }
    }
    let pasted_ap = average_precision(&scores, &labels)?;
    let pasted_gts: Vec<LabelPair> = pasted.iter().map(|s| s.labels.clone()).collect();
    let pasted_merged: Vec<Vec<u8>> = pasted_maps.iter().map(|m| m.merged.clone()).collect();
    let (_, negative_miou) = miou(&pasted_merged, &pasted_gts, nc)?;

    let mut hazard_drops = BTreeMap::new();
    if opts.hazards {
        let mut by_hazard = BTreeMap::new();
        for (h, name) in HAZARDS.iter().enumerate() {
            let degraded = clean
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    Ok(Sample {
                        image: apply_hazard(&s.image, name, sub_seed(opts.seed, 100 + (h * clean.len() + i) as u64))?,
                        ..s.clone()
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let maps = predict_samples(model, &degraded, opts, &mut rng)?;
            let merged: Vec<Vec<u8>> = maps.iter().map(|m| m.merged.clone()).collect();
            by_hazard.insert(name.to_string(), miou(&merged, &gts, nc)?.1);
        }
        if clean_miou > 0.0 {
            hazard_drops = hazard_drop(&by_hazard, clean_miou)?;
        }
    }

    Ok(EvalReport {
        head: head.to_string(),
        score: opts.score.to_string(),
        assays: opts.assays,
        ap_mean,
        ap_std,
        pasted_ap,
        per_class_iou,
        miou: clean_miou,
        negative_miou,
        hazard_drops,
    })
}

/// Training-set mIoU of plain argmax predictions.
pub fn training_miou(model: &Model<f32>, inliers: &dyn SampleSource) -> Result<f64> {
    let samples = load_all(inliers)?;
    let mut opts = EvalOptions::new(ScoreMode::default_for(model.config().head_kind));
    opts.score_opts.threshold = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let maps = predict_samples(model, &samples, &opts, &mut rng)?;
    let merged: Vec<Vec<u8>> = maps.iter().map(|m| m.merged.clone()).collect();
    let gts: Vec<LabelPair> = samples.iter().map(|s| s.labels.clone()).collect();
    Ok(miou(&merged, &gts, model.config().num_classes)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetSpec, SourceTag, SyntheticSet};

    fn tiny(kind: HeadKind) -> TrainConfig {
        let mut cfg = TrainConfig::new(4, kind);
        cfg.model.backbone_widths = [4, 8, 8, 8];
        cfg.epochs = 1;
        cfg.batch_size = 4;
        cfg.crop = 32;
        cfg
    }

    fn sets(n: usize) -> (SyntheticSet, SyntheticSet) {
        (
            SyntheticSet::new(DatasetSpec::synthetic(SourceTag::Inlier, 4, 32, n, 0)).unwrap(),
            SyntheticSet::new(DatasetSpec::synthetic(SourceTag::Negative, 4, 32, n, 0)).unwrap(),
        )
    }

    #[test]
    fn zero_gradient_step_changes_nothing() {
        let mut model = Model::<f32>::build(ModelConfig::new(3, HeadKind::Multiclass), 0).unwrap();
        let before = model.clone();
        let grads: Vec<_> = model.params().iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec()))).collect();
        let mut adam = Adam::default();
        adam.step(&mut model, &grads, |_| 1e-3, (0.9, 0.999), 1e-8).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn adam_first_step_moves_by_the_learning_rate() {
        let mut model = Model::<f32>::build(ModelConfig::new(3, HeadKind::Multiclass), 0).unwrap();
        let before = model.params()["head.class.bias"].clone();
        let g = Tensor::from_fn(before.shape().to_vec(), |i| if i == 0 { 2.0 } else { -0.5 });
        let mut adam = Adam::default();
        adam.step(&mut model, &[("head.class.bias".into(), g)], |_| 0.01, (0.9, 0.999), 1e-8).unwrap();
        let after = &model.params()["head.class.bias"];
        assert!((before.data()[0] - after.data()[0] - 0.01).abs() < 1e-6);
        assert!((after.data()[1] - before.data()[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn fixed_batch_loss_descends() {
        let (inl, _) = sets(4);
        let samples: Vec<_> = (0..4).map(|i| inl.sample(i).unwrap()).collect();
        let (images, labels) = collate(&samples).unwrap();
        let cfg = tiny(HeadKind::Multiclass);
        let mut model = Model::<f32>::build(cfg.model.clone(), 0).unwrap();
        let mut adam = Adam::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut last = f64::INFINITY;
        for _ in 0..6 {
            let mut tape = Tape::new();
            let x = tape.constant(images.clone());
            let pass = model.forward(&mut tape, x, Mode::Train, &mut rng).unwrap();
            let loss = total_loss(&mut tape, HeadKind::Multiclass, &pass.out, &labels, &cfg.loss, 4, true).unwrap();
            let value = tape.value(loss.total).item() as f64;
            assert!(value < last, "loss rose from {last} to {value}");
            last = value;
            let vars: Vec<_> = pass.params.values().copied().collect();
            let grads = tape.grad(loss.total, &vars).unwrap();
            let named: Vec<_> = pass.params.keys().cloned().zip(grads).collect();
            adam.step(&mut model, &named, |_| 1e-3, (0.9, 0.999), 1e-8).unwrap();
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (inl, neg) = sets(4);
        let mut cfg = tiny(HeadKind::Twohead);
        cfg.learning_rate = 0.0;
        let out = train(&cfg, &inl, Some(&neg), &mut |_, _| Ok(())).unwrap();
        let fresh = Model::<f32>::build(cfg.model.clone(), cfg.seed).unwrap();
        assert_eq!(out.checkpoint.model.params(), fresh.params());
    }

    #[test]
    fn training_is_deterministic_and_logged() {
        let (inl, neg) = sets(6);
        let cfg = tiny(HeadKind::Multiclass);
        let mut lines = 0;
        let a = train(&cfg, &inl, Some(&neg), &mut |_, _| {
            lines += 1;
            Ok(())
        })
        .unwrap();
        let b = train(&cfg, &inl, Some(&neg), &mut |_, _| Ok(())).unwrap();
        assert_eq!(lines, 1);
        assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
        let l = &a.log[0];
        assert!(l.batches >= 2 && l.loss_total.is_finite());
        assert!(l.components.contains_key("loss_mc") && l.components.contains_key("loss_kl"));
    }

    #[test]
    fn confidence_head_trains_and_adapts_its_weight() {
        let (inl, neg) = sets(8);
        let cfg = tiny(HeadKind::Confidence);
        let out = train(&cfg, &inl, Some(&neg), &mut |_, _| Ok(())).unwrap();
        let l = &out.log[0];
        assert!(l.batches >= 2 && l.loss_total.is_finite());
        assert!(l.components.contains_key("loss_c"));
    }

    #[test]
    fn negatives_required_unless_disabled() {
        let (inl, _) = sets(4);
        let mut cfg = tiny(HeadKind::Multiclass);
        assert!(train(&cfg, &inl, None, &mut |_, _| Ok(())).is_err());
        cfg.negatives_mode = NegativesMode::None;
        assert!(train(&cfg, &inl, None, &mut |_, _| Ok(())).is_ok());
    }

    #[test]
    fn divergence_names_the_batch() {
        let (inl, neg) = sets(4);
        let mut cfg = tiny(HeadKind::Multiclass);
        cfg.learning_rate = 1e300;
        cfg.epochs = 3;
        match train(&cfg, &inl, Some(&neg), &mut |_, _| Ok(())) {
            Err(Error::Divergence { seed, .. }) => assert_eq!(seed, 0),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("training with a huge step should diverge"),
        }
    }

    #[test]
    fn hazards_keep_shape_and_differ() {
        let (inl, _) = sets(1);
        let s = inl.sample(0).unwrap();
        for name in HAZARDS {
            let h = apply_hazard(&s.image, name, 1).unwrap();
            assert_eq!(h.shape(), s.image.shape());
            assert!(h.max_abs_diff(&s.image) > 0.01, "{name}");
        }
        assert!(apply_hazard(&s.image, "fog", 0).is_err());
    }

    #[test]
    fn evaluation_is_reproducible() {
        let (inl, neg) = sets(3);
        let model = Model::<f32>::build(tiny(HeadKind::Twohead).model, 0).unwrap();
        let mut opts = EvalOptions::new(ScoreMode::Twohead);
        opts.assays = 3;
        let a = evaluate(&model, &inl, &neg, &opts).unwrap();
        let b = evaluate(&model, &inl, &neg, &opts).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.ap_mean) && (0.0..=1.0).contains(&a.pasted_ap));
        assert_eq!(a.hazard_drops.len(), HAZARDS.len());
        opts.score = ScoreMode::MaxSigma;
        assert!(evaluate(&model, &inl, &neg, &opts).is_err());
    }
}
