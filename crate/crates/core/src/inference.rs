//! Outlier scores for every head, merging into a `C+1` index map, and
//! prediction writers.
//!
//! Score functions take `N×C×H×W` head outputs and return `N×H×W` outlier
//! probabilities in `[0, 1]`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, Tape, Tensor};
use crate::error::{Error, Result};
use crate::imageio::write_png;
use crate::model::{HeadKind, Mode, Model, ModelOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    MaxSoftmax,
    Odin,
    MaxSigma,
    Cplus1,
    /// Outlier-class probability minus max inlier probability, mapped to `[0, 1]`.
    Cplus1Diff,
    Twohead,
    Confidence,
    McDropout,
}

impl ScoreMode {
    pub const ALL: [ScoreMode; 8] = [
        ScoreMode::MaxSoftmax,
        ScoreMode::Odin,
        ScoreMode::MaxSigma,
        ScoreMode::Cplus1,
        ScoreMode::Cplus1Diff,
        ScoreMode::Twohead,
        ScoreMode::Confidence,
        ScoreMode::McDropout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::MaxSoftmax => "max-softmax",
            ScoreMode::Odin => "odin",
            ScoreMode::MaxSigma => "max-sigma",
            ScoreMode::Cplus1 => "cplus1",
            ScoreMode::Cplus1Diff => "cplus1-diff",
            ScoreMode::Twohead => "twohead",
            ScoreMode::Confidence => "confidence",
            ScoreMode::McDropout => "mc-dropout",
        }
    }

    /// The natural score of a head.
    pub fn default_for(head: HeadKind) -> Self {
        match head {
            HeadKind::Multiclass => ScoreMode::MaxSoftmax,
            HeadKind::Multilabel => ScoreMode::MaxSigma,
            HeadKind::Cplus1 => ScoreMode::Cplus1,
            HeadKind::Twohead => ScoreMode::Twohead,
            HeadKind::Confidence => ScoreMode::Confidence,
        }
    }

    /// Whether a model with `head` can be scored this way.
    pub fn supports(self, head: HeadKind) -> bool {
        let softmax_head = matches!(head, HeadKind::Multiclass | HeadKind::Twohead | HeadKind::Confidence);
        match self {
            ScoreMode::MaxSoftmax | ScoreMode::McDropout => softmax_head,
            ScoreMode::Odin => head == HeadKind::Multiclass,
            ScoreMode::MaxSigma => head == HeadKind::Multilabel,
            ScoreMode::Cplus1 | ScoreMode::Cplus1Diff => head == HeadKind::Cplus1,
            ScoreMode::Twohead => head == HeadKind::Twohead,
            ScoreMode::Confidence => head == HeadKind::Confidence,
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreMode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = ScoreMode::ALL.iter().map(|m| m.as_str()).collect();
            Error::invalid("score", format!("unknown score mode `{s}` ({})", names.join(", ")))
        })
    }
}

/// Knobs of the scoring pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreOptions {
    /// Outlier probability above which a pixel becomes void.
    pub threshold: f64,
    pub odin_temperature: f64,
    pub odin_epsilon: f64,
    pub mc_samples: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            odin_temperature: 10.0,
            odin_epsilon: 1e-3,
            mc_samples: 50,
        }
    }
}

/// Per-pixel predictions of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMaps {
    /// `C×H×W`, summing to 1 over classes.
    pub class_probs: Tensor<f32>,
    /// `H×W` in `[0, 1]`.
    pub outlier_prob: Tensor<f32>,
    /// Class index per pixel, `N_C` for void.
    pub merged: Vec<u8>,
}

impl PredictionMaps {
    pub fn num_classes(&self) -> usize {
        self.class_probs.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.outlier_prob.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.outlier_prob.shape()[1]
    }
}

/// Applies `f` to the channel vector of every pixel of an `N×C×H×W` tensor.
fn per_pixel(t: &Tensor<f32>, op: &'static str, f: impl Fn(&[f64]) -> f64) -> Result<Tensor<f32>> {
    let (n, c, h, w) = t.dims4(op)?;
    let hw = h * w;
    let mut buf = vec![0.0; c];
    let mut out = Vec::with_capacity(n * hw);
    for b in 0..n {
        for p in 0..hw {
            for (k, v) in buf.iter_mut().enumerate() {
                *v = t.data()[(b * c + k) * hw + p] as f64;
            }
            out.push(f(&buf) as f32);
        }
    }
    Tensor::new(vec![n, h, w], out)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `max_c softmax(v / t)_c`.
fn max_softmax_at(v: &[f64], t: f64) -> f64 {
    let m = max_of(v);
    let z: f64 = v.iter().map(|x| ((x - m) / t).exp()).sum();
    1.0 / z
}

fn max_softmax_score(logits: &Tensor<f32>, temperature: f64) -> Result<Tensor<f32>> {
    per_pixel(logits, "score_max_softmax", |v| 1.0 - max_softmax_at(v, temperature))
}

/// `1 − max_c softmax(s)_c`.
pub fn score_max_softmax(class_logits: &Tensor<f32>) -> Result<Tensor<f32>> {
    max_softmax_score(class_logits, 1.0)
}

/// `1 − max_c σ(s_c)`.
pub fn score_max_sigma(class_logits: &Tensor<f32>) -> Result<Tensor<f32>> {
    per_pixel(class_logits, "score_max_sigma", |v| 1.0 - sigmoid(max_of(v)))
}

/// `σ(s_outlier − max_c s_c)` over `C+1` logits, the last being the outlier class.
pub fn score_cplus1(logits: &Tensor<f32>) -> Result<Tensor<f32>> {
    per_pixel(logits, "score_cplus1", |v| {
        let (inl, out) = v.split_at(v.len() - 1);
        sigmoid(out[0] - max_of(inl))
    })
}

/// `(p_outlier − max_c p_c + 1) / 2` from the `C+1`-way softmax.
pub fn score_cplus1_diff(logits: &Tensor<f32>) -> Result<Tensor<f32>> {
    per_pixel(logits, "score_cplus1_diff", |v| {
        let m = max_of(v);
        let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let (inl, out) = e.split_at(e.len() - 1);
        ((out[0] - max_of(inl)) / z + 1.0) / 2.0
    })
}

/// Softmax probability of the outlier channel (channel 1) of a two-way head.
pub fn score_twohead(outlier_logits: &Tensor<f32>) -> Result<Tensor<f32>> {
    if outlier_logits.shape().get(1) != Some(&2) {
        return Err(Error::invalid("score_twohead", format!("expected 2 channels, got {:?}", outlier_logits.shape())));
    }
    per_pixel(outlier_logits, "score_twohead", |v| sigmoid(v[1] - v[0]))
}

/// `1 − c` for a one-channel confidence map.
pub fn score_confidence(confidence: &Tensor<f32>) -> Result<Tensor<f32>> {
    if confidence.shape().get(1) != Some(&1) {
        return Err(Error::invalid("score_confidence", format!("expected 1 channel, got {:?}", confidence.shape())));
    }
    per_pixel(confidence, "score_confidence", |v| 1.0 - v[0])
}

/// Softmax over the class channel.
fn class_softmax(logits: &Tensor<f32>) -> Result<Tensor<f32>> {
    ops::softmax(logits, 1)
}

/// Temperature-scaled max-softmax after one signed-gradient input step that
/// raises the summed per-pixel max-softmax.
pub fn score_odin(model: &Model<f32>, image: &Tensor<f32>, temperature: f64, epsilon: f64) -> Result<Tensor<f32>> {
    if model.config().head_kind != HeadKind::Multiclass {
        return Err(Error::invalid("score_odin", "ODIN needs a multiclass model"));
    }
    if !(temperature > 0.0 && epsilon >= 0.0) {
        return Err(Error::invalid("score_odin", format!("need T > 0 and eps >= 0, got T={temperature}, eps={epsilon}")));
    }
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut tape = Tape::new();
    let x = tape.leaf(image.clone());
    let pass = model.forward(&mut tape, x, Mode::Eval, &mut rng)?;
    let scaled = tape.scale(pass.out.class_logits, (1.0 / temperature) as f32)?;
    let p = tape.softmax(scaled, 1)?;
    let top = tape.max_axis(p, 1)?;
    let objective = tape.sum(top)?;
    let grad = tape.grad(objective, &[x])?.remove(0);
    let eps = epsilon as f32;
    let mut perturbed = image.clone();
    for (v, &g) in perturbed.data_mut().iter_mut().zip(grad.data()) {
        if g != 0.0 {
            *v += eps * g.signum();
        }
    }
    let out = model.predict(&perturbed, Mode::Eval, &mut rng)?;
    max_softmax_score(&out.class_logits, temperature)
}

/// Mean class distribution over `samples` dropout passes and the mutual
/// information between prediction and weights, divided by `log C`.
pub fn score_mc_dropout<R: Rng + ?Sized>(
    model: &Model<f32>,
    image: &Tensor<f32>,
    samples: usize,
    rng: &mut R,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if samples == 0 {
        return Err(Error::invalid("score_mc_dropout", "need at least one sample"));
    }
    let mut probs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let out = model.predict(image, Mode::McDropout, rng)?;
        probs.push(class_softmax(&out.class_logits)?);
    }
    mutual_information(&probs)
}

/// Mean distribution and normalized mutual information of per-pass
/// `N×C×H×W` class distributions.
pub fn mutual_information(probs: &[Tensor<f32>]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = probs.first().ok_or_else(|| Error::invalid("mutual_information", "no passes"))?;
    let (n, c, h, w) = first.dims4("mutual_information")?;
    for p in probs {
        if p.shape() != first.shape() {
            return Err(Error::shape("mutual_information", p.shape(), first.shape()));
        }
    }
    let k = probs.len() as f64;
    // f32 inputs sum exactly in f64, so identical passes give a mean equal to each pass.
    let mean: Vec<f64> = (0..first.numel()).map(|i| probs.iter().map(|p| p.data()[i] as f64).sum::<f64>() / k).collect();
    let hw = h * w;
    let norm = (c as f64).ln();
    let mut mi = Vec::with_capacity(n * hw);
    for b in 0..n {
        for px in 0..hw {
            // Mutual information as the mean KL divergence of each pass from the mean.
            let mut acc = 0.0;
            for p in probs {
                for ch in 0..c {
                    let i = (b * c + ch) * hw + px;
                    let q = p.data()[i] as f64;
                    if q > 0.0 {
                        acc += q * (q.ln() - mean[i].ln());
                    }
                }
            }
            let v = if norm > 0.0 { acc / k / norm } else { 0.0 };
            mi.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Ok((Tensor::new(first.shape().to_vec(), mean.into_iter().map(|v| v as f32).collect())?, Tensor::new(vec![n, h, w], mi)?))
}

/// `N_C` where `outlier_prob > threshold`, else the most probable class
/// (lowest index on ties). `class_probs` is `C×H×W`, `outlier_prob` `H×W`.
pub fn merge(class_probs: &Tensor<f32>, outlier_prob: &Tensor<f32>, threshold: f64) -> Result<Vec<u8>> {
    if class_probs.rank() != 3 || outlier_prob.rank() != 2 || class_probs.shape()[1..] != *outlier_prob.shape() {
        return Err(Error::shape("merge", class_probs.shape(), outlier_prob.shape()));
    }
    let c = class_probs.shape()[0];
    let hw = outlier_prob.numel();
    Ok((0..hw)
        .map(|p| {
            if outlier_prob.data()[p] as f64 > threshold {
                return c as u8;
            }
            let mut best = 0;
            for k in 1..c {
                if class_probs.data()[k * hw + p] > class_probs.data()[best * hw + p] {
                    best = k;
                }
            }
            best as u8
        })
        .collect())
}

/// Bilinearly upsamples probability maps to `height × width` and merges at
/// full resolution. The factor must be a whole number.
pub fn upsample_predictions(
    class_probs: &Tensor<f32>,
    outlier_prob: &Tensor<f32>,
    height: usize,
    width: usize,
    threshold: f64,
) -> Result<PredictionMaps> {
    let (c, h, w) = match *class_probs.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::invalid("upsample_predictions", format!("expected CxHxW, got {:?}", class_probs.shape()))),
    };
    if outlier_prob.shape() != [h, w] {
        return Err(Error::shape("upsample_predictions", outlier_prob.shape(), &[h, w]));
    }
    if height % h != 0 || width % w != 0 || height / h != width / w {
        return Err(Error::invalid("upsample_predictions", format!("{h}x{w} does not scale to {height}x{width} by a whole factor")));
    }
    let f = height / h;
    let cp = ops::bilinear_upsample(&class_probs.clone().reshape(vec![1, c, h, w])?, f)?.reshape(vec![c, height, width])?;
    let op = ops::bilinear_upsample(&outlier_prob.clone().reshape(vec![1, 1, h, w])?, f)?.reshape(vec![height, width])?;
    let merged = merge(&cp, &op, threshold)?;
    Ok(PredictionMaps {
        class_probs: cp,
        outlier_prob: op,
        merged,
    })
}

/// Class distribution `N×C×H×W` implied by a head's class logits.
fn class_distribution(head: HeadKind, out: &ModelOutput<f32>) -> Result<Tensor<f32>> {
    let logits = &out.class_logits;
    match head {
        HeadKind::Multilabel => {
            // Independent sigmoids, renormalized to a distribution.
            let (n, c, h, w) = logits.dims4("class_distribution")?;
            let hw = h * w;
            let s = logits.map(|v| sigmoid(v as f64) as f32);
            let mut out = s.clone();
            for b in 0..n {
                for p in 0..hw {
                    let z: f32 = (0..c).map(|k| s.data()[(b * c + k) * hw + p]).sum();
                    for k in 0..c {
                        out.data_mut()[(b * c + k) * hw + p] /= z;
                    }
                }
            }
            Ok(out)
        }
        HeadKind::Cplus1 => {
            // Drop the outlier logit; the outlier score handles it.
            let (n, c1, h, w) = logits.dims4("class_distribution")?;
            let hw = h * w;
            let c = c1 - 1;
            let inl = Tensor::from_fn(vec![n, c, h, w], |i| logits.data()[(i / (c * hw)) * c1 * hw + i % (c * hw)]);
            class_softmax(&inl)
        }
        _ => class_softmax(logits),
    }
}

/// Scores a batch `N×3×H×W` and returns full-resolution maps per image.
pub fn predict<R: Rng + ?Sized>(
    model: &Model<f32>,
    images: &Tensor<f32>,
    mode: ScoreMode,
    opts: &ScoreOptions,
    rng: &mut R,
) -> Result<Vec<PredictionMaps>> {
    let head = model.config().head_kind;
    if !mode.supports(head) {
        return Err(Error::invalid("predict", format!("score `{mode}` does not apply to a {head} model")));
    }
    let (_, _, height, width) = images.dims4("predict")?;
    let out = model.predict(images, Mode::Eval, rng)?;
    let mut probs = class_distribution(head, &out)?;
    let outlier = match mode {
        ScoreMode::MaxSoftmax => score_max_softmax(&out.class_logits)?,
        ScoreMode::Odin => score_odin(model, images, opts.odin_temperature, opts.odin_epsilon)?,
        ScoreMode::MaxSigma => score_max_sigma(&out.class_logits)?,
        ScoreMode::Cplus1 => score_cplus1(&out.class_logits)?,
        ScoreMode::Cplus1Diff => score_cplus1_diff(&out.class_logits)?,
        ScoreMode::Twohead => score_twohead(out.outlier_logits.as_ref().expect("twohead output"))?,
        ScoreMode::Confidence => score_confidence(out.confidence.as_ref().expect("confidence output"))?,
        ScoreMode::McDropout => {
            let (mean, mi) = score_mc_dropout(model, images, opts.mc_samples, rng)?;
            probs = mean;
            mi
        }
    };
    (0..images.shape()[0])
        .map(|i| upsample_predictions(&probs.select0(i), &outlier.select0(i), height, width, opts.threshold))
        .collect()
}

/// Score map as 8-bit grayscale, `round(255·p)`.
pub fn write_score_png(path: &Path, map: &Tensor<f32>) -> Result<()> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let bytes: Vec<u8> = map.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    write_png(path, w, h, 1, &bytes)
}

/// Merged index map as 8-bit grayscale.
pub fn write_merged_png(path: &Path, maps: &PredictionMaps) -> Result<()> {
    write_png(path, maps.width(), maps.height(), 1, &maps.merged)
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSidecar {
    shape: Vec<usize>,
    dtype: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Little-endian `f32` payload plus a `<path>.json` sidecar with the shape.
pub fn write_raw(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let meta = RawSidecar {
        shape: t.shape().to_vec(),
        dtype: "f32le".into(),
    };
    fs::write(&side, serde_json::to_string(&meta).expect("plain struct")).map_err(|e| Error::io(&side, e))
}

/// Inverse of [`write_raw`].
pub fn read_raw(path: &Path) -> Result<Tensor<f32>> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: RawSidecar = serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
    if meta.dtype != "f32le" {
        return Err(Error::format(&side, format!("unsupported dtype `{}`", meta.dtype)));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * meta.shape.iter().product::<usize>() {
        return Err(Error::format(path, format!("{} bytes do not match shape {:?}", bytes.len(), meta.shape)));
    }
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Tensor::new(meta.shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn px(values: &[f32]) -> Tensor<f32> {
        Tensor::new(vec![1, values.len(), 1, 1], values.to_vec()).unwrap()
    }

    fn one(t: Tensor<f32>) -> f32 {
        t.data()[0]
    }

    #[test]
    fn closed_form_scores() {
        assert!((one(score_max_softmax(&px(&[0.0; 4])).unwrap()) - 0.75).abs() < 1e-6);
        assert!((one(score_max_softmax(&px(&[1.0, 0.0])).unwrap()) - 0.2689).abs() < 1e-4);
        assert!(one(score_max_softmax(&px(&[60.0, 0.0, 0.0])).unwrap()) < 1e-20);
        assert!((one(score_max_sigma(&px(&[0.0, 0.0])).unwrap()) - 0.5).abs() < 1e-7);
        assert!((one(score_max_sigma(&px(&[10.0, -3.0])).unwrap()) - 4.5398e-5).abs() < 1e-8);
        assert!((one(score_cplus1(&px(&[2.0, 1.0, 3.0])).unwrap()) - 0.7311).abs() < 1e-4);
        assert!((one(score_cplus1(&px(&[1.5, 1.5])).unwrap()) - 0.5).abs() < 1e-7);
        assert!((one(score_twohead(&px(&[0.0, 0.0])).unwrap()) - 0.5).abs() < 1e-7);
        assert!((one(score_twohead(&px(&[0.0, 2.0])).unwrap()) - 0.8808).abs() < 1e-4);
        assert_eq!(one(score_confidence(&px(&[1.0])).unwrap()), 0.0);
        assert_eq!(one(score_confidence(&px(&[0.25])).unwrap()), 0.75);
        assert!((one(score_cplus1_diff(&px(&[0.0, 0.0])).unwrap()) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn merge_boundary_and_ties() {
        let cp = Tensor::new(vec![3, 1, 3], vec![0.2, 0.4, 0.0, 0.2, 0.4, 0.0, 0.6, 0.2, 1.0]).unwrap();
        let op = Tensor::new(vec![1, 3], vec![0.6, 0.5, 0.0]).unwrap();
        assert_eq!(merge(&cp, &op, 0.5).unwrap(), vec![3, 0, 2]);
    }

    #[test]
    fn upsampling_keeps_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = Tensor::from_fn(vec![1, 3, 4, 4], |_| rng.gen_range(-3.0..3.0));
        let p = class_softmax(&logits).unwrap().select0(0);
        let o = Tensor::from_fn(vec![4, 4], |_| rng.gen_range(0.0..1.0));
        let m = upsample_predictions(&p, &o, 16, 16, 0.5).unwrap();
        for px in 0..256 {
            let s: f32 = (0..3).map(|k| m.class_probs.data()[k * 256 + px]).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        let id = upsample_predictions(&p, &o, 4, 4, 0.5).unwrap();
        assert_eq!(id.class_probs, p);
        assert!(upsample_predictions(&p, &o, 10, 10, 0.5).is_err());
    }

    #[test]
    fn mutual_information_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = class_softmax(&Tensor::from_fn(vec![2, 4, 3, 3], |_| rng.gen_range(-4.0..4.0))).unwrap();
        let (mean, mi) = mutual_information(&[p.clone(), p.clone(), p.clone()]).unwrap();
        assert!(mi.data().iter().all(|&v| v == 0.0));
        assert_eq!(mean, p);
        let passes: Vec<_> = (0..5)
            .map(|_| class_softmax(&Tensor::from_fn(vec![2, 4, 3, 3], |_| rng.gen_range(-4.0..4.0))).unwrap())
            .collect();
        let (_, mi) = mutual_information(&passes).unwrap();
        assert!(mi.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(mi.data().iter().any(|&v| v > 0.01));
    }

    fn small(kind: HeadKind, dropout: f64) -> Model<f32> {
        let cfg = ModelConfig {
            backbone_widths: [4, 4, 4, 4],
            dropout_p: dropout,
            ..ModelConfig::new(3, kind)
        };
        Model::build(cfg, 5).unwrap()
    }

    #[test]
    fn odin_without_perturbation_is_max_softmax() {
        let m = small(HeadKind::Multiclass, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::from_fn(vec![2, 3, 32, 32], |_| rng.gen_range(-2.0..2.0));
        let odin = score_odin(&m, &img, 1.0, 0.0).unwrap();
        let base = score_max_softmax(&m.predict(&img, Mode::Eval, &mut rng).unwrap().class_logits).unwrap();
        assert_eq!(odin, base);
        let hot = score_odin(&m, &img, 10.0, 0.01).unwrap();
        assert!(hot.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn mc_dropout_without_dropout_has_no_information() {
        let m = small(HeadKind::Multiclass, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Tensor::from_fn(vec![1, 3, 32, 32], |_| rng.gen_range(-2.0..2.0));
        let (mean, mi) = score_mc_dropout(&m, &img, 4, &mut rng).unwrap();
        assert!(mi.data().iter().all(|&v| v == 0.0));
        let single = class_softmax(&m.predict(&img, Mode::Eval, &mut rng).unwrap().class_logits).unwrap();
        assert_eq!(mean, single);
    }

    #[test]
    fn predict_checks_head_and_shapes() {
        let m = small(HeadKind::Twohead, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Tensor::from_fn(vec![2, 3, 32, 32], |_| rng.gen_range(-2.0..2.0));
        let maps = predict(&m, &img, ScoreMode::Twohead, &ScoreOptions::default(), &mut rng).unwrap();
        assert_eq!(maps.len(), 2);
        assert_eq!(maps[0].class_probs.shape(), &[3, 32, 32]);
        assert_eq!(maps[0].merged.len(), 1024);
        assert!(predict(&m, &img, ScoreMode::MaxSigma, &ScoreOptions::default(), &mut rng).is_err());
    }

    #[test]
    fn raw_planes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_fn(vec![2, 3], |i| i as f32 * 0.5 - 1.0);
        let p = dir.path().join("scores.f32");
        write_raw(&p, &t).unwrap();
        assert_eq!(read_raw(&p).unwrap(), t);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in ScoreMode::ALL {
            assert_eq!(m.as_str().parse::<ScoreMode>().unwrap(), m);
        }
        for h in HeadKind::ALL {
            assert!(ScoreMode::default_for(h).supports(h));
        }
    }
}
