//! Training losses and their per-head compositions.
//!
//! Every loss is a mean over the elements that contribute to it, so a batch
//! without contributing pixels yields 0 with zero gradient. Logits coarser
//! than the label maps are bilinearly upsampled by an integer factor first.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{HeadKind, OutputVars, FEATURE_STRIDES};

pub const Z_OUTLIER: u8 = 0;
pub const Z_INLIER: u8 = 1;
pub const Z_IGNORE: u8 = 2;
/// Semantic label of ignored pixels.
pub const IGNORE_LABEL: u8 = 255;

/// Semantic labels `y` and inlier flags `z` of one image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelPair {
    pub height: usize,
    pub width: usize,
    pub y: Vec<u8>,
    pub z: Vec<u8>,
}

impl LabelPair {
    pub fn new(height: usize, width: usize, y: Vec<u8>, z: Vec<u8>) -> Result<Self> {
        if y.len() != height * width || z.len() != height * width {
            return Err(Error::invalid("labels", format!("{height}x{width} maps need {} entries", height * width)));
        }
        if z.iter().any(|&v| v > Z_IGNORE) {
            return Err(Error::invalid("labels", "z values must be 0, 1 or 2"));
        }
        Ok(Self { height, width, y, z })
    }

    /// All pixels inlier class `class`.
    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        Self {
            height,
            width,
            y: vec![class; height * width],
            z: vec![Z_INLIER; height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Marks pixel `i` as an outlier (`y = num_classes`, `z = 0`).
    pub fn set_outlier(&mut self, i: usize, num_classes: usize) {
        self.y[i] = num_classes as u8;
        self.z[i] = Z_OUTLIER;
    }

    pub fn set_ignore(&mut self, i: usize) {
        self.y[i] = IGNORE_LABEL;
        self.z[i] = Z_IGNORE;
    }

    /// Whether pixel `i` is an inlier of a known class.
    pub fn is_valid_inlier(&self, i: usize, num_classes: usize) -> bool {
        self.z[i] == Z_INLIER && (self.y[i] as usize) < num_classes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_mc: f64,
    pub lambda_ml: f64,
    pub lambda_aux: f64,
    pub lambda_th: f64,
    pub lambda_kl: f64,
    /// Current confidence-loss weight; adapted during training.
    pub lambda_c: f64,
    /// Per-class weights of the multi-class loss (N_C or N_C+1 entries).
    pub class_weights: Vec<f64>,
    /// Target value of the confidence loss.
    pub beta: f64,
    /// Downsampling factors of the auxiliary outputs, finest first.
    pub aux_resolutions: Vec<usize>,
}

/// Weight of the outlier class in C+1 training.
pub const CPLUS1_OUTLIER_WEIGHT: f64 = 0.05;
pub const LAMBDA_C_INITIAL: f64 = 0.1;
pub const LAMBDA_C_RATE: f64 = 1.01;

impl LossConfig {
    pub fn new(num_classes: usize, head_kind: HeadKind) -> Self {
        let mut class_weights = vec![1.0; num_classes];
        if head_kind == HeadKind::Cplus1 {
            class_weights.push(CPLUS1_OUTLIER_WEIGHT);
        }
        Self {
            lambda_mc: 0.6,
            lambda_ml: 0.6,
            lambda_aux: 0.4,
            lambda_th: 0.2,
            lambda_kl: 0.2,
            lambda_c: LAMBDA_C_INITIAL,
            class_weights,
            beta: 0.15,
            aux_resolutions: FEATURE_STRIDES.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_mc, self.lambda_ml, self.lambda_aux, self.lambda_th, self.lambda_kl, self.lambda_c, self.beta];
        if all.iter().chain(&self.class_weights).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("loss config", "weights must be finite and non-negative"));
        }
        if self.aux_resolutions.contains(&0) {
            return Err(Error::invalid("loss config", "aux resolutions must be positive"));
        }
        Ok(())
    }

    /// Moves `lambda_c` so the confidence loss drifts toward `beta`.
    pub fn adapt_lambda_c(&mut self, loss_c: f64) {
        if loss_c > self.beta {
            self.lambda_c *= LAMBDA_C_RATE;
        } else {
            self.lambda_c /= LAMBDA_C_RATE;
        }
    }
}

fn check_batch(op: &'static str, labels: &[LabelPair]) -> Result<(usize, usize)> {
    let first = labels.first().ok_or_else(|| Error::invalid(op, "empty label batch"))?;
    if labels.iter().any(|l| l.height != first.height || l.width != first.width) {
        return Err(Error::invalid(op, "label maps differ in size"));
    }
    Ok((first.height, first.width))
}

/// Upsamples `logits` to the label resolution; the factor must be integral.
fn to_label_resolution<T: Scalar>(tape: &mut Tape<T>, op: &'static str, logits: Var, labels: &[LabelPair]) -> Result<Var> {
    let (h, w) = check_batch(op, labels)?;
    let (n, _, lh, lw) = tape.value(logits).dims4(op)?;
    if n != labels.len() {
        return Err(Error::invalid(op, format!("{n} logit maps but {} label maps", labels.len())));
    }
    if h % lh != 0 || w % lw != 0 || h / lh != w / lw {
        return Err(Error::invalid(op, format!("labels {h}x{w} are not an integer multiple of logits {lh}x{lw}")));
    }
    match h / lh {
        1 => Ok(logits),
        f => tape.bilinear_upsample(logits, f),
    }
}

/// `Σ x ⊙ weights` with a constant weight tensor.
fn weighted_sum<T: Scalar>(tape: &mut Tape<T>, x: Var, weights: Vec<T>) -> Result<Var> {
    let w = Tensor::new(tape.shape(x).to_vec(), weights)?;
    let w = tape.constant(w);
    let p = tape.mul(x, w)?;
    tape.sum(p)
}

fn zero<T: Scalar>(tape: &mut Tape<T>) -> Var {
    tape.constant(Tensor::scalar(T::zero()))
}

/// Multi-class negative log-likelihood.
///
/// With `outlier_class = Some(k)` outlier pixels (z = 0) are trained toward
/// class `k`; otherwise only valid inlier pixels contribute.
pub fn loss_mc<T: Scalar>(
    tape: &mut Tape<T>,
    class_logits: Var,
    labels: &[LabelPair],
    class_weights: &[f64],
    outlier_class: Option<usize>,
) -> Result<Var> {
    let logits = to_label_resolution(tape, "loss_mc", class_logits, labels)?;
    let (_, c, h, w) = tape.value(logits).dims4("loss_mc")?;
    if class_weights.len() != c {
        return Err(Error::invalid("loss_mc", format!("{} class weights for {c} logit channels", class_weights.len())));
    }
    let targets = mc_targets(labels, c, outlier_class);
    let count = targets.iter().flatten().count();
    let lp = tape.log_softmax(logits, 1)?;
    let mut wts = vec![T::zero(); labels.len() * c * h * w];
    let norm = 1.0 / count.max(1) as f64;
    let hw = h * w;
    for (i, t) in targets.iter().enumerate() {
        if let Some(k) = *t {
            let (n, p) = (i / hw, i % hw);
            wts[(n * c + k) * hw + p] = T::lit(-class_weights[k] * norm);
        }
    }
    weighted_sum(tape, lp, wts)
}

/// Per-pixel target class over the whole batch, `None` where excluded.
fn mc_targets(labels: &[LabelPair], channels: usize, outlier_class: Option<usize>) -> Vec<Option<usize>> {
    let inlier_classes = outlier_class.unwrap_or(channels);
    labels
        .iter()
        .flat_map(|l| l.y.iter().zip(&l.z))
        .map(|(&y, &z)| match (z, outlier_class) {
            (Z_INLIER, _) if (y as usize) < inlier_classes => Some(y as usize),
            (Z_OUTLIER, Some(k)) => Some(k),
            _ => None,
        })
        .collect()
}

/// Per-class binary cross-entropy; outlier pixels are negatives for every class.
pub fn loss_ml<T: Scalar>(tape: &mut Tape<T>, class_logits: Var, labels: &[LabelPair]) -> Result<Var> {
    let logits = to_label_resolution(tape, "loss_ml", class_logits, labels)?;
    let (_, c, h, w) = tape.value(logits).dims4("loss_ml")?;
    let hw = h * w;
    // −[pos·log σ(s) + neg·log(1 − σ(s))] with log(1 − σ(s)) = log σ(s) − s
    let mut on_log = vec![T::zero(); labels.len() * c * hw];
    let mut on_s = vec![T::zero(); labels.len() * c * hw];
    let mut count = 0usize;
    for (n, l) in labels.iter().enumerate() {
        for p in 0..hw {
            let y = l.y[p] as usize;
            let contributes = match l.z[p] {
                Z_INLIER => y < c,
                Z_OUTLIER => true,
                _ => false,
            };
            if !contributes {
                continue;
            }
            count += 1;
            for k in 0..c {
                let i = (n * c + k) * hw + p;
                on_log[i] = T::one();
                if !(l.z[p] == Z_INLIER && y == k) {
                    on_s[i] = T::one();
                }
            }
        }
    }
    let norm = T::lit(1.0 / count.max(1) as f64);
    let on_log = on_log.into_iter().map(|v| -v * norm).collect();
    let on_s = on_s.into_iter().map(|v| v * norm).collect();
    let ls = tape.log_sigmoid(logits)?;
    let a = weighted_sum(tape, ls, on_log)?;
    let b = weighted_sum(tape, logits, on_s)?;
    tape.add(a, b)
}

/// Window-wise class distributions of `labels` at downsampling factor `r`.
///
/// Returns targets laid out `[N_C, H/r, W/r]` and a validity flag per window;
/// a window is valid when more than half of its pixels are valid inliers.
pub fn soft_targets(labels: &LabelPair, r: usize, num_classes: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    if r == 0 || labels.height % r != 0 || labels.width % r != 0 {
        return Err(Error::invalid(
            "soft_targets",
            format!("{}x{} labels are not divisible by {r}", labels.height, labels.width),
        ));
    }
    let (gh, gw) = (labels.height / r, labels.width / r);
    let mut targets = vec![0.0; num_classes * gh * gw];
    let mut valid = vec![false; gh * gw];
    let mut hist = vec![0usize; num_classes];
    for gy in 0..gh {
        for gx in 0..gw {
            hist.fill(0);
            for y in gy * r..(gy + 1) * r {
                for x in gx * r..(gx + 1) * r {
                    let i = y * labels.width + x;
                    if labels.is_valid_inlier(i, num_classes) {
                        hist[labels.y[i] as usize] += 1;
                    }
                }
            }
            let total: usize = hist.iter().sum();
            let g = gy * gw + gx;
            if 2 * total > r * r {
                valid[g] = true;
                for (k, &h) in hist.iter().enumerate() {
                    targets[k * gh * gw + g] = h as f64 / total as f64;
                }
            }
        }
    }
    Ok((targets, valid))
}

/// Cross-entropy against window-wise soft targets, averaged over resolutions.
pub fn loss_aux<T: Scalar>(
    tape: &mut Tape<T>,
    aux_logits: &[Var],
    resolutions: &[usize],
    labels: &[LabelPair],
    num_classes: usize,
) -> Result<Var> {
    if aux_logits.len() != resolutions.len() || resolutions.is_empty() {
        return Err(Error::invalid(
            "loss_aux",
            format!("{} auxiliary outputs for {} resolutions", aux_logits.len(), resolutions.len()),
        ));
    }
    let (h, w) = check_batch("loss_aux", labels)?;
    let per_res = 1.0 / resolutions.len() as f64;
    let mut total: Option<Var> = None;
    for (&logits, &r) in aux_logits.iter().zip(resolutions) {
        let (n, c, gh, gw) = tape.value(logits).dims4("loss_aux")?;
        if n != labels.len() || c != num_classes || gh * r != h || gw * r != w {
            return Err(Error::invalid(
                "loss_aux",
                format!("aux output {:?} does not match {h}x{w} labels at resolution {r}", tape.shape(logits)),
            ));
        }
        let mut wts = Vec::with_capacity(n * c * gh * gw);
        let mut count = 0usize;
        for l in labels {
            let (t, v) = soft_targets(l, r, num_classes)?;
            count += v.iter().filter(|&&b| b).count();
            wts.extend(t.iter().enumerate().map(|(i, &t)| if v[i % (gh * gw)] { t } else { 0.0 }));
        }
        let norm = per_res / count.max(1) as f64;
        let wts = wts.into_iter().map(|t| T::lit(-t * norm)).collect();
        let lp = tape.log_softmax(logits, 1)?;
        let term = weighted_sum(tape, lp, wts)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one resolution"))
}

/// Two-way inlier/outlier cross-entropy of the outlier head.
/// Channel 0 is the inlier logit, channel 1 the outlier logit.
pub fn loss_th<T: Scalar>(tape: &mut Tape<T>, outlier_logits: Var, labels: &[LabelPair]) -> Result<Var> {
    let logits = to_label_resolution(tape, "loss_th", outlier_logits, labels)?;
    let (_, c, h, w) = tape.value(logits).dims4("loss_th")?;
    if c != 2 {
        return Err(Error::invalid("loss_th", format!("expected 2 outlier channels, got {c}")));
    }
    let hw = h * w;
    let count = labels.iter().flat_map(|l| &l.z).filter(|&&z| z <= Z_INLIER).count();
    let norm = T::lit(-1.0 / count.max(1) as f64);
    let mut wts = vec![T::zero(); labels.len() * 2 * hw];
    for (n, l) in labels.iter().enumerate() {
        for (p, &z) in l.z.iter().enumerate() {
            match z {
                Z_INLIER => wts[n * 2 * hw + p] = norm,
                Z_OUTLIER => wts[(n * 2 + 1) * hw + p] = norm,
                _ => {}
            }
        }
    }
    let lp = tape.log_softmax(logits, 1)?;
    weighted_sum(tape, lp, wts)
}

/// `KL(U ‖ P)` between the uniform distribution and the prediction on outlier pixels.
pub fn loss_kl<T: Scalar>(tape: &mut Tape<T>, class_logits: Var, labels: &[LabelPair]) -> Result<Var> {
    let logits = to_label_resolution(tape, "loss_kl", class_logits, labels)?;
    let (_, c, h, w) = tape.value(logits).dims4("loss_kl")?;
    let hw = h * w;
    let count = labels.iter().flat_map(|l| &l.z).filter(|&&z| z == Z_OUTLIER).count();
    if count == 0 {
        let lp = tape.log_softmax(logits, 1)?;
        return weighted_sum(tape, lp, vec![T::zero(); labels.len() * c * hw]);
    }
    // −log C − (1/C) Σ_c log p_c, averaged over outlier pixels
    let wv = T::lit(-1.0 / (c as f64 * count as f64));
    let mut wts = vec![T::zero(); labels.len() * c * hw];
    for (n, l) in labels.iter().enumerate() {
        for (p, &z) in l.z.iter().enumerate() {
            if z == Z_OUTLIER {
                for k in 0..c {
                    wts[(n * c + k) * hw + p] = wv;
                }
            }
        }
    }
    let lp = tape.log_softmax(logits, 1)?;
    let s = weighted_sum(tape, lp, wts)?;
    tape.add_scalar(s, T::lit(-(c as f64).ln()))
}

/// `P' = c·P + (1 − c)·Y` per pixel; `c` has one channel, `P` and `Y` have C.
pub fn interpolate_confidence<T: Scalar>(tape: &mut Tape<T>, probs: Var, confidence: Var, onehot: Var) -> Result<Var> {
    let c = tape.shape(probs)[1];
    let ce = tape.expand_axis(confidence, 1, c)?;
    let a = tape.mul(ce, probs)?;
    let neg = tape.scale(ce, -T::one())?;
    let one_minus = tape.add_scalar(neg, T::one())?;
    let b = tape.mul(one_minus, onehot)?;
    tape.add(a, b)
}

/// Multi-class NLL of the confidence-interpolated prediction.
pub fn loss_mc_interpolated<T: Scalar>(
    tape: &mut Tape<T>,
    class_logits: Var,
    confidence_logits: Var,
    labels: &[LabelPair],
    class_weights: &[f64],
) -> Result<Var> {
    let logits = to_label_resolution(tape, "loss_mc", class_logits, labels)?;
    let conf = to_label_resolution(tape, "loss_mc", confidence_logits, labels)?;
    let (_, c, h, w) = tape.value(logits).dims4("loss_mc")?;
    if class_weights.len() != c {
        return Err(Error::invalid("loss_mc", format!("{} class weights for {c} logit channels", class_weights.len())));
    }
    let hw = h * w;
    let targets = mc_targets(labels, c, None);
    let count = targets.iter().flatten().count();
    let mut onehot = vec![T::zero(); labels.len() * c * hw];
    // Excluded pixels get P'·Y + 1 = 1 so their log is 0 rather than −∞.
    let mut pad = vec![T::one(); labels.len() * hw];
    let mut wts = vec![T::zero(); labels.len() * hw];
    let norm = 1.0 / count.max(1) as f64;
    for (i, t) in targets.iter().enumerate() {
        if let Some(k) = *t {
            let (n, p) = (i / hw, i % hw);
            onehot[(n * c + k) * hw + p] = T::one();
            pad[i] = T::zero();
            wts[i] = T::lit(-class_weights[k] * norm);
        }
    }
    let shape = tape.shape(logits).to_vec();
    let probs = tape.softmax(logits, 1)?;
    let cval = tape.sigmoid(conf)?;
    let y = tape.constant(Tensor::new(shape, onehot)?);
    let mixed = interpolate_confidence(tape, probs, cval, y)?;
    let picked = tape.mul(mixed, y)?;
    let py = tape.sum_axis(picked, 1)?;
    let pad = tape.constant(Tensor::new(vec![labels.len(), 1, h, w], pad)?);
    let py = tape.add(py, pad)?;
    let lp = tape.log(py)?;
    weighted_sum(tape, lp, wts)
}

/// `−log c` averaged over valid inlier pixels, with `c` given as probabilities.
pub fn loss_conf<T: Scalar>(tape: &mut Tape<T>, confidence: Var, labels: &[LabelPair], num_classes: usize) -> Result<Var> {
    let c = to_label_resolution(tape, "loss_conf", confidence, labels)?;
    let lc = tape.log(c)?;
    conf_nll(tape, lc, labels, num_classes)
}

/// [`loss_conf`] computed from pre-sigmoid confidence logits.
pub fn loss_conf_logits<T: Scalar>(tape: &mut Tape<T>, confidence_logits: Var, labels: &[LabelPair], num_classes: usize) -> Result<Var> {
    let s = to_label_resolution(tape, "loss_conf", confidence_logits, labels)?;
    let lc = tape.log_sigmoid(s)?;
    conf_nll(tape, lc, labels, num_classes)
}

fn conf_nll<T: Scalar>(tape: &mut Tape<T>, log_c: Var, labels: &[LabelPair], num_classes: usize) -> Result<Var> {
    if tape.shape(log_c)[1] != 1 {
        return Err(Error::invalid("loss_conf", "confidence must have one channel"));
    }
    let mask: Vec<bool> = labels
        .iter()
        .flat_map(|l| l.y.iter().map(move |&y| (y as usize) < num_classes))
        .collect();
    let count = mask.iter().filter(|&&m| m).count();
    let norm = T::lit(-1.0 / count.max(1) as f64);
    let wts = mask.into_iter().map(|m| if m { norm } else { T::zero() }).collect();
    weighted_sum(tape, log_c, wts)
}

/// Total loss and the unweighted value of each contributing term.
pub struct LossBreakdown {
    pub total: Var,
    pub components: Vec<(&'static str, f64)>,
}

/// Combines the losses appropriate for `head_kind`.
///
/// `interpolate` enables confidence interpolation of the multi-class term
/// (confidence head only). Zero-weight terms are skipped entirely.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    head_kind: HeadKind,
    out: &OutputVars,
    labels: &[LabelPair],
    cfg: &LossConfig,
    num_classes: usize,
    interpolate: bool,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let channels = tape.value(out.class_logits).dims4("total_loss")?.1;
    let expected = if head_kind == HeadKind::Cplus1 { num_classes + 1 } else { num_classes };
    if channels != expected {
        return Err(Error::invalid("total_loss", format!("{head_kind} expects {expected} class channels, got {channels}")));
    }
    let needs_outlier = head_kind == HeadKind::Twohead;
    let needs_conf = head_kind == HeadKind::Confidence;
    if out.outlier_logits.is_some() != needs_outlier || out.confidence_logits.is_some() != needs_conf {
        return Err(Error::invalid("total_loss", format!("model outputs do not match head kind {head_kind}")));
    }

    let mut terms: Vec<(&'static str, f64, Var)> = Vec::new();
    if head_kind == HeadKind::Multilabel {
        if cfg.lambda_ml > 0.0 {
            terms.push(("ml", cfg.lambda_ml, loss_ml(tape, out.class_logits, labels)?));
        }
    } else if cfg.lambda_mc > 0.0 {
        let mc = match (head_kind, out.confidence_logits) {
            (HeadKind::Cplus1, _) => loss_mc(tape, out.class_logits, labels, &cfg.class_weights, Some(num_classes))?,
            (HeadKind::Confidence, Some(conf)) if interpolate => {
                loss_mc_interpolated(tape, out.class_logits, conf, labels, &cfg.class_weights)?
            }
            _ => loss_mc(tape, out.class_logits, labels, &cfg.class_weights, None)?,
        };
        terms.push(("mc", cfg.lambda_mc, mc));
    }
    if cfg.lambda_aux > 0.0 {
        let aux = loss_aux(tape, &out.aux_logits, &cfg.aux_resolutions, labels, num_classes)?;
        terms.push(("aux", cfg.lambda_aux, aux));
    }
    if head_kind == HeadKind::Multiclass && cfg.lambda_kl > 0.0 {
        terms.push(("kl", cfg.lambda_kl, loss_kl(tape, out.class_logits, labels)?));
    }
    if let (Some(o), true) = (out.outlier_logits, cfg.lambda_th > 0.0) {
        terms.push(("th", cfg.lambda_th, loss_th(tape, o, labels)?));
    }
    if let (Some(c), true) = (out.confidence_logits, cfg.lambda_c > 0.0) {
        terms.push(("c", cfg.lambda_c, loss_conf_logits(tape, c, labels, num_classes)?));
    }

    let mut total: Option<Var> = None;
    let mut components = Vec::with_capacity(terms.len());
    for (name, lambda, v) in terms {
        components.push((name, tape.value(v).item().as_f64()));
        let scaled = tape.scale(v, T::lit(lambda))?;
        total = Some(match total {
            Some(acc) => tape.add(acc, scaled)?,
            None => scaled,
        });
    }
    let total = match total {
        Some(t) => t,
        None => zero(tape),
    };
    Ok(LossBreakdown { total, components })
}
