//! Pixel-level average precision, assay statistics, mIoU and hazard drops.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LabelPair;

/// Average precision of `scores` against binary `labels` (true = positive).
///
/// Items are ranked by descending score. Tied scores form one block that is
/// evaluated at its end, so ties never help: every positive in a block gets
/// the precision of the whole block.
pub fn average_precision(scores: &[f32], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("average_precision", &[scores.len()], &[labels.len()]));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::invalid("average_precision", "no positive labels"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("average_precision", "NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ap = 0.0;
    let (mut seen, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut block_tp = 0;
        while i < order.len() && scores[order[i]] == s {
            block_tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        tp += block_tp;
        let precision = tp as f64 / seen as f64;
        for _ in 0..block_tp {
            ap += precision;
        }
    }
    Ok(ap / positives as f64)
}

/// Mean and population standard deviation of AP over `num_assays` assays.
///
/// Every pixel of `inliers` is a negative. Each assay draws negative images
/// in random order until their pixel count first reaches the inlier pixel
/// count; their pixels are the positives. Assay `k` uses its own stream of
/// `seed`, so results do not depend on evaluation order.
pub fn ap_assays(inliers: &[Vec<f32>], negatives: &[Vec<f32>], num_assays: usize, seed: u64) -> Result<(f64, f64)> {
    if num_assays == 0 {
        return Err(Error::invalid("ap_assays", "need at least one assay"));
    }
    let inlier_px: usize = inliers.iter().map(Vec::len).sum();
    if inlier_px == 0 || negatives.iter().all(Vec::is_empty) {
        return Err(Error::invalid("ap_assays", "empty inlier or negative pool"));
    }
    let mut aps = Vec::with_capacity(num_assays);
    for k in 0..num_assays {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut order: Vec<usize> = (0..negatives.len()).collect();
        order.shuffle(&mut rng);
        let mut scores: Vec<f32> = inliers.iter().flatten().copied().collect();
        let mut labels = vec![false; scores.len()];
        let mut taken = 0;
        for i in order {
            if taken >= inlier_px {
                break;
            }
            scores.extend_from_slice(&negatives[i]);
            taken += negatives[i].len();
        }
        labels.resize(scores.len(), true);
        aps.push(average_precision(&scores, &labels)?);
    }
    let mean = aps.iter().sum::<f64>() / aps.len() as f64;
    let var = aps.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / aps.len() as f64;
    Ok((mean, var.sqrt()))
}

/// Per-class IoU (`None` for classes absent from the ground truth) and their
/// mean. Only inlier pixels of known classes count; a void prediction is a
/// miss for the true class.
pub fn miou(pred: &[Vec<u8>], gt: &[LabelPair], num_classes: usize) -> Result<(Vec<Option<f64>>, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::shape("miou", &[pred.len()], &[gt.len()]));
    }
    let mut tp = vec![0u64; num_classes];
    let mut fp = vec![0u64; num_classes];
    let mut fn_ = vec![0u64; num_classes];
    let mut valid = 0u64;
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(Error::shape("miou", &[p.len()], &[g.len()]));
        }
        for (i, &q) in p.iter().enumerate() {
            if !g.is_valid_inlier(i, num_classes) {
                continue;
            }
            valid += 1;
            let t = g.y[i] as usize;
            let q = q as usize;
            if q == t {
                tp[t] += 1;
            } else {
                fn_[t] += 1;
                if q < num_classes {
                    fp[q] += 1;
                }
            }
        }
    }
    if valid == 0 {
        return Err(Error::invalid("miou", "no valid pixels"));
    }
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|c| (tp[c] + fn_[c] > 0).then(|| tp[c] as f64 / (tp[c] + fp[c] + fn_[c]) as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok((per_class, present.iter().sum::<f64>() / present.len() as f64))
}

/// Relative mIoU change per hazard, in percent.
pub fn hazard_drop(miou_by_subset: &BTreeMap<String, f64>, miou_classic: f64) -> Result<BTreeMap<String, f64>> {
    if miou_classic <= 0.0 || !miou_classic.is_finite() {
        return Err(Error::invalid("hazard_drop", format!("classic mIoU {miou_classic} must be positive")));
    }
    Ok(miou_by_subset.iter().map(|(k, &v)| (k.clone(), 100.0 * (v - miou_classic) / miou_classic)).collect())
}

/// Evaluation summary of one model under one score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub head: String,
    pub score: String,
    pub assays: usize,
    /// Whole negative images against inlier images.
    pub ap_mean: f64,
    pub ap_std: f64,
    /// Negatives pasted into inlier images.
    pub pasted_ap: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    /// mIoU over the inlier pixels of images with pasted negatives.
    pub negative_miou: f64,
    pub hazard_drops: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Plain-text table, one row per report.
pub fn render_table(rows: &[(&str, &EvalReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<name_w$}  {:>18}  {:>9}  {:>7}\n", "model", "AP whole-image", "AP pasted", "mIoU");
    for (name, r) in rows {
        let whole = format!("{:.2} ± {:.2}", 100.0 * r.ap_mean, 100.0 * r.ap_std);
        out += &format!("{name:<name_w$}  {whole:>18}  {:>9.2}  {:>7.2}\n", 100.0 * r.pasted_ap, 100.0 * r.miou);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Each positive's precision at the last rank it shares with equal
    /// scores, averaged over positives. Terms are added from the highest
    /// score down so the floating-point sum is reproducible.
    fn brute_force_ap(scores: &[f32], labels: &[bool]) -> f64 {
        let mut positives: Vec<usize> = (0..scores.len()).filter(|&i| labels[i]).collect();
        positives.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let mut sum = 0.0;
        for &i in &positives {
            let rank = scores.iter().filter(|&&s| s >= scores[i]).count();
            let hits = (0..scores.len()).filter(|&j| labels[j] && scores[j] >= scores[i]).count();
            sum += hits as f64 / rank as f64;
        }
        sum / positives.len() as f64
    }

    #[test]
    fn hand_value() {
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap();
        assert!((ap - 0.8333).abs() < 1e-4);
        assert!((ap - (0.5 + 2.0 / 3.0 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn perfect_ranking_and_errors() {
        assert_eq!(average_precision(&[0.9, 0.7, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert!(average_precision(&[0.3], &[false]).is_err());
        assert!(average_precision(&[0.3], &[true, false]).is_err());
    }

    #[test]
    fn ties_are_pessimistic() {
        // One positive tied with one negative: precision 1/2.
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
    }

    #[test]
    fn matches_brute_force_on_random_lists() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=64);
            let levels = rng.gen_range(1..=8);
            let scores: Vec<f32> = (0..n).map(|_| rng.gen_range(0..levels) as f32 / levels as f32).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            labels[rng.gen_range(0..n)] = true;
            assert_eq!(average_precision(&scores, &labels).unwrap(), brute_force_ap(&scores, &labels));
        }
    }

    #[test]
    fn single_assay_over_all_negatives_is_plain_ap() {
        let inl = vec![vec![0.1, 0.4], vec![0.35]];
        let neg = vec![vec![0.8, 0.2, 0.5]];
        let (m, s) = ap_assays(&inl, &neg, 1, 3).unwrap();
        let plain = average_precision(&[0.1, 0.4, 0.35, 0.8, 0.2, 0.5], &[false, false, false, true, true, true]).unwrap();
        assert_eq!((m, s), (plain, 0.0));
    }

    #[test]
    fn random_scores_give_chance_ap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pool = |n: usize| -> Vec<Vec<f32>> { (0..n).map(|_| (0..100).map(|_| rng.gen()).collect()).collect() };
        let inl = pool(20);
        let neg = pool(60);
        let (m, s) = ap_assays(&inl, &neg, 50, 0).unwrap();
        assert!((0.45..=0.55).contains(&m), "{m}");
        assert!(s < 0.05);
        assert_eq!(ap_assays(&inl, &neg, 50, 0).unwrap(), (m, s));
    }

    #[test]
    fn constant_negatives_have_no_assay_spread() {
        let inl = vec![vec![0.1, 0.2, 0.3]; 3];
        let neg = vec![vec![0.9; 2]; 10];
        let (m, s) = ap_assays(&inl, &neg, 20, 0).unwrap();
        assert_eq!((m, s), (1.0, 0.0));
    }

    #[test]
    fn miou_by_hand() {
        let gt = LabelPair::new(1, 4, vec![0, 0, 1, 1], vec![1; 4]).unwrap();
        let (per, m) = miou(&[vec![0, 1, 1, 1]], &[gt.clone()], 2).unwrap();
        assert_eq!(per, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((m - 0.5833).abs() < 1e-4);
        assert_eq!(miou(&[gt.y.clone()], &[gt.clone()], 2).unwrap().1, 1.0);
        // Void counts against the true class only.
        let (per, _) = miou(&[vec![2, 0, 1, 1]], &[gt], 2).unwrap();
        assert_eq!(per, vec![Some(0.5), Some(1.0)]);
    }

    #[test]
    fn miou_ignores_gated_pixels_and_absent_classes() {
        let mut gt = LabelPair::new(1, 4, vec![0, 0, 0, 2], vec![1; 4]).unwrap();
        gt.set_ignore(1);
        gt.set_outlier(2, 3);
        let a = miou(&[vec![0, 1, 2, 2]], &[gt.clone()], 3).unwrap();
        let b = miou(&[vec![0, 2, 1, 2]], &[gt.clone()], 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0[1], None);
        assert!(miou(&[vec![0; 4]], &[LabelPair::new(1, 4, vec![255; 4], vec![2; 4]).unwrap()], 3).is_err());
    }

    #[test]
    fn hazard_drops() {
        let m: BTreeMap<String, f64> = [("blur".to_string(), 0.4), ("none".to_string(), 0.5)].into();
        let d = hazard_drop(&m, 0.5).unwrap();
        assert!((d["blur"] + 20.0).abs() < 1e-12);
        assert_eq!(d["none"], 0.0);
        assert!(hazard_drop(&m, 0.0).is_err());
    }

    #[test]
    fn table_has_a_row_per_report() {
        let r = EvalReport {
            head: "twohead".into(),
            score: "twohead".into(),
            assays: 50,
            ap_mean: 0.99,
            ap_std: 0.001,
            pasted_ap: 0.9,
            per_class_iou: vec![Some(1.0)],
            miou: 0.8,
            negative_miou: 0.7,
            hazard_drops: BTreeMap::new(),
        };
        let t = render_table(&[("a", &r), ("b", &r)]);
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("99.00 ± 0.10"));
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn ap_is_invariant_to_monotone_transforms(
            raw in prop::collection::vec((0u8..10, any::<bool>()), 1..40),
        ) {
            let scores: Vec<f32> = raw.iter().map(|&(s, _)| s as f32).collect();
            let mut labels: Vec<bool> = raw.iter().map(|&(_, l)| l).collect();
            labels[0] = true;
            let squashed: Vec<f32> = scores.iter().map(|&s| (s / 3.0).exp() * 2.0 - 1.0).collect();
            prop_assert_eq!(average_precision(&scores, &labels).unwrap(), average_precision(&squashed, &labels).unwrap());
        }

        #[test]
        fn ap_is_one_exactly_when_positives_lead(
            raw in prop::collection::vec((0u8..6, any::<bool>()), 1..30),
        ) {
            let scores: Vec<f32> = raw.iter().map(|&(s, _)| s as f32).collect();
            let mut labels: Vec<bool> = raw.iter().map(|&(_, l)| l).collect();
            labels[0] = true;
            let min_pos = scores.iter().zip(&labels).filter(|(_, &l)| l).map(|(&s, _)| s).fold(f32::INFINITY, f32::min);
            let max_neg = scores.iter().zip(&labels).filter(|(_, &l)| !l).map(|(&s, _)| s).fold(f32::NEG_INFINITY, f32::max);
            let ap = average_precision(&scores, &labels).unwrap();
            prop_assert_eq!(ap == 1.0, min_pos > max_neg);
        }
    }
}
