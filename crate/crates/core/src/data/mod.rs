//! Samples, normalization, paste augmentation and mixed-batch formation.

pub mod io;
mod synthetic;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, Tensor};
use crate::error::{Error, Result};
use crate::losses::{LabelPair, Z_OUTLIER};

pub use io::{decode_label, encode_label, load_directory, write_dataset, DirectoryDataset, Manifest, ManifestEntry, MANIFEST_FILE};
pub use synthetic::{generate_synthetic, SyntheticSet, INLIER_PALETTE, NEGATIVE_PALETTE};

/// Per-channel mean of 0..1 RGB values.
pub const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
/// Per-channel standard deviation of 0..1 RGB values.
pub const STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Area fraction of pasted negatives.
pub const PASTE_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Inlier,
    /// Whole image is outlier material.
    Negative,
    /// Only a bounding box is outlier material; the rest is ignored.
    NegativeBb,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Inlier => "inlier",
            SourceTag::Negative => "negative",
            SourceTag::NegativeBb => "negative_bb",
        }
    }

    pub fn is_negative(self) -> bool {
        self != SourceTag::Inlier
    }
}

impl std::str::FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inlier" => Ok(SourceTag::Inlier),
            "negative" => Ok(SourceTag::Negative),
            "negative_bb" => Ok(SourceTag::NegativeBb),
            _ => Err(Error::invalid("source", format!("unknown role `{s}` (inlier, negative, negative_bb)"))),
        }
    }
}

/// A normalized `3×H×W` image with its label maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub labels: LabelPair,
    pub source: SourceTag,
}

impl Sample {
    pub fn new(image: Tensor<f32>, labels: LabelPair, source: SourceTag) -> Result<Self> {
        if image.shape() != [3, labels.height, labels.width] {
            return Err(Error::shape("sample", image.shape(), &[3, labels.height, labels.width]));
        }
        Ok(Self { image, labels, source })
    }

    pub fn height(&self) -> usize {
        self.labels.height
    }

    pub fn width(&self) -> usize {
        self.labels.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Directory,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(DatasetKind::Synthetic),
            "directory" => Ok(DatasetKind::Directory),
            _ => Err(Error::invalid("dataset", format!("unknown kind `{s}` (synthetic, directory)"))),
        }
    }
}

/// Where samples come from and, for synthetic sets, how they look.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub role: SourceTag,
    pub num_classes: usize,
    pub image_size: usize,
    pub count: usize,
    pub seed: u64,
    /// Amplitude of per-pixel texture noise, in 8-bit levels.
    pub texture: f32,
    /// Upper bound on object blobs per synthetic scene.
    pub max_objects: usize,
    pub path: Option<PathBuf>,
}

impl DatasetSpec {
    pub fn synthetic(role: SourceTag, num_classes: usize, image_size: usize, count: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            role,
            num_classes,
            image_size,
            count,
            seed,
            texture: 10.0,
            max_objects: 3,
            path: None,
        }
    }

    pub fn directory(path: impl Into<PathBuf>, num_classes: usize) -> Self {
        Self {
            kind: DatasetKind::Directory,
            path: Some(path.into()),
            ..Self::synthetic(SourceTag::Inlier, num_classes, 0, 0, 0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=250).contains(&self.num_classes) {
            return Err(Error::invalid("dataset", format!("num_classes must be in 2..=250, got {}", self.num_classes)));
        }
        match self.kind {
            DatasetKind::Synthetic => {
                if self.image_size < 16 {
                    return Err(Error::invalid("dataset", format!("image_size {} is below 16", self.image_size)));
                }
                if !(self.texture.is_finite() && self.texture >= 0.0) {
                    return Err(Error::invalid("dataset", "texture must be finite and non-negative"));
                }
            }
            DatasetKind::Directory => {
                if self.path.is_none() {
                    return Err(Error::invalid("dataset", "directory datasets need a path"));
                }
            }
        }
        Ok(())
    }

    /// Opens the described dataset for random access.
    pub fn open(&self) -> Result<Box<dyn SampleSource>> {
        self.validate()?;
        Ok(match self.kind {
            DatasetKind::Synthetic => Box::new(SyntheticSet::new(self.clone())?),
            DatasetKind::Directory => Box::new(load_directory(self)?),
        })
    }
}

/// Random access to a finite, indexable set of samples.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn sample(&self, index: usize) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for Vec<Sample> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        self.get(index).cloned().ok_or_else(|| Error::invalid("sample", format!("index {index} out of range")))
    }
}

/// Endless reshuffled passes over a source.
pub struct Stream<'a> {
    source: &'a dyn SampleSource,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
    delivered: usize,
}

impl<'a> Stream<'a> {
    pub fn new(source: &'a dyn SampleSource, seed: u64) -> Result<Self> {
        if source.is_empty() {
            return Err(Error::invalid("stream", "sample source is empty"));
        }
        let n = source.len();
        Ok(Self {
            source,
            order: (0..n).collect(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
            delivered: 0,
        })
    }

    pub fn next_sample(&mut self) -> Result<Sample> {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        self.delivered += 1;
        self.source.sample(i)
    }

    /// Samples handed out so far.
    pub fn delivered(&self) -> usize {
        self.delivered
    }

    pub fn source_len(&self) -> usize {
        self.order.len()
    }
}

/// Maps 0..255 RGB planes to standardized values.
pub fn normalize(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    per_channel(image, "normalize", |c, v| (v / 255.0 - MEAN[c]) / STD[c])
}

/// Inverse of [`normalize`].
pub fn denormalize(image: &Tensor<f32>) -> Result<Tensor<f32>> {
    per_channel(image, "denormalize", |c, v| (v * STD[c] + MEAN[c]) * 255.0)
}

fn per_channel(image: &Tensor<f32>, op: &'static str, f: impl Fn(usize, f32) -> f32) -> Result<Tensor<f32>> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(Error::invalid(op, format!("expected a 3xHxW image, got {:?}", image.shape())));
    }
    let plane = image.shape()[1] * image.shape()[2];
    let mut out = image.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = f(i / plane, *v);
    }
    Ok(out)
}

/// Interleaved 8-bit RGB bytes of a normalized image.
pub fn to_rgb8(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let raw = denormalize(image)?;
    let (h, w) = (raw.shape()[1], raw.shape()[2]);
    let plane = h * w;
    let mut out = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push(raw.data()[c * plane + i].round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

/// Normalized image from interleaved 8-bit RGB bytes.
pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Tensor<f32>> {
    let plane = height * width;
    if rgb.len() != 3 * plane {
        return Err(Error::invalid("from_rgb8", format!("{} bytes for a {height}x{width} RGB image", rgb.len())));
    }
    let raw = Tensor::from_fn(vec![3, height, width], |i| rgb[(i % plane) * 3 + i / plane] as f32);
    normalize(&raw)
}

/// Extent of a `src_h × src_w` patch rescaled to cover about `area` pixels.
pub fn pasted_size(src_h: usize, src_w: usize, area: usize, max_h: usize, max_w: usize) -> (usize, usize) {
    let area = area.max(1) as f64;
    let h = ((area * src_h as f64 / src_w as f64).sqrt().round() as usize).clamp(1, max_h);
    let w = ((area / h as f64).round() as usize).clamp(1, max_w);
    (h, w)
}

/// Bounding box `(top, left, height, width)` of the outlier pixels.
fn outlier_box(labels: &LabelPair) -> Option<(usize, usize, usize, usize)> {
    let (mut t, mut l, mut b, mut r) = (usize::MAX, usize::MAX, 0, 0);
    for i in 0..labels.height {
        for j in 0..labels.width {
            if labels.z[i * labels.width + j] == Z_OUTLIER {
                t = t.min(i);
                l = l.min(j);
                b = b.max(i + 1);
                r = r.max(j + 1);
            }
        }
    }
    (t != usize::MAX).then(|| (t, l, b - t, r - l))
}

fn crop_image(image: &Tensor<f32>, top: usize, left: usize, h: usize, w: usize) -> Tensor<f32> {
    let (ih, iw) = (image.shape()[1], image.shape()[2]);
    Tensor::from_fn(vec![3, h, w], |k| {
        let (c, i, j) = (k / (h * w), k / w % h, k % w);
        image.data()[c * ih * iw + (top + i) * iw + left + j]
    })
}

fn crop_labels(labels: &LabelPair, top: usize, left: usize, h: usize, w: usize) -> LabelPair {
    let pick = |m: &[u8]| (0..h * w).map(|k| m[(top + k / w) * labels.width + left + k % w]).collect();
    LabelPair {
        height: h,
        width: w,
        y: pick(&labels.y),
        z: pick(&labels.z),
    }
}

/// Pastes `negative` (its outlier bounding box in bb mode) into `inlier`,
/// rescaled to `area_fraction` of the inlier area at a uniform position.
/// Pasted pixels become outliers; everything else keeps its labels.
pub fn paste_negative<R: Rng + ?Sized>(
    inlier: &Sample,
    negative: &Sample,
    area_fraction: f64,
    num_classes: usize,
    rng: &mut R,
) -> Result<Sample> {
    if !(area_fraction > 0.0 && area_fraction < 1.0) {
        return Err(Error::invalid("paste_negative", format!("area fraction {area_fraction} outside (0, 1)")));
    }
    let (src_t, src_l, src_h, src_w) = match negative.source {
        SourceTag::NegativeBb => {
            outlier_box(&negative.labels).ok_or_else(|| Error::invalid("paste_negative", "bb negative has no outlier pixels"))?
        }
        _ => (0, 0, negative.height(), negative.width()),
    };
    let (h, w) = (inlier.height(), inlier.width());
    let area = (area_fraction * (h * w) as f64).round() as usize;
    let (ph, pw) = pasted_size(src_h, src_w, area, h, w);
    let patch = crop_image(&negative.image, src_t, src_l, src_h, src_w).reshape(vec![1, 3, src_h, src_w])?;
    let patch = ops::resize_bilinear(&patch, ph, pw)?;
    let top = rng.gen_range(0..=h - ph);
    let left = rng.gen_range(0..=w - pw);
    let mut out = inlier.clone();
    let plane = h * w;
    for i in 0..ph {
        for j in 0..pw {
            let dst = (top + i) * w + left + j;
            for c in 0..3 {
                out.image.data_mut()[c * plane + dst] = patch.data()[(c * ph + i) * pw + j];
            }
            out.labels.set_outlier(dst, num_classes);
        }
    }
    Ok(out)
}

/// Mirrors image and labels left to right.
pub fn flip_horizontal(sample: &Sample) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    let mirror = |k: usize| (k / w) * w + (w - 1 - k % w);
    let image = Tensor::from_fn(vec![3, h, w], |k| {
        let plane = h * w;
        sample.image.data()[(k / plane) * plane + mirror(k % plane)]
    });
    let flip = |m: &[u8]| (0..h * w).map(|k| m[mirror(k)]).collect();
    Sample {
        image,
        labels: LabelPair {
            height: h,
            width: w,
            y: flip(&sample.labels.y),
            z: flip(&sample.labels.z),
        },
        source: sample.source,
    }
}

/// Square crop at `(top, left)`.
pub fn crop(sample: &Sample, top: usize, left: usize, size: usize) -> Result<Sample> {
    if top + size > sample.height() || left + size > sample.width() {
        return Err(Error::invalid(
            "crop",
            format!("{size}x{size} crop at ({top}, {left}) leaves the {}x{} image", sample.height(), sample.width()),
        ));
    }
    Ok(Sample {
        image: crop_image(&sample.image, top, left, size, size),
        labels: crop_labels(&sample.labels, top, left, size, size),
        source: sample.source,
    })
}

/// Random square crop followed by a horizontal flip with probability 1/2.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, size: usize, rng: &mut R) -> Result<Sample> {
    if size == 0 || size > sample.height().min(sample.width()) {
        return Err(Error::invalid("augment", format!("crop {size} does not fit {}x{}", sample.height(), sample.width())));
    }
    let top = rng.gen_range(0..=sample.height() - size);
    let left = rng.gen_range(0..=sample.width() - size);
    let out = crop(sample, top, left, size)?;
    Ok(if rng.gen_bool(0.5) { flip_horizontal(&out) } else { out })
}

/// Fills `batch_size` slots, each an inlier with probability 1/2 and a
/// negative otherwise. With `paste`, a negative slot is a negative pasted
/// into the next inlier; without it the negative stands alone. Without a
/// negative stream every slot is an inlier.
pub fn form_batch<R: Rng + ?Sized>(
    inliers: &mut Stream,
    mut negatives: Option<&mut Stream>,
    batch_size: usize,
    paste: bool,
    num_classes: usize,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    if batch_size < 2 {
        return Err(Error::invalid("form_batch", format!("batch size {batch_size} is below 2")));
    }
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let neg = match negatives.as_deref_mut() {
            Some(n) if !rng.gen_bool(0.5) => Some(n.next_sample()?),
            _ => None,
        };
        out.push(match neg {
            None => inliers.next_sample()?,
            Some(n) if paste => paste_negative(&inliers.next_sample()?, &n, PASTE_FRACTION, num_classes, rng)?,
            Some(n) => n,
        });
    }
    Ok(out)
}

/// Stacks samples into an `N×3×H×W` batch and its label maps.
pub fn collate(samples: &[Sample]) -> Result<(Tensor<f32>, Vec<LabelPair>)> {
    let images: Vec<Tensor<f32>> = samples.iter().map(|s| s.image.clone()).collect();
    let labels = samples.iter().map(|s| s.labels.clone()).collect();
    Ok((Tensor::stack(&images)?, labels))
}

/// Labels of a negative image: everything outlier.
pub(crate) fn all_outlier(h: usize, w: usize, num_classes: usize) -> LabelPair {
    LabelPair {
        height: h,
        width: w,
        y: vec![num_classes as u8; h * w],
        z: vec![Z_OUTLIER; h * w],
    }
}

/// Whether any pixel carries each of the three `z` values.
pub fn z_presence(labels: &LabelPair) -> [bool; 3] {
    let mut seen = [false; 3];
    for &z in &labels.z {
        seen[z as usize] = true;
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::Z_INLIER;

    fn toy(h: usize, w: usize, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Tensor::from_fn(vec![3, h, w], |_| rng.gen_range(0..256) as f32);
        let y = (0..h * w).map(|k| (k % 3) as u8).collect();
        Sample::new(normalize(&raw).unwrap(), LabelPair::new(h, w, y, vec![Z_INLIER; h * w]).unwrap(), SourceTag::Inlier).unwrap()
    }

    fn negative(h: usize, w: usize) -> Sample {
        let raw = Tensor::full(vec![3, h, w], 200.0);
        Sample::new(normalize(&raw).unwrap(), all_outlier(h, w, 4), SourceTag::Negative).unwrap()
    }

    #[test]
    fn normalize_values() {
        let mut raw = Tensor::zeros(vec![3, 1, 2]);
        raw.data_mut()[0] = 123.675;
        raw.data_mut()[1] = 255.0;
        let n = normalize(&raw).unwrap();
        assert!(n.data()[0].abs() < 1e-6);
        assert!((n.data()[1] - 2.2489).abs() < 1e-4);
        let back = denormalize(&n).unwrap();
        assert!(back.max_abs_diff(&raw) < 1e-4);
    }

    #[test]
    fn rgb8_round_trip() {
        let bytes: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 41 % 256) as u8).collect();
        let img = from_rgb8(4, 5, &bytes).unwrap();
        assert_eq!(to_rgb8(&img).unwrap(), bytes);
    }

    #[test]
    fn paste_area_on_64() {
        let inl = toy(64, 64, 1);
        let neg = negative(40, 40);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = paste_negative(&inl, &neg, 0.05, 4, &mut rng).unwrap();
            let n = out.labels.z.iter().filter(|&&z| z == Z_OUTLIER).count();
            assert!((194..=215).contains(&n), "{n}");
            assert!(out.labels.y.iter().zip(&out.labels.z).all(|(&y, &z)| (z == Z_OUTLIER) == (y == 4)));
        }
    }

    #[test]
    fn paste_keeps_aspect_ratio() {
        assert_eq!(pasted_size(10, 40, 100, 64, 64), (5, 20));
        assert_eq!(pasted_size(30, 30, 1, 64, 64), (1, 1));
    }

    #[test]
    fn degenerate_paste_is_one_pixel() {
        let inl = toy(32, 32, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = paste_negative(&inl, &negative(8, 8), 0.5 / 1024.0 + 1e-6, 4, &mut rng).unwrap();
        assert_eq!(out.labels.z.iter().filter(|&&z| z == Z_OUTLIER).count(), 1);
    }

    #[test]
    fn paste_is_deterministic_and_leaves_rest_alone() {
        let inl = toy(32, 32, 3);
        let neg = negative(16, 24);
        let a = paste_negative(&inl, &neg, 0.1, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = paste_negative(&inl, &neg, 0.1, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        for k in 0..32 * 32 {
            if a.labels.z[k] != Z_OUTLIER {
                assert_eq!(a.labels.y[k], inl.labels.y[k]);
                for c in 0..3 {
                    assert_eq!(a.image.data()[c * 1024 + k], inl.image.data()[c * 1024 + k]);
                }
            }
        }
    }

    #[test]
    fn bb_paste_uses_only_the_box() {
        let inl = toy(64, 64, 4);
        let mut neg = negative(20, 20);
        neg.source = SourceTag::NegativeBb;
        for k in 0..400 {
            let (i, j) = (k / 20, k % 20);
            if !(5..15).contains(&i) || !(2..8).contains(&j) {
                neg.labels.set_ignore(k);
            }
        }
        assert_eq!(outlier_box(&neg.labels), Some((5, 2, 10, 6)));
        let out = paste_negative(&inl, &neg, 0.05, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(pasted_size(10, 6, 205, 64, 64), (18, 11));
        assert_eq!(out.labels.z.iter().filter(|&&z| z == Z_OUTLIER).count(), 18 * 11);
    }

    #[test]
    fn flip_is_an_involution() {
        let s = toy(6, 7, 5);
        assert_eq!(flip_horizontal(&flip_horizontal(&s)), s);
        assert_ne!(flip_horizontal(&s), s);
    }

    #[test]
    fn augment_moves_labels_with_pixels() {
        // Encode each pixel's coordinates in both the image and the labels.
        let (h, w) = (12, 16);
        let raw = Tensor::from_fn(vec![3, h, w], |k| {
            let p = k % (h * w);
            [(p / w) as f32, (p % w) as f32, 0.0][k / (h * w)]
        });
        let y = (0..h * w).map(|p| (p / w) as u8).collect();
        let z = (0..h * w).map(|p| (p % w) as u8 % 3).collect();
        let s = Sample::new(normalize(&raw).unwrap(), LabelPair::new(h, w, y, z).unwrap(), SourceTag::Inlier).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = augment(&s, 8, &mut rng).unwrap();
            let raw = denormalize(&a.image).unwrap();
            for p in 0..64 {
                let (row, col) = (raw.data()[p].round() as usize, raw.data()[64 + p].round() as usize);
                assert_eq!(a.labels.y[p] as usize, row);
                assert_eq!(a.labels.z[p] as usize, col % 3);
            }
        }
    }

    #[test]
    fn full_size_augment_only_flips() {
        let s = toy(8, 8, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let a = augment(&s, 8, &mut rng).unwrap();
            assert!(a == s || a == flip_horizontal(&s));
        }
    }

    #[test]
    fn batches_mix_and_paste() {
        let inl: Vec<Sample> = (0..5).map(|i| toy(32, 32, i)).collect();
        let neg: Vec<Sample> = vec![negative(16, 16)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut is = Stream::new(&inl, 1).unwrap();
        let mut ns = Stream::new(&neg, 2).unwrap();
        for _ in 0..20 {
            for s in form_batch(&mut is, Some(&mut ns), 8, true, 4, &mut rng).unwrap() {
                let [o, i, _] = z_presence(&s.labels);
                assert!(i);
                if o {
                    assert_eq!(s.labels.z.iter().filter(|&&z| z == Z_OUTLIER).count(), pasted_size(16, 16, 51, 32, 32).0.pow(2));
                }
            }
        }
        let mut is = Stream::new(&inl, 1).unwrap();
        let batch = form_batch(&mut is, None, 4, true, 4, &mut rng).unwrap();
        assert!(batch.iter().all(|s| s.source == SourceTag::Inlier));
        assert!(form_batch(&mut is, None, 1, true, 4, &mut rng).is_err());
        let empty: Vec<Sample> = Vec::new();
        assert!(Stream::new(&empty, 0).is_err());
    }

    #[test]
    fn stream_covers_each_pass() {
        let inl: Vec<Sample> = (0..4).map(|i| toy(4, 4, i)).collect();
        let mut s = Stream::new(&inl, 3).unwrap();
        let mut seen: Vec<Sample> = (0..4).map(|_| s.next_sample().unwrap()).collect();
        seen.sort_by(|a, b| a.image.data()[0].total_cmp(&b.image.data()[0]));
        let mut want = inl.clone();
        want.sort_by(|a, b| a.image.data()[0].total_cmp(&b.image.data()[0]));
        assert_eq!(seen, want);
        assert_eq!(s.delivered(), 4);
    }
}
