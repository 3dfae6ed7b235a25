//! "ToyRoads" scenes and disjoint-texture negatives.
//!
//! A scene is sky above a jittered horizon and road below it, with
//! vegetation bands straddling the horizon (class 2) and rectangular object
//! blobs standing on the road (classes 3 and up). Negatives use saturated
//! colors and high-frequency patterns that never occur in scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{all_outlier, normalize, DatasetKind, DatasetSpec, Sample, SampleSource, SourceTag};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::losses::LabelPair;

/// Base colors of sky, road, vegetation and the first object classes.
pub const INLIER_PALETTE: [[f32; 3]; 8] = [
    [115.0, 160.0, 215.0],
    [92.0, 92.0, 98.0],
    [62.0, 128.0, 52.0],
    [170.0, 58.0, 48.0],
    [196.0, 162.0, 64.0],
    [118.0, 72.0, 138.0],
    [58.0, 96.0, 150.0],
    [150.0, 110.0, 80.0],
];

/// Colors reserved for negatives.
pub const NEGATIVE_PALETTE: [[f32; 3]; 8] = [
    [255.0, 0.0, 255.0],
    [0.0, 255.0, 255.0],
    [255.0, 140.0, 0.0],
    [255.0, 255.0, 255.0],
    [0.0, 0.0, 0.0],
    [150.0, 255.0, 0.0],
    [255.0, 20.0, 147.0],
    [255.0, 255.0, 0.0],
];

const ROLE_SALT: [u64; 3] = [0x9e37_79b9_7f4a_7c15, 0xc2b2_ae3d_27d4_eb4f, 0x1656_67b1_9e37_79f9];

fn class_color(class: usize) -> [f32; 3] {
    if class < INLIER_PALETTE.len() {
        return INLIER_PALETTE[class];
    }
    // Further object classes: muted colors spread around the hue circle.
    let t = class as f32 * 0.618_034;
    let h = (t - t.floor()) * std::f32::consts::TAU;
    [130.0 + 50.0 * h.cos(), 120.0 + 50.0 * (h + 2.1).cos(), 110.0 + 50.0 * (h + 4.2).cos()]
}

struct Canvas {
    size: usize,
    rgb: Vec<f32>,
    y: Vec<u8>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Self {
            size,
            rgb: vec![0.0; 3 * size * size],
            y: vec![0; size * size],
        }
    }

    fn put(&mut self, i: usize, j: usize, color: [f32; 3], class: u8) {
        let plane = self.size * self.size;
        let k = i * self.size + j;
        for (c, v) in color.iter().enumerate() {
            self.rgb[c * plane + k] = *v;
        }
        self.y[k] = class;
    }

    fn finish(mut self, texture: f32, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
        for v in &mut self.rgb {
            let noise = if texture > 0.0 { rng.gen_range(-texture..=texture) } else { 0.0 };
            *v = (*v + noise).round().clamp(0.0, 255.0);
        }
        normalize(&Tensor::new(vec![3, self.size, self.size], self.rgb)?)
    }
}

fn shade(color: [f32; 3], f: f32) -> [f32; 3] {
    color.map(|v| v * f)
}

fn scene(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Result<(Tensor<f32>, Vec<u8>)> {
    let s = spec.image_size;
    let nc = spec.num_classes;
    let mut cv = Canvas::new(s);
    let horizon = rng.gen_range(s * 3 / 10..=s * 11 / 20);
    let tilt = rng.gen_range(-0.15f32..0.15);
    let horizon_at = |j: usize| ((horizon as f32 + tilt * (j as f32 - s as f32 / 2.0)).round().max(1.0) as usize).min(s - 1);
    for i in 0..s {
        for j in 0..s {
            let hz = horizon_at(j);
            if i < hz {
                // Sky brightens towards the horizon.
                cv.put(i, j, shade(class_color(0), 0.85 + 0.2 * i as f32 / hz as f32), 0);
            } else {
                cv.put(i, j, shade(class_color(1), 1.1 - 0.2 * (i - hz) as f32 / (s - hz) as f32), 1);
            }
        }
    }
    if nc >= 3 {
        for _ in 0..rng.gen_range(1..=2) {
            let width = rng.gen_range(s / 4..=s / 2);
            let left = rng.gen_range(0..=s - width);
            let height = rng.gen_range(s / 8..=s / 4);
            let mut top = height as i64;
            for j in left..left + width {
                top = (top + rng.gen_range(-1..=1)).clamp(height as i64 / 2, height as i64 * 3 / 2);
                let hz = horizon_at(j);
                let start = hz.saturating_sub(top as usize);
                for i in start..(hz + height / 3).min(s) {
                    let f = if (i * 7 + j * 3) % 5 == 0 { 0.75 } else { 1.0 };
                    cv.put(i, j, shade(class_color(2), f), 2);
                }
            }
        }
    }
    if nc >= 4 {
        for _ in 0..rng.gen_range(1..=spec.max_objects.max(1)) {
            let class = rng.gen_range(3..nc);
            let w = rng.gen_range(s / 8..=s / 3);
            let h = rng.gen_range(s / 8..=s / 4);
            let left = rng.gen_range(0..=s - w);
            let bottom = rng.gen_range(horizon.max(h)..=s);
            for i in bottom - h..bottom {
                for j in left..left + w {
                    // A darker lower third reads as a shadowed base.
                    let f = if i >= bottom - h / 3 { 0.8 } else { 1.0 };
                    cv.put(i, j, shade(class_color(class), f), class as u8);
                }
            }
        }
    }
    let y = cv.y.clone();
    Ok((cv.finish(spec.texture, rng)?, y))
}

fn negative_texture(size: usize, rng: &mut ChaCha8Rng) -> Vec<[f32; 3]> {
    let pick = |rng: &mut ChaCha8Rng| NEGATIVE_PALETTE[rng.gen_range(0..NEGATIVE_PALETTE.len())];
    let a = pick(rng);
    let mut b = pick(rng);
    while b == a {
        b = pick(rng);
    }
    let c = pick(rng);
    let pattern = rng.gen_range(0..3);
    let cell = rng.gen_range(2..=(size / 8).max(3));
    let orient = rng.gen_range(0..3);
    let mut out = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            out.push(match pattern {
                0 => {
                    if (i / cell + j / cell) % 2 == 0 {
                        a
                    } else {
                        b
                    }
                }
                1 => {
                    let t = [i, j, i + j][orient];
                    if (t / cell) % 2 == 0 {
                        a
                    } else {
                        b
                    }
                }
                _ => [a, b, c][rng.gen_range(0..3)],
            });
        }
    }
    out
}

fn negative(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let s = spec.image_size;
    let tex = negative_texture(s, rng);
    let mut cv = Canvas::new(s);
    for (k, color) in tex.into_iter().enumerate() {
        cv.put(k / s, k % s, color, 0);
    }
    let image = cv.finish(spec.texture, rng)?;
    Sample::new(image, all_outlier(s, s, spec.num_classes), SourceTag::Negative)
}

/// A negative object inside a bounding box over an inlier-looking scene;
/// only the box is labeled.
fn negative_bb(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let s = spec.image_size;
    let (background, _) = scene(spec, rng)?;
    let bh = rng.gen_range(s / 4..=s * 3 / 5);
    let bw = rng.gen_range(s / 4..=s * 3 / 5);
    let top = rng.gen_range(0..=s - bh);
    let left = rng.gen_range(0..=s - bw);
    let tex = negative_texture(bh.max(bw), rng);
    let mut cv = Canvas::new(s);
    for (k, color) in tex.into_iter().enumerate() {
        let (i, j) = (k / bh.max(bw), k % bh.max(bw));
        if i < bh && j < bw {
            cv.put(top + i, left + j, color, 0);
        }
    }
    let object = cv.finish(spec.texture, rng)?;
    let mut labels = LabelPair::filled(s, s, 0);
    let plane = s * s;
    let mut image = background;
    for k in 0..plane {
        let (i, j) = (k / s, k % s);
        if (top..top + bh).contains(&i) && (left..left + bw).contains(&j) {
            for c in 0..3 {
                image.data_mut()[c * plane + k] = object.data()[c * plane + k];
            }
            labels.set_outlier(k, spec.num_classes);
        } else {
            labels.set_ignore(k);
        }
    }
    Sample::new(image, labels, SourceTag::NegativeBb)
}

/// Sample `index` of a synthetic spec; a pure function of its arguments.
pub fn generate_synthetic(spec: &DatasetSpec, index: usize) -> Result<Sample> {
    if spec.kind != DatasetKind::Synthetic {
        return Err(Error::invalid("generate_synthetic", "spec is not synthetic"));
    }
    spec.validate()?;
    let salt = ROLE_SALT[spec.role as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ salt);
    rng.set_stream(index as u64);
    match spec.role {
        SourceTag::Inlier => {
            let (image, y) = scene(spec, &mut rng)?;
            let s = spec.image_size;
            Sample::new(image, LabelPair::new(s, s, y, vec![crate::losses::Z_INLIER; s * s])?, SourceTag::Inlier)
        }
        SourceTag::Negative => negative(spec, &mut rng),
        SourceTag::NegativeBb => negative_bb(spec, &mut rng),
    }
}

/// `spec.count` generated samples, produced on demand.
#[derive(Clone, Debug)]
pub struct SyntheticSet {
    spec: DatasetSpec,
}

impl SyntheticSet {
    pub fn new(spec: DatasetSpec) -> Result<Self> {
        if spec.kind != DatasetKind::Synthetic {
            return Err(Error::invalid("synthetic", "spec is not synthetic"));
        }
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }
}

impl SampleSource for SyntheticSet {
    fn len(&self) -> usize {
        self.spec.count
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        if index >= self.spec.count {
            return Err(Error::invalid("synthetic", format!("index {index} out of range ({})", self.spec.count)));
        }
        generate_synthetic(&self.spec, index)
    }
}
