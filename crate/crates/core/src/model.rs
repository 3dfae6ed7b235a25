//! Ladder-style dense feature extractor with interchangeable prediction heads.
//!
//! Layout (strides relative to the input):
//!
//! ```text
//! image ─ stem(/2) ─ stage1(/4) ─ stage2(/8) ─ stage3(/16) ─ stage4(/32)
//!                       │            │            │            │
//!                       │            │            │           SPP ── aux /32
//!                       │            │            └── lat ──── U1 ── aux /16
//!                       │            └── lat ───────────────── U2 ── aux /8
//!                       └── lat ────────────────────────────── U3 ── aux /4
//!                                                               ├── class head
//!                                                               └── outlier / confidence head
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::ops::{self, BN_MOMENTUM};
use crate::autodiff::{BatchStats, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Feature strides tapped by the upsampling path and the auxiliary heads.
pub const FEATURE_STRIDES: [usize; 4] = [4, 8, 16, 32];
/// Grid sizes of the spatial pyramid pooling branches.
pub const SPP_GRIDS: [usize; 3] = [1, 2, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Multiclass,
    Multilabel,
    Cplus1,
    Twohead,
    Confidence,
}

impl HeadKind {
    pub const ALL: [HeadKind; 5] = [
        HeadKind::Multiclass,
        HeadKind::Multilabel,
        HeadKind::Cplus1,
        HeadKind::Twohead,
        HeadKind::Confidence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Multiclass => "multiclass",
            HeadKind::Multilabel => "multilabel",
            HeadKind::Cplus1 => "cplus1",
            HeadKind::Twohead => "twohead",
            HeadKind::Confidence => "confidence",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown head kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub head_kind: HeadKind,
    pub backbone_widths: [usize; 4],
    /// Dropout after SPP and after every upsampling block; 0 disables it.
    pub dropout_p: f64,
    pub input_channels: usize,
}

impl ModelConfig {
    pub fn new(num_classes: usize, head_kind: HeadKind) -> Self {
        Self {
            num_classes,
            head_kind,
            backbone_widths: [32, 64, 128, 128],
            dropout_p: 0.0,
            input_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 250 {
            return Err(Error::invalid("model config", format!("num_classes must lie in 2..=250, got {}", self.num_classes)));
        }
        if self.backbone_widths.contains(&0) || self.input_channels == 0 {
            return Err(Error::invalid("model config", "channel counts must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid("model config", format!("dropout_p must lie in [0, 1), got {}", self.dropout_p)));
        }
        Ok(())
    }

    /// Channels emitted by the classification head.
    pub fn class_outputs(&self) -> usize {
        match self.head_kind {
            HeadKind::Cplus1 => self.num_classes + 1,
            _ => self.num_classes,
        }
    }

    /// Width of the SPP output and of every upsampling block.
    pub fn decoder_width(&self) -> usize {
        self.backbone_widths[1]
    }
}

/// Batch-norm behaviour and dropout activity of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout on, parameters tracked for gradients.
    Train,
    /// Running statistics, dropout off.
    Eval,
    /// Running statistics with dropout kept on (Monte-Carlo sampling).
    McDropout,
}

impl Mode {
    fn dropout_active(self) -> bool {
        matches!(self, Mode::Train | Mode::McDropout)
    }
}

/// Head outputs as tape variables.
#[derive(Clone, Debug)]
pub struct OutputVars {
    pub class_logits: Var,
    pub outlier_logits: Option<Var>,
    /// Pre-sigmoid confidence.
    pub confidence_logits: Option<Var>,
    /// Strides 4, 8, 16, 32 in that order.
    pub aux_logits: Vec<Var>,
}

/// Head outputs as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput<T = f32> {
    pub class_logits: Tensor<T>,
    pub outlier_logits: Option<Tensor<T>>,
    /// Post-sigmoid confidence in (0, 1).
    pub confidence: Option<Tensor<T>>,
    pub aux_logits: Vec<Tensor<T>>,
}

pub struct ForwardPass<T> {
    pub out: OutputVars,
    /// Parameter leaves by name (tracked only in [`Mode::Train`]).
    pub params: BTreeMap<String, Var>,
    pub bn_stats: Vec<(String, BatchStats<T>)>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn output(&self, tape: &Tape<T>) -> ModelOutput<T> {
        ModelOutput {
            class_logits: tape.value(self.out.class_logits).clone(),
            outlier_logits: self.out.outlier_logits.map(|v| tape.value(v).clone()),
            confidence: self.out.confidence_logits.map(|v| ops::sigmoid(tape.value(v))),
            aux_logits: self.out.aux_logits.iter().map(|&v| tape.value(v).clone()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

/// Stable 64-bit FNV-1a, used to give every parameter its own RNG stream.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

struct Builder<'a, T: Scalar> {
    seed: u64,
    params: &'a mut BTreeMap<String, Tensor<T>>,
    buffers: &'a mut BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize) {
        let fan_in = (cin * k * k) as f64;
        let key = format!("{name}.weight");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(&key));
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let w = Tensor::from_fn(vec![cout, cin, k, k], |_| T::lit(normal.sample(&mut rng)));
        self.params.insert(key, w);
    }

    fn bias(&mut self, name: &str, c: usize) {
        self.params.insert(format!("{name}.bias"), Tensor::zeros(vec![c]));
    }

    fn bn(&mut self, name: &str, c: usize) {
        self.params.insert(format!("{name}.gamma"), Tensor::ones(vec![c]));
        self.params.insert(format!("{name}.beta"), Tensor::zeros(vec![c]));
        self.buffers.insert(format!("{name}.running_mean"), Tensor::zeros(vec![c]));
        self.buffers.insert(format!("{name}.running_var"), Tensor::ones(vec![c]));
    }

    fn conv_bn(&mut self, name: &str, cout: usize, cin: usize, k: usize) {
        self.conv(&format!("{name}.conv"), cout, cin, k);
        self.bn(&format!("{name}.bn"), cout);
    }

    fn head(&mut self, name: &str, cout: usize, cin: usize) {
        self.conv(name, cout, cin, 1);
        self.bias(name, cout);
    }
}

impl<T: Scalar> Model<T> {
    /// Builds a model with He-initialized weights derived from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        let mut b = Builder {
            seed,
            params: &mut params,
            buffers: &mut buffers,
        };
        let w = config.backbone_widths;
        let d = config.decoder_width();
        let nc = config.num_classes;

        b.conv_bn("backbone.stem", w[0], config.input_channels, 3);
        let mut cin = w[0];
        for (i, &width) in w.iter().enumerate() {
            b.conv_bn(&format!("backbone.stage{}.conv1", i + 1), width, cin, 3);
            b.conv_bn(&format!("backbone.stage{}.conv2", i + 1), width, width, 3);
            cin = width;
        }
        b.conv_bn("spp.fuse", d, w[3] * (1 + SPP_GRIDS.len()), 1);
        for (u, lateral) in [(1, w[2]), (2, w[1]), (3, w[0])] {
            b.conv(&format!("upsample.u{u}.lateral"), d, lateral, 1);
            b.conv_bn(&format!("upsample.u{u}.blend"), d, d, 3);
        }
        b.head("head.class", config.class_outputs(), d);
        match config.head_kind {
            HeadKind::Twohead => b.head("head.outlier", 2, d),
            HeadKind::Confidence => b.head("head.confidence", 1, d),
            _ => {}
        }
        for s in FEATURE_STRIDES {
            b.head(&format!("aux.s{s}"), nc, d);
        }
        Ok(Self { config, params, buffers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.buffers
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    /// Replaces a parameter or buffer, keeping its shape.
    pub fn set_tensor(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .or_else(|| self.buffers.get_mut(name))
            .ok_or_else(|| Error::invalid("set_tensor", format!("model has no tensor named `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape("set_tensor", slot.shape(), value.shape()));
        }
        *slot = Tensor::new(value.shape().to_vec(), value.into_data())?;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let conv = |m: &BTreeMap<String, Tensor<T>>| m.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
        Model {
            config: self.config.clone(),
            params: conv(&self.params),
            buffers: conv(&self.buffers),
        }
    }

    /// Folds batch statistics from a training pass into the running estimates.
    pub fn apply_bn_stats(&mut self, stats: &[(String, BatchStats<T>)]) {
        let m = T::lit(BN_MOMENTUM);
        let one_m = T::lit(1.0 - BN_MOMENTUM);
        for (name, s) in stats {
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let buf = self.buffers.get_mut(&format!("{name}.{suffix}")).expect("bn buffers exist");
                for (r, &b) in buf.data_mut().iter_mut().zip(batch) {
                    *r = m * *r + one_m * b;
                }
            }
        }
    }

    /// Records the forward pass of `image` (`N×C×H×W`, H and W divisible by 32).
    pub fn forward<R: Rng + ?Sized>(&self, tape: &mut Tape<T>, image: Var, mode: Mode, rng: &mut R) -> Result<ForwardPass<T>> {
        self.forward_with(tape, image, mode, rng, BTreeMap::new())
    }

    /// Like [`Model::forward`], but parameters present in `params` are taken
    /// from the tape instead of the model.
    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        image: Var,
        mode: Mode,
        rng: &mut R,
        params: BTreeMap<String, Var>,
    ) -> Result<ForwardPass<T>> {
        let (_, c, h, w) = tape.value(image).dims4("forward")?;
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::invalid("forward", format!("input {h}x{w} is not divisible by 32")));
        }
        if c != self.config.input_channels {
            return Err(Error::invalid("forward", format!("expected {} input channels, got {c}", self.config.input_channels)));
        }
        let mut cx = Ctx {
            model: self,
            tape,
            mode,
            rng,
            params,
            bn_stats: Vec::new(),
        };
        let out = cx.run(image)?;
        Ok(ForwardPass {
            out,
            params: cx.params,
            bn_stats: cx.bn_stats,
        })
    }

    /// Forward pass on a fresh tape, returning plain tensors.
    pub fn predict<R: Rng + ?Sized>(&self, image: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<ModelOutput<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let pass = self.forward(&mut tape, x, mode, rng)?;
        Ok(pass.output(&tape))
    }
}

struct Ctx<'a, T: Scalar, R: ?Sized> {
    model: &'a Model<T>,
    tape: &'a mut Tape<T>,
    mode: Mode,
    rng: &'a mut R,
    params: BTreeMap<String, Var>,
    bn_stats: Vec<(String, BatchStats<T>)>,
}

impl<T: Scalar, R: Rng + ?Sized> Ctx<'_, T, R> {
    fn p(&mut self, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let t = self.model.params[name].clone();
        let v = if self.mode == Mode::Train { self.tape.leaf(t) } else { self.tape.constant(t) };
        self.params.insert(name.to_string(), v);
        v
    }

    fn conv(&mut self, name: &str, x: Var, stride: usize) -> Result<Var> {
        let k = self.p(&format!("{name}.weight"));
        let pad = self.tape.shape(k)[2] / 2;
        self.tape.conv2d(x, k, stride, pad)
    }

    fn bn(&mut self, name: &str, x: Var) -> Result<Var> {
        let gamma = self.p(&format!("{name}.gamma"));
        let beta = self.p(&format!("{name}.beta"));
        if self.mode == Mode::Train {
            let (y, stats) = self.tape.batch_norm_train(x, gamma, beta)?;
            self.bn_stats.push((name.to_string(), stats));
            Ok(y)
        } else {
            let mean = &self.model.buffers[&format!("{name}.running_mean")];
            let var = &self.model.buffers[&format!("{name}.running_var")];
            self.tape.batch_norm_eval(x, gamma, beta, mean, var)
        }
    }

    fn conv_bn_relu(&mut self, name: &str, x: Var, stride: usize) -> Result<Var> {
        let y = self.conv(&format!("{name}.conv"), x, stride)?;
        let y = self.bn(&format!("{name}.bn"), y)?;
        self.tape.relu(y)
    }

    fn head(&mut self, name: &str, x: Var) -> Result<Var> {
        let y = self.conv(name, x, 1)?;
        let b = self.p(&format!("{name}.bias"));
        self.tape.add_channel_bias(y, b)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let p = self.model.config.dropout_p;
        if p > 0.0 && self.mode.dropout_active() {
            self.tape.dropout(x, p, self.rng)
        } else {
            Ok(x)
        }
    }

    fn spatial(&self, v: Var) -> (usize, usize) {
        let s = self.tape.shape(v);
        (s[2], s[3])
    }

    fn run(&mut self, image: Var) -> Result<OutputVars> {
        let x = self.conv_bn_relu("backbone.stem", image, 1)?;
        let (h, w) = self.spatial(x);
        let mut x = self.tape.adaptive_avg_pool(x, h / 2, w / 2)?;
        let mut lateral = Vec::with_capacity(4);
        for i in 1..=4 {
            x = self.conv_bn_relu(&format!("backbone.stage{i}.conv1"), x, 1)?;
            x = self.conv_bn_relu(&format!("backbone.stage{i}.conv2"), x, 1)?;
            let (h, w) = self.spatial(x);
            x = self.tape.adaptive_avg_pool(x, h / 2, w / 2)?;
            lateral.push(x);
        }

        let (h32, w32) = self.spatial(x);
        let mut branches = vec![x];
        for g in SPP_GRIDS {
            let pooled = self.tape.adaptive_avg_pool(x, g, g)?;
            branches.push(self.tape.resize_bilinear(pooled, h32, w32)?);
        }
        let spp = self.tape.concat(&branches, 1)?;
        let spp = self.conv_bn_relu("spp.fuse", spp, 1)?;
        let spp = self.dropout(spp)?;

        let mut decoded = vec![spp];
        let mut up = spp;
        for (u, lat) in [(1, lateral[2]), (2, lateral[1]), (3, lateral[0])] {
            let coarse = self.tape.bilinear_upsample(up, 2)?;
            let proj = self.conv(&format!("upsample.u{u}.lateral"), lat, 1)?;
            let sum = self.tape.add(coarse, proj)?;
            let blended = self.conv_bn_relu(&format!("upsample.u{u}.blend"), sum, 1)?;
            up = self.dropout(blended)?;
            decoded.push(up);
        }
        // decoded = [SPP (/32), U1 (/16), U2 (/8), U3 (/4)]
        let features = up;
        let class_logits = self.head("head.class", features)?;
        let outlier_logits = match self.model.config.head_kind {
            HeadKind::Twohead => Some(self.head("head.outlier", features)?),
            _ => None,
        };
        let confidence_logits = match self.model.config.head_kind {
            HeadKind::Confidence => Some(self.head("head.confidence", features)?),
            _ => None,
        };
        let mut aux_logits = Vec::with_capacity(4);
        for (s, &feat) in FEATURE_STRIDES.iter().zip(decoded.iter().rev()) {
            aux_logits.push(self.head(&format!("aux.s{s}"), feat)?);
        }
        Ok(OutputVars {
            class_logits,
            outlier_logits,
            confidence_logits,
            aux_logits,
        })
    }
}

/// Parameters that receive the reduced learning rate.
pub fn is_backbone_param(name: &str) -> bool {
    name.starts_with("backbone.")
}
