//! Finite-difference suite over every differentiable primitive, every loss,
//! each total-loss composition, and a whole model.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::gradcheck::{self, TOLERANCE};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::losses::{self, LabelPair, LossConfig};
use crate::model::{HeadKind, Mode, Model, ModelConfig, OutputVars};

pub const DEFAULT_SEEDS: u64 = 20;

type Objective = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// One randomized instance: inputs plus the scalar objective over them.
pub struct Problem {
    pub inputs: Vec<Tensor<f64>>,
    pub objective: Objective,
}

/// How a case compares gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Central difference per input coordinate.
    Coordinatewise,
    /// Central difference along random unit directions through all inputs,
    /// restricted to directions whose step stays on one smooth piece.
    Directional,
}

pub struct Case {
    pub name: &'static str,
    pub method: Method,
    pub build: fn(&mut ChaCha8Rng) -> Problem,
}

/// Difference steps of directional cases, tried in order until the
/// difference stays on one side of every relu. Whole-model objectives hold
/// thousands of relu units and some sit within 1e-4 of their kink.
const MODEL_STEPS: [f64; 4] = [1e-4, 1e-5, 1e-6, 1e-7];

/// Directions tried per seed before a directional case counts as failed.
const DIRECTION_ATTEMPTS: usize = 20;
/// Kink-free directions required per seed.
const SMOOTH_DIRECTIONS: usize = 3;

#[derive(Clone, Debug)]
pub struct CaseReport {
    pub name: String,
    pub seeds: u64,
    pub max_rel_err: f64,
    pub seconds: f64,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seeds: u64,
    /// Substring filter on case names.
    pub filter: Option<String>,
    /// Perturb every analytic gradient so each case must fail.
    pub inject_fault: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS,
            filter: None,
            inject_fault: false,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.sample(StandardNormal))
}

fn param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    normal(rng, shape).with_grad()
}

/// Values with `|x| ≥ 0.1`, away from the kinks of relu.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m: f64 = rng.gen_range(0.1..1.5);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
    .with_grad()
}

/// Distinct values with gaps far larger than the difference step.
fn spread(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let data = order.iter().map(|&k| k as f64 * 0.1 + rng.gen_range(0.0..0.02)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape").with_grad()
}

/// Reduces an op output to a scalar through random fixed weights.
fn project(tape: &mut Tape<f64>, v: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

/// Builds a problem whose objective is `Σ R ⊙ op(inputs)` for random `R`.
fn projected(inputs: Vec<Tensor<f64>>, out_shape: &[usize], op: fn(&mut Tape<f64>, &[Var]) -> Result<Var>, rng: &mut ChaCha8Rng) -> Problem {
    let r = normal(rng, out_shape);
    Problem {
        inputs,
        objective: Box::new(move |t, v| {
            let y = op(t, v)?;
            project(t, y, &r)
        }),
    }
}

/// Random labels mixing inlier, outlier and ignored pixels.
fn random_labels(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, nc: usize) -> Vec<LabelPair> {
    (0..n)
        .map(|_| {
            let mut l = LabelPair::filled(h, w, 0);
            for i in 0..h * w {
                match rng.gen_range(0..20) {
                    0..=11 => l.y[i] = rng.gen_range(0..nc) as u8,
                    12..=16 => l.set_outlier(i, nc),
                    _ => l.set_ignore(i),
                }
            }
            l
        })
        .collect()
}

const NC: usize = 3;
const LABEL_HW: usize = 8;

fn loss_problem(rng: &mut ChaCha8Rng, channels: usize, f: fn(&mut Tape<f64>, Var, &[LabelPair]) -> Result<Var>) -> Problem {
    let labels = random_labels(rng, 2, LABEL_HW, LABEL_HW, NC);
    Problem {
        inputs: vec![param(rng, &[2, channels, 4, 4])],
        objective: Box::new(move |t, v| f(t, v[0], &labels)),
    }
}

/// Head outputs for a loss composition, as tape inputs in a fixed order.
fn composition(rng: &mut ChaCha8Rng, kind: HeadKind, interpolate: bool) -> Problem {
    let labels = random_labels(rng, 2, LABEL_HW, LABEL_HW, NC);
    let class_c = if kind == HeadKind::Cplus1 { NC + 1 } else { NC };
    let mut inputs = vec![param(rng, &[2, class_c, 4, 4])];
    let resolutions = [2usize, 4, 8];
    for r in resolutions {
        inputs.push(param(rng, &[2, NC, LABEL_HW / r, LABEL_HW / r]));
    }
    match kind {
        HeadKind::Twohead => inputs.push(param(rng, &[2, 2, 4, 4])),
        HeadKind::Confidence => inputs.push(param(rng, &[2, 1, 4, 4])),
        _ => {}
    }
    let cfg = LossConfig {
        aux_resolutions: resolutions.to_vec(),
        lambda_c: 0.3,
        ..LossConfig::new(NC, kind)
    };
    Problem {
        inputs,
        objective: Box::new(move |t, v| {
            let out = OutputVars {
                class_logits: v[0],
                aux_logits: v[1..4].to_vec(),
                outlier_logits: (kind == HeadKind::Twohead).then(|| v[4]),
                confidence_logits: (kind == HeadKind::Confidence).then(|| v[4]),
            };
            Ok(losses::total_loss(t, kind, &out, &labels, &cfg, NC, interpolate)?.total)
        }),
    }
}

/// Total loss of a small model w.r.t. every one of its parameters.
fn whole_model(rng: &mut ChaCha8Rng, kind: HeadKind) -> Problem {
    let cfg = ModelConfig {
        backbone_widths: [2, 2, 2, 2],
        ..ModelConfig::new(NC, kind)
    };
    let model = Model::<f64>::build(cfg, rng.gen()).expect("valid config");
    // Nudge BN affine parameters off their identity init so gradients w.r.t. them are generic.
    let mut inputs = Vec::new();
    let mut names = Vec::new();
    for (name, t) in model.params() {
        let mut t = t.clone();
        if name.ends_with(".gamma") || name.ends_with(".beta") || name.ends_with(".bias") {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.2..0.2);
            }
        }
        names.push(name.clone());
        inputs.push(t.with_grad());
    }
    // Batch statistics of the 1×1 SPP map need several images to stay smooth.
    let image = normal(rng, &[4, 3, 32, 32]);
    let labels = random_labels(rng, 4, 32, 32, NC);
    let loss_cfg = LossConfig::new(NC, kind);
    Problem {
        inputs,
        objective: Box::new(move |t, v| {
            let params: BTreeMap<String, Var> = names.iter().cloned().zip(v.iter().copied()).collect();
            let x = t.constant(image.clone());
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            let pass = model.forward_with(t, x, Mode::Train, &mut unused, params)?;
            Ok(losses::total_loss(t, kind, &pass.out, &labels, &loss_cfg, NC, true)?.total)
        }),
    }
}

pub fn cases() -> Vec<Case> {
    vec![
        Case {
            method: Method::Coordinatewise,
            name: "add",
            build: |r| projected(vec![param(r, &[3, 4]), param(r, &[3, 4])], &[3, 4], |t, v| t.add(v[0], v[1]), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "sub",
            build: |r| projected(vec![param(r, &[3, 4]), param(r, &[3, 4])], &[3, 4], |t, v| t.sub(v[0], v[1]), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "mul",
            build: |r| projected(vec![param(r, &[3, 4]), param(r, &[3, 4])], &[3, 4], |t, v| t.mul(v[0], v[1]), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "scale",
            build: |r| projected(vec![param(r, &[5])], &[5], |t, v| t.scale(v[0], -1.7), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "add_scalar",
            build: |r| projected(vec![param(r, &[5])], &[5], |t, v| t.add_scalar(v[0], 0.3), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "log",
            build: |r| {
                let x = Tensor::from_fn(vec![6], |_| r.gen_range(0.5..3.0)).with_grad();
                projected(vec![x], &[6], |t, v| t.log(v[0]), r)
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "exp",
            build: |r| projected(vec![param(r, &[6])], &[6], |t, v| t.exp(v[0]), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "relu",
            build: |r| projected(vec![off_kink(r, &[2, 3, 4])], &[2, 3, 4], |t, v| t.relu(v[0]), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "sigmoid",
            build: |r| projected(vec![param(r, &[8])], &[8], |t, v| t.sigmoid(v[0]), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "log_sigmoid",
            build: |r| projected(vec![param(r, &[8])], &[8], |t, v| t.log_sigmoid(v[0]), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "conv2d 3x3 s1 p1",
            build: |r| {
                let inputs = vec![param(r, &[2, 3, 8, 8]), param(r, &[4, 3, 3, 3])];
                projected(inputs, &[2, 4, 8, 8], |t, v| t.conv2d(v[0], v[1], 1, 1), r)
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "conv2d sum",
            build: |r| Problem {
                inputs: vec![param(r, &[2, 3, 8, 8]), param(r, &[4, 3, 3, 3])],
                objective: Box::new(|t, v| {
                    let y = t.conv2d(v[0], v[1], 1, 1)?;
                    t.sum(y)
                }),
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "conv2d 3x3 s2 p0",
            build: |r| {
                let inputs = vec![param(r, &[2, 3, 9, 9]), param(r, &[2, 3, 3, 3])];
                projected(inputs, &[2, 2, 4, 4], |t, v| t.conv2d(v[0], v[1], 2, 0), r)
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "conv2d 1x1",
            build: |r| {
                let inputs = vec![param(r, &[2, 3, 5, 5]), param(r, &[4, 3, 1, 1])];
                projected(inputs, &[2, 4, 5, 5], |t, v| t.conv2d(v[0], v[1], 1, 0), r)
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "add_channel_bias",
            build: |r| projected(vec![param(r, &[2, 3, 2, 2]), param(r, &[3])], &[2, 3, 2, 2], |t, v| t.add_channel_bias(v[0], v[1]), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "bilinear_upsample x2",
            build: |r| projected(vec![param(r, &[2, 2, 3, 4])], &[2, 2, 6, 8], |t, v| t.bilinear_upsample(v[0], 2), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "bilinear_upsample x4",
            build: |r| projected(vec![param(r, &[1, 2, 2, 2])], &[1, 2, 8, 8], |t, v| t.bilinear_upsample(v[0], 4), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "resize_bilinear",
            build: |r| projected(vec![param(r, &[1, 2, 2, 3])], &[1, 2, 5, 4], |t, v| t.resize_bilinear(v[0], 5, 4), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "adaptive_avg_pool",
            build: |r| projected(vec![param(r, &[2, 2, 8, 8])], &[2, 2, 4, 2], |t, v| t.adaptive_avg_pool(v[0], 4, 2), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "adaptive_avg_pool global",
            build: |r| projected(vec![param(r, &[2, 3, 4, 4])], &[2, 3, 1, 1], |t, v| t.adaptive_avg_pool(v[0], 1, 1), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "concat",
            build: |r| {
                let inputs = vec![param(r, &[2, 1, 3, 3]), param(r, &[2, 3, 3, 3])];
                projected(inputs, &[2, 4, 3, 3], |t, v| t.concat(&[v[0], v[1]], 1), r)
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "batch_norm train",
            build: |r| {
                let inputs = vec![param(r, &[3, 2, 3, 3]), param(r, &[2]), param(r, &[2])];
                projected(inputs, &[3, 2, 3, 3], |t, v| Ok(t.batch_norm_train(v[0], v[1], v[2])?.0), r)
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "batch_norm eval",
            build: |r| {
                let mean = normal(r, &[2]);
                let var = Tensor::from_fn(vec![2], |_| r.gen_range(0.5..2.0));
                let w = normal(r, &[2, 2, 3, 3]);
                Problem {
                    inputs: vec![param(r, &[2, 2, 3, 3]), param(r, &[2]), param(r, &[2])],
                    objective: Box::new(move |t, v| {
                        let y = t.batch_norm_eval(v[0], v[1], v[2], &mean, &var)?;
                        project(t, y, &w)
                    }),
                }
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "softmax",
            build: |r| projected(vec![param(r, &[2, 4, 3])], &[2, 4, 3], |t, v| t.softmax(v[0], 1), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "log_softmax",
            build: |r| projected(vec![param(r, &[2, 4, 3])], &[2, 4, 3], |t, v| t.log_softmax(v[0], 1), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "sum",
            build: |r| Problem {
                inputs: vec![param(r, &[3, 3])],
                objective: Box::new(|t, v| {
                    let sq = t.mul(v[0], v[0])?;
                    t.sum(sq)
                }),
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "mean",
            build: |r| Problem {
                inputs: vec![param(r, &[3, 3])],
                objective: Box::new(|t, v| {
                    let e = t.exp(v[0])?;
                    t.mean(e)
                }),
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "sum_axis",
            build: |r| projected(vec![param(r, &[2, 3, 4])], &[2, 1, 4], |t, v| t.sum_axis(v[0], 1), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "max_axis",
            build: |r| projected(vec![spread(r, &[2, 3, 4])], &[2, 3, 1], |t, v| t.max_axis(v[0], 2), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "expand_axis",
            build: |r| projected(vec![param(r, &[2, 1, 3])], &[2, 4, 3], |t, v| t.expand_axis(v[0], 1, 4), r),
        },
        Case {
            method: Method::Coordinatewise,
            name: "linear",
            build: |r| {
                let inputs = vec![param(r, &[3, 5]), param(r, &[4, 5]), param(r, &[4])];
                projected(inputs, &[3, 4], |t, v| t.linear(v[0], v[1], v[2]), r)
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "dropout",
            build: |r| {
                let seed: u64 = r.gen();
                let w = normal(r, &[4, 5]);
                Problem {
                    inputs: vec![param(r, &[4, 5])],
                    objective: Box::new(move |t, v| {
                        let y = t.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(seed))?;
                        project(t, y, &w)
                    }),
                }
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "L_MC",
            build: |r| loss_problem(r, NC, |t, v, l| losses::loss_mc(t, v, l, &[1.0, 0.5, 2.0], None)),
        },
        Case {
            method: Method::Coordinatewise,
            name: "L_MC cplus1",
            build: |r| loss_problem(r, NC + 1, |t, v, l| losses::loss_mc(t, v, l, &[1.0, 1.0, 1.0, 0.05], Some(NC))),
        },
        Case {
            method: Method::Coordinatewise,
            name: "L_ML",
            build: |r| loss_problem(r, NC, losses::loss_ml),
        },
        Case {
            method: Method::Coordinatewise,
            name: "L_AUX",
            build: |r| {
                let labels = random_labels(r, 2, LABEL_HW, LABEL_HW, NC);
                Problem {
                    inputs: vec![param(r, &[2, NC, 4, 4]), param(r, &[2, NC, 2, 2])],
                    objective: Box::new(move |t, v| losses::loss_aux(t, v, &[2, 4], &labels, NC)),
                }
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "L_TH",
            build: |r| loss_problem(r, 2, losses::loss_th),
        },
        Case {
            method: Method::Coordinatewise,
            name: "L_KL",
            build: |r| loss_problem(r, NC, losses::loss_kl),
        },
        Case {
            method: Method::Coordinatewise,
            name: "L_C",
            build: |r| loss_problem(r, 1, |t, v, l| losses::loss_conf_logits(t, v, l, NC)),
        },
        Case {
            method: Method::Coordinatewise,
            name: "L_C on probabilities",
            build: |r| {
                let labels = random_labels(r, 2, LABEL_HW, LABEL_HW, NC);
                let c = Tensor::from_fn(vec![2, 1, 8, 8], |_| r.gen_range(0.2..0.95)).with_grad();
                Problem {
                    inputs: vec![c],
                    objective: Box::new(move |t, v| losses::loss_conf(t, v[0], &labels, NC)),
                }
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "L_MC interpolated",
            build: |r| {
                let labels = random_labels(r, 2, LABEL_HW, LABEL_HW, NC);
                Problem {
                    inputs: vec![param(r, &[2, NC, 4, 4]), param(r, &[2, 1, 4, 4])],
                    objective: Box::new(move |t, v| losses::loss_mc_interpolated(t, v[0], v[1], &labels, &[1.0; NC])),
                }
            },
        },
        Case {
            method: Method::Coordinatewise,
            name: "total multiclass",
            build: |r| composition(r, HeadKind::Multiclass, false),
        },
        Case {
            method: Method::Coordinatewise,
            name: "total multilabel",
            build: |r| composition(r, HeadKind::Multilabel, false),
        },
        Case {
            method: Method::Coordinatewise,
            name: "total cplus1",
            build: |r| composition(r, HeadKind::Cplus1, false),
        },
        Case {
            method: Method::Coordinatewise,
            name: "total twohead",
            build: |r| composition(r, HeadKind::Twohead, false),
        },
        Case {
            method: Method::Coordinatewise,
            name: "total confidence",
            build: |r| composition(r, HeadKind::Confidence, false),
        },
        Case {
            method: Method::Coordinatewise,
            name: "total confidence interpolated",
            build: |r| composition(r, HeadKind::Confidence, true),
        },
        Case {
            method: Method::Directional,
            name: "model twohead params",
            build: |r| whole_model(r, HeadKind::Twohead),
        },
        Case {
            method: Method::Directional,
            name: "model confidence params",
            build: |r| whole_model(r, HeadKind::Confidence),
        },
    ]
}

fn case_seed(name: &str, seed: u64) -> u64 {
    name.bytes().fold(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15), |h, b| h.rotate_left(5) ^ b as u64)
}

fn unit_direction(rng: &mut ChaCha8Rng, inputs: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let mut dirs: Vec<Tensor<f64>> = inputs.iter().filter(|t| t.requires_grad).map(|t| normal(rng, t.shape())).collect();
    let norm = dirs.iter().flat_map(|d| d.data()).map(|v| v * v).sum::<f64>().sqrt();
    for d in &mut dirs {
        for v in d.data_mut() {
            *v /= norm;
        }
    }
    dirs
}

/// Worst error over [`SMOOTH_DIRECTIONS`] kink-free directions; infinite
/// when too few are found.
fn directional_error(p: &Problem, rng: &mut ChaCha8Rng, corrupt: Option<&dyn Fn(&mut [Tensor<f64>])>) -> Result<f64> {
    let mut found = 0;
    let mut worst = 0.0f64;
    for _ in 0..DIRECTION_ATTEMPTS {
        let u = unit_direction(rng, &p.inputs);
        for &step in &MODEL_STEPS {
            let d = gradcheck::directional(&p.inputs, &p.objective, &u, step, corrupt)?;
            if d.smooth {
                worst = worst.max(d.rel_err);
                found += 1;
                break;
            }
        }
        if found == SMOOTH_DIRECTIONS {
            return Ok(worst);
        }
    }
    Ok(f64::INFINITY)
}

pub fn run_case(case: &Case, seeds: u64, inject_fault: bool) -> Result<CaseReport> {
    let start = Instant::now();
    let bump = |g: &mut [Tensor<f64>]| {
        for t in g.iter_mut() {
            for v in t.data_mut() {
                *v += 0.01 * (1.0 + v.abs());
            }
        }
    };
    let corrupt: Option<&dyn Fn(&mut [Tensor<f64>])> = if inject_fault { Some(&bump) } else { None };
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed(case.name, seed));
        let p = (case.build)(&mut rng);
        let err = match case.method {
            Method::Coordinatewise => gradcheck::max_relative_error(&p.inputs, &p.objective, corrupt)?,
            Method::Directional => directional_error(&p, &mut rng, corrupt)?,
        };
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    Ok(CaseReport {
        name: case.name.to_string(),
        seeds,
        max_rel_err: worst,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn run(opts: &SuiteOptions) -> Result<Vec<CaseReport>> {
    cases()
        .iter()
        .filter(|c| opts.filter.as_deref().is_none_or(|f| c.name.contains(f)))
        .map(|c| run_case(c, opts.seeds, opts.inject_fault))
        .collect()
}

/// Plain-text table of case results.
pub fn render(reports: &[CaseReport]) -> String {
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:<width$}  {:>5}  {:>10}  {:>7}  result\n", "case", "seeds", "rel err", "secs");
    for r in reports {
        s.push_str(&format!(
            "{:<width$}  {:>5}  {:>10.3e}  {:>7.2}  {}\n",
            r.name,
            r.seeds,
            r.max_rel_err,
            r.seconds,
            if r.passed() { "pass" } else { "FAIL" }
        ));
    }
    s
}
