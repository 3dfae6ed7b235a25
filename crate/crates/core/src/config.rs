//! Strict flat `key = value` configuration files.
//!
//! `#` starts a comment. Every key may appear once; unknown keys are errors.
//! Dataset fields inside a training config carry a `train.` or
//! `negatives.` prefix.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DatasetKind, DatasetSpec, SourceTag};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{HeadKind, ModelConfig};
use crate::trainer::{NegativesMode, TrainConfig};

/// Parsed pairs with their line numbers; keys are consumed as they are read.
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {line_no}: empty key")));
            }
            if let Some((first, _)) = entries.get(key) {
                return Err(Error::Config(format!("line {line_no}: duplicate key `{key}` (first set on line {first})")));
            }
            entries.insert(key.to_string(), (line_no, value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    fn take_raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    /// Removes and parses `key`, if present.
    pub fn optional<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take_raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("line {line}: bad value `{v}` for `{key}`: {e}"))),
        }
    }

    pub fn required<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.optional(key)?.ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    /// Comma-separated list.
    pub fn optional_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take_raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|p| p.trim().parse::<T>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|e| Error::Config(format!("line {line}: bad list `{v}` for `{key}`: {e}"))),
        }
    }

    /// Whether any key starts with `prefix`.
    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.entries.keys().any(|k| k.starts_with(prefix))
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().min_by_key(|(_, (line, _))| *line) {
            Some((key, (line, _))) => Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
            None => Ok(()),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Reads the dataset keys under `prefix`; `num_classes` may be inherited.
/// Relative directory paths resolve against `base`.
fn dataset_spec(kv: &mut KeyValues, prefix: &str, num_classes: Option<usize>, base: &Path) -> Result<DatasetSpec> {
    let key = |k: &str| format!("{prefix}{k}");
    let kind: DatasetKind = kv.required(&key("kind"))?;
    let nc = match (kv.optional::<usize>(&key("num_classes"))?, num_classes) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Config(format!("`{}` is {a} but num_classes is {b}", key("num_classes"))));
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(Error::Config(format!("missing required key `{}`", key("num_classes")))),
    };
    let mut spec = match kind {
        DatasetKind::Synthetic => {
            let role: SourceTag = kv.required(&key("role"))?;
            let size = kv.required(&key("image_size"))?;
            let count = kv.required(&key("count"))?;
            let seed = kv.required(&key("seed"))?;
            DatasetSpec::synthetic(role, nc, size, count, seed)
        }
        DatasetKind::Directory => {
            let path: PathBuf = kv.required(&key("path"))?;
            DatasetSpec::directory(base.join(path), nc)
        }
    };
    if let Some(t) = kv.optional(&key("texture"))? {
        spec.texture = t;
    }
    if let Some(m) = kv.optional(&key("max_objects"))? {
        spec.max_objects = m;
    }
    if kind == DatasetKind::Directory {
        for k in ["role", "image_size", "count", "seed"] {
            if kv.take_raw(&key(k)).is_some() {
                return Err(Error::Config(format!("`{}` does not apply to directory datasets", key(k))));
            }
        }
    } else if kv.take_raw(&key("path")).is_some() {
        return Err(Error::Config(format!("`{}` does not apply to synthetic datasets", key("path"))));
    }
    spec.validate()?;
    Ok(spec)
}

/// Parses a standalone dataset spec (the `gen` command input).
pub fn parse_dataset_spec(text: &str, base: &Path) -> Result<DatasetSpec> {
    let mut kv = KeyValues::parse(text)?;
    let spec = dataset_spec(&mut kv, "", None, base)?;
    kv.finish()?;
    Ok(spec)
}

pub fn load_dataset_spec(path: &Path) -> Result<DatasetSpec> {
    let base = path.parent().unwrap_or(Path::new("."));
    with_path(path, parse_dataset_spec(&read(path)?, base))
}

/// A training run: hyperparameters plus its data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSetup {
    pub config: TrainConfig,
    pub train: DatasetSpec,
    pub negatives: Option<DatasetSpec>,
}

/// Parses a training config. `seed_override` beats the file's `seed`.
pub fn parse_train_config(text: &str, base: &Path, seed_override: Option<u64>) -> Result<TrainSetup> {
    let mut kv = KeyValues::parse(text)?;
    let num_classes: usize = kv.required("num_classes")?;
    let head_kind: HeadKind = kv.required("head_kind")?;
    let mut cfg = TrainConfig::new(num_classes, head_kind);
    cfg.epochs = kv.required("epochs")?;
    cfg.batch_size = kv.required("batch_size")?;
    cfg.learning_rate = kv.required("learning_rate")?;
    let seed: u64 = kv.required("seed")?;
    cfg.seed = seed_override.unwrap_or(seed);
    cfg.paste = kv.required("paste")?;
    cfg.negatives_mode = kv.required("negatives_mode")?;
    if let Some(v) = kv.optional("pretrained_lr_divisor")? {
        cfg.pretrained_lr_divisor = v;
    }
    if let Some(v) = kv.optional("adam_beta1")? {
        cfg.adam_betas.0 = v;
    }
    if let Some(v) = kv.optional("adam_beta2")? {
        cfg.adam_betas.1 = v;
    }
    if let Some(v) = kv.optional("adam_eps")? {
        cfg.adam_eps = v;
    }
    if let Some(v) = kv.optional("threshold")? {
        cfg.threshold = v;
    }
    if let Some(v) = kv.optional("crop")? {
        cfg.crop = v;
    }
    if let Some(v) = kv.optional("interpolate")? {
        cfg.interpolate = v;
    }

    let mut model = ModelConfig::new(num_classes, head_kind);
    if let Some(w) = kv.optional_list::<usize>("widths")? {
        model.backbone_widths = w
            .try_into()
            .map_err(|w: Vec<usize>| Error::Config(format!("`widths` needs 4 entries, got {}", w.len())))?;
    }
    if let Some(p) = kv.optional("dropout_p")? {
        model.dropout_p = p;
    }
    cfg.model = model;

    let mut loss = LossConfig::new(num_classes, head_kind);
    for (key, slot) in [
        ("lambda_mc", &mut loss.lambda_mc),
        ("lambda_ml", &mut loss.lambda_ml),
        ("lambda_aux", &mut loss.lambda_aux),
        ("lambda_th", &mut loss.lambda_th),
        ("lambda_kl", &mut loss.lambda_kl),
        ("lambda_c", &mut loss.lambda_c),
        ("beta", &mut loss.beta),
    ] {
        if let Some(v) = kv.optional(key)? {
            *slot = v;
        }
    }
    if let Some(w) = kv.optional_list("class_weights")? {
        if w.len() != loss.class_weights.len() {
            return Err(Error::Config(format!("`class_weights` needs {} entries, got {}", loss.class_weights.len(), w.len())));
        }
        loss.class_weights = w;
    }
    if let Some(r) = kv.optional_list("aux_resolutions")? {
        loss.aux_resolutions = r;
    }
    cfg.loss = loss;

    let train = dataset_spec(&mut kv, "train.", Some(num_classes), base)?;
    let negatives = match cfg.negatives_mode {
        NegativesMode::None => {
            if kv.has_prefix("negatives.") {
                return Err(Error::Config("negatives.* keys given but negatives_mode = none".into()));
            }
            None
        }
        _ => Some(dataset_spec(&mut kv, "negatives.", Some(num_classes), base)?),
    };
    kv.finish()?;
    cfg.validate()?;
    Ok(TrainSetup { config: cfg, train, negatives })
}

pub fn load_train_config(path: &Path, seed_override: Option<u64>) -> Result<TrainSetup> {
    let base = path.parent().unwrap_or(Path::new("."));
    with_path(path, parse_train_config(&read(path)?, base, seed_override))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
# toy run
num_classes = 4
head_kind = twohead
epochs = 2
batch_size = 8
learning_rate = 4e-4
seed = 3
paste = true
negatives_mode = full
widths = 8, 8, 16, 16
train.kind = synthetic
train.role = inlier
train.image_size = 64
train.count = 20
train.seed = 1
negatives.kind = synthetic
negatives.role = negative
negatives.image_size = 64
negatives.count = 10
negatives.seed = 2   # trailing comment
";

    fn parse(text: &str) -> Result<TrainSetup> {
        parse_train_config(text, Path::new("/data"), None)
    }

    #[test]
    fn full_config_parses() {
        let s = parse(BASE).unwrap();
        assert_eq!(s.config.seed, 3);
        assert_eq!(s.config.head_kind(), HeadKind::Twohead);
        assert_eq!(s.config.model.backbone_widths, [8, 8, 16, 16]);
        assert_eq!(s.config.pretrained_lr_divisor, 4.0);
        assert_eq!(s.config.threshold, 0.5);
        assert_eq!(s.train.count, 20);
        assert_eq!(s.negatives.unwrap().role, SourceTag::Negative);
    }

    #[test]
    fn missing_key_is_named() {
        let text = BASE.replace("epochs = 2\n", "");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("`epochs`"), "{err}");
        let text = BASE.replace("train.count = 20\n", "");
        assert!(parse(&text).unwrap_err().to_string().contains("`train.count`"));
    }

    #[test]
    fn duplicate_and_unknown_keys_are_rejected() {
        let err = parse(&format!("{BASE}epochs = 3\n")).unwrap_err().to_string();
        assert!(err.contains("duplicate key `epochs`"), "{err}");
        let err = parse(&format!("{BASE}learning_rat = 1\n")).unwrap_err().to_string();
        assert!(err.contains("unknown key `learning_rat`"), "{err}");
        assert!(parse(&format!("{BASE}garbage line\n")).is_err());
    }

    #[test]
    fn seed_override_wins() {
        let s = parse_train_config(BASE, Path::new("."), Some(99)).unwrap();
        assert_eq!(s.config.seed, 99);
    }

    #[test]
    fn bad_values_are_reported_with_lines() {
        let err = parse(&BASE.replace("paste = true", "paste = yes")).unwrap_err().to_string();
        assert!(err.contains("line 8") && err.contains("paste"), "{err}");
        assert!(parse(&BASE.replace("widths = 8, 8, 16, 16", "widths = 8, 8")).is_err());
        assert!(parse(&BASE.replace("head_kind = twohead", "head_kind = threehead")).is_err());
    }

    #[test]
    fn no_negatives_mode() {
        let text = BASE.replace("negatives_mode = full", "negatives_mode = none");
        assert!(parse(&text).unwrap_err().to_string().contains("negatives"));
        let trimmed: String = text.lines().filter(|l| !l.starts_with("negatives.")).map(|l| format!("{l}\n")).collect();
        assert!(parse(&trimmed).unwrap().negatives.is_none());
    }

    #[test]
    fn directory_specs_resolve_relative_paths() {
        let spec = parse_dataset_spec("kind = directory\nnum_classes = 4\npath = toy\n", Path::new("/data")).unwrap();
        assert_eq!(spec.path.as_deref(), Some(Path::new("/data/toy")));
        assert!(parse_dataset_spec("kind = directory\nnum_classes = 4\npath = toy\nseed = 1\n", Path::new(".")).is_err());
        let spec = parse_dataset_spec(
            "kind = synthetic\nrole = negative_bb\nnum_classes = 3\nimage_size = 32\ncount = 5\nseed = 7\ntexture = 4\n",
            Path::new("."),
        )
        .unwrap();
        assert_eq!((spec.role, spec.texture), (SourceTag::NegativeBb, 4.0));
    }
}
