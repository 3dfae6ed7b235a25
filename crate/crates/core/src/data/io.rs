//! On-disk datasets: RGB PNG images, single-channel PNG label maps and a
//! JSON manifest.
//!
//! Label PNG values `0..N_C` are classes, 254 marks outliers and 255 marks
//! ignored pixels.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{from_rgb8, to_rgb8, DatasetKind, DatasetSpec, Sample, SampleSource, SourceTag};
use crate::error::{Error, Result};
use crate::imageio::{read_png, write_png};
use crate::losses::{LabelPair, IGNORE_LABEL, Z_IGNORE, Z_INLIER, Z_OUTLIER};

pub const MANIFEST_FILE: &str = "manifest.json";
const OUTLIER_CODE: u8 = 254;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub label: String,
    pub source: SourceTag,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: usize,
    pub pairs: Vec<ManifestEntry>,
}

/// Label-map byte per pixel.
pub fn encode_label(labels: &LabelPair, num_classes: usize) -> Vec<u8> {
    labels
        .y
        .iter()
        .zip(&labels.z)
        .map(|(&y, &z)| match z {
            Z_OUTLIER => OUTLIER_CODE,
            Z_INLIER if (y as usize) < num_classes => y,
            _ => IGNORE_LABEL,
        })
        .collect()
}

/// Inverse of [`encode_label`]; values between `N_C` and 253 are rejected.
pub fn decode_label(height: usize, width: usize, codes: &[u8], num_classes: usize) -> Result<LabelPair> {
    let mut y = Vec::with_capacity(codes.len());
    let mut z = Vec::with_capacity(codes.len());
    for &v in codes {
        let (a, b) = match v {
            OUTLIER_CODE => (num_classes as u8, Z_OUTLIER),
            IGNORE_LABEL => (IGNORE_LABEL, Z_IGNORE),
            v if (v as usize) < num_classes => (v, Z_INLIER),
            v => return Err(Error::invalid("labels", format!("label value {v} is neither a class below {num_classes} nor 254/255"))),
        };
        y.push(a);
        z.push(b);
    }
    LabelPair::new(height, width, y, z)
}

/// Writes `count` samples of `source` as PNG pairs plus a manifest.
pub fn write_dataset(source: &dyn SampleSource, num_classes: usize, count: usize, out: &Path) -> Result<Manifest> {
    for sub in ["images", "labels"] {
        fs::create_dir_all(out.join(sub)).map_err(|e| Error::io(out.join(sub), e))?;
    }
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let s = source.sample(i)?;
        let entry = ManifestEntry {
            image: format!("images/{i:05}.png"),
            label: format!("labels/{i:05}.png"),
            source: s.source,
        };
        write_png(&out.join(&entry.image), s.width(), s.height(), 3, &to_rgb8(&s.image)?)?;
        write_png(&out.join(&entry.label), s.width(), s.height(), 1, &encode_label(&s.labels, num_classes))?;
        pairs.push(entry);
    }
    let manifest = Manifest { num_classes, pairs };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A manifest-described directory; samples are decoded on access.
#[derive(Clone, Debug)]
pub struct DirectoryDataset {
    root: PathBuf,
    num_classes: usize,
    entries: Vec<ManifestEntry>,
    skipped: Vec<(PathBuf, String)>,
}

impl DirectoryDataset {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Pairs left out because a file was missing or malformed.
    pub fn skipped(&self) -> &[(PathBuf, String)] {
        &self.skipped
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    fn decode(&self, entry: &ManifestEntry) -> Result<Sample> {
        let image_path = self.root.join(&entry.image);
        let label_path = self.root.join(&entry.label);
        let img = read_png(&image_path)?;
        let lbl = read_png(&label_path)?;
        if img.channels != 3 {
            return Err(Error::format(&image_path, "expected an RGB image"));
        }
        if lbl.channels != 1 {
            return Err(Error::format(&label_path, "expected a single-channel label map"));
        }
        if (img.width, img.height) != (lbl.width, lbl.height) {
            return Err(Error::format(
                &label_path,
                format!("label map is {}x{} but the image is {}x{}", lbl.width, lbl.height, img.width, img.height),
            ));
        }
        let labels =
            decode_label(lbl.height, lbl.width, &lbl.data, self.num_classes).map_err(|e| Error::format(&label_path, e.to_string()))?;
        Sample::new(from_rgb8(img.height, img.width, &img.data)?, labels, entry.source)
    }
}

impl SampleSource for DirectoryDataset {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        let entry = self.entries.get(index).ok_or_else(|| Error::invalid("directory", format!("index {index} out of range")))?;
        self.decode(entry)
    }
}

/// Reads the manifest under `spec.path` and keeps every pair that decodes;
/// the rest are listed in [`DirectoryDataset::skipped`].
pub fn load_directory(spec: &DatasetSpec) -> Result<DirectoryDataset> {
    if spec.kind != DatasetKind::Directory {
        return Err(Error::invalid("load_directory", "spec is not a directory dataset"));
    }
    let root = spec.path.clone().ok_or_else(|| Error::invalid("load_directory", "directory datasets need a path"))?;
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.num_classes != spec.num_classes {
        return Err(Error::format(
            &path,
            format!("manifest declares {} classes, spec expects {}", manifest.num_classes, spec.num_classes),
        ));
    }
    let mut ds = DirectoryDataset {
        root,
        num_classes: manifest.num_classes,
        entries: Vec::new(),
        skipped: Vec::new(),
    };
    for entry in manifest.pairs {
        match ds.decode(&entry) {
            Ok(_) => ds.entries.push(entry),
            Err(e) => ds.skipped.push((ds.root.join(&entry.label), e.to_string())),
        }
    }
    Ok(ds)
}
