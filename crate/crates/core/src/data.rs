//! Datasets on disk and the synthetic ambiguity benchmark.
//!
//! A split is a JSON manifest plus a binary feature file holding one row per
//! manifest record, in record order.
//!
//! # Feature file layout
//!
//! Little-endian throughout:
//!
//! | offset | size  | field                  |
//! |--------|-------|------------------------|
//! | 0      | 4     | magic `SPMF`           |
//! | 4      | 2     | format version (`1`)   |
//! | 6      | 2     | reserved, zero         |
//! | 8      | 4     | row count `N` (u32)    |
//! | 12     | 4     | dimension `D` (u32)    |
//! | 16     | 4·N·D | row-major `f32` values |
//!
//! # Manifest schema
//!
//! ```json
//! {
//!   "version": 1,
//!   "name": "confusing-synthetic",
//!   "split": "train",
//!   "features": "train.spmf",
//!   "num_classes": 4,
//!   "records": [ { "id": 0, "labels": [1], "true_labels": [0, 1] } ]
//! }
//! ```
//!
//! `features` is resolved relative to the manifest's directory. Train and val
//! records carry exactly one label; test records carry a non-empty label set.
//! The optional `true_labels` holds the full label set of a singly-labelled
//! record where it is known (synthetic data), and must contain `labels[0]`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{DenseMatrix, RandomSource};

pub const MANIFEST_VERSION: u32 = 1;
const FEATURE_MAGIC: &[u8; 4] = b"SPMF";
const FEATURE_VERSION: u16 = 1;
pub const FEATURE_HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: u64,
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub name: String,
    pub split: SplitKind,
    pub features: PathBuf,
    pub num_classes: usize,
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::domain(msg));
        if self.version != MANIFEST_VERSION {
            return fail(format!("unsupported manifest version {}", self.version));
        }
        if self.num_classes == 0 {
            return fail("num_classes must be positive".into());
        }
        let c = self.num_classes;
        for (i, r) in self.records.iter().enumerate() {
            match self.split {
                SplitKind::Train | SplitKind::Val if r.labels.len() != 1 => {
                    return fail(format!(
                        "{} record {i} (id {}) has {} labels, expected exactly 1",
                        self.split.name(),
                        r.id,
                        r.labels.len()
                    ));
                }
                SplitKind::Test if r.labels.is_empty() => {
                    return fail(format!("test record {i} (id {}) has no labels", r.id));
                }
                _ => {}
            }
            let all = r.labels.iter().chain(r.true_labels.iter().flatten());
            if let Some(bad) = all.clone().find(|&&l| l >= c) {
                return fail(format!(
                    "record {i} (id {}): label {bad} outside [0, {c})",
                    r.id
                ));
            }
            if let Some(truth) = &r.true_labels {
                if r.labels.iter().any(|l| !truth.contains(l)) {
                    return fail(format!(
                        "record {i} (id {}): labels {:?} not within true_labels {truth:?}",
                        r.id, r.labels
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// First label of every record (the single label for train/val).
    pub fn single_labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.labels[0]).collect()
    }

    pub fn label_sets(&self) -> Vec<Vec<usize>> {
        self.records.iter().map(|r| r.labels.clone()).collect()
    }

    /// `true_labels` of every record, if every record has them.
    pub fn true_label_sets(&self) -> Option<Vec<Vec<usize>>> {
        self.records.iter().map(|r| r.true_labels.clone()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialisation");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Parses and validates a manifest. The returned `features` path is resolved
/// against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    manifest
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    if manifest.features.is_relative() {
        if let Some(dir) = path.parent() {
            manifest.features = dir.join(&manifest.features);
        }
    }
    Ok(manifest)
}

pub fn write_features(matrix: &DenseMatrix, path: &Path) -> Result<()> {
    let (n, d) = matrix.shape();
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::shape(format!("{v} does not fit the u32 header")))
    };
    let mut bytes = Vec::with_capacity(FEATURE_HEADER_BYTES + 4 * n * d);
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&0u16.to_le_bytes());
    bytes.extend_from_slice(&to_u32(n)?.to_le_bytes());
    bytes.extend_from_slice(&to_u32(d)?.to_le_bytes());
    for (i, &v) in matrix.as_slice().iter().enumerate() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::domain(format!(
                "value {v} at ({}, {}) is not representable as f32",
                i / d,
                i % d
            )));
        }
        bytes.extend_from_slice(&narrow.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<DenseMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_features(&bytes).map_err(|msg| Error::format(path, msg))
}

fn parse_features(bytes: &[u8]) -> std::result::Result<DenseMatrix, String> {
    if bytes.len() < FEATURE_HEADER_BYTES {
        return Err(format!(
            "header needs {FEATURE_HEADER_BYTES} bytes, file has {}",
            bytes.len()
        ));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(format!("bad magic {:?} at byte 0, expected \"SPMF\"", &bytes[0..4]));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(format!("unsupported version {version} at byte 4"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|b| b.checked_add(FEATURE_HEADER_BYTES))
        .ok_or_else(|| format!("N={n} x D={d} overflows (header bytes 8..16)"))?;
    if bytes.len() != expected {
        return Err(format!(
            "N={n}, D={d} needs {expected} bytes, file has {}",
            bytes.len()
        ));
    }
    let mut values = Vec::with_capacity(n * d);
    for (k, chunk) in bytes[FEATURE_HEADER_BYTES..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(format!(
                "non-finite value at byte {}",
                FEATURE_HEADER_BYTES + 4 * k
            ));
        }
        values.push(f64::from(v));
    }
    DenseMatrix::from_vec(n, d, values).map_err(|e| e.to_string())
}

/// A manifest with its features loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub manifest: DatasetManifest,
    pub features: DenseMatrix,
}

impl Split {
    pub fn new(manifest: DatasetManifest, features: DenseMatrix) -> Result<Self> {
        manifest.validate()?;
        if features.rows() != manifest.len() {
            return Err(Error::shape(format!(
                "{} split: {} feature rows for {} records",
                manifest.split.name(),
                features.rows(),
                manifest.len()
            )));
        }
        Ok(Self { manifest, features })
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = load_manifest(manifest_path)?;
        let features = read_features(&manifest.features)?;
        Self::new(manifest, features).map_err(|e| Error::format(manifest_path, e.to_string()))
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    /// Writes `<dir>/<stem>.json` and `<dir>/<stem>.spmf`; returns the manifest path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        let feature_name = format!("{stem}.spmf");
        write_features(&self.features, &dir.join(&feature_name))?;
        let manifest = DatasetManifest {
            features: PathBuf::from(feature_name),
            ..self.manifest.clone()
        };
        let path = dir.join(format!("{stem}.json"));
        manifest.save(&path)?;
        Ok(path)
    }
}

/// Train, validation and test splits over one label space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl Dataset {
    pub fn new(train: Split, val: Split, test: Split) -> Result<Self> {
        let expect = [
            (&train, SplitKind::Train),
            (&val, SplitKind::Val),
            (&test, SplitKind::Test),
        ];
        for (split, kind) in expect {
            if split.manifest.split != kind {
                return Err(Error::config(format!(
                    "expected a {} manifest, got {}",
                    kind.name(),
                    split.manifest.split.name()
                )));
            }
            if split.num_classes() != train.num_classes() || split.dim() != train.dim() {
                return Err(Error::shape(format!(
                    "{} split has C={}, D={}; train has C={}, D={}",
                    kind.name(),
                    split.num_classes(),
                    split.dim(),
                    train.num_classes(),
                    train.dim()
                )));
            }
            if split.is_empty() {
                return Err(Error::config(format!("{} split is empty", kind.name())));
            }
        }
        Ok(Self { train, val, test })
    }

    pub fn load(train: &Path, val: &Path, test: &Path) -> Result<Self> {
        Self::new(Split::load(train)?, Split::load(val)?, Split::load(test)?)
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    /// Writes `train`, `val` and `test` manifests and feature files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<[PathBuf; 3]> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok([
            self.train.save(dir, "train")?,
            self.val.save(dir, "val")?,
            self.test.save(dir, "test")?,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Ambiguity {
    /// Each base class `c` becomes the twins `2c` and `2c + 1`.
    ConfusingSplit,
    /// Each base class becomes `group_size` interchangeable classes.
    OverlapGroups { group_size: usize },
}

/// Gaussian-cluster benchmark settings. Every base class owns one cluster
/// centre drawn from N(0, center_scale²) per dimension; instances add
/// N(0, cluster_std²) noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub base_classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub cluster_std: f64,
    pub center_scale: f64,
    pub ambiguity: Ambiguity,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            base_classes: 20,
            train_per_class: 30,
            val_per_class: 10,
            test_per_class: 10,
            dim: 32,
            cluster_std: 1.0,
            center_scale: 1.0,
            ambiguity: Ambiguity::ConfusingSplit,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn group_size(&self) -> usize {
        match self.ambiguity {
            Ambiguity::ConfusingSplit => 2,
            Ambiguity::OverlapGroups { group_size } => group_size,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.base_classes * self.group_size()
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("base_classes", self.base_classes),
            ("train_per_class", self.train_per_class),
            ("val_per_class", self.val_per_class),
            ("test_per_class", self.test_per_class),
            ("dim", self.dim),
            ("group_size", self.group_size()),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be at least 1")));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::config(format!(
                "cluster_std must be positive, got {}",
                self.cluster_std
            )));
        }
        if !(self.center_scale >= 0.0 && self.center_scale.is_finite()) {
            return Err(Error::config(format!(
                "center_scale must be non-negative, got {}",
                self.center_scale
            )));
        }
        Ok(())
    }
}

/// Confusing-split benchmark: `C = 2·C₀`; train/val instances get one twin
/// uniformly at random, test instances get both.
pub fn generate_confusing(config: &SynthConfig) -> Result<Dataset> {
    if config.ambiguity != Ambiguity::ConfusingSplit {
        return Err(Error::config("generate_confusing needs ambiguity mode confusing_split"));
    }
    generate(config)
}

/// Overlap-group benchmark: `group_size` classes share each cluster.
pub fn generate_overlap_groups(config: &SynthConfig) -> Result<Dataset> {
    if !matches!(config.ambiguity, Ambiguity::OverlapGroups { .. }) {
        return Err(Error::config(
            "generate_overlap_groups needs ambiguity mode overlap_groups",
        ));
    }
    generate(config)
}

/// Dispatches on the configured ambiguity mode.
pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let root = RandomSource::new(config.seed);
    let mut center_rng = root.fork(0);
    let mut centers = Vec::with_capacity(config.base_classes);
    for _ in 0..config.base_classes {
        centers.push(center_rng.gaussian_sample(0.0, config.center_scale, config.dim)?);
    }
    let name = match config.ambiguity {
        Ambiguity::ConfusingSplit => "confusing-synthetic".to_string(),
        Ambiguity::OverlapGroups { group_size } => format!("overlap{group_size}-synthetic"),
    };
    let make = |kind: SplitKind, per_class: usize, stream: u64| -> Result<Split> {
        let mut rng = root.fork(stream);
        let group = config.group_size();
        let mut values = Vec::with_capacity(config.base_classes * per_class * config.dim);
        let mut records = Vec::with_capacity(config.base_classes * per_class);
        for (base, center) in centers.iter().enumerate() {
            let members: Vec<usize> = (base * group..(base + 1) * group).collect();
            for _ in 0..per_class {
                for &mu in center {
                    // stored as f32 on disk; keep in-memory data identical
                    values.push(rng.gaussian(mu, config.cluster_std)? as f32 as f64);
                }
                let labels = match kind {
                    SplitKind::Test => members.clone(),
                    _ => vec![members[rng.below(group)]],
                };
                records.push(Record {
                    id: records.len() as u64,
                    labels,
                    true_labels: (kind != SplitKind::Test).then(|| members.clone()),
                });
            }
        }
        let rows = records.len();
        let manifest = DatasetManifest {
            version: MANIFEST_VERSION,
            name: name.clone(),
            split: kind,
            features: PathBuf::from(format!("{}.spmf", kind.name())),
            num_classes: config.num_classes(),
            records,
        };
        Split::new(manifest, DenseMatrix::from_vec(rows, config.dim, values)?)
    };
    Dataset::new(
        make(SplitKind::Train, config.train_per_class, 1)?,
        make(SplitKind::Val, config.val_per_class, 2)?,
        make(SplitKind::Test, config.test_per_class, 3)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(ambiguity: Ambiguity) -> SynthConfig {
        SynthConfig {
            base_classes: 3,
            train_per_class: 4,
            val_per_class: 2,
            test_per_class: 2,
            dim: 5,
            ambiguity,
            seed: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn feature_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.spmf");
        let mut rng = RandomSource::new(1);
        let values: Vec<f64> = (0..35).map(|_| rng.uniform(-10.0, 10.0) as f32 as f64).collect();
        let m = DenseMatrix::from_vec(7, 5, values).unwrap();
        write_features(&m, &path).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(fs::metadata(&path).unwrap().len(), 16 + 4 * 35);
    }

    #[test]
    fn corrupt_feature_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.spmf");
        write_features(&DenseMatrix::filled(3, 2, 1.5), &path).unwrap();
        let bytes = fs::read(&path).unwrap();

        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        let err = read_features(&path).unwrap_err().to_string();
        assert!(err.contains("40") && err.contains("39"), "{err}");

        fs::write(&path, b"").unwrap();
        assert!(matches!(read_features(&path), Err(Error::Format { .. })));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(read_features(&path).unwrap_err().to_string().contains("magic"));

        let mut huge = bytes[..16].to_vec();
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        fs::write(&path, &huge).unwrap();
        assert!(read_features(&path).is_err());
    }

    fn manifest_json(split: &str, labels: &str) -> String {
        format!(
            r#"{{"version":1,"name":"t","split":"{split}","features":"x.spmf","num_classes":3,
               "records":[{{"id":0,"labels":{labels}}}]}}"#
        )
    }

    #[test]
    fn manifest_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let load = |text: String| {
            fs::write(&path, text).unwrap();
            load_manifest(&path)
        };
        let ok = load(manifest_json("train", "[2]")).unwrap();
        assert_eq!(ok.features, dir.path().join("x.spmf"));
        assert!(load(manifest_json("test", "[0,2]")).is_ok());
        assert!(load(manifest_json("train", "[0,1]")).is_err());
        assert!(load(manifest_json("val", "[]")).is_err());
        assert!(load(manifest_json("test", "[]")).is_err());
        assert!(load(manifest_json("train", "[3]")).is_err());
        assert!(load("{not json".into()).is_err());
    }

    #[test]
    fn confusing_labels() {
        let data = generate_confusing(&small(Ambiguity::ConfusingSplit)).unwrap();
        assert_eq!(data.num_classes(), 6);
        for (i, r) in data.test.manifest.records.iter().enumerate() {
            let base = i / 2;
            assert_eq!(r.labels, vec![2 * base, 2 * base + 1]);
        }
        for (i, r) in data.train.manifest.records.iter().enumerate() {
            let base = i / 4;
            assert!(r.labels[0] / 2 == base);
            assert_eq!(r.true_labels.as_deref(), Some(&[2 * base, 2 * base + 1][..]));
        }
    }

    #[test]
    fn overlap_groups() {
        let single = generate_overlap_groups(&small(Ambiguity::OverlapGroups { group_size: 1 })).unwrap();
        assert_eq!(single.num_classes(), 3);
        assert!(single.test.manifest.records.iter().all(|r| r.labels.len() == 1));
        let triple = SynthConfig {
            base_classes: 2,
            ..small(Ambiguity::OverlapGroups { group_size: 3 })
        };
        let data = generate_overlap_groups(&triple).unwrap();
        assert_eq!(data.num_classes(), 6);
        assert!(data.test.manifest.records.iter().all(|r| r.labels.len() == 3));
        assert!(generate_confusing(&triple).is_err());
    }

    #[test]
    fn same_seed_same_dataset() {
        let cfg = small(Ambiguity::ConfusingSplit);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 4, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn invalid_configs() {
        let cfg = SynthConfig { cluster_std: 0.0, ..SynthConfig::default() };
        assert!(generate(&cfg).is_err());
        let cfg = SynthConfig { train_per_class: 0, ..SynthConfig::default() };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn dataset_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&small(Ambiguity::ConfusingSplit)).unwrap();
        let [train, val, test] = data.save(dir.path()).unwrap();
        let back = Dataset::load(&train, &val, &test).unwrap();
        assert_eq!(back.train.features, data.train.features);
        assert_eq!(back.test.manifest.records, data.test.manifest.records);
    }
}
