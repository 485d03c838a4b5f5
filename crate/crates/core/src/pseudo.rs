//! Pseudo-label generation.
//!
//! Three sources of extra likely-positive classes per training instance:
//!
//! * **instance-level**: label frequencies among the `K` nearest training
//!   neighbours in feature space, thresholded at `tau`
//!   ([`instance_pseudo_labels`]);
//! * **class-level**: classes annotated together with the instance's label at
//!   least `threshold` of the time ([`CooccurrenceTable`],
//!   [`class_pseudo_labels`]);
//! * **ideal**: the true label set minus the annotated label, for oracle
//!   ablations ([`ideal_pseudo_labels`]).
//!
//! Instance ids are row indices into the training feature matrix.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    /// Dot product of L2-normalised rows.
    #[default]
    Cosine,
    /// Negative squared Euclidean distance.
    Euclidean,
}

/// Exhaustive-scan neighbour index over the training features.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    features: DenseMatrix,
    similarity: Similarity,
}

pub fn build_index(features: &DenseMatrix, similarity: Similarity) -> Result<NeighborIndex> {
    NeighborIndex::build(features, similarity)
}

impl NeighborIndex {
    pub fn build(features: &DenseMatrix, similarity: Similarity) -> Result<Self> {
        if features.rows() < 2 {
            return Err(Error::domain(format!(
                "neighbour index needs at least 2 instances, got {}",
                features.rows()
            )));
        }
        let mut features = features.clone();
        if similarity == Similarity::Cosine {
            for r in 0..features.rows() {
                let row = features.row_mut(r);
                let norm = dot(row, row).sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::domain(format!(
                        "row {r} has zero norm and cannot be cosine-normalised"
                    )));
                }
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Ok(Self {
            features,
            similarity,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn similarity_kind(&self) -> Similarity {
        self.similarity
    }

    /// Similarity between two indexed rows; larger is closer.
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        let (x, y) = (self.features.row(a), self.features.row(b));
        match self.similarity {
            Similarity::Cosine => dot(x, y),
            Similarity::Euclidean => -x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>(),
        }
    }

    /// The `k` most similar other instances, most similar first; ties go to
    /// the lower instance id.
    pub fn knn(&self, query: usize, k: usize) -> Result<Vec<usize>> {
        let n = self.len();
        if query >= n {
            return Err(Error::domain(format!("query {query} outside index of {n}")));
        }
        if k >= n {
            return Err(Error::domain(format!(
                "K = {k} needs more than {n} indexed instances"
            )));
        }
        let mut scored: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != query)
            .map(|j| (self.similarity(query, j), j))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
        };
        if k > 0 && k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
        }
        scored.truncate(k);
        scored.sort_unstable_by(order);
        Ok(scored.into_iter().map(|(_, j)| j).collect())
    }

    /// Neighbour lists for every instance.
    pub fn knn_all(&self, k: usize) -> Result<Vec<Vec<usize>>> {
        (0..self.len()).into_par_iter().map(|i| self.knn(i, k)).collect()
    }
}

/// Extra classes assumed likely-positive for one training instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub id: usize,
    pub single_label: usize,
    /// Sorted by decreasing frequency, then ascending class.
    pub labels: Vec<usize>,
    /// Frequency (or co-occurrence ratio) that admitted each label.
    pub frequencies: Vec<f64>,
}

impl PseudoLabelSet {
    pub fn empty(id: usize, single_label: usize) -> Self {
        Self {
            id,
            single_label,
            labels: Vec::new(),
            frequencies: Vec::new(),
        }
    }

    fn from_scored(id: usize, single_label: usize, mut scored: Vec<(usize, f64)>) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let (labels, frequencies) = scored.into_iter().unzip();
        Self {
            id,
            single_label,
            labels,
            frequencies,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.labels.contains(&class)
    }
}

/// Label sets only, in the form [`LossInput`](crate::losses::LossInput) takes.
pub fn label_lists(sets: &[PseudoLabelSet]) -> Vec<Vec<usize>> {
    sets.iter().map(|s| s.labels.clone()).collect()
}

fn check_tau(tau: f64) -> Result<()> {
    if (0.0..1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::domain(format!("tau must lie in [0, 1), got {tau}")))
    }
}

/// Thresholded label frequencies of one neighbourhood.
///
/// `ω(c) = count(c) / K` over the neighbours' labels; classes with `ω > tau`
/// other than `own_label` are kept.
pub fn pseudo_labels_from_neighbors(
    id: usize,
    own_label: usize,
    neighbor_labels: &[usize],
    tau: f64,
) -> Result<PseudoLabelSet> {
    check_tau(tau)?;
    let k = neighbor_labels.len();
    if k == 0 {
        return Ok(PseudoLabelSet::empty(id, own_label));
    }
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &label in neighbor_labels {
        match counts.iter_mut().find(|(c, _)| *c == label) {
            Some((_, n)) => *n += 1,
            None => counts.push((label, 1)),
        }
    }
    let scored = counts
        .into_iter()
        .map(|(c, n)| (c, n as f64 / k as f64))
        .filter(|&(c, omega)| omega > tau && c != own_label)
        .collect();
    Ok(PseudoLabelSet::from_scored(id, own_label, scored))
}

/// Instance-level pseudo-labels for every indexed instance.
pub fn instance_pseudo_labels(
    index: &NeighborIndex,
    labels: &[usize],
    k: usize,
    tau: f64,
) -> Result<Vec<PseudoLabelSet>> {
    check_tau(tau)?;
    if labels.len() != index.len() {
        return Err(Error::shape(format!(
            "{} labels for an index of {} instances",
            labels.len(),
            index.len()
        )));
    }
    (0..index.len())
        .into_par_iter()
        .map(|i| {
            let neighbors = index.knn(i, k)?;
            let neighbor_labels: Vec<usize> = neighbors.iter().map(|&j| labels[j]).collect();
            pseudo_labels_from_neighbors(i, labels[i], &neighbor_labels, tau)
        })
        .collect()
}

/// Joint annotation counts between classes.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceTable {
    num_classes: usize,
    counts: Vec<u64>,
}

impl CooccurrenceTable {
    /// Counts, for every class pair, the annotations containing both.
    pub fn from_label_sets(sets: &[Vec<usize>], num_classes: usize) -> Result<Self> {
        let mut counts = vec![0u64; num_classes * num_classes];
        for (i, set) in sets.iter().enumerate() {
            if let Some(&bad) = set.iter().find(|&&c| c >= num_classes) {
                return Err(Error::domain(format!(
                    "annotation {i}: class {bad} outside [0, {num_classes})"
                )));
            }
            let mut unique = set.clone();
            unique.sort_unstable();
            unique.dedup();
            for &a in &unique {
                for &b in &unique {
                    counts[a * num_classes + b] += 1;
                }
            }
        }
        Ok(Self {
            num_classes,
            counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, a: usize, b: usize) -> u64 {
        self.counts[a * self.num_classes + b]
    }

    /// Share of `a`'s annotations that also contain `b` (0 if `a` never occurs).
    pub fn ratio(&self, a: usize, b: usize) -> f64 {
        match self.count(a, a) {
            0 => 0.0,
            total => self.count(a, b) as f64 / total as f64,
        }
    }
}

/// Per class `a`, the classes `b != a` with `ratio(a, b) >= threshold`, paired
/// with their ratios.
pub fn class_pseudo_labels(table: &CooccurrenceTable, threshold: f64) -> Vec<Vec<(usize, f64)>> {
    let c = table.num_classes();
    (0..c)
        .map(|a| {
            (0..c)
                .filter(|&b| b != a)
                .map(|b| (b, table.ratio(a, b)))
                .filter(|&(_, r)| r > 0.0 && r >= threshold)
                .collect()
        })
        .collect()
}

/// Gives each instance the class-level set of its single label.
pub fn assign_class_pseudo_labels(
    per_class: &[Vec<(usize, f64)>],
    single_labels: &[usize],
) -> Result<Vec<PseudoLabelSet>> {
    single_labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let set = per_class.get(y).ok_or_else(|| {
                Error::domain(format!("instance {i}: label {y} has no class-level entry"))
            })?;
            Ok(PseudoLabelSet::from_scored(i, y, set.clone()))
        })
        .collect()
}

/// The true label set minus the annotated label.
pub fn ideal_pseudo_labels(
    true_label_sets: &[Vec<usize>],
    single_labels: &[usize],
) -> Result<Vec<PseudoLabelSet>> {
    if true_label_sets.len() != single_labels.len() {
        return Err(Error::shape(format!(
            "{} label sets for {} instances",
            true_label_sets.len(),
            single_labels.len()
        )));
    }
    true_label_sets
        .iter()
        .zip(single_labels)
        .enumerate()
        .map(|(i, (truth, &y))| {
            if !truth.contains(&y) {
                return Err(Error::Consistency(format!(
                    "instance {i}: label {y} is not in its true label set {truth:?}"
                )));
            }
            let mut extra: Vec<usize> = truth.iter().copied().filter(|&c| c != y).collect();
            extra.sort_unstable();
            extra.dedup();
            Ok(PseudoLabelSet::from_scored(
                i,
                y,
                extra.into_iter().map(|c| (c, 1.0)).collect(),
            ))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    id: usize,
    single_label: usize,
    pseudo: Vec<(usize, f64)>,
}

/// One JSON object per line: `{"id":..,"single_label":..,"pseudo":[[class,omega],..]}`.
pub fn write_jsonl(path: &Path, sets: &[PseudoLabelSet]) -> Result<()> {
    let mut out = Vec::new();
    for set in sets {
        let record = JsonlRecord {
            id: set.id,
            single_label: set.single_label,
            pseudo: set
                .labels
                .iter()
                .copied()
                .zip(set.frequencies.iter().copied())
                .collect(),
        };
        serde_json::to_writer(&mut out, &record).expect("in-memory serialisation");
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PseudoLabelSet>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sets = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        if record.pseudo.iter().any(|&(c, _)| c == record.single_label) {
            return Err(Error::format(
                path,
                format!("line {}: pseudo-labels contain the single label", lineno + 1),
            ));
        }
        let (labels, frequencies) = record.pseudo.into_iter().unzip();
        sets.push(PseudoLabelSet {
            id: record.id,
            single_label: record.single_label,
            labels,
            frequencies,
        });
    }
    Ok(sets)
}
