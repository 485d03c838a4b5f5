//! Single-positive multi-label losses over sigmoid confidences.
//!
//! Every loss is written per instance as `-(1/Z) Σ_c term_c(f_c)` with `Z = C`
//! except for [`LossKind::Mask`], which normalises by the number of classes it
//! does not freeze. A batch value is the mean of the per-instance values, and
//! the returned gradient is the derivative of that mean with respect to every
//! confidence.
//!
//! Baselines only see the single annotated label. `Mask` and `Ps` additionally
//! read the per-instance pseudo-label sets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    /// Assume negative.
    An,
    /// Weak assume negative: negatives weighted by `1/(C-1)`.
    Wan,
    /// Label smoothing with smoothing `epsilon/2` on every class.
    Ls,
    /// Label smoothing applied to assumed negatives only.
    Nls,
    Focal,
    /// Entropy maximisation on the unannotated classes.
    Em,
    /// BCE with pseudo-label classes frozen out of the sum.
    Mask,
    /// BCE with pseudo-labels treated as extra positives.
    Ps,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::An,
        LossKind::Wan,
        LossKind::Ls,
        LossKind::Nls,
        LossKind::Focal,
        LossKind::Em,
        LossKind::Mask,
        LossKind::Ps,
    ];

    pub const BASELINES: [LossKind; 6] = [
        LossKind::An,
        LossKind::Wan,
        LossKind::Ls,
        LossKind::Nls,
        LossKind::Focal,
        LossKind::Em,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::An => "an",
            LossKind::Wan => "wan",
            LossKind::Ls => "ls",
            LossKind::Nls => "nls",
            LossKind::Focal => "focal",
            LossKind::Em => "em",
            LossKind::Mask => "mask",
            LossKind::Ps => "ps",
        }
    }

    /// Table label, e.g. `N-LS` or `P+S`.
    pub fn display_name(self) -> &'static str {
        match self {
            LossKind::An => "AN",
            LossKind::Wan => "WAN",
            LossKind::Ls => "LS",
            LossKind::Nls => "N-LS",
            LossKind::Focal => "Focal",
            LossKind::Em => "EM",
            LossKind::Mask => "Mask",
            LossKind::Ps => "P+S",
        }
    }

    pub fn uses_pseudo_labels(self) -> bool {
        matches!(self, LossKind::Mask | LossKind::Ps)
    }

    fn parse_name(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "an" => LossKind::An,
            "wan" => LossKind::Wan,
            "ls" => LossKind::Ls,
            "nls" | "n-ls" => LossKind::Nls,
            "focal" => LossKind::Focal,
            "em" => LossKind::Em,
            "mask" => LossKind::Mask,
            "ps" | "p+s" => LossKind::Ps,
            _ => return None,
        })
    }
}

/// A loss and its hyperparameters.
///
/// Parsed from and printed as `kind[:key=value,...]`, for example `mask`,
/// `ls:eps=0.2`, `focal:alpha=0.25,gamma=2` or `em:alpha=0.2`. Keys are
/// `eps` (LS, N-LS), `alpha` and `gamma` (focal) and `alpha` (EM).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LossSpec {
    pub kind: LossKind,
    pub epsilon: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub em_alpha: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            epsilon: 0.1,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            em_alpha: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::config(format!(
                "{what} = {v} out of range for loss {}",
                self.kind.name()
            )))
        };
        if !(0.0..1.0).contains(&self.epsilon) {
            return bad("epsilon", self.epsilon);
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return bad("focal alpha", self.focal_alpha);
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return bad("focal gamma", self.focal_gamma);
        }
        if !(self.em_alpha > 0.0 && self.em_alpha.is_finite()) {
            return bad("EM alpha", self.em_alpha);
        }
        Ok(())
    }

    pub fn compute(&self, input: &LossInput<'_>) -> Result<LossOutput> {
        compute(self, input)
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.kind.name();
        match self.kind {
            LossKind::Ls | LossKind::Nls => write!(f, "{name}:eps={}", self.epsilon),
            LossKind::Focal => write!(
                f,
                "{name}:alpha={},gamma={}",
                self.focal_alpha, self.focal_gamma
            ),
            LossKind::Em => write!(f, "{name}:alpha={}", self.em_alpha),
            _ => f.write_str(name),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), a.trim()),
            None => (s.trim(), ""),
        };
        let kind = LossKind::parse_name(name)
            .ok_or_else(|| Error::config(format!("unknown loss {name:?}")))?;
        let mut spec = LossSpec::new(kind);
        for pair in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::config(format!("expected key=value, got {pair:?}")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("bad number in {pair:?}")))?;
            match (kind, key.trim()) {
                (LossKind::Ls | LossKind::Nls, "eps" | "epsilon") => spec.epsilon = value,
                (LossKind::Focal, "alpha") => spec.focal_alpha = value,
                (LossKind::Focal, "gamma") => spec.focal_gamma = value,
                (LossKind::Em, "alpha") => spec.em_alpha = value,
                (_, key) => {
                    return Err(Error::config(format!(
                        "loss {name} has no parameter {key:?}"
                    )))
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<String> for LossSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossSpec> for String {
    fn from(spec: LossSpec) -> String {
        spec.to_string()
    }
}

/// Confidences plus labels for one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossInput<'a> {
    /// N×C, every entry strictly inside (0, 1).
    pub confidences: &'a DenseMatrix,
    pub single_labels: &'a [usize],
    /// Per-instance pseudo-label classes; required by `Mask` and `Ps`.
    pub pseudo_sets: Option<&'a [Vec<usize>]>,
}

impl<'a> LossInput<'a> {
    pub fn new(confidences: &'a DenseMatrix, single_labels: &'a [usize]) -> Self {
        Self {
            confidences,
            single_labels,
            pseudo_sets: None,
        }
    }

    pub fn with_pseudo(mut self, pseudo_sets: &'a [Vec<usize>]) -> Self {
        self.pseudo_sets = Some(pseudo_sets);
        self
    }

    fn validate(&self) -> Result<()> {
        let (n, c) = self.confidences.shape();
        if self.single_labels.len() != n {
            return Err(Error::shape(format!(
                "{} labels for {n} confidence rows",
                self.single_labels.len()
            )));
        }
        if let Some(&bad) = self.confidences.as_slice().iter().find(|&&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::domain(format!(
                "confidence {bad} outside (0, 1)"
            )));
        }
        for (i, &y) in self.single_labels.iter().enumerate() {
            if y >= c {
                return Err(Error::domain(format!(
                    "instance {i}: label {y} outside [0, {c})"
                )));
            }
        }
        if let Some(sets) = self.pseudo_sets {
            if sets.len() != n {
                return Err(Error::shape(format!(
                    "{} pseudo-label sets for {n} instances",
                    sets.len()
                )));
            }
            for (i, set) in sets.iter().enumerate() {
                for (k, &p) in set.iter().enumerate() {
                    if p >= c {
                        return Err(Error::domain(format!(
                            "instance {i}: pseudo-label {p} outside [0, {c})"
                        )));
                    }
                    if p == self.single_labels[i] {
                        return Err(Error::Consistency(format!(
                            "instance {i}: label {p} is also its own pseudo-label"
                        )));
                    }
                    if set[..k].contains(&p) {
                        return Err(Error::Consistency(format!(
                            "instance {i}: pseudo-label {p} listed twice"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// `∂value/∂f`, same shape as the confidences.
    pub grad: DenseMatrix,
}

/// How a class enters one instance's loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Annotated,
    Pseudo,
    Unknown,
}

/// `(value, derivative)` of `-term_c(f)`, i.e. the contribution before the
/// `1/Z` normalisation.
fn class_term(spec: &LossSpec, role: Role, num_classes: usize, f: f64) -> (f64, f64) {
    let (lf, l1f) = (f.ln(), (1.0 - f).ln());
    let pos = (-lf, -1.0 / f);
    let neg = (-l1f, 1.0 / (1.0 - f));
    match (spec.kind, role) {
        (_, Role::Pseudo) => match spec.kind {
            LossKind::Ps => pos,
            // Mask drops pseudo classes before this is reached; baselines
            // never build a pseudo role.
            _ => (0.0, 0.0),
        },
        (LossKind::An | LossKind::Mask | LossKind::Ps, Role::Annotated) => pos,
        (LossKind::An | LossKind::Mask | LossKind::Ps, Role::Unknown) => neg,
        (LossKind::Wan, Role::Annotated) => pos,
        (LossKind::Wan, Role::Unknown) => {
            let w = 1.0 / (num_classes as f64 - 1.0);
            (w * neg.0, w * neg.1)
        }
        (LossKind::Ls, role) => {
            let a = spec.epsilon / 2.0;
            let (wp, wn) = if role == Role::Annotated { (1.0 - a, a) } else { (a, 1.0 - a) };
            (
                wp * pos.0 + wn * neg.0,
                wp * pos.1 + wn * neg.1,
            )
        }
        (LossKind::Nls, Role::Annotated) => pos,
        (LossKind::Nls, Role::Unknown) => {
            let e = spec.epsilon;
            (
                (1.0 - e) * neg.0 + e * pos.0,
                (1.0 - e) * neg.1 + e * pos.1,
            )
        }
        (LossKind::Focal, Role::Annotated) => {
            let (a, g) = (spec.focal_alpha, spec.focal_gamma);
            let weight = (1.0 - f).powf(g);
            let dweight = if g == 0.0 { 0.0 } else { -g * (1.0 - f).powf(g - 1.0) };
            (-a * weight * lf, -a * (dweight * lf + weight / f))
        }
        (LossKind::Focal, Role::Unknown) => {
            let (a, g) = (spec.focal_alpha, spec.focal_gamma);
            let weight = f.powf(g);
            let dweight = if g == 0.0 { 0.0 } else { g * f.powf(g - 1.0) };
            (
                -(1.0 - a) * weight * l1f,
                -(1.0 - a) * (dweight * l1f - weight / (1.0 - f)),
            )
        }
        (LossKind::Em, Role::Annotated) => pos,
        (LossKind::Em, Role::Unknown) => {
            // -α·H(f) with H the binary entropy; dH/df = ln((1-f)/f)
            let h = -(f * lf + (1.0 - f) * l1f);
            (-spec.em_alpha * h, -spec.em_alpha * (l1f - lf))
        }
    }
}

/// Value and confidence gradient of `spec` on one batch.
pub fn compute(spec: &LossSpec, input: &LossInput<'_>) -> Result<LossOutput> {
    spec.validate()?;
    input.validate()?;
    let pseudo_sets = match (spec.kind.uses_pseudo_labels(), input.pseudo_sets) {
        (true, None) => {
            return Err(Error::config(format!(
                "loss {} needs pseudo-label sets",
                spec.kind.name()
            )))
        }
        (true, Some(sets)) => Some(sets),
        (false, _) => None,
    };

    let (n, c) = input.confidences.shape();
    let mut grad = DenseMatrix::zeros(n, c);
    let mut total = 0.0;
    let mut roles = vec![Role::Unknown; c];
    for i in 0..n {
        roles.fill(Role::Unknown);
        let pseudo: &[usize] = pseudo_sets.map_or(&[], |s| s[i].as_slice());
        for &p in pseudo {
            roles[p] = Role::Pseudo;
        }
        roles[input.single_labels[i]] = Role::Annotated;

        let norm = match spec.kind {
            LossKind::Mask => (c - pseudo.len()) as f64,
            _ => c as f64,
        };
        let row = input.confidences.row(i);
        let grad_row = grad.row_mut(i);
        let mut instance = 0.0;
        for j in 0..c {
            if spec.kind == LossKind::Mask && roles[j] == Role::Pseudo {
                continue;
            }
            let (v, d) = class_term(spec, roles[j], c, row[j]);
            instance += v;
            grad_row[j] = d / (norm * n as f64);
        }
        total += instance / norm;
    }
    let value = if n == 0 { 0.0 } else { total / n as f64 };
    if !value.is_finite() || !grad.is_finite() {
        return Err(Error::Numerical(format!(
            "loss {} produced a non-finite value",
            spec.kind.name()
        )));
    }
    Ok(LossOutput { value, grad })
}

fn with_kind(kind: LossKind, input: &LossInput<'_>) -> Result<(f64, DenseMatrix)> {
    compute(&LossSpec::new(kind), input).map(|o| (o.value, o.grad))
}

pub fn loss_an(input: &LossInput<'_>) -> Result<(f64, DenseMatrix)> {
    with_kind(LossKind::An, input)
}

pub fn loss_wan(input: &LossInput<'_>) -> Result<(f64, DenseMatrix)> {
    with_kind(LossKind::Wan, input)
}

pub fn loss_ls(input: &LossInput<'_>, epsilon: f64) -> Result<(f64, DenseMatrix)> {
    let spec = LossSpec {
        epsilon,
        ..LossSpec::new(LossKind::Ls)
    };
    compute(&spec, input).map(|o| (o.value, o.grad))
}

pub fn loss_nls(input: &LossInput<'_>, epsilon: f64) -> Result<(f64, DenseMatrix)> {
    let spec = LossSpec {
        epsilon,
        ..LossSpec::new(LossKind::Nls)
    };
    compute(&spec, input).map(|o| (o.value, o.grad))
}

pub fn loss_focal(input: &LossInput<'_>, alpha: f64, gamma: f64) -> Result<(f64, DenseMatrix)> {
    let spec = LossSpec {
        focal_alpha: alpha,
        focal_gamma: gamma,
        ..LossSpec::new(LossKind::Focal)
    };
    compute(&spec, input).map(|o| (o.value, o.grad))
}

pub fn loss_em(input: &LossInput<'_>, alpha: f64) -> Result<(f64, DenseMatrix)> {
    let spec = LossSpec {
        em_alpha: alpha,
        ..LossSpec::new(LossKind::Em)
    };
    compute(&spec, input).map(|o| (o.value, o.grad))
}

pub fn loss_mask(input: &LossInput<'_>) -> Result<(f64, DenseMatrix)> {
    with_kind(LossKind::Mask, input)
}

pub fn loss_ps(input: &LossInput<'_>) -> Result<(f64, DenseMatrix)> {
    with_kind(LossKind::Ps, input)
}
