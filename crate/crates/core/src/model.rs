//! Three-layer perceptron with per-class sigmoid outputs.
//!
//! The network is `D → H → H → C`: two ReLU hidden layers followed by an
//! affine output layer and an element-wise sigmoid. Confidences are clamped
//! into `[CONFIDENCE_FLOOR, 1 - CONFIDENCE_FLOOR]` so every loss can take
//! logarithms of both `f` and `1 - f` directly.
//!
//! Weights are initialised uniformly in `±sqrt(6 / (fan_in + fan_out))`
//! (nominal variance `2 / (fan_in + fan_out)`); biases start at zero.
//!
//! # Checkpoint layout
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `SPMC`               |
//! | 4      | 2    | format version (`1`)       |
//! | 6      | 2    | reserved, zero             |
//! | 8      | 4    | input dim `D` (u32)        |
//! | 12     | 4    | hidden dim `H` (u32)       |
//! | 16     | 4    | class count `C` (u32)      |
//! | 20     | 8·P  | parameters as `f64`        |
//!
//! Parameters follow [`MlpParams::to_flat`] order: `w1` (D×H, row-major),
//! `b1` (H), `w2` (H×H), `b2` (H), `w3` (H×C), `b3` (C).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{matmul, matmul_nt, matmul_tn, DenseMatrix, RandomSource};

pub const CONFIDENCE_FLOOR: f64 = 1e-12;

const CHECKPOINT_MAGIC: &[u8; 4] = b"SPMC";
const CHECKPOINT_VERSION: u16 = 1;
const CHECKPOINT_HEADER: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl MlpDims {
    pub fn new(input: usize, hidden: usize, classes: usize) -> Result<Self> {
        if input == 0 || hidden == 0 || classes == 0 {
            return Err(Error::domain(format!(
                "network dimensions must be positive, got D={input}, H={hidden}, C={classes}"
            )));
        }
        Ok(Self {
            input,
            hidden,
            classes,
        })
    }

    pub fn num_params(&self) -> usize {
        let (d, h, c) = (self.input, self.hidden, self.classes);
        d * h + h + h * h + h + h * c + c
    }
}

/// Weights and biases of the network. Also used to hold their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: DenseMatrix,
    pub b2: Vec<f64>,
    pub w3: DenseMatrix,
    pub b3: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(dims: MlpDims) -> Self {
        let MlpDims {
            input: d,
            hidden: h,
            classes: c,
        } = dims;
        Self {
            w1: DenseMatrix::zeros(d, h),
            b1: vec![0.0; h],
            w2: DenseMatrix::zeros(h, h),
            b2: vec![0.0; h],
            w3: DenseMatrix::zeros(h, c),
            b3: vec![0.0; c],
        }
    }

    /// Scaled-uniform ("Glorot") weights, zero biases.
    pub fn init(rng: &mut RandomSource, dims: MlpDims) -> Self {
        let mut params = Self::zeros(dims);
        for w in [&mut params.w1, &mut params.w2, &mut params.w3] {
            let (fan_in, fan_out) = w.shape();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = rng.uniform(-limit, limit);
            }
        }
        params
    }

    pub fn dims(&self) -> MlpDims {
        MlpDims {
            input: self.w1.rows(),
            hidden: self.w1.cols(),
            classes: self.w3.cols(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.dims().num_params()
    }

    fn parts(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
            self.w3.as_slice(),
            &self.b3,
        ]
    }

    fn parts_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
            self.w3.as_mut_slice(),
            &mut self.b3,
        ]
    }

    /// All parameters in checkpoint order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.parts().concat()
    }

    pub fn from_flat(dims: MlpDims, flat: &[f64]) -> Result<Self> {
        if flat.len() != dims.num_params() {
            return Err(Error::shape(format!(
                "{} values for a network with {} parameters",
                flat.len(),
                dims.num_params()
            )));
        }
        let mut params = Self::zeros(dims);
        let mut offset = 0;
        for part in params.parts_mut() {
            part.copy_from_slice(&flat[offset..offset + part.len()]);
            offset += part.len();
        }
        if !params.is_finite() {
            return Err(Error::domain("non-finite network parameter"));
        }
        Ok(params)
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Pairs each parameter tensor with the matching gradient tensor, for
    /// [`AdamState::step_segments`](crate::math::AdamState::step_segments).
    pub fn zip_with_grads<'a>(
        &'a mut self,
        grads: &'a MlpParams,
    ) -> Vec<(&'a mut [f64], &'a [f64])> {
        self.parts_mut().into_iter().zip(grads.parts()).collect()
    }

    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        let dims = self.dims();
        let mut bytes = Vec::with_capacity(CHECKPOINT_HEADER + 8 * dims.num_params());
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&0u16.to_le_bytes());
        for dim in [dims.input, dims.hidden, dims.classes] {
            let dim = u32::try_from(dim)
                .map_err(|_| Error::shape(format!("dimension {dim} exceeds u32")))?;
            bytes.extend_from_slice(&dim.to_le_bytes());
        }
        for v in self.to_flat() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < CHECKPOINT_HEADER {
            return Err(Error::format(
                path,
                format!(
                    "checkpoint header needs {CHECKPOINT_HEADER} bytes, file has {}",
                    bytes.len()
                ),
            ));
        }
        if &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "bad magic at byte 0, expected \"SPMC\""));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {version} at byte 4"),
            ));
        }
        let read_u32 = |at: usize| {
            u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice")) as usize
        };
        let dims = MlpDims::new(read_u32(8), read_u32(12), read_u32(16))
            .map_err(|e| Error::format(path, e.to_string()))?;
        let expected = dims
            .num_params()
            .checked_mul(8)
            .and_then(|n| n.checked_add(CHECKPOINT_HEADER))
            .ok_or_else(|| Error::format(path, "parameter count overflows"))?;
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let flat: Vec<f64> = bytes[CHECKPOINT_HEADER..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_flat(dims, &flat).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: DenseMatrix,
    pub pre1: DenseMatrix,
    pub hidden1: DenseMatrix,
    pub pre2: DenseMatrix,
    /// Penultimate-layer activations, also used as refreshed k-NN features.
    pub hidden2: DenseMatrix,
    pub logits: DenseMatrix,
    pub confidences: DenseMatrix,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn clamp_confidence(f: f64) -> f64 {
    f.clamp(CONFIDENCE_FLOOR, 1.0 - CONFIDENCE_FLOOR)
}

fn relu(m: &DenseMatrix) -> DenseMatrix {
    m.map(|v| v.max(0.0))
}

fn affine(input: &DenseMatrix, w: &DenseMatrix, b: &[f64]) -> Result<DenseMatrix> {
    let mut out = matmul(input, w)?;
    out.add_row_vector(b)?;
    Ok(out)
}

pub fn forward(params: &MlpParams, batch: &DenseMatrix) -> Result<ForwardCache> {
    let dims = params.dims();
    if batch.cols() != dims.input {
        return Err(Error::shape(format!(
            "batch has {} features, network expects {}",
            batch.cols(),
            dims.input
        )));
    }
    let pre1 = affine(batch, &params.w1, &params.b1)?;
    let hidden1 = relu(&pre1);
    let pre2 = affine(&hidden1, &params.w2, &params.b2)?;
    let hidden2 = relu(&pre2);
    let logits = affine(&hidden2, &params.w3, &params.b3)?;
    let confidences = logits.map(|z| clamp_confidence(sigmoid(z)));
    if !confidences.is_finite() {
        return Err(Error::Numerical("non-finite network output".into()));
    }
    Ok(ForwardCache {
        input: batch.clone(),
        pre1,
        hidden1,
        pre2,
        hidden2,
        logits,
        confidences,
    })
}

/// Per-class confidences for every row of `features`.
pub fn predict(params: &MlpParams, features: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(forward(params, features)?.confidences)
}

/// Parameter gradients given `∂L/∂f` for every confidence in the cache.
pub fn backward(
    cache: &ForwardCache,
    params: &MlpParams,
    grad_wrt_confidences: &DenseMatrix,
) -> Result<MlpParams> {
    if grad_wrt_confidences.shape() != cache.confidences.shape() {
        return Err(Error::shape(format!(
            "gradient is {:?}, confidences are {:?}",
            grad_wrt_confidences.shape(),
            cache.confidences.shape()
        )));
    }
    let (n, c) = cache.logits.shape();
    let mut d_logits = DenseMatrix::zeros(n, c);
    for i in 0..n {
        for j in 0..c {
            let s = sigmoid(cache.logits.get(i, j));
            // the clamp is flat outside its bounds
            let local = if s == clamp_confidence(s) { s * (1.0 - s) } else { 0.0 };
            d_logits.set(i, j, grad_wrt_confidences.get(i, j) * local);
        }
    }

    let w3 = matmul_tn(&cache.hidden2, &d_logits)?;
    let b3 = d_logits.column_sums();
    let mut d_pre2 = matmul_nt(&d_logits, &params.w3)?;
    mask_relu(&mut d_pre2, &cache.pre2);

    let w2 = matmul_tn(&cache.hidden1, &d_pre2)?;
    let b2 = d_pre2.column_sums();
    let mut d_pre1 = matmul_nt(&d_pre2, &params.w2)?;
    mask_relu(&mut d_pre1, &cache.pre1);

    let w1 = matmul_tn(&cache.input, &d_pre1)?;
    let b1 = d_pre1.column_sums();
    Ok(MlpParams {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
    })
}

fn mask_relu(grad: &mut DenseMatrix, pre: &DenseMatrix) {
    for (g, &z) in grad.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}
