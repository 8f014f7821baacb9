//! Context-driven selection of sense dimensions.
//!
//! The K largest components of the target's sparse code pick rows of
//! `W_enc`; the aligned context `T·v_s` scores each row by inner product and
//! a softmax over the scores mixes the rows into the sense vector.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::extractor::{SparseAutoencoder, SparseCode};
use crate::linalg::{axpy, dot, softmax, Matrix};

pub const DEFAULT_K: usize = 5;

/// Learned `d × d` map aligning sentence embeddings with the `W_enc` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTransform {
    pub t: Matrix,
}

impl AlignmentTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            t: Matrix::identity(dim),
        }
    }

    pub fn new(t: Matrix) -> Result<Self> {
        if t.rows() != t.cols() {
            return Err(Error::DimensionMismatch {
                expected: t.rows(),
                actual: t.cols(),
            });
        }
        Ok(Self { t })
    }

    pub fn dim(&self) -> usize {
        self.t.rows()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.t.matvec(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenseMask {
    /// Selected code dimensions, largest code value first.
    pub indices: Vec<usize>,
    /// Attention scores before the softmax.
    pub logits: Vec<f64>,
    pub weights: Vec<f64>,
    pub sense_vector: Vec<f64>,
}

impl SenseMask {
    /// Position (within `indices`) of the most attended dimension.
    pub fn argmax(&self) -> usize {
        crate::linalg::argmax(&self.weights)
    }
}

/// Indices of the `k` largest values, descending; equal values keep index order.
pub fn top_k_indices(z: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > z.len() {
        return Err(Error::InvalidK { k, m: z.len() });
    }
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

pub fn gather_basis(ae: &SparseAutoencoder, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    let m = ae.sparse_dim();
    indices
        .iter()
        .map(|&i| {
            if i < m {
                Ok(ae.w_enc.row(i).to_vec())
            } else {
                Err(Error::Index { index: i, len: m })
            }
        })
        .collect()
}

/// Scores `d_j = (T·v_s)·s_j`.
pub fn attention_logits(aligned: &[f64], basis: &[Vec<f64>]) -> Result<Vec<f64>> {
    basis
        .iter()
        .map(|s| {
            check_len(aligned.len(), s.len())?;
            Ok(dot(aligned, s))
        })
        .collect()
}

/// Softmax of `(T·v_s)·s_j` over the basis rows.
pub fn attention_weights(
    context_vs: &[f64],
    basis: &[Vec<f64>],
    transform: &AlignmentTransform,
) -> Result<Vec<f64>> {
    if basis.is_empty() {
        return Err(Error::InvalidK { k: 0, m: 0 });
    }
    let aligned = transform.apply(context_vs)?;
    Ok(softmax(&attention_logits(&aligned, basis)?))
}

/// `Σ_j α_j·s_j`
pub fn sense_vector(weights: &[f64], basis: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_len(weights.len(), basis.len())?;
    let Some(first) = basis.first() else {
        return Ok(Vec::new());
    };
    let mut out = vec![0.0; first.len()];
    for (w, s) in weights.iter().zip(basis) {
        check_len(out.len(), s.len())?;
        axpy(*w, s, &mut out);
    }
    Ok(out)
}

/// Mask from a precomputed code and aligned context.
pub fn mask_from_parts(
    code: &SparseCode,
    aligned: &[f64],
    ae: &SparseAutoencoder,
    k: usize,
) -> Result<(SenseMask, Vec<Vec<f64>>)> {
    let indices = top_k_indices(code.values(), k)?;
    let basis = gather_basis(ae, &indices)?;
    let logits = attention_logits(aligned, &basis)?;
    let weights = softmax(&logits);
    let sense = sense_vector(&weights, &basis)?;
    Ok((
        SenseMask {
            indices,
            logits,
            weights,
            sense_vector: sense,
        },
        basis,
    ))
}

/// encode → top-K → gather rows → attention → sense vector.
pub fn generate_mask(
    ae: &SparseAutoencoder,
    transform: &AlignmentTransform,
    target: &[f64],
    context_vs: &[f64],
    k: usize,
) -> Result<SenseMask> {
    let code = ae.encode(target)?;
    let aligned = transform.apply(context_vs)?;
    Ok(mask_from_parts(&code, &aligned, ae, k)?.0)
}

/// Back-propagates a sense-vector gradient to the aligned context `T·v_s`.
/// The basis rows are frozen, so no gradient flows into them.
pub fn attention_backward(weights: &[f64], basis: &[Vec<f64>], grad_sense: &[f64]) -> Vec<f64> {
    let dalpha: Vec<f64> = basis.iter().map(|s| dot(grad_sense, s)).collect();
    let mean: f64 = weights.iter().zip(&dalpha).map(|(a, g)| a * g).sum();
    let mut grad_aligned = vec![0.0; grad_sense.len()];
    for ((a, g), s) in weights.iter().zip(&dalpha).zip(basis) {
        axpy(a * (g - mean), s, &mut grad_aligned);
    }
    grad_aligned
}
