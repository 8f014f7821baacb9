//! Overcomplete sparse autoencoder over word embeddings.
//!
//! `z = clamp(W_enc·v + b_enc, 0, 1)` and `v' = W_dec·z + b_dec`. Trained by
//! mini-batch SGD on the reconstruction loss plus the partial-sparsity loss
//! `Σ_h z_h(1 − z_h)`, which pulls every code component towards 0 or 1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{check_len, Error, Result};
use crate::gradcheck::{apply_update, Parameters};
use crate::linalg::{axpy, squared_distance, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseAutoencoder {
    pub w_enc: Matrix,
    pub b_enc: Vec<f64>,
    pub w_dec: Matrix,
    pub b_dec: Vec<f64>,
}

/// Capped-ReLU code of a word; every component lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode(Vec<f64>);

impl SparseCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(Self(values))
        } else {
            Err(Error::Config("sparse code components must lie in [0, 1]".into()))
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn capped_relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

impl SparseAutoencoder {
    /// Xavier-uniform weights, zero biases.
    pub fn new(dim: usize, sparse_dim: usize, seed: u64) -> Result<Self> {
        if sparse_dim <= dim {
            return Err(Error::Config(format!(
                "sparse dimension {sparse_dim} must exceed embedding dimension {dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_enc = Matrix::xavier(sparse_dim, dim, &mut rng);
        let w_dec = Matrix::xavier(dim, sparse_dim, &mut rng);
        Ok(Self {
            w_enc,
            b_enc: vec![0.0; sparse_dim],
            w_dec,
            b_dec: vec![0.0; dim],
        })
    }

    /// Builds from explicit parameters, checking that the shapes agree.
    pub fn from_parts(w_enc: Matrix, b_enc: Vec<f64>, w_dec: Matrix, b_dec: Vec<f64>) -> Result<Self> {
        let ae = Self {
            w_enc,
            b_enc,
            w_dec,
            b_dec,
        };
        ae.validate()?;
        Ok(ae)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_enc: Matrix::zeros(self.sparse_dim(), self.dim()),
            b_enc: vec![0.0; self.sparse_dim()],
            w_dec: Matrix::zeros(self.dim(), self.sparse_dim()),
            b_dec: vec![0.0; self.dim()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m, d) = self.w_enc.shape();
        check_len(m, self.b_enc.len())?;
        check_len(d, self.w_dec.rows())?;
        check_len(m, self.w_dec.cols())?;
        check_len(d, self.b_dec.len())?;
        if !self.all_finite() {
            return Err(Error::Checkpoint("non-finite extractor parameter".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.w_enc.cols()
    }

    pub fn sparse_dim(&self) -> usize {
        self.w_enc.rows()
    }

    pub fn pre_activation(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut pre = self.w_enc.matvec(v)?;
        axpy(1.0, &self.b_enc, &mut pre);
        Ok(pre)
    }

    pub fn encode(&self, v: &[f64]) -> Result<SparseCode> {
        Ok(SparseCode(capped_relu(&self.pre_activation(v)?)))
    }

    pub fn decode(&self, z: &SparseCode) -> Result<Vec<f64>> {
        let mut out = self.w_dec.matvec(z.values())?;
        axpy(1.0, &self.b_dec, &mut out);
        Ok(out)
    }

    pub fn reconstruct(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.decode(&self.encode(v)?)
    }
}

impl Parameters for SparseAutoencoder {
    fn groups(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_enc", self.w_enc.as_slice()),
            ("b_enc", &self.b_enc),
            ("w_dec", self.w_dec.as_slice()),
            ("b_dec", &self.b_dec),
        ]
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w_enc", self.w_enc.as_mut_slice()),
            ("b_enc", &mut self.b_enc),
            ("w_dec", self.w_dec.as_mut_slice()),
            ("b_dec", &mut self.b_dec),
        ]
    }
}

pub fn encode(ae: &SparseAutoencoder, v: &[f64]) -> Result<SparseCode> {
    ae.encode(v)
}

pub fn decode(ae: &SparseAutoencoder, z: &SparseCode) -> Result<Vec<f64>> {
    ae.decode(z)
}

/// Mean squared reconstruction error over the batch.
pub fn reconstruction_loss(ae: &SparseAutoencoder, batch: &[&[f64]]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = 0.0;
    for v in batch {
        total += squared_distance(v, &ae.reconstruct(v)?);
    }
    Ok(total / batch.len() as f64)
}

/// Mean over codes of `Σ_h z_h(1 − z_h)`.
pub fn partial_sparsity_loss(codes: &[SparseCode]) -> Result<f64> {
    if codes.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let total: f64 = codes
        .iter()
        .map(|c| c.values().iter().map(|z| z * (1.0 - z)).sum::<f64>())
        .sum();
    Ok(total / codes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractorLoss {
    pub reconstruction: f64,
    pub partial_sparsity: f64,
    pub total: f64,
}

/// `L_R + λ·L_PS` on a batch together with its gradient.
pub fn loss_and_gradient(
    ae: &SparseAutoencoder,
    batch: &[&[f64]],
    sparsity_weight: f64,
) -> Result<(ExtractorLoss, SparseAutoencoder)> {
    if batch.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = batch.len() as f64;
    let (m, d) = (ae.sparse_dim(), ae.dim());
    let mut grad = ae.zeros_like();
    let mut loss = ExtractorLoss::default();
    let mut d_out = vec![0.0; d];
    let mut d_code = vec![0.0; m];
    for v in batch {
        check_len(d, v.len())?;
        let pre = ae.pre_activation(v)?;
        let z = capped_relu(&pre);
        let mut recon = ae.w_dec.matvec(&z)?;
        axpy(1.0, &ae.b_dec, &mut recon);

        let mut sq = 0.0;
        for i in 0..d {
            let r = recon[i] - v[i];
            sq += r * r;
            d_out[i] = 2.0 * r / n;
        }
        loss.reconstruction += sq;
        loss.partial_sparsity += z.iter().map(|z| z * (1.0 - z)).sum::<f64>();

        grad.w_dec.add_outer(&d_out, &z);
        axpy(1.0, &d_out, &mut grad.b_dec);

        for (h, dz) in d_code.iter_mut().enumerate() {
            *dz = sparsity_weight * (1.0 - 2.0 * z[h]) / n;
        }
        ae.w_dec.matvec_t_acc(&d_out, &mut d_code);
        // clamp passes gradient only strictly inside (0, 1)
        for (h, dz) in d_code.iter_mut().enumerate() {
            if pre[h] <= 0.0 || pre[h] >= 1.0 {
                *dz = 0.0;
            }
        }
        grad.w_enc.add_outer(&d_code, v);
        axpy(1.0, &d_code, &mut grad.b_enc);
    }
    loss.reconstruction /= n;
    loss.partial_sparsity /= n;
    loss.total = loss.reconstruction + sparsity_weight * loss.partial_sparsity;
    Ok((loss, grad))
}

pub fn objective(ae: &SparseAutoencoder, batch: &[&[f64]], sparsity_weight: f64) -> Result<ExtractorLoss> {
    let codes = batch
        .iter()
        .map(|v| ae.encode(v))
        .collect::<Result<Vec<_>>>()?;
    let reconstruction = reconstruction_loss(ae, batch)?;
    let partial_sparsity = partial_sparsity_loss(&codes)?;
    Ok(ExtractorLoss {
        reconstruction,
        partial_sparsity,
        total: reconstruction + sparsity_weight * partial_sparsity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub sparse_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub sparsity_weight: f64,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            sparse_dim: 1000,
            epochs: 50,
            batch_size: 64,
            lr: 0.1,
            sparsity_weight: 1.0,
            seed: 0,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.sparsity_weight >= 0.0) {
            return Err(Error::Config(
                "learning rate must be positive and sparsity weight non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorHistory {
    /// Full-data objective before the first update.
    pub initial: ExtractorLoss,
    /// Mean mini-batch objective per epoch, measured before each update.
    pub epochs: Vec<ExtractorLoss>,
    /// Full-data objective after training.
    pub last: ExtractorLoss,
}

/// Trains the extractor on the given vectors with seeded mini-batch SGD.
pub fn train_extractor_on(
    vectors: &[&[f64]],
    config: &ExtractorConfig,
) -> Result<(SparseAutoencoder, ExtractorHistory)> {
    config.validate()?;
    if vectors.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dim = vectors[0].len();
    let mut ae = SparseAutoencoder::new(dim, config.sparse_dim, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let initial = objective(&ae, vectors, config.sparsity_weight)?;
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut acc = ExtractorLoss::default();
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| vectors[i]).collect();
            let (loss, grad) = loss_and_gradient(&ae, &batch, config.sparsity_weight)?;
            if !loss.total.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "extractor loss {} at epoch {epoch}",
                    loss.total
                )));
            }
            apply_update(&mut ae, &grad, -config.lr);
            acc.reconstruction += loss.reconstruction;
            acc.partial_sparsity += loss.partial_sparsity;
            acc.total += loss.total;
            batches += 1;
        }
        let b = batches as f64;
        epochs.push(ExtractorLoss {
            reconstruction: acc.reconstruction / b,
            partial_sparsity: acc.partial_sparsity / b,
            total: acc.total / b,
        });
    }
    if !ae.all_finite() {
        return Err(Error::TrainingDiverged("non-finite extractor parameters".into()));
    }
    let last = objective(&ae, vectors, config.sparsity_weight)?;
    Ok((
        ae,
        ExtractorHistory {
            initial,
            epochs,
            last,
        },
    ))
}

/// Trains on every vector of `table`.
pub fn train_extractor(
    table: &EmbeddingTable,
    config: &ExtractorConfig,
) -> Result<(SparseAutoencoder, ExtractorHistory)> {
    let vectors: Vec<&[f64]> = (0..table.len()).map(|i| table.vector(i)).collect();
    train_extractor_on(&vectors, config)
}

/// Fraction of code components at most `1e-6` across the given vectors.
pub fn zero_fraction(ae: &SparseAutoencoder, vectors: &[&[f64]]) -> Result<f64> {
    let mut zeros = 0usize;
    let mut total = 0usize;
    for v in vectors {
        let z = ae.encode(v)?;
        zeros += z.values().iter().filter(|&&x| x <= 1e-6).count();
        total += z.len();
    }
    Ok(if total == 0 { 0.0 } else { zeros as f64 / total as f64 })
}
