//! Two-phase optimization: pretrain and freeze the sparse extractor, then
//! train the alignment transform, decoder and decoder vocabulary jointly.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::{sif_embed, SifConfig};
use crate::dataset::{DatasetSplits, Triple};
use crate::decoder::{DecoderConfig, DecoderGrads, DecoderInputs, DecoderModel, Signal, Variant};
use crate::embedding::{build_decoder_vocab, DecoderVocabConfig, EmbeddingTable, UnigramStats};
use crate::error::{check_len, Error, Result};
use crate::extractor::{train_extractor_on, ExtractorConfig, ExtractorHistory, SparseAutoencoder};
use crate::gradcheck::Parameters;
use crate::linalg::{axpy, Matrix};
use crate::mask::{attention_backward, mask_from_parts, AlignmentTransform, SenseMask, DEFAULT_K};
use crate::optim::{Adam, AdamConfig, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase2Config {
    pub epochs: usize,
    /// SGD step for the alignment transform.
    pub sgd_lr: f64,
    /// Decoder weights and decoder vocabulary.
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub k: usize,
    pub variant: Variant,
    pub max_steps: usize,
    pub min_count: usize,
    pub embedding_init_range: f64,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Self {
            epochs: 20,
            sgd_lr: 0.1,
            adam: AdamConfig::default(),
            batch_size: 32,
            seed: 0,
            k: DEFAULT_K,
            variant: Variant::ATS,
            max_steps: crate::decoder::DEFAULT_MAX_STEPS,
            min_count: 1,
            embedding_init_range: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainConfig {
    pub phase1: ExtractorConfig,
    pub phase2: Phase2Config,
    pub sif: SifConfig,
}

impl TrainConfig {
    /// Derives both phase seeds from a single seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.phase1.seed = seed;
        self.phase2.seed = seed.wrapping_add(1000);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.phase1.validate()?;
        let p = &self.phase2;
        if p.batch_size == 0 || p.k == 0 || p.max_steps == 0 {
            return Err(Error::Config("batch size, K and max steps must be positive".into()));
        }
        if !(p.sgd_lr > 0.0) || !(p.adam.lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if p.k > self.phase1.sparse_dim {
            return Err(Error::InvalidK {
                k: p.k,
                m: self.phase1.sparse_dim,
            });
        }
        Ok(())
    }
}

/// Everything needed to generate a definition, apart from the pretrained
/// embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XSense {
    pub extractor: SparseAutoencoder,
    pub transform: AlignmentTransform,
    pub decoder: DecoderModel,
    pub unigram: UnigramStats,
    pub sif: SifConfig,
    pub k: usize,
}

/// Per-triple quantities that stay fixed during phase 2.
#[derive(Debug, Clone)]
pub struct PreparedTriple {
    pub target_embedding: Vec<f64>,
    pub context_vs: Vec<f64>,
    pub indices: Vec<usize>,
    pub basis: Vec<Vec<f64>>,
    pub target_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase2Grads {
    pub transform: Matrix,
    pub decoder: DecoderGrads,
}

impl Parameters for Phase2Grads {
    fn groups(&self) -> Vec<(&'static str, &[f64])> {
        let mut g = vec![("transform", self.transform.as_slice())];
        g.extend(self.decoder.groups());
        g
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut g = vec![("transform", self.transform.as_mut_slice())];
        g.extend(self.decoder.groups_mut());
        g
    }
}

/// Trainable phase-2 parameters; the extractor is deliberately absent.
impl Parameters for XSense {
    fn groups(&self) -> Vec<(&'static str, &[f64])> {
        let mut g = vec![("transform", self.transform.t.as_slice())];
        g.extend(self.decoder.groups());
        g
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut g = vec![("transform", self.transform.t.as_mut_slice())];
        g.extend(self.decoder.groups_mut());
        g
    }
}

/// A generated definition with the mask that conditioned it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub tokens: Vec<String>,
    pub mask: SenseMask,
}

impl XSense {
    pub fn dim(&self) -> usize {
        self.extractor.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        self.decoder.validate()?;
        check_len(self.dim(), self.transform.dim())?;
        check_len(self.dim(), self.decoder.hidden())?;
        if self.k == 0 || self.k > self.extractor.sparse_dim() {
            return Err(Error::InvalidK {
                k: self.k,
                m: self.extractor.sparse_dim(),
            });
        }
        Ok(())
    }

    pub fn context_embedding(&self, table: &EmbeddingTable, context: &[String]) -> Result<Vec<f64>> {
        sif_embed(context, table, &self.unigram, &self.sif)
    }

    pub fn prepare(&self, table: &EmbeddingTable, triple: &Triple) -> Result<PreparedTriple> {
        let target = table
            .lookup(&triple.word)
            .ok_or_else(|| Error::UnknownWord(triple.word.clone()))?;
        let context_vs = self.context_embedding(table, &triple.context)?;
        let code = self.extractor.encode(target)?;
        let indices = crate::mask::top_k_indices(code.values(), self.k)?;
        let basis = crate::mask::gather_basis(&self.extractor, &indices)?;
        Ok(PreparedTriple {
            target_embedding: target.to_vec(),
            context_vs,
            indices,
            basis,
            target_ids: self.decoder.target_ids(&triple.definition),
        })
    }

    pub fn mask(&self, target: &[f64], context_vs: &[f64]) -> Result<SenseMask> {
        crate::mask::generate_mask(&self.extractor, &self.transform, target, context_vs, self.k)
    }

    fn inputs(&self, p: &PreparedTriple) -> Result<(DecoderInputs, Vec<f64>)> {
        let aligned = self.transform.apply(&p.context_vs)?;
        let logits = crate::mask::attention_logits(&aligned, &p.basis)?;
        let weights = crate::linalg::softmax(&logits);
        let sense = crate::mask::sense_vector(&weights, &p.basis)?;
        Ok((
            DecoderInputs {
                target_embedding: p.target_embedding.clone(),
                aligned_context: aligned,
                sense_vector: sense,
            },
            weights,
        ))
    }

    pub fn sample_loss(&self, p: &PreparedTriple) -> Result<f64> {
        let (inputs, _) = self.inputs(p)?;
        crate::decoder::teacher_forced_loss(&self.decoder, &inputs, &p.target_ids)
    }

    /// Mean summed-NLL over the given triples.
    pub fn phase2_loss(&self, batch: &[PreparedTriple]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptySplit);
        }
        let mut total = 0.0;
        for p in batch {
            total += self.sample_loss(p)?;
        }
        Ok(total / batch.len() as f64)
    }

    pub fn zero_grads(&self) -> Phase2Grads {
        Phase2Grads {
            transform: Matrix::zeros(self.dim(), self.dim()),
            decoder: self.decoder.zero_grads(),
        }
    }

    /// Mean loss and its gradient over `batch`.
    pub fn phase2_gradient(&self, batch: &[&PreparedTriple]) -> Result<(f64, Phase2Grads)> {
        if batch.is_empty() {
            return Err(Error::EmptySplit);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads = self.zero_grads();
        let mut total = 0.0;
        for p in batch {
            let (inputs, weights) = self.inputs(p)?;
            let (loss, dinputs) =
                self.decoder
                    .accumulate_gradient(&inputs, &p.target_ids, scale, &mut grads.decoder)?;
            total += loss;
            let mut d_aligned = attention_backward(&weights, &p.basis, dinputs.get(Signal::SenseVector));
            axpy(1.0, dinputs.get(Signal::AlignedContext), &mut d_aligned);
            grads.transform.add_outer(&d_aligned, &p.context_vs);
        }
        Ok((total * scale, grads))
    }

    pub fn generate(&self, table: &EmbeddingTable, word: &str, context: &[String]) -> Result<Generation> {
        let target = table
            .lookup(word)
            .ok_or_else(|| Error::UnknownWord(word.to_string()))?;
        let context_vs = self.context_embedding(table, context)?;
        let code = self.extractor.encode(target)?;
        let aligned = self.transform.apply(&context_vs)?;
        let (mask, _) = mask_from_parts(&code, &aligned, &self.extractor, self.k)?;
        let inputs = DecoderInputs {
            target_embedding: target.to_vec(),
            aligned_context: aligned,
            sense_vector: mask.sense_vector.clone(),
        };
        let tokens = crate::decoder::greedy_decode(&self.decoder, &inputs)?;
        Ok(Generation { tokens, mask })
    }
}

/// Distinct tokens of the training triples (targets, contexts, definitions)
/// that have a pretrained vector, in first-appearance order.
pub fn phase1_vocabulary<'a>(train: &[Triple], table: &'a EmbeddingTable) -> Vec<&'a [f64]> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for t in train {
        let toks = std::iter::once(&t.word).chain(&t.context).chain(&t.definition);
        for tok in toks {
            if let Some(i) = table.index_of(tok) {
                if seen.insert(i) {
                    out.push(table.vector(i));
                }
            }
        }
    }
    out
}

pub fn pretrain_extractor(
    train: &[Triple],
    table: &EmbeddingTable,
    config: &ExtractorConfig,
) -> Result<(SparseAutoencoder, ExtractorHistory)> {
    let vectors = phase1_vocabulary(train, table);
    if vectors.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    train_extractor_on(&vectors, config)
}

/// Fresh phase-2 model around a (pretrained) extractor: identity transform,
/// seeded decoder, decoder vocabulary from the training definitions.
pub fn init_model(
    train: &[Triple],
    table: &EmbeddingTable,
    extractor: SparseAutoencoder,
    config: &TrainConfig,
) -> Result<XSense> {
    if train.is_empty() {
        return Err(Error::EmptySplit);
    }
    check_len(table.dim(), extractor.dim())?;
    let p = &config.phase2;
    let definitions: Vec<Vec<String>> = train.iter().map(|t| t.definition.clone()).collect();
    let vocab = build_decoder_vocab(
        &definitions,
        &DecoderVocabConfig {
            min_count: p.min_count,
            dim: table.dim(),
            init_range: p.embedding_init_range,
            seed: p.seed,
        },
    )?;
    let decoder = DecoderModel::new(
        vocab,
        &DecoderConfig {
            hidden: table.dim(),
            max_steps: p.max_steps,
            variant: p.variant,
            seed: p.seed.wrapping_add(1),
        },
    )?;
    let unigram = UnigramStats::from_sentences(train.iter().map(|t| &t.context))?;
    let model = XSense {
        transform: AlignmentTransform::identity(table.dim()),
        extractor,
        decoder,
        unigram,
        sif: config.sif,
        k: p.k,
    };
    model.validate()?;
    Ok(model)
}

/// Prepares every triple whose target word has a pretrained vector and whose
/// context has an in-vocabulary token; returns the prepared triples and the
/// number skipped.
pub fn prepare_all(
    model: &XSense,
    table: &EmbeddingTable,
    triples: &[Triple],
) -> Result<(Vec<PreparedTriple>, usize)> {
    let mut out = Vec::with_capacity(triples.len());
    let mut skipped = 0;
    for t in triples {
        match model.prepare(table, t) {
            Ok(p) => out.push(p),
            Err(Error::UnknownWord(_) | Error::EmptyContext) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

/// Epoch-by-epoch phase-2 optimizer state.
#[derive(Debug, Clone)]
pub struct Phase2Trainer {
    sgd: Sgd,
    adam: Adam,
    rng: ChaCha8Rng,
    batch_size: usize,
    order: Vec<usize>,
    pub epoch: usize,
}

impl Phase2Trainer {
    pub fn new(config: &Phase2Config, n: usize) -> Self {
        Self {
            sgd: Sgd::new(config.sgd_lr),
            adam: Adam::new(config.adam),
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2)),
            batch_size: config.batch_size,
            order: (0..n).collect(),
            epoch: 0,
        }
    }

    /// One shuffled pass; returns the mean per-triple loss measured before
    /// each batch's update.
    pub fn run_epoch(&mut self, model: &mut XSense, data: &[PreparedTriple]) -> Result<f64> {
        check_len(self.order.len(), data.len())?;
        if data.is_empty() {
            return Err(Error::EmptySplit);
        }
        self.order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in self.order.chunks(self.batch_size) {
            let batch: Vec<&PreparedTriple> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = model.phase2_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "phase-2 loss {loss} at epoch {}",
                    self.epoch
                )));
            }
            total += loss * batch.len() as f64;
            self.sgd.step(&mut model.transform.t, &grads.transform);
            self.adam.step(&mut model.decoder, &grads.decoder);
        }
        self.epoch += 1;
        Ok(total / data.len() as f64)
    }
}

/// SHA-256 over the little-endian bytes of every parameter.
pub fn parameter_checksum<P: Parameters + ?Sized>(params: &P) -> String {
    let mut h = Sha256::new();
    for (name, g) in params.groups() {
        h.update(name.as_bytes());
        for x in g {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checksums {
    pub extractor: String,
    pub transform: String,
    pub decoder: String,
}

impl Checksums {
    pub fn of(model: &XSense) -> Self {
        Self {
            extractor: parameter_checksum(&model.extractor),
            transform: parameter_checksum(&model.transform.t),
            decoder: parameter_checksum(&model.decoder),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1Epoch {
    pub reconstruction: f64,
    pub partial_sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub phase1_initial: Option<Phase1Epoch>,
    pub phase1_epochs: Vec<Phase1Epoch>,
    /// Mean summed NLL per triple.
    pub phase2_epochs: Vec<f64>,
    /// Mean per-token NLL at the end of training.
    pub phase2_final_token_nll: f64,
    pub train_triples: usize,
    pub skipped_triples: usize,
    pub phase1_seconds: f64,
    pub phase2_seconds: f64,
    pub checksums: Checksums,
}

impl TrainReport {
    pub fn all_finite(&self) -> bool {
        self.phase1_epochs
            .iter()
            .all(|e| e.reconstruction.is_finite() && e.partial_sparsity.is_finite())
            && self.phase2_epochs.iter().all(|l| l.is_finite())
    }
}

fn phase1_epochs(history: &ExtractorHistory) -> Vec<Phase1Epoch> {
    history
        .epochs
        .iter()
        .map(|e| Phase1Epoch {
            reconstruction: e.reconstruction,
            partial_sparsity: e.partial_sparsity,
        })
        .collect()
}

/// Token-level teacher-forcing accuracy and mean per-token NLL.
pub fn teacher_forcing_stats(model: &XSense, data: &[PreparedTriple]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::EmptySplit);
    }
    let (mut correct, mut steps, mut nll) = (0usize, 0usize, 0.0);
    for p in data {
        let (inputs, _) = model.inputs(p)?;
        let pass = model.decoder.forced_pass(&inputs, &p.target_ids)?;
        correct += pass.correct;
        steps += pass.steps;
        nll += pass.loss;
    }
    Ok((correct as f64 / steps as f64, nll / steps as f64))
}

pub fn teacher_forcing_accuracy(model: &XSense, table: &EmbeddingTable, triples: &[Triple]) -> Result<f64> {
    let (data, _) = prepare_all(model, table, triples)?;
    Ok(teacher_forcing_stats(model, &data)?.0)
}

/// Phase 2 only, starting from `model`; `on_epoch(epoch, model, loss)` runs
/// after every epoch (checkpointing, early inspection).
pub fn run_phase2<F>(
    model: &mut XSense,
    data: &[PreparedTriple],
    config: &Phase2Config,
    mut on_epoch: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &XSense, f64) -> Result<()>,
{
    let mut trainer = Phase2Trainer::new(config, data.len());
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let loss = trainer.run_epoch(model, data)?;
        losses.push(loss);
        on_epoch(epoch, model, loss)?;
    }
    Ok(losses)
}

/// Full pipeline on the training split. An already trained extractor may be
/// supplied to skip phase 1.
pub fn train_xsense_with<F>(
    train: &[Triple],
    table: &EmbeddingTable,
    config: &TrainConfig,
    extractor: Option<SparseAutoencoder>,
    on_epoch: F,
) -> Result<(XSense, TrainReport)>
where
    F: FnMut(usize, &XSense, f64) -> Result<()>,
{
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit);
    }
    let start = Instant::now();
    let (extractor, history) = match extractor {
        Some(ae) => (ae, None),
        None => {
            let (ae, h) = pretrain_extractor(train, table, &config.phase1)?;
            (ae, Some(h))
        }
    };
    let phase1_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut model = init_model(train, table, extractor, config)?;
    let (data, skipped) = prepare_all(&model, table, train)?;
    if data.is_empty() {
        return Err(Error::EmptySplit);
    }
    let losses = run_phase2(&mut model, &data, &config.phase2, on_epoch)?;
    let (_, token_nll) = teacher_forcing_stats(&model, &data)?;
    let phase2_seconds = start.elapsed().as_secs_f64();

    let report = TrainReport {
        config: *config,
        phase1_initial: history.as_ref().map(|h| Phase1Epoch {
            reconstruction: h.initial.reconstruction,
            partial_sparsity: h.initial.partial_sparsity,
        }),
        phase1_epochs: history.as_ref().map(phase1_epochs).unwrap_or_default(),
        phase2_epochs: losses,
        phase2_final_token_nll: token_nll,
        train_triples: data.len(),
        skipped_triples: skipped,
        phase1_seconds,
        phase2_seconds,
        checksums: Checksums::of(&model),
    };
    if !report.all_finite() {
        return Err(Error::TrainingDiverged("non-finite loss in report".into()));
    }
    Ok((model, report))
}

pub fn train_xsense(
    splits: &DatasetSplits,
    table: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<(XSense, TrainReport)> {
    train_xsense_with(&splits.train, table, config, None, |_, _, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_difference_check, FdOptions};
    use crate::linalg::Matrix;
    use rand::Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn toy_table(dim: usize, seed: u64) -> EmbeddingTable {
        let words: Vec<String> = ["bank", "river", "money", "water", "loan", "shore", "cash", "flow"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = Matrix::uniform(words.len(), dim, 1.0, &mut rng);
        EmbeddingTable::new(words, vectors).unwrap()
    }

    fn toy_triples() -> Vec<Triple> {
        vec![
            Triple {
                word: "bank".into(),
                context: toks("river bank water"),
                definition: toks("shore lender"),
            },
            Triple {
                word: "bank".into(),
                context: toks("money bank loan"),
                definition: toks("lender shore"),
            },
        ]
    }

    fn toy_model(variant: Variant) -> (XSense, Vec<PreparedTriple>) {
        let table = toy_table(4, 3);
        let triples = toy_triples();
        let config = TrainConfig {
            phase1: ExtractorConfig {
                sparse_dim: 8,
                epochs: 3,
                batch_size: 4,
                ..Default::default()
            },
            phase2: Phase2Config {
                k: 2,
                max_steps: 3,
                variant,
                ..Default::default()
            },
            sif: SifConfig::default(),
        };
        let (ae, _) = pretrain_extractor(&triples, &table, &config.phase1).unwrap();
        let mut model = init_model(&triples, &table, ae, &config).unwrap();
        // move T away from identity so every path carries gradient
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for x in model.transform.t.as_mut_slice() {
            *x += rng.gen_range(-0.3..0.3);
        }
        let (data, skipped) = prepare_all(&model, &table, &triples).unwrap();
        assert_eq!(skipped, 0);
        (model, data)
    }

    #[test]
    fn decoder_vocabulary_has_six_entries() {
        let (model, data) = toy_model(Variant::ATS);
        assert_eq!(model.decoder.vocab_size(), 6);
        assert_eq!(data[0].target_ids.len(), 3);
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        for variant in Variant::GRID {
            let (mut model, data) = toy_model(variant);
            let batch: Vec<&PreparedTriple> = data.iter().collect();
            let (_, grads) = model.phase2_gradient(&batch).unwrap();
            let report = finite_difference_check(
                &mut model,
                &grads,
                |m: &XSense| m.phase2_loss(&data).unwrap(),
                |_, _| false,
                &FdOptions::default(),
            );
            assert!(report.passed(), "{variant}: {report:?}");
            assert!(grads.transform.as_slice().iter().any(|&g| g != 0.0));
        }
    }

    #[test]
    fn phase1_vocabulary_is_deduplicated_in_order() {
        let table = toy_table(3, 0);
        let triples = toy_triples();
        let v = phase1_vocabulary(&triples, &table);
        // bank river water shore money loan; lender has no vector
        assert_eq!(v.len(), 6);
        assert_eq!(v[0], table.lookup("bank").unwrap());
        assert_eq!(v[3], table.lookup("shore").unwrap());
        assert_eq!(v[5], table.lookup("loan").unwrap());
    }

    #[test]
    fn zero_epochs_leaves_decoder_at_init_and_extractor_frozen() {
        let (model, data) = toy_model(Variant::TAS);
        let mut trained = model.clone();
        let cfg = Phase2Config {
            epochs: 0,
            ..Default::default()
        };
        run_phase2(&mut trained, &data, &cfg, |_, _, _| Ok(())).unwrap();
        assert_eq!(trained, model);

        let cfg = Phase2Config {
            epochs: 5,
            batch_size: 1,
            ..Default::default()
        };
        let before = parameter_checksum(&model.extractor);
        run_phase2(&mut trained, &data, &cfg, |_, _, _| Ok(())).unwrap();
        assert_eq!(parameter_checksum(&trained.extractor), before);
        assert_eq!(trained.extractor, model.extractor);
        assert_ne!(trained.decoder, model.decoder);
        assert_ne!(trained.transform, model.transform);
    }

    #[test]
    fn gradient_flow_audit() {
        let (model, data) = toy_model(Variant::ATS);
        let batch: Vec<&PreparedTriple> = data.iter().collect();
        let (_, grads) = model.phase2_gradient(&batch).unwrap();
        for (name, g) in grads.groups() {
            if name == "embeddings" {
                continue;
            }
            assert!(g.iter().any(|&x| x != 0.0), "{name} has no gradient");
        }
        // embedding rows fed as inputs (BOS and non-final target tokens) get gradient; others none
        let dim = model.dim();
        let fed: HashSet<usize> = data
            .iter()
            .flat_map(|p| {
                std::iter::once(model.decoder.bos()).chain(p.target_ids[..p.target_ids.len() - 1].iter().copied())
            })
            .collect();
        for row in 0..model.decoder.vocab_size() {
            let r = &grads.decoder.embeddings.as_slice()[row * dim..(row + 1) * dim];
            assert_eq!(r.iter().any(|&x| x != 0.0), fed.contains(&row), "row {row}");
        }
    }

    #[test]
    fn phase2_loss_decreases_and_is_deterministic() {
        let (model, data) = toy_model(Variant::SSS);
        let cfg = Phase2Config {
            epochs: 30,
            batch_size: 2,
            ..Default::default()
        };
        let mut a = model.clone();
        let la = run_phase2(&mut a, &data, &cfg, |_, _, _| Ok(())).unwrap();
        assert!(la.last().unwrap() < la.first().unwrap());
        let mut b = model.clone();
        let lb = run_phase2(&mut b, &data, &cfg, |_, _, _| Ok(())).unwrap();
        assert_eq!(la, lb);
        assert_eq!(Checksums::of(&a), Checksums::of(&b));
    }

    #[test]
    fn oov_triples_are_skipped() {
        let (model, _) = toy_model(Variant::ATS);
        let table = toy_table(4, 3);
        let mut triples = toy_triples();
        triples.push(Triple {
            word: "zebra".into(),
            context: toks("river"),
            definition: toks("x"),
        });
        triples.push(Triple {
            word: "bank".into(),
            context: toks("nothing here"),
            definition: toks("x"),
        });
        let (data, skipped) = prepare_all(&model, &table, &triples).unwrap();
        assert_eq!((data.len(), skipped), (2, 2));
        assert!(matches!(
            model.generate(&table, "zebra", &toks("river")),
            Err(Error::UnknownWord(_))
        ));
    }

    #[test]
    fn generation_uses_the_mask() {
        let (model, _) = toy_model(Variant::ATS);
        let table = toy_table(4, 3);
        let g = model.generate(&table, "bank", &toks("river water")).unwrap();
        assert_eq!(g.mask.indices.len(), 2);
        assert!((g.mask.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g.tokens.len() <= 3);
    }
}
