//! Sentence-level BLEU, ROUGE-L and split evaluation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::Triple;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::extractor::SparseAutoencoder;
use crate::mask::SenseMask;
use crate::training::XSense;

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and the candidate's n-gram count.
pub fn modified_precision<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matches = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, candidate.len().saturating_sub(n - 1))
}

/// Sentence BLEU on a 0–100 scale: unsmoothed unigram precision, add-one
/// smoothed precisions for n = 2..=max_n, brevity penalty
/// `min(1, exp(1 − |ref|/|cand|))`.
pub fn sentence_bleu<S: AsRef<str>>(candidate: &[S], reference: &[S], max_n: usize) -> f64 {
    if candidate.is_empty() || reference.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, total) = modified_precision(candidate, reference, n);
        let p = if n == 1 {
            m as f64 / total as f64
        } else {
            (m + 1) as f64 / (total + 1) as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = (1.0 - r / c).exp().min(1.0);
    (100.0 * bp * (log_sum / max_n as f64).exp()).clamp(0.0, 100.0)
}

pub fn lcs_length<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1 in `[0, 1]`.
pub fn rouge_l_f1<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let l = lcs_length(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// The `k` words whose code value on `dim` is largest, descending; ties go
/// to the earlier word.
pub fn inspect_dimension(
    ae: &SparseAutoencoder,
    table: &EmbeddingTable,
    dim: usize,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    DimensionIndex::build(ae, table)?.top(dim, k)
}

/// Code values of every vocabulary word, for repeated dimension queries.
#[derive(Debug, Clone)]
pub struct DimensionIndex {
    words: Vec<String>,
    /// `|V| × m`, row-major.
    codes: Vec<f64>,
    sparse_dim: usize,
}

impl DimensionIndex {
    pub fn build(ae: &SparseAutoencoder, table: &EmbeddingTable) -> Result<Self> {
        let mut codes = Vec::with_capacity(table.len() * ae.sparse_dim());
        for i in 0..table.len() {
            codes.extend_from_slice(ae.encode(table.vector(i))?.values());
        }
        Ok(Self {
            words: table.words().to_vec(),
            codes,
            sparse_dim: ae.sparse_dim(),
        })
    }

    pub fn top(&self, dim: usize, k: usize) -> Result<Vec<(String, f64)>> {
        if dim >= self.sparse_dim {
            return Err(Error::Index {
                index: dim,
                len: self.sparse_dim,
            });
        }
        if k == 0 || k > self.words.len() {
            return Err(Error::InvalidK {
                k,
                m: self.words.len(),
            });
        }
        let mut scored: Vec<(usize, f64)> = (0..self.words.len())
            .map(|i| (i, self.codes[i * self.sparse_dim + dim]))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(i, v)| (self.words[i].clone(), v))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDefinition {
    pub tokens: Vec<String>,
    pub mask: Option<SenseMask>,
}

pub trait DefinitionGenerator {
    fn generate(&self, triple: &Triple) -> Result<GeneratedDefinition>;

    /// Optional nearest words for a sparse dimension, for reports.
    fn neighbors(&self, _dim: usize) -> Vec<String> {
        Vec::new()
    }
}

/// Emits the reference definition; a debugging oracle.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoGenerator;

impl DefinitionGenerator for EchoGenerator {
    fn generate(&self, triple: &Triple) -> Result<GeneratedDefinition> {
        Ok(GeneratedDefinition {
            tokens: triple.definition.clone(),
            mask: None,
        })
    }
}

pub struct ModelGenerator<'a> {
    pub model: &'a XSense,
    pub table: &'a EmbeddingTable,
    index: Option<DimensionIndex>,
    top: usize,
}

impl<'a> ModelGenerator<'a> {
    pub fn new(model: &'a XSense, table: &'a EmbeddingTable) -> Self {
        Self {
            model,
            table,
            index: None,
            top: 0,
        }
    }

    /// Also report the `top` strongest words for every selected dimension.
    pub fn with_neighbors(mut self, top: usize) -> Result<Self> {
        if top > 0 {
            self.index = Some(DimensionIndex::build(&self.model.extractor, self.table)?);
            self.top = top.min(self.table.len());
        }
        Ok(self)
    }
}

impl DefinitionGenerator for ModelGenerator<'_> {
    fn generate(&self, triple: &Triple) -> Result<GeneratedDefinition> {
        let g = self.model.generate(self.table, &triple.word, &triple.context)?;
        Ok(GeneratedDefinition {
            tokens: g.tokens,
            mask: Some(g.mask),
        })
    }

    fn neighbors(&self, dim: usize) -> Vec<String> {
        match &self.index {
            Some(index) => index
                .top(dim, self.top)
                .map(|v| v.into_iter().map(|(w, _)| w).collect())
                .unwrap_or_default(),
            None => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub neighbors: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub word: String,
    pub context: String,
    pub reference: String,
    pub hypothesis: String,
    pub bleu: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub mask: Option<MaskRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub bleu: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub count: usize,
    /// Triples whose target or context had no pretrained vector.
    pub skipped: usize,
    pub instances: Vec<InstanceRecord>,
}

/// Generates a definition per triple and averages both metrics.
pub fn evaluate_split<G: DefinitionGenerator + ?Sized>(generator: &G, split: &[Triple]) -> Result<EvalResult> {
    if split.is_empty() {
        return Err(Error::EmptySplit);
    }
    let mut instances = Vec::with_capacity(split.len());
    let mut skipped = 0;
    for t in split {
        let g = match generator.generate(t) {
            Ok(g) => g,
            Err(Error::UnknownWord(_) | Error::EmptyContext) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mask = g.mask.map(|m| MaskRecord {
            neighbors: m.indices.iter().map(|&d| generator.neighbors(d)).collect(),
            indices: m.indices,
            weights: m.weights,
        });
        instances.push(InstanceRecord {
            word: t.word.clone(),
            context: t.context.join(" "),
            reference: t.definition.join(" "),
            hypothesis: g.tokens.join(" "),
            bleu: sentence_bleu(&g.tokens, &t.definition, 4),
            rouge_l: rouge_l_f1(&g.tokens, &t.definition),
            mask,
        });
    }
    if instances.is_empty() {
        return Err(Error::EmptySplit);
    }
    let n = instances.len() as f64;
    Ok(EvalResult {
        bleu: instances.iter().map(|r| r.bleu).sum::<f64>() / n,
        rouge_l: instances.iter().map(|r| r.rouge_l).sum::<f64>() / n,
        count: instances.len(),
        skipped,
        instances,
    })
}
