//! Word embedding tables: the frozen pretrained vocabulary used by the
//! encoder side and the trainable decoder vocabulary.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, norm, Matrix};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const PAD: &str = "<pad>";

/// Special tokens every decoder vocabulary starts with, in index order.
pub const SPECIAL_TOKENS: [&str; 4] = [BOS, EOS, UNK, PAD];

/// Ordered token → vector map. Rows of `vectors` follow `words`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Matrix,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    words: Vec<String>,
    vectors: Matrix,
}

impl TryFrom<RawTable> for EmbeddingTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        EmbeddingTable::new(raw.words, raw.vectors)
    }
}

impl From<EmbeddingTable> for RawTable {
    fn from(table: EmbeddingTable) -> Self {
        RawTable {
            words: table.words,
            vectors: table.vectors,
        }
    }
}

impl EmbeddingTable {
    pub fn new(words: Vec<String>, vectors: Matrix) -> Result<Self> {
        check_len(words.len(), vectors.rows())?;
        if vectors.cols() == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if !vectors.is_finite() {
            return Err(Error::Config("embedding vectors must be finite".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::DuplicateWord {
                    word: w.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self {
            words,
            index,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn lookup(&self, word: &str) -> Option<&[f64]> {
        self.index_of(word).map(|i| self.vectors.row(i))
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut Matrix {
        &mut self.vectors
    }

    /// Writes the table in word2vec text format.
    pub fn to_word2vec_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim());
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(w);
            for x in self.vectors.row(i) {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Reads a word2vec text-format table: a `<count> <dim>` header followed by
/// one `token x_1 ... x_dim` row per word.
pub fn load_embeddings<R: BufRead>(reader: R) -> Result<EmbeddingTable> {
    let mut lines = reader.lines().enumerate();
    let (count, dim) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            });
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("bad header field `{s}`: {e}"),
            })
        };
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: i + 1,
                message: "header must be `<count> <dim>`".into(),
            });
        }
        break (parse(fields[0])?, parse(fields[1])?);
    };
    if dim == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "dimension must be positive".into(),
        });
    }

    let mut words = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    let mut seen: HashMap<String, usize> = HashMap::with_capacity(count);
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        if words.len() == count {
            return Err(Error::Parse {
                line: lineno,
                message: format!("more rows than the declared {count}"),
            });
        }
        if seen.insert(word.to_string(), lineno).is_some() {
            return Err(Error::DuplicateWord {
                word: word.to_string(),
                line: lineno,
            });
        }
        let start = data.len();
        for f in fields {
            let x: f64 = f.parse().map_err(|e| Error::Parse {
                line: lineno,
                message: format!("bad number `{f}`: {e}"),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("non-finite value `{f}`"),
                });
            }
            data.push(x);
        }
        check_len(dim, data.len() - start)?;
        words.push(word.to_string());
    }
    if words.len() != count {
        return Err(Error::Parse {
            line: words.len() + 1,
            message: format!("expected {count} rows, found {}", words.len()),
        });
    }
    EmbeddingTable::new(words, Matrix::from_vec(count, dim, data)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderVocabConfig {
    /// Corpus tokens with fewer occurrences than this are left out.
    pub min_count: usize,
    pub dim: usize,
    pub init_range: f64,
    pub seed: u64,
}

impl Default for DecoderVocabConfig {
    fn default() -> Self {
        Self {
            min_count: 1,
            dim: 300,
            init_range: 0.1,
            seed: 0,
        }
    }
}

/// Builds the trainable decoder vocabulary: the special tokens followed by
/// corpus tokens (first-appearance order) meeting the frequency floor.
pub fn build_decoder_vocab(
    corpus: &[Vec<String>],
    config: &DecoderVocabConfig,
) -> Result<EmbeddingTable> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in corpus.iter().flatten() {
        let c = counts.entry(tok.as_str()).or_insert(0);
        if *c == 0 {
            order.push(tok);
        }
        *c += 1;
    }
    let mut words: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    words.extend(
        order
            .into_iter()
            .filter(|t| !SPECIAL_TOKENS.contains(t) && counts[t] >= config.min_count)
            .map(str::to_string),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vectors = Matrix::uniform(words.len(), config.dim, config.init_range, &mut rng);
    EmbeddingTable::new(words, vectors)
}

/// Token counts over a corpus, the source of the `p(w)` used by SIF.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnigramStats {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl UnigramStats {
    pub fn from_sentences<'a, I, S>(sentences: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut counts = BTreeMap::new();
        let mut total = 0u64;
        for s in sentences {
            for tok in s.as_ref() {
                *counts.entry(tok.to_lowercase()).or_insert(0) += 1;
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self { counts, total })
    }

    pub fn from_counts(counts: BTreeMap<String, u64>) -> Result<Self> {
        let total = counts.values().sum();
        if total == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self { counts, total })
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    /// `counts[word] / total`, zero for unseen words.
    pub fn probability(&self, word: &str) -> f64 {
        self.count(word) as f64 / self.total as f64
    }
}

pub fn unigram_probability(stats: &UnigramStats, word: &str) -> f64 {
    stats.probability(word)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// The `k` most cosine-similar words, descending; ties go to the earlier word.
pub fn nearest_neighbors(
    table: &EmbeddingTable,
    query: &[f64],
    k: usize,
) -> Result<Vec<(String, f64)>> {
    check_len(table.dim(), query.len())?;
    if k > table.len() {
        return Err(Error::InvalidK { k, m: table.len() });
    }
    let qn = norm(query);
    if qn == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut scored: Vec<(usize, f64)> = (0..table.len())
        .map(|i| {
            let v = table.vector(i);
            let vn = norm(v);
            let sim = if vn == 0.0 { 0.0 } else { dot(v, query) / (vn * qn) };
            (i, sim)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (table.word(i).to_string(), s))
        .collect())
}
