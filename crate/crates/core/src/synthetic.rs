//! Seeded synthetic corpora and embedding tables with known structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DefinitionEntry, Triple, Violation};
use crate::embedding::EmbeddingTable;
use crate::error::Result;
use crate::linalg::{axpy, dot, norm, Matrix};

/// `n` mutually orthogonal directions of length `radius` (Gram–Schmidt on
/// random draws).
pub fn orthogonal_directions(n: usize, dim: usize, radius: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    assert!(n <= dim, "cannot fit {n} orthogonal directions in {dim} dimensions");
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for u in &out {
            let proj = dot(&v, u) / dot(u, u);
            axpy(-proj, u, &mut v);
        }
        let n = norm(&v);
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x *= radius / n);
            out.push(v);
        }
    }
    out
}

fn jitter(center: &[f64], spread: f64, rng: &mut impl Rng) -> Vec<f64> {
    center.iter().map(|c| c + rng.gen_range(-spread..spread)).collect()
}

#[derive(Debug, Clone)]
pub struct ClusteredTable {
    pub table: EmbeddingTable,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

/// Words scattered uniformly (±`spread` per coordinate) around orthogonal
/// centroids of length `radius`; word `i` belongs to cluster `i % clusters`.
pub fn clustered_table(
    n_words: usize,
    dim: usize,
    clusters: usize,
    radius: f64,
    spread: f64,
    seed: u64,
) -> Result<ClusteredTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = orthogonal_directions(clusters, dim, radius, &mut rng);
    let mut words = Vec::with_capacity(n_words);
    let mut rows = Vec::with_capacity(n_words);
    let mut labels = Vec::with_capacity(n_words);
    for i in 0..n_words {
        let c = i % clusters;
        words.push(format!("c{c}w{i}"));
        rows.push(jitter(&centroids[c], spread, &mut rng));
        labels.push(c);
    }
    Ok(ClusteredTable {
        table: EmbeddingTable::new(words, Matrix::from_rows(&rows)?)?,
        labels,
        centroids,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct TwoSenseConfig {
    pub dim: usize,
    pub words_per_cluster: usize,
    /// Extra clusters that give the extractor more structure to explain.
    pub distractor_clusters: usize,
    pub context_len: usize,
    pub train_per_sense: usize,
    pub held_out: usize,
    pub radius: f64,
    pub spread: f64,
    pub seed: u64,
}

impl Default for TwoSenseConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            words_per_cluster: 30,
            distractor_clusters: 2,
            context_len: 5,
            train_per_sense: 20,
            held_out: 100,
            radius: 1.0,
            spread: 0.15,
            seed: 0,
        }
    }
}

/// A target word whose vector is the sum of two orthogonal cluster
/// centroids, with contexts drawn from one cluster and a definition per sense.
#[derive(Debug, Clone)]
pub struct TwoSense {
    pub table: EmbeddingTable,
    pub target: String,
    pub centroids: [Vec<f64>; 2],
    pub definitions: [Vec<String>; 2],
    pub train: Vec<Triple>,
    pub train_labels: Vec<usize>,
    pub held_out: Vec<Triple>,
    pub held_out_labels: Vec<usize>,
}

pub const SENSE_DEFINITIONS: [&str; 2] = [
    "sloping land beside a body of water",
    "an institution that keeps money",
];

pub fn two_sense(config: &TwoSenseConfig) -> Result<TwoSense> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let clusters = 2 + config.distractor_clusters;
    let centroids = orthogonal_directions(clusters, config.dim, config.radius, &mut rng);

    let mut words = Vec::new();
    let mut rows = Vec::new();
    let mut members: Vec<Vec<String>> = vec![Vec::new(); clusters];
    for (c, centroid) in centroids.iter().enumerate() {
        for i in 0..config.words_per_cluster {
            let w = format!("s{c}w{i}");
            rows.push(jitter(centroid, config.spread, &mut rng));
            members[c].push(w.clone());
            words.push(w);
        }
    }
    let target = "bank".to_string();
    let mut tv = centroids[0].clone();
    axpy(1.0, &centroids[1], &mut tv);
    words.push(target.clone());
    rows.push(tv);
    let definitions = SENSE_DEFINITIONS.map(|d| d.split_whitespace().map(str::to_string).collect::<Vec<_>>());
    for tok in definitions.iter().flatten() {
        if !words.contains(tok) {
            words.push(tok.clone());
            rows.push(jitter(&vec![0.0; config.dim], config.spread, &mut rng));
        }
    }
    let table = EmbeddingTable::new(words, Matrix::from_rows(&rows)?)?;

    let context = |sense: usize, rng: &mut ChaCha8Rng| -> Triple {
        let mut toks: Vec<String> = members[sense]
            .choose_multiple(rng, config.context_len)
            .cloned()
            .collect();
        let at = rng.gen_range(0..=toks.len());
        toks.insert(at, target.clone());
        Triple {
            word: target.clone(),
            context: toks,
            definition: definitions[sense].clone(),
        }
    };
    let mut train = Vec::new();
    let mut train_labels = Vec::new();
    for i in 0..2 * config.train_per_sense {
        let s = i % 2;
        train.push(context(s, &mut rng));
        train_labels.push(s);
    }
    let mut held_out = Vec::new();
    let mut held_out_labels = Vec::new();
    for i in 0..config.held_out {
        let s = i % 2;
        held_out.push(context(s, &mut rng));
        held_out_labels.push(s);
    }
    Ok(TwoSense {
        table,
        target,
        centroids: [centroids[0].clone(), centroids[1].clone()],
        definitions,
        train,
        train_labels,
        held_out,
        held_out_labels,
    })
}

/// Which sense centroid a basis row points to.
pub fn sense_of_row(row: &[f64], centroids: &[Vec<f64>; 2]) -> usize {
    let cos = |c: &[f64]| dot(row, c) / (norm(row) * norm(c)).max(f64::MIN_POSITIVE);
    usize::from(cos(&centroids[1]) > cos(&centroids[0]))
}

/// Vocabulary for the toy corpora: pseudo-words built from syllables.
fn pseudo_word(i: usize) -> String {
    const SYL: [&str; 12] = ["ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "pe", "du", "fa", "go"];
    let mut s = String::new();
    let mut x = i + SYL.len();
    while x > 0 {
        s.push_str(SYL[x % SYL.len()]);
        x /= SYL.len();
    }
    s
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub table: EmbeddingTable,
    pub entries: Vec<DefinitionEntry>,
}

impl ToyCorpus {
    pub fn triples(&self) -> Vec<Triple> {
        crate::dataset::entries_to_triples(&self.entries)
    }
}

/// `n` entries, each with one example sentence and a 3–6 token definition;
/// every token has a pretrained vector of length `dim`.
pub fn toy_corpus(n: usize, dim: usize, seed: u64) -> Result<ToyCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<String> = (0..n).map(|i| format!("{}x", pseudo_word(i))).collect();
    let fillers: Vec<String> = (0..40).map(|i| format!("{}n", pseudo_word(i))).collect();
    let glosses: Vec<String> = (0..30).map(|i| format!("{}d", pseudo_word(i))).collect();
    let mut entries = Vec::with_capacity(n);
    for t in &targets {
        let mut example: Vec<String> = fillers.choose_multiple(&mut rng, 5).cloned().collect();
        let at = rng.gen_range(0..=example.len());
        example.insert(at, t.clone());
        let len = rng.gen_range(3..=6);
        let definition = glosses.choose_multiple(&mut rng, len).cloned().collect();
        entries.push(DefinitionEntry {
            word: t.clone(),
            pos: "noun".into(),
            definition,
            examples: vec![example],
        });
    }
    let words: Vec<String> = targets.into_iter().chain(fillers).chain(glosses).collect();
    let scale = 1.0 / (dim as f64).sqrt();
    let vectors = Matrix::uniform(words.len(), dim, 3.0f64.sqrt() * scale, &mut rng);
    Ok(ToyCorpus {
        table: EmbeddingTable::new(words, vectors)?,
        entries,
    })
}

/// A valid corpus: `n` entries with 1–4 examples each, all containing the
/// target word.
pub fn clean_entries(n: usize, seed: u64) -> Vec<DefinitionEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = ["noun", "verb", "adjective", "adverb"];
    let filler: Vec<String> = (0..60).map(pseudo_word).collect();
    (0..n)
        .map(|i| {
            let word = format!("{}q", pseudo_word(i / 2));
            let examples = (0..rng.gen_range(1..=4))
                .map(|_| {
                    let len = rng.gen_range(3..9);
                    let mut ex: Vec<String> = filler.choose_multiple(&mut rng, len).cloned().collect();
                    let at = rng.gen_range(0..=ex.len());
                    ex.insert(at, word.clone());
                    ex
                })
                .collect();
            let len = rng.gen_range(2..8);
            DefinitionEntry {
                word,
                pos: pos[rng.gen_range(0..pos.len())].into(),
                definition: filler.choose_multiple(&mut rng, len).cloned().collect(),
                examples,
            }
        })
        .collect()
}

/// Applies one defect to every `every`-th entry, cycling through the defect
/// kinds; returns the mutated corpus and the planted `(entry, violation)`s.
pub fn plant_violations(
    entries: &[DefinitionEntry],
    every: usize,
    seed: u64,
) -> (Vec<DefinitionEntry>, Vec<(usize, Violation)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = entries.to_vec();
    let mut planted = Vec::new();
    for (n, i) in (0..out.len()).step_by(every.max(1)).enumerate() {
        let e = &mut out[i];
        match n % 4 {
            0 => {
                let j = rng.gen_range(0..e.examples.len());
                let target = e.word.to_lowercase();
                e.examples[j].retain(|t| t.to_lowercase() != target);
                e.examples[j].push(format!("{}s", e.word));
                planted.push((i, Violation::MissingTargetWord { example: j }));
            }
            1 => {
                e.pos.clear();
                planted.push((i, Violation::EmptyPos));
            }
            2 => {
                e.definition.clear();
                planted.push((i, Violation::EmptyDefinition));
            }
            _ => {
                e.examples.clear();
                planted.push((i, Violation::NoExamples));
            }
        }
    }
    (out, planted)
}
