//! Context-definition corpus: JSON-lines records, quality validation,
//! and seen/unseen splits.

use std::collections::HashSet;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Lowercases and splits on whitespace; every non-alphanumeric character
/// becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            current.push(c);
            continue;
        }
        if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinitionEntry {
    pub word: String,
    pub pos: String,
    pub definition: Vec<String>,
    pub examples: Vec<Vec<String>>,
}

impl DefinitionEntry {
    pub fn to_json_line(&self) -> String {
        json!({
            "word": self.word,
            "pos": self.pos,
            "definition": self.definition.join(" "),
            "examples": self.examples.iter().map(|e| e.join(" ")).collect::<Vec<_>>(),
        })
        .to_string()
    }
}

fn string_field(obj: &serde_json::Map<String, Value>, key: &str, line: usize) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::Schema {
            line,
            message: format!("`{key}` must be a string"),
        }),
        None => Err(Error::Schema {
            line,
            message: format!("missing key `{key}`"),
        }),
    }
}

fn parse_entry_line(text: &str, line: usize) -> Result<DefinitionEntry> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(Error::Schema {
            line,
            message: "expected a JSON object".into(),
        });
    };
    let word = string_field(&obj, "word", line)?.trim().to_lowercase();
    let pos = string_field(&obj, "pos", line)?.trim().to_string();
    let definition = tokenize(&string_field(&obj, "definition", line)?);
    let examples = match obj.get("examples") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(tokenize(s)),
                _ => Err(Error::Schema {
                    line,
                    message: "`examples` must hold strings".into(),
                }),
            })
            .collect::<Result<Vec<_>>>()?,
        Some(_) => {
            return Err(Error::Schema {
                line,
                message: "`examples` must be an array".into(),
            })
        }
        None => {
            return Err(Error::Schema {
                line,
                message: "missing key `examples`".into(),
            })
        }
    };
    Ok(DefinitionEntry {
        word,
        pos,
        definition,
        examples,
    })
}

/// Parses one entry per non-blank line, keeping file order.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<DefinitionEntry>> {
    Ok(parse_dataset_lines(reader)?
        .into_iter()
        .map(|(_, e)| e)
        .collect())
}

/// Like [`parse_dataset`] but keeps each entry's 1-based line number.
pub fn parse_dataset_lines<R: BufRead>(reader: R) -> Result<Vec<(usize, DefinitionEntry)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, parse_entry_line(&line, i + 1)?));
    }
    Ok(out)
}

pub fn write_dataset(entries: &[DefinitionEntry]) -> String {
    entries
        .iter()
        .map(|e| e.to_json_line() + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Violation {
    MissingTargetWord { example: usize },
    NoExamples,
    EmptyDefinition,
    EmptyPos,
}

impl Violation {
    pub fn name(&self) -> &'static str {
        match self {
            Violation::MissingTargetWord { .. } => "MissingTargetWord",
            Violation::NoExamples => "NoExamples",
            Violation::EmptyDefinition => "EmptyDefinition",
            Violation::EmptyPos => "EmptyPos",
        }
    }
}

/// Checks the corpus guarantees. Containment is an exact match against the
/// lowercased tokens, so inflected forms do not count.
pub fn validate_entry(entry: &DefinitionEntry) -> Vec<Violation> {
    let mut violations = Vec::new();
    let target = entry.word.to_lowercase();
    for (i, ex) in entry.examples.iter().enumerate() {
        if !ex.iter().any(|t| t.to_lowercase() == target) {
            violations.push(Violation::MissingTargetWord { example: i });
        }
    }
    if entry.examples.is_empty() {
        violations.push(Violation::NoExamples);
    }
    if entry.definition.is_empty() {
        violations.push(Violation::EmptyDefinition);
    }
    if entry.pos.trim().is_empty() {
        violations.push(Violation::EmptyPos);
    }
    violations
}

/// One training or evaluation instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub word: String,
    pub context: Vec<String>,
    pub definition: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TripleRecord {
    word: String,
    context: String,
    definition: String,
}

impl Triple {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&TripleRecord {
            word: self.word.clone(),
            context: self.context.join(" "),
            definition: self.definition.join(" "),
        })
        .expect("string record serializes")
    }
}

pub fn parse_triples<R: BufRead>(reader: R) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TripleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(Triple {
            word: rec.word.trim().to_lowercase(),
            context: tokenize(&rec.context),
            definition: tokenize(&rec.definition),
        });
    }
    Ok(out)
}

pub fn write_triples(triples: &[Triple]) -> String {
    triples.iter().map(|t| t.to_json_line() + "\n").collect()
}

/// Every (word, example, definition) triple, in entry order.
pub fn entries_to_triples(entries: &[DefinitionEntry]) -> Vec<Triple> {
    entries
        .iter()
        .flat_map(|e| {
            e.examples.iter().map(move |ex| Triple {
                word: e.word.clone(),
                context: ex.clone(),
                definition: e.definition.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplits {
    pub train: Vec<Triple>,
    pub test_seen: Vec<Triple>,
    pub test_unseen: Vec<Triple>,
}

/// Partitions target words first (unseen words contribute all of their
/// triples to `test_unseen`), then holds out one example sentence of each
/// remaining definition that has at least two, for `test_seen`.
pub fn make_splits(
    entries: &[DefinitionEntry],
    unseen_fraction: f64,
    seed: u64,
) -> Result<DatasetSplits> {
    if !(0.0..1.0).contains(&unseen_fraction) {
        return Err(Error::Split(format!(
            "unseen fraction {unseen_fraction} outside [0, 1)"
        )));
    }
    let mut words: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for e in entries {
        if seen.insert(e.word.as_str()) {
            words.push(&e.word);
        }
    }
    let n_unseen = (unseen_fraction * words.len() as f64).round() as usize;
    if unseen_fraction > 0.0 && (n_unseen == 0 || n_unseen >= words.len()) {
        return Err(Error::Split(format!(
            "{} words cannot honor unseen fraction {unseen_fraction}",
            words.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    words.shuffle(&mut rng);
    let unseen: HashSet<&str> = words[..n_unseen].iter().copied().collect();

    let mut splits = DatasetSplits::default();
    for e in entries {
        let triple = |ex: &Vec<String>| Triple {
            word: e.word.clone(),
            context: ex.clone(),
            definition: e.definition.clone(),
        };
        if unseen.contains(e.word.as_str()) {
            splits.test_unseen.extend(e.examples.iter().map(triple));
            continue;
        }
        let held = (e.examples.len() >= 2).then(|| rng.gen_range(0..e.examples.len()));
        for (i, ex) in e.examples.iter().enumerate() {
            if Some(i) == held {
                splits.test_seen.push(triple(ex));
            } else {
                splits.train.push(triple(ex));
            }
        }
    }
    Ok(splits)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub words: usize,
    pub definitions: usize,
    pub sentences: usize,
    /// Definition tokens plus example tokens.
    pub tokens: usize,
    pub avg_sentences_per_definition: f64,
}

pub fn dataset_stats(entries: &[DefinitionEntry]) -> DatasetStats {
    let words = entries
        .iter()
        .map(|e| e.word.as_str())
        .collect::<HashSet<_>>()
        .len();
    let sentences: usize = entries.iter().map(|e| e.examples.len()).sum();
    let tokens = entries
        .iter()
        .map(|e| e.definition.len() + e.examples.iter().map(Vec::len).sum::<usize>())
        .sum();
    DatasetStats {
        words,
        definitions: entries.len(),
        sentences,
        tokens,
        avg_sentences_per_definition: if entries.is_empty() {
            0.0
        } else {
            sentences as f64 / entries.len() as f64
        },
    }
}
