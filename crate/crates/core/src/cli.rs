//! Command-line interface.
//!
//! Exit codes: 0 success, 1 domain failure (violations, unknown words, bad
//! data), 2 usage or IO failure.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::{self, ExtractorCheckpoint, ModelCheckpoint};
use crate::context::SifConfig;
use crate::dataset::{
    dataset_stats, entries_to_triples, make_splits, parse_dataset, parse_dataset_lines, parse_triples,
    validate_entry, write_dataset, write_triples, Triple, Violation,
};
use crate::decoder::Variant;
use crate::embedding::{load_embeddings, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, DefinitionGenerator, DimensionIndex, EchoGenerator, ModelGenerator};
use crate::extractor::ExtractorConfig;
use crate::optim::AdamConfig;
use crate::synthetic;
use crate::training::{pretrain_extractor, train_xsense_with, Phase1Epoch, Phase2Config, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "xsense", version, about = "Sparse sense extraction and definition generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_real(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        Ok(_) => Err("must be a positive finite number".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative_real(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.is_finite() => Ok(x),
        Ok(_) => Err("must be a non-negative finite number".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn fraction(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if (0.0..1.0).contains(&x) => Ok(x),
        Ok(_) => Err("must lie in [0, 1)".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Small corpus of single-example entries plus embeddings.
    Toy,
    /// Two-sense target word, training and held-out triples.
    TwoSense,
    /// Valid multi-example corpus.
    Clean,
    /// Clean corpus with planted guarantee violations.
    Mutated,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the dataset guarantees; exit 1 on any violation.
    Validate {
        #[arg(long)]
        data: PathBuf,
        /// Write the violation report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus statistics as JSON.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write train / test_seen / test_unseen triple files into a directory.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1, value_parser = fraction)]
        unseen_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pretrain the sparse extractor on the vocabulary of a training set.
    TrainExtractor {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000, value_parser = positive)]
        sparse_dim: usize,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 64, value_parser = positive)]
        batch: usize,
        #[arg(long, default_value_t = 0.1, value_parser = positive_real)]
        lr: f64,
        #[arg(long, default_value_t = 1.0, value_parser = non_negative_real)]
        sparsity_weight: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Both training phases; writes extractor.json, model.json and report.json.
    Train(Box<TrainArgs>),
    /// Generate a definition for a word in context.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        word: String,
        #[arg(long)]
        context: String,
        /// Neighbors listed per selected dimension.
        #[arg(long, default_value_t = 3)]
        top: usize,
    },
    /// Greedy-decode a split and report BLEU and ROUGE-L.
    Eval {
        #[arg(long, required_unless_present = "echo")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Emit the reference definitions instead of decoding.
        #[arg(long)]
        echo: bool,
        /// Neighbors per selected dimension in the report.
        #[arg(long, default_value_t = 0)]
        top: usize,
    },
    /// Words with the largest code value on one sparse dimension.
    Inspect {
        /// Model or extractor checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 10, value_parser = positive)]
        top: usize,
        /// Required with an extractor checkpoint.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Write a synthetic corpus (and embeddings) into a directory.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20, value_parser = positive)]
        n: usize,
        #[arg(long, default_value_t = 300, value_parser = positive)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Dataset entries or training triples.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Reuse a pretrained extractor and skip phase 1.
    #[arg(long)]
    pub extractor: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "ATS")]
    pub variant: Variant,
    #[arg(long, default_value_t = 5, value_parser = positive)]
    pub k: usize,
    #[arg(long, default_value_t = 1000, value_parser = positive)]
    pub sparse_dim: usize,
    /// Phase-1 epochs.
    #[arg(long, default_value_t = 50)]
    pub extractor_epochs: usize,
    #[arg(long, default_value_t = 64, value_parser = positive)]
    pub extractor_batch: usize,
    #[arg(long, default_value_t = 0.1, value_parser = positive_real)]
    pub extractor_lr: f64,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative_real)]
    pub sparsity_weight: f64,
    /// Phase-2 epochs.
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32, value_parser = positive)]
    pub batch: usize,
    /// Adam step for the decoder and decoder vocabulary.
    #[arg(long, default_value_t = 1e-3, value_parser = positive_real)]
    pub lr: f64,
    /// SGD step for the alignment transform.
    #[arg(long, default_value_t = 0.1, value_parser = positive_real)]
    pub transform_lr: f64,
    #[arg(long, default_value_t = 32, value_parser = positive)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 1, value_parser = positive)]
    pub min_count: usize,
    /// Also write a checkpoint every N phase-2 epochs.
    #[arg(long, value_parser = positive)]
    pub checkpoint_every: Option<usize>,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            phase1: ExtractorConfig {
                sparse_dim: self.sparse_dim,
                epochs: self.extractor_epochs,
                batch_size: self.extractor_batch,
                lr: self.extractor_lr,
                sparsity_weight: self.sparsity_weight,
                seed: 0,
            },
            phase2: Phase2Config {
                epochs: self.epochs,
                sgd_lr: self.transform_lr,
                adam: AdamConfig {
                    lr: self.lr,
                    ..Default::default()
                },
                batch_size: self.batch,
                seed: 0,
                k: self.k,
                variant: self.variant,
                max_steps: self.max_steps,
                min_count: self.min_count,
                embedding_init_range: 0.1,
            },
            sif: SifConfig::default(),
        }
        .with_seed(self.seed)
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 2,
        _ => 1,
    }
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    load_embeddings(BufReader::new(fs::File::open(path)?))
}

/// Reads dataset entries (expanded to one triple per example) or, failing
/// the entry schema, triple records.
pub fn read_triples(path: &Path) -> Result<Vec<Triple>> {
    let text = fs::read_to_string(path)?;
    match parse_dataset(text.as_bytes()) {
        Ok(entries) => Ok(entries_to_triples(&entries)),
        Err(Error::Schema { .. }) => parse_triples(text.as_bytes()),
        Err(e) => Err(e),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    checkpoint::write_atomic(path, &bytes)
}

#[derive(Serialize)]
struct ViolationRecord<'a> {
    line: usize,
    word: &'a str,
    violations: &'a [Violation],
}

fn describe(v: &Violation) -> String {
    match v {
        Violation::MissingTargetWord { example } => format!("{} (example {example})", v.name()),
        _ => v.name().to_string(),
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<u8> {
    match cli.command {
        Command::Validate { data, out: report } => {
            let entries = parse_dataset_lines(BufReader::new(fs::File::open(&data)?))?;
            let found: Vec<(usize, &str, Vec<Violation>)> = entries
                .iter()
                .map(|(line, e)| (*line, e.word.as_str(), validate_entry(e)))
                .filter(|(_, _, v)| !v.is_empty())
                .collect();
            let mut total = 0;
            for (line, _, vs) in &found {
                for v in vs {
                    writeln!(out, "line {line}: {}", describe(v))?;
                    total += 1;
                }
            }
            writeln!(out, "entries {} violations {total}", entries.len())?;
            if let Some(path) = report {
                let records: Vec<ViolationRecord> = found
                    .iter()
                    .map(|(line, word, v)| ViolationRecord {
                        line: *line,
                        word,
                        violations: v,
                    })
                    .collect();
                write_json(&path, &records)?;
            }
            Ok(u8::from(total > 0))
        }
        Command::Stats { data, out: report } => {
            let entries = parse_dataset(BufReader::new(fs::File::open(&data)?))?;
            let stats = dataset_stats(&entries);
            writeln!(out, "{}", serde_json::to_string_pretty(&stats)?)?;
            if let Some(path) = report {
                write_json(&path, &stats)?;
            }
            Ok(0)
        }
        Command::Split {
            data,
            out: dir,
            unseen_fraction,
            seed,
        } => {
            let entries = parse_dataset(BufReader::new(fs::File::open(&data)?))?;
            let splits = make_splits(&entries, unseen_fraction, seed)?;
            fs::create_dir_all(&dir)?;
            for (name, triples) in [
                ("train", &splits.train),
                ("test_seen", &splits.test_seen),
                ("test_unseen", &splits.test_unseen),
            ] {
                checkpoint::write_atomic(&dir.join(format!("{name}.jsonl")), write_triples(triples).as_bytes())?;
                writeln!(out, "{name} {}", triples.len())?;
            }
            Ok(0)
        }
        Command::TrainExtractor {
            embeddings,
            data,
            out: path,
            sparse_dim,
            epochs,
            batch,
            lr,
            sparsity_weight,
            seed,
        } => {
            let table = read_embeddings(&embeddings)?;
            let triples = read_triples(&data)?;
            let config = ExtractorConfig {
                sparse_dim,
                epochs,
                batch_size: batch,
                lr,
                sparsity_weight,
                seed,
            };
            let (extractor, history) = pretrain_extractor(&triples, &table, &config)?;
            writeln!(
                out,
                "reconstruction {} -> {}",
                history.initial.reconstruction, history.last.reconstruction
            )?;
            writeln!(
                out,
                "partial_sparsity {} -> {}",
                history.initial.partial_sparsity, history.last.partial_sparsity
            )?;
            let digest = checkpoint::save_extractor(
                &path,
                &ExtractorCheckpoint {
                    extractor,
                    config,
                    history: Some(history),
                },
            )?;
            writeln!(out, "extractor {} sha256 {digest}", path.display())?;
            Ok(0)
        }
        Command::Train(args) => cmd_train(&args, out),
        Command::Generate {
            checkpoint: path,
            word,
            context,
            top,
        } => {
            let ckpt = checkpoint::load_model(&path)?;
            let context = crate::dataset::tokenize(&context);
            let word = word.to_lowercase();
            let g = ckpt.model.generate(&ckpt.embeddings, &word, &context)?;
            writeln!(out, "definition: {}", g.tokens.join(" "))?;
            let index = if top > 0 {
                Some(DimensionIndex::build(&ckpt.model.extractor, &ckpt.embeddings)?)
            } else {
                None
            };
            for (&dim, &w) in g.mask.indices.iter().zip(&g.mask.weights) {
                let neighbors = match &index {
                    Some(ix) => ix
                        .top(dim, top.min(ckpt.embeddings.len()))?
                        .into_iter()
                        .map(|(w, _)| w)
                        .collect::<Vec<_>>()
                        .join(", "),
                    None => String::new(),
                };
                writeln!(out, "dim {dim}\tweight {w}\tneighbors {neighbors}")?;
            }
            Ok(0)
        }
        Command::Eval {
            checkpoint: path,
            data,
            out: report,
            echo,
            top,
        } => {
            let split = read_triples(&data)?;
            let ckpt;
            let generator: Box<dyn DefinitionGenerator> = if echo {
                Box::new(EchoGenerator)
            } else {
                let path = path.ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
                ckpt = checkpoint::load_model(&path)?;
                Box::new(ModelGenerator::new(&ckpt.model, &ckpt.embeddings).with_neighbors(top)?)
            };
            let result = evaluate_split(generator.as_ref(), &split)?;
            writeln!(out, "bleu {}", result.bleu)?;
            writeln!(out, "rougeL {}", result.rouge_l)?;
            writeln!(out, "count {} skipped {}", result.count, result.skipped)?;
            if let Some(p) = report {
                write_json(&p, &result)?;
            }
            Ok(0)
        }
        Command::Inspect {
            checkpoint: path,
            dim,
            top,
            embeddings,
        } => {
            let (extractor, table) = match checkpoint::load_model(&path) {
                Ok(ckpt) => {
                    let table = match &embeddings {
                        Some(p) => read_embeddings(p)?,
                        None => ckpt.embeddings,
                    };
                    (ckpt.model.extractor, table)
                }
                Err(Error::Checkpoint(_)) => {
                    let ckpt = checkpoint::load_extractor(&path)?;
                    let p = embeddings.ok_or_else(|| {
                        Error::Config("--embeddings is required with an extractor checkpoint".into())
                    })?;
                    (ckpt.extractor, read_embeddings(&p)?)
                }
                Err(e) => return Err(e),
            };
            for (word, value) in crate::eval::inspect_dimension(&extractor, &table, dim, top.min(table.len()))? {
                writeln!(out, "{word}\t{value}")?;
            }
            Ok(0)
        }
        Command::Synth {
            kind,
            out: dir,
            n,
            dim,
            seed,
        } => {
            fs::create_dir_all(&dir)?;
            match kind {
                SynthKind::Toy => {
                    let toy = synthetic::toy_corpus(n, dim, seed)?;
                    checkpoint::write_atomic(&dir.join("embeddings.txt"), toy.table.to_word2vec_text().as_bytes())?;
                    checkpoint::write_atomic(&dir.join("dataset.jsonl"), write_dataset(&toy.entries).as_bytes())?;
                }
                SynthKind::TwoSense => {
                    let ts = synthetic::two_sense(&synthetic::TwoSenseConfig {
                        dim,
                        seed,
                        ..Default::default()
                    })?;
                    checkpoint::write_atomic(&dir.join("embeddings.txt"), ts.table.to_word2vec_text().as_bytes())?;
                    checkpoint::write_atomic(&dir.join("train.jsonl"), write_triples(&ts.train).as_bytes())?;
                    checkpoint::write_atomic(&dir.join("held_out.jsonl"), write_triples(&ts.held_out).as_bytes())?;
                }
                SynthKind::Clean => {
                    let entries = synthetic::clean_entries(n, seed);
                    checkpoint::write_atomic(&dir.join("dataset.jsonl"), write_dataset(&entries).as_bytes())?;
                }
                SynthKind::Mutated => {
                    let (entries, planted) = synthetic::plant_violations(&synthetic::clean_entries(n, seed), 3, seed);
                    checkpoint::write_atomic(&dir.join("dataset.jsonl"), write_dataset(&entries).as_bytes())?;
                    let records: Vec<serde_json::Value> = planted
                        .iter()
                        .map(|(i, v)| serde_json::json!({ "line": i + 1, "violation": v }))
                        .collect();
                    write_json(&dir.join("planted.json"), &records)?;
                }
            }
            writeln!(out, "wrote {}", dir.display())?;
            Ok(0)
        }
    }
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<u8> {
    let config = args.config();
    config.validate()?;
    let table = read_embeddings(&args.embeddings)?;
    let triples = read_triples(&args.data)?;
    fs::create_dir_all(&args.out)?;

    let start = Instant::now();
    let (extractor, history) = match &args.extractor {
        Some(p) => {
            let ckpt = checkpoint::load_extractor(p)?;
            (ckpt.extractor, ckpt.history)
        }
        None => {
            let (ae, h) = pretrain_extractor(&triples, &table, &config.phase1)?;
            (ae, Some(h))
        }
    };
    let phase1_seconds = start.elapsed().as_secs_f64();
    let extractor_path = args.out.join("extractor.json");
    let digest = checkpoint::save_extractor(
        &extractor_path,
        &ExtractorCheckpoint {
            extractor: extractor.clone(),
            config: config.phase1,
            history: history.clone(),
        },
    )?;
    writeln!(out, "extractor {} sha256 {digest}", extractor_path.display())?;

    let ckpt_dir = args.out.join("checkpoints");
    let (model, mut report) = train_xsense_with(&triples, &table, &config, Some(extractor), |epoch, model, _| {
        if let Some(every) = args.checkpoint_every {
            if (epoch + 1) % every == 0 {
                fs::create_dir_all(&ckpt_dir)?;
                checkpoint::save_model(
                    &ckpt_dir.join(format!("epoch-{:04}.json", epoch + 1)),
                    &ModelCheckpoint {
                        model: model.clone(),
                        embeddings: table.clone(),
                        config,
                        epoch: epoch + 1,
                    },
                )?;
            }
        }
        Ok(())
    })?;
    if let Some(h) = &history {
        report.phase1_initial = Some(Phase1Epoch {
            reconstruction: h.initial.reconstruction,
            partial_sparsity: h.initial.partial_sparsity,
        });
        report.phase1_epochs = h
            .epochs
            .iter()
            .map(|e| Phase1Epoch {
                reconstruction: e.reconstruction,
                partial_sparsity: e.partial_sparsity,
            })
            .collect();
        report.phase1_seconds = phase1_seconds;
        writeln!(
            out,
            "phase1 reconstruction {} -> {}",
            h.initial.reconstruction, h.last.reconstruction
        )?;
    }
    if let (Some(first), Some(last)) = (report.phase2_epochs.first(), report.phase2_epochs.last()) {
        writeln!(out, "phase2 loss {first} -> {last}")?;
    }
    writeln!(
        out,
        "triples {} skipped {}",
        report.train_triples, report.skipped_triples
    )?;

    let model_path = args.out.join("model.json");
    let epochs = report.phase2_epochs.len();
    let digest = checkpoint::save_model(
        &model_path,
        &ModelCheckpoint {
            model,
            embeddings: table,
            config,
            epoch: epochs,
        },
    )?;
    writeln!(out, "model {} sha256 {digest}", model_path.display())?;
    write_json(&args.out.join("report.json"), &report)?;
    Ok(0)
}
