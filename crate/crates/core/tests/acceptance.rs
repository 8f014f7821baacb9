//! Acceptance suite: one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xsense::context::SifConfig;
use xsense::dataset::{validate_entry, Triple};
use xsense::decoder::{Signal, Variant};
use xsense::embedding::EmbeddingTable;
use xsense::eval::{evaluate_split, rouge_l_f1, sentence_bleu, ModelGenerator};
use xsense::extractor::{
    loss_and_gradient, objective, train_extractor, zero_fraction, ExtractorConfig, SparseAutoencoder,
};
use xsense::gradcheck::{finite_difference_check, FdOptions, Parameters};
use xsense::linalg::Matrix;
use xsense::synthetic::{
    clean_entries, clustered_table, plant_violations, sense_of_row, toy_corpus, two_sense, TwoSenseConfig,
};
use xsense::training::{
    init_model, prepare_all, pretrain_extractor, run_phase2, teacher_forcing_stats, train_xsense_with,
    Phase2Config, Phase2Trainer, PreparedTriple, TrainConfig, XSense,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.2}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

// 1. gradient correctness

fn extractor_gradcheck() -> (bool, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut ae = SparseAutoencoder::new(6, 20, 4).unwrap();
    ae.b_enc.iter_mut().for_each(|b| *b = rng.gen_range(0.0..0.5));
    let batch: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let refs: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
    let (_, grad) = loss_and_gradient(&ae, &refs, 1.0).unwrap();
    let kink: Vec<bool> = (0..20)
        .map(|j| {
            refs.iter().any(|v| {
                let p = ae.pre_activation(v).unwrap()[j];
                p.abs() < 1e-3 || (p - 1.0).abs() < 1e-3
            })
        })
        .collect();
    let report = finite_difference_check(
        &mut ae,
        &grad,
        |a: &SparseAutoencoder| objective(a, &refs, 1.0).unwrap().total,
        |g, i| match g {
            0 => kink[i / 6],
            1 => kink[i],
            _ => false,
        },
        &FdOptions::default(),
    );
    (report.passed(), report.max_relative_error())
}

fn tiny_phase2(variant: Variant) -> (XSense, Vec<PreparedTriple>) {
    let words = ["bank", "river", "money", "water", "loan", "shore", "cash", "lender"];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let table = EmbeddingTable::new(
        words.iter().map(|s| s.to_string()).collect(),
        Matrix::uniform(words.len(), 4, 1.0, &mut rng),
    )
    .unwrap();
    let triples = vec![
        Triple {
            word: "bank".into(),
            context: toks("the river bank water"),
            definition: toks("shore lender"),
        },
        Triple {
            word: "bank".into(),
            context: toks("money bank loan cash"),
            definition: toks("lender shore"),
        },
    ];
    let config = TrainConfig {
        phase1: ExtractorConfig {
            sparse_dim: 10,
            epochs: 5,
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
    }
    .with_seed(3);
    let (ae, _) = pretrain_extractor(&triples, &table, &config.phase1).unwrap();
    let mut model = init_model(&triples, &table, ae, &config).unwrap();
    for x in model.transform.t.as_mut_slice() {
        *x += rng.gen_range(-0.3..0.3);
    }
    let (data, _) = prepare_all(&model, &table, &triples).unwrap();
    (model, data)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (ext_ok, ext_err) = extractor_gradcheck();
    let mut e2e_ok = true;
    let mut e2e_err = 0.0f64;
    let mut shape_ok = true;
    for variant in Variant::GRID {
        let (mut model, data) = tiny_phase2(variant);
        shape_ok &= model.dim() == 4
            && model.decoder.vocab_size() == 6
            && model.k == 2
            && model.decoder.max_steps == 3
            && data.iter().all(|p| p.target_ids.len() == 3);
        let batch: Vec<&PreparedTriple> = data.iter().collect();
        let (_, grads) = model.phase2_gradient(&batch).unwrap();
        let report = finite_difference_check(
            &mut model,
            &grads,
            |m: &XSense| m.phase2_loss(&data).unwrap(),
            |_, _| false,
            &FdOptions::default(),
        );
        e2e_ok &= report.passed();
        e2e_err = e2e_err.max(report.max_relative_error());
    }
    let (fast, time) = within(Duration::from_secs(10), start);
    outcome(
        ext_ok && e2e_ok && shape_ok && fast,
        format!("extractor max rel err {ext_err:.2e}; end-to-end max rel err {e2e_err:.2e} over 5 variants; {time}"),
    )
}

// 2 and 3. extractor convergence and the column-sum reconstruction

fn trained_cluster_extractor() -> (EmbeddingTable, SparseAutoencoder, f64, f64) {
    let ct = clustered_table(200, 10, 8, 1.5, 0.2, 2).unwrap();
    let cfg = ExtractorConfig {
        sparse_dim: 40,
        epochs: 50,
        batch_size: 64,
        lr: 0.1,
        sparsity_weight: 1.0,
        seed: 2,
    };
    let (ae, history) = train_extractor(&ct.table, &cfg).unwrap();
    (ct.table, ae, history.initial.reconstruction, history.last.reconstruction)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let (table, ae, initial, last) = trained_cluster_extractor();
    let vectors: Vec<&[f64]> = (0..table.len()).map(|i| table.vector(i)).collect();
    let zeros = zero_fraction(&ae, &vectors).unwrap();
    let (fast, time) = within(Duration::from_secs(30), start);
    outcome(
        last < 0.5 * initial && zeros >= 0.5 && fast,
        format!(
            "L_R {initial:.4} -> {last:.4} (ratio {:.3}); zero fraction {zeros:.3}; {time}",
            last / initial
        ),
    )
}

fn criterion_3() -> Outcome {
    let (table, ae, _, _) = trained_cluster_extractor();
    let mut worst = 0.0f64;
    for i in 0..table.len() {
        let v = table.vector(i);
        let z = ae.encode(v).unwrap();
        let mut recon = ae.b_dec.clone();
        for (j, &zj) in z.values().iter().enumerate() {
            for (r, c) in recon.iter_mut().zip(ae.w_dec.column(j)) {
                *r += zj * c;
            }
        }
        let explicit: f64 = v.iter().zip(&recon).map(|(a, b)| (a - b) * (a - b)).sum();
        let library: f64 = v
            .iter()
            .zip(ae.reconstruct(v).unwrap())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        worst = worst.max((explicit - library).abs());
    }
    outcome(worst <= 1e-10, format!("max |difference| {worst:.2e} over {} words", table.len()))
}

// 4. sense separation

fn criterion_4() -> Outcome {
    let ts = two_sense(&TwoSenseConfig {
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let config = TrainConfig {
        phase1: ExtractorConfig {
            sparse_dim: 40,
            epochs: 50,
            batch_size: 16,
            ..Default::default()
        },
        phase2: Phase2Config {
            epochs: 30,
            batch_size: 8,
            k: 5,
            ..Default::default()
        },
        sif: SifConfig::default(),
    }
    .with_seed(1);
    let (model, report) = train_xsense_with(&ts.train, &ts.table, &config, None, |_, _, _| Ok(())).unwrap();
    let mut agree = 0;
    for (t, &label) in ts.held_out.iter().zip(&ts.held_out_labels) {
        let g = model.generate(&ts.table, &t.word, &t.context).unwrap();
        let dim = g.mask.indices[g.mask.argmax()];
        if sense_of_row(model.extractor.w_enc.row(dim), &ts.centroids) == label {
            agree += 1;
        }
    }
    let n = ts.held_out.len();
    outcome(
        agree * 10 >= n * 9,
        format!(
            "argmax dimension matches context cluster on {agree}/{n}; phase-2 loss {:.3} -> {:.3}",
            report.phase2_epochs[0],
            report.phase2_epochs.last().unwrap()
        ),
    )
}

// 5. decoder overfit

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let toy = toy_corpus(20, 300, 0).unwrap();
    let triples = toy.triples();
    let config = TrainConfig {
        phase1: ExtractorConfig::default(),
        phase2: Phase2Config {
            epochs: 300,
            batch_size: 4,
            variant: Variant::ATS,
            ..Default::default()
        },
        sif: SifConfig::default(),
    }
    .with_seed(0);
    let (ae, _) = pretrain_extractor(&triples, &toy.table, &config.phase1).unwrap();
    let mut model = init_model(&triples, &toy.table, ae, &config).unwrap();
    let (data, _) = prepare_all(&model, &toy.table, &triples).unwrap();
    let mut trainer = Phase2Trainer::new(&config.phase2, data.len());
    let (mut acc, mut exact, mut bleu, mut epochs) = (0.0, 0, 0.0, 0);
    while epochs < config.phase2.epochs {
        trainer.run_epoch(&mut model, &data).unwrap();
        epochs += 1;
        if epochs % 10 == 0 {
            acc = teacher_forcing_stats(&model, &data).unwrap().0;
            exact = triples
                .iter()
                .filter(|t| model.generate(&toy.table, &t.word, &t.context).unwrap().tokens == t.definition)
                .count();
            bleu = evaluate_split(&ModelGenerator::new(&model, &toy.table), &triples)
                .unwrap()
                .bleu;
            if acc >= 0.95 && exact >= 18 && bleu >= 95.0 {
                break;
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(300), start);
    outcome(
        model.dim() == 300 && acc >= 0.95 && exact >= 18 && bleu >= 95.0 && fast,
        format!("after {epochs} epochs: token accuracy {acc:.3}, exact {exact}/20, BLEU {bleu:.2}; {time}"),
    )
}

// 6. variant grid

fn criterion_6() -> Outcome {
    let toy = toy_corpus(20, 16, 4).unwrap();
    let triples = toy.triples();
    let mut details = Vec::new();
    let mut ok = true;
    for variant in Variant::GRID {
        let config = TrainConfig {
            phase1: ExtractorConfig {
                sparse_dim: 48,
                epochs: 20,
                batch_size: 16,
                ..Default::default()
            },
            phase2: Phase2Config {
                epochs: 15,
                batch_size: 4,
                variant,
                ..Default::default()
            },
            sif: SifConfig::default(),
        }
        .with_seed(4);
        match train_xsense_with(&triples, &toy.table, &config, None, |_, _, _| Ok(())) {
            Ok((_, report)) => {
                let first = report.phase2_epochs[0];
                let last = *report.phase2_epochs.last().unwrap();
                ok &= last < first;
                details.push(format!("{variant} {first:.2}->{last:.2}"));
            }
            Err(e) => {
                ok = false;
                details.push(format!("{variant} error {e}"));
            }
        }
    }
    let rejected = Variant::new(Signal::AlignedContext, Signal::TargetWord, Signal::TargetWord).is_err()
        && "ATT".parse::<Variant>().is_err();
    outcome(
        ok && rejected,
        format!("{}; ATT rejected: {rejected}", details.join(", ")),
    )
}

// 7. metric fixtures

/// Modified n-gram precision by linear scanning with explicit clipping.
fn tally(c: &[String], r: &[String], n: usize) -> (usize, usize) {
    if c.len() < n {
        return (0, 0);
    }
    let mut used = vec![false; r.len().saturating_sub(n - 1)];
    let mut m = 0;
    for i in 0..=c.len() - n {
        if let Some(j) = (0..used.len()).find(|&j| !used[j] && r[j..j + n] == c[i..i + n]) {
            used[j] = true;
            m += 1;
        }
    }
    (m, c.len() - n + 1)
}

fn lcs_recursive(a: &[String], b: &[String]) -> usize {
    match (a.split_first(), b.split_first()) {
        (Some((x, ra)), Some((y, rb))) if x == y => 1 + lcs_recursive(ra, rb),
        (Some((_, ra)), Some((_, rb))) => lcs_recursive(ra, b).max(lcs_recursive(a, rb)),
        _ => 0,
    }
}

fn criterion_7() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-6 {
            failures.push(format!("{name}: {got} vs {want}"));
        }
    };
    let r = toks("a b c d e");
    check("bleu identity", sentence_bleu(&r, &r, 4), 100.0);
    check("bleu disjoint", sentence_bleu(&toks("x y z"), &r, 4), 0.0);

    let cand = toks("the cat sat on the mat");
    let refr = toks("the cat is on the mat");
    let mut log_p = 0.0;
    for n in 1..=4 {
        let (m, t) = tally(&cand, &refr, n);
        let p = if n == 1 {
            m as f64 / t as f64
        } else {
            (m + 1) as f64 / (t + 1) as f64
        };
        log_p += p.ln() / 4.0;
    }
    let bp = f64::min(1.0, (1.0 - refr.len() as f64 / cand.len() as f64).exp());
    let cat = sentence_bleu(&cand, &refr, 4);
    check("bleu cat/mat", cat, 100.0 * bp * log_p.exp());

    check("rouge identity", rouge_l_f1(&r, &r), 1.0);
    check("rouge disjoint", rouge_l_f1(&toks("x y"), &r), 0.0);
    check("rouge cat", rouge_l_f1(&toks("the cat sat"), &toks("the cat on mat")), 4.0 / 7.0);

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    for _ in 0..500 {
        let mut seq = |min: usize| -> Vec<String> {
            let len = rng.gen_range(min..=8);
            (0..len).map(|_| format!("t{}", rng.gen_range(0..4))).collect()
        };
        let a = seq(0);
        let b = seq(1);
        let l = lcs_recursive(&a, &b);
        let want = if l == 0 {
            0.0
        } else {
            let (p, r) = (l as f64 / a.len() as f64, l as f64 / b.len() as f64);
            2.0 * p * r / (p + r)
        };
        if (rouge_l_f1(&a, &b) - want).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    let ok = failures.is_empty() && mismatches == 0;
    outcome(
        ok,
        format!(
            "cat/mat BLEU {cat:.6}; fixture failures {:?}; ROUGE-L vs recursive LCS mismatches {mismatches}/500",
            failures
        ),
    )
}

// 8. freeze and determinism

fn le_bytes<P: Parameters>(p: &P) -> Vec<u8> {
    p.groups()
        .into_iter()
        .flat_map(|(_, g)| g.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<_>>())
        .collect()
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_xsense"))
        .args(args)
        .output()
        .expect("run xsense");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

fn digest(path: &Path) -> String {
    xsense::checkpoint::file_digest(path).unwrap()
}

fn criterion_8() -> Outcome {
    let (model, data) = tiny_phase2(Variant::TAS);
    let before = le_bytes(&model.extractor);
    let mut trained = model.clone();
    let cfg = Phase2Config {
        epochs: 10,
        batch_size: 1,
        ..Default::default()
    };
    run_phase2(&mut trained, &data, &cfg, |_, _, _| Ok(())).unwrap();
    let frozen = le_bytes(&trained.extractor) == before && trained.decoder != model.decoder;

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_string_lossy().into_owned();
    let corpus = d.join("toy");
    cli(&["synth", "--kind", "toy", "--out", &s(&corpus), "--n", "12", "--dim", "24", "--seed", "3"]);
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = d.join(name);
        let (code, _) = cli(&[
            "train",
            "--embeddings",
            &s(&corpus.join("embeddings.txt")),
            "--data",
            &s(&corpus.join("dataset.jsonl")),
            "--out",
            &s(&out),
            "--seed",
            "7",
            "--sparse-dim",
            "48",
            "--extractor-epochs",
            "10",
            "--epochs",
            "20",
            "--batch",
            "4",
            "--k",
            "3",
        ]);
        runs.push((code, out));
    }
    let trained_ok = runs.iter().all(|(c, _)| *c == 0);
    let same_digest = trained_ok
        && digest(&runs[0].1.join("model.json")) == digest(&runs[1].1.join("model.json"))
        && digest(&runs[0].1.join("extractor.json")) == digest(&runs[1].1.join("extractor.json"));
    let triples = xsense::cli::read_triples(&corpus.join("dataset.jsonl")).unwrap();
    let mut same_defs = trained_ok;
    for t in triples.iter().take(4) {
        let ctx = t.context.join(" ");
        let gen = |run: &Path| cli(&["generate", "--checkpoint", &s(&run.join("model.json")), "--word", &t.word, "--context", &ctx]);
        let (ca, a) = gen(&runs[0].1);
        let (cb, b) = gen(&runs[1].1);
        same_defs &= ca == 0 && cb == 0 && a == b;
    }
    outcome(
        frozen && same_digest && same_defs,
        format!("extractor byte-identical across phase 2: {frozen}; identical digests: {same_digest}; identical definitions: {same_defs}"),
    )
}

// 9. dataset guarantees

fn criterion_9() -> Outcome {
    let clean = clean_entries(200, 9);
    let clean_violations: usize = clean.iter().map(|e| validate_entry(e).len()).sum();
    let (mutated, planted) = plant_violations(&clean, 3, 9);
    let flagged = planted
        .iter()
        .filter(|(i, v)| validate_entry(&mutated[*i]).contains(v))
        .count();
    let spurious: usize = mutated
        .iter()
        .enumerate()
        .filter(|(i, _)| !planted.iter().any(|(p, _)| p == i))
        .map(|(_, e)| validate_entry(e).len())
        .sum();
    outcome(
        clean_violations == 0 && flagged == planted.len() && spurious == 0,
        format!(
            "clean corpus violations {clean_violations}; planted flagged {flagged}/{}; violations on untouched entries {spurious}",
            planted.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", criterion_1),
        ("extractor convergence", criterion_2),
        ("column-sum reconstruction", criterion_3),
        ("sense separation", criterion_4),
        ("decoder overfit", criterion_5),
        ("variant grid", criterion_6),
        ("metric fixtures", criterion_7),
        ("freeze and determinism", criterion_8),
        ("dataset guarantees", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|a| a == &n.to_string() || name.contains(a.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {n} {verdict} {name} ({:.1}s): {}",
            start.elapsed().as_secs_f64(),
            result.detail
        );
        if !result.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
