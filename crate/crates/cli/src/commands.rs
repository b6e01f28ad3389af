use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use entlib_core::corpus::{
    build_vocab, corpus_stats, load_pretrained_embeddings, parse_corpus, synth_corpus,
    write_corpus, Corpus, Vocabulary, UNTAGGED,
};
use entlib_core::evaluation::{
    approx_randomization, breakdown_by_category, build_all_entities_mapping,
    build_main_entities_mapping, golds_of, read_predictions, score_with, write_predictions,
    ClassMapping, EvalReport, Gold, ScoreOptions,
};
use entlib_core::gradcheck::{gradcheck as run_gradcheck, GradcheckConfig};
use entlib_core::training::{
    self, ensemble_predict, load_checkpoint, save_checkpoint, write_history, Checkpoint,
    EnsembleModel,
};
use entlib_core::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::Failure;

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn output_dir(config: &RunConfig) -> Result<&Path> {
    let dir = config.paths.output_dir.as_path();
    let dir = if dir.as_os_str().is_empty() {
        Path::new(".")
    } else {
        dir
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    Ok(dir)
}

fn out_path(config: &RunConfig, explicit: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
    let path = match explicit {
        Some(p) => p.clone(),
        None => output_dir(config)?.join(default),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    Ok(path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io(path, e))
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("paths.{key} is required for this command")))
}

fn corpus_at(p: &Option<PathBuf>, key: &str) -> Result<Corpus> {
    parse_corpus(required(p, key)?)
}

/// `<output_dir>/<command>.config.json`, the fully resolved configuration.
pub fn write_snapshot(command: &str, config: &RunConfig) -> Result<()> {
    let path = output_dir(config)?.join(format!("{command}.config.json"));
    write_json(&path, config)
}

fn pretrained(
    config: &RunConfig,
    vocab: &Vocabulary,
) -> Result<Option<entlib_core::autodiff::Tensor>> {
    let Some(path) = &config.paths.embeddings else {
        return Ok(None);
    };
    let p = load_pretrained_embeddings(path, vocab, config.model.token_dim, config.seed)?;
    log::info!(
        "pretrained vectors cover {:.1}% of the vocabulary ({} missing)",
        100.0 * p.coverage.ratio(),
        p.coverage.misses
    );
    Ok(Some(p.matrix))
}

fn print_report(label: &str, r: &EvalReport) {
    say!(
        "{label}: accuracy {:.4} macro-F1 {:.4} over {} mentions",
        r.accuracy,
        r.macro_f1,
        r.mentions
    );
}

pub fn train(config: &RunConfig) -> Result<(), Failure> {
    let corpus = corpus_at(&config.paths.corpus, "corpus")?;
    let validation = config
        .paths
        .validation
        .as_ref()
        .map(parse_corpus)
        .transpose()?;
    let test = config.paths.test.as_ref().map(parse_corpus).transpose()?;
    let vocab = build_vocab(&corpus, config.train.min_token_count);
    let emb = pretrained(config, &vocab)?;
    let out = training::train(
        &corpus,
        &vocab,
        &config.model,
        &config.train,
        validation.as_ref(),
        emb.as_ref(),
    )?;
    let dir = output_dir(config)?;
    let ckpt = dir.join("model.ckpt");
    save_checkpoint(&out.checkpoint, &ckpt)?;
    write_history(&out.history, dir.join("history.jsonl"))?;
    say!(
        "checkpoint {} (epoch {})",
        ckpt.display(),
        out.checkpoint.meta.epoch
    );
    let params = &out.checkpoint.params;
    if let Some(v) = &validation {
        print_report(
            "validation",
            &training::evaluate(params, &config.model, v, &vocab, &config.train)?,
        );
    }
    if let Some(t) = &test {
        print_report(
            "held-out",
            &training::evaluate(params, &config.model, t, &vocab, &config.train)?,
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct FoldManifest<'a> {
    seed: u64,
    sizes: Vec<usize>,
    folds: &'a [Vec<String>],
    checkpoints: Vec<String>,
    reports: Vec<&'a EvalReport>,
}

pub fn crossval(config: &RunConfig) -> Result<(), Failure> {
    let corpus = corpus_at(&config.paths.corpus, "corpus")?;
    let vocab = build_vocab(&corpus, config.train.min_token_count);
    let emb = pretrained(config, &vocab)?;
    let out = training::crossval(&corpus, &vocab, &config.model, &config.train, emb.as_ref())?;
    let dir = output_dir(config)?;
    let mut checkpoints = Vec::new();
    for f in &out.folds {
        let name = format!("fold{}.ckpt", f.fold);
        save_checkpoint(&f.checkpoint, dir.join(&name))?;
        write_history(
            &f.history,
            dir.join(format!("fold{}.history.jsonl", f.fold)),
        )?;
        print_report(&format!("fold {}", f.fold), &f.report);
        checkpoints.push(name);
    }
    let manifest = FoldManifest {
        seed: out.assignment.seed,
        sizes: out.assignment.sizes(),
        folds: &out.assignment.folds,
        checkpoints,
        reports: out.folds.iter().map(|f| &f.report).collect(),
    };
    write_json(&dir.join("folds.json"), &manifest)?;
    say!("fold sizes {:?}", manifest.sizes);
    Ok(())
}

pub fn predict(config: &RunConfig) -> Result<(), Failure> {
    if config.paths.checkpoints.is_empty() {
        return Err(
            Error::Config("paths.checkpoints must list at least one checkpoint".into()).into(),
        );
    }
    let corpus = corpus_at(&config.paths.corpus, "corpus")?;
    let members = config
        .paths
        .checkpoints
        .iter()
        .map(load_checkpoint)
        .collect::<Result<Vec<Checkpoint>>>()?;
    let ensemble = EnsembleModel::new(members)?;
    let vocab = ensemble.vocab().clone();
    let preds = ensemble_predict(&ensemble, &corpus, &vocab)?;
    let path = out_path(config, &config.paths.predictions, "predictions.tsv")?;
    write_predictions(&preds, &path, config.eval.with_probs)?;
    say!(
        "{} predictions from {} checkpoint(s) written to {}",
        preds.len(),
        ensemble.members().len(),
        path.display()
    );
    Ok(())
}

fn mapping(config: &RunConfig, golds: &[Gold]) -> Result<ClassMapping> {
    match config.eval.condition.as_str() {
        "all" => Ok(build_all_entities_mapping(
            golds,
            config.train.min_class_count,
        )),
        "main" => build_main_entities_mapping(&config.eval.main_entities),
        other => Err(Error::Config(format!(
            "unknown condition '{other}' (expected all or main)"
        ))),
    }
}

fn options(config: &RunConfig) -> ScoreOptions {
    ScoreOptions {
        exclude_catch_all: config.eval.exclude_catch_all,
        known_entities: None,
    }
}

#[derive(Serialize)]
struct ScoreOutput {
    #[serde(flatten)]
    report: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    by_category: Option<BTreeMap<String, EvalReport>>,
}

pub fn score(config: &RunConfig) -> Result<(), Failure> {
    let corpus = corpus_at(&config.paths.corpus, "corpus")?;
    let golds = golds_of(&corpus);
    let mapping = mapping(config, &golds)?;
    let preds = read_predictions(required(&config.paths.predictions, "predictions")?)?;
    let opts = options(config);
    let report = score_with(&preds, &golds, &mapping, &opts)?;
    let by_category = golds
        .iter()
        .any(|g| g.category != UNTAGGED)
        .then(|| breakdown_by_category(&preds, &golds, &mapping, &opts))
        .transpose()?;
    let out = ScoreOutput {
        report,
        by_category,
    };
    let path = out_path(config, &config.paths.output, "report.json")?;
    write_json(&path, &out)?;
    say!(
        "{}",
        serde_json::to_string_pretty(&out).map_err(Error::from)?
    );
    Ok(())
}

pub fn sigtest(config: &RunConfig) -> Result<(), Failure> {
    let corpus = corpus_at(&config.paths.corpus, "corpus")?;
    let golds = golds_of(&corpus);
    let mapping = mapping(config, &golds)?;
    let a = read_predictions(required(&config.paths.predictions, "predictions")?)?;
    let b = read_predictions(required(&config.paths.predictions_b, "predictions_b")?)?;
    let result = approx_randomization(
        &a,
        &b,
        &golds,
        &mapping,
        &options(config),
        config.eval.permutations,
        config.seed,
        config.eval.statistic,
    )?;
    let path = out_path(config, &config.paths.output, "sigtest.json")?;
    write_json(&path, &result)?;
    say!(
        "{}",
        serde_json::to_string_pretty(&result).map_err(Error::from)?
    );
    Ok(())
}

pub fn gradcheck(config: &RunConfig) -> Result<(), Failure> {
    let g = &config.gradcheck;
    let cfg = GradcheckConfig {
        step: g.step,
        tolerance: g.tolerance,
        floor: g.floor,
        seed: config.seed,
        corrupt: g.corrupt.clone(),
    };
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for &variant in &g.variants {
        let report = run_gradcheck(variant, &cfg)?;
        for r in &report.groups {
            let verdict = if r.max_rel_error <= report.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            say!(
                "{variant:?} {:<18} {:>6} values  max rel error {:.3e}  {verdict}",
                r.name,
                r.values,
                r.max_rel_error
            );
        }
        failed.extend(
            report
                .failures()
                .into_iter()
                .map(|n| format!("{variant:?}:{n}")),
        );
        reports.push(report);
    }
    let path = out_path(config, &config.paths.output, "gradcheck.json")?;
    write_json(&path, &reports)?;
    if failed.is_empty() {
        say!("gradcheck passed (tolerance {:.0e})", g.tolerance);
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradcheck failed for parameter group(s) {}",
            failed.join(", ")
        )))
    }
}

pub fn synth(config: &RunConfig) -> Result<(), Failure> {
    let corpus = synth_corpus(&config.synth, config.seed)?;
    let path = out_path(config, &config.paths.output, "synth.tsv")?;
    write_corpus(&corpus, &path)?;
    say!(
        "{} scenes, {} mentions written to {}",
        corpus.scenes.len(),
        corpus.mentions().len(),
        path.display()
    );
    Ok(())
}

pub fn stats(config: &RunConfig) -> Result<(), Failure> {
    let corpus = corpus_at(&config.paths.corpus, "corpus")?;
    let stats = corpus_stats(&corpus);
    let path = out_path(config, &config.paths.output, "stats.json")?;
    write_json(&path, &stats)?;
    say!(
        "{} scenes, {} tokens, {} mentions",
        stats.scenes,
        stats.tokens,
        stats.mentions
    );
    say!("{}", stats.category_table().trim_end());
    Ok(())
}
