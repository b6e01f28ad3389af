//! Acceptance gates, one line of output per criterion.
//!
//! Run with `cargo test -p entlib-core --test acceptance`.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use entlib_core::corpus::{
    build_vocab, chunk_and_batch, entity_id, parse_corpus, parse_corpus_str, serialize_corpus,
    synth_corpus, write_corpus, Corpus, SynthConfig,
};
use entlib_core::evaluation::{
    approx_randomization, build_all_entities_mapping, score, ClassMapping, Gold, Prediction,
    PredictionSet, ScoreOptions, Statistic,
};
use entlib_core::gradcheck::{gradcheck, tiny_config, GradcheckConfig};
use entlib_core::model::{init_params, ModelConfig, ModelParams, Variant};
use entlib_core::training::{
    evaluate, load_checkpoint, predict_corpus, save_checkpoint, train, Checkpoint, TrainConfig,
};
use entlib_core::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn small(variant: Variant, dim: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        token_dim: dim,
        entity_dim: dim,
        lstm_dim: dim,
        variant,
        seed,
        ..Default::default()
    }
}

fn distributions(
    params: &ModelParams,
    config: &ModelConfig,
    corpus: &Corpus,
    batch_scenes: usize,
) -> HashMap<String, Vec<Real>> {
    let vocab = build_vocab(corpus, 1);
    predict_corpus(params, config, corpus, &vocab, batch_scenes, 757)
        .unwrap()
        .into_iter()
        .map(|o| (o.id, o.probs))
        .collect()
}

fn max_diff(a: &HashMap<String, Vec<Real>>, b: &HashMap<String, Vec<Real>>) -> Real {
    assert_eq!(a.len(), b.len());
    a.iter()
        .flat_map(|(id, p)| p.iter().zip(&b[id]).map(|(x, y)| (x - y).abs()))
        .fold(0.0, Real::max)
}

fn gradient_audit() -> Outcome {
    let start = Instant::now();
    let mut worst: Real = 0.0;
    for variant in [Variant::EntLib, Variant::NoEntLib] {
        let c = tiny_config(variant, 0);
        check(
            (c.token_dim, c.entity_dim, c.lstm_dim) == (4, 3, 5),
            "tiny model dimensions",
        )?;
        let report = gradcheck(variant, &GradcheckConfig::default()).map_err(|e| e.to_string())?;
        check(
            report.groups.len() == 10 + usize::from(variant == Variant::EntLib),
            "group coverage",
        )?;
        check(
            report.passed(),
            format!("{variant:?} failed groups {:?}", report.failures()),
        )?;
        worst = report
            .groups
            .iter()
            .map(|g| g.max_rel_error)
            .fold(worst, Real::max);
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(30),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "max rel error {worst:.2e} (<= 1e-4), {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn retrieval_invariance() -> Outcome {
    let corpus = synth_corpus(
        &SynthConfig {
            entities: 5,
            scenes: 6,
            ..Default::default()
        },
        11,
    )
    .unwrap();
    let vocab = build_vocab(&corpus, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    let config = small(Variant::EntLib, 6, 3);
    let p = init_params(&config, &vocab, None, 3).unwrap();
    let base = distributions(&p, &config, &corpus, 4);
    let mut q = p.clone();
    let e = q.entity_lib.as_mut().unwrap();
    for r in 0..e.rows() {
        if rng.gen_bool(0.7) {
            let c: Real = (rng.gen_range(-4.0..4.0) as Real).exp();
            e.row_mut(r).iter_mut().for_each(|v| *v *= c);
        }
    }
    let ent = max_diff(&base, &distributions(&q, &config, &corpus, 4));
    check(ent <= 1e-12, format!("EntLib changed by {ent:e}"))?;

    let config = small(Variant::NoEntLib, 6, 3);
    let p = init_params(&config, &vocab, None, 3).unwrap();
    let base = distributions(&p, &config, &corpus, 4);
    let mut q = p.clone();
    for r in 0..q.w_out.rows() {
        if rng.gen_bool(0.7) {
            let c: Real = (rng.gen_range(-4.0..4.0) as Real).exp();
            q.w_out.row_mut(r).iter_mut().for_each(|v| *v *= c);
        }
    }
    let no = max_diff(&base, &distributions(&q, &config, &corpus, 4));
    check(no > 1e-6, format!("NoEntLib changed only by {no:e}"))?;
    Ok(format!(
        "EntLib max change {ent:.1e} (<= 1e-12), NoEntLib {no:.2e} (> 1e-6)"
    ))
}

fn scorer_oracle() -> Outcome {
    let golds: Vec<Gold> = ["A", "A", "B", "B", "C"]
        .iter()
        .enumerate()
        .map(|(i, e)| Gold::new(format!("m{i}"), *e))
        .collect();
    let preds = |labels: [&str; 5]| {
        PredictionSet::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, e)| Prediction::new(format!("m{i}"), *e))
                .collect(),
        )
    };
    let mapping = ClassMapping::identity(&["A", "B", "C"]);
    let hand = score(&preds(["A", "B", "B", "B", "C"]), &golds, &mapping).unwrap();
    // Per class F1: A = 2/3, B = 4/5, C = 1.
    let oracle = (2.0 / 3.0 + 4.0 / 5.0 + 1.0) / 3.0;
    check(
        (hand.macro_f1 - 0.8222).abs() <= 1e-4,
        format!("macro-F1 {}", hand.macro_f1),
    )?;
    check(
        (hand.macro_f1 - oracle).abs() <= 1e-12,
        "macro-F1 vs oracle",
    )?;
    check(hand.accuracy == 0.8, format!("accuracy {}", hand.accuracy))?;
    let perfect = score(&preds(["A", "A", "B", "B", "C"]), &golds, &mapping).unwrap();
    check(
        perfect.macro_f1 == 1.0 && perfect.accuracy == 1.0,
        "perfect predictions",
    )?;

    let mut freq = Vec::new();
    for (e, n) in [("w", 5), ("x", 3), ("y", 2), ("z", 1)] {
        for i in 0..n {
            freq.push(Gold::new(format!("{e}{i}"), e));
        }
    }
    let all = build_all_entities_mapping(&freq, 3);
    check(all.len() == 3, format!("{} classes", all.len()))?;
    Ok(format!(
        "hand macro-F1 {:.4}, accuracy {}, perfect 1/1, {{5,3,2,1}} -> {} classes",
        hand.macro_f1,
        hand.accuracy,
        all.len()
    ))
}

fn learnability() -> Outcome {
    let cfg = SynthConfig {
        entities: 6,
        scenes: 200,
        ..Default::default()
    };
    let train_c = synth_corpus(&cfg, 1).unwrap();
    let held = synth_corpus(
        &SynthConfig {
            scenes: 40,
            scene_prefix: "held".into(),
            ..cfg
        },
        2,
    )
    .unwrap();
    let vocab = build_vocab(&train_c, 1);
    let tc = TrainConfig {
        learning_rate: 0.01,
        batch_scenes: 8,
        max_epochs: 30,
        patience: 30,
        ..Default::default()
    };
    let mut parts = Vec::new();
    for (variant, bar) in [(Variant::EntLib, 0.99), (Variant::NoEntLib, 0.95)] {
        let mc = small(variant, 16, 0);
        let start = Instant::now();
        let out = train(&train_c, &vocab, &mc, &tc, None, None).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        let acc = evaluate(&out.checkpoint.params, &mc, &held, &vocab, &tc)
            .unwrap()
            .accuracy;
        check(out.history.len() <= 30, "epoch budget")?;
        check(
            elapsed < Duration::from_secs(300),
            format!("{variant:?} took {elapsed:?}"),
        )?;
        check(
            acc >= bar,
            format!("{variant:?} held-out accuracy {acc:.4} < {bar}"),
        )?;
        parts.push(format!(
            "{variant:?} {acc:.4} (>= {bar}, {:.1}s)",
            elapsed.as_secs_f64()
        ));
    }
    Ok(parts.join(", "))
}

fn rare_entities() -> Outcome {
    let mut diffs = Vec::new();
    for seed in 0..5u64 {
        let cfg = SynthConfig {
            entities: 20,
            head_entities: 4,
            head_mass: 0.8,
            scenes: 50,
            ..Default::default()
        };
        let train_c = synth_corpus(&cfg, 100 + seed).unwrap();
        let held = synth_corpus(
            &SynthConfig {
                scenes: 40,
                scene_prefix: "held".into(),
                ..cfg
            },
            200 + seed,
        )
        .unwrap();
        let mentions = train_c.mentions();
        let head: Vec<String> = (0..4).map(entity_id).collect();
        let share = mentions.iter().filter(|m| head.contains(&m.entity)).count() as f64
            / mentions.len() as f64;
        check(
            (0.7..=0.9).contains(&share),
            format!("head share {share:.3}"),
        )?;
        let vocab = build_vocab(&train_c, 1);
        let tc = TrainConfig {
            learning_rate: 0.005,
            batch_scenes: 8,
            max_epochs: 60,
            patience: 60,
            seed,
            ..Default::default()
        };
        let mut f1 = [0.0; 2];
        for (i, variant) in [Variant::EntLib, Variant::NoEntLib].into_iter().enumerate() {
            let mc = small(variant, 32, seed);
            let out = train(&train_c, &vocab, &mc, &tc, None, None).map_err(|e| e.to_string())?;
            f1[i] = evaluate(&out.checkpoint.params, &mc, &held, &vocab, &tc)
                .unwrap()
                .macro_f1;
        }
        diffs.push(f1[0] - f1[1]);
    }
    let mean = diffs.iter().sum::<Real>() / diffs.len() as Real;
    let shown: Vec<String> = diffs.iter().map(|d| format!("{:+.3}", d)).collect();
    check(
        mean >= 0.05,
        format!("mean macro-F1 gain {mean:+.4} < 0.05 (per seed {shown:?})"),
    )?;
    Ok(format!(
        "mean all-entities macro-F1 gain {mean:+.4} (>= 0.05), per seed {}",
        shown.join(" ")
    ))
}

fn significance() -> Outcome {
    let golds: Vec<Gold> = (0..200)
        .map(|i| Gold::new(format!("m{i}"), ["P", "Q"][i % 2]))
        .collect();
    let right = PredictionSet::new(
        golds
            .iter()
            .map(|g| Prediction::new(&g.id, &g.entity))
            .collect(),
    );
    let wrong = PredictionSet::new(
        golds
            .iter()
            .map(|g| Prediction::new(&g.id, if g.entity == "P" { "Q" } else { "P" }))
            .collect(),
    );
    let mapping = ClassMapping::identity(&["P", "Q"]);
    let opts = ScoreOptions::default();
    let same = approx_randomization(
        &right,
        &right,
        &golds,
        &mapping,
        &opts,
        1000,
        1,
        Statistic::MacroF1,
    )
    .unwrap();
    check(
        same.p_value == 1.0,
        format!("identical systems p = {}", same.p_value),
    )?;
    let sep = approx_randomization(
        &right,
        &wrong,
        &golds,
        &mapping,
        &opts,
        10_000,
        1,
        Statistic::MacroF1,
    )
    .unwrap();
    check(
        sep.p_value <= 0.001,
        format!("separation p = {}", sep.p_value),
    )?;

    // Two mentions: enumerate all four swap patterns with the scorer itself.
    let golds2 = vec![Gold::new("x", "P"), Gold::new("y", "Q")];
    let a = PredictionSet::new(vec![Prediction::new("x", "P"), Prediction::new("y", "Q")]);
    let b = PredictionSet::new(vec![Prediction::new("x", "Q"), Prediction::new("y", "P")]);
    let f1 = |s: &PredictionSet| score(s, &golds2, &mapping).unwrap().macro_f1;
    let observed = (f1(&a) - f1(&b)).abs();
    let mut hits = 0;
    for mask in 0..4usize {
        let pick = |first: bool| {
            PredictionSet::new(
                (0..2)
                    .map(|i| {
                        let swapped = mask >> i & 1 == 1;
                        if swapped == first {
                            b.entries[i].clone()
                        } else {
                            a.entries[i].clone()
                        }
                    })
                    .collect(),
            )
        };
        if (f1(&pick(false)) - f1(&pick(true))).abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    let exact = hits as f64 / 4.0;
    let r = 10_000;
    let two =
        approx_randomization(&a, &b, &golds2, &mapping, &opts, r, 5, Statistic::MacroF1).unwrap();
    let estimate = two.at_least_as_extreme as f64 / r as f64;
    let se = (exact * (1.0 - exact) / r as f64).sqrt();
    check(
        exact > 0.0 && exact < 1.0,
        format!("enumeration is degenerate ({exact})"),
    )?;
    check(
        (estimate - exact).abs() <= 3.0 * se,
        format!("estimate {estimate} vs exact {exact} (se {se:.4})"),
    )?;
    Ok(format!(
        "identical p = 1, separation p = {:.5}, two-mention {estimate:.4} vs exact {exact} (3 se = {:.4})",
        sep.p_value,
        3.0 * se
    ))
}

fn determinism() -> Outcome {
    let corpus = synth_corpus(
        &SynthConfig {
            entities: 4,
            scenes: 12,
            ..Default::default()
        },
        5,
    )
    .unwrap();
    let held = synth_corpus(
        &SynthConfig {
            entities: 4,
            scenes: 4,
            scene_prefix: "h".into(),
            ..Default::default()
        },
        6,
    )
    .unwrap();
    let vocab = build_vocab(&corpus, 1);
    let mc = small(Variant::EntLib, 5, 7);
    let tc = TrainConfig {
        learning_rate: 0.01,
        batch_scenes: 4,
        max_epochs: 3,
        patience: 2,
        seed: 7,
        ..Default::default()
    };
    let run = || {
        let out = train(&corpus, &vocab, &mc, &tc, Some(&held), None).unwrap();
        let report = evaluate(&out.checkpoint.params, &mc, &held, &vocab, &tc).unwrap();
        (
            out.checkpoint.to_bytes().unwrap(),
            serde_json::to_vec(&report).unwrap(),
            out.checkpoint,
        )
    };
    let (c1, r1, ckpt) = run();
    let (c2, r2, _) = run();
    check(c1 == c2, "checkpoints differ between runs")?;
    check(r1 == r2, "reports differ between runs")?;

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &p).unwrap();
    let back: Checkpoint = load_checkpoint(&p).unwrap();
    check(back == ckpt, "checkpoint contents changed on reload")?;
    let q = dir.path().join("again.ckpt");
    save_checkpoint(&back, &q).unwrap();
    check(
        std::fs::read(&p).unwrap() == std::fs::read(&q).unwrap(),
        "checkpoint bytes changed",
    )?;

    let fixture = "#scene a/1\n#speakers Ross,Rachel\nI\tE:ross\tPRP\nlove\t-\nthe\tB:monica\nchef\tE:monica\tNN\n\n\
                   #speakers Joey\nhow\t-\nyou\tE:ross\n\n#scene b\n#speakers Phoebe\nhey\t-\n\n";
    for (name, text) in [
        ("fixture", fixture.to_string()),
        ("synthetic", serialize_corpus(&corpus)),
    ] {
        let t = dir.path().join(format!("{name}.tsv"));
        std::fs::write(&t, &text).unwrap();
        let parsed = parse_corpus(&t).unwrap();
        let u = dir.path().join(format!("{name}.out.tsv"));
        write_corpus(&parsed, &u).unwrap();
        check(
            std::fs::read(&u).unwrap() == text.as_bytes(),
            format!("{name} corpus TSV changed"),
        )?;
        check(
            parse_corpus_str(&text).unwrap().scenes == parsed.scenes,
            "string and file parsers disagree",
        )?;
    }
    Ok(format!("checkpoint ({} bytes) and report identical across runs; TSV and checkpoint files round-trip", c1.len()))
}

fn padding_equivalence() -> Outcome {
    let mut corpus = synth_corpus(
        &SynthConfig {
            entities: 5,
            scenes: 6,
            ..Default::default()
        },
        21,
    )
    .unwrap();
    for (i, scene) in corpus.scenes.iter_mut().enumerate() {
        scene.utterances.truncate(1 + i);
    }
    let vocab = build_vocab(&corpus, 1);
    let batches = chunk_and_batch(&corpus, &vocab, 6, 757, None).unwrap();
    let padded = batches
        .iter()
        .flat_map(|b| &b.chunks)
        .filter(|c| c.real_len() < c.padded_len())
        .count();
    check(padded >= 5, format!("only {padded} padded chunks"))?;
    let mut worst: Real = 0.0;
    for variant in [Variant::EntLib, Variant::NoEntLib] {
        let mc = small(variant, 6, 1);
        let params = init_params(&mc, &vocab, None, 1).unwrap();
        let together: BTreeMap<String, Vec<Real>> =
            predict_corpus(&params, &mc, &corpus, &vocab, 6, 757)
                .unwrap()
                .into_iter()
                .map(|o| (o.id, o.probs))
                .collect();
        let mut alone = BTreeMap::new();
        for i in 0..corpus.scenes.len() {
            let one = corpus.select(&[i]);
            for o in predict_corpus(&params, &mc, &one, &vocab, 1, 757).unwrap() {
                alone.insert(o.id, o.probs);
            }
        }
        check(
            together.len() == alone.len() && !alone.is_empty(),
            "mention sets differ",
        )?;
        for (id, p) in &together {
            for (x, y) in p.iter().zip(&alone[id]) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    check(worst <= 1e-12, format!("max difference {worst:e}"))?;
    Ok(format!(
        "{padded} padded chunks, max difference {worst:.1e} (<= 1e-12)"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient audit", gradient_audit),
        ("retrieval-head invariance", retrieval_invariance),
        ("scorer oracle", scorer_oracle),
        ("learnability", learnability),
        ("rare-entity direction", rare_entities),
        ("significance machinery", significance),
        ("determinism and round-trips", determinism),
        ("padding equivalence", padding_equivalence),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("{} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".to_string());
            Err(msg)
        });
        match result {
            Ok(detail) => println!("criterion {label}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {label}: FAIL ({detail})");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
