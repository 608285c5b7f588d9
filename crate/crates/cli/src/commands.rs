use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use npukg::checkpoint::Checkpoint;
use npukg::encoder::RankScore;
use npukg::eval::{self, DetectionOptions, DetectionReport, EvalOptions, TieRule};
use npukg::kg::{self, FlipLog, KnowledgeGraph, Triple, Vocab};
use npukg::loss::read_dump;
use npukg::train::{
    self, content_hash, history_csv, labeled_posteriors, TrainConfig, TrainOutcome,
};

use crate::{
    artifact_header, banner, optional_output_dir, output_dir, output_file, EvalArgs, InspectArgs,
    PerturbArgs, PredictArgs, RankBy, SplitArgs, Ties, TrainArgs,
};

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const HISTORY_FILE: &str = "metrics.csv";
pub const DUMP_FILE: &str = "posteriors.tsv";
pub const CONFIG_FILE: &str = "config.txt";
pub const EVAL_FILE: &str = "eval.csv";
pub const DETECTION_FILE: &str = "detection.csv";

/// Hash of the settings of a command that has no training config.
fn settings_hash(command: &str, settings: &[(&str, String)]) -> String {
    let mut text = format!("command = {command}\n");
    for (k, v) in settings {
        let _ = writeln!(text, "{k} = {v}");
    }
    content_hash(&text)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Triples of `paths` that the vocabulary can express.
pub fn load_known(paths: &[PathBuf], vocab: &Arc<Vocab>) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    for p in paths {
        let loaded =
            kg::load_with_vocab(p, vocab).with_context(|| format!("reading {}", p.display()))?;
        if loaded.unknown > 0 {
            info!(
                "{}: ignored {} triples with unknown names",
                p.display(),
                loaded.unknown
            );
        }
        out.extend_from_slice(loaded.graph.triples());
    }
    Ok(out)
}

/// Training and validation graphs over one vocabulary.
pub fn load_train_valid(train: &Path, valid: &Path) -> Result<(KnowledgeGraph, KnowledgeGraph)> {
    let mut loaded = kg::load_many(&[train, valid]).context("reading training data")?;
    let v = loaded.pop().expect("two inputs");
    let t = loaded.pop().expect("two inputs");
    for (path, l) in [(train, &t), (valid, &v)] {
        if l.duplicates > 0 {
            warn!(
                "{}: dropped {} duplicate triples",
                path.display(),
                l.duplicates
            );
        }
    }
    Ok((t.graph, v.graph))
}

/// Trains on `graph`, with `extra` joining train and valid in the filter.
pub fn fit(
    graph: &KnowledgeGraph,
    valid: &KnowledgeGraph,
    extra: &[Triple],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let filter: HashSet<Triple> = graph
        .triples()
        .iter()
        .chain(valid.triples())
        .chain(extra)
        .copied()
        .collect();
    Ok(train::train(graph, valid.triples(), &filter, cfg)?)
}

/// Writes the checkpoint, history, posterior dump and resolved config.
pub fn write_run(dir: &Path, cfg: &TrainConfig, outcome: &TrainOutcome) -> Result<()> {
    create_dir(dir)?;
    let header = artifact_header(cfg.seed, &cfg.hash());
    outcome.best.save(&dir.join(CHECKPOINT_FILE), &header)?;
    write_text(
        &dir.join(HISTORY_FILE),
        &history_csv(&outcome.history, &header),
    )?;
    outcome
        .posteriors
        .write_dump(&dir.join(DUMP_FILE), &header)?;
    let mut config = header
        .iter()
        .map(|h| format!("# {h}\n"))
        .collect::<String>();
    config.push_str(&cfg.to_text());
    write_text(&dir.join(CONFIG_FILE), &config)
}

pub fn perturb(a: &PerturbArgs) -> Result<()> {
    let hash = settings_hash(
        "perturb",
        &[
            ("ptb_rate", a.ptb_rate.to_string()),
            ("removal_fraction", a.removal_fraction.to_string()),
            ("seed", a.seed.to_string()),
        ],
    );
    banner("perturb", a.seed, &hash);
    let loaded =
        kg::load_triples(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    if loaded.duplicates > 0 {
        warn!(
            "{}: dropped {} duplicate triples",
            a.input.display(),
            loaded.duplicates
        );
    }
    let (noisy, flips) = kg::perturb(&loaded.graph, a.ptb_rate, a.removal_fraction, a.seed)?;
    let out = output_file(&a.out);
    let log_path = output_file(&a.fliplog.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".fliplog.tsv");
        PathBuf::from(p)
    }));
    for p in [&out, &log_path] {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
    }
    let header = artifact_header(a.seed, &hash);
    let vocab = noisy.vocab();
    kg::write_triples(&out, vocab, noisy.triples(), &header)?;
    flips.write(&log_path, vocab, &header)?;
    info!("wrote {} and {}", out.display(), log_path.display());
    println!(
        "removed={} added={}",
        flips.removed().count(),
        flips.added().count()
    );
    Ok(())
}

pub fn split(a: &SplitArgs) -> Result<()> {
    let hash = settings_hash(
        "split",
        &[
            ("train_fraction", a.train_fraction.to_string()),
            ("seed", a.seed.to_string()),
        ],
    );
    banner("split", a.seed, &hash);
    let loaded =
        kg::load_triples(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (train, valid) = kg::split(&loaded.graph, a.train_fraction, a.seed)?;
    let dir = output_dir(&a.out);
    create_dir(&dir)?;
    let header = artifact_header(a.seed, &hash);
    let vocab = loaded.graph.vocab();
    kg::write_triples(&dir.join("train.tsv"), vocab, train.triples(), &header)?;
    kg::write_triples(&dir.join("valid.tsv"), vocab, valid.triples(), &header)?;
    println!("train={} valid={}", train.len(), valid.len());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&a.config)
        .with_context(|| format!("reading config {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    banner("train", cfg.seed, &cfg.hash());
    let (graph, valid) = load_train_valid(&a.train, &a.valid)?;
    info!(
        "{} training triples, {} validation triples, {} entities, {} relations",
        graph.len(),
        valid.len(),
        graph.num_entities(),
        graph.num_relations()
    );
    let extra = load_known(&a.filter, graph.vocab())?;
    let outcome = fit(&graph, &valid, &extra, &cfg)?;
    let dir = output_dir(&a.out);
    write_run(&dir, &cfg, &outcome)?;
    println!(
        "best_epoch={} best_valid_mrr={:.4} out={}",
        outcome.best_epoch,
        outcome.best_valid_mrr,
        dir.display()
    );
    Ok(())
}

fn rank_score(by: RankBy, beta: f64) -> RankScore {
    match by {
        RankBy::Positive => RankScore::Positive,
        RankBy::Posterior => RankScore::Posterior { beta },
    }
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("reading {}", a.checkpoint.display()))?;
    banner("eval", ckpt.meta.seed, &ckpt.meta.config_hash);
    let header = artifact_header(ckpt.meta.seed, &ckpt.meta.config_hash);
    let scorer = ckpt.scorer()?;
    let test = kg::load_with_vocab(&a.test, &ckpt.vocab)
        .with_context(|| format!("reading {}", a.test.display()))?;
    if test.unknown > 0 {
        warn!(
            "{}: skipped {} test triples with names the checkpoint does not know",
            a.test.display(),
            test.unknown
        );
    }
    ensure!(
        !test.graph.is_empty(),
        "no test triple of {} is known to the checkpoint",
        a.test.display()
    );
    let mut filter: HashSet<Triple> = test.graph.triples().iter().copied().collect();
    filter.extend(load_known(&a.filter, &ckpt.vocab)?);
    let opts = EvalOptions {
        ks: eval::parse_ks(&a.ks)?,
        by: rank_score(a.rank_by, ckpt.meta.beta),
        tie: match a.ties {
            Ties::Optimistic => TieRule::Optimistic,
            Ties::Pessimistic => TieRule::Pessimistic,
        },
    };
    let metrics = eval::evaluate(&scorer, test.graph.triples(), &filter, &opts)?;
    print!("{}", metrics.to_table());

    let detection = match (&a.fliplog, &a.labeled) {
        (Some(log_path), Some(labeled_path)) => {
            let labeled = load_known(std::slice::from_ref(labeled_path), &ckpt.vocab)?;
            let (flips, skipped) = FlipLog::read_known(log_path, &ckpt.vocab)
                .with_context(|| format!("reading {}", log_path.display()))?;
            if skipped > 0 {
                info!(
                    "{}: ignored {skipped} edits with unknown names",
                    log_path.display()
                );
            }
            let tilde = labeled_posteriors(&scorer, &labeled, ckpt.meta.beta);
            let report = eval::detection_report(
                &labeled,
                &tilde,
                &flips,
                Some(&scorer),
                DetectionOptions::default(),
            )?;
            print!("{}", report.to_table());
            Some(report)
        }
        _ => None,
    };

    if let Some(dir) = optional_output_dir(a.out.as_deref()) {
        create_dir(&dir)?;
        metrics.write_csv(&dir.join(EVAL_FILE), &header)?;
        if let Some(report) = detection {
            write_detection(&dir.join(DETECTION_FILE), &report, &header)?;
        }
        info!("wrote results to {}", dir.display());
    }
    Ok(())
}

fn write_detection(path: &Path, report: &DetectionReport, header: &[String]) -> Result<()> {
    let mut s: String = header.iter().map(|h| format!("# {h}\n")).collect();
    let _ = writeln!(s, "{}", DetectionReport::csv_header());
    let _ = writeln!(s, "{}", report.csv_row());
    write_text(path, &s)
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("reading {}", a.checkpoint.display()))?;
    banner("predict", ckpt.meta.seed, &ckpt.meta.config_hash);
    let vocab = &ckpt.vocab;
    let entity = |name: &str| {
        vocab
            .entity_id(name)
            .with_context(|| format!("entity {name:?} is not in the checkpoint vocabulary"))
    };
    let relation = vocab.relation_id(&a.relation).with_context(|| {
        format!(
            "relation {:?} is not in the checkpoint vocabulary",
            a.relation
        )
    })?;
    let (query, replace_tail) = match (&a.head, &a.tail) {
        (Some(h), None) => (Triple::new(entity(h)?, relation, 0), true),
        (None, Some(t)) => (Triple::new(0, relation, entity(t)?), false),
        _ => bail!("give exactly one of --head and --tail"),
    };
    let known: HashSet<Triple> = load_known(&a.filter, vocab)?.into_iter().collect();
    let mut scores = Vec::new();
    ckpt.scorer()?.score_candidates(
        &query,
        replace_tail,
        rank_score(a.rank_by, ckpt.meta.beta),
        &mut scores,
    );
    let complete = |e: usize| {
        if replace_tail {
            Triple::new(query.head, relation, e)
        } else {
            Triple::new(e, relation, query.tail)
        }
    };
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|&e| !known.contains(&complete(e)))
        .collect();
    order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
    println!("rank\tentity\tscore");
    for (rank, &e) in order.iter().take(a.top).enumerate() {
        println!("{}\t{}\t{:.6}", rank + 1, vocab.entity_name(e), scores[e]);
    }
    Ok(())
}

pub fn inspect_posterior(a: &InspectArgs) -> Result<()> {
    let rows = read_dump(&a.dump).with_context(|| format!("reading {}", a.dump.display()))?;
    let names = match &a.labeled {
        Some(p) => Some(
            kg::load_triples(p)
                .with_context(|| format!("reading {}", p.display()))?
                .graph,
        ),
        None => None,
    };
    let (labeled, unlabeled): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r.labeled);
    let mean = |v: &[&npukg::loss::DumpRow], f: fn(&npukg::loss::DumpRow) -> f64| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().map(|r| f(r)).sum::<f64>() / v.len() as f64
        }
    };
    println!("kind\tcount\tmean_w\tmean_w_tilde");
    for (kind, v) in [("labeled", &labeled), ("unlabeled", &unlabeled)] {
        println!(
            "{kind}\t{}\t{:.4}\t{:.4}",
            v.len(),
            mean(v, |r| r.w),
            mean(v, |r| r.w_tilde)
        );
    }

    let mut low = labeled.clone();
    low.sort_by(|x, y| x.w_tilde.total_cmp(&y.w_tilde).then(x.id.cmp(&y.id)));
    println!("\nlowest labeled posteriors");
    println!("id\tw\tw_tilde\ttriple");
    for r in low.iter().take(a.lowest) {
        let triple = names
            .as_ref()
            .and_then(|g| g.triples().get(r.id).map(|t| g.vocab().format_triple(t)))
            .unwrap_or_default();
        println!("{}\t{:.4}\t{:.4}\t{triple}", r.id, r.w, r.w_tilde);
    }

    let mut high = unlabeled.clone();
    high.sort_by(|x, y| y.w_tilde.total_cmp(&x.w_tilde).then(x.id.cmp(&y.id)));
    println!("\nhighest unlabeled posteriors");
    println!("slot\tw\tw_tilde");
    for r in high.iter().take(a.lowest) {
        println!("{}\t{:.4}\t{:.4}", r.id, r.w, r.w_tilde);
    }
    Ok(())
}
