//! Grid sweeps: every grid point is trained once per seed, evaluated on the
//! test set, and summarised per point.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use npukg::eval::{self, EvalOptions, MetricsReport};
use npukg::kg::{self, KnowledgeGraph, Triple};
use npukg::train::{content_hash, parse_pairs, TrainConfig};
use rayon::prelude::*;

use crate::commands::{fit, load_known, load_train_valid, write_run, EVAL_FILE};
use crate::{artifact_header, banner, output_dir, SweepArgs};

pub const RESULTS_FILE: &str = "results.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

/// Axes of a grid file, in key order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub axes: Vec<(String, Vec<String>)>,
}

impl Grid {
    pub fn parse(text: &str) -> Result<Self> {
        let axes = parse_pairs(text)?
            .into_iter()
            .map(|(k, v)| {
                let values: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
                ensure!(
                    values.iter().all(|s| !s.is_empty()),
                    "grid key {k:?} has an empty value"
                );
                Ok((k, values))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { axes })
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    /// Keys with more than one value.
    pub fn varying(&self) -> Vec<&str> {
        self.axes
            .iter()
            .filter(|(_, v)| v.len() > 1)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    /// Settings of point `i`; the last axis varies fastest.
    pub fn point(&self, mut i: usize) -> Vec<(&str, &str)> {
        let mut out = vec![("", ""); self.axes.len()];
        for (slot, (k, v)) in self.axes.iter().enumerate().rev() {
            out[slot] = (k.as_str(), v[i % v.len()].as_str());
            i /= v.len();
        }
        out
    }

    pub fn config(&self, i: usize, seed: u64) -> Result<TrainConfig> {
        let text: String = self
            .point(i)
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let mut cfg = TrainConfig::parse(&text)?;
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .with_context(|| format!("bad seed {p:?}"))
        })
        .collect::<Result<_>>()?;
    let distinct: HashSet<u64> = seeds.iter().copied().collect();
    ensure!(
        distinct.len() == seeds.len(),
        "seed list {s:?} repeats a seed"
    );
    Ok(seeds)
}

struct Data {
    train: KnowledgeGraph,
    valid: KnowledgeGraph,
    test: Vec<Triple>,
    extra: Vec<Triple>,
}

struct RunResult {
    point: usize,
    seed: u64,
    outcome: Result<MetricsReport, String>,
}

fn run_one(
    data: &Data,
    grid: &Grid,
    point: usize,
    seed: u64,
    ks: &[usize],
    dir: &Path,
) -> Result<MetricsReport> {
    let cfg = grid.config(point, seed)?;
    let outcome = fit(&data.train, &data.valid, &data.extra, &cfg)?;
    let run_dir = dir.join("runs").join(format!("p{point}_s{seed}"));
    write_run(&run_dir, &cfg, &outcome)?;
    let mut filter: HashSet<Triple> = data.extra.iter().copied().collect();
    filter.extend(data.train.triples());
    filter.extend(data.valid.triples());
    filter.extend(&data.test);
    let opts = EvalOptions {
        ks: ks.to_vec(),
        ..Default::default()
    };
    let metrics = eval::evaluate(&outcome.best.scorer()?, &data.test, &filter, &opts)?;
    metrics.write_csv(
        &run_dir.join(EVAL_FILE),
        &artifact_header(cfg.seed, &cfg.hash()),
    )?;
    Ok(metrics)
}

/// Sample mean and standard deviation (`n − 1` denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn metric_names(ks: &[usize]) -> Vec<String> {
    std::iter::once("mrr".to_string())
        .chain(ks.iter().map(|k| format!("hits@{k}")))
        .collect()
}

fn metric_values(m: &MetricsReport) -> Vec<f64> {
    std::iter::once(m.mrr)
        .chain(m.hits.iter().map(|h| h.1))
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn run(a: &SweepArgs) -> Result<()> {
    let grid_text = fs::read_to_string(&a.grid)
        .with_context(|| format!("reading grid {}", a.grid.display()))?;
    let grid =
        Grid::parse(&grid_text).with_context(|| format!("parsing grid {}", a.grid.display()))?;
    let seeds = parse_seeds(&a.seeds)?;
    let ks = eval::parse_ks(&a.ks)?;
    ensure!(a.jobs > 0, "--jobs must be positive");
    // Reject unknown keys, malformed values and missing required keys up front.
    for i in 0..grid.len() {
        grid.config(i, seeds[0])
            .with_context(|| format!("grid point {i} of {}", a.grid.display()))?;
    }
    let seeds_label = seeds
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(";");
    let hash = content_hash(&format!(
        "{grid_text}\nseeds = {}\nks = {}\n",
        a.seeds, a.ks
    ));
    banner("sweep", &seeds_label, &hash);
    info!(
        "{} grid points x {} seeds, {} concurrent runs",
        grid.len(),
        seeds.len(),
        a.jobs
    );

    let (train, valid) = load_train_valid(&a.train, &a.valid)?;
    let test = kg::load_with_vocab(&a.test, train.vocab())
        .with_context(|| format!("reading {}", a.test.display()))?;
    if test.unknown > 0 {
        warn!(
            "{}: skipped {} test triples with unknown names",
            a.test.display(),
            test.unknown
        );
    }
    ensure!(
        !test.graph.is_empty(),
        "no test triple of {} is known to the training vocabulary",
        a.test.display()
    );
    let data = Data {
        extra: load_known(&a.filter, train.vocab())?,
        test: test.graph.triples().to_vec(),
        train,
        valid,
    };

    let dir = output_dir(&a.out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()?;
    let results: Vec<RunResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(point, seed)| {
                let outcome =
                    run_one(&data, &grid, point, seed, &ks, &dir).map_err(|e| format!("{e:#}"));
                match &outcome {
                    Ok(m) => info!("point {point} seed {seed}: mrr={:.4}", m.mrr),
                    Err(e) => warn!("point {point} seed {seed} failed: {e}"),
                }
                RunResult {
                    point,
                    seed,
                    outcome,
                }
            })
            .collect()
    });

    let header = artifact_header(&seeds_label, &hash);
    let varying = grid.varying();
    let names = metric_names(&ks);
    let point_values = |p: usize| -> Vec<String> {
        let settings = grid.point(p);
        varying
            .iter()
            .map(|k| {
                csv_field(
                    settings
                        .iter()
                        .find(|(kk, _)| kk == k)
                        .map(|s| s.1)
                        .unwrap_or_default(),
                )
            })
            .collect()
    };

    let mut rows: String = header.iter().map(|h| format!("# {h}\n")).collect();
    let mut cols = vec!["point".to_string(), "seed".to_string()];
    cols.extend(varying.iter().map(|k| k.to_string()));
    cols.push("status".into());
    cols.extend(names.iter().cloned());
    let _ = writeln!(rows, "{}", cols.join(","));
    for r in &results {
        let mut f = vec![r.point.to_string(), r.seed.to_string()];
        f.extend(point_values(r.point));
        match &r.outcome {
            Ok(m) => {
                f.push("ok".into());
                f.extend(metric_values(m).iter().map(f64::to_string));
            }
            Err(e) => {
                f.push(csv_field(&format!("failed: {e}")));
                f.extend(names.iter().map(|_| "NA".to_string()));
            }
        }
        let _ = writeln!(rows, "{}", f.join(","));
    }
    fs::write(dir.join(RESULTS_FILE), rows)?;

    let mut agg: String = header.iter().map(|h| format!("# {h}\n")).collect();
    let mut cols = vec!["point".to_string()];
    cols.extend(varying.iter().map(|k| k.to_string()));
    cols.extend(["runs".to_string(), "failed".to_string()]);
    for n in &names {
        cols.push(format!("{n}_mean"));
        cols.push(format!("{n}_std"));
    }
    let _ = writeln!(agg, "{}", cols.join(","));
    for p in 0..grid.len() {
        let runs: Vec<&RunResult> = results.iter().filter(|r| r.point == p).collect();
        let ok: Vec<Vec<f64>> = runs
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok())
            .map(metric_values)
            .collect();
        let mut f = vec![p.to_string()];
        f.extend(point_values(p));
        f.push(runs.len().to_string());
        f.push((runs.len() - ok.len()).to_string());
        for m in 0..names.len() {
            if ok.is_empty() {
                f.extend(["NA".to_string(), "NA".to_string()]);
            } else {
                let (mean, std) = mean_std(&ok.iter().map(|v| v[m]).collect::<Vec<_>>());
                f.push(mean.to_string());
                f.push(std.to_string());
            }
        }
        let _ = writeln!(agg, "{}", f.join(","));
    }
    fs::write(dir.join(AGGREGATE_FILE), agg)?;

    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    println!(
        "runs={} failed={} out={}",
        results.len(),
        failed,
        dir.display()
    );
    if failed == results.len() {
        bail!("every sweep run failed");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points_cover_the_product() {
        let g = Grid::parse("alpha = 0.1, 0.2\nbeta = 0.3\nk = 5,10,20\n").unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.varying(), vec!["alpha", "k"]);
        let all: HashSet<Vec<(&str, &str)>> = (0..6).map(|i| g.point(i)).collect();
        assert_eq!(all.len(), 6);
        assert_eq!(
            g.point(0),
            vec![("alpha", "0.1"), ("beta", "0.3"), ("k", "5")]
        );
        assert_eq!(
            g.point(5),
            vec![("alpha", "0.2"), ("beta", "0.3"), ("k", "20")]
        );
    }

    #[test]
    fn grid_configs_need_alpha_and_beta() {
        assert!(Grid::parse("beta = 0.3\n").unwrap().config(0, 0).is_err());
        let cfg = Grid::parse("alpha = 0.1\nbeta = 0.3\n")
            .unwrap()
            .config(0, 7)
            .unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn mean_std_matches_hand_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn seed_lists_reject_repeats() {
        assert_eq!(parse_seeds("0, 1,2").unwrap(), vec![0, 1, 2]);
        assert!(parse_seeds("1,1").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
