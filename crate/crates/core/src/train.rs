//! Self-training loop: joint optimisation of the encoder, the score heads and
//! the free posterior parameters, with periodic neighbor rebuilds and
//! unlabeled-pool resampling driven by the model posteriors.
//!
//! Per epoch:
//! 1. past warmup, rebuild neighbor sets from `W̃^L` and resample each
//!    labeled triple's unlabeled partners from a scored candidate pool;
//! 2. one pass over shuffled mini-batches with an Adam step each;
//! 3. refresh `W̃^L` and `W̃^U` from the eval-mode model;
//! 4. score a fixed sample of validation queries and keep the best model.
//!
//! Resampling costs `O(n_L · candidate_pool_size · d)` per epoch.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{debug, info};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::encoder::{
    encode_entities, score_triples, Mode, ModelParams, ModelShape, NeighborSet, RankScore, Scorer,
    DEFAULT_TOP_M, PARAM_NAMES,
};
use crate::error::{Error, Result};
use crate::eval::{self, EvalOptions, RankQuery, TieRule};
use crate::kg::{corrupt, KnowledgeGraph, Triple, UnlabeledPool};
use crate::loss::{
    self, kl_term, reg_term, total_loss, triple_loss, BatchScores, BatchWeights, LossParts,
    LossWeights, PairwiseOrder, PosteriorTable,
};
use crate::rng;
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, Update};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs before self-training starts.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Unlabeled triples per labeled triple.
    pub k: usize,
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub top_m: usize,
    pub lambda_kl: f64,
    pub lambda_reg: f64,
    pub seed: u64,
    /// Candidates scored per labeled triple when resampling; `4·k` if unset.
    pub candidate_pool_size: Option<usize>,
    pub exploration_fraction: f64,
    /// Validation queries scored each epoch.
    pub valid_sample: usize,
    pub pairwise_order: PairwiseOrder,
}

impl TrainConfig {
    /// Defaults with the two priors supplied.
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            max_epochs: 200,
            warmup_epochs: 50,
            batch_size: 256,
            dim: 128,
            layers: 1,
            dropout: 0.5,
            k: 10,
            lr: 0.01,
            alpha,
            beta,
            top_m: DEFAULT_TOP_M,
            lambda_kl: 1.0,
            lambda_reg: 1.0,
            seed: 0,
            candidate_pool_size: None,
            exploration_fraction: 0.2,
            valid_sample: 2000,
            pairwise_order: PairwiseOrder::default(),
        }
    }

    pub fn pool_size(&self) -> usize {
        self.candidate_pool_size.unwrap_or(4 * self.k)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("dim", self.dim),
            ("layers", self.layers),
            ("k", self.k),
            ("top_m", self.top_m),
            ("valid_sample", self.valid_sample),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.warmup_epochs > self.max_epochs {
            return bad(format!(
                "warmup_epochs ({}) exceeds max_epochs ({})",
                self.warmup_epochs, self.max_epochs
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.exploration_fraction) {
            return bad(format!(
                "exploration_fraction {} not in [0, 1]",
                self.exploration_fraction
            ));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} {v} not in (0, 1)"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        for (name, v) in [
            ("lambda_kl", self.lambda_kl),
            ("lambda_reg", self.lambda_reg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be non-negative"));
            }
        }
        if self.pool_size() < self.k {
            return bad(format!(
                "candidate_pool_size {} is smaller than k {}",
                self.pool_size(),
                self.k
            ));
        }
        Ok(())
    }

    /// Every key with its value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("alpha", self.alpha.to_string()),
            ("batch_size", self.batch_size.to_string()),
            (
                "candidate_pool_size",
                self.candidate_pool_size
                    .map_or("auto".into(), |v| v.to_string()),
            ),
            ("beta", self.beta.to_string()),
            ("dim", self.dim.to_string()),
            ("dropout", self.dropout.to_string()),
            (
                "exploration_fraction",
                self.exploration_fraction.to_string(),
            ),
            ("k", self.k.to_string()),
            ("lambda_kl", self.lambda_kl.to_string()),
            ("lambda_reg", self.lambda_reg.to_string()),
            ("layers", self.layers.to_string()),
            ("lr", self.lr.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("pairwise_order", self.pairwise_order.as_str().to_string()),
            ("seed", self.seed.to_string()),
            ("top_m", self.top_m.to_string()),
            ("valid_sample", self.valid_sample.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k} = {v}");
            s
        })
    }

    /// Hash of the canonical `key = value` rendering.
    pub fn hash(&self) -> String {
        content_hash(&self.to_text())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value for {key}: {v:?}")))
        }
        match key {
            "max_epochs" => self.max_epochs = p(key, value)?,
            "warmup_epochs" => self.warmup_epochs = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "dim" => self.dim = p(key, value)?,
            "layers" => self.layers = p(key, value)?,
            "dropout" => self.dropout = p(key, value)?,
            "k" => self.k = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "alpha" => self.alpha = p(key, value)?,
            "beta" => self.beta = p(key, value)?,
            "top_m" => self.top_m = p(key, value)?,
            "lambda_kl" => self.lambda_kl = p(key, value)?,
            "lambda_reg" => self.lambda_reg = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "candidate_pool_size" => {
                self.candidate_pool_size = match value {
                    "auto" => None,
                    v => Some(p(key, v)?),
                }
            }
            "exploration_fraction" => self.exploration_fraction = p(key, value)?,
            "valid_sample" => self.valid_sample = p(key, value)?,
            "pairwise_order" => self.pairwise_order = value.parse()?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` text. Blank lines and `#` comments are
    /// ignored; unknown or repeated keys are errors; `alpha` and `beta` are
    /// required.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        for required in ["alpha", "beta"] {
            if !pairs.contains_key(required) {
                return Err(Error::MissingKey(required.into()));
            }
        }
        let mut cfg = Self::new(0.5, 0.5);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Hex-encoded SHA-256 of `text`.
pub fn content_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Flat `key = value` lines into an ordered map.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Config(format!("line {}: empty key or value", i + 1)));
        }
        if pairs.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: key {k:?} repeated", i + 1)));
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_triple: f64,
    pub loss_kl: f64,
    pub loss_reg: f64,
    /// Weighted total, `triple + λ_KL·kl + λ_reg·reg`.
    pub loss_total: f64,
    pub valid_mrr: f64,
    pub valid_hits10: f64,
}

pub const HISTORY_HEADER: &str = "epoch,loss_triple,loss_kl,loss_reg,valid_mrr,valid_hits10";

pub fn history_csv(history: &[EpochRecord], header: &[String]) -> String {
    let mut s = String::new();
    for h in header {
        let _ = writeln!(s, "# {h}");
    }
    let _ = writeln!(s, "{HISTORY_HEADER}");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch, r.loss_triple, r.loss_kl, r.loss_reg, r.valid_mrr, r.valid_hits10
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model with the highest sampled validation MRR (the initial model when
    /// no epoch ran).
    pub best: Checkpoint,
    pub best_epoch: usize,
    /// Best model's MRR over all validation queries.
    pub best_valid_mrr: f64,
    pub history: Vec<EpochRecord>,
    /// State after the last epoch.
    pub final_params: ModelParams,
    pub neighbors: NeighborSet,
    pub pool: UnlabeledPool,
    pub posteriors: PosteriorTable,
    /// Initial neighbor sets, kept for schedule checks.
    pub initial_neighbors: NeighborSet,
    pub initial_pool: UnlabeledPool,
}

/// Picks `k` of `candidates`: the `⌈(1 − exploration)·k⌉` with highest
/// posterior (ties by candidate position), then uniformly from the rest.
/// Returns candidate positions, top picks first.
pub fn resample_unlabeled<R: Rng + ?Sized>(
    posteriors: &[f64],
    k: usize,
    exploration_fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if posteriors.len() < k {
        return Err(Error::InsufficientCorruptions {
            triple: "candidate pool".into(),
            available: posteriors.len(),
            requested: k,
        });
    }
    if !(0.0..=1.0).contains(&exploration_fraction) {
        return Err(Error::InvalidArgument(format!(
            "exploration_fraction {exploration_fraction} not in [0, 1]"
        )));
    }
    let n_top = (((1.0 - exploration_fraction) * k as f64) - 1e-9)
        .ceil()
        .max(0.0) as usize;
    let n_top = n_top.min(k);
    let mut order: Vec<usize> = (0..posteriors.len()).collect();
    order.sort_by(|&a, &b| posteriors[b].total_cmp(&posteriors[a]).then(a.cmp(&b)));
    let mut picked: Vec<usize> = order[..n_top].to_vec();
    let mut rest: Vec<usize> = order[n_top..].to_vec();
    rest.sort_unstable();
    picked.extend(
        index::sample(rng, rest.len(), k - n_top)
            .into_iter()
            .map(|i| rest[i]),
    );
    Ok(picked)
}

/// Neighbor sets from the current labeled posteriors.
pub fn refresh_neighbors(
    graph: &KnowledgeGraph,
    tilde_labeled: &[f64],
    top_m: usize,
) -> Result<NeighborSet> {
    NeighborSet::build(graph, tilde_labeled, top_m)
}

/// `W̃^L` for every triple of `triples` under `scorer`.
pub fn labeled_posteriors(scorer: &Scorer, triples: &[Triple], beta: f64) -> Vec<f64> {
    triples
        .par_iter()
        .map(|t| scorer.rank_value(t, RankScore::Posterior { beta }))
        .collect()
}

fn score_all(scorer: &Scorer, triples: &[Triple]) -> Vec<(f64, f64)> {
    triples.par_iter().map(|t| scorer.score(t)).collect()
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { .. } | Error::NonFiniteGradient(_) | Error::NonFiniteComponent(_) => {
            Error::Diverged {
                epoch,
                last_finite: epoch.saturating_sub(1),
                reason: e.to_string(),
            }
        }
        other => other,
    }
}

struct Validator {
    queries: Vec<RankQuery>,
    all: Vec<RankQuery>,
    filter: HashSet<Triple>,
    opts: EvalOptions,
}

impl Validator {
    fn new(valid: &[Triple], filter: &HashSet<Triple>, cap: usize, seed: u64) -> Self {
        let all = eval::queries(valid);
        let queries = if all.len() <= cap {
            all.clone()
        } else {
            let mut rng = rng::stream(seed, "valid-sample");
            let mut idx = index::sample(&mut rng, all.len(), cap).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| all[i]).collect()
        };
        Self {
            queries,
            all,
            filter: filter.clone(),
            opts: EvalOptions {
                ks: vec![10],
                by: RankScore::Positive,
                tie: TieRule::Optimistic,
            },
        }
    }

    fn run(&self, scorer: &Scorer, full: bool) -> Result<(f64, f64)> {
        let qs = if full { &self.all } else { &self.queries };
        let ranks = eval::ranks(scorer, qs, &self.filter, &self.opts)?;
        let m = eval::compute_metrics(&ranks, &self.opts.ks)?;
        Ok((m.mrr, m.hits[0].1))
    }
}

/// Runs the full training schedule.
///
/// `filter` holds every known-true triple used to filter validation ranks
/// (typically train ∪ valid). Fully deterministic for a given seed.
pub fn train(
    graph: &KnowledgeGraph,
    valid: &[Triple],
    filter: &HashSet<Triple>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if graph.is_empty() {
        return Err(Error::Empty("training graph".into()));
    }
    if valid.is_empty() {
        return Err(Error::Empty("validation set".into()));
    }
    if let Some(t) = valid.iter().find(|t| !graph.vocab().contains(t)) {
        return Err(Error::InvalidArgument(format!(
            "validation triple {t} outside the vocabulary"
        )));
    }

    let n_l = graph.len();
    let k = cfg.k;
    let shape = ModelShape {
        num_entities: graph.num_entities(),
        num_relations: graph.num_relations(),
        dim: cfg.dim,
        layers: cfg.layers,
    };
    let mut init_rng = rng::stream(cfg.seed, "init");
    let mut sample_rng = rng::stream(cfg.seed, "sampling");
    let mut batch_rng = rng::stream(cfg.seed, "batches");
    let mut dropout_rng = rng::stream(cfg.seed, "dropout");

    let mut params = ModelParams::init(shape, &mut init_rng);
    let mut pool = UnlabeledPool::sample(graph, k, &mut sample_rng)?;
    let mut neighbors = NeighborSet::build(graph, &vec![0.5; n_l], cfg.top_m)?;
    let initial_pool = pool.clone();
    let initial_neighbors = neighbors.clone();

    let mut post = PosteriorTable::new(n_l, k, cfg.alpha, cfg.beta)?;
    {
        let scorer = Scorer::new(&params, &neighbors)?;
        post.refresh(
            &score_all(&scorer, graph.triples()),
            &score_all(&scorer, pool.slots()),
        )?;
    }
    post.align_to_tilde();

    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut model_opt = Adam::new(adam_cfg, &sizes);
    let mut w_opt = Adam::new(adam_cfg, &[n_l, n_l * k]);
    let weights = LossWeights {
        kl: cfg.lambda_kl,
        reg: cfg.lambda_reg,
    };
    let validator = Validator::new(valid, filter, cfg.valid_sample, cfg.seed);
    let config_hash = cfg.hash();
    let snapshot = |params: &ModelParams, neighbors: &NeighborSet, epoch: usize| Checkpoint {
        meta: CheckpointMeta {
            seed: cfg.seed,
            alpha: cfg.alpha,
            beta: cfg.beta,
            config_hash: config_hash.clone(),
            epoch,
        },
        vocab: graph.vocab().clone(),
        params: params.clone(),
        neighbors: neighbors.clone(),
    };

    let mut best = snapshot(&params, &neighbors, 0);
    let mut best_epoch = 0;
    let mut best_sample_mrr = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut order: Vec<usize> = (0..n_l).collect();

    for epoch in 1..=cfg.max_epochs {
        if epoch > cfg.warmup_epochs {
            neighbors = refresh_neighbors(graph, post.tilde_labeled(), cfg.top_m)?;
            let scorer = Scorer::new(&params, &neighbors)?;
            resample_pool(
                graph,
                &scorer,
                cfg,
                &mut pool,
                &mut post,
                &mut w_opt,
                &mut sample_rng,
            )?;
        }

        order.shuffle(&mut batch_rng);
        let mut sums = [0.0f64; 4];
        for batch in order.chunks(cfg.batch_size) {
            let values = train_step(
                graph,
                &pool,
                batch,
                cfg,
                weights,
                &mut params,
                &mut post,
                &neighbors,
                &mut model_opt,
                &mut w_opt,
                &mut dropout_rng,
            )
            .map_err(|e| diverged(epoch, e))?;
            let b = batch.len() as f64;
            sums[0] += values.triple * b;
            sums[1] += values.kl * b;
            sums[2] += values.reg * b;
            sums[3] += values.total * b;
        }
        let n = n_l as f64;

        let scorer = Scorer::new(&params, &neighbors)?;
        post.refresh(
            &score_all(&scorer, graph.triples()),
            &score_all(&scorer, pool.slots()),
        )?;
        let (mrr, hits10) = validator.run(&scorer, false)?;
        let record = EpochRecord {
            epoch,
            loss_triple: sums[0] / n,
            loss_kl: sums[1] / n,
            loss_reg: sums[2] / n,
            loss_total: sums[3] / n,
            valid_mrr: mrr,
            valid_hits10: hits10,
        };
        info!(
            "epoch {epoch}: loss {:.5} (triple {:.5} kl {:.5} reg {:.5}) valid mrr {:.4} hits@10 {:.4}",
            record.loss_total, record.loss_triple, record.loss_kl, record.loss_reg, mrr, hits10
        );
        history.push(record);
        if mrr > best_sample_mrr {
            best_sample_mrr = mrr;
            best_epoch = epoch;
            best = snapshot(&params, &neighbors, epoch);
        }
    }

    let best_valid_mrr = validator.run(&best.scorer()?, true)?.0;
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_valid_mrr,
        history,
        final_params: params,
        neighbors,
        pool,
        posteriors: post,
        initial_neighbors,
        initial_pool,
    })
}

/// Replaces every labeled triple's unlabeled partners. Partners that survive
/// keep their slot and their posterior parameter; new ones start at their
/// model posterior with fresh optimizer moments.
fn resample_pool<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    scorer: &Scorer,
    cfg: &TrainConfig,
    pool: &mut UnlabeledPool,
    post: &mut PosteriorTable,
    w_opt: &mut Adam,
    rng: &mut R,
) -> Result<()> {
    let k = cfg.k;
    let n_ent = graph.num_entities();
    let candidates: Vec<Vec<Triple>> = graph
        .triples()
        .iter()
        .map(|t| corrupt(t, n_ent, cfg.pool_size(), graph.membership(), rng))
        .collect::<Result<_>>()?;
    let scored: Vec<Vec<f64>> = candidates
        .par_iter()
        .map(|cands| post.unlabeled_posteriors(&score_all_seq(scorer, cands)))
        .collect();

    let mut slots = pool.slots().to_vec();
    let mut reset = Vec::new();
    for (i, (cands, w)) in candidates.iter().zip(&scored).enumerate() {
        let chosen = resample_unlabeled(w, k, cfg.exploration_fraction, rng)?;
        let old = &slots[i * k..(i + 1) * k];
        let chosen_set: HashSet<Triple> = chosen.iter().map(|&c| cands[c]).collect();
        let mut keep = vec![false; k];
        for (j, t) in old.iter().enumerate() {
            keep[j] = chosen_set.contains(t);
        }
        let kept: HashSet<Triple> = old
            .iter()
            .zip(&keep)
            .filter(|(_, &kp)| kp)
            .map(|(t, _)| *t)
            .collect();
        let mut incoming = chosen.iter().filter(|&&c| !kept.contains(&cands[c]));
        for (j, _) in keep.iter().enumerate().filter(|(_, &kp)| !kp) {
            let c = *incoming
                .next()
                .ok_or_else(|| Error::Internal("resample slot accounting".into()))?;
            let slot = i * k + j;
            slots[slot] = cands[c];
            post.set_tilde_unlabeled(slot, w[c]);
            post.unlabeled_logits.data_mut()[slot] = loss::logit(w[c]);
            reset.push(slot);
        }
    }
    w_opt.reset_elements(1, &reset);
    debug!(
        "resampled {} of {} unlabeled slots",
        reset.len(),
        slots.len()
    );
    *pool = UnlabeledPool::new(k, slots)?;
    Ok(())
}

fn score_all_seq(scorer: &Scorer, triples: &[Triple]) -> Vec<(f64, f64)> {
    triples.iter().map(|t| scorer.score(t)).collect()
}

#[allow(clippy::too_many_arguments)]
fn train_step<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    pool: &UnlabeledPool,
    batch: &[usize],
    cfg: &TrainConfig,
    weights: LossWeights,
    params: &mut ModelParams,
    post: &mut PosteriorTable,
    neighbors: &NeighborSet,
    model_opt: &mut Adam,
    w_opt: &mut Adam,
    dropout_rng: &mut R,
) -> Result<loss::LossValues> {
    let k = cfg.k;
    let labeled: Vec<Triple> = batch.iter().map(|&i| graph.triples()[i]).collect();
    let slot_ids: Vec<usize> = batch.iter().flat_map(|&i| i * k..(i + 1) * k).collect();
    let unlabeled: Vec<Triple> = slot_ids.iter().map(|&s| pool.slots()[s]).collect();

    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true)?;
    let enc = encode_entities(
        &mut tape,
        &vars,
        params.shape.layers,
        neighbors,
        cfg.dropout,
        Mode::Train(dropout_rng),
    )?;
    let (psi1_l, psi0_l) = score_triples(&mut tape, &vars, enc.repr, &labeled)?;
    let (psi1_u, psi0_u) = score_triples(&mut tape, &vars, enc.repr, &unlabeled)?;

    let wl_logits: Vec<f64> = batch
        .iter()
        .map(|&i| post.labeled_logits.data()[i])
        .collect();
    let wu_logits: Vec<f64> = slot_ids
        .iter()
        .map(|&s| post.unlabeled_logits.data()[s])
        .collect();
    let wl_leaf = tape.leaf(Tensor::vector(wl_logits).with_grad())?;
    let wu_leaf = tape.leaf(Tensor::vector(wu_logits).with_grad())?;
    let w = BatchWeights {
        labeled: tape.sigmoid(wl_leaf)?,
        unlabeled: tape.sigmoid(wu_leaf)?,
    };
    let scores = BatchScores {
        psi1_labeled: psi1_l,
        psi0_labeled: psi0_l,
        psi1_unlabeled: psi1_u,
        psi0_unlabeled: psi0_u,
    };
    let tilde_l: Vec<f64> = batch.iter().map(|&i| post.tilde_labeled()[i]).collect();
    let tilde_u: Vec<f64> = slot_ids
        .iter()
        .map(|&s| post.tilde_unlabeled()[s])
        .collect();
    let parts = LossParts {
        triple: triple_loss(&mut tape, &scores, &w, k, cfg.pairwise_order)?,
        kl: kl_term(&mut tape, &w, &tilde_l, &tilde_u)?,
        reg: reg_term(&mut tape, &w)?,
    };
    let (total, values) = total_loss(&mut tape, &parts, weights)?;
    let grads = tape.backward(total)?;

    let model_grads: Vec<&[f64]> = vars
        .all()
        .iter()
        .map(|&v| {
            grads
                .get(v)
                .ok_or_else(|| Error::Internal("missing parameter gradient".into()))
        })
        .collect::<Result<_>>()?;
    let mut named: Vec<(&str, &mut Tensor)> = PARAM_NAMES
        .iter()
        .copied()
        .zip(params.tensors_mut())
        .collect();
    model_opt.step(&mut named, &model_grads, &[Update::Dense; 12])?;

    let gl = grads
        .get(wl_leaf)
        .ok_or_else(|| Error::Internal("missing W^L gradient".into()))?;
    let gu = grads
        .get(wu_leaf)
        .ok_or_else(|| Error::Internal("missing W^U gradient".into()))?;
    let (wl, wu) = (&mut post.labeled_logits, &mut post.unlabeled_logits);
    w_opt.step(
        &mut [("posterior_labeled", wl), ("posterior_unlabeled", wu)],
        &[gl, gu],
        &[Update::Gathered(batch), Update::Gathered(&slot_ids)],
    )?;
    Ok(values)
}
