//! The noisy positive-unlabeled objective.
//!
//! Scores `ψ1` and `ψ0` are mapped to collection probabilities
//! `φ_y = σ(ψ_y)`. Each labeled triple `s_i` is paired with `K` unlabeled
//! triples `s_ik`, whose uncollection probability is replaced by the pairwise
//! measure `φ*_y = σ(ψ_y(s_ik) − ψ_y(s_i))`. With per-triple Bernoulli
//! parameters `w` (stored as logits) the training loss is
//!
//! ```text
//! L_triple = −1/(K·B) Σ_i Σ_k [ w_i log φ1(s_i) + (1 − w_i) log φ0(s_i)
//!                              + w_ik log φ*_1 + (1 − w_ik) log φ*_0 ]
//! L_KL     = mean_i KL(w_i ‖ w̃_i) + mean_ik KL(w_ik ‖ w̃_ik)
//! L_reg    = mean_i w_i + mean_ik w_ik
//! L        = L_triple + λ_KL · L_KL + λ_reg · L_reg
//! ```
//!
//! The labeled term sits inside the sum over `k`, so it is counted `K` times
//! and then divided by `K`; the implementation computes it once per labeled
//! triple, which is the same value. `w̃` are the model posteriors, held fixed
//! between refreshes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{clamp_prob, sigmoid, Tape, Tensor, Var};

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} must be finite, got {x}"
        )))
    }
}

/// `σ(ψ)` clamped into `[1e-12, 1 − 1e-12]`.
pub fn collection_prob(psi: f64) -> Result<f64> {
    Ok(collection_prob_unchecked(finite(psi, "score")?))
}

pub(crate) fn collection_prob_unchecked(psi: f64) -> f64 {
    clamp_prob(sigmoid(psi))
}

/// Pairwise uncollection measure `σ(ψ_u − ψ_l)`.
pub fn pairwise_uncollection(psi_u: f64, psi_l: f64) -> Result<f64> {
    let d = finite(psi_u, "unlabeled score")? - finite(psi_l, "labeled score")?;
    Ok(clamp_prob(sigmoid(d)))
}

/// Posterior that a collected triple is a true fact:
/// `β φ1 / (β φ1 + (1 − β) φ0)`.
pub fn posterior_labeled(phi1: f64, phi0: f64, beta: f64) -> f64 {
    let (phi1, phi0) = (clamp_prob(phi1), clamp_prob(phi0));
    let num = beta * phi1;
    num / (num + (1.0 - beta) * phi0)
}

/// Posterior that an uncollected triple is a true fact:
/// `α φ1ᵘ / (α φ1ᵘ + (1 − α) φ0ᵘ)` with `φᵘ = 1 − φ`.
pub fn posterior_unlabeled(phi1_u: f64, phi0_u: f64, alpha: f64) -> f64 {
    posterior_labeled(phi1_u, phi0_u, alpha)
}

/// Bernoulli KL divergence `KL(w ‖ w̃)`.
pub fn bernoulli_kl(w: f64, w_tilde: f64) -> f64 {
    let (w, wt) = (clamp_prob(w), clamp_prob(w_tilde));
    w * (w / wt).ln() + (1.0 - w) * ((1.0 - w) / (1.0 - wt)).ln()
}

/// Argument order of the pairwise measure inside the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairwiseOrder {
    /// `σ(ψ(s_ik) − ψ(s_i))`, the measure exactly as written above.
    UnlabeledOverLabeled,
    /// `σ(ψ(s_i) − ψ(s_ik))`: the collected triple must outrank its
    /// unlabeled partners. Agrees with reading `ψ` as a collection score.
    #[default]
    LabeledOverUnlabeled,
}

impl PairwiseOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            PairwiseOrder::UnlabeledOverLabeled => "unlabeled-over-labeled",
            PairwiseOrder::LabeledOverUnlabeled => "labeled-over-unlabeled",
        }
    }
}

impl std::str::FromStr for PairwiseOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unlabeled-over-labeled" => Ok(PairwiseOrder::UnlabeledOverLabeled),
            "labeled-over-unlabeled" => Ok(PairwiseOrder::LabeledOverUnlabeled),
            other => Err(Error::Config(format!("unknown pairwise order {other:?}"))),
        }
    }
}

/// Scores for one mini-batch, all on the tape.
#[derive(Debug, Clone, Copy)]
pub struct BatchScores {
    /// `[B]`
    pub psi1_labeled: Var,
    /// `[B]`
    pub psi0_labeled: Var,
    /// `[B·K]`, slot `(i, k)` at `i·K + k`.
    pub psi1_unlabeled: Var,
    /// `[B·K]`
    pub psi0_unlabeled: Var,
}

/// Posterior parameters for one mini-batch, as probabilities on the tape.
#[derive(Debug, Clone, Copy)]
pub struct BatchWeights {
    /// `[B]`
    pub labeled: Var,
    /// `[B·K]`
    pub unlabeled: Var,
}

/// `w log φ1 + (1 − w) log φ0`, elementwise.
fn mixture_log(tape: &mut Tape, w: Var, phi1: Var, phi0: Var) -> Result<Var> {
    let l1 = tape.ln(phi1)?;
    let l0 = tape.ln(phi0)?;
    let diff = tape.sub(l1, l0)?;
    let weighted = tape.mul(w, diff)?;
    tape.add(l0, weighted)
}

/// The triple term of the objective for one batch.
pub fn triple_loss(
    tape: &mut Tape,
    scores: &BatchScores,
    weights: &BatchWeights,
    k: usize,
    order: PairwiseOrder,
) -> Result<Var> {
    let b = tape.shape(scores.psi1_labeled)[0];
    if b == 0 || k == 0 || tape.shape(scores.psi1_unlabeled)[0] != b * k {
        return Err(Error::ShapeMismatch {
            op: "triple_loss",
            shapes: vec![
                tape.shape(scores.psi1_labeled).to_vec(),
                tape.shape(scores.psi1_unlabeled).to_vec(),
                vec![k],
            ],
        });
    }
    let phi1 = tape.sigmoid(scores.psi1_labeled)?;
    let phi0 = tape.sigmoid(scores.psi0_labeled)?;
    let labeled = mixture_log(tape, weights.labeled, phi1, phi0)?;
    let labeled = tape.mean(labeled)?;

    let repeat: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let mut star = [Var::clone(&scores.psi1_unlabeled); 2];
    for (slot, (psi_l, psi_u)) in [
        (scores.psi1_labeled, scores.psi1_unlabeled),
        (scores.psi0_labeled, scores.psi0_unlabeled),
    ]
    .into_iter()
    .enumerate()
    {
        let rep = tape.gather(psi_l, &repeat)?;
        let gap = match order {
            PairwiseOrder::UnlabeledOverLabeled => tape.sub(psi_u, rep)?,
            PairwiseOrder::LabeledOverUnlabeled => tape.sub(rep, psi_u)?,
        };
        star[slot] = tape.sigmoid(gap)?;
    }
    let unlabeled = mixture_log(tape, weights.unlabeled, star[0], star[1])?;
    let unlabeled = tape.mean(unlabeled)?;

    let total = tape.add(labeled, unlabeled)?;
    tape.scale(total, -1.0)
}

fn kl_mean(tape: &mut Tape, w: Var, w_tilde: &[f64]) -> Result<Var> {
    if tape.shape(w) != [w_tilde.len()] || w_tilde.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "kl_term",
            shapes: vec![tape.shape(w).to_vec(), vec![w_tilde.len()]],
        });
    }
    let log_wt = Tensor::vector(w_tilde.iter().map(|&x| clamp_prob(x).ln()).collect());
    let log_one_minus_wt =
        Tensor::vector(w_tilde.iter().map(|&x| clamp_prob(1.0 - x).ln()).collect());
    let log_wt = tape.constant(log_wt)?;
    let log_one_minus_wt = tape.constant(log_one_minus_wt)?;

    let one_minus_w = tape.affine(w, -1.0, 1.0)?;
    let log_w = tape.ln(w)?;
    let log_one_minus_w = tape.ln(one_minus_w)?;
    let pos = tape.sub(log_w, log_wt)?;
    let pos = tape.mul(w, pos)?;
    let neg = tape.sub(log_one_minus_w, log_one_minus_wt)?;
    let neg = tape.mul(one_minus_w, neg)?;
    let kl = tape.add(pos, neg)?;
    tape.mean(kl)
}

/// `mean KL(W^L ‖ W̃^L) + mean KL(W^U ‖ W̃^U)`; `W̃` enters as a constant.
pub fn kl_term(
    tape: &mut Tape,
    weights: &BatchWeights,
    tilde_labeled: &[f64],
    tilde_unlabeled: &[f64],
) -> Result<Var> {
    let l = kl_mean(tape, weights.labeled, tilde_labeled)?;
    let u = kl_mean(tape, weights.unlabeled, tilde_unlabeled)?;
    tape.add(l, u)
}

/// `‖W^L‖₁ / n_L + ‖W^U‖₁ / n_U` over the batch entries.
pub fn reg_term(tape: &mut Tape, weights: &BatchWeights) -> Result<Var> {
    let mut parts = [weights.labeled, weights.unlabeled];
    for p in parts.iter_mut() {
        let n = tape.shape(*p)[0];
        if n == 0 {
            return Err(Error::ShapeMismatch {
                op: "reg_term",
                shapes: vec![vec![0]],
            });
        }
        let l1 = tape.l1_norm(*p)?;
        *p = tape.scale(l1, 1.0 / n as f64)?;
    }
    tape.add(parts[0], parts[1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub kl: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { kl: 1.0, reg: 1.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub triple: Var,
    pub kl: Var,
    pub reg: Var,
}

/// Component values read off the tape.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValues {
    pub triple: f64,
    pub kl: f64,
    pub reg: f64,
    pub total: f64,
}

/// `L_triple + λ_KL L_KL + λ_reg L_reg`; fails on a non-finite component.
pub fn total_loss(
    tape: &mut Tape,
    parts: &LossParts,
    weights: LossWeights,
) -> Result<(Var, LossValues)> {
    let mut values = LossValues::default();
    for (name, v, slot) in [
        ("triple", parts.triple, &mut values.triple),
        ("kl", parts.kl, &mut values.kl),
        ("reg", parts.reg, &mut values.reg),
    ] {
        let x = tape.value(v).item();
        if !x.is_finite() {
            return Err(Error::NonFiniteComponent(name));
        }
        *slot = x;
    }
    let kl = tape.scale(parts.kl, weights.kl)?;
    let reg = tape.scale(parts.reg, weights.reg)?;
    let sum = tape.add(parts.triple, kl)?;
    let total = tape.add(sum, reg)?;
    values.total = tape.value(total).item();
    if !values.total.is_finite() {
        return Err(Error::NonFiniteComponent("total"));
    }
    Ok((total, values))
}

/// Scalar reference for the total: `triple + λ_KL kl + λ_reg reg`.
pub fn combine(triple: f64, kl: f64, reg: f64, weights: LossWeights) -> Result<f64> {
    for (name, x) in [("triple", triple), ("kl", kl), ("reg", reg)] {
        if !x.is_finite() {
            return Err(Error::NonFiniteComponent(name));
        }
    }
    Ok(triple + weights.kl * kl + weights.reg * reg)
}

/// Free posterior parameters `W` (as logits) and cached model posteriors
/// `W̃` for the labeled triples and the active unlabeled slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    pub alpha: f64,
    pub beta: f64,
    k: usize,
    /// `[n_L]`
    pub labeled_logits: Tensor,
    /// `[n_L · K]`
    pub unlabeled_logits: Tensor,
    tilde_labeled: Vec<f64>,
    tilde_unlabeled: Vec<f64>,
}

pub fn logit(p: f64) -> f64 {
    let p = clamp_prob(p);
    (p / (1.0 - p)).ln()
}

impl PosteriorTable {
    pub fn new(n_labeled: usize, k: usize, alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {v} not in [0, 1)"
                )));
            }
        }
        Ok(Self {
            alpha,
            beta,
            k,
            labeled_logits: Tensor::zeros(&[n_labeled]),
            unlabeled_logits: Tensor::zeros(&[n_labeled * k]),
            tilde_labeled: vec![0.5; n_labeled],
            tilde_unlabeled: vec![0.5; n_labeled * k],
        })
    }

    /// Logits drawn uniformly from `[-1, 1]`.
    pub fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for v in self
            .labeled_logits
            .data_mut()
            .iter_mut()
            .chain(self.unlabeled_logits.data_mut())
        {
            *v = rng.gen_range(-1.0..=1.0);
        }
    }

    /// Sets every `W` to its current `W̃`.
    pub fn align_to_tilde(&mut self) {
        for (l, t) in self
            .labeled_logits
            .data_mut()
            .iter_mut()
            .zip(&self.tilde_labeled)
        {
            *l = logit(*t);
        }
        for (l, t) in self
            .unlabeled_logits
            .data_mut()
            .iter_mut()
            .zip(&self.tilde_unlabeled)
        {
            *l = logit(*t);
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_labeled(&self) -> usize {
        self.tilde_labeled.len()
    }

    pub fn w_labeled(&self) -> Vec<f64> {
        self.labeled_logits
            .data()
            .iter()
            .map(|&z| sigmoid(z))
            .collect()
    }

    pub fn w_unlabeled(&self) -> Vec<f64> {
        self.unlabeled_logits
            .data()
            .iter()
            .map(|&z| sigmoid(z))
            .collect()
    }

    pub fn tilde_labeled(&self) -> &[f64] {
        &self.tilde_labeled
    }

    pub fn tilde_unlabeled(&self) -> &[f64] {
        &self.tilde_unlabeled
    }

    /// Labeled posteriors from `(ψ1, ψ0)` per labeled triple.
    pub fn labeled_posteriors(&self, scores: &[(f64, f64)]) -> Vec<f64> {
        scores
            .iter()
            .map(|&(p1, p0)| {
                posterior_labeled(
                    collection_prob_unchecked(p1),
                    collection_prob_unchecked(p0),
                    self.beta,
                )
            })
            .collect()
    }

    /// Unlabeled posteriors from `(ψ1, ψ0)`, using `φᵘ = 1 − σ(ψ)`.
    pub fn unlabeled_posteriors(&self, scores: &[(f64, f64)]) -> Vec<f64> {
        scores
            .iter()
            .map(|&(p1, p0)| {
                posterior_unlabeled(
                    1.0 - collection_prob_unchecked(p1),
                    1.0 - collection_prob_unchecked(p0),
                    self.alpha,
                )
            })
            .collect()
    }

    /// Replaces both `W̃` tables from fresh eval-mode scores.
    pub fn refresh(&mut self, labeled: &[(f64, f64)], unlabeled: &[(f64, f64)]) -> Result<()> {
        if labeled.len() != self.tilde_labeled.len()
            || unlabeled.len() != self.tilde_unlabeled.len()
        {
            return Err(Error::ShapeMismatch {
                op: "refresh_posteriors",
                shapes: vec![
                    vec![self.tilde_labeled.len(), self.tilde_unlabeled.len()],
                    vec![labeled.len(), unlabeled.len()],
                ],
            });
        }
        let new_l = self.labeled_posteriors(labeled);
        let new_u = self.unlabeled_posteriors(unlabeled);
        self.tilde_labeled = new_l;
        self.tilde_unlabeled = new_u;
        Ok(())
    }

    /// Replaces the cached posterior of one unlabeled slot.
    pub fn set_tilde_unlabeled(&mut self, slot: usize, value: f64) {
        self.tilde_unlabeled[slot] = value;
    }

    /// Writes `triple_id<TAB>w<TAB>w_tilde<TAB>{labeled|unlabeled}` rows.
    /// Labeled ids index the labeled list; unlabeled ids are slot indices
    /// `i·K + k`.
    pub fn write_dump(&self, path: &Path, header: &[String]) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for h in header {
            writeln!(w, "# {h}")?;
        }
        writeln!(w, "# alpha={} beta={} k={}", self.alpha, self.beta, self.k)?;
        for (i, (wv, wt)) in self.w_labeled().iter().zip(&self.tilde_labeled).enumerate() {
            writeln!(w, "{i}\t{wv}\t{wt}\tlabeled")?;
        }
        for (i, (wv, wt)) in self
            .w_unlabeled()
            .iter()
            .zip(&self.tilde_unlabeled)
            .enumerate()
        {
            writeln!(w, "{i}\t{wv}\t{wt}\tunlabeled")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One row of a posterior dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DumpRow {
    pub id: usize,
    pub w: f64,
    pub w_tilde: f64,
    pub labeled: bool,
}

pub fn read_dump(path: &Path) -> Result<Vec<DumpRow>> {
    let text = fs::read_to_string(path)?;
    let source = path.display().to_string();
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            path: source.clone(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(err("expected 4 tab-separated fields"));
        }
        rows.push(DumpRow {
            id: f[0].parse().map_err(|_| err("bad triple id"))?,
            w: f[1].parse().map_err(|_| err("bad w"))?,
            w_tilde: f[2].parse().map_err(|_| err("bad w_tilde"))?,
            labeled: match f[3] {
                "labeled" => true,
                "unlabeled" => false,
                _ => return Err(err("kind must be labeled or unlabeled")),
            },
        });
    }
    Ok(rows)
}
