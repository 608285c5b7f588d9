#![allow(dead_code)]

use std::collections::HashSet;
use std::sync::Arc;

use npukg::encoder::{encode_entities, score_triples, Mode, ModelParams, ModelShape, NeighborSet};
use npukg::kg::{perturb, split, FlipLog, KnowledgeGraph, Triple, Vocab};
use npukg::loss::{
    kl_term, reg_term, total_loss, triple_loss, BatchScores, BatchWeights, LossParts, LossWeights,
    PairwiseOrder,
};
use npukg::tensor::{Tape, Tensor};
use npukg::train::TrainConfig;
use npukg::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BLOCK: usize = 5;
pub const BLOCKS: usize = 10;
pub const RELATIONS: usize = 3;

/// Block-structured ground truth over 50 entities and 3 relations.
///
/// Relation `r` links every entity of block `b` to every entity of block
/// `(b + r + 1) mod 10`, for the blocks whose parity matches `r`.
pub fn planted_triples() -> Vec<Triple> {
    let mut out = Vec::new();
    for h in 0..BLOCK * BLOCKS {
        let b = h / BLOCK;
        for r in 0..RELATIONS {
            if b % 2 != r % 2 {
                continue;
            }
            let tb = (b + r + 1) % BLOCKS;
            out.extend((0..BLOCK).map(|j| Triple::new(h, r, tb * BLOCK + j)));
        }
    }
    out
}

pub struct Synthetic {
    pub planted: KnowledgeGraph,
    pub train: KnowledgeGraph,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub filter: HashSet<Triple>,
    pub flips: FlipLog,
}

/// 10% of the planted triples are held out as clean test facts; the rest is
/// perturbed at rate 0.3 (90% removals) and split 70/30 into train/valid.
pub fn synthetic(seed: u64) -> Synthetic {
    let vocab = Arc::new(Vocab::synthetic(BLOCK * BLOCKS, RELATIONS));
    let planted = KnowledgeGraph::new(vocab, planted_triples()).unwrap();
    let (rest, test) = split(&planted, 0.9, seed).unwrap();
    let (noisy, flips) = perturb(&rest, 0.3, 0.9, seed).unwrap();
    let (train, valid) = split(&noisy, 0.7, seed).unwrap();
    let filter = train
        .triples()
        .iter()
        .chain(valid.triples())
        .chain(test.triples())
        .copied()
        .collect();
    Synthetic {
        planted,
        valid: valid.triples().to_vec(),
        test: test.triples().to_vec(),
        train,
        filter,
        flips,
    }
}

/// Library defaults with the small-scale overrides used on the synthetic KG.
pub fn fixture_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(0.1, 0.3);
    cfg.dim = 32;
    cfg.k = 10;
    cfg.max_epochs = 60;
    cfg.warmup_epochs = 20;
    cfg.seed = seed;
    cfg
}

pub struct GradFixture {
    pub params: ModelParams,
    pub neighbors: NeighborSet,
    pub labeled: Vec<Triple>,
    pub unlabeled: Vec<Triple>,
    pub w_logits: Vec<f64>,
    pub tilde: Vec<f64>,
    pub k: usize,
}

/// 5 entities, 2 relations, 3 labeled triples with 2 unlabeled partners each.
pub fn grad_fixture(seed: u64) -> GradFixture {
    let vocab = Arc::new(Vocab::synthetic(5, 2));
    let labeled = vec![
        Triple::new(0, 0, 1),
        Triple::new(1, 1, 2),
        Triple::new(3, 0, 4),
    ];
    let graph = KnowledgeGraph::new(vocab, labeled.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ModelShape {
        num_entities: 5,
        num_relations: 2,
        dim: 4,
        layers: 1,
    };
    let params = ModelParams::init(shape, &mut rng);
    let neighbors = NeighborSet::build(&graph, &[0.9, 0.4, 0.7], 8).unwrap();
    let unlabeled = vec![
        Triple::new(0, 0, 2),
        Triple::new(4, 0, 1),
        Triple::new(1, 1, 0),
        Triple::new(1, 1, 3),
        Triple::new(3, 0, 0),
        Triple::new(2, 0, 4),
    ];
    let w_logits = (0..9).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let tilde = (0..9).map(|_| rng.gen_range(0.05..0.95)).collect();
    GradFixture {
        params,
        neighbors,
        labeled,
        unlabeled,
        w_logits,
        tilde,
        k: 2,
    }
}

/// Total loss on a fresh tape, with the gradient of every model tensor
/// followed by the posterior logits.
pub fn loss_and_grads(
    f: &GradFixture,
    params: &ModelParams,
    w_logits: &[f64],
    order: PairwiseOrder,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true)?;
    let enc = encode_entities::<ChaCha8Rng>(&mut tape, &vars, 1, &f.neighbors, 0.0, Mode::Eval)?;
    let (p1l, p0l) = score_triples(&mut tape, &vars, enc.repr, &f.labeled)?;
    let (p1u, p0u) = score_triples(&mut tape, &vars, enc.repr, &f.unlabeled)?;
    let n_l = f.labeled.len();
    let wl = tape.leaf(Tensor::vector(w_logits[..n_l].to_vec()).with_grad())?;
    let wu = tape.leaf(Tensor::vector(w_logits[n_l..].to_vec()).with_grad())?;
    let w = BatchWeights {
        labeled: tape.sigmoid(wl)?,
        unlabeled: tape.sigmoid(wu)?,
    };
    let scores = BatchScores {
        psi1_labeled: p1l,
        psi0_labeled: p0l,
        psi1_unlabeled: p1u,
        psi0_unlabeled: p0u,
    };
    let parts = LossParts {
        triple: triple_loss(&mut tape, &scores, &w, f.k, order)?,
        kl: kl_term(&mut tape, &w, &f.tilde[..n_l], &f.tilde[n_l..])?,
        reg: reg_term(&mut tape, &w)?,
    };
    let (total, values) = total_loss(&mut tape, &parts, LossWeights { kl: 0.7, reg: 1.3 })?;
    let grads = tape.backward(total)?;
    let mut out: Vec<Vec<f64>> = vars
        .all()
        .iter()
        .map(|&v| grads.get(v).unwrap().to_vec())
        .collect();
    let mut wg = grads.get(wl).unwrap().to_vec();
    wg.extend_from_slice(grads.get(wu).unwrap());
    out.push(wg);
    Ok((values.total, out))
}

/// Largest relative error between analytic and central-difference gradients
/// over every scalar parameter. Near-zero pairs (both below 1e-6, within
/// 1e-9 of each other) count as exact.
pub fn max_gradient_error(order: PairwiseOrder, seed: u64) -> f64 {
    let f = grad_fixture(seed);
    let (_, analytic) = loss_and_grads(&f, &f.params, &f.w_logits, order).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (slot, grad) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let at = |delta: f64| {
                let mut p = f.params.clone();
                let mut w = f.w_logits.clone();
                if slot < 12 {
                    p.tensors_mut()[slot].data_mut()[i] += delta;
                } else {
                    w[i] += delta;
                }
                loss_and_grads(&f, &p, &w, order).unwrap().0
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            if scale < 1e-6 && diff < 1e-9 {
                continue;
            }
            worst = worst.max(diff / scale);
        }
    }
    worst
}
