//! Posterior-aware attention encoder and the two score heads.
//!
//! Each entity aggregates messages from its highest-posterior incident facts:
//!
//! ```text
//! q(e, k)  = a · [h_e ‖ h_k ‖ h_r]
//! γ(e, k)  = softmax_k q(e, k)                 over N_e
//! h'_e     = h_e + tanh( Σ_k γ(e, k) · h_k M )
//! ```
//!
//! Triples are scored by two independent one-hidden-layer MLPs over
//! `[h_head ‖ h_rel ‖ h_tail]`: `ψ1` (positive class) and `ψ0` (negative
//! class). Inverse edges use relation id `r + |R|`, so the relation table has
//! `2 |R|` rows.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_TOP_M: usize = 32;

/// Neighbor candidate: posterior, triple index, inverse flag, neighbor, relation.
type Candidate = (f64, usize, bool, usize, usize);

/// Per-entity neighbor lists in compressed row form.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    relations: Vec<usize>,
    /// Index of the labeled triple each entry came from.
    sources: Vec<usize>,
    top_m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub entity: usize,
    /// Relation id; inverse direction is `r + |R|`.
    pub relation: usize,
    pub source: usize,
}

impl NeighborSet {
    /// Entities with no entries.
    pub fn empty(num_entities: usize, top_m: usize) -> Self {
        Self {
            offsets: vec![0; num_entities + 1],
            neighbors: Vec::new(),
            relations: Vec::new(),
            sources: Vec::new(),
            top_m,
        }
    }

    /// For every entity, its incident facts (as head: `(tail, r)`, as tail:
    /// `(head, r + |R|)`) sorted by posterior descending, ties by triple index
    /// then forward-before-inverse, truncated to `top_m`.
    pub fn build(graph: &KnowledgeGraph, posterior: &[f64], top_m: usize) -> Result<Self> {
        if posterior.len() != graph.len() {
            return Err(Error::ShapeMismatch {
                op: "build_neighbor_sets",
                shapes: vec![vec![graph.len()], vec![posterior.len()]],
            });
        }
        let n_ent = graph.num_entities();
        let n_rel = graph.num_relations();
        let mut lists: Vec<Vec<Candidate>> = vec![Vec::new(); n_ent];
        for (i, t) in graph.triples().iter().enumerate() {
            lists[t.head].push((posterior[i], i, false, t.tail, t.relation));
            lists[t.tail].push((posterior[i], i, true, t.head, t.relation + n_rel));
        }
        let mut set = Self::empty(n_ent, top_m);
        for (e, list) in lists.iter_mut().enumerate() {
            list.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            for &(_, src, _, nbr, rel) in list.iter().take(top_m) {
                set.neighbors.push(nbr);
                set.relations.push(rel);
                set.sources.push(src);
            }
            set.offsets[e + 1] = set.neighbors.len();
        }
        Ok(set)
    }

    /// Rebuilds from explicit per-entity lists (checkpoint loading).
    pub fn from_lists(lists: &[Vec<Neighbor>], top_m: usize) -> Self {
        let mut set = Self::empty(lists.len(), top_m);
        for (e, list) in lists.iter().enumerate() {
            for n in list {
                set.neighbors.push(n.entity);
                set.relations.push(n.relation);
                set.sources.push(n.source);
            }
            set.offsets[e + 1] = set.neighbors.len();
        }
        set
    }

    pub fn num_entities(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn top_m(&self) -> usize {
        self.top_m
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn of(&self, e: usize) -> impl Iterator<Item = Neighbor> + '_ {
        (self.offsets[e]..self.offsets[e + 1]).map(move |i| Neighbor {
            entity: self.neighbors[i],
            relation: self.relations[i],
            source: self.sources[i],
        })
    }

    pub fn degree(&self, e: usize) -> usize {
        self.offsets[e + 1] - self.offsets[e]
    }

    /// Center entity of every edge, in edge order.
    pub fn centers(&self) -> Vec<usize> {
        let mut c = Vec::with_capacity(self.num_edges());
        for e in 0..self.num_entities() {
            c.extend(std::iter::repeat_n(e, self.degree(e)));
        }
        c
    }

    pub fn neighbor_ids(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn relation_ids(&self) -> &[usize] {
        &self.relations
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub num_entities: usize,
    /// Base relations; the relation table holds twice as many rows.
    pub num_relations: usize,
    pub dim: usize,
    pub layers: usize,
}

/// One score head: `out_w · tanh(W x + b) + out_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `[3d, d]`
    pub hidden_w: Tensor,
    /// `[d]`
    pub hidden_b: Tensor,
    /// `[d, 1]`
    pub out_w: Tensor,
    /// `[1]`
    pub out_b: Tensor,
}

impl HeadParams {
    fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self {
            hidden_w: Tensor::uniform_init(&[3 * dim, dim], rng),
            hidden_b: Tensor::uniform_init(&[dim], rng),
            out_w: Tensor::uniform_init(&[dim, 1], rng),
            out_b: Tensor::uniform_init(&[1], rng),
        }
    }

    fn zeros(dim: usize) -> Self {
        Self {
            hidden_w: Tensor::zeros(&[3 * dim, dim]),
            hidden_b: Tensor::zeros(&[dim]),
            out_w: Tensor::zeros(&[dim, 1]),
            out_b: Tensor::zeros(&[1]),
        }
    }
}

/// Trainable encoder and head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    /// `[|E|, d]`
    pub entity: Tensor,
    /// `[2|R|, d]`
    pub relation: Tensor,
    /// `[3d, 1]`
    pub attention: Tensor,
    /// `[d, d]`, shared across layers.
    pub transform: Tensor,
    pub positive: HeadParams,
    pub negative: HeadParams,
}

pub const PARAM_NAMES: [&str; 12] = [
    "entity",
    "relation",
    "attention",
    "transform",
    "positive.hidden_w",
    "positive.hidden_b",
    "positive.out_w",
    "positive.out_b",
    "negative.hidden_w",
    "negative.hidden_b",
    "negative.out_w",
    "negative.out_b",
];

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Self {
        let d = shape.dim;
        Self {
            shape,
            entity: Tensor::uniform_init(&[shape.num_entities, d], rng),
            relation: Tensor::uniform_init(&[2 * shape.num_relations, d], rng),
            attention: Tensor::uniform_init(&[3 * d, 1], rng),
            transform: Tensor::uniform_init(&[d, d], rng),
            positive: HeadParams::init(d, rng),
            negative: HeadParams::init(d, rng),
        }
    }

    pub fn zeros(shape: ModelShape) -> Self {
        let d = shape.dim;
        Self {
            shape,
            entity: Tensor::zeros(&[shape.num_entities, d]),
            relation: Tensor::zeros(&[2 * shape.num_relations, d]),
            attention: Tensor::zeros(&[3 * d, 1]),
            transform: Tensor::zeros(&[d, d]),
            positive: HeadParams::zeros(d),
            negative: HeadParams::zeros(d),
        }
    }

    /// Tensors in [`PARAM_NAMES`] order.
    pub fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.entity,
            &self.relation,
            &self.attention,
            &self.transform,
            &self.positive.hidden_w,
            &self.positive.hidden_b,
            &self.positive.out_w,
            &self.positive.out_b,
            &self.negative.hidden_w,
            &self.negative.hidden_b,
            &self.negative.out_w,
            &self.negative.out_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.entity,
            &mut self.relation,
            &mut self.attention,
            &mut self.transform,
            &mut self.positive.hidden_w,
            &mut self.positive.hidden_b,
            &mut self.positive.out_w,
            &mut self.positive.out_b,
            &mut self.negative.hidden_w,
            &mut self.negative.hidden_b,
            &mut self.negative.out_w,
            &mut self.negative.out_b,
        ]
    }

    /// Expected shape of each tensor, in [`PARAM_NAMES`] order.
    pub fn expected_shapes(shape: &ModelShape) -> [Vec<usize>; 12] {
        let d = shape.dim;
        let head = [vec![3 * d, d], vec![d], vec![d, 1], vec![1]];
        [
            vec![shape.num_entities, d],
            vec![2 * shape.num_relations, d],
            vec![3 * d, 1],
            vec![d, d],
            head[0].clone(),
            head[1].clone(),
            head[2].clone(),
            head[3].clone(),
            head[0].clone(),
            head[1].clone(),
            head[2].clone(),
            head[3].clone(),
        ]
    }

    /// Records every tensor as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Result<ModelVars> {
        let mut vars = Vec::with_capacity(12);
        for t in self.tensors() {
            let mut t = t.clone();
            t.requires_grad = requires_grad;
            vars.push(tape.leaf(t)?);
        }
        let head = |o: usize| HeadVars {
            hidden_w: vars[o],
            hidden_b: vars[o + 1],
            out_w: vars[o + 2],
            out_b: vars[o + 3],
        };
        Ok(ModelVars {
            entity: vars[0],
            relation: vars[1],
            attention: vars[2],
            transform: vars[3],
            positive: head(4),
            negative: head(8),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub hidden_w: Var,
    pub hidden_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub entity: Var,
    pub relation: Var,
    pub attention: Var,
    pub transform: Var,
    pub positive: HeadVars,
    pub negative: HeadVars,
}

impl ModelVars {
    /// Leaves in [`PARAM_NAMES`] order.
    pub fn all(&self) -> [Var; 12] {
        [
            self.entity,
            self.relation,
            self.attention,
            self.transform,
            self.positive.hidden_w,
            self.positive.hidden_b,
            self.positive.out_w,
            self.positive.out_b,
            self.negative.hidden_w,
            self.negative.hidden_b,
            self.negative.out_w,
            self.negative.out_b,
        ]
    }
}

/// Train mode applies dropout with the given generator; eval mode never does.
pub enum Mode<'a, R: Rng + ?Sized> {
    Train(&'a mut R),
    Eval,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[|E|, d]` final entity representations.
    pub repr: Var,
    /// Attention weights per layer, in edge order (`[num_edges]` each).
    pub attention: Vec<Var>,
}

/// Runs `layers` rounds of attentive aggregation over `neighbors`.
pub fn encode_entities<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &ModelVars,
    layers: usize,
    neighbors: &NeighborSet,
    dropout_rate: f64,
    mut mode: Mode<'_, R>,
) -> Result<Encoded> {
    if layers == 0 {
        return Err(Error::InvalidArgument(
            "encoder needs at least one layer".into(),
        ));
    }
    let n_ent = neighbors.num_entities();
    if tape.shape(vars.entity)[0] != n_ent {
        return Err(Error::ShapeMismatch {
            op: "encode_entities",
            shapes: vec![tape.shape(vars.entity).to_vec(), vec![n_ent]],
        });
    }
    let mut h = vars.entity;
    let mut attention = Vec::with_capacity(layers);
    if neighbors.num_edges() == 0 {
        return Ok(Encoded { repr: h, attention });
    }
    let centers = neighbors.centers();
    let nbrs = neighbors.neighbor_ids();
    let rels = neighbors.relation_ids();
    let n_edges = nbrs.len();
    for _ in 0..layers {
        let hc = tape.gather(h, &centers)?;
        let hn = tape.gather(h, nbrs)?;
        let hr = tape.gather(vars.relation, rels)?;
        let cat = tape.concat(&[hc, hn, hr])?;
        let q = tape.matmul(cat, vars.attention)?;
        let q = tape.reshape(q, &[n_edges])?;
        let gamma = tape.segment_softmax(q, neighbors.offsets())?;
        attention.push(gamma);

        let hm = tape.matmul(h, vars.transform)?;
        let msg = tape.gather(hm, nbrs)?;
        let weighted = tape.mul_rows(msg, gamma)?;
        let agg = tape.scatter_add(weighted, &centers, n_ent)?;
        let act = tape.tanh(agg)?;
        let act = match &mut mode {
            Mode::Train(rng) => tape.dropout(act, dropout_rate, Some(&mut **rng))?,
            Mode::Eval => act,
        };
        h = tape.add(h, act)?;
    }
    Ok(Encoded { repr: h, attention })
}

fn head_forward(tape: &mut Tape, head: &HeadVars, x: Var, n: usize) -> Result<Var> {
    let hidden = tape.matmul(x, head.hidden_w)?;
    let hidden = tape.add_row(hidden, head.hidden_b)?;
    let hidden = tape.tanh(hidden)?;
    let out = tape.matmul(hidden, head.out_w)?;
    let out = tape.add_row(out, head.out_b)?;
    tape.reshape(out, &[n])
}

/// `(ψ1, ψ0)` for each triple, as two `[n]` vectors.
pub fn score_triples(
    tape: &mut Tape,
    vars: &ModelVars,
    repr: Var,
    triples: &[Triple],
) -> Result<(Var, Var)> {
    let heads: Vec<usize> = triples.iter().map(|t| t.head).collect();
    let rels: Vec<usize> = triples.iter().map(|t| t.relation).collect();
    let tails: Vec<usize> = triples.iter().map(|t| t.tail).collect();
    let hh = tape.gather(repr, &heads)?;
    let hr = tape.gather(vars.relation, &rels)?;
    let ht = tape.gather(repr, &tails)?;
    let x = tape.concat(&[hh, hr, ht])?;
    let psi1 = head_forward(tape, &vars.positive, x, triples.len())?;
    let psi0 = head_forward(tape, &vars.negative, x, triples.len())?;
    Ok((psi1, psi0))
}

/// Eval-mode entity representations.
pub fn entity_representations(params: &ModelParams, neighbors: &NeighborSet) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false)?;
    let enc = encode_entities::<rand_chacha::ChaCha8Rng>(
        &mut tape,
        &vars,
        params.shape.layers,
        neighbors,
        0.0,
        Mode::Eval,
    )?;
    Ok(tape.value(enc.repr).clone())
}

fn mlp_direct(head: &HeadParams, x: &[f64]) -> f64 {
    let d = head.hidden_b.len();
    let w = head.hidden_w.data();
    let mut out = head.out_b.item();
    for j in 0..d {
        let mut z = head.hidden_b.data()[j];
        for (i, xi) in x.iter().enumerate() {
            z += xi * w[i * d + j];
        }
        out += head.out_w.data()[j] * z.tanh();
    }
    out
}

/// `(ψ1, ψ0)` of one triple from precomputed entity representations.
pub fn score(
    t: &Triple,
    entity_repr: &Tensor,
    relation: &Tensor,
    positive: &HeadParams,
    negative: &HeadParams,
) -> (f64, f64) {
    let mut x = Vec::with_capacity(3 * entity_repr.cols());
    x.extend_from_slice(entity_repr.row(t.head));
    x.extend_from_slice(relation.row(t.relation));
    x.extend_from_slice(entity_repr.row(t.tail));
    (mlp_direct(positive, &x), mlp_direct(negative, &x))
}

/// Score head with its first layer split into head, relation and tail blocks
/// so candidate scoring costs `O(d)` per triple.
#[derive(Debug, Clone)]
struct ProjectedHead {
    head_part: Vec<f64>,
    rel_part: Vec<f64>,
    tail_part: Vec<f64>,
    bias: Vec<f64>,
    out_w: Vec<f64>,
    out_b: f64,
}

impl ProjectedHead {
    fn new(head: &HeadParams, repr: &Tensor, relation: &Tensor) -> Self {
        let d = head.hidden_b.len();
        let w = head.hidden_w.data();
        let block = |k: usize| &w[k * d * d..(k + 1) * d * d];
        let proj = |m: &Tensor, b: &[f64]| crate::tensor::matmul_raw(m.data(), b, m.rows(), d, d);
        Self {
            head_part: proj(repr, block(0)),
            rel_part: proj(relation, block(1)),
            tail_part: proj(repr, block(2)),
            bias: head.hidden_b.data().to_vec(),
            out_w: head.out_w.data().to_vec(),
            out_b: head.out_b.item(),
        }
    }

    #[inline]
    fn eval(&self, d: usize, h: usize, r: usize, t: usize) -> f64 {
        let hp = &self.head_part[h * d..(h + 1) * d];
        let rp = &self.rel_part[r * d..(r + 1) * d];
        let tp = &self.tail_part[t * d..(t + 1) * d];
        let mut s = self.out_b;
        for j in 0..d {
            s += self.out_w[j] * (hp[j] + rp[j] + tp[j] + self.bias[j]).tanh();
        }
        s
    }
}

/// Which quantity candidate ranking sorts by.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RankScore {
    /// Positive-collection score `ψ1`.
    #[default]
    Positive,
    /// Labeled-triple posterior computed from `ψ1`, `ψ0` and the prior `β`.
    Posterior { beta: f64 },
}

/// Frozen, eval-mode view of a model for fast scoring.
#[derive(Debug, Clone)]
pub struct Scorer {
    dim: usize,
    num_entities: usize,
    positive: ProjectedHead,
    negative: ProjectedHead,
}

impl Scorer {
    pub fn new(params: &ModelParams, neighbors: &NeighborSet) -> Result<Self> {
        let repr = entity_representations(params, neighbors)?;
        Ok(Self::from_representations(params, &repr))
    }

    pub fn from_representations(params: &ModelParams, repr: &Tensor) -> Self {
        Self {
            dim: params.shape.dim,
            num_entities: params.shape.num_entities,
            positive: ProjectedHead::new(&params.positive, repr, &params.relation),
            negative: ProjectedHead::new(&params.negative, repr, &params.relation),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn score(&self, t: &Triple) -> (f64, f64) {
        (
            self.positive.eval(self.dim, t.head, t.relation, t.tail),
            self.negative.eval(self.dim, t.head, t.relation, t.tail),
        )
    }

    pub fn psi1(&self, t: &Triple) -> f64 {
        self.positive.eval(self.dim, t.head, t.relation, t.tail)
    }

    pub fn rank_value(&self, t: &Triple, by: RankScore) -> f64 {
        match by {
            RankScore::Positive => self.psi1(t),
            RankScore::Posterior { beta } => {
                let (p1, p0) = self.score(t);
                crate::loss::posterior_labeled(
                    crate::loss::collection_prob_unchecked(p1),
                    crate::loss::collection_prob_unchecked(p0),
                    beta,
                )
            }
        }
    }

    /// Scores every entity at the masked position of `t` into `out`.
    pub fn score_candidates(
        &self,
        t: &Triple,
        replace_tail: bool,
        by: RankScore,
        out: &mut Vec<f64>,
    ) {
        out.clear();
        out.extend((0..self.num_entities).map(|e| {
            let c = if replace_tail {
                Triple::new(t.head, t.relation, e)
            } else {
                Triple::new(e, t.relation, t.tail)
            };
            self.rank_value(&c, by)
        }));
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::kg::Vocab;

    fn graph(n_ent: usize, n_rel: usize, triples: &[(usize, usize, usize)]) -> KnowledgeGraph {
        KnowledgeGraph::new(
            Arc::new(Vocab::synthetic(n_ent, n_rel)),
            triples
                .iter()
                .map(|&(h, r, t)| Triple::new(h, r, t))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn keeps_highest_posterior_fact() {
        let g = graph(3, 1, &[(0, 0, 1), (0, 0, 2)]);
        let n = NeighborSet::build(&g, &[0.9, 0.1], 1).unwrap();
        let kept: Vec<Neighbor> = n.of(0).collect();
        assert_eq!(kept.len(), 1);
        assert_eq!((kept[0].entity, kept[0].source), (1, 0));
    }

    #[test]
    fn uniform_posteriors_keep_everything_when_uncapped() {
        let g = graph(4, 2, &[(0, 0, 1), (0, 1, 2), (3, 0, 0)]);
        let n = NeighborSet::build(&g, &[0.5; 3], 10).unwrap();
        assert_eq!(n.degree(0), 3);
        // Ties resolve by triple index.
        let order: Vec<usize> = n.of(0).map(|x| x.source).collect();
        assert_eq!(order, vec![0, 1, 2]);
        // Inverse edge from tail 0 of triple 2 carries r + |R|.
        assert_eq!(n.of(0).last().unwrap().relation, 2);
    }

    #[test]
    fn lowering_one_posterior_drops_exactly_that_entry() {
        let g = graph(5, 1, &[(0, 0, 1), (0, 0, 2), (0, 0, 3), (4, 0, 0)]);
        let mut post = vec![0.8, 0.7, 0.6, 0.9];
        post[1] = 0.01;
        let n = NeighborSet::build(&g, &post, 3).unwrap();
        let sources: Vec<usize> = n.of(0).map(|x| x.source).collect();
        assert_eq!(sources, vec![3, 0, 2]);
    }

    #[test]
    fn posterior_length_must_match() {
        let g = graph(2, 1, &[(0, 0, 1)]);
        assert!(NeighborSet::build(&g, &[], 4).is_err());
    }

    fn small_model(n_ent: usize, n_rel: usize, dim: usize, seed: u64) -> ModelParams {
        let shape = ModelShape {
            num_entities: n_ent,
            num_relations: n_rel,
            dim,
            layers: 1,
        };
        ModelParams::init(shape, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn empty_neighborhood_is_residual_pass_through() {
        let g = graph(4, 1, &[(0, 0, 1)]);
        let n = NeighborSet::build(&g, &[1.0], 8).unwrap();
        let p = small_model(4, 1, 6, 2);
        let repr = entity_representations(&p, &n).unwrap();
        for e in [2, 3] {
            assert_eq!(repr.row(e), p.entity.row(e));
        }
        assert_ne!(repr.row(0), p.entity.row(0));
    }

    #[test]
    fn single_neighbor_gets_full_attention() {
        let g = graph(3, 1, &[(0, 0, 1)]);
        let n = NeighborSet::build(&g, &[1.0], 8).unwrap();
        let p = small_model(3, 1, 4, 3);
        let mut tape = Tape::new();
        let v = p.bind(&mut tape, false).unwrap();
        let enc = encode_entities::<ChaCha8Rng>(&mut tape, &v, 1, &n, 0.0, Mode::Eval).unwrap();
        assert_eq!(tape.value(enc.attention[0]).data(), &[1.0, 1.0]);
    }

    #[test]
    fn zero_model_scores_zero() {
        let shape = ModelShape {
            num_entities: 3,
            num_relations: 1,
            dim: 4,
            layers: 1,
        };
        let p = ModelParams::zeros(shape);
        let g = graph(3, 1, &[(0, 0, 1), (1, 0, 2)]);
        let n = NeighborSet::build(&g, &[1.0, 1.0], 8).unwrap();
        let s = Scorer::new(&p, &n).unwrap();
        assert_eq!(s.score(&Triple::new(0, 0, 2)), (0.0, 0.0));
    }

    #[test]
    fn projected_scorer_matches_direct_mlp() {
        let g = graph(
            6,
            2,
            &[(0, 0, 1), (1, 1, 2), (3, 0, 4), (5, 1, 0), (2, 0, 3)],
        );
        let n = NeighborSet::build(&g, &[0.5; 5], 8).unwrap();
        let p = small_model(6, 2, 5, 4);
        let repr = entity_representations(&p, &n).unwrap();
        let s = Scorer::from_representations(&p, &repr);
        for h in 0..6 {
            for r in 0..2 {
                for t in 0..6 {
                    let tr = Triple::new(h, r, t);
                    let (a1, a0) = s.score(&tr);
                    let (b1, b0) = score(&tr, &repr, &p.relation, &p.positive, &p.negative);
                    assert!((a1 - b1).abs() < 1e-12 && (a0 - b0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn score_ignores_unrelated_entities() {
        let p = small_model(5, 1, 4, 8);
        let g = graph(5, 1, &[(0, 0, 1)]);
        let n = NeighborSet::build(&g, &[1.0], 8).unwrap();
        let repr = entity_representations(&p, &n).unwrap();
        let t = Triple::new(0, 0, 1);
        let before = score(&t, &repr, &p.relation, &p.positive, &p.negative);
        // Swap rows 3 and 4.
        let mut data = repr.data().to_vec();
        let d = 4;
        for j in 0..d {
            data.swap(3 * d + j, 4 * d + j);
        }
        let swapped = Tensor::matrix(5, d, data).unwrap();
        assert_eq!(
            score(&t, &swapped, &p.relation, &p.positive, &p.negative),
            before
        );
    }

    #[test]
    fn heads_are_independent() {
        let mut p = small_model(4, 1, 4, 9);
        let repr = p.entity.clone();
        let t = Triple::new(0, 0, 3);
        let (psi1, _) = score(&t, &repr, &p.relation, &p.positive, &p.negative);
        for v in p.negative.hidden_w.data_mut() {
            *v += 0.37;
        }
        p.negative.out_b.data_mut()[0] = 5.0;
        let (psi1_after, _) = score(&t, &repr, &p.relation, &p.positive, &p.negative);
        assert_eq!(psi1, psi1_after);
    }
}
