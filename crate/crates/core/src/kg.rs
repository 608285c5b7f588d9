//! Triple storage, vocabularies, controlled perturbation, splitting and
//! corruption sampling.
//!
//! Everything downstream of [`load_triples`] works on integer ids; names only
//! reappear when files are written.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

/// Bijective name/id maps for entities and relations. Ids are dense and
/// assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    entities: Vec<String>,
    entity_ids: HashMap<String, usize>,
    relations: Vec<String>,
    relation_ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from ordered name lists; duplicates are rejected.
    pub fn from_names(entities: Vec<String>, relations: Vec<String>) -> Result<Self> {
        let mut v = Self::new();
        for e in entities {
            if v.entity_ids.contains_key(&e) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate entity name {e:?}"
                )));
            }
            v.intern_entity(&e);
        }
        for r in relations {
            if v.relation_ids.contains_key(&r) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate relation name {r:?}"
                )));
            }
            v.intern_relation(&r);
        }
        Ok(v)
    }

    /// Vocabulary with generated names `e0..`, `r0..`, for synthetic graphs.
    pub fn synthetic(num_entities: usize, num_relations: usize) -> Self {
        Self::from_names(
            (0..num_entities).map(|i| format!("e{i}")).collect(),
            (0..num_relations).map(|i| format!("r{i}")).collect(),
        )
        .expect("generated names are unique")
    }

    pub fn intern_entity(&mut self, name: &str) -> usize {
        if let Some(&id) = self.entity_ids.get(name) {
            return id;
        }
        let id = self.entities.len();
        self.entities.push(name.to_string());
        self.entity_ids.insert(name.to_string(), id);
        id
    }

    pub fn intern_relation(&mut self, name: &str) -> usize {
        if let Some(&id) = self.relation_ids.get(name) {
            return id;
        }
        let id = self.relations.len();
        self.relations.push(name.to_string());
        self.relation_ids.insert(name.to_string(), id);
        id
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> &str {
        &self.entities[id]
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relations[id]
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        t.head < self.num_entities()
            && t.tail < self.num_entities()
            && t.relation < self.num_relations()
    }

    pub fn format_triple(&self, t: &Triple) -> String {
        format!(
            "{}\t{}\t{}",
            self.entity_name(t.head),
            self.relation_name(t.relation),
            self.entity_name(t.tail)
        )
    }
}

/// A labeled triple set over a shared vocabulary: an ordered list plus a
/// membership index. Immutable once built.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    vocab: Arc<Vocab>,
    triples: Vec<Triple>,
    index: HashSet<Triple>,
}

impl KnowledgeGraph {
    /// Fails on duplicates or ids outside the vocabulary.
    pub fn new(vocab: Arc<Vocab>, triples: Vec<Triple>) -> Result<Self> {
        let mut index = HashSet::with_capacity(triples.len());
        for t in &triples {
            if !vocab.contains(t) {
                return Err(Error::InvalidArgument(format!(
                    "triple {t} outside vocabulary"
                )));
            }
            if !index.insert(*t) {
                return Err(Error::InvalidArgument(format!("duplicate triple {t}")));
            }
        }
        Ok(Self {
            vocab,
            triples,
            index,
        })
    }

    /// Keeps the first occurrence of each triple; returns the graph and the
    /// number of dropped duplicates.
    pub fn dedup(vocab: Arc<Vocab>, triples: Vec<Triple>) -> Result<(Self, usize)> {
        let mut seen = HashSet::with_capacity(triples.len());
        let before = triples.len();
        let unique: Vec<Triple> = triples.into_iter().filter(|t| seen.insert(*t)).collect();
        let dropped = before - unique.len();
        Ok((Self::new(vocab, unique)?, dropped))
    }

    /// New graph over the same vocabulary.
    pub fn with_triples(&self, triples: Vec<Triple>) -> Result<Self> {
        Self::new(self.vocab.clone(), triples)
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn membership(&self) -> &HashSet<Triple> {
        &self.index
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.index.contains(t)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.num_relations()
    }

    /// Set equality of the stored triples.
    pub fn same_triples(&self, other: &KnowledgeGraph) -> bool {
        self.index == other.index
    }
}

/// Result of reading a triple file.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub graph: KnowledgeGraph,
    pub duplicates: usize,
    /// Lines naming an entity or relation unknown to a fixed vocabulary.
    pub unknown: usize,
}

type RawTriple = (usize, String, String, String);

fn parse_lines(text: &str, source: &str) -> Result<Vec<RawTriple>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: source.to_string(),
                line: i + 1,
                msg: format!("expected head<TAB>relation<TAB>tail, got {line:?}"),
            });
        }
        out.push((
            i + 1,
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
        ));
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("{source} contains no triples")));
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

/// Parses TSV text into a graph with a fresh vocabulary.
pub fn parse_triples(text: &str, source: &str) -> Result<Loaded> {
    let mut loaded = parse_many(&[(text, source)])?;
    Ok(loaded.remove(0))
}

/// Parses several TSV texts into graphs sharing one vocabulary, assigned in
/// first-appearance order across the inputs.
pub fn parse_many(inputs: &[(&str, &str)]) -> Result<Vec<Loaded>> {
    let mut vocab = Vocab::new();
    let mut encoded = Vec::with_capacity(inputs.len());
    for (text, source) in inputs {
        let raw = parse_lines(text, source)?;
        let triples: Vec<Triple> = raw
            .iter()
            .map(|(_, h, r, t)| {
                let head = vocab.intern_entity(h);
                let relation = vocab.intern_relation(r);
                let tail = vocab.intern_entity(t);
                Triple {
                    head,
                    relation,
                    tail,
                }
            })
            .collect();
        encoded.push(triples);
    }
    let vocab = Arc::new(vocab);
    encoded
        .into_iter()
        .map(|triples| {
            let (graph, duplicates) = KnowledgeGraph::dedup(vocab.clone(), triples)?;
            Ok(Loaded {
                graph,
                duplicates,
                unknown: 0,
            })
        })
        .collect()
}

/// Parses TSV text against a fixed vocabulary, dropping (and counting) lines
/// with unknown names.
pub fn parse_with_vocab(text: &str, source: &str, vocab: &Arc<Vocab>) -> Result<Loaded> {
    let raw = parse_lines(text, source)?;
    let mut unknown = 0;
    let mut triples = Vec::with_capacity(raw.len());
    for (_, h, r, t) in &raw {
        match (vocab.entity_id(h), vocab.relation_id(r), vocab.entity_id(t)) {
            (Some(head), Some(relation), Some(tail)) => triples.push(Triple {
                head,
                relation,
                tail,
            }),
            _ => unknown += 1,
        }
    }
    let (graph, duplicates) = KnowledgeGraph::dedup(vocab.clone(), triples)?;
    Ok(Loaded {
        graph,
        duplicates,
        unknown,
    })
}

pub fn load_triples(path: &Path) -> Result<Loaded> {
    parse_triples(&read_text(path)?, &path.display().to_string())
}

pub fn load_many(paths: &[&Path]) -> Result<Vec<Loaded>> {
    let texts: Vec<String> = paths.iter().map(|p| read_text(p)).collect::<Result<_>>()?;
    let names: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    let inputs: Vec<(&str, &str)> = texts
        .iter()
        .map(|t| t.as_str())
        .zip(names.iter().map(|n| n.as_str()))
        .collect();
    parse_many(&inputs)
}

pub fn load_with_vocab(path: &Path, vocab: &Arc<Vocab>) -> Result<Loaded> {
    parse_with_vocab(&read_text(path)?, &path.display().to_string(), vocab)
}

/// Writes `head<TAB>relation<TAB>tail` lines, preceded by `# `-prefixed
/// header lines.
pub fn write_triples(
    path: &Path,
    vocab: &Vocab,
    triples: &[Triple],
    header: &[String],
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for h in header {
        writeln!(w, "# {h}")?;
    }
    for t in triples {
        writeln!(w, "{}", vocab.format_triple(t))?;
    }
    w.flush()?;
    Ok(())
}

/// Half-up rounding of a non-negative count.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edit {
    RemovedPositive,
    AddedNegative,
}

impl Edit {
    pub fn as_str(self) -> &'static str {
        match self {
            Edit::RemovedPositive => "removed",
            Edit::AddedNegative => "added",
        }
    }
}

/// Ground-truth record of the edits made by [`perturb`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlipLog {
    pub seed: u64,
    pub ptb_rate: f64,
    pub removal_fraction: f64,
    pub edits: Vec<(Triple, Edit)>,
}

impl FlipLog {
    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn removed(&self) -> impl Iterator<Item = &Triple> {
        self.edits
            .iter()
            .filter(|(_, e)| *e == Edit::RemovedPositive)
            .map(|(t, _)| t)
    }

    pub fn added(&self) -> impl Iterator<Item = &Triple> {
        self.edits
            .iter()
            .filter(|(_, e)| *e == Edit::AddedNegative)
            .map(|(t, _)| t)
    }

    pub fn count(&self, edit: Edit) -> usize {
        self.edits.iter().filter(|(_, e)| *e == edit).count()
    }

    /// Undoes the edits: drops every added triple and re-appends every
    /// removed one.
    pub fn revert(&self, perturbed: &KnowledgeGraph) -> Result<KnowledgeGraph> {
        let added: HashSet<&Triple> = self.added().collect();
        let mut triples: Vec<Triple> = perturbed
            .triples()
            .iter()
            .filter(|t| !added.contains(t))
            .copied()
            .collect();
        triples.extend(self.removed().copied());
        perturbed.with_triples(triples)
    }

    pub fn header_line(&self) -> String {
        format!(
            "seed={} ptb_rate={} removal_fraction={}",
            self.seed, self.ptb_rate, self.removal_fraction
        )
    }

    /// Writes the TSV form: `head<TAB>relation<TAB>tail<TAB>{removed|added}`.
    pub fn write(&self, path: &Path, vocab: &Vocab, extra_header: &[String]) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "# {}", self.header_line())?;
        for h in extra_header {
            writeln!(w, "# {h}")?;
        }
        for (t, e) in &self.edits {
            writeln!(w, "{}\t{}", vocab.format_triple(t), e.as_str())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn parse(text: &str, source: &str, vocab: &Vocab) -> Result<Self> {
        Self::parse_inner(text, source, vocab, false).map(|(log, _)| log)
    }

    /// Like [`FlipLog::parse`], but drops edits naming entities or relations
    /// outside `vocab` and returns how many were dropped.
    pub fn parse_known(text: &str, source: &str, vocab: &Vocab) -> Result<(Self, usize)> {
        Self::parse_inner(text, source, vocab, true)
    }

    fn parse_inner(
        text: &str,
        source: &str,
        vocab: &Vocab,
        skip_unknown: bool,
    ) -> Result<(Self, usize)> {
        let mut skipped = 0;
        let mut log = FlipLog {
            seed: 0,
            ptb_rate: 0.0,
            removal_fraction: 0.0,
            edits: Vec::new(),
        };
        let err = |line: usize, msg: String| Error::Parse {
            path: source.to_string(),
            line,
            msg,
        };
        for (i, line) in text.lines().enumerate() {
            if let Some(comment) = line.strip_prefix('#') {
                for kv in comment.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("seed", v)) => {
                            log.seed = v
                                .parse()
                                .map_err(|_| err(i + 1, format!("bad seed {v:?}")))?
                        }
                        Some(("ptb_rate", v)) => {
                            log.ptb_rate = v
                                .parse()
                                .map_err(|_| err(i + 1, format!("bad ptb_rate {v:?}")))?
                        }
                        Some(("removal_fraction", v)) => {
                            log.removal_fraction = v
                                .parse()
                                .map_err(|_| err(i + 1, format!("bad removal_fraction {v:?}")))?
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err(
                    i + 1,
                    format!("expected 4 tab-separated fields, got {}", f.len()),
                ));
            }
            let edit = match f[3] {
                "removed" => Edit::RemovedPositive,
                "added" => Edit::AddedNegative,
                other => return Err(err(i + 1, format!("unknown edit {other:?}"))),
            };
            let ids = (
                vocab.entity_id(f[0]),
                vocab.relation_id(f[1]),
                vocab.entity_id(f[2]),
            );
            match ids {
                (Some(head), Some(relation), Some(tail)) => log.edits.push((
                    Triple {
                        head,
                        relation,
                        tail,
                    },
                    edit,
                )),
                _ if skip_unknown => skipped += 1,
                _ => {
                    return Err(err(
                        i + 1,
                        format!("unknown name in {:?}", &line[..line.len() - f[3].len() - 1]),
                    ))
                }
            }
        }
        Ok((log, skipped))
    }

    pub fn read(path: &Path, vocab: &Vocab) -> Result<Self> {
        Self::parse(&read_text(path)?, &path.display().to_string(), vocab)
    }

    pub fn read_known(path: &Path, vocab: &Vocab) -> Result<(Self, usize)> {
        Self::parse_known(&read_text(path)?, &path.display().to_string(), vocab)
    }
}

/// Flips `round(ptb_rate * |G|)` links: `round(removal_fraction * n)` existing
/// triples are removed uniformly at random and the remainder are added as
/// uniformly random absent triples (relation drawn from those present in the
/// graph, entities uniform over the vocabulary).
pub fn perturb(
    graph: &KnowledgeGraph,
    ptb_rate: f64,
    removal_fraction: f64,
    seed: u64,
) -> Result<(KnowledgeGraph, FlipLog)> {
    if !(0.0..1.0).contains(&ptb_rate) {
        return Err(Error::InvalidArgument(format!(
            "ptb_rate {ptb_rate} not in [0, 1)"
        )));
    }
    if !(0.0..=1.0).contains(&removal_fraction) {
        return Err(Error::InvalidArgument(format!(
            "removal_fraction {removal_fraction} not in [0, 1]"
        )));
    }
    if graph.is_empty() {
        return Err(Error::Empty("cannot perturb an empty graph".into()));
    }
    let n_mod = round_half_up(ptb_rate * graph.len() as f64);
    let n_remove = round_half_up(removal_fraction * n_mod as f64).min(n_mod);
    let n_add = n_mod - n_remove;

    let mut relations: Vec<usize> = graph.triples().iter().map(|t| t.relation).collect();
    relations.sort_unstable();
    relations.dedup();
    let n_ent = graph.num_entities();
    let space = n_ent * n_ent * relations.len();
    let available = space - graph.len();
    if n_add > available {
        return Err(Error::Capacity {
            requested: n_add,
            available,
        });
    }

    let mut rng = rng::stream(seed, "perturb");
    let mut removed_idx = rand::seq::index::sample(&mut rng, graph.len(), n_remove).into_vec();
    removed_idx.sort_unstable();

    let mut added = Vec::with_capacity(n_add);
    let mut taken: HashSet<Triple> = HashSet::with_capacity(n_add);
    if n_add > 0 && available < 4 * n_add {
        // Dense graph: enumerate the absent triples and sample without replacement.
        let mut absent = Vec::with_capacity(available);
        for &r in &relations {
            for h in 0..n_ent {
                for t in 0..n_ent {
                    let c = Triple::new(h, r, t);
                    if !graph.contains(&c) {
                        absent.push(c);
                    }
                }
            }
        }
        let picks = rand::seq::index::sample(&mut rng, absent.len(), n_add);
        added.extend(picks.iter().map(|i| absent[i]));
    } else {
        while added.len() < n_add {
            let r = relations[rng.gen_range(0..relations.len())];
            let c = Triple::new(rng.gen_range(0..n_ent), r, rng.gen_range(0..n_ent));
            if !graph.contains(&c) && taken.insert(c) {
                added.push(c);
            }
        }
    }

    let mut edits = Vec::with_capacity(n_mod);
    let mut keep = vec![true; graph.len()];
    for &i in &removed_idx {
        keep[i] = false;
        edits.push((graph.triples()[i], Edit::RemovedPositive));
    }
    edits.extend(added.iter().map(|t| (*t, Edit::AddedNegative)));

    let mut triples: Vec<Triple> = graph
        .triples()
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(t, _)| *t)
        .collect();
    triples.extend(added);
    let perturbed = graph.with_triples(triples)?;
    Ok((
        perturbed,
        FlipLog {
            seed,
            ptb_rate,
            removal_fraction,
            edits,
        },
    ))
}

/// Random partition into `round(train_fraction * |G|)` training triples and
/// the rest. Both parts keep the input's relative order.
pub fn split(
    graph: &KnowledgeGraph,
    train_fraction: f64,
    seed: u64,
) -> Result<(KnowledgeGraph, KnowledgeGraph)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction {train_fraction} not in (0, 1)"
        )));
    }
    let n_train = round_half_up(train_fraction * graph.len() as f64).min(graph.len());
    let mut order: Vec<usize> = (0..graph.len()).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let mut in_train = vec![false; graph.len()];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut valid) = (Vec::with_capacity(n_train), Vec::new());
    for (t, is_train) in graph.triples().iter().zip(&in_train) {
        if *is_train {
            train.push(*t);
        } else {
            valid.push(*t);
        }
    }
    Ok((graph.with_triples(train)?, graph.with_triples(valid)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Head,
    Tail,
}

fn replace(t: &Triple, side: Side, e: usize) -> Triple {
    match side {
        Side::Head => Triple::new(e, t.relation, t.tail),
        Side::Tail => Triple::new(t.head, t.relation, e),
    }
}

fn count_corruptions(t: &Triple, num_entities: usize, labeled: &HashSet<Triple>) -> usize {
    [Side::Head, Side::Tail]
        .iter()
        .map(|&s| {
            (0..num_entities)
                .filter(|&e| !labeled.contains(&replace(t, s, e)))
                .count()
        })
        .sum()
}

/// Draws `k` distinct corruptions of `t`, alternating tail and head
/// replacement, none of which is in `labeled`. When one side runs out the
/// other side is used.
pub fn corrupt<R: Rng + ?Sized>(
    t: &Triple,
    num_entities: usize,
    k: usize,
    labeled: &HashSet<Triple>,
    rng: &mut R,
) -> Result<Vec<Triple>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(k);
    let mut chosen: HashSet<Triple> = HashSet::with_capacity(k);
    let mut exhausted = [false, false];
    let sides = [Side::Tail, Side::Head];
    let mut slot = 0usize;
    while out.len() < k {
        if exhausted[0] && exhausted[1] {
            return Err(Error::InsufficientCorruptions {
                triple: t.to_string(),
                available: count_corruptions(t, num_entities, labeled),
                requested: k,
            });
        }
        let which = if exhausted[slot % 2] {
            (slot + 1) % 2
        } else {
            slot % 2
        };
        let side = sides[which];
        let usable = |c: &Triple| !labeled.contains(c) && !chosen.contains(c);
        let mut pick = None;
        for _ in 0..32 {
            let c = replace(t, side, rng.gen_range(0..num_entities));
            if usable(&c) {
                pick = Some(c);
                break;
            }
        }
        if pick.is_none() {
            let rest: Vec<Triple> = (0..num_entities)
                .map(|e| replace(t, side, e))
                .filter(usable)
                .collect();
            if rest.is_empty() {
                exhausted[which] = true;
                continue;
            }
            pick = Some(rest[rng.gen_range(0..rest.len())]);
        }
        let c = pick.expect("set above");
        chosen.insert(c);
        out.push(c);
        slot += 1;
    }
    Ok(out)
}

/// `k` unlabeled triples per labeled triple; slot `(i, k)` lives at
/// `i * k + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPool {
    k: usize,
    slots: Vec<Triple>,
}

impl UnlabeledPool {
    pub fn new(k: usize, slots: Vec<Triple>) -> Result<Self> {
        if k == 0 || !slots.len().is_multiple_of(k) {
            return Err(Error::InvalidArgument(format!(
                "pool of {} slots is not a multiple of k = {k}",
                slots.len()
            )));
        }
        Ok(Self { k, slots })
    }

    /// Uniform initial construction.
    pub fn sample<R: Rng + ?Sized>(graph: &KnowledgeGraph, k: usize, rng: &mut R) -> Result<Self> {
        let mut slots = Vec::with_capacity(graph.len() * k);
        for t in graph.triples() {
            slots.extend(corrupt(
                t,
                graph.num_entities(),
                k,
                graph.membership(),
                rng,
            )?);
        }
        Self::new(k, slots)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn slots(&self) -> &[Triple] {
        &self.slots
    }

    pub fn for_labeled(&self, i: usize) -> &[Triple] {
        &self.slots[i * self.k..(i + 1) * self.k]
    }

    pub fn num_labeled(&self) -> usize {
        self.slots.len() / self.k
    }
}
