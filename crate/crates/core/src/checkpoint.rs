//! Versioned plain-text model checkpoints.
//!
//! Layout, one item per line:
//!
//! ```text
//! # free-form comment lines
//! npukg-checkpoint 1
//! dim <d>  layers <L>  ... (one "key value" pair per line)
//! entities <n>          followed by n entity names
//! relations <n>         followed by n relation names
//! tensor <name> <rows>x<cols> | <len>    followed by one line of values
//! neighbors <edges>     followed by "center neighbor relation source" lines
//! end
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a checkpoint
//! reloads bit-for-bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::encoder::{ModelParams, ModelShape, Neighbor, NeighborSet, Scorer, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::kg::Vocab;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "npukg-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub config_hash: String,
    /// Epoch the parameters were taken from; 0 for an untrained model.
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub vocab: Arc<Vocab>,
    pub params: ModelParams,
    pub neighbors: NeighborSet,
}

impl Checkpoint {
    pub fn scorer(&self) -> Result<Scorer> {
        Scorer::new(&self.params, &self.neighbors)
    }

    pub fn to_text(&self, header: &[String]) -> String {
        let mut s = String::new();
        for h in header {
            let _ = writeln!(s, "# {h}");
        }
        let shape = self.params.shape;
        let _ = writeln!(s, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(s, "dim {}", shape.dim);
        let _ = writeln!(s, "layers {}", shape.layers);
        let _ = writeln!(s, "seed {}", self.meta.seed);
        let _ = writeln!(s, "alpha {:e}", self.meta.alpha);
        let _ = writeln!(s, "beta {:e}", self.meta.beta);
        let _ = writeln!(s, "top_m {}", self.neighbors.top_m());
        let _ = writeln!(s, "epoch {}", self.meta.epoch);
        let _ = writeln!(s, "config_hash {}", self.meta.config_hash);
        let _ = writeln!(s, "entities {}", self.vocab.num_entities());
        for name in self.vocab.entities() {
            let _ = writeln!(s, "{name}");
        }
        let _ = writeln!(s, "relations {}", self.vocab.num_relations());
        for name in self.vocab.relations() {
            let _ = writeln!(s, "{name}");
        }
        for (name, t) in PARAM_NAMES.iter().zip(self.params.tensors()) {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(s, "tensor {name} {}", dims.join("x"));
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
        let _ = writeln!(s, "neighbors {}", self.neighbors.num_edges());
        for e in 0..self.neighbors.num_entities() {
            for n in self.neighbors.of(e) {
                let _ = writeln!(s, "{e} {} {} {}", n.entity, n.relation, n.source);
            }
        }
        let _ = writeln!(s, "end");
        s
    }

    pub fn save(&self, path: &Path, header: &[String]) -> Result<()> {
        fs::write(path, self.to_text(header))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Lines {
            inner: text
                .lines()
                .enumerate()
                .skip_while(|(_, l)| l.starts_with('#')),
        };
        let bad = |line: usize, msg: String| Error::Checkpoint(format!("line {line}: {msg}"));

        let (ln, magic) = r.next("header")?;
        match magic.split_once(' ') {
            Some((MAGIC, v)) if v.trim() == FORMAT_VERSION.to_string() => {}
            Some((MAGIC, v)) => return Err(bad(ln, format!("unsupported format version {v}"))),
            _ => return Err(bad(ln, "not a checkpoint file".into())),
        }
        let dim: usize = num("dim", &r.field("dim")?)?;
        let layers: usize = num("layers", &r.field("layers")?)?;
        let seed: u64 = num("seed", &r.field("seed")?)?;
        let alpha: f64 = num("alpha", &r.field("alpha")?)?;
        let beta: f64 = num("beta", &r.field("beta")?)?;
        let top_m: usize = num("top_m", &r.field("top_m")?)?;
        let epoch: usize = num("epoch", &r.field("epoch")?)?;
        let config_hash = r.field("config_hash")?;

        let n_ent: usize = num("entities", &r.field("entities")?)?;
        let entities = (0..n_ent)
            .map(|_| r.next("entity names").map(|(_, l)| l.to_string()))
            .collect::<Result<Vec<_>>>()?;
        let n_rel: usize = num("relations", &r.field("relations")?)?;
        let relations = (0..n_rel)
            .map(|_| r.next("relation names").map(|(_, l)| l.to_string()))
            .collect::<Result<Vec<_>>>()?;
        let vocab =
            Vocab::from_names(entities, relations).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let shape = ModelShape {
            num_entities: n_ent,
            num_relations: n_rel,
            dim,
            layers,
        };
        let mut params = ModelParams::zeros(shape);
        let expected = ModelParams::expected_shapes(&shape);
        for ((name, slot), want) in PARAM_NAMES.iter().zip(params.tensors_mut()).zip(expected) {
            let (ln, head) = r.next(name)?;
            let rest = head
                .strip_prefix("tensor ")
                .and_then(|x| x.strip_prefix(name))
                .and_then(|x| x.strip_prefix(' '))
                .ok_or_else(|| bad(ln, format!("expected tensor {name}")))?;
            let dims = rest
                .split('x')
                .map(|d| num::<usize>("tensor shape", d))
                .collect::<Result<Vec<_>>>()?;
            if dims != want {
                return Err(bad(
                    ln,
                    format!("tensor {name} has shape {dims:?}, expected {want:?}"),
                ));
            }
            let (ln, body) = r.next(name)?;
            let data = body
                .split_ascii_whitespace()
                .map(|v| num::<f64>(name, v))
                .collect::<Result<Vec<_>>>()?;
            *slot = Tensor::new(dims, data).map_err(|e| bad(ln, e.to_string()))?;
        }

        let n_edges: usize = num("neighbors", &r.field("neighbors")?)?;
        let mut lists = vec![Vec::new(); n_ent];
        for _ in 0..n_edges {
            let (ln, l) = r.next("neighbor entries")?;
            let f = l
                .split_ascii_whitespace()
                .map(|v| num::<usize>("neighbor entry", v))
                .collect::<Result<Vec<_>>>()?;
            if f.len() != 4 || f[0] >= n_ent || f[1] >= n_ent || f[2] >= 2 * n_rel {
                return Err(bad(ln, "invalid neighbor entry".into()));
            }
            lists[f[0]].push(Neighbor {
                entity: f[1],
                relation: f[2],
                source: f[3],
            });
        }
        let (ln, l) = r.next("end")?;
        if l != "end" {
            return Err(bad(ln, "expected end marker".into()));
        }
        Ok(Self {
            meta: CheckpointMeta {
                seed,
                alpha,
                beta,
                config_hash,
                epoch,
            },
            vocab: Arc::new(vocab),
            params,
            neighbors: NeighborSet::from_lists(&lists, top_m),
        })
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad value for {key}: {v:?}")))
}

struct Lines<'a, I: Iterator<Item = (usize, &'a str)>> {
    inner: I,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Lines<'a, I> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Checkpoint(format!("truncated before {what}")))
    }

    fn field(&mut self, key: &str) -> Result<String> {
        let (ln, l) = self.next(key)?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => Err(Error::Checkpoint(format!(
                "line {ln}: expected `{key} <value>`"
            ))),
        }
    }
}
