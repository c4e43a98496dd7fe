//! Synchronous bilingual dependencies on a 2x1 matrix lattice.
//!
//! Row 0 is the first language and row 1 the second. The outcome matrix
//! `a` holds the two child words, the context matrix `b` the two parents.
//! The single row edge factors the joint into one monolingual dependency
//! model per language.

use std::io::BufRead;
use std::sync::Arc;

use crate::backoff::{Model, ModelConfig};
use crate::counts::Observation;
use crate::error::{Error, Result};
use crate::events::{ConditionalQuery, Event, EventSchema, Term};
use crate::lattice::{build_sync_split, Lattice};
use crate::mixture::CombineMode;
use crate::scalar::Scalar;
use crate::tasks::UNK;

const CHILD: [usize; 2] = [0, 1];
const PARENT: [usize; 2] = [2, 3];

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DependencyPair {
    /// Parent word in each language.
    pub parent: [Term; 2],
    /// Child word in each language.
    pub child: [Term; 2],
}

impl DependencyPair {
    pub fn new(parent1: &str, child1: &str, parent2: &str, child2: &str) -> Result<Self> {
        Ok(DependencyPair {
            parent: [Term::new(parent1)?, Term::new(parent2)?],
            child: [Term::new(child1)?, Term::new(child2)?],
        })
    }

    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.parent[0], self.child[0], self.parent[1], self.child[1])
    }
}

/// Tab-separated `parent1 child1 parent2 child2` per line.
pub fn read_pairs(reader: impl BufRead) -> Result<Vec<DependencyPair>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse { line: i + 1, reason };
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() != 4 {
            return Err(err(format!("expected 4 tab-separated fields, got {}", f.len())));
        }
        out.push(DependencyPair::new(f[0], f[1], f[2], f[3]).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

pub fn lattice() -> Lattice {
    build_sync_split(2, 1).expect("fixed lattice is valid")
}

/// `Pr(child1, child2 | parent1, parent2)` at the root.
pub fn query(schema: &Arc<EventSchema>, pair: &DependencyPair) -> Result<ConditionalQuery> {
    let mut out = Event::empty(schema.clone());
    let mut ctx = Event::empty(schema.clone());
    for l in 0..2 {
        out = out.with(CHILD[l], pair.child[l].clone())?;
        ctx = ctx.with(PARENT[l], pair.parent[l].clone())?;
    }
    ConditionalQuery::new(out, ctx)
}

pub fn observations(schema: &Arc<EventSchema>, pairs: &[DependencyPair]) -> Result<Vec<Observation>> {
    pairs.iter().map(|p| Ok(Observation::new(query(schema, p)?))).collect()
}

/// Counts `pairs`; UNK is a declared child word in both languages.
pub fn build_model<T: Scalar>(pairs: &[DependencyPair], config: ModelConfig) -> Result<Model<T>> {
    let lattice = lattice();
    let schema = lattice.schema().clone();
    let obs = observations(&schema, pairs)?;
    let mut model = Model::from_observations(lattice, &obs, config)?;
    let unk = Term::new(UNK)?;
    let declared = Event::empty(schema.clone())
        .with(CHILD[0], unk.clone())?
        .with(CHILD[1], unk)?;
    model.declare_outcomes([&declared])?;
    Ok(model)
}

/// The monolingual factor nodes, first language first.
pub fn factor_nodes<T: Scalar>(model: &Model<T>) -> Result<[usize; 2]> {
    let lattice = model.lattice();
    match lattice.out_edges(model.root()) {
        [e] if lattice.edge(*e).children.len() == 2 => {
            let c = &lattice.edge(*e).children;
            Ok([c[0], c[1]])
        }
        _ => Err(Error::InvalidLattice("expected a single two-way row split at the root".into())),
    }
}

/// Replaces child words unknown to their language's factor with UNK.
pub fn map_oov<T: Scalar>(model: &Model<T>, pair: &DependencyPair) -> Result<(DependencyPair, usize)> {
    let schema = model.lattice().schema().clone();
    let nodes = factor_nodes(model)?;
    let mut mapped = pair.clone();
    let mut oov = 0;
    for l in 0..2 {
        let ev = Event::empty(schema.clone()).with(CHILD[l], pair.child[l].clone())?;
        if !model.in_vocabulary(nodes[l], &ev) {
            mapped.child[l] = Term::new(UNK)?;
            oov += 1;
        }
    }
    Ok((mapped, oov))
}

/// Factored probability of a bilingual dependency: the product of the two
/// monolingual back-off estimates.
pub fn sync_dependency_prob<T: Scalar>(model: &Model<T>, pair: &DependencyPair) -> Result<T> {
    let q = query(model.lattice().schema(), pair)?;
    model.mixture(CombineMode::Mixture, model.root(), &q)
}

/// Each language's monolingual back-off estimate.
pub fn factor_probs<T: Scalar>(model: &Model<T>, pair: &DependencyPair) -> Result<[T; 2]> {
    let q = query(model.lattice().schema(), pair)?;
    let nodes = factor_nodes(model)?;
    let mut out = [T::zero(); 2];
    for (o, n) in out.iter_mut().zip(nodes) {
        *o = model.prob(n, &model.query_at(n, &q)?)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyncReport {
    pub pairs: usize,
    /// Mean natural-log factored probability.
    pub mean_log_prob: f64,
    pub oov: usize,
}

pub fn evaluate_sync<T: Scalar>(model: &Model<T>, test: &[DependencyPair]) -> Result<SyncReport> {
    if test.is_empty() {
        return Err(Error::EmptyInput("no dependency pairs to evaluate".into()));
    }
    let mut total = 0.0;
    let mut oov = 0;
    for (i, pair) in test.iter().enumerate() {
        let (mapped, n) = map_oov(model, pair)?;
        oov += n;
        let p = sync_dependency_prob(model, &mapped)?.as_f64();
        if p <= 0.0 {
            return Err(Error::ZeroProbability { position: i });
        }
        total += p.ln();
    }
    Ok(SyncReport {
        pairs: test.len(),
        mean_log_prob: total / test.len() as f64,
        oov,
    })
}
