//! Prepositional-phrase attachment on the asynchronous drop-one lattice.
//!
//! The outcome is the attachment label (1 = noun, 0 = verb); the context is
//! `(v, n1, p, n2)`. The preposition is never dropped.

use std::io::BufRead;
use std::sync::Arc;

use crate::backoff::{Model, ModelConfig};
use crate::counts::{CountTable, Observation};
use crate::error::{Error, Result};
use crate::events::{ConditionalQuery, Event, EventSchema, SlotId, SlotSet, Term};
use crate::lattice::{build_dropone, Lattice};
use crate::mixture::CombineMode;
use crate::scalar::Scalar;

pub const NOUN: u8 = 1;
pub const VERB: u8 = 0;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PpRecord {
    pub v: Term,
    pub n1: Term,
    pub p: Term,
    pub n2: Term,
    pub label: u8,
}

impl PpRecord {
    pub fn new(v: &str, n1: &str, p: &str, n2: &str, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::InvalidArgument(format!("label {label} is not 0 or 1")));
        }
        Ok(PpRecord {
            v: Term::new(v)?,
            n1: Term::new(n1)?,
            p: Term::new(p)?,
            n2: Term::new(n2)?,
            label,
        })
    }

    pub fn to_line(&self) -> String {
        format!("{} {} {} {} {}", self.v, self.n1, self.p, self.n2, self.label)
    }
}

/// Five whitespace-separated fields per line: `v n1 p n2 label`.
pub fn read_records(reader: impl BufRead) -> Result<Vec<PpRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse { line: i + 1, reason };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", f.len())));
        }
        let label = match f[4] {
            "0" => VERB,
            "1" => NOUN,
            other => return Err(err(format!("label {other:?} is not 0 or 1"))),
        };
        out.push(PpRecord::new(f[0], f[1], f[2], f[3], label).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

pub fn schema() -> Arc<EventSchema> {
    let slot = |col, name: &str, droppable| (SlotId::new(0, col, name), droppable);
    Arc::new(
        EventSchema::new(vec![
            slot(0, "label", false),
            slot(1, "v", true),
            slot(2, "n1", true),
            slot(3, "p", false),
            slot(4, "n2", true),
        ])
        .expect("fixed schema is valid"),
    )
}

/// Drop-one lattice keeping the preposition: eight nodes, leaf `label | p`.
pub fn lattice() -> Lattice {
    build_dropone(schema(), SlotSet::empty().with(0), 1).expect("fixed lattice is valid")
}

fn context(schema: &Arc<EventSchema>, r: &PpRecord) -> Result<Event> {
    Event::empty(schema.clone())
        .with(1, r.v.clone())?
        .with(2, r.n1.clone())?
        .with(3, r.p.clone())?
        .with(4, r.n2.clone())
}

fn label_event(schema: &Arc<EventSchema>, label: u8) -> Result<Event> {
    Event::empty(schema.clone()).with(0, Term::new(label.to_string())?)
}

/// `Pr(label | v, n1, p, n2)` at the root.
pub fn query(schema: &Arc<EventSchema>, r: &PpRecord, label: u8) -> Result<ConditionalQuery> {
    ConditionalQuery::new(label_event(schema, label)?, context(schema, r)?)
}

pub fn observation(schema: &Arc<EventSchema>, r: &PpRecord) -> Result<Observation> {
    Ok(Observation::new(query(schema, r, r.label)?))
}

pub fn observations(schema: &Arc<EventSchema>, records: &[PpRecord]) -> Result<Vec<Observation>> {
    records.iter().map(|r| observation(schema, r)).collect()
}

/// Counts `records` on `lattice` (normally [`lattice`]); both labels are
/// declared outcomes.
pub fn build_model<T: Scalar>(lattice: Lattice, records: &[PpRecord], config: ModelConfig) -> Result<Model<T>> {
    let schema = lattice.schema().clone();
    let obs = observations(&schema, records)?;
    let mut model = Model::from_observations(lattice, &obs, config)?;
    model.declare_outcomes(&[label_event(&schema, VERB)?, label_event(&schema, NOUN)?])?;
    Ok(model)
}

/// Most probable label and its probability; ties go to noun attachment.
pub fn classify_pp<T: Scalar>(model: &Model<T>, record: &PpRecord, mode: CombineMode) -> Result<(u8, T)> {
    let schema = model.lattice().schema().clone();
    let root = model.root();
    let p1 = model.prob_with(mode, root, &query(&schema, record, NOUN)?)?;
    let p0 = model.prob_with(mode, root, &query(&schema, record, VERB)?)?;
    Ok(if p1 >= p0 { (NOUN, p1) } else { (VERB, p0) })
}

fn label_key(schema: &Arc<EventSchema>, label: u8) -> String {
    label_event(schema, label)
        .expect("labels are valid terms")
        .canonical_key()
}

/// Relative frequency at the root only; unseen tuples default to noun
/// attachment.
pub fn mle_only(lattice: &Lattice, counts: &[CountTable], record: &PpRecord) -> Result<u8> {
    let schema = lattice.schema();
    let root = lattice.root();
    let ck = context(schema, record)?.canonical_key();
    let total = counts[root].marginal(&ck);
    if total == 0 {
        return Ok(NOUN);
    }
    let noun = counts[root].joint(&label_key(schema, NOUN), &ck);
    Ok(if 2 * noun >= total { NOUN } else { VERB })
}

/// `(noun count, total)` over all training observations.
pub fn label_totals(lattice: &Lattice, counts: &[CountTable]) -> (u64, u64) {
    let table = &counts[lattice.root()];
    let key = label_key(lattice.schema(), NOUN);
    let noun = table.entries().filter(|(o, _, _)| *o == key).map(|e| e.2).sum();
    (noun, table.total())
}

pub fn majority_label(lattice: &Lattice, counts: &[CountTable]) -> u8 {
    let (noun, total) = label_totals(lattice, counts);
    if 2 * noun >= total {
        NOUN
    } else {
        VERB
    }
}

/// Level-by-level backed-off estimate: at the shallowest lattice depth with
/// any matching context, the noun-attachment count summed over that depth's
/// nodes divided by their summed context counts.
pub fn collins_brooks_baseline(lattice: &Lattice, counts: &[CountTable], record: &PpRecord) -> Result<(u8, f64)> {
    let schema = lattice.schema();
    let noun = label_key(schema, NOUN);
    let full = context(schema, record)?;
    let depths = lattice.depths();
    let max_depth = depths.iter().flatten().copied().max().unwrap_or(0);
    let decide = |num: u64, den: u64| {
        let score = num as f64 / den as f64;
        (if score >= 0.5 { NOUN } else { VERB }, score)
    };
    for d in 0..=max_depth {
        let (mut num, mut den) = (0u64, 0u64);
        for node in lattice.nodes().iter().filter(|n| depths[n.id] == Some(d)) {
            let ck = full.project(node.context)?.canonical_key();
            num += counts[node.id].joint(&noun, &ck);
            den += counts[node.id].marginal(&ck);
        }
        if den > 0 {
            return Ok(decide(num, den));
        }
    }
    let (num, den) = label_totals(lattice, counts);
    if den > 0 {
        Ok(decide(num, den))
    } else {
        Ok((NOUN, 1.0))
    }
}

/// Accuracies of the back-off model and its baselines on one test set.
#[derive(Clone, Debug, PartialEq)]
pub struct PpReport {
    pub records: usize,
    pub mixture: f64,
    pub max_path: f64,
    pub collins_brooks: f64,
    pub mle_only: f64,
    pub majority: f64,
}

pub fn evaluate_pp<T: Scalar>(model: &Model<T>, test: &[PpRecord]) -> Result<PpReport> {
    if test.is_empty() {
        return Err(Error::EmptyInput("no PP records to evaluate".into()));
    }
    let lattice = model.lattice();
    let counts = model.counts();
    let majority = majority_label(lattice, counts);
    let mut hits = [0usize; 5];
    for r in test {
        let preds = [
            classify_pp(model, r, CombineMode::Mixture)?.0,
            classify_pp(model, r, CombineMode::MaxPath)?.0,
            collins_brooks_baseline(lattice, counts, r)?.0,
            mle_only(lattice, counts, r)?,
            majority,
        ];
        for (h, p) in hits.iter_mut().zip(preds) {
            *h += usize::from(p == r.label);
        }
    }
    let acc = |h: usize| h as f64 / test.len() as f64;
    Ok(PpReport {
        records: test.len(),
        mixture: acc(hits[0]),
        max_path: acc(hits[1]),
        collins_brooks: acc(hits[2]),
        mle_only: acc(hits[3]),
        majority: acc(hits[4]),
    })
}
