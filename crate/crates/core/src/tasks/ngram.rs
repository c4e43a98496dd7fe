//! N-gram language modelling on the chain lattice.

use std::io::BufRead;
use std::sync::Arc;

use crate::backoff::{Model, ModelConfig};
use crate::counts::Observation;
use crate::error::{Error, Result};
use crate::events::{ConditionalQuery, Event, EventSchema, Term};
use crate::lattice::build_ngram_chain;
use crate::scalar::Scalar;
use crate::tasks::UNK;

/// Sentence boundary: pads histories and is predicted after the last word.
pub const BOUNDARY: &str = "<s>";

/// One sentence per line, whitespace-separated tokens; blank lines skipped.
pub fn read_sentences(reader: impl BufRead) -> Result<Vec<Vec<Term>>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let toks = line
            .split_whitespace()
            .map(Term::new)
            .collect::<Result<Vec<_>>>()?;
        if !toks.is_empty() {
            out.push(toks);
        }
    }
    Ok(out)
}

/// `Pr(word | history)` with `history` oldest first, `order - 1` long.
pub fn query(schema: &Arc<EventSchema>, history: &[Term], word: &Term) -> Result<ConditionalQuery> {
    let n = schema.len();
    if history.len() + 1 != n {
        return Err(Error::SchemaMismatch(format!(
            "history of {} words for an order-{n} model",
            history.len()
        )));
    }
    let mut ctx = Event::empty(schema.clone());
    for (i, t) in history.iter().enumerate() {
        ctx = ctx.with(i, t.clone())?;
    }
    let out = Event::empty(schema.clone()).with(n - 1, word.clone())?;
    ConditionalQuery::new(out, ctx)
}

fn padded(sentence: &[Term], order: usize) -> Vec<Term> {
    let b = Term::new(BOUNDARY).expect("boundary is a valid term");
    let mut p = vec![b.clone(); order - 1];
    p.extend(sentence.iter().cloned());
    p.push(b);
    p
}

/// Observations of one boundary-padded sentence.
pub fn sentence_observations(
    schema: &Arc<EventSchema>,
    sentence: &[Term],
    order: usize,
) -> Result<Vec<Observation>> {
    let p = padded(sentence, order);
    (order - 1..p.len())
        .map(|i| Ok(Observation::new(query(schema, &p[i + 1 - order..i], &p[i])?)))
        .collect()
}

/// Observations of every `order`-window of an unpadded token stream.
pub fn stream_observations(
    schema: &Arc<EventSchema>,
    tokens: &[Term],
    order: usize,
) -> Result<Vec<Observation>> {
    tokens
        .windows(order)
        .map(|w| Ok(Observation::new(query(schema, &w[..order - 1], &w[order - 1])?)))
        .collect()
}

fn word_event(schema: &Arc<EventSchema>, word: &str) -> Result<Event> {
    Event::empty(schema.clone()).with(schema.len() - 1, Term::new(word)?)
}

/// Trains a chain model; the boundary and UNK tokens are always in the
/// vocabulary, as is every word of `extra_vocab`.
pub fn build_model<T: Scalar>(
    sentences: &[Vec<Term>],
    order: usize,
    config: ModelConfig,
    extra_vocab: &[Term],
) -> Result<Model<T>> {
    let lattice = build_ngram_chain(order)?;
    let schema = lattice.schema().clone();
    let mut obs = Vec::new();
    for s in sentences {
        obs.extend(sentence_observations(&schema, s, order)?);
    }
    let mut model = Model::from_observations(lattice, &obs, config)?;
    let mut declared = vec![word_event(&schema, BOUNDARY)?, word_event(&schema, UNK)?];
    for t in extra_vocab {
        declared.push(word_event(&schema, t.as_str())?);
    }
    model.declare_outcomes(&declared)?;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perplexity {
    pub perplexity: f64,
    /// Natural-log probability of all scored positions.
    pub log_prob: f64,
    pub positions: usize,
    pub oov: usize,
}

/// Perplexity over boundary-padded sentences. Words outside the model's
/// vocabulary are scored as UNK.
pub fn perplexity<T: Scalar>(model: &Model<T>, sentences: &[Vec<Term>], order: usize) -> Result<Perplexity> {
    let schema = model.lattice().schema().clone();
    if schema.len() != order {
        return Err(Error::SchemaMismatch(format!(
            "model order {} differs from requested order {order}",
            schema.len()
        )));
    }
    let root = model.root();
    let unk = Term::new(UNK)?;
    let mut log_prob = 0.0;
    let mut positions = 0;
    let mut oov = 0;
    for s in sentences {
        let mapped = s
            .iter()
            .map(|t| {
                Ok(if model.in_vocabulary(root, &word_event(&schema, t.as_str())?) {
                    t.clone()
                } else {
                    oov += 1;
                    unk.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let p = padded(&mapped, order);
        for i in order - 1..p.len() {
            let q = query(&schema, &p[i + 1 - order..i], &p[i])?;
            let prob = model.prob(root, &q)?.as_f64();
            if prob <= 0.0 {
                return Err(Error::ZeroProbability { position: positions });
            }
            log_prob += prob.ln();
            positions += 1;
        }
    }
    if positions == 0 {
        return Err(Error::EmptyInput("no sentences to score".into()));
    }
    Ok(Perplexity {
        perplexity: (-log_prob / positions as f64).exp(),
        log_prob,
        positions,
        oov,
    })
}
