//! Joint counts, context marginals and count-of-counts per lattice node.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::events::{ConditionalQuery, Event, EventSchema, SlotSet};
use crate::lattice::{Lattice, NodeId};

/// A training observation with its multiplicity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    pub query: ConditionalQuery,
    pub multiplicity: u64,
}

impl Observation {
    pub fn new(query: ConditionalQuery) -> Self {
        Observation {
            query,
            multiplicity: 1,
        }
    }

    pub fn with_multiplicity(query: ConditionalQuery, multiplicity: u64) -> Self {
        Observation {
            query,
            multiplicity,
        }
    }
}

/// Counts of one lattice node, keyed by canonical event keys.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CountTable {
    pub node: NodeId,
    // context key -> outcome key -> count
    joint: BTreeMap<String, BTreeMap<String, u64>>,
    context_marginal: BTreeMap<String, u64>,
    outcome_support: BTreeSet<String>,
}

impl CountTable {
    pub fn new(node: NodeId) -> Self {
        CountTable {
            node,
            ..Default::default()
        }
    }

    pub fn add(&mut self, outcome_key: &str, context_key: &str, count: u64) {
        if count == 0 {
            return;
        }
        *self
            .joint
            .entry(context_key.to_owned())
            .or_default()
            .entry(outcome_key.to_owned())
            .or_default() += count;
        *self
            .context_marginal
            .entry(context_key.to_owned())
            .or_default() += count;
        self.outcome_support.insert(outcome_key.to_owned());
    }

    pub fn joint(&self, outcome_key: &str, context_key: &str) -> u64 {
        self.joint
            .get(context_key)
            .and_then(|m| m.get(outcome_key))
            .copied()
            .unwrap_or(0)
    }

    pub fn marginal(&self, context_key: &str) -> u64 {
        self.context_marginal.get(context_key).copied().unwrap_or(0)
    }

    /// Outcomes seen with `context_key`, in key order.
    pub fn seen(&self, context_key: &str) -> impl Iterator<Item = (&str, u64)> {
        self.joint
            .get(context_key)
            .into_iter()
            .flat_map(|m| m.iter().map(|(k, &c)| (k.as_str(), c)))
    }

    pub fn num_seen(&self, context_key: &str) -> usize {
        self.joint.get(context_key).map_or(0, BTreeMap::len)
    }

    pub fn contexts(&self) -> impl Iterator<Item = (&str, u64)> {
        self.context_marginal.iter().map(|(k, &c)| (k.as_str(), c))
    }

    /// All `(outcome, context, count)` triples, ordered by context then outcome.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.joint.iter().flat_map(|(c, m)| {
            m.iter()
                .map(move |(o, &n)| (o.as_str(), c.as_str(), n))
        })
    }

    pub fn outcome_support(&self) -> &BTreeSet<String> {
        &self.outcome_support
    }

    pub fn total(&self) -> u64 {
        self.context_marginal.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }

    pub fn merge(&mut self, other: &CountTable) {
        for (o, c, n) in other.entries() {
            self.add(o, c, n);
        }
    }

    /// Re-keys this table onto the slots of a child node and sums collisions.
    pub fn project(
        &self,
        schema: &Arc<EventSchema>,
        child: NodeId,
        outcome: SlotSet,
        context: SlotSet,
    ) -> Result<CountTable> {
        let mut out = CountTable::new(child);
        for (o, c, n) in self.entries() {
            let ok = Event::from_key(schema.clone(), o)?.project(outcome)?;
            let ck = Event::from_key(schema.clone(), c)?.project(context)?;
            out.add(&ok.canonical_key(), &ck.canonical_key(), n);
        }
        Ok(out)
    }

    /// Reads an override table: `outcome-key TAB context-key TAB count`.
    pub fn read_override(
        reader: impl BufRead,
        schema: &Arc<EventSchema>,
        node: NodeId,
        outcome: SlotSet,
        context: SlotSet,
    ) -> Result<CountTable> {
        let mut table = CountTable::new(node);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: lineno,
                    reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            }
            let parse_err = |reason: String| Error::Parse {
                line: lineno,
                reason,
            };
            let o = Event::from_key(schema.clone(), fields[0]).map_err(|e| parse_err(e.to_string()))?;
            let c = Event::from_key(schema.clone(), fields[1]).map_err(|e| parse_err(e.to_string()))?;
            if o.assigned() != outcome || c.assigned() != context {
                return Err(parse_err(format!(
                    "keys do not match the slots of node {node}"
                )));
            }
            let n: u64 = fields[2].trim().parse().map_err(|_| {
                parse_err(format!(
                    "count {:?} is not a non-negative integer",
                    fields[2].trim()
                ))
            })?;
            table.add(fields[0], fields[1], n);
        }
        Ok(table)
    }
}

/// `n[r]` = number of distinct joint events with count exactly `r`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountOfCounts {
    n: Vec<u64>,
}

impl CountOfCounts {
    pub fn from_counts(n: Vec<u64>) -> Self {
        CountOfCounts { n }
    }

    /// `n_r`, zero outside the tallied range.
    pub fn get(&self, r: u64) -> u64 {
        usize::try_from(r)
            .ok()
            .and_then(|r| self.n.get(r))
            .copied()
            .unwrap_or(0)
    }

    /// Largest `r` tallied.
    pub fn max_r(&self) -> u64 {
        self.n.len().saturating_sub(1) as u64
    }
}

/// Tallies `n_r` for `1 <= r <= max_r + 1` in one pass.
pub fn count_of_counts(table: &CountTable, max_r: u64) -> CountOfCounts {
    let top = max_r.max(1) + 1;
    let mut n = vec![0u64; top as usize + 1];
    for (_, _, c) in table.entries() {
        if c <= top {
            n[c as usize] += 1;
        }
    }
    CountOfCounts { n }
}

/// Projects every observation onto every node and counts it.
pub fn ingest<'a>(
    observations: impl IntoIterator<Item = &'a Observation>,
    lattice: &Lattice,
) -> Result<Vec<CountTable>> {
    ingest_from(observations, lattice, 0)
}

fn ingest_from<'a>(
    observations: impl IntoIterator<Item = &'a Observation>,
    lattice: &Lattice,
    first_index: usize,
) -> Result<Vec<CountTable>> {
    let root = lattice.node(lattice.root());
    let mut tables: Vec<CountTable> = lattice.nodes().iter().map(|n| CountTable::new(n.id)).collect();
    for (i, obs) in observations.into_iter().enumerate() {
        let index = first_index + i;
        let err = |reason: &str| Error::Ingest {
            index,
            reason: reason.to_owned(),
        };
        if obs.query.schema().as_ref() != lattice.schema().as_ref() {
            return Err(err("observation schema differs from the lattice schema"));
        }
        if obs.query.outcome.assigned() != root.outcome || obs.query.context.assigned() != root.context {
            return Err(err("observation does not assign exactly the root's slots"));
        }
        if obs.multiplicity == 0 {
            return Err(err("multiplicity must be at least 1"));
        }
        for (node, table) in lattice.nodes().iter().zip(tables.iter_mut()) {
            let o = obs.query.outcome.project(node.outcome)?;
            let c = obs.query.context.project(node.context)?;
            table.add(&o.canonical_key(), &c.canonical_key(), obs.multiplicity);
        }
    }
    Ok(tables)
}

/// Ingests in `shards` threads and merges by count addition.
pub fn ingest_sharded(
    observations: &[Observation],
    lattice: &Lattice,
    shards: usize,
) -> Result<Vec<CountTable>> {
    let shards = shards.max(1);
    let chunk = observations.len().div_ceil(shards).max(1);
    let parts: Vec<Result<Vec<CountTable>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = observations
            .chunks(chunk)
            .enumerate()
            .map(|(k, part)| scope.spawn(move || ingest_from(part, lattice, k * chunk)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ingest worker panicked"))
            .collect()
    });
    let mut merged: Vec<CountTable> = lattice.nodes().iter().map(|n| CountTable::new(n.id)).collect();
    for part in parts {
        for (m, t) in merged.iter_mut().zip(part?) {
            m.merge(&t);
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Term;
    use crate::lattice::{build_dropone, build_ngram_chain};

    fn bigrams(tokens: &[&str], lattice: &Lattice) -> Vec<Observation> {
        let s = lattice.schema().clone();
        tokens
            .windows(2)
            .map(|w| {
                let q = ConditionalQuery::new(
                    Event::empty(s.clone()).with(1, Term::new(w[1]).unwrap()).unwrap(),
                    Event::empty(s.clone()).with(0, Term::new(w[0]).unwrap()).unwrap(),
                )
                .unwrap();
                Observation::new(q)
            })
            .collect()
    }

    fn key(l: &Lattice, slot: usize, t: &str) -> String {
        Event::empty(l.schema().clone())
            .with(slot, Term::new(t).unwrap())
            .unwrap()
            .canonical_key()
    }

    #[test]
    fn bigram_stream_counts() {
        let l = build_ngram_chain(2).unwrap();
        let obs = bigrams(&["a", "b", "a", "b", "a", "c"], &l);
        let t = &ingest(&obs, &l).unwrap()[0];
        let (w, h) = (1, 0);
        assert_eq!(t.joint(&key(&l, w, "b"), &key(&l, h, "a")), 2);
        assert_eq!(t.joint(&key(&l, w, "a"), &key(&l, h, "b")), 2);
        assert_eq!(t.joint(&key(&l, w, "c"), &key(&l, h, "a")), 1);
        assert_eq!(t.marginal(&key(&l, h, "a")), 3);
        assert_eq!(t.marginal(&key(&l, h, "b")), 2);
        let noc = count_of_counts(t, 5);
        assert_eq!((noc.get(1), noc.get(2)), (1, 2));
        // unigram node: outcomes b,a,b,a,c
        let u = &ingest(&obs, &l).unwrap()[1];
        assert_eq!(u.total(), 5);
        assert_eq!(u.num_seen(&Event::empty(l.schema().clone()).canonical_key()), 3);
    }

    #[test]
    fn empty_stream() {
        let l = build_ngram_chain(3).unwrap();
        let tables = ingest(&[], &l).unwrap();
        assert_eq!(tables.len(), 3);
        assert!(tables.iter().all(CountTable::is_empty));
        let noc = count_of_counts(&tables[0], 4);
        assert!((1..=5).all(|r| noc.get(r) == 0));
    }

    #[test]
    fn multiplicity_is_linear() {
        let l = build_ngram_chain(2).unwrap();
        let one = bigrams(&["x", "y"], &l).remove(0);
        let tripled = Observation::with_multiplicity(one.query.clone(), 3);
        let a = ingest(&[tripled], &l).unwrap();
        let b = ingest(&[one.clone(), one.clone(), one], &l).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn count_above_range() {
        let mut t = CountTable::new(0);
        t.add("x", "c", 7);
        let noc = count_of_counts(&t, 5);
        assert!((1..=6).all(|r| noc.get(r) == 0));
    }

    #[test]
    fn ingest_errors_name_the_record() {
        let l = build_ngram_chain(2).unwrap();
        let other = build_ngram_chain(3).unwrap();
        let mut obs = bigrams(&["a", "b", "c"], &l);
        obs.push(bigrams(&["a", "b"], &l)[0].clone());
        let foreign = {
            let s = other.schema().clone();
            Observation::new(
                ConditionalQuery::new(
                    Event::from_pairs(s.clone(), [(2, "x")]).unwrap(),
                    Event::from_pairs(s, [(0, "y"), (1, "z")]).unwrap(),
                )
                .unwrap(),
            )
        };
        obs.insert(2, foreign);
        match ingest(&obs, &l) {
            Err(Error::Ingest { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sharding_does_not_change_counts() {
        let l = build_ngram_chain(3).unwrap();
        let s = l.schema().clone();
        let toks = ["a", "b", "c", "a", "b", "b", "c", "a", "a", "c", "b", "a"];
        let obs: Vec<Observation> = toks
            .windows(3)
            .map(|w| {
                Observation::new(
                    ConditionalQuery::new(
                        Event::from_pairs(s.clone(), [(2, w[2])]).unwrap(),
                        Event::from_pairs(s.clone(), [(0, w[0]), (1, w[1])]).unwrap(),
                    )
                    .unwrap(),
                )
            })
            .collect();
        let single = ingest(&obs, &l).unwrap();
        for shards in 1..6 {
            assert_eq!(ingest_sharded(&obs, &l, shards).unwrap(), single);
        }
    }

    #[test]
    fn override_file() {
        let l = build_ngram_chain(2).unwrap();
        let s = l.schema().clone();
        let node = l.node(0);
        let (o, c) = (key(&l, 1, "b"), key(&l, 0, "a"));
        let text = format!("{o}\t{c}\t4\n\n{o}\t{c}\t1\n");
        let t = CountTable::read_override(text.as_bytes(), &s, 0, node.outcome, node.context).unwrap();
        assert_eq!(t.joint(&o, &c), 5);
        let frac = format!("{o}\t{c}\t1.5\n");
        let err = CountTable::read_override(frac.as_bytes(), &s, 0, node.outcome, node.context);
        assert!(matches!(err, Err(Error::Parse { line: 1, .. })));
        let swapped = format!("{c}\t{o}\t1\n");
        assert!(CountTable::read_override(swapped.as_bytes(), &s, 0, node.outcome, node.context).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pp_lattice() -> Lattice {
            let schema = Arc::new(EventSchema::flat(&["y", "a", "b", "c"]).unwrap());
            build_dropone(schema, SlotSet::empty().with(0), 0).unwrap()
        }

        fn observations(rows: &[(u8, u8, u8, u8, u64)], l: &Lattice) -> Vec<Observation> {
            let s = l.schema().clone();
            rows.iter()
                .map(|&(y, a, b, c, m)| {
                    Observation::with_multiplicity(
                        ConditionalQuery::new(
                            Event::from_pairs(s.clone(), [(0, format!("y{y}"))]).unwrap(),
                            Event::from_pairs(
                                s.clone(),
                                [(1, format!("a{a}")), (2, format!("b{b}")), (3, format!("c{c}"))],
                            )
                            .unwrap(),
                        )
                        .unwrap(),
                        m,
                    )
                })
                .collect()
        }

        proptest! {
            #[test]
            fn marginals_and_projection_commute(
                rows in proptest::collection::vec((0u8..2, 0u8..3, 0u8..3, 0u8..2, 1u64..4), 0..100)
            ) {
                let l = pp_lattice();
                let obs = observations(&rows, &l);
                let tables = ingest(&obs, &l).unwrap();
                let mass: u64 = rows.iter().map(|r| r.4).sum();
                for t in &tables {
                    for (ctx, m) in t.contexts() {
                        prop_assert_eq!(t.seen(ctx).map(|(_, c)| c).sum::<u64>(), m);
                    }
                    prop_assert_eq!(t.total(), mass);
                    let noc = count_of_counts(t, mass.max(1));
                    let weighted: u64 = (1..=noc.max_r()).map(|r| r * noc.get(r)).sum();
                    prop_assert_eq!(weighted, mass);
                }
                let root = &tables[l.root()];
                for node in l.nodes() {
                    let projected = root.project(l.schema(), node.id, node.outcome, node.context).unwrap();
                    prop_assert_eq!(&projected, &tables[node.id]);
                }
            }
        }
    }
}
