//! Event schemas, concrete events and slot projections.
//!
//! Every event lives on a grid of named slots. A flat n-tuple is a `1 x n`
//! grid; matrix-shaped events use several rows. Dropping a slot is modelled as
//! leaving it unassigned, so full and projected events share one type.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator between slot values in a canonical key.
pub const KEY_SEPARATOR: char = '|';
/// Marker for an unassigned slot in a canonical key. Never valid inside a term.
pub const ABSENT: char = '\u{2400}';

/// An opaque lexical symbol.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Term(String);

impl Term {
    pub fn new(symbol: impl Into<String>) -> Result<Self> {
        let symbol = symbol.into();
        let ok = !symbol.is_empty()
            && !symbol
                .chars()
                .any(|c| c.is_whitespace() || c == KEY_SEPARATOR || c == ABSENT);
        if ok {
            Ok(Term(symbol))
        } else {
            Err(Error::InvalidTerm(symbol))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Term {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Term::new(value)
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.0
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Position of a slot within the event grid plus its role label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotId {
    pub row: usize,
    pub col: usize,
    pub name: String,
}

impl SlotId {
    pub fn new(row: usize, col: usize, name: impl Into<String>) -> Self {
        SlotId {
            row,
            col,
            name: name.into(),
        }
    }
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{},{}]", self.name, self.row, self.col)
    }
}

/// A set of slot indices of one schema, stored as a bit mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotSet(u64);

impl SlotSet {
    pub const MAX_SLOTS: usize = 64;

    pub const fn empty() -> Self {
        SlotSet(0)
    }

    /// The first `n` slots.
    pub fn first(n: usize) -> Self {
        assert!(n <= Self::MAX_SLOTS);
        if n == Self::MAX_SLOTS {
            SlotSet(u64::MAX)
        } else {
            SlotSet((1u64 << n) - 1)
        }
    }

    pub fn from_bits(bits: u64) -> Self {
        SlotSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, slot: usize) -> bool {
        slot < Self::MAX_SLOTS && self.0 & (1 << slot) != 0
    }

    pub fn insert(&mut self, slot: usize) {
        assert!(slot < Self::MAX_SLOTS, "slot index {slot} out of range");
        self.0 |= 1 << slot;
    }

    pub fn with(mut self, slot: usize) -> Self {
        self.insert(slot);
        self
    }

    pub fn without(self, slot: usize) -> Self {
        SlotSet(self.0 & !(1u64 << slot))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: SlotSet) -> SlotSet {
        SlotSet(self.0 | other.0)
    }

    pub fn intersection(self, other: SlotSet) -> SlotSet {
        SlotSet(self.0 & other.0)
    }

    pub fn difference(self, other: SlotSet) -> SlotSet {
        SlotSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: SlotSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_disjoint(self, other: SlotSet) -> bool {
        self.0 & other.0 == 0
    }

    /// Slot indices in increasing order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..Self::MAX_SLOTS).filter(move |&i| self.contains(i))
    }
}

impl FromIterator<usize> for SlotSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = SlotSet::empty();
        for i in iter {
            s.insert(i);
        }
        s
    }
}

/// Ordered slot layout shared by all events of one model.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EventSchema {
    slots: Vec<SlotId>,
    droppable: Vec<bool>,
}

impl EventSchema {
    pub fn new(slots: Vec<(SlotId, bool)>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::InvalidSchema("a schema needs at least one slot".into()));
        }
        if slots.len() > SlotSet::MAX_SLOTS {
            return Err(Error::InvalidSchema(format!(
                "{} slots exceed the limit of {}",
                slots.len(),
                SlotSet::MAX_SLOTS
            )));
        }
        let mut seen = HashSet::new();
        for (slot, _) in &slots {
            if slot.name.is_empty() || slot.name.contains(|c: char| c.is_whitespace() || "[]=,|".contains(c)) {
                return Err(Error::InvalidSchema(format!("bad slot name {:?}", slot.name)));
            }
            if !seen.insert(slot.clone()) {
                return Err(Error::InvalidSchema(format!("duplicate slot {slot}")));
            }
        }
        let (slots, droppable) = slots.into_iter().unzip();
        Ok(EventSchema { slots, droppable })
    }

    /// A `1 x n` schema with the given names; every slot droppable.
    pub fn flat<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::new(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| (SlotId::new(0, i, n.as_ref()), true))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[SlotId] {
        &self.slots
    }

    pub fn slot(&self, index: usize) -> &SlotId {
        &self.slots[index]
    }

    pub fn is_droppable(&self, index: usize) -> bool {
        self.droppable[index]
    }

    pub fn all(&self) -> SlotSet {
        SlotSet::first(self.len())
    }

    pub fn index_of(&self, slot: &SlotId) -> Option<usize> {
        self.slots.iter().position(|s| s == slot)
    }

    /// Resolves `name` (when the name is unique) or `name[row,col]`.
    pub fn resolve(&self, reference: &str) -> Result<usize> {
        let reference = reference.trim();
        if let Some(open) = reference.find('[') {
            let name = &reference[..open];
            let pos = reference[open + 1..]
                .strip_suffix(']')
                .and_then(|inner| inner.split_once(','))
                .and_then(|(r, c)| Some((r.trim().parse().ok()?, c.trim().parse().ok()?)));
            let (row, col) = pos.ok_or_else(|| {
                Error::SchemaMismatch(format!("malformed slot reference {reference:?}"))
            })?;
            return self
                .index_of(&SlotId::new(row, col, name))
                .ok_or_else(|| Error::SchemaMismatch(format!("unknown slot {reference:?}")));
        }
        let mut hits = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.name == reference);
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Ok(i),
            (None, _) => Err(Error::SchemaMismatch(format!("unknown slot {reference:?}"))),
            _ => Err(Error::SchemaMismatch(format!(
                "slot name {reference:?} is ambiguous; use name[row,col]"
            ))),
        }
    }

    /// Shortest unambiguous reference for a slot.
    pub fn reference(&self, index: usize) -> String {
        let slot = &self.slots[index];
        if self.slots.iter().filter(|s| s.name == slot.name).count() == 1 {
            slot.name.clone()
        } else {
            slot.to_string()
        }
    }

    pub fn resolve_set<S: AsRef<str>>(&self, refs: &[S]) -> Result<SlotSet> {
        refs.iter().map(|r| self.resolve(r.as_ref())).collect()
    }

    pub fn references(&self, set: SlotSet) -> Vec<String> {
        set.iter().map(|i| self.reference(i)).collect()
    }

    pub fn describe(&self, set: SlotSet) -> String {
        self.references(set).join(" ")
    }
}

/// An assignment of terms to a subset of a schema's slots.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    schema: Arc<EventSchema>,
    values: Vec<Option<Term>>,
}

impl Event {
    pub fn empty(schema: Arc<EventSchema>) -> Self {
        let values = vec![None; schema.len()];
        Event { schema, values }
    }

    pub fn from_pairs<I, S>(schema: Arc<EventSchema>, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, S)>,
        S: Into<String>,
    {
        let mut ev = Event::empty(schema);
        for (slot, term) in pairs {
            ev = ev.with(slot, Term::new(term)?)?;
        }
        Ok(ev)
    }

    /// Builds an event from `name=term` style references.
    pub fn from_named<S: AsRef<str>, T: Into<String>>(
        schema: Arc<EventSchema>,
        pairs: impl IntoIterator<Item = (S, T)>,
    ) -> Result<Self> {
        let mut ev = Event::empty(schema);
        for (name, term) in pairs {
            let slot = ev.schema.resolve(name.as_ref())?;
            ev = ev.with(slot, Term::new(term)?)?;
        }
        Ok(ev)
    }

    pub fn with(mut self, slot: usize, term: Term) -> Result<Self> {
        if slot >= self.schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "slot index {slot} outside a schema of {} slots",
                self.schema.len()
            )));
        }
        self.values[slot] = Some(term);
        Ok(self)
    }

    pub fn schema(&self) -> &Arc<EventSchema> {
        &self.schema
    }

    pub fn get(&self, slot: usize) -> Option<&Term> {
        self.values.get(slot).and_then(Option::as_ref)
    }

    pub fn assigned(&self) -> SlotSet {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_some())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_full(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// Restricts the event to `slots`, which must all be assigned.
    pub fn project(&self, slots: SlotSet) -> Result<Event> {
        if !slots.is_subset(self.schema.all()) {
            return Err(Error::SchemaMismatch(format!(
                "projection references slots outside a schema of {} slots",
                self.schema.len()
            )));
        }
        let assigned = self.assigned();
        if !slots.is_subset(assigned) {
            let missing = self.schema.describe(slots.difference(assigned));
            return Err(Error::Projection(format!("slots not assigned: {missing}")));
        }
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| if slots.contains(i) { v.clone() } else { None })
            .collect();
        Ok(Event {
            schema: self.schema.clone(),
            values,
        })
    }

    /// Injective text key: slot values in schema order, absent slots marked.
    pub fn canonical_key(&self) -> String {
        let mut key = String::new();
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                key.push(KEY_SEPARATOR);
            }
            match v {
                Some(t) => key.push_str(t.as_str()),
                None => key.push(ABSENT),
            }
        }
        key
    }

    /// Inverse of [`Event::canonical_key`].
    pub fn from_key(schema: Arc<EventSchema>, key: &str) -> Result<Event> {
        let parts: Vec<&str> = key.split(KEY_SEPARATOR).collect();
        if parts.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "key {key:?} has {} fields, schema has {}",
                parts.len(),
                schema.len()
            )));
        }
        let mut values = Vec::with_capacity(parts.len());
        for p in parts {
            if p.len() == ABSENT.len_utf8() && p.starts_with(ABSENT) {
                values.push(None);
            } else {
                values.push(Some(Term::new(p)?));
            }
        }
        Ok(Event { schema, values })
    }

    /// Combined assignment of two events with disjoint slots on one schema.
    pub fn merge(&self, other: &Event) -> Result<Event> {
        if self.schema != other.schema {
            return Err(Error::SchemaMismatch("merging events of different schemas".into()));
        }
        if !self.assigned().is_disjoint(other.assigned()) {
            return Err(Error::SchemaMismatch("merging events with overlapping slots".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.clone().or_else(|| b.clone()))
            .collect();
        Ok(Event {
            schema: self.schema.clone(),
            values,
        })
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, v) in self.values.iter().enumerate() {
            if let Some(t) = v {
                if !first {
                    f.write_str(" ")?;
                }
                first = false;
                write!(f, "{}={}", self.schema.reference(i), t)?;
            }
        }
        Ok(())
    }
}

/// `Pr(outcome | context)` over one joint schema.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ConditionalQuery {
    pub outcome: Event,
    pub context: Event,
}

impl ConditionalQuery {
    pub fn new(outcome: Event, context: Event) -> Result<Self> {
        if outcome.schema != context.schema {
            return Err(Error::SchemaMismatch(
                "outcome and context use different schemas".into(),
            ));
        }
        if !outcome.assigned().is_disjoint(context.assigned()) {
            return Err(Error::SchemaMismatch(
                "outcome and context assign overlapping slots".into(),
            ));
        }
        Ok(ConditionalQuery { outcome, context })
    }

    /// Splits a joint event into outcome and context parts.
    pub fn split(joint: &Event, outcome: SlotSet, context: SlotSet) -> Result<Self> {
        ConditionalQuery::new(joint.project(outcome)?, joint.project(context)?)
    }

    pub fn schema(&self) -> &Arc<EventSchema> {
        self.outcome.schema()
    }

    pub fn joint(&self) -> Event {
        self.outcome
            .merge(&self.context)
            .expect("query parts are disjoint by construction")
    }

    /// Parses `outcome-assignments | context-assignments`, e.g.
    /// `label=1 | v=is n1=revenue p=from n2=research`.
    pub fn parse(schema: Arc<EventSchema>, text: &str) -> Result<Self> {
        let (lhs, rhs) = text
            .split_once('|')
            .ok_or_else(|| Error::Parse {
                line: 1,
                reason: "query needs 'outcome | context'".into(),
            })?;
        let side = |s: &str| -> Result<Event> {
            let pairs = s
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|tok| {
                    tok.split_once('=').ok_or_else(|| Error::Parse {
                        line: 1,
                        reason: format!("expected slot=term, got {tok:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Event::from_named(schema.clone(), pairs)
        };
        ConditionalQuery::new(side(lhs)?, side(rhs)?)
    }
}

impl fmt::Display for ConditionalQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} | {}", self.outcome, self.context)
    }
}

/// One child sub-event of a factorization: the slots it keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChildProjection {
    /// Outcome slots kept; empty means the full parent outcome is inherited.
    pub outcome: SlotSet,
    pub context: SlotSet,
}

/// A factorization function: how a parent query splits into sub-queries.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProjectionSpec {
    pub children: Vec<ChildProjection>,
}

impl ProjectionSpec {
    pub fn new(children: Vec<ChildProjection>) -> Self {
        ProjectionSpec { children }
    }

    /// Asynchronous factorization keeping the outcome and the given context.
    pub fn keep_context(context: SlotSet) -> Self {
        ProjectionSpec::new(vec![ChildProjection {
            outcome: SlotSet::empty(),
            context,
        }])
    }

    /// Outcome and context slot sets of each child once inheritance is resolved.
    pub fn resolve(&self, parent_outcome: SlotSet) -> Vec<(SlotSet, SlotSet)> {
        self.children
            .iter()
            .map(|c| {
                let outcome = if c.outcome.is_empty() {
                    parent_outcome
                } else {
                    c.outcome
                };
                (outcome, c.context)
            })
            .collect()
    }

    /// Union of all child context slots.
    pub fn coverage(&self) -> SlotSet {
        self.children
            .iter()
            .fold(SlotSet::empty(), |acc, c| acc.union(c.context))
    }
}

/// Splits a query into one sub-query per child of `spec`.
pub fn apply_factorization(
    query: &ConditionalQuery,
    spec: &ProjectionSpec,
) -> Result<Vec<ConditionalQuery>> {
    let out_slots = query.outcome.assigned();
    let ctx_slots = query.context.assigned();
    spec.children
        .iter()
        .map(|child| {
            if !child.outcome.is_subset(out_slots) {
                return Err(Error::Projection(
                    "child outcome slots outside the parent outcome".into(),
                ));
            }
            if !child.context.is_subset(ctx_slots) {
                return Err(Error::Projection(
                    "child context slots outside the parent context".into(),
                ));
            }
            let outcome = if child.outcome.is_empty() {
                query.outcome.clone()
            } else {
                query.outcome.project(child.outcome)?
            };
            let context = query.context.project(child.context)?;
            Ok(ConditionalQuery { outcome, context })
        })
        .collect()
}
