//! Generalized Katz back-off over a lattice.
//!
//! At every node a query `Pr_bo(o | c)` takes one of three branches:
//!
//! * `C(o c) > K`: the relative frequency `C(o c) / C(c)`;
//! * `1 <= C(o c) <= K`: the Good-Turing discounted frequency;
//! * `C(o c) = 0`: `α(c) · MIXTURE(o | c)`, where the mixture combines the
//!   node's factorization edges and recurses into the child nodes.
//!
//! `α(c)` hands the mass reserved by discounting to the unseen outcomes:
//!
//! ```text
//! α(c) = (1 - Σ_{o seen} Pr_bo(o | c)) / Σ_{o unseen} MIXTURE(o | c)
//! ```
//!
//! with both sums taken over the node's closed outcome vocabulary. Leaves
//! back off to the uniform distribution over that vocabulary.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::counts::{count_of_counts, ingest, CountTable, Observation};
use crate::error::{Error, Result};
use crate::estimation::{good_turing_discounts, DiscountTable, DEFAULT_K};
use crate::events::{ConditionalQuery, Event};
use crate::lattice::{EdgeId, Lattice, NodeId};
use crate::mixture::{
    combine, edge_values, em_fit, node_items, CombineMode, EmOptions, HeldOutSet, MixtureWeights,
    NodeTraining,
};
use crate::scalar::Scalar;

/// Unseen mixture mass at or below this is treated as singular.
pub const SINGULAR_MASS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Discounting threshold used unless a node overrides it.
    pub k: u64,
    #[serde(default)]
    pub node_k: BTreeMap<NodeId, u64>,
    /// Leaves back off to a uniform distribution; when off they give zero.
    pub uniform_fallback: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: DEFAULT_K,
            node_k: BTreeMap::new(),
            uniform_fallback: true,
        }
    }
}

impl ModelConfig {
    pub fn with_k(k: u64) -> Self {
        ModelConfig {
            k,
            ..Default::default()
        }
    }

    pub fn k_for(&self, node: NodeId) -> u64 {
        self.node_k.get(&node).copied().unwrap_or(self.k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaKind {
    /// `α = reserved / unseen mixture mass`.
    Scale,
    /// The mixture puts (almost) no mass on unseen outcomes; the reserved mass
    /// is spread evenly over them instead.
    Uniform,
    /// Every vocabulary outcome was seen with this context.
    NoUnseen,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaValue<T> {
    pub alpha: T,
    /// `1 - Σ_seen Pr_bo`.
    pub reserved: T,
    /// `Σ_unseen MIXTURE`.
    pub unseen_mixture: T,
    pub unseen: usize,
    pub kind: AlphaKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Mle,
    Discounted,
    Backoff,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Mle => "MLE",
            Branch::Discounted => "discounted",
            Branch::Backoff => "alpha*MIXTURE",
        })
    }
}

type ProbKey = (CombineMode, NodeId, String, String);
type AlphaKey = (CombineMode, NodeId, String);

/// A finalized back-off model; immutable apart from its internal caches.
pub struct Model<T> {
    lattice: Lattice,
    counts: Vec<CountTable>,
    discounts: Vec<DiscountTable<T>>,
    weights: MixtureWeights<T>,
    vocab: Vec<BTreeMap<String, Event>>,
    config: ModelConfig,
    prob_cache: RwLock<HashMap<ProbKey, T>>,
    alpha_cache: RwLock<HashMap<AlphaKey, AlphaValue<T>>>,
}

impl<T: Scalar> Clone for Model<T> {
    fn clone(&self) -> Self {
        Model {
            lattice: self.lattice.clone(),
            counts: self.counts.clone(),
            discounts: self.discounts.clone(),
            weights: self.weights.clone(),
            vocab: self.vocab.clone(),
            config: self.config.clone(),
            prob_cache: RwLock::default(),
            alpha_cache: RwLock::default(),
        }
    }
}

impl<T> fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("nodes", &self.lattice.nodes().len())
            .field("edges", &self.lattice.edges().len())
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> Model<T> {
    /// Builds a model from per-node count tables, computing discounts and
    /// vocabularies. Edge weights start at the lattice priors.
    pub fn new(lattice: Lattice, counts: Vec<CountTable>, config: ModelConfig) -> Result<Self> {
        if counts.len() != lattice.nodes().len() {
            return Err(Error::InvalidArgument(format!(
                "{} count tables for {} nodes",
                counts.len(),
                lattice.nodes().len()
            )));
        }
        let discounts = counts
            .iter()
            .map(|t| {
                let k = config.k_for(t.node);
                if k == 0 {
                    DiscountTable::identity()
                } else {
                    good_turing_discounts(&count_of_counts(t, k), k)
                }
            })
            .collect();
        let mut vocab = Vec::with_capacity(counts.len());
        for t in &counts {
            let mut v = BTreeMap::new();
            for key in t.outcome_support() {
                v.insert(key.clone(), Event::from_key(lattice.schema().clone(), key)?);
            }
            vocab.push(v);
        }
        let weights = MixtureWeights::from_lattice(&lattice);
        Ok(Model {
            lattice,
            counts,
            discounts,
            weights,
            vocab,
            config,
            prob_cache: RwLock::default(),
            alpha_cache: RwLock::default(),
        })
    }

    pub fn from_observations(
        lattice: Lattice,
        observations: &[Observation],
        config: ModelConfig,
    ) -> Result<Self> {
        let counts = ingest(observations, &lattice)?;
        Model::new(lattice, counts, config)
    }

    /// Reassembles a model from stored components without recomputation.
    pub fn from_parts(
        lattice: Lattice,
        counts: Vec<CountTable>,
        discounts: Vec<DiscountTable<T>>,
        weights: MixtureWeights<T>,
        vocab: Vec<Vec<String>>,
        config: ModelConfig,
    ) -> Result<Self> {
        let n = lattice.nodes().len();
        if counts.len() != n || discounts.len() != n || vocab.len() != n {
            return Err(Error::InvalidArgument("per-node components do not match the lattice".into()));
        }
        weights.check(&lattice)?;
        let vocab = vocab
            .into_iter()
            .map(|keys| {
                keys.into_iter()
                    .map(|k| {
                        let ev = Event::from_key(lattice.schema().clone(), &k)?;
                        Ok((k, ev))
                    })
                    .collect::<Result<BTreeMap<_, _>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            lattice,
            counts,
            discounts,
            weights,
            vocab,
            config,
            prob_cache: RwLock::default(),
            alpha_cache: RwLock::default(),
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn counts(&self) -> &[CountTable] {
        &self.counts
    }

    pub fn discounts(&self) -> &[DiscountTable<T>] {
        &self.discounts
    }

    pub fn weights(&self) -> &MixtureWeights<T> {
        &self.weights
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn root(&self) -> NodeId {
        self.lattice.root()
    }

    /// Outcome keys of the node's closed vocabulary, in key order.
    pub fn vocabulary(&self, node: NodeId) -> impl Iterator<Item = &str> {
        self.vocab[node].keys().map(String::as_str)
    }

    pub fn vocabulary_size(&self, node: NodeId) -> usize {
        self.vocab[node].len()
    }

    pub fn in_vocabulary(&self, node: NodeId, outcome: &Event) -> bool {
        self.vocab[node].contains_key(&outcome.canonical_key())
    }

    /// Adds outcomes (projected onto each node) to every node's vocabulary.
    pub fn declare_outcomes<'a>(&mut self, outcomes: impl IntoIterator<Item = &'a Event>) -> Result<()> {
        let root = self.lattice.node(self.root()).outcome;
        for ev in outcomes {
            if ev.schema().as_ref() != self.lattice.schema().as_ref() || ev.assigned() != root {
                return Err(Error::SchemaMismatch(format!(
                    "declared outcome {ev} does not match the root outcome slots"
                )));
            }
            for node in self.lattice.nodes() {
                let p = ev.project(node.outcome)?;
                self.vocab[node.id].insert(p.canonical_key(), p);
            }
        }
        self.clear_cache();
        Ok(())
    }

    pub fn set_weights(&mut self, weights: MixtureWeights<T>) -> Result<()> {
        weights.check(&self.lattice)?;
        self.weights = weights;
        self.clear_cache();
        Ok(())
    }

    /// Drops every memoized probability and α.
    pub fn clear_cache(&self) {
        self.prob_cache.write().expect("cache lock").clear();
        self.alpha_cache.write().expect("cache lock").clear();
    }

    /// EM-trains the weights of every node with several edges, children
    /// first, so each node sees its descendants' final weights.
    pub fn train_weights(
        &mut self,
        heldout: &HeldOutSet,
        opts: &EmOptions,
    ) -> Result<Vec<NodeTraining<T>>> {
        let order = self
            .lattice
            .topological_order()
            .ok_or_else(|| Error::InvalidLattice("cycle".into()))?;
        let mut report = Vec::new();
        for &node in order.iter().rev() {
            if self.lattice.out_edges(node).len() < 2 {
                continue;
            }
            let (values, mult) = node_items(&self.lattice, heldout, node, |child, q| {
                self.prob_keyed(CombineMode::Mixture, child, q)
            })?;
            let fit = em_fit(&values, &mult, &self.weights.node_weights(&self.lattice, node), opts);
            if fit.flagged {
                log::warn!("node {node}: no held-out item has positive probability; prior weights kept");
            }
            self.weights.set_node_weights(&self.lattice, node, &fit.weights);
            self.forget_node(node);
            report.push(NodeTraining { node, fit });
        }
        Ok(report)
    }

    fn forget_node(&self, node: NodeId) {
        self.prob_cache
            .write()
            .expect("cache lock")
            .retain(|k, _| k.1 != node);
        self.alpha_cache
            .write()
            .expect("cache lock")
            .retain(|k, _| k.1 != node);
    }

    /// Projects a root-level query onto `node`.
    pub fn query_at(&self, node: NodeId, query: &ConditionalQuery) -> Result<ConditionalQuery> {
        let n = self.lattice.node(node);
        ConditionalQuery::new(query.outcome.project(n.outcome)?, query.context.project(n.context)?)
    }

    fn check_query(&self, node: NodeId, query: &ConditionalQuery) -> Result<()> {
        if node >= self.lattice.nodes().len() {
            return Err(Error::InvalidArgument(format!("no node {node}")));
        }
        let n = self.lattice.node(node);
        if query.schema().as_ref() != self.lattice.schema().as_ref() {
            return Err(Error::SchemaMismatch("query schema differs from the model's".into()));
        }
        if query.outcome.assigned() != n.outcome || query.context.assigned() != n.context {
            return Err(Error::SchemaMismatch(format!(
                "query {query} does not match the slots of node {node}"
            )));
        }
        Ok(())
    }

    /// `Pr_bo(outcome | context)` at `node`.
    pub fn prob(&self, node: NodeId, query: &ConditionalQuery) -> Result<T> {
        self.prob_with(CombineMode::Mixture, node, query)
    }

    pub fn prob_with(&self, mode: CombineMode, node: NodeId, query: &ConditionalQuery) -> Result<T> {
        self.check_query(node, query)?;
        self.prob_keyed(mode, node, query)
    }

    /// Back-off weight of `context` at `node`.
    pub fn alpha(&self, node: NodeId, context: &Event) -> Result<AlphaValue<T>> {
        self.alpha_with(CombineMode::Mixture, node, context)
    }

    pub fn alpha_with(&self, mode: CombineMode, node: NodeId, context: &Event) -> Result<AlphaValue<T>> {
        if context.assigned() != self.lattice.node(node).context {
            return Err(Error::SchemaMismatch(format!(
                "context does not match the slots of node {node}"
            )));
        }
        self.alpha_keyed(mode, node, context, &context.canonical_key())
    }

    /// `MIXTURE(outcome | context)` at `node`; the uniform distribution at leaves.
    pub fn mixture(&self, mode: CombineMode, node: NodeId, query: &ConditionalQuery) -> Result<T> {
        self.check_query(node, query)?;
        self.mixture_value(mode, node, query)
    }

    /// `Pr_bo` of every vocabulary outcome given `context`.
    pub fn full_distribution(&self, node: NodeId, context: &Event) -> Result<BTreeMap<String, T>> {
        self.full_distribution_with(CombineMode::Mixture, node, context)
    }

    pub fn full_distribution_with(
        &self,
        mode: CombineMode,
        node: NodeId,
        context: &Event,
    ) -> Result<BTreeMap<String, T>> {
        let mut out = BTreeMap::new();
        for (key, ev) in &self.vocab[node] {
            let q = ConditionalQuery::new(ev.clone(), context.clone())?;
            out.insert(key.clone(), self.prob_with(mode, node, &q)?);
        }
        Ok(out)
    }

    fn tolerance() -> T {
        T::lit(SINGULAR_MASS).max(T::epsilon() * T::lit(64.0))
    }

    fn seen_value(&self, node: NodeId, context_key: &str, joint: u64) -> (Branch, T) {
        let table = &self.counts[node];
        let ratio = T::from_count(joint) / T::from_count(table.marginal(context_key));
        let discounts = &self.discounts[node];
        // With no unseen outcome left there is nobody to reserve mass for.
        let reserving = table.num_seen(context_key) < self.vocab[node].len();
        if joint > discounts.k() || !reserving {
            (Branch::Mle, ratio)
        } else {
            (Branch::Discounted, discounts.beta(joint) * ratio)
        }
    }

    fn prob_keyed(&self, mode: CombineMode, node: NodeId, query: &ConditionalQuery) -> Result<T> {
        let ok = query.outcome.canonical_key();
        let ck = query.context.canonical_key();
        let key = (mode, node, ok, ck);
        if let Some(&v) = self.prob_cache.read().expect("cache lock").get(&key) {
            return Ok(v);
        }
        let joint = self.counts[node].joint(&key.2, &key.3);
        let value = if joint > 0 {
            self.seen_value(node, &key.3, joint).1
        } else {
            self.unseen_value(mode, node, query, &key.2, &key.3)?
        };
        self.prob_cache
            .write()
            .expect("cache lock")
            .entry(key)
            .or_insert(value);
        Ok(value)
    }

    fn unseen_value(
        &self,
        mode: CombineMode,
        node: NodeId,
        query: &ConditionalQuery,
        outcome_key: &str,
        context_key: &str,
    ) -> Result<T> {
        if self.lattice.is_leaf(node) && self.vocab[node].is_empty() {
            return Err(Error::EmptyVocabulary(node));
        }
        let a = self.alpha_keyed(mode, node, &query.context, context_key)?;
        Ok(match a.kind {
            AlphaKind::NoUnseen => T::zero(),
            AlphaKind::Uniform => {
                if self.vocab[node].contains_key(outcome_key) {
                    a.reserved / T::from_count(a.unseen as u64)
                } else {
                    T::zero()
                }
            }
            AlphaKind::Scale if a.alpha == T::zero() => T::zero(),
            AlphaKind::Scale => a.alpha * self.mixture_value(mode, node, query)?,
        })
    }

    fn mixture_value(&self, mode: CombineMode, node: NodeId, query: &ConditionalQuery) -> Result<T> {
        if self.lattice.is_leaf(node) {
            let v = &self.vocab[node];
            if v.is_empty() {
                return Err(Error::EmptyVocabulary(node));
            }
            if !self.config.uniform_fallback || !v.contains_key(&query.outcome.canonical_key()) {
                return Ok(T::zero());
            }
            return Ok(T::one() / T::from_count(v.len() as u64));
        }
        let values = edge_values(&self.lattice, node, query, |child, q| {
            self.prob_keyed(mode, child, q)
        })?;
        Ok(combine(
            &values,
            &self.weights.node_weights(&self.lattice, node),
            mode,
        ))
    }

    fn alpha_keyed(
        &self,
        mode: CombineMode,
        node: NodeId,
        context: &Event,
        context_key: &str,
    ) -> Result<AlphaValue<T>> {
        let key = (mode, node, context_key.to_owned());
        if let Some(&a) = self.alpha_cache.read().expect("cache lock").get(&key) {
            return Ok(a);
        }
        let table = &self.counts[node];
        let mut seen_mass = T::zero();
        for (_, c) in table.seen(context_key) {
            seen_mass = seen_mass + self.seen_value(node, context_key, c).1;
        }
        let mut reserved = T::one() - seen_mass;
        let unseen: Vec<&Event> = self.vocab[node]
            .iter()
            .filter(|(k, _)| table.joint(k, context_key) == 0)
            .map(|(_, e)| e)
            .collect();
        let tol = Self::tolerance();
        let value = if unseen.is_empty() {
            AlphaValue {
                alpha: T::zero(),
                reserved,
                unseen_mixture: T::zero(),
                unseen: 0,
                kind: AlphaKind::NoUnseen,
            }
        } else {
            let mut unseen_mixture = T::zero();
            for ev in &unseen {
                let q = ConditionalQuery::new((*ev).clone(), context.clone())?;
                unseen_mixture = unseen_mixture + self.mixture_value(mode, node, &q)?;
            }
            if reserved < -tol || unseen_mixture < -tol {
                return Err(Error::NormalizationDefect {
                    node,
                    seen_mass: seen_mass.as_f64(),
                    unseen_mixture: unseen_mixture.as_f64(),
                });
            }
            reserved = reserved.max(T::zero());
            if unseen_mixture <= tol && reserved > T::zero() && self.config.uniform_fallback {
                log::debug!(
                    "node {node}: mixture leaves {unseen_mixture} for unseen outcomes; spreading reserved mass uniformly"
                );
                AlphaValue {
                    alpha: T::zero(),
                    reserved,
                    unseen_mixture,
                    unseen: unseen.len(),
                    kind: AlphaKind::Uniform,
                }
            } else {
                let alpha = if unseen_mixture > T::zero() {
                    reserved / unseen_mixture
                } else {
                    T::zero()
                };
                AlphaValue {
                    alpha,
                    reserved,
                    unseen_mixture,
                    unseen: unseen.len(),
                    kind: AlphaKind::Scale,
                }
            }
        };
        self.alpha_cache
            .write()
            .expect("cache lock")
            .entry(key)
            .or_insert(value);
        Ok(value)
    }

    /// Evaluates `query` at `node` and records which branch fired at every
    /// visited node together with α values and per-edge contributions.
    pub fn explain(&self, mode: CombineMode, node: NodeId, query: &ConditionalQuery) -> Result<Trace<T>> {
        self.check_query(node, query)?;
        self.explain_inner(mode, node, query)
    }

    fn explain_inner(&self, mode: CombineMode, node: NodeId, query: &ConditionalQuery) -> Result<Trace<T>> {
        let ok = query.outcome.canonical_key();
        let ck = query.context.canonical_key();
        let table = &self.counts[node];
        let joint = table.joint(&ok, &ck);
        let context_count = table.marginal(&ck);
        let value = self.prob_keyed(mode, node, query)?;
        let mut trace = Trace {
            node,
            query: query.to_string(),
            branch: Branch::Backoff,
            joint,
            context_count,
            value,
            alpha: None,
            mixture: None,
            edges: Vec::new(),
        };
        if joint > 0 {
            trace.branch = self.seen_value(node, &ck, joint).0;
            return Ok(trace);
        }
        trace.alpha = Some(self.alpha_keyed(mode, node, &query.context, &ck)?);
        trace.mixture = Some(self.mixture_value(mode, node, query)?);
        for &e in self.lattice.out_edges(node) {
            let edge = self.lattice.edge(e);
            let kids = crate::events::apply_factorization(query, &edge.spec)?;
            let mut children = Vec::new();
            let mut v = T::one();
            for (&child, q) in edge.children.iter().zip(&kids) {
                let t = self.explain_inner(mode, child, q)?;
                v = v * t.value;
                children.push(t);
            }
            trace.edges.push(EdgeTrace {
                edge: e,
                weight: self.weights.get(e),
                value: v,
                children,
            });
        }
        Ok(trace)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeTrace<T> {
    pub edge: EdgeId,
    pub weight: T,
    pub value: T,
    pub children: Vec<Trace<T>>,
}

/// Evaluation record of one query at one node.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace<T> {
    pub node: NodeId,
    pub query: String,
    pub branch: Branch,
    pub joint: u64,
    pub context_count: u64,
    pub value: T,
    pub alpha: Option<AlphaValue<T>>,
    pub mixture: Option<T>,
    pub edges: Vec<EdgeTrace<T>>,
}

impl<T: Scalar> Trace<T> {
    /// Distinct nodes visited anywhere in the trace.
    pub fn visited_nodes(&self) -> std::collections::BTreeSet<NodeId> {
        let mut out = std::collections::BTreeSet::new();
        let mut stack = vec![self];
        while let Some(t) = stack.pop() {
            out.insert(t.node);
            for e in &t.edges {
                stack.extend(e.children.iter());
            }
        }
        out
    }

    fn render(&self, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        let _ = writeln!(
            out,
            "{pad}node {} [{}] {}  C={} C(ctx)={}  p={:e}",
            self.node, self.branch, self.query, self.joint, self.context_count, self.value
        );
        if let Some(a) = &self.alpha {
            let _ = writeln!(
                out,
                "{pad}  alpha={:e} ({:?}) reserved={:e} unseen-mixture={:e} over {} unseen",
                a.alpha, a.kind, a.reserved, a.unseen_mixture, a.unseen
            );
        }
        if let Some(m) = self.mixture {
            let _ = writeln!(out, "{pad}  mixture={m:e}");
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "{pad}  edge {} weight={:e} value={:e} contribution={:e}",
                e.edge,
                e.weight,
                e.value,
                e.weight * e.value
            );
            for c in &e.children {
                c.render(depth + 2, out);
            }
        }
    }
}

impl<T: Scalar> fmt::Display for Trace<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.render(0, &mut s);
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::events::{EventSchema, SlotSet, Term};
    use crate::lattice::{build_dropone, build_ngram_chain};

    fn bigram_obs(l: &Lattice, pairs: &[(&str, &str, u64)]) -> Vec<Observation> {
        let s = l.schema().clone();
        pairs
            .iter()
            .map(|&(h, w, m)| {
                Observation::with_multiplicity(
                    ConditionalQuery::new(
                        Event::from_pairs(s.clone(), [(1, w)]).unwrap(),
                        Event::from_pairs(s.clone(), [(0, h)]).unwrap(),
                    )
                    .unwrap(),
                    m,
                )
            })
            .collect()
    }

    fn bq(l: &Lattice, h: &str, w: &str) -> ConditionalQuery {
        let s = l.schema().clone();
        ConditionalQuery::new(
            Event::from_pairs(s.clone(), [(1, w)]).unwrap(),
            Event::from_pairs(s, [(0, h)]).unwrap(),
        )
        .unwrap()
    }

    fn sums_to_one(m: &Model<f64>, node: NodeId, ctx: &Event) {
        let d = m.full_distribution(node, ctx).unwrap();
        let s: f64 = d.values().sum();
        assert!((s - 1.0).abs() < 1e-9, "node {node} ctx {ctx}: {s}");
    }

    #[test]
    fn mle_branch_above_threshold() {
        let l = build_ngram_chain(2).unwrap();
        let obs = bigram_obs(&l, &[("a", "x", 10), ("a", "y", 10), ("b", "z", 1)]);
        let m = Model::<f64>::from_observations(l.clone(), &obs, ModelConfig::default()).unwrap();
        assert_eq!(m.prob(0, &bq(&l, "a", "x")).unwrap(), 0.5);
        let t = m.explain(CombineMode::Mixture, 0, &bq(&l, "a", "x")).unwrap();
        assert_eq!(t.branch, Branch::Mle);
        assert!(t.edges.is_empty());
    }

    #[test]
    fn normalization_on_small_bigram_model() {
        let l = build_ngram_chain(2).unwrap();
        let obs = bigram_obs(
            &l,
            &[("a", "b", 3), ("a", "c", 1), ("b", "a", 2), ("b", "c", 7), ("c", "a", 1), ("c", "d", 1)],
        );
        let m = Model::<f64>::from_observations(l.clone(), &obs, ModelConfig::default()).unwrap();
        for h in ["a", "b", "c", "d", "zz"] {
            let ctx = Event::from_pairs(l.schema().clone(), [(0, h)]).unwrap();
            sums_to_one(&m, 0, &ctx);
        }
        sums_to_one(&m, 1, &Event::empty(l.schema().clone()));
    }

    #[test]
    fn alpha_is_one_without_seen_outcomes() {
        let l = build_ngram_chain(2).unwrap();
        let obs = bigram_obs(&l, &[("a", "b", 3), ("b", "a", 1)]);
        let m = Model::<f64>::from_observations(l.clone(), &obs, ModelConfig::default()).unwrap();
        let ctx = Event::from_pairs(l.schema().clone(), [(0, "never")]).unwrap();
        let a = m.alpha(0, &ctx).unwrap();
        assert_eq!(a.kind, AlphaKind::Scale);
        assert!((a.alpha - 1.0).abs() < 1e-15);
        assert_eq!(a.reserved, 1.0);
    }

    #[test]
    fn uniform_leaf() {
        let l = build_ngram_chain(1).unwrap();
        let mut m = Model::<f64>::new(l.clone(), ingest(&[], &l).unwrap(), ModelConfig::default()).unwrap();
        let s = l.schema().clone();
        let outs: Vec<Event> = ["a", "b", "c", "d"]
            .iter()
            .map(|w| Event::from_pairs(s.clone(), [(0, *w)]).unwrap())
            .collect();
        m.declare_outcomes(&outs).unwrap();
        let d = m.full_distribution(0, &Event::empty(s)).unwrap();
        assert_eq!(d.len(), 4);
        assert!(d.values().all(|&p| p == 0.25));
    }

    #[test]
    fn empty_leaf_vocabulary_is_an_error() {
        let l = build_ngram_chain(1).unwrap();
        let m = Model::<f64>::new(l.clone(), ingest(&[], &l).unwrap(), ModelConfig::default()).unwrap();
        let q = ConditionalQuery::new(
            Event::from_pairs(l.schema().clone(), [(0, "a")]).unwrap(),
            Event::empty(l.schema().clone()),
        )
        .unwrap();
        assert!(matches!(m.prob(0, &q), Err(Error::EmptyVocabulary(0))));
    }

    #[test]
    fn relative_frequencies_when_all_counts_exceed_k() {
        let l = build_ngram_chain(1).unwrap();
        let s = l.schema().clone();
        let obs: Vec<Observation> = [("a", 6), ("b", 9), ("c", 15)]
            .iter()
            .map(|&(w, c)| {
                Observation::with_multiplicity(
                    ConditionalQuery::new(Event::from_pairs(s.clone(), [(0, w)]).unwrap(), Event::empty(s.clone()))
                        .unwrap(),
                    c,
                )
            })
            .collect();
        let m = Model::<f64>::from_observations(l, &obs, ModelConfig::default()).unwrap();
        let d = m.full_distribution(0, &Event::empty(s)).unwrap();
        let v: Vec<f64> = d.values().copied().collect();
        assert_eq!(v, vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn all_outcomes_seen_disables_discounting() {
        let l = build_ngram_chain(1).unwrap();
        let s = l.schema().clone();
        let obs: Vec<Observation> = [("a", 1), ("b", 2)]
            .iter()
            .map(|&(w, c)| {
                Observation::with_multiplicity(
                    ConditionalQuery::new(Event::from_pairs(s.clone(), [(0, w)]).unwrap(), Event::empty(s.clone()))
                        .unwrap(),
                    c,
                )
            })
            .collect();
        let m = Model::<f64>::from_observations(l, &obs, ModelConfig::default()).unwrap();
        let ctx = Event::empty(s);
        let d = m.full_distribution(0, &ctx).unwrap();
        assert_eq!(d.values().copied().collect::<Vec<_>>(), vec![1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(m.alpha(0, &ctx).unwrap().kind, AlphaKind::NoUnseen);
    }

    #[test]
    fn uniform_fallback_off_gives_zero() {
        let l = build_ngram_chain(1).unwrap();
        let s = l.schema().clone();
        let obs = vec![Observation::new(
            ConditionalQuery::new(Event::from_pairs(s.clone(), [(0, "a")]).unwrap(), Event::empty(s.clone())).unwrap(),
        )];
        let config = ModelConfig {
            uniform_fallback: false,
            ..Default::default()
        };
        let mut m = Model::<f64>::from_observations(l, &obs, config).unwrap();
        m.declare_outcomes(&[Event::from_pairs(s.clone(), [(0, "b")]).unwrap()]).unwrap();
        let q = ConditionalQuery::new(Event::from_pairs(s.clone(), [(0, "b")]).unwrap(), Event::empty(s)).unwrap();
        assert_eq!(m.prob(0, &q).unwrap(), 0.0);
    }

    #[test]
    fn dropone_hand_unrolled() {
        // y | a b with both context slots droppable, min_context 0
        let schema = Arc::new(EventSchema::flat(&["y", "a", "b"]).unwrap());
        let l = build_dropone(schema.clone(), SlotSet::empty().with(0), 0).unwrap();
        let rows = [("u", "a1", "b1", 1), ("v", "a1", "b2", 2), ("w", "a2", "b1", 1), ("u", "a2", "b2", 3)];
        let obs: Vec<Observation> = rows
            .iter()
            .map(|&(y, a, b, m)| {
                Observation::with_multiplicity(
                    ConditionalQuery::new(
                        Event::from_pairs(schema.clone(), [(0, y)]).unwrap(),
                        Event::from_pairs(schema.clone(), [(1, a), (2, b)]).unwrap(),
                    )
                    .unwrap(),
                    m,
                )
            })
            .collect();
        let model = Model::<f64>::from_observations(l.clone(), &obs, ModelConfig::default()).unwrap();
        let q = ConditionalQuery::new(
            Event::from_pairs(schema.clone(), [(0, "w")]).unwrap(),
            Event::from_pairs(schema.clone(), [(1, "a1"), (2, "b1")]).unwrap(),
        )
        .unwrap();
        let t = model.explain(CombineMode::Mixture, 0, &q).unwrap();
        assert_eq!(t.branch, Branch::Backoff);
        assert_eq!(t.edges.len(), 2);
        let mix = 0.5 * t.edges[0].value + 0.5 * t.edges[1].value;
        assert!((t.mixture.unwrap() - mix).abs() < 1e-15);
        assert!((t.value - t.alpha.unwrap().alpha * mix).abs() < 1e-15);
        for ctx in [
            Event::from_pairs(schema.clone(), [(1, "a1"), (2, "b1")]).unwrap(),
            Event::from_pairs(schema.clone(), [(1, "a2"), (2, "b9")]).unwrap(),
        ] {
            sums_to_one(&model, 0, &ctx);
        }
        assert!(t.visited_nodes().len() <= l.nodes().len());
    }

    #[test]
    fn cache_is_transparent() {
        let l = build_ngram_chain(2).unwrap();
        let obs = bigram_obs(&l, &[("a", "b", 2), ("a", "c", 1), ("b", "a", 1), ("c", "c", 4)]);
        let m = Model::<f64>::from_observations(l.clone(), &obs, ModelConfig::default()).unwrap();
        let queries: Vec<_> = ["a", "b", "c"]
            .iter()
            .flat_map(|h| ["a", "b", "c"].iter().map(|w| bq(&l, h, w)).collect::<Vec<_>>())
            .collect();
        let first: Vec<u64> = queries.iter().map(|q| m.prob(0, q).unwrap().to_bits()).collect();
        m.clear_cache();
        let second: Vec<u64> = queries.iter().rev().map(|q| m.prob(0, q).unwrap().to_bits()).collect();
        assert_eq!(first, second.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn rejects_mismatched_query() {
        let l = build_ngram_chain(2).unwrap();
        let obs = bigram_obs(&l, &[("a", "b", 2)]);
        let m = Model::<f64>::from_observations(l.clone(), &obs, ModelConfig::default()).unwrap();
        assert!(matches!(m.prob(1, &bq(&l, "a", "b")), Err(Error::SchemaMismatch(_))));
        let q = ConditionalQuery::new(
            Event::empty(l.schema().clone()).with(1, Term::new("b").unwrap()).unwrap(),
            Event::empty(l.schema().clone()),
        )
        .unwrap();
        assert!(m.prob(1, &q).is_ok());
    }

    #[test]
    fn concurrent_queries_agree() {
        let l = build_ngram_chain(2).unwrap();
        let obs = bigram_obs(&l, &[("a", "b", 2), ("a", "c", 1), ("b", "a", 1), ("c", "c", 4)]);
        let m = Model::<f64>::from_observations(l.clone(), &obs, ModelConfig::default()).unwrap();
        let q = bq(&l, "b", "c");
        let want = m.clone().prob(0, &q).unwrap();
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| assert_eq!(m.prob(0, &q).unwrap(), want));
            }
        });
    }

    #[test]
    fn f32_model() {
        let l = build_ngram_chain(2).unwrap();
        let obs = bigram_obs(&l, &[("a", "b", 2), ("a", "c", 1), ("b", "a", 1)]);
        let m = Model::<f32>::from_observations(l.clone(), &obs, ModelConfig::default()).unwrap();
        let ctx = Event::from_pairs(l.schema().clone(), [(0, "a")]).unwrap();
        let s: f32 = m.full_distribution(0, &ctx).unwrap().values().sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
}
