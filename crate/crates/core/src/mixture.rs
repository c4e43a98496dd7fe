//! Mixtures of factored models and EM training of their weights.
//!
//! At a node with factorization edges `Φ_1 .. Φ_I` the conditional mixture is
//!
//! ```text
//! MIXTURE(o | c) = Σ_i Pr(Φ_i) · P_i(o | c),   P_i = Π_j Pr(child_ij)
//! ```
//!
//! where the product runs over the sub-queries of edge `i` when the edge
//! assumes independence, and is the single child probability otherwise.

use serde::{Deserialize, Serialize};

use crate::counts::Observation;
use crate::error::{Error, Result};
use crate::events::{apply_factorization, ConditionalQuery};
use crate::lattice::{EdgeId, Lattice, NodeId, WEIGHT_SUM_TOLERANCE};
use crate::scalar::Scalar;

/// How the factored estimates of a node are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineMode {
    /// Weighted sum over edges.
    #[default]
    Mixture,
    /// Largest edge value; weights ignored.
    MaxPath,
}

/// `Pr(Φ)` for every edge, indexed by edge id.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureWeights<T> {
    weights: Vec<T>,
}

impl<T: Scalar> MixtureWeights<T> {
    /// The lattice's own prior weights.
    pub fn from_lattice(lattice: &Lattice) -> Self {
        MixtureWeights {
            weights: lattice.edges().iter().map(|e| T::lit(e.weight)).collect(),
        }
    }

    pub fn from_vec(lattice: &Lattice, weights: Vec<T>) -> Result<Self> {
        let w = MixtureWeights { weights };
        w.check(lattice)?;
        Ok(w)
    }

    pub fn get(&self, edge: EdgeId) -> T {
        self.weights[edge]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.weights
    }

    pub fn node_weights(&self, lattice: &Lattice, node: NodeId) -> Vec<T> {
        lattice.out_edges(node).iter().map(|&e| self.weights[e]).collect()
    }

    pub fn set_node_weights(&mut self, lattice: &Lattice, node: NodeId, weights: &[T]) {
        for (&e, &w) in lattice.out_edges(node).iter().zip(weights) {
            self.weights[e] = w;
        }
    }

    /// Every weight in `[0, 1]` and each parent's weights sum to one.
    pub fn check(&self, lattice: &Lattice) -> Result<()> {
        if self.weights.len() != lattice.edges().len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} edges",
                self.weights.len(),
                lattice.edges().len()
            )));
        }
        for node in lattice.nodes() {
            let ws = self.node_weights(lattice, node.id);
            if ws.is_empty() {
                continue;
            }
            if ws.iter().any(|w| !(*w >= T::zero() && *w <= T::one())) {
                return Err(Error::InvalidArgument(format!(
                    "node {} has a weight outside [0, 1]",
                    node.id
                )));
            }
            let sum = ws.iter().fold(T::zero(), |a, &b| a + b).as_f64();
            let tol = WEIGHT_SUM_TOLERANCE.max(64.0 * T::epsilon().as_f64());
            if (sum - 1.0).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "node {} weights sum to {sum}",
                    node.id
                )));
            }
        }
        Ok(())
    }
}

/// Value of one factorization edge: product over independent children or
/// the single child's probability.
pub fn edge_value<T, F>(
    lattice: &Lattice,
    edge: EdgeId,
    query: &ConditionalQuery,
    child_prob: &mut F,
) -> Result<T>
where
    T: Scalar,
    F: FnMut(NodeId, &ConditionalQuery) -> Result<T>,
{
    let e = lattice.edge(edge);
    let kids = apply_factorization(query, &e.spec)?;
    let mut value = T::one();
    for (&child, q) in e.children.iter().zip(&kids) {
        let p = child_prob(child, q)?;
        if !(p >= T::zero() && p <= T::one()) {
            return Err(Error::Precondition(format!(
                "child probability {p} at node {child} outside [0, 1]"
            )));
        }
        value = value * p;
    }
    Ok(value)
}

/// Values of every outgoing edge of `node`, in edge order.
pub fn edge_values<T, F>(
    lattice: &Lattice,
    node: NodeId,
    query: &ConditionalQuery,
    mut child_prob: F,
) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(NodeId, &ConditionalQuery) -> Result<T>,
{
    lattice
        .out_edges(node)
        .iter()
        .map(|&e| edge_value(lattice, e, query, &mut child_prob))
        .collect()
}

/// Combines per-edge values under `mode`.
pub fn combine<T: Scalar>(values: &[T], weights: &[T], mode: CombineMode) -> T {
    match mode {
        CombineMode::Mixture => values
            .iter()
            .zip(weights)
            .fold(T::zero(), |acc, (&v, &w)| acc + w * v),
        CombineMode::MaxPath => values.iter().fold(T::zero(), |acc, &v| acc.max(v)),
    }
}

/// Mixture of the factored models of `node` for `query`.
pub fn evaluate<T, F>(
    lattice: &Lattice,
    node: NodeId,
    query: &ConditionalQuery,
    child_prob: F,
    weights: &MixtureWeights<T>,
    mode: CombineMode,
) -> Result<T>
where
    T: Scalar,
    F: FnMut(NodeId, &ConditionalQuery) -> Result<T>,
{
    if lattice.is_leaf(node) {
        return Err(Error::LeafNode(node));
    }
    let values = edge_values(lattice, node, query, child_prob)?;
    Ok(combine(&values, &weights.node_weights(lattice, node), mode))
}

/// Observations reserved for weight training.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HeldOutSet {
    pub observations: Vec<Observation>,
}

impl HeldOutSet {
    pub fn new(observations: Vec<Observation>) -> Self {
        HeldOutSet { observations }
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop once the held-out log-likelihood improves by less than this.
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmFit<T> {
    pub weights: Vec<T>,
    /// Held-out log-likelihood before the first update and after each one.
    pub log_likelihood: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// No item had a positive value under any edge; prior weights kept.
    pub flagged: bool,
}

fn log_likelihood<T: Scalar>(values: &[Vec<T>], mult: &[T], w: &[T]) -> T {
    values.iter().zip(mult).fold(T::zero(), |acc, (row, &m)| {
        let mix = row.iter().zip(w).fold(T::zero(), |s, (&p, &wi)| s + wi * p);
        if mix > T::zero() {
            acc + m * mix.ln()
        } else {
            acc
        }
    })
}

/// EM for the weights of one node given frozen per-item edge values.
///
/// `values[x][i]` is the value of edge `i` on item `x`; `mult[x]` its weight.
pub fn em_fit<T: Scalar>(values: &[Vec<T>], mult: &[T], prior: &[T], opts: &EmOptions) -> EmFit<T> {
    let k = prior.len();
    let usable: Vec<usize> = (0..values.len())
        .filter(|&x| values[x].iter().any(|&p| p > T::zero()))
        .collect();
    if k <= 1 || usable.is_empty() {
        return EmFit {
            weights: prior.to_vec(),
            log_likelihood: vec![log_likelihood(values, mult, prior)],
            iterations: 0,
            converged: true,
            flagged: k > 1 && usable.is_empty(),
        };
    }
    let vals: Vec<Vec<T>> = usable.iter().map(|&x| values[x].clone()).collect();
    let ms: Vec<T> = usable.iter().map(|&x| mult[x]).collect();
    let total = ms.iter().fold(T::zero(), |a, &b| a + b);

    let mut w = prior.to_vec();
    let mut ll = log_likelihood(&vals, &ms, &w);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let mut acc = vec![T::zero(); k];
        for (row, &m) in vals.iter().zip(&ms) {
            let mix = row.iter().zip(&w).fold(T::zero(), |s, (&p, &wi)| s + wi * p);
            if mix <= T::zero() {
                continue;
            }
            for i in 0..k {
                acc[i] = acc[i] + m * w[i] * row[i] / mix;
            }
        }
        let next: Vec<T> = acc.iter().map(|&a| a / total).collect();
        // renormalise against accumulated rounding
        let s = next.iter().fold(T::zero(), |a, &b| a + b);
        w = next.into_iter().map(|x| x / s).collect();
        iterations += 1;
        let new_ll = log_likelihood(&vals, &ms, &w);
        trace.push(new_ll);
        let gain = new_ll - ll;
        ll = new_ll;
        if gain.as_f64() < opts.tol {
            converged = true;
            break;
        }
    }
    EmFit {
        weights: w,
        log_likelihood: trace,
        iterations,
        converged,
        flagged: false,
    }
}

/// Held-out items projected to `node`: per-edge values and multiplicities.
pub fn node_items<T, F>(
    lattice: &Lattice,
    heldout: &HeldOutSet,
    node: NodeId,
    mut child_prob: F,
) -> Result<(Vec<Vec<T>>, Vec<T>)>
where
    T: Scalar,
    F: FnMut(NodeId, &ConditionalQuery) -> Result<T>,
{
    let n = lattice.node(node);
    let mut values = Vec::with_capacity(heldout.observations.len());
    let mut mult = Vec::with_capacity(heldout.observations.len());
    for obs in &heldout.observations {
        let q = ConditionalQuery::new(
            obs.query.outcome.project(n.outcome)?,
            obs.query.context.project(n.context)?,
        )?;
        values.push(edge_values(lattice, node, &q, &mut child_prob)?);
        mult.push(T::from_count(obs.multiplicity));
    }
    Ok((values, mult))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeTraining<T> {
    pub node: NodeId,
    pub fit: EmFit<T>,
}

/// Trains every node with two or more edges, children before parents, with a
/// fixed child-probability oracle.
pub fn train_em<T, F>(
    lattice: &Lattice,
    heldout: &HeldOutSet,
    mut child_prob: F,
    prior: &MixtureWeights<T>,
    opts: &EmOptions,
) -> Result<(MixtureWeights<T>, Vec<NodeTraining<T>>)>
where
    T: Scalar,
    F: FnMut(NodeId, &ConditionalQuery) -> Result<T>,
{
    let order = lattice
        .topological_order()
        .ok_or_else(|| Error::InvalidLattice("cycle".into()))?;
    let mut weights = prior.clone();
    let mut report = Vec::new();
    for &node in order.iter().rev() {
        if lattice.out_edges(node).len() < 2 {
            continue;
        }
        let (values, mult) = node_items(lattice, heldout, node, &mut child_prob)?;
        let fit = em_fit(&values, &mult, &weights.node_weights(lattice, node), opts);
        if fit.flagged {
            log::warn!("node {node}: no held-out item has positive probability; prior weights kept");
        }
        weights.set_node_weights(lattice, node, &fit.weights);
        report.push(NodeTraining { node, fit });
    }
    Ok((weights, report))
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;
    use std::sync::Arc;

    use super::*;
    use crate::events::{Event, EventSchema, SlotSet};
    use crate::lattice::{build_dropone, build_ngram_chain, build_sync_split};

    fn pp_lattice() -> Lattice {
        let schema = Arc::new(EventSchema::flat(&["y", "a", "b"]).unwrap());
        build_dropone(schema, SlotSet::empty().with(0), 1).unwrap()
    }

    fn pp_query(l: &Lattice, y: &str) -> ConditionalQuery {
        let s = l.schema().clone();
        ConditionalQuery::new(
            Event::from_pairs(s.clone(), [(0, y)]).unwrap(),
            Event::from_pairs(s, [(1, "a0"), (2, "b0")]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_edge_passes_through() {
        let l = build_ngram_chain(2).unwrap();
        let s = l.schema().clone();
        let q = ConditionalQuery::new(
            Event::from_pairs(s.clone(), [(1, "x")]).unwrap(),
            Event::from_pairs(s, [(0, "y")]).unwrap(),
        )
        .unwrap();
        let w = MixtureWeights::<f64>::from_lattice(&l);
        let v = evaluate(&l, 0, &q, |_, _| Ok(0.37), &w, CombineMode::Mixture).unwrap();
        assert_eq!(v, 0.37);
        assert!(matches!(
            evaluate(&l, 1, &q, |_, _| Ok(0.37), &w, CombineMode::Mixture),
            Err(Error::LeafNode(1))
        ));
    }

    #[test]
    fn weighted_average_and_max_path() {
        let l = pp_lattice();
        let q = pp_query(&l, "1");
        let w = MixtureWeights::<f64>::from_lattice(&l);
        let vals: HashMap<NodeId, f64> = [(1, 0.2), (2, 0.4)].into_iter().collect();
        let oracle = |n: NodeId, _: &ConditionalQuery| Ok(vals[&n]);
        let mix = evaluate(&l, 0, &q, oracle, &w, CombineMode::Mixture).unwrap();
        assert!((mix - 0.3).abs() < 1e-15);
        let max = evaluate(&l, 0, &q, oracle, &w, CombineMode::MaxPath).unwrap();
        assert_eq!(max, 0.4);
        let skewed = MixtureWeights::from_vec(&l, vec![0.9, 0.1]).unwrap();
        assert_eq!(evaluate(&l, 0, &q, oracle, &skewed, CombineMode::MaxPath).unwrap(), 0.4);
    }

    #[test]
    fn independence_edge_multiplies() {
        let l = build_sync_split(2, 1).unwrap();
        let s = l.schema().clone();
        let q = ConditionalQuery::new(
            Event::from_named(s.clone(), [("a[0,0]", "in"), ("a[1,0]", "IN")]).unwrap(),
            Event::from_named(s, [("b[0,0]", "June"), ("b[1,0]", "NN")]).unwrap(),
        )
        .unwrap();
        let w = MixtureWeights::<f64>::from_lattice(&l);
        let oracle = |n: NodeId, _: &ConditionalQuery| Ok(if n == 1 { 0.5 } else { 0.4 });
        let v = evaluate(&l, 0, &q, oracle, &w, CombineMode::Mixture).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_child_values() {
        let l = pp_lattice();
        let q = pp_query(&l, "1");
        let w = MixtureWeights::<f64>::from_lattice(&l);
        assert!(evaluate(&l, 0, &q, |_, _| Ok(1.5), &w, CombineMode::Mixture).is_err());
    }

    #[test]
    fn mixture_normalizes_over_product_space() {
        // 2x2 sync split; child distributions over 3 terms per cell pair
        let l = build_sync_split(2, 2).unwrap();
        let s = l.schema().clone();
        let terms = ["x", "y", "z"];
        let dist = |n: NodeId, q: &ConditionalQuery| -> Result<f64> {
            // a proper distribution over the 9 assignments of the child's two cells
            let cells: Vec<usize> = q.outcome.assigned().iter().collect();
            let idx = |t: &str| terms.iter().position(|x| *x == t).unwrap();
            let a = idx(q.outcome.get(cells[0]).unwrap().as_str());
            let b = idx(q.outcome.get(cells[1]).unwrap().as_str());
            let raw = (1 + a + 3 * b + n) as f64;
            let z: f64 = (0..9).map(|i| (1 + i + n) as f64).sum();
            Ok(raw / z)
        };
        let w = MixtureWeights::from_vec(&l, vec![0.3, 0.7]).unwrap();
        let ctx = Event::from_named(
            s.clone(),
            [("b[0,0]", "p"), ("b[0,1]", "q"), ("b[1,0]", "r"), ("b[1,1]", "s")],
        )
        .unwrap();
        let mut total = 0.0;
        for a in terms {
            for b in terms {
                for c in terms {
                    for d in terms {
                        let out = Event::from_named(
                            s.clone(),
                            [("a[0,0]", a), ("a[0,1]", b), ("a[1,0]", c), ("a[1,1]", d)],
                        )
                        .unwrap();
                        let q = ConditionalQuery::new(out, ctx.clone()).unwrap();
                        total += evaluate(&l, 0, &q, dist, &w, CombineMode::Mixture).unwrap();
                    }
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }

    #[test]
    fn em_single_edge_stays() {
        let fit = em_fit(&[vec![0.3], vec![0.1]], &[1.0, 1.0], &[1.0], &EmOptions::default());
        assert_eq!(fit.weights, vec![1.0]);
    }

    #[test]
    fn em_symmetric_items() {
        let values: Vec<Vec<f64>> = vec![vec![0.8, 0.2], vec![0.2, 0.8]];
        let fit = em_fit(&values, &[1.0, 1.0], &[0.3, 0.7], &EmOptions { max_iters: 1000, tol: 1e-15 });
        assert!((fit.weights[0] - 0.5).abs() < 1e-6, "{:?}", fit.weights);
        assert!(fit.log_likelihood.windows(2).all(|p| p[1] >= p[0] - 1e-12));
    }

    #[test]
    fn em_flags_all_zero_node() {
        let fit = em_fit(&[vec![0.0, 0.0]], &[1.0], &[0.5, 0.5], &EmOptions::default());
        assert!(fit.flagged);
        assert_eq!(fit.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn train_em_frozen_children() {
        let l = pp_lattice();
        let s = l.schema().clone();
        let heldout = HeldOutSet::new(
            (0..20)
                .map(|i| {
                    let y = if i % 4 == 0 { "0" } else { "1" };
                    Observation::new(
                        ConditionalQuery::new(
                            Event::from_pairs(s.clone(), [(0, y)]).unwrap(),
                            Event::from_pairs(s.clone(), [(1, "a"), (2, "b")]).unwrap(),
                        )
                        .unwrap(),
                    )
                })
                .collect(),
        );
        // node 1 predicts the data well, node 2 does not
        let oracle = |n: NodeId, q: &ConditionalQuery| -> Result<f64> {
            let one = q.outcome.get(0).unwrap().as_str() == "1";
            Ok(match (n, one) {
                (1, true) => 0.75,
                (1, false) => 0.25,
                (_, true) => 0.5,
                (_, false) => 0.5,
            })
        };
        let prior = MixtureWeights::from_lattice(&l);
        let (w, report) = train_em(&l, &heldout, oracle, &prior, &EmOptions::default()).unwrap();
        w.check(&l).unwrap();
        assert_eq!(report.len(), 1);
        assert!(w.get(0) > 0.9, "{:?}", w);
        let ll = &report[0].fit.log_likelihood;
        assert!(ll.windows(2).all(|p| p[1] >= p[0] - 1e-12));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mixture_bounded_and_max_path_weight_free(
                a in 0.0f64..=1.0, b in 0.0f64..=1.0, w in 0.0f64..=1.0
            ) {
                let values = [a, b];
                let mix = combine(&values, &[w, 1.0 - w], CombineMode::Mixture);
                prop_assert!(mix >= a.min(b) - 1e-15 && mix <= a.max(b) + 1e-15);
                let m1 = combine(&values, &[w, 1.0 - w], CombineMode::MaxPath);
                let m2 = combine(&values, &[0.5, 0.5], CombineMode::MaxPath);
                prop_assert_eq!(m1, m2);
            }

            #[test]
            fn em_log_likelihood_monotone(
                rows in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..40)
            ) {
                let values: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1, r.2]).collect();
                let mult = vec![1.0; values.len()];
                let fit = em_fit(&values, &mult, &[1.0 / 3.0; 3], &EmOptions { max_iters: 50, tol: 0.0 });
                for p in fit.log_likelihood.windows(2) {
                    prop_assert!(p[1] >= p[0] - 1e-12);
                }
                let s: f64 = fit.weights.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }
}
