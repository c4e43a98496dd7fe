//! The backing-off lattice: a DAG of projected event schemas.
//!
//! Each node is identified by the outcome and context slots it keeps from the
//! root's joint schema, so two factorization paths that reach the same slot
//! subsets share one node. An edge is a factorization manner; when it splits
//! a query into several independent sub-events it points at several children.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{ChildProjection, EventSchema, ProjectionSpec, SlotId, SlotSet};

pub type NodeId = usize;
pub type EdgeId = usize;

/// Tolerance on the per-parent sum of edge weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeNode {
    pub id: NodeId,
    pub outcome: SlotSet,
    pub context: SlotSet,
    pub is_root: bool,
}

impl LatticeNode {
    pub fn joint_slots(&self) -> SlotSet {
        self.outcome.union(self.context)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorizationEdge {
    pub parent: NodeId,
    /// One child node per entry of `spec.children`.
    pub children: Vec<NodeId>,
    pub spec: ProjectionSpec,
    /// Prior weight `Pr(Φ)` of this factorization.
    pub weight: f64,
    /// Child sub-event probabilities multiply.
    pub independence: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    schema: Arc<EventSchema>,
    nodes: Vec<LatticeNode>,
    edges: Vec<FactorizationEdge>,
    out_edges: Vec<Vec<EdgeId>>,
}

impl Lattice {
    /// Assembles a lattice without checking it; see [`validate`].
    pub fn new(
        schema: Arc<EventSchema>,
        nodes: Vec<LatticeNode>,
        edges: Vec<FactorizationEdge>,
    ) -> Self {
        let mut out_edges = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            if let Some(list) = out_edges.get_mut(e.parent) {
                list.push(i);
            }
        }
        Lattice {
            schema,
            nodes,
            edges,
            out_edges,
        }
    }

    /// Assembles and validates; any violation is an error.
    pub fn checked(
        schema: Arc<EventSchema>,
        nodes: Vec<LatticeNode>,
        edges: Vec<FactorizationEdge>,
    ) -> Result<Self> {
        let lattice = Lattice::new(schema, nodes, edges);
        let report = validate(&lattice);
        if report.is_valid() {
            Ok(lattice)
        } else {
            Err(Error::InvalidLattice(report.to_string()))
        }
    }

    pub fn schema(&self) -> &Arc<EventSchema> {
        &self.schema
    }

    pub fn nodes(&self) -> &[LatticeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &LatticeNode {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[FactorizationEdge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &FactorizationEdge {
        &self.edges[id]
    }

    pub fn out_edges(&self, node: NodeId) -> &[EdgeId] {
        &self.out_edges[node]
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        self.out_edges[node].is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.nodes
            .iter()
            .position(|n| n.is_root)
            .expect("validated lattice has a root")
    }

    pub fn find_node(&self, outcome: SlotSet, context: SlotSet) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| n.outcome == outcome && n.context == context)
    }

    /// Nodes ordered parents-before-children, or `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<NodeId>> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        for e in &self.edges {
            for &c in &e.children {
                if c < n {
                    indegree[c] += 1;
                }
            }
        }
        let mut ready: BTreeSet<NodeId> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&u) = ready.iter().next() {
            ready.remove(&u);
            order.push(u);
            for &ei in &self.out_edges[u] {
                for &c in &self.edges[ei].children {
                    if c < n {
                        indegree[c] -= 1;
                        if indegree[c] == 0 {
                            ready.insert(c);
                        }
                    }
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Distance (in edges) of every node from the root along shortest paths.
    pub fn depths(&self) -> Vec<Option<usize>> {
        let mut depth = vec![None; self.nodes.len()];
        let Some(root) = self.nodes.iter().position(|n| n.is_root) else {
            return depth;
        };
        depth[root] = Some(0);
        let mut frontier = vec![root];
        let mut d = 0;
        while !frontier.is_empty() {
            d += 1;
            let mut next = Vec::new();
            for u in frontier {
                for &ei in &self.out_edges[u] {
                    for &c in &self.edges[ei].children {
                        if c < depth.len() && depth[c].is_none() {
                            depth[c] = Some(d);
                            next.push(c);
                        }
                    }
                }
            }
            frontier = next;
        }
        depth
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NoRoot,
    MultipleRoots(Vec<NodeId>),
    RootNotFull(NodeId),
    NodeIdMismatch { index: usize, id: NodeId },
    OverlappingNode(NodeId),
    EmptyOutcome(NodeId),
    DuplicateNode { first: NodeId, second: NodeId },
    BadNodeReference { edge: EdgeId },
    ChildCountMismatch { edge: EdgeId },
    EmptyChild { edge: EdgeId, child: usize },
    NotAProjection { edge: EdgeId, child: usize },
    PathMismatch { edge: EdgeId, child: usize },
    DependentMultiChild { edge: EdgeId },
    OverlappingChildren { edge: EdgeId },
    WeightOutOfRange { edge: EdgeId, weight: f64 },
    WeightSum { node: NodeId, sum: f64 },
    Cycle,
    Unreachable(NodeId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoRoot => write!(f, "no root node"),
            Violation::MultipleRoots(r) => write!(f, "several root nodes: {r:?}"),
            Violation::RootNotFull(n) => write!(f, "root node {n} does not cover the whole schema"),
            Violation::NodeIdMismatch { index, id } => {
                write!(f, "node at index {index} carries id {id}")
            }
            Violation::OverlappingNode(n) => write!(f, "node {n} has overlapping outcome and context"),
            Violation::EmptyOutcome(n) => write!(f, "node {n} has no outcome slots"),
            Violation::DuplicateNode { first, second } => {
                write!(f, "nodes {first} and {second} keep identical slots")
            }
            Violation::BadNodeReference { edge } => write!(f, "edge {edge} references a missing node"),
            Violation::ChildCountMismatch { edge } => {
                write!(f, "edge {edge}: child nodes and projection children differ in number")
            }
            Violation::EmptyChild { edge, child } => {
                write!(f, "edge {edge}: child {child} has no outcome slots")
            }
            Violation::NotAProjection { edge, child } => {
                write!(f, "edge {edge}: child {child} keeps slots its parent lacks")
            }
            Violation::PathMismatch { edge, child } => write!(
                f,
                "edge {edge}: child {child} projection disagrees with the child node's slots"
            ),
            Violation::DependentMultiChild { edge } => write!(
                f,
                "edge {edge}: several children without the independence assumption"
            ),
            Violation::OverlappingChildren { edge } => {
                write!(f, "edge {edge}: independent children share outcome slots")
            }
            Violation::WeightOutOfRange { edge, weight } => {
                write!(f, "edge {edge}: weight {weight} outside [0, 1]")
            }
            Violation::WeightSum { node, sum } => {
                write!(f, "node {node}: outgoing weights sum to {sum}")
            }
            Violation::Cycle => write!(f, "the edge relation has a cycle"),
            Violation::Unreachable(n) => write!(f, "node {n} is unreachable from the root"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Checks every structural invariant and lists all violations.
pub fn validate(lattice: &Lattice) -> ValidationReport {
    let mut v = Vec::new();
    let n = lattice.nodes.len();
    let all = lattice.schema.all();

    let roots: Vec<NodeId> = lattice
        .nodes
        .iter()
        .filter(|x| x.is_root)
        .map(|x| x.id)
        .collect();
    match roots.len() {
        0 => v.push(Violation::NoRoot),
        1 => {}
        _ => v.push(Violation::MultipleRoots(roots.clone())),
    }
    let mut seen: HashMap<(SlotSet, SlotSet), NodeId> = HashMap::new();
    for (i, node) in lattice.nodes.iter().enumerate() {
        if node.id != i {
            v.push(Violation::NodeIdMismatch { index: i, id: node.id });
        }
        if !node.outcome.is_disjoint(node.context) {
            v.push(Violation::OverlappingNode(i));
        }
        if node.outcome.is_empty() {
            v.push(Violation::EmptyOutcome(i));
        }
        if node.is_root && node.joint_slots() != all {
            v.push(Violation::RootNotFull(i));
        }
        if let Some(&first) = seen.get(&(node.outcome, node.context)) {
            v.push(Violation::DuplicateNode { first, second: i });
        } else {
            seen.insert((node.outcome, node.context), i);
        }
    }

    let mut weight_sums: BTreeMap<NodeId, f64> = BTreeMap::new();
    for (ei, e) in lattice.edges.iter().enumerate() {
        if e.parent >= n || e.children.iter().any(|&c| c >= n) {
            v.push(Violation::BadNodeReference { edge: ei });
            continue;
        }
        if e.children.len() != e.spec.children.len() || e.children.is_empty() {
            v.push(Violation::ChildCountMismatch { edge: ei });
            continue;
        }
        if !(0.0..=1.0).contains(&e.weight) || !e.weight.is_finite() {
            v.push(Violation::WeightOutOfRange {
                edge: ei,
                weight: e.weight,
            });
        }
        *weight_sums.entry(e.parent).or_default() += e.weight;
        if e.children.len() > 1 && !e.independence {
            v.push(Violation::DependentMultiChild { edge: ei });
        }
        let parent = &lattice.nodes[e.parent];
        let resolved = e.spec.resolve(parent.outcome);
        let mut outcome_union = SlotSet::empty();
        let mut overlapping = false;
        for (ci, (&child_id, (out, ctx))) in e.children.iter().zip(&resolved).enumerate() {
            if out.is_empty() {
                v.push(Violation::EmptyChild { edge: ei, child: ci });
                continue;
            }
            if !out.is_subset(parent.outcome) || !ctx.is_subset(parent.context) {
                v.push(Violation::NotAProjection { edge: ei, child: ci });
            }
            let child = &lattice.nodes[child_id];
            if child.outcome != *out || child.context != *ctx {
                v.push(Violation::PathMismatch { edge: ei, child: ci });
            }
            if !outcome_union.is_disjoint(*out) {
                overlapping = true;
            }
            outcome_union = outcome_union.union(*out);
        }
        if e.independence && e.children.len() > 1 && overlapping {
            v.push(Violation::OverlappingChildren { edge: ei });
        }
    }
    for (node, sum) in weight_sums {
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            v.push(Violation::WeightSum { node, sum });
        }
    }

    if lattice.topological_order().is_none() {
        v.push(Violation::Cycle);
    }
    if roots.len() == 1 {
        let depths = lattice.depths();
        for (i, d) in depths.iter().enumerate() {
            if d.is_none() {
                v.push(Violation::Unreachable(i));
            }
        }
    }
    ValidationReport { violations: v }
}

/// Classical n-gram chain: node `k` keeps the `n-1-k` most recent history
/// words. Slots are `h{n-1} .. h1, w` on one row.
pub fn build_ngram_chain(n: usize) -> Result<Lattice> {
    if n < 1 {
        return Err(Error::InvalidArgument("n-gram order must be at least 1".into()));
    }
    if n > SlotSet::MAX_SLOTS {
        return Err(Error::InvalidArgument(format!("n-gram order {n} too large")));
    }
    let mut slots: Vec<(SlotId, bool)> = (1..n)
        .rev()
        .enumerate()
        .map(|(col, h)| (SlotId::new(0, col, format!("h{h}")), true))
        .collect();
    slots.push((SlotId::new(0, n - 1, "w"), false));
    let schema = Arc::new(EventSchema::new(slots)?);
    let outcome = SlotSet::empty().with(n - 1);
    let mut nodes = Vec::with_capacity(n);
    let mut edges = Vec::new();
    for k in 0..n {
        // history slots k..n-1 hold the n-1-k most recent words
        let context: SlotSet = (k..n - 1).collect();
        nodes.push(LatticeNode {
            id: k,
            outcome,
            context,
            is_root: k == 0,
        });
        if k > 0 {
            edges.push(FactorizationEdge {
                parent: k - 1,
                children: vec![k],
                spec: ProjectionSpec::keep_context(context),
                weight: 1.0,
                independence: false,
            });
        }
    }
    Lattice::checked(schema, nodes, edges)
}

/// Asynchronous drop-one lattice over the context slots of `schema`.
///
/// The outcome is kept fixed; each edge drops one droppable context slot.
/// Contexts smaller than `min_context` are not generated.
pub fn build_dropone(
    schema: Arc<EventSchema>,
    outcome: SlotSet,
    min_context: usize,
) -> Result<Lattice> {
    if outcome.is_empty() || !outcome.is_subset(schema.all()) {
        return Err(Error::InvalidArgument("outcome slots must be a non-empty subset of the schema".into()));
    }
    let context = schema.all().difference(outcome);
    let droppable: Vec<usize> = context.iter().filter(|&i| schema.is_droppable(i)).collect();
    if droppable.is_empty() {
        return Err(Error::InvalidArgument("no droppable context slots".into()));
    }
    if min_context >= context.len() {
        return Err(Error::InvalidArgument(format!(
            "min_context {min_context} must be below the {} context slots",
            context.len()
        )));
    }

    let mut ids: BTreeMap<u64, NodeId> = BTreeMap::new();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    // Breadth-first by number of dropped slots keeps ids ordered by depth.
    let mut frontier = vec![context];
    ids.insert(context.bits(), 0);
    nodes.push(LatticeNode {
        id: 0,
        outcome,
        context,
        is_root: true,
    });
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for parent_ctx in frontier {
            let parent = ids[&parent_ctx.bits()];
            let drops: Vec<usize> = droppable
                .iter()
                .copied()
                .filter(|&s| parent_ctx.contains(s) && parent_ctx.len() > min_context)
                .collect();
            let weight = 1.0 / drops.len().max(1) as f64;
            for slot in drops {
                let child_ctx = parent_ctx.without(slot);
                let child = *ids.entry(child_ctx.bits()).or_insert_with(|| {
                    let id = nodes.len();
                    nodes.push(LatticeNode {
                        id,
                        outcome,
                        context: child_ctx,
                        is_root: false,
                    });
                    next.push(child_ctx);
                    id
                });
                edges.push(FactorizationEdge {
                    parent,
                    children: vec![child],
                    spec: ProjectionSpec::keep_context(child_ctx),
                    weight,
                    independence: false,
                });
            }
        }
        frontier = next;
    }
    Lattice::checked(schema, nodes, edges)
}

/// Schema for synchronous `m x n` matrix queries: outcome matrix `a`,
/// conditioning matrix `b`.
pub fn sync_schema(rows: usize, cols: usize) -> Result<Arc<EventSchema>> {
    let mut slots = Vec::with_capacity(2 * rows * cols);
    for name in ["a", "b"] {
        for r in 0..rows {
            for c in 0..cols {
                slots.push((SlotId::new(r, c, name), true));
            }
        }
    }
    Ok(Arc::new(EventSchema::new(slots)?))
}

/// Synchronous row/column split of an `m x n` conditional matrix query.
pub fn build_sync_split(rows: usize, cols: usize) -> Result<Lattice> {
    if rows < 1 || cols < 1 {
        return Err(Error::InvalidArgument("matrix dimensions must be positive".into()));
    }
    let schema = sync_schema(rows, cols)?;
    let cell = |name: &str, r: usize, c: usize| -> usize {
        schema
            .index_of(&SlotId::new(r, c, name))
            .expect("slot exists by construction")
    };
    let outcome: SlotSet = (0..rows * cols).collect();
    let context = schema.all().difference(outcome);
    let mut nodes = vec![LatticeNode {
        id: 0,
        outcome,
        context,
        is_root: true,
    }];
    let mut groups: Vec<Vec<(SlotSet, SlotSet)>> = Vec::new();
    if rows > 1 {
        groups.push(
            (0..rows)
                .map(|r| {
                    (
                        (0..cols).map(|c| cell("a", r, c)).collect(),
                        (0..cols).map(|c| cell("b", r, c)).collect(),
                    )
                })
                .collect(),
        );
    }
    if cols > 1 {
        groups.push(
            (0..cols)
                .map(|c| {
                    (
                        (0..rows).map(|r| cell("a", r, c)).collect(),
                        (0..rows).map(|r| cell("b", r, c)).collect(),
                    )
                })
                .collect(),
        );
    }
    let weight = 1.0 / groups.len().max(1) as f64;
    let mut edges = Vec::new();
    for group in groups {
        let mut children = Vec::new();
        let mut spec = Vec::new();
        for (out, ctx) in group {
            let id = nodes.len();
            nodes.push(LatticeNode {
                id,
                outcome: out,
                context: ctx,
                is_root: false,
            });
            children.push(id);
            spec.push(ChildProjection {
                outcome: out,
                context: ctx,
            });
        }
        edges.push(FactorizationEdge {
            parent: 0,
            children,
            spec: ProjectionSpec::new(spec),
            weight,
            independence: true,
        });
    }
    Lattice::checked(schema, nodes, edges)
}

fn node_label(lattice: &Lattice, node: &LatticeNode) -> String {
    let s = lattice.schema();
    format!("{} | {}", s.describe(node.outcome), s.describe(node.context))
}

/// Renders the lattice in the DOT graph language.
pub fn export_dot(lattice: &Lattice) -> String {
    let mut out = String::from("digraph lattice {\n  rankdir=TB;\n");
    for node in &lattice.nodes {
        let shape = if node.is_root { "doubleoctagon" } else { "box" };
        let _ = writeln!(
            out,
            "  n{} [label=\"{}\", shape={}];",
            node.id,
            node_label(lattice, node).replace('"', "\\\""),
            shape
        );
    }
    for (ei, e) in lattice.edges.iter().enumerate() {
        let style = if e.children.len() > 1 { ", style=bold" } else { "" };
        for &c in &e.children {
            let _ = writeln!(
                out,
                "  n{} -> n{} [label=\"e{} w={}\"{}];",
                e.parent, c, ei, e.weight, style
            );
        }
    }
    out.push_str("}\n");
    out
}

/// JSON form of a lattice, also embedded in model files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub schema: Vec<SlotDecl>,
    pub nodes: Vec<NodeDecl>,
    pub edges: Vec<EdgeDecl>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotDecl {
    pub name: String,
    #[serde(default)]
    pub row: usize,
    pub col: usize,
    #[serde(default = "default_true")]
    pub droppable: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDecl {
    pub id: NodeId,
    pub outcome: Vec<String>,
    pub context: Vec<String>,
    #[serde(default)]
    pub root: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionDecl {
    /// Empty means the parent outcome is inherited.
    #[serde(default)]
    pub outcome: Vec<String>,
    pub context: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeDecl {
    pub parent: NodeId,
    pub children: Vec<NodeId>,
    pub partitions: Vec<PartitionDecl>,
    pub weight: f64,
    #[serde(default)]
    pub independence: bool,
}

impl LatticeSpec {
    pub fn from_lattice(lattice: &Lattice) -> Self {
        let s = lattice.schema();
        LatticeSpec {
            schema: s
                .slots()
                .iter()
                .enumerate()
                .map(|(i, slot)| SlotDecl {
                    name: slot.name.clone(),
                    row: slot.row,
                    col: slot.col,
                    droppable: s.is_droppable(i),
                })
                .collect(),
            nodes: lattice
                .nodes()
                .iter()
                .map(|n| NodeDecl {
                    id: n.id,
                    outcome: s.references(n.outcome),
                    context: s.references(n.context),
                    root: n.is_root,
                })
                .collect(),
            edges: lattice
                .edges()
                .iter()
                .map(|e| EdgeDecl {
                    parent: e.parent,
                    children: e.children.clone(),
                    partitions: e
                        .spec
                        .children
                        .iter()
                        .map(|c| PartitionDecl {
                            outcome: s.references(c.outcome),
                            context: s.references(c.context),
                        })
                        .collect(),
                    weight: e.weight,
                    independence: e.independence,
                })
                .collect(),
        }
    }

    /// Builds and validates the lattice this spec describes.
    pub fn to_lattice(&self) -> Result<Lattice> {
        let schema = Arc::new(EventSchema::new(
            self.schema
                .iter()
                .map(|d| (SlotId::new(d.row, d.col, d.name.clone()), d.droppable))
                .collect(),
        )?);
        let nodes = self
            .nodes
            .iter()
            .map(|d| {
                Ok(LatticeNode {
                    id: d.id,
                    outcome: schema.resolve_set(&d.outcome)?,
                    context: schema.resolve_set(&d.context)?,
                    is_root: d.root,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let edges = self
            .edges
            .iter()
            .map(|d| {
                let children = d
                    .partitions
                    .iter()
                    .map(|p| {
                        Ok(ChildProjection {
                            outcome: schema.resolve_set(&p.outcome)?,
                            context: schema.resolve_set(&p.context)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(FactorizationEdge {
                    parent: d.parent,
                    children: d.children.clone(),
                    spec: ProjectionSpec::new(children),
                    weight: d.weight,
                    independence: d.independence,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Lattice::checked(schema, nodes, edges)
    }
}
