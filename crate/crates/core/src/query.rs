//! Lineage queries.
//!
//! Traversal follows data flow only: `Used`, `WasGeneratedBy`,
//! `WasInformedBy` and `WasDerivedFrom`. Backward lineage walks those edges
//! in their stored direction (an entity to its generating activity, an
//! activity to what it used or was informed by); forward impact walks them
//! reversed. Attribution and association edges of the visited nodes are
//! attached as context but never expanded, since every agentic node points
//! at the same agent.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::model::{Attributes, EdgeKey, EdgeKind, NodeKind};
use crate::store::{Direction, ProvGraph};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("{id} is not an agent decision: {reason}")]
    NotAgentDecision { id: String, reason: String },
    #[error("max_paths must be at least 1")]
    ZeroPathBound,
}

pub type Result<T> = std::result::Result<T, QueryError>;

/// Result of a lineage traversal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Subgraph {
    pub start: String,
    /// Nodes reached through data flow, including the start.
    pub nodes: BTreeSet<String>,
    /// Agents attached through attribution/association edges.
    pub context: BTreeSet<String>,
    pub edges: BTreeSet<EdgeKey>,
    /// Set when `max_depth` cut off further expansion.
    pub frontier_reached: bool,
}

impl Subgraph {
    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains(id)
    }

    pub fn members(&self) -> BTreeSet<String> {
        self.nodes.union(&self.context).cloned().collect()
    }

    /// Materialize as a standalone graph for export.
    pub fn to_graph(&self, graph: &ProvGraph) -> ProvGraph {
        graph.extract(&self.members(), &self.edges)
    }

    fn merge(&mut self, other: &Subgraph) {
        self.nodes.extend(other.nodes.iter().cloned());
        self.context.extend(other.context.iter().cloned());
        self.edges.extend(other.edges.iter().cloned());
        self.frontier_reached |= other.frontier_reached;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flow {
    Backward,
    Forward,
}

fn require(graph: &ProvGraph, id: &str) -> Result<()> {
    if graph.contains(id) {
        Ok(())
    } else {
        Err(QueryError::UnknownNode(id.to_owned()))
    }
}

/// Dataflow neighbours of `id` as `(edge, next node)`.
fn flow_steps<'a>(graph: &'a ProvGraph, id: &'a str, flow: Flow) -> impl Iterator<Item = (EdgeKey, &'a str)> + 'a {
    let direction = match flow {
        Flow::Backward => Direction::Out,
        Flow::Forward => Direction::In,
    };
    graph
        .adjacent(id, direction)
        .filter(|(k, _)| k.is_dataflow())
        .map(move |(k, n)| {
            let key = match flow {
                Flow::Backward => EdgeKey::new(id, k, n),
                Flow::Forward => EdgeKey::new(n, k, id),
            };
            (key, n)
        })
}

fn traverse(graph: &ProvGraph, start: &str, max_depth: Option<usize>, flow: Flow) -> Result<Subgraph> {
    require(graph, start)?;
    let mut sub = Subgraph {
        start: start.to_owned(),
        ..Default::default()
    };
    sub.nodes.insert(start.to_owned());
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some((id, depth)) = queue.pop_front() {
        if max_depth.is_some_and(|m| depth >= m) {
            if flow_steps(graph, id, flow).any(|(_, n)| !sub.nodes.contains(n)) {
                sub.frontier_reached = true;
            }
            continue;
        }
        for (key, next) in flow_steps(graph, id, flow) {
            sub.edges.insert(key);
            if sub.nodes.insert(next.to_owned()) {
                queue.push_back((next, depth + 1));
            }
        }
    }
    for id in &sub.nodes {
        for (kind, agent) in graph.adjacent(id, Direction::Out) {
            if kind.is_responsibility() {
                sub.edges.insert(EdgeKey::new(id.as_str(), kind, agent));
                sub.context.insert(agent.to_owned());
            }
        }
    }
    // an agent can itself be a traversed node only if it was the start
    let nodes = &sub.nodes;
    sub.context.retain(|c| !nodes.contains(c));
    Ok(sub)
}

/// Everything the start node was derived from.
pub fn backward_lineage(graph: &ProvGraph, start: &str, max_depth: Option<usize>) -> Result<Subgraph> {
    traverse(graph, start, max_depth, Flow::Backward)
}

/// Everything derived from the start node.
pub fn forward_impact(graph: &ProvGraph, start: &str, max_depth: Option<usize>) -> Result<Subgraph> {
    traverse(graph, start, max_depth, Flow::Forward)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootCause {
    pub upstream: Subgraph,
    pub downstream: Subgraph,
}

impl RootCause {
    pub fn combined(&self) -> Subgraph {
        let mut all = self.upstream.clone();
        all.merge(&self.downstream);
        all.context.retain(|c| !all.nodes.contains(c));
        all
    }
}

/// Where a suspect node came from and what it affected.
pub fn root_cause(graph: &ProvGraph, suspect: &str) -> Result<RootCause> {
    Ok(RootCause {
        upstream: backward_lineage(graph, suspect, None)?,
        downstream: forward_impact(graph, suspect, None)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TextItem {
    pub id: String,
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub id: String,
    pub attributes: Attributes,
}

impl ModelInfo {
    pub fn name(&self) -> Option<&str> {
        self.attributes.get("name").and_then(|v| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvocationContext {
    pub invocation_id: String,
    pub prompt: Option<TextItem>,
    pub response: Option<TextItem>,
    pub model: Option<ModelInfo>,
}

/// Why an agent tool produced a decision: its inputs, and the prompt,
/// response and model of the invocations that informed it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionContext {
    pub decision_id: String,
    pub tool_id: String,
    pub agent_id: Option<String>,
    pub inputs: Vec<String>,
    pub invocations: Vec<InvocationContext>,
    /// The tool was not informed by any model invocation.
    pub missing_invocation: bool,
}

impl DecisionContext {
    fn primary(&self) -> Option<&InvocationContext> {
        self.invocations.first()
    }

    pub fn prompt(&self) -> Option<&TextItem> {
        self.primary().and_then(|i| i.prompt.as_ref())
    }

    pub fn response(&self) -> Option<&TextItem> {
        self.primary().and_then(|i| i.response.as_ref())
    }

    pub fn model(&self) -> Option<&ModelInfo> {
        self.primary().and_then(|i| i.model.as_ref())
    }

    /// Every node id the context refers to.
    pub fn node_ids(&self) -> BTreeSet<String> {
        let mut ids: BTreeSet<String> = [self.decision_id.clone(), self.tool_id.clone()].into();
        ids.extend(self.agent_id.iter().cloned());
        ids.extend(self.inputs.iter().cloned());
        for inv in &self.invocations {
            ids.insert(inv.invocation_id.clone());
            ids.extend(inv.prompt.iter().map(|p| p.id.clone()));
            ids.extend(inv.response.iter().map(|p| p.id.clone()));
            ids.extend(inv.model.iter().map(|p| p.id.clone()));
        }
        ids
    }
}

fn with_kind<'a>(
    graph: &'a ProvGraph,
    id: &'a str,
    direction: Direction,
    edge: EdgeKind,
    kind: NodeKind,
) -> impl Iterator<Item = &'a str> + 'a {
    graph
        .adjacent(id, direction)
        .filter(move |(k, n)| *k == edge && graph.node(n).is_some_and(|n| n.kind == kind))
        .map(|(_, n)| n)
}

fn text_item(graph: &ProvGraph, id: &str) -> TextItem {
    TextItem {
        id: id.to_owned(),
        text: graph.node(id).and_then(|n| n.text("text")).map(str::to_owned),
    }
}

pub fn decision_context(graph: &ProvGraph, decision_id: &str) -> Result<DecisionContext> {
    require(graph, decision_id)?;
    let not_decision = |reason: String| QueryError::NotAgentDecision {
        id: decision_id.to_owned(),
        reason,
    };
    let tool_id = graph
        .adjacent(decision_id, Direction::Out)
        .find(|(k, _)| *k == EdgeKind::WasGeneratedBy)
        .map(|(_, a)| a)
        .ok_or_else(|| not_decision("no generating activity".into()))?;
    let tool_kind = graph.node(tool_id).map(|n| n.kind).unwrap_or(NodeKind::Unknown);
    if tool_kind != NodeKind::AgentTool {
        return Err(not_decision(format!("generated by {tool_id}, a {tool_kind}")));
    }

    let inputs = graph
        .adjacent(tool_id, Direction::Out)
        .filter(|(k, _)| *k == EdgeKind::Used)
        .map(|(_, n)| n.to_owned())
        .collect();
    let agent_id = graph
        .adjacent(tool_id, Direction::Out)
        .find(|(k, _)| *k == EdgeKind::WasAssociatedWith)
        .map(|(_, a)| a.to_owned());

    let invocations: Vec<InvocationContext> = with_kind(
        graph,
        tool_id,
        Direction::Out,
        EdgeKind::WasInformedBy,
        NodeKind::AIModelInvocation,
    )
    .map(|inv| InvocationContext {
        invocation_id: inv.to_owned(),
        prompt: with_kind(graph, inv, Direction::Out, EdgeKind::Used, NodeKind::Prompt)
            .next()
            .map(|p| text_item(graph, p)),
        response: with_kind(
            graph,
            inv,
            Direction::In,
            EdgeKind::WasGeneratedBy,
            NodeKind::ResponseData,
        )
        .next()
        .map(|r| text_item(graph, r)),
        model: with_kind(graph, inv, Direction::Out, EdgeKind::Used, NodeKind::AIModel)
            .next()
            .map(|m| ModelInfo {
                id: m.to_owned(),
                attributes: graph.node(m).map(|n| n.attributes.clone()).unwrap_or_default(),
            }),
    })
    .collect();
    if invocations.is_empty() {
        log::warn!("decision {decision_id}: tool {tool_id} has no linked model invocation");
    }
    Ok(DecisionContext {
        decision_id: decision_id.to_owned(),
        tool_id: tool_id.to_owned(),
        agent_id,
        inputs,
        missing_invocation: invocations.is_empty(),
        invocations,
    })
}

/// A path in data-flow order; `edges[i]` joins `nodes[i]` and `nodes[i + 1]`
/// and keeps its stored PROV direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlowPath {
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeKey>,
}

impl fmt::Display for FlowPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.nodes[0])?;
        for (edge, node) in self.edges.iter().zip(&self.nodes[1..]) {
            write!(f, " -[{}]-> {node}", edge.kind)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathSet {
    pub paths: Vec<FlowPath>,
    /// More paths exist than `max_paths`.
    pub truncated: bool,
}

/// Simple paths from `from` to `to` following data flow forward, in
/// lexicographic order of (edge kind, node id) at each step.
pub fn paths(graph: &ProvGraph, from: &str, to: &str, max_paths: usize) -> Result<PathSet> {
    require(graph, from)?;
    require(graph, to)?;
    if max_paths == 0 {
        return Err(QueryError::ZeroPathBound);
    }
    // only nodes upstream of the target can lie on a path
    let useful = backward_lineage(graph, to, None)?.nodes;
    let mut found = Vec::new();
    if useful.contains(from) {
        let mut nodes = vec![from.to_owned()];
        let mut edges = Vec::new();
        let mut on_path: BTreeSet<String> = [from.to_owned()].into();
        dfs(
            graph,
            to,
            &useful,
            max_paths + 1,
            &mut nodes,
            &mut edges,
            &mut on_path,
            &mut found,
        );
    }
    let truncated = found.len() > max_paths;
    found.truncate(max_paths);
    Ok(PathSet {
        paths: found,
        truncated,
    })
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    graph: &ProvGraph,
    to: &str,
    useful: &BTreeSet<String>,
    limit: usize,
    nodes: &mut Vec<String>,
    edges: &mut Vec<EdgeKey>,
    on_path: &mut BTreeSet<String>,
    found: &mut Vec<FlowPath>,
) {
    if found.len() >= limit {
        return;
    }
    let here = nodes.last().expect("path is never empty").clone();
    if here == to {
        found.push(FlowPath {
            nodes: nodes.clone(),
            edges: edges.clone(),
        });
        return;
    }
    for (key, next) in flow_steps(graph, &here, Flow::Forward) {
        if !useful.contains(next) || on_path.contains(next) {
            continue;
        }
        on_path.insert(next.to_owned());
        nodes.push(next.to_owned());
        edges.push(key);
        dfs(graph, to, useful, limit, nodes, edges, on_path, found);
        edges.pop();
        nodes.pop();
        on_path.remove(next);
        if found.len() >= limit {
            return;
        }
    }
}
