//! Text output for the CLI.

use std::collections::BTreeMap;
use std::fmt::Write;

use agentprov::query::{PathSet, RootCause};
use agentprov::{DecisionContext, IngestStats, ProvGraph, Subgraph};
use serde::Serialize;

pub fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("query results serialize");
    s.push('\n');
    s
}

pub fn stats_line(stats: &IngestStats) -> String {
    serde_json::to_string(stats).expect("stats serialize")
}

fn kind_of(graph: &ProvGraph, id: &str) -> String {
    graph.node(id).map(|n| n.kind.to_string()).unwrap_or_else(|| "?".into())
}

fn node_list(out: &mut String, graph: &ProvGraph, title: &str, ids: impl IntoIterator<Item = impl AsRef<str>>) {
    writeln!(out, "{title}:").unwrap();
    for id in ids {
        let id = id.as_ref();
        writeln!(out, "  {id}  ({})", kind_of(graph, id)).unwrap();
    }
}

pub fn subgraph(graph: &ProvGraph, sub: &Subgraph) -> String {
    let mut out = String::new();
    writeln!(out, "start: {}", sub.start).unwrap();
    writeln!(
        out,
        "{} nodes, {} context agents, {} edges",
        sub.nodes.len(),
        sub.context.len(),
        sub.edges.len()
    )
    .unwrap();
    node_list(&mut out, graph, "nodes", &sub.nodes);
    node_list(&mut out, graph, "context", &sub.context);
    if sub.frontier_reached {
        out.push_str("frontier reached: results cut off at max depth\n");
    }
    out
}

pub fn root_cause(graph: &ProvGraph, rc: &RootCause) -> String {
    let mut out = String::new();
    writeln!(out, "suspect: {}", rc.upstream.start).unwrap();
    node_list(&mut out, graph, "upstream", &rc.upstream.nodes);
    node_list(&mut out, graph, "downstream", &rc.downstream.nodes);
    node_list(&mut out, graph, "agents", rc.combined().context);
    out
}

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("  {l}\n")).collect()
}

pub fn context(ctx: &DecisionContext) -> String {
    let mut out = String::new();
    writeln!(out, "decision: {}", ctx.decision_id).unwrap();
    writeln!(out, "tool: {}", ctx.tool_id).unwrap();
    writeln!(out, "agent: {}", ctx.agent_id.as_deref().unwrap_or("-")).unwrap();
    writeln!(out, "inputs: {}", ctx.inputs.join(", ")).unwrap();
    if ctx.missing_invocation {
        out.push_str("warning: no model invocation informed this tool\n");
    }
    for inv in &ctx.invocations {
        writeln!(out, "invocation: {}", inv.invocation_id).unwrap();
        if let Some(m) = &inv.model {
            let attrs: Vec<String> = m.attributes.iter().map(|(k, v)| format!("{k}={v}")).collect();
            writeln!(out, "model: {} ({})", m.id, attrs.join(", ")).unwrap();
        }
        for (label, item) in [("prompt", &inv.prompt), ("response", &inv.response)] {
            match item {
                Some(t) => {
                    writeln!(out, "{label} [{}]:", t.id).unwrap();
                    out.push_str(&indent(t.text.as_deref().unwrap_or("(no text recorded)")));
                }
                None => writeln!(out, "{label}: -").unwrap(),
            }
        }
    }
    out
}

pub fn paths(found: &PathSet) -> String {
    let mut out = String::new();
    if found.paths.is_empty() {
        out.push_str("no path\n");
    }
    for p in &found.paths {
        writeln!(out, "{p}").unwrap();
    }
    if found.truncated {
        writeln!(out, "truncated after {} paths", found.paths.len()).unwrap();
    }
    out
}

pub fn graph_stats(graph: &ProvGraph) -> String {
    let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
    for n in graph.nodes() {
        *kinds.entry(n.kind.to_string()).or_default() += 1;
    }
    let mut edges: BTreeMap<&str, usize> = BTreeMap::new();
    for e in graph.edges() {
        *edges.entry(e.kind.as_str()).or_default() += 1;
    }
    let mut out = String::new();
    writeln!(out, "nodes: {}", graph.node_count()).unwrap();
    writeln!(out, "edges: {}", graph.edge_count()).unwrap();
    writeln!(out, "events: {}", graph.seen_event_count()).unwrap();
    writeln!(out, "placeholders: {}", graph.placeholders().count()).unwrap();
    for (k, n) in kinds {
        writeln!(out, "  node {k}: {n}").unwrap();
    }
    for (k, n) in edges {
        writeln!(out, "  edge {k}: {n}").unwrap();
    }
    out
}
