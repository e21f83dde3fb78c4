//! Independent oracles over the raw wire stream. Nothing here goes through
//! `translate` or the store: ids, edges and dependencies are read straight
//! from the JSON of each event.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use agentprov::{generate, ingest_event, EventEnvelope, NodeKind, ProvGraph, SimConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub fn stream(config: &SimConfig) -> Vec<EventEnvelope> {
    generate(config).expect("valid simulator config")
}

pub fn sim(layers: usize, seed: u64) -> Vec<EventEnvelope> {
    stream(&SimConfig::new(layers, seed))
}

pub fn build(events: &[EventEnvelope]) -> ProvGraph {
    let mut g = ProvGraph::new();
    ingest_all(&mut g, events);
    g
}

pub fn ingest_all(graph: &mut ProvGraph, events: &[EventEnvelope]) {
    for e in events {
        let stats = ingest_event(graph, e).expect("in-memory ingest");
        assert_eq!(stats.events_rejected, 0, "event {} rejected", e.event_id);
    }
}

/// Model descriptors are keyed by provider and name on both sides so the
/// oracle never needs the content-hash id scheme.
fn wire_id(data: &Value) -> String {
    let id = data["data_id"].as_str().expect("data_id").to_owned();
    if data["data_kind"] == "AIModel" {
        let a = &data["attributes"];
        format!(
            "AIModel:{}/{}",
            a["provider"].as_str().unwrap(),
            a["name"].as_str().unwrap()
        )
    } else {
        id
    }
}

pub fn graph_id(graph: &ProvGraph, id: &str) -> String {
    match graph.node(id) {
        Some(n) if n.kind == NodeKind::AIModel => {
            format!("AIModel:{}/{}", n.text("provider").unwrap(), n.text("name").unwrap())
        }
        _ => id.to_owned(),
    }
}

pub fn graph_ids<'a>(graph: &ProvGraph, ids: impl IntoIterator<Item = &'a String>) -> BTreeSet<String> {
    ids.into_iter().map(|id| graph_id(graph, id)).collect()
}

#[derive(Debug, Default)]
pub struct StreamOracle {
    pub nodes: BTreeSet<String>,
    /// (src, relation, dst) as named on the wire.
    pub edges: BTreeSet<(String, &'static str, String)>,
    /// x -> the nodes x directly depends on (upstream).
    pub upstream: BTreeMap<String, BTreeSet<String>>,
    /// prompt/response text keyed by entity id.
    pub texts: BTreeMap<String, String>,
}

impl StreamOracle {
    /// Covers streams without telemetry or locations.
    pub fn from_events(events: &[EventEnvelope]) -> Self {
        let mut o = StreamOracle::default();
        for e in events {
            let v: Value = serde_json::from_str(&e.to_line()).unwrap();
            o.add(&v);
        }
        o
    }

    fn depends(&mut self, x: &str, on: &str) {
        self.upstream.entry(x.to_owned()).or_default().insert(on.to_owned());
        self.upstream.entry(on.to_owned()).or_default();
    }

    fn edge(&mut self, s: &str, rel: &'static str, d: &str) {
        self.nodes.insert(s.to_owned());
        self.nodes.insert(d.to_owned());
        self.edges.insert((s.to_owned(), rel, d.to_owned()));
    }

    fn add(&mut self, v: &Value) {
        let p = &v["payload"];
        let s = |x: &Value| x.as_str().unwrap().to_owned();
        match p["type"].as_str().unwrap() {
            "CampaignDeclared" => {
                let c = s(&p["campaign_id"]);
                self.nodes.insert(c.clone());
                if let Some(owner) = p["owner_agent"].as_object() {
                    self.edge(&c, "wasAssociatedWith", owner["agent_id"].as_str().unwrap());
                }
            }
            "WorkflowDeclared" => self.edge(&s(&p["workflow_id"]), "partOf", &s(&p["campaign_id"])),
            "AgentRegistered" => {
                self.nodes.insert(s(&p["agent_id"]));
            }
            "DataDeclared" => {
                let id = wire_id(p);
                self.nodes.insert(id.clone());
                self.upstream.entry(id.clone()).or_default();
                if let Some(a) = p["attributed_to"].as_str() {
                    self.edge(&id, "wasAttributedTo", a);
                }
            }
            "ActivityExecuted" => {
                let a = s(&p["activity_id"]);
                self.nodes.insert(a.clone());
                self.upstream.entry(a.clone()).or_default();
                let parent = p["parent_id"]
                    .as_str()
                    .map(str::to_owned)
                    .unwrap_or_else(|| s(&v["workflow_id"]));
                self.edge(&a, "partOf", &parent);
                let agent = p["agent_id"].as_str();
                if let Some(ag) = agent {
                    self.edge(&a, "wasAssociatedWith", ag);
                }
                for u in p["used"].as_array().unwrap() {
                    let d = wire_id(u);
                    self.edge(&a, "used", &d);
                    self.depends(&a, &d);
                    self.text(&d, u);
                }
                for g in p["generated"].as_array().unwrap() {
                    let d = wire_id(g);
                    self.edge(&d, "wasGeneratedBy", &a);
                    self.depends(&d, &a);
                    self.text(&d, g);
                    if let Some(ag) = agent {
                        self.edge(&d, "wasAttributedTo", ag);
                    }
                }
                for i in p["informed_by"].as_array().unwrap() {
                    self.edge(&a, "wasInformedBy", i.as_str().unwrap());
                    self.depends(&a, i.as_str().unwrap());
                }
            }
            other => panic!("oracle does not know {other}"),
        }
    }

    fn text(&mut self, id: &str, data: &Value) {
        if let Some(t) = data["attributes"]["text"].as_str() {
            self.texts.insert(id.to_owned(), t.to_owned());
        }
    }

    /// Transitive closure including `start`.
    pub fn backward(&self, start: &str) -> BTreeSet<String> {
        closure(start, |x| self.upstream.get(x).into_iter().flatten().cloned().collect())
    }

    pub fn forward(&self, start: &str) -> BTreeSet<String> {
        closure(start, |x| {
            self.upstream
                .iter()
                .filter(|(_, ups)| ups.contains(x))
                .map(|(k, _)| k.clone())
                .collect()
        })
    }

    /// Every simple path from `from` to `to` along the forward direction,
    /// by exhaustive DFS.
    pub fn count_paths(&self, from: &str, to: &str) -> usize {
        fn go(o: &StreamOracle, here: &str, to: &str, seen: &mut Vec<String>) -> usize {
            if here == to {
                return 1;
            }
            let mut total = 0;
            for (next, ups) in &o.upstream {
                if ups.contains(here) && !seen.contains(next) {
                    seen.push(next.clone());
                    total += go(o, next, to, seen);
                    seen.pop();
                }
            }
            total
        }
        go(self, from, to, &mut vec![from.to_owned()])
    }
}

fn closure(start: &str, step: impl Fn(&str) -> Vec<String>) -> BTreeSet<String> {
    let mut seen = BTreeSet::from([start.to_owned()]);
    let mut stack = vec![start.to_owned()];
    while let Some(x) = stack.pop() {
        for n in step(&x) {
            if seen.insert(n.clone()) {
                stack.push(n);
            }
        }
    }
    seen
}

/// Edges of a graph in the oracle's vocabulary.
pub fn graph_edges(graph: &ProvGraph) -> BTreeSet<(String, String, String)> {
    graph
        .edges()
        .map(|e| {
            (
                graph_id(graph, &e.src),
                e.kind.as_str().to_owned(),
                graph_id(graph, &e.dst),
            )
        })
        .collect()
}

pub fn oracle_edges(o: &StreamOracle) -> BTreeSet<(String, String, String)> {
    o.edges
        .iter()
        .map(|(s, k, d)| (s.clone(), k.to_string(), d.clone()))
        .collect()
}

pub fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut out = items.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}
