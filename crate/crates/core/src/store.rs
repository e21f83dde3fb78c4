//! Persistent provenance graph.
//!
//! All writes go to an append-only log of JSON records, one per line,
//! before the in-memory indexes change:
//!
//! ```text
//! {"rec":"node","id":"Prompt_2","kind":"Prompt","label":null,"attributes":{..},"first_seen_at":"..","event_id":".."}
//! {"rec":"edge","src":"LLM_Invocation_2","kind":"Used","dst":"Prompt_2"}
//! {"rec":"event_id","event_id":".."}
//! ```
//!
//! Opening a store replays the log. Node upserts merge attributes
//! last-writer-wins on `(emitted_at, event_id)` and keep the earliest
//! `first_seen_at`, so the final state does not depend on arrival order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{GraphDelta, NodeUpsert};
use crate::model::{
    check_edge, Attributes, EdgeKey, EdgeKind, EdgeViolation, NodeKind, ProvCategory, ProvEdge, ProvNode, Violation,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt log record at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("node {id} is {existing}, refusing to change it to {incoming}")]
    KindConflict {
        id: String,
        existing: NodeKind,
        incoming: NodeKind,
    },
    #[error("edge {edge} violates constraints: {detail}")]
    Constraint { edge: EdgeKey, detail: EdgeViolation },
    #[error("entity {entity} is already generated by {existing}; cannot also be generated by {incoming}")]
    MultipleGeneration {
        entity: String,
        existing: String,
        incoming: String,
    },
    #[error("edge {edge} references missing node {id}")]
    MissingEndpoint { edge: EdgeKey, id: String },
}

impl StoreError {
    /// I/O failures abort an ingestion session; everything else only
    /// rejects the offending write.
    pub fn is_fatal(&self) -> bool {
        matches!(self, StoreError::Io(_) | StoreError::Corrupt { .. })
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Version stamp of a write, ordered by time then event id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stamp {
    pub at: DateTime<Utc>,
    pub event_id: String,
}

impl Stamp {
    pub fn new(at: DateTime<Utc>, event_id: impl Into<String>) -> Self {
        Stamp {
            at,
            event_id: event_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Replay {
    /// Fail on the first unreadable record.
    #[default]
    Strict,
    /// Skip unreadable records and count them.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
struct NodeState {
    node: ProvNode,
    label_stamp: Option<Stamp>,
    attr_stamps: BTreeMap<String, Stamp>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "rec", rename_all = "snake_case")]
enum LogRecord {
    Node {
        id: String,
        kind: NodeKind,
        label: Option<String>,
        #[serde(default)]
        attributes: Attributes,
        first_seen_at: DateTime<Utc>,
        event_id: String,
    },
    Edge(ProvEdge),
    EventId {
        event_id: String,
    },
}

struct LogFile {
    path: PathBuf,
    writer: BufWriter<File>,
}

/// Counts produced by applying one delta.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ApplyStats {
    pub nodes_upserted: u64,
    pub edges_inserted: u64,
    pub placeholders_created: u64,
    pub placeholders_resolved: u64,
}

#[derive(Default)]
pub struct ProvGraph {
    nodes: BTreeMap<String, NodeState>,
    edges: BTreeMap<EdgeKey, ProvEdge>,
    out_edges: BTreeMap<String, BTreeSet<(EdgeKind, String)>>,
    in_edges: BTreeMap<String, BTreeSet<(EdgeKind, String)>>,
    seen_event_ids: HashSet<String>,
    log: Option<LogFile>,
    skipped_records: usize,
}

impl fmt::Debug for ProvGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProvGraph")
            .field("nodes", &self.nodes.len())
            .field("edges", &self.edges.len())
            .field("log", &self.log_path())
            .finish()
    }
}

pub type SharedGraph = Arc<RwLock<ProvGraph>>;

impl ProvGraph {
    /// In-memory graph without a backing log.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(path, Replay::Strict)
    }

    pub fn open_with(path: impl AsRef<Path>, replay: Replay) -> Result<Self> {
        let path = path.as_ref();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut graph = ProvGraph::new();

        let mut reader = BufReader::new(&mut file);
        let mut buf = Vec::new();
        let mut line_no = 0;
        loop {
            buf.clear();
            if reader.read_until(b'\n', &mut buf)? == 0 {
                break;
            }
            line_no += 1;
            let text = match std::str::from_utf8(&buf) {
                Ok(t) => t.trim(),
                Err(e) => {
                    graph.replay_failure(replay, line_no, e.to_string())?;
                    continue;
                }
            };
            if text.is_empty() {
                continue;
            }
            let outcome = serde_json::from_str::<LogRecord>(text)
                .map_err(|e| e.to_string())
                .and_then(|rec| graph.replay_record(rec).map_err(|e| e.to_string()));
            if let Err(reason) = outcome {
                graph.replay_failure(replay, line_no, reason)?;
            }
        }
        drop(reader);

        // a crash can leave a partial last line; keep new records on their own line
        let len = file.metadata()?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1))?;
            file.read_exact(&mut last)?;
            if last[0] != b'\n' {
                file.write_all(b"\n")?;
            }
        }
        graph.log = Some(LogFile {
            path: path.to_owned(),
            writer: BufWriter::new(file),
        });
        Ok(graph)
    }

    fn replay_failure(&mut self, replay: Replay, line: usize, reason: String) -> Result<()> {
        match replay {
            Replay::Strict => Err(StoreError::Corrupt { line, reason }),
            Replay::Lenient => {
                log::warn!("skipping corrupt log record at line {line}: {reason}");
                self.skipped_records += 1;
                Ok(())
            }
        }
    }

    fn replay_record(&mut self, rec: LogRecord) -> Result<()> {
        match rec {
            LogRecord::Node {
                id,
                kind,
                label,
                attributes,
                first_seen_at,
                event_id,
            } => {
                let upsert = NodeUpsert {
                    id,
                    kind,
                    label,
                    attributes,
                };
                self.check_upsert(&upsert)?;
                self.apply_upsert(&upsert, &Stamp::new(first_seen_at, event_id));
            }
            LogRecord::Edge(edge) => {
                let key = edge.key();
                if !self.edges.contains_key(&key) {
                    self.check_edge_insert(&key)?;
                    self.index_edge(edge);
                }
            }
            LogRecord::EventId { event_id } => {
                self.seen_event_ids.insert(event_id);
            }
        }
        Ok(())
    }

    /// Records skipped by a lenient replay.
    pub fn skipped_records(&self) -> usize {
        self.skipped_records
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(|l| l.path.as_path())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(log) = &mut self.log {
            log.writer.flush()?;
        }
        Ok(())
    }

    pub fn close(mut self) -> Result<()> {
        self.flush()
    }

    pub fn into_shared(self) -> SharedGraph {
        Arc::new(RwLock::new(self))
    }

    fn append(&mut self, rec: &LogRecord) -> Result<()> {
        if let Some(log) = &mut self.log {
            serde_json::to_writer(&mut log.writer, rec).map_err(io::Error::from)?;
            log.writer.write_all(b"\n")?;
        }
        Ok(())
    }

    // ---- reads ----

    pub fn node(&self, id: &str) -> Option<&ProvNode> {
        self.nodes.get(id).map(|s| &s.node)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ProvNode> + '_ {
        self.nodes.values().map(|s| &s.node)
    }

    pub fn edges(&self) -> impl Iterator<Item = &ProvEdge> + '_ {
        self.edges.values()
    }

    pub fn edge(&self, key: &EdgeKey) -> Option<&ProvEdge> {
        self.edges.get(key)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_seen(&self, event_id: &str) -> bool {
        self.seen_event_ids.contains(event_id)
    }

    pub fn seen_event_count(&self) -> usize {
        self.seen_event_ids.len()
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> + '_ {
        self.nodes().filter(|n| n.kind.is_placeholder()).map(|n| n.id.as_str())
    }

    pub fn category(&self, id: &str) -> Option<ProvCategory> {
        self.node(id).map(ProvNode::category)
    }

    /// Adjacent nodes sorted by edge kind then id.
    pub fn neighbors(
        &self,
        id: &str,
        direction: Direction,
        kinds: Option<&[EdgeKind]>,
    ) -> Result<Vec<(EdgeKind, String)>> {
        if !self.contains(id) {
            return Err(StoreError::UnknownNode(id.to_owned()));
        }
        Ok(self
            .adjacent(id, direction)
            .filter(|(k, _)| kinds.is_none_or(|ks| ks.contains(k)))
            .map(|(k, n)| (k, n.to_owned()))
            .collect())
    }

    /// Unchecked adjacency iterator; empty for unknown ids.
    pub fn adjacent<'a>(&'a self, id: &str, direction: Direction) -> impl Iterator<Item = (EdgeKind, &'a str)> + 'a {
        let index = match direction {
            Direction::Out => &self.out_edges,
            Direction::In => &self.in_edges,
        };
        index
            .get(id)
            .into_iter()
            .flat_map(|set| set.iter().map(|(k, n)| (*k, n.as_str())))
    }

    /// Deterministic text form: one JSON line per node (sorted by id), then
    /// one per edge (sorted by triple).
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for n in self.nodes() {
            out.push_str(&serde_json::to_string(n).expect("nodes serialize"));
            out.push('\n');
        }
        for e in self.edges() {
            out.push_str(&serde_json::to_string(e).expect("edges serialize"));
            out.push('\n');
        }
        out
    }

    /// Copy of the given nodes and edges as a new in-memory graph. Edge
    /// endpoints missing from `ids` are pulled in.
    pub fn extract<'a>(
        &self,
        ids: impl IntoIterator<Item = &'a String>,
        edges: impl IntoIterator<Item = &'a EdgeKey>,
    ) -> ProvGraph {
        let mut g = ProvGraph::new();
        let copy_node = |g: &mut ProvGraph, id: &str| {
            if let Some(state) = self.nodes.get(id) {
                g.nodes.entry(id.to_owned()).or_insert_with(|| state.clone());
            }
        };
        for id in ids {
            copy_node(&mut g, id);
        }
        for key in edges {
            if let Some(edge) = self.edges.get(key) {
                copy_node(&mut g, &key.src);
                copy_node(&mut g, &key.dst);
                g.index_edge(edge.clone());
            }
        }
        g
    }

    /// Nodes plus every edge between them.
    pub fn induced(&self, ids: &BTreeSet<String>) -> ProvGraph {
        let keys: Vec<EdgeKey> = self
            .edges
            .keys()
            .filter(|k| ids.contains(&k.src) && ids.contains(&k.dst))
            .cloned()
            .collect();
        self.extract(ids, &keys)
    }

    /// Whole-graph conformance pass.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for key in self.edges.keys() {
            let (src, dst) = match (self.category(&key.src), self.category(&key.dst)) {
                (Some(s), Some(d)) => (s, d),
                (None, _) => {
                    out.push(Violation::DanglingEdge {
                        edge: key.clone(),
                        missing: key.src.clone(),
                    });
                    continue;
                }
                (_, None) => {
                    out.push(Violation::DanglingEdge {
                        edge: key.clone(),
                        missing: key.dst.clone(),
                    });
                    continue;
                }
            };
            if let Err(detail) = check_edge(key.kind, src, dst) {
                out.push(Violation::Edge {
                    edge: key.clone(),
                    detail,
                });
            }
        }
        for (id, state) in &self.nodes {
            if state.node.kind.is_placeholder() {
                out.push(Violation::UnresolvedPlaceholder { id: id.clone() });
            }
            let generators: Vec<String> = self
                .adjacent(id, Direction::Out)
                .filter(|(k, _)| *k == EdgeKind::WasGeneratedBy)
                .map(|(_, a)| a.to_owned())
                .collect();
            if generators.len() > 1 {
                out.push(Violation::MultipleGeneration {
                    entity: id.clone(),
                    activities: generators,
                });
            }
        }
        out
    }

    // ---- writes ----

    /// Merge a node into the graph. A bare reference (`Unknown`) creates a
    /// placeholder or only lowers `first_seen_at`; a concrete kind resolves
    /// a placeholder in place.
    pub fn upsert_node(&mut self, upsert: &NodeUpsert, stamp: &Stamp) -> Result<ProvNode> {
        self.check_upsert(upsert)?;
        self.append(&LogRecord::Node {
            id: upsert.id.clone(),
            kind: upsert.kind,
            label: upsert.label.clone(),
            attributes: upsert.attributes.clone(),
            first_seen_at: stamp.at,
            event_id: stamp.event_id.clone(),
        })?;
        self.apply_upsert(upsert, stamp);
        Ok(self.nodes[&upsert.id].node.clone())
    }

    /// Insert a node exactly as given (used by importers).
    pub fn insert_node(&mut self, node: &ProvNode) -> Result<ProvNode> {
        let upsert = NodeUpsert {
            id: node.id.clone(),
            kind: node.kind,
            label: (node.label != node.id).then(|| node.label.clone()),
            attributes: node.attributes.clone(),
        };
        self.upsert_node(&upsert, &Stamp::new(node.first_seen_at, ""))
    }

    /// Returns `false` when the triple is already present.
    pub fn insert_edge(&mut self, edge: ProvEdge) -> Result<bool> {
        let key = edge.key();
        if self.edges.contains_key(&key) {
            return Ok(false);
        }
        self.check_edge_insert(&key)?;
        self.append(&LogRecord::Edge(edge.clone()))?;
        self.index_edge(edge);
        Ok(true)
    }

    pub fn mark_seen(&mut self, event_id: &str) -> Result<bool> {
        if self.seen_event_ids.contains(event_id) {
            return Ok(false);
        }
        self.append(&LogRecord::EventId {
            event_id: event_id.to_owned(),
        })?;
        self.seen_event_ids.insert(event_id.to_owned());
        Ok(true)
    }

    /// Apply a translated event atomically: every node and edge is checked
    /// against the graph as it would look afterwards before anything is
    /// written.
    pub fn apply_delta(&mut self, delta: &GraphDelta, stamp: &Stamp) -> Result<ApplyStats> {
        self.precheck_delta(delta)?;
        let mut stats = ApplyStats::default();
        for upsert in &delta.nodes {
            let before = self.node(&upsert.id).map(|n| n.kind);
            self.upsert_node(upsert, stamp)?;
            stats.nodes_upserted += 1;
            match before {
                None if upsert.kind.is_placeholder() => stats.placeholders_created += 1,
                Some(NodeKind::Unknown) if !upsert.kind.is_placeholder() => stats.placeholders_resolved += 1,
                _ => {}
            }
        }
        for edge in &delta.edges {
            if self.insert_edge(edge.clone())? {
                stats.edges_inserted += 1;
            }
        }
        Ok(stats)
    }

    fn precheck_delta(&self, delta: &GraphDelta) -> Result<()> {
        let mut kinds: BTreeMap<&str, NodeKind> = BTreeMap::new();
        for upsert in &delta.nodes {
            let current = kinds
                .get(upsert.id.as_str())
                .copied()
                .or_else(|| self.node(&upsert.id).map(|n| n.kind));
            let merged = match current {
                None => upsert.kind,
                Some(existing) => merge_kind(&upsert.id, existing, upsert.kind)?,
            };
            kinds.insert(&upsert.id, merged);
        }
        let kind_of = |id: &str| kinds.get(id).copied().or_else(|| self.node(id).map(|n| n.kind));

        let check = |key: &EdgeKey| -> Result<()> {
            let src = kind_of(&key.src).ok_or_else(|| StoreError::MissingEndpoint {
                edge: key.clone(),
                id: key.src.clone(),
            })?;
            let dst = kind_of(&key.dst).ok_or_else(|| StoreError::MissingEndpoint {
                edge: key.clone(),
                id: key.dst.clone(),
            })?;
            check_edge(key.kind, src.category(), dst.category()).map_err(|detail| StoreError::Constraint {
                edge: key.clone(),
                detail,
            })
        };
        let mut generators: BTreeMap<&str, &str> = BTreeMap::new();
        for edge in &delta.edges {
            check(&edge.key())?;
            if edge.kind == EdgeKind::WasGeneratedBy {
                let existing = self
                    .generator_of(&edge.src)
                    .or_else(|| generators.get(edge.src.as_str()).copied());
                if let Some(existing) = existing.filter(|a| *a != edge.dst) {
                    return Err(StoreError::MultipleGeneration {
                        entity: edge.src.clone(),
                        existing: existing.to_owned(),
                        incoming: edge.dst.clone(),
                    });
                }
                generators.insert(&edge.src, &edge.dst);
            }
        }
        // edges already stored against placeholders this delta resolves
        for upsert in delta.nodes.iter().filter(|u| !u.kind.is_placeholder()) {
            if self.node(&upsert.id).is_some_and(|n| n.kind.is_placeholder()) {
                for key in self.incident(&upsert.id) {
                    check(&key)?;
                }
            }
        }
        Ok(())
    }

    fn generator_of(&self, entity: &str) -> Option<&str> {
        self.adjacent(entity, Direction::Out)
            .find(|(k, _)| *k == EdgeKind::WasGeneratedBy)
            .map(|(_, a)| a)
    }

    fn incident(&self, id: &str) -> Vec<EdgeKey> {
        let out = self.adjacent(id, Direction::Out).map(|(k, n)| EdgeKey::new(id, k, n));
        let inc = self.adjacent(id, Direction::In).map(|(k, n)| EdgeKey::new(n, k, id));
        out.chain(inc).collect()
    }

    fn check_upsert(&self, upsert: &NodeUpsert) -> Result<()> {
        let Some(existing) = self.node(&upsert.id) else {
            return Ok(());
        };
        merge_kind(&upsert.id, existing.kind, upsert.kind)?;
        if existing.kind.is_placeholder() && !upsert.kind.is_placeholder() {
            for key in self.incident(&upsert.id) {
                let cat = |id: &str| {
                    if id == upsert.id {
                        upsert.kind.category()
                    } else {
                        self.category(id).unwrap_or(ProvCategory::Placeholder)
                    }
                };
                check_edge(key.kind, cat(&key.src), cat(&key.dst)).map_err(|detail| StoreError::Constraint {
                    edge: key.clone(),
                    detail,
                })?;
            }
        }
        Ok(())
    }

    fn check_edge_insert(&self, key: &EdgeKey) -> Result<()> {
        let endpoint = |id: &String| {
            self.category(id).ok_or_else(|| StoreError::MissingEndpoint {
                edge: key.clone(),
                id: id.clone(),
            })
        };
        let (src, dst) = (endpoint(&key.src)?, endpoint(&key.dst)?);
        check_edge(key.kind, src, dst).map_err(|detail| StoreError::Constraint {
            edge: key.clone(),
            detail,
        })?;
        if key.kind == EdgeKind::WasGeneratedBy {
            if let Some(existing) = self.generator_of(&key.src).filter(|a| *a != key.dst) {
                return Err(StoreError::MultipleGeneration {
                    entity: key.src.clone(),
                    existing: existing.to_owned(),
                    incoming: key.dst.clone(),
                });
            }
        }
        Ok(())
    }

    fn apply_upsert(&mut self, upsert: &NodeUpsert, stamp: &Stamp) {
        let state = self.nodes.entry(upsert.id.clone()).or_insert_with(|| NodeState {
            node: ProvNode {
                id: upsert.id.clone(),
                kind: upsert.kind,
                label: upsert.id.clone(),
                attributes: Attributes::new(),
                first_seen_at: stamp.at,
            },
            label_stamp: None,
            attr_stamps: BTreeMap::new(),
        });
        let node = &mut state.node;
        if node.kind.is_placeholder() {
            node.kind = upsert.kind;
        }
        if stamp.at < node.first_seen_at {
            node.first_seen_at = stamp.at;
        }
        if let Some(label) = &upsert.label {
            if state.label_stamp.as_ref().is_none_or(|s| stamp >= s) {
                node.label = label.clone();
                state.label_stamp = Some(stamp.clone());
            }
        }
        for (key, value) in &upsert.attributes {
            let newer = state.attr_stamps.get(key).is_none_or(|s| stamp >= s);
            if newer {
                node.attributes.insert(key.clone(), value.clone());
                state.attr_stamps.insert(key.clone(), stamp.clone());
            }
        }
    }

    fn index_edge(&mut self, edge: ProvEdge) {
        let key = edge.key();
        self.out_edges
            .entry(key.src.clone())
            .or_default()
            .insert((key.kind, key.dst.clone()));
        self.in_edges
            .entry(key.dst.clone())
            .or_default()
            .insert((key.kind, key.src.clone()));
        self.edges.insert(key, edge);
    }
}

fn merge_kind(id: &str, existing: NodeKind, incoming: NodeKind) -> Result<NodeKind> {
    match (existing, incoming) {
        (e, NodeKind::Unknown) => Ok(e),
        (NodeKind::Unknown, i) => Ok(i),
        (e, i) if e == i => Ok(e),
        (e, i) => Err(StoreError::KindConflict {
            id: id.to_owned(),
            existing: e,
            incoming: i,
        }),
    }
}

impl Drop for ProvGraph {
    fn drop(&mut self) {
        if let Err(e) = self.flush() {
            log::error!("flushing provenance log failed: {e}");
        }
    }
}
