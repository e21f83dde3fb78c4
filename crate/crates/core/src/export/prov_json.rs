use chrono::{DateTime, Utc};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::event::NodeUpsert;
use crate::model::{AttrValue, Attributes, EdgeKind, NodeKind, ProvCategory, ProvEdge, ProvNode};
use crate::store::{ProvGraph, Stamp, StoreError};

pub const EXTENSION_PREFIX: &str = "provagent";
pub const EXTENSION_NAMESPACE: &str = "urn:provagent#";

const LABEL: &str = "prov:label";
const TYPE: &str = "prov:type";
const FIRST_SEEN: &str = "provagent:first_seen_at";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("graph has unresolved placeholders: {}", .0.join(", "))]
    UnresolvedPlaceholders(Vec<String>),
    #[error("malformed PROV-JSON: {0}")]
    Malformed(String),
    #[error("{id} declared as both {first} and {second}")]
    CategoryConflict { id: String, first: String, second: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// (JSON key, edge kind, source role, destination role)
const RELATIONS: [(&str, EdgeKind, &str, &str); 9] = [
    ("used", EdgeKind::Used, "prov:activity", "prov:entity"),
    (
        "wasGeneratedBy",
        EdgeKind::WasGeneratedBy,
        "prov:entity",
        "prov:activity",
    ),
    (
        "wasAttributedTo",
        EdgeKind::WasAttributedTo,
        "prov:entity",
        "prov:agent",
    ),
    (
        "wasAssociatedWith",
        EdgeKind::WasAssociatedWith,
        "prov:activity",
        "prov:agent",
    ),
    (
        "wasInformedBy",
        EdgeKind::WasInformedBy,
        "prov:informed",
        "prov:informant",
    ),
    (
        "wasDerivedFrom",
        EdgeKind::WasDerivedFrom,
        "prov:generatedEntity",
        "prov:usedEntity",
    ),
    (
        "actedOnBehalfOf",
        EdgeKind::ActedOnBehalfOf,
        "prov:delegate",
        "prov:responsible",
    ),
    (
        "provagent:atLocation",
        EdgeKind::AtLocation,
        "provagent:locatable",
        "prov:location",
    ),
    (
        "provagent:partOf",
        EdgeKind::PartOf,
        "provagent:part",
        "provagent:whole",
    ),
];

fn relation(kind: EdgeKind) -> (&'static str, &'static str, &'static str) {
    let (name, _, src, dst) = RELATIONS
        .iter()
        .find(|r| r.1 == kind)
        .expect("every kind has a relation");
    (name, src, dst)
}

fn type_name(kind: NodeKind) -> String {
    match kind {
        NodeKind::Location => "prov:Location".into(),
        NodeKind::Person => "prov:Person".into(),
        NodeKind::Organization => "prov:Organization".into(),
        k => format!("{EXTENSION_PREFIX}:{k}"),
    }
}

fn kind_from_type(name: &str) -> Option<NodeKind> {
    match name {
        "prov:Location" => Some(NodeKind::Location),
        "prov:Person" => Some(NodeKind::Person),
        "prov:Organization" => Some(NodeKind::Organization),
        other => other
            .strip_prefix("provagent:")
            .and_then(NodeKind::parse)
            .filter(|k| !k.is_placeholder()),
    }
}

fn section(category: ProvCategory) -> &'static str {
    match category {
        ProvCategory::Activity => "activity",
        ProvCategory::Agent => "agent",
        // PROV locations are entities to standard consumers
        ProvCategory::Entity | ProvCategory::Location | ProvCategory::Placeholder => "entity",
    }
}

fn attr_json(v: &AttrValue) -> Value {
    serde_json::to_value(v).expect("scalars serialize")
}

/// Serialize to a PROV-JSON document. Output is deterministic: object keys
/// are sorted and relation ids are numbered in edge order.
pub fn to_prov_json(graph: &ProvGraph) -> Result<String, ExportError> {
    let placeholders: Vec<String> = graph.placeholders().map(str::to_owned).collect();
    if !placeholders.is_empty() {
        return Err(ExportError::UnresolvedPlaceholders(placeholders));
    }
    let mut doc = Map::new();
    doc.insert("prefix".into(), json!({ EXTENSION_PREFIX: EXTENSION_NAMESPACE }));
    for key in ["entity", "activity", "agent"] {
        doc.insert(key.into(), Value::Object(Map::new()));
    }
    for (name, ..) in RELATIONS {
        doc.insert(name.into(), Value::Object(Map::new()));
    }

    for node in graph.nodes() {
        let mut body = Map::new();
        body.insert(TYPE.into(), Value::String(type_name(node.kind)));
        body.insert(LABEL.into(), Value::String(node.label.clone()));
        body.insert(
            FIRST_SEEN.into(),
            serde_json::to_value(node.first_seen_at).expect("timestamps serialize"),
        );
        for (k, v) in &node.attributes {
            body.insert(k.clone(), attr_json(v));
        }
        doc[section(node.category())]
            .as_object_mut()
            .expect("section is an object")
            .insert(node.id.clone(), Value::Object(body));
    }

    let mut counters = [0usize; RELATIONS.len()];
    for edge in graph.edges() {
        let idx = RELATIONS.iter().position(|r| r.1 == edge.kind).expect("known kind");
        counters[idx] += 1;
        let (name, src_role, dst_role) = relation(edge.kind);
        let short = name.rsplit(':').next().unwrap_or(name);
        let mut body = Map::new();
        body.insert(src_role.into(), Value::String(edge.src.clone()));
        body.insert(dst_role.into(), Value::String(edge.dst.clone()));
        for (k, v) in &edge.attributes {
            body.insert(k.clone(), attr_json(v));
        }
        doc[name]
            .as_object_mut()
            .expect("relation is an object")
            .insert(format!("_:{short}{}", counters[idx]), Value::Object(body));
    }
    Ok(serde_json::to_string_pretty(&Value::Object(doc)).expect("documents serialize"))
}

/// Nodes and edges decoded from a PROV-JSON document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImportedGraph {
    pub nodes: Vec<ProvNode>,
    pub edges: Vec<ProvEdge>,
    pub warnings: Vec<String>,
}

impl ImportedGraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty()
    }

    /// Write into `graph`. Edge endpoints the document never declared
    /// become placeholders.
    pub fn apply_to(&self, graph: &mut ProvGraph) -> Result<(), ExportError> {
        for node in &self.nodes {
            graph.insert_node(node)?;
        }
        let epoch = Stamp::new(DateTime::<Utc>::UNIX_EPOCH, "");
        for edge in &self.edges {
            for id in [&edge.src, &edge.dst] {
                if !graph.contains(id) {
                    graph.upsert_node(&NodeUpsert::reference(id.as_str()), &epoch)?;
                }
            }
            graph.insert_edge(edge.clone())?;
        }
        Ok(())
    }

    pub fn into_graph(self) -> Result<ProvGraph, ExportError> {
        let mut g = ProvGraph::new();
        self.apply_to(&mut g)?;
        Ok(g)
    }
}

fn literal(v: &Value) -> Option<AttrValue> {
    match v {
        Value::Bool(b) => Some(AttrValue::Bool(*b)),
        Value::Number(n) => n
            .as_i64()
            .map(AttrValue::Int)
            .or_else(|| n.as_f64().map(AttrValue::Float)),
        Value::String(s) => Some(AttrValue::Text(s.clone())),
        // typed literal {"$": "...", "type": "xsd:..."}
        Value::Object(o) => o.get("$").and_then(literal),
        _ => None,
    }
}

fn malformed(msg: impl Into<String>) -> ExportError {
    ExportError::Malformed(msg.into())
}

/// Parse a PROV-JSON document. Unknown `prov:type`s fall back to the
/// generic kind of their section (DomainData, Task, AIAgent) with a warning.
pub fn from_prov_json(text: &str) -> Result<ImportedGraph, ExportError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let doc = doc.as_object().ok_or_else(|| malformed("document is not an object"))?;
    let mut out = ImportedGraph::default();
    let mut seen: std::collections::BTreeMap<String, &'static str> = Default::default();

    for (sec, fallback) in [
        ("entity", NodeKind::DomainData),
        ("activity", NodeKind::Task),
        ("agent", NodeKind::AIAgent),
    ] {
        let Some(items) = doc.get(sec) else { continue };
        let items = items
            .as_object()
            .ok_or_else(|| malformed(format!("{sec} is not an object")))?;
        for (id, body) in items {
            if let Some(first) = seen.insert(id.clone(), sec) {
                return Err(ExportError::CategoryConflict {
                    id: id.clone(),
                    first: first.into(),
                    second: sec.into(),
                });
            }
            let empty = Map::new();
            let body = match body {
                Value::Object(o) => o,
                Value::Null => &empty,
                _ => return Err(malformed(format!("{sec} {id} is not an object"))),
            };
            out.nodes.push(decode_node(id, sec, fallback, body, &mut out.warnings));
        }
    }

    for (name, kind, src_role, dst_role) in RELATIONS {
        let Some(items) = doc.get(name) else { continue };
        let items = items
            .as_object()
            .ok_or_else(|| malformed(format!("{name} is not an object")))?;
        for (rid, body) in items {
            let body = body
                .as_object()
                .ok_or_else(|| malformed(format!("{name} {rid} is not an object")))?;
            let role = |r: &str| {
                body.get(r)
                    .and_then(Value::as_str)
                    .map(str::to_owned)
                    .ok_or_else(|| malformed(format!("{name} {rid} lacks {r}")))
            };
            let mut edge = ProvEdge::new(role(src_role)?, kind, role(dst_role)?);
            for (k, v) in body {
                if k != src_role && k != dst_role {
                    if let Some(a) = literal(v) {
                        edge.attributes.insert(k.clone(), a);
                    }
                }
            }
            out.edges.push(edge);
        }
    }
    for key in doc.keys() {
        let known =
            matches!(key.as_str(), "prefix" | "entity" | "activity" | "agent") || RELATIONS.iter().any(|r| r.0 == key);
        if !known {
            out.warnings.push(format!("ignored unsupported section {key}"));
        }
    }
    Ok(out)
}

fn decode_node(
    id: &str,
    sec: &str,
    fallback: NodeKind,
    body: &Map<String, Value>,
    warnings: &mut Vec<String>,
) -> ProvNode {
    let declared = body.get(TYPE).and_then(literal);
    let kind = match declared.as_ref().and_then(AttrValue::as_str).and_then(kind_from_type) {
        Some(k) if section(k.category()) == sec => k,
        _ => {
            let shown = declared.map(|d| d.to_string()).unwrap_or_else(|| "none".into());
            warnings.push(format!(
                "{sec} {id}: unrecognized prov:type {shown}, imported as {fallback}"
            ));
            fallback
        }
    };
    let label = body
        .get(LABEL)
        .and_then(literal)
        .map(|l| l.to_string())
        .unwrap_or_else(|| id.to_owned());
    let first_seen_at = body
        .get(FIRST_SEEN)
        .and_then(Value::as_str)
        .and_then(|s| DateTime::parse_from_rfc3339(s).ok())
        .map(|t| t.with_timezone(&Utc))
        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
    let mut attributes = Attributes::new();
    for (k, v) in body {
        if k == TYPE || k == LABEL || k == FIRST_SEEN {
            continue;
        }
        match literal(v) {
            Some(a) => {
                attributes.insert(k.clone(), a);
            }
            None => {
                warnings.push(format!("{sec} {id}: attribute {k} is not a scalar, stored as text"));
                attributes.insert(k.clone(), AttrValue::Text(v.to_string()));
            }
        }
    }
    ProvNode {
        id: id.to_owned(),
        kind,
        label,
        attributes,
        first_seen_at,
    }
}
