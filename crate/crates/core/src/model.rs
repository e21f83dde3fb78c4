//! Node kinds, edge kinds and the domain/range table every edge must satisfy.
//!
//! The type system extends the three core PROV classes with workflow
//! structure (campaign, workflow, task), agentic activities (tool executions
//! and model invocations) and the data objects they exchange (prompts,
//! responses, model descriptors, telemetry and scheduling records).

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Concrete type of a graph vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    // activities
    Campaign,
    Workflow,
    Task,
    AgentTool,
    AIModelInvocation,
    // entities
    DomainData,
    SchedulingData,
    TelemetryData,
    Prompt,
    ResponseData,
    AIModel,
    // agents
    AIAgent,
    Person,
    Organization,
    // other
    Location,
    /// Forward reference to an id no event has defined yet.
    Unknown,
}

impl NodeKind {
    pub const ALL: [NodeKind; 16] = [
        NodeKind::Campaign,
        NodeKind::Workflow,
        NodeKind::Task,
        NodeKind::AgentTool,
        NodeKind::AIModelInvocation,
        NodeKind::DomainData,
        NodeKind::SchedulingData,
        NodeKind::TelemetryData,
        NodeKind::Prompt,
        NodeKind::ResponseData,
        NodeKind::AIModel,
        NodeKind::AIAgent,
        NodeKind::Person,
        NodeKind::Organization,
        NodeKind::Location,
        NodeKind::Unknown,
    ];

    pub fn category(self) -> ProvCategory {
        category_of(self)
    }

    pub fn is_placeholder(self) -> bool {
        self == NodeKind::Unknown
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Campaign => "Campaign",
            NodeKind::Workflow => "Workflow",
            NodeKind::Task => "Task",
            NodeKind::AgentTool => "AgentTool",
            NodeKind::AIModelInvocation => "AIModelInvocation",
            NodeKind::DomainData => "DomainData",
            NodeKind::SchedulingData => "SchedulingData",
            NodeKind::TelemetryData => "TelemetryData",
            NodeKind::Prompt => "Prompt",
            NodeKind::ResponseData => "ResponseData",
            NodeKind::AIModel => "AIModel",
            NodeKind::AIAgent => "AIAgent",
            NodeKind::Person => "Person",
            NodeKind::Organization => "Organization",
            NodeKind::Location => "Location",
            NodeKind::Unknown => "Unknown",
        }
    }

    pub fn parse(s: &str) -> Option<NodeKind> {
        NodeKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The PROV core class a kind belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProvCategory {
    Activity,
    Entity,
    Agent,
    Location,
    Placeholder,
}

impl fmt::Display for ProvCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub fn category_of(kind: NodeKind) -> ProvCategory {
    use NodeKind::*;
    match kind {
        Campaign | Workflow | Task | AgentTool | AIModelInvocation => ProvCategory::Activity,
        DomainData | SchedulingData | TelemetryData | Prompt | ResponseData | AIModel => ProvCategory::Entity,
        AIAgent | Person | Organization => ProvCategory::Agent,
        Location => ProvCategory::Location,
        Unknown => ProvCategory::Placeholder,
    }
}

/// A typed relation between two nodes. Directions follow standard PROV
/// (e.g. `Used` points from the activity to the entity it consumed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Used,
    WasGeneratedBy,
    WasAttributedTo,
    WasAssociatedWith,
    WasInformedBy,
    WasDerivedFrom,
    ActedOnBehalfOf,
    AtLocation,
    PartOf,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 9] = [
        EdgeKind::Used,
        EdgeKind::WasGeneratedBy,
        EdgeKind::WasAttributedTo,
        EdgeKind::WasAssociatedWith,
        EdgeKind::WasInformedBy,
        EdgeKind::WasDerivedFrom,
        EdgeKind::ActedOnBehalfOf,
        EdgeKind::AtLocation,
        EdgeKind::PartOf,
    ];

    /// Allowed (source, destination) categories.
    pub fn constraint(self) -> (&'static [ProvCategory], ProvCategory) {
        use ProvCategory::*;
        match self {
            EdgeKind::Used => (&[Activity], Entity),
            EdgeKind::WasGeneratedBy => (&[Entity], Activity),
            EdgeKind::WasAttributedTo => (&[Entity], Agent),
            EdgeKind::WasAssociatedWith => (&[Activity], Agent),
            EdgeKind::WasInformedBy => (&[Activity], Activity),
            EdgeKind::WasDerivedFrom => (&[Entity], Entity),
            EdgeKind::ActedOnBehalfOf => (&[Agent], Agent),
            EdgeKind::AtLocation => (&[Activity, Entity, Agent], Location),
            EdgeKind::PartOf => (&[Activity], Activity),
        }
    }

    /// Edges that carry data flow and are followed by lineage traversal.
    pub fn is_dataflow(self) -> bool {
        matches!(
            self,
            EdgeKind::Used | EdgeKind::WasGeneratedBy | EdgeKind::WasInformedBy | EdgeKind::WasDerivedFrom
        )
    }

    /// Responsibility annotations kept as context in query results.
    pub fn is_responsibility(self) -> bool {
        matches!(self, EdgeKind::WasAttributedTo | EdgeKind::WasAssociatedWith)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Used => "used",
            EdgeKind::WasGeneratedBy => "wasGeneratedBy",
            EdgeKind::WasAttributedTo => "wasAttributedTo",
            EdgeKind::WasAssociatedWith => "wasAssociatedWith",
            EdgeKind::WasInformedBy => "wasInformedBy",
            EdgeKind::WasDerivedFrom => "wasDerivedFrom",
            EdgeKind::ActedOnBehalfOf => "actedOnBehalfOf",
            EdgeKind::AtLocation => "atLocation",
            EdgeKind::PartOf => "partOf",
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why an edge does not fit the constraint table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeViolation {
    pub kind: EdgeKind,
    pub expected_src: &'static [ProvCategory],
    pub expected_dst: ProvCategory,
    pub actual_src: ProvCategory,
    pub actual_dst: ProvCategory,
}

impl fmt::Display for EdgeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let expected: Vec<_> = self.expected_src.iter().map(|c| c.to_string()).collect();
        write!(
            f,
            "{} expects {}->{}, got {}->{}",
            self.kind,
            expected.join("|"),
            self.expected_dst,
            self.actual_src,
            self.actual_dst
        )
    }
}

/// Check an edge kind against its domain/range row. Placeholders match
/// any category; validation is deferred until they resolve.
pub fn check_edge(kind: EdgeKind, src: ProvCategory, dst: ProvCategory) -> Result<(), EdgeViolation> {
    let (expected_src, expected_dst) = kind.constraint();
    let src_ok = src == ProvCategory::Placeholder || expected_src.contains(&src);
    let dst_ok = dst == ProvCategory::Placeholder || dst == expected_dst;
    if src_ok && dst_ok {
        Ok(())
    } else {
        Err(EdgeViolation {
            kind,
            expected_src,
            expected_dst,
            actual_src: src,
            actual_dst: dst,
        })
    }
}

/// Scalar attribute value. Timestamps travel as ISO-8601 text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl AttrValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttrValue::Int(i) => Some(*i as f64),
            AttrValue::Float(f) => Some(*f),
            _ => None,
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Bool(b) => write!(f, "{b}"),
            AttrValue::Int(i) => write!(f, "{i}"),
            AttrValue::Float(x) => write!(f, "{x}"),
            AttrValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<&str> for AttrValue {
    fn from(s: &str) -> Self {
        AttrValue::Text(s.to_owned())
    }
}

impl From<String> for AttrValue {
    fn from(s: String) -> Self {
        AttrValue::Text(s)
    }
}

impl From<bool> for AttrValue {
    fn from(b: bool) -> Self {
        AttrValue::Bool(b)
    }
}

impl From<i64> for AttrValue {
    fn from(i: i64) -> Self {
        AttrValue::Int(i)
    }
}

impl From<f64> for AttrValue {
    fn from(x: f64) -> Self {
        AttrValue::Float(x)
    }
}

/// Flat attribute map; sorted so serialization is canonical.
pub type Attributes = BTreeMap<String, AttrValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvNode {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
    #[serde(default)]
    pub attributes: Attributes,
    pub first_seen_at: DateTime<Utc>,
}

impl ProvNode {
    pub fn category(&self) -> ProvCategory {
        self.kind.category()
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).and_then(AttrValue::as_str)
    }
}

/// The identity of an edge: graphs hold at most one edge per triple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub src: String,
    pub kind: EdgeKind,
    pub dst: String,
}

impl EdgeKey {
    pub fn new(src: impl Into<String>, kind: EdgeKind, dst: impl Into<String>) -> Self {
        EdgeKey {
            src: src.into(),
            kind,
            dst: dst.into(),
        }
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -{}-> {}", self.src, self.kind, self.dst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvEdge {
    pub src: String,
    pub kind: EdgeKind,
    pub dst: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: Attributes,
}

impl ProvEdge {
    pub fn new(src: impl Into<String>, kind: EdgeKind, dst: impl Into<String>) -> Self {
        ProvEdge {
            src: src.into(),
            kind,
            dst: dst.into(),
            attributes: Attributes::new(),
        }
    }

    pub fn key(&self) -> EdgeKey {
        EdgeKey::new(self.src.clone(), self.kind, self.dst.clone())
    }
}

/// A conformance problem found by [`validate_graph`](crate::store::ProvGraph::validate).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Edge { edge: EdgeKey, detail: EdgeViolation },
    DanglingEdge { edge: EdgeKey, missing: String },
    UnresolvedPlaceholder { id: String },
    MultipleGeneration { entity: String, activities: Vec<String> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Edge { edge, detail } => write!(f, "edge {edge}: {detail}"),
            Violation::DanglingEdge { edge, missing } => {
                write!(f, "edge {edge}: endpoint {missing} does not exist")
            }
            Violation::UnresolvedPlaceholder { id } => write!(f, "node {id} is an unresolved placeholder"),
            Violation::MultipleGeneration { entity, activities } => write!(
                f,
                "entity {entity} has {} generating activities: {}",
                activities.len(),
                activities.join(", ")
            ),
        }
    }
}
