//! Wire events and their translation into graph deltas.
//!
//! One [`EventEnvelope`] is serialized per line. Translation is pure: it
//! looks only at the envelope and returns node upserts and edge inserts in
//! canonical order. Ids that an event only refers to (agents, informing
//! activities, parents) become placeholder upserts of kind `Unknown`, which
//! the store resolves when the defining event shows up.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{AttrValue, Attributes, EdgeKind, NodeKind, ProvEdge};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub event_id: String,
    pub emitted_at: String,
    pub site: String,
    pub campaign_id: String,
    pub workflow_id: String,
    pub schema_version: String,
    pub payload: EventPayload,
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum EventPayload {
    AgentRegistered {
        agent_id: String,
        name: String,
        #[serde(default)]
        attributes: Attributes,
    },
    ActivityExecuted(ActivityExecuted),
    DataDeclared {
        #[serde(flatten)]
        data: DataRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attributed_to: Option<String>,
    },
    WorkflowDeclared {
        workflow_id: String,
        name: String,
        campaign_id: String,
    },
    CampaignDeclared {
        campaign_id: String,
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        owner_agent: Option<OwnerAgent>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityExecuted {
    pub activity_id: String,
    pub activity_kind: ActivityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<String>,
    #[serde(default)]
    pub informed_by: Vec<String>,
    #[serde(default)]
    pub used: Vec<DataRef>,
    #[serde(default)]
    pub generated: Vec<DataRef>,
    pub started_at: String,
    pub ended_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telemetry: Option<Attributes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheduling: Option<Attributes>,
    /// Extra activity attributes such as `status`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: Attributes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivityKind {
    Task,
    AgentTool,
    AIModelInvocation,
}

impl From<ActivityKind> for NodeKind {
    fn from(k: ActivityKind) -> Self {
        match k {
            ActivityKind::Task => NodeKind::Task,
            ActivityKind::AgentTool => NodeKind::AgentTool,
            ActivityKind::AIModelInvocation => NodeKind::AIModelInvocation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataKind {
    DomainData,
    SchedulingData,
    TelemetryData,
    Prompt,
    ResponseData,
    AIModel,
}

impl From<DataKind> for NodeKind {
    fn from(k: DataKind) -> Self {
        match k {
            DataKind::DomainData => NodeKind::DomainData,
            DataKind::SchedulingData => NodeKind::SchedulingData,
            DataKind::TelemetryData => NodeKind::TelemetryData,
            DataKind::Prompt => NodeKind::Prompt,
            DataKind::ResponseData => NodeKind::ResponseData,
            DataKind::AIModel => NodeKind::AIModel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRef {
    pub data_id: String,
    pub data_kind: DataKind,
    #[serde(default)]
    pub attributes: Attributes,
}

impl DataRef {
    pub fn new(data_id: impl Into<String>, data_kind: DataKind) -> Self {
        DataRef {
            data_id: data_id.into(),
            data_kind,
            attributes: Attributes::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<AttrValue>) -> Self {
        self.attributes.insert(key.to_owned(), value.into());
        self
    }

    /// Descriptor for a model; the id is derived from its metadata.
    pub fn ai_model(provider: &str, name: &str, parameters: &Attributes) -> Self {
        let mut attributes = parameters.clone();
        attributes.insert("name".into(), name.into());
        attributes.insert("provider".into(), provider.into());
        DataRef {
            data_id: ai_model_id(&attributes).expect("name and provider were just set"),
            data_kind: DataKind::AIModel,
            attributes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OwnerKind {
    Person,
    Organization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnerAgent {
    pub agent_id: String,
    pub kind: OwnerKind,
    pub name: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum EventError {
    #[error("malformed event: {0}")]
    Malformed(String),
    #[error("unsupported schema version {0:?}")]
    UnsupportedSchema(String),
    #[error("field {field} is empty")]
    EmptyId { field: &'static str },
    #[error("field {field} is not an ISO-8601 timestamp: {value:?}")]
    BadTimestamp { field: &'static str, value: String },
    #[error("activity {0} ends before it starts")]
    NegativeDuration(String),
    #[error("model invocation {id} must use exactly one Prompt (found {found})")]
    PromptCount { id: String, found: usize },
    #[error("model invocation {id} may use at most one AIModel (found {found})")]
    ModelCount { id: String, found: usize },
    #[error("AIModel reference {0} lacks name or provider")]
    ModelMetadata(String),
    #[error("node {id} given conflicting kinds {first} and {second}")]
    KindConflict {
        id: String,
        first: NodeKind,
        second: NodeKind,
    },
}

/// Stable id for a model descriptor: hash of provider, name and the
/// remaining attributes taken as parameters.
pub fn ai_model_id(attributes: &Attributes) -> Option<String> {
    let name = attributes.get("name")?.as_str()?;
    let provider = attributes.get("provider")?.as_str()?;
    let mut hasher = Sha256::new();
    hasher.update(provider.as_bytes());
    hasher.update([0x1f]);
    hasher.update(name.as_bytes());
    for (k, v) in attributes {
        if k == "name" || k == "provider" {
            continue;
        }
        hasher.update([0x1f]);
        hasher.update(k.as_bytes());
        hasher.update(b"=");
        hasher.update(serde_json::to_string(v).unwrap_or_default().as_bytes());
    }
    let digest = hex::encode(hasher.finalize());
    Some(format!("aimodel-{}", &digest[..16]))
}

pub fn parse_timestamp(field: &'static str, value: &str) -> Result<DateTime<Utc>, EventError> {
    DateTime::parse_from_rfc3339(value)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| EventError::BadTimestamp {
            field,
            value: value.to_owned(),
        })
}

impl EventEnvelope {
    pub fn from_line(line: &str) -> Result<Self, EventError> {
        serde_json::from_str(line).map_err(|e| EventError::Malformed(e.to_string()))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("envelopes always serialize")
    }

    pub fn emitted_at(&self) -> Result<DateTime<Utc>, EventError> {
        parse_timestamp("emitted_at", &self.emitted_at)
    }

    /// Check envelope and payload invariants.
    pub fn validate(&self) -> Result<(), EventError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(EventError::UnsupportedSchema(self.schema_version.clone()));
        }
        nonempty("event_id", &self.event_id)?;
        self.emitted_at()?;
        match &self.payload {
            EventPayload::AgentRegistered { agent_id, .. } => nonempty("agent_id", agent_id),
            EventPayload::DataDeclared { data, attributed_to } => {
                check_ref(data)?;
                if let Some(a) = attributed_to {
                    nonempty("attributed_to", a)?;
                }
                Ok(())
            }
            EventPayload::WorkflowDeclared {
                workflow_id,
                campaign_id,
                ..
            } => {
                nonempty("workflow_id", workflow_id)?;
                nonempty("campaign_id", campaign_id)
            }
            EventPayload::CampaignDeclared {
                campaign_id,
                owner_agent,
                ..
            } => {
                nonempty("campaign_id", campaign_id)?;
                if let Some(owner) = owner_agent {
                    nonempty("owner_agent.agent_id", &owner.agent_id)?;
                }
                Ok(())
            }
            EventPayload::ActivityExecuted(a) => validate_activity(a),
        }
    }
}

fn nonempty(field: &'static str, value: &str) -> Result<(), EventError> {
    if value.is_empty() {
        Err(EventError::EmptyId { field })
    } else {
        Ok(())
    }
}

fn check_ref(r: &DataRef) -> Result<(), EventError> {
    nonempty("data_id", &r.data_id)?;
    if r.data_kind == DataKind::AIModel && ai_model_id(&r.attributes).is_none() {
        return Err(EventError::ModelMetadata(r.data_id.clone()));
    }
    Ok(())
}

fn validate_activity(a: &ActivityExecuted) -> Result<(), EventError> {
    nonempty("activity_id", &a.activity_id)?;
    let start = parse_timestamp("started_at", &a.started_at)?;
    let end = parse_timestamp("ended_at", &a.ended_at)?;
    if end < start {
        return Err(EventError::NegativeDuration(a.activity_id.clone()));
    }
    for r in a.used.iter().chain(&a.generated) {
        check_ref(r)?;
    }
    for id in &a.informed_by {
        nonempty("informed_by", id)?;
    }
    for (field, value) in [
        ("parent_id", &a.parent_id),
        ("agent_id", &a.agent_id),
        ("location", &a.location),
    ] {
        if let Some(v) = value {
            nonempty(field, v)?;
        }
    }
    if a.activity_kind == ActivityKind::AIModelInvocation {
        let count = |k| a.used.iter().filter(|r| r.data_kind == k).count();
        let prompts = count(DataKind::Prompt);
        if prompts != 1 {
            return Err(EventError::PromptCount {
                id: a.activity_id.clone(),
                found: prompts,
            });
        }
        let models = count(DataKind::AIModel);
        if models > 1 {
            return Err(EventError::ModelCount {
                id: a.activity_id.clone(),
                found: models,
            });
        }
    }
    Ok(())
}

/// Node part of a delta. `Unknown` marks a bare reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeUpsert {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub attributes: Attributes,
}

impl NodeUpsert {
    pub fn reference(id: impl Into<String>) -> Self {
        NodeUpsert {
            id: id.into(),
            kind: NodeKind::Unknown,
            label: None,
            attributes: Attributes::new(),
        }
    }

    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        NodeUpsert {
            kind,
            ..NodeUpsert::reference(id)
        }
    }

    fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    fn with_attributes(mut self, attributes: Attributes) -> Self {
        self.attributes = attributes;
        self
    }
}

/// Node upserts sorted by id and edges sorted by triple.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphDelta {
    pub nodes: Vec<NodeUpsert>,
    pub edges: Vec<ProvEdge>,
}

impl GraphDelta {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty()
    }
}

#[derive(Default)]
struct DeltaBuilder {
    nodes: BTreeMap<String, NodeUpsert>,
    edges: BTreeMap<(String, EdgeKind, String), ProvEdge>,
}

impl DeltaBuilder {
    fn node(&mut self, upsert: NodeUpsert) -> Result<(), EventError> {
        match self.nodes.get_mut(&upsert.id) {
            None => {
                self.nodes.insert(upsert.id.clone(), upsert);
            }
            Some(existing) => {
                if existing.kind.is_placeholder() {
                    existing.kind = upsert.kind;
                } else if !upsert.kind.is_placeholder() && upsert.kind != existing.kind {
                    return Err(EventError::KindConflict {
                        id: upsert.id,
                        first: existing.kind,
                        second: upsert.kind,
                    });
                }
                if upsert.label.is_some() {
                    existing.label = upsert.label;
                }
                existing.attributes.extend(upsert.attributes);
            }
        }
        Ok(())
    }

    fn edge(&mut self, src: &str, kind: EdgeKind, dst: &str) {
        self.edges
            .entry((src.to_owned(), kind, dst.to_owned()))
            .or_insert_with(|| ProvEdge::new(src, kind, dst));
    }

    fn reference(&mut self, id: &str) -> Result<(), EventError> {
        self.node(NodeUpsert::reference(id))
    }

    /// Upsert an entity, normalizing model descriptors to their derived id.
    fn data(&mut self, r: &DataRef) -> Result<String, EventError> {
        let id = match r.data_kind {
            DataKind::AIModel => {
                ai_model_id(&r.attributes).ok_or_else(|| EventError::ModelMetadata(r.data_id.clone()))?
            }
            _ => r.data_id.clone(),
        };
        self.node(NodeUpsert::new(id.clone(), r.data_kind.into()).with_attributes(r.attributes.clone()))?;
        Ok(id)
    }

    fn finish(self) -> GraphDelta {
        GraphDelta {
            nodes: self.nodes.into_values().collect(),
            edges: self.edges.into_values().collect(),
        }
    }
}

pub fn location_id(name: &str) -> String {
    format!("location:{name}")
}

pub fn telemetry_id(activity_id: &str) -> String {
    format!("{activity_id}/telemetry")
}

pub fn scheduling_id(activity_id: &str) -> String {
    format!("{activity_id}/scheduling")
}

/// Map an envelope to the graph changes it implies. Fails without a
/// partial result when the envelope breaks an invariant.
pub fn translate(envelope: &EventEnvelope) -> Result<GraphDelta, EventError> {
    envelope.validate()?;
    let mut b = DeltaBuilder::default();
    match &envelope.payload {
        EventPayload::AgentRegistered {
            agent_id,
            name,
            attributes,
        } => {
            b.node(
                NodeUpsert::new(agent_id, NodeKind::AIAgent)
                    .labelled(name)
                    .with_attributes(attributes.clone()),
            )?;
        }
        EventPayload::CampaignDeclared {
            campaign_id,
            name,
            owner_agent,
        } => {
            b.node(NodeUpsert::new(campaign_id, NodeKind::Campaign).labelled(name))?;
            if let Some(owner) = owner_agent {
                let kind = match owner.kind {
                    OwnerKind::Person => NodeKind::Person,
                    OwnerKind::Organization => NodeKind::Organization,
                };
                b.node(NodeUpsert::new(&owner.agent_id, kind).labelled(&owner.name))?;
                b.edge(campaign_id, EdgeKind::WasAssociatedWith, &owner.agent_id);
            }
        }
        EventPayload::WorkflowDeclared {
            workflow_id,
            name,
            campaign_id,
        } => {
            b.node(NodeUpsert::new(workflow_id, NodeKind::Workflow).labelled(name))?;
            b.reference(campaign_id)?;
            b.edge(workflow_id, EdgeKind::PartOf, campaign_id);
        }
        EventPayload::DataDeclared { data, attributed_to } => {
            let id = b.data(data)?;
            if let Some(agent) = attributed_to {
                b.reference(agent)?;
                b.edge(&id, EdgeKind::WasAttributedTo, agent);
            }
        }
        EventPayload::ActivityExecuted(a) => translate_activity(&mut b, a, &envelope.workflow_id)?,
    }
    Ok(b.finish())
}

fn translate_activity(b: &mut DeltaBuilder, a: &ActivityExecuted, workflow_id: &str) -> Result<(), EventError> {
    let act = a.activity_id.as_str();
    let mut attributes = a.attributes.clone();
    attributes.insert("started_at".into(), a.started_at.clone().into());
    attributes.insert("ended_at".into(), a.ended_at.clone().into());
    let mut node = NodeUpsert::new(act, a.activity_kind.into()).with_attributes(attributes);
    if let Some(name) = &a.name {
        node = node.labelled(name);
    }
    b.node(node)?;

    for r in &a.used {
        let id = b.data(r)?;
        b.edge(act, EdgeKind::Used, &id);
    }

    let mut generated = Vec::new();
    for r in &a.generated {
        generated.push(b.data(r)?);
    }
    for (map, id, kind) in [
        (&a.telemetry, telemetry_id(act), NodeKind::TelemetryData),
        (&a.scheduling, scheduling_id(act), NodeKind::SchedulingData),
    ] {
        if let Some(map) = map {
            b.node(NodeUpsert::new(&id, kind).with_attributes(map.clone()))?;
            generated.push(id);
        }
    }
    for id in &generated {
        b.edge(id, EdgeKind::WasGeneratedBy, act);
    }

    if let Some(agent) = &a.agent_id {
        b.reference(agent)?;
        b.edge(act, EdgeKind::WasAssociatedWith, agent);
        for id in &generated {
            b.edge(id, EdgeKind::WasAttributedTo, agent);
        }
    }
    for informant in &a.informed_by {
        b.reference(informant)?;
        b.edge(act, EdgeKind::WasInformedBy, informant);
    }
    match (&a.parent_id, workflow_id) {
        (Some(parent), _) => {
            b.reference(parent)?;
            b.edge(act, EdgeKind::PartOf, parent);
        }
        (None, wf) if !wf.is_empty() => {
            b.reference(wf)?;
            b.edge(act, EdgeKind::PartOf, wf);
        }
        _ => {}
    }
    if let Some(site) = &a.location {
        let id = location_id(site);
        b.node(NodeUpsert::new(&id, NodeKind::Location).labelled(site))?;
        b.edge(act, EdgeKind::AtLocation, &id);
    }
    Ok(())
}
