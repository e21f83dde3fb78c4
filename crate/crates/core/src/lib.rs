//! Provenance for agentic workflows.
//!
//! Tool executions, model invocations, prompts and responses are recorded
//! as first-class nodes next to ordinary workflow tasks and data, in one
//! graph that extends the W3C PROV core (entities, activities, agents).
//!
//! * [`model`] - node/edge kinds and the domain/range table
//! * [`event`] - wire events and their translation to graph deltas
//! * [`store`] - log-backed graph with adjacency indexes
//! * [`ingest`] - deduplicating, order-tolerant consolidation
//! * [`query`] - lineage, impact, decision context, root cause, paths
//! * [`export`] - PROV-JSON and DOT
//! * [`sim`] - deterministic additive-manufacturing workflow generator

pub mod event;
pub mod export;
pub mod ingest;
pub mod model;
pub mod query;
pub mod sim;
pub mod store;

pub use event::{translate, DataKind, DataRef, EventEnvelope, EventPayload, GraphDelta, NodeUpsert};
pub use ingest::{ingest_event, ingest_stream, IngestStats, Listener, Shutdown, Source};
pub use model::{
    category_of, check_edge, AttrValue, Attributes, EdgeKey, EdgeKind, NodeKind, ProvCategory, ProvEdge, ProvNode,
    Violation,
};
pub use query::{backward_lineage, decision_context, forward_impact, paths, root_cause, DecisionContext, Subgraph};
pub use sim::{generate, SimConfig};
pub use store::{Direction, ProvGraph, Replay, SharedGraph, StoreError};

/// Whole-graph conformance check.
pub fn validate_graph(graph: &ProvGraph) -> Vec<Violation> {
    graph.validate()
}
