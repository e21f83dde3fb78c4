//! Interchange formats: W3C PROV-JSON (export and import) and Graphviz DOT.

mod dot;
mod prov_json;

pub use dot::{to_dot, DotOptions};
pub use prov_json::{from_prov_json, to_prov_json, ExportError, ImportedGraph, EXTENSION_NAMESPACE, EXTENSION_PREFIX};
