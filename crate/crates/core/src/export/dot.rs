use std::fmt::Write;

use crate::model::{EdgeKind, ProvCategory};
use crate::store::ProvGraph;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DotOptions {
    /// Draw `used` and `wasGeneratedBy` from cause to effect so the graph
    /// reads top-down in data-flow order. Labels are unchanged.
    pub reverse_dataflow: bool,
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn shape(category: ProvCategory) -> &'static str {
    match category {
        ProvCategory::Activity => "box",
        ProvCategory::Entity => "ellipse",
        ProvCategory::Agent => "house",
        ProvCategory::Location => "octagon",
        ProvCategory::Placeholder => "diamond",
    }
}

/// Render as a Graphviz digraph, one statement per line.
pub fn to_dot(graph: &ProvGraph, options: &DotOptions) -> String {
    let mut out = String::from("digraph prov {\n  rankdir=TB;\n");
    for node in graph.nodes() {
        let label = if node.label == node.id {
            format!("{}\n({})", node.id, node.kind)
        } else {
            format!("{}\n{}\n({})", node.label, node.id, node.kind)
        };
        writeln!(
            out,
            "  {} [label={}, shape={}];",
            quote(&node.id),
            quote(&label),
            shape(node.category())
        )
        .expect("writing to a String");
    }
    for edge in graph.edges() {
        let flip = options.reverse_dataflow && matches!(edge.kind, EdgeKind::Used | EdgeKind::WasGeneratedBy);
        let (from, to) = if flip {
            (&edge.dst, &edge.src)
        } else {
            (&edge.src, &edge.dst)
        };
        writeln!(
            out,
            "  {} -> {} [label={}];",
            quote(from),
            quote(to),
            quote(edge.kind.as_str())
        )
        .expect("writing to a String");
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_digraph() {
        let dot = to_dot(&ProvGraph::new(), &DotOptions::default());
        assert_eq!(dot, "digraph prov {\n  rankdir=TB;\n}\n");
    }

    #[test]
    fn quoting() {
        assert_eq!(quote(r#"a"b\c"#), r#""a\"b\\c""#);
        assert_eq!(quote("x\ny"), r#""x\ny""#);
    }
}
