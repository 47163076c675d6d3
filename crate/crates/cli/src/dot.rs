//! Graphviz rendering of an explanation over its computation subgraph.

use std::fmt::Write;

use tgx_core::explainer::ExplanationRun;
use tgx_core::graph::{ComputationSubgraph, DynamicGraph, NodeId};

const GRAY: &str = "gray60";
const RED: &str = "red";

/// DOT identifiers are always quoted; only `"` and `\` need escaping.
fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// One edge statement per context edge: explanation edges red with their
/// probability, the rest gray; the explained endpoints are red nodes.
/// Node names are the graph's input labels.
pub fn export_dot(run: &ExplanationRun, context: &[ComputationSubgraph], graph: &DynamicGraph) -> String {
    let label = |v: NodeId| quote(&graph.label(v));
    let mut nodes: Vec<NodeId> = context.iter().flat_map(|s| s.nodes().iter().copied()).collect();
    nodes.extend([run.edge.src, run.edge.dst]);
    nodes.sort_unstable();
    nodes.dedup();

    let mut out = String::new();
    out.push_str("digraph explanation {\n");
    out.push_str("  node [shape=circle, style=filled, fillcolor=white, color=gray40];\n");
    for &v in &nodes {
        if v == run.edge.src || v == run.edge.dst {
            let _ = writeln!(out, "  {} [color={RED}, fillcolor={RED}, fontcolor=white];", label(v));
        } else {
            let _ = writeln!(out, "  {};", label(v));
        }
    }
    for sub in context {
        for e in sub.edges() {
            let kept = run
                .explanation
                .retained
                .iter()
                .find(|r| r.src == e.src && r.dst == e.dst && r.t == e.t);
            let time = format!("t={}", e.t);
            match kept {
                Some(r) => {
                    let text = quote(&format!("p={:.3} {time}", r.p));
                    let _ = writeln!(
                        out,
                        "  {} -> {} [color={RED}, penwidth=2, label={text}];",
                        label(e.src),
                        label(e.dst)
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "  {} -> {} [color={GRAY}, tooltip={}];",
                        label(e.src),
                        label(e.dst),
                        quote(&time)
                    );
                }
            }
        }
    }
    out.push_str("}\n");
    out
}
