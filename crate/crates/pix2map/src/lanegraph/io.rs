//! Canonical JSON serialization of graphs.
//!
//! Writes are byte-stable: fields in fixed order, floats rendered with up
//! to nine significant digits (trailing zeros trimmed), one node/edge per
//! line. Reads go through serde for line/column context on malformed
//! input, then apply semantic checks (index ranges, no self-loops).

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{GraphError, GraphResult, LaneSegment, NodeGraph, Point, SegmentGraph};

/// Formats a float with up to `sig` significant digits, choosing fixed or
/// scientific notation like printf `%g` and trimming trailing zeros.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    assert!(sig >= 1);
    if x == 0.0 {
        return "0".to_string();
    }
    debug_assert!(x.is_finite());
    // Round first via scientific formatting, then pick the notation from
    // the rounded exponent, mirroring %g.
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("{:e} always contains an exponent");
    let exp: i32 = exp.parse().expect("{:e} exponent is an integer");
    let neg = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();

    let body = if -4 <= exp && exp < sig as i32 {
        let point = exp + 1; // digits before the decimal point
        let mut s = String::new();
        if point <= 0 {
            s.push_str("0.");
            for _ in 0..-point {
                s.push('0');
            }
            s.push_str(&digits);
        } else if (point as usize) >= digits.len() {
            s.push_str(&digits);
            for _ in 0..point as usize - digits.len() {
                s.push('0');
            }
        } else {
            s.push_str(&digits[..point as usize]);
            s.push('.');
            s.push_str(&digits[point as usize..]);
        }
        if s.contains('.') {
            s.truncate(s.trim_end_matches('0').trim_end_matches('.').len());
        }
        s
    } else {
        let trimmed = digits.trim_end_matches('0');
        let trimmed = if trimmed.is_empty() { "0" } else { trimmed };
        let mut s = String::new();
        s.push_str(&trimmed[..1]);
        if trimmed.len() > 1 {
            s.push('.');
            s.push_str(&trimmed[1..]);
        }
        let _ = write!(s, "e{exp}");
        s
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

fn fmt_point(p: Point) -> String {
    format!("[{}, {}]", fmt_sig(p[0], 9), fmt_sig(p[1], 9))
}

/// Renders a node graph in the canonical on-disk layout.
pub fn graph_to_json(g: &NodeGraph) -> GraphResult<String> {
    for (i, p) in g.positions.iter().enumerate() {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(GraphError::NonFinitePosition(i));
        }
    }
    let mut s = String::new();
    s.push_str("{\n  \"nodes\": [");
    for (i, p) in g.positions.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str("\n    ");
        s.push_str(&fmt_point(*p));
    }
    if !g.positions.is_empty() {
        s.push_str("\n  ");
    }
    s.push_str("],\n  \"edges\": [");
    let mut first = true;
    for (a, b) in g.adjacency.edges() {
        if !first {
            s.push(',');
        }
        first = false;
        let _ = write!(s, "\n    [{a}, {b}]");
    }
    if !first {
        s.push_str("\n  ");
    }
    s.push_str("]\n}\n");
    Ok(s)
}

#[derive(Deserialize)]
struct RawGraph {
    nodes: Vec<Point>,
    edges: Vec<[usize; 2]>,
}

/// Parses the canonical node-graph JSON, rejecting out-of-range edge
/// indices and self-loops. `origin` labels error messages.
pub fn parse_graph(text: &str, origin: &str) -> GraphResult<NodeGraph> {
    let raw: RawGraph = serde_json::from_str(text).map_err(|e| GraphError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let n = raw.nodes.len();
    for (k, &[a, b]) in raw.edges.iter().enumerate() {
        if a >= n || b >= n {
            return Err(GraphError::Parse {
                path: origin.to_string(),
                message: format!("edge entry {k} is [{a}, {b}], but there are only {n} nodes"),
            });
        }
        if a == b {
            return Err(GraphError::Parse {
                path: origin.to_string(),
                message: format!("edge entry {k} is a self-loop on node {a}"),
            });
        }
    }
    for (i, p) in raw.nodes.iter().enumerate() {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(GraphError::Parse {
                path: origin.to_string(),
                message: format!("node {i} has a non-finite coordinate"),
            });
        }
    }
    let edges: Vec<(usize, usize)> = raw.edges.iter().map(|&[a, b]| (a, b)).collect();
    Ok(NodeGraph::new(raw.nodes, &edges))
}

pub fn write_graph(g: &NodeGraph, path: &Path) -> GraphResult<()> {
    let text = graph_to_json(g)?;
    crate::fsutil::write_atomic(path, text.as_bytes()).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_graph(path: &Path) -> GraphResult<NodeGraph> {
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_graph(&text, &path.display().to_string())
}

/// Renders a segment graph: polylines plus successor pairs.
pub fn segment_graph_to_json(g: &SegmentGraph) -> GraphResult<String> {
    let mut s = String::new();
    s.push_str("{\n  \"segments\": [");
    for (i, seg) in g.segments.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str("\n    [");
        for (k, p) in seg.polyline.iter().enumerate() {
            if k > 0 {
                s.push_str(", ");
            }
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(GraphError::NonFinitePosition(k));
            }
            s.push_str(&fmt_point(*p));
        }
        s.push(']');
    }
    if !g.segments.is_empty() {
        s.push_str("\n  ");
    }
    s.push_str("],\n  \"successors\": [");
    for (i, &(a, b)) in g.successors.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "\n    [{a}, {b}]");
    }
    if !g.successors.is_empty() {
        s.push_str("\n  ");
    }
    s.push_str("]\n}\n");
    Ok(s)
}

#[derive(Deserialize)]
struct RawSegmentGraph {
    segments: Vec<Vec<Point>>,
    successors: Vec<[usize; 2]>,
}

pub fn parse_segment_graph(text: &str, origin: &str) -> GraphResult<SegmentGraph> {
    let raw: RawSegmentGraph = serde_json::from_str(text).map_err(|e| GraphError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let graph = SegmentGraph::new(
        raw.segments.into_iter().map(LaneSegment::new).collect(),
        raw.successors.iter().map(|&[a, b]| (a, b)).collect(),
    );
    graph.check().map_err(|e| GraphError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    Ok(graph)
}

pub fn write_segment_graph(g: &SegmentGraph, path: &Path) -> GraphResult<()> {
    let text = segment_graph_to_json(g)?;
    crate::fsutil::write_atomic(path, text.as_bytes()).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_segment_graph(path: &Path) -> GraphResult<SegmentGraph> {
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_segment_graph(&text, &path.display().to_string())
}
