//! Lane-graph data model and preprocessing.
//!
//! Street maps arrive as *segment graphs*: lanes as polylines plus
//! lane-level successor connectivity. Everything downstream consumes
//! *node graphs*: one vertex per centerline point with a directed binary
//! adjacency matrix. This module owns the conversion, spline-based
//! equidistant resampling, ego-frame window extraction, validation and
//! the JSON file format.

mod io;
mod spline;

pub use io::{
    fmt_sig, graph_to_json, parse_graph, parse_segment_graph, read_graph, read_segment_graph,
    segment_graph_to_json, write_graph, write_segment_graph,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default node spacing in meters for [`resample_graph`].
pub const DEFAULT_SPACING: f64 = 2.0;
/// Default window half-extent in meters (40 m x 40 m windows).
pub const DEFAULT_HALF_EXTENT: f64 = 20.0;
/// Segment-join endpoints closer than this merge into one node during
/// resampling, so inter-segment connections never produce zero-length edges.
pub const JOIN_MERGE_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("segment {segment}: polyline has {points} points, need at least 2")]
    ShortPolyline { segment: usize, points: usize },
    #[error("segment {segment}: consecutive duplicate point at index {index}")]
    DuplicatePoint { segment: usize, index: usize },
    #[error("successor pair {pair} references segment {index}, but there are only {segments} segments")]
    BadSuccessor { pair: usize, index: usize, segments: usize },
    #[error("segment {segment} has zero length, cannot resample")]
    ZeroLengthSegment { segment: usize },
    #[error("spacing must be positive, got {0}")]
    NonPositiveSpacing(f64),
    #[error("half extent must be positive, got {0}")]
    NonPositiveHalfExtent(f64),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: String, message: String },
    #[error("graph contains a non-finite coordinate at node {0}")]
    NonFinitePosition(usize),
}

pub type GraphResult<T> = Result<T, GraphError>;

/// A 2-D point in meters.
pub type Point = [f64; 2];

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// One lane centerline as an ordered polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSegment {
    pub polyline: Vec<Point>,
}

impl LaneSegment {
    pub fn new(polyline: Vec<Point>) -> Self {
        Self { polyline }
    }

    fn check(&self, segment: usize) -> GraphResult<()> {
        if self.polyline.len() < 2 {
            return Err(GraphError::ShortPolyline { segment, points: self.polyline.len() });
        }
        for (i, pair) in self.polyline.windows(2).enumerate() {
            if dist(pair[0], pair[1]) <= 0.0 {
                return Err(GraphError::DuplicatePoint { segment, index: i + 1 });
            }
        }
        Ok(())
    }

    /// Polyline length as the sum of chord lengths.
    pub fn length(&self) -> f64 {
        self.polyline.windows(2).map(|p| dist(p[0], p[1])).sum()
    }
}

/// Street map in raw form: lane segments plus (predecessor, successor)
/// pairs of segment indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentGraph {
    pub segments: Vec<LaneSegment>,
    pub successors: Vec<(usize, usize)>,
}

impl SegmentGraph {
    pub fn new(segments: Vec<LaneSegment>, successors: Vec<(usize, usize)>) -> Self {
        Self { segments, successors }
    }

    /// Checks the type invariants: valid successor indices, every polyline
    /// with at least two pairwise-distinct consecutive points.
    pub fn check(&self) -> GraphResult<()> {
        for (i, seg) in self.segments.iter().enumerate() {
            seg.check(i)?;
        }
        for (p, &(a, b)) in self.successors.iter().enumerate() {
            for index in [a, b] {
                if index >= self.segments.len() {
                    return Err(GraphError::BadSuccessor { pair: p, index, segments: self.segments.len() });
                }
            }
        }
        Ok(())
    }
}

/// Dense directed binary adjacency matrix, row = source, column = target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyMatrix {
    side: usize,
    data: Vec<u8>,
}

impl AdjacencyMatrix {
    pub fn zeros(side: usize) -> Self {
        Self { side, data: vec![0; side * side] }
    }

    /// Builds from raw row-major entries; used by validation tests to
    /// construct deliberately malformed matrices.
    pub fn from_raw(side: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), side * side, "adjacency data must be side*side");
        Self { side, data }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.side + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.side + col] = value;
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.data[row * self.side..(row + 1) * self.side]
    }

    /// Directed edges in row-major (source, target) order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let side = self.side;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(i, _)| (i / side, i % side))
    }

    pub fn edge_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Street map as a node graph: lane-node positions in an ego-centric
/// frame plus directed connectivity.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGraph {
    pub positions: Vec<Point>,
    pub adjacency: AdjacencyMatrix,
}

impl NodeGraph {
    pub fn new(positions: Vec<Point>, edges: &[(usize, usize)]) -> Self {
        let mut adjacency = AdjacencyMatrix::zeros(positions.len());
        for &(a, b) in edges {
            adjacency.set(a, b, 1);
        }
        Self { positions, adjacency }
    }

    pub fn empty() -> Self {
        Self { positions: Vec::new(), adjacency: AdjacencyMatrix::zeros(0) }
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.edge_count()
    }

    /// Axis-aligned bounding box of the node positions, `None` when empty.
    pub fn bounds(&self) -> Option<(Point, Point)> {
        let first = *self.positions.first()?;
        let mut min = first;
        let mut max = first;
        for p in &self.positions {
            min[0] = min[0].min(p[0]);
            min[1] = min[1].min(p[1]);
            max[0] = max[0].max(p[0]);
            max[1] = max[1].max(p[1]);
        }
        Some((min, max))
    }

    /// Applies a consistent permutation to nodes: `perm[new] = old`.
    pub fn permuted(&self, perm: &[usize]) -> NodeGraph {
        assert_eq!(perm.len(), self.node_count());
        let positions: Vec<Point> = perm.iter().map(|&old| self.positions[old]).collect();
        let mut adjacency = AdjacencyMatrix::zeros(perm.len());
        for (new_r, &old_r) in perm.iter().enumerate() {
            for (new_c, &old_c) in perm.iter().enumerate() {
                adjacency.set(new_r, new_c, self.adjacency.get(old_r, old_c));
            }
        }
        NodeGraph { positions, adjacency }
    }
}

/// Ego-vehicle pose in the map frame; heading is counterclockwise from
/// the map +x axis and normalized to [-pi, pi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoPose {
    pub position: Point,
    pub heading: f64,
}

impl EgoPose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { position: [x, y], heading: normalize_angle(heading) }
    }
}

/// Wraps an angle into [-pi, pi).
pub fn normalize_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let two_pi = 2.0 * PI;
    let mut a = (theta + PI).rem_euclid(two_pi);
    if a < 0.0 {
        a += two_pi;
    }
    a - PI
}

// ── segment -> node conversion ─────────────────────────────────────────

/// Converts a segment graph to a node graph: every polyline point becomes
/// a node, successive points in a polyline connect with a directed edge,
/// and each successor pair connects the last node of the predecessor to
/// the first node of the successor. Node order is segments in order,
/// points in order.
pub fn segment_to_node_graph(seg: &SegmentGraph) -> GraphResult<NodeGraph> {
    seg.check()?;
    let mut positions = Vec::new();
    let mut starts = Vec::with_capacity(seg.segments.len());
    for s in &seg.segments {
        starts.push(positions.len());
        positions.extend_from_slice(&s.polyline);
    }
    let mut edges = Vec::new();
    for (i, s) in seg.segments.iter().enumerate() {
        let base = starts[i];
        for k in 0..s.polyline.len() - 1 {
            edges.push((base + k, base + k + 1));
        }
    }
    for &(a, b) in &seg.successors {
        let last_of_a = starts[a] + seg.segments[a].polyline.len() - 1;
        let first_of_b = starts[b];
        edges.push((last_of_a, first_of_b));
    }
    Ok(NodeGraph::new(positions, &edges))
}

// ── resampling ─────────────────────────────────────────────────────────

/// Resamples every segment to approximately equidistant nodes (cubic
/// parametric spline, arc-length spacing, both endpoints kept; the final
/// interval may be shorter), then rebuilds connectivity. Segment-join
/// endpoints closer than [`JOIN_MERGE_EPS`] collapse into a single node.
pub fn resample_graph(seg: &SegmentGraph, spacing: f64) -> GraphResult<NodeGraph> {
    if !(spacing > 0.0) {
        return Err(GraphError::NonPositiveSpacing(spacing));
    }
    seg.check()?;

    let mut positions = Vec::new();
    let mut starts = Vec::with_capacity(seg.segments.len());
    let mut lens = Vec::with_capacity(seg.segments.len());
    for (i, s) in seg.segments.iter().enumerate() {
        let pts = spline::resample_polyline(&s.polyline, spacing)
            .map_err(|_| GraphError::ZeroLengthSegment { segment: i })?;
        starts.push(positions.len());
        lens.push(pts.len());
        positions.extend(pts);
    }

    let mut edges = Vec::new();
    let mut join_edges = Vec::new();
    for i in 0..seg.segments.len() {
        for k in 0..lens[i] - 1 {
            edges.push((starts[i] + k, starts[i] + k + 1));
        }
    }
    for &(a, b) in &seg.successors {
        let last_of_a = starts[a] + lens[a] - 1;
        let first_of_b = starts[b];
        join_edges.push((last_of_a, first_of_b));
    }

    // Merge coincident join endpoints. Union-by-min keeps the earliest
    // node (and its exact position) as the representative.
    let mut root: Vec<usize> = (0..positions.len()).collect();
    fn find(root: &mut [usize], mut i: usize) -> usize {
        while root[i] != i {
            root[i] = root[root[i]];
            i = root[i];
        }
        i
    }
    for &(u, v) in &join_edges {
        if dist(positions[u], positions[v]) <= JOIN_MERGE_EPS {
            let (ru, rv) = (find(&mut root, u), find(&mut root, v));
            let (lo, hi) = (ru.min(rv), ru.max(rv));
            root[hi] = lo;
        }
    }

    let mut remap = vec![usize::MAX; positions.len()];
    let mut merged_positions = Vec::new();
    for i in 0..positions.len() {
        if find(&mut root, i) == i {
            remap[i] = merged_positions.len();
            merged_positions.push(positions[i]);
        }
    }
    let mut adjacency = AdjacencyMatrix::zeros(merged_positions.len());
    for &(u, v) in edges.iter().chain(join_edges.iter()) {
        let (ru, rv) = (find(&mut root, u), find(&mut root, v));
        if ru != rv {
            adjacency.set(remap[ru], remap[rv], 1);
        }
    }
    Ok(NodeGraph { positions: merged_positions, adjacency })
}

// ── window extraction ──────────────────────────────────────────────────

/// Transforms a map into the ego frame of `pose` (driving direction maps
/// to +x) and keeps the nodes inside the square window of the given
/// half-extent, restricting connectivity to the survivors.
pub fn extract_window(map: &NodeGraph, pose: &EgoPose, half_extent: f64) -> GraphResult<NodeGraph> {
    if !(half_extent > 0.0) {
        return Err(GraphError::NonPositiveHalfExtent(half_extent));
    }
    let (sin, cos) = pose.heading.sin_cos();
    let mut keep = Vec::new();
    let mut positions = Vec::new();
    for (i, p) in map.positions.iter().enumerate() {
        let dx = p[0] - pose.position[0];
        let dy = p[1] - pose.position[1];
        let x = cos * dx + sin * dy;
        let y = -sin * dx + cos * dy;
        if x.abs() <= half_extent && y.abs() <= half_extent {
            keep.push(i);
            positions.push([x, y]);
        }
    }
    let mut adjacency = AdjacencyMatrix::zeros(keep.len());
    for (new_r, &old_r) in keep.iter().enumerate() {
        for (new_c, &old_c) in keep.iter().enumerate() {
            adjacency.set(new_r, new_c, map.adjacency.get(old_r, old_c));
        }
    }
    Ok(NodeGraph { positions, adjacency })
}

// ── validation ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    AdjacencyNotSquare { nodes: usize, side: usize },
    NonBinaryEntry { row: usize, col: usize, value: u8 },
    NonzeroDiagonal { index: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::AdjacencyNotSquare { nodes, side } => {
                write!(f, "adjacency side {side} does not match node count {nodes}")
            }
            Violation::NonBinaryEntry { row, col, value } => {
                write!(f, "adjacency entry ({row},{col}) is {value}, expected 0 or 1")
            }
            Violation::NonzeroDiagonal { index } => {
                write!(f, "adjacency diagonal entry {index} is nonzero")
            }
        }
    }
}

/// Invariant report for a node graph; empty iff the graph is valid.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks all node-graph invariants and reports every violation found.
pub fn validate(g: &NodeGraph) -> ValidationReport {
    let mut violations = Vec::new();
    let side = g.adjacency.side();
    if side != g.positions.len() {
        violations.push(Violation::AdjacencyNotSquare { nodes: g.positions.len(), side });
    }
    for row in 0..side {
        for col in 0..side {
            let v = g.adjacency.get(row, col);
            if v > 1 {
                violations.push(Violation::NonBinaryEntry { row, col, value: v });
            }
            if row == col && v != 0 {
                violations.push(Violation::NonzeroDiagonal { index: row });
            }
        }
    }
    ValidationReport { violations }
}
