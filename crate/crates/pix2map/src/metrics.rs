//! Evaluation metrics for retrieved vs. ground-truth lane graphs:
//! Chamfer distance, Gaussian-kernel MMD, RandLoss over corresponding
//! vertex pairs, and the urban-planning trio (connectivity, density,
//! reach) reported as relative errors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lanegraph::{dist, NodeGraph, Point};

/// Default MMD kernel bandwidth in meters (a quarter of the window
/// half-extent, resolving lane-scale structure).
pub const DEFAULT_MMD_SIGMA: f64 = 5.0;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("kernel bandwidth must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("graph has {got} nodes, need at least {need}")]
    TooFewNodes { need: usize, got: usize },
    #[error("relative error undefined for zero ground truth")]
    ZeroGroundTruth,
}

pub type MetricResult<T> = Result<T, MetricError>;

/// For each vertex of the first graph, the index of its Euclidean
/// nearest neighbor in the second (many-to-one, ties to the smaller
/// index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexCorrespondence {
    pub mapping: Vec<usize>,
}

/// Flat per-pair metric report; urban fields are relative errors of the
/// retrieved graph's urban metrics against the truth's.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chamfer: f64,
    pub rand_loss: f64,
    pub mmd: f64,
    pub urban_density_err: f64,
    pub urban_reach_err: f64,
    pub urban_connectivity_err: f64,
}

impl MetricReport {
    /// Component-wise mean of several reports.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(MetricReport {
            chamfer: reports.iter().map(|r| r.chamfer).sum::<f64>() / n,
            rand_loss: reports.iter().map(|r| r.rand_loss).sum::<f64>() / n,
            mmd: reports.iter().map(|r| r.mmd).sum::<f64>() / n,
            urban_density_err: reports.iter().map(|r| r.urban_density_err).sum::<f64>() / n,
            urban_reach_err: reports.iter().map(|r| r.urban_reach_err).sum::<f64>() / n,
            urban_connectivity_err: reports.iter().map(|r| r.urban_connectivity_err).sum::<f64>()
                / n,
        })
    }
}

/// Symmetric Chamfer distance: the nearest-neighbor distances are
/// averaged within each direction and the two directional means summed.
pub fn chamfer_distance(v1: &[Point], v2: &[Point]) -> MetricResult<f64> {
    if v1.is_empty() || v2.is_empty() {
        return Err(MetricError::EmptyPointSet);
    }
    let directed = |from: &[Point], to: &[Point]| -> f64 {
        let total: f64 = from
            .iter()
            .map(|p| to.iter().map(|q| dist(*p, *q)).fold(f64::INFINITY, f64::min))
            .sum();
        total / from.len() as f64
    };
    Ok(directed(v1, v2) + directed(v2, v1))
}

/// Biased-estimator MMD with a Gaussian kernel of bandwidth `sigma`:
/// the squared distance between kernel-space centroids, self-terms
/// included, clamped at zero against round-off.
pub fn mmd(v1: &[Point], v2: &[Point], sigma: f64) -> MetricResult<f64> {
    if v1.is_empty() || v2.is_empty() {
        return Err(MetricError::EmptyPointSet);
    }
    if !(sigma > 0.0) {
        return Err(MetricError::NonPositiveSigma(sigma));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let kernel_sum = |a: &[Point], b: &[Point]| -> f64 {
        a.iter()
            .map(|p| {
                b.iter()
                    .map(|q| {
                        let dx = p[0] - q[0];
                        let dy = p[1] - q[1];
                        (-(dx * dx + dy * dy) * inv).exp()
                    })
                    .sum::<f64>()
            })
            .sum()
    };
    let n = v1.len() as f64;
    let m = v2.len() as f64;
    let value = kernel_sum(v1, v1) / (n * n) + kernel_sum(v2, v2) / (m * m)
        - 2.0 * kernel_sum(v1, v2) / (n * m);
    Ok(value.max(0.0))
}

/// Nearest-neighbor vertex matching from `g0` into `gi`.
pub fn vertex_correspondence(g0: &NodeGraph, gi: &NodeGraph) -> MetricResult<VertexCorrespondence> {
    if g0.node_count() == 0 || gi.node_count() == 0 {
        return Err(MetricError::EmptyPointSet);
    }
    let mapping = g0
        .positions
        .iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, q) in gi.positions.iter().enumerate() {
                let d = dist(*p, *q);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect();
    Ok(VertexCorrespondence { mapping })
}

/// Number of ordered vertex pairs (v, w), v != w, of `g1` whose edge
/// label disagrees with the corresponding pair of `g2` under the
/// nearest-neighbor correspondence g1 -> g2.
pub fn rand_mismatch_count(g1: &NodeGraph, g2: &NodeGraph) -> MetricResult<usize> {
    let n = g1.node_count();
    if n < 2 {
        return Err(MetricError::TooFewNodes { need: 2, got: n });
    }
    let pi = vertex_correspondence(g1, g2)?;
    let mut mismatches = 0usize;
    for v in 0..n {
        for w in 0..n {
            if v == w {
                continue;
            }
            let e1 = g1.adjacency.get(v, w);
            let e2 = g2.adjacency.get(pi.mapping[v], pi.mapping[w]);
            if e1 != e2 {
                mismatches += 1;
            }
        }
    }
    Ok(mismatches)
}

/// [`rand_mismatch_count`] normalized by the |V1|(|V1|-1) ordered
/// off-diagonal pairs, so values live in [0, 1].
pub fn rand_loss(g1: &NodeGraph, g2: &NodeGraph) -> MetricResult<f64> {
    let n = g1.node_count();
    let raw = rand_mismatch_count(g1, g2)?;
    Ok(raw as f64 / (n * (n - 1)) as f64)
}

/// Connectivity (edges per node), density (edges over the |V|(|V|-1)
/// maximum) and reach (total Euclidean edge length, meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrbanMetrics {
    pub connectivity: f64,
    pub density: f64,
    pub reach: f64,
}

pub fn urban_metrics(g: &NodeGraph) -> MetricResult<UrbanMetrics> {
    let n = g.node_count();
    if n < 2 {
        return Err(MetricError::TooFewNodes { need: 2, got: n });
    }
    let edges = g.edge_count() as f64;
    let reach = g
        .adjacency
        .edges()
        .map(|(v, w)| dist(g.positions[v], g.positions[w]))
        .sum();
    Ok(UrbanMetrics {
        connectivity: edges / n as f64,
        density: edges / (n * (n - 1)) as f64,
        reach,
    })
}

/// Absolute relative error |pred - gt| / |gt|.
pub fn relative_error(pred: f64, gt: f64) -> MetricResult<f64> {
    if gt == 0.0 {
        return Err(MetricError::ZeroGroundTruth);
    }
    Ok((pred - gt).abs() / gt.abs())
}

/// Runs the full metric suite of a retrieved graph against the truth.
pub fn evaluate_pair(
    retrieved: &NodeGraph,
    truth: &NodeGraph,
    sigma: f64,
) -> MetricResult<MetricReport> {
    let urban_r = urban_metrics(retrieved)?;
    let urban_t = urban_metrics(truth)?;
    Ok(MetricReport {
        chamfer: chamfer_distance(&retrieved.positions, &truth.positions)?,
        rand_loss: rand_loss(retrieved, truth)?,
        mmd: mmd(&retrieved.positions, &truth.positions, sigma)?,
        urban_density_err: relative_error(urban_r.density, urban_t.density)?,
        urban_reach_err: relative_error(urban_r.reach, urban_t.reach)?,
        urban_connectivity_err: relative_error(urban_r.connectivity, urban_t.connectivity)?,
    })
}
