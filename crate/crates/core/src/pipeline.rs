//! End-to-end runs: structure detection, likelihood fit, and ratio sweeps.

use serde::{Deserialize, Serialize};

use crate::abstract_graph::{self, AbstractGraph, MatchReport, RefinedPartition};
use crate::em::{self, EmConfig, FitReport, StrataModel};
use crate::local_structure::{self, LocalLabel, Partition, ReconstructionConfig, GUARANTEE_RATIO};
use crate::{Error, Execution, PointCloud, Result};

/// Everything produced by the combinatorial half of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub config: ReconstructionConfig,
    pub labels: Vec<LocalLabel>,
    pub partition: Partition,
    pub refined: RefinedPartition,
    pub graph: AbstractGraph,
    /// Set when `R < 12 eps`, where recovery is not guaranteed.
    pub below_guarantee: bool,
}

pub fn reconstruct(cloud: &PointCloud, config: &ReconstructionConfig) -> Result<Reconstruction> {
    reconstruct_with(cloud, config, Execution::default())
}

pub fn reconstruct_with(cloud: &PointCloud, config: &ReconstructionConfig, exec: Execution) -> Result<Reconstruction> {
    let labels = local_structure::classify_all(cloud, config, exec)?;
    let partition = Partition::from_labels(&labels);
    let q0 = abstract_graph::cluster_p0(cloud, &partition, config)?;
    let q1 = abstract_graph::cluster_p1(cloud, &partition, config)?;
    let refined = abstract_graph::refine(cloud, &q0, &q1, config)?;
    let graph = abstract_graph::build_graph(cloud, &refined, config)?;
    Ok(Reconstruction {
        config: *config,
        labels,
        partition,
        refined,
        graph,
        below_guarantee: config.below_guarantee(),
    })
}

/// Fit vertex positions for a recovered graph, starting from its clusters.
pub fn fit_reconstruction(
    cloud: &PointCloud,
    rec: &Reconstruction,
    sigma: f64,
    em_config: &EmConfig,
) -> Result<(StrataModel, FitReport)> {
    let (model, state) = em::initialize(&rec.graph, &rec.refined, cloud, sigma)?;
    let report = em::em_fit(&model, &state, cloud, em_config)?;
    Ok((model, report))
}

/// One ratio of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub r: f64,
    pub num_vertices: usize,
    pub num_edges: usize,
    /// Boundary-preserving isomorphism with the reference structure.
    pub structure_match: bool,
    /// Final fit objective, when the fit ran.
    pub loglik: Option<f64>,
    pub iterations: Option<usize>,
    pub vertices: Option<Vec<Vec<f64>>>,
    /// For matching rows, the reference vertex each fitted vertex maps to.
    pub vertex_map: Option<Vec<usize>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub eps: f64,
    pub sigma: f64,
    pub reference_ratio: f64,
    pub reference_below_guarantee: bool,
    pub rows: Vec<SweepRow>,
    /// Index of the matching row with the highest objective.
    pub selected: Option<usize>,
}

/// Detect structure at the largest ratio, then refit at every ratio and keep
/// the best-scoring fit whose structure agrees with the reference.
/// Rows come out in descending ratio order.
pub fn ratio_sweep(
    cloud: &PointCloud,
    eps: f64,
    ratios: &[f64],
    sigma: f64,
    em_config: &EmConfig,
    exec: Execution,
) -> Result<SweepReport> {
    if ratios.is_empty() {
        return Err(Error::usage("ratio list is empty"));
    }
    let mut sorted = ratios.to_vec();
    if sorted.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::usage("ratios must be positive and finite"));
    }
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.dedup();

    let reference_ratio = sorted[0];
    let reference_config = ReconstructionConfig::from_ratio(reference_ratio, eps)?;
    let reference = reconstruct_with(cloud, &reference_config, exec)?;
    let (_, reference_fit) = fit_reconstruction(cloud, &reference, sigma, em_config)?;
    let ref_vertices = reference_fit.state.v.clone();
    let ref_edges = reference.graph.boundary.clone();

    let mut rows = Vec::with_capacity(sorted.len());
    for (k, &ratio) in sorted.iter().enumerate() {
        let config = ReconstructionConfig::from_ratio(ratio, eps)?;
        let mut row = SweepRow {
            ratio,
            r: config.r(),
            num_vertices: 0,
            num_edges: 0,
            structure_match: false,
            loglik: None,
            iterations: None,
            vertices: None,
            vertex_map: None,
            error: None,
        };
        let rec = if k == 0 {
            Ok(reference.clone())
        } else {
            reconstruct_with(cloud, &config, exec)
        };
        let rec = match rec {
            Ok(rec) => rec,
            Err(e) => {
                row.error = Some(e.to_string());
                rows.push(row);
                continue;
            }
        };
        row.num_vertices = rec.graph.num_vertices();
        row.num_edges = rec.graph.num_edges();
        let fit = if k == 0 {
            Ok(reference_fit.clone())
        } else {
            fit_reconstruction(cloud, &rec, sigma, em_config).map(|(_, f)| f)
        };
        match fit {
            Ok(fit) => {
                let m: MatchReport = abstract_graph::match_structure(cloud, &rec.graph, &ref_vertices, &ref_edges);
                row.structure_match = m.isomorphic;
                if m.isomorphic {
                    row.vertex_map = Some(m.vertex_map);
                }
                row.loglik = Some(fit.state.loglik);
                row.iterations = Some(fit.iterations);
                row.vertices = Some(fit.state.v);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    let selected = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.structure_match)
        .filter_map(|(k, r)| r.loglik.map(|l| (k, l)))
        .fold(None, |best: Option<(usize, f64)>, (k, l)| match best {
            Some((_, bl)) if bl >= l => best,
            _ => Some((k, l)),
        })
        .map(|(k, _)| k);
    Ok(SweepReport {
        eps,
        sigma,
        reference_ratio,
        reference_below_guarantee: reference_ratio < GUARANTEE_RATIO,
        rows,
        selected,
    })
}
