use std::fmt::Write as _;
use std::path::PathBuf;

use graphskel::abstract_graph::{self, AbstractGraph, RefinedPartition};
use graphskel::em::ObjectiveStep;
use graphskel::local_structure::{self, Partition, StructureTag};
use graphskel::pipeline::{self, SweepReport};
use graphskel::synthetic::{self, EmbeddedGraphSpec, NoiseKind, SampleSpec};
use graphskel::{Error, Execution, PointCloud, ReconstructionConfig};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{self, SCHEMA_VERSION};

/// What a command did, for the terminal.
#[derive(Debug, Default)]
pub struct Report {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub summary: String,
}

fn guarantee_warning(config: &ReconstructionConfig) -> Option<String> {
    config.below_guarantee().then(|| {
        format!(
            "R < 12ε guarantee regime (R/eps = {}): recovered structure is not guaranteed",
            config.ratio()
        )
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostics {
    pub ball_connected: bool,
    pub shell_components: usize,
    pub inner_product: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionDocument {
    pub schema_version: u32,
    pub kind: String,
    pub config: RunConfig,
    pub below_guarantee: bool,
    pub num_points: usize,
    /// 0 for vertex-like samples, 1 for edge-like.
    pub labels: Vec<u8>,
    pub vertex_like_clusters: usize,
    pub diagnostics: Vec<PointDiagnostics>,
}

pub fn cmd_partition(cfg: &RunConfig) -> CliResult<Report> {
    let cloud = formats::read_cloud(cfg.input()?, cfg.header)?;
    let rc = cfg.reconstruction()?;
    let output = cfg.output()?;
    let labels = local_structure::classify_all(&cloud, &rc, Execution::default())?;
    let partition = Partition::from_labels(&labels);
    let clusters = abstract_graph::cluster_p0(&cloud, &partition, &rc)?;
    let doc = PartitionDocument {
        schema_version: SCHEMA_VERSION,
        kind: "partition".into(),
        config: cfg.clone(),
        below_guarantee: rc.below_guarantee(),
        num_points: cloud.len(),
        labels: labels.iter().map(|l| u8::from(l.tag == StructureTag::EdgeLike)).collect(),
        vertex_like_clusters: clusters.num_components(),
        diagnostics: labels
            .iter()
            .map(|l| PointDiagnostics {
                ball_connected: l.detail.ball_connected,
                shell_components: l.detail.shell_component_count,
                inner_product: l.detail.inner_product,
            })
            .collect(),
    };
    formats::atomic_write(output, formats::to_json(&doc).as_bytes())?;
    Ok(Report {
        written: vec![output.clone()],
        warnings: guarantee_warning(&rc).into_iter().collect(),
        summary: format!(
            "{} vertex-like and {} edge-like samples; {} vertex-like clusters",
            partition.p0.len(),
            partition.p1.len(),
            clusters.num_components()
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: usize,
    pub centroid: Vec<f64>,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub id: usize,
    /// Sorted vertex ids; absent when the structure could not be verified.
    pub boundary: Option<(usize, usize)>,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub schema_version: u32,
    pub kind: String,
    pub config: RunConfig,
    /// False when the clusters do not form a valid graph; only produced
    /// below the guarantee regime.
    pub structure_verified: bool,
    pub below_guarantee: bool,
    pub problem: Option<String>,
    pub num_points: usize,
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<EdgeRecord>,
    /// Vertex-by-edge incidence.
    pub boundary_matrix: Vec<Vec<u8>>,
    /// 0 for samples on the vertex side after refinement, 1 for edge side.
    pub refined_labels: Vec<u8>,
    pub moved: Vec<usize>,
}

fn labels_from(n: usize, edge_side: &[usize]) -> Vec<u8> {
    let mut out = vec![0; n];
    for &i in edge_side {
        out[i] = 1;
    }
    out
}

fn verified_document(cfg: &RunConfig, cloud: &PointCloud, rec: &pipeline::Reconstruction) -> GraphDocument {
    let g = &rec.graph;
    let m = g.boundary_matrix();
    GraphDocument {
        schema_version: SCHEMA_VERSION,
        kind: "graph".into(),
        config: cfg.clone(),
        structure_verified: true,
        below_guarantee: rec.below_guarantee,
        problem: None,
        num_points: cloud.len(),
        vertices: g
            .vertex_clusters
            .iter()
            .zip(&g.vertex_centroids)
            .enumerate()
            .map(|(id, (members, c))| VertexRecord {
                id,
                centroid: c.clone(),
                members: members.clone(),
            })
            .collect(),
        edges: g
            .edge_clusters
            .iter()
            .zip(&g.boundary)
            .enumerate()
            .map(|(id, (members, &b))| EdgeRecord {
                id,
                boundary: Some(b),
                members: members.clone(),
            })
            .collect(),
        boundary_matrix: (0..m.rows()).map(|v| m.row(v).to_vec()).collect(),
        refined_labels: labels_from(cloud.len(), &rec.refined.p1_tilde),
        moved: rec.refined.moved.clone(),
    }
}

/// Clusters of the unrefined partition, reported when the graph cannot be
/// assembled below the guarantee regime.
fn unverified_document(
    cfg: &RunConfig,
    cloud: &PointCloud,
    rc: &ReconstructionConfig,
    problem: String,
) -> CliResult<GraphDocument> {
    let labels = local_structure::classify_all(cloud, rc, Execution::default())?;
    let partition = Partition::from_labels(&labels);
    let q0 = abstract_graph::cluster_p0(cloud, &partition, rc)?;
    let q1 = abstract_graph::cluster_p1(cloud, &partition, rc)?;
    let vertices = q0
        .components()
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            let centroid = graphskel::geometry::component_centroid(cloud, &members)?;
            Ok(VertexRecord { id, centroid, members })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let edges = q1
        .components()
        .into_iter()
        .enumerate()
        .map(|(id, members)| EdgeRecord {
            id,
            boundary: None,
            members,
        })
        .collect();
    Ok(GraphDocument {
        schema_version: SCHEMA_VERSION,
        kind: "graph".into(),
        config: cfg.clone(),
        structure_verified: false,
        below_guarantee: true,
        problem: Some(problem),
        num_points: cloud.len(),
        vertices,
        edges,
        boundary_matrix: vec![],
        refined_labels: labels_from(cloud.len(), &partition.p1),
        moved: vec![],
    })
}

pub fn cmd_graph(cfg: &RunConfig) -> CliResult<Report> {
    let cloud = formats::read_cloud(cfg.input()?, cfg.header)?;
    let rc = cfg.reconstruction()?;
    let output = cfg.output()?;
    let mut warnings: Vec<String> = guarantee_warning(&rc).into_iter().collect();
    let doc = match pipeline::reconstruct(&cloud, &rc) {
        Ok(rec) => verified_document(cfg, &cloud, &rec),
        Err(e @ Error::Structural(_)) if rc.below_guarantee() => {
            warnings.push(format!("structure unverified: {e}"));
            unverified_document(cfg, &cloud, &rc, e.to_string())?
        }
        Err(e) => return Err(e.into()),
    };
    formats::atomic_write(output, formats::to_json(&doc).as_bytes())?;
    Ok(Report {
        written: vec![output.clone()],
        warnings,
        summary: format!(
            "{} vertices, {} edges{}",
            doc.vertices.len(),
            doc.edges.len(),
            if doc.structure_verified { "" } else { " (structure unverified)" }
        ),
    })
}

/// Rebuild the library's graph and refined partition from a graph document,
/// checking it against the cloud.
pub fn graph_from_document(doc: &GraphDocument, cloud: &PointCloud) -> CliResult<(AbstractGraph, RefinedPartition)> {
    if !doc.structure_verified {
        return Err(CliError::usage("graph structure is unverified; rerun graph at a larger ratio before fitting"));
    }
    if doc.num_points != cloud.len() {
        return Err(CliError::usage(format!(
            "graph was built from {} samples but the cloud has {}",
            doc.num_points,
            cloud.len()
        )));
    }
    let mut seen = vec![false; cloud.len()];
    let mut claim = |members: &[usize]| -> CliResult<()> {
        for &i in members {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(CliError::usage(format!("sample {i} is out of range or in two clusters")));
            }
        }
        Ok(())
    };
    for v in &doc.vertices {
        claim(&v.members)?;
    }
    for e in &doc.edges {
        claim(&e.members)?;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(CliError::usage(format!("sample {i} is in no cluster")));
    }
    let boundary = doc
        .edges
        .iter()
        .map(|e| {
            e.boundary
                .filter(|&(a, b)| a < doc.vertices.len() && b < doc.vertices.len() && a != b)
                .ok_or_else(|| CliError::usage(format!("edge {} has no valid boundary pair", e.id)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let graph = AbstractGraph {
        vertex_clusters: doc.vertices.iter().map(|v| v.members.clone()).collect(),
        edge_clusters: doc.edges.iter().map(|e| e.members.clone()).collect(),
        boundary,
        vertex_centroids: doc.vertices.iter().map(|v| v.centroid.clone()).collect(),
    };
    let mut p0: Vec<usize> = graph.vertex_clusters.iter().flatten().copied().collect();
    let mut p1: Vec<usize> = graph.edge_clusters.iter().flatten().copied().collect();
    p0.sort_unstable();
    p1.sort_unstable();
    let refined = RefinedPartition {
        p0_tilde: p0,
        p1_tilde: p1,
        moved: doc.moved.clone(),
    };
    Ok((graph, refined))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub schema_version: u32,
    pub kind: String,
    pub config: RunConfig,
    /// Configuration the graph was detected with.
    pub graph_config: RunConfig,
    pub vertices: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize)>,
    pub pi: Vec<f64>,
    /// Expected complete-data log-likelihood per sample at the fit.
    pub loglik: f64,
    /// Mean observed log-likelihood, from initialization to the last iteration.
    pub loglik_trace: Vec<f64>,
    pub objective_trace: Vec<ObjectiveStep>,
    pub iterations: usize,
    pub converged: bool,
    pub displacement: Vec<f64>,
    pub fallback_rows: usize,
    pub wireframe: PathBuf,
}

fn wireframe_csv(doc: &FitDocument) -> String {
    let dim = doc.vertices.first().map_or(0, Vec::len);
    let names: Vec<String> = if dim <= 3 {
        ["x", "y", "z"][..dim].iter().map(|s| s.to_string()).collect()
    } else {
        (1..=dim).map(|k| format!("x{k}")).collect()
    };
    let mut out = String::new();
    let _ = writeln!(out, "# {}", serde_json::to_string(&doc.config).expect("config serializes"));
    let _ = writeln!(out, "edge,vertex,{}", names.join(","));
    for (e, &(a, b)) in doc.edges.iter().enumerate() {
        for v in [a, b] {
            let coords: Vec<String> = doc.vertices[v].iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{e},{v},{}", coords.join(","));
        }
    }
    out
}

pub fn cmd_fit(cfg: &RunConfig) -> CliResult<Report> {
    let cloud = formats::read_cloud(cfg.input()?, cfg.header)?;
    let graph_path = cfg
        .graph
        .as_ref()
        .ok_or_else(|| CliError::usage("fit needs --graph"))?;
    let output = cfg.output()?;
    let gdoc: GraphDocument = formats::read_json(graph_path)?;
    let (graph, refined) = graph_from_document(&gdoc, &cloud)?;
    let (model, state) = graphskel::em::initialize(&graph, &refined, &cloud, cfg.sigma)?;
    let fit = graphskel::em::em_fit(&model, &state, &cloud, &cfg.em())?;
    let wireframe = formats::sibling(output, "wireframe.csv");
    let doc = FitDocument {
        schema_version: SCHEMA_VERSION,
        kind: "fit".into(),
        config: cfg.clone(),
        graph_config: gdoc.config.clone(),
        vertices: fit.state.v.clone(),
        edges: graph.boundary.clone(),
        pi: fit.state.pi.clone(),
        loglik: fit.state.loglik,
        loglik_trace: fit.loglik_trace.clone(),
        objective_trace: fit.objective_trace.clone(),
        iterations: fit.iterations,
        converged: fit.converged,
        displacement: fit.displacement.clone(),
        fallback_rows: fit.fallback_rows,
        wireframe: wireframe.clone(),
    };
    formats::atomic_write(&wireframe, wireframe_csv(&doc).as_bytes())?;
    formats::atomic_write(output, formats::to_json(&doc).as_bytes())?;
    let mut warnings = Vec::new();
    if !fit.converged && cfg.max_iters > 0 {
        warnings.push(format!("EM stopped after {} iterations without converging", fit.iterations));
    }
    Ok(Report {
        written: vec![output.clone(), wireframe],
        warnings,
        summary: format!(
            "{} iterations, objective {:.6}, log-likelihood {:.6}",
            fit.iterations,
            fit.state.loglik,
            fit.loglik_trace.last().copied().unwrap_or(f64::NAN)
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineDocument {
    pub schema_version: u32,
    pub kind: String,
    pub config: RunConfig,
    pub report: SweepReport,
}

/// Plain-text table: one line per ratio.
pub fn sweep_table(report: &SweepReport) -> String {
    let mut out = String::from("ratio  match  objective     vertices\n");
    for (k, row) in report.rows.iter().enumerate() {
        let ll = row.loglik.map_or("-".to_string(), |l| format!("{l:.4}"));
        let verts = row.vertices.as_ref().map_or_else(
            || row.error.clone().unwrap_or_default(),
            |vs| {
                vs.iter()
                    .map(|v| {
                        let c: Vec<String> = v.iter().map(|x| format!("{x:.2}")).collect();
                        format!("({})", c.join(", "))
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            },
        );
        let mark = if report.selected == Some(k) { "*" } else { " " };
        let _ = writeln!(
            out,
            "{:<5}{mark} {:<6} {:<13} {verts}",
            row.ratio,
            if row.structure_match { "yes" } else { "no" },
            ll
        );
    }
    out
}

pub fn cmd_pipeline(cfg: &RunConfig) -> CliResult<Report> {
    let cloud = formats::read_cloud(cfg.input()?, cfg.header)?;
    let output = cfg.output()?;
    let report = pipeline::ratio_sweep(&cloud, cfg.eps, &cfg.ratios, cfg.sigma, &cfg.em(), Execution::default())?;
    let mut warnings = Vec::new();
    if report.reference_below_guarantee {
        warnings.push(format!(
            "reference ratio {} is in the R < 12ε regime; the reference structure is not guaranteed",
            report.reference_ratio
        ));
    }
    let doc = PipelineDocument {
        schema_version: SCHEMA_VERSION,
        kind: "pipeline".into(),
        config: cfg.clone(),
        report,
    };
    formats::atomic_write(output, formats::to_json(&doc).as_bytes())?;
    Ok(Report {
        written: vec![output.clone()],
        warnings,
        summary: sweep_table(&doc.report),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    pub config: RunConfig,
    pub cloud: PathBuf,
    pub seed: u64,
    pub eps: f64,
    pub spacing: f64,
    pub noise: f64,
    pub noise_kind: NoiseKind,
    pub noiseless: bool,
    pub num_points: usize,
    pub hausdorff: f64,
    pub hausdorff_allowed: f64,
    pub hausdorff_ok: bool,
    pub graph: EmbeddedGraphSpec,
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Report> {
    let output = cfg.output()?;
    let graph = match &cfg.graph {
        Some(p) => formats::read_json::<EmbeddedGraphSpec>(p)?,
        None => synthetic::builtin_fixture(),
    };
    let sample = SampleSpec::new(
        cfg.eps,
        cfg.spacing.unwrap_or(cfg.eps),
        cfg.noise.unwrap_or(cfg.eps / 2.0),
        cfg.seed,
    )?;
    let cloud = synthetic::sample_graph(&graph, &sample)?;
    let check = synthetic::hausdorff_check(&cloud, &graph, cfg.eps)?;
    let config_line = serde_json::to_string(cfg).expect("config serializes");
    let manifest_path = formats::sibling(output, "manifest.json");
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        kind: "manifest".into(),
        config: cfg.clone(),
        cloud: output.clone(),
        seed: sample.seed,
        eps: sample.eps,
        spacing: sample.spacing,
        noise: sample.noise,
        noise_kind: sample.noise_kind,
        noiseless: sample.noise == 0.0,
        num_points: cloud.len(),
        hausdorff: check.measured,
        hausdorff_allowed: check.allowed,
        hausdorff_ok: check.pass,
        graph,
    };
    formats::atomic_write(output, formats::format_cloud(&cloud, &config_line).as_bytes())?;
    formats::atomic_write(&manifest_path, formats::to_json(&manifest).as_bytes())?;
    let mut warnings = Vec::new();
    if !check.pass {
        warnings.push(format!(
            "Hausdorff distance {} exceeds the allowed {}",
            check.measured, check.allowed
        ));
    }
    Ok(Report {
        written: vec![output.clone(), manifest_path],
        warnings,
        summary: format!("{} samples, Hausdorff distance {:.4}", cloud.len(), check.measured),
    })
}

pub fn run(cfg: &RunConfig) -> CliResult<Report> {
    match cfg.command.as_str() {
        "partition" => cmd_partition(cfg),
        "graph" => cmd_graph(cfg),
        "fit" => cmd_fit(cfg),
        "pipeline" => cmd_pipeline(cfg),
        "simulate" => cmd_simulate(cfg),
        other => Err(CliError::usage(format!("unknown command {other:?}"))),
    }
}
