//! From labeled samples to an abstract graph with its boundary operator.
//!
//! Vertex-like samples are clustered at the coarse threshold `3R/2 + 2 eps`,
//! edge-like samples at `3 eps`. Edge-like clusters hugging a single vertex
//! cluster are stubs left over from the vertex neighbourhood; they are folded
//! into the vertex side before the final clustering.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::{self, dist2, ComponentLabeling, GridIndex, PointCloud};
use crate::local_structure::{Partition, ReconstructionConfig};
use crate::synthetic::EmbeddedGraphSpec;
use crate::{Error, Result};

/// Components of the vertex-like samples at the vertex threshold.
pub fn cluster_p0(cloud: &PointCloud, partition: &Partition, config: &ReconstructionConfig) -> Result<ComponentLabeling> {
    geometry::threshold_components(cloud, &partition.p0, config.vertex_threshold())
}

/// Components of the edge-like samples at the edge threshold.
pub fn cluster_p1(cloud: &PointCloud, partition: &Partition, config: &ReconstructionConfig) -> Result<ComponentLabeling> {
    geometry::threshold_components(cloud, &partition.p1, config.edge_threshold())
}

/// Partition after stub edge clusters have been moved to the vertex side.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RefinedPartition {
    pub p0_tilde: Vec<usize>,
    pub p1_tilde: Vec<usize>,
    /// Samples that moved from the edge side to the vertex side.
    pub moved: Vec<usize>,
}

/// Labels of `clusters` lying within `r` of any member of `members`; strict
/// comparison when `strict` is set.
fn touching_clusters(
    index: &GridIndex<'_>,
    clusters: &ComponentLabeling,
    members: &[usize],
    r: f64,
    strict: bool,
) -> Result<BTreeSet<usize>> {
    let cloud = index.cloud();
    let mut out = BTreeSet::new();
    let r2 = r * r;
    for &i in members {
        let p = cloud.point(i);
        for j in index.ball_query(p, r)? {
            if strict && !(dist2(p, cloud.point(j)) < r2) {
                continue;
            }
            if let Some(l) = clusters.label_of(j) {
                out.insert(l);
            }
        }
    }
    Ok(out)
}

/// Fold every edge-like component that lies strictly within `3 eps` of
/// exactly one vertex-like component into the vertex side.
pub fn refine(
    cloud: &PointCloud,
    q0: &ComponentLabeling,
    q1: &ComponentLabeling,
    config: &ReconstructionConfig,
) -> Result<RefinedPartition> {
    let mut p0: Vec<usize> = q0.indices().to_vec();
    let mut p1 = Vec::new();
    let mut moved = Vec::new();
    if q1.is_empty() {
        return Ok(RefinedPartition {
            p0_tilde: p0,
            p1_tilde: p1,
            moved,
        });
    }
    let index = GridIndex::new(cloud, config.edge_threshold())?;
    for (id, members) in q1.components().into_iter().enumerate() {
        let near = touching_clusters(&index, q0, &members, config.edge_threshold(), true)?;
        match near.len() {
            0 => {
                return Err(Error::Structural(format!(
                    "orphan edge cluster {id} ({} samples starting at index {}) touches no vertex cluster",
                    members.len(),
                    members[0]
                )))
            }
            1 => moved.extend_from_slice(&members),
            _ => p1.extend_from_slice(&members),
        }
    }
    p0.extend_from_slice(&moved);
    p0.sort_unstable();
    p1.sort_unstable();
    moved.sort_unstable();
    Ok(RefinedPartition {
        p0_tilde: p0,
        p1_tilde: p1,
        moved,
    })
}

/// The recovered abstract graph. Vertex and edge ids follow the smallest
/// member sample index of each cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractGraph {
    pub vertex_clusters: Vec<Vec<usize>>,
    pub edge_clusters: Vec<Vec<usize>>,
    /// Sorted endpoint pair of each edge.
    pub boundary: Vec<(usize, usize)>,
    pub vertex_centroids: Vec<Vec<f64>>,
}

impl AbstractGraph {
    pub fn num_vertices(&self) -> usize {
        self.vertex_clusters.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_clusters.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_vertices()];
        for &(a, b) in &self.boundary {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn boundary_matrix(&self) -> BoundaryMatrix {
        boundary_matrix(self)
    }

    /// Stratum of every sample: `Some(Vertex(i))`, `Some(Edge(j))`, or `None`
    /// for indices not covered by any cluster.
    pub fn point_strata(&self, n_points: usize) -> Vec<Option<Stratum>> {
        let mut out = vec![None; n_points];
        for (v, members) in self.vertex_clusters.iter().enumerate() {
            for &i in members {
                out[i] = Some(Stratum::Vertex(v));
            }
        }
        for (e, members) in self.edge_clusters.iter().enumerate() {
            for &i in members {
                out[i] = Some(Stratum::Edge(e));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stratum {
    Vertex(usize),
    Edge(usize),
}

/// Cluster the refined partition and attach each edge cluster to the vertex
/// clusters within `3 eps` of it.
pub fn build_graph(cloud: &PointCloud, refined: &RefinedPartition, config: &ReconstructionConfig) -> Result<AbstractGraph> {
    let vertices = geometry::threshold_components(cloud, &refined.p0_tilde, config.vertex_threshold())?;
    let edges = geometry::threshold_components(cloud, &refined.p1_tilde, config.edge_threshold())?;
    let vertex_clusters = vertices.components();
    let edge_clusters = edges.components();
    let vertex_centroids = vertex_clusters
        .iter()
        .map(|m| geometry::component_centroid(cloud, m))
        .collect::<Result<Vec<_>>>()?;

    let mut boundary = Vec::with_capacity(edge_clusters.len());
    if !edge_clusters.is_empty() {
        let index = GridIndex::new(cloud, config.edge_threshold())?;
        for (id, members) in edge_clusters.iter().enumerate() {
            let near = touching_clusters(&index, &vertices, members, config.edge_threshold(), false)?;
            if near.len() != 2 {
                return Err(Error::Structural(format!(
                    "edge cluster {id} ({} samples starting at index {}) borders {} vertex clusters, expected 2",
                    members.len(),
                    members[0],
                    near.len()
                )));
            }
            let mut it = near.into_iter();
            boundary.push((it.next().unwrap(), it.next().unwrap()));
        }
    }
    Ok(AbstractGraph {
        vertex_clusters,
        edge_clusters,
        boundary,
        vertex_centroids,
    })
}

/// Vertex-by-edge incidence matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<u8>,
}

impl BoundaryMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, vertex: usize, edge: usize) -> u8 {
        self.entries[vertex * self.cols + edge]
    }

    pub fn row(&self, vertex: usize) -> &[u8] {
        &self.entries[vertex * self.cols..(vertex + 1) * self.cols]
    }

    pub fn column_sums(&self) -> Vec<usize> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j) as usize).sum())
            .collect()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|&x| x as usize).sum())
            .collect()
    }
}

pub fn boundary_matrix(graph: &AbstractGraph) -> BoundaryMatrix {
    let (rows, cols) = (graph.num_vertices(), graph.num_edges());
    let mut entries = vec![0u8; rows * cols];
    for (j, &(a, b)) in graph.boundary.iter().enumerate() {
        entries[a * cols + j] = 1;
        entries[b * cols + j] = 1;
    }
    BoundaryMatrix { rows, cols, entries }
}

/// Correspondence between a recovered graph and a reference embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Reference vertex nearest to each recovered vertex centroid.
    pub vertex_map: Vec<usize>,
    /// Reference edge whose midpoint is nearest to each recovered edge cluster.
    pub edge_map: Vec<usize>,
    pub counts_match: bool,
    pub vertex_map_bijective: bool,
    pub edge_map_bijective: bool,
    pub boundary_preserved: bool,
    pub isomorphic: bool,
}

/// Index of the first smallest value; `usize::MAX` when empty.
fn argmin(values: impl Iterator<Item = f64>) -> usize {
    values
        .enumerate()
        .fold((usize::MAX, f64::INFINITY), |best, (k, d)| if d < best.1 { (k, d) } else { best })
        .0
}

/// Compare `graph` against the true embedding it was sampled from.
pub fn match_to_ground_truth(cloud: &PointCloud, graph: &AbstractGraph, truth: &EmbeddedGraphSpec) -> MatchReport {
    match_structure(cloud, graph, truth.vertices(), truth.edges())
}

/// Compare `graph` against any reference given as vertex positions and
/// endpoint pairs.
pub fn match_structure(
    cloud: &PointCloud,
    graph: &AbstractGraph,
    ref_vertices: &[Vec<f64>],
    ref_edges: &[(usize, usize)],
) -> MatchReport {
    let vertex_map: Vec<usize> = graph
        .vertex_centroids
        .iter()
        .map(|c| argmin(ref_vertices.iter().map(|v| dist2(c, v))))
        .collect();
    let midpoints: Vec<Vec<f64>> = ref_edges
        .iter()
        .map(|&(a, b)| ref_vertices[a].iter().zip(&ref_vertices[b]).map(|(x, y)| 0.5 * (x + y)).collect())
        .collect();
    let edge_map: Vec<usize> = graph
        .edge_clusters
        .iter()
        .map(|members| {
            argmin(midpoints.iter().map(|m| {
                members.iter().map(|&i| dist2(cloud.point(i), m)).fold(f64::INFINITY, f64::min)
            }))
        })
        .collect();

    let counts_match = graph.num_vertices() == ref_vertices.len() && graph.num_edges() == ref_edges.len();
    let bijective = |map: &[usize], n: usize| {
        map.len() == n && map.iter().all(|&k| k < n) && map.iter().collect::<BTreeSet<_>>().len() == n
    };
    let vertex_map_bijective = bijective(&vertex_map, ref_vertices.len());
    let edge_map_bijective = bijective(&edge_map, ref_edges.len());
    let boundary_preserved = graph.boundary.iter().zip(&edge_map).all(|(&(a, b), &k)| {
        if k >= ref_edges.len() {
            return false;
        }
        let (x, y) = (vertex_map[a], vertex_map[b]);
        let (p, q) = ref_edges[k];
        (x.min(y), x.max(y)) == (p.min(q), p.max(q))
    });
    MatchReport {
        isomorphic: counts_match && vertex_map_bijective && edge_map_bijective && boundary_preserved,
        vertex_map,
        edge_map,
        counts_match,
        vertex_map_bijective,
        edge_map_bijective,
        boundary_preserved,
    }
}
