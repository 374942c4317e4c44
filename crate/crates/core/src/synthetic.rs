//! Embedded test graphs and bounded-noise samples of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::exec::{map_indices, Execution};
use crate::geometry::{self, dist2, GridIndex, PointCloud, Segment};
use crate::local_structure::{angle_at, check_assumptions, ReconstructionConfig};
use crate::union_find::UnionFind;
use crate::{Error, Result};

/// A straight-line embedding of an abstract graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRecord", into = "GraphRecord")]
pub struct EmbeddedGraphSpec {
    dim: usize,
    vertices: Vec<Vec<f64>>,
    edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphRecord {
    dim: usize,
    vertices: Vec<Vec<f64>>,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<GraphRecord> for EmbeddedGraphSpec {
    type Error = Error;

    fn try_from(r: GraphRecord) -> Result<Self> {
        let g = EmbeddedGraphSpec::new(r.vertices, r.edges)?;
        if g.dim != r.dim {
            return Err(Error::usage(format!(
                "graph declares dimension {} but vertices have {}",
                r.dim, g.dim
            )));
        }
        Ok(g)
    }
}

impl From<EmbeddedGraphSpec> for GraphRecord {
    fn from(g: EmbeddedGraphSpec) -> Self {
        GraphRecord {
            dim: g.dim,
            vertices: g.vertices,
            edges: g.edges,
        }
    }
}

const STRAIGHT_TOL: f64 = 1e-12;

impl EmbeddedGraphSpec {
    /// Validates that the edges form a proper embedding: distinct vertices,
    /// no loops or repeated edges, edges meeting only at shared endpoints, and
    /// no degree-2 vertex with a straight angle.
    pub fn new(vertices: Vec<Vec<f64>>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let dim = vertices
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::usage("graph needs at least one vertex"))?;
        if dim == 0 {
            return Err(Error::usage("vertex dimension must be positive"));
        }
        for (i, v) in vertices.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::usage(format!("vertex {i} has {} coordinates, expected {dim}", v.len())));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::usage(format!("vertex {i} has a non-finite coordinate")));
            }
        }
        for a in 0..vertices.len() {
            for b in a + 1..vertices.len() {
                if vertices[a] == vertices[b] {
                    return Err(Error::usage(format!("vertices {a} and {b} coincide")));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (k, &(a, b)) in edges.iter().enumerate() {
            if a >= vertices.len() || b >= vertices.len() {
                return Err(Error::usage(format!("edge {k} references a missing vertex")));
            }
            if a == b {
                return Err(Error::usage(format!("edge {k} is a loop at vertex {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::usage(format!("edge {k} duplicates an earlier edge")));
            }
        }
        let g = Self { dim, vertices, edges };
        g.check_embedding()?;
        Ok(g)
    }

    fn check_embedding(&self) -> Result<()> {
        for k in 0..self.edges.len() {
            let s = self.segment(k);
            let (a, b) = self.edges[k];
            for (v, x) in self.vertices.iter().enumerate() {
                if v != a && v != b && geometry::point_segment_distance(x, &s)? == 0.0 {
                    return Err(Error::usage(format!("vertex {v} lies on edge {k}")));
                }
            }
            for j in k + 1..self.edges.len() {
                let (c, d) = self.edges[j];
                let shared = [a, b].into_iter().find(|&v| v == c || v == d);
                match shared {
                    None => {
                        if geometry::segment_distance(&s, &self.segment(j))? == 0.0 {
                            return Err(Error::usage(format!("edges {k} and {j} intersect")));
                        }
                    }
                    Some(v) => {
                        let angle = angle_at(
                            &self.vertices[v],
                            &self.vertices[self.other_end(k, v)],
                            &self.vertices[self.other_end(j, v)],
                        );
                        if angle <= STRAIGHT_TOL {
                            return Err(Error::usage(format!("edges {k} and {j} overlap")));
                        }
                    }
                }
            }
        }
        for (v, inc) in self.incidence().iter().enumerate() {
            if inc.len() == 2 {
                let angle = angle_at(
                    &self.vertices[v],
                    &self.vertices[self.other_end(inc[0], v)],
                    &self.vertices[self.other_end(inc[1], v)],
                );
                if (PI - angle).abs() <= STRAIGHT_TOL {
                    return Err(Error::usage(format!("degree-2 vertex {v} has a straight angle")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn segment(&self, edge: usize) -> Segment<'_> {
        let (a, b) = self.edges[edge];
        Segment::new(&self.vertices[a], &self.vertices[b]).expect("validated edge")
    }

    /// Edge indices incident to each vertex, ascending.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.vertices.len()];
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            inc[a].push(k);
            inc[b].push(k);
        }
        inc
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.incidence().iter().map(Vec::len).collect()
    }

    /// The endpoint of `edge` that is not `v`.
    pub fn other_end(&self, edge: usize, v: usize) -> usize {
        let (a, b) = self.edges[edge];
        if a == v {
            b
        } else {
            a
        }
    }

    pub fn total_length(&self) -> f64 {
        (0..self.edges.len()).map(|k| self.segment(k).length()).sum()
    }
}

/// The five-vertex, five-edge graph in three dimensions used throughout the
/// test and benchmark suites.
pub fn builtin_fixture() -> EmbeddedGraphSpec {
    EmbeddedGraphSpec::new(
        vec![
            vec![0.0, 0.0, 0.0],
            vec![4.6, 6.24, 0.0],
            vec![4.86, 0.51, 3.47],
            vec![-1.32, 6.29, 4.0],
            vec![-4.23, -3.48, -3.0],
        ],
        vec![(0, 4), (0, 2), (0, 3), (1, 3), (1, 2)],
    )
    .expect("fixture is a valid embedding")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NoiseKind {
    /// Uniform in the ball of radius `noise`.
    #[default]
    UniformBall,
    /// Isotropic Gaussian with standard deviation `noise / 2`, rejected outside
    /// the ball of radius `noise`.
    TruncatedGaussian,
}

/// How to draw a sample whose Hausdorff distance to the graph is at most `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub eps: f64,
    /// Maximum arc-length step between consecutive points on an edge.
    pub spacing: f64,
    /// Bound on each point's displacement.
    pub noise: f64,
    pub seed: u64,
    #[serde(default)]
    pub noise_kind: NoiseKind,
}

impl SampleSpec {
    pub fn new(eps: f64, spacing: f64, noise: f64, seed: u64) -> Result<Self> {
        let s = Self {
            eps,
            spacing,
            noise,
            seed,
            noise_kind: NoiseKind::UniformBall,
        };
        s.validate()?;
        Ok(s)
    }

    /// Spacing `eps` and noise bound `eps / 2`.
    pub fn with_defaults(eps: f64, seed: u64) -> Result<Self> {
        Self::new(eps, eps, eps / 2.0, seed)
    }

    pub fn with_noise_kind(mut self, kind: NoiseKind) -> Self {
        self.noise_kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::usage(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::usage(format!("spacing must be positive, got {}", self.spacing)));
        }
        if !(self.noise >= 0.0 && self.noise <= self.eps) {
            return Err(Error::usage(format!(
                "noise bound {} must lie in [0, eps = {}]",
                self.noise, self.eps
            )));
        }
        if self.spacing / 2.0 + self.noise > self.eps * (1.0 + 1e-12) {
            return Err(Error::usage(format!(
                "spacing/2 + noise = {} exceeds eps = {}",
                self.spacing / 2.0 + self.noise,
                self.eps
            )));
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream)
}

fn perturbation(rng: &mut ChaCha8Rng, dim: usize, bound: f64, kind: NoiseKind) -> Vec<f64> {
    if bound == 0.0 {
        return vec![0.0; dim];
    }
    match kind {
        NoiseKind::UniformBall => loop {
            let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dist2(&dir, &vec![0.0; dim]).sqrt();
            if norm == 0.0 {
                continue;
            }
            let u: f64 = rng.random();
            let radius = bound * u.powf(1.0 / dim as f64);
            return dir.iter().map(|d| d / norm * radius).collect();
        },
        NoiseKind::TruncatedGaussian => loop {
            let v: Vec<f64> = (0..dim)
                .map(|_| 0.5 * bound * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if dist2(&v, &vec![0.0; dim]) <= bound * bound {
                return v;
            }
        },
    }
}

/// Draw an `eps`-sample of `graph`. Points on each edge sit at equal
/// parameter steps including both endpoints; isolated vertices get a single
/// point. The result depends only on `(graph, sample)`.
pub fn sample_graph(graph: &EmbeddedGraphSpec, sample: &SampleSpec) -> Result<PointCloud> {
    sample.validate()?;
    let dim = graph.dim();
    let per_edge = map_indices(Execution::default(), graph.num_edges(), |k| {
        let seg = graph.segment(k);
        let steps = (seg.length() / sample.spacing).ceil().max(1.0) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(sample.seed, k as u64));
        let mut out = Vec::with_capacity((steps + 1) * dim);
        for i in 0..=steps {
            let x = seg.lerp(i as f64 / steps as f64);
            let d = perturbation(&mut rng, dim, sample.noise, sample.noise_kind);
            out.extend(x.iter().zip(&d).map(|(a, b)| a + b));
        }
        out
    });
    let mut coords: Vec<f64> = per_edge.into_iter().flatten().collect();
    let degrees = graph.degrees();
    for (v, x) in graph.vertices().iter().enumerate() {
        if degrees[v] == 0 {
            let stream = (graph.num_edges() + v) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(sample.seed, stream));
            let d = perturbation(&mut rng, dim, sample.noise, sample.noise_kind);
            coords.extend(x.iter().zip(&d).map(|(a, b)| a + b));
        }
    }
    PointCloud::new(dim, coords)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HausdorffReport {
    /// Measured Hausdorff distance between the cloud and the discretized graph.
    pub measured: f64,
    /// Largest value accepted: `eps` plus the discretization slack.
    pub allowed: f64,
    pub pass: bool,
}

/// Certify that `cloud` is an `eps`-sample of `graph`.
///
/// The graph side is discretized at step `eps / 100` and the same amount is
/// added to the acceptance bound.
pub fn hausdorff_check(cloud: &PointCloud, graph: &EmbeddedGraphSpec, eps: f64) -> Result<HausdorffReport> {
    if !(eps > 0.0) {
        return Err(Error::usage(format!("eps must be positive, got {eps}")));
    }
    if cloud.dim() != graph.dim() {
        return Err(Error::usage("cloud and graph differ in dimension"));
    }
    let allowed = eps + eps / 100.0;
    if cloud.is_empty() {
        return Ok(HausdorffReport {
            measured: f64::INFINITY,
            allowed,
            pass: false,
        });
    }

    // cloud -> graph
    let degrees = graph.degrees();
    let to_graph = |x: &[f64]| -> f64 {
        let mut best = f64::INFINITY;
        for k in 0..graph.num_edges() {
            best = best.min(geometry::point_segment_distance(x, &graph.segment(k)).expect("dims agree"));
        }
        for (v, y) in graph.vertices().iter().enumerate() {
            if degrees[v] == 0 {
                best = best.min(dist2(x, y).sqrt());
            }
        }
        best
    };
    let forward = map_indices(Execution::default(), cloud.len(), |i| to_graph(cloud.point(i)));

    // graph -> cloud
    let step = eps / 100.0;
    let index = GridIndex::new(cloud, eps)?;
    let to_cloud = |x: &[f64]| -> f64 {
        let near = index.ball_query(x, 2.0 * eps).expect("dims agree");
        let pool: Box<dyn Iterator<Item = usize>> = if near.is_empty() {
            Box::new(0..cloud.len())
        } else {
            Box::new(near.into_iter())
        };
        pool.map(|i| dist2(x, cloud.point(i))).fold(f64::INFINITY, f64::min).sqrt()
    };
    let backward = map_indices(Execution::default(), graph.num_edges(), |k| {
        let seg = graph.segment(k);
        let steps = (seg.length() / step).ceil().max(1.0) as usize;
        (0..=steps)
            .map(|i| to_cloud(&seg.lerp(i as f64 / steps as f64)))
            .fold(0.0, f64::max)
    });
    let mut measured = forward.into_iter().chain(backward).fold(0.0, f64::max);
    for (v, y) in graph.vertices().iter().enumerate() {
        if degrees[v] == 0 {
            measured = measured.max(to_cloud(y));
        }
    }
    Ok(HausdorffReport {
        measured,
        allowed,
        pass: measured <= allowed,
    })
}

const PLACEMENT_ATTEMPTS: usize = 200;

/// Rejection-sample a connected graph on `n_vertices` vertices that satisfies
/// every embedding condition at the scale `config`.
pub fn random_compliant_graph(
    dim: usize,
    n_vertices: usize,
    config: &ReconstructionConfig,
    seed: u64,
) -> Result<EmbeddedGraphSpec> {
    if dim < 2 {
        return Err(Error::usage("random graphs need dimension at least 2"));
    }
    if n_vertices < 2 {
        return Err(Error::usage("random graphs need at least two vertices"));
    }
    let (r, e) = (config.r(), config.eps());
    let separation = 1.1 * (4.5 * r + 6.0 * e);
    let side = 1.6 * separation * (n_vertices as f64).powf(1.0 / dim as f64);
    let target_edges = n_vertices - 1 + n_vertices / 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for _ in 0..PLACEMENT_ATTEMPTS {
        let Some(vertices) = place_vertices(&mut rng, dim, n_vertices, side, separation) else {
            continue;
        };
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for a in 0..n_vertices {
            for b in a + 1..n_vertices {
                let jitter: f64 = rng.random_range(1.0..1.6);
                candidates.push((dist2(&vertices[a], &vertices[b]).sqrt() * jitter, a, b));
            }
        }
        candidates.sort_by(|x, y| x.0.total_cmp(&y.0));

        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &(_, a, b) in &candidates {
            if edges.len() == target_edges {
                break;
            }
            edges.push((a, b));
            let ok = EmbeddedGraphSpec::new(vertices.clone(), edges.clone())
                .map(|g| check_assumptions(&g, config).all_passed())
                .unwrap_or(false);
            if !ok {
                edges.pop();
            }
        }
        let mut uf = UnionFind::new(n_vertices);
        for &(a, b) in &edges {
            uf.union(a, b);
        }
        if uf.labels().1 == 1 {
            return EmbeddedGraphSpec::new(vertices, edges);
        }
    }
    Err(Error::Generation(format!(
        "no compliant graph with {n_vertices} vertices in dimension {dim} after {PLACEMENT_ATTEMPTS} attempts; \
         try fewer vertices or a smaller R/eps"
    )))
}

fn place_vertices(rng: &mut ChaCha8Rng, dim: usize, n: usize, side: f64, separation: f64) -> Option<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        if tries > 1000 * n {
            return None;
        }
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..side)).collect();
        if out.iter().all(|q| dist2(&p, q).sqrt() > separation) {
            out.push(p);
        }
    }
    Some(out)
}
