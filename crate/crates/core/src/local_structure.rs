//! Per-sample classification into vertex-like and edge-like points.
//!
//! A sample `p` looks at two neighbourhoods: the ball of radius `R + eps` and
//! the shell `(R - eps, R + eps]`. Along the interior of an edge the ball is
//! one connected blob and the shell splits into two roughly antipodal caps;
//! anything else is treated as vertex-like.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::exec::{map_indices, Execution};
use crate::geometry::{self, dist2, dot, ComponentLabeling, GridIndex, PointCloud, Segment};
use crate::synthetic::EmbeddedGraphSpec;
use crate::{Error, Result};

/// Ratio `R / eps` at and above which the classification guarantees hold.
pub const GUARANTEE_RATIO: f64 = 12.0;

/// The scale pair `(R, eps)`: shell radius and sample noise bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    r: f64,
    eps: f64,
}

impl ReconstructionConfig {
    pub fn new(r: f64, eps: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::usage(format!("R must be positive and finite, got {r}")));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::usage(format!("eps must be positive and finite, got {eps}")));
        }
        Ok(Self { r, eps })
    }

    /// `R = ratio * eps`.
    pub fn from_ratio(ratio: f64, eps: f64) -> Result<Self> {
        Self::new(ratio * eps, eps)
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn ratio(&self) -> f64 {
        self.r / self.eps
    }

    /// True when `R < 12 eps`; results are still produced but carry no guarantee.
    pub fn below_guarantee(&self) -> bool {
        self.r < GUARANTEE_RATIO * self.eps
    }

    /// Connectivity threshold for the local graphs and for edge clusters.
    pub fn edge_threshold(&self) -> f64 {
        3.0 * self.eps
    }

    /// Connectivity threshold for vertex clusters.
    pub fn vertex_threshold(&self) -> f64 {
        1.5 * self.r + 2.0 * self.eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StructureTag {
    VertexLike,
    EdgeLike,
}

/// What the classifier saw around one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalDetail {
    pub ball_connected: bool,
    /// Zero when the ball test already failed and the shell was never built.
    pub shell_component_count: usize,
    /// Inner product of the two shell centroids relative to `p`; present only
    /// when the ball is connected and the shell has exactly two components.
    pub inner_product: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalLabel {
    pub tag: StructureTag,
    pub detail: LocalDetail,
}

/// Indices split by tag. Both lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Partition {
    pub p0: Vec<usize>,
    pub p1: Vec<usize>,
}

impl Partition {
    pub fn from_labels(labels: &[LocalLabel]) -> Self {
        let mut out = Partition::default();
        for (i, l) in labels.iter().enumerate() {
            match l.tag {
                StructureTag::VertexLike => out.p0.push(i),
                StructureTag::EdgeLike => out.p1.push(i),
            }
        }
        out
    }
}

/// `-R^2 + 2 R eps + 7 eps^2`: the largest inner product two shell points on
/// opposite sides of an edge can have.
pub fn inner_product_threshold(config: &ReconstructionConfig) -> f64 {
    let (r, e) = (config.r, config.eps);
    -r * r + 2.0 * r * e + 7.0 * e * e
}

/// Classify one sample of `cloud`.
pub fn classify_point(cloud: &PointCloud, p_index: usize, config: &ReconstructionConfig) -> Result<LocalLabel> {
    if p_index >= cloud.len() {
        return Err(Error::usage(format!(
            "point index {p_index} out of range for cloud of {} points",
            cloud.len()
        )));
    }
    let index = GridIndex::new(cloud, config.r + config.eps)?;
    classify_indexed(&index, p_index, config)
}

fn classify_indexed(index: &GridIndex<'_>, p_index: usize, config: &ReconstructionConfig) -> Result<LocalLabel> {
    let cloud = index.cloud();
    let p = cloud.point(p_index);
    let (r, e) = (config.r, config.eps);
    let link = config.edge_threshold();

    let ball = index.ball_query(p, r + e)?;
    let ball_graph = geometry::threshold_components(cloud, &ball, link)?;
    if ball_graph.num_components() != 1 {
        return Ok(LocalLabel {
            tag: StructureTag::EdgeLike,
            detail: LocalDetail {
                ball_connected: false,
                shell_component_count: 0,
                inner_product: None,
            },
        });
    }

    let shell = index.shell_query(p, (r - e).max(0.0), r + e)?;
    let shell_graph = geometry::threshold_components(cloud, &shell, link)?;
    let count = shell_graph.num_components();
    if count != 2 {
        return Ok(LocalLabel {
            tag: StructureTag::VertexLike,
            detail: LocalDetail {
                ball_connected: true,
                shell_component_count: count,
                inner_product: None,
            },
        });
    }

    let ip = centroid_inner_product(cloud, &shell_graph, p)?;
    let tag = if ip > inner_product_threshold(config) {
        StructureTag::VertexLike
    } else {
        StructureTag::EdgeLike
    };
    Ok(LocalLabel {
        tag,
        detail: LocalDetail {
            ball_connected: true,
            shell_component_count: 2,
            inner_product: Some(ip),
        },
    })
}

fn centroid_inner_product(cloud: &PointCloud, shell: &ComponentLabeling, p: &[f64]) -> Result<f64> {
    let comps = shell.components();
    let q1 = geometry::component_centroid(cloud, &comps[0])?;
    let q2 = geometry::component_centroid(cloud, &comps[1])?;
    let a: Vec<f64> = q1.iter().zip(p).map(|(q, x)| q - x).collect();
    let b: Vec<f64> = q2.iter().zip(p).map(|(q, x)| q - x).collect();
    Ok(dot(&a, &b))
}

/// Classify every sample. Index `i` of the result belongs to point `i`.
pub fn classify_all(cloud: &PointCloud, config: &ReconstructionConfig, exec: Execution) -> Result<Vec<LocalLabel>> {
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    let index = GridIndex::new(cloud, config.r + config.eps)?;
    map_indices(exec, cloud.len(), |i| classify_indexed(&index, i, config))
        .into_iter()
        .collect()
}

pub fn partition(cloud: &PointCloud, config: &ReconstructionConfig) -> Result<Partition> {
    partition_with(cloud, config, Execution::default())
}

pub fn partition_with(cloud: &PointCloud, config: &ReconstructionConfig, exec: Execution) -> Result<Partition> {
    Ok(Partition::from_labels(&classify_all(cloud, config, exec)?))
}

const CLAMP_SLACK: f64 = 1e-12;

fn unit_interval_arg(x: f64, what: &str) -> Result<f64> {
    if (-1.0..=1.0).contains(&x) {
        Ok(x)
    } else if (-1.0 - CLAMP_SLACK..=1.0 + CLAMP_SLACK).contains(&x) {
        Ok(x.clamp(-1.0, 1.0))
    } else {
        Err(Error::Domain(format!("{what} argument {x} lies outside [-1, 1]")))
    }
}

fn check_scale(r: f64, eps: f64) -> Result<()> {
    if !(r > 0.0 && eps > 0.0 && r.is_finite() && eps.is_finite()) {
        return Err(Error::Domain(format!(
            "angle bounds need positive finite R and eps, got R={r}, eps={eps}"
        )));
    }
    Ok(())
}

/// Largest admissible angle at a degree-2 vertex, in radians.
pub fn max_corner_angle(r: f64, eps: f64) -> Result<f64> {
    check_scale(r, eps)?;
    let e = eps;
    let num = r * r - 4.0 * r * e - 9.0 * e * e;
    let den = (r + e) * (r * r + 6.0 * r * e + 34.0 * e * e).sqrt();
    let s = unit_interval_arg(num / den, "corner bound arcsin")?;
    Ok(PI - ((r + 3.0 * e) / (6.0 * e)).atan() + s.asin())
}

/// Smallest admissible angle between two edges at a shared vertex, in radians.
pub fn min_edge_angle(r: f64, eps: f64) -> Result<f64> {
    check_scale(r, eps)?;
    if r <= eps {
        return Err(Error::Domain(format!("edge angle bound requires R > eps, got R={r}, eps={eps}")));
    }
    let d = r - eps;
    let c = unit_interval_arg((d * d - 18.0 * eps * eps) / (d * d), "edge angle arccos")?;
    let s = unit_interval_arg(2.0 * eps / d, "edge angle arcsin")?;
    Ok(c.acos() + 2.0 * s.asin())
}

/// The five conditions an embedded graph must meet for the guarantees to hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    VertexSeparation,
    VertexEdgeClearance,
    EdgeSeparation,
    MinimumAngle,
    DegreeTwoAngle,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::VertexSeparation,
        Condition::VertexEdgeClearance,
        Condition::EdgeSeparation,
        Condition::MinimumAngle,
        Condition::DegreeTwoAngle,
    ];
}

/// A concrete counterexample to one condition. Indices refer to the graph's
/// vertex and edge lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    VertexSeparation { a: usize, b: usize, distance: f64, required: f64 },
    VertexEdgeClearance { vertex: usize, edge: usize, distance: f64, required: f64 },
    EdgeSeparation { first: usize, second: usize, distance: f64, required: f64 },
    AngleTooSmall { vertex: usize, first: usize, second: usize, angle: f64, bound: f64 },
    AngleTooLarge { vertex: usize, angle: f64, bound: f64 },
    /// The angle bound itself is undefined at this `(R, eps)`.
    BoundUndefined { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub condition: Condition,
    pub violations: Vec<Violation>,
}

impl ConditionCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<ConditionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(ConditionCheck::passed)
    }

    pub fn check(&self, condition: Condition) -> &ConditionCheck {
        self.checks
            .iter()
            .find(|c| c.condition == condition)
            .expect("report holds every condition")
    }

    pub fn passed(&self, condition: Condition) -> bool {
        self.check(condition).passed()
    }
}

/// Angle at `v` between the rays towards `a` and `b`.
pub(crate) fn angle_at(v: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let x: Vec<f64> = a.iter().zip(v).map(|(p, q)| p - q).collect();
    let y: Vec<f64> = b.iter().zip(v).map(|(p, q)| p - q).collect();
    let c = dot(&x, &y) / (dot(&x, &x) * dot(&y, &y)).sqrt();
    c.clamp(-1.0, 1.0).acos()
}

/// Evaluate every condition on `graph` at scale `config`. Never fails; an
/// undefined angle bound is reported as a violation of that condition.
pub fn check_assumptions(graph: &EmbeddedGraphSpec, config: &ReconstructionConfig) -> AssumptionReport {
    let (r, e) = (config.r, config.eps);
    let vs = graph.vertices();
    let edges = graph.edges();
    let seg = |k: usize| {
        let (a, b) = edges[k];
        Segment::new(&vs[a], &vs[b]).expect("validated graph has no degenerate edges")
    };

    let mut sep = Vec::new();
    let required = 4.5 * r + 6.0 * e;
    for a in 0..vs.len() {
        for b in a + 1..vs.len() {
            let d = dist2(&vs[a], &vs[b]).sqrt();
            if !(d > required) {
                sep.push(Violation::VertexSeparation { a, b, distance: d, required });
            }
        }
    }

    let mut clearance = Vec::new();
    let required = 1.5 * r + 4.0 * e;
    for (k, &(a, b)) in edges.iter().enumerate() {
        let s = seg(k);
        for (v, x) in vs.iter().enumerate() {
            if v == a || v == b {
                continue;
            }
            let d = geometry::point_segment_distance(x, &s).expect("dimensions agree");
            if !(d > required) {
                clearance.push(Violation::VertexEdgeClearance { vertex: v, edge: k, distance: d, required });
            }
        }
    }

    let mut edge_sep = Vec::new();
    let required = 5.0 * e;
    for i in 0..edges.len() {
        for j in i + 1..edges.len() {
            let (a, b) = edges[i];
            let (c, d) = edges[j];
            if a == c || a == d || b == c || b == d {
                continue;
            }
            let dist = geometry::segment_distance(&seg(i), &seg(j)).expect("dimensions agree");
            if !(dist > required) {
                edge_sep.push(Violation::EdgeSeparation { first: i, second: j, distance: dist, required });
            }
        }
    }

    let incident = graph.incidence();
    let mut min_angle = Vec::new();
    match min_edge_angle(r, e) {
        Err(err) => min_angle.push(Violation::BoundUndefined { message: err.to_string() }),
        Ok(bound) => {
            for (v, inc) in incident.iter().enumerate() {
                for x in 0..inc.len() {
                    for y in x + 1..inc.len() {
                        let (ea, eb) = (inc[x], inc[y]);
                        let angle = angle_at(&vs[v], &vs[graph.other_end(ea, v)], &vs[graph.other_end(eb, v)]);
                        if angle < bound {
                            min_angle.push(Violation::AngleTooSmall { vertex: v, first: ea, second: eb, angle, bound });
                        }
                    }
                }
            }
        }
    }

    let mut straight = Vec::new();
    match max_corner_angle(r, e) {
        Err(err) => straight.push(Violation::BoundUndefined { message: err.to_string() }),
        Ok(bound) => {
            for (v, inc) in incident.iter().enumerate() {
                if inc.len() != 2 {
                    continue;
                }
                let angle = angle_at(&vs[v], &vs[graph.other_end(inc[0], v)], &vs[graph.other_end(inc[1], v)]);
                if angle > bound {
                    straight.push(Violation::AngleTooLarge { vertex: v, angle, bound });
                }
            }
        }
    }

    let checks = Condition::ALL
        .into_iter()
        .zip([sep, clearance, edge_sep, min_angle, straight])
        .map(|(condition, violations)| ConditionCheck { condition, violations })
        .collect();
    AssumptionReport { checks }
}
