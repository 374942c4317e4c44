//! Euclidean primitives, range queries and threshold-graph components.
//!
//! Points are plain coordinate slices. A [`PointCloud`] stores them in one
//! flat buffer and hands out `&[f64]` views; indices into the cloud are the
//! identities used by every labeling downstream.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::union_find::UnionFind;
use crate::{Error, Result};

/// Immutable, finite, n-dimensional sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    /// Build from a flat row-major coordinate buffer.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("point cloud dimension must be positive"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::usage(format!(
                "coordinate buffer of length {} is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::usage(format!(
                "point {} has a non-finite coordinate",
                pos / dim
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points<I, P>(dim: usize, points: I) -> Result<Self>
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[f64]>,
    {
        let mut coords = Vec::new();
        for (i, p) in points.into_iter().enumerate() {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::usage(format!(
                    "point {i} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Axis-aligned bounding box as `(min, max)`; `None` for an empty cloud.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut it = self.points();
        let first = it.next()?;
        let mut lo = first.to_vec();
        let mut hi = first.to_vec();
        for p in it {
            for k in 0..self.dim {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Some((lo, hi))
    }

    fn check_dim(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim {
            return Err(Error::usage(format!(
                "query point has dimension {}, cloud has {}",
                p.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dist2(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
pub(crate) fn dot(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * b).sum()
}

/// Euclidean distance.
pub fn distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::usage(format!(
            "dimension mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(dist2(p, q).sqrt())
}

/// A non-degenerate line segment between two borrowed points.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    a: &'a [f64],
    b: &'a [f64],
}

impl<'a> Segment<'a> {
    pub fn new(a: &'a [f64], b: &'a [f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::usage("segment endpoints differ in dimension"));
        }
        if a == b {
            return Err(Error::usage("degenerate segment: endpoints coincide"));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &'a [f64] {
        self.a
    }

    pub fn b(&self) -> &'a [f64] {
        self.b
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn length(&self) -> f64 {
        dist2(self.a, self.b).sqrt()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.a.iter().zip(self.b).map(|(x, y)| 0.5 * (x + y)).collect()
    }

    /// `a + t (b - a)`.
    pub fn lerp(&self, t: f64) -> Vec<f64> {
        self.a.iter().zip(self.b).map(|(x, y)| x + t * (y - x)).collect()
    }

    /// Parameter of the closest point to `x`, clamped to `[0, 1]`.
    fn project(&self, x: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..self.a.len() {
            let d = self.b[k] - self.a[k];
            num += (x[k] - self.a[k]) * d;
            den += d * d;
        }
        (num / den).clamp(0.0, 1.0)
    }

    fn dist_at(&self, x: &[f64], t: f64) -> f64 {
        let mut s = 0.0;
        for k in 0..self.a.len() {
            let y = self.a[k] + t * (self.b[k] - self.a[k]);
            s += (x[k] - y) * (x[k] - y);
        }
        s.sqrt()
    }
}

/// Distance from `x` to the closest point of `seg`.
pub fn point_segment_distance(x: &[f64], seg: &Segment<'_>) -> Result<f64> {
    if x.len() != seg.dim() {
        return Err(Error::usage("point and segment differ in dimension"));
    }
    Ok(seg.dist_at(x, seg.project(x)))
}

/// Minimum distance between two segments.
///
/// The squared distance is a convex quadratic on the unit square of
/// parameters, so its minimum is either the interior critical point or lies
/// on the boundary, where it reduces to four point-segment distances.
pub fn segment_distance(s1: &Segment<'_>, s2: &Segment<'_>) -> Result<f64> {
    if s1.dim() != s2.dim() {
        return Err(Error::usage("segments differ in dimension"));
    }
    let mut best = point_segment_distance(s1.a, s2)?
        .min(point_segment_distance(s1.b, s2)?)
        .min(point_segment_distance(s2.a, s1)?)
        .min(point_segment_distance(s2.b, s1)?);

    let n = s1.dim();
    let d1: Vec<f64> = (0..n).map(|k| s1.b[k] - s1.a[k]).collect();
    let d2: Vec<f64> = (0..n).map(|k| s2.b[k] - s2.a[k]).collect();
    let r: Vec<f64> = (0..n).map(|k| s1.a[k] - s2.a[k]).collect();
    let a = dot(&d1, &d1);
    let b = dot(&d1, &d2);
    let e = dot(&d2, &d2);
    let c = dot(&d1, &r);
    let f = dot(&d2, &r);
    let den = a * e - b * b;
    if den > 1e-14 * a * e {
        let s = (b * f - c * e) / den;
        let t = (a * f - b * c) / den;
        if (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t) {
            let d: f64 = (0..n)
                .map(|k| {
                    let diff = (s1.a[k] + s * d1[k]) - (s2.a[k] + t * d2[k]);
                    diff * diff
                })
                .sum();
            best = best.min(d.sqrt());
        }
    }
    Ok(best)
}

/// Indices `i` with `|p_i - center| <= r`, ascending. Linear scan.
pub fn ball_query(cloud: &PointCloud, center: &[f64], r: f64) -> Result<Vec<usize>> {
    cloud.check_dim(center)?;
    check_radius(r)?;
    let r2 = r * r;
    Ok((0..cloud.len())
        .filter(|&i| dist2(cloud.point(i), center) <= r2)
        .collect())
}

/// Indices `i` with `r_in < |p_i - center| <= r_out`, ascending. Linear scan.
pub fn shell_query(cloud: &PointCloud, center: &[f64], r_in: f64, r_out: f64) -> Result<Vec<usize>> {
    cloud.check_dim(center)?;
    check_shell(r_in, r_out)?;
    let (lo2, hi2) = (r_in * r_in, r_out * r_out);
    Ok((0..cloud.len())
        .filter(|&i| {
            let d2 = dist2(cloud.point(i), center);
            d2 > lo2 && d2 <= hi2
        })
        .collect())
}

fn check_radius(r: f64) -> Result<()> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::usage(format!("radius must be finite and non-negative, got {r}")));
    }
    Ok(())
}

fn check_shell(r_in: f64, r_out: f64) -> Result<()> {
    check_radius(r_in)?;
    check_radius(r_out)?;
    if r_in > r_out {
        return Err(Error::usage(format!(
            "shell inner radius {r_in} exceeds outer radius {r_out}"
        )));
    }
    Ok(())
}

/// Uniform hash grid over a set of points.
#[derive(Debug, Clone)]
struct CellGrid {
    cell: f64,
    dim: usize,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl CellGrid {
    fn new<'a>(dim: usize, cell: f64, items: impl Iterator<Item = (usize, &'a [f64])>) -> Self {
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (id, p) in items {
            cells.entry(Self::key_of(cell, p)).or_default().push(id);
        }
        Self { cell, dim, cells }
    }

    fn key_of(cell: f64, p: &[f64]) -> Vec<i64> {
        p.iter().map(|x| (x / cell).floor() as i64).collect()
    }

    /// Every id stored in a cell within `r` (plus a one-cell rounding margin)
    /// of `center`. Superset of the true neighbours; callers filter exactly.
    fn candidates(&self, center: &[f64], r: f64, out: &mut Vec<usize>) {
        out.clear();
        let reach = (r / self.cell).ceil() as i64 + 1;
        let key = Self::key_of(self.cell, center);
        let span = (2 * reach + 1) as f64;
        if span.powi(self.dim as i32) > self.cells.len() as f64 {
            for (k, ids) in &self.cells {
                if k.iter().zip(&key).all(|(a, b)| (a - b).abs() <= reach) {
                    out.extend_from_slice(ids);
                }
            }
            return;
        }
        let mut offset = vec![-reach; self.dim];
        let mut probe = key.clone();
        loop {
            for k in 0..self.dim {
                probe[k] = key[k] + offset[k];
            }
            if let Some(ids) = self.cells.get(&probe) {
                out.extend_from_slice(ids);
            }
            // odometer increment
            let mut k = 0;
            while k < self.dim {
                offset[k] += 1;
                if offset[k] <= reach {
                    break;
                }
                offset[k] = -reach;
                k += 1;
            }
            if k == self.dim {
                break;
            }
        }
    }
}

/// Read-only acceleration structure for repeated ball and shell queries on
/// one cloud. Results are identical to [`ball_query`] and [`shell_query`].
#[derive(Debug, Clone)]
pub struct GridIndex<'a> {
    cloud: &'a PointCloud,
    grid: CellGrid,
}

impl<'a> GridIndex<'a> {
    /// `cell` should be on the order of the typical query radius.
    pub fn new(cloud: &'a PointCloud, cell: f64) -> Result<Self> {
        if !(cell > 0.0) || !cell.is_finite() {
            return Err(Error::usage(format!("grid cell size must be positive, got {cell}")));
        }
        let grid = CellGrid::new(cloud.dim(), cell, (0..cloud.len()).map(|i| (i, cloud.point(i))));
        Ok(Self { cloud, grid })
    }

    pub fn cloud(&self) -> &'a PointCloud {
        self.cloud
    }

    pub fn ball_query(&self, center: &[f64], r: f64) -> Result<Vec<usize>> {
        self.cloud.check_dim(center)?;
        check_radius(r)?;
        let mut cand = Vec::new();
        self.grid.candidates(center, r, &mut cand);
        let r2 = r * r;
        cand.retain(|&i| dist2(self.cloud.point(i), center) <= r2);
        cand.sort_unstable();
        Ok(cand)
    }

    pub fn shell_query(&self, center: &[f64], r_in: f64, r_out: f64) -> Result<Vec<usize>> {
        self.cloud.check_dim(center)?;
        check_shell(r_in, r_out)?;
        let mut cand = Vec::new();
        self.grid.candidates(center, r_out, &mut cand);
        let (lo2, hi2) = (r_in * r_in, r_out * r_out);
        cand.retain(|&i| {
            let d2 = dist2(self.cloud.point(i), center);
            d2 > lo2 && d2 <= hi2
        });
        cand.sort_unstable();
        Ok(cand)
    }
}

/// Connected components of a threshold graph on a subset of a cloud.
///
/// `indices` is the sorted subset; `labels[k]` is the component of
/// `indices[k]`. Component ids are dense and ordered by smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentLabeling {
    indices: Vec<usize>,
    labels: Vec<usize>,
    num_components: usize,
}

impl ComponentLabeling {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_components(&self) -> usize {
        self.num_components
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Component of a cloud index, if it belongs to the labeled subset.
    pub fn label_of(&self, index: usize) -> Option<usize> {
        self.indices.binary_search(&index).ok().map(|k| self.labels[k])
    }

    /// Members of every component, each sorted ascending.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_components];
        for (&i, &l) in self.indices.iter().zip(&self.labels) {
            out[l].push(i);
        }
        out
    }
}

const BRUTE_FORCE_LIMIT: usize = 64;

/// Components of the graph on `subset` with an edge whenever two points are
/// at distance `<= r`.
pub fn threshold_components(cloud: &PointCloud, subset: &[usize], r: f64) -> Result<ComponentLabeling> {
    check_radius(r)?;
    let mut indices = subset.to_vec();
    indices.sort_unstable();
    indices.dedup();
    if let Some(&bad) = indices.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::usage(format!(
            "subset index {bad} out of range for cloud of {} points",
            cloud.len()
        )));
    }
    let n = indices.len();
    let r2 = r * r;
    let mut uf = UnionFind::new(n);
    if n <= BRUTE_FORCE_LIMIT || r == 0.0 {
        for a in 0..n {
            let pa = cloud.point(indices[a]);
            for b in a + 1..n {
                if dist2(pa, cloud.point(indices[b])) <= r2 {
                    uf.union(a, b);
                }
            }
        }
    } else {
        let grid = CellGrid::new(
            cloud.dim(),
            r,
            indices.iter().enumerate().map(|(k, &i)| (k, cloud.point(i))),
        );
        let mut cand = Vec::new();
        for a in 0..n {
            let pa = cloud.point(indices[a]);
            grid.candidates(pa, r, &mut cand);
            for &b in &cand {
                if b > a && dist2(pa, cloud.point(indices[b])) <= r2 {
                    uf.union(a, b);
                }
            }
        }
    }
    let (labels, num_components) = uf.labels();
    Ok(ComponentLabeling {
        indices,
        labels,
        num_components,
    })
}

/// Coordinate-wise arithmetic mean of the given members.
pub fn component_centroid(cloud: &PointCloud, members: &[usize]) -> Result<Vec<f64>> {
    if members.is_empty() {
        return Err(Error::usage("centroid of an empty set"));
    }
    let mut c = vec![0.0; cloud.dim()];
    for &i in members {
        if i >= cloud.len() {
            return Err(Error::usage(format!("member index {i} out of range")));
        }
        for (ck, x) in c.iter_mut().zip(cloud.point(i)) {
            *ck += x;
        }
    }
    let n = members.len() as f64;
    c.iter_mut().for_each(|x| *x /= n);
    Ok(c)
}

/// Smallest pairwise distance between two member sets (`inf` if either is empty).
pub fn single_linkage_distance(cloud: &PointCloud, a: &[usize], b: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for &i in a {
        let p = cloud.point(i);
        for &j in b {
            best = best.min(dist2(p, cloud.point(j)));
        }
    }
    best.sqrt()
}
