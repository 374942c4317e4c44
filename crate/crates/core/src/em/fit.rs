use serde::{Deserialize, Serialize};

use super::density::{vertex_log_density_unchecked, EdgeFrame, LOG_DENSITY_FLOOR};
use super::{EmState, StrataModel};
use crate::abstract_graph::{AbstractGraph, RefinedPartition, Stratum};
use crate::exec::{map_indices, pairwise_sum, Execution};
use crate::geometry::{self, PointCloud};
use crate::special::{ln_erf_diff, logsumexp, LN_2PI};
use crate::{Error, Result};

/// Points per block when accumulating gradients; fixed so the summation
/// order, and hence the result, does not depend on the thread count.
const BLOCK: usize = 64;

fn check_shapes(model: &StrataModel, v: &[Vec<f64>], data: &PointCloud) -> Result<()> {
    if v.len() != model.n0() {
        return Err(Error::usage(format!("expected {} vertices, got {}", model.n0(), v.len())));
    }
    if let Some(row) = v.iter().find(|r| r.len() != model.dim()) {
        return Err(Error::usage(format!(
            "vertex has {} coordinates, model dimension is {}",
            row.len(),
            model.dim()
        )));
    }
    if data.dim() != model.dim() {
        return Err(Error::usage("data and model differ in dimension"));
    }
    Ok(())
}

fn check_weights(model: &StrataModel, pi: &[f64], a: Option<&[f64]>, data: &PointCloud) -> Result<()> {
    if pi.len() != model.n_strata() {
        return Err(Error::usage(format!("expected {} mixing weights, got {}", model.n_strata(), pi.len())));
    }
    if let Some(a) = a {
        if a.len() != data.len() * model.n_strata() {
            return Err(Error::usage("responsibility matrix has the wrong shape"));
        }
    }
    Ok(())
}

fn edge_frames(model: &StrataModel, v: &[Vec<f64>]) -> Result<Vec<EdgeFrame>> {
    model
        .edge_endpoints()
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            if v[a] == v[b] {
                Err(Error::Numerical(format!(
                    "edge stratum {k} is degenerate: vertices {a} and {b} coincide"
                )))
            } else {
                Ok(EdgeFrame::new(&v[a], &v[b]))
            }
        })
        .collect()
}

#[inline]
fn log_density(model: &StrataModel, v: &[Vec<f64>], frames: &[EdgeFrame], stratum: usize, x: &[f64]) -> f64 {
    let n0 = model.n0();
    let s = model.sigma(stratum);
    if stratum < n0 {
        vertex_log_density_unchecked(x, &v[stratum], s)
    } else {
        let value = frames[stratum - n0].log_density(x, s);
        if value.is_nan() || value == f64::NEG_INFINITY {
            LOG_DENSITY_FLOOR
        } else {
            value
        }
    }
}

/// Result of one expectation step.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    /// Responsibilities, row-major `|P| x N`.
    pub a: Vec<f64>,
    /// Mean log-likelihood of the data under the mixture.
    pub observed: f64,
    /// Samples whose every weighted density underflowed; their rows are uniform.
    pub fallback_rows: Vec<usize>,
}

/// Posterior stratum probabilities of every sample, computed in log space.
pub fn responsibilities(
    model: &StrataModel,
    v: &[Vec<f64>],
    pi: &[f64],
    data: &PointCloud,
    exec: Execution,
) -> Result<EStep> {
    check_shapes(model, v, data)?;
    check_weights(model, pi, None, data)?;
    let frames = edge_frames(model, v)?;
    let n = model.n_strata();
    let log_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
    let rows = map_indices(exec, data.len(), |j| {
        let x = data.point(j);
        let mut row: Vec<f64> = (0..n)
            .map(|i| {
                if pi[i] > 0.0 {
                    log_pi[i] + log_density(model, v, &frames, i, x)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let total = logsumexp(&row);
        if !total.is_finite() {
            row.iter_mut().for_each(|r| *r = 1.0 / n as f64);
            return (row, total, true);
        }
        row.iter_mut().for_each(|r| *r = (*r - total).exp());
        (row, total, false)
    });
    let mut a = Vec::with_capacity(data.len() * n);
    let mut totals = Vec::with_capacity(data.len());
    let mut fallback_rows = Vec::new();
    for (j, (row, total, fell_back)) in rows.into_iter().enumerate() {
        a.extend(row);
        totals.push(total);
        if fell_back {
            fallback_rows.push(j);
        }
    }
    let observed = if data.is_empty() {
        0.0
    } else {
        pairwise_sum(&totals) / data.len() as f64
    };
    Ok(EStep { a, observed, fallback_rows })
}

/// Mixing weights maximizing the objective for fixed responsibilities:
/// column sums divided by the number of samples.
pub fn update_mixing(a: &[f64], n_strata: usize) -> Result<Vec<f64>> {
    if n_strata == 0 || a.len() % n_strata != 0 {
        return Err(Error::usage("responsibility matrix has the wrong shape"));
    }
    let rows = a.len() / n_strata;
    if rows == 0 {
        return Ok(vec![1.0 / n_strata as f64; n_strata]);
    }
    let mut col = vec![0.0; rows];
    Ok((0..n_strata)
        .map(|i| {
            for j in 0..rows {
                col[j] = a[j * n_strata + i];
            }
            pairwise_sum(&col) / rows as f64
        })
        .collect())
}

/// Mean expected complete-data log-likelihood. Terms with zero
/// responsibility are skipped, so a zero weight never meets `ln 0`.
pub fn log_likelihood(
    model: &StrataModel,
    v: &[Vec<f64>],
    pi: &[f64],
    a: &[f64],
    data: &PointCloud,
    exec: Execution,
) -> Result<f64> {
    check_shapes(model, v, data)?;
    check_weights(model, pi, Some(a), data)?;
    let frames = edge_frames(model, v)?;
    Ok(objective_unchecked(model, v, pi, a, data, &frames, exec))
}

fn objective_unchecked(
    model: &StrataModel,
    v: &[Vec<f64>],
    pi: &[f64],
    a: &[f64],
    data: &PointCloud,
    frames: &[EdgeFrame],
    exec: Execution,
) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let n = model.n_strata();
    let terms = map_indices(exec, data.len(), |j| {
        let x = data.point(j);
        let row = &a[j * n..(j + 1) * n];
        let mut s = 0.0;
        for i in 0..n {
            if row[i] != 0.0 {
                s += row[i] * (log_density(model, v, frames, i, x) + pi[i].ln());
            }
        }
        s
    });
    pairwise_sum(&terms) / data.len() as f64
}

/// Mean log of the mixture density over the data.
pub fn observed_log_likelihood(
    model: &StrataModel,
    v: &[Vec<f64>],
    pi: &[f64],
    data: &PointCloud,
    exec: Execution,
) -> Result<f64> {
    Ok(responsibilities(model, v, pi, data, exec)?.observed)
}

/// Gradient of [`log_likelihood`] with respect to every vertex coordinate,
/// holding responsibilities and weights fixed. With `max_norm` set, each
/// vertex's gradient is scaled down to at most that norm.
pub fn grad_vertices(
    model: &StrataModel,
    v: &[Vec<f64>],
    a: &[f64],
    data: &PointCloud,
    max_norm: Option<f64>,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    check_shapes(model, v, data)?;
    if a.len() != data.len() * model.n_strata() {
        return Err(Error::usage("responsibility matrix has the wrong shape"));
    }
    let frames = edge_frames(model, v)?;
    let mut g = raw_gradient(model, v, a, data, &frames, exec);
    if let Some(m) = max_norm {
        clip_rows(&mut g, m);
    }
    Ok(g)
}

fn clip_rows(g: &mut [Vec<f64>], max_norm: f64) {
    for row in g.iter_mut() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > max_norm {
            let k = max_norm / norm;
            row.iter_mut().for_each(|x| *x *= k);
        }
    }
}

/// Expected offsets `E[x - y]` and `E[t (x - y)]` under the posterior of the
/// segment parameter `t`, where `y(t)` runs from the second endpoint (t = 0)
/// to the first (t = 1).
fn edge_moments(frame: &EdgeFrame, x: &[f64], sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let (c, _) = frame.coordinates(x);
    let half = 0.5 * frame.len;
    let u = &frame.dir;
    let perp: Vec<f64> = (0..x.len()).map(|k| x[k] - frame.mid[k] - c * u[k]).collect();
    let alpha = (-half - c) / sigma;
    let beta = (half - c) / sigma;
    let ln_z = ln_erf_diff(alpha / std::f64::consts::SQRT_2, beta / std::f64::consts::SQRT_2) - std::f64::consts::LN_2;
    let (shift, second) = if ln_z.is_finite() {
        let la = (-0.5 * alpha * alpha - 0.5 * LN_2PI - ln_z).exp();
        let lb = (-0.5 * beta * beta - 0.5 * LN_2PI - ln_z).exp();
        (sigma * (la - lb), sigma * sigma * (1.0 + alpha * la - beta * lb))
    } else {
        // posterior collapsed onto the nearer end
        let d = c.clamp(-half, half) - c;
        (d, d * d)
    };
    let e_diff: Vec<f64> = (0..x.len()).map(|k| perp[k] - shift * u[k]).collect();
    let p = (c + shift + half) / frame.len;
    let q = (second + (c + half) * shift) / frame.len;
    let e_tdiff: Vec<f64> = (0..x.len()).map(|k| p * perp[k] - q * u[k]).collect();
    (e_diff, e_tdiff)
}

fn raw_gradient(
    model: &StrataModel,
    v: &[Vec<f64>],
    a: &[f64],
    data: &PointCloud,
    frames: &[EdgeFrame],
    exec: Execution,
) -> Vec<Vec<f64>> {
    let (n0, dim, n) = (model.n0(), model.dim(), model.n_strata());
    let blocks = data.len().div_ceil(BLOCK);
    let partials = map_indices(exec, blocks, |b| {
        let mut acc = vec![0.0; n0 * dim];
        for j in b * BLOCK..((b + 1) * BLOCK).min(data.len()) {
            let x = data.point(j);
            let row = &a[j * n..(j + 1) * n];
            for i in 0..n0 {
                if row[i] == 0.0 {
                    continue;
                }
                let w = row[i] / (model.sigma(i) * model.sigma(i));
                for k in 0..dim {
                    acc[i * dim + k] += w * (x[k] - v[i][k]);
                }
            }
            for (e, &(p, q)) in model.edge_endpoints().iter().enumerate() {
                let weight = row[n0 + e];
                if weight == 0.0 {
                    continue;
                }
                let s = model.sigma(n0 + e);
                let (e_diff, e_tdiff) = edge_moments(&frames[e], x, s);
                let w = weight / (s * s);
                for k in 0..dim {
                    acc[p * dim + k] += w * e_tdiff[k];
                    acc[q * dim + k] += w * (e_diff[k] - e_tdiff[k]);
                }
            }
        }
        acc
    });
    let mut total = vec![0.0; n0 * dim];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    let scale = if data.is_empty() { 0.0 } else { 1.0 / data.len() as f64 };
    total.chunks(dim).map(|r| r.iter().map(|x| x * scale).collect()).collect()
}

/// Settings for the inner gradient-ascent loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MStepConfig {
    pub max_inner: usize,
    /// Stop once the gradient norm falls below this.
    pub grad_tol: f64,
    /// Smallest step tried by the line search.
    pub min_step: f64,
    /// Per-vertex gradient clipping; `None` disables it.
    pub max_norm: Option<f64>,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for MStepConfig {
    fn default() -> Self {
        Self {
            max_inner: 10,
            grad_tol: 1e-12,
            min_step: 1e-12,
            max_norm: None,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStepOutcome {
    pub v: Vec<Vec<f64>>,
    pub before: f64,
    pub after: f64,
    pub accepted_steps: usize,
}

/// Preconditioned gradient ascent on the vertex coordinates with fixed
/// responsibilities and weights. Each step is scaled per vertex by
/// `sigma^2 / mass`, where mass counts the responsibility the vertex carries
/// (a third of each incident edge's), and halved until the objective does
/// not decrease.
pub fn m_step(
    model: &StrataModel,
    v: &[Vec<f64>],
    pi: &[f64],
    a: &[f64],
    data: &PointCloud,
    config: &MStepConfig,
) -> Result<MStepOutcome> {
    check_shapes(model, v, data)?;
    check_weights(model, pi, Some(a), data)?;
    let exec = config.exec;
    let (n0, n) = (model.n0(), model.n_strata());
    let evaluate = |v: &[Vec<f64>]| -> Option<f64> {
        let frames = edge_frames(model, v).ok()?;
        Some(objective_unchecked(model, v, pi, a, data, &frames, exec)).filter(|f| f.is_finite())
    };
    let before = evaluate(v).ok_or_else(|| {
        Error::Numerical("objective is not finite at the current vertices".to_string())
    })?;

    let mut mass = vec![0.0; n0];
    let rows = data.len().max(1) as f64;
    for j in 0..data.len() {
        let row = &a[j * n..(j + 1) * n];
        for i in 0..n0 {
            mass[i] += row[i];
        }
        for (e, &(p, q)) in model.edge_endpoints().iter().enumerate() {
            mass[p] += row[n0 + e] / 3.0;
            mass[q] += row[n0 + e] / 3.0;
        }
    }
    let precond: Vec<f64> = (0..n0)
        .map(|i| model.sigma(i) * model.sigma(i) / (mass[i] / rows).max(1e-12))
        .collect();

    let mut cur = v.to_vec();
    let mut f = before;
    let mut eta: f64 = 1.0;
    let mut accepted = 0;
    for _ in 0..config.max_inner {
        let frames = edge_frames(model, &cur)?;
        let mut g = raw_gradient(model, &cur, a, data, &frames, exec);
        if let Some(m) = config.max_norm {
            clip_rows(&mut g, m);
        }
        let norm = g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Numerical("gradient is not finite".to_string()));
        }
        if norm < config.grad_tol {
            break;
        }
        let mut any_finite = false;
        let mut moved = false;
        while eta >= config.min_step {
            let trial: Vec<Vec<f64>> = cur
                .iter()
                .zip(&g)
                .zip(&precond)
                .map(|((x, d), p)| x.iter().zip(d).map(|(x, d)| x + eta * p * d).collect())
                .collect();
            match evaluate(&trial) {
                Some(ft) if ft >= f => {
                    any_finite = true;
                    moved = ft > f || trial != cur;
                    cur = trial;
                    f = ft;
                    eta = (2.0 * eta).min(1.0);
                    break;
                }
                Some(_) => any_finite = true,
                None => {}
            }
            eta *= 0.5;
        }
        if !moved {
            if !any_finite {
                return Err(Error::Numerical(
                    "objective is not finite at any trial step of the line search".to_string(),
                ));
            }
            break;
        }
        accepted += 1;
    }
    Ok(MStepOutcome {
        v: cur,
        before,
        after: f,
        accepted_steps: accepted,
    })
}

/// Build the mixture and a hard-assignment starting state from a recovered
/// graph: one vertex stratum per vertex cluster, one edge stratum per edge
/// cluster, vertices at cluster centroids.
pub fn initialize(
    graph: &AbstractGraph,
    refined: &RefinedPartition,
    data: &PointCloud,
    sigma: f64,
) -> Result<(StrataModel, EmState)> {
    if let Some(k) = graph.vertex_clusters.iter().position(Vec::is_empty) {
        return Err(Error::usage(format!("vertex cluster {k} is empty")));
    }
    if let Some(k) = graph.edge_clusters.iter().position(Vec::is_empty) {
        return Err(Error::usage(format!("edge cluster {k} is empty")));
    }
    if graph.boundary.len() != graph.num_edges() {
        return Err(Error::usage("every edge cluster needs a boundary pair"));
    }
    if refined.p0_tilde.len() + refined.p1_tilde.len() != data.len() {
        return Err(Error::usage("refined partition does not cover the data"));
    }
    let model = StrataModel::new(graph.num_vertices(), data.dim(), graph.boundary.clone(), sigma)?;
    let n0 = model.n0();
    let n = model.n_strata();
    let strata = graph.point_strata(data.len());
    let mut a = vec![0.0; data.len() * n];
    for (j, s) in strata.iter().enumerate() {
        let col = match s {
            Some(Stratum::Vertex(i)) => *i,
            Some(Stratum::Edge(e)) => n0 + e,
            None => return Err(Error::usage(format!("sample {j} belongs to no cluster"))),
        };
        a[j * n + col] = 1.0;
    }
    let v = graph
        .vertex_clusters
        .iter()
        .map(|m| geometry::component_centroid(data, m))
        .collect::<Result<Vec<_>>>()?;
    let pi = update_mixing(&a, n)?;
    let loglik = log_likelihood(&model, &v, &pi, &a, data, Execution::default())?;
    Ok((model, EmState { v, pi, a, loglik }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Convergence threshold on the change of the observed log-likelihood.
    pub tol: f64,
    /// Consecutive iterations below `tol` required to stop.
    pub patience: usize,
    /// Inner-loop settings. When its `max_norm` is `None`, clipping defaults
    /// to ten times the diagonal of the data's bounding box.
    pub mstep: MStepConfig,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-8,
            patience: 3,
            mstep: MStepConfig::default(),
        }
    }
}

/// Objective around one M-step, responsibilities held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveStep {
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub state: EmState,
    pub iterations: usize,
    /// Mean observed log-likelihood at the start and after every iteration.
    /// Non-decreasing up to rounding.
    pub loglik_trace: Vec<f64>,
    pub objective_trace: Vec<ObjectiveStep>,
    pub converged: bool,
    /// Distance of every fitted vertex from its starting position.
    pub displacement: Vec<f64>,
    /// Rows that fell back to uniform responsibilities, summed over iterations.
    pub fallback_rows: usize,
}

/// Alternate expectation, weight update and a non-decreasing M-step until
/// the observed log-likelihood settles.
pub fn em_fit(model: &StrataModel, state: &EmState, data: &PointCloud, config: &EmConfig) -> Result<FitReport> {
    check_shapes(model, &state.v, data)?;
    check_weights(model, &state.pi, Some(&state.a), data)?;
    let exec = config.mstep.exec;
    let mut mcfg = config.mstep;
    if mcfg.max_norm.is_none() {
        if let Some((lo, hi)) = data.bounding_box() {
            let diag = geometry::distance(&lo, &hi)?;
            if diag > 0.0 {
                mcfg.max_norm = Some(10.0 * diag);
            }
        }
    }

    let mut v = state.v.clone();
    let mut pi = state.pi.clone();
    let mut a = state.a.clone();
    let mut loglik = state.loglik;
    let start = observed_log_likelihood(model, &v, &pi, data, exec)?;
    if !start.is_finite() {
        return Err(Error::Numerical("log-likelihood is not finite at initialization".to_string()));
    }
    let mut trace = vec![start];
    let mut objective_trace = Vec::new();
    let mut fallback_rows = 0;
    let mut calm = 0;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iters {
        let e = responsibilities(model, &v, &pi, data, exec)?;
        if !e.fallback_rows.is_empty() {
            fallback_rows += e.fallback_rows.len();
        }
        a = e.a;
        pi = update_mixing(&a, model.n_strata())?;
        let ms = m_step(model, &v, &pi, &a, data, &mcfg)?;
        v = ms.v;
        loglik = ms.after;
        objective_trace.push(ObjectiveStep {
            before: ms.before,
            after: ms.after,
        });
        let e_next = responsibilities(model, &v, &pi, data, exec)?;
        let obs = e_next.observed;
        if !obs.is_finite() {
            return Err(Error::Numerical(format!(
                "log-likelihood became non-finite; samples {:?} have no supporting stratum",
                e_next.fallback_rows
            )));
        }
        let delta = obs - trace[trace.len() - 1];
        trace.push(obs);
        iterations += 1;
        if delta.abs() < config.tol {
            calm += 1;
            if calm >= config.patience {
                converged = true;
                break;
            }
        } else {
            calm = 0;
        }
    }
    let displacement = v
        .iter()
        .zip(&state.v)
        .map(|(a, b)| geometry::distance(a, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(FitReport {
        state: EmState { v, pi, a, loglik },
        iterations,
        loglik_trace: trace,
        objective_trace,
        converged,
        displacement,
        fallback_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{edge_log_density, vertex_log_density};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SEQ: Execution = Execution::Sequential;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize, spread: f64) -> PointCloud {
        let c: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-spread..spread)).collect();
        PointCloud::new(dim, c).unwrap()
    }

    fn random_rows(rng: &mut ChaCha8Rng, rows: usize, n: usize) -> Vec<f64> {
        let mut a = Vec::new();
        for _ in 0..rows {
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = r.iter().sum();
            a.extend(r.iter().map(|x| x / s));
        }
        a
    }

    fn toy_model() -> StrataModel {
        StrataModel::new(3, 3, vec![(0, 1), (1, 2)], 0.4).unwrap()
    }

    #[test]
    fn single_stratum_takes_everything() {
        let model = StrataModel::new(1, 2, vec![], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = random_cloud(&mut rng, 7, 2, 3.0);
        let e = responsibilities(&model, &[vec![0.0, 0.0]], &[1.0], &data, SEQ).unwrap();
        assert!(e.a.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn symmetric_point_splits_evenly() {
        let model = StrataModel::new(2, 2, vec![], 1.0).unwrap();
        let data = PointCloud::new(2, vec![0.0, 0.0]).unwrap();
        let v = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let e = responsibilities(&model, &v, &[0.5, 0.5], &data, SEQ).unwrap();
        assert_eq!(e.a[0], e.a[1]);
        assert!((e.a[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn responsibilities_match_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = StrataModel::new(2, 2, vec![(0, 1)], 0.7).unwrap();
        let data = random_cloud(&mut rng, 10, 2, 1.5);
        let v = vec![vec![-1.0, 0.2], vec![0.8, -0.3]];
        let pi = [0.2, 0.3, 0.5];
        let e = responsibilities(&model, &v, &pi, &data, SEQ).unwrap();
        for j in 0..10 {
            let x = data.point(j);
            let dens = [
                vertex_log_density(x, &v[0], 0.7).unwrap().exp(),
                vertex_log_density(x, &v[1], 0.7).unwrap().exp(),
                edge_log_density(x, &v[0], &v[1], 0.7).unwrap().exp(),
            ];
            let total: f64 = dens.iter().zip(&pi).map(|(d, p)| d * p).sum();
            for i in 0..3 {
                let direct = pi[i] * dens[i] / total;
                assert!((e.a[j * 3 + i] - direct).abs() < 1e-12);
            }
            let row: f64 = e.a[j * 3..j * 3 + 3].iter().sum();
            assert!((row - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_underflow_falls_back_to_uniform() {
        let model = StrataModel::new(2, 1, vec![], 1e-3).unwrap();
        // squared distance overflows, so every log density is -inf
        let data = PointCloud::new(1, vec![0.0, 1e200]).unwrap();
        let e = responsibilities(&model, &[vec![0.0], vec![0.1]], &[0.5, 0.5], &data, SEQ).unwrap();
        assert_eq!(e.fallback_rows, vec![1]);
        assert_eq!(&e.a[2..], &[0.5, 0.5]);
    }

    #[test]
    fn mixing_from_counts() {
        let mut a = Vec::new();
        for j in 0..10 {
            a.extend(if j < 5 { [1.0, 0.0] } else { [0.0, 1.0] });
        }
        assert_eq!(update_mixing(&a, 2).unwrap(), vec![0.5, 0.5]);
        assert_eq!(update_mixing(&[1.0 / 3.0; 9], 3).unwrap(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn mixing_update_beats_simplex_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = toy_model();
        let data = random_cloud(&mut rng, 12, 3, 1.0);
        let v = vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]];
        let mut a = Vec::new();
        for _ in 0..12 {
            let r: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = r.iter().sum();
            a.extend(r.iter().map(|x| x / s));
            a.extend([0.0, 0.0]);
        }
        let model3 = StrataModel::new(3, 3, vec![], 0.4).unwrap();
        let a3: Vec<f64> = a.chunks(5).flat_map(|r| r[..3].to_vec()).collect();
        let best = update_mixing(&a3, 3).unwrap();
        let at = |pi: &[f64]| log_likelihood(&model3, &v, pi, &a3, &data, SEQ).unwrap();
        let optimum = at(&best);
        let steps = 200;
        let mut grid_best = (f64::NEG_INFINITY, vec![]);
        for i in 1..steps {
            for j in 1..steps - i {
                let pi = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
                let f = at(&pi);
                assert!(f <= optimum + 1e-12);
                if f > grid_best.0 {
                    grid_best = (f, pi.to_vec());
                }
            }
        }
        for k in 0..3 {
            assert!((grid_best.1[k] - best[k]).abs() < 1e-2 + 1e-3);
        }
        let _ = model;
    }

    #[test]
    fn loglik_single_point_at_vertex() {
        let model = StrataModel::new(1, 2, vec![], 1.0).unwrap();
        let data = PointCloud::new(2, vec![0.0, 0.0]).unwrap();
        let l = log_likelihood(&model, &[vec![0.0, 0.0]], &[1.0], &[1.0], &data, SEQ).unwrap();
        assert!((l + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_never_meets_log_zero() {
        let model = StrataModel::new(2, 1, vec![], 1.0).unwrap();
        let data = PointCloud::new(1, vec![0.0]).unwrap();
        let l = log_likelihood(&model, &[vec![0.0], vec![1.0]], &[1.0, 0.0], &[1.0, 0.0], &data, SEQ).unwrap();
        assert!(l.is_finite());
    }

    #[test]
    fn loglik_toy_matches_independent_sum() {
        let model = StrataModel::new(2, 2, vec![(0, 1)], 0.5).unwrap();
        let pts = [[0.1, 0.0], [0.5, 0.2], [1.0, -0.1], [0.3, 0.4], [0.9, 0.1]];
        let data = PointCloud::from_points(2, pts).unwrap();
        let v = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let pi = [0.3, 0.3, 0.4];
        let a: Vec<f64> = (0..5).flat_map(|j| {
            let w = 0.1 + 0.15 * j as f64;
            [w / 2.0, w / 2.0, 1.0 - w]
        }).collect();
        let got = log_likelihood(&model, &v, &pi, &a, &data, SEQ).unwrap();
        // independent path: quadrature for the edge stratum
        let mut want = 0.0;
        for (j, x) in pts.iter().enumerate() {
            want += a[j * 3] * (vertex_log_density(x, &v[0], 0.5).unwrap() + pi[0].ln());
            want += a[j * 3 + 1] * (vertex_log_density(x, &v[1], 0.5).unwrap() + pi[1].ln());
            let e = crate::em::edge_log_density_quadrature(x, &v[0], &v[1], 0.5).unwrap();
            want += a[j * 3 + 2] * (e + pi[2].ln());
        }
        want /= 5.0;
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn loglik_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = toy_model();
        let data = random_cloud(&mut rng, 9, 3, 1.0);
        let v = vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]];
        let pi = [0.2; 5];
        let a = random_rows(&mut rng, 9, 5);
        let base = log_likelihood(&model, &v, &pi, &a, &data, SEQ).unwrap();
        let order: Vec<usize> = (0..9).rev().collect();
        let pts: Vec<&[f64]> = order.iter().map(|&j| data.point(j)).collect();
        let data2 = PointCloud::from_points(3, pts).unwrap();
        let a2: Vec<f64> = order.iter().flat_map(|&j| a[j * 5..j * 5 + 5].to_vec()).collect();
        let perm = log_likelihood(&model, &v, &pi, &a2, &data2, SEQ).unwrap();
        assert!((base - perm).abs() < 1e-13);
    }

    fn fd_check(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = StrataModel::new(3, 3, vec![(0, 1), (1, 2)], rng.random_range(0.2..0.8)).unwrap();
        let data = random_cloud(&mut rng, 15, 3, 1.5);
        let v: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        let pi = [0.2; 5];
        let a = random_rows(&mut rng, 15, 5);
        let g = grad_vertices(&model, &v, &a, &data, None, SEQ).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            for k in 0..3 {
                let mut vp = v.clone();
                vp[i][k] += h;
                let mut vm = v.clone();
                vm[i][k] -= h;
                let fp = log_likelihood(&model, &vp, &pi, &a, &data, SEQ).unwrap();
                let fm = log_likelihood(&model, &vm, &pi, &a, &data, SEQ).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let rel = (g[i][k] - fd).abs() / g[i][k].abs().max(fd.abs());
                assert!(rel < 1e-5, "seed {seed} vertex {i} coord {k}: {} vs {fd}", g[i][k]);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            fd_check(seed);
        }
    }

    #[test]
    fn centred_vertex_has_zero_gradient() {
        let model = StrataModel::new(1, 2, vec![], 1.0).unwrap();
        let data = PointCloud::from_points(2, [[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]]).unwrap();
        let g = grad_vertices(&model, &[vec![0.0, 0.0]], &[1.0; 4], &data, None, SEQ).unwrap();
        assert_eq!(g, vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let model = StrataModel::new(1, 2, vec![], 1.0).unwrap();
        let data = PointCloud::from_points(2, [[30.0, 40.0]]).unwrap();
        let raw = grad_vertices(&model, &[vec![0.0, 0.0]], &[1.0], &data, None, SEQ).unwrap();
        assert_eq!(raw, vec![vec![30.0, 40.0]]);
        let clipped = grad_vertices(&model, &[vec![0.0, 0.0]], &[1.0], &data, Some(5.0), SEQ).unwrap();
        let norm = (clipped[0][0].powi(2) + clipped[0][1].powi(2)).sqrt();
        assert!((norm - 5.0).abs() < 1e-14);
        assert!((clipped[0][0] / clipped[0][1] - 0.75).abs() < 1e-14);
    }

    #[test]
    fn degenerate_edge_is_reported() {
        let model = StrataModel::new(2, 2, vec![(0, 1)], 1.0).unwrap();
        let data = PointCloud::from_points(2, [[0.0, 0.0]]).unwrap();
        let err = grad_vertices(&model, &[vec![1.0, 1.0], vec![1.0, 1.0]], &[0.0, 0.0, 1.0], &data, None, SEQ);
        assert!(matches!(err, Err(Error::Numerical(m)) if m.contains("edge stratum 0")));
    }

    #[test]
    fn m_step_reaches_weighted_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = StrataModel::new(1, 3, vec![], 0.3).unwrap();
        let data = random_cloud(&mut rng, 40, 3, 2.0);
        let mean = geometry::component_centroid(&data, &(0..40).collect::<Vec<_>>()).unwrap();
        let cfg = MStepConfig {
            max_inner: 200,
            ..MStepConfig::default()
        };
        let out = m_step(&model, &[vec![3.0, -3.0, 1.0]], &[1.0], &[1.0; 40], &data, &cfg).unwrap();
        for k in 0..3 {
            assert!((out.v[0][k] - mean[k]).abs() < 1e-6);
        }
        assert!(out.after >= out.before);
        // already stationary
        let again = m_step(&model, &out.v, &[1.0], &[1.0; 40], &data, &cfg).unwrap();
        for k in 0..3 {
            assert!((again.v[0][k] - out.v[0][k]).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_mixture_special_case_finds_blob_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut pts = Vec::new();
        let centres = [[-5.0, 0.0], [5.0, 1.0]];
        for c in centres {
            for _ in 0..200 {
                let dx: f64 = rng.sample(rand_distr::StandardNormal);
                let dy: f64 = rng.sample(rand_distr::StandardNormal);
                pts.push([c[0] + 0.3 * dx, c[1] + 0.3 * dy]);
            }
        }
        let data = PointCloud::from_points(2, &pts).unwrap();
        let model = StrataModel::new(2, 2, vec![], 0.3).unwrap();
        let a: Vec<f64> = (0..400).flat_map(|_| [0.5, 0.5]).collect();
        let state = EmState {
            v: vec![vec![-3.0, 0.5], vec![3.0, 0.5]],
            pi: vec![0.5, 0.5],
            loglik: f64::NAN,
            a,
        };
        let report = em_fit(&model, &state, &data, &EmConfig::default()).unwrap();
        for (b, c) in [0, 1].iter().zip(centres) {
            let members: Vec<usize> = (b * 200..(b + 1) * 200).collect();
            let mean = geometry::component_centroid(&data, &members).unwrap();
            for k in 0..2 {
                assert!((report.state.v[*b][k] - mean[k]).abs() < 1e-3);
                assert!((mean[k] - c[k]).abs() < 0.1);
            }
        }
        for w in report.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn zero_iterations_echo_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = toy_model();
        let data = random_cloud(&mut rng, 10, 3, 1.0);
        let v = vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0]];
        let a = random_rows(&mut rng, 10, 5);
        let pi = update_mixing(&a, 5).unwrap();
        let state = EmState { v: v.clone(), pi, a, loglik: 0.0 };
        let cfg = EmConfig {
            max_iters: 0,
            ..EmConfig::default()
        };
        let report = em_fit(&model, &state, &data, &cfg).unwrap();
        assert_eq!(report.state, state);
        assert_eq!(report.iterations, 0);
        assert_eq!(report.displacement, vec![0.0; 3]);
    }

    #[test]
    fn fit_is_equivariant_under_stratum_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data = random_cloud(&mut rng, 30, 2, 2.0);
        let v = vec![vec![-1.0, 0.0], vec![1.0, 0.2], vec![0.0, 1.5]];
        let model = StrataModel::new(3, 2, vec![(0, 1), (1, 2)], 0.5).unwrap();
        let a = random_rows(&mut rng, 30, 5);
        let pi = update_mixing(&a, 5).unwrap();
        let cfg = EmConfig {
            max_iters: 5,
            mstep: MStepConfig { exec: SEQ, ..MStepConfig::default() },
            ..EmConfig::default()
        };
        let state = EmState { v: v.clone(), pi, a: a.clone(), loglik: 0.0 };
        let base = em_fit(&model, &state, &data, &cfg).unwrap();

        // vertices (0, 1, 2) -> (2, 0, 1); edges swapped
        let vperm = [2usize, 0, 1];
        let mut v2 = vec![vec![]; 3];
        for (old, &new) in vperm.iter().enumerate() {
            v2[new] = v[old].clone();
        }
        let model2 = StrataModel::new(3, 2, vec![(vperm[1], vperm[2]), (vperm[0], vperm[1])], 0.5).unwrap();
        let col = |old: usize| -> usize {
            match old {
                0..=2 => vperm[old],
                3 => 4,
                _ => 3,
            }
        };
        let mut a2 = vec![0.0; a.len()];
        for j in 0..30 {
            for i in 0..5 {
                a2[j * 5 + col(i)] = a[j * 5 + i];
            }
        }
        let pi2 = update_mixing(&a2, 5).unwrap();
        let permuted = em_fit(&model2, &EmState { v: v2, pi: pi2, a: a2, loglik: 0.0 }, &data, &cfg).unwrap();
        for (old, &new) in vperm.iter().enumerate() {
            for k in 0..2 {
                assert!((base.state.v[old][k] - permuted.state.v[new][k]).abs() < 1e-9);
            }
        }
        for i in 0..5 {
            assert!((base.state.pi[i] - permuted.state.pi[col(i)]).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn every_iteration_stays_on_the_simplex(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = toy_model();
            let data = random_cloud(&mut rng, 25, 3, 1.5);
            let v: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
            let a = random_rows(&mut rng, 25, 5);
            let pi = update_mixing(&a, 5).unwrap();
            let cfg = EmConfig { max_iters: 8, ..EmConfig::default() };
            let report = em_fit(&model, &EmState { v, pi, a, loglik: 0.0 }, &data, &cfg).unwrap();
            prop_assert!((report.state.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for row in report.state.a.chunks(5) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|x| (0.0..=1.0).contains(x)));
            }
            for w in report.loglik_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9);
            }
            for s in &report.objective_trace {
                prop_assert!(s.after >= s.before - 1e-12);
            }
        }
    }
}
