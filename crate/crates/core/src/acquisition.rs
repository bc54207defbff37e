//! Acquisition functions and the qHSRI portfolio batch selector.
//!
//! The portfolio treats each candidate's (posterior mean, posterior std) as a
//! point in a two-objective space. Pairwise hypervolume overlaps define an
//! expected-return vector `r` and a covariance-like matrix `Q`; the batch is
//! the top-`q` weights of the Sharpe-ratio-maximizing allocation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{name} = {v}")))
    }
}

pub fn normal_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * libm::exp(-0.5 * u * u)
}

pub fn normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / core::f64::consts::SQRT_2)
}

/// Expected improvement over `incumbent` for maximization.
pub fn expected_improvement(mean: f64, std: f64, incumbent: f64) -> Result<f64> {
    finite("mean", mean)?;
    finite("std", std)?;
    finite("incumbent", incumbent)?;
    if std < 0.0 {
        return Err(Error::InvalidInput(format!("negative std {std}")));
    }
    let d = mean - incumbent;
    if std == 0.0 {
        return Ok(d.max(0.0));
    }
    let u = d / std;
    Ok((d * normal_cdf(u) + std * normal_pdf(u)).max(0.0))
}

/// EI weighted by a probability of feasibility.
pub fn constrained_ei(pf: f64, ei: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pf) {
        return Err(Error::Probabilities(format!("feasibility {pf} outside [0, 1]")));
    }
    if !(ei >= 0.0) || !ei.is_finite() {
        return Err(Error::InvalidInput(format!("expected improvement {ei}")));
    }
    Ok(pf * ei)
}

/// Acquisition value scaled by a sequence pseudo-likelihood.
pub fn soft_constrain(plik: f64, acq: f64) -> Result<f64> {
    if !(plik > 0.0 && plik <= 1.0) {
        return Err(Error::Probabilities(format!("likelihood {plik} outside (0, 1]")));
    }
    if !(acq >= 0.0) || !acq.is_finite() {
        return Err(Error::InvalidInput(format!("acquisition value {acq}")));
    }
    Ok(plik * acq)
}

pub fn upper_confidence_bound(mean: f64, std: f64, beta: f64) -> Result<f64> {
    finite("mean", mean)?;
    finite("std", std)?;
    if std < 0.0 {
        return Err(Error::InvalidInput(format!("negative std {std}")));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("beta {beta}")));
    }
    Ok(mean + beta * std)
}

/// Candidates as (mean, std) pairs with a reference point strictly below
/// all of them and the componentwise best point.
#[derive(Clone, Debug, PartialEq)]
pub struct PortfolioProblem {
    points: Vec<[f64; 2]>,
    reference: [f64; 2],
    best: [f64; 2],
    likelihoods: Option<Vec<f64>>,
}

/// Fraction of the candidate range placed between the worst candidate and
/// the reference point.
pub const REFERENCE_MARGIN: f64 = 0.05;
/// Relative spread below which candidates count as tied in an objective.
pub const SPREAD_FLOOR: f64 = 1e-9;

impl PortfolioProblem {
    /// Reference point at `min - 0.05 (max - min)` per objective; when the
    /// spread is at most [`SPREAD_FLOOR`]` max(|min|, 1)` the margin is
    /// `0.05 max(|min|, 1)`.
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("portfolio needs at least one candidate".into()));
        }
        let mut reference = [0.0; 2];
        for t in 0..2 {
            let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[t]), hi.max(p[t]))
            });
            let spread = hi - lo;
            let scale = lo.abs().max(1.0);
            let margin = if spread > SPREAD_FLOOR * scale {
                REFERENCE_MARGIN * spread
            } else {
                REFERENCE_MARGIN * scale
            };
            reference[t] = lo - margin;
        }
        Self::with_reference(points, reference)
    }

    pub fn with_reference(points: Vec<[f64; 2]>, reference: [f64; 2]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("portfolio needs at least one candidate".into()));
        }
        let mut best = [f64::NEG_INFINITY; 2];
        for (i, p) in points.iter().enumerate() {
            for t in 0..2 {
                finite("candidate objective", p[t])?;
                if !(reference[t] < p[t]) {
                    return Err(Error::Degenerate(format!(
                        "reference {reference:?} does not strictly dominate candidate {i} {p:?}"
                    )));
                }
                best[t] = best[t].max(p[t]);
            }
        }
        Ok(PortfolioProblem {
            points,
            reference,
            best,
            likelihoods: None,
        })
    }

    /// Attaches per-candidate pseudo-likelihoods in (0, 1].
    pub fn with_likelihoods(mut self, likelihoods: Vec<f64>) -> Result<Self> {
        if likelihoods.len() != self.points.len() {
            return Err(Error::LengthMismatch {
                expected: self.points.len(),
                found: likelihoods.len(),
            });
        }
        if let Some(v) = likelihoods.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::Probabilities(format!("likelihood {v} outside (0, 1]")));
        }
        self.likelihoods = Some(likelihoods);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn reference(&self) -> [f64; 2] {
        self.reference
    }

    pub fn best(&self) -> [f64; 2] {
        self.best
    }

    pub fn likelihoods(&self) -> Option<&[f64]> {
        self.likelihoods.as_deref()
    }
}

/// Return vector and row-major `l x l` matrix of the portfolio. `r` is
/// already multiplied by the likelihoods when the problem carries them.
#[derive(Clone, Debug, PartialEq)]
pub struct Portfolio {
    pub r: Vec<f64>,
    pub q: Vec<f64>,
}

/// `p_ij = prod_t (min(a_t^i, a_t^j) - R_t) / prod_t (f*_t - R_t)`,
/// `r_i = p_ii`, `Q_ij = p_ij - p_ii p_jj`.
pub fn build_portfolio(problem: &PortfolioProblem) -> Result<Portfolio> {
    let l = problem.len();
    let (rf, fb) = (problem.reference, problem.best);
    let norm = (fb[0] - rf[0]) * (fb[1] - rf[1]);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Degenerate(format!("portfolio normalization {norm}")));
    }
    let a = &problem.points;
    let mut p = vec![0.0; l * l];
    for i in 0..l {
        for j in i..l {
            let v = (a[i][0].min(a[j][0]) - rf[0]) * (a[i][1].min(a[j][1]) - rf[1]) / norm;
            p[i * l + j] = v;
            p[j * l + i] = v;
        }
    }
    let diag: Vec<f64> = (0..l).map(|i| p[i * l + i]).collect();
    let mut q = p;
    for i in 0..l {
        for j in 0..l {
            q[i * l + j] -= diag[i] * diag[j];
        }
    }
    let r = match &problem.likelihoods {
        Some(lik) => diag.iter().zip(lik).map(|(d, w)| d * w).collect(),
        None => diag,
    };
    Ok(Portfolio { r, q })
}

/// Iteration cap for the projected-gradient solver.
pub const SHARPE_MAX_ITER: usize = 5000;
/// Relative objective change treated as converged.
pub const SHARPE_TOL: f64 = 1e-12;
const LOADING_START: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SharpeSolution {
    /// Allocation on the simplex.
    pub z: Vec<f64>,
    /// Diagonal loading added to `Q`.
    pub epsilon: f64,
    pub iterations: usize,
}

/// Sharpe ratio `r^T z / sqrt(z^T Q z)` for a row-major `Q`.
pub fn sharpe_ratio(r: &[f64], q: &[f64], z: &[f64]) -> f64 {
    let num: f64 = r.iter().zip(z).map(|(a, b)| a * b).sum();
    num / libm::sqrt(quad(q, z))
}

fn quad(q: &[f64], y: &[f64]) -> f64 {
    let l = y.len();
    let mut s = 0.0;
    for i in 0..l {
        let row = &q[i * l..(i + 1) * l];
        s += y[i] * row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    }
    s
}

fn matvec(q: &[f64], y: &[f64], out: &mut [f64]) {
    let l = y.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = q[i * l..(i + 1) * l].iter().zip(y).map(|(a, b)| a * b).sum();
    }
}

/// Euclidean projection of `v` onto `{y >= 0, r^T y = 1}` for `r > 0`.
fn project(v: &[f64], r: &[f64], out: &mut [f64]) {
    let l = v.len();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| (v[b] / r[b]).total_cmp(&(v[a] / r[a])));
    let (mut srv, mut srr) = (0.0, 0.0);
    let mut lambda = 0.0;
    for (k, &i) in order.iter().enumerate() {
        srv += r[i] * v[i];
        srr += r[i] * r[i];
        let cand = (srv - 1.0) / srr;
        let next = order.get(k + 1).map(|&j| v[j] / r[j]);
        if cand < v[i] / r[i] && next.map_or(true, |b| cand >= b) {
            lambda = cand;
            break;
        }
        lambda = cand;
    }
    for i in 0..l {
        out[i] = (v[i] - lambda * r[i]).max(0.0);
    }
}

/// Exact minimizer by an active-set search started from `support`: drops
/// the most negative weight, adds the most violated off-support index, and
/// stops once the KKT conditions hold.
fn polish(qt: &[f64], r: &[f64], support: &[usize]) -> Option<Vec<f64>> {
    let l = r.len();
    let mut support = support.to_vec();
    let mut g = vec![0.0; l];
    for _ in 0..4 * l {
        let s = support.len();
        if s == 0 {
            return None;
        }
        let mut sub = vec![0.0; s * s];
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                sub[a * s + b] = qt[i * l + j];
            }
        }
        let chol = Cholesky::new(&sub, s)?;
        let rs: Vec<f64> = support.iter().map(|&i| r[i]).collect();
        let w = chol.solve(&rs);
        let denom: f64 = rs.iter().zip(&w).map(|(a, b)| a * b).sum();
        if !(denom > 0.0) {
            return None;
        }
        let neg = (0..s).filter(|&a| !(w[a] > 0.0)).min_by(|&a, &b| w[a].total_cmp(&w[b]));
        if let Some(a) = neg {
            support.remove(a);
            continue;
        }
        let mut y = vec![0.0; l];
        for (a, &i) in support.iter().enumerate() {
            y[i] = w[a] / denom;
        }
        // stationarity: (Q y)_i >= mu r_i off the support, mu = y^T Q y
        matvec(qt, &y, &mut g);
        let mu = quad(qt, &y);
        let scale = g.iter().fold(mu.abs(), |m, v| m.max(v.abs()));
        let worst = (0..l)
            .filter(|&i| y[i] == 0.0)
            .map(|i| (i, (g[i] - mu * r[i]) / r[i]))
            .filter(|&(_, v)| v < -1e-12 * scale)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            None => return Some(y),
            Some((i, _)) => {
                support.push(i);
                support.sort_unstable();
            }
        }
    }
    None
}

/// Maximizes the Sharpe ratio over the simplex via
/// `min y^T (Q + eps I) y` s.t. `r^T y = 1, y >= 0`, then `z = y / sum(y)`.
pub fn solve_sharpe(r: &[f64], q: &[f64]) -> Result<SharpeSolution> {
    let l = r.len();
    if q.len() != l * l {
        return Err(Error::LengthMismatch {
            expected: l * l,
            found: q.len(),
        });
    }
    if l == 0 {
        return Err(Error::InvalidInput("empty portfolio".into()));
    }
    if let Some(v) = r.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(format!("portfolio return {v} not positive")));
    }
    if l == 1 {
        return Ok(SharpeSolution {
            z: vec![1.0],
            epsilon: 0.0,
            iterations: 0,
        });
    }
    let qmax = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut epsilon = LOADING_START;
    let qt = loop {
        let mut qt = q.to_vec();
        for i in 0..l {
            qt[i * l + i] += epsilon;
        }
        if Cholesky::new(&qt, l).is_some() {
            break qt;
        }
        epsilon *= 10.0;
        if epsilon > 1e3 * qmax.max(1.0) {
            return Err(Error::Degenerate("portfolio matrix could not be loaded to positive definite".into()));
        }
    };

    // Gershgorin bound on the largest eigenvalue of 2 Q~
    let lip = 2.0
        * (0..l)
            .map(|i| qt[i * l..(i + 1) * l].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
    let step = 1.0 / lip;
    let rsum: f64 = r.iter().sum();
    let mut y = vec![1.0 / rsum; l];
    let mut prev = y.clone();
    let mut w = y.clone();
    let mut grad = vec![0.0; l];
    let mut trial = vec![0.0; l];
    let mut f = quad(&qt, &y);
    let mut t = 1.0f64;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < SHARPE_MAX_ITER {
        iterations += 1;
        matvec(&qt, &w, &mut grad);
        for i in 0..l {
            trial[i] = w[i] - step * 2.0 * grad[i];
        }
        prev.copy_from_slice(&y);
        project(&trial, r, &mut y);
        let fnew = quad(&qt, &y);
        if fnew > f {
            // adaptive restart: drop momentum
            t = 1.0;
            w.copy_from_slice(&y);
        } else {
            let tn = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * t * t));
            let beta = (t - 1.0) / tn;
            for i in 0..l {
                w[i] = y[i] + beta * (y[i] - prev[i]);
            }
            t = tn;
        }
        let change = (f - fnew).abs();
        f = fnew;
        if change <= SHARPE_TOL * f.abs() {
            converged = true;
            break;
        }
    }

    let ymax = y.iter().fold(0.0f64, |m, v| m.max(*v));
    let support: Vec<usize> = (0..l).filter(|&i| y[i] > 1e-9 * ymax).collect();
    let polished = polish(&qt, r, &support).or_else(|| {
        // retry with the projected-gradient support grown by near-zero entries
        let support: Vec<usize> = (0..l).filter(|&i| y[i] > 0.0).collect();
        polish(&qt, r, &support)
    });
    let y = match polished {
        Some(p) if quad(&qt, &p) <= f * (1.0 + 1e-9) => p,
        Some(_) | None if converged => y,
        _ => {
            return Err(Error::NonConvergence {
                iterations,
                reason: format!("Sharpe solver objective {f} not settled"),
            })
        }
    };
    let s: f64 = y.iter().sum();
    Ok(SharpeSolution {
        z: y.iter().map(|v| v / s).collect(),
        epsilon,
        iterations,
    })
}

/// Weights closer than this are tied for batch ordering.
pub const Z_TIE: f64 = 1e-12;

/// Indices ordered by descending `z`, ties by descending `r`, then index.
pub fn rank_allocation(z: &[f64], r: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    let key = |i: usize| libm::round(z[i] / Z_TIE);
    idx.sort_by(|&a, &b| {
        key(b)
            .partial_cmp(&key(a))
            .unwrap_or(Ordering::Equal)
            .then_with(|| r[b].total_cmp(&r[a]))
            .then_with(|| a.cmp(&b))
    });
    idx
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub portfolio: Portfolio,
    pub solution: SharpeSolution,
    /// Chosen indices in selection order.
    pub selected: Vec<usize>,
}

/// Solves the portfolio and returns the top `q` candidates.
pub fn select_batch(problem: &PortfolioProblem, q: usize) -> Result<Selection> {
    if q > problem.len() {
        return Err(Error::InvalidInput(format!(
            "batch size {q} exceeds {} candidates",
            problem.len()
        )));
    }
    let portfolio = build_portfolio(problem)?;
    let solution = solve_sharpe(&portfolio.r, &portfolio.q)?;
    let mut selected = rank_allocation(&solution.z, &portfolio.r);
    selected.truncate(q);
    Ok(Selection {
        portfolio,
        solution,
        selected,
    })
}
