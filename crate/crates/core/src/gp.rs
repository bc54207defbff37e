//! Exact Gaussian-process regression with Cholesky inference.
//!
//! Observations follow `y = f(x) + eps`, `eps ~ N(0, noise)`, with
//! `f ~ GP(m, k)`. Hyperparameters are fitted by maximizing the log marginal
//! likelihood with L-BFGS from several starting points.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{cross, gram_with_grad, gram_with_grad_cached, GramMatrix, Kernel, PairCache, Param, ParamKind, Point};
use crate::linalg::Cholesky;
use crate::optim::{minimize, LbfgsOptions};
use crate::plm::LogProbTable;
use crate::seq::{MutationSet, Sequence};

/// Training data; sequences are unique and targets finite.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    sequences: Vec<Sequence>,
    points: Vec<Point>,
    targets: Vec<f64>,
    index: BTreeSet<Sequence>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(sequences: Vec<Sequence>, points: Vec<Point>, targets: Vec<f64>) -> Result<Self> {
        if sequences.len() != points.len() || sequences.len() != targets.len() {
            return Err(Error::InvalidInput(format!(
                "dataset parts disagree: {} sequences, {} points, {} targets",
                sequences.len(),
                points.len(),
                targets.len()
            )));
        }
        let mut d = Dataset::new();
        for ((s, p), y) in sequences.into_iter().zip(points).zip(targets) {
            d.push(s, p, y)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, sequence: Sequence, point: Point, target: f64) -> Result<()> {
        if !target.is_finite() {
            return Err(Error::NonFinite(format!("target {target} for {sequence}")));
        }
        if !self.index.insert(sequence.clone()) {
            return Err(Error::DuplicateSequence(format!("{sequence}")));
        }
        self.sequences.push(sequence);
        self.points.push(point);
        self.targets.push(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn contains(&self, sequence: &Sequence) -> bool {
        self.index.contains(sequence)
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.targets
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Zero-shot score: sum over mutated sites of `ln p(to) - ln p(from)`.
pub fn zero_shot_score(table: &LogProbTable, mutations: &MutationSet) -> Result<f64> {
    let mut s = 0.0;
    for m in mutations.entries() {
        let (Some(to), Some(from)) = (
            table.log_prob(m.position, m.to),
            table.log_prob(m.position, m.from),
        ) else {
            return Err(Error::PositionOutOfRange {
                position: m.position,
                len: table.len(),
            });
        };
        s += to - from;
    }
    Ok(s)
}

/// Prior mean `beta` or `alpha * f0(x) + beta`, where `f0` is the point's
/// zero-shot score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PriorMean {
    Constant { beta: f64 },
    ZeroShot { alpha: f64, beta: f64 },
}

impl PriorMean {
    pub fn value(&self, p: &Point) -> f64 {
        match *self {
            PriorMean::Constant { beta } => beta,
            PriorMean::ZeroShot { alpha, beta } => alpha * p.zero_shot() + beta,
        }
    }

    fn num_params(&self) -> usize {
        match self {
            PriorMean::Constant { .. } => 1,
            PriorMean::ZeroShot { .. } => 2,
        }
    }

    fn values(&self) -> Vec<f64> {
        match *self {
            PriorMean::Constant { beta } => vec![beta],
            PriorMean::ZeroShot { alpha, beta } => vec![beta, alpha],
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            PriorMean::Constant { .. } => &["mean.beta"],
            PriorMean::ZeroShot { .. } => &["mean.beta", "mean.alpha"],
        }
    }
}

/// Lower and upper bound on the observation noise variance.
pub const NOISE_BOUNDS: (f64, f64) = (1e-8, 10.0);

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub noise: Param,
    pub lbfgs: LbfgsOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 8,
            seed: 0,
            noise: Param::free(1e-2),
            lbfgs: LbfgsOptions::default(),
        }
    }
}

struct Factorized {
    chol: Cholesky,
    weights: Vec<f64>,
    lml: f64,
}

fn factorize(
    kernel_gram: &[f64],
    n: usize,
    noise: f64,
    residual: &[f64],
) -> Result<Factorized> {
    let chol = noisy_cholesky(kernel_gram, n, noise)?;
    finish(chol, residual)
}

fn noisy_cholesky(kernel_gram: &[f64], n: usize, noise: f64) -> Result<Cholesky> {
    let mut k = kernel_gram.to_vec();
    for i in 0..n {
        k[i * n + i] += noise;
    }
    Cholesky::with_jitter(&k, n)
}

fn finish(chol: Cholesky, residual: &[f64]) -> Result<Factorized> {
    let n = residual.len();
    let weights = chol.solve(residual);
    let fit: f64 = residual.iter().zip(&weights).map(|(r, a)| r * a).sum();
    let lml = -0.5 * fit - 0.5 * chol.log_det() - 0.5 * n as f64 * libm::log(core::f64::consts::TAU);
    if !lml.is_finite() {
        return Err(Error::NonFinite(format!("log marginal likelihood {lml}")));
    }
    Ok(Factorized { chol, weights, lml })
}

fn residuals(mean: &PriorMean, points: &[Point], targets: &[f64]) -> Vec<f64> {
    points
        .iter()
        .zip(targets)
        .map(|(p, y)| y - mean.value(p))
        .collect()
}

/// `-1/2 r^T (K + noise I)^-1 r - 1/2 ln|K + noise I| - n/2 ln 2 pi`, with
/// `r = y - m(x)`.
pub fn log_marginal_likelihood(
    kernel: &Kernel,
    mean: &PriorMean,
    noise: f64,
    points: &[Point],
    targets: &[f64],
) -> Result<f64> {
    let g = crate::kernels::gram(kernel, points)?;
    factorize(&g.values, points.len(), noise, &residuals(mean, points, targets)).map(|f| f.lml)
}

/// Mean parameters maximizing the likelihood for a fixed covariance: the
/// generalized least-squares solution. A zero-shot mean whose scores carry no
/// information beyond the intercept keeps its `alpha`.
fn gls_mean(chol: &Cholesky, mean: &PriorMean, points: &[Point], targets: &[f64]) -> PriorMean {
    let ones = vec![1.0; points.len()];
    let ki1 = chol.solve(&ones);
    let s11: f64 = ki1.iter().sum();
    let s1y: f64 = ki1.iter().zip(targets).map(|(a, y)| a * y).sum();
    match *mean {
        PriorMean::Constant { .. } => PriorMean::Constant { beta: s1y / s11 },
        PriorMean::ZeroShot { alpha, .. } => {
            let f0: Vec<f64> = points.iter().map(Point::zero_shot).collect();
            let kif = chol.solve(&f0);
            let sff: f64 = kif.iter().zip(&f0).map(|(a, f)| a * f).sum();
            let s1f: f64 = ki1.iter().zip(&f0).map(|(a, f)| a * f).sum();
            let sfy: f64 = kif.iter().zip(targets).map(|(a, y)| a * y).sum();
            let det = s11 * sff - s1f * s1f;
            if det > 1e-12 * s11 * sff {
                PriorMean::ZeroShot {
                    alpha: (s11 * sfy - s1f * s1y) / det,
                    beta: (sff * s1y - s1f * sfy) / det,
                }
            } else {
                PriorMean::ZeroShot {
                    alpha,
                    beta: (s1y - alpha * s1f) / s11,
                }
            }
        }
    }
}

/// Log marginal likelihood and its gradient. The gradient is ordered as the
/// kernel's transformed hyperparameters, then `ln noise`, then the mean
/// parameters (`beta`, then `alpha` for the zero-shot mean).
pub fn log_marginal_likelihood_grad(
    kernel: &Kernel,
    mean: &PriorMean,
    noise: f64,
    points: &[Point],
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let (g, dks) = gram_with_grad(kernel, points)?;
    lml_grad_from_gram(&g, &dks, mean, noise, points, targets)
}

/// Likelihood with the mean parameters at their exact optimum for this
/// covariance, its gradient over the kernel parameters and `ln noise`, and
/// that optimal mean. The partial derivatives in the mean vanish there, so
/// the gradient needs no correction for the profiling.
fn profiled_lml_grad(
    g: &GramMatrix,
    dks: &[Vec<f64>],
    mean: &PriorMean,
    noise: f64,
    points: &[Point],
    targets: &[f64],
) -> Result<(f64, Vec<f64>, PriorMean)> {
    let chol = noisy_cholesky(&g.values, points.len(), noise)?;
    let mu = gls_mean(&chol, mean, points, targets);
    let f = finish(chol, &residuals(&mu, points, targets))?;
    let (lml, mut grad) = lml_grad_from_factor(f, dks, &mu, noise, points)?;
    grad.truncate(dks.len() + 1);
    Ok((lml, grad, mu))
}

fn lml_grad_from_gram(
    g: &GramMatrix,
    dks: &[Vec<f64>],
    mean: &PriorMean,
    noise: f64,
    points: &[Point],
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let r = residuals(mean, points, targets);
    let f = factorize(&g.values, points.len(), noise, &r)?;
    lml_grad_from_factor(f, dks, mean, noise, points)
}

fn lml_grad_from_factor(
    f: Factorized,
    dks: &[Vec<f64>],
    mean: &PriorMean,
    noise: f64,
    points: &[Point],
) -> Result<(f64, Vec<f64>)> {
    let n = points.len();
    let a = &f.weights;
    let kinv = f.chol.inverse();

    let mut grad = Vec::with_capacity(dks.len() + 1 + mean.num_params());
    // symmetric: off-diagonal terms counted twice
    for dk in dks {
        let mut t = 0.0;
        for i in 0..n {
            let row = i * n;
            let mut off = 0.0;
            for j in 0..i {
                off += (a[i] * a[j] - kinv[row + j]) * dk[row + j];
            }
            t += 2.0 * off + (a[i] * a[i] - kinv[row + i]) * dk[row + i];
        }
        grad.push(0.5 * t);
    }
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let tr: f64 = (0..n).map(|i| kinv[i * n + i]).sum();
    grad.push(0.5 * noise * (aa - tr));
    grad.push(a.iter().sum());
    if let PriorMean::ZeroShot { .. } = mean {
        grad.push(a.iter().zip(points).map(|(ai, p)| ai * p.zero_shot()).sum());
    }
    Ok((f.lml, grad))
}

/// Posterior mean and standard deviation of the latent function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub std: f64,
}

/// A conditioned GP: hyperparameters plus the factorization over its data.
#[derive(Clone, Debug)]
pub struct GpModel {
    kernel: Kernel,
    mean: PriorMean,
    noise: f64,
    points: Vec<Point>,
    chol: Cholesky,
    weights: Vec<f64>,
    lml: f64,
}

/// Box constraint on one transformed coordinate, enforced through a
/// logistic map of the optimizer variable.
#[derive(Clone, Copy)]
struct Bound(f64, f64);

impl Bound {
    fn to_opt(self, t: f64) -> f64 {
        let frac = ((t - self.0) / (self.1 - self.0)).clamp(1e-6, 1.0 - 1e-6);
        libm::log(frac / (1.0 - frac))
    }

    /// Transformed value and its derivative with respect to the optimizer variable.
    fn from_opt(self, u: f64) -> (f64, f64) {
        let s = 1.0 / (1.0 + libm::exp(-u));
        let w = self.1 - self.0;
        (self.0 + w * s, w * s * (1.0 - s))
    }
}

impl GpModel {
    /// Conditions on `points`/`targets` with the given hyperparameters.
    pub fn condition(
        kernel: Kernel,
        mean: PriorMean,
        noise: f64,
        points: &[Point],
        targets: &[f64],
    ) -> Result<Self> {
        if points.is_empty() || points.len() != targets.len() {
            return Err(Error::InvalidInput(format!(
                "{} points, {} targets",
                points.len(),
                targets.len()
            )));
        }
        if !(noise >= 0.0) {
            return Err(Error::Hyperparameter(format!("noise {noise}")));
        }
        kernel.validate()?;
        let g = crate::kernels::gram(&kernel, points)?;
        let f = factorize(&g.values, points.len(), noise, &residuals(&mean, points, targets))?;
        Ok(GpModel {
            kernel,
            mean,
            noise,
            points: points.to_vec(),
            chol: f.chol,
            weights: f.weights,
            lml: f.lml,
        })
    }

    /// Maximizes the log marginal likelihood over the free kernel
    /// hyperparameters, the noise, and the mean parameters. The mean
    /// parameters enter linearly and are solved exactly for every covariance
    /// the optimizer visits. Restart 0 starts from the supplied values; later
    /// restarts draw log-uniformly inside the bounds from `opts.seed`.
    pub fn fit(data: &Dataset, kernel: Kernel, mean: PriorMean, opts: &FitOptions) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 observations, got {}",
                data.len()
            )));
        }
        kernel.validate()?;
        let points = data.points();
        // centered so that a shift of the targets leaves the search unchanged
        let shift = data.targets().iter().sum::<f64>() / data.len() as f64;
        let centered: Vec<f64> = data.targets().iter().map(|y| y - shift).collect();
        let targets = centered.as_slice();
        let infos = kernel.params();
        let nk = infos.len();

        let mut bounds = Vec::with_capacity(nk + 1);
        let mut free = Vec::with_capacity(nk + 1);
        for p in &infos {
            let (lo, hi) = p.kind.bounds();
            bounds.push(Bound(p.kind.to_transformed(lo), p.kind.to_transformed(hi)));
            free.push(!p.fixed);
        }
        bounds.push(Bound(libm::log(NOISE_BOUNDS.0), libm::log(NOISE_BOUNDS.1)));
        free.push(!opts.noise.fixed);
        let free_idx: Vec<usize> = (0..free.len()).filter(|&i| free[i]).collect();

        let mut base: Vec<f64> = kernel.transformed();
        base.push(libm::log(opts.noise.value.max(NOISE_BOUNDS.0)));

        let assemble = |u: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let mut theta = base.clone();
            let mut jac = vec![0.0; free_idx.len()];
            for (k, &i) in free_idx.iter().enumerate() {
                let (t, d) = bounds[i].from_opt(u[k]);
                theta[i] = t;
                jac[k] = d;
            }
            (theta, jac)
        };
        let unpack = |theta: &[f64]| -> Result<(Kernel, f64)> {
            let mut k = kernel.clone();
            k.set_transformed(&theta[..nk])?;
            Ok((k, libm::exp(theta[nk])))
        };

        let cache = PairCache::new(&kernel, points)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut best: Option<GpModel> = None;
        let mut last_err = None;
        for restart in 0..opts.restarts.max(1) {
            let mut start = base.clone();
            if restart > 0 {
                for (i, p) in infos.iter().enumerate() {
                    if !p.fixed {
                        start[i] = match p.kind {
                            ParamKind::Mixture => {
                                ParamKind::Mixture.to_transformed(rng.gen_range(0.05..0.95))
                            }
                            _ => {
                                rng.gen_range(bounds[i].0..bounds[i].1)
                            }
                        };
                    }
                }
                if !opts.noise.fixed {
                    start[nk] = rng.gen_range(bounds[nk].0..bounds[nk].1);
                }
            }
            let u0: Vec<f64> = free_idx.iter().map(|&i| bounds[i].to_opt(start[i])).collect();
            let objective = |u: &[f64]| -> Result<(f64, Vec<f64>)> {
                let (theta, jac) = assemble(u);
                let (k, noise) = unpack(&theta)?;
                let (gram, dks) = gram_with_grad_cached(&k, &cache)?;
                let (lml, g, _) = profiled_lml_grad(&gram, &dks, &mean, noise, points, targets)?;
                let gu = free_idx
                    .iter()
                    .zip(&jac)
                    .map(|(&i, d)| -g[i] * d)
                    .collect();
                Ok((-lml, gu))
            };
            let fitted = minimize(objective, &u0, &opts.lbfgs).and_then(|m| {
                let (k, noise) = unpack(&assemble(&m.x).0)?;
                let g = crate::kernels::gram(&k, points)?;
                let chol = noisy_cholesky(&g.values, points.len(), noise)?;
                let mu = match gls_mean(&chol, &mean, points, targets) {
                    PriorMean::Constant { beta } => PriorMean::Constant { beta: beta + shift },
                    PriorMean::ZeroShot { alpha, beta } => PriorMean::ZeroShot {
                        alpha,
                        beta: beta + shift,
                    },
                };
                GpModel::condition(k, mu, noise, points, data.targets())
            });
            match fitted {
                Ok(model) => {
                    if best.as_ref().map_or(true, |b: &GpModel| model.lml > b.lml) {
                        best = Some(model);
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        best.ok_or_else(|| {
            last_err.unwrap_or_else(|| Error::NonConvergence {
                iterations: 0,
                reason: "no restart produced a finite likelihood".into(),
            })
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn mean(&self) -> &PriorMean {
        &self.mean
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn predict(&self, query: &Point) -> Result<Prediction> {
        let ks = cross(&self.kernel, &self.points, query)?;
        let mean = self.mean.value(query) + ks.iter().zip(&self.weights).map(|(k, a)| k * a).sum::<f64>();
        let v = self.chol.solve_lower(&ks);
        let var = self.kernel.eval(query, query)? - v.iter().map(|x| x * x).sum::<f64>();
        if !mean.is_finite() || !var.is_finite() {
            return Err(Error::NonFinite(format!("prediction mean {mean}, variance {var}")));
        }
        Ok(Prediction {
            mean,
            std: libm::sqrt(var.max(0.0)),
        })
    }

    /// Name/value pairs of every hyperparameter, natural units.
    pub fn hyperparameters(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .kernel
            .params()
            .into_iter()
            .map(|p| (format!("kernel.{}", p.name), p.value))
            .collect();
        out.push(("noise".into(), self.noise));
        for (name, v) in self.mean.param_names().iter().zip(self.mean.values()) {
            out.push((String::from(*name), v));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::EncodingMatrix;
    use crate::kernels::Channel;
    use crate::plm::Pssm;
    use crate::seq::Residue;
    use alloc::sync::Arc;
    use approx::assert_relative_eq;

    fn vec_point(parental: &Arc<Sequence>, x: &[f64]) -> Point {
        Point::new(MutationSet::diff(parental, parental).unwrap()).with_channel(Channel::Embedding, x.to_vec())
    }

    fn line_data(n: usize, offset: f64) -> (Vec<Point>, Vec<f64>) {
        let parental: Arc<Sequence> = Arc::new("A".parse().unwrap());
        let pts = (0..n)
            .map(|i| vec_point(&parental, &[i as f64 * 0.7, (i as f64).sin()]))
            .collect();
        let ys = (0..n).map(|i| (i as f64 * 0.9).cos() + offset).collect();
        (pts, ys)
    }

    #[test]
    fn single_point_standard_normal() {
        let (pts, _) = line_data(1, 0.0);
        let k = Kernel::matern52(alloc::vec![Channel::Embedding]);
        let lml = log_marginal_likelihood(&k, &PriorMean::Constant { beta: 0.3 }, 0.0, &pts, &[0.3]).unwrap();
        assert_relative_eq!(lml, -0.5 * (core::f64::consts::TAU).ln(), epsilon = 1e-15);
    }

    #[test]
    fn zero_shot_cases() {
        let parental: Arc<Sequence> = Arc::new("AC".parse().unwrap());
        let mut rows = alloc::vec![[0.5 / 19.0; 20]; 2];
        let a = Residue::from_char('A').unwrap();
        let c = Residue::from_char('C').unwrap();
        let w = Residue::from_char('W').unwrap();
        rows[0][a.index()] = 0.5;
        rows[1] = [0.7 / 18.0; 20];
        rows[1][c.index()] = 0.2;
        rows[1][w.index()] = 0.1;
        let table = Pssm::new(rows.clone()).unwrap().log_prob_table();
        let empty = MutationSet::diff(&parental, &parental).unwrap();
        assert_eq!(zero_shot_score(&table, &empty).unwrap(), 0.0);
        let double = MutationSet::diff(&parental, &"WW".parse().unwrap()).unwrap();
        let expected = ((0.5f64 / 19.0).ln() - 0.5f64.ln()) + (0.1f64.ln() - 0.2f64.ln());
        assert_relative_eq!(zero_shot_score(&table, &double).unwrap(), expected, epsilon = 1e-14);
        // equal probabilities cancel
        let flat = Pssm::uniform(2).log_prob_table();
        let single = MutationSet::diff(&parental, &"WC".parse().unwrap()).unwrap();
        assert_eq!(zero_shot_score(&flat, &single).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (pts, ys) = line_data(6, 0.4);
        let pts: Vec<Point> = pts
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.with_zero_shot(i as f64 * 0.3 - 0.5))
            .collect();
        let mut k = Kernel::matern52(alloc::vec![Channel::Embedding]);
        k.set_param("lengthscale", 0.8, None).unwrap();
        k.set_param("variance", 1.7, None).unwrap();
        let mean = PriorMean::ZeroShot { alpha: 0.6, beta: -0.2 };
        let noise = 0.05;
        let (_, g) = log_marginal_likelihood_grad(&k, &mean, noise, &pts, &ys).unwrap();
        let mut theta = k.transformed();
        theta.extend([noise.ln(), -0.2, 0.6]);
        let eval = |t: &[f64]| {
            let mut kk = k.clone();
            kk.set_transformed(&t[..2]).unwrap();
            let m = PriorMean::ZeroShot { beta: t[3], alpha: t[4] };
            log_marginal_likelihood(&kk, &m, t[2].exp(), &pts, &ys).unwrap()
        };
        let h = 1e-6;
        for i in 0..theta.len() {
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1.0), "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn duplicate_sequences_rejected() {
        let (pts, ys) = line_data(2, 0.0);
        let s: Sequence = "A".parse().unwrap();
        let err = Dataset::from_parts(alloc::vec![s.clone(), s], pts, ys);
        assert!(matches!(err, Err(Error::DuplicateSequence(_))));
        let (pts, _) = line_data(1, 0.0);
        let mut d = Dataset::new();
        assert!(d.push("A".parse().unwrap(), pts[0].clone(), f64::NAN).is_err());
    }

    #[test]
    fn interpolates_training_points() {
        let (pts, ys) = line_data(6, 0.0);
        let mut k = Kernel::matern52(alloc::vec![Channel::Embedding]);
        k.set_param("lengthscale", 1.5, None).unwrap();
        let m = GpModel::condition(k, PriorMean::Constant { beta: 0.0 }, 1e-12, &pts, &ys).unwrap();
        for (p, y) in pts.iter().zip(&ys) {
            let pr = m.predict(p).unwrap();
            assert!((pr.mean - y).abs() < 1e-4);
            assert!(pr.std < 1e-4);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let (pts, ys) = line_data(5, 0.0);
        let mut k = Kernel::matern52(alloc::vec![Channel::Embedding]);
        k.set_param("variance", 2.0, None).unwrap();
        let m = GpModel::condition(k, PriorMean::Constant { beta: 0.7 }, 1e-3, &pts, &ys).unwrap();
        let parental: Arc<Sequence> = Arc::new("A".parse().unwrap());
        let far = vec_point(&parental, &[1e4, -1e4]);
        let pr = m.predict(&far).unwrap();
        assert_relative_eq!(pr.mean, 0.7, epsilon = 1e-12);
        assert_relative_eq!(pr.std, 2f64.sqrt(), epsilon = 1e-12);
    }

    fn dataset(pts: Vec<Point>, ys: Vec<f64>) -> Dataset {
        let seqs = (0..pts.len())
            .map(|i| {
                let mut s = alloc::vec![Residue::from_index(0).unwrap(); 4];
                let mut k = i;
                for slot in s.iter_mut() {
                    *slot = Residue::from_index(k % 20).unwrap();
                    k /= 20;
                }
                Sequence::new(s)
            })
            .collect();
        Dataset::from_parts(seqs, pts, ys).unwrap()
    }

    #[test]
    fn constant_targets_fit_constant_mean() {
        let (pts, _) = line_data(3, 0.0);
        let d = dataset(pts.clone(), alloc::vec![2.5; 3]);
        let m = GpModel::fit(
            &d,
            Kernel::matern52(alloc::vec![Channel::Embedding]),
            PriorMean::Constant { beta: 0.0 },
            &FitOptions::default(),
        )
        .unwrap();
        let PriorMean::Constant { beta } = *m.mean() else { unreachable!() };
        assert!((beta - 2.5).abs() < 1e-6, "beta {beta}");
        // zero residuals: the likelihood prefers the smallest covariance, so
        // the signal variance collapses toward its lower bound
        let parental: Arc<Sequence> = Arc::new("A".parse().unwrap());
        let far = m.predict(&vec_point(&parental, &[50.0, 50.0])).unwrap();
        assert!(far.std < 0.05, "std {}", far.std);
        assert!((far.mean - 2.5).abs() < 1e-6);
    }

    #[test]
    fn more_restarts_never_worse() {
        let (pts, ys) = line_data(8, 0.0);
        let d = dataset(pts, ys);
        let k = Kernel::matern52(alloc::vec![Channel::Embedding]);
        let fit = |r| {
            GpModel::fit(
                &d,
                k.clone(),
                PriorMean::Constant { beta: 0.0 },
                &FitOptions {
                    restarts: r,
                    seed: 4,
                    ..Default::default()
                },
            )
            .unwrap()
            .log_marginal_likelihood()
        };
        assert!(fit(5) >= fit(1));
    }

    #[test]
    fn fit_needs_two_points() {
        let (pts, ys) = line_data(1, 0.0);
        let d = dataset(pts, ys);
        assert!(GpModel::fit(
            &d,
            Kernel::tanimoto(Channel::OneHot),
            PriorMean::Constant { beta: 0.0 },
            &FitOptions::default()
        )
        .is_err());
    }

    #[test]
    fn shift_equivariance() {
        let (pts, ys) = line_data(7, 0.0);
        let shifted: Vec<f64> = ys.iter().map(|y| y + 3.25).collect();
        let k = Kernel::matern52(alloc::vec![Channel::Embedding]);
        let opts = FitOptions {
            restarts: 3,
            seed: 1,
            ..Default::default()
        };
        let m0 = GpModel::fit(&dataset(pts.clone(), ys), k.clone(), PriorMean::Constant { beta: 0.0 }, &opts).unwrap();
        let m1 = GpModel::fit(&dataset(pts.clone(), shifted), k, PriorMean::Constant { beta: 0.0 }, &opts).unwrap();
        let (PriorMean::Constant { beta: b0 }, PriorMean::Constant { beta: b1 }) = (*m0.mean(), *m1.mean()) else {
            unreachable!()
        };
        assert!((b1 - b0 - 3.25).abs() < 1e-8, "{b0} {b1} {:?} {:?}", m0.hyperparameters(), m1.hyperparameters());
        let parental: Arc<Sequence> = Arc::new("A".parse().unwrap());
        for q in [[0.1, 0.2], [3.0, -0.5], [10.0, 1.0]] {
            let (p0, p1) = (
                m0.predict(&vec_point(&parental, &q)).unwrap(),
                m1.predict(&vec_point(&parental, &q)).unwrap(),
            );
            assert!((p1.mean - p0.mean - 3.25).abs() < 1e-8);
            assert!((p1.std - p0.std).abs() < 1e-8);
        }
    }

    #[test]
    fn one_hot_tanimoto_fit_runs() {
        let parental: Arc<Sequence> = Arc::new("EVQLVESGGG".parse().unwrap());
        let oh = EncodingMatrix::one_hot();
        let mut seqs = Vec::new();
        let mut pts = Vec::new();
        let mut ys = Vec::new();
        for i in 0..12 {
            let s = parental
                .mutate(i % 10, Residue::from_index((i * 7) % 20).unwrap())
                .unwrap()
                .mutate((i * 3) % 10, Residue::from_index((i * 11) % 20).unwrap())
                .unwrap();
            if seqs.contains(&s) {
                continue;
            }
            pts.push(Point::new(MutationSet::diff(&parental, &s).unwrap()).with_channel(Channel::OneHot, oh.encode(&s)));
            ys.push(i as f64 * 0.1);
            seqs.push(s);
        }
        let d = Dataset::from_parts(seqs, pts, ys).unwrap();
        let m = GpModel::fit(
            &d,
            Kernel::tanimoto(Channel::OneHot),
            PriorMean::Constant { beta: 0.0 },
            &FitOptions::default(),
        )
        .unwrap();
        assert!(m.log_marginal_likelihood().is_finite());
        let names: Vec<String> = m.hyperparameters().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["kernel.variance", "noise", "mean.beta"]);
    }
}
