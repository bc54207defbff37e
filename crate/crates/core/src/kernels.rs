//! Covariance functions over sequence feature points.
//!
//! Every hyperparameter is positive (stored and optimized on a log scale) or a
//! mixture weight in (0, 1) (optimized on a logit scale). `eval_grad` returns
//! derivatives with respect to those transformed coordinates, in the order
//! reported by [`Kernel::params`].

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::seq::MutationSet;
use crate::structure::StructureContext;

/// A named feature vector carried by a [`Point`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    OneHot,
    Blosum,
    Embedding,
    Coords,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::OneHot,
        Channel::Blosum,
        Channel::Embedding,
        Channel::Coords,
    ];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::OneHot => "onehot",
            Channel::Blosum => "blosum",
            Channel::Embedding => "embedding",
            Channel::Coords => "coords",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Feature {
    values: Vec<f64>,
    sq_norm: f64,
    /// Indices of nonzero entries when the vector is sparse enough.
    support: Option<Vec<u32>>,
}

impl Feature {
    fn new(values: Vec<f64>) -> Self {
        let sq_norm = dot(&values, &values);
        let nnz = values.iter().filter(|v| **v != 0.0).count();
        let support = (nnz * 4 <= values.len()).then(|| {
            (0..values.len() as u32)
                .filter(|&i| values[i as usize] != 0.0)
                .collect()
        });
        Feature {
            values,
            sq_norm,
            support,
        }
    }

    fn dot(&self, other: &Feature) -> f64 {
        match (&self.support, &other.support) {
            (Some(s), _) => s.iter().map(|&i| self.values[i as usize] * other.values[i as usize]).sum(),
            (None, Some(s)) => s.iter().map(|&i| self.values[i as usize] * other.values[i as usize]).sum(),
            (None, None) => dot(&self.values, &other.values),
        }
    }
}

/// Kernel input: the substitutions against the parental plus whichever
/// feature channels the model needs, and the zero-shot score for the prior
/// mean.
#[derive(Clone, Debug)]
pub struct Point {
    mutations: MutationSet,
    channels: [Option<Feature>; 4],
    zero_shot: f64,
}

impl Point {
    pub fn new(mutations: MutationSet) -> Self {
        Point {
            mutations,
            channels: [None, None, None, None],
            zero_shot: 0.0,
        }
    }

    pub fn with_channel(mut self, channel: Channel, values: Vec<f64>) -> Self {
        self.set_channel(channel, values);
        self
    }

    pub fn set_channel(&mut self, channel: Channel, values: Vec<f64>) {
        self.channels[channel.slot()] = Some(Feature::new(values));
    }

    pub fn with_zero_shot(mut self, score: f64) -> Self {
        self.zero_shot = score;
        self
    }

    pub fn mutations(&self) -> &MutationSet {
        &self.mutations
    }

    pub fn zero_shot(&self) -> f64 {
        self.zero_shot
    }

    pub fn channel(&self, channel: Channel) -> Result<&[f64]> {
        self.feature(channel).map(|f| f.values.as_slice())
    }

    pub fn has_channel(&self, channel: Channel) -> bool {
        self.channels[channel.slot()].is_some()
    }

    fn feature(&self, channel: Channel) -> Result<&Feature> {
        self.channels[channel.slot()]
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("point lacks {} features", channel.name())))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(a: &[f64], b: &[f64], channel: Channel) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "{} dimension mismatch: {} vs {}",
            channel.name(),
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Tanimoto similarity `var * <u,v> / (|u|² + |v|² - <u,v>)`.
pub fn tanimoto(u: &[f64], v: &[f64], variance: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    tanimoto_parts(dot(u, v), dot(u, u), dot(v, v), variance)
}

fn tanimoto_parts(uv: f64, uu: f64, vv: f64, variance: f64) -> Result<f64> {
    let denom = uu + vv - uv;
    if uu == 0.0 && vv == 0.0 {
        return Err(Error::InvalidInput("tanimoto of two zero vectors".into()));
    }
    Ok(variance * uv / denom)
}

/// Matérn-5/2 in terms of `r = |u - v| / lengthscale`.
pub fn matern52_r(r: f64, variance: f64) -> f64 {
    let s5r = libm::sqrt(5.0) * r;
    variance * (1.0 + s5r + 5.0 * r * r / 3.0) * libm::exp(-s5r)
}

pub fn matern52(u: &[f64], v: &[f64], lengthscale: f64, variance: f64) -> Result<f64> {
    if !(lengthscale > 0.0) {
        return Err(Error::Hyperparameter(format!(
            "lengthscale must be positive, got {lengthscale}"
        )));
    }
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(matern52_r(libm::sqrt(d2) / lengthscale, variance))
}

/// A hyperparameter value with its fit/frozen flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Param {
    pub value: f64,
    pub fixed: bool,
}

impl Param {
    pub const fn free(value: f64) -> Self {
        Param {
            value,
            fixed: false,
        }
    }

    pub const fn fixed(value: f64) -> Self {
        Param { value, fixed: true }
    }
}

/// How a hyperparameter is mapped to the optimizer's scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Variance,
    Lengthscale,
    Weight,
    Rate,
    Mixture,
}

impl ParamKind {
    /// Bounds in natural units.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ParamKind::Variance | ParamKind::Weight => (1e-3, 1e3),
            ParamKind::Lengthscale | ParamKind::Rate => (1e-3, 1e3),
            ParamKind::Mixture => (1e-4, 1.0 - 1e-4),
        }
    }

    pub fn to_transformed(self, value: f64) -> f64 {
        match self {
            ParamKind::Mixture => libm::log(value / (1.0 - value)),
            _ => libm::log(value),
        }
    }

    pub fn from_transformed(self, t: f64) -> f64 {
        match self {
            ParamKind::Mixture => 1.0 / (1.0 + libm::exp(-t)),
            _ => libm::exp(t),
        }
    }

    fn validate(self, name: &str, value: f64) -> Result<()> {
        let ok = match self {
            ParamKind::Mixture => value > 0.0 && value < 1.0,
            _ => value > 0.0 && value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Hyperparameter(format!("{name} = {value} out of range")))
        }
    }
}

/// Descriptor of one hyperparameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
    pub value: f64,
    pub fixed: bool,
}

/// Structure-kernel rates for the Kermut composite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructRates {
    pub gamma_h: f64,
    pub gamma_p: f64,
    pub gamma_d: f64,
}

/// Mutation-pair structure kernel
/// `sum_{i in a} sum_{j in b} scale * k_H * k_p * k_d`, with
/// `k_H = exp(-gamma_h * Hellinger(site_i, site_j))`,
/// `k_p = exp(-gamma_p * |p_i(to_i) - p_j(to_j)|)` and
/// `k_d = exp(-gamma_d * dist(i, j))`.
pub fn kermut_struct(
    a: &MutationSet,
    b: &MutationSet,
    ctx: &StructureContext,
    scale: f64,
    rates: StructRates,
) -> Result<f64> {
    let mut grad = [0.0; 3];
    kermut_struct_grad(a, b, ctx, rates, &mut grad).map(|s| scale * s)
}

/// Unit-scale structure kernel plus its derivatives with respect to
/// `ln gamma_h`, `ln gamma_p`, `ln gamma_d`.
fn kermut_struct_grad(
    a: &MutationSet,
    b: &MutationSet,
    ctx: &StructureContext,
    rates: StructRates,
    grad: &mut [f64; 3],
) -> Result<f64> {
    if !a.same_parental(b) {
        return Err(Error::ParentalMismatch);
    }
    let l = ctx.len();
    let mut total = 0.0;
    *grad = [0.0; 3];
    for ma in a.entries() {
        if ma.position >= l {
            return Err(Error::PositionOutOfRange {
                position: ma.position,
                len: l,
            });
        }
        let pa = ctx.prob(ma.position, ma.to);
        for mb in b.entries() {
            if mb.position >= l {
                return Err(Error::PositionOutOfRange {
                    position: mb.position,
                    len: l,
                });
            }
            let h = ctx.hellinger(ma.position, mb.position);
            let dp = (pa - ctx.prob(mb.position, mb.to)).abs();
            let d = ctx.distance(ma.position, mb.position);
            let t = libm::exp(-rates.gamma_h * h - rates.gamma_p * dp - rates.gamma_d * d);
            total += t;
            grad[0] -= rates.gamma_h * h * t;
            grad[1] -= rates.gamma_p * dp * t;
            grad[2] -= rates.gamma_d * d * t;
        }
    }
    Ok(total)
}

/// Kermut composite `variance * (pi * k_struct + (1 - pi) * k_seq)` with the
/// structure scale fixed to 1.
#[derive(Clone, Debug)]
pub struct Kermut {
    pub context: Arc<StructureContext>,
    pub sequence: Box<Kernel>,
    pub variance: Param,
    pub pi: Param,
    pub gamma_h: Param,
    pub gamma_p: Param,
    pub gamma_d: Param,
}

impl Kermut {
    pub fn rates(&self) -> StructRates {
        StructRates {
            gamma_h: self.gamma_h.value,
            gamma_p: self.gamma_p.value,
            gamma_d: self.gamma_d.value,
        }
    }
}

/// Maps Kermut's original weighting `s2 * pi * k_struct + (1 - pi) * k_seq`
/// to the rescaled form `v * (p * k_struct + (1 - p) * k_seq)`.
pub fn kermut_rescaled_from_original(sigma2: f64, pi: f64) -> (f64, f64) {
    let struct_coef = sigma2 * pi;
    let seq_coef = 1.0 - pi;
    let v = struct_coef + seq_coef;
    (v, struct_coef / v)
}

/// Inverse of [`kermut_rescaled_from_original`]; exists only when the
/// rescaled sequence coefficient `v * (1 - p)` is below 1.
pub fn kermut_original_from_rescaled(variance: f64, pi: f64) -> Option<(f64, f64)> {
    let seq_coef = variance * (1.0 - pi);
    if !(seq_coef < 1.0) {
        return None;
    }
    let pi_o = 1.0 - seq_coef;
    Some((variance * pi / pi_o, pi_o))
}

/// Kermut in its original weighting, for comparison with the rescaled form.
pub fn kermut_original(
    a: &Point,
    b: &Point,
    ctx: &StructureContext,
    sequence: &Kernel,
    sigma2: f64,
    pi: f64,
    rates: StructRates,
) -> Result<f64> {
    let s = kermut_struct(a.mutations(), b.mutations(), ctx, 1.0, rates)?;
    let q = sequence.eval(a, b)?;
    Ok(sigma2 * pi * s + (1.0 - pi) * q)
}

/// Covariance function tree.
#[derive(Clone, Debug)]
pub enum Kernel {
    Tanimoto {
        channel: Channel,
        variance: Param,
    },
    /// Matérn-5/2 over the concatenation of `channels`, one shared lengthscale.
    Matern52 {
        channels: Vec<Channel>,
        lengthscale: Param,
        variance: Param,
    },
    SqExp {
        channels: Vec<Channel>,
        lengthscale: Param,
        variance: Param,
    },
    /// `sum_i w_i k_i` with nonnegative weights.
    Sum {
        weights: Vec<Param>,
        children: Vec<Kernel>,
    },
    Product(Vec<Kernel>),
    Kermut(Kermut),
}

impl Kernel {
    pub fn tanimoto(channel: Channel) -> Self {
        Kernel::Tanimoto {
            channel,
            variance: Param::free(1.0),
        }
    }

    pub fn matern52(channels: Vec<Channel>) -> Self {
        Kernel::Matern52 {
            channels,
            lengthscale: Param::free(1.0),
            variance: Param::free(1.0),
        }
    }

    pub fn sqexp(channels: Vec<Channel>) -> Self {
        Kernel::SqExp {
            channels,
            lengthscale: Param::free(1.0),
            variance: Param::free(1.0),
        }
    }

    /// Weighted sum whose children carry unit, frozen variances so the
    /// weights alone set the scale of each term.
    pub fn weighted_sum(children: Vec<Kernel>) -> Self {
        let children: Vec<Kernel> = children.into_iter().map(Kernel::unit_variance).collect();
        Kernel::Sum {
            weights: vec![Param::free(1.0); children.len()],
            children,
        }
    }

    /// Kermut composite over `context` with a sequence kernel of unit variance.
    pub fn kermut(context: Arc<StructureContext>, sequence: Kernel) -> Self {
        Kernel::Kermut(Kermut {
            context,
            sequence: Box::new(sequence.unit_variance()),
            variance: Param::free(1.0),
            pi: Param::free(0.5),
            gamma_h: Param::free(1.0),
            gamma_p: Param::free(1.0),
            gamma_d: Param::free(0.1),
        })
    }

    /// Freezes a leaf's variance at 1.
    pub fn unit_variance(mut self) -> Self {
        match &mut self {
            Kernel::Tanimoto { variance, .. }
            | Kernel::Matern52 { variance, .. }
            | Kernel::SqExp { variance, .. } => *variance = Param::fixed(1.0),
            Kernel::Kermut(k) => k.variance = Param::fixed(1.0),
            Kernel::Sum { .. } | Kernel::Product(_) => {}
        }
        self
    }

    /// Channels any leaf reads.
    pub fn channels(&self) -> Vec<Channel> {
        let mut out = Vec::new();
        self.collect_channels(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_channels(&self, out: &mut Vec<Channel>) {
        match self {
            Kernel::Tanimoto { channel, .. } => out.push(*channel),
            Kernel::Matern52 { channels, .. } | Kernel::SqExp { channels, .. } => {
                out.extend_from_slice(channels)
            }
            Kernel::Sum { children, .. } | Kernel::Product(children) => {
                children.iter().for_each(|c| c.collect_channels(out))
            }
            Kernel::Kermut(k) => k.sequence.collect_channels(out),
        }
    }

    /// Hyperparameters in gradient order.
    pub fn params(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        self.visit(&mut String::new(), &mut |name, kind, p| {
            out.push(ParamInfo {
                name: String::from(name),
                kind,
                value: p.value,
                fixed: p.fixed,
            })
        });
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut String::new(), &mut |_, _, _| n += 1);
        n
    }

    fn visit(&self, prefix: &mut String, f: &mut dyn FnMut(&str, ParamKind, &Param)) {
        let mut emit = |prefix: &mut String, name: &str, kind, p: &Param| {
            let len = prefix.len();
            prefix.push_str(name);
            f(prefix, kind, p);
            prefix.truncate(len);
        };
        match self {
            Kernel::Tanimoto { variance, .. } => emit(prefix, "variance", ParamKind::Variance, variance),
            Kernel::Matern52 {
                lengthscale,
                variance,
                ..
            }
            | Kernel::SqExp {
                lengthscale,
                variance,
                ..
            } => {
                emit(prefix, "lengthscale", ParamKind::Lengthscale, lengthscale);
                emit(prefix, "variance", ParamKind::Variance, variance);
            }
            Kernel::Sum { weights, children } => {
                for (i, w) in weights.iter().enumerate() {
                    emit(prefix, &format!("w{i}"), ParamKind::Weight, w);
                }
                for (i, c) in children.iter().enumerate() {
                    let len = prefix.len();
                    prefix.push_str(&format!("k{i}."));
                    c.visit(prefix, f);
                    prefix.truncate(len);
                }
            }
            Kernel::Product(children) => {
                for (i, c) in children.iter().enumerate() {
                    let len = prefix.len();
                    prefix.push_str(&format!("k{i}."));
                    c.visit(prefix, f);
                    prefix.truncate(len);
                }
            }
            Kernel::Kermut(k) => {
                emit(prefix, "variance", ParamKind::Variance, &k.variance);
                emit(prefix, "pi", ParamKind::Mixture, &k.pi);
                emit(prefix, "gamma_h", ParamKind::Rate, &k.gamma_h);
                emit(prefix, "gamma_p", ParamKind::Rate, &k.gamma_p);
                emit(prefix, "gamma_d", ParamKind::Rate, &k.gamma_d);
                let len = prefix.len();
                prefix.push_str("seq.");
                k.sequence.visit(prefix, f);
                prefix.truncate(len);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut Param)) {
        match self {
            Kernel::Tanimoto { variance, .. } => f(ParamKind::Variance, variance),
            Kernel::Matern52 {
                lengthscale,
                variance,
                ..
            }
            | Kernel::SqExp {
                lengthscale,
                variance,
                ..
            } => {
                f(ParamKind::Lengthscale, lengthscale);
                f(ParamKind::Variance, variance);
            }
            Kernel::Sum { weights, children } => {
                weights.iter_mut().for_each(|w| f(ParamKind::Weight, w));
                children.iter_mut().for_each(|c| c.visit_mut(f));
            }
            Kernel::Product(children) => children.iter_mut().for_each(|c| c.visit_mut(f)),
            Kernel::Kermut(k) => {
                f(ParamKind::Variance, &mut k.variance);
                f(ParamKind::Mixture, &mut k.pi);
                f(ParamKind::Rate, &mut k.gamma_h);
                f(ParamKind::Rate, &mut k.gamma_p);
                f(ParamKind::Rate, &mut k.gamma_d);
                k.sequence.visit_mut(f);
            }
        }
    }

    /// Hyperparameters on the optimizer scale (log or logit).
    pub fn transformed(&self) -> Vec<f64> {
        self.params()
            .iter()
            .map(|p| p.kind.to_transformed(p.value))
            .collect()
    }

    pub fn set_transformed(&mut self, values: &[f64]) -> Result<()> {
        let n = self.num_params();
        if values.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: values.len(),
            });
        }
        let mut i = 0;
        self.visit_mut(&mut |kind, p| {
            p.value = kind.from_transformed(values[i]);
            i += 1;
        });
        Ok(())
    }

    /// Sets a parameter by name in natural units, optionally freezing it.
    pub fn set_param(&mut self, name: &str, value: f64, fixed: Option<bool>) -> Result<()> {
        let infos = self.params();
        let idx = infos
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::Hyperparameter(format!("unknown hyperparameter {name:?}")))?;
        infos[idx].kind.validate(name, value)?;
        let mut i = 0;
        self.visit_mut(&mut |_, p| {
            if i == idx {
                p.value = value;
                if let Some(fx) = fixed {
                    p.fixed = fx;
                }
            }
            i += 1;
        });
        Ok(())
    }

    /// Checks ranges of every hyperparameter.
    pub fn validate(&self) -> Result<()> {
        self.params()
            .iter()
            .try_for_each(|p| p.kind.validate(&p.name, p.value))
    }

    pub fn eval(&self, a: &Point, b: &Point) -> Result<f64> {
        match self {
            Kernel::Tanimoto { channel, variance } => {
                let (fa, fb) = (a.feature(*channel)?, b.feature(*channel)?);
                check_dims(&fa.values, &fb.values, *channel)?;
                tanimoto_parts(fa.dot(fb), fa.sq_norm, fb.sq_norm, variance.value)
            }
            Kernel::Matern52 {
                channels,
                lengthscale,
                variance,
            } => {
                let r = libm::sqrt(sq_dist(channels, a, b)?) / lengthscale.value;
                Ok(matern52_r(r, variance.value))
            }
            Kernel::SqExp {
                channels,
                lengthscale,
                variance,
            } => {
                let r2 = sq_dist(channels, a, b)? / (lengthscale.value * lengthscale.value);
                Ok(variance.value * libm::exp(-0.5 * r2))
            }
            Kernel::Sum { weights, children } => {
                let mut s = 0.0;
                for (w, c) in weights.iter().zip(children) {
                    s += w.value * c.eval(a, b)?;
                }
                Ok(s)
            }
            Kernel::Product(children) => {
                let mut p = 1.0;
                for c in children {
                    p *= c.eval(a, b)?;
                }
                Ok(p)
            }
            Kernel::Kermut(k) => {
                let s = kermut_struct(a.mutations(), b.mutations(), &k.context, 1.0, k.rates())?;
                let q = k.sequence.eval(a, b)?;
                Ok(k.variance.value * (k.pi.value * s + (1.0 - k.pi.value) * q))
            }
        }
    }

    /// Value and gradient with respect to the transformed hyperparameters;
    /// `grad` must have length [`Kernel::num_params`].
    pub fn eval_grad(&self, a: &Point, b: &Point, grad: &mut [f64]) -> Result<f64> {
        match self {
            Kernel::Tanimoto { .. } => {
                let k = self.eval(a, b)?;
                grad[0] = k;
                Ok(k)
            }
            Kernel::Matern52 {
                channels,
                lengthscale,
                variance,
            } => {
                let r = libm::sqrt(sq_dist(channels, a, b)?) / lengthscale.value;
                let s5r = libm::sqrt(5.0) * r;
                let e = libm::exp(-s5r);
                let k = variance.value * (1.0 + s5r + 5.0 * r * r / 3.0) * e;
                grad[0] = variance.value * (5.0 / 3.0) * r * r * (1.0 + s5r) * e;
                grad[1] = k;
                Ok(k)
            }
            Kernel::SqExp {
                channels,
                lengthscale,
                variance,
            } => {
                let r2 = sq_dist(channels, a, b)? / (lengthscale.value * lengthscale.value);
                let k = variance.value * libm::exp(-0.5 * r2);
                grad[0] = k * r2;
                grad[1] = k;
                Ok(k)
            }
            Kernel::Sum { weights, children } => {
                let m = weights.len();
                let mut total = 0.0;
                let mut offset = m;
                for (i, (w, c)) in weights.iter().zip(children).enumerate() {
                    let np = c.num_params();
                    let g = &mut grad[offset..offset + np];
                    let kc = c.eval_grad(a, b, g)?;
                    g.iter_mut().for_each(|x| *x *= w.value);
                    grad[i] = w.value * kc;
                    total += w.value * kc;
                    offset += np;
                }
                Ok(total)
            }
            Kernel::Product(children) => {
                let mut values = Vec::with_capacity(children.len());
                let mut ranges = Vec::with_capacity(children.len());
                let mut offset = 0;
                for c in children {
                    let np = c.num_params();
                    values.push(c.eval_grad(a, b, &mut grad[offset..offset + np])?);
                    ranges.push(offset..offset + np);
                    offset += np;
                }
                for (i, range) in ranges.into_iter().enumerate() {
                    let others: f64 = values
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, v)| v)
                        .product();
                    grad[range].iter_mut().for_each(|g| *g *= others);
                }
                Ok(values.iter().product())
            }
            Kernel::Kermut(k) => {
                let mut sg = [0.0; 3];
                let s = kermut_struct_grad(a.mutations(), b.mutations(), &k.context, k.rates(), &mut sg)?;
                let np = k.sequence.num_params();
                let q = k.sequence.eval_grad(a, b, &mut grad[5..5 + np])?;
                let (v, pi) = (k.variance.value, k.pi.value);
                let value = v * (pi * s + (1.0 - pi) * q);
                grad[0] = value;
                grad[1] = v * (s - q) * pi * (1.0 - pi);
                grad[2] = v * pi * sg[0];
                grad[3] = v * pi * sg[1];
                grad[4] = v * pi * sg[2];
                grad[5..5 + np]
                    .iter_mut()
                    .for_each(|g| *g *= v * (1.0 - pi));
                Ok(value)
            }
        }
    }
}

fn sq_dist(channels: &[Channel], a: &Point, b: &Point) -> Result<f64> {
    let mut s = 0.0;
    for &c in channels {
        let (u, v) = (a.channel(c)?, b.channel(c)?);
        check_dims(u, v, c)?;
        s += u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(s)
}

/// Symmetric kernel matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl GramMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

pub fn gram(kernel: &Kernel, points: &[Point]) -> Result<GramMatrix> {
    if points.is_empty() {
        return Err(Error::InvalidInput("gram of an empty input list".into()));
    }
    let n = points.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = kernel.eval(&points[i], &points[j])?;
            values[i * n + j] = k;
            values[j * n + i] = k;
        }
    }
    Ok(GramMatrix { n, values })
}

/// Gram matrix plus one derivative matrix per hyperparameter.
pub fn gram_with_grad(kernel: &Kernel, points: &[Point]) -> Result<(GramMatrix, Vec<Vec<f64>>)> {
    let n = points.len();
    let p = kernel.num_params();
    let mut values = vec![0.0; n * n];
    let mut grads = vec![vec![0.0; n * n]; p];
    let mut g = vec![0.0; p];
    for i in 0..n {
        for j in 0..=i {
            let k = kernel.eval_grad(&points[i], &points[j], &mut g)?;
            values[i * n + j] = k;
            values[j * n + i] = k;
            for (d, gv) in grads.iter_mut().zip(&g) {
                d[i * n + j] = *gv;
                d[j * n + i] = *gv;
            }
        }
    }
    Ok((GramMatrix { n, values }, grads))
}

/// Kernel values between each of `points` and `query`.
pub fn cross(kernel: &Kernel, points: &[Point], query: &Point) -> Result<Vec<f64>> {
    points.iter().map(|p| kernel.eval(p, query)).collect()
}

/// Hyperparameter-independent pair data for every leaf of a kernel over a
/// fixed point set, in pre-order. Pairs are indexed `i * (i + 1) / 2 + j`
/// for `j <= i`.
#[derive(Clone, Debug)]
pub struct PairCache {
    n: usize,
    leaves: Vec<LeafPairs>,
}

#[derive(Clone, Debug)]
enum LeafPairs {
    /// Unit-variance Tanimoto value or squared distance.
    Scalar(Vec<f64>),
    /// `(hellinger, |dp|, distance)` terms; pair `k` owns
    /// `terms[offsets[k]..offsets[k + 1]]`.
    Kermut { offsets: Vec<u32>, terms: Vec<[f64; 3]> },
}

fn tri(n: usize) -> usize {
    n * (n + 1) / 2
}

impl PairCache {
    pub fn new(kernel: &Kernel, points: &[Point]) -> Result<Self> {
        let mut leaves = Vec::new();
        Self::build(kernel, points, &mut leaves)?;
        Ok(PairCache {
            n: points.len(),
            leaves,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn build(kernel: &Kernel, points: &[Point], out: &mut Vec<LeafPairs>) -> Result<()> {
        let n = points.len();
        match kernel {
            Kernel::Tanimoto { channel, .. } => {
                let mut v = Vec::with_capacity(tri(n));
                for i in 0..n {
                    let fa = points[i].feature(*channel)?;
                    for pj in &points[..=i] {
                        let fb = pj.feature(*channel)?;
                        check_dims(&fa.values, &fb.values, *channel)?;
                        v.push(tanimoto_parts(fa.dot(fb), fa.sq_norm, fb.sq_norm, 1.0)?);
                    }
                }
                out.push(LeafPairs::Scalar(v));
            }
            Kernel::Matern52 { channels, .. } | Kernel::SqExp { channels, .. } => {
                let mut v = Vec::with_capacity(tri(n));
                for i in 0..n {
                    for pj in &points[..=i] {
                        v.push(sq_dist(channels, &points[i], pj)?);
                    }
                }
                out.push(LeafPairs::Scalar(v));
            }
            Kernel::Sum { children, .. } | Kernel::Product(children) => {
                for c in children {
                    Self::build(c, points, out)?;
                }
            }
            Kernel::Kermut(k) => {
                let ctx = &k.context;
                let l = ctx.len();
                let mut offsets = Vec::with_capacity(tri(n) + 1);
                let mut terms = Vec::new();
                offsets.push(0u32);
                for i in 0..n {
                    let a = points[i].mutations();
                    for pj in &points[..=i] {
                        let b = pj.mutations();
                        if !a.same_parental(b) {
                            return Err(Error::ParentalMismatch);
                        }
                        for ma in a.entries() {
                            for mb in b.entries() {
                                let bad = if ma.position >= l { ma.position } else { mb.position };
                                if bad >= l {
                                    return Err(Error::PositionOutOfRange { position: bad, len: l });
                                }
                                let dp = (ctx.prob(ma.position, ma.to) - ctx.prob(mb.position, mb.to)).abs();
                                terms.push([
                                    ctx.hellinger(ma.position, mb.position),
                                    dp,
                                    ctx.distance(ma.position, mb.position),
                                ]);
                            }
                        }
                        offsets.push(terms.len() as u32);
                    }
                }
                out.push(LeafPairs::Kermut { offsets, terms });
                Self::build(&k.sequence, points, out)?;
            }
        }
        Ok(())
    }
}

impl Kernel {
    /// Same as [`Kernel::eval_grad`] for pair `pair` of a [`PairCache`].
    fn eval_grad_cached(&self, cache: &PairCache, leaf: &mut usize, pair: usize, grad: &mut [f64]) -> f64 {
        let data = &cache.leaves[*leaf];
        match self {
            Kernel::Tanimoto { variance, .. } => {
                *leaf += 1;
                let LeafPairs::Scalar(v) = data else { unreachable!() };
                let k = variance.value * v[pair];
                grad[0] = k;
                k
            }
            Kernel::Matern52 {
                lengthscale,
                variance,
                ..
            } => {
                *leaf += 1;
                let LeafPairs::Scalar(v) = data else { unreachable!() };
                let r = libm::sqrt(v[pair]) / lengthscale.value;
                let s5r = libm::sqrt(5.0) * r;
                let e = libm::exp(-s5r);
                let k = variance.value * (1.0 + s5r + 5.0 * r * r / 3.0) * e;
                grad[0] = variance.value * (5.0 / 3.0) * r * r * (1.0 + s5r) * e;
                grad[1] = k;
                k
            }
            Kernel::SqExp {
                lengthscale,
                variance,
                ..
            } => {
                *leaf += 1;
                let LeafPairs::Scalar(v) = data else { unreachable!() };
                let r2 = v[pair] / (lengthscale.value * lengthscale.value);
                let k = variance.value * libm::exp(-0.5 * r2);
                grad[0] = k * r2;
                grad[1] = k;
                k
            }
            Kernel::Sum { weights, children } => {
                let m = weights.len();
                let mut total = 0.0;
                let mut offset = m;
                for (i, (w, c)) in weights.iter().zip(children).enumerate() {
                    let np = c.num_params();
                    let g = &mut grad[offset..offset + np];
                    let kc = c.eval_grad_cached(cache, leaf, pair, g);
                    g.iter_mut().for_each(|x| *x *= w.value);
                    grad[i] = w.value * kc;
                    total += w.value * kc;
                    offset += np;
                }
                total
            }
            Kernel::Product(children) => {
                let mut values = Vec::with_capacity(children.len());
                let mut ranges = Vec::with_capacity(children.len());
                let mut offset = 0;
                for c in children {
                    let np = c.num_params();
                    values.push(c.eval_grad_cached(cache, leaf, pair, &mut grad[offset..offset + np]));
                    ranges.push(offset..offset + np);
                    offset += np;
                }
                for (i, range) in ranges.into_iter().enumerate() {
                    let others: f64 = values
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, v)| v)
                        .product();
                    grad[range].iter_mut().for_each(|g| *g *= others);
                }
                values.iter().product()
            }
            Kernel::Kermut(k) => {
                *leaf += 1;
                let LeafPairs::Kermut { offsets, terms } = data else { unreachable!() };
                let rates = k.rates();
                let mut s = 0.0;
                let mut sg = [0.0; 3];
                for t in &terms[offsets[pair] as usize..offsets[pair + 1] as usize] {
                    let e = libm::exp(-rates.gamma_h * t[0] - rates.gamma_p * t[1] - rates.gamma_d * t[2]);
                    s += e;
                    sg[0] -= rates.gamma_h * t[0] * e;
                    sg[1] -= rates.gamma_p * t[1] * e;
                    sg[2] -= rates.gamma_d * t[2] * e;
                }
                let np = k.sequence.num_params();
                let q = k.sequence.eval_grad_cached(cache, leaf, pair, &mut grad[5..5 + np]);
                let (v, pi) = (k.variance.value, k.pi.value);
                let value = v * (pi * s + (1.0 - pi) * q);
                grad[0] = value;
                grad[1] = v * (s - q) * pi * (1.0 - pi);
                grad[2] = v * pi * sg[0];
                grad[3] = v * pi * sg[1];
                grad[4] = v * pi * sg[2];
                grad[5..5 + np]
                    .iter_mut()
                    .for_each(|g| *g *= v * (1.0 - pi));
                value
            }
        }
    }
}

/// [`gram_with_grad`] over the points a [`PairCache`] was built from; the
/// cache must come from a kernel with the same tree shape.
pub fn gram_with_grad_cached(kernel: &Kernel, cache: &PairCache) -> Result<(GramMatrix, Vec<Vec<f64>>)> {
    let n = cache.n;
    let p = kernel.num_params();
    let mut values = vec![0.0; n * n];
    let mut grads = vec![vec![0.0; n * n]; p];
    let mut g = vec![0.0; p];
    let mut pair = 0;
    for i in 0..n {
        for j in 0..=i {
            let mut leaf = 0;
            let k = kernel.eval_grad_cached(cache, &mut leaf, pair, &mut g);
            if leaf != cache.leaves.len() {
                return Err(Error::InvalidInput("pair cache built for a different kernel".into()));
            }
            pair += 1;
            values[i * n + j] = k;
            values[j * n + i] = k;
            for (d, gv) in grads.iter_mut().zip(&g) {
                d[i * n + j] = *gv;
                d[j * n + i] = *gv;
            }
        }
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("kernel value {bad}")));
    }
    Ok((GramMatrix { n, values }, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{EncodingMatrix, SubstitutionMatrix};
    use crate::seq::{Residue, Sequence};
    use crate::structure::{synthetic_context, SyntheticFolder};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn r(c: char) -> Residue {
        Residue::from_char(c).unwrap()
    }

    fn point(parental: &Arc<Sequence>, s: &Sequence) -> Point {
        Point::new(MutationSet::diff(parental, s).unwrap())
            .with_channel(Channel::OneHot, EncodingMatrix::one_hot().encode(s))
            .with_channel(Channel::Blosum, EncodingMatrix::blosum62().encode(s))
            .with_channel(
                Channel::Embedding,
                crate::structure::synthetic_embedding(s, 8, 1),
            )
    }

    #[test]
    fn tanimoto_cases() {
        let u = [1.0, 0.0, 1.0];
        assert_eq!(tanimoto(&u, &u, 1.0).unwrap(), 1.0);
        assert_eq!(tanimoto(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap(), 0.0);
        assert!(tanimoto(&[0.0, 0.0], &[0.0, 0.0], 1.0).is_err());
        // length-10 sequences differing at two positions
        let oh = EncodingMatrix::one_hot();
        let a: Sequence = "ACDEFGHIKL".parse().unwrap();
        let b = a.mutate(0, r('W')).unwrap().mutate(5, r('W')).unwrap();
        let (ea, eb) = (oh.encode(&a), oh.encode(&b));
        // <u,v> = 8, |u|^2 = |v|^2 = 10
        let k = tanimoto(&ea, &eb, 1.0).unwrap();
        assert_relative_eq!(k, 8.0 / 12.0, epsilon = 1e-15);
    }

    #[test]
    fn matern_cases() {
        let u = [0.3, -1.0];
        assert_eq!(matern52(&u, &u, 2.0, 1.7).unwrap(), 1.7);
        // |u - v| = 1, l = 1: (1 + sqrt5 + 5/3) exp(-sqrt5)
        let expected = (1.0 + 5f64.sqrt() + 5.0 / 3.0) * (-(5f64.sqrt())).exp();
        assert_relative_eq!(
            matern52(&[0.0, 0.0], &[0.6, 0.8], 1.0, 1.0).unwrap(),
            expected,
            epsilon = 1e-15
        );
        let mut prev = 1.0;
        for i in 1..50 {
            let k = matern52_r(i as f64 * 0.5, 1.0);
            assert!(k < prev);
            prev = k;
        }
        assert!(matern52_r(1e3, 1.0) < 1e-300);
        assert!(matern52(&u, &u, 0.0, 1.0).is_err());
    }

    fn tiny_context() -> StructureContext {
        let mut probs = vec![[0.0; 20]; 4];
        for (i, row) in probs.iter_mut().enumerate() {
            for (a, p) in row.iter_mut().enumerate() {
                *p = (1 + (a * (i + 2)) % 7) as f64;
            }
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= z);
        }
        let coords = [0., 0., 0., 3.8, 0., 0., 3.8, 3.8, 0., 0., 3.8, 1.0];
        StructureContext::new(probs, crate::structure::distance_matrix(&coords), coords.to_vec())
            .unwrap()
    }

    #[test]
    fn kermut_struct_empty_and_self() {
        let ctx = tiny_context();
        let parental: Arc<Sequence> = Arc::new("ACDE".parse().unwrap());
        let rates = StructRates {
            gamma_h: 1.3,
            gamma_p: 0.7,
            gamma_d: 0.2,
        };
        let empty = MutationSet::diff(&parental, &parental).unwrap();
        assert_eq!(kermut_struct(&empty, &empty, &ctx, 2.5, rates).unwrap(), 0.0);
        let single = MutationSet::diff(&parental, &"AFDE".parse().unwrap()).unwrap();
        assert_eq!(kermut_struct(&single, &single, &ctx, 2.5, rates).unwrap(), 2.5);
    }

    #[test]
    fn kermut_struct_hand_evaluation() {
        let ctx = tiny_context();
        let parental: Arc<Sequence> = Arc::new("ACDE".parse().unwrap());
        let a = MutationSet::diff(&parental, &"AFDE".parse().unwrap()).unwrap();
        let b = MutationSet::diff(&parental, &"ACDW".parse().unwrap()).unwrap();
        let rates = StructRates {
            gamma_h: 1.3,
            gamma_p: 0.7,
            gamma_d: 0.2,
        };
        // independent scalar evaluation of the single (1, 3) term
        let p1 = &ctx.site_probs()[1];
        let p3 = &ctx.site_probs()[3];
        let mut ss = 0.0;
        for k in 0..20 {
            ss += (p1[k].sqrt() - p3[k].sqrt()).powi(2);
        }
        let h = ss.sqrt() / 2f64.sqrt();
        let dp = (p1[r('F').index()] - p3[r('W').index()]).abs();
        // site 1 at (3.8, 0, 0), site 3 at (0, 3.8, 1)
        let d = (3.8f64 * 3.8 + 3.8 * 3.8 + 1.0).sqrt();
        let expected = 0.9 * (-1.3 * h).exp() * (-0.7 * dp).exp() * (-0.2 * d).exp();
        let got = kermut_struct(&a, &b, &ctx, 0.9, rates).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-14);
        assert_eq!(got, kermut_struct(&b, &a, &ctx, 0.9, rates).unwrap());
    }

    #[test]
    fn kermut_struct_errors() {
        let ctx = tiny_context();
        let p1: Arc<Sequence> = Arc::new("ACDE".parse().unwrap());
        let p2: Arc<Sequence> = Arc::new("WCDE".parse().unwrap());
        let a = MutationSet::diff(&p1, &"AFDE".parse().unwrap()).unwrap();
        let b = MutationSet::diff(&p2, &"WFDE".parse().unwrap()).unwrap();
        let rates = StructRates {
            gamma_h: 1.0,
            gamma_p: 1.0,
            gamma_d: 1.0,
        };
        assert_eq!(
            kermut_struct(&a, &b, &ctx, 1.0, rates),
            Err(Error::ParentalMismatch)
        );
        let long: Arc<Sequence> = Arc::new("ACDEFG".parse().unwrap());
        let c = MutationSet::diff(&long, &"ACDEFW".parse().unwrap()).unwrap();
        assert!(matches!(
            kermut_struct(&c, &c, &ctx, 1.0, rates),
            Err(Error::PositionOutOfRange { .. })
        ));
    }

    #[test]
    fn kermut_composite_identities() {
        let parental: Arc<Sequence> = Arc::new("EVQLVESGGG".parse().unwrap());
        let ctx = Arc::new(
            synthetic_context(
                &parental,
                &SyntheticFolder::new(3),
                &SubstitutionMatrix::blosum62(),
                1.0,
            )
            .unwrap(),
        );
        let mut k = Kernel::kermut(ctx.clone(), Kernel::tanimoto(Channel::OneHot));
        k.set_param("variance", 2.0, None).unwrap();
        k.set_param("pi", 0.3, None).unwrap();
        let pp = point(&parental, &parental);
        // empty mutation sets: only the sequence term, Tanimoto identity = 1
        assert_relative_eq!(k.eval(&pp, &pp).unwrap(), 2.0 * 0.7, epsilon = 1e-15);
        let v = parental.mutate(2, r('W')).unwrap();
        let pv = point(&parental, &v);
        // self: struct term collapses to 1 for a single mutation
        assert_relative_eq!(k.eval(&pv, &pv).unwrap(), 2.0 * (0.3 + 0.7), epsilon = 1e-15);
        // composition from the two independent pieces
        let w = parental.mutate(5, r('Y')).unwrap().mutate(2, r('F')).unwrap();
        let pw = point(&parental, &w);
        let Kernel::Kermut(km) = &k else { unreachable!() };
        let s = kermut_struct(pv.mutations(), pw.mutations(), &ctx, 1.0, km.rates()).unwrap();
        let q = tanimoto(
            pv.channel(Channel::OneHot).unwrap(),
            pw.channel(Channel::OneHot).unwrap(),
            1.0,
        )
        .unwrap();
        assert_relative_eq!(
            k.eval(&pv, &pw).unwrap(),
            2.0 * (0.3 * s + 0.7 * q),
            epsilon = 1e-14
        );
    }

    #[test]
    fn reparameterization_round_trip() {
        for &(s2, pi) in &[(0.5, 0.2), (3.0, 0.9), (1.0, 0.5), (10.0, 0.01)] {
            let (v, p) = kermut_rescaled_from_original(s2, pi);
            let (s2b, pib) = kermut_original_from_rescaled(v, p).unwrap();
            assert_relative_eq!(s2, s2b, max_relative = 1e-12);
            assert_relative_eq!(pi, pib, max_relative = 1e-12);
        }
        assert!(kermut_original_from_rescaled(4.0, 0.5).is_none());
    }

    fn random_points(rng: &mut ChaCha8Rng, parental: &Arc<Sequence>, n: usize) -> Vec<Point> {
        (0..n)
            .map(|_| {
                let mut s = (**parental).clone();
                for _ in 0..rng.gen_range(0..4) {
                    let pos = rng.gen_range(0..s.len());
                    s = s.mutate(pos, Residue::from_index(rng.gen_range(0..20)).unwrap()).unwrap();
                }
                point(parental, &s)
            })
            .collect()
    }

    fn check_grad(kernel: &Kernel, points: &[Point]) {
        let base = kernel.transformed();
        let np = base.len();
        let mut g = vec![0.0; np];
        for a in points {
            for b in points {
                kernel.eval_grad(a, b, &mut g).unwrap();
                assert_relative_eq!(
                    kernel.eval_grad(a, b, &mut g.clone()).unwrap(),
                    kernel.eval(a, b).unwrap(),
                    max_relative = 1e-12
                );
                for j in 0..np {
                    let h = 1e-6;
                    let mut kp = kernel.clone();
                    let mut t = base.clone();
                    t[j] += h;
                    kp.set_transformed(&t).unwrap();
                    let fp = kp.eval(a, b).unwrap();
                    t[j] -= 2.0 * h;
                    kp.set_transformed(&t).unwrap();
                    let fm = kp.eval(a, b).unwrap();
                    let fd = (fp - fm) / (2.0 * h);
                    assert!(
                        (fd - g[j]).abs() <= 1e-6 * (1.0 + fd.abs()),
                        "param {j}: fd {fd} vs analytic {}",
                        g[j]
                    );
                }
            }
        }
    }

    #[test]
    fn kernel_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let parental: Arc<Sequence> = Arc::new("EVQLVESGGG".parse().unwrap());
        let ctx = Arc::new(
            synthetic_context(
                &parental,
                &SyntheticFolder::new(3),
                &SubstitutionMatrix::blosum62(),
                1.0,
            )
            .unwrap(),
        );
        let pts = random_points(&mut rng, &parental, 5);
        let mut matern = Kernel::matern52(vec![Channel::Embedding]);
        matern.set_param("lengthscale", 0.4, None).unwrap();
        let mut sq = Kernel::sqexp(vec![Channel::Embedding, Channel::Blosum]);
        sq.set_param("lengthscale", 12.0, None).unwrap();
        let mut kermut = Kernel::kermut(ctx, Kernel::tanimoto(Channel::Blosum));
        kermut.set_param("seq.variance", 1.0, Some(false)).unwrap();
        let kernels = [
            Kernel::tanimoto(Channel::OneHot),
            matern.clone(),
            sq.clone(),
            Kernel::weighted_sum(vec![matern.clone(), Kernel::tanimoto(Channel::Blosum)]),
            Kernel::Product(vec![matern, Kernel::tanimoto(Channel::OneHot)]),
            kermut,
        ];
        for k in &kernels {
            check_grad(k, &pts);
            let (g, d) = gram_with_grad(k, &pts).unwrap();
            let cache = PairCache::new(k, &pts).unwrap();
            let (gc, dc) = gram_with_grad_cached(k, &cache).unwrap();
            for (x, y) in g.values.iter().zip(&gc.values) {
                assert_relative_eq!(*x, *y, max_relative = 1e-13);
            }
            for (x, y) in d.iter().flatten().zip(dc.iter().flatten()) {
                assert_relative_eq!(*x, *y, max_relative = 1e-12, epsilon = 1e-300);
            }
        }
    }

    #[test]
    fn sparse_dot_matches_dense() {
        let parental: Sequence = "EVQLVESGGG".parse().unwrap();
        let oh = EncodingMatrix::one_hot().encode(&parental);
        let bl = EncodingMatrix::blosum62().encode(&parental);
        let par = Arc::new(parental.clone());
        let a = Point::new(MutationSet::diff(&par, &parental).unwrap())
            .with_channel(Channel::OneHot, oh.clone())
            .with_channel(Channel::Blosum, bl.clone());
        let f = a.feature(Channel::OneHot).unwrap();
        assert_eq!(f.support.as_ref().map(Vec::len), Some(parental.len()));
        assert!(a.feature(Channel::Blosum).unwrap().support.is_none());
        let dense = Feature {
            support: None,
            ..f.clone()
        };
        assert_eq!(f.dot(&dense), dot(&oh, &oh));
        assert_eq!(dense.dot(f), dot(&oh, &oh));
    }

    #[test]
    fn params_names_and_setters() {
        let k = Kernel::weighted_sum(vec![
            Kernel::matern52(vec![Channel::Coords]),
            Kernel::tanimoto(Channel::Blosum),
        ]);
        let names: Vec<String> = k.params().into_iter().map(|p| p.name).collect();
        assert_eq!(
            names,
            ["w0", "w1", "k0.lengthscale", "k0.variance", "k1.variance"]
        );
        let fixed: Vec<bool> = k.params().into_iter().map(|p| p.fixed).collect();
        assert_eq!(fixed, [false, false, false, true, true]);
        let mut k2 = k.clone();
        assert!(k2.set_param("nope", 1.0, None).is_err());
        assert!(k2.set_param("w0", -1.0, None).is_err());
        k2.set_param("w0", 3.0, Some(true)).unwrap();
        assert_eq!(k2.params()[0].value, 3.0);
        assert!(k2.params()[0].fixed);
        let t = k2.transformed();
        let mut k3 = k.clone();
        k3.set_transformed(&t).unwrap();
        assert_relative_eq!(k3.params()[0].value, 3.0, max_relative = 1e-14);
    }

    #[test]
    fn gram_single_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let parental: Arc<Sequence> = Arc::new("EVQLVESGGG".parse().unwrap());
        let pts = random_points(&mut rng, &parental, 6);
        let t = Kernel::tanimoto(Channel::OneHot);
        let g1 = gram(&t, &pts[..1]).unwrap();
        assert_eq!(g1.values, vec![t.eval(&pts[0], &pts[0]).unwrap()]);
        let a = Kernel::matern52(vec![Channel::Embedding]).unit_variance();
        let b = Kernel::tanimoto(Channel::Blosum).unit_variance();
        let mut sum = Kernel::weighted_sum(vec![a.clone(), b.clone()]);
        sum.set_param("w0", 0.3, None).unwrap();
        sum.set_param("w1", 1.7, None).unwrap();
        let (ga, gb, gs) = (
            gram(&a, &pts).unwrap(),
            gram(&b, &pts).unwrap(),
            gram(&sum, &pts).unwrap(),
        );
        for i in 0..gs.values.len() {
            assert!((gs.values[i] - (0.3 * ga.values[i] + 1.7 * gb.values[i])).abs() <= 1e-12);
        }
        assert!(gram(&t, &[]).is_err());
    }
}
