//! Rigid-body superposition, structure contexts, and the deterministic
//! synthetic stand-ins for predicted structures and embeddings.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};

use crate::encoding::SubstitutionMatrix;
use crate::error::{Error, Result};
use crate::hash::{hash_words, normal, symmetric, unit};
use crate::seq::{Residue, Sequence, NUM_RESIDUES};

/// Result of superposing a mobile point set onto a reference.
#[derive(Clone, Debug)]
pub struct Alignment {
    /// Mobile coordinates after rotation and translation, flattened xyz.
    pub coords: Vec<f64>,
    /// Root-mean-square deviation to the reference in Å.
    pub rmsd: f64,
    /// Proper rotation (det = +1), row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

fn points(flat: &[f64]) -> impl Iterator<Item = Vector3<f64>> + '_ {
    flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2]))
}

fn centroid(flat: &[f64]) -> Vector3<f64> {
    let n = (flat.len() / 3) as f64;
    points(flat).fold(Vector3::zeros(), |acc, p| acc + p) / n
}

fn check_spread(flat: &[f64], c: &Vector3<f64>, which: &str) -> Result<()> {
    let mut cov = Matrix3::zeros();
    for p in points(flat) {
        let d = p - c;
        cov += d * d.transpose();
    }
    let sv = cov.singular_values();
    let mut s = [sv[0], sv[1], sv[2]];
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
        return Err(Error::Degenerate(format!("{which} points are collinear or coincident")));
    }
    Ok(())
}

/// Root-mean-square deviation between two flattened point sets, no fitting.
pub fn rmsd(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() % 3 != 0 {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len() / 3;
    if n == 0 {
        return Ok(0.0);
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(libm::sqrt(ss / n as f64))
}

/// Least-squares rigid superposition of `mobile` onto `reference` (Kabsch).
///
/// Both inputs are flattened `[x0, y0, z0, x1, ...]`. Reflections are
/// excluded by flipping the smallest singular direction when needed.
pub fn align(mobile: &[f64], reference: &[f64]) -> Result<Alignment> {
    if mobile.len() != reference.len() {
        return Err(Error::LengthMismatch {
            expected: reference.len(),
            found: mobile.len(),
        });
    }
    if mobile.len() % 3 != 0 {
        return Err(Error::InvalidInput(format!(
            "coordinate length {} is not a multiple of 3",
            mobile.len()
        )));
    }
    let n = mobile.len() / 3;
    if n < 3 {
        return Err(Error::Degenerate(format!("need at least 3 points, got {n}")));
    }
    let cm = centroid(mobile);
    let cr = centroid(reference);
    check_spread(mobile, &cm, "mobile")?;
    check_spread(reference, &cr, "reference")?;

    let mut h = Matrix3::zeros();
    for (p, q) in points(mobile).zip(points(reference)) {
        h += (p - cm) * (q - cr).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v * correction * u.transpose();
    let t = cr - r * cm;

    let mut coords = Vec::with_capacity(mobile.len());
    for p in points(mobile) {
        let q = r * p + t;
        coords.extend_from_slice(&[q.x, q.y, q.z]);
    }
    let rmsd = rmsd(&coords, reference)?;
    let mut rotation = [[0.0; 3]; 3];
    for (i, row) in rotation.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = r[(i, j)];
        }
    }
    Ok(Alignment {
        coords,
        rmsd,
        rotation,
        translation: [t.x, t.y, t.z],
    })
}

/// Per-site inverse-folding distributions and inter-residue distances of the
/// parental structure.
#[derive(Clone, Debug)]
pub struct StructureContext {
    site_probs: Vec<[f64; NUM_RESIDUES]>,
    distances: Vec<f64>,
    parental_coords: Vec<f64>,
    hellinger: Vec<f64>,
}

/// Row-sum tolerance for probability tables.
pub const PROB_TOL: f64 = 1e-9;

pub(crate) fn check_prob_rows(rows: &[[f64; NUM_RESIDUES]]) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Probabilities(format!("row {i}: invalid entry {p}")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::Probabilities(format!("row {i} sums to {sum}")));
        }
    }
    Ok(())
}

/// Hellinger distance with the 1/√2 normalization, in [0, 1].
pub fn hellinger(p: &[f64], q: &[f64]) -> f64 {
    let ss: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| {
            let d = libm::sqrt(*a) - libm::sqrt(*b);
            d * d
        })
        .sum();
    libm::sqrt(ss) / core::f64::consts::SQRT_2
}

impl StructureContext {
    /// Validates and assembles a context. `distances` is row-major `L x L`;
    /// `parental_coords` may be empty when only the kernel inputs are known.
    pub fn new(
        site_probs: Vec<[f64; NUM_RESIDUES]>,
        distances: Vec<f64>,
        parental_coords: Vec<f64>,
    ) -> Result<Self> {
        let l = site_probs.len();
        check_prob_rows(&site_probs)?;
        if distances.len() != l * l {
            return Err(Error::LengthMismatch {
                expected: l * l,
                found: distances.len(),
            });
        }
        for i in 0..l {
            if distances[i * l + i] != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "distance diagonal at {i} is {}",
                    distances[i * l + i]
                )));
            }
            for j in 0..l {
                let d = distances[i * l + j];
                if !(d.is_finite() && d >= 0.0) {
                    return Err(Error::InvalidInput(format!("distance ({i},{j}) = {d}")));
                }
                if (d - distances[j * l + i]).abs() > 1e-9 * (1.0 + d.abs()) {
                    return Err(Error::InvalidInput(format!(
                        "distance matrix asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        if !parental_coords.is_empty() && parental_coords.len() != 3 * l {
            return Err(Error::LengthMismatch {
                expected: 3 * l,
                found: parental_coords.len(),
            });
        }
        let mut hell = vec![0.0; l * l];
        for i in 0..l {
            for j in 0..i {
                let h = hellinger(&site_probs[i], &site_probs[j]);
                hell[i * l + j] = h;
                hell[j * l + i] = h;
            }
        }
        Ok(StructureContext {
            site_probs,
            distances,
            parental_coords,
            hellinger: hell,
        })
    }

    pub fn len(&self) -> usize {
        self.site_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.site_probs.is_empty()
    }

    pub fn site_probs(&self) -> &[[f64; NUM_RESIDUES]] {
        &self.site_probs
    }

    pub fn prob(&self, site: usize, residue: Residue) -> f64 {
        self.site_probs[site][residue.index()]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.len() + j]
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn hellinger(&self, i: usize, j: usize) -> f64 {
        self.hellinger[i * self.len() + j]
    }

    pub fn parental_coords(&self) -> &[f64] {
        &self.parental_coords
    }
}

/// Pairwise Euclidean distances between the points of a flattened set.
pub fn distance_matrix(coords: &[f64]) -> Vec<f64> {
    let pts: Vec<Vector3<f64>> = points(coords).collect();
    let l = pts.len();
    let mut d = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..i {
            let dij = (pts[i] - pts[j]).norm();
            d[i * l + j] = dij;
            d[j * l + i] = dij;
        }
    }
    d
}

/// Idealized helix used as the synthetic backbone.
pub const HELIX_RADIUS: f64 = 2.3;
pub const HELIX_RISE: f64 = 1.5;
pub const HELIX_TURN_DEG: f64 = 100.0;
/// Bound on the sequence-dependent displacement of any residue, in Å.
pub const MAX_OFFSET: f64 = 0.8;
/// Residues within this many positions contribute to a site's displacement.
pub const OFFSET_WINDOW: usize = 2;
const OFFSET_WEIGHTS: [f64; OFFSET_WINDOW + 1] = [0.4, 0.2, 0.1];

const TAG_COORD: u64 = 0xC0;
const TAG_EMBED: u64 = 0xE3;

/// Deterministic structure generator: residues on a helix, each displaced by
/// a keyed offset that depends on the residues within [`OFFSET_WINDOW`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticFolder {
    pub seed: u64,
}

impl SyntheticFolder {
    pub fn new(seed: u64) -> Self {
        SyntheticFolder { seed }
    }

    fn unit_ball(&self, position: usize, residue: Residue) -> Vector3<f64> {
        let key = hash_words(&[TAG_COORD, self.seed, position as u64, residue.index() as u64]);
        let dir = Vector3::new(
            normal(hash_words(&[key, 0])),
            normal(hash_words(&[key, 1])),
            normal(hash_words(&[key, 2])),
        );
        let norm = dir.norm();
        let dir = if norm > 0.0 { dir / norm } else { Vector3::x() };
        dir * unit(hash_words(&[key, 3]))
    }

    /// Raw (unaligned) coordinates, flattened xyz, length `3 L`.
    pub fn fold(&self, seq: &Sequence) -> Vec<f64> {
        let l = seq.len();
        let res = seq.residues();
        let ball: Vec<Vector3<f64>> = res
            .iter()
            .enumerate()
            .map(|(i, &r)| self.unit_ball(i, r))
            .collect();
        let mut out = Vec::with_capacity(3 * l);
        for i in 0..l {
            let theta = (i as f64) * HELIX_TURN_DEG.to_radians();
            let base = Vector3::new(
                HELIX_RADIUS * libm::cos(theta),
                HELIX_RADIUS * libm::sin(theta),
                HELIX_RISE * i as f64,
            );
            let lo = i.saturating_sub(OFFSET_WINDOW);
            let hi = (i + OFFSET_WINDOW).min(l.saturating_sub(1));
            let offset = (lo..=hi).fold(Vector3::zeros(), |acc, j| {
                acc + ball[j] * OFFSET_WEIGHTS[i.abs_diff(j)]
            }) * MAX_OFFSET;
            let p = base + offset;
            out.extend_from_slice(&[p.x, p.y, p.z]);
        }
        out
    }
}

/// Mean of keyed per-position vectors, standing in for a mean-pooled
/// language-model embedding.
pub fn synthetic_embedding(seq: &Sequence, dim: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if seq.is_empty() {
        return out;
    }
    for (i, r) in seq.residues().iter().enumerate() {
        let key = hash_words(&[TAG_EMBED, seed, i as u64, r.index() as u64]);
        for (k, o) in out.iter_mut().enumerate() {
            *o += symmetric(hash_words(&[key, k as u64]));
        }
    }
    let inv = 1.0 / seq.len() as f64;
    out.iter_mut().for_each(|x| *x *= inv);
    out
}

/// Softmax over substitution scores against the parental residue at each site.
pub fn substitution_site_probs(
    parental: &Sequence,
    matrix: &SubstitutionMatrix,
    temperature: f64,
) -> Vec<[f64; NUM_RESIDUES]> {
    parental
        .residues()
        .iter()
        .map(|&p| {
            let row = matrix.row(p);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut out = [0.0; NUM_RESIDUES];
            let mut z = 0.0;
            for (o, s) in out.iter_mut().zip(row) {
                *o = libm::exp((s - max) / temperature);
                z += *o;
            }
            out.iter_mut().for_each(|o| *o /= z);
            out
        })
        .collect()
}

/// Synthetic context: softmax-substitution site distributions (temperature 1
/// unless overridden) and distances from the synthetic parental fold.
pub fn synthetic_context(
    parental: &Sequence,
    folder: &SyntheticFolder,
    matrix: &SubstitutionMatrix,
    temperature: f64,
) -> Result<StructureContext> {
    let coords = folder.fold(parental);
    let distances = distance_matrix(&coords);
    StructureContext::new(
        substitution_site_probs(parental, matrix, temperature),
        distances,
        coords,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        // random unit quaternion
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ));
        *q.to_rotation_matrix().matrix()
    }

    fn transform(flat: &[f64], r: &Matrix3<f64>, t: &Vector3<f64>) -> Vec<f64> {
        points(flat)
            .flat_map(|p| {
                let q = r * p + t;
                [q.x, q.y, q.z]
            })
            .collect()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..3 * n).map(|_| rng.gen_range(-10.0..10.0)).collect()
    }

    #[test]
    fn self_alignment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_cloud(&mut rng, 12);
        let a = align(&x, &x).unwrap();
        assert!(a.rmsd < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(a.rotation[i][j], e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn recovers_rigid_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x = random_cloud(&mut rng, 20);
            let r = random_rotation(&mut rng);
            let t = Vector3::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            );
            let y = transform(&x, &r, &t);
            let a = align(&y, &x).unwrap();
            assert!(a.rmsd <= 1e-9, "rmsd {}", a.rmsd);
        }
    }

    #[test]
    fn no_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_cloud(&mut rng, 10);
        let mirrored: Vec<f64> = x
            .chunks(3)
            .flat_map(|c| [c[0], c[1], -c[2]])
            .collect();
        let a = align(&mirrored, &x).unwrap();
        let r = Matrix3::from_fn(|i, j| a.rotation[i][j]);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-10);
        assert!(a.rmsd > 0.1);
    }

    #[test]
    fn rmsd_invariant_under_pretransform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = random_cloud(&mut rng, 15);
            let y = random_cloud(&mut rng, 15);
            let base = align(&y, &x).unwrap().rmsd;
            let r = random_rotation(&mut rng);
            let t = Vector3::new(rng.gen_range(-5.0..5.0), 1.0, -2.0);
            let moved = align(&transform(&y, &r, &t), &x).unwrap().rmsd;
            assert!((base - moved).abs() < 1e-8);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let two = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert!(matches!(align(&two, &two), Err(Error::Degenerate(_))));
        let line = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0];
        assert!(matches!(align(&line, &line), Err(Error::Degenerate(_))));
        assert!(matches!(
            align(&line[..9], &line),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn hellinger_bounds() {
        let p = [0.5, 0.5, 0.0];
        let q = [0.0, 0.0, 1.0];
        assert_relative_eq!(hellinger(&p, &p), 0.0);
        assert_relative_eq!(hellinger(&p, &q), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn context_validation() {
        let mut probs = vec![[0.05; NUM_RESIDUES]; 3];
        let d = distance_matrix(&[0., 0., 0., 1., 0., 0., 0., 2., 0.]);
        assert!(StructureContext::new(probs.clone(), d.clone(), Vec::new()).is_ok());
        probs[1] = [0.04; NUM_RESIDUES]; // sums to 0.8
        assert!(matches!(
            StructureContext::new(probs, d, Vec::new()),
            Err(Error::Probabilities(_))
        ));
    }

    #[test]
    fn synthetic_context_shapes() {
        let parental: Sequence = "EVQLV".parse().unwrap();
        let ctx = synthetic_context(
            &parental,
            &SyntheticFolder::new(0),
            &SubstitutionMatrix::blosum62(),
            1.0,
        )
        .unwrap();
        assert_eq!(ctx.len(), 5);
        assert_eq!(ctx.distances().len(), 25);
        for i in 0..5 {
            assert_eq!(ctx.distance(i, i), 0.0);
            assert!((ctx.site_probs()[i].iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for j in 0..5 {
                assert_eq!(ctx.distance(i, j), ctx.distance(j, i));
            }
        }
        // parental residue is the mode under a BLOSUM softmax
        for (i, r) in parental.residues().iter().enumerate() {
            let row = &ctx.site_probs()[i];
            let best = (0..20).max_by(|a, b| row[*a].total_cmp(&row[*b])).unwrap();
            assert_eq!(best, r.index());
        }
    }

    #[test]
    fn fold_is_local_and_bounded() {
        let folder = SyntheticFolder::new(42);
        let parental: Sequence = "EVQLVESGGGLVQPGGSLRLSCAASGFTFS".parse().unwrap();
        let base = folder.fold(&parental);
        // offsets from the ideal helix never exceed the bound
        for i in 0..parental.len() {
            let theta = (i as f64) * HELIX_TURN_DEG.to_radians();
            let ideal = [
                HELIX_RADIUS * theta.cos(),
                HELIX_RADIUS * theta.sin(),
                HELIX_RISE * i as f64,
            ];
            let d: f64 = (0..3).map(|k| (base[3 * i + k] - ideal[k]).powi(2)).sum::<f64>().sqrt();
            assert!(d <= MAX_OFFSET + 1e-12);
        }
        let site = 12;
        let mutant = parental.mutate(site, Residue::from_char('W').unwrap()).unwrap();
        let moved = folder.fold(&mutant);
        for i in 0..parental.len() {
            let changed = (0..3).any(|k| base[3 * i + k] != moved[3 * i + k]);
            if i.abs_diff(site) > OFFSET_WINDOW {
                assert!(!changed, "residue {i} moved");
            }
        }
        assert!(base[3 * site..3 * site + 3] != moved[3 * site..3 * site + 3]);
        let a = align(&moved, &base).unwrap();
        assert!(a.rmsd > 0.0);
        assert_eq!(folder.fold(&mutant), moved);
    }
}
