//! Seeded synthetic fitness landscapes.
//!
//! `f(x) = sum_i site[i][x_i] + sum_(i,j) pair_ij[x_i][x_j] + w * <e(x), d>`
//! where `e` is the synthetic embedding and `d` a seeded unit direction.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hash::{hash_words, normal};
use crate::seq::{Residue, Sequence, NUM_RESIDUES};
use crate::structure::synthetic_embedding;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LandscapeKind {
    /// Log10-fold affinity improvement; denser epistasis.
    Affinity,
    /// Melting-temperature-like; mostly additive.
    Thermostability,
}

impl LandscapeKind {
    fn params(self) -> LandscapeParams {
        match self {
            LandscapeKind::Affinity => LandscapeParams {
                site_scale: 0.25,
                pairs: 10,
                pair_scale: 0.35,
                embedding_weight: 0.5,
                tag: 0xA1F1,
            },
            LandscapeKind::Thermostability => LandscapeParams {
                site_scale: 1.5,
                pairs: 3,
                pair_scale: 1.0,
                embedding_weight: 2.0,
                tag: 0x7E70,
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct LandscapeParams {
    site_scale: f64,
    pairs: usize,
    pair_scale: f64,
    embedding_weight: f64,
    tag: u64,
}

pub const ORACLE_EMBEDDING_DIM: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Epistasis {
    pub i: usize,
    pub j: usize,
    pub table: Vec<[f64; NUM_RESIDUES]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticLandscape {
    kind: LandscapeKind,
    seed: u64,
    embedding_seed: u64,
    sites: Vec<[f64; NUM_RESIDUES]>,
    pairs: Vec<Epistasis>,
    direction: Vec<f64>,
    embedding_weight: f64,
}

impl SyntheticLandscape {
    /// Landscape over sequences of length `len`. `embedding_seed` keys the
    /// embedding used by the smooth term; it should match the campaign's
    /// embedding provider.
    pub fn new(kind: LandscapeKind, len: usize, seed: u64, embedding_seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidInput("landscape over empty sequences".into()));
        }
        let p = kind.params();
        let h = |words: &[u64]| normal(hash_words(&[&[p.tag, seed][..], words].concat()));
        let sites = (0..len)
            .map(|i| {
                let mut row = [0.0; NUM_RESIDUES];
                for (a, v) in row.iter_mut().enumerate() {
                    *v = p.site_scale * h(&[1, i as u64, a as u64]);
                }
                row
            })
            .collect();
        let mut pairs: Vec<Epistasis> = Vec::new();
        let total = len * (len - 1) / 2;
        let wanted = p.pairs.min(total);
        let mut k = 0u64;
        while pairs.len() < wanted {
            let r = hash_words(&[p.tag, seed, 2, k]);
            k += 1;
            let i = (r % len as u64) as usize;
            let j = ((r >> 32) % len as u64) as usize;
            let (i, j) = if i < j { (i, j) } else { (j, i) };
            if i == j || pairs.iter().any(|e| e.i == i && e.j == j) {
                continue;
            }
            let table = (0..NUM_RESIDUES)
                .map(|a| {
                    let mut row = [0.0; NUM_RESIDUES];
                    for (b, v) in row.iter_mut().enumerate() {
                        *v = p.pair_scale * h(&[3, i as u64, j as u64, a as u64, b as u64]);
                    }
                    row
                })
                .collect();
            pairs.push(Epistasis { i, j, table });
        }
        let mut direction: Vec<f64> = (0..ORACLE_EMBEDDING_DIM).map(|d| h(&[4, d as u64])).collect();
        let norm = libm::sqrt(direction.iter().map(|v| v * v).sum::<f64>());
        direction.iter_mut().for_each(|v| *v /= norm);
        Ok(SyntheticLandscape {
            kind,
            seed,
            embedding_seed,
            sites,
            pairs,
            direction,
            embedding_weight: p.embedding_weight,
        })
    }

    pub fn kind(&self) -> LandscapeKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn pairs(&self) -> &[Epistasis] {
        &self.pairs
    }

    /// Per-site term alone.
    pub fn additive(&self, seq: &Sequence) -> Result<f64> {
        self.check(seq)?;
        Ok(seq
            .residues()
            .iter()
            .zip(&self.sites)
            .map(|(r, row)| row[r.index()])
            .sum())
    }

    /// Sequence maximizing the per-site term.
    pub fn site_argmax(&self) -> Sequence {
        Sequence::new(
            self.sites
                .iter()
                .map(|row| {
                    let mut best = 0;
                    for a in 1..NUM_RESIDUES {
                        if row[a] > row[best] {
                            best = a;
                        }
                    }
                    Residue::from_index(best).unwrap()
                })
                .collect(),
        )
    }

    fn check(&self, seq: &Sequence) -> Result<()> {
        if seq.len() != self.sites.len() {
            return Err(Error::LengthMismatch {
                expected: self.sites.len(),
                found: seq.len(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, seq: &Sequence) -> Result<f64> {
        let mut v = self.additive(seq)?;
        let res = seq.residues();
        for e in &self.pairs {
            v += e.table[res[e.i].index()][res[e.j].index()];
        }
        let emb = synthetic_embedding(seq, ORACLE_EMBEDDING_DIM, self.embedding_seed);
        v += self.embedding_weight * emb.iter().zip(&self.direction).map(|(a, b)| a * b).sum::<f64>();
        Ok(v)
    }

    pub fn evaluate_batch(&self, seqs: &[Sequence]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; seqs.len()];
        for (o, s) in out.iter_mut().zip(seqs) {
            *o = self.evaluate(s)?;
        }
        Ok(out)
    }
}
