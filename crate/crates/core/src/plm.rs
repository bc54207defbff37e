//! Language-model surrogates: per-sequence pseudo-likelihoods for the soft
//! constraint and per-site log-probability tables for the zero-shot prior mean.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::encoding::SubstitutionMatrix;
use crate::error::{Error, Result};
use crate::seq::{Residue, Sequence, NUM_RESIDUES};
use crate::structure::{check_prob_rows, substitution_site_probs};

/// Probabilities below this are floored before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Position-specific residue probabilities; every row sums to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Pssm {
    rows: Vec<[f64; NUM_RESIDUES]>,
}

impl Pssm {
    pub fn new(rows: Vec<[f64; NUM_RESIDUES]>) -> Result<Self> {
        check_prob_rows(&rows)?;
        Ok(Pssm { rows })
    }

    pub fn uniform(len: usize) -> Self {
        Pssm {
            rows: vec![[1.0 / NUM_RESIDUES as f64; NUM_RESIDUES]; len],
        }
    }

    /// Puts `concentration` on the parental residue at every site and spreads
    /// the rest evenly. `concentration = 1` gives zero mass elsewhere.
    pub fn parental(parental: &Sequence, concentration: f64) -> Result<Self> {
        if !(concentration > 0.0 && concentration <= 1.0) {
            return Err(Error::Probabilities(format!(
                "concentration {concentration} outside (0, 1]"
            )));
        }
        let rest = (1.0 - concentration) / (NUM_RESIDUES - 1) as f64;
        let rows = parental
            .residues()
            .iter()
            .map(|r| {
                let mut row = [rest; NUM_RESIDUES];
                row[r.index()] = concentration;
                row
            })
            .collect();
        Pssm::new(rows)
    }

    /// Softmax of substitution scores against the parental residue.
    pub fn substitution(parental: &Sequence, matrix: &SubstitutionMatrix, temperature: f64) -> Self {
        Pssm {
            rows: substitution_site_probs(parental, matrix, temperature),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[[f64; NUM_RESIDUES]] {
        &self.rows
    }

    pub fn prob(&self, site: usize, residue: Residue) -> f64 {
        self.rows[site][residue.index()]
    }

    pub fn log_prob_table(&self) -> LogProbTable {
        LogProbTable::from_probs(&self.rows)
    }
}

/// Natural-log probabilities per site, floored at `ln(PROB_FLOOR)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbTable {
    rows: Vec<[f64; NUM_RESIDUES]>,
    floored: usize,
}

impl LogProbTable {
    pub fn from_probs(rows: &[[f64; NUM_RESIDUES]]) -> Self {
        let mut floored = 0;
        let rows = rows
            .iter()
            .map(|row| {
                let mut out = [0.0; NUM_RESIDUES];
                for (o, &p) in out.iter_mut().zip(row) {
                    if p < PROB_FLOOR {
                        floored += 1;
                    }
                    *o = libm::log(p.max(PROB_FLOOR));
                }
                out
            })
            .collect();
        LogProbTable { rows, floored }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Entries that were raised to the floor at construction.
    pub fn floored(&self) -> usize {
        self.floored
    }

    pub fn log_prob(&self, site: usize, residue: Residue) -> Option<f64> {
        self.rows.get(site).map(|r| r[residue.index()])
    }

    pub fn rows(&self) -> &[[f64; NUM_RESIDUES]] {
        &self.rows
    }
}

/// Source of sequence pseudo-likelihoods.
#[derive(Debug)]
pub enum LikelihoodProvider {
    Pssm { pssm: Pssm, floored: AtomicUsize },
    /// Externally computed per-sequence values, optionally with a table for
    /// the zero-shot mean.
    Fixture {
        values: BTreeMap<Sequence, f64>,
        table: Option<Pssm>,
    },
}

impl Clone for LikelihoodProvider {
    fn clone(&self) -> Self {
        match self {
            LikelihoodProvider::Pssm { pssm, floored } => LikelihoodProvider::Pssm {
                pssm: pssm.clone(),
                floored: AtomicUsize::new(floored.load(Ordering::Relaxed)),
            },
            LikelihoodProvider::Fixture { values, table } => LikelihoodProvider::Fixture {
                values: values.clone(),
                table: table.clone(),
            },
        }
    }
}

impl LikelihoodProvider {
    pub fn from_pssm(pssm: Pssm) -> Self {
        LikelihoodProvider::Pssm {
            pssm,
            floored: AtomicUsize::new(0),
        }
    }

    pub fn from_fixture(values: BTreeMap<Sequence, f64>, table: Option<Pssm>) -> Result<Self> {
        if let Some((s, v)) = values.iter().find(|(_, v)| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::Probabilities(format!(
                "likelihood {v} for {s} outside (0, 1]"
            )));
        }
        Ok(LikelihoodProvider::Fixture { values, table })
    }

    /// Geometric mean of per-position probabilities for the PSSM kind,
    /// `exp(mean_i ln p_i(x_i))`; the stored value for fixtures.
    pub fn pseudo_likelihood(&self, seq: &Sequence) -> Result<f64> {
        match self {
            LikelihoodProvider::Pssm { pssm, floored } => {
                if seq.len() != pssm.len() {
                    return Err(Error::LengthMismatch {
                        expected: pssm.len(),
                        found: seq.len(),
                    });
                }
                if seq.is_empty() {
                    return Ok(1.0);
                }
                let mut log_sum = 0.0;
                for (i, &r) in seq.residues().iter().enumerate() {
                    let p = pssm.prob(i, r);
                    if p < PROB_FLOOR {
                        floored.fetch_add(1, Ordering::Relaxed);
                    }
                    log_sum += libm::log(p.max(PROB_FLOOR));
                }
                Ok(libm::exp(log_sum / seq.len() as f64).min(1.0))
            }
            LikelihoodProvider::Fixture { values, .. } => values
                .get(seq)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("no likelihood fixture entry for {seq}"))),
        }
    }

    pub fn log_prob_table(&self) -> Result<LogProbTable> {
        match self {
            LikelihoodProvider::Pssm { pssm, .. } => Ok(pssm.log_prob_table()),
            LikelihoodProvider::Fixture { table: Some(t), .. } => Ok(t.log_prob_table()),
            LikelihoodProvider::Fixture { table: None, .. } => Err(Error::InvalidInput(
                "likelihood fixture has no per-site table".into(),
            )),
        }
    }

    /// Number of probabilities floored while scoring so far.
    pub fn floored(&self) -> usize {
        match self {
            LikelihoodProvider::Pssm { floored, .. } => floored.load(Ordering::Relaxed),
            LikelihoodProvider::Fixture { .. } => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(s: &str) -> Sequence {
        s.parse().unwrap()
    }

    #[test]
    fn uniform_is_one_twentieth() {
        let p = LikelihoodProvider::from_pssm(Pssm::uniform(6));
        assert_relative_eq!(p.pseudo_likelihood(&seq("ACDEFG")).unwrap(), 0.05, epsilon = 1e-15);
        assert_relative_eq!(p.pseudo_likelihood(&seq("WWWWWW")).unwrap(), 0.05, epsilon = 1e-15);
        let t = p.log_prob_table().unwrap();
        for row in t.rows() {
            for v in row {
                assert_relative_eq!(*v, (0.05f64).ln(), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn fully_concentrated_parental_scores_one() {
        let parental = seq("EVQLV");
        let p = LikelihoodProvider::from_pssm(Pssm::parental(&parental, 1.0).unwrap());
        assert_eq!(p.pseudo_likelihood(&parental).unwrap(), 1.0);
        // off-parental residue hits the floor and is counted
        let v = p.pseudo_likelihood(&seq("WVQLV")).unwrap();
        assert!(v > 0.0 && v < 1e-2);
        assert_eq!(p.floored(), 1);
    }

    #[test]
    fn two_site_geometric_mean() {
        let mut r0 = [0.5 / 19.0; 20];
        r0[Residue::from_char('A').unwrap().index()] = 0.5;
        let mut r1 = [0.75 / 19.0; 20];
        r1[Residue::from_char('C').unwrap().index()] = 0.25;
        let p = LikelihoodProvider::from_pssm(Pssm::new(vec![r0, r1]).unwrap());
        assert_relative_eq!(
            p.pseudo_likelihood(&seq("AC")).unwrap(),
            (0.5f64 * 0.25).sqrt(),
            epsilon = 1e-15
        );
        assert!((p.pseudo_likelihood(&seq("AC")).unwrap() - 0.3536).abs() < 1e-4);
    }

    #[test]
    fn table_rows_normalized() {
        let parental = seq("EVQLVESGGG");
        let pssm = Pssm::substitution(&parental, &SubstitutionMatrix::blosum62(), 1.0);
        for row in pssm.log_prob_table().rows() {
            let s: f64 = row.iter().map(|l| l.exp()).sum();
            assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn invalid_inputs() {
        let bad = vec![[0.04; 20]];
        assert!(Pssm::new(bad).is_err());
        assert!(Pssm::parental(&seq("AC"), 0.0).is_err());
        let p = LikelihoodProvider::from_pssm(Pssm::uniform(3));
        assert!(p.pseudo_likelihood(&seq("AC")).is_err());
        let mut m = BTreeMap::new();
        m.insert(seq("AC"), 1.5);
        assert!(LikelihoodProvider::from_fixture(m, None).is_err());
    }

    #[test]
    fn fixture_lookup_and_missing_table() {
        let mut m = BTreeMap::new();
        m.insert(seq("AC"), 0.25);
        let p = LikelihoodProvider::from_fixture(m, None).unwrap();
        assert_eq!(p.pseudo_likelihood(&seq("AC")).unwrap(), 0.25);
        assert!(p.pseudo_likelihood(&seq("AD")).is_err());
        assert!(p.log_prob_table().is_err());
    }

    #[test]
    fn higher_site_probability_never_lowers_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let parental = seq("EVQLVESGGGLVQPG");
        let pssm = Pssm::substitution(&parental, &SubstitutionMatrix::blosum62(), 2.0);
        let p = LikelihoodProvider::from_pssm(pssm.clone());
        for _ in 0..500 {
            let s = Sequence::new(
                (0..parental.len())
                    .map(|_| Residue::from_index(rng.gen_range(0..20)).unwrap())
                    .collect(),
            );
            let site = rng.gen_range(0..s.len());
            let to = Residue::from_index(rng.gen_range(0..20)).unwrap();
            let before = p.pseudo_likelihood(&s).unwrap();
            let after = p.pseudo_likelihood(&s.mutate(site, to).unwrap()).unwrap();
            let cur = s.get(site).unwrap();
            if pssm.prob(site, to) > pssm.prob(site, cur) {
                assert!(after >= before);
            }
            assert_eq!(before.to_bits(), p.pseudo_likelihood(&s).unwrap().to_bits());
        }
    }
}
