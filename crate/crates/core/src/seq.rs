//! Amino-acid sequences and their substitutions against a parental sequence.
//!
//! Campaigns work in the substitution-only setting: every variant has the
//! parental length, so a variant is fully described by the set of positions
//! at which it differs.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// The canonical alphabet, in the row order of the NCBI substitution matrices.
pub const ALPHABET: &[u8; 20] = b"ARNDCQEGHILKMFPSTWYV";

/// Number of canonical amino acids.
pub const NUM_RESIDUES: usize = 20;

/// One of the 20 canonical amino acids, stored as its index into [`ALPHABET`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Residue(u8);

impl Residue {
    pub fn from_index(index: usize) -> Option<Self> {
        (index < NUM_RESIDUES).then_some(Residue(index as u8))
    }

    pub fn from_char(c: char) -> Result<Self> {
        let upper = c.to_ascii_uppercase();
        ALPHABET
            .iter()
            .position(|&b| b as char == upper)
            .map(|i| Residue(i as u8))
            .ok_or(Error::NonCanonicalResidue(c))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn to_char(self) -> char {
        ALPHABET[self.0 as usize] as char
    }

    pub fn all() -> impl Iterator<Item = Residue> {
        (0..NUM_RESIDUES as u8).map(Residue)
    }
}

impl fmt::Debug for Residue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_char())
    }
}

impl fmt::Display for Residue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_char())
    }
}

/// A fixed-length amino-acid sequence over the canonical alphabet.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sequence(Vec<Residue>);

impl Sequence {
    pub fn new(residues: Vec<Residue>) -> Self {
        Sequence(residues)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn residues(&self) -> &[Residue] {
        &self.0
    }

    pub fn get(&self, position: usize) -> Option<Residue> {
        self.0.get(position).copied()
    }

    /// Returns a copy with `position` set to `to`; `self` is left unchanged.
    pub fn mutate(&self, position: usize, to: Residue) -> Result<Sequence> {
        if position >= self.len() {
            return Err(Error::PositionOutOfRange {
                position,
                len: self.len(),
            });
        }
        let mut out = self.0.clone();
        out[position] = to;
        Ok(Sequence(out))
    }

    /// Number of positions at which two equal-length sequences differ.
    pub fn hamming(&self, other: &Sequence) -> Result<usize> {
        check_lengths(self, other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .filter(|(a, b)| a != b)
            .count())
    }
}

impl FromStr for Sequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .chars()
            .map(Residue::from_char)
            .collect::<Result<Vec<_>>>()
            .map(Sequence)
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.0 {
            write!(f, "{}", r.to_char())?;
        }
        Ok(())
    }
}

impl fmt::Debug for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sequence({self})")
    }
}

impl From<Sequence> for String {
    fn from(s: Sequence) -> String {
        alloc::format!("{s}")
    }
}

fn check_lengths(a: &Sequence, b: &Sequence) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// A single substitution at `position`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mutation {
    pub position: usize,
    pub from: Residue,
    pub to: Residue,
}

/// The substitutions that turn the parental sequence into a variant.
///
/// Entries are sorted by position and each position appears at most once.
#[derive(Clone, Debug)]
pub struct MutationSet {
    parental: Arc<Sequence>,
    entries: Vec<Mutation>,
}

impl MutationSet {
    /// Positionwise difference between `parental` and `variant`.
    pub fn diff(parental: &Arc<Sequence>, variant: &Sequence) -> Result<Self> {
        check_lengths(parental, variant)?;
        let entries = parental
            .residues()
            .iter()
            .zip(variant.residues())
            .enumerate()
            .filter(|(_, (p, v))| p != v)
            .map(|(position, (&from, &to))| Mutation { position, from, to })
            .collect();
        Ok(MutationSet {
            parental: Arc::clone(parental),
            entries,
        })
    }

    /// Builds a set from explicit entries, checking them against the parental.
    pub fn from_entries(parental: &Arc<Sequence>, mut entries: Vec<Mutation>) -> Result<Self> {
        entries.sort_by_key(|m| m.position);
        for w in entries.windows(2) {
            if w[0].position == w[1].position {
                return Err(Error::InvalidInput(alloc::format!(
                    "position {} mutated twice",
                    w[0].position
                )));
            }
        }
        for m in &entries {
            let current = parental.get(m.position).ok_or(Error::PositionOutOfRange {
                position: m.position,
                len: parental.len(),
            })?;
            if current != m.from {
                return Err(Error::InvalidInput(alloc::format!(
                    "mutation at {} expects {} but parental has {}",
                    m.position,
                    m.from,
                    current
                )));
            }
            if m.from == m.to {
                return Err(Error::InvalidInput(alloc::format!(
                    "mutation at {} is a no-op",
                    m.position
                )));
            }
        }
        Ok(MutationSet {
            parental: Arc::clone(parental),
            entries,
        })
    }

    pub fn parental(&self) -> &Arc<Sequence> {
        &self.parental
    }

    pub fn entries(&self) -> &[Mutation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reconstructs the variant.
    pub fn apply(&self) -> Sequence {
        let mut out = self.parental.residues().to_vec();
        for m in &self.entries {
            out[m.position] = m.to;
        }
        Sequence(out)
    }

    pub fn same_parental(&self, other: &MutationSet) -> bool {
        Arc::ptr_eq(&self.parental, &other.parental) || self.parental == other.parental
    }
}

impl PartialEq for MutationSet {
    fn eq(&self, other: &Self) -> bool {
        self.same_parental(other) && self.entries == other.entries
    }
}
