//! Fixed per-residue encodings: one-hot and substitution-matrix rows.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::seq::{Residue, Sequence, NUM_RESIDUES};

/// BLOSUM-62 in NCBI text format, as distributed with BLAST.
pub const BLOSUM62_TEXT: &str = include_str!("../data/BLOSUM62");

/// A square substitution matrix restricted to the canonical residues.
#[derive(Clone, Debug, PartialEq)]
pub struct SubstitutionMatrix {
    name: String,
    scores: [[f64; NUM_RESIDUES]; NUM_RESIDUES],
}

impl SubstitutionMatrix {
    /// Parses the NCBI layout: `#` comments, a header row of residue codes,
    /// then one row per residue led by its code.
    ///
    /// Extra codes (B, Z, X, `*`) are read but dropped; every canonical residue
    /// must appear in both the header and the row labels.
    pub fn parse_ncbi(name: &str, text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header: Vec<char> = lines
            .next()
            .ok_or_else(|| Error::Matrix("missing header row".into()))?
            .split_whitespace()
            .map(|tok| {
                let mut chars = tok.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Ok(c.to_ascii_uppercase()),
                    _ => Err(Error::Matrix(format!("bad header token {tok:?}"))),
                }
            })
            .collect::<Result<_>>()?;

        let col_of = |c: char| header.iter().position(|&h| h == c);
        let mut seen = [false; NUM_RESIDUES];
        let mut scores = [[0.0; NUM_RESIDUES]; NUM_RESIDUES];
        for (lineno, line) in lines.enumerate() {
            let mut toks = line.split_whitespace();
            let label = toks.next().unwrap_or_default();
            let values: Vec<f64> = toks
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::Matrix(format!("row {label}: bad score {t:?}")))
                })
                .collect::<Result<_>>()?;
            if values.len() != header.len() {
                return Err(Error::Matrix(format!(
                    "row {} ({label}) has {} scores, header has {}",
                    lineno + 1,
                    values.len(),
                    header.len()
                )));
            }
            let mut label_chars = label.chars();
            let row_char = match (label_chars.next(), label_chars.next()) {
                (Some(c), None) => c.to_ascii_uppercase(),
                _ => return Err(Error::Matrix(format!("bad row label {label:?}"))),
            };
            let Ok(row_res) = Residue::from_char(row_char) else {
                continue;
            };
            for col_res in Residue::all() {
                let col = col_of(col_res.to_char()).ok_or_else(|| {
                    Error::Matrix(format!("header lacks residue {}", col_res.to_char()))
                })?;
                scores[row_res.index()][col_res.index()] = values[col];
            }
            seen[row_res.index()] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Matrix(format!(
                "no row for residue {}",
                Residue::from_index(missing).unwrap()
            )));
        }
        Ok(SubstitutionMatrix {
            name: name.to_string(),
            scores,
        })
    }

    pub fn blosum62() -> Self {
        Self::parse_ncbi("BLOSUM62", BLOSUM62_TEXT).expect("bundled BLOSUM62 parses")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn score(&self, a: Residue, b: Residue) -> f64 {
        self.scores[a.index()][b.index()]
    }

    pub fn row(&self, a: Residue) -> &[f64; NUM_RESIDUES] {
        &self.scores[a.index()]
    }

    /// Pairs `(a, b)` whose scores differ from `(b, a)`.
    pub fn asymmetries(&self) -> Vec<(Residue, Residue)> {
        let mut out = Vec::new();
        for a in Residue::all() {
            for b in Residue::all().filter(|b| b.index() > a.index()) {
                if self.score(a, b) != self.score(b, a) {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// Maps each canonical residue to a feature vector of fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingMatrix {
    name: String,
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl EncodingMatrix {
    pub fn one_hot() -> Self {
        let rows = (0..NUM_RESIDUES)
            .map(|i| {
                let mut row = vec![0.0; NUM_RESIDUES];
                row[i] = 1.0;
                row
            })
            .collect();
        EncodingMatrix {
            name: "one-hot".into(),
            dim: NUM_RESIDUES,
            rows,
        }
    }

    /// Uses raw substitution scores as residue features.
    pub fn from_substitution(matrix: &SubstitutionMatrix) -> Self {
        let rows = Residue::all().map(|a| matrix.row(a).to_vec()).collect();
        EncodingMatrix {
            name: matrix.name().to_string(),
            dim: NUM_RESIDUES,
            rows,
        }
    }

    pub fn blosum62() -> Self {
        Self::from_substitution(&SubstitutionMatrix::blosum62())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: Residue) -> &[f64] {
        &self.rows[r.index()]
    }

    /// Concatenates per-position rows in sequence order (length `L * dim`).
    pub fn encode(&self, seq: &Sequence) -> Vec<f64> {
        let mut out = Vec::with_capacity(seq.len() * self.dim);
        for &r in seq.residues() {
            out.extend_from_slice(self.row(r));
        }
        out
    }
}
