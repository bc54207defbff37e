//! Fixture file formats.
//!
//! * keyed vectors (embeddings, coordinates): CSV with a `sequence` column
//!   followed by numeric columns;
//! * keyed scalars (likelihoods, oracle tables): CSV `sequence,<value>`;
//! * matrices (site probabilities, distances): tab-separated rows, no
//!   header, `#` comments;
//! * sequence lists: one sequence per line, or `id<TAB>sequence`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use seqbo_core::seq::{Sequence, NUM_RESIDUES};

use crate::error::{Result, SeqboError};

fn parse_seq(path: &Path, line: usize, s: &str) -> Result<Sequence> {
    s.trim()
        .parse()
        .map_err(|e| SeqboError::fixture(path, format!("line {line}: {e}")))
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| SeqboError::fixture(path, format!("line {line}: not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(SeqboError::fixture(path, format!("line {line}: non-finite value {v}")));
    }
    Ok(v)
}

fn reader(path: &Path, delimiter: u8, headers: bool) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| SeqboError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(headers)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> SeqboError {
    SeqboError::fixture(path, e.to_string())
}

/// Rows of `sequence,v0,v1,...`; every row has the same width.
pub fn read_keyed_vectors(path: &Path) -> Result<(Vec<String>, BTreeMap<Sequence, Vec<f64>>)> {
    let mut rdr = reader(path, b',', true)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if header.first().map(String::as_str) != Some("sequence") || header.len() < 2 {
        return Err(SeqboError::fixture(
            path,
            "header must be `sequence` followed by at least one value column",
        ));
    }
    let mut out = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != header.len() {
            return Err(SeqboError::fixture(
                path,
                format!("line {line}: {} fields, header has {}", rec.len(), header.len()),
            ));
        }
        let seq = parse_seq(path, line, &rec[0])?;
        let values = rec
            .iter()
            .skip(1)
            .map(|s| parse_f64(path, line, s))
            .collect::<Result<Vec<_>>>()?;
        if out.insert(seq, values).is_some() {
            return Err(SeqboError::fixture(path, format!("line {line}: duplicate sequence {}", &rec[0])));
        }
    }
    Ok((header, out))
}

/// Rows of `sequence,value`.
pub fn read_keyed_scalars(path: &Path) -> Result<BTreeMap<Sequence, f64>> {
    let (header, rows) = read_keyed_vectors(path)?;
    if header.len() != 2 {
        return Err(SeqboError::fixture(path, "expected exactly two columns: sequence,value"));
    }
    Ok(rows.into_iter().map(|(s, v)| (s, v[0])).collect())
}

pub fn write_keyed_scalars<'a>(
    path: &Path,
    column: &str,
    rows: impl IntoIterator<Item = (&'a Sequence, f64)>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["sequence", column]).map_err(|e| csv_err(path, e))?;
    for (s, v) in rows {
        w.write_record([s.to_string(), v.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| SeqboError::io(path, e))
}

/// Tab-separated numeric matrix.
pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = reader(path, b'\t', false)?;
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| parse_f64(path, k + 1, s))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_matrix(path: &Path, rows: impl IntoIterator<Item = impl AsRef<[f64]>>) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        let cells: Vec<String> = row.as_ref().iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join("\t"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| SeqboError::io(path, e))
}

/// Largest row-sum deviation from 1 accepted in probability files; rows
/// inside it are rescaled to sum to 1.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// `L` rows of 20 probabilities in alphabet order.
pub fn read_prob_rows(path: &Path) -> Result<Vec<[f64; NUM_RESIDUES]>> {
    read_matrix(path)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut row = <[f64; NUM_RESIDUES]>::try_from(row.as_slice()).map_err(|_| {
                SeqboError::fixture(
                    path,
                    format!("row {}: {} columns, expected {NUM_RESIDUES}", i + 1, row.len()),
                )
            })?;
            if let Some(p) = row.iter().find(|p| !(**p >= 0.0)) {
                return Err(SeqboError::fixture(path, format!("row {}: negative probability {p}", i + 1)));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(SeqboError::fixture(path, format!("row {} sums to {sum}", i + 1)));
            }
            row.iter_mut().for_each(|p| *p /= sum);
            Ok(row)
        })
        .collect()
}

/// Square matrix flattened row-major, with its dimension.
pub fn read_square(path: &Path) -> Result<(usize, Vec<f64>)> {
    let rows = read_matrix(path)?;
    let n = rows.len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(SeqboError::fixture(
            path,
            format!("row {} has {} columns, matrix has {n} rows", i + 1, r.len()),
        ));
    }
    Ok((n, rows.into_iter().flatten().collect()))
}

/// One sequence per line, optionally `id<TAB>sequence`; blank lines and `#`
/// comments are skipped.
pub fn read_sequences(path: &Path) -> Result<Vec<Sequence>> {
    let text = fs::read_to_string(path).map_err(|e| SeqboError::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.rsplit('\t').next().unwrap_or(line);
        out.push(parse_seq(path, k + 1, field)?);
    }
    Ok(out)
}

pub fn write_sequences(path: &Path, seqs: &[Sequence]) -> Result<()> {
    let text: String = seqs
        .iter()
        .enumerate()
        .map(|(i, s)| format!("s{i}\t{s}\n"))
        .collect();
    fs::write(path, text).map_err(|e| SeqboError::io(path, e))
}
