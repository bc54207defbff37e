//! Plot-ready summaries of finished runs.
//!
//! Every `rounds.csv` below the given directory is read; rows are merged into
//! long-format tables keyed by (method, round). Run outputs are only read.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::campaign::mean_se;
use crate::error::{Result, SeqboError};

/// One summary row. RMSD columns are empty when no repeat logged RMSD.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub round: usize,
    pub repeats: usize,
    pub best_mean: f64,
    pub best_se: f64,
    pub rmsd_mean: Option<f64>,
    pub rmsd_se: Option<f64>,
    pub rmsd_max_mean: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub sources: Vec<PathBuf>,
    pub rows: Vec<SummaryRow>,
}

pub const BEST_HEADER: &[&str] = &["method", "round", "repeats", "best_so_far_mean", "best_so_far_se"];
pub const RMSD_HEADER: &[&str] = &["method", "round", "repeats", "rmsd_mean", "rmsd_se", "rmsd_max_mean"];

fn find_logs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| SeqboError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| SeqboError::io(dir, err)))
        .collect::<Result<_>>()?;
    paths.sort();
    for p in paths {
        if p.is_dir() {
            find_logs(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "rounds.csv") {
            out.push(p);
        }
    }
    Ok(())
}

#[derive(Default)]
struct Cell {
    best: Vec<f64>,
    rmsd: Vec<Option<f64>>,
    rmsd_max: Vec<Option<f64>>,
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| SeqboError::fixture(path, format!("missing column `{name}`")))
}

fn parse_opt(s: &str, what: &str, path: &Path, line: u64) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| SeqboError::fixture(path, format!("line {line}: bad {what} `{s}`")))
}

/// Reads every `rounds.csv` under `dir` and aggregates over repeats.
pub fn summarize(dir: &Path) -> Result<Summary> {
    if !dir.is_dir() {
        return Err(SeqboError::fixture(dir, "not a directory"));
    }
    let mut sources = Vec::new();
    find_logs(dir, &mut sources)?;
    if sources.is_empty() {
        return Err(SeqboError::fixture(dir, "no rounds.csv found"));
    }
    let mut cells: BTreeMap<(String, usize), Cell> = BTreeMap::new();
    let mut seen: BTreeMap<(String, u64, usize), PathBuf> = BTreeMap::new();
    for path in &sources {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| SeqboError::fixture(path, e.to_string()))?;
        let headers = rdr.headers().map_err(|e| SeqboError::fixture(path, e.to_string()))?.clone();
        let [m, sd, rd, b, rm, rx] = ["method", "seed", "round", "best_so_far", "rmsd_mean", "rmsd_max"]
            .map(|c| column(&headers, c, path));
        let (m, sd, rd, b, rm, rx) = (m?, sd?, rd?, b?, rm?, rx?);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| SeqboError::fixture(path, e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |what: &str| SeqboError::fixture(path, format!("line {line}: bad {what}"));
            let method = rec[m].to_string();
            let seed: u64 = rec[sd].parse().map_err(|_| bad("seed"))?;
            let round: usize = rec[rd].parse().map_err(|_| bad("round"))?;
            let best: f64 = rec[b].parse().map_err(|_| bad("best_so_far"))?;
            if let Some(prev) = seen.insert((method.clone(), seed, round), path.clone()) {
                return Err(SeqboError::fixture(
                    path,
                    format!(
                        "{method} seed {seed} round {round} also appears in {}",
                        prev.display()
                    ),
                ));
            }
            let cell = cells.entry((method, round)).or_default();
            cell.best.push(best);
            cell.rmsd.push(parse_opt(&rec[rm], "rmsd_mean", path, line)?);
            cell.rmsd_max.push(parse_opt(&rec[rx], "rmsd_max", path, line)?);
        }
    }
    let rows = cells
        .into_iter()
        .map(|((method, round), c)| {
            let (best_mean, best_se) = mean_se(&c.best);
            let rmsd: Option<Vec<f64>> = c.rmsd.into_iter().collect();
            let rmsd_max: Option<Vec<f64>> = c.rmsd_max.into_iter().collect();
            let (rmsd_mean, rmsd_se) = match rmsd {
                Some(v) => {
                    let (a, b) = mean_se(&v);
                    (Some(a), Some(b))
                }
                None => (None, None),
            };
            SummaryRow {
                method,
                round,
                repeats: c.best.len(),
                best_mean,
                best_se,
                rmsd_mean,
                rmsd_se,
                rmsd_max_mean: rmsd_max.map(|v| mean_se(&v).0),
            }
        })
        .collect();
    Ok(Summary { sources, rows })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl Summary {
    pub fn best_table(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.round.to_string(),
                    r.repeats.to_string(),
                    r.best_mean.to_string(),
                    r.best_se.to_string(),
                ]
            })
            .collect()
    }

    pub fn rmsd_table(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .filter(|r| r.rmsd_mean.is_some())
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.round.to_string(),
                    r.repeats.to_string(),
                    opt(r.rmsd_mean),
                    opt(r.rmsd_se),
                    opt(r.rmsd_max_mean),
                ]
            })
            .collect()
    }

    pub fn methods(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.method.as_str()).collect()
    }
}

fn to_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Writes `best_so_far.csv` and `rmsd.csv` into `out`, or renders both
/// tables as text when `out` is `None`.
pub fn emit(summary: &Summary, out: Option<&Path>) -> Result<Option<String>> {
    let best = to_csv(BEST_HEADER, &summary.best_table());
    let rmsd = to_csv(RMSD_HEADER, &summary.rmsd_table());
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| SeqboError::io(dir, e))?;
            for (name, text) in [("best_so_far.csv", &best), ("rmsd.csv", &rmsd)] {
                let p = dir.join(name);
                fs::write(&p, text).map_err(|e| SeqboError::io(&p, e))?;
            }
            Ok(None)
        }
        None => Ok(Some(format!("# best_so_far\n{best}\n# rmsd\n{rmsd}"))),
    }
}
