//! Per-sequence feature providers with a shared, bounded cache.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use seqbo_core::encoding::SubstitutionMatrix;
use seqbo_core::method::Source;
use seqbo_core::seq::Sequence;
use seqbo_core::structure::{
    align, distance_matrix, substitution_site_probs, synthetic_embedding, StructureContext,
    SyntheticFolder,
};

use crate::error::{Result, SeqboError};
use crate::io;

/// Features of one sequence. `coords` are aligned onto the parental
/// structure and `rmsd` is the deviation after that alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub embedding: Option<Vec<f64>>,
    pub coords: Option<Vec<f64>>,
    pub rmsd: Option<f64>,
}

/// Raw feature source. `None` means the source does not provide that kind
/// of feature at all; a source that provides it but lacks an entry for the
/// sequence returns an error.
pub trait FeatureSource: Send + Sync {
    fn embedding(&self, seq: &Sequence) -> Result<Option<Vec<f64>>>;
    fn coords(&self, seq: &Sequence) -> Result<Option<Vec<f64>>>;
    fn context(&self, parental: &Sequence, source: Source) -> Result<StructureContext>;
}

#[derive(Clone, Debug)]
pub struct SyntheticSource {
    pub seed: u64,
    pub embedding_dim: usize,
    pub temperature: f64,
    pub antibody_temperature: f64,
    pub matrix: SubstitutionMatrix,
}

impl SyntheticSource {
    pub fn new(seed: u64) -> Self {
        SyntheticSource {
            seed,
            embedding_dim: 64,
            temperature: 1.0,
            antibody_temperature: 0.5,
            matrix: SubstitutionMatrix::blosum62(),
        }
    }
}

impl FeatureSource for SyntheticSource {
    fn embedding(&self, seq: &Sequence) -> Result<Option<Vec<f64>>> {
        Ok(Some(synthetic_embedding(seq, self.embedding_dim, self.seed)))
    }

    fn coords(&self, seq: &Sequence) -> Result<Option<Vec<f64>>> {
        Ok(Some(SyntheticFolder::new(self.seed).fold(seq)))
    }

    fn context(&self, parental: &Sequence, source: Source) -> Result<StructureContext> {
        let t = match source {
            Source::General => self.temperature,
            Source::Antibody => self.antibody_temperature,
        };
        let coords = SyntheticFolder::new(self.seed).fold(parental);
        Ok(StructureContext::new(
            substitution_site_probs(parental, &self.matrix, t),
            distance_matrix(&coords),
            coords,
        )?)
    }
}

#[derive(Clone, Debug)]
struct Table {
    path: PathBuf,
    rows: BTreeMap<Sequence, Vec<f64>>,
}

impl Table {
    fn load(path: &Path) -> Result<Self> {
        let (_, rows) = io::read_keyed_vectors(path)?;
        if let Some(w) = rows.values().next().map(Vec::len) {
            if let Some((s, v)) = rows.iter().find(|(_, v)| v.len() != w) {
                return Err(SeqboError::fixture(path, format!("{s} has {} values, expected {w}", v.len())));
            }
        }
        Ok(Table {
            path: path.to_path_buf(),
            rows,
        })
    }

    fn get(&self, seq: &Sequence) -> Result<Vec<f64>> {
        self.rows.get(seq).cloned().ok_or_else(|| {
            SeqboError::fixture(&self.path, format!("no entry for sequence {seq}"))
        })
    }
}

/// Context fixture: site probabilities and a distance matrix.
#[derive(Clone, Debug)]
pub struct ContextFiles {
    pub site_probs: PathBuf,
    pub distances: PathBuf,
}

impl ContextFiles {
    pub fn load(&self, parental_coords: Vec<f64>) -> Result<StructureContext> {
        let probs = io::read_prob_rows(&self.site_probs)?;
        let (n, d) = io::read_square(&self.distances)?;
        if n != probs.len() {
            return Err(SeqboError::fixture(
                &self.distances,
                format!("{n} x {n} distances for {} probability rows", probs.len()),
            ));
        }
        StructureContext::new(probs, d, parental_coords).map_err(|e| {
            let path = match e {
                seqbo_core::Error::Probabilities(_) => &self.site_probs,
                _ => &self.distances,
            };
            SeqboError::fixture(path, e.to_string())
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct FixtureSource {
    embeddings: Option<Table>,
    coords: Option<Table>,
    context: Option<ContextFiles>,
    antibody_context: Option<ContextFiles>,
}

impl FixtureSource {
    pub fn new(
        embeddings: Option<&Path>,
        coords: Option<&Path>,
        context: Option<ContextFiles>,
        antibody_context: Option<ContextFiles>,
    ) -> Result<Self> {
        Ok(FixtureSource {
            embeddings: embeddings.map(Table::load).transpose()?,
            coords: coords.map(Table::load).transpose()?,
            context,
            antibody_context,
        })
    }
}

impl FeatureSource for FixtureSource {
    fn embedding(&self, seq: &Sequence) -> Result<Option<Vec<f64>>> {
        self.embeddings.as_ref().map(|t| t.get(seq)).transpose()
    }

    fn coords(&self, seq: &Sequence) -> Result<Option<Vec<f64>>> {
        let Some(t) = &self.coords else { return Ok(None) };
        let v = t.get(seq)?;
        if v.len() != 3 * seq.len() {
            return Err(SeqboError::fixture(
                &t.path,
                format!("{seq}: {} coordinates, expected {}", v.len(), 3 * seq.len()),
            ));
        }
        Ok(Some(v))
    }

    fn context(&self, parental: &Sequence, source: Source) -> Result<StructureContext> {
        let files = match source {
            Source::General => self.context.as_ref(),
            Source::Antibody => self.antibody_context.as_ref(),
        }
        .ok_or_else(|| SeqboError::Config(format!("no {source:?} structure context fixture configured")))?;
        let coords = self.coords(parental)?.unwrap_or_default();
        let ctx = files.load(coords)?;
        if ctx.len() != parental.len() {
            return Err(SeqboError::fixture(
                &files.site_probs,
                format!("{} rows for a parental of length {}", ctx.len(), parental.len()),
            ));
        }
        Ok(ctx)
    }
}

/// Default number of cached bundles before the cache is reset.
pub const DEFAULT_CACHE_CAPACITY: usize = 200_000;

/// Caching front for a [`FeatureSource`]; safe for concurrent use.
pub struct Features {
    source: Box<dyn FeatureSource>,
    parental: Sequence,
    parental_coords: Option<Vec<f64>>,
    want_embedding: bool,
    cache: RwLock<HashMap<Sequence, Arc<FeatureBundle>>>,
    computed: AtomicUsize,
    capacity: usize,
}

impl Features {
    pub fn new(source: Box<dyn FeatureSource>, parental: Sequence, want_embedding: bool) -> Result<Self> {
        let parental_coords = source.coords(&parental)?;
        Ok(Features {
            source,
            parental,
            parental_coords,
            want_embedding,
            cache: RwLock::new(HashMap::new()),
            computed: AtomicUsize::new(0),
            capacity: DEFAULT_CACHE_CAPACITY,
        })
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity.max(1);
        self
    }

    pub fn parental(&self) -> &Sequence {
        &self.parental
    }

    pub fn parental_coords(&self) -> Option<&[f64]> {
        self.parental_coords.as_deref()
    }

    /// Underlying computations performed so far.
    pub fn computed(&self) -> usize {
        self.computed.load(Ordering::Relaxed)
    }

    pub fn context(&self, source: Source) -> Result<StructureContext> {
        self.source.context(&self.parental, source)
    }

    fn compute(&self, seq: &Sequence) -> Result<FeatureBundle> {
        if seq.len() != self.parental.len() {
            return Err(seqbo_core::Error::LengthMismatch {
                expected: self.parental.len(),
                found: seq.len(),
            }
            .into());
        }
        let embedding = if self.want_embedding {
            self.source.embedding(seq)?
        } else {
            None
        };
        let (coords, rmsd) = match (&self.parental_coords, self.source.coords(seq)?) {
            (Some(reference), Some(raw)) => {
                let a = align(&raw, reference)?;
                (Some(a.coords), Some(a.rmsd))
            }
            _ => (None, None),
        };
        Ok(FeatureBundle {
            embedding,
            coords,
            rmsd,
        })
    }

    pub fn get(&self, seq: &Sequence) -> Result<Arc<FeatureBundle>> {
        if let Some(b) = self.cache.read().unwrap().get(seq) {
            return Ok(b.clone());
        }
        let bundle = Arc::new(self.compute(seq)?);
        self.computed.fetch_add(1, Ordering::Relaxed);
        let mut cache = self.cache.write().unwrap();
        if cache.len() >= self.capacity {
            cache.clear();
        }
        Ok(cache.entry(seq.clone()).or_insert(bundle).clone())
    }
}

/// Mean and max RMSD to the parental structure over `batch`, or `None` when
/// no coordinates are available.
pub fn rmsd_to_parental(features: &Features, batch: &[Sequence]) -> Result<Option<(f64, f64)>> {
    if batch.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for s in batch {
        let Some(r) = features.get(s)?.rmsd else { return Ok(None) };
        sum += r;
        max = max.max(r);
    }
    Ok(Some((sum / batch.len() as f64, max)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use seqbo_core::seq::Residue;

    fn parental() -> Sequence {
        "EVQLVESGGGLVQPG".parse().unwrap()
    }

    #[test]
    fn parental_has_zero_rmsd() {
        let f = Features::new(Box::new(SyntheticSource::new(3)), parental(), true).unwrap();
        let b = f.get(&parental()).unwrap();
        assert!(b.rmsd.unwrap() < 1e-9);
        assert_eq!(rmsd_to_parental(&f, &[parental()]).unwrap(), Some((b.rmsd.unwrap(), b.rmsd.unwrap())));
        let m = parental().mutate(4, Residue::from_char('W').unwrap()).unwrap();
        let (mean, max) = rmsd_to_parental(&f, &[m]).unwrap().unwrap();
        assert!(mean > 0.0 && mean == max);
    }

    #[test]
    fn cache_counts_one_computation() {
        let f = Features::new(Box::new(SyntheticSource::new(3)), parental(), true).unwrap();
        let m = parental().mutate(2, Residue::from_char('A').unwrap()).unwrap();
        let first = f.get(&m).unwrap();
        for _ in 0..10 {
            assert_eq!(*f.get(&m).unwrap(), *first);
        }
        assert_eq!(f.computed(), 1);
        let small = Features::new(Box::new(SyntheticSource::new(3)), parental(), false)
            .unwrap()
            .with_capacity(1);
        small.get(&m).unwrap();
        small.get(&parental()).unwrap();
        small.get(&m).unwrap();
        assert_eq!(small.computed(), 3);
        assert!(small.get(&m).unwrap().embedding.is_none());
    }

    #[test]
    fn synthetic_context_is_valid() {
        let src = SyntheticSource::new(0);
        let p: Sequence = "EVQLV".parse().unwrap();
        let ctx = src.context(&p, Source::General).unwrap();
        assert_eq!(ctx.len(), 5);
        for i in 0..5 {
            assert_eq!(ctx.distance(i, i), 0.0);
            for j in 0..5 {
                assert_eq!(ctx.distance(i, j), ctx.distance(j, i));
            }
        }
        for row in ctx.site_probs() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn fixture_context_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let probs = dir.path().join("p.tsv");
        let dist = dir.path().join("d.tsv");
        let row = vec![0.05; 20];
        io::write_matrix(&probs, [row.clone(), row.clone()]).unwrap();
        io::write_matrix(&dist, [vec![0.0, 3.8], vec![3.8, 0.0]]).unwrap();
        let files = ContextFiles {
            site_probs: probs.clone(),
            distances: dist.clone(),
        };
        assert_eq!(files.load(Vec::new()).unwrap().len(), 2);
        let short: Vec<f64> = (0..20).map(|i| if i < 16 { 0.05 } else { 0.0 }).collect();
        io::write_matrix(&probs, [short, vec![0.05; 20]]).unwrap();
        let err = files.load(Vec::new()).unwrap_err();
        assert!(matches!(err, SeqboError::Fixture { path: Some(ref p), .. } if *p == probs), "{err}");
    }

    #[test]
    fn fixture_missing_entry_names_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let emb = dir.path().join("e.csv");
        std::fs::write(&emb, format!("sequence,e0,e1\n{},0.1,0.2\n", parental())).unwrap();
        let src = FixtureSource::new(Some(&emb), None, None, None).unwrap();
        let f = Features::new(Box::new(src), parental(), true).unwrap();
        assert_eq!(f.get(&parental()).unwrap().embedding, Some(vec![0.1, 0.2]));
        assert!(f.get(&parental()).unwrap().coords.is_none());
        let m = parental().mutate(0, Residue::from_char('A').unwrap()).unwrap();
        let err = f.get(&m).unwrap_err().to_string();
        assert!(err.contains(&m.to_string()), "{err}");
    }
}
