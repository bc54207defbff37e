//! Simulated optimization campaigns.
//!
//! A repeat starts from a seeded subsample of the initial pool and runs the
//! round loop: fit the surrogate, evolve a candidate front, select a batch
//! with the portfolio solver, drop part of it at random, and observe the
//! rest. Repeat `r` uses seed `seed + r`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use seqbo_core::acquisition::{select_batch, PortfolioProblem};
use seqbo_core::encoding::{EncodingMatrix, SubstitutionMatrix};
use seqbo_core::gp::{zero_shot_score, Dataset, FitOptions, GpModel};
use seqbo_core::hash::hash_words;
use seqbo_core::kernels::{Channel, Kernel, Param, Point};
use seqbo_core::method::{Acquisition, MethodSpec, Source};
use seqbo_core::nsga::{evolve, Individual};
use seqbo_core::optim::LbfgsOptions;
use seqbo_core::oracle::{LandscapeKind, SyntheticLandscape};
use seqbo_core::plm::{LikelihoodProvider, LogProbTable, Pssm};
use seqbo_core::seq::{MutationSet, Residue, Sequence, NUM_RESIDUES};
use seqbo_core::structure::{substitution_site_probs, StructureContext};

use crate::config::{CampaignConfig, OracleKind, PlmKind, ProviderKind};
use crate::error::{Result, SeqboError};
use crate::features::{rmsd_to_parental, ContextFiles, FeatureSource, Features, FixtureSource, SyntheticSource};
use crate::io;

/// Ground-truth objective, maximized.
#[derive(Clone, Debug)]
pub enum Oracle {
    /// Synthetic landscape reported relative to the parental, so the
    /// parental scores 0.
    Synthetic {
        landscape: SyntheticLandscape,
        baseline: f64,
    },
    Table {
        path: PathBuf,
        values: BTreeMap<Sequence, f64>,
    },
}

impl Oracle {
    pub fn from_config(cfg: &CampaignConfig, parental: &Sequence) -> Result<Self> {
        let kind = match cfg.oracle.kind {
            OracleKind::Affinity => LandscapeKind::Affinity,
            OracleKind::Thermostability => LandscapeKind::Thermostability,
            OracleKind::Fixture => {
                let path = cfg.resolve(cfg.oracle.path.as_deref().ok_or_else(|| {
                    SeqboError::Config("oracle kind `fixture` needs `oracle.path`".into())
                })?);
                let values = io::read_keyed_scalars(&path)?;
                return Ok(Oracle::Table { path, values });
            }
        };
        let landscape = SyntheticLandscape::new(kind, parental.len(), cfg.oracle.seed, cfg.features.seed)?;
        let baseline = landscape.evaluate(parental)?;
        Ok(Oracle::Synthetic { landscape, baseline })
    }

    pub fn evaluate(&self, seq: &Sequence) -> Result<f64> {
        match self {
            Oracle::Synthetic { landscape, baseline } => Ok(landscape.evaluate(seq)? - baseline),
            Oracle::Table { path, values } => values
                .get(seq)
                .copied()
                .ok_or_else(|| SeqboError::fixture(path, format!("no oracle value for sequence {seq}"))),
        }
    }
}

/// Uniformly random mutant of `parental` at `sites` distinct positions, each
/// substituted by a different residue.
pub fn random_mutant(parental: &Sequence, sites: usize, rng: &mut impl Rng) -> Sequence {
    let sites = sites.min(parental.len());
    let mut residues = parental.residues().to_vec();
    for pos in index::sample(rng, parental.len(), sites) {
        let from = residues[pos].index();
        let k = rng.gen_range(0..NUM_RESIDUES - 1);
        let to = if k >= from { k + 1 } else { k };
        residues[pos] = Residue::from_index(to).expect("index below 20");
    }
    Sequence::new(residues)
}

/// `size` distinct mutants with 1 or 2 substitutions.
pub fn generate_pool(parental: &Sequence, size: usize, seed: u64) -> Result<Vec<Sequence>> {
    let l = parental.len();
    let available = l * (NUM_RESIDUES - 1) + l * l.saturating_sub(1) / 2 * (NUM_RESIDUES - 1).pow(2);
    if size > available {
        return Err(SeqboError::Config(format!(
            "pool_size {size} exceeds the {available} one- and two-site mutants"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hash_words(&[seed, 0x706f_6f6c]));
    let mut seen = BTreeSet::new();
    let mut pool = Vec::with_capacity(size);
    while pool.len() < size {
        let s = random_mutant(parental, rng.gen_range(1..=2.min(l)), &mut rng);
        if seen.insert(s.clone()) {
            pool.push(s);
        }
    }
    Ok(pool)
}

fn load_matrix(cfg: &CampaignConfig) -> Result<SubstitutionMatrix> {
    match &cfg.features.matrix {
        None => Ok(SubstitutionMatrix::blosum62()),
        Some(p) => {
            let path = cfg.resolve(p);
            let text = fs::read_to_string(&path).map_err(|e| SeqboError::io(&path, e))?;
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("matrix");
            SubstitutionMatrix::parse_ncbi(name, &text).map_err(|e| SeqboError::fixture(&path, e.to_string()))
        }
    }
}

fn load_pssm(path: &Path, parental: &Sequence) -> Result<Pssm> {
    let rows = io::read_prob_rows(path)?;
    if rows.len() != parental.len() {
        return Err(SeqboError::fixture(
            path,
            format!("{} rows for a parental of length {}", rows.len(), parental.len()),
        ));
    }
    Pssm::new(rows).map_err(|e| SeqboError::fixture(path, e.to_string()))
}

pub fn likelihood_provider(cfg: &CampaignConfig, parental: &Sequence, matrix: &SubstitutionMatrix) -> Result<LikelihoodProvider> {
    let plm = &cfg.plm;
    let path = || {
        plm.path
            .as_deref()
            .map(|p| cfg.resolve(p))
            .ok_or_else(|| SeqboError::Config(format!("plm kind `{}` needs `plm.path`", plm.kind.name())))
    };
    Ok(match plm.kind {
        PlmKind::Substitution => LikelihoodProvider::from_pssm(Pssm::substitution(parental, matrix, plm.temperature)),
        PlmKind::Parental => LikelihoodProvider::from_pssm(Pssm::parental(parental, plm.concentration)?),
        PlmKind::Uniform => LikelihoodProvider::from_pssm(Pssm::uniform(parental.len())),
        PlmKind::Pssm => LikelihoodProvider::from_pssm(load_pssm(&path()?, parental)?),
        PlmKind::Fixture => {
            let p = path()?;
            let values = io::read_keyed_scalars(&p)?;
            LikelihoodProvider::from_fixture(values, None).map_err(|e| SeqboError::fixture(&p, e.to_string()))?
        }
    })
}

pub fn zero_shot_table(
    cfg: &CampaignConfig,
    parental: &Sequence,
    matrix: &SubstitutionMatrix,
    source: Source,
) -> Result<LogProbTable> {
    let zs = &cfg.zero_shot;
    let (file, t) = match source {
        Source::General => (&zs.table, zs.temperature),
        Source::Antibody => (&zs.antibody_table, zs.antibody_temperature),
    };
    let pssm = match file {
        Some(p) => load_pssm(&cfg.resolve(p), parental)?,
        None => Pssm::new(substitution_site_probs(parental, matrix, t))?,
    };
    Ok(pssm.log_prob_table())
}

pub fn feature_source(cfg: &CampaignConfig, matrix: &SubstitutionMatrix) -> Result<Box<dyn FeatureSource>> {
    let f = &cfg.features;
    Ok(match f.kind {
        ProviderKind::Synthetic => Box::new(SyntheticSource {
            seed: f.seed,
            embedding_dim: f.embedding_dim,
            temperature: f.temperature,
            antibody_temperature: f.antibody_temperature,
            matrix: matrix.clone(),
        }),
        ProviderKind::Fixture => {
            let ctx = |probs: &Option<PathBuf>| -> Option<ContextFiles> {
                Some(ContextFiles {
                    site_probs: cfg.resolve(probs.as_deref()?),
                    distances: cfg.resolve(f.distances.as_deref()?),
                })
            };
            let emb = f.embeddings.as_deref().map(|p| cfg.resolve(p));
            let coords = f.coords.as_deref().map(|p| cfg.resolve(p));
            Box::new(FixtureSource::new(
                emb.as_deref(),
                coords.as_deref(),
                ctx(&f.site_probs),
                ctx(&f.antibody_site_probs),
            )?)
        }
    })
}

/// Everything a repeat needs, shared read-only across repeats.
pub struct Environment {
    pub config: CampaignConfig,
    pub method: MethodSpec,
    pub parental: Arc<Sequence>,
    pub pool: Vec<Sequence>,
    pub oracle: Oracle,
    pub features: Features,
    pub likelihood: LikelihoodProvider,
    zero_shot: Option<LogProbTable>,
    context: Option<Arc<StructureContext>>,
    one_hot: EncodingMatrix,
    blosum: EncodingMatrix,
    channels: Vec<Channel>,
}

impl Environment {
    pub fn build(config: CampaignConfig) -> Result<Self> {
        let problems = config.check();
        if !problems.is_empty() {
            return Err(SeqboError::Config(problems.join("; ")));
        }
        let parental = config.parental_sequence()?;
        let method = config.method_spec()?;
        let matrix = load_matrix(&config)?;
        let channels = if method.acquisition == Acquisition::Random {
            Vec::new()
        } else {
            method.channels()
        };
        let features = Features::new(
            feature_source(&config, &matrix)?,
            parental.clone(),
            channels.contains(&Channel::Embedding),
        )?
        .with_capacity(config.features.cache_capacity.unwrap_or(crate::features::DEFAULT_CACHE_CAPACITY));
        if channels.contains(&Channel::Coords) && features.parental_coords().is_none() {
            return Err(SeqboError::Config(format!("{} needs coordinate features", method.name)));
        }
        let pool = match &config.protocol.pool {
            Some(p) => {
                let path = config.resolve(p);
                let pool = io::read_sequences(&path)?;
                let mut seen = BTreeSet::new();
                for s in &pool {
                    if s.len() != parental.len() {
                        return Err(SeqboError::fixture(
                            &path,
                            format!("{s} has length {}, parental has {}", s.len(), parental.len()),
                        ));
                    }
                    if !seen.insert(s) {
                        return Err(SeqboError::fixture(&path, format!("duplicate sequence {s}")));
                    }
                }
                if pool.len() < config.protocol.initial_size {
                    return Err(SeqboError::fixture(
                        &path,
                        format!("{} sequences, initial_size is {}", pool.len(), config.protocol.initial_size),
                    ));
                }
                pool
            }
            None => generate_pool(&parental, config.protocol.pool_size, config.seed)?,
        };
        let oracle = Oracle::from_config(&config, &parental)?;
        let likelihood = likelihood_provider(&config, &parental, &matrix)?;
        let zero_shot = method
            .zero_shot_source()
            .map(|s| zero_shot_table(&config, &parental, &matrix, s))
            .transpose()?;
        let context = method
            .context_source()
            .map(|s| features.context(s).map(Arc::new))
            .transpose()?;
        Ok(Environment {
            one_hot: EncodingMatrix::one_hot(),
            blosum: EncodingMatrix::from_substitution(&matrix),
            parental: Arc::new(parental),
            config,
            method,
            pool,
            oracle,
            features,
            likelihood,
            zero_shot,
            context,
            channels,
        })
    }

    /// Kernel input for `seq`, carrying only the channels the method reads.
    pub fn point(&self, seq: &Sequence) -> Result<Point> {
        let ms = MutationSet::diff(&self.parental, seq)?;
        let zs = match &self.zero_shot {
            Some(t) => zero_shot_score(t, &ms)?,
            None => 0.0,
        };
        let mut p = Point::new(ms).with_zero_shot(zs);
        let bundle = if self.channels.iter().any(|c| matches!(c, Channel::Embedding | Channel::Coords)) {
            Some(self.features.get(seq)?)
        } else {
            None
        };
        for &c in &self.channels {
            let values = match c {
                Channel::OneHot => self.one_hot.encode(seq),
                Channel::Blosum => self.blosum.encode(seq),
                Channel::Embedding => bundle.as_ref().and_then(|b| b.embedding.clone()).ok_or_else(|| {
                    SeqboError::coverage(format!("no embedding for sequence {seq}"))
                })?,
                Channel::Coords => bundle.as_ref().and_then(|b| b.coords.clone()).ok_or_else(|| {
                    SeqboError::coverage(format!("no coordinates for sequence {seq}"))
                })?,
            };
            p.set_channel(c, values);
        }
        Ok(p)
    }

    pub fn fresh_kernel(&self) -> Result<Kernel> {
        Ok(self.method.build_kernel(self.context.clone())?)
    }

    /// Initial sample drawn from the pool; the same for every method on a seed.
    pub fn initial_sample(&self, rng: &mut ChaCha8Rng) -> Vec<Sequence> {
        index::sample(rng, self.pool.len(), self.config.protocol.initial_size)
            .into_iter()
            .map(|i| self.pool[i].clone())
            .collect()
    }

    /// Observes `seqs` with the oracle into a fresh dataset.
    pub fn observe(&self, seqs: &[Sequence]) -> Result<(Dataset, Vec<(Sequence, f64)>)> {
        let mut data = Dataset::new();
        let mut observed = Vec::with_capacity(seqs.len());
        for s in seqs {
            let y = self.oracle.evaluate(s)?;
            data.push(s.clone(), self.point(s)?, y)?;
            observed.push((s.clone(), y));
        }
        Ok((data, observed))
    }

    pub fn fit_options(&self, noise: f64, seed: u64) -> FitOptions {
        let gp = &self.config.gp;
        FitOptions {
            restarts: gp.restarts,
            seed,
            noise: Param::free(noise),
            lbfgs: LbfgsOptions {
                max_iter: gp.max_iter,
                grad_tol: gp.grad_tol,
                f_tol: gp.f_tol,
                ..LbfgsOptions::default()
            },
        }
    }

    fn max_sites(&self) -> usize {
        self.config.protocol.max_mutations.unwrap_or(3).clamp(1, 3)
    }

    /// `count` distinct random mutants outside `exclude`.
    fn random_batch(&self, count: usize, exclude: &BTreeSet<Sequence>, rng: &mut ChaCha8Rng) -> Result<Vec<Sequence>> {
        let mut out = Vec::with_capacity(count);
        let mut seen = exclude.clone();
        let mut attempts = 0usize;
        while out.len() < count {
            attempts += 1;
            if attempts > 1000 * (count + 1) {
                return Err(SeqboError::Config(format!(
                    "could not draw {count} new mutants within the mutation limit"
                )));
            }
            let s = random_mutant(&self.parental, rng.gen_range(1..=self.max_sites()), rng);
            if seen.insert(s.clone()) {
                out.push(s);
            }
        }
        Ok(out)
    }
}

/// One candidate considered by the batch selector.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateRow {
    pub sequence: Sequence,
    pub mean: f64,
    pub std: f64,
    pub r: f64,
    pub z: f64,
    pub plik: Option<f64>,
    pub selected: bool,
    pub dropped: bool,
}

/// Outcome of one round; round 0 is the initial sample.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Observations after this round.
    pub dataset_size: usize,
    pub acquired: Vec<Sequence>,
    pub dropped: Vec<Sequence>,
    pub observed: Vec<(Sequence, f64)>,
    pub best_so_far: f64,
    pub batch_best: Option<f64>,
    pub mean_plik: Option<f64>,
    /// Mean and max RMSD to the parental over the acquired batch.
    pub rmsd: Option<(f64, f64)>,
    pub front_size: usize,
    /// Candidates added beyond the front to reach the batch size.
    pub padded: usize,
    pub hyperparameters: Vec<(String, f64)>,
    pub lml: Option<f64>,
    pub candidates: Vec<CandidateRow>,
    /// Rank-0 individuals per GA generation; kept only when verbose.
    pub fronts: Vec<Vec<Individual>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepeatLog {
    pub repeat: usize,
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
}

struct Proposal {
    candidates: Vec<CandidateRow>,
    batch: Vec<Sequence>,
    front_size: usize,
    padded: usize,
    hyperparameters: Vec<(String, f64)>,
    lml: Option<f64>,
    fronts: Vec<Vec<Individual>>,
    warm: Option<(Kernel, f64)>,
}

fn plik_of(env: &Environment, seqs: &[Sequence], required: bool) -> Result<Option<Vec<f64>>> {
    let r: std::result::Result<Vec<f64>, _> = seqs.iter().map(|s| env.likelihood.pseudo_likelihood(s)).collect();
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if required => Err(SeqboError::coverage(e.to_string())),
        Err(_) => Ok(None),
    }
}

fn propose(
    env: &Environment,
    data: &Dataset,
    warm: Option<&(Kernel, f64)>,
    repeat_seed: u64,
    round: usize,
    verbose: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Proposal> {
    let cfg = &env.config;
    let q = cfg.protocol.batch_size;
    let observed: BTreeSet<Sequence> = data.sequences().iter().cloned().collect();
    if env.method.acquisition == Acquisition::Random {
        let batch = env.random_batch(q, &observed, rng)?;
        let candidates = batch
            .iter()
            .map(|s| CandidateRow {
                sequence: s.clone(),
                mean: f64::NAN,
                std: f64::NAN,
                r: f64::NAN,
                z: f64::NAN,
                plik: None,
                selected: true,
                dropped: false,
            })
            .collect();
        return Ok(Proposal {
            candidates,
            batch,
            front_size: 0,
            padded: 0,
            hyperparameters: Vec::new(),
            lml: None,
            fronts: Vec::new(),
            warm: None,
        });
    }

    let (kernel, noise) = match warm {
        Some((k, n)) if cfg.gp.warm_start => (k.clone(), *n),
        _ => (env.fresh_kernel()?, cfg.gp.noise),
    };
    let opts = env.fit_options(noise, hash_words(&[repeat_seed, round as u64, 0x6770]));
    let model = GpModel::fit(data, kernel, env.method.prior_mean(), &opts)?;
    log::debug!("round {round}: fitted {:?}", model.hyperparameters());

    let constrained = env.method.constrained;
    let failure: Mutex<Option<SeqboError>> = Mutex::new(None);
    let objectives = |s: &Sequence| -> Result<Vec<f64>> {
        let pred = model.predict(&env.point(s)?)?;
        let mut o = vec![pred.mean, pred.std];
        if constrained {
            o.push(env.likelihood.pseudo_likelihood(s).map_err(|e| SeqboError::coverage(e.to_string()))?);
        }
        Ok(o)
    };
    let evaluate = |seqs: &[Sequence]| -> seqbo_core::Result<Vec<Vec<f64>>> {
        seqs.par_iter().map(|s| objectives(s)).collect::<Result<Vec<_>>>().map_err(|e| {
            let msg = e.to_string();
            failure.lock().unwrap().get_or_insert(e);
            seqbo_core::Error::InvalidInput(msg)
        })
    };
    let mut seeds: Vec<(f64, &Sequence)> = data.targets().iter().copied().zip(data.sequences()).collect();
    seeds.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let seeds: Vec<Sequence> = seeds.into_iter().take(cfg.ga.seeds).map(|(_, s)| s.clone()).collect();
    let ga_cfg = cfg.ga_config(constrained, hash_words(&[repeat_seed, round as u64, 0x6761]));
    let mut fronts = Vec::new();
    let mut record = |_: usize, pop: &[Individual]| {
        fronts.push(pop.iter().filter(|i| i.rank == 0).cloned().collect());
    };
    let observer: Option<&mut dyn FnMut(usize, &[Individual])> = if verbose { Some(&mut record) } else { None };
    let out = match evolve(&env.parental, &seeds, &observed, evaluate, &ga_cfg, observer) {
        Ok(o) => o,
        Err(e) => return Err(failure.into_inner().unwrap().unwrap_or(SeqboError::from(e))),
    };

    let front_size = out.front.len();
    let mut cands: Vec<(Sequence, Vec<f64>)> = out.front.into_iter().map(|i| (i.sequence, i.objectives)).collect();
    let mut taken: BTreeSet<Sequence> = cands.iter().map(|c| c.0.clone()).collect();
    for ind in out.ranked {
        if cands.len() >= q {
            break;
        }
        if taken.insert(ind.sequence.clone()) {
            cands.push((ind.sequence, ind.objectives));
        }
    }
    if cands.len() < q {
        let exclude: BTreeSet<Sequence> = observed.union(&taken).cloned().collect();
        for s in env.random_batch(q - cands.len(), &exclude, rng)? {
            let o = objectives(&s)?;
            cands.push((s, o));
        }
    }
    let padded = cands.len().saturating_sub(front_size);
    if padded > 0 {
        log::info!("round {round}: front has {front_size} candidates, padded with {padded} to reach {q}");
    }

    let points: Vec<[f64; 2]> = cands.iter().map(|(_, o)| [o[0], o[1]]).collect();
    let seqs: Vec<Sequence> = cands.iter().map(|c| c.0.clone()).collect();
    let pliks = if constrained {
        Some(cands.iter().map(|(_, o)| o[2]).collect::<Vec<_>>())
    } else {
        plik_of(env, &seqs, false)?
    };
    let mut problem = PortfolioProblem::new(points)?;
    if constrained {
        problem = problem.with_likelihoods(pliks.clone().expect("constrained objectives carry likelihoods"))?;
    }
    let sel = select_batch(&problem, q)?;
    let mut candidates: Vec<CandidateRow> = cands
        .iter()
        .enumerate()
        .map(|(i, (s, o))| CandidateRow {
            sequence: s.clone(),
            mean: o[0],
            std: o[1],
            r: sel.portfolio.r[i],
            z: sel.solution.z[i],
            plik: pliks.as_ref().map(|p| p[i]),
            selected: false,
            dropped: false,
        })
        .collect();
    for &i in &sel.selected {
        candidates[i].selected = true;
    }
    let batch = sel.selected.iter().map(|&i| seqs[i].clone()).collect();
    let warm = Some((model.kernel().clone(), model.noise()));
    Ok(Proposal {
        candidates,
        batch,
        front_size,
        padded,
        hyperparameters: model.hyperparameters(),
        lml: Some(model.log_marginal_likelihood()),
        fronts,
        warm,
    })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs repeat `repeat` of the campaign.
pub fn run_repeat(env: &Environment, repeat: usize, verbose: bool) -> Result<RepeatLog> {
    let cfg = &env.config;
    let p = &cfg.protocol;
    let seed = cfg.seed.wrapping_add(repeat as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let initial = env.initial_sample(&mut rng);
    let (mut data, observed) = env.observe(&initial)?;
    let best = |d: &Dataset| d.best().map(|(_, y)| y).expect("dataset is nonempty");
    let mut rounds = vec![RoundRecord {
        round: 0,
        dataset_size: data.len(),
        acquired: initial.clone(),
        dropped: Vec::new(),
        batch_best: observed.iter().map(|o| o.1).reduce(f64::max),
        observed,
        best_so_far: best(&data),
        mean_plik: plik_of(env, &initial, false)?.and_then(|v| mean(&v)),
        rmsd: rmsd_to_parental(&env.features, &initial)?,
        front_size: 0,
        padded: 0,
        hyperparameters: Vec::new(),
        lml: None,
        candidates: Vec::new(),
        fronts: Vec::new(),
    }];
    log::info!("repeat {repeat}: initial best {:.4}", rounds[0].best_so_far);

    let mut warm = None;
    for round in 1..=p.rounds {
        let mut prop = propose(env, &data, warm.as_ref(), seed, round, verbose, &mut rng)?;
        warm = prop.warm.take();
        let batch = prop.batch;
        let drop: BTreeSet<usize> = index::sample(&mut rng, batch.len(), p.drop_count.min(batch.len()))
            .into_iter()
            .collect();
        let dropped: Vec<Sequence> = drop.iter().map(|&i| batch[i].clone()).collect();
        let dropped_set: BTreeSet<&Sequence> = dropped.iter().collect();
        for c in &mut prop.candidates {
            c.dropped = dropped_set.contains(&c.sequence);
        }
        let mut observed = Vec::with_capacity(batch.len() - drop.len());
        for (i, s) in batch.iter().enumerate() {
            if drop.contains(&i) {
                continue;
            }
            let y = env.oracle.evaluate(s)?;
            data.push(s.clone(), env.point(s)?, y)?;
            observed.push((s.clone(), y));
        }
        let rec = RoundRecord {
            round,
            dataset_size: data.len(),
            mean_plik: plik_of(env, &batch, env.method.constrained)?.and_then(|v| mean(&v)),
            rmsd: rmsd_to_parental(&env.features, &batch)?,
            acquired: batch,
            dropped,
            batch_best: observed.iter().map(|o| o.1).reduce(f64::max),
            observed,
            best_so_far: best(&data),
            front_size: prop.front_size,
            padded: prop.padded,
            hyperparameters: prop.hyperparameters,
            lml: prop.lml,
            candidates: prop.candidates,
            fronts: prop.fronts,
        };
        log::info!(
            "repeat {repeat} round {round}: n = {}, best {:.4}, batch best {:.4}",
            rec.dataset_size,
            rec.best_so_far,
            rec.batch_best.unwrap_or(f64::NAN)
        );
        rounds.push(rec);
    }
    Ok(RepeatLog { repeat, seed, rounds })
}

/// Runs every repeat; repeats execute concurrently and are returned in order.
pub fn run_campaign(env: &Environment, verbose: bool) -> Result<Vec<RepeatLog>> {
    (0..env.config.protocol.repeats)
        .into_par_iter()
        .map(|r| run_repeat(env, r, verbose))
        .collect()
}

/// Arithmetic mean and standard error (sample standard deviation over
/// `sqrt(n)`; 0 for a single value).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub round: usize,
    pub repeats: usize,
    pub best_mean: f64,
    pub best_se: f64,
    pub rmsd_mean: Option<f64>,
    pub rmsd_se: Option<f64>,
}

pub fn aggregate(logs: &[RepeatLog]) -> Vec<AggregateRow> {
    let rounds = logs.iter().map(|l| l.rounds.len()).min().unwrap_or(0);
    (0..rounds)
        .map(|k| {
            let best: Vec<f64> = logs.iter().map(|l| l.rounds[k].best_so_far).collect();
            let rmsd: Option<Vec<f64>> = logs.iter().map(|l| l.rounds[k].rmsd.map(|r| r.0)).collect();
            let (best_mean, best_se) = mean_se(&best);
            let (rmsd_mean, rmsd_se) = match rmsd {
                Some(v) => {
                    let (m, s) = mean_se(&v);
                    (Some(m), Some(s))
                }
                None => (None, None),
            };
            AggregateRow {
                round: k,
                repeats: logs.len(),
                best_mean,
                best_se,
                rmsd_mean,
                rmsd_se,
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn nan_empty(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| SeqboError::fixture(path, e.to_string()))
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    let err = |e: csv::Error| SeqboError::fixture(path, e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r.into_iter().collect::<Vec<_>>()).map_err(err)?;
    }
    w.flush().map_err(|e| SeqboError::io(path, e))
}

pub const ROUNDS_HEADER: &[&str] = &[
    "method",
    "repeat",
    "seed",
    "round",
    "dataset_size",
    "acquired",
    "dropped",
    "observed",
    "best_so_far",
    "batch_best",
    "mean_plik",
    "rmsd_mean",
    "rmsd_max",
    "front_size",
    "padded",
    "log_marginal_likelihood",
];

pub const AGGREGATE_HEADER: &[&str] = &[
    "method",
    "round",
    "repeats",
    "best_so_far_mean",
    "best_so_far_se",
    "rmsd_mean",
    "rmsd_se",
];

/// Writes `rounds.csv`, `aggregate.csv`, the resolved config, and per-repeat
/// observations, hyperparameters, acquisition tables and (when present)
/// per-generation fronts.
pub fn write_outputs(dir: &Path, env: &Environment, logs: &[RepeatLog]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SeqboError::io(dir, e))?;
    let method = &env.method.name;
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, env.config.to_toml()).map_err(|e| SeqboError::io(&cfg_path, e))?;

    let rows = logs.iter().flat_map(|l| {
        l.rounds.iter().map(move |r| {
            vec![
                method.clone(),
                l.repeat.to_string(),
                l.seed.to_string(),
                r.round.to_string(),
                r.dataset_size.to_string(),
                r.acquired.len().to_string(),
                r.dropped.len().to_string(),
                r.observed.len().to_string(),
                r.best_so_far.to_string(),
                opt(r.batch_best),
                opt(r.mean_plik),
                opt(r.rmsd.map(|x| x.0)),
                opt(r.rmsd.map(|x| x.1)),
                r.front_size.to_string(),
                r.padded.to_string(),
                opt(r.lml),
            ]
        })
    });
    write_rows(&dir.join("rounds.csv"), ROUNDS_HEADER, rows)?;

    let agg = aggregate(logs).into_iter().map(|a| {
        vec![
            method.clone(),
            a.round.to_string(),
            a.repeats.to_string(),
            a.best_mean.to_string(),
            a.best_se.to_string(),
            opt(a.rmsd_mean),
            opt(a.rmsd_se),
        ]
    });
    write_rows(&dir.join("aggregate.csv"), AGGREGATE_HEADER, agg)?;

    for l in logs {
        let rdir = dir.join(format!("repeat{}", l.repeat));
        fs::create_dir_all(&rdir).map_err(|e| SeqboError::io(&rdir, e))?;
        let obs = l.rounds.iter().flat_map(|r| {
            let dropped: BTreeSet<&Sequence> = r.dropped.iter().collect();
            let values: BTreeMap<&Sequence, f64> = r.observed.iter().map(|(s, y)| (s, *y)).collect();
            r.acquired
                .iter()
                .map(|s| {
                    let status = if dropped.contains(s) { "dropped" } else { "observed" };
                    vec![
                        r.round.to_string(),
                        s.to_string(),
                        status.to_string(),
                        opt(values.get(s).copied()),
                    ]
                })
                .collect::<Vec<_>>()
        });
        write_rows(&rdir.join("observations.csv"), &["round", "sequence", "status", "value"], obs)?;

        for r in l.rounds.iter().filter(|r| r.round > 0) {
            if r.lml.is_some() {
                let mut text = String::new();
                let _ = writeln!(text, "# {method}, repeat {}, round {}", l.repeat, r.round);
                for (name, v) in &r.hyperparameters {
                    let _ = writeln!(text, "{name} = {v}");
                }
                let _ = writeln!(text, "log_marginal_likelihood = {}", opt(r.lml));
                let hp = rdir.join(format!("hyperparams_round{}.txt", r.round));
                fs::write(&hp, text).map_err(|e| SeqboError::io(&hp, e))?;
            }
            let cands = r.candidates.iter().enumerate().map(|(i, c)| {
                vec![
                    i.to_string(),
                    c.sequence.to_string(),
                    nan_empty(c.mean),
                    nan_empty(c.std),
                    nan_empty(c.r),
                    nan_empty(c.z),
                    opt(c.plik),
                    u8::from(c.selected).to_string(),
                    u8::from(c.dropped).to_string(),
                ]
            });
            write_rows(
                &rdir.join(format!("acquisition_round{}.csv", r.round)),
                &["id", "sequence", "mean", "std", "r", "z", "plik", "selected", "dropped"],
                cands,
            )?;
            if !r.fronts.is_empty() {
                let fdir = rdir.join(format!("round{}", r.round));
                fs::create_dir_all(&fdir).map_err(|e| SeqboError::io(&fdir, e))?;
                for (g, front) in r.fronts.iter().enumerate() {
                    let dim = front.first().map_or(0, |i| i.objectives.len());
                    let mut header = vec!["sequence".to_string()];
                    header.extend((0..dim).map(|k| format!("objective{k}")));
                    header.push("crowding".into());
                    let h: Vec<&str> = header.iter().map(String::as_str).collect();
                    let rows = front.iter().map(|i| {
                        let mut row = vec![i.sequence.to_string()];
                        row.extend(i.objectives.iter().map(|v| v.to_string()));
                        row.push(i.crowding.to_string());
                        row
                    });
                    write_rows(&fdir.join(format!("front_gen{g}.csv")), &h, rows)?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(method: &str) -> CampaignConfig {
        let mut c = CampaignConfig::default();
        c.method = method.into();
        c.parental = "EVQLVESGGGLVQPG".into();
        c.protocol.pool_size = 30;
        c.protocol.initial_size = 10;
        c.protocol.rounds = 2;
        c.protocol.batch_size = 8;
        c.protocol.drop_count = 3;
        c.protocol.repeats = 2;
        c.ga.population_size = 16;
        c.ga.generations = 4;
        c.gp.restarts = 2;
        c.gp.max_iter = 30;
        c
    }

    #[test]
    fn mean_se_definition() {
        assert_eq!(mean_se(&[2.0]), (2.0, 0.0));
        let (m, se) = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pool_is_distinct_one_and_two_site_mutants() {
        let p: Sequence = "EVQLVESGGG".parse().unwrap();
        let pool = generate_pool(&p, 159, 4).unwrap();
        assert_eq!(pool.len(), 159);
        assert_eq!(pool.iter().collect::<BTreeSet<_>>().len(), 159);
        for s in &pool {
            let d = s.hamming(&p).unwrap();
            assert!((1..=2).contains(&d), "{s}");
        }
        assert_eq!(pool, generate_pool(&p, 159, 4).unwrap());
        assert_ne!(pool, generate_pool(&p, 159, 5).unwrap());
        let tiny: Sequence = "A".parse().unwrap();
        assert!(generate_pool(&tiny, 20, 0).is_err());
    }

    #[test]
    fn oracle_is_relative_to_parental() {
        let c = small_config("OneHot-T");
        let p = c.parental_sequence().unwrap();
        let o = Oracle::from_config(&c, &p).unwrap();
        assert_eq!(o.evaluate(&p).unwrap(), 0.0);
    }

    #[test]
    fn protocol_arithmetic_and_determinism() {
        let env = Environment::build(small_config("OneHot-T")).unwrap();
        let logs = run_campaign(&env, false).unwrap();
        assert_eq!(logs.len(), 2);
        for l in &logs {
            assert_eq!(l.rounds.len(), 3);
            for (k, r) in l.rounds.iter().enumerate() {
                assert_eq!(r.dataset_size, 10 + 5 * k);
                if k > 0 {
                    assert_eq!((r.acquired.len(), r.dropped.len(), r.observed.len()), (8, 3, 5));
                    assert!(r.best_so_far >= l.rounds[k - 1].best_so_far);
                    assert_eq!(r.candidates.iter().filter(|c| c.selected).count(), 8);
                    assert_eq!(r.candidates.iter().filter(|c| c.dropped).count(), 3);
                }
            }
        }
        assert_eq!(logs, run_campaign(&env, false).unwrap());
    }

    #[test]
    fn paired_methods_share_initial_sample() {
        let a = Environment::build(small_config("OneHot-T")).unwrap();
        let b = Environment::build(small_config(seqbo_core::method::RANDOM)).unwrap();
        let la = run_repeat(&a, 1, false).unwrap();
        let lb = run_repeat(&b, 1, false).unwrap();
        assert_eq!(la.rounds[0], lb.rounds[0]);
        assert_eq!(lb.rounds.len(), 3);
        assert!(lb.rounds[1].hyperparameters.is_empty());
    }

    #[test]
    fn zero_rounds_and_zero_drop() {
        let mut c = small_config("BLO-T");
        c.protocol.rounds = 0;
        let env = Environment::build(c.clone()).unwrap();
        let l = run_repeat(&env, 0, false).unwrap();
        assert_eq!(l.rounds.len(), 1);
        let max = l.rounds[0].observed.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(l.rounds[0].best_so_far, max);
        c.protocol.rounds = 1;
        c.protocol.drop_count = 0;
        let env = Environment::build(c).unwrap();
        let l = run_repeat(&env, 0, false).unwrap();
        assert_eq!(l.rounds[1].observed.len(), 8);
    }

    #[test]
    fn outputs_written() {
        let mut c = small_config("C-Kermut-T");
        c.protocol.repeats = 1;
        c.protocol.rounds = 1;
        let env = Environment::build(c).unwrap();
        let logs = run_campaign(&env, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &env, &logs).unwrap();
        for f in [
            "rounds.csv",
            "aggregate.csv",
            "config.toml",
            "repeat0/observations.csv",
            "repeat0/hyperparams_round1.txt",
            "repeat0/acquisition_round1.csv",
            "repeat0/round1/front_gen0.csv",
            "repeat0/round1/front_gen4.csv",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let agg = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
        assert_eq!(agg.lines().count(), 1 + 2);
        let hp = fs::read_to_string(dir.path().join("repeat0/hyperparams_round1.txt")).unwrap();
        assert!(hp.contains("kernel.pi = ") && hp.contains("mean.alpha = "), "{hp}");
    }
}
