//! NSGA-II over sequences of fixed length. All objectives are maximized.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seq::{Residue, Sequence, NUM_RESIDUES};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveSet {
    MeanStd,
    MeanStdPlm,
}

impl ObjectiveSet {
    pub fn dim(self) -> usize {
        match self {
            ObjectiveSet::MeanStd => 2,
            ObjectiveSet::MeanStdPlm => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaConfig {
    /// Even and at least 2.
    pub population_size: usize,
    pub generations: usize,
    /// Per-site mutation probability; `None` means `1 / L`.
    pub mutation_rate: Option<f64>,
    pub crossover_probability: f64,
    pub max_mutations: Option<usize>,
    pub objectives: ObjectiveSet,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 128,
            generations: 50,
            mutation_rate: None,
            crossover_probability: 0.9,
            max_mutations: None,
            objectives: ObjectiveSet::MeanStd,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 || self.population_size % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "population size {} must be even and at least 2",
                self.population_size
            )));
        }
        if let Some(m) = self.mutation_rate {
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::InvalidInput(format!("mutation rate {m} outside (0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.crossover_probability) {
            return Err(Error::InvalidInput(format!(
                "crossover probability {} outside [0, 1]",
                self.crossover_probability
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub sequence: Sequence,
    pub objectives: Vec<f64>,
    pub rank: usize,
    pub crowding: f64,
}

/// `a` is at least as good in every objective and better in one.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Fast non-dominated sort; fronts hold indices in ascending order.
pub fn non_dominated_sort(objectives: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = objectives.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominating: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(&objectives[i], &objectives[j]) {
                dominating[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(&objectives[j], &objectives[i]) {
                dominating[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominating[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front`, in the same order.
pub fn crowding_distance(front: &[usize], objectives: &[Vec<f64>]) -> Vec<f64> {
    let k = front.len();
    let mut out = vec![0.0; k];
    if k <= 2 {
        return vec![f64::INFINITY; k];
    }
    let m = objectives[front[0]].len();
    let mut order: Vec<usize> = (0..k).collect();
    for t in 0..m {
        order.sort_by(|&a, &b| {
            objectives[front[a]][t]
                .total_cmp(&objectives[front[b]][t])
                .then(a.cmp(&b))
        });
        let lo = objectives[front[order[0]]][t];
        let hi = objectives[front[order[k - 1]]][t];
        out[order[0]] = f64::INFINITY;
        out[order[k - 1]] = f64::INFINITY;
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        for w in 1..k - 1 {
            let gap = objectives[front[order[w + 1]]][t] - objectives[front[order[w - 1]]][t];
            out[order[w]] += gap / span;
        }
    }
    out
}

fn assign_ranks(pop: &mut [Individual]) -> Vec<Vec<usize>> {
    let objs: Vec<Vec<f64>> = pop.iter().map(|i| i.objectives.clone()).collect();
    let fronts = non_dominated_sort(&objs);
    for (r, front) in fronts.iter().enumerate() {
        let cd = crowding_distance(front, &objs);
        for (&i, c) in front.iter().zip(cd) {
            pop[i].rank = r;
            pop[i].crowding = c;
        }
    }
    fronts
}

fn better(a: &Individual, b: &Individual) -> Ordering {
    a.rank
        .cmp(&b.rank)
        .then_with(|| b.crowding.partial_cmp(&a.crowding).unwrap_or(Ordering::Equal))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaOutput {
    /// Final non-dominated set, deduplicated, without excluded sequences.
    pub front: Vec<Individual>,
    /// Final population ordered by (rank asc, crowding desc), deduplicated,
    /// without excluded sequences.
    pub ranked: Vec<Individual>,
    /// Best value of each objective in the population per generation,
    /// starting with the initial population.
    pub best_per_generation: Vec<Vec<f64>>,
    pub evaluations: usize,
}

struct Ga<'a, E> {
    parental: &'a Sequence,
    cfg: &'a GaConfig,
    rate: f64,
    rng: ChaCha8Rng,
    evaluate: E,
    cache: BTreeMap<Sequence, Vec<f64>>,
    evaluations: usize,
}

impl<E> Ga<'_, E>
where
    E: FnMut(&[Sequence]) -> Result<Vec<Vec<f64>>>,
{
    fn random_residue_except(&mut self, r: Residue) -> Residue {
        let k = self.rng.gen_range(0..NUM_RESIDUES - 1);
        Residue::from_index(if k >= r.index() { k + 1 } else { k }).unwrap()
    }

    fn random_mutant(&mut self) -> Sequence {
        let len = self.parental.len();
        let cap = self.cfg.max_mutations.unwrap_or(3).min(3).min(len);
        if cap == 0 {
            return self.parental.clone();
        }
        let k = self.rng.gen_range(1..=cap);
        let mut res = self.parental.residues().to_vec();
        for pos in sample(&mut self.rng, len, k).into_iter() {
            res[pos] = self.random_residue_except(res[pos]);
        }
        Sequence::new(res)
    }

    fn mutate(&mut self, seq: &mut Vec<Residue>) {
        for i in 0..seq.len() {
            if self.rng.gen::<f64>() < self.rate {
                seq[i] = self.random_residue_except(seq[i]);
            }
        }
    }

    fn force_mutation(&mut self, seq: &mut [Residue]) {
        if seq.is_empty() {
            return;
        }
        let i = self.rng.gen_range(0..seq.len());
        seq[i] = self.random_residue_except(seq[i]);
    }

    fn repair(&mut self, seq: &mut [Residue]) {
        let Some(max) = self.cfg.max_mutations else { return };
        let mut diff: Vec<usize> = (0..seq.len())
            .filter(|&i| seq[i] != self.parental.residues()[i])
            .collect();
        while diff.len() > max {
            let k = self.rng.gen_range(0..diff.len());
            let pos = diff.swap_remove(k);
            seq[pos] = self.parental.residues()[pos];
        }
    }

    fn evaluate(&mut self, seqs: Vec<Sequence>) -> Result<Vec<Individual>> {
        let mut fresh: Vec<Sequence> = Vec::new();
        let mut seen = BTreeSet::new();
        for s in &seqs {
            if !self.cache.contains_key(s) && seen.insert(s.clone()) {
                fresh.push(s.clone());
            }
        }
        if !fresh.is_empty() {
            let dim = self.cfg.objectives.dim();
            let values = (self.evaluate)(&fresh)?;
            if values.len() != fresh.len() {
                return Err(Error::Evaluation(format!(
                    "{} objective vectors for {} sequences",
                    values.len(),
                    fresh.len()
                )));
            }
            for (s, v) in fresh.into_iter().zip(values) {
                if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Evaluation(format!("objectives {v:?} for {s}")));
                }
                self.evaluations += 1;
                self.cache.insert(s, v);
            }
        }
        Ok(seqs
            .into_iter()
            .map(|s| Individual {
                objectives: self.cache[&s].clone(),
                sequence: s,
                rank: 0,
                crowding: 0.0,
            })
            .collect())
    }

    fn tournament(&mut self, pop: &[Individual]) -> usize {
        let a = self.rng.gen_range(0..pop.len());
        let b = self.rng.gen_range(0..pop.len());
        match better(&pop[a], &pop[b]) {
            Ordering::Greater => b,
            _ => a,
        }
    }

    fn offspring(&mut self, pop: &[Individual]) -> Vec<Sequence> {
        let n = self.cfg.population_size;
        let mut taken: BTreeSet<Sequence> = pop.iter().map(|i| i.sequence.clone()).collect();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let pa = self.tournament(pop);
            let pb = self.tournament(pop);
            let mut c1 = pop[pa].sequence.residues().to_vec();
            let mut c2 = pop[pb].sequence.residues().to_vec();
            if self.rng.gen::<f64>() < self.cfg.crossover_probability {
                for i in 0..c1.len() {
                    if self.rng.gen::<bool>() {
                        core::mem::swap(&mut c1[i], &mut c2[i]);
                    }
                }
            }
            for mut c in [c1, c2] {
                self.mutate(&mut c);
                self.repair(&mut c);
                let mut s = Sequence::new(c);
                if taken.contains(&s) {
                    let mut c = s.residues().to_vec();
                    self.force_mutation(&mut c);
                    self.repair(&mut c);
                    s = Sequence::new(c);
                }
                taken.insert(s.clone());
                out.push(s);
            }
        }
        out.truncate(n);
        out
    }

    fn select(&mut self, mut combined: Vec<Individual>) -> Vec<Individual> {
        let n = self.cfg.population_size;
        // unique sequences first, duplicates only as filler
        let mut seen = BTreeSet::new();
        let (mut unique, dups): (Vec<Individual>, Vec<Individual>) =
            combined.drain(..).partition(|i| seen.insert(i.sequence.clone()));
        let fronts = assign_ranks(&mut unique);
        let mut next = Vec::with_capacity(n);
        for front in fronts {
            if next.len() + front.len() <= n {
                next.extend(front.iter().map(|&i| unique[i].clone()));
            } else {
                let mut f = front.clone();
                f.sort_by(|&a, &b| {
                    unique[b]
                        .crowding
                        .partial_cmp(&unique[a].crowding)
                        .unwrap_or(Ordering::Equal)
                        .then(a.cmp(&b))
                });
                let room = n - next.len();
                next.extend(f[..room].iter().map(|&i| unique[i].clone()));
            }
            if next.len() == n {
                break;
            }
        }
        for d in dups {
            if next.len() == n {
                break;
            }
            next.push(d);
        }
        assign_ranks(&mut next);
        next
    }
}

fn best_values(pop: &[Individual]) -> Vec<f64> {
    let dim = pop[0].objectives.len();
    (0..dim)
        .map(|t| pop.iter().map(|i| i.objectives[t]).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Runs NSGA-II from `parental`, seeding the population with `seeds` (the
/// best observed sequences). `evaluate` maps a batch of sequences to their
/// objective vectors and must be deterministic. `observer` sees the ranked
/// population after initialization (generation 0) and after each generation.
pub fn evolve<E>(
    parental: &Sequence,
    seeds: &[Sequence],
    exclude: &BTreeSet<Sequence>,
    evaluate: E,
    cfg: &GaConfig,
    mut observer: Option<&mut dyn FnMut(usize, &[Individual])>,
) -> Result<GaOutput>
where
    E: FnMut(&[Sequence]) -> Result<Vec<Vec<f64>>>,
{
    cfg.validate()?;
    if parental.is_empty() {
        return Err(Error::InvalidInput("empty parental sequence".into()));
    }
    for s in seeds {
        if s.len() != parental.len() {
            return Err(Error::LengthMismatch {
                expected: parental.len(),
                found: s.len(),
            });
        }
    }
    let rate = cfg.mutation_rate.unwrap_or(1.0 / parental.len() as f64);
    let mut ga = Ga {
        parental,
        cfg,
        rate,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        evaluate,
        cache: BTreeMap::new(),
        evaluations: 0,
    };

    let n = cfg.population_size;
    let mut init: Vec<Sequence> = vec![parental.clone()];
    let mut taken: BTreeSet<Sequence> = init.iter().cloned().collect();
    for s in seeds.iter().take(n / 4) {
        let mut c = s.residues().to_vec();
        ga.repair(&mut c);
        let s = Sequence::new(c);
        if taken.insert(s.clone()) {
            init.push(s);
        }
    }
    let mut attempts = 0;
    while init.len() < n {
        let s = ga.random_mutant();
        attempts += 1;
        if taken.insert(s.clone()) || attempts > 20 * n {
            init.push(s);
        }
    }
    let mut pop = ga.evaluate(init)?;
    assign_ranks(&mut pop);
    pop.sort_by(better);
    let mut best = vec![best_values(&pop)];
    if let Some(o) = observer.as_mut() {
        o(0, &pop);
    }

    for g in 1..=cfg.generations {
        let kids = ga.offspring(&pop);
        let kids = ga.evaluate(kids)?;
        let mut combined = pop;
        combined.extend(kids);
        pop = ga.select(combined);
        pop.sort_by(better);
        best.push(best_values(&pop));
        if let Some(o) = observer.as_mut() {
            o(g, &pop);
        }
    }

    let mut seen = BTreeSet::new();
    let ranked: Vec<Individual> = pop
        .into_iter()
        .filter(|i| !exclude.contains(&i.sequence) && seen.insert(i.sequence.clone()))
        .collect();
    // non-dominated among the survivors
    let objs: Vec<Vec<f64>> = ranked.iter().map(|i| i.objectives.clone()).collect();
    let front = non_dominated_sort(&objs)
        .into_iter()
        .next()
        .unwrap_or_default()
        .into_iter()
        .map(|i| ranked[i].clone())
        .collect();
    Ok(GaOutput {
        front,
        ranked,
        best_per_generation: best,
        evaluations: ga.evaluations,
    })
}
