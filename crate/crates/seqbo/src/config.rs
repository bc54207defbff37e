//! Campaign configuration (TOML).
//!
//! Relative fixture paths resolve against `$SEQBO_FIXTURE_ROOT` when it is
//! set, otherwise against the directory holding the config file.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seqbo_core::method::MethodSpec;
use seqbo_core::nsga::{GaConfig, ObjectiveSet};
use seqbo_core::seq::Sequence;

use crate::error::{Result, SeqboError};

pub const FIXTURE_ROOT_ENV: &str = "SEQBO_FIXTURE_ROOT";
pub const DEFAULT_PARENTAL: &str = "EVQLVESGGGLVQPGGSLRLSCAASGFTFS";

fn default_parental() -> String {
    DEFAULT_PARENTAL.into()
}
fn default_method() -> String {
    "OneHot-T".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default = "default_parental")]
    pub parental: String,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub plm: PlmConfig,
    #[serde(default)]
    pub zero_shot: ZeroShotConfig,
    #[serde(default)]
    pub ga: GaSection,
    #[serde(default)]
    pub gp: GpSection,
    /// Directory relative paths resolve against; filled in at load time.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Protocol {
    /// Sequence list to draw the initial sample from; generated when unset.
    pub pool: Option<PathBuf>,
    pub pool_size: usize,
    pub initial_size: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub drop_count: usize,
    pub repeats: usize,
    pub max_mutations: Option<usize>,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            pool: None,
            pool_size: 159,
            initial_size: 50,
            rounds: 9,
            batch_size: 80,
            drop_count: 30,
            repeats: 3,
            max_mutations: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Affinity,
    Thermostability,
    Fixture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub kind: OracleKind,
    pub seed: u64,
    /// `sequence,value` table for the fixture kind.
    pub path: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            kind: OracleKind::Affinity,
            seed: 0,
            path: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Synthetic,
    Fixture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    pub kind: ProviderKind,
    /// Seed of the synthetic embeddings and folds; also keys the smooth term
    /// of the synthetic oracles.
    pub seed: u64,
    pub embedding_dim: usize,
    /// Site-distribution softmax temperatures of the synthetic contexts.
    pub temperature: f64,
    pub antibody_temperature: f64,
    pub embeddings: Option<PathBuf>,
    pub coords: Option<PathBuf>,
    pub site_probs: Option<PathBuf>,
    pub distances: Option<PathBuf>,
    pub antibody_site_probs: Option<PathBuf>,
    /// Substitution matrix in NCBI text format; BLOSUM62 when unset.
    pub matrix: Option<PathBuf>,
    pub cache_capacity: Option<usize>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            kind: ProviderKind::Synthetic,
            seed: 0,
            embedding_dim: 64,
            temperature: 1.0,
            antibody_temperature: 0.5,
            embeddings: None,
            coords: None,
            site_probs: None,
            distances: None,
            antibody_site_probs: None,
            matrix: None,
            cache_capacity: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlmKind {
    /// Softmax of substitution scores against the parental residue.
    Substitution,
    /// Fixed mass on the parental residue.
    Parental,
    Uniform,
    /// `L` rows of 20 tab-separated probabilities.
    Pssm,
    /// `sequence,likelihood` table.
    Fixture,
}

impl PlmKind {
    pub fn name(self) -> &'static str {
        match self {
            PlmKind::Substitution => "substitution",
            PlmKind::Parental => "parental",
            PlmKind::Uniform => "uniform",
            PlmKind::Pssm => "pssm",
            PlmKind::Fixture => "fixture",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlmConfig {
    pub kind: PlmKind,
    pub temperature: f64,
    pub concentration: f64,
    pub path: Option<PathBuf>,
}

impl Default for PlmConfig {
    fn default() -> Self {
        PlmConfig {
            kind: PlmKind::Substitution,
            temperature: 1.0,
            concentration: 0.5,
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZeroShotConfig {
    pub temperature: f64,
    pub antibody_temperature: f64,
    /// Per-site probability tables (20 columns) replacing the synthetic ones.
    pub table: Option<PathBuf>,
    pub antibody_table: Option<PathBuf>,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        ZeroShotConfig {
            temperature: 1.0,
            antibody_temperature: 0.5,
            table: None,
            antibody_table: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaSection {
    pub population_size: usize,
    pub generations: usize,
    pub mutation_rate: Option<f64>,
    pub crossover_probability: f64,
    /// Top observed sequences injected into the initial population.
    pub seeds: usize,
}

impl Default for GaSection {
    fn default() -> Self {
        let d = GaConfig::default();
        GaSection {
            population_size: d.population_size,
            generations: d.generations,
            mutation_rate: d.mutation_rate,
            crossover_probability: d.crossover_probability,
            seeds: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpSection {
    pub restarts: usize,
    pub noise: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    /// Start each round's first restart from the previous round's fit.
    pub warm_start: bool,
}

impl Default for GpSection {
    fn default() -> Self {
        GpSection {
            restarts: 8,
            noise: 1e-2,
            max_iter: 100,
            grad_tol: 1e-5,
            f_tol: 1e-9,
            warm_start: true,
        }
    }
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            parental: default_parental(),
            method: default_method(),
            seed: 0,
            protocol: Protocol::default(),
            oracle: OracleConfig::default(),
            features: FeaturesConfig::default(),
            plm: PlmConfig::default(),
            zero_shot: ZeroShotConfig::default(),
            ga: GaSection::default(),
            gp: GpSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Command-line overrides applied after loading.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<String>,
    pub rounds: Option<usize>,
}

impl CampaignConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: CampaignConfig =
            toml::from_str(text).map_err(|e| SeqboError::Config(format!("invalid config: {e}")))?;
        cfg.base_dir = match env::var_os(FIXTURE_ROOT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root),
            _ => base_dir.to_path_buf(),
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| SeqboError::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, dir)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(m) = &o.method {
            self.method = m.clone();
        }
        if let Some(r) = o.rounds {
            self.protocol.rounds = r;
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn parental_sequence(&self) -> Result<Sequence> {
        self.parental
            .parse()
            .map_err(|e| SeqboError::Config(format!("parental sequence: {e}")))
    }

    pub fn method_spec(&self) -> Result<MethodSpec> {
        MethodSpec::parse(&self.method).map_err(|e| SeqboError::Config(e.to_string()))
    }

    pub fn ga_config(&self, constrained: bool, seed: u64) -> GaConfig {
        GaConfig {
            population_size: self.ga.population_size,
            generations: self.ga.generations,
            mutation_rate: self.ga.mutation_rate,
            crossover_probability: self.ga.crossover_probability,
            max_mutations: self.protocol.max_mutations,
            objectives: if constrained {
                ObjectiveSet::MeanStdPlm
            } else {
                ObjectiveSet::MeanStd
            },
            seed,
        }
    }

    /// Configuration-level checks that need no fixture files.
    pub fn check(&self) -> Vec<String> {
        let mut v = Vec::new();
        let p = &self.protocol;
        if let Err(e) = self.parental_sequence() {
            v.push(e.to_string());
        }
        if let Err(e) = self.method_spec() {
            v.push(e.to_string());
        }
        if p.drop_count >= p.batch_size {
            v.push(format!(
                "drop_count ({}) must be smaller than batch_size ({})",
                p.drop_count, p.batch_size
            ));
        }
        if p.initial_size < 2 {
            v.push(format!("initial_size ({}) must be at least 2", p.initial_size));
        }
        if p.pool.is_none() && p.initial_size > p.pool_size {
            v.push(format!(
                "initial_size ({}) exceeds pool_size ({})",
                p.initial_size, p.pool_size
            ));
        }
        if p.repeats == 0 {
            v.push("repeats must be at least 1".into());
        }
        if let Err(e) = self.ga_config(false, 0).validate() {
            v.push(format!("ga: {e}"));
        }
        if self.oracle.kind == OracleKind::Fixture && self.oracle.path.is_none() {
            v.push("oracle kind `fixture` needs `oracle.path`".into());
        }
        if matches!(self.plm.kind, PlmKind::Fixture | PlmKind::Pssm) && self.plm.path.is_none() {
            v.push(format!("plm kind `{}` needs `plm.path`", self.plm.kind.name()));
        }
        if !(self.plm.concentration > 0.0 && self.plm.concentration <= 1.0) {
            v.push(format!("plm.concentration {} outside (0, 1]", self.plm.concentration));
        }
        for (name, t) in [
            ("plm.temperature", self.plm.temperature),
            ("features.temperature", self.features.temperature),
            ("features.antibody_temperature", self.features.antibody_temperature),
            ("zero_shot.temperature", self.zero_shot.temperature),
            ("zero_shot.antibody_temperature", self.zero_shot.antibody_temperature),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                v.push(format!("{name} must be positive, got {t}"));
            }
        }
        if self.features.embedding_dim == 0 {
            v.push("features.embedding_dim must be positive".into());
        }
        if !(self.gp.noise > 0.0) {
            v.push(format!("gp.noise must be positive, got {}", self.gp.noise));
        }
        if self.gp.restarts == 0 {
            v.push("gp.restarts must be at least 1".into());
        }
        if !(self.gp.grad_tol >= 0.0 && self.gp.f_tol >= 0.0) {
            v.push("gp.grad_tol and gp.f_tol must be nonnegative".into());
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let c = CampaignConfig::from_toml("", Path::new("/tmp")).unwrap();
        assert_eq!(c.protocol.initial_size, 50);
        assert_eq!(c.protocol.rounds, 9);
        assert_eq!(c.protocol.batch_size, 80);
        assert_eq!(c.protocol.drop_count, 30);
        assert_eq!(c.protocol.repeats, 3);
        assert_eq!(c.protocol.pool_size, 159);
        assert!(c.check().is_empty(), "{:?}", c.check());
    }

    #[test]
    fn unknown_keys_and_bad_types_rejected() {
        assert!(CampaignConfig::from_toml("[protocol]\nround = 3\n", Path::new(".")).is_err());
        assert!(CampaignConfig::from_toml("seed = \"x\"\n", Path::new(".")).is_err());
    }

    #[test]
    fn arithmetic_violation_listed() {
        let c = CampaignConfig::from_toml(
            "method = \"Nope\"\n[protocol]\nbatch_size = 30\ndrop_count = 30\n",
            Path::new("."),
        )
        .unwrap();
        let v = c.check();
        assert!(v.iter().any(|m| m.contains("drop_count")));
        assert!(v.iter().any(|m| m.contains("Nope")));
    }

    #[test]
    fn overrides_and_round_trip() {
        let mut c = CampaignConfig::default();
        c.apply(&Overrides {
            seed: Some(7),
            method: Some("BLO-T".into()),
            rounds: Some(1),
        });
        assert_eq!((c.seed, c.method.as_str(), c.protocol.rounds), (7, "BLO-T", 1));
        let back = CampaignConfig::from_toml(&c.to_toml(), Path::new(".")).unwrap();
        assert_eq!(back.protocol, c.protocol);
        assert_eq!(back.method, c.method);
    }
}
