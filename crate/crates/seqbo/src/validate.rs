//! Pre-flight checks of a campaign configuration and its fixtures.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seqbo_core::encoding::SubstitutionMatrix;
use seqbo_core::gp::GpModel;
use seqbo_core::method::Acquisition;

use crate::campaign::Environment;
use crate::config::CampaignConfig;
use crate::error::Result;
use crate::io;

fn check_file(v: &mut Vec<String>, r: Result<()>) {
    if let Err(e) = r {
        v.push(e.to_string());
    }
}

fn matrix_violations(cfg: &CampaignConfig, v: &mut Vec<String>) {
    let (label, m) = match &cfg.features.matrix {
        None => ("built-in BLOSUM62".to_string(), SubstitutionMatrix::blosum62()),
        Some(p) => {
            let path = cfg.resolve(p);
            let parsed = std::fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|t| SubstitutionMatrix::parse_ncbi("matrix", &t).map_err(|e| e.to_string()));
            match parsed {
                Ok(m) => (path.display().to_string(), m),
                Err(e) => {
                    v.push(format!("{}: {e}", path.display()));
                    return;
                }
            }
        }
    };
    let asym = m.asymmetries();
    if !asym.is_empty() {
        let pairs: Vec<String> = asym.iter().take(5).map(|(a, b)| format!("{a}/{b}")).collect();
        v.push(format!(
            "{label}: substitution matrix is not symmetric at {} pair(s), e.g. {}",
            asym.len(),
            pairs.join(", ")
        ));
    }
}

fn fixture_violations(cfg: &CampaignConfig, v: &mut Vec<String>) {
    let f = &cfg.features;
    let prob_tables = [
        &f.site_probs,
        &f.antibody_site_probs,
        &cfg.zero_shot.table,
        &cfg.zero_shot.antibody_table,
    ];
    let pssm = matches!(cfg.plm.kind, crate::config::PlmKind::Pssm).then_some(&cfg.plm.path);
    let parental_len = cfg.parental_sequence().map(|s| s.len()).ok();
    for p in prob_tables.into_iter().chain(pssm).flatten() {
        let path = cfg.resolve(p);
        check_file(
            v,
            io::read_prob_rows(&path).and_then(|rows| match parental_len {
                Some(l) if rows.len() != l => Err(crate::SeqboError::fixture(
                    &path,
                    format!("{} rows for a parental of length {l}", rows.len()),
                )),
                _ => Ok(()),
            }),
        );
    }
    if let Some(p) = &f.distances {
        let path = cfg.resolve(p);
        check_file(
            v,
            io::read_square(&path).and_then(|(n, _)| match parental_len {
                Some(l) if n != l => Err(crate::SeqboError::fixture(
                    &path,
                    format!("{n}x{n} distances for a parental of length {l}"),
                )),
                _ => Ok(()),
            }),
        );
    }
    for p in [&f.embeddings, &f.coords].into_iter().flatten() {
        check_file(v, io::read_keyed_vectors(&cfg.resolve(p)).map(|_| ()));
    }
    if let Some(p) = &cfg.protocol.pool {
        check_file(v, io::read_sequences(&cfg.resolve(p)).map(|_| ()));
    }
    let keyed = [&cfg.oracle.path, &cfg.plm.path];
    let kinds = [
        cfg.oracle.kind == crate::config::OracleKind::Fixture,
        cfg.plm.kind == crate::config::PlmKind::Fixture,
    ];
    for (p, used) in keyed.into_iter().zip(kinds) {
        if let (Some(p), true) = (p, used) {
            check_file(v, io::read_keyed_scalars(&cfg.resolve(p)).map(|_| ()));
        }
    }
}

/// Every violation found; empty when the configuration can run.
///
/// Configuration-level and per-file checks always run. Building the
/// environment and a dry-run surrogate fit on the first repeat's initial
/// sample run only when those pass.
pub fn validate(cfg: &CampaignConfig) -> Vec<String> {
    let mut v = cfg.check();
    matrix_violations(cfg, &mut v);
    fixture_violations(cfg, &mut v);
    if !v.is_empty() {
        return v;
    }
    let env = match Environment::build(cfg.clone()) {
        Ok(e) => e,
        Err(e) => return vec![e.to_string()],
    };
    if env.method.acquisition == Acquisition::Random {
        return v;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = env.initial_sample(&mut rng);
    let fit = env.observe(&initial).and_then(|(data, _)| {
        let mut opts = env.fit_options(cfg.gp.noise, cfg.seed);
        opts.restarts = 1;
        Ok(GpModel::fit(&data, env.fresh_kernel()?, env.method.prior_mean(), &opts)?)
    });
    if let Err(e) = fit {
        v.push(format!("dry-run fit on the initial sample: {e}"));
    }
    v
}

/// Loads `path` and validates it; load failures are reported as violations.
pub fn validate_file(path: &Path) -> std::result::Result<Vec<String>, crate::SeqboError> {
    CampaignConfig::load(path).map(|c| validate(&c))
}
