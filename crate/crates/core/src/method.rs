//! Registry of surrogate-model methods and their kernel construction.
//!
//! A method name is a base name, optionally prefixed with `C-` to enable the
//! pseudo-likelihood soft constraint. `Random` is a model-free baseline.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gp::PriorMean;
use crate::kernels::{Channel, Kernel};
use crate::structure::StructureContext;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// General-protein model outputs.
    General,
    /// Antibody-specific model outputs.
    Antibody,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeanKind {
    Constant,
    ZeroShot(Source),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeqRep {
    None,
    OneHot,
    Blosum,
    Embedding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    None,
    Coords,
    Composite(Source),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combination {
    None,
    Concat,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Acquisition {
    Qhsri,
    Random,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MethodSpec {
    pub name: String,
    pub base: &'static str,
    pub mean: MeanKind,
    pub representation: SeqRep,
    pub structure: Structure,
    pub combination: Combination,
    pub constrained: bool,
    pub acquisition: Acquisition,
}

struct Row {
    name: &'static str,
    mean: MeanKind,
    rep: SeqRep,
    structure: Structure,
    combination: Combination,
}

const fn row(name: &'static str, mean: MeanKind, rep: SeqRep, structure: Structure, combination: Combination) -> Row {
    Row {
        name,
        mean,
        rep,
        structure,
        combination,
    }
}

use Combination as Cb;
use MeanKind::{Constant, ZeroShot};
use Source::{Antibody, General};

const ROWS: &[Row] = &[
    row("OneHot-T", Constant, SeqRep::OneHot, Structure::None, Cb::None),
    row("BLO-T", Constant, SeqRep::Blosum, Structure::None, Cb::None),
    row("ESM-M", Constant, SeqRep::Embedding, Structure::None, Cb::None),
    row("IgFold-M", Constant, SeqRep::None, Structure::Coords, Cb::None),
    row("IgFold-ESM-M", Constant, SeqRep::Embedding, Structure::Coords, Cb::Concat),
    row("IgFold-BLO-T", Constant, SeqRep::Blosum, Structure::Coords, Cb::Sum),
    row("Kermut-T", ZeroShot(General), SeqRep::OneHot, Structure::Composite(General), Cb::Sum),
    row("AbMPNN-Kermut-T", ZeroShot(General), SeqRep::OneHot, Structure::Composite(Antibody), Cb::Sum),
    row("Const-Kermut-T", Constant, SeqRep::OneHot, Structure::Composite(General), Cb::Sum),
    row("AbSeq-Kermut-T", ZeroShot(Antibody), SeqRep::OneHot, Structure::Composite(General), Cb::Sum),
    row("Kermut-BLO-T", ZeroShot(General), SeqRep::Blosum, Structure::Composite(General), Cb::Sum),
    row("AbBoth-Kermut-BLO-T", ZeroShot(Antibody), SeqRep::Blosum, Structure::Composite(Antibody), Cb::Sum),
];

pub const RANDOM: &str = "Random";

/// Base names of all registered surrogate methods.
pub fn base_names() -> Vec<&'static str> {
    ROWS.iter().map(|r| r.name).collect()
}

impl MethodSpec {
    pub fn parse(name: &str) -> Result<Self> {
        if name == RANDOM {
            return Ok(MethodSpec {
                name: name.into(),
                base: RANDOM,
                mean: Constant,
                representation: SeqRep::None,
                structure: Structure::None,
                combination: Cb::None,
                constrained: false,
                acquisition: Acquisition::Random,
            });
        }
        let (constrained, base) = match name.strip_prefix("C-") {
            Some(b) => (true, b),
            None => (false, name),
        };
        let r = ROWS
            .iter()
            .find(|r| r.name == base)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method {name:?}")))?;
        Ok(MethodSpec {
            name: name.into(),
            base: r.name,
            mean: r.mean,
            representation: r.rep,
            structure: r.structure,
            combination: r.combination,
            constrained,
            acquisition: Acquisition::Qhsri,
        })
    }

    pub fn needs_context(&self) -> bool {
        matches!(self.structure, Structure::Composite(_))
    }

    pub fn context_source(&self) -> Option<Source> {
        match self.structure {
            Structure::Composite(s) => Some(s),
            _ => None,
        }
    }

    pub fn zero_shot_source(&self) -> Option<Source> {
        match self.mean {
            ZeroShot(s) => Some(s),
            Constant => None,
        }
    }

    pub fn prior_mean(&self) -> PriorMean {
        match self.mean {
            Constant => PriorMean::Constant { beta: 0.0 },
            ZeroShot(_) => PriorMean::ZeroShot { alpha: 0.0, beta: 0.0 },
        }
    }

    fn sequence_kernel(&self) -> Option<Kernel> {
        match self.representation {
            SeqRep::None => None,
            SeqRep::OneHot => Some(Kernel::tanimoto(Channel::OneHot)),
            SeqRep::Blosum => Some(Kernel::tanimoto(Channel::Blosum)),
            SeqRep::Embedding => Some(Kernel::matern52(vec![Channel::Embedding])),
        }
    }

    /// Kernel for this method; composite methods need `context`.
    pub fn build_kernel(&self, context: Option<Arc<StructureContext>>) -> Result<Kernel> {
        if self.acquisition == Acquisition::Random {
            return Err(Error::InvalidInput("the random baseline has no surrogate".into()));
        }
        let k = match (self.structure, self.combination) {
            (Structure::None, _) => self.sequence_kernel().unwrap(),
            (Structure::Coords, Cb::None) => Kernel::matern52(vec![Channel::Coords]),
            (Structure::Coords, Cb::Concat) => Kernel::matern52(vec![Channel::Embedding, Channel::Coords]),
            (Structure::Coords, _) => Kernel::weighted_sum(vec![
                Kernel::matern52(vec![Channel::Coords]),
                self.sequence_kernel().unwrap(),
            ]),
            (Structure::Composite(_), _) => {
                let ctx = context.ok_or_else(|| {
                    Error::InvalidInput(format!("{} needs a structure context", self.name))
                })?;
                Kernel::kermut(ctx, self.sequence_kernel().unwrap())
            }
        };
        Ok(k)
    }

    /// Feature channels the kernel reads.
    pub fn channels(&self) -> Vec<Channel> {
        let mut out = Vec::new();
        match self.representation {
            SeqRep::None => {}
            SeqRep::OneHot => out.push(Channel::OneHot),
            SeqRep::Blosum => out.push(Channel::Blosum),
            SeqRep::Embedding => out.push(Channel::Embedding),
        }
        if self.structure == Structure::Coords {
            out.push(Channel::Coords);
        }
        out.sort();
        out
    }
}
