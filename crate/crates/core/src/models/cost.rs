//! Static parameter and FLOP accounting over a lowered model.

use serde::{Deserialize, Serialize};

use super::lower::{self, Piece};
use super::ModelSpec;
use crate::Result;

pub const FLOP_CONVENTION: &str = "flops = 2 * macs";

/// Parameter and arithmetic cost of one model at one input size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    /// Learned scalars (weights, biases, batchnorm affine).
    pub params: u64,
    /// Batchnorm running statistics, tracked but not learned.
    pub running_stats: u64,
    pub macs: u64,
    pub flops: u64,
    pub convention: String,
}

fn piece_macs(pieces: &[Piece]) -> u64 {
    let mut total = 0u64;
    for p in pieces {
        total += match p {
            Piece::Conv { cin, cout, k, groups, ho, wo, .. } => {
                (k * k * (cin / groups) * cout * ho * wo) as u64
            }
            Piece::Linear { inf, outf, .. } => (inf * outf) as u64,
            Piece::Residual(body) | Piece::SqueezeExcite(body) => piece_macs(body),
            Piece::Branches(bodies) => bodies.iter().map(|b| piece_macs(b)).sum(),
            Piece::SplitRight { right, .. } => piece_macs(right),
            _ => 0,
        };
    }
    total
}

fn cost_of(spec: &ModelSpec) -> Result<CostReport> {
    spec.validate()?;
    let lowered = lower::lower(spec)?;
    let mut params = 0u64;
    let mut running = 0u64;
    for def in lower::param_defs(&lowered) {
        let n = def.shape.iter().product::<usize>() as u64;
        if def.kind.is_learned() {
            params += n;
        } else {
            running += n;
        }
    }
    let macs = piece_macs(&lowered.pieces);
    Ok(CostReport {
        params,
        running_stats: running,
        macs,
        flops: 2 * macs,
        convention: FLOP_CONVENTION.into(),
    })
}

/// Learned-parameter count (plus running-stat and arithmetic cost at the
/// spec's own input size).
pub fn count_params(spec: &ModelSpec) -> Result<CostReport> {
    cost_of(spec)
}

/// Arithmetic cost at an explicit input size.
pub fn count_flops(spec: &ModelSpec, input: [usize; 3]) -> Result<CostReport> {
    let mut at = spec.clone();
    at.input = input;
    cost_of(&at)
}
