//! Piece-tree walker that records the forward pass on a tape.

use std::collections::HashMap;

use super::Piece;
use crate::tensor::param::ParamStore;
use crate::tensor::tape::{Tape, ValueId};
use crate::{Elem, Error, Result};

pub struct ForwardCtx {
    pub training: bool,
    pub frozen_features: bool,
    pub momentum: f64,
    pub eps: f64,
}

fn slot_id(index: &HashMap<String, usize>, name: &str) -> Result<usize> {
    index
        .get(name)
        .copied()
        .ok_or_else(|| Error::State(format!("missing parameter {name}")))
}

#[derive(Clone, Copy)]
enum HeadRule {
    From(usize),
    All(bool),
}

impl HeadRule {
    fn at(self, i: usize) -> bool {
        match self {
            HeadRule::From(b) => i >= b,
            HeadRule::All(h) => h,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn walk<E: Elem>(
    pieces: &[Piece],
    rule: HeadRule,
    tape: &mut Tape<E>,
    store: &mut ParamStore<E>,
    index: &HashMap<String, usize>,
    mut x: ValueId,
    ctx: &ForwardCtx,
) -> Result<ValueId> {
    for (i, piece) in pieces.iter().enumerate() {
        let head = rule.at(i);
        x = match piece {
            Piece::Conv { name, stride, pad, groups, bias, .. } => {
                let w = tape.bind_param(store, slot_id(index, &format!("{name}.w"))?);
                let b = if *bias {
                    Some(tape.bind_param(store, slot_id(index, &format!("{name}.b"))?))
                } else {
                    None
                };
                tape.conv2d(x, w, b, *stride, *pad, *groups)?
            }
            Piece::Bn { name, .. } => {
                let gamma = tape.bind_param(store, slot_id(index, &format!("{name}.gamma"))?);
                let beta = tape.bind_param(store, slot_id(index, &format!("{name}.beta"))?);
                let rm = slot_id(index, &format!("{name}.rm"))?;
                let rv = slot_id(index, &format!("{name}.rv"))?;
                let train_stats = ctx.training && (head || !ctx.frozen_features);
                if train_stats {
                    let (m, v) = store.two_mut(rm, rv);
                    tape.batchnorm_train(
                        x,
                        gamma,
                        beta,
                        m.value.data_mut(),
                        v.value.data_mut(),
                        ctx.momentum,
                        ctx.eps,
                    )?
                } else {
                    let (m, v) = (store.slot(rm), store.slot(rv));
                    tape.batchnorm_eval(x, gamma, beta, m.value.data(), v.value.data(), ctx.eps)?
                }
            }
            Piece::Act(kind) => tape.activation(x, *kind),
            Piece::MaxPool { k, stride, pad } => tape.maxpool(x, *k, *stride, *pad)?,
            Piece::GlobalAvgPool => tape.global_avgpool(x),
            Piece::Flatten => tape.flatten(x)?,
            Piece::Linear { name, bias, .. } => {
                let w = tape.bind_param(store, slot_id(index, &format!("{name}.w"))?);
                let b = if *bias {
                    Some(tape.bind_param(store, slot_id(index, &format!("{name}.b"))?))
                } else {
                    None
                };
                tape.linear(x, w, b)?
            }
            Piece::ChannelShuffle { groups } => tape.channel_shuffle(x, *groups)?,
            Piece::Residual(body) => {
                let y = walk(body, HeadRule::All(head), tape, store, index, x, ctx)?;
                tape.add(x, y)?
            }
            Piece::Branches(bodies) => {
                let mut parts = Vec::with_capacity(bodies.len());
                for body in bodies {
                    parts.push(walk(body, HeadRule::All(head), tape, store, index, x, ctx)?);
                }
                tape.concat_channels(&parts)?
            }
            Piece::SplitRight { keep, right } => {
                let c = tape.value(x).dim(1);
                let left = tape.slice_channels(x, 0, *keep)?;
                let rest = tape.slice_channels(x, *keep, c - keep)?;
                let r = walk(right, HeadRule::All(head), tape, store, index, rest, ctx)?;
                tape.concat_channels(&[left, r])?
            }
            Piece::SqueezeExcite(body) => {
                let gate = walk(body, HeadRule::All(head), tape, store, index, x, ctx)?;
                tape.scale_channels(x, gate)?
            }
        };
    }
    Ok(x)
}

/// Record the full network on the tape, honoring the feature/head split for
/// batchnorm statistics when features are frozen.
#[allow(clippy::too_many_arguments)]
pub fn forward_pieces<E: Elem>(
    pieces: &[Piece],
    boundary: usize,
    tape: &mut Tape<E>,
    store: &mut ParamStore<E>,
    index: &HashMap<String, usize>,
    x: ValueId,
    ctx: &ForwardCtx,
) -> Result<ValueId> {
    walk(pieces, HeadRule::From(boundary), tape, store, index, x, ctx)
}
