//! Lowering from stage descriptions to a concrete piece tree with resolved
//! channel counts, spatial sizes, and parameter names.

use super::{BlockSpec, ModelSpec, OutDim};
use crate::tensor::kernels::{out_extent, ActKind};
use crate::tensor::param::ParamKind;
use crate::{Error, Result};

/// A lowered layer with every dimension resolved.
#[derive(Clone, Debug, PartialEq)]
pub enum Piece {
    Conv {
        name: String,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
        ho: usize,
        wo: usize,
    },
    Bn {
        name: String,
        c: usize,
    },
    Act(ActKind),
    MaxPool {
        k: usize,
        stride: usize,
        pad: usize,
    },
    GlobalAvgPool,
    Flatten,
    Linear {
        name: String,
        inf: usize,
        outf: usize,
        bias: bool,
    },
    ChannelShuffle {
        groups: usize,
    },
    /// Body output is added back onto the body input.
    Residual(Vec<Piece>),
    /// Each branch runs on the same input; outputs concatenate on channels.
    Branches(Vec<Vec<Piece>>),
    /// First `keep` channels pass through; the rest run the body, then both
    /// halves concatenate.
    SplitRight {
        keep: usize,
        right: Vec<Piece>,
    },
    /// Body computes a per-channel gate from the input, which then scales it.
    SqueezeExcite(Vec<Piece>),
}

/// Piece tree plus the feature/classifier boundary (index into `pieces`).
#[derive(Clone, Debug)]
pub struct Lowered {
    pub pieces: Vec<Piece>,
    pub boundary: usize,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    fn map(self, what: &str) -> Result<(usize, usize, usize)> {
        match self {
            Shape::Map { c, h, w } => Ok((c, h, w)),
            Shape::Flat(n) => Err(Error::Config(format!(
                "{what} needs a feature map input, found flat width {n}"
            ))),
        }
    }
}

struct Lowerer {
    wm: f64,
    classes: usize,
}

impl Lowerer {
    fn sc(&self, ch: usize) -> usize {
        ((ch as f64 * self.wm).round() as usize).max(1)
    }

    fn sc_even(&self, ch: usize) -> usize {
        let c = self.sc(ch);
        c + (c & 1)
    }

    fn conv(
        &self,
        out: &mut Vec<Piece>,
        name: String,
        shape: &mut Shape,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bias: bool,
    ) -> Result<()> {
        let (cin, h, w) = shape.map(&name)?;
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::Config(format!(
                "{name}: groups {groups} does not divide channels {cin}->{cout}"
            )));
        }
        let ho = out_extent(h, k, stride, pad)
            .map_err(|e| Error::Geometry(format!("{name}: {e}")))?;
        let wo = out_extent(w, k, stride, pad)
            .map_err(|e| Error::Geometry(format!("{name}: {e}")))?;
        out.push(Piece::Conv { name, cin, cout, k, stride, pad, groups, bias, ho, wo });
        *shape = Shape::Map { c: cout, h: ho, w: wo };
        Ok(())
    }

    fn bn(&self, out: &mut Vec<Piece>, name: String, shape: &Shape) -> Result<()> {
        let (c, _, _) = shape.map(&name)?;
        out.push(Piece::Bn { name, c });
        Ok(())
    }

    /// Conv + optional batchnorm + optional activation under one scope.
    #[allow(clippy::too_many_arguments)]
    fn conv_unit(
        &self,
        out: &mut Vec<Piece>,
        scope: &str,
        shape: &mut Shape,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        bn: bool,
        bias: bool,
        act: Option<ActKind>,
    ) -> Result<()> {
        self.conv(out, format!("{scope}.conv"), shape, cout, k, stride, pad, groups, bias)?;
        if bn {
            self.bn(out, format!("{scope}.bn"), shape)?;
        }
        if let Some(a) = act {
            out.push(Piece::Act(a));
        }
        Ok(())
    }

    fn squeeze_excite(&self, scope: &str, c: usize, reduced: usize) -> Vec<Piece> {
        vec![
            Piece::GlobalAvgPool,
            Piece::Conv {
                name: format!("{scope}.fc1"),
                cin: c,
                cout: reduced,
                k: 1,
                stride: 1,
                pad: 0,
                groups: 1,
                bias: true,
                ho: 1,
                wo: 1,
            },
            Piece::Act(ActKind::Relu),
            Piece::Conv {
                name: format!("{scope}.fc2"),
                cin: reduced,
                cout: c,
                k: 1,
                stride: 1,
                pad: 0,
                groups: 1,
                bias: true,
                ho: 1,
                wo: 1,
            },
            Piece::Act(ActKind::HardSigmoid),
        ]
    }

    fn block(
        &self,
        out: &mut Vec<Piece>,
        scope: &str,
        shape: &mut Shape,
        block: &BlockSpec,
    ) -> Result<()> {
        match block {
            BlockSpec::PlainConv { out: cout, k, stride, pad, bn, bias, act } => {
                self.conv_unit(
                    out,
                    scope,
                    shape,
                    self.sc(*cout),
                    *k,
                    *stride,
                    *pad,
                    1,
                    *bn,
                    *bias,
                    *act,
                )?;
            }
            BlockSpec::DwSeparable { out: cout, k, stride, bn, act } => {
                let (cin, _, _) = shape.map(scope)?;
                self.conv_unit(
                    out,
                    &format!("{scope}.dw"),
                    shape,
                    cin,
                    *k,
                    *stride,
                    k / 2,
                    cin,
                    *bn,
                    false,
                    Some(*act),
                )?;
                self.conv_unit(
                    out,
                    &format!("{scope}.pw"),
                    shape,
                    self.sc(*cout),
                    1,
                    1,
                    0,
                    1,
                    *bn,
                    false,
                    None,
                )?;
            }
            BlockSpec::InvertedResidual {
                out: cout,
                k,
                stride,
                exp_channels,
                expansion,
                se_channels,
                act,
            } => {
                let (cin, _, _) = shape.map(scope)?;
                let cout = self.sc(*cout);
                let exp = match (exp_channels, expansion) {
                    (Some(e), _) => self.sc(*e),
                    (None, Some(t)) => ((cin as f64 * t).round() as usize).max(1),
                    (None, None) => unreachable!("validated"),
                };
                let mut body = Vec::new();
                let mut s = *shape;
                if exp != cin {
                    self.conv_unit(
                        &mut body,
                        &format!("{scope}.exp"),
                        &mut s,
                        exp,
                        1,
                        1,
                        0,
                        1,
                        true,
                        false,
                        Some(*act),
                    )?;
                }
                self.conv_unit(
                    &mut body,
                    &format!("{scope}.dw"),
                    &mut s,
                    exp,
                    *k,
                    *stride,
                    k / 2,
                    exp,
                    true,
                    false,
                    Some(*act),
                )?;
                if let Some(se) = se_channels {
                    body.push(Piece::SqueezeExcite(self.squeeze_excite(
                        &format!("{scope}.se"),
                        exp,
                        self.sc(*se),
                    )));
                }
                self.conv_unit(
                    &mut body,
                    &format!("{scope}.proj"),
                    &mut s,
                    cout,
                    1,
                    1,
                    0,
                    1,
                    true,
                    false,
                    None,
                )?;
                if *stride == 1 && cin == cout {
                    out.push(Piece::Residual(body));
                } else {
                    out.extend(body);
                }
                *shape = s;
            }
            BlockSpec::ShuffleUnit { out: cout, stride } => {
                let (cin, h, w) = shape.map(scope)?;
                let cout = self.sc_even(*cout);
                match stride {
                    1 => {
                        if cout != cin {
                            return Err(Error::Config(format!(
                                "{scope}: stride-1 shuffle unit maps {cin} channels to {cout}"
                            )));
                        }
                        if cin % 2 != 0 {
                            return Err(Error::Config(format!(
                                "{scope}: shuffle unit input channels {cin} not even"
                            )));
                        }
                        let half = cin / 2;
                        let mut right = Vec::new();
                        let mut s = Shape::Map { c: half, h, w };
                        self.conv_unit(&mut right, &format!("{scope}.r0"), &mut s, half, 1, 1, 0, 1, true, false, Some(ActKind::Relu))?;
                        self.conv_unit(&mut right, &format!("{scope}.r1"), &mut s, half, 3, 1, 1, half, true, false, None)?;
                        self.conv_unit(&mut right, &format!("{scope}.r2"), &mut s, half, 1, 1, 0, 1, true, false, Some(ActKind::Relu))?;
                        out.push(Piece::SplitRight { keep: half, right });
                        out.push(Piece::ChannelShuffle { groups: 2 });
                        let (_, ho, wo) = s.map(scope)?;
                        *shape = Shape::Map { c: cout, h: ho, w: wo };
                    }
                    2 => {
                        let half = cout / 2;
                        let mut left = Vec::new();
                        let mut sl = *shape;
                        self.conv_unit(&mut left, &format!("{scope}.l0"), &mut sl, cin, 3, 2, 1, cin, true, false, None)?;
                        self.conv_unit(&mut left, &format!("{scope}.l1"), &mut sl, half, 1, 1, 0, 1, true, false, Some(ActKind::Relu))?;
                        let mut right = Vec::new();
                        let mut sr = *shape;
                        self.conv_unit(&mut right, &format!("{scope}.r0"), &mut sr, half, 1, 1, 0, 1, true, false, Some(ActKind::Relu))?;
                        self.conv_unit(&mut right, &format!("{scope}.r1"), &mut sr, half, 3, 2, 1, half, true, false, None)?;
                        self.conv_unit(&mut right, &format!("{scope}.r2"), &mut sr, half, 1, 1, 0, 1, true, false, Some(ActKind::Relu))?;
                        out.push(Piece::Branches(vec![left, right]));
                        out.push(Piece::ChannelShuffle { groups: 2 });
                        let (_, ho, wo) = sr.map(scope)?;
                        *shape = Shape::Map { c: cout, h: ho, w: wo };
                    }
                    other => {
                        return Err(Error::Config(format!(
                            "{scope}: shuffle unit stride must be 1 or 2, got {other}"
                        )))
                    }
                }
            }
            BlockSpec::Fire { squeeze, expand1, expand3, bn, bias } => {
                self.conv_unit(
                    out,
                    &format!("{scope}.sq"),
                    shape,
                    self.sc(*squeeze),
                    1,
                    1,
                    0,
                    1,
                    *bn,
                    *bias,
                    Some(ActKind::Relu),
                )?;
                let (c, h, w) = shape.map(scope)?;
                let (e1, e3) = (self.sc(*expand1), self.sc(*expand3));
                let mut b1 = Vec::new();
                let mut s1 = Shape::Map { c, h, w };
                self.conv_unit(&mut b1, &format!("{scope}.e1"), &mut s1, e1, 1, 1, 0, 1, *bn, *bias, Some(ActKind::Relu))?;
                let mut b3 = Vec::new();
                let mut s3 = Shape::Map { c, h, w };
                self.conv_unit(&mut b3, &format!("{scope}.e3"), &mut s3, e3, 3, 1, 1, 1, *bn, *bias, Some(ActKind::Relu))?;
                out.push(Piece::Branches(vec![b1, b3]));
                *shape = Shape::Map { c: e1 + e3, h, w };
            }
            BlockSpec::MaxPool { k, stride, pad } => {
                let (c, h, w) = shape.map(scope)?;
                let ho = out_extent(h, *k, *stride, *pad)
                    .map_err(|e| Error::Geometry(format!("{scope}: {e}")))?;
                let wo = out_extent(w, *k, *stride, *pad)
                    .map_err(|e| Error::Geometry(format!("{scope}: {e}")))?;
                out.push(Piece::MaxPool { k: *k, stride: *stride, pad: *pad });
                *shape = Shape::Map { c, h: ho, w: wo };
            }
            BlockSpec::GlobalAvgPool => {
                let (c, _, _) = shape.map(scope)?;
                out.push(Piece::GlobalAvgPool);
                *shape = Shape::Map { c, h: 1, w: 1 };
            }
            BlockSpec::Linear { out: dim, bias, act } => {
                let inf = match *shape {
                    Shape::Map { c, h, w } => {
                        out.push(Piece::Flatten);
                        c * h * w
                    }
                    Shape::Flat(n) => n,
                };
                let outf = match dim {
                    OutDim::Classes => self.classes,
                    OutDim::Fixed(n) => self.sc(*n),
                };
                out.push(Piece::Linear { name: format!("{scope}.fc"), inf, outf, bias: *bias });
                if let Some(a) = act {
                    out.push(Piece::Act(*a));
                }
                *shape = Shape::Flat(outf);
            }
            BlockSpec::ConvClassifier { bias, act } => {
                self.conv_unit(
                    out,
                    &format!("{scope}.cls"),
                    shape,
                    self.classes,
                    1,
                    1,
                    0,
                    1,
                    false,
                    *bias,
                    *act,
                )?;
                let (c, _, _) = shape.map(scope)?;
                out.push(Piece::GlobalAvgPool);
                out.push(Piece::Flatten);
                *shape = Shape::Flat(c);
            }
        }
        Ok(())
    }
}

/// Resolve a spec into pieces, checking geometry and channel arithmetic.
pub fn lower(spec: &ModelSpec) -> Result<Lowered> {
    let lo = Lowerer { wm: spec.width_mult, classes: spec.classes };
    let mut shape = Shape::Map { c: spec.input[0], h: spec.input[1], w: spec.input[2] };
    let mut pieces = Vec::new();
    for (i, b) in spec.features.iter().enumerate() {
        lo.block(&mut pieces, &format!("f{i:02}"), &mut shape, b)?;
    }
    let boundary = pieces.len();
    for (i, b) in spec.head.iter().enumerate() {
        lo.block(&mut pieces, &format!("h{i:02}"), &mut shape, b)?;
    }
    match shape {
        Shape::Flat(n) if n == spec.classes => Ok(Lowered { pieces, boundary }),
        Shape::Flat(n) => Err(Error::Config(format!(
            "head produces {n} outputs for {} classes",
            spec.classes
        ))),
        Shape::Map { .. } => Err(Error::Config("head must end in a flat logit vector".into())),
    }
}

/// One parameter to allocate for a piece tree.
#[derive(Clone, Debug)]
pub struct ParamDef {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub fan_in: usize,
    pub head: bool,
}

fn collect_defs(pieces: &[Piece], head: bool, defs: &mut Vec<ParamDef>) {
    for p in pieces {
        match p {
            Piece::Conv { name, cin, cout, k, groups, bias, .. } => {
                let cpg = cin / groups;
                let fan_in = cpg * k * k;
                defs.push(ParamDef {
                    name: format!("{name}.w"),
                    shape: vec![*cout, cpg, *k, *k],
                    kind: ParamKind::Weight,
                    fan_in,
                    head,
                });
                if *bias {
                    defs.push(ParamDef {
                        name: format!("{name}.b"),
                        shape: vec![*cout],
                        kind: ParamKind::Bias,
                        fan_in,
                        head,
                    });
                }
            }
            Piece::Bn { name, c } => {
                for (suffix, kind) in [
                    ("gamma", ParamKind::Gamma),
                    ("beta", ParamKind::Beta),
                    ("rm", ParamKind::RunningMean),
                    ("rv", ParamKind::RunningVar),
                ] {
                    defs.push(ParamDef {
                        name: format!("{name}.{suffix}"),
                        shape: vec![*c],
                        kind,
                        fan_in: 0,
                        head,
                    });
                }
            }
            Piece::Linear { name, inf, outf, bias } => {
                defs.push(ParamDef {
                    name: format!("{name}.w"),
                    shape: vec![*outf, *inf],
                    kind: ParamKind::Weight,
                    fan_in: *inf,
                    head,
                });
                if *bias {
                    defs.push(ParamDef {
                        name: format!("{name}.b"),
                        shape: vec![*outf],
                        kind: ParamKind::Bias,
                        fan_in: *inf,
                        head,
                    });
                }
            }
            Piece::Residual(body) | Piece::SqueezeExcite(body) => collect_defs(body, head, defs),
            Piece::Branches(bodies) => {
                for b in bodies {
                    collect_defs(b, head, defs);
                }
            }
            Piece::SplitRight { right, .. } => collect_defs(right, head, defs),
            _ => {}
        }
    }
}

/// All parameters of a lowered model, in traversal order.
pub fn param_defs(lowered: &Lowered) -> Vec<ParamDef> {
    let mut defs = Vec::new();
    collect_defs(&lowered.pieces[..lowered.boundary], false, &mut defs);
    collect_defs(&lowered.pieces[lowered.boundary..], true, &mut defs);
    defs
}
