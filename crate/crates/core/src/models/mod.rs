//! Architecture descriptions, parameter initialization, and the forward pass.

mod cost;
mod forward;
mod lower;

pub use cost::{count_flops, count_params, CostReport};
pub use lower::{param_defs, Lowered, ParamDef, Piece};

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::CounterRng;
use crate::tensor::kernels::ActKind;
use crate::tensor::param::{bias_uniform, kaiming_uniform, ParamKind, ParamStore};
use crate::tensor::tape::{Tape, ValueId};
use crate::{Elem, Error, Result, Tensor};

/// Architecture family a preset belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Mobile,
    Mnas,
    Shuffle,
    Squeeze,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Mobile, Family::Mnas, Family::Shuffle, Family::Squeeze];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Mobile => "mobile",
            Family::Mnas => "mnas",
            Family::Shuffle => "shuffle",
            Family::Squeeze => "squeeze",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mobile" => Ok(Family::Mobile),
            "mnas" => Ok(Family::Mnas),
            "shuffle" => Ok(Family::Shuffle),
            "squeeze" => Ok(Family::Squeeze),
            other => Err(Error::Config(format!("unknown family '{other}'"))),
        }
    }
}

/// Size tier of a preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetKind {
    Full,
    Micro,
}

impl PresetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PresetKind::Full => "full",
            PresetKind::Micro => "micro",
        }
    }
}

impl fmt::Display for PresetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PresetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(PresetKind::Full),
            "micro" => Ok(PresetKind::Micro),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

/// Transfer strategy controlling which parameters train.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Tfs,
    Hft,
    Fft,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Tfs, Strategy::Hft, Strategy::Fft];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Tfs => "tfs",
            Strategy::Hft => "hft",
            Strategy::Fft => "fft",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tfs" => Ok(Strategy::Tfs),
            "hft" => Ok(Strategy::Hft),
            "fft" => Ok(Strategy::Fft),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Output width of a linear layer: the dataset's class count or a fixed size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutDim {
    Classes,
    Fixed(usize),
}

impl Serialize for OutDim {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            OutDim::Classes => s.serialize_str("classes"),
            OutDim::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for OutDim {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(usize),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(n) => Ok(OutDim::Fixed(n)),
            Repr::Tag(t) if t == "classes" => Ok(OutDim::Classes),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!(
                "expected a width or \"classes\", got \"{t}\""
            ))),
        }
    }
}

/// One stage in an architecture description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", rename_all_fields = "kebab-case", deny_unknown_fields)]
pub enum BlockSpec {
    PlainConv {
        out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bn: bool,
        bias: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        act: Option<ActKind>,
    },
    DwSeparable {
        out: usize,
        k: usize,
        stride: usize,
        bn: bool,
        act: ActKind,
    },
    InvertedResidual {
        out: usize,
        k: usize,
        stride: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exp_channels: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expansion: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        se_channels: Option<usize>,
        act: ActKind,
    },
    ShuffleUnit {
        out: usize,
        stride: usize,
    },
    Fire {
        squeeze: usize,
        expand1: usize,
        expand3: usize,
        bn: bool,
        bias: bool,
    },
    MaxPool {
        k: usize,
        stride: usize,
        pad: usize,
    },
    GlobalAvgPool,
    Linear {
        out: OutDim,
        bias: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        act: Option<ActKind>,
    },
    ConvClassifier {
        bias: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        act: Option<ActKind>,
    },
}

/// A complete architecture: stage list split at the feature/classifier boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub preset: PresetKind,
    #[serde(default = "default_width")]
    pub width_mult: f64,
    pub input: [usize; 3],
    #[serde(default)]
    pub classes: usize,
    pub features: Vec<BlockSpec>,
    pub head: Vec<BlockSpec>,
}

fn default_width() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::Config("class count must be positive".into()));
        }
        if self.width_mult <= 0.0 || !self.width_mult.is_finite() {
            return Err(Error::Config(format!(
                "width multiplier must be positive and finite, got {}",
                self.width_mult
            )));
        }
        if self.input.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("input shape {:?} has a zero dim", self.input)));
        }
        if self.features.is_empty() {
            return Err(Error::Config("feature stage list is empty".into()));
        }
        if self.head.is_empty() {
            return Err(Error::Config("head stage list is empty".into()));
        }
        for (i, b) in self.features.iter().chain(self.head.iter()).enumerate() {
            if let BlockSpec::InvertedResidual { exp_channels, expansion, .. } = b {
                match (exp_channels, expansion) {
                    (None, None) => {
                        return Err(Error::Config(format!(
                            "stage {i}: inverted-residual needs exp-channels or expansion"
                        )))
                    }
                    (Some(_), Some(_)) => {
                        return Err(Error::Config(format!(
                            "stage {i}: inverted-residual has both exp-channels and expansion"
                        )))
                    }
                    _ => {}
                }
                if let Some(e) = expansion {
                    if *e < 1.0 || !e.is_finite() {
                        return Err(Error::Config(format!("stage {i}: expansion {e} below 1")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical digest of the architecture, used to guard checkpoint reuse.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("model spec serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex(&h.finalize())
    }

    /// Digest of the feature extractor alone: everything but the classifier
    /// head and class count. Checkpoints with equal feature digests can donate
    /// features to each other even when their heads differ.
    pub fn feature_digest(&self) -> String {
        let json = serde_json::json!({
            "family": self.family,
            "preset": self.preset,
            "width-mult": self.width_mult,
            "input": self.input,
            "features": self.features,
        });
        let mut h = Sha256::new();
        h.update(json.to_string().as_bytes());
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

const PRESETS: [(&str, &str); 8] = [
    ("mobile/full", include_str!("presets/mobile_full.json")),
    ("mobile/micro", include_str!("presets/mobile_micro.json")),
    ("mnas/full", include_str!("presets/mnas_full.json")),
    ("mnas/micro", include_str!("presets/mnas_micro.json")),
    ("shuffle/full", include_str!("presets/shuffle_full.json")),
    ("shuffle/micro", include_str!("presets/shuffle_micro.json")),
    ("squeeze/full", include_str!("presets/squeeze_full.json")),
    ("squeeze/micro", include_str!("presets/squeeze_micro.json")),
];

/// Load a shipped preset and apply the given width, input shape, and class count.
pub fn preset_spec(
    family: Family,
    preset: PresetKind,
    width_mult: f64,
    input: [usize; 3],
    classes: usize,
) -> Result<ModelSpec> {
    let key = format!("{family}/{preset}");
    let raw = PRESETS
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Config(format!("no preset '{key}'")))?;
    let mut spec: ModelSpec = serde_json::from_str(raw)?;
    spec.width_mult = width_mult;
    spec.input = input;
    spec.classes = classes;
    spec.validate()?;
    Ok(spec)
}

/// Default input shape for a preset tier.
pub fn default_input(preset: PresetKind) -> [usize; 3] {
    match preset {
        PresetKind::Full => [3, 224, 224],
        PresetKind::Micro => [1, 32, 32],
    }
}

/// A buildable network: lowered stages plus a parameter store.
#[derive(Clone, Debug)]
pub struct Model<E: Elem = f32> {
    pub spec: ModelSpec,
    lowered: Lowered,
    pub store: ParamStore<E>,
    index: HashMap<String, usize>,
    pub frozen_features: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl<E: Elem> Model<E> {
    /// Lower the spec and initialize every parameter from its own seeded stream.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let lowered = lower::lower(&spec)?;
        let defs = lower::param_defs(&lowered);
        let mut store = ParamStore::new();
        for def in &defs {
            let mut rng = CounterRng::new(seed, &["init", &def.name]);
            let value = match def.kind {
                ParamKind::Weight => kaiming_uniform::<E>(&def.shape, def.fan_in, &mut rng),
                ParamKind::Bias => bias_uniform::<E>(def.shape[0], def.fan_in, &mut rng),
                ParamKind::Gamma | ParamKind::RunningVar => Tensor::full(&def.shape, E::ONE),
                ParamKind::Beta | ParamKind::RunningMean => Tensor::zeros(&def.shape),
            };
            store.add(def.name.clone(), value, def.kind, def.head);
        }
        let index = store
            .slots()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
        Ok(Model {
            spec,
            lowered,
            store,
            index,
            frozen_features: false,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        })
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.lowered.pieces
    }

    pub fn boundary(&self) -> usize {
        self.lowered.boundary
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Run the network on a tape starting from an already-bound input value.
    pub fn forward_on_tape(
        &mut self,
        tape: &mut Tape<E>,
        input: ValueId,
        training: bool,
    ) -> Result<ValueId> {
        let ctx = forward::ForwardCtx {
            training,
            frozen_features: self.frozen_features,
            momentum: self.bn_momentum,
            eps: self.bn_eps,
        };
        forward::forward_pieces(
            &self.lowered.pieces,
            self.lowered.boundary,
            tape,
            &mut self.store,
            &self.index,
            input,
            &ctx,
        )
    }

    /// Inference-mode logits for a batch; checks shape and rejects non-finite output.
    pub fn forward_logits(&mut self, batch: &Tensor<E>) -> Result<Tensor<E>> {
        let shape = batch.shape();
        if shape.len() != 4 || shape[1..] != [self.spec.input[0], self.spec.input[1], self.spec.input[2]]
        {
            return Err(Error::Dim(format!(
                "batch shape {shape:?} does not match model input {:?}",
                self.spec.input
            )));
        }
        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone());
        let logits = self.forward_on_tape(&mut tape, x, false)?;
        let out = tape.value(logits).clone();
        out.assert_finite("logits")?;
        Ok(out)
    }

    /// Set per-parameter trainability for a strategy; hft also freezes feature
    /// batch-norm statistics by switching those layers to inference behavior.
    pub fn apply_strategy(&mut self, strategy: Strategy) {
        self.frozen_features = strategy == Strategy::Hft;
        for slot in self.store.slots_mut() {
            slot.trainable = slot.kind.is_learned() && (slot.head || strategy != Strategy::Hft);
        }
    }
}

/// Per-parameter train flags a strategy would assign, keyed by name.
pub fn trainable_mask<E: Elem>(model: &Model<E>, strategy: Strategy) -> Vec<(String, bool)> {
    model
        .store
        .slots()
        .iter()
        .map(|s| {
            let on = s.kind.is_learned() && (s.head || strategy != Strategy::Hft);
            (s.name.clone(), on)
        })
        .collect()
}

#[cfg(test)]
mod tests;
