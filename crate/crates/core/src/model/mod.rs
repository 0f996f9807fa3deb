//! The recurrent encoder-decoder: per-feature embeddings, stacked GRU/LSTM
//! layers with variational recurrent dropout, and a feedforward or tied
//! decoder over cities.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, load_checkpoint_path, save_checkpoint, save_checkpoint_path};
pub use forward::{
    apply_input_dropout, bind, decode, embed_step, encode_session, forward_many_to_many,
    forward_many_to_many_counted, gru_step, lstm_step, BoundParams, ForwardOutput, GateNodes,
    Mode, OpCounter,
};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{Vocab, FEATURE_NAMES, NUM_FEATURES};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    /// Gate labels, in parameter/checkpoint order.
    pub fn gates(self) -> &'static [&'static str] {
        match self {
            CellKind::Gru => &["z", "r", "n"],
            CellKind::Lstm => &["f", "i", "o", "c"],
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        })
    }
}

impl FromStr for CellKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(ModelError::InvalidConfig(format!("unknown cell `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    Feedforward,
    Tied,
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Feedforward => "feedforward",
            DecoderKind::Tied => "tied",
        })
    }
}

impl FromStr for DecoderKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "feedforward" | "ff" => Ok(DecoderKind::Feedforward),
            "tied" => Ok(DecoderKind::Tied),
            other => Err(ModelError::InvalidConfig(format!("unknown decoder `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub layers: usize,
    pub hidden_dim: usize,
    pub decoder: DecoderKind,
    pub city_dim: usize,
    pub categorical_dim: usize,
    pub device_dim: usize,
    pub numerical_dim: usize,
    pub input_dropout: f64,
    pub recurrent_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            layers: 2,
            hidden_dim: 128,
            decoder: DecoderKind::Tied,
            city_dim: 128,
            categorical_dim: 25,
            device_dim: 5,
            numerical_dim: 10,
            input_dropout: 0.3,
            recurrent_dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.layers == 0 {
            return bad("layers must be ≥ 1".into());
        }
        for (name, dim) in [
            ("hidden_dim", self.hidden_dim),
            ("city_dim", self.city_dim),
            ("categorical_dim", self.categorical_dim),
            ("device_dim", self.device_dim),
            ("numerical_dim", self.numerical_dim),
        ] {
            if dim == 0 {
                return bad(format!("{name} must be ≥ 1"));
            }
        }
        for (name, p) in [("input_dropout", self.input_dropout), ("recurrent_dropout", self.recurrent_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1)"));
            }
        }
        if self.decoder == DecoderKind::Tied && self.hidden_dim != self.city_dim {
            return bad(format!(
                "tied decoder needs hidden_dim == city_dim, got {} vs {}",
                self.hidden_dim, self.city_dim
            ));
        }
        Ok(())
    }

    /// Embedding width of one feature column.
    pub fn column_dim(&self, column: usize) -> usize {
        match column {
            0 => self.city_dim,
            1..=3 | 12 | 13 => self.categorical_dim,
            4..=9 | 11 => self.numerical_dim,
            10 => self.device_dim,
            _ => panic!("feature column {column} out of range (have {NUM_FEATURES})"),
        }
    }

    /// Width of the concatenated per-step input (328 at default dims).
    pub fn input_dim(&self) -> usize {
        (0..NUM_FEATURES).map(|c| self.column_dim(c)).sum()
    }

    /// `key=value` serialization used by checkpoints and config files.
    pub fn to_kv(&self) -> String {
        format!(
            "cell={} layers={} hidden_dim={} decoder={} city_dim={} categorical_dim={} device_dim={} numerical_dim={} input_dropout={} recurrent_dropout={}",
            self.cell,
            self.layers,
            self.hidden_dim,
            self.decoder,
            self.city_dim,
            self.categorical_dim,
            self.device_dim,
            self.numerical_dim,
            self.input_dropout,
            self.recurrent_dropout,
        )
    }

    pub fn from_kv(kv: &str) -> Result<Self, ModelError> {
        let mut config = ModelConfig::default();
        for piece in kv.split_whitespace() {
            let (key, value) = piece
                .split_once('=')
                .ok_or_else(|| ModelError::InvalidConfig(format!("bad config entry `{piece}`")))?;
            config.set_field(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Assigns one field by name; shared by checkpoint manifests, config
    /// files, and CLI overrides.
    pub fn set_field(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        let bad = |key: &str, value: &str| {
            ModelError::InvalidConfig(format!("bad value `{value}` for `{key}`"))
        };
        match key {
            "cell" => self.cell = value.parse()?,
            "decoder" => self.decoder = value.parse()?,
            "layers" => self.layers = value.parse().map_err(|_| bad(key, value))?,
            "hidden_dim" => self.hidden_dim = value.parse().map_err(|_| bad(key, value))?,
            "city_dim" => self.city_dim = value.parse().map_err(|_| bad(key, value))?,
            "categorical_dim" => self.categorical_dim = value.parse().map_err(|_| bad(key, value))?,
            "device_dim" => self.device_dim = value.parse().map_err(|_| bad(key, value))?,
            "numerical_dim" => self.numerical_dim = value.parse().map_err(|_| bad(key, value))?,
            "input_dropout" => self.input_dropout = value.parse().map_err(|_| bad(key, value))?,
            "recurrent_dropout" => self.recurrent_dropout = value.parse().map_err(|_| bad(key, value))?,
            other => return Err(ModelError::InvalidConfig(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}

/// Indices into the flat tensor store for one gate's blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateSlots {
    pub w: usize,
    pub u: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    embeddings: [usize; NUM_FEATURES],
    layers: Vec<Vec<GateSlots>>,
    decoder: Option<(usize, usize)>,
}

/// All trainable tensors, flat and ordered; the layout maps roles to slots.
/// The flat order is the contract shared by the optimizer, checkpoints, and
/// the tape binding.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    layout: Layout,
}

impl ModelParams {
    /// Fresh parameters: embeddings uniform in ±0.05, weights uniform in
    /// ±1/√fan_in, biases zero except the LSTM forget gate at 1.
    pub fn init(config: ModelConfig, vocab: &Vocab, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize, bound: f64| {
            Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
        };

        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let push = |names: &mut Vec<String>, tensors: &mut Vec<Tensor>, name: String, t: Tensor| -> usize {
            names.push(name);
            tensors.push(t);
            tensors.len() - 1
        };

        let mut embeddings = [0usize; NUM_FEATURES];
        for (col, slot) in embeddings.iter_mut().enumerate() {
            let card = vocab.column_cardinality(col);
            let dim = config.column_dim(col);
            *slot = push(
                &mut names,
                &mut tensors,
                format!("embedding.{}", FEATURE_NAMES[col]),
                uniform(card, dim, 0.05),
            );
        }

        let mut layers = Vec::with_capacity(config.layers);
        for layer in 0..config.layers {
            let in_dim = if layer == 0 { config.input_dim() } else { config.hidden_dim };
            let w_bound = 1.0 / (in_dim as f64).sqrt();
            let u_bound = 1.0 / (config.hidden_dim as f64).sqrt();
            let mut gates = Vec::new();
            for &gate in config.cell.gates() {
                let w = uniform(in_dim, config.hidden_dim, w_bound);
                let u = uniform(config.hidden_dim, config.hidden_dim, u_bound);
                let bias_value = if config.cell == CellKind::Lstm && gate == "f" { 1.0 } else { 0.0 };
                let b = Tensor::filled(1, config.hidden_dim, bias_value);
                gates.push(GateSlots {
                    w: push(&mut names, &mut tensors, format!("layer{layer}.{gate}.w"), w),
                    u: push(&mut names, &mut tensors, format!("layer{layer}.{gate}.u"), u),
                    b: push(&mut names, &mut tensors, format!("layer{layer}.{gate}.b"), b),
                });
            }
            layers.push(gates);
        }

        let decoder = match config.decoder {
            DecoderKind::Tied => None,
            DecoderKind::Feedforward => {
                let bound = 1.0 / (config.hidden_dim as f64).sqrt();
                let w = uniform(config.hidden_dim, vocab.n_cities(), bound);
                let b = Tensor::zeros(1, vocab.n_cities());
                let w_slot = push(&mut names, &mut tensors, "decoder.w".into(), w);
                let b_slot = push(&mut names, &mut tensors, "decoder.b".into(), b);
                Some((w_slot, b_slot))
            }
        };

        Ok(Self { config, names, tensors, layout: Layout { embeddings, layers, decoder } })
    }

    /// Rebuilds params from named tensors (checkpoint load). Order, names,
    /// and shapes must match what `init` would have produced for this config
    /// and some vocabulary.
    pub fn from_parts(
        config: ModelConfig,
        names: Vec<String>,
        tensors: Vec<Tensor>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let bad = |msg: String| Err(ModelError::Checkpoint(msg));
        if names.len() != tensors.len() {
            return bad(format!("{} names but {} tensors", names.len(), tensors.len()));
        }

        fn take(cursor: &mut usize, expected: &str, names: &[String]) -> Result<usize, ModelError> {
            if *cursor >= names.len() {
                return Err(ModelError::Checkpoint(format!("missing tensor `{expected}`")));
            }
            if names[*cursor] != expected {
                return Err(ModelError::Checkpoint(format!(
                    "expected tensor `{expected}` at slot {cursor}, found `{}`",
                    names[*cursor]
                )));
            }
            *cursor += 1;
            Ok(*cursor - 1)
        }
        let mut cursor = 0usize;

        let mut embeddings = [0usize; NUM_FEATURES];
        for (col, slot) in embeddings.iter_mut().enumerate() {
            *slot = take(&mut cursor, &format!("embedding.{}", FEATURE_NAMES[col]), &names)?;
            let t = &tensors[*slot];
            if t.cols() != config.column_dim(col) {
                return bad(format!(
                    "embedding.{} has width {}, config wants {}",
                    FEATURE_NAMES[col],
                    t.cols(),
                    config.column_dim(col)
                ));
            }
        }

        let mut layers = Vec::with_capacity(config.layers);
        for layer in 0..config.layers {
            let in_dim = if layer == 0 { config.input_dim() } else { config.hidden_dim };
            let mut gates = Vec::new();
            for &gate in config.cell.gates() {
                let w = take(&mut cursor, &format!("layer{layer}.{gate}.w"), &names)?;
                let u = take(&mut cursor, &format!("layer{layer}.{gate}.u"), &names)?;
                let b = take(&mut cursor, &format!("layer{layer}.{gate}.b"), &names)?;
                for (slot, want) in [
                    (w, (in_dim, config.hidden_dim)),
                    (u, (config.hidden_dim, config.hidden_dim)),
                    (b, (1, config.hidden_dim)),
                ] {
                    if tensors[slot].shape() != want {
                        return bad(format!(
                            "tensor `{}` has shape {:?}, expected {:?}",
                            names[slot],
                            tensors[slot].shape(),
                            want
                        ));
                    }
                }
                gates.push(GateSlots { w, u, b });
            }
            layers.push(gates);
        }

        let n_cities = tensors[embeddings[0]].rows();
        let decoder = match config.decoder {
            DecoderKind::Tied => None,
            DecoderKind::Feedforward => {
                let w = take(&mut cursor, "decoder.w", &names)?;
                let b = take(&mut cursor, "decoder.b", &names)?;
                if tensors[w].shape() != (config.hidden_dim, n_cities) || tensors[b].shape() != (1, n_cities) {
                    return bad("decoder shapes inconsistent with config and city table".into());
                }
                Some((w, b))
            }
        };
        if cursor != names.len() {
            return bad(format!("{} unexpected trailing tensors", names.len() - cursor));
        }

        Ok(Self { config, names, tensors, layout: Layout { embeddings, layers, decoder } })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, slot: usize) -> &Tensor {
        &self.tensors[slot]
    }

    /// Replaces one tensor (optimizer update); the shape must not change.
    /// In-place mutable view of one tensor's data, for the optimizer's
    /// element-wise updates. Shape can't change through this.
    pub(crate) fn tensor_data_mut(&mut self, slot: usize) -> &mut [f64] {
        self.tensors[slot].data_mut()
    }

    pub fn set_tensor(&mut self, slot: usize, tensor: Tensor) {
        assert_eq!(self.tensors[slot].shape(), tensor.shape(), "slot {slot} shape changed");
        self.tensors[slot] = tensor;
    }

    pub fn n_cities(&self) -> usize {
        self.tensors[self.layout.embeddings[0]].rows()
    }

    pub fn embedding_slot(&self, column: usize) -> usize {
        self.layout.embeddings[column]
    }

    pub fn layer_gates(&self, layer: usize) -> &[GateSlots] {
        &self.layout.layers[layer]
    }

    pub fn decoder_slots(&self) -> Option<(usize, usize)> {
        self.layout.decoder
    }

    /// Total scalar parameter count.
    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}
