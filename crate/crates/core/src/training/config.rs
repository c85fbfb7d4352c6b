use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::ProviderKind;
use crate::error::{Error, Result};
use crate::model::{Ablation, ModelConfig};
use crate::reasoner::Activation;

use super::losses::Reduction;

/// Token–token link range in the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr", into = "WindowRepr")]
pub enum Window {
    All,
    Size(usize),
}

impl Window {
    pub fn as_option(self) -> Option<usize> {
        match self {
            Window::All => None,
            Window::Size(w) => Some(w),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::All => f.write_str("all"),
            Window::Size(w) => write!(f, "{w}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WindowRepr {
    Size(usize),
    Name(String),
}

impl TryFrom<WindowRepr> for Window {
    type Error = String;

    fn try_from(r: WindowRepr) -> std::result::Result<Self, String> {
        match r {
            WindowRepr::Size(w) => Ok(Window::Size(w)),
            WindowRepr::Name(s) if s == "all" => Ok(Window::All),
            WindowRepr::Name(s) => Err(format!(
                "window must be \"all\" or a non-negative integer, got `{s}`"
            )),
        }
    }
}

impl From<Window> for WindowRepr {
    fn from(w: Window) -> Self {
        match w {
            Window::All => WindowRepr::Name("all".into()),
            Window::Size(w) => WindowRepr::Size(w),
        }
    }
}

/// Every key of the configuration file, with its meaning.
pub const CONFIG_SCHEMA: &[(&str, &str)] = &[
    ("corpus", "path to the JSON dialogue corpus"),
    (
        "labels",
        "path to the problem-type list, one per line; \"\" for the built-in twelve",
    ),
    (
        "vocab",
        "path to a vocabulary file; \"\" builds one from the corpus",
    ),
    (
        "min_freq",
        "minimum token count when building the vocabulary",
    ),
    (
        "intentions",
        "path to the intention side file; \"\" for none",
    ),
    (
        "provider",
        "intention provider: lookup, template or constant",
    ),
    ("learning_rate", "peak learning rate"),
    ("beta1", "first-moment decay"),
    ("beta2", "second-moment decay"),
    (
        "weight_decay",
        "decoupled weight decay (not applied to biases or norm gains)",
    ),
    ("warmup_steps", "linear warmup length in optimizer steps"),
    ("batch_size", "examples per optimizer step"),
    ("epochs", "passes over the training examples"),
    (
        "max_steps",
        "stop after this many optimizer steps; 0 for no cap",
    ),
    (
        "checkpoint_every",
        "write a checkpoint every this many epochs",
    ),
    ("lambda1", "weight of the generation loss"),
    ("lambda2", "weight of the problem-type loss"),
    ("loss_reduction", "generation loss over tokens: mean or sum"),
    ("max_len", "context length T in tokens"),
    ("max_decode", "decoding step cap"),
    ("intention_len", "intention length cap in tokens"),
    ("d", "hidden width"),
    ("heads", "attention heads in encoders and decoder"),
    ("ffn_width", "feed-forward inner width"),
    ("encoder_layers", "layers per encoder"),
    ("decoder_layers", "decoder layers"),
    ("K", "graph-attention layers"),
    ("window", "token-token edge range: \"all\" or an integer"),
    ("activation", "graph output nonlinearity: elu or relu"),
    (
        "tie_encoders",
        "share one encoder between context, situation and intention",
    ),
    ("ablation", "none, global, local, reasoner or l2"),
    ("seed", "seed for initialization and shuffling"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub corpus: PathBuf,
    pub labels: PathBuf,
    pub vocab: PathBuf,
    pub min_freq: usize,
    pub intentions: PathBuf,
    pub provider: ProviderKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: u64,
    pub checkpoint_every: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub loss_reduction: Reduction,
    pub max_len: usize,
    pub max_decode: usize,
    pub intention_len: usize,
    pub d: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub window: Window,
    pub activation: Activation,
    pub tie_encoders: bool,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("data/synthetic_corpus.json"),
            labels: PathBuf::new(),
            vocab: PathBuf::new(),
            min_freq: 1,
            intentions: PathBuf::new(),
            provider: ProviderKind::Template,
            learning_rate: 3e-5,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.01,
            warmup_steps: 100,
            batch_size: 16,
            epochs: 5,
            max_steps: 0,
            checkpoint_every: 1,
            lambda1: 0.5,
            lambda2: 0.5,
            loss_reduction: Reduction::Mean,
            max_len: 128,
            max_decode: 40,
            intention_len: 16,
            d: 64,
            heads: 2,
            ffn_width: 256,
            encoder_layers: 2,
            decoder_layers: 2,
            k: 2,
            window: Window::All,
            activation: Activation::Elu,
            tie_encoders: false,
            ablation: Ablation::None,
            seed: 42,
        }
    }
}

impl TrainConfig {
    /// Parses a config document. Every documented key must be present and
    /// no other key is accepted.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config {
            key: "<document>".into(),
            message: e.to_string(),
        })?;
        let documented = || {
            CONFIG_SCHEMA
                .iter()
                .map(|(k, _)| *k)
                .collect::<Vec<_>>()
                .join(", ")
        };
        for (key, meaning) in CONFIG_SCHEMA {
            if !table.contains_key(*key) {
                return Err(Error::Config {
                    key: key.to_string(),
                    message: format!("missing ({meaning}); documented keys: {}", documented()),
                });
            }
        }
        if let Some(extra) = table
            .keys()
            .find(|k| !CONFIG_SCHEMA.iter().any(|(s, _)| s == k))
        {
            return Err(Error::Config {
                key: extra.clone(),
                message: format!("unknown key; documented keys: {}", documented()),
            });
        }
        for (key, _) in CONFIG_SCHEMA {
            // one key at a time so a type error names its key
            probe_key(key, table[*key].clone()).map_err(|message| Error::Config {
                key: key.to_string(),
                message,
            })?;
        }
        let config: TrainConfig =
            toml::Value::Table(table)
                .try_into()
                .map_err(|e| Error::Config {
                    key: "<document>".into(),
                    message: e.to_string(),
                })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`; relative data paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.corpus,
            &mut config.labels,
            &mut config.vocab,
            &mut config.intentions,
        ] {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.into(),
                message: message.into(),
            })
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay", "must be non-negative");
        }
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return bad("lambda1", "must be non-negative");
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return bad("lambda2", "must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every", "must be at least 1");
        }
        if self.max_decode == 0 {
            return bad("max_decode", "must be at least 1");
        }
        if self.min_freq == 0 {
            return bad("min_freq", "must be at least 1");
        }
        if self.provider == ProviderKind::Lookup && self.intentions.as_os_str().is_empty() {
            return bad("intentions", "the lookup provider needs a side file");
        }
        Ok(())
    }

    /// λ2 after applying the ablation.
    pub fn effective_lambda2(&self) -> f64 {
        if self.ablation == Ablation::L2 {
            0.0
        } else {
            self.lambda2
        }
    }

    pub fn model_config(&self, vocab_size: usize, labels: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            labels,
            width: self.d,
            heads: self.heads,
            ffn_width: self.ffn_width,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            graph_layers: self.k,
            max_len: self.max_len,
            intention_len: self.intention_len,
            window: self.window.as_option(),
            activation: self.activation,
            tie_encoders: self.tie_encoders,
            ablation: self.ablation,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Probe<T> {
    #[allow(dead_code)]
    value: T,
}

fn probe<T: serde::de::DeserializeOwned>(v: toml::Value) -> std::result::Result<(), String> {
    let mut t = toml::Table::new();
    t.insert("value".into(), v);
    toml::Value::Table(t)
        .try_into::<Probe<T>>()
        .map(|_| ())
        .map_err(|e| e.message().to_string())
}

fn probe_key(key: &str, v: toml::Value) -> std::result::Result<(), String> {
    match key {
        "corpus" | "labels" | "vocab" | "intentions" => probe::<PathBuf>(v),
        "provider" => probe::<ProviderKind>(v),
        "learning_rate" | "beta1" | "beta2" | "weight_decay" | "lambda1" | "lambda2" => {
            probe::<f64>(v)
        }
        "warmup_steps" | "max_steps" | "seed" => probe::<u64>(v),
        "loss_reduction" => probe::<Reduction>(v),
        "window" => probe::<Window>(v),
        "activation" => probe::<Activation>(v),
        "tie_encoders" => probe::<bool>(v),
        "ablation" => probe::<Ablation>(v),
        _ => probe::<usize>(v),
    }
}
