//! Flat `key = value` run configuration. `#` and `;` start comments.

use std::path::Path;

use crate::embed::{FusionKind, GateActivation};
use crate::error::{Error, Result};
use crate::model::{AttentionKind, ModelConfig};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Keys that must be present in every config file.
pub const REQUIRED_KEYS: [&str; 1] = ["hidden_size"];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses config text. Every key except `hidden_size` falls back to its
    /// default.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut model = ModelConfig::default();
        let mut train = TrainConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!("expected `key = value`, found `{line}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            let bad = |msg: String| Error::InvalidValue {
                key: key.to_string(),
                path: path.to_path_buf(),
                line: line_no,
                msg,
            };
            fn num<V: std::str::FromStr>(v: &str, bad: impl Fn(String) -> Error) -> Result<V>
            where
                V::Err: std::fmt::Display,
            {
                v.parse().map_err(|e: V::Err| bad(format!("`{v}`: {e}")))
            }
            match key {
                "hidden_size" => model.hidden_size = num(value, bad)?,
                "heads" => model.heads = num(value, bad)?,
                "layers" => model.layers = num(value, bad)?,
                "max_len" => model.max_len = num(value, bad)?,
                "fusion" => model.fusion = value.parse::<FusionKind>().map_err(bad)?,
                "gate" => model.gate = value.parse::<GateActivation>().map_err(bad)?,
                "attention" => model.attention = value.parse::<AttentionKind>().map_err(bad)?,
                "dropout" => model.dropout = num(value, bad)?,
                "mask_prob" => model.mask_prob = num(value, bad)?,
                "use_position" => model.use_position = num(value, bad)?,
                "features" => {
                    model.features = match value {
                        "all" => None,
                        "none" | "" => Some(Vec::new()),
                        list => Some(list.split(',').map(|s| s.trim().to_string()).collect()),
                    }
                }
                "lr" => train.lr = num(value, bad)?,
                "epochs" => train.epochs = num(value, bad)?,
                "batch_size" => train.batch_size = num(value, bad)?,
                "warmup" => train.warmup = num(value, bad)?,
                "seed" => train.seed = num(value, bad)?,
                "beta1" => train.beta1 = num(value, bad)?,
                "beta2" => train.beta2 = num(value, bad)?,
                "eps" => train.eps = num(value, bad)?,
                "clip_norm" => train.clip_norm = num(value, bad)?,
                "eval_batch_size" => train.eval_batch_size = num(value, bad)?,
                "eval_every" => train.eval_every = num(value, bad)?,
                "patience" => {
                    train.patience = match value {
                        "none" => None,
                        v => Some(num(v, bad)?),
                    }
                }
                _ => return Err(bad("unknown key".into())),
            }
            seen.push(key.to_string());
        }
        for key in REQUIRED_KEYS {
            if !seen.iter().any(|k| k == key) {
                return Err(Error::MissingKey {
                    key: key.to_string(),
                    path: path.to_path_buf(),
                });
            }
        }
        model.validate()?;
        train.validate()?;
        Ok(Self { model, train })
    }

    /// Renders every key; parsing the output gives back the same config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let features = match &m.features {
            None => "all".to_string(),
            Some(f) if f.is_empty() => "none".to_string(),
            Some(f) => f.join(","),
        };
        let patience = t.patience.map_or("none".to_string(), |p| p.to_string());
        format!(
            "hidden_size = {}\nheads = {}\nlayers = {}\nmax_len = {}\nfusion = {}\ngate = {}\n\
             attention = {}\ndropout = {}\nmask_prob = {}\nuse_position = {}\nfeatures = {}\n\
             lr = {}\nepochs = {}\nbatch_size = {}\nwarmup = {}\nseed = {}\nbeta1 = {}\n\
             beta2 = {}\neps = {}\nclip_norm = {}\neval_batch_size = {}\neval_every = {}\n\
             patience = {}\n",
            m.hidden_size,
            m.heads,
            m.layers,
            m.max_len,
            m.fusion,
            m.gate,
            m.attention,
            m.dropout,
            m.mask_prob,
            m.use_position,
            features,
            t.lr,
            t.epochs,
            t.batch_size,
            t.warmup,
            t.seed,
            t.beta1,
            t.beta2,
            t.eps,
            t.clip_norm,
            t.eval_batch_size,
            t.eval_every,
            patience
        )
    }
}
