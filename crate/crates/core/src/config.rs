//! Model and training configuration in a flat `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. A `preset` line
//! (`hgb` or `large`) resets every field to that preset before the
//! remaining keys are applied, wherever it appears in the file.

use std::fmt::Write as _;
use std::path::Path;

use crate::alignment::InstanceEncoder;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerOrderMode {
    Count,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterOrderMode {
    Degree,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub metapath_attention_dim: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub num_epochs: usize,
    pub inner_order_mode: InnerOrderMode,
    pub outer_order_mode: OuterOrderMode,
    pub instance_encoder: InstanceEncoder,
    pub zoh_exact: bool,
    pub max_instances_per_node: usize,
    pub simple_paths_only: bool,
    pub state_dim: usize,
    pub expand: usize,
    pub conv_width: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::hgb()
    }
}

impl ModelConfig {
    /// Defaults for benchmark-sized graphs.
    pub fn hgb() -> Self {
        Self {
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 8,
            metapath_attention_dim: 128,
            learning_rate: 5e-4,
            weight_decay: 1e-4,
            num_epochs: 150,
            inner_order_mode: InnerOrderMode::Count,
            outer_order_mode: OuterOrderMode::Degree,
            instance_encoder: InstanceEncoder::Mean,
            zoh_exact: true,
            max_instances_per_node: 200,
            simple_paths_only: false,
            state_dim: 16,
            expand: 2,
            conv_width: 4,
            seed: 0,
        }
    }

    /// Defaults for the large (ogbn-mag sized) setting.
    pub fn large() -> Self {
        Self {
            hidden_dim: 128,
            num_layers: 4,
            metapath_attention_dim: 256,
            learning_rate: 3e-3,
            weight_decay: 5e-4,
            num_epochs: 300,
            ..Self::hgb()
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut cfg = Self::hgb();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                cfg = match v {
                    "hgb" => Self::hgb(),
                    "large" => Self::large(),
                    _ => return Err(Error::Config(format!("unknown preset `{v}` (expected hgb or large)"))),
                };
            } else {
                pairs.push((lineno + 1, k, v));
            }
        }
        for (lineno, k, v) in pairs {
            cfg.set(k, v).map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("`{key}` has unparsable value `{v}`"))
        }
        match key {
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            "num_layers" => self.num_layers = num(key, value)?,
            "num_heads" => self.num_heads = num(key, value)?,
            "metapath_attention_dim" => self.metapath_attention_dim = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "num_epochs" => self.num_epochs = num(key, value)?,
            "max_instances_per_node" => self.max_instances_per_node = num(key, value)?,
            "state_dim" => self.state_dim = num(key, value)?,
            "expand" => self.expand = num(key, value)?,
            "conv_width" => self.conv_width = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "zoh_exact" => self.zoh_exact = num(key, value)?,
            "simple_paths_only" => self.simple_paths_only = num(key, value)?,
            "instance_encoder" => self.instance_encoder = value.parse().map_err(|e: Error| e.to_string())?,
            "inner_order_mode" => {
                self.inner_order_mode = match value {
                    "count" => InnerOrderMode::Count,
                    "random" => InnerOrderMode::Random,
                    _ => return Err(format!("inner_order_mode must be `count` or `random`, got `{value}`")),
                }
            }
            "outer_order_mode" => {
                self.outer_order_mode = match value {
                    "degree" => OuterOrderMode::Degree,
                    "random" => OuterOrderMode::Random,
                    _ => return Err(format!("outer_order_mode must be `degree` or `random`, got `{value}`")),
                }
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("metapath_attention_dim", self.metapath_attention_dim),
            ("max_instances_per_node", self.max_instances_per_node),
            ("state_dim", self.state_dim),
            ("expand", self.expand),
            ("conv_width", self.conv_width),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Canonical text form; [`ModelConfig::parse`] reads it back exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("hidden_dim", self.hidden_dim.to_string());
        line("num_layers", self.num_layers.to_string());
        line("num_heads", self.num_heads.to_string());
        line("metapath_attention_dim", self.metapath_attention_dim.to_string());
        line("learning_rate", format!("{:?}", self.learning_rate));
        line("weight_decay", format!("{:?}", self.weight_decay));
        line("num_epochs", self.num_epochs.to_string());
        line(
            "inner_order_mode",
            match self.inner_order_mode {
                InnerOrderMode::Count => "count",
                InnerOrderMode::Random => "random",
            }
            .into(),
        );
        line(
            "outer_order_mode",
            match self.outer_order_mode {
                OuterOrderMode::Degree => "degree",
                OuterOrderMode::Random => "random",
            }
            .into(),
        );
        line("instance_encoder", self.instance_encoder.to_string());
        line("zoh_exact", self.zoh_exact.to_string());
        line("max_instances_per_node", self.max_instances_per_node.to_string());
        line("simple_paths_only", self.simple_paths_only.to_string());
        line("state_dim", self.state_dim.to_string());
        line("expand", self.expand.to_string());
        line("conv_width", self.conv_width.to_string());
        line("seed", self.seed.to_string());
        s
    }
}
