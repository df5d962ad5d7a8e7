use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::neural::{init_uniform, Tensor2};

pub const FDEL_ECHO_WEIGHT: &str = "fdel.echo.weight";
pub const FDEL_ECHO_BIAS: &str = "fdel.echo.bias";
pub const FDEL_TEMPLATE_WEIGHT: &str = "fdel.template.weight";
pub const FDEL_TEMPLATE_BIAS: &str = "fdel.template.bias";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// Named, ordered parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor2>,
    index: HashMap<String, usize>,
}

/// Parameter names and shapes for a configuration, in storage order.
pub fn layout(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let d = cfg.embed_dim;
    let w = cfg.token_dim();
    let mut out: Vec<(String, (usize, usize))> = vec![
        (FDEL_ECHO_WEIGHT.into(), (d, cfg.input_dim())),
        (FDEL_ECHO_BIAS.into(), (1, 1)),
        (FDEL_TEMPLATE_WEIGHT.into(), (d, cfg.input_dim())),
        (FDEL_TEMPLATE_BIAS.into(), (1, 1)),
    ];
    let branches: &[&str] = match cfg.variant {
        Variant::DbcAttention => &["1", "2"],
        Variant::SelfAttention => &[""],
    };
    for b in 0..cfg.depth {
        for suffix in branches {
            for proj in ["q", "k", "v"] {
                out.push((format!("blocks.{b}.{proj}{suffix}"), (w, w)));
            }
        }
        for suffix in branches {
            out.push((format!("blocks.{b}.attn_norm{suffix}.gamma"), (1, d)));
            out.push((format!("blocks.{b}.attn_norm{suffix}.beta"), (1, d)));
            out.push((format!("blocks.{b}.ffn{suffix}.weight"), (d, d)));
            out.push((format!("blocks.{b}.ffn{suffix}.bias"), (1, d)));
            out.push((format!("blocks.{b}.ffn_norm{suffix}.gamma"), (1, d)));
            out.push((format!("blocks.{b}.ffn_norm{suffix}.beta"), (1, d)));
        }
    }
    out.push((HEAD_WEIGHT.into(), (2, 2 * d)));
    out.push((HEAD_BIAS.into(), (1, 2)));
    out
}

impl ModelParams {
    pub fn from_entries(entries: Vec<(String, Tensor2)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut names = Vec::with_capacity(entries.len());
        let mut tensors = Vec::with_capacity(entries.len());
        for (i, (name, t)) in entries.into_iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            names,
            tensors,
            index,
        })
    }

    /// Uniform(±1/√fan_in) weights and biases, unit/zero layer-norm affines.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = layout(cfg)
            .into_iter()
            .map(|(name, (rows, cols))| {
                let t = if name.ends_with(".gamma") {
                    Tensor2::filled(rows, cols, 1.0)
                } else if name.ends_with(".beta") {
                    Tensor2::zeros(rows, cols)
                } else if name.starts_with("fdel.") && name.ends_with(".bias") {
                    init_uniform(rows, cols, cfg.input_dim(), &mut rng)
                } else if name == HEAD_BIAS {
                    init_uniform(rows, cols, 2 * cfg.embed_dim, &mut rng)
                } else if name.ends_with(".bias") {
                    init_uniform(rows, cols, cfg.embed_dim, &mut rng)
                } else {
                    init_uniform(rows, cols, cols, &mut rng)
                };
                (name, t)
            })
            .collect();
        Self::from_entries(entries)
    }

    /// Checks names and shapes against the configuration's layout.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = layout(cfg);
        if expected.len() != self.names.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                self.names.len()
            )));
        }
        for ((name, shape), (have, t)) in expected.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != have || *shape != t.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter {have} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor2] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor2] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor2::len).sum()
    }

    /// Scalars in the embedding layer alone.
    pub fn fdel_param_count(&self) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with("fdel."))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// The echo-branch embedding weights, the input to weight-derived filtering.
    pub fn echo_embedding(&self) -> Result<&Tensor2> {
        self.get(FDEL_ECHO_WEIGHT)
    }
}
