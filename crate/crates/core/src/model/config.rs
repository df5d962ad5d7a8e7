use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backbone flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Both branches as one token sequence with shared projections.
    SelfAttention,
    /// Double-branch cross attention: each branch queries the other.
    DbcAttention,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::SelfAttention => "self_attention",
            Variant::DbcAttention => "dbc_attention",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" | "self_attention" => Ok(Variant::SelfAttention),
            "dbc" | "dbc_attention" => Ok(Variant::DbcAttention),
            other => Err(Error::InvalidArgument(format!("unknown variant {other:?}"))),
        }
    }
}

/// Model scale family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    S,
    M,
    L,
    X,
}

impl Scale {
    pub fn width_factor(self) -> f64 {
        match self {
            Scale::S => 0.125,
            Scale::M => 0.25,
            Scale::L => 0.5,
            Scale::X => 1.0,
        }
    }

    pub fn default_depth(self) -> usize {
        match self {
            Scale::S => 1,
            Scale::M => 2,
            Scale::L => 4,
            Scale::X => 8,
        }
    }

    pub fn default_heads(self) -> usize {
        match self {
            Scale::S => 2,
            Scale::M | Scale::L => 4,
            Scale::X => 8,
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s" => Ok(Scale::S),
            "m" => Ok(Scale::M),
            "l" => Ok(Scale::L),
            "x" => Ok(Scale::X),
            other => Err(Error::InvalidArgument(format!("unknown scale {other:?}"))),
        }
    }
}

/// `⌊512·λ_w⌋`.
pub fn embed_dim_for(width_factor: f64) -> usize {
    (512.0 * width_factor).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width_factor: f64,
    pub embed_dim: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub variant: Variant,
    /// Retained spectral bins; the embedding input is `2·l_cut` wide.
    pub l_cut: usize,
    /// Tokens each branch embedding is split into for attention. 1 keeps
    /// every branch a single 1×d token.
    pub tokens_per_branch: usize,
    /// Skip the SiLU on the two head logits.
    pub head_softmax_only: bool,
}

impl ModelConfig {
    pub fn for_scale(scale: Scale, variant: Variant, l_cut: usize) -> Self {
        let width_factor = scale.width_factor();
        Self {
            width_factor,
            embed_dim: embed_dim_for(width_factor),
            depth: scale.default_depth(),
            n_heads: scale.default_heads(),
            variant,
            l_cut,
            tokens_per_branch: 1,
            head_softmax_only: false,
        }
    }

    pub fn input_dim(&self) -> usize {
        2 * self.l_cut
    }

    pub fn token_dim(&self) -> usize {
        self.embed_dim / self.tokens_per_branch
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.embed_dim == 0 || self.l_cut == 0 {
            return Err(Error::Config("embed_dim and l_cut must be positive".into()));
        }
        if self.tokens_per_branch == 0 || !self.embed_dim.is_multiple_of(self.tokens_per_branch) {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible into {} tokens",
                self.embed_dim, self.tokens_per_branch
            )));
        }
        if self.n_heads == 0 || !self.token_dim().is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "token width {} not divisible by {} heads",
                self.token_dim(),
                self.n_heads
            )));
        }
        if self.embed_dim < 2 {
            return Err(Error::Config("layer norm needs embed_dim >= 2".into()));
        }
        Ok(())
    }
}
