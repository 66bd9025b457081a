// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the feed-forward block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnVariant {
    /// `σ(W_in·x + b_in)`
    Vanilla,
    /// `σ(W_gate·x + b_gate) ⊙ (W_in·x + b_in)`
    Gated,
}

impl FfnVariant {
    /// Nonlinearity used when none is given explicitly.
    pub fn default_activation(self) -> ActivationFn {
        match self {
            FfnVariant::Vanilla => ActivationFn::Relu,
            FfnVariant::Gated => ActivationFn::Silu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationFn {
    Relu,
    Gelu,
    Silu,
}

impl ActivationFn {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationFn::Relu => x.max(0.0),
            // tanh approximation, as used by GPT-2 style models
            ActivationFn::Gelu => {
                const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
                0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
            }
            ActivationFn::Silu => x / (1.0 + (-x).exp()),
        }
    }
}

macro_rules! str_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(Error::Input(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

str_enum!(FfnVariant { FfnVariant::Vanilla => "vanilla", FfnVariant::Gated => "gated" });
str_enum!(ActivationFn {
    ActivationFn::Relu => "relu",
    ActivationFn::Gelu => "gelu",
    ActivationFn::Silu => "silu",
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub n_heads: usize,
    pub ffn_variant: FfnVariant,
    pub activation: ActivationFn,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(
        n_layers: usize,
        d_model: usize,
        d_ff: usize,
        vocab_size: usize,
        n_heads: usize,
        ffn_variant: FfnVariant,
        seed: u64,
    ) -> Self {
        Self {
            n_layers,
            d_model,
            d_ff,
            vocab_size,
            n_heads,
            ffn_variant,
            activation: ffn_variant.default_activation(),
            seed,
        }
    }

    pub fn with_activation(mut self, activation: ActivationFn) -> Self {
        self.activation = activation;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        if self.d_model == 0 || self.n_heads == 0 {
            return Err(Error::Config("d_model and n_heads must be nonzero".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "head dimension {} must be even for rotary embeddings",
                self.head_dim()
            )));
        }
        if self.d_ff == 0 {
            return Err(Error::Config("d_ff must be at least 1".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(4, 64, 256, 128, 4, FfnVariant::Gated, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig::new(1, 30, 8, 10, 4, FfnVariant::Vanilla, 0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_tiny_vocab_and_empty_ffn() {
        let mut cfg = ModelConfig::new(1, 8, 8, 1, 2, FfnVariant::Vanilla, 0);
        assert!(cfg.validate().is_err());
        cfg.vocab_size = 2;
        cfg.d_ff = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variant_defaults() {
        assert_eq!(FfnVariant::Vanilla.default_activation(), ActivationFn::Relu);
        assert_eq!(FfnVariant::Gated.default_activation(), ActivationFn::Silu);
        assert_eq!("Gated".parse::<FfnVariant>().unwrap(), FfnVariant::Gated);
        assert!("swiglu".parse::<ActivationFn>().is_err());
    }

    #[test]
    fn activation_values() {
        assert_eq!(ActivationFn::Relu.apply(-1.0), 0.0);
        assert!((ActivationFn::Silu.apply(0.0)).abs() < 1e-15);
        assert!((ActivationFn::Gelu.apply(0.0)).abs() < 1e-15);
        assert!((ActivationFn::Silu.apply(2.0) - 2.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
    }
}
