use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Which relation kernels feed the correlation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct KernelSet {
    pub counting: bool,
    pub item: bool,
    pub user: bool,
}

impl KernelSet {
    pub const ALL: KernelSet = KernelSet {
        counting: true,
        item: true,
        user: true,
    };

    /// Activity flags in mixture order: counting, item, user.
    pub fn flags(&self) -> [bool; 3] {
        [self.counting, self.item, self.user]
    }

    pub fn is_empty(&self) -> bool {
        !(self.counting || self.item || self.user)
    }
}

impl Default for KernelSet {
    fn default() -> Self {
        Self::ALL
    }
}

impl FromStr for KernelSet {
    type Err = Error;

    /// Parses `"C"`, `"I+U"`, `"C+I+U"`, ...
    fn from_str(s: &str) -> Result<Self, Error> {
        let mut set = KernelSet {
            counting: false,
            item: false,
            user: false,
        };
        for part in s.split('+').map(str::trim) {
            let slot = match part.to_ascii_uppercase().as_str() {
                "C" => &mut set.counting,
                "I" => &mut set.item,
                "U" => &mut set.user,
                _ => return Err(Error::InvalidArgument(format!("unknown kernel {part:?} in {s:?}"))),
            };
            if *slot {
                return Err(Error::InvalidArgument(format!("kernel {part:?} repeated in {s:?}")));
            }
            *slot = true;
        }
        if set.is_empty() {
            return Err(Error::InvalidArgument("empty kernel set".into()));
        }
        Ok(set)
    }
}

impl fmt::Display for KernelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.counting, "C"), (self.item, "I"), (self.user, "U")]
            .into_iter()
            .filter_map(|(on, s)| on.then_some(s))
            .collect();
        f.write_str(&parts.join("+"))
    }
}

impl Serialize for KernelSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KernelSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKernel {
    Linear,
    #[default]
    Rbf,
}

impl FromStr for ItemKernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ItemKernel::Linear),
            "rbf" => Ok(ItemKernel::Rbf),
            _ => Err(Error::InvalidArgument(format!("unknown item kernel {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub active: KernelSet,
    pub item_variant: ItemKernel,
    pub jitter: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            active: KernelSet::ALL,
            item_variant: ItemKernel::Rbf,
            jitter: 1e-5,
        }
    }
}

/// Which attention rows receive stochastic logits during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StochasticRows {
    #[default]
    All,
    LastOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_items: usize,
    pub n_users: usize,
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub max_len: usize,
    pub dropout: f64,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub stochastic_rows: StochasticRows,
    /// Deterministic scaled-dot attention: logits are the location only.
    #[serde(default)]
    pub baseline: bool,
}

impl ModelConfig {
    pub fn new(n_items: usize, n_users: usize) -> Self {
        Self {
            n_items,
            n_users,
            dim: 64,
            heads: 1,
            blocks: 2,
            max_len: 50,
            dropout: 0.5,
            kernel: KernelConfig::default(),
            stochastic_rows: StochasticRows::All,
            baseline: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_items == 0 || self.n_users == 0 {
            return bad("catalog and user count must be positive".into());
        }
        if self.dim == 0 || self.heads == 0 || self.blocks == 0 || self.max_len == 0 {
            return bad("dim, heads, blocks and max_len must be positive".into());
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(crate::ModelError::HeadsDoNotDivide {
                dim: self.dim,
                heads: self.heads,
            }
            .into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.kernel.jitter > 0.0 && self.kernel.jitter < 0.5) {
            return bad(format!("kernel jitter must be in (0, 0.5), got {}", self.kernel.jitter));
        }
        if self.kernel.active.is_empty() {
            return bad("at least one kernel must be active".into());
        }
        Ok(())
    }
}
