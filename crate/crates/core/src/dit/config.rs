use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the condition sequence reaches the transformer blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    /// Pooled condition added to the timestep embedding driving adaLN.
    Modulation,
    /// Condition tokens join the self-attention sequence, then are discarded.
    Joint,
    /// Extra cross-attention from image tokens to condition tokens.
    Cross,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Modulation, Mechanism::Joint, Mechanism::Cross];

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Modulation => "modulation",
            Mechanism::Joint => "joint",
            Mechanism::Cross => "cross",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "modulation" | "mod" => Ok(Mechanism::Modulation),
            "joint" => Ok(Mechanism::Joint),
            "cross" => Ok(Mechanism::Cross),
            other => Err(Error::Config(format!("unknown mechanism {other:?} (modulation|joint|cross)"))),
        }
    }
}

/// Parse `"1-14"`, `"1,3,5-6"`, `"none"` or `"all"` into 1-based block indices.
pub fn parse_layers(spec: &str, depth: usize) -> Result<BTreeSet<usize>> {
    let spec = spec.trim();
    match spec {
        "" | "none" => return Ok(BTreeSet::new()),
        "all" => return Ok((1..=depth).collect()),
        _ => {}
    }
    let bad = || Error::Config(format!("bad layer spec {spec:?}"));
    let mut out = BTreeSet::new();
    for part in spec.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.insert(part.parse().map_err(|_| bad())?);
        }
    }
    Ok(out)
}

pub fn format_layers(layers: &BTreeSet<usize>) -> String {
    if layers.is_empty() {
        return "none".into();
    }
    let v: Vec<usize> = layers.iter().copied().collect();
    let mut parts = Vec::new();
    let mut start = v[0];
    let mut prev = v[0];
    for &x in &v[1..] {
        if x != prev + 1 {
            parts.push(range_str(start, prev));
            start = x;
        }
        prev = x;
    }
    parts.push(range_str(start, prev));
    parts.join(",")
}

fn range_str(a: usize, b: usize) -> String {
    if a == b {
        a.to_string()
    } else {
        format!("{a}-{b}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DitConfig {
    pub image_size: usize,
    /// Channels of the (latent) input.
    pub in_channels: usize,
    pub patch_size: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Width of the condition rows.
    pub cond_dim: usize,
    pub mechanism: Mechanism,
    /// 1-based indices of blocks that see the gel prompt rows.
    pub gel_prompt_layers: BTreeSet<usize>,
    /// Size of the sinusoidal timestep features fed to the timestep MLP.
    pub freq_dim: usize,
    /// Hidden width of the modulation fusion MLP (two layers).
    pub modulation_hidden: usize,
    pub num_timesteps: usize,
}

impl Default for DitConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            in_channels: 3,
            patch_size: 2,
            width: 128,
            depth: 6,
            heads: 4,
            mlp_ratio: 4,
            cond_dim: 64,
            mechanism: Mechanism::Cross,
            gel_prompt_layers: (1..=6).collect(),
            freq_dim: 64,
            modulation_hidden: 128,
            num_timesteps: 1000,
        }
    }
}

impl DitConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return err(format!("width {} not divisible by heads {}", self.width, self.heads));
        }
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Shape(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.depth == 0 || self.in_channels == 0 || self.cond_dim == 0 || self.mlp_ratio == 0 {
            return err("depth, channels, cond_dim and mlp_ratio must be positive".into());
        }
        if self.freq_dim == 0 || self.freq_dim % 2 != 0 {
            return err(format!("freq_dim {} must be even and positive", self.freq_dim));
        }
        if let Some(&bad) = self.gel_prompt_layers.iter().find(|&&l| l == 0 || l > self.depth) {
            return err(format!("gel prompt layer {bad} outside 1..={}", self.depth));
        }
        if self.num_timesteps == 0 {
            return err("num_timesteps must be at least 1".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Output channels: ε plus the learned-variance channels.
    pub fn out_channels(&self) -> usize {
        2 * self.in_channels
    }

    /// `block` is 0-based.
    pub fn block_receives_gel(&self, block: usize) -> bool {
        self.gel_prompt_layers.contains(&(block + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mechanism_parsing() {
        assert_eq!("cross".parse::<Mechanism>().unwrap(), Mechanism::Cross);
        assert_eq!("Joint".parse::<Mechanism>().unwrap(), Mechanism::Joint);
        assert!(matches!("film".parse::<Mechanism>(), Err(Error::Config(_))));
    }

    #[test]
    fn layer_specs() {
        assert_eq!(parse_layers("1-14", 28).unwrap().len(), 14);
        assert_eq!(parse_layers("none", 6).unwrap().len(), 0);
        assert_eq!(parse_layers("all", 6).unwrap(), (1..=6).collect());
        let s = parse_layers("1,3-4", 6).unwrap();
        assert_eq!(format_layers(&s), "1,3-4");
        assert!(parse_layers("4-2", 6).is_err());
    }

    #[test]
    fn validation() {
        let mut c = DitConfig::default();
        c.validate().unwrap();
        assert_eq!(c.num_patches(), 256);
        assert_eq!(c.out_channels(), 6);
        c.gel_prompt_layers.insert(7);
        assert!(c.validate().is_err());
        let c = DitConfig {
            width: 30,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = DitConfig {
            patch_size: 5,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Shape(_))));
    }
}
