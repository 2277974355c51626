use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which extensions of the baseline encoder-decoder are switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    /// Morphology table attended at every decoder step.
    M,
    /// Auxiliary per-character label channel.
    O,
    /// Both.
    Mo,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::M, Variant::O, Variant::Mo];

    pub fn uses_table(self) -> bool {
        matches!(self, Variant::M | Variant::Mo)
    }

    pub fn uses_labels(self) -> bool {
        matches!(self, Variant::O | Variant::Mo)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::M => "m",
            Variant::O => "o",
            Variant::Mo => "mo",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "m" => Ok(Variant::M),
            "o" => Ok(Variant::O),
            "mo" => Ok(Variant::Mo),
            other => Err(Error::UnknownVariant(other.to_string())),
        }
    }
}

/// Layer sizes. The defaults are desk scale; large setups use e.g.
/// 512-dimensional embeddings, 1024-unit GRUs and four decoder layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub source_embed: usize,
    pub char_embed: usize,
    pub hidden: usize,
    pub attention: usize,
    pub readout: usize,
    pub table_dim: usize,
    pub decoder_layers: usize,
    pub init_scale: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            source_embed: 32,
            char_embed: 32,
            hidden: 64,
            attention: 64,
            readout: 64,
            table_dim: 32,
            decoder_layers: 1,
            init_scale: 0.08,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub source_vocab: usize,
    pub char_vocab: usize,
    /// Number of label classes, which is also the number of table rows.
    pub labels: usize,
    pub dims: ModelDims,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let sizes = [
            ("source_vocab", self.source_vocab),
            ("char_vocab", self.char_vocab),
            ("labels", self.labels),
            ("source_embed", d.source_embed),
            ("char_embed", d.char_embed),
            ("hidden", d.hidden),
            ("attention", d.attention),
            ("readout", d.readout),
            ("table_dim", d.table_dim),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if !(1..=4).contains(&d.decoder_layers) {
            return Err(Error::invalid("decoder_layers must be between 1 and 4"));
        }
        if !(d.init_scale > 0.0 && d.init_scale.is_finite()) {
            return Err(Error::invalid("init_scale must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_flags() {
        let flags: Vec<(bool, bool)> = Variant::ALL.iter().map(|v| (v.uses_table(), v.uses_labels())).collect();
        assert_eq!(flags, vec![(false, false), (true, false), (false, true), (true, true)]);
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("mx".parse::<Variant>(), Err(Error::UnknownVariant(_))));
    }
}
