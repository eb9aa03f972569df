use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gp_head::{PrecisionMode, DEFAULT_MOMENTUM, DEFAULT_RFF_DIM};
use crate::losses::{LossConfig, DEFAULT_GAMMA};
use crate::spectral_norm::DEFAULT_SN_CAP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Deterministic,
    McDropout,
    Ensemble,
    Sngp,
    Gpf,
    FocalOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Deterministic,
        Variant::McDropout,
        Variant::Ensemble,
        Variant::Sngp,
        Variant::Gpf,
        Variant::FocalOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Deterministic => "deterministic",
            Variant::McDropout => "mc_dropout",
            Variant::Ensemble => "ensemble",
            Variant::Sngp => "sngp",
            Variant::Gpf => "gpf",
            Variant::FocalOnly => "focal_only",
        }
    }

    /// Display name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Deterministic => "Deterministic",
            Variant::McDropout => "MC Dropout",
            Variant::Ensemble => "Ensemble",
            Variant::Sngp => "SNGP",
            Variant::Gpf => "GPF",
            Variant::FocalOnly => "Focal",
        }
    }

    pub fn uses_gp_head(self) -> bool {
        matches!(self, Variant::Sngp | Variant::Gpf)
    }

    pub fn uses_spectral_norm(self) -> bool {
        self.uses_gp_head()
    }

    pub fn uses_focal_loss(self) -> bool {
        matches!(self, Variant::Gpf | Variant::FocalOnly)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => invalid(format!("unknown optimizer {s:?}")),
        }
    }
}

/// Members of the `ensemble` variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Alternating deterministic and MC Dropout members.
    Mixed,
    /// Independently seeded deterministic members.
    Homogeneous,
}

impl std::str::FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(EnsembleMode::Mixed),
            "homogeneous" => Ok(EnsembleMode::Homogeneous),
            _ => invalid(format!("unknown ensemble mode {s:?}")),
        }
    }
}

fn parse_precision_mode(s: &str) -> Result<PrecisionMode> {
    match s {
        "exact" => Ok(PrecisionMode::Exact),
        "momentum" => Ok(PrecisionMode::Momentum),
        _ => invalid(format!("unknown precision mode {s:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub gamma: f64,
    pub rff_dim: usize,
    pub alpha: f64,
    pub precision_mode: PrecisionMode,
    pub sn_c: f64,
    pub dropout_rate: f64,
    pub hidden_dim: usize,
    pub depth: usize,
    pub mc_passes: usize,
    pub ensemble_size: usize,
    pub ensemble_mode: EnsembleMode,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Gpf,
            epochs: 1,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            gamma: DEFAULT_GAMMA,
            rff_dim: DEFAULT_RFF_DIM,
            alpha: DEFAULT_MOMENTUM,
            precision_mode: PrecisionMode::Exact,
            sn_c: DEFAULT_SN_CAP,
            dropout_rate: 0.1,
            hidden_dim: 64,
            depth: 3,
            mc_passes: 10,
            ensemble_size: 2,
            ensemble_mode: EnsembleMode::Mixed,
            seeds: vec![0],
        }
    }
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn loss(&self) -> Result<LossConfig> {
        if self.variant.uses_focal_loss() {
            LossConfig::focal(self.gamma)
        } else {
            Ok(LossConfig::cross_entropy())
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return invalid("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be >= 1");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return invalid("learning_rate must be finite and >= 0");
        }
        if self.mc_passes == 0 {
            return invalid("mc_passes must be >= 1");
        }
        if self.variant == Variant::Ensemble && self.ensemble_size < 2 {
            return invalid("ensemble_size must be >= 2 for the ensemble variant");
        }
        if self.variant == Variant::McDropout && self.dropout_rate == 0.0 {
            return invalid("mc_dropout needs dropout_rate > 0");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return invalid("dropout_rate must lie in [0, 1)");
        }
        if self.hidden_dim == 0 || self.rff_dim == 0 {
            return invalid("hidden_dim and rff_dim must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return invalid("alpha must lie in (0, 1]");
        }
        if !(self.sn_c > 0.0) {
            return invalid("sn_c must be > 0");
        }
        if !(self.gamma >= 0.0) {
            return invalid("gamma must be >= 0");
        }
        if self.seeds.is_empty() {
            return invalid("at least one seed is required");
        }
        Ok(())
    }

    /// Sets one field from its textual form; keys are the field names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.trim()
                .parse::<T>()
                .map_err(|e| Error::InvalidInput(format!("bad value {v:?} for {key}: {e}")))
        }
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "variant" => self.variant = v.parse()?,
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "adam_beta1" => self.adam_beta1 = num(key, v)?,
            "adam_beta2" => self.adam_beta2 = num(key, v)?,
            "adam_eps" => self.adam_eps = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "rff_dim" | "l" => self.rff_dim = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "precision_mode" => self.precision_mode = parse_precision_mode(v)?,
            "sn_c" => self.sn_c = num(key, v)?,
            "dropout_rate" => self.dropout_rate = num(key, v)?,
            "hidden_dim" => self.hidden_dim = num(key, v)?,
            "depth" => self.depth = num(key, v)?,
            "mc_passes" => self.mc_passes = num(key, v)?,
            "ensemble_size" => self.ensemble_size = num(key, v)?,
            "ensemble_mode" => self.ensemble_mode = v.parse()?,
            "seeds" => {
                self.seeds = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| num::<u64>(key, s))
                    .collect::<Result<_>>()?
            }
            other => return invalid(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text; `#` starts a comment. Returns the
    /// keys that were not training fields, for the caller to interpret.
    pub fn apply_text(&mut self, text: &str) -> Result<Vec<(String, String)>> {
        let mut rest = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            match self.set(k, v) {
                Ok(()) => {}
                Err(Error::InvalidInput(msg)) if msg.starts_with("unknown config key") => {
                    rest.push((k.trim().to_string(), v.trim().to_string()))
                }
                Err(e) => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(rest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_round_trip_names() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("bert".parse::<Variant>().is_err());
    }

    #[test]
    fn variant_flags() {
        assert!(Variant::Gpf.uses_gp_head() && Variant::Gpf.uses_focal_loss());
        assert!(Variant::Sngp.uses_gp_head() && !Variant::Sngp.uses_focal_loss());
        assert!(!Variant::FocalOnly.uses_gp_head() && Variant::FocalOnly.uses_focal_loss());
        assert!(!Variant::Deterministic.uses_spectral_norm());
    }

    #[test]
    fn text_config_applies_and_reports_extras() {
        let mut c = TrainConfig::default();
        let rest = c
            .apply_text("# comment\nvariant = sngp\nbatch_size=32\nseeds = 1,2,3\ngroups = 500\n")
            .unwrap();
        assert_eq!(c.variant, Variant::Sngp);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.seeds, vec![1, 2, 3]);
        assert_eq!(rest, vec![("groups".to_string(), "500".to_string())]);
        assert!(c.apply_text("epochs = many\n").is_err());
        assert!(c.apply_text("no equals sign\n").is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::for_variant(Variant::Ensemble);
        c.ensemble_size = 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.mc_passes = 0;
        assert!(c.validate().is_err());
    }
}
