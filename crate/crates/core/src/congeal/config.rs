use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};

/// How the loss sums are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalisation {
    /// Divide by batch size (and pixel count for the image terms).
    Mean,
    /// Plain sums.
    Sum,
}

/// Loss terms that are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terms {
    /// `D + lambda * C`.
    Both,
    /// `lambda * C` only; the distortion term is dropped.
    ComplexityOnly,
}

/// Every hyperparameter of a congealing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongealConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub k: u32,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub reference_index: usize,
    pub normalisation: Normalisation,
    pub terms: Terms,
    /// Epochs without probe APSNR improvement before stopping; 0 disables.
    pub patience: usize,
    /// Checkpoint every this many epochs when a path is given; 0 means only
    /// at the end.
    pub checkpoint_every: usize,
    /// Network preset name.
    pub network: String,
    pub code_size: usize,
}

impl Default for CongealConfig {
    fn default() -> Self {
        CongealConfig {
            lambda: 1.0,
            gamma: 1.0,
            k: 1,
            lr: 1e-5,
            batch: 64,
            epochs: 100,
            seed: 0,
            reference_index: 0,
            normalisation: Normalisation::Mean,
            terms: Terms::Both,
            patience: 0,
            checkpoint_every: 0,
            network: "mnist".into(),
            code_size: 64,
        }
    }
}

impl CongealConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if self.code_size == 0 {
            return bad("code size must be >= 1".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Whether the autoencoder takes part in the loss.
    pub fn uses_complexity(&self) -> bool {
        self.terms == Terms::ComplexityOnly || self.lambda > 0.0
    }

    pub fn uses_distortion(&self) -> bool {
        self.terms == Terms::Both
    }

    /// `key = value` pairs, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let norm = match self.normalisation {
            Normalisation::Mean => "mean",
            Normalisation::Sum => "sum",
        };
        let terms = match self.terms {
            Terms::Both => "both",
            Terms::ComplexityOnly => "complexity-only",
        };
        vec![
            ("lambda", self.lambda.to_string()),
            ("gamma", self.gamma.to_string()),
            ("k", self.k.to_string()),
            ("lr", self.lr.to_string()),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("reference-index", self.reference_index.to_string()),
            ("normalisation", norm.into()),
            ("terms", terms.into()),
            ("patience", self.patience.to_string()),
            ("checkpoint-every", self.checkpoint_every.to_string()),
            ("network", self.network.clone()),
            ("code-size", self.code_size.to_string()),
        ]
    }

    /// Sets one field from its textual form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value {v:?} for {key}")))
        }
        let key_norm = key.replace('_', "-");
        match key_norm.as_str() {
            "lambda" => self.lambda = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "reference-index" => self.reference_index = num(key, value)?,
            "normalisation" => {
                self.normalisation = match value {
                    "mean" => Normalisation::Mean,
                    "sum" => Normalisation::Sum,
                    _ => return Err(Error::InvalidConfig(format!("bad normalisation {value:?}"))),
                }
            }
            "terms" => {
                self.terms = match value {
                    "both" => Terms::Both,
                    "complexity-only" => Terms::ComplexityOnly,
                    _ => return Err(Error::InvalidConfig(format!("bad terms {value:?}"))),
                }
            }
            "patience" => self.patience = num(key, value)?,
            "checkpoint-every" => self.checkpoint_every = num(key, value)?,
            "network" => self.network = value.to_string(),
            "code-size" => self.code_size = num(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = CongealConfig::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_round_trip() {
        let cfg = CongealConfig {
            lambda: 0.0,
            lr: 3e-4,
            terms: Terms::ComplexityOnly,
            network: "desk".into(),
            ..CongealConfig::default()
        };
        let pairs = cfg.to_pairs();
        let back = CongealConfig::from_pairs(pairs.iter().map(|(k, v)| (*k, v.as_str()))).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        let mut cfg = CongealConfig::default();
        assert!(cfg.set("learning_rate", "1").is_err());
        assert!(cfg.set("lambda", "-1").is_ok());
        assert!(cfg.validate().is_err());
        assert!(cfg.set("batch", "many").is_err());
    }

    #[test]
    fn defaults_match_the_method() {
        let cfg = CongealConfig::default();
        assert_eq!((cfg.lambda, cfg.gamma, cfg.k, cfg.lr), (1.0, 1.0, 1, 1e-5));
    }
}
