//! Training configuration and its `key = value` text form.
//!
//! The same text form is used for config files, the block embedded in
//! checkpoints, and run manifests.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::MetricScale;

/// Unit of the cluster-indicator refresh cadence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CadenceUnit {
    Iterations,
    Epochs,
}

/// How the generator's objective treats the adversarial term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversarySign {
    /// The generator minimizes `−λ_a · L_A` (maximizes the discriminator's error).
    Oppose,
    /// The generator minimizes `+λ_a · L_A`.
    Cooperate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub window: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub clusters: usize,
    /// `None` selects the size-dependent default.
    pub top_n: Option<usize>,
    pub lambda_a: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub indicator_update_every: usize,
    pub indicator_update_unit: CadenceUnit,
    pub use_adversary: bool,
    pub use_clustering_loss: bool,
    pub use_orthogonality_loss: bool,
    pub adversary_sign: AdversarySign,
    pub clip_norm: Option<f64>,
    pub shuffle: bool,
    pub metric_scale: MetricScale,
    pub split_ratios: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window: 12,
            horizon: 12,
            hidden: 64,
            embed_dim: 10,
            clusters: 6,
            top_n: None,
            lambda_a: 0.1,
            lr_generator: 3e-3,
            lr_discriminator: 5e-2,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            indicator_update_every: 3,
            indicator_update_unit: CadenceUnit::Iterations,
            use_adversary: true,
            use_clustering_loss: true,
            use_orthogonality_loss: true,
            adversary_sign: AdversarySign::Oppose,
            clip_norm: Some(5.0),
            shuffle: true,
            metric_scale: MetricScale::Original,
            split_ratios: [0.7, 0.2, 0.1],
        }
    }
}

impl fmt::Display for CadenceUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CadenceUnit::Iterations => "iterations",
            CadenceUnit::Epochs => "epochs",
        })
    }
}

impl FromStr for CadenceUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iterations" => Ok(CadenceUnit::Iterations),
            "epochs" => Ok(CadenceUnit::Epochs),
            _ => Err(Error::Config(format!("unknown cadence unit {s:?}"))),
        }
    }
}

impl fmt::Display for AdversarySign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdversarySign::Oppose => "oppose",
            AdversarySign::Cooperate => "cooperate",
        })
    }
}

impl FromStr for AdversarySign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oppose" => Ok(AdversarySign::Oppose),
            "cooperate" => Ok(AdversarySign::Cooperate),
            _ => Err(Error::Config(format!("unknown adversary sign {s:?}"))),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl TrainConfig {
    /// Overrides fields named in `pairs`; unknown keys are errors.
    pub fn apply_kv(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "window" => self.window = parse(k, v)?,
                "horizon" => self.horizon = parse(k, v)?,
                "hidden" => self.hidden = parse(k, v)?,
                "embed_dim" => self.embed_dim = parse(k, v)?,
                "clusters" => self.clusters = parse(k, v)?,
                "top_n" => self.top_n = if v == "auto" { None } else { Some(parse(k, v)?) },
                "lambda_a" => self.lambda_a = parse(k, v)?,
                "lr_generator" => self.lr_generator = parse(k, v)?,
                "lr_discriminator" => self.lr_discriminator = parse(k, v)?,
                "batch_size" => self.batch_size = parse(k, v)?,
                "epochs" => self.epochs = parse(k, v)?,
                "seed" => self.seed = parse(k, v)?,
                "indicator_update_every" => self.indicator_update_every = parse(k, v)?,
                "indicator_update_unit" => self.indicator_update_unit = v.parse()?,
                "use_adversary" => self.use_adversary = parse_bool(k, v)?,
                "use_clustering_loss" => self.use_clustering_loss = parse_bool(k, v)?,
                "use_orthogonality_loss" => self.use_orthogonality_loss = parse_bool(k, v)?,
                "adversary_sign" => self.adversary_sign = v.parse()?,
                "clip_norm" => self.clip_norm = if v == "none" { None } else { Some(parse(k, v)?) },
                "shuffle" => self.shuffle = parse_bool(k, v)?,
                "metric_scale" => self.metric_scale = v.parse()?,
                "split_ratios" => {
                    let parts: Vec<f64> = v.split(',').map(|p| parse(k, p.trim())).collect::<Result<_>>()?;
                    self.split_ratios = parts
                        .try_into()
                        .map_err(|_| Error::Config("split_ratios needs three values".into()))?;
                }
                _ => return Err(Error::Config(format!("unknown key {k:?}"))),
            }
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(&parse_kv(text)?)?;
        Ok(cfg)
    }

    /// Canonical text form; `from_kv_text(to_kv_text())` is the identity.
    pub fn to_kv_text(&self) -> String {
        let top_n = self.top_n.map_or("auto".to_string(), |n| n.to_string());
        let clip = self.clip_norm.map_or("none".to_string(), |c| format!("{c:?}"));
        let r = self.split_ratios;
        [
            format!("window = {}", self.window),
            format!("horizon = {}", self.horizon),
            format!("hidden = {}", self.hidden),
            format!("embed_dim = {}", self.embed_dim),
            format!("clusters = {}", self.clusters),
            format!("top_n = {top_n}"),
            format!("lambda_a = {:?}", self.lambda_a),
            format!("lr_generator = {:?}", self.lr_generator),
            format!("lr_discriminator = {:?}", self.lr_discriminator),
            format!("batch_size = {}", self.batch_size),
            format!("epochs = {}", self.epochs),
            format!("seed = {}", self.seed),
            format!("indicator_update_every = {}", self.indicator_update_every),
            format!("indicator_update_unit = {}", self.indicator_update_unit),
            format!("use_adversary = {}", self.use_adversary),
            format!("use_clustering_loss = {}", self.use_clustering_loss),
            format!("use_orthogonality_loss = {}", self.use_orthogonality_loss),
            format!("adversary_sign = {}", self.adversary_sign),
            format!("clip_norm = {clip}"),
            format!("shuffle = {}", self.shuffle),
            format!("metric_scale = {}", self.metric_scale),
            format!("split_ratios = {:?},{:?},{:?}", r[0], r[1], r[2]),
        ]
        .join("\n")
            + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("horizon", self.horizon),
            ("hidden", self.hidden),
            ("embed_dim", self.embed_dim),
            ("clusters", self.clusters),
            ("batch_size", self.batch_size),
            ("indicator_update_every", self.indicator_update_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr_generator > 0.0 && self.lr_discriminator > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.lambda_a.is_nan() || self.lambda_a < 0.0 {
            return Err(Error::Config("lambda_a must be non-negative".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        if self.top_n == Some(0) {
            return Err(Error::Config("top_n must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.window, c.horizon, c.hidden, c.embed_dim, c.clusters),
            (12, 12, 64, 10, 6)
        );
        assert_eq!((c.lambda_a, c.lr_generator, c.lr_discriminator), (0.1, 3e-3, 5e-2));
        assert_eq!((c.batch_size, c.epochs, c.indicator_update_every), (64, 50, 3));
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig {
            top_n: Some(7),
            clip_norm: None,
            lambda_a: 0.30000000000000004,
            use_adversary: false,
            metric_scale: MetricScale::Normalized,
            ..Default::default()
        };
        c.split_ratios = [0.6, 0.3, 0.1];
        let text = c.to_kv_text();
        assert_eq!(TrainConfig::from_kv_text(&text).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(TrainConfig::from_kv_text("bogus = 1").is_err());
        assert!(TrainConfig::from_kv_text("window = x").is_err());
        assert!(TrainConfig::from_kv_text("window").is_err());
        let c = TrainConfig::from_kv_text("# comment\nwindow = 3 # trailing\n").unwrap();
        assert_eq!(c.window, 3);
        assert!(TrainConfig {
            clusters: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
