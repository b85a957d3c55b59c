//! Fairness-aware multivariate time-series forecasting.
//!
//! A recurrent graph encoder over a learned adjacency produces per-variable
//! states. Variables are softly grouped, a bank of filters extracts a
//! group-irrelevant component that a discriminator is trained to tell apart
//! from the group assignment, and a shared head forecasts every horizon at
//! once from the state plus that component.
//!
//! Everything is f64 and runs on a small reverse-mode tape ([`autograd`]).
//!
//! ```no_run
//! use fairforecast_core::*;
//!
//! # fn main() -> Result<()> {
//! let data = synth_two_group(&SynthConfig::default())?;
//! let cfg = TrainConfig { window: 12, horizon: 3, clusters: 2, epochs: 5, ..TrainConfig::default() };
//! let split = chronological_split(&data.series, cfg.split_ratios)?;
//! let norm = MinMaxNormalizer::fit(&split.train)?;
//! let train = make_windows(&norm.apply(&split.train)?, cfg.window, cfg.horizon)?;
//! let val = make_windows(&norm.apply(&split.val)?, cfg.window, cfg.horizon)?;
//! let test = make_windows(&norm.apply(&split.test)?, cfg.window, cfg.horizon)?;
//!
//! let mut trainer = Trainer::new(cfg, data.series.n_vars(), norm.state().cloned())?;
//! trainer.fit(&train, Some(&val))?;
//! let report = evaluate_model(&trainer.best_model(), &test, Some(&norm), MetricScale::Original, 64)?;
//! println!("{}", report.to_kv_text());
//! # Ok(())
//! # }
//! ```

pub mod adversary;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod export;
pub mod graph;
pub mod grouping;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod predictor;
pub mod tensor;
pub mod training;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{AdversarySign, CadenceUnit, TrainConfig};
pub use data::{
    chronological_split, load_series, make_windows, synth_two_group, MinMaxNormalizer, NormalizationState,
    SeriesMatrix, Split, SynthConfig, SyntheticSeries, VariableGroup, WindowBatch, Windows,
};
pub use error::{Error, Result};
pub use grouping::ClusterIndicator;
pub use metrics::{aggregate, MetricScale, MetricsReport};
pub use model::{ForecastModel, LatentBundle, ModelDims};
pub use nn::ParamGroup;
pub use tensor::Tensor;
pub use training::{evaluate_model, predict_windows, LossBundle, Trainer};
