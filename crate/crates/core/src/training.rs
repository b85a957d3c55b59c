//! Alternating generator/discriminator training, indicator refresh cadence,
//! model selection on validation MAE, and evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adversary::orthogonality_loss;
use crate::autograd::{Tape, Var};
use crate::config::{AdversarySign, CadenceUnit, TrainConfig};
use crate::data::{MinMaxNormalizer, NormalizationState, WindowBatch, Windows};
use crate::error::{Error, Result};
use crate::grouping::{clustering_loss, update_indicator, ClusterIndicator};
use crate::metrics::{aggregate, MetricScale, MetricsReport};
use crate::model::{ForecastModel, ModelDims};
use crate::nn::{clip_global_norm, Adam, NormMode, ParamGroup, ParamStore};
use crate::predictor::forecasting_loss;
use crate::tensor::Tensor;

/// Per-iteration loss components. `l_adv` is the value seen by the
/// generator step (0 when no discriminator exists).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBundle {
    pub l_forecast: f64,
    pub l_cluster: f64,
    pub l_ortho: f64,
    pub l_adv: f64,
    pub total_generator: f64,
}

impl LossBundle {
    /// Recomputes the generator objective from the components.
    pub fn compose(&self, cfg: &TrainConfig) -> f64 {
        let mut total = self.l_forecast;
        if cfg.use_clustering_loss {
            total += self.l_cluster;
        }
        if cfg.use_orthogonality_loss {
            total += self.l_ortho;
        }
        if cfg.use_adversary {
            total += adversary_coefficient(cfg) * self.l_adv;
        }
        total
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("l_forecast", self.l_forecast),
            ("l_cluster", self.l_cluster),
            ("l_ortho", self.l_ortho),
            ("l_adv", self.l_adv),
            ("total_generator", self.total_generator),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

fn adversary_coefficient(cfg: &TrainConfig) -> f64 {
    match cfg.adversary_sign {
        AdversarySign::Oppose => -cfg.lambda_a,
        AdversarySign::Cooperate => cfg.lambda_a,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// 1-based global iteration number.
    pub iteration: u64,
    pub epoch: u64,
    pub losses: LossBundle,
    /// Discriminator loss before its update, when one ran.
    pub l_adv_discriminator: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestSnapshot {
    pub epoch: u64,
    pub val_mae: f64,
    pub params: ParamStore,
}

/// Everything needed to continue training: model, both optimizers, the
/// cluster indicator, counters and histories.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ForecastModel,
    pub opt_generator: Adam,
    pub opt_discriminator: Option<Adam>,
    pub indicator: ClusterIndicator,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed iterations.
    pub iteration: u64,
    /// Batches already consumed in the current epoch.
    pub batch_in_epoch: u64,
    pub history: Vec<IterationRecord>,
    pub epoch_history: Vec<EpochRecord>,
    pub best: Option<BestSnapshot>,
    pub normalization: Option<NormalizationState>,
}

const INDICATOR_SEED_SALT: u64 = 0x5eed_f00d_cafe_0001;

impl Trainer {
    pub fn new(config: TrainConfig, n_vars: usize, normalization: Option<NormalizationState>) -> Result<Self> {
        config.validate()?;
        let dims = ModelDims::from_config(&config, n_vars)?;
        if dims.clusters > n_vars {
            return Err(Error::Config(format!(
                "training needs at most one cluster per variable: {} clusters for {n_vars} variables",
                dims.clusters
            )));
        }
        let model = ForecastModel::new(dims, config.seed, config.use_adversary)?;
        let indicator = ClusterIndicator::orthogonal_init(n_vars, dims.clusters, config.seed ^ INDICATOR_SEED_SALT)?;
        Ok(Self::from_parts(config, model, indicator, normalization))
    }

    /// Wraps an existing model with fresh optimizers and counters.
    pub fn from_parts(
        config: TrainConfig,
        model: ForecastModel,
        indicator: ClusterIndicator,
        normalization: Option<NormalizationState>,
    ) -> Self {
        let opt_generator = Adam::new(
            &model.store,
            model.store.ids(ParamGroup::Generator),
            config.lr_generator,
        );
        let opt_discriminator = model.discriminator.as_ref().map(|_| {
            Adam::new(
                &model.store,
                model.store.ids(ParamGroup::Discriminator),
                config.lr_discriminator,
            )
        });
        Trainer {
            config,
            model,
            opt_generator,
            opt_discriminator,
            indicator,
            epoch: 0,
            iteration: 0,
            batch_in_epoch: 0,
            history: Vec::new(),
            epoch_history: Vec::new(),
            best: None,
            normalization,
        }
    }

    fn check_batch(&self, batch: &WindowBatch) -> Result<()> {
        let d = &self.model.dims;
        let (si, st) = (batch.inputs.shape(), batch.targets.shape());
        if batch.is_empty() || si.len() != 3 || st.len() != 3 {
            return Err(Error::EmptyData("empty training batch".into()));
        }
        if si[2] != d.n_vars || st[2] != d.n_vars || st[1] != d.horizon || si[0] != st[0] {
            return Err(Error::Shape(format!(
                "batch inputs {si:?} / targets {st:?} do not fit N={} h={}",
                d.n_vars, d.horizon
            )));
        }
        Ok(())
    }

    /// Loss components of the generator objective on `batch`, with gradient
    /// tracking restricted to the generator parameters.
    fn generator_objective<'t>(
        &self,
        tape: &'t Tape,
        batch: &WindowBatch,
        mode: NormMode,
    ) -> Result<(GeneratorPass<'t>, crate::nn::Bound<'t>)> {
        let p = self.model.store.bind(tape, |g| g == ParamGroup::Generator);
        let fw = self.model.forward(&p, &batch.inputs, mode)?;
        let y = tape.constant(batch.targets.clone());
        let lf = forecasting_loss(y, fw.prediction)?;
        let lc = clustering_loss(fw.projected, &self.indicator)?;
        let lo = orthogonality_loss(fw.hidden, fw.filtered)?;
        let la = match &self.model.discriminator {
            Some(d) => Some(d.adversarial_loss(&p, fw.filtered, fw.assignment)?),
            None => None,
        };
        let cfg = &self.config;
        let mut total = lf;
        if cfg.use_clustering_loss {
            total = total.add(lc);
        }
        if cfg.use_orthogonality_loss {
            total = total.add(lo);
        }
        if cfg.use_adversary {
            if let Some(la) = la {
                total = total.add(la.scale(adversary_coefficient(cfg)));
            }
        }
        let losses = LossBundle {
            l_forecast: lf.value().item(),
            l_cluster: lc.value().item(),
            l_ortho: lo.value().item(),
            l_adv: la.map_or(0.0, |v| v.value().item()),
            total_generator: total.value().item(),
        };
        Ok((
            GeneratorPass {
                total,
                losses,
                projected: fw.projected,
                norm_updates: fw.norm_updates,
            },
            p,
        ))
    }

    /// Generator objective on `batch` without updating anything (training-mode
    /// normalization statistics).
    pub fn evaluate_generator_losses(&self, batch: &WindowBatch) -> Result<LossBundle> {
        self.check_batch(batch)?;
        let tape = Tape::new();
        Ok(self.generator_objective(&tape, batch, NormMode::TrainFrozen)?.0.losses)
    }

    /// Gradients of the total generator objective with respect to every
    /// generator parameter, aligned with `model.store.ids(Generator)`.
    pub fn generator_gradients(&self, batch: &WindowBatch) -> Result<(LossBundle, Vec<Tensor>)> {
        self.check_batch(batch)?;
        let tape = Tape::new();
        let (pass, p) = self.generator_objective(&tape, batch, NormMode::TrainFrozen)?;
        let grads = tape.backward(pass.total);
        Ok((pass.losses, p.grads(&grads, &self.opt_generator.params)))
    }

    fn generator_step_inner(&mut self, batch: &WindowBatch) -> Result<(LossBundle, Tensor)> {
        self.check_batch(batch)?;
        let tape = Tape::new();
        let (pass, p) = self.generator_objective(&tape, batch, NormMode::Train)?;
        if let Some(component) = pass.losses.first_non_finite() {
            return Err(Error::NonFinite {
                component,
                iteration: self.iteration + 1,
            });
        }
        let grads = tape.backward(pass.total);
        let mut g = p.grads(&grads, &self.opt_generator.params);
        if let Some(max) = self.config.clip_norm {
            let norm = clip_global_norm(&mut g, max);
            if !norm.is_finite() {
                return Err(Error::NonFinite {
                    component: "generator gradient",
                    iteration: self.iteration + 1,
                });
            }
        }
        let reference = pass.projected.value().mean_batch();
        drop(p);
        self.opt_generator.step(&mut self.model.store, &g);
        self.model
            .filters
            .apply_norm_updates(&mut self.model.store, &pass.norm_updates);
        Ok((pass.losses, reference))
    }

    /// One optimizer update of the generator parameters on `batch`.
    pub fn generator_step(&mut self, batch: &WindowBatch) -> Result<LossBundle> {
        Ok(self.generator_step_inner(batch)?.0)
    }

    /// One optimizer update of the discriminator parameters on `batch`,
    /// with Ĥ and C recomputed from the current generator as constants.
    /// Returns the loss before the update.
    pub fn discriminator_step(&mut self, batch: &WindowBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let (Some(disc), Some(opt)) = (&self.model.discriminator, &mut self.opt_discriminator) else {
            return Err(Error::Config(
                "discriminator step requested without a discriminator".into(),
            ));
        };
        let tape = Tape::new();
        let p = self.model.store.bind(&tape, |g| g == ParamGroup::Discriminator);
        let fw = self.model.forward(&p, &batch.inputs, NormMode::TrainFrozen)?;
        let la = disc.adversarial_loss(&p, fw.filtered, fw.assignment)?;
        let value = la.value().item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                component: "l_adv (discriminator)",
                iteration: self.iteration.max(1),
            });
        }
        let grads = tape.backward(la);
        let mut g = p.grads(&grads, &opt.params);
        if let Some(max) = self.config.clip_norm {
            clip_global_norm(&mut g, max);
        }
        drop(p);
        opt.step(&mut self.model.store, &g);
        Ok(value)
    }

    /// Replaces F by the top-K left singular vectors of `reference` (`N × o`).
    pub fn refresh_indicator(&mut self, reference: &Tensor) -> Result<()> {
        self.indicator = update_indicator(reference, self.indicator.k())?;
        Ok(())
    }

    /// One full iteration: generator step, indicator refresh when due, then
    /// the discriminator step. Counters advance only on success.
    pub fn train_iteration(&mut self, batch: &WindowBatch, last_in_epoch: bool) -> Result<IterationRecord> {
        let (losses, reference) = self.generator_step_inner(batch)?;
        let iteration = self.iteration + 1;
        let every = self.config.indicator_update_every as u64;
        let due = match self.config.indicator_update_unit {
            CadenceUnit::Iterations => iteration.is_multiple_of(every),
            CadenceUnit::Epochs => last_in_epoch && (self.epoch + 1).is_multiple_of(every),
        };
        if due {
            self.refresh_indicator(&reference)?;
        }
        let l_adv_discriminator = if self.config.use_adversary && self.model.discriminator.is_some() {
            Some(self.discriminator_step(batch)?)
        } else {
            None
        };
        self.iteration = iteration;
        self.batch_in_epoch += 1;
        let record = IterationRecord {
            iteration,
            epoch: self.epoch,
            losses,
            l_adv_discriminator,
        };
        self.history.push(record);
        Ok(record)
    }

    /// Window order for `epoch`, a pure function of the seed and epoch.
    pub fn epoch_order(&self, epoch: u64, n_windows: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n_windows).collect();
        if self.config.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(epoch + 1);
            order.shuffle(&mut rng);
        }
        order
    }

    /// Trains until `config.epochs` epochs are complete.
    pub fn fit(&mut self, train: &Windows, val: Option<&Windows>) -> Result<()> {
        self.fit_until(train, val, None)
    }

    /// Like [`Trainer::fit`], but stops once the global iteration count
    /// reaches `stop_at_iteration`. Training can resume from the exact same
    /// point later, including mid-epoch.
    pub fn fit_until(&mut self, train: &Windows, val: Option<&Windows>, stop_at_iteration: Option<u64>) -> Result<()> {
        if train.is_empty() {
            return Err(Error::EmptyData("no training windows".into()));
        }
        if train.n_vars() != self.model.dims.n_vars {
            return Err(Error::Shape(format!(
                "training data has {} variables, model expects {}",
                train.n_vars(),
                self.model.dims.n_vars
            )));
        }
        let bs = self.config.batch_size;
        let n_batches = train.len().div_ceil(bs) as u64;
        while self.epoch < self.config.epochs as u64 {
            let order = self.epoch_order(self.epoch, train.len());
            while self.batch_in_epoch < n_batches {
                if stop_at_iteration.is_some_and(|s| self.iteration >= s) {
                    return Ok(());
                }
                let k = self.batch_in_epoch as usize;
                let end = ((k + 1) * bs).min(order.len());
                let batch = train.batch(&order[k * bs..end]);
                let last = self.batch_in_epoch + 1 == n_batches;
                self.train_iteration(&batch, last)?;
            }
            self.finish_epoch(val)?;
        }
        Ok(())
    }

    fn finish_epoch(&mut self, val: Option<&Windows>) -> Result<()> {
        let val_mae = match val {
            Some(v) if !v.is_empty() => {
                let report = evaluate_model(&self.model, v, None, MetricScale::Normalized, self.config.batch_size)?;
                Some(report.mae)
            }
            _ => None,
        };
        let epoch = self.epoch + 1;
        if let Some(mae) = val_mae {
            let better = self.best.as_ref().is_none_or(|b| mae < b.val_mae);
            if better && mae.is_finite() {
                self.best = Some(BestSnapshot {
                    epoch,
                    val_mae: mae,
                    params: self.model.store.clone(),
                });
            }
        }
        let last_loss = self.history.last().map(|r| r.losses.l_forecast);
        log::info!(
            "epoch {epoch}/{}: l_forecast {:?} val_mae {:?}",
            self.config.epochs,
            last_loss,
            val_mae
        );
        self.epoch_history.push(EpochRecord { epoch, val_mae });
        self.epoch = epoch;
        self.batch_in_epoch = 0;
        Ok(())
    }

    /// The model with the best validation parameters, or the current model
    /// when no validation was run.
    pub fn best_model(&self) -> ForecastModel {
        let mut model = self.model.clone();
        if let Some(best) = &self.best {
            model.store = best.params.clone();
        }
        model
    }

    pub fn normalizer(&self) -> Option<MinMaxNormalizer> {
        self.normalization.clone().map(MinMaxNormalizer::from_state)
    }

    /// Mean generator losses over all windows of `windows`, in order.
    pub fn mean_losses(&self, windows: &Windows) -> Result<LossBundle> {
        let mut acc = LossBundle::default();
        let mut total = 0usize;
        for batch in windows.sequential_batches(self.config.batch_size) {
            let l = self.evaluate_generator_losses(&batch)?;
            let w = batch.len() as f64;
            acc.l_forecast += l.l_forecast * w;
            acc.l_cluster += l.l_cluster * w;
            acc.l_ortho += l.l_ortho * w;
            acc.l_adv += l.l_adv * w;
            acc.total_generator += l.total_generator * w;
            total += batch.len();
        }
        let t = total as f64;
        Ok(LossBundle {
            l_forecast: acc.l_forecast / t,
            l_cluster: acc.l_cluster / t,
            l_ortho: acc.l_ortho / t,
            l_adv: acc.l_adv / t,
            total_generator: acc.total_generator / t,
        })
    }

    /// Loss history as CSV: `iteration,l_forecast,l_cluster,l_ortho,l_adv,total`.
    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "iteration,l_forecast,l_cluster,l_ortho,l_adv,total").map_err(io)?;
        for r in &self.history {
            let l = r.losses;
            writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?}",
                r.iteration, l.l_forecast, l.l_cluster, l.l_ortho, l.l_adv, l.total_generator
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }

    /// Per-epoch validation MAE as CSV: `epoch,val_mae`.
    pub fn write_validation_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "epoch,val_mae").map_err(io)?;
        for r in &self.epoch_history {
            let v = r.val_mae.map_or(String::new(), |v| format!("{v:?}"));
            writeln!(out, "{},{v}", r.epoch).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

struct GeneratorPass<'t> {
    total: Var<'t>,
    losses: LossBundle,
    projected: Var<'t>,
    norm_updates: Vec<crate::nn::NormUpdate>,
}

/// Stacked targets and evaluation-mode predictions over every window, in
/// window order, both `[B, h, N]` on the normalized scale.
pub fn predict_windows(model: &ForecastModel, windows: &Windows, batch_size: usize) -> Result<(Tensor, Tensor)> {
    if windows.is_empty() {
        return Err(Error::EmptyData("no windows to evaluate".into()));
    }
    let mut ys = Vec::new();
    let mut ps = Vec::new();
    for batch in windows.sequential_batches(batch_size) {
        ps.push(model.predict(&batch.inputs)?);
        ys.push(batch.targets);
    }
    Ok((concat_batches(&ys)?, concat_batches(&ps)?))
}

fn concat_batches(parts: &[Tensor]) -> Result<Tensor> {
    let first = &parts[0];
    let (h, n) = (first.shape()[1], first.shape()[2]);
    let b: usize = parts.iter().map(|t| t.shape()[0]).sum();
    let data: Vec<f64> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::from_vec(&[b, h, n], data)
}

/// Forecasts every window and aggregates the metrics on the requested
/// scale. The original scale requires the normalizer fitted on training data.
pub fn evaluate_model(
    model: &ForecastModel,
    windows: &Windows,
    normalizer: Option<&MinMaxNormalizer>,
    scale: MetricScale,
    batch_size: usize,
) -> Result<MetricsReport> {
    let (y, p) = predict_windows(model, windows, batch_size)?;
    match scale {
        MetricScale::Normalized => aggregate(&y, &p, scale),
        MetricScale::Original => {
            let norm = normalizer.ok_or(Error::NotFitted)?;
            aggregate(&norm.invert_tensor(&y)?, &norm.invert_tensor(&p)?, scale)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, SeriesMatrix};

    fn sine_windows(n: usize, steps: usize, w: usize, h: usize) -> Windows {
        let rows: Vec<Vec<f64>> = (0..steps)
            .map(|t| {
                (0..n)
                    .map(|i| 0.5 + 0.4 * ((t as f64) * 0.3 + i as f64).sin())
                    .collect()
            })
            .collect();
        make_windows(&SeriesMatrix::from_rows(&rows).unwrap(), w, h).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            window: 3,
            horizon: 2,
            hidden: 4,
            embed_dim: 3,
            clusters: 2,
            batch_size: 4,
            epochs: 2,
            clip_norm: None,
            ..Default::default()
        }
    }

    #[test]
    fn flags_off_total_is_forecast_loss() {
        let cfg = TrainConfig {
            use_adversary: false,
            use_clustering_loss: false,
            use_orthogonality_loss: false,
            ..tiny_config()
        };
        let win = sine_windows(3, 20, 3, 2);
        let mut t = Trainer::new(cfg, 3, None).unwrap();
        let l = t.generator_step(&win.batch(&[0, 1, 2])).unwrap();
        assert_eq!(l.total_generator, l.l_forecast);
        assert!(t.model.discriminator.is_none());
    }

    #[test]
    fn composition_matches_components() {
        let cfg = tiny_config();
        let win = sine_windows(3, 20, 3, 2);
        let mut t = Trainer::new(cfg.clone(), 3, None).unwrap();
        let l = t.generator_step(&win.batch(&[0, 4, 7])).unwrap();
        assert!((l.total_generator - l.compose(&cfg)).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny_config()
        };
        let win = sine_windows(3, 20, 3, 2);
        let mut t = Trainer::new(cfg, 3, None).unwrap();
        let before = t.model.store.clone();
        t.fit(&win, None).unwrap();
        assert!(t.history.is_empty());
        assert_eq!(t.model.store, before);
    }

    #[test]
    fn fit_counts_iterations_and_resumes() {
        let win = sine_windows(3, 20, 3, 2);
        // 16 windows, batch 4 -> 4 iterations per epoch
        let mut full = Trainer::new(tiny_config(), 3, None).unwrap();
        full.fit(&win, Some(&win)).unwrap();
        assert_eq!(full.iteration, 8);
        assert_eq!(full.epoch_history.len(), 2);

        let mut part = Trainer::new(tiny_config(), 3, None).unwrap();
        part.fit_until(&win, Some(&win), Some(5)).unwrap();
        assert_eq!((part.iteration, part.epoch, part.batch_in_epoch), (5, 1, 1));
        part.fit(&win, Some(&win)).unwrap();
        assert_eq!(part.history, full.history);
        assert_eq!(part.model.store, full.model.store);
    }

    #[test]
    fn original_scale_requires_normalizer() {
        let win = sine_windows(2, 12, 3, 2);
        let cfg = TrainConfig {
            clusters: 1,
            ..tiny_config()
        };
        let t = Trainer::new(cfg, 2, None).unwrap();
        assert!(matches!(
            evaluate_model(&t.model, &win, None, MetricScale::Original, 4),
            Err(Error::NotFitted)
        ));
        assert!(evaluate_model(&t.model, &win, None, MetricScale::Normalized, 4).is_ok());
    }
}
