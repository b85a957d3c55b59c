use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{ensure, Context, Result};
use fairforecast_core::export::{write_embeddings_csv, write_predictions_csv};
use fairforecast_core::nn::NormMode;
use fairforecast_core::{
    evaluate_model, load_checkpoint, predict_windows, save_checkpoint, synth_two_group, MetricScale, MetricsReport,
    ParamGroup, Tensor, TrainConfig, Trainer, VariableGroup, Windows,
};

use crate::args::{AblateArgs, EvalArgs, SplitName, SynthArgs, TrainArgs};
use crate::setup::*;

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write_report(out: &Path, split: &str, report: &MetricsReport, names: Option<&[String]>) -> Result<()> {
    let text = format!("split = {split}\n{}", report.to_kv_text());
    let path = out.join(format!("metrics_{split}.txt"));
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    report.write_per_variable_csv(&out.join(format!("per_variable_mae_{split}.csv")), names)?;
    Ok(())
}

pub fn train(root: Option<&Path>, args: &TrainArgs) -> Result<()> {
    let clock = Instant::now();
    let mut timings = Timings {
        started_unix: unix_now(),
        ..Timings::default()
    };
    let (cfg, source) = match &args.manifest {
        Some(path) => {
            let m = RunManifest::read(path)?;
            (m.config()?, m.data)
        }
        None => (resolve_config(&args.config)?, data_source(&args.source, &args.synth)?),
    };
    let id = run_id(&cfg, &source);
    let out = resolve_out(root, &args.out.clone().unwrap_or_else(|| Path::new("runs").join(&id)));
    let _lock = DirLock::acquire(&out)?;

    let data = load(&source)?;
    let prep = prepare(&data.series, &cfg, None)?;
    let n_vars = data.series.n_vars();
    timings.load_seconds = clock.elapsed().as_secs_f64();

    let mut trainer = Trainer::new(cfg.clone(), n_vars, prep.normalizer.state().cloned())?;
    let t0 = Instant::now();
    trainer.fit(&prep.train, prep.val.as_ref())?;
    timings.train_seconds = t0.elapsed().as_secs_f64();

    save_checkpoint(&trainer, &out.join(CHECKPOINT_FILE))?;
    trainer.write_history_csv(&out.join(HISTORY_FILE))?;
    trainer.write_validation_csv(&out.join(VALIDATION_FILE))?;

    let t1 = Instant::now();
    let names = data.series.variable_names.as_deref();
    if let Some(val) = &prep.val {
        let report = evaluate_model(
            &trainer.best_model(),
            val,
            Some(&prep.normalizer),
            cfg.metric_scale,
            cfg.batch_size,
        )?;
        write_report(&out, "val", &report, names)?;
        println!(
            "validation mae {:.6} var {:.6} ({} scale)",
            report.mae, report.var_fairness, report.scale
        );
    }
    timings.eval_seconds = t1.elapsed().as_secs_f64();
    timings.total_seconds = clock.elapsed().as_secs_f64();

    let manifest = RunManifest {
        run_id: id.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "train".into(),
        config: config_map(&cfg),
        data: source,
        output_dir: out.clone(),
        n_vars,
        split_steps: [
            prep.split.train.n_steps(),
            prep.split.val.n_steps(),
            prep.split.test.n_steps(),
        ],
        seeds: vec![cfg.seed],
        timings,
    };
    manifest.write(&out.join(MANIFEST_FILE))?;
    println!(
        "run {id}: {} iterations over {} epochs, written to {}",
        trainer.iteration,
        trainer.epoch,
        out.display()
    );
    Ok(())
}

/// Checkpointed trainer plus the data it was trained on, split and normalized the same way.
pub struct LoadedRun {
    pub trainer: Trainer,
    pub prep: Prepared,
    pub names: Option<Vec<String>>,
}

pub fn load_run(run: &Path, checkpoint: Option<&Path>, data: Option<DataSource>) -> Result<LoadedRun> {
    let ckpt = checkpoint.map_or_else(|| run.join(CHECKPOINT_FILE), Path::to_path_buf);
    ensure!(ckpt.exists(), "no checkpoint at {}", ckpt.display());
    let trainer = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let source = match data {
        Some(s) => s,
        None => RunManifest::read(&run.join(MANIFEST_FILE))?.data,
    };
    let loaded = load(&source)?;
    let n = trainer.model.dims.n_vars;
    ensure!(
        loaded.series.n_vars() == n,
        "data has {} variables but the checkpoint expects {n}",
        loaded.series.n_vars()
    );
    let normalizer = trainer
        .normalizer()
        .context("checkpoint carries no normalization state")?;
    let prep = prepare(&loaded.series, &trainer.config, Some(normalizer))?;
    Ok(LoadedRun {
        trainer,
        prep,
        names: loaded.series.variable_names,
    })
}

/// Targets and predictions over `windows`, on `scale`.
pub fn scaled_predictions(run: &LoadedRun, windows: &Windows, scale: MetricScale) -> Result<(Tensor, Tensor)> {
    let (y, p) = predict_windows(&run.trainer.best_model(), windows, run.trainer.config.batch_size)?;
    Ok(match scale {
        MetricScale::Normalized => (y, p),
        MetricScale::Original => (
            run.prep.normalizer.invert_tensor(&y)?,
            run.prep.normalizer.invert_tensor(&p)?,
        ),
    })
}

pub fn eval(root: Option<&Path>, args: &EvalArgs) -> Result<()> {
    let run_dir = resolve_out(root, &args.run);
    let data = args.data.as_deref().map(|p| csv_source(p, args.header)).transpose()?;
    let run = load_run(&run_dir, args.checkpoint.as_deref(), data)?;
    let cfg = &run.trainer.config;
    let scale = args.metric_scale.map_or(cfg.metric_scale, metric_scale);
    let windows = run.prep.windows(args.split)?;
    let model = run.trainer.best_model();
    let report = evaluate_model(&model, windows, Some(&run.prep.normalizer), scale, cfg.batch_size)?;

    let out = args
        .out
        .as_deref()
        .map_or_else(|| run_dir.clone(), |o| resolve_out(root, o));
    let _lock = DirLock::acquire(&out)?;
    let split = args.split.as_str();
    write_report(&out, split, &report, run.names.as_deref())?;

    if args.dump_predictions || args.dump_embeddings {
        let everything = windows.batch(&(0..windows.len()).collect::<Vec<_>>());
        if args.dump_predictions {
            let (y, p) = scaled_predictions(&run, windows, scale)?;
            write_predictions_csv(
                &out.join(format!("predictions_{split}.csv")),
                &y,
                &p,
                &everything.anchor_indices,
            )?;
        }
        if args.dump_embeddings {
            let latents = model.latents(&everything.inputs, NormMode::Eval)?;
            write_embeddings_csv(&out.join(format!("embeddings_{split}.csv")), &latents)?;
        }
    }
    print!("{}", report.to_kv_text());
    Ok(())
}

const VARIANTS: [&str; 4] = ["full", "w/o adversary", "w/o clustering", "w/o orthogonality"];

fn variant_config(base: &TrainConfig, variant: &str, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig { seed, ..base.clone() };
    match variant {
        "w/o adversary" => cfg.use_adversary = false,
        "w/o clustering" => cfg.use_clustering_loss = false,
        "w/o orthogonality" => cfg.use_orthogonality_loss = false,
        _ => {}
    }
    cfg
}

fn group_mae(per_variable: &[f64], groups: &[VariableGroup], which: VariableGroup) -> f64 {
    let sel: Vec<f64> = per_variable
        .iter()
        .zip(groups)
        .filter(|(_, g)| **g == which)
        .map(|(m, _)| *m)
        .collect();
    sel.iter().sum::<f64>() / sel.len().max(1) as f64
}

pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub report: MetricsReport,
    pub discriminator_params: usize,
}

pub fn ablate(root: Option<&Path>, args: &AblateArgs) -> Result<()> {
    let clock = Instant::now();
    let started_unix = unix_now();
    let base = resolve_config(&args.config)?;
    let source = data_source(&args.source, &args.synth)?;
    let seeds = if args.seeds.is_empty() {
        vec![base.seed]
    } else {
        args.seeds.clone()
    };
    let id = run_id(&base, &source);
    let out = resolve_out(
        root,
        &args.out.clone().unwrap_or_else(|| PathBuf::from("ablations").join(&id)),
    );
    let _lock = DirLock::acquire(&out)?;

    let data = load(&source)?;
    let prep = prepare(&data.series, &base, None)?;
    let test = prep.windows(SplitName::Test)?;
    let n_vars = data.series.n_vars();
    let load_seconds = clock.elapsed().as_secs_f64();

    let mut rows = Vec::new();
    for variant in VARIANTS {
        for &seed in &seeds {
            let cfg = variant_config(&base, variant, seed);
            let mut trainer = Trainer::new(cfg.clone(), n_vars, prep.normalizer.state().cloned())?;
            trainer.fit(&prep.train, prep.val.as_ref())?;
            let report = evaluate_model(
                &trainer.best_model(),
                test,
                Some(&prep.normalizer),
                cfg.metric_scale,
                cfg.batch_size,
            )?;
            log::info!(
                "{variant} seed {seed}: mae {:.6} var {:.6}",
                report.mae,
                report.var_fairness
            );
            rows.push(AblationRow {
                variant,
                seed,
                report,
                discriminator_params: trainer.model.parameter_count(ParamGroup::Discriminator),
            });
        }
    }
    let train_seconds = clock.elapsed().as_secs_f64() - load_seconds;

    let mut per_seed = String::from("variant,seed,mae,rmse,mape,var,discriminator_params,easy_mae,hard_mae\n");
    for r in &rows {
        let m = &r.report;
        let (easy, hard) = match &data.groups {
            Some(groups) => (
                format!("{:?}", group_mae(&m.per_variable_mae, groups, VariableGroup::Easy)),
                format!("{:?}", group_mae(&m.per_variable_mae, groups, VariableGroup::Hard)),
            ),
            None => (String::new(), String::new()),
        };
        writeln!(
            per_seed,
            "{},{},{:?},{:?},{:?},{:?},{},{easy},{hard}",
            r.variant, r.seed, m.mae, m.rmse, m.mape, m.var_fairness, r.discriminator_params
        )?;
    }
    fs::write(out.join("ablation_seeds.csv"), per_seed)?;

    let mut summary = String::from("variant,mae,mape,var\n");
    let mut table = format!(
        "{:<20} {:>12} {:>12} {:>12}   ({} seeds, {} scale)\n",
        "variant",
        "MAE",
        "MAPE",
        "VAR",
        seeds.len(),
        base.metric_scale
    );
    for variant in VARIANTS {
        let sel: Vec<&MetricsReport> = rows
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| &r.report)
            .collect();
        let mean = |f: fn(&MetricsReport) -> f64| sel.iter().map(|m| f(m)).sum::<f64>() / sel.len() as f64;
        let (mae, mape, var) = (mean(|m| m.mae), mean(|m| m.mape), mean(|m| m.var_fairness));
        writeln!(summary, "{variant},{mae:?},{mape:?},{var:?}")?;
        writeln!(table, "{variant:<20} {mae:>12.6} {mape:>12.6} {var:>12.6}")?;
    }
    fs::write(out.join("ablation.csv"), summary)?;
    fs::write(out.join("ablation.txt"), &table)?;

    let manifest = RunManifest {
        run_id: id,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "ablate".into(),
        config: config_map(&base),
        data: source,
        output_dir: out.clone(),
        n_vars,
        split_steps: [
            prep.split.train.n_steps(),
            prep.split.val.n_steps(),
            prep.split.test.n_steps(),
        ],
        seeds,
        timings: Timings {
            started_unix,
            load_seconds,
            train_seconds,
            eval_seconds: 0.0,
            total_seconds: clock.elapsed().as_secs_f64(),
        },
    };
    manifest.write(&out.join(MANIFEST_FILE))?;
    print!("{table}");
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let desc = SynthDescriptor::from(&args.params);
    let s = synth_two_group(&desc.to_config())?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    s.series.write_csv(&args.out)?;
    let sidecar = args.out.with_extension("groups.csv");
    let names = s.series.variable_names.clone().unwrap_or_default();
    let mut text = String::from("column,name,group\n");
    for (i, g) in s.groups.iter().enumerate() {
        writeln!(text, "{i},{},{}", names.get(i).map_or("", String::as_str), g.label())?;
    }
    fs::write(&sidecar, text).with_context(|| format!("writing {}", sidecar.display()))?;
    println!(
        "{} steps x {} variables -> {} (groups in {})",
        s.series.n_steps(),
        s.series.n_vars(),
        args.out.display(),
        sidecar.display()
    );
    Ok(())
}
