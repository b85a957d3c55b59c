//! Fixtures shared by the benchmarks: a seeded model, a trainer and a batch
//! of windows over synthetic two-group data.

use fairforecast_core::{make_windows, synth_two_group, SynthConfig, TrainConfig, Trainer, WindowBatch, Windows};

/// Benchmark problem size.
#[derive(Debug, Clone, Copy)]
pub struct Size {
    pub n_vars: usize,
    pub window: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub batch: usize,
}

impl Size {
    pub const SMALL: Size = Size {
        n_vars: 8,
        window: 12,
        horizon: 3,
        hidden: 16,
        batch: 32,
    };

    pub const DEFAULT: Size = Size {
        n_vars: 16,
        window: 12,
        horizon: 12,
        hidden: 64,
        batch: 64,
    };

    pub fn label(&self) -> String {
        format!("n{}_w{}_o{}_b{}", self.n_vars, self.window, self.hidden, self.batch)
    }

    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            window: self.window,
            horizon: self.horizon,
            hidden: self.hidden,
            clusters: 2,
            batch_size: self.batch,
            ..TrainConfig::default()
        }
    }
}

pub fn windows(size: Size) -> Windows {
    let half = size.n_vars / 2;
    let series = synth_two_group(&SynthConfig {
        n_easy: half,
        n_hard: size.n_vars - half,
        steps: size.window + size.horizon + 4 * size.batch,
        ..SynthConfig::default()
    })
    .expect("valid synthetic config")
    .series;
    make_windows(&series, size.window, size.horizon).expect("series holds the windows")
}

pub fn fixture(size: Size) -> (Trainer, WindowBatch) {
    let w = windows(size);
    let ordinals: Vec<usize> = (0..size.batch).collect();
    let trainer = Trainer::new(size.config(), size.n_vars, None).expect("valid config");
    (trainer, w.batch(&ordinals))
}
