//! Phase-transition sweeps: fraction of GD runs that fit random labels for
//! each width `k` and input dimension `d` at a fixed sample count `n`.

use std::collections::BTreeMap;
use std::time::Instant;

use overparam_core::netcore::init_theorem;
use overparam_core::seeding::mix;
use overparam_core::trainer::{gd_train, StepRule, TrainConfig, TrainTrace};
use overparam_core::{Activation, Error};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{gen_dataset, LabelMode};
use crate::error::{LabError, LabResult};

/// Learning rates used in the published experiments.
pub const PAPER_ETA_SOFTPLUS: f64 = 0.15;
pub const PAPER_ETA_RELU: f64 = 0.1;
pub const PAPER_MAX_ITERS: usize = 15_000;
pub const PAPER_THRESHOLD: f64 = 2.5e-3;
pub const PAPER_TRIALS: usize = 10;
pub const PAPER_N: usize = 100;
pub const PAPER_GRID_MAX: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LearningRate {
    PaperFixed { eta: f64 },
    /// The convergence theorem's step for the activation with `η̄ = 1`.
    Theorem,
}

impl LearningRate {
    /// The published constant for `act` (0.15 softplus, 0.1 ReLU).
    pub fn paper_default(act: Activation) -> Self {
        let eta = if act == Activation::Relu {
            PAPER_ETA_RELU
        } else {
            PAPER_ETA_SOFTPLUS
        };
        Self::PaperFixed { eta }
    }

    fn step_rule(self, act: Activation) -> LabResult<StepRule> {
        Ok(match self {
            Self::PaperFixed { eta } => StepRule::Fixed { eta },
            Self::Theorem => match act {
                Activation::Relu => StepRule::TheoremRelu { eta_bar: 1.0 },
                a if a.derivative_bound().is_some() => StepRule::TheoremSmooth { eta_bar: 1.0 },
                a => {
                    return Err(LabError::Config(format!(
                        "{a} has no theorem step size; pass a fixed rate"
                    )))
                }
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n: usize,
    pub d_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub trials: usize,
    pub activation: Activation,
    pub learning_rate: LearningRate,
    pub max_iters: usize,
    /// Success means `‖f(W)−y‖/‖y‖` at or below this.
    pub success_threshold: f64,
    pub base_seed: u64,
    /// Pool size; excluded from serialization since results do not depend on it.
    #[serde(skip, default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

impl SweepConfig {
    /// The published protocol: `n = 100`, `k, d ∈ 1..=25`, 10 trials,
    /// 15000 iterations at the published constant rate, threshold `2.5e-3`.
    pub fn paper(activation: Activation) -> Self {
        Self {
            n: PAPER_N,
            d_values: (1..=PAPER_GRID_MAX).collect(),
            k_values: (1..=PAPER_GRID_MAX).collect(),
            trials: PAPER_TRIALS,
            activation,
            learning_rate: LearningRate::paper_default(activation),
            max_iters: PAPER_MAX_ITERS,
            success_threshold: PAPER_THRESHOLD,
            base_seed: 0,
            workers: default_workers(),
        }
    }

    pub fn validate(&self) -> LabResult<()> {
        let fail = |m: String| Err(LabError::Config(m));
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if !(self.success_threshold > 0.0) {
            return fail(format!("success threshold must be positive, got {}", self.success_threshold));
        }
        if self.k_values.is_empty() || self.d_values.is_empty() {
            return fail("k and d grids must be nonempty".into());
        }
        if self.k_values.contains(&0) || self.d_values.contains(&0) {
            return fail("k and d values must be at least 1".into());
        }
        if self.max_iters == 0 {
            return fail("max_iters must be at least 1".into());
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        if let LearningRate::PaperFixed { eta } = self.learning_rate {
            if !(eta > 0.0 && eta.is_finite()) {
                return fail(format!("learning rate must be positive, got {eta}"));
            }
        }
        self.learning_rate.step_rule(self.activation)?;
        Ok(())
    }
}

/// Seed of one `(k, d, trial)` cell: `mix([base, k, d, trial])`.
pub fn cell_seed(base: u64, k: usize, d: usize, trial: usize) -> u64 {
    mix(&[base, k as u64, d as u64, trial as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    /// Absent when the run failed before any residual was computed.
    pub final_rel_residual: Option<f64>,
    /// Why the run failed, when it did not finish normally.
    pub failure: Option<String>,
    #[serde(skip)]
    pub trace: Option<TrainTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub k: usize,
    pub d: usize,
    pub successes: usize,
    pub trials: usize,
    pub success_probability: f64,
    pub outcomes: Vec<TrialOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by `(k, d)`.
    pub cells: Vec<CellResult>,
    pub config_echo: SweepConfig,
    /// Seconds; varies run to run, so it is written separately from the manifest.
    #[serde(skip)]
    pub wall_time: f64,
}

impl SweepResult {
    pub fn grid(&self) -> BTreeMap<(usize, usize), f64> {
        self.cells
            .iter()
            .map(|c| ((c.k, c.d), c.success_probability))
            .collect()
    }

    /// Mean success over the cells for which `keep(k, d)` holds.
    pub fn mean_success_where(&self, keep: impl Fn(usize, usize) -> bool) -> Option<f64> {
        let sel: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| keep(c.k, c.d))
            .map(|c| c.success_probability)
            .collect();
        (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
    }
}

/// One training run: fresh dataset from `mix([seed, 0])`, theorem init from
/// `mix([seed, 1])`, then GD with early stopping at the threshold.
fn run_trial(cfg: &SweepConfig, rule: StepRule, k: usize, d: usize, trial: usize, keep_trace: bool) -> TrialOutcome {
    let seed = cell_seed(cfg.base_seed, k, d, trial);
    let failed = |reason: String, iterations: usize, rel: Option<f64>, trace: Option<TrainTrace>| TrialOutcome {
        trial,
        seed,
        converged: false,
        iterations,
        final_rel_residual: rel,
        failure: Some(reason),
        trace,
    };
    let data = match gen_dataset(cfg.n, d, &LabelMode::Gaussian, mix(&[seed, 0])) {
        Ok(data) => data,
        Err(e) => return failed(format!("dataset: {e}"), 0, None, None),
    };
    let mut net = match init_theorem(k, d, cfg.activation, &data, mix(&[seed, 1])) {
        Ok(net) => net,
        Err(e) => return failed(format!("init: {e}"), 0, None, None),
    };
    let mut tc = TrainConfig::gd(cfg.max_iters, cfg.success_threshold, rule);
    tc.track_spectral_distance = keep_trace;
    match gd_train(&mut net, &data, &tc) {
        Ok(trace) => TrialOutcome {
            trial,
            seed,
            converged: trace.converged,
            iterations: trace.iterations_run,
            final_rel_residual: trace.final_rel_residual(),
            failure: None,
            trace: keep_trace.then_some(trace),
        },
        Err(Error::Diverged { iteration, reason, trace }) => {
            let rel = trace.final_rel_residual();
            failed(format!("diverged: {reason}"), iteration, rel, keep_trace.then_some(*trace))
        }
        Err(e) => failed(e.to_string(), 0, None, None),
    }
}

/// Runs every `(k, d, trial)` on a pool of `config.workers` threads. Cells
/// are seeded from their coordinates alone, so the result does not depend on
/// the pool size or scheduling. Numeric failures count as unsuccessful trials.
pub fn run_sweep(config: &SweepConfig, keep_traces: bool) -> LabResult<SweepResult> {
    config.validate()?;
    let rule = config.learning_rate.step_rule(config.activation)?;
    let start = Instant::now();
    let jobs: Vec<(usize, usize, usize)> = config
        .k_values
        .iter()
        .flat_map(|&k| {
            config
                .d_values
                .iter()
                .flat_map(move |&d| (0..config.trials).map(move |t| (k, d, t)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
    let done: Vec<((usize, usize, usize), TrialOutcome)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, d, t)| ((k, d, t), run_trial(config, rule, k, d, t, keep_traces)))
            .collect()
    });
    let mut by_cell: BTreeMap<(usize, usize), Vec<TrialOutcome>> = BTreeMap::new();
    for ((k, d, _), outcome) in done {
        by_cell.entry((k, d)).or_default().push(outcome);
    }
    let cells = by_cell
        .into_iter()
        .map(|((k, d), mut outcomes)| {
            outcomes.sort_by_key(|o| o.trial);
            let successes = outcomes.iter().filter(|o| o.converged).count();
            CellResult {
                k,
                d,
                successes,
                trials: outcomes.len(),
                success_probability: successes as f64 / outcomes.len() as f64,
                outcomes,
            }
        })
        .collect();
    Ok(SweepResult {
        cells,
        config_echo: config.clone(),
        wall_time: start.elapsed().as_secs_f64(),
    })
}
