//! Hyperband hyperparameter search: bracket scheduling, config sampling,
//! and a rung-synchronized executor with one-shot replacement of failed
//! trials. Promoted trials pass a growing cumulative epoch target to the
//! objective, which resumes from its own checkpoints.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::models::Strategy;
use crate::rng::CounterRng;
use crate::tensor::optim::{OptimConfig, OptimKind};
use crate::train::TrainConfig;
use crate::{Error, Result};

/// Ranges the tuner samples from.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SearchSpace {
    /// Log-uniform range.
    pub learning_rate: (f64, f64),
    pub batch_size: Vec<usize>,
    pub optimizer: Vec<OptimKind>,
    /// Log-uniform range.
    pub weight_decay: (f64, f64),
    /// Uniform range; momentum for SGD, beta1 for Adam.
    pub momentum: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: (1e-4, 1e-1),
            batch_size: vec![16, 32, 64],
            optimizer: vec![OptimKind::Adam, OptimKind::SgdMomentum],
            weight_decay: (1e-6, 1e-3),
            momentum: (0.5, 0.99),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let log_range = |name: &str, (lo, hi): (f64, f64)| {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is invalid")));
            }
            Ok(())
        };
        log_range("learning-rate", self.learning_rate)?;
        log_range("weight-decay", self.weight_decay)?;
        let (lo, hi) = self.momentum;
        if !(lo.is_finite() && hi.is_finite() && (0.0..1.0).contains(&lo) && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("momentum range [{lo}, {hi}] is invalid")));
        }
        if self.batch_size.is_empty() || self.batch_size.contains(&0) {
            return Err(Error::Config("batch-size choices must be positive and non-empty".into()));
        }
        if self.optimizer.is_empty() {
            return Err(Error::Config("optimizer choices must be non-empty".into()));
        }
        Ok(())
    }
}

/// One draw from the search space.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct SampledConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimKind,
    pub weight_decay: f64,
    pub momentum: f64,
}

impl SampledConfig {
    /// Expand into a full training config with the given schedule.
    pub fn to_train_config(&self, epochs: usize, strategy: Strategy, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            optim: OptimConfig {
                kind: self.optimizer,
                lr: self.learning_rate,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
                ..OptimConfig::default()
            },
            strategy,
            seed,
            source_checkpoint: None,
        }
    }
}

pub fn sample_config(space: &SearchSpace, rng: &mut CounterRng) -> SampledConfig {
    SampledConfig {
        learning_rate: rng.log_uniform(space.learning_rate.0, space.learning_rate.1),
        batch_size: *rng.choose(&space.batch_size),
        optimizer: *rng.choose(&space.optimizer),
        weight_decay: rng.log_uniform(space.weight_decay.0, space.weight_decay.1),
        momentum: rng.uniform(space.momentum.0, space.momentum.1),
    }
}

/// One rung of a bracket: how many configs train for how many epochs, and
/// how many advance.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct Rung {
    pub i: usize,
    pub configs: usize,
    pub epochs: f64,
    pub survivors: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct Bracket {
    pub s: usize,
    pub n: usize,
    pub r: f64,
    pub rungs: Vec<Rung>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct HyperbandPlan {
    pub r_max: usize,
    pub eta: usize,
    pub s_max: usize,
    pub budget: usize,
    pub brackets: Vec<Bracket>,
}

/// The Hyperband schedule: brackets s_max down to 0, each running
/// n = ⌈(s_max+1)·η^s/(s+1)⌉ configs starting at r = R·η^(−s) epochs, with
/// successive-halving rungs n_i = ⌊n/η^i⌋ at r_i = r·η^i.
pub fn hyperband_schedule(r_max: usize, eta: usize) -> Result<HyperbandPlan> {
    if r_max < 1 {
        return Err(Error::Config("hyperband R must be at least 1".into()));
    }
    if eta < 2 {
        return Err(Error::Config("hyperband eta must be at least 2".into()));
    }
    let mut s_max = 0usize;
    while eta.pow(s_max as u32 + 1) <= r_max {
        s_max += 1;
    }
    let budget = (s_max + 1) * r_max;
    let mut brackets = Vec::with_capacity(s_max + 1);
    for s in (0..=s_max).rev() {
        let n = ((s_max + 1) * eta.pow(s as u32)).div_ceil(s + 1);
        let r = r_max as f64 / eta.pow(s as u32) as f64;
        let rungs = (0..=s)
            .map(|i| {
                let configs = n / eta.pow(i as u32);
                Rung {
                    i,
                    configs,
                    epochs: r * eta.pow(i as u32) as f64,
                    survivors: configs / eta,
                }
            })
            .collect();
        brackets.push(Bracket { s, n, r, rungs });
    }
    Ok(HyperbandPlan { r_max, eta, s_max, budget, brackets })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialStatus {
    Pending,
    Running,
    Done,
    Failed,
}

/// Score a trial earned at one rung.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct RungScore {
    pub rung: usize,
    pub epochs: usize,
    pub score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Trial {
    pub id: usize,
    pub bracket: usize,
    pub config: SampledConfig,
    /// Cumulative epochs assigned so far (the last rung's budget).
    pub epochs: usize,
    /// Last rung this trial ran.
    pub rung: usize,
    pub status: TrialStatus,
    /// Best validation score; present exactly for completed trials.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replacement_of: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    pub progress: Vec<RungScore>,
}

/// Everything a tuning run produces; serialized as the tuning report.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TuningReport {
    pub plan: HyperbandPlan,
    pub seed: u64,
    pub trials: Vec<Trial>,
    /// Trial id of the best completed trial.
    pub winner: usize,
    /// Actual epochs spent, counting only the increments each invocation trained.
    pub consumed_epochs: usize,
}

impl TuningReport {
    pub fn best(&self) -> &Trial {
        self.trials.iter().find(|t| t.id == self.winner).expect("winner exists")
    }
}

enum Outcome {
    Score(f64),
    Fail(String),
}

/// Run `jobs` (trial index, cumulative epoch target) through the objective
/// on up to `parallelism` worker threads. Objective panics become failures.
/// Results are reassembled in job order, so scheduling is timing-independent.
fn run_batch<F>(
    objective: &F,
    trials: &[Trial],
    jobs: &[(usize, usize)],
    parallelism: usize,
) -> Vec<Outcome>
where
    F: Fn(usize, &SampledConfig, usize) -> Result<f64> + Sync,
{
    let cursor = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Outcome>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let workers = parallelism.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = cursor.fetch_add(1, Ordering::Relaxed);
                if j >= jobs.len() {
                    break;
                }
                let (t, epochs) = jobs[j];
                let trial = &trials[t];
                let outcome =
                    match catch_unwind(AssertUnwindSafe(|| objective(trial.id, &trial.config, epochs))) {
                        Ok(Ok(score)) if score.is_finite() => Outcome::Score(score),
                        Ok(Ok(score)) => Outcome::Fail(format!("non-finite objective {score}")),
                        Ok(Err(e)) => Outcome::Fail(e.to_string()),
                        Err(panic) => {
                            let msg = panic
                                .downcast_ref::<&str>()
                                .map(|s| s.to_string())
                                .or_else(|| panic.downcast_ref::<String>().cloned())
                                .unwrap_or_else(|| "objective panicked".into());
                            Outcome::Fail(format!("panic: {msg}"))
                        }
                    };
                results.lock().unwrap()[j] = Some(outcome);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|o| o.expect("job ran")).collect()
}

/// A bracket slot: the trial currently occupying it and its latest score.
/// A slot whose trial and replacement both failed is dead at -inf.
struct Slot {
    trial: usize,
    score: f64,
}

pub fn run_hyperband<F>(
    space: &SearchSpace,
    objective: F,
    r_max: usize,
    eta: usize,
    seed: u64,
    parallelism: usize,
) -> Result<TuningReport>
where
    F: Fn(usize, &SampledConfig, usize) -> Result<f64> + Sync,
{
    space.validate()?;
    let plan = hyperband_schedule(r_max, eta)?;
    let mut trials: Vec<Trial> = Vec::new();
    let mut consumed = 0usize;

    let new_trial = |trials: &mut Vec<Trial>, bracket: usize, config: SampledConfig| -> usize {
        let id = trials.len();
        trials.push(Trial {
            id,
            bracket,
            config,
            epochs: 0,
            rung: 0,
            status: TrialStatus::Pending,
            objective: None,
            replacement_of: None,
            diagnostic: None,
            progress: Vec::new(),
        });
        id
    };

    for bracket in &plan.brackets {
        let mut rng = CounterRng::new(seed, &["sample", &bracket.s.to_string()]);
        let mut slots: Vec<Slot> = (0..bracket.n)
            .map(|_| {
                let config = sample_config(space, &mut rng);
                Slot { trial: new_trial(&mut trials, bracket.s, config), score: f64::NEG_INFINITY }
            })
            .collect();

        for rung in &bracket.rungs {
            let epochs = (rung.epochs.round() as usize).max(1);
            let alive: Vec<usize> = (0..slots.len())
                .filter(|&k| slots[k].score.is_finite() || trials[slots[k].trial].status == TrialStatus::Pending)
                .collect();
            let jobs: Vec<(usize, usize)> = alive.iter().map(|&k| (slots[k].trial, epochs)).collect();
            for &(t, _) in &jobs {
                consumed += epochs - trials[t].epochs;
                trials[t].status = TrialStatus::Running;
            }
            let outcomes = run_batch(&objective, &trials, &jobs, parallelism);

            let mut failed_slots: Vec<usize> = Vec::new();
            for (&k, outcome) in alive.iter().zip(outcomes) {
                let t = slots[k].trial;
                trials[t].epochs = epochs;
                trials[t].rung = rung.i;
                match outcome {
                    Outcome::Score(score) => {
                        trials[t].status = TrialStatus::Done;
                        trials[t].objective = Some(score);
                        trials[t].progress.push(RungScore { rung: rung.i, epochs, score });
                        slots[k].score = score;
                    }
                    Outcome::Fail(diag) => {
                        trials[t].status = TrialStatus::Failed;
                        trials[t].objective = None;
                        trials[t].diagnostic = Some(diag);
                        slots[k].score = f64::NEG_INFINITY;
                        failed_slots.push(k);
                    }
                }
            }

            // One replacement per failed slot, freshly sampled, same rung.
            let mut repl_jobs: Vec<(usize, usize)> = Vec::new();
            for &k in &failed_slots {
                let failed_id = slots[k].trial;
                let mut rrng = CounterRng::new(seed, &["replace", &failed_id.to_string()]);
                let config = sample_config(space, &mut rrng);
                let id = new_trial(&mut trials, bracket.s, config);
                trials[id].replacement_of = Some(failed_id);
                trials[id].status = TrialStatus::Running;
                slots[k].trial = id;
                repl_jobs.push((id, epochs));
                consumed += epochs;
            }
            if !repl_jobs.is_empty() {
                let outcomes = run_batch(&objective, &trials, &repl_jobs, parallelism);
                for (&k, outcome) in failed_slots.iter().zip(outcomes) {
                    let t = slots[k].trial;
                    trials[t].epochs = epochs;
                    trials[t].rung = rung.i;
                    match outcome {
                        Outcome::Score(score) => {
                            trials[t].status = TrialStatus::Done;
                            trials[t].objective = Some(score);
                            trials[t].progress.push(RungScore { rung: rung.i, epochs, score });
                            slots[k].score = score;
                        }
                        Outcome::Fail(diag) => {
                            trials[t].status = TrialStatus::Failed;
                            trials[t].diagnostic = Some(diag);
                            slots[k].score = f64::NEG_INFINITY;
                        }
                    }
                }
            }

            if rung.i < bracket.s {
                // Top survivors by score; ties keep the earlier trial id.
                let mut order: Vec<usize> = (0..slots.len()).collect();
                order.sort_by(|&a, &b| {
                    slots[b]
                        .score
                        .partial_cmp(&slots[a].score)
                        .unwrap()
                        .then(slots[a].trial.cmp(&slots[b].trial))
                });
                order.truncate(rung.survivors);
                order.sort();
                slots = order.into_iter().map(|k| Slot { trial: slots[k].trial, score: slots[k].score }).collect();
            }
        }
    }

    let winner = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Done)
        .max_by(|a, b| {
            a.objective
                .unwrap()
                .partial_cmp(&b.objective.unwrap())
                .unwrap()
                .then(b.id.cmp(&a.id))
        })
        .map(|t| t.id)
        .ok_or_else(|| Error::TrainFailed("every hyperband trial failed".into()))?;

    Ok(TuningReport { plan, seed, trials, winner, consumed_epochs: consumed })
}
