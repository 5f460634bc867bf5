use std::collections::HashSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::space::{one_hot, SearchSpace};
use super::surrogate::{expected_improvement, ForestParams, RandomForest};
use super::trial::{Objective, TrialRecord};
use crate::arch::ArchConfig;
use crate::error::{Error, Result};
use crate::train::seed_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Smbo,
}

/// Stops at whichever limit is reached first. At least one must be set.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Budget {
    pub max_trials: Option<usize>,
    pub wall_seconds: Option<f64>,
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        match (self.max_trials, self.wall_seconds) {
            (None, None) => Err(Error::Search("a trial or wall-time budget is required".into())),
            (Some(0), _) => Err(Error::Search("trial budget must be positive".into())),
            (_, Some(s)) if !(s > 0.0) => Err(Error::Search(format!("wall budget {s}s must be positive"))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchOptions {
    pub strategy: Strategy,
    pub budget: Budget,
    pub seed: u64,
    /// Random configurations evaluated before the surrogate takes over.
    pub initial_design: usize,
    /// Random candidates scored by expected improvement per proposal.
    pub candidates: usize,
    pub forest: ForestParams,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Smbo,
            budget: Budget::default(),
            seed: 0,
            initial_design: 16,
            candidates: 500,
            forest: ForestParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub incumbent: TrialRecord,
    pub history: Vec<TrialRecord>,
}

/// Index of the best trial; ties go to the earliest.
pub fn incumbent_index(history: &[TrialRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in history.iter().enumerate() {
        if best.is_none_or(|b| t.val_accuracy > history[b].val_accuracy) {
            best = Some(i);
        }
    }
    best
}

/// Best accuracy seen after each trial.
pub fn incumbent_trace(history: &[TrialRecord]) -> Vec<f64> {
    history
        .iter()
        .scan(f64::NEG_INFINITY, |best, t| {
            *best = best.max(t.val_accuracy);
            Some(*best)
        })
        .collect()
}

fn propose(
    space: &SearchSpace,
    history: &[TrialRecord],
    seen: &HashSet<ArchConfig>,
    opts: &SearchOptions,
    rng: &mut ChaCha8Rng,
) -> Result<ArchConfig> {
    let x: Vec<Vec<f64>> = history.iter().map(|t| one_hot(&t.config)).collect();
    let y: Vec<f64> = history.iter().map(|t| t.val_accuracy).collect();
    let forest = RandomForest::fit(&x, &y, opts.forest, seed_for(&[opts.seed, history.len() as u64, 1]))?;
    let best = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut choice: Option<(f64, ArchConfig)> = None;
    for _ in 0..opts.candidates.max(1) {
        let c = space.sample(rng);
        if seen.contains(&c) {
            continue;
        }
        let (m, s) = forest.predict(&one_hot(&c));
        let ei = expected_improvement(m, s, best);
        if choice.is_none_or(|(e, _)| ei > e) {
            choice = Some((ei, c));
        }
    }
    Ok(choice.map_or_else(|| space.sample(rng), |(_, c)| c))
}

/// Budgeted search. `random` samples and evaluates; `smbo` evaluates an
/// initial random design, then repeatedly fits the random-forest surrogate
/// on one-hot configurations and evaluates the unseen candidate with the
/// highest expected improvement. A trial finishing after the wall budget
/// is discarded. Trials run one at a time, so a seeded search replays
/// exactly.
pub fn search(space: &SearchSpace, objective: &mut dyn Objective, opts: &SearchOptions) -> Result<SearchOutcome> {
    opts.budget.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut history: Vec<TrialRecord> = Vec::new();
    let mut seen = HashSet::new();
    let max_trials = opts.budget.max_trials.unwrap_or(usize::MAX);
    let out_of_time = |t: &Instant| opts.budget.wall_seconds.is_some_and(|w| t.elapsed().as_secs_f64() > w);
    while history.len() < max_trials && !out_of_time(&started) {
        let config = match opts.strategy {
            Strategy::Smbo if history.len() >= opts.initial_design.max(2) => {
                propose(space, &history, &seen, opts, &mut rng)?
            }
            _ => space.sample(&mut rng),
        };
        let trial = objective.evaluate(&config, seed_for(&[opts.seed, history.len() as u64]))?;
        if out_of_time(&started) {
            break;
        }
        seen.insert(config);
        history.push(trial);
    }
    let best = incumbent_index(&history)
        .ok_or_else(|| Error::Search("budget exhausted before the first trial completed".into()))?;
    Ok(SearchOutcome {
        incumbent: history[best].clone(),
        history,
    })
}
