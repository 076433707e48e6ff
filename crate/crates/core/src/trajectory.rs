//! Recorded estimator runs: the per-step triple of state, directive and
//! sample that the guarantee checks consume.

use crate::error::{Error, Result};
use crate::estimator::{BatchAccumulator, EstimatorState, Sample, StepDiagnostics};
use crate::forgetting::{Forgetting, ForgettingDirective, StrategyContext};
use crate::linalg::Vector;

/// Step `k`: the state before the update, the directive used and the sample
/// consumed, plus the diagnostics the update produced.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub state: EstimatorState,
    pub directive: ForgettingDirective,
    pub sample: Sample,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub final_state: EstimatorState,
}

impl Trajectory {
    /// Drives `strategy` over `samples` starting from `init`. Stops at the
    /// first error, including a violated well-posedness condition.
    pub fn record<'a, I>(init: EstimatorState, strategy: &mut dyn Forgetting, samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Sample>,
    {
        let mut state = init;
        let mut steps = Vec::new();
        for sample in samples {
            let directive = strategy.directive(&StrategyContext {
                state: &state,
                sample,
            })?;
            let (next, diagnostics) = state.step(sample, &directive.f)?;
            steps.push(StepRecord {
                state,
                directive,
                sample: sample.clone(),
                diagnostics,
            });
            state = next;
        }
        Ok(Self {
            steps,
            final_state: state,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn initial_state(&self) -> &EstimatorState {
        self.steps.first().map(|s| &s.state).unwrap_or(&self.final_state)
    }

    /// `θ_0, …, θ_K`.
    pub fn thetas(&self) -> Vec<Vector> {
        self.steps
            .iter()
            .map(|s| s.state.theta().clone())
            .chain(std::iter::once(self.final_state.theta().clone()))
            .collect()
    }

    /// State after `k` steps, `0 ≤ k ≤ len()`.
    pub fn state(&self, k: usize) -> Option<&EstimatorState> {
        match k.cmp(&self.steps.len()) {
            std::cmp::Ordering::Less => Some(&self.steps[k].state),
            std::cmp::Ordering::Equal => Some(&self.final_state),
            std::cmp::Ordering::Greater => None,
        }
    }

    /// Replays the recorded samples and forgetting matrices through the batch
    /// cost, returning the accumulator after every step.
    pub fn batch_replay(&self) -> Result<BatchAccumulator> {
        let first = self.steps.first().ok_or(Error::EmptyTrajectory)?;
        let mut acc = BatchAccumulator::from_state(&first.state)?;
        for s in &self.steps {
            acc.accumulate(&s.sample, &s.directive.f, s.state.theta())?;
        }
        Ok(acc)
    }
}
