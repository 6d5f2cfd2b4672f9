// SPDX-License-Identifier: MIT OR Apache-2.0

//! Metropolis-Hastings over the inclusion vectors.
//!
//! Each iteration flips either `flip_gamma` bits of `gamma` or `flip_r` bits
//! of `r` (probability 1/2 each), choosing the indices uniformly without
//! replacement among all but the pinned first index. The kernel is an
//! involution on index sets, hence symmetric, and acceptance reduces to
//! `min(1, exp(delta log posterior))`.
//!
//! Note that an exact-`k` flip preserves the parity of the number of set
//! bits whenever `k` is even, so with even flip counts the chain explores
//! only the parity class of its initial state.

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{log_integrated_posterior, LatentState, Mode, PosteriorContext};
use crate::scalar::Scalar;

/// Iterations between full state snapshots in a trace.
pub const SNAPSHOT_EVERY: usize = 1000;

/// Iterations per acceptance-rate block.
pub const ACCEPTANCE_BLOCK: usize = 1000;

const MAX_INIT_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MhConfig {
    /// Burn-in plus retained iterations.
    pub total_iterations: usize,
    pub burn_in: usize,
    /// Bits of `gamma` flipped per gamma move.
    pub flip_gamma: usize,
    /// Bits of `r` flipped per r move.
    pub flip_r: usize,
    /// Initial number of segments (set bits of `gamma`).
    pub init_segments: usize,
    /// Initial number of atoms (set bits of `r`).
    pub init_functions: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            total_iterations: 20_000,
            burn_in: 5_000,
            flip_gamma: 2,
            flip_r: 2,
            init_segments: 3,
            init_functions: 3,
            seed: 0,
            mode: Mode::SemiParametric,
        }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.total_iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.total_iterations
            )));
        }
        if self.flip_gamma == 0 || self.flip_r == 0 {
            return Err(Error::Config("flip counts must be at least 1".into()));
        }
        if self.init_segments == 0 || self.init_functions == 0 {
            return Err(Error::Config(
                "initial segment and function counts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Checks the configuration against a context's dimensions.
    pub fn validate_for<T: Scalar>(&self, ctx: &PosteriorContext<T>) -> Result<()> {
        self.validate()?;
        if self.mode != ctx.mode() {
            return Err(Error::Config(format!(
                "sampler mode {} does not match context mode {}",
                self.mode.name(),
                ctx.mode().name()
            )));
        }
        let n = ctx.n();
        if self.flip_gamma > n - 1 || self.init_segments > n {
            return Err(Error::Config(format!(
                "flip_gamma must be <= {} and init_segments <= {n}",
                n - 1
            )));
        }
        if self.mode.has_functional() {
            let m = ctx.num_atoms();
            if m < 2 {
                return Err(Error::Config(
                    "the functional part needs at least one non-constant atom".into(),
                ));
            }
            if self.flip_r > m - 1 || self.init_functions > m {
                return Err(Error::Config(format!(
                    "flip_r must be <= {} and init_functions <= {m}",
                    m - 1
                )));
            }
        }
        Ok(())
    }
}

/// Which inclusion vector a move touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Gamma,
    R,
}

impl Target {
    fn tag(self) -> char {
        match self {
            Target::Gamma => 'g',
            Target::R => 'r',
        }
    }
}

/// Chooses `count` distinct 1-based indices from `2..=len`.
fn sample_flip_indices<R: Rng + ?Sized>(
    len: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if count == 0 || len < 2 || count > len - 1 {
        return Err(Error::invalid(format!(
            "cannot flip {count} of the {} free bits",
            len.saturating_sub(1)
        )));
    }
    let mut picks: Vec<usize> = index::sample(rng, len - 1, count)
        .into_iter()
        .map(|i| i + 2)
        .collect();
    picks.sort_unstable();
    Ok(picks)
}

fn flip(bits: &mut [bool], indices: &[usize]) {
    for &i in indices {
        bits[i - 1] = !bits[i - 1];
    }
}

fn bits_mut(state: &mut LatentState, which: Target) -> &mut Vec<bool> {
    match which {
        Target::Gamma => &mut state.gamma,
        Target::R => &mut state.r,
    }
}

/// Flips `count` uniformly chosen free bits of `gamma` or `r`.
pub fn propose_flip<R: Rng + ?Sized>(
    state: &LatentState,
    which: Target,
    count: usize,
    rng: &mut R,
) -> Result<LatentState> {
    let mut next = state.clone();
    let bits = bits_mut(&mut next, which);
    let picks = sample_flip_indices(bits.len(), count, rng)?;
    flip(bits, &picks);
    Ok(next)
}

/// Applies an explicit set of 1-based flips.
pub fn apply_flips(state: &LatentState, which: Target, indices: &[usize]) -> Result<LatentState> {
    let mut next = state.clone();
    let bits = bits_mut(&mut next, which);
    if let Some(&bad) = indices.iter().find(|&&i| i < 2 || i > bits.len()) {
        return Err(Error::PositionOutOfRange {
            position: bad,
            n: bits.len(),
        });
    }
    flip(bits, indices);
    Ok(next)
}

/// One recorded iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep<T> {
    pub target: Target,
    /// Proposed flips (1-based); applied only when `accepted`.
    pub proposal: Vec<usize>,
    pub accepted: bool,
    /// Log collapsed posterior of the chain state after this iteration.
    pub log_density: T,
}

/// Chain history stored as flip deltas plus periodic snapshots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MhTrace<T> {
    pub initial: LatentState,
    pub initial_log_density: T,
    pub steps: Vec<TraceStep<T>>,
    /// `snapshots[k]` is the state after iteration `(k + 1) * SNAPSHOT_EVERY`.
    pub snapshots: Vec<LatentState>,
}

/// Acceptance counts for one block of iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockAcceptance {
    pub start: usize,
    pub len: usize,
    pub gamma_proposed: usize,
    pub gamma_accepted: usize,
    pub r_proposed: usize,
    pub r_accepted: usize,
}

impl BlockAcceptance {
    fn rate(acc: usize, prop: usize) -> f64 {
        if prop == 0 {
            0.0
        } else {
            acc as f64 / prop as f64
        }
    }

    pub fn gamma_rate(&self) -> f64 {
        Self::rate(self.gamma_accepted, self.gamma_proposed)
    }

    pub fn r_rate(&self) -> f64 {
        Self::rate(self.r_accepted, self.r_proposed)
    }

    pub fn overall_rate(&self) -> f64 {
        Self::rate(
            self.gamma_accepted + self.r_accepted,
            self.gamma_proposed + self.r_proposed,
        )
    }
}

impl<T: Scalar> MhTrace<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Visits the state after every iteration, in order.
    pub fn for_each_state(&self, mut visit: impl FnMut(usize, &LatentState)) {
        let mut state = self.initial.clone();
        for (i, step) in self.steps.iter().enumerate() {
            if step.accepted {
                flip(bits_mut(&mut state, step.target), &step.proposal);
            }
            visit(i + 1, &state);
        }
    }

    /// State after iteration `iteration` (0 is the initial state).
    pub fn state_at(&self, iteration: usize) -> Result<LatentState> {
        if iteration > self.steps.len() {
            return Err(Error::invalid(format!(
                "iteration {iteration} beyond trace length {}",
                self.steps.len()
            )));
        }
        let block = iteration / SNAPSHOT_EVERY;
        let (mut state, from) = if block == 0 {
            (self.initial.clone(), 0)
        } else {
            (self.snapshots[block - 1].clone(), block * SNAPSHOT_EVERY)
        };
        for step in &self.steps[from..iteration] {
            if step.accepted {
                flip(bits_mut(&mut state, step.target), &step.proposal);
            }
        }
        Ok(state)
    }

    /// Final chain state.
    pub fn last_state(&self) -> LatentState {
        self.state_at(self.steps.len())
            .expect("trace length is always reachable")
    }

    /// Fraction of post-burn-in states satisfying `event`.
    pub fn event_frequency(
        &self,
        burn_in: usize,
        mut event: impl FnMut(&LatentState) -> bool,
    ) -> Result<f64> {
        if burn_in >= self.steps.len() {
            return Err(Error::invalid("empty post-burn-in window"));
        }
        let mut hits = 0usize;
        self.for_each_state(|i, s| {
            if i > burn_in && event(s) {
                hits += 1;
            }
        });
        Ok(hits as f64 / (self.steps.len() - burn_in) as f64)
    }

    /// Acceptance counts per block of `block` iterations.
    pub fn acceptance_blocks(&self, block: usize) -> Vec<BlockAcceptance> {
        let block = block.max(1);
        self.steps
            .chunks(block)
            .enumerate()
            .map(|(k, chunk)| {
                let mut b = BlockAcceptance {
                    start: k * block + 1,
                    len: chunk.len(),
                    gamma_proposed: 0,
                    gamma_accepted: 0,
                    r_proposed: 0,
                    r_accepted: 0,
                };
                for s in chunk {
                    let (p, a) = match s.target {
                        Target::Gamma => (&mut b.gamma_proposed, &mut b.gamma_accepted),
                        Target::R => (&mut b.r_proposed, &mut b.r_accepted),
                    };
                    *p += 1;
                    *a += usize::from(s.accepted);
                }
                b
            })
            .collect()
    }

    /// Acceptance counts over the whole run.
    pub fn acceptance_total(&self) -> BlockAcceptance {
        let blocks = self.acceptance_blocks(self.steps.len().max(1));
        blocks.into_iter().next().unwrap_or(BlockAcceptance {
            start: 1,
            len: 0,
            gamma_proposed: 0,
            gamma_accepted: 0,
            r_proposed: 0,
            r_accepted: 0,
        })
    }

    /// Delimited export: `iteration,accepted,log_density,changed`.
    ///
    /// `changed` lists the flipped indices of accepted moves as `g7;g19` or `r11`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,accepted,log_density,changed\n");
        for (i, s) in self.steps.iter().enumerate() {
            let changed = if s.accepted {
                s.proposal
                    .iter()
                    .map(|j| format!("{}{j}", s.target.tag()))
                    .collect::<Vec<_>>()
                    .join(";")
            } else {
                String::new()
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                u8::from(s.accepted),
                s.log_density,
                changed
            ));
        }
        out
    }
}

fn initial_state<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    config: &MhConfig,
    functional: bool,
    rng: &mut R,
) -> LatentState {
    let mut state = LatentState::minimal(n, m);
    if config.init_segments > 1 {
        for i in index::sample(rng, n - 1, config.init_segments - 1) {
            state.gamma[i + 1] = true;
        }
    }
    if functional && config.init_functions > 1 {
        for j in index::sample(rng, m - 1, config.init_functions - 1) {
            state.r[j + 1] = true;
        }
    }
    state
}

/// Runs the chain with an RNG seeded from `config.seed`.
pub fn run_metropolis_hastings<T: Scalar>(
    ctx: &PosteriorContext<T>,
    config: &MhConfig,
) -> Result<MhTrace<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run_metropolis_hastings_with_rng(ctx, config, &mut rng)
}

/// Runs the chain drawing all randomness from `rng`.
pub fn run_metropolis_hastings_with_rng<T: Scalar, R: Rng + ?Sized>(
    ctx: &PosteriorContext<T>,
    config: &MhConfig,
    rng: &mut R,
) -> Result<MhTrace<T>> {
    config.validate_for(ctx)?;
    let functional = config.mode.has_functional();
    let n = ctx.n();
    let m = ctx.num_atoms();

    let mut found = None;
    for _ in 0..MAX_INIT_ATTEMPTS {
        let s = initial_state(n, m, config, functional, rng);
        let lp = log_integrated_posterior(&s, ctx)?;
        if lp > T::neg_infinity() {
            found = Some((s, lp));
            break;
        }
    }
    let (mut state, mut current) = found.ok_or_else(|| {
        Error::Sampler(format!(
            "no initial state with finite posterior in {MAX_INIT_ATTEMPTS} attempts"
        ))
    })?;
    let initial = state.clone();
    let initial_log_density = current;

    let total = config.total_iterations;
    let mut steps = Vec::with_capacity(total);
    let mut snapshots = Vec::with_capacity(total / SNAPSHOT_EVERY);
    for it in 1..=total {
        let target = if functional && rng.random::<bool>() {
            Target::R
        } else {
            Target::Gamma
        };
        let count = match target {
            Target::Gamma => config.flip_gamma,
            Target::R => config.flip_r,
        };
        let len = bits_mut(&mut state, target).len();
        let proposal = sample_flip_indices(len, count, rng)?;
        flip(bits_mut(&mut state, target), &proposal);
        let candidate = log_integrated_posterior(&state, ctx)?;
        // always draw the uniform so the random stream does not depend on the branch
        let u = T::sample_unit(rng);
        let accepted = candidate > T::neg_infinity() && u.ln() < candidate - current;
        if accepted {
            current = candidate;
        } else {
            flip(bits_mut(&mut state, target), &proposal);
        }
        steps.push(TraceStep {
            target,
            proposal,
            accepted,
            log_density: current,
        });
        if it % SNAPSHOT_EVERY == 0 {
            snapshots.push(state.clone());
        }
    }
    Ok(MhTrace {
        initial,
        initial_log_density,
        steps,
        snapshots,
    })
}

/// Post-burn-in inclusion frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionProbabilities {
    /// Indexed by position; entry `i` is the probability that `tau = i` is a
    /// change-point, with entry 0 the pinned first position.
    pub gamma_prob: Vec<f64>,
    /// Indexed by atom; entry 0 is the constant atom.
    pub r_prob: Vec<f64>,
}

impl InclusionProbabilities {
    /// Probability that `tau` is a change-point (`tau` in `1..n`).
    pub fn change_point(&self, tau: usize) -> f64 {
        self.gamma_prob.get(tau).copied().unwrap_or(0.0)
    }

    /// Probability for the 1-based atom index.
    pub fn atom(&self, index: usize) -> f64 {
        index
            .checked_sub(1)
            .and_then(|i| self.r_prob.get(i))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Componentwise mean of the post-burn-in states.
pub fn inclusion_probabilities<T: Scalar>(
    trace: &MhTrace<T>,
    burn_in: usize,
) -> Result<InclusionProbabilities> {
    if burn_in >= trace.len() {
        return Err(Error::invalid(format!(
            "burn-in {burn_in} leaves no iterations out of {}",
            trace.len()
        )));
    }
    let mut g = vec![0usize; trace.initial.gamma.len()];
    let mut r = vec![0usize; trace.initial.r.len()];
    trace.for_each_state(|i, s| {
        if i > burn_in {
            for (c, &b) in g.iter_mut().zip(&s.gamma) {
                *c += usize::from(b);
            }
            for (c, &b) in r.iter_mut().zip(&s.r) {
                *c += usize::from(b);
            }
        }
    });
    let kept = (trace.len() - burn_in) as f64;
    Ok(InclusionProbabilities {
        gamma_prob: g.into_iter().map(|c| c as f64 / kept).collect(),
        r_prob: r.into_iter().map(|c| c as f64 / kept).collect(),
    })
}

/// Keeps every component whose probability strictly exceeds `threshold`.
pub fn select_median_probability_model(
    probs: &InclusionProbabilities,
    threshold: f64,
) -> Result<LatentState> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let pick = |p: &[f64]| -> Vec<bool> {
        p.iter()
            .enumerate()
            .map(|(i, &x)| i == 0 || x > threshold)
            .collect()
    };
    Ok(LatentState {
        gamma: pick(&probs.gamma_prob),
        r: pick(&probs.r_prob),
    })
}
