// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-stage fit: model search on the collapsed posterior, then Gibbs
//! estimation on the selected model.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gibbs::{run_gibbs, FitResult, GibbsConfig};
use crate::mh::{
    inclusion_probabilities, run_metropolis_hastings, select_median_probability_model,
    BlockAcceptance, InclusionProbabilities, MhConfig, MhTrace, ACCEPTANCE_BLOCK,
};
use crate::posterior::{LatentState, PosteriorContext};
use crate::scalar::Scalar;

/// Default inclusion threshold (median probability model).
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub mh: MhConfig,
    pub gibbs: GibbsConfig,
    pub threshold: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            mh: MhConfig::default(),
            gibbs: GibbsConfig {
                seed: 1,
                ..GibbsConfig::default()
            },
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Output of the model-search stage.
#[derive(Clone, Debug)]
pub struct Selection<T> {
    pub trace: MhTrace<T>,
    pub inclusion: InclusionProbabilities,
    pub model: LatentState,
    pub acceptance: Vec<BlockAcceptance>,
}

/// Output of both stages.
#[derive(Clone, Debug)]
pub struct FitOutcome<T> {
    pub selection: Selection<T>,
    pub fit: FitResult<T>,
}

/// Runs the sampler and thresholds the inclusion probabilities.
pub fn select_model<T: Scalar>(
    ctx: &PosteriorContext<T>,
    mh: &MhConfig,
    threshold: f64,
) -> Result<Selection<T>> {
    let trace = run_metropolis_hastings(ctx, mh)?;
    let inclusion = inclusion_probabilities(&trace, mh.burn_in)?;
    let model = select_median_probability_model(&inclusion, threshold)?;
    let acceptance = trace.acceptance_blocks(ACCEPTANCE_BLOCK);
    Ok(Selection {
        trace,
        inclusion,
        model,
        acceptance,
    })
}

/// Model search followed by Gibbs estimation on the selected model.
pub fn fit<T: Scalar>(ctx: &PosteriorContext<T>, settings: &FitSettings) -> Result<FitOutcome<T>> {
    let selection = select_model(ctx, &settings.mh, settings.threshold)?;
    let mut fit = run_gibbs(ctx, &selection.model, &settings.gibbs)?;
    fit.inclusion = Some(selection.inclusion.clone());
    Ok(FitOutcome { selection, fit })
}
