// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::collections::HashMap;

use common::*;
use dictseg::config::RunConfig;
use dictseg::dictionary::{Atom, Dictionary, DictionaryPreset, LocalFamily};
use dictseg::gibbs::{run_gibbs, GibbsConfig};
use dictseg::mh::{
    inclusion_probabilities, propose_flip, run_metropolis_hastings,
    select_median_probability_model, MhConfig, Target,
};
use dictseg::model::TimeSeries;
use dictseg::pipeline::fit;
use dictseg::posterior::{
    log_integrated_posterior, Hyperparameters, LatentState, Mode, PosteriorContext,
};
use dictseg::sim::particular_series;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_ctx() -> PosteriorContext<f64> {
    let y = [0.1, -0.3, 0.2, 1.5, 2.1, 1.8, 2.3, 2.0];
    let dict = Dictionary::new(vec![
        Atom::Constant,
        Atom::Cosine {
            cycles: 1.0,
            period: 8.0,
        },
        Atom::PointIndicator { location: 3.0 },
    ])
    .unwrap();
    let series = TimeSeries::new(y.to_vec()).unwrap();
    let f = dict.evaluate(series.covariate()).unwrap();
    PosteriorContext::semi_parametric(
        series,
        f,
        Hyperparameters::uniform(8, 3, 5.0, 5.0, 0.3, 0.4),
    )
    .unwrap()
}

#[test]
fn chain_marginals_match_enumeration() {
    let ctx = small_ctx();
    let states = enumerate_states(8, 3);
    let logs: Vec<f64> = states
        .iter()
        .map(|s| log_integrated_posterior(s, &ctx).unwrap())
        .collect();
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut exact = [0.0; 8];
    for (s, w) in states.iter().zip(&weights) {
        for tau in s.change_points() {
            exact[tau] += w / z;
        }
    }
    let config = MhConfig {
        total_iterations: 200_000,
        burn_in: 5_000,
        flip_gamma: 1,
        flip_r: 1,
        init_segments: 1,
        init_functions: 1,
        seed: 21,
        mode: Mode::SemiParametric,
    };
    let trace = run_metropolis_hastings(&ctx, &config).unwrap();
    let inc = inclusion_probabilities(&trace, config.burn_in).unwrap();
    for (tau, want) in exact.iter().enumerate().skip(1) {
        let got = inc.change_point(tau);
        assert!((got - want).abs() < 0.03, "tau {tau}: {got} vs {want}");
    }
}

#[test]
fn exact_k_flips_preserve_parity() {
    let ctx = small_ctx();
    let config = MhConfig {
        total_iterations: 5_000,
        burn_in: 0,
        flip_gamma: 2,
        flip_r: 2,
        init_segments: 2,
        init_functions: 2,
        seed: 4,
        mode: Mode::SemiParametric,
    };
    let trace = run_metropolis_hastings(&ctx, &config).unwrap();
    let mut parities = std::collections::HashSet::new();
    trace.for_each_state(|_, s| {
        parities.insert((s.d_gamma() % 2, s.d_r() % 2));
    });
    assert_eq!(parities.len(), 1);
}

#[test]
fn proposals_touch_exactly_k_free_bits() {
    let base = LatentState::from_indices(20, 5, &[1, 4, 9], &[1, 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut seen = HashMap::new();
    for _ in 0..2_000 {
        let next = propose_flip(&base, Target::Gamma, 3, &mut rng).unwrap();
        assert!(next.gamma[0]);
        let diff = base
            .gamma
            .iter()
            .zip(&next.gamma)
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(diff, 3);
        assert_eq!(next.r, base.r);
        *seen.entry(next.gamma).or_insert(0) += 1;
    }
    assert!(seen.len() > 500);
    assert!(propose_flip(&base, Target::R, 5, &mut rng).is_err());
}

#[test]
fn median_model_thresholds_probabilities() {
    let ctx = small_ctx();
    let trace = run_metropolis_hastings(
        &ctx,
        &MhConfig {
            total_iterations: 3_000,
            burn_in: 500,
            flip_gamma: 1,
            flip_r: 1,
            init_segments: 1,
            init_functions: 1,
            seed: 8,
            mode: Mode::SemiParametric,
        },
    )
    .unwrap();
    let inc = inclusion_probabilities(&trace, 500).unwrap();
    let model = select_median_probability_model(&inc, 0.5).unwrap();
    assert!(model.gamma[0] && model.r[0]);
    for tau in 1..8 {
        assert_eq!(
            model.change_points().contains(&tau),
            inc.change_point(tau) > 0.5
        );
    }
    for j in 2..=3 {
        assert_eq!(model.r_indices().contains(&j), inc.atom(j) > 0.5);
    }
}

fn particular_ctx(sigma: f64, seed: u64, dict: &Dictionary) -> PosteriorContext<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (series, _) = particular_series(sigma, &mut rng).unwrap();
    let f = dict.evaluate(series.covariate()).unwrap();
    let hyper = RunConfig::simulation().hyperparameters(100, dict.len());
    PosteriorContext::semi_parametric(series, f, hyper).unwrap()
}

fn point100() -> Dictionary {
    Dictionary::from_preset(&DictionaryPreset::Simulation {
        n: 100,
        family: LocalFamily::Point100,
    })
    .unwrap()
}

#[test]
fn gibbs_recovers_identified_parts() {
    let dict = point100();
    let ctx = particular_ctx(0.1, 5, &dict);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (_, truth) = particular_series::<f64, _>(0.1, &mut rng).unwrap();
    let mut atoms = vec![1];
    atoms.extend(truth.true_atom_indices.iter().copied().filter(|&j| j != 1));
    let sel = LatentState::from_indices(100, dict.len(), &[1, 8, 19, 37], &atoms).unwrap();
    let res = run_gibbs(&ctx, &sel, &RunConfig::simulation().gibbs_config()).unwrap();
    let mu_true = truth.segmentation.mean_profile(100);
    let center = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| x - m).collect::<Vec<_>>()
    };
    let rmse = |a: &[f64], b: &[f64]| {
        (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    };
    let sum_hat: Vec<f64> = res
        .mu_hat
        .iter()
        .zip(&res.f_hat)
        .map(|(a, b)| a + b)
        .collect();
    let sum_true: Vec<f64> = mu_true
        .iter()
        .zip(&truth.f_true)
        .map(|(a, b)| a + b)
        .collect();
    assert!(rmse(&sum_hat, &sum_true) < 0.1);
    assert!(rmse(&center(&res.mu_hat), &center(&mu_true)) < 0.15);
    assert!(rmse(&center(&res.f_hat), &center(&truth.f_true)) < 0.15);
    assert_eq!(res.k_hat, 4);
    assert_eq!(res.segmentation_hat.change_points, vec![7, 18, 36]);
}

#[test]
fn gibbs_fit_ignores_atom_order() {
    let dict = point100();
    let ctx = particular_ctx(0.3, 6, &dict);
    let chosen = [1usize, 11, 51, 61, 110];
    let sel = LatentState::from_indices(100, dict.len(), &[1, 8, 19, 37], &chosen).unwrap();
    let config = GibbsConfig {
        total_iterations: 40_000,
        burn_in: 5_000,
        seed: 3,
        ..GibbsConfig::default()
    };
    let a = run_gibbs(&ctx, &sel, &config).unwrap();

    // same atoms listed in reverse after the constant
    let mut order: Vec<usize> = vec![0];
    order.extend(chosen[1..].iter().rev().map(|j| j - 1));
    order.extend((0..dict.len()).filter(|i| !chosen.contains(&(i + 1))));
    let shuffled =
        Dictionary::new(order.iter().map(|&i| dict.atoms()[i].clone()).collect()).unwrap();
    let ctx2 = particular_ctx(0.3, 6, &shuffled);
    let sel2 =
        LatentState::from_indices(100, dict.len(), &[1, 8, 19, 37], &[1, 2, 3, 4, 5]).unwrap();
    let b = run_gibbs(&ctx2, &sel2, &config).unwrap();
    let gap = a
        .f_hat
        .iter()
        .zip(&b.f_hat)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(gap < 0.05, "max f_hat gap {gap}");
}

#[test]
fn fits_are_reproducible() {
    let dict = point100();
    let ctx = particular_ctx(0.5, 7, &dict);
    let config = RunConfig {
        seed: 99,
        iterations: 3_000,
        burn_in: 1_000,
        gibbs_iterations: 2_000,
        gibbs_burn_in: 500,
        ..RunConfig::simulation()
    };
    let a = fit(&ctx, &config.fit_settings()).unwrap();
    let b = fit(&ctx, &config.fit_settings()).unwrap();
    assert_eq!(a.selection.trace.to_csv(), b.selection.trace.to_csv());
    assert_eq!(a.fit, b.fit);
    let other = RunConfig {
        seed: 100,
        ..config
    };
    let c = fit(&ctx, &other.fit_settings()).unwrap();
    assert_ne!(a.selection.trace.to_csv(), c.selection.trace.to_csv());
}
