// SPDX-License-Identifier: MIT OR Apache-2.0

//! Replicated simulate-fit-score batches comparing the two modes.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, DictionaryKind, RunConfig};
use crate::dictionary::{Dictionary, DictionaryPreset, LocalFamily};
use crate::error::{Error, Result};
use crate::io::write_text;
use crate::pipeline::fit;
use crate::posterior::{Mode, PosteriorContext};
use crate::sim::{
    bias_atom_indices, functional_metrics, segmentation_metrics, simulate_series, FunctionalScores,
    SegmentationScores,
};

/// What to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub levels: Vec<f64>,
    pub replicates: usize,
    pub methods: Vec<Mode>,
    pub n: usize,
    /// Fit settings; `mode` and `seed` are overridden per replicate.
    pub config: RunConfig,
    pub master_seed: u64,
    /// Change-point matching window.
    pub tolerance: usize,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            levels: vec![0.1, 0.5, 1.0, 1.5],
            replicates: 100,
            methods: vec![Mode::SemiParametric, Mode::Parametric],
            n: 100,
            config: RunConfig::simulation(),
            master_seed: 0,
            tolerance: 0,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.levels.is_empty() || self.methods.is_empty() {
            return Err(Error::Config(
                "need at least one level and one method".into(),
            ));
        }
        if self.levels.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config(
                "noise levels must be finite and non-negative".into(),
            ));
        }
        if !matches!(
            self.config.dictionary,
            DictionaryKind::Point100 | DictionaryKind::Haar128
        ) {
            return Err(Error::Config(format!(
                "benchmarks use a simulation dictionary, not {:?}",
                self.config.dictionary
            )));
        }
        self.config.validate()
    }

    fn family(&self) -> LocalFamily {
        match self.config.dictionary {
            DictionaryKind::Haar128 => LocalFamily::Haar128,
            _ => LocalFamily::Point100,
        }
    }
}

/// Scores of one (level, method, replicate) fit. Failed fits carry `error`
/// and NaN scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub sigma: f64,
    pub method: Mode,
    pub replicate: usize,
    pub seed: u64,
    pub k_hat: f64,
    pub rmse_mu: f64,
    pub fdr_bp: f64,
    pub fnr_bp: f64,
    pub rmse_f: f64,
    pub fdr_f: f64,
    pub fnr_f: f64,
    pub sigma_hat: f64,
    pub runtime_s: f64,
    pub error: Option<String>,
}

impl BenchmarkRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Means over the successful replicates of one (level, method) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkAverage {
    pub sigma: f64,
    pub method: Mode,
    pub replicates: usize,
    pub failed: usize,
    pub k_hat: f64,
    pub rmse_mu: f64,
    pub fdr_bp: f64,
    pub fnr_bp: f64,
    pub rmse_f: f64,
    pub fdr_f: f64,
    pub fnr_f: f64,
    pub sigma_hat: f64,
    pub runtime_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub averages: Vec<BenchmarkAverage>,
}

impl BenchmarkReport {
    /// Builds the report, averaging per (level, method) in first-seen order.
    pub fn from_rows(rows: Vec<BenchmarkRow>) -> Self {
        let mut keys: Vec<(f64, Mode)> = Vec::new();
        for r in &rows {
            if !keys.iter().any(|&(s, m)| s == r.sigma && m == r.method) {
                keys.push((r.sigma, r.method));
            }
        }
        let averages = keys
            .into_iter()
            .map(|(sigma, method)| {
                let cell: Vec<&BenchmarkRow> = rows
                    .iter()
                    .filter(|r| r.sigma == sigma && r.method == method)
                    .collect();
                let ok: Vec<&&BenchmarkRow> = cell.iter().filter(|r| !r.failed()).collect();
                let mean = |f: fn(&BenchmarkRow) -> f64| {
                    if ok.is_empty() {
                        f64::NAN
                    } else {
                        ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                    }
                };
                BenchmarkAverage {
                    sigma,
                    method,
                    replicates: cell.len(),
                    failed: cell.len() - ok.len(),
                    k_hat: mean(|r| r.k_hat),
                    rmse_mu: mean(|r| r.rmse_mu),
                    fdr_bp: mean(|r| r.fdr_bp),
                    fnr_bp: mean(|r| r.fnr_bp),
                    rmse_f: mean(|r| r.rmse_f),
                    fdr_f: mean(|r| r.fdr_f),
                    fnr_f: mean(|r| r.fnr_f),
                    sigma_hat: mean(|r| r.sigma_hat),
                    runtime_s: mean(|r| r.runtime_s),
                }
            })
            .collect();
        Self { rows, averages }
    }

    pub fn average(&self, sigma: f64, method: Mode) -> Option<&BenchmarkAverage> {
        self.averages
            .iter()
            .find(|a| a.sigma == sigma && a.method == method)
    }

    /// One row per replicate.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "sigma,method,replicate,seed,k_hat,rmse_mu,fdr_bp,fnr_bp,rmse_f,fdr_f,fnr_f,sigma_hat,runtime_s,error\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.sigma,
                r.method.name(),
                r.replicate,
                r.seed,
                r.k_hat,
                r.rmse_mu,
                r.fdr_bp,
                r.fnr_bp,
                r.rmse_f,
                r.fdr_f,
                r.fnr_f,
                r.sigma_hat,
                r.runtime_s,
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
            ));
        }
        out
    }

    /// Averages keyed by level and method.
    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.averages)
            .map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        write_text(csv_path, &self.to_csv())?;
        let mut json = self.summary_json()?;
        json.push('\n');
        write_text(json_path, &json)
    }
}

struct Job {
    level: usize,
    sigma: f64,
    replicate: usize,
    seed: u64,
}

fn run_replicate(spec: &BenchmarkSpec, dict: &Dictionary, job: &Job) -> Vec<BenchmarkRow> {
    let family = spec.family();
    let blank = |method: Mode| BenchmarkRow {
        sigma: job.sigma,
        method,
        replicate: job.replicate,
        seed: job.seed,
        k_hat: f64::NAN,
        rmse_mu: f64::NAN,
        fdr_bp: f64::NAN,
        fnr_bp: f64::NAN,
        rmse_f: f64::NAN,
        fdr_f: f64::NAN,
        fnr_f: f64::NAN,
        sigma_hat: f64::NAN,
        runtime_s: 0.0,
        error: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let (series, mut truth) = match simulate_series::<f64, _>(spec.n, job.sigma, &mut rng) {
        Ok(v) => v,
        Err(e) => {
            return spec
                .methods
                .iter()
                .map(|&m| BenchmarkRow {
                    error: Some(e.to_string()),
                    ..blank(m)
                })
                .collect()
        }
    };
    truth.true_atom_indices = bias_atom_indices(spec.n, family);

    spec.methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let mut config = spec.config.clone();
            config.mode = method;
            config.seed = derive_seed(job.seed, 1);
            let scored = (|| -> Result<(usize, SegmentationScores, FunctionalScores, f64)> {
                let hyper = config.hyperparameters(spec.n, dict.len());
                let ctx = match method {
                    Mode::SemiParametric => {
                        let design = dict.evaluate(series.covariate())?;
                        PosteriorContext::semi_parametric(series.clone(), design, hyper)?
                    }
                    Mode::Parametric => PosteriorContext::parametric(series.clone(), hyper)?,
                };
                let out = fit(&ctx, &config.fit_settings())?;
                let seg = segmentation_metrics(
                    &out.fit.segmentation_hat,
                    &truth.segmentation,
                    spec.n,
                    spec.tolerance,
                );
                let atoms: BTreeSet<usize> = out.fit.atoms.iter().copied().collect();
                let func = functional_metrics(&out.fit.f_hat, &atoms, &truth)?;
                Ok((out.fit.k_hat, seg, func, out.fit.sigma_hat))
            })();
            let runtime_s = start.elapsed().as_secs_f64();
            match scored {
                Ok((k_hat, seg, func, sigma_hat)) => BenchmarkRow {
                    k_hat: k_hat as f64,
                    rmse_mu: seg.rmse_mu,
                    fdr_bp: seg.fdr_bp,
                    fnr_bp: seg.fnr_bp,
                    rmse_f: func.rmse_f,
                    fdr_f: func.fdr_f,
                    fnr_f: func.fnr_f,
                    sigma_hat,
                    runtime_s,
                    ..blank(method)
                },
                Err(e) => BenchmarkRow {
                    runtime_s,
                    error: Some(e.to_string()),
                    ..blank(method)
                },
            }
        })
        .collect()
}

/// Runs every (level, replicate) on `workers` threads (0: rayon default).
///
/// Replicate `i` at level `l` uses the seed `derive_seed(derive_seed(master, l), i)`
/// for its series; both methods see the same series.
pub fn run_benchmark(spec: &BenchmarkSpec, workers: usize) -> Result<BenchmarkReport> {
    spec.validate()?;
    let dict = Dictionary::from_preset(&DictionaryPreset::Simulation {
        n: spec.n,
        family: spec.family(),
    })?;
    let jobs: Vec<Job> = spec
        .levels
        .iter()
        .enumerate()
        .flat_map(|(level, &sigma)| {
            let level_seed = derive_seed(spec.master_seed, level as u64);
            (0..spec.replicates).map(move |replicate| Job {
                level,
                sigma,
                replicate,
                seed: derive_seed(level_seed, replicate as u64),
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut rows: Vec<(usize, Vec<BenchmarkRow>)> = pool.install(|| {
        jobs.par_iter()
            .map(|job| (job.level, run_replicate(spec, &dict, job)))
            .collect()
    });
    rows.sort_by_key(|(level, r)| (*level, r.first().map_or(0, |x| x.replicate)));
    // methods grouped within a level so averages come out level-major
    let mut ordered = Vec::new();
    for level in 0..spec.levels.len() {
        for &method in &spec.methods {
            for (_, reps) in rows.iter().filter(|(l, _)| *l == level) {
                ordered.extend(reps.iter().filter(|r| r.method == method).cloned());
            }
        }
    }
    Ok(BenchmarkReport::from_rows(ordered))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> BenchmarkSpec {
        let mut config = RunConfig::simulation();
        config.iterations = 600;
        config.burn_in = 100;
        config.gibbs_iterations = 300;
        config.gibbs_burn_in = 100;
        BenchmarkSpec {
            levels: vec![0.1, 1.0],
            replicates: 3,
            n: 40,
            config,
            master_seed: 11,
            ..BenchmarkSpec::default()
        }
    }

    #[test]
    fn averages_recompute_from_rows() {
        let report = run_benchmark(&small_spec(), 2).unwrap();
        assert_eq!(report.rows.len(), 12);
        assert_eq!(report.averages.len(), 4);
        for a in &report.averages {
            let cell: Vec<_> = report
                .rows
                .iter()
                .filter(|r| r.sigma == a.sigma && r.method == a.method)
                .collect();
            let mean = cell.iter().map(|r| r.fdr_bp).sum::<f64>() / cell.len() as f64;
            assert_eq!(a.fdr_bp, mean);
            assert_eq!(a.failed, 0);
        }
        for r in &report.rows {
            for v in [r.fdr_bp, r.fnr_bp, r.fdr_f, r.fnr_f] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let strip = |r: BenchmarkReport| {
            r.rows
                .into_iter()
                .map(|x| BenchmarkRow {
                    runtime_s: 0.0,
                    ..x
                })
                .collect::<Vec<_>>()
        };
        let a = strip(run_benchmark(&small_spec(), 1).unwrap());
        let b = strip(run_benchmark(&small_spec(), 3).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn failures_become_rows() {
        let mut spec = small_spec();
        spec.n = 30;
        spec.config.init_segments = 40;
        spec.levels = vec![0.5];
        let report = run_benchmark(&spec, 1).unwrap();
        assert!(report.rows.iter().all(BenchmarkRow::failed));
        assert_eq!(report.averages[0].failed, 3);
        assert!(report.to_csv().lines().count() == 7);
    }

    #[test]
    fn rejects_empty_spec() {
        let spec = BenchmarkSpec {
            replicates: 0,
            ..small_spec()
        };
        assert!(run_benchmark(&spec, 1).is_err());
    }
}
