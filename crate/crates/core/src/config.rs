// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flat run configuration and named presets.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, DictionaryPreset, LocalFamily};
use crate::error::{Error, Result};
use crate::gibbs::GibbsConfig;
use crate::mh::MhConfig;
use crate::model::TimeSeries;
use crate::pipeline::FitSettings;
use crate::posterior::{Hyperparameters, Mode};

/// Number of named sensitivity presets.
pub const SENSITIVITY_RUNS: usize = 21;

/// Dictionary selector for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryKind {
    /// Simulation dictionary with one indicator per time.
    #[default]
    Point100,
    /// Simulation dictionary with 128 scaled Haar atoms.
    Haar128,
    /// Constant plus Fourier pairs whose period is at least `period_floor`.
    Fourier,
    /// Constant, `t`, `t^2` and ten Fourier pairs.
    Exchange,
    /// Columns read from `dictionary_file`.
    Custom,
}

impl std::str::FromStr for DictionaryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point100" => Ok(Self::Point100),
            "haar128" => Ok(Self::Haar128),
            "fourier" => Ok(Self::Fourier),
            "exchange" => Ok(Self::Exchange),
            "custom" => Ok(Self::Custom),
            other => Err(Error::Config(format!("unknown dictionary '{other}'"))),
        }
    }
}

/// Everything a fit needs, as flat keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub c1: f64,
    pub c2: f64,
    /// Prior change-point probability for every position but the first.
    pub pi: f64,
    /// Prior inclusion probability for every atom but the constant.
    pub eta: f64,
    pub init_segments: usize,
    pub init_functions: usize,
    pub flip_gamma: usize,
    pub flip_r: usize,
    /// Model-search iterations, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub gibbs_iterations: usize,
    pub gibbs_burn_in: usize,
    /// Master seed; every stage seed derives from it.
    pub seed: u64,
    pub threshold: f64,
    pub dictionary: DictionaryKind,
    /// Shortest period kept by the `fourier` dictionary, in covariate units.
    pub period_floor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dictionary_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::simulation()
    }
}

impl RunConfig {
    /// Settings of the simulation study.
    pub fn simulation() -> Self {
        Self {
            mode: Mode::SemiParametric,
            c1: 50.0,
            c2: 50.0,
            pi: 0.01,
            eta: 0.01,
            init_segments: 3,
            init_functions: 3,
            flip_gamma: 2,
            flip_r: 2,
            iterations: 20_000,
            burn_in: 5_000,
            gibbs_iterations: 20_000,
            gibbs_burn_in: 5_000,
            seed: 0,
            threshold: 0.5,
            dictionary: DictionaryKind::Point100,
            period_floor: 56.0,
            dictionary_file: None,
            input: None,
            events: None,
            output: None,
        }
    }

    /// Longer chains and single flips, for real series.
    pub fn application() -> Self {
        Self {
            init_segments: 5,
            init_functions: 5,
            flip_gamma: 1,
            flip_r: 1,
            iterations: 100_000,
            burn_in: 30_000,
            gibbs_iterations: 100_000,
            gibbs_burn_in: 50_000,
            dictionary: DictionaryKind::Fourier,
            ..Self::simulation()
        }
    }

    /// Sensitivity preset `run` (1-based): one parameter varied per group of three.
    pub fn sensitivity(run: usize) -> Result<Self> {
        let mut c = Self::simulation();
        match run {
            1..=3 => c.c1 = [50.0, 10.0, 500.0][run - 1],
            4..=6 => c.init_segments = [1, 3, 10][run - 4],
            7..=9 => {
                c.init_functions = [1, 3, 10][run - 7];
                c.flip_gamma = 3;
            }
            10..=12 => c.flip_gamma = [1, 2, 5][run - 10],
            13..=15 => c.flip_r = [1, 2, 5][run - 13],
            16..=18 => c.pi = [1.0 / 20.0, 1.0 / 100.0, 1.0 / 500.0][run - 16],
            19..=21 => c.eta = [1.0 / 20.0, 1.0 / 100.0, 1.0 / 500.0][run - 19],
            _ => {
                return Err(Error::Config(format!(
                    "sensitivity run must be in 1..={SENSITIVITY_RUNS}, got {run}"
                )))
            }
        }
        c.c2 = c.c1;
        Ok(c)
    }

    /// Looks up `simulation`, `application` or `run<k>`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "simulation" | "default" => Ok(Self::simulation()),
            "application" => Ok(Self::application()),
            _ => match name.strip_prefix("run").and_then(|k| k.parse().ok()) {
                Some(k) => Self::sensitivity(k),
                None => Err(Error::Config(format!("unknown preset '{name}'"))),
            },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1.is_finite()) || !(self.c2 > 0.0 && self.c2.is_finite()) {
            return Err(Error::Config("c1 and c2 must be positive".into()));
        }
        for (name, p) in [("pi", self.pi), ("eta", self.eta)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must lie in (0, 1)".into()));
        }
        if self.dictionary == DictionaryKind::Fourier && !(self.period_floor > 0.0) {
            return Err(Error::Config("period_floor must be positive".into()));
        }
        if self.dictionary == DictionaryKind::Custom && self.dictionary_file.is_none() {
            return Err(Error::Config(
                "custom dictionary needs dictionary_file".into(),
            ));
        }
        self.mh_config().validate()?;
        self.gibbs_config().validate()
    }

    pub fn mh_config(&self) -> MhConfig {
        MhConfig {
            total_iterations: self.iterations,
            burn_in: self.burn_in,
            flip_gamma: self.flip_gamma,
            flip_r: self.flip_r,
            init_segments: self.init_segments,
            init_functions: self.init_functions,
            seed: derive_seed(self.seed, 0),
            mode: self.mode,
        }
    }

    pub fn gibbs_config(&self) -> GibbsConfig {
        GibbsConfig {
            total_iterations: self.gibbs_iterations,
            burn_in: self.gibbs_burn_in,
            seed: derive_seed(self.seed, 1),
            ..GibbsConfig::default()
        }
    }

    pub fn fit_settings(&self) -> FitSettings {
        FitSettings {
            mh: self.mh_config(),
            gibbs: self.gibbs_config(),
            threshold: self.threshold,
        }
    }

    /// Uniform priors sized for `n` positions and `m` atoms.
    pub fn hyperparameters(&self, n: usize, m: usize) -> Hyperparameters<f64> {
        Hyperparameters::uniform(n, m, self.c1, self.c2, self.pi, self.eta)
    }

    /// Builds the preset dictionary for `series`. Custom dictionaries are read by
    /// [`crate::io::load_dictionary`].
    pub fn preset_dictionary(&self, series: &TimeSeries<f64>) -> Result<Dictionary> {
        let n = series.len();
        let preset = match self.dictionary {
            DictionaryKind::Point100 => DictionaryPreset::Simulation {
                n,
                family: LocalFamily::Point100,
            },
            DictionaryKind::Haar128 => DictionaryPreset::Simulation {
                n,
                family: LocalFamily::Haar128,
            },
            DictionaryKind::Fourier => DictionaryPreset::FourierPeriodFloor {
                span: covariate_span(series.covariate()),
                floor: self.period_floor,
            },
            DictionaryKind::Exchange => DictionaryPreset::Exchange { n },
            DictionaryKind::Custom => {
                return Err(Error::Config(
                    "custom dictionaries are loaded from dictionary_file".into(),
                ))
            }
        };
        Dictionary::from_preset(&preset)
    }
}

/// Length of the observation window, one sampling step included.
pub fn covariate_span(x: &[f64]) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    match x.len() {
        0 => 0.0,
        1 => 1.0,
        n => (hi - lo) * n as f64 / (n - 1) as f64,
    }
}

/// Independent child seed number `stream` of `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_simulation_settings() {
        let c = RunConfig::default();
        assert_eq!((c.iterations, c.burn_in), (20_000, 5_000));
        assert_eq!((c.c1, c.c2, c.pi, c.eta), (50.0, 50.0, 0.01, 0.01));
        assert_eq!((c.init_segments, c.init_functions), (3, 3));
        assert_eq!((c.flip_gamma, c.flip_r), (2, 2));
    }

    #[test]
    fn application_preset() {
        let c = RunConfig::application();
        assert_eq!((c.iterations, c.burn_in), (100_000, 30_000));
        assert_eq!((c.gibbs_iterations, c.gibbs_burn_in), (100_000, 50_000));
        assert_eq!((c.init_segments, c.flip_gamma, c.flip_r), (5, 1, 1));
    }

    #[test]
    fn sensitivity_presets() {
        for k in 1..=SENSITIVITY_RUNS {
            RunConfig::sensitivity(k).unwrap().validate().unwrap();
        }
        assert_eq!(RunConfig::sensitivity(3).unwrap().c2, 500.0);
        assert_eq!(RunConfig::sensitivity(9).unwrap().init_functions, 10);
        assert_eq!(RunConfig::sensitivity(12).unwrap().flip_gamma, 5);
        assert_eq!(RunConfig::sensitivity(18).unwrap().pi, 1.0 / 500.0);
        assert_eq!(RunConfig::preset("run20").unwrap().eta, 0.01);
        assert!(RunConfig::sensitivity(0).is_err());
        assert!(RunConfig::preset("run22").is_err());
    }

    #[test]
    fn toml_round_trip_is_idempotent() {
        let mut c = RunConfig::application();
        c.input = Some(PathBuf::from("data/series.csv"));
        c.mode = Mode::Parametric;
        let text = c.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml_string().unwrap(), text);
    }

    #[test]
    fn partial_file_takes_defaults() {
        let c = RunConfig::from_toml_str("c1 = 10.0\nc2 = 10.0\nmode = \"p\"\n").unwrap();
        assert_eq!(c.c1, 10.0);
        assert_eq!(c.mode, Mode::Parametric);
        assert_eq!(c.iterations, 20_000);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml_str("burn_in = 30000").is_err());
        assert!(RunConfig::from_toml_str("c1 = -1.0").is_err());
        assert!(RunConfig::from_toml_str("colour = 3").is_err());
        assert!(RunConfig::from_toml_str("dictionary = \"custom\"").is_err());
    }

    #[test]
    fn seeds_are_split() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        let c = RunConfig::default();
        assert_ne!(c.mh_config().seed, c.gibbs_config().seed);
    }

    #[test]
    fn span_of_unit_grid() {
        let x: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(covariate_span(&x), 100.0);
    }
}
