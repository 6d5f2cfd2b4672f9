// SPDX-License-Identifier: MIT OR Apache-2.0

//! Series, event-prior and dictionary ingestion; result serialization.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dictionary::{Atom, Dictionary};
use crate::error::{Error, Result};
use crate::gibbs::FitResult;
use crate::mh::{BlockAcceptance, InclusionProbabilities, MhTrace};
use crate::model::{Segmentation, TimeSeries};
use crate::posterior::{Hyperparameters, LatentState, Mode};
use crate::sim::SeriesTruth;

fn parse_err(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

fn read_records(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(path, 0, format!("{other:?}")),
        })?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn parse_value(path: &Path, row: usize, field: &str) -> Result<f64> {
    if field.is_empty() {
        return Err(parse_err(path, row, "missing value"));
    }
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, row, format!("'{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, row, format!("non-finite value '{field}'")));
    }
    Ok(v)
}

/// Reads a series from a CSV of `value` or `label,value` rows.
///
/// A first row whose value field is not numeric is taken as a header. The
/// covariate is `1..=n`.
pub fn load_series(path: &Path) -> Result<TimeSeries<f64>> {
    let records = read_records(path)?;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (k, (row, rec)) in records.iter().enumerate() {
        let w = *width.get_or_insert(rec.len());
        if !(1..=2).contains(&rec.len()) || rec.len() != w {
            return Err(parse_err(
                path,
                *row,
                format!(
                    "expected {w} column(s) of (label?, value), found {}",
                    rec.len()
                ),
            ));
        }
        let field = &rec[w - 1];
        if k == 0 && !field.is_empty() && field.parse::<f64>().is_err() {
            width = None;
            continue;
        }
        values.push(parse_value(path, *row, field)?);
        if w == 2 {
            labels.push(rec[0].to_string());
        }
    }
    if values.is_empty() {
        return Err(parse_err(path, 0, "no observations"));
    }
    let series = TimeSeries::new(values)?;
    if labels.is_empty() {
        Ok(series)
    } else {
        series.with_labels(labels)
    }
}

/// Writes `value` (or `label,value`) rows.
pub fn write_series(path: &Path, series: &TimeSeries<f64>) -> Result<()> {
    let mut out = String::new();
    match series.labels() {
        Some(labels) => {
            out.push_str("label,value\n");
            for (l, v) in labels.iter().zip(series.values()) {
                out.push_str(&format!("{l},{v}\n"));
            }
        }
        None => {
            out.push_str("value\n");
            for v in series.values() {
                out.push_str(&format!("{v}\n"));
            }
        }
    }
    write_text(path, &out)
}

/// Where an event sits: a 1-based position or a series label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKey {
    Position(usize),
    Label(String),
}

/// Known events and the prior change-point probability at each.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventPriorFile {
    pub rows: Vec<(EventKey, f64)>,
}

impl EventPriorFile {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Reads `event,probability` rows; a non-numeric probability in row one marks a header.
pub fn load_event_priors(path: &Path) -> Result<EventPriorFile> {
    let mut rows = Vec::new();
    for (k, (row, rec)) in read_records(path)?.into_iter().enumerate() {
        if rec.len() != 2 {
            return Err(parse_err(
                path,
                row,
                "expected two columns: event,probability",
            ));
        }
        if k == 0 && rec[1].parse::<f64>().is_err() {
            continue;
        }
        let p = parse_value(path, row, &rec[1])?;
        if !(p > 0.0 && p < 1.0) {
            return Err(parse_err(
                path,
                row,
                format!("probability {p} outside (0, 1)"),
            ));
        }
        let key = match rec[0].parse::<usize>() {
            Ok(pos) => EventKey::Position(pos),
            Err(_) => EventKey::Label(rec[0].to_string()),
        };
        rows.push((key, p));
    }
    Ok(EventPriorFile { rows })
}

fn resolve_event(key: &EventKey, series: &TimeSeries<f64>) -> Result<usize> {
    let by_label = |label: &str| {
        series
            .labels()
            .and_then(|ls| ls.iter().position(|l| l == label))
            .map(|i| i + 1)
    };
    match key {
        EventKey::Position(p) => by_label(&p.to_string())
            .or_else(|| (1..=series.len()).contains(p).then_some(*p))
            .ok_or(Error::PositionOutOfRange {
                position: *p,
                n: series.len(),
            }),
        EventKey::Label(l) => by_label(l)
            .ok_or_else(|| Error::invalid(format!("event label '{l}' not in the series"))),
    }
}

/// Overrides `pi` at the event positions. A label matching a series label wins
/// over its numeric reading.
pub fn apply_event_priors(
    base: &Hyperparameters<f64>,
    events: &EventPriorFile,
    series: &TimeSeries<f64>,
) -> Result<Hyperparameters<f64>> {
    if base.pi.len() != series.len() {
        return Err(Error::dims(format!(
            "pi has {} entries for a series of length {}",
            base.pi.len(),
            series.len()
        )));
    }
    let mut out = base.clone();
    let mut seen = BTreeSet::new();
    for (key, p) in &events.rows {
        if !(*p > 0.0 && *p < 1.0) {
            return Err(Error::invalid(format!(
                "event probability {p} outside (0, 1)"
            )));
        }
        let pos = resolve_event(key, series)?;
        if pos == 1 {
            return Err(Error::invalid("position 1 is always a segment start"));
        }
        if !seen.insert(pos) {
            return Err(Error::invalid(format!("duplicate event at position {pos}")));
        }
        out.pi[pos - 1] = *p;
    }
    Ok(out)
}

/// Reads an `n x M` design with a header row of labels. Column 1 becomes the
/// constant atom whatever its content.
pub fn load_dictionary(path: &Path, n: usize) -> Result<Dictionary> {
    let records = read_records(path)?;
    let Some(((_, header), body)) = records.split_first() else {
        return Err(parse_err(path, 0, "empty dictionary file"));
    };
    let m = header.len();
    let mut columns = vec![Vec::with_capacity(n); m];
    for (row, rec) in body {
        if rec.len() != m {
            return Err(parse_err(
                path,
                *row,
                format!("expected {m} columns, found {}", rec.len()),
            ));
        }
        for (col, field) in columns.iter_mut().zip(rec.iter()) {
            col.push(parse_value(path, *row, field)?);
        }
    }
    if body.len() != n {
        return Err(Error::dims(format!(
            "dictionary has {} rows for a series of length {n}",
            body.len()
        )));
    }
    let mut atoms = vec![Atom::Constant];
    for (label, values) in header.iter().zip(columns).skip(1) {
        atoms.push(Atom::Custom {
            label: label.to_string(),
            values,
        });
    }
    Dictionary::new(atoms)
}

/// Writes the evaluated design with a label header.
pub fn write_design(path: &Path, dictionary: &Dictionary, covariate: &[f64]) -> Result<()> {
    let design = dictionary.evaluate(covariate)?;
    let labels: Vec<String> = dictionary
        .atoms()
        .iter()
        .map(|a| csv_field(&a.to_string()))
        .collect();
    let mut out = labels.join(",");
    out.push('\n');
    let f = design.matrix();
    for i in 0..f.rows() {
        let row: Vec<String> = f.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

/// Acceptance rates over a whole run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    pub overall: f64,
    /// Overall rate per block of iterations.
    pub blocks: Vec<f64>,
}

impl AcceptanceSummary {
    pub fn from_blocks(blocks: &[BlockAcceptance], mode: Mode) -> Self {
        let total = blocks.iter().fold(
            BlockAcceptance {
                start: 0,
                len: 0,
                gamma_proposed: 0,
                gamma_accepted: 0,
                r_proposed: 0,
                r_accepted: 0,
            },
            |mut t, b| {
                t.len += b.len;
                t.gamma_proposed += b.gamma_proposed;
                t.gamma_accepted += b.gamma_accepted;
                t.r_proposed += b.r_proposed;
                t.r_accepted += b.r_accepted;
                t
            },
        );
        Self {
            gamma: total.gamma_rate(),
            r: mode.has_functional().then(|| total.r_rate()),
            overall: total.overall_rate(),
            blocks: blocks.iter().map(BlockAcceptance::overall_rate).collect(),
        }
    }
}

/// One selected atom in a summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomSummary {
    pub index: usize,
    pub label: String,
    pub coefficient: f64,
}

/// JSON summary of a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub mode: Mode,
    pub n: usize,
    pub k_hat: usize,
    pub change_points: Vec<usize>,
    /// Label of the first observation after each change-point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change_point_labels: Option<Vec<String>>,
    pub segment_means: Vec<f64>,
    pub sigma_hat: f64,
    pub sigma2_hat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<AtomSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<AcceptanceSummary>,
}

impl FitSummary {
    pub fn new(
        fit: &FitResult<f64>,
        series: &TimeSeries<f64>,
        dictionary: Option<&Dictionary>,
        acceptance: Option<&[BlockAcceptance]>,
    ) -> Result<Self> {
        let seg = &fit.segmentation_hat;
        let atoms = if fit.mode.has_functional() {
            let mut out = Vec::new();
            for (&index, &coefficient) in fit.atoms.iter().zip(&fit.lambda_hat) {
                let label = match dictionary {
                    Some(d) => d.atom_label(index)?,
                    None => format!("atom {index}"),
                };
                out.push(AtomSummary {
                    index,
                    label,
                    coefficient,
                });
            }
            Some(out)
        } else {
            None
        };
        Ok(Self {
            mode: fit.mode,
            n: series.len(),
            k_hat: fit.k_hat,
            change_points: seg.change_points.clone(),
            change_point_labels: series
                .labels()
                .map(|ls| seg.change_points.iter().map(|&t| ls[t].clone()).collect()),
            segment_means: seg.means.clone(),
            sigma_hat: fit.sigma_hat,
            sigma2_hat: fit.sigma2_hat,
            atoms,
            acceptance: acceptance.map(|b| AcceptanceSummary::from_blocks(b, fit.mode)),
        })
    }

    pub fn segmentation(&self) -> Result<Segmentation<f64>> {
        Segmentation::new(
            self.change_points.clone(),
            self.segment_means.clone(),
            self.n,
        )
    }

    /// Selected atom indices, the constant included.
    pub fn atom_indices(&self) -> Vec<usize> {
        self.atoms.iter().flatten().map(|a| a.index).collect()
    }
}

/// Files written by [`write_results`].
#[derive(Clone, Debug, PartialEq)]
pub struct ResultPaths {
    pub inclusion: Option<PathBuf>,
    pub reconstruction: PathBuf,
    pub summary: PathBuf,
}

pub const INCLUSION_FILE: &str = "inclusion.csv";
pub const RECONSTRUCTION_FILE: &str = "reconstruction.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SELECTION_FILE: &str = "selection.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const DRAWS_FILE: &str = "draws.csv";

fn inclusion_table(
    probs: &InclusionProbabilities,
    model: &LatentState,
    mode: Mode,
    series: &TimeSeries<f64>,
    dictionary: Option<&Dictionary>,
) -> Result<String> {
    let mut out = String::from("kind,index,label,probability,selected\n");
    for (tau, (&p, &sel)) in probs
        .gamma_prob
        .iter()
        .zip(&model.gamma)
        .enumerate()
        .skip(1)
    {
        let label = series
            .labels()
            .map_or_else(|| tau.to_string(), |ls| ls[tau].clone());
        out.push_str(&format!(
            "change_point,{tau},{},{p},{}\n",
            csv_field(&label),
            u8::from(sel)
        ));
    }
    if mode.has_functional() {
        for (i, (&p, &sel)) in probs.r_prob.iter().zip(&model.r).enumerate() {
            let index = i + 1;
            let label = match dictionary {
                Some(d) => d.atom_label(index)?,
                None => format!("atom {index}"),
            };
            out.push_str(&format!(
                "atom,{index},{},{p},{}\n",
                csv_field(&label),
                u8::from(sel)
            ));
        }
    }
    Ok(out)
}

fn reconstruction_table(fit: &FitResult<f64>, series: &TimeSeries<f64>) -> String {
    let functional = fit.mode.has_functional();
    let mut out = String::from(if functional {
        "t,y,mu_hat,f_hat,fitted\n"
    } else {
        "t,y,mu_hat,fitted\n"
    });
    for i in 0..series.len() {
        let (t, y, mu) = (series.covariate()[i], series.values()[i], fit.mu_hat[i]);
        if functional {
            let f = fit.f_hat[i];
            out.push_str(&format!("{t},{y},{mu},{f},{}\n", mu + f));
        } else {
            out.push_str(&format!("{t},{y},{mu},{mu}\n"));
        }
    }
    out
}

/// Writes the inclusion table (when probabilities are known), the
/// reconstruction table and the JSON summary into `dir`.
pub fn write_results(
    dir: &Path,
    fit: &FitResult<f64>,
    series: &TimeSeries<f64>,
    dictionary: Option<&Dictionary>,
    acceptance: Option<&[BlockAcceptance]>,
) -> Result<ResultPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let inclusion = match &fit.inclusion {
        Some(probs) => {
            let path = dir.join(INCLUSION_FILE);
            let table = inclusion_table(probs, &fit.selection, fit.mode, series, dictionary)?;
            write_text(&path, &table)?;
            Some(path)
        }
        None => None,
    };
    let reconstruction = dir.join(RECONSTRUCTION_FILE);
    write_text(&reconstruction, &reconstruction_table(fit, series))?;
    let summary = dir.join(SUMMARY_FILE);
    write_json(
        &summary,
        &FitSummary::new(fit, series, dictionary, acceptance)?,
    )?;
    if let Some(draws) = &fit.draws {
        write_text(&dir.join(DRAWS_FILE), &draws.to_csv())?;
    }
    Ok(ResultPaths {
        inclusion,
        reconstruction,
        summary,
    })
}

pub fn read_summary(path: &Path) -> Result<FitSummary> {
    read_json(path)
}

/// Reads the `f_hat` column of a reconstruction table; zeros when absent.
pub fn read_f_hat(path: &Path) -> Result<Vec<f64>> {
    let records = read_records(path)?;
    let Some(((_, header), body)) = records.split_first() else {
        return Err(parse_err(path, 0, "empty reconstruction table"));
    };
    let col = header.iter().position(|h| h == "f_hat");
    body.iter()
        .map(|(row, rec)| match col {
            Some(c) => parse_value(path, *row, rec.get(c).unwrap_or("")),
            None => Ok(0.0),
        })
        .collect()
}

/// Outcome of the model-search stage, enough to resume with Gibbs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub mode: Mode,
    pub n: usize,
    pub num_atoms: usize,
    pub threshold: f64,
    /// Selected change-points `tau`.
    pub change_points: Vec<usize>,
    /// Selected atoms, 1-based, the constant included.
    pub atoms: Vec<usize>,
    pub inclusion: InclusionProbabilities,
    pub acceptance: Vec<BlockAcceptance>,
}

impl SelectionFile {
    pub fn new(
        mode: Mode,
        threshold: f64,
        model: &LatentState,
        inclusion: &InclusionProbabilities,
        acceptance: &[BlockAcceptance],
    ) -> Self {
        Self {
            mode,
            n: model.gamma.len(),
            num_atoms: model.r.len(),
            threshold,
            change_points: model.change_points(),
            atoms: model.r_indices(),
            inclusion: inclusion.clone(),
            acceptance: acceptance.to_vec(),
        }
    }

    pub fn state(&self) -> Result<LatentState> {
        let positions: Vec<usize> = self.change_points.iter().map(|t| t + 1).collect();
        LatentState::from_indices(self.n, self.num_atoms, &positions, &self.atoms)
    }
}

pub fn write_selection(path: &Path, selection: &SelectionFile) -> Result<()> {
    write_json(path, selection)
}

pub fn read_selection(path: &Path) -> Result<SelectionFile> {
    read_json(path)
}

pub fn write_trace<T: crate::Scalar>(path: &Path, trace: &MhTrace<T>) -> Result<()> {
    write_text(path, &trace.to_csv())
}

/// Serialized simulation truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub n: usize,
    pub sigma: f64,
    pub change_points: Vec<usize>,
    pub means: Vec<f64>,
    pub atoms: Vec<usize>,
    pub f_true: Vec<f64>,
}

impl TruthFile {
    pub fn from_truth(truth: &SeriesTruth<f64>) -> Self {
        Self {
            n: truth.f_true.len(),
            sigma: truth.sigma,
            change_points: truth.segmentation.change_points.clone(),
            means: truth.segmentation.means.clone(),
            atoms: truth.true_atom_indices.iter().copied().collect(),
            f_true: truth.f_true.clone(),
        }
    }

    pub fn segmentation(&self) -> Result<Segmentation<f64>> {
        Segmentation::new(self.change_points.clone(), self.means.clone(), self.n)
    }

    /// Truth with the noise left unknown (zeros).
    pub fn to_truth(&self) -> Result<SeriesTruth<f64>> {
        if self.f_true.len() != self.n {
            return Err(Error::dims(format!(
                "f_true has {} values for n = {}",
                self.f_true.len(),
                self.n
            )));
        }
        Ok(SeriesTruth {
            segmentation: self.segmentation()?,
            f_true: self.f_true.clone(),
            sigma: self.sigma,
            true_atom_indices: self.atoms.iter().copied().collect(),
            noise: vec![0.0; self.n],
        })
    }
}

pub fn write_truth(path: &Path, truth: &SeriesTruth<f64>) -> Result<()> {
    write_json(path, &TruthFile::from_truth(truth))
}

pub fn read_truth(path: &Path) -> Result<TruthFile> {
    read_json(path)
}
