//! Echo-time and localization metrics over test sets, for MIRAGE and the
//! GCC-PHAT baseline, rendered as markdown and CSV tables.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::aggregate::{localize_echo_times, DoaGrid};
use crate::baseline;
use crate::dataset::{self, Dataset, DatasetRecord, SourceAudio};
use crate::error::{Error, Result};
use crate::geometry::{aoa_from_tdoa, Doa, EchoTimes};
use crate::model::{self, Model};

pub const THRESHOLDS: [f64; 2] = [10.0, 20.0];

/// Azimuth error folded to [0, 180] and absolute elevation error, degrees.
pub fn angular_errors(est: Doa, truth: Doa) -> (f64, f64) {
    let d = (est.azimuth - truth.azimuth).rem_euclid(360.0);
    (d.min(360.0 - d), (est.elevation - truth.elevation).abs())
}

/// Share of errors below a tolerance and their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracyCell {
    /// Mean error over the hits; `None` when nothing is within tolerance.
    pub mean_error: Option<f64>,
    /// Percentage of estimates with error strictly below the tolerance.
    pub accuracy: f64,
}

impl AccuracyCell {
    /// Table cell such as `4.10 (77)`.
    pub fn format(&self) -> String {
        match self.mean_error {
            Some(m) => format!("{m:.2} ({:.0})", self.accuracy),
            None => format!("n/a ({:.0})", self.accuracy),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("malformed accuracy cell {s:?}"));
        let (mean, rest) = s.trim().split_once(" (").ok_or_else(bad)?;
        let acc = rest.strip_suffix(')').ok_or_else(bad)?;
        let accuracy: f64 = acc.parse().map_err(|_| bad())?;
        let mean_error = if mean == "n/a" { None } else { Some(mean.parse().map_err(|_| bad())?) };
        Ok(Self { mean_error, accuracy })
    }
}

pub fn accuracy_table(errors: &[f64], thresholds: &[f64]) -> Result<Vec<AccuracyCell>> {
    if errors.is_empty() {
        return Err(Error::invalid("accuracy needs at least one estimate"));
    }
    Ok(thresholds
        .iter()
        .map(|&t| {
            let hits: Vec<f64> = errors.iter().copied().filter(|e| *e < t).collect();
            AccuracyCell {
                mean_error: (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64),
                accuracy: 100.0 * hits.len() as f64 / errors.len() as f64,
            }
        })
        .collect())
}

/// Source of echo-time estimates for a test set.
pub trait EchoPredictor: Sync {
    fn predict(&self, records: &[DatasetRecord]) -> Result<Vec<EchoTimes>>;
    /// Gaussian variances used at aggregation, seconds².
    fn variances(&self) -> [f64; 3];
}

impl EchoPredictor for Model {
    fn predict(&self, records: &[DatasetRecord]) -> Result<Vec<EchoTimes>> {
        if let Some(r) = records.iter().find(|r| r.x.x.len() != self.input_dim()) {
            return Err(Error::invalid(format!(
                "model expects {} features but record {} has {}",
                self.input_dim(),
                r.index,
                r.x.x.len()
            )));
        }
        let x: Vec<f64> = records.iter().flat_map(|r| r.x.x.iter().copied()).collect();
        Ok(self.predict_batch(&x, records.len())?.into_iter().map(EchoTimes::from_array).collect())
    }

    fn variances(&self) -> [f64; 3] {
        Model::variances(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodMetrics {
    /// nRMSE of TDOA, iTDOA and TDOE; `None` where the method has no estimate.
    pub nrmse: [Option<f64>; 3],
    pub aoa: Vec<AccuracyCell>,
    pub azimuth: Option<Vec<AccuracyCell>>,
    pub elevation: Option<Vec<AccuracyCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: String,
    pub count: usize,
    pub mirage: MethodMetrics,
    pub baseline: Option<MethodMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub conditions: Vec<ConditionReport>,
}

fn aoa_errors(est: &[f64], truth: &[EchoTimes], k: &[crate::geometry::Constants]) -> Vec<f64> {
    est.iter()
        .zip(truth)
        .zip(k)
        .map(|((e, t), k)| (aoa_from_tdoa(*e, k) - aoa_from_tdoa(t.tdoa, k)).abs())
        .collect()
}

/// GCC-PHAT TDOA per record, on audio re-rendered from the generation seeds.
pub fn baseline_tdoas(ds: &Dataset) -> Result<Vec<f64>> {
    let g = &ds.stats.generation;
    let fs = ds.records.first().map_or(16_000, |r| r.scene.constants.fs);
    let source = SourceAudio::resolve(&g.source, fs)?;
    ds.records
        .par_iter()
        .map(|r| {
            let seeds = dataset::record_seeds(g.master_seed, g.stream_offset.wrapping_add(r.index));
            let (y1, y2) = dataset::render_audio(&r.scene, &source, r.index, &seeds, g.snr_db)?;
            if dataset::feature_vector(&y1, &y2)? != r.x {
                return Err(Error::invalid(format!("record {} could not be re-rendered identically", r.index)));
            }
            baseline::estimate_tdoa_gcc(&y1, &y2, &r.scene.constants)
        })
        .collect()
}

pub fn evaluate_condition(
    predictor: &dyn EchoPredictor,
    condition: &str,
    ds: &Dataset,
    with_baseline: bool,
) -> Result<ConditionReport> {
    if ds.len() < 2 {
        return Err(Error::invalid(format!("condition {condition} has fewer than two records")));
    }
    let truth: Vec<EchoTimes> = ds.records.iter().map(|r| r.v).collect();
    let truth_arr: Vec<[f64; 3]> = truth.iter().map(|t| t.to_array()).collect();
    let consts: Vec<_> = ds.records.iter().map(|r| r.scene.constants).collect();
    let preds = predictor.predict(&ds.records)?;
    let pred_arr: Vec<[f64; 3]> = preds.iter().map(|p| p.to_array()).collect();
    let nrmse = model::nrmse(&pred_arr, &truth_arr)?;

    let variances = predictor.variances();
    let grid = DoaGrid::default();
    let doa_errors: Vec<(f64, f64)> = ds
        .records
        .par_iter()
        .zip(&preds)
        .map(|(r, p)| {
            let va = r.scene.virtual_array()?;
            let (est, _) = localize_echo_times(*p, variances, &va, &grid, &r.scene.constants)?;
            Ok(angular_errors(est, r.scene.true_doa()?))
        })
        .collect::<Result<_>>()?;
    let az: Vec<f64> = doa_errors.iter().map(|e| e.0).collect();
    let el: Vec<f64> = doa_errors.iter().map(|e| e.1).collect();
    let pred_tdoa: Vec<f64> = preds.iter().map(|p| p.tdoa).collect();
    let mirage = MethodMetrics {
        nrmse: nrmse.map(Some),
        aoa: accuracy_table(&aoa_errors(&pred_tdoa, &truth, &consts), &THRESHOLDS)?,
        azimuth: Some(accuracy_table(&az, &THRESHOLDS)?),
        elevation: Some(accuracy_table(&el, &THRESHOLDS)?),
    };

    let baseline = if with_baseline {
        let tdoa = baseline_tdoas(ds)?;
        let as_arr: Vec<[f64; 3]> = tdoa.iter().zip(&truth_arr).map(|(e, t)| [*e, t[1], t[2]]).collect();
        let n = model::nrmse(&as_arr, &truth_arr)?;
        Some(MethodMetrics {
            nrmse: [Some(n[0]), None, None],
            aoa: accuracy_table(&aoa_errors(&tdoa, &truth, &consts), &THRESHOLDS)?,
            azimuth: None,
            elevation: None,
        })
    } else {
        None
    };
    Ok(ConditionReport { condition: condition.to_string(), count: ds.len(), mirage, baseline })
}

/// Evaluates every `(condition name, test file)` pair.
pub fn evaluate(model: &Model, tests: &[(String, &Path)], with_baseline: bool) -> Result<EvalReport> {
    let mut conditions = Vec::with_capacity(tests.len());
    for (name, path) in tests {
        let ds = Dataset::load(path)?;
        log::info!("evaluating {name}: {} records", ds.len());
        conditions.push(evaluate_condition(model, name, &ds, with_baseline)?);
    }
    Ok(EvalReport { conditions })
}

fn opt(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |x| format!("{x:.2}"))
}

fn rows(report: &EvalReport) -> impl Iterator<Item = (&'static str, &ConditionReport, &MethodMetrics)> {
    report.conditions.iter().flat_map(|c| {
        std::iter::once(("MIRAGE", c, &c.mirage)).chain(c.baseline.as_ref().map(|b| ("GCC-PHAT", c, b)))
    })
}

impl EvalReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("## Echo-time estimation\n\n");
        s.push_str("nRMSE per target; AOA cells are mean error over hits (accuracy %).\n\n");
        s.push_str("| Method | Condition | N | TDOA | iTDOA | TDOE | AOA < 10° | AOA < 20° |\n");
        s.push_str("|---|---|---|---|---|---|---|---|\n");
        for (m, c, r) in rows(self) {
            let _ = writeln!(
                s,
                "| {m} | {} | {} | {} | {} | {} | {} | {} |",
                c.condition,
                c.count,
                opt(r.nrmse[0]),
                opt(r.nrmse[1]),
                opt(r.nrmse[2]),
                r.aoa[0].format(),
                r.aoa[1].format()
            );
        }
        s.push_str("\n## Direction of arrival\n\n");
        s.push_str("| Method | Condition | θ < 10° | θ < 20° | φ < 10° | φ < 20° |\n");
        s.push_str("|---|---|---|---|---|---|\n");
        for (m, c, r) in rows(self) {
            let cell = |v: &Option<Vec<AccuracyCell>>, i: usize| v.as_ref().map_or("n/a".into(), |v| v[i].format());
            let _ = writeln!(
                s,
                "| {m} | {} | {} | {} | {} | {} |",
                c.condition,
                cell(&r.azimuth, 0),
                cell(&r.azimuth, 1),
                cell(&r.elevation, 0),
                cell(&r.elevation, 1)
            );
        }
        s
    }

    /// Long-format CSV: `method,condition,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,condition,metric,value\n");
        let num = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x}"));
        for (m, c, r) in rows(self) {
            let mut put = |metric: String, value: String| {
                let _ = writeln!(s, "{m},{},{metric},{value}", c.condition);
            };
            put("count".into(), c.count.to_string());
            for (name, v) in ["tdoa", "itdoa", "tdoe"].iter().zip(r.nrmse) {
                if v.is_some() {
                    put(format!("nrmse_{name}"), num(v));
                }
            }
            let groups = [("aoa", Some(&r.aoa)), ("azimuth", r.azimuth.as_ref()), ("elevation", r.elevation.as_ref())];
            for (name, cells) in groups {
                let Some(cells) = cells else { continue };
                for (t, cell) in THRESHOLDS.iter().zip(cells) {
                    put(format!("{name}_mean_error_lt{t}"), num(cell.mean_error));
                    put(format!("{name}_accuracy_lt{t}"), format!("{}", cell.accuracy));
                }
            }
        }
        s
    }

    /// Writes `report.md` and `report.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.md"), self.to_markdown())?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        Ok(())
    }
}
