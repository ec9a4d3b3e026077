//! Test-split evaluation and the per-sample CSV report.
//!
//! The report file holds only quantities that are reproducible bit for bit;
//! wall times go to a `.timing.csv` sidecar next to it.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use umesh_core::datagen::{Dataset, Sample};
use umesh_core::domain::extract_field;
use umesh_core::hex;
use umesh_core::scenario::Scenario;

use crate::bench::TimingStats;
use crate::engine::Engine;
use crate::error::{HarnessError, Result};
use crate::metrics::{aggregate, fit_slope, max_nodal_deformation, mean_norm_error, Aggregate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    /// Index of the sample within the dataset file.
    pub sample: usize,
    pub e: f64,
    pub max_deformation: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTiming {
    pub sample: usize,
    pub total_ms: f64,
    pub core_ms: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub engine: String,
    pub scenario_digest: String,
    /// Weights or basis digest; empty for the reference engines.
    pub model_digest: String,
    pub samples: Vec<SampleResult>,
    pub timings: Vec<SampleTiming>,
    pub errors: Aggregate,
    /// Through-origin slope of e against the maximal nodal deformation.
    pub slope: Option<f64>,
    pub timing: TimingStats,
}

/// Aggregates written to the `# meta:` line of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub engine: String,
    pub scenario_digest: String,
    pub model_digest: String,
    pub count: usize,
    pub mean_e: f64,
    pub std_e: Option<f64>,
    pub max_e: f64,
    pub max_deformation: f64,
    pub slope: Option<f64>,
    pub unconverged: usize,
}

/// Runs `engine` over the test split of `ds`.
pub fn evaluate(engine: &Engine, scenario: &Scenario, ds: &Dataset, model_digest: &str) -> Result<EvalReport> {
    if ds.scenario_digest != scenario.digest() {
        return Err(HarnessError::Data(format!(
            "dataset was generated for scenario {}, not {}",
            hex(&ds.scenario_digest),
            scenario.digest_hex()
        )));
    }
    let test: Vec<(usize, &Sample)> = ds
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == umesh_core::datagen::Split::Test)
        .collect();
    if test.is_empty() {
        return Err(HarnessError::Data("dataset has an empty test split".into()));
    }
    let mut samples = Vec::with_capacity(test.len());
    let mut timings = Vec::with_capacity(test.len());
    for (i, s) in test {
        let reference = extract_field(&s.displacement, &scenario.mesh, &scenario.padded)?;
        let out = engine.run(scenario, s)?;
        samples.push(SampleResult {
            sample: i,
            e: mean_norm_error(&reference, &out.displacement)?,
            max_deformation: max_nodal_deformation(&reference),
            converged: out.converged,
        });
        timings.push(SampleTiming {
            sample: i,
            total_ms: out.total_ms,
            core_ms: out.core_ms,
        });
    }
    let errors = aggregate(&samples.iter().map(|r| r.e).collect::<Vec<_>>())?;
    let points: Vec<(f64, f64)> = samples.iter().map(|r| (r.max_deformation, r.e)).collect();
    let slope = fit_slope(&points).ok();
    let timing = TimingStats::from_samples(&timings.iter().map(|t| t.total_ms).collect::<Vec<_>>());
    Ok(EvalReport {
        engine: engine.name().to_string(),
        scenario_digest: scenario.digest_hex(),
        model_digest: model_digest.to_string(),
        samples,
        timings,
        errors,
        slope,
        timing,
    })
}

impl EvalReport {
    pub fn meta(&self) -> ReportMeta {
        ReportMeta {
            engine: self.engine.clone(),
            scenario_digest: self.scenario_digest.clone(),
            model_digest: self.model_digest.clone(),
            count: self.errors.count,
            mean_e: self.errors.mean,
            std_e: self.errors.std,
            max_e: self.errors.max,
            max_deformation: self.samples.iter().map(|s| s.max_deformation).fold(0.0, f64::max),
            slope: self.slope,
            unconverged: self.samples.iter().filter(|s| !s.converged).count(),
        }
    }
}

/// Path of the timing sidecar for a report path.
pub fn timing_path(report: &Path) -> PathBuf {
    let mut name = report.file_stem().unwrap_or_default().to_os_string();
    name.push(".timing.csv");
    report.with_file_name(name)
}

/// Writes `# meta: <json>` followed by CSV rows.
pub fn write_csv_with_meta<M: Serialize, R: Serialize>(path: &Path, meta: &M, rows: &[R]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    writeln!(file, "# meta: {}", serde_json::to_string(meta)?).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// Reads a file written by [`write_csv_with_meta`].
pub fn read_csv_with_meta<M: for<'de> Deserialize<'de>, R: for<'de> Deserialize<'de>>(path: &Path) -> Result<(M, Vec<R>)> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let json = first
        .strip_prefix("# meta: ")
        .ok_or_else(|| HarnessError::Data(format!("{} lacks a meta line", path.display())))?;
    let meta = serde_json::from_str(json)?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let rows = r.deserialize().collect::<std::result::Result<Vec<R>, _>>()?;
    Ok((meta, rows))
}

#[derive(Serialize)]
struct TimingMeta<'a> {
    engine: &'a str,
    median_ms: f64,
    p95_ms: f64,
    mean_ms: f64,
}

/// Writes the report to `path` and timings to its sidecar.
pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    write_csv_with_meta(path, &report.meta(), &report.samples)?;
    let meta = TimingMeta {
        engine: &report.engine,
        median_ms: report.timing.median_ms,
        p95_ms: report.timing.p95_ms,
        mean_ms: report.timing.mean_ms,
    };
    write_csv_with_meta(&timing_path(path), &meta, &report.timings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_sidecar_name() {
        assert_eq!(timing_path(Path::new("out/eval.csv")), PathBuf::from("out/eval.timing.csv"));
        assert_eq!(timing_path(Path::new("r")), PathBuf::from("r.timing.csv"));
    }

    #[test]
    fn csv_meta_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let rows = vec![
            SampleResult {
                sample: 3,
                e: 0.1 + 0.2,
                max_deformation: 1.0 / 3.0,
                converged: true,
            },
            SampleResult {
                sample: 7,
                e: 1e-17,
                max_deformation: 2.5,
                converged: false,
            },
        ];
        write_csv_with_meta(&p, &serde_json::json!({"k": 1.0 / 7.0}), &rows).unwrap();
        let (meta, back): (serde_json::Value, Vec<SampleResult>) = read_csv_with_meta(&p).unwrap();
        assert_eq!(meta["k"].as_f64().unwrap(), 1.0 / 7.0);
        assert_eq!(back, rows);
    }
}
