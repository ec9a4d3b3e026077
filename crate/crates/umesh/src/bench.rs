//! Wall-clock comparison of engines on shared load cases.

use serde::{Deserialize, Serialize};
use umesh_core::datagen::Sample;
use umesh_core::domain::extract_field;
use umesh_core::scenario::Scenario;

use crate::engine::Engine;
use crate::error::Result;
use crate::metrics::mean_norm_error;

/// Order statistics of a set of durations (ms).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingStats {
    pub runs: usize,
    pub median_ms: f64,
    /// Nearest-rank 95th percentile.
    pub p95_ms: f64,
    pub mean_ms: f64,
}

impl TimingStats {
    /// Independent of the order of `ms`.
    pub fn from_samples(ms: &[f64]) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        let mut s = ms.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            runs: n,
            median_ms: median,
            p95_ms: s[rank - 1],
            mean_ms: sorted_mean(&s),
        }
    }
}

fn sorted_mean(sorted: &[f64]) -> f64 {
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    /// `measured` or `reference`.
    pub kind: String,
    pub engine: String,
    /// Case index, or `all` for the per-engine summary.
    pub case: String,
    pub runs: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// Mean norm error against the stored reference (m).
    pub e: f64,
    pub note: String,
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    /// Untimed runs per engine before measuring.
    pub warmup: usize,
    /// Timed runs per engine and case.
    pub repeats: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { warmup: 1, repeats: 3 }
    }
}

/// Times every engine on every case. Per-case rows come first, then one
/// `all` row per engine pooling every timed run.
pub fn benchmark(scenario: &Scenario, cases: &[&Sample], engines: &[Engine], opts: BenchOptions) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for engine in engines {
        if let Some(first) = cases.first() {
            for _ in 0..opts.warmup {
                engine.run(scenario, first)?;
            }
        }
        let mut pooled = Vec::new();
        let mut errors = Vec::new();
        for (ci, case) in cases.iter().enumerate() {
            let reference = extract_field(&case.displacement, &scenario.mesh, &scenario.padded)?;
            let mut times = Vec::with_capacity(opts.repeats);
            let mut e = 0.0;
            let mut note = String::new();
            for _ in 0..opts.repeats.max(1) {
                let out = engine.run(scenario, case)?;
                times.push(out.total_ms);
                e = mean_norm_error(&reference, &out.displacement)?;
                if !out.converged {
                    note = "not converged".into();
                }
            }
            let t = TimingStats::from_samples(&times);
            pooled.extend_from_slice(&times);
            errors.push(e);
            rows.push(BenchRow {
                kind: "measured".into(),
                engine: engine.name().into(),
                case: ci.to_string(),
                runs: t.runs,
                median_ms: t.median_ms,
                p95_ms: t.p95_ms,
                e,
                note,
            });
        }
        let t = TimingStats::from_samples(&pooled);
        errors.sort_by(f64::total_cmp);
        summaries.push(BenchRow {
            kind: "measured".into(),
            engine: engine.name().into(),
            case: "all".into(),
            runs: t.runs,
            median_ms: t.median_ms,
            p95_ms: t.p95_ms,
            e: if errors.is_empty() { 0.0 } else { sorted_mean(&errors) },
            note: format!("{} cases", cases.len()),
        });
    }
    rows.extend(summaries);
    rows.extend(reference_rows());
    Ok(rows)
}

/// Published fine-beam figures (GPU network, Pardiso FEM); not comparable in
/// absolute terms with CPU measurements.
pub fn reference_rows() -> Vec<BenchRow> {
    let row = |engine: &str, ms: f64, e: f64, note: &str| BenchRow {
        kind: "reference".into(),
        engine: engine.into(),
        case: "all".into(),
        runs: 0,
        median_ms: ms,
        p95_ms: f64::NAN,
        e,
        note: note.into(),
    };
    vec![
        row("fem", 740.0, 0.0, "published fine beam; not comparable"),
        row("pod", 120.0, 0.006, "published fine beam, 3 modes; not comparable"),
        row("hpod", 5.0, 0.084, "published fine beam, 1 mode, hyperreduced; not comparable"),
        row("network", 3.0, 0.006, "published fine beam, GPU; not comparable"),
    ]
}

/// Summary row of `engine` in a benchmark table.
pub fn summary<'a>(rows: &'a [BenchRow], engine: &str) -> Option<&'a BenchRow> {
    rows.iter()
        .find(|r| r.kind == "measured" && r.case == "all" && r.engine == engine)
}
