//! Architecture sweep over channel counts and encoder depths.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use umesh_core::datagen::Dataset;
use umesh_core::scenario::Scenario;
use umesh_nn::{train, TrainConfig, UNetConfig};

use crate::engine::Engine;
use crate::error::{HarnessError, Result};
use crate::evaluate::evaluate;

/// Parses `c=16,32;k=2,3` into the cross product of `(c, k)` pairs.
pub fn parse_grid(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut cs = None;
    let mut ks = None;
    for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| HarnessError::Data(format!("grid entry `{part}` is not key=values")))?;
        let parsed = values
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| HarnessError::Data(format!("grid entry `{part}`: {e}")))?;
        if parsed.is_empty() || parsed.contains(&0) {
            return Err(HarnessError::Data(format!("grid entry `{part}` needs positive values")));
        }
        match key.trim() {
            "c" => cs = Some(parsed),
            "k" => ks = Some(parsed),
            other => return Err(HarnessError::Data(format!("unknown grid key `{other}`"))),
        }
    }
    let (Some(cs), Some(ks)) = (cs, ks) else {
        return Err(HarnessError::Data("grid must define both c and k".into()));
    };
    Ok(cs.iter().flat_map(|&c| ks.iter().map(move |&k| (c, k))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectRow {
    pub c: usize,
    pub k: usize,
    #[serde(rename = "FSS")]
    pub fss: usize,
    #[serde(rename = "ē")]
    pub mean_e: f64,
    #[serde(rename = "σ")]
    pub std_e: Option<f64>,
    pub pred_ms: f64,
    pub train_min: f64,
}

/// Trains and evaluates every `(c, k)` cell with the same seed and data;
/// rows are sorted by decreasing mean error.
pub fn model_select(
    scenario: &Scenario,
    ds: &Dataset,
    grid: &[(usize, usize)],
    cfg: &TrainConfig,
) -> Result<Vec<SelectRow>> {
    let configs = grid
        .iter()
        .map(|&(c, k)| UNetConfig::new(c, k, ds.padded_dims))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mask = scenario.node_mask();
    let mut rows = Vec::with_capacity(configs.len());
    for net_cfg in configs {
        log::info!("training c={} k={}", net_cfg.channels, net_cfg.steps);
        let start = Instant::now();
        let (model, _) = train(ds, &mask, net_cfg, cfg, |_, _| Ok(()))?;
        let train_min = start.elapsed().as_secs_f64() / 60.0;
        let digest = umesh_core::hex(&umesh_nn::weights_digest(&model));
        let report = evaluate(&Engine::network(scenario, model), scenario, ds, &digest)?;
        rows.push(SelectRow {
            c: net_cfg.channels,
            k: net_cfg.steps,
            fss: net_cfg.feature_space_size(),
            mean_e: report.errors.mean,
            std_e: report.errors.std,
            pred_ms: report.timing.median_ms,
            train_min,
        });
    }
    rows.sort_by(|a, b| b.mean_e.total_cmp(&a.mean_e));
    Ok(rows)
}
