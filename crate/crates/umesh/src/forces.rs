//! Force-spec JSON files and displacement CSV output.

use std::io::Write;
use std::path::Path;

use serde::Deserialize;
use umesh_core::datagen::ForceSpec;
use umesh_core::domain::HexMesh;

use crate::error::{HarnessError, Result};

/// One load of a force-spec file. The region is either an explicit node list
/// or the load candidates within Chebyshev grid distance `radius` of a centre.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceEntry {
    #[serde(default)]
    pub region_nodes: Option<Vec<[usize; 3]>>,
    #[serde(default)]
    pub region_center: Option<[usize; 3]>,
    #[serde(default)]
    pub radius: Option<usize>,
    /// Normalised on load.
    pub direction: [f64; 3],
    /// Total force over the region (N).
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum ForceFile {
    One(ForceEntry),
    Many(Vec<ForceEntry>),
}

impl ForceEntry {
    pub fn resolve(&self, mesh: &HexMesh) -> Result<ForceSpec> {
        let region = match (&self.region_nodes, self.region_center) {
            (Some(nodes), None) => {
                if self.radius.is_some() {
                    return Err(HarnessError::Data("`radius` only applies to `region_center`".into()));
                }
                nodes.clone()
            }
            (None, Some(c)) => {
                let r = self.radius.unwrap_or(0);
                let idx = mesh.node_grid_index();
                let nodes: Vec<[usize; 3]> = mesh
                    .neumann_candidates()
                    .iter()
                    .map(|&n| idx[n])
                    .filter(|g| (0..3).all(|a| g[a].abs_diff(c[a]) <= r))
                    .collect();
                if nodes.is_empty() {
                    return Err(HarnessError::Data(format!(
                        "no load candidate within {r} of {c:?}"
                    )));
                }
                nodes
            }
            _ => {
                return Err(HarnessError::Data(
                    "a force needs exactly one of `region_nodes` or `region_center`".into(),
                ))
            }
        };
        let d = self.direction;
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(HarnessError::Data(format!("force direction {d:?} has no length")));
        }
        Ok(ForceSpec {
            region,
            direction: d.map(|x| x / n),
            magnitude: self.magnitude,
        })
    }
}

/// Parses a force-spec file holding one entry or a list of entries.
pub fn parse_force_specs(text: &str, mesh: &HexMesh) -> Result<Vec<ForceSpec>> {
    let file: ForceFile = serde_json::from_str(text)?;
    let entries = match file {
        ForceFile::One(e) => vec![e],
        ForceFile::Many(v) => v,
    };
    if entries.is_empty() {
        return Err(HarnessError::Data("force file lists no loads".into()));
    }
    entries.iter().map(|e| e.resolve(mesh)).collect()
}

pub fn load_force_specs(path: &Path, mesh: &HexMesh) -> Result<Vec<ForceSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_force_specs(&text, mesh)
}

/// Writes `node_i,node_j,node_k,ux,uy,uz`, one row per mesh node.
pub fn write_displacement_csv(mesh: &HexMesh, u: &[f64], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "node_i,node_j,node_k,ux,uy,uz")?;
    for (n, ijk) in mesh.node_grid_index().iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            ijk[0],
            ijk[1],
            ijk[2],
            u[3 * n],
            u[3 * n + 1],
            u[3 * n + 2]
        )?;
    }
    Ok(())
}
