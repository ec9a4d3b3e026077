//! JSON scenario files: geometry, boundary sets, material and solver options.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::{hex, sha256};
use crate::domain::{mesh_from_grid, padded_shape, parse_mask, BoundarySpec, HexMesh, PaddedShape, RegularGrid};
use crate::error::{Error, Result};
use crate::fem::{MaterialParams, SolverOptions};

fn default_pad_steps() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    /// Node counts per axis.
    pub dims: [usize; 3],
    /// Cell edge lengths (m).
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    /// Voxel mask file, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    pub dirichlet: BoundarySpec,
    pub neumann: BoundarySpec,
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    /// Padding aligns every axis to a multiple of `2^pad_steps`.
    #[serde(default = "default_pad_steps")]
    pub pad_steps: u32,
    /// Keep load candidates that are also fixed (their loads go to the support).
    #[serde(default)]
    pub allow_loads_on_dirichlet: bool,
    #[serde(flatten)]
    pub solver: SolverOptions,
}

/// Form hashed into the scenario digest: the mask enters by content.
#[derive(Serialize)]
struct Canonical<'a> {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    mask_sha256: Option<String>,
    dirichlet: &'a BoundarySpec,
    neumann: &'a BoundarySpec,
    young_modulus: f64,
    poisson_ratio: f64,
    pad_steps: u32,
    allow_loads_on_dirichlet: bool,
    solver: &'a SolverOptions,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub grid: RegularGrid,
    pub mesh: HexMesh,
    pub padded: PaddedShape,
    pub material: MaterialParams,
    canonical_json: String,
    digest: [u8; 32],
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ScenarioConfig = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::from_config(config, path.parent().unwrap_or(Path::new(".")))
    }

    /// Builds the scenario; `mask_path` is resolved against `base_dir`.
    pub fn from_config(config: ScenarioConfig, base_dir: &Path) -> Result<Self> {
        let (mask, mask_sha256) = match &config.mask_path {
            Some(p) => {
                let full = base_dir.join(p);
                let text = std::fs::read_to_string(&full).map_err(|e| Error::io(&full, e))?;
                let (cells, mask) = parse_mask(&text)?;
                let expected = [config.dims[0] - 1, config.dims[1] - 1, config.dims[2] - 1];
                if config.dims.iter().any(|&d| d < 2) || cells != expected {
                    return Err(Error::InvalidGrid(format!(
                        "mask has {cells:?} cells, grid needs {expected:?}"
                    )));
                }
                let digest = hex(&sha256(&mask.iter().map(|&b| b as u8).collect::<Vec<_>>()));
                (Some(mask), Some(digest))
            }
            None => (None, None),
        };
        let grid = RegularGrid::new(config.dims, config.spacing, config.origin, mask)?;
        let mesh = mesh_from_grid(&grid, &config.dirichlet, &config.neumann, config.allow_loads_on_dirichlet)?;
        let material = MaterialParams::new(config.young_modulus, config.poisson_ratio)?;
        if config.pad_steps == 0 {
            return Err(Error::Config("pad_steps must be at least 1".into()));
        }
        let padded = padded_shape(config.dims, config.pad_steps);
        let canonical_json = serde_json::to_string(&Canonical {
            dims: config.dims,
            spacing: config.spacing,
            origin: config.origin,
            mask_sha256,
            dirichlet: &config.dirichlet,
            neumann: &config.neumann,
            young_modulus: config.young_modulus,
            poisson_ratio: config.poisson_ratio,
            pad_steps: config.pad_steps,
            allow_loads_on_dirichlet: config.allow_loads_on_dirichlet,
            solver: &config.solver,
        })?;
        let digest = sha256(canonical_json.as_bytes());
        Ok(Self {
            config,
            grid,
            mesh,
            padded,
            material,
            canonical_json,
            digest,
        })
    }

    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn digest_hex(&self) -> String {
        hex(&self.digest)
    }

    pub fn canonical_json(&self) -> &str {
        &self.canonical_json
    }

    pub fn solver_options(&self) -> &SolverOptions {
        &self.config.solver
    }

    /// Per-voxel flag of the padded box, true where a mesh node sits.
    pub fn node_mask(&self) -> Vec<bool> {
        self.padded.node_mask(&self.mesh)
    }
}

/// Built-in scenario definitions matching the shipped JSON files.
pub mod presets {
    use super::*;
    use crate::domain::PlaneSpec;

    fn plane(s: &str) -> BoundarySpec {
        BoundarySpec::Plane(s.parse::<PlaneSpec>().expect("static plane spec"))
    }

    /// 4 x 1 x 1 m cantilever, 16 x 4 x 4 nodes, clamped at x = 0, loads on
    /// every node of the upper face.
    pub fn beam_coarse() -> ScenarioConfig {
        ScenarioConfig {
            name: "beam_coarse".into(),
            dims: [16, 4, 4],
            spacing: [4.0 / 15.0, 1.0 / 3.0, 1.0 / 3.0],
            origin: [0.0; 3],
            mask_path: None,
            dirichlet: plane("x=0"),
            neumann: plane("z=max"),
            young_modulus: 500.0,
            poisson_ratio: 0.4,
            pad_steps: 3,
            allow_loads_on_dirichlet: true,
            solver: SolverOptions::default(),
        }
    }

    /// Same beam with 28 x 12 x 12 nodes, padded to 32 x 16 x 16.
    pub fn beam_fine() -> ScenarioConfig {
        ScenarioConfig {
            name: "beam_fine".into(),
            dims: [28, 12, 12],
            spacing: [4.0 / 27.0, 1.0 / 11.0, 1.0 / 11.0],
            pad_steps: 4,
            ..beam_coarse()
        }
    }

    /// Single H8 element clamped on x = 0.
    pub fn single_element() -> ScenarioConfig {
        ScenarioConfig {
            name: "single_element".into(),
            dims: [2, 2, 2],
            spacing: [1.0; 3],
            neumann: plane("x=max"),
            allow_loads_on_dirichlet: false,
            pad_steps: 1,
            ..beam_coarse()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_beam_preset() {
        let s = Scenario::from_config(presets::beam_coarse(), Path::new(".")).unwrap();
        assert_eq!(s.mesh.element_count(), 135);
        assert_eq!(s.padded.dims, [16, 8, 8]);
        assert_eq!(s.mesh.neumann_candidates().len(), 64);
        let s2 = Scenario::from_config(presets::beam_coarse(), Path::new("/tmp")).unwrap();
        assert_eq!(s.digest(), s2.digest());
        let mut other = presets::beam_coarse();
        other.young_modulus = 400.0;
        assert_ne!(Scenario::from_config(other, Path::new(".")).unwrap().digest(), s.digest());
    }

    #[test]
    fn fine_beam_preset() {
        let s = Scenario::from_config(presets::beam_fine(), Path::new(".")).unwrap();
        assert_eq!(s.mesh.element_count(), 3267);
        assert_eq!(s.padded.dims, [32, 16, 16]);
        assert_eq!(s.mesh.neumann_candidates().len(), 336);
    }

    #[test]
    fn json_round_trip_with_solver_keys() {
        let text = r#"{
            "dims": [16, 4, 4], "spacing": [0.26666666666666666, 0.3333333333333333, 0.3333333333333333],
            "dirichlet": {"plane": "x=0"}, "neumann": {"plane": "z=max"},
            "young_modulus": 500.0, "poisson_ratio": 0.4,
            "allow_loads_on_dirichlet": true, "newton_tol": 1e-8
        }"#;
        let cfg: ScenarioConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.solver.newton_tol, 1e-8);
        assert_eq!(cfg.solver.cg_tol, 1e-8);
        assert_eq!(cfg.pad_steps, 3);
        let back: ScenarioConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn mask_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("m.vox"), crate::domain::format_mask([1, 1, 1], &[true])).unwrap();
        let mut cfg = presets::single_element();
        cfg.dims = [3, 2, 2];
        cfg.mask_path = Some("m.vox".into());
        assert!(Scenario::from_config(cfg, dir.path()).is_err());
    }
}
