//! The shipped scenario and protocol files load and have the expected sizes.

use std::path::PathBuf;

use umesh_core::datagen::{enumerate_regions, force_vector, ForceSpec, Protocol};
use umesh_core::fem::FemSolver;
use umesh_core::scenario::{presets, Scenario};

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    Scenario::load(dir().join(name)).unwrap()
}

#[test]
fn beam_files_match_presets() {
    let coarse = load("beam_coarse.json");
    let preset = Scenario::from_config(presets::beam_coarse(), &dir()).unwrap();
    assert_eq!(coarse.digest(), preset.digest());
    assert_eq!(coarse.mesh.element_count(), 135);

    let fine = load("beam_fine.json");
    let preset = Scenario::from_config(presets::beam_fine(), &dir()).unwrap();
    assert_eq!(fine.digest(), preset.digest());
    assert_eq!(fine.padded.dims, [32, 16, 16]);
}

#[test]
fn lshape_sizes() {
    let s = load("lshape.json");
    assert_eq!(s.mesh.element_count(), 335);
    assert_eq!(s.mesh.neumann_candidates().len(), 60);
    let p = Protocol::load(dir().join("lshape_protocol.json")).unwrap();
    assert_eq!(enumerate_regions(&s.mesh, p.region_radius).len() * p.lambda, 6000);
    let ext: Vec<f64> = (0..3).map(|a| (s.grid.dims()[a] - 1) as f64 * s.grid.spacing()[a]).collect();
    for (got, want) in ext.iter().zip([28.424, 10.0, 40.0]) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn liver_sizes() {
    let s = load("liver.json");
    assert_eq!(s.grid.dims(), [16, 15, 16]);
    assert_eq!(s.mesh.node_count(), 1109);
    assert_eq!(s.mesh.element_count(), 732);
    assert_eq!(s.mesh.dirichlet_nodes().len(), 54);
    assert_eq!(s.padded.dims, [16, 16, 16]);
    assert_eq!(s.material.young_modulus, 5000.0);
}

#[test]
fn stand_in_shapes_solve_under_small_loads() {
    for (file, mag) in [("lshape.json", 0.5), ("liver.json", 0.01)] {
        let s = load(file);
        let node = *s.mesh.neumann_candidates().last().unwrap();
        let spec = ForceSpec {
            region: vec![s.mesh.node_grid_index()[node]],
            direction: [0.0, 0.0, 1.0],
            magnitude: mag,
        };
        let f = force_vector(&s.mesh, &[spec]).unwrap();
        let solver = FemSolver::new(&s.mesh, s.material).unwrap();
        let (u, _report) = solver.solve(&f, s.solver_options()).unwrap();
        assert!(u.iter().any(|&x| x != 0.0), "{file}");
    }
}

#[test]
fn protocols_parse() {
    for name in ["desk_single.json", "triple.json", "lshape_protocol.json", "liver_protocol.json"] {
        Protocol::load(dir().join(name)).unwrap();
    }
    let desk = Protocol::load(dir().join("desk_single.json")).unwrap();
    let beam = load("beam_coarse.json");
    assert_eq!(enumerate_regions(&beam.mesh, 0).len() * desk.lambda, 1280);
}

#[test]
fn force_file_parses() {
    let beam = load("beam_coarse.json");
    let text = std::fs::read_to_string(dir().join("tip_force.json")).unwrap();
    let specs = umesh::forces::parse_force_specs(&text, &beam.mesh).unwrap();
    assert_eq!(specs[0].region.len(), 6);
}
