use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use umesh_core::datagen::{force_vector, ForceSpec};
use umesh_core::domain::{BoundarySpec, HexMesh, PlaneSpec};
use umesh_core::fem::element::{element_coords, gauss_points, material_gradients};
use umesh_core::fem::{Assembler, FemSolver, MaterialParams, SolverOptions};
use umesh_core::scenario::{presets, Scenario, ScenarioConfig};

fn plane(s: &str) -> BoundarySpec {
    BoundarySpec::Plane(s.parse::<PlaneSpec>().unwrap())
}

fn block(dims: [usize; 3], spacing: [f64; 3]) -> Scenario {
    let cfg = ScenarioConfig {
        dims,
        spacing,
        neumann: plane("x=max"),
        allow_loads_on_dirichlet: false,
        pad_steps: 1,
        ..presets::beam_coarse()
    };
    Scenario::from_config(cfg, Path::new(".")).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_state(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-amp..amp)).collect()
}

fn fd_consistency(s: &Scenario, seed: u64) -> (f64, f64) {
    let asm = Assembler::new(&s.mesh).unwrap();
    let m = s.material;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = asm.dof_count();
    let u = random_state(&mut rng, n, 0.05);
    let dir = random_state(&mut rng, n, 1.0);
    let h = 1e-6;
    let shifted = |t: f64| -> Vec<f64> { u.iter().zip(&dir).map(|(a, b)| a + t * b).collect() };

    // Energy -> forces along a random direction.
    let r = asm.internal_forces(&u, &m);
    let de = (asm.total_energy(&shifted(h), &m) - asm.total_energy(&shifted(-h), &m)) / (2.0 * h);
    let dr: f64 = r.iter().zip(&dir).map(|(a, b)| a * b).sum();
    let energy_err = (de - dr).abs() / dr.abs().max(1e-300);

    // Forces -> tangent directional product.
    let (_, k) = asm.tangent(&u, &m);
    let kd = k.mul_vec(&dir);
    let rp = asm.internal_forces(&shifted(h), &m);
    let rm = asm.internal_forces(&shifted(-h), &m);
    let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let diff: Vec<f64> = fd.iter().zip(&kd).map(|(a, b)| a - b).collect();
    (energy_err, norm(&diff) / norm(&kd))
}

#[test]
fn finite_difference_consistency() {
    for (dims, seed) in [([3, 2, 2], 1), ([4, 3, 3], 2), ([3, 2, 2], 3)] {
        let s = block(dims, [0.5, 0.7, 0.4]);
        let (e_err, k_err) = fd_consistency(&s, seed);
        assert!(e_err < 1e-6, "{dims:?}: energy/force error {e_err:.2e}");
        assert!(k_err < 1e-5, "{dims:?}: force/tangent error {k_err:.2e}");
    }
}

/// Small-strain stiffness `∫ Bᵀ D B` built from engineering strains.
fn linear_element_stiffness(coords: &[[f64; 3]; 8], m: &MaterialParams) -> Vec<f64> {
    let (l, mu) = (m.lame_lambda, m.lame_mu);
    let mut d = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            d[i][j] = if i == j { l + 2.0 * mu } else { l };
        }
        d[i + 3][i + 3] = mu;
    }
    let mut k = vec![0.0; 576];
    for xi in gauss_points() {
        let (g, det) = material_gradients(coords, xi);
        let mut b = [[0.0; 24]; 6];
        for a in 0..8 {
            let [gx, gy, gz] = g[a];
            b[0][3 * a] = gx;
            b[1][3 * a + 1] = gy;
            b[2][3 * a + 2] = gz;
            b[3][3 * a] = gy;
            b[3][3 * a + 1] = gx;
            b[4][3 * a + 1] = gz;
            b[4][3 * a + 2] = gy;
            b[5][3 * a] = gz;
            b[5][3 * a + 2] = gx;
        }
        for p in 0..24 {
            for q in 0..24 {
                let mut acc = 0.0;
                for r in 0..6 {
                    for s in 0..6 {
                        acc += b[r][p] * d[r][s] * b[s][q];
                    }
                }
                k[p * 24 + q] += acc * det;
            }
        }
    }
    k
}

#[test]
fn reference_tangent_matches_small_strain_stiffness() {
    let s = block([2, 2, 2], [0.8, 1.1, 0.6]);
    let asm = Assembler::new(&s.mesh).unwrap();
    let u = vec![0.0; asm.dof_count()];
    let mut seen = 0;
    asm.for_each_element_tangent(&u, &s.material, |conn, fe, ke| {
        let oracle = linear_element_stiffness(&element_coords(&s.mesh, conn), &s.material);
        let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in ke.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12 * scale, "{a} vs {b}");
        }
        assert!(fe.iter().all(|&f| f == 0.0));
        seen += 1;
    });
    assert_eq!(seen, 1);
}

#[test]
fn zero_load_and_rigid_translation() {
    let s = block([4, 3, 3], [0.5, 0.5, 0.5]);
    let solver = FemSolver::new(&s.mesh, s.material).unwrap();
    let (u, report) = solver.solve(&vec![0.0; s.mesh.dof_count()], &SolverOptions::default()).unwrap();
    assert!(u.iter().all(|&x| x == 0.0));
    assert_eq!(report.newton_iterations, 0);

    let asm = solver.assembler();
    let t = [0.3, -1.7, 2.2];
    let rigid: Vec<f64> = (0..s.mesh.dof_count()).map(|i| t[i % 3]).collect();
    let r = asm.internal_forces(&rigid, &s.material);
    let bound = 1e-10 * s.material.lame_mu * 0.125 / 0.5;
    assert!(norm(&r) < bound, "{:e}", norm(&r));
}

fn tip_load_scenario(n: usize, m: usize) -> Scenario {
    let cfg = ScenarioConfig {
        dims: [n, m, m],
        spacing: [4.0 / (n - 1) as f64, 1.0 / (m - 1) as f64, 1.0 / (m - 1) as f64],
        neumann: plane("x=max"),
        allow_loads_on_dirichlet: false,
        ..presets::beam_coarse()
    };
    Scenario::from_config(cfg, Path::new(".")).unwrap()
}

/// Mean vertical deflection of the loaded end under total load `p`.
fn tip_deflection(s: &Scenario, p: f64) -> f64 {
    let mesh: &HexMesh = &s.mesh;
    let region = mesh.neumann_candidates().iter().map(|&i| mesh.node_grid_index()[i]).collect();
    let f = force_vector(
        mesh,
        &[ForceSpec {
            region,
            direction: [0.0, 0.0, -1.0],
            magnitude: p,
        }],
    )
    .unwrap();
    let (u, _) = FemSolver::new(mesh, s.material).unwrap().solve(&f, s.solver_options()).unwrap();
    let tip = mesh.neumann_candidates();
    tip.iter().map(|&i| -u[3 * i + 2]).sum::<f64>() / tip.len() as f64
}

#[test]
fn cantilever_against_euler_bernoulli() {
    let (p, len, e, inertia) = (0.1, 4.0f64, 500.0, 1.0 / 12.0);
    let analytic = p * len.powi(3) / (3.0 * e * inertia);
    let coarse = tip_deflection(&tip_load_scenario(16, 4), p);
    assert!(coarse < 0.02 * len);
    assert!((coarse - analytic).abs() / analytic < 0.15, "{coarse} vs {analytic}");
    let medium = tip_deflection(&tip_load_scenario(31, 7), p);
    assert!(coarse < medium && (medium - analytic).abs() < (coarse - analytic).abs());
}

fn loaded_single_element(magnitude: f64) -> (Scenario, Vec<f64>) {
    let s = Scenario::from_config(presets::single_element(), Path::new(".")).unwrap();
    let region = s.mesh.neumann_candidates().iter().map(|&i| s.mesh.node_grid_index()[i]).collect();
    let d = [0.3f64, -0.5, 0.8];
    let n = norm(&d);
    let f = force_vector(
        &s.mesh,
        &[ForceSpec {
            region,
            direction: d.map(|x| x / n),
            magnitude,
        }],
    )
    .unwrap();
    (s, f)
}

#[test]
fn increment_count_does_not_change_the_solution() {
    let (s, f) = loaded_single_element(60.0);
    let solver = FemSolver::new(&s.mesh, s.material).unwrap();
    let mut opts = SolverOptions {
        newton_tol: 1e-11,
        cg_tol: 1e-12,
        ..SolverOptions::default()
    };
    let (u1, _) = solver.solve(&f, &opts).unwrap();
    opts.initial_increments = 4;
    let (u4, r4) = solver.solve(&f, &opts).unwrap();
    assert_eq!(r4.load_increments, 4);
    let diff: Vec<f64> = u1.iter().zip(&u4).map(|(a, b)| a - b).collect();
    assert!(norm(&diff) < 1e-8 * norm(&u1));
    assert!(norm(&u1) > 0.05, "load should be non-linear, |u| = {}", norm(&u1));
}

#[test]
fn newton_converges_quadratically() {
    let (s, f) = loaded_single_element(40.0);
    let opts = SolverOptions {
        newton_tol: 1e-12,
        cg_tol: 1e-14,
        ..SolverOptions::default()
    };
    let (_, report) = FemSolver::new(&s.mesh, s.material).unwrap().solve(&f, &opts).unwrap();
    let trace: Vec<f64> = report.residual_trace.iter().map(|r| r / report.residual_trace[0]).collect();
    assert!(trace.len() >= 4, "{trace:?}");
    let mut checked = 0;
    for w in trace.windows(2) {
        if w[0] < 1e-2 && w[1] > 1e-13 {
            assert!(w[1] < 10.0 * w[0] * w[0], "{trace:?}");
            checked += 1;
        }
    }
    assert!(checked >= 1, "{trace:?}");
}

#[test]
fn solves_are_bit_reproducible() {
    let s = Scenario::from_config(presets::beam_coarse(), Path::new(".")).unwrap();
    let region = vec![[15, 2, 3], [14, 2, 3]];
    let f = force_vector(
        &s.mesh,
        &[ForceSpec {
            region,
            direction: [0.0, 0.6, -0.8],
            magnitude: 2.0,
        }],
    )
    .unwrap();
    let solver = FemSolver::new(&s.mesh, s.material).unwrap();
    let (a, ra) = solver.solve(&f, s.solver_options()).unwrap();
    let (b, rb) = solver.solve(&f, s.solver_options()).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.digest(), rb.digest());
}
