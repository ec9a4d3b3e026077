//! Trilinear H8 element: shape functions, 2×2×2 Gauss quadrature and the
//! per-element Saint-Venant-Kirchhoff kernels.

use nalgebra::{Matrix3, Vector3};

use super::material::{green_lagrange, pk2_stress, strain_energy_density, MaterialParams};
use crate::domain::HexMesh;
use crate::error::{Error, Result};

/// Reference-cell corner signs, same order as [`crate::domain::HEX_CORNERS`].
const SIGNS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// 2×2×2 Gauss points; all weights are one.
pub fn gauss_points() -> [[f64; 3]; 8] {
    let g = 1.0 / 3f64.sqrt();
    let mut pts = [[0.0; 3]; 8];
    for (p, s) in pts.iter_mut().zip(SIGNS.iter()) {
        *p = [s[0] * g, s[1] * g, s[2] * g];
    }
    pts
}

pub fn shape_values(xi: [f64; 3]) -> [f64; 8] {
    let mut n = [0.0; 8];
    for (a, s) in SIGNS.iter().enumerate() {
        n[a] = 0.125 * (1.0 + s[0] * xi[0]) * (1.0 + s[1] * xi[1]) * (1.0 + s[2] * xi[2]);
    }
    n
}

/// Derivatives of the shape functions with respect to reference coordinates.
pub fn shape_derivatives(xi: [f64; 3]) -> [[f64; 3]; 8] {
    let mut d = [[0.0; 3]; 8];
    for (a, s) in SIGNS.iter().enumerate() {
        let f = [1.0 + s[0] * xi[0], 1.0 + s[1] * xi[1], 1.0 + s[2] * xi[2]];
        d[a] = [
            0.125 * s[0] * f[1] * f[2],
            0.125 * f[0] * s[1] * f[2],
            0.125 * f[0] * f[1] * s[2],
        ];
    }
    d
}

/// Material-space shape gradients and Jacobian determinant at `xi`.
pub fn material_gradients(coords: &[[f64; 3]; 8], xi: [f64; 3]) -> ([[f64; 3]; 8], f64) {
    let dn = shape_derivatives(xi);
    // J[i][r] = dX_i / dxi_r
    let mut j = Matrix3::zeros();
    for a in 0..8 {
        for i in 0..3 {
            for r in 0..3 {
                j[(i, r)] += coords[a][i] * dn[a][r];
            }
        }
    }
    let det = j.determinant();
    let jinv_t = j.try_inverse().unwrap_or_else(Matrix3::zeros).transpose();
    let mut g = [[0.0; 3]; 8];
    for a in 0..8 {
        let v = jinv_t * Vector3::from(dn[a]);
        g[a] = [v[0], v[1], v[2]];
    }
    (g, det)
}

/// Precomputed quadrature data of one element in the rest configuration.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    /// `grads[q][a]` = ∇X N_a at Gauss point `q`.
    pub grads: [[[f64; 3]; 8]; 8],
    /// Quadrature weight times Jacobian determinant.
    pub wdet: [f64; 8],
}

impl ElementGeometry {
    pub fn new(coords: &[[f64; 3]; 8]) -> Result<Self> {
        let mut grads = [[[0.0; 3]; 8]; 8];
        let mut wdet = [0.0; 8];
        for (q, xi) in gauss_points().into_iter().enumerate() {
            let (g, det) = material_gradients(coords, xi);
            if !(det > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "non-positive Jacobian determinant {det} at Gauss point {q}"
                )));
            }
            grads[q] = g;
            wdet[q] = det;
        }
        Ok(Self { grads, wdet })
    }

    pub fn volume(&self) -> f64 {
        self.wdet.iter().sum()
    }
}

/// Rest geometry of every element of a mesh.
pub fn mesh_geometry(mesh: &HexMesh) -> Result<Vec<ElementGeometry>> {
    mesh.elements()
        .iter()
        .map(|conn| ElementGeometry::new(&element_coords(mesh, conn)))
        .collect()
}

pub fn element_coords(mesh: &HexMesh, conn: &[usize; 8]) -> [[f64; 3]; 8] {
    let coords = mesh.node_coords();
    let mut x = [[0.0; 3]; 8];
    for a in 0..8 {
        x[a] = coords[conn[a]];
    }
    x
}

/// Gathers the 24 element dofs from a global vector.
pub fn gather(conn: &[usize; 8], u: &[f64]) -> [[f64; 3]; 8] {
    let mut ue = [[0.0; 3]; 8];
    for a in 0..8 {
        let n = conn[a];
        ue[a] = [u[3 * n], u[3 * n + 1], u[3 * n + 2]];
    }
    ue
}

/// `F = I + Σ_a u_a ⊗ ∇X N_a`.
pub fn deformation_gradient(grads: &[[f64; 3]; 8], ue: &[[f64; 3]; 8]) -> Matrix3<f64> {
    let mut f = Matrix3::identity();
    for a in 0..8 {
        for i in 0..3 {
            for j in 0..3 {
                f[(i, j)] += ue[a][i] * grads[a][j];
            }
        }
    }
    f
}

/// Deformation gradient at an arbitrary reference point of an element.
pub fn deformation_gradient_at(coords: &[[f64; 3]; 8], ue: &[[f64; 3]; 8], xi: [f64; 3]) -> Matrix3<f64> {
    let (g, _) = material_gradients(coords, xi);
    deformation_gradient(&g, ue)
}

pub fn element_energy(geo: &ElementGeometry, ue: &[[f64; 3]; 8], m: &MaterialParams) -> f64 {
    (0..8)
        .map(|q| {
            let f = deformation_gradient(&geo.grads[q], ue);
            geo.wdet[q] * strain_energy_density(&green_lagrange(&f), m)
        })
        .sum()
}

/// Element internal force `∫ P ∇X N_a dΩ` with `P = F S`.
pub fn element_forces(geo: &ElementGeometry, ue: &[[f64; 3]; 8], m: &MaterialParams) -> [f64; 24] {
    let mut fe = [0.0; 24];
    for q in 0..8 {
        let g = &geo.grads[q];
        let f = deformation_gradient(g, ue);
        let p = f * pk2_stress(&green_lagrange(&f), m) * geo.wdet[q];
        for a in 0..8 {
            for i in 0..3 {
                fe[3 * a + i] += p[(i, 0)] * g[a][0] + p[(i, 1)] * g[a][1] + p[(i, 2)] * g[a][2];
            }
        }
    }
    fe
}

/// Count of Gauss points with `det F <= 0`.
pub fn inverted_points(geo: &ElementGeometry, ue: &[[f64; 3]; 8]) -> usize {
    (0..8)
        .filter(|&q| deformation_gradient(&geo.grads[q], ue).determinant() <= 0.0)
        .count()
}

/// Element internal force and tangent stiffness (row-major 24×24).
///
/// Per Gauss point the (a, b) block is
/// `(∇N_aᵀ S ∇N_b) I + λ (F∇N_a)(F∇N_b)ᵀ + μ (∇N_a·∇N_b) F Fᵀ + μ (F∇N_b)(F∇N_a)ᵀ`.
pub fn element_tangent(
    geo: &ElementGeometry,
    ue: &[[f64; 3]; 8],
    m: &MaterialParams,
    fe: &mut [f64; 24],
    ke: &mut [f64; 576],
) {
    fe.fill(0.0);
    ke.fill(0.0);
    let (lambda, mu) = (m.lame_lambda, m.lame_mu);
    for q in 0..8 {
        let g = &geo.grads[q];
        let w = geo.wdet[q];
        let f = deformation_gradient(g, ue);
        let s = pk2_stress(&green_lagrange(&f), m);
        let p = f * s;
        let ffw = f * f.transpose() * (mu * w);
        let mut fg = [Vector3::zeros(); 8];
        let mut sg = [Vector3::zeros(); 8];
        for a in 0..8 {
            let ga = Vector3::from(g[a]);
            fg[a] = f * ga;
            sg[a] = s * ga;
            let pa = p * ga * w;
            for i in 0..3 {
                fe[3 * a + i] += pa[i];
            }
        }
        for a in 0..8 {
            let ga = Vector3::from(g[a]);
            for b in a..8 {
                let gb = Vector3::from(g[b]);
                let geo_term = ga.dot(&sg[b]) * w;
                let gg = ga.dot(&gb);
                for i in 0..3 {
                    for j in 0..3 {
                        let mut v = lambda * w * fg[a][i] * fg[b][j]
                            + mu * w * fg[b][i] * fg[a][j]
                            + gg * ffw[(i, j)];
                        if i == j {
                            v += geo_term;
                        }
                        ke[(3 * a + i) * 24 + 3 * b + j] += v;
                    }
                }
            }
        }
    }
    // Mirror the upper block triangle.
    for a in 0..8 {
        for b in 0..a {
            for i in 0..3 {
                for j in 0..3 {
                    ke[(3 * a + i) * 24 + 3 * b + j] = ke[(3 * b + j) * 24 + 3 * a + i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn unit_cube(h: [f64; 3]) -> [[f64; 3]; 8] {
        let mut c = [[0.0; 3]; 8];
        for (a, off) in crate::domain::HEX_CORNERS.iter().enumerate() {
            c[a] = [off[0] as f64 * h[0], off[1] as f64 * h[1], off[2] as f64 * h[2]];
        }
        c
    }

    #[test]
    fn partition_of_unity() {
        for xi in gauss_points() {
            let n: f64 = shape_values(xi).iter().sum();
            assert!((n - 1.0).abs() < 1e-15);
            let d = shape_derivatives(xi);
            for r in 0..3 {
                assert!(d.iter().map(|v| v[r]).sum::<f64>().abs() < 1e-15);
            }
        }
    }

    #[test]
    fn axis_aligned_jacobian_is_constant() {
        let h = [0.3, 0.5, 0.7];
        let geo = ElementGeometry::new(&unit_cube(h)).unwrap();
        for q in 0..8 {
            assert!((geo.wdet[q] - h[0] * h[1] * h[2] / 8.0).abs() < 1e-15);
        }
        assert!((geo.volume() - h[0] * h[1] * h[2]).abs() < 1e-14);
    }

    #[test]
    fn inverted_element_is_rejected() {
        let mut c = unit_cube([1.0; 3]);
        c.swap(0, 1);
        c.swap(3, 2);
        c.swap(4, 5);
        c.swap(7, 6);
        assert!(ElementGeometry::new(&c).is_err());
    }

    #[test]
    fn deformation_gradient_examples() {
        let c = unit_cube([0.4, 0.5, 0.6]);
        let zero = [[0.0; 3]; 8];
        let xi = [0.2, -0.7, 0.1];
        assert_eq!(deformation_gradient_at(&c, &zero, xi), Matrix3::identity());
        let t = [[0.3, -1.0, 2.0]; 8];
        assert!((deformation_gradient_at(&c, &t, xi) - Matrix3::identity()).abs().max() < 1e-14);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = Matrix3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let mut ue = [[0.0; 3]; 8];
        for n in 0..8 {
            let v = a * Vector3::from(c[n]);
            ue[n] = [v[0], v[1], v[2]];
        }
        for xi in gauss_points().into_iter().chain([[0.9, -0.9, 0.3]]) {
            let f = deformation_gradient_at(&c, &ue, xi);
            assert!((f - Matrix3::identity() - a).abs().max() < 1e-13);
        }
    }

    #[test]
    fn tangent_is_symmetric_and_matches_forces() {
        let geo = ElementGeometry::new(&unit_cube([0.5, 0.4, 0.3])).unwrap();
        let m = MaterialParams::new(500.0, 0.4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut ue = [[0.0; 3]; 8];
        for v in ue.iter_mut().flatten() {
            *v = rng.random_range(-0.05..0.05);
        }
        let mut fe = [0.0; 24];
        let mut ke = [0.0; 576];
        element_tangent(&geo, &ue, &m, &mut fe, &mut ke);
        let scale = ke.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for r in 0..24 {
            for c in 0..24 {
                assert!((ke[r * 24 + c] - ke[c * 24 + r]).abs() < 1e-12 * scale);
            }
        }
        let fe2 = element_forces(&geo, &ue, &m);
        for i in 0..24 {
            assert!((fe[i] - fe2[i]).abs() <= 1e-12 * scale);
        }
    }
}
