//! Global assembly of internal forces, strain energy and tangent stiffness.
//!
//! Element kernels run in parallel; the scatter into global storage always
//! walks elements in mesh order, so results do not depend on the thread count.

use std::collections::BTreeSet;

use rayon::prelude::*;

use super::element::{
    element_energy, element_forces, element_tangent, gather, inverted_points, mesh_geometry, ElementGeometry,
};
use super::material::MaterialParams;
use super::sparse::CsrMatrix;
use crate::domain::HexMesh;
use crate::error::Result;

/// Mesh geometry plus the fixed sparsity pattern of the tangent.
#[derive(Debug, Clone)]
pub struct Assembler {
    geometry: Vec<ElementGeometry>,
    elements: Vec<[usize; 8]>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// `slots[e][a][b]`: position of node `b` in the neighbour list of node `a`.
    slots: Vec<[[u32; 8]; 8]>,
    ndof: usize,
}

impl Assembler {
    pub fn new(mesh: &HexMesh) -> Result<Self> {
        let geometry = mesh_geometry(mesh)?;
        let elements = mesh.elements().to_vec();
        let n_nodes = mesh.node_count();
        let mut nbrs = vec![BTreeSet::new(); n_nodes];
        for conn in &elements {
            for &a in conn {
                nbrs[a].extend(conn.iter().copied());
            }
        }
        let nbrs: Vec<Vec<usize>> = nbrs.into_iter().map(|s| s.into_iter().collect()).collect();
        let mut row_ptr = Vec::with_capacity(3 * n_nodes + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for list in &nbrs {
            for _ in 0..3 {
                for &m in list {
                    col_idx.extend([3 * m, 3 * m + 1, 3 * m + 2]);
                }
                row_ptr.push(col_idx.len());
            }
        }
        let slots = elements
            .iter()
            .map(|conn| {
                let mut s = [[0u32; 8]; 8];
                for a in 0..8 {
                    for b in 0..8 {
                        s[a][b] = nbrs[conn[a]].binary_search(&conn[b]).expect("element neighbours") as u32;
                    }
                }
                s
            })
            .collect();
        Ok(Self {
            geometry,
            elements,
            row_ptr,
            col_idx,
            slots,
            ndof: 3 * n_nodes,
        })
    }

    pub fn dof_count(&self) -> usize {
        self.ndof
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn geometry(&self) -> &[ElementGeometry] {
        &self.geometry
    }

    pub fn elements(&self) -> &[[usize; 8]] {
        &self.elements
    }

    /// `Σ_e ∫ W(E) dΩ`.
    pub fn total_energy(&self, u: &[f64], m: &MaterialParams) -> f64 {
        let per: Vec<f64> = self
            .elements
            .par_iter()
            .zip(&self.geometry)
            .map(|(conn, geo)| element_energy(geo, &gather(conn, u), m))
            .collect();
        per.iter().sum()
    }

    pub fn internal_forces(&self, u: &[f64], m: &MaterialParams) -> Vec<f64> {
        assert_eq!(u.len(), self.ndof);
        let per: Vec<[f64; 24]> = self
            .elements
            .par_iter()
            .zip(&self.geometry)
            .map(|(conn, geo)| element_forces(geo, &gather(conn, u), m))
            .collect();
        let mut r = vec![0.0; self.ndof];
        for (conn, fe) in self.elements.iter().zip(&per) {
            for a in 0..8 {
                for i in 0..3 {
                    r[3 * conn[a] + i] += fe[3 * a + i];
                }
            }
        }
        r
    }

    /// Internal forces and tangent stiffness at `u`.
    pub fn tangent(&self, u: &[f64], m: &MaterialParams) -> (Vec<f64>, CsrMatrix) {
        assert_eq!(u.len(), self.ndof);
        let per: Vec<([f64; 24], Box<[f64; 576]>)> = self
            .elements
            .par_iter()
            .zip(&self.geometry)
            .map(|(conn, geo)| {
                let mut fe = [0.0; 24];
                let mut ke = Box::new([0.0; 576]);
                element_tangent(geo, &gather(conn, u), m, &mut fe, &mut ke);
                (fe, ke)
            })
            .collect();
        let mut r = vec![0.0; self.ndof];
        let mut values = vec![0.0; self.col_idx.len()];
        for ((conn, slots), (fe, ke)) in self.elements.iter().zip(&self.slots).zip(&per) {
            for a in 0..8 {
                let na = conn[a];
                for i in 0..3 {
                    r[3 * na + i] += fe[3 * a + i];
                    let row_start = self.row_ptr[3 * na + i];
                    for b in 0..8 {
                        let base = row_start + 3 * slots[a][b] as usize;
                        let k = (3 * a + i) * 24 + 3 * b;
                        values[base] += ke[k];
                        values[base + 1] += ke[k + 1];
                        values[base + 2] += ke[k + 2];
                    }
                }
            }
        }
        let k = CsrMatrix::from_parts(self.ndof, self.row_ptr.clone(), self.col_idx.clone(), values);
        (r, k)
    }

    /// Serial element loop handing out per-element force and tangent.
    pub fn for_each_element_tangent(
        &self,
        u: &[f64],
        m: &MaterialParams,
        mut visit: impl FnMut(&[usize; 8], &[f64; 24], &[f64; 576]),
    ) {
        let mut fe = [0.0; 24];
        let mut ke = [0.0; 576];
        for (conn, geo) in self.elements.iter().zip(&self.geometry) {
            element_tangent(geo, &gather(conn, u), m, &mut fe, &mut ke);
            visit(conn, &fe, &ke);
        }
    }

    /// Number of elements with at least one inverted Gauss point.
    pub fn inverted_elements(&self, u: &[f64]) -> usize {
        self.elements
            .iter()
            .zip(&self.geometry)
            .filter(|(conn, geo)| inverted_points(geo, &gather(conn, u)) > 0)
            .count()
    }
}

/// Internal elastic force vector `r(u)`.
pub fn internal_forces(mesh: &HexMesh, u: &[f64], m: &MaterialParams) -> Result<Vec<f64>> {
    Ok(Assembler::new(mesh)?.internal_forces(u, m))
}

/// Tangent stiffness `K(u) = ∂r/∂u`.
pub fn tangent_stiffness(mesh: &HexMesh, u: &[f64], m: &MaterialParams) -> Result<CsrMatrix> {
    Ok(Assembler::new(mesh)?.tangent(u, m).1)
}
