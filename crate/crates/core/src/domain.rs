//! Regular grids, masked embeddings and the hexahedral meshes derived from them.
//!
//! Index conventions used throughout the crate:
//!
//! * grid nodes and cells are addressed by `(i, j, k)` and linearised x-fastest,
//!   `i + nx * (j + ny * k)`;
//! * H8 element nodes are ordered bottom face counter-clockwise, then top face
//!   counter-clockwise: `(0,0,0) (1,0,0) (1,1,0) (0,1,0) (0,0,1) (1,0,1) (1,1,1) (0,1,1)`;
//! * field tensors are channel-major with x fastest: `((c * pz + k) * py + j) * px + i`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Local offsets of the eight H8 nodes in the reference cell.
pub const HEX_CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

#[derive(Debug, Clone, PartialEq)]
pub struct RegularGrid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    cell_mask: Vec<bool>,
}

impl RegularGrid {
    /// Validates and builds a grid. A missing mask marks every cell active.
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        cell_mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if let Some(axis) = dims.iter().position(|&n| n < 2) {
            return Err(Error::InvalidGrid(format!(
                "axis {axis} has {} nodes, at least 2 required",
                dims[axis]
            )));
        }
        if spacing.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        let n_cells = (dims[0] - 1) * (dims[1] - 1) * (dims[2] - 1);
        let cell_mask = match cell_mask {
            Some(m) if m.len() != n_cells => {
                return Err(Error::InvalidGrid(format!(
                    "mask has {} entries, grid has {n_cells} cells",
                    m.len()
                )))
            }
            Some(m) => m,
            None => vec![true; n_cells],
        };
        if !cell_mask.iter().any(|&a| a) {
            return Err(Error::InvalidGrid("mask has no active cell".into()));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            cell_mask,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn cell_mask(&self) -> &[bool] {
        &self.cell_mask
    }

    pub fn cell_dims(&self) -> [usize; 3] {
        [self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1]
    }

    pub fn node_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn cell_count(&self) -> usize {
        self.cell_mask.len()
    }

    pub fn active_cell_count(&self) -> usize {
        self.cell_mask.iter().filter(|&&a| a).count()
    }

    pub fn node_linear(&self, [i, j, k]: [usize; 3]) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn cell_linear(&self, [i, j, k]: [usize; 3]) -> usize {
        let [cx, cy, _] = self.cell_dims();
        i + cx * (j + cy * k)
    }

    /// Activity of the cell at signed index; out-of-grid cells are inactive.
    pub fn cell_active(&self, i: isize, j: isize, k: isize) -> bool {
        let c = self.cell_dims();
        if i < 0 || j < 0 || k < 0 {
            return false;
        }
        let (i, j, k) = (i as usize, j as usize, k as usize);
        if i >= c[0] || j >= c[1] || k >= c[2] {
            return false;
        }
        self.cell_mask[self.cell_linear([i, j, k])]
    }

    pub fn node_position(&self, [i, j, k]: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    /// Number of active cells incident to a grid node (0..=8).
    fn incident_active(&self, [i, j, k]: [usize; 3]) -> usize {
        let (i, j, k) = (i as isize, j as isize, k as isize);
        let mut n = 0;
        for dk in [-1, 0] {
            for dj in [-1, 0] {
                for di in [-1, 0] {
                    if self.cell_active(i + di, j + dj, k + dk) {
                        n += 1;
                    }
                }
            }
        }
        n
    }
}

/// Side of an axis plane selected by a [`PlaneSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneAt {
    Min,
    Max,
    Index(usize),
}

/// Axis-aligned grid plane, written `x=0`, `z=max`, `y=min`, `x=3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PlaneSpec {
    pub axis: usize,
    pub at: PlaneAt,
}

impl FromStr for PlaneSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (axis, at) = s
            .split_once('=')
            .ok_or_else(|| Error::Boundary(format!("plane spec `{s}` is not of the form axis=value")))?;
        let axis = match axis.trim() {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            other => return Err(Error::Boundary(format!("unknown axis `{other}`"))),
        };
        let at = match at.trim() {
            "min" | "0" => PlaneAt::Min,
            "max" => PlaneAt::Max,
            n => PlaneAt::Index(
                n.parse()
                    .map_err(|_| Error::Boundary(format!("bad plane index `{n}`")))?,
            ),
        };
        Ok(Self { axis, at })
    }
}

impl TryFrom<String> for PlaneSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PlaneSpec> for String {
    fn from(p: PlaneSpec) -> String {
        p.to_string()
    }
}

impl fmt::Display for PlaneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axis = ["x", "y", "z"][self.axis];
        match self.at {
            PlaneAt::Min => write!(f, "{axis}=0"),
            PlaneAt::Max => write!(f, "{axis}=max"),
            PlaneAt::Index(n) => write!(f, "{axis}={n}"),
        }
    }
}

/// Predicate selecting mesh nodes by grid coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySpec {
    /// Active nodes lying on a grid plane.
    Plane(PlaneSpec),
    /// Explicit grid indices; every entry must be an active node.
    Nodes(Vec<[usize; 3]>),
    /// Active nodes inside an inclusive index box.
    Box { min: [usize; 3], max: [usize; 3] },
    /// Nodes on the boundary of the active cell set.
    Surface,
}

impl BoundarySpec {
    fn selects(&self, grid: &RegularGrid, ijk: [usize; 3]) -> bool {
        match self {
            BoundarySpec::Plane(p) => {
                let idx = match p.at {
                    PlaneAt::Min => 0,
                    PlaneAt::Max => grid.dims[p.axis] - 1,
                    PlaneAt::Index(n) => n,
                };
                ijk[p.axis] == idx
            }
            BoundarySpec::Nodes(list) => list.contains(&ijk),
            BoundarySpec::Box { min, max } => (0..3).all(|a| ijk[a] >= min[a] && ijk[a] <= max[a]),
            BoundarySpec::Surface => grid.incident_active(ijk) < 8,
        }
    }

    fn resolve(&self, grid: &RegularGrid, mesh_nodes: &[[usize; 3]], grid_to_node: &[Option<usize>]) -> Result<Vec<usize>> {
        if let BoundarySpec::Nodes(list) = self {
            let mut out = BTreeSet::new();
            for &ijk in list {
                if (0..3).any(|a| ijk[a] >= grid.dims[a]) {
                    return Err(Error::Boundary(format!("node {ijk:?} outside grid")));
                }
                let n = grid_to_node[grid.node_linear(ijk)]
                    .ok_or_else(|| Error::Boundary(format!("node {ijk:?} is not an active node")))?;
                out.insert(n);
            }
            return Ok(out.into_iter().collect());
        }
        Ok(mesh_nodes
            .iter()
            .enumerate()
            .filter(|(_, &ijk)| self.selects(grid, ijk))
            .map(|(n, _)| n)
            .collect())
    }
}

/// Hexahedral mesh over the active cells of a [`RegularGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct HexMesh {
    grid_dims: [usize; 3],
    node_coords: Vec<[f64; 3]>,
    elements: Vec<[usize; 8]>,
    node_grid_index: Vec<[usize; 3]>,
    grid_to_node: Vec<Option<usize>>,
    dirichlet_nodes: Vec<usize>,
    neumann_candidates: Vec<usize>,
}

/// Builds the mesh of the active cells and resolves the boundary sets.
///
/// Nodes are numbered in x-fastest grid order. With `allow_overlap` unset a
/// node selected by both specs is an error; when set, overlapping nodes stay
/// load candidates (a load there is carried entirely by the support).
pub fn mesh_from_grid(
    grid: &RegularGrid,
    dirichlet: &BoundarySpec,
    neumann: &BoundarySpec,
    allow_overlap: bool,
) -> Result<HexMesh> {
    let [nx, ny, nz] = grid.dims;
    let mut grid_to_node = vec![None; grid.node_count()];
    let mut node_grid_index = Vec::new();
    let mut node_coords = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if grid.incident_active([i, j, k]) > 0 {
                    grid_to_node[grid.node_linear([i, j, k])] = Some(node_grid_index.len());
                    node_grid_index.push([i, j, k]);
                    node_coords.push(grid.node_position([i, j, k]));
                }
            }
        }
    }
    let [cx, cy, cz] = grid.cell_dims();
    let mut elements = Vec::with_capacity(grid.active_cell_count());
    for k in 0..cz {
        for j in 0..cy {
            for i in 0..cx {
                if !grid.cell_mask[grid.cell_linear([i, j, k])] {
                    continue;
                }
                let mut conn = [0usize; 8];
                for (a, off) in HEX_CORNERS.iter().enumerate() {
                    let ijk = [i + off[0], j + off[1], k + off[2]];
                    conn[a] = grid_to_node[grid.node_linear(ijk)].expect("corner of an active cell is a mesh node");
                }
                elements.push(conn);
            }
        }
    }

    let dirichlet_nodes = dirichlet.resolve(grid, &node_grid_index, &grid_to_node)?;
    if dirichlet_nodes.is_empty() {
        return Err(Error::Boundary(
            "empty Dirichlet set: rigid-body modes make the tangent system singular".into(),
        ));
    }
    let neumann_candidates = neumann.resolve(grid, &node_grid_index, &grid_to_node)?;
    if !allow_overlap {
        let fixed: BTreeSet<_> = dirichlet_nodes.iter().collect();
        if let Some(n) = neumann_candidates.iter().find(|n| fixed.contains(n)) {
            return Err(Error::Boundary(format!(
                "node {:?} is both fixed and a load candidate",
                node_grid_index[*n]
            )));
        }
    }

    Ok(HexMesh {
        grid_dims: grid.dims,
        node_coords,
        elements,
        node_grid_index,
        grid_to_node,
        dirichlet_nodes,
        neumann_candidates,
    })
}

impl HexMesh {
    pub fn grid_dims(&self) -> [usize; 3] {
        self.grid_dims
    }

    pub fn node_count(&self) -> usize {
        self.node_coords.len()
    }

    pub fn dof_count(&self) -> usize {
        3 * self.node_coords.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn node_coords(&self) -> &[[f64; 3]] {
        &self.node_coords
    }

    pub fn elements(&self) -> &[[usize; 8]] {
        &self.elements
    }

    pub fn node_grid_index(&self) -> &[[usize; 3]] {
        &self.node_grid_index
    }

    pub fn dirichlet_nodes(&self) -> &[usize] {
        &self.dirichlet_nodes
    }

    pub fn neumann_candidates(&self) -> &[usize] {
        &self.neumann_candidates
    }

    /// Mesh node at grid index, if that grid node is active.
    pub fn node_at(&self, ijk: [usize; 3]) -> Option<usize> {
        if (0..3).any(|a| ijk[a] >= self.grid_dims[a]) {
            return None;
        }
        let [nx, ny, _] = self.grid_dims;
        self.grid_to_node[ijk[0] + nx * (ijk[1] + ny * ijk[2])]
    }

    /// Per-dof flag, true for constrained dofs.
    pub fn constrained_dofs(&self) -> Vec<bool> {
        let mut fixed = vec![false; self.dof_count()];
        for &n in &self.dirichlet_nodes {
            fixed[3 * n..3 * n + 3].fill(true);
        }
        fixed
    }
}

/// Zero-padded box around a grid whose sides are multiples of `2^steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddedShape {
    pub dims: [usize; 3],
    pub offset: [usize; 3],
}

/// Smallest `2^steps`-aligned box containing `grid_dims`, with the grid centred
/// (floor of half the slack on each axis).
pub fn padded_shape(grid_dims: [usize; 3], steps: u32) -> PaddedShape {
    let m = 1usize << steps;
    let mut dims = [0; 3];
    let mut offset = [0; 3];
    for a in 0..3 {
        dims[a] = grid_dims[a].div_ceil(m) * m;
        offset[a] = (dims[a] - grid_dims[a]) / 2;
    }
    PaddedShape { dims, offset }
}

impl PaddedShape {
    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Linear spatial index of a grid node inside the padded box.
    pub fn voxel_of(&self, [i, j, k]: [usize; 3]) -> usize {
        let [px, py, _] = self.dims;
        (i + self.offset[0]) + px * ((j + self.offset[1]) + py * (k + self.offset[2]))
    }

    /// True on voxels that carry a mesh node.
    pub fn node_mask(&self, mesh: &HexMesh) -> Vec<bool> {
        let mut mask = vec![false; self.voxel_count()];
        for &ijk in mesh.node_grid_index() {
            mask[self.voxel_of(ijk)] = true;
        }
        mask
    }

    fn check_fits(&self, mesh: &HexMesh) -> Result<()> {
        let g = mesh.grid_dims();
        if (0..3).any(|a| g[a] + self.offset[a] > self.dims[a]) {
            return Err(Error::ShapeMismatch {
                expected: format!("grid {g:?} inside padded box"),
                actual: format!("{:?} at offset {:?}", self.dims, self.offset),
            });
        }
        Ok(())
    }
}

/// Three-channel volumetric field over the padded grid (float32 storage).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTensor {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl FieldTensor {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![0.0; 3 * dims.iter().product::<usize>()],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let expected = 3 * dims.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} values for 3x{dims:?}"),
                actual: data.len().to_string(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn index(&self, c: usize, [i, j, k]: [usize; 3]) -> usize {
        let [px, py, pz] = self.dims;
        ((c * pz + k) * py + j) * px + i
    }

    pub fn get(&self, c: usize, ijk: [usize; 3]) -> f32 {
        self.data[self.index(c, ijk)]
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Writes nodal vectors (`3 * node_count` values, node-major) into a padded
/// tensor; every other entry is zero.
pub fn embed_field(mesh: &HexMesh, shape: &PaddedShape, values: &[f64]) -> Result<FieldTensor> {
    if values.len() != mesh.dof_count() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} nodal values", mesh.dof_count()),
            actual: values.len().to_string(),
        });
    }
    shape.check_fits(mesh)?;
    let mut t = FieldTensor::zeros(shape.dims);
    let vox = shape.voxel_count();
    for (n, &ijk) in mesh.node_grid_index().iter().enumerate() {
        let v = shape.voxel_of(ijk);
        for c in 0..3 {
            t.data[c * vox + v] = values[3 * n + c] as f32;
        }
    }
    Ok(t)
}

/// Inverse of [`embed_field`]: reads the mesh-node entries back out.
pub fn extract_field(tensor: &FieldTensor, mesh: &HexMesh, shape: &PaddedShape) -> Result<Vec<f64>> {
    if tensor.dims != shape.dims {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", shape.dims),
            actual: format!("{:?}", tensor.dims),
        });
    }
    shape.check_fits(mesh)?;
    let vox = shape.voxel_count();
    let mut out = vec![0.0; mesh.dof_count()];
    for (n, &ijk) in mesh.node_grid_index().iter().enumerate() {
        let v = shape.voxel_of(ijk);
        for c in 0..3 {
            out[3 * n + c] = tensor.data[c * vox + v] as f64;
        }
    }
    Ok(out)
}

/// Zeroes every entry that does not carry a mesh node.
pub fn zero_outside_mesh(tensor: &mut FieldTensor, mask: &[bool]) {
    let vox = tensor.voxel_count();
    for c in 0..3 {
        for (v, &m) in mask.iter().enumerate() {
            if !m {
                tensor.data[c * vox + v] = 0.0;
            }
        }
    }
}

const MASK_MAGIC: &str = "VOXMASK v1";

/// Parses a voxel occupancy mask: `VOXMASK v1`, `dims cx cy cz`, then
/// `cx*cy*cz` 0/1 values in x-fastest order.
pub fn parse_mask(text: &str) -> Result<([usize; 3], Vec<bool>)> {
    let bad = |msg: String| Error::InvalidGrid(format!("mask file: {msg}"));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(l) if l.trim() == MASK_MAGIC => {}
        other => return Err(bad(format!("expected `{MASK_MAGIC}` header, got {other:?}"))),
    }
    let dims_line = lines.next().ok_or_else(|| bad("missing dims line".into()))?;
    let mut parts = dims_line.split_whitespace();
    if parts.next() != Some("dims") {
        return Err(bad(format!("expected `dims cx cy cz`, got `{dims_line}`")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("bad dims line `{dims_line}`")))?;
    }
    let mut cells = Vec::with_capacity(dims.iter().product());
    for tok in lines.flat_map(str::split_whitespace) {
        match tok {
            "0" => cells.push(false),
            "1" => cells.push(true),
            t => return Err(bad(format!("unexpected token `{t}`"))),
        }
    }
    if cells.len() != dims.iter().product::<usize>() {
        return Err(bad(format!(
            "{} values for {dims:?} cells",
            cells.len()
        )));
    }
    Ok((dims, cells))
}

pub fn format_mask(dims: [usize; 3], cells: &[bool]) -> String {
    let mut s = format!("{MASK_MAGIC}\ndims {} {} {}\n", dims[0], dims[1], dims[2]);
    for row in cells.chunks(dims[0]) {
        let line: Vec<&str> = row.iter().map(|&c| if c { "1" } else { "0" }).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn beam() -> RegularGrid {
        RegularGrid::new([16, 4, 4], [4.0 / 15.0, 1.0 / 3.0, 1.0 / 3.0], [0.0; 3], None).unwrap()
    }

    #[test]
    fn coarse_beam_counts() {
        let g = beam();
        assert_eq!(g.node_count(), 256);
        assert_eq!(g.active_cell_count(), 15 * 3 * 3);
        let m = mesh_from_grid(&g, &BoundarySpec::Plane("x=0".parse().unwrap()), &BoundarySpec::Plane("z=max".parse().unwrap()), true).unwrap();
        assert_eq!(m.element_count(), 135);
        assert_eq!(m.dirichlet_nodes().len(), 16);
        assert_eq!(m.neumann_candidates().len(), 64);
    }

    #[test]
    fn fine_beam_and_minimal_grid() {
        let g = RegularGrid::new([28, 12, 12], [4.0 / 27.0, 1.0 / 11.0, 1.0 / 11.0], [0.0; 3], None).unwrap();
        assert_eq!(g.active_cell_count(), 3267);
        let g = RegularGrid::new([2, 2, 2], [1.0; 3], [0.0; 3], None).unwrap();
        assert_eq!(g.node_count(), 8);
        let m = mesh_from_grid(&g, &BoundarySpec::Plane("x=0".parse().unwrap()), &BoundarySpec::Plane("x=max".parse().unwrap()), false).unwrap();
        assert_eq!(m.dirichlet_nodes().len(), 4);
        assert_eq!(m.element_count(), 1);
    }

    #[test]
    fn grid_rejections() {
        assert!(RegularGrid::new([1, 4, 4], [1.0; 3], [0.0; 3], None).is_err());
        assert!(RegularGrid::new([2, 2, 2], [0.0, 1.0, 1.0], [0.0; 3], None).is_err());
        assert!(RegularGrid::new([3, 2, 2], [1.0; 3], [0.0; 3], Some(vec![true])).is_err());
        assert!(RegularGrid::new([3, 2, 2], [1.0; 3], [0.0; 3], Some(vec![false, false])).is_err());
    }

    #[test]
    fn boundary_errors() {
        let g = beam();
        let x0 = BoundarySpec::Plane("x=0".parse().unwrap());
        let empty = BoundarySpec::Nodes(vec![]);
        assert!(matches!(mesh_from_grid(&g, &empty, &x0, false), Err(Error::Boundary(_))));
        let top = BoundarySpec::Plane("z=max".parse().unwrap());
        assert!(matches!(mesh_from_grid(&g, &x0, &top, false), Err(Error::Boundary(_))));
        let off = BoundarySpec::Nodes(vec![[20, 0, 0]]);
        assert!(mesh_from_grid(&g, &off, &top, true).is_err());
    }

    #[test]
    fn masked_grid_keeps_touched_nodes_only() {
        // Two cells of a 2x1x1 cell grid, second one inactive.
        let g = RegularGrid::new([3, 2, 2], [1.0; 3], [0.0; 3], Some(vec![true, false])).unwrap();
        let m = mesh_from_grid(&g, &BoundarySpec::Plane("x=0".parse().unwrap()), &BoundarySpec::Surface, true).unwrap();
        assert_eq!(m.node_count(), 8);
        assert_eq!(m.node_at([2, 0, 0]), None);
        assert_eq!(m.neumann_candidates().len(), 8);
    }

    #[test]
    fn surface_of_solid_block() {
        let g = RegularGrid::new([4, 4, 4], [1.0; 3], [0.0; 3], None).unwrap();
        let m = mesh_from_grid(&g, &BoundarySpec::Plane("z=0".parse().unwrap()), &BoundarySpec::Surface, true).unwrap();
        assert_eq!(m.neumann_candidates().len(), 64 - 8);
    }

    #[test]
    fn plane_spec_parsing() {
        let p: PlaneSpec = "y=max".parse().unwrap();
        assert_eq!(p, PlaneSpec { axis: 1, at: PlaneAt::Max });
        assert_eq!("z=3".parse::<PlaneSpec>().unwrap().at, PlaneAt::Index(3));
        assert!("w=0".parse::<PlaneSpec>().is_err());
        let json = serde_json::to_string(&BoundarySpec::Plane(p)).unwrap();
        assert_eq!(json, r#"{"plane":"y=max"}"#);
        let back: BoundarySpec = serde_json::from_str(r#"{"box":{"min":[0,0,0],"max":[1,1,1]}}"#).unwrap();
        assert!(matches!(back, BoundarySpec::Box { .. }));
        let s: BoundarySpec = serde_json::from_str(r#""surface""#).unwrap();
        assert_eq!(s, BoundarySpec::Surface);
    }

    #[test]
    fn padding_examples() {
        assert_eq!(padded_shape([28, 12, 12], 4).dims, [32, 16, 16]);
        assert_eq!(padded_shape([16, 4, 4], 3).dims, [16, 8, 8]);
        let p = padded_shape([8, 8, 8], 3);
        assert_eq!(p, PaddedShape { dims: [8, 8, 8], offset: [0, 0, 0] });
        assert_eq!(padded_shape([16, 15, 16], 3).offset, [0, 0, 0]);
        assert_eq!(padded_shape([16, 13, 16], 3).offset, [0, 1, 0]);
    }

    #[test]
    fn embed_zero_and_one_hot() {
        let g = beam();
        let m = mesh_from_grid(&g, &BoundarySpec::Plane("x=0".parse().unwrap()), &BoundarySpec::Plane("z=max".parse().unwrap()), true).unwrap();
        let s = padded_shape(g.dims(), 3);
        let t = embed_field(&m, &s, &vec![0.0; m.dof_count()]).unwrap();
        assert!(t.as_slice().iter().all(|&v| v == 0.0));

        let node = m.node_at([5, 2, 3]).unwrap();
        let mut v = vec![0.0; m.dof_count()];
        v[3 * node + 1] = 2.5;
        let t = embed_field(&m, &s, &v).unwrap();
        let nonzero: Vec<usize> = t.as_slice().iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(i, _)| i).collect();
        assert_eq!(nonzero, vec![t.index(1, [5 + s.offset[0], 2 + s.offset[1], 3 + s.offset[2]])]);

        assert!(embed_field(&m, &s, &[1.0]).is_err());
        let wrong = FieldTensor::zeros([8, 8, 8]);
        assert!(extract_field(&wrong, &m, &s).is_err());
    }

    #[test]
    fn mask_file_round_trip() {
        let cells = vec![true, false, true, true, false, false];
        let text = format_mask([3, 2, 1], &cells);
        assert!(text.starts_with("VOXMASK v1\ndims 3 2 1\n"));
        assert_eq!(parse_mask(&text).unwrap(), ([3, 2, 1], cells));
        assert!(parse_mask("VOXMASK v1\ndims 2 1 1\n1").is_err());
        assert!(parse_mask("MASK\ndims 1 1 1\n1").is_err());
        assert!(parse_mask("VOXMASK v1\ndims 1 1 1\n2").is_err());
    }

    proptest! {
        #[test]
        fn all_active_grid_counts(n in 2usize..6, m in 2usize..6, p in 2usize..6) {
            let g = RegularGrid::new([n, m, p], [0.5, 1.0, 2.0], [0.0; 3], None).unwrap();
            let mesh = mesh_from_grid(&g, &BoundarySpec::Plane("x=0".parse().unwrap()), &BoundarySpec::Plane("x=max".parse().unwrap()), false).unwrap();
            prop_assert_eq!(mesh.element_count(), (n - 1) * (m - 1) * (p - 1));
            prop_assert_eq!(mesh.node_count(), n * m * p);
        }

        #[test]
        fn padding_is_idempotent(n in 2usize..40, m in 2usize..40, p in 2usize..40, k in 1u32..5) {
            let s = padded_shape([n, m, p], k);
            for a in 0..3 {
                prop_assert_eq!(s.dims[a] % (1 << k), 0);
                prop_assert!(s.dims[a] >= [n, m, p][a]);
            }
            let again = padded_shape(s.dims, k);
            prop_assert_eq!(again.dims, s.dims);
            prop_assert_eq!(again.offset, [0, 0, 0]);
        }

        #[test]
        fn embed_extract_round_trip(seed in any::<u64>(), holes in proptest::collection::vec(any::<bool>(), 27)) {
            use rand::{Rng, SeedableRng};
            let mut mask = holes;
            mask[0] = true;
            let g = RegularGrid::new([4, 4, 4], [1.0; 3], [0.0; 3], Some(mask)).unwrap();
            let mesh = mesh_from_grid(&g, &BoundarySpec::Nodes(vec![[0, 0, 0]]), &BoundarySpec::Surface, true).unwrap();
            let shape = padded_shape(g.dims(), 3);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..mesh.dof_count()).map(|_| rng.random::<f32>() as f64 - 0.5).collect();
            let t = embed_field(&mesh, &shape, &v).unwrap();
            let back = extract_field(&t, &mesh, &shape).unwrap();
            prop_assert_eq!(&back, &v);
            let node_mask = shape.node_mask(&mesh);
            let vox = shape.voxel_count();
            for c in 0..3 {
                for (i, &m) in node_mask.iter().enumerate() {
                    if !m {
                        prop_assert_eq!(t.as_slice()[c * vox + i], 0.0);
                    }
                }
            }
        }
    }
}
