//! Cylinder geometry `Ω₀ × (0, L)` with a rectangular cross-section, its uniform
//! vertex-centred grid and the boundary frames of every boundary node.
//!
//! Axis 0 is the flow direction `x₁`; axes 1 and 2 span the cross-section.
//! Nodes are stored with the axis-0 index varying fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible number of cells along any axis.
pub const MIN_CELLS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Axial extent `L`.
    pub length: f64,
    pub width2: f64,
    pub width3: f64,
    /// Cells per axis `(n1, n2, n3)`.
    pub cells: [usize; 3],
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self::new(2.0, 1.0, 1.0, [16, 8, 8])
    }
}

impl GeometryConfig {
    pub fn new(length: f64, width2: f64, width3: f64, cells: [usize; 3]) -> Self {
        Self {
            length,
            width2,
            width3,
            cells,
        }
    }

    pub fn extents(&self) -> [f64; 3] {
        [self.length, self.width2, self.width3]
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, extent) in self.extents().into_iter().enumerate() {
            if !(extent.is_finite() && extent > 0.0) {
                return Err(Error::InvalidGeometry(format!(
                    "extent along axis {axis} must be positive and finite, got {extent}"
                )));
            }
        }
        for (axis, &count) in self.cells.iter().enumerate() {
            if count < MIN_CELLS {
                return Err(Error::CellCountBelowMinimum {
                    axis,
                    count,
                    minimum: MIN_CELLS,
                });
            }
        }
        Ok(())
    }

    /// Same extents, cell counts multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            cells: self.cells.map(|n| n * factor),
            ..*self
        }
    }
}

/// Uniform tensor-product grid. Cheap to copy; coordinates are computed on demand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    geometry: GeometryConfig,
    spacing: [f64; 3],
    nodes: [usize; 3],
}

pub fn build_grid(cfg: GeometryConfig) -> Result<Grid> {
    Grid::new(cfg)
}

impl Grid {
    pub fn new(geometry: GeometryConfig) -> Result<Self> {
        geometry.validate()?;
        let extents = geometry.extents();
        let spacing = [0, 1, 2].map(|a| extents[a] / geometry.cells[a] as f64);
        if spacing.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::InvalidGeometry(format!(
                "grid spacing {spacing:?} is not finite and positive"
            )));
        }
        Ok(Self {
            geometry,
            spacing,
            nodes: geometry.cells.map(|n| n + 1),
        })
    }

    pub fn geometry(&self) -> &GeometryConfig {
        &self.geometry
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Node counts per axis, `cells + 1`.
    pub fn nodes(&self) -> [usize; 3] {
        self.nodes
    }

    pub fn cells(&self) -> [usize; 3] {
        self.geometry.cells
    }

    pub fn extents(&self) -> [f64; 3] {
        self.geometry.extents()
    }

    pub fn len(&self) -> usize {
        self.nodes[0] * self.nodes[1] * self.nodes[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> [usize; 3] {
        [1, self.nodes[0], self.nodes[0] * self.nodes[1]]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nodes[0] * (j + self.nodes[1] * k)
    }

    #[inline]
    pub fn index_of(&self, c: [usize; 3]) -> usize {
        self.index(c[0], c[1], c[2])
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.nodes[0];
        let rest = idx / self.nodes[0];
        [i, rest % self.nodes[1], rest / self.nodes[1]]
    }

    #[inline]
    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        i as f64 * self.spacing[axis]
    }

    #[inline]
    pub fn position(&self, c: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.coordinate(a, c[a]))
    }

    pub fn position_of(&self, idx: usize) -> [f64; 3] {
        self.position(self.coords(idx))
    }

    /// True if the index lies on the lower or upper end of `axis`.
    #[inline]
    pub fn is_end(&self, axis: usize, i: usize) -> bool {
        i == 0 || i + 1 == self.nodes[axis]
    }

    pub fn is_interior(&self, c: [usize; 3]) -> bool {
        (0..3).all(|a| !self.is_end(a, c[a]))
    }

    /// Faces the node lies on, in `Face::ALL` order.
    pub fn faces_of(&self, c: [usize; 3]) -> Vec<Face> {
        Face::ALL
            .into_iter()
            .filter(|f| c[f.axis()] == f.index_on(self))
            .collect()
    }

    /// Trapezoidal volume weight of a node.
    #[inline]
    pub fn volume_weight(&self, c: [usize; 3]) -> f64 {
        (0..3)
            .map(|a| {
                let h = self.spacing[a];
                if self.is_end(a, c[a]) {
                    0.5 * h
                } else {
                    h
                }
            })
            .product()
    }

    /// 2D trapezoidal weight of a node within an `x₁`-slice.
    #[inline]
    pub fn slice_weight(&self, j: usize, k: usize) -> f64 {
        let w = |a: usize, i: usize| {
            if self.is_end(a, i) {
                0.5 * self.spacing[a]
            } else {
                self.spacing[a]
            }
        };
        w(1, j) * w(2, k)
    }

    /// One-dimensional edge-excluded boundary rule along `axis`: zero at both ends,
    /// `1.5 h` next to the ends and `h` elsewhere. Exact for constants.
    #[inline]
    pub fn edge_excluded_weight(&self, axis: usize, i: usize) -> f64 {
        let n = self.geometry.cells[axis];
        let h = self.spacing[axis];
        if i == 0 || i == n {
            0.0
        } else if i == 1 || i + 1 == n {
            1.5 * h
        } else {
            h
        }
    }

    /// Boundary quadrature weight of a node on `face` (zero on edges).
    pub fn face_weight(&self, face: Face, c: [usize; 3]) -> f64 {
        let [b, d] = face.tangential_axes();
        self.edge_excluded_weight(b, c[b]) * self.edge_excluded_weight(d, c[d])
    }

    /// All nodes of a face, edges included, with their boundary weights.
    pub fn face_nodes(&self, face: Face) -> Vec<(usize, [usize; 3], f64)> {
        let a = face.axis();
        let [b, d] = face.tangential_axes();
        let fixed = face.index_on(self);
        let mut out = Vec::with_capacity(self.nodes[b] * self.nodes[d]);
        for q in 0..self.nodes[d] {
            for p in 0..self.nodes[b] {
                let mut c = [0usize; 3];
                c[a] = fixed;
                c[b] = p;
                c[d] = q;
                out.push((self.index_of(c), c, self.face_weight(face, c)));
            }
        }
        out
    }

    /// Nodes with every index strictly inside the grid.
    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&idx| self.is_interior(self.coords(idx)))
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.nodes == other.nodes && self.spacing == other.spacing
    }
}

/// One of the six flat faces of the rectangular cylinder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Face {
    /// `x₁ = 0`, the inflow face.
    X1Min,
    /// `x₁ = L`, the outflow face.
    X1Max,
    X2Min,
    X2Max,
    X3Min,
    X3Max,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::X1Min,
        Face::X1Max,
        Face::X2Min,
        Face::X2Max,
        Face::X3Min,
        Face::X3Max,
    ];

    pub fn axis(self) -> usize {
        match self {
            Face::X1Min | Face::X1Max => 0,
            Face::X2Min | Face::X2Max => 1,
            Face::X3Min | Face::X3Max => 2,
        }
    }

    /// `-1` on the lower face of an axis, `+1` on the upper one.
    pub fn sign(self) -> f64 {
        match self {
            Face::X1Min | Face::X2Min | Face::X3Min => -1.0,
            _ => 1.0,
        }
    }

    pub fn is_lower(self) -> bool {
        self.sign() < 0.0
    }

    pub fn index_on(self, grid: &Grid) -> usize {
        if self.is_lower() {
            0
        } else {
            grid.cells()[self.axis()]
        }
    }

    pub fn tangential_axes(self) -> [usize; 2] {
        match self.axis() {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }

    pub fn region(self) -> Region {
        match self {
            Face::X1Min => Region::Inflow,
            Face::X1Max => Region::Outflow,
            _ => Region::Lateral,
        }
    }

    pub fn normal(self) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[self.axis()] = self.sign();
        n
    }

    /// `(τ₁, τ₂)` with `τ₂ = n × τ₁`, so `(n, τ₁, τ₂)` is right-handed.
    pub fn tangents(self) -> ([f64; 3], [f64; 3]) {
        let t1 = match self.axis() {
            0 => [0.0, 1.0, 0.0],
            _ => [1.0, 0.0, 0.0],
        };
        (t1, cross(self.normal(), t1))
    }

    pub fn name(self) -> &'static str {
        match self {
            Face::X1Min => "x1_min",
            Face::X1Max => "x1_max",
            Face::X2Min => "x2_min",
            Face::X2Max => "x2_max",
            Face::X3Min => "x3_min",
            Face::X3Max => "x3_max",
        }
    }
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Inflow,
    Outflow,
    Lateral,
    Edge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFrame {
    pub node: usize,
    pub coords: [usize; 3],
    pub region: Region,
    /// Every face the node lies on; more than one exactly for edge nodes.
    pub faces: Vec<Face>,
    pub normal: [f64; 3],
    pub tangent1: [f64; 3],
    pub tangent2: [f64; 3],
    /// Curvatures of the curves generated by the tangents; zero on flat faces.
    pub curvature: [f64; 2],
    pub weight: f64,
}

impl BoundaryFrame {
    pub fn is_edge(&self) -> bool {
        self.region == Region::Edge
    }

    pub fn face(&self) -> Face {
        self.faces[0]
    }
}

/// Frames of all boundary nodes plus a node → frame lookup.
#[derive(Clone, Debug)]
pub struct BoundaryFrames {
    frames: Vec<BoundaryFrame>,
    lookup: Vec<Option<usize>>,
}

pub fn boundary_frames(grid: &Grid) -> BoundaryFrames {
    BoundaryFrames::new(grid)
}

impl BoundaryFrames {
    pub fn new(grid: &Grid) -> Self {
        let mut frames = Vec::new();
        let mut lookup = vec![None; grid.len()];
        for idx in 0..grid.len() {
            let c = grid.coords(idx);
            let faces = grid.faces_of(c);
            if faces.is_empty() {
                continue;
            }
            let face = faces[0];
            let (t1, t2) = face.tangents();
            let edge = faces.len() > 1;
            let frame = BoundaryFrame {
                node: idx,
                coords: c,
                region: if edge { Region::Edge } else { face.region() },
                normal: face.normal(),
                tangent1: t1,
                tangent2: t2,
                curvature: [0.0, 0.0],
                weight: if edge { 0.0 } else { grid.face_weight(face, c) },
                faces,
            };
            lookup[idx] = Some(frames.len());
            frames.push(frame);
        }
        Self { frames, lookup }
    }

    pub fn iter(&self) -> impl Iterator<Item = &BoundaryFrame> {
        self.frames.iter()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, node: usize) -> Option<&BoundaryFrame> {
        self.lookup.get(node).copied().flatten().map(|i| &self.frames[i])
    }

    /// Face-interior frames of one face.
    pub fn on_face(&self, face: Face) -> impl Iterator<Item = &BoundaryFrame> {
        self.frames
            .iter()
            .filter(move |fr| !fr.is_edge() && fr.face() == face)
    }

    pub fn in_region(&self, region: Region) -> impl Iterator<Item = &BoundaryFrame> {
        self.frames.iter().filter(move |fr| fr.region == region)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid() -> Grid {
        build_grid(GeometryConfig::new(2.0, 1.0, 1.0, [8, 4, 4])).unwrap()
    }

    #[test]
    fn builds_expected_node_counts_and_spacing() {
        let g = unit_grid();
        assert_eq!(g.nodes(), [9, 5, 5]);
        assert_eq!(g.spacing(), [0.25, 0.25, 0.25]);
    }

    #[test]
    fn corner_node_lands_on_corner() {
        let g = build_grid(GeometryConfig::new(1.0, 1.0, 1.0, [4, 4, 4])).unwrap();
        assert_eq!(g.position([4, 4, 4]), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_coarse_and_degenerate_geometries() {
        let err = build_grid(GeometryConfig::new(1.0, 1.0, 1.0, [2, 4, 4])).unwrap_err();
        assert!(err.to_string().contains("cell count below minimum"));
        assert!(build_grid(GeometryConfig::new(0.0, 1.0, 1.0, [4, 4, 4])).is_err());
        assert!(build_grid(GeometryConfig::new(1.0, -1.0, 1.0, [4, 4, 4])).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let g = unit_grid();
        for idx in 0..g.len() {
            assert_eq!(g.index_of(g.coords(idx)), idx);
        }
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 9);
    }

    #[test]
    fn inflow_and_lateral_frames() {
        let g = unit_grid();
        let frames = boundary_frames(&g);
        let fr = frames.get(g.index(0, 2, 2)).unwrap();
        assert_eq!(fr.region, Region::Inflow);
        assert_eq!(fr.normal, [-1.0, 0.0, 0.0]);

        let fr = frames.get(g.index(3, 4, 2)).unwrap();
        assert_eq!(fr.region, Region::Lateral);
        assert_eq!(fr.normal, [0.0, 1.0, 0.0]);
        assert_eq!(fr.tangent1, [1.0, 0.0, 0.0]);
        assert_eq!(fr.curvature, [0.0, 0.0]);
    }

    #[test]
    fn frames_orthonormal_and_right_handed() {
        let g = unit_grid();
        for fr in boundary_frames(&g).iter().filter(|f| !f.is_edge()) {
            let (n, t1, t2) = (fr.normal, fr.tangent1, fr.tangent2);
            for v in [n, t1, t2] {
                assert!((dot(v, v) - 1.0).abs() < 1e-14);
            }
            assert!(dot(n, t1).abs() < 1e-14);
            assert!(dot(n, t2).abs() < 1e-14);
            assert!(dot(t1, t2).abs() < 1e-14);
            assert_eq!(cross(n, t1), t2);
            if fr.region == Region::Lateral {
                assert_eq!(n[0], 0.0);
            }
        }
    }

    #[test]
    fn tags_partition_boundary_and_edges_are_multi_face() {
        let g = unit_grid();
        let frames = boundary_frames(&g);
        let boundary_count = (0..g.len())
            .filter(|&i| !g.is_interior(g.coords(i)))
            .count();
        assert_eq!(frames.len(), boundary_count);
        for fr in frames.iter() {
            assert_eq!(fr.is_edge(), g.faces_of(fr.coords).len() >= 2);
            if fr.is_edge() {
                assert_eq!(fr.weight, 0.0);
            }
        }
        assert!(g.interior_nodes().all(|i| frames.get(i).is_none()));
    }

    #[test]
    fn face_weights_sum_to_face_areas() {
        let g = unit_grid();
        let frames = boundary_frames(&g);
        let ext = g.extents();
        for face in Face::ALL {
            let [b, d] = face.tangential_axes();
            let sum: f64 = frames.on_face(face).map(|f| f.weight).sum();
            assert!((sum - ext[b] * ext[d]).abs() < 1e-14, "{face:?}: {sum}");
        }
    }
}
