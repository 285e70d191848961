//! Box domain, voxel discretization and the boundary-entity catalog.
//!
//! Nodes are numbered lexicographically with x fastest:
//! `node = ix + iy·(nx+1) + iz·(nx+1)(ny+1)`, and DOF `3·node + axis`.
//! Elements follow the same rule over `(nx, ny, nz)`. With this numbering a
//! boundary node is classified by how many of its coordinates sit at an
//! extreme (1 → face interior, 2 → edge interior, 3 → vertex).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MeshError {
    #[error("invalid {what}: {value} (must be finite and > 0)")]
    InvalidLength { what: &'static str, value: f64 },
    #[error("element index {index} out of range (mesh has {count} elements)")]
    ElementOutOfRange { index: usize, count: usize },
    #[error("unknown boundary entity id {0:?}")]
    UnknownEntity(String),
}

/// Physical box plus its pose. The pose is rendering metadata only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    #[serde(default)]
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

impl DomainSpec {
    pub fn new(lx: f64, ly: f64, lz: f64) -> Self {
        Self { lx, ly, lz, position: [0.0; 3], yaw: 0.0 }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        positive("lx", self.lx)?;
        positive("ly", self.ly)?;
        positive("lz", self.lz)?;
        if !self.position.iter().all(|v| v.is_finite()) || !self.yaw.is_finite() {
            return Err(MeshError::InvalidLength { what: "pose", value: f64::NAN });
        }
        Ok(())
    }
}

fn positive(what: &'static str, value: f64) -> Result<(), MeshError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(MeshError::InvalidLength { what, value })
    }
}

/// Structured grid of cubic voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshTopology {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Element edge length in meters.
    pub h: f64,
}

/// Derives the voxel grid: `n = max(1, round(l / elem_size))` per axis.
pub fn build_mesh(domain: &DomainSpec, elem_size: f64) -> Result<MeshTopology, MeshError> {
    domain.validate()?;
    positive("elem_size", elem_size)?;
    let count = |l: f64| ((l / elem_size).round() as usize).max(1);
    Ok(MeshTopology { nx: count(domain.lx), ny: count(domain.ly), nz: count(domain.lz), h: elem_size })
}

impl MeshTopology {
    pub fn new(nx: usize, ny: usize, nz: usize, h: f64) -> Result<Self, MeshError> {
        positive("h", h)?;
        for (what, n) in [("nx", nx), ("ny", ny), ("nz", nz)] {
            if n == 0 {
                return Err(MeshError::InvalidLength { what, value: 0.0 });
            }
        }
        Ok(Self { nx, ny, nz, h })
    }

    /// Unit-size mesh, convenient in tests and benches.
    pub fn grid(nx: usize, ny: usize, nz: usize) -> Self {
        Self::new(nx, ny, nz, 1.0).expect("grid dimensions must be >= 1")
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn node_dims(&self) -> [usize; 3] {
        [self.nx + 1, self.ny + 1, self.nz + 1]
    }

    pub fn element_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1) * (self.nz + 1)
    }

    pub fn dof_count(&self) -> usize {
        3 * self.node_count()
    }

    #[inline]
    pub fn node_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + (self.nx + 1) * (iy + (self.ny + 1) * iz)
    }

    #[inline]
    pub fn node_coords(&self, node: usize) -> [usize; 3] {
        let sx = self.nx + 1;
        let sy = self.ny + 1;
        [node % sx, (node / sx) % sy, node / (sx * sy)]
    }

    #[inline]
    pub fn element_index(&self, ex: usize, ey: usize, ez: usize) -> usize {
        ex + self.nx * (ey + self.ny * ez)
    }

    #[inline]
    pub fn element_coords(&self, e: usize) -> [usize; 3] {
        [e % self.nx, (e / self.nx) % self.ny, e / (self.nx * self.ny)]
    }

    /// Corner nodes of element `e`; local node `k` has offsets
    /// `(k & 1, (k >> 1) & 1, (k >> 2) & 1)`.
    pub fn element_nodes(&self, e: usize) -> Result<[usize; 8], MeshError> {
        let count = self.element_count();
        if e >= count {
            return Err(MeshError::ElementOutOfRange { index: e, count });
        }
        Ok(self.element_nodes_unchecked(e))
    }

    #[inline]
    pub(crate) fn element_nodes_unchecked(&self, e: usize) -> [usize; 8] {
        let [ex, ey, ez] = self.element_coords(e);
        let base = self.node_index(ex, ey, ez);
        let sx = self.nx + 1;
        let sxy = sx * (self.ny + 1);
        let mut nodes = [0; 8];
        for (k, n) in nodes.iter_mut().enumerate() {
            *n = base + (k & 1) + ((k >> 1) & 1) * sx + ((k >> 2) & 1) * sxy;
        }
        nodes
    }

    /// Elements incident to `node`, paired with the node's local index in each,
    /// in ascending element order.
    pub fn node_elements(&self, node: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let [ix, iy, iz] = self.node_coords(node);
        (0..8usize).rev().filter_map(move |k| {
            let (dx, dy, dz) = (k & 1, (k >> 1) & 1, (k >> 2) & 1);
            let ex = ix.checked_sub(dx).filter(|&v| v < self.nx)?;
            let ey = iy.checked_sub(dy).filter(|&v| v < self.ny)?;
            let ez = iz.checked_sub(dz).filter(|&v| v < self.nz)?;
            Some((self.element_index(ex, ey, ez), k))
        })
    }

    /// Number of coordinates of `node` that sit at 0 or at the axis maximum.
    pub fn extremity_count(&self, node: usize) -> usize {
        let c = self.node_coords(node);
        c.iter().zip(self.dims()).filter(|&(&i, n)| i == 0 || i == n).count()
    }
}

/// Where an entity sits along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Min,
    Max,
    Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Face,
    Edge,
    Vertex,
}

/// One of the 26 topological features of the box boundary.
///
/// Faces are indexed x-, x+, y-, y+, z-, z+. Edges are grouped by the axis
/// they run along (x, then y, then z), and within a group by the two fixed
/// sides with the lower axis fastest. Vertices use bit `a` of the index for
/// the side of axis `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoundaryEntity {
    sides: [Side; 3],
}

const AXES: [char; 3] = ['x', 'y', 'z'];

impl BoundaryEntity {
    pub fn face(index: usize) -> Self {
        assert!(index < 6, "face index out of range");
        let mut sides = [Side::Span; 3];
        sides[index / 2] = if index % 2 == 0 { Side::Min } else { Side::Max };
        Self { sides }
    }

    pub fn edge(index: usize) -> Self {
        assert!(index < 12, "edge index out of range");
        let along = index / 4;
        let bits = index % 4;
        let mut sides = [Side::Span; 3];
        let fixed: Vec<usize> = (0..3).filter(|&a| a != along).collect();
        for (b, &axis) in fixed.iter().enumerate() {
            sides[axis] = if (bits >> b) & 1 == 0 { Side::Min } else { Side::Max };
        }
        Self { sides }
    }

    pub fn vertex(index: usize) -> Self {
        assert!(index < 8, "vertex index out of range");
        let mut sides = [Side::Min; 3];
        for (a, s) in sides.iter_mut().enumerate() {
            if (index >> a) & 1 == 1 {
                *s = Side::Max;
            }
        }
        Self { sides }
    }

    pub fn sides(&self) -> [Side; 3] {
        self.sides
    }

    pub fn kind(&self) -> EntityKind {
        match self.sides.iter().filter(|s| **s != Side::Span).count() {
            1 => EntityKind::Face,
            2 => EntityKind::Edge,
            _ => EntityKind::Vertex,
        }
    }

    pub fn index(&self) -> usize {
        let bit = |s: Side| usize::from(s == Side::Max);
        match self.kind() {
            EntityKind::Face => {
                let a = self.sides.iter().position(|s| *s != Side::Span).unwrap_or(0);
                2 * a + bit(self.sides[a])
            }
            EntityKind::Edge => {
                let along = self.sides.iter().position(|s| *s == Side::Span).unwrap_or(0);
                let mut bits = 0;
                for (b, a) in (0..3).filter(|&a| a != along).enumerate() {
                    bits |= bit(self.sides[a]) << b;
                }
                4 * along + bits
            }
            EntityKind::Vertex => (0..3).map(|a| bit(self.sides[a]) << a).sum(),
        }
    }

    pub fn id(&self) -> String {
        self.to_string()
    }

    /// Whether `node` lies in the closed node set (entity plus its bounding
    /// edges and vertices).
    pub fn contains_closed(&self, mesh: &MeshTopology, node: usize) -> bool {
        let c = mesh.node_coords(node);
        let dims = mesh.dims();
        (0..3).all(|a| match self.sides[a] {
            Side::Min => c[a] == 0,
            Side::Max => c[a] == dims[a],
            Side::Span => true,
        })
    }

    /// Closed (`closure = true`) or strictly interior node set, ascending.
    pub fn nodes(&self, mesh: &MeshTopology, closure: bool) -> Vec<usize> {
        let dims = mesh.dims();
        let range = |a: usize| -> (usize, usize) {
            match self.sides[a] {
                Side::Min => (0, 0),
                Side::Max => (dims[a], dims[a]),
                Side::Span if closure => (0, dims[a]),
                Side::Span => (1, dims[a].saturating_sub(1)),
            }
        };
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let (z0, z1) = range(2);
        let mut out = Vec::new();
        if x0 > x1 || y0 > y1 || z0 > z1 {
            return out;
        }
        for iz in z0..=z1 {
            for iy in y0..=y1 {
                for ix in x0..=x1 {
                    out.push(mesh.node_index(ix, iy, iz));
                }
            }
        }
        out
    }
}

impl fmt::Display for BoundaryEntity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind() {
            EntityKind::Face => "face",
            EntityKind::Edge => "edge",
            EntityKind::Vertex => "vertex",
        };
        write!(f, "{kind}:")?;
        for (a, s) in self.sides.iter().enumerate() {
            match s {
                Side::Min => write!(f, "{}-", AXES[a])?,
                Side::Max => write!(f, "{}+", AXES[a])?,
                Side::Span => {}
            }
        }
        Ok(())
    }
}

impl FromStr for BoundaryEntity {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MeshError::UnknownEntity(s.to_string());
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let bytes = rest.as_bytes();
        if bytes.len() % 2 != 0 {
            return Err(bad());
        }
        let mut sides = [Side::Span; 3];
        let mut last_axis = None;
        for pair in bytes.chunks(2) {
            let axis = match pair[0] {
                b'x' => 0,
                b'y' => 1,
                b'z' => 2,
                _ => return Err(bad()),
            };
            // axes must appear in increasing order, each at most once
            if last_axis.is_some_and(|l| l >= axis) {
                return Err(bad());
            }
            last_axis = Some(axis);
            sides[axis] = match pair[1] {
                b'-' => Side::Min,
                b'+' => Side::Max,
                _ => return Err(bad()),
            };
        }
        let entity = Self { sides };
        let fixed = bytes.len() / 2;
        let expected = match kind {
            "face" => 1,
            "edge" => 2,
            "vertex" => 3,
            _ => return Err(bad()),
        };
        if fixed != expected {
            return Err(bad());
        }
        Ok(entity)
    }
}

impl Serialize for BoundaryEntity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BoundaryEntity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All 26 entities: 6 faces, 12 edges, 8 vertices. Independent of resolution.
pub fn boundary_entities() -> Vec<BoundaryEntity> {
    (0..6)
        .map(BoundaryEntity::face)
        .chain((0..12).map(BoundaryEntity::edge))
        .chain((0..8).map(BoundaryEntity::vertex))
        .collect()
}
