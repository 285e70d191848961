//! Matrix-free global stiffness operator restricted to the active DOFs.

use crate::exec;
use crate::mesh::MeshTopology;

use super::stiffness::ElementStiffness;

/// Linear system `K(x) u = f` over the active DOFs of a voxel mesh.
///
/// An element with `young[e] == 0` is excluded from the operator. A DOF is
/// active when it is not clamped and its node touches at least one included
/// element; inactive DOFs carry exactly zero displacement.
pub struct System<'a> {
    pub mesh: &'a MeshTopology,
    pub ke: &'a ElementStiffness,
    pub young: &'a [f64],
    pub force: &'a [f64],
    active: Vec<bool>,
    active_elements: usize,
    supported: bool,
}

impl<'a> System<'a> {
    pub fn new(
        mesh: &'a MeshTopology,
        ke: &'a ElementStiffness,
        young: &'a [f64],
        clamped: &[bool],
        force: &'a [f64],
    ) -> Self {
        debug_assert_eq!(young.len(), mesh.element_count());
        debug_assert_eq!(clamped.len(), mesh.dof_count());
        debug_assert_eq!(force.len(), mesh.dof_count());
        let mut active = vec![false; mesh.dof_count()];
        for node in 0..mesh.node_count() {
            if mesh.node_elements(node).any(|(e, _)| young[e] > 0.0) {
                for a in 0..3 {
                    active[3 * node + a] = !clamped[3 * node + a];
                }
            }
        }
        let active_elements = young.iter().filter(|e| **e > 0.0).count();
        let supported = Self::is_supported(clamped, mesh);
        Self { mesh, ke, young, force, active, active_elements, supported }
    }

    pub fn dof_count(&self) -> usize {
        self.active.len()
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    /// At least three non-collinear fully clamped nodes.
    pub fn is_clamped_enough(&self) -> bool {
        self.supported
    }

    pub fn active_elements(&self) -> usize {
        self.active_elements
    }

    /// Right-hand side with inactive entries zeroed.
    pub fn masked_force(&self) -> Vec<f64> {
        self.force.iter().zip(&self.active).map(|(f, a)| if *a { *f } else { 0.0 }).collect()
    }

    pub fn project(&self, v: &mut [f64]) {
        for (x, a) in v.iter_mut().zip(&self.active) {
            if !*a {
                *x = 0.0;
            }
        }
    }

    /// `y = P K P u` computed node by node: each node gathers its three rows
    /// from its incident elements in ascending element order, so the result
    /// does not depend on how nodes are distributed over threads.
    pub fn apply(&self, u: &[f64], y: &mut [f64]) {
        let mesh = self.mesh;
        let ke = self.ke;
        let young = self.young;
        let active = &self.active;
        exec::for_each_chunk_mut(y, 3, |node, out| {
            if !(active[3 * node] || active[3 * node + 1] || active[3 * node + 2]) {
                out.fill(0.0);
                return;
            }
            let mut acc = [0.0; 3];
            for (e, k) in mesh.node_elements(node) {
                let modulus = young[e];
                if modulus <= 0.0 {
                    continue;
                }
                let nodes = mesh.element_nodes_unchecked(e);
                for (a, slot) in acc.iter_mut().enumerate() {
                    let row = ke.row(3 * k + a);
                    let mut s = 0.0;
                    for (j, &n) in nodes.iter().enumerate() {
                        s += row[3 * j] * u[3 * n] + row[3 * j + 1] * u[3 * n + 1] + row[3 * j + 2] * u[3 * n + 2];
                    }
                    *slot += modulus * s;
                }
            }
            for a in 0..3 {
                out[a] = if active[3 * node + a] { acc[a] } else { 0.0 };
            }
        });
    }

    /// Diagonal of the operator; 1 on inactive DOFs so it can precondition directly.
    pub fn diagonal(&self) -> Vec<f64> {
        let mesh = self.mesh;
        exec::map_indexed(mesh.dof_count(), |dof| {
            if !self.active[dof] {
                return 1.0;
            }
            let (node, a) = (dof / 3, dof % 3);
            mesh.node_elements(node)
                .filter(|(e, _)| self.young[*e] > 0.0)
                .map(|(e, k)| self.young[e] * self.ke.get(3 * k + a, 3 * k + a))
                .fold(0.0, |acc, v| acc + v)
        })
    }

    /// `‖P(K u − f)‖ / ‖P f‖`, or the absolute residual norm when the load is zero.
    pub fn relative_residual(&self, u: &[f64]) -> f64 {
        let mut r = vec![0.0; u.len()];
        self.apply(u, &mut r);
        let f = self.masked_force();
        for (ri, fi) in r.iter_mut().zip(&f) {
            *ri -= fi;
        }
        let fnorm = exec::dot(&f, &f).sqrt();
        let rnorm = exec::dot(&r, &r).sqrt();
        if fnorm > 0.0 {
            rnorm / fnorm
        } else {
            rnorm
        }
    }

    /// Clamped nodes sufficient to suppress all six rigid-body modes.
    pub(crate) fn is_supported(clamped: &[bool], mesh: &MeshTopology) -> bool {
        let pts: Vec<[f64; 3]> = (0..mesh.node_count())
            .filter(|n| clamped[3 * n] && clamped[3 * n + 1] && clamped[3 * n + 2])
            .map(|n| {
                let c = mesh.node_coords(n);
                [c[0] as f64, c[1] as f64, c[2] as f64]
            })
            .collect();
        let Some(p0) = pts.first() else { return false };
        let Some(p1) = pts.iter().find(|p| *p != p0) else { return false };
        let d1 = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
        pts.iter().any(|p| {
            let d2 = [p[0] - p0[0], p[1] - p0[1], p[2] - p0[2]];
            let cross = [d1[1] * d2[2] - d1[2] * d2[1], d1[2] * d2[0] - d1[0] * d2[2], d1[0] * d2[1] - d1[1] * d2[0]];
            cross.iter().any(|c| *c != 0.0)
        })
    }
}
