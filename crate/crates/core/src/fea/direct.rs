//! Banded Cholesky factorization of the assembled active-DOF stiffness.
//!
//! Equations are numbered with the axis of most nodes running slowest, which
//! bounds the half bandwidth by about three node layers of the two shorter
//! axes.

use super::operator::System;
use super::SolveError;

/// Pivots below this fraction of the largest diagonal entry mark the system singular.
const PIVOT_TOL: f64 = 1e-14;

struct BandedMatrix {
    n: usize,
    bw: usize,
    /// Row `i` holds columns `i - bw ..= i` at offsets `0 ..= bw`.
    data: Vec<f64>,
}

impl BandedMatrix {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    fn factor(&mut self) -> Result<(), SolveError> {
        let bw = self.bw;
        let w = bw + 1;
        let max_diag = (0..self.n).map(|i| self.data[self.idx(i, i)]).fold(0.0_f64, f64::max);
        let tol = PIVOT_TOL * max_diag;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let k0 = lo.max(j.saturating_sub(bw));
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                let mut s = self.data[ri + j];
                for k in k0..j {
                    s -= self.data[ri + k] * self.data[rj + k];
                }
                if i == j {
                    if !(s > tol) {
                        return Err(SolveError::SingularSystem);
                    }
                    self.data[ri + i] = s.sqrt();
                } else {
                    self.data[ri + j] = s / self.data[rj + j];
                }
            }
        }
        Ok(())
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let mut s = b[i];
            for k in lo..i {
                s -= self.data[self.idx(i, k)] * b[k];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
        for i in (0..self.n).rev() {
            let s = b[i] / self.data[self.idx(i, i)];
            b[i] = s;
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                b[k] -= self.data[self.idx(i, k)] * s;
            }
        }
    }
}

/// Maps every DOF to its equation number (`usize::MAX` when inactive).
fn equation_numbers(system: &System<'_>) -> (Vec<usize>, usize) {
    let mesh = system.mesh;
    let dims = mesh.node_dims();
    let mut axes = [0usize, 1, 2];
    // fastest axis first: fewest nodes, ties keep x before y before z
    axes.sort_by_key(|&a| dims[a]);
    let mut eq = vec![usize::MAX; mesh.dof_count()];
    let mut next = 0;
    let mut c = [0usize; 3];
    for s in 0..dims[axes[2]] {
        c[axes[2]] = s;
        for m in 0..dims[axes[1]] {
            c[axes[1]] = m;
            for f in 0..dims[axes[0]] {
                c[axes[0]] = f;
                let node = mesh.node_index(c[0], c[1], c[2]);
                for a in 0..3 {
                    if system.active()[3 * node + a] {
                        eq[3 * node + a] = next;
                        next += 1;
                    }
                }
            }
        }
    }
    (eq, next)
}

/// Solves the system exactly by assembling the active-DOF matrix and
/// factoring it. Returns the full-length displacement vector.
pub(crate) fn solve(system: &System<'_>) -> Result<Vec<f64>, SolveError> {
    let mesh = system.mesh;
    let (eq, n) = equation_numbers(system);
    let mut u = vec![0.0; mesh.dof_count()];
    if n == 0 {
        return Ok(u);
    }

    let mut bw = 0;
    for e in 0..mesh.element_count() {
        if system.young[e] <= 0.0 {
            continue;
        }
        let nodes = mesh.element_nodes_unchecked(e);
        let eqs = nodes.iter().flat_map(|n| (0..3).map(move |a| 3 * n + a)).map(|d| eq[d]).filter(|q| *q != usize::MAX);
        let (lo, hi) = eqs.fold((usize::MAX, 0), |(lo, hi), q| (lo.min(q), hi.max(q)));
        if lo != usize::MAX {
            bw = bw.max(hi - lo);
        }
    }

    let mut k = BandedMatrix { n, bw, data: vec![0.0; n * (bw + 1)] };
    for e in 0..mesh.element_count() {
        let modulus = system.young[e];
        if modulus <= 0.0 {
            continue;
        }
        let nodes = mesh.element_nodes_unchecked(e);
        let mut local = [usize::MAX; 24];
        for (j, n) in nodes.iter().enumerate() {
            for a in 0..3 {
                local[3 * j + a] = eq[3 * n + a];
            }
        }
        for p in 0..24 {
            let qp = local[p];
            if qp == usize::MAX {
                continue;
            }
            for q in 0..24 {
                let qq = local[q];
                if qq == usize::MAX || qq > qp {
                    continue;
                }
                let at = k.idx(qp, qq);
                k.data[at] += modulus * system.ke.get(p, q);
            }
        }
    }
    k.factor()?;

    let f = system.force;
    let mut rhs = vec![0.0; n];
    for (dof, q) in eq.iter().enumerate() {
        if *q != usize::MAX {
            rhs[*q] = f[dof];
        }
    }
    k.solve_in_place(&mut rhs);
    for (dof, q) in eq.iter().enumerate() {
        if *q != usize::MAX {
            u[dof] = rhs[*q];
        }
    }
    Ok(u)
}
