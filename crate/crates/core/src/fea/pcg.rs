//! Jacobi-preconditioned conjugate gradients on the matrix-free operator.

use crate::exec;

use super::operator::System;
use super::{SolveError, SolverConfig};

pub(crate) struct PcgOutcome {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub element_ops: u64,
    pub residual: f64,
}

/// Stops when `sqrt(rᵀM⁻¹r / bᵀM⁻¹b) <= tol`.
pub(crate) fn solve(system: &System<'_>, config: &SolverConfig, u0: Option<&[f64]>) -> Result<PcgOutcome, SolveError> {
    let n = system.dof_count();
    let maxit = config.max_iterations(n);
    let per_apply = system.active_elements() as u64;
    let mut element_ops = 0;

    let b = system.masked_force();
    let inv_diag: Vec<f64> = system.diagonal().iter().map(|d| 1.0 / d).collect();
    let b_norm = exec::sum_indexed(n, |i| b[i] * b[i] * inv_diag[i]).sqrt();

    let mut x = match u0 {
        Some(u0) if config.warm_start && u0.len() == n => u0.to_vec(),
        _ => vec![0.0; n],
    };
    system.project(&mut x);

    let mut r = vec![0.0; n];
    system.apply(&x, &mut r);
    element_ops += per_apply;
    for (ri, bi) in r.iter_mut().zip(&b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = exec::dot(&r, &z);

    let mut iterations = 0;
    loop {
        let residual = rz.max(0.0).sqrt() / b_norm;
        if residual <= config.pcg_tol {
            return Ok(PcgOutcome { u: x, iterations, element_ops, residual });
        }
        if iterations >= maxit {
            return Err(SolveError::NoConvergence { iterations, residual });
        }
        system.apply(&p, &mut q);
        element_ops += per_apply;
        let pq = exec::dot(&p, &q);
        if !(pq > 0.0) {
            // operator lost definiteness on the search direction
            return Err(SolveError::NoConvergence { iterations, residual });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = exec::dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
    }
}
