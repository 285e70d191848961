//! Optimality-criteria update with a bisected volume multiplier.

use crate::filter::DensityFilter;

use super::OptimizeError;

/// Doublings allowed while searching for a sign change of the volume residual.
pub const MAX_DOUBLINGS: usize = 128;
/// Bisection stops once `(hi − lo) / (hi + lo)` drops below this.
pub const LAMBDA_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct OcResult {
    pub x: Vec<f64>,
    pub lambda: f64,
    /// Mean filtered density of `x` over all elements, passive ones counted as 0.
    pub volume: f64,
    /// The target volume could not be reached inside the move limits; `x`
    /// sits at the nearest reachable bound.
    pub saturated: bool,
}

pub struct OcProblem<'a> {
    pub x: &'a [f64],
    pub dc: &'a [f64],
    pub dv: &'a [f64],
    pub passive: &'a [bool],
    pub filter: &'a DensityFilter,
    pub volfrac: f64,
    pub move_limit: f64,
    pub eta: f64,
}

/// `[x − m, x + m] ∩ [0, 1]`, tightened by an ulp where rounding would let
/// the computed step `|y − x|` exceed `m`.
pub fn move_bounds(x: f64, m: f64) -> (f64, f64) {
    let mut lo = x - m;
    while x - lo > m {
        lo = lo.next_up();
    }
    let mut hi = x + m;
    while hi - x > m {
        hi = hi.next_down();
    }
    (lo.max(0.0), hi.min(1.0))
}

impl OcProblem<'_> {
    /// `clamp(x·(−dc/(dv·λ))^η, x − move, x + move) ∩ [0, 1]`, passive at 0.
    pub fn candidate(&self, lambda: f64) -> Vec<f64> {
        self.x
            .iter()
            .enumerate()
            .map(|(e, &x)| {
                if self.passive[e] {
                    return 0.0;
                }
                let (lo, hi) = move_bounds(x, self.move_limit);
                let ratio = (-self.dc[e]).max(0.0) / (self.dv[e] * lambda);
                (x * ratio.powf(self.eta)).clamp(lo, hi)
            })
            .collect()
    }

    pub fn volume(&self, x: &[f64]) -> f64 {
        physical_volume(self.filter, x, self.passive)
    }

    pub fn solve(&self) -> Result<OcResult, OptimizeError> {
        let degenerate = self.x.iter().enumerate().all(|(e, _)| self.passive[e] || !(self.dc[e] < 0.0));
        let residual = |lambda: f64| self.volume(&self.candidate(lambda)) - self.volfrac;

        let start = 1.0;
        let (mut lo, mut hi);
        if residual(start) > 0.0 {
            // too much material: grow λ
            lo = start;
            hi = 2.0 * start;
            let mut n = 1;
            while residual(hi) > 0.0 {
                if n >= MAX_DOUBLINGS {
                    return self.saturate(hi, degenerate);
                }
                lo = hi;
                hi *= 2.0;
                n += 1;
            }
        } else {
            hi = start;
            lo = 0.5 * start;
            let mut n = 1;
            while residual(lo) <= 0.0 {
                if n >= MAX_DOUBLINGS {
                    return self.saturate(lo, degenerate);
                }
                hi = lo;
                lo *= 0.5;
                n += 1;
            }
        }
        while (hi - lo) / (hi + lo) > LAMBDA_REL_TOL {
            let mid = 0.5 * (lo + hi);
            if residual(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = 0.5 * (lo + hi);
        let x = self.candidate(lambda);
        let volume = self.volume(&x);
        Ok(OcResult { x, lambda, volume, saturated: false })
    }

    fn saturate(&self, lambda: f64, degenerate: bool) -> Result<OcResult, OptimizeError> {
        if degenerate {
            return Err(OptimizeError::BisectionFailure);
        }
        let x = self.candidate(lambda);
        let volume = self.volume(&x);
        log::warn!("volume target {} unreachable within move limits (reached {volume})", self.volfrac);
        Ok(OcResult { x, lambda, volume, saturated: true })
    }
}

/// Filtered densities with passive elements forced to 0.
pub fn physical_densities(filter: &DensityFilter, x: &[f64], passive: &[bool]) -> Vec<f64> {
    let mut phys = filter.filter_field(x).expect("design field matches mesh");
    for (p, &is_passive) in phys.iter_mut().zip(passive) {
        if is_passive {
            *p = 0.0;
        }
    }
    phys
}

pub fn physical_volume(filter: &DensityFilter, x: &[f64], passive: &[bool]) -> f64 {
    let phys = physical_densities(filter, x, passive);
    mean(&phys)
}

/// Mean in the chunked reduction order.
pub fn mean(v: &[f64]) -> f64 {
    crate::exec::sum_indexed(v.len(), |i| v[i]) / v.len() as f64
}
