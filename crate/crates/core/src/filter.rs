//! Cone density filter evaluated as a sequence of zero-padded 2-D convolutions.
//!
//! For every output z-slice the 3-D kernel is split into its z-slabs; each slab
//! is convolved in 2-D with the matching input slice and the slab results are
//! summed in ascending slab order.

use thiserror::Error;

use crate::exec;
use crate::mesh::MeshTopology;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FilterError {
    #[error("filter radius {0} must be finite and >= 1 (element units)")]
    InvalidRadius(f64),
    #[error("field has {got} entries, mesh has {expected} elements")]
    ShapeMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityFilter {
    dims: [usize; 3],
    rmin: f64,
    half_width: usize,
    /// `w(i,j,k)` stored x fastest over `-hw..=hw` per axis.
    weights: Vec<f64>,
    /// Zero-padded convolution of the kernel with the all-ones field.
    hs: Vec<f64>,
}

impl DensityFilter {
    pub fn new(mesh: &MeshTopology, rmin: f64) -> Result<Self, FilterError> {
        if !(rmin.is_finite() && rmin >= 1.0) {
            return Err(FilterError::InvalidRadius(rmin));
        }
        let half_width = (rmin.ceil() as usize).saturating_sub(1);
        let hw = half_width as isize;
        let mut weights = Vec::with_capacity((2 * half_width + 1).pow(3));
        for k in -hw..=hw {
            for j in -hw..=hw {
                for i in -hw..=hw {
                    let d = ((i * i + j * j + k * k) as f64).sqrt();
                    weights.push((rmin - d).max(0.0));
                }
            }
        }
        let mut filter = Self { dims: mesh.dims(), rmin, half_width, weights, hs: Vec::new() };
        let ones = vec![1.0; mesh.element_count()];
        filter.hs = filter.convolve(&ones);
        Ok(filter)
    }

    pub fn rmin(&self) -> f64 {
        self.rmin
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn weight(&self, i: isize, j: isize, k: isize) -> f64 {
        let hw = self.half_width as isize;
        if i.abs() > hw || j.abs() > hw || k.abs() > hw {
            return 0.0;
        }
        let s = 2 * hw + 1;
        self.weights[((i + hw) + s * ((j + hw) + s * (k + hw))) as usize]
    }

    pub fn hs(&self) -> &[f64] {
        &self.hs
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, field: &[f64]) -> Result<(), FilterError> {
        if field.len() != self.len() {
            return Err(FilterError::ShapeMismatch { expected: self.len(), got: field.len() });
        }
        Ok(())
    }

    /// `x_phys = (w ∗ x) / hs`.
    pub fn filter_field(&self, x: &[f64]) -> Result<Vec<f64>, FilterError> {
        self.check(x)?;
        let mut out = self.convolve(x);
        for (o, h) in out.iter_mut().zip(&self.hs) {
            *o /= h;
        }
        Ok(out)
    }

    /// Adjoint of [`filter_field`](Self::filter_field): `g = w ∗ (g_phys / hs)`.
    pub fn filter_sensitivities(&self, g_phys: &[f64]) -> Result<Vec<f64>, FilterError> {
        self.check(g_phys)?;
        let scaled: Vec<f64> = g_phys.iter().zip(&self.hs).map(|(g, h)| g / h).collect();
        Ok(self.convolve(&scaled))
    }

    /// Unnormalized zero-padded convolution with the cone kernel.
    pub fn convolve(&self, x: &[f64]) -> Vec<f64> {
        let [nx, ny, nz] = self.dims;
        let slice = nx * ny;
        let hw = self.half_width as isize;
        let side = (2 * self.half_width + 1) as isize;
        let slab_len = (side * side) as usize;
        let mut out = vec![0.0; x.len()];
        exec::for_each_chunk_mut(&mut out, slice, |ez, dst| {
            for k in -hw..=hw {
                let sz = ez as isize + k;
                if sz < 0 || sz >= nz as isize {
                    continue;
                }
                let src = &x[sz as usize * slice..(sz as usize + 1) * slice];
                let slab = &self.weights[((k + hw) as usize) * slab_len..((k + hw) as usize + 1) * slab_len];
                convolve_2d(src, dst, nx, ny, slab, hw);
            }
        });
        out
    }
}

/// `dst += slab ∗ src` on an `nx × ny` slice with zero padding.
fn convolve_2d(src: &[f64], dst: &mut [f64], nx: usize, ny: usize, slab: &[f64], hw: isize) {
    let side = 2 * hw + 1;
    for ey in 0..ny as isize {
        for ex in 0..nx as isize {
            let mut acc = 0.0;
            for j in -hw..=hw {
                let sy = ey + j;
                if sy < 0 || sy >= ny as isize {
                    continue;
                }
                let row = &src[sy as usize * nx..(sy as usize + 1) * nx];
                let wrow = &slab[((j + hw) * side) as usize..((j + hw + 1) * side) as usize];
                for i in -hw..=hw {
                    let sx = ex + i;
                    if sx < 0 || sx >= nx as isize {
                        continue;
                    }
                    acc += wrow[(i + hw) as usize] * row[sx as usize];
                }
            }
            dst[ey as usize * nx + ex as usize] += acc;
        }
    }
}
