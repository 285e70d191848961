//! Trilinear hexahedron stiffness for a unit-modulus cube.

use super::SolveError;

pub const ELEMENT_DOFS: usize = 24;

/// 24×24 element stiffness for E = 1, edge `h`, Poisson ratio `nu`.
///
/// Rows and columns follow local node order (x fastest) with the three
/// displacement components interleaved: `3·k + axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementStiffness {
    pub h: f64,
    pub nu: f64,
    ke: Box<[[f64; ELEMENT_DOFS]; ELEMENT_DOFS]>,
}

impl ElementStiffness {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.ke[row][col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64; ELEMENT_DOFS] {
        &self.ke[row]
    }

    pub fn rows(&self) -> &[[f64; ELEMENT_DOFS]; ELEMENT_DOFS] {
        &self.ke
    }

    pub fn max_abs(&self) -> f64 {
        self.ke.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `ueᵀ·ke·ue`.
    pub fn energy(&self, ue: &[f64; ELEMENT_DOFS]) -> f64 {
        let mut total = 0.0;
        for (i, row) in self.ke.iter().enumerate() {
            let mut s = 0.0;
            for (k, u) in row.iter().zip(ue) {
                s += k * u;
            }
            total += ue[i] * s;
        }
        total
    }
}

/// Builds the element matrix with 2×2×2 Gauss integration, which is exact
/// for the trilinear brick on a cube.
pub fn hex8_stiffness(h: f64, nu: f64) -> Result<ElementStiffness, SolveError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(SolveError::InvalidElement(format!("edge length {h}")));
    }
    if !(0.0..0.5).contains(&nu) {
        return Err(SolveError::InvalidElement(format!("poisson ratio {nu} outside [0, 0.5)")));
    }
    let lambda = nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = 1.0 / (2.0 * (1.0 + nu));
    let mut d = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            d[i][j] = lambda;
        }
        d[i][i] = lambda + 2.0 * mu;
        d[i + 3][i + 3] = mu;
    }

    let g = 1.0 / 3.0_f64.sqrt();
    let det_j = (h / 2.0).powi(3);
    let to_phys = 2.0 / h;
    let mut ke = Box::new([[0.0; ELEMENT_DOFS]; ELEMENT_DOFS]);

    for gp in 0..8 {
        let xi = [
            if gp & 1 == 0 { -g } else { g },
            if gp & 2 == 0 { -g } else { g },
            if gp & 4 == 0 { -g } else { g },
        ];
        // shape function gradients in physical coordinates
        let mut grad = [[0.0; 3]; 8];
        for (k, gk) in grad.iter_mut().enumerate() {
            let s = [sign(k & 1), sign((k >> 1) & 1), sign((k >> 2) & 1)];
            let f = [1.0 + s[0] * xi[0], 1.0 + s[1] * xi[1], 1.0 + s[2] * xi[2]];
            gk[0] = 0.125 * s[0] * f[1] * f[2] * to_phys;
            gk[1] = 0.125 * f[0] * s[1] * f[2] * to_phys;
            gk[2] = 0.125 * f[0] * f[1] * s[2] * to_phys;
        }
        // strain-displacement matrix, Voigt order xx yy zz xy yz zx
        let mut b = [[0.0; ELEMENT_DOFS]; 6];
        for (k, gk) in grad.iter().enumerate() {
            let c = 3 * k;
            b[0][c] = gk[0];
            b[1][c + 1] = gk[1];
            b[2][c + 2] = gk[2];
            b[3][c] = gk[1];
            b[3][c + 1] = gk[0];
            b[4][c + 1] = gk[2];
            b[4][c + 2] = gk[1];
            b[5][c] = gk[2];
            b[5][c + 2] = gk[0];
        }
        let mut db = [[0.0; ELEMENT_DOFS]; 6];
        for i in 0..6 {
            for j in 0..ELEMENT_DOFS {
                db[i][j] = (0..6).map(|m| d[i][m] * b[m][j]).sum();
            }
        }
        for r in 0..ELEMENT_DOFS {
            for c in 0..ELEMENT_DOFS {
                ke[r][c] += det_j * (0..6).map(|m| b[m][r] * db[m][c]).sum::<f64>();
            }
        }
    }
    // remove the rounding asymmetry left by the summation order
    for r in 0..ELEMENT_DOFS {
        for c in r + 1..ELEMENT_DOFS {
            let avg = 0.5 * (ke[r][c] + ke[c][r]);
            ke[r][c] = avg;
            ke[c][r] = avg;
        }
    }
    Ok(ElementStiffness { h, nu, ke })
}

fn sign(bit: usize) -> f64 {
    if bit == 0 {
        -1.0
    } else {
        1.0
    }
}
