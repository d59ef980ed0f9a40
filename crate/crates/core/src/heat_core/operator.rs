//! Five-point discrete diffusion operator and the banded Cholesky solver
//! used by every implicit-Euler step.

use super::field::Field;
use super::grid::Grid;
use crate::error::{Error, Result};

/// `A = ν (-Δ_h)` on the interior nodes, homogeneous Dirichlet closure.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    grid: Grid,
    nu: f64,
    diag: f64,
    off_x: f64,
    off_y: f64,
}

impl DiscreteOperator {
    pub fn assemble(grid: &Grid, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::Config(format!("diffusivity must be positive, got {nu}")));
        }
        if grid.is_empty() {
            return Err(Error::Config("empty grid".into()));
        }
        let ix = 1.0 / (grid.hx() * grid.hx());
        let iy = 1.0 / (grid.hy() * grid.hy());
        Ok(Self {
            grid: grid.clone(),
            nu,
            diag: nu * 2.0 * (ix + iy),
            off_x: -nu * ix,
            off_y: -nu * iy,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Entry `(row, col)` of the operator.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let nx = self.grid.nx();
        if row == col {
            self.diag
        } else if row / nx == col / nx && row.abs_diff(col) == 1 {
            self.off_x
        } else if row.abs_diff(col) == nx {
            self.off_y
        } else {
            0.0
        }
    }

    pub fn apply(&self, x: &Field) -> Field {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let v = x.as_slice();
        let mut out = vec![0.0; v.len()];
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let mut s = self.diag * v[k];
                if i > 0 {
                    s += self.off_x * v[k - 1];
                }
                if i + 1 < nx {
                    s += self.off_x * v[k + 1];
                }
                if j > 0 {
                    s += self.off_y * v[k - nx];
                }
                if j + 1 < ny {
                    s += self.off_y * v[k + nx];
                }
                out[k] = s;
            }
        }
        Field::from_vec(out)
    }

    /// Factorizes `I + tau A`.
    pub fn shifted_factor(&self, tau: f64) -> Result<BandedCholesky> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("time step must be non-negative, got {tau}")));
        }
        BandedCholesky::factor(self.grid.len(), self.grid.nx(), |r, c| {
            let id = if r == c { 1.0 } else { 0.0 };
            id + tau * self.entry(r, c)
        })
    }

    /// Smallest eigenvalue of `-Δ_h` (without the `ν` factor), by inverse
    /// power iteration with a Rayleigh-quotient stopping rule.
    pub fn laplacian_min_eigenvalue(&self) -> Result<f64> {
        let n = self.grid.len();
        let lap = BandedCholesky::factor(n, self.grid.nx(), |r, c| self.entry(r, c) / self.nu)?;
        // Positive start vector has a nonzero component on the positive ground state.
        let mut x = self.grid.sample(|x, y| 1.0 + x * y);
        let mut prev = f64::INFINITY;
        for _ in 0..10_000 {
            let norm = x.raw_dot(&x).sqrt();
            x.as_mut_slice().iter_mut().for_each(|v| *v /= norm);
            let y = lap.solve(&x);
            // Rayleigh quotient of -Δ_h at the new iterate: <y, x> / <y, y>.
            let lambda = y.raw_dot(&x) / y.raw_dot(&y);
            x = y;
            if (lambda - prev).abs() <= 1e-15 * lambda {
                return Ok(lambda);
            }
            prev = lambda;
        }
        Ok(prev)
    }

    /// Discrete Poincaré constant `C = 1/sqrt(λ_min(-Δ_h))`, so that
    /// `‖f‖ <= C ‖∇_h f‖` on the grid.
    pub fn poincare_constant(&self) -> Result<f64> {
        Ok(1.0 / self.laplacian_min_eigenvalue()?.sqrt())
    }
}

/// Cholesky factor of a symmetric positive definite band matrix, stored row
/// by row over the band `[i - bw, i]`.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (j + bw - i);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = entry(i, j);
                for k in klo..j {
                    s -= band[at(i, k)] * band[at(j, k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Numerical(format!(
                            "matrix not positive definite at pivot {i} (value {s:e})"
                        )));
                    }
                    band[at(i, i)] = s.sqrt();
                } else {
                    band[at(i, j)] = s / band[at(j, j)];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &Field) -> Field {
        let mut x = rhs.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        let w = self.bw + 1;
        let bw = self.bw;
        // L z = b
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * w..(i + 1) * w];
            let mut s = x[i];
            for k in lo..i {
                s -= row[k + bw - i] * x[k];
            }
            x[i] = s / row[bw];
        }
        // Lᵀ x = z
        for i in (0..self.n).rev() {
            let xi = x[i] / self.band[i * w + bw];
            x[i] = xi;
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * w..(i + 1) * w];
            for k in lo..i {
                x[k] -= row[k + bw - i] * xi;
            }
        }
    }
}
