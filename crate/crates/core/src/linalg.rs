//! Cyclic tridiagonal solver (Thomas sweep plus a Sherman–Morrison correction).

use num_complex::Complex64;

use crate::error::{Error, Result};

const PIVOT_FLOOR: f64 = 1e-300;

/// Pre-factored periodic tridiagonal matrix with constant off-diagonals.
///
/// Row `j` reads `off·x_{j-1} + diag_j·x_j + off·x_{j+1}` with indices taken
/// modulo `n`.
#[derive(Clone, Debug)]
pub struct CyclicTridiagonal {
    off: Complex64,
    diag: Vec<Complex64>,
    // Thomas factors of the modified matrix
    gam: Vec<Complex64>,
    bet: Vec<Complex64>,
    gamma: Complex64,
    // solution of the correction system
    z: Vec<Complex64>,
    denom: Complex64,
}

impl CyclicTridiagonal {
    pub fn new(diag: Vec<Complex64>, off: Complex64) -> Result<Self> {
        let n = diag.len();
        assert!(n >= 3, "cyclic system needs at least three rows");
        let gamma = -diag[0];
        if gamma.norm() < PIVOT_FLOOR {
            return Err(Error::SingularSystem { row: 0 });
        }
        let mut modified = diag.clone();
        modified[0] -= gamma;
        modified[n - 1] -= off * off / gamma;

        let mut gam = vec![Complex64::new(0.0, 0.0); n];
        let mut bet = vec![Complex64::new(0.0, 0.0); n];
        bet[0] = modified[0];
        if bet[0].norm() < PIVOT_FLOOR {
            return Err(Error::SingularSystem { row: 0 });
        }
        for j in 1..n {
            gam[j] = off / bet[j - 1];
            bet[j] = modified[j] - off * gam[j];
            if !(bet[j].norm() >= PIVOT_FLOOR) {
                return Err(Error::SingularSystem { row: j });
            }
        }
        let mut this = Self {
            off,
            diag,
            gam,
            bet,
            gamma,
            z: Vec::new(),
            denom: Complex64::new(0.0, 0.0),
        };
        let mut u = vec![Complex64::new(0.0, 0.0); n];
        u[0] = gamma;
        u[n - 1] = off;
        let z = this.solve_modified(&u);
        let denom = Complex64::new(1.0, 0.0) + z[0] + off * z[n - 1] / gamma;
        if denom.norm() < PIVOT_FLOOR {
            return Err(Error::SingularSystem { row: n - 1 });
        }
        this.z = z;
        this.denom = denom;
        Ok(this)
    }

    fn solve_modified(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        let n = rhs.len();
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        x[0] = rhs[0] / self.bet[0];
        for j in 1..n {
            x[j] = (rhs[j] - self.off * x[j - 1]) / self.bet[j];
        }
        for j in (0..n - 1).rev() {
            let next = x[j + 1];
            x[j] -= self.gam[j + 1] * next;
        }
        x
    }

    pub fn solve(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        let n = rhs.len();
        let mut x = self.solve_modified(rhs);
        let fact = (x[0] + self.off * x[n - 1] / self.gamma) / self.denom;
        for (xj, zj) in x.iter_mut().zip(&self.z) {
            *xj -= fact * zj;
        }
        x
    }

    /// `A x`, for residual checks.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|j| self.off * (x[(j + n - 1) % n] + x[(j + 1) % n]) + self.diag[j] * x[j])
            .collect()
    }
}
