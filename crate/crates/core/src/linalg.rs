//! Small dense symmetric matrices (dimension 1 or 3) for per-pixel Gaussians.

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Square matrix of dimension `dim <= 3`, stored in a fixed 3x3 block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat {
    pub dim: usize,
    pub a: [[f64; MAX_DIM]; MAX_DIM],
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim <= MAX_DIM);
        Mat {
            dim,
            a: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.a[i][i] = s;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let mut m = Self::zeros(rows.len());
        for (i, r) in rows.iter().enumerate() {
            m.a[i][..r.len()].copy_from_slice(r);
        }
        m
    }

    pub fn add(&self, o: &Mat) -> Mat {
        let mut m = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.a[i][j] += o.a[i][j];
            }
        }
        m
    }

    pub fn sub(&self, o: &Mat) -> Mat {
        let mut m = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.a[i][j] -= o.a[i][j];
            }
        }
        m
    }

    pub fn mul(&self, o: &Mat) -> Mat {
        let mut m = Mat::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.a[i][j] = (0..self.dim).map(|k| self.a[i][k] * o.a[k][j]).sum();
            }
        }
        m
    }

    pub fn transpose(&self) -> Mat {
        let mut m = Mat::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.a[i][j] = self.a[j][i];
            }
        }
        m
    }

    pub fn mul_vec(&self, v: &[f64]) -> [f64; MAX_DIM] {
        let mut out = [0.0; MAX_DIM];
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = (0..self.dim).map(|k| self.a[i][k] * v[k]).sum();
        }
        out
    }

    pub fn symmetrize(&self) -> Mat {
        let mut m = *self;
        for i in 0..self.dim {
            for j in 0..i {
                let v = 0.5 * (self.a[i][j] + self.a[j][i]);
                m.a[i][j] = v;
                m.a[j][i] = v;
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m = m.max(self.a[i][j].abs());
            }
        }
        m
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Clone, Copy, Debug)]
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    pub fn new(m: &Mat) -> Result<Self> {
        let n = m.dim;
        let mut l = Mat::zeros(n);
        for j in 0..n {
            let mut d = m.a[j][j];
            for k in 0..j {
                d -= l.a[j][k] * l.a[j][k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "matrix is not positive-definite (pivot {j} = {d})"
                )));
            }
            let d = d.sqrt();
            l.a[j][j] = d;
            for i in j + 1..n {
                let mut s = m.a[i][j];
                for k in 0..j {
                    s -= l.a[i][k] * l.a[j][k];
                }
                l.a[i][j] = s / d;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn factor(&self) -> &Mat {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.l.dim).map(|i| self.l.a[i][i].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &[f64]) -> [f64; MAX_DIM] {
        let n = self.l.dim;
        let l = &self.l.a;
        let mut y = [0.0; MAX_DIM];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i][k] * y[k];
            }
            y[i] = s / l[i][i];
        }
        let mut x = [0.0; MAX_DIM];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k][i] * x[k];
            }
            x[i] = s / l[i][i];
        }
        x
    }

    pub fn inverse(&self) -> Mat {
        let n = self.l.dim;
        let mut inv = Mat::zeros(n);
        for j in 0..n {
            let mut e = [0.0; MAX_DIM];
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv.a[i][j] = col[i];
            }
        }
        inv.symmetrize()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_and_inverts() {
        let m = Mat::from_rows(&[&[4.0, 2.0, 0.6], &[2.0, 5.0, 1.0], &[0.6, 1.0, 3.0]]);
        let c = Cholesky::new(&m).unwrap();
        let l = c.factor();
        let back = l.mul(&l.transpose());
        assert!(back.sub(&m).max_abs() < 1e-12);
        let id = m.mul(&c.inverse());
        assert!(id.sub(&Mat::identity(3)).max_abs() < 1e-12);
        let x = c.solve(&[1.0, 2.0, 3.0]);
        let mx = m.mul_vec(&x);
        for (a, b) in mx.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        // det = 4*(15-1) - 2*(6-0.6) + 0.6*(2-3) = 44.6
        assert!((c.log_det() - 44.6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let m = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(Cholesky::new(&m).is_err());
    }
}
