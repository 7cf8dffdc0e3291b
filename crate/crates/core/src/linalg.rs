//! Fixed-capacity vectors and symmetric matrices for dimensions 2 and 3.
//!
//! Everything in the crate lives in d ∈ {2, 3}, so points are stored as
//! `[f64; 3]` with unused trailing coordinates held at zero. The vertical
//! coordinate of a point in dimension `d` is `p[d - 1]`.

use serde::{Deserialize, Serialize};

pub type Point = [f64; 3];

pub const ORIGIN: Point = [0.0; 3];

pub fn dot(d: usize, a: &Point, b: &Point) -> f64 {
    (0..d).map(|i| a[i] * b[i]).sum()
}

pub fn norm(d: usize, a: &Point) -> f64 {
    dot(d, a, a).sqrt()
}

pub fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: &Point, b: &Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(s: f64, a: &Point) -> Point {
    [s * a[0], s * a[1], s * a[2]]
}

pub fn dist(d: usize, a: &Point, b: &Point) -> f64 {
    norm(d, &sub(a, b))
}

/// Builds a point from a slice of at most three coordinates.
pub fn point(coords: &[f64]) -> Point {
    let mut p = ORIGIN;
    p[..coords.len()].copy_from_slice(coords);
    p
}

/// A d×d matrix (d ≤ 3) stored in a 3×3 array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub d: usize,
    pub m: [[f64; 3]; 3],
}

impl Mat {
    pub fn zeros(d: usize) -> Self {
        Mat { d, m: [[0.0; 3]; 3] }
    }

    pub fn identity(d: usize) -> Self {
        let mut a = Self::zeros(d);
        for i in 0..d {
            a.m[i][i] = 1.0;
        }
        a
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut a = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            a.m[i][i] = *v;
        }
        a
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let mut a = Self::zeros(rows.len());
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                a.m[i][j] = *v;
            }
        }
        a
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.d).map(|i| self.m[i][..self.d].to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                t.m[i][j] = self.m[j][i];
            }
        }
        t
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        let d = self.d;
        let mut c = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                c.m[i][j] = (0..d).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        c
    }

    pub fn apply(&self, v: &Point) -> Point {
        let mut out = ORIGIN;
        for (i, o) in out.iter_mut().enumerate().take(self.d) {
            *o = (0..self.d).map(|j| self.m[i][j] * v[j]).sum();
        }
        out
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        let mut c = *self;
        for i in 0..self.d {
            for j in 0..self.d {
                c.m[i][j] -= other.m[i][j];
            }
        }
        c
    }

    pub fn scaled(&self, s: f64) -> Mat {
        let mut c = *self;
        for i in 0..self.d {
            for j in 0..self.d {
                c.m[i][j] *= s;
            }
        }
        c
    }

    /// Quadratic form v·Av.
    pub fn quad(&self, v: &Point) -> f64 {
        dot(self.d, v, &self.apply(v))
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        match self.d {
            1 => m[0][0],
            2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
            _ => {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
        }
    }

    /// Inverse by cofactors; `None` for a singular matrix.
    pub fn inverse(&self) -> Option<Mat> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = &self.m;
        let mut inv = Self::zeros(self.d);
        match self.d {
            1 => inv.m[0][0] = 1.0 / m[0][0],
            2 => {
                inv.m[0][0] = m[1][1] / det;
                inv.m[0][1] = -m[0][1] / det;
                inv.m[1][0] = -m[1][0] / det;
                inv.m[1][1] = m[0][0] / det;
            }
            _ => {
                for i in 0..3 {
                    for j in 0..3 {
                        let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                        let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                        inv.m[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
                    }
                }
            }
        }
        Some(inv)
    }

    /// Spectral (operator 2-) norm, from the eigenvalues of AᵀA.
    pub fn spectral_norm(&self) -> f64 {
        let ata = self.transpose().mul(self);
        let (vals, _) = ata.jacobi_eigen();
        vals.iter().take(self.d).fold(0.0f64, |a, v| a.max(*v)).max(0.0).sqrt()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.d {
            for j in 0..i {
                worst = worst.max((self.m[i][j] - self.m[j][i]).abs());
            }
        }
        worst
    }

    pub fn frobenius(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                s += self.m[i][j] * self.m[i][j];
            }
        }
        s.sqrt()
    }

    /// Cyclic Jacobi eigendecomposition of a symmetric matrix.
    ///
    /// Returns eigenvalues and a matrix whose columns are the matching
    /// orthonormal eigenvectors. Sweeps run in a fixed (p, q) order until the
    /// off-diagonal mass drops below 1e-14 relative to the Frobenius norm.
    pub fn jacobi_eigen(&self) -> ([f64; 3], Mat) {
        let d = self.d;
        let mut a = *self;
        let mut v = Mat::identity(d);
        let scale = self.frobenius().max(f64::MIN_POSITIVE);
        for _sweep in 0..64 {
            let mut off = 0.0;
            for p in 0..d {
                for q in (p + 1)..d {
                    off += 2.0 * a.m[p][q] * a.m[p][q];
                }
            }
            if off.sqrt() <= 1e-14 * scale {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    let apq = a.m[p][q];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a.m[q][q] - a.m[p][p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let akp = a.m[k][p];
                        let akq = a.m[k][q];
                        a.m[k][p] = c * akp - s * akq;
                        a.m[k][q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let apk = a.m[p][k];
                        let aqk = a.m[q][k];
                        a.m[p][k] = c * apk - s * aqk;
                        a.m[q][k] = s * apk + c * aqk;
                    }
                    for k in 0..d {
                        let vkp = v.m[k][p];
                        let vkq = v.m[k][q];
                        v.m[k][p] = c * vkp - s * vkq;
                        v.m[k][q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut vals = [0.0; 3];
        for (i, val) in vals.iter_mut().enumerate().take(d) {
            *val = a.m[i][i];
        }
        (vals, v)
    }

    /// Extreme eigenvalues (min, max) of a symmetric matrix.
    pub fn eigen_range(&self) -> (f64, f64) {
        let (vals, _) = self.jacobi_eigen();
        let vals = &vals[..self.d];
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Rotation of the plane by `angle`, or about the axis `e_3` when `d = 3`.
pub fn rotation(d: usize, angle: f64) -> Mat {
    let (s, c) = angle.sin_cos();
    let mut r = Mat::identity(d);
    r.m[0][0] = c;
    r.m[0][1] = -s;
    r.m[1][0] = s;
    r.m[1][1] = c;
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip_3d() {
        let a = Mat::from_rows(&[
            vec![2.0, 0.3, -0.1],
            vec![0.3, 1.5, 0.2],
            vec![-0.1, 0.2, 1.1],
        ]);
        let p = a.mul(&a.inverse().unwrap());
        assert!(p.sub(&Mat::identity(3)).frobenius() < 1e-14);
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let a = Mat::from_rows(&[
            vec![1.2, 0.4, 0.1],
            vec![0.4, 0.8, -0.3],
            vec![0.1, -0.3, 1.6],
        ]);
        let (vals, v) = a.jacobi_eigen();
        let back = v.mul(&Mat::diag(&vals)).mul(&v.transpose());
        assert!(back.sub(&a).frobenius() < 1e-13);
        assert!(v.transpose().mul(&v).sub(&Mat::identity(3)).frobenius() < 1e-13);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        assert!((Mat::diag(&[-3.0, 2.0]).spectral_norm() - 3.0).abs() < 1e-13);
    }
}
