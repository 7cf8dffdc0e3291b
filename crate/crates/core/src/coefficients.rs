//! Coefficient matrix fields, their certification, and the affine change of
//! variables that turns A(x0) into the identity.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::GraphDomain;
use crate::linalg::{add, norm, sub, Mat, Point, ORIGIN};
use crate::solver::ScalarField;

#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    Identity,
    Constant(Mat),
    /// `R(θ)·diag(1 + ε_i sin(k_i·x))·R(θ)ᵀ`.
    Modulated {
        amplitudes: [f64; 3],
        wavevectors: [Point; 3],
        rotation: f64,
    },
    /// `(1 + b·x)·I`, elliptic on the ball |x| < 1/|b|.
    ScalarAffine { slope: Point },
    /// Entrywise multilinear interpolation of matrices on a regular grid.
    Tabulated {
        origin: Point,
        spacing: f64,
        counts: [usize; 3],
        values: Vec<Mat>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    pub d: usize,
    pub kind: FieldKind,
    /// Declared Λ ≥ 1.
    pub ellipticity: f64,
    /// Declared γ ≥ 0.
    pub lipschitz: f64,
}

impl MatrixField {
    pub fn identity(d: usize) -> Self {
        MatrixField {
            d,
            kind: FieldKind::Identity,
            ellipticity: 1.0,
            lipschitz: 0.0,
        }
    }

    /// Constant symmetric positive definite matrix; Λ is read off the spectrum.
    pub fn constant(a: Mat) -> Result<Self> {
        if a.max_asymmetry() != 0.0 {
            return Err(Error::AssumptionViolation("coefficient matrix is not symmetric".into()));
        }
        let (lo, hi) = a.eigen_range();
        if lo <= 0.0 {
            return Err(Error::Ellipticity {
                eigenvalue: lo,
                bound: 0.0,
            });
        }
        Ok(MatrixField {
            d: a.d,
            kind: FieldKind::Constant(a),
            ellipticity: hi.max(1.0 / lo).max(1.0),
            lipschitz: 0.0,
        })
    }

    pub fn modulated(
        d: usize,
        amplitudes: &[f64],
        wavevectors: &[Point],
        rotation: f64,
    ) -> Result<Self> {
        if amplitudes.len() != d || wavevectors.len() != d {
            return Err(Error::InvalidParameter(format!(
                "modulated field needs {d} amplitudes and wavevectors"
            )));
        }
        let mut amp = [0.0; 3];
        let mut waves = [ORIGIN; 3];
        let mut lam = 1.0f64;
        let mut gamma = 0.0f64;
        for i in 0..d {
            let e = amplitudes[i];
            if e.abs() >= 1.0 {
                return Err(Error::InvalidParameter(
                    "modulation amplitudes must lie in (-1, 1)".into(),
                ));
            }
            amp[i] = e;
            waves[i] = wavevectors[i];
            lam = lam.max(1.0 + e.abs()).max(1.0 / (1.0 - e.abs()));
            gamma = gamma.max(e.abs() * norm(d, &wavevectors[i]));
        }
        Ok(MatrixField {
            d,
            kind: FieldKind::Modulated {
                amplitudes: amp,
                wavevectors: waves,
                rotation,
            },
            ellipticity: lam,
            lipschitz: gamma,
        })
    }

    /// `(1 + b·x)I` declared on the ball |x| ≤ `radius`.
    pub fn scalar_affine(d: usize, slope: Point, radius: f64) -> Result<Self> {
        let b = norm(d, &slope);
        if b * radius >= 1.0 {
            return Err(Error::InvalidParameter(
                "affine scalar factor degenerates inside the declared radius".into(),
            ));
        }
        Ok(MatrixField {
            d,
            kind: FieldKind::ScalarAffine { slope },
            ellipticity: (1.0 + b * radius).max(1.0 / (1.0 - b * radius)),
            lipschitz: b,
        })
    }

    pub fn tabulated(
        d: usize,
        origin: Point,
        spacing: f64,
        counts: [usize; 3],
        values: Vec<Mat>,
        ellipticity: f64,
        lipschitz: f64,
    ) -> Result<Self> {
        let expected: usize = counts[..d].iter().product();
        if values.len() != expected || counts[..d].iter().any(|&c| c < 2) || spacing <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "tabulated field expects {expected} matrices on a grid with >= 2 points per axis"
            )));
        }
        if values.iter().any(|m| m.max_asymmetry() != 0.0) {
            return Err(Error::AssumptionViolation("tabulated matrix not symmetric".into()));
        }
        Ok(MatrixField {
            d,
            kind: FieldKind::Tabulated {
                origin,
                spacing,
                counts,
                values,
            },
            ellipticity,
            lipschitz,
        })
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, FieldKind::Identity | FieldKind::Constant(_))
    }

    pub fn eval(&self, x: &Point) -> Mat {
        let d = self.d;
        match &self.kind {
            FieldKind::Identity => Mat::identity(d),
            FieldKind::Constant(a) => *a,
            FieldKind::Modulated {
                amplitudes,
                wavevectors,
                rotation,
            } => {
                let mut diag = [0.0; 3];
                for i in 0..d {
                    let phase: f64 = (0..d).map(|j| wavevectors[i][j] * x[j]).sum();
                    diag[i] = 1.0 + amplitudes[i] * phase.sin();
                }
                let r = crate::linalg::rotation(d, *rotation);
                symmetrize(&r.mul(&Mat::diag(&diag[..d])).mul(&r.transpose()))
            }
            FieldKind::ScalarAffine { slope } => {
                let s: f64 = (0..d).map(|i| slope[i] * x[i]).sum();
                Mat::identity(d).scaled(1.0 + s)
            }
            FieldKind::Tabulated {
                origin,
                spacing,
                counts,
                values,
            } => tabulated_matrix(d, origin, *spacing, counts, values, x),
        }
    }
}

fn tabulated_matrix(
    d: usize,
    origin: &Point,
    spacing: f64,
    counts: &[usize; 3],
    values: &[Mat],
    x: &Point,
) -> Mat {
    // clamp to the table: callers certify the sampled region separately
    let mut idx = [0usize; 3];
    let mut frac = [0.0; 3];
    for i in 0..d {
        let n = counts[i];
        let s = ((x[i] - origin[i]) / spacing).clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        idx[i] = k;
        frac[i] = s - k as f64;
    }
    let mut out = Mat::zeros(d);
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut lin = 0;
        let mut stride = 1;
        for i in 0..d {
            let bit = (corner >> i) & 1;
            w *= if bit == 1 { frac[i] } else { 1.0 - frac[i] };
            lin += (idx[i] + bit) * stride;
            stride *= counts[i];
        }
        if w != 0.0 {
            let m = &values[lin];
            for r in 0..d {
                for c in 0..d {
                    out.m[r][c] += w * m.m[r][c];
                }
            }
        }
    }
    out
}

/// The first `n` points of the Halton sequence (bases 2, 3, 5) mapped to the
/// box `[lo, hi]`.
pub fn halton_points(d: usize, n: usize, lo: &Point, hi: &Point) -> Vec<Point> {
    const BASES: [u64; 3] = [2, 3, 5];
    (1..=n as u64)
        .map(|k| {
            let mut p = ORIGIN;
            for i in 0..d {
                let mut f = 1.0;
                let mut r = 0.0;
                let mut m = k;
                while m > 0 {
                    f /= BASES[i] as f64;
                    r += f * (m % BASES[i]) as f64;
                    m /= BASES[i];
                }
                p[i] = lo[i] + r * (hi[i] - lo[i]);
            }
            p
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifyReport {
    pub lambda_emp: f64,
    pub gamma_emp: f64,
    pub symmetric: bool,
    pub det_in_range: bool,
    pub samples: usize,
    pub pass: bool,
}

/// Empirical Λ and γ over the given sample points (all pairs for γ).
pub fn certify(field: &MatrixField, samples: &[Point]) -> Result<CertifyReport> {
    let d = field.d;
    let mats: Vec<Mat> = samples.iter().map(|x| field.eval(x)).collect();
    let mut lambda_emp = 1.0f64;
    let mut det_in_range = true;
    let lam_d = field.ellipticity.powi(d as i32);
    for (x, a) in samples.iter().zip(&mats) {
        if a.max_asymmetry() != 0.0 {
            return Err(Error::AssumptionViolation(format!(
                "A({x:?}) is not symmetric (asymmetry {:e})",
                a.max_asymmetry()
            )));
        }
        let (lo, hi) = a.eigen_range();
        if lo <= 0.0 {
            return Err(Error::Ellipticity {
                eigenvalue: lo,
                bound: 1.0 / field.ellipticity,
            });
        }
        lambda_emp = lambda_emp.max(hi).max(1.0 / lo);
        let det = a.det();
        if det > lam_d * (1.0 + 1e-12) || det < (1.0 - 1e-12) / lam_d {
            det_in_range = false;
        }
    }
    let mut gamma_emp = 0.0f64;
    for i in 0..samples.len() {
        for j in 0..i {
            let dx = norm(d, &sub(&samples[i], &samples[j]));
            if dx > 0.0 {
                gamma_emp = gamma_emp.max(mats[i].sub(&mats[j]).spectral_norm() / dx);
            }
        }
    }
    let pass = lambda_emp <= field.ellipticity * (1.0 + 1e-12)
        && gamma_emp <= field.lipschitz * (1.0 + 1e-12) + 1e-14
        && det_in_range;
    Ok(CertifyReport {
        lambda_emp,
        gamma_emp,
        symmetric: true,
        det_in_range,
        samples: samples.len(),
        pass,
    })
}

/// `E = 𝒪D^{1/2}𝒪ᵀ`, the symmetric positive square root of A(x0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineNormalization {
    pub x0: Point,
    pub e: Mat,
    pub e_inv: Mat,
    pub sqrt_det: f64,
}

impl AffineNormalization {
    pub fn to_physical(&self, z: &Point) -> Point {
        add(&self.x0, &self.e.apply(z))
    }

    pub fn to_normalized(&self, x: &Point) -> Point {
        self.e_inv.apply(&sub(x, &self.x0))
    }
}

pub fn sqrt_at(field: &MatrixField, x0: &Point) -> Result<AffineNormalization> {
    let a = field.eval(x0);
    if a.max_asymmetry() != 0.0 {
        return Err(Error::AssumptionViolation("A(x0) is not symmetric".into()));
    }
    let (vals, o) = a.jacobi_eigen();
    let d = a.d;
    let bound = 1.0 / field.ellipticity;
    for &v in &vals[..d] {
        if v < bound * (1.0 - 1e-10) || v <= 0.0 {
            return Err(Error::Ellipticity {
                eigenvalue: v,
                bound,
            });
        }
    }
    let mut root = [0.0; 3];
    let mut inv_root = [0.0; 3];
    for i in 0..d {
        root[i] = vals[i].sqrt();
        inv_root[i] = 1.0 / root[i];
    }
    let e = o.mul(&Mat::diag(&root[..d])).mul(&o.transpose());
    let e_inv = o.mul(&Mat::diag(&inv_root[..d])).mul(&o.transpose());
    let sqrt_det = root[..d].iter().product();
    Ok(AffineNormalization {
        x0: *x0,
        e: symmetrize(&e),
        e_inv: symmetrize(&e_inv),
        sqrt_det,
    })
}

fn symmetrize(a: &Mat) -> Mat {
    let mut s = *a;
    for i in 0..a.d {
        for j in 0..i {
            let v = 0.5 * (a.m[i][j] + a.m[j][i]);
            s.m[i][j] = v;
            s.m[j][i] = v;
        }
    }
    s
}

/// The problem seen in the coordinates z with x = x0 + Ez: Ω̃ = E⁻¹(Ω − x0),
/// Ã(z) = E⁻¹A(x0 + Ez)E⁻¹ and ũ(z) = u(x0 + Ez).
pub struct Normalized<'a> {
    pub field: &'a MatrixField,
    pub domain: &'a GraphDomain,
    pub u: &'a dyn ScalarField,
    pub map: AffineNormalization,
}

pub fn normalize<'a>(
    field: &'a MatrixField,
    domain: &'a GraphDomain,
    u: &'a dyn ScalarField,
    x0: &Point,
) -> Result<Normalized<'a>> {
    if !domain.contains(x0) {
        let on_graph = domain
            .phi(x0)
            .map(|v| (x0[domain.d - 1] - v).abs() <= domain.default_tolerance())
            .unwrap_or(false);
        if !on_graph {
            return Err(Error::NotInDomain(*x0));
        }
    }
    Ok(Normalized {
        field,
        domain,
        u,
        map: sqrt_at(field, x0)?,
    })
}

impl Normalized<'_> {
    pub fn a_tilde(&self, z: &Point) -> Mat {
        let a = self.field.eval(&self.map.to_physical(z));
        symmetrize(&self.map.e_inv.mul(&a).mul(&self.map.e_inv))
    }

    pub fn contains(&self, z: &Point) -> bool {
        self.domain.contains(&self.map.to_physical(z))
    }

    pub fn u_tilde(&self, z: &Point) -> Result<f64> {
        self.u.value(&self.map.to_physical(z))
    }

    /// ∇ũ(z) = E∇u(x0 + Ez).
    pub fn grad_u_tilde(&self, z: &Point) -> Result<Point> {
        let g = self.u.grad(&self.map.to_physical(z))?;
        Ok(self.map.e.apply(&g))
    }
}

impl ScalarField for Normalized<'_> {
    fn dim(&self) -> usize {
        self.field.d
    }

    fn value(&self, z: &Point) -> Result<f64> {
        self.u_tilde(z)
    }

    fn grad(&self, z: &Point) -> Result<Point> {
        self.grad_u_tilde(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::AnalyticSolution;
    use proptest::prelude::*;

    fn unit_box(d: usize) -> (Point, Point) {
        let mut lo = ORIGIN;
        let mut hi = ORIGIN;
        for i in 0..d {
            lo[i] = -1.0;
            hi[i] = 1.0;
        }
        (lo, hi)
    }

    #[test]
    fn identity_certifies_trivially() {
        let (lo, hi) = unit_box(2);
        let rep = certify(&MatrixField::identity(2), &halton_points(2, 64, &lo, &hi)).unwrap();
        assert_eq!(rep.lambda_emp, 1.0);
        assert_eq!(rep.gamma_emp, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn constant_diagonal_lambda_read_off() {
        let a = MatrixField::constant(Mat::diag(&[2.0, 0.5])).unwrap();
        let (lo, hi) = unit_box(2);
        let rep = certify(&a, &halton_points(2, 64, &lo, &hi)).unwrap();
        assert!((rep.lambda_emp - 2.0).abs() < 1e-14);
        assert_eq!(rep.gamma_emp, 0.0);
    }

    #[test]
    fn sinusoidal_scalar_field_gamma() {
        let k = [1.0, 0.0, 0.0];
        let a = MatrixField::modulated(2, &[0.1, 0.1], &[k, k], 0.0).unwrap();
        assert!((a.lipschitz - 0.1).abs() < 1e-15);
        let (lo, hi) = unit_box(2);
        let rep = certify(&a, &halton_points(2, 512, &lo, &hi)).unwrap();
        assert!(rep.pass);
        assert!((rep.gamma_emp - 0.1).abs() < 0.005, "{}", rep.gamma_emp);
    }

    #[test]
    fn asymmetric_sample_is_rejected() {
        let mut m = Mat::identity(2);
        m.m[0][1] = 0.1;
        assert!(matches!(
            MatrixField::constant(m),
            Err(Error::AssumptionViolation(_))
        ));
        let vals = vec![m; 4];
        let f = MatrixField {
            d: 2,
            kind: FieldKind::Tabulated {
                origin: [-1.0, -1.0, 0.0],
                spacing: 2.0,
                counts: [2, 2, 1],
                values: vals,
            },
            ellipticity: 2.0,
            lipschitz: 0.0,
        };
        assert!(matches!(
            certify(&f, &[[0.0; 3]]),
            Err(Error::AssumptionViolation(_))
        ));
    }

    #[test]
    fn diagonal_square_roots() {
        let e = sqrt_at(&MatrixField::identity(2), &ORIGIN).unwrap();
        assert_eq!(e.e, Mat::identity(2));
        let a = MatrixField::constant(Mat::diag(&[4.0, 9.0])).unwrap();
        let e = sqrt_at(&a, &ORIGIN).unwrap();
        assert!(e.e.sub(&Mat::diag(&[2.0, 3.0])).frobenius() < 1e-15);
        assert!((e.sqrt_det - 6.0).abs() < 1e-14);
    }

    #[test]
    fn eigenvalue_below_declared_bound_is_rejected() {
        let mut a = MatrixField::constant(Mat::diag(&[4.0, 0.5])).unwrap();
        a.ellipticity = 1.5;
        assert!(matches!(sqrt_at(&a, &ORIGIN), Err(Error::Ellipticity { .. })));
    }

    #[test]
    fn normalization_of_constant_diag() {
        let a = MatrixField::constant(Mat::diag(&[4.0, 1.0])).unwrap();
        let dom = GraphDomain::halfplane(2, 1.0);
        let u = AnalyticSolution::halfplane_harmonic(2, 1);
        let nz = normalize(&a, &dom, &u, &ORIGIN).unwrap();
        assert!(nz.a_tilde(&[0.3, 0.2, 0.0]).sub(&Mat::identity(2)).frobenius() < 1e-15);
        // E = diag(2, 1) leaves the height function unchanged
        let z = [0.1, 0.25, 0.0];
        assert!((nz.u_tilde(&z).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn normalized_field_is_identity_at_base_point() {
        let k = [[2.0, 1.0, 0.0], [0.5, -1.0, 0.0], [0.0; 3]];
        let a = MatrixField::modulated(2, &[0.3, 0.2], &k[..2], 0.4).unwrap();
        let dom = GraphDomain::halfplane(2, 1.0);
        let u = AnalyticSolution::halfplane_harmonic(2, 1);
        let x0 = [0.2, 0.3, 0.0];
        let nz = normalize(&a, &dom, &u, &x0).unwrap();
        assert!(nz.a_tilde(&ORIGIN).sub(&Mat::identity(2)).frobenius() < 1e-10);
        // renormalizing at 0 is the identity map
        assert!((nz.map.sqrt_det - nz.map.e.det()).abs() < 1e-14);
    }

    #[test]
    fn starshape_is_invariant_under_normalization() {
        // constant A: the transformed domain is the halfplane again, the
        // predicate value at corresponding points scales by a positive factor
        let a = MatrixField::constant(Mat::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]])).unwrap();
        let dom = GraphDomain::halfplane(2, 1.0);
        let x0 = [0.0, 0.2, 0.0];
        let rep = crate::geometry::starshape_check(&dom, &a, &x0, 0.5, 201).unwrap();
        let map = sqrt_at(&a, &x0).unwrap();
        // in z-coordinates the boundary is the line {z : (Ez + x0)_2 = 0},
        // whose distance from the origin is x0_2 / |E e_2|
        let n = map.e.apply(&[0.0, 1.0, 0.0]);
        assert!(rep.pass);
        assert!(x0[1] / norm(2, &n) > 0.0);
    }

    proptest! {
        #[test]
        fn sqrt_residual_small(a in 0.5f64..2.0, b in 0.5f64..2.0, t in 0.0f64..6.3) {
            let r = crate::linalg::rotation(2, t);
            let m = r.mul(&Mat::diag(&[a, b])).mul(&r.transpose());
            let m = symmetrize(&m);
            let f = MatrixField::constant(m).unwrap();
            let e = sqrt_at(&f, &ORIGIN).unwrap();
            prop_assert!(e.e.mul(&e.e).sub(&m).frobenius() <= 1e-12 * m.frobenius());
            prop_assert!(e.e.max_asymmetry() == 0.0);
            prop_assert!((e.sqrt_det - m.det().sqrt()).abs() < 1e-12);
        }

        #[test]
        fn sqrt_residual_small_3d(a in 0.5f64..2.0, b in 0.5f64..2.0, c in 0.5f64..2.0,
                                  x in -0.4f64..0.4, y in -0.4f64..0.4, z in -0.4f64..0.4) {
            let m = Mat::from_rows(&[vec![a + 1.0, x, y], vec![x, b + 1.0, z], vec![y, z, c + 1.0]]);
            let f = MatrixField::constant(m).unwrap();
            let e = sqrt_at(&f, &ORIGIN).unwrap();
            prop_assert!(e.e.mul(&e.e).sub(&m).frobenius() <= 1e-12 * m.frobenius());
        }
    }
}
