//! Weighted masses, doubling indices and frequency curves of a solution, and
//! the inequalities relating them, evaluated as empirical checks.
//!
//! All logarithms are natural.

use serde::Serialize;

use crate::coefficients::{normalize, sqrt_at, AffineNormalization, MatrixField};
use crate::error::{Error, Result};
use crate::geometry::{sphere_directions, starshape_check, GraphDomain};
use crate::linalg::{dot, norm, sub, Mat, Point, ORIGIN};
use crate::quadrature::{integrate, Lattice};
use crate::solver::{GridSolution, ScalarField};

/// Lattice used for volume integrals; aligned with a solution grid when one
/// is available.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub lattice: Lattice,
    /// Also integrate on the h/2 lattice to estimate the error.
    pub estimate_error: bool,
}

impl QuadratureSpec {
    pub fn for_solution(sol: &GridSolution) -> Self {
        QuadratureSpec {
            lattice: Lattice::new(sol.mesh.d, sol.mesh.h, sol.mesh.lo),
            estimate_error: false,
        }
    }

    pub fn uniform(d: usize, h: f64) -> Self {
        QuadratureSpec {
            lattice: Lattice::new(d, h, ORIGIN),
            estimate_error: false,
        }
    }

    pub fn with_error_estimate(mut self) -> Self {
        self.estimate_error = true;
        self
    }
}

/// μ(x0, y) = (y−x0)·A(x0)⁻¹A(y)A(x0)⁻¹(y−x0) / (y−x0)·A(x0)⁻¹(y−x0).
pub fn weight_mu(field: &MatrixField, x0: &Point, y: &Point) -> Result<f64> {
    let a0_inv = field
        .eval(x0)
        .inverse()
        .ok_or_else(|| Error::AssumptionViolation("A(x0) is singular".into()))?;
    mu_with(field, &a0_inv, x0, y)
}

fn mu_with(field: &MatrixField, a0_inv: &Mat, x0: &Point, y: &Point) -> Result<f64> {
    let d = field.d;
    let v = sub(y, x0);
    if norm(d, &v) == 0.0 {
        return Err(Error::UndefinedPoint);
    }
    if field.is_constant() {
        return Ok(1.0);
    }
    let w = a0_inv.apply(&v);
    Ok(field.eval(y).quad(&w) / dot(d, &v, &w))
}

/// The ellipsoid F(x0, r) = x0 + E(B_r).
#[derive(Debug, Clone, Copy)]
pub struct Ellipsoid {
    pub map: AffineNormalization,
    pub radius: f64,
}

impl Ellipsoid {
    pub fn contains(&self, y: &Point) -> bool {
        let d = self.map.e.d;
        norm(d, &self.map.to_normalized(y)) < self.radius
    }

    /// Axis-aligned bounding box: half-width r·√(A_ii) along axis i.
    pub fn bounds(&self) -> (Point, Point) {
        let d = self.map.e.d;
        let a = self.map.e.mul(&self.map.e);
        let mut lo = self.map.x0;
        let mut hi = self.map.x0;
        for i in 0..d {
            let w = self.radius * a.m[i][i].sqrt();
            lo[i] -= w;
            hi[i] += w;
        }
        (lo, hi)
    }
}

pub fn ellipsoid_f(field: &MatrixField, x0: &Point, r: f64) -> Result<Ellipsoid> {
    if r <= 0.0 {
        return Err(Error::InvalidParameter("radius must be positive".into()));
    }
    Ok(Ellipsoid {
        map: sqrt_at(field, x0)?,
        radius: r,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightedMass {
    pub center: Point,
    pub radius: f64,
    pub value: f64,
    pub lattice_h: f64,
    /// |J_h − J_{h/2}| when requested, otherwise NaN.
    pub error_estimate: f64,
}

fn mass_on(
    u: &dyn ScalarField,
    field: &MatrixField,
    domain: &GraphDomain,
    f: &Ellipsoid,
    a0_inv: &Mat,
    lat: &Lattice,
) -> Result<f64> {
    let x0 = f.map.x0;
    let (lo, hi) = f.bounds();
    let inside = |y: &Point| f.contains(y) && domain.contains(y);
    let integrand = |y: &Point| -> Result<f64> {
        let v = u.value(y)?;
        let mu = if norm(field.d, &sub(y, &x0)) == 0.0 {
            1.0
        } else {
            mu_with(field, a0_inv, &x0, y)?
        };
        Ok(mu * v * v)
    };
    Ok(integrate(lat, &lo, &hi, inside, integrand)? / f.map.sqrt_det)
}

/// J(x0, r) = det A(x0)^{-1/2} ∫_{F(x0,r)∩Ω} μ(x0, y) u(y)² dy.
pub fn weighted_mass(
    u: &dyn ScalarField,
    field: &MatrixField,
    domain: &GraphDomain,
    x0: &Point,
    r: f64,
    q: &QuadratureSpec,
) -> Result<WeightedMass> {
    let f = ellipsoid_f(field, x0, r)?;
    let a0_inv = field
        .eval(x0)
        .inverse()
        .ok_or_else(|| Error::AssumptionViolation("A(x0) is singular".into()))?;
    let value = mass_on(u, field, domain, &f, &a0_inv, &q.lattice)?;
    let error_estimate = if q.estimate_error {
        (mass_on(u, field, domain, &f, &a0_inv, &q.lattice.refined())? - value).abs()
    } else {
        f64::NAN
    };
    Ok(WeightedMass {
        center: *x0,
        radius: r,
        value,
        lattice_h: q.lattice.h,
        error_estimate,
    })
}

/// J computed in the normalized coordinates z = E⁻¹(y − x0), where the
/// ellipsoid becomes the ball B_r and Ã(0) = I.
pub fn weighted_mass_normalized(
    u: &dyn ScalarField,
    field: &MatrixField,
    domain: &GraphDomain,
    x0: &Point,
    r: f64,
    h: f64,
) -> Result<f64> {
    let nz = normalize(field, domain, u, x0)?;
    let d = field.d;
    let lat = Lattice::new(d, h, ORIGIN);
    let mut lo = ORIGIN;
    let mut hi = ORIGIN;
    for i in 0..d {
        lo[i] = -r;
        hi[i] = r;
    }
    let inside = |z: &Point| norm(d, z) < r && nz.contains(z);
    let integrand = |z: &Point| -> Result<f64> {
        let v = nz.u_tilde(z)?;
        let zz = dot(d, z, z);
        let mu = if zz == 0.0 { 1.0 } else { nz.a_tilde(z).quad(z) / zz };
        Ok(mu * v * v)
    };
    integrate(&lat, &lo, &hi, inside, integrand)
}

/// N(x0, r) = ln(J(x0, 2r)/J(x0, r)).
pub fn doubling_index(
    u: &dyn ScalarField,
    field: &MatrixField,
    domain: &GraphDomain,
    x0: &Point,
    r: f64,
    q: &QuadratureSpec,
) -> Result<f64> {
    let j1 = weighted_mass(u, field, domain, x0, r, q)?.value;
    let j2 = weighted_mass(u, field, domain, x0, 2.0 * r, q)?.value;
    doubling_from_masses(j1, j2, r)
}

fn doubling_from_masses(j1: f64, j2: f64, r: f64) -> Result<f64> {
    if !(j1 > 0.0) || !(j2 > 0.0) {
        return Err(Error::DegenerateMass { radius: r });
    }
    Ok((j2 / j1).ln())
}

/// Geometric radius grid with ratio 2^{1/4}, starting at `r_min`, so that
/// every r and 2r fall on grid points.
pub fn radius_grid(r_min: f64, r_max: f64) -> Vec<f64> {
    let ratio = 2f64.powf(0.25);
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let r = r_min * ratio.powi(k);
        if r > r_max * (1.0 + 1e-12) {
            break;
        }
        out.push(r);
        k += 1;
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct DoublingCurve {
    pub center: Point,
    pub radii: Vec<f64>,
    pub masses: Vec<f64>,
    pub doubling: Vec<f64>,
}

/// N(x0, r) for each r in `radii`, sharing masses between r and 2r.
pub fn doubling_curve(
    u: &dyn ScalarField,
    field: &MatrixField,
    domain: &GraphDomain,
    x0: &Point,
    radii: &[f64],
    q: &QuadratureSpec,
) -> Result<DoublingCurve> {
    let mut needed: Vec<f64> = radii.iter().flat_map(|&r| [r, 2.0 * r]).collect();
    needed.sort_by(|a, b| a.partial_cmp(b).unwrap());
    needed.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    let masses: Vec<(f64, f64)> = needed
        .iter()
        .map(|&r| Ok((r, weighted_mass(u, field, domain, x0, r, q)?.value)))
        .collect::<Result<_>>()?;
    let lookup = |r: f64| {
        masses
            .iter()
            .find(|(s, _)| (s - r).abs() <= 1e-12 * r)
            .map(|m| m.1)
            .expect("mass computed for every needed radius")
    };
    let mut doubling = Vec::with_capacity(radii.len());
    let mut own = Vec::with_capacity(radii.len());
    for &r in radii {
        let j1 = lookup(r);
        own.push(j1);
        doubling.push(doubling_from_masses(j1, lookup(2.0 * r), r)?);
    }
    Ok(DoublingCurve {
        center: *x0,
        radii: radii.to_vec(),
        masses: own,
        doubling,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyCurves {
    pub center: Point,
    pub radii: Vec<f64>,
    pub h: Vec<f64>,
    pub d: Vec<f64>,
    pub frequency: Vec<f64>,
}

/// H(r) = ∫_{∂B_r∩Ω} μ u², D(r) = ∫_{B_r∩Ω} A∇u·∇u and 𝒩(r) = rD/H.
pub fn frequency(
    u: &dyn ScalarField,
    field: &MatrixField,
    domain: &GraphDomain,
    x0: &Point,
    radii: &[f64],
    q: &QuadratureSpec,
) -> Result<FrequencyCurves> {
    let dim = field.d;
    let a0_inv = field
        .eval(x0)
        .inverse()
        .ok_or_else(|| Error::AssumptionViolation("A(x0) is singular".into()))?;
    let mut hs = Vec::new();
    let mut ds = Vec::new();
    let mut ns = Vec::new();
    for &r in radii {
        let hval = sphere_mass(u, field, domain, &a0_inv, x0, r, q.lattice.h)?;
        let mut lo = *x0;
        let mut hi = *x0;
        for i in 0..dim {
            lo[i] -= r;
            hi[i] += r;
        }
        let inside = |y: &Point| norm(dim, &sub(y, x0)) < r && domain.contains(y);
        let energy = |y: &Point| -> Result<f64> {
            let g = u.grad(y)?;
            Ok(field.eval(y).quad(&g))
        };
        let dval = integrate(&q.lattice, &lo, &hi, inside, energy)?;
        if !(hval > 0.0) {
            return Err(Error::DegenerateMass { radius: r });
        }
        hs.push(hval);
        ds.push(dval);
        ns.push(r * dval / hval);
    }
    Ok(FrequencyCurves {
        center: *x0,
        radii: radii.to_vec(),
        h: hs,
        d: ds,
        frequency: ns,
    })
}

fn sphere_mass(
    u: &dyn ScalarField,
    field: &MatrixField,
    domain: &GraphDomain,
    a0_inv: &Mat,
    x0: &Point,
    r: f64,
    h: f64,
) -> Result<f64> {
    let d = field.d;
    let res = ((2.0 * std::f64::consts::PI * r / h).ceil() as usize).max(64);
    let dirs = sphere_directions(d, res);
    let mut total = 0.0;
    if d == 2 {
        let w = r * 2.0 * std::f64::consts::PI / dirs.len() as f64;
        for v in &dirs {
            let y = [x0[0] + r * v[0], x0[1] + r * v[1], 0.0];
            if domain.contains(&y) {
                let val = u.value(&y)?;
                total += w * mu_with(field, a0_inv, x0, &y)? * val * val;
            }
        }
    } else {
        // rings of constant polar angle, as laid out by sphere_directions
        let nt = res;
        let dtheta = std::f64::consts::PI / nt as f64;
        let mut k = 0;
        for i in 0..nt {
            let th = dtheta * (i as f64 + 0.5);
            let np = (2.0 * nt as f64 * th.sin()).ceil().max(4.0) as usize;
            let w = r * r * th.sin() * dtheta * 2.0 * std::f64::consts::PI / np as f64;
            for _ in 0..np {
                let v = dirs[k];
                k += 1;
                let y = [x0[0] + r * v[0], x0[1] + r * v[1], x0[2] + r * v[2]];
                if domain.contains(&y) {
                    let val = u.value(&y)?;
                    total += w * mu_with(field, a0_inv, x0, &y)? * val * val;
                }
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize)]
pub struct LogDerivativeReport {
    /// Radii at which a central difference was available.
    pub radii: Vec<f64>,
    /// |H′/H − (d−1)/r − 2𝒩/r| per radius.
    pub defects: Vec<f64>,
    pub max_defect: f64,
    /// max defect / γ, or `None` when γ = 0.
    pub c_emp: Option<f64>,
}

/// Compares H′/H (central differences in log r) with (d−1)/r + 2𝒩/r.
pub fn check_h_logderivative(
    curves: &FrequencyCurves,
    d: usize,
    gamma: f64,
) -> LogDerivativeReport {
    let n = curves.radii.len();
    let mut radii = Vec::new();
    let mut defects = Vec::new();
    for i in 1..n.saturating_sub(1) {
        let (r0, r, r1) = (curves.radii[i - 1], curves.radii[i], curves.radii[i + 1]);
        let slope = (curves.h[i + 1].ln() - curves.h[i - 1].ln()) / (r1.ln() - r0.ln());
        let log_deriv = slope / r;
        let predicted = (d as f64 - 1.0) / r + 2.0 * curves.frequency[i] / r;
        radii.push(r);
        defects.push((log_deriv - predicted).abs());
    }
    let max_defect = defects.iter().cloned().fold(0.0, f64::max);
    LogDerivativeReport {
        radii,
        defects,
        max_defect,
        c_emp: if gamma > 0.0 { Some(max_defect / gamma) } else { None },
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ThreeBallReport {
    pub beta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

/// lhs = ln(J2/J1); rhs = β ln(J3/J2) + d ln(r2^{1+β}/(r3^β r1)) + Cγr3 with
/// β = e^{Cγr3} ln(r2/r1)/ln(r3/r2).
pub fn three_ball_from_masses(
    d: usize,
    radii: [f64; 3],
    masses: [f64; 3],
    c_trial: f64,
    gamma: f64,
) -> Result<ThreeBallReport> {
    let [r1, r2, r3] = radii;
    if !(0.0 < r1 && r1 < r2 && r2 < r3) {
        return Err(Error::InvalidParameter("radii must satisfy 0 < r1 < r2 < r3".into()));
    }
    for (m, r) in masses.iter().zip(radii) {
        if !(*m > 0.0) {
            return Err(Error::DegenerateMass { radius: r });
        }
    }
    let t = c_trial * gamma * r3;
    let beta = t.exp() * (r2 / r1).ln() / (r3 / r2).ln();
    let lhs = (masses[1] / masses[0]).ln();
    let rhs = beta * (masses[2] / masses[1]).ln()
        + d as f64 * ((1.0 + beta) * r2.ln() - beta * r3.ln() - r1.ln())
        + t;
    Ok(ThreeBallReport {
        beta,
        lhs,
        rhs,
        margin: rhs - lhs,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn check_three_ball(
    u: &dyn ScalarField,
    field: &MatrixField,
    domain: &GraphDomain,
    x0: &Point,
    radii: [f64; 3],
    c_trial: f64,
    q: &QuadratureSpec,
) -> Result<ThreeBallReport> {
    let mut masses = [0.0; 3];
    for (m, r) in masses.iter_mut().zip(radii) {
        *m = weighted_mass(u, field, domain, x0, r, q)?.value;
    }
    three_ball_from_masses(field.d, radii, masses, c_trial, field.lipschitz)
}

/// Smallest C ≥ 0 with n_small ≤ (1 + Ct)n_large + Ct; infinite when t = 0
/// and the inequality fails beyond `tol`.
pub fn required_constant(n_small: f64, n_large: f64, t: f64, tol: f64) -> f64 {
    let excess = n_small - n_large;
    if excess <= 0.0 {
        return 0.0;
    }
    if t <= 0.0 {
        return if excess <= tol { 0.0 } else { f64::INFINITY };
    }
    excess / (t * (n_large + 1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub radii: Vec<f64>,
    pub doubling: Vec<f64>,
    /// C_req at each r whose 2r is also on the grid.
    pub c_req: Vec<f64>,
    pub c_emp: f64,
    /// max over consecutive grid radii of (N(r_i) − N(r_{i+1}))_+.
    pub max_decrease: f64,
}

/// Largest drop between consecutive values of a sequence.
pub fn max_decrease(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| (w[0] - w[1]).max(0.0))
        .fold(0.0, f64::max)
}

fn require_starshape(
    domain: &GraphDomain,
    field: &MatrixField,
    x0: &Point,
    radius: f64,
) -> Result<()> {
    let rep = starshape_check(domain, field, x0, radius, if domain.d == 2 { 801 } else { 81 })?;
    if !rep.pass {
        return Err(Error::Precondition {
            message: format!(
                "B({x0:?}, {radius})∩Ω is not A-starshaped (min value {:e})",
                rep.worst_value
            ),
            point: rep.worst_at,
        });
    }
    Ok(())
}

/// Empirical constant in N(r) ≤ (1 + Cγr)N(2r) + Cγr over the grid, after
/// checking that B(x0, 8ΛR)∩Ω is A-starshaped for the largest R.
pub fn check_almost_monotonicity(
    u: &dyn ScalarField,
    field: &MatrixField,
    domain: &GraphDomain,
    x0: &Point,
    radii: &[f64],
    q: &QuadratureSpec,
    tol: f64,
) -> Result<MonotonicityReport> {
    let r_max = radii.iter().cloned().fold(0.0, f64::max);
    require_starshape(domain, field, x0, 8.0 * field.ellipticity * r_max)?;
    let curve = doubling_curve(u, field, domain, x0, radii, q)?;
    Ok(monotonicity_from_curve(&curve, field.lipschitz, tol))
}

pub fn monotonicity_from_curve(curve: &DoublingCurve, gamma: f64, tol: f64) -> MonotonicityReport {
    let mut c_req = Vec::new();
    for (i, &r) in curve.radii.iter().enumerate() {
        if let Some(j) = curve.radii.iter().position(|&s| (s - 2.0 * r).abs() <= 1e-12 * s) {
            c_req.push(required_constant(
                curve.doubling[i],
                curve.doubling[j],
                gamma * r,
                tol,
            ));
        }
    }
    MonotonicityReport {
        radii: curve.radii.clone(),
        doubling: curve.doubling.clone(),
        c_emp: c_req.iter().cloned().fold(0.0, f64::max),
        c_req,
        max_decrease: max_decrease(&curve.doubling),
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ShiftReport {
    pub theta: f64,
    pub t: f64,
    pub n_shifted: f64,
    pub n_base: f64,
    pub c_emp: f64,
}

/// Empirical constant in N(x1, R) ≤ (1 + Ct)N(x0, 2R) + Ct, t = γR + θ/R.
#[allow(clippy::too_many_arguments)]
pub fn check_shift(
    u: &dyn ScalarField,
    field: &MatrixField,
    domain: &GraphDomain,
    x0: &Point,
    x1: &Point,
    radius: f64,
    c_star: f64,
    q: &QuadratureSpec,
    tol: f64,
) -> Result<ShiftReport> {
    let d = field.d;
    let theta = norm(d, &sub(x1, x0));
    if theta > radius / c_star {
        return Err(Error::Precondition {
            message: format!("shift {theta} exceeds R/C* = {}", radius / c_star),
            point: Some(*x1),
        });
    }
    require_starshape(domain, field, x0, 8.0 * field.ellipticity * radius)?;
    let n_shifted = doubling_index(u, field, domain, x1, radius, q)?;
    let n_base = doubling_index(u, field, domain, x0, 2.0 * radius, q)?;
    let t = field.lipschitz * radius + theta / radius;
    Ok(ShiftReport {
        theta,
        t,
        n_shifted,
        n_base,
        c_emp: required_constant(n_shifted, n_base, t, tol),
    })
}

/// Same recipe as almost-monotonicity with t = γr + ω(16r), centred on the
/// graph.
pub fn check_boundary_doubling(
    u: &dyn ScalarField,
    field: &MatrixField,
    domain: &GraphDomain,
    x0: &Point,
    radii: &[f64],
    q: &QuadratureSpec,
    tol: f64,
) -> Result<MonotonicityReport> {
    let phi = domain.phi(x0)?;
    if (x0[domain.d - 1] - phi).abs() > domain.default_tolerance() {
        return Err(Error::Precondition {
            message: "centre must lie on the graph".into(),
            point: Some(*x0),
        });
    }
    if let Some(r) = radii.iter().find(|&&r| r >= domain.modulus.r0) {
        return Err(Error::OutOfRange(format!(
            "radius {r} not below r0 = {}",
            domain.modulus.r0
        )));
    }
    let curve = doubling_curve(u, field, domain, x0, radii, q)?;
    let mut rep = monotonicity_from_curve(&curve, 0.0, tol);
    rep.c_req.clear();
    for (i, &r) in curve.radii.iter().enumerate() {
        if let Some(j) = curve.radii.iter().position(|&s| (s - 2.0 * r).abs() <= 1e-12 * s) {
            let t = field.lipschitz * r + domain.modulus.eval(16.0 * r);
            rep.c_req
                .push(required_constant(curve.doubling[i], curve.doubling[j], t, tol));
        }
    }
    rep.c_emp = rep.c_req.iter().cloned().fold(0.0, f64::max);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Ball;
    use crate::solver::{solve, AnalyticSolution, SolveParams};
    use proptest::prelude::*;
    use std::f64::consts::{LN_2, PI};

    fn ball() -> Ball {
        Ball {
            center: ORIGIN,
            radius: 0.5,
        }
    }

    #[test]
    fn mu_examples() {
        let id = MatrixField::identity(2);
        assert_eq!(weight_mu(&id, &ORIGIN, &[0.3, 0.1, 0.0]).unwrap(), 1.0);
        let c = MatrixField::constant(Mat::diag(&[3.0, 0.5])).unwrap();
        assert_eq!(weight_mu(&c, &[0.1, 0.1, 0.0], &[0.3, 0.1, 0.0]).unwrap(), 1.0);
        let aff = MatrixField::scalar_affine(2, [0.1, 0.0, 0.0], 1.0).unwrap();
        let y = [0.4, -0.7, 0.0];
        assert!((weight_mu(&aff, &ORIGIN, &y).unwrap() - 1.04).abs() < 1e-14);
        assert!(matches!(weight_mu(&aff, &y, &y), Err(Error::UndefinedPoint)));
    }

    #[test]
    fn ellipsoid_examples() {
        let f = ellipsoid_f(&MatrixField::identity(2), &ORIGIN, 1.0).unwrap();
        assert!(f.contains(&[0.99, 0.0, 0.0]) && !f.contains(&[0.8, 0.8, 0.0]));
        let a = MatrixField::constant(Mat::diag(&[4.0, 1.0])).unwrap();
        let e = ellipsoid_f(&a, &ORIGIN, 1.0).unwrap();
        assert!(e.contains(&[1.99, 0.0, 0.0]) && !e.contains(&[0.0, 1.01, 0.0]));
        assert_eq!(e.bounds().1[0], 2.0);
    }

    proptest! {
        #[test]
        fn mu_lies_in_ellipticity_band(x in -0.5f64..0.5, y in -0.5f64..0.5,
                                       a in -0.5f64..0.5, b in -0.5f64..0.5) {
            let k = [[2.0, 1.0, 0.0], [0.5, -3.0, 0.0]];
            let f = MatrixField::modulated(2, &[0.3, 0.25], &k, 0.7).unwrap();
            let p = [x, y, 0.0];
            let q = [a, b, 0.0];
            prop_assume!(norm(2, &sub(&p, &q)) > 1e-9);
            let mu = weight_mu(&f, &p, &q).unwrap();
            let lam = f.ellipticity;
            prop_assert!(mu >= 1.0 / (lam * lam) - 1e-12 && mu <= lam * lam + 1e-12);
        }

        #[test]
        fn ellipsoid_sandwich(t in 0.0f64..std::f64::consts::TAU, s in 0.0f64..1.0, r in 0.1f64..1.0) {
            let a = Mat::from_rows(&[vec![2.0, 0.4], vec![0.4, 0.8]]);
            let f = MatrixField::constant(a).unwrap();
            let e = ellipsoid_f(&f, &ORIGIN, r).unwrap();
            let lam = f.ellipticity;
            let y = [s * r * 2.0 * t.cos(), s * r * 2.0 * t.sin(), 0.0];
            let dist = norm(2, &y);
            if dist < r / lam.sqrt() { prop_assert!(e.contains(&y)); }
            if e.contains(&y) { prop_assert!(dist < r * lam.sqrt()); }
        }
    }

    #[test]
    fn mass_of_height_function() {
        let dom = GraphDomain::halfplane(2, 1.0);
        let u = AnalyticSolution::halfplane_harmonic(2, 1);
        let q = QuadratureSpec::uniform(2, 1.0 / 512.0).with_error_estimate();
        let m = weighted_mass(&u, &MatrixField::identity(2), &dom, &ORIGIN, 1.0, &q).unwrap();
        assert!((m.value - PI / 8.0).abs() < 1e-5, "{}", m.value);
        assert!(m.error_estimate < 1e-5);
        let zero = GridSolution::from_fn(&dom, ball(), 33, |_| 0.0).unwrap();
        let q0 = QuadratureSpec::for_solution(&zero);
        let m = weighted_mass(&zero, &MatrixField::identity(2), &dom, &ORIGIN, 0.2, &q0).unwrap();
        assert_eq!(m.value, 0.0);
        assert!(matches!(
            doubling_index(&zero, &MatrixField::identity(2), &dom, &ORIGIN, 0.2, &q0),
            Err(Error::DegenerateMass { .. })
        ));
    }

    #[test]
    fn mass_escaping_solved_region_is_out_of_range() {
        let dom = GraphDomain::halfplane(2, 0.5);
        let u = GridSolution::from_fn(&dom, ball(), 65, |p| p[1]).unwrap();
        let q = QuadratureSpec::for_solution(&u);
        assert!(matches!(
            weighted_mass(&u, &MatrixField::identity(2), &dom, &ORIGIN, 0.6, &q),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn homogeneous_doubling_and_frequency_from_closed_forms() {
        let dom = GraphDomain::halfplane(2, 1.0);
        let id = MatrixField::identity(2);
        let q = QuadratureSpec::uniform(2, 1.0 / 256.0);
        for k in 1..=3u32 {
            let u = AnalyticSolution::halfplane_harmonic(2, k);
            let n = doubling_index(&u, &id, &dom, &ORIGIN, 0.2, &q).unwrap();
            let expect = (2 * k + 2) as f64 * LN_2;
            assert!((n - expect).abs() < 1e-3 * expect, "k={k}: {n}");
            let fc = frequency(&u, &id, &dom, &ORIGIN, &[0.1, 0.2], &q).unwrap();
            for f in &fc.frequency {
                assert!((f - k as f64).abs() < 1e-2, "k={k}: {f}");
            }
            // H(r) = π r^{2k+1}/2 and D(r) = kπ r^{2k}/2
            let r: f64 = 0.2;
            assert!((fc.h[1] - PI * r.powi(2 * k as i32 + 1) / 2.0).abs() < 1e-3 * fc.h[1]);
            assert!((fc.d[1] - k as f64 * PI * r.powi(2 * k as i32) / 2.0).abs() < 1e-2 * fc.d[1]);
        }
    }

    #[test]
    fn log_derivative_defect_vanishes_for_homogeneous_data() {
        let dom = GraphDomain::halfplane(2, 1.0);
        let id = MatrixField::identity(2);
        let radii = radius_grid(0.05, 0.2);
        let defect = |h: f64, k: u32| {
            let u = AnalyticSolution::halfplane_harmonic(2, k);
            let fc = frequency(&u, &id, &dom, &ORIGIN, &radii, &QuadratureSpec::uniform(2, h))
                .unwrap();
            check_h_logderivative(&fc, 2, 0.0).max_defect
        };
        for k in [1, 2] {
            let coarse = defect(1.0 / 128.0, k);
            let fine = defect(1.0 / 256.0, k);
            assert!(fine < 0.5, "k={k}: {fine}");
            assert!(fine < coarse, "k={k}: {coarse} -> {fine}");
        }
    }

    #[test]
    fn three_ball_reduces_at_dyadic_radii() {
        // γ = 0 and (r, 2r, 4r): β = 1 and the dimension term vanishes
        let rep = three_ball_from_masses(2, [0.1, 0.2, 0.4], [1.0, 8.0, 100.0], 5.0, 0.0).unwrap();
        assert_eq!(rep.beta, 1.0);
        assert!((rep.rhs - (100.0f64 / 8.0).ln()).abs() < 1e-12);
        assert!((rep.lhs - 8f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn three_ball_is_sharp_for_homogeneous_masses() {
        // J ∝ r^{2k+d}: lhs = rhs for any radii when γ = 0
        let p = 2.0 * 3.0 + 2.0;
        let radii = [0.07, 0.13, 0.31];
        let masses = radii.map(|r: f64| 0.3 * r.powf(p));
        let rep = three_ball_from_masses(2, radii, masses, 0.0, 0.0).unwrap();
        assert!(rep.margin.abs() < 1e-12);
    }

    #[test]
    fn required_constant_recipe() {
        assert_eq!(required_constant(1.0, 2.0, 0.1, 0.0), 0.0);
        assert!((required_constant(3.0, 2.0, 0.1, 0.0) - 1.0 / (0.1 * 3.0)).abs() < 1e-12);
        assert_eq!(required_constant(2.0 + 1e-9, 2.0, 0.0, 1e-6), 0.0);
        assert!(required_constant(2.1, 2.0, 0.0, 1e-6).is_infinite());
    }

    #[test]
    fn radius_grid_contains_doublings() {
        let g = radius_grid(0.05, 0.2);
        assert_eq!(g.len(), 9);
        assert!((g[4] - 0.1).abs() < 1e-15 && (g[8] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn affine_invariance_constant_diag() {
        // u = x2 solves any constant-coefficient equation on the halfplane
        let a = MatrixField::constant(Mat::diag(&[4.0, 1.0])).unwrap();
        let dom = GraphDomain::halfplane(2, 1.0);
        let b = Ball {
            center: ORIGIN,
            radius: 1.0,
        };
        let u = GridSolution::from_fn(&dom, b, 257, |p| p[1]).unwrap();
        let q = QuadratureSpec::for_solution(&u);
        let direct = weighted_mass(&u, &a, &dom, &[0.0, 0.05, 0.0], 0.2, &q).unwrap().value;
        let via = weighted_mass_normalized(&u, &a, &dom, &[0.0, 0.05, 0.0], 0.2, u.mesh.h / 2.0)
            .unwrap();
        assert!((direct - via).abs() < 1e-3 * direct, "{direct} {via}");
    }

    #[test]
    fn monotonicity_and_boundary_doubling_on_solved_wedge() {
        let dom = GraphDomain::wedge(2, PI / 2.0, 0.5).unwrap();
        let g = AnalyticSolution::wedge_harmonic(PI / 2.0).unwrap();
        let id = MatrixField::identity(2);
        let sol = solve(&dom, &id, ball(), &g, &SolveParams::new(257)).unwrap();
        let q = QuadratureSpec::for_solution(&sol);
        let radii = radius_grid(0.05, 0.1);
        let rep = check_almost_monotonicity(&sol, &id, &dom, &ORIGIN, &radii, &q, 0.02).unwrap();
        assert_eq!(rep.c_emp, 0.0);
        for n in &rep.doubling {
            assert!((n - 6.0 * LN_2).abs() < 0.05 * 6.0 * LN_2);
        }
        let b = check_boundary_doubling(&sol, &id, &dom, &ORIGIN, &radii, &q, 0.02).unwrap();
        assert_eq!(b.c_emp, 0.0);
        assert!(matches!(
            check_boundary_doubling(&sol, &id, &dom, &ORIGIN, &[0.3], &q, 0.02),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn shift_check_is_finite_and_zero_shift_reduces() {
        let dom = GraphDomain::halfplane(2, 1.0);
        let u = AnalyticSolution::halfplane_harmonic(2, 1);
        let id = MatrixField::identity(2);
        let q = QuadratureSpec::uniform(2, 1.0 / 256.0);
        let rep = check_shift(&u, &id, &dom, &ORIGIN, &[0.01, 0.01, 0.0], 0.2, 4.0, &q, 1e-3)
            .unwrap();
        assert!(rep.c_emp.is_finite());
        let same = check_shift(&u, &id, &dom, &ORIGIN, &ORIGIN, 0.2, 4.0, &q, 1e-3).unwrap();
        assert_eq!(same.theta, 0.0);
        assert_eq!(same.c_emp, 0.0);
        assert!(matches!(
            check_shift(&u, &id, &dom, &ORIGIN, &[0.1, 0.1, 0.0], 0.2, 4.0, &q, 1e-3),
            Err(Error::Precondition { .. })
        ));
    }

    #[test]
    fn starshape_precondition_failure_carries_point() {
        let dom = GraphDomain::sawtooth(2, 0.5, 4, 8.0, 1.0).unwrap();
        let u = AnalyticSolution::halfplane_harmonic(2, 1);
        let id = MatrixField::identity(2);
        let q = QuadratureSpec::uniform(2, 1.0 / 64.0);
        let x0 = [0.25, 0.01, 0.0];
        match check_almost_monotonicity(&u, &id, &dom, &x0, &[0.02, 0.04], &q, 0.02) {
            Err(Error::Precondition { point: Some(_), .. }) => {}
            other => panic!("expected a precondition failure, got {other:?}"),
        }
    }
}
