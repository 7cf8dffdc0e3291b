//! Discrete A-harmonic functions on B∩Ω with zero data on the graph, and a
//! small library of closed-form solutions used as ground truth.
//!
//! Nodes form a uniform grid over the cube circumscribing the ball, indexed
//! with the first coordinate varying fastest. A node is
//! - `Graph` when it lies on or below the graph (value 0),
//! - `Sphere` when it lies above the graph but outside the open ball
//!   (value g(x)),
//! - `Unknown` otherwise.
//!
//! The operator comes from a cell-wise energy with A frozen at the cell
//! centre: diagonal entries weight squared edge differences, off-diagonal
//! entries couple the cell-averaged difference quotients. Each cell form is
//! positive semidefinite, so the assembled system is SPD.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::coefficients::MatrixField;
use crate::error::{Error, Result};
use crate::geometry::{Ball, GraphDomain};
use crate::linalg::{norm, sub, Mat, Point, ORIGIN};

/// Anything that can be sampled pointwise together with its gradient.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &Point) -> Result<f64>;
    fn grad(&self, x: &Point) -> Result<Point>;
}

/// A closure viewed as a field; the gradient is taken by central differences
/// with step `step`.
pub struct FnField<F> {
    pub d: usize,
    pub step: f64,
    pub f: F,
}

impl<F: Fn(&Point) -> f64 + Sync> ScalarField for FnField<F> {
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, x: &Point) -> Result<f64> {
        Ok((self.f)(x))
    }
    fn grad(&self, x: &Point) -> Result<Point> {
        let mut g = ORIGIN;
        for (i, gi) in g.iter_mut().enumerate().take(self.d) {
            let mut p = *x;
            let mut m = *x;
            p[i] += self.step;
            m[i] -= self.step;
            *gi = ((self.f)(&p) - (self.f)(&m)) / (2.0 * self.step);
        }
        Ok(g)
    }
}

// ---------------------------------------------------------------------------
// analytic solutions

#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticKind {
    /// Im((x_1 + i x_d)^k), vanishing on {x_d = 0}.
    HalfplaneHarmonic { k: u32 },
    /// ρ^{π/θ} sin(πψ/θ) with ψ the angle from the right edge of the wedge
    /// {x_2 > cot(θ/2)|x_1|}.
    WedgeHarmonic { opening: f64 },
    /// v(E⁻¹x) for harmonic v; solves the equation with A = E².
    AffineImage { inner: Box<AnalyticSolution>, e_inv: Mat },
    /// Σ c_i v_i.
    Combination(Vec<(f64, AnalyticSolution)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSolution {
    pub d: usize,
    pub kind: AnalyticKind,
    /// Homogeneity degree, when homogeneous.
    pub degree: Option<f64>,
}

impl AnalyticSolution {
    pub fn halfplane_harmonic(d: usize, k: u32) -> Self {
        AnalyticSolution {
            d,
            kind: AnalyticKind::HalfplaneHarmonic { k },
            degree: Some(k as f64),
        }
    }

    pub fn wedge_harmonic(opening: f64) -> Result<Self> {
        if !(opening > 0.0 && opening <= std::f64::consts::PI) {
            return Err(Error::InvalidParameter("wedge opening must lie in (0, pi]".into()));
        }
        Ok(AnalyticSolution {
            d: 2,
            kind: AnalyticKind::WedgeHarmonic { opening },
            degree: Some(std::f64::consts::PI / opening),
        })
    }

    /// Pairs with the constant coefficient matrix `E²`.
    pub fn affine_image(inner: AnalyticSolution, e: &Mat) -> Result<Self> {
        let e_inv = e
            .inverse()
            .ok_or_else(|| Error::InvalidParameter("singular affine map".into()))?;
        let degree = inner.degree;
        Ok(AnalyticSolution {
            d: inner.d,
            kind: AnalyticKind::AffineImage {
                inner: Box::new(inner),
                e_inv,
            },
            degree,
        })
    }

    pub fn combination(terms: Vec<(f64, AnalyticSolution)>) -> Result<Self> {
        let d = terms
            .first()
            .map(|t| t.1.d)
            .ok_or_else(|| Error::InvalidParameter("empty combination".into()))?;
        if terms.iter().any(|t| t.1.d != d) {
            return Err(Error::InvalidParameter("mixed dimensions in combination".into()));
        }
        let first = terms[0].1.degree;
        let degree = if terms.iter().all(|t| t.1.degree == first) { first } else { None };
        Ok(AnalyticSolution {
            d,
            kind: AnalyticKind::Combination(terms),
            degree,
        })
    }

    /// Looks a solution up by name: `halfplane_harmonic_<k>`,
    /// `wedge_harmonic` (needs `opening`), `constant_coefficient_affine_image`
    /// (needs `matrix` = E² and `k`).
    pub fn from_library(name: &str, d: usize, params: &LibraryParams) -> Result<Self> {
        if let Some(k) = name.strip_prefix("halfplane_harmonic_") {
            let k: u32 = k
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad degree in `{name}`")))?;
            return Ok(Self::halfplane_harmonic(d, k));
        }
        match name {
            "wedge_harmonic" => {
                if d != 2 {
                    return Err(Error::InvalidParameter("wedge_harmonic is two-dimensional".into()));
                }
                Self::wedge_harmonic(params.opening.ok_or_else(|| {
                    Error::InvalidParameter("wedge_harmonic needs an opening angle".into())
                })?)
            }
            "constant_coefficient_affine_image" => {
                let a = params.matrix.ok_or_else(|| {
                    Error::InvalidParameter("affine image needs the matrix A = E^2".into())
                })?;
                let field = MatrixField::constant(a)?;
                let e = crate::coefficients::sqrt_at(&field, &ORIGIN)?.e;
                Self::affine_image(Self::halfplane_harmonic(d, params.k.unwrap_or(1)), &e)
            }
            _ => Err(Error::InvalidParameter(format!("unknown analytic solution `{name}`"))),
        }
    }

    fn eval(&self, x: &Point) -> (f64, Point) {
        let d = self.d;
        match &self.kind {
            AnalyticKind::HalfplaneHarmonic { k } => {
                // f = z^k with z = x_1 + i x_d; u = Im f, ∇u = (Im f', Re f')
                let (a, b) = (x[0], x[d - 1]);
                let (mut re, mut im) = (1.0, 0.0);
                let (mut dre, mut dim) = (0.0, 0.0);
                for step in 0..*k {
                    if step + 1 == *k {
                        dre = *k as f64 * re;
                        dim = *k as f64 * im;
                    }
                    let nre = re * a - im * b;
                    im = re * b + im * a;
                    re = nre;
                }
                let mut g = ORIGIN;
                g[0] = dim;
                g[d - 1] = dre;
                (im, g)
            }
            AnalyticKind::WedgeHarmonic { opening } => {
                let a = std::f64::consts::PI / opening;
                let tilt = std::f64::consts::FRAC_PI_2 - opening / 2.0;
                let rho = x[0].hypot(x[1]);
                if rho == 0.0 {
                    return (0.0, ORIGIN);
                }
                let mut psi = x[1].atan2(x[0]) - tilt;
                if psi < -std::f64::consts::PI {
                    psi += 2.0 * std::f64::consts::PI;
                }
                let u = rho.powf(a) * (a * psi).sin();
                // w = z e^{-i tilt}; u = Im w^a; ∇u = (Im(a w^{a-1} e^{-i tilt}), Re(...))
                let mag = a * rho.powf(a - 1.0);
                let ang = (a - 1.0) * psi - tilt;
                (u, [mag * ang.sin(), mag * ang.cos(), 0.0])
            }
            AnalyticKind::AffineImage { inner, e_inv } => {
                let (v, g) = inner.eval(&e_inv.apply(x));
                (v, e_inv.transpose().apply(&g))
            }
            AnalyticKind::Combination(terms) => {
                let mut v = 0.0;
                let mut g = ORIGIN;
                for (c, t) in terms {
                    let (tv, tg) = t.eval(x);
                    v += c * tv;
                    for i in 0..d {
                        g[i] += c * tg[i];
                    }
                }
                (v, g)
            }
        }
    }

    /// Second derivatives by central differences of the closed-form
    /// gradient; used to verify the pairing with a constant A.
    pub fn hessian_fd(&self, x: &Point, step: f64) -> Mat {
        let d = self.d;
        let mut hmat = Mat::zeros(d);
        for j in 0..d {
            let mut p = *x;
            let mut m = *x;
            p[j] += step;
            m[j] -= step;
            let gp = self.eval(&p).1;
            let gm = self.eval(&m).1;
            for i in 0..d {
                hmat.m[i][j] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        hmat
    }
}

#[derive(Debug, Clone, Default)]
pub struct LibraryParams {
    pub opening: Option<f64>,
    pub matrix: Option<Mat>,
    pub k: Option<u32>,
}

impl ScalarField for AnalyticSolution {
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, x: &Point) -> Result<f64> {
        Ok(self.eval(x).0)
    }
    fn grad(&self, x: &Point) -> Result<Point> {
        Ok(self.eval(x).1)
    }
}

// ---------------------------------------------------------------------------
// mesh

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NodeKind {
    Unknown,
    Graph,
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CellClass {
    Interior,
    BoundaryGraph,
    BoundarySphere,
    Exterior,
}

/// Uniform grid over the cube `[c − R, c + R]^d` circumscribing the ball.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mesh {
    pub d: usize,
    /// Nodes per axis.
    pub n: usize,
    pub h: f64,
    pub lo: Point,
    pub ball: Ball,
}

impl Mesh {
    pub fn new(d: usize, ball: Ball, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParameter("need at least 3 nodes per axis".into()));
        }
        let mut lo = ball.center;
        for c in lo.iter_mut().take(d) {
            *c -= ball.radius;
        }
        Ok(Mesh {
            d,
            n,
            h: 2.0 * ball.radius / (n - 1) as f64,
            lo,
            ball,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn multi(&self, idx: usize) -> [usize; 3] {
        let mut m = [0; 3];
        let mut r = idx;
        for c in m.iter_mut().take(self.d) {
            *c = r % self.n;
            r /= self.n;
        }
        m
    }

    pub fn linear(&self, m: &[usize; 3]) -> usize {
        let mut idx = 0;
        for i in (0..self.d).rev() {
            idx = idx * self.n + m[i];
        }
        idx
    }

    pub fn coord(&self, m: &[usize; 3]) -> Point {
        let mut p = ORIGIN;
        for i in 0..self.d {
            p[i] = self.lo[i] + m[i] as f64 * self.h;
        }
        p
    }

    pub fn node_kind(&self, domain: &GraphDomain, p: &Point) -> NodeKind {
        if !domain.contains(p) {
            NodeKind::Graph
        } else if norm(self.d, &sub(p, &self.ball.center)) >= self.ball.radius {
            NodeKind::Sphere
        } else {
            NodeKind::Unknown
        }
    }

    /// Class of the cell with lowest corner `m` and the fraction of its
    /// volume inside B∩Ω (4^d midpoint subsamples for cut cells).
    pub fn classify_cell(&self, domain: &GraphDomain, m: &[usize; 3]) -> (CellClass, f64) {
        let d = self.d;
        let mut above = 0;
        let mut inside_ball = 0;
        let corners = 1usize << d;
        for c in 0..corners {
            let mut q = *m;
            for (i, qi) in q.iter_mut().enumerate().take(d) {
                *qi += (c >> i) & 1;
            }
            let p = self.coord(&q);
            if domain.contains(&p) {
                above += 1;
            }
            if self.ball.contains(d, &p) {
                inside_ball += 1;
            }
        }
        let class = if above == corners && inside_ball == corners {
            CellClass::Interior
        } else if above > 0 && above < corners {
            CellClass::BoundaryGraph
        } else if inside_ball > 0 && inside_ball < corners {
            CellClass::BoundarySphere
        } else {
            CellClass::Exterior
        };
        let fraction = match class {
            CellClass::Interior => 1.0,
            _ => {
                let sub_n = 4usize;
                let total = sub_n.pow(d as u32);
                let base = self.coord(m);
                let mut hit = 0;
                for s in 0..total {
                    let mut p = base;
                    let mut r = s;
                    for pi in p.iter_mut().take(d) {
                        *pi += ((r % sub_n) as f64 + 0.5) * self.h / sub_n as f64;
                        r /= sub_n;
                    }
                    if domain.contains(&p) && self.ball.contains(d, &p) {
                        hit += 1;
                    }
                }
                hit as f64 / total as f64
            }
        };
        (class, fraction)
    }
}

// ---------------------------------------------------------------------------
// sparse SPD system

#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<u32>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn matvec(&self, x: &[f64], y: &mut [f64], parallel: bool) {
        let row = |(i, yi): (usize, &mut f64)| {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[k] * x[self.col[k] as usize];
            }
            *yi = s;
        };
        if parallel {
            y.par_iter_mut().enumerate().with_min_len(4096).for_each(row);
        } else {
            y.iter_mut().enumerate().for_each(row);
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.col[k] as usize == i)
                    .map(|k| self.val[k])
                    .unwrap_or(0.0)
            })
            .collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col[k] as usize;
                let back = (self.row_ptr[j]..self.row_ptr[j + 1])
                    .find(|&q| self.col[q] as usize == i)
                    .map(|q| self.val[q])
                    .unwrap_or(0.0);
                worst = worst.max((self.val[k] - back).abs());
            }
        }
        worst
    }
}

fn dot_seq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct PcgStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub history: Vec<f64>,
}

/// Jacobi-preconditioned conjugate gradients. Dot products are summed
/// sequentially in index order, so results do not depend on thread count.
pub fn pcg(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    parallel: bool,
) -> Result<PcgStats> {
    let n = a.n;
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&v| if v > 0.0 { 1.0 / v } else { 1.0 })
        .collect();
    let bnorm = dot_seq(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(PcgStats {
            iterations: 0,
            relative_residual: 0.0,
            history: vec![0.0],
        });
    }
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r, parallel);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot_seq(&r, &z);
    let mut history = Vec::new();
    let mut res = dot_seq(&r, &r).sqrt() / bnorm;
    history.push(res);
    let mut it = 0;
    while res > tol {
        if it >= max_iter {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: res,
                history,
            });
        }
        a.matvec(&p, &mut q, parallel);
        let pq = dot_seq(&p, &q);
        if pq <= 0.0 {
            return Err(Error::AssumptionViolation("system matrix is not positive definite".into()));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot_seq(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
        res = dot_seq(&r, &r).sqrt() / bnorm;
        history.push(res);
    }
    Ok(PcgStats {
        iterations: it,
        relative_residual: res,
        history,
    })
}

// ---------------------------------------------------------------------------
// grid solutions

#[derive(Debug, Clone)]
pub struct SolveParams {
    pub nodes_per_axis: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub parallel: bool,
}

impl SolveParams {
    pub fn new(nodes_per_axis: usize) -> Self {
        SolveParams {
            nodes_per_axis,
            tol: 1e-10,
            max_iter: 100_000,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridSolution {
    pub mesh: Mesh,
    pub values: Vec<f64>,
    pub kinds: Vec<NodeKind>,
    /// Human-readable description of the outer data.
    pub data: String,
    pub residual: f64,
    pub iterations: usize,
    pub domain_hash: [u8; 32],
    /// Whether h ≤ r₀/64, the spacing below which the graph counts as resolved.
    pub resolved: bool,
}

/// sha256 of the domain's canonical debug rendering.
pub fn domain_hash(domain: &GraphDomain) -> [u8; 32] {
    let digest = Sha256::digest(format!("{domain:?}").as_bytes());
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn classify_nodes(mesh: &Mesh, domain: &GraphDomain) -> Vec<NodeKind> {
    (0..mesh.node_count())
        .into_par_iter()
        .with_min_len(4096)
        .map(|idx| mesh.node_kind(domain, &mesh.coord(&mesh.multi(idx))))
        .collect()
}

/// Local stiffness entry between corners `a` and `b` of a cell with
/// coefficient `am`, without the common factor h^{d−2}.
fn cell_entry(d: usize, am: &Mat, a: usize, b: usize) -> f64 {
    let edge_w = 1.0 / (1usize << (d - 1)) as f64;
    let cross_w = edge_w * edge_w;
    let mut v = 0.0;
    for i in 0..d {
        if a == b {
            v += am.m[i][i] * edge_w;
        } else if a ^ b == 1 << i {
            v -= am.m[i][i] * edge_w;
        }
        for j in 0..d {
            if i != j && am.m[i][j] != 0.0 {
                let si = if (a >> i) & 1 == 1 { 1.0 } else { -1.0 };
                let sj = if (b >> j) & 1 == 1 { 1.0 } else { -1.0 };
                v += am.m[i][j] * si * sj * cross_w;
            }
        }
    }
    v
}

struct Fragment {
    row_len: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
    rhs: Vec<f64>,
}

fn assemble(
    mesh: &Mesh,
    field: &MatrixField,
    kinds: &[NodeKind],
    values: &[f64],
    unknowns: &[usize],
    number: &[u32],
    parallel: bool,
) -> (Csr, Vec<f64>) {
    let d = mesh.d;
    let n = mesh.n;
    let scale = mesh.h.powi(d as i32 - 2);
    let slots = 3usize.pow(d as u32);
    let build = |chunk: &[usize]| -> Fragment {
        let mut frag = Fragment {
            row_len: Vec::with_capacity(chunk.len()),
            col: Vec::new(),
            val: Vec::new(),
            rhs: Vec::with_capacity(chunk.len()),
        };
        let mut row = vec![0.0; slots];
        for &node in chunk {
            row.iter_mut().for_each(|v| *v = 0.0);
            let m = mesh.multi(node);
            let mut rhs = 0.0;
            for corner in 0..(1usize << d) {
                let mut origin = m;
                let mut ok = true;
                for i in 0..d {
                    let bit = (corner >> i) & 1;
                    if m[i] < bit || m[i] - bit + 1 >= n {
                        ok = false;
                        break;
                    }
                    origin[i] = m[i] - bit;
                }
                if !ok {
                    continue;
                }
                let mut centre = mesh.coord(&origin);
                for c in centre.iter_mut().take(d) {
                    *c += 0.5 * mesh.h;
                }
                let am = field.eval(&centre);
                for other in 0..(1usize << d) {
                    let e = cell_entry(d, &am, corner, other) * scale;
                    if e == 0.0 {
                        continue;
                    }
                    let mut q = origin;
                    let mut slot = 0;
                    let mut stride = 1;
                    for i in 0..d {
                        let bit = (other >> i) & 1;
                        q[i] += bit;
                        slot += (q[i] + 1 - m[i]) * stride;
                        stride *= 3;
                    }
                    let qi = mesh.linear(&q);
                    if kinds[qi] == NodeKind::Unknown {
                        row[slot] += e;
                    } else {
                        rhs -= e * values[qi];
                    }
                }
            }
            let mut len = 0;
            for (slot, &v) in row.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let mut q = m;
                let mut s = slot;
                for qi in q.iter_mut().take(d) {
                    *qi = *qi + (s % 3) - 1;
                    s /= 3;
                }
                frag.col.push(number[mesh.linear(&q)]);
                frag.val.push(v);
                len += 1;
            }
            frag.row_len.push(len);
            frag.rhs.push(rhs);
        }
        frag
    };
    let frags: Vec<Fragment> = if parallel {
        unknowns.par_chunks(4096).map(build).collect()
    } else {
        unknowns.chunks(4096).map(build).collect()
    };
    let mut row_ptr = Vec::with_capacity(unknowns.len() + 1);
    row_ptr.push(0);
    let mut col = Vec::new();
    let mut val = Vec::new();
    let mut rhs = Vec::with_capacity(unknowns.len());
    for f in frags {
        for len in f.row_len {
            row_ptr.push(row_ptr.last().unwrap() + len);
        }
        col.extend(f.col);
        val.extend(f.val);
        rhs.extend(f.rhs);
    }
    (
        Csr {
            n: unknowns.len(),
            row_ptr,
            col,
            val,
        },
        rhs,
    )
}

/// Solves −∇·(A∇u) = 0 in B∩Ω with u = 0 on the graph and u = g outside B.
pub fn solve(
    domain: &GraphDomain,
    field: &MatrixField,
    ball: Ball,
    g: &dyn ScalarField,
    params: &SolveParams,
) -> Result<GridSolution> {
    let d = domain.d;
    if field.d != d || g.dim() != d {
        return Err(Error::InvalidParameter("dimension mismatch between inputs".into()));
    }
    let mesh = Mesh::new(d, ball, params.nodes_per_axis)?;
    let kinds = classify_nodes(&mesh, domain);
    let mut values = vec![0.0; mesh.node_count()];
    for (idx, kind) in kinds.iter().enumerate() {
        if *kind == NodeKind::Sphere {
            values[idx] = g.value(&mesh.coord(&mesh.multi(idx)))?;
        }
    }
    let unknowns: Vec<usize> = (0..kinds.len())
        .filter(|&i| kinds[i] == NodeKind::Unknown)
        .collect();
    if unknowns.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut number = vec![u32::MAX; kinds.len()];
    for (k, &i) in unknowns.iter().enumerate() {
        number[i] = k as u32;
    }
    let (a, b) = assemble(&mesh, field, &kinds, &values, &unknowns, &number, params.parallel);
    let mut x = vec![0.0; unknowns.len()];
    let stats = pcg(&a, &b, &mut x, params.tol, params.max_iter, params.parallel)?;
    for (k, &i) in unknowns.iter().enumerate() {
        values[i] = x[k];
    }
    let resolved = mesh.h <= domain.modulus.r0 / 64.0 * (1.0 + 1e-12);
    Ok(GridSolution {
        mesh,
        values,
        kinds,
        data: format!("{g:?}", g = DataLabel(g)),
        residual: stats.relative_residual,
        iterations: stats.iterations,
        domain_hash: domain_hash(domain),
        resolved,
    })
}

struct DataLabel<'a>(&'a dyn ScalarField);

impl std::fmt::Debug for DataLabel<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "field(d={})", self.0.dim())
    }
}

impl GridSolution {
    /// Samples `f` on a grid with the same node classification as `solve`;
    /// useful for synthetic fields that are not solutions.
    pub fn from_fn(
        domain: &GraphDomain,
        ball: Ball,
        nodes_per_axis: usize,
        f: impl Fn(&Point) -> f64 + Sync,
    ) -> Result<Self> {
        let mesh = Mesh::new(domain.d, ball, nodes_per_axis)?;
        let kinds = classify_nodes(&mesh, domain);
        let values = (0..mesh.node_count())
            .map(|i| match kinds[i] {
                NodeKind::Graph => 0.0,
                _ => f(&mesh.coord(&mesh.multi(i))),
            })
            .collect();
        let resolved = mesh.h <= domain.modulus.r0 / 64.0 * (1.0 + 1e-12);
        Ok(GridSolution {
            mesh,
            values,
            kinds,
            data: "sampled".into(),
            residual: 0.0,
            iterations: 0,
            domain_hash: domain_hash(domain),
            resolved,
        })
    }

    pub fn with_data_label(mut self, label: impl Into<String>) -> Self {
        self.data = label.into();
        self
    }

    /// Node value and coordinates for every node of the given kind.
    pub fn nodes(&self, kind: NodeKind) -> impl Iterator<Item = (Point, f64)> + '_ {
        (0..self.values.len())
            .filter(move |&i| self.kinds[i] == kind)
            .map(move |i| (self.mesh.coord(&self.mesh.multi(i)), self.values[i]))
    }

    /// Cell containing `x` and the local coordinates in [0, 1]^d.
    fn locate(&self, x: &Point) -> Result<([usize; 3], [f64; 3])> {
        let mesh = &self.mesh;
        let d = mesh.d;
        if norm(d, &sub(x, &mesh.ball.center)) > mesh.ball.radius * (1.0 + 1e-9) {
            return Err(Error::OutOfRange(format!(
                "{:?} lies outside the solved ball",
                &x[..d]
            )));
        }
        let mut m = [0usize; 3];
        let mut t = [0.0; 3];
        for i in 0..d {
            let s = (x[i] - mesh.lo[i]) / mesh.h;
            if !(s >= 0.0 && s <= (mesh.n - 1) as f64) {
                return Err(Error::OutOfRange(format!("{:?} outside the grid", &x[..d])));
            }
            let k = (s.floor() as usize).min(mesh.n - 2);
            m[i] = k;
            t[i] = s - k as f64;
        }
        Ok((m, t))
    }

    fn corner_values(&self, m: &[usize; 3]) -> [f64; 8] {
        let d = self.mesh.d;
        let mut out = [0.0; 8];
        for (c, o) in out.iter_mut().enumerate().take(1 << d) {
            let mut q = *m;
            for (i, qi) in q.iter_mut().enumerate().take(d) {
                *qi += (c >> i) & 1;
            }
            *o = self.values[self.mesh.linear(&q)];
        }
        out
    }

    /// Central-difference gradient at nodes (one-sided at the grid edge),
    /// interpolated multilinearly to `x`.
    pub fn gradient(&self, x: &Point) -> Result<Point> {
        let (m, t) = self.locate(x)?;
        let d = self.mesh.d;
        let n = self.mesh.n;
        let h = self.mesh.h;
        let mut g = ORIGIN;
        for c in 0..(1usize << d) {
            let mut q = m;
            let mut w = 1.0;
            for i in 0..d {
                let bit = (c >> i) & 1;
                q[i] += bit;
                w *= if bit == 1 { t[i] } else { 1.0 - t[i] };
            }
            if w == 0.0 {
                continue;
            }
            for i in 0..d {
                let mut lo = q;
                let mut hi = q;
                lo[i] = q[i].saturating_sub(1);
                hi[i] = (q[i] + 1).min(n - 1);
                let span = (hi[i] - lo[i]) as f64 * h;
                let gi = (self.values[self.mesh.linear(&hi)] - self.values[self.mesh.linear(&lo)])
                    / span;
                g[i] += w * gi;
            }
        }
        Ok(g)
    }

    pub fn save(&self, path: &Path, config: &str) -> Result<()> {
        let mut buf: Vec<u8> = Vec::with_capacity(self.values.len() * 8 + 256);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.mesh.d as u32).to_le_bytes());
        buf.extend_from_slice(&(self.mesh.n as u64).to_le_bytes());
        buf.extend_from_slice(&self.mesh.h.to_le_bytes());
        for v in self.mesh.lo {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.mesh.ball.center {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.mesh.ball.radius.to_le_bytes());
        buf.extend_from_slice(&self.domain_hash);
        buf.extend_from_slice(&self.residual.to_le_bytes());
        buf.extend_from_slice(&(self.iterations as u64).to_le_bytes());
        buf.extend_from_slice(&(config.len() as u64).to_le_bytes());
        buf.extend_from_slice(config.as_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Rebuilds a solution from a checkpoint; the domain must hash to the
    /// value recorded in the file.
    pub fn from_checkpoint(cp: Checkpoint, domain: &GraphDomain) -> Result<Self> {
        if domain_hash(domain) != cp.domain_hash {
            return Err(Error::Format("checkpoint was written for a different domain".into()));
        }
        let mesh = Mesh::new(cp.d, cp.ball, cp.n)?;
        if mesh.h.to_bits() != cp.h.to_bits() || mesh.lo != cp.lo {
            return Err(Error::Format("checkpoint grid header is inconsistent".into()));
        }
        let kinds = classify_nodes(&mesh, domain);
        let resolved = mesh.h <= domain.modulus.r0 / 64.0 * (1.0 + 1e-12);
        Ok(GridSolution {
            mesh,
            values: cp.values,
            kinds,
            data: "checkpoint".into(),
            residual: cp.residual,
            iterations: cp.iterations,
            domain_hash: cp.domain_hash,
            resolved,
        })
    }
}

const MAGIC: &[u8; 8] = b"UCLABSOL";

/// Raw contents of a solution checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub d: usize,
    pub n: usize,
    pub h: f64,
    pub lo: Point,
    pub ball: Ball,
    pub domain_hash: [u8; 32],
    pub residual: f64,
    pub iterations: usize,
    pub config: String,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, at: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Format("not a solution checkpoint".into()));
        }
        let d = cur.u32()? as usize;
        if d != 2 && d != 3 {
            return Err(Error::Format(format!("bad dimension {d}")));
        }
        let n = cur.u64()? as usize;
        let h = cur.f64()?;
        let lo = [cur.f64()?, cur.f64()?, cur.f64()?];
        let center = [cur.f64()?, cur.f64()?, cur.f64()?];
        let radius = cur.f64()?;
        let mut domain_hash = [0u8; 32];
        domain_hash.copy_from_slice(cur.take(32)?);
        let residual = cur.f64()?;
        let iterations = cur.u64()? as usize;
        let clen = cur.u64()? as usize;
        let config = String::from_utf8(cur.take(clen)?.to_vec())
            .map_err(|_| Error::Format("config block is not UTF-8".into()))?;
        let count = n
            .checked_pow(d as u32)
            .ok_or_else(|| Error::Format("grid too large".into()))?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(cur.f64()?);
        }
        if cur.at != bytes.len() {
            return Err(Error::Format("trailing bytes after node values".into()));
        }
        Ok(Checkpoint {
            d,
            n,
            h,
            lo,
            ball: Ball { center, radius },
            domain_hash,
            residual,
            iterations,
            config,
            values,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.at + k > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.at..self.at + k];
        self.at += k;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl ScalarField for GridSolution {
    fn dim(&self) -> usize {
        self.mesh.d
    }

    /// Multilinear interpolation of the nodal values.
    fn value(&self, x: &Point) -> Result<f64> {
        let (m, t) = self.locate(x)?;
        let d = self.mesh.d;
        let cv = self.corner_values(&m);
        let mut v = 0.0;
        for (c, val) in cv.iter().enumerate().take(1 << d) {
            let mut w = 1.0;
            for i in 0..d {
                w *= if (c >> i) & 1 == 1 { t[i] } else { 1.0 - t[i] };
            }
            v += w * val;
        }
        Ok(v)
    }

    /// Gradient of the multilinear interpolant.
    fn grad(&self, x: &Point) -> Result<Point> {
        let (m, t) = self.locate(x)?;
        let d = self.mesh.d;
        let cv = self.corner_values(&m);
        let mut g = ORIGIN;
        for (c, val) in cv.iter().enumerate().take(1 << d) {
            for (k, gk) in g.iter_mut().enumerate().take(d) {
                let mut w = if (c >> k) & 1 == 1 { 1.0 } else { -1.0 };
                for i in 0..d {
                    if i != k {
                        w *= if (c >> i) & 1 == 1 { t[i] } else { 1.0 - t[i] };
                    }
                }
                *gk += w * val;
            }
        }
        for gk in g.iter_mut().take(d) {
            *gk /= self.mesh.h;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit_ball(_d: usize) -> Ball {
        Ball {
            center: ORIGIN,
            radius: 0.5,
        }
    }

    fn max_error(sol: &GridSolution, exact: &AnalyticSolution) -> f64 {
        sol.nodes(NodeKind::Unknown)
            .map(|(p, v)| (v - exact.value(&p).unwrap()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn analytic_library_degrees() {
        let u = AnalyticSolution::from_library("halfplane_harmonic_1", 2, &Default::default())
            .unwrap();
        assert_eq!(u.degree, Some(1.0));
        assert_eq!(u.value(&[0.3, 0.7, 0.0]).unwrap(), 0.7);
        let w = AnalyticSolution::wedge_harmonic(PI / 2.0).unwrap();
        assert_eq!(w.degree, Some(2.0));
        // in the graph frame the right-angle wedge solution is x2² − x1²
        let p = [0.2, 0.5, 0.0];
        assert!((w.value(&p).unwrap() - (0.25 - 0.04)).abs() < 1e-14);
        assert!(matches!(
            AnalyticSolution::from_library("nope", 2, &Default::default()),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn wedge_three_quarter_vanishes_on_edges_and_is_harmonic() {
        let theta = 3.0 * PI / 4.0;
        let w = AnalyticSolution::wedge_harmonic(theta).unwrap();
        assert!((w.degree.unwrap() - 4.0 / 3.0).abs() < 1e-15);
        let c = 1.0 / (theta / 2.0).tan();
        for k in 1..200 {
            let t = k as f64 / 200.0;
            for s in [-1.0, 1.0] {
                let p = [s * t, c * t, 0.0];
                assert!(w.value(&p).unwrap().abs() < 1e-12);
            }
            // interior: positive and harmonic
            let q = [0.3 * (t - 0.5), 0.2 + t, 0.0];
            assert!(w.value(&q).unwrap() > 0.0);
            let hs = w.hessian_fd(&q, 1e-5);
            assert!((hs.m[0][0] + hs.m[1][1]).abs() < 1e-5);
        }
    }

    #[test]
    fn closed_form_gradients_match_differences() {
        let u = AnalyticSolution::halfplane_harmonic(2, 3);
        let p = [0.3, 0.4, 0.0];
        let g = u.grad(&p).unwrap();
        let e = 1e-6;
        let fx = (u.value(&[0.3 + e, 0.4, 0.0]).unwrap() - u.value(&[0.3 - e, 0.4, 0.0]).unwrap())
            / (2.0 * e);
        let fy = (u.value(&[0.3, 0.4 + e, 0.0]).unwrap() - u.value(&[0.3, 0.4 - e, 0.0]).unwrap())
            / (2.0 * e);
        assert!((g[0] - fx).abs() < 1e-8 && (g[1] - fy).abs() < 1e-8);
        let w = AnalyticSolution::wedge_harmonic(3.0 * PI / 4.0).unwrap();
        let gw = w.grad(&p).unwrap();
        let wx = (w.value(&[0.3 + e, 0.4, 0.0]).unwrap() - w.value(&[0.3 - e, 0.4, 0.0]).unwrap())
            / (2.0 * e);
        assert!((gw[0] - wx).abs() < 1e-8);
    }

    #[test]
    fn affine_image_pairs_with_its_matrix() {
        let a = Mat::diag(&[4.0, 1.0]);
        let params = LibraryParams {
            matrix: Some(a),
            k: Some(2),
            ..Default::default()
        };
        let u = AnalyticSolution::from_library("constant_coefficient_affine_image", 2, &params)
            .unwrap();
        let hs = u.hessian_fd(&[0.3, 0.2, 0.0], 1e-5);
        let div: f64 = (0..2).map(|i| (0..2).map(|j| a.m[i][j] * hs.m[i][j]).sum::<f64>()).sum();
        assert!(div.abs() < 1e-6);
    }

    #[test]
    fn linear_data_reproduced_exactly() {
        let dom = GraphDomain::halfplane(2, 0.5);
        let g = AnalyticSolution::halfplane_harmonic(2, 1);
        let sol = solve(&dom, &MatrixField::identity(2), unit_ball(2), &g, &SolveParams::new(65))
            .unwrap();
        assert!(max_error(&sol, &g) < 1e-8);
        assert!(sol.residual <= 1e-10);
    }

    #[test]
    fn quadratic_and_cubic_harmonics_reproduced() {
        // the 5-point stencil is exact on harmonic polynomials up to degree 3
        let dom = GraphDomain::halfplane(2, 0.5);
        for k in [2, 3] {
            let g = AnalyticSolution::halfplane_harmonic(2, k);
            let sol =
                solve(&dom, &MatrixField::identity(2), unit_ball(2), &g, &SolveParams::new(65))
                    .unwrap();
            assert!(max_error(&sol, &g) < 1e-8, "k = {k}");
        }
    }

    #[test]
    fn right_angle_wedge_reproduced() {
        let dom = GraphDomain::wedge(2, PI / 2.0, 0.5).unwrap();
        let g = AnalyticSolution::wedge_harmonic(PI / 2.0).unwrap();
        let sol = solve(&dom, &MatrixField::identity(2), unit_ball(2), &g, &SolveParams::new(65))
            .unwrap();
        assert!(max_error(&sol, &g) < 1e-8);
    }

    #[test]
    fn grid_convergence_against_analytic_solutions() {
        // degree-5 harmonics are not reproduced exactly, so the nodal error is
        // the truncation error of the scheme
        let dom = GraphDomain::halfplane(2, 0.5);
        let cases: Vec<(MatrixField, AnalyticSolution)> = vec![
            (MatrixField::identity(2), AnalyticSolution::halfplane_harmonic(2, 5)),
            {
                let a = Mat::diag(&[4.0, 1.0]);
                let params = LibraryParams {
                    matrix: Some(a),
                    k: Some(5),
                    ..Default::default()
                };
                (
                    MatrixField::constant(a).unwrap(),
                    AnalyticSolution::from_library("constant_coefficient_affine_image", 2, &params)
                        .unwrap(),
                )
            },
        ];
        for (field, u) in &cases {
            let errs: Vec<f64> = [33, 65, 129]
                .iter()
                .map(|&n| {
                    let sol = solve(&dom, field, unit_ball(2), u, &SolveParams::new(n)).unwrap();
                    max_error(&sol, u)
                })
                .collect();
            assert!(errs[0] / errs[1] >= 3.0 && errs[1] / errs[2] >= 3.0, "{errs:?}");
        }
    }

    #[test]
    fn anisotropic_constant_matrix_is_exact_on_quadratics() {
        // u = x2(p x1 + q x2) solves the equation for constant A when
        // a12 p + a22 q = 0, and vanishes on {x2 = 0}
        let a = Mat::from_rows(&[vec![2.0, 0.6], vec![0.6, 1.0]]);
        let field = MatrixField::constant(a).unwrap();
        let (p, q) = (1.0, -0.6);
        let dom = GraphDomain::halfplane(2, 0.5);
        let f = |x: &Point| x[1] * (p * x[0] + q * x[1]);
        let exact = GridSolution::from_fn(&dom, unit_ball(2), 65, f).unwrap();
        let data = FnField { d: 2, step: 1e-6, f };
        let sol = solve(&dom, &field, unit_ball(2), &data, &SolveParams::new(65)).unwrap();
        let err = sol
            .values
            .iter()
            .zip(&exact.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn assembled_matrix_is_symmetric() {
        let dom = GraphDomain::sawtooth(2, 0.25, 3, 8.0, 0.5).unwrap();
        let k = [[3.0, 1.0, 0.0], [1.0, -2.0, 0.0]];
        let a = MatrixField::modulated(2, &[0.2, 0.15], &k, 0.3).unwrap();
        let mesh = Mesh::new(2, unit_ball(2), 33).unwrap();
        let kinds = classify_nodes(&mesh, &dom);
        let values = vec![1.0; kinds.len()];
        let unknowns: Vec<usize> =
            (0..kinds.len()).filter(|&i| kinds[i] == NodeKind::Unknown).collect();
        let mut number = vec![u32::MAX; kinds.len()];
        for (k, &i) in unknowns.iter().enumerate() {
            number[i] = k as u32;
        }
        let (csr, _) = assemble(&mesh, &a, &kinds, &values, &unknowns, &number, false);
        assert!(csr.max_asymmetry() < 1e-14);
        for v in csr.diagonal() {
            assert!(v > 0.0);
        }
    }

    #[test]
    fn three_dimensional_linear_solution() {
        let dom = GraphDomain::halfplane(3, 0.5);
        let g = AnalyticSolution::halfplane_harmonic(3, 2);
        let sol = solve(&dom, &MatrixField::identity(3), unit_ball(3), &g, &SolveParams::new(17))
            .unwrap();
        assert!(max_error(&sol, &g) < 1e-8);
    }

    #[test]
    fn gradient_examples() {
        let dom = GraphDomain::halfplane(2, 0.5);
        let lin = GridSolution::from_fn(&dom, unit_ball(2), 65, |p| p[1]).unwrap();
        let g = lin.gradient(&[0.1, 0.2, 0.0]).unwrap();
        assert!((g[0]).abs() < 1e-13 && (g[1] - 1.0).abs() < 1e-13);
        let quad = GridSolution::from_fn(&dom, unit_ball(2), 129, |p| 2.0 * p[0] * p[1]).unwrap();
        let g = quad.gradient(&[0.2, 0.25, 0.0]).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[1] - 0.4).abs() < 1e-12);
        let cubic = AnalyticSolution::halfplane_harmonic(2, 3);
        let errs: Vec<f64> = [65, 129]
            .iter()
            .map(|&n| {
                let s = GridSolution::from_fn(&dom, unit_ball(2), n, |p| cubic.value(p).unwrap())
                    .unwrap();
                let p = [0.11, 0.23, 0.0];
                let (a, b) = (s.gradient(&p).unwrap(), cubic.grad(&p).unwrap());
                norm(2, &sub(&a, &b))
            })
            .collect();
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
        assert!(matches!(lin.gradient(&[0.6, 0.0, 0.0]), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dom = GraphDomain::halfplane(2, 0.5);
        let g = AnalyticSolution::halfplane_harmonic(2, 2);
        let sol = solve(&dom, &MatrixField::identity(2), unit_ball(2), &g, &SolveParams::new(33))
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sol.bin");
        sol.save(&path, "[domain]\nkind = \"halfplane\"\n").unwrap();
        let cp = Checkpoint::read(&path).unwrap();
        assert!(cp.config.contains("halfplane"));
        let back = GridSolution::from_checkpoint(cp, &dom).unwrap();
        assert_eq!(back.values, sol.values);
        assert_eq!(back.kinds, sol.kinds);
        let other = GraphDomain::wedge(2, PI / 2.0, 0.5).unwrap();
        let cp = Checkpoint::read(&path).unwrap();
        assert!(matches!(GridSolution::from_checkpoint(cp, &other), Err(Error::Format(_))));
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(Checkpoint::read(&path), Err(Error::Format(_))));
    }

    #[test]
    fn non_convergence_carries_history() {
        let dom = GraphDomain::halfplane(2, 0.5);
        let g = AnalyticSolution::halfplane_harmonic(2, 2);
        let mut p = SolveParams::new(65);
        p.max_iter = 3;
        match solve(&dom, &MatrixField::identity(2), unit_ball(2), &g, &p) {
            Err(Error::NoConvergence { history, iterations, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 4);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn cell_classification() {
        let dom = GraphDomain::halfplane(2, 0.5);
        let mesh = Mesh::new(2, unit_ball(2), 9).unwrap();
        // h = 1/8 and node row 4 sits on the graph x2 = 0
        assert_eq!(mesh.classify_cell(&dom, &[4, 5, 0]), (CellClass::Interior, 1.0));
        let (class, frac) = mesh.classify_cell(&dom, &[4, 3, 0]);
        assert_eq!(class, CellClass::Exterior);
        assert_eq!(frac, 0.0);
        let (class, _) = mesh.classify_cell(&dom, &[4, 4, 0]);
        assert_eq!(class, CellClass::BoundaryGraph);
        let (class, _) = mesh.classify_cell(&dom, &[7, 5, 0]);
        assert_eq!(class, CellClass::BoundarySphere);
        let tilted = GraphDomain::wedge(2, PI / 2.0, 0.5).unwrap();
        let (class, frac) = mesh.classify_cell(&tilted, &[4, 4, 0]);
        assert_eq!(class, CellClass::BoundaryGraph);
        assert!((frac - 0.5).abs() < 0.2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn maximum_principle(c1 in 0.0f64..1.0, c2 in 0.0f64..1.0, shift in 0.0f64..0.5) {
            // nonnegative data: x2 and x2·(shift + x1² + x2²)-like combinations
            let dom = GraphDomain::sawtooth(2, 0.25, 3, 8.0, 0.5).unwrap();
            let f = |p: &Point| c1 * p[1].max(0.0) + c2 * (shift + p[0] * p[0]);
            let data = FnField { d: 2, step: 1e-6, f };
            let sol = solve(&dom, &MatrixField::identity(2), unit_ball(2), &data,
                            &SolveParams::new(33)).unwrap();
            let scale = sol.nodes(NodeKind::Sphere).map(|(_, v)| v).fold(0.0, f64::max).max(1e-300);
            for (_, v) in sol.nodes(NodeKind::Unknown) {
                prop_assert!(v >= -1e-8 * scale);
                prop_assert!(v <= scale * (1.0 + 1e-8));
            }
        }

        #[test]
        fn mirror_symmetry(c in 0.1f64..2.0) {
            let dom = GraphDomain::wedge(2, 2.0, 0.5).unwrap();
            let g = AnalyticSolution::combination(vec![
                (1.0, AnalyticSolution::halfplane_harmonic(2, 1)),
                (c, AnalyticSolution::halfplane_harmonic(2, 2)),
            ]).unwrap();
            // data x2 + c(x1² − x2²)... use its even part so the data is mirror symmetric
            let f = |p: &Point| {
                let q = [-p[0], p[1], 0.0];
                0.5 * (g.value(p).unwrap() + g.value(&q).unwrap())
            };
            let data = FnField { d: 2, step: 1e-6, f };
            let sol = solve(&dom, &MatrixField::identity(2), unit_ball(2), &data,
                            &SolveParams::new(33)).unwrap();
            let mesh = &sol.mesh;
            for idx in 0..sol.values.len() {
                let mut m = mesh.multi(idx);
                m[0] = mesh.n - 1 - m[0];
                let j = mesh.linear(&m);
                prop_assert!((sol.values[idx] - sol.values[j]).abs() < 1e-8);
            }
        }
    }
}
