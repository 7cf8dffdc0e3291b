//! Lipschitz graph domains `{x_d > φ(x')}` with a quasiconvexity modulus, and
//! the geometric predicates evaluated on them (one-sided flatness, halfspace
//! containment, A-starshape).

use serde::Serialize;

use crate::coefficients::MatrixField;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, sub, Point, ORIGIN};

/// Modulus ω(ρ) bounding how far the boundary may bend away from its
/// supporting halfspace at scale ρ.
#[derive(Debug, Clone, PartialEq)]
pub enum ModulusKind {
    Zero,
    Power { amplitude: f64, exponent: f64 },
    /// Nondecreasing samples, linearly interpolated; constant past the last
    /// sample and linear down to ω(0) = 0 before the first.
    Tabulated { rho: Vec<f64>, omega: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuasiconvexityModulus {
    pub kind: ModulusKind,
    pub r0: f64,
}

impl QuasiconvexityModulus {
    pub fn zero(r0: f64) -> Self {
        QuasiconvexityModulus {
            kind: ModulusKind::Zero,
            r0,
        }
    }

    pub fn power(amplitude: f64, exponent: f64, r0: f64) -> Self {
        QuasiconvexityModulus {
            kind: ModulusKind::Power {
                amplitude,
                exponent,
            },
            r0,
        }
    }

    pub fn eval(&self, rho: f64) -> f64 {
        match &self.kind {
            ModulusKind::Zero => 0.0,
            ModulusKind::Power {
                amplitude,
                exponent,
            } => amplitude * rho.max(0.0).powf(*exponent),
            ModulusKind::Tabulated { rho: xs, omega } => {
                if rho <= xs[0] {
                    return omega[0] * (rho.max(0.0) / xs[0]);
                }
                let last = xs.len() - 1;
                if rho >= xs[last] {
                    return omega[last];
                }
                let k = xs.partition_point(|x| *x <= rho) - 1;
                let t = (rho - xs[k]) / (xs[k + 1] - xs[k]);
                omega[k] + t * (omega[k + 1] - omega[k])
            }
        }
    }

    /// Checks monotonicity and vanishing at 0 on a grid of `samples` radii.
    pub fn validate(&self, samples: usize) -> Result<()> {
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "modulus validity radius must be positive, got {}",
                self.r0
            )));
        }
        match &self.kind {
            ModulusKind::Zero => {}
            ModulusKind::Power {
                amplitude,
                exponent,
            } => {
                if *amplitude < 0.0 || *exponent <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "power modulus needs amplitude >= 0 and exponent > 0".into(),
                    ));
                }
            }
            ModulusKind::Tabulated { rho, omega } => {
                if rho.is_empty() || rho.len() != omega.len() {
                    return Err(Error::InvalidParameter(
                        "tabulated modulus needs matching nonempty tables".into(),
                    ));
                }
                if rho[0] <= 0.0 || rho.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidParameter(
                        "tabulated modulus radii must be positive and increasing".into(),
                    ));
                }
                if omega[0] < 0.0 {
                    return Err(Error::InvalidParameter("modulus must be nonnegative".into()));
                }
            }
        }
        let n = samples.max(2);
        let mut prev = 0.0;
        for i in 1..=n {
            let rho = self.r0 * i as f64 / n as f64;
            let w = self.eval(rho);
            if w < prev - 1e-15 {
                return Err(Error::InvalidParameter(format!(
                    "modulus decreases near rho = {rho}"
                )));
            }
            prev = w;
        }
        if self.eval(self.r0 * 1e-9) > 1e-6 * self.eval(self.r0).max(1.0) {
            return Err(Error::InvalidParameter("modulus does not vanish at 0".into()));
        }
        Ok(())
    }
}

/// Closed-form boundary families plus a tabulated escape hatch.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryShape {
    /// φ ≡ 0.
    Halfplane,
    /// φ(x') = cot(θ/2)|x'|: a convex wedge (cone when d = 3) of opening θ.
    Wedge { opening: f64 },
    /// Chain of concave parabolic caps meeting at convex kinks. Cap `k`
    /// spans `width·2^{-k-1} ≤ |t| ≤ width·2^{-k}` (k < levels) with second
    /// derivative `-curvature`; in d = 3 the profile is applied to each
    /// horizontal coordinate and summed.
    Sawtooth {
        width: f64,
        levels: usize,
        curvature: f64,
    },
    /// Values on a regular (d−1)-dimensional grid, multilinearly interpolated.
    Tabulated {
        origin: [f64; 2],
        spacing: f64,
        counts: [usize; 2],
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn contains(&self, d: usize, p: &Point) -> bool {
        norm(d, &sub(p, &self.center)) < self.radius
    }
}

/// Exact extremes of φ over an axis-aligned box in x'.
#[derive(Debug, Clone, Copy)]
pub struct PhiRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphDomain {
    pub d: usize,
    pub shape: BoundaryShape,
    pub lipschitz: f64,
    pub modulus: QuasiconvexityModulus,
    /// Reference ball, centred on the graph, of radius 2r₀.
    pub ball: Ball,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundaryPoint {
    pub position: Point,
    /// Outward unit normal; `None` at (or within the exclusion radius of) a kink.
    pub normal: Option<Point>,
    pub surface_weight: f64,
}

impl GraphDomain {
    /// Builds a domain with the Lipschitz constant implied by the family.
    pub fn new(
        d: usize,
        shape: BoundaryShape,
        modulus: QuasiconvexityModulus,
        ball_radius: f64,
    ) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::InvalidParameter(format!("dimension must be 2 or 3, got {d}")));
        }
        let lipschitz = match &shape {
            BoundaryShape::Halfplane => 0.0,
            BoundaryShape::Wedge { opening } => {
                if !(*opening > 0.0 && *opening <= std::f64::consts::PI) {
                    return Err(Error::InvalidParameter(
                        "wedge opening must lie in (0, pi]".into(),
                    ));
                }
                1.0 / (opening / 2.0).tan()
            }
            BoundaryShape::Sawtooth {
                width,
                levels,
                curvature,
            } => {
                if *width <= 0.0 || *curvature < 0.0 || *levels == 0 {
                    return Err(Error::InvalidParameter(
                        "sawtooth needs width > 0, curvature >= 0, levels >= 1".into(),
                    ));
                }
                let slope = curvature * width / 4.0;
                slope * ((d - 1) as f64).sqrt()
            }
            BoundaryShape::Tabulated {
                spacing,
                counts,
                values,
                ..
            } => {
                let m = if d == 2 { counts[0] } else { counts[0] * counts[1] };
                if *spacing <= 0.0 || counts[0] < 2 || (d == 3 && counts[1] < 2) {
                    return Err(Error::InvalidParameter("tabulated graph grid too small".into()));
                }
                if values.len() != m {
                    return Err(Error::InvalidParameter(format!(
                        "tabulated graph expects {m} values, got {}",
                        values.len()
                    )));
                }
                tabulated_slope(d, *spacing, counts, values)
            }
        };
        let mut dom = GraphDomain {
            d,
            shape,
            lipschitz,
            modulus,
            ball: Ball {
                center: ORIGIN,
                radius: ball_radius,
            },
        };
        dom.ball.center[d - 1] = dom.phi(&ORIGIN)?;
        Ok(dom)
    }

    pub fn halfplane(d: usize, ball_radius: f64) -> Self {
        Self::new(
            d,
            BoundaryShape::Halfplane,
            QuasiconvexityModulus::zero(ball_radius / 2.0),
            ball_radius,
        )
        .expect("halfplane is always valid")
    }

    pub fn wedge(d: usize, opening: f64, ball_radius: f64) -> Result<Self> {
        Self::new(
            d,
            BoundaryShape::Wedge { opening },
            QuasiconvexityModulus::zero(ball_radius / 2.0),
            ball_radius,
        )
    }

    /// The sawtooth family with the modulus ω(ρ) = (curvature/2)ρ it provably
    /// satisfies.
    pub fn sawtooth(
        d: usize,
        width: f64,
        levels: usize,
        curvature: f64,
        ball_radius: f64,
    ) -> Result<Self> {
        Self::new(
            d,
            BoundaryShape::Sawtooth {
                width,
                levels,
                curvature,
            },
            QuasiconvexityModulus::power(curvature / 2.0, 1.0, ball_radius / 2.0),
            ball_radius,
        )
    }

    pub fn with_modulus(mut self, modulus: QuasiconvexityModulus) -> Self {
        self.modulus = modulus;
        self
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self.shape, BoundaryShape::Tabulated { .. })
    }

    /// Default tolerance for the geometric predicates.
    pub fn default_tolerance(&self) -> f64 {
        match &self.shape {
            BoundaryShape::Tabulated { spacing, .. } => 10.0 * spacing * self.lipschitz,
            _ => 1e-8 * 2.0 * self.ball.radius,
        }
    }

    /// Graph height over the horizontal part of `x`.
    pub fn phi(&self, x: &Point) -> Result<f64> {
        let d = self.d;
        match &self.shape {
            BoundaryShape::Halfplane => Ok(0.0),
            BoundaryShape::Wedge { opening } => {
                let r = norm(d - 1, x);
                Ok(r / (opening / 2.0).tan())
            }
            BoundaryShape::Sawtooth {
                width,
                levels,
                curvature,
            } => Ok((0..d - 1)
                .map(|i| saw_profile(x[i], *width, *levels, *curvature))
                .sum()),
            BoundaryShape::Tabulated {
                origin,
                spacing,
                counts,
                values,
            } => tabulated_eval(d, origin, *spacing, counts, values, x),
        }
    }

    /// Whether `p` lies strictly above the graph. Points outside a tabulated
    /// graph's table are reported as outside.
    pub fn contains(&self, p: &Point) -> bool {
        match self.phi(p) {
            Ok(v) => p[self.d - 1] > v,
            Err(_) => false,
        }
    }

    /// Distance in x' from `x` to the nearest kink of the graph.
    pub fn kink_distance(&self, x: &Point) -> f64 {
        match &self.shape {
            BoundaryShape::Halfplane | BoundaryShape::Tabulated { .. } => f64::INFINITY,
            BoundaryShape::Wedge { .. } => norm(self.d - 1, x),
            BoundaryShape::Sawtooth { width, levels, .. } => {
                let mut best = f64::INFINITY;
                for xi in x.iter().take(self.d - 1) {
                    let a = xi.abs();
                    for k in 0..=*levels {
                        let p = width * 0.5f64.powi(k as i32);
                        best = best.min((a - p).abs());
                    }
                }
                best
            }
        }
    }

    /// ∇φ at `x`, or `None` within `exclusion` of a kink.
    pub fn gradient(&self, x: &Point, exclusion: f64) -> Result<Option<Point>> {
        if self.kink_distance(x) <= exclusion {
            return Ok(None);
        }
        let d = self.d;
        let mut g = ORIGIN;
        match &self.shape {
            BoundaryShape::Halfplane => {}
            BoundaryShape::Wedge { opening } => {
                let r = norm(d - 1, x);
                let c = 1.0 / (opening / 2.0).tan();
                for i in 0..d - 1 {
                    g[i] = c * x[i] / r;
                }
            }
            BoundaryShape::Sawtooth {
                width,
                levels,
                curvature,
            } => {
                for i in 0..d - 1 {
                    g[i] = saw_slope(x[i], *width, *levels, *curvature);
                }
            }
            BoundaryShape::Tabulated {
                origin,
                spacing,
                counts,
                ..
            } => {
                for i in 0..d - 1 {
                    let lo_edge = origin[i];
                    let hi_edge = origin[i] + spacing * (counts[i] - 1) as f64;
                    let mut a = *x;
                    let mut b = *x;
                    a[i] = (x[i] - spacing).max(lo_edge);
                    b[i] = (x[i] + spacing).min(hi_edge);
                    if b[i] <= a[i] {
                        return Err(Error::OutOfRange(format!("{x:?} outside tabulated graph")));
                    }
                    g[i] = (self.phi(&b)? - self.phi(&a)?) / (b[i] - a[i]);
                }
            }
        }
        Ok(Some(g))
    }

    /// Outward unit normal (∇φ, −1)/√(1+|∇φ|²), `None` at kinks.
    pub fn normal(&self, x: &Point, exclusion: f64) -> Result<Option<Point>> {
        Ok(self.gradient(x, exclusion)?.map(|g| {
            let d = self.d;
            let s = (1.0 + dot(d - 1, &g, &g)).sqrt();
            let mut n = ORIGIN;
            for i in 0..d - 1 {
                n[i] = g[i] / s;
            }
            n[d - 1] = -1.0 / s;
            n
        }))
    }

    pub fn boundary_point(&self, x: &Point, exclusion: f64) -> Result<BoundaryPoint> {
        let mut position = *x;
        position[self.d - 1] = self.phi(x)?;
        let grad = self.gradient(x, exclusion)?;
        let surface_weight = match grad {
            Some(g) => (1.0 + dot(self.d - 1, &g, &g)).sqrt(),
            None => {
                // kink: average the one-sided weights a short step away
                let h = exclusion.max(1e-9) * 2.0;
                let mut acc = 0.0;
                let mut count = 0.0;
                for i in 0..self.d - 1 {
                    for s in [-1.0, 1.0] {
                        let mut y = *x;
                        y[i] += s * h;
                        if let Some(g) = self.gradient(&y, 0.0)? {
                            acc += (1.0 + dot(self.d - 1, &g, &g)).sqrt();
                            count += 1.0;
                        }
                    }
                }
                if count > 0.0 {
                    acc / count
                } else {
                    1.0
                }
            }
        };
        let normal = self.normal(x, exclusion)?;
        Ok(BoundaryPoint {
            position,
            normal,
            surface_weight,
        })
    }

    /// The point of the graph above/below `x`.
    pub fn project_to_graph(&self, x: &Point) -> Result<Point> {
        let mut p = *x;
        p[self.d - 1] = self.phi(x)?;
        Ok(p)
    }

    /// Exact minimum and maximum of φ over the box `lo ≤ x' ≤ hi`.
    pub fn phi_range(&self, lo: &Point, hi: &Point) -> Result<PhiRange> {
        let d = self.d;
        match &self.shape {
            BoundaryShape::Halfplane => Ok(PhiRange { min: 0.0, max: 0.0 }),
            BoundaryShape::Wedge { opening } => {
                let c = 1.0 / (opening / 2.0).tan();
                let mut near = 0.0;
                let mut far = 0.0;
                for i in 0..d - 1 {
                    let n = if lo[i] > 0.0 {
                        lo[i]
                    } else if hi[i] < 0.0 {
                        hi[i]
                    } else {
                        0.0
                    };
                    let f = lo[i].abs().max(hi[i].abs());
                    near += n * n;
                    far += f * f;
                }
                Ok(PhiRange {
                    min: c * near.sqrt(),
                    max: c * far.sqrt(),
                })
            }
            BoundaryShape::Sawtooth {
                width,
                levels,
                curvature,
            } => {
                let mut min = 0.0;
                let mut max = 0.0;
                for i in 0..d - 1 {
                    let (a, b) = saw_range(lo[i], hi[i], *width, *levels, *curvature);
                    min += a;
                    max += b;
                }
                Ok(PhiRange { min, max })
            }
            BoundaryShape::Tabulated {
                origin,
                spacing,
                counts,
                ..
            } => {
                // multilinear pieces attain extremes at the corners of the
                // sub-boxes cut out by grid lines
                let mut axes: Vec<Vec<f64>> = Vec::new();
                for i in 0..d - 1 {
                    let mut v = vec![lo[i], hi[i]];
                    for k in 0..counts[i] {
                        let g = origin[i] + spacing * k as f64;
                        if g > lo[i] && g < hi[i] {
                            v.push(g);
                        }
                    }
                    axes.push(v);
                }
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                let mut probe = |p: &Point| -> Result<()> {
                    let v = self.phi(p)?;
                    min = min.min(v);
                    max = max.max(v);
                    Ok(())
                };
                if d == 2 {
                    for &a in &axes[0] {
                        probe(&[a, 0.0, 0.0])?;
                    }
                } else {
                    for &a in &axes[0] {
                        for &b in &axes[1] {
                            probe(&[a, b, 0.0])?;
                        }
                    }
                }
                Ok(PhiRange { min, max })
            }
        }
    }
}

fn saw_breakpoint(width: f64, k: usize) -> f64 {
    width * 0.5f64.powi(k as i32)
}

/// Index of the cap containing |t|, if any.
fn saw_cap(t: f64, width: f64, levels: usize) -> Option<(f64, f64)> {
    let a = t.abs();
    if a >= width || a <= saw_breakpoint(width, levels) {
        return None;
    }
    let mut k = 0;
    while a < saw_breakpoint(width, k + 1) {
        k += 1;
    }
    Some((saw_breakpoint(width, k + 1), saw_breakpoint(width, k)))
}

fn saw_profile(t: f64, width: f64, levels: usize, curvature: f64) -> f64 {
    match saw_cap(t, width, levels) {
        Some((lo, hi)) => 0.5 * curvature * (t.abs() - lo) * (hi - t.abs()),
        None => 0.0,
    }
}

fn saw_slope(t: f64, width: f64, levels: usize, curvature: f64) -> f64 {
    match saw_cap(t, width, levels) {
        Some((lo, hi)) => t.signum() * 0.5 * curvature * (lo + hi - 2.0 * t.abs()),
        None => 0.0,
    }
}

/// Exact range of the one-dimensional sawtooth profile on [lo, hi]: maxima
/// sit at endpoints or cap apexes, minima at endpoints or kinks.
fn saw_range(lo: f64, hi: f64, width: f64, levels: usize, curvature: f64) -> (f64, f64) {
    let f = |t: f64| saw_profile(t, width, levels, curvature);
    let mut min = f(lo).min(f(hi));
    let mut max = f(lo).max(f(hi));
    for k in 0..=levels {
        let p = saw_breakpoint(width, k);
        for s in [-1.0, 1.0] {
            let kink = s * p;
            if kink > lo && kink < hi {
                min = min.min(0.0);
            }
            if k < levels {
                let apex = s * 0.5 * (p + saw_breakpoint(width, k + 1));
                if apex > lo && apex < hi {
                    max = max.max(f(apex));
                }
            }
        }
    }
    if lo < 0.0 && hi > 0.0 {
        min = min.min(0.0);
    }
    (min, max)
}

fn tabulated_eval(
    d: usize,
    origin: &[f64; 2],
    spacing: f64,
    counts: &[usize; 2],
    values: &[f64],
    x: &Point,
) -> Result<f64> {
    let mut idx = [0usize; 2];
    let mut frac = [0.0; 2];
    for i in 0..d - 1 {
        let s = (x[i] - origin[i]) / spacing;
        let n = counts[i];
        if !(s >= -1e-12 && s <= (n - 1) as f64 + 1e-12) {
            return Err(Error::OutOfRange(format!(
                "x' = {:?} outside tabulated graph",
                &x[..d - 1]
            )));
        }
        let s = s.clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        idx[i] = k;
        frac[i] = s - k as f64;
    }
    if d == 2 {
        let (k, t) = (idx[0], frac[0]);
        Ok(values[k] * (1.0 - t) + values[k + 1] * t)
    } else {
        let n0 = counts[0];
        let at = |i: usize, j: usize| values[i + n0 * j];
        let (i, j) = (idx[0], idx[1]);
        let (s, t) = (frac[0], frac[1]);
        Ok(at(i, j) * (1.0 - s) * (1.0 - t)
            + at(i + 1, j) * s * (1.0 - t)
            + at(i, j + 1) * (1.0 - s) * t
            + at(i + 1, j + 1) * s * t)
    }
}

fn tabulated_slope(d: usize, spacing: f64, counts: &[usize; 2], values: &[f64]) -> f64 {
    let n0 = counts[0];
    let mut worst = 0.0f64;
    if d == 2 {
        for w in values.windows(2) {
            worst = worst.max((w[1] - w[0]).abs() / spacing);
        }
    } else {
        let n1 = counts[1];
        for j in 0..n1 {
            for i in 0..n0 {
                let v = values[i + n0 * j];
                let gx = if i + 1 < n0 { (values[i + 1 + n0 * j] - v) / spacing } else { 0.0 };
                let gy = if j + 1 < n1 { (values[i + n0 * (j + 1)] - v) / spacing } else { 0.0 };
                worst = worst.max((gx * gx + gy * gy).sqrt());
            }
        }
    }
    worst
}

/// Regular grid of `count` points per axis over the (d−1)-box `[c − r, c + r]`.
fn horizontal_grid(d: usize, center: &Point, r: f64, count: usize) -> Vec<Point> {
    let n = count.max(2);
    let step = 2.0 * r / (n - 1) as f64;
    let mut out = Vec::new();
    if d == 2 {
        for i in 0..n {
            out.push([center[0] - r + step * i as f64, 0.0, 0.0]);
        }
    } else {
        for j in 0..n {
            for i in 0..n {
                out.push([
                    center[0] - r + step * i as f64,
                    center[1] - r + step * j as f64,
                    0.0,
                ]);
            }
        }
    }
    out
}

/// Unit directions sampling the sphere S^{d−1}.
pub(crate) fn sphere_directions(d: usize, resolution: usize) -> Vec<Point> {
    let mut out = Vec::new();
    if d == 2 {
        let n = 4 * resolution;
        for k in 0..n {
            let t = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
            out.push([t.cos(), t.sin(), 0.0]);
        }
    } else {
        let nt = resolution;
        for i in 0..nt {
            let th = std::f64::consts::PI * (i as f64 + 0.5) / nt as f64;
            let np = (2.0 * nt as f64 * th.sin()).ceil().max(4.0) as usize;
            for j in 0..np {
                let ph = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / np as f64;
                out.push([th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub check: &'static str,
    pub worst_value: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub worst_at: Option<Point>,
    pub samples: usize,
}

/// One-sided flatness: for recentring points c on the graph, samples
/// `−(φ(c+x') − φ(c) − ∇φ(c)·x') − |x'|ω(|x'|)` over `|x'| < r₀`. The
/// supporting tilt ∇φ(c) plays the role of the local rigid motion; recentring
/// points within one sampling cell of a kink are skipped.
pub fn quasiconvexity_check(domain: &GraphDomain, sample_count: usize) -> Result<CheckReport> {
    if sample_count < 2 {
        return Err(Error::InvalidParameter("sample_count must be >= 2".into()));
    }
    let r0 = domain.modulus.r0;
    if !r0.is_finite() {
        return Err(Error::InvalidParameter("modulus r0 must be finite".into()));
    }
    let d = domain.d;
    let per_axis = if d == 2 { sample_count } else { sample_count.min(41) };
    let cell = 2.0 * r0 / (per_axis - 1) as f64;
    let centers = horizontal_grid(d, &domain.ball.center, r0, per_axis);
    let offsets: Vec<Point> = horizontal_grid(d, &ORIGIN, r0, per_axis)
        .into_iter()
        .filter(|o| {
            let r = norm(d - 1, o);
            r > 0.0 && r < r0
        })
        .collect();
    let mut worst = f64::NEG_INFINITY;
    let mut worst_at = None;
    let mut samples = 0;
    for c in &centers {
        let g = match domain.gradient(c, 0.5 * cell)? {
            Some(g) => g,
            None => continue,
        };
        let phi_c = domain.phi(c)?;
        for o in &offsets {
            let mut x = *c;
            for i in 0..d - 1 {
                x[i] += o[i];
            }
            let rho = norm(d - 1, o);
            let tilted = domain.phi(&x)? - phi_c - dot(d - 1, &g, o);
            let v = -tilted - rho * domain.modulus.eval(rho);
            samples += 1;
            if v > worst {
                worst = v;
                worst_at = Some(x);
            }
        }
    }
    let tolerance = domain.default_tolerance();
    Ok(CheckReport {
        check: "quasiconvexity",
        worst_value: worst,
        tolerance,
        pass: worst <= tolerance,
        worst_at,
        samples,
    })
}

/// Halfspace containment `Ω ∩ B_r(x0) ⊂ {(y − x0)·n ≤ rω(r)}` at the
/// boundary point over `x0`, with the vertical fallback n = −e_d at kinks.
pub fn halfspace_check(domain: &GraphDomain, x0: &Point, r: f64) -> Result<(Point, CheckReport)> {
    let d = domain.d;
    if !(r > 0.0 && r < domain.modulus.r0) {
        return Err(Error::OutOfRange(format!(
            "radius {r} must lie in (0, r0 = {})",
            domain.modulus.r0
        )));
    }
    let base = domain.project_to_graph(x0)?;
    let per_axis = if d == 2 { 401 } else { 61 };
    let cell = 2.0 * r / (per_axis - 1) as f64;
    let n = domain.normal(x0, 0.5 * cell)?.unwrap_or_else(|| {
        let mut v = ORIGIN;
        v[d - 1] = -1.0;
        v
    });
    let mut worst = f64::NEG_INFINITY;
    let mut worst_at = None;
    let mut samples = 0;
    for y in horizontal_grid(d, x0, r, per_axis) {
        let y = domain.project_to_graph(&y)?;
        let rel = sub(&y, &base);
        if norm(d, &rel) >= r {
            continue;
        }
        samples += 1;
        let v = dot(d, &rel, &n);
        if v > worst {
            worst = v;
            worst_at = Some(y);
        }
    }
    for v in sphere_directions(d, if d == 2 { 360 } else { 60 }) {
        let mut y = base;
        for i in 0..d {
            y[i] += r * v[i] * (1.0 - 1e-12);
        }
        if !domain.contains(&y) {
            continue;
        }
        samples += 1;
        let val = dot(d, &sub(&y, &base), &n);
        if val > worst {
            worst = val;
            worst_at = Some(y);
        }
    }
    let excess = worst - r * domain.modulus.eval(r);
    let tolerance = domain.default_tolerance();
    Ok((
        n,
        CheckReport {
            check: "halfspace",
            worst_value: excess,
            tolerance,
            pass: excess <= tolerance,
            worst_at,
            samples,
        },
    ))
}

/// A-starshape of B(x0, R) ∩ Ω: the minimum over sampled boundary points y
/// (normal defined) of n(y)·A(y)A(x0)⁻¹(y − x0).
pub fn starshape_check(
    domain: &GraphDomain,
    field: &MatrixField,
    x0: &Point,
    radius: f64,
    sample_count: usize,
) -> Result<CheckReport> {
    let d = domain.d;
    if !domain.contains(x0) && !on_graph(domain, x0) {
        return Err(Error::NotInDomain(*x0));
    }
    let a0_inv = field
        .eval(x0)
        .inverse()
        .ok_or_else(|| Error::AssumptionViolation("A(x0) is singular".into()))?;
    let per_axis = sample_count.max(2);
    let cell = 2.0 * radius / (per_axis - 1) as f64;
    let mut worst = f64::INFINITY;
    let mut worst_at = None;
    let mut samples = 0;
    let mut touched = false;
    for y in horizontal_grid(d, x0, radius, per_axis) {
        let y = domain.project_to_graph(&y)?;
        let rel = sub(&y, x0);
        if norm(d, &rel) >= radius {
            continue;
        }
        touched = true;
        let n = match domain.normal(&y, 0.5 * cell)? {
            Some(n) => n,
            None => continue,
        };
        let v = dot(d, &n, &field.eval(&y).apply(&a0_inv.apply(&rel)));
        samples += 1;
        if v < worst {
            worst = v;
            worst_at = Some(y);
        }
    }
    if !touched {
        return Err(Error::Precondition {
            message: format!("B({x0:?}, {radius}) does not meet the boundary"),
            point: Some(*x0),
        });
    }
    let tolerance = domain.default_tolerance();
    Ok(CheckReport {
        check: "starshape",
        worst_value: worst,
        tolerance,
        pass: worst >= -tolerance,
        worst_at,
        samples,
    })
}

fn on_graph(domain: &GraphDomain, x: &Point) -> bool {
    domain
        .phi(x)
        .map(|v| (x[domain.d - 1] - v).abs() <= domain.default_tolerance())
        .unwrap_or(false)
}

/// Right side minus left side of the sufficient condition for A-starshape of
/// Whitney-scale balls; nonnegative means the condition holds.
pub fn starshape_margin(
    domain: &GraphDomain,
    field: &MatrixField,
    side: f64,
    s: f64,
    t: f64,
) -> Result<f64> {
    if !(s > 0.0 && t > 0.0 && side > 0.0) {
        return Err(Error::InvalidParameter("S, T and the side length must be positive".into()));
    }
    let l2 = 1.0 + domain.lipschitz * domain.lipschitz;
    let reach = l2.sqrt() * t + s;
    let lhs = s * s * side + reach * domain.modulus.eval(reach * side);
    let denom = field.lipschitz * field.ellipticity * l2 * t;
    let rhs = if denom == 0.0 { f64::INFINITY } else { 1.0 / denom };
    Ok(rhs - lhs)
}

pub fn starshape_sufficiency(
    domain: &GraphDomain,
    field: &MatrixField,
    side: f64,
    s: f64,
    t: f64,
) -> Result<bool> {
    Ok(starshape_margin(domain, field, side, s, t)? >= 0.0)
}

/// Largest side length for which the sufficient condition holds, by
/// bisection (the left side is nondecreasing in the side length).
pub fn starshape_threshold(
    domain: &GraphDomain,
    field: &MatrixField,
    s: f64,
    t: f64,
    upper: f64,
) -> Result<f64> {
    if starshape_sufficiency(domain, field, upper, s, t)? {
        return Ok(upper);
    }
    let (mut lo, mut hi) = (0.0, upper);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 || starshape_sufficiency(domain, field, mid, s, t)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Midpoint quadrature of `f dσ` over the graph above the box `lo ≤ x' ≤ hi`,
/// with dσ = √(1+|∇φ|²) dx'.
pub fn surface_integrate<F>(
    domain: &GraphDomain,
    lo: &Point,
    hi: &Point,
    cells_per_axis: usize,
    f: F,
) -> Result<f64>
where
    F: Fn(&Point) -> f64,
{
    let d = domain.d;
    let n = cells_per_axis.max(1);
    let mut hs = [0.0; 2];
    for i in 0..d - 1 {
        if hi[i] <= lo[i] {
            return Err(Error::InvalidParameter("empty surface patch".into()));
        }
        hs[i] = (hi[i] - lo[i]) / n as f64;
    }
    let cell_area: f64 = hs[..d - 1].iter().product();
    let mut total = 0.0;
    let count = if d == 2 { n } else { n * n };
    for k in 0..count {
        let (i, j) = (k % n, k / n);
        let mut x = ORIGIN;
        x[0] = lo[0] + (i as f64 + 0.5) * hs[0];
        if d == 3 {
            x[1] = lo[1] + (j as f64 + 0.5) * hs[1];
        }
        let bp = domain.boundary_point(&x, 0.0)?;
        total += f(&bp.position) * bp.surface_weight * cell_area;
    }
    Ok(total)
}
