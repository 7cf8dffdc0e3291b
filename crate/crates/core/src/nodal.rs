//! Sign-definite regions of a solution near the boundary: grid-scale sign
//! classification, boundary balls free of zeros, covers by translated
//! cuboids, and doubling-index drop statistics over a projection tree.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::MatrixField;
use crate::error::{Error, Result};
use crate::frequency::{doubling_index, QuadratureSpec};
use crate::geometry::{starshape_check, GraphDomain};
use crate::linalg::{norm, sub, Point, ORIGIN};
use crate::solver::{GridSolution, NodeKind};
use crate::whitney::{descendants, vertical_translate, Cuboid, WhitneyTree};

/// Default relative margin η.
pub const DEFAULT_MARGIN: f64 = 1e-3;
/// Fewer nodes than this in region ∩ Ω give an undetermined verdict.
pub const MIN_NODES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Region {
    Ball { center: Point, radius: f64 },
    Box { lo: Point, hi: Point },
}

impl Region {
    pub fn from_cuboid(d: usize, q: &Cuboid) -> Self {
        let (lo, hi) = q.bounds(d, 1.0);
        Region::Box { lo, hi }
    }

    pub fn contains(&self, d: usize, p: &Point) -> bool {
        match self {
            Region::Ball { center, radius } => norm(d, &sub(p, center)) < *radius,
            Region::Box { lo, hi } => (0..d).all(|i| p[i] >= lo[i] && p[i] < hi[i]),
        }
    }

    fn bounding_box(&self, d: usize) -> (Point, Point) {
        match self {
            Region::Ball { center, radius } => {
                let mut lo = ORIGIN;
                let mut hi = ORIGIN;
                for i in 0..d {
                    lo[i] = center[i] - radius;
                    hi[i] = center[i] + radius;
                }
                (lo, hi)
            }
            Region::Box { lo, hi } => (*lo, *hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Positive,
    Negative,
    SignChanging,
    Undetermined,
}

impl Verdict {
    pub fn is_definite(self) -> bool {
        matches!(self, Verdict::Positive | Verdict::Negative)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SignClassification {
    pub region: Region,
    pub verdict: Verdict,
    /// min |u| / sup |u| over the tested nodes.
    pub margin: f64,
    pub nodes: usize,
    pub sup: f64,
}

/// Solution values at the grid nodes in `region` ∩ Ω (Dirichlet nodes on the
/// graph excluded).
fn region_values(sol: &GridSolution, domain: &GraphDomain, region: &Region) -> Vec<f64> {
    let mesh = &sol.mesh;
    let d = mesh.d;
    let (lo, hi) = region.bounding_box(d);
    let mut first = [0usize; 3];
    let mut last = [0usize; 3];
    for i in 0..d {
        let a = ((lo[i] - mesh.lo[i]) / mesh.h).ceil().max(0.0);
        let b = ((hi[i] - mesh.lo[i]) / mesh.h).floor().min((mesh.n - 1) as f64);
        if a > b {
            return Vec::new();
        }
        first[i] = a as usize;
        last[i] = b as usize;
    }
    let mut out = Vec::new();
    let mut m = first;
    loop {
        let idx = mesh.linear(&m);
        let p = mesh.coord(&m);
        if sol.kinds[idx] != NodeKind::Graph && region.contains(d, &p) && domain.contains(&p) {
            out.push(sol.values[idx]);
        }
        let mut i = 0;
        loop {
            if i == d {
                return out;
            }
            m[i] += 1;
            if m[i] <= last[i] {
                break;
            }
            m[i] = first[i];
            i += 1;
        }
    }
}

/// Sign verdict on `region` ∩ Ω at threshold η·sup|u|.
pub fn classify_sign(
    sol: &GridSolution,
    domain: &GraphDomain,
    region: &Region,
    eta: f64,
) -> Result<SignClassification> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParameter("margin must lie in (0, 1)".into()));
    }
    let values = region_values(sol, domain, region);
    if values.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let margin = if sup > 0.0 { min / sup } else { 0.0 };
    let threshold = eta * sup;
    let pos = values.iter().filter(|&&v| v > threshold).count();
    let neg = values.iter().filter(|&&v| v < -threshold).count();
    let verdict = if values.len() < MIN_NODES || sup == 0.0 {
        Verdict::Undetermined
    } else if pos > 0 && neg > 0 {
        Verdict::SignChanging
    } else if pos == values.len() {
        Verdict::Positive
    } else if neg == values.len() {
        Verdict::Negative
    } else {
        Verdict::Undetermined
    };
    Ok(SignClassification {
        region: *region,
        verdict,
        margin,
        nodes: values.len(),
        sup,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SignlessBall {
    pub found: bool,
    pub center: Point,
    pub radius: f64,
    pub verdict: Verdict,
}

/// Boundary points y within ℓ/8 of the anchor, nearest first.
fn boundary_candidates(domain: &GraphDomain, anchor: &Point, reach: f64) -> Vec<Point> {
    let d = domain.d;
    let per_axis: i64 = if d == 2 { 16 } else { 8 };
    let step = reach / per_axis as f64;
    let mut out = Vec::new();
    let mut idx = [-per_axis; 2];
    loop {
        let mut x = *anchor;
        for i in 0..d - 1 {
            x[i] = anchor[i] + idx[i] as f64 * step;
        }
        if let Ok(h) = domain.phi(&x) {
            x[d - 1] = h;
            if norm(d, &sub(&x, anchor)) < reach {
                out.push(x);
            }
        }
        let mut i = 0;
        loop {
            if i == d - 1 {
                out.sort_by(|a, b| {
                    let key = |p: &Point| (norm(d, &sub(p, anchor)), p[0], p[1]);
                    let (ka, kb) = (key(a), key(b));
                    ka.0.total_cmp(&kb.0)
                        .then(ka.1.total_cmp(&kb.1))
                        .then(ka.2.total_cmp(&kb.2))
                });
                return out;
            }
            idx[i] += 1;
            if idx[i] <= per_axis {
                break;
            }
            idx[i] = -per_axis;
            i += 1;
        }
    }
}

/// Largest ρ in `rho_grid` for which some boundary ball B(y, ρ), with
/// |y − anchor| < ℓ/8, is sign-definite on Ω.
pub fn find_signless_ball(
    sol: &GridSolution,
    domain: &GraphDomain,
    anchor: &Point,
    scale: f64,
    rho_grid: &[f64],
    eta: f64,
) -> Result<SignlessBall> {
    if rho_grid.iter().any(|&r| !(r > 0.0 && r <= scale / 8.0)) {
        return Err(Error::InvalidParameter("radii must lie in (0, ℓ/8]".into()));
    }
    let candidates = boundary_candidates(domain, anchor, scale / 8.0);
    let mut radii = rho_grid.to_vec();
    radii.sort_by(|a, b| b.total_cmp(a));
    for rho in radii {
        for y in &candidates {
            let region = Region::Ball {
                center: *y,
                radius: rho,
            };
            match classify_sign(sol, domain, &region, eta) {
                Ok(c) if c.verdict.is_definite() => {
                    return Ok(SignlessBall {
                        found: true,
                        center: *y,
                        radius: rho,
                        verdict: c.verdict,
                    })
                }
                Ok(_) | Err(Error::EmptyRegion) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(SignlessBall {
        found: false,
        center: *anchor,
        radius: 0.0,
        verdict: Verdict::Undetermined,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TranslateVerdict {
    pub node: usize,
    pub translate: Cuboid,
    pub verdict: Verdict,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CuboidCover {
    pub node: usize,
    pub depth: usize,
    pub translates: Vec<TranslateVerdict>,
    /// Projected measure of the sign-definite translates over m(Π(Q)).
    pub fraction: f64,
}

impl CuboidCover {
    pub fn qualifying(&self) -> impl Iterator<Item = &TranslateVerdict> {
        self.translates.iter().filter(|t| t.verdict.is_definite())
    }
}

/// Translates t(Q′) of the generation-K̃ descendants of `node` and their
/// sign verdicts on t(Q′) ∩ Ω.
pub fn signless_cuboid_cover(
    sol: &GridSolution,
    domain: &GraphDomain,
    tree: &WhitneyTree,
    node: usize,
    k_tilde: usize,
    eta: f64,
) -> Result<CuboidCover> {
    let d = domain.d;
    let nodes = descendants(tree, node, k_tilde)?;
    let translates = nodes
        .par_iter()
        .map(|&n| {
            let t = vertical_translate(tree.cuboid(n), domain)?;
            let (verdict, margin) =
                match classify_sign(sol, domain, &Region::from_cuboid(d, &t), eta) {
                    Ok(c) => (c.verdict, c.margin),
                    Err(Error::EmptyRegion) => (Verdict::Undetermined, 0.0),
                    Err(e) => return Err(e),
                };
            Ok(TranslateVerdict {
                node: n,
                translate: t,
                verdict,
                margin,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = tree.cuboid(node).side.powi(d as i32 - 1);
    let covered: f64 = translates
        .iter()
        .filter(|t| t.verdict.is_definite())
        .map(|t| t.translate.side.powi(d as i32 - 1))
        .sum();
    Ok(CuboidCover {
        node,
        depth: k_tilde,
        translates,
        fraction: covered / total,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeDrop {
    pub node: usize,
    pub center: Point,
    /// N* = N + 1 at (x_Q, Sℓ(Q)); `None` when the mass is degenerate or
    /// leaves the solved region.
    pub n_star: Option<f64>,
    pub good: bool,
    /// A-starshape of B(x_Q, 2Sℓ(Q)) ∩ Ω; `None` when the ball misses ∂Ω.
    pub starshaped: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DropStatistics {
    pub root: usize,
    pub s: f64,
    pub k: usize,
    pub root_n_star: f64,
    /// Projected measure of 𝒢_K(R) over m(Π(R)).
    pub good_fraction: f64,
    /// max N*(x_Q, Sℓ(Q)) / N*(x_R, Sℓ(R)) over the evaluated nodes.
    pub inflation_max: f64,
    pub excluded: usize,
    pub starshape_violations: usize,
    pub nodes: Vec<NodeDrop>,
}

fn n_star_at(
    sol: &GridSolution,
    field: &MatrixField,
    domain: &GraphDomain,
    q: &Cuboid,
    s: f64,
    quad: &QuadratureSpec,
) -> Result<f64> {
    Ok(doubling_index(sol, field, domain, &q.center, s * q.side, quad)? + 1.0)
}

fn starshape_at(domain: &GraphDomain, field: &MatrixField, q: &Cuboid, s: f64) -> Option<bool> {
    let samples = if domain.d == 2 { 201 } else { 41 };
    match starshape_check(domain, field, &q.center, 2.0 * s * q.side, samples) {
        Ok(rep) => Some(rep.pass),
        Err(_) => None,
    }
}

/// Doubling-drop statistics of the generation-K descendants of `root`.
#[allow(clippy::too_many_arguments)]
pub fn doubling_drop_statistics(
    sol: &GridSolution,
    field: &MatrixField,
    domain: &GraphDomain,
    tree: &WhitneyTree,
    root: usize,
    s: f64,
    k: usize,
    quad: &QuadratureSpec,
) -> Result<DropStatistics> {
    let d = domain.d;
    let r = tree.cuboid(root);
    let root_n_star = n_star_at(sol, field, domain, r, s, quad)?;
    let nodes = descendants(tree, root, k)?;
    let evaluated: Vec<NodeDrop> = nodes
        .par_iter()
        .map(|&n| {
            let q = tree.cuboid(n);
            let n_star = n_star_at(sol, field, domain, q, s, quad).ok();
            NodeDrop {
                node: n,
                center: q.center,
                n_star,
                good: n_star.is_some_and(|v| v <= 0.5 * root_n_star),
                starshaped: starshape_at(domain, field, q, s),
            }
        })
        .collect();
    let total = r.side.powi(d as i32 - 1);
    let good: f64 = evaluated
        .iter()
        .filter(|e| e.good)
        .map(|e| tree.cuboid(e.node).side.powi(d as i32 - 1))
        .sum();
    let inflation_max = evaluated
        .iter()
        .filter_map(|e| e.n_star)
        .fold(f64::NEG_INFINITY, f64::max)
        / root_n_star;
    Ok(DropStatistics {
        root,
        s,
        k,
        root_n_star,
        good_fraction: good / total,
        inflation_max,
        excluded: evaluated.iter().filter(|e| e.n_star.is_none()).count(),
        starshape_violations: evaluated.iter().filter(|e| e.starshaped == Some(false)).count(),
        nodes: evaluated,
    })
}
