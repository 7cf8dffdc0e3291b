//! Whitney cuboid decomposition of a graph domain near a boundary ball, the
//! projection tree built on it, and the cylinder and translation operators.
//!
//! Cuboids live on a dyadic lattice: at level m the horizontal side is
//! `top_side·2^{-m}` and the vertical side is `(1+L)` times that. Integer
//! lattice indices identify cuboids, so projection and partition checks are
//! exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Ball, GraphDomain};
use crate::linalg::{norm, sub, Point, ORIGIN};

/// Dilation factor in property (i).
pub const INNER_DILATION: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cuboid {
    pub center: Point,
    /// Horizontal side ℓ(Q).
    pub side: f64,
    /// Vertical stretch 1 + L.
    pub stretch: f64,
    /// Dyadic level m, with ℓ(Q) = 2^{-m}·(top side).
    pub level: u32,
    /// Lattice indices at `level`.
    #[serde(skip)]
    pub index: [i64; 3],
}

/// Π(Q): a (d−1)-cube given by its lower corner and side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectedCube {
    pub lo: Point,
    pub side: f64,
}

impl ProjectedCube {
    pub fn contains(&self, d: usize, x: &Point) -> bool {
        (0..d - 1).all(|i| x[i] >= self.lo[i] && x[i] < self.lo[i] + self.side)
    }
}

impl Cuboid {
    fn half_extent(&self, d: usize, i: usize) -> f64 {
        if i == d - 1 {
            0.5 * self.stretch * self.side
        } else {
            0.5 * self.side
        }
    }

    /// Corners of the dilate tQ (same centre).
    pub fn bounds(&self, d: usize, t: f64) -> (Point, Point) {
        let mut lo = ORIGIN;
        let mut hi = ORIGIN;
        for i in 0..d {
            let w = t * self.half_extent(d, i);
            lo[i] = self.center[i] - w;
            hi[i] = self.center[i] + w;
        }
        (lo, hi)
    }

    /// Half-open membership `lo ≤ p < hi`.
    pub fn contains(&self, d: usize, p: &Point) -> bool {
        let (lo, hi) = self.bounds(d, 1.0);
        (0..d).all(|i| p[i] >= lo[i] && p[i] < hi[i])
    }

    pub fn project(&self, d: usize) -> ProjectedCube {
        let (lo, _) = self.bounds(d, 1.0);
        let mut p = ORIGIN;
        p[..d - 1].copy_from_slice(&lo[..d - 1]);
        ProjectedCube {
            lo: p,
            side: self.side,
        }
    }

    /// Membership in the cylinder Π⁻¹(Π(Q)).
    pub fn in_cylinder(&self, d: usize, p: &Point) -> bool {
        self.project(d).contains(d, p)
    }

    pub fn volume(&self, d: usize) -> f64 {
        self.side.powi(d as i32) * self.stretch
    }
}

/// t(Q): the vertical translate of `q` whose centre lies on the graph.
pub fn vertical_translate(q: &Cuboid, domain: &GraphDomain) -> Result<Cuboid> {
    let d = domain.d;
    let horizontal = norm(d - 1, &sub(&q.center, &domain.ball.center));
    if horizontal > domain.ball.radius {
        return Err(Error::OutOfRange(format!(
            "cuboid centre projects outside the chart (|x'| = {horizontal})"
        )));
    }
    let mut t = *q;
    t.center[d - 1] = domain.phi(&q.center)?;
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WhitneyParams {
    /// Selection factor λ: Q is kept when λQ ⊂ Ω and its parent fails this.
    pub containment: f64,
    /// Boundary-touch dilation W.
    pub touch: f64,
    /// Overlap bound D₀ to certify; `None` only records the observed count.
    pub overlap_bound: Option<usize>,
    pub min_scale: f64,
}

impl WhitneyParams {
    /// W = 2λ + 2: the violating parent's λ-dilate sits inside (2λ+1)Q.
    pub fn new(containment: f64, min_scale: f64) -> Self {
        WhitneyParams {
            containment,
            touch: 2.0 * containment + 2.0,
            overlap_bound: None,
            min_scale,
        }
    }
}

impl Default for WhitneyParams {
    fn default() -> Self {
        WhitneyParams::new(28.0, 1e-3)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub inner_violations: usize,
    pub touch_violations: usize,
    /// Largest number of cuboids Q′ (Q included) with 10Q ∩ 10Q′ ≠ ∅.
    pub max_overlap: usize,
    pub overlap_bound: Option<usize>,
    /// Pairs with overlapping 10-dilates and side ratio outside [1/2, 2].
    pub ratio_violations: usize,
    /// Lower and upper bounds on dist(Q, ∂Ω)/ℓ(Q) over all cuboids.
    pub dist_ratio: (f64, f64),
    pub cuboids: usize,
}

impl Certificate {
    pub fn pass(&self) -> bool {
        self.inner_violations == 0
            && self.touch_violations == 0
            && self.ratio_violations == 0
            && self.overlap_bound.is_none_or(|b| self.max_overlap <= b)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Coverage {
    /// Cells dropped at the scale floor while still meeting Ω.
    pub dropped_cells: usize,
    pub dropped_volume: f64,
    pub kept_volume: f64,
}

#[derive(Debug, Clone)]
pub struct WhitneyDecomposition {
    pub domain: GraphDomain,
    pub ball: Ball,
    pub params: WhitneyParams,
    pub top_side: f64,
    /// Lower corner of the level-0 lattice.
    pub anchor: Point,
    pub cuboids: Vec<Cuboid>,
    pub coverage: Coverage,
    pub certificate: Certificate,
}

fn box_meets_ball(d: usize, lo: &Point, hi: &Point, ball: &Ball) -> bool {
    let mut s = 0.0;
    for i in 0..d {
        let c = ball.center[i];
        let e = if c < lo[i] {
            lo[i] - c
        } else if c > hi[i] {
            c - hi[i]
        } else {
            0.0
        };
        s += e * e;
    }
    s < ball.radius * ball.radius
}

fn box_inside_ball(d: usize, lo: &Point, hi: &Point, ball: &Ball) -> bool {
    let mut s = 0.0;
    for i in 0..d {
        let e = (lo[i] - ball.center[i]).abs().max((hi[i] - ball.center[i]).abs());
        s += e * e;
    }
    s <= ball.radius * ball.radius
}

struct Builder<'a> {
    domain: &'a GraphDomain,
    ball: &'a Ball,
    params: &'a WhitneyParams,
    top_side: f64,
    stretch: f64,
    anchor: Point,
    max_level: u32,
    out: Vec<Cuboid>,
    coverage: Coverage,
}

impl Builder<'_> {
    fn cell(&self, level: u32, index: [i64; 3]) -> Cuboid {
        let d = self.domain.d;
        let side = self.top_side / 2f64.powi(level as i32);
        let mut center = ORIGIN;
        for i in 0..d {
            let h = if i == d - 1 { side * self.stretch } else { side };
            center[i] = self.anchor[i] + (index[i] as f64 + 0.5) * h;
        }
        Cuboid {
            center,
            side,
            stretch: self.stretch,
            level,
            index,
        }
    }

    fn visit(&mut self, level: u32, index: [i64; 3]) {
        let d = self.domain.d;
        let q = self.cell(level, index);
        let (lo, hi) = q.bounds(d, 1.0);
        if !box_meets_ball(d, &lo, &hi, self.ball) {
            return;
        }
        let (dlo, dhi) = q.bounds(d, self.params.containment);
        let contained = match self.domain.phi_range(&dlo, &dhi) {
            Ok(r) => dlo[d - 1] > r.max,
            Err(_) => false,
        };
        if contained {
            self.coverage.kept_volume += q.volume(d);
            self.out.push(q);
            return;
        }
        match self.domain.phi_range(&lo, &hi) {
            Ok(r) if hi[d - 1] <= r.min => return,
            Ok(_) => {}
            // outside the chart: nothing to decompose
            Err(_) => return,
        }
        if level >= self.max_level {
            self.coverage.dropped_cells += 1;
            self.coverage.dropped_volume += q.volume(d);
            return;
        }
        for c in 0..(1usize << d) {
            let mut child = [0i64; 3];
            for i in 0..d {
                child[i] = 2 * index[i] + ((c >> i) & 1) as i64;
            }
            self.visit(level + 1, child);
        }
    }
}

/// Greedy dyadic decomposition of Ω near `ball`, certified exhaustively.
pub fn decompose(
    domain: &GraphDomain,
    ball: &Ball,
    params: &WhitneyParams,
) -> Result<WhitneyDecomposition> {
    let d = domain.d;
    if !(params.containment >= INNER_DILATION) || !(params.touch > 0.0) {
        return Err(Error::InvalidParameter(
            "containment factor must be at least 10 and the touch dilation positive".into(),
        ));
    }
    if !(params.min_scale > 0.0) {
        return Err(Error::InvalidParameter("min_scale must be positive".into()));
    }
    let top_side = 2.0 * ball.radius;
    let stretch = 1.0 + domain.lipschitz;
    let mut anchor = ORIGIN;
    for i in 0..d {
        let h = if i == d - 1 { top_side * stretch } else { top_side };
        anchor[i] = ball.center[i] - 0.5 * h;
    }
    let max_level = (top_side / params.min_scale).log2().floor().max(0.0) as u32;
    let mut b = Builder {
        domain,
        ball,
        params,
        top_side,
        stretch,
        anchor,
        max_level,
        out: Vec::new(),
        coverage: Coverage {
            dropped_cells: 0,
            dropped_volume: 0.0,
            kept_volume: 0.0,
        },
    };
    b.visit(0, [0; 3]);
    if b.out.is_empty() {
        return Err(Error::Coverage(format!(
            "no cuboid above scale {} fits in the domain near the ball",
            params.min_scale
        )));
    }
    let cuboids = b.out;
    let certificate = certify(domain, &cuboids, params)?;
    Ok(WhitneyDecomposition {
        domain: domain.clone(),
        ball: *ball,
        params: *params,
        top_side,
        anchor,
        cuboids,
        coverage: b.coverage,
        certificate,
    })
}

/// Bounds on dist(Q, ∂Ω)/ℓ(Q): the graph point below Q gives the upper
/// bound, and the Lipschitz cone below the lowest face gives the lower one.
fn distance_bounds(domain: &GraphDomain, q: &Cuboid) -> Result<(f64, f64)> {
    let d = domain.d;
    let (lo, hi) = q.bounds(d, 1.0);
    let r = domain.phi_range(&lo, &hi)?;
    let lower = (lo[d - 1] - r.max) / (1.0 + domain.lipschitz * domain.lipschitz).sqrt();
    let upper = lo[d - 1] - r.min;
    Ok((lower / q.side, upper / q.side))
}

/// Per-level occupancy counts with prefix sums over the lattice indices.
///
/// Overlap of 10-dilates is decided in exact integer arithmetic: with M the
/// finest level, a level-m cell centre sits at (2k+1)·2^{M−m} half-cells of
/// level M along each axis, and its 10-dilate has half-width 10·2^{M−m}.
struct LevelCounts {
    d: usize,
    finest: u32,
    levels: BTreeMap<u32, PrefixGrid>,
}

struct PrefixGrid {
    lo: [i64; 3],
    ext: [usize; 3],
    /// Inclusive prefix sums, with a zero layer in front of every axis.
    sums: Vec<u32>,
}

impl PrefixGrid {
    fn stride(&self) -> [usize; 3] {
        [1, self.ext[0] + 1, (self.ext[0] + 1) * (self.ext[1] + 1)]
    }

    fn build(d: usize, cells: &[[i64; 3]]) -> Self {
        let mut lo = [0i64; 3];
        let mut ext = [1usize; 3];
        for i in 0..d {
            let min = cells.iter().map(|c| c[i]).min().unwrap();
            let max = cells.iter().map(|c| c[i]).max().unwrap();
            lo[i] = min;
            ext[i] = (max - min + 1) as usize;
        }
        let mut g = PrefixGrid {
            lo,
            ext,
            sums: vec![0; (ext[0] + 1) * (ext[1] + 1) * (ext[2] + 1)],
        };
        let st = g.stride();
        for c in cells {
            let mut at = 0;
            for i in 0..d {
                at += ((c[i] - lo[i]) as usize + 1) * st[i];
            }
            g.sums[at] += 1;
        }
        for i in 0..d {
            for at in 0..g.sums.len() {
                let coord = (at / st[i]) % (ext[i] + 1);
                if coord > 0 {
                    g.sums[at] += g.sums[at - st[i]];
                }
            }
        }
        g
    }

    /// Number of occupied cells with `first ≤ k ≤ last` on every axis.
    fn count(&self, d: usize, first: &[i64; 3], last: &[i64; 3]) -> u64 {
        let mut a = [0usize; 3];
        let mut b = [0usize; 3];
        for i in 0..d {
            let f = (first[i] - self.lo[i]).max(0);
            let l = (last[i] - self.lo[i]).min(self.ext[i] as i64 - 1);
            if f > l {
                return 0;
            }
            a[i] = f as usize;
            b[i] = l as usize + 1;
        }
        let st = self.stride();
        let mut total = 0i64;
        for corner in 0..(1usize << d) {
            let mut at = 0;
            let mut sign = 1i64;
            for i in 0..d {
                if (corner >> i) & 1 == 1 {
                    at += a[i] * st[i];
                    sign = -sign;
                } else {
                    at += b[i] * st[i];
                }
            }
            total += sign * self.sums[at] as i64;
        }
        total as u64
    }
}

impl LevelCounts {
    fn new(d: usize, cuboids: &[Cuboid]) -> Self {
        let mut by_level: BTreeMap<u32, Vec<[i64; 3]>> = BTreeMap::new();
        for q in cuboids {
            by_level.entry(q.level).or_default().push(q.index);
        }
        let finest = *by_level.keys().next_back().unwrap_or(&0);
        let levels = by_level
            .into_iter()
            .map(|(m, cells)| (m, PrefixGrid::build(d, &cells)))
            .collect();
        LevelCounts { d, finest, levels }
    }

    /// Counts of cuboids per level whose 10-dilate overlaps that of `q`.
    fn overlaps(&self, q: &Cuboid) -> Vec<(u32, u64)> {
        let d = self.d;
        let unit = |m: u32| 1i64 << (self.finest - m);
        let s = unit(q.level);
        self.levels
            .iter()
            .map(|(&m, grid)| {
                let a = unit(m);
                let reach = 10 * (s + a);
                let mut first = [0i64; 3];
                let mut last = [0i64; 3];
                for i in 0..d {
                    let c = (2 * q.index[i] + 1) * s;
                    // (2k+1)·a strictly inside (c − reach, c + reach)
                    let low = (c - reach).div_euclid(a);
                    first[i] = (low + 1).div_euclid(2);
                    let high = -(-(c + reach)).div_euclid(a);
                    last[i] = (high - 2).div_euclid(2);
                }
                (m, grid.count(d, &first, &last))
            })
            .collect()
    }
}

fn certify(domain: &GraphDomain, cuboids: &[Cuboid], params: &WhitneyParams) -> Result<Certificate> {
    let d = domain.d;
    let counts = LevelCounts::new(d, cuboids);
    let per: Vec<Result<(bool, bool, u64, u64, (f64, f64))>> = cuboids
        .par_iter()
        .map(|q| {
            let (lo, hi) = q.bounds(d, INNER_DILATION);
            let inner = domain.phi_range(&lo, &hi).map(|r| lo[d - 1] > r.max).unwrap_or(false);
            let (wlo, whi) = q.bounds(d, params.touch);
            let touch = domain
                .phi_range(&wlo, &whi)
                .map(|r| r.min <= whi[d - 1] && r.max >= wlo[d - 1])
                .unwrap_or(false);
            let mut overlap = 0;
            let mut bad_ratio = 0;
            for (m, n) in counts.overlaps(q) {
                overlap += n;
                if m.abs_diff(q.level) > 1 {
                    bad_ratio += n;
                }
            }
            Ok((inner, touch, overlap, bad_ratio, distance_bounds(domain, q)?))
        })
        .collect();
    let mut cert = Certificate {
        inner_violations: 0,
        touch_violations: 0,
        max_overlap: 0,
        overlap_bound: params.overlap_bound,
        ratio_violations: 0,
        dist_ratio: (f64::INFINITY, 0.0),
        cuboids: cuboids.len(),
    };
    for r in per {
        let (inner, touch, overlap, bad, (dlo, dhi)) = r?;
        cert.inner_violations += usize::from(!inner);
        cert.touch_violations += usize::from(!touch);
        cert.max_overlap = cert.max_overlap.max(overlap as usize);
        cert.ratio_violations += bad as usize;
        cert.dist_ratio.0 = cert.dist_ratio.0.min(dlo);
        cert.dist_ratio.1 = cert.dist_ratio.1.max(dhi);
    }
    Ok(cert)
}

impl WhitneyDecomposition {
    /// Cuboids meeting the raised graph {x_d = φ(x′) + raise}.
    pub fn layer(&self, raise: f64) -> Vec<usize> {
        let d = self.domain.d;
        self.cuboids
            .iter()
            .enumerate()
            .filter(|(_, q)| {
                let (lo, hi) = q.bounds(d, 1.0);
                match self.domain.phi_range(&lo, &hi) {
                    Ok(r) => r.min + raise < hi[d - 1] && r.max + raise >= lo[d - 1],
                    Err(_) => false,
                }
            })
            .map(|(k, _)| k)
            .collect()
    }

    fn horizontal_key(&self, q: &Cuboid) -> (u32, [i64; 2]) {
        let mut k = [0i64; 2];
        k[..self.domain.d - 1].copy_from_slice(&q.index[..self.domain.d - 1]);
        (q.level, k)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeNode {
    /// Index into the decomposition's cuboids.
    pub cuboid: usize,
    pub generation: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct WhitneyTree {
    pub d: usize,
    pub depth: usize,
    pub nodes: Vec<TreeNode>,
    /// Node indices of each generation, in lattice order.
    pub generations: Vec<Vec<usize>>,
    pub cuboids: Vec<Cuboid>,
}

impl WhitneyTree {
    pub fn root(&self) -> &Cuboid {
        &self.cuboids[self.nodes[0].cuboid]
    }

    pub fn cuboid(&self, node: usize) -> &Cuboid {
        &self.cuboids[self.nodes[node].cuboid]
    }

    /// Whether the projections of generation `k` partition Π(R₀) exactly.
    pub fn partition_holds(&self, k: usize) -> bool {
        let d = self.d;
        let root = self.root();
        let scale = 1i64 << k;
        let expected = (scale as usize).pow((d - 1) as u32);
        let gen = &self.generations[k];
        let mut seen = BTreeSet::new();
        for &n in gen {
            let q = self.cuboid(n);
            if q.level != root.level + k as u32 {
                return false;
            }
            for i in 0..d - 1 {
                let rel = q.index[i] - root.index[i] * scale;
                if !(0..scale).contains(&rel) {
                    return false;
                }
            }
            if !seen.insert(q.index[..d - 1].to_vec()) {
                return false;
            }
        }
        seen.len() == expected
    }

    /// Line records: generation, centre, side, parent index (−1 for the root).
    pub fn to_tsv(&self) -> String {
        let d = self.d;
        let mut s = String::from("generation");
        for i in 0..d {
            let _ = write!(s, "\tx{}", i + 1);
        }
        s.push_str("\tside\tparent\n");
        for n in &self.nodes {
            let q = &self.cuboids[n.cuboid];
            let _ = write!(s, "{}", n.generation);
            for i in 0..d {
                let _ = write!(s, "\t{}", q.center[i]);
            }
            let parent = n.parent.map_or(-1, |p| p as i64);
            let _ = writeln!(s, "\t{}\t{}", q.side, parent);
        }
        s
    }
}

/// Tree of generations below a root R₀ ⊂ (M₀/2)B₀. Roots are tried from the
/// largest side down, lowest centre first, until one carries `depth`
/// complete generations.
pub fn build_tree(
    dec: &WhitneyDecomposition,
    b0: &Ball,
    m0: f64,
    depth: usize,
) -> Result<WhitneyTree> {
    let d = dec.domain.d;
    let region = Ball {
        center: b0.center,
        radius: 0.5 * m0 * b0.radius,
    };
    let mut by_column: BTreeMap<(u32, [i64; 2]), Vec<usize>> = BTreeMap::new();
    for (k, q) in dec.cuboids.iter().enumerate() {
        by_column.entry(dec.horizontal_key(q)).or_default().push(k);
    }
    for list in by_column.values_mut() {
        list.sort_by(|&a, &b| lowest_first(d, &dec.cuboids[a], &dec.cuboids[b]));
    }
    let mut candidates: Vec<usize> = (0..dec.cuboids.len())
        .filter(|&k| {
            let (lo, hi) = dec.cuboids[k].bounds(d, 1.0);
            box_inside_ball(d, &lo, &hi, &region)
        })
        .collect();
    candidates.sort_by(|&a, &b| {
        let (qa, qb) = (&dec.cuboids[a], &dec.cuboids[b]);
        qa.level.cmp(&qb.level).then_with(|| lowest_first(d, qa, qb))
    });
    if candidates.is_empty() {
        return Err(Error::RootNotFound(format!(
            "no Whitney cuboid lies inside the ball of radius {}",
            region.radius
        )));
    }
    for &root in &candidates {
        if let Some(tree) = try_tree(dec, &by_column, root, depth) {
            return Ok(tree);
        }
    }
    Err(Error::RootNotFound(format!(
        "none of {} candidate roots carries {depth} complete generations",
        candidates.len()
    )))
}

fn lowest_first(d: usize, a: &Cuboid, b: &Cuboid) -> std::cmp::Ordering {
    let mut ord = a.center[d - 1].total_cmp(&b.center[d - 1]);
    for i in 0..d - 1 {
        ord = ord.then_with(|| a.center[i].total_cmp(&b.center[i]));
    }
    ord
}

fn try_tree(
    dec: &WhitneyDecomposition,
    by_column: &BTreeMap<(u32, [i64; 2]), Vec<usize>>,
    root: usize,
    depth: usize,
) -> Option<WhitneyTree> {
    let d = dec.domain.d;
    let r0 = &dec.cuboids[root];
    let top = r0.center[d - 1];
    let mut nodes = vec![TreeNode {
        cuboid: root,
        generation: 0,
        parent: None,
        children: Vec::new(),
    }];
    let mut generations = vec![vec![0usize]];
    for k in 1..=depth {
        let mut next = Vec::new();
        for &p in &generations[k - 1] {
            let pq = &dec.cuboids[nodes[p].cuboid];
            for c in 0..(1usize << (d - 1)) {
                let mut key = [0i64; 2];
                for i in 0..d - 1 {
                    key[i] = 2 * pq.index[i] + ((c >> i) & 1) as i64;
                }
                let rep = by_column
                    .get(&(pq.level + 1, key))?
                    .iter()
                    .copied()
                    .find(|&q| dec.cuboids[q].center[d - 1] < top)?;
                let id = nodes.len();
                nodes.push(TreeNode {
                    cuboid: rep,
                    generation: k,
                    parent: Some(p),
                    children: Vec::new(),
                });
                nodes[p].children.push(id);
                next.push(id);
            }
        }
        generations.push(next);
    }
    Some(WhitneyTree {
        d,
        depth,
        nodes,
        generations,
        cuboids: dec.cuboids.clone(),
    })
}

/// 𝒟^j(R): the generation k + j nodes whose projections lie in Π(R).
pub fn descendants(tree: &WhitneyTree, node: usize, j: usize) -> Result<Vec<usize>> {
    let k = tree.nodes[node].generation;
    if k + j > tree.depth {
        return Err(Error::DepthExceeded {
            requested: k + j,
            depth: tree.depth,
        });
    }
    let mut level = vec![node];
    for _ in 0..j {
        level = level
            .iter()
            .flat_map(|&n| tree.nodes[n].children.iter().copied())
            .collect();
    }
    Ok(level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ball(r: f64) -> Ball {
        Ball {
            center: ORIGIN,
            radius: r,
        }
    }

    fn params() -> WhitneyParams {
        WhitneyParams::new(28.0, 1.0 / 1024.0)
    }

    #[test]
    fn halfplane_generations_are_slabs() {
        let dom = GraphDomain::halfplane(2, 1.0);
        let dec = decompose(&dom, &ball(1.0), &params()).unwrap();
        assert!(dec.certificate.pass(), "{:?}", dec.certificate);
        // all cuboids of one level sit at the same heights
        let mut heights: BTreeMap<u32, BTreeSet<u64>> = BTreeMap::new();
        for q in &dec.cuboids {
            heights.entry(q.level).or_default().insert(q.center[1].to_bits());
        }
        for (level, hs) in &heights {
            let side = dec.top_side / 2f64.powi(*level as i32);
            for h in hs {
                let y = f64::from_bits(*h);
                assert!(y > 0.0 && y / side < 2.0 * 28.0, "level {level} height {y}");
            }
        }
        let (lo, hi) = dec.certificate.dist_ratio;
        assert!(lo > 0.0 && hi.is_finite());
    }

    #[test]
    fn wedge_and_sawtooth_certify() {
        let wedge = GraphDomain::wedge(2, PI / 2.0, 1.0).unwrap();
        let saw = GraphDomain::sawtooth(2, 0.5, 4, 1.0, 1.0).unwrap();
        for dom in [wedge, saw] {
            let dec = decompose(&dom, &ball(1.0), &params()).unwrap();
            assert!(dec.certificate.pass(), "{:?}", dec.certificate);
        }
    }

    #[test]
    fn lattice_overlap_counts_match_brute_force() {
        let dom = GraphDomain::wedge(2, PI / 2.0, 1.0).unwrap();
        let dec = decompose(&dom, &ball(1.0), &WhitneyParams::new(28.0, 1.0 / 64.0)).unwrap();
        let counts = LevelCounts::new(2, &dec.cuboids);
        let tens: Vec<_> = dec.cuboids.iter().map(|q| q.bounds(2, 10.0)).collect();
        for (k, q) in dec.cuboids.iter().enumerate().step_by(7) {
            let fast: u64 = counts.overlaps(q).iter().map(|(_, n)| n).sum();
            let slow = tens
                .iter()
                .filter(|b| (0..2).all(|i| tens[k].0[i] < b.1[i] - 1e-12 && b.0[i] < tens[k].1[i] - 1e-12))
                .count();
            assert_eq!(fast as usize, slow);
        }
    }

    #[test]
    fn trees_on_all_domains() {
        // depths follow from the root side each domain admits at this scale
        for (d, min_scale, depths) in [(2, 1.0 / 4096.0, [6, 6, 6]), (3, 1.0 / 256.0, [4, 2, 3])] {
            let domains = [
                GraphDomain::halfplane(d, 1.0),
                GraphDomain::wedge(d, PI / 2.0, 1.0).unwrap(),
                GraphDomain::sawtooth(d, 0.5, 4, 1.0, 1.0).unwrap(),
            ];
            for (dom, depth) in domains.into_iter().zip(depths) {
                let dec = decompose(&dom, &ball(1.0), &WhitneyParams::new(28.0, min_scale)).unwrap();
                assert!(dec.certificate.pass(), "{:?}", dec.certificate);
                let tree = build_tree(&dec, &ball(1.0), 2.0, depth).unwrap();
                for k in 0..=depth {
                    assert!(tree.partition_holds(k));
                }
                let top = tree.root().center[d - 1];
                assert!(tree.nodes.iter().skip(1).all(|n| tree.cuboids[n.cuboid].center[d - 1] < top));
            }
        }
    }

    #[test]
    fn ball_missing_domain_is_a_coverage_failure() {
        let dom = GraphDomain::halfplane(2, 1.0);
        let far = Ball {
            center: [0.0, -5.0, 0.0],
            radius: 1.0,
        };
        assert!(matches!(decompose(&dom, &far, &params()), Err(Error::Coverage(_))));
    }

    #[test]
    fn halfplane_tree_counts_and_partitions() {
        for d in [2, 3] {
            let dom = GraphDomain::halfplane(d, 1.0);
            let p = WhitneyParams::new(28.0, if d == 2 { 1.0 / 1024.0 } else { 1.0 / 128.0 });
            let dec = decompose(&dom, &ball(1.0), &p).unwrap();
            let depth = if d == 2 { 6 } else { 3 };
            let tree = build_tree(&dec, &ball(1.0), 2.0, depth).unwrap();
            for k in 0..=depth {
                assert_eq!(tree.generations[k].len(), 1 << ((d - 1) * k));
                assert!(tree.partition_holds(k));
            }
            let top = tree.root().center[d - 1];
            for n in tree.nodes.iter().skip(1) {
                assert!(tree.cuboids[n.cuboid].center[d - 1] < top);
            }
        }
    }

    #[test]
    fn descendants_partition_parent_projection() {
        let dom = GraphDomain::halfplane(3, 1.0);
        let dec = decompose(&dom, &ball(1.0), &WhitneyParams::new(28.0, 1.0 / 128.0)).unwrap();
        let tree = build_tree(&dec, &ball(1.0), 2.0, 3).unwrap();
        let r = tree.generations[1][2];
        assert_eq!(descendants(&tree, r, 0).unwrap(), vec![r]);
        let two = descendants(&tree, r, 2).unwrap();
        assert_eq!(two.len(), 16);
        let pr = tree.cuboid(r).project(3);
        let area: f64 = two
            .iter()
            .map(|&n| {
                let p = tree.cuboid(n).project(3);
                assert!(pr.contains(3, &p.lo));
                p.side * p.side
            })
            .sum();
        assert!((area - pr.side * pr.side).abs() < 1e-12);
        assert!(matches!(descendants(&tree, r, 3), Err(Error::DepthExceeded { .. })));
    }

    #[test]
    fn vertical_translate_lands_on_graph() {
        let dom = GraphDomain::wedge(2, PI / 2.0, 1.0).unwrap();
        let dec = decompose(&dom, &ball(1.0), &params()).unwrap();
        for q in dec.cuboids.iter().take(50) {
            let t = vertical_translate(q, &dom).unwrap();
            assert_eq!(t.project(2), q.project(2));
            assert!((t.center[1] - q.center[0].abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn tree_serialization_is_deterministic() {
        let dom = GraphDomain::wedge(2, PI / 2.0, 1.0).unwrap();
        let a = build_tree(&decompose(&dom, &ball(1.0), &params()).unwrap(), &ball(1.0), 2.0, 4)
            .unwrap()
            .to_tsv();
        let b = build_tree(&decompose(&dom, &ball(1.0), &params()).unwrap(), &ball(1.0), 2.0, 4)
            .unwrap()
            .to_tsv();
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 1 + (1..=4).map(|k| 1 << k).sum::<usize>() + 1);
    }

    #[test]
    fn layer_query_meets_raised_graph() {
        let dom = GraphDomain::halfplane(2, 1.0);
        let dec = decompose(&dom, &ball(1.0), &params()).unwrap();
        let raise = 0.3;
        let layer = dec.layer(raise);
        assert!(!layer.is_empty());
        for k in layer {
            let (lo, hi) = dec.cuboids[k].bounds(2, 1.0);
            assert!(lo[1] <= raise && raise < hi[1]);
        }
    }
}
