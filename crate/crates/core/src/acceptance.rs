//! The acceptance suite: closed-form oracles, exact combinatorics and
//! end-to-end sanity checks, each reduced to one pass/fail line.
//!
//! Detail strings carry no timings so that repeated runs print identical
//! bytes; runtime limits only enter the verdicts.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::coefficients::MatrixField;
use crate::config::RunConfig;
use crate::dimension::{
    alpha_from_delta0, binomial_tail_bound, binomial_tail_exact, box_count_dimension,
    branching_simulate, eps0_from_alpha, rate_z, ratio_inequality_holds, GoodCount,
    SimulationParams,
};
use crate::error::Result;
use crate::frequency::{
    doubling_curve, frequency, max_decrease, radius_grid, weighted_mass,
    weighted_mass_normalized, QuadratureSpec,
};
use crate::geometry::{Ball, GraphDomain};
use crate::linalg::{Mat, ORIGIN};
use crate::pipeline::theorem_pipeline;
use crate::solver::{solve, AnalyticSolution, LibraryParams, SolveParams};
use crate::whitney::{build_tree, decompose, WhitneyParams};

/// Grid used where a check asks for the default resolution.
pub const DEFAULT_NODES: usize = 257;
/// Grid of the homogeneity and wedge oracles.
pub const FINE_NODES: usize = 513;

/// Run configuration of the pipeline check; also shipped as
/// `configs/halfplane_k2.cfg`.
pub const HALFPLANE_K2_CONFIG: &str = r#"# u = Im(z^2) on the upper halfplane, A = I
seed = 7

[domain]
kind = "halfplane"
d = 2
chart_radius = 1.0

[coefficients]
kind = "identity"

[solver]
center = [0.0, 0.0]
radius = 1.0
nodes = 1025
tol = 1e-10
data = "halfplane_harmonic_2"

[tree]
center = [0.0625, 0.6875]
radius = 0.1
m0 = 2.0
containment = 10.0
min_scale = 0.0078125
depth = 3
k = 1
s = 1.0

[combinatorial]
delta0 = 0.25
n0 = 4.0
epsilon = 0.05
eta = 1e-3
"#;

pub const CRITERIA: [u8; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} {}: {}",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub version: &'static str,
    pub results: Vec<CriterionResult>,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn lines(&self) -> String {
        self.results.iter().map(|r| r.line() + "\n").collect()
    }
}

fn title(id: u8) -> &'static str {
    match id {
        1 => "homogeneity oracle",
        2 => "wedge oracle",
        3 => "monotonicity",
        4 => "affine invariance",
        5 => "whitney certification",
        6 => "exact combinatorics",
        7 => "stirling bound",
        8 => "branching simulation",
        9 => "box-count calibration",
        10 => "pipeline sanity",
        11 => "determinism",
        _ => "unknown criterion",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Case {
    Halfplane(u32),
    Wedge,
    Mixed,
}

impl Case {
    fn label(self) -> String {
        match self {
            Case::Halfplane(k) => format!("Im(z^{k})"),
            Case::Wedge => "wedge(pi/2)".into(),
            Case::Mixed => "Im(z)+Im(z^2)".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Curves {
    doubling: Vec<f64>,
    frequency: Vec<f64>,
    elapsed: Duration,
}

/// Runs criteria, sharing solved curves between the oracle checks.
#[derive(Default)]
pub struct Suite {
    curves: BTreeMap<(Case, usize), Curves>,
}

fn fail_on<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| format!("error: {e}"))
}

impl Suite {
    pub fn new() -> Self {
        Self::default()
    }

    fn curves(&mut self, case: Case, nodes: usize) -> Result<Curves> {
        if let Some(c) = self.curves.get(&(case, nodes)) {
            return Ok(c.clone());
        }
        let start = Instant::now();
        let (dom, g) = match case {
            Case::Halfplane(k) => (
                GraphDomain::halfplane(2, 1.0),
                AnalyticSolution::halfplane_harmonic(2, k),
            ),
            Case::Wedge => (
                GraphDomain::wedge(2, PI / 2.0, 1.0)?,
                AnalyticSolution::wedge_harmonic(PI / 2.0)?,
            ),
            Case::Mixed => (
                GraphDomain::halfplane(2, 1.0),
                AnalyticSolution::combination(vec![
                    (1.0, AnalyticSolution::halfplane_harmonic(2, 1)),
                    (1.0, AnalyticSolution::halfplane_harmonic(2, 2)),
                ])?,
            ),
        };
        let id = MatrixField::identity(2);
        let ball = Ball {
            center: ORIGIN,
            radius: 0.5,
        };
        let sol = solve(&dom, &id, ball, &g, &SolveParams::new(nodes))?;
        let q = QuadratureSpec::for_solution(&sol);
        let radii = radius_grid(0.05, 0.2);
        let doubling = doubling_curve(&sol, &id, &dom, &ORIGIN, &radii, &q)?.doubling;
        let frequency = frequency(&sol, &id, &dom, &ORIGIN, &radii, &q)?.frequency;
        let c = Curves {
            doubling,
            frequency,
            elapsed: start.elapsed(),
        };
        self.curves.insert((case, nodes), c.clone());
        Ok(c)
    }

    pub fn run(&mut self, id: u8) -> CriterionResult {
        let outcome = match id {
            1 => self.homogeneity(),
            2 => self.wedge(),
            3 => self.monotonicity(),
            4 => affine_invariance(),
            5 => whitney_certification(),
            6 => exact_combinatorics(),
            7 => stirling_bound(),
            8 => branching(),
            9 => box_counts(),
            10 => pipeline_sanity(),
            11 => determinism(),
            _ => Err(format!("no criterion {id}")),
        };
        let (pass, detail) = match outcome {
            Ok((pass, detail)) => (pass, detail),
            Err(detail) => (false, detail),
        };
        CriterionResult {
            id,
            title: title(id),
            pass,
            detail,
        }
    }

    fn oracle(&mut self, cases: &[(Case, f64)]) -> std::result::Result<(bool, String), String> {
        let mut pass = true;
        let mut parts = Vec::new();
        for &(case, degree) in cases {
            let c = fail_on(self.curves(case, FINE_NODES))?;
            let n_expect = (2.0 * degree + 2.0) * LN_2;
            let n_err = c
                .doubling
                .iter()
                .map(|n| (n - n_expect).abs() / n_expect)
                .fold(0.0, f64::max);
            let f_err = c
                .frequency
                .iter()
                .map(|f| (f - degree).abs() / degree)
                .fold(0.0, f64::max);
            let ok = n_err <= 0.05 && f_err <= 0.03 && c.elapsed <= Duration::from_secs(60);
            pass &= ok;
            parts.push(format!(
                "{} max rel err N {:.2e} (<= 5e-2), freq {:.2e} (<= 3e-2)",
                case.label(),
                n_err,
                f_err
            ));
        }
        Ok((pass, format!("{}; grid {FINE_NODES}^2, r in [0.05, 0.2], 60 s per case", parts.join("; "))))
    }

    fn homogeneity(&mut self) -> std::result::Result<(bool, String), String> {
        self.oracle(&[
            (Case::Halfplane(1), 1.0),
            (Case::Halfplane(2), 2.0),
            (Case::Halfplane(3), 3.0),
        ])
    }

    fn wedge(&mut self) -> std::result::Result<(bool, String), String> {
        self.oracle(&[(Case::Wedge, 2.0)])
    }

    fn monotonicity(&mut self) -> std::result::Result<(bool, String), String> {
        let cases = [
            Case::Halfplane(1),
            Case::Halfplane(2),
            Case::Halfplane(3),
            Case::Wedge,
            Case::Mixed,
        ];
        let mut tol = [0.0f64; 2];
        for (slot, nodes) in [DEFAULT_NODES, FINE_NODES].into_iter().enumerate() {
            for case in cases {
                let c = fail_on(self.curves(case, nodes))?;
                tol[slot] = tol[slot]
                    .max(max_decrease(&c.doubling))
                    .max(max_decrease(&c.frequency));
            }
        }
        let [coarse, fine] = tol;
        let pass = fine <= 0.02 && 2.0 * fine <= coarse;
        Ok((
            pass,
            format!(
                "largest decrease {coarse:.3e} at {DEFAULT_NODES}^2, {fine:.3e} at {FINE_NODES}^2 \
                 (<= 2e-2, shrink {:.2}x >= 2x)",
                coarse / fine
            ),
        ))
    }
}

type Outcome = std::result::Result<(bool, String), String>;

fn affine_invariance() -> Outcome {
    let a = Mat::diag(&[4.0, 1.0]);
    let field = fail_on(MatrixField::constant(a))?;
    let dom = GraphDomain::halfplane(2, 1.0);
    let params = LibraryParams {
        matrix: Some(a),
        k: Some(2),
        ..Default::default()
    };
    let u = fail_on(AnalyticSolution::from_library(
        "constant_coefficient_affine_image",
        2,
        &params,
    ))?;
    let ball = Ball {
        center: ORIGIN,
        radius: 0.5,
    };
    let sol = fail_on(solve(&dom, &field, ball, &u, &SolveParams::new(DEFAULT_NODES)))?;
    let q = QuadratureSpec::for_solution(&sol);
    let mut worst: f64 = 0.0;
    for (x0, r) in [([0.0, 0.0, 0.0], 0.1), ([0.0, 0.05, 0.0], 0.08), ([0.05, 0.1, 0.0], 0.05)] {
        let direct = fail_on(weighted_mass(&sol, &field, &dom, &x0, r, &q))?.value;
        let via = fail_on(weighted_mass_normalized(&sol, &field, &dom, &x0, r, sol.mesh.h))?;
        worst = worst.max((direct - via).abs() / direct.abs());
    }
    Ok((
        worst <= 1e-2,
        format!("A = diag(4,1), grid {DEFAULT_NODES}^2, max rel gap {worst:.3e} (<= 1e-2)"),
    ))
}

fn whitney_certification() -> Outcome {
    let start = Instant::now();
    let ball = Ball {
        center: ORIGIN,
        radius: 1.0,
    };
    let domains = [
        ("halfplane", GraphDomain::halfplane(2, 1.0)),
        ("wedge", fail_on(GraphDomain::wedge(2, PI / 2.0, 1.0))?),
        ("sawtooth", fail_on(GraphDomain::sawtooth(2, 0.5, 4, 1.0, 1.0))?),
    ];
    let params = WhitneyParams::new(28.0, 1.0 / 4096.0);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, dom) in domains {
        let dec = fail_on(decompose(&dom, &ball, &params))?;
        let tree = fail_on(build_tree(&dec, &ball, 2.0, 6))?;
        let partitions = (0..=6).all(|k| tree.partition_holds(k));
        let c = &dec.certificate;
        let (lo, hi) = c.dist_ratio;
        let dist_ok = lo >= 1.0 && hi <= 2.0 * params.touch;
        let ok = c.pass() && partitions && dist_ok;
        pass &= ok;
        parts.push(format!(
            "{name}: {} cuboids, violations (i) {} (ii) {} (iii) {}, overlap {}, dist/l in [{lo:.2}, {hi:.2}], partition {}",
            c.cuboids,
            c.inner_violations,
            c.touch_violations,
            c.ratio_violations,
            c.max_overlap,
            if partitions { "exact" } else { "broken" }
        ));
    }
    pass &= start.elapsed() <= Duration::from_secs(30);
    Ok((
        pass,
        format!("lambda 28, W 58, depth 6; {}; 30 s limit", parts.join("; ")),
    ))
}

fn exact_combinatorics() -> Outcome {
    let alpha = fail_on(alpha_from_delta0(0.25))?;
    let eps0 = fail_on(eps0_from_alpha(0.1))?;
    let eps_err = (eps0 - (2f64.powf(1.0 / 9.0) - 1.0)).abs();
    let z_err = (rate_z(0.25, 0.25) - 1.0).abs();
    let a10 = binomial_tail_exact(10, 0.2, 0.25);
    let ratio = (1..=200u64).all(|j| {
        [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5]
            .iter()
            .all(|&b| ratio_inequality_holds(j, b))
    });
    let pass = alpha == 0.1 && eps_err <= 1e-12 && z_err <= 1e-12 && (a10 - 0.525593).abs() <= 1e-6 && ratio;
    Ok((
        pass,
        format!(
            "alpha(0.25) = {alpha}, |eps0 - (2^(1/9)-1)| = {eps_err:.1e}, |z - 1| = {z_err:.1e}, \
             A_10 = {a10:.6}, ratio inequality for j <= 200 {}",
            if ratio { "holds" } else { "fails" }
        ),
    ))
}

fn stirling_bound() -> Outcome {
    let mut worst: f64 = 0.0;
    for beta in [0.05, 0.1, 0.15] {
        for j in 50..=500 {
            worst = worst.max(fail_on(binomial_tail_bound(j, beta, 0.25))?.ratio);
        }
    }
    Ok((
        worst <= 4.0,
        format!("max exact/bound {worst:.4} over j in [50, 500], beta in {{0.05, 0.1, 0.15}} (<= 4)"),
    ))
}

fn branching() -> Outcome {
    let start = Instant::now();
    let params = SimulationParams {
        delta0: 0.25,
        m: 16,
        d: 2,
        depth: 8,
        trials: 1000,
        seed: 7,
        mode: GoodCount::Ceil,
        root_excess: 0.0,
    };
    let rep = fail_on(branching_simulate(&params))?;
    let worst_sigma = rep
        .rows
        .iter()
        .map(|r| {
            let gap = (r.survivors - r.exact_tail).abs();
            if r.sigma > 0.0 {
                gap / r.sigma
            } else if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    let fitted = rep.fitted_dimension.unwrap_or(f64::NAN);
    let pass = worst_sigma <= 3.0
        && fitted <= rep.dimension_bound + 0.05
        && start.elapsed() <= Duration::from_secs(120);
    Ok((
        pass,
        format!(
            "M 16, depth 8, 1000 trials, seed 7: worst deviation {worst_sigma:.2} sigma (<= 3), \
             fitted dimension {fitted:.4} (<= {:.4} + 0.05)",
            rep.dimension_bound
        ),
    ))
}

fn box_counts() -> Outcome {
    let mut cantor = vec![0.0f64];
    for k in 1..=10 {
        let s = 3f64.powi(-k);
        cantor = cantor.iter().flat_map(|&a| [a, a + 2.0 * s]).collect();
    }
    let side = 3f64.powi(-10);
    let cantor: Vec<[f64; 3]> = cantor.iter().map(|&a| [a + side / 2.0, 0.0, 0.0]).collect();
    let ternary: Vec<f64> = (1..=10).map(|k| 3f64.powi(-k)).collect();
    let dyadic: Vec<f64> = (1..=8).map(|k| 2f64.powi(-k)).collect();
    let c = fail_on(box_count_dimension(&cantor, 1, &ternary))?.slope;
    let line: Vec<[f64; 3]> = (0..1024).map(|i| [(i as f64 + 0.5) / 1024.0, 0.0, 0.0]).collect();
    let square: Vec<[f64; 3]> = (0..256 * 256)
        .map(|i| [((i % 256) as f64 + 0.5) / 256.0, ((i / 256) as f64 + 0.5) / 256.0, 0.0])
        .collect();
    let full1 = fail_on(box_count_dimension(&line, 1, &dyadic))?.slope;
    let full2 = fail_on(box_count_dimension(&square, 2, &dyadic))?.slope;
    let point = fail_on(box_count_dimension(&[[0.3, 0.7, 0.0]], 2, &dyadic))?.slope;
    let target = 2f64.ln() / 3f64.ln();
    let pass = (c - target).abs() <= 0.02
        && (full1 - 1.0).abs() <= 0.01
        && (full2 - 2.0).abs() <= 0.01
        && point <= 0.01;
    Ok((
        pass,
        format!(
            "Cantor {c:.4} (0.6309 +- 0.02), full cube d=2 {full1:.4}, d=3 {full2:.4} (+- 0.01), point {point:.4} (<= 0.01)"
        ),
    ))
}

fn pipeline_sanity() -> Outcome {
    let cfg = fail_on(RunConfig::parse(HALFPLANE_K2_CONFIG))?;
    let run = fail_on(theorem_pipeline(&cfg))?;
    let rep = &run.report;
    let away = rep.tree.root_side / 4.0;
    let tested: Vec<_> = rep.balls.iter().filter(|b| b.anchor[0].abs() >= away).collect();
    let found = tested.iter().filter(|b| b.ball.found).count();
    let slope = rep.dimension.slope;
    let pass = slope <= 0.1 && !tested.is_empty() && found == tested.len();
    Ok((
        pass,
        format!(
            "Im(z^2): residual counts {:?}, slope {slope:.4} (<= 0.1); sign-definite balls at {found}/{} anchors with |x1| >= {away}",
            rep.dimension.residual_counts,
            tested.len()
        ),
    ))
}

/// Reruns criteria 1 to 10 twice, the second time on a differently sized
/// thread pool, and compares the serialized results byte for byte.
fn determinism() -> Outcome {
    let pass_once = || -> String {
        let mut suite = Suite::new();
        let results: Vec<CriterionResult> = (1..=10).map(|id| suite.run(id)).collect();
        serde_json::to_string(&results).expect("results serialize")
    };
    let first = pass_once();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .map_err(|e| format!("error: {e}"))?;
    let second = pool.install(pass_once);
    let same = first == second;
    Ok((
        same,
        format!(
            "criteria 1-10 rerun on 3 threads: {} ({} bytes)",
            if same { "byte-identical" } else { "outputs differ" },
            first.len()
        ),
    ))
}

/// Runs the given criteria in order.
pub fn run_selected(ids: &[u8]) -> SuiteReport {
    let mut suite = Suite::new();
    SuiteReport {
        version: crate::pipeline::VERSION,
        results: ids.iter().map(|&id| suite.run(id)).collect(),
    }
}

pub fn run_all() -> SuiteReport {
    run_selected(&CRITERIA)
}
