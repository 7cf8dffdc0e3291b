//! End-to-end run: solve, decompose, evaluate tree nodes, run the N′
//! recursion, collect sign-definite balls and translates, and box-count the
//! residual projected set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::MatrixField;
use crate::config::{Delta0, Epsilon, RunConfig};
use crate::dimension::{
    dimension_bound, eps0_from_alpha, least_squares_slope, modified_index_recursion, rate_z,
    CombinatorialParams, StepNode, StepTree,
};
use crate::error::{Error, Result};
use crate::frequency::{doubling_index, QuadratureSpec};
use crate::geometry::GraphDomain;
use crate::linalg::{Point, ORIGIN};
use crate::nodal::{classify_sign, find_signless_ball, Region, SignlessBall, Verdict};
use crate::solver::{solve, GridSolution};
use crate::whitney::{build_tree, decompose, vertical_translate, ProjectedCube, WhitneyTree};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionNode {
    pub generation: usize,
    pub center: Point,
    pub side: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// The parts of a Whitney tree the combinatorics needs: generations,
/// horizontal positions and sides.
#[derive(Debug, Clone, Serialize)]
pub struct ProjectionTree {
    pub d: usize,
    pub nodes: Vec<ProjectionNode>,
}

impl ProjectionTree {
    pub fn from_whitney(tree: &WhitneyTree) -> Self {
        ProjectionTree {
            d: tree.d,
            nodes: tree
                .nodes
                .iter()
                .map(|n| {
                    let q = &tree.cuboids[n.cuboid];
                    ProjectionNode {
                        generation: n.generation,
                        center: q.center,
                        side: q.side,
                        parent: n.parent,
                        children: n.children.clone(),
                    }
                })
                .collect(),
        }
    }

    /// Reads the tab-separated form written by `WhitneyTree::to_tsv`.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Format("empty tree file".into()))?
            .split('\t')
            .collect();
        let d = header.len().checked_sub(3).filter(|d| (2..=3).contains(d)).ok_or_else(|| {
            Error::Format(format!("tree header has {} columns", header.len()))
        })?;
        let mut nodes: Vec<ProjectionNode> = Vec::new();
        for (row, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != d + 3 {
                return Err(Error::Format(format!("tree row {row} has {} columns", f.len())));
            }
            let bad = |what: &str| Error::Format(format!("tree row {row}: bad {what}"));
            let generation: usize = f[0].parse().map_err(|_| bad("generation"))?;
            let mut center = ORIGIN;
            for i in 0..d {
                center[i] = f[1 + i].parse().map_err(|_| bad("coordinate"))?;
            }
            let side: f64 = f[d + 1].parse().map_err(|_| bad("side"))?;
            let parent: i64 = f[d + 2].parse().map_err(|_| bad("parent"))?;
            let parent = if parent < 0 {
                None
            } else {
                let p = parent as usize;
                if p >= nodes.len() || nodes[p].generation + 1 != generation {
                    return Err(bad("parent"));
                }
                Some(p)
            };
            if (parent.is_none()) != (row == 0) {
                return Err(Error::Format("the root must be the first and only parentless row".into()));
            }
            if let Some(p) = parent {
                nodes[p].children.push(row);
            }
            nodes.push(ProjectionNode {
                generation,
                center,
                side,
                parent,
                children: Vec::new(),
            });
        }
        if nodes.is_empty() {
            return Err(Error::Format("tree has no nodes".into()));
        }
        Ok(ProjectionTree { d, nodes })
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.generation).max().unwrap_or(0)
    }

    pub fn projection(&self, node: usize) -> ProjectedCube {
        let n = &self.nodes[node];
        let mut lo = ORIGIN;
        for i in 0..self.d - 1 {
            lo[i] = n.center[i] - 0.5 * n.side;
        }
        ProjectedCube { lo, side: n.side }
    }

    fn descend(&self, node: usize, generations: usize) -> Vec<usize> {
        let mut level = vec![node];
        for _ in 0..generations {
            level = level.iter().flat_map(|&n| self.nodes[n].children.iter().copied()).collect();
        }
        level
    }
}

/// Doubling value and translate verdict of one tree node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeEvaluation {
    pub node: usize,
    /// N*(x_Q, S·ℓ(Q)); absent when the masses are degenerate or leave the
    /// solved region.
    pub n: Option<f64>,
    pub translate: Verdict,
    pub margin: f64,
}

/// Evaluates every node of `tree`.
pub fn evaluate_nodes(
    sol: &GridSolution,
    field: &MatrixField,
    domain: &GraphDomain,
    tree: &WhitneyTree,
    s: f64,
    eta: f64,
) -> Result<Vec<NodeEvaluation>> {
    let d = domain.d;
    let quad = QuadratureSpec::for_solution(sol);
    (0..tree.nodes.len())
        .into_par_iter()
        .map(|node| {
            let q = tree.cuboid(node);
            let n = doubling_index(sol, field, domain, &q.center, s * q.side, &quad)
                .ok()
                .map(|v| v + 1.0);
            let (translate, margin) = match vertical_translate(q, domain) {
                Ok(t) => match classify_sign(sol, domain, &Region::from_cuboid(d, &t), eta) {
                    Ok(c) => (c.verdict, c.margin),
                    Err(Error::EmptyRegion) => (Verdict::Undetermined, 0.0),
                    Err(e) => return Err(e),
                },
                Err(Error::OutOfRange(_)) => (Verdict::Undetermined, 0.0),
                Err(e) => return Err(e),
            };
            Ok(NodeEvaluation {
                node,
                n,
                translate,
                margin,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    /// Whether the empirical δ₀ estimate is at least the δ₀ in use.
    pub supported: bool,
    /// slope ≤ comparator; `None` when not asserted.
    pub holds: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DimensionAnalysis {
    pub d: usize,
    pub k: usize,
    pub m: usize,
    pub steps: usize,
    pub delta0: f64,
    /// Smallest fraction, over internal step nodes, of children with a
    /// sign-definite translate or a halved doubling value.
    pub empirical_delta0: f64,
    pub epsilon: f64,
    pub n0: f64,
    pub alpha: f64,
    pub eps0: f64,
    pub z_alpha: f64,
    /// dimension_bound of the parameters in use; not the unspecified ε₁.
    pub theoretical_comparator: f64,
    pub mu_final: f64,
    /// Surviving step nodes (F_i < α + μ_i at every step) per step.
    pub survivors: Vec<usize>,
    pub undetermined: usize,
    pub lineage_conflicts: usize,
    pub claim_checked: usize,
    pub claim_violations: usize,
    /// Box sides 2^{−jK}ℓ(R) and residual cell counts at those sides.
    pub residual_scales: Vec<f64>,
    pub residual_counts: Vec<usize>,
    /// Residual projected cells at the deepest generation.
    pub residual: Vec<ProjectedCube>,
    pub residual_empty: bool,
    pub slope: f64,
    pub assertion: Assertion,
}

/// Combines a projection tree and node evaluations into the N′ recursion
/// and the residual box count.
pub fn analyze_dimension(
    tree: &ProjectionTree,
    evals: &[NodeEvaluation],
    k: usize,
    delta0: Delta0,
    epsilon: Epsilon,
    n0: f64,
    s: f64,
) -> Result<DimensionAnalysis> {
    let d = tree.d;
    let depth = tree.depth();
    if k == 0 || depth < k {
        return Err(Error::InvalidParameter(format!(
            "tree depth {depth} holds no complete step of {k} generations"
        )));
    }
    let mut by_node: Vec<Option<&NodeEvaluation>> = vec![None; tree.nodes.len()];
    for e in evals {
        let slot = by_node
            .get_mut(e.node)
            .ok_or_else(|| Error::Format(format!("evaluation for unknown node {}", e.node)))?;
        *slot = Some(e);
    }
    let verdict = |n: usize| by_node[n].map_or(Verdict::Undetermined, |e| e.translate);
    let value = |n: usize| by_node[n].and_then(|e| e.n);
    let m = 1usize << ((d - 1) * k);
    let steps = depth / k;
    let mut ids = vec![vec![0usize]];
    for j in 1..=steps {
        let next: Vec<usize> = ids[j - 1].iter().flat_map(|&p| tree.descend(p, k)).collect();
        if next.len() != m * ids[j - 1].len() {
            return Err(Error::Format(format!("step {j} of the tree is incomplete")));
        }
        ids.push(next);
    }

    let mut empirical: f64 = 1.0;
    for j in 0..steps {
        for (i, &p) in ids[j].iter().enumerate() {
            let good = ids[j + 1][i * m..(i + 1) * m]
                .iter()
                .filter(|&&c| {
                    verdict(c).is_definite()
                        || matches!((value(c), value(p)), (Some(a), Some(b)) if a <= b / 2.0)
                })
                .count();
            empirical = empirical.min(good as f64 / m as f64);
        }
    }
    let delta0_used = match delta0 {
        Delta0::Value(v) => v,
        Delta0::Keyword(_) => {
            if empirical == 0.0 {
                return Err(Error::InvalidParameter(
                    "empirical delta0 estimate is zero; supply a value".into(),
                ));
            }
            empirical.min((m as f64 - 1.0) / m as f64)
        }
    };
    let epsilon = match epsilon {
        Epsilon::Value(e) => e,
        Epsilon::Keyword(_) => 1.0 / s,
    };
    let params = CombinatorialParams {
        delta0: delta0_used,
        epsilon,
        n0,
        k,
        d,
    };
    params.validate()?;
    let step_tree = StepTree {
        m,
        levels: ids
            .iter()
            .map(|level| {
                level
                    .iter()
                    .map(|&n| StepNode {
                        n: value(n),
                        translate: verdict(n),
                    })
                    .collect()
            })
            .collect(),
    };
    let state = modified_index_recursion(&step_tree, &params)?;

    // residual: step cells with no sign-definite translate in their lineage
    let mut clean = vec![vec![!verdict(0).is_definite()]];
    for j in 1..=steps {
        let level: Vec<bool> = ids[j]
            .iter()
            .enumerate()
            .map(|(i, &n)| clean[j - 1][i / m] && !verdict(n).is_definite())
            .collect();
        clean.push(level);
    }
    let root_side = tree.nodes[0].side;
    let residual_scales: Vec<f64> =
        (0..=steps).map(|j| root_side / (1u64 << (j * k)) as f64).collect();
    let residual_counts: Vec<usize> =
        clean.iter().map(|l| l.iter().filter(|&&c| c).count()).collect();
    let residual: Vec<ProjectedCube> = ids[steps]
        .iter()
        .zip(&clean[steps])
        .filter(|(_, &c)| c)
        .map(|(&n, _)| tree.projection(n))
        .collect();
    let pts: Vec<(f64, f64)> = residual_scales
        .iter()
        .zip(&residual_counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&s, &c)| (-s.ln(), (c as f64).ln()))
        .collect();
    let residual_empty = residual.is_empty();
    let slope = if residual_empty {
        0.0
    } else {
        least_squares_slope(&pts).unwrap_or(0.0)
    };
    let alpha = state.alpha;
    let bound = dimension_bound(&params)?;
    let supported = empirical >= delta0_used - 1e-12;
    Ok(DimensionAnalysis {
        d,
        k,
        m,
        steps,
        delta0: delta0_used,
        empirical_delta0: empirical,
        epsilon,
        n0,
        alpha,
        eps0: eps0_from_alpha(alpha)?,
        z_alpha: rate_z(alpha, delta0_used),
        theoretical_comparator: bound,
        mu_final: state.mu[steps],
        survivors: state.survivors.iter().map(|l| l.iter().filter(|&&s| s).count()).collect(),
        undetermined: state.undetermined,
        lineage_conflicts: state.lineage_conflicts,
        claim_checked: state.claim_checked,
        claim_violations: state.claim_violations,
        residual_scales,
        residual_counts,
        residual,
        residual_empty,
        slope,
        assertion: Assertion {
            supported,
            holds: supported.then_some(slope <= bound),
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub nodes_per_axis: usize,
    pub h: f64,
    pub iterations: usize,
    pub relative_residual: f64,
    pub resolved: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeSummary {
    pub cuboids: usize,
    pub certified: bool,
    pub max_overlap: usize,
    pub root_center: Point,
    pub root_side: f64,
    pub depth: usize,
    pub nodes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnchorBall {
    pub anchor: Point,
    pub ball: SignlessBall,
}

#[derive(Debug, Clone, Serialize)]
pub struct DefiniteTranslate {
    pub node: usize,
    pub generation: usize,
    pub projection: ProjectedCube,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub solve: SolveSummary,
    pub tree: TreeSummary,
    pub balls: Vec<AnchorBall>,
    /// Sign-definite translates whose ancestors are not sign-definite.
    pub translates: Vec<DefiniteTranslate>,
    pub dimension: DimensionAnalysis,
}

/// Everything a run produces; the report plus the artifacts it summarizes.
pub struct PipelineRun {
    pub report: PipelineReport,
    pub solution: GridSolution,
    pub tree: WhitneyTree,
    pub evaluations: Vec<NodeEvaluation>,
}

/// Radii ℓ/8, ℓ/16, ℓ/32, ℓ/64 for ball searches at scale ℓ.
fn ball_radii(scale: f64) -> Vec<f64> {
    (3..7).map(|i| scale / f64::from(1u32 << i)).collect()
}

pub fn theorem_pipeline(cfg: &RunConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let domain = cfg.build_domain()?;
    let field = cfg.build_field()?;
    let data = cfg.analytic_data()?;
    let sol = solve(&domain, &field, cfg.solver_ball()?, &data, &cfg.solve_params())
        .map_err(|e| e.in_stage("solve"))?;

    let dec = decompose(&domain, &cfg.solver_ball()?, &cfg.whitney_params())
        .map_err(|e| e.in_stage("whitney"))?;
    let tree = build_tree(&dec, &cfg.tree_ball()?, cfg.tree.m0, cfg.tree.depth)
        .map_err(|e| e.in_stage("whitney"))?;

    let comb = &cfg.combinatorial;
    let evaluations = evaluate_nodes(&sol, &field, &domain, &tree, cfg.tree.s, comb.eta)
        .map_err(|e| e.in_stage("nodal"))?;
    let ptree = ProjectionTree::from_whitney(&tree);
    let dimension = analyze_dimension(
        &ptree,
        &evaluations,
        cfg.tree.k,
        comb.delta0,
        comb.epsilon,
        comb.n0,
        cfg.tree.s,
    )
    .map_err(|e| e.in_stage("dimension"))?;

    let d = domain.d;
    let root_side = tree.root().side;
    let anchors: Vec<Point> = tree.generations[tree.depth]
        .iter()
        .map(|&n| {
            let mut a = tree.cuboid(n).center;
            a[d - 1] = domain.phi(&a)?;
            Ok(a)
        })
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("nodal"))?;
    let radii = ball_radii(root_side);
    let balls = anchors
        .par_iter()
        .map(|a| {
            Ok(AnchorBall {
                anchor: *a,
                ball: find_signless_ball(&sol, &domain, a, root_side, &radii, comb.eta)?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("nodal"))?;

    let mut translates = Vec::new();
    let mut covered = vec![false; tree.nodes.len()];
    for (i, node) in tree.nodes.iter().enumerate() {
        let inherited = node.parent.is_some_and(|p| covered[p]);
        let definite = evaluations[i].translate.is_definite();
        covered[i] = inherited || definite;
        if definite && !inherited {
            translates.push(DefiniteTranslate {
                node: i,
                generation: node.generation,
                projection: tree.cuboid(i).project(d),
                verdict: evaluations[i].translate,
            });
        }
    }

    let report = PipelineReport {
        tool: "uclab".into(),
        version: VERSION.into(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        solve: SolveSummary {
            nodes_per_axis: sol.mesh.n,
            h: sol.mesh.h,
            iterations: sol.iterations,
            relative_residual: sol.residual,
            resolved: sol.resolved,
        },
        tree: TreeSummary {
            cuboids: dec.cuboids.len(),
            certified: dec.certificate.pass(),
            max_overlap: dec.certificate.max_overlap,
            root_center: tree.root().center,
            root_side,
            depth: tree.depth,
            nodes: tree.nodes.len(),
        },
        balls,
        translates,
        dimension,
    };
    Ok(PipelineRun {
        report,
        solution: sol,
        tree,
        evaluations,
    })
}
