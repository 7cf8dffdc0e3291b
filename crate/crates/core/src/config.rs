//! Run configuration: a TOML document with one table per stage. Lengths are
//! dimensionless, in the units of the domain's coordinates.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::MatrixField;
use crate::error::{Error, Result};
use crate::geometry::{Ball, GraphDomain};
use crate::linalg::{Mat, Point, ORIGIN};
use crate::solver::{hex, AnalyticSolution, LibraryParams, SolveParams};
use crate::whitney::WhitneyParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainConfig,
    #[serde(default)]
    pub coefficients: CoefficientConfig,
    pub solver: SolverConfig,
    pub tree: TreeConfig,
    pub combinatorial: CombinatorialConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum DomainConfig {
    Halfplane {
        d: usize,
        chart_radius: f64,
    },
    Wedge {
        d: usize,
        chart_radius: f64,
        /// Opening angle in radians.
        opening: f64,
    },
    Sawtooth {
        d: usize,
        chart_radius: f64,
        width: f64,
        levels: usize,
        curvature: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum CoefficientConfig {
    #[default]
    Identity,
    Constant {
        matrix: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub center: Vec<f64>,
    pub radius: f64,
    /// Grid nodes per axis across the ball's bounding box.
    pub nodes: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Outer data: a solution from the analytic library.
    pub data: String,
    #[serde(default)]
    pub opening: Option<f64>,
    #[serde(default)]
    pub degree: Option<u32>,
}

fn default_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    /// Centre and radius of the ball B₀ whose (M₀/2)-dilate holds the root.
    pub center: Vec<f64>,
    pub radius: f64,
    pub m0: f64,
    /// Selection factor λ of the decomposition; W defaults to 2λ + 2.
    pub containment: f64,
    #[serde(default)]
    pub touch: Option<f64>,
    pub min_scale: f64,
    /// Generations below the root; a multiple of `k`.
    pub depth: usize,
    /// Generations per combinatorial step.
    pub k: usize,
    /// Doubling radius factor: N(Q) = N*(x_Q, S·ℓ(Q)).
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Delta0 {
    Value(f64),
    Keyword(Empirical),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Empirical {
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilon {
    Value(f64),
    Keyword(FromS),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FromS {
    #[serde(rename = "from-S")]
    FromS,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinatorialConfig {
    pub delta0: Delta0,
    pub n0: f64,
    pub epsilon: Epsilon,
    /// Relative margin η of the sign verdicts.
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_eta() -> f64 {
    crate::nodal::DEFAULT_MARGIN
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub solution: Option<PathBuf>,
    #[serde(default)]
    pub tree: Option<PathBuf>,
}

fn point(d: usize, v: &[f64], what: &str) -> Result<Point> {
    if v.len() != d {
        return Err(Error::Config(format!("{what} needs {d} coordinates, got {}", v.len())));
    }
    let mut p = ORIGIN;
    p[..d].copy_from_slice(v);
    Ok(p)
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// sha256 of the canonical JSON form, independent of layout and comments.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(canonical.as_bytes()))
    }

    pub fn d(&self) -> usize {
        match self.domain {
            DomainConfig::Halfplane { d, .. }
            | DomainConfig::Wedge { d, .. }
            | DomainConfig::Sawtooth { d, .. } => d,
        }
    }

    /// Range checks on every numeric field, run before any computation.
    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if d != 2 && d != 3 {
            return Err(Error::Config(format!("dimension must be 2 or 3, got {d}")));
        }
        self.build_domain()?;
        self.build_field()?;
        self.solver_ball()?;
        positive(self.solver.radius, "solver.radius")?;
        if self.solver.nodes < 5 {
            return Err(Error::Config("solver.nodes must be at least 5".into()));
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            return Err(Error::Config("solver.tol must lie in (0, 1)".into()));
        }
        self.analytic_data()?;
        let t = &self.tree;
        self.tree_ball()?;
        positive(t.m0, "tree.m0")?;
        positive(t.min_scale, "tree.min_scale")?;
        positive(t.s, "tree.s")?;
        if t.containment < crate::whitney::INNER_DILATION {
            return Err(Error::Config(format!(
                "tree.containment must be at least {}",
                crate::whitney::INNER_DILATION
            )));
        }
        if let Some(w) = t.touch {
            positive(w, "tree.touch")?;
        }
        if t.k == 0 || t.depth == 0 || !t.depth.is_multiple_of(t.k) {
            return Err(Error::Config("tree.depth must be a positive multiple of tree.k".into()));
        }
        if (d - 1) * t.k > 20 {
            return Err(Error::Config("tree.k too large: M = 2^((d-1)k) exceeds 2^20".into()));
        }
        let c = &self.combinatorial;
        if let Delta0::Value(v) = c.delta0 {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("combinatorial.delta0 = {v} must lie in (0, 1)")));
            }
        }
        if !(c.n0 > 1.0 && c.n0.is_finite()) {
            return Err(Error::Config("combinatorial.n0 must exceed 1".into()));
        }
        if let Epsilon::Value(e) = c.epsilon {
            positive(e, "combinatorial.epsilon")?;
        }
        if !(c.eta > 0.0 && c.eta < 1.0) {
            return Err(Error::Config("combinatorial.eta must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn build_domain(&self) -> Result<GraphDomain> {
        let dom = match self.domain {
            DomainConfig::Halfplane { d, chart_radius } => {
                positive(chart_radius, "domain.chart_radius")?;
                if d != 2 && d != 3 {
                    return Err(Error::Config(format!("dimension must be 2 or 3, got {d}")));
                }
                Ok(GraphDomain::halfplane(d, chart_radius))
            }
            DomainConfig::Wedge {
                d,
                chart_radius,
                opening,
            } => {
                positive(chart_radius, "domain.chart_radius")?;
                GraphDomain::wedge(d, opening, chart_radius)
            }
            DomainConfig::Sawtooth {
                d,
                chart_radius,
                width,
                levels,
                curvature,
            } => {
                positive(chart_radius, "domain.chart_radius")?;
                GraphDomain::sawtooth(d, width, levels, curvature, chart_radius)
            }
        };
        dom.map_err(|e| Error::Config(format!("domain: {e}")))
    }

    pub fn build_field(&self) -> Result<MatrixField> {
        let d = self.d();
        match &self.coefficients {
            CoefficientConfig::Identity => Ok(MatrixField::identity(d)),
            CoefficientConfig::Constant { matrix } => {
                if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
                    return Err(Error::Config(format!("coefficients.matrix must be {d}x{d}")));
                }
                MatrixField::constant(Mat::from_rows(matrix))
                    .map_err(|e| Error::Config(format!("coefficients: {e}")))
            }
        }
    }

    pub fn solver_ball(&self) -> Result<Ball> {
        Ok(Ball {
            center: point(self.d(), &self.solver.center, "solver.center")?,
            radius: self.solver.radius,
        })
    }

    pub fn tree_ball(&self) -> Result<Ball> {
        positive(self.tree.radius, "tree.radius")?;
        Ok(Ball {
            center: point(self.d(), &self.tree.center, "tree.center")?,
            radius: self.tree.radius,
        })
    }

    pub fn solve_params(&self) -> SolveParams {
        SolveParams {
            tol: self.solver.tol,
            ..SolveParams::new(self.solver.nodes)
        }
    }

    pub fn whitney_params(&self) -> WhitneyParams {
        let mut p = WhitneyParams::new(self.tree.containment, self.tree.min_scale);
        if let Some(w) = self.tree.touch {
            p.touch = w;
        }
        p
    }

    /// The outer data, paired with the configured coefficients when it is
    /// an affine image.
    pub fn analytic_data(&self) -> Result<AnalyticSolution> {
        let matrix = match &self.coefficients {
            CoefficientConfig::Constant { matrix } => Some(Mat::from_rows(matrix)),
            CoefficientConfig::Identity => None,
        };
        let params = LibraryParams {
            opening: self.solver.opening,
            matrix,
            k: self.solver.degree,
        };
        AnalyticSolution::from_library(&self.solver.data, self.d(), &params)
            .map_err(|e| Error::Config(format!("solver.data: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const HALFPLANE: &str = r#"
seed = 7

[domain]
kind = "halfplane"
d = 2
chart_radius = 1.0

[solver]
center = [0.0, 0.0]
radius = 1.0
nodes = 65
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
"#;

    #[test]
    fn parses_and_hashes_canonically() {
        let a = RunConfig::parse(HALFPLANE).unwrap();
        assert_eq!(a.coefficients, CoefficientConfig::Identity);
        assert_eq!(a.combinatorial.eta, 1e-3);
        let reformatted = HALFPLANE.replace("seed = 7", "# comment\nseed    =   7");
        assert_eq!(RunConfig::parse(&reformatted).unwrap().hash(), a.hash());
        let other = HALFPLANE.replace("seed = 7", "seed = 8");
        assert_ne!(RunConfig::parse(&other).unwrap().hash(), a.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn keywords_for_delta0_and_epsilon() {
        let text = HALFPLANE
            .replace("delta0 = 0.25", "delta0 = \"empirical\"")
            .replace("epsilon = 0.05", "epsilon = \"from-S\"");
        let c = RunConfig::parse(&text).unwrap();
        assert_eq!(c.combinatorial.delta0, Delta0::Keyword(Empirical::Empirical));
        assert_eq!(c.combinatorial.epsilon, Epsilon::Keyword(FromS::FromS));
        assert!(RunConfig::parse(&HALFPLANE.replace("0.25", "\"sometimes\"")).is_err());
    }

    #[test]
    fn range_errors_are_config_errors() {
        for (from, to) in [
            ("delta0 = 0.25", "delta0 = 1.5"),
            ("nodes = 65", "nodes = 2"),
            ("depth = 3", "depth = 0"),
            ("containment = 10.0", "containment = 4.0"),
            ("center = [0.0, 0.0]", "center = [0.0]"),
            ("data = \"halfplane_harmonic_2\"", "data = \"nope\""),
            ("n0 = 4.0", "n0 = 0.5"),
            ("seed = 7", "seed = 7\nbogus = 1"),
        ] {
            let err = RunConfig::parse(&HALFPLANE.replace(from, to)).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{to}: {err}");
        }
    }
}
