use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use uclab_core::acceptance::{run_selected, CRITERIA};
use uclab_core::config::{Delta0, Empirical, Epsilon, FromS, RunConfig};
use uclab_core::dimension::{
    alpha_from_delta0, branching_simulate, eps0_from_alpha, rate_z, GoodCount, SimulationParams,
};
use uclab_core::frequency::{doubling_curve, frequency, radius_grid, QuadratureSpec};
use uclab_core::linalg::ORIGIN;
use uclab_core::pipeline::{
    analyze_dimension, evaluate_nodes, theorem_pipeline, NodeEvaluation, ProjectionTree, VERSION,
};
use uclab_core::solver::{hex, solve, Checkpoint, GridSolution};
use uclab_core::whitney::{build_tree, decompose};
use uclab_core::Error;

/// Boundary unique continuation laboratory.
#[derive(Parser)]
#[command(name = "uclab", version)]
struct Cli {
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads (ignored with --deterministic).
    #[arg(long, global = true, env = "UCLAB_THREADS")]
    threads: Option<usize>,
    /// Append JSON reports as lines instead of overwriting.
    #[arg(long, global = true)]
    append: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured boundary value problem and write a checkpoint.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Doubling index and frequency curves at a centre.
    Frequency {
        #[command(flatten)]
        source: Source,
        /// Centre coordinates, comma separated (default: the origin).
        #[arg(long, value_delimiter = ',')]
        center: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.05)]
        r_min: f64,
        #[arg(long, default_value_t = 0.2)]
        r_max: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Whitney decomposition and projection tree, written as TSV.
    Whitney {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the decomposition certificate as JSON.
        #[arg(long)]
        certificate: Option<PathBuf>,
        /// Exit 1 when the decomposition fails certification.
        #[arg(long)]
        strict: bool,
    },
    /// Doubling values and translate verdicts of every tree node.
    Nodal {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// N′ recursion and residual box count from a tree and nodal file.
    Dimension {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        nodal: PathBuf,
        /// A value in (0, 1) or `empirical`.
        #[arg(long, default_value = "0.25")]
        delta0: String,
        /// A positive value or `from-S`.
        #[arg(long, default_value = "0.05")]
        epsilon: String,
        #[arg(long, default_value_t = 4.0)]
        n0: f64,
        /// Generations per step.
        #[arg(long = "K", default_value_t = 1)]
        k: usize,
        #[arg(long = "S", default_value_t = 1.0)]
        s: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Branching simulation of the goodness frequency.
    Simulate {
        #[arg(long)]
        delta0: f64,
        /// Generations per step; M = 2^((d−1)K).
        #[arg(long = "K", default_value_t = 4)]
        k: u32,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 10)]
        depth: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Ceil)]
        mode: Mode,
        /// log₂(2N′(R)/N₀) of the root.
        #[arg(long, default_value_t = 0.0)]
        root_excess: f64,
        /// CSV of per-depth survivor fractions.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON summary (default: standard output).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Full run from a configuration file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance suite.
    Selftest {
        /// Criteria to run, comma separated (default: all).
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<u8>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Source {
    #[arg(long)]
    config: PathBuf,
    /// Reuse a solution checkpoint instead of solving.
    #[arg(long)]
    solution: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ceil,
    Floor,
}

/// A failed check, as opposed to a failed computation.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    fn core(e: &Error) -> u8 {
        match e {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::Stage { source, .. } => core(source),
            _ => 1,
        }
    }
    err.chain()
        .find_map(|c| c.downcast_ref::<Error>().map(core))
        .unwrap_or(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("uclab: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("uclab: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// One JSON document per line.
fn write_json(path: Option<&Path>, value: &serde_json::Value, append: bool) -> Result<()> {
    let line = serde_json::to_string(value)? + "\n";
    match path {
        None => print!("{line}"),
        Some(p) => {
            let mut f = OpenOptions::new()
                .create(true)
                .write(true)
                .append(append)
                .truncate(!append)
                .open(p)
                .with_context(|| format!("opening {}", p.display()))?;
            f.write_all(line.as_bytes())?;
        }
    }
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex(&Sha256::digest(bytes))
}

fn solution_for(cfg: &RunConfig, source: &Source) -> Result<GridSolution> {
    let domain = cfg.build_domain()?;
    match &source.solution {
        Some(path) => Ok(GridSolution::from_checkpoint(Checkpoint::read(path)?, &domain)?),
        None => Ok(solve(
            &domain,
            &cfg.build_field()?,
            cfg.solver_ball()?,
            &cfg.analytic_data()?,
            &cfg.solve_params(),
        )?),
    }
}

fn parse_delta0(s: &str) -> Result<Delta0> {
    if s == "empirical" {
        return Ok(Delta0::Keyword(Empirical::Empirical));
    }
    let v: f64 = s.parse().map_err(|_| Error::Config(format!("bad delta0 `{s}`")))?;
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::Config(format!("delta0 = {v} must lie in (0, 1)")).into());
    }
    Ok(Delta0::Value(v))
}

fn parse_epsilon(s: &str) -> Result<Epsilon> {
    if s == "from-S" {
        return Ok(Epsilon::Keyword(FromS::FromS));
    }
    let v: f64 = s.parse().map_err(|_| Error::Config(format!("bad epsilon `{s}`")))?;
    Ok(Epsilon::Value(v))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Solve { config, out } => {
            let cfg = RunConfig::load(config)?;
            let sol = solution_for(&cfg, &Source {
                config: config.clone(),
                solution: None,
            })?;
            sol.save(out, &serde_json::to_string(&cfg)?)?;
            eprintln!(
                "solved {} nodes per axis: {} iterations, relative residual {:.3e}",
                sol.mesh.n, sol.iterations, sol.residual
            );
            Ok(())
        }
        Command::Frequency {
            source,
            center,
            r_min,
            r_max,
            out,
        } => {
            let cfg = RunConfig::load(&source.config)?;
            if !(*r_min > 0.0 && r_max >= r_min) {
                return Err(Error::Config("need 0 < r_min <= r_max".into()).into());
            }
            let d = cfg.d();
            let mut x0 = ORIGIN;
            if let Some(c) = center {
                if c.len() != d {
                    return Err(Error::Config(format!("--center needs {d} coordinates")).into());
                }
                x0[..d].copy_from_slice(c);
            }
            let sol = solution_for(&cfg, source)?;
            let domain = cfg.build_domain()?;
            let field = cfg.build_field()?;
            let q = QuadratureSpec::for_solution(&sol);
            let radii = radius_grid(*r_min, *r_max);
            let dc = doubling_curve(&sol, &field, &domain, &x0, &radii, &q)?;
            let fc = frequency(&sol, &field, &domain, &x0, &radii, &q)?;
            write_json(
                Some(out),
                &json!({
                    "tool": "uclab",
                    "version": VERSION,
                    "config_hash": cfg.hash(),
                    "center": &x0[..d],
                    "radii": radii,
                    "doubling": dc.doubling,
                    "masses": dc.masses,
                    "h": fc.h,
                    "d": fc.d,
                    "frequency": fc.frequency,
                }),
                cli.append,
            )
        }
        Command::Whitney {
            config,
            out,
            certificate,
            strict,
        } => {
            let cfg = RunConfig::load(config)?;
            let domain = cfg.build_domain()?;
            let dec = decompose(&domain, &cfg.solver_ball()?, &cfg.whitney_params())?;
            let tree = build_tree(&dec, &cfg.tree_ball()?, cfg.tree.m0, cfg.tree.depth)?;
            write_text(out, &tree.to_tsv())?;
            if let Some(path) = certificate {
                write_json(
                    Some(path),
                    &json!({
                        "tool": "uclab",
                        "version": VERSION,
                        "config_hash": cfg.hash(),
                        "params": dec.params,
                        "certificate": dec.certificate,
                        "coverage": dec.coverage,
                        "pass": dec.certificate.pass(),
                    }),
                    cli.append,
                )?;
            }
            let c = &dec.certificate;
            eprintln!(
                "{} cuboids, violations (i) {} (ii) {} (iii) {}, max overlap {}: {}",
                c.cuboids,
                c.inner_violations,
                c.touch_violations,
                c.ratio_violations,
                c.max_overlap,
                if c.pass() { "certified" } else { "not certified" }
            );
            if *strict && !c.pass() {
                return Err(CheckFailed("decomposition certificate failed".into()).into());
            }
            Ok(())
        }
        Command::Nodal { source, out } => {
            let cfg = RunConfig::load(&source.config)?;
            let domain = cfg.build_domain()?;
            let field = cfg.build_field()?;
            let sol = solution_for(&cfg, source)?;
            let dec = decompose(&domain, &cfg.solver_ball()?, &cfg.whitney_params())?;
            let tree = build_tree(&dec, &cfg.tree_ball()?, cfg.tree.m0, cfg.tree.depth)?;
            let evals =
                evaluate_nodes(&sol, &field, &domain, &tree, cfg.tree.s, cfg.combinatorial.eta)?;
            write_json(
                Some(out),
                &json!({
                    "tool": "uclab",
                    "version": VERSION,
                    "config_hash": cfg.hash(),
                    "nodes": evals,
                }),
                false,
            )
        }
        Command::Dimension {
            tree,
            nodal,
            delta0,
            epsilon,
            n0,
            k,
            s,
            out,
        } => {
            let delta0 = parse_delta0(delta0)?;
            let epsilon = parse_epsilon(epsilon)?;
            let tree_text = std::fs::read_to_string(tree)
                .with_context(|| format!("reading {}", tree.display()))?;
            let nodal_text = std::fs::read_to_string(nodal)
                .with_context(|| format!("reading {}", nodal.display()))?;
            let ptree = ProjectionTree::from_tsv(&tree_text)?;
            let doc: serde_json::Value = serde_json::from_str(&nodal_text)
                .map_err(|e| Error::Format(format!("nodal file: {e}")))?;
            let evals: Vec<NodeEvaluation> = serde_json::from_value(doc["nodes"].clone())
                .map_err(|e| Error::Format(format!("nodal file: {e}")))?;
            let analysis = analyze_dimension(&ptree, &evals, *k, delta0, epsilon, *n0, *s)?;
            let inputs = format!(
                "{}\n{}\n{}",
                sha256_hex(tree_text.as_bytes()),
                sha256_hex(nodal_text.as_bytes()),
                serde_json::to_string(&json!([delta0, epsilon, n0, k, s]))?
            );
            write_json(
                Some(out),
                &json!({
                    "tool": "uclab",
                    "version": VERSION,
                    "config_hash": sha256_hex(inputs.as_bytes()),
                    "dimension": analysis,
                }),
                cli.append,
            )?;
            if analysis.assertion.holds == Some(false) {
                return Err(CheckFailed("residual slope exceeds the comparator".into()).into());
            }
            Ok(())
        }
        Command::Simulate {
            delta0,
            k,
            d,
            depth,
            trials,
            seed,
            mode,
            root_excess,
            out,
            report,
        } => {
            if !(2..=3).contains(d) || *k == 0 || (*d - 1) as u32 * k > 40 {
                return Err(Error::Config("need d in {2, 3} and 1 <= (d-1)K <= 40".into()).into());
            }
            let params = SimulationParams {
                delta0: *delta0,
                m: 1u64 << ((*d as u32 - 1) * k),
                d: *d,
                depth: *depth,
                trials: *trials,
                seed: *seed,
                mode: match mode {
                    Mode::Ceil => GoodCount::Ceil,
                    Mode::Floor => GoodCount::Floor,
                },
                root_excess: *root_excess,
            };
            let rep = branching_simulate(&params)?;
            if let Some(path) = out {
                write_text(path, &rep.to_csv())?;
            }
            let alpha = alpha_from_delta0(*delta0)?;
            write_json(
                report.as_deref(),
                &json!({
                    "tool": "uclab",
                    "version": VERSION,
                    "config_hash": sha256_hex(serde_json::to_string(&params)?.as_bytes()),
                    "params": params,
                    "K": k,
                    "alpha": alpha,
                    "eps0": eps0_from_alpha(alpha)?,
                    "z_alpha": rate_z(alpha, *delta0),
                    "bound": rep.dimension_bound,
                    "slope": rep.fitted_dimension,
                    "good_per_node": rep.good_per_node,
                    "rows": rep.rows,
                }),
                cli.append,
            )
        }
        Command::Pipeline { config, out } => {
            let cfg = RunConfig::load(config)?;
            let run = theorem_pipeline(&cfg)?;
            if let Some(p) = &cfg.output.solution {
                run.solution.save(p, &serde_json::to_string(&cfg)?)?;
            }
            if let Some(p) = &cfg.output.tree {
                write_text(p, &run.tree.to_tsv())?;
            }
            let target = out.as_deref().or(cfg.output.report.as_deref());
            write_json(target, &serde_json::to_value(&run.report)?, cli.append)?;
            if run.report.dimension.assertion.holds == Some(false) {
                return Err(CheckFailed("residual slope exceeds the comparator".into()).into());
            }
            Ok(())
        }
        Command::Selftest { criteria, out } => {
            let ids = criteria.clone().unwrap_or_else(|| CRITERIA.to_vec());
            if let Some(bad) = ids.iter().find(|id| !CRITERIA.contains(id)) {
                return Err(Error::Config(format!("no criterion {bad}")).into());
            }
            let report = run_selected(&ids);
            let text = report.lines();
            print!("{text}");
            if let Some(p) = out {
                write_text(p, &text)?;
            }
            if !report.pass() {
                return Err(CheckFailed("acceptance criteria failed".into()).into());
            }
            Ok(())
        }
    }
}
