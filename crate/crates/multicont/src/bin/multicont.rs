//! Command-line driver for the multicontinuum upscaling pipeline.
//!
//! Exit codes: 0 success, 1 invalid configuration or input, 2 solver
//! failure, 3 `compare --check` bound exceeded.

use clap::{Args, Parser, Subcommand};
use multicont::cells::boundary_decay_study;
use multicont::config::{AutoTag, CaseKind, ContinuumSource, LayersSpec, RunConfig};
use multicont::effective;
use multicont::grid::LocalGrid;
use multicont::media::ContrastSpec;
use multicont::pipeline::{build_problem, run_fine, upscale_all, upscale_all_gradconstraint};
use multicont::verify::{run_compare, run_sweep, SweepSpec};
use multicont::{io as mio, Error, Result};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "multicont",
    version,
    about = "Multicontinuum upscaling for high-contrast diffusion"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the fine-scale reference problem and export the field.
    SolveFine(ConfigArgs),
    /// Solve the cell problems on every coarse cell and export effective
    /// coefficients.
    Upscale(ConfigArgs),
    /// Upscale, assemble, and solve the coarse multicontinuum system.
    SolveCoarse(ConfigArgs),
    /// Full verification run: fine reference, upscaling, coarse solve, and
    /// the relative error report.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Fail (exit 3) if the relative error exceeds this percentage.
        #[arg(long)]
        check: Option<f64>,
    },
    /// Eigenvalues and gap diagnostics of the whole-domain spectral problem.
    Spectra(ConfigArgs),
    /// Error table across coarse mesh / period / depth combinations.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Row "M,epsilon[,layers]"; repeatable.
        #[arg(long = "row", required = true)]
        rows: Vec<String>,
    },
    /// Effective-coefficient settling against the oversampling depth for
    /// the center coarse cell.
    Decay {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Ascending oversampling depths, e.g. --depths 0,1,2,4.
        #[arg(long, value_delimiter = ',', required = true)]
        depths: Vec<usize>,
    },
}

/// Configuration sources, highest precedence last: built-in defaults, then
/// the TOML file, then these flags.
#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Medium: case1, case1_fixed, case2, case3, or file.
    #[arg(long)]
    case: Option<String>,
    /// Fine cells per side.
    #[arg(long)]
    nx: Option<usize>,
    /// Coarse cells per side.
    #[arg(long, short = 'm')]
    coarse_cells: Option<usize>,
    /// Medium period.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Oversampling depth: an integer or "auto".
    #[arg(long)]
    layers: Option<String>,
    /// Conductivity CSV for --case file.
    #[arg(long)]
    kappa_file: Option<PathBuf>,
    /// Continuum labels: generator or spectral.
    #[arg(long)]
    continuum_source: Option<String>,
    /// Override both conductivity levels: low,high.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    contrast: Option<Vec<f64>>,
    /// Drop the convective coupling terms from the coarse system.
    #[arg(long)]
    no_cross_terms: bool,
    /// Single-region mode with gradient constraints (diagnostic).
    #[arg(long)]
    gradient_constraint: bool,
    /// Export cell-solution heatmaps for the center coarse cell.
    #[arg(long)]
    dump_cells: bool,
    /// Linear-solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Output directory.
    #[arg(long, short = 'o')]
    outdir: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => {
                let mut c = RunConfig::example();
                if self.case.is_none() {
                    return Err(Error::Config(
                        "either --config or --case is required".into(),
                    ));
                }
                c.epsilon = None; // must come from flags for ad-hoc runs
                c
            }
        };
        if let Some(case) = &self.case {
            cfg.case = match case.as_str() {
                "case1" => CaseKind::Case1,
                "case1_fixed" => CaseKind::Case1Fixed,
                "case2" => CaseKind::Case2,
                "case3" => CaseKind::Case3,
                "file" => CaseKind::File,
                other => {
                    return Err(Error::Config(format!("unknown case {other:?}")));
                }
            };
        }
        if let Some(nx) = self.nx {
            cfg.nx = nx;
        }
        if let Some(m) = self.coarse_cells {
            cfg.m = m;
        }
        if let Some(eps) = self.epsilon {
            cfg.epsilon = Some(eps);
        }
        if let Some(l) = &self.layers {
            cfg.layers = if l == "auto" {
                LayersSpec::Auto(AutoTag::Auto)
            } else {
                LayersSpec::Fixed(l.parse().map_err(|_| {
                    Error::Config(format!("layers must be an integer or \"auto\", got {l:?}"))
                })?)
            };
        }
        if let Some(k) = &self.kappa_file {
            cfg.kappa_file = Some(k.clone());
        }
        if let Some(src) = &self.continuum_source {
            cfg.continuum_source = match src.as_str() {
                "generator" => ContinuumSource::Generator,
                "spectral" => ContinuumSource::Spectral,
                other => {
                    return Err(Error::Config(format!(
                        "continuum source must be generator or spectral, got {other:?}"
                    )));
                }
            };
        }
        if let Some(c) = &self.contrast {
            cfg.contrast = Some(ContrastSpec::Fixed {
                low: c[0],
                high: c[1],
            });
        }
        if self.no_cross_terms {
            cfg.cross_terms = false;
        }
        if self.gradient_constraint {
            cfg.gradient_constraint = true;
        }
        if self.dump_cells {
            cfg.dump_cells = true;
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(o) = &self.outdir {
            cfg.outdir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Creates the output directory and records the resolved configuration.
fn prepare_outdir(cfg: &RunConfig) -> Result<String> {
    std::fs::create_dir_all(&cfg.outdir)?;
    let hash = cfg.hash();
    let echo = format!("# {}\n{}", mio::provenance(&hash), cfg.to_toml());
    std::fs::write(cfg.outdir.join("config.echo"), echo)?;
    Ok(hash)
}

fn cmd_solve_fine(cfg: &RunConfig) -> Result<()> {
    let hash = prepare_outdir(cfg)?;
    let problem = build_problem(cfg)?;
    let fine = run_fine(&problem)?;
    let nodes = problem.fine.nx + 1;
    mio::write_nodal_csv(
        cfg.outdir.join("fine.csv"),
        &hash,
        nodes,
        problem.fine.h(),
        &fine.u,
    )?;
    mio::write_pgm(cfg.outdir.join("fine.pgm"), &hash, nodes, nodes, &fine.u)?;
    mio::export_kappa(
        cfg.outdir.join("kappa.csv"),
        &hash,
        &problem.fine,
        &problem.kappa,
        &problem.map,
    )?;
    println!(
        "fine solve: nx={} nodes={} max|u|={:.6e}",
        problem.fine.nx,
        fine.u.len(),
        fine.u.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()))
    );
    Ok(())
}

fn write_eff_csv(cfg: &RunConfig, hash: &str, m: usize, eff: &[effective::EffectiveCoefficients]) -> Result<()> {
    let n = eff.first().map(|e| e.n).unwrap_or(0);
    let rows: Vec<String> = (0..m * m)
        .map(|c| effective::csv_row(c % m, c / m, &eff[c]))
        .collect();
    mio::write_csv(
        cfg.outdir.join("eff.csv"),
        hash,
        &effective::csv_header(n),
        &rows,
    )
}

fn do_upscale(cfg: &RunConfig, problem: &multicont::pipeline::Problem) -> Result<multicont::pipeline::UpscaleResult> {
    if cfg.gradient_constraint {
        upscale_all_gradconstraint(problem)
    } else {
        upscale_all(problem)
    }
}

/// Dumps the center coarse cell's constrained fields as heatmaps.
fn dump_center_cell(cfg: &RunConfig, hash: &str, problem: &multicont::pipeline::Problem) -> Result<()> {
    let c = problem.coarse.m / 2;
    let region = multicont::grid::oversample(&problem.coarse, c, c, problem.layers)?;
    let set = multicont::cells::solve_cells(
        &problem.coarse,
        &region,
        &problem.kappa,
        &problem.map,
        problem.tol,
    )?;
    let (nxl, nyl) = set.local.nodes();
    for (i, phi) in set.phi.iter().enumerate() {
        mio::write_pgm(
            cfg.outdir.join(format!("cell_phi{}.pgm", i + 1)),
            hash,
            nxl,
            nyl,
            phi,
        )?;
        for (m, pm) in set.phi_m[i].iter().enumerate() {
            mio::write_pgm(
                cfg.outdir.join(format!("cell_phi{}_m{}.pgm", i + 1, m + 1)),
                hash,
                nxl,
                nyl,
                pm,
            )?;
        }
    }
    Ok(())
}

fn cmd_upscale(cfg: &RunConfig) -> Result<()> {
    let hash = prepare_outdir(cfg)?;
    let problem = build_problem(cfg)?;
    let up = do_upscale(cfg, &problem)?;
    write_eff_csv(cfg, &hash, problem.coarse.m, &up.eff)?;
    if cfg.dump_cells {
        dump_center_cell(cfg, &hash, &problem)?;
    }
    println!(
        "upscale: {} coarse cells, {} distinct cell problems solved",
        up.cells, up.solved
    );
    Ok(())
}

fn write_coarse_csvs(
    cfg: &RunConfig,
    hash: &str,
    sol: &multicont::coarse::CoarseSolution,
) -> Result<()> {
    let nodes = sol.m + 1;
    let h = 1.0 / sol.m as f64;
    for i in 0..sol.n {
        mio::write_nodal_csv(
            cfg.outdir.join(format!("coarse_U{}.csv", i + 1)),
            hash,
            nodes,
            h,
            &sol.u[i],
        )?;
        mio::write_pgm(
            cfg.outdir.join(format!("coarse_U{}.pgm", i + 1)),
            hash,
            nodes,
            nodes,
            &sol.u[i],
        )?;
    }
    Ok(())
}

fn cmd_solve_coarse(cfg: &RunConfig) -> Result<()> {
    let hash = prepare_outdir(cfg)?;
    let problem = build_problem(cfg)?;
    let up = do_upscale(cfg, &problem)?;
    write_eff_csv(cfg, &hash, problem.coarse.m, &up.eff)?;
    let flags = multicont::coarse::AssemblyFlags {
        include_cross_terms: cfg.cross_terms,
    };
    let (_, sol) = multicont::pipeline::run_coarse(&problem, &up.eff, flags)?;
    write_coarse_csvs(cfg, &hash, &sol)?;
    println!(
        "coarse solve: M={} continua={} cross_terms={}",
        sol.m, sol.n, cfg.cross_terms
    );
    Ok(())
}

fn cmd_compare(cfg: &RunConfig, check: Option<f64>) -> Result<i32> {
    let hash = prepare_outdir(cfg)?;
    let outcome = run_compare(cfg)?;
    let nodes = outcome.problem.fine.nx + 1;
    mio::write_nodal_csv(
        cfg.outdir.join("fine.csv"),
        &hash,
        nodes,
        outcome.problem.fine.h(),
        &outcome.fine.u,
    )?;
    write_eff_csv(cfg, &hash, outcome.problem.coarse.m, &outcome.eff)?;
    write_coarse_csvs(cfg, &hash, &outcome.coarse)?;
    mio::write_json(cfg.outdir.join("e2.json"), &outcome.report)?;
    println!(
        "compare: M={} eps={:?} layers={} e2={:.4}%",
        cfg.m,
        cfg.epsilon,
        cfg.layers(),
        outcome.report.e2_percent
    );
    if let Some(bound) = check {
        if !(outcome.report.e2_percent <= bound) {
            eprintln!(
                "check failed: e2 {:.4}% exceeds bound {bound}%",
                outcome.report.e2_percent
            );
            return Ok(3);
        }
    }
    Ok(0)
}

fn cmd_spectra(cfg: &RunConfig) -> Result<()> {
    let hash = prepare_outdir(cfg)?;
    let problem = build_problem(cfg)?;
    let local = LocalGrid::whole(&problem.fine);
    let report = multicont::spectral::spectral_decompose(
        &local,
        &problem.kappa.values,
        cfg.eig_count,
        cfg.gap_threshold,
    )?;
    #[derive(serde::Serialize)]
    struct SpectraOut<'a> {
        eigenvalues: &'a [f64],
        gap: Option<usize>,
        gap_ratio: f64,
    }
    mio::write_json(
        cfg.outdir.join("spectra.json"),
        &SpectraOut {
            eigenvalues: &report.eigenvalues,
            gap: report.gap,
            gap_ratio: report.gap_ratio,
        },
    )?;
    let nodes = problem.fine.nx + 1;
    for (k, ev) in report.eigenvectors.iter().enumerate() {
        mio::write_pgm(
            cfg.outdir.join(format!("eig{}.pgm", k + 1)),
            &hash,
            nodes,
            nodes,
            ev,
        )?;
    }
    match report.gap {
        Some(k) => println!(
            "spectra: gap after {k} eigenvalue(s), ratio {:.3e}",
            report.gap_ratio
        ),
        None => println!(
            "spectra: no gap (best ratio {:.3e} below threshold {})",
            report.gap_ratio, cfg.gap_threshold
        ),
    }
    Ok(())
}

fn parse_sweep_row(row: &str) -> Result<SweepSpec> {
    let parts: Vec<&str> = row.split(',').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(Error::Config(format!(
            "sweep row must be \"M,epsilon[,layers]\", got {row:?}"
        )));
    }
    Ok(SweepSpec {
        m: parts[0]
            .parse()
            .map_err(|_| Error::Config(format!("bad M in sweep row {row:?}")))?,
        epsilon: parts[1]
            .parse()
            .map_err(|_| Error::Config(format!("bad epsilon in sweep row {row:?}")))?,
        layers: match parts.get(2) {
            Some(l) => Some(
                l.parse()
                    .map_err(|_| Error::Config(format!("bad layers in sweep row {row:?}")))?,
            ),
            None => None,
        },
    })
}

fn cmd_sweep(cfg: &RunConfig, rows: &[String]) -> Result<()> {
    let hash = prepare_outdir(cfg)?;
    let specs: Vec<SweepSpec> = rows
        .iter()
        .map(|r| parse_sweep_row(r))
        .collect::<Result<_>>()?;
    let results = run_sweep(cfg, &specs);
    let csv_rows: Vec<String> = results
        .iter()
        .map(|r| {
            format!(
                "{},{:.17e},{},{},{},{}",
                r.m,
                r.epsilon,
                r.layers,
                r.solved_regions,
                r.e2_percent
                    .map(|e| format!("{e:.6}"))
                    .unwrap_or_else(|| "nan".into()),
                r.error.as_deref().unwrap_or("")
            )
        })
        .collect();
    mio::write_csv(
        cfg.outdir.join("sweep.csv"),
        &hash,
        "m,epsilon,layers,solved_regions,e2_percent,error",
        &csv_rows,
    )?;
    mio::write_json(cfg.outdir.join("sweep.json"), &results)?;
    for r in &results {
        match (&r.e2_percent, &r.error) {
            (Some(e), _) => println!(
                "sweep: M={} eps={} layers={} e2={:.4}%",
                r.m, r.epsilon, r.layers, e
            ),
            (None, Some(err)) => {
                println!("sweep: M={} eps={} layers={} FAILED: {err}", r.m, r.epsilon, r.layers)
            }
            _ => unreachable!(),
        }
    }
    Ok(())
}

fn cmd_decay(cfg: &RunConfig, depths: &[usize]) -> Result<()> {
    let hash = prepare_outdir(cfg)?;
    let problem = build_problem(cfg)?;
    let c = problem.coarse.m / 2;
    let table = boundary_decay_study(&problem.coarse, &problem.kappa, &problem.map, (c, c), depths)?;
    let rows: Vec<String> = table
        .layers
        .iter()
        .zip(&table.delta)
        .map(|(l, d)| format!("{l},{d:.17e}"))
        .collect();
    mio::write_csv(cfg.outdir.join("decay.csv"), &hash, "layers,delta", &rows)?;
    for (l, d) in table.layers.iter().zip(&table.delta) {
        println!("decay: layers={l} delta={d:.6e}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    match &cli.cmd {
        Cmd::SolveFine(a) => cmd_solve_fine(&a.resolve()?).map(|_| 0),
        Cmd::Upscale(a) => cmd_upscale(&a.resolve()?).map(|_| 0),
        Cmd::SolveCoarse(a) => cmd_solve_coarse(&a.resolve()?).map(|_| 0),
        Cmd::Compare { cfg, check } => cmd_compare(&cfg.resolve()?, *check),
        Cmd::Spectra(a) => cmd_spectra(&a.resolve()?).map(|_| 0),
        Cmd::Sweep { cfg, rows } => cmd_sweep(&cfg.resolve()?, rows).map(|_| 0),
        Cmd::Decay { cfg, depths } => cmd_decay(&cfg.resolve()?, depths).map(|_| 0),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own message; usage errors are validation errors
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().expect("stderr");
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
