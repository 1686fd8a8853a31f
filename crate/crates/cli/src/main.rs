//! `fbm-lab`: command-line front end of the laboratory.

use std::io::{ErrorKind, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fbm_lab::fbm::{write_paths_csv, CholeskySampler, KernelTable, TimeGrid};
use fbm_lab::girsanov::{fit_domination, write_xi_csv, GirsanovSetup};
use fbm_lab::hilbert::{parse_matrix, qp_box_inf, qp_box_search, random_admissible, QpSearchConfig};
use fbm_lab::lab::{run_experiment, simulate_fbm, simulate_paths, write_artifacts, BoundReport, ExperimentConfig, Margin, OutputFormat};
use fbm_lab::nv_density::{g_bracket, g_estimate, GEstimateConfig};
use fbm_lab::rng::StreamFamily;
use fbm_lab::scheme::{build_partition, calibrate_grr, grr_ratio, remainder_ratio, EulerSplit, EulerSplitter, GrrFunctional};
use fbm_lab::sde::SolveMode;
use fbm_lab::stats::{mean_se, variance, variance_se};
use fbm_lab::{LabError, Result};

#[derive(Parser)]
#[command(
    name = "fbm-lab",
    version,
    about = "Fractional Brownian motion and Gaussian density bounds laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Hurst parameter, overrides `problem.hurst`.
    #[arg(long, global = true)]
    hurst: Option<f64>,
    /// Time horizon, overrides `problem.t`.
    #[arg(long, global = true)]
    t: Option<f64>,
    /// Number of paths, overrides `numerics.n_paths`.
    #[arg(long, global = true)]
    n_paths: Option<usize>,
    /// Master seed, overrides `numerics.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with `[problem]`, `[numerics]` and `[output]` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; without it the result goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `csv` or `json`.
    #[arg(long, global = true, value_parser = ["csv", "json"])]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample fBm paths with the configured driver.
    Simulate {
        /// Number of independent coordinates.
        #[arg(long, default_value_t = 1)]
        dim: usize,
    },
    /// Solve the configured equation and write its paths.
    Solve,
    /// Tabulate the Volterra kernel `K(t, s)` and its cumulative energy.
    Kernel,
    /// Build the equal-energy partition of `[0, t]`.
    Partition {
        #[arg(long, default_value_t = 16)]
        n: usize,
    },
    /// Split the Euler solution into Wiener sums and remainders.
    Split {
        #[arg(long, default_value_t = 16)]
        n: usize,
    },
    /// Monte Carlo check of `E[ξ] = 1` and the domination constant.
    GirsanovCheck,
    /// Estimate `g(F)` for the additive equation.
    GEstimate,
    /// Full density pipeline: simulate, KDE, fit and check Gaussian bounds.
    DensityCheck,
    /// Compare the corner value of the box bilinear program with a multi-start search.
    QpVerify {
        /// Matrix file: `n` then `n` rows; random admissible matrices if absent.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
    },
    /// Calibrate the GRR constant on one batch and check it on another.
    GrrCheck {
        #[arg(long, default_value_t = 0.6)]
        gamma: f64,
        #[arg(long, default_value_t = 4)]
        p: u32,
    },
}

/// A report and the CSV tables behind it, first table is the primary one.
struct Output {
    report: BoundReport,
    tables: Vec<(&'static str, Vec<u8>)>,
}

fn load_config(c: &Common, needs_problem: bool) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(h) = c.hurst {
        cfg.problem.hurst = h;
    }
    if let Some(t) = c.t {
        cfg.problem.t = t;
    }
    if let Some(n) = c.n_paths {
        cfg.numerics.n_paths = n;
    }
    if let Some(s) = c.seed {
        cfg.numerics.seed = s;
    }
    if let Some(dir) = &c.out {
        cfg.output.dir = Some(dir.clone());
    }
    if let Some(f) = &c.format {
        cfg.output.format = OutputFormat::parse(f)?;
    }
    if needs_problem {
        cfg.validate()?;
    } else {
        cfg.validate_numerics()?;
    }
    Ok(cfg)
}

fn csv_bytes<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn simulate(cfg: &ExperimentConfig, dim: usize) -> Result<Output> {
    let (p, n) = (&cfg.problem, &cfg.numerics);
    let h = p.hurst_index()?;
    let paths = simulate_fbm(h, dim, p.t, n.n_paths, n, &StreamFamily::new(n.seed))?;
    let mut report = BoundReport::new(cfg.hash(), n.seed);
    let terminal: Vec<f64> = paths.iter().map(|x| x.terminal()[0]).collect();
    let target = p.t.powf(h.two_h());
    report.metric("n_paths", n.n_paths as f64);
    report.metric("terminal_variance", variance(&terminal));
    report.metric("target_variance", target);
    if terminal.len() > 2 {
        let z = (variance(&terminal) - target).abs() / variance_se(&terminal);
        report.check(Margin::at_most("variance_standard_error_distance", z, 4.0));
    }
    let table = csv_bytes(|b| write_paths_csv(&paths, b))?;
    Ok(Output {
        report,
        tables: vec![("paths", table)],
    })
}

fn solve(cfg: &ExperimentConfig) -> Result<Output> {
    let problem = cfg.problem.build()?;
    let n = &cfg.numerics;
    let paths = simulate_paths(&problem, cfg.problem.t, n.n_paths, n, &StreamFamily::new(n.seed))?;
    let mut report = BoundReport::new(cfg.hash(), n.seed);
    report.metric("n_paths", n.n_paths as f64);
    for c in 0..problem.fields.m() {
        let v: Vec<f64> = paths.iter().map(|x| x.terminal()[c]).collect();
        report.metric(&format!("terminal_mean_{c}"), mean_se(&v).0);
    }
    let table = csv_bytes(|b| write_paths_csv(&paths, b))?;
    Ok(Output {
        report,
        tables: vec![("paths", table)],
    })
}

fn kernel(cfg: &ExperimentConfig) -> Result<Output> {
    let (p, n) = (&cfg.problem, &cfg.numerics);
    let h = p.hurst_index()?;
    let table = KernelTable::new(h, p.t)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["s", "kernel", "energy"])?;
    for k in 0..n.cells {
        // Cell midpoints: the kernel can be singular at both ends.
        let s = p.t * (k as f64 + 0.5) / n.cells as f64;
        w.write_record([
            s.to_string(),
            table.kernel_k(p.t, s)?.to_string(),
            table.kernel_energy(p.t, 0.0, s)?.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
    let mut report = BoundReport::new(cfg.hash(), n.seed);
    let rel = (table.kernel_energy(p.t, 0.0, p.t)? / p.t.powf(h.two_h()) - 1.0).abs();
    report.metric("calibration_residual", table.calibration_residual());
    report.check(Margin::at_most("energy_identity_relative_error", rel, 1e-6));
    Ok(Output {
        report,
        tables: vec![("kernel", bytes)],
    })
}

fn partition(cfg: &ExperimentConfig, cells: usize) -> Result<Output> {
    let p = &cfg.problem;
    let part = build_partition(p.t, cells, &KernelTable::new(p.hurst_index()?, p.t)?)?;
    let mut report = BoundReport::new(cfg.hash(), cfg.numerics.seed);
    report.metric("sigma_n_sq", part.sigma_n_sq);
    report.metric("mesh", part.mesh());
    report.metric("scaled_mesh", part.scaled_mesh());
    report.check(Margin::at_most("max_energy_error", part.max_energy_error(), 1e-6));
    let table = csv_bytes(|b| part.write_csv(b))?;
    Ok(Output {
        report,
        tables: vec![("partition", table)],
    })
}

fn split(cfg: &ExperimentConfig, cells: usize) -> Result<Output> {
    let problem = cfg.problem.build()?;
    let (p, n) = (&cfg.problem, &cfg.numerics);
    let table = KernelTable::new(problem.h, p.t)?;
    let splitter = EulerSplitter::new(&table, &build_partition(p.t, cells, &table)?, n.refine)?;
    let family = StreamFamily::new(n.seed);
    let ratio = remainder_ratio(&splitter, &problem.fields, &problem.a, &family, n.n_paths)?;
    let splits = (0..n.n_paths as u64)
        .map(|i| {
            let w = fbm_lab::fbm::wiener_path(splitter.fine_grid(), problem.fields.d(), &family, i);
            splitter.split(&w, &problem.fields, &problem.a)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = BoundReport::new(cfg.hash(), n.seed);
    report.metric("remainder_ratio", ratio.ratio);
    report.metric("cell_remainder_ratio", ratio.cell_ratio);
    report.check(Margin::at_most("telescoping_error", ratio.max_telescoping_error, 1e-10));
    let table = csv_bytes(|b| EulerSplit::write_csv(&splits, b))?;
    Ok(Output {
        report,
        tables: vec![("split", table)],
    })
}

fn girsanov_check(cfg: &ExperimentConfig) -> Result<Output> {
    let problem = cfg.problem.build()?;
    let (p, n) = (&cfg.problem, &cfg.numerics);
    let setup = GirsanovSetup::new(problem.fields.clone(), problem.a[0], problem.h, p.t, n.cells)?;
    let batch = setup.batch(&StreamFamily::new(n.seed), 0, n.n_paths)?;
    let xi: Vec<f64> = batch.iter().map(|s| s.density.xi).collect();
    let (mean, se) = mean_se(&xi);
    let mut report = BoundReport::new(cfg.hash(), n.seed);
    report.metric("mean_xi", mean);
    report.metric("se_xi", se);
    report.metric("capped", batch.iter().filter(|s| s.density.capped).count() as f64);
    report.check(Margin::at_most(
        "mean_standard_error_distance",
        (mean - 1.0).abs() / se.max(f64::MIN_POSITIVE),
        3.0,
    ));
    if batch.len() >= 2 {
        let (fit, hold) = batch.split_at(batch.len() / 2);
        let dom = fit_domination(fit, hold, p.hurst, 1.1);
        report.metric("domination_constant", dom.c_v);
        report.metric("domination_holdout_max", dom.holdout_max_ratio);
        report.check(Margin::at_most("domination_violations", dom.violations as f64, 0.0));
    }
    let densities: Vec<_> = batch.iter().map(|s| s.density).collect();
    let table = csv_bytes(|b| write_xi_csv(&densities, b))?;
    Ok(Output {
        report,
        tables: vec![("xi", table)],
    })
}

fn g_estimate_cmd(cfg: &ExperimentConfig) -> Result<Output> {
    let problem = cfg.problem.build()?;
    if problem.mode != SolveMode::Additive1d {
        return Err(LabError::Config("g-estimate needs mode = \"additive-1d\"".into()));
    }
    let (p, n) = (&cfg.problem, &cfg.numerics);
    let gcfg = GEstimateConfig {
        cells: n.g_cells,
        theta_nodes: n.theta_nodes,
        bins: n.bins,
        ..Default::default()
    };
    let g = g_estimate(&problem, p.t, n.n_outer, &gcfg, &StreamFamily::new(n.seed))?;
    let (lo, hi) = g_bracket(p.sigma, p.t, problem.h, problem.fields.v0_deriv_bound());
    let mut report = BoundReport::new(cfg.hash(), n.seed);
    report.metric("n_outer", n.n_outer as f64);
    report.metric("reference", g.reference);
    report.metric("bracket_lower", 0.9 * lo);
    report.metric("bracket_upper", 1.1 * hi);
    report.check(Margin::at_most("bracket_violations", g.violations(0.9 * lo, 1.1 * hi) as f64, 0.0));
    let table = csv_bytes(|b| g.write_csv(b))?;
    Ok(Output {
        report,
        tables: vec![("g_estimate", table)],
    })
}

fn qp_verify(cfg: &ExperimentConfig, matrix: Option<&PathBuf>, a: f64, b: f64) -> Result<Output> {
    let n = &cfg.numerics;
    let mut rng = StreamFamily::new(n.seed).stream(0);
    let matrices = match matrix {
        Some(path) => vec![parse_matrix(&std::fs::read_to_string(path)?)?],
        None => (0..n.n_paths).map(|i| random_admissible(&mut rng, 1 + i % 4)).collect(),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["trial", "n", "corner", "search", "gap"])?;
    let mut worst = f64::INFINITY;
    for (i, q) in matrices.iter().enumerate() {
        let corner = qp_box_inf(q, a, b)?;
        let found = qp_box_search(
            q,
            a,
            b,
            &QpSearchConfig {
                seed: n.seed.wrapping_add(i as u64),
                ..Default::default()
            },
        );
        worst = worst.min(found - corner);
        w.write_record([
            i.to_string(),
            q.nrows().to_string(),
            corner.to_string(),
            found.to_string(),
            (found - corner).to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
    let mut report = BoundReport::new(cfg.hash(), n.seed);
    report.metric("matrices", matrices.len() as f64);
    report.check(Margin::at_least("min_search_minus_corner", worst, -1e-6));
    Ok(Output {
        report,
        tables: vec![("qp", bytes)],
    })
}

fn grr_check(cfg: &ExperimentConfig, gamma: f64, p: u32) -> Result<Output> {
    let (pr, n) = (&cfg.problem, &cfg.numerics);
    let h = pr.hurst_index()?;
    let spec = GrrFunctional::new(gamma, p, 0.0, pr.t)?;
    spec.check_hurst(h.value())?;
    let grid = TimeGrid::uniform(n.cells * n.refine, pr.t)?;
    let paths = CholeskySampler::new(h, &grid)?.sample(1, 2 * n.n_paths, &StreamFamily::new(n.seed));
    let (fit, hold) = paths.split_at(n.n_paths);
    let cal = calibrate_grr(fit, hold, &spec, 1.1)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["path_id", "batch", "ratio"])?;
    for (i, path) in paths.iter().enumerate() {
        let batch = if i < n.n_paths { "fit" } else { "holdout" };
        w.write_record([i.to_string(), batch.to_string(), grr_ratio(path, &spec)?.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
    let mut report = BoundReport::new(cfg.hash(), n.seed);
    report.metric("constant", cal.constant);
    report.metric("analytic_constant", cal.analytic_constant);
    report.metric("fit_max_ratio", cal.fit_max_ratio);
    report.metric("holdout_max_ratio", cal.holdout_max_ratio);
    report.metric("analytic_violations", cal.analytic_violations as f64);
    report.check(Margin::at_most("holdout_violations", cal.violations as f64, 0.0));
    Ok(Output {
        report,
        tables: vec![("grr", bytes)],
    })
}

fn emit(cfg: &ExperimentConfig, out: Output) -> Result<()> {
    match &cfg.output.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            for (name, bytes) in &out.tables {
                std::fs::write(dir.join(format!("{name}.csv")), bytes)?;
            }
            match cfg.output.format {
                OutputFormat::Json => std::fs::write(dir.join("report.json"), out.report.to_json()? + "\n")?,
                OutputFormat::Csv => out.report.write_csv(std::fs::File::create(dir.join("report.csv"))?)?,
            }
        }
        None => match (cfg.output.format, out.tables.first()) {
            (OutputFormat::Csv, Some((_, bytes))) => std::io::stdout().lock().write_all(bytes)?,
            (OutputFormat::Csv, None) => out.report.write_csv(std::io::stdout().lock())?,
            (OutputFormat::Json, _) => print_json(&out.report)?,
        },
    }
    Ok(())
}

fn print_json(report: &BoundReport) -> Result<()> {
    writeln!(std::io::stdout().lock(), "{}", report.to_json()?)?;
    Ok(())
}

/// A reader closing the pipe early (`| head`) is not a failure.
fn broken_pipe(e: &LabError) -> bool {
    match e {
        LabError::Io(e) => e.kind() == ErrorKind::BrokenPipe,
        LabError::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(e) if e.kind() == ErrorKind::BrokenPipe),
        _ => false,
    }
}

fn run(cli: Cli) -> Result<bool> {
    let needs_problem = !matches!(
        cli.command,
        Command::Simulate { .. } | Command::Kernel | Command::Partition { .. } | Command::QpVerify { .. } | Command::GrrCheck { .. }
    );
    let cfg = load_config(&cli.common, needs_problem)?;
    if let Command::DensityCheck = cli.command {
        let outcome = run_experiment(&cfg)?;
        match &cfg.output.dir {
            Some(dir) => write_artifacts(&outcome, dir, cfg.output.format)?,
            None => match cfg.output.format {
                OutputFormat::Json => print_json(&outcome.report)?,
                OutputFormat::Csv => outcome.report.write_csv(std::io::stdout().lock())?,
            },
        }
        eprintln!("runtime {:.2}s", outcome.report.runtime_secs);
        return Ok(outcome.report.pass);
    }
    let out = match &cli.command {
        Command::Simulate { dim } => simulate(&cfg, *dim)?,
        Command::Solve => solve(&cfg)?,
        Command::Kernel => kernel(&cfg)?,
        Command::Partition { n } => partition(&cfg, *n)?,
        Command::Split { n } => split(&cfg, *n)?,
        Command::GirsanovCheck => girsanov_check(&cfg)?,
        Command::GEstimate => g_estimate_cmd(&cfg)?,
        Command::QpVerify { matrix, a, b } => qp_verify(&cfg, matrix.as_ref(), *a, *b)?,
        Command::GrrCheck { gamma, p } => grr_check(&cfg, *gamma, *p)?,
        Command::DensityCheck => unreachable!(),
    };
    let pass = out.report.pass;
    emit(&cfg, out)?;
    Ok(pass)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed");
            ExitCode::from(1)
        }
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
