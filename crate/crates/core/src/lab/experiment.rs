use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::{
    check_lower_bound, check_upper_bound, fit_lower_bound, fit_upper_bound, kde_estimate, BoundFit, BoundReport, DensityGrid, DriverKind,
    ExperimentConfig, GaussianShape, KdeConfig, KdeEstimate, Margin, NumericsSection, OutputFormat,
};
use crate::error::{LabError, Result};
use crate::fbm::{wiener_path, CholeskySampler, HurstIndex, KernelTable, SamplePath, TimeGrid, VolterraOperator};
use crate::nv_density::{additive_moments, density_bounds_from_g, g_bracket, g_estimate, DensityBounds, GEstimate, GEstimateConfig};
use crate::rng::StreamFamily;
use crate::sde::{solve_additive_ode, solve_doss_sussmann, young_euler_full, FlowMap, SdeProblem, SolveMode};

/// Half width of the tabulated Doss–Sussmann flow.
const FLOW_HALF_WIDTH: f64 = 8.0;

enum Driver {
    Volterra { op: VolterraOperator, w_grid: TimeGrid },
    Cholesky(CholeskySampler),
}

impl Driver {
    fn new(h: HurstIndex, t: f64, numerics: &NumericsSection) -> Result<Self> {
        let out = TimeGrid::uniform(numerics.cells, t)?;
        Ok(match numerics.driver {
            DriverKind::Volterra => {
                let table = KernelTable::new(h, t)?;
                let w_grid = out.refine(numerics.refine);
                Driver::Volterra {
                    op: VolterraOperator::new(&table, &w_grid, &out)?,
                    w_grid,
                }
            }
            DriverKind::Cholesky => Driver::Cholesky(CholeskySampler::new(h, &out)?),
        })
    }

    fn path(&self, d: usize, family: &StreamFamily, index: u64) -> Result<SamplePath> {
        match self {
            Driver::Volterra { op, w_grid } => op.apply(&wiener_path(w_grid, d, family, index)),
            Driver::Cholesky(s) => Ok(s.sample_one(d, family, index)),
        }
    }
}

struct Simulator<'a> {
    problem: &'a SdeProblem,
    driver: Driver,
    flow: Option<FlowMap>,
}

impl<'a> Simulator<'a> {
    fn new(problem: &'a SdeProblem, t: f64, numerics: &NumericsSection) -> Result<Self> {
        let flow = match problem.mode {
            SolveMode::Multiplicative1d => Some(FlowMap::new(&problem.fields, problem.a[0], FLOW_HALF_WIDTH)?),
            _ => None,
        };
        Ok(Self {
            problem,
            driver: Driver::new(problem.h, t, numerics)?,
            flow,
        })
    }

    fn path(&self, family: &StreamFamily, index: u64) -> Result<SamplePath> {
        let (p, f) = (self.problem, &self.problem.fields);
        let b = self.driver.path(f.d(), family, index)?;
        match (p.mode, &self.flow) {
            (SolveMode::Additive1d, _) => solve_additive_ode(p.a[0], |x| f.v0(x), f.params().sigma, &b),
            (SolveMode::Multiplicative1d, Some(flow)) => solve_doss_sussmann(f, p.a[0], flow, &b),
            _ => young_euler_full(f, &p.a, &b),
        }
    }
}

/// `n` independent fBm paths of dimension `d` from the configured driver.
pub fn simulate_fbm(
    h: HurstIndex,
    d: usize,
    t: f64,
    n: usize,
    numerics: &NumericsSection,
    family: &StreamFamily,
) -> Result<Vec<SamplePath>> {
    let driver = Driver::new(h, t, numerics)?;
    (0..n as u64).into_par_iter().map(|i| driver.path(d, family, i)).collect()
}

/// `n` independent solution paths: driver, then the solver of the problem's mode.
pub fn simulate_paths(
    problem: &SdeProblem,
    t: f64,
    n: usize,
    numerics: &NumericsSection,
    family: &StreamFamily,
) -> Result<Vec<SamplePath>> {
    let sim = Simulator::new(problem, t, numerics)?;
    (0..n as u64).into_par_iter().map(|i| sim.path(family, i)).collect()
}

/// `X_t` for `n` independent paths.
pub fn simulate_terminal(
    problem: &SdeProblem,
    t: f64,
    n: usize,
    numerics: &NumericsSection,
    family: &StreamFamily,
) -> Result<Vec<Vec<f64>>> {
    let sim = Simulator::new(problem, t, numerics)?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| Ok(sim.path(family, i)?.terminal().to_vec()))
        .collect()
}

/// Report plus the tables behind it.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: BoundReport,
    pub kde: KdeEstimate,
    pub lower_fit: Option<BoundFit>,
    pub upper_fit: Option<BoundFit>,
    /// Hold-out estimate of two-sided runs, or the `t/2` estimate of cross-time runs.
    pub check_kde: Option<KdeEstimate>,
    pub density_bounds: Option<DensityBounds>,
    pub g: Option<GEstimate>,
}

/// Runs the pipeline of the configured mode; reproducible from `(config, seed)`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    let family = StreamFamily::new(cfg.numerics.seed);
    let mut report = BoundReport::new(cfg.hash(), cfg.numerics.seed);
    report.metric("n_paths", cfg.numerics.n_paths as f64);
    let mut outcome = match problem.mode {
        SolveMode::YoungMultid => lower_bound_run(cfg, &problem, &family, report)?,
        SolveMode::Multiplicative1d => two_sided_run(cfg, &problem, &family, report)?,
        SolveMode::Additive1d => additive_run(cfg, &problem, &family, report)?,
    };
    outcome.report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(outcome)
}

fn kde_config(n: &NumericsSection) -> KdeConfig {
    KdeConfig {
        bandwidth: n.bandwidth.clone(),
        resamples: n.bootstrap,
        level: n.level,
    }
}

fn kde_of(samples: &[Vec<f64>], center: &[f64], half_width: f64, n: &NumericsSection, family: &StreamFamily) -> Result<KdeEstimate> {
    let grid = DensityGrid::centered(center, half_width, n.grid_points)?;
    kde_estimate(samples, &grid, &kde_config(n), family).map_err(|e| e.at("kde"))
}

fn record_fit(report: &mut BoundReport, prefix: &str, fit: &BoundFit) {
    report.metric(&format!("{prefix}_c1"), fit.best_c1);
    report.metric(&format!("{prefix}_c2"), fit.best_c2);
    report.metric(&format!("{prefix}_region_points"), fit.region_points as f64);
    report.metric(
        &format!("{prefix}_frontier_positive"),
        fit.c1.iter().filter(|&&c| c > 0.0).count() as f64,
    );
}

fn lower_bound_run(
    cfg: &ExperimentConfig,
    problem: &SdeProblem,
    family: &StreamFamily,
    mut report: BoundReport,
) -> Result<ExperimentOutcome> {
    let (n, t, h) = (&cfg.numerics, cfg.problem.t, problem.h);
    let c2_grid = n.c2_grid.values()?;
    let xs = simulate_terminal(problem, t, n.n_paths, n, &family.fork(1)).map_err(|e| e.at("simulate"))?;
    let kde = kde_of(&xs, &problem.a, n.grid_half_width * t.powf(h.value()), n, &family.fork(2))?;
    let fit = fit_lower_bound(&kde, &problem.a, &GaussianShape::new(t, h, n.region_factor)?, &c2_grid)?;
    record_fit(&mut report, "lower", &fit);
    report.metric("kde_integral", kde.integral());
    report.check(Margin::at_least("lower_c1_positive", fit.best_c1, f64::MIN_POSITIVE));
    let mut check_kde = None;
    if n.cross_time {
        let half = 0.5 * t;
        let xs = simulate_terminal(problem, half, n.n_paths, n, &family.fork(3)).map_err(|e| e.at("simulate"))?;
        let k2 = kde_of(&xs, &problem.a, n.grid_half_width * half.powf(h.value()), n, &family.fork(4))?;
        let check = check_lower_bound(
            &k2,
            &problem.a,
            &GaussianShape::new(half, h, n.region_factor)?,
            n.margin * fit.best_c1,
            fit.best_c2,
        );
        report.metric("cross_time_points", check.points as f64);
        report.metric("cross_time_min_ratio", check.min_ratio);
        report.check(Margin::at_most("cross_time_violations", check.violations as f64, 0.0));
        check_kde = Some(k2);
    }
    Ok(ExperimentOutcome {
        report,
        kde,
        lower_fit: Some(fit),
        upper_fit: None,
        check_kde,
        density_bounds: None,
        g: None,
    })
}

/// Maximum fraction of hold-out grid points where a fitted curve crosses its band.
pub const MAX_VIOLATION_FRACTION: f64 = 0.01;

fn two_sided_run(
    cfg: &ExperimentConfig,
    problem: &SdeProblem,
    family: &StreamFamily,
    mut report: BoundReport,
) -> Result<ExperimentOutcome> {
    let (n, t, h) = (&cfg.numerics, cfg.problem.t, problem.h);
    let c2_grid = n.c2_grid.values()?;
    let xs = simulate_terminal(problem, t, n.n_paths, n, &family.fork(1)).map_err(|e| e.at("simulate"))?;
    let (fit_half, hold_half) = xs.split_at(xs.len() / 2);
    let width = n.grid_half_width * t.powf(h.value());
    let kde = kde_of(fit_half, &problem.a, width, n, &family.fork(2))?;
    let hold = kde_of(hold_half, &problem.a, width, n, &family.fork(3))?;
    let shape = GaussianShape::new(t, h, n.region_factor)?;
    let lower = fit_lower_bound(&kde, &problem.a, &shape, &c2_grid)?;
    let upper = fit_upper_bound(&kde, &problem.a, &shape, &c2_grid)?;
    record_fit(&mut report, "lower", &lower);
    record_fit(&mut report, "upper", &upper);
    let check_shape = GaussianShape::new(t, h, n.check_factor)?;
    let lc = check_lower_bound(&hold, &problem.a, &check_shape, n.margin * lower.best_c1, lower.best_c2);
    let uc = check_upper_bound(&hold, &problem.a, &check_shape, upper.best_c1 / n.margin, upper.best_c2);
    report.metric("holdout_points", lc.points as f64);
    report.metric("holdout_lower_violations", lc.violations as f64);
    report.metric("holdout_upper_violations", uc.violations as f64);
    report.metric("holdout_lower_min_ratio", lc.min_ratio);
    report.metric("holdout_upper_min_ratio", uc.min_ratio);
    report.check(Margin::at_least("lower_c1_positive", lower.best_c1, f64::MIN_POSITIVE));
    report.check(Margin::at_most(
        "holdout_violation_fraction",
        (lc.violations + uc.violations) as f64 / lc.points.max(1) as f64,
        MAX_VIOLATION_FRACTION,
    ));
    Ok(ExperimentOutcome {
        report,
        kde,
        lower_fit: Some(lower),
        upper_fit: Some(upper),
        check_kde: Some(hold),
        density_bounds: None,
        g: None,
    })
}

/// Fraction of grid points in the region required between the bound curves.
pub const MIN_SANDWICH_FRACTION: f64 = 0.99;

fn additive_run(cfg: &ExperimentConfig, problem: &SdeProblem, family: &StreamFamily, mut report: BoundReport) -> Result<ExperimentOutcome> {
    let (n, t, h) = (&cfg.numerics, cfg.problem.t, problem.h);
    let sigma = problem.fields.params().sigma.abs();
    let gcfg = GEstimateConfig {
        cells: n.g_cells,
        theta_nodes: n.theta_nodes,
        bins: n.bins,
        ..Default::default()
    };
    let g = g_estimate(problem, t, n.n_outer, &gcfg, &family.fork(1)).map_err(|e| e.at("g_estimate"))?;
    let c1 = g.g_hat.iter().zip(&g.se).map(|(g, s)| g - 3.0 * s).fold(f64::INFINITY, f64::min);
    let c2 = g.g_hat.iter().zip(&g.se).map(|(g, s)| g + 3.0 * s).fold(0.0, f64::max);
    let (lo, hi) = g_bracket(sigma, t, h, problem.fields.v0_deriv_bound());
    report.metric("g_c1", c1);
    report.metric("g_c2", c2);
    report.metric("g_reference", g.reference);
    report.metric("n_outer", n.n_outer as f64);
    report.check(Margin::at_most(
        "g_bracket_violations",
        g.violations(0.9 * lo, 1.1 * hi) as f64,
        0.0,
    ));
    let (mean, e_abs) = additive_moments(problem, t, n.n_paths, n.cells, &family.fork(2)).map_err(|e| e.at("moments"))?;
    report.metric("mean", mean);
    report.metric("e_abs_f", e_abs);
    let xs: Vec<Vec<f64>> = simulate_terminal(problem, t, n.n_paths, n, &family.fork(3))
        .map_err(|e| e.at("simulate"))?
        .into_iter()
        .map(|x| vec![x[0] - mean])
        .collect();
    let scale = sigma * t.powf(h.value());
    let kde = kde_of(&xs, &[0.0], n.grid_half_width * scale, n, &family.fork(4))?;
    let z: Vec<f64> = (0..kde.grid.len()).map(|k| kde.grid.point(k)[0]).collect();
    let bounds = density_bounds_from_g(c1.max(f64::MIN_POSITIVE), c2.max(c1), e_abs, &z)?;
    let region: Vec<usize> = (0..z.len())
        .filter(|&k| z[k].abs() <= n.region_factor * scale * (1.0 + 1e-12))
        .collect();
    let inside = region
        .iter()
        .filter(|&&k| bounds.lower[k] <= kde.values[k] && kde.values[k] <= bounds.upper[k])
        .count();
    report.metric("sandwich_points", region.len() as f64);
    report.check(Margin::at_least("g_c1_positive", c1, f64::MIN_POSITIVE));
    report.check(Margin::at_least(
        "sandwich_fraction",
        inside as f64 / region.len().max(1) as f64,
        MIN_SANDWICH_FRACTION,
    ));
    Ok(ExperimentOutcome {
        report,
        kde,
        lower_fit: None,
        upper_fit: None,
        check_kde: None,
        density_bounds: Some(bounds),
        g: Some(g),
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes the report (`report.json` or `report.csv`) and the CSV tables of `outcome` into `dir`.
pub fn write_artifacts(outcome: &ExperimentOutcome, dir: &Path, format: OutputFormat) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    match format {
        OutputFormat::Json => std::fs::write(dir.join("report.json"), outcome.report.to_json()? + "\n")?,
        OutputFormat::Csv => outcome.report.write_csv(create(dir, "report.csv")?)?,
    }
    outcome.kde.write_csv(create(dir, "kde.csv")?)?;
    if let Some(k) = &outcome.check_kde {
        k.write_csv(create(dir, "kde_check.csv")?)?;
    }
    if let Some(f) = &outcome.lower_fit {
        f.write_csv(create(dir, "frontier_lower.csv")?)?;
    }
    if let Some(f) = &outcome.upper_fit {
        f.write_csv(create(dir, "frontier_upper.csv")?)?;
    }
    if let Some(b) = &outcome.density_bounds {
        b.write_csv(&outcome.kde.values, create(dir, "bounds.csv")?)?;
    }
    if let Some(g) = &outcome.g {
        g.write_csv(create(dir, "g_estimate.csv")?)?;
    }
    Ok(())
}

impl ExperimentOutcome {
    /// Writes artifacts to the configured output directory, if any.
    pub fn persist(&self, cfg: &ExperimentConfig) -> Result<()> {
        match &cfg.output.dir {
            Some(dir) => write_artifacts(self, dir, cfg.output.format),
            None => Err(LabError::Config("no output directory configured".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::LogGrid;
    use crate::sde::FieldKind;

    fn smoke() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.numerics.n_paths = 100;
        cfg.numerics.cells = 16;
        cfg.numerics.refine = 2;
        cfg.numerics.grid_points = 41;
        cfg.numerics.c2_grid = LogGrid {
            min: 0.05,
            max: 5.0,
            count: 9,
        };
        cfg
    }

    #[test]
    fn smoke_run_is_fast_and_deterministic() {
        let cfg = smoke();
        let start = Instant::now();
        let a = run_experiment(&cfg).unwrap();
        assert!(start.elapsed().as_secs_f64() < 10.0);
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
        assert_eq!(a.report.metrics["n_paths"], 100.0);
        let dir = tempfile::tempdir().unwrap();
        write_artifacts(&a, dir.path(), OutputFormat::Json).unwrap();
        let first = std::fs::read(dir.path().join("report.json")).unwrap();
        write_artifacts(&b, dir.path(), OutputFormat::Json).unwrap();
        assert_eq!(first, std::fs::read(dir.path().join("report.json")).unwrap());
        for f in ["kde.csv", "kde_check.csv", "frontier_lower.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn drivers_agree_on_the_law() {
        let mut cfg = smoke();
        cfg.problem.m = 1;
        cfg.problem.a = vec![0.0];
        cfg.problem.field = FieldKind::Const;
        let p = cfg.problem.build().unwrap();
        cfg.numerics.refine = 8;
        let v = simulate_terminal(&p, 1.0, 4000, &cfg.numerics, &StreamFamily::new(3)).unwrap();
        cfg.numerics.driver = DriverKind::Cholesky;
        let c = simulate_terminal(&p, 1.0, 4000, &cfg.numerics, &StreamFamily::new(4)).unwrap();
        let (v, c): (Vec<f64>, Vec<f64>) = (v.iter().map(|x| x[0]).collect(), c.iter().map(|x| x[0]).collect());
        assert!(crate::stats::ks_two_sample(&v, &c).passes(0.01));
    }

    #[test]
    fn stage_errors_are_attributed() {
        let mut cfg = smoke();
        cfg.numerics.n_paths = 50;
        cfg.numerics.cross_time = false;
        let err = run_experiment(&cfg).unwrap_err().to_string();
        assert!(err.starts_with("kde:"), "{err}");
    }
}
