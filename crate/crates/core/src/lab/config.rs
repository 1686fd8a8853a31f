use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LogGrid;
use crate::error::{LabError, Result};
use crate::fbm::HurstIndex;
use crate::sde::{FieldKind, FieldParams, SdeProblem, SolveMode, VectorFieldSet};

/// How the driving fBm is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    /// Wiener increments on a refined grid mapped through the Volterra kernel.
    Volterra,
    /// Exact Cholesky sampling on the solver grid.
    Cholesky,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(LabError::Config(format!("unknown format {other:?}, expected csv or json"))),
        }
    }
}

/// `[problem]`: the equation and its horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSection {
    pub mode: SolveMode,
    pub field: FieldKind,
    pub m: usize,
    pub hurst: f64,
    pub t: f64,
    pub a: Vec<f64>,
    pub sigma: f64,
    pub base: f64,
    pub amp: f64,
    pub shift: f64,
    pub drift: f64,
}

impl Default for ProblemSection {
    fn default() -> Self {
        let p = FieldParams::default();
        Self {
            mode: SolveMode::YoungMultid,
            field: FieldKind::TanhNet,
            m: 2,
            hurst: 0.75,
            t: 1.0,
            a: vec![0.0, 0.0],
            sigma: p.sigma,
            base: p.base,
            amp: p.amp,
            shift: p.shift,
            drift: p.drift,
        }
    }
}

impl ProblemSection {
    pub fn params(&self) -> FieldParams {
        FieldParams {
            sigma: self.sigma,
            base: self.base,
            amp: self.amp,
            shift: self.shift,
            drift: self.drift,
        }
    }

    pub fn hurst_index(&self) -> Result<HurstIndex> {
        HurstIndex::new(self.hurst)
    }

    pub fn build(&self) -> Result<SdeProblem> {
        let fields = VectorFieldSet::new(self.field, self.m, self.params())?;
        SdeProblem::new(self.a.clone(), fields, self.hurst_index()?, self.mode)
    }
}

/// `[numerics]`: sample sizes, grids, seeds and fitting choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSection {
    pub n_paths: usize,
    pub seed: u64,
    pub driver: DriverKind,
    /// Solver cells on `[0, t]`.
    pub cells: usize,
    /// Wiener cells per solver cell for the Volterra driver.
    pub refine: usize,
    pub bootstrap: usize,
    pub level: f64,
    pub bandwidth: Option<Vec<f64>>,
    /// Density grid points per axis.
    pub grid_points: usize,
    /// Density grid half width in units of `t^H` (times `σ` for additive problems).
    pub grid_half_width: f64,
    /// Fit region radius in the same units.
    pub region_factor: f64,
    /// Hold-out check radius for two-sided fits. Beyond the fit radius the
    /// best-mass curves are extrapolated and need not hold.
    pub check_factor: f64,
    pub c2_grid: LogGrid,
    /// Factor applied to fitted `c_1` before checking it on fresh data
    /// (its inverse for upper bounds).
    pub margin: f64,
    /// Also check the fitted lower bound at `t/2`.
    pub cross_time: bool,
    pub n_outer: usize,
    pub g_cells: usize,
    pub theta_nodes: usize,
    pub bins: usize,
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            seed: 1,
            driver: DriverKind::Volterra,
            cells: 64,
            refine: 4,
            bootstrap: 200,
            level: 0.99,
            bandwidth: None,
            grid_points: 121,
            grid_half_width: 8.0,
            region_factor: 2.0,
            check_factor: 2.0,
            c2_grid: LogGrid {
                min: 0.01,
                max: 10.0,
                count: 61,
            },
            margin: 0.8,
            cross_time: true,
            n_outer: 10_000,
            g_cells: 64,
            theta_nodes: 16,
            bins: 20,
        }
    }
}

/// `[output]`: where artifacts go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            format: OutputFormat::Json,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub numerics: NumericsSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_numerics()?;
        self.problem.build()?;
        Ok(())
    }

    /// Checks everything except the consistency of the equation itself, for
    /// commands that only use `hurst` and `t` from `[problem]`.
    pub fn validate_numerics(&self) -> Result<()> {
        let (p, n) = (&self.problem, &self.numerics);
        if !(p.t > 0.0 && p.t <= 1.0) {
            return Err(LabError::Config(format!("t must lie in (0, 1], got {}", p.t)));
        }
        let counts = [
            ("n_paths", n.n_paths),
            ("cells", n.cells),
            ("refine", n.refine),
            ("grid_points", n.grid_points),
            ("n_outer", n.n_outer),
            ("g_cells", n.g_cells),
            ("theta_nodes", n.theta_nodes),
            ("bins", n.bins),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(LabError::Config(format!("{name} must be at least 1")));
        }
        if !(n.level > 0.0 && n.level < 1.0) || !(n.margin > 0.0 && n.margin <= 1.0) {
            return Err(LabError::Config("level must lie in (0, 1) and margin in (0, 1]".into()));
        }
        if !(n.region_factor > 0.0 && n.check_factor >= n.region_factor && n.grid_half_width >= n.check_factor) {
            return Err(LabError::Config("need 0 < region_factor <= check_factor <= grid_half_width".into()));
        }
        n.c2_grid.values()?;
        p.hurst_index()?;
        Ok(())
    }

    /// Lowercase hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[problem]
mode = "multiplicative-1d"
field = "sin_shift"
m = 1
hurst = 0.7
t = 1.0
a = [0.0]

[numerics]
n_paths = 2000
seed = 9

[output]
format = "csv"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.problem.mode, SolveMode::Multiplicative1d);
        assert_eq!(cfg.numerics.n_paths, 2000);
        assert_eq!(cfg.numerics.bootstrap, 200);
        assert_eq!(cfg.output.format, OutputFormat::Csv);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        let bad = SAMPLE.replace("seed = 9", "seed = 9\nsede = 3");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(LabError::Config(_))));
        let bad = format!("{SAMPLE}\n[extra]\nx = 1\n");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("t = 1.0", "t = 1.5")).is_err());
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("n_paths = 2000", "n_paths = 0")).is_err());
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("a = [0.0]", "a = [0.0, 1.0]")).is_err());
        let mut other = ExperimentConfig::from_toml(SAMPLE).unwrap();
        other.numerics.seed = 10;
        assert_ne!(other.hash(), ExperimentConfig::from_toml(SAMPLE).unwrap().hash());
    }
}
