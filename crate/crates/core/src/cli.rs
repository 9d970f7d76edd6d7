//! Command-line front end: a JSON experiment file, flag overrides on top, and
//! the `kernel`, `converge` and `verify` commands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::coefficients::{make_family, Family};
use crate::dump::write_kernel;
use crate::generator::build_generator;
use crate::harness::{default_time, run_campaign, CampaignConfig, ConvergenceReport, SchemeSet};
use crate::lattice::{Grid, DEFAULT_MAX_DIM};
use crate::propagator::{dirac_kernel, euler_kernel, expm_kernel, max_stable_dt, EulerStep, Scheme};
use crate::spectral::fourier_kernel;
use crate::verify::{run_suites, VerifyReport};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Semidiscrete,
    Euler,
    Spectral,
}

/// Everything an experiment needs; read from JSON, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub field: Family,
    pub half_width: f64,
    /// Horizons; empty means the diffusive default `0.25 L^2 / Sigma_0^2`.
    pub t: Vec<f64>,
    pub m_min: u32,
    pub m_max: u32,
    pub schemes: Vec<SchemeName>,
    pub out: PathBuf,
    pub seed: u64,
    pub max_dim: usize,
    pub only: Vec<String>,
    /// Multiplies every verification tolerance.
    pub tolerance_scale: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            field: Family::default_trig(),
            half_width: 1.0,
            t: Vec::new(),
            m_min: 4,
            m_max: 7,
            schemes: vec![SchemeName::Semidiscrete],
            out: PathBuf::from("out"),
            seed: 0,
            max_dim: DEFAULT_MAX_DIM,
            only: Vec::new(),
            tolerance_scale: 1.0,
        }
    }
}

/// Named coefficient families available from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FamilyPreset {
    Constant,
    Trig,
    Hoelder,
    Hoelder1,
    LogModulus,
}

impl FamilyPreset {
    pub fn family(self) -> Family {
        match self {
            FamilyPreset::Constant => Family::constant(1.0, 0.0),
            FamilyPreset::Trig => Family::default_trig(),
            FamilyPreset::Hoelder => Family::hoelder(0.5),
            FamilyPreset::Hoelder1 => Family::hoelder(1.0),
            FamilyPreset::LogModulus => Family::log_modulus(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "diffkernel",
    version,
    about = "Periodic diffusion kernels and their convergence under refinement"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write kernel CSVs and sidecars for every level, time and scheme.
    Kernel(Overrides),
    /// Run a convergence campaign and write its report as JSON and CSV.
    Converge(Overrides),
    /// Run the verification suites; exit 1 if any check fails.
    Verify(Overrides),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON experiment file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub m_min: Option<u32>,
    #[arg(long)]
    pub m_max: Option<u32>,
    /// Comma-separated horizons.
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyPreset>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub schemes: Option<Vec<SchemeName>>,
    /// Comma-separated verification suites.
    #[arg(long, value_delimiter = ',')]
    pub only: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest lattice dimension allowed.
    #[arg(long)]
    pub max_dim: Option<usize>,
    /// Multiplies every verification tolerance; 0 forces failures.
    #[arg(long)]
    pub tol_scale: Option<f64>,
}

impl Overrides {
    /// Loads the config file, if any, and applies the flags on top.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.out {
            config.out = v.clone();
        }
        if let Some(v) = self.m_min {
            config.m_min = v;
        }
        if let Some(v) = self.m_max {
            config.m_max = v;
        }
        if let Some(v) = &self.t {
            config.t = v.clone();
        }
        if let Some(v) = self.family {
            config.field = v.family();
        }
        if let Some(v) = &self.schemes {
            config.schemes = v.clone();
        }
        if let Some(v) = &self.only {
            config.only = v.clone();
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.max_dim {
            config.max_dim = v;
        }
        if let Some(v) = self.tol_scale {
            config.tolerance_scale = v;
        }
        Ok(config)
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.m_min > self.m_max {
            return Err(Error::Config(format!(
                "m_min {} exceeds m_max {}",
                self.m_min, self.m_max
            )));
        }
        if let Some(t) = self.t.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::Config(format!("time {t} is not a nonnegative number")));
        }
        make_family(&self.field, self.half_width)?;
        Grid::with_limit(self.m_max, self.half_width, self.max_dim)?;
        Ok(())
    }

    fn has(&self, scheme: SchemeName) -> bool {
        self.schemes.contains(&scheme)
    }
}

/// Writes `kernel_m{m}_t{i}_{scheme}.csv` and `.json` for every combination.
pub fn cmd_kernel(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let field = make_family(&config.field, config.half_width)?;
    if config.has(SchemeName::Spectral) && field.is_constant().is_none() {
        return Err(Error::Config("the spectral scheme needs a constant field".into()));
    }
    let mut written = Vec::new();
    for m in config.m_min..=config.m_max {
        let grid = Grid::with_limit(m, config.half_width, config.max_dim)?;
        let op = build_generator(&field, &grid)?;
        let times = if config.t.is_empty() {
            vec![default_time(&field, &grid)?]
        } else {
            config.t.clone()
        };
        for (i, &t) in times.iter().enumerate() {
            for scheme in &config.schemes {
                let kernel = match (scheme, t == 0.0) {
                    (SchemeName::Euler, true) => dirac_kernel(
                        &grid,
                        Scheme::Euler {
                            delta_t: max_stable_dt(&op),
                            n_steps: 0,
                        },
                    ),
                    (SchemeName::Euler, false) => euler_kernel(&op, t, EulerStep::for_horizon(&op, t)?)?,
                    (SchemeName::Semidiscrete, _) => expm_kernel(&op, t)?,
                    (SchemeName::Spectral, _) => {
                        let (vol, drift) = field.is_constant().expect("checked above");
                        fourier_kernel(vol.sqrt(), drift, &grid, t)?
                    }
                };
                let name = format!("kernel_m{m}_t{i}_{}", kernel.scheme.name());
                let (csv, json) = write_kernel(&kernel, &config.out, &name)?;
                written.extend([csv, json]);
            }
        }
    }
    Ok(written)
}

fn campaign(config: &ExperimentConfig, t: Option<f64>) -> CampaignConfig {
    CampaignConfig {
        family: config.field.clone(),
        half_width: config.half_width,
        t,
        m_min: config.m_min,
        m_max: config.m_max,
        schemes: SchemeSet {
            euler: config.has(SchemeName::Euler),
            spectral: config.has(SchemeName::Spectral),
        },
        max_dim: config.max_dim,
    }
}

/// Runs one campaign per horizon and writes `report_t{i}.json` and `.csv`.
pub fn cmd_converge(config: &ExperimentConfig) -> Result<Vec<(ConvergenceReport, PathBuf, PathBuf)>> {
    config.validate()?;
    let times: Vec<Option<f64>> = if config.t.is_empty() {
        vec![None]
    } else {
        config.t.iter().copied().map(Some).collect()
    };
    fs::create_dir_all(&config.out)?;
    let mut out = Vec::new();
    for (i, t) in times.into_iter().enumerate() {
        let report = run_campaign(&campaign(config, t))?;
        let json = config.out.join(format!("report_t{i}.json"));
        let csv = config.out.join(format!("report_t{i}.csv"));
        fs::write(&json, report.to_json()?)?;
        fs::write(&csv, report.to_csv())?;
        out.push((report, json, csv));
    }
    Ok(out)
}

/// Runs the suites and writes `verify.json` into the output directory.
pub fn cmd_verify(config: &ExperimentConfig) -> Result<VerifyReport> {
    let report = run_suites(&config.only, config.seed, config.tolerance_scale)?;
    fs::create_dir_all(&config.out)?;
    fs::write(
        config.out.join("verify.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(report)
}

fn exit_code(error: &Error) -> i32 {
    if error.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_NUMERIC
    }
}

fn describe(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (overrides, command) = match &cli.command {
        Command::Kernel(o) => (o, "kernel"),
        Command::Converge(o) => (o, "converge"),
        Command::Verify(o) => (o, "verify"),
    };
    let config = match overrides.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let result = match command {
        "kernel" => cmd_kernel(&config).map(|paths| {
            println!("{}", describe(&paths));
            EXIT_OK
        }),
        "converge" => cmd_converge(&config).map(|reports| {
            for (report, json, csv) in &reports {
                let fit = report
                    .kernel_fit
                    .map_or("n/a".to_string(), |f| format!("{:.4}", f.gamma_hat));
                println!("t = {}: gamma_hat = {fit}", report.t);
                println!("{}\n{}", json.display(), csv.display());
            }
            EXIT_OK
        }),
        _ => cmd_verify(&config).map(|report| {
            for c in report.failures() {
                eprintln!(
                    "FAIL {}/{}: {:e} > {:e}",
                    c.suite,
                    c.name,
                    c.measured,
                    c.tolerance * report.tolerance_scale
                );
            }
            match serde_json::to_string_pretty(&report) {
                Ok(json) => println!("{json}"),
                Err(e) => eprintln!("error: {e}"),
            }
            if report.passed {
                EXIT_OK
            } else {
                EXIT_VERIFY_FAILED
            }
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })
}

/// Resolves a config the way the binary would, for callers that hold a path.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    Overrides {
        config: Some(path.to_path_buf()),
        ..Overrides::default()
    }
    .resolve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(
            &path,
            r#"{"m_min": 3, "m_max": 5, "seed": 9, "field": {"family": "constant", "vol_squared": 2.0, "drift": 0.0}}"#,
        )
        .unwrap();
        let o = Overrides {
            config: Some(path.clone()),
            m_max: Some(6),
            ..Overrides::default()
        };
        let c = o.resolve().unwrap();
        assert_eq!((c.m_min, c.m_max, c.seed), (3, 6, 9));
        assert_eq!(c.field, Family::constant(2.0, 0.0));
        assert_eq!(load_config(&path).unwrap().m_max, 5);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"levels": 3}"#).unwrap();
        assert!(load_config(&path).unwrap_err().is_config_error());
    }

    #[test]
    fn kernel_files_have_one_row_per_pair() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            field: Family::constant(1.0, 0.0),
            m_min: 2,
            m_max: 2,
            t: vec![0.1],
            out: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        let paths = cmd_kernel(&config).unwrap();
        assert_eq!(paths.len(), 2);
        let csv = fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(csv.lines().count(), 1 + 64);
    }

    #[test]
    fn invalid_field_is_config_error() {
        let config = ExperimentConfig {
            field: Family::constant(0.0, 0.0),
            ..ExperimentConfig::default()
        };
        let e = cmd_kernel(&config).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        assert!(e.to_string().contains("ellipticity"));
    }
}
