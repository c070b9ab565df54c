//! Command-line front end. Data goes to `--out` or stdout; diagnostics go
//! to stderr as a single `error: <category>: <detail>` line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::to_json;
use crate::harness::{
    histogram, run_clt_experiment, variance_convergence_study, write_histogram_csv,
    write_study_csv, CltParams, Expectation,
};
use crate::hermite::{self, coefficients, FunctionSpec};
use crate::kernel::{self, check_conditions, KernelMomentTable};
use crate::sigma::{IncrementVarianceSpec, StructureReport};
use crate::simulate::{sample_paths_with, GridSpec, MethodChoice};
use crate::variance::{
    self, asymptotic_j, asymptotic_variance, exact_variance, AsymptoticJ, Regime,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_COVARIANCE: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;
pub const EXIT_IO: i32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Auto,
    Circulant,
    Levinson,
    Dense,
}

impl From<Method> for MethodChoice {
    fn from(m: Method) -> Self {
        match m {
            Method::Auto => MethodChoice::Auto,
            Method::Circulant => MethodChoice::Circulant,
            Method::Levinson => MethodChoice::Levinson,
            Method::Dense => MethodChoice::Dense,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExpectArg {
    Normal,
    Nonnormal,
}

/// Every experiment parameter. Read from `--config` and overridden field by
/// field by flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Increment variance, e.g. `pow:1.5`, `spow:2:0.8`, `explog:0.5@hmax=0.1`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<String>,
    /// Test function: `abspow:p`, `herm:2m`, `poly:c0,c2,...` or `one`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// `dyadic:<from>:<to>` for `2^-from, ..., 2^-to`, or a comma list.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_grid: Option<String>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<u32>>,
    #[arg(long = "paths")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_per_h: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Hermite expansion length `M`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_max: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0: Option<u32>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_csv: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hist_csv: Option<PathBuf>,
}

macro_rules! overlay {
    ($lo:expr, $hi:expr, $($field:ident),*) => {
        ExperimentConfig { $($field: $hi.$field.or($lo.$field),)* }
    };
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(to_json(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fields set in `flags` win over `self`.
    pub fn overridden_by(self, flags: ExperimentConfig) -> Self {
        overlay!(
            self, flags, sigma, f, a, b, h, h_grid, k, n_paths, n_per_h, seed, tol, max, j_max, k0,
            method, out, z_csv, hist_csv
        )
    }

    fn sigma(&self) -> Result<IncrementVarianceSpec> {
        required(&self.sigma, "sigma")?.parse()
    }

    fn f(&self) -> Result<FunctionSpec> {
        required(&self.f, "f")?.parse()
    }

    fn interval(&self) -> (f64, f64) {
        (self.a.unwrap_or(0.0), self.b.unwrap_or(1.0))
    }

    fn h(&self) -> Result<f64> {
        required(&self.h, "h").copied()
    }

    fn h_grid(&self) -> Result<Vec<f64>> {
        parse_h_grid(required(&self.h_grid, "h-grid")?)
    }

    /// `--h-grid`, or else the single `--h`.
    fn hs(&self) -> Result<Vec<f64>> {
        match (&self.h_grid, self.h) {
            (Some(g), _) => parse_h_grid(g),
            (None, Some(h)) => Ok(vec![h]),
            (None, None) => Err(Error::Parse("missing --h or --h-grid".into())),
        }
    }

    fn expansion(&self, f: &FunctionSpec) -> Result<hermite::HermiteExpansion> {
        coefficients(
            f,
            self.max.unwrap_or(hermite::DEFAULT_EXPANSION),
            hermite::DEFAULT_TOL,
        )
    }
}

fn required<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Parse(format!("missing --{name}")))
}

/// `dyadic:<from>:<to>` expands to `2^-from, ..., 2^-to` in that order;
/// otherwise a comma-separated list of positive reals.
pub fn parse_h_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Parse(format!("bad h grid '{s}'"));
    if let Some(rest) = s.strip_prefix("dyadic:") {
        let (from, to) = rest.split_once(':').ok_or_else(bad)?;
        let from: i32 = from.trim().parse().map_err(|_| bad())?;
        let to: i32 = to.trim().parse().map_err(|_| bad())?;
        let exps: Vec<i32> = if from <= to {
            (from..=to).collect()
        } else {
            (to..=from).rev().collect()
        };
        return Ok(exps.into_iter().map(|e| 2f64.powi(-e)).collect());
    }
    let hs = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    if hs.is_empty() || hs.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(bad());
    }
    Ok(hs)
}

#[derive(Debug, Parser)]
#[command(
    name = "gpclt",
    version,
    about = "Variance, kernel asymptotics and Monte Carlo CLT checks for Gaussian moduli of continuity"
)]
struct Cli {
    /// Worker threads; output does not depend on it.
    #[arg(long, global = true, env = "GPCLT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    params: ExperimentConfig,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Hermite coefficients of f (JSON).
    Coeffs(Common),
    /// Table of J_k(h) and S_k(h) (CSV).
    Kernel(Common),
    /// Hypothesis diagnostics along an h grid (JSON).
    Conditions(Common),
    /// Exact variance of I(f, h) (JSON).
    Variance(Common),
    /// Regimes and leading-order constants of J_k and Var I (JSON).
    Asymptotics(Common),
    /// Increment paths (CSV).
    Simulate(Common),
    /// Monte Carlo normality check of the standardized statistic (JSON).
    Clt {
        #[command(flatten)]
        common: Common,
        /// Exit with status 5 unless the KS test agrees at level 0.01.
        #[arg(long, value_enum, conflicts_with = "explore")]
        expect: Option<ExpectArg>,
        /// Allow parameters outside the normal-limit range; no verdict.
        #[arg(long)]
        explore: bool,
    },
    /// Exact against asymptotic variance along an h grid (CSV).
    Study(Common),
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return EXIT_USAGE;
        }
    };
    let outcome = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Error::Parse(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_VERIFY,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {detail}", e.category());
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse(_) => EXIT_USAGE,
        Error::CovarianceInvalid(_) => EXIT_COVARIANCE,
        Error::Io(_) | Error::Json(_) => EXIT_IO,
        _ => EXIT_DOMAIN,
    }
}

fn resolve(common: Common) -> Result<ExperimentConfig> {
    let base = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    Ok(base.overridden_by(common.params))
}

fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = to_json(value)?;
    emit(path, |w| w.write_all(text.as_bytes()))
}

#[derive(Serialize)]
struct CoeffsOutput {
    f: String,
    a_0: f64,
    k0: usize,
    tail_l2: f64,
    coeffs: Vec<f64>,
}

#[derive(Serialize)]
struct MomentAsymptotics {
    #[serde(flatten)]
    asymptotic: AsymptoticJ,
    leading: Option<f64>,
}

#[derive(Serialize)]
struct VarianceAsymptotics {
    regime: Regime,
    formula: String,
    predicted: Option<f64>,
}

#[derive(Serialize)]
struct AsymptoticsOutput {
    sigma: String,
    structure: StructureReport,
    moments: Vec<MomentAsymptotics>,
    variance: Option<VarianceAsymptotics>,
}

/// `Ok(false)` means a verification failed.
fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Coeffs(c) => {
            let cfg = resolve(c)?;
            let f = cfg.f()?;
            let exp = cfg.expansion(&f)?;
            emit_json(
                cfg.out.as_deref(),
                &CoeffsOutput {
                    f: f.to_string(),
                    a_0: exp.a(0),
                    k0: exp.k0,
                    tail_l2: exp.tail_l2,
                    coeffs: exp.coeffs,
                },
            )?;
        }
        Command::Kernel(c) => {
            let cfg = resolve(c)?;
            let (a, b) = cfg.interval();
            let ks = cfg.k.clone().unwrap_or_else(|| vec![2]);
            let table = KernelMomentTable::compute(
                &cfg.sigma()?,
                a,
                b,
                &ks,
                &cfg.hs()?,
                cfg.tol.unwrap_or(kernel::DEFAULT_TOL),
            )?;
            emit(cfg.out.as_deref(), |w| table.write_csv(w))?;
        }
        Command::Conditions(c) => {
            let cfg = resolve(c)?;
            let (a, b) = cfg.interval();
            let k0 = cfg.k0.unwrap_or(1);
            let report = check_conditions(
                &cfg.sigma()?,
                a,
                b,
                &cfg.h_grid()?,
                cfg.j_max.unwrap_or(2 * k0 + 2),
                k0,
                cfg.tol.unwrap_or(kernel::DEFAULT_TOL),
            )?;
            emit_json(cfg.out.as_deref(), &report)?;
        }
        Command::Variance(c) => {
            let cfg = resolve(c)?;
            let (a, b) = cfg.interval();
            let f = cfg.f()?;
            let report = exact_variance(
                &cfg.expansion(&f)?,
                &cfg.sigma()?,
                a,
                b,
                cfg.h()?,
                cfg.tol.unwrap_or(variance::DEFAULT_TOL),
            )?;
            emit_json(cfg.out.as_deref(), &report)?;
        }
        Command::Asymptotics(c) => {
            let cfg = resolve(c)?;
            let (a, b) = cfg.interval();
            let spec = cfg.sigma()?;
            let ks = cfg.k.clone().unwrap_or_else(|| vec![2]);
            let moments = ks
                .iter()
                .map(|&k| {
                    let asymptotic = asymptotic_j(&spec, k, a, b)?;
                    Ok(MomentAsymptotics {
                        leading: cfg.h.and_then(|h| asymptotic.leading(h)),
                        asymptotic,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let variance = match &cfg.f {
                Some(_) => {
                    let av = asymptotic_variance(&cfg.expansion(&cfg.f()?)?, &spec, a, b)?;
                    Some(VarianceAsymptotics {
                        regime: av.regime,
                        predicted: cfg.h.map(|h| av.eval(h)).transpose()?,
                        formula: av.formula,
                    })
                }
                None => None,
            };
            emit_json(
                cfg.out.as_deref(),
                &AsymptoticsOutput {
                    sigma: spec.to_string(),
                    structure: spec.classify(),
                    moments,
                    variance,
                },
            )?;
        }
        Command::Simulate(c) => {
            let cfg = resolve(c)?;
            let (a, b) = cfg.interval();
            let grid = GridSpec::new(a, b, cfg.h()?, cfg.n_per_h.unwrap_or(8))?;
            let bundle = sample_paths_with(
                &cfg.sigma()?,
                &grid,
                cfg.n_paths.unwrap_or(1),
                cfg.seed.unwrap_or(0),
                cfg.method.unwrap_or(Method::Auto).into(),
            )?;
            emit(cfg.out.as_deref(), |w| bundle.write_csv(w))?;
        }
        Command::Clt {
            common,
            expect,
            explore,
        } => {
            let cfg = resolve(common)?;
            let (a, b) = cfg.interval();
            let f = cfg.f()?;
            let spec = cfg.sigma()?;
            let mut params = CltParams::new(f, spec, cfg.h()?, cfg.seed.unwrap_or(0));
            params.a = a;
            params.b = b;
            if let Some(n) = cfg.n_per_h {
                params.n_per_h = n;
            }
            if let Some(n) = cfg.n_paths {
                params.n_paths = n;
            }
            if let Some(t) = cfg.tol {
                params.tol = t;
            }
            if let Some(m) = cfg.max {
                params.expansion_len = m;
            }
            if !explore {
                check_normal_range(&params)?;
            }
            let mut report = run_clt_experiment(&params)?;
            let verdict = match (expect, explore) {
                (Some(e), false) => Some(report.judge(match e {
                    ExpectArg::Normal => Expectation::Normal,
                    ExpectArg::Nonnormal => Expectation::Nonnormal,
                })),
                _ => None,
            };
            if let Some(p) = &cfg.z_csv {
                emit(Some(p), |w| report.write_z_csv(w))?;
            }
            if let Some(p) = &cfg.hist_csv {
                let bins = histogram(&report.z);
                emit(Some(p), |w| write_histogram_csv(&bins, w))?;
            }
            emit_json(cfg.out.as_deref(), &report)?;
            return Ok(verdict.unwrap_or(true));
        }
        Command::Study(c) => {
            let cfg = resolve(c)?;
            let (a, b) = cfg.interval();
            let rows = variance_convergence_study(
                &cfg.f()?,
                &cfg.sigma()?,
                a,
                b,
                &cfg.h_grid()?,
                cfg.tol.unwrap_or(variance::DEFAULT_TOL),
            )?;
            emit(cfg.out.as_deref(), |w| write_study_csv(&rows, w))?;
        }
    }
    Ok(true)
}

/// Power exponents in `(2 - 1/(2 k0), 2)` have a non-normal limit; they run
/// only under `--explore`. `r = 2` stays allowed as the degenerate control.
fn check_normal_range(p: &CltParams) -> Result<()> {
    let Some(r) = p.sigma.power_exponent() else {
        return Ok(());
    };
    let k0 = coefficients(&p.f, p.expansion_len, hermite::DEFAULT_TOL)?.k0;
    let edge = 2.0 - 1.0 / (2.0 * k0 as f64);
    if r > edge && r < 2.0 {
        return Err(Error::UnsupportedRegime(format!(
            "r={r} exceeds 2-1/(2k0)={edge} for k0={k0}; rerun with --explore"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dyadic_grid() {
        let g = parse_h_grid("dyadic:2:4").unwrap();
        assert_eq!(g, vec![0.25, 0.125, 0.0625]);
        assert_eq!(parse_h_grid("0.5, 0.25").unwrap(), vec![0.5, 0.25]);
        assert!(parse_h_grid("dyadic:3").is_err());
        assert!(parse_h_grid("0.1,-1").is_err());
    }

    #[test]
    fn flags_override_config() {
        let file = ExperimentConfig {
            sigma: Some("pow:1".into()),
            h: Some(0.1),
            seed: Some(3),
            ..Default::default()
        };
        let flags = ExperimentConfig {
            h: Some(0.2),
            ..Default::default()
        };
        let merged = file.overridden_by(flags);
        assert_eq!(merged.h, Some(0.2));
        assert_eq!(merged.seed, Some(3));
        assert_eq!(merged.sigma.as_deref(), Some("pow:1"));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(ExperimentConfig::from_json("{\"sigmaa\":\"pow:1\"}").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Parse("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::domain("x")), EXIT_DOMAIN);
        assert_eq!(
            exit_code(&Error::CovarianceInvalid("x".into())),
            EXIT_COVARIANCE
        );
        assert_eq!(run_cli(["gpclt", "nope"]), EXIT_USAGE);
        assert_eq!(run_cli(["gpclt", "coeffs"]), EXIT_USAGE);
        assert_eq!(
            run_cli(["gpclt", "coeffs", "--f", "abspow:0.5"]),
            EXIT_DOMAIN
        );
    }

    fn opt<T: std::fmt::Debug + Clone + 'static>(
        s: impl Strategy<Value = T> + 'static,
    ) -> impl Strategy<Value = Option<T>> {
        prop::option::of(s)
    }

    prop_compose! {
        fn config()(
            sigma in opt("pow:[01]\\.[0-9]{1,3}"),
            f in opt("(abspow:[1-3]|herm:[2468]|one)"),
            a in opt(-1e3f64..1e3),
            b in opt(any::<f64>().prop_filter("finite", |x| x.is_finite())),
            h in opt(1e-12f64..1.0),
            h_grid in opt("dyadic:[0-9]:[0-9]{2}"),
            k in opt(prop::collection::vec(1u32..9, 1..4)),
            n_paths in opt(100usize..10_000),
            seed in opt(any::<u64>()),
            tol in opt(1e-14f64..1e-6),
            method in opt(prop_oneof![Just(Method::Auto), Just(Method::Levinson)]),
            out in opt("[a-z]{1,8}\\.csv"),
        ) -> ExperimentConfig {
            ExperimentConfig {
                sigma, f, a, b, h, h_grid, k, n_paths, seed, tol, method,
                out: out.map(PathBuf::from),
                ..Default::default()
            }
        }
    }

    proptest! {
        #[test]
        fn config_round_trips(cfg in config()) {
            let text = cfg.to_json().unwrap();
            prop_assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        }
    }
}
