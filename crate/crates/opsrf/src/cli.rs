//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use opsrf_core::field::{FieldKind, FieldMeta, FieldSample, GridSpec};
use opsrf_core::homogeneous::HomogeneousFunction;
use opsrf_core::lepage_sim::DEFAULT_TERMS;
use opsrf_core::moving_average::DEFAULT_MA_TERMS;
use opsrf_core::operator_algebra::{jordan_norm_bounds_check, JordanBlock, OperatorMatrix};
use opsrf_core::polar::PolarSystem;
use opsrf_core::regularity_lab::kolmogorov_q;
use opsrf_core::rng::{stream, stream_rng};
use opsrf_core::stable_core::{cos_moment, cos_moment_quadrature, sine_integral, sine_integral_quadrature};
use opsrf_core::Matrix;

use crate::error::CliError;
use crate::formats::{parse_point, parse_points, parse_range, read_field_csv, write_field_csv};
use crate::pipeline::{
    default_points, load_manifest, polar_text, run_and_write, variogram_text, BoxdimConfig, HolderConfig,
    MatrixSource, ModulusConfig, RunConfig, ScalingConfig, SimulateConfig, SimulateMaConfig,
};
use crate::psi_spec::PsiSpec;

#[derive(Debug, Parser)]
#[command(name = "opsrf", version, about = "Simulate and analyse operator scaling stable random fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Harmonizable stable field on a grid (α = 2 gives the exact Gaussian field).
    Simulate(SimulateArgs),
    /// Moving-average stable field on a grid and/or the unboundedness probe.
    SimulateMa(SimulateMaArgs),
    /// Polar coordinates τ_E, ℓ_E and the norm ‖·‖_E at a point.
    Polar(PolarArgs),
    /// Variogram of the Gaussian field at given lags.
    Variogram(VariogramArgs),
    /// Regularity and dimension estimators on field files.
    #[command(subcommand)]
    Estimate(EstimateCommand),
    /// Distributional checks.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Fast invariant checks.
    Selftest,
    /// Repeats a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, default_value = "radial")]
    pub psi: String,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value_t = DEFAULT_TERMS)]
    pub terms: usize,
    #[arg(long)]
    pub grid: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of realizations; more than one appends _<index> to the file name.
    #[arg(long, default_value_t = 1)]
    pub realizations: u64,
    #[arg(long, default_value_t = 0)]
    pub first_realization: u64,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct SimulateMaArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, default_value = "radial")]
    pub phi: String,
    #[arg(long, default_value_t = DEFAULT_MA_TERMS)]
    pub terms: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub realization: u64,
    #[arg(long)]
    pub grid: Option<String>,
    /// "c1,...,cd,r": center and radius of the probe ball.
    #[arg(long)]
    pub ball: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub levels: usize,
    /// Field file (with --grid).
    #[arg(long)]
    pub out: Option<String>,
    /// Probe report file (with --ball).
    #[arg(long)]
    pub report: Option<String>,
}

#[derive(Debug, Args)]
pub struct PolarArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub point: String,
}

#[derive(Debug, Args)]
pub struct VariogramArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, default_value = "radial")]
    pub psi: String,
    /// Lags separated by ';', e.g. "0.1,0;0,0.1".
    #[arg(long, allow_hyphen_values = true)]
    pub lags: String,
}

#[derive(Debug, Subcommand)]
pub enum EstimateCommand {
    /// Directional Hölder exponent along a grid axis.
    Holder {
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<String>,
        /// e1, e2, ...
        #[arg(long, default_value = "e1")]
        direction: String,
        /// Lags 2^lo..2^hi grid steps.
        #[arg(long, default_value = "0:6")]
        scales: String,
        #[arg(long)]
        out: Option<String>,
    },
    /// Box-counting dimension of the graph.
    Boxdim {
        #[arg(long)]
        input: String,
        /// Box sizes 2^-lo..2^-hi (default: all the grid resolves).
        #[arg(long)]
        scales: Option<String>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Modulus-of-continuity ratio across δ = 2^-lo..2^-hi.
    Modulus {
        #[arg(long)]
        input: String,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long, default_value = "2:5")]
        deltas: String,
        #[arg(long)]
        out: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum VerifyCommand {
    /// Two-sample KS test of the operator scaling law.
    Scaling {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        matrix: PathBuf,
        /// harmonizable, gaussian or moving-average (default: by α).
        #[arg(long)]
        field: Option<String>,
        #[arg(long, default_value = "radial")]
        psi: String,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = 5000)]
        terms: usize,
        #[arg(long, default_value_t = 2.0)]
        c: f64,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Power of c on the right-hand side (1 for the scaling law).
        #[arg(long, default_value_t = 1.0)]
        exponent: f64,
        /// Points separated by ';' (default: four fixed points).
        #[arg(long, allow_hyphen_values = true)]
        points: Option<String>,
        #[arg(long)]
        out: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write the primary output here instead.
    #[arg(long)]
    pub out: Option<String>,
}

fn direction_axis(s: &str) -> Result<usize, CliError> {
    s.strip_prefix('e')
        .and_then(|k| k.parse::<usize>().ok())
        .filter(|&k| k >= 1)
        .map(|k| k - 1)
        .ok_or_else(|| CliError::Validation(format!("direction must be a grid axis e1, e2, ..., got '{s}'")))
}

fn psi(s: &str) -> Result<PsiSpec, CliError> {
    PsiSpec::parse(s, Path::new("."))
}

/// Translates parsed arguments into a resolved run config.
pub fn resolve(cmd: Command) -> Result<Resolved, CliError> {
    Ok(match cmd {
        Command::Simulate(a) => Resolved::Run(RunConfig::Simulate(SimulateConfig {
            alpha: a.alpha,
            matrix: MatrixSource::from_file(&a.matrix)?,
            psi: psi(&a.psi)?,
            eta: a.eta,
            terms: a.terms,
            grid: a.grid,
            seed: a.seed,
            first_realization: a.first_realization,
            realizations: a.realizations,
            out: a.out,
        })),
        Command::SimulateMa(a) => Resolved::Run(RunConfig::SimulateMa(SimulateMaConfig {
            alpha: a.alpha,
            matrix: MatrixSource::from_file(&a.matrix)?,
            phi: psi(&a.phi)?,
            terms: a.terms,
            seed: a.seed,
            realization: a.realization,
            grid: a.grid,
            ball: a.ball.as_deref().map(parse_point).transpose()?,
            levels: a.levels,
            out: a.out,
            report: a.report,
        })),
        Command::Polar(a) => {
            let e = MatrixSource::from_file(&a.matrix)?.operator()?;
            Resolved::Print(polar_text(&e, &parse_point(&a.point)?)?)
        }
        Command::Variogram(a) => {
            let e = MatrixSource::from_file(&a.matrix)?.operator()?;
            Resolved::Print(variogram_text(&e, &psi(&a.psi)?, &parse_points(&a.lags)?)?)
        }
        Command::Estimate(EstimateCommand::Holder { input, direction, scales, out }) => {
            Resolved::Run(RunConfig::EstimateHolder(HolderConfig {
                inputs: input,
                axis: direction_axis(&direction)?,
                scales: parse_range(&scales)?,
                out,
            }))
        }
        Command::Estimate(EstimateCommand::Boxdim { input, scales, out }) => {
            Resolved::Run(RunConfig::EstimateBoxdim(BoxdimConfig {
                input,
                scales: scales.as_deref().map(parse_range).transpose()?,
                out,
            }))
        }
        Command::Estimate(EstimateCommand::Modulus { input, eps, kappa, deltas, out }) => {
            Resolved::Run(RunConfig::EstimateModulus(ModulusConfig { input, eps, kappa, deltas: parse_range(&deltas)?, out }))
        }
        Command::Verify(VerifyCommand::Scaling {
            alpha,
            matrix,
            field,
            psi: p,
            eta,
            terms,
            c,
            reps,
            seed,
            exponent,
            points,
            out,
        }) => {
            let matrix = MatrixSource::from_file(&matrix)?;
            let d = matrix.operator()?.dim();
            let field = field.unwrap_or_else(|| if alpha == 2.0 { "gaussian" } else { "harmonizable" }.into());
            let points = match points {
                Some(s) => parse_points(&s)?,
                None => default_points(d),
            };
            Resolved::Run(RunConfig::VerifyScaling(ScalingConfig {
                field,
                alpha,
                matrix,
                psi: psi(&p)?,
                eta,
                terms,
                c,
                reps,
                seed,
                exponent,
                points,
                out,
            }))
        }
        Command::Selftest => Resolved::Selftest,
        Command::Rerun(a) => {
            let mut cfg = load_manifest(&a.manifest)?.config;
            if let Some(o) = a.out {
                cfg.redirect(&o);
            }
            Resolved::Run(cfg)
        }
    })
}

pub enum Resolved {
    Run(RunConfig),
    Print(String),
    Selftest,
}

/// One selftest check: name and outcome (with detail on failure).
pub fn selftest_checks() -> Vec<(&'static str, Result<(), String>)> {
    let mut out: Vec<(&'static str, Result<(), String>)> = Vec::new();
    let check = |cond: bool, detail: String| if cond { Ok(()) } else { Err(detail) };

    let tau = (|| -> Result<f64, CliError> {
        let e = OperatorMatrix::diagonal(&[2.0, 3.0])?;
        let sys = PolarSystem::new(&e)?;
        let c = 2.0f64;
        let pc = e.power(c)?;
        let mut worst = 0.0f64;
        for k in 0..64 {
            let a = 0.1 * k as f64;
            let x = [a.cos() * (1.0 + 0.1 * k as f64), a.sin()];
            let t = sys.tau(&x)?;
            worst = worst.max((sys.tau(&pc.mul_vec(&x))? - c * t).abs() / (c * t));
        }
        Ok(worst)
    })();
    out.push(("tau homogeneity", tau.map_err(|e| e.to_string()).and_then(|w| check(w < 1e-6, format!("defect {w:e}")))));

    let t_grid: Vec<f64> = (2..=20).flat_map(|k| [(k as f64 / 2.0).exp(), (-(k as f64) / 2.0).exp()]).collect();
    let jordan = [JordanBlock::real(1.5, 3), JordanBlock::complex(2.0, 1.0, 2)]
        .iter()
        .map(|b| jordan_norm_bounds_check(b, &t_grid, 1e-9).map(|r| r.all_hold()))
        .collect::<Result<Vec<bool>, _>>();
    out.push((
        "Jordan power bounds",
        jordan.map_err(|e| e.to_string()).and_then(|v| check(v.iter().all(|&b| b), "bound violated".into())),
    ));

    let psi = (|| -> Result<(), CliError> {
        let mut rng = stream_rng(0, stream::TEST_POINTS, 0);
        let e = OperatorMatrix::diagonal(&[2.0, 3.0])?;
        HomogeneousFunction::radial(PolarSystem::new(&e)?).validate(200, 1e-6, &mut rng)?;
        HomogeneousFunction::diagonal_from_operator(&e)?.validate(200, 1e-6, &mut rng)?;
        HomogeneousFunction::euclid_in(0.5, 2)?.validate(200, 1e-6, &mut rng)?;
        Ok(())
    })();
    out.push(("psi homogeneity", psi.map_err(|e| e.to_string())));

    let consts = [1.2, 1.5, 1.9]
        .iter()
        .map(|&a| -> Result<f64, CliError> {
            let d1 = (cos_moment(a) - cos_moment_quadrature(a)).abs();
            let d2 = (sine_integral(a)? - sine_integral_quadrature(a)?).abs();
            Ok(d1.max(d2))
        })
        .collect::<Result<Vec<f64>, _>>();
    out.push((
        "stable constants vs quadrature",
        consts
            .map_err(|e| e.to_string())
            .and_then(|v| v.into_iter().fold(Ok(()), |acc, d| acc.and(check(d < 1e-6, format!("gap {d:e}"))))),
    ));

    let q = kolmogorov_q(1.3581);
    out.push(("Kolmogorov tail", check((q - 0.05).abs() < 2e-4, format!("Q(1.3581) = {q}"))));

    let csv = (|| -> Result<bool, CliError> {
        let grid = GridSpec::parse("0:1:9,0:2:5")?;
        let values = (0..grid.len()).map(|i| (i as f64).sqrt() * 0.1 - 0.3).collect();
        let meta = FieldMeta {
            kind: FieldKind::Gaussian,
            alpha: 2.0,
            matrix: Matrix::identity(2).scaled(2.0),
            psi: "euclid(H=0.5)".into(),
            seed: 1,
            realization: 0,
            terms: 0,
            tail_variance: 0.0,
        };
        let f = FieldSample::new(grid, values, meta)?;
        Ok(read_field_csv(&write_field_csv(&f))? == f)
    })();
    out.push(("field file round trip", csv.map_err(|e| e.to_string()).and_then(|b| check(b, "mismatch".into()))));
    out
}

/// Parses `argv` (including the program name), runs, and returns the exit
/// code. Normal output goes to `stdout`, diagnostics to `stderr`.
pub fn run<I, T>(argv: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    let result = resolve(cli.command).and_then(|r| match r {
        Resolved::Run(cfg) => run_and_write(&cfg),
        Resolved::Print(s) => Ok(s),
        Resolved::Selftest => {
            let checks = selftest_checks();
            let mut s = String::new();
            let mut ok = true;
            for (name, res) in checks {
                match res {
                    Ok(()) => s.push_str(&format!("PASS {name}\n")),
                    Err(d) => {
                        ok = false;
                        s.push_str(&format!("FAIL {name}: {d}\n"));
                    }
                }
            }
            if ok {
                Ok(s)
            } else {
                Err(CliError::Runtime(format!("{s}selftest failed")))
            }
        }
    });
    match result {
        Ok(s) => {
            let _ = write!(stdout, "{s}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
