//! Resolved run configurations and their execution.
//!
//! Every command that writes files is described by a [`RunConfig`] holding
//! everything needed to repeat it (matrix text, θ rows, seeds, grids). The
//! config is echoed to `<primary output>.manifest.json`; running the same
//! config again reproduces the output bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use opsrf_core::field::{FieldKind, FieldMeta, FieldSample, GridSpec};
use opsrf_core::gaussian_sim::{GaussianField, Variogram};
use opsrf_core::lepage_sim::{build_ensemble, HarmonizableField, SpectralDensity, SpectralSampler};
use opsrf_core::moving_average::{unboundedness_probe, MAEnsemble, MovingAverageField};
use opsrf_core::operator_algebra::OperatorMatrix;
use opsrf_core::polar::{Calibration, PolarSystem};
use opsrf_core::regularity_lab::{
    box_dimension, directional_holder, modulus_kappa, modulus_ratio, scaling_verify, EstimateReport,
};
use opsrf_core::stable_core::StableParams;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::formats::{inline_basis_file, parse_operator, read_field_csv, write_field_csv};
use crate::psi_spec::PsiSpec;

/// Scaling matrix as given by the user; `text` is authoritative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixSource {
    pub path: Option<String>,
    pub text: String,
}

impl MatrixSource {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read matrix file {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let text = inline_basis_file(&text, base)?;
        Ok(MatrixSource { path: Some(path.display().to_string()), text })
    }

    pub fn operator(&self) -> Result<OperatorMatrix, CliError> {
        parse_operator(&self.text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub alpha: f64,
    pub matrix: MatrixSource,
    pub psi: PsiSpec,
    pub eta: f64,
    pub terms: usize,
    pub grid: String,
    pub seed: u64,
    pub first_realization: u64,
    pub realizations: u64,
    pub out: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateMaConfig {
    pub alpha: f64,
    pub matrix: MatrixSource,
    pub phi: PsiSpec,
    pub terms: usize,
    pub seed: u64,
    pub realization: u64,
    pub grid: Option<String>,
    /// center coordinates followed by the radius
    pub ball: Option<Vec<f64>>,
    pub levels: usize,
    pub out: Option<String>,
    pub report: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderConfig {
    pub inputs: Vec<String>,
    /// zero-based grid axis
    pub axis: usize,
    /// lags 2^lo..=2^hi grid steps
    pub scales: (u32, u32),
    pub out: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxdimConfig {
    pub input: String,
    /// box sizes 2^{-lo}..=2^{-hi}; `None` picks every dyadic size the grid resolves
    pub scales: Option<(u32, u32)>,
    pub out: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusConfig {
    pub input: String,
    pub eps: f64,
    pub kappa: Option<f64>,
    /// δ = 2^{-lo} down to 2^{-hi}
    pub deltas: (u32, u32),
    pub out: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub field: String,
    pub alpha: f64,
    pub matrix: MatrixSource,
    pub psi: PsiSpec,
    pub eta: f64,
    pub terms: usize,
    pub c: f64,
    pub reps: usize,
    pub seed: u64,
    pub exponent: f64,
    pub points: Vec<Vec<f64>>,
    pub out: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Simulate(SimulateConfig),
    SimulateMa(SimulateMaConfig),
    EstimateHolder(HolderConfig),
    EstimateBoxdim(BoxdimConfig),
    EstimateModulus(ModulusConfig),
    VerifyScaling(ScalingConfig),
}

/// Text for standard output plus files to write.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub files: Vec<(PathBuf, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub outputs: Vec<String>,
}

impl RunConfig {
    /// Path the manifest is named after, if the run writes files.
    pub fn primary_output(&self) -> Option<&str> {
        match self {
            RunConfig::Simulate(c) => Some(&c.out),
            RunConfig::SimulateMa(c) => c.out.as_deref().or(c.report.as_deref()),
            RunConfig::EstimateHolder(c) => c.out.as_deref(),
            RunConfig::EstimateBoxdim(c) => c.out.as_deref(),
            RunConfig::EstimateModulus(c) => c.out.as_deref(),
            RunConfig::VerifyScaling(c) => c.out.as_deref(),
        }
    }

    /// Redirects the primary output (used by `rerun --out`).
    pub fn redirect(&mut self, path: &str) {
        match self {
            RunConfig::Simulate(c) => c.out = path.into(),
            RunConfig::SimulateMa(c) => {
                if c.out.is_some() {
                    c.out = Some(path.into());
                } else {
                    c.report = Some(path.into());
                }
            }
            RunConfig::EstimateHolder(c) => c.out = Some(path.into()),
            RunConfig::EstimateBoxdim(c) => c.out = Some(path.into()),
            RunConfig::EstimateModulus(c) => c.out = Some(path.into()),
            RunConfig::VerifyScaling(c) => c.out = Some(path.into()),
        }
    }

    pub fn execute(&self) -> Result<Outcome, CliError> {
        match self {
            RunConfig::Simulate(c) => simulate(c),
            RunConfig::SimulateMa(c) => simulate_ma(c),
            RunConfig::EstimateHolder(c) => estimate_holder(c),
            RunConfig::EstimateBoxdim(c) => estimate_boxdim(c),
            RunConfig::EstimateModulus(c) => estimate_modulus(c),
            RunConfig::VerifyScaling(c) => verify_scaling(c),
        }
    }

    pub fn manifest(&self, outputs: &[PathBuf]) -> Manifest {
        Manifest {
            tool: "opsrf".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.clone(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }
}

pub fn manifest_path(primary: &str) -> PathBuf {
    PathBuf::from(format!("{primary}.manifest.json"))
}

/// Runs a config, writes its files and manifest, and returns the stdout text.
pub fn run_and_write(cfg: &RunConfig) -> Result<String, CliError> {
    let outcome = cfg.execute()?;
    let mut written = Vec::with_capacity(outcome.files.len());
    for (path, contents) in &outcome.files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, contents)?;
        written.push(path.clone());
    }
    if let Some(primary) = cfg.primary_output() {
        let json = serde_json::to_string_pretty(&cfg.manifest(&written))?;
        std::fs::write(manifest_path(primary), json + "\n")?;
    }
    Ok(outcome.stdout)
}

pub fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read manifest {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// `field.csv` with k of n realizations becomes `field_k.csv` (n > 1).
pub fn realization_path(out: &str, r: u64, many: bool) -> PathBuf {
    if !many {
        return PathBuf::from(out);
    }
    let p = Path::new(out);
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("field");
    let name = match p.extension().and_then(|s| s.to_str()) {
        Some(ext) => format!("{stem}_{r}.{ext}"),
        None => format!("{stem}_{r}"),
    };
    p.with_file_name(name)
}

struct Harmonizable {
    e: OperatorMatrix,
    psi: opsrf_core::homogeneous::HomogeneousFunction,
    params: StableParams,
    sampler: SpectralSampler,
}

impl Harmonizable {
    fn new(alpha: f64, e: OperatorMatrix, psi: &PsiSpec, eta: f64) -> Result<Self, CliError> {
        let et = e.transpose();
        let sys_et = PolarSystem::calibrated(&et, &Calibration::default())?;
        let psi = psi.build(&et)?;
        let params = StableParams::new(alpha)?;
        let sampler = SpectralSampler::new(SpectralDensity::new(eta, &sys_et)?, &sys_et);
        Ok(Harmonizable { e, psi, params, sampler })
    }

    fn field(&self, terms: usize, seed: u64, r: u64) -> Result<opsrf_core::lepage_sim::LePageEnsemble, CliError> {
        Ok(build_ensemble(self.params.alpha, &self.sampler, terms, seed, r)?)
    }
}

fn variogram(e: &OperatorMatrix, psi: &PsiSpec) -> Result<Variogram, CliError> {
    let et = e.transpose();
    let sys_e = PolarSystem::new(e)?;
    let sys_et = PolarSystem::calibrated(&et, &Calibration::default())?;
    Ok(Variogram::new(&sys_e, &sys_et, &psi.build(&et)?)?)
}

fn check_alpha(alpha: f64, allow_two: bool) -> Result<(), CliError> {
    let ok = alpha > 0.0 && (alpha < 2.0 || (allow_two && alpha == 2.0));
    if ok {
        Ok(())
    } else {
        Err(CliError::Validation(format!("α must lie in (0, 2{}, got {alpha}", if allow_two { "]" } else { ")" })))
    }
}

fn simulate(c: &SimulateConfig) -> Result<Outcome, CliError> {
    check_alpha(c.alpha, true)?;
    let e = c.matrix.operator()?;
    let grid = GridSpec::parse(&c.grid)?;
    if grid.dim() != e.dim() {
        return Err(CliError::Validation(format!("grid has {} axes but the matrix is {}×{}", grid.dim(), e.dim(), e.dim())));
    }
    if c.realizations == 0 {
        return Err(CliError::Validation("at least one realization is needed".into()));
    }
    let many = c.realizations > 1;
    let range = c.first_realization..c.first_realization + c.realizations;
    let mut out = Outcome::default();
    if c.alpha == 2.0 {
        let mut vg = variogram(&e, &c.psi)?;
        let field = GaussianField::on_grid(&mut vg, &grid)?;
        for r in range {
            let meta = FieldMeta {
                kind: FieldKind::Gaussian,
                alpha: 2.0,
                matrix: e.entries().clone(),
                psi: c.psi.to_string(),
                seed: c.seed,
                realization: r,
                terms: 0,
                tail_variance: 0.0,
            };
            let s = FieldSample::new(grid.clone(), field.draw(c.seed, r), meta)?;
            out.files.push((realization_path(&c.out, r, many), write_field_csv(&s)));
        }
        let _ = writeln!(out.stdout, "gaussian field: {} realization(s), {} nodes, jitter {}", c.realizations, grid.len(), field.jitter());
    } else {
        if c.terms == 0 {
            return Err(CliError::Validation("the series needs at least one term".into()));
        }
        let h = Harmonizable::new(c.alpha, e, &c.psi, c.eta)?;
        let mut worst_tail = 0.0f64;
        for r in range {
            let ens = h.field(c.terms, c.seed, r)?;
            let mut s = HarmonizableField::new(&ens, &h.psi, &h.params, &h.e)?.evaluate_grid(&grid)?;
            s.meta.psi = c.psi.to_string();
            worst_tail = worst_tail.max(s.meta.tail_variance);
            out.files.push((realization_path(&c.out, r, many), write_field_csv(&s)));
        }
        let _ = writeln!(
            out.stdout,
            "harmonizable field: {} realization(s), {} nodes, N = {}, tail variance ≤ {worst_tail:e}",
            c.realizations,
            grid.len(),
            c.terms
        );
    }
    Ok(out)
}

fn simulate_ma(c: &SimulateMaConfig) -> Result<Outcome, CliError> {
    check_alpha(c.alpha, false)?;
    let e = c.matrix.operator()?;
    let phi = c.phi.build(&e)?;
    if c.grid.is_none() && c.ball.is_none() {
        return Err(CliError::Validation("simulate-ma needs --grid or --ball".into()));
    }
    let ens = MAEnsemble::build(c.alpha, e.dim(), c.terms, c.seed, c.realization)?;
    let field = MovingAverageField::new(&ens, &phi)?;
    let mut out = Outcome::default();
    if let Some(g) = &c.grid {
        let grid = GridSpec::parse(g)?;
        let path = c.out.as_ref().ok_or_else(|| CliError::Validation("--grid needs --out".into()))?;
        let mut s = field.evaluate_grid(&grid)?;
        s.meta.psi = c.phi.to_string();
        out.files.push((PathBuf::from(path), write_field_csv(&s)));
        let _ = writeln!(out.stdout, "moving-average field: {} nodes, N = {}", grid.len(), c.terms);
    }
    if let Some(ball) = &c.ball {
        let d = e.dim();
        if ball.len() != d + 1 {
            return Err(CliError::Validation(format!("--ball needs {} center coordinates and a radius", d)));
        }
        let rep = unboundedness_probe(&ens, &phi, &ball[..d], ball[d], c.levels)?;
        let mut csv = String::from("level,nodes,max_abs\n");
        for (k, (n, m)) in rep.nodes.iter().zip(&rep.maxima).enumerate() {
            let _ = writeln!(csv, "{k},{n},{m}");
        }
        let _ = write!(out.stdout, "{csv}");
        let _ = writeln!(out.stdout, "strictly increasing: {}", rep.strictly_increasing);
        if let Some(p) = &c.report {
            out.files.push((PathBuf::from(p), csv));
        }
    }
    Ok(out)
}

fn report_csv(rep: &EstimateReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# kind={}", rep.kind.name());
    let _ = writeln!(s, "# inputs={}", rep.inputs);
    let _ = writeln!(s, "# estimate={}", rep.estimate);
    let _ = writeln!(s, "# half_width={}", rep.half_width);
    let _ = writeln!(s, "# r_squared={}", rep.r_squared);
    let _ = writeln!(s, "# residual_max={}", rep.residual_max);
    if let Some(p) = rep.passed {
        let _ = writeln!(s, "# passed={p}");
    }
    let _ = writeln!(s, "scale,statistic");
    for (a, b) in rep.scales.iter().zip(&rep.statistics) {
        let _ = writeln!(s, "{a},{b}");
    }
    s
}

fn summary(rep: &EstimateReport) -> String {
    let verdict = match rep.passed {
        Some(true) => ", PASS",
        Some(false) => ", FAIL",
        None => "",
    };
    format!(
        "{}: {:.4} ± {:.4} (R² = {:.4}){verdict}\n",
        rep.kind.name(),
        rep.estimate,
        rep.half_width,
        rep.r_squared
    )
}

fn report_outcome(rep: &EstimateReport, out: &Option<String>) -> Outcome {
    let csv = report_csv(rep);
    let mut o = Outcome { stdout: csv.clone() + &summary(rep), files: Vec::new() };
    if let Some(p) = out {
        o.files.push((PathBuf::from(p), csv));
    }
    o
}

fn read_sample(path: &str) -> Result<FieldSample, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read field file {path}: {e}")))?;
    read_field_csv(&text)
}

fn estimate_holder(c: &HolderConfig) -> Result<Outcome, CliError> {
    if c.inputs.is_empty() {
        return Err(CliError::Validation("no input fields".into()));
    }
    let fields: Vec<FieldSample> = c.inputs.iter().map(|p| read_sample(p)).collect::<Result<_, _>>()?;
    let lags: Vec<usize> = (c.scales.0..=c.scales.1).map(|k| 1usize << k).collect();
    let rep = directional_holder(&fields, c.axis, &lags)?;
    Ok(report_outcome(&rep, &c.out))
}

/// Dyadic box sizes 2^{-1}..2^{-K}, K = ⌊log₂(min nodes − 1)⌋.
pub fn default_box_scales(grid: &GridSpec) -> (u32, u32) {
    let m = grid.shape().into_iter().min().unwrap_or(2).max(2) - 1;
    (1, (usize::BITS - 1 - m.leading_zeros()).max(1))
}

fn estimate_boxdim(c: &BoxdimConfig) -> Result<Outcome, CliError> {
    let f = read_sample(&c.input)?;
    let (lo, hi) = c.scales.unwrap_or_else(|| default_box_scales(&f.grid));
    let eps: Vec<f64> = (lo..=hi).map(|k| 0.5f64.powi(k as i32)).collect();
    let rep = box_dimension(&f, &eps)?;
    Ok(report_outcome(&rep, &c.out))
}

fn estimate_modulus(c: &ModulusConfig) -> Result<Outcome, CliError> {
    let f = read_sample(&c.input)?;
    let e = OperatorMatrix::with_positive_spectrum(f.meta.matrix.clone())?;
    let sys = PolarSystem::new(&e)?;
    let kappa = c.kappa.unwrap_or_else(|| modulus_kappa(f.meta.alpha, c.eps));
    let deltas: Vec<f64> = (c.deltas.0..=c.deltas.1).map(|k| 0.5f64.powi(k as i32)).collect();
    let rep = modulus_ratio(&f, &sys, kappa, &deltas)?;
    Ok(report_outcome(&rep, &c.out))
}

/// Four fixed points in [0.2, 0.8]^d.
pub fn default_points(d: usize) -> Vec<Vec<f64>> {
    (0..4).map(|k| (0..d).map(|j| 0.2 + 0.15 * ((k + 2 * j) % 5) as f64).collect()).collect()
}

fn verify_scaling(c: &ScalingConfig) -> Result<Outcome, CliError> {
    let e = c.matrix.operator()?;
    if c.points.iter().any(|p| p.len() != e.dim()) {
        return Err(CliError::Validation(format!("points must have {} coordinates", e.dim())));
    }
    let rep = match c.field.as_str() {
        "harmonizable" if c.alpha == 2.0 => return Err(CliError::Validation("α = 2 uses --field gaussian".into())),
        "harmonizable" => {
            check_alpha(c.alpha, false)?;
            let h = Harmonizable::new(c.alpha, e.clone(), &c.psi, c.eta)?;
            let mut sim = |pts: &[Vec<f64>], idx: u64| -> opsrf_core::Result<Vec<f64>> {
                let ens = build_ensemble(h.params.alpha, &h.sampler, c.terms, c.seed, idx)?;
                Ok(HarmonizableField::new(&ens, &h.psi, &h.params, &h.e)?.evaluate_points(pts)?.0)
            };
            scaling_verify(&mut sim, &e, c.c, c.exponent, &c.points, c.reps, c.seed)?
        }
        "gaussian" => {
            if c.alpha != 2.0 {
                return Err(CliError::Validation("the Gaussian field has α = 2".into()));
            }
            let mut vg = variogram(&e, &c.psi)?;
            let mut cache: Vec<(Vec<Vec<f64>>, GaussianField)> = Vec::new();
            let mut sim = |pts: &[Vec<f64>], idx: u64| -> opsrf_core::Result<Vec<f64>> {
                let k = match cache.iter().position(|(p, _)| p.as_slice() == pts) {
                    Some(k) => k,
                    None => {
                        cache.push((pts.to_vec(), GaussianField::new(&mut vg, pts)?));
                        cache.len() - 1
                    }
                };
                Ok(cache[k].1.draw(c.seed, idx))
            };
            scaling_verify(&mut sim, &e, c.c, c.exponent, &c.points, c.reps, c.seed)?
        }
        "moving-average" => {
            check_alpha(c.alpha, false)?;
            let phi = c.psi.build(&e)?;
            let mut sim = |pts: &[Vec<f64>], idx: u64| -> opsrf_core::Result<Vec<f64>> {
                let ens = MAEnsemble::build(c.alpha, e.dim(), c.terms, c.seed, idx)?;
                MovingAverageField::new(&ens, &phi)?.evaluate_points(pts)
            };
            scaling_verify(&mut sim, &e, c.c, c.exponent, &c.points, c.reps, c.seed)?
        }
        other => {
            return Err(CliError::Validation(format!(
                "unknown field '{other}' (harmonizable, gaussian or moving-average)"
            )))
        }
    };
    Ok(report_outcome(&rep, &c.out))
}

/// τ_E, ℓ_E and ‖·‖_E at a point, one per line.
pub fn polar_text(e: &OperatorMatrix, x: &[f64]) -> Result<String, CliError> {
    if x.len() != e.dim() {
        return Err(CliError::Validation(format!("point must have {} coordinates", e.dim())));
    }
    let sys = PolarSystem::new(e)?;
    let (tau, ell) = sys.tau_ell(x)?;
    let ell: Vec<String> = ell.iter().map(|v| v.to_string()).collect();
    Ok(format!("tau {tau}\nell {}\nnorm_E {}\n", ell.join(","), sys.norm_e(x)))
}

/// v²(h) for each h, as CSV rows.
pub fn variogram_text(e: &OperatorMatrix, psi: &PsiSpec, hs: &[Vec<f64>]) -> Result<String, CliError> {
    let mut vg = variogram(e, psi)?;
    let d = e.dim();
    let mut s: String = (1..=d).map(|j| format!("h{j},")).collect::<String>() + "variogram\n";
    for h in hs {
        if h.len() != d {
            return Err(CliError::Validation(format!("lag must have {d} coordinates")));
        }
        for v in h {
            let _ = write!(s, "{v},");
        }
        let _ = writeln!(s, "{}", vg.variogram(h)?);
    }
    if vg.flagged() {
        s.push_str("# warning: quadrature tail above tolerance\n");
    }
    Ok(s)
}
