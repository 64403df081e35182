//! Command-line front end: simulate, fit, reconstruct, calibrate, bench.
//!
//! Every command reads an optional JSON [`RunConfig`]; command-line flags override its
//! fields. Exit codes: 0 success, 2 validation, 3 numeric failure, 4 I/O.

use crate::airy_fit::{
    direct_fit, fit_least_squares, fit_least_squares_with, lambda_resonant_point, model_trace, report_to_json, AiryParams,
    FitBox, FitMethod, FitOptions,
};
use crate::error::Error;
use crate::forward_solver::{add_noise, synthesize_surface, SourceSpec, SurfaceTrace, TraceMeta};
use crate::inversion_pipeline::{
    assemble_profile, builtin_frequencies, builtin_sources, calibrate_bounds, calibrate_support, error_metrics, refine_bounds, RefinedBounds,
    fit_frequencies, parallel_map, BoundsEstimate, FrequencyPlan, ReconstructionOptions, ReconstructionResult,
    SupportEstimate,
};
use crate::waveguide_model::{parse_grid, uniform_grid, BuiltinId, Profile, ProfileSpec};
use clap::{Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// A failed command: message plus the exit code it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn validation(m: impl Into<String>) -> Self {
        CliError { code: EXIT_VALIDATION, message: m.into() }
    }
    fn io(m: impl Into<String>) -> Self {
        CliError { code: EXIT_IO, message: m.into() }
    }
    fn numeric(m: impl Into<String>) -> Self {
        CliError { code: EXIT_NUMERIC, message: m.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => EXIT_IO,
            Error::Domain(_) | Error::ForbiddenFrequency { .. } | Error::Support(_) | Error::Parse(_) => EXIT_VALIDATION,
            _ => EXIT_NUMERIC,
        };
        CliError { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// One JSON document per run. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Builtin id (h1..h7) or path to a profile file (JSON id/table, or CSV `x,h`).
    pub profile: Option<String>,
    /// Frequencies in grid notation "a:b:l".
    pub freqs: Option<String>,
    /// Explicit frequency list; takes precedence over `freqs`.
    pub frequencies: Option<Vec<f64>>,
    pub mode: Option<usize>,
    pub sources: Option<SourceSpec>,
    /// Source abscissae used to orient the reconstruction branches.
    pub source_positions: Option<Vec<f64>>,
    /// Surface sampling in grid notation, default "-8:8:3201".
    pub samples: Option<String>,
    /// Number of modes summed by the generator (default: propagative + 3 evanescent).
    pub n_max: Option<usize>,
    pub noise: Option<f64>,
    pub seed: Option<u64>,
    pub fit_box: Option<FitBox>,
    pub fit_method: Option<FitMethod>,
    pub out: Option<PathBuf>,
    /// Trace CSV for `fit`.
    pub trace: Option<PathBuf>,
    /// Directory written by `simulate`, read by `reconstruct`.
    pub traces: Option<PathBuf>,
    /// Width bounds (h_min, h_max) defining the band; defaults to the profile's.
    pub bounds: Option<(f64, f64)>,
    pub support: Option<(f64, f64)>,
    /// Slow-variation parameter used for the window radius; defaults to the profile's.
    pub eta: Option<f64>,
    pub r: Option<f64>,
    /// Bound-calibration scan, grid notation; default "30:33:30".
    pub scan: Option<String>,
    /// Sources of the bound scan, left and right of the defect.
    pub scan_sources: Option<(f64, f64)>,
    /// Support-sweep source positions, grid notation; default "-7:7:29".
    pub positions: Option<String>,
    /// Seeds per noise level in `bench`.
    pub seeds: Option<u64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> crate::Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    fn samples(&self) -> CliResult<Vec<f64>> {
        let g = parse_grid(self.samples.as_deref().unwrap_or("-8:8:3201"))?;
        if g.len() < 2 {
            return Err(CliError::validation("samples need at least two points"));
        }
        Ok(g)
    }

    fn noise(&self) -> CliResult<f64> {
        let a = self.noise.unwrap_or(0.0);
        if !(a >= 0.0) || !a.is_finite() {
            return Err(CliError::validation(format!("noise amplitude {a} must be finite and non-negative")));
        }
        Ok(a)
    }

    fn mode(&self) -> CliResult<usize> {
        match self.mode.unwrap_or(1) {
            0 => Err(CliError::validation("mode must be at least 1")),
            n => Ok(n),
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn builtin_id(&self) -> Option<BuiltinId> {
        self.profile.as_deref().and_then(|p| BuiltinId::parse(p).ok())
    }

    fn load_profile(&self) -> CliResult<Option<Profile>> {
        let Some(p) = self.profile.as_deref() else { return Ok(None) };
        if let Ok(id) = BuiltinId::parse(p) {
            return Ok(Some(Profile::builtin(id)));
        }
        let path = Path::new(p);
        if !path.exists() {
            return Err(CliError::validation(format!("profile `{p}` is neither h1..h7 nor an existing file")));
        }
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("profile {p}: {e}")))?;
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let profile = if is_csv {
            Profile::from_table(&parse_table_csv(&text).map_err(|e| CliError::io(format!("profile {p}: {e}")))?)?
        } else {
            ProfileSpec::from_json(&text)?.build()?
        };
        Ok(Some(profile))
    }

    fn frequencies(&self) -> CliResult<Vec<f64>> {
        let ks = if let Some(v) = &self.frequencies {
            v.clone()
        } else if let Some(g) = &self.freqs {
            parse_grid(g)?
        } else if let Some(id) = self.builtin_id() {
            builtin_frequencies(id)
        } else {
            return Err(CliError::validation("no frequencies: give --freqs or a builtin profile"));
        };
        if ks.is_empty() || ks.iter().any(|k| !(*k > 0.0) || !k.is_finite()) {
            return Err(CliError::validation("frequencies must be positive and finite"));
        }
        Ok(ks)
    }

    fn source_spec(&self) -> CliResult<SourceSpec> {
        let spec = match (&self.sources, self.builtin_id()) {
            (Some(s), _) => s.clone(),
            (None, Some(id)) => builtin_sources(id),
            (None, None) => return Err(CliError::validation("no sources: give `sources` in the config")),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn source_positions(&self, spec: &SourceSpec) -> Vec<f64> {
        if let Some(p) = &self.source_positions {
            return p.clone();
        }
        let mut v: Vec<f64> = spec.points.iter().map(|p| p.x).chain(spec.bumps.iter().map(|b| b.center)).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

fn parse_table_csv(text: &str) -> crate::Result<Vec<(f64, f64)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.chars().any(|c| c.is_ascii_alphabetic())) {
            continue;
        }
        let mut it = line.split(',').map(|s| s.trim().parse::<f64>());
        match (it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(h))) => rows.push((x, h)),
            _ => return Err(Error::Parse(format!("line {}: expected `x,h`", i + 1))),
        }
    }
    Ok(rows)
}

/// Trace as CSV with header `x,re,im`. Floats use the shortest exact representation,
/// so reading and re-writing reproduces the bytes.
pub fn trace_to_csv(trace: &SurfaceTrace) -> String {
    let mut s = String::with_capacity(48 * trace.len() + 16);
    s.push_str("x,re,im\n");
    for (x, v) in trace.abscissae.iter().zip(&trace.values) {
        let _ = writeln!(s, "{x},{},{}", v.re, v.im);
    }
    s
}

pub fn trace_from_csv(text: &str, k: f64) -> crate::Result<SurfaceTrace> {
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some("x,re,im") => {}
        Some(h) => return Err(Error::Parse(format!("expected header `x,re,im`, found `{h}`"))),
        None => return Err(Error::Parse("empty trace file".into())),
    }
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("line {}: bad number `{s}`", i + 2)));
        if f.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected three fields", i + 2)));
        }
        xs.push(parse(f[0])?);
        vs.push(Complex64::new(parse(f[1])?, parse(f[2])?));
    }
    if xs.is_empty() {
        return Err(Error::Parse("trace has no samples".into()));
    }
    SurfaceTrace::new(xs, vs, k)
}

/// Metadata written next to each trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub k: f64,
    pub samples: usize,
    pub meta: TraceMeta,
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_trace(trace: &SurfaceTrace, csv: &Path) -> crate::Result<()> {
    fs::write(csv, trace_to_csv(trace))?;
    let side = TraceSidecar { k: trace.k, samples: trace.len(), meta: trace.meta.clone() };
    fs::write(sidecar_path(csv), to_json(&side))?;
    Ok(())
}

/// Reads a trace CSV; k and provenance come from the sidecar when present (k = 0 otherwise).
/// Unreadable or malformed files are reported as I/O errors.
pub fn read_trace(csv: &Path) -> crate::Result<SurfaceTrace> {
    let text = fs::read_to_string(csv).map_err(|e| Error::Io(format!("{}: {e}", csv.display())))?;
    let side: Option<TraceSidecar> = fs::read_to_string(sidecar_path(csv)).ok().and_then(|t| serde_json::from_str(&t).ok());
    let mut trace =
        trace_from_csv(&text, side.as_ref().map_or(0.0, |s| s.k)).map_err(|e| Error::Io(format!("{}: {e}", csv.display())))?;
    if let Some(s) = side {
        trace.meta = s.meta;
    }
    Ok(trace)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

/// Written by `simulate`, read by `reconstruct`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub profile: String,
    pub mode: usize,
    pub frequencies: Vec<f64>,
    pub files: Vec<String>,
    pub sources: SourceSpec,
    pub noise: f64,
    pub seed: u64,
}

/// Generates one trace per frequency (in parallel) with per-frequency noise seeds seed + i.
pub fn simulate_traces(profile: &Arc<Profile>, ks: &[f64], spec: &SourceSpec, xs: &[f64], n_max: Option<usize>, noise: f64, seed: u64) -> crate::Result<Vec<SurfaceTrace>> {
    parallel_map(ks.len(), 0, |i| {
        let clean = synthesize_surface(profile, ks[i], spec, xs, n_max)?;
        add_noise(&clean, noise, seed.wrapping_add(i as u64))
    })
    .into_iter()
    .collect()
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Manifest> {
    let profile = Arc::new(cfg.load_profile()?.ok_or_else(|| CliError::validation("simulate needs --profile"))?);
    let ks = cfg.frequencies()?;
    let spec = cfg.source_spec()?;
    let xs = cfg.samples()?;
    let noise = cfg.noise()?;
    let seed = cfg.seed.unwrap_or(0);
    let mode = cfg.mode()?;
    let traces = simulate_traces(&profile, &ks, &spec, &xs, cfg.n_max, noise, seed)?;
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let mut files = Vec::new();
    for (i, t) in traces.iter().enumerate() {
        let name = format!("trace_{i:03}.csv");
        write_trace(t, &dir.join(&name)).map_err(CliError::from)?;
        files.push(name);
    }
    let manifest = Manifest { profile: profile.label.clone(), mode, frequencies: ks, files, sources: spec, noise, seed };
    write_file(&dir.join("manifest.json"), &to_json(&manifest))?;
    println!("wrote {} traces to {}", traces.len(), dir.display());
    Ok(manifest)
}

/// Fit of a single trace: report JSON plus Λ.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub report_json: String,
    pub lambda: Option<f64>,
}

pub fn cmd_fit(cfg: &RunConfig) -> CliResult<FitOutcome> {
    let path = cfg.trace.as_ref().ok_or_else(|| CliError::validation("fit needs --trace"))?;
    let trace = read_trace(path)?;
    let bx = cfg.fit_box.unwrap_or_default();
    bx.validate()?;
    let opts = FitOptions { method: cfg.fit_method.unwrap_or_default(), ..FitOptions::default() };
    let report = fit_least_squares_with(&trace, &bx, None, &opts)?;
    let json = to_json(&report_to_json(&report));
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    write_file(&dir.join("fit_report.json"), &json)?;
    match lambda_resonant_point(&report) {
        Ok(l) => {
            println!("{l}");
            Ok(FitOutcome { report_json: json, lambda: Some(l) })
        }
        Err(e) => Err(CliError::numeric(format!("{e} (report written to {})", dir.join("fit_report.json").display()))),
    }
}

fn load_manifest_traces(dir: &Path) -> CliResult<(Manifest, Vec<SurfaceTrace>)> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| CliError::io(format!("{}: {e}", mpath.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::io(format!("{}: {e}", mpath.display())))?;
    let traces = m.files.iter().map(|f| read_trace(&dir.join(f))).collect::<crate::Result<Vec<_>>>()?;
    Ok((m, traces))
}

/// Plot data `x,h_true,h_app`; h_true is empty when no ground truth is known.
pub fn plot_csv(result: &ReconstructionResult, truth: Option<&Profile>, xs: &[f64]) -> String {
    let mut s = String::from("x,h_true,h_app\n");
    for &x in xs {
        let t = truth.map(|p| p.h(x).to_string()).unwrap_or_default();
        let _ = writeln!(s, "{x},{t},{}", result.h_app(x));
    }
    s
}

pub fn cmd_reconstruct(cfg: &RunConfig) -> CliResult<ReconstructionResult> {
    let truth = cfg.load_profile()?;
    let (spec, traces) = match &cfg.traces {
        Some(dir) => {
            let (m, t) = load_manifest_traces(dir)?;
            (cfg.sources.clone().unwrap_or(m.sources), t)
        }
        None => {
            let p = Arc::new(truth.clone().ok_or_else(|| CliError::validation("reconstruct needs --traces or --profile"))?);
            let spec = cfg.source_spec()?;
            let t = simulate_traces(&p, &cfg.frequencies()?, &spec, &cfg.samples()?, cfg.n_max, cfg.noise()?, cfg.seed.unwrap_or(0))?;
            (spec, t)
        }
    };
    let (h_min, h_max) = cfg
        .bounds
        .or(truth.as_ref().map(|p| (p.h_min, p.h_max)))
        .ok_or_else(|| CliError::validation("width bounds unknown: give `bounds`"))?;
    let support = cfg
        .support
        .or(truth.as_ref().map(|p| p.support))
        .ok_or_else(|| CliError::validation("support unknown: give `support`"))?;
    let eta = cfg.eta.or(truth.as_ref().map(|p| p.eta)).ok_or_else(|| CliError::validation("η unknown: give `eta`"))?;
    let ks: Vec<f64> = traces.iter().map(|t| t.k).collect();
    let plan = FrequencyPlan::from_bounds(cfg.mode()?, h_min, h_max, ks)?;
    let mut opts = ReconstructionOptions::new(cfg.source_positions(&spec), eta);
    if let Some(r) = cfg.r {
        opts.r = r;
    }
    if let Some(b) = &cfg.fit_box {
        opts.fit_box = *b;
    }
    let (branches, fits) = fit_frequencies(&plan, &traces, support, &opts)?;
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let mut result = match assemble_profile(&plan, support, branches, fits.clone()) {
        Ok(r) => r,
        Err(e) => {
            write_file(&dir.join("fits.json"), &to_json(&fits))?;
            return Err(CliError::from(e));
        }
    };
    if let Some(p) = &truth {
        result.metrics = Some(error_metrics(&result, p));
    }
    write_file(&dir.join("reconstruction.json"), &to_json(&result))?;
    write_file(&dir.join("plot.csv"), &plot_csv(&result, truth.as_ref(), &uniform_grid(-8.0, 8.0, 1601)))?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    match &result.metrics {
        Some(m) => println!("relative L-infinity error {:.4}% ({} points)", 100.0 * m.relative_dense, result.points.len()),
        None => println!("{} resonant points reconstructed", result.points.len()),
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bounds: BoundsEstimate,
    pub refined: RefinedBounds,
    pub support: Option<SupportEstimate>,
    pub support_error: Option<String>,
}

/// Near-forbidden frequencies for the support sweep: just above Nπ/h_min and just below Nπ/h_max.
pub fn support_sweep_frequencies(mode: usize, h_min: f64, h_max: f64) -> [f64; 2] {
    let t = mode as f64 * PI;
    [t / h_min * (1.0 + 1e-5), t / h_max * (1.0 - 1e-5)]
}

/// Top-boundary point source used by both calibration sweeps.
pub fn calibration_source(x: f64) -> SourceSpec {
    SourceSpec::modal_point(x, &[], 1.0)
}

pub fn cmd_calibrate(cfg: &RunConfig) -> CliResult<CalibrationReport> {
    let profile = Arc::new(cfg.load_profile()?.ok_or_else(|| CliError::validation("calibrate needs --profile"))?);
    let xs = cfg.samples()?;
    let scan = parse_grid(cfg.scan.as_deref().unwrap_or("30:33:30"))?;
    let (sl, sr) = cfg.scan_sources.unwrap_or((-5.0, 5.0));
    let positions = parse_grid(cfg.positions.as_deref().unwrap_or("-7:7:29"))?;
    let generate = |k: f64, s: &SourceSpec| synthesize_surface(&profile, k, s, &xs, cfg.n_max);
    let (src_l, src_r) = (calibration_source(sl), calibration_source(sr));
    let bounds = calibrate_bounds(generate, &scan, &src_l, &src_r)?;
    let refined = refine_bounds(generate, &bounds, &src_l, &src_r, 60);
    let ks = support_sweep_frequencies(bounds.mode, refined.h_min, refined.h_max);
    let (support, support_error) = match calibrate_support(generate, &ks, &positions, calibration_source) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = CalibrationReport { bounds, refined, support, support_error };
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    write_file(&dir.join("calibration.json"), &to_json(&report))?;
    let b = &report.bounds;
    println!(
        "h_min {:.6} (peak k {:.4}), h_max {:.6} (peak k {:.4}), mode {}",
        b.h_min, b.k_peak_thin, b.h_max, b.k_peak_thick, b.mode
    );
    println!("refined h_min {:.8}, h_max {:.8}", report.refined.h_min, report.refined.h_max);
    match (&report.support, &report.support_error) {
        (Some(s), _) => println!("support [{}, {}]", s.a, s.b),
        (None, Some(e)) => return Err(CliError::numeric(format!("support sweep: {e}"))),
        _ => {}
    }
    Ok(report)
}

/// One reconstruction row of the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub profile: String,
    pub points: usize,
    pub relative_points: f64,
    pub relative_dense: f64,
    pub reference_percent: f64,
    pub bound_percent: f64,
    pub pass: bool,
    pub error: Option<String>,
}

/// Relative sup-norm error quoted for each builtin reconstruction, in percent.
pub fn reference_percent(id: BuiltinId) -> f64 {
    match id {
        BuiltinId::H1 => 0.49,
        BuiltinId::H2 => 0.94,
        BuiltinId::H3 => 0.40,
        BuiltinId::H4 => 1.6,
        BuiltinId::H5 => 0.57,
        BuiltinId::H6 => 0.81,
        BuiltinId::H7 => 0.97,
    }
}

/// Error budget per profile: 4% for the nonsmooth h4, 2% otherwise.
pub fn bound_percent(id: BuiltinId) -> f64 {
    if id == BuiltinId::H4 {
        4.0
    } else {
        2.0
    }
}

/// Noiseless reconstruction of one builtin profile with its own frequency set and sources.
pub fn bench_profile(id: BuiltinId, xs: &[f64]) -> BenchRow {
    let profile = Arc::new(Profile::builtin(id));
    let bound = bound_percent(id);
    let mut row = BenchRow {
        profile: id.name().to_string(),
        points: 0,
        relative_points: f64::NAN,
        relative_dense: f64::NAN,
        reference_percent: reference_percent(id),
        bound_percent: bound,
        pass: false,
        error: None,
    };
    let spec = builtin_sources(id);
    let run = || -> crate::Result<ReconstructionResult> {
        let ks = builtin_frequencies(id);
        let traces = simulate_traces(&profile, &ks, &spec, xs, None, 0.0, 0)?;
        let plan = FrequencyPlan::from_bounds(1, profile.h_min, profile.h_max, ks)?;
        let positions: Vec<f64> = spec.points.iter().map(|p| p.x).collect();
        let opts = ReconstructionOptions::new(positions, profile.eta);
        let mut r = crate::inversion_pipeline::reconstruct_profile(&plan, &traces, profile.support, &opts)?;
        r.metrics = Some(error_metrics(&r, &profile));
        Ok(r)
    };
    match run() {
        Ok(r) => {
            let m = r.metrics.expect("metrics set above");
            row.points = r.points.len();
            row.relative_points = m.relative_points;
            row.relative_dense = m.relative_dense;
            row.pass = 100.0 * m.relative_dense <= bound;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Median Λ-errors at one noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub level: f64,
    pub ls_t1: f64,
    pub ls_t2: f64,
    pub ls_t3: f64,
    pub direct_t3: f64,
    /// Median parameter-space distance of the t3 fits.
    pub params_t3: f64,
}

/// Reference parameters of the noise study, p₀ = (2+i, 1.4, −2.8).
pub fn reference_params() -> AiryParams {
    AiryParams::new(Complex64::new(2.0, 1.0), 1.4, -2.8)
}

/// Sampling windows t₁ (100 points on [−6, −1]), t₂ (100 on [−2, 6]), t₃ (200 on [−6, 6]).
pub fn noise_windows() -> [Vec<f64>; 3] {
    [uniform_grid(-6.0, -1.0, 100), uniform_grid(-2.0, 6.0, 100), uniform_grid(-6.0, 6.0, 200)]
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    0.5 * (v[n / 2] + v[(n - 1) / 2])
}

/// Noise study on p₀: for each level, `seeds` noisy traces per window, least-squares fits on
/// t₁, t₂, t₃ and the direct estimate on t₃. Failed fits count as infinite error.
pub fn noise_sweep(levels: &[f64], seeds: u64) -> Vec<NoiseRow> {
    let p0 = reference_params();
    let lambda0 = p0.x_star();
    let windows = noise_windows();
    let bx = FitBox::default();
    parallel_map(levels.len(), 0, |li| {
        let a = levels[li];
        let mut ls = [Vec::new(), Vec::new(), Vec::new()];
        let mut direct = Vec::new();
        let mut params = Vec::new();
        for (wi, w) in windows.iter().enumerate() {
            let clean = model_trace(&p0, w, 1.0);
            for seed in 0..seeds {
                let tr = add_noise(&clean, a, seed).expect("non-negative amplitude");
                match fit_least_squares(&tr, &bx, None) {
                    Ok(r) => {
                        ls[wi].push((r.params.x_star() - lambda0).abs());
                        if wi == 2 {
                            params.push(r.params.distance(&p0));
                        }
                    }
                    Err(_) => ls[wi].push(f64::INFINITY),
                }
                if wi == 2 {
                    direct.push(direct_fit(&tr).map_or(f64::INFINITY, |q| (q.x_star() - lambda0).abs()));
                }
            }
        }
        let [l1, l2, l3] = ls;
        NoiseRow { level: a, ls_t1: median(l1), ls_t2: median(l2), ls_t3: median(l3), direct_t3: median(direct), params_t3: median(params) }
    })
}

/// Noise levels 0.05, 0.10, …, 1.00.
pub fn noise_levels() -> Vec<f64> {
    (1..=20).map(|i| 0.05 * i as f64).collect()
}

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    let mut s = String::from("noise,ls_t1,ls_t2,ls_t3,direct_t3,params_t3\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.level, r.ls_t1, r.ls_t2, r.ls_t3, r.direct_t3, r.params_t3);
    }
    s
}

fn bench_markdown(rows: &[BenchRow], noise: &[NoiseRow]) -> String {
    let mut s = String::from("# Benchmark\n\n## Reconstruction (noiseless, relative sup-norm error)\n\n");
    s.push_str("| profile | points | error % | at points % | reference % | bound % | status |\n|---|---|---|---|---|---|---|\n");
    for r in rows {
        let status = match (&r.error, r.pass) {
            (Some(e), _) => format!("error: {e}"),
            (None, true) => "pass".into(),
            (None, false) => "fail".into(),
        };
        let _ = writeln!(
            s,
            "| {} | {} | {:.3} | {:.3} | {:.2} | {:.0} | {} |",
            r.profile,
            r.points,
            100.0 * r.relative_dense,
            100.0 * r.relative_points,
            r.reference_percent,
            r.bound_percent,
            status
        );
    }
    s.push_str("\n## Noise sweep (median Λ-error)\n\n| noise | LS t1 | LS t2 | LS t3 | direct t3 |\n|---|---|---|---|---|\n");
    for r in noise {
        let _ = writeln!(s, "| {:.2} | {:.5} | {:.5} | {:.5} | {:.5} |", r.level, r.ls_t1, r.ls_t2, r.ls_t3, r.direct_t3);
    }
    s
}

fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("profile,points,relative_dense,relative_points,reference_percent,bound_percent,pass,error\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.profile,
            r.points,
            r.relative_dense,
            r.relative_points,
            r.reference_percent,
            r.bound_percent,
            r.pass,
            r.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    s
}

pub fn cmd_bench(cfg: &RunConfig) -> CliResult<(Vec<BenchRow>, Vec<NoiseRow>)> {
    let xs = cfg.samples()?;
    let seeds = cfg.seeds.unwrap_or(32);
    if seeds == 0 {
        return Err(CliError::validation("seeds must be positive"));
    }
    let t0 = Instant::now();
    let rows: Vec<BenchRow> = BuiltinId::ALL.iter().map(|&id| bench_profile(id, &xs)).collect();
    log::info!("reconstructions done in {:.1?}", t0.elapsed());
    let noise = noise_sweep(&noise_levels(), seeds);
    log::info!("noise sweep done in {:.1?}", t0.elapsed());
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let md = bench_markdown(&rows, &noise);
    write_file(&dir.join("bench.md"), &md)?;
    write_file(&dir.join("bench.csv"), &bench_csv(&rows))?;
    write_file(&dir.join("noise_sweep.csv"), &noise_csv(&noise))?;
    print!("{md}");
    Ok((rows, noise))
}

#[derive(Parser, Debug)]
#[command(name = "airyguide", version, about = "Width reconstruction of slowly varying waveguides from locally resonant surface data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; flags override its fields
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Noise seed (trace i uses seed + i)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Relative noise amplitude
    #[arg(long, global = true)]
    noise: Option<f64>,
    /// h1..h7 or a profile file
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Frequencies as "a:b:l"
    #[arg(long, global = true, allow_hyphen_values = true)]
    freqs: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write surface traces (CSV + JSON metadata) for each frequency
    Simulate,
    /// Fit the Airy model to one trace and print Λ
    Fit {
        /// Trace CSV (x,re,im) with its JSON sidecar
        #[arg(long)]
        trace: Option<PathBuf>,
        /// lm or gd
        #[arg(long)]
        method: Option<String>,
    },
    /// Run the full reconstruction
    Reconstruct {
        /// Directory written by `simulate`
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Explosion sweeps for the width bounds and the support
    Calibrate {
        /// Frequency scan "a:b:l" [default: 30:33:30]
        #[arg(long, allow_hyphen_values = true)]
        scan: Option<String>,
        /// Source positions of the support sweep "a:b:l" [default: -7:7:29]
        #[arg(long, allow_hyphen_values = true)]
        positions: Option<String>,
    },
    /// Seven reconstructions plus the noise sweep
    Bench {
        /// Noise seeds per level [default: 32]
        #[arg(long)]
        seeds: Option<u64>,
    },
}

fn build_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(format!("config {}: {e}", p.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.noise.is_some() {
        cfg.noise = cli.noise;
    }
    if cli.profile.is_some() {
        cfg.profile = cli.profile.clone();
    }
    if cli.freqs.is_some() {
        cfg.freqs = cli.freqs.clone();
        cfg.frequencies = None;
    }
    match &cli.command {
        Command::Fit { trace, method } => {
            if trace.is_some() {
                cfg.trace = trace.clone();
            }
            if let Some(m) = method {
                cfg.fit_method = Some(match m.as_str() {
                    "lm" => FitMethod::LevenbergMarquardt,
                    "gd" => FitMethod::GradientDescent,
                    other => return Err(CliError::validation(format!("unknown fit method `{other}`"))),
                });
            }
        }
        Command::Reconstruct { traces } => {
            if traces.is_some() {
                cfg.traces = traces.clone();
            }
        }
        Command::Calibrate { scan, positions } => {
            if scan.is_some() {
                cfg.scan = scan.clone();
            }
            if positions.is_some() {
                cfg.positions = positions.clone();
            }
        }
        Command::Bench { seeds } => {
            if seeds.is_some() {
                cfg.seeds = *seeds;
            }
        }
        Command::Simulate => {}
    }
    cfg.noise()?;
    Ok(cfg)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let outcome = build_config(&cli).and_then(|cfg| match cli.command {
        Command::Simulate => cmd_simulate(&cfg).map(|_| ()),
        Command::Fit { .. } => cmd_fit(&cfg).map(|_| ()),
        Command::Reconstruct { .. } => cmd_reconstruct(&cfg).map(|_| ()),
        Command::Calibrate { .. } => cmd_calibrate(&cfg).map(|_| ()),
        Command::Bench { .. } => cmd_bench(&cfg).map(|_| ()),
    });
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("airyguide-cli-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn csv_round_trip_is_byte_exact() {
        let xs = uniform_grid(-1.0, 1.0, 7);
        let vs: Vec<Complex64> = xs.iter().map(|&x| Complex64::new(x.sin() / 3.0, 0.1 * x.exp())).collect();
        let t = SurfaceTrace::new(xs, vs, 31.4).unwrap();
        let a = trace_to_csv(&t);
        let b = trace_to_csv(&trace_from_csv(&a, 31.4).unwrap());
        assert_eq!(a, b);
        assert!(a.starts_with("x,re,im\n"));
    }

    #[test]
    fn malformed_traces_are_rejected() {
        assert!(trace_from_csv("", 1.0).is_err());
        assert!(trace_from_csv("x,re,im\n", 1.0).is_err());
        assert!(trace_from_csv("x,re,im\n0,1\n", 1.0).is_err());
        assert!(trace_from_csv("a,b,c\n0,1,2\n", 1.0).is_err());
    }

    #[test]
    fn empty_trace_file_is_io_exit() {
        let d = tmp("empty");
        let f = d.join("t.csv");
        fs::write(&f, "").unwrap();
        let code = run(["airyguide", "fit", "--trace", f.to_str().unwrap(), "--out", d.to_str().unwrap()]);
        assert_eq!(code, EXIT_IO);
    }

    #[test]
    fn missing_trace_directory_is_io_exit() {
        let d = tmp("missing");
        let code = run(["airyguide", "reconstruct", "--profile", "h3", "--traces", d.join("nope").to_str().unwrap()]);
        assert_eq!(code, EXIT_IO);
    }

    #[test]
    fn bad_flags_are_validation_exit() {
        assert_eq!(run(["airyguide", "simulate", "--noise", "-1", "--profile", "h1"]), EXIT_VALIDATION);
        assert_eq!(run(["airyguide", "frobnicate"]), EXIT_VALIDATION);
        assert_eq!(run(["airyguide", "simulate", "--profile", "h9"]), EXIT_VALIDATION);
    }

    #[test]
    fn forbidden_frequency_names_delta() {
        let cfg = RunConfig {
            profile: Some("h3".into()),
            frequencies: Some(vec![PI / Profile::builtin(BuiltinId::H3).h_max]),
            samples: Some("-8:8:41".into()),
            out: Some(tmp("forbidden")),
            ..RunConfig::default()
        };
        let e = cmd_simulate(&cfg).unwrap_err();
        assert_eq!(e.code, EXIT_VALIDATION);
        assert!(e.message.contains("delta"), "{}", e.message);
    }

    #[test]
    fn fit_prints_lambda_of_reference_trace() {
        let d = tmp("fit");
        let p0 = reference_params();
        let t = model_trace(&p0, &uniform_grid(-6.0, 6.0, 2001), 1.0);
        let f = d.join("p0.csv");
        write_trace(&t, &f).unwrap();
        let cfg = RunConfig { trace: Some(f), out: Some(d.clone()), ..RunConfig::default() };
        let out = cmd_fit(&cfg).unwrap();
        assert!((out.lambda.unwrap() + 2.0).abs() < 1e-6);
        assert!(d.join("fit_report.json").exists());
    }

    #[test]
    fn simulate_is_deterministic_and_round_trips() {
        let d1 = tmp("sim1");
        let d2 = tmp("sim2");
        let base = RunConfig {
            profile: Some("h4".into()),
            frequencies: Some(vec![31.1, 31.3]),
            sources: Some(SourceSpec::modal_point(6.0, &[(1, 1.0)], 0.0)),
            samples: Some("-8:8:161".into()),
            noise: Some(0.1),
            seed: Some(7),
            ..RunConfig::default()
        };
        cmd_simulate(&RunConfig { out: Some(d1.clone()), ..base.clone() }).unwrap();
        cmd_simulate(&RunConfig { out: Some(d2.clone()), ..base }).unwrap();
        for f in ["trace_000.csv", "trace_001.csv", "trace_000.json", "manifest.json"] {
            assert_eq!(fs::read(d1.join(f)).unwrap(), fs::read(d2.join(f)).unwrap(), "{f}");
        }
        let csv = fs::read_to_string(d1.join("trace_000.csv")).unwrap();
        let t = read_trace(&d1.join("trace_000.csv")).unwrap();
        assert_eq!(t.k, 31.1);
        assert_eq!(trace_to_csv(&t), csv);
    }

    #[test]
    fn config_flags_override_file() {
        let d = tmp("cfg");
        let c = d.join("run.json");
        fs::write(&c, r#"{"profile": "h1", "noise": 0.2, "seed": 3}"#).unwrap();
        let cli = Cli::try_parse_from(["airyguide", "simulate", "--config", c.to_str().unwrap(), "--noise", "0.4", "--freqs", "31:31.5:3"]).unwrap();
        let cfg = build_config(&cli).unwrap();
        assert_eq!(cfg.noise, Some(0.4));
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.profile.as_deref(), Some("h1"));
        assert_eq!(cfg.frequencies().unwrap(), vec![31.0, 31.25, 31.5]);
        assert!(RunConfig::from_json(r#"{"nonsense": 1}"#).is_err());
    }

    #[test]
    fn support_sweep_frequencies_straddle_the_band() {
        let [hi, lo] = support_sweep_frequencies(1, 0.098, 0.102);
        assert!(hi > PI / 0.098 && lo < PI / 0.102);
    }
}
