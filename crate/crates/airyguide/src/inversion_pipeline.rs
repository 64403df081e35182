//! Width reconstruction from multi-frequency surface traces.
//!
//! Per frequency: band-stop filter of the propagative modes, window around the
//! peak of |d|, Airy fit, resonant point. The (x*, Nπ/k) pairs are assembled into
//! a piecewise-linear width.

use crate::airy_fit::{fit_least_squares_with, lambda_resonant_point, FitBox, FitOptions, FitReport};
use crate::error::{Error, Result};
use crate::forward_solver::{mode_ode_oracle, reduced_source, synthesize_mode, SourceSpec, SurfaceTrace};
use crate::special_functions::airy;
use crate::waveguide_model::{classify_mode, uniform_grid, BuiltinId, Classification, Profile};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Mode index, admissible band and frequency set of a reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPlan {
    pub mode: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub frequencies: Vec<f64>,
}

impl FrequencyPlan {
    pub fn new(mode: usize, k_min: f64, k_max: f64, frequencies: Vec<f64>) -> Result<Self> {
        let plan = FrequencyPlan { mode, k_min, k_max, frequencies };
        plan.validate()?;
        Ok(plan)
    }

    /// Band from width bounds: k_min = Nπ/h_max, k_max = Nπ/h_min.
    pub fn from_bounds(mode: usize, h_min: f64, h_max: f64, frequencies: Vec<f64>) -> Result<Self> {
        if !(h_min > 0.0) || !(h_max >= h_min) {
            return Err(Error::Domain(format!("invalid width bounds [{h_min}, {h_max}]")));
        }
        let t = mode as f64 * PI;
        FrequencyPlan::new(mode, t / h_max, t / h_min, frequencies)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == 0 {
            return Err(Error::Domain("mode 0 never resonates".into()));
        }
        if self.frequencies.is_empty() {
            return Err(Error::Domain("empty frequency set".into()));
        }
        if self.frequencies.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("frequencies must be strictly increasing".into()));
        }
        if let Some(k) = self.frequencies.iter().find(|&&k| !(k > self.k_min && k < self.k_max)) {
            return Err(Error::Domain(format!("frequency {k} outside ({}, {})", self.k_min, self.k_max)));
        }
        Ok(())
    }

    pub fn width(&self, k: f64) -> f64 {
        self.mode as f64 * PI / k
    }
}

/// Frequency sets used for the builtin profiles.
pub fn builtin_frequencies(id: BuiltinId) -> Vec<f64> {
    match id {
        BuiltinId::H1 => uniform_grid(30.92, 31.93, 20),
        BuiltinId::H2 => uniform_grid(30.9, 31.95, 20),
        BuiltinId::H3 | BuiltinId::H4 => uniform_grid(31.01, 31.83, 20),
        BuiltinId::H5 => uniform_grid(30.65, 31.4, 20),
        BuiltinId::H6 => uniform_grid(31.42, 32.21, 20),
        BuiltinId::H7 => uniform_grid(30.97, 31.43, 20),
    }
}

/// Source positions used for the builtin profiles (interior y·δ plus top δ at each).
pub fn builtin_source_positions(id: BuiltinId) -> Vec<f64> {
    match id {
        BuiltinId::H1 | BuiltinId::H2 | BuiltinId::H3 | BuiltinId::H4 => vec![6.0],
        BuiltinId::H5 => vec![0.0],
        BuiltinId::H6 => vec![-6.0, 6.0],
        BuiltinId::H7 => vec![-1.5, 6.0],
    }
}

pub fn builtin_sources(id: BuiltinId) -> SourceSpec {
    SourceSpec::linear_with_top(&builtin_source_positions(id))
}

/// Builtin plan with the exact width bounds of the profile.
pub fn builtin_plan(id: BuiltinId) -> FrequencyPlan {
    let p = Profile::builtin(id);
    FrequencyPlan::from_bounds(1, p.h_min, p.h_max, builtin_frequencies(id)).expect("builtin sets lie inside the band")
}

fn uniform_step(t: &[f64]) -> Result<f64> {
    if t.len() < 2 {
        return Err(Error::ResampleRequired);
    }
    let step = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let tol = 1e-6 * step.abs();
    if t.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > tol) {
        return Err(Error::ResampleRequired);
    }
    Ok(step)
}

/// Removes the spatial-frequency bands |ω ∓ k_n| ≤ rel_half_width·k_n for each given k_n.
pub fn filter_resonant_component(
    trace: &SurfaceTrace,
    propagative_wavenumbers: &[f64],
    rel_half_width: f64,
) -> Result<SurfaceTrace> {
    let step = uniform_step(&trace.abscissae)?;
    if propagative_wavenumbers.is_empty() {
        return Ok(trace.clone());
    }
    let n = trace.len();
    let mut buf = trace.values.clone();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (m, v) in buf.iter_mut().enumerate() {
        let idx = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
        let omega = 2.0 * PI * idx / (n as f64 * step);
        for &kn in propagative_wavenumbers {
            let w = rel_half_width * kn;
            if (omega - kn).abs() <= w || (omega + kn).abs() <= w {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out = trace.clone();
    out.values = buf.into_iter().map(|v| v / n as f64).collect();
    Ok(out)
}

/// Wavenumbers k_n, n < N, of the propagative modes at the resonant width Nπ/k.
pub fn propagative_wavenumbers(k: f64, mode: usize) -> Vec<f64> {
    (0..mode)
        .map(|n| k * (1.0 - (n as f64 / mode as f64).powi(2)).sqrt())
        .filter(|&v| v > 0.0)
        .collect()
}

/// R = r·η^{-1/3}.
pub fn window_radius(r: f64, eta: f64) -> f64 {
    r * eta.powf(-1.0 / 3.0)
}

/// Sub-trace on [x_max − R, x_max + R] around the peak of |d|.
pub fn select_window(trace: &SurfaceTrace, r: f64, eta: f64) -> Result<SurfaceTrace> {
    if trace.is_empty() {
        return Err(Error::InsufficientWindow("empty trace".into()));
    }
    if !(r > 0.0) || !(eta > 0.0) {
        return Err(Error::Domain(format!("window needs r > 0 and η > 0, got r = {r}, η = {eta}")));
    }
    let radius = window_radius(r, eta);
    let imax = (0..trace.len()).max_by(|&a, &b| trace.values[a].norm().total_cmp(&trace.values[b].norm())).unwrap();
    let xm = trace.abscissae[imax];
    let (lo, hi) = (xm - radius, xm + radius);
    let mut out = trace.restrict(lo, hi);
    let (t0, t1) = (trace.abscissae[0], trace.abscissae[trace.len() - 1]);
    if lo < t0 || hi > t1 {
        out.meta.warnings.push(format!(
            "window [{lo:.4}, {hi:.4}] truncated to the trace extent [{t0:.4}, {t1:.4}]"
        ));
    }
    Ok(out)
}

/// Side of a source on which one branch of resonant points is sought.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub source: f64,
    /// -1 for the branch left of the source (h increasing through x*), +1 for the right one.
    pub direction: f64,
    pub interval: (f64, f64),
}

/// Branches between each source and its neighbors (midpoints), kept when they meet the support.
pub fn branches_for_sources(sources: &[f64], support: (f64, f64), extent: (f64, f64), gap: f64) -> Vec<Branch> {
    let mut s: Vec<f64> = sources.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for (i, &x) in s.iter().enumerate() {
        let left_end = if i == 0 { extent.0 } else { 0.5 * (s[i - 1] + x) };
        let right_end = if i + 1 == s.len() { extent.1 } else { 0.5 * (s[i + 1] + x) };
        for (dir, iv) in [(-1.0, (left_end, x - gap)), (1.0, (x + gap, right_end))] {
            let meets = iv.1 > iv.0 && iv.0 < support.1 && iv.1 > support.0;
            if meets {
                out.push(Branch { source: x, direction: dir, interval: iv });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionOptions {
    pub sources: Vec<f64>,
    pub r: f64,
    /// Data are extracted on Γ_{R'} with R' = extraction_factor·R.
    pub extraction_factor: f64,
    pub eta: f64,
    pub fit_box: FitBox,
    pub fit: FitOptions,
    pub max_fit_points: usize,
    pub source_gap: f64,
    pub max_relative_residual: f64,
    pub filter_rel_half_width: f64,
    pub threads: usize,
}

impl ReconstructionOptions {
    pub fn new(sources: Vec<f64>, eta: f64) -> Self {
        ReconstructionOptions {
            sources,
            r: 0.2,
            extraction_factor: 1.5,
            eta,
            fit_box: FitBox::default(),
            fit: FitOptions::default(),
            max_fit_points: 400,
            source_gap: 0.25,
            max_relative_residual: 0.5,
            filter_rel_half_width: 0.15,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedPoint {
    pub k: f64,
    pub x_star: f64,
    pub width: f64,
    pub branch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyFit {
    pub k: f64,
    pub branch: usize,
    pub window: (f64, f64),
    pub report: Option<FitReport>,
    pub x_star: Option<f64>,
    pub relative_residual: Option<f64>,
    pub dropped: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub linf_points: f64,
    pub linf_dense: f64,
    pub relative_points: f64,
    pub relative_dense: f64,
    pub h_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub plan: FrequencyPlan,
    pub support: (f64, f64),
    pub branches: Vec<Branch>,
    pub points: Vec<ReconstructedPoint>,
    pub anchors: [(f64, f64); 2],
    pub breakpoints: Vec<(f64, f64)>,
    pub fits: Vec<FrequencyFit>,
    pub metrics: Option<Metrics>,
    pub warnings: Vec<String>,
}

impl ReconstructionResult {
    /// Piecewise-linear width, constant beyond the anchors.
    pub fn h_app(&self, x: f64) -> f64 {
        piecewise_linear(&self.breakpoints, x)
    }
}

fn piecewise_linear(bp: &[(f64, f64)], x: f64) -> f64 {
    if x <= bp[0].0 {
        return bp[0].1;
    }
    if x >= bp[bp.len() - 1].0 {
        return bp[bp.len() - 1].1;
    }
    let i = bp.partition_point(|p| p.0 <= x) - 1;
    let (x0, y0) = bp[i];
    let (x1, y1) = bp[i + 1];
    if x1 == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

fn decimate(trace: &SurfaceTrace, max_points: usize) -> SurfaceTrace {
    if max_points == 0 || trace.len() <= max_points {
        return trace.clone();
    }
    let stride = trace.len().div_ceil(max_points);
    let mut out = trace.clone();
    out.abscissae = trace.abscissae.iter().step_by(stride).copied().collect();
    out.values = trace.values.iter().step_by(stride).copied().collect();
    out
}

/// Filter, window and fit one trace on one branch; returns the fit record.
pub fn fit_branch(trace: &SurfaceTrace, plan: &FrequencyPlan, branch: &Branch, bi: usize, opts: &ReconstructionOptions) -> FrequencyFit {
    let k = trace.k;
    let mut rec = FrequencyFit {
        k,
        branch: bi,
        window: (f64::NAN, f64::NAN),
        report: None,
        x_star: None,
        relative_residual: None,
        dropped: None,
    };
    let filtered = match filter_resonant_component(trace, &propagative_wavenumbers(k, plan.mode), opts.filter_rel_half_width) {
        Ok(f) => f,
        Err(e) => {
            rec.dropped = Some(format!("filter: {e}"));
            return rec;
        }
    };
    let part = filtered.restrict(branch.interval.0, branch.interval.1);
    let oriented = if branch.direction > 0.0 { part.mirrored() } else { part };
    let window = match select_window(&oriented, opts.r * opts.extraction_factor, opts.eta) {
        Ok(w) if w.len() >= 10 => w,
        Ok(w) => {
            rec.dropped = Some(format!("window holds {} samples", w.len()));
            return rec;
        }
        Err(e) => {
            rec.dropped = Some(format!("window: {e}"));
            return rec;
        }
    };
    let (w0, w1) = (window.abscissae[0], window.abscissae[window.len() - 1]);
    rec.window = if branch.direction > 0.0 { (-w1, -w0) } else { (w0, w1) };
    let data = decimate(&window, opts.max_fit_points);
    let report = match fit_least_squares_with(&data, &opts.fit_box, None, &opts.fit) {
        Ok(r) => r,
        Err(e) => {
            rec.dropped = Some(format!("fit: {e}"));
            return rec;
        }
    };
    let rel = report.residual_l2 / data.l2().max(f64::MIN_POSITIVE);
    rec.relative_residual = Some(rel);
    let lambda = lambda_resonant_point(&report);
    rec.report = Some(report);
    let lambda = match lambda {
        Ok(l) => l,
        Err(e) => {
            rec.dropped = Some(format!("{e}"));
            return rec;
        }
    };
    let x_star = if branch.direction > 0.0 { -lambda } else { lambda };
    rec.x_star = Some(x_star);
    if rel > opts.max_relative_residual {
        rec.dropped = Some(format!("relative residual {rel:.3} exceeds {}", opts.max_relative_residual));
    } else if !(x_star > branch.interval.0 && x_star < branch.interval.1) {
        rec.dropped = Some(format!(
            "x* = {x_star:.4} outside the branch interval [{:.4}, {:.4}]",
            branch.interval.0, branch.interval.1
        ));
    }
    rec
}

fn run_parallel<T: Send, F: Fn(usize) -> T + Sync>(count: usize, threads: usize, f: F) -> Vec<T> {
    let threads = if threads == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        threads
    }
    .min(count.max(1));
    if threads <= 1 {
        return (0..count).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..count).map(|_| None).collect();
    let chunk = count.div_ceil(threads);
    std::thread::scope(|scope| {
        for (c, part) in slots.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (j, slot) in part.iter_mut().enumerate() {
                    *slot = Some(f(c * chunk + j));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// Runs `f` over indices on worker threads, preserving index order in the output.
pub fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(count: usize, threads: usize, f: F) -> Vec<T> {
    run_parallel(count, threads, f)
}

/// Full reconstruction from one trace per planned frequency.
pub fn reconstruct_profile(
    plan: &FrequencyPlan,
    traces: &[SurfaceTrace],
    support: (f64, f64),
    opts: &ReconstructionOptions,
) -> Result<ReconstructionResult> {
    let (branches, fits) = fit_frequencies(plan, traces, support, opts)?;
    assemble_profile(plan, support, branches, fits)
}

/// Per-frequency, per-branch fits (the parallel phase of the reconstruction).
pub fn fit_frequencies(
    plan: &FrequencyPlan,
    traces: &[SurfaceTrace],
    support: (f64, f64),
    opts: &ReconstructionOptions,
) -> Result<(Vec<Branch>, Vec<FrequencyFit>)> {
    plan.validate()?;
    if traces.len() != plan.frequencies.len() {
        return Err(Error::Domain(format!(
            "{} traces for {} planned frequencies",
            traces.len(),
            plan.frequencies.len()
        )));
    }
    if !(support.1 > support.0) {
        return Err(Error::Domain(format!("empty support [{}, {}]", support.0, support.1)));
    }
    if opts.sources.is_empty() {
        return Err(Error::Domain("at least one source position is needed".into()));
    }
    let extent = traces.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, t| {
        (acc.0.min(t.abscissae[0]), acc.1.max(t.abscissae[t.len() - 1]))
    });
    let branches = branches_for_sources(&opts.sources, support, extent, opts.source_gap);
    if branches.is_empty() {
        return Err(Error::Reconstruction("no source branch meets the support".into()));
    }
    let jobs: Vec<(usize, usize)> =
        (0..traces.len()).flat_map(|ti| (0..branches.len()).map(move |bi| (ti, bi))).collect();
    let fits = run_parallel(jobs.len(), opts.threads, |j| {
        let (ti, bi) = jobs[j];
        fit_branch(&traces[ti], plan, &branches[bi], bi, opts)
    });
    Ok((branches, fits))
}

/// Gathers surviving fits into resonant points and assembles the piecewise-linear width.
pub fn assemble_profile(
    plan: &FrequencyPlan,
    support: (f64, f64),
    branches: Vec<Branch>,
    fits: Vec<FrequencyFit>,
) -> Result<ReconstructionResult> {
    let mut warnings = Vec::new();
    let mut points = Vec::new();
    for f in &fits {
        match (&f.dropped, f.x_star) {
            (None, Some(x)) => {
                if x < support.0 || x > support.1 {
                    warnings.push(format!("k = {:.4}: x* = {x:.4} outside the support, dropped", f.k));
                    continue;
                }
                points.push(ReconstructedPoint { k: f.k, x_star: x, width: plan.width(f.k), branch: f.branch });
            }
            (Some(reason), _) => {
                log::info!("k = {:.4}, branch {}: dropped ({reason})", f.k, f.branch);
            }
            _ => {}
        }
    }
    // monotone consistency per branch
    for (bi, b) in branches.iter().enumerate() {
        let mut pts: Vec<&ReconstructedPoint> = points.iter().filter(|p| p.branch == bi).collect();
        pts.sort_by(|a, c| a.k.total_cmp(&c.k));
        let violations = pts
            .windows(2)
            .filter(|w| (w[1].x_star - w[0].x_star) * b.direction < 0.0)
            .count();
        if violations > 1 {
            warnings.push(format!(
                "branch {bi} (source {}, side {}): {violations} monotonicity violations",
                b.source, b.direction
            ));
        }
    }
    if points.len() < 3 {
        return Err(Error::Reconstruction(format!(
            "only {} of {} frequencies produced a resonant point",
            points.len(),
            plan.frequencies.len()
        )));
    }
    points.sort_by(|a, c| a.x_star.total_cmp(&c.x_star));
    let breakpoints_inner = merge_branches(&points, branches.len());
    let anchors = anchor_widths(plan, support, &points, &branches);
    let mut breakpoints = vec![anchors[0]];
    breakpoints.extend(breakpoints_inner.into_iter().filter(|p| p.0 > support.0 && p.0 < support.1));
    breakpoints.push(anchors[1]);
    Ok(ReconstructionResult {
        plan: plan.clone(),
        support,
        branches,
        points,
        anchors,
        breakpoints,
        fits,
        metrics: None,
        warnings,
    })
}

/// Union of per-branch interpolants, averaged where branches overlap.
fn merge_branches(points: &[ReconstructedPoint], nb: usize) -> Vec<(f64, f64)> {
    let per: Vec<Vec<(f64, f64)>> = (0..nb)
        .map(|b| {
            let mut v: Vec<(f64, f64)> = points.iter().filter(|p| p.branch == b).map(|p| (p.x_star, p.width)).collect();
            v.sort_by(|a, c| a.0.total_cmp(&c.0));
            v
        })
        .filter(|v| !v.is_empty())
        .collect();
    let mut xs: Vec<f64> = points.iter().map(|p| p.x_star).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.into_iter()
        .map(|x| {
            let covering: Vec<f64> = per
                .iter()
                .filter(|v| x >= v[0].0 && x <= v[v.len() - 1].0)
                .map(|v| piecewise_linear(v, x))
                .collect();
            (x, covering.iter().sum::<f64>() / covering.len() as f64)
        })
        .collect()
}

/// Anchor widths at the support ends: Nπ/k_max where the outermost branch climbs away from
/// the end, Nπ/k_min where it descends.
fn anchor_widths(plan: &FrequencyPlan, support: (f64, f64), points: &[ReconstructedPoint], branches: &[Branch]) -> [(f64, f64); 2] {
    let thin = plan.mode as f64 * PI / plan.k_max;
    let thick = plan.mode as f64 * PI / plan.k_min;
    let first = &branches[points[0].branch];
    let last = &branches[points[points.len() - 1].branch];
    // left-of-source branches have h increasing through x*
    let left = if first.direction < 0.0 { thin } else { thick };
    let right = if last.direction < 0.0 { thick } else { thin };
    [(support.0, left), (support.1, right)]
}

/// Sup-norm errors at the reconstructed points and on a dense grid over the support.
pub fn error_metrics(result: &ReconstructionResult, truth: &Profile) -> Metrics {
    let linf_points = result
        .points
        .iter()
        .map(|p| (result.h_app(p.x_star) - truth.h(p.x_star)).abs())
        .fold(0.0, f64::max);
    let (a, b) = result.support;
    let linf_dense = uniform_grid(a, b, 4001)
        .into_iter()
        .map(|x| (result.h_app(x) - truth.h(x)).abs())
        .fold(0.0, f64::max);
    Metrics {
        linf_points,
        linf_dense,
        relative_points: linf_points / truth.h_max,
        relative_dense: linf_dense / truth.h_max,
        h_max: truth.h_max,
    }
}

/// ∫_a^b |d|² dt by the trapezoid rule on the samples inside [a, b], square-rooted.
pub fn l2_integral(trace: &SurfaceTrace, a: f64, b: f64) -> f64 {
    let t = &trace.abscissae;
    let mut s = 0.0;
    for i in 0..t.len().saturating_sub(1) {
        if t[i] >= a && t[i + 1] <= b {
            s += 0.5 * (t[i + 1] - t[i]) * (trace.values[i].norm_sqr() + trace.values[i + 1].norm_sqr());
        }
    }
    s.sqrt()
}

fn median(v: &[f64]) -> f64 {
    let mut w: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if w.is_empty() {
        return f64::NAN;
    }
    w.sort_by(f64::total_cmp);
    let n = w.len();
    0.5 * (w[n / 2] + w[(n - 1) / 2])
}

/// Indices of local maxima exceeding `factor` times the median.
pub fn explosion_peaks(norms: &[f64], factor: f64) -> Vec<usize> {
    explosion_peaks_over(norms, factor, median(norms))
}

/// Local maxima exceeding `factor` times an externally supplied background level.
pub fn explosion_peaks_over(norms: &[f64], factor: f64, background: f64) -> Vec<usize> {
    (0..norms.len())
        .filter(|&i| {
            let v = norms[i];
            let left = i == 0 || norms[i - 1].is_nan() || v > norms[i - 1];
            let right = i + 1 == norms.len() || norms[i + 1].is_nan() || v >= norms[i + 1];
            v.is_finite() && left && right && v > factor * background
        })
        .collect()
}

fn onset_background(norms: &[f64], i: usize) -> f64 {
    if i >= 3 {
        median(&norms[..i])
    } else {
        median(norms)
    }
}

/// Local maxima exceeding `factor` times the median of the scan values below them in k.
///
/// Above the cutoff on the source's plateau the mode propagates and the norm stays high
/// for the rest of the band, so the median of the whole scan sits on that plateau rather
/// than on the quiet pre-cutoff level. Peaks with fewer than three predecessors fall back
/// to the whole-scan median.
pub fn onset_peaks(norms: &[f64], factor: f64) -> Vec<usize> {
    let all = explosion_peaks_over(norms, factor, 0.0);
    all.into_iter().filter(|&i| norms[i] > factor * onset_background(norms, i)).collect()
}

/// First index of the run of samples above threshold that ends at `peak`.
pub fn onset_index(norms: &[f64], peak: usize, factor: f64) -> usize {
    let level = factor * onset_background(norms, peak);
    let mut j = peak;
    while j > 0 && norms[j - 1] > level {
        j -= 1;
    }
    j
}

pub const EXPLOSION_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsEstimate {
    pub h_min: f64,
    pub h_max: f64,
    pub mode: usize,
    pub k_peak_thin: f64,
    pub k_peak_thick: f64,
    /// Whether the left source sits on the thin side.
    pub left_is_thin: bool,
    pub scan: Vec<f64>,
    pub norms_left: Vec<f64>,
    pub norms_right: Vec<f64>,
}

fn scan_norms<G>(generate: &G, ks: &[f64], source: &SourceSpec, range: (f64, f64)) -> Vec<f64>
where
    G: Fn(f64, &SourceSpec) -> Result<SurfaceTrace> + Sync,
{
    run_parallel(ks.len(), 0, |i| match generate(ks[i], source) {
        Ok(t) => l2_integral(&t, range.0, range.1),
        Err(_) => f64::NAN,
    })
}

/// Explosion scan for the width bounds. `generate(k, source)` measures one surface trace.
pub fn calibrate_bounds<G>(generate: G, k_scan: &[f64], source_left: &SourceSpec, source_right: &SourceSpec) -> Result<BoundsEstimate>
where
    G: Fn(f64, &SourceSpec) -> Result<SurfaceTrace> + Sync,
{
    if k_scan.len() < 3 {
        return Err(Error::Calibration("scan needs at least three frequencies".into()));
    }
    let range = (-8.0, 8.0);
    let nl = scan_norms(&generate, k_scan, source_left, range);
    let nr = scan_norms(&generate, k_scan, source_right, range);
    // The strongest explosion per side; its position is the onset of the run above
    // threshold, since on a coarse scan the maximum can sit on a standing-wave bump
    // above the cutoff.
    let pick = |norms: &[f64], side: &str| -> Result<f64> {
        let peak = onset_peaks(norms, EXPLOSION_FACTOR)
            .into_iter()
            .max_by(|&a, &b| norms[a].total_cmp(&norms[b]))
            .ok_or_else(|| Error::Calibration(format!("no explosion peak for the {side} source")))?;
        Ok(k_scan[onset_index(norms, peak, EXPLOSION_FACTOR)])
    };
    let kl = pick(&nl, "left")?;
    let kr = pick(&nr, "right")?;
    // mode index from the octave multiplicity of the two explosions
    let lowest = kl.min(kr);
    let order = |k: f64| ((k / lowest).round() as usize).max(1);
    let (nl_mode, nr_mode) = (order(kl), order(kr));
    let el = nl_mode as f64 * PI / kl;
    let er = nr_mode as f64 * PI / kr;
    let left_is_thin = el <= er;
    let (h_min, k_thin, h_max, k_thick) = if left_is_thin { (el, kl, er, kr) } else { (er, kr, el, kl) };
    Ok(BoundsEstimate {
        h_min,
        h_max,
        mode: nl_mode.min(nr_mode),
        k_peak_thin: k_thin,
        k_peak_thick: k_thick,
        left_is_thin,
        scan: k_scan.to_vec(),
        norms_left: nl,
        norms_right: nr,
    })
}

/// Width bounds after refining both explosions inside one scan step of the detected onsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedBounds {
    pub h_min: f64,
    pub h_max: f64,
    pub k_thin: f64,
    pub k_thick: f64,
}

/// The norm is singular at the cutoff from both sides, so maximizing it on
/// [k_onset − step, k_onset + step] converges to Nπ/h far below the scan resolution.
pub fn refine_bounds<G>(generate: G, est: &BoundsEstimate, source_left: &SourceSpec, source_right: &SourceSpec, iterations: usize) -> RefinedBounds
where
    G: Fn(f64, &SourceSpec) -> Result<SurfaceTrace>,
{
    let step = if est.scan.len() > 1 { (est.scan[est.scan.len() - 1] - est.scan[0]) / (est.scan.len() - 1) as f64 } else { 0.0 };
    let (thin_src, thick_src) = if est.left_is_thin { (source_left, source_right) } else { (source_right, source_left) };
    let k_thin = refine_peak(&generate, thin_src, est.k_peak_thin - step, est.k_peak_thin + step, iterations);
    let k_thick = refine_peak(&generate, thick_src, est.k_peak_thick - step, est.k_peak_thick + step, iterations);
    let t = est.mode as f64 * PI;
    RefinedBounds { h_min: t / k_thin, h_max: t / k_thick, k_thin, k_thick }
}

/// Golden-section refinement of an explosion peak between two scan neighbors.
pub fn refine_peak<G>(generate: G, source: &SourceSpec, lo: f64, hi: f64, iterations: usize) -> f64
where
    G: Fn(f64, &SourceSpec) -> Result<SurfaceTrace>,
{
    let f = |k: f64| generate(k, source).map(|t| l2_integral(&t, -8.0, 8.0)).unwrap_or(f64::INFINITY);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iterations {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEstimate {
    pub a: f64,
    pub b: f64,
    pub positions: Vec<f64>,
    pub norms: Vec<Vec<f64>>,
    pub exploding: Vec<bool>,
}

/// Source sweep at near-forbidden frequencies; the support is the hull of the quiet positions.
pub fn calibrate_support<G, S>(generate: G, k_fixed: &[f64], positions: &[f64], make_source: S) -> Result<SupportEstimate>
where
    G: Fn(f64, &SourceSpec) -> Result<SurfaceTrace> + Sync,
    S: Fn(f64) -> SourceSpec + Sync,
{
    if positions.len() < 3 || k_fixed.is_empty() {
        return Err(Error::Support("sweep needs three positions and one frequency".into()));
    }
    let mut all = Vec::new();
    let mut exploding = vec![false; positions.len()];
    for &k in k_fixed {
        let norms = run_parallel(positions.len(), 0, |i| match generate(k, &make_source(positions[i])) {
            Ok(t) => l2_integral(&t, -8.0, 8.0),
            Err(_) => f64::INFINITY,
        });
        let med = median(&norms);
        for (e, &v) in exploding.iter_mut().zip(&norms) {
            if v > EXPLOSION_FACTOR * med {
                *e = true;
            }
        }
        all.push(norms);
    }
    if !exploding.iter().any(|&e| e) {
        return Err(Error::Support("no source position produced an explosion".into()));
    }
    let quiet: Vec<f64> = positions.iter().zip(&exploding).filter(|(_, &e)| !e).map(|(&p, _)| p).collect();
    if quiet.is_empty() {
        return Err(Error::Support("every source position exploded".into()));
    }
    Ok(SupportEstimate {
        a: quiet.iter().copied().fold(f64::INFINITY, f64::min),
        b: quiet.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        positions: positions.to_vec(),
        norms: all,
        exploding,
    })
}

/// Misfit between one resonant mode and its local Airy model with the Taylor z and α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorMisfit {
    pub x_star: f64,
    pub alpha: f64,
    pub z: Complex64,
    pub radius: f64,
    pub misfit: f64,
    pub relative: f64,
}

/// ‖u_N − z·Ai(α(x* − ·))‖ on Γ_R(x*), u_N from the mode-ODE oracle driven by δ_s φ_N.
pub fn taylor_misfit(profile: &Arc<Profile>, k: f64, mode: usize, source: f64, r: f64, eta: f64, grid_step: f64) -> Result<TaylorMisfit> {
    let ctx = classify_mode(mode, k, profile)?;
    if ctx.classification != Classification::LocallyResonant {
        return Err(Error::Domain(format!("mode {mode} is not locally resonant at k = {k}")));
    }
    let side = if ctx.resonant_points.iter().any(|p| p.x < source) { -1.0 } else { 1.0 };
    let ctx = ctx.designate_on_side(source, side);
    let tp = ctx.turning_point().ok_or_else(|| Error::Domain("no turning point".into()))?;
    let xs = tp.x;
    let h = profile.h(xs);
    let hp = profile.h_prime(xs).abs();
    let alpha = (2.0 * (mode as f64 * PI).powi(2) * hp / h.powi(3)).cbrt();
    let spec = SourceSpec::modal_point(source, &[(mode, 1.0)], 0.0);
    let g = reduced_source(&spec, mode, profile);
    let u_star = synthesize_mode(&ctx, &g, &[xs])?[0];
    let z = u_star / airy(0.0).ai;
    let radius = window_radius(r, eta);
    let exact = mode_ode_oracle(profile, k, mode, &g, (xs - radius, xs + radius), grid_step)?;
    let o = tp.orientation;
    let mut diff = exact.clone();
    for (v, &t) in diff.values.iter_mut().zip(&exact.abscissae) {
        *v -= z * airy(alpha * o * (xs - t)).ai;
    }
    let misfit = l2_integral(&diff, xs - radius, xs + radius);
    let norm = l2_integral(&exact, xs - radius, xs + radius);
    Ok(TaylorMisfit { x_star: xs, alpha, z, radius, misfit, relative: misfit / norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airy_fit::{model_trace, AiryParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn window_radius_matches_formula() {
        assert_abs_diff_eq!(window_radius(0.2, 8e-4), 2.1544346900318843, epsilon = 1e-12);
    }

    #[test]
    fn window_centers_on_peak_and_warns_at_edges() {
        let p = AiryParams::new(Complex64::new(1.0, 0.0), 1.3, 0.65);
        let t = uniform_grid(-6.0, 6.0, 1201);
        let tr = model_trace(&p, &t, 1.0);
        let w = select_window(&tr, 0.2, 8e-4).unwrap();
        let peak = (p.beta - crate::special_functions::airy_global_max().0) / p.alpha;
        let center = 0.5 * (w.abscissae[0] + w.abscissae[w.len() - 1]);
        assert!((center - peak).abs() <= 0.011, "{center} vs {peak}");
        assert!(w.meta.warnings.is_empty());
        let mono = SurfaceTrace::new(t.clone(), t.iter().map(|&x| Complex64::new(x.exp(), 0.0)).collect(), 1.0).unwrap();
        let w = select_window(&mono, 0.2, 8e-4).unwrap();
        assert_eq!(*w.abscissae.last().unwrap(), 6.0);
        assert_eq!(w.meta.warnings.len(), 1);
    }

    #[test]
    fn filter_without_bands_is_identity() {
        let t = uniform_grid(-4.0, 4.0, 801);
        let tr = SurfaceTrace::new(t.clone(), t.iter().map(|&x| Complex64::new(x.sin(), x.cos())).collect(), 1.0).unwrap();
        let f = filter_resonant_component(&tr, &[], 0.15).unwrap();
        assert_eq!(f.values, tr.values);
    }

    #[test]
    fn filter_rejects_nonuniform_samples() {
        let t = vec![0.0, 0.1, 0.25, 0.3];
        let tr = SurfaceTrace::new(t, vec![Complex64::new(1.0, 0.0); 4], 1.0).unwrap();
        assert_eq!(filter_resonant_component(&tr, &[3.0], 0.15), Err(Error::ResampleRequired));
    }

    #[test]
    fn filter_removes_plane_wave() {
        let p = AiryParams::new(Complex64::new(1.0, 0.5), 1.5, 0.0);
        let t = uniform_grid(-8.0, 8.0, 3201);
        let clean = model_trace(&p, &t, 1.0);
        let mut mixed = clean.clone();
        for (v, &x) in mixed.values.iter_mut().zip(&t) {
            *v += Complex64::from_polar(0.5, 31.0 * x);
        }
        let f = filter_resonant_component(&mixed, &[31.0], 0.15).unwrap();
        let inner: Vec<usize> = (0..t.len()).filter(|&i| t[i].abs() <= 6.0).collect();
        let a: Vec<Complex64> = inner.iter().map(|&i| f.values[i]).collect();
        let b: Vec<Complex64> = inner.iter().map(|&i| clean.values[i]).collect();
        let err = crate::forward_solver::relative_l2(&a, &b);
        assert!(err < 0.02, "{err}");
    }

    #[test]
    fn branches_follow_sources() {
        let b = branches_for_sources(&[6.0], (-4.0, 4.0), (-8.0, 8.0), 0.25);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].direction, -1.0);
        let b = branches_for_sources(&[6.0, -6.0], (-5.0, 4.0), (-8.0, 8.0), 0.25);
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].direction, b[1].direction), (1.0, -1.0));
        assert_eq!(b[0].interval.1, 0.0);
    }

    #[test]
    fn plan_validation() {
        assert!(FrequencyPlan::new(1, 30.0, 32.0, vec![31.0, 30.5]).is_err());
        assert!(FrequencyPlan::new(1, 30.0, 32.0, vec![29.0]).is_err());
        for id in BuiltinId::ALL {
            builtin_plan(id).validate().unwrap();
        }
    }

    #[test]
    fn anchors_and_metrics_on_exact_points() {
        let prof = Profile::builtin(BuiltinId::H3);
        let plan = builtin_plan(BuiltinId::H3);
        let points: Vec<ReconstructedPoint> = plan
            .frequencies
            .iter()
            .rev()
            .map(|&k| {
                let w = plan.width(k);
                ReconstructedPoint { k, x_star: (w - 0.1) / crate::waveguide_model::GAMMA5, width: w, branch: 0 }
            })
            .collect();
        let branches = vec![Branch { source: 6.0, direction: -1.0, interval: (-8.0, 5.75) }];
        let mut bp = vec![];
        let anchors = anchor_widths(&plan, prof.support, &points, &branches);
        bp.push(anchors[0]);
        bp.extend(merge_branches(&points, 1));
        bp.push(anchors[1]);
        let res = ReconstructionResult {
            plan: plan.clone(),
            support: prof.support,
            branches,
            points,
            anchors,
            breakpoints: bp,
            fits: vec![],
            metrics: None,
            warnings: vec![],
        };
        assert_eq!(res.h_app(-4.0), PI / plan.k_max);
        assert_eq!(res.h_app(4.0), PI / plan.k_min);
        let m = error_metrics(&res, &prof);
        assert!(m.linf_points < 1e-15);
        assert!(m.relative_dense < 1e-6);
    }

    #[test]
    fn explosion_peaks_need_factor_over_median() {
        let v = [1.0, 1.1, 0.9, 9.0, 1.0, 1.2, 1.0];
        assert_eq!(explosion_peaks(&v, 5.0), vec![3]);
        assert!(explosion_peaks(&[1.0, 1.0, 1.0], 5.0).is_empty());
    }

    #[test]
    fn onset_peak_survives_raised_plateau() {
        // quiet below cutoff, spike, then a raised plateau that dominates the median
        let v = [1.0, 1.0, 1.1, 1.2, 4.0, 15.0, 11.0, 9.0, 10.0, 8.5, 9.5, 8.0, 9.0];
        assert!(explosion_peaks(&v, 5.0).is_empty());
        let peaks = onset_peaks(&v, 5.0);
        assert!(peaks.contains(&5));
        assert_eq!(onset_index(&v, 5, 5.0), 5);
        let w = [1.0, 1.0, 1.0, 1.0, 7.0, 9.0, 12.0, 3.0];
        assert_eq!(onset_index(&w, 6, 5.0), 4);
    }
}
