//! Approximate wavefield synthesis with modal Green kernels, surface traces,
//! and a per-mode finite-difference reference solver with absorbing layers.

use crate::error::{Error, Result};
use crate::special_functions::{airy, airy_scaled, integrate, QuadratureRule, SqrtEndpoint};
use crate::waveguide_model::{
    classify_mode, default_delta_modes, delta_margin, transverse, wavenumber_squared, Classification, ModeContext,
    Profile, ResonantPoint,
};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Transverse dependence of an interior point source f(x, y) = δ_{x=s} F(y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Transverse {
    None,
    /// F(y) = y
    Linear,
    /// F(y) = Σ c_n φ_n(s, y)
    Modes(Vec<(usize, Complex64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub x: f64,
    pub interior: Transverse,
    pub top: Complex64,
    pub bottom: Complex64,
}

/// A smooth compactly supported source acting on a single mode:
/// f_n(x) = amplitude · cos²(π(x − center)/(2 half_width)) on |x − center| < half_width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalBump {
    pub n: usize,
    pub center: f64,
    pub half_width: f64,
    pub amplitude: Complex64,
}

impl ModalBump {
    pub fn value(&self, x: f64) -> Complex64 {
        let u = (x - self.center) / self.half_width;
        if u.abs() >= 1.0 {
            Complex64::new(0.0, 0.0)
        } else {
            self.amplitude * (0.5 * PI * u).cos().powi(2)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub points: Vec<PointSource>,
    #[serde(default)]
    pub bumps: Vec<ModalBump>,
}

impl SourceSpec {
    /// f = y·δ_{x=s}, b_top = δ_{x=s}, b_bot = 0 at each listed position.
    pub fn linear_with_top(positions: &[f64]) -> Self {
        SourceSpec {
            points: positions
                .iter()
                .map(|&x| PointSource {
                    x,
                    interior: Transverse::Linear,
                    top: Complex64::new(1.0, 0.0),
                    bottom: Complex64::new(0.0, 0.0),
                })
                .collect(),
            bumps: Vec::new(),
        }
    }

    /// f = δ_{x=s} Σ c_n φ_n(y) plus an optional top boundary weight.
    pub fn modal_point(x: f64, modes: &[(usize, f64)], top: f64) -> Self {
        SourceSpec {
            points: vec![PointSource {
                x,
                interior: Transverse::Modes(modes.iter().map(|&(n, c)| (n, Complex64::new(c, 0.0))).collect()),
                top: Complex64::new(top, 0.0),
                bottom: Complex64::new(0.0, 0.0),
            }],
            bumps: Vec::new(),
        }
    }

    /// Smallest interval containing every source.
    pub fn support(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &self.points {
            lo = lo.min(p.x);
            hi = hi.max(p.x);
        }
        for b in &self.bumps {
            lo = lo.min(b.center - b.half_width);
            hi = hi.max(b.center + b.half_width);
        }
        (lo <= hi).then_some((lo, hi))
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            if !p.x.is_finite() {
                return Err(Error::Support(format!("point source at {}", p.x)));
            }
        }
        for b in &self.bumps {
            if !(b.half_width > 0.0) || !b.half_width.is_finite() || !b.center.is_finite() {
                return Err(Error::Support(format!("bump at {} with half width {}", b.center, b.half_width)));
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

/// The modal source g_n with Dirac terms kept as (location, weight) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSource {
    pub n: usize,
    pub points: Vec<(f64, Complex64)>,
    pub bumps: Vec<(ModalBump, f64)>,
}

impl ReducedSource {
    /// Density of the distributed part at x (Dirac terms excluded).
    pub fn density(&self, profile: &Profile, x: f64) -> Complex64 {
        self.bumps.iter().map(|(b, _)| b.value(x) / profile.h(x).sqrt()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.points.iter().all(|p| p.1 == Complex64::new(0.0, 0.0)) && self.bumps.is_empty()
    }
}

/// Reference-section mode value φ̂_n(t), t ∈ [0, 1].
fn reference_mode(n: usize, t: f64) -> f64 {
    if n == 0 {
        1.0
    } else {
        2f64.sqrt() * (n as f64 * PI * t).cos()
    }
}

/// ∫_0^h y φ_n(y) dy.
pub fn linear_projection(n: usize, h: f64) -> f64 {
    if n == 0 {
        0.5 * h * h.sqrt()
    } else {
        let m = n as f64 * PI;
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        (2.0 / h).sqrt() * (h / m).powi(2) * (sign - 1.0)
    }
}

/// Reduces a source to the modal right-hand side g_n.
pub fn reduced_source(spec: &SourceSpec, n: usize, profile: &Profile) -> ReducedSource {
    let mut points = Vec::new();
    for p in &spec.points {
        let h = profile.h(p.x);
        let hp = profile.h_prime(p.x);
        let hp = if hp.is_finite() { hp } else { 0.0 };
        let fn_coef = match &p.interior {
            Transverse::None => Complex64::new(0.0, 0.0),
            Transverse::Linear => Complex64::new(linear_projection(n, h), 0.0),
            Transverse::Modes(list) => list.iter().filter(|(m, _)| *m == n).map(|(_, c)| *c).sum(),
        };
        let sq = h.sqrt();
        let w = fn_coef / sq
            + reference_mode(n, 1.0) * p.top * (1.0 + hp * hp).sqrt() / sq
            + reference_mode(n, 0.0) * p.bottom / sq;
        points.push((p.x, w));
    }
    let bumps = spec.bumps.iter().filter(|b| b.n == n).map(|b| (b.clone(), 0.0)).collect();
    ReducedSource { n, points, bumps }
}

/// Sampled one-side boundary data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceTrace {
    pub abscissae: Vec<f64>,
    pub values: Vec<Complex64>,
    pub k: f64,
    pub meta: TraceMeta,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub profile: String,
    pub source: String,
    pub generator: String,
    pub noise_amplitude: f64,
    pub noise_seed: Option<u64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SurfaceTrace {
    pub fn new(abscissae: Vec<f64>, values: Vec<Complex64>, k: f64) -> Result<Self> {
        if abscissae.len() != values.len() {
            return Err(Error::Domain(format!(
                "trace has {} abscissae but {} values",
                abscissae.len(),
                values.len()
            )));
        }
        if abscissae.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("trace abscissae must be strictly increasing".into()));
        }
        Ok(SurfaceTrace { abscissae, values, k, meta: TraceMeta::default() })
    }

    pub fn len(&self) -> usize {
        self.abscissae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissae.is_empty()
    }

    /// Normalized ℓ² norm (1/n Σ |d_i|²)^{1/2}.
    pub fn l2(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Sub-trace on [a, b].
    pub fn restrict(&self, a: f64, b: f64) -> SurfaceTrace {
        let mut out = self.clone();
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.abscissae[i] >= a && self.abscissae[i] <= b).collect();
        out.abscissae = keep.iter().map(|&i| self.abscissae[i]).collect();
        out.values = keep.iter().map(|&i| self.values[i]).collect();
        out
    }

    /// Trace reflected through the origin, t → −t.
    pub fn mirrored(&self) -> SurfaceTrace {
        let mut out = self.clone();
        out.abscissae = self.abscissae.iter().rev().map(|t| -t).collect();
        out.values = self.values.iter().rev().copied().collect();
        out
    }

    /// Linear interpolation at x (clamped to the sampled range).
    pub fn interpolate(&self, x: f64) -> Complex64 {
        let t = &self.abscissae;
        if x <= t[0] {
            return self.values[0];
        }
        if x >= t[t.len() - 1] {
            return self.values[t.len() - 1];
        }
        let i = t.partition_point(|&v| v <= x) - 1;
        let w = (x - t[i]) / (t[i + 1] - t[i]);
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

pub fn l2_norm(v: &[Complex64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|z| z.norm_sqr()).sum::<f64>() / v.len() as f64).sqrt()
}

/// Relative ℓ² distance ‖a − b‖/‖b‖.
pub fn relative_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    let diff: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2_norm(&diff) / l2_norm(b)
}

fn abs_k(n: usize, k: f64, profile: &Profile, t: f64) -> f64 {
    wavenumber_squared(n, k, profile.h(t)).abs().sqrt()
}

fn quad_rule() -> QuadratureRule {
    QuadratureRule::default()
}

/// Signed ∫_{anchor}^{x_i} |k_n| for every x_i, accumulated between sorted samples.
/// When `turning` is set the integrand vanishes like a square root at the anchor.
fn cumulative_abs_k(n: usize, k: f64, profile: &Profile, anchor: f64, xs: &[f64], turning: bool) -> Result<Vec<f64>> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut out = vec![0.0; xs.len()];
    let rule = quad_rule();
    let f = |t: f64| abs_k(n, k, profile, t);
    // right of the anchor
    let mut acc = 0.0;
    let mut prev = anchor;
    let mut first = true;
    for &i in order.iter().filter(|&&i| xs[i] >= anchor) {
        let x = xs[i];
        if x > prev {
            let r = if first && turning { rule.with_sqrt_endpoint(SqrtEndpoint::Left) } else { rule };
            acc += integrate(f, prev, x, &r)?;
            first = false;
            prev = x;
        }
        out[i] = acc;
    }
    acc = 0.0;
    prev = anchor;
    first = true;
    for &i in order.iter().rev().filter(|&&i| xs[i] < anchor) {
        let x = xs[i];
        let r = if first && turning { rule.with_sqrt_endpoint(SqrtEndpoint::Right) } else { rule };
        acc += integrate(f, x, prev, &r)?;
        first = false;
        prev = x;
        out[i] = -acc;
    }
    Ok(out)
}

/// Turning-point geometry used by the resonant kernel.
#[derive(Debug, Clone, Copy)]
struct Turning {
    x: f64,
    orientation: f64,
    alpha: f64,
}

impl Turning {
    fn new(ctx: &ModeContext, tp: ResonantPoint) -> Self {
        let h = ctx.profile.h(tp.x);
        let hp = ctx.profile.h_prime(tp.x).abs();
        let n = ctx.n as f64;
        let alpha = (2.0 * n * n * PI * PI * hp / (h * h * h)).cbrt();
        Turning { x: tp.x, orientation: tp.orientation, alpha }
    }

    /// ξ from the signed phase integral ψ = ∫_{x*}^x |k_N|.
    fn xi(&self, x: f64, psi: f64) -> f64 {
        let mag = (1.5 * psi.abs()).powf(2.0 / 3.0);
        let evanescent = (x - self.x) * self.orientation < 0.0;
        if evanescent {
            mag
        } else {
            -mag
        }
    }

    /// |ξ|^{1/4} / |k_N|^{1/2}, continuous through x*.
    fn amplitude(&self, ctx: &ModeContext, x: f64, xi: f64) -> f64 {
        let ksq = ctx.wavenumber_squared(x).abs();
        if (x - self.x).abs() < 1e-7 * (1.0 + self.x.abs()) || ksq == 0.0 || xi == 0.0 {
            return self.alpha.powf(-0.5);
        }
        (xi.abs() / ksq).powf(0.25)
    }
}

/// ξ(x) for a resonant mode about its designated turning point.
pub fn xi_map(ctx: &ModeContext, x: f64) -> Result<f64> {
    Ok(xi_many(ctx, &[x])?[0])
}

pub fn xi_many(ctx: &ModeContext, xs: &[f64]) -> Result<Vec<f64>> {
    let tp = designated_point(ctx)?;
    let t = Turning::new(ctx, tp);
    let psi = cumulative_abs_k(ctx.n, ctx.k, &ctx.profile, t.x, xs, true)?;
    Ok(xs.iter().zip(psi).map(|(&x, p)| t.xi(x, p)).collect())
}

fn designated_point(ctx: &ModeContext) -> Result<ResonantPoint> {
    if ctx.classification != Classification::LocallyResonant {
        return Err(Error::Domain(format!("mode {} at k = {} is not locally resonant", ctx.n, ctx.k)));
    }
    ctx.turning_point()
        .or_else(|| ctx.resonant_points.first().copied())
        .ok_or_else(|| Error::Domain("no resonant point".into()))
}

/// (iAi + Bi)(ξ_p) · Ai(ξ_e) with ξ_e ≥ ξ_p, safe for large positive arguments.
fn airy_pair(xi_e: f64, xi_p: f64) -> Complex64 {
    if xi_p > 0.0 {
        let ze = 2.0 / 3.0 * xi_e.powf(1.5);
        let zp = 2.0 / 3.0 * xi_p.powf(1.5);
        let e = airy_scaled(xi_e);
        let p = airy_scaled(xi_p);
        let bi_part = p.bi * e.ai * (zp - ze).exp();
        let ai_part = p.ai * e.ai * (-zp - ze).exp();
        Complex64::new(bi_part, ai_part)
    } else {
        let e = airy(xi_e);
        let p = airy(xi_p);
        Complex64::new(p.bi, p.ai) * e.ai
    }
}

/// Kernel values G_n(x_i, s) for one source location and many observation points.
pub fn kernel_row(ctx: &ModeContext, s: f64, xs: &[f64]) -> Result<Vec<Complex64>> {
    let n = ctx.n;
    let k = ctx.k;
    let profile = &ctx.profile;
    match ctx.classification {
        Classification::Propagative | Classification::Evanescent => {
            let ks = abs_k(n, k, profile, s);
            let mut pts: Vec<f64> = xs.to_vec();
            pts.push(s);
            let phase = cumulative_abs_k(n, k, profile, s, &pts, false)?;
            let mut out = Vec::with_capacity(xs.len());
            for (i, &x) in xs.iter().enumerate() {
                let kx = abs_k(n, k, profile, x);
                if kx == 0.0 || ks == 0.0 {
                    return Err(Error::Singularity { x: if kx == 0.0 { x } else { s } });
                }
                let p = phase[i].abs();
                let g = if ctx.classification == Classification::Propagative {
                    I / (2.0 * (ks * kx).sqrt()) * Complex64::from_polar(1.0, p)
                } else {
                    Complex64::new((-p).exp() / (2.0 * (ks * kx).sqrt()), 0.0)
                };
                out.push(g);
            }
            Ok(out)
        }
        Classification::LocallyResonant => {
            let mut out = vec![Complex64::new(0.0, 0.0); xs.len()];
            // pick the turning point per side of the source unless the caller fixed one
            let sides: Vec<(f64, ModeContext)> = if ctx.designated.is_some() {
                vec![(0.0, ctx.clone())]
            } else {
                vec![(-1.0, ctx.clone().designate_on_side(s, -1.0)), (1.0, ctx.clone().designate_on_side(s, 1.0))]
            };
            for (side, c) in sides {
                let c = if c.designated.is_none() { c.designate_nearest(s) } else { c };
                let idx: Vec<usize> = (0..xs.len())
                    .filter(|&i| side == 0.0 || (side < 0.0 && xs[i] < s) || (side > 0.0 && xs[i] >= s))
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let tp = Turning::new(&c, designated_point(&c)?);
                let mut pts: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
                pts.push(s);
                let psi = cumulative_abs_k(n, k, profile, tp.x, &pts, true)?;
                let xi_s = tp.xi(s, psi[pts.len() - 1]);
                let a_s = tp.amplitude(&c, s, xi_s);
                for (j, &i) in idx.iter().enumerate() {
                    let x = xs[i];
                    let xi_x = tp.xi(x, psi[j]);
                    let a_x = tp.amplitude(&c, x, xi_x);
                    let (xe, xp) = if xi_x >= xi_s { (xi_x, xi_s) } else { (xi_s, xi_x) };
                    out[i] = PI * a_x * a_s * airy_pair(xe, xp);
                }
            }
            Ok(out)
        }
    }
}

/// Green kernel G_n(x, s).
pub fn green_kernel(ctx: &ModeContext, x: f64, s: f64) -> Result<Complex64> {
    Ok(kernel_row(ctx, s, &[x])?[0])
}

/// Modal amplitude u_n(x_i) = ∫ G_n(x_i, s) g_n(s) ds.
pub fn synthesize_mode(ctx: &ModeContext, g: &ReducedSource, xs: &[f64]) -> Result<Vec<Complex64>> {
    let mut u = vec![Complex64::new(0.0, 0.0); xs.len()];
    for &(s, w) in &g.points {
        if w == Complex64::new(0.0, 0.0) {
            continue;
        }
        let row = kernel_row(ctx, s, xs)?;
        for (ui, gi) in u.iter_mut().zip(row) {
            *ui += gi * w;
        }
    }
    for (b, _) in &g.bumps {
        let m = 64;
        let (nodes, weights) = crate::special_functions::gauss_legendre(m);
        let (a, c) = (b.center - b.half_width, b.center + b.half_width);
        for (t, wt) in nodes.iter().zip(&weights) {
            let s = 0.5 * (a + c) + 0.5 * (c - a) * t;
            let dens = b.value(s) / ctx.profile.h(s).sqrt() * (0.5 * (c - a) * wt);
            let row = kernel_row(ctx, s, xs)?;
            for (ui, gi) in u.iter_mut().zip(row) {
                *ui += gi * dens;
            }
        }
    }
    Ok(u)
}

/// Number of modes kept by default: all propagative and resonant ones plus three evanescent.
pub fn default_n_max(k: f64, profile: &Profile) -> usize {
    default_delta_modes(k, profile) + 3
}

/// Surface wavefield u(x, 0) = Σ_n u_n(x) φ_n(x, 0).
pub fn synthesize_surface(
    profile: &Arc<Profile>,
    k: f64,
    spec: &SourceSpec,
    abscissae: &[f64],
    n_max: Option<usize>,
) -> Result<SurfaceTrace> {
    spec.validate()?;
    let n_max = n_max.unwrap_or_else(|| default_n_max(k, profile));
    let delta = delta_margin(k, profile, n_max);
    if delta < 1e-6 {
        return Err(Error::ForbiddenFrequency { k, delta });
    }
    let mut total = vec![Complex64::new(0.0, 0.0); abscissae.len()];
    let mut warnings = Vec::new();
    for n in 0..=n_max {
        let ctx = classify_mode(n, k, profile)?;
        if ctx.classification == Classification::LocallyResonant {
            for p in &spec.points {
                let hs = profile.h(p.x);
                if hs < n as f64 * PI / k {
                    warnings.push(format!("source at x = {} lies where mode {n} is evanescent", p.x));
                }
            }
        }
        let g = reduced_source(spec, n, profile);
        if g.is_empty() {
            continue;
        }
        let u = synthesize_mode(&ctx, &g, abscissae)?;
        for ((t, ui), &x) in total.iter_mut().zip(u).zip(abscissae) {
            *t += ui * transverse(n, profile.h(x), 0.0);
        }
    }
    let mut trace = SurfaceTrace::new(abscissae.to_vec(), total, k)?;
    trace.meta = TraceMeta {
        profile: profile.label.clone(),
        source: spec.describe(),
        generator: "modal-green".into(),
        noise_amplitude: 0.0,
        noise_seed: None,
        warnings,
    };
    Ok(trace)
}

/// Surface contribution u_n(x)·φ_n(x, 0) of a single mode.
pub fn synthesize_single_mode(
    profile: &Arc<Profile>,
    k: f64,
    spec: &SourceSpec,
    n: usize,
    abscissae: &[f64],
) -> Result<SurfaceTrace> {
    spec.validate()?;
    let ctx = classify_mode(n, k, profile)?;
    let g = reduced_source(spec, n, profile);
    let u = if g.is_empty() {
        vec![Complex64::new(0.0, 0.0); abscissae.len()]
    } else {
        synthesize_mode(&ctx, &g, abscissae)?
    };
    let vals = u.into_iter().zip(abscissae).map(|(v, &x)| v * transverse(n, profile.h(x), 0.0)).collect();
    let mut trace = SurfaceTrace::new(abscissae.to_vec(), vals, k)?;
    trace.meta.profile = profile.label.clone();
    trace.meta.source = spec.describe();
    trace.meta.generator = format!("modal-green (mode {n})");
    Ok(trace)
}

/// Absorption coefficient of the layers beyond |x| = 8.
pub fn pml_absorption(k: f64, x: f64) -> f64 {
    if x >= 8.0 {
        k * (x - 8.0)
    } else if x <= -8.0 {
        k * (-8.0 - x)
    } else {
        0.0
    }
}

/// Solves u'' + (k_n² + iσ) u = −g_n on [−15, 15] with homogeneous Dirichlet ends
/// and returns u_n on `domain`.
pub fn mode_ode_oracle(
    profile: &Profile,
    k: f64,
    n: usize,
    g: &ReducedSource,
    domain: (f64, f64),
    grid_step: f64,
) -> Result<SurfaceTrace> {
    mode_ode_oracle_on(profile, k, n, g, (-15.0, 15.0), 8.0, domain, grid_step)
}

/// Same solver on an arbitrary interval with layers starting at ±`layer_start`.
#[allow(clippy::too_many_arguments)]
pub fn mode_ode_oracle_on(
    profile: &Profile,
    k: f64,
    n: usize,
    g: &ReducedSource,
    interval: (f64, f64),
    layer_start: f64,
    domain: (f64, f64),
    grid_step: f64,
) -> Result<SurfaceTrace> {
    let (lo, hi) = interval;
    let len = hi - lo;
    if !(grid_step > 0.0) || grid_step > 1e-3 * len {
        return Err(Error::Domain(format!("grid step {grid_step} exceeds 1e-3 of the domain length")));
    }
    let m = (len / grid_step).round() as usize;
    let dx = len / m as f64;
    // interior unknowns 1..m-1
    let nu = m - 1;
    let xs: Vec<f64> = (1..m).map(|j| lo + j as f64 * dx).collect();
    let mut rhs = vec![Complex64::new(0.0, 0.0); nu];
    for &(s, w) in &g.points {
        let p = (s - lo) / dx - 1.0;
        let j = p.floor();
        let t = p - j;
        let j = j as isize;
        if j >= 0 && (j as usize) < nu {
            rhs[j as usize] -= w * (1.0 - t) / dx;
        }
        if j + 1 >= 0 && ((j + 1) as usize) < nu {
            rhs[(j + 1) as usize] -= w * t / dx;
        }
    }
    for (j, &x) in xs.iter().enumerate() {
        let d = g.density(profile, x);
        if d != Complex64::new(0.0, 0.0) {
            rhs[j] -= d;
        }
    }
    let inv = 1.0 / (dx * dx);
    let sub = vec![Complex64::new(inv, 0.0); nu];
    let sup = vec![Complex64::new(inv, 0.0); nu];
    let diag: Vec<Complex64> = xs
        .iter()
        .map(|&x| {
            let sigma = if x >= layer_start {
                k * (x - layer_start)
            } else if x <= -layer_start {
                k * (-layer_start - x)
            } else {
                0.0
            };
            Complex64::new(-2.0 * inv + wavenumber_squared(n, k, profile.h(x)), sigma)
        })
        .collect();
    let u = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
    let keep: Vec<usize> = (0..nu).filter(|&j| xs[j] >= domain.0 && xs[j] <= domain.1).collect();
    let mut trace = SurfaceTrace::new(keep.iter().map(|&j| xs[j]).collect(), keep.iter().map(|&j| u[j]).collect(), k)?;
    trace.meta.generator = "mode-ode".into();
    trace.meta.profile = profile.label.clone();
    Ok(trace)
}

/// Thomas algorithm for a complex tridiagonal system; `sub[0]` and `sup[n-1]` are ignored.
pub fn solve_tridiagonal(
    sub: &[Complex64],
    diag: &[Complex64],
    sup: &[Complex64],
    rhs: &[Complex64],
) -> Result<Vec<Complex64>> {
    let n = diag.len();
    let mut c = vec![Complex64::new(0.0, 0.0); n];
    let mut d = vec![Complex64::new(0.0, 0.0); n];
    let mut beta = diag[0];
    if beta.norm() < 1e-300 {
        return Err(Error::SingularSystem { row: 0 });
    }
    c[0] = sup[0] / beta;
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - sub[i] * c[i - 1];
        if beta.norm() < 1e-300 || !beta.is_finite() {
            return Err(Error::SingularSystem { row: i });
        }
        c[i] = if i + 1 < n { sup[i] / beta } else { Complex64::new(0.0, 0.0) };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / beta;
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// Adds complex Gaussian noise whose expected normalized ℓ² norm is
/// `amplitude` times that of the clean trace.
pub fn add_noise(trace: &SurfaceTrace, amplitude: f64, seed: u64) -> Result<SurfaceTrace> {
    if !(amplitude >= 0.0) {
        return Err(Error::Domain(format!("noise amplitude {amplitude} must be non-negative")));
    }
    let mut out = trace.clone();
    out.meta.noise_amplitude = amplitude;
    out.meta.noise_seed = Some(seed);
    if amplitude == 0.0 {
        return Ok(out);
    }
    let sigma = amplitude * trace.l2() / 2f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.values.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(sigma * re, sigma * im);
    }
    Ok(out)
}
