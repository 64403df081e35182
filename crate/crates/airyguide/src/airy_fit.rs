//! Three-parameter Airy model d(t) = z·Ai(β − αt), direct and least-squares fitting.

use crate::error::{Error, Result};
use crate::forward_solver::SurfaceTrace;
use crate::special_functions::{airy, airy_global_max, airy_zero_pair};
use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ParamsJson", into = "ParamsJson")]
pub struct AiryParams {
    pub z: Complex64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
struct ParamsJson {
    re_z: f64,
    im_z: f64,
    alpha: f64,
    beta: f64,
}

impl From<ParamsJson> for AiryParams {
    fn from(p: ParamsJson) -> Self {
        AiryParams { z: Complex64::new(p.re_z, p.im_z), alpha: p.alpha, beta: p.beta }
    }
}

impl From<AiryParams> for ParamsJson {
    fn from(p: AiryParams) -> Self {
        ParamsJson { re_z: p.z.re, im_z: p.z.im, alpha: p.alpha, beta: p.beta }
    }
}

impl AiryParams {
    pub fn new(z: Complex64, alpha: f64, beta: f64) -> Self {
        AiryParams { z, alpha, beta }
    }

    /// Resonant point β/α.
    pub fn x_star(&self) -> f64 {
        self.beta / self.alpha
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || self.z.norm() == 0.0 || !self.x_star().is_finite() {
            return Err(Error::InvalidFit(format!("parameters {self:?} violate α > 0, z ≠ 0")));
        }
        Ok(())
    }

    fn to_vec(self) -> Vector4<f64> {
        Vector4::new(self.z.re, self.z.im, self.alpha, self.beta)
    }

    fn from_vec(v: &Vector4<f64>) -> Self {
        AiryParams { z: Complex64::new(v[0], v[1]), alpha: v[2], beta: v[3] }
    }

    /// Euclidean distance over (Re z, Im z, α, β).
    pub fn distance(&self, other: &AiryParams) -> f64 {
        (self.to_vec() - other.to_vec()).norm()
    }
}

/// Admissible parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitBox {
    pub z_max: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for FitBox {
    fn default() -> Self {
        FitBox { z_max: 1e12, alpha_min: 1e-3, alpha_max: 1e2, beta_min: -1e4, beta_max: 1e4 }
    }
}

impl FitBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_min > 0.0) || !(self.alpha_max > self.alpha_min) || !(self.beta_max > self.beta_min) || !(self.z_max > 0.0)
        {
            return Err(Error::Domain(format!("fit box {self:?} is empty or has α_min ≤ 0")));
        }
        Ok(())
    }

    fn project(&self, v: &mut Vector4<f64>) {
        let m = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if m > self.z_max {
            v[0] *= self.z_max / m;
            v[1] *= self.z_max / m;
        }
        v[2] = v[2].clamp(self.alpha_min, self.alpha_max);
        v[3] = v[3].clamp(self.beta_min, self.beta_max);
    }

    fn scaled(&self, s: f64) -> FitBox {
        FitBox { z_max: self.z_max / s, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FitMethod {
    #[default]
    LevenbergMarquardt,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub method: FitMethod,
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub record_history: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            method: FitMethod::LevenbergMarquardt,
            max_iterations: 500,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: AiryParams,
    pub residual_l2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub hessian_min_eigenvalue: f64,
    pub init: AiryParams,
    #[serde(default)]
    pub init_source: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<f64>,
}

/// z·Ai(β − αt).
pub fn model_eval(p: &AiryParams, t: f64) -> Complex64 {
    p.z * airy(p.beta - p.alpha * t).ai
}

fn check_data(t: &[f64], d: &[Complex64]) -> Result<()> {
    if t.is_empty() || t.len() != d.len() {
        return Err(Error::Domain(format!("need matching non-empty data, got {} abscissae and {} values", t.len(), d.len())));
    }
    Ok(())
}

/// J_d(p) = (1/2n) Σ |z·Ai(β − αt_i) − d_i|².
pub fn lsq_objective(p: &AiryParams, t: &[f64], d: &[Complex64]) -> Result<f64> {
    check_data(t, d)?;
    let s: f64 = t.iter().zip(d).map(|(&ti, &di)| (model_eval(p, ti) - di).norm_sqr()).sum();
    Ok(0.5 * s / t.len() as f64)
}

/// Residuals and their derivatives with respect to (Re z, Im z, α, β).
struct Linearization {
    r: Vec<Complex64>,
    jac: Vec<[Complex64; 4]>,
    a: Vec<f64>,
    ap: Vec<f64>,
    app: Vec<f64>,
}

fn linearize(p: &AiryParams, t: &[f64], d: &[Complex64]) -> Linearization {
    let n = t.len();
    let mut lin = Linearization {
        r: Vec::with_capacity(n),
        jac: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        ap: Vec::with_capacity(n),
        app: Vec::with_capacity(n),
    };
    let i = Complex64::new(0.0, 1.0);
    for (&ti, &di) in t.iter().zip(d) {
        let x = p.beta - p.alpha * ti;
        let v = airy(x);
        lin.r.push(p.z * v.ai - di);
        lin.jac.push([
            Complex64::new(v.ai, 0.0),
            i * v.ai,
            -p.z * ti * v.ai_prime,
            p.z * v.ai_prime,
        ]);
        lin.a.push(v.ai);
        lin.ap.push(v.ai_prime);
        lin.app.push(x * v.ai);
    }
    lin
}

fn gradient_of(lin: &Linearization) -> Vector4<f64> {
    let n = lin.r.len() as f64;
    let mut g = Vector4::zeros();
    for (r, j) in lin.r.iter().zip(&lin.jac) {
        for k in 0..4 {
            g[k] += (r.conj() * j[k]).re;
        }
    }
    g / n
}

fn gauss_newton_of(lin: &Linearization) -> Matrix4<f64> {
    let n = lin.r.len() as f64;
    let mut a = Matrix4::zeros();
    for j in &lin.jac {
        for p in 0..4 {
            for q in p..4 {
                a[(p, q)] += (j[p].conj() * j[q]).re;
            }
        }
    }
    for p in 0..4 {
        for q in 0..p {
            a[(p, q)] = a[(q, p)];
        }
    }
    a / n
}

/// Analytic gradient of J over (Re z, Im z, α, β).
pub fn lsq_gradient(p: &AiryParams, t: &[f64], d: &[Complex64]) -> Result<[f64; 4]> {
    check_data(t, d)?;
    let g = gradient_of(&linearize(p, t, d));
    Ok([g[0], g[1], g[2], g[3]])
}

/// Gauss–Newton part of the Hessian, (1/n) Σ Re(∂r̄_i ⊗ ∂r_i).
pub fn lsq_hessian_gauss_newton(p: &AiryParams, t: &[f64], d: &[Complex64]) -> Result<[[f64; 4]; 4]> {
    check_data(t, d)?;
    Ok(to_array(&gauss_newton_of(&linearize(p, t, d))))
}

/// Analytic Hessian of J, Gauss–Newton part plus the residual-weighted second derivatives.
pub fn lsq_hessian(p: &AiryParams, t: &[f64], d: &[Complex64]) -> Result<[[f64; 4]; 4]> {
    check_data(t, d)?;
    Ok(to_array(&hessian_matrix(p, t, d)))
}

fn hessian_matrix(p: &AiryParams, t: &[f64], d: &[Complex64]) -> Matrix4<f64> {
    let lin = linearize(p, t, d);
    let n = t.len() as f64;
    let mut h = gauss_newton_of(&lin);
    let i = Complex64::new(0.0, 1.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut b = Matrix4::zeros();
    for (idx, &ti) in t.iter().enumerate() {
        let ap = lin.ap[idx];
        let app = lin.app[idx];
        let second = [
            [zero, zero, Complex64::new(-ti * ap, 0.0), Complex64::new(ap, 0.0)],
            [zero, zero, -i * ti * ap, i * ap],
            [Complex64::new(-ti * ap, 0.0), -i * ti * ap, p.z * ti * ti * app, -p.z * ti * app],
            [Complex64::new(ap, 0.0), i * ap, -p.z * ti * app, p.z * app],
        ];
        let rc = lin.r[idx].conj();
        for a in 0..4 {
            for c in 0..4 {
                b[(a, c)] += (rc * second[a][c]).re;
            }
        }
    }
    h += b / n;
    h
}

fn to_array(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = m[(i, j)];
        }
    }
    out
}

/// Smallest eigenvalue of a symmetric 4×4 matrix.
pub fn min_eigenvalue(h: &[[f64; 4]; 4]) -> f64 {
    let m = Matrix4::from_fn(|i, j| h[i][j]);
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Phase e^{iφ} that maximizes Σ Re(e^{-iφ} d_i)².
pub fn dominant_phase(d: &[Complex64]) -> Complex64 {
    let s: Complex64 = d.iter().map(|v| v * v).sum();
    if s.norm() == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    Complex64::from_polar(1.0, 0.5 * s.arg())
}

/// Rough relative noise level from second differences of the samples.
pub fn noise_estimate(d: &[Complex64]) -> f64 {
    if d.len() < 5 {
        return 0.0;
    }
    let mut sd: Vec<f64> = d.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).norm()).collect();
    sd.sort_by(f64::total_cmp);
    let med = sd[sd.len() / 2];
    // second difference of iid complex noise has E|.|² = 6σ², median of |.| ≈ 0.83·√6·σ/√... use Rayleigh median √(ln 4)
    let sigma = med / (6f64.sqrt() * (4f64.ln()).sqrt() / 2f64.sqrt());
    let norm = crate::forward_solver::l2_norm(d);
    if norm == 0.0 {
        0.0
    } else {
        sigma / norm
    }
}

fn moving_average(v: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(v.len() - 1);
            v[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Cubic Lagrange interpolation through four neighbors of index i (clamped).
fn local_cubic<'a>(t: &'a [f64], v: &'a [f64], i: usize) -> impl Fn(f64) -> f64 + 'a {
    let start = i.saturating_sub(1).min(t.len().saturating_sub(4));
    let idx: Vec<usize> = (start..(start + 4).min(t.len())).collect();
    move |x: f64| {
        let mut s = 0.0;
        for &a in &idx {
            let mut l = 1.0;
            for &b in &idx {
                if a != b {
                    l *= (x - t[b]) / (t[a] - t[b]);
                }
            }
            s += l * v[a];
        }
        s
    }
}

fn refine_crossing(t: &[f64], v: &[f64], i: usize) -> f64 {
    // sign change between i and i+1
    let lin = t[i] - v[i] * (t[i + 1] - t[i]) / (v[i + 1] - v[i]);
    if t.len() < 4 {
        return lin;
    }
    let f = local_cubic(t, v, i);
    let (mut lo, mut hi) = (t[i], t[i + 1]);
    let mut flo = f(lo);
    if (flo > 0.0) == (f(hi) > 0.0) {
        return lin;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Direct parameter reconstruction from the peak and the first two zero crossings.
pub fn direct_fit(trace: &SurfaceTrace) -> Result<AiryParams> {
    let t = &trace.abscissae;
    let d = &trace.values;
    if t.len() < 5 {
        return Err(Error::InsufficientWindow(format!("only {} samples", t.len())));
    }
    let phase = dominant_phase(d);
    let mut re: Vec<f64> = d.iter().map(|v| (v / phase).re).collect();
    let mut mag: Vec<f64> = d.iter().map(|v| v.norm()).collect();
    if noise_estimate(d) > 0.05 {
        re = moving_average(&re, 5);
        mag = d.iter().map(|v| v.norm()).collect::<Vec<_>>();
        mag = moving_average(&mag, 5);
    }
    let imax = (0..t.len()).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
    // refine the peak with a parabola through its neighbors
    let (tmax, dmax) = if imax > 0 && imax + 1 < t.len() {
        let (y0, y1, y2) = (mag[imax - 1], mag[imax], mag[imax + 1]);
        let h = t[imax + 1] - t[imax];
        let denom = y0 - 2.0 * y1 + y2;
        let off = if denom < 0.0 { 0.5 * h * (y0 - y2) / denom } else { 0.0 };
        let x = t[imax] + off.clamp(-h, h);
        let re_i = local_cubic(t, &d.iter().map(|v| v.re).collect::<Vec<_>>(), imax)(x);
        let im_i = local_cubic(t, &d.iter().map(|v| v.im).collect::<Vec<_>>(), imax)(x);
        (x, Complex64::new(re_i, im_i))
    } else {
        (t[imax], d[imax])
    };
    let mut crossings = Vec::new();
    for i in imax..t.len() - 1 {
        if re[i] == 0.0 || (re[i] > 0.0) != (re[i + 1] > 0.0) {
            crossings.push(refine_crossing(t, &re, i));
            if crossings.len() == 2 {
                break;
            }
        }
    }
    if crossings.len() < 2 {
        return Err(Error::InsufficientWindow(format!(
            "found {} zero crossing(s) to the right of the peak at t = {tmax}",
            crossings.len()
        )));
    }
    let (x1, x2) = (crossings[0], crossings[1]);
    let (y1, y2) = airy_zero_pair();
    let alpha = (y1 - y2) / (x2 - x1);
    let beta = (y1 * x2 - y2 * x1) / (x2 - x1);
    let (_, ai_max) = airy_global_max();
    let p = AiryParams { z: dmax / ai_max, alpha, beta };
    p.validate()?;
    Ok(p)
}

/// Least-squares z for fixed (α, β): Σ A_i d_i / Σ A_i².
pub fn optimal_amplitude(alpha: f64, beta: f64, t: &[f64], d: &[Complex64]) -> Complex64 {
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    for (&ti, &di) in t.iter().zip(d) {
        let a = airy(beta - alpha * ti).ai;
        num += di * a;
        den += a * a;
    }
    if den == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        num / den
    }
}

/// Cubic Hermite table of Ai on [TABLE_LO, TABLE_HI], used only by the coarse grid search.
struct AiTable {
    step: f64,
    ai: Vec<f64>,
    aip: Vec<f64>,
}

const TABLE_LO: f64 = -120.0;
const TABLE_HI: f64 = 40.0;

impl AiTable {
    fn get() -> &'static AiTable {
        static T: OnceLock<AiTable> = OnceLock::new();
        T.get_or_init(|| {
            let step = 0.005;
            let n = ((TABLE_HI - TABLE_LO) / step).round() as usize + 1;
            let (mut ai, mut aip) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for i in 0..n {
                let v = airy(TABLE_LO + step * i as f64);
                ai.push(v.ai);
                aip.push(v.ai_prime);
            }
            AiTable { step, ai, aip }
        })
    }

    fn eval(&self, x: f64) -> f64 {
        if x >= TABLE_HI {
            return 0.0;
        }
        if x <= TABLE_LO {
            return airy(x).ai;
        }
        let u = (x - TABLE_LO) / self.step;
        let i = (u.floor() as usize).min(self.ai.len() - 2);
        let s = u - i as f64;
        let h = self.step;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.ai[i]
            + (s3 - 2.0 * s2 + s) * h * self.aip[i]
            + (-2.0 * s3 + 3.0 * s2) * self.ai[i + 1]
            + (s3 - s2) * h * self.aip[i + 1]
    }
}

/// Variable-projection grid search over (α, x*) with z eliminated in closed form.
pub fn projected_initial_guess(t: &[f64], d: &[Complex64], bx: &FitBox) -> AiryParams {
    let table = AiTable::get();
    let (tmin, tmax) = (t[0], t[t.len() - 1]);
    let dd: f64 = d.iter().map(|v| v.norm_sqr()).sum();
    let mut best = (f64::INFINITY, AiryParams::new(Complex64::new(1.0, 0.0), 1.0, 0.0));
    let na = 40;
    let nx = 80;
    let amin = bx.alpha_min.max(0.05);
    let amax = bx.alpha_max.min(20.0);
    let mut a = vec![0.0; t.len()];
    for ia in 0..na {
        let alpha = amin * (amax / amin).powf(ia as f64 / (na - 1) as f64);
        for ix in 0..nx {
            let xs = tmin - 2.0 + (tmax - tmin + 4.0) * ix as f64 / (nx - 1) as f64;
            let beta = (alpha * xs).clamp(bx.beta_min, bx.beta_max);
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0;
            for (j, (&ti, &di)) in t.iter().zip(d).enumerate() {
                a[j] = table.eval(beta - alpha * ti);
                num += di * a[j];
                den += a[j] * a[j];
            }
            if den == 0.0 {
                continue;
            }
            // J·2n = Σ|d|² − |Σ A d|²/Σ A² at the optimal z
            let j = dd - num.norm_sqr() / den;
            if j < best.0 {
                best = (j, AiryParams::new(num / den, alpha, beta));
            }
        }
    }
    best.1
}

/// Minimizes J over the box, starting from `init` or from the direct reconstruction.
pub fn fit_least_squares(trace: &SurfaceTrace, bx: &FitBox, init: Option<AiryParams>) -> Result<FitReport> {
    fit_least_squares_with(trace, bx, init, &FitOptions::default())
}

pub fn fit_least_squares_with(
    trace: &SurfaceTrace,
    bx: &FitBox,
    init: Option<AiryParams>,
    opts: &FitOptions,
) -> Result<FitReport> {
    bx.validate()?;
    if trace.len() < 10 {
        return Err(Error::InsufficientWindow(format!("least squares needs at least 10 samples, got {}", trace.len())));
    }
    let t = &trace.abscissae;
    let scale = trace.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::InvalidFit("trace is identically zero or non-finite".into()));
    }
    let d: Vec<Complex64> = trace.values.iter().map(|v| v / scale).collect();
    let sbox = bx.scaled(scale);
    // without an explicit start, the direct estimate and the projected grid optimum both seed LM
    let mut starts: Vec<(AiryParams, &str)> = Vec::new();
    match init {
        Some(p) => starts.push((p, "given")),
        None => {
            if let Ok(p) = direct_fit(trace) {
                starts.push((p, "direct"));
            }
            let mut p = projected_initial_guess(t, &d, &sbox);
            p.z *= scale;
            starts.push((p, "projection"));
        }
    }
    let mut best: Option<(f64, Vector4<f64>, usize, bool, Vec<f64>, AiryParams, &str)> = None;
    for (start, label) in starts {
        let mut v = AiryParams { z: start.z / scale, ..start }.to_vec();
        sbox.project(&mut v);
        let (v, iterations, converged, history) = match opts.method {
            FitMethod::LevenbergMarquardt => levenberg_marquardt(v, t, &d, &sbox, opts),
            FitMethod::GradientDescent => gradient_descent(v, t, &d, &sbox, opts),
        };
        let j = cost(&v, t, &d);
        if best.as_ref().is_none_or(|b| j < b.0) {
            best = Some((j, v, iterations, converged, history, start, label));
        }
    }
    let (_, v, iterations, converged, history, init, init_source) = best.expect("at least one start");
    let mut params = AiryParams::from_vec(&v);
    params.z *= scale;
    let j = lsq_objective(&params, t, &trace.values)?;
    let h = hessian_matrix(&params, t, &trace.values);
    let lam = SymmetricEigen::new(h).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(FitReport {
        params,
        residual_l2: (2.0 * j).sqrt(),
        iterations,
        converged,
        hessian_min_eigenvalue: lam,
        init,
        init_source: init_source.into(),
        history: history.into_iter().map(|h| h * scale * scale).collect(),
    })
}

fn cost(v: &Vector4<f64>, t: &[f64], d: &[Complex64]) -> f64 {
    lsq_objective(&AiryParams::from_vec(v), t, d).unwrap_or(f64::INFINITY)
}

fn levenberg_marquardt(
    mut v: Vector4<f64>,
    t: &[f64],
    d: &[Complex64],
    bx: &FitBox,
    opts: &FitOptions,
) -> (Vector4<f64>, usize, bool, Vec<f64>) {
    let mut lambda = 1e-3;
    let mut history = Vec::new();
    let mut lin = linearize(&AiryParams::from_vec(&v), t, d);
    let mut j = lin.r.iter().map(|r| r.norm_sqr()).sum::<f64>() / (2.0 * t.len() as f64);
    for iter in 0..opts.max_iterations {
        if opts.record_history {
            history.push(j);
        }
        let g = gradient_of(&lin);
        if g.norm() <= opts.gradient_tol {
            return (v, iter, true, history);
        }
        let a = gauss_newton_of(&lin);
        loop {
            let mut m = a;
            for k in 0..4 {
                m[(k, k)] += lambda * a[(k, k)].max(1e-12);
            }
            let step = match m.cholesky() {
                Some(c) => c.solve(&(-g)),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e20 {
                        return (v, iter, false, history);
                    }
                    continue;
                }
            };
            let mut trial = v + step;
            bx.project(&mut trial);
            let actual = trial - v;
            let small = actual.norm() <= opts.step_tol * (1.0 + v.norm());
            let jt = cost(&trial, t, d);
            if jt <= j {
                v = trial;
                lambda = (lambda / 3.0).max(1e-15);
                lin = linearize(&AiryParams::from_vec(&v), t, d);
                j = jt;
                if small {
                    return (v, iter + 1, true, history);
                }
                break;
            }
            if small {
                return (v, iter + 1, true, history);
            }
            lambda *= 4.0;
            if lambda > 1e20 {
                return (v, iter + 1, false, history);
            }
        }
    }
    let g = gradient_of(&lin);
    (v, opts.max_iterations, g.norm() <= opts.gradient_tol, history)
}

fn gradient_descent(
    mut v: Vector4<f64>,
    t: &[f64],
    d: &[Complex64],
    bx: &FitBox,
    opts: &FitOptions,
) -> (Vector4<f64>, usize, bool, Vec<f64>) {
    let mut history = Vec::new();
    let mut j = cost(&v, t, d);
    let mut step = 1.0;
    for iter in 0..opts.max_iterations {
        if opts.record_history {
            history.push(j);
        }
        let g = gradient_of(&linearize(&AiryParams::from_vec(&v), t, d));
        let gn = g.norm();
        if gn <= opts.gradient_tol {
            return (v, iter, true, history);
        }
        step *= 2.0;
        loop {
            let mut trial = v - g * step;
            bx.project(&mut trial);
            let jt = cost(&trial, t, d);
            if jt <= j - 1e-4 * step * gn * gn {
                let moved = (trial - v).norm();
                v = trial;
                j = jt;
                if moved <= opts.step_tol * (1.0 + v.norm()) {
                    return (v, iter + 1, true, history);
                }
                break;
            }
            step *= 0.5;
            if step < 1e-30 {
                return (v, iter + 1, false, history);
            }
        }
    }
    (v, opts.max_iterations, false, history)
}

/// Λ(p) = β/α of a converged fit.
pub fn lambda_resonant_point(report: &FitReport) -> Result<f64> {
    if !(report.params.alpha > 0.0) {
        return Err(Error::InvalidFit(format!("α = {} is not positive", report.params.alpha)));
    }
    if !report.converged {
        return Err(Error::InvalidFit(format!("fit did not converge after {} iterations", report.iterations)));
    }
    Ok(report.params.x_star())
}

/// FitReport as JSON, with the resonant point added for convenience.
pub fn report_to_json(report: &FitReport) -> serde_json::Value {
    let mut v = serde_json::to_value(report).expect("report serializes");
    v["x_star"] = serde_json::json!(report.params.x_star());
    v
}

pub fn report_from_json(v: &serde_json::Value) -> Result<FitReport> {
    serde_json::from_value(v.clone()).map_err(|e| Error::Parse(format!("fit report: {e}")))
}

/// Samples of the model on the given abscissae as a trace.
pub fn model_trace(p: &AiryParams, t: &[f64], k: f64) -> SurfaceTrace {
    let vals = t.iter().map(|&ti| model_eval(p, ti)).collect();
    let mut tr = SurfaceTrace::new(t.to_vec(), vals, k).expect("abscissae sorted");
    tr.meta.generator = "airy-model".into();
    tr
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p0() -> AiryParams {
        AiryParams::new(Complex64::new(2.0, 1.0), 1.4, -2.8)
    }

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn model_examples() {
        let one = AiryParams::new(Complex64::new(1.0, 0.0), 1.0, 0.0);
        assert_abs_diff_eq!(model_eval(&one, 0.0).re, 0.355028053887817, epsilon = 1e-15);
        let p = p0();
        let p2 = AiryParams { z: p.z * 2.0, ..p };
        assert!((model_eval(&p2, 0.7) - 2.0 * model_eval(&p, 0.7)).norm() < 1e-14);
        assert!((model_eval(&p, p.x_star()) - p.z * 0.355028053887817).norm() < 1e-14);
    }

    #[test]
    fn objective_examples() {
        let t = grid(-6.0, 6.0, 50);
        let p = p0();
        let d: Vec<Complex64> = t.iter().map(|&x| model_eval(&p, x)).collect();
        assert_eq!(lsq_objective(&p, &t, &d).unwrap(), 0.0);
        let zeros = vec![Complex64::new(0.0, 0.0); t.len()];
        let expect: f64 = t.iter().map(|&x| airy(p.beta - p.alpha * x).ai.powi(2)).sum::<f64>() * p.z.norm_sqr()
            / (2.0 * t.len() as f64);
        assert_abs_diff_eq!(lsq_objective(&p, &t, &zeros).unwrap(), expect, epsilon = 1e-14);
        assert!(lsq_objective(&p, &[], &[]).is_err());
        let g = lsq_gradient(&p, &t, &d).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn amplitude_gradient_is_normal_equation_residual() {
        let t = grid(-5.0, 4.0, 40);
        let d: Vec<Complex64> = t.iter().map(|&x| Complex64::new(x.sin(), 0.3 * x)).collect();
        let p = AiryParams::new(Complex64::new(0.4, -0.2), 1.1, -1.0);
        let g = lsq_gradient(&p, &t, &d).unwrap();
        let n = t.len() as f64;
        let mut res = Complex64::new(0.0, 0.0);
        for (&x, &di) in t.iter().zip(&d) {
            let a = airy(p.beta - p.alpha * x).ai;
            res += a * (p.z * a - di);
        }
        assert_abs_diff_eq!(g[0], res.re / n, epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], res.im / n, epsilon = 1e-14);
    }

    #[test]
    fn exact_fit_hessian_is_gauss_newton_and_positive() {
        let t = grid(-6.0, 6.0, 30);
        let p = p0();
        let d: Vec<Complex64> = t.iter().map(|&x| model_eval(&p, x)).collect();
        let h = lsq_hessian(&p, &t, &d).unwrap();
        let a = lsq_hessian_gauss_newton(&p, &t, &d).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(h[i][j], a[i][j], epsilon = 1e-14);
            }
        }
        assert!(min_eigenvalue(&h) > 0.0);
    }

    #[test]
    fn direct_fit_recovers_reference_parameters() {
        let p = p0();
        let t = grid(-6.0, 6.0, 24001);
        let tr = model_trace(&p, &t, 1.0);
        let q = direct_fit(&tr).unwrap();
        assert!(q.distance(&p) < 1e-6, "{q:?}");
        let one = AiryParams::new(Complex64::new(1.0, 0.0), 1.0, 0.0);
        let q1 = direct_fit(&model_trace(&one, &grid(-4.0, 8.0, 24001), 1.0)).unwrap();
        assert!(q1.beta.abs() < 1e-8);
        let two = AiryParams::new(Complex64::new(1.0, 0.0), 2.0, 0.0);
        let q2 = direct_fit(&model_trace(&two, &grid(-4.0, 8.0, 24001), 1.0)).unwrap();
        assert_abs_diff_eq!(q2.alpha, 2.0 * q1.alpha, epsilon = 1e-6);
    }

    #[test]
    fn direct_fit_needs_two_crossings() {
        let p = p0();
        let tr = model_trace(&p, &grid(-6.0, -1.0, 100), 1.0);
        assert!(matches!(direct_fit(&tr), Err(Error::InsufficientWindow(_))));
    }

    #[test]
    fn least_squares_recovers_noiseless_parameters() {
        let p = p0();
        let tr = model_trace(&p, &grid(-6.0, 6.0, 200), 1.0);
        let rep = fit_least_squares(&tr, &FitBox::default(), None).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 50);
        assert!(rep.params.distance(&p) < 1e-8);
        assert_abs_diff_eq!(lambda_resonant_point(&rep).unwrap(), -2.0, epsilon = 1e-8);
        assert!(rep.hessian_min_eigenvalue > 0.0);
    }

    #[test]
    fn gradient_descent_flag_reduces_objective() {
        let p = p0();
        let tr = model_trace(&p, &grid(-6.0, 6.0, 200), 1.0);
        let init = AiryParams::new(Complex64::new(1.9, 1.1), 1.35, -2.7);
        let opts = FitOptions { method: FitMethod::GradientDescent, max_iterations: 3000, ..Default::default() };
        let rep = fit_least_squares_with(&tr, &FitBox::default(), Some(init), &opts).unwrap();
        let j0 = lsq_objective(&init, &tr.abscissae, &tr.values).unwrap();
        let j1 = lsq_objective(&rep.params, &tr.abscissae, &tr.values).unwrap();
        assert!(j1 < 1e-3 * j0);
    }

    #[test]
    fn projection_fallback_finds_basin() {
        let p = p0();
        let t = grid(-6.0, 6.0, 200);
        let d: Vec<Complex64> = t.iter().map(|&x| model_eval(&p, x)).collect();
        let q = projected_initial_guess(&t, &d, &FitBox::default());
        assert!((q.x_star() - p.x_star()).abs() < 0.3);
    }

    #[test]
    fn lambda_rejects_bad_reports() {
        let rep = FitReport {
            params: AiryParams::new(Complex64::new(1.0, 0.0), -1.0, 0.0),
            residual_l2: 0.0,
            iterations: 1,
            converged: true,
            hessian_min_eigenvalue: 0.0,
            init: p0(),
            init_source: String::new(),
            history: vec![],
        };
        assert!(lambda_resonant_point(&rep).is_err());
        let ok = FitReport { params: AiryParams::new(Complex64::new(1.0, 0.0), 1.4, -2.8), ..rep.clone() };
        assert_abs_diff_eq!(lambda_resonant_point(&ok).unwrap(), -2.0, epsilon = 1e-15);
        let zero = FitReport { params: AiryParams::new(Complex64::new(1.0, 0.0), 0.7, 0.0), ..rep };
        assert_eq!(lambda_resonant_point(&zero).unwrap(), 0.0);
    }

    #[test]
    fn report_json_round_trip() {
        let p = p0();
        let tr = model_trace(&p, &grid(-6.0, 6.0, 100), 1.0);
        let rep = fit_least_squares(&tr, &FitBox::default(), None).unwrap();
        let v = report_to_json(&rep);
        assert!(v["params"]["re_z"].is_number());
        let back = report_from_json(&v).unwrap();
        assert_eq!(back, rep);
    }
}
