//! Width profiles, transverse modes, local wavenumbers and resonant points.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

pub const GAMMA1: f64 = 3e-6;
pub const GAMMA2: f64 = 8192.0 / 5.0 * 1e-6;
pub const GAMMA3: f64 = 5e-5;
/// Plateau offset of h2, chosen so that h2 is continuous at x = ±4.
pub const GAMMA4: f64 = 512.0 / 3.0 * 1e-5;
pub const GAMMA5: f64 = 0.01 / 30.0;
pub const GAMMA6: f64 = 25e-4;
pub const GAMMA7: f64 = 5e-4;
pub const GAMMA8: f64 = 4e-4;

pub const TOL_SIMPLE: f64 = 1e-6;
pub const TOL_FORBIDDEN: f64 = 1e-8;
pub const RESONANCE_GRID: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BuiltinId {
    H1,
    H2,
    H3,
    H4,
    H5,
    H6,
    H7,
}

impl BuiltinId {
    pub const ALL: [BuiltinId; 7] = [
        BuiltinId::H1,
        BuiltinId::H2,
        BuiltinId::H3,
        BuiltinId::H4,
        BuiltinId::H5,
        BuiltinId::H6,
        BuiltinId::H7,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinId::H1 => "h1",
            BuiltinId::H2 => "h2",
            BuiltinId::H3 => "h3",
            BuiltinId::H4 => "h4",
            BuiltinId::H5 => "h5",
            BuiltinId::H6 => "h6",
            BuiltinId::H7 => "h7",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        BuiltinId::ALL
            .iter()
            .copied()
            .find(|b| b.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Parse(format!("unknown profile id '{s}'")))
    }
}

/// Monotone piecewise-cubic interpolant through sampled widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableShape {
    pub xs: Vec<f64>,
    pub hs: Vec<f64>,
    slopes: Vec<f64>,
}

impl TableShape {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Domain("profile table needs at least two samples".into()));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let hs: Vec<f64> = points.iter().map(|p| p.1).collect();
        if xs.windows(2).any(|w| !(w[1] > w[0])) || hs.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::Domain("profile table needs increasing x and positive finite widths".into()));
        }
        let n = xs.len();
        let d: Vec<f64> = (0..n - 1).map(|i| (hs[i + 1] - hs[i]) / (xs[i + 1] - xs[i])).collect();
        let mut m = vec![0.0; n];
        m[0] = d[0];
        m[n - 1] = d[n - 2];
        for i in 1..n - 1 {
            if d[i - 1] * d[i] <= 0.0 {
                m[i] = 0.0;
            } else {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                let w1 = 2.0 * h1 + h0;
                let w2 = h1 + 2.0 * h0;
                m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
            }
        }
        Ok(TableShape { xs, hs, slopes: m })
    }

    fn locate(&self, x: f64) -> Option<usize> {
        let n = self.xs.len();
        if x <= self.xs[0] || x >= self.xs[n - 1] {
            return None;
        }
        let i = self.xs.partition_point(|&v| v <= x);
        Some(i - 1)
    }

    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let n = self.xs.len();
        match self.locate(x) {
            None => {
                let h = if x <= self.xs[0] { self.hs[0] } else { self.hs[n - 1] };
                (h, 0.0, 0.0)
            }
            Some(i) => {
                let w = self.xs[i + 1] - self.xs[i];
                let t = (x - self.xs[i]) / w;
                let (y0, y1) = (self.hs[i], self.hs[i + 1]);
                let (m0, m1) = (self.slopes[i] * w, self.slopes[i + 1] * w);
                let t2 = t * t;
                let t3 = t2 * t;
                let h = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
                    + (t3 - 2.0 * t2 + t) * m0
                    + (-2.0 * t3 + 3.0 * t2) * y1
                    + (t3 - t2) * m1;
                let dh = (6.0 * t2 - 6.0 * t) * y0
                    + (3.0 * t2 - 4.0 * t + 1.0) * m0
                    + (-6.0 * t2 + 6.0 * t) * y1
                    + (3.0 * t2 - 2.0 * t) * m1;
                let ddh = (12.0 * t - 6.0) * y0 + (6.0 * t - 4.0) * m0 + (-12.0 * t + 6.0) * y1 + (6.0 * t - 2.0) * m1;
                (h, dh / w, ddh / (w * w))
            }
        }
    }
}

/// Closed-form width functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Flat { h: f64 },
    Builtin(BuiltinId),
    /// Linear ramp of the given slope on [a, b], passing through `center` at the midpoint.
    Ramp { center: f64, slope: f64, a: f64, b: f64 },
    /// Increasing profile with slope θη at `x_star` that steepens to η within `width`,
    /// clamped to [h_lo, h_hi].
    SoftRamp { h_star: f64, x_star: f64, eta: f64, theta: f64, width: f64, h_lo: f64, h_hi: f64 },
    Table(TableShape),
}

fn builtin_eval(id: BuiltinId, x: f64) -> (f64, f64, f64) {
    match id {
        BuiltinId::H1 => {
            if x < -4.0 {
                (0.1 - GAMMA2, 0.0, 0.0)
            } else if x > 4.0 {
                (0.1 + GAMMA2, 0.0, 0.0)
            } else {
                let x2 = x * x;
                let p = x2 * x2 * x / 5.0 - 32.0 * x2 * x / 3.0 + 256.0 * x;
                let q = x2 - 16.0;
                (0.1 + GAMMA1 * p, GAMMA1 * q * q, GAMMA1 * 4.0 * x * q)
            }
        }
        BuiltinId::H2 => {
            if x.abs() > 4.0 {
                (0.1 + x.signum() * GAMMA4, 0.0, 0.0)
            } else {
                let t = x.abs();
                let s = if x < 0.0 { -1.0 } else { 1.0 };
                let p = t.powi(5) / 5.0 - 2.0 * t.powi(4) + 16.0 * t.powi(3) / 3.0;
                let dp = t * t * (t - 4.0) * (t - 4.0);
                let ddp = 4.0 * t.powi(3) - 24.0 * t * t + 32.0 * t;
                (0.1 + s * GAMMA3 * p, GAMMA3 * dp, s * GAMMA3 * ddp)
            }
        }
        BuiltinId::H3 => {
            let c = x.clamp(-4.0, 4.0);
            let d = if (-4.0..=4.0).contains(&x) { GAMMA5 } else { 0.0 };
            (0.1 + GAMMA5 * c, d, 0.0)
        }
        BuiltinId::H4 => {
            if x < -4.0 {
                (0.1 - 4.0 * GAMMA5, 0.0, 0.0)
            } else if x > 4.0 {
                (0.1 + 4.0 * GAMMA5, 0.0, 0.0)
            } else {
                let r = (x + 4.0).sqrt();
                let h = 0.1 - 4.0 * GAMMA5 + 4.0 * GAMMA5 * r / 2f64.sqrt();
                let dh = if r > 0.0 { 2f64.sqrt() * GAMMA5 / r } else { f64::INFINITY };
                let ddh = if r > 0.0 { -GAMMA5 / (2f64.sqrt() * r * r * r) } else { f64::NEG_INFINITY };
                (h, dh, ddh)
            }
        }
        BuiltinId::H5 => {
            if x.abs() > 5.0 {
                (0.1, 0.0, 0.0)
            } else {
                let w = PI / 10.0;
                let a = w * (x + 5.0);
                (0.1 + GAMMA6 * a.sin(), GAMMA6 * w * a.cos(), -GAMMA6 * w * w * a.sin())
            }
        }
        BuiltinId::H6 => {
            if x < -5.0 || x > 4.0 {
                (0.1, 0.0, 0.0)
            } else if x <= 0.0 {
                (0.1 - GAMMA7 * (x + 5.0), -GAMMA7, 0.0)
            } else {
                (0.1 + GAMMA6 / 4.0 * (x - 4.0), GAMMA6 / 4.0, 0.0)
            }
        }
        BuiltinId::H7 => {
            let base = 0.1 + GAMMA8 * 3f64.sqrt();
            if x > 4.0 {
                (base, 0.0, 0.0)
            } else {
                let xc = x.max(-3.5);
                let r = (xc + 5.0).sqrt();
                let s = 4.0 * PI * r / 3.0;
                let h = base + 2.0 * GAMMA8 * s.sin();
                if x < -3.5 {
                    (h, 0.0, 0.0)
                } else {
                    let ds = 2.0 * PI / (3.0 * r);
                    let dds = -PI / (3.0 * r * r * r);
                    let dh = 2.0 * GAMMA8 * s.cos() * ds;
                    let ddh = 2.0 * GAMMA8 * (-s.sin() * ds * ds + s.cos() * dds);
                    (h, dh, ddh)
                }
            }
        }
    }
}

fn builtin_support(id: BuiltinId) -> (f64, f64) {
    match id {
        BuiltinId::H1 | BuiltinId::H2 | BuiltinId::H3 | BuiltinId::H4 => (-4.0, 4.0),
        BuiltinId::H5 => (-5.0, 5.0),
        BuiltinId::H6 => (-5.0, 4.0),
        BuiltinId::H7 => (-3.5, 4.0),
    }
}

impl Shape {
    /// (h, h', h'') at x.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        match self {
            Shape::Flat { h } => (*h, 0.0, 0.0),
            Shape::Builtin(id) => builtin_eval(*id, x),
            Shape::Ramp { center, slope, a, b } => {
                let mid = 0.5 * (a + b);
                let c = x.clamp(*a, *b);
                let d = if x >= *a && x <= *b { *slope } else { 0.0 };
                (center + slope * (c - mid), d, 0.0)
            }
            Shape::SoftRamp { h_star, x_star, eta, theta, width, h_lo, h_hi } => {
                let raw = |x: f64| {
                    let u = (x - x_star) / width;
                    h_star + eta * (x - x_star - (1.0 - theta) * width * u.atan())
                };
                let h = raw(x);
                if h <= *h_lo {
                    (*h_lo, 0.0, 0.0)
                } else if h >= *h_hi {
                    (*h_hi, 0.0, 0.0)
                } else {
                    let u = (x - x_star) / width;
                    let dh = eta * (1.0 - (1.0 - theta) / (1.0 + u * u));
                    let ddh = eta * (1.0 - theta) * 2.0 * u / (width * (1.0 + u * u) * (1.0 + u * u));
                    (h, dh, ddh)
                }
            }
            Shape::Table(t) => t.eval(x),
        }
    }

    fn support(&self) -> (f64, f64) {
        match self {
            Shape::Flat { .. } => (0.0, 0.0),
            Shape::Builtin(id) => builtin_support(*id),
            Shape::Ramp { a, b, .. } => (*a, *b),
            Shape::SoftRamp { h_star, x_star, eta, theta, width, h_lo, h_hi } => {
                let raw = |x: f64| {
                    let u = (x - x_star) / width;
                    h_star + eta * (x - x_star - (1.0 - theta) * width * u.atan())
                };
                let span = (h_hi - h_lo) / (theta * eta) + 2.0 * width;
                let lo = bisect_root(|x| raw(x) - h_lo, x_star - span, *x_star);
                let hi = bisect_root(|x| raw(x) - h_hi, *x_star, x_star + span);
                (lo, hi)
            }
            Shape::Table(t) => (t.xs[0], t.xs[t.xs.len() - 1]),
        }
    }
}

fn bisect_root<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        if hi - lo <= 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A waveguide width profile 0 < y < h(x) with h' compactly supported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub shape: Shape,
    pub support: (f64, f64),
    pub h_min: f64,
    pub h_max: f64,
    pub eta: f64,
    pub nonsmooth: bool,
    pub label: String,
}

impl Profile {
    pub fn new(shape: Shape, label: impl Into<String>) -> Result<Self> {
        let support = shape.support();
        let nonsmooth = matches!(shape, Shape::Builtin(BuiltinId::H4));
        let (a, b) = support;
        let n = 20_000;
        let mut hmin = f64::INFINITY;
        let mut hmax = f64::NEG_INFINITY;
        let mut dmax: f64 = 0.0;
        let mut imin = 0;
        let mut imax = 0;
        for i in 0..=n {
            let x = if b > a { a + (b - a) * i as f64 / n as f64 } else { a };
            let (h, dh, _) = shape.eval(x);
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::Domain(format!("profile width {h} at x = {x} is not positive")));
            }
            if h < hmin {
                hmin = h;
                imin = i;
            }
            if h > hmax {
                hmax = h;
                imax = i;
            }
            let excluded = nonsmooth && x < a + 1e-3;
            if !excluded && dh.is_finite() {
                dmax = dmax.max(dh.abs());
            }
        }
        if b > a {
            let step = (b - a) / n as f64;
            let refine = |i: usize, sign: f64| {
                let xc = a + step * i as f64;
                let lo = (xc - step).max(a);
                let hi = (xc + step).min(b);
                golden(|x| sign * shape.eval(x).0, lo, hi)
            };
            hmin = hmin.min(shape.eval(refine(imin, 1.0)).0);
            hmax = hmax.max(shape.eval(refine(imax, -1.0)).0);
        }
        // plateaus outside the support
        for x in [a - 1.0, b + 1.0] {
            let h = shape.eval(x).0;
            hmin = hmin.min(h);
            hmax = hmax.max(h);
        }
        Ok(Profile { shape, support, h_min: hmin, h_max: hmax, eta: 1.1 * dmax, nonsmooth, label: label.into() })
    }

    pub fn builtin(id: BuiltinId) -> Self {
        Profile::new(Shape::Builtin(id), id.name()).expect("builtin profiles are valid")
    }

    pub fn flat(h: f64) -> Result<Self> {
        Profile::new(Shape::Flat { h }, format!("flat({h})"))
    }

    pub fn from_table(points: &[(f64, f64)]) -> Result<Self> {
        Profile::new(Shape::Table(TableShape::new(points)?), "table")
    }

    pub fn h(&self, x: f64) -> f64 {
        self.shape.eval(x).0
    }

    pub fn h_prime(&self, x: f64) -> f64 {
        self.shape.eval(x).1
    }

    pub fn h_double_prime(&self, x: f64) -> f64 {
        self.shape.eval(x).2
    }

    /// sup |h''| over a dense sample of the support, for diagnostics.
    pub fn curvature_sup(&self) -> f64 {
        let (a, b) = self.support;
        let n = 10_000;
        (0..=n)
            .map(|i| a + (b - a) * i as f64 / n as f64)
            .filter(|x| !(self.nonsmooth && *x < a + 1e-3))
            .map(|x| self.h_double_prime(x).abs())
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max)
    }
}

fn golden<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..120 {
        let c = hi - r * (hi - lo);
        let d = lo + r * (hi - lo);
        if f(c) < f(d) {
            hi = d;
        } else {
            lo = c;
        }
    }
    0.5 * (lo + hi)
}

/// JSON form of a profile: either a builtin id or a sampled table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Id { id: String },
    Table { table: Vec<(f64, f64)> },
}

impl ProfileSpec {
    pub fn build(&self) -> Result<Profile> {
        match self {
            ProfileSpec::Id { id } => Ok(Profile::builtin(BuiltinId::parse(id)?)),
            ProfileSpec::Table { table } => Profile::from_table(table),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Transverse mode φ_n(x, y).
pub fn mode_function(n: usize, profile: &Profile, x: f64, y: f64) -> Result<f64> {
    let h = profile.h(x);
    if !(0.0..=h).contains(&y) {
        return Err(Error::Domain(format!("y = {y} outside the cross-section [0, {h}]")));
    }
    Ok(transverse(n, h, y))
}

/// φ_n at height y in a cross-section of width h.
pub fn transverse(n: usize, h: f64, y: f64) -> f64 {
    if n == 0 {
        1.0 / h.sqrt()
    } else {
        (2.0 / h).sqrt() * (n as f64 * PI * y / h).cos()
    }
}

/// k_n(x) with non-negative real and imaginary parts.
pub fn local_wavenumber(n: usize, k: f64, profile: &Profile, x: f64) -> Complex64 {
    wavenumber_at_width(n, k, profile.h(x))
}

pub fn wavenumber_at_width(n: usize, k: f64, h: f64) -> Complex64 {
    let t = n as f64 * PI / h;
    let sq = k * k - t * t;
    if sq >= 0.0 {
        Complex64::new(sq.sqrt(), 0.0)
    } else {
        Complex64::new(0.0, (-sq).sqrt())
    }
}

/// k_n(x)² as a real number.
pub fn wavenumber_squared(n: usize, k: f64, h: f64) -> f64 {
    let t = n as f64 * PI / h;
    k * k - t * t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Propagative,
    Evanescent,
    LocallyResonant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonantPoint {
    pub x: f64,
    pub simple: bool,
    /// +1 when h increases through the point, -1 when it decreases.
    pub orientation: f64,
}

/// A mode index and frequency bound to a profile.
#[derive(Debug, Clone)]
pub struct ModeContext {
    pub n: usize,
    pub k: f64,
    pub profile: Arc<Profile>,
    pub classification: Classification,
    pub resonant_points: Vec<ResonantPoint>,
    pub designated: Option<usize>,
}

impl ModeContext {
    pub fn wavenumber(&self, x: f64) -> Complex64 {
        local_wavenumber(self.n, self.k, &self.profile, x)
    }

    pub fn wavenumber_squared(&self, x: f64) -> f64 {
        wavenumber_squared(self.n, self.k, self.profile.h(x))
    }

    /// Picks the resonant point closest to `s` as the turning point of the kernel.
    pub fn designate_nearest(mut self, s: f64) -> Self {
        self.designated = self
            .resonant_points
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.x - s).abs().total_cmp(&(b.1.x - s).abs()))
            .map(|(i, _)| i);
        self
    }

    /// Picks the resonant point closest to `s` on the given side (-1 left, +1 right).
    pub fn designate_on_side(mut self, s: f64, side: f64) -> Self {
        self.designated = self
            .resonant_points
            .iter()
            .enumerate()
            .filter(|(_, p)| (p.x - s) * side >= 0.0)
            .min_by(|a, b| (a.1.x - s).abs().total_cmp(&(b.1.x - s).abs()))
            .map(|(i, _)| i);
        self
    }

    pub fn turning_point(&self) -> Option<ResonantPoint> {
        self.designated.map(|i| self.resonant_points[i])
    }
}

/// δ(k): distance of k to the forbidden frequencies nπ/h_min, nπ/h_max.
pub fn delta_margin(k: f64, profile: &Profile, n_max: usize) -> f64 {
    delta_for_bounds(k, profile.h_min, profile.h_max, n_max)
}

pub fn delta_for_bounds(k: f64, h_min: f64, h_max: f64, n_max: usize) -> f64 {
    let mut best = f64::INFINITY;
    for n in 0..=n_max {
        let t = n as f64 * PI;
        let a = (k * k - (t / h_min).powi(2)).abs().sqrt();
        let b = (k * k - (t / h_max).powi(2)).abs().sqrt();
        best = best.min(a).min(b);
    }
    best
}

/// Largest mode index that can be propagative somewhere.
pub fn default_delta_modes(k: f64, profile: &Profile) -> usize {
    (k * profile.h_max / PI).floor() as usize
}

/// Classifies mode n at frequency k and locates its resonant points.
pub fn classify_mode(n: usize, k: f64, profile: &Arc<Profile>) -> Result<ModeContext> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::Domain(format!("frequency {k} must be positive")));
    }
    let mut ctx = ModeContext {
        n,
        k,
        profile: profile.clone(),
        classification: Classification::Propagative,
        resonant_points: Vec::new(),
        designated: None,
    };
    if n == 0 {
        return Ok(ctx);
    }
    let t = n as f64 * PI;
    let k_lo = t / profile.h_max;
    let k_hi = t / profile.h_min;
    if (k - k_lo).abs() < TOL_FORBIDDEN || (k - k_hi).abs() < TOL_FORBIDDEN {
        let nm = default_delta_modes(k, profile).max(n);
        return Err(Error::ForbiddenFrequency { k, delta: delta_margin(k, profile, nm) });
    }
    if k > k_hi {
        return Ok(ctx);
    }
    if k < k_lo {
        ctx.classification = Classification::Evanescent;
        return Ok(ctx);
    }
    let target = t / k;
    let (a, b) = profile.support;
    let g = |x: f64| profile.h(x) - target;
    let m = RESONANCE_GRID;
    let mut prev_x = a;
    let mut prev = g(a);
    for i in 1..=m {
        let x = a + (b - a) * i as f64 / m as f64;
        let v = g(x);
        if v == 0.0 || (v > 0.0) != (prev > 0.0) {
            if prev == 0.0 {
                prev_x = x;
                prev = v;
                continue;
            }
            let r = bisect_root(&g, prev_x, x);
            let d = profile.h_prime(r);
            let d = if d.is_finite() { d } else { (profile.h(r + 1e-7) - profile.h(r - 1e-7)) / 2e-7 };
            ctx.resonant_points.push(ResonantPoint {
                x: r,
                simple: d.abs() > TOL_SIMPLE,
                orientation: if v > prev { 1.0 } else { -1.0 },
            });
        }
        prev_x = x;
        prev = v;
    }
    if !ctx.resonant_points.is_empty() {
        ctx.classification = Classification::LocallyResonant;
    } else {
        ctx.classification = Classification::Evanescent;
    }
    Ok(ctx)
}

/// Uniform grid {a : b : l}.
pub fn uniform_grid(a: f64, b: f64, l: usize) -> Vec<f64> {
    match l {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..l).map(|i| a + (b - a) * i as f64 / (l - 1) as f64).collect(),
    }
}

/// Parses the grid notation "a:b:l".
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.trim().trim_matches(|c| c == '{' || c == '}').split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Parse(format!("grid '{s}' is not of the form a:b:l")));
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| Error::Parse(format!("bad grid start in '{s}'")))?;
    let b: f64 = parts[1].trim().parse().map_err(|_| Error::Parse(format!("bad grid end in '{s}'")))?;
    let l: usize = parts[2].trim().parse().map_err(|_| Error::Parse(format!("bad grid count in '{s}'")))?;
    if !(b >= a) || l == 0 {
        return Err(Error::Parse(format!("grid '{s}' is empty or reversed")));
    }
    Ok(uniform_grid(a, b, l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special_functions::{integrate, QuadratureRule};
    use approx::assert_abs_diff_eq;

    #[test]
    fn mode_function_examples() {
        let p = Profile::flat(0.1).unwrap();
        assert_abs_diff_eq!(mode_function(0, &p, 0.0, 0.05).unwrap(), 10f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(mode_function(1, &p, 0.0, 0.1).unwrap(), -(20f64).sqrt(), epsilon = 1e-12);
        assert!(mode_function(1, &p, 0.0, 0.2).is_err());
        let q = Profile::builtin(BuiltinId::H1);
        let h = q.h(1.3);
        let r = QuadratureRule::default().with_tol(1e-13);
        let v = integrate(|y| mode_function(1, &q, 1.3, y).unwrap() * mode_function(2, &q, 1.3, y).unwrap(), 0.0, h, &r)
            .unwrap();
        assert!(v.abs() < 1e-10);
        let nrm = integrate(|y| mode_function(2, &q, 1.3, y).unwrap().powi(2), 0.0, h, &r).unwrap();
        assert_abs_diff_eq!(nrm, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn wavenumber_examples() {
        let p = Profile::flat(0.1013).unwrap();
        let kn = local_wavenumber(1, 31.1, &p, 0.0);
        let expect = (31.1f64 * 31.1 - (PI / 0.1013).powi(2)).sqrt();
        assert_abs_diff_eq!(kn.re, expect, epsilon = 1e-12);
        assert_eq!(kn.im, 0.0);
        assert_eq!(local_wavenumber(0, 31.1, &p, 0.0), Complex64::new(31.1, 0.0));
        let k0 = PI / 0.1013;
        assert!(local_wavenumber(1, k0, &p, 0.0).norm() < 1e-6);
        let ev = local_wavenumber(2, 31.1, &p, 0.0);
        assert_eq!(ev.re, 0.0);
        assert!(ev.im > 0.0);
    }

    #[test]
    fn builtin_examples() {
        let h1 = Profile::builtin(BuiltinId::H1);
        assert_abs_diff_eq!(h1.h(0.0), 0.1, epsilon = 1e-15);
        let h3 = Profile::builtin(BuiltinId::H3);
        assert_abs_diff_eq!(h3.h(5.0), 0.1 + 4.0 * GAMMA5, epsilon = 1e-15);
        let h5 = Profile::builtin(BuiltinId::H5);
        assert_abs_diff_eq!(h5.h(-5.0), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(h5.h(5.0), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(h5.h(0.0), 0.1 + GAMMA6, epsilon = 1e-15);
        assert_abs_diff_eq!(h1.h_max, 0.1016384, epsilon = 1e-12);
        let h2 = Profile::builtin(BuiltinId::H2);
        assert_abs_diff_eq!(h2.h_max, 0.1017066666666667, epsilon = 1e-12);
        let h7 = Profile::builtin(BuiltinId::H7);
        assert_abs_diff_eq!(h7.h(6.0), 0.1006928203230276, epsilon = 1e-12);
        assert!(Profile::builtin(BuiltinId::H4).nonsmooth);
    }

    #[test]
    fn builtin_derivatives_match_difference_quotients() {
        for id in BuiltinId::ALL {
            let p = Profile::builtin(id);
            let (a, b) = p.support;
            for i in 1..200 {
                let x = a + (b - a) * i as f64 / 200.0;
                let e = 1e-6;
                let fd = (p.h(x + e) - p.h(x - e)) / (2.0 * e);
                assert!((fd - p.h_prime(x)).abs() < 1e-8, "{} h' at {x}", id.name());
                let fdd = (p.h_prime(x + e) - p.h_prime(x - e)) / (2.0 * e);
                let tol = 1e-6 * (1.0 + p.h_double_prime(x).abs());
                assert!((fdd - p.h_double_prime(x)).abs() < tol, "{} h'' at {x}", id.name());
            }
        }
    }

    #[test]
    fn linear_ramp_resonant_point() {
        let p = Arc::new(Profile::builtin(BuiltinId::H3));
        let k = 31.3;
        let ctx = classify_mode(1, k, &p).unwrap();
        assert_eq!(ctx.classification, Classification::LocallyResonant);
        assert_eq!(ctx.resonant_points.len(), 1);
        assert_abs_diff_eq!(ctx.resonant_points[0].x, (PI / k - 0.1) / GAMMA5, epsilon = 1e-8);
        let mid = classify_mode(1, PI / 0.1, &p).unwrap();
        assert_abs_diff_eq!(mid.resonant_points[0].x, 0.0, epsilon = 1e-8);
        assert!(mid.resonant_points[0].simple);
    }

    #[test]
    fn bump_has_two_symmetric_points() {
        let p = Arc::new(Profile::builtin(BuiltinId::H5));
        let ctx = classify_mode(1, 31.0, &p).unwrap();
        assert_eq!(ctx.resonant_points.len(), 2);
        assert_abs_diff_eq!(ctx.resonant_points[0].x, -ctx.resonant_points[1].x, epsilon = 1e-8);
        assert_eq!(ctx.resonant_points[0].orientation, 1.0);
        assert_eq!(ctx.resonant_points[1].orientation, -1.0);
    }

    #[test]
    fn forbidden_frequency_rejected() {
        let p = Arc::new(Profile::builtin(BuiltinId::H3));
        let k = PI / p.h_min;
        match classify_mode(1, k, &p) {
            Err(Error::ForbiddenFrequency { delta, .. }) => assert!(delta < 1e-3),
            other => panic!("expected rejection, got {other:?}"),
        }
        assert!(delta_margin(k, &p, 2) < 1e-6);
    }

    #[test]
    fn delta_brute_force() {
        let (hmin, hmax) = (0.0982933, 0.1017067);
        let k = 31.4;
        let mut best = f64::INFINITY;
        for n in 0..=2 {
            for h in [hmin, hmax] {
                let t = n as f64 * PI / h;
                best = best.min((k * k - t * t).abs().sqrt());
            }
        }
        assert_abs_diff_eq!(delta_for_bounds(k, hmin, hmax, 2), best, epsilon = 1e-12);
    }

    #[test]
    fn classification_outside_band() {
        let p = Arc::new(Profile::builtin(BuiltinId::H3));
        assert_eq!(classify_mode(1, 30.0, &p).unwrap().classification, Classification::Evanescent);
        assert_eq!(classify_mode(1, 33.0, &p).unwrap().classification, Classification::Propagative);
        assert_eq!(classify_mode(0, 5.0, &p).unwrap().classification, Classification::Propagative);
    }

    #[test]
    fn table_profile_round_trip() {
        let pts: Vec<(f64, f64)> = (0..=40).map(|i| {
            let x = -4.0 + 0.2 * i as f64;
            (x, Profile::builtin(BuiltinId::H3).h(x))
        }).collect();
        let p = Profile::from_table(&pts).unwrap();
        assert_abs_diff_eq!(p.h(1.05), 0.1 + GAMMA5 * 1.05, epsilon = 1e-12);
        let spec = ProfileSpec::from_json(r#"{"table": [[0.0, 0.1], [1.0, 0.2]]}"#).unwrap();
        assert!(matches!(spec, ProfileSpec::Table { .. }));
        let id = ProfileSpec::from_json(r#"{"id": "h5"}"#).unwrap();
        assert_eq!(id.build().unwrap().label, "h5");
    }

    #[test]
    fn grid_notation() {
        let g = parse_grid("30.92:31.93:20").unwrap();
        assert_eq!(g.len(), 20);
        assert_abs_diff_eq!(g[19], 31.93, epsilon = 1e-12);
        assert!(parse_grid("1:2").is_err());
    }

    #[test]
    fn soft_ramp_slope_at_center() {
        let s = Shape::SoftRamp { h_star: 0.1, x_star: 0.0, eta: 8e-4, theta: 0.43, width: 1.0, h_lo: 0.0983, h_hi: 0.1017 };
        let p = Profile::new(s, "soft").unwrap();
        assert_abs_diff_eq!(p.h_prime(0.0), 0.43 * 8e-4, epsilon = 1e-15);
        assert_abs_diff_eq!(p.h_min, 0.0983, epsilon = 1e-12);
        assert_abs_diff_eq!(p.h_max, 0.1017, epsilon = 1e-12);
    }
}
