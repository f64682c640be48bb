//! Height-dependent light intensity profiles `I(y)` and their regularity checks.

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Knot table with piecewise-linear or cubic Hermite interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    ys: Vec<f64>,
    vs: Vec<f64>,
    slopes: Option<Vec<f64>>,
}

impl Table {
    fn new(ys: Vec<f64>, vs: Vec<f64>, slopes: Option<Vec<f64>>) -> Result<Self> {
        if ys.len() < 2 || ys.len() != vs.len() {
            return Err(Error::Domain("a table needs at least two knots and matching values".into()));
        }
        if let Some(d) = &slopes {
            if d.len() != ys.len() {
                return Err(Error::Domain("slope count does not match knot count".into()));
            }
        }
        if ys.iter().chain(vs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite knot data".into()));
        }
        if ys[0] < 0.0 {
            return Err(Error::Domain(format!("first knot {} lies below ground", ys[0])));
        }
        if let Some(w) = ys.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Domain(format!("knots not strictly increasing at y = {}", w[1])));
        }
        Ok(Table { ys, vs, slopes })
    }

    pub fn knots(&self) -> &[f64] {
        &self.ys
    }

    pub fn values(&self) -> &[f64] {
        &self.vs
    }

    fn last(&self) -> f64 {
        self.ys[self.ys.len() - 1]
    }

    // Segment [y_i, y_{i+1}) containing y; None outside the knot range.
    fn segment(&self, y: f64) -> Option<usize> {
        if y < self.ys[0] || y >= self.last() {
            return None;
        }
        Some(self.ys.partition_point(|&k| k <= y) - 1)
    }

    fn value(&self, y: f64) -> f64 {
        if y < self.ys[0] {
            return self.vs[0];
        }
        let Some(i) = self.segment(y) else {
            return self.vs[self.vs.len() - 1];
        };
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (v0, v1) = (self.vs[i], self.vs[i + 1]);
        let h = y1 - y0;
        let s = (y - y0) / h;
        match &self.slopes {
            None => v0 + s * (v1 - v0),
            Some(d) => {
                let s2 = s * s;
                let s3 = s2 * s;
                (2.0 * s3 - 3.0 * s2 + 1.0) * v0
                    + (s3 - 2.0 * s2 + s) * h * d[i]
                    + (-2.0 * s3 + 3.0 * s2) * v1
                    + (s3 - s2) * h * d[i + 1]
            }
        }
    }

    fn slope(&self, y: f64) -> f64 {
        let Some(i) = self.segment(y) else {
            return 0.0;
        };
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (v0, v1) = (self.vs[i], self.vs[i + 1]);
        let h = y1 - y0;
        match &self.slopes {
            None => (v1 - v0) / h,
            Some(d) => {
                let s = (y - y0) / h;
                let s2 = s * s;
                (6.0 * s2 - 6.0 * s) * v0 / h
                    + (3.0 * s2 - 4.0 * s + 1.0) * d[i]
                    + (-6.0 * s2 + 6.0 * s) * v1 / h
                    + (3.0 * s2 - 2.0 * s) * d[i + 1]
            }
        }
    }
}

// Primitive over a table: `below` before the first knot, 1 after the last.
fn table_primitive(t: &Table, y: f64, below: f64, seg: impl Fn(&Table, usize, f64, f64) -> f64) -> f64 {
    let first = t.ys[0];
    if y <= first {
        return below * y;
    }
    let top = t.last();
    let end = y.min(top);
    let mut acc = below * first;
    for i in 0..t.ys.len() - 1 {
        if t.ys[i] >= end {
            break;
        }
        acc += seg(t, i, t.ys[i], t.ys[i + 1].min(end));
    }
    if y > top {
        acc += y - top;
    }
    acc
}

// 8-point Gauss-Legendre nodes and weights on [-1, 1].
const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

impl Table {
    // Exact for both interpolants: Simpson integrates cubics exactly.
    fn segment_integral(&self, _i: usize, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (self.value(a) + 4.0 * self.value(0.5 * (a + b)) + self.value(b))
    }

    // int exp(-zeta) over part of segment i.
    fn exp_neg_integral(&self, i: usize, a: f64, b: f64) -> f64 {
        let h = self.ys[i + 1] - self.ys[i];
        let chord = (self.vs[i + 1] - self.vs[i]) / h;
        let linear = match &self.slopes {
            None => true,
            Some(d) => (d[i] - chord).abs() <= 1e-13 * (1.0 + chord.abs()) && (d[i + 1] - chord).abs() <= 1e-13 * (1.0 + chord.abs()),
        };
        let (za, zb) = (self.value(a), self.value(b));
        if linear {
            if chord.abs() * (b - a) < 1e-8 {
                let zm = 0.5 * (za + zb);
                return (b - a) * (-zm).exp() * (1.0 + (chord * (b - a)).powi(2) / 24.0);
            }
            return ((-za).exp() - (-zb).exp()) / chord;
        }
        let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
        r * GL8.iter().map(|&(x, w)| w * (-self.value(m + r * x)).exp()).sum::<f64>()
    }
}

/// Fritsch-Carlson limited slopes: the Hermite interpolant of monotone data stays monotone.
pub fn monotone_slopes(ys: &[f64], vs: &[f64]) -> Vec<f64> {
    let n = ys.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let delta: Vec<f64> = (0..n - 1).map(|i| (vs[i + 1] - vs[i]) / (ys[i + 1] - ys[i])).collect();
    let mut d = vec![0.0; n];
    d[0] = delta[0];
    d[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        d[i] = if delta[i - 1] * delta[i] <= 0.0 {
            0.0
        } else {
            // weighted harmonic mean
            let w1 = 2.0 * (ys[i + 1] - ys[i]) + (ys[i] - ys[i - 1]);
            let w2 = (ys[i + 1] - ys[i]) + 2.0 * (ys[i] - ys[i - 1]);
            (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i])
        };
    }
    for i in 0..n - 1 {
        if delta[i] == 0.0 {
            d[i] = 0.0;
            d[i + 1] = 0.0;
            continue;
        }
        let a = d[i] / delta[i];
        let b = d[i + 1] / delta[i];
        let r = a * a + b * b;
        if r > 9.0 {
            let t = 3.0 / r.sqrt();
            d[i] = t * a * delta[i];
            d[i + 1] = t * b * delta[i];
        }
    }
    d
}

/// Kind tag of a [`LightProfile`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Constant,
    Step,
    MollifiedStep,
    Tabulated,
    ExponentialCanopy,
}

/// A non-decreasing light intensity `y -> I(y)` with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub enum LightProfile {
    Constant { value: f64 },
    /// `low` below `at`, 1 from `at` upward.
    Step { at: f64, low: f64 },
    /// Step smoothed by a cubic smoothstep on `[at - 0.75 w, at + 0.75 w]`;
    /// the steepest slope is `(1 - low) / w`.
    MollifiedStep { at: f64, low: f64, width: f64 },
    /// Interpolated intensity values, 1 beyond the last knot.
    Tabulated(Table),
    /// `I = exp(-zeta(y))` with the shading exponent `zeta` tabulated; 1 beyond the last knot.
    ExponentialCanopy(Table),
}

fn check_low(low: f64) -> Result<()> {
    if !(low > 0.0 && low <= 1.0) {
        return Err(Error::Domain(format!("intensity level {low} outside ]0, 1]")));
    }
    Ok(())
}

impl LightProfile {
    pub fn constant(value: f64) -> Result<Self> {
        check_low(value)?;
        Ok(LightProfile::Constant { value })
    }

    pub fn full_sun() -> Self {
        LightProfile::Constant { value: 1.0 }
    }

    pub fn step(at: f64, low: f64) -> Result<Self> {
        check_low(low)?;
        if !(at > 0.0 && at.is_finite()) {
            return Err(Error::Domain(format!("step height {at} must be positive")));
        }
        Ok(LightProfile::Step { at, low })
    }

    pub fn mollified_step(at: f64, low: f64, width: f64) -> Result<Self> {
        check_low(low)?;
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::Domain(format!("mollifier width {width} must be positive")));
        }
        Ok(LightProfile::MollifiedStep { at, low, width })
    }

    /// Piecewise-linear intensity through `(y, I)` knots.
    pub fn tabulated(ys: Vec<f64>, vs: Vec<f64>) -> Result<Self> {
        let t = Table::new(ys, vs, None)?;
        validate_intensity_table(&t)?;
        Ok(LightProfile::Tabulated(t))
    }

    /// Cubic Hermite intensity with monotonicity-preserving slopes.
    pub fn tabulated_smooth(ys: Vec<f64>, vs: Vec<f64>) -> Result<Self> {
        let d = monotone_slopes(&ys, &vs);
        let t = Table::new(ys, vs, Some(d))?;
        validate_intensity_table(&t)?;
        Ok(LightProfile::Tabulated(t))
    }

    /// Canopy with shading exponent `zeta` (and its derivative) sampled at `ys`;
    /// `zeta` must be non-increasing and vanish at the top knot.
    pub fn canopy(ys: Vec<f64>, zeta: Vec<f64>, dzeta: Vec<f64>) -> Result<Self> {
        let t = Table::new(ys, zeta, Some(dzeta))?;
        if t.vs.iter().any(|&z| z < -1e-12) {
            return Err(Error::Domain("shading exponent must be non-negative".into()));
        }
        if let Some(w) = t.vs.windows(2).find(|w| w[1] > w[0] + 1e-12) {
            return Err(Error::Domain(format!("shading exponent increases ({} -> {})", w[0], w[1])));
        }
        if t.vs[t.vs.len() - 1].abs() > 1e-9 {
            return Err(Error::Domain("shading exponent must vanish at the canopy top".into()));
        }
        Ok(LightProfile::ExponentialCanopy(t))
    }

    /// `I(y) = exp(-rate (top - y))` below `top`, 1 above.
    pub fn uniform_canopy(rate: f64, top: f64) -> Result<Self> {
        if !(rate >= 0.0 && top > 0.0) {
            return Err(Error::Domain(format!("bad canopy rate {rate} or top {top}")));
        }
        Self::canopy(vec![0.0, top], vec![rate * top, 0.0], vec![-rate, -rate])
    }

    pub fn kind(&self) -> ProfileKind {
        match self {
            LightProfile::Constant { .. } => ProfileKind::Constant,
            LightProfile::Step { .. } => ProfileKind::Step,
            LightProfile::MollifiedStep { .. } => ProfileKind::MollifiedStep,
            LightProfile::Tabulated(_) => ProfileKind::Tabulated,
            LightProfile::ExponentialCanopy(_) => ProfileKind::ExponentialCanopy,
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        match self {
            LightProfile::Constant { value } => *value,
            LightProfile::Step { at, low } => {
                if y < *at {
                    *low
                } else {
                    1.0
                }
            }
            LightProfile::MollifiedStep { at, low, width } => {
                let t = smooth_arg(y, *at, *width);
                low + (1.0 - low) * t * t * (3.0 - 2.0 * t)
            }
            LightProfile::Tabulated(t) => {
                if y >= t.last() {
                    1.0
                } else {
                    t.value(y).clamp(0.0, 1.0)
                }
            }
            LightProfile::ExponentialCanopy(t) => {
                if y >= t.last() {
                    1.0
                } else {
                    (-t.value(y).max(0.0)).exp()
                }
            }
        }
    }

    /// `I'(y)`, taken on the half-open piece `[y_i, y_{i+1})` containing `y`.
    pub fn derivative(&self, y: f64) -> Result<f64> {
        match self {
            LightProfile::Constant { .. } => Ok(0.0),
            LightProfile::Step { at, low } => {
                if y == *at && *low < 1.0 {
                    Err(Error::NotDifferentiable(y))
                } else {
                    Ok(0.0)
                }
            }
            LightProfile::MollifiedStep { at, low, width } => {
                let support = 1.5 * width;
                let t = smooth_arg(y, *at, *width);
                if t <= 0.0 || t >= 1.0 {
                    return Ok(0.0);
                }
                Ok((1.0 - low) * 6.0 * t * (1.0 - t) / support)
            }
            LightProfile::Tabulated(t) => Ok(t.slope(y)),
            LightProfile::ExponentialCanopy(t) => Ok(-t.slope(y) * self.eval(y)),
        }
    }

    /// Derivative with jump points mapped to zero (the a.e. value).
    pub fn derivative_ae(&self, y: f64) -> f64 {
        self.derivative(y).unwrap_or(0.0)
    }

    /// `int_a^b I(y) dy`, with `I(y) = I(0)` for `y < 0`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integral(b, a);
        }
        let mut total = 0.0;
        if a < 0.0 {
            total += (b.min(0.0) - a) * self.eval(0.0);
        }
        let a = a.max(0.0);
        if b <= a {
            return total;
        }
        total + self.antiderivative(b) - self.antiderivative(a)
    }

    // Primitive of I on y >= 0 with value 0 at y = 0.
    fn antiderivative(&self, y: f64) -> f64 {
        match self {
            LightProfile::Constant { value } => value * y,
            LightProfile::Step { at, low } => {
                if y < *at {
                    low * y
                } else {
                    low * at + (y - at)
                }
            }
            LightProfile::MollifiedStep { at, low, width } => {
                let support = 1.5 * width;
                let y0 = at - 0.5 * support;
                // integral of the smoothstep in units of the support
                let prim = |t: f64| t * t * t - 0.5 * t * t * t * t;
                let base = |y: f64| {
                    let t = ((y - y0) / support).clamp(0.0, 1.0);
                    let inside = support * prim(t);
                    let above = (y - (y0 + support)).max(0.0);
                    low * y + (1.0 - low) * (inside + above)
                };
                base(y) - base(0.0)
            }
            LightProfile::Tabulated(t) => table_primitive(t, y, t.vs[0], Table::segment_integral),
            LightProfile::ExponentialCanopy(t) => table_primitive(t, y, (-t.vs[0]).exp(), Table::exp_neg_integral),
        }
    }

    /// Heights where the profile or its first derivative may be discontinuous.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            LightProfile::Constant { .. } => vec![],
            LightProfile::Step { at, .. } => vec![*at],
            LightProfile::MollifiedStep { at, width, .. } => {
                vec![(at - 0.75 * width).max(0.0), at + 0.75 * width]
            }
            LightProfile::Tabulated(t) | LightProfile::ExponentialCanopy(t) => match t.slopes {
                // Hermite tables are C1 inside; only the ends can kink
                Some(_) => vec![t.ys[0], t.last()],
                None => t.ys.clone(),
            },
        }
    }

    /// Knots of tabulated profiles, breakpoints otherwise.
    pub fn knots(&self) -> Vec<f64> {
        match self {
            LightProfile::Tabulated(t) | LightProfile::ExponentialCanopy(t) => t.ys.clone(),
            _ => self.breakpoints(),
        }
    }

    /// Heights where the profile jumps.
    pub fn jumps(&self) -> Vec<f64> {
        match self {
            LightProfile::Step { at, low } if *low < 1.0 => vec![*at],
            _ => vec![],
        }
    }

    pub fn is_continuous(&self) -> bool {
        self.jumps().is_empty()
    }

    /// Height above which the profile is identically 1 (0 for constants).
    pub fn top(&self) -> f64 {
        self.breakpoints().into_iter().fold(0.0, f64::max)
    }
}

fn smooth_arg(y: f64, at: f64, width: f64) -> f64 {
    let support = 1.5 * width;
    ((y - (at - 0.5 * support)) / support).clamp(0.0, 1.0)
}

fn validate_intensity_table(t: &Table) -> Result<()> {
    if let Some(v) = t.vs.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(Error::Domain(format!("intensity {v} outside [0, 1]")));
    }
    if let Some(w) = t.vs.windows(2).find(|w| w[1] < w[0]) {
        return Err(Error::Domain(format!("intensity decreases ({} -> {})", w[0], w[1])));
    }
    if (t.vs[t.vs.len() - 1] - 1.0).abs() > 1e-9 {
        return Err(Error::Domain("intensity must reach 1 at the last knot".into()));
    }
    Ok(())
}

const CHECK_POINTS: usize = 10_000;

// Uniform grid on [0, top] merged with the profile's breakpoints.
fn check_grid(profile: &LightProfile, top: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=CHECK_POINTS).map(|i| top * i as f64 / CHECK_POINTS as f64).collect();
    g.extend(profile.knots().into_iter().filter(|&b| b >= 0.0 && b <= top));
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    g.dedup();
    g
}

/// Outcome of the sufficient condition for a monotone length map.
#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessCheck {
    pub holds: bool,
    /// Smallest `rhs - I'(h) int_0^h dy / I(y)` over the grid.
    pub worst_margin: f64,
    pub worst_h: f64,
    pub rhs: f64,
}

/// Right-hand side `tan^2 theta0 sin theta0 (1 - (kappa + 1) e^-kappa) / (1 - e^-kappa)`.
pub fn uniqueness_bound(params: &ModelParams) -> f64 {
    let k = params.kappa;
    let t = params.theta0.tan();
    t * t * params.theta0.sin() * (1.0 - (k + 1.0) * (-k).exp()) / (1.0 - (-k).exp())
}

/// Checks `int_0^h I'(h) / I(y) dy < bound` for a.e. `h` in `[0, h_max]`.
/// A jump inside the range counts as a violation (its derivative is a point mass).
pub fn check_uniqueness_condition(profile: &LightProfile, params: &ModelParams, h_max: f64) -> UniquenessCheck {
    let rhs = uniqueness_bound(params);
    if let Some(&j) = profile.jumps().iter().find(|&&j| j > 0.0 && j <= h_max) {
        return UniquenessCheck { holds: false, worst_margin: f64::NEG_INFINITY, worst_h: j, rhs };
    }
    let grid = check_grid(profile, h_max);
    let mut cum = 0.0;
    let mut worst = (rhs, 0.0);
    let mut prev = (grid[0], 1.0 / profile.eval(grid[0]));
    for (i, &h) in grid.iter().enumerate() {
        let inv = 1.0 / profile.eval(h);
        if i > 0 {
            cum += 0.5 * (h - prev.0) * (inv + prev.1);
        }
        prev = (h, inv);
        let margin = rhs - profile.derivative_ae(h) * cum;
        if margin < worst.0 {
            worst = (margin, h);
        }
    }
    UniquenessCheck { holds: worst.0 > 0.0, worst_margin: worst.0, worst_h: worst.1, rhs }
}

/// Membership report for the regularity class `I in [1 - delta, 1]`, `0 <= I' <= C y^-beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub delta: f64,
    /// Derivative bound holds with the constants below.
    pub holder_bound_ok: bool,
    pub c: f64,
    pub beta: f64,
    /// Smallest `C` for which the bound holds with this `beta`.
    pub fitted_c: f64,
    /// Smallest `C y^-beta - I'(y)` over the grid.
    pub worst_margin: f64,
    /// `(y, C y^-beta - I'(y))` at each knot of the profile.
    pub knot_margins: Vec<(f64, f64)>,
}

/// Class check with the fixed constants `C = 1`, `beta = 1/2`.
pub fn check_class_f(profile: &LightProfile) -> RegularityReport {
    check_class_f_with(profile, 1.0, 0.5)
}

pub fn check_class_f_with(profile: &LightProfile, c: f64, beta: f64) -> RegularityReport {
    let delta = (1.0 - profile.eval(0.0)).clamp(0.0, 1.0);
    let bound = |y: f64| c * y.powf(-beta);
    if !profile.is_continuous() {
        let knot_margins = profile.jumps().into_iter().map(|y| (y, f64::NEG_INFINITY)).collect();
        return RegularityReport {
            delta,
            holder_bound_ok: false,
            c,
            beta,
            fitted_c: f64::INFINITY,
            worst_margin: f64::NEG_INFINITY,
            knot_margins,
        };
    }
    let top = profile.top();
    let mut worst = f64::INFINITY;
    let mut fitted: f64 = 0.0;
    let mut monotone = true;
    if top > 0.0 {
        for y in check_grid(profile, top).into_iter().filter(|&y| y > 0.0) {
            let d = profile.derivative_ae(y);
            monotone &= d >= -1e-12;
            worst = worst.min(bound(y) - d);
            fitted = fitted.max(d * y.powf(beta));
        }
    }
    let knot_margins = profile
        .knots()
        .into_iter()
        .filter(|&y| y > 0.0)
        .map(|y| (y, bound(y) - profile.derivative_ae(y)))
        .collect();
    RegularityReport {
        delta,
        holder_bound_ok: monotone && worst >= 0.0,
        c,
        beta,
        fitted_c: fitted,
        worst_margin: worst,
        knot_margins,
    }
}
