//! Model 2: free stem length with a variable leaf density `u`.
//!
//! The optimal controls are the pointwise maximizers `(Theta, U)` of the
//! Hamiltonian `p sin(theta) - q u + I G(theta, u)`. Along an optimal stem the
//! Hamiltonian vanishes, which expresses the remaining mass `z` through
//! `(I, p, q)` and reduces the problem to a two-point boundary value problem for
//! the costates `(p, q)` in the height variable:
//!
//! ```text
//! p' = -I'(y) f1(I, p, q),   q' = f2(I, p, q),   p(h) = 0,  q(h) = I(h),  q(0) = 0.
//! ```
//!
//! `f2` is integrable but unbounded at `y = h`, so each shot starts a short
//! distance below the tip from the local power-law solution and the free
//! height `h` is found by root-finding on `q(0; h)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lightfield::LightProfile;
use crate::numerics::{
    find_root, integrate_until, maximize_scalar, quad, scan_brackets, uniform_grid, Bracket, OdeProblem,
    QuadOptions, StepControl, Trajectory,
};
use crate::par::Exec;
use crate::params::ModelParams;

/// Smallest ratio `q / I` used when reconstructing controls; `U` stays finite at `y = 0`.
pub const RATIO_FLOOR: f64 = 1e-300;

/// `G(theta, u) = (1 - exp(-u / cos(theta - theta0))) cos(theta - theta0)`.
pub fn big_g2(theta: f64, u: f64, params: &ModelParams) -> f64 {
    let c = (theta - params.theta0).cos();
    if c <= 0.0 || u <= 0.0 {
        return 0.0;
    }
    -(-u / c).exp_m1() * c
}

/// `p sin(theta) - q u + I G(theta, u)`, the part of the Hamiltonian that depends on the controls.
pub fn hamiltonian_density(theta: f64, u: f64, i: f64, p: f64, q: f64, params: &ModelParams) -> f64 {
    p * theta.sin() - q * u + i * big_g2(theta, u, params)
}

/// `1 - r + r ln|r|`, with a series near `r = 1` where the formula cancels.
pub fn entropy_gap(r: f64) -> f64 {
    let d = 1.0 - r;
    if d.abs() < 0.1 {
        return d * d * scaled_series(d);
    }
    if r == 0.0 {
        return 1.0;
    }
    1.0 - r + r * r.abs().ln()
}

// sum_{k>=2} x^{k-2} / (k(k-1))
fn scaled_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut pow = 1.0;
    for k in 2..60 {
        let term = pow / (k * (k - 1)) as f64;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
        pow *= x;
    }
    sum
}

// entropy_gap(1 - x) / x^2, finite at x = 0.
fn scaled_gap(x: f64) -> f64 {
    if x.abs() < 0.1 {
        scaled_series(x)
    } else {
        entropy_gap(1.0 - x) / (x * x)
    }
}

/// `int_{1-d}^1 entropy_gap(s)^{(1-alpha)/alpha} ds`, accurate for small `d`.
pub fn layer_integral(d: f64, alpha: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    let beta = (1.0 - alpha) / alpha;
    let inner = quad(
        |v: f64| v.powf(2.0 * beta) * scaled_gap(d * v).powf(beta),
        0.0,
        1.0,
        &QuadOptions::with_tol(1e-13),
    )
    .unwrap_or(f64::NAN);
    d.powf(1.0 + 2.0 * beta) * inner
}

/// Pointwise maximizers of the Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Feedback {
    pub theta: f64,
    pub u: f64,
    pub w: f64,
}

fn check_state(i: f64, p: f64, q: f64) -> Result<()> {
    if !(i > 0.0 && i <= 1.0 + 1e-12) {
        return Err(Error::Domain(format!("intensity {i} outside ]0, 1]")));
    }
    if !(p >= 0.0) {
        return Err(Error::Domain(format!("costate p = {p} must be non-negative")));
    }
    if !(q > 0.0) {
        return Err(Error::Domain(format!("costate q = {q} must be positive")));
    }
    if q > i * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("costate q = {q} exceeds the intensity {i}")));
    }
    Ok(())
}

// Trigonometric data of Theta for a given w >= 0.
#[derive(Clone, Copy)]
struct Angle {
    sin: f64,
    cos: f64,
    // cos(Theta - theta0)
    cos_rel: f64,
    // D = cos^2 theta0 + (w + sin theta0)^2
    d: f64,
}

fn angle(w: f64, params: &ModelParams) -> Angle {
    let (s0, c0) = params.theta0.sin_cos();
    let d = c0 * c0 + (w + s0) * (w + s0);
    let sq = d.sqrt();
    Angle { sin: (s0 + w) / sq, cos: c0 / sq, cos_rel: (1.0 + w * s0) / sq, d }
}

/// `(Theta, U, w)` for a state `(I, p, q)` with `0 < q <= I`.
pub fn feedback_tu(i: f64, p: f64, q: f64, params: &ModelParams) -> Result<Feedback> {
    check_state(i, p, q)?;
    let r = (q / i).min(1.0);
    let a = entropy_gap(r);
    let w = if p == 0.0 {
        0.0
    } else if a <= 0.0 {
        return Err(Error::DegenerateDenominator);
    } else {
        (p / i) / a
    };
    if !w.is_finite() {
        return Err(Error::DegenerateDenominator);
    }
    let (s0, c0) = params.theta0.sin_cos();
    let theta = (s0 + w).atan2(c0);
    let u = -r.ln() * angle(w, params).cos_rel;
    Ok(Feedback { theta, u, w })
}

/// Remaining mass `z` expressed through `(I, p, q)` on the zero level set of the Hamiltonian.
pub fn z_first_integral(i: f64, p: f64, q: f64, params: &ModelParams) -> Result<f64> {
    if q == 0.0 && i > 0.0 && p >= 0.0 {
        return Ok(z_from_bracket(i, p, params));
    }
    check_state(i, p, q)?;
    Ok(z_from_bracket(i * entropy_gap((q / i).min(1.0)), p, params))
}

fn z_from_bracket(b: f64, p: f64, params: &ModelParams) -> f64 {
    let (s0, c0) = params.theta0.sin_cos();
    let sq = (b * c0).powi(2) + (p + b * s0).powi(2);
    params.c.powf(-1.0 / params.alpha) * sq.powf(0.5 / params.alpha)
}

// f1, f2 and the feedback data, allowing q <= 0 for the shooting extension.
#[derive(Clone, Copy)]
struct Reduced {
    f1: f64,
    f2: f64,
    w: f64,
    ratio: f64,
}

fn reduced(i: f64, p: f64, q: f64, params: &ModelParams) -> Reduced {
    let (s0, _) = params.theta0.sin_cos();
    let alpha = params.alpha;
    let r = q / i;
    let a = entropy_gap(r);
    let w = (p / i) / a;
    let ang = angle(w, params);
    let f1 = (1.0 - r) * (1.0 + w * s0) / (w + s0);
    let f2 = alpha * params.c.powf(1.0 / alpha) / (w + s0)
        * ang.d.powf(1.0 - 0.5 / alpha)
        * (i * a).powf(1.0 - 1.0 / alpha);
    Reduced { f1, f2, w, ratio: r }
}

/// `(p', q')` of the reduced system at height `y`.
pub fn rhs_reduced(y: f64, p: f64, q: f64, profile: &LightProfile, params: &ModelParams) -> Result<(f64, f64)> {
    let i = profile.eval(y);
    if q >= i {
        return Err(Error::Singularity(y));
    }
    check_state(i, p, q)?;
    let red = reduced(i, p, q, params);
    Ok((-profile.derivative_ae(y) * red.f1, red.f2))
}

/// `h - y` as a function of `q(y)` when `I = 1`.
pub fn uniform_depth(q: f64, params: &ModelParams) -> f64 {
    let s0 = params.theta0.sin();
    s0 / (params.alpha * params.c.powf(1.0 / params.alpha)) * layer_integral(1.0 - q, params.alpha)
}

/// Optimal height when `I = 1`.
pub fn uniform_height(params: &ModelParams) -> f64 {
    uniform_depth(0.0, params)
}

/// `d q(0; h) / dh` at the optimal height when `I = 1`.
pub fn uniform_residual_slope(params: &ModelParams) -> f64 {
    -params.alpha * params.c.powf(1.0 / params.alpha) / params.theta0.sin()
}

/// Remaining mass along the `I = 1` solution.
pub fn uniform_mass(q: f64, params: &ModelParams) -> f64 {
    params.c.powf(-1.0 / params.alpha) * entropy_gap(q).powf(1.0 / params.alpha)
}

/// Leading-order constant `K` in `1 - q/I ~ K (h - y)^{alpha/(2-alpha)}` for frozen intensity `i_h`.
pub fn layer_constant(i_h: f64, params: &ModelParams) -> f64 {
    let a = params.alpha;
    let s0 = params.theta0.sin();
    let base = (2.0 - a) * 2f64.powf((1.0 - a) / a) * params.c.powf(1.0 / a) / (s0 * i_h.powf(1.0 / a));
    base.powf(a / (2.0 - a))
}

/// Starting state a distance `epsilon` below the tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerSeed {
    pub y: f64,
    pub p: f64,
    pub q: f64,
    /// Intensity at the seed (the shading state in the coupled problem).
    pub intensity: f64,
    /// `1 - q / I` at the seed.
    pub gap: f64,
}

// Solves the frozen-intensity relation scale * J(d) = epsilon for d.
fn frozen_gap(i_h: f64, epsilon: f64, params: &ModelParams) -> Result<f64> {
    let a = params.alpha;
    let scale = params.theta0.sin() * i_h.powf(1.0 / a) / (a * params.c.powf(1.0 / a));
    let f = |d: f64| scale * layer_integral(d, a) - epsilon;
    let f1 = f(1.0);
    if f1 <= 0.0 {
        return Ok(1.0);
    }
    find_root(f, Bracket::from_values(0.0, 1.0, -epsilon, f1)?, 1e-16)
}

/// Seed `(p, q)` at `y = h - epsilon` from the local solution with the intensity frozen at `I(h)`.
pub fn seed_terminal_layer(h: f64, profile: &LightProfile, params: &ModelParams, epsilon: f64) -> Result<LayerSeed> {
    let i_h = profile.eval(h);
    let d = frozen_gap(i_h, epsilon, params)?;
    let slope = profile.derivative_ae(h - 0.5 * epsilon).max(0.0);
    let alpha = params.alpha;
    let p = slope * d * epsilon * (2.0 - alpha) / (2.0 * params.theta0.sin());
    Ok(LayerSeed { y: h - epsilon, p, q: i_h * (1.0 - d), intensity: i_h, gap: d })
}

// Source of the intensity seen by the stem.
#[derive(Clone, Copy)]
pub(crate) enum Light<'a> {
    Profile(&'a LightProfile),
    // Self-shading stand: I' = rate * (-ln(q/I)) cos(Theta - theta0)/sin(Theta) * I.
    Shade { rate: f64 },
}

impl Light<'_> {
    fn dim(&self) -> usize {
        match self {
            Light::Profile(_) => 2,
            Light::Shade { .. } => 3,
        }
    }

    fn intensity(&self, y: f64, state: &[f64]) -> f64 {
        match self {
            Light::Profile(pr) => pr.eval(y),
            Light::Shade { .. } => state[2],
        }
    }

    fn seed(&self, h: f64, epsilon: f64, params: &ModelParams) -> Result<LayerSeed> {
        match self {
            Light::Profile(pr) => seed_terminal_layer(h, pr, params, epsilon),
            Light::Shade { rate } => {
                let d = frozen_gap(1.0, epsilon, params)?;
                let (a, s0) = (params.alpha, params.theta0.sin());
                let lead = d * epsilon * (2.0 - a) / (2.0 * s0);
                let exponent = a / (2.0 - a);
                let p = rate / s0 * d * d * epsilon / (1.0 + 2.0 * exponent) / s0;
                Ok(LayerSeed { y: h - epsilon, p, q: (1.0 - rate * lead) * (1.0 - d), intensity: 1.0 - rate * lead, gap: d })
            }
        }
    }

    fn initial(&self, seed: &LayerSeed) -> Vec<f64> {
        match self {
            Light::Profile(_) => vec![seed.p, seed.q],
            Light::Shade { .. } => vec![seed.p, seed.q, seed.intensity],
        }
    }

    fn rhs(&self, y: f64, s: &[f64], out: &mut [f64], params: &ModelParams) {
        let i = self.intensity(y, s);
        let red = reduced(i, s[0], s[1], params);
        out[1] = red.f2;
        match self {
            Light::Profile(pr) => out[0] = -pr.derivative_ae(y) * red.f1,
            Light::Shade { rate } => {
                let s0 = params.theta0.sin();
                let l = red.ratio.abs().max(RATIO_FLOOR).ln();
                let f3 = -rate * l * (1.0 + red.w * s0) / (s0 + red.w) * i;
                out[0] = -red.f1 * f3;
                out[2] = f3;
            }
        }
    }
}

/// Settings for [`shoot_op2`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Op2Config {
    /// Terminal layer offset as a fraction of the height.
    pub epsilon_layer: f64,
    /// Height bracket to scan; defaults to `[1e-3, 3] * h0` with `h0` the full-sun height.
    pub h_bracket: Option<(f64, f64)>,
    pub scan_points: usize,
    /// Output grid size.
    pub grid: usize,
    /// Root tolerance on the height.
    pub tol: f64,
    pub ode_rtol: f64,
    pub ode_atol: f64,
    /// A priori bound on the stem mass; defaults to `c^{-1/alpha}`.
    pub mass_bound: Option<f64>,
    pub exec: Exec,
}

impl Default for Op2Config {
    fn default() -> Self {
        Op2Config {
            epsilon_layer: 1e-6,
            h_bracket: None,
            scan_points: 200,
            grid: 2048,
            tol: 1e-13,
            ode_rtol: 1e-11,
            ode_atol: 1e-14,
            mass_bound: None,
            exec: Exec::default(),
        }
    }
}

/// An optimal Model 2 stem sampled on a uniform height grid.
#[derive(Debug, Clone, Serialize)]
pub struct StemState2 {
    pub h: f64,
    pub ys: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub intensity: Vec<f64>,
    pub theta: Vec<f64>,
    pub u: Vec<f64>,
    /// Remaining mass from the first integral.
    pub z: Vec<f64>,
    /// Remaining mass integrated from `u`: `int_y^h u / sin(theta) dy`.
    pub mass_above: Vec<f64>,
    pub x: Vec<f64>,
    /// Total stem length `T`.
    pub length: f64,
    pub light: f64,
    pub transport_cost: f64,
    /// `light - c * transport_cost`.
    pub payoff: f64,
    /// Largest `|H|` on the grid, with `z` integrated from `u` rather than the first integral.
    pub hamiltonian_max_abs: f64,
    pub residual_q0: f64,
    /// `int_0^T u dt`.
    pub mass_integral: f64,
    /// `z(0)` from the first integral.
    pub z0_first_integral: f64,
    /// Change in `q(0)` when the layer offset is halved.
    pub layer_check: f64,
    pub theta_max: f64,
    /// Every root of `q(0; h)` found in the scan.
    pub roots: Vec<f64>,
    /// `c alpha M^{alpha-1}` for the configured mass bound `M`.
    pub delta_bound: f64,
    /// Whether `sup I'` stays below `delta_bound`.
    pub slope_within_delta: bool,
}

impl StemState2 {
    /// Local state `(I, p, q)` at grid index `k`.
    pub fn state(&self, k: usize) -> (f64, f64, f64) {
        (self.intensity[k], self.p[k], self.q[k])
    }
}

pub(crate) struct Shot {
    pub h: f64,
    pub seed: LayerSeed,
    pub traj: Trajectory,
}

impl Shot {
    pub fn residual(&self) -> f64 {
        self.traj.last()[1]
    }
}

pub(crate) fn shoot_once(h: f64, light: Light<'_>, params: &ModelParams, cfg: &Op2Config) -> Result<Shot> {
    shoot_with_layer(h, cfg.epsilon_layer * h, light, params, cfg)
}

fn shoot_with_layer(h: f64, eps: f64, light: Light<'_>, params: &ModelParams, cfg: &Op2Config) -> Result<Shot> {
    let seed = light.seed(h, eps, params)?;
    let init = light.initial(&seed);
    let prob = OdeProblem::new(light.dim(), |y: f64, s: &[f64], out: &mut [f64]| light.rhs(y, s, out, params));
    let floor = match light {
        Light::Profile(_) => -0.9,
        Light::Shade { .. } => 0.0,
    };
    let traj = if seed.q <= 0.0 {
        Trajectory { t: vec![seed.y], y: vec![init.clone()], dy: vec![vec![0.0; init.len()]], stopped_early: true }
    } else {
        integrate_until(
            &prob,
            (seed.y, 0.0),
            &init,
            StepControl::adaptive(cfg.ode_rtol, cfg.ode_atol),
            |y, s| s[1] / light.intensity(y, s) < floor,
        )?
    };
    Ok(Shot { h, seed, traj })
}

/// Roots of `q(0; h)` over the configured bracket, in increasing order.
pub(crate) fn residual_roots(light: Light<'_>, params: &ModelParams, cfg: &Op2Config) -> Result<Vec<f64>> {
    let h0 = uniform_height(params);
    let (lo, mut hi) = cfg.h_bracket.unwrap_or((1e-3 * h0, 3.0 * h0));
    let n = cfg.scan_points.max(2);
    let res = |h: f64| shoot_once(h, light, params, cfg).map(|s| s.residual()).unwrap_or(f64::NAN);
    for _ in 0..4 {
        let hs = uniform_grid(lo, hi, n);
        let values = cfg.exec.map(&hs, |&h| res(h));
        let brackets = scan_brackets(lo, hi, &values);
        if !brackets.is_empty() {
            let mut roots = Vec::with_capacity(brackets.len());
            for b in brackets {
                let r = if b.lo == b.hi { b.lo } else { find_root(res, b, cfg.tol)? };
                roots.push(r);
            }
            return Ok(roots);
        }
        if cfg.h_bracket.is_some() {
            break;
        }
        hi *= 2.0;
    }
    Err(Error::NoBracket { lo, hi })
}

// Local data at height y from a converged shot.
#[derive(Clone, Copy)]
struct Local {
    i: f64,
    p: f64,
    q: f64,
    theta: f64,
    u: f64,
    ang: Angle,
    ratio: f64,
}

fn local_at(shot: &Shot, light: Light<'_>, y: f64, params: &ModelParams) -> Local {
    let h = shot.h;
    let seed = &shot.seed;
    let (i, p, q) = if y <= seed.y {
        let s = shot.traj.at(y.max(0.0));
        (light.intensity(y, &s), s[0], s[1])
    } else {
        // Power-law interpolation inside the layer.
        let a = params.alpha / (2.0 - params.alpha);
        let t = ((h - y) / (h - seed.y)).clamp(0.0, 1.0);
        let i = match light {
            Light::Profile(pr) => pr.eval(y),
            Light::Shade { .. } => 1.0 - (1.0 - seed.intensity) * t.powf(1.0 + a),
        };
        (i, seed.p * t.powf(1.0 + a), i * (1.0 - seed.gap * t.powf(a)))
    };
    let ratio = (q / i).clamp(RATIO_FLOOR, 1.0);
    let w = if p <= 0.0 { 0.0 } else { (p / i) / entropy_gap(ratio) };
    let w = if w.is_finite() { w } else { 0.0 };
    let ang = angle(w, params);
    let (s0, c0) = params.theta0.sin_cos();
    Local { i, p, q, theta: (s0 + w).atan2(c0), u: -ratio.ln() * ang.cos_rel, ang, ratio }
}

fn first_integral_z(l: &Local, params: &ModelParams) -> f64 {
    z_from_bracket(l.i * entropy_gap(l.ratio), l.p.max(0.0), params)
}

pub(crate) fn reconstruct(
    shot: &Shot,
    light: Light<'_>,
    params: &ModelParams,
    cfg: &Op2Config,
    roots: Vec<f64>,
) -> Result<StemState2> {
    let h = shot.h;
    let n = cfg.grid.max(3);
    let ys = uniform_grid(0.0, h, n);
    let locals: Vec<Local> = ys.iter().map(|&y| local_at(shot, light, y, params)).collect();
    let at = |y: f64| local_at(shot, light, y, params);
    let qo = QuadOptions::with_tol(1e-13);

    // Per-interval integrals of 1/sin, cot, u/sin, I G/sin.
    let intervals: Vec<[f64; 4]> = cfg.exec.map_range(n - 1, |k| {
        let (a, b) = (ys[k], ys[k + 1]);
        let inv = quad(|y| 1.0 / at(y).ang.sin, a, b, &qo).unwrap_or(f64::NAN);
        let cot = quad(|y| { let l = at(y); l.ang.cos / l.ang.sin }, a, b, &qo).unwrap_or(f64::NAN);
        let uo = if k == 0 { qo.singular_left() } else { qo };
        let mass = quad(|y| { let l = at(y); l.u / l.ang.sin }, a, b, &uo).unwrap_or(f64::NAN);
        let light = quad(
            |y| { let l = at(y); l.i * (1.0 - l.ratio) * l.ang.cos_rel / l.ang.sin },
            a,
            b,
            &qo,
        )
        .unwrap_or(f64::NAN);
        [inv, cot, mass, light]
    });
    if intervals.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(h));
    }

    let mut x = vec![0.0; n];
    for k in 1..n {
        x[k] = x[k - 1] + intervals[k - 1][1];
    }
    let mut z_int = vec![0.0; n];
    for k in (0..n - 1).rev() {
        z_int[k] = z_int[k + 1] + intervals[k][2];
    }
    let length: f64 = intervals.iter().map(|v| v[0]).sum();
    let light_total: f64 = intervals.iter().map(|v| v[3]).sum();
    let z: Vec<f64> = locals.iter().map(|l| first_integral_z(l, params)).collect();
    let transport: f64 = quad_grid(&ys, |y| {
        let l = at(y);
        first_integral_z(&l, params).powf(params.alpha) / l.ang.sin
    }, cfg.exec);

    let mut hmax = 0.0f64;
    for (k, l) in locals.iter().enumerate() {
        let hv = hamiltonian_density(l.theta, l.u, l.i, l.p, l.q, params) - params.c * z_int[k].powf(params.alpha);
        hmax = hmax.max(hv.abs());
    }

    let half = shoot_with_layer(h, 0.5 * cfg.epsilon_layer * h, light, params, cfg)?;
    let mass_bound = cfg.mass_bound.unwrap_or(params.c.powf(-1.0 / params.alpha));
    let delta_bound = params.c * params.alpha * mass_bound.powf(params.alpha - 1.0);
    let slope_max = match light {
        Light::Profile(pr) => ys.iter().map(|&y| pr.derivative_ae(y)).fold(0.0, f64::max),
        Light::Shade { .. } => {
            let is: Vec<f64> = locals.iter().map(|l| l.i).collect();
            is.windows(2).map(|w| (w[1] - w[0]) / (h / (n - 1) as f64)).fold(0.0, f64::max)
        }
    };

    Ok(StemState2 {
        h,
        p: locals.iter().map(|l| l.p).collect(),
        q: locals.iter().map(|l| l.q).collect(),
        intensity: locals.iter().map(|l| l.i).collect(),
        theta: locals.iter().map(|l| l.theta).collect(),
        u: locals.iter().map(|l| l.u).collect(),
        z0_first_integral: z[0],
        z,
        x,
        length,
        light: light_total,
        transport_cost: transport,
        payoff: light_total - params.c * transport,
        hamiltonian_max_abs: hmax,
        residual_q0: shot.residual(),
        mass_integral: z_int[0],
        mass_above: z_int,
        layer_check: (half.residual() - shot.residual()).abs(),
        theta_max: locals.iter().map(|l| l.theta).fold(f64::NEG_INFINITY, f64::max),
        roots,
        delta_bound,
        slope_within_delta: slope_max <= delta_bound,
        ys,
    })
}

fn quad_grid<F: Fn(f64) -> f64 + Sync>(ys: &[f64], f: F, exec: Exec) -> f64 {
    let qo = QuadOptions::with_tol(1e-13);
    exec.map_range(ys.len() - 1, |k| quad(&f, ys[k], ys[k + 1], &qo).unwrap_or(f64::NAN)).iter().sum()
}

pub(crate) fn solve_shooting(light: Light<'_>, params: &ModelParams, cfg: &Op2Config) -> Result<StemState2> {
    params.validate()?;
    let roots = residual_roots(light, params, cfg)?;
    let mut best: Option<StemState2> = None;
    for &h in &roots {
        let shot = shoot_once(h, light, params, cfg)?;
        let state = reconstruct(&shot, light, params, cfg, roots.clone())?;
        if best.as_ref().is_none_or(|b| state.payoff > b.payoff) {
            best = Some(state);
        }
    }
    best.ok_or(Error::NoBracket { lo: 0.0, hi: 0.0 })
}

/// Solves the optimal stem problem under `profile` by shooting on the height.
///
/// When the scan finds several roots the one with the largest payoff is
/// returned; all of them are listed in `roots`.
pub fn shoot_op2(profile: &LightProfile, params: &ModelParams, cfg: &Op2Config) -> Result<StemState2> {
    solve_shooting(Light::Profile(profile), params, cfg)
}

/// `q(0; h)` for a single height.
pub fn residual_q0(h: f64, profile: &LightProfile, params: &ModelParams, cfg: &Op2Config) -> Result<f64> {
    shoot_once(h, Light::Profile(profile), params, cfg).map(|s| s.residual())
}

/// `(p, q)` at heights `h - d` for each depth `d`, from a dense shot at height `h`.
/// Resolves the terminal layer far below the output grid spacing.
pub fn layer_samples(h: f64, depths: &[f64], profile: &LightProfile, params: &ModelParams, cfg: &Op2Config) -> Result<Vec<(f64, f64)>> {
    let shot = shoot_once(h, Light::Profile(profile), params, cfg)?;
    let top = shot.seed.y;
    depths
        .iter()
        .map(|&d| {
            let y = h - d;
            if !(y >= 0.0 && y <= top) {
                return Err(Error::Domain(format!("depth {d} outside the shot [{}, {h}]", h - top)));
            }
            let v = shot.traj.at(y);
            Ok((v[0], v[1]))
        })
        .collect()
}

/// Largest gain of the Hamiltonian density over a `size x size` perturbation grid around `(Theta, U)`.
pub fn maximality_gap(i: f64, p: f64, q: f64, params: &ModelParams, size: usize, radius: f64) -> Result<f64> {
    let fb = feedback_tu(i, p, q, params)?;
    let base = hamiltonian_density(fb.theta, fb.u, i, p, q, params);
    let mut gap = f64::NEG_INFINITY;
    let m = size.max(2);
    for a in 0..m {
        let theta = (fb.theta + radius * (2.0 * a as f64 / (m - 1) as f64 - 1.0))
            .clamp(params.theta0 - 1.5, params.theta0 + 1.5);
        for b in 0..m {
            let u = (fb.u + radius * (2.0 * b as f64 / (m - 1) as f64 - 1.0)).max(0.0);
            gap = gap.max(hamiltonian_density(theta, u, i, p, q, params) - base);
        }
    }
    Ok(gap)
}

/// Payoff of piecewise-constant controls on `n` equal time segments of total length `length`.
///
/// Segment integrals are exact: the light term integrates `I` over the rise of
/// each segment and the transport term integrates `z^alpha` with `z` linear in time.
pub fn transcription_payoff(thetas: &[f64], us: &[f64], length: f64, profile: &LightProfile, params: &ModelParams) -> f64 {
    let n = thetas.len();
    let dt = length / n as f64;
    let alpha = params.alpha;
    let mut z = vec![0.0; n + 1];
    for k in (0..n).rev() {
        z[k] = z[k + 1] + us[k] * dt;
    }
    let mut y = 0.0;
    let mut total = 0.0;
    for k in 0..n {
        let s = thetas[k].sin();
        let y1 = y + s * dt;
        let light = if s > 1e-12 { profile.integral(y, y1) / s } else { profile.eval(y) * dt };
        let cost = if us[k] * dt > 1e-14 * z[k].max(1e-300) {
            (z[k].powf(alpha + 1.0) - z[k + 1].powf(alpha + 1.0)) / ((alpha + 1.0) * us[k])
        } else {
            z[k].powf(alpha) * dt
        };
        total += big_g2(thetas[k], us[k], params) * light - params.c * cost;
        y = y1;
    }
    total
}

/// Settings for [`oracle_op2`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oracle2Config {
    pub segments: usize,
    pub max_sweeps: usize,
    pub random_starts: usize,
    pub seed: u64,
    pub u_max: f64,
    pub exec: Exec,
}

impl Default for Oracle2Config {
    fn default() -> Self {
        Oracle2Config { segments: 16, max_sweeps: 300, random_starts: 4, seed: 7, u_max: 40.0, exec: Exec::default() }
    }
}

/// Best piecewise-constant controls found by [`oracle_op2`].
#[derive(Debug, Clone, Serialize)]
pub struct Oracle2Result {
    pub payoff: f64,
    pub thetas: Vec<f64>,
    pub us: Vec<f64>,
    pub length: f64,
}

/// Direct-transcription search: coordinate ascent over `(theta_i, u_i, T)` from several starts.
pub fn oracle_op2(profile: &LightProfile, params: &ModelParams, cfg: &Oracle2Config) -> Result<Oracle2Result> {
    params.validate()?;
    let n = cfg.segments;
    if n == 0 || n > 64 {
        return Err(Error::BudgetExceeded(format!("{n} segments (at most 64)")));
    }
    let s0 = params.theta0.sin();
    let t_guess = uniform_height(params) / s0;
    let t_max = 6.0 * t_guess;
    let theta_hi = std::f64::consts::FRAC_PI_2;

    let mut starts: Vec<Vec<f64>> = Vec::new();
    let mut push = |thetas: Vec<f64>, us: Vec<f64>, t: f64| {
        let mut v = thetas;
        v.extend(us);
        v.push(t);
        starts.push(v);
    };
    push(vec![params.theta0; n], (0..n).map(|k| 3.0 * (1.0 - (k as f64 + 0.5) / n as f64)).collect(), t_guess);
    push(vec![params.theta0; n], vec![1.0; n], t_guess);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.random_starts {
        let th = (0..n).map(|_| rng.gen_range(params.theta0..(params.theta0 + 0.3).min(theta_hi))).collect();
        let us = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
        push(th, us, t_guess * rng.gen_range(0.5..2.0));
    }

    let eval = |v: &[f64]| transcription_payoff(&v[..n], &v[n..2 * n], v[2 * n], profile, params);
    let bounds = |j: usize| {
        if j < n {
            (params.theta0, theta_hi)
        } else if j < 2 * n {
            (0.0, cfg.u_max)
        } else {
            (1e-3 * t_guess, t_max)
        }
    };
    let climbed = cfg.exec.map(&starts, |start| {
        let mut v = start.clone();
        let mut best = eval(&v);
        for _ in 0..cfg.max_sweeps {
            let before = best;
            for j in 0..v.len() {
                let (lo, hi) = bounds(j);
                let mut trial = v.clone();
                let (xj, fj) = maximize_scalar(
                    |t| {
                        trial[j] = t;
                        eval(&trial)
                    },
                    lo,
                    hi,
                    1e-10,
                );
                if fj > best {
                    v[j] = xj;
                    best = fj;
                }
            }
            if best - before <= 1e-13 * best.abs().max(1.0) {
                break;
            }
        }
        (best, v)
    });
    let (payoff, v) = climbed
        .into_iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or(Error::NoCandidate)?;
    Ok(Oracle2Result { payoff, thetas: v[..n].to_vec(), us: v[n..2 * n].to_vec(), length: v[2 * n] })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn g2_concave_in_u(theta in 0.5f64..1.5, u1 in 0.0f64..10.0, u2 in 0.0f64..10.0) {
            let p = ModelParams::default();
            let mid = big_g2(theta, 0.5 * (u1 + u2), &p);
            prop_assert!(mid >= 0.5 * (big_g2(theta, u1, &p) + big_g2(theta, u2, &p)) - 1e-14);
        }
    }
}
