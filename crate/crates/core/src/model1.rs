//! Model 1: a stem of fixed length `ell` and constant leaf density `kappa`.
//!
//! The optimal angle follows the feedback `theta*(y) = phi((e^-kappa - 1) I(h) / I(y))`
//! where `phi` inverts `F(theta) = G'(theta) tan(theta) - G(theta)`, and the height `h`
//! is fixed by the length constraint `int_0^h dy / sin theta* = ell`.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lightfield::LightProfile;
use crate::numerics::{find_root, maximize_scalar, quad_with_breaks, Bracket, QuadOptions};
use crate::par::Exec;
use crate::params::ModelParams;

/// Upper end of the search interval for `phi`; `pi/2` itself is never attained.
pub const PHI_CAP: f64 = FRAC_PI_2 - 1e-9;

/// `(1 - exp(-kappa / c)) c` for a projection factor `c >= 0`.
pub fn ghat(c: f64, kappa: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    -(-kappa / c).exp_m1() * c
}

/// `G(theta)`: light captured per unit length at full intensity.
pub fn big_g(theta: f64, p: &ModelParams) -> f64 {
    ghat((theta - p.theta0).cos().abs(), p.kappa)
}

/// `g(theta) = G(theta) / sin(theta)`: light captured per unit height.
pub fn g_profile(theta: f64, p: &ModelParams) -> f64 {
    big_g(theta, p) / theta.sin()
}

// 1 - e^{-k/c}(1 + k/c), the derivative of ghat in c.
pub(crate) fn ghat_prime(c: f64, kappa: f64) -> f64 {
    let r = kappa / c;
    1.0 - (-r).exp() * (1.0 + r)
}

/// `G'(theta)` on `[theta0, pi/2]`.
pub fn big_g_prime(theta: f64, p: &ModelParams) -> f64 {
    let d = theta - p.theta0;
    -d.sin() * ghat_prime(d.cos(), p.kappa)
}

/// `G''(theta)` on `[theta0, pi/2]`.
pub fn big_g_second(theta: f64, p: &ModelParams) -> f64 {
    let d = theta - p.theta0;
    let (s, c) = d.sin_cos();
    let k = p.kappa;
    -(-k / c).exp() * k * k / (c * c * c) * s * s - ghat_prime(c, k) * c
}

/// `F(theta) = G'(theta) tan(theta) - G(theta)`.
pub fn f_fn(theta: f64, p: &ModelParams) -> f64 {
    big_g_prime(theta, p) * theta.tan() - big_g(theta, p)
}

/// `F'(theta) = G'' tan + G' tan^2`, negative on `[theta0, pi/2[`.
pub fn f_prime(theta: f64, p: &ModelParams) -> f64 {
    let t = theta.tan();
    big_g_second(theta, p) * t + big_g_prime(theta, p) * t * t
}

/// Largest admissible argument of `phi`, `F(theta0) = e^-kappa - 1`.
pub fn phi_domain_max(p: &ModelParams) -> f64 {
    (-p.kappa).exp_m1()
}

/// `phi(z)`: the unique `theta in [theta0, pi/2[` with `F(theta) = z`.
pub fn phi_inverse(z: f64, p: &ModelParams) -> Result<f64> {
    let zmax = phi_domain_max(p);
    if !z.is_finite() {
        return Err(Error::Domain(format!("phi argument {z} is not finite")));
    }
    if z >= zmax {
        if z - zmax > 1e-12 * zmax.abs().max(1.0) {
            return Err(Error::Domain(format!("phi argument {z} exceeds e^-kappa - 1 = {zmax}")));
        }
        return Ok(p.theta0);
    }
    let h = |t: f64| f_fn(t, p) - z;
    let f_hi = h(PHI_CAP);
    if f_hi >= 0.0 {
        return Ok(PHI_CAP);
    }
    let bracket = Bracket::from_values(p.theta0, PHI_CAP, zmax - z, f_hi)?;
    find_root(h, bracket, 1e-15)
}

/// Optimal angle at height `y` for a stem of height `h` under `profile`.
pub fn theta_star(profile: &LightProfile, p: &ModelParams, h: f64, y: f64) -> Result<f64> {
    phi_inverse(phi_domain_max(p) * profile.eval(h) / profile.eval(y), p)
}

// [0, breakpoints inside (0, h), h]
fn breaks_below(profile: &LightProfile, h: f64) -> Vec<f64> {
    let mut b = vec![0.0];
    b.extend(profile.breakpoints().into_iter().filter(|&x| x > 0.0 && x < h));
    b.push(h);
    b
}

const QUAD_TOL: f64 = 1e-13;

/// Arc length `L(h) = int_0^h dy / sin theta*(y; h)` of the feedback stem of height `h`.
pub fn length_for_height(profile: &LightProfile, p: &ModelParams, h: f64) -> Result<f64> {
    let zh = phi_domain_max(p) * profile.eval(h);
    let f = |y: f64| match phi_inverse(zh / profile.eval(y), p) {
        Ok(t) => 1.0 / t.sin(),
        Err(_) => f64::NAN,
    };
    quad_with_breaks(f, &breaks_below(profile, h), &QuadOptions::with_tol(QUAD_TOL))
}

/// Optimal stem shape produced by the Model 1 feedback law.
#[derive(Debug, Clone, Serialize)]
pub struct StemShape1 {
    pub h: f64,
    pub lambda: f64,
    pub payoff: f64,
    pub length: f64,
    pub ys: Vec<f64>,
    pub theta: Vec<f64>,
    pub x: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl StemShape1 {
    /// `max |F(theta(y)) + lambda / I(y)|` over the samples.
    pub fn feedback_residual(&self, p: &ModelParams) -> f64 {
        self.theta
            .iter()
            .zip(&self.intensity)
            .map(|(&t, &i)| (f_fn(t, p) + self.lambda / i).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_non_increasing(&self) -> bool {
        self.theta.windows(2).all(|w| w[1] <= w[0] + 1e-12)
    }
}

/// Samples the feedback stem of height `h` on a uniform grid of `grid` points.
pub fn shape_for_height(profile: &LightProfile, p: &ModelParams, h: f64, grid: usize) -> Result<StemShape1> {
    let n = grid.max(2);
    let lambda = -phi_domain_max(p) * profile.eval(h);
    let ys: Vec<f64> = (0..n).map(|i| if i + 1 == n { h } else { h * i as f64 / (n - 1) as f64 }).collect();
    let intensity: Vec<f64> = ys.iter().map(|&y| profile.eval(y)).collect();
    let theta = intensity
        .iter()
        .map(|&i| phi_inverse(-lambda / i, p))
        .collect::<Result<Vec<f64>>>()?;
    let mut x = vec![0.0; n];
    for i in 1..n {
        let dy = ys[i] - ys[i - 1];
        x[i] = x[i - 1] + 0.5 * dy * (1.0 / theta[i - 1].tan() + 1.0 / theta[i].tan());
    }
    let zh = -lambda;
    let payoff = quad_with_breaks(
        |y| {
            let iy = profile.eval(y);
            match phi_inverse(zh / iy, p) {
                Ok(t) => iy * g_profile(t, p),
                Err(_) => f64::NAN,
            }
        },
        &breaks_below(profile, h),
        &QuadOptions::with_tol(QUAD_TOL),
    )?;
    let length = length_for_height(profile, p, h)?;
    Ok(StemShape1 { h, lambda, payoff, length, ys, theta, x, intensity })
}

/// Solver settings for [`solve_op1`].
#[derive(Debug, Clone, Copy)]
pub struct Op1Config {
    /// Samples of the returned shapes.
    pub grid: usize,
    /// Heights sampled per continuity piece when bracketing `L(h) = ell`.
    pub scan_points: usize,
    pub tol: f64,
    pub exec: Exec,
}

impl Default for Op1Config {
    fn default() -> Self {
        Op1Config { grid: 2048, scan_points: 1000, tol: 1e-14, exec: Exec::default() }
    }
}

/// All heights solving the length constraint, best payoff first.
#[derive(Debug, Clone)]
pub struct Op1Solution {
    pub candidates: Vec<StemShape1>,
    /// The two best candidates have equal payoff (to 1e-9 relative).
    pub tie: bool,
}

impl Op1Solution {
    pub fn best(&self) -> &StemShape1 {
        &self.candidates[0]
    }
}

/// Solves OP1: every root of `L(h) = ell` on `]0, ell]`, ranked by payoff.
pub fn solve_op1(profile: &LightProfile, p: &ModelParams, cfg: &Op1Config) -> Result<Op1Solution> {
    p.validate()?;
    let ell = p.ell;
    let mut cuts = vec![0.0];
    cuts.extend(profile.jumps().into_iter().filter(|&j| j > 0.0 && j < ell));
    cuts.push(ell);
    let n = cfg.scan_points.max(3);
    let mut roots: Vec<f64> = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let lo = if a == 0.0 { 1e-9 * b } else { a };
        // a jump at the top of the piece belongs to the next piece
        let hi = if b < ell { b - 1e-12 * b.max(1.0) } else { b };
        let hs: Vec<f64> =
            (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect();
        let resid = |h: f64| length_for_height(profile, p, h).map(|l| l - ell);
        let vals = cfg.exec.map(&hs, |&h| resid(h).unwrap_or(f64::NAN));
        for i in 0..n - 1 {
            let (f0, f1) = (vals[i], vals[i + 1]);
            if f0 == 0.0 {
                roots.push(hs[i]);
                continue;
            }
            if i + 2 == n && f1 == 0.0 {
                roots.push(hs[i + 1]);
            }
            if f0.is_finite() && f1.is_finite() && f0 * f1 < 0.0 {
                let br = Bracket::from_values(hs[i], hs[i + 1], f0, f1)?;
                let r = find_root(|h| resid(h).unwrap_or(f64::NAN), br, cfg.tol)?;
                roots.push(r);
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if roots.is_empty() {
        return Err(Error::NoCandidate);
    }
    let mut candidates = cfg
        .exec
        .map(&roots, |&h| shape_for_height(profile, p, h, cfg.grid))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    candidates.sort_by(|a, b| b.payoff.partial_cmp(&a.payoff).unwrap());
    let tie = candidates.len() > 1
        && (candidates[0].payoff - candidates[1].payoff).abs() <= 1e-9 * candidates[0].payoff.abs().max(1.0);
    Ok(Op1Solution { candidates, tie })
}

/// Sunlight captured by a piecewise-constant arc-length control on `N` equal
/// cells of `[0, ell]`; `y(s)` starts at the ground.
pub fn payoff_op1(theta_of_s: &[f64], profile: &LightProfile, p: &ModelParams) -> f64 {
    let n = theta_of_s.len();
    if n == 0 {
        return 0.0;
    }
    let ds = p.ell / n as f64;
    let mut y = 0.0;
    let mut total = 0.0;
    for &t in theta_of_s {
        let s = t.sin();
        let dy = ds * s;
        let light = if dy.abs() > 1e-14 * ds { profile.integral(y, y + dy) / s } else { profile.eval(y.max(0.0)) * ds };
        total += ghat((t - p.theta0).cos().abs(), p.kappa) * light;
        y += dy;
    }
    total
}

/// `int_0^h I g(theta) dy` for a piecewise-constant control on equal height cells.
pub fn payoff_in_height(theta_of_y: &[f64], h: f64, profile: &LightProfile, p: &ModelParams) -> f64 {
    let n = theta_of_y.len() as f64;
    let dy = h / n;
    theta_of_y
        .iter()
        .enumerate()
        .map(|(i, &t)| g_profile(t, p) * profile.integral(dy * i as f64, dy * (i + 1) as f64))
        .sum()
}

/// `int_0^h dy / sin(theta)` for a piecewise-constant control on equal height cells.
pub fn length_in_height(theta_of_y: &[f64], h: f64) -> f64 {
    let dy = h / theta_of_y.len() as f64;
    theta_of_y.iter().map(|t| dy / t.sin()).sum()
}

fn fold_one(theta: f64, theta0: f64) -> f64 {
    use std::f64::consts::PI;
    // wrap into ]-pi, pi]
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    if t <= -PI {
        t += 2.0 * PI;
    }
    // reflection step into ]0, theta0 + pi/2]
    t = if t > 0.0 && t <= theta0 + FRAC_PI_2 {
        t
    } else if t <= theta0 - FRAC_PI_2 {
        t + PI
    } else if t > theta0 + FRAC_PI_2 {
        2.0 * theta0 + PI - t
    } else {
        2.0 * theta0 - t
    };
    // piecewise affine map, iterated into [theta0, pi/2]
    for _ in 0..1000 {
        if t >= theta0 && t <= FRAC_PI_2 {
            break;
        }
        t = if t > FRAC_PI_2 { PI - t } else { 2.0 * theta0 - t };
    }
    t
}

/// Maps any arc-length control into `[theta0, pi/2]` without losing light
/// (for non-decreasing `I`).
pub fn fold_angles(theta_of_s: &[f64], theta0: f64) -> Vec<f64> {
    theta_of_s.iter().map(|&t| fold_one(t, theta0)).collect()
}

/// Non-increasing rearrangement of a control sampled on equal height cells.
pub fn rearrange_nonincreasing(theta_of_y: &[f64]) -> Vec<f64> {
    let mut v = theta_of_y.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v
}

/// Settings for [`oracle_op1`].
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    /// Number `N` of equal arc-length cells.
    pub segments: usize,
    /// Number `M` of grid angles in `[theta0, pi/2]`.
    pub grid: usize,
    /// Force coordinate descent even when exhaustive search is affordable.
    pub descent: bool,
    pub max_sweeps: usize,
    /// Random starts added to the grid-based ones in descent mode.
    pub random_starts: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            segments: 5,
            grid: 9,
            descent: false,
            max_sweeps: 200,
            random_starts: 2,
            seed: 7,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub payoff: f64,
    pub theta_of_s: Vec<f64>,
    pub exhaustive: bool,
}

const EXHAUSTIVE_LIMIT: usize = 4_000_000;
const MAX_SEGMENTS: usize = 64;

/// Brute-force maximizer of [`payoff_op1`] over piecewise-constant controls.
/// Exhaustive on the angle grid when affordable, coordinate descent otherwise.
pub fn oracle_op1(profile: &LightProfile, p: &ModelParams, cfg: &OracleConfig) -> Result<OracleResult> {
    let (n, m) = (cfg.segments, cfg.grid.max(2));
    if n == 0 || n > MAX_SEGMENTS {
        return Err(Error::BudgetExceeded(format!("{n} segments (at most {MAX_SEGMENTS})")));
    }
    let angles: Vec<f64> = (0..m).map(|j| p.theta0 + (FRAC_PI_2 - p.theta0) * j as f64 / (m - 1) as f64).collect();
    let total = (m as f64).powi(n as i32);
    if !cfg.descent && total <= EXHAUSTIVE_LIMIT as f64 {
        return Ok(exhaustive(profile, p, n, &angles, cfg.exec));
    }
    Ok(descent(profile, p, n, &angles, cfg))
}

fn exhaustive(profile: &LightProfile, p: &ModelParams, n: usize, angles: &[f64], exec: Exec) -> OracleResult {
    let m = angles.len();
    let total = m.pow(n as u32);
    let chunk = 4096;
    let chunks = total.div_ceil(chunk);
    let decode = |mut k: usize| {
        let mut v = vec![0.0; n];
        for slot in v.iter_mut() {
            *slot = angles[k % m];
            k /= m;
        }
        v
    };
    let best = exec.map_range(chunks, |c| {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for k in c * chunk..((c + 1) * chunk).min(total) {
            let v = payoff_op1(&decode(k), profile, p);
            if v > best.0 {
                best = (v, k);
            }
        }
        best
    });
    let (payoff, k) = best.into_iter().fold((f64::NEG_INFINITY, 0), |acc, b| if b.0 > acc.0 { b } else { acc });
    OracleResult { payoff, theta_of_s: decode(k), exhaustive: true }
}

fn descent(profile: &LightProfile, p: &ModelParams, n: usize, angles: &[f64], cfg: &OracleConfig) -> OracleResult {
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let mut consts: Vec<(f64, f64)> =
        angles.iter().map(|&a| (payoff_op1(&vec![a; n], profile, p), a)).collect();
    consts.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for &(_, a) in consts.iter().take(2) {
        starts.push(vec![a; n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.random_starts {
        starts.push((0..n).map(|_| rng.gen_range(p.theta0..=FRAC_PI_2)).collect());
    }
    let runs = cfg.exec.map(&starts, |s| refine(profile, p, s.clone(), cfg.max_sweeps));
    let (payoff, theta_of_s) = runs
        .into_iter()
        .fold((f64::NEG_INFINITY, Vec::new()), |acc, r| if r.0 > acc.0 { r } else { acc });
    OracleResult { payoff, theta_of_s, exhaustive: false }
}

fn refine(profile: &LightProfile, p: &ModelParams, mut v: Vec<f64>, sweeps: usize) -> (f64, Vec<f64>) {
    let mut best = payoff_op1(&v, profile, p);
    for _ in 0..sweeps {
        let before = best;
        for i in 0..v.len() {
            let mut trial = v.clone();
            let (t, val) = maximize_scalar(
                |t| {
                    trial[i] = t;
                    payoff_op1(&trial, profile, p)
                },
                p.theta0,
                FRAC_PI_2,
                1e-10,
            );
            if val > best {
                best = val;
                v[i] = t;
            }
        }
        if best - before <= 1e-13 * best.abs().max(1.0) {
            break;
        }
    }
    (best, v)
}

/// Outcome of the two-branch search for the step profile `I = eps` below `y = 1`.
#[derive(Debug, Clone, Serialize)]
pub struct NonUniqueness {
    pub epsilon_hat: f64,
    /// Upper end of the search interval, where `sin(alpha) = 1 / ell`.
    pub epsilon1: f64,
    /// Straight stem below the step.
    pub payoff1: f64,
    /// Stem crossing the step.
    pub payoff2: f64,
    pub h1: f64,
    pub h2: f64,
    pub alpha: f64,
    #[serde(skip)]
    pub shapes: [StemShape1; 2],
}

/// Payoffs `(S1, S2)` of the two feedback stems under the step profile with lower level `eps`.
pub fn step_branch_payoffs(eps: f64, p: &ModelParams) -> Result<(f64, f64, f64)> {
    let full = -phi_domain_max(p);
    let alpha = phi_inverse(-full / eps, p)?;
    let s1 = p.ell * full * eps;
    let s2 = eps * big_g(alpha, p) / alpha.sin() + (p.ell - 1.0 / alpha.sin()) * full;
    Ok((s1, s2, alpha))
}

/// Finds the step level at which the straight stem and the stem crossing the
/// step collect the same light.
pub fn find_nonuniqueness_epsilon(p: &ModelParams, grid: usize) -> Result<NonUniqueness> {
    p.validate()?;
    let s0 = p.theta0.sin();
    if !(p.ell > 1.0 && p.ell * s0 < 1.0) {
        return Err(Error::NoCrossing(format!(
            "need ell > 1 and ell sin(theta0) < 1, got ell = {}, sin(theta0) = {s0}",
            p.ell
        )));
    }
    let alpha1 = (1.0 / p.ell).asin();
    let eps1 = phi_domain_max(p) / f_fn(alpha1, p);
    let diff = |e: f64| step_branch_payoffs(e, p).map(|(a, b, _)| b - a).unwrap_or(f64::NAN);
    let lo = 1e-8 * eps1;
    let (d_lo, d_hi) = (diff(lo), diff(eps1));
    if !(d_lo > 0.0 && d_hi < 0.0) {
        return Err(Error::NoCrossing(format!("S2 - S1 = {d_lo} near 0 and {d_hi} at eps1 = {eps1}")));
    }
    let eps = find_root(diff, Bracket::from_values(lo, eps1, d_lo, d_hi)?, 1e-16)?;
    let (payoff1, payoff2, alpha) = step_branch_payoffs(eps, p)?;
    let h1 = p.ell * s0;
    let h2 = 1.0 + (p.ell - 1.0 / alpha.sin()) * s0;
    let profile = LightProfile::step(1.0, eps)?;
    let shapes = [shape_for_height(&profile, p, h1, grid)?, shape_for_height(&profile, p, h2, grid)?];
    Ok(NonUniqueness { epsilon_hat: eps, epsilon1: eps1, payoff1, payoff2, h1, h2, alpha, shapes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI, SQRT_2};

    fn p0() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn g_values() {
        let e = (-1.0f64).exp();
        assert!((g_profile(FRAC_PI_4, &p0()) - (1.0 - e) * SQRT_2).abs() < 1e-14);
        let want = (1.0 - (-SQRT_2).exp()) * SQRT_2 / 2.0;
        assert!((g_profile(FRAC_PI_2, &p0()) - want).abs() < 1e-14);
        assert!((want - 0.535197).abs() < 1e-6);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = ModelParams { kappa: 1.7, theta0: 0.6, ..p0() };
        for &t in &[0.65, 0.9, 1.2, 1.5] {
            let h = 1e-6;
            let d1 = (big_g(t + h, &p) - big_g(t - h, &p)) / (2.0 * h);
            let d2 = (big_g_prime(t + h, &p) - big_g_prime(t - h, &p)) / (2.0 * h);
            let df = (f_fn(t + h, &p) - f_fn(t - h, &p)) / (2.0 * h);
            assert!((d1 - big_g_prime(t, &p)).abs() < 1e-8);
            assert!((d2 - big_g_second(t, &p)).abs() < 1e-7);
            assert!((df - f_prime(t, &p)).abs() < 1e-5 * df.abs().max(1.0));
        }
    }

    #[test]
    fn phi_endpoint_and_interior() {
        let p = p0();
        let t = phi_inverse((-1.0f64).exp() - 1.0, &p).unwrap();
        assert_eq!(t, FRAC_PI_4);
        let t = phi_inverse(-1.0, &p).unwrap();
        assert!(t > FRAC_PI_4 && t < FRAC_PI_2);
        assert!((f_fn(t, &p) + 1.0).abs() < 1e-10);
        assert!(phi_inverse(0.0, &p).is_err());
    }

    #[test]
    fn full_sun_is_a_straight_stem() {
        let p = p0();
        let sol = solve_op1(&LightProfile::full_sun(), &p, &Op1Config { scan_points: 50, ..Default::default() }).unwrap();
        assert_eq!(sol.candidates.len(), 1);
        let s = sol.best();
        assert!((s.h - SQRT_2 / 2.0).abs() < 1e-10);
        assert!(s.theta.iter().all(|&t| (t - FRAC_PI_4).abs() < 1e-10));
        assert!((s.payoff - (1.0 - (-1.0f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn canopy_solution_invariants() {
        let p = p0();
        let profile = LightProfile::uniform_canopy(0.25 / p.theta0.sin(), 0.6).unwrap();
        let sol = solve_op1(&profile, &p, &Op1Config { scan_points: 100, ..Default::default() }).unwrap();
        let s = sol.best();
        assert!(s.feedback_residual(&p) < 1e-8);
        assert!(s.is_non_increasing());
        assert!((s.theta[s.theta.len() - 1] - p.theta0).abs() < 1e-8);
        assert!((s.length - p.ell).abs() < 1e-8);
        assert!(s.theta[0] > p.theta0);
    }

    #[test]
    fn payoff_op1_values() {
        let p = p0();
        let full = LightProfile::full_sun();
        assert!((payoff_op1(&[FRAC_PI_4; 8], &full, &p) - (1.0 - (-1.0f64).exp())).abs() < 1e-14);
        let want = (1.0 - (-SQRT_2).exp()) * SQRT_2 / 2.0;
        assert!((payoff_op1(&[FRAC_PI_2; 3], &full, &p) - want).abs() < 1e-14);
        let eps = 0.1;
        let q = ModelParams { ell: 1.2, ..p };
        let step = LightProfile::step(1.0, eps).unwrap();
        let want = 1.2 * (1.0 - (-1.0f64).exp()) * eps;
        assert!((payoff_op1(&[FRAC_PI_4; 10], &step, &q) - want).abs() < 1e-14);
    }

    #[test]
    fn fold_examples() {
        let t0 = FRAC_PI_4;
        assert_eq!(fold_angles(&[t0], t0), vec![t0]);
        assert!((fold_angles(&[3.0 * PI / 5.0], t0)[0] - 2.0 * PI / 5.0).abs() < 1e-15);
        assert!((fold_angles(&[-t0], t0)[0] - t0).abs() < 1e-15);
        for t in fold_angles(&[-3.0, -1.0, 0.0, 0.3, 2.0, 3.1, PI], t0) {
            assert!(t >= t0 && t <= FRAC_PI_2);
        }
    }

    #[test]
    fn rearrangement_example() {
        let v = [FRAC_PI_4, FRAC_PI_4, FRAC_PI_2, FRAC_PI_2];
        assert_eq!(rearrange_nonincreasing(&v), vec![FRAC_PI_2, FRAC_PI_2, FRAC_PI_4, FRAC_PI_4]);
    }

    #[test]
    fn full_sun_oracle_picks_theta0() {
        let r = oracle_op1(&LightProfile::full_sun(), &p0(), &OracleConfig { segments: 4, grid: 7, ..Default::default() })
            .unwrap();
        assert!(r.theta_of_s.iter().all(|&t| t == FRAC_PI_4));
        assert!(oracle_op1(&LightProfile::full_sun(), &p0(), &OracleConfig { segments: 65, ..Default::default() })
            .is_err());
    }

    #[test]
    fn step_example_limits() {
        let p = ModelParams { ell: 1.2, ..p0() };
        let (_, s2, _) = step_branch_payoffs(1e-9, &p).unwrap();
        assert!((s2 - (1.0 - (-1.0f64).exp()) / 5.0).abs() < 1e-6);
        let r = find_nonuniqueness_epsilon(&p, 512).unwrap();
        assert!(r.epsilon_hat > 0.0 && r.epsilon_hat < r.epsilon1);
        let (s1, s2, _) = step_branch_payoffs(r.epsilon1, &p).unwrap();
        assert!(s2 < s1);
        assert!((r.payoff1 - r.payoff2).abs() <= 1e-10);
        // shapes integrated by quadrature reproduce the branch payoffs
        assert!((r.shapes[0].payoff - r.payoff1).abs() < 1e-10);
        assert!((r.shapes[1].payoff - r.payoff2).abs() < 1e-10);
    }

    fn lift(v: &[f64]) -> LightProfile {
        // non-decreasing profile from three increments
        let a = 0.2 + 0.6 * v[0];
        let b = a + (1.0 - a) * v[1];
        LightProfile::tabulated(vec![0.0, 0.3 + 0.4 * v[2], 1.2], vec![a, b, 1.0]).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn phi_is_decreasing(a in -50.0f64..-0.64, b in -50.0f64..-0.64) {
            let p = p0();
            prop_assume!((a - b).abs() > 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(phi_inverse(lo, &p).unwrap() > phi_inverse(hi, &p).unwrap());
        }

        #[test]
        fn fold_never_loses_light(
            thetas in proptest::collection::vec(-PI..PI, 12),
            v in proptest::collection::vec(0.0f64..1.0, 3),
        ) {
            let p = p0();
            let prof = lift(&v);
            let before = payoff_op1(&thetas, &prof, &p);
            let folded = fold_angles(&thetas, p.theta0);
            prop_assert!(folded.iter().all(|&t| t >= p.theta0 - 1e-12 && t <= FRAC_PI_2 + 1e-12));
            prop_assert!(payoff_op1(&folded, &prof, &p) >= before - 1e-12);
        }

        #[test]
        fn rearrangement_never_loses_light(
            thetas in proptest::collection::vec(FRAC_PI_4..FRAC_PI_2, 16),
            v in proptest::collection::vec(0.0f64..1.0, 3),
        ) {
            let p = p0();
            let prof = lift(&v);
            let r = rearrange_nonincreasing(&thetas);
            prop_assert!((length_in_height(&r, 1.0) - length_in_height(&thetas, 1.0)).abs() < 1e-12);
            prop_assert!(payoff_in_height(&r, 1.0, &prof, &p) >= payoff_in_height(&thetas, 1.0, &prof, &p) - 1e-12);
        }
    }
}
