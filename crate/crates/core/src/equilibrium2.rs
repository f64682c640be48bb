//! Competitive equilibrium for Model 2: a stand of identical stems with density
//! `rho0` whose leaves shade each other,
//!
//! ```text
//! I(y) = exp(-(rho0 / cos theta0) int_y^h u / sin(theta) dy'),
//! ```
//!
//! while each stem is optimal under that `I`. Two solvers are provided: a damped
//! fixed-point iteration of (best response, shading) and direct shooting of the
//! coupled `(p, q, I)` system.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lightfield::{check_class_f, LightProfile, RegularityReport};
use crate::model2::{shoot_op2, solve_shooting, Light, Op2Config, StemState2};
use crate::numerics::uniform_grid;
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FixedPoint,
    DirectShooting,
}

#[derive(Debug, Clone, Serialize)]
pub struct Equilibrium2Result {
    #[serde(skip)]
    pub i_star: LightProfile,
    pub stem: StemState2,
    pub method: Method,
    pub iterations: usize,
    pub residual_map: f64,
    pub residual_refit: f64,
    pub h: f64,
    /// Some best response along the way had several roots; the max-payoff one was kept.
    pub multiple_roots: bool,
    /// `I*` satisfies the regularity class with `C = 1`, `beta = 1/2`.
    pub class_f_ok: bool,
    /// Largest `c0` with `q / I >= c0 y` on the grid.
    pub ratio_slope_floor: f64,
}

impl Equilibrium2Result {
    pub fn i_star_at(&self, y: f64) -> f64 {
        self.i_star.eval(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eq2Config {
    pub damping: f64,
    pub max_iter: usize,
    /// Sup-norm change that ends the fixed-point iteration.
    pub tol: f64,
    /// Points of the common grid carrying the iterates.
    pub grid: usize,
    pub op2: Op2Config,
}

impl Default for Eq2Config {
    fn default() -> Self {
        Eq2Config { damping: 0.5, max_iter: 200, tol: 1e-8, grid: 4097, op2: Op2Config::default() }
    }
}

fn shade_rate(params: &ModelParams) -> f64 {
    params.rho0 / params.theta0.cos()
}

/// Intensity below a stand of stems shaped like `stem`; equal to 1 above its tip.
pub fn shade_map(stem: &StemState2, params: &ModelParams) -> Result<LightProfile> {
    let rate = shade_rate(params);
    let vs: Vec<f64> = stem.mass_above.iter().map(|m| (-rate * m).exp()).collect();
    LightProfile::tabulated_smooth(stem.ys.clone(), vs)
}

fn sup_gap(a: &LightProfile, b: &LightProfile, ys: &[f64]) -> f64 {
    ys.iter().map(|&y| (a.eval(y) - b.eval(y)).abs()).fold(0.0, f64::max)
}

fn ratio_floor(stem: &StemState2) -> f64 {
    stem.ys
        .iter()
        .zip(stem.q.iter().zip(&stem.intensity))
        .skip(1)
        .map(|(&y, (&q, &i))| q / i / y)
        .fold(f64::INFINITY, f64::min)
}

// Narrow scan around the previous height for later iterations.
fn local_config(base: &Op2Config, h: f64) -> Op2Config {
    Op2Config { h_bracket: Some((0.8 * h, 1.25 * h)), scan_points: 12, ..*base }
}

/// Damped iteration `I <- (1 - d) I + d S(B(I))` of best response `B` and shading `S`.
pub fn solve_equilibrium_fixed_point(params: &ModelParams, cfg: &Eq2Config) -> Result<Equilibrium2Result> {
    params.validate()?;
    if !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
        return Err(Error::InvalidParameter { field: "damping", reason: format!("{} outside ]0, 1]", cfg.damping) });
    }
    let top = 2.0 * crate::model2::uniform_height(params);
    let grid = uniform_grid(0.0, top, cfg.grid.max(3));
    let mut current = LightProfile::full_sun();
    let mut stem = shoot_op2(&current, params, &cfg.op2)?;
    let mut multiple = stem.roots.len() > 1;
    for it in 1..=cfg.max_iter {
        let shaded = shade_map(&stem, params)?;
        let change = sup_gap(&current, &shaded, &grid) * cfg.damping;
        if change <= cfg.tol {
            let mut res = finish(current, stem, Method::FixedPoint, it, params, cfg)?;
            res.multiple_roots |= multiple;
            return Ok(res);
        }
        if grid.iter().any(|&y| shaded.eval(y) > 1.0 + 1e-12) {
            return Err(Error::NonFinite(top));
        }
        let vs: Vec<f64> = grid
            .iter()
            .map(|&y| ((1.0 - cfg.damping) * current.eval(y) + cfg.damping * shaded.eval(y)).min(1.0))
            .collect();
        current = LightProfile::tabulated_smooth(grid.clone(), vs)?;
        stem = shoot_op2(&current, params, &local_config(&cfg.op2, stem.h))
            .or_else(|_| shoot_op2(&current, params, &cfg.op2))?;
        multiple |= stem.roots.len() > 1;
        if it == cfg.max_iter {
            return Err(Error::NotConverged { iterations: it, change });
        }
    }
    Err(Error::NotConverged { iterations: cfg.max_iter, change: f64::NAN })
}

/// Shoots the coupled system `p' = -f1 f3, q' = f2, I' = f3` with `p(h) = 0`, `q(h) = I(h) = 1`.
pub fn solve_equilibrium_direct(params: &ModelParams, cfg: &Eq2Config) -> Result<Equilibrium2Result> {
    params.validate()?;
    let stem = solve_shooting(Light::Shade { rate: shade_rate(params) }, params, &cfg.op2)?;
    let i_star = LightProfile::tabulated_smooth(stem.ys.clone(), stem.intensity.iter().map(|v| v.min(1.0)).collect())?;
    let multiple = stem.roots.len() > 1;
    let mut res = finish(i_star, stem, Method::DirectShooting, 1, params, cfg)?;
    res.multiple_roots |= multiple;
    Ok(res)
}

fn finish(
    i_star: LightProfile,
    stem: StemState2,
    method: Method,
    iterations: usize,
    params: &ModelParams,
    cfg: &Eq2Config,
) -> Result<Equilibrium2Result> {
    let class: RegularityReport = check_class_f(&i_star);
    let mut res = Equilibrium2Result {
        h: stem.h,
        ratio_slope_floor: ratio_floor(&stem),
        multiple_roots: false,
        class_f_ok: class.holder_bound_ok,
        i_star,
        stem,
        method,
        iterations,
        residual_map: f64::NAN,
        residual_refit: f64::NAN,
    };
    let rep = verify_equilibrium(&res, params, &cfg.op2)?;
    res.residual_map = rep.residual_map;
    res.residual_refit = rep.residual_refit;
    res.multiple_roots |= rep.roots > 1;
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eq2Report {
    /// Gap between the stored stem and a fresh best response under `I*`.
    pub residual_refit: f64,
    /// Sup-norm gap between `I*` and the shading produced by the stored stem.
    pub residual_map: f64,
    /// Number of best-response roots under `I*`.
    pub roots: usize,
}

/// Checks both equilibrium conditions for `res`.
///
/// The refit gap is the largest of `|h - h'|`, `|theta - theta'|` and
/// `|u - u'| / (1 + |u|)` compared at equal fractions of the height (the root
/// `y = 0`, where `u` is unbounded, is skipped).
pub fn verify_equilibrium(res: &Equilibrium2Result, params: &ModelParams, cfg: &Op2Config) -> Result<Eq2Report> {
    let stem = &res.stem;
    let shaded = shade_map(stem, params)?;
    let residual_map = sup_gap(&res.i_star, &shaded, &stem.ys);
    let fresh_cfg = Op2Config { grid: stem.ys.len(), ..*cfg };
    let fresh = shoot_op2(&res.i_star, params, &fresh_cfg)?;
    let mut refit = (fresh.h - stem.h).abs();
    for k in 1..stem.ys.len() {
        refit = refit.max((fresh.theta[k] - stem.theta[k]).abs());
        refit = refit.max((fresh.u[k] - stem.u[k]).abs() / (1.0 + stem.u[k].abs()));
    }
    Ok(Eq2Report { residual_refit: refit, residual_map, roots: fresh.roots.len() })
}
