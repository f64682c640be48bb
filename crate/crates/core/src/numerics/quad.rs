use crate::error::{Error, Result};

/// Tolerances and endpoint hints for [`quad`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Integrand may blow up (integrably) at the left end; it is never evaluated there.
    pub singular_left: bool,
    /// Same for the right end.
    pub singular_right: bool,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: super::DEFAULT_ABS_TOL,
            rel_tol: super::DEFAULT_REL_TOL,
            singular_left: false,
            singular_right: false,
        }
    }
}

impl QuadOptions {
    pub fn with_tol(tol: f64) -> Self {
        QuadOptions { abs_tol: tol, rel_tol: tol, ..Default::default() }
    }

    pub fn singular_left(mut self) -> Self {
        self.singular_left = true;
        self
    }

    pub fn singular_right(mut self) -> Self {
        self.singular_right = true;
        self
    }
}

const MAX_DEPTH: u32 = 48;
const MAX_PANELS: usize = 1000;

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// Declared singular endpoints are approached through geometrically graded
/// panels of width `2^-k`, with the remaining tail estimated by geometric
/// extrapolation of the panel contributions.
pub fn quad<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        let flipped = QuadOptions { singular_left: opts.singular_right, singular_right: opts.singular_left, ..*opts };
        return quad(f, b, a, &flipped).map(|v| -v);
    }
    let tol = opts.abs_tol.max(0.0);
    match (opts.singular_left, opts.singular_right) {
        (false, false) => simpson(&f, a, b, tol, opts.rel_tol),
        (true, false) => graded(&f, a, b, tol, opts.rel_tol),
        (false, true) => graded(&|s: f64| f(a + b - s), a, b, tol, opts.rel_tol),
        (true, true) => {
            let m = 0.5 * (a + b);
            let left = graded(&f, a, m, 0.5 * tol, opts.rel_tol)?;
            let right = graded(&|s: f64| f(m + b - s), m, b, 0.5 * tol, opts.rel_tol)?;
            Ok(left + right)
        }
    }
}

/// Integrates over consecutive intervals delimited by `breaks` (sorted).
/// Each piece is sampled strictly inside its ends, so `f` may jump at a break.
/// Singular flags apply to the outermost ends only.
pub fn quad_with_breaks<F: Fn(f64) -> f64>(f: F, breaks: &[f64], opts: &QuadOptions) -> Result<f64> {
    if breaks.len() < 2 {
        return Ok(0.0);
    }
    let n = breaks.len() - 1;
    let mut total = 0.0;
    for i in 0..n {
        let (a, b) = (breaks[i], breaks[i + 1]);
        if b <= a {
            continue;
        }
        let sub = QuadOptions {
            abs_tol: opts.abs_tol / n as f64,
            singular_left: opts.singular_left && i == 0,
            singular_right: opts.singular_right && i + 1 == n,
            ..*opts
        };
        let nudge = |x: f64| 4.0 * f64::EPSILON * x.abs().max(b - a);
        let (mut lo, mut hi) = (a + nudge(a), b - nudge(b));
        if lo > hi {
            lo = 0.5 * (a + b);
            hi = lo;
        }
        total += quad(|x: f64| f(x.clamp(lo, hi)), a, b, &sub)?;
    }
    Ok(total)
}

fn eval<F: Fn(f64) -> f64>(f: &F, x: f64) -> Result<f64> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(x))
    }
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    let fa = eval(f, a)?;
    let fb = eval(f, b)?;
    let m = 0.5 * (a + b);
    let fm = eval(f, m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // Cheap global scale for the relative criterion.
    let tol = abs_tol.max(rel_tol * whole.abs());
    recurse(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = eval(f, lm)?;
    let frm = eval(f, rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || m <= a || m >= b {
        return Ok(left + right + delta / 15.0);
    }
    Ok(recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

// Panels [a + w 2^-(k+1), a + w 2^-k], k = 0, 1, ... with w = b - a.
fn graded<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    let w = b - a;
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    let panel_tol = abs_tol / 8.0;
    for k in 0..MAX_PANELS {
        let hi = a + w * 0.5f64.powi(k as i32);
        let lo = a + w * 0.5f64.powi(k as i32 + 1);
        if !(lo > a) || lo >= hi {
            break;
        }
        let c = simpson(f, lo, hi, panel_tol, rel_tol)?;
        total += c;
        if let Some(p) = prev {
            let tail = if p != 0.0 {
                let r = c / p;
                if r.abs() < 1.0 {
                    c * r / (1.0 - r)
                } else {
                    f64::INFINITY
                }
            } else if c == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            let scale = abs_tol.max(rel_tol * total.abs());
            if tail.abs() < 0.25 * scale {
                return Ok(total + tail);
            }
        }
        prev = Some(c);
    }
    // Panel width hit the floating-point resolution of `a`: remaining mass is
    // below anything representable in the sum.
    Ok(total)
}
