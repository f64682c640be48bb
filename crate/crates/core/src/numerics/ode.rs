use crate::error::{Error, Result};

/// Integration direction, implied by the ordering of the span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// A first-order system `y' = rhs(t, y)` of fixed dimension.
pub struct OdeProblem<F> {
    pub dim: usize,
    pub rhs: F,
}

impl<F> OdeProblem<F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    pub fn new(dim: usize, rhs: F) -> Self {
        OdeProblem { dim, rhs }
    }
}

/// Step control for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepControl {
    /// Classical RK4 with `steps` equal steps.
    Fixed { steps: usize },
    /// Dormand-Prince 5(4) with mixed absolute/relative error control.
    Adaptive { rtol: f64, atol: f64, initial_step: Option<f64> },
}

impl StepControl {
    pub fn adaptive(rtol: f64, atol: f64) -> Self {
        StepControl::Adaptive { rtol, atol, initial_step: None }
    }
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl::adaptive(super::DEFAULT_REL_TOL, super::DEFAULT_ABS_TOL)
    }
}

/// Accepted steps of an integration run with cubic Hermite dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
    /// True when a stop predicate ended the run before the end of the span.
    pub stopped_early: bool,
}

impl Trajectory {
    pub fn direction(&self) -> Direction {
        if self.t.len() > 1 && self.t[self.t.len() - 1] < self.t[0] {
            Direction::Backward
        } else {
            Direction::Forward
        }
    }

    pub fn first(&self) -> &[f64] {
        &self.y[0]
    }

    pub fn last(&self) -> &[f64] {
        &self.y[self.y.len() - 1]
    }

    pub fn t_end(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    /// Index `i` of the step `[t_i, t_{i+1}]` containing `t` (clamped).
    fn locate(&self, t: f64) -> usize {
        let n = self.t.len();
        if n < 2 {
            return 0;
        }
        let i = match self.direction() {
            Direction::Forward => self.t.partition_point(|&s| s <= t),
            Direction::Backward => self.t.partition_point(|&s| s >= t),
        };
        i.saturating_sub(1).min(n - 2)
    }

    /// Dense output of component `k` at `t` (clamped to the integrated span).
    pub fn component_at(&self, k: usize, t: f64) -> f64 {
        if self.t.len() == 1 {
            return self.y[0][k];
        }
        let i = self.locate(t);
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let (y0, y1) = (self.y[i][k], self.y[i + 1][k]);
        let (d0, d1) = (self.dy[i][k], self.dy[i + 1][k]);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
    }

    /// Dense output of the full state at `t`.
    pub fn at(&self, t: f64) -> Vec<f64> {
        (0..self.y[0].len()).map(|k| self.component_at(k, t)).collect()
    }
}

/// Integrates `problem` over `span = (a, b)`; `b < a` integrates backward.
pub fn integrate<F>(
    problem: &OdeProblem<F>,
    span: (f64, f64),
    initial: &[f64],
    control: StepControl,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    integrate_until(problem, span, initial, control, |_, _| false)
}

/// Like [`integrate`] but stops after the first accepted step whose state
/// satisfies `stop(t, y)`.
pub fn integrate_until<F, S>(
    problem: &OdeProblem<F>,
    span: (f64, f64),
    initial: &[f64],
    control: StepControl,
    stop: S,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
    S: Fn(f64, &[f64]) -> bool,
{
    let (a, b) = span;
    if a == b {
        return Err(Error::Domain("integration span has zero length".into()));
    }
    if initial.len() != problem.dim {
        return Err(Error::Domain(format!(
            "initial state has {} components, expected {}",
            initial.len(),
            problem.dim
        )));
    }
    if let Some(bad) = initial.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite initial state component {bad}")));
    }
    match control {
        StepControl::Fixed { steps } => rk4(problem, a, b, initial, steps.max(1), stop),
        StepControl::Adaptive { rtol, atol, initial_step } => {
            dopri5(problem, a, b, initial, rtol, atol, initial_step, stop)
        }
    }
}

fn rk4<F, S>(p: &OdeProblem<F>, a: f64, b: f64, y0: &[f64], n: usize, stop: S) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
    S: Fn(f64, &[f64]) -> bool,
{
    let dim = p.dim;
    let h = (b - a) / n as f64;
    let mut y = y0.to_vec();
    let mut f0 = vec![0.0; dim];
    (p.rhs)(a, &y, &mut f0);
    let mut out = Trajectory { t: vec![a], y: vec![y.clone()], dy: vec![f0.clone()], stopped_early: false };
    let (mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    for i in 0..n {
        let t = a + h * i as f64;
        let k1 = out.dy.last().unwrap().clone();
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        (p.rhs)(t + 0.5 * h, &tmp, &mut k2);
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        (p.rhs)(t + 0.5 * h, &tmp, &mut k3);
        for j in 0..dim {
            tmp[j] = y[j] + h * k3[j];
        }
        (p.rhs)(t + h, &tmp, &mut k4);
        for j in 0..dim {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let t1 = if i + 1 == n { b } else { a + h * (i + 1) as f64 };
        if let Some(bad) = y.iter().position(|v| !v.is_finite()) {
            let _ = bad;
            return Err(Error::NonFinite(t1));
        }
        let mut f1 = vec![0.0; dim];
        (p.rhs)(t1, &y, &mut f1);
        out.t.push(t1);
        out.y.push(y.clone());
        out.dy.push(f1);
        if stop(t1, &y) {
            out.stopped_early = i + 1 < n;
            break;
        }
    }
    Ok(out)
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const MAX_STEPS: usize = 1_000_000;

#[allow(clippy::too_many_arguments)]
fn dopri5<F, S>(
    p: &OdeProblem<F>,
    a: f64,
    b: f64,
    y0: &[f64],
    rtol: f64,
    atol: f64,
    initial_step: Option<f64>,
    stop: S,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
    S: Fn(f64, &[f64]) -> bool,
{
    let dim = p.dim;
    let dir = (b - a).signum();
    let span = (b - a).abs();
    let mut t = a;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; dim];
    (p.rhs)(t, &y, &mut k1);
    if k1.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(t));
    }
    let mut out = Trajectory { t: vec![t], y: vec![y.clone()], dy: vec![k1.clone()], stopped_early: false };

    let err_norm = |y: &[f64], yn: &[f64], err: &[f64]| -> f64 {
        let mut s = 0.0;
        for j in 0..dim {
            let sc = atol + rtol * y[j].abs().max(yn[j].abs());
            let r = err[j] / sc;
            s += r * r;
        }
        (s / dim as f64).sqrt()
    };

    let mut h = match initial_step {
        Some(h) => h.abs().min(span),
        None => {
            // Hairer-Norsett-Wanner starting step heuristic.
            let d0 = err_norm(&y, &y, &y);
            let d1 = err_norm(&y, &y, &k1);
            let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
            let h0 = h0.min(span);
            let mut y1 = vec![0.0; dim];
            for j in 0..dim {
                y1[j] = y[j] + dir * h0 * k1[j];
            }
            let mut f1 = vec![0.0; dim];
            (p.rhs)(t + dir * h0, &y1, &mut f1);
            let diff: Vec<f64> = (0..dim).map(|j| f1[j] - k1[j]).collect();
            let d2 = err_norm(&y, &y, &diff) / h0;
            let h1 = if d1.max(d2) <= 1e-15 {
                (h0 * 1e-3).max(1e-6)
            } else {
                (0.01 / d1.max(d2)).powf(0.2)
            };
            (100.0 * h0).min(h1).min(span)
        }
    };

    let mut k = vec![vec![0.0; dim]; 7];
    let mut tmp = vec![0.0; dim];
    let mut yn = vec![0.0; dim];
    let mut errv = vec![0.0; dim];
    let mut steps = 0usize;
    let floor = |t: f64| 1e-14 * t.abs().max(span).max(1e-300);

    while (b - t) * dir > 0.0 {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::MaxIterations(MAX_STEPS));
        }
        if h < floor(t) {
            return Err(Error::StepUnderflow { t, step: h });
        }
        let mut last = false;
        if (t + dir * h - b) * dir >= 0.0 {
            h = (b - t).abs();
            last = true;
        }
        let hs = dir * h;
        k[0].copy_from_slice(&out.dy[out.dy.len() - 1]);
        for j in 0..dim {
            tmp[j] = y[j] + hs * A21 * k[0][j];
        }
        (p.rhs)(t + C2 * hs, &tmp, &mut k[1]);
        for j in 0..dim {
            tmp[j] = y[j] + hs * (A31 * k[0][j] + A32 * k[1][j]);
        }
        (p.rhs)(t + C3 * hs, &tmp, &mut k[2]);
        for j in 0..dim {
            tmp[j] = y[j] + hs * (A41 * k[0][j] + A42 * k[1][j] + A43 * k[2][j]);
        }
        (p.rhs)(t + C4 * hs, &tmp, &mut k[3]);
        for j in 0..dim {
            tmp[j] = y[j] + hs * (A51 * k[0][j] + A52 * k[1][j] + A53 * k[2][j] + A54 * k[3][j]);
        }
        (p.rhs)(t + C5 * hs, &tmp, &mut k[4]);
        for j in 0..dim {
            tmp[j] = y[j]
                + hs * (A61 * k[0][j] + A62 * k[1][j] + A63 * k[2][j] + A64 * k[3][j] + A65 * k[4][j]);
        }
        (p.rhs)(t + hs, &tmp, &mut k[5]);
        for j in 0..dim {
            yn[j] = y[j]
                + hs * (B1 * k[0][j] + B3 * k[2][j] + B4 * k[3][j] + B5 * k[4][j] + B6 * k[5][j]);
        }
        let t_new = if last { b } else { t + hs };
        (p.rhs)(t_new, &yn, &mut k[6]);
        for j in 0..dim {
            errv[j] = hs
                * (E1 * k[0][j] + E3 * k[2][j] + E4 * k[3][j] + E5 * k[4][j] + E6 * k[5][j] + E7 * k[6][j]);
        }
        let finite = yn.iter().chain(k[6].iter()).all(|v| v.is_finite());
        let err = if finite { err_norm(&y, &yn, &errv) } else { f64::INFINITY };
        if err <= 1.0 {
            t = t_new;
            y.copy_from_slice(&yn);
            out.t.push(t);
            out.y.push(y.clone());
            out.dy.push(k[6].clone());
            if stop(t, &y) {
                out.stopped_early = (b - t) * dir > 0.0;
                break;
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h *= fac;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> OdeProblem<impl Fn(f64, &[f64], &mut [f64])> {
        OdeProblem::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = -y[0])
    }

    #[test]
    fn exponential_decay_adaptive() {
        let tr = integrate(&decay(), (0.0, 1.0), &[1.0], StepControl::default()).unwrap();
        assert!((tr.last()[0] - (-1.0f64).exp()).abs() < 1e-8);
        // dense output between steps
        assert!((tr.component_at(0, 0.37) - (-0.37f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn constant_solution() {
        let p = OdeProblem::new(1, |_t, _y: &[f64], dy: &mut [f64]| dy[0] = 0.0);
        let tr = integrate(&p, (0.0, 5.0), &[3.25], StepControl::Fixed { steps: 10 }).unwrap();
        assert_eq!(tr.last()[0], 3.25);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let exact = (-1.0f64).exp();
        let e1 = (integrate(&decay(), (0.0, 1.0), &[1.0], StepControl::Fixed { steps: 10 }).unwrap().last()[0]
            - exact)
            .abs();
        let e2 = (integrate(&decay(), (0.0, 1.0), &[1.0], StepControl::Fixed { steps: 20 }).unwrap().last()[0]
            - exact)
            .abs();
        assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn backward_frozen_angle_layer() {
        // zeta' = -rho_kappa / sin(theta0), zeta(0) = 0, integrated back to t = -1
        let rk = 0.1;
        let s0 = std::f64::consts::FRAC_PI_4.sin();
        let p = OdeProblem::new(1, move |_t, _y: &[f64], dy: &mut [f64]| dy[0] = -rk / s0);
        let tr = integrate(&p, (0.0, -1.0), &[0.0], StepControl::default()).unwrap();
        assert_eq!(tr.direction(), Direction::Backward);
        assert!((tr.last()[0] - 0.1 * std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!((tr.component_at(0, -0.5) - 0.05 * std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn stop_predicate_ends_run() {
        let tr = integrate_until(&decay(), (0.0, 10.0), &[1.0], StepControl::default(), |_, y| y[0] < 0.5)
            .unwrap();
        assert!(tr.stopped_early);
        assert!(tr.last()[0] < 0.5);
    }

    #[test]
    fn blow_up_underflows_or_fails() {
        // y' = y^2 from y(0) = 1 blows up at t = 1.
        let p = OdeProblem::new(1, |_t, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0]);
        assert!(integrate(&p, (0.0, 2.0), &[1.0], StepControl::default()).is_err());
    }
}
