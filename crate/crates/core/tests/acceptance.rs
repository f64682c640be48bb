//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stemlight::equilibrium1::{necessary_condition_residual, solve_equilibrium1, verify_fixed_point, Eq1Config};
use stemlight::equilibrium2::{
    solve_equilibrium_direct, solve_equilibrium_fixed_point, verify_equilibrium, Eq2Config, Equilibrium2Result,
};
use stemlight::lightfield::{check_uniqueness_condition, LightProfile};
use stemlight::model1::{
    fold_angles, length_in_height, oracle_op1, payoff_in_height, payoff_op1, rearrange_nonincreasing, solve_op1,
    Op1Config, OracleConfig,
};
use stemlight::model2::{
    feedback_tu, hamiltonian_density, layer_samples, oracle_op2, shoot_op2, Op2Config, Oracle2Config, StemState2,
};
use stemlight::numerics::{interp_linear, uniform_grid};
use stemlight::spatial::{halfline_relaxation, solve_op3_single, GridSpec, HalfLineConfig, LightField2D, Op3Config};
use stemlight::{ModelParams, Result};

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn solver<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| format!("solver error: {e}"))
}

fn random_profile(rng: &mut ChaCha8Rng) -> LightProfile {
    // non-decreasing piecewise-linear light with three knots
    let a = rng.gen_range(0.2..0.8);
    let b = a + (1.0 - a) * rng.gen_range(0.0..1.0);
    let knot = rng.gen_range(0.3..0.7);
    LightProfile::tabulated(vec![0.0, knot, 1.2], vec![a, b, 1.0]).unwrap()
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn op2_cfg() -> Op2Config {
    Op2Config { grid: 1024, scan_points: 80, ..Op2Config::default() }
}

fn eq2_cfg() -> Eq2Config {
    Eq2Config { op2: op2_cfg(), ..Eq2Config::default() }
}

// I = 1: theta = theta0 everywhere and h = ell sin(theta0).
fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let p = ModelParams {
            theta0: rng.gen_range(0.1..1.45),
            kappa: rng.gen_range(0.2..4.0),
            ell: rng.gen_range(0.3..3.0),
            ..ModelParams::default()
        };
        let sol = solver(solve_op1(&LightProfile::full_sun(), &p, &Op1Config::default()))?;
        let best = sol.best();
        let dt = best.theta.iter().map(|t| (t - p.theta0).abs()).fold(0.0, f64::max);
        worst = worst.max(dt).max((best.h - p.ell * p.theta0.sin()).abs());
    }
    check(worst <= 1e-10, format!("max error {worst:.2e} over 5 random triples"))
}

// 2 s0 int_q^1 (1 + s ln s - s) ds for alpha = 1/2, c = 1
fn depth_closed_form(q: f64, s0: f64) -> f64 {
    let tail = if q > 0.0 { q + 0.5 * q * q * q.ln() - 0.75 * q * q } else { 0.0 };
    2.0 * s0 * (0.25 - tail)
}

fn uniform_op2() -> std::result::Result<StemState2, String> {
    solver(shoot_op2(&LightProfile::full_sun(), &ModelParams::default(), &op2_cfg()))
}

fn criterion_2() -> Outcome {
    let p = ModelParams::default();
    let st = uniform_op2()?;
    let h0 = 2f64.sqrt() / 4.0;
    let dh = (st.h - h0).abs();
    let s0 = p.theta0.sin();
    let n = st.ys.len();
    let mut implicit: f64 = 0.0;
    for k in 0..100 {
        let i = k * (n - 1) / 99;
        implicit = implicit.max((st.h - st.ys[i] - depth_closed_form(st.q[i], s0)).abs());
    }
    let dz = (st.z[0] - 1.0).abs();
    check(
        dh <= 1e-6 && implicit <= 1e-6 && dz <= 1e-6,
        format!("|h - sqrt2/4| = {dh:.2e}, implicit relation {implicit:.2e}, |z(0) - 1| = {dz:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut runs: Vec<(String, f64)> = Vec::new();
    runs.push(("op2 I=1".into(), uniform_op2()?.hamiltonian_max_abs));
    for alpha in [0.3, 0.5, 0.7] {
        let p = ModelParams { alpha, ..ModelParams::default() };
        let prof = LightProfile::uniform_canopy(0.8, 1.0).unwrap();
        let st = solver(shoot_op2(&prof, &p, &op2_cfg()))?;
        runs.push((format!("op2 canopy alpha={alpha}"), st.hamiltonian_max_abs));
    }
    for rho0 in [0.001, 0.01] {
        let p = ModelParams { rho0, ..ModelParams::default() };
        let d = solver(solve_equilibrium_direct(&p, &eq2_cfg()))?;
        runs.push((format!("eq2 direct rho0={rho0}"), d.stem.hamiltonian_max_abs));
        let f = solver(solve_equilibrium_fixed_point(&p, &eq2_cfg()))?;
        runs.push((format!("eq2 fixed point rho0={rho0}"), f.stem.hamiltonian_max_abs));
    }
    let (name, worst) = runs.iter().fold((String::new(), 0.0f64), |a, (n, h)| if *h > a.1 { (n.clone(), *h) } else { a });
    check(worst <= 1e-6, format!("max |H| = {worst:.2e} ({name}) over {} trajectories", runs.len()))
}

fn criterion_4() -> Outcome {
    let p = ModelParams::default();
    let prof = LightProfile::uniform_canopy(0.25 / p.theta0.sin(), 0.6).unwrap();
    let uni = check_uniqueness_condition(&prof, &p, p.ell);
    let best = solver(solve_op1(&prof, &p, &Op1Config::default()))?.best().clone();
    let ex = solver(oracle_op1(&prof, &p, &OracleConfig { segments: 5, grid: 9, ..OracleConfig::default() }))?;
    let cd = solver(oracle_op1(&prof, &p, &OracleConfig { segments: 64, grid: 9, descent: true, ..OracleConfig::default() }))?;
    let gap = (best.payoff - cd.payoff) / best.payoff;
    check(
        uni.holds && ex.exhaustive && ex.payoff <= best.payoff + 1e-12 && cd.payoff <= best.payoff + 1e-12 && gap <= 0.01,
        format!(
            "uniqueness margin {:.3e}; solver {:.8}, exhaustive {:.8}, descent(64) {:.8} (gap {:.3}%)",
            uni.worst_margin,
            best.payoff,
            ex.payoff,
            cd.payoff,
            100.0 * gap
        ),
    )
}

fn criterion_5() -> Outcome {
    let p = ModelParams::default();
    // With I = 1, p = 0 and u = -ln q the payoff is
    // -(alpha c^(1/alpha))^-1 int_0^1 q ln q (1 + q ln q - q)^((1-alpha)/alpha) dq = 7/54 for alpha = 1/2, c = 1.
    let exact = 7.0 / 54.0;
    let st = uniform_op2()?;
    let mut msgs = vec![format!("closed form {exact:.8}, solver {:.8}", st.payoff)];
    let mut ok = (st.payoff - exact).abs() <= 1e-6;
    for n in [16usize, 32, 64] {
        let o = solver(oracle_op2(&LightProfile::full_sun(), &p, &Oracle2Config { segments: n, ..Oracle2Config::default() }))?;
        ok &= o.payoff <= st.payoff + 1e-9;
        if n == 64 {
            let gap = (exact - o.payoff) / exact;
            ok &= gap <= 0.02;
            msgs.push(format!("oracle(64) {:.8} (gap {:.3}%)", o.payoff, 100.0 * gap));
        } else {
            msgs.push(format!("oracle({n}) {:.8}", o.payoff));
        }
    }
    check(ok, msgs.join(", "))
}

fn criterion_6() -> Outcome {
    let p = ModelParams { ell: 1.2, ..ModelParams::default() };
    let r = solver(stemlight::model1::find_nonuniqueness_epsilon(&p, 512))?;
    let e1 = 1.0 - (-1.0f64).exp();
    let s1 = 1.2 * e1 * r.epsilon_hat;
    let c = (r.alpha - FRAC_PI_4).cos();
    // g = G / sin(theta) integrated over y in [0, 1] under I = eps, then full sun above
    let s2 = (1.0 - (-1.0 / c).exp()) * c * r.epsilon_hat / r.alpha.sin() + (1.2 - 1.0 / r.alpha.sin()) * e1;
    let fb = r.shapes.iter().map(|s| s.feedback_residual(&p)).fold(0.0, f64::max);
    let ok = r.epsilon_hat > 0.0
        && r.epsilon_hat < r.epsilon1
        && (r.payoff1 - r.payoff2).abs() <= 1e-10
        && (r.payoff1 - s1).abs() <= 1e-12
        && (r.payoff2 - s2).abs() <= 1e-10
        && fb <= 1e-8;
    check(
        ok,
        format!(
            "eps_hat = {:.9} in ]0, {:.6}[, S1 = {:.12}, |S1 - S2| = {:.1e}, feedback residual {fb:.1e}",
            r.epsilon_hat,
            r.epsilon1,
            r.payoff1,
            (r.payoff1 - r.payoff2).abs()
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut msgs = Vec::new();
    for rk in [0.01, 0.05, 0.1] {
        let p = ModelParams { rho: rk, ..ModelParams::default() };
        let res = solver(solve_equilibrium1(&p, &Eq1Config { verify: false, ..Eq1Config::default() }))?;
        let rep = solver(verify_fixed_point(&res, &p, Default::default()))?;
        let nc = solver(necessary_condition_residual(&res, &p))?;
        ok &= rep.refit <= 1e-6 && rep.map <= 1e-6 && nc <= 1e-7;
        msgs.push(format!("rk={rk}: refit {:.1e} map {:.1e} nc {nc:.1e}", rep.refit, rep.map));
    }
    check(ok, msgs.join("; "))
}

fn sup_gap(a: &Equilibrium2Result, b: &Equilibrium2Result) -> f64 {
    let top = a.h.max(b.h) * 1.05;
    uniform_grid(0.0, top, 2001).iter().map(|&y| (a.i_star_at(y) - b.i_star_at(y)).abs()).fold(0.0, f64::max)
}

fn criterion_8() -> Outcome {
    let h0 = 2f64.sqrt() / 4.0;
    let mut ok = true;
    let mut msgs = Vec::new();
    for rho0 in [0.001, 0.01] {
        let p = ModelParams { rho0, ..ModelParams::default() };
        let d = solver(solve_equilibrium_direct(&p, &eq2_cfg()))?;
        let f = solver(solve_equilibrium_fixed_point(&p, &eq2_cfg()))?;
        let rep = solver(verify_equilibrium(&d, &p, &op2_cfg()))?;
        let di = sup_gap(&d, &f);
        let dh = (d.h - f.h).abs();
        ok &= di <= 1e-5 && dh <= 1e-5 && rep.roots == 1 && d.stem.roots.len() == 1 && f.stem.roots.len() == 1;
        if rho0 == 0.001 {
            ok &= (d.h / h0 - 1.0).abs() <= 0.05;
        }
        msgs.push(format!("rho0={rho0}: h {:.6}, |dI*| {di:.1e}, |dh| {dh:.1e}, roots {}", d.h, rep.roots));
    }
    check(ok, msgs.join("; "))
}

fn criterion_9() -> Outcome {
    let prof = LightProfile::uniform_canopy(0.8, 1.0).unwrap();
    let mut ok = true;
    let mut msgs = Vec::new();
    for alpha in [0.3, 0.5, 0.7] {
        let p = ModelParams { alpha, ..ModelParams::default() };
        let cfg = op2_cfg();
        let st = solver(shoot_op2(&prof, &p, &cfg))?;
        if !(prof.derivative(st.h).map_err(|e| e.to_string())? > 0.0) {
            return Err(format!("I'(h) not positive at alpha = {alpha}"));
        }
        let depths: Vec<f64> = (0..20).map(|k| st.h * 1e-5 * 10f64.powf(2.0 * k as f64 / 19.0)).collect();
        let pq = solver(layer_samples(st.h, &depths, &prof, &p, &cfg))?;
        let lx: Vec<f64> = depths.iter().map(|d| d.ln()).collect();
        let lq: Vec<f64> = depths.iter().zip(&pq).map(|(d, (_, q))| (1.0 - q / prof.eval(st.h - d)).ln()).collect();
        let lp: Vec<f64> = pq.iter().map(|(pp, _)| pp.ln()).collect();
        let (a, b) = (alpha / (2.0 - alpha), 2.0 / (2.0 - alpha));
        let (sq, sp) = (slope(&lx, &lq), slope(&lx, &lp));
        ok &= (sq / a - 1.0).abs() <= 0.1 && (sp / b - 1.0).abs() <= 0.1;
        msgs.push(format!("alpha={alpha}: q {sq:.4} vs {a:.4}, p {sp:.4} vs {b:.4}"));
    }
    check(ok, msgs.join("; "))
}

fn criterion_10() -> Outcome {
    let p = ModelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failures = [0usize; 5];
    for _ in 0..100 {
        let prof = random_profile(&mut rng);
        let thetas: Vec<f64> = (0..16).map(|_| rng.gen_range(p.theta0..FRAC_PI_2)).collect();
        let r = rearrange_nonincreasing(&thetas);
        let same_length = (length_in_height(&r, 1.0) - length_in_height(&thetas, 1.0)).abs() < 1e-12;
        if !(same_length && payoff_in_height(&r, 1.0, &prof, &p) >= payoff_in_height(&thetas, 1.0, &prof, &p) - 1e-12) {
            failures[0] += 1;
        }
    }
    for _ in 0..100 {
        let prof = random_profile(&mut rng);
        let thetas: Vec<f64> = (0..12).map(|_| rng.gen_range(-PI..PI)).collect();
        let folded = fold_angles(&thetas, p.theta0);
        let inside = folded.iter().all(|&t| t >= p.theta0 - 1e-12 && t <= FRAC_PI_2 + 1e-12);
        if !(inside && payoff_op1(&folded, &prof, &p) >= payoff_op1(&thetas, &prof, &p) - 1e-12) {
            failures[1] += 1;
        }
    }
    for _ in 0..100 {
        let i = rng.gen_range(0.2..1.0);
        let pp = rng.gen_range(0.0..0.5);
        let q = i * rng.gen_range(0.05..0.95);
        let Ok(fb) = feedback_tu(i, pp, q, &p) else {
            failures[2] += 1;
            continue;
        };
        let h = 1e-6;
        let hd = |t: f64, u: f64| hamiltonian_density(t, u, i, pp, q, &p);
        let dt = (hd(fb.theta + h, fb.u) - hd(fb.theta - h, fb.u)) / (2.0 * h);
        let du = (hd(fb.theta, fb.u + h) - hd(fb.theta, fb.u - h)) / (2.0 * h);
        if dt.abs().max(du.abs()) > 1e-6 {
            failures[2] += 1;
        }
    }
    let op1 = Op1Config { grid: 256, scan_points: 200, ..Op1Config::default() };
    for _ in 0..100 {
        let prof = LightProfile::uniform_canopy(rng.gen_range(0.05..1.5), rng.gen_range(0.3..1.5)).unwrap();
        match solve_op1(&prof, &p, &op1) {
            Ok(sol) if sol.best().is_non_increasing() => {}
            _ => failures[3] += 1,
        }
    }
    let op2 = Op2Config { grid: 256, scan_points: 40, ..Op2Config::default() };
    for _ in 0..100 {
        let prof = LightProfile::uniform_canopy(rng.gen_range(0.05..1.5), rng.gen_range(0.2..1.5)).unwrap();
        let alpha = rng.gen_range(0.3..0.7);
        match shoot_op2(&prof, &ModelParams { alpha, ..p }, &op2) {
            Ok(st) if (1..st.ys.len()).all(|k| st.q[k] > 0.0 && st.q[k] <= st.intensity[k] * (1.0 + 1e-12)) => {}
            _ => failures[4] += 1,
        }
    }
    let total: usize = failures.iter().sum();
    check(
        total == 0,
        format!(
            "failures: rearrangement {}, fold {}, stationarity {}, monotone theta {}, q/I {} (100 cases each)",
            failures[0], failures[1], failures[2], failures[3], failures[4]
        ),
    )
}

fn criterion_11() -> Outcome {
    let p = ModelParams::default();
    let prof = LightProfile::uniform_canopy(0.25 / p.theta0.sin(), 0.6).unwrap();
    let grid = GridSpec::new((-1.0, 2.0), (-0.2, 1.4), 5, 6401).unwrap();
    let field = solver(LightField2D::stratified(&prof, grid, p.theta0))?;
    let sol = solver(solve_op3_single(&field, 0.0, &p, &Op3Config { points: 1601, ..Op3Config::default() }))?;
    let m1 = solver(solve_op1(&prof, &p, &Op1Config::default()))?;
    let best = m1.best();
    let err = (0..sol.s.len())
        .map(|k| (interp_linear(&best.ys, &best.theta, sol.y[k]) - sol.theta[k]).abs())
        .fold(0.0, f64::max);
    let mut ok = err <= 1e-4 && sol.stationarity_residual <= 1e-5;
    let mut msg = format!("stratified sup error {err:.2e}, stationarity {:.1e}", sol.stationarity_residual);

    let cfg = HalfLineConfig { scale: 0.01, n_xi: 31, nx: 160, ny: 64, ..HalfLineConfig::default() };
    let r = solver(halfline_relaxation(&p, &cfg))?;
    if r.converged {
        let base: Vec<f64> = r.family.theta.iter().map(|t| t[0]).collect();
        let worst_drop = base.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
        ok &= worst_drop <= 0.0;
        msg.push_str(&format!(
            "; half-line converged in {} iterations, theta(0, xi) from {:.6} to {:.6}, largest decrease {worst_drop:.2e}",
            r.log.len(),
            base[0],
            base[base.len() - 1]
        ));
    } else {
        msg.push_str(&format!("; half-line did not converge (last change {:.2e})", r.log.last().copied().unwrap_or(f64::NAN)));
    }
    check(ok, msg)
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("I=1 OP1 closed form", criterion_1),
        ("I=1 OP2 closed form", criterion_2),
        ("Hamiltonian first integral", criterion_3),
        ("OP1 oracle equivalence", criterion_4),
        ("OP2 oracle equivalence", criterion_5),
        ("non-uniqueness example", criterion_6),
        ("equilibrium 1 fixed point", criterion_7),
        ("equilibrium 2 consistency", criterion_8),
        ("terminal-layer exponents", criterion_9),
        ("property suites", criterion_10),
        ("spatial reduction", criterion_11),
    ];
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64();
        match &out {
            Ok(msg) => println!("criterion {:>2} PASS [{name}] {msg} ({secs:.1} s)", k + 1),
            Err(msg) => {
                println!("criterion {:>2} FAIL [{name}] {msg} ({secs:.1} s)", k + 1);
                failed.push(k + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
