//! Dispatches a scenario to the solvers and writes its artifacts.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use stemlight::equilibrium1::{necessary_condition_residual, solve_equilibrium1, Eq1Config};
use stemlight::equilibrium2::{
    solve_equilibrium_direct, solve_equilibrium_fixed_point, verify_equilibrium, Eq2Config, Equilibrium2Result,
};
use stemlight::model1::{find_nonuniqueness_epsilon, oracle_op1, solve_op1, Op1Config, OracleConfig, StemShape1};
use stemlight::model2::{oracle_op2, shoot_op2, Op2Config, Oracle2Config, StemState2};
use stemlight::spatial::{
    halfline_relaxation, solve_op3_single, GridSpec, HalfLineConfig, LightField2D, Op3Config,
};
use stemlight::{Exec, ModelParams};

use crate::artifacts::{num, Artifacts, FileEntry};
use crate::error::CliError;
use crate::scenario::{set_param, Eq2Method, FieldKind, Kind, Scenario, SCHEMA_VERSION};

/// Options that do not belong to the scenario itself.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub quiet: bool,
    /// `--grid` / `--tol` overrides, recorded in the manifest.
    pub grid: Option<usize>,
    pub tol: Option<f64>,
}

#[derive(Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub files: Vec<FileEntry>,
    /// False only for a half-line relaxation that stopped before its tolerance.
    pub converged: bool,
}

struct Outcome {
    converged: bool,
    residuals: Map<String, Value>,
}

impl Outcome {
    fn new(pairs: &[(&str, f64)]) -> Self {
        let residuals = pairs.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
        Outcome { converged: true, residuals }
    }
}

fn say(opts: &RunOptions, msg: impl AsRef<str>) {
    if !opts.quiet {
        eprintln!("stemlight: {}", msg.as_ref());
    }
}

/// Runs `sc`, writing artifacts into `out`.
pub fn run(sc: &Scenario, out: &Path, opts: &RunOptions) -> Result<RunReport, CliError> {
    let mut art = Artifacts::create(out)?;
    say(opts, format!("running {} into {}", sc.kind.name(), out.display()));
    let outcome = match sc.kind {
        Kind::Op1 if sc.nonuniqueness => run_nonuniqueness(sc, &mut art)?,
        Kind::Op1 => run_op1(sc, &mut art)?,
        Kind::Eq1 => run_eq1(sc, &sc.params, &mut art)?,
        Kind::Op2 => run_op2(sc, &mut art)?,
        Kind::Eq2 => run_eq2(sc, &mut art)?,
        Kind::Op3 => run_op3(sc, &mut art)?,
        Kind::Halfline => run_halfline(sc, &mut art)?,
        Kind::Sweep => run_sweep(sc, &mut art)?,
    };
    let mut m = Map::new();
    m.insert("tool".into(), json!("stemlight"));
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    m.insert("kind".into(), json!(sc.kind.name()));
    m.insert("scenario_sha256".into(), json!(sc.source_sha256));
    m.insert("seed".into(), json!(sc.seed));
    m.insert("overrides".into(), json!({ "grid": opts.grid, "tol": opts.tol }));
    m.insert("params".into(), serde_json::to_value(sc.params).expect("params serialize"));
    m.insert("converged".into(), json!(outcome.converged));
    m.insert("residuals".into(), Value::Object(outcome.residuals));
    let files = art.finish(m)?;
    say(opts, format!("wrote {} files and manifest.json", files.len()));
    Ok(RunReport { dir: out.to_path_buf(), files, converged: outcome.converged })
}

fn op1_config(sc: &Scenario) -> Op1Config {
    let d = Op1Config::default();
    Op1Config {
        grid: sc.solver.grid.unwrap_or(d.grid),
        scan_points: sc.solver.scan_points.unwrap_or(d.scan_points),
        tol: sc.solver.tol.unwrap_or(d.tol),
        exec: sc.solver.exec(),
    }
}

fn op2_config(sc: &Scenario) -> Op2Config {
    let d = Op2Config::default();
    Op2Config {
        grid: sc.solver.grid.unwrap_or(d.grid),
        scan_points: sc.solver.scan_points.unwrap_or(d.scan_points),
        tol: sc.solver.tol.unwrap_or(d.tol),
        exec: sc.solver.exec(),
        ..d
    }
}

fn eq2_config(sc: &Scenario) -> Eq2Config {
    let d = Eq2Config::default();
    Eq2Config {
        damping: sc.solver.damping.unwrap_or(d.damping),
        max_iter: sc.solver.max_iter.unwrap_or(d.max_iter),
        tol: sc.solver.tol.unwrap_or(d.tol),
        grid: d.grid,
        op2: Op2Config { tol: d.op2.tol, ..op2_config(sc) },
    }
}

fn shape1_rows(s: &StemShape1, branch: Option<usize>) -> impl Iterator<Item = Vec<String>> + '_ {
    (0..s.ys.len()).map(move |k| {
        let mut row = Vec::with_capacity(5);
        if let Some(b) = branch {
            row.push(b.to_string());
        }
        row.extend([num(s.ys[k]), num(s.x[k]), num(s.theta[k]), num(s.intensity[k])]);
        row
    })
}

fn shape1_json(s: &StemShape1, p: &ModelParams) -> Value {
    json!({
        "h": s.h,
        "lambda": s.lambda,
        "payoff": s.payoff,
        "length": s.length,
        "feedback_residual": s.feedback_residual(p),
        "theta_non_increasing": s.is_non_increasing(),
    })
}

fn run_op1(sc: &Scenario, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &sc.params;
    let sol = solve_op1(&sc.light, p, &op1_config(sc))?;
    let best = sol.best();
    art.csv("shape.csv", &["y", "x", "theta", "I"], shape1_rows(best, None))?;
    let mut summary = json!({
        "kind": "op1",
        "best": shape1_json(best, p),
        "tie": sol.tie,
        "candidates": sol.candidates.iter().map(|c| json!({ "h": c.h, "payoff": c.payoff })).collect::<Vec<_>>(),
    });
    if let Some(o) = &sc.oracle {
        let d = OracleConfig::default();
        let cfg = OracleConfig {
            segments: o.segments,
            grid: o.grid.unwrap_or(d.grid),
            descent: o.descent,
            random_starts: o.random_starts.unwrap_or(d.random_starts),
            seed: sc.seed,
            exec: sc.solver.exec(),
            ..d
        };
        let r = oracle_op1(&sc.light, p, &cfg)?;
        summary["oracle"] = json!({
            "segments": o.segments,
            "payoff": r.payoff,
            "exhaustive": r.exhaustive,
            "relative_gap": (best.payoff - r.payoff) / best.payoff,
            "theta_of_s": r.theta_of_s,
        });
    }
    art.json("summary.json", &summary)?;
    Ok(Outcome::new(&[("feedback", best.feedback_residual(p))]))
}

fn run_nonuniqueness(sc: &Scenario, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &sc.params;
    let grid = op1_config(sc).grid;
    let r = find_nonuniqueness_epsilon(p, grid)?;
    let doc = json!({
        "epsilon_hat": r.epsilon_hat,
        "epsilon1": r.epsilon1,
        "payoff_straight": r.payoff1,
        "payoff_crossing": r.payoff2,
        "payoff_gap": (r.payoff1 - r.payoff2).abs(),
        "h_straight": r.h1,
        "h_crossing": r.h2,
        "lower_angle": r.alpha,
    });
    art.json("nonuniqueness.json", &doc)?;
    let rows = shape1_rows(&r.shapes[0], Some(1)).chain(shape1_rows(&r.shapes[1], Some(2)));
    art.csv("shape.csv", &["branch", "y", "x", "theta", "I"], rows)?;
    let fb = r.shapes.iter().map(|s| s.feedback_residual(p)).fold(0.0, f64::max);
    art.json(
        "summary.json",
        &json!({
            "kind": "op1",
            "example": "nonuniqueness",
            "branches": [shape1_json(&r.shapes[0], p), shape1_json(&r.shapes[1], p)],
        }),
    )?;
    Ok(Outcome::new(&[("payoff_gap", (r.payoff1 - r.payoff2).abs()), ("feedback", fb)]))
}

fn run_eq1(sc: &Scenario, p: &ModelParams, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let d = Eq1Config::default();
    let cfg = Eq1Config { grid: sc.solver.grid.unwrap_or(d.grid), verify: true, exec: sc.solver.exec() };
    let res = solve_equilibrium1(p, &cfg)?;
    let nc = necessary_condition_residual(&res, p)?;
    let rows = (0..res.ys.len())
        .map(|k| vec![num(res.ys[k]), num(res.x[k]), num(res.theta_star[k]), num(res.i_star[k])]);
    art.csv("shape.csv", &["y", "x", "theta", "I"], rows)?;
    art.json(
        "summary.json",
        &json!({
            "kind": "eq1",
            "h": res.h_star,
            "rho_kappa": res.rho_kappa,
            "uniqueness_ok": res.uniqueness_ok,
            "uniqueness_margin": res.uniqueness_margin,
            "residual_refit": res.residual_refit,
            "residual_map": res.residual_map,
            "necessary_condition": nc,
        }),
    )?;
    Ok(Outcome::new(&[("refit", res.residual_refit), ("map", res.residual_map), ("necessary_condition", nc)]))
}

fn stem2_csv(st: &StemState2, art: &mut Artifacts) -> Result<(), CliError> {
    let rows = (0..st.ys.len()).map(|k| {
        vec![
            num(st.ys[k]),
            num(st.x[k]),
            num(st.theta[k]),
            num(st.u[k]),
            num(st.p[k]),
            num(st.q[k]),
            num(st.intensity[k]),
            num(st.z[k]),
        ]
    });
    art.csv("shape.csv", &["y", "x", "theta", "u", "p", "q", "I", "z"], rows)
}

fn stem2_json(st: &StemState2) -> Value {
    json!({
        "h": st.h,
        "length": st.length,
        "light": st.light,
        "transport_cost": st.transport_cost,
        "payoff": st.payoff,
        "hamiltonian_max_abs": st.hamiltonian_max_abs,
        "residual_q0": st.residual_q0,
        "mass_integral": st.mass_integral,
        "z0_first_integral": st.z0_first_integral,
        "layer_check": st.layer_check,
        "theta_max": st.theta_max,
        "roots": st.roots,
        "slope_within_delta": st.slope_within_delta,
    })
}

fn run_op2(sc: &Scenario, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &sc.params;
    let st = shoot_op2(&sc.light, p, &op2_config(sc))?;
    stem2_csv(&st, art)?;
    let mut summary = json!({ "kind": "op2", "stem": stem2_json(&st) });
    if let Some(o) = &sc.oracle {
        let d = Oracle2Config::default();
        let cfg = Oracle2Config {
            segments: o.segments,
            random_starts: o.random_starts.unwrap_or(d.random_starts),
            seed: sc.seed,
            exec: sc.solver.exec(),
            ..d
        };
        let r = oracle_op2(&sc.light, p, &cfg)?;
        summary["oracle"] = json!({
            "segments": o.segments,
            "payoff": r.payoff,
            "length": r.length,
            "relative_gap": (st.payoff - r.payoff) / st.payoff,
            "thetas": r.thetas,
            "us": r.us,
        });
    }
    art.json("summary.json", &summary)?;
    Ok(Outcome::new(&[("hamiltonian", st.hamiltonian_max_abs), ("q0", st.residual_q0.abs())]))
}

fn solve_eq2(sc: &Scenario, p: &ModelParams) -> Result<(Equilibrium2Result, Eq2Config), CliError> {
    let cfg = eq2_config(sc);
    let res = match sc.solver.method.unwrap_or(Eq2Method::Direct) {
        Eq2Method::Direct => solve_equilibrium_direct(p, &cfg)?,
        Eq2Method::FixedPoint => solve_equilibrium_fixed_point(p, &cfg)?,
    };
    Ok((res, cfg))
}

fn run_eq2(sc: &Scenario, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &sc.params;
    let (res, cfg) = solve_eq2(sc, p)?;
    let rep = verify_equilibrium(&res, p, &cfg.op2)?;
    stem2_csv(&res.stem, art)?;
    art.json(
        "summary.json",
        &json!({
            "kind": "eq2",
            "method": res.method,
            "iterations": res.iterations,
            "h": res.h,
            "residual_map": res.residual_map,
            "residual_refit": res.residual_refit,
            "verify": rep,
            "multiple_roots": res.multiple_roots,
            "class_f_ok": res.class_f_ok,
            "ratio_slope_floor": res.ratio_slope_floor,
            "stem": stem2_json(&res.stem),
        }),
    )?;
    Ok(Outcome::new(&[
        ("map", rep.residual_map),
        ("refit", rep.residual_refit),
        ("hamiltonian", res.stem.hamiltonian_max_abs),
    ]))
}

fn field_csv(field: &LightField2D, art: &mut Artifacts) -> Result<(), CliError> {
    let g = field.grid;
    let rows = (0..g.ny).flat_map(|j| (0..g.nx).map(move |i| (i, j))).map(|(i, j)| {
        vec![num(g.x(i)), num(g.y(j)), num(field.values[j * g.nx + i])]
    });
    art.csv("field.csv", &["x", "y", "I"], rows)
}

fn run_op3(sc: &Scenario, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let p = &sc.params;
    let f = sc.field.as_ref().expect("validated");
    let grid = GridSpec::new((f.x[0], f.x[1]), (f.y[0], f.y[1]), f.nx, f.ny)?;
    let field = match f.kind {
        FieldKind::Stratified => LightField2D::stratified(&sc.light, grid, p.theta0)?,
        FieldKind::Uniform => LightField2D::uniform(grid, p.theta0, f.value.expect("validated"))?,
        FieldKind::LinearX => {
            let (a, b) = (f.base.expect("validated"), f.slope.expect("validated"));
            LightField2D::from_fn(grid, p.theta0, |x, _| (a + b * x).clamp(0.0, 1.0), sc.solver.exec())?
        }
    };
    let d = Op3Config::default();
    let cfg = Op3Config {
        points: sc.solver.points.or(sc.solver.grid).unwrap_or(d.points),
        relaxation: sc.solver.relaxation.unwrap_or(d.relaxation),
        max_sweeps: sc.solver.max_sweeps.unwrap_or(d.max_sweeps),
        tol: sc.solver.tol.unwrap_or(d.tol),
        ..d
    };
    let sol = solve_op3_single(&field, f.root, p, &cfg)?;
    let rows = (0..sol.s.len()).map(|k| {
        vec![num(sol.s[k]), num(sol.x[k]), num(sol.y[k]), num(sol.theta[k]), num(sol.p1[k]), num(sol.p2[k])]
    });
    art.csv("stem.csv", &["s", "x", "y", "theta", "p1", "p2"], rows)?;
    field_csv(&field, art)?;
    art.json(
        "summary.json",
        &json!({
            "kind": "op3",
            "root": sol.xi,
            "sweeps": sol.sweeps,
            "change": sol.change,
            "stationarity_residual": sol.stationarity_residual,
            "payoff": sol.payoff,
            "leaves_cone": sol.leaves_cone,
        }),
    )?;
    Ok(Outcome::new(&[("stationarity", sol.stationarity_residual), ("change", sol.change)]))
}

fn run_halfline(sc: &Scenario, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let h = &sc.halfline;
    let d = HalfLineConfig::default();
    let nx = h.nx.or(sc.solver.grid).unwrap_or(d.nx);
    let cfg = HalfLineConfig {
        b: h.b.unwrap_or(d.b),
        scale: h.scale.unwrap_or(d.scale),
        xi_max: h.xi_max.unwrap_or(d.xi_max),
        n_xi: h.n_xi.unwrap_or(d.n_xi),
        nx,
        ny: h.ny.unwrap_or(if h.nx.is_none() && sc.solver.grid.is_some() { (nx / 2).max(2) } else { d.ny }),
        iterations: h.iterations.or(sc.solver.max_iter).unwrap_or(d.iterations),
        relaxation: h.relaxation.unwrap_or(d.relaxation),
        tol: h.tol.or(sc.solver.tol).unwrap_or(d.tol),
        op3: Op3Config { points: h.points.or(sc.solver.points).unwrap_or(d.op3.points), ..d.op3 },
        exec: sc.solver.exec(),
        ..d
    };
    let r = halfline_relaxation(&sc.params, &cfg)?;
    let fam = &r.family;
    let rows = (0..fam.xis.len()).flat_map(|j| {
        (0..fam.s.len()).map(move |k| {
            vec![num(fam.xis[j]), num(fam.s[k]), num(fam.x[j][k]), num(fam.y[j][k]), num(fam.theta[j][k])]
        })
    });
    art.csv("family.csv", &["xi", "s", "x", "y", "theta"], rows)?;
    field_csv(&r.field, art)?;
    art.csv(
        "log.csv",
        &["iteration", "change"],
        r.log.iter().enumerate().map(|(k, c)| vec![(k + 1).to_string(), num(*c)]),
    )?;
    let base: Vec<f64> = fam.theta.iter().map(|t| t[0]).collect();
    let largest_decrease = base.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    art.json(
        "summary.json",
        &json!({
            "kind": "halfline",
            "converged": r.converged,
            "iterations": r.log.len(),
            "last_change": r.log.last(),
            "base_angle": base,
            "base_angle_largest_decrease": largest_decrease,
            "scale": cfg.scale,
            "b": cfg.b,
        }),
    )?;
    let mut o = Outcome::new(&[("last_change", r.log.last().copied().unwrap_or(f64::NAN))]);
    o.converged = r.converged;
    Ok(o)
}

fn run_sweep(sc: &Scenario, art: &mut Artifacts) -> Result<Outcome, CliError> {
    let sw = sc.sweep.as_ref().expect("validated");
    let params: Vec<ModelParams> = sw
        .values
        .iter()
        .map(|&v| {
            let mut p = sc.params;
            set_param(&mut p, &sw.parameter, v).map(|_| p)
        })
        .collect::<Result<_, _>>()?;
    // independent runs fan out; the inner solvers stay sequential
    let inner = Scenario { solver: crate::scenario::SolverSpec { parallel: Some(false), ..sc.solver.clone() }, ..sc.clone() };
    let rows: Vec<Result<(f64, f64), CliError>> = Exec::default().map(&params, |p| match sw.kind {
        Kind::Op1 => solve_op1(&inner.light, p, &op1_config(&inner)).map(|s| (s.best().h, s.best().payoff)).map_err(Into::into),
        Kind::Op2 => shoot_op2(&inner.light, p, &op2_config(&inner)).map(|s| (s.h, s.payoff)).map_err(Into::into),
        Kind::Eq1 => {
            let d = Eq1Config::default();
            let cfg = Eq1Config { grid: inner.solver.grid.unwrap_or(d.grid), verify: true, exec: Exec::Sequential };
            solve_equilibrium1(p, &cfg).map(|r| (r.h_star, r.residual_map)).map_err(Into::into)
        }
        Kind::Eq2 => solve_eq2(&inner, p).map(|(r, _)| (r.h, r.residual_map)),
        _ => unreachable!("validated"),
    });
    let rows: Vec<(f64, f64)> = rows.into_iter().collect::<Result<_, _>>()?;
    let third = match sw.kind {
        Kind::Op1 | Kind::Op2 => "payoff",
        _ => "residual_map",
    };
    art.csv(
        "sweep.csv",
        &[sw.parameter.as_str(), "h", third],
        sw.values.iter().zip(&rows).map(|(v, (h, r))| vec![num(*v), num(*h), num(*r)]),
    )?;
    art.json(
        "summary.json",
        &json!({
            "kind": "sweep",
            "base_kind": sw.kind.name(),
            "parameter": sw.parameter,
            "values": sw.values,
            "h": rows.iter().map(|r| r.0).collect::<Vec<_>>(),
            third: rows.iter().map(|r| r.1).collect::<Vec<_>>(),
        }),
    )?;
    let worst = match sw.kind {
        Kind::Eq1 | Kind::Eq2 => rows.iter().map(|r| r.1).fold(0.0, f64::max),
        _ => 0.0,
    };
    Ok(Outcome::new(&[("map", worst)]))
}
