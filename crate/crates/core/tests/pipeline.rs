//! Cross-module consistency: equilibria fed back into the single-plant solvers.

use stemlight::equilibrium1::{solve_equilibrium1, Eq1Config};
use stemlight::equilibrium2::{solve_equilibrium_direct, solve_equilibrium_fixed_point, Eq2Config};
use stemlight::model1::{payoff_in_height, solve_op1, Op1Config};
use stemlight::model2::{shoot_op2, uniform_height, Op2Config};
use stemlight::spatial::{solve_op3_single, GridSpec, LightField2D, Op3Config};
use stemlight::{Exec, LightProfile, ModelParams};

#[test]
fn eq1_light_is_self_consistent() {
    let p = ModelParams { rho: 0.6, ..ModelParams::default() };
    let eq = solve_equilibrium1(&p, &Eq1Config { verify: false, ..Eq1Config::default() }).unwrap();
    let best = solve_op1(&eq.profile, &p, &Op1Config::default()).unwrap();
    assert!((best.best().h - eq.h_star).abs() < 1e-6, "{} vs {}", best.best().h, eq.h_star);
    // the equilibrium stem beats a straight stem of the same length under its own light
    let n = eq.ys.len();
    let straight_h = p.ell * p.theta0.sin();
    let straight = payoff_in_height(&vec![p.theta0; n], straight_h, &eq.profile, &p);
    assert!(best.best().payoff >= straight - 1e-9);
}

#[test]
fn eq2_light_reproduces_its_stem() {
    let p = ModelParams { rho0: 0.02, ..ModelParams::default() };
    let cfg = Eq2Config { op2: Op2Config { grid: 1024, ..Op2Config::default() }, ..Eq2Config::default() };
    let direct = solve_equilibrium_direct(&p, &cfg).unwrap();
    let fixed = solve_equilibrium_fixed_point(&p, &cfg).unwrap();
    assert!((direct.h - fixed.h).abs() < 1e-5, "{} vs {}", direct.h, fixed.h);
    let reply = shoot_op2(&direct.i_star, &p, &cfg.op2).unwrap();
    assert!((reply.h - direct.h).abs() < 1e-6);
    // competing for light pushes the stem above the full-sun optimum
    assert!(direct.h > uniform_height(&p));
}

#[test]
fn sequential_and_parallel_agree() {
    let p = ModelParams { theta0: 1.0, ..ModelParams::default() };
    let light = LightProfile::uniform_canopy(1.2, 0.7).unwrap();
    let run = |exec| solve_op1(&light, &p, &Op1Config { exec, ..Op1Config::default() }).unwrap();
    let (a, b) = (run(Exec::Sequential), run(Exec::Parallel));
    assert_eq!(a.candidates.len(), b.candidates.len());
    assert_eq!(a.best().h.to_bits(), b.best().h.to_bits());
    assert_eq!(a.best().theta, b.best().theta);
}

#[test]
fn uniform_field_keeps_planar_stem_straight() {
    let p = ModelParams { theta0: 1.1, ..ModelParams::default() };
    let grid = GridSpec::new((-2.0, 2.0), (-0.2, 1.5), 33, 401).unwrap();
    let field = LightField2D::uniform(grid, p.theta0, 0.7).unwrap();
    let sol = solve_op3_single(&field, 0.0, &p, &Op3Config::default()).unwrap();
    assert!(sol.converged);
    assert!(sol.theta.iter().all(|t| (t - p.theta0).abs() < 1e-8));
}
