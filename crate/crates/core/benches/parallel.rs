use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stemlight::lightfield::LightProfile;
use stemlight::model1::{oracle_op1, OracleConfig};
use stemlight::model2::{shoot_op2, Op2Config};
use stemlight::spatial::{halfline_density, light_from_family, DepositConfig, GridSpec, StemFamily};
use stemlight::{Exec, ModelParams};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn oracle(c: &mut Criterion) {
    let p = ModelParams::default();
    let prof = LightProfile::uniform_canopy(0.25 / p.theta0.sin(), 0.6).unwrap();
    let mut g = c.benchmark_group("oracle_op1_exhaustive");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = OracleConfig { segments: 5, grid: 9, exec, ..Default::default() };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| black_box(oracle_op1(&prof, &p, cfg).unwrap().payoff))
        });
    }
    g.finish();
}

fn shooting(c: &mut Criterion) {
    let p = ModelParams::default();
    let prof = LightProfile::full_sun();
    let mut g = c.benchmark_group("shoot_op2");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = Op2Config { grid: 512, exec, ..Default::default() };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| black_box(shoot_op2(&prof, &p, cfg).unwrap().h))
        });
    }
    g.finish();
}

fn light_field(c: &mut Criterion) {
    let p = ModelParams::default();
    let xis: Vec<f64> = (0..121).map(|k| 3.0 * k as f64 / 120.0).collect();
    let rb = xis.iter().map(|&x| halfline_density(x, 1.0)).collect();
    let fam = StemFamily::straight(xis, rb, p.ell, p.kappa, 201, p.theta0).unwrap();
    let grid = GridSpec::new((-1.0, 4.5), (0.0, 1.2), 256, 128).unwrap();
    let mut g = c.benchmark_group("light_from_family");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| black_box(light_from_family(&fam, grid, p.theta0, &DepositConfig::default(), exec).unwrap().0.values[0]))
        });
    }
    g.finish();
}

criterion_group!(benches, oracle, shooting, light_field);
criterion_main!(benches);
