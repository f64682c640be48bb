/// `n` equispaced points covering `[a, b]` inclusive (`n >= 2`).
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "grid needs at least two points");
    let step = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { b } else { a + step * i as f64 })
        .collect()
}

/// Cumulative integral `F[i] = \int_{x_0}^{x_i} f` of uniformly spaced samples.
///
/// Interior intervals use the four-point rule
/// `dx/24 (-f[i-1] + 13 f[i] + 13 f[i+1] - f[i+2])`, the two end intervals the
/// matching one-sided rule, so the result is fourth-order accurate.
pub fn cumulative_uniform(dx: f64, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n < 4 {
        for i in 1..n {
            out[i] = out[i - 1] + 0.5 * dx * (f[i - 1] + f[i]);
        }
        return out;
    }
    for i in 0..n - 1 {
        let piece = if i == 0 {
            dx / 24.0 * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
        } else if i == n - 2 {
            dx / 24.0 * (9.0 * f[n - 1] + 19.0 * f[n - 2] - 5.0 * f[n - 3] + f[n - 4])
        } else {
            dx / 24.0 * (-f[i - 1] + 13.0 * f[i] + 13.0 * f[i + 1] - f[i + 2])
        };
        out[i + 1] = out[i] + piece;
    }
    out
}

/// Piecewise-linear interpolation on sorted abscissae, flat outside.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let i = xs.partition_point(|&v| v <= x).saturating_sub(1).min(n - 2);
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_is_fourth_order_on_cubic() {
        let xs = uniform_grid(0.0, 1.0, 11);
        let f: Vec<f64> = xs.iter().map(|x| x * x * x).collect();
        let c = cumulative_uniform(0.1, &f);
        for (x, v) in xs.iter().zip(&c) {
            assert!((v - x.powi(4) / 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_interp_flat_extension() {
        let xs = [0.0, 1.0];
        let ys = [0.9, 1.0];
        assert!((interp_linear(&xs, &ys, 0.5) - 0.95).abs() < 1e-15);
        assert_eq!(interp_linear(&xs, &ys, 3.0), 1.0);
    }
}
