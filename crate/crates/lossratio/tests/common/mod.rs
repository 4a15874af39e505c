//! Shared numerical oracles for the integration tests: Gauss-Legendre
//! quadrature, batch-means Monte Carlo standard errors, finite differences,
//! and random-state generators. Everything here is independent of the
//! sampler code paths it is used to check.

#![allow(dead_code)]

use rand::Rng;

use lossratio::model::{ModelId, ObservationSeries, ParamState};

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre polynomial.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 2);
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order {
        // Chebyshev-based starting guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        for _ in 0..100 {
            // Evaluate P_n(x) and P'_n(x) by the three-term recurrence.
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=order {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let dp = n * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (mut q0, mut q1) = (1.0f64, x);
                for k in 2..=order {
                    let kf = k as f64;
                    let q2 = ((2.0 * kf - 1.0) * x * q1 - (kf - 1.0) * q0) / kf;
                    q0 = q1;
                    q1 = q2;
                }
                let dq = n * (x * q1 - q0) / (x * x - 1.0);
                weights[i] = 2.0 / ((1.0 - x * x) * dq * dq);
                break;
            }
        }
        nodes[i] = x;
    }
    (nodes, weights)
}

/// Composite Gauss-Legendre integral of `f` over [a, b].
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + h * p as f64;
        let mid = lo + 0.5 * h;
        for (x, w) in nodes.iter().zip(&weights) {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    total * 0.5 * h
}

/// Zeroth, first and second moments of exp(logf) over [a, b], stabilized by
/// subtracting the max log value. Returns (log normalizer, mean, variance).
pub fn log_density_moments<F: Fn(f64) -> f64>(
    logf: F,
    a: f64,
    b: f64,
    panels: usize,
    order: usize,
) -> (f64, f64, f64) {
    let probe: Vec<f64> = (0..=400).map(|i| a + (b - a) * i as f64 / 400.0).collect();
    let m = probe.iter().map(|&x| logf(x)).fold(f64::NEG_INFINITY, f64::max);
    let z0 = integrate(|x| (logf(x) - m).exp(), a, b, panels, order);
    let z1 = integrate(|x| x * (logf(x) - m).exp(), a, b, panels, order);
    let mean = z1 / z0;
    let z2 = integrate(|x| (x - mean).powi(2) * (logf(x) - m).exp(), a, b, panels, order);
    (m + z0.ln(), mean, z2 / z0)
}

/// Batch-means Monte Carlo standard error of the sample mean.
pub fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    assert!(batches >= 2 && xs.len() >= batches);
    let per = xs.len() / batches;
    let used = per * batches;
    let mean = xs[..used].iter().sum::<f64>() / used as f64;
    let mut var_of_means = 0.0;
    for b in 0..batches {
        let bm = xs[b * per..(b + 1) * per].iter().sum::<f64>() / per as f64;
        var_of_means += (bm - mean) * (bm - mean);
    }
    var_of_means /= (batches - 1) as f64;
    (mean, (var_of_means / batches as f64).sqrt())
}

/// Central finite-difference gradient of a 3-argument scalar function.
pub fn central_gradient<F: Fn(&[f64; 3]) -> f64>(f: F, x: &[f64; 3], h: f64) -> [f64; 3] {
    let mut g = [0.0; 3];
    for i in 0..3 {
        let mut xp = *x;
        let mut xm = *x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

/// A fixed 7-year series with magnitudes like the motivating data.
pub fn bench_series() -> ObservationSeries {
    ObservationSeries::load_series(&[
        (1, 3.2, 110.0),
        (2, 3.6, 120.0),
        (3, 2.9, 100.0),
        (4, 3.1, 105.0),
        (5, 3.4, 118.0),
        (6, 3.0, 112.0),
        (7, 3.3, 115.0),
    ])
    .unwrap()
}

/// Random-but-plausible parameter state for slice/oracle checks.
pub fn random_state<R: Rng + ?Sized>(model: ModelId, n: usize, rng: &mut R) -> ParamState {
    let alpha: Vec<f64> = (0..n).map(|_| 0.03 + 0.05 * (rng.gen::<f64>() - 0.5)).collect();
    let a0 = 0.03 + 0.05 * (rng.gen::<f64>() - 0.5);
    let rho = rng.gen_range(-0.3..1.2);
    let eta = 0.03 + 0.05 * (rng.gen::<f64>() - 0.5);
    let sigma = (rng.gen_range(3.0f64..7.5)).exp();
    let tau = (rng.gen_range(3.0f64..7.5)).exp();
    match model {
        ModelId::M1 => ParamState::new_m1(a0, alpha, rho, eta, sigma, tau),
        ModelId::M2 => ParamState::new_m2(a0, alpha, sigma, tau),
        ModelId::M3 => ParamState::new_m3(alpha, eta, sigma, tau),
    }
}

#[cfg(test)]
mod self_checks {
    use super::*;

    #[test]
    fn quadrature_integrates_known_functions() {
        // Polynomial: exact for Gauss-Legendre.
        let p = integrate(|x| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, 4, 8);
        assert!((p - (20.0 - 8.0 + 4.0)).abs() < 1e-12, "{p}");
        // Standard normal mass.
        let z = integrate(
            |x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            -10.0,
            10.0,
            20,
            20,
        );
        assert!((z - 1.0).abs() < 1e-12, "{z}");
    }

    #[test]
    fn moments_of_a_shifted_normal() {
        let (_, mean, var) = log_density_moments(
            |x: f64| -0.5 * (x - 1.5) * (x - 1.5) / 0.25,
            -10.0,
            10.0,
            30,
            20,
        );
        assert!((mean - 1.5).abs() < 1e-10);
        assert!((var - 0.25).abs() < 1e-10);
    }
}
