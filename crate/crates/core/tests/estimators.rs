mod common;

use common::{column_mean_se, free_indices, mean_se, random_phi, random_train};
use ndarray::Array2;
use poglm::estimators::{
    elbo_hat, enumerate_elbo, estimate, grad_theta, pathwise_grad_phi, score_grad_phi, PhiEstimator,
};
use poglm::math::special::{ln_factorial, sigmoid, softplus, softplus_inv};
use poglm::model::convolve_history;
use poglm::{DistKind, GenerativeParams, HiddenDist, ModelConfig, Scheme, SeededRng, SpikeTrain, VariationalParams};

#[test]
fn monte_carlo_elbo_matches_enumeration_and_respects_the_bound() {
    let mut rng = SeededRng::new(11, 0);
    let cfg = ModelConfig::default();
    let dist = HiddenDist::new(DistKind::Categorical, 3, 0.5).unwrap();
    let theta = GenerativeParams::random(1, 1, 1.0, 0.5, &mut rng).unwrap();
    let x = random_train(1, 3, 2, &mut rng);
    let phi = random_phi(Scheme::Forward, 1, 1, 3, -0.5, 0.5, &mut rng);
    let exact = enumerate_elbo(&theta, &phi, &x, &dist, &cfg, 3).unwrap();

    let draws: Vec<f64> = (0..100_000)
        .map(|_| elbo_hat(&theta, &phi, &x, &dist, &cfg, 1, &mut rng).unwrap())
        .collect();
    let (mean, se) = mean_se(&draws);
    assert!((mean - exact.elbo).abs() < 3.0 * se, "{mean} ± {se} vs {}", exact.elbo);
    assert!(mean <= exact.log_evidence + 3.0 * se);
}

/// Gradients of the fixed-noise estimate: the same RNG state replays the noise.
#[test]
fn theta_gradient_matches_finite_differences_for_every_distribution() {
    let cfg = ModelConfig::default();
    for (d, kind) in DistKind::ALL.into_iter().enumerate() {
        let dist = HiddenDist::of(kind);
        for scheme in [Scheme::Forward, Scheme::ForwardSelf, Scheme::ForwardBackward] {
            let mut rng = SeededRng::new(20 + d as u64, 0);
            let theta = GenerativeParams::random(2, 1, 1.0, 0.5, &mut rng).unwrap();
            let x = random_train(2, 5, 2, &mut rng);
            let phi = random_phi(scheme, 2, 1, 5, -0.5, 0.5, &mut rng);
            let noise = rng.derive(7);
            let g = grad_theta(&theta, &phi, &x, &dist, &cfg, 1, &mut noise.clone()).unwrap();
            let base = theta.to_flat();
            for i in 0..base.len() {
                let at = |h: f64| {
                    let mut p = base.clone();
                    p[i] += h;
                    let mut t = theta.clone();
                    t.set_flat(&p).unwrap();
                    elbo_hat(&t, &phi, &x, &dist, &cfg, 1, &mut noise.clone()).unwrap()
                };
                let fd = (at(1e-5) - at(-1e-5)) / 2e-5;
                assert!(
                    (g[i] - fd).abs() <= 1e-4 * g[i].abs().max(fd.abs()) + 1e-8,
                    "{kind} {scheme} θ[{i}]: {} vs {fd}",
                    g[i]
                );
            }
        }
    }
}

#[test]
fn pathwise_gradient_matches_finite_differences_on_gumbel_softmax() {
    let cfg = ModelConfig::default();
    let dist = HiddenDist::of(DistKind::GumbelSoftmax);
    let mut rng = SeededRng::new(31, 0);
    let theta = GenerativeParams::random(2, 1, 1.0, 0.5, &mut rng).unwrap();
    let x = random_train(2, 5, 2, &mut rng);
    let phi = random_phi(Scheme::ForwardBackward, 2, 1, 5, -0.5, 0.5, &mut rng);
    let noise = rng.derive(3);
    let g = pathwise_grad_phi(&theta, &phi, &x, &dist, &cfg, 1, &mut noise.clone()).unwrap();
    let base = phi.to_flat();
    for i in free_indices(&phi) {
        let at = |h: f64| {
            let mut p = base.clone();
            p[i] += h;
            let mut q = phi.clone();
            q.set_flat(&p).unwrap();
            elbo_hat(&theta, &q, &x, &dist, &cfg, 1, &mut noise.clone()).unwrap()
        };
        let fd = (at(1e-5) - at(-1e-5)) / 2e-5;
        assert!((g[i] - fd).abs() <= 1e-4 * g[i].abs().max(fd.abs()) + 1e-8, "φ[{i}]: {} vs {fd}", g[i]);
    }
}

#[test]
fn bias_gradient_vanishes_at_the_matched_rate() {
    let cfg = ModelConfig::default();
    let dist = HiddenDist::of(DistKind::Poisson);
    let mut rng = SeededRng::new(5, 0);
    let x = random_train(1, 40, 3, &mut rng);
    let rate = x.total() as f64 / 40.0;
    let mut theta = GenerativeParams::zeros(1, 1).unwrap();
    theta.b[0] = softplus_inv(rate);
    theta.b[1] = 0.3;
    let phi = random_phi(Scheme::ForwardBackward, 1, 1, 40, -0.3, 0.3, &mut rng);
    let draws: Vec<f64> = (0..10_000)
        .map(|_| grad_theta(&theta, &phi, &x, &dist, &cfg, 1, &mut rng).unwrap()[0])
        .collect();
    let (mean, se) = mean_se(&draws);
    assert!(mean.abs() <= 3.0 * se + 1e-9, "{mean} ± {se}");
}

/// Fully observed log-likelihood gradient written as explicit loops.
fn glm_gradient_reference(theta: &GenerativeParams, x: &SpikeTrain, cfg: &ModelConfig) -> (f64, Vec<f64>) {
    let n = theta.visible();
    let counts = x.as_f64();
    let hist = convolve_history(counts.view(), &cfg.kernel);
    let mut gb = vec![0.0; n];
    let mut gw = Array2::<f64>::zeros((n, n));
    let mut ll = 0.0;
    for t in 0..x.bins() {
        for i in 0..n {
            let mut a = theta.b[i];
            for j in 0..n {
                a += theta.w[[i, j]] * hist[[t, j]];
            }
            let f = softplus(a);
            let c = counts[[t, i]];
            ll += c * f.ln() - f - ln_factorial(c as u64);
            let d = (c / f - 1.0) * sigmoid(a);
            gb[i] += d;
            for j in 0..n {
                gw[[i, j]] += d * hist[[t, j]];
            }
        }
    }
    gb.extend(gw.iter());
    (ll, gb)
}

#[test]
fn no_hidden_gradient_equals_the_glm_gradient() {
    let cfg = ModelConfig::default();
    let mut rng = SeededRng::new(8, 0);
    let theta = GenerativeParams::random(2, 0, 1.0, 0.5, &mut rng).unwrap();
    let x = random_train(2, 12, 3, &mut rng);
    let phi = VariationalParams::zeros(Scheme::Forward, 2, 0, None).unwrap();
    let (ll, reference) = glm_gradient_reference(&theta, &x, &cfg);
    for k in [1, 4] {
        let g = estimate(&theta, &phi, &x, &HiddenDist::of(DistKind::Poisson), &cfg, k, None, &mut rng).unwrap();
        assert!((g.elbo_value - ll).abs() < 1e-10);
        for (a, b) in g.d_theta.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

/// Both estimators are unbiased for the same relaxed-model ELBO.
#[test]
fn score_and_pathwise_means_agree_for_every_pathwise_capable_distribution() {
    let cfg = ModelConfig::default();
    for (d, kind) in [DistKind::Exponential, DistKind::GumbelSoftmax, DistKind::Rayleigh, DistKind::HalfNormal]
        .into_iter()
        .enumerate()
    {
        let dist = HiddenDist::of(kind);
        let mut rng = SeededRng::new(40 + d as u64, 0);
        let theta = GenerativeParams::random(1, 1, 1.0, 0.5, &mut rng).unwrap();
        let x = random_train(1, 2, 2, &mut rng);
        let phi = random_phi(Scheme::ForwardBackward, 1, 1, 2, -0.5, 0.5, &mut rng);
        let draws = if kind == DistKind::Exponential { 100_000 } else { 40_000 };
        let score: Vec<Vec<f64>> = (0..draws)
            .map(|_| score_grad_phi(&theta, &phi, &x, &dist, &cfg, 1, &mut rng).unwrap())
            .collect();
        let path: Vec<Vec<f64>> = (0..draws)
            .map(|_| pathwise_grad_phi(&theta, &phi, &x, &dist, &cfg, 1, &mut rng).unwrap())
            .collect();
        let s = column_mean_se(&score);
        let p = column_mean_se(&path);
        for i in free_indices(&phi) {
            let joint = (s[i].1.powi(2) + p[i].1.powi(2)).sqrt();
            assert!(
                (s[i].0 - p[i].0).abs() <= 3.0 * joint,
                "{kind} φ[{i}]: score {:?} pathwise {:?}",
                s[i],
                p[i]
            );
        }
    }
}

#[test]
fn variance_diagnostic_is_nonnegative_and_favours_pathwise() {
    let cfg = ModelConfig::default();
    let dist = HiddenDist::of(DistKind::GumbelSoftmax);
    let mut rng = SeededRng::new(3, 0);
    let theta = GenerativeParams::random(1, 1, 1.0, 0.5, &mut rng).unwrap();
    let x = random_train(1, 3, 2, &mut rng);
    let phi = random_phi(Scheme::Forward, 1, 1, 3, -0.5, 0.5, &mut rng);
    let mut total = [0.0; 2];
    for _ in 0..200 {
        for (slot, est) in [PhiEstimator::Score, PhiEstimator::Pathwise].into_iter().enumerate() {
            let g = estimate(&theta, &phi, &x, &dist, &cfg, 8, Some(est), &mut rng).unwrap();
            assert!(g.per_sample_variance >= 0.0);
            total[slot] += g.per_sample_variance;
        }
    }
    assert!(total[0] > total[1], "score {} pathwise {}", total[0], total[1]);
}
