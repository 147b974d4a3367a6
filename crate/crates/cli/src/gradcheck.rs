//! Finite-difference and enumeration checks on tiny models.

use anyhow::Result;
use ndarray::Array2;

use poglm::estimators::{
    elbo_with_noise, enumerate_elbo, enumerate_elbo_grad_phi, estimate_with_noise, PhiEstimator,
};
use poglm::variational::draw_noise;
use poglm::{DistKind, GenerativeParams, HiddenDist, ModelConfig, Scheme, SeededRng, SpikeTrain, VariationalParams};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Relative tolerance between analytic and finite-difference gradients.
pub const REL_TOL: f64 = 1e-4;
/// Absolute floor for coordinates whose gradient is near zero.
pub const ABS_FLOOR: f64 = 1e-8;
/// Tolerance of the enumerated `ELBO + KL = log-evidence` identity.
pub const IDENTITY_TOL: f64 = 1e-10;

pub struct Outcome {
    pub name: String,
    /// Largest `|err| / allowed` over checked coordinates; passes below 1.
    pub worst: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.worst.is_finite() && self.worst <= 1.0
    }
}

fn ratio(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (REL_TOL * analytic.abs().max(fd.abs()) + ABS_FLOOR)
}

fn central(f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    Ok((f(STEP)? - f(-STEP)?) / (2.0 * STEP))
}

fn tiny_train(v: usize, bins: usize, rng: &mut SeededRng) -> Result<SpikeTrain> {
    let counts = Array2::from_shape_fn((bins, v), |_| rng.index(3) as u32);
    Ok(SpikeTrain::new(counts, None)?)
}

fn random_phi(scheme: Scheme, v: usize, h: usize, bins: usize, rng: &mut SeededRng) -> Result<VariationalParams> {
    let mut phi = VariationalParams::zeros(scheme, v, h, Some(bins))?;
    let flat: Vec<f64> = (0..phi.flat_len()).map(|_| rng.uniform_range(-0.5, 0.5)).collect();
    phi.set_flat(&flat)?;
    Ok(phi)
}

#[allow(clippy::too_many_arguments)]
fn check_fixed_noise(
    name: String,
    theta: &GenerativeParams,
    phi: &VariationalParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    noise: &[Vec<f64>],
    estimator: PhiEstimator,
) -> Result<Outcome> {
    let g = estimate_with_noise(theta, phi, x, dist, cfg, noise, Some(estimator))?;
    let mut worst: f64 = 0.0;
    let base = theta.to_flat();
    for i in 0..base.len() {
        let fd = central(|h| {
            let mut p = base.clone();
            p[i] += h;
            let mut t = theta.clone();
            t.set_flat(&p)?;
            Ok(elbo_with_noise(&t, phi, x, dist, cfg, noise)?)
        })?;
        worst = worst.max(ratio(g.d_theta[i], fd));
    }
    // Score-function φ-gradients are not derivatives of the fixed-noise
    // estimate, so only pathwise φ-gradients are compared.
    if estimator == PhiEstimator::Pathwise {
        let base = phi.to_flat();
        for (i, free) in phi.flat_mask().into_iter().enumerate() {
            if !free {
                continue;
            }
            let fd = central(|h| {
                let mut p = base.clone();
                p[i] += h;
                let mut q = phi.clone();
                q.set_flat(&p)?;
                Ok(elbo_with_noise(theta, &q, x, dist, cfg, noise)?)
            })?;
            worst = worst.max(ratio(g.d_phi[i], fd));
        }
    }
    Ok(Outcome { name, worst })
}

/// Run every check and return one outcome per (check, distribution, scheme).
pub fn run(seed: u64) -> Result<Vec<Outcome>> {
    let root = SeededRng::new(seed, 0);
    let cfg = ModelConfig::default();
    let mut out = Vec::new();

    // Fixed-noise gradients on V=2, H=1, T=5.
    for (d, kind) in DistKind::ALL.into_iter().enumerate() {
        let dist = HiddenDist::of(kind);
        let estimator = if kind.pathwise_capable() {
            PhiEstimator::Pathwise
        } else {
            PhiEstimator::Score
        };
        for (s, scheme) in Scheme::ALL.into_iter().enumerate() {
            let mut rng = root.derive_path(&[1, d as u64, s as u64]);
            let theta = GenerativeParams::random(2, 1, 1.0, 0.5, &mut rng)?;
            let x = tiny_train(2, 5, &mut rng)?;
            let phi = random_phi(scheme, 2, 1, 5, &mut rng)?;
            let noise: Vec<Vec<f64>> = (0..2).map(|_| draw_noise(&dist, 5, 1, &mut rng)).collect();
            let what = if estimator == PhiEstimator::Pathwise { "theta+phi" } else { "theta" };
            out.push(check_fixed_noise(
                format!("fd {what} {kind} {scheme}"),
                &theta,
                &phi,
                &x,
                &dist,
                &cfg,
                &noise,
                estimator,
            )?);
        }
    }

    // Enumeration identity and exact φ-gradient on V=1, H=1, T=4.
    for (d, kind) in [DistKind::Poisson, DistKind::Categorical].into_iter().enumerate() {
        let dist = HiddenDist::new(kind, 3, poglm::dist::DEFAULT_TEMPERATURE)?;
        for (s, scheme) in Scheme::ALL.into_iter().enumerate() {
            let mut rng = root.derive_path(&[2, d as u64, s as u64]);
            let theta = GenerativeParams::random(1, 1, 1.0, 0.5, &mut rng)?;
            let x = tiny_train(1, 4, &mut rng)?;
            let phi = random_phi(scheme, 1, 1, 4, &mut rng)?;
            let e = enumerate_elbo(&theta, &phi, &x, &dist, &cfg, 3)?;
            let gap = (e.elbo + e.kl - e.log_evidence).abs() / IDENTITY_TOL;
            let kl = if e.kl >= -IDENTITY_TOL { 0.0 } else { f64::INFINITY };
            out.push(Outcome {
                name: format!("enum identity {kind} {scheme}"),
                worst: gap.max(kl),
            });

            let (_, g) = enumerate_elbo_grad_phi(&theta, &phi, &x, &dist, &cfg, 3)?;
            let base = phi.to_flat();
            let mut worst: f64 = 0.0;
            for (i, free) in phi.flat_mask().into_iter().enumerate() {
                if !free {
                    continue;
                }
                let fd = central(|h| {
                    let mut p = base.clone();
                    p[i] += h;
                    let mut q = phi.clone();
                    q.set_flat(&p)?;
                    Ok(enumerate_elbo(&theta, &q, &x, &dist, &cfg, 3)?.elbo)
                })?;
                worst = worst.max(ratio(g[i], fd));
            }
            out.push(Outcome {
                name: format!("enum grad phi {kind} {scheme}"),
                worst,
            });
        }
    }
    Ok(out)
}
