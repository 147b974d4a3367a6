//! Adam and the mini-batch ELBO maximization loop.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{DistKind, HiddenDist};
use crate::error::{Error, Result};
use crate::estimators::{estimate, GradientEstimate, PhiEstimator};
use crate::math::SeededRng;
use crate::model::{BasisKernel, GenerativeParams, ModelConfig, Nonlinearity, SpikeTrain};
use crate::variational::{Scheme, VariationalParams};

/// Global gradient norm above which a batch gradient is rescaled.
pub const CLIP_NORM: f64 = 100.0;

/// An inference method: a hidden-spike distribution plus the estimator
/// used for the variational gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Method {
    dist: DistKind,
    estimator: PhiEstimator,
}

impl Method {
    pub const POIS: Method = Method::fixed(DistKind::Poisson, PhiEstimator::Score);
    pub const CAT: Method = Method::fixed(DistKind::Categorical, PhiEstimator::Score);
    pub const GS_S: Method = Method::fixed(DistKind::GumbelSoftmax, PhiEstimator::Score);
    pub const GS_P: Method = Method::fixed(DistKind::GumbelSoftmax, PhiEstimator::Pathwise);
    pub const EXP: Method = Method::fixed(DistKind::Exponential, PhiEstimator::Pathwise);
    pub const RAY: Method = Method::fixed(DistKind::Rayleigh, PhiEstimator::Pathwise);
    pub const HN: Method = Method::fixed(DistKind::HalfNormal, PhiEstimator::Pathwise);

    /// The seven methods of the experiment matrix.
    pub const ALL: [Method; 7] = [
        Method::POIS,
        Method::CAT,
        Method::GS_S,
        Method::GS_P,
        Method::EXP,
        Method::RAY,
        Method::HN,
    ];

    const fn fixed(dist: DistKind, estimator: PhiEstimator) -> Self {
        Self { dist, estimator }
    }

    /// Pathwise requires a continuous or relaxed distribution.
    pub fn new(dist: DistKind, estimator: PhiEstimator) -> Result<Self> {
        if estimator == PhiEstimator::Pathwise && !dist.pathwise_capable() {
            return Err(Error::Usage(format!(
                "{dist} hidden spikes are discrete and have no reparameterized sampler, so the pathwise \
                 estimator is unavailable (pathwise-capable: gs, exp, ray, hn); use score"
            )));
        }
        Ok(Self { dist, estimator })
    }

    pub fn dist(self) -> DistKind {
        self.dist
    }

    pub fn estimator(self) -> PhiEstimator {
        self.estimator
    }

    pub fn is_pathwise(self) -> bool {
        self.estimator == PhiEstimator::Pathwise
    }

    pub fn name(self) -> &'static str {
        match (self.dist, self.estimator) {
            (DistKind::Poisson, _) => "pois",
            (DistKind::Categorical, _) => "cat",
            (DistKind::GumbelSoftmax, PhiEstimator::Score) => "gs-s",
            (DistKind::GumbelSoftmax, PhiEstimator::Pathwise) => "gs-p",
            (DistKind::Exponential, PhiEstimator::Pathwise) => "exp",
            (DistKind::Rayleigh, PhiEstimator::Pathwise) => "ray",
            (DistKind::HalfNormal, PhiEstimator::Pathwise) => "hn",
            (DistKind::Exponential, PhiEstimator::Score) => "exp-s",
            (DistKind::Rayleigh, PhiEstimator::Score) => "ray-s",
            (DistKind::HalfNormal, PhiEstimator::Score) => "hn-s",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = Method::ALL.into_iter().chain([
            Method::fixed(DistKind::Exponential, PhiEstimator::Score),
            Method::fixed(DistKind::Rayleigh, PhiEstimator::Score),
            Method::fixed(DistKind::HalfNormal, PhiEstimator::Score),
        ]);
        for m in all {
            if m.name() == s {
                return Ok(m);
            }
        }
        Err(Error::Usage(format!(
            "unknown method `{s}` (expected one of pois, cat, gs-s, gs-p, exp, ray, hn)"
        )))
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub scheme: Scheme,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Monte-Carlo samples per batch item and step.
    pub k: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Truncation level `M` of the categorical and Gumbel-Softmax cells.
    pub truncation: usize,
    /// Gumbel-Softmax temperature.
    pub temperature: f64,
    /// Basis kernel length `L`.
    pub basis_len: usize,
    pub link: Nonlinearity,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::EXP,
            scheme: Scheme::ForwardBackward,
            hidden: 2,
            epochs: 20,
            batch_size: 10,
            k: 1,
            learning_rate: 0.05,
            seed: 0,
            truncation: crate::dist::DEFAULT_TRUNCATION,
            temperature: crate::dist::DEFAULT_TEMPERATURE,
            basis_len: 5,
            link: Nonlinearity::Softplus,
        }
    }
}

impl TrainConfig {
    pub fn dist(&self) -> Result<HiddenDist> {
        HiddenDist::new(self.method.dist(), self.truncation, self.temperature)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            kernel: BasisKernel::exponential(self.basis_len, 2.0)?,
            link: self.link,
        })
    }

    pub fn validate(&self) -> Result<()> {
        Method::new(self.method.dist(), self.method.estimator())?;
        self.dist()?;
        if self.basis_len == 0 {
            return Err(Error::Usage("basis length L must be at least 1".into()));
        }
        if self.batch_size == 0 || self.k == 0 {
            return Err(Error::Usage("batch size and K must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Usage(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Adam moments for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One descent step on `params` along `grad`. A non-finite gradient
    /// leaves everything untouched and returns `false`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<bool> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Usage(format!(
                "Adam state has {} entries, params {}, grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            log::warn!("non-finite gradient; Adam step skipped");
            return Ok(false);
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(true)
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, params: &[f64], grad: &[f64], lr: f64) -> Result<Vec<f64>> {
    let mut out = params.to_vec();
    state.step(&mut out, grad, lr)?;
    Ok(out)
}

/// Random `θ₀` and near-zero `φ₀`.
pub fn init_params(
    visible: usize,
    hidden: usize,
    scheme: Scheme,
    bins: Option<usize>,
    rng: &mut SeededRng,
) -> Result<(GenerativeParams, VariationalParams)> {
    let theta = GenerativeParams::random(visible, hidden, 2.0, 0.5, rng)?;
    let mut phi = VariationalParams::zeros(scheme, visible, hidden, bins)?;
    let mask = phi.mask();
    for (a, &free) in phi.a.iter_mut().zip(mask.iter()) {
        if free {
            *a = rng.uniform_range(-0.1, 0.1);
        }
    }
    Ok((theta, phi))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub wall_time_s: f64,
    pub clip_events: usize,
    pub skipped_steps: usize,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub theta: GenerativeParams,
    pub phi: VariationalParams,
    /// `-mean ELBO` per epoch.
    pub loss_curve: Vec<f64>,
    pub wall_time_s: f64,
    pub log: Vec<EpochRecord>,
}

fn check_trains(trains: &[SpikeTrain]) -> Result<(usize, usize)> {
    let first = trains
        .first()
        .ok_or_else(|| Error::Usage("the training set is empty".into()))?;
    for (i, x) in trains.iter().enumerate() {
        if x.neurons() != first.neurons() || x.bin_width() != first.bin_width() {
            return Err(Error::Usage(format!(
                "train {i} has V={} and bin width {:?}, expected V={} and {:?}",
                x.neurons(),
                x.bin_width(),
                first.neurons(),
                first.bin_width()
            )));
        }
    }
    Ok((first.neurons(), first.bins()))
}

/// Initialize from the config seed and fit.
pub fn fit(config: &TrainConfig, trains: &[SpikeTrain]) -> Result<FitResult> {
    config.validate()?;
    let (v, bins) = check_trains(trains)?;
    let mut rng = SeededRng::new(config.seed, 0).derive(0);
    let (theta, phi) = init_params(v, config.hidden, config.scheme, Some(bins), &mut rng)?;
    fit_from(config, trains, theta, phi)
}

/// Fit starting from the given parameters.
pub fn fit_from(
    config: &TrainConfig,
    trains: &[SpikeTrain],
    mut theta: GenerativeParams,
    mut phi: VariationalParams,
) -> Result<FitResult> {
    config.validate()?;
    check_trains(trains)?;
    if config.scheme == Scheme::MeanField && phi.hidden() > 0 && trains.len() != 1 {
        return Err(Error::Usage(
            "mean-field parameters are train-specific; fit them on a single train".into(),
        ));
    }
    let dist = config.dist()?;
    let cfg = config.model_config()?;
    let estimator = (phi.hidden() > 0).then_some(config.method.estimator());
    let root = SeededRng::new(config.seed, 0);
    let mut adam_theta = AdamState::new(theta.flat_len());
    let mut adam_phi = AdamState::new(phi.flat_len());
    let mut order: Vec<usize> = (0..trains.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut log = Vec::with_capacity(config.epochs);
    let mut bad_epochs = 0;
    let start = Instant::now();

    for epoch in 0..config.epochs {
        let mut shuffle_rng = root.derive_path(&[1, epoch as u64]);
        shuffle_rng.shuffle(&mut order);
        let mut elbo_sum = 0.0;
        let mut clip_events = 0;
        let mut skipped_steps = 0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<Result<GradientEstimate>> = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let mut rng = root.derive_path(&[2, epoch as u64, b as u64, pos as u64]);
                    estimate(&theta, &phi, &trains[i], &dist, &cfg, config.k, estimator, &mut rng)
                })
                .collect();
            let n = batch.len() as f64;
            let mut g_theta = vec![0.0; theta.flat_len()];
            let mut g_phi = vec![0.0; phi.flat_len()];
            for r in results {
                let g = r?;
                elbo_sum += g.elbo_value;
                g_theta.iter_mut().zip(&g.d_theta).for_each(|(a, b)| *a -= b / n);
                g_phi.iter_mut().zip(&g.d_phi).for_each(|(a, b)| *a -= b / n);
            }
            let norm = g_theta.iter().chain(&g_phi).map(|g| g * g).sum::<f64>().sqrt();
            if norm > CLIP_NORM {
                let s = CLIP_NORM / norm;
                g_theta.iter_mut().chain(g_phi.iter_mut()).for_each(|g| *g *= s);
                clip_events += 1;
                log::debug!("epoch {epoch} batch {b}: gradient norm {norm:.3e} clipped to {CLIP_NORM}");
            }
            let mut flat = theta.to_flat();
            let ok_theta = adam_theta.step(&mut flat, &g_theta, config.learning_rate)?;
            theta.set_flat(&flat)?;
            let mut flat = phi.to_flat();
            let ok_phi = adam_phi.step(&mut flat, &g_phi, config.learning_rate)?;
            phi.set_flat(&flat)?;
            if !(ok_theta && ok_phi) {
                skipped_steps += 1;
            }
        }
        let loss = -elbo_sum / trains.len() as f64;
        let wall = start.elapsed().as_secs_f64();
        log::info!("epoch {epoch}: loss {loss:.6} ({wall:.2}s, {clip_events} clipped, {skipped_steps} skipped)");
        loss_curve.push(loss);
        log.push(EpochRecord {
            epoch,
            loss,
            wall_time_s: wall,
            clip_events,
            skipped_steps,
        });
        if loss.is_finite() {
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= 2 {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
        }
    }
    Ok(FitResult {
        theta,
        phi,
        loss_curve,
        wall_time_s: start.elapsed().as_secs_f64(),
        log,
    })
}
