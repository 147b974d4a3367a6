//! Monte-Carlo ELBO estimates, the score-function and pathwise gradient
//! estimators, and exact enumeration over small hidden spike trains.
//!
//! Every estimator draws one block of uniforms per hidden sample (see
//! [`draw_noise`]); the `*_with_noise` variants take that block directly so
//! an estimate can be reproduced or finite-differenced at fixed noise.

use ndarray::Array2;
use rayon::prelude::*;

use crate::dist::{tape_poisson_log_pmf, DistKind, HiddenDist, TapeCell};
use crate::error::{Error, Result};
use crate::math::special::logsumexp;
use crate::math::{SeededRng, Tape, Var};
use crate::model::{
    tape_joint_log_likelihood, tape_joint_log_likelihood_with, GenerativeParams, ModelConfig, PreparedTrain,
    SpikeTrain, ThetaVars,
};
use crate::variational::{tape_log_q_with, tape_sample, PhiVars, VariationalParams};

pub use crate::variational::draw_noise;

/// Largest `T·H` the enumeration oracle accepts.
pub const MAX_ENUM_CELLS: usize = 12;
/// Largest number of states per hidden cell under enumeration.
pub const MAX_ENUM_STATES: usize = 4;

/// How the φ-gradient is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiEstimator {
    Score,
    Pathwise,
}

impl std::fmt::Display for PhiEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PhiEstimator::Score => "score",
            PhiEstimator::Pathwise => "pathwise",
        })
    }
}

/// A Monte-Carlo estimate of the ELBO and its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    /// Aligned with [`GenerativeParams::to_flat`].
    pub d_theta: Vec<f64>,
    /// Aligned with [`VariationalParams::to_flat`]; masked entries are zero.
    pub d_phi: Vec<f64>,
    pub elbo_value: f64,
    /// Mean over φ coordinates of the across-sample variance of `d_phi`.
    pub per_sample_variance: f64,
}

struct SampleOutcome {
    elbo: f64,
    d_theta: Vec<f64>,
    d_phi: Vec<f64>,
}

fn check_compatible(theta: &GenerativeParams, phi: &VariationalParams, x: &SpikeTrain) -> Result<()> {
    if theta.visible() != phi.visible() || theta.hidden() != phi.hidden() {
        return Err(Error::Usage(format!(
            "θ has V={}, H={} but φ has V={}, H={}",
            theta.visible(),
            theta.hidden(),
            phi.visible(),
            phi.hidden()
        )));
    }
    if x.neurons() != theta.visible() {
        return Err(Error::Usage(format!(
            "spike train has {} neurons, model has V={}",
            x.neurons(),
            theta.visible()
        )));
    }
    if phi.bias_rows() != 1 && phi.bias_rows() != x.bins() {
        return Err(Error::Usage(format!(
            "mean-field parameters cover {} bins, train has {}",
            phi.bias_rows(),
            x.bins()
        )));
    }
    Ok(())
}

/// One hidden sample on a fresh tape. With `estimator = None` only the
/// θ-gradient is taken and samples are constants.
#[allow(clippy::too_many_arguments)]
fn one_sample(
    tape: &mut Tape,
    theta: &GenerativeParams,
    phi: &VariationalParams,
    obs: &PreparedTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    noise: &[f64],
    estimator: Option<PhiEstimator>,
) -> Result<SampleOutcome> {
    tape.clear();
    let tv = ThetaVars::register(tape, theta);
    let pv = PhiVars::register(tape, phi);
    let pathwise = estimator == Some(PhiEstimator::Pathwise);
    let (cells, lnq) = if phi.hidden() == 0 {
        (Vec::new(), tape.constant(0.0))
    } else {
        tape_sample(tape, &pv, obs, dist, cfg, noise, pathwise)?
    };
    let (lnp, _) = tape_joint_log_likelihood(tape, &tv, obs, &cells, dist, cfg)?;
    let elbo = tape.value(lnp) - tape.value(lnq);
    let root = match estimator {
        Some(PhiEstimator::Pathwise) => tape.sub(lnp, lnq),
        // The bracket enters as a constant weight on ln q.
        Some(PhiEstimator::Score) => tape.affine(0.0, &[(lnp, 1.0), (lnq, elbo)], &[]),
        None => lnp,
    };
    let grads = tape.backward(root)?;
    Ok(SampleOutcome {
        elbo,
        d_theta: grads.wrt(&tv.flat),
        d_phi: grads.wrt(&pv.flat),
    })
}

fn average(outcomes: Vec<SampleOutcome>, phi: &VariationalParams) -> GradientEstimate {
    let k = outcomes.len() as f64;
    let mut d_theta = vec![0.0; outcomes[0].d_theta.len()];
    let mut d_phi = vec![0.0; outcomes[0].d_phi.len()];
    let mut elbo = 0.0;
    for o in &outcomes {
        elbo += o.elbo;
        d_theta.iter_mut().zip(&o.d_theta).for_each(|(a, b)| *a += b);
        d_phi.iter_mut().zip(&o.d_phi).for_each(|(a, b)| *a += b);
    }
    d_theta.iter_mut().for_each(|a| *a /= k);
    d_phi.iter_mut().for_each(|a| *a /= k);
    for (g, free) in d_phi.iter_mut().zip(phi.flat_mask()) {
        if !free {
            *g = 0.0;
        }
    }
    let per_sample_variance = if outcomes.len() < 2 || d_phi.is_empty() {
        0.0
    } else {
        let mut acc = 0.0;
        for (i, mean) in d_phi.iter().enumerate() {
            acc += outcomes.iter().map(|o| (o.d_phi[i] - mean).powi(2)).sum::<f64>() / (k - 1.0);
        }
        acc / d_phi.len() as f64
    };
    GradientEstimate {
        d_theta,
        d_phi,
        elbo_value: elbo / k,
        per_sample_variance,
    }
}

/// ELBO and gradients from explicit noise blocks, one per hidden sample.
/// With `estimator = None`, `d_phi` is zero.
pub fn estimate_with_noise(
    theta: &GenerativeParams,
    phi: &VariationalParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    noises: &[Vec<f64>],
    estimator: Option<PhiEstimator>,
) -> Result<GradientEstimate> {
    check_compatible(theta, phi, x)?;
    if noises.is_empty() {
        return Err(Error::Usage("K must be at least 1".into()));
    }
    if estimator == Some(PhiEstimator::Pathwise) && !dist.pathwise_capable() && phi.hidden() > 0 {
        return Err(Error::Usage(format!(
            "{} hidden spikes are discrete; only the score estimator applies",
            dist.kind()
        )));
    }
    let obs = PreparedTrain::new(x, &cfg.kernel);
    let mut tape = Tape::new();
    let outcomes = noises
        .iter()
        .map(|noise| one_sample(&mut tape, theta, phi, &obs, dist, cfg, noise, estimator))
        .collect::<Result<Vec<_>>>()?;
    Ok(average(outcomes, phi))
}

/// Draw `k` noise blocks from `rng` and estimate.
#[allow(clippy::too_many_arguments)]
pub fn estimate(
    theta: &GenerativeParams,
    phi: &VariationalParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    k: usize,
    estimator: Option<PhiEstimator>,
    rng: &mut SeededRng,
) -> Result<GradientEstimate> {
    let noises: Vec<Vec<f64>> = (0..k).map(|_| draw_noise(dist, x.bins(), phi.hidden(), rng)).collect();
    estimate_with_noise(theta, phi, x, dist, cfg, &noises, estimator)
}

/// `(1/K) Σ_k [ln p(X, Z_k) − ln q(Z_k | X)]` with `Z_k ~ q`.
pub fn elbo_hat(
    theta: &GenerativeParams,
    phi: &VariationalParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    k: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    Ok(estimate(theta, phi, x, dist, cfg, k, None, rng)?.elbo_value)
}

/// The ELBO estimate at fixed noise.
pub fn elbo_with_noise(
    theta: &GenerativeParams,
    phi: &VariationalParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    noises: &[Vec<f64>],
) -> Result<f64> {
    Ok(estimate_with_noise(theta, phi, x, dist, cfg, noises, None)?.elbo_value)
}

/// Gradient of the ELBO estimate with respect to θ, samples held fixed.
pub fn grad_theta(
    theta: &GenerativeParams,
    phi: &VariationalParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    k: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    Ok(estimate(theta, phi, x, dist, cfg, k, None, rng)?.d_theta)
}

/// Score-function estimate of the φ-gradient.
pub fn score_grad_phi(
    theta: &GenerativeParams,
    phi: &VariationalParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    k: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    Ok(estimate(theta, phi, x, dist, cfg, k, Some(PhiEstimator::Score), rng)?.d_phi)
}

/// Pathwise estimate of the φ-gradient through reparameterized samples.
pub fn pathwise_grad_phi(
    theta: &GenerativeParams,
    phi: &VariationalParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    k: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    Ok(estimate(theta, phi, x, dist, cfg, k, Some(PhiEstimator::Pathwise), rng)?.d_phi)
}

// ---------------------------------------------------------------------------
// Enumeration
// ---------------------------------------------------------------------------

/// Exact quantities from summing over every hidden configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnumeratedElbo {
    pub elbo: f64,
    pub log_evidence: f64,
    pub kl: f64,
}

/// States per cell for enumeration: the categorical's own `M`, or a Poisson
/// truncated to `m_enum` states and renormalized.
pub fn enum_states(dist: &HiddenDist, m_enum: usize) -> Result<usize> {
    let m = match dist.kind() {
        DistKind::Poisson => m_enum,
        DistKind::Categorical => dist.truncation(),
        k => return Err(Error::Usage(format!("cannot enumerate {k} hidden spikes"))),
    };
    if !(2..=MAX_ENUM_STATES).contains(&m) {
        return Err(Error::Usage(format!(
            "enumeration needs 2 ≤ M ≤ {MAX_ENUM_STATES}, got {m}"
        )));
    }
    Ok(m)
}

fn check_budget(bins: usize, hidden: usize) -> Result<()> {
    if bins * hidden > MAX_ENUM_CELLS {
        return Err(Error::Usage(format!(
            "enumeration over T·H = {} cells exceeds the budget of {MAX_ENUM_CELLS}",
            bins * hidden
        )));
    }
    Ok(())
}

/// Every `T × H` count matrix with entries in `0..m`, in odometer order
/// (last cell fastest).
pub fn configurations(bins: usize, hidden: usize, m: usize) -> Vec<Array2<u32>> {
    let cells = bins * hidden;
    let total = m.pow(cells as u32);
    (0..total)
        .map(|mut idx| {
            let mut z = vec![0u32; cells];
            for c in (0..cells).rev() {
                z[c] = (idx % m) as u32;
                idx /= m;
            }
            Array2::from_shape_vec((bins, hidden), z).expect("shape matches")
        })
        .collect()
}

/// Per-cell log mass used by the enumeration oracle.
fn enum_cell_log_mass(tape: &mut Tape, dist: &HiddenDist, m: usize, cell: &TapeCell, f: Var) -> Result<Var> {
    match (dist.kind(), cell) {
        (DistKind::Poisson, TapeCell::Count(z)) => {
            if *z as usize >= m {
                return Err(Error::Domain(format!("count {z} outside 0..{m}")));
            }
            let terms: Vec<Var> = (0..m as u32).map(|j| tape_poisson_log_pmf(tape, j, f)).collect();
            let norm = tape.logsumexp(&terms);
            Ok(tape.sub(terms[*z as usize], norm))
        }
        _ => dist.tape_log_density(tape, cell, f),
    }
}

fn count_cells(z: &Array2<u32>) -> Vec<TapeCell> {
    z.iter().map(|&c| TapeCell::Count(c)).collect()
}

/// `ln p(X, Z)` with hidden cells scored by the enumeration mass.
fn enum_log_joint(
    theta: &GenerativeParams,
    obs: &PreparedTrain,
    z: &Array2<u32>,
    dist: &HiddenDist,
    m: usize,
    cfg: &ModelConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let tv = ThetaVars::register(&mut tape, theta);
    let cells = count_cells(z);
    let (lp, _) = tape_joint_log_likelihood_with(&mut tape, &tv, obs, &cells, cfg, &mut |tape, cell, f| {
        enum_cell_log_mass(tape, dist, m, cell, f)
    })?;
    Ok(tape.value(lp))
}

/// `ln q(Z | X)` and its φ-gradient under the enumeration mass.
#[allow(clippy::too_many_arguments)]
fn enum_log_q(
    tape: &mut Tape,
    phi: &VariationalParams,
    obs: &PreparedTrain,
    z: &Array2<u32>,
    dist: &HiddenDist,
    m: usize,
    cfg: &ModelConfig,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    tape.clear();
    let pv = PhiVars::register(tape, phi);
    let cells = count_cells(z);
    let lq = tape_log_q_with(tape, &pv, obs, &cells, cfg, &mut |tape, cell, f| {
        enum_cell_log_mass(tape, dist, m, cell, f)
    })?;
    let grad = if want_grad {
        tape.backward(lq)?.wrt(&pv.flat)
    } else {
        Vec::new()
    };
    Ok((tape.value(lq), grad))
}

/// `ln p(X, Z)` for every configuration from [`configurations`].
pub fn log_joint_table(
    theta: &GenerativeParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    m_enum: usize,
) -> Result<(Vec<Array2<u32>>, Vec<f64>)> {
    let m = enum_states(dist, m_enum)?;
    check_budget(x.bins(), theta.hidden())?;
    if x.neurons() != theta.visible() {
        return Err(Error::Usage(format!(
            "spike train has {} neurons, model has V={}",
            x.neurons(),
            theta.visible()
        )));
    }
    let obs = PreparedTrain::new(x, &cfg.kernel);
    let configs = configurations(x.bins(), theta.hidden(), m);
    let table = configs
        .par_iter()
        .map(|z| enum_log_joint(theta, &obs, z, dist, m, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((configs, table))
}

/// `ln q(Z | X)` for every configuration, optionally with gradients.
pub fn log_q_table(
    phi: &VariationalParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    m_enum: usize,
    want_grad: bool,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let m = enum_states(dist, m_enum)?;
    check_budget(x.bins(), phi.hidden())?;
    let obs = PreparedTrain::new(x, &cfg.kernel);
    let configs = configurations(x.bins(), phi.hidden(), m);
    configs
        .par_iter()
        .map_init(Tape::new, |tape, z| enum_log_q(tape, phi, &obs, z, dist, m, cfg, want_grad))
        .collect()
}

/// ELBO, evidence and KL from aligned `ln p(X, Z)` and `ln q(Z)` tables.
pub fn elbo_from_tables(log_joint: &[f64], log_q: &[f64]) -> EnumeratedElbo {
    let log_evidence = logsumexp(log_joint);
    let mut elbo = 0.0;
    let mut kl = 0.0;
    for (&lp, &lq) in log_joint.iter().zip(log_q) {
        let q = lq.exp();
        if q > 0.0 {
            elbo += q * (lp - lq);
            kl += q * (lq - (lp - log_evidence));
        }
    }
    EnumeratedElbo { elbo, log_evidence, kl }
}

/// Exact ELBO, log-evidence and KL by summing over all hidden configurations.
pub fn enumerate_elbo(
    theta: &GenerativeParams,
    phi: &VariationalParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    m_enum: usize,
) -> Result<EnumeratedElbo> {
    check_compatible(theta, phi, x)?;
    let (_, lp) = log_joint_table(theta, x, dist, cfg, m_enum)?;
    let lq: Vec<f64> = log_q_table(phi, x, dist, cfg, m_enum, false)?
        .into_iter()
        .map(|(v, _)| v)
        .collect();
    Ok(elbo_from_tables(&lp, &lq))
}

/// Exact ELBO and its φ-gradient `Σ_Z q(Z)(ln p − ln q) ∇ ln q(Z)` given a
/// precomputed `ln p` table.
pub fn exact_grad_phi_from_table(
    phi: &VariationalParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    m_enum: usize,
    log_joint: &[f64],
) -> Result<(EnumeratedElbo, Vec<f64>)> {
    let lq = log_q_table(phi, x, dist, cfg, m_enum, true)?;
    if lq.len() != log_joint.len() {
        return Err(Error::Usage("log-joint table does not match the configuration count".into()));
    }
    let mut grad = vec![0.0; phi.flat_len()];
    for ((v, g), &lp) in lq.iter().zip(log_joint) {
        let w = v.exp() * (lp - v);
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += w * b);
    }
    for (g, free) in grad.iter_mut().zip(phi.flat_mask()) {
        if !free {
            *g = 0.0;
        }
    }
    let values: Vec<f64> = lq.iter().map(|(v, _)| *v).collect();
    Ok((elbo_from_tables(log_joint, &values), grad))
}

/// Exact ELBO and its φ-gradient.
pub fn enumerate_elbo_grad_phi(
    theta: &GenerativeParams,
    phi: &VariationalParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    m_enum: usize,
) -> Result<(EnumeratedElbo, Vec<f64>)> {
    check_compatible(theta, phi, x)?;
    let (_, lp) = log_joint_table(theta, x, dist, cfg, m_enum)?;
    exact_grad_phi_from_table(phi, x, dist, cfg, m_enum, &lp)
}

/// Normalized `ln p(Z | X)` over every enumerable configuration.
pub fn enumerate_posterior(
    theta: &GenerativeParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    m_enum: usize,
) -> Result<Vec<(Array2<u32>, f64)>> {
    let (configs, lp) = log_joint_table(theta, x, dist, cfg, m_enum)?;
    let norm = logsumexp(&lp);
    Ok(configs.into_iter().zip(lp).map(|(z, l)| (z, l - norm)).collect())
}
