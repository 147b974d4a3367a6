//! Hidden spike-count distributions.
//!
//! Every distribution is parameterized by a single mean (firing rate) `f`:
//!
//! | kind          | sample                        | pathwise |
//! |---------------|-------------------------------|----------|
//! | Poisson       | `Poisson(f)`                  | no       |
//! | Categorical   | `Cat(π(f))`, truncated Poisson| no       |
//! | GumbelSoftmax | `GS(π(f); τ)` on the simplex  | yes      |
//! | Exponential   | `-f ln(1-u)`                  | yes      |
//! | Rayleigh      | scale `√(2/π) f`              | yes      |
//! | HalfNormal    | scale `√(π/2) f`              | yes      |
//!
//! Each kind comes in two flavours: plain `f64` functions, and tape-recorded
//! variants driven by pre-drawn uniform noise so that a sample is a
//! deterministic, differentiable function of its rate.
//!
//! Notes on the formulas used. The truncated Poisson head uses the Poisson pmf
//! `f^m e^{-f} / m!`. The exponential density is the mean-`f` density
//! `(1/f) exp(-z/f)`, consistent with the sampler. The Gumbel-Softmax density
//! carries the `-M` exponent on its sum factor, which is what makes it
//! integrate to one.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::rng::{gumbel_from_uniform, SeededRng};
use crate::math::special::{erf_inv, ln_factorial, ln_gamma, logsumexp, norm_inv};
use crate::math::{Tape, Var};

/// Probabilities are floored here before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
/// Rates are floored here inside logarithms and divisions.
pub const RATE_FLOOR: f64 = 1e-8;
pub const DEFAULT_TRUNCATION: usize = 5;
pub const DEFAULT_TEMPERATURE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistKind {
    Poisson,
    Categorical,
    GumbelSoftmax,
    Exponential,
    Rayleigh,
    HalfNormal,
}

impl DistKind {
    pub const ALL: [DistKind; 6] = [
        DistKind::Poisson,
        DistKind::Categorical,
        DistKind::GumbelSoftmax,
        DistKind::Exponential,
        DistKind::Rayleigh,
        DistKind::HalfNormal,
    ];

    pub fn pathwise_capable(self) -> bool {
        !matches!(self, DistKind::Poisson | DistKind::Categorical)
    }

    pub fn is_discrete(self) -> bool {
        matches!(self, DistKind::Poisson | DistKind::Categorical)
    }

    pub fn is_continuous(self) -> bool {
        matches!(
            self,
            DistKind::Exponential | DistKind::Rayleigh | DistKind::HalfNormal
        )
    }

    pub fn short_name(self) -> &'static str {
        match self {
            DistKind::Poisson => "pois",
            DistKind::Categorical => "cat",
            DistKind::GumbelSoftmax => "gs",
            DistKind::Exponential => "exp",
            DistKind::Rayleigh => "ray",
            DistKind::HalfNormal => "hn",
        }
    }
}

impl fmt::Display for DistKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for DistKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistKind::ALL
            .into_iter()
            .find(|k| k.short_name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown hidden distribution `{s}`")))
    }
}

/// A hidden spike distribution with its truncation level and temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenDist {
    kind: DistKind,
    m: usize,
    tau: f64,
}

impl HiddenDist {
    pub fn new(kind: DistKind, m: usize, tau: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::Domain(format!("truncation level M must be ≥ 2, got {m}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Domain(format!("temperature τ must be > 0, got {tau}")));
        }
        Ok(Self { kind, m, tau })
    }

    /// Default truncation `M = 5` and temperature `τ = 0.5`.
    pub fn of(kind: DistKind) -> Self {
        Self {
            kind,
            m: DEFAULT_TRUNCATION,
            tau: DEFAULT_TEMPERATURE,
        }
    }

    pub fn kind(&self) -> DistKind {
        self.kind
    }

    pub fn truncation(&self) -> usize {
        self.m
    }

    pub fn temperature(&self) -> f64 {
        self.tau
    }

    pub fn pathwise_capable(&self) -> bool {
        self.kind.pathwise_capable()
    }

    /// Uniform draws consumed per hidden cell.
    pub fn noise_width(&self) -> usize {
        match self.kind {
            DistKind::GumbelSoftmax => self.m,
            _ => 1,
        }
    }
}

// ---------------------------------------------------------------------------
// Truncated Poisson / categorical
// ---------------------------------------------------------------------------

/// Poisson truncated to `{0, …, M-1}`: the head `π_m = f^m e^{-f}/m!` for
/// `m ≥ 1`, the complement in `π_0`, floored at [`PROB_FLOOR`] and
/// renormalized.
pub fn truncated_poisson_probs(f: f64, m: usize) -> Result<Vec<f64>> {
    if !(f >= 0.0) {
        return Err(Error::Domain(format!("rate must be ≥ 0, got {f}")));
    }
    if m < 2 {
        return Err(Error::Domain(format!("truncation level M must be ≥ 2, got {m}")));
    }
    let mut p = vec![0.0; m];
    for (k, pk) in p.iter_mut().enumerate().skip(1) {
        *pk = if f == 0.0 {
            0.0
        } else {
            (k as f64 * f.ln() - f - ln_factorial(k as u64)).exp()
        };
    }
    p[0] = 1.0 - p[1..].iter().sum::<f64>();
    for pk in &mut p {
        *pk = pk.max(PROB_FLOOR);
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|pk| *pk /= s);
    Ok(p)
}

pub fn poisson_log_pmf(z: i64, f: f64) -> Result<f64> {
    if z < 0 {
        return Err(Error::Domain(format!("spike count must be ≥ 0, got {z}")));
    }
    if !(f >= 0.0) {
        return Err(Error::Domain(format!("rate must be ≥ 0, got {f}")));
    }
    if f == 0.0 {
        return Ok(if z == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(z as f64 * f.ln() - f - ln_factorial(z as u64))
}

/// Inverse-CDF Poisson draw. Above a rate of 500 the pmf underflows, so a
/// rounded normal approximation is used there instead.
pub fn poisson_from_uniform(f: f64, u: f64) -> u32 {
    if f <= 0.0 {
        return 0;
    }
    if f > 500.0 {
        return (f + f.sqrt() * norm_inv(u)).round().max(0.0) as u32;
    }
    let mut k = 0u32;
    let mut p = (-f).exp();
    let mut cdf = p;
    while cdf < u {
        k += 1;
        p *= f / k as f64;
        cdf += p;
        if p == 0.0 && cdf < u {
            break;
        }
    }
    k
}

pub fn poisson_sample(f: f64, rng: &mut SeededRng) -> u32 {
    poisson_from_uniform(f, rng.uniform())
}

pub fn categorical_from_uniform(pi: &[f64], u: f64) -> usize {
    let mut cdf = 0.0;
    for (k, &p) in pi.iter().enumerate() {
        cdf += p;
        if u < cdf {
            return k;
        }
    }
    pi.len() - 1
}

pub fn categorical_sample(pi: &[f64], rng: &mut SeededRng) -> usize {
    categorical_from_uniform(pi, rng.uniform())
}

pub fn categorical_log_pmf(z: usize, pi: &[f64]) -> Result<f64> {
    pi.get(z)
        .map(|p| p.max(PROB_FLOOR).ln())
        .ok_or_else(|| Error::Domain(format!("category {z} outside 0..{}", pi.len())))
}

// ---------------------------------------------------------------------------
// Gumbel-Softmax
// ---------------------------------------------------------------------------

/// Log of a Gumbel-Softmax point, given its Gumbel noise.
pub fn gs_log_from_gumbels(pi: &[f64], tau: f64, gumbels: &[f64]) -> Vec<f64> {
    let y: Vec<f64> = pi
        .iter()
        .zip(gumbels)
        .map(|(&p, &g)| (p.max(PROB_FLOOR).ln() + g) / tau)
        .collect();
    let lse = logsumexp(&y);
    y.iter().map(|&v| v - lse).collect()
}

pub fn gs_sample(pi: &[f64], tau: f64, rng: &mut SeededRng) -> Vec<f64> {
    let g: Vec<f64> = (0..pi.len()).map(|_| gumbel_from_uniform(rng.uniform())).collect();
    gs_log_from_gumbels(pi, tau, &g).into_iter().map(f64::exp).collect()
}

fn gs_log_pdf_from_logs(log_z: &[f64], pi: &[f64], tau: f64) -> f64 {
    let m = pi.len() as f64;
    let lp: Vec<f64> = pi.iter().map(|p| p.max(PROB_FLOOR).ln()).collect();
    let mix: Vec<f64> = lp.iter().zip(log_z).map(|(&l, &z)| l - tau * z).collect();
    ln_gamma(m) + (m - 1.0) * tau.ln() - m * logsumexp(&mix)
        + lp.iter().zip(log_z).map(|(&l, &z)| l - (tau + 1.0) * z).sum::<f64>()
}

/// Gumbel-Softmax log density of a point strictly inside the simplex.
pub fn gs_log_pdf(z: &[f64], pi: &[f64], tau: f64) -> Result<f64> {
    if z.len() != pi.len() {
        return Err(Error::Usage(format!(
            "soft one-hot has {} entries, probabilities {}",
            z.len(),
            pi.len()
        )));
    }
    if let Some(bad) = z.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("soft one-hot entry {bad} not strictly positive")));
    }
    let log_z: Vec<f64> = z.iter().map(|v| v.ln()).collect();
    Ok(gs_log_pdf_from_logs(&log_z, pi, tau))
}

/// `Σ_m m·z̃_m`.
pub fn soft_count(z: &[f64]) -> f64 {
    z.iter().enumerate().map(|(m, &v)| m as f64 * v).sum()
}

// ---------------------------------------------------------------------------
// Continuous relaxations: each sample is `f` times a noise-only factor
// ---------------------------------------------------------------------------

fn check_rate(f: f64) -> Result<()> {
    if f > 0.0 && f.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("rate must be > 0, got {f}")))
    }
}

fn check_support(z: f64) -> Result<()> {
    if z >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("sample must be ≥ 0, got {z}")))
    }
}

/// Noise factor `κ(u)` such that a sample with mean `f` is `f·κ(u)`.
pub fn continuous_unit(kind: DistKind, u: f64) -> f64 {
    match kind {
        DistKind::Exponential => -(-u).ln_1p(),
        DistKind::Rayleigh => (2.0 / PI).sqrt() * (-2.0 * (-u).ln_1p()).sqrt(),
        DistKind::HalfNormal => (PI / 2.0).sqrt() * std::f64::consts::SQRT_2 * erf_inv(u),
        _ => panic!("{kind} is not a continuous relaxation"),
    }
}

pub fn exp_from_uniform(f: f64, u: f64) -> f64 {
    f * continuous_unit(DistKind::Exponential, u)
}

pub fn exp_sample(f: f64, rng: &mut SeededRng) -> Result<f64> {
    check_rate(f)?;
    Ok(exp_from_uniform(f, rng.uniform()))
}

pub fn exp_log_pdf(z: f64, f: f64) -> Result<f64> {
    check_rate(f)?;
    check_support(z)?;
    Ok(-f.ln() - z / f)
}

pub fn rayleigh_from_uniform(f: f64, u: f64) -> f64 {
    f * continuous_unit(DistKind::Rayleigh, u)
}

pub fn rayleigh_sample(f: f64, rng: &mut SeededRng) -> Result<f64> {
    check_rate(f)?;
    Ok(rayleigh_from_uniform(f, rng.uniform()))
}

pub fn rayleigh_log_pdf(z: f64, f: f64) -> Result<f64> {
    check_rate(f)?;
    check_support(z)?;
    Ok((PI * z / (2.0 * f * f)).ln() - PI * z * z / (4.0 * f * f))
}

pub fn halfnormal_from_uniform(f: f64, u: f64) -> f64 {
    f * continuous_unit(DistKind::HalfNormal, u)
}

pub fn halfnormal_sample(f: f64, rng: &mut SeededRng) -> Result<f64> {
    check_rate(f)?;
    Ok(halfnormal_from_uniform(f, rng.uniform()))
}

pub fn halfnormal_log_pdf(z: f64, f: f64) -> Result<f64> {
    check_rate(f)?;
    check_support(z)?;
    Ok((2.0 / (PI * f)).ln() - z * z / (PI * f * f))
}

// ---------------------------------------------------------------------------
// Tape-recorded variants
// ---------------------------------------------------------------------------

/// One hidden cell as it lives on a tape.
#[derive(Clone, Debug)]
pub enum TapeCell {
    Count(u32),
    /// Log coordinates of a soft one-hot point.
    Soft(Vec<Var>),
    Real(Var),
}

impl TapeCell {
    /// The (soft) spike count that feeds back into GLM history. `None` for an
    /// integer count, which the caller treats as a constant.
    pub fn count_var(&self, tape: &mut Tape) -> Option<Var> {
        match self {
            TapeCell::Count(_) => None,
            TapeCell::Soft(log_z) => Some(tape_soft_count(tape, log_z)),
            TapeCell::Real(z) => Some(*z),
        }
    }

    pub fn count_value(&self, tape: &Tape) -> f64 {
        match self {
            TapeCell::Count(c) => *c as f64,
            TapeCell::Soft(log_z) => log_z
                .iter()
                .enumerate()
                .map(|(m, &v)| m as f64 * tape.value(v).exp())
                .sum(),
            TapeCell::Real(z) => tape.value(*z),
        }
    }
}

fn tape_ln_rate(tape: &mut Tape, f: Var) -> Var {
    tape.ln_floored(f, RATE_FLOOR)
}

/// `ln π(f)` for the truncated Poisson, recorded on the tape.
pub fn tape_truncated_log_probs(tape: &mut Tape, f: Var, m: usize) -> Vec<Var> {
    let ln_f = tape_ln_rate(tape, f);
    let mut p = Vec::with_capacity(m);
    for k in 1..m {
        let lp = tape.affine(-ln_factorial(k as u64), &[(ln_f, k as f64), (f, -1.0)], &[]);
        p.push(tape.exp(lp));
    }
    let head: Vec<(Var, f64)> = p.iter().map(|&v| (v, -1.0)).collect();
    let p0 = tape.affine(1.0, &head, &[]);
    p.insert(0, p0);
    let clamped: Vec<Var> = p.iter().map(|&v| tape.max_const(v, PROB_FLOOR)).collect();
    let total = tape.sum(&clamped);
    let ln_total = tape.ln(total);
    clamped
        .iter()
        .map(|&v| {
            let l = tape.ln(v);
            tape.sub(l, ln_total)
        })
        .collect()
}

pub fn tape_poisson_log_pmf(tape: &mut Tape, z: u32, f: Var) -> Var {
    let ln_f = tape_ln_rate(tape, f);
    tape.affine(-ln_factorial(z as u64), &[(ln_f, z as f64), (f, -1.0)], &[])
}

/// Log coordinates of a Gumbel-Softmax sample given fixed Gumbel noise.
pub fn tape_gs_sample(tape: &mut Tape, log_pi: &[Var], tau: f64, gumbels: &[f64]) -> Vec<Var> {
    let y: Vec<Var> = log_pi
        .iter()
        .zip(gumbels)
        .map(|(&l, &g)| tape.affine(g / tau, &[(l, 1.0 / tau)], &[]))
        .collect();
    let lse = tape.logsumexp(&y);
    y.iter().map(|&v| tape.sub(v, lse)).collect()
}

pub fn tape_gs_log_pdf(tape: &mut Tape, log_z: &[Var], log_pi: &[Var], tau: f64) -> Var {
    let m = log_pi.len() as f64;
    let mix: Vec<Var> = log_pi
        .iter()
        .zip(log_z)
        .map(|(&l, &z)| tape.affine(0.0, &[(l, 1.0), (z, -tau)], &[]))
        .collect();
    let lse = tape.logsumexp(&mix);
    let mut terms: Vec<(Var, f64)> = vec![(lse, -m)];
    for (&l, &z) in log_pi.iter().zip(log_z) {
        terms.push((l, 1.0));
        terms.push((z, -(tau + 1.0)));
    }
    tape.affine(ln_gamma(m) + (m - 1.0) * tau.ln(), &terms, &[])
}

pub fn tape_soft_count(tape: &mut Tape, log_z: &[Var]) -> Var {
    let terms: Vec<(Var, f64)> = log_z
        .iter()
        .enumerate()
        .skip(1)
        .map(|(m, &l)| (tape.exp(l), m as f64))
        .collect();
    tape.affine(0.0, &terms, &[])
}

fn tape_continuous_log_pdf(tape: &mut Tape, kind: DistKind, z: Var, f: Var) -> Var {
    let f = tape.max_const(f, RATE_FLOOR);
    let ln_f = tape.ln(f);
    match kind {
        DistKind::Exponential => {
            let r = tape.div(z, f);
            tape.affine(0.0, &[(ln_f, -1.0), (r, -1.0)], &[])
        }
        DistKind::Rayleigh => {
            let ln_z = tape.ln_floored(z, f64::MIN_POSITIVE);
            let r = tape.div(z, f);
            let r2 = tape.square(r);
            tape.affine(
                (PI / 2.0).ln(),
                &[(ln_z, 1.0), (ln_f, -2.0), (r2, -PI / 4.0)],
                &[],
            )
        }
        DistKind::HalfNormal => {
            let r = tape.div(z, f);
            let r2 = tape.square(r);
            tape.affine((2.0 / PI).ln(), &[(ln_f, -1.0), (r2, -1.0 / PI)], &[])
        }
        _ => unreachable!(),
    }
}

impl HiddenDist {
    /// Draw one cell at rate `f` from the given uniforms and return it with
    /// its log density at `f`. With `pathwise` the sample is recorded as a
    /// function of `f`; otherwise it is a constant and only the density
    /// depends on `f`. Poisson and categorical cells are always constants.
    pub fn tape_draw(&self, tape: &mut Tape, f: Var, noise: &[f64], pathwise: bool) -> (TapeCell, Var) {
        let fv = tape.value(f);
        match self.kind {
            DistKind::Poisson => {
                let z = poisson_from_uniform(fv, noise[0]);
                (TapeCell::Count(z), tape_poisson_log_pmf(tape, z, f))
            }
            DistKind::Categorical => {
                let log_pi = tape_truncated_log_probs(tape, f, self.m);
                let pi: Vec<f64> = log_pi.iter().map(|&l| tape.value(l).exp()).collect();
                let z = categorical_from_uniform(&pi, noise[0]);
                (TapeCell::Count(z as u32), log_pi[z])
            }
            DistKind::GumbelSoftmax => {
                let log_pi = tape_truncated_log_probs(tape, f, self.m);
                let g: Vec<f64> = noise.iter().map(|&u| gumbel_from_uniform(u)).collect();
                let log_z = if pathwise {
                    tape_gs_sample(tape, &log_pi, self.tau, &g)
                } else {
                    let pi: Vec<f64> = log_pi.iter().map(|&l| tape.value(l).exp()).collect();
                    gs_log_from_gumbels(&pi, self.tau, &g)
                        .into_iter()
                        .map(|v| tape.constant(v))
                        .collect()
                };
                let lp = tape_gs_log_pdf(tape, &log_z, &log_pi, self.tau);
                (TapeCell::Soft(log_z), lp)
            }
            kind => {
                let unit = continuous_unit(kind, noise[0]);
                let z = if pathwise {
                    tape.scale(f, unit)
                } else {
                    tape.constant(fv * unit)
                };
                let lp = tape_continuous_log_pdf(tape, kind, z, f);
                (TapeCell::Real(z), lp)
            }
        }
    }

    /// Log density of a given cell at rate `f`.
    pub fn tape_log_density(&self, tape: &mut Tape, cell: &TapeCell, f: Var) -> Result<Var> {
        match (self.kind, cell) {
            (DistKind::Poisson, TapeCell::Count(z)) => Ok(tape_poisson_log_pmf(tape, *z, f)),
            (DistKind::Categorical, TapeCell::Count(z)) => {
                let z = *z as usize;
                if z >= self.m {
                    return Err(Error::Domain(format!(
                        "category {z} outside 0..{}",
                        self.m
                    )));
                }
                Ok(tape_truncated_log_probs(tape, f, self.m)[z])
            }
            (DistKind::GumbelSoftmax, TapeCell::Soft(log_z)) => {
                if log_z.len() != self.m {
                    return Err(Error::Usage(format!(
                        "soft one-hot has {} entries, M = {}",
                        log_z.len(),
                        self.m
                    )));
                }
                let log_pi = tape_truncated_log_probs(tape, f, self.m);
                Ok(tape_gs_log_pdf(tape, log_z, &log_pi, self.tau))
            }
            (kind, TapeCell::Real(z)) if kind.is_continuous() => {
                Ok(tape_continuous_log_pdf(tape, kind, *z, f))
            }
            (kind, cell) => Err(Error::Usage(format!(
                "hidden sample {} does not match distribution {kind}",
                match cell {
                    TapeCell::Count(_) => "count",
                    TapeCell::Soft(_) => "soft one-hot",
                    TapeCell::Real(_) => "continuous",
                }
            ))),
        }
    }

    /// Plain log density of a discrete count at rate `f`.
    pub fn discrete_log_mass(&self, z: u32, f: f64) -> Result<f64> {
        match self.kind {
            DistKind::Poisson => poisson_log_pmf(z as i64, f),
            DistKind::Categorical => categorical_log_pmf(z as usize, &truncated_poisson_probs(f, self.m)?),
            k => Err(Error::Usage(format!("{k} is not a discrete distribution"))),
        }
    }
}
