//! The generative POGLM `p(X, Z; θ)`.
//!
//! Neurons `0..V` are visible and `V..V+H` hidden. The firing rate of neuron
//! `n` at bin `t` is
//!
//! ```text
//! f[t,n] = σ(b[n] + Σ_j W[n,j] · Σ_l ψ[l] · s[t-l, j])
//! ```
//!
//! where `s` is the visible count for `j < V` and the (possibly soft or
//! continuous) hidden count otherwise. Counts before the first bin are zero.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dist::{
    categorical_sample, continuous_unit, gs_sample, poisson_sample, soft_count, truncated_poisson_probs,
    DistKind, HiddenDist, TapeCell,
};
use crate::error::{Error, Result};
use crate::math::special::softplus;
use crate::math::{SeededRng, Tape, Var};

/// Log density of one hidden cell at a rate node.
pub type CellDensity<'a> = dyn FnMut(&mut Tape, &TapeCell, Var) -> Result<Var> + 'a;

/// Rates above this abort a simulation.
pub const MAX_RATE: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    #[default]
    Softplus,
    Exp,
}

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Softplus => softplus(x),
            Nonlinearity::Exp => x.exp(),
        }
    }

    pub fn tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Nonlinearity::Softplus => tape.softplus(x),
            Nonlinearity::Exp => tape.exp(x),
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Nonlinearity::Softplus => "softplus",
            Nonlinearity::Exp => "exp",
        })
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(Nonlinearity::Softplus),
            "exp" => Ok(Nonlinearity::Exp),
            _ => Err(Error::Usage(format!("unknown nonlinearity `{s}`"))),
        }
    }
}

/// Positive history weights `ψ_1..ψ_L` summing to one; `ψ_l` multiplies the
/// count `l` bins in the past.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BasisKernel {
    weights: Vec<f64>,
}

impl BasisKernel {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Domain(format!(
                "basis kernel weights must be positive and finite: {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        Ok(Self {
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// `ψ_l ∝ exp(-(l-1)/decay)` for `l = 1..=len`.
    pub fn exponential(len: usize, decay: f64) -> Result<Self> {
        Self::new((0..len).map(|l| (-(l as f64) / decay).exp()).collect())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Default for BasisKernel {
    fn default() -> Self {
        Self::exponential(5, 2.0).expect("default kernel is valid")
    }
}

impl TryFrom<Vec<f64>> for BasisKernel {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<BasisKernel> for Vec<f64> {
    fn from(k: BasisKernel) -> Vec<f64> {
        k.weights
    }
}

/// Model structure shared by the generative and variational models.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kernel: BasisKernel,
    pub link: Nonlinearity,
}

/// Observed spike counts, `T × V`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTrain {
    counts: Array2<u32>,
    bin_width: Option<f64>,
}

impl SpikeTrain {
    pub fn new(counts: Array2<u32>, bin_width: Option<f64>) -> Result<Self> {
        if counts.nrows() == 0 {
            return Err(Error::Usage("a spike train needs at least one time bin".into()));
        }
        if let Some(w) = bin_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Domain(format!("bin width must be > 0, got {w}")));
            }
        }
        Ok(Self { counts, bin_width })
    }

    pub fn counts(&self) -> &Array2<u32> {
        &self.counts
    }

    pub fn bins(&self) -> usize {
        self.counts.nrows()
    }

    pub fn neurons(&self) -> usize {
        self.counts.ncols()
    }

    pub fn bin_width(&self) -> Option<f64> {
        self.bin_width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn as_f64(&self) -> Array2<f64> {
        self.counts.mapv(|c| c as f64)
    }
}

/// One draw of the hidden spike train.
#[derive(Clone, Debug, PartialEq)]
pub enum HiddenSample {
    /// `T × H` integer counts.
    Discrete(Array2<u32>),
    /// `T × H × M` points on the simplex.
    SoftOneHot(Array3<f64>),
    /// `T × H` nonnegative reals.
    Continuous(Array2<f64>),
}

impl HiddenSample {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            HiddenSample::Discrete(z) => z.dim(),
            HiddenSample::SoftOneHot(z) => (z.dim().0, z.dim().1),
            HiddenSample::Continuous(z) => z.dim(),
        }
    }

    pub fn empty(bins: usize) -> Self {
        HiddenSample::Discrete(Array2::zeros((bins, 0)))
    }

    /// The count that enters GLM history: integers, soft counts, or reals.
    pub fn counts(&self) -> Array2<f64> {
        match self {
            HiddenSample::Discrete(z) => z.mapv(|c| c as f64),
            HiddenSample::SoftOneHot(z) => {
                let (t, h, _) = z.dim();
                Array2::from_shape_fn((t, h), |(i, j)| soft_count(&z.slice(s![i, j, ..]).to_vec()))
            }
            HiddenSample::Continuous(z) => z.clone(),
        }
    }

    /// Whether this variant can hold draws of `kind`. An empty sample
    /// matches every kind.
    pub fn matches(&self, kind: DistKind) -> bool {
        self.shape().1 == 0
            || matches!(
            (self, kind),
            (HiddenSample::Discrete(_), DistKind::Poisson | DistKind::Categorical)
                | (HiddenSample::SoftOneHot(_), DistKind::GumbelSoftmax)
                | (
                    HiddenSample::Continuous(_),
                    DistKind::Exponential | DistKind::Rayleigh | DistKind::HalfNormal
                )
        )
    }

    /// Constant tape cells for this sample, row-major over `(t, h)`.
    pub fn to_cells(&self, tape: &mut Tape, dist: &HiddenDist) -> Result<Vec<TapeCell>> {
        if !self.matches(dist.kind()) {
            return Err(Error::Usage(format!(
                "hidden sample variant does not match distribution {}",
                dist.kind()
            )));
        }
        Ok(match self {
            HiddenSample::Discrete(z) => z.iter().map(|&c| TapeCell::Count(c)).collect(),
            HiddenSample::SoftOneHot(z) => {
                let (t, h, m) = z.dim();
                if m != dist.truncation() {
                    return Err(Error::Usage(format!(
                        "soft one-hot width {m} differs from M = {}",
                        dist.truncation()
                    )));
                }
                let mut cells = Vec::with_capacity(t * h);
                for i in 0..t {
                    for j in 0..h {
                        let logs = (0..m).map(|k| tape.constant(z[[i, j, k]].ln())).collect();
                        cells.push(TapeCell::Soft(logs));
                    }
                }
                cells
            }
            HiddenSample::Continuous(z) => z.iter().map(|&v| TapeCell::Real(tape.constant(v))).collect(),
        })
    }

    /// Rebuild a sample from tape cells laid out row-major over `(t, h)`.
    pub fn from_cells(tape: &Tape, cells: &[TapeCell], bins: usize, hidden: usize) -> Self {
        match cells.first() {
            None | Some(TapeCell::Count(_)) => HiddenSample::Discrete(Array2::from_shape_fn((bins, hidden), |(t, h)| {
                match cells[t * hidden + h] {
                    TapeCell::Count(c) => c,
                    _ => unreachable!("mixed cell kinds"),
                }
            })),
            Some(TapeCell::Soft(first)) => {
                let m = first.len();
                HiddenSample::SoftOneHot(Array3::from_shape_fn((bins, hidden, m), |(t, h, k)| {
                    match &cells[t * hidden + h] {
                        TapeCell::Soft(l) => tape.value(l[k]).exp(),
                        _ => unreachable!("mixed cell kinds"),
                    }
                }))
            }
            Some(TapeCell::Real(_)) => HiddenSample::Continuous(Array2::from_shape_fn((bins, hidden), |(t, h)| {
                match cells[t * hidden + h] {
                    TapeCell::Real(v) => tape.value(v),
                    _ => unreachable!("mixed cell kinds"),
                }
            })),
        }
    }
}

/// `θ = {b, W}` with `b ∈ ℝ^N`, `W ∈ ℝ^{N×N}`, visible neurons first.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeParams {
    visible: usize,
    hidden: usize,
    pub b: Array1<f64>,
    pub w: Array2<f64>,
}

impl GenerativeParams {
    pub fn new(visible: usize, hidden: usize, b: Array1<f64>, w: Array2<f64>) -> Result<Self> {
        let n = visible + hidden;
        if visible == 0 {
            return Err(Error::Usage("at least one visible neuron is required".into()));
        }
        if b.len() != n || w.dim() != (n, n) {
            return Err(Error::Usage(format!(
                "parameter shapes b={} W={:?} do not match V={visible}, H={hidden}",
                b.len(),
                w.dim()
            )));
        }
        Ok(Self { visible, hidden, b, w })
    }

    pub fn zeros(visible: usize, hidden: usize) -> Result<Self> {
        let n = visible + hidden;
        Self::new(visible, hidden, Array1::zeros(n), Array2::zeros((n, n)))
    }

    /// `w ~ Unif(-w_range, w_range)`, `b ~ Unif(-b_range, b_range)`.
    pub fn random(visible: usize, hidden: usize, w_range: f64, b_range: f64, rng: &mut SeededRng) -> Result<Self> {
        let n = visible + hidden;
        let w = Array2::from_shape_fn((n, n), |_| rng.uniform_range(-w_range, w_range));
        let b = Array1::from_shape_fn(n, |_| rng.uniform_range(-b_range, b_range));
        Self::new(visible, hidden, b, w)
    }

    pub fn visible(&self) -> usize {
        self.visible
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn neurons(&self) -> usize {
        self.visible + self.hidden
    }

    /// Flat layout: `b` followed by `W` in row-major order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.b.iter().chain(self.w.iter()).copied().collect()
    }

    pub fn flat_len(&self) -> usize {
        let n = self.neurons();
        n + n * n
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::Usage(format!(
                "flat θ has {} entries, expected {}",
                flat.len(),
                self.flat_len()
            )));
        }
        let n = self.neurons();
        self.b.iter_mut().zip(&flat[..n]).for_each(|(d, s)| *d = *s);
        self.w.iter_mut().zip(&flat[n..]).for_each(|(d, s)| *d = *s);
        Ok(())
    }

    /// Relabel hidden neurons: new hidden `i` is old hidden `perm[i]`.
    pub fn permute_hidden(&self, perm: &[usize]) -> Self {
        let idx = full_permutation(self.visible, perm);
        let n = self.neurons();
        Self {
            visible: self.visible,
            hidden: self.hidden,
            b: Array1::from_shape_fn(n, |i| self.b[idx[i]]),
            w: Array2::from_shape_fn((n, n), |(i, j)| self.w[[idx[i], idx[j]]]),
        }
    }
}

pub(crate) fn full_permutation(visible: usize, perm: &[usize]) -> Vec<usize> {
    (0..visible).chain(perm.iter().map(|&p| visible + p)).collect()
}

/// `out[t,n] = Σ_{l=1..L} counts[t-l, n] ψ_l`, zero before the first bin.
pub fn convolve_history(counts: ArrayView2<f64>, kernel: &BasisKernel) -> Array2<f64> {
    let (t_len, n) = counts.dim();
    let mut out = Array2::zeros((t_len, n));
    for t in 0..t_len {
        for (l, &psi) in kernel.weights().iter().enumerate() {
            let lag = l + 1;
            if lag > t {
                break;
            }
            for j in 0..n {
                out[[t, j]] += psi * counts[[t - lag, j]];
            }
        }
    }
    out
}

/// `out[t,n] = Σ_{l=1..L} counts[t+l, n] ψ_l`, zero past the last bin.
pub fn convolve_future(counts: ArrayView2<f64>, kernel: &BasisKernel) -> Array2<f64> {
    let (t_len, n) = counts.dim();
    let mut out = Array2::zeros((t_len, n));
    for t in 0..t_len {
        for (l, &psi) in kernel.weights().iter().enumerate() {
            let s = t + l + 1;
            if s >= t_len {
                break;
            }
            for j in 0..n {
                out[[t, j]] += psi * counts[[s, j]];
            }
        }
    }
    out
}

/// A spike train with its filtered past and future drives precomputed.
#[derive(Clone, Debug)]
pub struct PreparedTrain {
    pub counts: Array2<u32>,
    pub past: Array2<f64>,
    pub future: Array2<f64>,
}

impl PreparedTrain {
    pub fn new(x: &SpikeTrain, kernel: &BasisKernel) -> Self {
        let xf = x.as_f64();
        Self {
            counts: x.counts().clone(),
            past: convolve_history(xf.view(), kernel),
            future: convolve_future(xf.view(), kernel),
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.nrows()
    }

    pub fn visible(&self) -> usize {
        self.counts.ncols()
    }
}

/// θ registered as tape leaves, in the flat layout of [`GenerativeParams::to_flat`].
#[derive(Clone, Debug)]
pub struct ThetaVars {
    pub n: usize,
    pub flat: Vec<Var>,
}

impl ThetaVars {
    pub fn register(tape: &mut Tape, theta: &GenerativeParams) -> Self {
        Self {
            n: theta.neurons(),
            flat: tape.vars(&theta.to_flat()),
        }
    }

    pub fn b(&self, i: usize) -> Var {
        self.flat[i]
    }

    pub fn w(&self, i: usize, j: usize) -> Var {
        self.flat[self.n + i * self.n + j]
    }
}

/// Filtered hidden history on the tape: `T × H`, row-major. Constant cells
/// contribute to the constant part of each node.
pub fn tape_hidden_history(
    tape: &mut Tape,
    cells: &[TapeCell],
    bins: usize,
    hidden: usize,
    kernel: &BasisKernel,
) -> Vec<Var> {
    let counts: Vec<(Option<Var>, f64)> = cells
        .iter()
        .map(|c| match c {
            TapeCell::Count(z) => (None, *z as f64),
            other => (other.count_var(tape), 0.0),
        })
        .collect();
    let mut out = Vec::with_capacity(bins * hidden);
    for t in 0..bins {
        for h in 0..hidden {
            let mut c = 0.0;
            let mut terms = Vec::new();
            for (l, &psi) in kernel.weights().iter().enumerate() {
                let lag = l + 1;
                if lag > t {
                    break;
                }
                match counts[(t - lag) * hidden + h] {
                    (Some(v), _) => terms.push((v, psi)),
                    (None, z) => c += psi * z,
                }
            }
            out.push(tape.affine(c, &terms, &[]));
        }
    }
    out
}

/// Rates for a single time bin on the tape: `(visible, hidden)` rate nodes.
/// `hidden_history` is the `H` filtered hidden drives at this bin.
pub fn tape_rates_at(
    tape: &mut Tape,
    theta: &ThetaVars,
    obs: &PreparedTrain,
    t: usize,
    hidden_history: &[Var],
    link: Nonlinearity,
) -> Vec<Var> {
    let v = obs.visible();
    let n = theta.n;
    let mut out = Vec::with_capacity(n);
    let mut lin = Vec::with_capacity(v + 1);
    let mut bil = Vec::with_capacity(n - v);
    for i in 0..n {
        lin.clear();
        bil.clear();
        lin.push((theta.b(i), 1.0));
        for j in 0..v {
            let d = obs.past[[t, j]];
            if d != 0.0 {
                lin.push((theta.w(i, j), d));
            }
        }
        for (h, &zh) in hidden_history.iter().enumerate() {
            bil.push((theta.w(i, v + h), zh));
        }
        let pre = tape.affine(0.0, &lin, &bil);
        out.push(link.tape(tape, pre));
    }
    out
}

/// Joint log-likelihood `ln p(X, Z; θ)` on the tape, returning the root and
/// the `T × N` rate nodes (row-major).
pub fn tape_joint_log_likelihood(
    tape: &mut Tape,
    theta: &ThetaVars,
    obs: &PreparedTrain,
    cells: &[TapeCell],
    dist: &HiddenDist,
    cfg: &ModelConfig,
) -> Result<(Var, Vec<Var>)> {
    tape_joint_log_likelihood_with(tape, theta, obs, cells, cfg, &mut |tape, cell, f| {
        dist.tape_log_density(tape, cell, f)
    })
}

/// [`tape_joint_log_likelihood`] with a custom hidden-cell density.
pub fn tape_joint_log_likelihood_with(
    tape: &mut Tape,
    theta: &ThetaVars,
    obs: &PreparedTrain,
    cells: &[TapeCell],
    cfg: &ModelConfig,
    density: &mut CellDensity<'_>,
) -> Result<(Var, Vec<Var>)> {
    let (bins, v) = obs.counts.dim();
    let h = theta.n - v;
    if cells.len() != bins * h {
        return Err(Error::Usage(format!(
            "hidden sample has {} cells, expected {bins}×{h}",
            cells.len()
        )));
    }
    let zhist = tape_hidden_history(tape, cells, bins, h, &cfg.kernel);
    let mut rates = Vec::with_capacity(bins * theta.n);
    let mut terms: Vec<(Var, f64)> = Vec::with_capacity(bins * (2 * v + h));
    let mut constant = 0.0;
    for t in 0..bins {
        let f = tape_rates_at(tape, theta, obs, t, &zhist[t * h..(t + 1) * h], cfg.link);
        for j in 0..v {
            let x = obs.counts[[t, j]];
            terms.push((f[j], -1.0));
            if x > 0 {
                let ln_f = tape.ln_floored(f[j], crate::dist::RATE_FLOOR);
                terms.push((ln_f, x as f64));
                constant -= crate::math::special::ln_factorial(x as u64);
            }
        }
        for k in 0..h {
            let lp = density(tape, &cells[t * h + k], f[v + k])?;
            terms.push((lp, 1.0));
        }
        rates.extend(f);
    }
    Ok((tape.affine(constant, &terms, &[]), rates))
}

fn check_dims(theta: &GenerativeParams, x: &SpikeTrain, z: &HiddenSample) -> Result<()> {
    if x.neurons() != theta.visible() {
        return Err(Error::Usage(format!(
            "spike train has {} neurons, model has V={}",
            x.neurons(),
            theta.visible()
        )));
    }
    if z.shape() != (x.bins(), theta.hidden()) {
        return Err(Error::Usage(format!(
            "hidden sample shape {:?} does not match T={}, H={}",
            z.shape(),
            x.bins(),
            theta.hidden()
        )));
    }
    Ok(())
}

/// Firing rates `(T × V, T × H)` given observed and hidden spikes.
pub fn rates(
    theta: &GenerativeParams,
    x: &SpikeTrain,
    z: &HiddenSample,
    cfg: &ModelConfig,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_dims(theta, x, z)?;
    let obs = PreparedTrain::new(x, &cfg.kernel);
    let (bins, v, h) = (x.bins(), theta.visible(), theta.hidden());
    let zc = z.counts();
    let zhist = convolve_history(zc.view(), &cfg.kernel);
    let mut tape = Tape::new();
    let tv = ThetaVars::register(&mut tape, theta);
    let mut fv = Array2::zeros((bins, v));
    let mut fh = Array2::zeros((bins, h));
    for t in 0..bins {
        let hist: Vec<Var> = (0..h).map(|k| tape.constant(zhist[[t, k]])).collect();
        let f = tape_rates_at(&mut tape, &tv, &obs, t, &hist, cfg.link);
        for j in 0..v {
            fv[[t, j]] = tape.value(f[j]);
        }
        for k in 0..h {
            fh[[t, k]] = tape.value(f[v + k]);
        }
    }
    Ok((fv, fh))
}

/// `ln p(X, Z; θ)` under the given hidden distribution.
pub fn joint_log_likelihood(
    theta: &GenerativeParams,
    x: &SpikeTrain,
    z: &HiddenSample,
    dist: &HiddenDist,
    cfg: &ModelConfig,
) -> Result<f64> {
    check_dims(theta, x, z)?;
    let obs = PreparedTrain::new(x, &cfg.kernel);
    let mut tape = Tape::new();
    let tv = ThetaVars::register(&mut tape, theta);
    let cells = z.to_cells(&mut tape, dist)?;
    let (ll, _) = tape_joint_log_likelihood(&mut tape, &tv, &obs, &cells, dist, cfg)?;
    Ok(tape.value(ll))
}

/// Ancestral simulation of `T` bins after `burn_in` discarded bins.
pub fn generate(
    theta: &GenerativeParams,
    bins: usize,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    burn_in: usize,
    rng: &mut SeededRng,
) -> Result<(SpikeTrain, HiddenSample)> {
    if bins == 0 {
        return Err(Error::Usage("cannot generate an empty spike train".into()));
    }
    let (v, h, n) = (theta.visible(), theta.hidden(), theta.neurons());
    let total = bins + burn_in;
    let psi = cfg.kernel.weights();
    // Count history that feeds the GLM: visible then hidden (soft) counts.
    let mut drive = Array2::<f64>::zeros((total, n));
    let mut x = Array2::<u32>::zeros((total, v));
    let m = dist.truncation();
    let mut soft = Array3::<f64>::zeros((if dist.kind() == DistKind::GumbelSoftmax { total } else { 0 }, h, m));
    let mut discrete = Array2::<u32>::zeros((total, h));
    let mut filt = vec![0.0; n];
    for t in 0..total {
        filt.iter_mut().for_each(|f| *f = 0.0);
        for (l, &p) in psi.iter().enumerate() {
            if l + 1 > t {
                break;
            }
            let row = drive.row(t - l - 1);
            for j in 0..n {
                filt[j] += p * row[j];
            }
        }
        let mut rate = vec![0.0; n];
        for i in 0..n {
            let pre = theta.b[i] + (0..n).map(|j| theta.w[[i, j]] * filt[j]).sum::<f64>();
            let f = cfg.link.apply(pre);
            if !(f <= MAX_RATE) {
                return Err(Error::Divergence {
                    t: t.saturating_sub(burn_in),
                    neuron: i,
                    rate: f,
                });
            }
            rate[i] = f;
        }
        for k in 0..h {
            let f = rate[v + k];
            let count = match dist.kind() {
                DistKind::Poisson => {
                    let c = poisson_sample(f, rng);
                    discrete[[t, k]] = c;
                    c as f64
                }
                DistKind::Categorical => {
                    let c = categorical_sample(&truncated_poisson_probs(f, m)?, rng) as u32;
                    discrete[[t, k]] = c;
                    c as f64
                }
                DistKind::GumbelSoftmax => {
                    let z = gs_sample(&truncated_poisson_probs(f, m)?, dist.temperature(), rng);
                    let c = soft_count(&z);
                    for (j, zj) in z.into_iter().enumerate() {
                        soft[[t, k, j]] = zj;
                    }
                    c
                }
                kind => f * continuous_unit(kind, rng.uniform()),
            };
            drive[[t, v + k]] = count;
        }
        for j in 0..v {
            let c = poisson_sample(rate[j], rng);
            x[[t, j]] = c;
            drive[[t, j]] = c as f64;
        }
    }
    let keep = s![burn_in.., ..];
    let xs = SpikeTrain::new(x.slice(keep).to_owned(), None)?;
    let z = match dist.kind() {
        DistKind::Poisson | DistKind::Categorical => HiddenSample::Discrete(discrete.slice(keep).to_owned()),
        DistKind::GumbelSoftmax => HiddenSample::SoftOneHot(soft.slice(s![burn_in.., .., ..]).to_owned()),
        _ => HiddenSample::Continuous(drive.slice(s![burn_in.., v..]).to_owned()),
    };
    Ok((xs, z))
}
