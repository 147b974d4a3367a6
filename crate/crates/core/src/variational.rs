//! Variational families `q(Z | X; φ)` over the hidden spikes.
//!
//! Every scheme gives each hidden cell a rate `σ(c_h + drive)` and draws the
//! cell from the configured [`HiddenDist`] at that rate. The drive is
//!
//! | scheme            | drive                                              |
//! |-------------------|----------------------------------------------------|
//! | homogeneous       | none                                               |
//! | mean-field        | none, but `c` is per time bin                      |
//! | forward           | filtered past visible spikes through `A[H←V]`      |
//! | forward-self      | forward plus filtered past hidden samples `A[H←H]` |
//! | forward-backward  | forward plus filtered future visible `A[V←H]ᵀ`     |
//!
//! `A` is stored as a dense `N × N` matrix; entries outside the scheme's mask
//! are kept at exactly zero.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, s};
use serde::{Deserialize, Serialize};

use crate::dist::{HiddenDist, TapeCell};
use crate::error::{Error, Result};
use crate::math::{SeededRng, Tape, Var};
use crate::model::{tape_hidden_history, CellDensity, full_permutation, HiddenSample, ModelConfig, PreparedTrain, SpikeTrain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    Homogeneous,
    MeanField,
    Forward,
    ForwardSelf,
    ForwardBackward,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Homogeneous,
        Scheme::MeanField,
        Scheme::Forward,
        Scheme::ForwardSelf,
        Scheme::ForwardBackward,
    ];

    /// The three schemes of the experiment matrix.
    pub const MATRIX: [Scheme; 3] = [Scheme::Forward, Scheme::ForwardSelf, Scheme::ForwardBackward];

    pub fn short_name(self) -> &'static str {
        match self {
            Scheme::Homogeneous => "hom",
            Scheme::MeanField => "mf",
            Scheme::Forward => "f",
            Scheme::ForwardSelf => "fs",
            Scheme::ForwardBackward => "fb",
        }
    }

    /// Whether hidden cells must be drawn one bin at a time.
    pub fn is_sequential(self) -> bool {
        self == Scheme::ForwardSelf
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.short_name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown scheme `{s}` (expected one of hom, mf, f, fs, fb)")))
    }
}

impl TryFrom<String> for Scheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> String {
        s.short_name().to_string()
    }
}

/// Free entries of `A` for a scheme.
pub fn scheme_mask(kind: Scheme, visible: usize, hidden: usize) -> Result<Array2<bool>> {
    if hidden == 0 {
        return Err(Error::Usage("no hidden neurons: a variational model is not needed".into()));
    }
    if visible == 0 {
        return Err(Error::Usage("at least one visible neuron is required".into()));
    }
    let n = visible + hidden;
    let mut mask = Array2::from_elem((n, n), false);
    match kind {
        Scheme::Homogeneous | Scheme::MeanField => {}
        Scheme::Forward => mask.slice_mut(s![visible.., ..visible]).fill(true),
        Scheme::ForwardSelf => mask.slice_mut(s![visible.., ..]).fill(true),
        Scheme::ForwardBackward => {
            mask.slice_mut(s![visible.., ..visible]).fill(true);
            mask.slice_mut(s![..visible, visible..]).fill(true);
        }
    }
    Ok(mask)
}

/// `φ = {c, A}`. `c` has one row, or `T` rows under mean-field.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalParams {
    scheme: Scheme,
    visible: usize,
    hidden: usize,
    pub c: Array2<f64>,
    pub a: Array2<f64>,
}

impl VariationalParams {
    /// All-zero parameters. `bins` is required for mean-field and ignored
    /// otherwise. With `hidden == 0` the parameter set is empty.
    pub fn zeros(scheme: Scheme, visible: usize, hidden: usize, bins: Option<usize>) -> Result<Self> {
        if visible == 0 {
            return Err(Error::Usage("at least one visible neuron is required".into()));
        }
        let rows = match scheme {
            Scheme::MeanField => bins.ok_or_else(|| Error::Usage("mean-field needs the train length".into()))?,
            _ => 1,
        };
        let n = if hidden == 0 { 0 } else { visible + hidden };
        Ok(Self {
            scheme,
            visible,
            hidden,
            c: Array2::zeros((rows, hidden)),
            a: Array2::zeros((n, n)),
        })
    }

    pub fn new(scheme: Scheme, visible: usize, hidden: usize, c: Array2<f64>, a: Array2<f64>) -> Result<Self> {
        let mut out = Self::zeros(scheme, visible, hidden, Some(c.nrows()))?;
        if c.dim() != out.c.dim() || a.dim() != out.a.dim() {
            return Err(Error::Usage(format!(
                "variational shapes c={:?} A={:?} do not fit scheme {scheme} with V={visible}, H={hidden}",
                c.dim(),
                a.dim()
            )));
        }
        out.c = c;
        out.a = a;
        out.project();
        Ok(out)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn visible(&self) -> usize {
        self.visible
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Rows of `c`: `T` for mean-field, otherwise 1.
    pub fn bias_rows(&self) -> usize {
        self.c.nrows()
    }

    /// Free entries of `A`; empty when there are no hidden neurons.
    pub fn mask(&self) -> Array2<bool> {
        if self.hidden == 0 {
            return Array2::from_elem((0, 0), false);
        }
        scheme_mask(self.scheme, self.visible, self.hidden).expect("validated at construction")
    }

    /// Zero every entry of `A` outside the mask.
    pub fn project(&mut self) {
        let mask = self.mask();
        self.a.zip_mut_with(&mask, |a, &free| {
            if !free {
                *a = 0.0;
            }
        });
    }

    /// Flat layout: `c` row-major followed by `A` row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        self.c.iter().chain(self.a.iter()).copied().collect()
    }

    pub fn flat_len(&self) -> usize {
        self.c.len() + self.a.len()
    }

    /// Flat mask aligned with [`to_flat`](Self::to_flat): `c` is always free.
    pub fn flat_mask(&self) -> Vec<bool> {
        std::iter::repeat_n(true, self.c.len())
            .chain(self.mask().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::Usage(format!(
                "flat φ has {} entries, expected {}",
                flat.len(),
                self.flat_len()
            )));
        }
        let nc = self.c.len();
        self.c.iter_mut().zip(&flat[..nc]).for_each(|(d, s)| *d = *s);
        self.a.iter_mut().zip(&flat[nc..]).for_each(|(d, s)| *d = *s);
        self.project();
        Ok(())
    }

    /// Relabel hidden neurons: new hidden `i` is old hidden `perm[i]`.
    pub fn permute_hidden(&self, perm: &[usize]) -> Self {
        let idx = full_permutation(self.visible, perm);
        let n = self.a.nrows();
        Self {
            scheme: self.scheme,
            visible: self.visible,
            hidden: self.hidden,
            c: Array2::from_shape_fn(self.c.dim(), |(t, h)| self.c[[t, perm[h]]]),
            a: Array2::from_shape_fn((n, n), |(i, j)| self.a[[idx[i], idx[j]]]),
        }
    }

    fn check_train(&self, obs: &PreparedTrain) -> Result<()> {
        if obs.visible() != self.visible {
            return Err(Error::Usage(format!(
                "spike train has {} neurons, variational model has V={}",
                obs.visible(),
                self.visible
            )));
        }
        if self.scheme == Scheme::MeanField && self.c.nrows() != obs.bins() {
            return Err(Error::Usage(format!(
                "mean-field parameters cover {} bins, train has {}",
                self.c.nrows(),
                obs.bins()
            )));
        }
        Ok(())
    }
}

/// φ registered as tape leaves in the flat layout.
#[derive(Clone, Debug)]
pub struct PhiVars {
    pub flat: Vec<Var>,
    scheme: Scheme,
    visible: usize,
    hidden: usize,
    c_rows: usize,
}

impl PhiVars {
    pub fn register(tape: &mut Tape, phi: &VariationalParams) -> Self {
        Self {
            flat: tape.vars(&phi.to_flat()),
            scheme: phi.scheme,
            visible: phi.visible,
            hidden: phi.hidden,
            c_rows: phi.c.nrows(),
        }
    }

    fn c(&self, t: usize, h: usize) -> Var {
        let row = if self.c_rows == 1 { 0 } else { t };
        self.flat[row * self.hidden + h]
    }

    fn a(&self, i: usize, j: usize) -> Var {
        let n = self.visible + self.hidden;
        self.flat[self.c_rows * self.hidden + i * n + j]
    }

    /// Hidden rates at bin `t`. `hidden_history` is the filtered past of
    /// the hidden samples and is only read under forward-self.
    pub fn rates_at(
        &self,
        tape: &mut Tape,
        obs: &PreparedTrain,
        t: usize,
        hidden_history: Option<&[Var]>,
        cfg: &ModelConfig,
    ) -> Vec<Var> {
        let v = self.visible;
        let mut out = Vec::with_capacity(self.hidden);
        let mut lin = Vec::new();
        let mut bil = Vec::new();
        for h in 0..self.hidden {
            lin.clear();
            bil.clear();
            lin.push((self.c(t, h), 1.0));
            if matches!(
                self.scheme,
                Scheme::Forward | Scheme::ForwardSelf | Scheme::ForwardBackward
            ) {
                for j in 0..v {
                    let d = obs.past[[t, j]];
                    if d != 0.0 {
                        lin.push((self.a(v + h, j), d));
                    }
                }
            }
            if self.scheme == Scheme::ForwardBackward {
                for j in 0..v {
                    let d = obs.future[[t, j]];
                    if d != 0.0 {
                        lin.push((self.a(j, v + h), d));
                    }
                }
            }
            if self.scheme == Scheme::ForwardSelf {
                let hist = hidden_history.expect("forward-self rates need the hidden history");
                for (k, &z) in hist.iter().enumerate() {
                    bil.push((self.a(v + h, v + k), z));
                }
            }
            let pre = tape.affine(0.0, &lin, &bil);
            out.push(cfg.link.tape(tape, pre));
        }
        out
    }
}

/// Draw all hidden cells on the tape from pre-drawn uniforms (`T·H·width`,
/// row-major over `(t, h)`) and return them with `ln q`.
pub fn tape_sample(
    tape: &mut Tape,
    phi: &PhiVars,
    obs: &PreparedTrain,
    dist: &HiddenDist,
    cfg: &ModelConfig,
    noise: &[f64],
    pathwise: bool,
) -> Result<(Vec<TapeCell>, Var)> {
    if pathwise && !dist.pathwise_capable() {
        return Err(Error::Usage(format!(
            "{} hidden spikes are discrete; only the score estimator applies",
            dist.kind()
        )));
    }
    let (bins, h) = (obs.bins(), phi.hidden);
    let width = dist.noise_width();
    if noise.len() != bins * h * width {
        return Err(Error::Usage(format!(
            "noise has {} entries, expected {}",
            noise.len(),
            bins * h * width
        )));
    }
    let mut cells: Vec<TapeCell> = Vec::with_capacity(bins * h);
    let mut logq = Vec::with_capacity(bins * h);
    // Count nodes of already drawn cells, for the forward-self history.
    let mut counts: Vec<Var> = Vec::new();
    let psi = cfg.kernel.weights();
    let mut hist = Vec::with_capacity(h);
    for t in 0..bins {
        let rates = if phi.scheme.is_sequential() {
            hist.clear();
            for k in 0..h {
                let terms: Vec<(Var, f64)> = psi
                    .iter()
                    .enumerate()
                    .take_while(|(l, _)| *l < t)
                    .map(|(l, &p)| (counts[(t - l - 1) * h + k], p))
                    .collect();
                hist.push(tape.affine(0.0, &terms, &[]));
            }
            phi.rates_at(tape, obs, t, Some(&hist), cfg)
        } else {
            phi.rates_at(tape, obs, t, None, cfg)
        };
        for (k, &f) in rates.iter().enumerate() {
            let i = (t * h + k) * width;
            let (cell, lp) = dist.tape_draw(tape, f, &noise[i..i + width], pathwise);
            if phi.scheme.is_sequential() {
                let c = match cell.count_var(tape) {
                    Some(v) => v,
                    None => tape.constant(cell.count_value(tape)),
                };
                counts.push(c);
            }
            cells.push(cell);
            logq.push(lp);
        }
    }
    let total = tape.sum(&logq);
    Ok((cells, total))
}

/// `ln q` of given cells with a custom per-cell density. Forward-self rates
/// are teacher-forced on the cells themselves.
pub fn tape_log_q_with(
    tape: &mut Tape,
    phi: &PhiVars,
    obs: &PreparedTrain,
    cells: &[TapeCell],
    cfg: &ModelConfig,
    density: &mut CellDensity<'_>,
) -> Result<Var> {
    let (bins, h) = (obs.bins(), phi.hidden);
    if cells.len() != bins * h {
        return Err(Error::Usage(format!(
            "hidden sample has {} cells, expected {bins}×{h}",
            cells.len()
        )));
    }
    let hist = if phi.scheme.is_sequential() {
        Some(tape_hidden_history(tape, cells, bins, h, &cfg.kernel))
    } else {
        None
    };
    let mut terms = Vec::with_capacity(bins * h);
    for t in 0..bins {
        let past = hist.as_ref().map(|v| &v[t * h..(t + 1) * h]);
        let rates = phi.rates_at(tape, obs, t, past, cfg);
        for (k, &f) in rates.iter().enumerate() {
            terms.push(density(tape, &cells[t * h + k], f)?);
        }
    }
    Ok(tape.sum(&terms))
}

pub fn tape_log_q(
    tape: &mut Tape,
    phi: &PhiVars,
    obs: &PreparedTrain,
    cells: &[TapeCell],
    dist: &HiddenDist,
    cfg: &ModelConfig,
) -> Result<Var> {
    tape_log_q_with(tape, phi, obs, cells, cfg, &mut |tape, cell, f| dist.tape_log_density(tape, cell, f))
}

/// Uniform noise for one hidden sample, `T·H·width` values.
pub fn draw_noise(dist: &HiddenDist, bins: usize, hidden: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..bins * hidden * dist.noise_width()).map(|_| rng.uniform()).collect()
}

fn prepare(phi: &VariationalParams, x: &SpikeTrain, cfg: &ModelConfig) -> Result<PreparedTrain> {
    let obs = PreparedTrain::new(x, &cfg.kernel);
    phi.check_train(&obs)?;
    Ok(obs)
}

/// Hidden rates `T × H`. Forward-self needs the hidden sample whose past
/// drives the rates.
pub fn variational_rates(
    phi: &VariationalParams,
    x: &SpikeTrain,
    partial_z: Option<&HiddenSample>,
    cfg: &ModelConfig,
) -> Result<Array2<f64>> {
    let obs = prepare(phi, x, cfg)?;
    let (bins, h) = (obs.bins(), phi.hidden);
    let mut tape = Tape::new();
    let pv = PhiVars::register(&mut tape, phi);
    let hist = if phi.scheme.is_sequential() {
        let z = partial_z.ok_or_else(|| Error::Usage("forward-self rates need the sampled hidden history".into()))?;
        if z.shape() != (bins, h) {
            return Err(Error::Usage(format!(
                "hidden sample shape {:?} does not match T={bins}, H={h}",
                z.shape()
            )));
        }
        let zc = z.counts();
        let filt = crate::model::convolve_history(zc.view(), &cfg.kernel);
        Some(filt.mapv(|v| tape.constant(v)))
    } else {
        None
    };
    let mut out = Array2::zeros((bins, h));
    for t in 0..bins {
        let row = hist.as_ref().map(|m| m.row(t).to_vec());
        let f = pv.rates_at(&mut tape, &obs, t, row.as_deref(), cfg);
        for k in 0..h {
            out[[t, k]] = tape.value(f[k]);
        }
    }
    Ok(out)
}

/// `K` independent draws from `q`, each with its `ln q`.
pub fn sample_and_logq(
    phi: &VariationalParams,
    x: &SpikeTrain,
    dist: &HiddenDist,
    k: usize,
    cfg: &ModelConfig,
    rng: &mut SeededRng,
) -> Result<Vec<(HiddenSample, f64)>> {
    if k == 0 {
        return Err(Error::Usage("K must be at least 1".into()));
    }
    let obs = prepare(phi, x, cfg)?;
    let mut tape = Tape::new();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        tape.clear();
        let noise = draw_noise(dist, obs.bins(), phi.hidden, rng);
        let pv = PhiVars::register(&mut tape, phi);
        let (cells, lq) = tape_sample(&mut tape, &pv, &obs, dist, cfg, &noise, dist.pathwise_capable())?;
        let z = if phi.hidden == 0 {
            HiddenSample::empty(obs.bins())
        } else {
            HiddenSample::from_cells(&tape, &cells, obs.bins(), phi.hidden)
        };
        out.push((z, tape.value(lq)));
    }
    Ok(out)
}

/// `ln q(Z | X; φ)` for a given sample.
pub fn log_q(
    phi: &VariationalParams,
    x: &SpikeTrain,
    z: &HiddenSample,
    dist: &HiddenDist,
    cfg: &ModelConfig,
) -> Result<f64> {
    let obs = prepare(phi, x, cfg)?;
    if z.shape() != (obs.bins(), phi.hidden) {
        return Err(Error::Usage(format!(
            "hidden sample shape {:?} does not match T={}, H={}",
            z.shape(),
            obs.bins(),
            phi.hidden
        )));
    }
    let mut tape = Tape::new();
    let pv = PhiVars::register(&mut tape, phi);
    let cells = z.to_cells(&mut tape, dist)?;
    let lq = tape_log_q(&mut tape, &pv, &obs, &cells, dist, cfg)?;
    Ok(tape.value(lq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{poisson_log_pmf, DistKind};
    use crate::math::special::{softplus, softplus_inv};
    use crate::model::BasisKernel;

    fn random_phi(scheme: Scheme, v: usize, h: usize, bins: usize, rng: &mut SeededRng) -> VariationalParams {
        let mut phi = VariationalParams::zeros(scheme, v, h, Some(bins)).unwrap();
        phi.c.mapv_inplace(|_| rng.uniform_range(-1.0, 1.0));
        phi.a.mapv_inplace(|_| rng.uniform_range(-1.0, 1.0));
        phi.project();
        phi
    }

    fn random_train(rng: &mut SeededRng, bins: usize, v: usize) -> SpikeTrain {
        SpikeTrain::new(Array2::from_shape_fn((bins, v), |_| rng.index(3) as u32), None).unwrap()
    }

    /// Scalar-loop transcription of the hidden rate equations.
    fn reference_rates(phi: &VariationalParams, x: &SpikeTrain, z: Option<&Array2<f64>>, psi: &[f64]) -> Array2<f64> {
        let (bins, v) = x.counts().dim();
        let h = phi.hidden();
        let xc = x.as_f64();
        let mut out = Array2::zeros((bins, h));
        for t in 0..bins {
            for k in 0..h {
                let c = if phi.c.nrows() == 1 { phi.c[[0, k]] } else { phi.c[[t, k]] };
                let mut a = c;
                for vp in 0..v {
                    for l in 1..=psi.len() {
                        if t >= l {
                            a += phi.a[[v + k, vp]] * xc[[t - l, vp]] * psi[l - 1];
                        }
                        if t + l < bins {
                            a += phi.a[[vp, v + k]] * xc[[t + l, vp]] * psi[l - 1];
                        }
                    }
                }
                if let Some(z) = z {
                    for hp in 0..h {
                        for l in 1..=psi.len() {
                            if t >= l {
                                a += phi.a[[v + k, v + hp]] * z[[t - l, hp]] * psi[l - 1];
                            }
                        }
                    }
                }
                out[[t, k]] = softplus(a);
            }
        }
        out
    }

    #[test]
    fn mask_sizes() {
        let free = |s| scheme_mask(s, 3, 2).unwrap().iter().filter(|&&b| b).count();
        assert_eq!(free(Scheme::Forward), 6);
        assert_eq!(free(Scheme::ForwardBackward), 12);
        assert_eq!(free(Scheme::ForwardSelf), 10);
        assert_eq!(free(Scheme::Homogeneous), 0);
        assert_eq!(free(Scheme::MeanField), 0);
        assert!(matches!(scheme_mask(Scheme::Forward, 3, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_coupling_equals_homogeneous() {
        let mut rng = SeededRng::new(1, 0);
        let x = random_train(&mut rng, 6, 2);
        let cfg = ModelConfig::default();
        let z = HiddenSample::Discrete(Array2::from_shape_fn((6, 2), |_| rng.index(3) as u32));
        let mut hom = VariationalParams::zeros(Scheme::Homogeneous, 2, 2, None).unwrap();
        hom.c.mapv_inplace(|_| rng.uniform_range(-1.0, 1.0));
        let base = variational_rates(&hom, &x, None, &cfg).unwrap();
        for scheme in [Scheme::Forward, Scheme::ForwardSelf, Scheme::ForwardBackward] {
            let phi = VariationalParams::new(scheme, 2, 2, hom.c.clone(), Array2::zeros((4, 4))).unwrap();
            assert_eq!(variational_rates(&phi, &x, Some(&z), &cfg).unwrap(), base);
        }
    }

    #[test]
    fn forward_backward_without_backward_block_is_forward() {
        let mut rng = SeededRng::new(2, 0);
        let x = random_train(&mut rng, 8, 2);
        let cfg = ModelConfig::default();
        let mut fb = random_phi(Scheme::ForwardBackward, 2, 1, 8, &mut rng);
        fb.a.slice_mut(s![..2, 2..]).fill(0.0);
        let f = VariationalParams::new(Scheme::Forward, 2, 1, fb.c.clone(), fb.a.clone()).unwrap();
        assert_eq!(
            variational_rates(&fb, &x, None, &cfg).unwrap(),
            variational_rates(&f, &x, None, &cfg).unwrap()
        );
    }

    #[test]
    fn rates_match_loop_reference() {
        let mut rng = SeededRng::new(3, 0);
        let cfg = ModelConfig {
            kernel: BasisKernel::new(vec![0.6, 0.4]).unwrap(),
            ..Default::default()
        };
        for scheme in Scheme::ALL {
            for _ in 0..5 {
                let phi = random_phi(scheme, 2, 2, 5, &mut rng);
                let x = random_train(&mut rng, 5, 2);
                let zc = Array2::from_shape_fn((5, 2), |_| rng.uniform_range(0.0, 2.0));
                let z = HiddenSample::Continuous(zc.clone());
                let got = variational_rates(&phi, &x, Some(&z), &cfg).unwrap();
                let zref = (scheme == Scheme::ForwardSelf).then_some(&zc);
                let want = reference_rates(&phi, &x, zref, cfg.kernel.weights());
                for (a, b) in got.iter().zip(want.iter()) {
                    assert!((a - b).abs() < 1e-12, "{scheme}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn forward_self_requires_history() {
        let phi = VariationalParams::zeros(Scheme::ForwardSelf, 1, 1, None).unwrap();
        let x = SpikeTrain::new(Array2::zeros((3, 1)), None).unwrap();
        assert!(matches!(
            variational_rates(&phi, &x, None, &ModelConfig::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn homogeneous_poisson_moment() {
        let mut phi = VariationalParams::zeros(Scheme::Homogeneous, 1, 1, None).unwrap();
        phi.c[[0, 0]] = softplus_inv(1.0);
        let x = SpikeTrain::new(Array2::zeros((1, 1)), None).unwrap();
        let mut rng = SeededRng::new(4, 0);
        let draws = sample_and_logq(&phi, &x, &HiddenDist::of(DistKind::Poisson), 100_000, &ModelConfig::default(), &mut rng)
            .unwrap();
        let n = draws.len() as f64;
        let mean = draws
            .iter()
            .map(|(z, _)| match z {
                HiddenSample::Discrete(c) => c[[0, 0]] as f64,
                _ => unreachable!(),
            })
            .sum::<f64>()
            / n;
        assert!((mean - 1.0).abs() < 3.0 * (1.0 / n).sqrt(), "{mean}");
    }

    #[test]
    fn sampling_is_deterministic_and_round_trips() {
        let mut rng = SeededRng::new(5, 0);
        let cfg = ModelConfig::default();
        let x = random_train(&mut rng, 6, 2);
        for scheme in Scheme::ALL {
            let phi = random_phi(scheme, 2, 2, 6, &mut rng);
            for kind in DistKind::ALL {
                let dist = HiddenDist::of(kind);
                let a = sample_and_logq(&phi, &x, &dist, 3, &cfg, &mut SeededRng::new(9, 1)).unwrap();
                let b = sample_and_logq(&phi, &x, &dist, 3, &cfg, &mut SeededRng::new(9, 1)).unwrap();
                assert_eq!(a, b);
                for (z, lq) in &a {
                    let again = log_q(&phi, &x, z, &dist, &cfg).unwrap();
                    assert!((again - lq).abs() < 1e-10 * lq.abs().max(1.0), "{scheme} {kind}: {again} vs {lq}");
                }
            }
        }
    }

    #[test]
    fn homogeneous_log_q_of_zeros() {
        let mut phi = VariationalParams::zeros(Scheme::Homogeneous, 1, 1, None).unwrap();
        phi.c[[0, 0]] = softplus_inv(1.0);
        let x = SpikeTrain::new(Array2::zeros((3, 1)), None).unwrap();
        let z = HiddenSample::Discrete(Array2::zeros((3, 1)));
        let lq = log_q(&phi, &x, &z, &HiddenDist::of(DistKind::Poisson), &ModelConfig::default()).unwrap();
        assert!((lq + 3.0).abs() < 1e-12);
    }

    #[test]
    fn forward_backward_log_q_matches_reference() {
        let mut rng = SeededRng::new(6, 0);
        let cfg = ModelConfig::default();
        for _ in 0..10 {
            let phi = random_phi(Scheme::ForwardBackward, 2, 1, 6, &mut rng);
            let x = random_train(&mut rng, 6, 2);
            let zc = Array2::from_shape_fn((6, 1), |_| rng.index(3) as u32);
            let f = reference_rates(&phi, &x, None, cfg.kernel.weights());
            let want: f64 = zc
                .indexed_iter()
                .map(|((t, k), &c)| poisson_log_pmf(c as i64, f[[t, k]]).unwrap())
                .sum();
            let got = log_q(&phi, &x, &HiddenSample::Discrete(zc), &HiddenDist::of(DistKind::Poisson), &cfg).unwrap();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_self_without_self_block_matches_forward_rates() {
        let mut rng = SeededRng::new(7, 0);
        let cfg = ModelConfig::default();
        let x = random_train(&mut rng, 6, 2);
        let mut fs = random_phi(Scheme::ForwardSelf, 2, 2, 6, &mut rng);
        fs.a.slice_mut(s![2.., 2..]).fill(0.0);
        let f = VariationalParams::new(Scheme::Forward, 2, 2, fs.c.clone(), fs.a.clone()).unwrap();
        let dist = HiddenDist::of(DistKind::Exponential);
        let (z, _) = sample_and_logq(&fs, &x, &dist, 1, &cfg, &mut rng).unwrap().remove(0);
        assert_eq!(
            variational_rates(&fs, &x, Some(&z), &cfg).unwrap(),
            variational_rates(&f, &x, None, &cfg).unwrap()
        );
    }

    #[test]
    fn future_dependence() {
        let mut rng = SeededRng::new(8, 0);
        let cfg = ModelConfig::default();
        let bins = 10;
        for _ in 0..10 {
            let x = random_train(&mut rng, bins, 2);
            let t0 = 1 + rng.index(bins - 3);
            let bump = |rows: std::ops::Range<usize>| {
                let mut c = x.counts().clone();
                for t in rows {
                    c.row_mut(t).mapv_inplace(|v| v + 1);
                }
                SpikeTrain::new(c, None).unwrap()
            };
            let z = HiddenSample::Discrete(Array2::from_shape_fn((bins, 1), |_| rng.index(3) as u32));
            for scheme in [Scheme::Forward, Scheme::ForwardSelf] {
                let phi = random_phi(scheme, 2, 1, bins, &mut rng);
                let a = variational_rates(&phi, &x, Some(&z), &cfg).unwrap();
                let b = variational_rates(&phi, &bump(t0..bins), Some(&z), &cfg).unwrap();
                assert_eq!(a.row(t0), b.row(t0));
            }
            let phi = random_phi(Scheme::ForwardBackward, 2, 1, bins, &mut rng);
            let a = variational_rates(&phi, &x, None, &cfg).unwrap();
            let b = variational_rates(&phi, &bump(t0..t0 + 1), None, &cfg).unwrap();
            assert_eq!(a.row(t0), b.row(t0));
            let c = variational_rates(&phi, &bump(t0 + 1..t0 + 2), None, &cfg).unwrap();
            assert_ne!(a.row(t0), c.row(t0));
        }
    }

    #[test]
    fn pathwise_draw_of_discrete_is_rejected() {
        let phi = VariationalParams::zeros(Scheme::Forward, 1, 1, None).unwrap();
        let x = SpikeTrain::new(Array2::zeros((2, 1)), None).unwrap();
        let obs = PreparedTrain::new(&x, &BasisKernel::default());
        let mut tape = Tape::new();
        let pv = PhiVars::register(&mut tape, &phi);
        let dist = HiddenDist::of(DistKind::Categorical);
        let r = tape_sample(&mut tape, &pv, &obs, &dist, &ModelConfig::default(), &[0.5, 0.5], true);
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn projection_and_flat_layout() {
        let mut rng = SeededRng::new(10, 0);
        let mut phi = random_phi(Scheme::Forward, 3, 2, 1, &mut rng);
        let flat: Vec<f64> = (0..phi.flat_len()).map(|i| i as f64 + 1.0).collect();
        phi.set_flat(&flat).unwrap();
        let mask = phi.mask();
        for ((i, j), &a) in phi.a.indexed_iter() {
            if mask[[i, j]] {
                assert_eq!(a, flat[2 + i * 5 + j]);
            } else {
                assert_eq!(a, 0.0);
            }
        }
        assert_eq!(phi.c[[0, 1]], 2.0);
    }
}
