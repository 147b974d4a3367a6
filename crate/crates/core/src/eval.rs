//! Test log-likelihood, parameter recovery, posterior profiles, and the
//! method × scheme experiment matrix.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use crate::dist::{DistKind, HiddenDist};
use crate::error::{Error, Result};
use crate::estimators::{enumerate_posterior, exact_grad_phi_from_table, log_joint_table, log_q_table};
use crate::io::Dataset;
use crate::math::special::softplus_inv;
use crate::math::SeededRng;
use crate::model::{BasisKernel, GenerativeParams, ModelConfig, Nonlinearity, SpikeTrain};
use crate::train::{fit, init_params, AdamState, Method, TrainConfig};
use crate::variational::{draw_noise, Scheme, VariationalParams};

/// Default number of hidden samples per test train.
pub const DEFAULT_K_EVAL: usize = 8;

/// Largest `H` for which every hidden relabelling is searched.
pub const MAX_PERMUTATION_H: usize = 6;

/// Noise blocks for [`test_log_likelihood_with_noise`]: `K_eval` per train.
pub fn draw_eval_noise(test: &[SpikeTrain], hidden: usize, k_eval: usize, rng: &mut SeededRng) -> Vec<Vec<Vec<f64>>> {
    let dist = HiddenDist::of(DistKind::Poisson);
    test.iter()
        .map(|x| (0..k_eval).map(|_| draw_noise(&dist, x.bins(), hidden, rng)).collect())
        .collect()
}

/// Mean over test trains of the Poisson-form ELBO estimate, divided by
/// `T · V`. Hidden samples are discrete Poisson draws at the variational
/// rates whatever relaxation was used in training.
pub fn test_log_likelihood(
    theta: &GenerativeParams,
    phi: &VariationalParams,
    test: &[SpikeTrain],
    cfg: &ModelConfig,
    k_eval: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    if k_eval == 0 {
        return Err(Error::Usage("K_eval must be at least 1".into()));
    }
    let noise = draw_eval_noise(test, phi.hidden(), k_eval, rng);
    test_log_likelihood_with_noise(theta, phi, test, cfg, &noise)
}

pub fn test_log_likelihood_with_noise(
    theta: &GenerativeParams,
    phi: &VariationalParams,
    test: &[SpikeTrain],
    cfg: &ModelConfig,
    noise: &[Vec<Vec<f64>>],
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Usage("the test set is empty".into()));
    }
    let dist = HiddenDist::of(DistKind::Poisson);
    let per_train = test
        .par_iter()
        .zip(noise)
        .map(|(x, n)| {
            let e = crate::estimators::elbo_with_noise(theta, phi, x, &dist, cfg, n)?;
            Ok(e / (x.bins() * x.neurons()) as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_train.iter().sum::<f64>() / test.len() as f64)
}

/// Mean absolute errors of `W` and `b` after hidden-label alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamError {
    pub weight: f64,
    pub bias: f64,
    /// Errors without relabelling.
    pub weight_identity: f64,
    pub bias_identity: f64,
    /// `perm[i]` is the index in the estimate matched to true hidden `i`.
    pub permutation: Vec<usize>,
}

fn mean_abs(a: &GenerativeParams, b: &GenerativeParams) -> (f64, f64) {
    let w = a.w.iter().zip(b.w.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.w.len() as f64;
    let bias = a.b.iter().zip(b.b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.b.len() as f64;
    (w, bias)
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        // Next lexicographic permutation.
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| cur[j] > cur[i]).expect("exists");
        cur.swap(i, j);
        cur[i + 1..].reverse();
    }
    out
}

/// Parameter error minimized over hidden relabellings of the estimate. The
/// relabelling minimizing the sum of weight and bias errors is used.
pub fn param_error(estimate: &GenerativeParams, truth: &GenerativeParams) -> Result<ParamError> {
    if estimate.visible() != truth.visible() || estimate.hidden() != truth.hidden() {
        return Err(Error::Usage(format!(
            "cannot compare V={}, H={} against V={}, H={}",
            estimate.visible(),
            estimate.hidden(),
            truth.visible(),
            truth.hidden()
        )));
    }
    let h = truth.hidden();
    let (wi, bi) = mean_abs(estimate, truth);
    let candidates = if h > MAX_PERMUTATION_H {
        log::warn!("H={h} is too large for the permutation search; using identity alignment");
        vec![(0..h).collect()]
    } else {
        permutations(h)
    };
    let mut best = (f64::INFINITY, 0.0, 0.0, Vec::new());
    for perm in candidates {
        let (w, b) = mean_abs(&estimate.permute_hidden(&perm), truth);
        if w + b < best.0 {
            best = (w + b, w, b, perm);
        }
    }
    Ok(ParamError {
        weight: best.1,
        bias: best.2,
        weight_identity: wi,
        bias_identity: bi,
        permutation: best.3,
    })
}

// ---------------------------------------------------------------------------
// Posterior profiles
// ---------------------------------------------------------------------------

/// One hidden-spike placement with its true and variational log mass, each
/// renormalized over the single-spike slice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileRow {
    pub bin: usize,
    pub log_posterior: f64,
    pub log_q: f64,
}

/// States per hidden cell in the profile enumeration (spike or no spike).
pub const PROFILE_STATES: usize = 2;

fn renormalize(xs: &mut [f64]) {
    let z = crate::math::special::logsumexp(xs);
    xs.iter_mut().for_each(|x| *x -= z);
}

/// Index of the single-spike configuration at bin `t` in odometer order.
fn single_spike_index(bins: usize, t: usize) -> usize {
    1 << (bins - 1 - t)
}

/// True and variational log mass of every single-hidden-spike placement,
/// for a model with one visible and one hidden neuron. Hidden counts are
/// restricted to {0, 1} with the Poisson mass renormalized.
pub fn posterior_profile(
    theta: &GenerativeParams,
    phi: &VariationalParams,
    x: &SpikeTrain,
    cfg: &ModelConfig,
) -> Result<Vec<ProfileRow>> {
    if theta.visible() != 1 || theta.hidden() != 1 {
        return Err(Error::Usage("posterior profiles need V=1 and H=1".into()));
    }
    let dist = HiddenDist::of(DistKind::Poisson);
    let post = enumerate_posterior(theta, x, &dist, cfg, PROFILE_STATES)?;
    let lq = log_q_table(phi, x, &dist, cfg, PROFILE_STATES, false)?;
    let bins = x.bins();
    let mut lp: Vec<f64> = (0..bins).map(|t| post[single_spike_index(bins, t)].1).collect();
    let mut lv: Vec<f64> = (0..bins).map(|t| lq[single_spike_index(bins, t)].0).collect();
    renormalize(&mut lp);
    renormalize(&mut lv);
    Ok((0..bins)
        .map(|t| ProfileRow {
            bin: t,
            log_posterior: lp[t],
            log_q: lv[t],
        })
        .collect())
}

/// A small model whose hidden neuron drives the visible one: visible spikes
/// are rare unless a hidden spike occurred in the previous `L` bins.
#[derive(Clone, Debug)]
pub struct ProfileConstruction {
    pub theta: GenerativeParams,
    pub x: SpikeTrain,
    pub cfg: ModelConfig,
    pub spikes: Vec<usize>,
}

impl ProfileConstruction {
    /// `bins` bins, visible spikes at the given (0-based) bins, kernel length
    /// 3, and a coupling of strength `coupling` from hidden to visible.
    pub fn new(bins: usize, spikes: &[usize], coupling: f64) -> Result<Self> {
        let mut counts = Array2::<u32>::zeros((bins, 1));
        for &s in spikes {
            if s >= bins {
                return Err(Error::Usage(format!("spike bin {s} outside 0..{bins}")));
            }
            counts[[s, 0]] = 1;
        }
        let cfg = ModelConfig {
            kernel: BasisKernel::exponential(3, 2.0)?,
            link: Nonlinearity::Softplus,
        };
        let mut theta = GenerativeParams::zeros(1, 1)?;
        theta.b[0] = softplus_inv(0.05);
        theta.b[1] = softplus_inv(0.3);
        theta.w[[0, 1]] = coupling;
        Ok(Self {
            theta,
            x: SpikeTrain::new(counts, None)?,
            cfg,
            spikes: spikes.to_vec(),
        })
    }

    /// The default layout: 12 bins with visible spikes at bins 5 and 10.
    pub fn standard() -> Self {
        Self::new(12, &[5, 10], 6.0).expect("valid construction")
    }

    pub fn kernel_len(&self) -> usize {
        self.cfg.kernel.len()
    }
}

/// Fit `φ` to the enumerated posterior by Adam on the exact ELBO.
pub fn fit_to_posterior(
    construction: &ProfileConstruction,
    scheme: Scheme,
    steps: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<VariationalParams> {
    let c = construction;
    let dist = HiddenDist::of(DistKind::Poisson);
    let (_, lp) = log_joint_table(&c.theta, &c.x, &dist, &c.cfg, PROFILE_STATES)?;
    let mut rng = SeededRng::new(seed, 0);
    let (_, mut phi) = init_params(1, 1, scheme, Some(c.x.bins()), &mut rng)?;
    let mut adam = AdamState::new(phi.flat_len());
    for _ in 0..steps {
        let (_, g) = exact_grad_phi_from_table(&phi, &c.x, &dist, &c.cfg, PROFILE_STATES, &lp)?;
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut flat = phi.to_flat();
        adam.step(&mut flat, &neg, learning_rate)?;
        phi.set_flat(&flat)?;
    }
    Ok(phi)
}

/// Change of a profile over the `len` bins before `spike`:
/// `profile[spike-1] - profile[spike-1-len]`.
pub fn rise_before(profile: &[f64], spike: usize, len: usize) -> Option<f64> {
    let end = spike.checked_sub(1)?;
    let start = end.checked_sub(len)?;
    Some(profile[end] - profile[start])
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

// ---------------------------------------------------------------------------
// Experiment matrix
// ---------------------------------------------------------------------------

/// One row of the results table.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub method: String,
    pub scheme: String,
    pub hidden: usize,
    pub seed: u64,
    pub test_ll: f64,
    pub weight_error: Option<f64>,
    pub bias_error: Option<f64>,
    pub wall_time_s: f64,
    pub loss_curve: Vec<f64>,
}

pub const RESULTS_HEADER: &str = "method,scheme,H,seed,test_ll,weight_error,bias_error,wall_time_s";

/// Name used for the fully observed baseline rows.
pub const BASELINE_METHOD: &str = "glm";
pub const BASELINE_SCHEME: &str = "none";

impl ExperimentResult {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.16e}"));
        format!(
            "{},{},{},{},{:.16e},{},{},{:.6}",
            self.method,
            self.scheme,
            self.hidden,
            self.seed,
            self.test_ll,
            opt(self.weight_error),
            opt(self.bias_error),
            self.wall_time_s
        )
    }
}

/// Parse a results table written from [`ExperimentResult::csv_row`].
pub fn parse_results(text: &str) -> Result<Vec<ExperimentResult>> {
    let path = std::path::Path::new("results");
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RESULTS_HEADER => {}
        _ => return Err(perr(1, format!("expected header `{RESULTS_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(perr(i + 1, format!("{} fields, expected 8", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| perr(i + 1, format!("`{s}` is not a number")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        out.push(ExperimentResult {
            method: f[0].to_string(),
            scheme: f[1].to_string(),
            hidden: f[2].parse().map_err(|_| perr(i + 1, format!("bad H `{}`", f[2])))?,
            seed: f[3].parse().map_err(|_| perr(i + 1, format!("bad seed `{}`", f[3])))?,
            test_ll: num(f[4])?,
            weight_error: opt(f[5])?,
            bias_error: opt(f[6])?,
            wall_time_s: num(f[7])?,
            loss_curve: Vec::new(),
        });
    }
    Ok(out)
}

/// One matrix cell: a method × scheme at one `H` on one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// `None` for the fully observed baseline.
    pub method: Option<Method>,
    pub scheme: Scheme,
    pub hidden: usize,
    pub trial: usize,
}

#[derive(Clone, Debug)]
pub struct MatrixSpec {
    pub methods: Vec<Method>,
    pub schemes: Vec<Scheme>,
    pub hidden: Vec<usize>,
    /// Epochs, batch size, K, learning rate, M, τ, L, link. Method, scheme,
    /// H and seed are set per cell.
    pub base: TrainConfig,
    pub k_eval: usize,
    pub baseline: bool,
    /// Concurrent cells.
    pub jobs: usize,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            schemes: Scheme::MATRIX.to_vec(),
            hidden: vec![2],
            base: TrainConfig::default(),
            k_eval: DEFAULT_K_EVAL,
            baseline: true,
            jobs: 1,
        }
    }
}

impl MatrixSpec {
    /// Cells in output order: per trial, the baseline first, then H ×
    /// method × scheme.
    pub fn cells(&self, trials: usize) -> Vec<Cell> {
        let mut out = Vec::new();
        for trial in 0..trials {
            if self.baseline {
                out.push(Cell {
                    method: None,
                    scheme: Scheme::Homogeneous,
                    hidden: 0,
                    trial,
                });
            }
            for &hidden in &self.hidden {
                for &method in &self.methods {
                    for &scheme in &self.schemes {
                        out.push(Cell {
                            method: Some(method),
                            scheme,
                            hidden,
                            trial,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Fit and evaluate one cell. The trial index is the seed for initialization
/// and evaluation, so every method starts a trial from the same `θ₀`.
pub fn run_cell(cell: &Cell, data: &Dataset, spec: &MatrixSpec) -> Result<ExperimentResult> {
    let seed = cell.trial as u64;
    let config = TrainConfig {
        method: cell.method.unwrap_or(spec.base.method),
        scheme: cell.scheme,
        hidden: cell.hidden,
        seed,
        ..spec.base.clone()
    };
    let start = Instant::now();
    let result = fit(&config, &data.train_set())?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let cfg = config.model_config()?;
    let mut rng = SeededRng::new(seed, 1);
    let test_ll = test_log_likelihood(&result.theta, &result.phi, &data.test_set(), &cfg, spec.k_eval, &mut rng)?;
    let errors = match data.truth() {
        Some(truth) if truth.hidden() == cell.hidden && truth.visible() == result.theta.visible() => {
            Some(param_error(&result.theta, truth)?)
        }
        _ => None,
    };
    Ok(ExperimentResult {
        method: cell.method.map_or(BASELINE_METHOD.to_string(), |m| m.to_string()),
        scheme: if cell.method.is_some() {
            cell.scheme.to_string()
        } else {
            BASELINE_SCHEME.to_string()
        },
        hidden: cell.hidden,
        seed,
        test_ll,
        weight_error: errors.as_ref().map(|e| e.weight),
        bias_error: errors.as_ref().map(|e| e.bias),
        wall_time_s,
        loss_curve: result.loss_curve,
    })
}

/// Run every cell on `datasets[trial]`. Failed cells are reported in place
/// and do not stop the matrix.
pub fn run_matrix(datasets: &[Dataset], spec: &MatrixSpec) -> Result<Vec<(Cell, Result<ExperimentResult>)>> {
    let cells = spec.cells(datasets.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("cannot build worker pool: {e}")))?;
    let results: Vec<Result<ExperimentResult>> = pool.install(|| {
        cells
            .par_iter()
            .with_max_len(1)
            .map(|cell| {
                let r = run_cell(cell, &datasets[cell.trial], spec);
                if let Err(e) = &r {
                    log::warn!("cell {cell:?} failed: {e}");
                }
                r
            })
            .collect()
    });
    Ok(cells.into_iter().zip(results).collect())
}
