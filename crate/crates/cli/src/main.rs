use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use poglm::estimators::PhiEstimator;
use poglm::eval::{
    fit_to_posterior, param_error, pearson, posterior_profile, rise_before, run_matrix, test_log_likelihood,
    ExperimentResult, MatrixSpec, ProfileConstruction, BASELINE_METHOD, BASELINE_SCHEME, DEFAULT_K_EVAL,
    RESULTS_HEADER,
};
use poglm::io::{
    bin_timestamps, generate_synthetic_suite, load_config, load_dataset, load_events, load_generative,
    load_variational, save_config, save_dataset, save_generative, save_loss_curve, save_spike_train,
    save_variational, segment, Dataset, SuiteConfig,
};
use poglm::train::{fit, Method, TrainConfig};
use poglm::{BasisKernel, ModelConfig, Nonlinearity, Scheme, SeededRng};

mod gradcheck;

const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Parser)]
#[command(name = "poglm", version, about = "Partially observable spiking GLMs fitted by variational inference")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "POGLM_OUT", default_value = "poglm-out")]
    out: PathBuf,

    /// Record wall-clock seconds in output files. With `off` every timing
    /// field is written as 0 and reruns are byte-identical.
    #[arg(long, global = true, value_enum, default_value_t = Clock::Off)]
    clock: Clock,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Clock {
    On,
    Off,
}

impl Clock {
    fn seconds(self, s: f64) -> f64 {
        match self {
            Clock::On => s,
            Clock::Off => 0.0,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Score,
    Pathwise,
}

impl From<EstimatorArg> for PhiEstimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Score => PhiEstimator::Score,
            EstimatorArg::Pathwise => PhiEstimator::Pathwise,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic suite: one directory per trial.
    Generate(GenerateArgs),
    /// Fit one method × scheme on a dataset.
    Train(TrainArgs),
    /// Test log-likelihood and parameter error of a fitted model.
    Eval(EvalArgs),
    /// Every method × scheme on every trial of a suite.
    Matrix(MatrixArgs),
    /// True and variational single-hidden-spike profiles on a two-neuron
    /// construction.
    Posterior(PosteriorArgs),
    /// Finite-difference and enumeration checks; exits nonzero on failure.
    Gradcheck(GradcheckArgs),
    /// Bin `time,neuron` events into a spike train, optionally segmented.
    Bin(BinArgs),
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 3)]
    visible: usize,
    #[arg(long, default_value_t = 2)]
    hidden: usize,
    #[arg(long, default_value_t = 100)]
    bins: usize,
    #[arg(long, default_value_t = 40)]
    n_train: usize,
    #[arg(long, default_value_t = 20)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    basis_len: usize,
    #[arg(long, default_value = "softplus")]
    link: Nonlinearity,
}

/// Flags override values from `--config`.
#[derive(Args)]
struct TrainArgs {
    /// Dataset directory or a single spike-train file.
    #[arg(long)]
    data: PathBuf,
    /// TOML training config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// pois, cat, gs-s, gs-p, exp, ray or hn.
    #[arg(long)]
    method: Option<Method>,
    /// Override the method's φ-gradient estimator.
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// f, fs or fb (also hom, mf).
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Truncation level M.
    #[arg(long)]
    truncation: Option<usize>,
    /// Gumbel-Softmax temperature.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    basis_len: Option<usize>,
    #[arg(long)]
    link: Option<Nonlinearity>,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K_EVAL)]
    k_eval: usize,
    /// Generative parameters to measure weight and bias error against.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Evaluation seed; defaults to the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct MatrixArgs {
    /// Suite written by `generate`; a fresh suite is simulated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Trials of a freshly simulated suite.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Seed of a freshly simulated suite.
    #[arg(long, default_value_t = 0)]
    suite_seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "pois,cat,gs-s,gs-p,exp,ray,hn")]
    methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "f,fs,fb")]
    schemes: Vec<Scheme>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_K_EVAL)]
    k_eval: usize,
    #[arg(long, default_value_t = poglm::dist::DEFAULT_TRUNCATION)]
    truncation: usize,
    #[arg(long, default_value_t = poglm::dist::DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = 5)]
    basis_len: usize,
    /// Skip the fully observed baseline row per trial.
    #[arg(long)]
    no_baseline: bool,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Serialize)]
struct PosteriorArgs {
    #[arg(long, default_value_t = 12)]
    bins: usize,
    /// Visible spike bins (0-based).
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    spikes: Vec<usize>,
    /// Hidden-to-visible weight.
    #[arg(long, default_value_t = 6.0)]
    coupling: f64,
    #[arg(long, value_delimiter = ',', default_value = "f,fs,fb")]
    schemes: Vec<Scheme>,
    /// Adam steps on the exact ELBO.
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct BinArgs {
    /// `time,neuron` file.
    #[arg(long)]
    events: PathBuf,
    /// Bin width in seconds.
    #[arg(long)]
    dt: f64,
    /// Recording end in seconds.
    #[arg(long)]
    t_end: f64,
    /// Number of neurons; defaults to the largest index + 1.
    #[arg(long)]
    neurons: Option<usize>,
    /// Cut the binned train into pieces of this many bins.
    #[arg(long)]
    piece_length: Option<usize>,
    /// Trailing pieces written to the test split.
    #[arg(long, default_value_t = 0)]
    test_pieces: usize,
    /// Basis length of the intended model; pieces must exceed it.
    #[arg(long, default_value_t = 5)]
    basis_len: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let out = &cli.out;
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    match &cli.command {
        Command::Generate(a) => generate(a, out),
        Command::Train(a) => train(a, out, cli.clock),
        Command::Eval(a) => eval(a, out, cli.clock),
        Command::Matrix(a) => matrix(a, out, cli.clock),
        Command::Posterior(a) => posterior(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Bin(a) => bin(a, out),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_effective<T: Serialize>(out: &Path, value: &T) -> Result<()> {
    write(&out.join(EFFECTIVE_CONFIG), &toml::to_string(value)?)
}

fn model_config(basis_len: usize, link: Nonlinearity) -> Result<ModelConfig> {
    Ok(ModelConfig {
        kernel: BasisKernel::exponential(basis_len, 2.0)?,
        link,
    })
}

fn trial_dir(out: &Path, i: usize) -> PathBuf {
    out.join(format!("trial_{i:02}"))
}

fn generate(a: &GenerateArgs, out: &Path) -> Result<()> {
    if a.hidden == 0 {
        bail!("--hidden 0 leaves nothing partially observable; use at least one hidden neuron");
    }
    let suite = SuiteConfig {
        trials: a.trials,
        visible: a.visible,
        hidden: a.hidden,
        bins: a.bins,
        n_train: a.n_train,
        n_test: a.n_test,
        ..SuiteConfig::default()
    };
    let data = generate_synthetic_suite(&suite, &model_config(a.basis_len, a.link)?, a.seed)?;
    for (i, d) in data.iter().enumerate() {
        save_dataset(&trial_dir(out, i), d)?;
    }
    write_effective(out, a)?;
    println!("wrote {} trials to {}", data.len(), out.display());
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = a.method {
        c.method = m;
    }
    if let Some(e) = a.estimator {
        c.method = Method::new(c.method.dist(), e.into())?;
    }
    if let Some(v) = a.scheme {
        c.scheme = v;
    }
    if let Some(v) = a.hidden {
        c.hidden = v;
    }
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.lr {
        c.learning_rate = v;
    }
    if let Some(v) = a.batch {
        c.batch_size = v;
    }
    if let Some(v) = a.k {
        c.k = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.truncation {
        c.truncation = v;
    }
    if let Some(v) = a.temperature {
        c.temperature = v;
    }
    if let Some(v) = a.basis_len {
        c.basis_len = v;
    }
    if let Some(v) = a.link {
        c.link = v;
    }
    c.validate()?;
    Ok(c)
}

fn train(a: &TrainArgs, out: &Path, clock: Clock) -> Result<()> {
    let config = resolve_train_config(a)?;
    let data = load_dataset(&a.data)?;
    let trains = data.train_set();
    if trains.is_empty() {
        bail!("{} has no training trains", a.data.display());
    }
    let result = fit(&config, &trains)?;
    save_generative(&out.join("theta.txt"), &result.theta)?;
    save_variational(&out.join("phi.txt"), &result.phi)?;
    save_loss_curve(&out.join("loss_curve.csv"), &result.loss_curve)?;
    let mut log = String::from("epoch,loss,wall_time_s,clip_events,skipped_steps\n");
    for r in &result.log {
        writeln!(
            log,
            "{},{:.16e},{:.6},{},{}",
            r.epoch,
            r.loss,
            clock.seconds(r.wall_time_s),
            r.clip_events,
            r.skipped_steps
        )?;
    }
    write(&out.join("training_log.csv"), &log)?;
    save_config(&out.join(EFFECTIVE_CONFIG), &config)?;
    println!(
        "{} {} H={}: final loss {:.6} after {} epochs",
        config.method,
        config.scheme,
        config.hidden,
        result.loss_curve.last().copied().unwrap_or(f64::NAN),
        config.epochs
    );
    Ok(())
}

fn eval(a: &EvalArgs, out: &Path, clock: Clock) -> Result<()> {
    let start = Instant::now();
    let config_path = a.model.join(EFFECTIVE_CONFIG);
    let config = if config_path.is_file() {
        load_config(&config_path)?
    } else {
        log::warn!("{} not found; using default model settings", config_path.display());
        TrainConfig::default()
    };
    let theta = load_generative(&a.model.join("theta.txt"))?;
    let phi = load_variational(&a.model.join("phi.txt"))?;
    let data = load_dataset(&a.data)?;
    let mut test = data.test_set();
    if test.is_empty() {
        log::warn!("{} has no test split; evaluating on the training trains", a.data.display());
        test = data.train_set();
    }
    let seed = a.seed.unwrap_or(config.seed);
    let mut rng = SeededRng::new(seed, 1);
    let test_ll = test_log_likelihood(&theta, &phi, &test, &config.model_config()?, a.k_eval, &mut rng)?;
    let errors = match &a.truth {
        Some(p) => Some(param_error(&theta, &load_generative(p)?)?),
        None => None,
    };
    let baseline = theta.hidden() == 0;
    let row = ExperimentResult {
        method: if baseline { BASELINE_METHOD.into() } else { config.method.to_string() },
        scheme: if baseline { BASELINE_SCHEME.into() } else { config.scheme.to_string() },
        hidden: theta.hidden(),
        seed,
        test_ll,
        weight_error: errors.as_ref().map(|e| e.weight),
        bias_error: errors.as_ref().map(|e| e.bias),
        wall_time_s: clock.seconds(start.elapsed().as_secs_f64()),
        loss_curve: Vec::new(),
    };
    write(&out.join("eval.csv"), &format!("{RESULTS_HEADER}\n{}\n", row.csv_row()))?;
    #[derive(Serialize)]
    struct Effective<'a> {
        #[serde(flatten)]
        args: &'a EvalArgs,
        seed_used: u64,
    }
    write_effective(out, &Effective { args: a, seed_used: seed })?;
    println!("{RESULTS_HEADER}\n{}", row.csv_row());
    Ok(())
}

fn load_suite(dir: &Path) -> Result<Vec<Dataset>> {
    let mut trials: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read suite directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("trial_")))
        .collect();
    trials.sort();
    if trials.is_empty() {
        bail!("{} holds no trial_NN directories", dir.display());
    }
    trials.iter().map(|p| Ok(load_dataset(p)?)).collect()
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per (method, scheme, H): mean and standard error over trials.
fn summarize(rows: &[ExperimentResult]) -> String {
    let mut keys: Vec<(String, String, usize)> = Vec::new();
    for r in rows {
        let k = (r.method.clone(), r.scheme.clone(), r.hidden);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut s = String::from(
        "method,scheme,H,n,test_ll_mean,test_ll_se,weight_error_mean,weight_error_se,bias_error_mean,bias_error_se,wall_time_s_mean\n",
    );
    let fmt = |v: f64| if v.is_nan() { String::new() } else { format!("{v:.16e}") };
    for (method, scheme, hidden) in keys {
        let group: Vec<&ExperimentResult> = rows
            .iter()
            .filter(|r| r.method == method && r.scheme == scheme && r.hidden == hidden)
            .collect();
        let col = |f: &dyn Fn(&ExperimentResult) -> Option<f64>| {
            let v: Vec<f64> = group.iter().filter_map(|r| f(r)).collect();
            if v.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(&v) }
        };
        let ll = col(&|r| Some(r.test_ll));
        let we = col(&|r| r.weight_error);
        let be = col(&|r| r.bias_error);
        let wt = col(&|r| Some(r.wall_time_s));
        let _ = writeln!(
            s,
            "{method},{scheme},{hidden},{},{},{},{},{},{},{},{:.6}",
            group.len(),
            fmt(ll.0),
            fmt(ll.1),
            fmt(we.0),
            fmt(we.1),
            fmt(be.0),
            fmt(be.1),
            wt.0
        );
    }
    s
}

fn matrix(a: &MatrixArgs, out: &Path, clock: Clock) -> Result<()> {
    let base = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch,
        k: a.k,
        truncation: a.truncation,
        temperature: a.temperature,
        basis_len: a.basis_len,
        ..TrainConfig::default()
    };
    base.validate()?;
    let datasets = match &a.data {
        Some(dir) => load_suite(dir)?,
        None => {
            let suite = SuiteConfig {
                trials: a.trials,
                ..SuiteConfig::default()
            };
            generate_synthetic_suite(&suite, &base.model_config()?, a.suite_seed)?
        }
    };
    let spec = MatrixSpec {
        methods: a.methods.clone(),
        schemes: a.schemes.clone(),
        hidden: a.hidden.clone(),
        base,
        k_eval: a.k_eval,
        baseline: !a.no_baseline,
        jobs: a.jobs,
    };
    let results = run_matrix(&datasets, &spec)?;

    let mut table = format!("{RESULTS_HEADER}\n");
    let mut curves = String::from("method,scheme,H,seed,epoch,loss\n");
    let mut failures = String::new();
    let mut rows = Vec::new();
    for (cell, r) in results {
        match r {
            Ok(mut r) => {
                r.wall_time_s = clock.seconds(r.wall_time_s);
                writeln!(table, "{}", r.csv_row())?;
                for (e, l) in r.loss_curve.iter().enumerate() {
                    writeln!(curves, "{},{},{},{},{e},{l:.16e}", r.method, r.scheme, r.hidden, r.seed)?;
                }
                rows.push(r);
            }
            Err(e) => {
                let method = cell.method.map_or(BASELINE_METHOD.to_string(), |m| m.to_string());
                writeln!(failures, "trial {} {method} {} H={}: {e}", cell.trial, cell.scheme, cell.hidden)?;
            }
        }
    }
    write(&out.join("results.csv"), &table)?;
    write(&out.join("loss_curves.csv"), &curves)?;
    write(&out.join("summary.csv"), &summarize(&rows))?;
    #[derive(Serialize)]
    struct Effective<'a> {
        #[serde(flatten)]
        args: &'a MatrixArgs,
        trials_run: usize,
        truncation_used: usize,
    }
    write_effective(
        out,
        &Effective {
            args: a,
            trials_run: datasets.len(),
            truncation_used: spec.base.truncation,
        },
    )?;
    if !failures.is_empty() {
        write(&out.join("failures.txt"), &failures)?;
        eprint!("{failures}");
        bail!("{} matrix cells failed; see failures.txt", failures.lines().count());
    }
    println!("wrote {} rows to {}", rows.len(), out.join("results.csv").display());
    Ok(())
}

fn posterior(a: &PosteriorArgs, out: &Path) -> Result<()> {
    let c = ProfileConstruction::new(a.bins, &a.spikes, a.coupling)?;
    let mut profiles = Vec::new();
    for &scheme in &a.schemes {
        let phi = fit_to_posterior(&c, scheme, a.steps, a.lr, a.seed)?;
        profiles.push(posterior_profile(&c.theta, &phi, &c.x, &c.cfg)?);
    }
    let truth: Vec<f64> = match profiles.first() {
        Some(p) => p.iter().map(|r| r.log_posterior).collect(),
        None => bail!("--schemes is empty"),
    };
    let mut table = String::from("bin,visible_count,log_posterior");
    for s in &a.schemes {
        write!(table, ",log_q_{s}")?;
    }
    table.push('\n');
    for t in 0..a.bins {
        write!(table, "{t},{},{:.16e}", c.x.counts()[[t, 0]], truth[t])?;
        for p in &profiles {
            write!(table, ",{:.16e}", p[t].log_q)?;
        }
        table.push('\n');
    }
    let mut summary = String::from("scheme,pearson");
    for s in &a.spikes {
        write!(summary, ",rise_before_{s}")?;
    }
    summary.push('\n');
    for (scheme, p) in a.schemes.iter().zip(&profiles) {
        let lq: Vec<f64> = p.iter().map(|r| r.log_q).collect();
        write!(summary, "{scheme},{:.16e}", pearson(&lq, &truth))?;
        for &s in &a.spikes {
            let rise = rise_before(&lq, s, c.kernel_len()).map_or(String::new(), |v| format!("{v:.16e}"));
            write!(summary, ",{rise}")?;
        }
        summary.push('\n');
    }
    write(&out.join("profile.csv"), &table)?;
    write(&out.join("profile_summary.csv"), &summary)?;
    write_effective(out, a)?;
    print!("{summary}");
    Ok(())
}

fn gradcheck(a: &GradcheckArgs, out: &Path) -> Result<()> {
    let outcomes = gradcheck::run(a.seed)?;
    let mut report = String::new();
    let mut failed = 0;
    for o in &outcomes {
        let status = if o.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!o.passed());
        writeln!(report, "{status:4} {} (worst {:.3e} of tolerance)", o.name, o.worst)?;
    }
    write(&out.join("gradcheck.txt"), &report)?;
    write_effective(out, a)?;
    print!("{report}");
    if failed > 0 {
        return Err(anyhow!("{failed} of {} checks failed", outcomes.len()));
    }
    Ok(())
}

fn bin(a: &BinArgs, out: &Path) -> Result<()> {
    let events = load_events(&a.events)?;
    let neurons = match a.neurons {
        Some(n) => n,
        None => events.iter().map(|e| e.1 + 1).max().unwrap_or(0),
    };
    if neurons == 0 {
        bail!("no neurons: pass --neurons for an empty event file");
    }
    let x = bin_timestamps(&events, neurons, a.dt, a.t_end)?;
    let pieces = match a.piece_length {
        Some(len) => segment(&x, len, a.basis_len + 1)?,
        None => vec![x],
    };
    if a.test_pieces >= pieces.len() {
        bail!("--test-pieces {} leaves no training pieces out of {}", a.test_pieces, pieces.len());
    }
    let n_train = pieces.len() - a.test_pieces;
    for (i, p) in pieces.iter().enumerate() {
        let path = if i < n_train {
            out.join("train").join(format!("{i:03}.csv"))
        } else {
            out.join("test").join(format!("{:03}.csv", i - n_train))
        };
        save_spike_train(&path, p)?;
    }
    write_effective(out, a)?;
    println!("binned {} events into {} pieces", events.len(), pieces.len());
    Ok(())
}
