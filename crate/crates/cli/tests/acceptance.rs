//! Acceptance suite. Runs every criterion in order, prints one line per
//! criterion and exits nonzero if any failed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use ndarray::Array2;
use poglm::dist::{
    categorical_from_uniform, exp_sample, gs_log_pdf, gs_sample, halfnormal_log_pdf, halfnormal_sample,
    rayleigh_log_pdf, rayleigh_sample,
};
use poglm::estimators::{elbo_hat, enumerate_elbo, enumerate_elbo_grad_phi, grad_theta, pathwise_grad_phi, score_grad_phi};
use poglm::eval::{
    fit_to_posterior, pearson, posterior_profile, rise_before, run_matrix, spearman, ExperimentResult, MatrixSpec,
    ProfileConstruction,
};
use poglm::io::{generate_synthetic_suite, SuiteConfig};
use poglm::math::special::softplus_inv;
use poglm::train::Method;
use poglm::{DistKind, GenerativeParams, HiddenDist, ModelConfig, Scheme, SeededRng, SpikeTrain, VariationalParams};
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Check = Result<String, String>;
type Criterion = fn() -> Check;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("gradient correctness", gradient_correctness),
        ("score estimator unbiased", score_unbiased),
        ("bound and identity", bound_and_identity),
        ("variance ordering", variance_ordering),
        ("synthetic ordering", synthetic_ordering),
        ("posterior shape", posterior_shape),
        ("distribution properties", distribution_properties),
        ("cli determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS  {detail}  [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL  {detail}  [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn random_train(visible: usize, bins: usize, max_count: usize, rng: &mut SeededRng) -> SpikeTrain {
    let counts = Array2::from_shape_fn((bins, visible), |_| rng.index(max_count + 1) as u32);
    SpikeTrain::new(counts, None).unwrap()
}

fn random_phi(scheme: Scheme, v: usize, h: usize, bins: usize, lo: f64, hi: f64, rng: &mut SeededRng) -> VariationalParams {
    let mut phi = VariationalParams::zeros(scheme, v, h, Some(bins)).unwrap();
    let flat: Vec<f64> = (0..phi.flat_len()).map(|_| rng.uniform_range(lo, hi)).collect();
    phi.set_flat(&flat).unwrap();
    phi
}

fn free_indices(phi: &VariationalParams) -> Vec<usize> {
    phi.flat_mask()
        .into_iter()
        .enumerate()
        .filter_map(|(i, f)| f.then_some(i))
        .collect()
}

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let (m, v) = mean_var(xs.iter().copied());
    (m, (v / xs.len() as f64).sqrt())
}

fn column(rows: &[Vec<f64>], i: usize) -> impl Iterator<Item = f64> + Clone + '_ {
    rows.iter().map(move |r| r[i])
}

// ---------------------------------------------------------------------------

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-8;

fn gradient_correctness() -> Check {
    let cfg = ModelConfig::default();
    let kinds = [DistKind::GumbelSoftmax, DistKind::Exponential, DistKind::Rayleigh, DistKind::HalfNormal];
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (d, kind) in kinds.into_iter().enumerate() {
        let dist = HiddenDist::of(kind);
        for (s, scheme) in Scheme::ALL.into_iter().enumerate() {
            let mut rng = SeededRng::new(100 + 10 * d as u64 + s as u64, 0);
            let theta = GenerativeParams::random(2, 1, 1.0, 0.5, &mut rng).unwrap();
            let x = random_train(2, 5, 2, &mut rng);
            let phi = random_phi(scheme, 2, 1, 5, -0.5, 0.5, &mut rng);
            let noise = rng.derive(1);
            let g_theta = grad_theta(&theta, &phi, &x, &dist, &cfg, 1, &mut noise.clone()).unwrap();
            let g_phi = pathwise_grad_phi(&theta, &phi, &x, &dist, &cfg, 1, &mut noise.clone()).unwrap();
            let mut compare = |label: String, analytic: f64, fd: f64| {
                let ratio = (analytic - fd).abs() / (REL_TOL * analytic.abs().max(fd.abs()) + ABS_FLOOR);
                worst = worst.max(ratio);
                checked += 1;
                if !(ratio <= 1.0) {
                    failures.push(format!("{kind} {scheme} {label}: {analytic} vs {fd}"));
                }
            };
            let base = theta.to_flat();
            for i in 0..base.len() {
                let at = |h: f64| {
                    let mut p = base.clone();
                    p[i] += h;
                    let mut t = theta.clone();
                    t.set_flat(&p).unwrap();
                    elbo_hat(&t, &phi, &x, &dist, &cfg, 1, &mut noise.clone()).unwrap()
                };
                compare(format!("θ[{i}]"), g_theta[i], (at(STEP) - at(-STEP)) / (2.0 * STEP));
            }
            let base = phi.to_flat();
            for i in free_indices(&phi) {
                let at = |h: f64| {
                    let mut p = base.clone();
                    p[i] += h;
                    let mut q = phi.clone();
                    q.set_flat(&p).unwrap();
                    elbo_hat(&theta, &q, &x, &dist, &cfg, 1, &mut noise.clone()).unwrap()
                };
                compare(format!("φ[{i}]"), g_phi[i], (at(STEP) - at(-STEP)) / (2.0 * STEP));
            }
        }
    }
    let detail = format!("{checked} coordinates over 4 distributions x 5 schemes, worst error {worst:.2e} of tolerance");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

fn score_unbiased() -> Check {
    let cfg = ModelConfig::default();
    let dist = HiddenDist::new(DistKind::Categorical, 3, 0.5).unwrap();
    let mut rng = SeededRng::new(200, 0);
    let theta = GenerativeParams::random(1, 1, 1.0, 0.5, &mut rng).unwrap();
    // A spike in the first bin so the history coordinate is exercised.
    let x = SpikeTrain::new(Array2::from_shape_vec((2, 1), vec![2, 1]).unwrap(), None).unwrap();
    let phi = random_phi(Scheme::Forward, 1, 1, 2, -0.5, 0.5, &mut rng);
    let (_, exact) = enumerate_elbo_grad_phi(&theta, &phi, &x, &dist, &cfg, 3).unwrap();
    let draws: Vec<Vec<f64>> = (0..200_000)
        .map(|_| score_grad_phi(&theta, &phi, &x, &dist, &cfg, 1, &mut rng).unwrap())
        .collect();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let free = free_indices(&phi);
    for &i in &free {
        let (m, v) = mean_var(column(&draws, i));
        let err = (m - exact[i]).abs();
        let z = if err == 0.0 { 0.0 } else { err / (v / draws.len() as f64).sqrt() };
        worst = worst.max(z);
        if !(z <= 3.0) {
            failures.push(format!("φ[{i}]: {m} vs exact {} ({z:.2} SE)", exact[i]));
        }
    }
    let detail = format!("{} free coordinates, 2e5 draws, largest deviation {worst:.2} SE", free.len());
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

fn bound_and_identity() -> Check {
    let cfg = ModelConfig::default();
    let cases = [
        (HiddenDist::of(DistKind::Poisson), 4),
        (HiddenDist::new(DistKind::Categorical, 3, 0.5).unwrap(), 3),
    ];
    let mut instances = 0;
    let mut worst_identity: f64 = 0.0;
    let mut failures = Vec::new();
    for (d, (dist, m_enum)) in cases.iter().enumerate() {
        for (s, scheme) in Scheme::ALL.into_iter().enumerate() {
            let mut rng = SeededRng::new(300 + 10 * d as u64 + s as u64, 0);
            let mut theta = GenerativeParams::random(1, 1, 1.0, 0.5, &mut rng).unwrap();
            theta.b[1] = softplus_inv(0.1);
            let x = random_train(1, 3, 2, &mut rng);
            let centre = softplus_inv(0.1);
            let phi = random_phi(scheme, 1, 1, 3, centre - 0.3, centre + 0.3, &mut rng);
            let e = enumerate_elbo(&theta, &phi, &x, dist, &cfg, *m_enum).unwrap();
            let gap = (e.elbo + e.kl - e.log_evidence).abs();
            worst_identity = worst_identity.max(gap);
            let draws: Vec<f64> = (0..10_000)
                .map(|_| elbo_hat(&theta, &phi, &x, dist, &cfg, 1, &mut rng).unwrap())
                .collect();
            let (mean, se) = mean_se(&draws);
            instances += 1;
            let label = format!("{} {scheme}", dist.kind());
            if !(gap <= 1e-10) {
                failures.push(format!("{label}: identity off by {gap:e}"));
            }
            if !(e.kl >= 0.0) {
                failures.push(format!("{label}: KL {}", e.kl));
            }
            if !(mean <= e.log_evidence + 3.0 * se) {
                failures.push(format!("{label}: MC ELBO {mean} ± {se} above log-evidence {}", e.log_evidence));
            }
        }
    }
    let detail = format!("{instances} instances, worst identity gap {worst_identity:.1e}");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

fn variance_ordering() -> Check {
    let cfg = ModelConfig::default();
    let dist = HiddenDist::of(DistKind::GumbelSoftmax);
    let mut lower = 0;
    let mut total = 0;
    for (s, scheme) in Scheme::ALL.into_iter().enumerate() {
        let mut rng = SeededRng::new(400 + s as u64, 0);
        let theta = GenerativeParams::random(1, 1, 1.0, 0.5, &mut rng).unwrap();
        let x = random_train(1, 3, 2, &mut rng);
        let phi = random_phi(scheme, 1, 1, 3, -0.5, 0.5, &mut rng);
        let score: Vec<Vec<f64>> = (0..10_000)
            .map(|_| score_grad_phi(&theta, &phi, &x, &dist, &cfg, 1, &mut rng).unwrap())
            .collect();
        let path: Vec<Vec<f64>> = (0..10_000)
            .map(|_| pathwise_grad_phi(&theta, &phi, &x, &dist, &cfg, 1, &mut rng).unwrap())
            .collect();
        for i in free_indices(&phi) {
            total += 1;
            if mean_var(column(&path, i)).1 < mean_var(column(&score, i)).1 {
                lower += 1;
            }
        }
    }
    let detail = format!("pathwise variance lower on {lower}/{total} coordinates over 5 schemes, 1e4 draws each");
    if lower as f64 > 0.8 * total as f64 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------

fn means_by(rows: &[ExperimentResult], key: impl Fn(&ExperimentResult) -> Option<String>) -> BTreeMap<String, Vec<&ExperimentResult>> {
    let mut out: BTreeMap<String, Vec<&ExperimentResult>> = BTreeMap::new();
    for r in rows {
        if let Some(k) = key(r) {
            out.entry(k).or_default().push(r);
        }
    }
    out
}

fn avg<'a>(rows: impl IntoIterator<Item = &'a &'a ExperimentResult>, f: impl Fn(&ExperimentResult) -> f64) -> f64 {
    let v: Vec<f64> = rows.into_iter().map(|r| f(r)).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn synthetic_ordering() -> Check {
    let suite = generate_synthetic_suite(&SuiteConfig::default(), &ModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for (cell, r) in run_matrix(&suite, &MatrixSpec::default()).map_err(|e| e.to_string())? {
        rows.push(r.map_err(|e| format!("{cell:?}: {e}"))?);
    }
    let rows: Vec<ExperimentResult> = rows.into_iter().filter(|r| r.hidden == 2).collect();
    let pathwise = [Method::GS_P, Method::EXP, Method::RAY, Method::HN].map(Method::name);
    let mut parts = Vec::new();
    let mut ok = true;

    // (a) pathwise group above score group at every scheme
    let mut a = Vec::new();
    for scheme in Scheme::MATRIX {
        let at = means_by(&rows, |r| {
            (r.scheme == scheme.short_name()).then(|| pathwise.contains(&r.method.as_str()).to_string())
        });
        let (p, s) = (avg(&at["true"], |r| r.test_ll), avg(&at["false"], |r| r.test_ll));
        ok &= p > s;
        a.push(format!("{scheme} {p:.4}>{s:.4}:{}", p > s));
    }
    parts.push(format!("(a) {}", a.join(" ")));

    // (b) Exp under forward-backward at least as good as the other schemes
    let exp = means_by(&rows, |r| (r.method == Method::EXP.name()).then(|| r.scheme.clone()));
    let ll = |s: Scheme| avg(&exp[s.short_name()], |r| r.test_ll);
    let (f, fs, fb) = (ll(Scheme::Forward), ll(Scheme::ForwardSelf), ll(Scheme::ForwardBackward));
    let b = fb >= f && fb >= fs;
    ok &= b;
    parts.push(format!("(b) exp fb {fb:.4} f {f:.4} fs {fs:.4}:{b}"));

    // (c) parameter errors rank inversely with test LL across methods
    let by_method = means_by(&rows, |r| Some(r.method.clone()));
    let ll: Vec<f64> = by_method.values().map(|v| avg(v, |r| r.test_ll)).collect();
    let we: Vec<f64> = by_method.values().map(|v| avg(v, |r| r.weight_error.unwrap())).collect();
    let be: Vec<f64> = by_method.values().map(|v| avg(v, |r| r.bias_error.unwrap())).collect();
    let (rw, rb) = (spearman(&ll, &we), spearman(&ll, &be));
    let c = rw < -0.5 && rb < -0.5;
    ok &= c;
    parts.push(format!("(c) rho weight {rw:.2} bias {rb:.2}:{c}"));

    // (d) forward-self slowest on at least 9 of 10 seeds, per method
    let mut d = Vec::new();
    for method in Method::ALL {
        let wall = |seed: u64, scheme: Scheme| {
            rows.iter()
                .find(|r| r.method == method.name() && r.seed == seed && r.scheme == scheme.short_name())
                .unwrap()
                .wall_time_s
        };
        let wins = (0..suite.len() as u64)
            .filter(|&s| {
                let fs = wall(s, Scheme::ForwardSelf);
                fs > wall(s, Scheme::Forward) && fs > wall(s, Scheme::ForwardBackward)
            })
            .count();
        ok &= wins >= 9;
        d.push(format!("{method} {wins}/{}", suite.len()));
    }
    parts.push(format!("(d) {}", d.join(" ")));

    let detail = parts.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn posterior_shape() -> Check {
    let c = ProfileConstruction::standard();
    let mut corr = BTreeMap::new();
    let mut fb_profile = Vec::new();
    for scheme in Scheme::MATRIX {
        let phi = fit_to_posterior(&c, scheme, 300, 0.05, 0).map_err(|e| e.to_string())?;
        let rows = posterior_profile(&c.theta, &phi, &c.x, &c.cfg).map_err(|e| e.to_string())?;
        let truth: Vec<f64> = rows.iter().map(|r| r.log_posterior).collect();
        let q: Vec<f64> = rows.iter().map(|r| r.log_q).collect();
        corr.insert(scheme.short_name(), pearson(&truth, &q));
        if scheme == Scheme::ForwardBackward {
            fb_profile = q;
        }
    }
    let rises: Vec<f64> = c
        .spikes
        .iter()
        .map(|&s| rise_before(&fb_profile, s, c.kernel_len()).unwrap_or(f64::NAN))
        .collect();
    let ok = corr["fb"] > corr["f"] && corr["fb"] > corr["fs"] && rises.iter().all(|&r| r > 0.0);
    let detail = format!(
        "pearson f {:.3} fs {:.3} fb {:.3}; fb rise before spikes {:?}",
        corr["f"], corr["fs"], corr["fb"], rises
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    quadrature::double_exponential::integrate(f, a, b, 1e-12).integral
}

fn distribution_properties() -> Check {
    let mut rng = SeededRng::new(700, 0);
    let mut failures = Vec::new();
    let mut worst_z: f64 = 0.0;
    type Sampler = fn(f64, &mut SeededRng) -> poglm::Result<f64>;
    let samplers: [(&str, Sampler); 3] = [("exp", exp_sample), ("ray", rayleigh_sample), ("hn", halfnormal_sample)];
    for (name, sample) in samplers {
        for f in [0.5, 1.0, 2.0] {
            let xs: Vec<f64> = (0..100_000).map(|_| sample(f, &mut rng).unwrap()).collect();
            let (m, se) = mean_se(&xs);
            let z = (m - f).abs() / se;
            worst_z = worst_z.max(z);
            if !(z <= 3.0) {
                failures.push(format!("{name} mean at f={f}: {m} ({z:.2} SE)"));
            }
        }
    }

    let pi = [0.2, 0.5, 0.3];
    let mut worst_closure: f64 = 0.0;
    let mut counts = [0usize; 3];
    let n = 100_000;
    for _ in 0..n {
        let z = gs_sample(&pi, 0.01, &mut rng);
        worst_closure = worst_closure.max((z.iter().sum::<f64>() - 1.0).abs());
        let arg = (0..3).max_by(|&i, &j| z[i].total_cmp(&z[j])).unwrap();
        counts[arg] += 1;
    }
    if !(worst_closure <= 1e-9) {
        failures.push(format!("simplex closure off by {worst_closure:e}"));
    }
    let chi2: f64 = counts
        .iter()
        .zip(pi)
        .map(|(&c, p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
        .sum();
    let p_value = 1.0 - ChiSquared::new(2.0).unwrap().cdf(chi2);
    if !(p_value > 0.01) {
        failures.push(format!("GS argmax vs categorical chi-square p = {p_value}"));
    }
    // Control: the categorical sampler against the same test.
    let mut control = [0usize; 3];
    for _ in 0..n {
        control[categorical_from_uniform(&pi, rng.uniform())] += 1;
    }

    let gs_pi = [0.35, 0.65];
    let gs_mass = integrate(
        |s| {
            let a = s * s;
            if a <= 0.0 || a >= 1.0 {
                return 0.0;
            }
            2.0 * s * gs_log_pdf(&[a, 1.0 - a], &gs_pi, 0.5).unwrap().exp()
        },
        0.0,
        1.0,
    );
    let ray_mass = integrate(|z| rayleigh_log_pdf(z, 1.3).unwrap().exp(), 0.0, 30.0);
    let hn_mass = integrate(|z| halfnormal_log_pdf(z, 1.3).unwrap().exp(), 0.0, 30.0);
    if !((gs_mass - 1.0).abs() <= 1e-3) {
        failures.push(format!("GS density integrates to {gs_mass}"));
    }
    if !((ray_mass - 1.0).abs() <= 1e-6) {
        failures.push(format!("Rayleigh density integrates to {ray_mass}"));
    }
    if !((hn_mass - 1.0).abs() <= 1e-6) {
        failures.push(format!("half-normal density integrates to {hn_mass}"));
    }
    let detail = format!(
        "worst mean deviation {worst_z:.2} SE; closure {worst_closure:.1e}; argmax counts {counts:?} (categorical {control:?}) p={p_value:.3}; mass gs {gs_mass:.6} ray {ray_mass:.9} hn {hn_mass:.9}"
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

// ---------------------------------------------------------------------------

fn poglm(out: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_poglm"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("poglm {args:?}: {}", String::from_utf8_lossy(&status.stderr).trim()))
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn cli_determinism() -> Check {
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let suite = work.path().join("suite");
    poglm(&suite, &["generate", "--trials", "2", "--bins", "30", "--n-train", "6", "--n-test", "3"])?;
    let trial = suite.join("trial_00");
    let model = work.path().join("model");
    let events = work.path().join("events.csv");
    std::fs::write(&events, "time,neuron\n0.01,0\n0.26,1\n0.5,0\n0.51,2\n0.99,1\n1.4,0\n1.72,2\n").unwrap();
    let trial_s = trial.to_str().unwrap();
    let suite_s = suite.to_str().unwrap();
    let events_s = events.to_str().unwrap();
    poglm(&model, &["train", "--data", trial_s, "--method", "exp", "--epochs", "2", "--batch", "3"])?;
    let model_s = model.to_str().unwrap().to_string();
    let truth = trial.join("theta.txt");
    let truth_s = truth.to_str().unwrap().to_string();
    let mut eval: Vec<&str> = vec!["eval", "--model", &model_s, "--data", trial_s];
    if truth.exists() {
        eval.extend(["--truth", &truth_s]);
    }

    let invocations: Vec<(&str, Vec<&str>)> = vec![
        ("generate", vec!["generate", "--trials", "2", "--bins", "30", "--n-train", "6", "--n-test", "3", "--seed", "4"]),
        ("train", vec!["train", "--data", trial_s, "--method", "gs-s", "--scheme", "fb", "--epochs", "2", "--batch", "3"]),
        ("eval", eval),
        (
            "matrix",
            vec!["matrix", "--data", suite_s, "--methods", "pois,exp", "--epochs", "2", "--batch", "3", "--k-eval", "2"],
        ),
        ("posterior", vec!["posterior", "--steps", "40"]),
        ("gradcheck", vec!["gradcheck"]),
        ("bin", vec!["bin", "--events", events_s, "--dt", "0.1", "--t-end", "2", "--piece-length", "6", "--test-pieces", "1"]),
    ];
    let mut compared = Vec::new();
    for (name, args) in &invocations {
        let a = work.path().join(format!("{name}_a"));
        let b = work.path().join(format!("{name}_b"));
        poglm(&a, args)?;
        poglm(&b, args)?;
        let (ta, tb) = (tree(&a), tree(&b));
        if ta.is_empty() {
            return Err(format!("{name} wrote no files"));
        }
        if ta != tb {
            let differing: Vec<_> = ta
                .keys()
                .chain(tb.keys())
                .filter(|k| ta.get(*k) != tb.get(*k))
                .map(|k| k.display().to_string())
                .collect();
            return Err(format!("{name}: files differ between runs: {differing:?}"));
        }
        compared.push(format!("{name} {}", ta.len()));
    }
    Ok(format!("identical file trees: {}", compared.join(", ")))
}
