//! Synthetic suites, timestamp ingestion, segmentation, and file formats.
//!
//! All formats are plain text. Reals are written with 17 significant digits
//! so a save/load round trip is exact.
//!
//! * Spike trains: a `# V=3 T=100 bin_width=0.05` line (`bin_width=none`
//!   when unknown), then one comma-separated row of counts per bin.
//! * Events: a `time,neuron` header, then one event per line.
//! * Parameters: a tagged header line with the shapes, then labelled blocks.
//! * Train configs: TOML.
//! * Results: comma-separated with a fixed header.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::dist::HiddenDist;
use crate::error::{Error, Result};
use crate::math::SeededRng;
use crate::model::{generate, GenerativeParams, HiddenSample, ModelConfig, SpikeTrain};
use crate::train::TrainConfig;
use crate::variational::{Scheme, VariationalParams};

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    /// Simulated from known parameters; hidden trains kept for diagnostics.
    Synthetic {
        theta: GenerativeParams,
        hidden: Vec<HiddenSample>,
    },
    External { source: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub trains: Vec<SpikeTrain>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(trains: Vec<SpikeTrain>, train_idx: Vec<usize>, test_idx: Vec<usize>, provenance: Provenance) -> Result<Self> {
        let mut seen = vec![false; trains.len()];
        for &i in train_idx.iter().chain(&test_idx) {
            if i >= trains.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Usage(format!("split index {i} is out of range or repeated")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Usage("train/test split does not cover every train".into()));
        }
        if let Some(first) = trains.first() {
            if trains
                .iter()
                .any(|x| x.neurons() != first.neurons() || x.bin_width() != first.bin_width())
            {
                return Err(Error::Usage("trains in a dataset must share V and bin width".into()));
            }
        }
        Ok(Self {
            trains,
            train_idx,
            test_idx,
            provenance,
        })
    }

    pub fn train_set(&self) -> Vec<SpikeTrain> {
        self.train_idx.iter().map(|&i| self.trains[i].clone()).collect()
    }

    pub fn test_set(&self) -> Vec<SpikeTrain> {
        self.test_idx.iter().map(|&i| self.trains[i].clone()).collect()
    }

    pub fn truth(&self) -> Option<&GenerativeParams> {
        match &self.provenance {
            Provenance::Synthetic { theta, .. } => Some(theta),
            Provenance::External { .. } => None,
        }
    }
}

/// Shape of a synthetic suite.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub trials: usize,
    pub visible: usize,
    pub hidden: usize,
    pub bins: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Trials in which any neuron's mean count per bin reaches this are
    /// re-drawn.
    pub max_mean_count: f64,
    pub max_attempts: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            visible: 3,
            hidden: 2,
            bins: 100,
            n_train: 40,
            n_test: 20,
            max_mean_count: 20.0,
            max_attempts: 1000,
        }
    }
}

/// Largest per-neuron mean count per bin over visible and hidden trains.
fn max_neuron_mean(trains: &[SpikeTrain], hidden: &[HiddenSample]) -> f64 {
    let bins: usize = trains.iter().map(SpikeTrain::bins).sum();
    let visible = trains[0].neurons();
    let mut sums = vec![0.0; visible + hidden[0].shape().1];
    for (x, z) in trains.iter().zip(hidden) {
        for (n, col) in x.counts().columns().into_iter().enumerate() {
            sums[n] += col.iter().map(|&c| c as f64).sum::<f64>();
        }
        for (h, col) in z.counts().columns().into_iter().enumerate() {
            sums[visible + h] += col.sum();
        }
    }
    sums.into_iter().fold(0.0, f64::max) / bins as f64
}

fn simulate_trial(suite: &SuiteConfig, cfg: &ModelConfig, rng: &mut SeededRng) -> Result<Dataset> {
    let dist = HiddenDist::of(crate::dist::DistKind::Poisson);
    let total = suite.n_train + suite.n_test;
    for attempt in 0..suite.max_attempts {
        let theta = GenerativeParams::random(suite.visible, suite.hidden, 2.0, 0.5, rng)?;
        let mut trains = Vec::with_capacity(total);
        let mut hidden = Vec::with_capacity(total);
        let mut failure = None;
        for _ in 0..total {
            match generate(&theta, suite.bins, &dist, cfg, 0, rng) {
                Ok((x, z)) => {
                    trains.push(x);
                    hidden.push(z);
                }
                Err(e @ Error::Divergence { .. }) => {
                    failure = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if failure.is_none() {
            let mean = max_neuron_mean(&trains, &hidden);
            if mean.is_finite() && mean < suite.max_mean_count {
                return Dataset::new(
                    trains,
                    (0..suite.n_train).collect(),
                    (suite.n_train..total).collect(),
                    Provenance::Synthetic { theta, hidden },
                );
            }
            failure = Some(format!("mean count per bin {mean:.2}"));
        }
        log::info!(
            "synthetic trial re-drawn (attempt {attempt}): {}",
            failure.unwrap_or_default()
        );
    }
    Err(Error::Usage(format!(
        "no stable parameter set found in {} attempts",
        suite.max_attempts
    )))
}

/// Random ground-truth parameters and simulated train/test splits, one
/// dataset per trial. Trial `i` uses its own derived RNG stream.
pub fn generate_synthetic_suite(suite: &SuiteConfig, cfg: &ModelConfig, seed: u64) -> Result<Vec<Dataset>> {
    if suite.hidden == 0 {
        return Err(Error::Usage("a synthetic suite needs at least one hidden neuron".into()));
    }
    let root = SeededRng::new(seed, 0);
    (0..suite.trials)
        .into_par_iter()
        .map(|i| simulate_trial(suite, cfg, &mut root.derive(i as u64)))
        .collect()
}

/// Bin index of `time`. Times within a relative 1e-9 of a bin boundary
/// count as on it, so decimal boundaries like `3 × 0.05` land in the later
/// bin despite rounding.
fn bin_of(time: f64, dt: f64) -> usize {
    let q = time / dt;
    let r = q.round();
    if (q - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        q.floor() as usize
    }
}

/// Count events in left-closed bins `[s·Δt, (s+1)·Δt)` up to `t_end`.
pub fn bin_timestamps(events: &[(f64, usize)], neurons: usize, dt: f64, t_end: f64) -> Result<SpikeTrain> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Usage(format!("need Δt > 0 and T_end > 0, got {dt} and {t_end}")));
    }
    let q = t_end / dt;
    let bins = if (q - q.round()).abs() <= 1e-9 * q.round().max(1.0) {
        q.round() as usize
    } else {
        q.ceil() as usize
    }
    .max(1);
    let mut counts = Array2::<u32>::zeros((bins, neurons));
    for (i, &(time, n)) in events.iter().enumerate() {
        if !(time >= 0.0 && time < t_end) {
            return Err(Error::Domain(format!("event {i} at time {time} outside [0, {t_end})")));
        }
        if n >= neurons {
            return Err(Error::Domain(format!("event {i} has neuron {n}, only {neurons} neurons")));
        }
        counts[[bin_of(time, dt).min(bins - 1), n]] += 1;
    }
    SpikeTrain::new(counts, Some(dt))
}

/// Consecutive non-overlapping pieces; a shorter tail is dropped.
pub fn segment(train: &SpikeTrain, piece_len: usize, min_len: usize) -> Result<Vec<SpikeTrain>> {
    if piece_len < min_len.max(1) {
        return Err(Error::Usage(format!("pieces of {piece_len} bins are shorter than {min_len}")));
    }
    if piece_len > train.bins() {
        return Err(Error::Usage(format!(
            "piece length {piece_len} exceeds the train length {}",
            train.bins()
        )));
    }
    let pieces = train.bins() / piece_len;
    let dropped = train.bins() - pieces * piece_len;
    if dropped > 0 {
        log::info!("segment: dropped {dropped} trailing bins");
    }
    (0..pieces)
        .map(|p| {
            let rows = train.counts().slice(ndarray::s![p * piece_len..(p + 1) * piece_len, ..]);
            SpikeTrain::new(rows.to_owned(), train.bin_width())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_real(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("`{s}` is not a number")))
}

/// `key=value` pairs of a header line.
fn header_fields<'a>(line: &'a str, tag: &str, path: &Path) -> Result<Vec<(&'a str, &'a str)>> {
    let rest = line
        .strip_prefix(tag)
        .ok_or_else(|| parse_err(path, 1, format!("expected a `{tag}` header")))?;
    rest.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| parse_err(path, 1, format!("malformed header field `{kv}`")))
        })
        .collect()
}

fn field<'a>(fields: &[(&str, &'a str)], key: &str, path: &Path) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| parse_err(path, 1, format!("header lacks `{key}`")))
}

fn field_usize(fields: &[(&str, &str)], key: &str, path: &Path) -> Result<usize> {
    let v = field(fields, key, path)?;
    v.parse()
        .map_err(|_| parse_err(path, 1, format!("`{key}={v}` is not a count")))
}

pub fn spike_train_to_string(x: &SpikeTrain) -> String {
    let mut out = String::new();
    let bw = x.bin_width().map_or("none".to_string(), fmt_real);
    writeln!(out, "# V={} T={} bin_width={bw}", x.neurons(), x.bins()).unwrap();
    for row in x.counts().rows() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        writeln!(out, "{}", cells.join(",")).unwrap();
    }
    out
}

pub fn parse_spike_train(text: &str, path: &Path) -> Result<SpikeTrain> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let fields = header_fields(head, "#", path)?;
    let v = field_usize(&fields, "V", path)?;
    let t = field_usize(&fields, "T", path)?;
    let bw = match field(&fields, "bin_width", path)? {
        "none" => None,
        s => Some(parse_real(s, path, 1)?),
    };
    let mut counts = Array2::<u32>::zeros((t, v));
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        if rows >= t {
            return Err(parse_err(path, lineno, format!("more than T={t} rows")));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != v {
            return Err(parse_err(path, lineno, format!("{} columns, expected V={v}", cells.len())));
        }
        for (j, c) in cells.iter().enumerate() {
            counts[[rows, j]] = c
                .trim()
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("`{c}` is not a spike count")))?;
        }
        rows += 1;
    }
    if rows != t {
        return Err(parse_err(path, rows + 2, format!("{rows} rows, header says T={t}")));
    }
    SpikeTrain::new(counts, bw).map_err(|e| parse_err(path, 1, e.to_string()))
}

pub fn save_spike_train(path: &Path, x: &SpikeTrain) -> Result<()> {
    write(path, &spike_train_to_string(x))
}

pub fn load_spike_train(path: &Path) -> Result<SpikeTrain> {
    parse_spike_train(&read(path)?, path)
}

pub fn save_events(path: &Path, events: &[(f64, usize)]) -> Result<()> {
    let mut out = String::from("time,neuron\n");
    for (t, n) in events {
        writeln!(out, "{},{n}", fmt_real(*t)).unwrap();
    }
    write(path, &out)
}

pub fn load_events(path: &Path) -> Result<Vec<(f64, usize)>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || (i == 0 && line.trim() == "time,neuron") {
            continue;
        }
        let (t, n) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, lineno, "expected `time,neuron`"))?;
        let t = parse_real(t, path, lineno)?;
        let n = n
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("`{n}` is not a neuron index")))?;
        out.push((t, n));
    }
    Ok(out)
}

fn write_matrix(out: &mut String, m: &Array2<f64>) {
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_real(v)).collect();
        writeln!(out, "{}", cells.join(" ")).unwrap();
    }
}

/// Reads `rows` lines of `cols` reals following a label line.
struct BlockReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
}

impl<'a> BlockReader<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (i, l) in self.lines.by_ref() {
            if !l.trim().is_empty() {
                return Ok((i + 1, l));
            }
        }
        Err(parse_err(self.path, 0, "unexpected end of file"))
    }

    fn block(&mut self, label: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let (n, l) = self.next_line()?;
        if l.trim() != label {
            return Err(parse_err(self.path, n, format!("expected block `{label}`")));
        }
        let mut m = Array2::zeros((rows, cols));
        for r in 0..rows {
            let (n, l) = self.next_line()?;
            let cells: Vec<&str> = l.split_whitespace().collect();
            if cells.len() != cols {
                return Err(parse_err(self.path, n, format!("{} values, expected {cols}", cells.len())));
            }
            for (c, s) in cells.iter().enumerate() {
                m[[r, c]] = parse_real(s, self.path, n)?;
            }
        }
        Ok(m)
    }
}

pub fn generative_to_string(theta: &GenerativeParams) -> String {
    let n = theta.neurons();
    let mut out = String::new();
    writeln!(out, "poglm-generative V={} H={}", theta.visible(), theta.hidden()).unwrap();
    writeln!(out, "b").unwrap();
    write_matrix(&mut out, &theta.b.clone().into_shape_with_order((1, n)).unwrap());
    writeln!(out, "W").unwrap();
    write_matrix(&mut out, &theta.w);
    out
}

pub fn parse_generative(text: &str, path: &Path) -> Result<GenerativeParams> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let fields = header_fields(head, "poglm-generative", path)?;
    let v = field_usize(&fields, "V", path)?;
    let h = field_usize(&fields, "H", path)?;
    let n = v + h;
    let mut r = BlockReader { lines, path };
    let b = r.block("b", 1, n)?;
    let w = r.block("W", n, n)?;
    GenerativeParams::new(v, h, Array1::from_iter(b.iter().copied()), w).map_err(|e| parse_err(path, 1, e.to_string()))
}

pub fn variational_to_string(phi: &VariationalParams) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "poglm-variational scheme={} V={} H={} rows={}",
        phi.scheme(),
        phi.visible(),
        phi.hidden(),
        phi.bias_rows()
    )
    .unwrap();
    writeln!(out, "c").unwrap();
    write_matrix(&mut out, &phi.c);
    writeln!(out, "A").unwrap();
    write_matrix(&mut out, &phi.a);
    out
}

pub fn parse_variational(text: &str, path: &Path) -> Result<VariationalParams> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let fields = header_fields(head, "poglm-variational", path)?;
    let scheme: Scheme = field(&fields, "scheme", path)?
        .parse()
        .map_err(|e: Error| parse_err(path, 1, e.to_string()))?;
    let v = field_usize(&fields, "V", path)?;
    let h = field_usize(&fields, "H", path)?;
    let rows = field_usize(&fields, "rows", path)?;
    let n = if h == 0 { 0 } else { v + h };
    let mut r = BlockReader { lines, path };
    let c = r.block("c", rows, h)?;
    let a = r.block("A", n, n)?;
    let phi = VariationalParams::new(scheme, v, h, c, a.clone()).map_err(|e| parse_err(path, 1, e.to_string()))?;
    if phi.a != a {
        return Err(parse_err(path, 1, format!("A has nonzero entries outside the {scheme} mask")));
    }
    Ok(phi)
}

pub fn save_generative(path: &Path, theta: &GenerativeParams) -> Result<()> {
    write(path, &generative_to_string(theta))
}

pub fn load_generative(path: &Path) -> Result<GenerativeParams> {
    parse_generative(&read(path)?, path)
}

pub fn save_variational(path: &Path, phi: &VariationalParams) -> Result<()> {
    write(path, &variational_to_string(phi))
}

pub fn load_variational(path: &Path) -> Result<VariationalParams> {
    parse_variational(&read(path)?, path)
}

pub fn save_config(path: &Path, config: &TrainConfig) -> Result<()> {
    let text = toml::to_string(config).map_err(|e| Error::Usage(format!("cannot serialize config: {e}")))?;
    write(path, &text)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = read(path)?;
    toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start].lines().count().max(1))
            .unwrap_or(0);
        parse_err(path, line, e.message().to_string())
    })
}

/// Loss curve as `epoch,loss` rows.
pub fn save_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in curve.iter().enumerate() {
        writeln!(out, "{e},{}", fmt_real(*l)).unwrap();
    }
    write(path, &out)
}

pub fn load_loss_curve(path: &Path) -> Result<Vec<f64>> {
    let text = read(path)?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (_, v) = l.split_once(',').ok_or_else(|| parse_err(path, i + 1, "expected `epoch,loss`"))?;
            parse_real(v, path, i + 1)
        })
        .collect()
}

/// Write a synthetic or external dataset under `dir`:
/// `train/NNN.csv`, `test/NNN.csv`, and for synthetic data `theta.txt` and
/// `hidden/{train,test}_NNN.csv`.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    for (split, idx) in [("train", &data.train_idx), ("test", &data.test_idx)] {
        for (k, &i) in idx.iter().enumerate() {
            save_spike_train(&dir.join(split).join(format!("{k:03}.csv")), &data.trains[i])?;
            if let Provenance::Synthetic { hidden, .. } = &data.provenance {
                if let HiddenSample::Discrete(z) = &hidden[i] {
                    let zt = SpikeTrain::new(z.clone(), data.trains[i].bin_width())?;
                    save_spike_train(&dir.join("hidden").join(format!("{split}_{k:03}.csv")), &zt)?;
                }
            }
        }
    }
    if let Some(theta) = data.truth() {
        save_generative(&dir.join("theta.txt"), theta)?;
    }
    Ok(())
}

fn sorted_csv(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// Load a dataset directory written by [`save_dataset`]. A plain spike-train
/// file is loaded as a one-train dataset used for both fitting and testing.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if path.is_file() {
        let x = load_spike_train(path)?;
        return Ok(Dataset {
            trains: vec![x],
            train_idx: vec![0],
            test_idx: vec![],
            provenance: Provenance::External {
                source: path.to_path_buf(),
            },
        });
    }
    let train = sorted_csv(&path.join("train"))?;
    let test = sorted_csv(&path.join("test"))?;
    if train.is_empty() && test.is_empty() {
        return Err(Error::Usage(format!("{} holds no train/ or test/ spike trains", path.display())));
    }
    let mut trains = Vec::new();
    for p in train.iter().chain(&test) {
        trains.push(load_spike_train(p)?);
    }
    let n_train = train.len();
    let theta_path = path.join("theta.txt");
    let provenance = if theta_path.is_file() {
        let theta = load_generative(&theta_path)?;
        let mut hidden = Vec::new();
        for (split, files) in [("train", &train), ("test", &test)] {
            for k in 0..files.len() {
                let p = path.join("hidden").join(format!("{split}_{k:03}.csv"));
                if p.is_file() {
                    hidden.push(HiddenSample::Discrete(load_spike_train(&p)?.counts().clone()));
                }
            }
        }
        Provenance::Synthetic { theta, hidden }
    } else {
        Provenance::External {
            source: path.to_path_buf(),
        }
    };
    Dataset::new(trains, (0..n_train).collect(), (n_train..train.len() + test.len()).collect(), provenance)
}
