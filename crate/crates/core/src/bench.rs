//! Seeded Monte Carlo experiments and their CSV output.
//!
//! Every trial draws its matrix, signal and noise from streams derived from
//! the master seed and the trial index only, so grid points share their
//! random draws and a rerun reproduces the table exactly whatever the
//! scheduling.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};

use crate::baselines::{omp_recover, OmpStop};
use crate::datagen::{add_noise, derive_seed, dft_matrix, gen_matrix, gen_signal, SignalModel};
use crate::error::{Error, Result};
use crate::estimator::{recover, RecoverOptions};
use crate::image::{multiscale_recover, pgm_read, synthetic_image, Image, MultiscaleConfig};
use crate::model::{nmse, ratio_to_db};
use crate::par;
use crate::search::SearchConfig;
use crate::types::{CMatrix, SparseSignal, SupportSet, C64};

pub const CSV_HEADER: [&str; 13] = [
    "experiment",
    "method",
    "M",
    "N",
    "p",
    "snr_db",
    "trials",
    "nmse_db",
    "mean_time_s",
    "support_exact_rate",
    "p_hat_mean",
    "sigma2_hat_mean",
    "seed",
];

const STREAM_MATRIX: u64 = 1;
const STREAM_SIGNAL: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_IMAGE: u64 = 4;
/// Redraws allowed when a trial's signal comes out all zero.
const MAX_REDRAWS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SnrSweep,
    PSweep,
    HyperRobustness,
    Image,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::SnrSweep => "snr_sweep",
            ExperimentKind::PSweep => "p_sweep",
            ExperimentKind::HyperRobustness => "hyper_robustness",
            ExperimentKind::Image => "image",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    /// i.i.d. complex Gaussian with unit-norm columns.
    #[default]
    Gaussian,
    /// Unitary DFT; requires `N = M`.
    Orthonormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    /// Sparsity rate(s); a scalar or a list.
    #[serde(deserialize_with = "scalar_or_list")]
    pub p: Vec<f64>,
    /// SNR value(s) in dB; numbers or `"inf"`.
    #[serde(deserialize_with = "snr_list", serialize_with = "serialize_snr")]
    pub snr_db: Vec<f64>,
    pub trials: usize,
    /// Greedy passes `D`.
    pub passes: usize,
    pub tail_prob: f64,
    pub support_budget: Option<usize>,
    pub p_init: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub signal: SignalModel,
    pub matrix: MatrixKind,
    /// Include the OMP baseline (given the true sparsity).
    pub omp: bool,
    /// Record wall time. With timing off `mean_time_s` is left empty and the
    /// whole CSV is reproducible byte for byte.
    pub timing: bool,
    pub output: Option<PathBuf>,
    /// Image experiments: side of the synthetic image (ignored with `input`).
    pub image_side: usize,
    /// Image experiments: measurements per detail band; defaults to `N_band / 4`.
    pub m_per_band: Option<usize>,
    pub keep_fraction: f64,
    /// Image experiments: PGM source instead of the synthetic image.
    pub input: Option<PathBuf>,
    /// Image experiments: where to write the first trial's reconstruction.
    pub output_image: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::SnrSweep,
            m: 256,
            n: 1024,
            p: vec![0.005],
            snr_db: vec![0.0, 10.0, 20.0, 30.0],
            trials: 100,
            passes: 5,
            tail_prob: 1e-3,
            support_budget: None,
            p_init: 0.003,
            max_iter: 10,
            seed: 0,
            signal: SignalModel::default(),
            matrix: MatrixKind::Gaussian,
            omp: true,
            timing: true,
            output: None,
            image_side: 32,
            m_per_band: None,
            keep_fraction: 0.05,
            input: None,
            output_image: None,
        }
    }
}

fn scalar_or_list<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SnrValue {
    Num(f64),
    Text(String),
}

impl SnrValue {
    fn value<E: serde::de::Error>(self) -> std::result::Result<f64, E> {
        match self {
            SnrValue::Num(v) => Ok(v),
            SnrValue::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                other => other
                    .parse()
                    .map_err(|_| E::custom(format!("invalid SNR {s:?}; expected a number or \"inf\""))),
            },
        }
    }
}

fn snr_list<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(SnrValue),
        Many(Vec<SnrValue>),
    }
    match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => Ok(vec![v.value()?]),
        OneOrMany::Many(v) => v.into_iter().map(SnrValue::value).collect(),
    }
}

fn serialize_snr<S: serde::Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        if x.is_infinite() {
            seq.serialize_element("inf")?;
        } else {
            seq.serialize_element(x)?;
        }
    }
    seq.end()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.p.is_empty() || self.snr_db.is_empty() {
            return bad("p and snr_db grids must be nonempty".into());
        }
        if let Some(p) = self.p.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return bad(format!("p must lie in (0, 1), got {p}"));
        }
        if let Some(s) = self.snr_db.iter().find(|s| s.is_nan() || **s == f64::NEG_INFINITY) {
            return bad(format!("invalid snr_db {s}"));
        }
        if !(self.p_init > 0.0 && self.p_init < 1.0) {
            return bad(format!("p_init must lie in (0, 1), got {}", self.p_init));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        self.search().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.signal.validate().map_err(|e| Error::Config(e.to_string()))?;
        match self.experiment {
            ExperimentKind::Image => {
                if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
                    return bad(format!("keep_fraction must lie in (0, 1], got {}", self.keep_fraction));
                }
                if self.input.is_none() && (self.image_side < 2 || !self.image_side.is_multiple_of(2)) {
                    return bad(format!("image_side must be even and at least 2, got {}", self.image_side));
                }
            }
            _ => {
                if self.m == 0 || self.n == 0 {
                    return bad("M and N must be positive".into());
                }
                if self.matrix == MatrixKind::Orthonormal && self.m != self.n {
                    return bad("an orthonormal matrix needs N = M".into());
                }
            }
        }
        Ok(())
    }

    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            support_budget: self.support_budget,
            passes: self.passes,
            tail_prob: self.tail_prob,
            ..Default::default()
        }
    }
}

/// Parses a JSON document, applies `overrides` on top of it (keys are the
/// config's field names) and validates the result.
pub fn parse_config(json: &str, overrides: &Map<String, Value>) -> Result<ExperimentConfig> {
    let mut doc: Value = if json.trim().is_empty() {
        Value::Object(Map::new())
    } else {
        serde_json::from_str(json).map_err(|e| Error::Config(format!("config: {e}")))?
    };
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
    for (k, v) in overrides {
        obj.insert(k.clone(), v.clone());
    }
    let config: ExperimentConfig =
        serde_json::from_value(doc).map_err(|e| Error::Config(format!("config: {e}")))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: Option<&std::path::Path>, overrides: &Map<String, Value>) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    parse_config(&text, overrides)
}

/// Interprets a command-line value: JSON when it parses, a list when it
/// contains commas, a plain string otherwise.
pub fn flag_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(|s| flag_value(s.trim())).collect());
    }
    Value::String(raw.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub method: String,
    pub m: usize,
    pub n: usize,
    pub p: f64,
    pub snr_db: f64,
    pub trials: usize,
    pub nmse_db: f64,
    pub mean_time_s: Option<f64>,
    pub support_exact_rate: Option<f64>,
    pub p_hat_mean: Option<f64>,
    pub sigma2_hat_mean: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    /// Hyper-robustness runs: per grid point, the fraction of trials whose
    /// MAP support did not depend on `p_init`.
    pub p_init_agreement: Vec<f64>,
}

struct Outcome {
    x_hat: Vec<C64>,
    exact: bool,
    support: SupportSet,
    p_hat: Option<f64>,
    sigma2_hat: Option<f64>,
    secs: f64,
}

struct Trial {
    truth: SparseSignal,
    methods: Vec<Outcome>,
}

struct Method {
    label: String,
    run: MethodKind,
}

enum MethodKind {
    Bootstrap { p_init: Option<f64> },
    Omp,
}

fn methods(config: &ExperimentConfig) -> Vec<Method> {
    let mut out = Vec::new();
    if config.experiment == ExperimentKind::HyperRobustness {
        out.push(Method {
            label: format!("ngpfbmp_p_init_{}", config.p_init),
            run: MethodKind::Bootstrap { p_init: Some(config.p_init) },
        });
        out.push(Method {
            label: "ngpfbmp_p_init_true".into(),
            run: MethodKind::Bootstrap { p_init: None },
        });
    } else {
        out.push(Method {
            label: "ngpfbmp".into(),
            run: MethodKind::Bootstrap { p_init: Some(config.p_init) },
        });
    }
    if config.omp {
        out.push(Method {
            label: "omp_true_k".into(),
            run: MethodKind::Omp,
        });
    }
    out
}

fn trial_matrix(config: &ExperimentConfig, trial: u64) -> CMatrix {
    match config.matrix {
        MatrixKind::Gaussian => gen_matrix(config.m, config.n, derive_seed(config.seed, STREAM_MATRIX, trial)),
        MatrixKind::Orthonormal => dft_matrix(config.n),
    }
}

/// Draws the trial's signal, redrawing (from fresh sub-streams) until it has
/// at least one active entry.
fn trial_signal(config: &ExperimentConfig, p: f64, trial: u64) -> Result<SparseSignal> {
    let base = derive_seed(config.seed, STREAM_SIGNAL, trial);
    for redraw in 0..MAX_REDRAWS {
        let s = gen_signal(config.n, p, &config.signal, derive_seed(base, 0, redraw))?;
        if !s.support().is_empty() {
            return Ok(s);
        }
    }
    Err(Error::Domain(format!(
        "no nonzero signal in {MAX_REDRAWS} draws at p = {p}"
    )))
}

fn run_trial(config: &ExperimentConfig, methods: &[Method], p: f64, snr: f64, trial: u64) -> Result<Trial> {
    let phi = trial_matrix(config, trial);
    let truth = trial_signal(config, p, trial)?;
    let clean = phi.mul_vec(truth.values());
    let (y, _) = add_noise(&clean, snr, derive_seed(config.seed, STREAM_NOISE, trial))?;
    let mut outcomes = Vec::with_capacity(methods.len());
    for method in methods {
        let outcome = match method.run {
            MethodKind::Bootstrap { p_init } => {
                let options = RecoverOptions {
                    p_init: p_init.unwrap_or(p),
                    max_iter: config.max_iter,
                    search: config.search(),
                    ..Default::default()
                };
                let start = Instant::now();
                let res = recover(&phi, &y, &options)?;
                let secs = start.elapsed().as_secs_f64();
                Outcome {
                    exact: &res.s_map == truth.support(),
                    support: res.s_map,
                    x_hat: res.x_ammse,
                    p_hat: Some(res.p_hat),
                    sigma2_hat: Some(res.sigma2_hat),
                    secs,
                }
            }
            MethodKind::Omp => {
                let start = Instant::now();
                let res = omp_recover(&phi, &y, OmpStop::sparsity(truth.support().len()))?;
                let secs = start.elapsed().as_secs_f64();
                Outcome {
                    exact: &res.active == truth.support(),
                    support: res.active,
                    x_hat: res.signal.into_values(),
                    p_hat: None,
                    sigma2_hat: None,
                    secs,
                }
            }
        };
        outcomes.push(outcome);
    }
    Ok(Trial { truth, methods: outcomes })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Runs every grid point (`p` outer, `snr_db` inner) and aggregates one row
/// per (grid point, method).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if config.experiment == ExperimentKind::Image {
        return run_image(config);
    }
    let methods = methods(config);
    let mut report = ExperimentReport::default();
    for &p in &config.p {
        for &snr in &config.snr_db {
            let trials: Vec<Trial> = par::map_indices(config.trials, |t| run_trial(config, &methods, p, snr, t as u64))
                .into_iter()
                .collect::<Result<_>>()?;
            for (k, method) in methods.iter().enumerate() {
                let outcomes = || trials.iter().map(move |t| &t.methods[k]);
                let nmse_db = nmse(trials.iter().map(|t| (t.truth.values(), t.methods[k].x_hat.as_slice())))?;
                report.rows.push(ResultRow {
                    experiment: config.experiment.label().into(),
                    method: method.label.clone(),
                    m: config.m,
                    n: config.n,
                    p,
                    snr_db: snr,
                    trials: config.trials,
                    nmse_db,
                    mean_time_s: if config.timing { mean(outcomes().map(|o| o.secs)) } else { None },
                    support_exact_rate: mean(outcomes().map(|o| o.exact as u8 as f64)),
                    p_hat_mean: mean(outcomes().filter_map(|o| o.p_hat)),
                    sigma2_hat_mean: mean(outcomes().filter_map(|o| o.sigma2_hat)),
                    seed: config.seed,
                });
            }
            if config.experiment == ExperimentKind::HyperRobustness {
                let agree = trials
                    .iter()
                    .filter(|t| t.methods[0].support == t.methods[1].support)
                    .count();
                report.p_init_agreement.push(agree as f64 / trials.len() as f64);
            }
        }
    }
    Ok(report)
}

fn run_image(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let source: Image = match &config.input {
        Some(path) => pgm_read(path)?,
        None => synthetic_image(config.image_side),
    };
    let n_band = (source.width / 2) * (source.height / 2);
    let m_per_band = config.m_per_band.unwrap_or((n_band / 4).max(1));
    let mut report = ExperimentReport::default();
    for &snr in &config.snr_db {
        let runs = par::map_indices(config.trials, |t| {
            let cfg = MultiscaleConfig {
                m_per_band,
                snr_db: snr,
                keep_fraction: config.keep_fraction,
                search: config.search(),
                seed: derive_seed(config.seed, STREAM_IMAGE, t as u64),
            };
            multiscale_recover(&source, &cfg)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        if let (Some(path), Some(first)) = (&config.output_image, runs.first()) {
            crate::image::pgm_write(path, &first.image)?;
        }
        let linear = mean(runs.iter().map(|r| 10f64.powf(r.image_nmse_db / 10.0))).unwrap_or(0.0);
        let bands = || runs.iter().flat_map(|r| r.bands.iter());
        report.rows.push(ResultRow {
            experiment: config.experiment.label().into(),
            method: "ngpfbmp_multiscale".into(),
            m: m_per_band,
            n: n_band,
            p: config.keep_fraction,
            snr_db: snr,
            trials: config.trials,
            nmse_db: ratio_to_db(linear),
            mean_time_s: if config.timing {
                mean(runs.iter().map(|r| r.elapsed.as_secs_f64()))
            } else {
                None
            },
            support_exact_rate: None,
            p_hat_mean: mean(bands().filter_map(|b| b.p_hat)),
            sigma2_hat_mean: mean(bands().filter_map(|b| b.sigma2_hat)),
            seed: config.seed,
        });
    }
    Ok(report)
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.method.clone(),
            r.m.to_string(),
            r.n.to_string(),
            fmt_f64(r.p),
            fmt_f64(r.snr_db),
            r.trials.to_string(),
            fmt_f64(r.nmse_db),
            fmt_opt(r.mean_time_s),
            fmt_opt(r.support_exact_rate),
            fmt_opt(r.p_hat_mean),
            fmt_opt(r.sigma2_hat_mean),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[ResultRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            experiment: kind,
            m: 24,
            n: 64,
            p: vec![0.05],
            snr_db: vec![10.0, 30.0],
            trials: 4,
            passes: 2,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("{}", &Map::new()).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let c = parse_config("", &Map::new()).unwrap();
        assert_eq!(c.trials, 100);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config(r#"{"trails": 3}"#, &Map::new()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("trails"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_config("{\n  \"trials\": ,\n}", &Map::new()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn override_beats_file() {
        let mut o = Map::new();
        o.insert("trials".into(), flag_value("7"));
        o.insert("snr_db".into(), flag_value("0,inf"));
        let c = parse_config(r#"{"trials": 3, "snr_db": 20, "p": [0.01, 0.02]}"#, &o).unwrap();
        assert_eq!(c.trials, 7);
        assert_eq!(c.snr_db, vec![0.0, f64::INFINITY]);
        assert_eq!(c.p, vec![0.01, 0.02]);
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [r#"{"trials": 0}"#, r#"{"p": []}"#, r#"{"p": 1.5}"#, r#"{"snr_db": "loud"}"#] {
            assert!(matches!(parse_config(bad, &Map::new()), Err(Error::Config(_))), "{bad}");
        }
        let orth = r#"{"matrix": "orthonormal", "M": 8, "N": 16}"#;
        assert!(parse_config(orth, &Map::new()).is_err());
    }

    #[test]
    fn orthonormal_noiseless_is_exact() {
        let c = ExperimentConfig {
            m: 64,
            n: 64,
            p: vec![0.05],
            snr_db: vec![f64::INFINITY],
            trials: 1,
            matrix: MatrixKind::Orthonormal,
            seed: 2,
            ..Default::default()
        };
        let rep = run_experiment(&c).unwrap();
        assert!(rep.rows[0].nmse_db <= -100.0, "{:?}", rep.rows[0]);
        assert_eq!(rep.rows[0].support_exact_rate, Some(1.0));
    }

    #[test]
    fn rows_follow_grid_order_and_schema() {
        let rep = run_experiment(&small(ExperimentKind::SnrSweep)).unwrap();
        let labels: Vec<_> = rep.rows.iter().map(|r| (r.snr_db, r.method.as_str())).collect();
        assert_eq!(labels, [(10.0, "ngpfbmp"), (10.0, "omp_true_k"), (30.0, "ngpfbmp"), (30.0, "omp_true_k")]);
        let csv = csv_string(&rep.rows).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn rerun_is_byte_identical_without_timing() {
        let mut c = small(ExperimentKind::HyperRobustness);
        c.timing = false;
        let a = csv_string(&run_experiment(&c).unwrap().rows).unwrap();
        let b = csv_string(&run_experiment(&c).unwrap().rows).unwrap();
        assert_eq!(a, b);
        assert!(a.lines().nth(1).unwrap().contains(",,"));
    }

    #[test]
    fn image_experiment_runs() {
        let c = ExperimentConfig {
            experiment: ExperimentKind::Image,
            image_side: 16,
            snr_db: vec![25.0],
            trials: 2,
            keep_fraction: 0.1,
            ..Default::default()
        };
        let rep = run_experiment(&c).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!((rep.rows[0].m, rep.rows[0].n), (16, 64));
        assert!(rep.rows[0].nmse_db.is_finite());
    }
}
