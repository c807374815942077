//! Seeded experiment drivers and their JSON reports.
//!
//! Trial `t` of an experiment draws its weights from `weights seed + t`
//! (unless a weights file is given), its synthetic input from
//! `input seed + t` and its gradient noise from a stream derived from the
//! master seed, `t` and `σ`. Trials run in parallel and are collected in
//! index order, so a report is a pure function of its configuration apart
//! from the `runtime_ms` fields.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{load_image, load_weights};
use crate::linalg::{norm2, pinv_solve, Matrix};
use crate::model::{
    batch_gradients, forward, gradients, init_weights, GradientSet, Label, NetworkSpec, Shape,
    Weights,
};
use crate::ogap::{dlg_attack, hgap_select, roughness, DlgConfig, DlgInit, GradientMode, LrSchedule};
use crate::rank::{rank_report, NetworkRankReport};
use crate::rgap::{recover_mu, rgap_attack, twin_data, LayerDiagnostics, RgapOptions, RootPolicy};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Rgap,
    Dlg,
    Hgap,
}

impl std::str::FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgap" => Ok(AttackKind::Rgap),
            "dlg" => Ok(AttackKind::Dlg),
            "hgap" => Ok(AttackKind::Hgap),
            other => Err(Error::invalid(format!("unknown attack {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightsSource {
    Seed(u64),
    File(PathBuf),
    Given(Weights),
}

#[derive(Clone, Debug, PartialEq)]
pub enum InputSource {
    /// `Uniform(0, 1)` pixels.
    Synthetic(u64),
    Image(PathBuf),
    Given(Vec<f64>),
}

/// How the true label of each sample is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleLabel {
    Fixed(Label),
    /// Fair coin from the trial stream.
    Random,
    /// The label opposite to the network's prediction (`μ < 0`).
    Misclassified,
    /// The network's prediction (`μ > 0`).
    Classified,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub network: NetworkSpec,
    pub weights: WeightsSource,
    pub input: InputSource,
    pub sample_label: SampleLabel,
    /// Whether R-GAP is told the label; otherwise it infers it.
    pub label_known: bool,
    pub attack: AttackKind,
    pub root_policy: RootPolicy,
    pub virtual_constraints: bool,
    pub trials: usize,
    pub noise_sigmas: Vec<f64>,
    pub batch_size: usize,
    /// Master seed for labels, noise and the DLG initialization.
    pub seed: u64,
    pub dlg: DlgConfig,
}

impl ExperimentConfig {
    pub fn new(network: NetworkSpec) -> Self {
        ExperimentConfig {
            network,
            weights: WeightsSource::Seed(0),
            input: InputSource::Synthetic(0),
            sample_label: SampleLabel::Fixed(Label::Pos),
            label_known: true,
            attack: AttackKind::Rgap,
            root_policy: RootPolicy::Smoothness,
            virtual_constraints: false,
            trials: 1,
            noise_sigmas: Vec::new(),
            batch_size: 1,
            seed: 0,
            dlg: DlgConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.dlg.validate()?;
        if self.trials == 0 || self.batch_size == 0 {
            return Err(Error::invalid("trials and batch_size must be at least 1"));
        }
        if self.noise_sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid("noise sigmas must be finite and non-negative"));
        }
        Ok(())
    }

    /// Canonical JSON of every field that influences results.
    pub fn to_value(&self) -> Value {
        let weights = match &self.weights {
            WeightsSource::Seed(s) => json!({"seed": s}),
            WeightsSource::File(p) => json!({"file": p.display().to_string()}),
            WeightsSource::Given(w) => {
                let flat: Vec<f64> = w.layers.iter().flatten().flat_map(|m| m.data().to_vec()).collect();
                json!({"given": flat})
            }
        };
        let input = match &self.input {
            InputSource::Synthetic(s) => json!({"synthetic": s}),
            InputSource::Image(p) => json!({"image": p.display().to_string()}),
            InputSource::Given(x) => json!({"given": x}),
        };
        let sample_label = match self.sample_label {
            SampleLabel::Fixed(y) => json!(i8::from(y)),
            SampleLabel::Random => json!("random"),
            SampleLabel::Misclassified => json!("misclassified"),
            SampleLabel::Classified => json!("classified"),
        };
        let d = &self.dlg;
        let init = match &d.init {
            DlgInit::RandomUniform => json!("uniform"),
            DlgInit::Supplied(x) => json!(x),
        };
        let schedule = match d.schedule {
            LrSchedule::Constant => json!("constant"),
            LrSchedule::MultiStep { gamma } => json!({"multistep": gamma}),
        };
        json!({
            "network": serde_json::from_str::<Value>(&self.network.to_json()).expect("network json"),
            "weights": weights,
            "input": input,
            "sample_label": sample_label,
            "label_known": self.label_known,
            "attack": self.attack,
            "root_policy": self.root_policy,
            "virtual_constraints": self.virtual_constraints,
            "trials": self.trials,
            "noise_sigmas": self.noise_sigmas,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "dlg": {
                "max_iters": d.max_iters,
                "learning_rate": d.learning_rate,
                "betas": [d.adam_beta1, d.adam_beta2],
                "eps": d.adam_eps,
                "init": init,
                "gradient_mode": match d.gradient_mode {
                    GradientMode::FiniteDifference => "finite-difference",
                    GradientMode::Analytic => "analytic",
                },
                "fd_step": d.fd_step,
                "schedule": schedule,
            },
        })
    }

    /// Hex SHA-256 of [`Self::to_value`].
    pub fn hash(&self) -> String {
        hash_value(&self.to_value())
    }
}

fn hash_value(v: &Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

/// One attack candidate inside an H-GAP trial.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateRecord {
    pub name: String,
    pub mse: f64,
    pub roughness: f64,
    pub runtime_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchRecord {
    /// MSE of the reconstruction to each sample of the batch.
    pub mse_to_samples: Vec<f64>,
    /// `||x̂ − P·x̂||₂` for the projection `P` onto the span of the samples.
    pub mixture_residual: f64,
    pub relative_mixture_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub architecture: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub mse: f64,
    pub runtime_ms: f64,
    pub mu_roots: Vec<f64>,
    /// Label of the sample (first sample of a batch).
    pub label: Label,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inferred_label: Option<Label>,
    pub per_layer: Vec<LayerDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<CandidateRecord>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dlg_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<BatchRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mse_mean: f64,
    pub mse_std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Summary {
            mse_mean: mean,
            mse_std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RaRow {
    pub architecture: String,
    pub max_ra_i: i64,
    pub mse_mean: f64,
    pub mse_std: f64,
}

/// A reconstruction kept for image dumps.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub name: String,
    pub x_hat: Vec<f64>,
    pub truth: Vec<f64>,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub attack: AttackKind,
    pub trials: Vec<TrialRecord>,
    /// Of the first (or only) architecture.
    pub rank_report: NetworkRankReport,
    pub summary: Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ra_study: Option<Vec<RaRow>>,
    #[serde(skip)]
    pub reconstructions: Vec<Reconstruction>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON with every `runtime_ms` zeroed, for determinism checks.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        zero_runtimes(&mut v);
        serde_json::to_string_pretty(&v).expect("value serializes")
    }
}

fn zero_runtimes(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for (k, child) in map.iter_mut() {
                if k == "runtime_ms" {
                    *child = json!(0.0);
                } else {
                    zero_runtimes(child);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(zero_runtimes),
        _ => {}
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len().max(1) as f64
}

/// Independent stream for `(seed, trial, purpose)`.
fn stream(seed: u64, trial: usize, purpose: u64) -> Rng {
    let mut mix = Rng::new(seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    for _ in 0..=trial % 7 {
        mix.next_u64();
    }
    Rng::new(mix.next_u64() ^ (trial as u64).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

const LABEL_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const DLG_STREAM: u64 = 3;

/// Everything a trial attacks.
struct Scenario {
    weights: Weights,
    samples: Vec<(Vec<f64>, Label)>,
    grads: GradientSet,
}

fn weights_for(cfg: &ExperimentConfig, trial: usize) -> Result<Weights> {
    match &cfg.weights {
        WeightsSource::Seed(s) => Ok(init_weights(&cfg.network, s.wrapping_add(trial as u64))),
        WeightsSource::File(p) => load_weights(p, &cfg.network),
        WeightsSource::Given(w) => {
            w.check(&cfg.network)?;
            Ok(w.clone())
        }
    }
}

fn input_for(cfg: &ExperimentConfig, trial: usize, index: usize) -> Result<Vec<f64>> {
    let n = cfg.network.input_len();
    let x = match &cfg.input {
        InputSource::Synthetic(s) => {
            let seed = s.wrapping_add((trial * cfg.batch_size + index) as u64);
            Rng::new(seed).fill_uniform(n, 0.0, 1.0)
        }
        InputSource::Image(p) => load_image(p)?.0,
        InputSource::Given(x) => x.clone(),
    };
    if x.len() != n {
        return Err(Error::invalid(format!(
            "input has {} values, network expects {n}",
            x.len()
        )));
    }
    Ok(x)
}

fn label_for(cfg: &ExperimentConfig, w: &Weights, x: &[f64], rng: &mut Rng) -> Result<Label> {
    let predicted = || -> Result<Label> {
        Ok(Label::from_sign(forward(&cfg.network, w, x, Label::Pos)?.logit))
    };
    Ok(match cfg.sample_label {
        SampleLabel::Fixed(y) => y,
        SampleLabel::Random => {
            if rng.next_f64() < 0.5 {
                Label::Neg
            } else {
                Label::Pos
            }
        }
        SampleLabel::Misclassified => predicted()?.flip(),
        SampleLabel::Classified => predicted()?,
    })
}

fn scenario(cfg: &ExperimentConfig, trial: usize, batch: usize, sigma: f64) -> Result<Scenario> {
    let weights = weights_for(cfg, trial)?;
    let mut label_rng = stream(cfg.seed, trial, LABEL_STREAM);
    let mut samples = Vec::with_capacity(batch);
    for b in 0..batch {
        let x = input_for(cfg, trial, b)?;
        let y = label_for(cfg, &weights, &x, &mut label_rng)?;
        samples.push((x, y));
    }
    let mut grads = if batch == 1 {
        gradients(&cfg.network, &weights, &samples[0].0, samples[0].1)?
    } else {
        batch_gradients(&cfg.network, &weights, &samples)?
    };
    if sigma > 0.0 {
        let bits = sigma.to_bits();
        let mut rng = stream(cfg.seed ^ bits, trial, NOISE_STREAM);
        for m in grads.layers.iter_mut().flatten() {
            for v in m.data_mut() {
                *v += sigma * rng.normal();
            }
        }
    }
    Ok(Scenario {
        weights,
        samples,
        grads,
    })
}

struct Outcome {
    record: TrialRecord,
    recon: Reconstruction,
}

fn run_trial(cfg: &ExperimentConfig, trial: usize, batch: usize, sigma: Option<f64>) -> Result<Outcome> {
    let sc = scenario(cfg, trial, batch, sigma.unwrap_or(0.0))?;
    let net = &cfg.network;
    let (truth, label) = (&sc.samples[0].0, sc.samples[0].1);
    let shape = net.input_shape();
    let mut record = TrialRecord {
        trial,
        architecture: None,
        sigma,
        mse: 0.0,
        runtime_ms: 0.0,
        mu_roots: Vec::new(),
        label,
        inferred_label: None,
        per_layer: Vec::new(),
        candidates: None,
        chosen: None,
        dlg_iterations: None,
        batch: None,
    };

    let run_rgap = |record: &mut TrialRecord| -> Result<(Vec<f64>, f64)> {
        let opts = RgapOptions {
            root_policy: cfg.root_policy,
            virtual_constraints: cfg.virtual_constraints,
            rcond: 0.0,
        };
        let hint = cfg.label_known.then_some(label);
        let start = Instant::now();
        let out = rgap_attack(net, &sc.weights, &sc.grads, hint, &opts)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        record.mu_roots = out.mu.roots.clone();
        if !cfg.label_known {
            record.inferred_label = Some(out.label);
        }
        let best = out.into_best();
        record.per_layer = best.per_layer;
        Ok((best.x_hat, ms))
    };
    let run_dlg = |record: &mut TrialRecord| -> Result<(Vec<f64>, f64)> {
        let mut dlg = cfg.dlg.clone();
        dlg.seed = stream(cfg.seed, trial, DLG_STREAM).next_u64();
        let start = Instant::now();
        let r = dlg_attack(net, &sc.weights, &sc.grads, label, &dlg)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        record.dlg_iterations = Some(r.iterations_run);
        Ok((r.x_hat, ms))
    };

    let (x_hat, runtime) = match cfg.attack {
        AttackKind::Rgap => run_rgap(&mut record)?,
        AttackKind::Dlg => run_dlg(&mut record)?,
        AttackKind::Hgap => {
            let (xr, tr) = run_rgap(&mut record)?;
            let (xd, td) = run_dlg(&mut record)?;
            let cands = vec![("rgap".to_string(), xr), ("dlg".to_string(), xd)];
            let chosen = hgap_select(&cands, shape)?.clone();
            record.candidates = Some(
                cands
                    .iter()
                    .zip([tr, td])
                    .map(|((name, x), ms)| CandidateRecord {
                        name: name.clone(),
                        mse: mse(x, truth),
                        roughness: roughness(x, shape),
                        runtime_ms: ms,
                    })
                    .collect(),
            );
            record.chosen = Some(chosen.0);
            (chosen.1, tr + td)
        }
    };
    record.runtime_ms = runtime;
    record.mse = mse(&x_hat, truth);
    if batch > 1 {
        let per: Vec<f64> = sc.samples.iter().map(|(x, _)| mse(&x_hat, x)).collect();
        record.mse = per.iter().copied().fold(f64::INFINITY, f64::min);
        let residual = mixture_residual(&x_hat, &sc.samples)?;
        let scale = norm2(&x_hat);
        record.batch = Some(BatchRecord {
            mse_to_samples: per,
            mixture_residual: residual,
            relative_mixture_residual: if scale > 0.0 { residual / scale } else { 0.0 },
        });
    }
    Ok(Outcome {
        recon: Reconstruction {
            name: format!("trial{trial}"),
            x_hat,
            truth: truth.clone(),
            shape,
        },
        record,
    })
}

/// Distance from `x` to the span of the samples.
pub fn mixture_residual(x: &[f64], samples: &[(Vec<f64>, Label)]) -> Result<f64> {
    let n = x.len();
    let mut s = Matrix::zeros(n, samples.len());
    for (j, (v, _)) in samples.iter().enumerate() {
        for i in 0..n {
            s[(i, j)] = v[i];
        }
    }
    Ok(pinv_solve(&s, x, 0.0)?.residual_norm)
}

fn collect(
    cfg: &ExperimentConfig,
    jobs: Vec<(usize, Option<f64>)>,
    batch: usize,
) -> Result<(Vec<TrialRecord>, Vec<Reconstruction>)> {
    let outcomes: Vec<Outcome> = jobs
        .into_par_iter()
        .map(|(t, sigma)| run_trial(cfg, t, batch, sigma))
        .collect::<Result<_>>()?;
    Ok(outcomes.into_iter().map(|o| (o.record, o.recon)).unzip())
}

fn report(
    cfg: &ExperimentConfig,
    hash: String,
    trials: Vec<TrialRecord>,
    reconstructions: Vec<Reconstruction>,
) -> Result<ExperimentReport> {
    let mses: Vec<f64> = trials.iter().map(|t| t.mse).collect();
    Ok(ExperimentReport {
        config_hash: hash,
        attack: cfg.attack,
        rank_report: rank_report(&cfg.network)?,
        summary: Summary::of(&mses),
        trials,
        sweep: None,
        ra_study: None,
        reconstructions,
    })
}

/// `cfg.trials` independent single-sample attacks.
pub fn run_single(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let jobs = (0..cfg.trials).map(|t| (t, None)).collect();
    let (trials, recons) = collect(cfg, jobs, 1)?;
    report(cfg, cfg.hash(), trials, recons)
}

/// Attacks on gradients with added `N(0, σ²)` noise, for every σ.
pub fn run_noise_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.noise_sigmas.is_empty() {
        return Err(Error::invalid("noise sweep needs at least one sigma"));
    }
    let jobs = cfg
        .noise_sigmas
        .iter()
        .flat_map(|&s| (0..cfg.trials).map(move |t| (t, Some(s))))
        .collect();
    let (trials, recons) = collect(cfg, jobs, 1)?;
    let sweep = cfg
        .noise_sigmas
        .iter()
        .map(|&s| {
            let m: Vec<f64> = trials.iter().filter(|t| t.sigma == Some(s)).map(|t| t.mse).collect();
            let sum = Summary::of(&m);
            SweepRow {
                sigma: s,
                mse_mean: sum.mse_mean,
                mse_std: sum.mse_std,
            }
        })
        .collect();
    let mut r = report(cfg, cfg.hash(), trials, recons)?;
    r.sweep = Some(sweep);
    Ok(r)
}

/// Attacks on gradients averaged over `cfg.batch_size` samples.
pub fn run_batch(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.batch_size < 2 {
        return Err(Error::invalid("batch experiments need batch_size >= 2"));
    }
    if cfg.attack != AttackKind::Rgap {
        return Err(Error::Unsupported("batch experiments run R-GAP only".into()));
    }
    let jobs = (0..cfg.trials).map(|t| (t, None)).collect();
    let (trials, recons) = collect(cfg, jobs, cfg.batch_size)?;
    report(cfg, cfg.hash(), trials, recons)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwinRecord {
    pub trial: usize,
    pub label: Label,
    pub true_mu: f64,
    pub mu_roots: Vec<f64>,
    /// `None` when the logit is unique.
    pub twin_mu: Option<f64>,
    /// `||∇(twin) − ∇(truth)|| / ||∇(truth)||`.
    pub gradient_mismatch: Option<f64>,
    pub cosine_to_truth: Option<f64>,
    /// `||twin|| / ||truth||`.
    pub norm_ratio: Option<f64>,
    pub mse_to_truth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwinReport {
    pub config_hash: String,
    pub trials: Vec<TwinRecord>,
    #[serde(skip)]
    pub reconstructions: Vec<Reconstruction>,
}

impl TwinReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// The twin reconstruction of every trial's sample, when one exists.
pub fn run_twin(cfg: &ExperimentConfig) -> Result<TwinReport> {
    cfg.validate()?;
    let net = &cfg.network;
    let outcomes: Vec<(TwinRecord, Option<Reconstruction>)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let sc = scenario(cfg, t, 1, 0.0)?;
            let (x, y) = (&sc.samples[0].0, sc.samples[0].1);
            let true_mu = forward(net, &sc.weights, x, y)?.mu;
            let mut rec = TwinRecord {
                trial: t,
                label: y,
                true_mu,
                mu_roots: recover_mu(sc.grads.last_layer_dot(&sc.weights))?.roots,
                twin_mu: None,
                gradient_mismatch: None,
                cosine_to_truth: None,
                norm_ratio: None,
                mse_to_truth: None,
            };
            let hint = cfg.label_known.then_some(y);
            let twin = match twin_data(net, &sc.weights, &sc.grads, hint, true_mu) {
                Ok(r) => r,
                Err(Error::NoTwin) => return Ok((rec, None)),
                Err(e) => return Err(e),
            };
            let g2 = gradients(net, &sc.weights, &twin.x_hat, twin.label)?;
            let (nt, nx) = (norm2(&twin.x_hat), norm2(x));
            rec.twin_mu = Some(twin.mu_used);
            rec.gradient_mismatch = Some(g2.squared_distance(&sc.grads).sqrt() / sc.grads.norm());
            rec.cosine_to_truth = Some(twin.x_hat.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / (nt * nx));
            rec.norm_ratio = Some(nt / nx);
            rec.mse_to_truth = Some(mse(&twin.x_hat, x));
            let recon = Reconstruction {
                name: format!("trial{t}_twin"),
                x_hat: twin.x_hat,
                truth: x.clone(),
                shape: net.input_shape(),
            };
            Ok((rec, Some(recon)))
        })
        .collect::<Result<_>>()?;
    let (trials, recons): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    Ok(TwinReport {
        config_hash: cfg.hash(),
        trials,
        reconstructions: recons.into_iter().flatten().collect(),
    })
}

/// The same attack over several named architectures, tabulated against
/// their largest RA-i (ascending).
pub fn run_ra_study(configs: &[(String, ExperimentConfig)]) -> Result<ExperimentReport> {
    let Some((_, first)) = configs.first() else {
        return Err(Error::invalid("RA study needs at least one architecture"));
    };
    let mut trials = Vec::new();
    let mut recons = Vec::new();
    let mut rows = Vec::new();
    let mut hashes = Vec::new();
    for (name, cfg) in configs {
        cfg.validate()?;
        let jobs = (0..cfg.trials).map(|t| (t, None)).collect();
        let (mut t, r) = collect(cfg, jobs, 1)?;
        let m: Vec<f64> = t.iter().map(|t| t.mse).collect();
        let sum = Summary::of(&m);
        rows.push(RaRow {
            architecture: name.clone(),
            max_ra_i: rank_report(&cfg.network)?.max_ra_i,
            mse_mean: sum.mse_mean,
            mse_std: sum.mse_std,
        });
        t.iter_mut().for_each(|t| t.architecture = Some(name.clone()));
        trials.extend(t);
        recons.extend(r.into_iter().map(|mut r| {
            r.name = format!("{name}_{}", r.name);
            r
        }));
        hashes.push(json!({"name": name, "config": cfg.to_value()}));
    }
    rows.sort_by_key(|r| r.max_ra_i);
    let mut rep = report(first, hash_value(&Value::Array(hashes)), trials, recons)?;
    rep.ra_study = Some(rows);
    Ok(rep)
}
