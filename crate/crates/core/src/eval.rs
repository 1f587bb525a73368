//! Evaluation metrics, the ten-run experiment protocol, statistical tests,
//! and machine-readable report emission.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{
    fit_concept_priors, generate_cohort, read_cohort, split_cohort, GeneratorConfig,
    PatientRecord, SplitSpec,
};
use crate::diffcore::special::reg_inc_beta;
use crate::error::{LpsError, Result};
use crate::model::{
    assemble_features, ConceptPriors, FeatureScaler, LpsModel, ModelArch, ObsSigma,
};
use crate::oracle::spearman;
use crate::train::{
    lps_q_inference, train_baseline, train_map_network, train_variational_em, TrainConfig,
};
use crate::windkessel::{simulate_vitals, Concepts, VitalsEstimate, WindkesselConfig};

/// Probability that a random positive outranks a random negative, with
/// ties counted half (the rank-statistic form).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(LpsError::Usage(format!(
            "auc length mismatch: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(LpsError::Metric("auc requires finite scores".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(LpsError::Metric(
            "auc requires both classes present".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap());
    // Average ranks over ties, then the Mann–Whitney identity.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += rank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    let n_neg = n_neg as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// F1 after binarizing inferred and measured cardiac output at the
/// clinical cutoff; low CO is the positive class. Returns the score and a
/// degeneracy flag (no positives anywhere → score 0, flag set).
pub fn f1_thresholded_co(
    inferred: &[f64],
    measured: &[f64],
    cutoff: f64,
) -> Result<(f64, bool)> {
    if inferred.len() != measured.len() {
        return Err(LpsError::Usage(format!(
            "f1 length mismatch: {} vs {}",
            inferred.len(),
            measured.len()
        )));
    }
    if inferred.is_empty() {
        return Err(LpsError::Metric("f1 on empty input".into()));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&pred, &truth) in inferred.iter().zip(measured) {
        let p = pred < cutoff;
        let t = truth < cutoff;
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp == 0 && tp + fn_ == 0 {
        return Ok((0.0, true));
    }
    if tp == 0 {
        return Ok((0.0, false));
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok((2.0 * precision * recall / (precision + recall), false))
}

/// Coefficient of determination about the mean of the truth.
pub fn r_squared(truth: &[f64], predicted: &[f64]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(LpsError::Usage(format!(
            "r_squared length mismatch: {} vs {}",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.len() < 2 {
        return Err(LpsError::Metric("r_squared needs at least 2 points".into()));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(LpsError::Metric("r_squared on constant truth".into()));
    }
    let ss_res: f64 = truth
        .iter()
        .zip(predicted)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Forward-model reconstruction of the vitals from inferred concepts.
pub fn reconstruct_vitals(z_hats: &[Concepts<f64>]) -> Result<Vec<VitalsEstimate>> {
    z_hats
        .iter()
        .map(|z| simulate_vitals(z, &WindkesselConfig::default()))
        .collect()
}

/// Median and half the interquartile range with Tukey hinges (both halves
/// include the median for odd lengths).
pub fn median_half_iqr(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(LpsError::Metric("median of an empty list".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_of = |s: &[f64]| -> f64 {
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        }
    };
    let n = v.len();
    let med = median_of(&v);
    if n == 1 {
        return Ok((med, 0.0));
    }
    let half = n / 2;
    let (lower, upper) = if n % 2 == 1 {
        (&v[..=half], &v[half..])
    } else {
        (&v[..half], &v[half..])
    };
    let q1 = median_of(lower);
    let q3 = median_of(upper);
    Ok((med, (q3 - q1) / 2.0))
}

pub fn median(values: &[f64]) -> Result<f64> {
    Ok(median_half_iqr(values)?.0)
}

/// Welch's unequal-variance t-test: statistic and two-sided p-value via
/// the t CDF expressed through the regularized incomplete beta.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(LpsError::Metric(
            "welch_t_test needs at least two observations per sample".into(),
        ));
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let var = |s: &[f64], m: f64| {
        s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (s.len() as f64 - 1.0)
    };
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma), var(b, mb));
    if va == 0.0 && vb == 0.0 {
        return Err(LpsError::Metric(
            "welch_t_test on samples with zero variance".into(),
        ));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    // Two-sided p: P(|T_df| >= |t|) = I_{df/(df+t²)}(df/2, 1/2).
    let p = reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))?;
    Ok((t, p))
}

/// Evidence-quality metrics computed for the concept-producing methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceMetrics {
    pub f1_co: f64,
    pub f1_degenerate: bool,
    pub r2_hr: f64,
    pub r2_bp_sys: f64,
    pub r2_bp_dias: f64,
    pub mae_hr: f64,
    pub mae_bp_sys: f64,
    pub mae_bp_dias: f64,
    pub spearman_co: f64,
    pub delta_median_co: f64,
    pub delta_median_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Baseline,
    Lps,
    LpsQ,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Lps => "lps",
            Method::LpsQ => "lps_q",
        }
    }
    pub const ALL: [Method; 3] = [Method::Baseline, Method::Lps, Method::LpsQ];
}

/// One (run, method) row of the experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub method: Method,
    pub auc: f64,
    pub evidence: Option<EvidenceMetrics>,
    /// Mean per-patient MAP objective on the test split.
    pub test_objective: Option<f64>,
    /// Bayes-oracle AUC from generating parameters (when known).
    pub oracle_auc: Option<f64>,
}

/// Median / half-IQR aggregate for one (method, metric) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub metric: String,
    pub median: f64,
    pub half_iqr: f64,
}

/// Welch comparison row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchRow {
    pub comparison: String,
    pub metric: String,
    pub t: Option<f64>,
    pub p: Option<f64>,
}

/// Full experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
    pub welch: Vec<WelchRow>,
}

/// Where the experiment cohort comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortSource {
    Dataset { path: String },
    Generate { config: GeneratorConfig, seed: u64 },
}

/// The ten-run protocol: distinct split and training seeds per run, shared
/// generator and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub cohort: CohortSource,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_split_seed")]
    pub split_seed_base: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub arch: ModelArch,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_co_cutoff")]
    pub co_cutoff: f64,
    /// Parallel workers; 0 uses the rayon default.
    #[serde(default)]
    pub workers: usize,
}

fn default_runs() -> usize {
    10
}
fn default_split_seed() -> u64 {
    1000
}
fn default_eta() -> f64 {
    0.5
}
fn default_co_cutoff() -> f64 {
    4.0
}

impl ExperimentPlan {
    pub fn resolve_cohort(&self) -> Result<Vec<PatientRecord>> {
        match &self.cohort {
            CohortSource::Dataset { path } => read_cohort(Path::new(path)),
            CohortSource::Generate { config, seed } => generate_cohort(config, *seed),
        }
    }

    fn generator(&self) -> Option<&GeneratorConfig> {
        match &self.cohort {
            CohortSource::Generate { config, .. } => Some(config),
            CohortSource::Dataset { .. } => None,
        }
    }
}

/// Per-patient prediction row kept for the figure-style analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub run: usize,
    pub id: u64,
    pub y: u8,
    pub pi_hat: f64,
    pub z: Concepts<f64>,
    pub hr_obs: f64,
    pub bp_sys_obs: f64,
    pub bp_dias_obs: f64,
    pub hr_recon: f64,
    pub bp_sys_recon: f64,
    pub bp_dias_recon: f64,
    pub co_observed: Option<f64>,
    pub r_observed: Option<f64>,
}

/// Everything needed to evaluate the three methods on a split.
pub struct TrainedModels<'a> {
    pub model: &'a LpsModel,
    pub phi_mu: &'a [f64],
    pub psi: &'a [f64],
    pub theta_q: &'a [f64],
    pub theta_n: &'a [f64],
    pub baseline: Option<&'a [f64]>,
}

pub struct RunOutput {
    pub rows: Vec<RunRow>,
    pub predictions: Vec<PredictionRow>,
}

/// Evidence metrics from per-patient predictions against a test split.
fn evidence_metrics(
    test: &[PatientRecord],
    pi_hats: &[f64],
    z_hats: &[Concepts<f64>],
    co_cutoff: f64,
) -> Result<(EvidenceMetrics, Vec<VitalsEstimate>)> {
    let recon = reconstruct_vitals(z_hats)?;
    let hr_true: Vec<f64> = test.iter().map(|p| p.vitals.hr).collect();
    let sys_true: Vec<f64> = test.iter().map(|p| p.vitals.bp_sys).collect();
    let dias_true: Vec<f64> = test.iter().map(|p| p.vitals.bp_dias).collect();
    let hr_rec: Vec<f64> = recon.iter().map(|v| v.hr).collect();
    let sys_rec: Vec<f64> = recon.iter().map(|v| v.bp_sys).collect();
    let dias_rec: Vec<f64> = recon.iter().map(|v| v.bp_dias).collect();

    let abs_err = |t: &[f64], p: &[f64]| -> Result<f64> {
        let e: Vec<f64> = t.iter().zip(p).map(|(a, b)| (a - b).abs()).collect();
        median(&e)
    };

    let mut co_pred = Vec::new();
    let mut co_true = Vec::new();
    for (p, z) in test.iter().zip(z_hats) {
        if let Some(co) = p.co_observed {
            co_pred.push(z.co);
            co_true.push(co);
        }
    }
    let (f1_co, f1_degenerate) = f1_thresholded_co(&co_pred, &co_true, co_cutoff)?;
    let spearman_co = spearman(&co_pred, &co_true);

    // Risk-quartile consistency: top-quartile predicted risk vs bottom.
    let n = test.len();
    if n < 4 {
        return Err(LpsError::Metric(
            "consistency quartiles need at least 4 test patients".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        pi_hats[j]
            .partial_cmp(&pi_hats[i])
            .unwrap()
            .then(test[i].id.cmp(&test[j].id))
    });
    let q = n / 4;
    let top: Vec<usize> = order[..q].to_vec();
    let bottom: Vec<usize> = order[n - q..].to_vec();
    let med_of = |idx: &[usize], f: &dyn Fn(usize) -> f64| -> Result<f64> {
        median(&idx.iter().map(|&i| f(i)).collect::<Vec<_>>())
    };
    let delta_median_co =
        med_of(&top, &|i| z_hats[i].co)? - med_of(&bottom, &|i| z_hats[i].co)?;
    let delta_median_r = med_of(&top, &|i| z_hats[i].r)? - med_of(&bottom, &|i| z_hats[i].r)?;

    Ok((
        EvidenceMetrics {
            f1_co,
            f1_degenerate,
            r2_hr: r_squared(&hr_true, &hr_rec)?,
            r2_bp_sys: r_squared(&sys_true, &sys_rec)?,
            r2_bp_dias: r_squared(&dias_true, &dias_rec)?,
            mae_hr: abs_err(&hr_true, &hr_rec)?,
            mae_bp_sys: abs_err(&sys_true, &sys_rec)?,
            mae_bp_dias: abs_err(&dias_true, &dias_rec)?,
            spearman_co,
            delta_median_co,
            delta_median_r,
        },
        recon,
    ))
}

/// Evaluates every method on a test split, returning the metric rows (in
/// the fixed method order) and per-patient MAP-network predictions.
pub fn evaluate_split(
    tm: &TrainedModels<'_>,
    test: &[PatientRecord],
    run: usize,
    co_cutoff: f64,
    oracle: Option<&GeneratorConfig>,
) -> Result<RunOutput> {
    let model = tm.model;
    let labels: Vec<u8> = test.iter().map(|p| p.y).collect();
    let oracle_auc = match oracle {
        Some(gen) => {
            let scores: Vec<f64> = test
                .iter()
                .map(|p| gen.bayes_log_likelihood_ratio(&p.true_z))
                .collect();
            Some(auc(&scores, &labels)?)
        }
        None => None,
    };

    // Objective evaluation keeps probabilities strictly inside (0,1);
    // posterior Beta modes can land exactly on an endpoint.
    let clamp_pi = |pi: f64| pi.clamp(1e-12, 1.0 - 1e-12);
    let mean_objective = |pi_hats: &[f64], z_hats: &[Concepts<f64>]| -> Result<f64> {
        let mut total = 0.0;
        for ((p, &pi), z) in test.iter().zip(pi_hats).zip(z_hats) {
            let x = model.features(p);
            let (lj, _) = model.log_joint_f64(clamp_pi(pi), z, tm.phi_mu, tm.psi, &x, p.y)?;
            total += lj;
        }
        Ok(total / test.len() as f64)
    };

    // LPS: the MAP network.
    let mut lps_pi = Vec::with_capacity(test.len());
    let mut lps_z = Vec::with_capacity(test.len());
    for p in test {
        let (pi, z) = model.map_forward(tm.theta_n, &model.features(p))?;
        lps_pi.push(pi);
        lps_z.push(z);
    }
    let (lps_ev, lps_recon) = evidence_metrics(test, &lps_pi, &lps_z, co_cutoff)?;
    let lps_row = RunRow {
        run,
        method: Method::Lps,
        auc: auc(&lps_pi, &labels)?,
        evidence: Some(lps_ev),
        test_objective: Some(mean_objective(&lps_pi, &lps_z)?),
        oracle_auc,
    };

    // LPS-q: posterior modes.
    let mut q_pi = Vec::with_capacity(test.len());
    let mut q_z = Vec::with_capacity(test.len());
    for p in test {
        let post = model.posterior_forward(tm.theta_q, &model.features(p))?;
        let (pi, z) = lps_q_inference(&post)?;
        q_pi.push(pi);
        q_z.push(z);
    }
    let (q_ev, _) = evidence_metrics(test, &q_pi, &q_z, co_cutoff)?;
    let q_row = RunRow {
        run,
        method: Method::LpsQ,
        auc: auc(&q_pi, &labels)?,
        evidence: Some(q_ev),
        test_objective: Some(mean_objective(&q_pi, &q_z)?),
        oracle_auc,
    };

    let mut rows = Vec::with_capacity(3);
    if let Some(base_params) = tm.baseline {
        let base_spec = crate::diffcore::nn::MlpSpec::new(
            model.feature_dim(),
            &model.arch.hidden,
            1,
            crate::diffcore::nn::Act::Relu,
        );
        let base_scores: Vec<f64> = test
            .iter()
            .map(|p| {
                crate::diffcore::Real::sigmoid(
                    base_spec.forward_f64(base_params, &model.features(p))[0],
                )
            })
            .collect();
        rows.push(RunRow {
            run,
            method: Method::Baseline,
            auc: auc(&base_scores, &labels)?,
            evidence: None,
            test_objective: None,
            oracle_auc,
        });
    }
    rows.push(lps_row);
    rows.push(q_row);

    let predictions = test
        .iter()
        .enumerate()
        .map(|(i, p)| PredictionRow {
            run,
            id: p.id,
            y: p.y,
            pi_hat: lps_pi[i],
            z: lps_z[i],
            hr_obs: p.vitals.hr,
            bp_sys_obs: p.vitals.bp_sys,
            bp_dias_obs: p.vitals.bp_dias,
            hr_recon: lps_recon[i].hr,
            bp_sys_recon: lps_recon[i].bp_sys,
            bp_dias_recon: lps_recon[i].bp_dias,
            co_observed: p.co_observed,
            r_observed: p.r_observed,
        })
        .collect();

    Ok(RunOutput { rows, predictions })
}

fn run_once(plan: &ExperimentPlan, cohort: &[PatientRecord], run: usize) -> Result<RunOutput> {
    let split = SplitSpec::new(plan.split_seed_base + run as u64);
    let (train, val, test) = split_cohort(cohort, &split)?;

    let features: Vec<Vec<f64>> = train.iter().map(assemble_features).collect();
    let scaler = FeatureScaler::fit(&features)?;
    let priors = ConceptPriors::from_fitted(&fit_concept_priors(&train)?);
    let model = LpsModel::new(
        plan.arch.clone(),
        scaler,
        priors,
        ObsSigma::default(),
        cohort[0].tabular.len(),
        cohort[0].waveform.len(),
    )?;
    let cfg = TrainConfig {
        seed: plan.train.seed + run as u64,
        ..plan.train.clone()
    };

    let s1 = train_variational_em(&model, &train, &val, &cfg)?;
    let s2 = train_map_network(&model, &train, &val, &s1.phi_mu, &s1.psi, &cfg)?;
    let base = train_baseline(&model, &train, &val, &cfg)?;

    evaluate_split(
        &TrainedModels {
            model: &model,
            phi_mu: &s1.phi_mu,
            psi: &s1.psi,
            theta_q: &s1.theta_q,
            theta_n: &s2.theta_n,
            baseline: Some(&base.params),
        },
        &test,
        run,
        plan.co_cutoff,
        plan.generator(),
    )
}

/// Runs the full protocol over the given cohort: per run, split, fit the
/// scaler and priors on train, run both learning stages and the baseline,
/// evaluate every method on test, then aggregate by median/half-IQR and
/// compare with Welch's t-test. When `out_dir` is given, the report files
/// and per-run predictions are written there.
pub fn run_experiment(
    plan: &ExperimentPlan,
    cohort: &[PatientRecord],
    out_dir: Option<&Path>,
) -> Result<MetricsReport> {
    if plan.runs == 0 {
        return Err(LpsError::Config("experiment needs at least one run".into()));
    }
    if cohort.len() < 20 {
        return Err(LpsError::Config(format!(
            "cohort of {} patients is too small for the protocol",
            cohort.len()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(if plan.workers == 0 { 0 } else { plan.workers })
        .build()
        .map_err(|e| LpsError::Config(format!("worker pool: {e}")))?;
    let outputs: Vec<RunOutput> = pool.install(|| {
        (0..plan.runs)
            .into_par_iter()
            .map(|r| {
                run_once(plan, cohort, r)
                    .map_err(|e| LpsError::train(format!("run {r} failed: {e}")))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::with_capacity(plan.runs * 3);
    let mut predictions = Vec::new();
    for out in outputs {
        rows.extend(out.rows);
        predictions.push(out.predictions);
    }

    let aggregates = aggregate(&rows)?;
    let welch = welch_table(&rows);
    let report = MetricsReport {
        rows,
        aggregates,
        welch,
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_runs_csv(&report, &dir.join("runs.csv"))?;
        write_report_csv(&report, &dir.join("report.csv"))?;
        write_welch_csv(&report, &dir.join("welch.csv"))?;
        let pred_dir = dir.join("predictions");
        std::fs::create_dir_all(&pred_dir)?;
        for (r, pred) in predictions.iter().enumerate() {
            write_predictions_csv(pred, &pred_dir.join(format!("run_{r:02}.csv")))?;
        }
    }
    Ok(report)
}

/// The fixed metric schema: names plus per-method applicability.
const METRICS: [&str; 12] = [
    "auc",
    "f1_co",
    "r2_hr",
    "r2_bp_sys",
    "r2_bp_dias",
    "mae_hr",
    "mae_bp_sys",
    "mae_bp_dias",
    "spearman_co",
    "delta_median_co",
    "delta_median_r",
    "test_objective",
];

fn metric_value(row: &RunRow, metric: &str) -> Option<f64> {
    match metric {
        "auc" => Some(row.auc),
        "test_objective" => row.test_objective,
        _ => row.evidence.map(|e| match metric {
            "f1_co" => e.f1_co,
            "r2_hr" => e.r2_hr,
            "r2_bp_sys" => e.r2_bp_sys,
            "r2_bp_dias" => e.r2_bp_dias,
            "mae_hr" => e.mae_hr,
            "mae_bp_sys" => e.mae_bp_sys,
            "mae_bp_dias" => e.mae_bp_dias,
            "spearman_co" => e.spearman_co,
            "delta_median_co" => e.delta_median_co,
            "delta_median_r" => e.delta_median_r,
            _ => unreachable!("unknown metric {metric}"),
        }),
    }
}

fn per_run_values(rows: &[RunRow], method: Method, metric: &str) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.method == method)
        .filter_map(|r| metric_value(r, metric))
        .collect()
}

fn aggregate(rows: &[RunRow]) -> Result<Vec<AggregateRow>> {
    let mut out = Vec::new();
    for method in Method::ALL {
        for metric in METRICS {
            let values = per_run_values(rows, method, metric);
            if values.is_empty() {
                continue;
            }
            let (med, half_iqr) = median_half_iqr(&values)?;
            out.push(AggregateRow {
                method: method.as_str().to_string(),
                metric: metric.to_string(),
                median: med,
                half_iqr,
            });
        }
    }
    let oracle: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == Method::Lps)
        .filter_map(|r| r.oracle_auc)
        .collect();
    if !oracle.is_empty() {
        let (med, half_iqr) = median_half_iqr(&oracle)?;
        out.push(AggregateRow {
            method: "oracle".to_string(),
            metric: "auc".to_string(),
            median: med,
            half_iqr,
        });
    }
    Ok(out)
}

fn welch_table(rows: &[RunRow]) -> Vec<WelchRow> {
    let mut out = Vec::new();
    let mut push = |comparison: &str, metric: &str, a: Method, b: Method| {
        let va = per_run_values(rows, a, metric);
        let vb = per_run_values(rows, b, metric);
        let (t, p) = match welch_t_test(&va, &vb) {
            Ok((t, p)) => (Some(t), Some(p)),
            Err(_) => (None, None),
        };
        out.push(WelchRow {
            comparison: comparison.to_string(),
            metric: metric.to_string(),
            t,
            p,
        });
    };
    push("lps_vs_baseline", "auc", Method::Lps, Method::Baseline);
    for metric in [
        "auc",
        "f1_co",
        "r2_hr",
        "r2_bp_sys",
        "r2_bp_dias",
        "test_objective",
    ] {
        push("lps_vs_lps_q", metric, Method::Lps, Method::LpsQ);
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".to_string(),
    }
}

pub fn write_runs_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "run,method,auc,f1_co,f1_degenerate,r2_hr,r2_bp_sys,r2_bp_dias,mae_hr,mae_bp_sys,mae_bp_dias,spearman_co,delta_median_co,delta_median_r,test_objective,oracle_auc"
    )?;
    for row in &report.rows {
        let e = row.evidence;
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.run,
            row.method.as_str(),
            row.auc,
            fmt_opt(e.map(|e| e.f1_co)),
            e.map(|e| e.f1_degenerate.to_string())
                .unwrap_or_else(|| "NA".into()),
            fmt_opt(e.map(|e| e.r2_hr)),
            fmt_opt(e.map(|e| e.r2_bp_sys)),
            fmt_opt(e.map(|e| e.r2_bp_dias)),
            fmt_opt(e.map(|e| e.mae_hr)),
            fmt_opt(e.map(|e| e.mae_bp_sys)),
            fmt_opt(e.map(|e| e.mae_bp_dias)),
            fmt_opt(e.map(|e| e.spearman_co)),
            fmt_opt(e.map(|e| e.delta_median_co)),
            fmt_opt(e.map(|e| e.delta_median_r)),
            fmt_opt(row.test_objective),
            fmt_opt(row.oracle_auc),
        )?;
    }
    Ok(())
}

pub fn write_report_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "method,metric,median,half_iqr")?;
    for a in &report.aggregates {
        writeln!(f, "{},{},{},{}", a.method, a.metric, a.median, a.half_iqr)?;
    }
    Ok(())
}

pub fn write_welch_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "comparison,metric,t,p")?;
    for w in &report.welch {
        writeln!(
            f,
            "{},{},{},{}",
            w.comparison,
            w.metric,
            fmt_opt(w.t),
            fmt_opt(w.p)
        )?;
    }
    Ok(())
}

pub fn write_predictions_csv(rows: &[PredictionRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "run,id,y,pi_hat,z_r,z_c,z_ts,z_td,z_co,hr_obs,bp_sys_obs,bp_dias_obs,hr_recon,bp_sys_recon,bp_dias_recon,co_observed,r_observed"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.run,
            r.id,
            r.y,
            r.pi_hat,
            r.z.r,
            r.z.c,
            r.z.ts,
            r.z.td,
            r.z.co,
            r.hr_obs,
            r.bp_sys_obs,
            r.bp_dias_obs,
            r.hr_recon,
            r.bp_sys_recon,
            r.bp_dias_recon,
            fmt_opt(r.co_observed),
            fmt_opt(r.r_observed),
        )?;
    }
    Ok(())
}

/// Reads back the prediction rows written by [`run_experiment`].
pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>> {
    let content = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in content.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 17 {
            return Err(LpsError::Parse {
                line: i + 1,
                msg: format!("expected 17 columns, got {}", parts.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| LpsError::Parse {
                line: i + 1,
                msg: format!("bad float '{s}': {e}"),
            })
        };
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s == "NA" {
                Ok(None)
            } else {
                parse(s).map(Some)
            }
        };
        rows.push(PredictionRow {
            run: parts[0].parse().map_err(|_| LpsError::Parse {
                line: i + 1,
                msg: "bad run index".into(),
            })?,
            id: parts[1].parse().map_err(|_| LpsError::Parse {
                line: i + 1,
                msg: "bad id".into(),
            })?,
            y: parts[2].parse().map_err(|_| LpsError::Parse {
                line: i + 1,
                msg: "bad label".into(),
            })?,
            pi_hat: parse(parts[3])?,
            z: Concepts {
                r: parse(parts[4])?,
                c: parse(parts[5])?,
                ts: parse(parts[6])?,
                td: parse(parts[7])?,
                co: parse(parts[8])?,
            },
            hr_obs: parse(parts[9])?,
            bp_sys_obs: parse(parts[10])?,
            bp_dias_obs: parse(parts[11])?,
            hr_recon: parse(parts[12])?,
            bp_sys_recon: parse(parts[13])?,
            bp_dias_recon: parse(parts[14])?,
            co_observed: parse_opt(parts[15])?,
            r_observed: parse_opt(parts[16])?,
        });
    }
    Ok(rows)
}

/// Emits the plot-ready CSVs (reconstruction scatter and risk-quartile
/// concept histograms) from an experiment output directory.
pub fn write_figure_data(experiment_dir: &Path, out_dir: &Path) -> Result<()> {
    let pred_dir = experiment_dir.join("predictions");
    let mut all = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(&pred_dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    entries.sort();
    for path in entries {
        all.extend(read_predictions_csv(&path)?);
    }
    if all.is_empty() {
        return Err(LpsError::Config(format!(
            "no prediction rows under {}",
            pred_dir.display()
        )));
    }
    std::fs::create_dir_all(out_dir)?;

    // Reconstruction scatter (true vs forward-model reconstruction).
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join("fig3_scatter.csv"))?);
    writeln!(
        f,
        "run,id,hr_true,hr_recon,bp_sys_true,bp_sys_recon,bp_dias_true,bp_dias_recon"
    )?;
    for r in &all {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.run,
            r.id,
            r.hr_obs,
            r.hr_recon,
            r.bp_sys_obs,
            r.bp_sys_recon,
            r.bp_dias_obs,
            r.bp_dias_recon
        )?;
    }
    drop(f);

    // Concept histograms for the top/bottom predicted-risk quartiles.
    let mut by_risk = all.clone();
    by_risk.sort_by(|a, b| {
        b.pi_hat
            .partial_cmp(&a.pi_hat)
            .unwrap()
            .then(a.run.cmp(&b.run))
            .then(a.id.cmp(&b.id))
    });
    let q = by_risk.len() / 4;
    if q == 0 {
        return Err(LpsError::Config("too few predictions for quartiles".into()));
    }
    let top = &by_risk[..q];
    let bottom = &by_risk[by_risk.len() - q..];

    let mut f =
        std::io::BufWriter::new(std::fs::File::create(out_dir.join("fig4_histograms.csv"))?);
    writeln!(f, "concept,group,bin_lo,bin_hi,count")?;
    for (concept, get) in [
        ("CO", &(|r: &PredictionRow| r.z.co) as &dyn Fn(&PredictionRow) -> f64),
        ("R", &|r: &PredictionRow| r.z.r),
    ] {
        let values: Vec<f64> = all.iter().map(get).collect();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let bins = 30usize;
        let width = ((hi - lo) / bins as f64).max(1e-12);
        for (group, rows) in [("top_quartile", top), ("bottom_quartile", bottom)] {
            let mut counts = vec![0usize; bins];
            for r in rows {
                let b = (((get(r) - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            for (b, &count) in counts.iter().enumerate() {
                let bin_lo = lo + b as f64 * width;
                writeln!(
                    f,
                    "{},{},{},{},{}",
                    concept,
                    group,
                    bin_lo,
                    bin_lo + width,
                    count
                )?;
            }
        }
    }
    Ok(())
}
