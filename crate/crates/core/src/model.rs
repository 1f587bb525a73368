//! Assembly of the probabilistic model: feature scaling, concept priors
//! with their hyperpriors, the learned forward model f, the posterior and
//! MAP networks, the per-patient log-joint, and model artifacts.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{FittedPriors, PatientRecord};
use crate::diffcore::nn::{Act, MlpSpec};
use crate::diffcore::{Real, Tape, Var, VecVar};
use crate::dist::{
    bernoulli_logpmf, beta_logpdf, gaussian_logpdf, mixture_logpdf, BetaParams, LogNormalParams,
};
use crate::error::{LpsError, Result};
use crate::windkessel::{simulate_vitals, Concepts, WindkesselConfig};

pub const N_CONCEPTS: usize = 5;
const LN_TWO_PI: f64 = 1.837_877_066_409_345_3;
/// Fixed log-scale spread used to normalize the f-network input.
const F_INPUT_SCALE: f64 = 0.25;

/// Per-feature standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        if features.is_empty() {
            return Err(LpsError::Usage("cannot fit a scaler on no data".into()));
        }
        let d = features[0].len();
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for row in features {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for row in features {
            for i in 0..d {
                let r = row[i] - mean[i];
                var[i] += r * r;
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(1e-6)).collect();
        Ok(FeatureScaler { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Natural-unit feature vector: [hr, bp_sys, bp_dias] ⊕ tabular ⊕ waveform.
/// Ground-truth fields never enter here.
pub fn assemble_features(p: &PatientRecord) -> Vec<f64> {
    let mut x = Vec::with_capacity(3 + p.tabular.len() + p.waveform.len());
    x.push(p.vitals.hr);
    x.push(p.vitals.bp_sys);
    x.push(p.vitals.bp_dias);
    x.extend_from_slice(&p.tabular);
    x.extend_from_slice(&p.waveform);
    x
}

/// Concept priors: trainable mixture means with Normal hyperpriors centered
/// at the fitted values, and delta-prior (fixed) variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptPriors {
    /// Hyperprior centers μ̃ as `[concept][class]`.
    pub mu_tilde: [[f64; 2]; N_CONCEPTS],
    /// Fixed variances σ̃² as `[concept][class]`.
    pub var_tilde: [[f64; 2]; N_CONCEPTS],
    /// Hyperprior standard deviation for the means.
    pub hyper_sd: f64,
}

impl ConceptPriors {
    pub fn from_fitted(f: &FittedPriors) -> Self {
        let mut mu_tilde = [[0.0; 2]; N_CONCEPTS];
        let mut var_tilde = [[0.0; 2]; N_CONCEPTS];
        for m in 0..N_CONCEPTS {
            for c in 0..2 {
                mu_tilde[m][c] = f.per_concept[m][c].mu;
                var_tilde[m][c] = f.per_concept[m][c].var;
            }
        }
        ConceptPriors {
            mu_tilde,
            var_tilde,
            hyper_sd: 0.01,
        }
    }

    /// Flat layout `[concept*2 + class]`; the mixture means start at the
    /// hyperprior centers, the only initialization consistent with the
    /// 0.01 prior scale.
    pub fn initial_mu_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(2 * N_CONCEPTS);
        for m in 0..N_CONCEPTS {
            for c in 0..2 {
                flat.push(self.mu_tilde[m][c]);
            }
        }
        flat
    }

    /// log p(φ) = Σ log N(μ | μ̃, hyper_sd²) over the ten mixture means.
    pub fn log_prior<T: Real>(&self, mu_flat: &[T]) -> Result<T> {
        if mu_flat.len() != 2 * N_CONCEPTS {
            return Err(LpsError::Usage(format!(
                "phi has {} means, expected {}",
                mu_flat.len(),
                2 * N_CONCEPTS
            )));
        }
        let centers: Vec<T> = (0..2 * N_CONCEPTS)
            .map(|i| mu_flat[i].lift(self.mu_tilde[i / 2][i % 2]))
            .collect();
        let sigma = vec![self.hyper_sd; 2 * N_CONCEPTS];
        gaussian_logpdf(mu_flat, &centers, &sigma)
    }

    pub fn pooled_mu(&self, concept: usize) -> f64 {
        0.5 * (self.mu_tilde[concept][0] + self.mu_tilde[concept][1])
    }

    pub fn pooled_var(&self, concept: usize) -> f64 {
        0.5 * (self.var_tilde[concept][0] + self.var_tilde[concept][1])
    }
}

/// Observation noise scales (standardized feature space).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsSigma {
    pub vitals: f64,
    pub tabular: f64,
    pub waveform: f64,
}

impl Default for ObsSigma {
    fn default() -> Self {
        ObsSigma {
            vitals: 0.1,
            tabular: 0.5,
            waveform: 5.0,
        }
    }
}

/// Network widths; desk-scale dense stand-ins for the convolutional
/// backbones, exposed as configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    pub hidden: Vec<usize>,
    pub f_hidden: Vec<usize>,
}

impl Default for ModelArch {
    fn default() -> Self {
        ModelArch {
            hidden: vec![128, 64],
            f_hidden: vec![64, 64],
        }
    }
}

/// Variational posterior parameters for one patient: five log-normal
/// (μ, σ²) pairs and one Beta (a, b) pair with a, b softly clamped to
/// [1, 11].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorParams {
    pub z: [LogNormalParams; N_CONCEPTS],
    pub pi: BetaParams,
}

/// The four summands of the per-patient log-joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogJointTerms<T> {
    pub prior_pi: T,
    pub outcome: T,
    pub concepts: T,
    pub likelihood: T,
}

impl<T: Real> LogJointTerms<T> {
    pub fn total(&self) -> T {
        self.prior_pi + self.outcome + self.concepts + self.likelihood
    }
}

/// MAP outputs with the decision threshold and the log-joint breakdown
/// used as supporting evidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub pi_hat: f64,
    pub z_hat: Concepts<f64>,
    pub y_hat: u8,
    pub eta: f64,
    pub terms: LogJointTerms<f64>,
}

/// Tape-side posterior head views.
pub struct PosteriorHeads<'t> {
    pub mu: [Var<'t>; N_CONCEPTS],
    pub var: [Var<'t>; N_CONCEPTS],
    pub a: Var<'t>,
    pub b: Var<'t>,
}

/// Static model context: architecture, scaler, priors, and noise scales.
#[derive(Debug, Clone)]
pub struct LpsModel {
    pub arch: ModelArch,
    pub scaler: FeatureScaler,
    pub priors: ConceptPriors,
    pub sigma: ObsSigma,
    pub d_tab: usize,
    pub d_wave: usize,
    pub q_spec: MlpSpec,
    pub n_spec: MlpSpec,
    pub f_spec: MlpSpec,
}

impl LpsModel {
    pub fn new(
        arch: ModelArch,
        scaler: FeatureScaler,
        priors: ConceptPriors,
        sigma: ObsSigma,
        d_tab: usize,
        d_wave: usize,
    ) -> Result<Self> {
        let feat = 3 + d_tab + d_wave;
        if scaler.dim() != feat {
            return Err(LpsError::Usage(format!(
                "scaler dimension {} does not match feature dimension {feat}",
                scaler.dim()
            )));
        }
        let q_spec = MlpSpec::new(feat, &arch.hidden, 2 * N_CONCEPTS + 2, Act::Relu);
        let n_spec = MlpSpec::new(feat, &arch.hidden, N_CONCEPTS + 1, Act::Relu);
        let f_spec = MlpSpec::new(N_CONCEPTS, &arch.f_hidden, d_tab + d_wave, Act::Tanh);
        Ok(LpsModel {
            arch,
            scaler,
            priors,
            sigma,
            d_tab,
            d_wave,
            q_spec,
            n_spec,
            f_spec,
        })
    }

    pub fn feature_dim(&self) -> usize {
        3 + self.d_tab + self.d_wave
    }

    /// Standardized features for a record.
    pub fn features(&self, p: &PatientRecord) -> Vec<f64> {
        self.scaler.apply(&assemble_features(p))
    }

    /// Posterior-network initialization: informed head biases (means at
    /// the pooled prior centers, log-variances at the pooled prior
    /// variances) and a damped head layer so early draws stay
    /// physiological.
    pub fn init_theta_q<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = self.q_spec.init_params(rng);
        damp_output_layer(&self.q_spec, &mut p);
        let off = self.q_spec.output_bias_offset();
        for m in 0..N_CONCEPTS {
            p[off + m] = self.priors.pooled_mu(m);
            p[off + N_CONCEPTS + m] = self.priors.pooled_var(m).ln();
        }
        // Beta heads stay at raw 0 → a = b = 6.
        p
    }

    /// MAP-network initialization: risk head at the base-rate logit, the
    /// concept heads at the pooled prior centers.
    pub fn init_theta_n<R: Rng>(&self, rng: &mut R, positive_rate: f64) -> Vec<f64> {
        let mut p = self.n_spec.init_params(rng);
        damp_output_layer(&self.n_spec, &mut p);
        let off = self.n_spec.output_bias_offset();
        let rate = positive_rate.clamp(1e-3, 1.0 - 1e-3);
        p[off] = (rate / (1.0 - rate)).ln();
        for m in 0..N_CONCEPTS {
            p[off + 1 + m] = self.priors.pooled_mu(m);
        }
        p
    }

    pub fn init_psi<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.f_spec.init_params(rng)
    }

    /// Posterior network, inference path. Emits twelve numbers: per-concept
    /// μ and σ² (through exp) plus Beta concentrations through the soft
    /// clamp 1 + 10·sigmoid.
    pub fn posterior_forward(&self, theta_q: &[f64], x_std: &[f64]) -> Result<PosteriorParams> {
        let out = self.q_spec.forward_f64(theta_q, x_std);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(LpsError::Inference(
                "non-finite activation in the posterior network".into(),
            ));
        }
        let mut z = [LogNormalParams { mu: 0.0, var: 1.0 }; N_CONCEPTS];
        for m in 0..N_CONCEPTS {
            // Raw log-variances clamped to ±700 so the exponential stays
            // positive and finite in f64 even for absurd inputs.
            z[m] = LogNormalParams {
                mu: out[m],
                var: out[N_CONCEPTS + m].clamp(-700.0, 700.0).exp(),
            };
        }
        let clamp = |v: f64| 1.0 + 10.0 * Real::sigmoid(v);
        Ok(PosteriorParams {
            z,
            pi: BetaParams {
                a: clamp(out[2 * N_CONCEPTS]),
                b: clamp(out[2 * N_CONCEPTS + 1]),
            },
        })
    }

    /// Posterior network on the tape, for training.
    pub fn posterior_forward_t<'t>(
        &self,
        tape: &'t Tape,
        q_views: &[(VecVar<'t>, VecVar<'t>)],
        x: VecVar<'t>,
    ) -> Result<PosteriorHeads<'t>> {
        let out = self.q_spec.forward_with_views(tape, q_views, x)?;
        let mut mu = [out.get(0); N_CONCEPTS];
        let mut var = [out.get(0); N_CONCEPTS];
        for m in 0..N_CONCEPTS {
            mu[m] = out.get(m);
            var[m] = out.get(N_CONCEPTS + m).exp();
        }
        let a = out.get(2 * N_CONCEPTS).sigmoid() * 10.0 + 1.0;
        let b = out.get(2 * N_CONCEPTS + 1).sigmoid() * 10.0 + 1.0;
        Ok(PosteriorHeads { mu, var, a, b })
    }

    /// MAP network, inference path: π̂ through a sigmoid, each ẑ through
    /// exp.
    pub fn map_forward(&self, theta_n: &[f64], x_std: &[f64]) -> Result<(f64, Concepts<f64>)> {
        let out = self.n_spec.forward_f64(theta_n, x_std);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(LpsError::Inference(
                "non-finite activation in the MAP network".into(),
            ));
        }
        let pi_hat = Real::sigmoid(out[0]);
        let z = Concepts::from_array([
            out[1].exp(),
            out[2].exp(),
            out[3].exp(),
            out[4].exp(),
            out[5].exp(),
        ]);
        Ok((pi_hat, z))
    }

    /// MAP network on the tape.
    pub fn map_forward_t<'t>(
        &self,
        tape: &'t Tape,
        n_views: &[(VecVar<'t>, VecVar<'t>)],
        x: VecVar<'t>,
    ) -> Result<(Var<'t>, Concepts<Var<'t>>)> {
        let out = self.n_spec.forward_with_views(tape, n_views, x)?;
        let pi_hat = out.get(0).sigmoid();
        let z = Concepts::from_array([
            out.get(1).exp(),
            out.get(2).exp(),
            out.get(3).exp(),
            out.get(4).exp(),
            out.get(5).exp(),
        ]);
        Ok((pi_hat, z))
    }

    /// log p(x | z, ψ) on the tape: Windkessel-reconstructed vitals pass
    /// through the training scaler and a σ=0.1 Gaussian; the learned f
    /// predicts the standardized remaining features under the per-block σ.
    pub fn log_likelihood_t<'t>(
        &self,
        tape: &'t Tape,
        z: &Concepts<Var<'t>>,
        psi_views: &[(VecVar<'t>, VecVar<'t>)],
        x_std: &[f64],
    ) -> Result<Var<'t>> {
        let sim = simulate_vitals(z, &WindkesselConfig::default())?;
        let g_order = [sim.hr, sim.bp_sys, sim.bp_dias];
        let mut acc: Option<Var> = None;
        for (i, gv) in g_order.into_iter().enumerate() {
            let scaled = (gv - self.scaler.mean[i]) / self.scaler.std[i];
            let resid = (scaled - x_std[i]) / self.sigma.vitals;
            let term = resid
                .square()
                .mul_c(-0.5)
                .add_c(-0.5 * LN_TWO_PI - self.sigma.vitals.ln());
            acc = Some(match acc {
                None => term,
                Some(t) => t + term,
            });
        }
        let vitals_term = acc.unwrap();

        let f_out = self
            .f_spec
            .forward_with_views(tape, psi_views, self.f_input(tape, z)?)?;
        let target = tape.vector(&x_std[3..]);
        let d_f = self.d_tab + self.d_wave;
        let mut weights = Vec::with_capacity(d_f);
        let mut log_norm = 0.0;
        for k in 0..d_f {
            let s = if k < self.d_tab {
                self.sigma.tabular
            } else {
                self.sigma.waveform
            };
            weights.push(1.0 / s);
            log_norm += -0.5 * LN_TWO_PI - s.ln();
        }
        let w = tape.vector(&weights);
        let dw = f_out.sub(target).mul(w);
        let quad = tape.dot(dw, dw)?;
        Ok(vitals_term + quad.mul_c(-0.5).add_c(log_norm))
    }

    /// Standardized log-concepts fed to the f network.
    fn f_input<'t>(&self, tape: &'t Tape, z: &Concepts<Var<'t>>) -> Result<VecVar<'t>> {
        let zs = z.as_array();
        let mut u = Vec::with_capacity(N_CONCEPTS);
        for (m, zv) in zs.into_iter().enumerate() {
            u.push((zv.ln() - self.priors.pooled_mu(m)) / F_INPUT_SCALE);
        }
        tape.stack(&u)
    }

    /// Plain-number log-likelihood, mirroring [`Self::log_likelihood_t`]
    /// via the scalar kernels (used for evidence reports and as the
    /// decomposition reference).
    pub fn log_likelihood_f64(
        &self,
        z: &Concepts<f64>,
        psi: &[f64],
        x_std: &[f64],
    ) -> Result<f64> {
        let sim = simulate_vitals(z, &WindkesselConfig::default())?;
        let g_order = [sim.hr, sim.bp_sys, sim.bp_dias];
        let mut mean = Vec::with_capacity(self.feature_dim());
        let mut sigma = Vec::with_capacity(self.feature_dim());
        for (i, gv) in g_order.into_iter().enumerate() {
            mean.push((gv - self.scaler.mean[i]) / self.scaler.std[i]);
            sigma.push(self.sigma.vitals);
        }
        let zs = z.as_array();
        let u: Vec<f64> = (0..N_CONCEPTS)
            .map(|m| (zs[m].ln() - self.priors.pooled_mu(m)) / F_INPUT_SCALE)
            .collect();
        let f_out = self.f_spec.forward_f64(psi, &u);
        for (k, v) in f_out.into_iter().enumerate() {
            mean.push(v);
            sigma.push(if k < self.d_tab {
                self.sigma.tabular
            } else {
                self.sigma.waveform
            });
        }
        gaussian_logpdf(x_std, &mean, &sigma)
    }

    /// The per-patient log-joint on the tape:
    /// log p(π) + log p(y|π) + Σ_m log p(z_m|π, φ) + log p(x|z, ψ),
    /// returned with its four-term breakdown.
    #[allow(clippy::too_many_arguments)]
    pub fn log_joint_t<'t>(
        &self,
        tape: &'t Tape,
        pi: Var<'t>,
        z: &Concepts<Var<'t>>,
        phi_mu: VecVar<'t>,
        psi_views: &[(VecVar<'t>, VecVar<'t>)],
        x_std: &[f64],
        y: u8,
    ) -> Result<(Var<'t>, LogJointTerms<Var<'t>>)> {
        let one_a = pi.lift(1.0);
        let one_b = pi.lift(1.0);
        let prior_pi = beta_logpdf(pi, one_a, one_b)?;
        let outcome = bernoulli_logpmf(y, pi)?;
        let zs = z.as_array();
        let mut concepts: Option<Var> = None;
        for (m, zv) in zs.into_iter().enumerate() {
            let high = (
                phi_mu.get(2 * m + 1),
                pi.lift(self.priors.var_tilde[m][1]),
            );
            let low = (phi_mu.get(2 * m), pi.lift(self.priors.var_tilde[m][0]));
            let term = mixture_logpdf(zv, pi, high, low)?;
            concepts = Some(match concepts {
                None => term,
                Some(t) => t + term,
            });
        }
        let concepts = concepts.unwrap();
        let likelihood = self.log_likelihood_t(tape, z, psi_views, x_std)?;
        let terms = LogJointTerms {
            prior_pi,
            outcome,
            concepts,
            likelihood,
        };
        Ok((terms.total(), terms))
    }

    /// Plain-number log-joint used at evaluation time.
    pub fn log_joint_f64(
        &self,
        pi: f64,
        z: &Concepts<f64>,
        phi_mu: &[f64],
        psi: &[f64],
        x_std: &[f64],
        y: u8,
    ) -> Result<(f64, LogJointTerms<f64>)> {
        let prior_pi = beta_logpdf(pi, 1.0, 1.0)?;
        let outcome = bernoulli_logpmf(y, pi)?;
        let zs = z.as_array();
        let mut concepts = 0.0;
        for (m, zv) in zs.into_iter().enumerate() {
            concepts += mixture_logpdf(
                zv,
                pi,
                (phi_mu[2 * m + 1], self.priors.var_tilde[m][1]),
                (phi_mu[2 * m], self.priors.var_tilde[m][0]),
            )?;
        }
        let likelihood = self.log_likelihood_f64(z, psi, x_std)?;
        let terms = LogJointTerms {
            prior_pi,
            outcome,
            concepts,
            likelihood,
        };
        Ok((terms.total(), terms))
    }
}

/// Scale the output layer of a freshly initialized network so its outputs
/// start near the (informed) biases.
fn damp_output_layer(spec: &MlpSpec, params: &mut [f64]) {
    let out = spec.output_dim();
    let fan_in = spec.sizes[spec.sizes.len() - 2];
    let w_start = spec.param_count() - out - fan_in * out;
    for w in &mut params[w_start..w_start + fan_in * out] {
        *w *= 0.1;
    }
}

/// ŷ = 1 exactly when π̂ ≥ η.
pub fn classify(pi_hat: f64, eta: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&pi_hat) || !(0.0..=1.0).contains(&eta) {
        return Err(LpsError::Usage(format!(
            "classify expects probabilities in [0, 1], got pi_hat={pi_hat}, eta={eta}"
        )));
    }
    Ok(u8::from(pi_hat >= eta))
}

/// Training summary embedded in artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub selected_epoch: usize,
    pub best_val_auc: f64,
}

pub const MODEL_FORMAT: &str = "lps-model/1";
pub const BASELINE_FORMAT: &str = "lps-baseline/1";

/// On-disk model artifact (versioned structured text + flat parameters).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub arch: ModelArch,
    pub d_tab: usize,
    pub d_wave: usize,
    pub scaler: FeatureScaler,
    pub sigma: ObsSigma,
    pub priors: ConceptPriors,
    pub phi_mu: Vec<f64>,
    pub theta_q: Vec<f64>,
    pub theta_n: Vec<f64>,
    pub psi: Vec<f64>,
    pub eta: f64,
    pub stage1: TrainSummary,
    pub stage2: TrainSummary,
}

impl ModelArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let artifact: ModelArtifact = serde_json::from_reader(file)?;
        if artifact.format != MODEL_FORMAT {
            return Err(LpsError::Config(format!(
                "unsupported model format '{}', expected '{MODEL_FORMAT}'",
                artifact.format
            )));
        }
        Ok(artifact)
    }

    pub fn model(&self) -> Result<LpsModel> {
        LpsModel::new(
            self.arch.clone(),
            self.scaler.clone(),
            self.priors.clone(),
            self.sigma,
            self.d_tab,
            self.d_wave,
        )
    }
}

/// Baseline classifier artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineArtifact {
    pub format: String,
    pub hidden: Vec<usize>,
    pub scaler: FeatureScaler,
    pub params: Vec<f64>,
    pub summary: TrainSummary,
}

impl BaselineArtifact {
    pub fn spec(&self) -> MlpSpec {
        MlpSpec::new(self.scaler.dim(), &self.hidden, 1, Act::Relu)
    }

    /// Probability output of the baseline classifier.
    pub fn predict(&self, x_std: &[f64]) -> f64 {
        Real::sigmoid(self.spec().forward_f64(&self.params, x_std)[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let artifact: BaselineArtifact = serde_json::from_reader(file)?;
        if artifact.format != BASELINE_FORMAT {
            return Err(LpsError::Config(format!(
                "unsupported baseline format '{}', expected '{BASELINE_FORMAT}'",
                artifact.format
            )));
        }
        Ok(artifact)
    }
}
