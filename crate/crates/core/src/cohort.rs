//! Synthetic patient cohorts sampled from the generative model, dataset
//! splits and serialization, and the prior-fitting procedures that turn a
//! training cohort into per-concept, per-class log-normal priors.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::{lognormal_fit, lognormal_logpdf, LogNormalParams, RiskMixtureParams};
use crate::error::{LpsError, Result};
use crate::windkessel::{
    estimate_tau, simulate_vitals, ConceptVector, WindkesselConfig, CONCEPT_NAMES,
};

/// Observed vital signs, the x⁽ᵍ⁾ feature block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedVitals {
    pub hr: f64,
    pub bp_sys: f64,
    pub bp_dias: f64,
}

/// One synthetic patient. `true_z` and `true_pi` are generator ground
/// truth kept for evaluation oracles; the feature-assembly path never
/// reads them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: u64,
    pub vitals: ObservedVitals,
    pub tabular: Vec<f64>,
    pub waveform: Vec<f64>,
    pub y: u8,
    pub co_observed: Option<f64>,
    pub r_observed: Option<f64>,
    pub true_z: ConceptVector,
    pub true_pi: f64,
}

/// Per-concept generating mixtures, in the fixed concept order R, C, Ts,
/// Td, CO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptMixtures {
    pub r: RiskMixtureParams,
    pub c: RiskMixtureParams,
    pub ts: RiskMixtureParams,
    pub td: RiskMixtureParams,
    pub co: RiskMixtureParams,
}

impl ConceptMixtures {
    pub fn as_array(&self) -> [RiskMixtureParams; 5] {
        [self.r, self.c, self.ts, self.td, self.co]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub bp: f64,
    pub hr: f64,
    pub tabular: f64,
    pub waveform: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserveRates {
    pub co: f64,
    pub r: f64,
}

/// Full generator specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub concepts: ConceptMixtures,
    pub noise: NoiseConfig,
    pub observe: ObserveRates,
    pub d_tab: usize,
    pub d_wave: usize,
    pub teacher_seed: u64,
}

fn ln_mix(median_lived: f64, sd_lived: f64, median_died: f64, sd_died: f64) -> RiskMixtureParams {
    RiskMixtureParams {
        low_risk: LogNormalParams {
            mu: median_lived.ln(),
            var: sd_lived * sd_lived,
        },
        high_risk: LogNormalParams {
            mu: median_died.ln(),
            var: sd_died * sd_died,
        },
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 2400,
            // Beta(1.2, 11.2): mean 0.0968, matching the cohort's 9.7%
            // positive proportion.
            alpha: 1.2,
            beta: 11.2,
            concepts: ConceptMixtures {
                r: ln_mix(1000.0, 0.15, 1400.0, 0.15),
                c: ln_mix(0.0015, 0.15, 0.0010, 0.15),
                ts: ln_mix(0.27, 0.08, 0.25, 0.08),
                td: ln_mix(0.53, 0.10, 0.45, 0.10),
                co: ln_mix(5.5, 0.15, 3.8, 0.20),
            },
            noise: NoiseConfig {
                bp: 2.0,
                hr: 1.5,
                tabular: 0.25,
                waveform: 0.5,
            },
            observe: ObserveRates { co: 0.8, r: 0.2 },
            d_tab: 4,
            d_wave: 64,
            teacher_seed: 7777,
        }
    }
}

impl GeneratorConfig {
    /// Default mixtures with measurement noise reduced roughly to a
    /// quarter, for evidence-quality evaluations.
    pub fn low_noise() -> Self {
        GeneratorConfig {
            noise: NoiseConfig {
                bp: 0.5,
                hr: 0.4,
                tabular: 0.1,
                waveform: 0.2,
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(LpsError::Config(format!(
                "Beta prior shapes must be positive, got alpha={}, beta={}",
                self.alpha, self.beta
            )));
        }
        for v in [
            self.noise.bp,
            self.noise.hr,
            self.noise.tabular,
            self.noise.waveform,
        ] {
            if v < 0.0 {
                return Err(LpsError::Config(format!(
                    "noise sigma must be >= 0, got {v}"
                )));
            }
        }
        for v in [self.observe.co, self.observe.r] {
            if !(0.0..=1.0).contains(&v) {
                return Err(LpsError::Config(format!(
                    "observability rate must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }

    /// P(component = high-risk | y) under the generator: the z-mixture
    /// weight integrated over π conditioned on the outcome. For
    /// π ~ Beta(α, β) this is (α+1)/(α+β+1) when y=1 and α/(α+β+1)
    /// when y=0.
    pub fn class_component_weight(&self, y: u8) -> f64 {
        if y == 1 {
            (self.alpha + 1.0) / (self.alpha + self.beta + 1.0)
        } else {
            self.alpha / (self.alpha + self.beta + 1.0)
        }
    }

    /// E[ln z_m | y]: the class-conditional log-mean implied by the
    /// generating parameters — what a consistent class-conditional fit
    /// recovers.
    pub fn class_conditional_log_mean(&self, concept: usize, y: u8) -> f64 {
        let mix = self.concepts.as_array()[concept];
        let w = self.class_component_weight(y);
        w * mix.high_risk.mu + (1.0 - w) * mix.low_risk.mu
    }

    /// CDF of z_m | y under the generator (the π-integrated mixture
    /// restricted by outcome).
    pub fn class_conditional_cdf(&self, concept: usize, y: u8, x: f64) -> f64 {
        let mix = self.concepts.as_array()[concept];
        let w = self.class_component_weight(y);
        let ln_cdf = |p: LogNormalParams| {
            if x <= 0.0 {
                0.0
            } else {
                crate::oracle::normal_cdf((x.ln() - p.mu) / p.var.sqrt())
            }
        };
        w * ln_cdf(mix.high_risk) + (1.0 - w) * ln_cdf(mix.low_risk)
    }

    /// log p(z | y=1) − log p(z | y=0) from the generating parameters:
    /// the Bayes-optimal risk score given the latent concepts.
    pub fn bayes_log_likelihood_ratio(&self, z: &ConceptVector) -> f64 {
        let w1 = self.class_component_weight(1);
        let w0 = self.class_component_weight(0);
        let zs = z.as_array();
        let mut ratio = 0.0;
        for (m, mix) in self.concepts.as_array().iter().enumerate() {
            let lp1 = lognormal_logpdf(zs[m], mix.high_risk.mu, mix.high_risk.var).unwrap();
            let lp0 = lognormal_logpdf(zs[m], mix.low_risk.mu, mix.low_risk.var).unwrap();
            // log(w·e^{lp1} + (1−w)·e^{lp0}), stable around the larger term.
            let log_mix = |w: f64| {
                if lp1 >= lp0 {
                    lp1 + (w + (1.0 - w) * (lp0 - lp1).exp()).ln()
                } else {
                    lp0 + ((1.0 - w) + w * (lp1 - lp0).exp()).ln()
                }
            };
            ratio += log_mix(w1) - log_mix(w0);
        }
        ratio
    }
}

/// Deterministic stand-in for the unknown mechanism behind the learned
/// feature block: a fixed seed-derived two-layer dense map on log z, with
/// the waveform block carrying an additional cycle-periodic pulse so
/// timing information is visible in the waveform shape.
#[derive(Debug, Clone)]
pub struct TeacherMap {
    d_tab: usize,
    d_wave: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

const TEACHER_HIDDEN: usize = 16;
/// Seconds of synthetic waveform covered by the `d_wave` samples.
const WAVEFORM_SPAN: f64 = 2.0;
/// Fixed log-scale centering so the dense map sees O(1) inputs.
const TEACHER_CENTER: [f64; 5] = [6.9077, -6.5023, -1.3093, -0.6349, 1.6094];
const TEACHER_SCALE: f64 = 0.25;

impl TeacherMap {
    pub fn new(seed: u64, d_tab: usize, d_wave: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_out = d_tab + d_wave;
        let mut draw = |n: usize, std: f64| -> Vec<f64> {
            (0..n)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
                .collect()
        };
        TeacherMap {
            d_tab,
            d_wave,
            w1: draw(TEACHER_HIDDEN * 5, (1.0f64 / 5.0).sqrt()),
            b1: draw(TEACHER_HIDDEN, 0.2),
            w2: draw(d_out * TEACHER_HIDDEN, (1.0f64 / TEACHER_HIDDEN as f64).sqrt()),
            b2: draw(d_out, 0.2),
        }
    }

    /// Noise-free feature means for a concept vector (tabular ⊕ waveform).
    pub fn map(&self, z: &ConceptVector) -> Vec<f64> {
        let zs = z.as_array();
        let u: Vec<f64> = (0..5)
            .map(|i| (zs[i].ln() - TEACHER_CENTER[i]) / TEACHER_SCALE)
            .collect();
        let mut hidden = [0.0; TEACHER_HIDDEN];
        for i in 0..TEACHER_HIDDEN {
            let mut acc = self.b1[i];
            for j in 0..5 {
                acc += self.w1[i * 5 + j] * u[j];
            }
            hidden[i] = acc.tanh();
        }
        let d_out = self.d_tab + self.d_wave;
        let mut out = Vec::with_capacity(d_out);
        for i in 0..d_out {
            let mut acc = self.b2[i];
            for j in 0..TEACHER_HIDDEN {
                acc += self.w2[i * TEACHER_HIDDEN + j] * hidden[j];
            }
            out.push(acc);
        }
        // Cycle-periodic pulse over the waveform block.
        let cycle = z.ts + z.td;
        for k in 0..self.d_wave {
            let t = (k as f64 + 0.5) / self.d_wave as f64 * WAVEFORM_SPAN;
            let phase = t % cycle;
            if phase < z.ts {
                out[self.d_tab + k] += 2.0 * (std::f64::consts::PI * phase / z.ts).sin();
            }
        }
        out
    }
}

/// Draws one patient from the generative process: π ~ Beta(α,β),
/// y ~ Bernoulli(π), each z_m from the π-weighted mixture, vitals from the
/// forward model plus noise, remaining features from the teacher map plus
/// noise, and CO/R revealed at the observability rates.
pub fn sample_patient<R: Rng>(
    rng: &mut R,
    cfg: &GeneratorConfig,
    teacher: &TeacherMap,
    id: u64,
) -> Result<PatientRecord> {
    let beta = BetaDist::new(cfg.alpha, cfg.beta)
        .map_err(|e| LpsError::Config(format!("invalid Beta prior: {e}")))?;
    let pi: f64 = beta.sample(rng);
    let y = u8::from(rng.gen_bool(pi));

    // Redraw z on (vanishingly rare) physiological-guard violations.
    let mixes = cfg.concepts.as_array();
    let mut z = None;
    for _ in 0..64 {
        let mut zs = [0.0; 5];
        for (m, mix) in mixes.iter().enumerate() {
            let comp = if rng.gen_bool(pi) {
                mix.high_risk
            } else {
                mix.low_risk
            };
            let eps: f64 = rng.sample(StandardNormal);
            zs[m] = (comp.mu + comp.var.sqrt() * eps).exp();
        }
        if let Ok(v) = ConceptVector::new(zs[0], zs[1], zs[2], zs[3], zs[4]) {
            z = Some(v);
            break;
        }
    }
    let z = z.ok_or_else(|| {
        LpsError::Config("generator mixtures produce no physiological draws".into())
    })?;

    let vitals = simulate_vitals(&z, &WindkesselConfig::default())?;
    let noise = |sigma: f64, rng: &mut R| -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        sigma * eps
    };
    let observed = ObservedVitals {
        hr: vitals.hr + noise(cfg.noise.hr, rng),
        bp_sys: vitals.bp_sys + noise(cfg.noise.bp, rng),
        bp_dias: vitals.bp_dias + noise(cfg.noise.bp, rng),
    };
    let mut features = teacher.map(&z);
    for (k, f) in features.iter_mut().enumerate() {
        let sigma = if k < cfg.d_tab {
            cfg.noise.tabular
        } else {
            cfg.noise.waveform
        };
        *f += noise(sigma, rng);
    }
    let waveform = features.split_off(cfg.d_tab);
    let co_observed = rng.gen_bool(cfg.observe.co).then_some(z.co);
    let r_observed = rng.gen_bool(cfg.observe.r).then_some(z.r);

    Ok(PatientRecord {
        id,
        vitals: observed,
        tabular: features,
        waveform,
        y,
        co_observed,
        r_observed,
        true_z: z,
        true_pi: pi,
    })
}

/// Generates `cfg.n` independent patients. Each patient draws from its own
/// counter-derived RNG stream, so the cohort is reproducible and may be
/// sharded without changing the result.
pub fn generate_cohort(cfg: &GeneratorConfig, seed: u64) -> Result<Vec<PatientRecord>> {
    cfg.validate()?;
    let teacher = TeacherMap::new(cfg.teacher_seed, cfg.d_tab, cfg.d_wave);
    let mut cohort = Vec::with_capacity(cfg.n);
    for id in 0..cfg.n as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        cohort.push(sample_patient(&mut rng, cfg, &teacher, id)?);
    }
    Ok(cohort)
}

/// Train/validation/test fractions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.train + self.val + self.test - 1.0).abs() > 1e-9 {
            return Err(LpsError::Config(format!(
                "split fractions must sum to 1, got {} + {} + {}",
                self.train, self.val, self.test
            )));
        }
        if self.train < 0.0 || self.val < 0.0 || self.test < 0.0 {
            return Err(LpsError::Config(
                "split fractions must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Disjoint shuffled partition with sizes ⌊train·N⌋ / ⌊val·N⌋ / remainder.
pub fn split_cohort(
    cohort: &[PatientRecord],
    spec: &SplitSpec,
) -> Result<(Vec<PatientRecord>, Vec<PatientRecord>, Vec<PatientRecord>)> {
    spec.validate()?;
    let mut idx: Vec<usize> = (0..cohort.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = (spec.train * cohort.len() as f64).floor() as usize;
    let n_val = (spec.val * cohort.len() as f64).floor() as usize;
    let pick =
        |range: &[usize]| -> Vec<PatientRecord> { range.iter().map(|&i| cohort[i].clone()).collect() };
    Ok((
        pick(&idx[..n_train]),
        pick(&idx[n_train..n_train + n_val]),
        pick(&idx[n_train + n_val..]),
    ))
}

/// Fitted per-concept, per-class log-normal priors: `[concept][class]`
/// in the fixed concept order, class 0 = lived, class 1 = died.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedPriors {
    pub per_concept: [[LogNormalParams; 2]; 5],
}

impl FittedPriors {
    pub fn get(&self, concept: usize, class: u8) -> LogNormalParams {
        self.per_concept[concept][class as usize]
    }
}

/// The prior-fitting procedures, per outcome class:
/// - R and CO from their observed subsets;
/// - C from τ/R on the observed-R subset, with τ inverted from the
///   diastolic decay using Td estimated as two thirds of the beat;
/// - Ts and Td as one/two thirds of the beat length from every patient's
///   heart rate.
pub fn fit_concept_priors(train: &[PatientRecord]) -> Result<FittedPriors> {
    let mut per_concept = [[LogNormalParams { mu: 0.0, var: 1.0 }; 2]; 5];
    for class in 0..2u8 {
        let members: Vec<&PatientRecord> = train.iter().filter(|p| p.y == class).collect();

        let fit = |concept: usize, samples: &[f64]| -> Result<LogNormalParams> {
            if samples.len() < 2 {
                return Err(LpsError::Config(format!(
                    "insufficient observed values to fit {} priors for class {} ({} found)",
                    CONCEPT_NAMES[concept],
                    class,
                    samples.len()
                )));
            }
            lognormal_fit(samples)
        };

        let r_values: Vec<f64> = members.iter().filter_map(|p| p.r_observed).collect();
        per_concept[0][class as usize] = fit(0, &r_values)?;

        let co_values: Vec<f64> = members.iter().filter_map(|p| p.co_observed).collect();
        per_concept[4][class as usize] = fit(4, &co_values)?;

        // C = tau / R on the observed-R subset. Records whose measured
        // pressures do not decay (bp_dias >= bp_sys, a noise artifact)
        // carry no tau information and are skipped.
        let mut c_values = Vec::new();
        for p in &members {
            if let Some(r) = p.r_observed {
                let beat = 60.0 / p.vitals.hr;
                if let Ok(tau) = estimate_tau(p.vitals.bp_sys, p.vitals.bp_dias, 2.0 * beat / 3.0)
                {
                    c_values.push(tau / r);
                }
            }
        }
        per_concept[1][class as usize] = fit(1, &c_values)?;

        let ts_values: Vec<f64> = members.iter().map(|p| 60.0 / p.vitals.hr / 3.0).collect();
        per_concept[2][class as usize] = fit(2, &ts_values)?;
        let td_values: Vec<f64> = members
            .iter()
            .map(|p| 2.0 * (60.0 / p.vitals.hr) / 3.0)
            .collect();
        per_concept[3][class as usize] = fit(3, &td_values)?;
    }
    Ok(FittedPriors { per_concept })
}

/// Writes one JSON object per line.
pub fn write_cohort(cohort: &[PatientRecord], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in cohort {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Reads a line-delimited cohort; parse failures carry the 1-based line.
pub fn read_cohort(path: &Path) -> Result<Vec<PatientRecord>> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut cohort = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatientRecord = serde_json::from_str(&line).map_err(|e| LpsError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        cohort.push(record);
    }
    Ok(cohort)
}
