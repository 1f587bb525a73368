//! Command-line surface for the risk-prediction engine.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/configuration error,
//! 3 training error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lps_core::cohort::{
    fit_concept_priors, generate_cohort, read_cohort, split_cohort, GeneratorConfig, SplitSpec,
};
use lps_core::eval::{
    evaluate_split, run_experiment, write_figure_data, write_report_csv, write_runs_csv,
    write_welch_csv, ExperimentPlan, MetricsReport, TrainedModels,
};
use lps_core::model::{
    assemble_features, classify, BaselineArtifact, ConceptPriors, FeatureScaler, LpsModel,
    ModelArch, ModelArtifact, ObsSigma, Prediction, BASELINE_FORMAT, MODEL_FORMAT,
};
use lps_core::train::{
    integrated_gradients, train_baseline, train_map_network, train_variational_em, RunResult,
    TrainConfig,
};
use lps_core::windkessel::{diastole_pressure, systole_pressure, ConceptVector};
use lps_core::{LpsError, Result};

#[derive(Parser)]
#[command(
    name = "lps",
    about = "Risk prediction with interpretable hemodynamic evidence",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort from a generator config.
    Gen(GenArgs),
    /// Train the two learning stages and write a model artifact.
    Train(TrainArgs),
    /// Train the baseline classifier and write its artifact.
    TrainBaseline(TrainArgs),
    /// Evaluate saved models on a dataset and write a metrics report.
    Eval(EvalArgs),
    /// Run the full multi-run protocol from a plan file.
    Experiment(ExperimentArgs),
    /// Emit the evidence report for one patient.
    Explain(ExplainArgs),
    /// Emit plot-ready CSVs from an experiment directory.
    Report(ReportArgs),
    /// Dump a closed-form pressure waveform as CSV (t, P).
    Waveform(WaveformArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generator config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output dataset path (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Sampling seed.
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Input dataset (JSON lines).
    #[arg(long)]
    dataset: PathBuf,
    /// Training config (JSON); missing fields take defaults.
    #[arg(long)]
    config: PathBuf,
    /// Output model directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory holding model.json (and baseline.json, if present).
    #[arg(long)]
    models: PathBuf,
    /// Dataset to evaluate on (treated as one test split).
    #[arg(long)]
    dataset: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Cardiac-output threshold for the F1 metric [L/min].
    #[arg(long, default_value_t = 4.0)]
    co_cutoff: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment plan (JSON).
    #[arg(long)]
    plan: PathBuf,
    /// Output directory for report CSVs and per-run predictions.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    /// Directory with model.json and baseline.json.
    #[arg(long)]
    model: PathBuf,
    /// Dataset holding the patient.
    #[arg(long)]
    dataset: PathBuf,
    /// Patient id to explain.
    #[arg(long)]
    patient: u64,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Decision threshold override (defaults to the artifact's eta).
    #[arg(long)]
    eta: Option<f64>,
    /// Normal-range lower limit for cardiac output [L/min].
    #[arg(long, default_value_t = 4.0)]
    co_cutoff: f64,
    /// Normal range for systemic vascular resistance [mmHg*s/L].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [781.0, 1280.0])]
    r_range: Vec<f64>,
    /// Normal range for arterial compliance [L/mmHg].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [0.00117, 0.00192])]
    c_range: Vec<f64>,
    /// Integrated-gradients path steps.
    #[arg(long, default_value_t = 256)]
    ig_steps: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment output directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Directory for the plot-ready CSVs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WaveformArgs {
    #[arg(long, default_value_t = 1000.0)]
    r: f64,
    #[arg(long, default_value_t = 0.0015)]
    c: f64,
    #[arg(long, default_value_t = 0.3)]
    ts: f64,
    #[arg(long, default_value_t = 0.6)]
    td: f64,
    #[arg(long, default_value_t = 6.0)]
    co: f64,
    #[arg(long, default_value_t = 10)]
    cycles: u32,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 80.0)]
    p0: f64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

/// Training config file: schedule, architecture, split seed, threshold.
#[derive(serde::Deserialize)]
struct TrainFileConfig {
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    arch: ModelArch,
    #[serde(default)]
    split_seed: u64,
    #[serde(default = "default_eta")]
    eta: f64,
}

fn default_eta() -> f64 {
    0.5
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                LpsError::Usage(_) => 1,
                LpsError::Train { .. } => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::TrainBaseline(args) => cmd_train_baseline(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Report(args) => write_figure_data(&args.input, &args.out),
        Command::Waveform(args) => cmd_waveform(args),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let cfg: GeneratorConfig = read_json(&args.config)?;
    let cohort = generate_cohort(&cfg, args.seed)?;
    lps_core::cohort::write_cohort(&cohort, &args.out)?;
    println!("wrote {} patients to {}", cohort.len(), args.out.display());
    Ok(())
}

/// Shared setup for the training commands: split, scaler, priors, model.
fn training_context(
    dataset: &Path,
    file_cfg: &TrainFileConfig,
) -> Result<(
    LpsModel,
    Vec<lps_core::cohort::PatientRecord>,
    Vec<lps_core::cohort::PatientRecord>,
)> {
    let cohort = read_cohort(dataset)?;
    if cohort.is_empty() {
        return Err(LpsError::Config("dataset is empty".into()));
    }
    let (train, val, _test) = split_cohort(&cohort, &SplitSpec::new(file_cfg.split_seed))?;
    let features: Vec<Vec<f64>> = train.iter().map(assemble_features).collect();
    let scaler = FeatureScaler::fit(&features)?;
    let priors = ConceptPriors::from_fitted(&fit_concept_priors(&train)?);
    let model = LpsModel::new(
        file_cfg.arch.clone(),
        scaler,
        priors,
        ObsSigma::default(),
        cohort[0].tabular.len(),
        cohort[0].waveform.len(),
    )?;
    Ok((model, train, val))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file_cfg: TrainFileConfig = read_json(&args.config)?;
    let (model, train, val) = training_context(&args.dataset, &file_cfg)?;
    std::fs::create_dir_all(&args.out)?;

    let s1 = train_variational_em(&model, &train, &val, &file_cfg.train)?;
    write_trace_csv(&s1.run, &args.out.join("stage1_trace.csv"))?;
    println!(
        "stage one done: checkpoint epoch {} (val AUC {:.4})",
        s1.run.selected_epoch, s1.run.best_val_auc
    );

    let s2 = train_map_network(&model, &train, &val, &s1.phi_mu, &s1.psi, &file_cfg.train)?;
    write_trace_csv(&s2.run, &args.out.join("stage2_trace.csv"))?;
    println!(
        "stage two done: checkpoint epoch {} (val AUC {:.4})",
        s2.run.selected_epoch, s2.run.best_val_auc
    );

    let artifact = ModelArtifact {
        format: MODEL_FORMAT.to_string(),
        arch: model.arch.clone(),
        d_tab: model.d_tab,
        d_wave: model.d_wave,
        scaler: model.scaler.clone(),
        sigma: model.sigma,
        priors: model.priors.clone(),
        phi_mu: s1.phi_mu,
        theta_q: s1.theta_q,
        theta_n: s2.theta_n,
        psi: s1.psi,
        eta: file_cfg.eta,
        stage1: lps_core::model::TrainSummary {
            selected_epoch: s1.run.selected_epoch,
            best_val_auc: s1.run.best_val_auc,
        },
        stage2: lps_core::model::TrainSummary {
            selected_epoch: s2.run.selected_epoch,
            best_val_auc: s2.run.best_val_auc,
        },
    };
    let path = args.out.join("model.json");
    artifact.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_train_baseline(args: TrainArgs) -> Result<()> {
    let file_cfg: TrainFileConfig = read_json(&args.config)?;
    let (model, train, val) = training_context(&args.dataset, &file_cfg)?;
    std::fs::create_dir_all(&args.out)?;

    let base = train_baseline(&model, &train, &val, &file_cfg.train)?;
    write_trace_csv(&base.run, &args.out.join("baseline_trace.csv"))?;
    let artifact = BaselineArtifact {
        format: BASELINE_FORMAT.to_string(),
        hidden: model.arch.hidden.clone(),
        scaler: model.scaler.clone(),
        params: base.params,
        summary: lps_core::model::TrainSummary {
            selected_epoch: base.run.selected_epoch,
            best_val_auc: base.run.best_val_auc,
        },
    };
    let path = args.out.join("baseline.json");
    artifact.save(&path)?;
    println!(
        "baseline done: checkpoint epoch {} (val AUC {:.4}); wrote {}",
        artifact.summary.selected_epoch,
        artifact.summary.best_val_auc,
        path.display()
    );
    Ok(())
}

fn write_trace_csv(run: &RunResult, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "epoch,objective,full_elbo,log_p_pi,log_p_y,log_p_z,log_p_x,neg_log_q_z,neg_log_q_pi,log_p_phi,val_auc"
    )?;
    for (i, obj) in run.objective_trace.iter().enumerate() {
        let terms = run.elbo_terms_trace.get(i);
        let full = run
            .full_elbo_trace
            .get(i)
            .map(|v| v.to_string())
            .unwrap_or_else(|| "NA".into());
        let t = |f: fn(&lps_core::train::ElboTerms) -> f64| {
            terms
                .map(|x| f(x).to_string())
                .unwrap_or_else(|| "NA".into())
        };
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            i + 1,
            obj,
            full,
            t(|x| x.log_p_pi),
            t(|x| x.log_p_y),
            t(|x| x.log_p_z),
            t(|x| x.log_p_x),
            t(|x| x.neg_log_q_z),
            t(|x| x.neg_log_q_pi),
            t(|x| x.log_p_phi),
            run.val_auc_trace[i],
        )?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let artifact = ModelArtifact::load(&args.models.join("model.json"))?;
    let model = artifact.model()?;
    let baseline_path = args.models.join("baseline.json");
    let baseline = if baseline_path.exists() {
        Some(BaselineArtifact::load(&baseline_path)?)
    } else {
        None
    };
    let cohort = read_cohort(&args.dataset)?;
    if cohort.is_empty() {
        return Err(LpsError::Config("dataset is empty".into()));
    }
    let out = evaluate_split(
        &TrainedModels {
            model: &model,
            phi_mu: &artifact.phi_mu,
            psi: &artifact.psi,
            theta_q: &artifact.theta_q,
            theta_n: &artifact.theta_n,
            baseline: baseline.as_ref().map(|b| b.params.as_slice()),
        },
        &cohort,
        0,
        args.co_cutoff,
        None,
    )?;
    let report = MetricsReport {
        rows: out.rows,
        aggregates: Vec::new(),
        welch: Vec::new(),
    };
    write_runs_csv(&report, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let plan: ExperimentPlan = read_json(&args.plan)?;
    let cohort = plan.resolve_cohort()?;
    std::fs::create_dir_all(&args.out)?;
    // Echo the resolved plan for provenance.
    std::fs::write(
        args.out.join("plan.json"),
        serde_json::to_string_pretty(&plan)?,
    )?;
    let report = run_experiment(&plan, &cohort, Some(&args.out))?;
    write_runs_csv(&report, &args.out.join("runs.csv"))?;
    write_report_csv(&report, &args.out.join("report.csv"))?;
    write_welch_csv(&report, &args.out.join("welch.csv"))?;
    println!(
        "experiment complete: {} runs, reports under {}",
        plan.runs,
        args.out.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct ConceptReport {
    name: &'static str,
    value: f64,
    unit: &'static str,
    normal_range: Option<(f64, f64)>,
    in_range: Option<bool>,
}

#[derive(serde::Serialize)]
struct EvidenceReport {
    patient: u64,
    outcome_observed: u8,
    prediction: Prediction,
    concepts: Vec<ConceptReport>,
    integrated_gradients: Vec<FeatureAttribution>,
}

#[derive(serde::Serialize)]
struct FeatureAttribution {
    feature: String,
    attribution: f64,
}

fn cmd_explain(args: ExplainArgs) -> Result<()> {
    let artifact = ModelArtifact::load(&args.model.join("model.json"))?;
    let model = artifact.model()?;
    let baseline = BaselineArtifact::load(&args.model.join("baseline.json"))?;
    let cohort = read_cohort(&args.dataset)?;
    let patient = cohort
        .iter()
        .find(|p| p.id == args.patient)
        .ok_or_else(|| {
            LpsError::Config(format!("patient {} not found in dataset", args.patient))
        })?;

    let eta = args.eta.unwrap_or(artifact.eta);
    let x_std = model.features(patient);
    let (pi_hat, z_hat) = model.map_forward(&artifact.theta_n, &x_std)?;
    let y_hat = classify(pi_hat, eta)?;
    let (_, terms) = model.log_joint_f64(
        pi_hat.clamp(1e-12, 1.0 - 1e-12),
        &z_hat,
        &artifact.phi_mu,
        &artifact.psi,
        &x_std,
        y_hat,
    )?;
    let prediction = Prediction {
        pi_hat,
        z_hat,
        y_hat,
        eta,
        terms,
    };

    let range = |v: f64, lo: f64, hi: f64| (Some((lo, hi)), Some(v >= lo && v <= hi));
    let (r_range, r_in) = range(z_hat.r, args.r_range[0], args.r_range[1]);
    let (c_range, c_in) = range(z_hat.c, args.c_range[0], args.c_range[1]);
    let concepts = vec![
        ConceptReport {
            name: "R",
            value: z_hat.r,
            unit: "mmHg*s/L",
            normal_range: r_range,
            in_range: r_in,
        },
        ConceptReport {
            name: "C",
            value: z_hat.c,
            unit: "L/mmHg",
            normal_range: c_range,
            in_range: c_in,
        },
        ConceptReport {
            name: "Ts",
            value: z_hat.ts,
            unit: "s",
            normal_range: None,
            in_range: None,
        },
        ConceptReport {
            name: "Td",
            value: z_hat.td,
            unit: "s",
            normal_range: None,
            in_range: None,
        },
        ConceptReport {
            name: "CO",
            value: z_hat.co,
            unit: "L/min",
            normal_range: Some((args.co_cutoff, f64::INFINITY)),
            in_range: Some(z_hat.co >= args.co_cutoff),
        },
    ];

    // Attributions of the baseline classifier against an all-zeros
    // (training-mean) standardized input.
    let spec = baseline.spec();
    let zeros = vec![0.0; x_std.len()];
    let attr = integrated_gradients(
        |tape, xv| {
            let leaf = tape.vector(&baseline.params);
            let views = spec.slice_params(leaf);
            Ok(spec.forward_with_views(tape, &views, xv)?.get(0).sigmoid())
        },
        &x_std,
        &zeros,
        args.ig_steps,
    )?;
    let mut names = vec!["hr".to_string(), "bp_sys".to_string(), "bp_dias".to_string()];
    for i in 0..model.d_tab {
        names.push(format!("tab_{i}"));
    }
    for i in 0..model.d_wave {
        names.push(format!("wave_{i}"));
    }
    let integrated = names
        .into_iter()
        .zip(attr)
        .map(|(feature, attribution)| FeatureAttribution {
            feature,
            attribution,
        })
        .collect();

    let report = EvidenceReport {
        patient: patient.id,
        outcome_observed: patient.y,
        prediction,
        concepts,
        integrated_gradients: integrated,
    };
    let file = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    serde_json::to_writer_pretty(file, &report)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_waveform(args: WaveformArgs) -> Result<()> {
    use std::io::Write;
    let z = ConceptVector::new(args.r, args.c, args.ts, args.td, args.co)?;
    if args.dt <= 0.0 {
        return Err(LpsError::Usage("dt must be positive".into()));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    writeln!(f, "t,P")?;
    let mut p_start = args.p0;
    let mut t0 = 0.0;
    writeln!(f, "{},{}", 0.0, p_start)?;
    for _ in 0..args.cycles {
        let n_sys = (z.ts / args.dt).ceil() as usize;
        for k in 1..=n_sys {
            let t = (k as f64 * args.dt).min(z.ts);
            writeln!(f, "{},{}", t0 + t, systole_pressure(t, p_start, &z))?;
        }
        p_start = systole_pressure(z.ts, p_start, &z);
        t0 += z.ts;
        let n_dias = (z.td / args.dt).ceil() as usize;
        for k in 1..=n_dias {
            let t = (k as f64 * args.dt).min(z.td);
            writeln!(f, "{},{}", t0 + t, diastole_pressure(t, p_start, &z))?;
        }
        p_start = diastole_pressure(z.td, p_start, &z);
        t0 += z.td;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
