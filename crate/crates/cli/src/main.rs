//! Command-line harness: synthetic data generation, support-set
//! composition, dispersion stats, single-instance prediction and tuning,
//! dataset evaluation, and the gradient check.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sstune_core::data::{
    compose_support_set, dispersion_stats, load_class_text, load_support, load_test,
    save_class_text, save_support, save_test, synth_generate, ClassCatalog, PromptSet,
    SyntheticConfig,
};
use sstune_core::eval::{emit_report, eval_dataset, run_gradcheck, ExperimentConfig, GradcheckConfig};
use sstune_core::numerics::DenseMatrix;
use sstune_core::predict::{BlendWeights, PredictorConfig, PsiMode};
use sstune_core::tuner::{
    final_predict, full_scale_loss, tune, AdamwConfig, ConfidenceFilter, FactorizedWeights,
    SamplingStrategy, TuningSchedule, WeightMask,
};

#[derive(Parser)]
#[command(name = "sstune", version, about = "Test-time support-set tuning over precomputed embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Top,
    Random,
}

impl From<StrategyArg> for SamplingStrategy {
    fn from(value: StrategyArg) -> Self {
        match value {
            StrategyArg::Top => SamplingStrategy::Top,
            StrategyArg::Random => SamplingStrategy::Random,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PsiModeArg {
    AffineRescale,
    Exponential,
}

/// Predictor knobs shared by `predict` and `tune`.
#[derive(Args)]
struct PredictorArgs {
    /// Blend weights as "w_zs,w_ta,w_tx".
    #[arg(long)]
    blend: Option<String>,
    /// Cache-affinity sharpness.
    #[arg(long)]
    beta: Option<f64>,
    /// Class softmax temperature.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum)]
    psi_mode: Option<PsiModeArg>,
    #[arg(long)]
    psi_scale: Option<f64>,
}

impl PredictorArgs {
    fn build(&self) -> Result<PredictorConfig<f64>> {
        let mut config = PredictorConfig::<f64>::default();
        if let Some(blend) = &self.blend {
            let parts: Vec<f64> = blend
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .with_context(|| format!("bad --blend '{blend}', expected w_zs,w_ta,w_tx"))?;
            if parts.len() != 3 {
                bail!("--blend needs exactly three comma-separated weights");
            }
            config.blend = BlendWeights {
                zs: parts[0],
                ta: parts[1],
                tx: parts[2],
            };
        }
        if let Some(beta) = self.beta {
            config.beta = beta;
        }
        if let Some(tau) = self.tau {
            config.class_softmax_temperature = tau;
        }
        if let Some(mode) = self.psi_mode {
            config.psi_mode = match mode {
                PsiModeArg::AffineRescale => PsiMode::AffineRescale,
                PsiModeArg::Exponential => PsiMode::Exponential,
            };
        }
        if let Some(scale) = self.psi_scale {
            config.psi_scale = scale;
        }
        Ok(config)
    }
}

/// Tuning knobs shared by `predict` and `tune`.
#[derive(Args)]
struct TuningArgs {
    /// Stages as "SCALExSTEPS,..." e.g. "8x4,6x3,4x3".
    #[arg(long, default_value = "8x4,6x3,4x3")]
    schedule: String,
    #[arg(long, value_enum, default_value = "top")]
    strategy: StrategyArg,
    /// Confidence fraction: the most confident floor(rho*V) views enter the loss.
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    /// Schedule repetitions.
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    /// Seed for the random frame-sampling stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Freeze the per-video weights at 1.
    #[arg(long)]
    no_r_vid: bool,
    /// Freeze the per-frame weights at 1.
    #[arg(long)]
    no_r_fr: bool,
}

impl TuningArgs {
    fn schedule(&self) -> Result<TuningSchedule> {
        let stages = TuningSchedule::parse_stages(&self.schedule)
            .map_err(|e| anyhow::anyhow!(e.to_string()))?;
        Ok(TuningSchedule {
            stages,
            strategy: self.strategy.into(),
            rng_seed: self.seed,
        }
        .repeated(self.epochs))
    }

    fn optimizer(&self) -> AdamwConfig {
        AdamwConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamwConfig::default()
        }
    }

    fn mask(&self) -> WeightMask {
        WeightMask {
            tune_video: !self.no_r_vid,
            tune_frame: !self.no_r_fr,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset and persist its bundles.
    Synth {
        /// Synthetic config JSON (see README for the schema).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Stack per-video feature blobs into a support-set bundle.
    Compose {
        /// JSON array of class names.
        #[arg(long)]
        catalog: PathBuf,
        /// Prompt-set JSON: {"m":..,"n":..,"prompts":{class:[..]}}.
        #[arg(long)]
        prompts: PathBuf,
        /// Directory with features.json plus one .bin per video.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class dispersion statistics of a support set.
    Stats {
        #[arg(long)]
        support: PathBuf,
        /// Output JSON file (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tune on one test instance (unless --no-tse) and predict its class.
    Predict {
        #[arg(long)]
        support: PathBuf,
        #[arg(long)]
        classtext: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Skip erosion; score with identity weights.
        #[arg(long)]
        no_tse: bool,
        #[command(flatten)]
        predictor: PredictorArgs,
        #[command(flatten)]
        tuning: TuningArgs,
    },
    /// Run one tuning session and export the step trace.
    Tune {
        #[arg(long)]
        support: PathBuf,
        #[arg(long)]
        classtext: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Trace JSONL output (stdout if omitted).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        predictor: PredictorArgs,
        #[command(flatten)]
        tuning: TuningArgs,
    },
    /// Evaluate a whole experiment config over its test instances.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's parallelism degree.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Central-difference step size.
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write the full report JSON here (stdout prints a summary).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_instance(
    support_dir: &Path,
    classtext_dir: &Path,
    test_dir: &Path,
) -> Result<(
    ClassCatalog,
    sstune_core::ComputeSupportSet,
    sstune_core::ComputeClassText,
    sstune_core::ComputeTestInstance,
)> {
    let (catalog, class_text) = load_class_text(classtext_dir)?;
    let (support_catalog, support) = load_support(support_dir)?;
    let (test_catalog, test) = load_test(test_dir)?;
    if support_catalog != catalog || test_catalog != catalog {
        bail!("bundle class catalogs disagree");
    }
    Ok((catalog, support.cast(), class_text.cast(), test.cast()))
}

fn prediction_json(
    catalog: &ClassCatalog,
    logits: &sstune_core::predict::Logits<f64>,
    predicted: usize,
    ground_truth: Option<usize>,
    initial_loss: Option<f64>,
    final_loss: Option<f64>,
) -> serde_json::Value {
    serde_json::json!({
        "predicted_index": predicted,
        "predicted_class": catalog.names()[predicted],
        "ground_truth": ground_truth,
        "correct": ground_truth.map(|gt| gt == predicted),
        "logits": logits.values(),
        "initial_loss": initial_loss,
        "final_loss": final_loss,
    })
}

fn cmd_synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<i32> {
    let text = fs::read_to_string(config)
        .with_context(|| format!("reading {}", config.display()))?;
    let mut synth: SyntheticConfig = serde_json::from_str(&text)?;
    if let Some(seed) = seed {
        synth.seed = seed;
    }
    let data = synth_generate(&synth)?;
    let class_text_digest = save_class_text(&out.join("class_text"), &data.catalog, &data.class_text)?;
    let support_digest = save_support(&out.join("support"), &data.catalog, &data.support)?;
    let mut test_dirs = Vec::new();
    for (i, test) in data.tests.iter().enumerate() {
        let dir = out.join("tests").join(format!("test_{i:05}"));
        save_test(&dir, &data.catalog, test)?;
        test_dirs.push(dir);
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "classes": data.catalog.len(),
            "support_videos": data.support.videos(),
            "test_instances": data.tests.len(),
            "class_text_digest": class_text_digest,
            "support_digest": support_digest,
            "out": out,
        }))?
    );
    Ok(0)
}

fn cmd_compose(catalog: &Path, prompts: &Path, features: &Path, out: &Path) -> Result<i32> {
    let names: Vec<String> = serde_json::from_str(
        &fs::read_to_string(catalog).with_context(|| format!("reading {}", catalog.display()))?,
    )?;
    let catalog = ClassCatalog::new(names)?;
    let prompt_set = PromptSet::from_json(
        &fs::read_to_string(prompts).with_context(|| format!("reading {}", prompts.display()))?,
        &catalog,
    )?;

    #[derive(serde::Deserialize)]
    struct FeatureIndex {
        frames: usize,
        dim: usize,
        videos: Vec<FeatureEntry>,
    }
    #[derive(serde::Deserialize)]
    struct FeatureEntry {
        class: String,
        prompt: usize,
        repeat: usize,
        file: String,
    }

    let index: FeatureIndex = serde_json::from_str(
        &fs::read_to_string(features.join("features.json"))
            .with_context(|| format!("reading {}/features.json", features.display()))?,
    )?;
    let mut videos = BTreeMap::new();
    for entry in &index.videos {
        let class = catalog
            .index_of(&entry.class)
            .with_context(|| format!("unknown class '{}' in features.json", entry.class))?;
        let bytes = fs::read(features.join(&entry.file))
            .with_context(|| format!("reading {}", entry.file))?;
        if bytes.len() != 4 * index.frames * index.dim {
            bail!(
                "{}: expected {} bytes for {}x{} f32, found {}",
                entry.file,
                4 * index.frames * index.dim,
                index.frames,
                index.dim,
                bytes.len()
            );
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        videos.insert(
            (class, entry.prompt, entry.repeat),
            DenseMatrix::from_vec(index.frames, index.dim, data)
                .map_err(|e| anyhow::anyhow!(e.to_string()))?,
        );
    }
    let bundle = compose_support_set(&catalog, &prompt_set, &videos)?;
    let digest = save_support(out, &catalog, &bundle)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "videos": bundle.videos(),
            "per_class": bundle.per_class(),
            "digest": digest,
            "out": out,
        }))?
    );
    Ok(0)
}

fn cmd_stats(support: &Path, out: Option<&Path>) -> Result<i32> {
    let (_, bundle) = load_support(support)?;
    let report = dispersion_stats(&bundle)?;
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "mean_intra_class": report.mean_intra_class(),
        "per_class": report.per_class,
    }))?;
    match out {
        Some(path) => fs::write(path, format!("{json}\n"))?,
        None => println!("{json}"),
    }
    Ok(0)
}

fn cmd_predict(
    support: &Path,
    classtext: &Path,
    test: &Path,
    no_tse: bool,
    predictor: &PredictorArgs,
    tuning: &TuningArgs,
) -> Result<i32> {
    let (catalog, support, class_text, test) = load_instance(support, classtext, test)?;
    let config = predictor.build()?;
    let filter = ConfidenceFilter { rho: tuning.rho };
    let identity = FactorizedWeights::<f64>::ones(support.videos(), support.frames());

    let (weights, initial_loss, final_loss) = if no_tse {
        (identity, None, None)
    } else {
        let initial = full_scale_loss(&support, &test, &class_text, &config, filter, &identity)?;
        let (weights, _trace) = tune(
            &support,
            &test,
            &class_text,
            &tuning.schedule()?,
            &config,
            filter,
            &tuning.optimizer(),
            tuning.mask(),
        )?;
        let final_loss =
            full_scale_loss(&support, &test, &class_text, &config, filter, &weights)?;
        (weights, Some(initial), Some(final_loss))
    };

    let (logits, predicted) = final_predict(&support, &test, &weights, &class_text, &config)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&prediction_json(
            &catalog,
            &logits,
            predicted,
            test.ground_truth,
            initial_loss,
            final_loss,
        ))?
    );
    Ok(0)
}

fn cmd_tune(
    support: &Path,
    classtext: &Path,
    test: &Path,
    trace_out: Option<&Path>,
    predictor: &PredictorArgs,
    tuning: &TuningArgs,
) -> Result<i32> {
    let (catalog, support, class_text, test) = load_instance(support, classtext, test)?;
    let config = predictor.build()?;
    let filter = ConfidenceFilter { rho: tuning.rho };
    let (weights, trace) = tune(
        &support,
        &test,
        &class_text,
        &tuning.schedule()?,
        &config,
        filter,
        &tuning.optimizer(),
        tuning.mask(),
    )?;
    match trace_out {
        Some(path) => fs::write(path, trace.to_jsonl())?,
        None => print!("{}", trace.to_jsonl()),
    }
    let (logits, predicted) = final_predict(&support, &test, &weights, &class_text, &config)?;
    let final_loss = full_scale_loss(&support, &test, &class_text, &config, filter, &weights)?;
    let first_loss = trace.records.first().map(|r| r.loss);
    eprintln!(
        "{}",
        serde_json::to_string(&prediction_json(
            &catalog,
            &logits,
            predicted,
            test.ground_truth,
            first_loss,
            Some(final_loss),
        ))?
    );
    Ok(0)
}

fn cmd_eval(config: &Path, out: &Path, parallel: Option<usize>) -> Result<i32> {
    let mut experiment = ExperimentConfig::from_json(
        &fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?,
    )?;
    if let Some(parallel) = parallel {
        experiment.parallelism = parallel;
    }
    let report = eval_dataset(&experiment)?;
    emit_report(&report, out)?;
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    eprintln!(
        "evaluated {} instances in {:.2}s",
        report.summary.instance_count, report.summary.wall_clock_seconds
    );
    Ok(if report.summary.failed_count > 0 { 1 } else { 0 })
}

fn cmd_gradcheck(trials: usize, h: f64, seed: u64, out: Option<&Path>) -> Result<i32> {
    let config = GradcheckConfig {
        trials,
        step: h,
        seed,
        ..GradcheckConfig::default()
    };
    let started = std::time::Instant::now();
    let report = run_gradcheck(&config)?;
    if let Some(path) = out {
        fs::write(path, format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "trials": report.trials,
            "rel_tol": report.rel_tol,
            "abs_floor": report.abs_floor,
            "worst_rel_error": report.worst_rel_error,
            "worst_abs_error": report.worst_abs_error,
            "passed": report.passed,
        }))?
    );
    eprintln!("gradcheck ran in {:.2}s", started.elapsed().as_secs_f64());
    Ok(if report.passed { 0 } else { 1 })
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Synth { config, out, seed } => cmd_synth(config, out, *seed),
        Command::Compose {
            catalog,
            prompts,
            features,
            out,
        } => cmd_compose(catalog, prompts, features, out),
        Command::Stats { support, out } => cmd_stats(support, out.as_deref()),
        Command::Predict {
            support,
            classtext,
            test,
            no_tse,
            predictor,
            tuning,
        } => cmd_predict(support, classtext, test, *no_tse, predictor, tuning),
        Command::Tune {
            support,
            classtext,
            test,
            trace,
            predictor,
            tuning,
        } => cmd_tune(support, classtext, test, trace.as_deref(), predictor, tuning),
        Command::Eval {
            config,
            out,
            parallel,
        } => cmd_eval(config, out, *parallel),
        Command::Gradcheck {
            trials,
            h,
            seed,
            out,
        } => cmd_gradcheck(*trials, *h, *seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
