use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use autolabel::dataset::{self, load_bundle, read_matrix, save_bundle, DatasetBundle};
use autolabel::discovery::{AttributeProfile, Discovery};
use autolabel::metrics;
use autolabel::pipeline::{self, PipelineConfig, Strategy};
use autolabel::pseudolabel::{self, PseudoLabelSet};
use autolabel::synth::{self, GroundTruth, SynthConfig};
use autolabel::zeroshot::{self, ExtendedLabelSet};
use autolabel::adapter::{AdapterMetadata, TrainConfig};
use autolabel::clustering::ClusterModel;

const COMPARISON_FILE: &str = "comparison.json";

#[derive(Parser)]
#[command(name = "autolabel", version, about = "Open-set label discovery over embedding bundles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bundle and its ground truth.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Cluster the target videos into clusters.json.
    Cluster(Stage),
    /// Build candidate labels from clusters.json.
    Discover(Stage),
    /// Prune candidates against the source classes into label_set.json.
    Match(Stage),
    /// Classify target videos into predictions.jsonl.
    Predict {
        #[command(flatten)]
        stage: Stage,
        /// ALEB matrix replacing the private candidate embeddings, one row
        /// per candidate in label_set.json order.
        #[arg(long)]
        candidate_embeddings: Option<PathBuf>,
    },
    /// Select confident predictions into pseudolabels.json.
    Pseudolabel(Stage),
    /// Train the adapter on sources and pseudo-labels.
    Train(Stage),
    /// Score predictions.jsonl into metrics.json.
    Evaluate(Stage),
    /// Run every stage for all outer epochs.
    Pipeline(Stage),
    /// Run all rejection strategies and tabulate them.
    Compare(Stage),
}

#[derive(Args)]
struct Stage {
    /// Bundle directory.
    #[arg(long)]
    bundle: PathBuf,
    /// Directory for this stage's artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Directory holding earlier stages' artifacts; defaults to --out.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Pipeline configuration JSON; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground-truth file; defaults to ground_truth.json in the bundle.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Adapter checkpoint directory to apply to target embeddings.
    #[arg(long)]
    adapter: Option<PathBuf>,
    #[command(flatten)]
    flags: Overrides,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    argtop_k: Option<usize>,
    #[arg(long)]
    tfidf_threshold: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    pseudo_percent: Option<f64>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long)]
    rejection_threshold: Option<f64>,
    #[arg(long)]
    epochs_outer: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    no_train: bool,
    #[arg(long)]
    include_source_batches: Option<bool>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::ALL
        .into_iter()
        .find(|st| st.name() == s)
        .ok_or_else(|| format!("unknown strategy `{s}`; expected autolabel, threshold, instance-extension or oracle"))
}

impl Overrides {
    fn apply(&self, c: &mut PipelineConfig) {
        if self.clusters.is_some() {
            c.clusters = self.clusters;
        }
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set! {
            m => c.m,
            t => c.t,
            argtop_k => c.argtop_k,
            tfidf_threshold => c.tfidf_threshold,
            gamma => c.gamma,
            temperature => c.temperature,
            pseudo_percent => c.pseudo_percent,
            strategy => c.strategy,
            rejection_threshold => c.rejection_threshold,
            epochs_outer => c.epochs_outer,
            seed => c.seed,
            max_iter => c.max_iter,
            include_source_batches => c.include_source_batches,
            learning_rate => c.train.learning_rate,
            epochs => c.train.epochs,
            batch_size => c.train.batch_size,
        }
        if let Some(t) = self.temperature {
            c.train.temperature = t;
        }
        c.no_train |= self.no_train;
    }
}

struct Inputs {
    bundle: DatasetBundle,
    config: PipelineConfig,
    truth: Option<GroundTruth>,
    input: PathBuf,
    out: PathBuf,
}

impl Stage {
    fn load(&self) -> Result<Inputs> {
        let mut config = match &self.config {
            Some(path) => pipeline::read_json(path)?,
            None => PipelineConfig::default(),
        };
        self.flags.apply(&mut config);
        config.validate()?;
        let bundle = load_bundle(&self.bundle)?;
        let truth_path = self
            .ground_truth
            .clone()
            .unwrap_or_else(|| self.bundle.join(synth::GROUND_TRUTH_FILE));
        let truth = if truth_path.exists() {
            Some(GroundTruth::load(&truth_path)?)
        } else {
            None
        };
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(Inputs {
            bundle,
            config,
            truth,
            input: self.input.clone().unwrap_or_else(|| self.out.clone()),
            out: self.out.clone(),
        })
    }
}

impl Inputs {
    fn embeddings(&self, adapter: Option<&Path>) -> Result<Vec<Vec<f64>>> {
        let params = pipeline::load_adapter(adapter, self.bundle.dim)?;
        Ok(pipeline::target_embeddings(&self.bundle, Some(&params))?)
    }
}

fn run_synth(config: Option<&Path>, out: &Path, seed: Option<u64>, noise: Option<f64>) -> Result<()> {
    let mut cfg: SynthConfig = match config {
        Some(path) => pipeline::read_json(path)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = noise {
        cfg.noise = n;
    }
    let (bundle, truth) = synth::generate(&cfg)?;
    save_bundle(&bundle, out)?;
    truth.save(out.join(synth::GROUND_TRUTH_FILE))?;
    println!(
        "wrote {} videos ({} shared, {} private classes) to {}",
        bundle.videos.len(),
        cfg.shared_classes,
        cfg.private_classes,
        out.display()
    );
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            config,
            out,
            seed,
            noise,
        } => run_synth(config.as_deref(), &out, seed, noise),
        Command::Cluster(stage) => {
            let ctx = stage.load()?;
            let embeddings = ctx.embeddings(stage.adapter.as_deref())?;
            let model = pipeline::cluster_targets(
                &embeddings,
                ctx.config.num_clusters(&ctx.bundle),
                ctx.config.seed,
                ctx.config.max_iter,
            )?;
            pipeline::write_json(&ctx.out.join(pipeline::CLUSTERS_FILE), &model)?;
            println!("{} clusters, inertia {:.6}, {} iterations", model.num_clusters(), model.inertia, model.iterations_run);
            Ok(())
        }
        Command::Discover(stage) => {
            let ctx = stage.load()?;
            let model: ClusterModel = pipeline::read_json(&ctx.input.join(pipeline::CLUSTERS_FILE))?;
            let (found, sources) = pipeline::discover(&ctx.bundle, &model, &ctx.config.discovery())?;
            pipeline::write_json(&ctx.out.join(pipeline::CANDIDATES_FILE), &found)?;
            pipeline::write_json(&ctx.out.join(pipeline::SOURCE_PROFILES_FILE), &sources)?;
            for c in &found.candidates {
                println!("cluster {:>3}: {}", c.source_cluster, c.name);
            }
            Ok(())
        }
        Command::Match(stage) => {
            let ctx = stage.load()?;
            let found: Discovery = pipeline::read_json(&ctx.input.join(pipeline::CANDIDATES_FILE))?;
            let sources: Vec<AttributeProfile> = pipeline::read_json(&ctx.input.join(pipeline::SOURCE_PROFILES_FILE))?;
            let (matched, labels) =
                pipeline::match_candidates(&ctx.bundle, &found, &sources, ctx.config.gamma, ctx.config.temperature)?;
            pipeline::write_json(&ctx.out.join(pipeline::MATCHES_FILE), &matched)?;
            pipeline::write_json(&ctx.out.join(pipeline::LABEL_SET_FILE), &labels)?;
            println!(
                "{} of {} candidates survive at gamma {}",
                matched.outcome.survivors.len(),
                found.candidates.len(),
                ctx.config.gamma
            );
            Ok(())
        }
        Command::Predict {
            stage,
            candidate_embeddings,
        } => {
            let ctx = stage.load()?;
            let shared = ExtendedLabelSet::shared_only(&ctx.bundle, ctx.config.temperature)?;
            let mut labels = match ctx.config.strategy {
                Strategy::Autolabel => pipeline::read_json(&ctx.input.join(pipeline::LABEL_SET_FILE))?,
                Strategy::Oracle => zeroshot::oracle_extend(&shared, ctx.truth.as_ref())?,
                Strategy::Threshold | Strategy::InstanceExtension => shared,
            };
            if let Some(path) = &candidate_embeddings {
                labels.override_private_embeddings(&read_matrix(path)?)?;
            }
            let embeddings = ctx.embeddings(stage.adapter.as_deref())?;
            let predictions =
                pipeline::predict_targets(&ctx.bundle, &embeddings, &labels, ctx.config.strategy, &ctx.config)?;
            pipeline::write_json(&ctx.out.join(pipeline::LABEL_SET_FILE), &labels)?;
            pipeline::write_predictions(&ctx.out.join(pipeline::PREDICTIONS_FILE), &predictions)?;
            let private = predictions.iter().filter(|p| p.is_private).count();
            println!("{} predictions, {} rejected as unknown", predictions.len(), private);
            Ok(())
        }
        Command::Pseudolabel(stage) => {
            let ctx = stage.load()?;
            let predictions = pipeline::read_predictions(&ctx.input.join(pipeline::PREDICTIONS_FILE))?;
            let set = pseudolabel::select_pseudo_labels(&predictions, ctx.config.pseudo_percent)?;
            pipeline::write_json(&ctx.out.join(pipeline::PSEUDO_LABELS_FILE), &set)?;
            println!("{} pseudo-labels kept", set.pairs.len());
            Ok(())
        }
        Command::Train(stage) => {
            let ctx = stage.load()?;
            let pseudo: PseudoLabelSet = pipeline::read_json(&ctx.input.join(pipeline::PSEUDO_LABELS_FILE))?;
            let labels: ExtendedLabelSet = pipeline::read_json(&ctx.input.join(pipeline::LABEL_SET_FILE))?;
            let init = pipeline::load_adapter(stage.adapter.as_deref(), ctx.bundle.dim)?;
            let pairs = pipeline::training_pairs(&ctx.bundle, &pseudo, &labels, ctx.config.include_source_batches)?;
            let train = TrainConfig {
                seed: ctx.config.seed,
                ..ctx.config.train
            };
            let (params, trace) = pipeline::train_adapter(&init, &pairs, &labels, &train)?;
            let meta = AdapterMetadata {
                dim: ctx.bundle.dim,
                config: train,
                loss_trace: trace.clone(),
            };
            params.save(&ctx.out, &meta)?;
            println!(
                "{} pairs, loss {:.4} -> {:.4}",
                pairs.len(),
                trace.first().copied().unwrap_or(f64::NAN),
                trace.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Evaluate(stage) => {
            let ctx = stage.load()?;
            let predictions = pipeline::read_predictions(&ctx.input.join(pipeline::PREDICTIONS_FILE))?;
            let truth = pipeline::evaluation_truth(&ctx.bundle, ctx.truth.as_ref())
                .ok_or(autolabel::Error::GroundTruthUnavailable)?;
            let m = metrics::evaluate(&predictions, &truth, &ctx.bundle.shared_label_names())?;
            pipeline::write_json(&ctx.out.join(pipeline::METRICS_FILE), &m)?;
            print!("{}", metrics::format_table(&[(ctx.config.strategy.name().to_string(), Some(m))]));
            Ok(())
        }
        Command::Pipeline(stage) => {
            let ctx = stage.load()?;
            let report = pipeline::run_pipeline(&ctx.bundle, ctx.truth.as_ref(), &ctx.config, Some(&ctx.out))?;
            let row = (ctx.config.strategy.name().to_string(), report.metrics);
            print!("{}", metrics::format_table(&[row]));
            Ok(())
        }
        Command::Compare(stage) => {
            let ctx = stage.load()?;
            let rows = pipeline::compare_strategies(&ctx.bundle, ctx.truth.as_ref(), &ctx.config)?;
            pipeline::write_json(&ctx.out.join(COMPARISON_FILE), &rows)?;
            print!("{}", metrics::format_table(&rows));
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|cause| {
        cause
            .downcast_ref::<autolabel::Error>()
            .map(autolabel::Error::is_validation)
            .or_else(|| cause.downcast_ref::<dataset::BundleError>().map(|e| !matches!(e, dataset::BundleError::Io { .. })))
            .unwrap_or(false)
    });
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
