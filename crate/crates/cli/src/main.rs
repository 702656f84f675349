mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use psmscan::action_log::LogFormat;
use psmscan::causal::RhoMode;
use psmscan::classify::FeatureScaling;
use psmscan::decay::{Span, WindowGrid};
use psmscan::Metric;

use crate::config::{ClassifierKind, PipelineConfig};

/// Causal and time-decay metrics over action logs, and classifiers built on
/// them, for spotting pathogenic accounts early.
#[derive(Debug, Parser)]
#[command(name = "psmscan", version)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: one per core). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write every artifact and a run manifest here instead of printing the
    /// primary output to stdout.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a log and write it back normalized, plus its cascades.
    Ingest {
        #[command(flatten)]
        log: LogArgs,
        #[command(flatten)]
        cascade: CascadeArgs,
    },
    /// Cascade size and duration distributions as JSON.
    Stats {
        #[command(flatten)]
        log: LogArgs,
        #[command(flatten)]
        cascade: CascadeArgs,
    },
    /// Per-user causality scores.
    Metrics {
        #[command(flatten)]
        log: LogArgs,
        #[command(flatten)]
        cascade: CascadeArgs,
        #[command(flatten)]
        interval: IntervalArgs,
    },
    /// Per-user time-decayed causality scores.
    Decay {
        #[command(flatten)]
        log: LogArgs,
        #[command(flatten)]
        cascade: CascadeArgs,
        #[command(flatten)]
        interval: IntervalArgs,
        #[command(flatten)]
        decay: DecayArgs,
    },
    /// Co-posting graph as an edge list.
    Graph {
        #[command(flatten)]
        log: LogArgs,
    },
    /// Louvain partition of the co-posting graph.
    Communities {
        #[command(flatten)]
        log: LogArgs,
        #[command(flatten)]
        louvain: LouvainArgs,
    },
    /// Predict labels from score vectors. With labels, labeled users get
    /// out-of-fold predictions and unlabeled users are scored against all
    /// labeled ones.
    Classify {
        #[arg(value_enum)]
        kind: ClassifierKind,
        #[command(flatten)]
        log: LogArgs,
        /// Vectors written by `metrics` or `decay`.
        #[arg(long)]
        vectors: PathBuf,
        /// `user_id,label` ground truth; required for knn and c2dc.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        classify: ClassifyArgs,
        #[command(flatten)]
        louvain: LouvainArgs,
        #[command(flatten)]
        folds: FoldArgs,
    },
    /// Score a predictions file against ground truth.
    Evaluate {
        #[command(flatten)]
        log: LogArgs,
        /// `user_id,predicted,score,provenance`, ours or external.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// How quickly first-period PSMs are caught by periodic re-evaluation.
    Timeline {
        #[command(flatten)]
        log: LogArgs,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum, default_value = "c2dc")]
        classifier: ClassifierKind,
        /// Length of one evaluation period.
        #[arg(long)]
        period: Option<Span>,
        #[command(flatten)]
        cascade: CascadeArgs,
        #[command(flatten)]
        decay: DecayArgs,
        #[command(flatten)]
        classify: ClassifyArgs,
        #[command(flatten)]
        louvain: LouvainArgs,
    },
    /// Generate a log with planted PSM accounts and its labels.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        messages: Option<usize>,
        /// How strongly PSMs post early in cascades; 0 plants no signal.
        #[arg(long)]
        psm_early_bias: Option<f64>,
        #[arg(long, default_value = "csv")]
        format: LogFormat,
    },
    /// One-sided test that score vectors are closer within communities.
    Ttest {
        #[command(flatten)]
        log: LogArgs,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        /// Seeds the choice of outside-community partners.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        louvain: LouvainArgs,
    },
}

#[derive(Debug, Args)]
pub struct LogArgs {
    /// Action log, CSV or JSONL.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Defaults to the file extension, then CSV.
    #[arg(long)]
    pub format: Option<LogFormat>,
    /// Keep repeated (user, message) pairs instead of the earliest one.
    #[arg(long)]
    pub no_dedup: bool,
}

#[derive(Debug, Args)]
pub struct CascadeArgs {
    /// Viral threshold on cascade size.
    #[arg(long)]
    theta: Option<u32>,
    /// Fraction of a cascade a key user must precede.
    #[arg(long)]
    phi: Option<f64>,
    /// Prior virality: `computed` or a number.
    #[arg(long)]
    rho: Option<RhoMode>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IntervalArgs {
    /// Interval start; epoch seconds or RFC 3339. Defaults to the first action.
    #[arg(long)]
    pub start: Option<String>,
    /// Interval end. Defaults to the last action.
    #[arg(long)]
    pub end: Option<String>,
}

#[derive(Debug, Args)]
pub struct DecayArgs {
    /// Window length, e.g. `5d`, `12h`, `3600`.
    #[arg(long)]
    delta: Option<Span>,
    /// Decay rate per day.
    #[arg(long)]
    sigma: Option<f64>,
    /// Also use the window ending at the interval end.
    #[arg(long)]
    include_final: bool,
}

#[derive(Debug, Args)]
pub struct LouvainArgs {
    #[arg(long)]
    louvain_seed: Option<u64>,
    /// Weight edges by the number of shared messages.
    #[arg(long)]
    weighted: bool,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Neighbours for knn and c2dc.
    #[arg(long)]
    k: Option<usize>,
    /// Score used by the threshold classifier.
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    scaling: Option<FeatureScaling>,
}

#[derive(Debug, Args)]
pub struct FoldArgs {
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    fold_seed: Option<u64>,
}

impl CascadeArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.cascade.theta, self.theta);
        set(&mut cfg.cascade.phi, self.phi);
        set(&mut cfg.causal.rho, self.rho);
        set(&mut cfg.causal.alpha, self.alpha);
    }
}

impl DecayArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.decay.delta, self.delta);
        set(&mut cfg.decay.sigma, self.sigma);
        if self.include_final {
            cfg.decay.grid = WindowGrid::IncludeFinal;
        }
    }
}

impl LouvainArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.louvain.seed, self.louvain_seed);
        cfg.louvain.weighted |= self.weighted;
    }
}

impl ClassifyArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.classify.k, self.k);
        set(&mut cfg.classify.metric, self.metric);
        set(&mut cfg.classify.scaling, self.scaling);
    }
}

impl FoldArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.evaluate.folds, self.folds);
        set(&mut cfg.evaluate.seed, self.fold_seed);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Stats { .. } => "stats",
            Command::Metrics { .. } => "metrics",
            Command::Decay { .. } => "decay",
            Command::Graph { .. } => "graph",
            Command::Communities { .. } => "communities",
            Command::Classify { .. } => "classify",
            Command::Evaluate { .. } => "evaluate",
            Command::Timeline { .. } => "timeline",
            Command::Synth { .. } => "synth",
            Command::Ttest { .. } => "ttest",
        }
    }

    /// Applies this command's flags on top of the file configuration.
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(log) = self.log_args() {
            cfg.input.dedup &= !log.no_dedup;
        }
        match self {
            Command::Ingest { cascade, .. } | Command::Stats { cascade, .. } | Command::Metrics { cascade, .. } => {
                cascade.apply(cfg)
            }
            Command::Decay { cascade, decay, .. } => {
                cascade.apply(cfg);
                decay.apply(cfg);
            }
            Command::Graph { .. } | Command::Evaluate { .. } => {}
            Command::Communities { louvain, .. } => louvain.apply(cfg),
            Command::Classify {
                classify,
                louvain,
                folds,
                ..
            } => {
                classify.apply(cfg);
                louvain.apply(cfg);
                folds.apply(cfg);
            }
            Command::Timeline {
                period,
                cascade,
                decay,
                classify,
                louvain,
                ..
            } => {
                set(&mut cfg.timeline.period, *period);
                cascade.apply(cfg);
                decay.apply(cfg);
                classify.apply(cfg);
                louvain.apply(cfg);
            }
            Command::Synth {
                seed,
                users,
                messages,
                psm_early_bias,
                ..
            } => {
                set(&mut cfg.synth.seed, *seed);
                set(&mut cfg.synth.n_users, *users);
                set(&mut cfg.synth.n_messages, *messages);
                set(&mut cfg.synth.psm_early_bias, *psm_early_bias);
            }
            Command::Ttest {
                alpha, seed, louvain, ..
            } => {
                set(&mut cfg.ttest.alpha, *alpha);
                set(&mut cfg.ttest.seed, *seed);
                louvain.apply(cfg);
            }
        }
    }

    fn log_args(&self) -> Option<&LogArgs> {
        match self {
            Command::Ingest { log, .. }
            | Command::Stats { log, .. }
            | Command::Metrics { log, .. }
            | Command::Decay { log, .. }
            | Command::Graph { log }
            | Command::Communities { log, .. }
            | Command::Classify { log, .. }
            | Command::Evaluate { log, .. }
            | Command::Timeline { log, .. }
            | Command::Ttest { log, .. } => Some(log),
            Command::Synth { .. } => None,
        }
    }

    /// Every file the command reads.
    fn inputs(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = self.log_args().map(|l| l.input.as_path()).into_iter().collect();
        match self {
            Command::Classify { vectors, labels, .. } => {
                out.push(vectors);
                out.extend(labels.as_deref());
            }
            Command::Evaluate {
                predictions, labels, ..
            } => out.extend([predictions.as_path(), labels.as_path()]),
            Command::Timeline { labels, .. } => out.push(labels),
            Command::Ttest { vectors, .. } => out.push(vectors),
            _ => {}
        }
        out
    }
}

/// Failure classes with their exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Missing or unusable invocation inputs.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Failed(#[from] anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Failed(_) => "validation",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(missing) = cli.command.inputs().into_iter().find(|p| !p.is_file()) {
        return Err(CliError::Usage(format!("input file not found: {}", missing.display())));
    }
    if let Command::Classify {
        kind: kind @ (ClassifierKind::Knn | ClassifierKind::C2dc),
        labels: None,
        ..
    } = &cli.command
    {
        return Err(CliError::Usage(
            format!("classify {kind:?} needs --labels to train on").to_lowercase(),
        ));
    }
    let mut config = match &cli.config {
        Some(path) if !path.is_file() => {
            return Err(CliError::Usage(format!("config file not found: {}", path.display())));
        }
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cli.command.apply(&mut config);
    config.validate()?;

    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(anyhow::Error::from)?;
    }
    log::info!(
        "{} with config sha256 {} on {} worker thread(s)",
        cli.command.name(),
        config.hash(),
        rayon::current_num_threads()
    );
    log::info!("effective config:\n{}", config.to_toml());

    let sink = output::Sink::new(cli.output_dir.clone())?;
    commands::execute(&cli.command, &config, sink)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = match &e {
                CliError::Failed(inner) => format!("{inner:#}"),
                other => other.to_string(),
            };
            let report = serde_json::json!({ "error": e.kind(), "message": message });
            eprintln!("{report}");
            ExitCode::from(e.exit_code())
        }
    }
}
