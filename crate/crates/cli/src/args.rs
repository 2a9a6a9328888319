use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "dxtext",
    version,
    about = "Metric-DP text randomization, amplification and privacy analysis"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct GlobalArgs {
    /// Embedding file (text or binary cache).
    #[arg(long, global = true, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,

    /// Root seed [default: 0, or the seed in a pipeline config].
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output format; each subcommand has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Suppress informational messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Tsv,
    Text,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Randomize a whitespace-tokenized text stream word by word.
    Perturb(PerturbArgs),
    /// Estimate the transition matrix Pr[M(w) = w'].
    Matrix(MatrixArgs),
    /// Plausible-deniability statistics per word.
    Stats(StatsArgs),
    /// Check the metric-DP ratio on a transition matrix.
    #[command(name = "verify-dp")]
    VerifyDp(VerifyArgs),
    /// Simulate the Bayes-optimal inference attack.
    Attack(AttackArgs),
    /// Local, smooth and global sensitivity of the vocabulary.
    Sensitivity(SensitivityArgs),
    /// Run the localizer / amplifier / curator protocol.
    Pipeline(PipelineArgs),
    /// Convert a text embedding file to the binary cache.
    Ingest(IngestArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum MechanismName {
    Baseline,
    Density,
    Smooth,
    TruncDistance,
    TruncKnn,
}

impl MechanismName {
    pub fn tag(self) -> &'static str {
        match self {
            MechanismName::Baseline => "baseline",
            MechanismName::Density => "density",
            MechanismName::Smooth => "smooth",
            MechanismName::TruncDistance => "trunc_distance",
            MechanismName::TruncKnn => "trunc_knn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyName {
    Project,
    Residual,
}

/// Mechanism selection. Flags override keys of the `--config` file.
#[derive(Args, Debug, Default, Clone)]
pub struct MechanismArgs {
    /// Mechanism descriptor (JSON, or TOML by extension). A pipeline config
    /// is accepted too; its `mechanism` table is used.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub mechanism: Option<MechanismName>,

    #[arg(long)]
    pub epsilon: Option<f64>,

    /// Smoothness parameter (smooth).
    #[arg(long)]
    pub beta: Option<f64>,

    /// Truncation radius (trunc_distance).
    #[arg(long)]
    pub tau: Option<f64>,

    /// Handling of the mass outside tau (trunc_distance).
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyName>,

    /// Neighbour count (trunc_knn).
    #[arg(long)]
    pub k: Option<usize>,

    /// Laplace jitter scale on k (trunc_knn).
    #[arg(long)]
    pub k_jitter: Option<f64>,

    /// KDE bandwidth (density).
    #[arg(long)]
    pub sigma: Option<f64>,

    /// MH burn-in steps (density).
    #[arg(long)]
    pub burn_in: Option<usize>,

    /// MH thinning (density).
    #[arg(long)]
    pub thin: Option<usize>,

    /// MH proposal scale (density).
    #[arg(long)]
    pub proposal_step: Option<f64>,
}

impl MechanismArgs {
    pub fn is_empty(&self) -> bool {
        self.config.is_none()
            && self.mechanism.is_none()
            && self.epsilon.is_none()
            && self.beta.is_none()
            && self.tau.is_none()
            && self.strategy.is_none()
            && self.k.is_none()
            && self.k_jitter.is_none()
            && self.sigma.is_none()
            && self.burn_in.is_none()
            && self.thin.is_none()
            && self.proposal_step.is_none()
    }
}

#[derive(Args, Debug)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub mech: MechanismArgs,

    /// Input text [default: stdin].
    #[arg(long, short)]
    pub input: Option<PathBuf>,

    /// Output file [default: stdout].
    #[arg(long, short)]
    pub output: Option<PathBuf>,

    /// Pass out-of-vocabulary tokens through unchanged instead of failing.
    #[arg(long)]
    pub skip_oov: bool,

    /// Sample from a precomputed transition matrix instead of running the
    /// mechanism.
    #[arg(long, value_name = "TSV")]
    pub matrix: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MatrixArgs {
    #[command(flatten)]
    pub mech: MechanismArgs,

    /// Draws per row.
    #[arg(long, default_value_t = 10_000)]
    pub samples: u64,

    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub mech: MechanismArgs,

    /// Words to measure (comma separated) [default: whole vocabulary].
    #[arg(long, value_delimiter = ',')]
    pub words: Vec<String>,

    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,

    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub mech: MechanismArgs,

    /// Matrix to check; built from the mechanism when absent.
    #[arg(long, value_name = "TSV")]
    pub matrix: Option<PathBuf>,

    /// Draws per row when building the matrix.
    #[arg(long, default_value_t = 100_000)]
    pub samples: u64,

    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[command(flatten)]
    pub mech: MechanismArgs,

    /// Attacker's model of the mechanism; built from the mechanism when
    /// absent. With no mechanism flags the trials also sample from it.
    #[arg(long, value_name = "TSV")]
    pub matrix: Option<PathBuf>,

    /// Draws per row when building the attacker's matrix.
    #[arg(long, default_value_t = 100_000)]
    pub samples: u64,

    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,

    /// Prior as `word<TAB>weight` lines [default: uniform].
    #[arg(long, value_name = "TSV")]
    pub prior: Option<PathBuf>,

    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub beta: f64,

    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    /// Protocol config (JSON, or TOML by extension).
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,

    #[arg(long)]
    pub n_users: Option<usize>,

    #[arg(long)]
    pub m_per_user: Option<usize>,

    #[command(flatten)]
    pub mech: PipelineMechanismArgs,

    /// Report file [default: stdout].
    #[arg(long, short)]
    pub output: Option<PathBuf>,

    /// Also write the amplified messages as JSON lines.
    #[arg(long, value_name = "FILE")]
    pub dump_messages: Option<PathBuf>,
}

/// Mechanism overrides for the pipeline; the config file is the protocol
/// config itself.
#[derive(Args, Debug)]
pub struct PipelineMechanismArgs {
    #[arg(long, value_enum)]
    pub mechanism: Option<MechanismName>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyName>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub k_jitter: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub proposal_step: Option<f64>,
}

impl PipelineMechanismArgs {
    pub fn as_mechanism_args(&self) -> MechanismArgs {
        MechanismArgs {
            config: None,
            mechanism: self.mechanism,
            epsilon: self.epsilon,
            beta: self.beta,
            tau: self.tau,
            strategy: self.strategy,
            k: self.k,
            k_jitter: self.k_jitter,
            sigma: self.sigma,
            burn_in: self.burn_in,
            thin: self.thin,
            proposal_step: self.proposal_step,
        }
    }
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Text embedding file.
    #[arg(long, short)]
    pub input: PathBuf,

    /// Binary cache to write.
    #[arg(long, short)]
    pub output: PathBuf,

    /// Reject input whose dimension differs.
    #[arg(long)]
    pub dim: Option<usize>,

    /// Scale vectors to unit length.
    #[arg(long)]
    pub normalize: bool,
}
