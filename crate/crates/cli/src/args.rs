use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use drbse::measurement::ResidualScaling;
use drbse::runtime::Method;
use drbse::{Augmentation, EstimatorSettings, Schedule, StopRule};

#[derive(Debug, Parser)]
#[command(name = "drbse", version, about = "Distributed robust bilinear state estimation simulator")]
pub struct Cli {
    /// On failure, print `{"error": {"kind", "message"}}` to stdout.
    #[arg(long, global = true)]
    pub error_json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the distributed estimator and write a report plus residual traces.
    Estimate(EstimateArgs),
    /// Materialize a measurement set as JSON.
    Generate(GenerateArgs),
    /// Monte Carlo sweep over bad-data fractions.
    Sweep(SweepArgs),
    /// Per-bus states of several estimators on one scenario.
    Compare(CompareArgs),
    /// Convert a MATPOWER case file to the canonical JSON case format.
    ConvertCase(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct CaseArgs {
    /// Case JSON file.
    #[arg(long)]
    pub case: PathBuf,
    /// Partition JSON (bus id to area). Defaults to the case's own areas, or
    /// a single area.
    #[arg(long)]
    pub areas: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Seed for noise and bad data.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use a measurement set written by `generate` instead of synthesizing one.
    #[arg(long, conflicts_with_all = ["bad_fraction", "bad_targets", "noiseless", "pmu"])]
    pub measurements: Option<PathBuf>,
    /// Fraction of measurements to corrupt.
    #[arg(long, conflicts_with = "bad_targets")]
    pub bad_fraction: Option<f64>,
    /// Comma-separated measurements to corrupt, e.g. `P_inj(5),V(14),P_flow(5-6)`.
    #[arg(long, value_delimiter = ',')]
    pub bad_targets: Vec<String>,
    /// Bus ids with a PMU angle measurement.
    #[arg(long, value_delimiter = ',')]
    pub pmu: Vec<usize>,
    /// Exact measurements.
    #[arg(long)]
    pub noiseless: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScheduleArg {
    Sequential,
    Reversed,
    Parallel,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScalingArg {
    Raw,
    Sigma,
    SigmaThreshold,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AugmentationArg {
    SharedOnly,
    Identity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StopArg {
    Consensus,
    ConsensusAndDrift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Drbse,
    Rbse,
    Wls,
    WlsLnrt,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Drbse => Method::Drbse,
            MethodArg::Rbse => Method::Rbse,
            MethodArg::Wls => Method::Wls,
            MethodArg::WlsLnrt => Method::WlsLnrt,
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimatorArgs {
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub rho_f: Option<f64>,
    #[arg(long)]
    pub rho_s: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Order in which areas run their local updates within a round.
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    #[arg(long, value_enum)]
    pub scaling: Option<ScalingArg>,
    #[arg(long, value_enum)]
    pub augmentation: Option<AugmentationArg>,
    #[arg(long, value_enum)]
    pub stop: Option<StopArg>,
    /// Local `w`/`o` alternations per round.
    #[arg(long)]
    pub inner_sweeps: Option<usize>,
    /// Run the second stage even if the first did not converge.
    #[arg(long)]
    pub force: bool,
}

impl EstimatorArgs {
    pub fn settings(&self) -> EstimatorSettings {
        let d = EstimatorSettings::default();
        EstimatorSettings {
            lambda: self.lambda.unwrap_or(d.lambda),
            rho_f: self.rho_f.unwrap_or(d.rho_f),
            rho_s: self.rho_s.unwrap_or(d.rho_s),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            schedule: match self.schedule {
                None => d.schedule,
                Some(ScheduleArg::Sequential) => Schedule::Sequential,
                Some(ScheduleArg::Reversed) => Schedule::Reversed,
                Some(ScheduleArg::Parallel) => Schedule::Parallel,
            },
            scaling: match self.scaling {
                None => d.scaling,
                Some(ScalingArg::Raw) => ResidualScaling::Raw,
                Some(ScalingArg::Sigma) => ResidualScaling::Sigma,
                Some(ScalingArg::SigmaThreshold) => ResidualScaling::SigmaThreshold,
            },
            augmentation: match self.augmentation {
                None => d.augmentation,
                Some(AugmentationArg::SharedOnly) => Augmentation::SharedOnly,
                Some(AugmentationArg::Identity) => Augmentation::Identity,
            },
            stop: match self.stop {
                None => d.stop,
                Some(StopArg::Consensus) => StopRule::Consensus,
                Some(StopArg::ConsensusAndDrift) => StopRule::ConsensusAndDrift,
            },
            inner_sweeps: self.inner_sweeps.unwrap_or(d.inner_sweeps),
            force: self.force,
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Directory for `report.json` and the trace CSVs.
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Record wall time in the report. Makes the report non-reproducible.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Output file; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05])]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Master seed; trial seeds are derived from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Drbse, MethodArg::Wls, MethodArg::WlsLnrt])]
    pub methods: Vec<MethodArg>,
    #[arg(long, value_delimiter = ',')]
    pub pmu: Vec<usize>,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Drbse, MethodArg::Rbse, MethodArg::Wls, MethodArg::WlsLnrt])]
    pub methods: Vec<MethodArg>,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// MATPOWER `.m` file.
    pub input: PathBuf,
    /// Output file; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the reference bus (default: the type-3 bus).
    #[arg(long)]
    pub reference: Option<usize>,
}
