//! Command-line surface: configuration, IQ files, reports and the four
//! subcommands (`run`, `sweep`, `replay`, `analyze`).
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

pub mod config;
pub mod iq;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::metrics::{self, PowerStats, SnrMode};
use crate::receiver::{self, ReceiverConfig, ReceiverProfile};
use crate::scenario::{self, ExperimentTemplate, SweepSpec};
use crate::{Error, Result};
use config::{Format, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "replay-testbed", version, about = "Record/replay attack testbed for QPSK space links")]
pub struct Cli {
    /// Worker threads for grid jobs (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Baseline,
    Hardened,
}

impl From<ProfileArg> for ReceiverProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Baseline => ReceiverProfile::Baseline,
            ProfileArg::Hardened => ReceiverProfile::Hardened,
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report formats, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub format: Option<Vec<FormatArg>>,
    /// Receiver profile (overrides the config).
    #[arg(long, value_enum)]
    pub receiver: Option<ProfileArg>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and report it against its no-attacker reference.
    Run(Common),
    /// Run the config's experiment sweep.
    Sweep(Common),
    /// Two-stage attacker workflow through files.
    Replay {
        #[command(subcommand)]
        stage: ReplayStage,
    },
    /// Recompute receiver metrics from a stored IQ file.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Subcommand)]
pub enum ReplayStage {
    /// Stage 1: record the source transmission at the attacker.
    Capture(Common),
    /// Stage 2: replay a stored capture into the victim's input.
    Inject {
        #[command(flatten)]
        common: Common,
        /// Capture written by `replay capture`.
        #[arg(long)]
        capture: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// IQ data file (sidecar alongside).
    #[arg(long)]
    pub input: PathBuf,
    /// Config supplying payload and modem settings; presets otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sample rate when the sidecar is missing.
    #[arg(long)]
    pub sample_rate: Option<f64>,
    /// Known legitimate-path delay in samples (Baseline sampling offset).
    #[arg(long)]
    pub delay_samples: Option<f64>,
    #[arg(long, value_enum, default_value = "hardened")]
    pub receiver: ProfileArg,
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = config::load_config(&common.config, common.seed)?;
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(f) = &common.format {
        cfg.formats = f
            .iter()
            .map(|f| match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            })
            .collect();
    }
    if let Some(r) = common.receiver {
        cfg.receiver = r.into();
    }
    Ok(cfg)
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn cmd_run(common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    let sweep = SweepSpec {
        template: ExperimentTemplate::OutputGain,
        grid: vec![cfg.scenario.attacker.output_gain_db],
        base: cfg.scenario.clone(),
        receiver: cfg.receiver,
        seeds: 1,
    };
    let report = scenario::run_experiment(&sweep)?;
    print_paths(&report::emit_report(&report, &cfg.out_dir, "run", &cfg.formats)?);
    Ok(())
}

fn template_stem(t: ExperimentTemplate) -> &'static str {
    match t {
        ExperimentTemplate::OutputGain => "output_gain",
        ExperimentTemplate::InputGain => "input_gain",
        ExperimentTemplate::LegitGain => "legit_gain",
    }
}

fn cmd_sweep(common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    let sweep = cfg.sweep_spec()?;
    let report = scenario::run_experiment(&sweep)?;
    let stem = template_stem(sweep.template);
    print_paths(&report::emit_report(&report, &cfg.out_dir, stem, &cfg.formats)?);
    Ok(())
}

fn cmd_capture(common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    let tx = cfg.scenario.transmit()?;
    let capture = scenario::stage1_capture(&cfg.scenario, &tx)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let path = cfg.out_dir.join("capture.cf32");
    let desc = format!(
        "stage-1 capture, {} {} at {} dB output gain",
        cfg.scenario.phase, cfg.scenario.attacker.kind, cfg.scenario.attacker.output_gain_db
    );
    iq::write_iq(&path, &capture, &desc, Some(cfg.seed))?;
    println!("{}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct Analysis {
    receiver: ReceiverProfile,
    ber: Option<f64>,
    bits: usize,
    snr_db: Option<f64>,
    snr_mode: Option<SnrMode>,
    lock: bool,
    selected_phase_branch: usize,
    coarse_cfo_hz: f64,
    power: Option<PowerStats>,
}

fn analyze_buffer(
    buf: &crate::IqBuffer,
    spec: &scenario::ScenarioSpec,
    profile: ReceiverProfile,
    delay: Option<f64>,
) -> Result<Analysis> {
    let mut rx_cfg = ReceiverConfig::for_profile(profile);
    if let (ReceiverProfile::Baseline, Some(d)) = (profile, delay) {
        rx_cfg = rx_cfg.with_known_offset(d);
    }
    let truth = spec.payload();
    let rx = receiver::receive(buf, &rx_cfg, &spec.modem, Some(&truth))?;
    let power = metrics::digital_power(buf, metrics::DEFAULT_POWER_WINDOW)?;
    let mean = buf.mean_power();
    let norm: Vec<f64> = power.iter().map(|p| if mean > 0.0 { p / mean } else { *p }).collect();
    Ok(Analysis {
        receiver: profile,
        ber: rx.ber(),
        bits: rx.alignment.map_or(0, |a| a.total),
        snr_db: rx.snr.map(|s| s.db),
        snr_mode: rx.snr.map(|s| s.mode),
        lock: rx.diagnostics.lock_flag,
        selected_phase_branch: rx.diagnostics.selected_phase_branch,
        coarse_cfo_hz: rx.diagnostics.coarse_cfo_hz,
        power: metrics::boxplot_stats(&norm).ok(),
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn cmd_inject(common: &Common, capture_path: &Path) -> Result<()> {
    let cfg = resolve(common)?;
    let spec = &cfg.scenario;
    let (capture, _) = iq::read_iq(capture_path, Some(spec.modem.sample_rate))?;
    if capture.sample_rate() != spec.modem.sample_rate {
        return Err(Error::SampleRateMismatch(capture.sample_rate(), spec.modem.sample_rate));
    }
    let tx = spec.transmit()?;
    let victim = scenario::stage2_compose(spec, &tx, Some(&capture))?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let path = cfg.out_dir.join("victim.cf32");
    iq::write_iq(&path, &victim, &format!("stage-2 composite at {}", spec.phase.links().victim), Some(cfg.seed))?;
    let legit = spec.geometry.distance(spec.phase, spec.phase.legit_link())?;
    let delay = scenario::propagation_delay(legit) * spec.modem.sample_rate;
    let analysis = analyze_buffer(&victim, spec, cfg.receiver, Some(delay))?;
    let summary = cfg.out_dir.join("victim_analysis.json");
    write_json(&summary, &analysis)?;
    println!("{}", path.display());
    println!("{}", summary.display());
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let spec = match &args.config {
        Some(p) => config::load_config(p, Some(0))?.scenario,
        None => scenario::ScenarioSpec::preset(
            scenario::Phase::ReentryDl,
            scenario::PlatformKind::None,
            0,
        ),
    };
    let (buf, _) = iq::read_iq(&args.input, args.sample_rate)?;
    let analysis = analyze_buffer(&buf, &spec, args.receiver.into(), args.delay_samples)?;
    let text = serde_json::to_string_pretty(&analysis).map_err(|e| Error::Serialize(e.to_string()))?;
    println!("{text}");
    Ok(())
}

/// Execute a parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        // a second initialization (e.g. from tests) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Replay { stage } => match stage {
            ReplayStage::Capture(c) => cmd_capture(c),
            ReplayStage::Inject { common, capture } => cmd_inject(common, capture),
        },
        Command::Analyze(a) => cmd_analyze(a),
    }
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "seed = 1\npreset = \"reentry_dl\"\nattakcer = 1\n").unwrap();
        assert_eq!(
            run_cli(["replay-testbed", "run", "--config", bad.to_str().unwrap()]),
            EXIT_CONFIG
        );
        assert_eq!(run_cli(["replay-testbed", "bogus"]), EXIT_CONFIG);
        let missing = dir.path().join("nope.toml");
        assert_eq!(
            run_cli(["replay-testbed", "run", "--config", missing.to_str().unwrap()]),
            EXIT_RUNTIME
        );
        let iq = dir.path().join("x.cf32");
        std::fs::write(&iq, [0u8; 6]).unwrap();
        assert_eq!(
            run_cli(["replay-testbed", "analyze", "--input", iq.to_str().unwrap(), "--sample-rate", "250000"]),
            EXIT_RUNTIME
        );
    }

    #[test]
    fn sweep_without_section_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("c.toml");
        std::fs::write(&c, "seed = 1\npreset = \"reentry_dl\"\n").unwrap();
        assert_eq!(
            run_cli(["replay-testbed", "sweep", "--config", c.to_str().unwrap()]),
            EXIT_CONFIG
        );
    }
}
