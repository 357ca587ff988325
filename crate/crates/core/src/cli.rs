//! Command-line front end and the extraction pipeline it drives.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::connectivity::{connectivity_all_bands, ConnectivityMatrix, ConnectivityParams, Measure};
use crate::error::{Context, Error, Result};
use crate::filterbank::{apply_filterbank, canonical_bank, tap_count, BandDefinition, SegmentInfo};
use crate::matrix::SquareMatrix;
use crate::metrics::{
    concentrativeness, error_report, mcnemar, read_predictions, wilcoxon_one_sample, GroupBy,
    MetricsError, PredictionRecord, ValencePairSet, ValenceSide, WilcoxonMethod,
};
use crate::ordering::{
    data_order, greedy_dist_order, greedy_dist_restr_order, read_order, read_order_file,
    write_order, DisparityMode, ElectrodeOrder, OrderingError, Strategy, DEFAULT_RESTARTS,
};
use crate::signal_io::{
    load_csv, load_recording, save_recording, seconds_to_samples, segment, synth_generate,
    EegRecording, ElectrodeLayout, PlantedStructure, RecordingLabels, SynthSpec,
};
use crate::tensor::{export_tensors, stack_bands, write_manifest, ConnectivityTensor};

/// Everything the extraction pipeline needs besides the recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub measure: Measure,
    /// `None` selects the canonical ten-band bank.
    pub bands: Option<Vec<BandDefinition>>,
    pub window_s: f64,
    pub overlap_s: f64,
    pub strategy: Strategy,
    pub restarts: usize,
    pub seed: u64,
    /// First electrode of the geometric walks.
    pub start: String,
    pub te_bins: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            measure: Measure::Pcc,
            bands: None,
            window_s: 3.0,
            overlap_s: 2.5,
            strategy: Strategy::Identity,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            start: "Fp1".into(),
            te_bins: 8,
        }
    }
}

impl PipelineConfig {
    pub fn bank(&self, sample_rate: f64) -> Vec<BandDefinition> {
        self.bands.clone().unwrap_or_else(|| canonical_bank(sample_rate))
    }

    /// Checks every module precondition before any heavy work starts.
    pub fn validate(&self, recs: &[EegRecording]) -> Result<()> {
        let first = recs
            .first()
            .ok_or_else(|| Error::Config("no input recordings".into()))?;
        let rate = first.sample_rate();
        for (i, r) in recs.iter().enumerate().skip(1) {
            if r.layout() != first.layout() || r.sample_rate() != rate {
                return Err(Error::Config(format!(
                    "recording {i} differs from recording 0 in layout or sample rate"
                )));
            }
        }
        if self.te_bins < 2 {
            return Err(Error::Config(format!("te bins must be >= 2, got {}", self.te_bins)));
        }
        for b in self.bank(rate) {
            b.validate(rate).context("filterbank")?;
        }
        let w = seconds_to_samples(self.window_s, rate);
        if w < tap_count(rate) {
            return Err(Error::Config(format!(
                "window of {w} samples is shorter than the {}-tap filters",
                tap_count(rate)
            )));
        }
        for r in recs {
            segment(r, self.window_s, self.overlap_s).context("segmentation")?;
        }
        if matches!(self.strategy, Strategy::Dist | Strategy::DistRestr)
            && first.layout().index_of(&self.start).is_none()
        {
            return Err(Error::Config(format!("start electrode {:?} not in layout", self.start)));
        }
        Ok(())
    }
}

/// Per-band matrices of one segment.
#[derive(Debug, Clone)]
pub struct SegmentConnectivity {
    pub recording: usize,
    pub info: SegmentInfo,
    pub matrices: Vec<ConnectivityMatrix>,
}

/// Segments, filters and measures every recording. Output order is
/// recording order, then segment order, whatever the pool size.
pub fn compute_connectivity(
    recs: &[EegRecording],
    cfg: &PipelineConfig,
) -> Result<Vec<SegmentConnectivity>> {
    let params = ConnectivityParams { te_bins: cfg.te_bins };
    let mut out = Vec::new();
    for (ri, rec) in recs.iter().enumerate() {
        let bank = cfg.bank(rec.sample_rate());
        let segs = segment(rec, cfg.window_s, cfg.overlap_s).context("segmentation")?;
        let done = segs
            .par_iter()
            .map(|s| {
                let bs = apply_filterbank(s, &bank)
                    .with_context(|| format!("filterbank, segment at sample {}", s.start_sample()))?;
                let matrices = connectivity_all_bands(&bs, cfg.measure, params)
                    .with_context(|| format!("connectivity, segment at sample {}", s.start_sample()))?;
                Ok(SegmentConnectivity {
                    recording: ri,
                    info: SegmentInfo::from(s),
                    matrices,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(done);
    }
    Ok(out)
}

/// Mean over all segments and bands.
pub fn mean_connectivity(segs: &[SegmentConnectivity]) -> Option<SquareMatrix> {
    SquareMatrix::mean(segs.iter().flat_map(|s| s.matrices.iter().map(|m| &m.values)))
}

/// Builds the order for `cfg.strategy`. Data-driven strategies need `segs`.
pub fn compute_order(
    layout: &ElectrodeLayout,
    cfg: &PipelineConfig,
    segs: &[SegmentConnectivity],
) -> Result<ElectrodeOrder> {
    let order = match cfg.strategy {
        Strategy::Identity => ElectrodeOrder::identity(layout.len()),
        Strategy::Dist => greedy_dist_order(layout, &cfg.start)?,
        Strategy::DistRestr => greedy_dist_restr_order(layout, &cfg.start)?,
        Strategy::DataGlobal | Strategy::DataLocal => {
            let mean = mean_connectivity(segs)
                .ok_or_else(|| Error::Config("data-driven order needs connectivity".into()))?;
            let mode = if cfg.strategy == Strategy::DataGlobal {
                DisparityMode::Global
            } else {
                DisparityMode::Local
            };
            data_order(&mean, mode, cfg.restarts, cfg.seed)?
        }
    };
    Ok(order)
}

#[derive(Debug, Clone)]
pub struct ExtractOutput {
    pub tensors: Vec<ConnectivityTensor>,
    pub order: ElectrodeOrder,
    pub timings: Vec<(&'static str, Duration)>,
}

/// Full pipeline: connectivity, order (unless given), band stacking.
pub fn run_extract(
    recs: &[EegRecording],
    cfg: &PipelineConfig,
    order: Option<ElectrodeOrder>,
) -> Result<ExtractOutput> {
    cfg.validate(recs)?;
    let layout = recs[0].layout();
    let bank = cfg.bank(recs[0].sample_rate());
    let mut timings = Vec::new();

    let t = Instant::now();
    let segs = compute_connectivity(recs, cfg)?;
    timings.push(("connectivity", t.elapsed()));

    let t = Instant::now();
    let order = match order {
        Some(o) if o.len() != layout.len() => {
            return Err(Error::from(OrderingError::Dimension {
                expected: layout.len(),
                got: o.len(),
            })
            .context("ordering"))
        }
        Some(o) => o,
        None => compute_order(layout, cfg, &segs).context("ordering")?,
    };
    timings.push(("ordering", t.elapsed()));

    let t = Instant::now();
    let tensors = segs
        .par_iter()
        .map(|s| stack_bands(&s.matrices, &order, &bank).context("tensor"))
        .collect::<Result<Vec<_>>>()?;
    timings.push(("stacking", t.elapsed()));
    Ok(ExtractOutput {
        tensors,
        order,
        timings,
    })
}

/// Loads `.eegr` files, or `.csv` files at `csv_rate`.
pub fn load_input(path: &Path, csv_rate: f64) -> Result<EegRecording> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let r = if is_csv {
        load_csv(path, csv_rate)
    } else {
        load_recording(path)
    };
    r.with_context(|| format!("reading {}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "eegconn", version, about = "EEG connectivity tensors, electrode orders and classifier statistics")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// key=value file with defaults for any long flag; flags on the
    /// command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic recording with planted connectivity.
    Synth(SynthArgs),
    /// Compute connectivity tensors and write a CTEN file plus manifest.
    Extract(ExtractArgs),
    /// Compute an electrode order and write it as an order file.
    Order(OrderArgs),
    /// Concentrativeness of the valence pair tables under an order.
    Concentrate(ConcentrateArgs),
    /// Pairwise McNemar tests and error rates for prediction files.
    Stats(StatsArgs),
    /// Accuracies, grouped error rates and an optional Wilcoxon test.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Noise,
    Blocks,
    Phase,
    Chain,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    #[arg(long, default_value_t = 128.0)]
    pub rate: f64,
    /// Seconds.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    #[arg(long, value_enum, default_value_t = SynthKind::Blocks)]
    pub structure: SynthKind,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 4)]
    pub block_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 10.0)]
    pub freq: f64,
    #[arg(long, default_value_t = 0.8)]
    pub coupling: f64,
    #[arg(long)]
    pub subject: Option<u16>,
    #[arg(long)]
    pub video: Option<u16>,
    #[arg(long)]
    pub valence: Option<f32>,
    #[arg(long)]
    pub arousal: Option<f32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, default_value = "pcc")]
    pub measure: Measure,
    /// Window length in seconds.
    #[arg(long, default_value_t = 3.0)]
    pub window: f64,
    /// Window overlap in seconds.
    #[arg(long, default_value_t = 2.5)]
    pub overlap: f64,
    #[arg(long, default_value_t = 8)]
    pub te_bins: usize,
    /// Random restarts of the scaling search.
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// First electrode of the dist and dist-restr walks.
    #[arg(long, default_value = "Fp1")]
    pub start: String,
    /// Sample rate of CSV inputs.
    #[arg(long, default_value_t = 128.0)]
    pub rate: f64,
}

impl PipelineArgs {
    fn config(&self, strategy: Strategy) -> PipelineConfig {
        PipelineConfig {
            measure: self.measure,
            bands: None,
            window_s: self.window,
            overlap_s: self.overlap,
            strategy,
            restarts: self.restarts,
            seed: self.seed,
            start: self.start.clone(),
            te_bins: self.te_bins,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Input recordings (.eegr, or .csv with --rate).
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path (default: the output path with `.manifest.csv`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "identity")]
    pub order: Strategy,
    /// Use a precomputed order file instead of --order.
    #[arg(long)]
    pub order_file: Option<PathBuf>,
    /// Also write the order used.
    #[arg(long)]
    pub save_order: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct OrderArgs {
    #[arg(long)]
    pub strategy: Strategy,
    /// Recordings for data-driven strategies; the first one also fixes the
    /// layout (default: the 32-electrode montage).
    #[arg(long = "in", num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Order file path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct ConcentrateArgs {
    #[arg(long)]
    pub order_file: PathBuf,
    /// Pair tables to use (default: pcc and plv).
    #[arg(long, num_args = 1..)]
    pub measure: Vec<Measure>,
    #[arg(long, num_args = 1.., default_values_t = [3usize], value_parser = parse_kernel)]
    pub kernel: Vec<usize>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Prediction CSV files, one per system.
    #[arg(required = true, num_args = 2..)]
    pub files: Vec<PathBuf>,
    /// Apply the continuity correction to McNemar's statistic.
    #[arg(long)]
    pub continuity: bool,
    #[arg(long, default_value = "video")]
    pub group_by: GroupBy,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true, num_args = 1..)]
    pub files: Vec<PathBuf>,
    #[arg(long, default_value = "video")]
    pub group_by: GroupBy,
    /// Test the median accuracy of the files against this baseline accuracy.
    #[arg(long)]
    pub baseline: Option<f64>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

fn parse_kernel(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(k @ (1 | 3 | 5 | 7)) => Ok(k),
        _ => Err(format!("kernel size must be 1, 3, 5 or 7, got {s:?}")),
    }
}

/// Reads a flat `key = value` file. `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", i + 1)))?;
        let k = k.trim().replace('_', "-");
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(Error::Config(format!("config line {}: bad key {k:?}", i + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

fn has_flag(args: &[String], long: &str) -> bool {
    let bare = format!("--{long}");
    let eq = format!("--{long}=");
    args.iter().any(|a| *a == bare || a.starts_with(&eq))
}

/// Adds config-file values for every long flag the command line lacks.
pub fn merge_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let entries = parse_config(&text)?;

    // the subcommand is the first token that is neither a global flag nor its value
    let mut i = 1;
    while i < args.len() && args[i].starts_with("--") {
        i += if (args[i] == "--workers" || args[i] == "--config") && i + 1 < args.len() { 2 } else { 1 };
    }
    let Some(sub_name) = args.get(i).cloned() else { return Ok(args) };
    let mut cmd = Cli::command();
    cmd.build();
    let Some(sub) = cmd.find_subcommand(&sub_name) else { return Ok(args) };

    let mut extra = Vec::new();
    let mut prefix = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            continue;
        }
        if has_flag(&args, &key) {
            continue;
        }
        if key == "workers" {
            prefix.push(format!("--workers={value}"));
            continue;
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Error::Config(format!("unknown key {key:?} for {sub_name}")))?;
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "yes" | "1" => extra.push(format!("--{key}")),
                "false" | "no" | "0" => {}
                _ => return Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
            },
            ArgAction::Append => {
                extra.push(format!("--{key}"));
                extra.extend(value.split_whitespace().map(str::to_string));
            }
            _ => extra.push(format!("--{key}={value}")),
        }
    }
    let mut merged = Vec::with_capacity(args.len() + extra.len() + prefix.len());
    merged.push(args[0].clone());
    merged.extend(prefix);
    merged.extend(args[1..].iter().cloned());
    // `--` would turn the injected flags into positionals
    if let Some(pos) = merged.iter().position(|a| a == "--") {
        let tail = merged.split_off(pos);
        merged.extend(extra);
        merged.extend(tail);
    } else {
        merged.extend(extra);
    }
    Ok(merged)
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn run_with(args: Vec<OsString>, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32 {
    let args: Vec<String> = match args.into_iter().map(|a| a.into_string()).collect() {
        Ok(a) => a,
        Err(_) => {
            let _ = writeln!(err, "error: arguments must be valid UTF-8");
            return crate::error::exit::VALIDATION;
        }
    };
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    crate::error::exit::OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    crate::error::exit::VALIDATION
                }
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start worker pool: {e}");
            return crate::error::exit::VALIDATION;
        }
    };
    match pool.install(|| run(&cli.command, out, err)) {
        Ok(()) => crate::error::exit::OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Extract(a) => cmd_extract(a, out, err),
        Command::Order(a) => cmd_order(a, out),
        Command::Concentrate(a) => cmd_concentrate(a, out),
        Command::Stats(a) => cmd_stats(a, out),
        Command::Report(a) => cmd_report(a, out),
    }
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let n = a.channels;
    let structure = match a.structure {
        SynthKind::Noise => PlantedStructure::CorrelationBlocks {
            blocks: vec![],
            noise_sigma: a.noise,
        },
        SynthKind::Blocks => {
            if a.blocks * a.block_size > n {
                return Err(Error::Config(format!(
                    "{} blocks of {} do not fit {n} channels",
                    a.blocks, a.block_size
                )));
            }
            PlantedStructure::contiguous_blocks(a.blocks, a.block_size, a.noise)
        }
        SynthKind::Phase => PlantedStructure::PhaseCoupled {
            freq_hz: a.freq,
            offsets: (0..n).map(|i| i as f64 * 0.25).collect(),
            noise_sigma: a.noise,
        },
        SynthKind::Chain => PlantedStructure::CausalChain {
            links: (1..n).map(|i| (i - 1, i)).collect(),
            coupling: a.coupling,
            noise_sigma: a.noise,
        },
    };
    let labels = (a.subject.is_some() || a.video.is_some() || a.valence.is_some() || a.arousal.is_some())
        .then(|| RecordingLabels {
            subject_id: a.subject.unwrap_or(0),
            video_id: a.video.unwrap_or(0),
            valence: a.valence.unwrap_or(0.0),
            arousal: a.arousal.unwrap_or(0.0),
        });
    let spec = SynthSpec {
        n_channels: n,
        sample_rate: a.rate,
        duration_s: a.duration,
        structure,
        labels,
    };
    let rec = synth_generate(&spec, a.seed).context("synth")?;
    save_recording(&rec, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    writeln!(
        out,
        "wrote {} channels x {} samples to {}",
        rec.n_channels(),
        rec.len(),
        a.out.display()
    )?;
    Ok(())
}

fn load_all(paths: &[PathBuf], rate: f64) -> Result<Vec<EegRecording>> {
    paths.iter().map(|p| load_input(p, rate)).collect()
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.csv");
    PathBuf::from(s)
}

fn cmd_extract(a: &ExtractArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let t = Instant::now();
    let recs = load_all(&a.inputs, a.pipeline.rate)?;
    let load_time = t.elapsed();
    let cfg = a.pipeline.config(a.order);
    let given = match &a.order_file {
        Some(p) => Some(
            read_order_file(p, recs[0].layout())
                .with_context(|| format!("reading order file {}", p.display()))?
                .order,
        ),
        None => None,
    };
    let res = run_extract(&recs, &cfg, given)?;

    let t = Instant::now();
    export_tensors(&res.tensors, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let manifest = a.manifest.clone().unwrap_or_else(|| manifest_path(&a.out));
    let mut buf = Vec::new();
    writeln!(buf, "# measure={}", cfg.measure)?;
    writeln!(buf, "# order={}", res.order.strategy())?;
    writeln!(buf, "# window={}", cfg.window_s)?;
    writeln!(buf, "# overlap={}", cfg.overlap_s)?;
    writeln!(buf, "# te-bins={}", cfg.te_bins)?;
    writeln!(buf, "# restarts={}", cfg.restarts)?;
    writeln!(buf, "# seed={}", cfg.seed)?;
    for p in &a.inputs {
        writeln!(buf, "# input={}", p.display())?;
    }
    write_manifest(&res.tensors, &mut buf)?;
    fs::write(&manifest, buf).with_context(|| format!("writing {}", manifest.display()))?;
    if let Some(p) = &a.save_order {
        let mut o = Vec::new();
        write_order(&res.order, recs[0].layout(), Some(cfg.seed), &mut o)?;
        fs::write(p, o).with_context(|| format!("writing {}", p.display()))?;
    }
    let export_time = t.elapsed();

    writeln!(err, "[extract] load: {:.3} s ({} recordings)", load_time.as_secs_f64(), recs.len())?;
    for (stage, d) in &res.timings {
        writeln!(err, "[extract] {stage}: {:.3} s", d.as_secs_f64())?;
    }
    writeln!(err, "[extract] export: {:.3} s", export_time.as_secs_f64())?;
    let shape = res.tensors.first().map(|t| t.shape()).unwrap_or([0; 3]);
    writeln!(
        out,
        "wrote {} tensors of shape {}x{}x{} ({} order) to {}",
        res.tensors.len(),
        shape[0],
        shape[1],
        shape[2],
        res.order.strategy(),
        a.out.display()
    )?;
    Ok(())
}

fn cmd_order(a: &OrderArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.pipeline.config(a.strategy);
    let recs = load_all(&a.inputs, a.pipeline.rate)?;
    let layout = recs
        .first()
        .map(|r| r.layout().clone())
        .unwrap_or_else(ElectrodeLayout::canonical);
    let segs = if a.strategy.is_data_driven() {
        if recs.is_empty() {
            return Err(Error::Config(format!("{} needs --in recordings", a.strategy)));
        }
        cfg.validate(&recs)?;
        compute_connectivity(&recs, &cfg)?
    } else {
        Vec::new()
    };
    let order = compute_order(&layout, &cfg, &segs).context("ordering")?;
    let seed = a.strategy.is_data_driven().then_some(cfg.seed);
    let mut buf = Vec::new();
    write_order(&order, &layout, seed, &mut buf)?;
    match &a.out {
        Some(p) => fs::write(p, buf).with_context(|| format!("writing {}", p.display()))?,
        None => out.write_all(&buf)?,
    }
    Ok(())
}

/// Reads an order file against the montage subset it names.
pub fn read_order_labels(path: &Path) -> Result<(ElectrodeOrder, ElectrodeLayout)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let labels: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once(',').map(|(_, lab)| lab.trim()))
        .collect();
    let mut canonical: Vec<(usize, &str)> = labels
        .iter()
        .map(|l| {
            ElectrodeLayout::canonical()
                .index_of(l)
                .map(|i| (i, *l))
                .ok_or_else(|| Error::from(OrderingError::Label(format!("unknown electrode {l:?}"))))
        })
        .collect::<Result<_>>()?;
    canonical.sort_unstable();
    let names: Vec<&str> = canonical.iter().map(|(_, l)| *l).collect();
    let layout = ElectrodeLayout::canonical_subset(&names)
        .map_err(|e| Error::from(OrderingError::Label(e.to_string())))?;
    let order = read_order(BufReader::new(text.as_bytes()), &layout)
        .with_context(|| format!("parsing {}", path.display()))?
        .order;
    Ok((order, layout))
}

/// One row of the concentrate report.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationRow {
    pub measure: Measure,
    pub side: ValenceSide,
    pub kernel: usize,
    pub value: f64,
}

pub fn concentration_table(
    order: &ElectrodeOrder,
    layout: &ElectrodeLayout,
    measures: &[Measure],
    kernels: &[usize],
) -> Result<Vec<ConcentrationRow>> {
    let mut rows = Vec::new();
    for &m in measures {
        let set = ValencePairSet::published(m)
            .ok_or_else(|| Error::Config(format!("no valence pair table for {m}")))?;
        for side in [ValenceSide::Low, ValenceSide::High] {
            let pairs = set.indices(side, layout)?;
            for &s in kernels {
                rows.push(ConcentrationRow {
                    measure: m,
                    side,
                    kernel: s,
                    value: concentrativeness(order, &pairs, s)?,
                });
            }
        }
    }
    Ok(rows)
}

fn cmd_concentrate(a: &ConcentrateArgs, out: &mut dyn Write) -> Result<()> {
    let (order, layout) = read_order_labels(&a.order_file)?;
    let measures = if a.measure.is_empty() {
        vec![Measure::Pcc, Measure::Plv]
    } else {
        a.measure.clone()
    };
    let rows = concentration_table(&order, &layout, &measures, &a.kernel)?;
    let mut s = String::new();
    match a.format {
        OutputFormat::Csv => {
            s.push_str("measure,side,kernel,concentrativeness\n");
            for r in &rows {
                let _ = writeln!(s, "{},{},{},{}", r.measure, r.side, r.kernel, r.value);
            }
        }
        OutputFormat::Text => {
            let _ = writeln!(s, "order: {} ({} electrodes)", order.strategy(), order.len());
            let _ = writeln!(s, "{:<8}{:<6}{:>7}{:>20}", "measure", "side", "kernel", "concentrativeness");
            for r in &rows {
                let _ = writeln!(s, "{:<8}{:<6}{:>7}{:>20.6}", r.measure.as_str(), r.side.as_str(), r.kernel, r.value);
            }
        }
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn system_name(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn load_predictions(p: &Path) -> Result<Vec<PredictionRecord>> {
    let f = fs::File::open(p).with_context(|| format!("reading {}", p.display()))?;
    read_predictions(BufReader::new(f)).with_context(|| format!("parsing {}", p.display()))
}

fn error_rows(
    systems: &[(String, Vec<PredictionRecord>)],
    group_by: GroupBy,
    format: OutputFormat,
    s: &mut String,
) -> Result<()> {
    match format {
        OutputFormat::Csv => s.push_str("system,group,wrong,total,error_rate\n"),
        OutputFormat::Text => {
            let _ = writeln!(s, "error rates by {group_by:?}");
            let _ = writeln!(s, "{:<16}{:<10}{:>8}{:>8}{:>12}", "system", "group", "wrong", "total", "error_rate");
        }
    }
    for (name, recs) in systems {
        let rep = error_report(recs, group_by).with_context(|| format!("error report for {name}"))?;
        for w in &rep.warnings {
            let _ = writeln!(s, "# warning: {name}: {w}");
        }
        for g in &rep.groups {
            match format {
                OutputFormat::Csv => {
                    let _ = writeln!(s, "{name},{},{},{},{}", g.group, g.wrong, g.total, g.rate());
                }
                OutputFormat::Text => {
                    let _ = writeln!(s, "{name:<16}{:<10}{:>8}{:>8}{:>11.2}%", g.group, g.wrong, g.total, 100.0 * g.rate());
                }
            }
        }
    }
    Ok(())
}

fn cmd_stats(a: &StatsArgs, out: &mut dyn Write) -> Result<()> {
    let systems: Vec<(String, Vec<PredictionRecord>)> = a
        .files
        .iter()
        .map(|p| Ok((system_name(p), load_predictions(p)?)))
        .collect::<Result<_>>()?;
    let mut s = String::new();
    match a.format {
        OutputFormat::Csv => s.push_str("system_a,system_b,b,c,chi2,p\n"),
        OutputFormat::Text => {
            let _ = writeln!(s, "McNemar tests{}", if a.continuity { " (continuity corrected)" } else { "" });
            let _ = writeln!(s, "{:<16}{:<16}{:>6}{:>6}{:>12}{:>12}", "system_a", "system_b", "b", "c", "chi2", "p");
        }
    }
    for i in 0..systems.len() {
        for k in i + 1..systems.len() {
            let (na, ra) = &systems[i];
            let (nb, rb) = &systems[k];
            let (b, c, chi2, p) = match mcnemar(ra, rb, a.continuity) {
                Ok(r) => (r.b_count, r.c_count, r.chi2.to_string(), r.p.to_string()),
                Err(MetricsError::NoDiscordance) => (0, 0, "NoDiscordance".into(), "NoDiscordance".into()),
                Err(e) => return Err(Error::from(e).context(format!("comparing {na} and {nb}"))),
            };
            match a.format {
                OutputFormat::Csv => {
                    let _ = writeln!(s, "{na},{nb},{b},{c},{chi2},{p}");
                }
                OutputFormat::Text => {
                    let short = |v: &str| v.parse::<f64>().map_or(v.to_string(), |x| format!("{x:.4}"));
                    let _ = writeln!(s, "{na:<16}{nb:<16}{b:>6}{c:>6}{:>12}{:>12}", short(&chi2), short(&p));
                }
            }
        }
    }
    s.push('\n');
    error_rows(&systems, a.group_by, a.format, &mut s)?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let systems: Vec<(String, Vec<PredictionRecord>)> = a
        .files
        .iter()
        .map(|p| Ok((system_name(p), load_predictions(p)?)))
        .collect::<Result<_>>()?;
    let mut s = String::new();
    let mut accuracies = Vec::new();
    match a.format {
        OutputFormat::Csv => s.push_str("system,instances,correct,accuracy\n"),
        OutputFormat::Text => {
            let _ = writeln!(s, "{:<16}{:>10}{:>10}{:>10}", "system", "instances", "correct", "accuracy");
        }
    }
    for (name, recs) in &systems {
        if recs.is_empty() {
            return Err(Error::from(MetricsError::Insufficient(0)).context(format!("{name} has no predictions")));
        }
        let correct = recs.iter().filter(|r| r.correct()).count();
        let acc = correct as f64 / recs.len() as f64;
        accuracies.push(acc);
        match a.format {
            OutputFormat::Csv => {
                let _ = writeln!(s, "{name},{},{correct},{acc}", recs.len());
            }
            OutputFormat::Text => {
                let _ = writeln!(s, "{name:<16}{:>10}{correct:>10}{:>9.2}%", recs.len(), 100.0 * acc);
            }
        }
    }
    if let Some(base) = a.baseline {
        let w = wilcoxon_one_sample(&accuracies, base, WilcoxonMethod::Auto).context("wilcoxon")?;
        let method = if w.exact { "exact" } else { "normal" };
        match a.format {
            OutputFormat::Csv => {
                let _ = writeln!(s, "\nbaseline,n,w,p,method\n{base},{},{},{},{method}", w.n, w.w, w.p);
            }
            OutputFormat::Text => {
                let _ = writeln!(
                    s,
                    "\nWilcoxon signed-rank vs baseline {base}: n={} W={} p={:.4} ({method})",
                    w.n, w.w, w.p
                );
            }
        }
    }
    s.push('\n');
    error_rows(&systems, a.group_by, a.format, &mut s)?;
    out.write_all(s.as_bytes())?;
    Ok(())
}
