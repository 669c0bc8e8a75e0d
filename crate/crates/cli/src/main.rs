use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ell_core::ingest::{write_transfers, DatasetBundle, ExplorerClient, ExplorerConfig, TransferFormat};
use ell_core::model::{GroupFlag, IndicatorReport};
use ell_core::pipeline::{
    clean_stage, cluster_stage, detect_stage, metrics_stage, read_artifact, read_groupset, run_pipeline,
    write_artifact, DetectorGroups, PipelineConfig, PipelineError, Stage, CLEANING_REPORT, CLUSTER_STATS,
    DETECTOR_GROUPS, GROUPSET, INDICATOR_REPORT, RADAR_JSON,
};
use ell_core::report::{compare_tokens, emit_radar};
use ell_core::synth::{generate_scenario, Pattern, ScenarioSpec};

#[derive(Parser)]
#[command(
    name = "ell",
    version,
    about = "Entity-linked address detection and liquidity risk indicators"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML). Defaults apply to anything not set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding transfers.csv and optional labels/pool/market JSON.
    #[arg(long, global = true, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Comma-separated group flags whose members are left out of the
    /// indicators, e.g. suspected_market_maker.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_flag)]
    exclude_flags: Vec<GroupFlag>,
    /// Token label written into the indicator report.
    #[arg(long, global = true)]
    token: Option<String>,
}

fn parse_flag(s: &str) -> Result<GroupFlag, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_pattern(s: &str) -> Result<Pattern, String> {
    s.parse().map_err(|e| format!("{e}"))
}

#[derive(Subcommand)]
enum Command {
    /// Normalise a local dump, or fetch transfers from an explorer API.
    Ingest(IngestArgs),
    /// Remove public-address and airdrop transfers; writes cleaned/ and the cleaning report.
    Clean,
    /// Run the four detectors on a cleaned dataset.
    Detect,
    /// Merge and refine detector groups into the final group set.
    Cluster,
    /// Compute raw and entity-adjusted indicators.
    Metrics,
    /// Write radar.json and radar.svg from an indicator report.
    Report {
        /// Defaults to <out-dir>/indicator_report.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with planted entities into <out-dir>.
    Synth(SynthArgs),
    /// Full pipeline from <data-dir> to <out-dir>.
    Run,
    /// Compare indicator reports of several tokens.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct IngestArgs {
    /// Explorer API endpoint; without it the local --data-dir is normalised.
    #[arg(long)]
    explorer_url: Option<String>,
    /// Token contract address to query.
    #[arg(long, requires = "explorer_url")]
    contract: Option<String>,
    #[arg(long, default_value_t = 1000)]
    page_size: usize,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario spec (TOML); flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    retail: Option<usize>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long, value_delimiter = ',', value_parser = parse_pattern)]
    patterns: Vec<Pattern>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.common.jobs {
        set_jobs(jobs);
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(feature = "parallel")]
fn set_jobs(jobs: usize) {
    if jobs == 1 {
        ell_core::par::set_sequential(true);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
        log::warn!("could not size worker pool: {e}");
    }
}

#[cfg(not(feature = "parallel"))]
fn set_jobs(_jobs: usize) {}

fn load_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if !common.exclude_flags.is_empty() {
        config.metrics.exclude_flags = common.exclude_flags.iter().copied().collect();
    }
    if let Some(token) = &common.token {
        config.metrics.token = token.clone();
    }
    config.validate()?;
    Ok(config)
}

fn load_data(dir: &Path) -> Result<DatasetBundle, PipelineError> {
    DatasetBundle::load_dir(dir).map_err(|e| PipelineError::new(Stage::Ingest, e))
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let common = &cli.common;
    let out = &common.out_dir;
    let mkdir = |stage: Stage| {
        std::fs::create_dir_all(out).map_err(|e| PipelineError::new(stage, format!("{}: {e}", out.display())))
    };
    match &cli.command {
        Command::Ingest(args) => ingest(common, args),
        Command::Clean => {
            let config = load_config(common)?;
            let bundle = load_data(&common.data_dir)?;
            let (cleaned, report) = clean_stage(&bundle, &config);
            mkdir(Stage::Clean)?;
            cleaned
                .write_dir(&out.join("cleaned"))
                .map_err(|e| PipelineError::new(Stage::Clean, e))?;
            write_artifact(&out.join(CLEANING_REPORT), &report, Stage::Clean)
        }
        Command::Detect => {
            let config = load_config(common)?;
            let cleaned = load_data(&common.data_dir)?;
            let groups = detect_stage(&cleaned, &config)?;
            mkdir(Stage::Detect)?;
            write_artifact(&out.join(DETECTOR_GROUPS), &groups, Stage::Detect)
        }
        Command::Cluster => {
            let config = load_config(common)?;
            let cleaned = load_data(&common.data_dir)?;
            let detected: DetectorGroups = read_artifact(&out.join(DETECTOR_GROUPS), Stage::Cluster)?;
            let (groups, stats) = cluster_stage(&cleaned, &detected, &config)?;
            write_artifact(&out.join(GROUPSET), &groups.to_file(), Stage::Cluster)?;
            write_artifact(&out.join(CLUSTER_STATS), &stats, Stage::Cluster)
        }
        Command::Metrics => {
            let config = load_config(common)?;
            let cleaned = load_data(&common.data_dir)?;
            let groups = read_groupset(&out.join(GROUPSET), &cleaned, &config)?;
            let report = metrics_stage(&cleaned, &groups, &config)?;
            write_artifact(&out.join(INDICATOR_REPORT), &report, Stage::Metrics)
        }
        Command::Report { report } => {
            let config = load_config(common)?;
            let path = report.clone().unwrap_or_else(|| out.join(INDICATOR_REPORT));
            let r: IndicatorReport = read_artifact(&path, Stage::Report)?;
            mkdir(Stage::Report)?;
            emit_radar(&r, &out.join(RADAR_JSON), config.report.svg)
                .map_err(|e| PipelineError::new(Stage::Report, e))?;
            Ok(())
        }
        Command::Synth(args) => synth(common, args),
        Command::Run => {
            let config = load_config(common)?;
            run_pipeline(&config, &common.data_dir, out).map(|_| ())
        }
        Command::Compare { reports } => {
            let loaded = reports
                .iter()
                .map(|p| read_artifact::<IndicatorReport>(p, Stage::Report))
                .collect::<Result<Vec<_>, _>>()?;
            let cmp = compare_tokens(&loaded).map_err(|e| PipelineError::new(Stage::Report, e))?;
            mkdir(Stage::Report)?;
            let write = |name: &str, text: &str| {
                std::fs::write(out.join(name), text)
                    .map_err(|e| PipelineError::new(Stage::Report, format!("{name}: {e}")))
            };
            write("comparison.csv", &cmp.to_csv())?;
            write("comparison.txt", &cmp.to_text())?;
            let payloads: std::collections::BTreeMap<String, _> = cmp.payloads().into_iter().collect();
            write_artifact(&out.join("comparison_radar.json"), &payloads, Stage::Report)?;
            print!("{}", cmp.to_text());
            if let Some(w) = cmp.weakest() {
                println!("smallest adjusted radar area: {} ({:.4})", w.token, w.adjusted_area);
            }
            Ok(())
        }
    }
}

fn ingest(common: &Common, args: &IngestArgs) -> Result<(), PipelineError> {
    let out = &common.out_dir;
    std::fs::create_dir_all(out).map_err(|e| PipelineError::new(Stage::Ingest, e))?;
    match (&args.explorer_url, &args.contract) {
        (Some(url), Some(contract)) => {
            let cache = args.cache_dir.clone().unwrap_or_else(|| out.join("explorer_cache"));
            let mut config = ExplorerConfig::new(url.clone(), contract.clone(), cache);
            config.page_size = args.page_size;
            let mut client = ExplorerClient::from_env(config).map_err(|e| PipelineError::new(Stage::Ingest, e))?;
            let transfers = client
                .fetch_transfers()
                .map_err(|e| PipelineError::new(Stage::Ingest, e))?;
            log::info!(
                "ingest: {} transfers in {} HTTP requests",
                transfers.len(),
                client.http_request_count()
            );
            write_transfers(&out.join("transfers.csv"), &transfers, TransferFormat::Csv)
                .map_err(|e| PipelineError::new(Stage::Ingest, e))
        }
        (Some(_), None) => Err(PipelineError::new(Stage::Ingest, "--explorer-url needs --contract")),
        _ => {
            let bundle = load_data(&common.data_dir)?;
            log::info!(
                "ingest: {} transfers, {} labels, pool {}, market {}",
                bundle.transfers.len(),
                bundle.labels.len(),
                bundle.pool.is_some(),
                bundle.market.is_some()
            );
            bundle.write_dir(out).map_err(|e| PipelineError::new(Stage::Ingest, e))
        }
    }
}

fn synth(common: &Common, args: &SynthArgs) -> Result<(), PipelineError> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
            ScenarioSpec::from_toml(&text).map_err(|e| PipelineError::new(Stage::Config, e))?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.entities {
        spec.n_entities = n;
    }
    if let Some(n) = args.retail {
        spec.n_retail = n;
    }
    if let Some(d) = args.days {
        spec.duration_days = d;
    }
    if !args.patterns.is_empty() {
        spec.patterns = args.patterns.iter().copied().collect();
    }
    if let Some(token) = &common.token {
        spec.token = token.clone();
    }
    let scenario = generate_scenario(&spec).map_err(|e| PipelineError::new(Stage::Ingest, e))?;
    scenario
        .write_dir(&common.out_dir)
        .map_err(|e| PipelineError::new(Stage::Ingest, e))?;
    log::info!(
        "synth: {} transfers, {} entities, {} ground-truth addresses written to {}",
        scenario.bundle.transfers.len(),
        scenario.truth.groups().len(),
        scenario.truth.grouped_address_count(),
        common.out_dir.display()
    );
    Ok(())
}
