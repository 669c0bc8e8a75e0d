//! Stage wiring, configuration file and artifact writing.
//!
//! A full run writes every artifact with a `.partial` suffix and renames
//! them all once the last stage succeeds. When a stage fails, the artifacts
//! of the stages before it stay behind as `.partial` files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{extract_features, merge_and_refine, replay_balances, ClusterConfig, RefineStats};
use crate::detect::{detect_all, DetectorConfig};
use crate::ingest::{read_json, write_json, DatasetBundle};
use crate::metrics::{compute_report, MetricsConfig};
use crate::model::{Address, EntityGroup, GroupSet, GroupSetFile, IndicatorReport, TransactionGraph};
use crate::preprocess::{clean_dataset, CleaningReport, PreprocessConfig};
use crate::report::{emit_radar, RadarPayload};

pub const CLEANING_REPORT: &str = "cleaning_report.json";
pub const DETECTOR_GROUPS: &str = "detector_groups.json";
pub const GROUPSET: &str = "groupset.json";
pub const CLUSTER_STATS: &str = "cluster_stats.json";
pub const INDICATOR_REPORT: &str = "indicator_report.json";
pub const RADAR_JSON: &str = "radar.json";
pub const RADAR_SVG: &str = "radar.svg";

/// Files a successful full run leaves in the output directory.
pub const ARTIFACTS: [&str; 7] = [
    CLEANING_REPORT,
    DETECTOR_GROUPS,
    GROUPSET,
    CLUSTER_STATS,
    INDICATOR_REPORT,
    RADAR_JSON,
    RADAR_SVG,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Clean,
    Detect,
    Cluster,
    Metrics,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Clean => "clean",
            Stage::Detect => "detect",
            Stage::Cluster => "cluster",
            Stage::Metrics => "metrics",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, err: impl fmt::Display) -> Self {
        PipelineError {
            stage,
            message: err.to_string(),
        }
    }
}

trait StageResult<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: fmt::Display> StageResult<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub svg: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { svg: true }
    }
}

/// Every tunable of the pipeline, with the published defaults filled in.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub detect: DetectorConfig,
    pub cluster: ClusterConfig,
    pub metrics: MetricsConfig,
    pub report: ReportConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let config: PipelineConfig = toml::from_str(text).at(Stage::Config)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.detect.validate().at(Stage::Config)?;
        self.cluster.validate().at(Stage::Config)?;
        let p = &self.preprocess;
        if !(p.similarity_tolerance >= 0.0 && p.min_recipients >= 1) {
            return Err(PipelineError::new(Stage::Config, "preprocess thresholds out of range"));
        }
        let m = &self.metrics;
        if !(m.vmtv_cap > 0.0 && m.volatility_cap > 0.0 && m.volume_window_seconds > 0) {
            return Err(PipelineError::new(
                Stage::Config,
                "metrics caps and window must be positive",
            ));
        }
        Ok(())
    }
}

/// Detector output as written to `detector_groups.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorGroups {
    /// Candidate count per detector.
    pub counts: BTreeMap<String, usize>,
    pub groups: Vec<EntityGroup>,
}

impl DetectorGroups {
    pub fn new(groups: Vec<EntityGroup>) -> Self {
        let mut counts = BTreeMap::new();
        for g in &groups {
            let detector = g.evidence.first().map_or("unknown", |e| e.detector.as_str());
            *counts.entry(detector.to_string()).or_insert(0) += 1;
        }
        DetectorGroups { counts, groups }
    }
}

pub fn clean_stage(bundle: &DatasetBundle, config: &PipelineConfig) -> (DatasetBundle, CleaningReport) {
    let (cleaned, report) = clean_dataset(bundle, &config.preprocess);
    info!(
        "clean: {} -> {} transfers, {} -> {} addresses ({} public, {} airdrop removed)",
        report.input_transfers,
        report.surviving_transfers,
        report.input_addresses,
        report.surviving_addresses,
        report.removed_public_tx,
        report.removed_airdrop_tx
    );
    (cleaned, report)
}

pub fn detect_stage(cleaned: &DatasetBundle, config: &PipelineConfig) -> Result<DetectorGroups, PipelineError> {
    let graph = TransactionGraph::build(&cleaned.transfers);
    let groups = detect_all(&graph, &cleaned.labels, &config.detect, config.seed).at(Stage::Detect)?;
    let out = DetectorGroups::new(groups);
    info!(
        "detect: {} nodes, {} transfers -> {} candidate groups {:?}",
        graph.node_count(),
        cleaned.transfers.len(),
        out.groups.len(),
        out.counts
    );
    Ok(out)
}

/// Holder balances: the market snapshot's when it lists any, otherwise a
/// replay of the transfers.
pub fn holder_balances(bundle: &DatasetBundle, config: &PipelineConfig) -> BTreeMap<Address, f64> {
    match &bundle.market {
        Some(m) if !m.balances.is_empty() => m.balances.clone(),
        _ => replay_balances(&bundle.transfers, config.metrics.token_decimals),
    }
}

pub fn cluster_stage(
    cleaned: &DatasetBundle,
    detected: &DetectorGroups,
    config: &PipelineConfig,
) -> Result<(GroupSet, RefineStats), PipelineError> {
    let graph = TransactionGraph::build(&cleaned.transfers);
    let balances = holder_balances(cleaned, config);
    let features = extract_features(&graph, &balances, &cleaned.labels, &config.cluster, config.seed);
    let (set, stats) =
        merge_and_refine(&detected.groups, &features, &graph, &config.cluster, config.seed).at(Stage::Cluster)?;
    info!(
        "cluster: {} candidates -> {} merged groups ({} addresses) -> {} final groups ({} addresses, {} singletons); {} noise, {} outliers, {} rejected",
        stats.input_groups,
        stats.super_groups,
        stats.super_group_addresses,
        stats.final_groups,
        stats.final_addresses,
        stats.singleton_count,
        stats.dbscan_noise,
        stats.outliers_removed,
        stats.rejected_groups
    );
    Ok((set, stats))
}

pub fn metrics_stage(
    cleaned: &DatasetBundle,
    groups: &GroupSet,
    config: &PipelineConfig,
) -> Result<IndicatorReport, PipelineError> {
    let report = compute_report(cleaned, groups, &config.metrics).at(Stage::Metrics)?;
    info!(
        "metrics: holders {} -> {}, top10 {:.4} -> {:.4}, hhi {:.4} -> {:.4}, vmtv {:.4} -> {:.4}",
        report.raw.holders,
        report.adjusted.holders,
        report.raw.top10_position,
        report.adjusted.top10_position,
        report.raw.hhi,
        report.adjusted.hhi,
        report.raw.vmtv,
        report.adjusted.vmtv
    );
    for v in report.invariant_violations() {
        log::warn!("metrics: {v}");
    }
    Ok(report)
}

/// Everything a full run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub cleaning: CleaningReport,
    pub detected: DetectorGroups,
    pub groups: GroupSet,
    pub stats: RefineStats,
    pub report: IndicatorReport,
    pub radar: RadarPayload,
}

fn partial(path: &Path) -> PathBuf {
    let mut name = path.file_name().expect("artifact has a file name").to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes `value` as JSON to `path` through a temporary `.partial` file.
pub fn write_artifact<T: Serialize + ?Sized>(path: &Path, value: &T, stage: Stage) -> Result<(), PipelineError> {
    let tmp = partial(path);
    write_json(&tmp, value).at(stage)?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::new(stage, format!("{}: {e}", path.display())))
}

pub fn read_artifact<T: serde::de::DeserializeOwned>(path: &Path, stage: Stage) -> Result<T, PipelineError> {
    read_json(path).at(stage)
}

/// Loads a GroupSet artifact; the universe is completed from the dataset.
pub fn read_groupset(path: &Path, bundle: &DatasetBundle, config: &PipelineConfig) -> Result<GroupSet, PipelineError> {
    let file: GroupSetFile = read_artifact(path, Stage::Metrics)?;
    let mut extra: Vec<Address> = holder_balances(bundle, config).into_keys().collect();
    extra.extend(bundle.transfers.iter().flat_map(|t| [t.from.clone(), t.to.clone()]));
    GroupSet::from_file(file, extra).at(Stage::Metrics)
}

/// Runs every stage on the dataset in `data_dir` and writes the artifacts to
/// `out_dir`.
pub fn run_pipeline(config: &PipelineConfig, data_dir: &Path, out_dir: &Path) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::new(Stage::Report, format!("{}: {e}", out_dir.display())))?;
    for name in ARTIFACTS {
        let path = out_dir.join(name);
        let _ = std::fs::remove_file(&path);
        let _ = std::fs::remove_file(partial(&path));
    }
    fn write<T: Serialize>(out_dir: &Path, name: &str, value: &T, stage: Stage) -> Result<(), PipelineError> {
        write_json(&partial(&out_dir.join(name)), value).at(stage)
    }

    let bundle = DatasetBundle::load_dir(data_dir).at(Stage::Ingest)?;
    info!(
        "ingest: {} transfers, {} labels, pool {}, market {}",
        bundle.transfers.len(),
        bundle.labels.len(),
        bundle.pool.is_some(),
        bundle.market.is_some()
    );
    let (cleaned, cleaning) = clean_stage(&bundle, config);
    write(out_dir, CLEANING_REPORT, &cleaning, Stage::Clean)?;
    let detected = detect_stage(&cleaned, config)?;
    write(out_dir, DETECTOR_GROUPS, &detected, Stage::Detect)?;
    let (groups, stats) = cluster_stage(&cleaned, &detected, config)?;
    write(out_dir, GROUPSET, &groups.to_file(), Stage::Cluster)?;
    write(out_dir, CLUSTER_STATS, &stats, Stage::Cluster)?;
    let report = metrics_stage(&cleaned, &groups, config)?;
    write(out_dir, INDICATOR_REPORT, &report, Stage::Metrics)?;
    let radar = emit_radar(&report, &partial(&out_dir.join(RADAR_JSON)), false).at(Stage::Report)?;
    if config.report.svg {
        let svg = crate::report::render_svg(&radar, &report.metadata.token);
        std::fs::write(partial(&out_dir.join(RADAR_SVG)), svg).at(Stage::Report)?;
    }

    for name in ARTIFACTS {
        let path = out_dir.join(name);
        let tmp = partial(&path);
        if tmp.exists() {
            std::fs::rename(&tmp, &path).at(Stage::Report)?;
        }
    }
    info!("report: artifacts written to {}", out_dir.display());
    Ok(PipelineOutput {
        cleaning,
        detected,
        groups,
        stats,
        report,
        radar,
    })
}
