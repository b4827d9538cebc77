//! End-to-end commands over an experiment config: catalog → splits →
//! pretrain → probe → eval, plus the similarity and breakdown analyses.
//! Every command reads its inputs from disk, fails with
//! [`Error::MissingArtifact`] when an upstream step has not run, and writes
//! its outputs atomically together with a `run_meta.json` record.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::audio::SourceKind;
use crate::contrastive::{
    load_encoder, pretrain, validation_pairs, write_history_csv, ContrastiveModel, ContrastivePool, PretrainConfig,
    Regime, TrainState,
};
use crate::embeddings::{embed_tracks, EmbeddingTable, FrozenEncoder};
use crate::encoder::{EncoderConfig, Preset};
use crate::error::{Error, Result};
use crate::experiments::{
    aggregate, aggregate_csv, breakdown, cosine_reference_analysis, id_embedding_requests, ExperimentContext, Protocol,
    RunResult, COSINE_KEYS, MIN_GENRE_TEST_TRACKS,
};
use crate::features::{MelBank, MelRequest};
use crate::manifest::{write_atomic, CatalogEntry, CatalogManifest, Pool, WavStemSource};
use crate::nn::Checkpoint;
use crate::probe::{write_predictions_csv, ProbeConfig, ProbeHead};
use crate::rng::sha256_hex;
use crate::splits::{
    build_contrastive_split, build_id_split, filter_min_tracks, filter_vocalness, vocal_offsets, IdRules, Role,
    SplitSpec, MIN_CONTRASTIVE_TRACKS, SEGMENT_HOP_S, TRAIN_VOCALNESS,
};
use crate::synth::{build_catalog, CatalogConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn schema_one() -> u32 {
    CONFIG_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub catalog_dir: PathBuf,
    pub splits_dir: PathBuf,
    pub checkpoints_dir: PathBuf,
    pub results_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            catalog_dir: "catalog".into(),
            splits_dir: "splits".into(),
            checkpoints_dir: "checkpoints".into(),
            results_dir: "results".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdSet {
    Closed,
    Open,
}

impl IdSet {
    pub fn rules(self) -> IdRules {
        match self {
            IdSet::Closed => IdRules::CLOSED,
            IdSet::Open => IdRules::OPEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitOptions {
    pub seed: u64,
    pub n_val_singers: usize,
    pub id_set: IdSet,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            n_val_singers: 16,
            id_set: IdSet::Closed,
        }
    }
}

/// Overrides on top of the preset's pre-training defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainOptions {
    pub seed: Option<u64>,
    pub batch_pairs: Option<usize>,
    pub lr: Option<f64>,
    pub temperature: Option<f64>,
    pub iters_per_epoch: Option<usize>,
    pub max_val_iters: Option<usize>,
    pub max_epochs: Option<usize>,
    /// Hop between candidate vocal segments in the training pool.
    pub pool_hop_s: f64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            seed: None,
            batch_pairs: None,
            lr: None,
            temperature: None,
            iters_per_epoch: None,
            max_val_iters: None,
            max_epochs: None,
            pool_hop_s: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub regimes: Vec<Regime>,
    pub n_classes: Vec<usize>,
    pub cloned_n_classes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub min_genre_test_tracks: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            regimes: Regime::ALL.to_vec(),
            n_classes: vec![8, 16],
            cloned_n_classes: vec![16],
            seeds: vec![1, 2, 3, 4, 5],
            min_genre_test_tracks: MIN_GENRE_TEST_TRACKS,
        }
    }
}

/// One experiment: where artifacts live and how each stage is configured.
/// Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_one")]
    pub schema_version: u32,
    /// Master seed of the synthetic catalog.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_preset")]
    pub preset: Preset,
    /// Replaces the preset's encoder shape when given.
    #[serde(default)]
    pub encoder: Option<EncoderConfig>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default = "CatalogConfig::desk")]
    pub catalog: CatalogConfig,
    #[serde(default)]
    pub splits: SplitOptions,
    #[serde(default)]
    pub pretrain: PretrainOptions,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub eval: EvalOptions,
}

fn default_seed() -> u64 {
    7
}
fn default_preset() -> Preset {
    Preset::Desk
}
fn default_jobs() -> usize {
    1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: default_seed(),
            preset: default_preset(),
            encoder: None,
            jobs: default_jobs(),
            paths: Paths::default(),
            catalog: CatalogConfig::desk(),
            splits: SplitOptions::default(),
            pretrain: PretrainOptions::default(),
            probe: ProbeConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config and anchors its relative paths at the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.paths.catalog_dir,
            &mut self.paths.splits_dir,
            &mut self.paths.checkpoints_dir,
            &mut self.paths.results_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "unsupported config schema version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        self.catalog.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.encoder_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.probe.plateau.validate().map_err(|e| Error::Config(e.to_string()))?;
        for r in Regime::ALL {
            self.pretrain_config(r).validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.pretrain.pool_hop_s > 0.0) {
            return bad("pretrain.pool_hop_s must be positive".into());
        }
        let e = &self.eval;
        if e.seeds.is_empty() {
            return bad("eval.seeds must not be empty".into());
        }
        let mut seen = e.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != e.seeds.len() {
            return bad("eval.seeds must be distinct".into());
        }
        if e.n_classes.iter().chain(&e.cloned_n_classes).any(|&n| n < 2) {
            return bad("class counts must be at least 2".into());
        }
        if e.regimes.is_empty() {
            return bad("eval.regimes must not be empty".into());
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        self.encoder.clone().unwrap_or_else(|| EncoderConfig::preset(self.preset))
    }

    pub fn pretrain_config(&self, regime: Regime) -> PretrainConfig {
        let o = &self.pretrain;
        let seed = o.seed.unwrap_or(self.seed);
        let mut c = match self.preset {
            Preset::Desk => PretrainConfig::desk(regime, seed),
            Preset::Paper => PretrainConfig::paper(regime, seed),
        };
        if let Some(v) = o.batch_pairs {
            c.batch_pairs = v;
        }
        if let Some(v) = o.lr {
            c.lr = v;
        }
        if let Some(v) = o.temperature {
            c.temperature = v;
        }
        if let Some(v) = o.iters_per_epoch {
            c.iters_per_epoch = v;
        }
        if let Some(v) = o.max_val_iters {
            c.max_val_iters = v;
        }
        if let Some(v) = o.max_epochs {
            c.max_epochs = v;
        }
        c
    }

    /// Hash of the effective configuration, recorded with every artifact.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths.catalog_dir.join("manifest.jsonl")
    }

    pub fn contrastive_split_path(&self) -> PathBuf {
        self.paths.splits_dir.join("contrastive.json")
    }

    pub fn id_split_path(&self) -> PathBuf {
        self.paths.splits_dir.join("id.json")
    }

    pub fn regime_checkpoints(&self, regime: Regime) -> PathBuf {
        self.paths.checkpoints_dir.join(regime.as_str())
    }

    pub fn encoder_stem(&self, regime: Regime) -> PathBuf {
        self.regime_checkpoints(regime).join("encoder")
    }

    pub fn probe_stem(&self, regime: Regime, protocol: Protocol, n_classes: usize, seed: u64) -> PathBuf {
        self.regime_checkpoints(regime)
            .join("probes")
            .join(run_name(protocol, n_classes, seed))
    }

    pub fn regime_results(&self, regime: Regime) -> PathBuf {
        self.paths.results_dir.join(regime.as_str())
    }

    /// Every (protocol, n_classes) pair the config asks for.
    pub fn protocols(&self) -> Vec<(Protocol, usize)> {
        let mut out: Vec<(Protocol, usize)> =
            self.eval.n_classes.iter().map(|&n| (Protocol::Identification, n)).collect();
        out.extend(self.eval.cloned_n_classes.iter().map(|&n| (Protocol::Cloned, n)));
        out
    }
}

pub fn run_name(protocol: Protocol, n_classes: usize, seed: u64) -> String {
    let p = match protocol {
        Protocol::Identification => "identification",
        Protocol::Cloned => "cloned",
    };
    format!("{p}-n{n_classes}-seed{seed}")
}

/// Provenance written next to each command's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub wall_time_s: f64,
}

fn write_run_meta(dir: &Path, command: &str, cfg: &ExperimentConfig, seed: u64, started: Instant) -> Result<()> {
    let meta = RunMeta {
        command: command.to_string(),
        config_hash: cfg.hash()?,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    write_atomic(&dir.join("run_meta.json"), serde_json::to_string_pretty(&meta)?.as_bytes())
}

fn require(path: &Path, producer: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer,
        })
    }
}

fn require_checkpoint(stem: &Path, producer: &'static str) -> Result<Checkpoint> {
    if !Checkpoint::exists(stem) {
        return Err(Error::MissingArtifact {
            path: Checkpoint::header_path(stem),
            producer,
        });
    }
    Checkpoint::read(stem)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn load_manifest(cfg: &ExperimentConfig) -> Result<CatalogManifest> {
    let path = cfg.manifest_path();
    require(&path, "catalog")?;
    CatalogManifest::read(&path)
}

fn load_split(path: &Path) -> Result<SplitSpec> {
    require(path, "splits")?;
    SplitSpec::read(path)
}

fn stems(cfg: &ExperimentConfig) -> WavStemSource {
    WavStemSource {
        root: cfg.paths.catalog_dir.clone(),
    }
}

/// Entries named by a split, in manifest order.
fn split_entries(manifest: &CatalogManifest, split: &SplitSpec) -> Vec<CatalogEntry> {
    manifest
        .entries
        .iter()
        .filter(|e| split.role(&e.track_id).is_some())
        .cloned()
        .collect()
}

/// Renders the synthetic catalog: stems as WAVE files plus `manifest.jsonl`.
pub fn cmd_catalog(cfg: &ExperimentConfig) -> Result<CatalogManifest> {
    let started = Instant::now();
    let dir = &cfg.paths.catalog_dir;
    let manifest = build_catalog(&cfg.catalog, cfg.seed, dir, cfg.jobs)?;
    log::info!("catalog: {} tracks written to {}", manifest.entries.len(), dir.display());
    write_run_meta(dir, "catalog", cfg, cfg.seed, started)?;
    Ok(manifest)
}

/// Applies the filtering rules and writes the contrastive and
/// identification splits.
pub fn cmd_splits(cfg: &ExperimentConfig) -> Result<(SplitSpec, SplitSpec)> {
    let started = Instant::now();
    let manifest = load_manifest(cfg)?;
    let seed = cfg.splits.seed;
    let in_pool = |p: Pool| -> Vec<CatalogEntry> {
        manifest
            .entries
            .iter()
            .filter(|e| e.pool.unwrap_or(if e.is_clone { Pool::Clone } else { Pool::Identification }) == p)
            .cloned()
            .collect()
    };

    let contrastive = filter_min_tracks(
        &filter_vocalness(&in_pool(Pool::Contrastive), TRAIN_VOCALNESS)?,
        MIN_CONTRASTIVE_TRACKS,
    )?;
    let c_split = build_contrastive_split(&contrastive, cfg.splits.n_val_singers, seed)?;

    let rules = cfg.splits.id_set.rules();
    let id = filter_min_tracks(&filter_vocalness(&in_pool(Pool::Identification), rules.vocalness)?, rules.min_tracks)?;
    let kept: std::collections::BTreeSet<&str> = id.iter().map(|e| e.singer_id.as_str()).collect();
    let mut id_and_clones = id.clone();
    for e in in_pool(Pool::Clone) {
        if kept.contains(e.label()) {
            id_and_clones.push(e);
        } else {
            log::warn!("clone `{}` dropped: source singer `{}` was filtered out", e.track_id, e.label());
        }
    }
    let id_split = build_id_split(&id_and_clones, seed)?;
    c_split.validate(&manifest.entries)?;
    id_split.validate(&manifest.entries)?;
    c_split.write(&cfg.contrastive_split_path())?;
    id_split.write(&cfg.id_split_path())?;
    log::info!(
        "splits: {} contrastive tracks, {} identification tracks ({} singers)",
        c_split.assignments.len(),
        id_split.assignments.len(),
        kept.len()
    );
    write_run_meta(&cfg.paths.splits_dir, "splits", cfg, seed, started)?;
    Ok((c_split, id_split))
}

/// Contrastive pre-training of one regime's encoder.
pub fn cmd_pretrain(cfg: &ExperimentConfig, regime: Regime) -> Result<crate::contrastive::PretrainOutcome> {
    let started = Instant::now();
    let manifest = load_manifest(cfg)?;
    let split = load_split(&cfg.contrastive_split_path())?;
    split.validate(&manifest.entries)?;
    let entries = split_entries(&manifest, &split);
    let pc = cfg.pretrain_config(regime);
    let pool = ContrastivePool::from_split(&entries, &split, cfg.pretrain.pool_hop_s)?;
    let val = validation_pairs(&entries, &split, regime, pc.seed)?;

    let mut offsets: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (track, off) in pool.segments() {
        offsets.entry(track).or_default().push(off);
    }
    for (track, offs) in &split.fixed_val_segments {
        offsets.entry(track.as_str()).or_default().extend(offs);
    }
    let requests: Vec<MelRequest<'_>> = entries
        .iter()
        .filter_map(|e| {
            offsets.get(e.track_id.as_str()).map(|o| MelRequest {
                entry: e,
                kinds: regime.train_kinds(),
                offsets: o.clone(),
            })
        })
        .collect();
    let bank = MelBank::build(&requests, &stems(cfg), cfg.jobs)?;
    log::info!("{regime}: {} training mels cached", bank.len());

    let model = ContrastiveModel::new(cfg.encoder_config())?;
    let state = TrainState::init(&model, &pc)?;
    let outcome = pretrain(&model, state, &pool, &val, &bank, &pc)?;
    let meta = serde_json::json!({
        "regime": regime,
        "stop": outcome.stop,
        "initial_val_loss": outcome.initial_val_loss,
        "pretrain": pc,
    });
    let dir = cfg.regime_checkpoints(regime);
    outcome.state.to_checkpoint(&model, meta)?.write(&cfg.encoder_stem(regime))?;
    write_history_csv(&dir.join("history.csv"), &outcome.history)?;
    write_run_meta(&dir, &format!("pretrain {regime}"), cfg, pc.seed, started)?;
    Ok(outcome)
}

fn load_frozen(cfg: &ExperimentConfig, regime: Regime) -> Result<FrozenEncoder> {
    let ckpt = require_checkpoint(&cfg.encoder_stem(regime), "pretrain")?;
    let (encoder, params) = load_encoder(&ckpt)?;
    FrozenEncoder::new(encoder, params)
}

/// Embeddings of every identification / clone track's vocal segments.
fn id_embeddings(
    cfg: &ExperimentConfig,
    manifest: &CatalogManifest,
    split: &SplitSpec,
    frozen: &FrozenEncoder,
    kinds: &[SourceKind],
) -> Result<BTreeMap<SourceKind, EmbeddingTable>> {
    let requests = id_embedding_requests(&manifest.entries, split);
    let tables = embed_tracks(frozen, &requests, kinds, &stems(cfg), cfg.jobs)?;
    frozen.verify()?;
    Ok(tables)
}

/// Trains one probe head per (protocol, n_classes, seed) on the frozen
/// encoder of `regime`.
pub fn cmd_probe(cfg: &ExperimentConfig, regime: Regime) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let manifest = load_manifest(cfg)?;
    let split = load_split(&cfg.id_split_path())?;
    split.validate(&manifest.entries)?;
    let frozen = load_frozen(cfg, regime)?;
    let tables = id_embeddings(cfg, &manifest, &split, &frozen, &[regime.eval_kind()])?;
    let ctx = ExperimentContext {
        entries: &manifest.entries,
        split: &split,
        frozen: &frozen,
        tables: &tables,
        regime,
        probe: cfg.probe.clone(),
    };
    let has_clones = !split.tracks(Role::ClonedEval).is_empty();
    let mut written = Vec::new();
    for (protocol, n) in cfg.protocols() {
        if protocol == Protocol::Cloned && !has_clones {
            log::warn!("no clone tracks in the split; skipping the cloned protocol");
            continue;
        }
        for &seed in &cfg.eval.seeds {
            let head = ctx.train_head(protocol, n, seed)?;
            let stem = cfg.probe_stem(regime, protocol, n, seed);
            let meta = serde_json::json!({
                "regime": regime,
                "protocol": protocol,
                "n_classes": n,
                "seed": seed,
                "encoder_checksum": frozen.checksum(),
            });
            head.to_checkpoint(meta).write(&stem)?;
            log::info!("{regime}: trained probe {}", run_name(protocol, n, seed));
            written.push(stem);
        }
    }
    frozen.verify()?;
    write_run_meta(&cfg.regime_checkpoints(regime).join("probes"), &format!("probe {regime}"), cfg, cfg.eval.seeds[0], started)?;
    Ok(written)
}

/// Scores every trained probe of `regime`, writing one JSON per run, the
/// per-track predictions and the aggregate tables.
pub fn cmd_eval(cfg: &ExperimentConfig, regime: Regime) -> Result<Vec<RunResult>> {
    let started = Instant::now();
    let manifest = load_manifest(cfg)?;
    let split = load_split(&cfg.id_split_path())?;
    let frozen = load_frozen(cfg, regime)?;
    let has_clones = !split.tracks(Role::ClonedEval).is_empty();
    let mut heads = Vec::new();
    for (protocol, n) in cfg.protocols() {
        if protocol == Protocol::Cloned && !has_clones {
            continue;
        }
        for &seed in &cfg.eval.seeds {
            let ckpt = require_checkpoint(&cfg.probe_stem(regime, protocol, n, seed), "probe")?;
            let trained_on = ckpt.meta.pointer("/extra/encoder_checksum").and_then(|v| v.as_str());
            if trained_on != Some(frozen.checksum()) {
                return Err(Error::MissingArtifact {
                    path: Checkpoint::header_path(&cfg.probe_stem(regime, protocol, n, seed)),
                    producer: "probe (the encoder changed since the probe was trained)",
                });
            }
            heads.push((protocol, seed, ProbeHead::from_checkpoint(&ckpt)?));
        }
    }
    let tables = id_embeddings(cfg, &manifest, &split, &frozen, &[regime.eval_kind()])?;
    let ctx = ExperimentContext {
        entries: &manifest.entries,
        split: &split,
        frozen: &frozen,
        tables: &tables,
        regime,
        probe: cfg.probe.clone(),
    };
    let dir = cfg.regime_results(regime);
    let mut results = Vec::new();
    for (protocol, seed, head) in &heads {
        let out = ctx.evaluate(head, *protocol, *seed)?;
        let name = run_name(*protocol, head.n_classes(), *seed);
        write_json(&dir.join("runs").join(format!("{name}.json")), &out.result)?;
        write_predictions_csv(&dir.join("predictions").join(format!("{name}.csv")), head, &out.outcomes)?;
        log::info!(
            "{regime} {name}: top-1 {:.3} top-5 {:.3} over {} tracks",
            out.result.top1,
            out.result.top5,
            out.result.n_tracks
        );
        results.push(out.result);
    }
    write_atomic(&dir.join("aggregate.csv"), aggregate_csv(&aggregate(&results)?)?.as_bytes())?;
    let everything = read_all_runs(cfg)?;
    if !everything.is_empty() {
        write_atomic(
            &cfg.paths.results_dir.join("aggregate.csv"),
            aggregate_csv(&aggregate(&everything)?)?.as_bytes(),
        )?;
    }
    write_run_meta(&dir, &format!("eval {regime}"), cfg, cfg.eval.seeds[0], started)?;
    Ok(results)
}

/// Reads every run JSON under the results directory (all regimes), sorted by path.
pub fn read_all_runs(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    let mut out = Vec::new();
    for r in Regime::ALL {
        out.extend(read_runs(cfg, r)?);
    }
    Ok(out)
}

/// Reads the run JSONs of one regime, sorted by file name.
pub fn read_runs(cfg: &ExperimentConfig, regime: Regime) -> Result<Vec<RunResult>> {
    let dir = cfg.regime_results(regime).join("runs");
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect()
}

/// Cosine reference profile of one regime's encoder, per evaluation seed
/// (the seed picks the "other singer" track) and averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineReport {
    pub regime: Regime,
    pub by_seed: BTreeMap<u64, BTreeMap<String, f64>>,
    pub mean: BTreeMap<String, f64>,
}

pub fn cmd_analyze_fig5(cfg: &ExperimentConfig, regime: Regime) -> Result<CosineReport> {
    let started = Instant::now();
    let manifest = load_manifest(cfg)?;
    let split = load_split(&cfg.id_split_path())?;
    let frozen = load_frozen(cfg, regime)?;
    let wanted: Vec<(&CatalogEntry, Vec<f64>)> = manifest
        .entries
        .iter()
        .filter(|e| matches!(split.role(&e.track_id), Some(Role::IdTest | Role::IdVal)))
        .map(|e| (e, vocal_offsets(e, SEGMENT_HOP_S)))
        .collect();
    let tables = embed_tracks(&frozen, &wanted, &SourceKind::ALL, &stems(cfg), cfg.jobs)?;
    let mut by_seed = BTreeMap::new();
    for &seed in &cfg.eval.seeds {
        by_seed.insert(seed, cosine_reference_analysis(&manifest.entries, &split, &tables, seed)?);
    }
    let mut mean = BTreeMap::new();
    for key in COSINE_KEYS {
        let vals: Vec<f64> = by_seed.values().filter_map(|p| p.get(key).copied()).collect();
        if !vals.is_empty() {
            mean.insert(key.to_string(), vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    let dir = cfg.regime_results(regime);
    write_json(&dir.join("cosine_profile.json"), &mean)?;
    let report = CosineReport { regime, by_seed, mean };
    write_json(&dir.join("cosine_profile_by_seed.json"), &report)?;
    write_run_meta(&dir.join("analysis"), &format!("analyze --fig5 {regime}"), cfg, cfg.eval.seeds[0], started)?;
    Ok(report)
}

/// Genre and track-count breakdowns of the identification runs of one
/// regime, one report per class count.
pub fn cmd_analyze_breakdown(cfg: &ExperimentConfig, regime: Regime) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let runs = read_runs(cfg, regime)?;
    let id_runs: Vec<RunResult> = runs.into_iter().filter(|r| r.protocol == Protocol::Identification).collect();
    if id_runs.is_empty() {
        return Err(Error::MissingArtifact {
            path: cfg.regime_results(regime).join("runs"),
            producer: "eval",
        });
    }
    let mut by_n: BTreeMap<usize, Vec<RunResult>> = BTreeMap::new();
    for r in id_runs {
        by_n.entry(r.n_classes).or_default().push(r);
    }
    let mut dirs = Vec::new();
    for (n, runs) in by_n {
        let b = breakdown(&runs, cfg.eval.min_genre_test_tracks)?;
        if !b.omitted_genres.is_empty() {
            log::info!("{regime} n={n}: omitted genres {:?}", b.omitted_genres);
        }
        let dir = cfg.regime_results(regime).join("breakdown").join(format!("n{n}"));
        b.write(&dir, &format!("{regime}, {n} classes"))?;
        write_json(&dir.join("breakdown.json"), &b)?;
        dirs.push(dir);
    }
    write_run_meta(
        &cfg.regime_results(regime).join("breakdown"),
        &format!("analyze --breakdown {regime}"),
        cfg,
        cfg.eval.seeds[0],
        started,
    )?;
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("schema_version = 1\n").unwrap();
        assert_eq!(cfg.preset, Preset::Desk);
        assert_eq!(cfg.eval.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.pretrain_config(Regime::Vocal).batch_pairs, 32);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "schema_version = 2\n",
            "unknown_key = 1\n",
            "[eval]\nseeds = [1, 1]\n",
            "[eval]\nn_classes = [1]\n",
            "jobs = 0\n",
            "[pretrain]\nlr_typo = 0.1\n",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn overrides_apply_to_pretrain() {
        let cfg = ExperimentConfig::from_toml("seed = 3\n[pretrain]\nlr = 0.001\nmax_epochs = 2\n").unwrap();
        let pc = cfg.pretrain_config(Regime::Hybrid);
        assert_eq!((pc.lr, pc.max_epochs, pc.seed), (0.001, 2, 3));
    }

    #[test]
    fn relative_paths_are_rebased() {
        let mut cfg = ExperimentConfig::default();
        cfg.rebase(Path::new("/tmp/exp"));
        assert_eq!(cfg.manifest_path(), Path::new("/tmp/exp/catalog/manifest.jsonl"));
    }

    #[test]
    fn downstream_commands_name_their_producer() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.rebase(dir.path());
        match cmd_splits(&cfg) {
            Err(Error::MissingArtifact { producer, .. }) => assert_eq!(producer, "catalog"),
            other => panic!("unexpected {other:?}"),
        }
        match cmd_analyze_breakdown(&cfg, Regime::Vocal) {
            Err(Error::MissingArtifact { producer, .. }) => assert_eq!(producer, "eval"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
