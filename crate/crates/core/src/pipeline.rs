//! End-to-end orchestration over a dataset manifest: screening, verification,
//! evaluation, and figure rendering, with one output directory per series.
//!
//! A failing series is recorded in `status.json` and never stops the others.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::{
    CachedProvider, EmbeddingProvider, FeatureCache, ProviderId, ReferenceProvider, RemoteConfig,
    RemoteProvider, StoreProvider, REFERENCE_DIM,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, evaluate_detections, f1_max, EvalReport, RecallBasis, SeriesEval, SweepSettings,
    TokenSummary,
};
use crate::ingest::{load_labels, load_series, preprocess, LabelSet, ManifestEntry, TimeSeries};
use crate::interval::DetectionSet;
use crate::par::{self, Parallelism};
use crate::raster::{render_full_annotated, render_result_plot, AnnotatedPlotSpec};
use crate::screen::{
    render_windows, screen_series, smooth_ewma, threshold, ScreenConfig, ScreenOutput,
};
use crate::verify::{
    verify, ChatClient, ChatConfig, MockEchoClient, TokenStats, VerificationRequest, VerifyOutcome,
    VisionClient,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    #[default]
    Reference,
    Remote,
    /// Read-only feature cache; misses are errors.
    Store,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Provider name sent to remote services and used in cache paths.
    pub name: String,
    pub p: usize,
    /// Feature dimension; ignored by the reference backend.
    pub d: usize,
    pub cache_dir: Option<PathBuf>,
    pub remote: RemoteConfig,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Reference,
            name: "vit-b16".into(),
            p: 14,
            d: 768,
            cache_dir: None,
            remote: RemoteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClientKind {
    #[default]
    MockEcho,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientConfig {
    pub kind: ClientKind,
    /// Confidence the echo client assigns to every proposal.
    pub mock_confidence: u8,
    pub chat: ChatConfig,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            kind: ClientKind::MockEcho,
            mock_confidence: 3,
            chat: ChatConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Apply min-max normalization and linear detrending before screening.
    pub preprocess: bool,
    pub screen: ScreenConfig,
    pub provider: ProviderConfig,
    pub client: ClientConfig,
    pub min_conf: u8,
    pub plot: AnnotatedPlotSpec,
    pub recall_basis: RecallBasis,
    pub parallelism: Parallelism,
    /// Worker threads for series-level parallelism; 0 uses every core.
    pub workers: usize,
    pub dump_map: bool,
    pub write_rasters: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifest: None,
            output_dir: PathBuf::from("out"),
            preprocess: true,
            screen: ScreenConfig::default(),
            provider: ProviderConfig::default(),
            client: ClientConfig::default(),
            min_conf: 2,
            plot: AnnotatedPlotSpec::default(),
            recall_basis: RecallBasis::Predicted,
            parallelism: Parallelism::Parallel,
            workers: 0,
            dump_map: false,
            write_rasters: false,
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML file; unknown keys are rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.screen.validate()?;
        self.plot
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(1..=3).contains(&self.min_conf) {
            return Err(Error::Config(format!(
                "min_conf {} outside 1..=3",
                self.min_conf
            )));
        }
        if !(1..=3).contains(&self.client.mock_confidence) {
            return Err(Error::Config("mock_confidence outside 1..=3".into()));
        }
        if self.provider.kind == ProviderKind::Store && self.provider.cache_dir.is_none() {
            return Err(Error::Config("store provider needs cache_dir".into()));
        }
        self.provider_id()?;
        Ok(())
    }

    pub fn provider_id(&self) -> Result<ProviderId> {
        let p = &self.provider;
        let (name, d) = match p.kind {
            ProviderKind::Reference => ("reference", REFERENCE_DIM),
            _ => (p.name.as_str(), p.d),
        };
        ProviderId::new(name, p.p, d, self.screen.window_length)
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Resolved configuration as embedded in reports. The output directory is
    /// left out so that reruns elsewhere produce identical reports.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        v
    }

    pub fn build_provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let id = self.provider_id()?;
        let cache = self.provider.cache_dir.as_ref().map(FeatureCache::new);
        Ok(match (self.provider.kind, cache) {
            (ProviderKind::Reference, None) => {
                Box::new(ReferenceProvider::new(id.p, id.input_side)?)
            }
            (ProviderKind::Reference, Some(c)) => Box::new(CachedProvider::new(
                ReferenceProvider::new(id.p, id.input_side)?,
                c,
            )),
            (ProviderKind::Remote, None) => {
                Box::new(RemoteProvider::new(id, self.provider.remote.clone())?)
            }
            (ProviderKind::Remote, Some(c)) => Box::new(CachedProvider::new(
                RemoteProvider::new(id, self.provider.remote.clone())?,
                c,
            )),
            (ProviderKind::Store, Some(c)) => Box::new(StoreProvider::new(id, c)?),
            (ProviderKind::Store, None) => {
                return Err(Error::Config("store provider needs cache_dir".into()))
            }
        })
    }

    pub fn build_client(&self) -> Result<Box<dyn VisionClient>> {
        Ok(match self.client.kind {
            ClientKind::MockEcho => Box::new(MockEchoClient::new(self.client.mock_confidence)),
            ClientKind::Chat => Box::new(ChatClient::new(self.client.chat.clone())?),
        })
    }

    fn sweep(&self) -> SweepSettings {
        SweepSettings {
            ewma_span: self.screen.ewma_span,
            gap_merge: self.screen.gap_merge,
            basis: self.recall_basis,
        }
    }
}

/// One manifest entry, loaded.
#[derive(Debug, Clone)]
pub struct SeriesInput {
    pub id: String,
    pub dataset: String,
    pub series: TimeSeries,
    pub labels: Option<LabelSet>,
    pub changepoint: Option<usize>,
}

impl SeriesInput {
    /// Loads the series and, if listed, its labels. Unreadable labels only
    /// produce a warning; evaluation later skips the series.
    pub fn load(entry: &ManifestEntry) -> Result<Self> {
        let id = entry.series_id();
        let raw = load_series(&entry.series)?;
        let series = TimeSeries::new(id.clone(), raw.values().to_vec())?;
        let labels = match &entry.labels {
            None => None,
            Some(path) => match load_labels(path).and_then(|l| l.validate(series.len()).map(|_| l))
            {
                Ok(l) => Some(l),
                Err(e) => {
                    log::warn!("{id}: ignoring labels: {e}");
                    None
                }
            },
        };
        Ok(SeriesInput {
            id,
            dataset: entry.dataset_name().to_string(),
            series,
            labels,
            changepoint: entry.changepoint,
        })
    }

    /// The series as handed to screening.
    pub fn prepared(&self, config: &PipelineConfig) -> Result<TimeSeries> {
        if config.preprocess {
            preprocess(&self.series, self.changepoint)
        } else {
            Ok(self.series.clone())
        }
    }
}

/// Directory name for a series id: anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn series_dir(out: &Path, id: &str) -> PathBuf {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    out.join(safe)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Little-endian `f64` dump.
pub fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_file(path, &bytes)
}

pub fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::InvalidValue(format!(
            "{}: length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Contents of `proposals.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalsFile {
    pub series_id: String,
    pub series_len: usize,
    pub windows: usize,
    pub alpha: f64,
    pub tau: f64,
    pub proposals: DetectionSet,
    /// Rows of `map.bin` when it was written.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_rows: Option<usize>,
}

/// Per-series outcome of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStatus {
    pub id: String,
    pub dataset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SeriesStatus {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub series: Vec<SeriesStatus>,
}

impl StageSummary {
    fn collect(stage: &str, entries: &[ManifestEntry], results: Vec<Result<()>>) -> Self {
        let series = entries
            .iter()
            .zip(results)
            .map(|(e, r)| {
                let error = r.err().map(|e| e.to_string());
                if let Some(msg) = &error {
                    log::error!("{stage} failed for {}: {msg}", e.series_id());
                }
                SeriesStatus {
                    id: e.series_id(),
                    dataset: e.dataset_name().to_string(),
                    error,
                }
            })
            .collect();
        StageSummary {
            stage: stage.to_string(),
            series,
        }
    }

    pub fn failures(&self) -> usize {
        self.series.iter().filter(|s| !s.ok()).count()
    }

    /// True when there was work and none of it succeeded.
    pub fn all_failed(&self) -> bool {
        !self.series.is_empty() && self.failures() == self.series.len()
    }

    fn write(&self, out: &Path) -> Result<()> {
        write_json(&out.join(format!("status-{}.json", self.stage)), self)
    }
}

/// Screens one loaded series in memory.
pub fn screen_input(
    input: &SeriesInput,
    provider: &dyn EmbeddingProvider,
    config: &PipelineConfig,
) -> Result<ScreenOutput> {
    let prepared = input.prepared(config)?;
    screen_series(&prepared, provider, &config.screen, config.parallelism)
}

fn screen_entry(
    entry: &ManifestEntry,
    provider: &dyn EmbeddingProvider,
    config: &PipelineConfig,
) -> Result<()> {
    let input = SeriesInput::load(entry)?;
    let out = screen_input(&input, provider, config)?;
    let dir = series_dir(&config.output_dir, &input.id);
    write_f64s(&dir.join("scores.bin"), &out.raw_scores)?;
    if config.dump_map {
        write_f64s(&dir.join("map.bin"), &out.map.to_dense())?;
    }
    if config.write_rasters {
        let prepared = input.prepared(config)?;
        let images = render_windows(&prepared, &out.windows, config.parallelism)?;
        for (img, start) in images.iter().zip(&out.windows.starts) {
            img.save_png(&dir.join(format!("win_{start:06}.png")))?;
        }
    }
    write_json(
        &dir.join("proposals.json"),
        &ProposalsFile {
            series_id: input.id.clone(),
            series_len: input.series.len(),
            windows: out.windows.count(),
            alpha: config.screen.proposal_alpha,
            tau: out.tau,
            proposals: out.proposals,
            map_rows: config.dump_map.then(|| out.map.rows()),
        },
    )
}

fn for_each_entry<F>(entries: &[ManifestEntry], config: &PipelineConfig, f: F) -> Vec<Result<()>>
where
    F: Fn(&ManifestEntry) -> Result<()> + Sync + Send,
{
    par::install(config.workers, config.parallelism, || {
        par::map(entries, config.parallelism, &f)
    })
}

/// Writes `proposals.json` and `scores.bin` (plus optional map and window
/// rasters) for every entry.
pub fn run_screen(config: &PipelineConfig, entries: &[ManifestEntry]) -> Result<StageSummary> {
    config.validate()?;
    let provider = config.build_provider()?;
    let results = for_each_entry(entries, config, |e| {
        screen_entry(e, provider.as_ref(), config)
    });
    let summary = StageSummary::collect("screen", entries, results);
    summary.write(&config.output_dir)?;
    Ok(summary)
}

/// Usage for one series, as listed in `tokens.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesTokens {
    pub id: String,
    #[serde(flatten)]
    pub usage: TokenStats,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokensFile {
    pub series: Vec<SeriesTokens>,
    pub total: TokenSummary,
}

impl TokensFile {
    pub fn from_series(series: Vec<SeriesTokens>) -> Self {
        let prompt_tokens = series.iter().map(|s| s.usage.prompt_tokens).sum();
        let completion_tokens = series.iter().map(|s| s.usage.completion_tokens).sum();
        let n = series.len();
        let mean = if n == 0 {
            0.0
        } else {
            (prompt_tokens + completion_tokens) as f64 / n as f64
        };
        TokensFile {
            total: TokenSummary {
                series: n,
                prompt_tokens,
                completion_tokens,
                mean_tokens_per_series: mean,
            },
            series,
        }
    }
}

fn verify_entry(
    entry: &ManifestEntry,
    client: &dyn VisionClient,
    config: &PipelineConfig,
) -> Result<()> {
    let input = SeriesInput::load(entry)?;
    let dir = series_dir(&config.output_dir, &input.id);
    let proposals: ProposalsFile = read_json(&dir.join("proposals.json"))?;
    if proposals.series_len != input.series.len() {
        return Err(Error::InvalidValue(format!(
            "proposals cover {} steps but the series has {}",
            proposals.series_len,
            input.series.len()
        )));
    }
    let req = VerificationRequest::build(&input.series, &proposals.proposals, &config.plot)?;
    let outcome = verify(&req, client, config.min_conf)?;
    write_json(&dir.join("final.json"), &outcome)
}

/// Sends each series' proposals to the configured client and writes
/// `final.json` per series plus a run-wide `tokens.json`.
pub fn run_verify(config: &PipelineConfig, entries: &[ManifestEntry]) -> Result<StageSummary> {
    config.validate()?;
    let client = config.build_client()?;
    let results = for_each_entry(entries, config, |e| {
        verify_entry(e, client.as_ref(), config)
    });
    let summary = StageSummary::collect("verify", entries, results);

    let tokens: Vec<SeriesTokens> = summary
        .series
        .iter()
        .filter(|s| s.ok())
        .filter_map(|s| {
            let path = series_dir(&config.output_dir, &s.id).join("final.json");
            let outcome: VerifyOutcome = read_json(&path).ok()?;
            Some(SeriesTokens {
                id: s.id.clone(),
                usage: outcome.usage,
                retries: outcome.retries,
            })
        })
        .collect();
    write_json(
        &config.output_dir.join("tokens.json"),
        &TokensFile::from_series(tokens),
    )?;
    summary.write(&config.output_dir)?;
    Ok(summary)
}

/// Evaluates whatever stage outputs exist: `scores.bin` through the α sweep
/// and `final.json` at its single operating point. Series without labels are
/// skipped with a warning.
pub fn run_eval(config: &PipelineConfig, entries: &[ManifestEntry]) -> Result<EvalReport> {
    config.validate()?;
    let mut screen_evals: Vec<SeriesEval> = Vec::new();
    let mut verify_evals: Vec<SeriesEval> = Vec::new();
    let mut tokens: Vec<SeriesTokens> = Vec::new();

    for entry in entries {
        let input = match SeriesInput::load(entry) {
            Ok(i) => i,
            Err(e) => {
                log::warn!("{}: skipped in evaluation: {e}", entry.series_id());
                continue;
            }
        };
        let Some(labels) = &input.labels else {
            log::warn!("{}: no labels, skipped in evaluation", input.id);
            continue;
        };
        let dir = series_dir(&config.output_dir, &input.id);
        let scores_path = dir.join("scores.bin");
        if scores_path.exists() {
            let scores = read_f64s(&scores_path)?;
            if scores.len() != input.series.len() {
                log::warn!("{}: scores.bin length mismatch, skipped", input.id);
            } else {
                screen_evals.push(f1_max(
                    &input.id,
                    &input.dataset,
                    &scores,
                    labels.intervals(),
                    &config.screen.alpha_list,
                    config.sweep(),
                )?);
            }
        }
        let final_path = dir.join("final.json");
        if final_path.exists() {
            let outcome: VerifyOutcome = read_json(&final_path)?;
            verify_evals.push(evaluate_detections(
                &input.id,
                &input.dataset,
                &outcome.final_set,
                labels.intervals(),
                config.recall_basis,
            ));
            tokens.push(SeriesTokens {
                id: input.id.clone(),
                usage: outcome.usage,
                retries: outcome.retries,
            });
        }
    }

    let mut methods = Vec::new();
    if !screen_evals.is_empty() {
        methods.push(aggregate("screen", &screen_evals, config.recall_basis)?);
    }
    if !verify_evals.is_empty() {
        methods.push(aggregate("verify", &verify_evals, config.recall_basis)?);
    }
    if methods.is_empty() {
        log::warn!("nothing to evaluate");
    }
    let report = EvalReport {
        config: config.echo(),
        methods,
        tokens: (!tokens.is_empty()).then(|| TokensFile::from_series(tokens).total),
    };
    write_file(
        &config.output_dir.join("report.json"),
        (report.to_json() + "\n").as_bytes(),
    )?;
    write_file(
        &config.output_dir.join("report.txt"),
        report.to_table().as_bytes(),
    )?;
    Ok(report)
}

/// Outcome of a full run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub screen: StageSummary,
    pub verify: Option<StageSummary>,
    pub report: EvalReport,
}

impl RunSummary {
    pub fn all_failed(&self) -> bool {
        self.screen.all_failed() || self.verify.as_ref().is_some_and(StageSummary::all_failed)
    }
}

/// Screening, then verification unless `stage1_only`, then evaluation.
pub fn run_all(
    config: &PipelineConfig,
    entries: &[ManifestEntry],
    stage1_only: bool,
) -> Result<RunSummary> {
    let screen = run_screen(config, entries)?;
    let verify = if stage1_only {
        None
    } else {
        Some(run_verify(config, entries)?)
    };
    let report = run_eval(config, entries)?;
    Ok(RunSummary {
        screen,
        verify,
        report,
    })
}

fn render_entry(entry: &ManifestEntry, config: &PipelineConfig) -> Result<()> {
    let input = SeriesInput::load(entry)?;
    let dir = series_dir(&config.output_dir, &input.id);
    render_full_annotated(&input.series, &config.plot)?.save_png(&dir.join("full.png"))?;

    let scores_path = dir.join("scores.bin");
    if !scores_path.exists() {
        return Ok(());
    }
    let raw = read_f64s(&scores_path)?;
    let smoothed = smooth_ewma(&raw, config.screen.ewma_span)?;
    let tau = threshold(&smoothed, config.screen.proposal_alpha)?;
    let final_path = dir.join("final.json");
    let detections = if final_path.exists() {
        read_json::<VerifyOutcome>(&final_path)?.final_set
    } else {
        read_json::<ProposalsFile>(&dir.join("proposals.json"))?.proposals
    };
    let prepared = input.prepared(config)?;
    let labels = input
        .labels
        .as_ref()
        .map(|l| l.intervals().to_vec())
        .unwrap_or_default();
    render_result_plot(
        prepared.values(),
        &smoothed,
        Some(tau),
        &detections,
        &labels,
        config.plot.width,
        config.plot.height,
    )
    .save_png(&dir.join("result.png"))
}

/// Writes `full.png` (the plot a verifier sees) and, once scores exist,
/// `result.png` with scores, threshold, detections, and labels.
pub fn run_render(config: &PipelineConfig, entries: &[ManifestEntry]) -> Result<StageSummary> {
    config.validate()?;
    let results = for_each_entry(entries, config, |e| render_entry(e, config));
    let summary = StageSummary::collect("render", entries, results);
    summary.write(&config.output_dir)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(toml::from_str::<PipelineConfig>("min_conf = 2\nbogus = 1").is_err());
        let c: PipelineConfig = toml::from_str("[screen]\nquantile_q = 0.5").unwrap();
        assert_eq!(c.screen.quantile_q, 0.5);
        assert_eq!(c.screen.window_length, 224);
        c.validate().unwrap();
    }

    #[test]
    fn echo_omits_output_dir() {
        let mut a = PipelineConfig::default();
        let mut b = PipelineConfig::default();
        a.output_dir = "x".into();
        b.output_dir = "y".into();
        assert_eq!(a.echo(), b.echo());
    }

    #[test]
    fn f64_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let v = vec![0.1, -2.5, f64::NAN, 1e300];
        write_f64s(&path, &v).unwrap();
        let back = read_f64s(&path).unwrap();
        assert_eq!(back.len(), 4);
        assert!(back[2].is_nan());
        assert_eq!((back[0], back[1], back[3]), (0.1, -2.5, 1e300));
    }

    #[test]
    fn series_dir_is_sanitized() {
        assert_eq!(
            series_dir(Path::new("o"), "a/b c.csv"),
            Path::new("o").join("a_b_c.csv")
        );
    }
}
