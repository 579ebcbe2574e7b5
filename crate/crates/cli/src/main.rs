use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use patchscreen::eval::RecallBasis;
use patchscreen::ingest::{write_series, DatasetManifest, ManifestEntry};
use patchscreen::pipeline::{
    run_all, run_eval, run_render, run_screen, run_verify, ClientKind, PipelineConfig,
    ProviderKind, StageSummary,
};
use patchscreen::screen::Variant;
use patchscreen::synthetic::SyntheticSpec;
use patchscreen::Parallelism;

#[derive(Parser)]
#[command(
    name = "patchscreen",
    version,
    about = "Visual screening and multimodal verification for time-series anomalies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every series and write proposals.json and scores.bin.
    Screen(Common),
    /// Ask the configured client to confirm the proposals; writes final.json and tokens.json.
    Verify(Common),
    /// Evaluate scores and final detections against labels; writes report.json and report.txt.
    Eval(Common),
    /// Screen, verify, and evaluate.
    Run {
        #[command(flatten)]
        common: Common,
        /// Stop after screening (evaluation still runs).
        #[arg(long)]
        stage1_only: bool,
    },
    /// Draw the annotated full-series plot and, when scores exist, the result figure.
    Render(Common),
    /// Write a seeded synthetic dataset (series, labels, manifest).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        length: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    MedianReference,
    AllPairs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Reference,
    Remote,
    Store,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClientArg {
    MockEcho,
    Chat,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Predicted,
    GroundTruth,
}

/// Flags shared by the pipeline commands. Each one overrides the matching
/// key of the config file.
#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// JSON dataset manifest.
    #[arg(long, short)]
    manifest: Option<PathBuf>,
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,

    #[arg(long)]
    window_length: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Pooling kernels, comma separated.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    #[arg(long)]
    quantile_q: Option<f64>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    exclude_self: bool,
    #[arg(long)]
    ewma_span: Option<usize>,
    /// Threshold sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long)]
    proposal_alpha: Option<f64>,
    #[arg(long)]
    gap_merge: Option<usize>,
    #[arg(long)]
    no_preprocess: bool,

    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    #[arg(long)]
    provider_name: Option<String>,
    #[arg(long)]
    provider_url: Option<String>,
    /// Patch-grid side.
    #[arg(long)]
    patch_grid: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,

    #[arg(long, value_enum)]
    client: Option<ClientArg>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    mock_confidence: Option<u8>,
    #[arg(long)]
    min_conf: Option<u8>,

    #[arg(long, value_enum)]
    recall_basis: Option<BasisArg>,
    /// Disable multithreading.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    dump_map: bool,
    #[arg(long)]
    write_rasters: bool,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        if self.manifest.is_some() {
            c.manifest = self.manifest.clone();
        }
        set!(c.output_dir, self.output_dir.clone());
        set!(c.screen.window_length, self.window_length);
        if self.stride.is_some() {
            c.screen.stride = self.stride;
        }
        set!(c.screen.scales, self.scales.clone());
        set!(c.screen.quantile_q, self.quantile_q);
        set!(
            c.screen.variant,
            self.variant.map(|v| match v {
                VariantArg::MedianReference => Variant::MedianReference,
                VariantArg::AllPairs => Variant::AllPairs,
            })
        );
        c.screen.exclude_self |= self.exclude_self;
        set!(c.screen.ewma_span, self.ewma_span);
        set!(c.screen.alpha_list, self.alpha.clone());
        set!(c.screen.proposal_alpha, self.proposal_alpha);
        set!(c.screen.gap_merge, self.gap_merge);
        c.preprocess &= !self.no_preprocess;

        set!(
            c.provider.kind,
            self.provider.map(|p| match p {
                ProviderArg::Reference => ProviderKind::Reference,
                ProviderArg::Remote => ProviderKind::Remote,
                ProviderArg::Store => ProviderKind::Store,
            })
        );
        set!(c.provider.name, self.provider_name.clone());
        set!(c.provider.remote.url, self.provider_url.clone());
        set!(c.provider.p, self.patch_grid);
        set!(c.provider.d, self.feature_dim);
        if self.cache_dir.is_some() {
            c.provider.cache_dir = self.cache_dir.clone();
        }

        set!(
            c.client.kind,
            self.client.map(|k| match k {
                ClientArg::MockEcho => ClientKind::MockEcho,
                ClientArg::Chat => ClientKind::Chat,
            })
        );
        set!(c.client.chat.endpoint, self.endpoint.clone());
        set!(c.client.chat.model, self.model.clone());
        set!(c.client.chat.api_key_env, self.api_key_env.clone());
        set!(c.client.mock_confidence, self.mock_confidence);
        set!(c.min_conf, self.min_conf);

        set!(
            c.recall_basis,
            self.recall_basis.map(|b| match b {
                BasisArg::Predicted => RecallBasis::Predicted,
                BasisArg::GroundTruth => RecallBasis::GroundTruth,
            })
        );
        if self.sequential {
            c.parallelism = Parallelism::Sequential;
        }
        set!(c.workers, self.workers);
        c.dump_map |= self.dump_map;
        c.write_rasters |= self.write_rasters;

        c.validate()?;
        Ok(c)
    }
}

fn load_entries(config: &PipelineConfig) -> anyhow::Result<Vec<ManifestEntry>> {
    let Some(path) = &config.manifest else {
        bail!("no manifest given (use --manifest or the `manifest` config key)");
    };
    let manifest =
        DatasetManifest::load(path).with_context(|| format!("loading {}", path.display()))?;
    if manifest.entries.is_empty() {
        log::warn!("manifest {} lists no series", path.display());
    }
    Ok(manifest.entries)
}

fn report_stage(summary: &StageSummary) -> bool {
    let n = summary.series.len();
    let failed = summary.failures();
    eprintln!("{}: {} of {n} series succeeded", summary.stage, n - failed);
    summary.all_failed()
}

fn write_synthetic(
    out: &Path,
    count: usize,
    seed: u64,
    length: Option<usize>,
) -> anyhow::Result<()> {
    let mut spec = SyntheticSpec::default();
    if let Some(len) = length {
        spec.length = len;
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut entries = Vec::with_capacity(count);
    for s in spec.suite(seed, count)? {
        let id = s.series.id().to_string();
        let series = PathBuf::from(format!("{id}.csv"));
        let labels = PathBuf::from(format!("{id}.labels.json"));
        write_series(&s.series, &out.join(&series))?;
        std::fs::write(out.join(&labels), s.labels.to_json())?;
        entries.push(ManifestEntry {
            id: Some(id),
            series,
            labels: Some(labels),
            changepoint: None,
            dataset: Some("synthetic".into()),
        });
    }
    DatasetManifest { entries }.save(&out.join("manifest.json"))?;
    eprintln!("wrote {count} series to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let common = match &cli.command {
        Command::Screen(c) | Command::Verify(c) | Command::Eval(c) | Command::Render(c) => c,
        Command::Run { common, .. } => common,
        Command::Synth {
            out,
            count,
            seed,
            length,
        } => {
            write_synthetic(out, *count, *seed, *length)?;
            return Ok(true);
        }
    };
    let config = common.resolve()?;
    if common.print_config {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(true);
    }
    let entries = load_entries(&config)?;
    if entries.is_empty() {
        return Ok(true);
    }

    let failed = match &cli.command {
        Command::Screen(_) => report_stage(&run_screen(&config, &entries)?),
        Command::Verify(_) => report_stage(&run_verify(&config, &entries)?),
        Command::Render(_) => report_stage(&run_render(&config, &entries)?),
        Command::Eval(_) => {
            print!("{}", run_eval(&config, &entries)?.to_table());
            false
        }
        Command::Run { stage1_only, .. } => {
            let summary = run_all(&config, &entries, *stage1_only)?;
            report_stage(&summary.screen);
            if let Some(v) = &summary.verify {
                report_stage(v);
            }
            print!("{}", summary.report.to_table());
            summary.all_failed()
        }
        Command::Synth { .. } => unreachable!(),
    };
    Ok(!failed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("every series failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
