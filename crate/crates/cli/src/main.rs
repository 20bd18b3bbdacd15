use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use noiseprobe::corruptions::{robustness_sweep, CorruptionKind};
use noiseprobe::detector::{calibrate_threshold, landscape, Calibration, LandscapeSpec};
use noiseprobe::embedder::{preprocess_tensor, PreprocessSidecar};
use noiseprobe::fixtures::{generate_fixture, SyntheticDatasetSpec};
use noiseprobe::harness::{
    ablate_noise, default_lambda_grid, load_manifest, load_samples, score_dataset, sweep_lambda, write_atomic,
    write_report, LoadedSample, Manifest, Metric, RunConfig, SampleFailure, ScoreOutcome, ABLATION_LAMBDA,
};
use noiseprobe::{build_backbone, evaluate_records, EmbedderConfig, Label, NoiseDistribution};

const CALIBRATION_FILE: &str = "calibration.json";

#[derive(Parser)]
#[command(
    name = "noiseprobe",
    version,
    about = "Detect generated images by embedding sensitivity to small noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every manifest entry and write scores.jsonl.
    Score(Common),
    /// Pick the threshold from real-image scores and write calibration.json.
    Calibrate(Common),
    /// AUC/AP per generator; threshold metrics if a calibration exists.
    Evaluate(Common),
    /// Score under each corruption level (all images corrupted).
    Robustness {
        #[command(flatten)]
        common: Common,
        /// gaussian_noise, jpeg or gaussian_blur; all three when omitted.
        #[arg(long)]
        kind: Option<CorruptionKind>,
        /// Seed for the noise corruption.
        #[arg(long, default_value_t = 0)]
        corruption_seed: u64,
    },
    /// AUC/AP and mean similarities over a grid of noise intensities.
    SweepLambda(Common),
    /// Every noise distribution at a fixed intensity.
    AblateNoise(Common),
    /// Mean similarity over a 2-D grid of perturbation directions.
    Landscape {
        #[command(flatten)]
        common: Common,
        /// Which images to average over.
        #[arg(long, default_value = "real")]
        label: Label,
        /// Grid spacing; the grid spans [-extent, extent] on both axes.
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value_t = 0.5)]
        extent: f64,
        #[arg(long, default_value_t = 0)]
        direction_seed: u64,
        /// Use at most this many images (manifest order).
        #[arg(long, default_value_t = 16)]
        max_images: usize,
    },
    /// Write a synthetic two-population dataset with analytic expectations.
    GenerateFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        n_real: usize,
        #[arg(long, default_value_t = 100)]
        n_fake: usize,
        #[arg(long, default_value_t = 16)]
        image_dim: usize,
        #[arg(long, default_value_t = 8)]
        image_size: usize,
        #[arg(long, default_value_t = 1.0)]
        k_real: f64,
        #[arg(long, default_value_t = 2.0)]
        k_fake: f64,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest_real: Option<PathBuf>,
    #[arg(long)]
    manifest_fake: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise intensity.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    distribution: Option<NoiseDistribution>,
    /// Target true-negative rate for calibration.
    #[arg(long)]
    tnr: Option<f64>,
    /// Noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Embedder config: a TOML embedder table or a preprocess.json sidecar.
    #[arg(long)]
    backbone_config: Option<PathBuf>,
    /// Comma-separated sweep values (lambdas, or corruption levels).
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
}

/// A bad flag combination or input caught before any work starts.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_backbone_config(path: &Path) -> Result<EmbedderConfig> {
    if path.extension().is_some_and(|e| e == "json") {
        let sidecar = PreprocessSidecar::load(path)?;
        let cfg = EmbedderConfig {
            model_path: Some(sibling_model(path)?),
            ..EmbedderConfig::default()
        };
        return Ok(cfg.with_sidecar(&sidecar));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: EmbedderConfig =
        toml::from_str(&text).map_err(|e| noiseprobe::Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(p) = cfg.model_path.as_mut() {
        if p.is_relative() {
            *p = path.parent().unwrap_or(Path::new("")).join(&*p);
        }
    }
    Ok(cfg)
}

/// The single `.onnx` file next to a sidecar.
fn sibling_model(sidecar: &Path) -> Result<PathBuf> {
    let dir = sidecar
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut models: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "onnx"))
        .collect();
    models.sort();
    match models.len() {
        1 => Ok(models.remove(0)),
        0 => Err(usage(format!("no .onnx model next to {}", sidecar.display()))),
        _ => Err(usage(format!(
            "several .onnx models next to {}; use a TOML backbone config",
            sidecar.display()
        ))),
    }
}

fn resolve_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &c.backbone_config {
        cfg.embedder = load_backbone_config(p)?;
        cfg.apply_sidecar()?;
    }
    if c.manifest_real.is_some() || c.manifest_fake.is_some() {
        cfg.manifest_real = c.manifest_real.clone();
        cfg.manifest_fake = c.manifest_fake.clone();
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(l) = c.lambda {
        cfg.detector.noise.lambda = l;
    }
    if let Some(d) = c.distribution {
        cfg.detector.noise.distribution = d;
    }
    if let Some(s) = c.seed {
        cfg.detector.noise.seed = s;
    }
    if let Some(t) = c.tnr {
        cfg.target_tnr = t;
    }
    if cfg.manifest_real.is_none() && cfg.manifest_fake.is_none() {
        return Err(usage(
            "no manifest given (use --manifest-real/--manifest-fake or set them in the config)",
        ));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_manifests(cfg: &RunConfig) -> Result<Manifest> {
    let parts = [&cfg.manifest_real, &cfg.manifest_fake]
        .into_iter()
        .flatten()
        .map(|p| load_manifest(p))
        .collect::<noiseprobe::Result<Vec<_>>>()?;
    let manifest = Manifest::merge(&parts)?;
    if let Some(w) = manifest.format_warning() {
        warn!("{w}");
    }
    Ok(manifest)
}

struct Session {
    cfg: RunConfig,
    manifest: Manifest,
    backbone: noiseprobe::Backbone,
}

impl Session {
    fn open(c: &Common) -> Result<Self> {
        let cfg = resolve_config(c)?;
        let manifest = load_manifests(&cfg)?;
        let backbone = build_backbone(&cfg.embedder)?;
        std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
        Ok(Self {
            cfg,
            manifest,
            backbone,
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn score(&self) -> Result<ScoreOutcome> {
        let outcome = score_dataset(&self.manifest, &self.cfg, &self.backbone)?;
        println!(
            "scored {} samples ({} computed, {} cached), {} skipped -> {}",
            outcome.records.len(),
            outcome.computed,
            outcome.reused,
            outcome.failures.len(),
            outcome.scores_path.display()
        );
        Ok(outcome)
    }

    fn samples(&self) -> Result<(Vec<LoadedSample>, Vec<SampleFailure>)> {
        self.cfg.write_resolved(&self.cfg.output_dir)?;
        let (samples, failures) = load_samples(&self.manifest);
        if samples.is_empty() {
            bail!("no decodable images");
        }
        Ok((samples, failures))
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let path = self.out(name);
        write_atomic(&path, text.as_bytes())?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    fn load_calibration(&self) -> Result<Option<f64>> {
        let path = self.out(CALIBRATION_FILE);
        if path.is_file() {
            let text = std::fs::read_to_string(&path)?;
            let cal: Calibration =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            info!("using epsilon {} from {}", cal.epsilon, path.display());
            return Ok(Some(cal.epsilon));
        }
        Ok(self.cfg.detector.epsilon)
    }
}

/// Exit status after a run that may have skipped undecodable inputs.
fn finish(failures: &[SampleFailure]) -> ExitCode {
    if failures.is_empty() {
        return ExitCode::SUCCESS;
    }
    eprintln!("{} sample(s) could not be processed:", failures.len());
    for f in failures {
        eprintln!("  {} ({}): {}", f.sample_id, f.path.display(), f.message);
    }
    ExitCode::FAILURE
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Score(c) => {
            let s = Session::open(&c)?;
            let outcome = s.score()?;
            Ok(finish(&outcome.failures))
        }
        Command::Calibrate(c) => {
            let s = Session::open(&c)?;
            let outcome = s.score()?;
            let real: Vec<f64> = outcome
                .records
                .iter()
                .filter(|r| r.label == Label::Real)
                .map(|r| r.similarity)
                .collect();
            let cal = calibrate_threshold(&real, s.cfg.target_tnr)?;
            println!(
                "epsilon = {} (target TNR {}, achieved {} on {} real images)",
                cal.epsilon, cal.target_tnr, cal.achieved_tnr, cal.n_real
            );
            s.write_json(CALIBRATION_FILE, &cal)?;
            Ok(finish(&outcome.failures))
        }
        Command::Evaluate(c) => {
            let s = Session::open(&c)?;
            let outcome = s.score()?;
            let epsilon = s.load_calibration()?;
            let report = evaluate_records(&outcome.records, epsilon, &outcome.digest)?;
            write_report(&s.cfg.output_dir, &report)?;
            print!("{}", report.to_csv());
            Ok(finish(&outcome.failures))
        }
        Command::Robustness {
            common,
            kind,
            corruption_seed,
        } => {
            let s = Session::open(&common)?;
            let kinds = kind.map_or_else(|| CorruptionKind::ALL.to_vec(), |k| vec![k]);
            if common.levels.is_some() && kinds.len() > 1 {
                return Err(usage("--levels needs a single --kind"));
            }
            let (samples, failures) = s.samples()?;
            for kind in kinds {
                let levels = common.levels.clone().unwrap_or_else(|| kind.default_levels());
                let table = robustness_sweep(
                    &samples,
                    &s.backbone,
                    &s.cfg.embedder,
                    &s.cfg.detector,
                    kind,
                    &levels,
                    corruption_seed,
                )?;
                for g in table.generators() {
                    s.write(&format!("robustness_{kind}_{g}.csv"), &table.to_csv(Some(&g))?)?;
                }
                s.write(&format!("robustness_{kind}_average.csv"), &table.to_csv(None)?)?;
                s.write_json(&format!("robustness_{kind}.json"), &table)?;
            }
            Ok(finish(&failures))
        }
        Command::SweepLambda(c) => {
            let s = Session::open(&c)?;
            let (samples, failures) = s.samples()?;
            let grid = c.levels.clone().unwrap_or_else(default_lambda_grid);
            let table = sweep_lambda(&samples, &s.backbone, &s.cfg.embedder, &s.cfg.detector, &grid)?;
            s.write("sweep_lambda.csv", &table.to_csv())?;
            s.write_json("sweep_lambda.json", &table)?;
            Ok(finish(&failures))
        }
        Command::AblateNoise(c) => {
            let s = Session::open(&c)?;
            let (samples, failures) = s.samples()?;
            let lambda = c.lambda.unwrap_or(ABLATION_LAMBDA);
            let table = ablate_noise(&samples, &s.backbone, &s.cfg.embedder, &s.cfg.detector, lambda)?;
            s.write("sweep_noise_ap.csv", &table.to_csv(Metric::Ap))?;
            s.write("sweep_noise_auc.csv", &table.to_csv(Metric::Auc))?;
            s.write_json("sweep_noise.json", &table)?;
            Ok(finish(&failures))
        }
        Command::Landscape {
            common,
            label,
            step,
            extent,
            direction_seed,
            max_images,
        } => {
            let s = Session::open(&common)?;
            let (samples, failures) = s.samples()?;
            let xs = samples
                .iter()
                .filter(|x| x.record.label == label)
                .take(max_images)
                .map(|x| preprocess_tensor(&x.image, &s.cfg.embedder))
                .collect::<noiseprobe::Result<Vec<_>>>()?;
            if xs.is_empty() {
                return Err(usage(format!("no {label} images in the manifests")));
            }
            let spec = LandscapeSpec {
                alpha_range: (-extent, extent),
                beta_range: (-extent, extent),
                step,
                direction_seed,
            };
            let grid = landscape(&xs, s.backbone.for_label(label), &spec)?;
            s.write("landscape.csv", &grid.to_csv())?;
            Ok(finish(&failures))
        }
        Command::GenerateFixture {
            out,
            n_real,
            n_fake,
            image_dim,
            image_size,
            k_real,
            k_fake,
            lambda,
            seed,
        } => {
            let spec = SyntheticDatasetSpec {
                n_real,
                n_fake,
                image_dim,
                image_size,
                k_real,
                k_fake,
                lambda,
                seed,
                ..SyntheticDatasetSpec::default()
            };
            let fx = generate_fixture(&spec, &out)?;
            println!(
                "wrote {} images, {}, {} and {}",
                fx.records.len(),
                fx.manifest.display(),
                fx.expected.display(),
                fx.config.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn is_validation(e: &anyhow::Error) -> bool {
    e.downcast_ref::<UsageError>().is_some()
        || e.downcast_ref::<noiseprobe::Error>()
            .is_some_and(noiseprobe::Error::is_validation)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_validation(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
