use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use somgen_core::bench::{
    attach_frechet, calibrate, calibrate_from_ensemble, cmd_compare, cmd_evaluate, cmd_generate,
    discover_inputs, load_or_calibrate, verify_manifest, write_autocorrelation_csv,
    write_density_csv, write_qq_csv, write_rows_csv, Calibration, Generators, RunConfig,
};
use somgen_core::manifest::{EnsembleManifest, MANIFEST_FILE};
use somgen_core::stats::frechet::{block_mean_features, write_feature_csv};
use somgen_core::voronoi::write_prevalence_csv;
use somgen_core::{load_image, Execution, SomName};

#[derive(Parser)]
#[command(
    name = "somgen",
    version,
    about = "Generate and validate stochastic object model ensembles"
)]
struct Cli {
    /// Worker threads; 1 runs sequentially, 0 uses every core.
    #[arg(long, env = "SOMGEN_JOBS", global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an ensemble of realizations plus manifest.json.
    Generate(GenerateArgs),
    /// Build the reference calibration for a SOM.
    Calibrate(CalibrateArgs),
    /// Run a SOM's recovery pipeline and tests over a set of images.
    Evaluate(EvaluateArgs),
    /// Compare the pooled intensities (and optional features) of two ensembles.
    Compare(CompareArgs),
    /// Regenerate every entry of a manifest and check the files are identical.
    Verify {
        /// Manifest file or the directory holding it.
        input: PathBuf,
    },
    /// Write block-mean feature vectors, one CSV row per image.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Blocks per side; the vector has grid*grid entries.
        #[arg(long, default_value_t = 8)]
        grid: usize,
    },
    /// Write the bundled templates and parameter files to a directory.
    ExportAssets {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// JSON or TOML run configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// flags, voronoi, alphabet or clb.
    #[arg(long)]
    som: Option<SomName>,
}

impl Common {
    fn load(&self, jobs: Option<usize>) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.som {
            config.som = s;
        }
        if jobs.is_some() {
            config.jobs = jobs;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Restrict labels to these classes, e.g. `1,8`.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<u8>>,
    /// Relative class prevalence, eight comma-separated weights.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    /// Reference ensemble size.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tolerance percentile as a fraction, e.g. 0.995.
    #[arg(long)]
    percentile: Option<f64>,
    /// Calibrate on this stored true ensemble instead of a fresh one.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Calibration file to write.
    #[arg(long, conflicts_with = "cache")]
    out: Option<PathBuf>,
    /// Cache directory; reuses a calibration with the same config hash.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Manifest, directory with manifest.json, or directory of PNG files.
    #[arg(long)]
    input: PathBuf,
    /// Calibration file, or cache directory to reuse or fill.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Derive the calibration from this true ensemble.
    #[arg(long, conflicts_with = "calib")]
    reference: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    rows_csv: Option<PathBuf>,
    #[arg(long)]
    qq_csv: Option<PathBuf>,
    #[arg(long)]
    positional_csv: Option<PathBuf>,
    #[arg(long)]
    prevalence_csv: Option<PathBuf>,
    #[arg(long)]
    autocorrelation_csv: Option<PathBuf>,
    /// Per-image features of the evaluated images.
    #[arg(long, requires = "reference_features")]
    features: Option<PathBuf>,
    /// Per-image features of a true ensemble.
    #[arg(long, requires = "features")]
    reference_features: Option<PathBuf>,
    /// Record the wall-clock time in the report's timestamp field.
    #[arg(long)]
    timestamp: bool,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, requires = "features_b")]
    features_a: Option<PathBuf>,
    #[arg(long, requires = "features_a")]
    features_b: Option<PathBuf>,
    #[arg(long, default_value_t = 99)]
    quantiles: usize,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    qq_csv: Option<PathBuf>,
    #[arg(long)]
    density_csv: Option<PathBuf>,
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn generate(args: GenerateArgs, jobs: Option<usize>) -> Result<()> {
    let mut config = args.common.load(jobs)?;
    if args.classes.is_some() {
        config.classes = args.classes;
    }
    if args.weights.is_some() {
        config.class_weights = args.weights;
    }
    if let Some(n) = args.n {
        config.n = n;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let out = args
        .out
        .or(config.out.clone())
        .context("no output directory (--out)")?;
    let manifest = cmd_generate(&config, &Generators::default(), &out, config.execution())?;
    eprintln!(
        "wrote {} {} realizations to {}",
        manifest.entries.len(),
        manifest.som_name,
        out.display()
    );
    Ok(())
}

fn calibrate_cmd(args: CalibrateArgs, jobs: Option<usize>) -> Result<()> {
    let mut config = args.common.load(jobs)?;
    if args.size.is_some() {
        config.calibration_size = args.size;
    }
    if let Some(s) = args.seed {
        config.calibration_seed = s;
    }
    if let Some(p) = args.percentile {
        config.tolerance_percentile = p;
    }
    let gens = Generators::default();
    let exec = config.execution();
    let cal = match (&args.reference, &args.cache) {
        (Some(r), _) => calibrate_from_ensemble(r, &config, &gens, exec)?,
        (None, Some(dir)) => load_or_calibrate(dir, &config, &gens, exec)?,
        (None, None) => calibrate(&config, &gens, exec)?,
    };
    match (&args.out, &args.cache) {
        (Some(p), _) => cal.save(p)?,
        (None, Some(dir)) if args.reference.is_some() => {
            std::fs::create_dir_all(dir)?;
            cal.save(Calibration::cache_path(dir, &config))?
        }
        (None, Some(_)) => {}
        (None, None) => write_or_print(None, &(serde_json::to_string_pretty(&cal)? + "\n"))?,
    }
    eprintln!(
        "calibration {} ({} reference realizations)",
        &cal.config_hash[..16],
        cal.reference_size
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs, jobs: Option<usize>) -> Result<()> {
    let config = args.common.load(jobs)?;
    let gens = Generators::default();
    let exec = config.execution();
    let calibration = match (&args.calib, &args.reference) {
        (Some(p), _) if p.is_dir() => load_or_calibrate(p, &config, &gens, exec)?,
        (Some(p), _) => Calibration::load(p)?,
        (None, Some(r)) => calibrate_from_ensemble(r, &config, &gens, exec)?,
        (None, None) => bail!("missing calibration: pass --calib FILE|DIR or --reference DIR"),
    };
    let mut report = cmd_evaluate(&args.input, config.som, &calibration, &config, &gens, exec)?;
    if let (Some(f), Some(r)) = (&args.features, &args.reference_features) {
        attach_frechet(&mut report, f, r)?;
    }
    if args.timestamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        report.timestamp = Some(format!("unix:{secs}"));
    }
    let s = &report.summary;
    if let Some(p) = &args.rows_csv {
        write_rows_csv(p, &report)?;
    }
    if let (Some(p), Some(qq)) = (&args.qq_csv, &s.qq) {
        write_qq_csv(p, qq)?;
    }
    if let (Some(p), Some(map)) = (&args.positional_csv, &s.positional_map) {
        map.write_csv(p)?;
    }
    if let (Some(p), Some(row)) = (&args.prevalence_csv, &s.prevalence_table) {
        write_prevalence_csv(p, std::slice::from_ref(row))?;
    }
    if let Some(p) = &args.autocorrelation_csv {
        write_autocorrelation_csv(p, s)?;
    }
    write_or_print(args.report.as_deref(), &report.to_json()?)?;
    eprintln!(
        "{} images, {} evaluated, {} excluded",
        s.total, s.evaluated, s.excluded
    );
    for (name, rate) in &s.pass_rates {
        eprintln!("  {name}: {:.2}% pass", 100.0 * rate);
    }
    Ok(())
}

fn compare(args: CompareArgs, jobs: Option<usize>) -> Result<()> {
    let features = match (&args.features_a, &args.features_b) {
        (Some(a), Some(b)) => Some((a.as_path(), b.as_path())),
        _ => None,
    };
    let report = cmd_compare(
        &args.a,
        &args.b,
        features,
        args.quantiles,
        Execution::with_jobs(jobs),
    )?;
    if let Some(p) = &args.qq_csv {
        write_qq_csv(p, &report.qq)?;
    }
    if let Some(p) = &args.density_csv {
        write_density_csv(p, &report)?;
    }
    write_or_print(
        args.report.as_deref(),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    eprintln!(
        "max |dq| = {:.2}, density overlap = {:.4}{}",
        report.max_qq_deviation,
        report.density_overlap,
        report
            .frechet_distance
            .map(|d| format!(", frechet = {d:.6}"))
            .unwrap_or_default()
    );
    Ok(())
}

fn verify(input: &Path, jobs: Option<usize>) -> Result<bool> {
    let path = if input.is_dir() {
        input.join(MANIFEST_FILE)
    } else {
        input.to_path_buf()
    };
    let manifest = EnsembleManifest::load(&path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let bad = verify_manifest(
        &manifest,
        base,
        &Generators::default(),
        Execution::with_jobs(jobs),
    )?;
    for p in &bad {
        eprintln!("mismatch: {p}");
    }
    eprintln!(
        "{} of {} entries reproduce exactly",
        manifest.entries.len() - bad.len(),
        manifest.entries.len()
    );
    Ok(bad.is_empty())
}

fn features(input: &Path, out: &Path, grid: usize, jobs: Option<usize>) -> Result<()> {
    let inputs = discover_inputs(input)?;
    let rows = Execution::with_jobs(jobs).map_slice(&inputs, |_, inp| {
        load_image(&inp.path, None).and_then(|im| block_mean_features(&im, grid))
    });
    let rows = rows.into_iter().collect::<somgen_core::Result<Vec<_>>>()?;
    write_feature_csv(out, &rows)?;
    eprintln!(
        "wrote {} feature rows of dimension {}",
        rows.len(),
        grid * grid
    );
    Ok(())
}

fn export_assets(out: &Path) -> Result<()> {
    let gens = Generators::default();
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("flag_templates.json"),
        gens.flags.templates().to_json()?,
    )?;
    std::fs::write(out.join("clb_params.json"), gens.clb.to_json()?)?;
    gens.letters.save_dir(out.join("glyphs"))?;
    eprintln!("assets written to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let jobs = cli.jobs;
    match cli.command {
        Command::Generate(a) => generate(a, jobs)?,
        Command::Calibrate(a) => calibrate_cmd(a, jobs)?,
        Command::Evaluate(a) => evaluate(a, jobs)?,
        Command::Compare(a) => compare(a, jobs)?,
        Command::Verify { input } => return verify(&input, jobs),
        Command::Features { input, out, grid } => features(&input, &out, grid, jobs)?,
        Command::ExportAssets { out } => export_assets(&out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
