use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use borderprobe::border;
use borderprobe::config::{DetectorMode, RunConfig};
use borderprobe::metrics::CellMetrics;
use borderprobe::{bias, catalog, pipeline, synthetic, Error, Result};

#[derive(Parser)]
#[command(name = "borderprobe", version, about = "Probe detectors for loss of translation invariance near image borders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a scene catalog.
    CatalogValidate(RunArgs),
    /// Sample insertion points and write the probe plan.
    Plan(RunArgs),
    /// Composite test images and write probe crops plus the detector manifest.
    Generate(RunArgs),
    /// Answer the manifest with the built-in mock detector.
    MockRun(RunArgs),
    /// Match predictions against ground truth and aggregate per cell.
    Evaluate(RunArgs),
    /// Render heatmaps from evaluated cells.
    Report {
        #[command(flatten)]
        run: RunArgs,
        /// Metrics to plot.
        #[arg(long, value_delimiter = ',', default_values_t = CellMetrics::METRICS.map(String::from))]
        metrics: Vec<String>,
    },
    /// Run every stage; stops after `generate` with an external detector.
    Run(RunArgs),
    /// Padding-affected band per layer of a conv stack.
    BorderCalc {
        /// Architecture file (one layer per line, or TOML `[[layer]]` tables).
        architecture: PathBuf,
        /// Input size as `N` or `WxH`.
        #[arg(long)]
        input: String,
        /// Write the report as CSV to this path as well.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Cross-check against the brute-force taint simulation.
        #[arg(long)]
        verify: bool,
    },
    /// Annotation density map from a COCO-style instances file.
    BiasMap {
        annotations: PathBuf,
        #[arg(long, default_value = "bias")]
        out: PathBuf,
        #[arg(long, default_value_t = bias::STANDARD_SIZE)]
        size: u32,
    },
    /// Write a small procedural catalog.
    DemoCatalog {
        dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        scenes: usize,
        #[arg(long, default_value_t = 6)]
        targets: usize,
        #[arg(long, default_value_t = catalog::MIN_BACKGROUND_SIDE)]
        side: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Detector {
    Mock,
    External,
}

/// Flags mirror the config file; a flag wins over the file, which wins over
/// the defaults.
#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Catalog directory holding catalog.toml.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Run directory for every stage's artifacts.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Target sizes as proportions of the crop dimension.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<f64>>,
    /// Square crop side in pixels.
    #[arg(long)]
    crop: Option<u32>,
    /// Minimum distance from insertion points to the background edge.
    #[arg(long)]
    margin: Option<u32>,
    /// Master offset list.
    #[arg(long, value_delimiter = ',')]
    offsets: Option<Vec<u32>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Manifest shards handed to the detector.
    #[arg(long)]
    shards: Option<usize>,
    /// Independent insertion points per (scene, target) pair.
    #[arg(long)]
    insertions: Option<u32>,
    #[arg(long, value_enum)]
    detector: Option<Detector>,
    /// Mock base detection probability.
    #[arg(long)]
    p0: Option<f64>,
    /// Mock border penalty magnitude.
    #[arg(long)]
    delta: Option<f64>,
    /// Mock penalty decay length in pixels.
    #[arg(long)]
    lambda: Option<f64>,
    /// Mock corner multiplier.
    #[arg(long)]
    kappa: Option<f64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(cfg.catalog, self.catalog);
        set!(cfg.output, self.output);
        set!(cfg.sizes, self.sizes);
        set!(cfg.crop_dimension, self.crop);
        set!(cfg.margin, self.margin);
        set!(cfg.master_offsets, self.offsets);
        set!(cfg.seed, self.seed);
        set!(cfg.workers, self.workers);
        set!(cfg.shards, self.shards);
        set!(cfg.insertions_per_pair, self.insertions);
        set!(cfg.detector.mock.p0, self.p0);
        set!(cfg.detector.mock.delta, self.delta);
        set!(cfg.detector.mock.lambda, self.lambda);
        set!(cfg.detector.mock.kappa, self.kappa);
        if let Some(d) = self.detector {
            cfg.detector.mode = match d {
                Detector::Mock => DetectorMode::Mock,
                Detector::External => DetectorMode::External,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_input(text: &str) -> Result<(u64, u64)> {
    let bad = || Error::InvalidInput(format!("input size `{text}` is not `N` or `WxH`"));
    let parse = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    match text.split_once(['x', 'X']) {
        Some((w, h)) => Ok((parse(w)?, parse(h)?)),
        None => {
            let n = parse(text)?;
            Ok((n, n))
        }
    }
}

fn print_evaluation(summary: &pipeline::EvalSummary) {
    println!(
        "evaluated {} cells; coverage {:.4} ({} of {} probes answered)",
        summary.cells, summary.coverage, summary.covered, summary.probes
    );
}

/// Exit status 2 signals that some planned probes were infeasible.
fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::CatalogValidate(args) => {
            let cfg = args.resolve()?;
            let cat = catalog::load_catalog(&cfg.catalog)?;
            let regions: usize = cat.scenes.iter().map(|s| s.regions.len()).sum();
            println!(
                "catalog ok: {} backgrounds, {} regions, {} targets",
                cat.scenes.len(),
                regions,
                cat.targets.len()
            );
        }
        Command::Plan(args) => {
            let cfg = args.resolve()?;
            let (_, s) = pipeline::plan(&cfg)?;
            println!(
                "planned {} pairs, {} test images, {} probes ({} pairs and {} test images skipped)",
                s.pairs, s.test_images, s.probes, s.skipped_pairs, s.skipped_test_images
            );
            if s.infeasible_probes > 0 {
                eprintln!(
                    "warning: {} infeasible probes; see {}/plan/skipped.jsonl",
                    s.infeasible_probes,
                    cfg.output.display()
                );
                return Ok(ExitCode::from(2));
            }
        }
        Command::Generate(args) => {
            let s = pipeline::generate(&args.resolve()?)?;
            println!(
                "generated {} test images, {} crops in {} shards",
                s.test_images, s.crops, s.shards
            );
        }
        Command::MockRun(args) => {
            let n = pipeline::mock_run(&args.resolve()?)?;
            println!("mock detector answered {n} probes");
        }
        Command::Evaluate(args) => {
            let (_, s) = pipeline::evaluate(&args.resolve()?)?;
            print_evaluation(&s);
        }
        Command::Report { run, metrics } => {
            let names: Vec<&str> = metrics.iter().map(String::as_str).collect();
            let written = pipeline::report(&run.resolve()?, &names)?;
            println!("wrote {} heatmaps", written.len());
        }
        Command::Run(args) => {
            let cfg = args.resolve()?;
            match pipeline::run_all(&cfg)? {
                Some(s) => print_evaluation(&s),
                None => println!(
                    "crops ready in {}/probes; place detector output in {}/preds, then run `evaluate`",
                    cfg.output.display(),
                    cfg.output.display()
                ),
            }
        }
        Command::BorderCalc {
            architecture,
            input,
            csv,
            verify,
        } => {
            let text = std::fs::read_to_string(&architecture).map_err(|e| Error::Io {
                path: architecture.clone(),
                source: e,
            })?;
            let layers = border::parse_architecture(&text)?;
            let report = border::affected_band(&layers, parse_input(&input)?)?;
            if verify && border::taint_oracle(&layers, report.input)? != report {
                return Err(Error::InvalidInput(
                    "closed form and taint simulation disagree".into(),
                ));
            }
            print!("{}", report.to_table());
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv()).map_err(|e| Error::Io { path, source: e })?;
            }
        }
        Command::BiasMap {
            annotations,
            out,
            size,
        } => {
            let images = bias::load_coco(&annotations)?;
            let map = bias::density_map(&images, size)?;
            map.save(&out)?;
            println!(
                "density map from {} masks in {} images written to {}",
                map.masks,
                map.images,
                out.display()
            );
        }
        Command::DemoCatalog {
            dir,
            scenes,
            targets,
            side,
            seed,
        } => {
            let spec = synthetic::SyntheticSpec {
                scenes,
                targets,
                background_side: side,
                seed,
                ..Default::default()
            };
            let cat = synthetic::write_catalog(&dir, &spec)?;
            println!(
                "wrote {} backgrounds and {} targets to {}",
                cat.scenes.len(),
                cat.targets.len(),
                dir.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::InfeasibleProbe(_) => 2,
                ref e if e.is_validation() => 1,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}
