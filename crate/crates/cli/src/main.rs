use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use sd_probe::metrics::UnitProfile;
use sd_probe::oracle::{write_synthetic_dump, PlantConfig, PlantCounts};
use sd_probe::report::{
    center_bias_map, emit_layer_curves, emit_mask_spec, emit_unit_bars, read_masks, render_center_bias_svg,
    render_drops_csv, AnalysisRun, Formats, MaskFactor, ResultsFile,
};
use sd_probe::sampling::{generate_dataset_pairs, DatasetPairsConfig, PairCounts};
use sd_probe::tensorio::{
    list_layers, load_activation_set, read_json, validate_manifest, write_atomic, write_json, PairManifest,
};
use sd_probe::{exec, Execution, Factor, Seed};
use sd_probe_cli::{
    echo_config, parse_lambdas, parse_range, parse_size, run_analyze_layers, run_analyze_units, Outcome, RunConfig,
    SWEEP_LAMBDAS,
};

#[derive(Parser)]
#[command(name = "sd-probe", version, about = "Static and dynamic bias in spatiotemporal networks")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,
    /// One JSON object per log line on stderr.
    #[arg(long, global = true)]
    json_logs: bool,
    /// Root seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize static, dynamic and identical input pairs from a frame dataset.
    Pairs(PairsArgs),
    /// Write a synthetic dump with planted unit types.
    Oracle(OracleArgs),
    /// Layer-wise static/dynamic/identical allocation.
    AnalyzeLayers(AnalyzeArgs),
    /// Per-unit categories at one or more thresholds.
    AnalyzeUnits(AnalyzeArgs),
    /// Unit categories over a λ grid (default 0.5,0.6,0.7,0.8).
    Sweep(AnalyzeArgs),
    /// Channel set for a unit-removal experiment.
    Mask(MaskArgs),
    /// Dataset-level mean of binary segmentation masks.
    Centerbias(CenterbiasArgs),
    /// Charts and tables from saved runs and evaluation results.
    Report(ReportArgs),
    /// Check a manifest, and optionally a dump against it.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct PairsArgs {
    /// Directory of `<video>/NNNNNN.png` frame folders.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_parser = ["action_recognition", "vos"])]
    task: Option<String>,
    /// Comma-separated style ids.
    #[arg(long)]
    styles: Option<String>,
    /// Pairs per video, e.g. `static=2,dynamic=2,identical=1`.
    #[arg(long)]
    counts: Option<String>,
    /// Shuffle only member b of static action pairs.
    #[arg(long)]
    shuffle_one: bool,
    /// Flow hue jitter range in degrees, `lo,hi`.
    #[arg(long)]
    hue_range: Option<String>,
    /// Flow saturation scale range, `lo,hi`.
    #[arg(long)]
    sat_range: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// e.g. `static=100,dynamic=50,joint=30,residual=76`.
    #[arg(long)]
    plant: String,
    /// Pairs per factor.
    #[arg(long, default_value_t = 4096)]
    pairs: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Number of planted layers.
    #[arg(long, default_value_t = 1)]
    n_layers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Defaults to `<dump>/manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// `all` or a comma-separated list.
    #[arg(long)]
    layers: Option<String>,
    /// Comma-separated thresholds.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long, value_parser = ["streaming", "exact"])]
    precision: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    dataset_id: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MaskArgs {
    /// `analysis_units.json`, or a JSON list of unit profiles.
    #[arg(long)]
    profile: PathBuf,
    /// Required when the profile file holds several layers.
    #[arg(long)]
    layer: Option<String>,
    #[arg(long, value_parser = ["static", "dynamic", "random"])]
    factor: String,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CenterbiasArgs {
    /// Binary PNG masks (nonzero = foreground), searched recursively.
    #[arg(long)]
    masks: PathBuf,
    /// Output resolution `WxH`.
    #[arg(long)]
    size: String,
    /// SVG path; the map is also written as JSON beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Comma-separated run JSON files.
    #[arg(long, value_delimiter = ',')]
    runs: Vec<PathBuf>,
    /// Comma-separated results JSON files `{baseline, variant, label}`.
    #[arg(long, value_delimiter = ',')]
    results: Vec<PathBuf>,
    #[arg(long, default_value = "csv,svg")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Also load every layer of this dump against the manifest.
    #[arg(long)]
    dump: Option<PathBuf>,
}

fn init_logging(level: LogLevel, json_logs: bool) {
    let filter = match level {
        LogLevel::Error => log::LevelFilter::Error,
        LogLevel::Warn => log::LevelFilter::Warn,
        LogLevel::Info => log::LevelFilter::Info,
        LogLevel::Debug => log::LevelFilter::Debug,
    };
    let mut builder = env_logger::Builder::new();
    builder.filter_level(filter).target(env_logger::Target::Stderr);
    if json_logs {
        builder.format(|buf, record| {
            let line = json!({
                "level": record.level().as_str().to_ascii_lowercase(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    let _ = builder.try_init();
}

/// Flag overrides for [`RunConfig::resolve`].
#[derive(Default)]
struct Overrides(Map<String, Value>);

impl Overrides {
    fn set(&mut self, key: &str, value: Option<Value>) -> &mut Self {
        if let Some(v) = value {
            self.0.insert(key.into(), v);
        }
        self
    }

    fn path(&mut self, key: &str, value: &Option<PathBuf>) -> &mut Self {
        self.set(key, value.as_ref().map(|p| json!(p)))
    }
}

fn analyze_config(cli: &Cli, a: &AnalyzeArgs, default_lambdas: Option<&[f64]>) -> Result<RunConfig> {
    let mut o = Overrides::default();
    o.path("dump", &a.dump)
        .path("manifest", &a.manifest)
        .path("out", &a.out)
        .set("layers", a.layers.as_ref().map(|l| json!(l)))
        .set("precision", a.precision.as_ref().map(|p| json!(p)))
        .set("model_id", a.model.as_ref().map(|m| json!(m)))
        .set("dataset_id", a.dataset_id.as_ref().map(|d| json!(d)))
        .set("seed", cli.seed.map(|s| json!(s.to_string())));
    let lambdas = match &a.lambda {
        Some(l) => Some(parse_lambdas(l)?),
        None => default_lambdas.map(<[f64]>::to_vec),
    };
    o.set("lambdas", lambdas.map(|l| json!(l)));
    // The sweep grid applies unless a flag or the config file names one.
    if a.lambda.is_none() && default_lambdas.is_some() {
        if let Some(path) = &cli.config {
            if read_json::<Value>(path)?.get("lambdas").is_some() {
                o.0.remove("lambdas");
            }
        }
    }
    RunConfig::resolve(cli.config.as_deref(), o.0)
}

fn report_outcome(what: &str, outcome: &Outcome) -> i32 {
    for f in &outcome.failures {
        eprintln!("layer {} failed: {:#}", f.layer, f.error);
    }
    log::info!("{what}: {} layers, {} files", outcome.run.layer_order.len(), outcome.written.len());
    for p in &outcome.written {
        println!("{}", p.display());
    }
    outcome.exit_code()
}

fn cmd_pairs(cli: &Cli, a: &PairsArgs, exec: Execution) -> Result<i32> {
    let mut o = Overrides::default();
    o.path("dataset", &a.dataset)
        .path("out", &a.out)
        .set("task", a.task.as_ref().map(|t| json!(t)))
        .set(
            "styles",
            a.styles.as_ref().map(|s| json!(s.split(',').map(str::trim).collect::<Vec<_>>())),
        )
        .set("seed", cli.seed.map(|s| json!(s.to_string())))
        .set("shuffle", a.shuffle_one.then(|| json!("one")));
    if let Some(c) = &a.counts {
        o.set("counts", Some(serde_json::to_value(c.parse::<PairCounts>()?)?));
    }
    let mut jitter = Map::new();
    if let Some(h) = &a.hue_range {
        jitter.insert("hue".into(), json!(parse_range(h)?));
    }
    if let Some(s) = &a.sat_range {
        jitter.insert("sat".into(), json!(parse_range(s)?));
    }
    if !jitter.is_empty() {
        let base = RunConfig::resolve(cli.config.as_deref(), Map::new())?.jitter;
        let mut merged = serde_json::to_value(base)?.as_object().cloned().unwrap_or_default();
        merged.extend(jitter);
        o.set("jitter", Some(Value::Object(merged)));
    }
    let cfg = RunConfig::resolve(cli.config.as_deref(), o.0)?;
    let dataset = cfg.dataset.as_deref().context("no dataset directory given (--dataset)")?;
    let out = cfg.out_dir()?;
    let manifest = generate_dataset_pairs(
        dataset,
        out,
        &DatasetPairsConfig {
            task: cfg.task,
            styles: cfg.styles.clone(),
            counts: cfg.counts,
            seed: cfg.seed,
            shuffle: cfg.shuffle,
            jitter: cfg.jitter,
            exec,
        },
    )?;
    echo_config(out, &cfg.to_value())?;
    log::info!("wrote {} pairs to {}", manifest.pairs.len(), out.display());
    println!("{}", out.join("manifest.json").display());
    Ok(0)
}

fn cmd_oracle(cli: &Cli, a: &OracleArgs, exec: Execution) -> Result<i32> {
    let cfg = PlantConfig {
        plant: a.plant.parse::<PlantCounts>()?,
        n_pairs: a.pairs,
        noise_sigma: a.sigma,
        seed: Seed(cli.seed.unwrap_or(0)),
    };
    let truth = write_synthetic_dump(&a.out, &cfg, a.n_layers, exec)?;
    echo_config(&a.out, &json!({ "plant": cfg, "n_layers": a.n_layers }))?;
    log::info!("planted {} layers of {} units", truth.layers.len(), cfg.plant.total());
    println!("{}", a.out.display());
    Ok(0)
}

fn cmd_mask(cli: &Cli, a: &MaskArgs) -> Result<i32> {
    let value: Value = read_json(&a.profile)?;
    let (model, layer, profiles): (String, String, Vec<UnitProfile>) = if value.is_array() {
        let layer = a.layer.clone().unwrap_or_else(|| "layer".into());
        (a.model.clone().unwrap_or_else(|| "model".into()), layer, serde_json::from_value(value)?)
    } else {
        let run: AnalysisRun = serde_json::from_value(value).with_context(|| format!("reading {}", a.profile.display()))?;
        let layer = match &a.layer {
            Some(l) => l.clone(),
            None if run.unit_profiles.len() == 1 => run.unit_profiles.keys().next().unwrap().clone(),
            None => bail!("{} holds {} layers; pick one with --layer", a.profile.display(), run.unit_profiles.len()),
        };
        let profiles = run
            .unit_profiles
            .get(&layer)
            .with_context(|| format!("no unit profiles for layer {layer}"))?
            .clone();
        (a.model.clone().unwrap_or(run.model_id), layer, profiles)
    };
    let factor: MaskFactor = a.factor.parse()?;
    let seed = match factor {
        MaskFactor::Random => Some(Seed(cli.seed.context("a random mask needs --seed")?)),
        _ => None,
    };
    let spec = emit_mask_spec(&model, &layer, &profiles, factor, a.k, seed)?;
    write_json(&a.out, &spec)?;
    println!("{}", a.out.display());
    Ok(0)
}

fn cmd_centerbias(a: &CenterbiasArgs) -> Result<i32> {
    let size = parse_size(&a.size)?;
    let masks = read_masks(&a.masks)?;
    if masks.is_empty() {
        bail!("no PNG masks under {}", a.masks.display());
    }
    let map = center_bias_map(&masks, size)?;
    let config = json!({ "masks": a.masks, "size": a.size, "n_masks": masks.len() });
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(&a.out, render_center_bias_svg(&map, Some(&config)).as_bytes())?;
    let json_path = a.out.with_extension("json");
    write_json(&json_path, &map)?;
    println!("{}\n{}", a.out.display(), json_path.display());
    Ok(0)
}

fn cmd_report(a: &ReportArgs) -> Result<i32> {
    if a.runs.is_empty() && a.results.is_empty() {
        bail!("nothing to report: give --runs and/or --results");
    }
    let formats: Formats = a.format.parse()?;
    let runs = a
        .runs
        .iter()
        .map(|p| AnalysisRun::load(p).with_context(|| format!("loading run {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut written = Vec::new();
    for run in runs.iter().filter(|r| !r.layers.is_empty()) {
        written.extend(emit_layer_curves(run, &a.out, formats)?);
    }
    let with_units: Vec<AnalysisRun> = runs
        .iter()
        .filter(|r| !r.unit_counts.is_empty() || !r.unit_profiles.is_empty())
        .cloned()
        .collect();
    if !with_units.is_empty() {
        written.extend(emit_unit_bars(&with_units, &a.out, formats)?);
    }
    if !a.results.is_empty() {
        let drops = a
            .results
            .iter()
            .map(|p| ResultsFile::load(p)?.summarize().with_context(|| format!("in {}", p.display())))
            .collect::<Result<Vec<_>>>()?;
        std::fs::create_dir_all(&a.out)?;
        let csv = a.out.join("relative_drop.csv");
        write_atomic(&csv, &render_drops_csv(&drops))?;
        let js = a.out.join("relative_drop.json");
        write_json(&js, &drops)?;
        written.extend([csv, js]);
    }
    written.push(echo_config(&a.out, &json!({ "runs": a.runs, "results": a.results, "format": a.format }))?);
    for p in &written {
        println!("{}", p.display());
    }
    Ok(0)
}

fn cmd_validate(a: &ValidateArgs) -> Result<i32> {
    let manifest = PairManifest::load(&a.manifest)?;
    let violations = validate_manifest(&manifest);
    for v in &violations {
        eprintln!("{}: {}", v.pair_id, v.rule);
    }
    let mut failed_layers = 0;
    if let Some(dump) = &a.dump {
        check_dump(dump, &manifest, &mut failed_layers)?;
    }
    if violations.is_empty() && failed_layers == 0 {
        println!("ok: {} pairs", manifest.pairs.len());
        Ok(0)
    } else {
        Ok(1)
    }
}

fn check_dump(dump: &Path, manifest: &PairManifest, failed: &mut usize) -> Result<()> {
    for layer in list_layers(dump)? {
        for f in Factor::ALL {
            if let Err(e) = load_activation_set(dump, &layer, f, manifest) {
                eprintln!("layer {layer}: {e}");
                *failed += 1;
            }
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let exec = Execution::default();
    match &cli.command {
        Command::Pairs(a) => cmd_pairs(cli, a, exec),
        Command::Oracle(a) => cmd_oracle(cli, a, exec),
        Command::AnalyzeLayers(a) => {
            let cfg = analyze_config(cli, a, None)?;
            Ok(report_outcome("analyze-layers", &run_analyze_layers(&cfg, exec)?))
        }
        Command::AnalyzeUnits(a) => {
            let cfg = analyze_config(cli, a, None)?;
            Ok(report_outcome("analyze-units", &run_analyze_units(&cfg, exec)?))
        }
        Command::Sweep(a) => {
            let cfg = analyze_config(cli, a, Some(&SWEEP_LAMBDAS))?;
            Ok(report_outcome("sweep", &run_analyze_units(&cfg, exec)?))
        }
        Command::Mask(a) => cmd_mask(cli, a),
        Command::Centerbias(a) => cmd_centerbias(a),
        Command::Report(a) => cmd_report(a),
        Command::Validate(a) => cmd_validate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log_level, cli.json_logs);
    let result = match cli.jobs {
        Some(n) => exec::with_jobs(n, || dispatch(&cli)),
        None => dispatch(&cli),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
