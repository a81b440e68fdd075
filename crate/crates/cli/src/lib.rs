//! Pipelines behind the `sd-probe` subcommands.
//!
//! Settings resolve as command-line flags over the `--config` JSON file over
//! built-in defaults. The effective configuration is written next to every
//! set of outputs as `effective_config.json` and embedded in JSON and SVG
//! artifacts.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use sd_probe::metrics::{
    analyze_layer, categorize_units, channel_correlations_with, lambda_sweep, Factor, PerFactor, Precision,
};
use sd_probe::report::{emit_layer_curves, emit_unit_bars, AnalysisRun, Formats};
use sd_probe::sampling::{JitterRanges, PairCounts};
use sd_probe::tensorio::{
    list_layers, load_activation_set, read_json, validate_manifest, write_json, PairManifest, ShuffleMode, Task,
};
use sd_probe::{Execution, Seed};

/// Exit status when some requested layers failed and the rest were written.
pub const EXIT_PARTIAL: i32 = 3;

/// Layers to analyse: every layer in the dump, or the listed ones in order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum LayerSelection {
    #[default]
    All,
    List(Vec<String>),
}

impl LayerSelection {
    pub fn parse(s: &str) -> Self {
        if s.trim() == "all" {
            return LayerSelection::All;
        }
        LayerSelection::List(s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect())
    }

    pub fn resolve(&self, dump: &Path) -> Result<Vec<String>> {
        match self {
            LayerSelection::All => Ok(list_layers(dump)?),
            LayerSelection::List(l) => Ok(l.clone()),
        }
    }
}

impl Serialize for LayerSelection {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LayerSelection::All => s.serialize_str("all"),
            LayerSelection::List(l) => l.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for LayerSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            List(Vec<String>),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Text(s) => LayerSelection::parse(&s),
            Raw::List(l) => LayerSelection::List(l),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub dataset: Option<PathBuf>,
    pub dump: Option<PathBuf>,
    /// Defaults to `<dump>/manifest.json`.
    pub manifest: Option<PathBuf>,
    pub layers: LayerSelection,
    pub lambdas: Vec<f64>,
    /// Pairs per video and factor.
    pub counts: PairCounts,
    pub seed: Seed,
    pub out: Option<PathBuf>,
    pub precision: Precision,
    pub model_id: String,
    /// Defaults to the manifest's dataset id.
    pub dataset_id: Option<String>,
    pub styles: Vec<String>,
    pub shuffle: ShuffleMode,
    pub jitter: JitterRanges,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::ActionRecognition,
            dataset: None,
            dump: None,
            manifest: None,
            layers: LayerSelection::All,
            lambdas: vec![0.5],
            counts: PairCounts {
                static_: 1,
                dynamic: 1,
                identical: 1,
            },
            seed: Seed(0),
            out: None,
            precision: Precision::Streaming,
            model_id: "model".into(),
            dataset_id: None,
            styles: vec!["channel-rotate".into(), "posterize-4".into()],
            shuffle: ShuffleMode::Both,
            jitter: JitterRanges::default(),
        }
    }
}

pub const SWEEP_LAMBDAS: [f64; 4] = [0.5, 0.6, 0.7, 0.8];

impl RunConfig {
    /// Defaults, then the config file, then `overrides` (flag name → value).
    pub fn resolve(config_file: Option<&Path>, overrides: Map<String, Value>) -> Result<Self> {
        let mut merged = match config_file {
            Some(path) => match read_json::<Value>(path)? {
                Value::Object(m) => m,
                _ => bail!("{}: a config file must hold a JSON object", path.display()),
            },
            None => Map::new(),
        };
        merged.extend(overrides);
        let cfg: RunConfig = serde_json::from_value(Value::Object(merged)).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            bail!("lambda must lie in (0, 1), got {l}");
        }
        self.jitter.validate()?;
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().context("no output directory given (--out)")
    }

    pub fn dump_dir(&self) -> Result<&Path> {
        self.dump.as_deref().context("no dump directory given (--dump)")
    }

    pub fn manifest_path(&self) -> Result<PathBuf> {
        match &self.manifest {
            Some(m) => Ok(m.clone()),
            None => Ok(self.dump_dir()?.join("manifest.json")),
        }
    }

    /// Load the manifest and refuse it if it breaks pairing rules.
    pub fn load_manifest(&self) -> Result<PairManifest> {
        let path = self.manifest_path()?;
        let manifest = PairManifest::load(&path).with_context(|| format!("loading manifest {}", path.display()))?;
        let violations = validate_manifest(&manifest);
        if !violations.is_empty() {
            let lines: Vec<String> = violations.iter().map(|v| format!("  {}: {}", v.pair_id, v.rule)).collect();
            bail!("manifest {} is invalid:\n{}", path.display(), lines.join("\n"));
        }
        Ok(manifest)
    }

    fn new_run(&self, manifest: &PairManifest, layer_order: Vec<String>) -> AnalysisRun {
        let dataset_id = self.dataset_id.clone().unwrap_or_else(|| manifest.dataset_id.clone());
        let mut run = AnalysisRun::new(&self.model_id, &dataset_id, layer_order, self.lambdas[0]);
        run.seed = Some(self.seed);
        run.config = Some(self.to_value());
        run
    }
}

/// A layer that could not be analysed.
#[derive(Debug)]
pub struct LayerFailure {
    pub layer: String,
    pub error: anyhow::Error,
}

#[derive(Debug)]
pub struct Outcome {
    pub run: AnalysisRun,
    pub failures: Vec<LayerFailure>,
    pub written: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            EXIT_PARTIAL
        }
    }
}

fn split_results<T>(layers: &[String], results: Vec<Result<T>>) -> (Vec<(String, T)>, Vec<LayerFailure>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (layer, r) in layers.iter().zip(results) {
        match r {
            Ok(v) => ok.push((layer.clone(), v)),
            Err(error) => failed.push(LayerFailure {
                layer: layer.clone(),
                error,
            }),
        }
    }
    (ok, failed)
}

fn all_failed(failures: Vec<LayerFailure>) -> anyhow::Error {
    let detail: Vec<String> = failures.iter().map(|f| format!("  {}: {:#}", f.layer, f.error)).collect();
    anyhow::anyhow!("every requested layer failed:\n{}", detail.join("\n"))
}

/// Layer-wise bias for every selected layer. Writes `analysis_layers.json`,
/// the layer-curve CSV/SVG and `effective_config.json` to the output dir.
pub fn run_analyze_layers(cfg: &RunConfig, exec: Execution) -> Result<Outcome> {
    let out = cfg.out_dir()?;
    let dump = cfg.dump_dir()?;
    let manifest = cfg.load_manifest()?;
    let layers = cfg.layers.resolve(dump)?;
    if layers.is_empty() {
        bail!("no layers found under {}", dump.display());
    }
    let results = exec.map_slice(&layers, |layer| -> Result<_> {
        let load = |f: Factor| load_activation_set(dump, layer, f, &manifest);
        let sets = PerFactor {
            static_: load(Factor::Static)?,
            dynamic: load(Factor::Dynamic)?,
            identical: load(Factor::Identical)?,
        };
        let refs = PerFactor {
            static_: &sets.static_,
            dynamic: &sets.dynamic,
            identical: &sets.identical,
        };
        Ok(analyze_layer(&refs, cfg.precision, exec)?.bias)
    });
    let (ok, failures) = split_results(&layers, results);
    if ok.is_empty() {
        return Err(all_failed(failures));
    }
    let mut run = cfg.new_run(&manifest, ok.iter().map(|(l, _)| l.clone()).collect());
    run.layers = ok.into_iter().map(|(_, b)| b).collect();

    let mut written = persist(cfg, out, &run, "analysis_layers.json")?;
    written.extend(emit_layer_curves(&run, out, Formats::ALL)?);
    Ok(Outcome { run, failures, written })
}

/// Unit profiles at the first λ and category counts at every λ. Writes
/// `analysis_units.json`, the unit-bar CSV/SVG and `effective_config.json`.
pub fn run_analyze_units(cfg: &RunConfig, exec: Execution) -> Result<Outcome> {
    if cfg.lambdas.is_empty() {
        bail!("no lambda values given");
    }
    let out = cfg.out_dir()?;
    let dump = cfg.dump_dir()?;
    let manifest = cfg.load_manifest()?;
    let layers = cfg.layers.resolve(dump)?;
    if layers.is_empty() {
        bail!("no layers found under {}", dump.display());
    }
    let results = exec.map_slice(&layers, |layer| -> Result<_> {
        let corr = |f: Factor| -> Result<Vec<f64>> {
            let set = load_activation_set(dump, layer, f, &manifest)?;
            Ok(channel_correlations_with(&set, cfg.precision, exec)?.s)
        };
        let (st, dy) = (corr(Factor::Static)?, corr(Factor::Dynamic)?);
        if st.len() != dy.len() {
            bail!("layer {layer}: static has {} channels, dynamic has {}", st.len(), dy.len());
        }
        let taxonomy = categorize_units(&st, &dy, cfg.lambdas[0])?;
        let sweep = lambda_sweep(&st, &dy, &cfg.lambdas)?;
        Ok((taxonomy.profiles, sweep))
    });
    let (ok, failures) = split_results(&layers, results);
    if ok.is_empty() {
        return Err(all_failed(failures));
    }
    let mut run = cfg.new_run(&manifest, ok.iter().map(|(l, _)| l.clone()).collect());
    for (layer, (profiles, sweep)) in ok {
        run.unit_profiles.insert(layer.clone(), profiles);
        run.unit_counts.insert(layer, sweep);
    }

    let mut written = persist(cfg, out, &run, "analysis_units.json")?;
    written.extend(emit_unit_bars(std::slice::from_ref(&run), out, Formats::ALL)?);
    Ok(Outcome { run, failures, written })
}

fn persist(cfg: &RunConfig, out: &Path, run: &AnalysisRun, name: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let run_path = out.join(name);
    run.save(&run_path)?;
    let cfg_path = out.join("effective_config.json");
    write_json(&cfg_path, &cfg.to_value())?;
    Ok(vec![run_path, cfg_path])
}

/// Write `effective_config.json` for subcommands without a [`RunConfig`].
pub fn echo_config(out_dir: &Path, config: &Value) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join("effective_config.json");
    write_json(&path, config)?;
    Ok(path)
}

/// `WxH`, both positive.
pub fn parse_size(s: &str) -> Result<(u32, u32)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("size must look like WxH, got {s:?}"))?;
    let (w, h): (u32, u32) = (w.trim().parse()?, h.trim().parse()?);
    if w == 0 || h == 0 {
        bail!("size must be positive, got {s:?}");
    }
    Ok((w, h))
}

/// `lo,hi` pair of floats.
pub fn parse_range(s: &str) -> Result<[f64; 2]> {
    let (lo, hi) = s.split_once(',').with_context(|| format!("range must look like lo,hi, got {s:?}"))?;
    Ok([lo.trim().parse()?, hi.trim().parse()?])
}

pub fn parse_lambdas(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad lambda {p:?}")))
        .collect()
}
