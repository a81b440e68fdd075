//! Report forms: layer-wise bias curves, stacked unit-category bars, λ-sweep
//! tables, relative-drop summaries, center-bias maps and top-k masks.
//!
//! CSV layouts are fixed:
//!
//! ```text
//! layer curves  layer,S_static,S_dynamic,S_identical,pct_static,pct_dynamic,pct_identical
//! unit bars     model,layer,lambda,pct_dynamic,pct_static,pct_joint,pct_residual
//! ```
//!
//! Scores are written with 6 decimals, percentages and λ with 2. SVG charts
//! carry the same table in an XML comment and tag every mark with
//! `data-*` attributes.

mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{categorize_units, rank_units, Factor, LayerBias, SweepRow, UnitCounts, UnitProfile};
use crate::rng::Seed;
use crate::tensorio::{read_json, write_atomic, write_json};

pub use svg::{bar_segments, curve_y, BarSegment, CHART_HEIGHT, CHART_WIDTH};

/// One model analysed on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRun {
    pub model_id: String,
    pub dataset_id: String,
    /// Declared layer sequence of the model.
    pub layer_order: Vec<String>,
    /// Layer-wise bias, in `layer_order`. Empty for unit-only runs.
    #[serde(default)]
    pub layers: Vec<LayerBias>,
    #[serde(default)]
    pub unit_profiles: BTreeMap<String, Vec<UnitProfile>>,
    /// Primary threshold of `unit_profiles`.
    pub lambda: f64,
    /// Category counts per layer, one row per λ.
    #[serde(default)]
    pub unit_counts: BTreeMap<String, Vec<SweepRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<Seed>,
    /// Effective configuration that produced the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl AnalysisRun {
    pub fn new(model_id: &str, dataset_id: &str, layer_order: Vec<String>, lambda: f64) -> Self {
        AnalysisRun {
            model_id: model_id.to_string(),
            dataset_id: dataset_id.to_string(),
            layer_order,
            layers: Vec::new(),
            unit_profiles: BTreeMap::new(),
            lambda,
            unit_counts: BTreeMap::new(),
            seed: None,
            config: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.layers.is_empty() {
            let ids: Vec<&str> = self.layers.iter().map(|l| l.layer_id.as_str()).collect();
            let order: Vec<&str> = self.layer_order.iter().map(String::as_str).collect();
            if ids != order {
                return Err(Error::InvalidArgument(format!(
                    "run {}: layer results {ids:?} do not follow the declared order {order:?}",
                    self.model_id
                )));
            }
        }
        for key in self.unit_profiles.keys().chain(self.unit_counts.keys()) {
            if !self.layer_order.contains(key) {
                return Err(Error::InvalidArgument(format!(
                    "run {}: unit results for undeclared layer {key}",
                    self.model_id
                )));
            }
        }
        Ok(())
    }

    /// Category counts for `layer`: stored rows, else a recount of the
    /// stored profiles at the run's λ.
    pub fn counts_for(&self, layer: &str) -> Result<Vec<SweepRow>> {
        if let Some(rows) = self.unit_counts.get(layer) {
            return Ok(rows.clone());
        }
        match self.unit_profiles.get(layer) {
            Some(p) => {
                let st: Vec<f64> = p.iter().map(|u| u.s_static).collect();
                let dy: Vec<f64> = p.iter().map(|u| u.s_dynamic).collect();
                let t = categorize_units(&st, &dy, self.lambda)?;
                Ok(vec![SweepRow {
                    lambda: self.lambda,
                    counts: t.counts,
                }])
            }
            None => Ok(Vec::new()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let run: AnalysisRun = read_json(path)?;
        run.validate()?;
        Ok(run)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub svg: bool,
}

impl Formats {
    pub const ALL: Formats = Formats { csv: true, svg: true };
}

impl std::str::FromStr for Formats {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut f = Formats::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "csv" => f.csv = true,
                "svg" => f.svg = true,
                other => return Err(Error::InvalidArgument(format!("unknown report format {other:?}"))),
            }
        }
        if !(f.csv || f.svg) {
            return Err(Error::InvalidArgument("no report format selected".into()));
        }
        Ok(f)
    }
}

pub(crate) fn pct(x: f64) -> String {
    format!("{x:.2}")
}

pub(crate) fn score(x: f64) -> String {
    format!("{x:.6}")
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// File-name stem for a run: `model` or `model.dataset`, restricted to
/// `[A-Za-z0-9._-]`.
pub fn run_stem(run: &AnalysisRun) -> String {
    let raw = if run.dataset_id.is_empty() {
        run.model_id.clone()
    } else {
        format!("{}.{}", run.model_id, run.dataset_id)
    };
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

// ---------------------------------------------------------------------------
// Layer curves

pub const LAYER_CURVE_HEADER: [&str; 7] =
    ["layer", "S_static", "S_dynamic", "S_identical", "pct_static", "pct_dynamic", "pct_identical"];

pub(crate) fn layer_curve_rows(run: &AnalysisRun) -> Vec<Vec<String>> {
    run.layers
        .iter()
        .map(|l| {
            let mut row = vec![l.layer_id.clone()];
            row.extend(Factor::ALL.iter().map(|&f| score(l.scores.get(f))));
            row.extend(Factor::ALL.iter().map(|&f| pct(l.percent.get(f))));
            row
        })
        .collect()
}

pub fn render_layer_curves_csv(run: &AnalysisRun) -> Vec<u8> {
    csv_bytes(&LAYER_CURVE_HEADER, &layer_curve_rows(run))
}

pub fn render_layer_curves_svg(run: &AnalysisRun) -> String {
    svg::layer_curves(run, &String::from_utf8_lossy(&render_layer_curves_csv(run)))
}

/// Write `<stem>.layers.csv` and/or `<stem>.layers.svg` under `out`.
pub fn emit_layer_curves(run: &AnalysisRun, out: &Path, formats: Formats) -> Result<Vec<PathBuf>> {
    if run.layers.is_empty() {
        return Err(Error::InvalidArgument(format!("run {} has no layer results", run.model_id)));
    }
    run.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let stem = run_stem(run);
    let mut written = Vec::new();
    if formats.csv {
        let path = out.join(format!("{stem}.layers.csv"));
        write_atomic(&path, &render_layer_curves_csv(run))?;
        written.push(path);
    }
    if formats.svg {
        let path = out.join(format!("{stem}.layers.svg"));
        write_atomic(&path, render_layer_curves_svg(run).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// Unit bars

pub const UNIT_BAR_HEADER: [&str; 7] =
    ["model", "layer", "lambda", "pct_dynamic", "pct_static", "pct_joint", "pct_residual"];

/// One bar: category percentages of a layer at one λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitBar {
    pub model: String,
    pub layer: String,
    pub lambda: f64,
    pub counts: UnitCounts,
    /// Dynamic, static, joint, residual.
    pub percent: [f64; 4],
}

pub fn unit_percentages(counts: &UnitCounts) -> Result<[f64; 4]> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::InvalidArgument("unit counts are all zero".into()));
    }
    let p = |n: usize| 100.0 * n as f64 / total as f64;
    Ok([p(counts.dynamic), p(counts.static_), p(counts.joint), p(counts.residual)])
}

pub fn unit_bars(runs: &[AnalysisRun]) -> Result<Vec<UnitBar>> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no runs to report".into()));
    }
    let mut bars = Vec::new();
    for run in runs {
        run.validate()?;
        for layer in &run.layer_order {
            for row in run.counts_for(layer)? {
                bars.push(UnitBar {
                    model: run.model_id.clone(),
                    layer: layer.clone(),
                    lambda: row.lambda,
                    counts: row.counts,
                    percent: unit_percentages(&row.counts)?,
                });
            }
        }
    }
    Ok(bars)
}

pub(crate) fn unit_bar_rows(bars: &[UnitBar]) -> Vec<Vec<String>> {
    bars.iter()
        .map(|b| {
            let mut row = vec![b.model.clone(), b.layer.clone(), pct(b.lambda)];
            row.extend(b.percent.iter().map(|&p| pct(p)));
            row
        })
        .collect()
}

pub fn render_unit_bars_csv(bars: &[UnitBar]) -> Vec<u8> {
    csv_bytes(&UNIT_BAR_HEADER, &unit_bar_rows(bars))
}

pub fn render_unit_bars_svg(bars: &[UnitBar]) -> String {
    svg::unit_bars(bars, &String::from_utf8_lossy(&render_unit_bars_csv(bars)))
}

/// Write `unit_bars.csv` and/or `unit_bars.svg` under `out`.
pub fn emit_unit_bars(runs: &[AnalysisRun], out: &Path, formats: Formats) -> Result<Vec<PathBuf>> {
    let bars = unit_bars(runs)?;
    if bars.is_empty() {
        return Err(Error::InvalidArgument("runs carry no unit counts".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    if formats.csv {
        let path = out.join("unit_bars.csv");
        write_atomic(&path, &render_unit_bars_csv(&bars))?;
        written.push(path);
    }
    if formats.svg {
        let path = out.join("unit_bars.svg");
        write_atomic(&path, render_unit_bars_svg(&bars).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// Relative drop

/// `100 · (variant − baseline) / baseline`, in percent.
pub fn relative_drop(variant: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0 && baseline.is_finite()) || !variant.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "relative drop needs a positive baseline and finite values, got baseline {baseline}, variant {variant}"
        )));
    }
    Ok(100.0 * (variant - baseline) / baseline)
}

/// Accuracy pair written by an external evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub baseline: f64,
    pub variant: f64,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropSummary {
    pub label: String,
    pub baseline: f64,
    pub variant: f64,
    pub relative_drop_pct: f64,
}

impl ResultsFile {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn summarize(&self) -> Result<DropSummary> {
        Ok(DropSummary {
            label: self.label.clone(),
            baseline: self.baseline,
            variant: self.variant,
            relative_drop_pct: relative_drop(self.variant, self.baseline)?,
        })
    }
}

pub const DROP_HEADER: [&str; 4] = ["label", "baseline", "variant", "relative_drop_pct"];

pub fn render_drops_csv(drops: &[DropSummary]) -> Vec<u8> {
    let rows: Vec<Vec<String>> = drops
        .iter()
        .map(|d| vec![d.label.clone(), format!("{}", d.baseline), format!("{}", d.variant), format!("{:.1}", d.relative_drop_pct)])
        .collect();
    csv_bytes(&DROP_HEADER, &rows)
}

// ---------------------------------------------------------------------------
// Masks

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskFactor {
    Static,
    Dynamic,
    Random,
}

impl std::str::FromStr for MaskFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(MaskFactor::Static),
            "dynamic" => Ok(MaskFactor::Dynamic),
            "random" => Ok(MaskFactor::Random),
            _ => Err(Error::InvalidArgument(format!("mask factor must be static, dynamic or random, got {s:?}"))),
        }
    }
}

/// Channels to zero in a unit-removal experiment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub model_id: String,
    pub layer_id: String,
    pub factor: MaskFactor,
    pub k: usize,
    pub channels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<Seed>,
}

impl MaskSpec {
    pub fn validate(&self, n_channels: usize) -> Result<()> {
        let mut seen = vec![false; n_channels];
        if self.channels.len() != self.k {
            return Err(Error::InvalidArgument(format!("mask lists {} channels, k = {}", self.channels.len(), self.k)));
        }
        for &c in &self.channels {
            if c >= n_channels || std::mem::replace(&mut seen[c], true) {
                return Err(Error::InvalidArgument(format!("mask channel {c} repeated or out of range")));
            }
        }
        Ok(())
    }
}

/// Top-`k` channels by the factor's correlation, or `k` channels drawn
/// uniformly from `seed` for the random control. The random draw is the
/// first `k` entries of a seeded shuffle, so masks of growing `k` nest.
pub fn emit_mask_spec(
    model_id: &str,
    layer_id: &str,
    profiles: &[UnitProfile],
    factor: MaskFactor,
    k: usize,
    seed: Option<Seed>,
) -> Result<MaskSpec> {
    let n = profiles.len();
    if k > n {
        return Err(Error::InvalidArgument(format!("cannot mask {k} of {n} channels")));
    }
    let (positions, seed) = match factor {
        MaskFactor::Static => (rank_units(&profiles.iter().map(|p| p.s_static).collect::<Vec<_>>(), k)?, None),
        MaskFactor::Dynamic => (rank_units(&profiles.iter().map(|p| p.s_dynamic).collect::<Vec<_>>(), k)?, None),
        MaskFactor::Random => {
            let seed = seed.ok_or_else(|| Error::InvalidArgument("a random mask needs a seed".into()))?;
            let mut order = seed.fork("mask").fork(layer_id).rng().permutation(n);
            order.truncate(k);
            (order, Some(seed))
        }
    };
    let spec = MaskSpec {
        model_id: model_id.to_string(),
        layer_id: layer_id.to_string(),
        factor,
        k,
        channels: positions.into_iter().map(|i| profiles[i].channel).collect(),
        seed,
    };
    let max_channel = profiles.iter().map(|p| p.channel + 1).max().unwrap_or(0);
    spec.validate(max_channel.max(n))?;
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Center bias

/// Per-pixel foreground frequency over a dataset; `values[y][x]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterBiasMap {
    pub width: u32,
    pub height: u32,
    pub n_masks: usize,
    pub values: Vec<Vec<f64>>,
}

impl CenterBiasMap {
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize][x as usize]
    }
}

/// Nearest-neighbour source index of target index `t`.
fn nearest(t: u32, target: u32, source: u32) -> u32 {
    let s = ((t as u64 * 2 + 1) * source as u64) / (target as u64 * 2);
    (s as u32).min(source - 1)
}

/// Pixelwise mean of binary masks (nonzero = foreground) after
/// nearest-neighbour resampling to `width × height`.
pub fn center_bias_map(masks: &[GrayImage], (width, height): (u32, u32)) -> Result<CenterBiasMap> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("center bias needs at least one mask".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!("invalid target size {width}x{height}")));
    }
    let mut hits = vec![0u64; width as usize * height as usize];
    for (i, m) in masks.iter().enumerate() {
        let (sw, sh) = m.dimensions();
        if sw == 0 || sh == 0 {
            return Err(Error::InvalidArgument(format!("mask {i} is empty")));
        }
        let xs: Vec<u32> = (0..width).map(|x| nearest(x, width, sw)).collect();
        for y in 0..height {
            let sy = nearest(y, height, sh);
            for x in 0..width {
                if m.get_pixel(xs[x as usize], sy).0[0] != 0 {
                    hits[(y * width + x) as usize] += 1;
                }
            }
        }
    }
    let n = masks.len() as f64;
    let values = hits
        .chunks(width as usize)
        .map(|row| row.iter().map(|&h| h as f64 / n).collect())
        .collect();
    Ok(CenterBiasMap {
        width,
        height,
        n_masks: masks.len(),
        values,
    })
}

/// Every PNG under `dir`, recursively, in path order.
pub fn read_masks(dir: &Path) -> Result<Vec<GrayImage>> {
    let mut paths = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(path, e.into())
        })?;
        let is_png = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if entry.file_type().is_file() && is_png {
            paths.push(entry.into_path());
        }
    }
    paths
        .iter()
        .map(|p| Ok(image::open(p).map_err(|e| Error::image(p, e))?.to_luma8()))
        .collect()
}

pub fn render_center_bias_svg(map: &CenterBiasMap, metadata: Option<&serde_json::Value>) -> String {
    svg::center_bias(map, metadata)
}
