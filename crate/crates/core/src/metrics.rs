//! Correlation-based bias estimators.
//!
//! Two views of a layer are computed from paired pooled activations:
//!
//! * layer-wise: the mean per-channel correlation `S_F` for each factor,
//!   turned into a share of the layer's `C` units by a softmax over
//!   `{static, dynamic, identical}`;
//! * unit-wise: each channel's `(s_static, s_dynamic)` thresholded at `λ`
//!   into static / dynamic / joint / residual.
//!
//! Correlations use population (1/n) moments. A channel whose response is
//! constant on either side of the pair is *degenerate*: it scores 0 and is
//! reported in [`UnitCorrelations::degenerate`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::tensorio::ActivationSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    Static,
    Dynamic,
    Identical,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Static, Factor::Dynamic, Factor::Identical];

    pub fn as_str(self) -> &'static str {
        match self {
            Factor::Static => "static",
            Factor::Dynamic => "dynamic",
            Factor::Identical => "identical",
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "static" => Ok(Factor::Static),
            "dynamic" => Ok(Factor::Dynamic),
            "identical" => Ok(Factor::Identical),
            other => Err(Error::InvalidArgument(format!("unknown factor {other:?}"))),
        }
    }
}

/// One value per factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerFactor<T> {
    #[serde(rename = "static")]
    pub static_: T,
    pub dynamic: T,
    pub identical: T,
}

impl<T: Copy> PerFactor<T> {
    pub fn get(&self, factor: Factor) -> T {
        match factor {
            Factor::Static => self.static_,
            Factor::Dynamic => self.dynamic,
            Factor::Identical => self.identical,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Factor) -> T) -> Self {
        PerFactor {
            static_: f(Factor::Static),
            dynamic: f(Factor::Dynamic),
            identical: f(Factor::Identical),
        }
    }
}

/// How channel moments are accumulated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// One pass over the rows, collecting shifted sums in f64.
    #[default]
    Streaming,
    /// Mean first, then centred moments. For ill-conditioned dumps.
    Exact,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "streaming" => Ok(Precision::Streaming),
            "exact" => Ok(Precision::Exact),
            other => Err(Error::InvalidArgument(format!("unknown precision mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

/// Shifted sufficient statistics for one (x, y) column pair.
///
/// Values are accumulated relative to a fixed pivot (the first sample) so the
/// single pass does not cancel catastrophically when means dwarf variances.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Moments {
    n: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl Moments {
    #[inline]
    fn push(&mut self, dx: f64, dy: f64) {
        self.n += 1.0;
        self.sx += dx;
        self.sy += dy;
        self.sxx += dx * dx;
        self.syy += dy * dy;
        self.sxy += dx * dy;
    }

    fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.sx += other.sx;
        self.sy += other.sy;
        self.sxx += other.sxx;
        self.syy += other.syy;
        self.sxy += other.sxy;
    }

    fn correlation(&self) -> Correlation {
        let n = self.n;
        let vx = n * self.sxx - self.sx * self.sx;
        let vy = n * self.syy - self.sy * self.sy;
        if vx <= 0.0 || vy <= 0.0 {
            return Correlation {
                value: 0.0,
                degenerate: true,
            };
        }
        let cov = n * self.sxy - self.sx * self.sy;
        Correlation {
            value: cov / (vx * vy).sqrt(),
            degenerate: false,
        }
    }
}

/// Pearson correlation with population normalization.
///
/// Returns 0 with `degenerate = true` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: x.len(),
        });
    }
    let (x0, y0) = (x[0], y[0]);
    let mut m = Moments::default();
    for (&a, &b) in x.iter().zip(y) {
        m.push(a - x0, b - y0);
    }
    Ok(m.correlation())
}

fn pearson_two_pass(x: impl Iterator<Item = f64> + Clone, y: impl Iterator<Item = f64> + Clone) -> Correlation {
    let mut n = 0usize;
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut first = None;
    let (mut const_x, mut const_y) = (true, true);
    for (a, b) in x.clone().zip(y.clone()) {
        let (fa, fb) = *first.get_or_insert((a, b));
        const_x &= a == fa;
        const_y &= b == fb;
        sx += a;
        sy += b;
        n += 1;
    }
    if const_x || const_y {
        return Correlation {
            value: 0.0,
            degenerate: true,
        };
    }
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut cxy, mut cxx, mut cyy) = (0.0, 0.0, 0.0);
    for (a, b) in x.zip(y) {
        let (dx, dy) = (a - mx, b - my);
        cxy += dx * dy;
        cxx += dx * dx;
        cyy += dy * dy;
    }
    Correlation {
        value: cxy / (cxx * cyy).sqrt(),
        degenerate: false,
    }
}

/// Per-channel correlations of one factor at one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitCorrelations {
    pub layer_id: String,
    pub factor: Factor,
    pub s: Vec<f64>,
    /// Channels with zero variance on either member; their score is 0.
    pub degenerate: Vec<usize>,
}

impl UnitCorrelations {
    pub fn n_units(&self) -> usize {
        self.s.len()
    }

    pub(crate) fn from_parts(layer_id: &str, factor: Factor, parts: Vec<Correlation>) -> Self {
        let degenerate = parts
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.degenerate.then_some(i))
            .collect();
        UnitCorrelations {
            layer_id: layer_id.to_string(),
            factor,
            s: parts.into_iter().map(|c| c.value).collect(),
            degenerate,
        }
    }
}

const ROW_BLOCK: usize = 512;
const CHANNEL_BLOCK: usize = 64;

/// Streaming per-channel correlations with the default execution mode.
pub fn channel_correlations(act: &ActivationSet) -> Result<UnitCorrelations> {
    channel_correlations_with(act, Precision::Streaming, Execution::default())
}

/// Per-channel correlation between columns of `z1` and `z2`.
///
/// The streaming path tiles the matrix into fixed row × channel blocks and
/// merges row blocks in order, so sequential and parallel runs agree bit for
/// bit.
pub fn channel_correlations_with(
    act: &ActivationSet,
    precision: Precision,
    exec: Execution,
) -> Result<UnitCorrelations> {
    let (p, c) = act.z1.dim();
    if p < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: p });
    }
    let z1 = act.z1.as_slice().expect("ActivationSet matrices are standard layout");
    let z2 = act.z2.as_slice().expect("ActivationSet matrices are standard layout");

    let parts = match precision {
        Precision::Exact => exec.map_range(c, |ch| {
            pearson_two_pass(
                (0..p).map(move |r| z1[r * c + ch]),
                (0..p).map(move |r| z2[r * c + ch]),
            )
        }),
        Precision::Streaming => {
            let row_blocks = p.div_ceil(ROW_BLOCK);
            let chan_blocks = c.div_ceil(CHANNEL_BLOCK);
            let tiles = exec.map_range(row_blocks * chan_blocks, |t| {
                let (rb, cb) = (t / chan_blocks, t % chan_blocks);
                let rows = rb * ROW_BLOCK..((rb + 1) * ROW_BLOCK).min(p);
                let chans = cb * CHANNEL_BLOCK..((cb + 1) * CHANNEL_BLOCK).min(c);
                let mut acc = vec![Moments::default(); chans.len()];
                for r in rows {
                    let row1 = &z1[r * c..(r + 1) * c];
                    let row2 = &z2[r * c..(r + 1) * c];
                    for (m, ch) in acc.iter_mut().zip(chans.clone()) {
                        m.push(row1[ch] - z1[ch], row2[ch] - z2[ch]);
                    }
                }
                acc
            });
            let mut total = vec![Moments::default(); c];
            for (t, tile) in tiles.iter().enumerate() {
                let cb = t % chan_blocks;
                for (k, m) in tile.iter().enumerate() {
                    total[cb * CHANNEL_BLOCK + k].merge(m);
                }
            }
            total.iter().map(Moments::correlation).collect()
        }
    };
    Ok(UnitCorrelations::from_parts(&act.layer_id, act.factor, parts))
}

/// Mean per-channel correlation; degenerate channels count as 0.
pub fn layer_score(units: &UnitCorrelations) -> f64 {
    if units.s.is_empty() {
        return 0.0;
    }
    units.s.iter().sum::<f64>() / units.s.len() as f64
}

/// Softmax allocation of a layer's units across the three factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerBias {
    pub layer_id: String,
    pub n_units: usize,
    /// `S_F`, the mean channel correlation per factor.
    pub scores: PerFactor<f64>,
    /// `N_F = C · softmax(S)_F`.
    pub units: PerFactor<f64>,
    /// `100 · softmax(S)_F`.
    pub percent: PerFactor<f64>,
}

pub fn layer_bias(
    layer_id: &str,
    scores: PerFactor<f64>,
    n_units: usize,
) -> Result<LayerBias> {
    if n_units == 0 {
        return Err(Error::InvalidArgument("layer has no units".into()));
    }
    for f in Factor::ALL {
        if !scores.get(f).is_finite() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer_id}: non-finite {f} score {}",
                scores.get(f)
            )));
        }
    }
    let max = Factor::ALL
        .iter()
        .map(|&f| scores.get(f))
        .fold(f64::NEG_INFINITY, f64::max);
    let exp = PerFactor::from_fn(|f| (scores.get(f) - max).exp());
    let z = exp.static_ + exp.dynamic + exp.identical;
    let share = PerFactor::from_fn(|f| exp.get(f) / z);
    Ok(LayerBias {
        layer_id: layer_id.to_string(),
        n_units,
        scores,
        units: PerFactor::from_fn(|f| share.get(f) * n_units as f64),
        percent: PerFactor::from_fn(|f| share.get(f) * 100.0),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitCategory {
    Static,
    Dynamic,
    Joint,
    Residual,
}

impl UnitCategory {
    pub fn classify(s_static: f64, s_dynamic: f64, lambda: f64) -> Self {
        match (s_static >= lambda, s_dynamic >= lambda) {
            (true, true) => UnitCategory::Joint,
            (true, false) => UnitCategory::Static,
            (false, true) => UnitCategory::Dynamic,
            (false, false) => UnitCategory::Residual,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitProfile {
    pub channel: usize,
    pub s_static: f64,
    pub s_dynamic: f64,
    pub category: UnitCategory,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitCounts {
    #[serde(rename = "static")]
    pub static_: usize,
    pub dynamic: usize,
    pub joint: usize,
    pub residual: usize,
}

impl UnitCounts {
    pub fn total(&self) -> usize {
        self.static_ + self.dynamic + self.joint + self.residual
    }

    pub fn get(&self, category: UnitCategory) -> usize {
        match category {
            UnitCategory::Static => self.static_,
            UnitCategory::Dynamic => self.dynamic,
            UnitCategory::Joint => self.joint,
            UnitCategory::Residual => self.residual,
        }
    }

    fn bump(&mut self, category: UnitCategory) {
        match category {
            UnitCategory::Static => self.static_ += 1,
            UnitCategory::Dynamic => self.dynamic += 1,
            UnitCategory::Joint => self.joint += 1,
            UnitCategory::Residual => self.residual += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitTaxonomy {
    pub lambda: f64,
    pub profiles: Vec<UnitProfile>,
    pub counts: UnitCounts,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must lie in (0, 1), got {lambda}")))
    }
}

/// Threshold each channel's correlations. A value equal to `lambda` counts
/// as above it, so every channel lands in exactly one category.
pub fn categorize_units(s_static: &[f64], s_dynamic: &[f64], lambda: f64) -> Result<UnitTaxonomy> {
    if s_static.len() != s_dynamic.len() {
        return Err(Error::LengthMismatch {
            left: s_static.len(),
            right: s_dynamic.len(),
        });
    }
    check_lambda(lambda)?;
    let mut counts = UnitCounts::default();
    let profiles = s_static
        .iter()
        .zip(s_dynamic)
        .enumerate()
        .map(|(channel, (&st, &dy))| {
            let category = UnitCategory::classify(st, dy, lambda);
            counts.bump(category);
            UnitProfile {
                channel,
                s_static: st,
                s_dynamic: dy,
                category,
            }
        })
        .collect();
    Ok(UnitTaxonomy {
        lambda,
        profiles,
        counts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub counts: UnitCounts,
}

pub fn lambda_sweep(s_static: &[f64], s_dynamic: &[f64], lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    lambdas
        .iter()
        .map(|&lambda| {
            categorize_units(s_static, s_dynamic, lambda).map(|t| SweepRow {
                lambda,
                counts: t.counts,
            })
        })
        .collect()
}

/// Indices of the `k` largest scores, descending; ties go to the lower index.
pub fn rank_units(s: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > s.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot pick {k} units from a layer of {}",
            s.len()
        )));
    }
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Mutual information (nats) of a bivariate Gaussian with correlation `rho`.
pub fn gaussian_mi_lower_bound(rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mutual information is unbounded for |rho| >= 1 (rho = {rho})"
        )));
    }
    Ok(-0.5 * (-rho * rho).ln_1p())
}

/// Everything computed for one layer from its three activation sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAnalysis {
    pub bias: LayerBias,
    pub units: PerFactor<UnitCorrelations>,
}

pub fn analyze_layer(
    sets: &PerFactor<&ActivationSet>,
    precision: Precision,
    exec: Execution,
) -> Result<LayerAnalysis> {
    let layer_id = sets.static_.layer_id.clone();
    let units = PerFactor {
        static_: channel_correlations_with(sets.static_, precision, exec)?,
        dynamic: channel_correlations_with(sets.dynamic, precision, exec)?,
        identical: channel_correlations_with(sets.identical, precision, exec)?,
    };
    let n_units = units.static_.n_units();
    for f in [Factor::Dynamic, Factor::Identical] {
        let n = match f {
            Factor::Dynamic => units.dynamic.n_units(),
            _ => units.identical.n_units(),
        };
        if n != n_units {
            return Err(Error::ChannelMismatch {
                layer: layer_id,
                detail: format!("static has {n_units} channels, {f} has {n}"),
            });
        }
    }
    let scores = PerFactor {
        static_: layer_score(&units.static_),
        dynamic: layer_score(&units.dynamic),
        identical: layer_score(&units.identical),
    };
    Ok(LayerAnalysis {
        bias: layer_bias(&layer_id, scores, n_units)?,
        units,
    })
}
