//! Synthetic activations with planted unit types, and a brute-force
//! correlation reference.
//!
//! Generative model. Every virtual clip has independent standard-normal
//! latents `a` (static content) and `b` (dynamic content). A static pair
//! shares `a` and draws `b` independently per member; a dynamic pair shares
//! `b`; an identical pair is one clip seen twice. Unit responses:
//!
//! ```text
//! static   a + e
//! dynamic  b + e
//! joint    (a + b)/sqrt(2) + e
//! residual e'                  e ~ N(0, sigma^2), e' ~ N(0, 1), fresh per member
//! ```
//!
//! Population correlations follow in closed form: a static unit scores
//! `1/(1+sigma^2)` on static pairs and 0 on dynamic pairs, a joint unit
//! `0.5/(1+sigma^2)` on both. An additive unit cannot exceed 0.5 on both
//! factors at once, so joint recovery is checked just below that ceiling.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{Correlation, Factor, PerFactor, UnitCategory, UnitCorrelations};
use crate::rng::Seed;
use crate::tensorio::{
    write_activation_set, write_json, ActivationSet, DType, DumpIndex, IndexLayer, MemberSpec, PairManifest,
    PairRecord, Task,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantCounts {
    #[serde(rename = "static")]
    pub static_: usize,
    pub dynamic: usize,
    pub joint: usize,
    pub residual: usize,
}

impl PlantCounts {
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
}

impl FromStr for PlantCounts {
    type Err = Error;

    /// `static=N,dynamic=N,joint=N,residual=N`; omitted kinds count 0.
    fn from_str(s: &str) -> Result<Self> {
        let mut c = PlantCounts::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected kind=N, got {part:?}")))?;
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad count in {part:?}")))?;
            match k.trim() {
                "static" => c.static_ = n,
                "dynamic" => c.dynamic = n,
                "joint" => c.joint = n,
                "residual" => c.residual = n,
                other => return Err(Error::InvalidArgument(format!("unknown unit kind {other:?}"))),
            }
        }
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub plant: PlantCounts,
    /// Pairs per factor.
    pub n_pairs: usize,
    pub noise_sigma: f64,
    pub seed: Seed,
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.plant.total() == 0 {
            return Err(Error::InvalidArgument("plant at least one unit".into()));
        }
        if self.n_pairs < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: self.n_pairs,
            });
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    /// Channel layout: static block, dynamic block, joint block, residual block.
    pub fn categories(&self) -> Vec<UnitCategory> {
        let p = &self.plant;
        [
            (UnitCategory::Static, p.static_),
            (UnitCategory::Dynamic, p.dynamic),
            (UnitCategory::Joint, p.joint),
            (UnitCategory::Residual, p.residual),
        ]
        .into_iter()
        .flat_map(|(c, n)| std::iter::repeat_n(c, n))
        .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCorrelation {
    pub s_static: f64,
    pub s_dynamic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub categories: Vec<UnitCategory>,
    pub counts: PlantCounts,
    pub expected: BTreeMap<String, ExpectedCorrelation>,
}

pub fn expected_correlation(category: UnitCategory, sigma: f64) -> ExpectedCorrelation {
    let full = 1.0 / (1.0 + sigma * sigma);
    let (s_static, s_dynamic) = match category {
        UnitCategory::Static => (full, 0.0),
        UnitCategory::Dynamic => (0.0, full),
        UnitCategory::Joint => (0.5 * full, 0.5 * full),
        UnitCategory::Residual => (0.0, 0.0),
    };
    ExpectedCorrelation { s_static, s_dynamic }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticLayer {
    pub sets: PerFactor<ActivationSet>,
    pub truth: PlantedTruth,
}

impl SyntheticLayer {
    pub fn get(&self, factor: Factor) -> &ActivationSet {
        match factor {
            Factor::Static => &self.sets.static_,
            Factor::Dynamic => &self.sets.dynamic,
            Factor::Identical => &self.sets.identical,
        }
    }

    pub fn refs(&self) -> PerFactor<&ActivationSet> {
        PerFactor {
            static_: &self.sets.static_,
            dynamic: &self.sets.dynamic,
            identical: &self.sets.identical,
        }
    }
}

/// Latent (a, b) for each member of each pair.
struct Latents {
    a: [Vec<f64>; 2],
    b: [Vec<f64>; 2],
}

fn latents(seed: Seed, factor: Factor, n: usize) -> Latents {
    let mut rng = seed.fork("latent").fork(factor.as_str()).rng();
    let mut lat = Latents {
        a: [Vec::with_capacity(n), Vec::with_capacity(n)],
        b: [Vec::with_capacity(n), Vec::with_capacity(n)],
    };
    for _ in 0..n {
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let (a0, a1, b0, b1) = match factor {
            Factor::Static => {
                let a = draw();
                (a, a, draw(), draw())
            }
            Factor::Dynamic => {
                let b = draw();
                (draw(), draw(), b, b)
            }
            Factor::Identical => {
                let (a, b) = (draw(), draw());
                (a, a, b, b)
            }
        };
        lat.a[0].push(a0);
        lat.a[1].push(a1);
        lat.b[0].push(b0);
        lat.b[1].push(b1);
    }
    lat
}

fn respond(category: UnitCategory, a: f64, b: f64, noise: f64, sigma: f64) -> f64 {
    match category {
        UnitCategory::Static => a + sigma * noise,
        UnitCategory::Dynamic => b + sigma * noise,
        UnitCategory::Joint => (a + b) * std::f64::consts::FRAC_1_SQRT_2 + sigma * noise,
        UnitCategory::Residual => noise,
    }
}

/// Plant one layer named `layer_id`. Channels are generated independently
/// from per-channel streams, so the result does not depend on `exec`.
pub fn generate_synthetic_activations(cfg: &PlantConfig, layer_id: &str, exec: Execution) -> Result<SyntheticLayer> {
    cfg.validate()?;
    let categories = cfg.categories();
    let (p, c) = (cfg.n_pairs, categories.len());

    let build = |factor: Factor| -> Result<ActivationSet> {
        let lat = latents(cfg.seed, factor, p);
        let noise_root = cfg.seed.fork("noise").fork(factor.as_str());
        let columns = exec.map_range(c, |ch| {
            let mut rng = noise_root.fork_index(ch as u64).rng();
            let mut cols = [Vec::with_capacity(p), Vec::with_capacity(p)];
            for row in 0..p {
                for (m, col) in cols.iter_mut().enumerate() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    col.push(respond(categories[ch], lat.a[m][row], lat.b[m][row], e, cfg.noise_sigma));
                }
            }
            cols
        });
        let z1 = Array2::from_shape_fn((p, c), |(r, ch)| columns[ch][0][r]);
        let z2 = if factor == Factor::Identical {
            z1.clone()
        } else {
            Array2::from_shape_fn((p, c), |(r, ch)| columns[ch][1][r])
        };
        ActivationSet::new(layer_id, factor, z1, z2)
    };

    let sets = PerFactor {
        static_: build(Factor::Static)?,
        dynamic: build(Factor::Dynamic)?,
        identical: build(Factor::Identical)?,
    };
    let expected = [UnitCategory::Static, UnitCategory::Dynamic, UnitCategory::Joint, UnitCategory::Residual]
        .into_iter()
        .map(|cat| {
            let name = serde_json::to_value(cat).unwrap().as_str().unwrap().to_string();
            (name, expected_correlation(cat, cfg.noise_sigma))
        })
        .collect();
    Ok(SyntheticLayer {
        sets,
        truth: PlantedTruth {
            categories,
            counts: cfg.plant,
            expected,
        },
    })
}

/// Naive reference: column means first, then centred moments.
pub fn brute_force_correlations(act: &ActivationSet) -> Result<UnitCorrelations> {
    let (p, c) = act.z1.dim();
    if p < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: p });
    }
    let mut parts = Vec::with_capacity(c);
    for ch in 0..c {
        let x: Vec<f64> = act.z1.column(ch).to_vec();
        let y: Vec<f64> = act.z2.column(ch).to_vec();
        if x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]) {
            parts.push(Correlation {
                value: 0.0,
                degenerate: true,
            });
            continue;
        }
        let n = p as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for i in 0..p {
            cov += (x[i] - mx) * (y[i] - my);
            vx += (x[i] - mx) * (x[i] - mx);
            vy += (y[i] - my) * (y[i] - my);
        }
        cov /= n;
        vx /= n;
        vy /= n;
        parts.push(Correlation {
            value: cov / (vx.sqrt() * vy.sqrt()),
            degenerate: false,
        });
    }
    Ok(UnitCorrelations::from_parts(&act.layer_id, act.factor, parts))
}

/// A manifest consistent with a synthetic dump: `n_pairs` valid
/// action-recognition pairs per factor.
pub fn synthetic_manifest(n_pairs: usize, seed: Seed) -> PairManifest {
    let member = |k: usize, style: &str, perm: Option<u64>| MemberSpec {
        video_id: format!("synthetic-{k:05}"),
        style_id: Some(style.to_string()),
        perm_seed: perm.map(Seed),
        flow_jitter: None,
        frame: None,
        frame_order: None,
    };
    let mut pairs = Vec::with_capacity(3 * n_pairs);
    for factor in Factor::ALL {
        for k in 0..n_pairs {
            let (a, b) = match factor {
                Factor::Static => (
                    member(k, "channel-rotate", Some(2 * k as u64 + 1)),
                    member(k, "channel-rotate", Some(2 * k as u64 + 2)),
                ),
                Factor::Dynamic => (member(k, "channel-rotate", None), member(k, "posterize-4", None)),
                Factor::Identical => (member(k, "channel-rotate", None), member(k, "channel-rotate", None)),
            };
            pairs.push(PairRecord {
                pair_id: format!("synthetic-{k:05}.{factor}"),
                factor,
                member_a: a,
                member_b: b,
            });
        }
    }
    PairManifest {
        dataset_id: "synthetic".into(),
        task: Task::ActionRecognition,
        global_seed: seed,
        sampling: None,
        pairs,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub config: PlantConfig,
    pub layers: Vec<String>,
    pub truth: PlantedTruth,
}

/// Write a standard dump of `n_layers` planted layers (`layer1`, `layer2`, ...)
/// plus `manifest.json`, `index.json` and `truth.json`. Layer `i` uses the
/// seed `cfg.seed.fork_index(i)`.
pub fn write_synthetic_dump(out: &Path, cfg: &PlantConfig, n_layers: usize, exec: Execution) -> Result<TruthFile> {
    cfg.validate()?;
    if n_layers == 0 {
        return Err(Error::InvalidArgument("need at least one layer".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut index = DumpIndex::default();
    let mut truth = None;
    for i in 0..n_layers {
        let id = format!("layer{}", i + 1);
        let layer_cfg = PlantConfig {
            seed: cfg.seed.fork_index(i as u64),
            ..*cfg
        };
        let layer = generate_synthetic_activations(&layer_cfg, &id, exec)?;
        for f in Factor::ALL {
            write_activation_set(out, layer.get(f), DType::F64)?;
        }
        index.layers.push(IndexLayer {
            id,
            channels: layer.truth.categories.len(),
        });
        truth.get_or_insert(layer.truth);
    }
    write_json(&out.join("index.json"), &index)?;
    synthetic_manifest(cfg.n_pairs, cfg.seed).save(&out.join("manifest.json"))?;
    let file = TruthFile {
        config: *cfg,
        layers: index.layers.iter().map(|l| l.id.clone()).collect(),
        truth: truth.expect("at least one layer"),
    };
    write_json(&out.join("truth.json"), &file)?;
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::channel_correlations;
    use crate::tensorio::validate_manifest;

    fn cfg(plant: &str, p: usize, sigma: f64) -> PlantConfig {
        PlantConfig {
            plant: plant.parse().unwrap(),
            n_pairs: p,
            noise_sigma: sigma,
            seed: Seed(2024),
        }
    }

    #[test]
    fn noiseless_static_unit_tracks_static_pairs() {
        let layer = generate_synthetic_activations(&cfg("static=4", 4096, 0.0), "l", Execution::default()).unwrap();
        let s = channel_correlations(layer.get(Factor::Static)).unwrap();
        // sigma = 0 shares the whole response, so s = 1 up to rounding.
        for v in s.s {
            assert!((v - 1.0).abs() < 0.02, "{v}");
        }
        let d = channel_correlations(layer.get(Factor::Dynamic)).unwrap();
        for v in d.s {
            assert!(v.abs() < 4.0 / 64.0, "{v}");
        }
    }

    #[test]
    fn joint_units_sit_at_half() {
        let expect = expected_correlation(UnitCategory::Joint, 0.0);
        assert_eq!((expect.s_static, expect.s_dynamic), (0.5, 0.5));
        let layer = generate_synthetic_activations(&cfg("joint=8", 4096, 0.0), "l", Execution::default()).unwrap();
        for f in [Factor::Static, Factor::Dynamic] {
            for v in channel_correlations(layer.get(f)).unwrap().s {
                assert!((v - 0.5).abs() < 4.0 / 64.0, "{f}: {v}");
            }
        }
    }

    #[test]
    fn identical_factor_is_all_ones() {
        let layer = generate_synthetic_activations(&cfg("static=3,dynamic=3,joint=3,residual=3", 50, 0.0), "l", Execution::default()).unwrap();
        let s = channel_correlations(layer.get(Factor::Identical)).unwrap();
        assert!(s.s.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn generation_is_schedule_independent() {
        let c = cfg("static=5,dynamic=5,joint=5,residual=5", 300, 0.3);
        let a = generate_synthetic_activations(&c, "l", Execution::Sequential).unwrap();
        let b = generate_synthetic_activations(&c, "l", Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn brute_force_fixtures() {
        let z = Array2::from_shape_fn((5, 3), |(r, c)| (r * r + c) as f64);
        let set = ActivationSet::new("l", Factor::Identical, z.clone(), z.clone()).unwrap();
        let u = brute_force_correlations(&set).unwrap();
        for v in u.s {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let mut z1 = z.clone();
        z1.column_mut(2).fill(3.3);
        let set = ActivationSet::new("l", Factor::Static, z1, z).unwrap();
        let u = brute_force_correlations(&set).unwrap();
        assert_eq!(u.degenerate, vec![2]);
        assert_eq!(u.s[2], 0.0);
        let short = ActivationSet::new("l", Factor::Static, Array2::zeros((1, 2)), Array2::zeros((1, 2))).unwrap();
        assert!(brute_force_correlations(&short).is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(cfg("", 10, 0.1).validate().is_err());
        assert!(cfg("static=1", 1, 0.1).validate().is_err());
        assert!(cfg("static=1", 10, -1.0).validate().is_err());
        assert!("static=1,weird=2".parse::<PlantCounts>().is_err());
    }

    #[test]
    fn synthetic_manifest_is_valid() {
        let m = synthetic_manifest(7, Seed(1));
        assert!(validate_manifest(&m).is_empty());
        assert_eq!(m.count(Factor::Dynamic), 7);
    }
}
