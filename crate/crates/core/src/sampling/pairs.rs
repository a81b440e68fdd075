use std::fs;
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::Factor;
use crate::rng::{Seed, SplitMix64};
use crate::sampling::flow::{jitter_flow, FlowFrame, FlowJitterParams};
use crate::sampling::style::StyleTransform;
use crate::sampling::{list_frame_files, permutation_for, read_frame, read_sequence, write_frames, write_png, FrameSequence};
use crate::tensorio::{MemberSpec, PairManifest, PairRecord, SamplingOptions, ShuffleMode, Task};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    #[serde(rename = "static")]
    pub static_: usize,
    pub dynamic: usize,
    pub identical: usize,
}

impl PairCounts {
    pub fn get(&self, factor: Factor) -> usize {
        match factor {
            Factor::Static => self.static_,
            Factor::Dynamic => self.dynamic,
            Factor::Identical => self.identical,
        }
    }
}

impl FromStr for PairCounts {
    type Err = Error;

    /// `static=N,dynamic=N,identical=N`; omitted factors count 0.
    fn from_str(s: &str) -> Result<Self> {
        let mut counts = PairCounts::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected factor=N, got {part:?}")))?;
            let n: usize = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad count in {part:?}")))?;
            match key.trim().parse::<Factor>()? {
                Factor::Static => counts.static_ = n,
                Factor::Dynamic => counts.dynamic = n,
                Factor::Identical => counts.identical = n,
            }
        }
        Ok(counts)
    }
}

/// Sampling ranges for flow jitter. Hue in degrees, `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterRanges {
    pub hue: [f64; 2],
    pub sat: [f64; 2],
}

impl Default for JitterRanges {
    fn default() -> Self {
        JitterRanges {
            hue: [0.0, 360.0],
            sat: [0.5, 1.5],
        }
    }
}

impl JitterRanges {
    pub fn validate(&self) -> Result<()> {
        let [h0, h1] = self.hue;
        let [s0, s1] = self.sat;
        if !(0.0..=360.0).contains(&h0) || !(0.0..=360.0).contains(&h1) || h0 > h1 {
            return Err(Error::InvalidArgument(format!("hue range {:?} must lie within [0, 360]", self.hue)));
        }
        if !(s0 >= 0.0 && s0 <= s1 && s1.is_finite()) {
            return Err(Error::InvalidArgument(format!("saturation range {:?} must be nonnegative", self.sat)));
        }
        Ok(())
    }

    /// Draw one parameter set from its own seed.
    pub fn draw(&self, seed: Seed) -> FlowJitterParams {
        let mut rng = seed.rng();
        let hue = rng.uniform(self.hue[0], self.hue[1]).rem_euclid(360.0);
        let sat = rng.uniform(self.sat[0], self.sat[1]);
        FlowJitterParams {
            hue_delta: hue,
            sat_scale: sat,
            seed: Some(seed),
        }
    }
}

fn pair_stream(seed: Seed, factor: Factor, k: usize) -> SplitMix64 {
    seed.fork(factor.as_str()).fork_index(k as u64).rng()
}

fn pick_one<'a>(rng: &mut SplitMix64, styles: &'a [StyleTransform]) -> Option<&'a StyleTransform> {
    (!styles.is_empty()).then(|| &styles[rng.below(styles.len() as u64) as usize])
}

fn pick_two<'a>(rng: &mut SplitMix64, styles: &'a [StyleTransform]) -> (&'a StyleTransform, &'a StyleTransform) {
    let n = styles.len() as u64;
    let i = rng.below(n);
    let mut j = rng.below(n - 1);
    if j >= i {
        j += 1;
    }
    (&styles[i as usize], &styles[j as usize])
}

fn distinct_draw(rng: &mut SplitMix64, avoid: u64) -> u64 {
    loop {
        let v = rng.next_u64();
        if v != avoid {
            return v;
        }
    }
}

fn find_style<'a>(styles: &'a [StyleTransform], id: Option<&str>) -> Result<Option<&'a StyleTransform>> {
    match id {
        None => Ok(None),
        Some(id) => styles
            .iter()
            .find(|s| s.style_id == id)
            .map(Some)
            .ok_or_else(|| Error::UnknownStyle(id.to_string())),
    }
}

fn check_styles(counts: &PairCounts, styles: &[StyleTransform]) -> Result<()> {
    if counts.dynamic > 0 && styles.len() < 2 {
        return Err(Error::NotEnoughStyles(styles.len()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionPair {
    pub record: PairRecord,
    pub member_a: FrameSequence,
    pub member_b: FrameSequence,
}

fn action_member(video_id: &str, style: Option<&StyleTransform>, perm: Option<u64>, n_frames: usize) -> MemberSpec {
    let perm_seed = perm.map(Seed);
    MemberSpec {
        video_id: video_id.to_string(),
        style_id: style.map(|s| s.style_id.clone()),
        perm_seed,
        flow_jitter: None,
        frame: None,
        frame_order: perm_seed.map(|p| permutation_for(p, n_frames).into_iter().map(|i| i as u32).collect()),
    }
}

/// Build the frames a member spec describes: style first, then the recorded permutation.
pub fn realize_action_member(seq: &FrameSequence, spec: &MemberSpec, styles: &[StyleTransform]) -> Result<FrameSequence> {
    let styled = match find_style(styles, spec.style_id.as_deref())? {
        Some(style) => style.apply_sequence(seq)?,
        None => seq.clone(),
    };
    Ok(match spec.perm_seed {
        Some(p) => styled.reorder(&permutation_for(p, styled.len())),
        None => styled,
    })
}

/// Pairs for one action-recognition clip.
///
/// Pair `k` of factor `F` draws from the stream `seed.fork(F).fork_index(k)`.
pub fn make_pairs_action(
    seq: &FrameSequence,
    styles: &[StyleTransform],
    seed: Seed,
    counts: &PairCounts,
    shuffle: ShuffleMode,
) -> Result<Vec<ActionPair>> {
    check_styles(counts, styles)?;
    let vid = seq.video_id.as_str();
    let n = seq.len();
    let mut out = Vec::new();
    for factor in Factor::ALL {
        for k in 0..counts.get(factor) {
            let mut rng = pair_stream(seed, factor, k);
            let (a, b) = match factor {
                Factor::Static => {
                    let style = pick_one(&mut rng, styles);
                    let pa = rng.next_u64();
                    let pb = distinct_draw(&mut rng, pa);
                    let a_perm = match shuffle {
                        ShuffleMode::Both => Some(pa),
                        ShuffleMode::One => None,
                    };
                    (action_member(vid, style, a_perm, n), action_member(vid, style, Some(pb), n))
                }
                Factor::Dynamic => {
                    let (sa, sb) = pick_two(&mut rng, styles);
                    (action_member(vid, Some(sa), None, n), action_member(vid, Some(sb), None, n))
                }
                Factor::Identical => {
                    let m = action_member(vid, pick_one(&mut rng, styles), None, n);
                    (m.clone(), m)
                }
            };
            let member_a = realize_action_member(seq, &a, styles)?;
            let member_b = if factor == Factor::Identical {
                member_a.clone()
            } else {
                realize_action_member(seq, &b, styles)?
            };
            out.push(ActionPair {
                record: PairRecord {
                    pair_id: format!("{vid}.{factor}.{k:04}"),
                    factor,
                    member_a: a,
                    member_b: b,
                },
                member_a,
                member_b,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VosMember {
    pub rgb: RgbImage,
    pub flow: FlowFrame,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VosPair {
    pub record: PairRecord,
    pub member_a: VosMember,
    pub member_b: VosMember,
}

fn vos_member(video_id: &str, frame: u32, style: Option<&StyleTransform>, jitter: Option<FlowJitterParams>) -> MemberSpec {
    MemberSpec {
        video_id: video_id.to_string(),
        style_id: style.map(|s| s.style_id.clone()),
        perm_seed: None,
        flow_jitter: jitter,
        frame: Some(frame),
        frame_order: None,
    }
}

pub fn realize_vos_member(
    rgb: &RgbImage,
    flow: &FlowFrame,
    spec: &MemberSpec,
    styles: &[StyleTransform],
) -> Result<VosMember> {
    let rgb = match find_style(styles, spec.style_id.as_deref())? {
        Some(style) => style.apply_frame(&spec.video_id, spec.frame.unwrap_or(0) as usize, rgb)?,
        None => rgb.clone(),
    };
    let flow = match &spec.flow_jitter {
        Some(params) => jitter_flow(flow, params),
        None => flow.clone(),
    };
    Ok(VosMember { rgb, flow })
}

/// Pairs for one (RGB frame, flow frame) input of a two-stream VOS model.
#[allow(clippy::too_many_arguments)]
pub fn make_pairs_vos(
    video_id: &str,
    frame: u32,
    rgb: &RgbImage,
    flow: &FlowFrame,
    styles: &[StyleTransform],
    seed: Seed,
    counts: &PairCounts,
    jitter: &JitterRanges,
) -> Result<Vec<VosPair>> {
    check_styles(counts, styles)?;
    jitter.validate()?;
    let mut out = Vec::new();
    for factor in Factor::ALL {
        for k in 0..counts.get(factor) {
            let mut rng = pair_stream(seed, factor, k);
            let (a, b) = match factor {
                Factor::Static => {
                    let style = pick_one(&mut rng, styles);
                    let ja = rng.next_u64();
                    let jb = distinct_draw(&mut rng, ja);
                    (
                        vos_member(video_id, frame, style, Some(jitter.draw(Seed(ja)))),
                        vos_member(video_id, frame, style, Some(jitter.draw(Seed(jb)))),
                    )
                }
                Factor::Dynamic => {
                    let (sa, sb) = pick_two(&mut rng, styles);
                    (vos_member(video_id, frame, Some(sa), None), vos_member(video_id, frame, Some(sb), None))
                }
                Factor::Identical => {
                    let m = vos_member(video_id, frame, pick_one(&mut rng, styles), None);
                    (m.clone(), m)
                }
            };
            let member_a = realize_vos_member(rgb, flow, &a, styles)?;
            let member_b = if factor == Factor::Identical {
                member_a.clone()
            } else {
                realize_vos_member(rgb, flow, &b, styles)?
            };
            out.push(VosPair {
                record: PairRecord {
                    pair_id: format!("{video_id}.f{frame:06}.{factor}.{k:04}"),
                    factor,
                    member_a: a,
                    member_b: b,
                },
                member_a,
                member_b,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPairsConfig {
    pub task: Task,
    pub styles: Vec<String>,
    /// Pairs per video.
    pub counts: PairCounts,
    pub seed: Seed,
    pub shuffle: ShuffleMode,
    pub jitter: JitterRanges,
    pub exec: Execution,
}

fn video_dirs(dataset: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dataset).map_err(|e| Error::io(dataset, e))? {
        let entry = entry.map_err(|e| Error::io(dataset, e))?;
        if entry.path().is_dir() && !list_frame_files(&entry.path())?.is_empty() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Generate pairs for every video under `dataset`, write member frames under
/// `out/<pair_id>/{a,b}/`, and write `out/manifest.json`.
///
/// Action members are written as `%06d.png` frame sequences; VOS members as
/// `rgb.png` and `flow.png`.
pub fn generate_dataset_pairs(dataset: &Path, out: &Path, cfg: &DatasetPairsConfig) -> Result<PairManifest> {
    let styles: Vec<StyleTransform> = cfg.styles.iter().map(|s| StyleTransform::resolve(s, dataset)).collect();
    check_styles(&cfg.counts, &styles)?;
    cfg.jitter.validate()?;
    let videos = video_dirs(dataset)?;
    if videos.is_empty() {
        return Err(Error::InvalidArgument(format!("no frame directories under {}", dataset.display())));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let root = cfg.seed.fork("pairs");

    let per_video = cfg.exec.map_slice(&videos, |vid| -> Result<Vec<PairRecord>> {
        let vseed = root.fork(vid);
        let vdir = dataset.join(vid);
        match cfg.task {
            Task::ActionRecognition => {
                let seq = read_sequence(&vdir, vid)?;
                let pairs = make_pairs_action(&seq, &styles, vseed, &cfg.counts, cfg.shuffle)?;
                pairs
                    .into_iter()
                    .map(|p| {
                        let dir = out.join(&p.record.pair_id);
                        write_frames(&dir.join("a"), &p.member_a.frames)?;
                        write_frames(&dir.join("b"), &p.member_b.frames)?;
                        Ok(p.record)
                    })
                    .collect()
            }
            Task::Vos => {
                let rgb_files = list_frame_files(&vdir)?;
                let flow_dir = vdir.join("flow");
                let flow_files = if flow_dir.is_dir() { list_frame_files(&flow_dir)? } else { Vec::new() };
                let usable = rgb_files.len().min(flow_files.len());
                if usable == 0 {
                    return Err(Error::InvalidArgument(format!("video {vid} has no flow frames in {}", flow_dir.display())));
                }
                let t = vseed.fork("frame").rng().below(usable as u64) as usize;
                let rgb = read_frame(&rgb_files[t])?;
                let flow = FlowFrame(read_frame(&flow_files[t])?);
                let pairs = make_pairs_vos(vid, t as u32, &rgb, &flow, &styles, vseed, &cfg.counts, &cfg.jitter)?;
                pairs
                    .into_iter()
                    .map(|p| {
                        let dir = out.join(&p.record.pair_id);
                        for (m, member) in [("a", &p.member_a), ("b", &p.member_b)] {
                            let mdir = dir.join(m);
                            fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
                            write_png(&mdir.join("rgb.png"), &member.rgb)?;
                            write_png(&mdir.join("flow.png"), &member.flow.0)?;
                        }
                        Ok(p.record)
                    })
                    .collect()
            }
        }
    });

    let mut pairs = Vec::new();
    for records in per_video {
        pairs.extend(records?);
    }
    let manifest = PairManifest {
        dataset_id: dataset
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        task: cfg.task,
        global_seed: cfg.seed,
        sampling: Some(SamplingOptions {
            shuffle_mode: cfg.shuffle,
            hue_range: cfg.jitter.hue,
            sat_range: cfg.jitter.sat,
            styles: cfg.styles.clone(),
        }),
        pairs,
    };
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::BuiltinStyle;
    use crate::tensorio::validate_manifest;
    use image::Rgb;

    fn clip(n: u8) -> FrameSequence {
        let frames = (0..n).map(|t| RgbImage::from_fn(4, 3, |x, y| Rgb([t * 20, x as u8 * 30, y as u8 * 40]))).collect();
        FrameSequence::new("clip", frames).unwrap()
    }

    fn styles(ids: &[&str]) -> Vec<StyleTransform> {
        ids.iter().map(|s| StyleTransform::builtin(s).unwrap()).collect()
    }

    fn counts(s: &str) -> PairCounts {
        s.parse().unwrap()
    }

    fn manifest_of(records: Vec<PairRecord>, task: Task) -> PairManifest {
        PairManifest {
            dataset_id: "t".into(),
            task,
            global_seed: Seed(0),
            sampling: None,
            pairs: records,
        }
    }

    #[test]
    fn counts_parse() {
        assert_eq!(counts("static=3, dynamic=2,identical=1"), PairCounts { static_: 3, dynamic: 2, identical: 1 });
        assert_eq!(counts("dynamic=4"), PairCounts { static_: 0, dynamic: 4, identical: 0 });
        assert!("static".parse::<PairCounts>().is_err());
        assert!("bogus=1".parse::<PairCounts>().is_err());
    }

    #[test]
    fn identical_action_pair() {
        let p = make_pairs_action(&clip(4), &styles(&["posterize-4"]), Seed(1), &counts("identical=1"), ShuffleMode::Both).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].record.member_a, p[0].record.member_b);
        assert_eq!(p[0].member_a, p[0].member_b);
    }

    #[test]
    fn dynamic_action_pair() {
        let p = make_pairs_action(&clip(4), &styles(&["channel-rotate", "posterize-4"]), Seed(2), &counts("dynamic=1"), ShuffleMode::Both).unwrap();
        let r = &p[0].record;
        let mut ids = [r.member_a.style_id.clone().unwrap(), r.member_b.style_id.clone().unwrap()];
        ids.sort();
        assert_eq!(ids, ["channel-rotate".to_string(), "posterize-4".to_string()]);
        assert!(r.member_a.perm_seed.is_none() && r.member_b.perm_seed.is_none());
    }

    #[test]
    fn dynamic_pairs_are_frame_aligned() {
        let seq = clip(5);
        let st = styles(&["identity-check", "channel-rotate"]);
        let p = make_pairs_action(&seq, &st, Seed(3), &counts("dynamic=3"), ShuffleMode::Both).unwrap();
        for pair in &p {
            for (spec, member) in [(&pair.record.member_a, &pair.member_a), (&pair.record.member_b, &pair.member_b)] {
                let style = spec.style_id.as_deref().unwrap();
                for (t, src) in seq.frames.iter().enumerate() {
                    assert_eq!(member.frames[t], crate::sampling::builtin_style(src, style).unwrap());
                }
            }
        }
    }

    #[test]
    fn static_action_pair_is_reproducible() {
        let st = styles(&["posterize-4", "channel-rotate"]);
        let a = make_pairs_action(&clip(6), &st, Seed(9), &counts("static=1"), ShuffleMode::Both).unwrap();
        let b = make_pairs_action(&clip(6), &st, Seed(9), &counts("static=1"), ShuffleMode::Both).unwrap();
        assert_eq!(a, b);
        let r = &a[0].record;
        assert_eq!(r.member_a.style_id, r.member_b.style_id);
        assert_ne!(r.member_a.perm_seed, r.member_b.perm_seed);
        assert!(r.member_a.perm_seed.is_some());
        // The manifest alone regenerates the frames.
        let again = realize_action_member(&clip(6), &r.member_b, &st).unwrap();
        assert_eq!(again, a[0].member_b);
    }

    #[test]
    fn shuffle_one_keeps_member_a_in_order() {
        let st = styles(&["identity-check"]);
        let p = make_pairs_action(&clip(6), &st, Seed(4), &counts("static=2"), ShuffleMode::One).unwrap();
        for pair in &p {
            assert!(pair.record.member_a.perm_seed.is_none());
            assert_eq!(pair.member_a, clip(6));
        }
        assert!(validate_manifest(&manifest_of(p.into_iter().map(|p| p.record).collect(), Task::ActionRecognition)).is_empty());
    }

    #[test]
    fn too_few_styles() {
        let err = make_pairs_action(&clip(2), &styles(&["posterize-4"]), Seed(0), &counts("dynamic=1"), ShuffleMode::Both).unwrap_err();
        assert!(matches!(err, Error::NotEnoughStyles(1)));
        let flow = FlowFrame(RgbImage::new(2, 2));
        let err = make_pairs_vos("v", 0, &RgbImage::new(2, 2), &flow, &[], Seed(0), &counts("dynamic=1"), &JitterRanges::default()).unwrap_err();
        assert!(matches!(err, Error::NotEnoughStyles(0)));
    }

    #[test]
    fn generated_action_manifest_validates() {
        let st = styles(&BuiltinStyle::PROXIES);
        let p = make_pairs_action(&clip(8), &st, Seed(11), &counts("static=4,dynamic=4,identical=2"), ShuffleMode::Both).unwrap();
        let m = manifest_of(p.into_iter().map(|p| p.record).collect(), Task::ActionRecognition);
        assert_eq!(validate_manifest(&m), vec![]);
    }

    fn vos_inputs() -> (RgbImage, FlowFrame) {
        let rgb = RgbImage::from_fn(6, 5, |x, y| Rgb([x as u8 * 40, y as u8 * 50, 90]));
        let flow = FlowFrame::encode(6, 5, 4.0, |x, y| (x as f64 - 2.5, y as f64 - 2.0));
        (rgb, flow)
    }

    #[test]
    fn vos_pairs() {
        let (rgb, flow) = vos_inputs();
        let st = styles(&["posterize-4", "luminance-invert"]);
        let jr = JitterRanges::default();

        let id = make_pairs_vos("v", 0, &rgb, &flow, &st, Seed(3), &counts("identical=1"), &jr).unwrap();
        assert_eq!(id[0].record.member_a, id[0].record.member_b);

        let dy = make_pairs_vos("v", 0, &rgb, &flow, &st, Seed(3), &counts("dynamic=1"), &jr).unwrap();
        assert_eq!(dy[0].member_a.flow, dy[0].member_b.flow);
        assert_ne!(dy[0].record.member_a.style_id, dy[0].record.member_b.style_id);

        let s1 = make_pairs_vos("v", 0, &rgb, &flow, &st, Seed(3), &counts("static=1"), &jr).unwrap();
        let s2 = make_pairs_vos("v", 0, &rgb, &flow, &st, Seed(3), &counts("static=1"), &jr).unwrap();
        assert_eq!(s1, s2);
        let (ja, jb) = (s1[0].record.member_a.flow_jitter.clone().unwrap(), s1[0].record.member_b.flow_jitter.clone().unwrap());
        assert_ne!(ja, jb);
        for j in [&ja, &jb] {
            assert!((0.0..360.0).contains(&j.hue_delta));
            assert!((0.5..=1.5).contains(&j.sat_scale));
            assert_eq!(&jr.draw(j.seed.unwrap()), j);
        }
        assert_eq!(s1[0].member_a.rgb, s1[0].member_b.rgb);

        let all = make_pairs_vos("v", 0, &rgb, &flow, &st, Seed(5), &counts("static=3,dynamic=3,identical=3"), &jr).unwrap();
        let m = manifest_of(all.into_iter().map(|p| p.record).collect(), Task::Vos);
        assert_eq!(validate_manifest(&m), vec![]);
    }

    #[test]
    fn invalid_jitter_ranges() {
        let (rgb, flow) = vos_inputs();
        let bad = JitterRanges { hue: [10.0, 400.0], sat: [0.5, 1.5] };
        assert!(make_pairs_vos("v", 0, &rgb, &flow, &[], Seed(0), &counts("static=1"), &bad).is_err());
        let bad = JitterRanges { hue: [0.0, 360.0], sat: [-1.0, 1.5] };
        assert!(bad.validate().is_err());
    }
}
