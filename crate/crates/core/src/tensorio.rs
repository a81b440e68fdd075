//! File contract between the toolkit and an external model harness.
//!
//! # Tensor container (`.sdt`)
//!
//! ```text
//! offset  size        field
//! 0       4           magic "SDT1"
//! 4       1           dtype code: 0 = f32, 1 = f64
//! 5       1           ndim (>= 1)
//! 6       8 * ndim    extents, u64 little-endian, each >= 1
//! ...     prod * w    row-major payload, little-endian IEEE-754
//! ```
//!
//! # Dump layout
//!
//! ```text
//! <root>/index.json                 optional: layer order and channel counts
//! <root>/<layer_id>/<factor>.a.sdt  (P, C) responses of pair members a
//! <root>/<layer_id>/<factor>.b.sdt  (P, C) responses of pair members b
//! ```
//!
//! Row `p` belongs to the `p`-th pair of that factor in manifest order.

use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Factor;
use crate::rng::Seed;
use crate::sampling::flow::FlowJitterParams;

pub const MAGIC: &[u8; 4] = b"SDT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    shape: Vec<usize>,
    data: TensorData,
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.is_empty() || shape.len() > u8::MAX as usize {
            return Err(Error::InvalidTensor(format!("ndim must be in 1..=255, got {}", shape.len())));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidTensor(format!("zero extent in shape {shape:?}")));
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidTensor(format!("shape {shape:?} overflows")))?;
        if count != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {count} elements, payload has {}",
                data.len()
            )));
        }
        Ok(TensorFile { shape, data })
    }

    pub fn from_matrix(m: &Array2<f64>, dtype: DType) -> Self {
        let (r, c) = m.dim();
        let flat: Vec<f64> = m.iter().copied().collect();
        let data = match dtype {
            DType::F64 => TensorData::F64(flat),
            DType::F32 => TensorData::F32(flat.into_iter().map(|v| v as f32).collect()),
        };
        TensorFile::new(vec![r, c], data).expect("matrix shape is valid")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_matrix(self) -> Result<Array2<f64>> {
        if self.shape.len() != 2 {
            return Err(Error::InvalidTensor(format!("expected a 2-d tensor, got shape {:?}", self.shape)));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        Ok(Array2::from_shape_vec((r, c), self.data.to_f64()).expect("validated shape"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let width = self.dtype().width();
        let mut out = Vec::with_capacity(6 + 8 * self.shape.len() + self.data.len() * width);
        out.extend_from_slice(MAGIC);
        out.push(self.dtype().code());
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = TensorHeader::parse(bytes)?;
        let payload = &bytes[header.header_len..];
        let expected = header.payload_len();
        if (payload.len() as u64) < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: payload.len() as u64,
            });
        }
        if payload.len() as u64 > expected {
            return Err(Error::InvalidTensor(format!(
                "{} trailing bytes after payload",
                payload.len() as u64 - expected
            )));
        }
        let data = match header.dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        TensorFile::new(header.shape, data)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorHeader {
    pub dtype: DType,
    pub shape: Vec<usize>,
    header_len: usize,
}

impl TensorHeader {
    fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        if bytes.len() < 6 {
            return Err(Error::TruncatedHeader);
        }
        let dtype = DType::from_code(bytes[4])?;
        let ndim = bytes[5] as usize;
        if ndim == 0 {
            return Err(Error::InvalidTensor("ndim is 0".into()));
        }
        let header_len = 6 + 8 * ndim;
        if bytes.len() < header_len {
            return Err(Error::TruncatedHeader);
        }
        let shape = bytes[6..header_len]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .map(|d| usize::try_from(d).map_err(|_| Error::InvalidTensor(format!("extent {d} too large"))))
            .collect::<Result<Vec<_>>>()?;
        if shape.contains(&0) {
            return Err(Error::InvalidTensor(format!("zero extent in shape {shape:?}")));
        }
        Ok(TensorHeader {
            dtype,
            shape,
            header_len,
        })
    }

    pub fn payload_len(&self) -> u64 {
        self.shape
            .iter()
            .fold(self.dtype.width() as u64, |acc, &d| acc.saturating_mul(d as u64))
    }
}

/// Write `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_tensor(path: &Path, tensor: &TensorFile) -> Result<()> {
    write_atomic(path, &tensor.to_bytes())
}

pub fn read_tensor(path: &Path) -> Result<TensorFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorFile::from_bytes(&bytes)
}

/// Read only the header of a tensor file.
pub fn read_tensor_header(path: &Path) -> Result<TensorHeader> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = vec![0u8; 6];
    let n = read_up_to(&mut f, &mut head).map_err(|e| Error::io(path, e))?;
    head.truncate(n);
    if n == 6 && &head[..4] == MAGIC {
        let ndim = head[5] as usize;
        let mut rest = vec![0u8; 8 * ndim];
        let m = read_up_to(&mut f, &mut rest).map_err(|e| Error::io(path, e))?;
        head.extend_from_slice(&rest[..m]);
    }
    TensorHeader::parse(&head)
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

/// Serialize to pretty JSON with a trailing newline. Field order follows the
/// struct definitions, so equal values always give equal bytes.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ActionRecognition,
    Vos,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShuffleMode {
    /// Both members of an action static pair get their own permutation.
    #[default]
    Both,
    /// Member a keeps the original order.
    One,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    pub shuffle_mode: ShuffleMode,
    pub hue_range: [f64; 2],
    pub sat_range: [f64; 2],
    pub styles: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberSpec {
    pub video_id: String,
    pub style_id: Option<String>,
    pub perm_seed: Option<Seed>,
    pub flow_jitter: Option<FlowJitterParams>,
    /// Frame index used by VOS members.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<u32>,
    /// Realized frame order for shuffled action members, derived from `perm_seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_order: Option<Vec<u32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub factor: Factor,
    pub member_a: MemberSpec,
    pub member_b: MemberSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub dataset_id: String,
    pub task: Task,
    pub global_seed: Seed,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingOptions>,
    pub pairs: Vec<PairRecord>,
}

impl PairManifest {
    pub fn pairs_of(&self, factor: Factor) -> impl Iterator<Item = &PairRecord> {
        self.pairs.iter().filter(move |p| p.factor == factor)
    }

    pub fn count(&self, factor: Factor) -> usize {
        self.pairs_of(factor).count()
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        to_json_bytes(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub pair_id: String,
    pub rule: String,
}

/// Check every pair-construction rule; an empty list means the manifest is sound.
pub fn validate_manifest(manifest: &PairManifest) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for p in &manifest.pairs {
        let mut flag = |rule: &str| {
            out.push(Violation {
                pair_id: p.pair_id.clone(),
                rule: rule.to_string(),
            })
        };
        if !seen.insert(p.pair_id.as_str()) {
            flag("pair_id must be unique");
        }
        let (a, b) = (&p.member_a, &p.member_b);
        for m in [a, b] {
            if m.perm_seed.is_some() && m.flow_jitter.is_some() {
                flag("member may set perm_seed or flow_jitter, not both");
            }
            match manifest.task {
                Task::ActionRecognition if m.flow_jitter.is_some() => {
                    flag("action recognition members must not carry flow_jitter")
                }
                Task::Vos if m.perm_seed.is_some() => flag("vos members must not carry perm_seed"),
                _ => {}
            }
        }
        if p.factor == Factor::Identical {
            if a != b {
                flag("identical pair members must be equal in every field");
            }
            continue;
        }
        if a.video_id != b.video_id {
            flag("pair members must share video_id");
        }
        match (manifest.task, p.factor) {
            (Task::ActionRecognition, Factor::Static) => {
                if a.style_id != b.style_id {
                    flag("static pair must share style");
                }
                if a.perm_seed == b.perm_seed {
                    flag("static pair must differ in permutation seed");
                }
            }
            (Task::ActionRecognition, Factor::Dynamic) => {
                if a.style_id == b.style_id {
                    flag("dynamic pair must differ in style");
                }
                if a.perm_seed != b.perm_seed || a.frame_order != b.frame_order {
                    flag("dynamic pair must share frame order");
                }
            }
            (Task::Vos, Factor::Static) => {
                if a.frame != b.frame {
                    flag("static pair must share rgb frame");
                }
                if a.style_id != b.style_id {
                    flag("static pair must share style");
                }
                if a.flow_jitter == b.flow_jitter {
                    flag("static pair must differ in flow jitter");
                }
            }
            (Task::Vos, Factor::Dynamic) => {
                if a.frame != b.frame || a.flow_jitter != b.flow_jitter {
                    flag("dynamic pair must share flow frame");
                }
                if a.style_id == b.style_id {
                    flag("dynamic pair must differ in style");
                }
            }
            (_, Factor::Identical) => unreachable!(),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Activation dumps

/// Paired pooled responses of one layer under one factor.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationSet {
    pub layer_id: String,
    pub factor: Factor,
    /// P × C, row p = member a of pair p.
    pub z1: Array2<f64>,
    /// P × C, row p = member b of pair p.
    pub z2: Array2<f64>,
}

impl ActivationSet {
    /// Validates dimensions and finiteness. Matrices are stored in standard layout.
    pub fn new(layer_id: &str, factor: Factor, z1: Array2<f64>, z2: Array2<f64>) -> Result<Self> {
        if z1.dim() != z2.dim() {
            return Err(Error::InvalidTensor(format!(
                "layer {layer_id}, factor {factor}: member shapes differ ({:?} vs {:?})",
                z1.dim(),
                z2.dim()
            )));
        }
        for z in [&z1, &z2] {
            if let Some(((row, channel), _)) = z.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite {
                    layer: layer_id.to_string(),
                    factor,
                    row,
                    channel,
                });
            }
        }
        let standard = |z: Array2<f64>| if z.is_standard_layout() { z } else { z.as_standard_layout().into_owned() };
        Ok(ActivationSet {
            layer_id: layer_id.to_string(),
            factor,
            z1: standard(z1),
            z2: standard(z2),
        })
    }

    pub fn n_pairs(&self) -> usize {
        self.z1.nrows()
    }

    pub fn n_units(&self) -> usize {
        self.z1.ncols()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexLayer {
    pub id: String,
    pub channels: usize,
}

/// Optional `index.json` at the dump root.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpIndex {
    pub layers: Vec<IndexLayer>,
    /// Layers the harness found nondeterministic.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nondeterministic: Vec<String>,
}

pub fn member_path(root: &Path, layer_id: &str, factor: Factor, member: char) -> PathBuf {
    root.join(layer_id).join(format!("{factor}.{member}.sdt"))
}

pub fn read_index(root: &Path) -> Result<Option<DumpIndex>> {
    let path = root.join("index.json");
    if !path.exists() {
        return Ok(None);
    }
    read_json(&path).map(Some)
}

/// Layer ids in declared order: from `index.json` when present, else the
/// sorted names of subdirectories.
pub fn list_layers(root: &Path) -> Result<Vec<String>> {
    if let Some(index) = read_index(root)? {
        return Ok(index.layers.into_iter().map(|l| l.id).collect());
    }
    let mut layers = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            layers.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    layers.sort();
    Ok(layers)
}

pub fn write_activation_set(root: &Path, set: &ActivationSet, dtype: DType) -> Result<()> {
    let dir = root.join(&set.layer_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_tensor(&member_path(root, &set.layer_id, set.factor, 'a'), &TensorFile::from_matrix(&set.z1, dtype))?;
    write_tensor(&member_path(root, &set.layer_id, set.factor, 'b'), &TensorFile::from_matrix(&set.z2, dtype))
}

/// Load the paired responses of `layer_id` under `factor`.
///
/// Row counts are checked against the manifest, and channel counts against
/// the other factor files present for the layer and against `index.json`.
pub fn load_activation_set(
    dump_root: &Path,
    layer_id: &str,
    factor: Factor,
    manifest: &PairManifest,
) -> Result<ActivationSet> {
    let expected_rows = manifest.count(factor);
    let mut mats = Vec::with_capacity(2);
    for member in ['a', 'b'] {
        let path = member_path(dump_root, layer_id, factor, member);
        if !path.exists() {
            return Err(Error::MissingFactor {
                layer: layer_id.to_string(),
                factor,
                path,
            });
        }
        let m = read_tensor(&path)?.into_matrix()?;
        if m.nrows() != expected_rows {
            return Err(Error::RowCountMismatch {
                layer: layer_id.to_string(),
                factor,
                file: format!("{factor}.{member}.sdt"),
                expected: expected_rows,
                found: m.nrows(),
            });
        }
        mats.push(m);
    }
    let z2 = mats.pop().unwrap();
    let z1 = mats.pop().unwrap();
    let channels = z1.ncols();

    for other in Factor::ALL.into_iter().filter(|&f| f != factor) {
        for member in ['a', 'b'] {
            let path = member_path(dump_root, layer_id, other, member);
            if !path.exists() {
                continue;
            }
            let header = read_tensor_header(&path)?;
            if header.shape.len() != 2 || header.shape[1] != channels {
                return Err(Error::ChannelMismatch {
                    layer: layer_id.to_string(),
                    detail: format!("{factor} has {channels} channels but {other}.{member}.sdt has shape {:?}", header.shape),
                });
            }
        }
    }
    if let Some(index) = read_index(dump_root)? {
        if let Some(l) = index.layers.iter().find(|l| l.id == layer_id) {
            if l.channels != channels {
                return Err(Error::ChannelMismatch {
                    layer: layer_id.to_string(),
                    detail: format!("index.json declares {} channels, {factor} files have {channels}", l.channels),
                });
            }
        }
    }
    ActivationSet::new(layer_id, factor, z1, z2)
}
