//! On-disk formats: FDST1 tensors, datasets and checkpoints.
//!
//! FDST1 layout, all little-endian: magic `FDST1`, `u16` version (1),
//! `u32` rank, `rank x u64` dims, one dtype byte (0 real, 1 complex pair),
//! then the row-major payload of `f64`s.
//!
//! A checkpoint is magic `FDSTCKPT`, `u16` version, a `u64`-length-prefixed
//! JSON header, a `u32` block count and that many named blocks, each a
//! `u16`-length-prefixed UTF-8 name followed by an FDST1 tensor.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::burgers::{BurgersConfig, Dataset, FieldSeries, Split};
use crate::error::{Error, Result};
use crate::fno::{FnoConfig, FnoParams};
use crate::likelihood::CovParams;
use crate::spectral::{ComplexTensor, RealTensor};
use crate::train::{AdamState, CovConfig, TrainConfig, TrainState};

pub const FDST1_MAGIC: &[u8; 5] = b"FDST1";
pub const FDST1_VERSION: u16 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FDSTCKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

/// A decoded FDST1 tensor of either dtype.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    Real(RealTensor),
    Complex(ComplexTensor),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::Real(t) => t.shape(),
            AnyTensor::Complex(t) => t.shape(),
        }
    }
}

fn put_header(out: &mut Vec<u8>, shape: &[usize], tag: u8) {
    out.extend_from_slice(FDST1_MAGIC);
    out.extend_from_slice(&FDST1_VERSION.to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(tag);
}

pub fn encode_real(out: &mut Vec<u8>, t: &RealTensor) {
    put_header(out, t.shape(), 0);
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_complex(out: &mut Vec<u8>, t: &ComplexTensor) {
    put_header(out, t.shape(), 1);
    for v in t.data() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
}

pub fn encode(out: &mut Vec<u8>, t: &AnyTensor) {
    match t {
        AnyTensor::Real(r) => encode_real(out, r),
        AnyTensor::Complex(c) => encode_complex(out, c),
    }
}

/// Byte cursor that reports truncation against a path.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<AnyTensor> {
        let path = self.path;
        if self.take(5)? != FDST1_MAGIC {
            return Err(Error::format(path, "bad FDST1 magic"));
        }
        let version = self.u16()?;
        if version != FDST1_VERSION {
            return Err(Error::format(path, format!("unsupported FDST1 version {version}")));
        }
        let rank = self.u32()? as usize;
        if rank > 16 {
            return Err(Error::format(path, format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(self.u64()?).map_err(|_| Error::format(path, "dimension overflows"))?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(path, "element count overflows"))?;
        let tag = self.take(1)?[0];
        let width = match tag {
            0 => 1,
            1 => 2,
            t => return Err(Error::format(path, format!("unknown dtype tag {t}"))),
        };
        if (self.bytes.len() - self.pos) / 8 / width < count {
            return Err(Error::format(path, "payload shorter than dims require"));
        }
        let bad = |e: Error| Error::format(path, e.to_string());
        if tag == 0 {
            let data = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            Ok(AnyTensor::Real(RealTensor::new(shape, data).map_err(bad)?))
        } else {
            let data = (0..count)
                .map(|_| Ok(Complex64::new(self.f64()?, self.f64()?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(AnyTensor::Complex(ComplexTensor::new(shape, data).map_err(bad)?))
        }
    }

    fn done(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::format(self.path, format!("{} trailing bytes", self.bytes.len() - self.pos)))
        }
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<AnyTensor> {
    let mut r = Reader { bytes, pos: 0, path };
    let t = r.tensor()?;
    r.done()?;
    Ok(t)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Writes via a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_tensor(path: &Path, t: &AnyTensor) -> Result<()> {
    let mut out = Vec::new();
    encode(&mut out, t);
    write_atomic(path, &out)
}

pub fn write_real(path: &Path, t: &RealTensor) -> Result<()> {
    let mut out = Vec::new();
    encode_real(&mut out, t);
    write_atomic(path, &out)
}

pub fn read_tensor(path: &Path) -> Result<AnyTensor> {
    decode(&read_bytes(path)?, path)
}

pub fn read_real(path: &Path) -> Result<RealTensor> {
    match read_tensor(path)? {
        AnyTensor::Real(t) => Ok(t),
        AnyTensor::Complex(_) => Err(Error::format(path, "expected a real tensor")),
    }
}

// ---------------------------------------------------------------------------
// Datasets

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_instances: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub n: usize,
    pub delta: f64,
    pub gamma: Vec<f64>,
    pub seed: u64,
    pub split: Split,
    pub config: BurgersConfig,
}

pub const DATASET_META: &str = "dataset.json";

pub fn instance_file(i: usize) -> String {
    format!("instance_{i:04}.fdst")
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, s) in ds.series.iter().enumerate() {
        write_real(&dir.join(instance_file(i)), &s.values)?;
    }
    let meta = DatasetMeta {
        n_instances: ds.series.len(),
        t: ds.config.t_model,
        n: ds.config.n,
        delta: ds.config.delta,
        gamma: ds.series.iter().map(|s| s.gamma).collect(),
        seed: ds.seed,
        split: ds.split,
        config: ds.config.clone(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n";
    write_atomic(&dir.join(DATASET_META), json.as_bytes())
}

pub fn load_dataset_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join(DATASET_META);
    let bytes = read_bytes(&path)?;
    let meta: DatasetMeta = serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
    if meta.gamma.len() != meta.n_instances || meta.split.train + meta.split.test != meta.n_instances {
        return Err(Error::format(&path, "instance count, gamma list and split disagree"));
    }
    Ok(meta)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta = load_dataset_meta(dir)?;
    let mut series = Vec::with_capacity(meta.n_instances);
    for i in 0..meta.n_instances {
        let path = dir.join(instance_file(i));
        let values = read_real(&path)?;
        if values.shape() != [meta.t, meta.n] {
            return Err(Error::format(
                &path,
                format!("shape {:?}, metadata says [{}, {}]", values.shape(), meta.t, meta.n),
            ));
        }
        series.push(FieldSeries {
            values,
            gamma: meta.gamma[i],
            delta: meta.delta,
            n: meta.n,
        });
    }
    Ok(Dataset {
        config: meta.config,
        seed: meta.seed,
        split: meta.split,
        series,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub fno: FnoConfig,
    pub cov: CovConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
    pub adam_theta_step: u64,
    pub adam_alpha_step: u64,
}

/// Trained parameters plus the state needed to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    /// Selected (best) parameters, used for forecasting.
    pub theta: FnoParams,
    pub alpha: CovParams,
    pub state: TrainState,
}

fn vec_tensor(v: &[f64]) -> AnyTensor {
    AnyTensor::Real(RealTensor::new(vec![v.len()], v.to_vec()).expect("finite parameters"))
}

fn push_params(blocks: &mut Vec<(String, AnyTensor)>, prefix: &str, theta: &FnoParams, cfg: &FnoConfig, alpha: &CovParams) {
    let mut add = |name: String, t: AnyTensor| blocks.push((format!("{prefix}.{name}"), t));
    add("lift_w".into(), vec_tensor(&theta.lift_w));
    add("lift_b".into(), vec_tensor(&theta.lift_b));
    let (dv, m1, m2) = (cfg.dv, cfg.modes_space, cfg.modes_time);
    for (l, layer) in theta.layers.iter().enumerate() {
        add(format!("layer{l}.local_w"), vec_tensor(&layer.local_w));
        add(format!("layer{l}.local_b"), vec_tensor(&layer.local_b));
        let spec = ComplexTensor::new(vec![dv, dv, 2 * m1, m2], layer.spectral.clone()).expect("finite weights");
        add(format!("layer{l}.spectral"), AnyTensor::Complex(spec));
    }
    add("proj_w".into(), vec_tensor(&theta.proj_w));
    add("proj_b".into(), vec_tensor(&[theta.proj_b]));
    add("cov.w1".into(), vec_tensor(&alpha.w1));
    add("cov.b1".into(), vec_tensor(&alpha.b1));
    add("cov.w2".into(), vec_tensor(&alpha.w2));
    add("cov.b2".into(), vec_tensor(&alpha.b2));
    add("cov.alpha_r".into(), vec_tensor(&[alpha.alpha_r]));
}

fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let cfg = &ck.header.fno;
    let mut blocks = Vec::new();
    push_params(&mut blocks, "best", &ck.theta, cfg, &ck.alpha);
    push_params(&mut blocks, "last", &ck.state.theta, cfg, &ck.state.alpha);
    for (name, st) in [("adam_theta", &ck.state.adam_theta), ("adam_alpha", &ck.state.adam_alpha)] {
        blocks.push((format!("{name}.m"), vec_tensor(&st.m)));
        blocks.push((format!("{name}.v"), vec_tensor(&st.v)));
    }
    // Infinity marks a warmup-only selection; JSON cannot hold it.
    if let Some((score, ..)) = &ck.state.best {
        blocks.push(("best_score".into(), vec_tensor(&[f64::MAX.min(*score)])));
    }

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let header = serde_json::to_vec(&ck.header).expect("header serializes");
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, t) in &blocks {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode(&mut out, t);
    }
    out
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck))
}

struct Blocks<'a> {
    items: Vec<(String, AnyTensor)>,
    path: &'a Path,
}

impl Blocks<'_> {
    fn get(&self, name: &str) -> Result<&AnyTensor> {
        self.items
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::format(self.path, format!("missing block {name}")))
    }

    fn real(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        match self.get(name)? {
            AnyTensor::Real(t) if t.len() == len => Ok(t.data().to_vec()),
            t => Err(Error::format(
                self.path,
                format!("block {name} has shape {:?}, expected {len} reals", t.shape()),
            )),
        }
    }

    fn params(&self, prefix: &str, cfg: &FnoConfig, cov: &CovConfig) -> Result<(FnoParams, CovParams)> {
        let mut theta = FnoParams::zeros(cfg);
        let r = |name: &str, len: usize| self.real(&format!("{prefix}.{name}"), len);
        theta.lift_w = r("lift_w", theta.lift_w.len())?;
        theta.lift_b = r("lift_b", cfg.dv)?;
        for (l, layer) in theta.layers.iter_mut().enumerate() {
            layer.local_w = r(&format!("layer{l}.local_w"), cfg.dv * cfg.dv)?;
            layer.local_b = r(&format!("layer{l}.local_b"), cfg.dv)?;
            let name = format!("{prefix}.layer{l}.spectral");
            layer.spectral = match self.get(&name)? {
                AnyTensor::Complex(t) if t.len() == cfg.spectral_len() => t.data().to_vec(),
                _ => return Err(Error::format(self.path, format!("block {name} has the wrong type or size"))),
            };
        }
        theta.proj_w = r("proj_w", cfg.dv)?;
        theta.proj_b = r("proj_b", 1)?[0];
        let (n, h) = (cfg.n, cov.hidden);
        let alpha = CovParams {
            n,
            hidden: h,
            w1: r("cov.w1", h * n)?,
            b1: r("cov.b1", h)?,
            w2: r("cov.w2", n * h)?,
            b2: r("cov.b2", n)?,
            alpha_r: r("cov.alpha_r", 1)?[0],
        };
        Ok((theta, alpha))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_bytes(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::format(path, "corrupt magic: not a checkpoint"));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"),
        ));
    }
    let len = usize::try_from(r.u64()?).map_err(|_| Error::format(path, "header length overflows"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::format(path, format!("header: {e}")))?;
    header.fno.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let count = r.u32()?;
    let mut items = Vec::new();
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| Error::format(path, "block name is not UTF-8"))?;
        items.push((name, r.tensor()?));
    }
    r.done()?;
    let blocks = Blocks { items, path };
    let (theta, alpha) = blocks.params("best", &header.fno, &header.cov)?;
    let (last_theta, last_alpha) = blocks.params("last", &header.fno, &header.cov)?;
    let nt = last_theta.to_flat().len();
    let na = last_alpha.num_scalars();
    let adam = |name: &str, len: usize, step: u64| -> Result<AdamState> {
        Ok(AdamState {
            m: blocks.real(&format!("{name}.m"), len)?,
            v: blocks.real(&format!("{name}.v"), len)?,
            step,
        })
    };
    let best = match blocks.get("best_score") {
        Ok(_) => {
            let s = blocks.real("best_score", 1)?[0];
            let s = if s == f64::MAX { f64::INFINITY } else { s };
            Some((s, theta.clone(), alpha.clone()))
        }
        Err(_) => None,
    };
    let state = TrainState {
        theta: last_theta,
        alpha: last_alpha,
        adam_theta: adam("adam_theta", nt, header.adam_theta_step)?,
        adam_alpha: adam("adam_alpha", na, header.adam_alpha_step)?,
        epoch: header.epoch,
        step: header.step,
        best,
    };
    Ok(Checkpoint {
        header,
        theta,
        alpha,
        state,
    })
}

/// Loads a checkpoint and checks it was trained with `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &FnoConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.header.fno != *expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint model {:?} differs from configured {:?}",
            ck.header.fno, expected
        )));
    }
    Ok(ck)
}

impl Checkpoint {
    pub fn new(fno: FnoConfig, cov: CovConfig, train: TrainConfig, theta: FnoParams, alpha: CovParams, state: TrainState) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                fno,
                cov,
                train,
                seed: train.seed,
                epoch: state.epoch,
                step: state.step,
                adam_theta_step: state.adam_theta.step,
                adam_alpha_step: state.adam_alpha.step,
            },
            theta,
            alpha,
            state,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_checkpoint(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_bytes_layout() {
        let t = RealTensor::new(vec![2], vec![1.0, -2.5]).unwrap();
        let mut out = Vec::new();
        encode_real(&mut out, &t);
        assert_eq!(&out[..5], b"FDST1");
        assert_eq!(&out[5..7], &[1, 0]);
        assert_eq!(&out[7..11], &[1, 0, 0, 0]);
        assert_eq!(&out[11..19], &2u64.to_le_bytes());
        assert_eq!(out[19], 0);
        assert_eq!(&out[20..28], &1.0f64.to_le_bytes());
        assert_eq!(out.len(), 36);
        assert_eq!(decode(&out, Path::new("x")).unwrap(), AnyTensor::Real(t));
    }

    #[test]
    fn corrupt_tensors_are_rejected() {
        let t = RealTensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut good = Vec::new();
        encode_real(&mut good, &t);
        let p = Path::new("x");
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad, p).is_err());
        let mut bad = good.clone();
        bad[5] = 2;
        assert!(decode(&bad, p).unwrap_err().to_string().contains("version"));
        assert!(decode(&good[..good.len() - 1], p).is_err());
        let mut bad = good.clone();
        bad.push(0);
        assert!(decode(&bad, p).is_err());
        let mut bad = good;
        bad[19] = 7;
        assert!(decode(&bad, p).is_err());
    }
}
