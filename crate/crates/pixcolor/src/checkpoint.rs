//! Binary checkpoint format.
//!
//! ```text
//! "PXCL"  u32 version  u64 step
//! u32 len, config echo (UTF-8)
//! u32 record count, then per record:
//!     u32 len, name (UTF-8)  u32 rank  u32 dims[rank]  f32 values[prod(dims)]
//! u32 CRC32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Records hold the parameters
//! followed by the Adam moments as `adam.m/<name>` and `adam.v/<name>`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use pixcolor_core::{AdamState, ParamStore, Tensor};

use crate::error::{file_err, Error, Result};

pub const MAGIC: &[u8; 4] = b"PXCL";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: String,
    pub records: Vec<TensorRecord>,
}

fn moment_name(which: &str, name: &str) -> String {
    format!("adam.{which}/{name}")
}

impl Checkpoint {
    pub fn capture(config: String, store: &ParamStore<f32>, adam: &AdamState<f32>) -> Self {
        let mut records = Vec::with_capacity(3 * store.len());
        let record = |name: String, t: &Tensor<f32>| TensorRecord { name, shape: t.shape().to_vec(), data: t.data().to_vec() };
        for (_, p) in store.iter() {
            records.push(record(p.name.clone(), &p.value));
        }
        for ((_, p), m) in store.iter().zip(&adam.m) {
            records.push(record(moment_name("m", &p.name), m));
        }
        for ((_, p), v) in store.iter().zip(&adam.v) {
            records.push(record(moment_name("v", &p.name), v));
        }
        Self { step: adam.step, config, records }
    }

    /// Copies weights and optimizer state into `store` and `adam`. The
    /// record names must match the store's parameter set exactly.
    pub fn restore(&self, store: &mut ParamStore<f32>, adam: &mut AdamState<f32>) -> Result<()> {
        let by_name: HashMap<&str, &TensorRecord> = self.records.iter().map(|r| (r.name.as_str(), r)).collect();
        let mut expected = BTreeSet::new();
        for (_, p) in store.iter() {
            expected.insert(p.name.clone());
            expected.insert(moment_name("m", &p.name));
            expected.insert(moment_name("v", &p.name));
        }
        let present: BTreeSet<String> = by_name.keys().map(|s| s.to_string()).collect();
        if present != expected {
            let missing: Vec<_> = expected.difference(&present).take(3).cloned().collect();
            let extra: Vec<_> = present.difference(&expected).take(3).cloned().collect();
            return Err(Error::Invalid(format!(
                "checkpoint parameter names do not match the model (missing {missing:?}, unexpected {extra:?})"
            )));
        }
        let tensor = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
            let r = by_name[name];
            if r.shape != shape {
                return Err(Error::Invalid(format!("checkpoint tensor `{name}` has shape {:?}, model expects {shape:?}", r.shape)));
            }
            Ok(Tensor::new(r.shape.clone(), r.data.clone())?)
        };
        let names: Vec<(String, Vec<usize>)> = store.iter().map(|(_, p)| (p.name.clone(), p.value.shape().to_vec())).collect();
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for (name, shape) in &names {
            store.set_value(name, tensor(name, shape)?)?;
            m.push(tensor(&moment_name("m", name), shape)?);
            v.push(tensor(&moment_name("v", name), shape)?);
        }
        adam.m = m;
        adam.v = v;
        adam.step = self.step;
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        u32le(&mut out, self.config.len());
        out.extend_from_slice(self.config.as_bytes());
        u32le(&mut out, self.records.len());
        for r in &self.records {
            u32le(&mut out, r.name.len());
            out.extend_from_slice(r.name.as_bytes());
            u32le(&mut out, r.shape.len());
            for &d in &r.shape {
                u32le(&mut out, d);
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(format!("unsupported format version {version} (expected {VERSION})"));
        }
        if bytes.len() < 12 {
            return Err("truncated".into());
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err("checksum mismatch".into());
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let config = r.string()?;
        let count = r.u32()? as usize;
        let mut records = Vec::new();
        let mut seen = BTreeSet::new();
        for _ in 0..count {
            let name = r.string()?;
            if !seen.insert(name.clone()) {
                return Err(format!("duplicate record `{name}`"));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("shape overflow")?;
            let raw = r.take(n.checked_mul(4).ok_or("shape overflow")?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            records.push(TensorRecord { name, shape, data });
        }
        if r.pos != body.len() {
            return Err("trailing bytes after last record".into());
        }
        Ok(Self { step, config, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(file_err(dir))?;
        }
        std::fs::write(path, self.encode()).map_err(file_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing { what: "checkpoint", path: path.to_path_buf() });
        }
        let bytes = std::fs::read(path).map_err(file_err(path))?;
        Self::decode(&bytes).map_err(|detail| Error::Checkpoint { path: path.to_path_buf(), detail })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated")?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8 in checkpoint".into())
    }
}
