//! Little-endian binary checkpoints.
//!
//! ```text
//! "BCSN"            magic
//! u32               format version (1)
//! u32               block size
//! u32 k, k × f64    channel rates
//! u32               feature maps
//! u32               kernel size
//! u32               phases
//! u32               layers per phase (5)
//! f64 ...           every tensor in layout order, lengths implied by the config
//! u8                1 if pseudo-inverses follow, else 0
//! f64 ...           per channel, the B²×m pseudo-inverse row-major
//! u8                1 if training progress follows, else 0
//! u8 stage, u64 step, u64 Adam t, then the Adam m and v buffers in layout order
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::train::{AdamState, Stage};
use super::{NetConfig, NetParams, LAYERS_PER_PHASE};

const MAGIC: &[u8; 4] = b"BCSN";
const VERSION: u32 = 1;

/// Where a training run stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    pub stage: Stage,
    pub step: u64,
    pub adam: AdamState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams,
    pub progress: Option<Progress>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Format(format!("bad {what} flag {v}"))),
        }
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let p = &ck.params;
    let cfg = p.config();
    let mut w = Writer(Vec::with_capacity(8 * p.num_params() + 64));
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    w.u32(cfg.block_size);
    w.u32(cfg.rates.len());
    w.f64s(&cfg.rates);
    w.u32(cfg.features);
    w.u32(cfg.kernel);
    w.u32(cfg.phases);
    w.u32(LAYERS_PER_PHASE);
    for t in p.tensors() {
        w.f64s(t);
    }
    match p.pinv() {
        Some(pinvs) => {
            w.u8(1);
            for m in pinvs {
                w.f64s(m.as_slice());
            }
        }
        None => w.u8(0),
    }
    match &ck.progress {
        Some(pr) => {
            w.u8(1);
            w.u8(pr.stage.number());
            w.u64(pr.step);
            w.u64(pr.adam.t);
            for t in pr.adam.m.iter().chain(&pr.adam.v) {
                w.f64s(t);
            }
        }
        None => w.u8(0),
    }
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let block_size = r.u32()?;
    let k = r.u32()?;
    if k > 1024 {
        return Err(Error::Format(format!("implausible channel count {k}")));
    }
    let rates = r.f64s(k)?;
    let features = r.u32()?;
    let kernel = r.u32()?;
    let phases = r.u32()?;
    let layers = r.u32()?;
    if layers != LAYERS_PER_PHASE {
        return Err(Error::Format(format!("checkpoint has {layers} layers per phase")));
    }
    let config = NetConfig { block_size, rates, features, kernel, phases };
    config.validate().map_err(|e| Error::Format(format!("bad config: {e}")))?;
    let layout = config.layout();
    let tensors = layout.iter().map(|i| r.f64s(i.len())).collect::<Result<Vec<_>>>()?;
    let mut params = NetParams::from_tensors(config.clone(), tensors)?;
    if r.flag("pseudo-inverse")? {
        let n = config.block_len();
        let pinvs = config
            .counts()
            .iter()
            .map(|&m| Matrix::from_vec(n, m, r.f64s(n * m)?))
            .collect::<Result<Vec<_>>>()?;
        params.set_pinv(pinvs)?;
    }
    let progress = if r.flag("progress")? {
        let stage = Stage::from_number(r.u8()?).map_err(|e| Error::Format(e.to_string()))?;
        let step = r.u64()?;
        let t = r.u64()?;
        let m = layout.iter().map(|i| r.f64s(i.len())).collect::<Result<Vec<_>>>()?;
        let v = layout.iter().map(|i| r.f64s(i.len())).collect::<Result<Vec<_>>>()?;
        Some(Progress { stage, step, adam: AdamState { t, m, v } })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { params, progress })
}

pub fn save(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(ck)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::toy_images;
    use crate::neural::train::{train, TrainConfig};

    #[test]
    fn round_trip_with_and_without_extras() {
        let p = NetParams::new(NetConfig::desk(), 3).unwrap();
        let bare = Checkpoint { params: p.clone(), progress: None };
        let bytes = encode(&bare);
        assert_eq!(&bytes[..4], b"BCSN");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 8 * 3 + 4 * 4 + 8 * p.num_params() + 2);
        assert_eq!(decode(&bytes).unwrap(), bare);

        let images = toy_images(2, 32, 1);
        let out = train(&p, &images, Stage::One, TrainConfig { steps: 2, ..Default::default() }).unwrap();
        let full = Checkpoint {
            params: out.params.clone(),
            progress: Some(Progress {
                stage: Stage::One,
                step: out.trainer.step(),
                adam: out.trainer.adam().clone(),
            }),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        save(&full, &path).unwrap();
        assert_eq!(load(&path).unwrap(), full);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let p = NetParams::new(NetConfig::desk(), 3).unwrap();
        let bytes = encode(&Checkpoint { params: p, progress: None });
        assert!(matches!(decode(&bytes[..bytes.len() - 9]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Format(_))));
        assert!(matches!(load("/nonexistent/net.bin"), Err(Error::Io { .. })));
    }
}
