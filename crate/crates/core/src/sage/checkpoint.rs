//! Binary checkpoint container, little-endian throughout:
//!
//! ```text
//! magic "FSAGECKP" | u32 version | u64 fingerprint
//! u64 len + config JSON | u64 epoch
//! u32 count, then per parameter: u32 len + name, u32 rows, u32 cols, f64 values
//! f64 lr, beta1, beta2, eps | u64 step | u8 has_moments [+ first, second per parameter]
//! u32 count, then per epoch: u64 epoch, f64 loss, train acc, test acc, precision, recall, f1
//! ```

use std::fs;
use std::path::Path;

use super::{EpochRecord, ModelConfig, SageParams};
use crate::autodiff::{AdamState, Parameter, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FSAGECKP";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: SageParams,
    pub optimizer: AdamState,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
    fn bytes32(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!("file ends while reading {what}")));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.fail("size overflow"))?, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl Checkpoint {
    pub fn fingerprint(&self) -> u64 {
        self.config.fingerprint()
    }

    /// Fails unless `cfg` describes the same architecture.
    pub fn check_compatible(&self, cfg: &ModelConfig) -> Result<()> {
        let (expected, found) = (cfg.fingerprint(), self.fingerprint());
        if expected != found {
            return Err(Error::Fingerprint { expected, found });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u64(self.fingerprint());
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        w.u64(config.len() as u64);
        w.0.extend_from_slice(&config);
        w.u64(self.epoch as u64);

        let params = self.params.parameters();
        w.u32(params.len() as u32);
        for p in params {
            w.bytes32(p.name.as_bytes());
            w.u32(p.value.rows() as u32);
            w.u32(p.value.cols() as u32);
            w.f64s(p.value.data());
        }

        let opt = &self.optimizer;
        w.f64(opt.lr);
        w.f64(opt.beta1);
        w.f64(opt.beta2);
        w.f64(opt.eps);
        w.u64(opt.step);
        let (first, second) = opt.moments();
        w.u8(u8::from(!first.is_empty()));
        if !first.is_empty() {
            for (m, v) in first.iter().zip(second) {
                w.f64s(m);
                w.f64s(v);
            }
        }

        w.u32(self.history.len() as u32);
        for r in &self.history {
            w.u64(r.epoch as u64);
            w.f64s(&[r.train_loss, r.train_accuracy, r.test_accuracy, r.precision, r.recall, r.f1]);
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::Checkpoint {
                offset: 0,
                message: "not a checkpoint file".into(),
            });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint {
                offset: r.pos - 4,
                message: format!("unsupported version {version}"),
            });
        }
        let fingerprint = r.u64("fingerprint")?;
        let config_len = r.u64("config length")? as usize;
        let config_start = r.pos;
        let config: ModelConfig = serde_json::from_slice(r.take(config_len, "config")?).map_err(|e| Error::Checkpoint {
            offset: config_start,
            message: format!("bad config: {e}"),
        })?;
        if config.fingerprint() != fingerprint {
            return Err(Error::Fingerprint {
                expected: fingerprint,
                found: config.fingerprint(),
            });
        }
        let epoch = r.u64("epoch")? as usize;

        let count = r.u32("parameter count")? as usize;
        let mut params = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let name = String::from_utf8(r.take(len, "name")?.to_vec()).map_err(|_| r.fail("name is not UTF-8"))?;
            let rows = r.u32("rows")? as usize;
            let cols = r.u32("cols")? as usize;
            let data = r.f64s(rows * cols, &format!("values of `{name}`"))?;
            params.push(Parameter::new(name, Tensor::new(rows, cols, data)?));
        }
        let offset = r.pos;
        let params = SageParams::from_parameters(&config, params).map_err(|e| Error::Checkpoint {
            offset,
            message: e.to_string(),
        })?;

        let mut optimizer = AdamState::new(r.f64("lr")?);
        optimizer.beta1 = r.f64("beta1")?;
        optimizer.beta2 = r.f64("beta2")?;
        optimizer.eps = r.f64("eps")?;
        optimizer.step = r.u64("step")?;
        match r.u8("moment flag")? {
            0 => {}
            1 => {
                let mut first = Vec::new();
                let mut second = Vec::new();
                for p in params.parameters() {
                    first.push(r.f64s(p.value.len(), "first moments")?);
                    second.push(r.f64s(p.value.len(), "second moments")?);
                }
                optimizer.set_moments(first, second);
            }
            other => return Err(r.fail(format!("bad moment flag {other}"))),
        }

        let n = r.u32("history length")? as usize;
        let mut history = Vec::with_capacity(n.min(100_000));
        for _ in 0..n {
            let epoch = r.u64("history epoch")? as usize;
            let v = r.f64s(6, "history row")?;
            history.push(EpochRecord {
                epoch,
                train_loss: v[0],
                train_accuracy: v[1],
                test_accuracy: v[2],
                precision: v[3],
                recall: v[4],
                f1: v[5],
            });
        }
        if r.pos != buf.len() {
            return Err(r.fail("trailing bytes"));
        }
        Ok(Checkpoint {
            config,
            params,
            optimizer,
            epoch,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Reads a checkpoint and checks it against `cfg`.
    pub fn load(path: &Path, cfg: &ModelConfig) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let ck = Checkpoint::from_bytes(&bytes)?;
        ck.check_compatible(cfg)?;
        Ok(ck)
    }
}
