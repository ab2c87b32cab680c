//! Binary checkpoint format.
//!
//! ```text
//! "SPMX"                      magic
//! u32                         format version
//! u32 n, then n × (str, str)  metadata key/value pairs
//! u32 m, then m × tensor      name: str, ndim: u32, dims: ndim × u64,
//!                             data: prod(dims) × f64
//! ```
//!
//! Strings are a `u32` byte length followed by UTF-8; all integers and floats
//! are little-endian. Floats are stored bit-exactly.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use crate::encoder::{Arch, EncoderConfig};
use crate::error::{Error, Result};
use crate::model::{Model, Pooling};
use crate::params::Parameters;

pub const MAGIC: &[u8; 4] = b"SPMX";
pub const FORMAT_VERSION: u32 = 1;

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Hash of the vocabulary the model was trained with.
    pub vocab_hash: String,
    pub step: u64,
    pub rng: RngState,
    pub optimizer: Option<AdamState>,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_str(buf, name);
    put_u32(buf, shape.len() as u32);
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    fn metadata(&self) -> BTreeMap<&'static str, String> {
        let c = self.model.config();
        let mut m = BTreeMap::new();
        m.insert("arch", c.arch.name().to_string());
        m.insert("vocab_size", c.vocab_size.to_string());
        m.insert("d", c.d.to_string());
        m.insert("layers", c.layers.to_string());
        m.insert("heads", c.heads.to_string());
        m.insert("ffn_width", c.ffn_width.to_string());
        m.insert("max_len", c.max_len.to_string());
        m.insert("pooling", self.model.pooling.name().to_string());
        m.insert("vocab_hash", self.vocab_hash.clone());
        m.insert("step", self.step.to_string());
        m.insert("rng_seed", hex::encode(self.rng.seed));
        m.insert("rng_stream", self.rng.stream.to_string());
        m.insert("rng_word_pos", self.rng.word_pos.to_string());
        if let Some(opt) = &self.optimizer {
            m.insert("adam_step", opt.step.to_string());
        }
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, FORMAT_VERSION);
        let meta = self.metadata();
        put_u32(&mut buf, meta.len() as u32);
        for (k, v) in &meta {
            put_str(&mut buf, k);
            put_str(&mut buf, v);
        }
        let params = self.model.params();
        let extra = if self.optimizer.is_some() { 2 } else { 0 };
        put_u32(&mut buf, (params.len() + extra) as u32);
        for p in &params {
            put_tensor(&mut buf, &p.name, &p.shape, p.data);
        }
        if let Some(opt) = &self.optimizer {
            put_tensor(&mut buf, "adam.m", &[opt.m.len()], &opt.m);
            put_tensor(&mut buf, "adam.v", &[opt.v.len()], &opt.v);
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:?}, expected \"SPMX\"")));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(r.error_at(4, format!("unsupported format version {version}")));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let meta_pos = r.pos;
        let get = |k: &str| -> Result<&String> {
            meta.get(k).ok_or_else(|| Error::Checkpoint {
                offset: meta_pos,
                message: format!("missing metadata key `{k}`"),
            })
        };
        let num = |k: &str| -> Result<u128> {
            get(k)?.parse().map_err(|_| Error::Checkpoint {
                offset: meta_pos,
                message: format!("metadata `{k}` is not an integer"),
            })
        };
        let config = EncoderConfig {
            vocab_size: num("vocab_size")? as usize,
            d: num("d")? as usize,
            layers: num("layers")? as usize,
            heads: num("heads")? as usize,
            ffn_width: num("ffn_width")? as usize,
            max_len: num("max_len")? as usize,
            arch: Arch::parse(get("arch")?)?,
        };
        let pooling = Pooling::parse(get("pooling")?)?;
        let mut seed = [0u8; 32];
        hex::decode_to_slice(get("rng_seed")?, &mut seed).map_err(|e| Error::Checkpoint {
            offset: meta_pos,
            message: format!("bad rng seed: {e}"),
        })?;
        let rng = RngState {
            seed,
            stream: num("rng_stream")? as u64,
            word_pos: num("rng_word_pos")?,
        };

        let mut tensors: BTreeMap<String, (usize, Vec<usize>, Vec<f64>)> = BTreeMap::new();
        for _ in 0..r.u32()? {
            let at = r.pos;
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(8).ok_or_else(|| r.error_at(at, "tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name, (at, shape, data));
        }
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let mut model = Model {
            encoder: crate::encoder::EncoderParams::zeros(&config)?,
            head: crate::head::HeadParams::zeros(config.d),
            pooling,
        };
        let expected: Vec<(String, Vec<usize>)> =
            model.params().into_iter().map(|p| (p.name, p.shape)).collect();
        for (dst, (name, shape)) in model.params_mut().into_iter().zip(expected) {
            let (at, got_shape, data) = tensors.remove(&name).ok_or_else(|| Error::Checkpoint {
                offset: bytes.len(),
                message: format!("missing tensor `{name}`"),
            })?;
            if got_shape != shape {
                return Err(Error::Checkpoint {
                    offset: at,
                    message: format!("tensor `{name}` has shape {got_shape:?}, expected {shape:?}"),
                });
            }
            dst.data.copy_from_slice(&data);
        }
        let optimizer = match (tensors.remove("adam.m"), tensors.remove("adam.v")) {
            (Some((_, _, m)), Some((_, _, v))) => Some(AdamState { m, v, step: num("adam_step")? as u64 }),
            (None, None) => None,
            _ => {
                return Err(Error::Checkpoint {
                    offset: bytes.len(),
                    message: "optimizer state is incomplete".into(),
                })
            }
        };
        if let Some((name, (at, ..))) = tensors.into_iter().next() {
            return Err(Error::Checkpoint { offset: at, message: format!("unexpected tensor `{name}`") });
        }
        Ok(Checkpoint {
            model,
            vocab_hash: get("vocab_hash")?.clone(),
            step: num("step")? as u64,
            rng,
            optimizer,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, message: String) -> Error {
        Error::Checkpoint { offset, message }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(
                self.pos,
                format!("unexpected end of file: need {n} bytes, {} remain", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let at = self.pos;
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.error_at(at, "invalid UTF-8 string".into()))
    }
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&ckpt.to_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
