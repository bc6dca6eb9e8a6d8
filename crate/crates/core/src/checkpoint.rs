//! Versioned checkpoint: a UTF-8 header followed by raw little-endian `f64`
//! payload.
//!
//! ```text
//! HUTCKPT 1
//! seed <u64>
//! config <n>
//! <key>=<value>            (n lines)
//! tensors <m>
//! <name> <rows> <cols>     (m lines)
//! end
//! <payload>                (Σ rows·cols × 8 bytes, tensors in header order)
//! ```
//!
//! Every line ends with a single `\n`. Names contain no whitespace; config
//! values contain no newline. The payload is the row-major data of each
//! tensor back to back with no padding, and the file ends right after it.

use std::path::Path;

use crate::adapter::{Adapter, WeightAdapter};
use crate::block::{ToyBlock, WeightTarget};
use crate::error::{HutError, Result};
use crate::hut::HutAdapterState;
use crate::lora::LoraAdapterState;
use crate::tensor::DenseMatrix;

pub const MAGIC: &str = "HUTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    pub tensors: Vec<(String, DenseMatrix)>,
}

fn bad(msg: impl Into<String>) -> HutError {
    HutError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(seed: u64, config: Vec<(String, String)>) -> Self {
        Checkpoint {
            version: FORMAT_VERSION,
            seed,
            config,
            tensors: Vec::new(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&DenseMatrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = format!("{MAGIC} {}\nseed {}\nconfig {}\n", self.version, self.seed, self.config.len());
        for (k, v) in &self.config {
            if k.is_empty() || k.contains(['=', '\n']) || k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(bad(format!("config entry '{k}' cannot be encoded")));
            }
            header.push_str(&format!("{k}={v}\n"));
        }
        header.push_str(&format!("tensors {}\n", self.tensors.len()));
        for (name, t) in &self.tensors {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(bad(format!("tensor name '{name}' cannot be encoded")));
            }
            header.push_str(&format!("{name} {} {}\n", t.rows(), t.cols()));
        }
        header.push_str("end\n");

        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(header.len() + payload);
        out.extend_from_slice(header.as_bytes());
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
        };
        fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
            line.strip_prefix(key)
                .and_then(|s| s.strip_prefix(' '))
                .ok_or_else(|| bad(format!("expected '{key} ...', got '{line}'")))
        }
        fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.trim().parse().map_err(|_| bad(format!("bad number '{s}'")))
        }

        let version: u32 = num(field(next_line()?, MAGIC)?)?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let seed: u64 = num(field(next_line()?, "seed")?)?;
        let n_config: usize = num(field(next_line()?, "config")?)?;
        let mut config = Vec::with_capacity(n_config);
        for _ in 0..n_config {
            let line = next_line()?;
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad config line '{line}'")))?;
            config.push((k.to_string(), v.to_string()));
        }
        let n_tensors: usize = num(field(next_line()?, "tensors")?)?;
        let mut shapes = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let line = next_line()?;
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 3 {
                return Err(bad(format!("bad tensor line '{line}'")));
            }
            shapes.push((parts[0].to_string(), num::<usize>(parts[1])?, num::<usize>(parts[2])?));
        }
        if next_line()? != "end" {
            return Err(bad("missing 'end' marker"));
        }

        let mut tensors = Vec::with_capacity(n_tensors);
        for (name, rows, cols) in shapes {
            let n = rows.checked_mul(cols).ok_or_else(|| bad("tensor too large"))?;
            let len = n * 8;
            if bytes.len() < pos + len {
                return Err(bad(format!("payload truncated in '{name}'")));
            }
            let data = bytes[pos..pos + len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos += len;
            tensors.push((name, DenseMatrix::new(rows, cols, data)?));
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Checkpoint {
            version,
            seed,
            config,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| HutError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HutError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Adds every adapter of `block` as `<target>.<kind>.<tensor>`, including
    /// its frozen `W0`. LoRA scales go into the config as `<target>.lora.scale`.
    pub fn push_block_adapters(&mut self, block: &ToyBlock) {
        for t in WeightTarget::ALL {
            let Some(a) = block.adapter(t) else { continue };
            let kind = a.method().as_str();
            self.tensors.push((format!("{t}.{kind}.W0"), a.base_weight().clone()));
            for (n, p) in a.params() {
                self.tensors.push((format!("{t}.{kind}.{n}"), p.clone()));
            }
            if let Adapter::Lora(l) = a {
                self.config.push((format!("{t}.lora.scale"), format!("{:?}", l.scale())));
            }
        }
    }

    /// Rebuilds the adapters stored by [`push_block_adapters`](Self::push_block_adapters).
    pub fn adapters(&self) -> Result<Vec<(WeightTarget, Adapter)>> {
        let mut out = Vec::new();
        let get = |name: String| {
            self.tensor(&name)
                .cloned()
                .ok_or_else(|| bad(format!("missing tensor {name}")))
        };
        for t in WeightTarget::ALL {
            if self.tensor(&format!("{t}.hut.W0")).is_some() {
                let a = HutAdapterState::from_parts(
                    get(format!("{t}.hut.W0"))?,
                    get(format!("{t}.hut.MA"))?,
                    get(format!("{t}.hut.MB"))?,
                    get(format!("{t}.hut.gamma"))?,
                    get(format!("{t}.hut.beta"))?,
                )?;
                out.push((t, Adapter::Hut(a)));
            } else if self.tensor(&format!("{t}.lora.W0")).is_some() {
                let scale: f64 = self
                    .config_value(&format!("{t}.lora.scale"))
                    .ok_or_else(|| bad(format!("missing {t}.lora.scale")))?
                    .parse()
                    .map_err(|_| bad("bad LoRA scale"))?;
                let a = LoraAdapterState::from_parts(
                    get(format!("{t}.lora.W0"))?,
                    get(format!("{t}.lora.WA"))?,
                    get(format!("{t}.lora.WB"))?,
                    scale,
                )?;
                out.push((t, Adapter::Lora(a)));
            }
        }
        Ok(out)
    }
}
