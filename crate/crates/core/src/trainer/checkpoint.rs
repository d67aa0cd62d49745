use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::{Parameter, RngState, Tensor};

const MAGIC: &str = "langshift-checkpoint";
const FORMAT_VERSION: u32 = 1;

/// Complete training state at a step boundary.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Optimizer steps taken since the moments were last reset.
    pub adam_t: u64,
    pub stage_index: usize,
    /// Steps completed inside `stage_index`.
    pub stage_step: u64,
    pub global_step: u64,
    /// Position of the stage's data stream.
    pub rng: RngState,
    pub tokenizer_hash: String,
    pub plan_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    adam_t: u64,
    stage_index: usize,
    stage_step: u64,
    global_step: u64,
    rng: RngState,
    tokenizer_hash: String,
    plan_fingerprint: String,
}

fn same_bits(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    /// Equality of every field, comparing floats by bit pattern.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.params.config == other.params.config
            && self.adam_t == other.adam_t
            && self.stage_index == other.stage_index
            && self.stage_step == other.stage_step
            && self.global_step == other.global_step
            && self.rng == other.rng
            && self.tokenizer_hash == other.tokenizer_hash
            && self.plan_fingerprint == other.plan_fingerprint
            && self.params.params.len() == other.params.params.len()
            && self.params.params.iter().zip(&other.params.params).all(|(a, b)| {
                same_bits(&a.value, &b.value)
                    && same_bits(&a.first_moment, &b.first_moment)
                    && same_bits(&a.second_moment, &b.second_moment)
            })
    }

    /// Serialized container: magic line, JSON header line, tensor blocks
    /// (`tensor <name> <dim>x<dim> <bytes>` line followed by little-endian
    /// f32 data), then `sha256 <hex>` over everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.params.config.clone(),
            adam_t: self.adam_t,
            stage_index: self.stage_index,
            stage_step: self.stage_step,
            global_step: self.global_step,
            rng: self.rng,
            tokenizer_hash: self.tokenizer_hash.clone(),
            plan_fingerprint: self.plan_fingerprint.clone(),
        };
        let mut out = Vec::new();
        writeln!(out, "{MAGIC} {FORMAT_VERSION}").unwrap();
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes")).unwrap();
        for (name, p) in self.params.names().iter().zip(&self.params.params) {
            for (suffix, t) in [("", &p.value), (".m", &p.first_moment), (".v", &p.second_moment)] {
                let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
                writeln!(out, "tensor {name}{suffix} {} {}", dims.join("x"), t.len() * 4).unwrap();
                for x in t.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                out.push(b'\n');
            }
        }
        let digest = hex(&Sha256::digest(&out));
        writeln!(out, "sha256 {digest}").unwrap();
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Integrity(format!("checkpoint {m}"));
        let trailer_start = find_trailer(bytes).ok_or_else(|| bad("has no checksum trailer".into()))?;
        let body = &bytes[..trailer_start];
        let trailer = std::str::from_utf8(&bytes[trailer_start..]).map_err(|_| bad("trailer is not text".into()))?;
        let expected = trailer.trim_end().strip_prefix("sha256 ").unwrap_or("");
        if expected != hex(&Sha256::digest(body)) {
            return Err(bad("checksum mismatch".into()));
        }
        let mut cur = Cursor { buf: body, pos: 0 };
        let magic = cur.line()?;
        if magic != format!("{MAGIC} {FORMAT_VERSION}") {
            return Err(bad(format!("has unknown magic line {magic:?}")));
        }
        let header: Header = serde_json::from_str(cur.line()?).map_err(|e| bad(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!("format version {}", header.format_version)));
        }
        header
            .config
            .validate()
            .map_err(|e| bad(format!("model config: {e}")))?;
        let shapes = header.config.parameter_shapes();
        let mut params = Vec::with_capacity(shapes.len());
        for (name, shape) in &shapes {
            let mut read = |suffix: &str| -> Result<Tensor> {
                let line = cur.line()?.to_string();
                let parts: Vec<&str> = line.split(' ').collect();
                let want = format!("{name}{suffix}");
                if parts.len() != 4 || parts[0] != "tensor" || parts[1] != want {
                    return Err(bad(format!("expected block {want}, found {line:?}")));
                }
                let dims: Vec<usize> = parts[2]
                    .split('x')
                    .map(|d| d.parse().map_err(|_| bad(format!("bad dims in {line:?}"))))
                    .collect::<Result<_>>()?;
                if &dims != shape {
                    return Err(bad(format!("block {want} has shape {dims:?}, config needs {shape:?}")));
                }
                let nbytes: usize = parts[3].parse().map_err(|_| bad(format!("bad length in {line:?}")))?;
                let n: usize = shape.iter().product();
                if nbytes != n * 4 {
                    return Err(bad(format!("block {want} length {nbytes} does not match shape")));
                }
                let raw = cur.take(nbytes)?;
                if cur.take(1)? != b"\n" {
                    return Err(bad(format!("block {want} is not terminated")));
                }
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                Tensor::new(shape.clone(), data)
            };
            let value = read("")?;
            let first_moment = read(".m")?;
            let second_moment = read(".v")?;
            params.push(Parameter {
                grad: Tensor::zeros(shape),
                value,
                first_moment,
                second_moment,
            });
        }
        if cur.pos != body.len() {
            return Err(bad("has trailing data".into()));
        }
        Ok(Self {
            params: ModelParams {
                config: header.config,
                params,
            },
            adam_t: header.adam_t,
            stage_index: header.stage_index,
            stage_step: header.stage_step,
            global_step: header.global_step,
            rng: header.rng,
            tokenizer_hash: header.tokenizer_hash,
            plan_fingerprint: header.plan_fingerprint,
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn find_trailer(bytes: &[u8]) -> Option<usize> {
    let end = bytes.len().checked_sub(1)?;
    if bytes[end] != b'\n' {
        return None;
    }
    let start = bytes[..end].iter().rposition(|&b| b == b'\n')? + 1;
    bytes[start..].starts_with(b"sha256 ").then_some(start)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.buf[self.pos..];
        let n = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Integrity("checkpoint is truncated".into()))?;
        self.pos += n + 1;
        std::str::from_utf8(&rest[..n]).map_err(|_| Error::Integrity("checkpoint header is not UTF-8".into()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Integrity("checkpoint is truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Writes atomically through a temporary file in the same directory.
pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, c.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Integrity(m) => Error::Integrity(format!("{}: {m}", path.display())),
        other => other,
    })
}
