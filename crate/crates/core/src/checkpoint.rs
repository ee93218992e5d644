//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "ABSACKPT"
//! version      u32      1
//! kind         u8       0 = aspect model, 1 = document model
//! vocab        u32
//! emb_dim      u32
//! hidden       u32
//! classes      u32
//! vocab hash   32 bytes SHA-256 of the vocabulary
//! class order  classes × (u8 length, UTF-8 name)
//! blocks       u32 count, then per block:
//!              u16 name length, name, u8 rank, rank × u32 dims,
//!              numel × f32 values (row-major)
//! ```

use std::path::Path;

use crate::corpus::{Label, Vocab};
use crate::error::{Error, Result};
use crate::layers::{AttentionParams, LstmParams, OutputParams};
use crate::model::{AspectParams, DocParams, ModelDims};
use crate::tensor::{Param, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"ABSACKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Aspect,
    Document,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub vocab_digest: [u8; 32],
    pub class_order: Vec<String>,
    pub blocks: Vec<(String, Tensor<f32>)>,
}

fn class_order() -> Vec<String> {
    Label::ALL.iter().map(|l| l.as_str().to_owned()).collect()
}

fn blocks<T: Real>(named: Vec<crate::model::NamedParam<T>>) -> Vec<(String, Tensor<f32>)> {
    named.into_iter().map(|n| (n.name, n.param.read().cast())).collect()
}

impl Checkpoint {
    pub fn from_aspect<T: Real>(params: &AspectParams<T>, vocab: &Vocab) -> Result<Self> {
        Ok(Checkpoint {
            kind: ModelKind::Aspect,
            dims: params.dims()?,
            vocab_digest: vocab.digest(),
            class_order: class_order(),
            blocks: blocks(params.named()),
        })
    }

    pub fn from_doc<T: Real>(params: &DocParams<T>, vocab: &Vocab) -> Result<Self> {
        Ok(Checkpoint {
            kind: ModelKind::Document,
            dims: params.dims()?,
            vocab_digest: vocab.digest(),
            class_order: class_order(),
            blocks: blocks(params.named()),
        })
    }

    pub fn vocab_hex(&self) -> String {
        self.vocab_digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Refuses to pair this checkpoint with a different vocabulary.
    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        if self.vocab_digest != vocab.digest() {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hex(),
                found: vocab.digest_hex(),
            });
        }
        Ok(())
    }

    fn take(&self, name: &str) -> Result<Param<f32>> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| Param::new(t.clone()))
            .ok_or_else(|| Error::Checkpoint(format!("missing block `{name}`")))
    }

    fn lstm(&self) -> Result<LstmParams<f32>> {
        Ok(LstmParams {
            w: self.take("lstm.w")?,
            u: self.take("lstm.u")?,
            b: self.take("lstm.b")?,
        })
    }

    fn out(&self) -> Result<OutputParams<f32>> {
        Ok(OutputParams {
            w: self.take("out.w")?,
            b: self.take("out.b")?,
        })
    }

    fn check_order(&self) -> Result<()> {
        if self.class_order != class_order() {
            return Err(Error::Checkpoint(format!("class order {:?}", self.class_order)));
        }
        Ok(())
    }

    pub fn into_aspect(self) -> Result<AspectParams<f32>> {
        if self.kind != ModelKind::Aspect {
            return Err(Error::Checkpoint("expected an aspect-model checkpoint".into()));
        }
        self.check_order()?;
        let p = AspectParams {
            embedding: self.take("embedding")?,
            lstm: self.lstm()?,
            attn: AttentionParams { w_a: self.take("attn.w_a")? },
            out: self.out()?,
        };
        if p.dims()? != self.dims {
            return Err(Error::Checkpoint("header dimensions disagree with blocks".into()));
        }
        Ok(p)
    }

    pub fn into_doc(self) -> Result<DocParams<f32>> {
        if self.kind != ModelKind::Document {
            return Err(Error::Checkpoint("expected a document-model checkpoint".into()));
        }
        self.check_order()?;
        let p = DocParams {
            embedding: self.take("embedding")?,
            lstm: self.lstm()?,
            out: self.out()?,
        };
        if p.dims()? != self.dims {
            return Err(Error::Checkpoint("header dimensions disagree with blocks".into()));
        }
        Ok(p)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.push(match self.kind {
            ModelKind::Aspect => 0,
            ModelKind::Document => 1,
        });
        for d in [self.dims.vocab, self.dims.emb_dim, self.dims.hidden, self.dims.classes] {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        b.extend_from_slice(&self.vocab_digest);
        for c in &self.class_order {
            b.push(c.len() as u8);
            b.extend_from_slice(c.as_bytes());
        }
        b.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, t) in &self.blocks {
            b.extend_from_slice(&(name.len() as u16).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.push(t.shape().len() as u8);
            for &d in t.shape() {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = match r.u8()? {
            0 => ModelKind::Aspect,
            1 => ModelKind::Document,
            k => return Err(Error::Checkpoint(format!("unknown model kind {k}"))),
        };
        let dims = ModelDims {
            vocab: r.u32()? as usize,
            emb_dim: r.u32()? as usize,
            hidden: r.u32()? as usize,
            classes: r.u32()? as usize,
        };
        let vocab_digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let mut class_order = Vec::with_capacity(dims.classes);
        for _ in 0..dims.classes {
            let n = r.u8()? as usize;
            class_order.push(r.string(n)?);
        }
        let count = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = r.string(n)?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("block `{name}`: {e}")))?;
            blocks.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            kind,
            dims,
            vocab_digest,
            class_order,
            blocks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint("truncated".into()));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 name".into()))
    }
}
