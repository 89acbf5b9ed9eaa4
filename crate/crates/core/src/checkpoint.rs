//! Binary container for named parameter blobs plus a configuration echo.
//!
//! Layout (little endian):
//! `magic[8] | kind_len u32 | kind | echo_len u64 | echo | n u32 |
//!  n × (name_len u32 | name | trainable u8 | rows u64 | cols u64 | f64…) |
//!  sha256[32]` where the digest covers every preceding byte.

use std::io::{Read, Write};
use std::path::Path;

use hipal_autograd::{ParamStore, Tensor};
use sha2::{Digest, Sha256};

use crate::config::KvConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HIPALCK1";

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub echo: KvConfig,
    pub blobs: Vec<Blob>,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Container {
    pub fn new(kind: impl Into<String>, echo: KvConfig) -> Self {
        Self {
            kind: kind.into(),
            echo,
            blobs: Vec::new(),
        }
    }

    /// Captures every entry of `store` whose name starts with `prefix`.
    pub fn from_store(kind: impl Into<String>, echo: KvConfig, store: &ParamStore, prefix: &str) -> Self {
        let mut c = Self::new(kind, echo);
        for (_, p) in store.iter() {
            if p.name.starts_with(prefix) {
                c.blobs.push(Blob {
                    name: p.name.clone(),
                    trainable: p.trainable,
                    value: p.value.clone(),
                });
            }
        }
        c
    }

    pub fn blob(&self, name: &str) -> Option<&Blob> {
        self.blobs.iter().find(|b| b.name == name)
    }

    /// Overwrites the matching entries of `store`. Every store entry under
    /// `prefix` must be present with the same shape.
    pub fn load_into(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        let ids: Vec<_> = store
            .iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            let name = store.param(id).name.clone();
            let blob = self
                .blob(&name)
                .ok_or_else(|| ck(format!("missing parameter {name}")))?;
            let slot = store.value_mut(id);
            if slot.dim() != blob.value.dim() {
                return Err(ck(format!(
                    "shape mismatch for {name}: expected {:?}, found {:?}",
                    slot.dim(),
                    blob.value.dim()
                )));
            }
            slot.assign(&blob.value);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.kind.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.kind.as_bytes());
        let echo = self.echo.to_text();
        buf.extend_from_slice(&(echo.len() as u64).to_le_bytes());
        buf.extend_from_slice(echo.as_bytes());
        buf.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for b in &self.blobs {
            buf.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(b.name.as_bytes());
            buf.push(u8::from(b.trainable));
            let (r, c) = b.value.dim();
            buf.extend_from_slice(&(r as u64).to_le_bytes());
            buf.extend_from_slice(&(c as u64).to_le_bytes());
            for v in b.value.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
            return Err(ck("not a checkpoint container"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ck("checksum mismatch"));
        }
        let mut cur = Cursor { buf: body, pos: 8 };
        let kind = cur.string_u32()?;
        let echo_len = cur.u64()? as usize;
        let echo = std::str::from_utf8(cur.take(echo_len)?).map_err(|_| ck("echo is not UTF-8"))?;
        let echo = KvConfig::parse(echo)?;
        let n = cur.u32()? as usize;
        let mut blobs = Vec::with_capacity(n);
        for _ in 0..n {
            let name = cur.string_u32()?;
            let trainable = cur.take(1)?[0] != 0;
            let rows = cur.u64()? as usize;
            let cols = cur.u64()? as usize;
            let count = rows.checked_mul(cols).ok_or_else(|| ck("blob too large"))?;
            let raw = cur.take(count.checked_mul(8).ok_or_else(|| ck("blob too large"))?)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let value = Tensor::from_shape_vec((rows, cols), data).map_err(|e| ck(e.to_string()))?;
            blobs.push(Blob { name, trainable, value });
        }
        if cur.pos != body.len() {
            return Err(ck("trailing bytes"));
        }
        Ok(Self { kind, echo, blobs })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(ck(format!("expected a {kind} container, found {}", self.kind)));
        }
        Ok(())
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ck("truncated container"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string_u32(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ck("name is not UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> (ParamStore, Container) {
        let mut s = ParamStore::new();
        s.add("enc.w", array![[1.0, -2.5], [3.0, 0.125]]);
        s.add_buffer("enc.mean", array![[0.5]]);
        s.add("head.w", array![[9.0]]);
        let mut echo = KvConfig::new();
        echo.set("arch", "restcn");
        let c = Container::from_store("encoder", echo, &s, "enc.");
        (s, c)
    }

    #[test]
    fn byte_round_trip() {
        let (_, c) = sample();
        assert_eq!(c.blobs.len(), 2);
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn corruption_detected() {
        let (_, c) = sample();
        let mut bytes = c.to_bytes();
        bytes[20] ^= 1;
        assert!(Container::from_bytes(&bytes).is_err());
        assert!(Container::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn load_checks_shapes() {
        let (mut s, c) = sample();
        s.value_mut(s.find("enc.w").unwrap()).fill(0.0);
        c.load_into(&mut s, "enc.").unwrap();
        assert_eq!(s.value(s.find("enc.w").unwrap())[[1, 0]], 3.0);
        let mut other = ParamStore::new();
        other.add("enc.w", array![[1.0]]);
        assert!(c.load_into(&mut other, "enc.").is_err());
    }
}
