//! Checkpoint container: magic `GSFC`, a `u32` format version, a `u32` section
//! count, then sections of `u32` name length, name bytes, `u64` payload length
//! and payload. All integers and floats are little-endian.
//!
//! Tensor payloads are `u32` count, then per tensor a `u32` rank, `u64` dims
//! and the `f64` values.

use crate::diffcore::{AdamConfig, AdamState, ParamTensor};
use crate::env::{ReplayBuffer, Transition};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GSFC";
pub const VERSION: u32 = 1;

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Sections {
    entries: Vec<(String, Vec<u8>)>,
}

impl Sections {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, payload: Vec<u8>) {
        self.entries.push((name.to_string(), payload));
    }

    pub fn get(&self, name: &str) -> Result<&[u8]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| Error::Format(format!("checkpoint has no `{name}` section")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, payload) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()?;
        let mut entries = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("section name is not utf-8".into()))?;
            let plen = r.u64()? as usize;
            entries.push((name, r.take(plen)?.to_vec()));
        }
        r.finish()?;
        Ok(Self { entries })
    }
}

/// Little-endian cursor.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format("trailing bytes in checkpoint payload".into()));
        }
        Ok(())
    }
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_tensors(tensors: &[&ParamTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, tensors.len() as u32);
    for t in tensors {
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u64(&mut out, d as u64);
        }
        put_f64s(&mut out, &t.values);
    }
    out
}

/// Overwrites `tensors` in place; shapes must match exactly.
pub fn decode_tensors_into(payload: &[u8], tensors: Vec<&mut ParamTensor>) -> Result<()> {
    let mut r = Reader::new(payload);
    let n = r.u32()? as usize;
    if n != tensors.len() {
        return Err(Error::Format(format!("expected {} tensors, found {n}", tensors.len())));
    }
    for t in tensors {
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        if shape != t.shape() {
            return Err(Error::Format(format!("tensor shape {:?} does not match {:?}", shape, t.shape())));
        }
        t.values = r.f64s(t.len())?;
        t.zero_grad();
    }
    r.finish()
}

pub fn encode_adam(a: &AdamState) -> Vec<u8> {
    let mut out = Vec::new();
    put_f64s(&mut out, &[a.config.lr, a.config.beta1, a.config.beta2, a.config.eps]);
    put_u64(&mut out, a.step);
    put_u64(&mut out, a.m.len() as u64);
    put_f64s(&mut out, &a.m);
    put_f64s(&mut out, &a.v);
    out
}

pub fn decode_adam(payload: &[u8]) -> Result<AdamState> {
    let mut r = Reader::new(payload);
    let config = AdamConfig {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
    };
    let step = r.u64()?;
    let n = r.u64()? as usize;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    r.finish()?;
    Ok(AdamState { config, step, m, v })
}

pub fn encode_buffer(b: &ReplayBuffer) -> Vec<u8> {
    let mut out = Vec::new();
    put_u64(&mut out, b.capacity() as u64);
    put_u64(&mut out, b.cursor() as u64);
    put_u64(&mut out, b.len() as u64);
    let sd = b.iter().next().map_or(0, |t| t.state.len());
    put_u32(&mut out, sd as u32);
    for t in b.iter() {
        put_f64s(&mut out, &t.state);
        put_f64s(&mut out, &t.action);
        put_f64s(&mut out, &[t.reward]);
        put_f64s(&mut out, &t.next_state);
        out.push(t.done as u8);
    }
    out
}

pub fn decode_buffer(payload: &[u8]) -> Result<ReplayBuffer> {
    let mut r = Reader::new(payload);
    let capacity = r.u64()? as usize;
    let next = r.u64()? as usize;
    let len = r.u64()? as usize;
    let sd = r.u32()? as usize;
    let mut storage = Vec::with_capacity(len);
    for _ in 0..len {
        let state = r.f64s(sd)?;
        let a = r.f64s(2)?;
        let reward = r.f64()?;
        let next_state = r.f64s(sd)?;
        let done = match r.take(1)?[0] {
            0 => false,
            1 => true,
            _ => return Err(Error::Format("bad done flag".into())),
        };
        storage.push(Transition {
            state,
            action: [a[0], a[1]],
            reward,
            next_state,
            done,
        });
    }
    r.finish()?;
    ReplayBuffer::from_parts(capacity, storage, next)
}
