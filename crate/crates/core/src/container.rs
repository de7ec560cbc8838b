//! Binary framing shared by model and state files:
//!
//! ```text
//! magic [4] | version u32 | config_len u32 | config (JSON) | count u32 |
//! count × ( name_len u32 | name | rank u32 | dims u64 × rank | values f64 × numel )
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub const FORMAT_VERSION: u32 = 1;

/// A decoded container: the raw JSON config record and named tensors in file
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub config: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn u32_len(kind: &'static str, n: usize) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Format { kind, msg: format!("length {n} does not fit in 32 bits") })
}

pub fn write_container<W: Write, T: Scalar>(
    mut w: W,
    kind: &'static str,
    magic: &[u8; 4],
    config: &str,
    tensors: &[(String, &Tensor<T>)],
) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&u32_len(kind, config.len())?)?;
    w.write_all(config.as_bytes())?;
    w.write_all(&u32_len(kind, tensors.len())?)?;
    for (name, t) in tensors {
        w.write_all(&u32_len(kind, name.len())?)?;
        w.write_all(name.as_bytes())?;
        w.write_all(&u32_len(kind, t.rank())?)?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
    kind: &'static str,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format { kind: self.kind, msg: "truncated file".into() },
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.bytes(n)?).map_err(|_| Error::Format { kind: self.kind, msg: "invalid UTF-8".into() })
    }
}

pub fn read_container<R: Read>(r: R, kind: &'static str, magic: &[u8; 4]) -> Result<Container> {
    let mut r = Reader { inner: r, kind };
    let found = r.bytes(4)?;
    if found != magic {
        return Err(Error::Format { kind, msg: format!("bad magic {found:?}") });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format { kind, msg: format!("unsupported version {version}") });
    }
    let config = r.string()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n < (1 << 40))
            .ok_or_else(|| Error::Format { kind, msg: format!("tensor {name} has implausible shape {shape:?}") })?;
        let raw = r.bytes(numel * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok(Container { config, tensors })
}
