use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::model::{VaeArch, VaeParams};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const MAGIC: &[u8; 8] = b"PARTVAE\0";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes weights: magic, version, architecture, frozen flag, then `(name, shape, f64 data)` per tensor.
pub fn write_weights<W: Write>(params: &VaeParams, mut w: W) -> std::io::Result<()> {
    let arch = params.arch();
    let mut out = Vec::with_capacity(params.parameter_count() * 8 + 1024);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, arch.points as u64);
    put_u64(&mut out, arch.latent as u64);
    for widths in [&arch.encoder, &arch.decoder] {
        put_u32(&mut out, widths.len() as u32);
        for &x in widths.iter() {
            put_u64(&mut out, x as u64);
        }
    }
    out.push(u8::from(params.is_frozen()));
    put_u32(&mut out, params.tensors().len() as u32);
    for (name, t) in params.names().iter().zip(params.tensors()) {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u64(&mut out, d as u64);
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<usize, String> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| format!("value {v} out of range"))
    }
}

fn parse(buf: &[u8]) -> std::result::Result<VaeParams, String> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err("not a weight file (bad magic)".into());
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let points = c.u64()?;
    let latent = c.u64()?;
    let mut widths = [Vec::new(), Vec::new()];
    for w in &mut widths {
        let n = c.u32()? as usize;
        for _ in 0..n {
            w.push(c.u64()?);
        }
    }
    let [encoder, decoder] = widths;
    let arch = VaeArch {
        points,
        latent,
        encoder,
        decoder,
    };
    let frozen = c.take(1)?[0] != 0;
    let count = c.u32()? as usize;
    let manifest = arch.manifest();
    if count != manifest.len() {
        return Err(format!("{count} tensors listed, architecture has {}", manifest.len()));
    }
    let mut tensors = Vec::with_capacity(count);
    for (want_name, want_shape) in &manifest {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|e| e.to_string())?;
        if name != want_name {
            return Err(format!("expected tensor {want_name}, found {name}"));
        }
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u64()).collect::<std::result::Result<Vec<_>, _>>()?;
        if &shape != want_shape {
            return Err(format!("tensor {name}: shape {shape:?}, expected {want_shape:?}"));
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(shape, data).map_err(|e| format!("tensor {name}: {e}"))?);
    }
    if c.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - c.pos));
    }
    VaeParams::from_parts(arch, tensors, frozen).map_err(|e| e.to_string())
}

pub fn read_weights<R: Read>(mut r: R) -> Result<VaeParams> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io("<reader>", e))?;
    parse(&buf).map_err(|d| Error::format("<reader>", d))
}

pub fn save_weights(params: &VaeParams, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_weights(params, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<VaeParams> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&buf).map_err(|d| Error::format(path, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> VaeArch {
        VaeArch {
            points: 8,
            latent: 4,
            encoder: vec![5, 6],
            decoder: vec![7],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = VaeParams::init(&tiny(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        p.freeze();
        let mut buf = Vec::new();
        write_weights(&p, &mut buf).unwrap();
        let q = read_weights(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.checksum(), q.checksum());
    }

    #[test]
    fn corrupt_files_rejected() {
        let p = VaeParams::init(&tiny(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut buf = Vec::new();
        write_weights(&p, &mut buf).unwrap();
        assert!(read_weights(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_weights(bad.as_slice()).is_err());
        buf.push(0);
        assert!(read_weights(buf.as_slice()).is_err());
    }
}
