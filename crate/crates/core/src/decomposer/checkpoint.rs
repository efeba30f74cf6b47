use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::context::PartModel;
use super::state::{DecompositionState, LatentPart, Snapshot};
use crate::error::{Error, Result};
use crate::geom::{RigidPose, SymmetryPlane};

const MAGIC: &[u8; 8] = b"PARTCKPT";
const VERSION: u32 = 1;

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
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn parts(&mut self, parts: &[LatentPart], merged: &[bool]) {
        self.u32(parts.len() as u32);
        for (p, &m) in parts.iter().zip(merged) {
            self.u32(p.code.len() as u32);
            p.code.iter().for_each(|&v| self.f64(v));
            p.pose.t.iter().for_each(|&v| self.f64(v));
            self.f64(p.pose.r);
            self.u8(u8::from(m));
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

type Parse<T> = std::result::Result<T, String>;

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Parse<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Parse<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Parse<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Parse<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Parse<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn bytes(&mut self) -> Parse<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn parts(&mut self) -> Parse<(Vec<LatentPart>, Vec<bool>)> {
        let k = self.u32()? as usize;
        let mut parts = Vec::with_capacity(k.min(1 << 16));
        let mut merged = Vec::with_capacity(k.min(1 << 16));
        for _ in 0..k {
            let latent = self.u32()? as usize;
            let code = (0..latent).map(|_| self.f64()).collect::<Parse<Vec<_>>>()?;
            let t = [self.f64()?, self.f64()?, self.f64()?];
            let r = self.f64()?;
            parts.push(LatentPart {
                code,
                pose: RigidPose::new(t, r),
            });
            merged.push(self.u8()? != 0);
        }
        Ok((parts, merged))
    }
}

/// Serializes variables, symmetry context, generator position, history and best snapshot.
pub fn checkpoint_bytes(state: &DecompositionState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.bytes(state.target_id.as_bytes());
    w.u64(state.seed);
    w.0.extend_from_slice(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    w.0.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    w.parts(&state.parts, &state.merged);
    match &state.symmetry {
        Some(p) => {
            w.u8(1);
            p.point().iter().chain(&p.normal()).for_each(|&v| w.f64(v));
        }
        None => w.u8(0),
    }
    w.u64(state.history.len() as u64);
    state.history.iter().for_each(|&v| w.f64(v));
    match &state.best {
        Some(b) => {
            w.u8(1);
            w.f64(b.loss);
            w.parts(&b.parts, &b.merged);
        }
        None => w.u8(0),
    }
    w.0
}

fn parse(buf: &[u8]) -> Parse<DecompositionState> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let target_id = String::from_utf8(r.bytes()?.to_vec()).map_err(|e| e.to_string())?;
    let seed = r.u64()?;
    let key: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let (parts, merged) = r.parts()?;
    let symmetry = match r.u8()? {
        0 => None,
        _ => {
            let v: Vec<f64> = (0..6).map(|_| r.f64()).collect::<Parse<_>>()?;
            Some(SymmetryPlane::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]).map_err(|e| e.to_string())?)
        }
    };
    let n = r.u64()? as usize;
    let history = (0..n).map(|_| r.f64()).collect::<Parse<Vec<_>>>()?;
    let best = match r.u8()? {
        0 => None,
        _ => {
            let loss = r.f64()?;
            let (parts, merged) = r.parts()?;
            Some(Snapshot { loss, parts, merged })
        }
    };
    if r.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - r.pos));
    }
    if parts.is_empty() {
        return Err("checkpoint has no parts".into());
    }
    Ok(DecompositionState {
        target_id,
        parts,
        merged,
        symmetry,
        history,
        seed,
        rng,
        decoded: Vec::new(),
        best,
    })
}

/// Restores a state and recomputes its posed clouds.
pub fn state_from_checkpoint(buf: &[u8], model: &mut PartModel) -> Result<DecompositionState> {
    let mut state = parse(buf).map_err(|d| Error::format("<checkpoint>", d))?;
    if state.parts.iter().any(|p| p.code.len() != model.arch().latent) {
        return Err(Error::format("<checkpoint>", "latent size does not match the model"));
    }
    state.refresh(model)?;
    Ok(state)
}

pub fn save_checkpoint(state: &DecompositionState, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, model: &mut PartModel) -> Result<DecompositionState> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut state = parse(&buf).map_err(|d| Error::format(path, d))?;
    if state.parts.iter().any(|p| p.code.len() != model.arch().latent) {
        return Err(Error::format(path, "latent size does not match the model"));
    }
    state.refresh(model)?;
    Ok(state)
}
