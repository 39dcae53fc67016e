//! Binary artifact formats: "DAJM" motion clips, "DAJZ" latent
//! trajectories, and "DAJC" parameter checkpoints. All integers and reals
//! are little-endian 32-bit unless noted; truncation errors name the byte
//! offset where reading failed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::act::LatentTrajectory;
use crate::numerics::nn::ParamStore;
use crate::numerics::{AdamState, Array};
use crate::sim::{Frame, MotionClip, Segment, CLIP_CHANNELS};

pub const MOTION_MAGIC: &[u8; 4] = b"DAJM";
pub const LATENT_MAGIC: &[u8; 4] = b"DAJZ";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DAJC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("truncated file at offset {offset}: expected {expected} more bytes, found {found}")]
    Truncated { offset: u64, expected: usize, found: usize },
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("non-finite value in payload: {0}")]
    NonFinite(String),
}

/// Byte-counting reader so truncation errors can name the offset.
struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn new(inner: R) -> Self {
        Cursor { inner, offset: 0 }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<(), IoError> {
        let mut filled = 0;
        while filled < buf.len() {
            let n = self.inner.read(&mut buf[filled..])?;
            if n == 0 {
                return Err(IoError::Truncated {
                    offset: self.offset,
                    expected: buf.len(),
                    found: filled,
                });
            }
            filled += n;
            self.offset += n as u64;
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32, IoError> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        let mut bytes = vec![0u8; n * 4];
        self.read_exact(&mut bytes)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), IoError> {
        let mut found = [0u8; 4];
        self.read_exact(&mut found)?;
        if &found != expected {
            return Err(IoError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(&found).into_owned(),
            });
        }
        Ok(())
    }

    fn version(&mut self) -> Result<(), IoError> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(IoError::BadVersion(v));
        }
        Ok(())
    }
}

fn put_u32(out: &mut impl Write, v: u32) -> Result<(), IoError> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32(out: &mut impl Write, v: f64) -> Result<(), IoError> {
    out.write_all(&(v as f32).to_le_bytes())?;
    Ok(())
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &str) -> Result<(), IoError> {
    for v in values {
        if !v.is_finite() {
            return Err(IoError::NonFinite(what.into()));
        }
    }
    Ok(())
}

/// DAJM: magic, version, frame_count, channel_count, fps (f32), frames
/// row-major f32, segment count, then (start, end, instruction_id) per
/// segment.
pub fn write_motion(path: &Path, clip: &MotionClip, fps: f64) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MOTION_MAGIC)?;
    put_u32(&mut out, FORMAT_VERSION)?;
    put_u32(&mut out, clip.frames.len() as u32)?;
    put_u32(&mut out, CLIP_CHANNELS as u32)?;
    put_f32(&mut out, fps)?;
    for frame in &clip.frames {
        let ch = frame.to_channels();
        check_finite(ch.iter().copied(), "motion frame")?;
        for v in ch {
            put_f32(&mut out, v)?;
        }
    }
    put_u32(&mut out, clip.segments.len() as u32)?;
    for seg in &clip.segments {
        put_u32(&mut out, seg.start as u32)?;
        put_u32(&mut out, seg.end as u32)?;
        put_u32(&mut out, seg.instruction_id)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_motion(path: &Path) -> Result<(MotionClip, f64), IoError> {
    let mut c = Cursor::new(BufReader::new(File::open(path)?));
    c.magic(MOTION_MAGIC)?;
    c.version()?;
    let frames = c.u32()? as usize;
    let channels = c.u32()? as usize;
    if channels != CLIP_CHANNELS {
        return Err(IoError::Schema(format!(
            "motion file has {channels} channels, this build expects {CLIP_CHANNELS}"
        )));
    }
    let fps = c.f32()? as f64;
    let mut out = MotionClip { frames: Vec::with_capacity(frames), segments: Vec::new() };
    for _ in 0..frames {
        let ch = c.f32_vec(CLIP_CHANNELS)?;
        out.frames.push(Frame::from_channels(&ch));
    }
    let n_seg = c.u32()? as usize;
    for _ in 0..n_seg {
        let start = c.u32()? as usize;
        let end = c.u32()? as usize;
        let instruction_id = c.u32()?;
        out.segments.push(Segment { start, end, instruction_id });
    }
    Ok((out, fps))
}

/// DAJZ: magic, version, d_z, frame_count, latent data f32 frame-major,
/// then one instruction id per frame.
pub fn write_latent(path: &Path, traj: &LatentTrajectory) -> Result<(), IoError> {
    check_finite(traj.latents.iter().copied(), "latent trajectory")?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(LATENT_MAGIC)?;
    put_u32(&mut out, FORMAT_VERSION)?;
    put_u32(&mut out, traj.dz as u32)?;
    put_u32(&mut out, traj.frames() as u32)?;
    for &v in &traj.latents {
        put_f32(&mut out, v)?;
    }
    for &id in &traj.instruction_ids {
        put_u32(&mut out, id)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_latent(path: &Path) -> Result<LatentTrajectory, IoError> {
    let mut c = Cursor::new(BufReader::new(File::open(path)?));
    c.magic(LATENT_MAGIC)?;
    c.version()?;
    let dz = c.u32()? as usize;
    let frames = c.u32()? as usize;
    let latents = c.f32_vec(frames * dz)?;
    let mut instruction_ids = Vec::with_capacity(frames);
    for _ in 0..frames {
        instruction_ids.push(c.u32()?);
    }
    Ok(LatentTrajectory { clip_index: 0, dz, latents, instruction_ids })
}

/// DAJC: magic, version, training step (u32), config_hash (32 raw bytes),
/// blob count, then per blob: name (len-prefixed UTF-8), rank, dims, f32
/// values; then optimizer moments (m then v per blob, f32) and the Adam
/// step count.
pub fn write_checkpoint(
    path: &Path,
    params: &ParamStore,
    opt: &AdamState,
    step: u64,
    config_hash: &[u8; 32],
) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    put_u32(&mut out, FORMAT_VERSION)?;
    put_u32(&mut out, step as u32)?;
    out.write_all(config_hash)?;
    let names = params.names();
    let arrays = params.arrays();
    put_u32(&mut out, names.len() as u32)?;
    for (name, arr) in names.iter().zip(arrays) {
        check_finite(arr.data.iter().copied(), name)?;
        put_u32(&mut out, name.len() as u32)?;
        out.write_all(name.as_bytes())?;
        put_u32(&mut out, arr.shape.len() as u32)?;
        for &d in &arr.shape {
            put_u32(&mut out, d as u32)?;
        }
        for &v in &arr.data {
            put_f32(&mut out, v)?;
        }
    }
    for (m, v) in opt.m.iter().zip(&opt.v) {
        for &x in m {
            put_f32(&mut out, x)?;
        }
        for &x in v {
            put_f32(&mut out, x)?;
        }
    }
    put_u32(&mut out, opt.step_count as u32)?;
    out.flush()?;
    Ok(())
}

pub struct Checkpoint {
    pub params: ParamStore,
    pub opt: AdamState,
    pub step: u64,
    pub config_hash: [u8; 32],
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    let mut c = Cursor::new(BufReader::new(File::open(path)?));
    c.magic(CHECKPOINT_MAGIC)?;
    c.version()?;
    let step = c.u32()? as u64;
    let mut config_hash = [0u8; 32];
    c.read_exact(&mut config_hash)?;
    let n = c.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n {
        let name_len = c.u32()? as usize;
        let mut name = vec![0u8; name_len];
        c.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| IoError::Schema(e.to_string()))?;
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let data = c.f32_vec(len)?;
        params.insert(&name, Array::new(shape, data));
    }
    let mut opt = AdamState::new(params.arrays());
    for i in 0..n {
        let len = params.arrays()[i].len();
        opt.m[i] = c.f32_vec(len)?;
        opt.v[i] = c.f32_vec(len)?;
    }
    opt.step_count = c.u32()? as u64;
    Ok(Checkpoint { params, opt, step, config_hash })
}

/// Loads a checkpoint and verifies the blob names and shapes match a
/// freshly initialized store (hard error on any mismatch).
pub fn load_checkpoint_into(
    path: &Path,
    params: &mut ParamStore,
    opt: &mut AdamState,
) -> Result<(u64, [u8; 32]), IoError> {
    let ck = read_checkpoint(path)?;
    if ck.params.names() != params.names() {
        return Err(IoError::Schema(format!(
            "checkpoint has {} blobs with different names than the model's {}",
            ck.params.names().len(),
            params.names().len()
        )));
    }
    for (name, (got, want)) in
        ck.params.names().iter().zip(ck.params.arrays().iter().zip(params.arrays()))
    {
        if got.shape != want.shape {
            return Err(IoError::Schema(format!(
                "blob {name}: checkpoint shape {:?} vs model shape {:?}",
                got.shape, want.shape
            )));
        }
    }
    params.arrays_mut().clone_from_slice(ck.params.arrays());
    *opt = ck.opt;
    Ok((ck.step, ck.config_hash))
}
