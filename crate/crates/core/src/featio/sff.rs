//! SFF1 binary layout (all integers little-endian, no padding):
//!
//! ```text
//! 0   4   magic "SFF1"
//! 4   4   u32 version = 1
//! 8   4   u32 T (frames)
//! 12  4   u32 D (dims)
//! 16  8   f64 frame_rate
//! 24  1   u8 window kind (0 = local30, 1 = global420)
//! 25  2   u16 extractor id length L
//! 27  L   extractor id, UTF-8
//! ..  4TD f32 payload, row-major
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{FeatureError, FeatureTensor, Result, WindowKind};

pub const SFF_MAGIC: [u8; 4] = *b"SFF1";
pub const SFF_VERSION: u32 = 1;

pub fn encode_sff(tensor: &FeatureTensor) -> Vec<u8> {
    let id = tensor.extractor_id().as_bytes();
    let mut out = Vec::with_capacity(27 + id.len() + 4 * tensor.data().len());
    out.extend_from_slice(&SFF_MAGIC);
    out.extend_from_slice(&SFF_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(tensor.dims() as u32).to_le_bytes());
    out.extend_from_slice(&tensor.frame_rate().to_le_bytes());
    out.push(tensor.window().code());
    out.extend_from_slice(&(id.len() as u16).to_le_bytes());
    out.extend_from_slice(id);
    for v in tensor.data().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            FeatureError::TruncatedFile(format!("{what}: need {n} bytes at offset {}, have {}", self.pos, self.buf.len()))
        })?;
        let bytes = &self.buf[self.pos..end];
        self.pos = end;
        Ok(bytes)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

pub fn decode_sff(bytes: &[u8]) -> Result<FeatureTensor> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = cur.array("magic")?;
    if magic != SFF_MAGIC {
        return Err(FeatureError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(cur.array("version")?);
    if version != SFF_VERSION {
        return Err(FeatureError::UnsupportedVersion(version));
    }
    let frames = u32::from_le_bytes(cur.array("frame count")?) as u64;
    let dims = u32::from_le_bytes(cur.array("dim count")?) as u64;
    let frame_rate = f64::from_le_bytes(cur.array("frame rate")?);
    let window_code = cur.array::<1>("window kind")?[0];
    let window = WindowKind::from_code(window_code)
        .ok_or_else(|| FeatureError::Invalid(format!("unknown window kind {window_code}")))?;
    let id_len = u16::from_le_bytes(cur.array("extractor id length")?) as usize;
    let id = std::str::from_utf8(cur.take(id_len, "extractor id")?)
        .map_err(|e| FeatureError::Invalid(format!("extractor id: {e}")))?
        .to_string();

    let count = frames
        .checked_mul(dims)
        .and_then(|n| n.checked_mul(4))
        .filter(|&n| n <= isize::MAX as u64)
        .ok_or(FeatureError::DimensionOverflow { frames, dims })?;
    let payload = cur.take(count as usize, "payload")?;
    if cur.pos != bytes.len() {
        return Err(FeatureError::Invalid(format!("{} trailing bytes after payload", bytes.len() - cur.pos)));
    }
    let values: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let data = Array2::from_shape_vec((frames as usize, dims as usize), values)
        .map_err(|e| FeatureError::Invalid(e.to_string()))?;
    FeatureTensor::new(data, frame_rate, id, window)
}

pub fn write_feature_file(tensor: &FeatureTensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_sff(tensor))?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    decode_sff(&fs::read(path)?)
}
