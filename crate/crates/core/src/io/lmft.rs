use std::path::Path;

use crate::error::{Error, ParseError, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::{Shape, Tensor};

pub const LMFT_MAGIC: &[u8; 4] = b"LMFT";
pub const LMFT_VERSION: u16 = 1;

/// Appends one tensor as `LMFT | u16 version | u8 dtype | u8 rank | u32 dims | values`,
/// all little-endian, rank 4.
pub fn write_lmft<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(LMFT_MAGIC);
    out.extend_from_slice(&LMFT_VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.push(4);
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn encode_lmft<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::new();
    write_lmft(t, &mut out);
    out
}

fn take<'a>(b: &'a [u8], pos: &mut usize, n: usize) -> std::result::Result<&'a [u8], ParseError> {
    let end = pos.checked_add(n).ok_or_else(|| ParseError::DimOverflow("offset overflow".into()))?;
    if end > b.len() {
        return Err(ParseError::Truncated { needed: end, available: b.len() });
    }
    let s = &b[*pos..end];
    *pos = end;
    Ok(s)
}

/// Reads one tensor starting at `*pos`, converting to `T` when the stored
/// dtype differs. Ranks below 4 are padded with leading unit dims.
pub fn read_lmft<T: Scalar>(b: &[u8], pos: &mut usize) -> std::result::Result<Tensor<T>, ParseError> {
    let magic = take(b, pos, 4)?;
    if magic != LMFT_MAGIC {
        return Err(ParseError::BadMagic { found: magic.to_vec(), expected: "LMFT" });
    }
    let version = u16::from_le_bytes(take(b, pos, 2)?.try_into().expect("2 bytes"));
    if version != LMFT_VERSION {
        return Err(ParseError::Version(version));
    }
    let code = take(b, pos, 1)?[0];
    let dtype = DType::from_code(code).ok_or(ParseError::DType(code))?;
    let rank = take(b, pos, 1)?[0];
    if rank == 0 || rank > 4 {
        return Err(ParseError::Rank(rank));
    }
    let mut dims = [1usize; 4];
    for i in 0..rank as usize {
        dims[4 - rank as usize + i] = u32::from_le_bytes(take(b, pos, 4)?.try_into().expect("4 bytes")) as usize;
    }
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&c| c <= super::pnm::MAX_PIXELS)
        .ok_or_else(|| ParseError::DimOverflow(format!("dims {dims:?} too large")))?;
    let bytes = count
        .checked_mul(dtype.size())
        .ok_or_else(|| ParseError::DimOverflow(format!("dims {dims:?} too large")))?;
    let raw = take(b, pos, bytes)?;
    let data: Vec<T> = match dtype {
        DType::F32 => raw.chunks_exact(4).map(|c| T::from_f64_lossy(f32::read_le(c) as f64)).collect(),
        DType::F64 => raw.chunks_exact(8).map(|c| T::from_f64_lossy(f64::read_le(c))).collect(),
    };
    Ok(Tensor::from_vec(Shape::new(dims[0], dims[1], dims[2], dims[3]), data).expect("sized"))
}

/// Parses a buffer holding exactly one tensor.
pub fn decode_lmft<T: Scalar>(b: &[u8]) -> std::result::Result<Tensor<T>, ParseError> {
    let mut pos = 0;
    let t = read_lmft(b, &mut pos)?;
    if pos != b.len() {
        return Err(ParseError::Trailing(b.len() - pos));
    }
    Ok(t)
}

pub fn save_lmft<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_lmft(t)).map_err(|e| Error::io(path, e))
}

pub fn load_lmft<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_lmft(&bytes).map_err(|k| Error::parse(path, k))
}
