//! Checkpoint file: a fixed 96-byte little-endian header followed by the flat
//! parameter vector as f32, then (optionally) the two Adam moment vectors.
//!
//! | offset | type | field |
//! |---|---|---|
//! | 0 | [u8; 8] | magic `LROCCNN1` |
//! | 8 | u32 | version (1) |
//! | 12 | u32 | conv layers |
//! | 16 | u32 | filters |
//! | 20 | u32 | kernel |
//! | 24 | f64 | leaky slope |
//! | 32 | u32 | input width |
//! | 36 | u32 | input height |
//! | 40 | u32 | J |
//! | 44 | u32 | has moments (0/1) |
//! | 48 | f64 | input mean |
//! | 56 | f64 | input std |
//! | 64 | u64 | optimizer step |
//! | 72 | f64 | validation loss (NaN if unknown) |
//! | 80 | u64 | parameter count |
//! | 88 | [u8; 8] | reserved, zero |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::neuralnet::network::{Architecture, NetworkState};
use crate::neuralnet::real::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LROCCNN1";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 96;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: NetworkState<f32>,
    pub val_loss: Option<f64>,
}

fn put_u32(h: &mut [u8], at: usize, v: u32) {
    h[at..at + 4].copy_from_slice(&v.to_le_bytes());
}
fn put_u64(h: &mut [u8], at: usize, v: u64) {
    h[at..at + 8].copy_from_slice(&v.to_le_bytes());
}
fn put_f64(h: &mut [u8], at: usize, v: f64) {
    h[at..at + 8].copy_from_slice(&v.to_le_bytes());
}
fn get_u32(h: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(h[at..at + 4].try_into().unwrap())
}
fn get_u64(h: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(h[at..at + 8].try_into().unwrap())
}
fn get_f64(h: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(h[at..at + 8].try_into().unwrap())
}

pub fn write_checkpoint<T: Real, W: Write>(
    out: &mut W,
    state: &NetworkState<T>,
    val_loss: Option<f64>,
    with_moments: bool,
) -> Result<()> {
    let a = &state.arch;
    let mut h = [0u8; HEADER_LEN];
    h[..8].copy_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut h, 8, CHECKPOINT_VERSION);
    put_u32(&mut h, 12, a.conv_layers as u32);
    put_u32(&mut h, 16, a.filters as u32);
    put_u32(&mut h, 20, a.kernel as u32);
    put_f64(&mut h, 24, a.leaky_slope);
    put_u32(&mut h, 32, a.input_width as u32);
    put_u32(&mut h, 36, a.input_height as u32);
    put_u32(&mut h, 40, (a.classes - 1) as u32);
    put_u32(&mut h, 44, with_moments as u32);
    put_f64(&mut h, 48, state.input_mean);
    put_f64(&mut h, 56, state.input_std);
    put_u64(&mut h, 64, state.step);
    put_f64(&mut h, 72, val_loss.unwrap_or(f64::NAN));
    put_u64(&mut h, 80, state.params.len() as u64);
    out.write_all(&h)?;
    let mut blocks: Vec<&[T]> = vec![&state.params];
    if with_moments {
        blocks.push(&state.first_moment);
        blocks.push(&state.second_moment);
    }
    for block in blocks {
        let bytes: Vec<u8> = block
            .iter()
            .flat_map(|v| (v.as_f64() as f32).to_le_bytes())
            .collect();
        out.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: &mut R, origin: &Path) -> Result<Checkpoint> {
    let bad = |reason: String| Error::Format {
        path: origin.to_path_buf(),
        reason,
    };
    let mut h = [0u8; HEADER_LEN];
    input
        .read_exact(&mut h)
        .map_err(|e| bad(format!("short header: {e}")))?;
    if &h[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = get_u32(&h, 8);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let arch = Architecture {
        conv_layers: get_u32(&h, 12) as usize,
        filters: get_u32(&h, 16) as usize,
        kernel: get_u32(&h, 20) as usize,
        leaky_slope: get_f64(&h, 24),
        input_width: get_u32(&h, 32) as usize,
        input_height: get_u32(&h, 36) as usize,
        classes: get_u32(&h, 40) as usize + 1,
    };
    arch.validate().map_err(|e| bad(e.to_string()))?;
    let with_moments = match get_u32(&h, 44) {
        0 => false,
        1 => true,
        v => return Err(bad(format!("bad moments flag {v}"))),
    };
    let count = get_u64(&h, 80) as usize;
    if count != arch.parameter_count() {
        return Err(bad(format!(
            "parameter count {count} does not match architecture ({})",
            arch.parameter_count()
        )));
    }
    let mut read_block = || -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; count * 4];
        input
            .read_exact(&mut bytes)
            .map_err(|e| bad(format!("truncated parameters: {e}")))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let params = read_block()?;
    if params.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite parameter".into()));
    }
    let mut state = NetworkState::from_params(arch, params);
    if with_moments {
        state.first_moment = read_block()?;
        state.second_moment = read_block()?;
    }
    state.step = get_u64(&h, 64);
    state
        .set_normalization(get_f64(&h, 48), get_f64(&h, 56))
        .map_err(|e| bad(e.to_string()))?;
    let v = get_f64(&h, 72);
    Ok(Checkpoint {
        state,
        val_loss: (!v.is_nan()).then_some(v),
    })
}

pub fn save_checkpoint<T: Real>(
    path: &Path,
    state: &NetworkState<T>,
    val_loss: Option<f64>,
    with_moments: bool,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, state, val_loss, with_moments)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn sample_state() -> NetworkState<f32> {
        let mut s = NetworkState::init(Architecture::new(3, 8, 8, 4), &mut stream(1, "ck")).unwrap();
        s.set_normalization(12.5, 3.25).unwrap();
        s.step = 77;
        for (i, m) in s.first_moment.iter_mut().enumerate() {
            *m = i as f32 * 1e-3;
        }
        s
    }

    #[test]
    fn round_trip_with_moments() {
        let s = sample_state();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s, Some(1.25), true).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 3 * 4 * s.params.len());
        assert_eq!(&buf[..8], b"LROCCNN1");
        let c = read_checkpoint(&mut buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(c.state, s);
        assert_eq!(c.val_loss, Some(1.25));
    }

    #[test]
    fn round_trip_without_moments() {
        let s = sample_state();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s, None, false).unwrap();
        let c = read_checkpoint(&mut buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(c.state.params, s.params);
        assert!(c.state.first_moment.iter().all(|&m| m == 0.0));
        assert_eq!(c.val_loss, None);
    }

    #[test]
    fn corrupt_files_rejected() {
        let s = sample_state();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s, None, false).unwrap();
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_checkpoint(&mut bad_magic.as_slice(), Path::new("m")).is_err());
        let truncated = &buf[..buf.len() - 3];
        assert!(read_checkpoint(&mut &truncated[..], Path::new("m")).is_err());
        let mut bad_count = buf.clone();
        bad_count[80] ^= 1;
        assert!(read_checkpoint(&mut bad_count.as_slice(), Path::new("m")).is_err());
    }
}
