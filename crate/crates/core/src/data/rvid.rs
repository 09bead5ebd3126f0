//! The `.rvid` raw video container: a fixed header followed by raw RGB24
//! frames. Trades size for exact, dependency-free round trips.
//!
//! Layout (all integers little-endian):
//! magic `RVID` | u32 version | u32 frames | u32 height | u32 width |
//! f32 fps | frames * height * width * 3 bytes, frame-major, rows top-down,
//! RGB interleaved.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array4;

use crate::data::FrameVolume;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RVID";
const VERSION: u32 = 1;

pub fn write(path: &Path, vol: &FrameVolume) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_u32::<LittleEndian>(VERSION)?;
    f.write_u32::<LittleEndian>(vol.len() as u32)?;
    f.write_u32::<LittleEndian>(vol.height() as u32)?;
    f.write_u32::<LittleEndian>(vol.width() as u32)?;
    f.write_f32::<LittleEndian>(vol.fps)?;
    let data = vol.data.as_standard_layout();
    f.write_all(data.as_slice().unwrap())?;
    Ok(())
}

pub fn read(path: &Path) -> Result<FrameVolume> {
    let bad = |reason: &str| Error::BadFormat {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = f.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let frames = f.read_u32::<LittleEndian>()? as usize;
    let height = f.read_u32::<LittleEndian>()? as usize;
    let width = f.read_u32::<LittleEndian>()? as usize;
    let fps = f.read_f32::<LittleEndian>()?;
    if frames == 0 {
        return Err(Error::EmptyVideo { path: path.display().to_string() });
    }
    let expected = frames
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let mut data = vec![0u8; expected];
    f.read_exact(&mut data).map_err(|_| bad("truncated frame data"))?;
    let mut tail = [0u8; 1];
    if f.read(&mut tail)? != 0 {
        return Err(bad("trailing bytes after frame data"));
    }
    let data = Array4::from_shape_vec((frames, height, width, 3), data).expect("sized above");
    FrameVolume::new(data, path.display().to_string(), fps)
}
