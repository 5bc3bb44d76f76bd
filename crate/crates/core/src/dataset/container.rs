//! Binary container for processed sequences.
//!
//! All integers and floats are little-endian.
//!
//! | offset | size      | field                                             |
//! |--------|-----------|---------------------------------------------------|
//! | 0      | 4         | magic `THSQ`                                      |
//! | 4      | 4         | format version (u32, currently 1)                 |
//! | 8      | 4         | normalization scope (u32, 1 = per-sequence max)   |
//! | 12     | 4         | height (u32)                                      |
//! | 16     | 4         | width (u32)                                       |
//! | 20     | 4         | frame count (u32)                                 |
//! | 24     | 4         | label (u32, 0 = normal, 1 = anomalous)            |
//! | 28     | 16        | config: 4 x (gain u16, phase u16)                 |
//! | 44     | 4         | id length n (u32)                                 |
//! | 48     | n         | id, UTF-8                                         |
//! | 48+n   | 4*F*H*W   | frames as f32, frame-major then row-major         |

use std::fs;
use std::path::Path;

use super::ProcessedSequence;
use crate::error::{Error, IoContext, Result};
use crate::frame::{Frame, Grid};
use crate::simulator::{ArrayConfig, Label};

pub const CONTAINER_MAGIC: [u8; 4] = *b"THSQ";
pub const CONTAINER_VERSION: u32 = 1;
const NORMALIZATION_PER_SEQUENCE: u32 = 1;
const HEADER_LEN: usize = 48;

pub fn store_processed(seq: &ProcessedSequence, path: &Path) -> Result<()> {
    let grid = seq
        .grid()
        .ok_or_else(|| Error::InvalidInput(format!("refusing to store empty sequence {}", seq.id)))?;
    if seq.frames.iter().any(|f| f.grid != grid || f.data.len() != grid.pixels()) {
        return Err(Error::Shape(format!("sequence {} mixes frame sizes", seq.id)));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + seq.id.len() + 4 * seq.len() * grid.pixels());
    buf.extend_from_slice(&CONTAINER_MAGIC);
    for v in [
        CONTAINER_VERSION,
        NORMALIZATION_PER_SEQUENCE,
        grid.height as u32,
        grid.width as u32,
        seq.len() as u32,
        match seq.label {
            Label::Normal => 0,
            Label::Anomalous => 1,
        },
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for [gain, phase] in seq.config.pairs() {
        buf.extend_from_slice(&(gain as u16).to_le_bytes());
        buf.extend_from_slice(&(phase as u16).to_le_bytes());
    }
    buf.extend_from_slice(&(seq.id.len() as u32).to_le_bytes());
    buf.extend_from_slice(seq.id.as_bytes());
    for f in &seq.frames {
        for v in &f.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).ctx(|| format!("writing {}", path.display()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CorruptContainer {
                path: self.path.to_path_buf(),
                reason: format!("truncated at byte {} (wanted {n} more)", self.pos),
            }
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::CorruptContainer {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

pub fn load_processed(path: &Path) -> Result<ProcessedSequence> {
    let bytes = fs::read(path).ctx(|| format!("reading {}", path.display()))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(4)? != CONTAINER_MAGIC {
        return Err(r.corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: CONTAINER_VERSION,
        });
    }
    let scope = r.u32()?;
    if scope != NORMALIZATION_PER_SEQUENCE {
        return Err(r.corrupt(format!("unknown normalization scope {scope}")));
    }
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let count = r.u32()? as usize;
    let label = match r.u32()? {
        0 => Label::Normal,
        1 => Label::Anomalous,
        other => return Err(r.corrupt(format!("unknown label {other}"))),
    };
    let mut pairs = [[0u32; 2]; 4];
    for p in &mut pairs {
        *p = [u32::from(r.u16()?), u32::from(r.u16()?)];
    }
    let config = ArrayConfig::from_pairs(pairs).map_err(|e| r.corrupt(e.to_string()))?;
    let id_len = r.u32()? as usize;
    let id = std::str::from_utf8(r.take(id_len)?)
        .map_err(|_| r.corrupt("id is not UTF-8"))?
        .to_string();
    if count == 0 || height == 0 || width == 0 {
        return Err(r.corrupt("empty frame block"));
    }
    let grid = Grid::new(height, width);
    let payload = r.take(4 * count * grid.pixels())?;
    if r.pos != bytes.len() {
        return Err(r.corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let frames = payload
        .chunks_exact(4 * grid.pixels())
        .map(|chunk| Frame {
            grid,
            data: chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect(),
        })
        .collect();
    Ok(ProcessedSequence { id, config, label, frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ProcessedSequence {
        let grid = Grid::new(3, 5);
        ProcessedSequence {
            id: "n00042".into(),
            config: ArrayConfig::from_pairs([[155, 0], [255, 180], [170, 45], [235, 90]]).unwrap(),
            label: Label::Anomalous,
            frames: (0..4)
                .map(|t| Frame {
                    grid,
                    data: (0..15).map(|i| (t * 15 + i) as f32 / 59.0).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.thsq");
        store_processed(&sample(), &p).unwrap();
        assert_eq!(load_processed(&p).unwrap(), sample());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.thsq");
        store_processed(&sample(), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        for cut in [2, 30, bytes.len() - 1] {
            fs::write(&p, &bytes[..cut]).unwrap();
            assert!(matches!(load_processed(&p), Err(Error::CorruptContainer { .. })));
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.thsq");
        store_processed(&sample(), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[4] = 9;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_processed(&p), Err(Error::VersionMismatch { found: 9, .. })));
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_processed(&p), Err(Error::CorruptContainer { .. })));
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = sample();
        s.frames.clear();
        assert!(store_processed(&s, &dir.path().join("e.thsq")).is_err());
    }
}
