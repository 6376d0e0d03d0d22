//! `RDR1` recording files.
//!
//! Little-endian layout:
//!
//! ```text
//! "RDR1"                       magic, 4 bytes
//! u32 N, u32 F, u32 M, u32 P   nodes, fast bins, pulses, participants
//! N × F × M × (f32 re, f32 im) one row-major F×M frame per node, node order
//! u32 count                    labelled windows
//! count × u32[4]               (start, length, class, participant)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex32;

use super::{to_window, ComplexFrame, WindowSample};
use crate::error::{Error, Result};

pub const RECORDING_MAGIC: &[u8; 4] = b"RDR1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowLabel {
    pub start: u32,
    pub length: u32,
    pub class: u32,
    pub participant: u32,
}

/// Aligned frames of all nodes plus the labelled windows cut from them.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub frames: Vec<ComplexFrame>,
    pub windows: Vec<WindowLabel>,
    pub participants: usize,
}

impl Recording {
    pub fn nodes(&self) -> usize {
        self.frames.len()
    }

    pub fn fast_bins(&self) -> usize {
        self.frames.first().map_or(0, |f| f.fast)
    }

    pub fn pulses(&self) -> usize {
        self.frames.first().map_or(0, |f| f.slow)
    }

    pub fn samples(&self) -> Result<Vec<WindowSample>> {
        self.windows
            .iter()
            .map(|w| to_window(&self.frames, w.start as usize, w.length as usize, w.class as usize, w.participant as usize))
            .collect()
    }

    /// Fails unless the recording carries exactly `nodes` frames.
    pub fn expect_nodes(&self, nodes: usize) -> Result<()> {
        if self.nodes() != nodes {
            return Err(Error::Parse {
                offset: 4,
                detail: format!("recording has {} nodes, expected {nodes}", self.nodes()),
            });
        }
        Ok(())
    }
}

pub fn write_recording<W: Write>(rec: &Recording, mut out: W) -> std::io::Result<()> {
    let (n, f, m) = (rec.nodes(), rec.fast_bins(), rec.pulses());
    out.write_all(RECORDING_MAGIC)?;
    for v in [n, f, m, rec.participants] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(n * f * m * 8);
    for frame in &rec.frames {
        for z in &frame.data {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.write_all(&(rec.windows.len() as u32).to_le_bytes())?;
    for w in &rec.windows {
        for v in [w.start, w.length, w.class, w.participant] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_recording(rec: &Recording, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_recording(rec, &mut bytes).expect("writing to memory");
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if len > available {
            return Err(Error::Parse {
                offset: self.pos as u64,
                detail: format!("truncated {what}: expected {len} bytes, {available} available"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn read_recording(bytes: &[u8]) -> Result<Recording> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != RECORDING_MAGIC {
        return Err(Error::Parse { offset: 0, detail: format!("bad magic {magic:?}, expected \"RDR1\"") });
    }
    let n = cur.u32("header")? as usize;
    let f = cur.u32("header")? as usize;
    let m = cur.u32("header")? as usize;
    let participants = cur.u32("header")? as usize;
    if n == 0 || f == 0 {
        return Err(Error::Parse { offset: 4, detail: format!("header declares N={n}, F={f}") });
    }
    let frame_bytes = f
        .checked_mul(m)
        .and_then(|x| x.checked_mul(8))
        .ok_or_else(|| Error::Parse { offset: 12, detail: "frame size overflows".into() })?;
    let mut frames = Vec::with_capacity(n);
    for node in 0..n {
        let raw = cur.take(frame_bytes, &format!("frame of node {node}"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| {
                Complex32::new(
                    f32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                    f32::from_le_bytes(c[4..].try_into().expect("4 bytes")),
                )
            })
            .collect();
        frames.push(ComplexFrame::new(node, f, m, data)?);
    }
    let table_at = cur.pos as u64;
    let count = cur.u32("label table count")? as usize;
    let mut windows = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let at = cur.pos as u64;
        let w = WindowLabel {
            start: cur.u32("label table")?,
            length: cur.u32("label table")?,
            class: cur.u32("label table")?,
            participant: cur.u32("label table")?,
        };
        if w.start as usize + w.length as usize > m {
            return Err(Error::Parse {
                offset: at,
                detail: format!("window {i} spans pulses {}..{} of {m}", w.start, w.start + w.length),
            });
        }
        windows.push(w);
    }
    if cur.pos != bytes.len() {
        let extra = bytes.len() - cur.pos;
        return Err(Error::Parse {
            offset: table_at,
            detail: format!(
                "{extra} trailing bytes after label table; header node count N={n} disagrees with payload size"
            ),
        });
    }
    Ok(Recording { frames, windows, participants })
}

pub fn load_recording(path: &Path) -> Result<Recording> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    read_recording(&bytes)
}
