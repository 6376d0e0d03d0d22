//! `RFM1` checkpoint files (little-endian):
//!
//! ```text
//! "RFM1"            magic
//! u32 version       = 1
//! u32 × 11          N, F, W, d_model, H, d_k, classes, pool_h, pool_w,
//!                   pool_channels (0 keep, 1 average), hidden
//! f32               dropout rate
//! f32 × P           parameters, schema order, each tensor row-major
//! f32 × 2·(6+8+6)   batch-norm running (mean, var) for bn1, bn2, bn3
//! ```

use std::fs;
use std::path::Path;

use super::{schema, ModelConfig, ModelState, Param, PoolChannels};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RFM1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(state: &ModelState) -> Vec<u8> {
    let c = &state.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let pool_channels = match c.pool_channels {
        PoolChannels::Keep => 0,
        PoolChannels::Average => 1,
    };
    for v in [
        c.nodes,
        c.fast_bins,
        c.window,
        c.d_model(),
        c.heads,
        c.head_dim,
        c.classes,
        c.pool.0,
        c.pool.1,
        pool_channels,
        c.hidden,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(c.dropout as f32).to_le_bytes());
    let stats = state.bn.iter().flat_map(|s| s.mean.iter().chain(&s.var));
    for v in state.params.iter().flat_map(|p| p.tensor.data()).chain(stats) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(state)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn truncated(offset: usize, what: &str, need: usize, have: usize) -> Error {
    Error::Parse { offset: offset as u64, detail: format!("truncated {what}: expected {need} bytes, {have} available") }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    if bytes.len() < 4 {
        return Err(truncated(0, "magic", 4, bytes.len()));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Parse { offset: 0, detail: format!("bad magic {:?}, expected \"RFM1\"", &bytes[..4]) });
    }
    let header_len = 4 + 4 + 11 * 4 + 4;
    if bytes.len() < header_len {
        return Err(truncated(4, "header", header_len - 4, bytes.len() - 4));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let version = u(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse { offset: 4, detail: format!("unsupported checkpoint version {version}") });
    }
    let pool_channels = match u(10) {
        0 => PoolChannels::Keep,
        1 => PoolChannels::Average,
        other => return Err(Error::Parse { offset: 44, detail: format!("unknown pool_channels code {other}") }),
    };
    // shortest decimal form, so a stored 0.3 reads back as 0.3 rather than 0.30000001192…
    let dropout32 = f32::from_le_bytes(bytes[header_len - 4..header_len].try_into().expect("4 bytes"));
    let dropout: f64 = dropout32.to_string().parse().expect("f32 display parses");
    let config = ModelConfig {
        nodes: u(1),
        fast_bins: u(2),
        window: u(3),
        heads: u(5),
        head_dim: u(6),
        classes: u(7),
        pool: (u(8), u(9)),
        pool_channels,
        hidden: u(11),
        dropout,
    };
    if config.d_model() != u(4) {
        return Err(Error::Parse {
            offset: 20,
            detail: format!("d_model {} disagrees with pool {:?} ({})", u(4), config.pool, config.d_model()),
        });
    }
    config.validate().map_err(|e| Error::Parse { offset: 8, detail: e.to_string() })?;

    let shapes = schema(&config);
    let bn_len: usize = super::CONV_CHANNELS.iter().map(|c| 2 * c).sum();
    let total: usize = shapes.iter().map(|(_, s, _)| s.iter().product::<usize>()).sum::<usize>() + bn_len;
    let body = &bytes[header_len..];
    if body.len() != total * 4 {
        if body.len() < total * 4 {
            return Err(truncated(header_len, "parameter block", total * 4, body.len()));
        }
        return Err(Error::Parse {
            offset: (header_len + total * 4) as u64,
            detail: format!("{} trailing bytes after parameters", body.len() - total * 4),
        });
    }
    let mut values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let params = shapes
        .into_iter()
        .map(|(name, shape, _)| {
            let n = shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            Param { name, tensor: Tensor::new(shape, data).expect("sized from schema") }
        })
        .collect();
    let mut state = ModelState::from_parts(config, params);
    for s in &mut state.bn {
        for v in s.mean.iter_mut().chain(s.var.iter_mut()) {
            *v = values.next().expect("sized from schema");
        }
    }
    Ok(state)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    read_checkpoint(&bytes)
}
