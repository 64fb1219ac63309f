//! Network checkpoints.
//!
//! Binary layout (little endian): magic `RATIONET`, `u32` version, five
//! `u64` fields (`in_dim`, `out_dim`, `n_layers`, `width`, `activate_last_hidden`),
//! `f64` leaky slope, `u64` parameter count, then the flat parameters.
//! The JSON form holds the config and the same flat parameter array.

use serde::{Deserialize, Serialize};

use super::{param_count, NetConfig, RatioNetwork};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RATIONET";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    config: NetConfig,
    params: Vec<f64>,
}

pub fn to_binary(net: &RatioNetwork) -> Vec<u8> {
    let c = &net.config;
    let params = net.flat_params();
    let mut out = Vec::with_capacity(64 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.in_dim, c.out_dim, c.n_layers, c.width, usize::from(c.activate_last_hidden)] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&c.leaky_slope.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn from_binary(bytes: &[u8]) -> Result<RatioNetwork> {
    let bad = |msg: &str| Error::Parse(format!("checkpoint: {msg}"));
    let mut cursor = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(bad("truncated"));
        }
        let (head, tail) = cursor.split_at(n);
        cursor = tail;
        Ok(head)
    };
    if take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad("unsupported version"));
    }
    let mut dims = [0u64; 5];
    for d in &mut dims {
        *d = u64::from_le_bytes(take(8)?.try_into().unwrap());
    }
    let leaky_slope = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let config = NetConfig {
        in_dim: dims[0] as usize,
        out_dim: dims[1] as usize,
        n_layers: dims[2] as usize,
        width: dims[3] as usize,
        leaky_slope,
        activate_last_hidden: dims[4] != 0,
    };
    config.validate()?;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    if count != param_count(&config) {
        return Err(bad("parameter count does not match config"));
    }
    let params: Vec<f64> = take(8 * count)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut net = RatioNetwork::zeros(config)?;
    net.set_flat_params(&params)?;
    Ok(net)
}

pub fn to_json(net: &RatioNetwork) -> Result<String> {
    Ok(serde_json::to_string(&JsonCheckpoint { config: net.config, params: net.flat_params() })?)
}

pub fn from_json(text: &str) -> Result<RatioNetwork> {
    let ck: JsonCheckpoint = serde_json::from_str(text)?;
    let mut net = RatioNetwork::zeros(ck.config)?;
    net.set_flat_params(&ck.params)?;
    Ok(net)
}
