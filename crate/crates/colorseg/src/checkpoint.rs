//! Binary checkpoints: network weights, optimizer state, iteration counter,
//! and RNG state, in a fixed little-endian layout so a resumed run replays
//! bit-for-bit.
//!
//! Layout: magic `CSEGCKPT`, version u32, net config (input_channels,
//! colors, depth, base_channels as u32, use_batchnorm as u8), tensor count
//! u32, then per tensor: name (len u32 + UTF-8), dims (ndim u32 + each dim
//! u32), values (f64 LE), Adam first/second moments (f64 LE each) and step
//! count u64. After the tensors: iteration u64, RNG state u64.

use std::io::Read;
use std::path::Path;

use colorseg_core::adam::AdamState;
use colorseg_core::net::{NetConfig, Network};
use colorseg_core::tensor::Tensor;

use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"CSEGCKPT";
const VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub net: Network,
    /// One optimizer state per parameter tensor, in `net.params()` order.
    pub adam: Vec<AdamState>,
    pub iteration: u64,
    pub rng_state: u64,
}

fn corrupt(what: &str) -> CliError {
    CliError::Checkpoint(what.to_string())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for &v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(corrupt("file truncated"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt("size overflow"))?)?;
        let mut out = Vec::with_capacity(n);
        for chunk in bytes.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(corrupt("non-finite value"));
            }
            out.push(v);
        }
        Ok(out)
    }
}

pub fn write_checkpoint(
    path: &Path,
    net: &Network,
    adam: &[AdamState],
    iteration: u64,
    rng_state: u64,
) -> Result<()> {
    let cfg = net.cfg();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, cfg.input_channels as u32);
    put_u32(&mut out, cfg.colors as u32);
    put_u32(&mut out, cfg.depth as u32);
    put_u32(&mut out, cfg.base_channels as u32);
    out.push(cfg.use_batchnorm as u8);

    let params = net.params();
    if params.len() != adam.len() {
        return Err(CliError::Checkpoint(format!(
            "{} tensors but {} optimizer states",
            params.len(),
            adam.len()
        )));
    }
    put_u32(&mut out, params.len() as u32);
    for (param, state) in params.iter().zip(adam) {
        put_u32(&mut out, param.name.len() as u32);
        out.extend_from_slice(param.name.as_bytes());
        let shape = param.tensor.shape();
        put_u32(&mut out, shape.len() as u32);
        for &d in shape {
            put_u32(&mut out, d as u32);
        }
        put_f64s(&mut out, param.tensor.data());
        if state.m.len() != param.tensor.numel() || state.v.len() != param.tensor.numel() {
            return Err(CliError::Checkpoint(format!(
                "optimizer state size mismatch for `{}`",
                param.name
            )));
        }
        put_f64s(&mut out, &state.m);
        put_f64s(&mut out, &state.v);
        put_u64(&mut out, state.t);
    }
    put_u64(&mut out, iteration);
    put_u64(&mut out, rng_state);
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(path, e))?;
    let mut cur = Cursor { buf: &bytes };

    if cur.take(8)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CliError::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let cfg = NetConfig {
        input_channels: cur.u32()? as usize,
        colors: u8::try_from(cur.u32()?).map_err(|_| corrupt("colors out of range"))?,
        depth: cur.u32()? as usize,
        base_channels: cur.u32()? as usize,
        use_batchnorm: match cur.take(1)?[0] {
            0 => false,
            1 => true,
            _ => return Err(corrupt("bad batchnorm flag")),
        },
    };
    let mut net = Network::init(cfg, 0).map_err(CliError::Checkpoint)?;

    let count = cur.u32()? as usize;
    if count != net.params().len() {
        return Err(CliError::Checkpoint(format!(
            "{count} tensors but this architecture has {}",
            net.params().len()
        )));
    }
    let mut adam = vec![None; count];
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| corrupt("tensor name is not UTF-8"))?
            .to_string();
        let ndim = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| corrupt("shape overflow"))?;
        let values = cur.f64s(numel)?;
        let m = cur.f64s(numel)?;
        let v = cur.f64s(numel)?;
        let t = cur.u64()?;

        let idx = net
            .param_index(&name)
            .ok_or_else(|| CliError::Checkpoint(format!("unknown tensor `{name}`")))?;
        let param = &mut net.params_mut()[idx];
        if param.tensor.shape() != shape.as_slice() {
            return Err(CliError::Checkpoint(format!(
                "tensor `{name}` has shape {shape:?}, expected {:?}",
                param.tensor.shape()
            )));
        }
        param.tensor = Tensor::from_vec(&shape, values).map_err(|e| corrupt(&format!("{e:?}")))?;
        if adam[idx].is_some() {
            return Err(CliError::Checkpoint(format!("duplicate tensor `{name}`")));
        }
        adam[idx] = Some(AdamState { m, v, t });
    }
    let iteration = cur.u64()?;
    let rng_state = cur.u64()?;
    if !cur.buf.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    let adam: Vec<AdamState> = adam.into_iter().map(Option::unwrap).collect();
    Ok(Checkpoint { net, adam, iteration, rng_state })
}
