//! Binary ensemble checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      8 bytes  "RFQDENS1"
//! seed       u64
//! members    u32
//! n_sizes    u32, then n_sizes x u32 layer sizes
//! in_dim     u32, in_mean[in_dim] f64, in_std[in_dim] f64
//! out_dim    u32, out_mean[out_dim] f64, out_std[out_dim] f64
//! per member: n_params u64, then n_params x f64
//! ```
//!
//! Optimizer state is not stored; a loaded ensemble is for inference or for
//! training from fresh moment estimates.

use super::{Ensemble, EnsembleConfig, Normalizer, ProbabilisticNet};
use crate::{Error, Result};
use std::io::{Read, Write};

const MAGIC: &[u8; 8] = b"RFQDENS1";

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> std::io::Result<()> {
    vs.iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))
}

pub fn write(ens: &Ensemble, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&ens.seed.to_le_bytes())?;
    put_u32(w, ens.members.len() as u32)?;
    let sizes = ens.config.layer_sizes();
    put_u32(w, sizes.len() as u32)?;
    for s in &sizes {
        put_u32(w, *s as u32)?;
    }
    put_u32(w, ens.norm.in_mean.len() as u32)?;
    put_f64s(w, &ens.norm.in_mean)?;
    put_f64s(w, &ens.norm.in_std)?;
    put_u32(w, ens.norm.out_mean.len() as u32)?;
    put_f64s(w, &ens.norm.out_mean)?;
    put_f64s(w, &ens.norm.out_std)?;
    for m in &ens.members {
        w.write_all(&(m.net.params().len() as u64).to_le_bytes())?;
        put_f64s(w, m.net.params())?;
    }
    Ok(())
}

struct Reader<'a>(&'a mut dyn Read);

impl Reader<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| bad(&format!("truncated checkpoint ({e})")))?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }
}

fn bad(reason: &str) -> Error {
    Error::Format { what: "model checkpoint".into(), reason: reason.into() }
}

/// Reads a checkpoint; training hyper-parameters other than the layer sizes
/// come from `config`.
pub fn read(r: &mut impl Read, config: EnsembleConfig) -> Result<Ensemble> {
    let mut r = Reader(r);
    if &r.bytes::<8>()? != MAGIC {
        return Err(bad("bad magic"));
    }
    let seed = r.u64()?;
    let members = r.u32()? as usize;
    let n_sizes = r.u32()? as usize;
    let sizes = (0..n_sizes).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
    if sizes.len() < 3 {
        return Err(bad("need at least one hidden layer"));
    }
    let in_dim = r.u32()? as usize;
    let in_mean = r.f64s(in_dim)?;
    let in_std = r.f64s(in_dim)?;
    let out_dim = r.u32()? as usize;
    let out_mean = r.f64s(out_dim)?;
    let out_std = r.f64s(out_dim)?;
    let mut nets = Vec::with_capacity(members);
    for _ in 0..members {
        let n = r.u64()? as usize;
        let params = r.f64s(n)?;
        nets.push(ProbabilisticNet::from_params(&sizes, params).ok_or_else(|| bad("parameter count does not match layer sizes"))?);
    }
    let config = EnsembleConfig {
        members,
        hidden: sizes[1],
        hidden_layers: sizes.len() - 2,
        ..config
    };
    if config.layer_sizes() != sizes {
        return Err(bad("unsupported layer layout"));
    }
    Ok(Ensemble::from_parts(config, seed, nets, Normalizer { in_mean, in_std, out_mean, out_std }))
}
