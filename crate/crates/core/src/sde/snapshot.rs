//! Binary ensemble snapshots. Layout, all little-endian:
//! `n_paths: u64`, `d: u64`, `t: f64`, `seed: u64`, then `n_paths × 2d`
//! doubles in row-major order `(x₁…x_d, v₁…v_d)`.

use std::io::{Read, Write};

use super::Ensemble;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub n_paths: usize,
    pub dim: usize,
    pub time: f64,
    pub seed: u64,
    pub state: Vec<f64>,
}

fn io(e: std::io::Error) -> Error {
    Error::Numeric(format!("snapshot I/O failed: {e}"))
}

impl Ensemble {
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.n_paths as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.dim as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&self.time.to_le_bytes()).map_err(io)?;
        w.write_all(&self.rng_seed.to_le_bytes()).map_err(io)?;
        for x in &self.state {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
        Ok(())
    }
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Snapshot> {
    let mut word = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut word).map_err(io)?;
        Ok(word)
    };
    let n_paths = u64::from_le_bytes(next(&mut r)?) as usize;
    let dim = u64::from_le_bytes(next(&mut r)?) as usize;
    let time = f64::from_le_bytes(next(&mut r)?);
    let seed = u64::from_le_bytes(next(&mut r)?);
    let len = n_paths
        .checked_mul(2 * dim)
        .ok_or_else(|| Error::InvalidArgument("snapshot header overflows".into()))?;
    let mut state = Vec::with_capacity(len);
    for _ in 0..len {
        state.push(f64::from_le_bytes(next(&mut r)?));
    }
    Ok(Snapshot {
        n_paths,
        dim,
        time,
        seed,
        state,
    })
}
