//! Flat binary checkpoints of a reconstruction session.
//!
//! Layout (little-endian): an 8-byte magic/version tag, the grid and prior
//! scalars, the tap counter, the state dimension, then the mean and the full
//! covariance as raw 64-bit floats. Loading restores the session bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::filter::{PriorConfig, StateEstimate};
use crate::grid::GridSpec;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"TRECON01";

pub fn save_checkpoint(
    path: &Path,
    grid: &GridSpec,
    prior: &PriorConfig,
    state: &StateEstimate,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(grid.n as u32).to_le_bytes())?;
    w.write_all(&(grid.m as u32).to_le_bytes())?;
    w.write_all(&grid.alpha.to_le_bytes())?;
    w.write_all(&grid.l_sensor_mm.to_le_bytes())?;
    w.write_all(&prior.amplitude.to_le_bytes())?;
    w.write_all(&prior.length_scale_mm.to_le_bytes())?;
    w.write_all(&prior.mean.to_le_bytes())?;
    w.write_all(&(state.taps() as u64).to_le_bytes())?;
    w.write_all(&(state.dim() as u64).to_le_bytes())?;
    for v in state.mean().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in state.cov().as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(GridSpec, PriorConfig, StateEstimate)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::MalformedCheckpoint("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::MalformedCheckpoint(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }

    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut u32buf)
            .map_err(|_| Error::MalformedCheckpoint("truncated header".into()))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let n = read_u32(&mut r)? as usize;
    let m = read_u32(&mut r)? as usize;

    let mut read_f64 = |r: &mut BufReader<File>| -> Result<f64> {
        r.read_exact(&mut u64buf)
            .map_err(|_| Error::MalformedCheckpoint("truncated payload".into()))?;
        Ok(f64::from_le_bytes(u64buf))
    };
    let alpha = read_f64(&mut r)?;
    let l_sensor = read_f64(&mut r)?;
    let amplitude = read_f64(&mut r)?;
    let length_scale = read_f64(&mut r)?;
    let mean0 = read_f64(&mut r)?;

    let mut read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut u64buf)
            .map_err(|_| Error::MalformedCheckpoint("truncated header".into()))?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let taps = read_u64(&mut r)? as usize;
    let dim = read_u64(&mut r)? as usize;

    let grid = GridSpec::new(n, m, alpha, l_sensor)?;
    if grid.state_dim() != dim {
        return Err(Error::MalformedCheckpoint(format!(
            "state dim {dim} does not match grid ({})",
            grid.state_dim()
        )));
    }
    let prior = PriorConfig {
        amplitude,
        length_scale_mm: length_scale,
        mean: mean0,
    };

    let mut payload = vec![0u8; 8 * dim * (dim + 1)];
    r.read_exact(&mut payload)
        .map_err(|_| Error::MalformedCheckpoint("truncated payload".into()))?;
    let floats: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mean = DVector::from_row_slice(&floats[..dim]);
    let cov = DMatrix::from_column_slice(dim, dim, &floats[dim..]);
    let state = StateEstimate::from_parts(mean, cov, taps)?;
    Ok((grid, prior, state))
}
