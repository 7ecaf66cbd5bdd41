//! Binary snapshots and CSV time series.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::diagnostics::{DiagnosticsRecord, CSV_HEADER};
use crate::diffusive::SimState;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::{Field, Rank, Torus};

pub const MAGIC: &[u8; 8] = b"OBTORUS1";
pub const VERSION: u32 = 1;

/// Row-major tensor slots of the stored components 11, 22, 33, 12, 13, 23.
pub const SIGMA_SLOTS: [usize; 6] = [0, 4, 8, 1, 2, 5];

/// Nodal contents of a snapshot file.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub dims: [u32; 3],
    pub t: f64,
    pub eps: f64,
    /// Three velocity components, x³ fastest.
    pub u: Vec<Vec<f64>>,
    /// Six conformation components in [`SIGMA_SLOTS`] order.
    pub sigma: Vec<Vec<f64>>,
}

impl Snapshot {
    pub fn from_state<T: Real>(state: &SimState<T>, eps: f64) -> Self {
        let dims = state.u.grid().dims().map(|n| n as u32);
        let conv = |v: &Vec<T>| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
        let u = state.u.physical().iter().map(conv).collect();
        let sp = state.sigma.physical();
        let sigma = SIGMA_SLOTS
            .iter()
            .map(|&c| {
                let (i, j) = (c / 3, c % 3);
                sp[3 * i + j]
                    .iter()
                    .zip(&sp[3 * j + i])
                    .map(|(a, b)| (T::lit(0.5) * (*a + *b)).to_f64_lossy())
                    .collect()
            })
            .collect();
        Self { dims, t: state.t, eps, u, sigma }
    }

    /// Rebuilds a state on `torus`; the vorticity is the curl of `u`.
    pub fn to_state<T: Real>(&self, torus: &Arc<Torus<T>>) -> Result<SimState<T>> {
        let dims = torus.grid().dims().map(|n| n as u32);
        if dims != self.dims {
            return Err(Error::GridMismatch { left: torus.grid().dims(), right: self.dims.map(|n| n as usize) });
        }
        let conv = |v: &Vec<f64>| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let u = Field::from_physical(torus, Rank::Vector, self.u.iter().map(conv).collect())?;
        let mut nodal = vec![Vec::new(); 9];
        for (k, &c) in SIGMA_SLOTS.iter().enumerate() {
            let (i, j) = (c / 3, c % 3);
            nodal[3 * i + j] = conv(&self.sigma[k]);
            nodal[3 * j + i] = conv(&self.sigma[k]);
        }
        let sigma = Field::from_physical(torus, Rank::Tensor, nodal)?;
        SimState::from_velocity(self.t, &u, sigma)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n: usize = self.dims.iter().map(|&d| d as usize).product();
        let mut out = Vec::with_capacity(40 + 72 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&self.eps.to_le_bytes());
        for comp in self.u.iter().chain(&self.sigma) {
            for v in comp {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |len: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + len).ok_or_else(|| Error::Format("truncated snapshot".into()))?;
            pos += len;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(Error::Format("bad magic tag".into()));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
        let f64_at = |s: &[u8]| f64::from_le_bytes(s.try_into().expect("8 bytes"));
        let version = u32_at(take(4)?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dims = [u32_at(take(4)?), u32_at(take(4)?), u32_at(take(4)?)];
        let t = f64_at(take(8)?);
        let eps = f64_at(take(8)?);
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let n = n.filter(|&n| n > 0).ok_or_else(|| Error::Format("bad grid dimensions".into()))?;
        let mut read = |count: usize| -> Result<Vec<Vec<f64>>> {
            (0..count)
                .map(|_| {
                    let raw = take(8 * n)?;
                    Ok(raw.chunks_exact(8).map(f64_at).collect())
                })
                .collect()
        };
        let u = read(3)?;
        let sigma = read(6)?;
        if pos != bytes.len() {
            return Err(Error::Format("trailing bytes after snapshot".into()));
        }
        Ok(Self { dims, t, eps, u, sigma })
    }
}

pub fn write_snapshot<T: Real>(path: &Path, state: &SimState<T>, eps: f64) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&Snapshot::from_state(state, eps).to_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Snapshot::from_bytes(&bytes)
}

/// CSV text of a diagnostic series.
pub fn csv_string(records: &[DiagnosticsRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    std::fs::write(path, csv_string(records))?;
    Ok(())
}
