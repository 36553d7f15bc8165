//! Binary snapshot records.
//!
//! One record is `b"SPDE"`, version byte `1`, `u8` dimension, `u32` points per
//! axis, `f64` period length, `f64` time, then `Nⁿ` values as `f64`; all
//! little-endian, node order row-major with axis 0 slowest. A trajectory file
//! is a plain concatenation of records.

use std::io::{self, Read, Write};

use crate::error::{Result, SpdeError};
use crate::grid::{Field, Grid};
use crate::scalar::Real;
use crate::trajectory::Trajectory;

pub const MAGIC: [u8; 4] = *b"SPDE";
pub const VERSION: u8 = 1;

pub fn write_snapshot<W: Write, T: Real>(w: &mut W, field: &Field<T>, t: f64) -> io::Result<()> {
    let g = field.grid();
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, g.dim() as u8])?;
    w.write_all(&(g.points() as u32).to_le_bytes())?;
    w.write_all(&g.length().to_le_bytes())?;
    w.write_all(&t.to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * g.len());
    for v in field.values() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    w.write_all(&buf)
}

/// Reads one record; `Ok(None)` on a clean end of stream.
pub fn read_snapshot<R: Read, T: Real>(r: &mut R) -> Result<Option<(Field<T>, f64)>> {
    let mut head = [0u8; 4];
    match read_full_or_eof(r, &mut head)? {
        false => return Ok(None),
        true if head != MAGIC => return Err(SpdeError::Format(format!("bad magic {head:?}"))),
        true => {}
    }
    let mut rest = [0u8; 2 + 4 + 8 + 8];
    r.read_exact(&mut rest)?;
    if rest[0] != VERSION {
        return Err(SpdeError::Format(format!("unsupported version {}", rest[0])));
    }
    let dim = rest[1] as usize;
    let points = u32::from_le_bytes(rest[2..6].try_into().unwrap()) as usize;
    let length = f64::from_le_bytes(rest[6..14].try_into().unwrap());
    let t = f64::from_le_bytes(rest[14..22].try_into().unwrap());
    let grid = Grid::new(dim, length, points).map_err(|e| SpdeError::Format(e.to_string()))?;
    let mut raw = vec![0u8; 8 * grid.len()];
    r.read_exact(&mut raw)?;
    let values = raw.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap()))).collect();
    Ok(Some((Field::new(grid, values)?, t)))
}

fn read_full_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) if got == 0 => return Ok(false),
            Ok(0) => return Err(SpdeError::Format("truncated record header".into())),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

/// Writes every `stride`-th snapshot (always including the first).
pub fn write_trajectory<W: Write, T: Real>(w: &mut W, traj: &Trajectory<T>, stride: usize) -> io::Result<()> {
    let stride = stride.max(1);
    for m in (0..traj.len()).step_by(stride) {
        write_snapshot(w, traj.snapshot(m), traj.time(m))?;
    }
    Ok(())
}

/// Reads a concatenation of records taken on a uniform time grid.
pub fn read_trajectory<R: Read, T: Real>(r: &mut R) -> Result<Trajectory<T>> {
    let mut fields = Vec::new();
    let mut times = Vec::new();
    while let Some((f, t)) = read_snapshot::<R, T>(r)? {
        fields.push(f);
        times.push(t);
    }
    let Some(first) = fields.first() else {
        return Err(SpdeError::Format("no snapshot records".into()));
    };
    let grid = *first.grid();
    let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
    for (m, &t) in times.iter().enumerate() {
        let expect = times[0] + m as f64 * dt;
        if (t - expect).abs() > 1e-9 * dt.max(1.0) {
            return Err(SpdeError::Format(format!("record {m} at t = {t} is off the uniform grid")));
        }
    }
    Trajectory::new(grid, times[0], dt, fields)
}
