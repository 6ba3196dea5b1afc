//! Binary caches and CSV mirrors.
//!
//! Orbit cache (`ORB1`), little-endian:
//!
//! ```text
//! "ORB1" | d: u32 | m: u64 | tol: f64 | m × { t: f64, x: d × f64, speed: f64 }
//! ```
//!
//! Cocycle cache (`PCC1`), one record per step, the matrix row-major:
//!
//! ```text
//! "PCC1" | n: u32 | m: u64 | tol: f64 | m × { t: f64, dt: f64, speed: f64, A: n² × f64 }
//! ```
//!
//! `t` and `speed` refer to the step's starting sample.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cocycle::CocycleChain;
use crate::flow::{OrbitSegment, SharedSystem};
use crate::measures::DiscreteMeasure;

pub const ORBIT_MAGIC: &[u8; 4] = b"ORB1";
pub const CHAIN_MAGIC: &[u8; 4] = b"PCC1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic { path: String, found: [u8; 4], expected: [u8; 4] },
    #[error("{path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("csv {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.display().to_string(), source }
}

struct Header {
    dim: u32,
    count: u64,
    tol: f64,
}

fn write_header(w: &mut impl Write, magic: &[u8; 4], h: &Header) -> std::io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&h.dim.to_le_bytes())?;
    w.write_all(&h.count.to_le_bytes())?;
    w.write_all(&h.tol.to_le_bytes())
}

fn write_f64s(w: &mut impl Write, values: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    Ok(f64::from_le_bytes(read_array::<8>(r)?))
}

fn read_header(r: &mut impl Read, magic: &[u8; 4], path: &Path) -> Result<Header, IoError> {
    let found = read_array::<4>(r).map_err(io_err(path))?;
    if &found != magic {
        return Err(IoError::BadMagic { path: path.display().to_string(), found, expected: *magic });
    }
    let dim = u32::from_le_bytes(read_array::<4>(r).map_err(io_err(path))?);
    let count = u64::from_le_bytes(read_array::<8>(r).map_err(io_err(path))?);
    let tol = read_f64(r).map_err(io_err(path))?;
    Ok(Header { dim, count, tol })
}

/// Checks that the payload after the header has exactly the declared size.
fn check_payload(path: &Path, header_len: u64, record_len: u64, count: u64) -> Result<(), IoError> {
    let len = std::fs::metadata(path).map_err(io_err(path))?.len();
    let expected = count.checked_mul(record_len).and_then(|p| p.checked_add(header_len));
    if expected != Some(len) {
        return Err(IoError::Malformed {
            path: path.display().to_string(),
            reason: format!("file has {len} bytes, header declares {count} records of {record_len} bytes"),
        });
    }
    Ok(())
}

const HEADER_LEN: u64 = 4 + 4 + 8 + 8;

pub fn write_orbit_cache(path: &Path, segment: &OrbitSegment) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let d = segment.states.first().map_or(0, |x| x.len());
    let header = Header { dim: d as u32, count: segment.len() as u64, tol: segment.tol };
    (|| {
        write_header(&mut w, ORBIT_MAGIC, &header)?;
        for k in 0..segment.len() {
            write_f64s(&mut w, std::iter::once(segment.times[k]))?;
            write_f64s(&mut w, segment.states[k].iter().copied())?;
            write_f64s(&mut w, std::iter::once(segment.speeds[k]))?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Reads an orbit cache written for `system`; the stored speeds are kept.
pub fn read_orbit_cache(path: &Path, system: SharedSystem) -> Result<OrbitSegment, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let h = read_header(&mut r, ORBIT_MAGIC, path)?;
    if h.dim as usize != system.dim() {
        return Err(IoError::Malformed {
            path: path.display().to_string(),
            reason: format!("cache dimension {} does not match system {} of dimension {}", h.dim, system.name(), system.dim()),
        });
    }
    check_payload(path, HEADER_LEN, 8 * (h.dim as u64 + 2), h.count)?;
    let m = h.count as usize;
    let d = h.dim as usize;
    let mut times = Vec::with_capacity(m);
    let mut states = Vec::with_capacity(m);
    let mut speeds = Vec::with_capacity(m);
    for _ in 0..m {
        times.push(read_f64(&mut r).map_err(io_err(path))?);
        let x: Result<Vec<f64>, _> = (0..d).map(|_| read_f64(&mut r)).collect();
        states.push(DVector::from_vec(x.map_err(io_err(path))?));
        speeds.push(read_f64(&mut r).map_err(io_err(path))?);
    }
    Ok(OrbitSegment { times, states, speeds, system, tol: h.tol })
}

/// CSV mirror of the orbit cache: t, x_1..x_d, speed.
pub fn write_orbit_csv(path: &Path, segment: &OrbitSegment) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let d = segment.states.first().map_or(0, |x| x.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|j| format!("x_{j}")));
    header.push("speed".into());
    w.write_record(&header).map_err(csv_err(path))?;
    for k in 0..segment.len() {
        let mut row = vec![segment.times[k].to_string()];
        row.extend(segment.states[k].iter().map(|v| v.to_string()));
        row.push(segment.speeds[k].to_string());
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// One step of a cocycle cache.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub t: f64,
    pub dt: f64,
    pub speed: f64,
    pub step: DMatrix<f64>,
}

pub fn write_chain_cache(path: &Path, chain: &CocycleChain, tol: f64) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let n = chain.steps.first().map_or(0, |a| a.nrows());
    let header = Header { dim: n as u32, count: chain.len() as u64, tol };
    (|| {
        write_header(&mut w, CHAIN_MAGIC, &header)?;
        for (i, a) in chain.steps.iter().enumerate() {
            write_f64s(&mut w, [chain.times[i], chain.dts[i], chain.speeds[i]])?;
            write_f64s(&mut w, a.transpose().iter().copied())?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Reads a cocycle cache; returns the tolerance and the step records.
pub fn read_chain_cache(path: &Path) -> Result<(f64, Vec<ChainRecord>), IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let h = read_header(&mut r, CHAIN_MAGIC, path)?;
    let n = h.dim as usize;
    check_payload(path, HEADER_LEN, 8 * (3 + (n * n) as u64), h.count)?;
    let mut out = Vec::with_capacity(h.count as usize);
    for _ in 0..h.count {
        let vals: Result<Vec<f64>, _> = (0..3 + n * n).map(|_| read_f64(&mut r)).collect();
        let vals = vals.map_err(io_err(path))?;
        out.push(ChainRecord { t: vals[0], dt: vals[1], speed: vals[2], step: DMatrix::from_row_slice(n, n, &vals[3..]) });
    }
    Ok((h.tol, out))
}

/// Chain export: i, t_i, dt, speed, log_norm, log_mininorm.
pub fn write_chain_csv(path: &Path, chain: &CocycleChain) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["i", "t_i", "dt", "speed", "log_norm", "log_mininorm"]).map_err(csv_err(path))?;
    for i in 0..chain.len() {
        w.write_record([
            i.to_string(),
            chain.times[i].to_string(),
            chain.dts[i].to_string(),
            chain.speeds[i].to_string(),
            chain.log_norms[i].to_string(),
            chain.log_mininorms[i].to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Measure export: weight, x_1..x_d.
pub fn write_measure_csv(path: &Path, mu: &DiscreteMeasure) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let d = mu.points().first().map_or(0, |x| x.len());
    let mut header = vec!["weight".to_string()];
    header.extend((1..=d).map(|j| format!("x_{j}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for (x, wt) in mu.points().iter().zip(mu.weights()) {
        let mut row = vec![wt.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
