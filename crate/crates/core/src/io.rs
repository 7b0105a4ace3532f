//! On-disk artifact formats: a compact binary trajectory dump, decimal CSV
//! exports, and atomic JSON writing.
//!
//! Binary layout (little-endian):
//!
//! ```text
//!   bytes 0..4    magic "PTRJ"
//!   bytes 4..8    format version (u32), currently 1
//!   byte  8       role: 0 state, 1 adjoint, 2 control
//!   bytes 9..12   reserved (zero)
//!   bytes 12..20  n_time (u64)
//!   bytes 20..28  n_space (u64)
//!   bytes 28..36  dt (f64)
//!   bytes 36..    row-major f64 data, n_time * n_space values
//! ```
//!
//! CSV exports are long-format (`t,index,value`, or `t,ix,iy,value` for 2D
//! node fields) with 17 significant digits, so the decimal path round-trips
//! f64 exactly. All writes go through a temp file and a rename.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::discretize::{Mesh, Role, Trajectory};

const MAGIC: &[u8; 4] = b"PTRJ";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type IoResult<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Write bytes to `path` atomically (temp file in the same directory, then
/// rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> IoResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(path))?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("dat")
    ));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| format_err(path, format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> IoResult<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| format_err(path, e.to_string()))
}

fn role_tag(role: Role) -> u8 {
    match role {
        Role::State => 0,
        Role::Adjoint => 1,
        Role::Control => 2,
    }
}

fn role_from_tag(tag: u8, path: &Path) -> IoResult<Role> {
    match tag {
        0 => Ok(Role::State),
        1 => Ok(Role::Adjoint),
        2 => Ok(Role::Control),
        other => Err(format_err(path, format!("unknown role tag {other}"))),
    }
}

/// Serialize a trajectory to the binary layout.
pub fn trajectory_to_bytes(traj: &Trajectory, dt: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(36 + 8 * traj.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(role_tag(traj.role));
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&(traj.n_time as u64).to_le_bytes());
    out.extend_from_slice(&(traj.n_space as u64).to_le_bytes());
    out.extend_from_slice(&dt.to_le_bytes());
    for v in &traj.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_trajectory_binary(path: &Path, traj: &Trajectory, dt: f64) -> IoResult<()> {
    write_atomic(path, &trajectory_to_bytes(traj, dt))
}

pub fn read_trajectory_binary(path: &Path) -> IoResult<(Trajectory, f64)> {
    let mut file = fs::File::open(path).map_err(io_err(path))?;
    let mut header = [0u8; 36];
    file.read_exact(&mut header)
        .map_err(|_| format_err(path, "truncated header"))?;
    if &header[0..4] != MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let role = role_from_tag(header[8], path)?;
    let n_time = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let n_space = u64::from_le_bytes(header[20..28].try_into().unwrap()) as usize;
    let dt = f64::from_le_bytes(header[28..36].try_into().unwrap());
    let expected = n_time
        .checked_mul(n_space)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| format_err(path, "dimension overflow"))?;
    let mut data_bytes = Vec::new();
    file.read_to_end(&mut data_bytes).map_err(io_err(path))?;
    if data_bytes.len() != expected {
        return Err(format_err(
            path,
            format!("payload is {} bytes, expected {expected}", data_bytes.len()),
        ));
    }
    let data: Vec<f64> = data_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(format_err(path, "non-finite value in payload"));
    }
    Ok((
        Trajectory {
            role,
            n_time,
            n_space,
            data,
        },
        dt,
    ))
}

fn fmt_f64(v: f64) -> String {
    // 17 significant digits: enough for an exact f64 round trip
    format!("{v:.16e}")
}

/// Node time of a trajectory row: states/adjoints start at t = 0, controls
/// are indexed by the right endpoint of their interval.
fn row_time(traj: &Trajectory, k: usize, dt: f64) -> f64 {
    match traj.role {
        Role::Control => (k + 1) as f64 * dt,
        _ => k as f64 * dt,
    }
}

/// Long-format CSV. 2D node fields (state/adjoint on a 2D mesh) use
/// `t,ix,iy,value`; everything else uses `t,index,value`.
pub fn write_trajectory_csv(
    path: &Path,
    traj: &Trajectory,
    dt: f64,
    mesh: Option<&Mesh>,
) -> IoResult<()> {
    let two_d = mesh.is_some_and(|m| m.dim == 2 && m.n_nodes() == traj.n_space);
    let mut out = String::new();
    if two_d {
        out.push_str("t,ix,iy,value\n");
        let mesh = mesh.unwrap();
        for k in 0..traj.n_time {
            let t = row_time(traj, k, dt);
            for (i, v) in traj.row(k).iter().enumerate() {
                let (ix, iy) = mesh.node_multi_index(i);
                out.push_str(&format!("{},{ix},{iy},{}\n", fmt_f64(t), fmt_f64(*v)));
            }
        }
    } else {
        out.push_str("t,index,value\n");
        for k in 0..traj.n_time {
            let t = row_time(traj, k, dt);
            for (i, v) in traj.row(k).iter().enumerate() {
                out.push_str(&format!("{},{i},{}\n", fmt_f64(t), fmt_f64(*v)));
            }
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Parse a long-format trajectory CSV written by
/// [`write_trajectory_csv`]. The role is supplied by the caller (the CSV
/// itself is role-agnostic).
pub fn read_trajectory_csv(path: &Path, role: Role) -> IoResult<(Trajectory, f64)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_err(path, "empty file"))?;
    let two_d = header.trim() == "t,ix,iy,value";
    if !two_d && header.trim() != "t,index,value" {
        return Err(format_err(path, format!("unknown header `{header}`")));
    }

    let mut times: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut max_ix = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expect = if two_d { 4 } else { 3 };
        if fields.len() != expect {
            return Err(format_err(
                path,
                format!("line {}: expected {expect} fields", lineno + 2),
            ));
        }
        let parse = |s: &str| -> IoResult<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| format_err(path, format!("line {}: bad number `{s}`", lineno + 2)))
        };
        let t = parse(fields[0])?;
        let value = parse(fields[expect - 1])?;
        // a new time block starts whenever t changes (rows are written
        // grouped by time with exact decimal formatting)
        if times.last() != Some(&t) {
            times.push(t);
            rows.push(Vec::new());
        }
        if two_d {
            let ix = fields[1].trim().parse::<usize>().map_err(|_| {
                format_err(path, format!("line {}: bad index", lineno + 2))
            })?;
            max_ix = max_ix.max(ix);
        }
        rows.last_mut().unwrap().push(value);
    }
    if rows.is_empty() {
        return Err(format_err(path, "no data rows"));
    }
    let n_space = rows[0].len();
    if rows.iter().any(|r| r.len() != n_space) {
        return Err(format_err(path, "ragged time blocks"));
    }
    let n_time = rows.len();
    let dt = if n_time > 1 {
        let d = times[1] - times[0];
        if d <= 0.0 {
            return Err(format_err(path, "times are not increasing"));
        }
        d
    } else if matches!(role, Role::Control) && times[0] > 0.0 {
        times[0]
    } else {
        return Err(format_err(path, "cannot infer dt from a single row"));
    };
    Ok((
        Trajectory {
            role,
            n_time,
            n_space,
            data: rows.into_iter().flatten().collect(),
        },
        dt,
    ))
}

/// Iteration log as CSV (`iter,objective,residual,tau`).
pub fn write_iteration_log_csv(path: &Path, log: &[crate::optimize::IterRecord]) -> IoResult<()> {
    let mut out = String::from("iter,objective,residual,tau\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.iter,
            fmt_f64(r.objective),
            fmt_f64(r.residual),
            fmt_f64(r.tau)
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Monitor sequences as CSV (`monitor,step,value`).
pub fn write_monitors_csv(path: &Path, summary: &crate::horizon::MonitorSummary) -> IoResult<()> {
    let mut out = String::from("monitor,step,value\n");
    for item in &summary.items {
        for (i, v) in item.values.iter().enumerate() {
            out.push_str(&format!("{},{i},{}\n", item.name, fmt_f64(*v)));
        }
    }
    write_atomic(path, out.as_bytes())
}
