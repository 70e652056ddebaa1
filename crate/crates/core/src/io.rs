//! On-disk formats: little-endian binary arrays, k-space containers, CSV and 16-bit PGM.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use num_complex::Complex64;
use thiserror::Error;

use crate::radial::{KSpaceData, Trajectory};

const VOLUME_MAGIC: &[u8; 8] = b"CVOL0001";
const KSPACE_MAGIC: &[u8; 8] = b"CKSP0001";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bad file format: {0}")]
    Format(String),
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 8]) -> Result<(), IoError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(IoError::Format(format!("expected magic {:?}", String::from_utf8_lossy(magic))));
    }
    Ok(())
}

fn checked_len(dims: &[u64]) -> Result<usize, IoError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(usize::try_from(d).ok()?))
        .filter(|&n| n <= 1 << 34)
        .ok_or_else(|| IoError::Format(format!("implausible dimensions {dims:?}")))
}

pub fn write_volume_to(w: &mut impl Write, volume: &ArrayView3<f64>) -> Result<(), IoError> {
    w.write_all(VOLUME_MAGIC)?;
    let (a, b, c) = volume.dim();
    for d in [a, b, c] {
        put_u64(w, d as u64)?;
    }
    for &v in volume.iter() {
        put_f64(w, v)?;
    }
    Ok(())
}

pub fn read_volume_from(r: &mut impl Read) -> Result<Array3<f64>, IoError> {
    expect_magic(r, VOLUME_MAGIC)?;
    let dims = [get_u64(r)?, get_u64(r)?, get_u64(r)?];
    let n = checked_len(&dims)?;
    let data = (0..n).map(|_| get_f64(r)).collect::<std::io::Result<Vec<_>>>()?;
    Array3::from_shape_vec((dims[0] as usize, dims[1] as usize, dims[2] as usize), data)
        .map_err(|e| IoError::Format(e.to_string()))
}

/// Writes a 3D array (volume or sample stack) in logical `[a, b, c]` order.
pub fn write_volume(path: &Path, volume: &ArrayView3<f64>) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_volume_to(&mut w, volume)?;
    w.flush()?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Array3<f64>, IoError> {
    read_volume_from(&mut BufReader::new(File::open(path)?))
}

pub fn write_kspace(path: &Path, k: &KSpaceData) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    let t = &k.trajectory;
    w.write_all(KSPACE_MAGIC)?;
    put_u64(&mut w, t.n_spokes() as u64)?;
    put_u64(&mut w, t.samples_per_spoke as u64)?;
    put_u64(&mut w, t.n_phases as u64)?;
    put_f64(&mut w, t.k_max)?;
    for (&angle, &phase) in t.spoke_angles.iter().zip(&t.phase_of_spoke) {
        put_f64(&mut w, angle)?;
        put_u64(&mut w, phase as u64)?;
    }
    for v in k.values.iter() {
        put_f64(&mut w, v.re)?;
        put_f64(&mut w, v.im)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_kspace(path: &Path) -> Result<KSpaceData, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, KSPACE_MAGIC)?;
    let n_spokes = get_u64(&mut r)?;
    let samples = get_u64(&mut r)?;
    let n_phases = get_u64(&mut r)? as usize;
    let k_max = get_f64(&mut r)?;
    let n = checked_len(&[n_spokes, samples])?;
    let (n_spokes, samples) = (n_spokes as usize, samples as usize);
    let mut spoke_angles = Vec::with_capacity(n_spokes);
    let mut phase_of_spoke = Vec::with_capacity(n_spokes);
    for _ in 0..n_spokes {
        spoke_angles.push(get_f64(&mut r)?);
        phase_of_spoke.push(get_u64(&mut r)? as usize);
    }
    let values = (0..n)
        .map(|_| Ok(Complex64::new(get_f64(&mut r)?, get_f64(&mut r)?)))
        .collect::<std::io::Result<Vec<_>>>()?;
    let trajectory = Trajectory { spoke_angles, samples_per_spoke: samples, k_max, phase_of_spoke, n_phases };
    let values = Array2::from_shape_vec((n_spokes, samples), values).map_err(|e| IoError::Format(e.to_string()))?;
    KSpaceData::new(trajectory, values).map_err(|e| IoError::Format(e.to_string()))
}

/// One row per spoke: index, angle in radians, cardiac phase.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), IoError> {
    let rows = traj
        .spoke_angles
        .iter()
        .zip(&traj.phase_of_spoke)
        .enumerate()
        .map(|(j, (a, p))| vec![j.to_string(), format!("{a:.17e}"), p.to_string()]);
    write_csv(path, &["spoke", "angle", "phase"], rows)
}

pub fn write_csv<I, R, S>(path: &Path, header: &[&str], rows: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV file into its header and string records.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), IoError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

/// Binary 16-bit PGM of an `[x, y]` image (x across, y down), mapping
/// `range` (default: the image min..max) linearly onto 0..=65535.
pub fn write_pgm16(path: &Path, image: &ArrayView2<f64>, range: Option<(f64, f64)>) -> Result<(), IoError> {
    let (nx, ny) = image.dim();
    let (lo, hi) = range.unwrap_or_else(|| {
        image.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{nx} {ny}\n65535\n")?;
    for y in 0..ny {
        for x in 0..nx {
            let v = ((image[[x, y]] - lo) / span).clamp(0.0, 1.0);
            w.write_all(&((v * 65535.0).round() as u16).to_be_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_pgm16(path: &Path) -> Result<Array2<u16>, IoError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = || IoError::Format("malformed 16-bit PGM".into());
    // header: four whitespace-separated tokens, then one whitespace byte
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad());
    if fields[0] != "P5" || parse(&fields[3])? != 65535 {
        return Err(bad());
    }
    let (nx, ny) = (parse(&fields[1])?, parse(&fields[2])?);
    let body = bytes.get(pos..pos + 2 * nx * ny).ok_or_else(bad)?;
    Ok(Array2::from_shape_fn((nx, ny), |(x, y)| {
        let i = 2 * (y * nx + x);
        u16::from_be_bytes([body[i], body[i + 1]])
    }))
}
