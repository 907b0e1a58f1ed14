use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{PhantomError, Result};

const MAGIC: &[u8; 4] = b"MMJS";
const VERSION: u16 = 1;

/// Dense 3D scalar field, row-major in (d, h, w) order. After preprocessing
/// every voxel lies in [0, 1] and each shape component is >= 8.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub shape: [usize; 3],
    pub voxels: Vec<f32>,
    pub voxel_size_mm: [f32; 3],
}

impl Volume {
    pub fn new(shape: [usize; 3], voxels: Vec<f32>, voxel_size_mm: [f32; 3]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), voxels.len());
        Volume {
            shape,
            voxels,
            voxel_size_mm,
        }
    }

    pub fn zeros(shape: [usize; 3], voxel_size_mm: [f32; 3]) -> Self {
        Volume::new(shape, vec![0.0; shape.iter().product()], voxel_size_mm)
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.voxels.len()
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[(z * self.shape[1] + y) * self.shape[2] + x]
    }

    /// Checks the preprocessed-volume invariants.
    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&s| s < 8) {
            return Err(PhantomError::Config(format!(
                "volume shape {:?} has a component below 8",
                self.shape
            )));
        }
        if self.voxels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(PhantomError::Config(
                "voxel intensity outside [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// On-disk layout: magic "MMJS", u16 version, three u32 dims (d, h, w),
/// three f32 voxel sizes (mm), then f32 little-endian voxels in (d, h, w)
/// row-major order.
pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let io_err = |e: std::io::Error| PhantomError::Io(path.display().to_string(), e);
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    for &d in &vol.shape {
        w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
    }
    for &s in &vol.voxel_size_mm {
        w.write_all(&s.to_le_bytes()).map_err(io_err)?;
    }
    // single contiguous write keeps this fast for big cohorts
    let mut bytes = Vec::with_capacity(vol.voxels.len() * 4);
    for v in &vol.voxels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let io_err = |e: std::io::Error| PhantomError::Io(path.display().to_string(), e);
    let fmt = |reason: &str| PhantomError::VolumeFormat {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let file = File::open(path).map_err(io_err)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
    if &magic != MAGIC {
        return Err(fmt("bad magic bytes"));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2).map_err(|_| fmt("truncated header"))?;
    if u16::from_le_bytes(b2) != VERSION {
        return Err(fmt("unsupported format version"));
    }
    let mut b4 = [0u8; 4];
    let mut shape = [0usize; 3];
    for s in &mut shape {
        r.read_exact(&mut b4).map_err(|_| fmt("truncated dims"))?;
        *s = u32::from_le_bytes(b4) as usize;
    }
    let mut voxel_size_mm = [0f32; 3];
    for s in &mut voxel_size_mm {
        r.read_exact(&mut b4).map_err(|_| fmt("truncated voxel sizes"))?;
        *s = f32::from_le_bytes(b4);
    }
    let numel: usize = shape.iter().product();
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(io_err)?;
    if payload.len() != numel * 4 {
        return Err(fmt(&format!(
            "payload length {} does not match dims (expected {})",
            payload.len(),
            numel * 4
        )));
    }
    let voxels = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Volume {
        shape,
        voxels,
        voxel_size_mm,
    })
}

/// Trilinear resample to `target_shape`, then min-max normalization to [0, 1].
/// A constant-intensity input maps to all zeros.
pub fn preprocess_volume(raw: &Volume, target_shape: [usize; 3]) -> Result<Volume> {
    if target_shape.iter().any(|&s| s < 8) {
        return Err(PhantomError::Config(format!(
            "target shape {target_shape:?} below the 8-voxel minimum"
        )));
    }
    if raw.numel() == 0 {
        return Err(PhantomError::Config("empty input volume".into()));
    }
    let [sd, sh, sw] = raw.shape;
    let [td, th, tw] = target_shape;
    let mut out = vec![0f32; td * th * tw];
    let scale = [
        sd as f64 / td as f64,
        sh as f64 / th as f64,
        sw as f64 / tw as f64,
    ];
    let sample = |z: usize, y: usize, x: usize| raw.voxels[(z * sh + y) * sw + x] as f64;
    let mut idx = 0usize;
    for oz in 0..td {
        let fz = ((oz as f64 + 0.5) * scale[0] - 0.5).clamp(0.0, (sd - 1) as f64);
        let z0 = fz.floor() as usize;
        let z1 = (z0 + 1).min(sd - 1);
        let tz = fz - z0 as f64;
        for oy in 0..th {
            let fy = ((oy as f64 + 0.5) * scale[1] - 0.5).clamp(0.0, (sh - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(sh - 1);
            let ty = fy - y0 as f64;
            for ox in 0..tw {
                let fx = ((ox as f64 + 0.5) * scale[2] - 0.5).clamp(0.0, (sw - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(sw - 1);
                let tx = fx - x0 as f64;
                let c00 = sample(z0, y0, x0) * (1.0 - tx) + sample(z0, y0, x1) * tx;
                let c01 = sample(z0, y1, x0) * (1.0 - tx) + sample(z0, y1, x1) * tx;
                let c10 = sample(z1, y0, x0) * (1.0 - tx) + sample(z1, y0, x1) * tx;
                let c11 = sample(z1, y1, x0) * (1.0 - tx) + sample(z1, y1, x1) * tx;
                let c0 = c00 * (1.0 - ty) + c01 * ty;
                let c1 = c10 * (1.0 - ty) + c11 * ty;
                out[idx] = (c0 * (1.0 - tz) + c1 * tz) as f32;
                idx += 1;
            }
        }
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in &out {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi > lo {
        let inv = 1.0 / (hi - lo);
        for v in &mut out {
            *v = ((*v - lo) * inv).clamp(0.0, 1.0);
        }
    } else {
        out.fill(0.0);
    }
    let voxel_size_mm = [
        raw.voxel_size_mm[0] * (sd as f32 / td as f32),
        raw.voxel_size_mm[1] * (sh as f32 / th as f32),
        raw.voxel_size_mm[2] * (sw as f32 / tw as f32),
    ];
    Ok(Volume::new(target_shape, out, voxel_size_mm))
}
