use jointsynth_nn::Rng;
use jointsynth_tabular::MixedRecord;

use crate::volume::Volume;
use crate::{PhantomError, Result};

pub const BACKGROUND: f32 = 0.05;
pub const LEAN: f32 = 0.55;
pub const FAT: f32 = 0.90;

/// Intensity threshold that separates body from background in measurements.
pub const BODY_THRESHOLD: f32 = 0.3;
/// Intensity threshold that isolates the fat shell.
pub const FAT_THRESHOLD: f32 = 0.75;

/// Derived voxel geometry for one subject on a (d, h, w) grid.
///
/// The body (torso cylinder plus the head sphere stacked on top of it) has a
/// total axial extent of `body_extent` voxels and is centered on the axial
/// midline, so the extent measured by thresholding matches `body_extent`
/// within rasterization error for every valid attribute combination.
#[derive(Clone, Copy, Debug)]
pub struct PhantomGeometry {
    /// Total axial body extent L (torso + head).
    pub body_extent: usize,
    /// Head sphere radius.
    pub head_radius: usize,
    /// Torso cross-section semi-axis along h.
    pub torso_semi_h: usize,
    /// Torso cross-section semi-axis along w (sex-scaled, fractional).
    pub torso_semi_w: f64,
    /// Fat shell thickness in voxels.
    pub fat_thickness: usize,
}

impl PhantomGeometry {
    pub fn derive(record: &MixedRecord, shape: [usize; 3]) -> Result<Self> {
        let [d, h, w] = shape;
        let height = record.numeric("height_cm");
        let bmi = record.numeric("bmi");
        let body_fat = record.numeric("body_fat_pct");
        let male = record.categorical("sex") == "male";

        let body_extent = (d as f64 * (0.35 + 0.45 * (height - 145.0) / 65.0)).round() as isize;
        let head_radius = (0.08 * d as f64).round() as isize;
        let torso_semi_h = (h as f64 * (0.12 + 0.10 * (bmi - 16.0) / 29.0)).round() as isize;
        let sex_scale = if male { 1.15 } else { 0.95 };
        let torso_semi_w = torso_semi_h as f64 * sex_scale;
        let fat_thickness =
            ((torso_semi_h as f64 * 0.5 * body_fat / 60.0).round() as isize).max(1);

        if body_extent > d as isize {
            return Err(PhantomError::Geometry(format!(
                "axial body extent {body_extent} exceeds depth {d}"
            )));
        }
        if body_extent < 2 * head_radius + 2 {
            return Err(PhantomError::Geometry(format!(
                "axial body extent {body_extent} cannot hold a head of radius {head_radius}"
            )));
        }
        if torso_semi_h < 2 || torso_semi_h as usize >= h / 2 {
            return Err(PhantomError::Geometry(format!(
                "torso semi-axis {torso_semi_h} does not fit height extent {h}"
            )));
        }
        if torso_semi_w >= (w / 2) as f64 {
            return Err(PhantomError::Geometry(format!(
                "torso semi-axis {torso_semi_w:.1} does not fit width extent {w}"
            )));
        }
        Ok(PhantomGeometry {
            body_extent: body_extent as usize,
            head_radius: head_radius as usize,
            torso_semi_h: torso_semi_h as usize,
            torso_semi_w,
            fat_thickness: fat_thickness as usize,
        })
    }
}

/// Renders one phantom. Deterministic given (record, rng state); with
/// noise_sigma = 0 the voxel set is exactly {BACKGROUND, LEAN, FAT}.
pub fn render_phantom_volume(
    record: &MixedRecord,
    shape: [usize; 3],
    noise_sigma: f64,
    rng: &mut Rng,
) -> Result<Volume> {
    let geo = PhantomGeometry::derive(record, shape)?;
    let [d, h, w] = shape;
    let (cz, cy, cx) = (d as f64 / 2.0, h as f64 / 2.0, w as f64 / 2.0);

    let body_top = cz + geo.body_extent as f64 / 2.0;
    let body_bottom = cz - geo.body_extent as f64 / 2.0;
    let torso_top = body_top - 2.0 * geo.head_radius as f64;
    let head_center_z = body_top - geo.head_radius as f64;
    let r_head = geo.head_radius as f64;
    let (r_h, r_w) = (geo.torso_semi_h as f64, geo.torso_semi_w);
    let (r_h_in, r_w_in) = (r_h - geo.fat_thickness as f64, r_w - geo.fat_thickness as f64);

    let mut voxels = vec![BACKGROUND; d * h * w];
    let mut idx = 0usize;
    for iz in 0..d {
        let z = iz as f64 + 0.5;
        let in_torso_z = z >= body_bottom && z <= torso_top;
        let dz_head = z - head_center_z;
        for iy in 0..h {
            let dy = iy as f64 + 0.5 - cy;
            for ix in 0..w {
                let dx = ix as f64 + 0.5 - cx;
                if in_torso_z {
                    let e_out = (dy / r_h) * (dy / r_h) + (dx / r_w) * (dx / r_w);
                    if e_out <= 1.0 {
                        let e_in =
                            (dy / r_h_in) * (dy / r_h_in) + (dx / r_w_in) * (dx / r_w_in);
                        voxels[idx] = if e_in <= 1.0 { LEAN } else { FAT };
                    }
                } else if dz_head * dz_head + dy * dy + dx * dx <= r_head * r_head {
                    voxels[idx] = LEAN;
                }
                idx += 1;
            }
        }
    }
    if noise_sigma > 0.0 {
        for v in &mut voxels {
            *v = (*v + (rng.normal() * noise_sigma) as f32).clamp(0.0, 1.0);
        }
    }
    let voxel_size_mm = [
        1800.0 / d as f32,
        600.0 / h as f32,
        600.0 / w as f32,
    ];
    Ok(Volume::new(shape, voxels, voxel_size_mm))
}

/// Number of axial slices containing any voxel above the body threshold.
pub fn axial_extent(vol: &Volume) -> usize {
    let [d, h, w] = vol.shape;
    (0..d)
        .filter(|&iz| {
            vol.voxels[iz * h * w..(iz + 1) * h * w]
                .iter()
                .any(|&v| v > BODY_THRESHOLD)
        })
        .count()
}

/// Fraction of body voxels (above the body threshold) that belong to the fat
/// shell (above the fat threshold). Returns 0 for an empty body.
pub fn fat_fraction(vol: &Volume) -> f64 {
    let mut body = 0usize;
    let mut fat = 0usize;
    for &v in &vol.voxels {
        if v > BODY_THRESHOLD {
            body += 1;
            if v > FAT_THRESHOLD {
                fat += 1;
            }
        }
    }
    if body == 0 {
        0.0
    } else {
        fat as f64 / body as f64
    }
}
