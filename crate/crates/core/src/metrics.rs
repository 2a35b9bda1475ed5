//! Image quality metrics: PSNR, SSIM and a marker-based keypoint distance.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{BlendshapeRig, Camera};
use crate::img::ImageRgb;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

/// Rec.601 luma weights; fixed so SSIM values are reproducible.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Peak signal-to-noise ratio in dB over all channels; identical images
/// are capped at 100 dB.
pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::InvalidInput("psnr: image shapes differ".into()));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn luma_plane(img: &ImageRgb) -> Vec<f64> {
    img.data
        .chunks_exact(3)
        .map(|px| LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2])
        .collect()
}

/// Mean local SSIM over sliding windows with uniform weighting, computed
/// on the luma plane. Windows smaller images fall back to one full-image
/// window.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::InvalidInput("ssim: image shapes differ".into()));
    }
    let la = luma_plane(a);
    let lb = luma_plane(b);
    let (w, h) = (a.width, a.height);
    let win = SSIM_WINDOW.min(w).min(h);
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=(h - win) {
        for wx in 0..=(w - win) {
            let mut sa = 0.0;
            let mut sb = 0.0;
            let mut saa = 0.0;
            let mut sbb = 0.0;
            let mut sab = 0.0;
            for y in wy..wy + win {
                for x in wx..wx + win {
                    let (pa, pb) = (la[y * w + x], lb[y * w + x]);
                    sa += pa;
                    sb += pb;
                    saa += pa * pa;
                    sbb += pb * pb;
                    sab += pa * pb;
                }
            }
            let n = (win * win) as f64;
            let mu_a = sa / n;
            let mu_b = sb / n;
            let var_a = saa / n - mu_a * mu_a;
            let var_b = sbb / n - mu_b * mu_b;
            let cov = sab / n - mu_a * mu_b;
            let score = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
            total += score;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct AkdReport {
    /// Mean 2-D marker distance in pixels over markers visible in both.
    pub mean_px: f64,
    /// Markers excluded because they project behind a camera.
    pub excluded: usize,
    /// Mean |expected depth - analytic marker depth| at the marker pixels,
    /// when a depth map was supplied.
    pub depth_error: Option<f64>,
}

/// One side of a keypoint comparison: a rig condition seen by a camera.
pub struct MarkerContext<'a> {
    pub rig: &'a BlendshapeRig,
    pub expr: &'a [f64],
    pub camera: &'a Camera,
}

/// Keypoint-distance analog: both contexts project the rig's marker
/// vertices under their own (expression, camera); the score is the mean
/// 2-D pixel distance. `depth_map` (row-major, avatar camera size) adds an
/// expected-depth reprojection check at the avatar-side marker pixels.
pub fn akd_analog(
    avatar: &MarkerContext,
    gt: &MarkerContext,
    depth_map: Option<&[f64]>,
) -> Result<AkdReport> {
    let mesh_a = avatar.rig.instance(avatar.expr)?;
    let mesh_g = gt.rig.instance(gt.expr)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    let mut depth_sum = 0.0;
    let mut depth_n = 0usize;
    for &m in &avatar.rig.marker_vertices {
        let va = mesh_a.vertices[m as usize];
        let vg = mesh_g.vertices[m as usize];
        let (pa, pg) = (avatar.camera.project(va), gt.camera.project(vg));
        match (pa, pg) {
            (Some((ua, vpa, da)), Some((ug, vpg, _))) => {
                let dx = ua - ug;
                let dy = vpa - vpg;
                sum += (dx * dx + dy * dy).sqrt();
                used += 1;
                if let Some(depth) = depth_map {
                    let (px, py) = (ua as isize, vpa as isize);
                    let (w, h) = (avatar.camera.width as isize, avatar.camera.height as isize);
                    if px >= 0 && px < w && py >= 0 && py < h {
                        let d = depth[(py * w + px) as usize];
                        if d > 0.0 {
                            depth_sum += (d - da).abs();
                            depth_n += 1;
                        }
                    }
                }
            }
            _ => excluded += 1,
        }
    }
    if used == 0 {
        return Err(Error::InvalidInput(
            "akd: no markers visible in both contexts".into(),
        ));
    }
    Ok(AkdReport {
        mean_px: sum / used as f64,
        excluded,
        depth_error: if depth_n > 0 {
            Some(depth_sum / depth_n as f64)
        } else {
            None
        },
    })
}

/// Per-frame evaluation rows plus their means, written as CSV.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalRow {
    pub frame: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub akd_px: Option<f64>,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        self.rows.iter().map(|r| r.psnr_db).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "frame,psnr_db,ssim,akd_px").unwrap();
        for r in &self.rows {
            match r.akd_px {
                Some(akd) => writeln!(out, "{},{},{},{}", r.frame, r.psnr_db, r.ssim, akd).unwrap(),
                None => writeln!(out, "{},{},{},", r.frame, r.psnr_db, r.ssim).unwrap(),
            }
        }
        writeln!(out, "mean,{},{},", self.mean_psnr(), self.mean_ssim()).unwrap();
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}
