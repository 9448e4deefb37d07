//! Image fidelity (PSNR, SSIM) and camera pose error metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Extrinsic, Mat3};
use crate::render::Image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("image shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    TooSmall { width: usize, height: usize, window: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(MetricsError::ShapeMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.data.len() as f64)
}

/// PSNR for unit dynamic range; infinite when the error is zero.
pub fn mse_to_psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(mse_to_psnr(mse(a, b)?))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn luma(img: &Image) -> Vec<f64> {
    img.data
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - half;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

/// Mean SSIM of the luma channels over all fully covered window positions.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::TooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let (la, lb) = (luma(a), luma(b));
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for r in 0..oh {
        for c in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let wt = g[i] * g[j];
                    let k = (r + i) * w + c + j;
                    let (x, y) = (la[k], lb[k]);
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (ow * oh) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub rot_deg: f64,
    pub trans_rel: f64,
}

/// Angle of the relative rotation `R_est^T R_gt`, in degrees.
pub fn rotation_error_deg(est: &Mat3, gt: &Mat3) -> f64 {
    let r = est.transpose() * gt;
    let cos2 = r.trace() - 1.0;
    let sin2 = nalgebra::Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    sin2.atan2(cos2).to_degrees()
}

/// Geodesic rotation error and relative camera-center distance.
pub fn pose_error(est: &Extrinsic, gt: &Extrinsic) -> PoseError {
    PoseError {
        rot_deg: rotation_error_deg(&est.rotation, &gt.rotation),
        trans_rel: (est.center - gt.center).norm() / gt.center.norm(),
    }
}

pub const OUTLIER_ROT_DEG: f64 = 5.0;
pub const OUTLIER_TRANS_REL: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub inliers: Vec<usize>,
    pub outliers: Vec<usize>,
    pub frac_rot_below_5: f64,
    pub frac_rot_below_10: f64,
    pub frac_trans_below_3: f64,
    pub frac_trans_below_5: f64,
}

impl OutlierReport {
    pub fn inlier_fraction(&self) -> f64 {
        let n = self.inliers.len() + self.outliers.len();
        if n == 0 {
            1.0
        } else {
            self.inliers.len() as f64 / n as f64
        }
    }
}

/// Outlier when rotation error exceeds 5 degrees or relative translation
/// error exceeds 3%.
pub fn outlier_filter(errors: &[PoseError]) -> OutlierReport {
    let (inliers, outliers): (Vec<usize>, Vec<usize>) = (0..errors.len())
        .partition(|&i| errors[i].rot_deg <= OUTLIER_ROT_DEG && errors[i].trans_rel <= OUTLIER_TRANS_REL);
    let frac = |f: &dyn Fn(&PoseError) -> bool| {
        if errors.is_empty() {
            1.0
        } else {
            errors.iter().filter(|e| f(e)).count() as f64 / errors.len() as f64
        }
    };
    OutlierReport {
        inliers,
        outliers,
        frac_rot_below_5: frac(&|e| e.rot_deg < 5.0),
        frac_rot_below_10: frac(&|e| e.rot_deg < 10.0),
        frac_trans_below_3: frac(&|e| e.trans_rel < 0.03),
        frac_trans_below_5: frac(&|e| e.trans_rel < 0.05),
    }
}

/// Metrics of one evaluated view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub object: String,
    pub view: usize,
    pub psnr: f64,
    pub ssim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_summary: Option<OutlierReport>,
}

impl EvalReport {
    pub fn new(views: Vec<ViewMetrics>) -> Self {
        let n = views.len().max(1) as f64;
        let mean_psnr = views.iter().map(|v| v.psnr).sum::<f64>() / n;
        let ssims: Option<Vec<f64>> = views.iter().map(|v| v.ssim).collect();
        let mean_ssim = ssims
            .filter(|s| !s.is_empty())
            .map(|s| s.iter().sum::<f64>() / s.len() as f64);
        let poses: Option<Vec<PoseError>> = views.iter().map(|v| v.pose).collect();
        let pose_summary = poses.filter(|p| !p.is_empty()).map(|p| outlier_filter(&p));
        Self {
            views,
            mean_psnr,
            mean_ssim,
            pose_summary,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("object,view,psnr,ssim,rot_deg,trans_rel\n");
        for v in &self.views {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                v.object,
                v.view,
                v.psnr,
                opt(v.ssim),
                opt(v.pose.map(|p| p.rot_deg)),
                opt(v.pose.map(|p| p.trans_rel)),
            ));
        }
        out
    }
}
