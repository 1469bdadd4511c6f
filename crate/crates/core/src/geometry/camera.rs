use crate::error::{Error, Result};
use crate::model::{CameraIntrinsics, Pose, Vec3};

/// Dense metric depth raster, row-major; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "depth raster has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.data[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, d: f32) {
        let w = self.width as usize;
        self.data[v as usize * w + u as usize] = d;
    }
}

/// Pixel coordinate: `u` is the column, `v` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub u: u32,
    pub v: u32,
}

/// Back-projects mask pixels through the pinhole model into the world frame.
/// Pixels with non-positive depth are skipped. Output points are rounded to
/// single precision.
pub fn project_mask(depth: &DepthImage, mask: &[Pixel], intr: &CameraIntrinsics, pose: &Pose) -> Result<Vec<Vec3>> {
    if depth.width != intr.width || depth.height != intr.height {
        return Err(Error::InvalidInput("depth raster does not match intrinsics".into()));
    }
    let mut out = Vec::with_capacity(mask.len());
    for px in mask {
        if px.u >= depth.width || px.v >= depth.height {
            return Err(Error::InvalidInput(format!(
                "mask pixel ({}, {}) outside image",
                px.u, px.v
            )));
        }
        let d = depth.get(px.u, px.v) as f64;
        if !(d > 0.0 && d.is_finite()) {
            continue;
        }
        let cam = Vec3::new(
            (px.u as f64 - intr.cx) * d / intr.fx,
            (px.v as f64 - intr.cy) * d / intr.fy,
            d,
        );
        out.push(pose.transform(cam).to_f32_precision());
    }
    Ok(out)
}
