//! Ray-cast depth rendering of axis-aligned solids with a per-pixel z-buffer.

use crate::geometry::{DepthImage, Pixel};
use crate::model::{CameraIntrinsics, Pose, Vec3};

/// Nothing closer than this to the camera is rendered.
pub(crate) const NEAR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Shape {
    Cuboid {
        min: Vec3,
        max: Vec3,
    },
    /// Vertical cylinder standing on `z0`.
    Cylinder {
        cx: f64,
        cy: f64,
        radius: f64,
        z0: f64,
        z1: f64,
    },
}

impl Shape {
    pub fn bounds(&self) -> (Vec3, Vec3) {
        match *self {
            Shape::Cuboid { min, max } => (min, max),
            Shape::Cylinder { cx, cy, radius, z0, z1 } => (
                Vec3::new(cx - radius, cy - radius, z0),
                Vec3::new(cx + radius, cy + radius, z1),
            ),
        }
    }

    /// Solid centre.
    pub fn center(&self) -> Vec3 {
        let (a, b) = self.bounds();
        (a + b) * 0.5
    }

    /// Nearest ray parameter beyond the near plane at which `o + t d` enters
    /// the solid.
    pub fn hit(&self, o: Vec3, d: Vec3) -> Option<f64> {
        match *self {
            Shape::Cuboid { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for a in 0..3 {
                    let (oa, da, lo, hi) = (o.get(a), d.get(a), min.get(a), max.get(a));
                    if da == 0.0 {
                        if oa < lo || oa > hi {
                            return None;
                        }
                        continue;
                    }
                    let (mut ta, mut tb) = ((lo - oa) / da, (hi - oa) / da);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    t0 = t0.max(ta);
                    t1 = t1.min(tb);
                }
                (t0 <= t1 && t0 > NEAR).then_some(t0)
            }
            Shape::Cylinder { cx, cy, radius, z0, z1 } => {
                let mut best: Option<f64> = None;
                let mut offer = |t: f64| {
                    if t > NEAR && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                let (px, py) = (o.x - cx, o.y - cy);
                let a = d.x * d.x + d.y * d.y;
                if a > 0.0 {
                    let b = 2.0 * (px * d.x + py * d.y);
                    let c = px * px + py * py - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let t = (-b - disc.sqrt()) / (2.0 * a);
                        let z = o.z + t * d.z;
                        if (z0..=z1).contains(&z) {
                            offer(t);
                        }
                    }
                }
                if d.z != 0.0 {
                    let t = (z1 - o.z) / d.z;
                    let (x, y) = (px + t * d.x, py + t * d.y);
                    if x * x + y * y <= radius * radius {
                        offer(t);
                    }
                }
                best
            }
        }
    }
}

/// A renderable solid; `owner` is the object id, `None` for structure.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Solid {
    pub shape: Shape,
    pub owner: Option<u32>,
}

pub(crate) struct Rendered {
    pub depth: DepthImage,
    /// Visible pixels per object id, in row-major order.
    pub objects: Vec<(u32, Vec<Pixel>)>,
}

fn ray(intr: &CameraIntrinsics, u: u32, v: u32) -> Vec3 {
    // Same pixel convention as back-projection, so depth round-trips.
    Vec3::new((u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0)
}

/// Pixel rectangle that can contain the solid, or `None` if it lies wholly
/// behind the camera.
fn screen_rect(s: &Shape, intr: &CameraIntrinsics, pose: &Pose) -> Option<(u32, u32, u32, u32)> {
    let (lo, hi) = s.bounds();
    let full = (0, 0, intr.width - 1, intr.height - 1);
    let mut behind = 0;
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..8 {
        let corner = Vec3::new(
            if k & 1 == 0 { lo.x } else { hi.x },
            if k & 2 == 0 { lo.y } else { hi.y },
            if k & 4 == 0 { lo.z } else { hi.z },
        );
        let c = pose.inverse_transform(corner);
        if c.z <= NEAR {
            behind += 1;
            continue;
        }
        let (u, v) = (intr.fx * c.x / c.z + intr.cx, intr.fy * c.y / c.z + intr.cy);
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    if behind == 8 {
        return None;
    }
    if behind > 0 {
        return Some(full);
    }
    let (w, h) = (intr.width as f64 - 1.0, intr.height as f64 - 1.0);
    if umax < 0.0 || vmax < 0.0 || umin > w || vmin > h {
        return None;
    }
    Some((
        umin.floor().max(0.0) as u32,
        vmin.floor().max(0.0) as u32,
        umax.ceil().min(w) as u32,
        vmax.ceil().min(h) as u32,
    ))
}

/// Renders the nearest surface per pixel. Floor and ceiling are infinite
/// planes at `z = 0` and `z = ceiling`.
pub(crate) fn render(solids: &[Solid], ceiling: f64, intr: &CameraIntrinsics, pose: &Pose) -> Rendered {
    let (w, h) = (intr.width as usize, intr.height as usize);
    let o = pose.translation();
    let dirs: Vec<Vec3> = (0..h)
        .flat_map(|v| (0..w).map(move |u| (u as u32, v as u32)))
        .map(|(u, v)| pose.rotate(ray(intr, u, v)))
        .collect();
    let mut zbuf: Vec<f64> = dirs
        .iter()
        .map(|d| {
            if d.z < 0.0 {
                -o.z / d.z
            } else if d.z > 0.0 {
                (ceiling - o.z) / d.z
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let mut owner: Vec<Option<u32>> = vec![None; w * h];
    for s in solids {
        let Some((u0, v0, u1, v1)) = screen_rect(&s.shape, intr, pose) else {
            continue;
        };
        for v in v0..=v1 {
            for u in u0..=u1 {
                let i = v as usize * w + u as usize;
                if let Some(t) = s.shape.hit(o, dirs[i]) {
                    if t < zbuf[i] {
                        zbuf[i] = t;
                        owner[i] = s.owner;
                    }
                }
            }
        }
    }
    let data = zbuf
        .iter()
        .map(|&t| if t.is_finite() && t > NEAR { t as f32 } else { 0.0 })
        .collect();
    let mut by_object: std::collections::BTreeMap<u32, Vec<Pixel>> = Default::default();
    for (i, o) in owner.iter().enumerate() {
        if let Some(id) = o {
            by_object.entry(*id).or_default().push(Pixel {
                u: (i % w) as u32,
                v: (i / w) as u32,
            });
        }
    }
    Rendered {
        depth: DepthImage::new(intr.width, intr.height, data).expect("raster matches intrinsics"),
        objects: by_object.into_iter().collect(),
    }
}
