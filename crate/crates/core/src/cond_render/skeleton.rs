//! 2D skeleton conditioning image in the 18-keypoint OpenPose layout.
//!
//! Limbs are drawn first, in table order, as solid lines; joints are drawn
//! afterwards as filled discs. Both use the per-limb / per-joint color table
//! below. At 512 px the line width is 4 px and the disc radius 4 px; both
//! scale with `min(W, H) / 512` and never drop below 1 px.

use super::RenderError;

pub const OPENPOSE18_NAMES: [&str; 18] = [
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
];

/// Limbs as keypoint index pairs.
pub const OPENPOSE18_EDGES: [(usize, usize); 17] = [
    (1, 2),
    (1, 5),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (1, 11),
    (11, 12),
    (12, 13),
    (1, 0),
    (0, 14),
    (14, 16),
    (0, 15),
    (15, 17),
];

/// Limb `i` uses color `i`; keypoint `k` uses color `k`.
pub const OPENPOSE18_COLORS: [[u8; 3]; 18] = [
    [255, 0, 0],
    [255, 85, 0],
    [255, 170, 0],
    [255, 255, 0],
    [170, 255, 0],
    [85, 255, 0],
    [0, 255, 0],
    [0, 255, 85],
    [0, 255, 170],
    [0, 255, 255],
    [0, 170, 255],
    [0, 85, 255],
    [0, 0, 255],
    [85, 0, 255],
    [170, 0, 255],
    [255, 0, 255],
    [255, 0, 170],
    [255, 0, 85],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkeletonFormat {
    OpenPose18,
}

impl SkeletonFormat {
    pub fn from_name(name: &str) -> Result<Self, RenderError> {
        match name {
            "openpose18" | "coco18" => Ok(SkeletonFormat::OpenPose18),
            other => Err(RenderError::UnknownSkeleton(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SkeletonFormat::OpenPose18 => "openpose18",
        }
    }

    pub fn num_joints(self) -> usize {
        18
    }

    pub fn joint_names(self) -> &'static [&'static str] {
        &OPENPOSE18_NAMES
    }

    pub fn joint_index(self, name: &str) -> Option<usize> {
        self.joint_names().iter().position(|n| *n == name)
    }
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn black(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; (width * height * 3) as usize],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Sets every pixel whose center lies within `radius` of the segment `a`-`b`.
    fn fill_capsule(&mut self, a: [f64; 2], b: [f64; 2], radius: f64, color: [u8; 3]) {
        let (w, h) = (self.width as f64, self.height as f64);
        let x0 = (a[0].min(b[0]) - radius - 0.5).ceil().max(0.0);
        let x1 = (a[0].max(b[0]) + radius - 0.5).floor().min(w - 1.0);
        let y0 = (a[1].min(b[1]) - radius - 0.5).ceil().max(0.0);
        let y1 = (a[1].max(b[1]) + radius - 0.5).floor().min(h - 1.0);
        if x0 > x1 || y0 > y1 {
            return;
        }
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        for y in y0 as u32..=y1 as u32 {
            for x in x0 as u32..=x1 as u32 {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let t = if len2 > 0.0 {
                    (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
                if q[0] * q[0] + q[1] * q[1] <= radius * radius {
                    self.put(x, y, color);
                }
            }
        }
    }
}

pub fn stroke_sizes(image_size: (u32, u32)) -> (f64, f64) {
    let s = image_size.0.min(image_size.1) as f64 / 512.0;
    ((4.0 * s).max(1.0), (4.0 * s).max(1.0))
}

pub fn render_skeleton_map(
    joints2d: &[[f64; 2]],
    visibility: &[bool],
    format: SkeletonFormat,
    image_size: (u32, u32),
) -> Result<RgbImage, RenderError> {
    if joints2d.len() != format.num_joints() || visibility.len() != joints2d.len() {
        return Err(RenderError::SkeletonMismatch {
            format: format.name(),
            expected: format.num_joints(),
            got: joints2d.len().max(visibility.len()),
        });
    }
    let (line_width, disc_radius) = stroke_sizes(image_size);
    let mut img = RgbImage::black(image_size.0, image_size.1);
    for (i, &(a, b)) in OPENPOSE18_EDGES.iter().enumerate() {
        if visibility[a] && visibility[b] {
            img.fill_capsule(joints2d[a], joints2d[b], line_width / 2.0, OPENPOSE18_COLORS[i]);
        }
    }
    for (k, p) in joints2d.iter().enumerate() {
        if visibility[k] {
            img.fill_capsule(*p, *p, disc_radius, OPENPOSE18_COLORS[k]);
        }
    }
    Ok(img)
}
