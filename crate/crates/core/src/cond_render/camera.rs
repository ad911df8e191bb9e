use super::RenderError;
use nalgebra::{Matrix3, Point3, Vector3};
use std::fmt::Write as _;

/// Closest camera-space depth a point may have and still project.
pub const NEAR_PLANE: f64 = 1e-3;

/// Pinhole camera. `focal_normalized` is the focal length in units of the
/// image half-extent, so the pixel focal length is `focal_normalized * W / 2`
/// horizontally and `focal_normalized * H / 2` vertically.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub focal_normalized: f64,
    pub center: Vector3<f64>,
    /// World to camera rotation.
    pub rotation: Matrix3<f64>,
    pub image_size: (u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: [f64; 2],
    /// Camera-space z.
    pub depth: f64,
    pub in_front: bool,
}

impl Projection {
    pub fn in_frame(&self, (w, h): (u32, u32)) -> bool {
        self.in_front
            && (0.0..w as f64).contains(&self.pixel[0])
            && (0.0..h as f64).contains(&self.pixel[1])
    }
}

impl Camera {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.focal_normalized > 0.0) {
            return Err(RenderError::Camera(format!(
                "focal_normalized must be positive, got {}",
                self.focal_normalized
            )));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(RenderError::Camera("image size must be positive".into()));
        }
        if !crate::body_model::is_rotation(&self.rotation, 1e-6) {
            return Err(RenderError::Camera("rotation is not a proper rotation".into()));
        }
        Ok(())
    }

    pub fn to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.rotation * (p.coords - self.center)
    }

    /// Pixel coordinates of a camera-space point; the pixel grid has its
    /// origin at the top-left corner and pixel centers at half-integers.
    pub fn project_camera_space(&self, c: &Vector3<f64>) -> Projection {
        let (w, h) = (self.image_size.0 as f64, self.image_size.1 as f64);
        let f = self.focal_normalized;
        let in_front = c.z > NEAR_PLANE;
        Projection {
            pixel: [
                (f * c.x / c.z + 1.0) / 2.0 * w,
                (f * c.y / c.z + 1.0) / 2.0 * h,
            ],
            depth: c.z,
            in_front,
        }
    }

    pub fn project(&self, p: &Point3<f64>) -> Projection {
        self.project_camera_space(&self.to_camera(p))
    }

    /// Text sidecar with one `key = value` per line; floats use the shortest
    /// representation that round-trips.
    pub fn to_sidecar(&self, pose_id: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pose_id = {pose_id}");
        let _ = writeln!(s, "focal_normalized = {}", self.focal_normalized);
        let c = &self.center;
        let _ = writeln!(s, "center = {} {} {}", c.x, c.y, c.z);
        let r = &self.rotation;
        let _ = writeln!(
            s,
            "rotation = {} {} {} {} {} {} {} {} {}",
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)]
        );
        let _ = writeln!(s, "image_size = {} {}", self.image_size.0, self.image_size.1);
        s
    }

    pub fn from_sidecar(text: &str) -> Result<(String, Camera), RenderError> {
        let bad = |m: String| RenderError::Sidecar(m);
        let mut pose_id = None;
        let mut focal = None;
        let mut center = None;
        let mut rotation = None;
        let mut size = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(" = ")
                .ok_or_else(|| bad(format!("bad line {line:?}")))?;
            let floats = || -> Result<Vec<f64>, RenderError> {
                value
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| bad(format!("{key}: {e}"))))
                    .collect()
            };
            match key {
                "pose_id" => pose_id = Some(value.to_string()),
                "focal_normalized" => focal = floats()?.first().copied(),
                "center" => {
                    let v = floats()?;
                    if v.len() != 3 {
                        return Err(bad("center needs 3 values".into()));
                    }
                    center = Some(Vector3::new(v[0], v[1], v[2]));
                }
                "rotation" => {
                    let v = floats()?;
                    if v.len() != 9 {
                        return Err(bad("rotation needs 9 values".into()));
                    }
                    rotation = Some(Matrix3::from_row_slice(&v));
                }
                "image_size" => {
                    let v: Vec<u32> = value
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|e| bad(format!("image_size: {e}"))))
                        .collect::<Result<_, _>>()?;
                    if v.len() != 2 {
                        return Err(bad("image_size needs 2 values".into()));
                    }
                    size = Some((v[0], v[1]));
                }
                other => return Err(bad(format!("unknown key {other}"))),
            }
        }
        let missing = |k: &str| bad(format!("missing {k}"));
        let camera = Camera {
            focal_normalized: focal.ok_or_else(|| missing("focal_normalized"))?,
            center: center.ok_or_else(|| missing("center"))?,
            rotation: rotation.ok_or_else(|| missing("rotation"))?,
            image_size: size.ok_or_else(|| missing("image_size"))?,
        };
        Ok((pose_id.ok_or_else(|| missing("pose_id"))?, camera))
    }
}

pub fn project_points(camera: &Camera, points: &[Point3<f64>]) -> Vec<Projection> {
    points.iter().map(|p| camera.project(p)).collect()
}

/// Identity-rotation camera on the optical axis through the root joint,
/// pulled back to the smallest distance at which every joint projects inside
/// the normalized image square shrunk by `1 / (1 + margin)`.
pub fn place_camera(
    joints: &[Point3<f64>],
    root: usize,
    focal_normalized: f64,
    margin: f64,
    image_size: (u32, u32),
) -> Result<Camera, RenderError> {
    if joints.len() < 2 || root >= joints.len() {
        return Err(RenderError::DegenerateJoints("need at least two joints".into()));
    }
    if !(margin >= 0.0) {
        return Err(RenderError::Camera(format!("margin must be >= 0, got {margin}")));
    }
    let root_p = joints[root];
    let spread = joints
        .iter()
        .map(|j| (j - root_p).norm())
        .fold(0.0, f64::max);
    if !(spread > 1e-12) {
        return Err(RenderError::DegenerateJoints("all joints coincide".into()));
    }
    let scale = focal_normalized * (1.0 + margin);
    let mut distance = f64::NEG_INFINITY;
    for j in joints {
        let d = j - root_p;
        // f * |x| / (dz + d) <= 1 / (1 + margin)  <=>  d >= f (1 + margin) |x| - dz
        let needed = (scale * d.x.abs()).max(scale * d.y.abs()) - d.z;
        distance = distance.max(needed).max(NEAR_PLANE - d.z + NEAR_PLANE);
    }
    let camera = Camera {
        focal_normalized,
        center: Vector3::new(root_p.x, root_p.y, root_p.z - distance),
        rotation: Matrix3::identity(),
        image_size,
    };
    camera.validate()?;
    Ok(camera)
}
