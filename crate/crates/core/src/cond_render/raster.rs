//! Z-buffered triangle rasterization sampled at pixel centers.

use super::camera::{Camera, NEAR_PLANE};
use crate::body_model::Mesh;
use nalgebra::Vector3;

/// Row-major `W x H` depth in meters; background is `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

/// Row-major `W x H` colors in `[0,1]`; background is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f64; 3]>,
}

impl DepthMap {
    pub fn background(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![f64::INFINITY; (width * height) as usize],
        }
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn covered(&self) -> usize {
        self.data.iter().filter(|d| d.is_finite()).count()
    }
}

impl SemanticMap {
    pub fn background(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 3]; (width * height) as usize],
        }
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> [f64; 3] {
        self.data[(y * self.width + x) as usize]
    }
}

/// A triangle already in camera space and screen space.
struct ScreenTriangle {
    screen: [[f64; 2]; 3],
    inv_z: [f64; 3],
    area: f64,
}

impl ScreenTriangle {
    fn new(camera: &Camera, cam: [Vector3<f64>; 3]) -> Option<Self> {
        // Triangles reaching the near plane are dropped whole.
        if cam.iter().any(|c| c.z <= NEAR_PLANE) {
            return None;
        }
        let screen = cam.map(|c| camera.project_camera_space(&c).pixel);
        let area = edge(screen[0], screen[1], screen[2]);
        if area.abs() < 1e-12 {
            return None;
        }
        Some(Self {
            screen,
            inv_z: cam.map(|c| 1.0 / c.z),
            area,
        })
    }

    /// Screen-space barycentrics at `p`, or `None` outside the triangle.
    #[inline]
    fn barycentric(&self, p: [f64; 2]) -> Option<[f64; 3]> {
        let [a, b, c] = self.screen;
        let b0 = edge(b, c, p) / self.area;
        let b1 = edge(c, a, p) / self.area;
        let b2 = edge(a, b, p) / self.area;
        (b0 >= 0.0 && b1 >= 0.0 && b2 >= 0.0).then_some([b0, b1, b2])
    }

    /// Perspective-correct depth: 1/z is affine in screen space.
    #[inline]
    fn depth(&self, bary: [f64; 3]) -> f64 {
        1.0 / (bary[0] * self.inv_z[0] + bary[1] * self.inv_z[1] + bary[2] * self.inv_z[2])
    }

    fn pixel_bounds(&self, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
        let xs = self.screen.map(|p| p[0]);
        let ys = self.screen.map(|p| p[1]);
        let lo = |v: [f64; 3]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = |v: [f64; 3]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Pixel i has its center at i + 0.5.
        let x0 = (lo(xs) - 0.5).ceil().max(0.0);
        let y0 = (lo(ys) - 0.5).ceil().max(0.0);
        let x1 = (hi(xs) - 0.5).floor().min(width as f64 - 1.0);
        let y1 = (hi(ys) - 0.5).floor().min(height as f64 - 1.0);
        (x0 <= x1 && y0 <= y1).then_some((x0 as u32, y0 as u32, x1 as u32, y1 as u32))
    }
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn camera_vertices(mesh: &Mesh, camera: &Camera) -> Vec<Vector3<f64>> {
    mesh.vertices.iter().map(|p| camera.to_camera(p)).collect()
}

fn triangle(
    cam_verts: &[Vector3<f64>],
    face: &[u32; 3],
    camera: &Camera,
) -> Option<ScreenTriangle> {
    ScreenTriangle::new(camera, face.map(|i| cam_verts[i as usize]))
}

/// Depth and (optionally) perspective-correct interpolated vertex colors of
/// the nearest surface at every pixel center. Back faces are not culled.
pub fn rasterize(
    mesh: &Mesh,
    vertex_colors: Option<&[[f64; 3]]>,
    camera: &Camera,
) -> (DepthMap, SemanticMap) {
    let (w, h) = camera.image_size;
    let mut depth = DepthMap::background(w, h);
    let mut semantic = SemanticMap::background(w, h);
    let cam_verts = camera_vertices(mesh, camera);
    for face in &mesh.faces {
        let Some(tri) = triangle(&cam_verts, face, camera) else {
            continue;
        };
        let Some((x0, y0, x1, y1)) = tri.pixel_bounds(w, h) else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let Some(bary) = tri.barycentric([x as f64 + 0.5, y as f64 + 0.5]) else {
                    continue;
                };
                let z = tri.depth(bary);
                let idx = (y * w + x) as usize;
                if z < depth.data[idx] {
                    depth.data[idx] = z;
                    if let Some(colors) = vertex_colors {
                        let mut c = [0.0; 3];
                        for (k, vi) in face.iter().enumerate() {
                            let weight = bary[k] * tri.inv_z[k] * z;
                            let vc = colors[*vi as usize];
                            for ch in 0..3 {
                                c[ch] += weight * vc[ch];
                            }
                        }
                        semantic.data[idx] = c.map(|v| v.clamp(0.0, 1.0));
                    }
                }
            }
        }
    }
    (depth, semantic)
}

/// Point queries against the depth buffer [`rasterize`] would produce,
/// without rasterizing the full image.
pub struct DepthProbe {
    triangles: Vec<ScreenTriangle>,
    image_size: (u32, u32),
}

impl DepthProbe {
    pub fn new(mesh: &Mesh, camera: &Camera) -> Self {
        let cam_verts = camera_vertices(mesh, camera);
        Self {
            triangles: mesh
                .faces
                .iter()
                .filter_map(|face| triangle(&cam_verts, face, camera))
                .collect(),
            image_size: camera.image_size,
        }
    }

    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        if x >= self.image_size.0 || y >= self.image_size.1 {
            return f64::INFINITY;
        }
        let center = [x as f64 + 0.5, y as f64 + 0.5];
        self.triangles
            .iter()
            .filter_map(|tri| tri.barycentric(center).map(|b| tri.depth(b)))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn depth_at_pixel(mesh: &Mesh, camera: &Camera, x: u32, y: u32) -> f64 {
    DepthProbe::new(mesh, camera).depth_at(x, y)
}
