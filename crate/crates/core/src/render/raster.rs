//! Z-buffered triangle rasterization with edge functions evaluated at pixel
//! centers, the top-left tie-break rule on shared edges, and flat Lambertian
//! shading from a headlight at the camera. Depth is interpolated
//! perspective-correctly (linear in 1/z) under perspective projection and
//! linearly under weak perspective.

use super::camera::{CameraPose, Projection};
use crate::error::{Error, Result};
use crate::flame::Mesh;
use crate::math::{add3, cross3, mat_vec, norm3, sub3, Mat3, Vec3};

const AMBIENT: f64 = 0.15;
const BASE_COLOR: [f64; 3] = [205.0, 205.0, 215.0];

#[derive(Clone, Debug, PartialEq)]
pub struct RenderFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB bytes, black background.
    pub rgb: Vec<u8>,
    /// View-space depth per pixel; `INFINITY` where no geometry landed.
    pub depth: Vec<f64>,
}

impl RenderFrame {
    pub fn new(width: usize, height: usize) -> Self {
        RenderFrame {
            width,
            height,
            rgb: vec![0; width * height * 3],
            depth: vec![f64::INFINITY; width * height],
        }
    }

    pub fn covered_pixels(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }
}

pub fn mesh_centroid(mesh: &Mesh) -> Vec3 {
    let n = mesh.n_vertices();
    if n == 0 {
        return [0.0; 3];
    }
    let mut acc = [0.0; 3];
    for i in 0..n {
        acc = add3(acc, mesh.vertex(i));
    }
    [acc[0] / n as f64, acc[1] / n as f64, acc[2] / n as f64]
}

/// Rotate mesh vertices about a pivot: `p -> pivot + R (p - pivot)`. The
/// rotation uses the same matrix-vector path as the camera transform, so
/// rendering the rotated mesh at yaw 0 reproduces the camera-yaw image
/// bit for bit when the pivot is the orbit center.
pub fn rotate_mesh_about(mesh: &Mesh, pivot: Vec3, rot: &Mat3) -> Mesh {
    let mut vertices = Vec::with_capacity(mesh.vertices.len());
    for i in 0..mesh.n_vertices() {
        let p = add3(mat_vec(rot, sub3(mesh.vertex(i), pivot)), pivot);
        vertices.extend_from_slice(&p);
    }
    Mesh {
        vertices,
        faces: mesh.faces.clone(),
    }
}

/// Render with the orbit center at the mesh centroid.
pub fn render_mesh(mesh: &Mesh, cam: &CameraPose, width: usize, height: usize) -> Result<RenderFrame> {
    render_mesh_at(mesh, cam, mesh_centroid(mesh), width, height)
}

/// Render with an explicit orbit center.
pub fn render_mesh_at(
    mesh: &Mesh,
    cam: &CameraPose,
    center: Vec3,
    width: usize,
    height: usize,
) -> Result<RenderFrame> {
    cam.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "frame size must be positive, got {width}x{height}"
        )));
    }
    let mut frame = RenderFrame::new(width, height);
    let n = mesh.n_vertices();
    if mesh.vertices.len() != 3 * n {
        return Err(Error::dim("render mesh vertices", "3 * n", mesh.vertices.len().to_string()));
    }

    // Transform and project all vertices once.
    let mut cam_pts = Vec::with_capacity(n);
    let mut projected = Vec::with_capacity(n);
    for i in 0..n {
        let q = cam.to_camera(center, mesh.vertex(i));
        projected.push(cam.project(width, height, q));
        cam_pts.push(q);
    }

    for face in &mesh.faces {
        let [i0, i1, i2] = [face[0] as usize, face[1] as usize, face[2] as usize];
        if i0 >= n || i1 >= n || i2 >= n {
            return Err(Error::InvalidModel(format!("face index out of range: {face:?}")));
        }
        let (Some(p0), Some(p1), Some(p2)) = (projected[i0], projected[i1], projected[i2]) else {
            // Triangle touches the eye plane; no clipping at this scale.
            continue;
        };
        let shade = face_shade(cam_pts[i0], cam_pts[i1], cam_pts[i2]);
        raster_triangle(&mut frame, cam.projection, p0, p1, p2, shade);
    }
    Ok(frame)
}

/// Flat Lambertian intensity for a camera-space triangle lit from the
/// camera (headlight along +z toward the scene); the normal is flipped
/// toward the viewer, backfaces resolve by depth only.
fn face_shade(a: Vec3, b: Vec3, c: Vec3) -> Option<[u8; 3]> {
    let normal = cross3(sub3(b, a), sub3(c, a));
    let len = norm3(normal);
    if len == 0.0 {
        return None;
    }
    let toward = normal[2].abs() / len;
    let intensity = AMBIENT + (1.0 - AMBIENT) * toward;
    Some([
        (BASE_COLOR[0] * intensity).round().clamp(0.0, 255.0) as u8,
        (BASE_COLOR[1] * intensity).round().clamp(0.0, 255.0) as u8,
        (BASE_COLOR[2] * intensity).round().clamp(0.0, 255.0) as u8,
    ])
}

fn orient2d(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Shared-edge tie break: accept boundary pixels on top edges (horizontal,
/// pointing left) and left edges (pointing down in image coordinates). For
/// the two directed copies of a shared edge exactly one side accepts.
fn top_left(ax: f64, ay: f64, bx: f64, by: f64) -> bool {
    let dy = by - ay;
    let dx = bx - ax;
    (dy == 0.0 && dx < 0.0) || dy > 0.0
}

fn raster_triangle(
    frame: &mut RenderFrame,
    projection: Projection,
    p0: (f64, f64, f64),
    p1: (f64, f64, f64),
    p2: (f64, f64, f64),
    shade: Option<[u8; 3]>,
) {
    let Some(color) = shade else { return };
    let (v0, mut v1, mut v2) = (p0, p1, p2);
    let mut area = orient2d(v0.0, v0.1, v1.0, v1.1, v2.0, v2.1);
    if area == 0.0 {
        return; // degenerate in screen space
    }
    if area < 0.0 {
        std::mem::swap(&mut v1, &mut v2);
        area = -area;
    }

    let min_x = v0.0.min(v1.0).min(v2.0).floor().max(0.0) as usize;
    let max_x = (v0.0.max(v1.0).max(v2.0).ceil() as isize).min(frame.width as isize - 1);
    let min_y = v0.1.min(v1.1).min(v2.1).floor().max(0.0) as usize;
    let max_y = (v0.1.max(v1.1).max(v2.1).ceil() as isize).min(frame.height as isize - 1);
    if max_x < 0 || max_y < 0 {
        return;
    }
    let (max_x, max_y) = (max_x as usize, max_y as usize);

    let accept0 = top_left(v1.0, v1.1, v2.0, v2.1);
    let accept1 = top_left(v2.0, v2.1, v0.0, v0.1);
    let accept2 = top_left(v0.0, v0.1, v1.0, v1.1);

    for py in min_y..=max_y {
        for px in min_x..=max_x {
            let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
            let w0 = orient2d(v1.0, v1.1, v2.0, v2.1, cx, cy);
            let w1 = orient2d(v2.0, v2.1, v0.0, v0.1, cx, cy);
            let w2 = orient2d(v0.0, v0.1, v1.0, v1.1, cx, cy);
            let inside = (w0 > 0.0 || (w0 == 0.0 && accept0))
                && (w1 > 0.0 || (w1 == 0.0 && accept1))
                && (w2 > 0.0 || (w2 == 0.0 && accept2));
            if !inside {
                continue;
            }
            let (l0, l1, l2) = (w0 / area, w1 / area, w2 / area);
            let depth = match projection {
                Projection::Perspective => {
                    let inv = l0 / v0.2 + l1 / v1.2 + l2 / v2.2;
                    1.0 / inv
                }
                Projection::WeakPerspective => l0 * v0.2 + l1 * v1.2 + l2 * v2.2,
            };
            let idx = py * frame.width + px;
            if depth < frame.depth[idx] {
                frame.depth[idx] = depth;
                frame.rgb[3 * idx..3 * idx + 3].copy_from_slice(&color);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rot_y;

    fn tri_mesh(vertices: [[f64; 3]; 3]) -> Mesh {
        Mesh {
            vertices: vertices.concat(),
            faces: vec![[0, 1, 2]],
        }
    }

    #[test]
    fn empty_mesh_renders_black_and_infinite() {
        let mesh = Mesh {
            vertices: vec![],
            faces: vec![],
        };
        let frame = render_mesh(&mesh, &CameraPose::default(), 32, 32).unwrap();
        assert!(frame.rgb.iter().all(|&b| b == 0));
        assert!(frame.depth.iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn degenerate_triangle_is_skipped() {
        let mesh = tri_mesh([[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [0.1, 0.0, 0.0]]);
        let frame = render_mesh_at(&mesh, &CameraPose::default(), [0.0; 3], 32, 32).unwrap();
        assert_eq!(frame.covered_pixels(), 0);
    }

    #[test]
    fn front_triangle_covers_center() {
        let mesh = tri_mesh([[-0.1, -0.08, 0.0], [0.1, -0.08, 0.0], [0.0, 0.12, 0.0]]);
        let frame = render_mesh_at(&mesh, &CameraPose::default(), [0.0; 3], 64, 64).unwrap();
        assert!(frame.covered_pixels() > 0);
        let center = 32 * 64 + 32;
        assert!(frame.depth[center].is_finite());
        assert!((frame.depth[center] - 0.4).abs() < 1e-9);
    }

    #[test]
    fn nearer_triangle_wins_depth_test() {
        let near = tri_mesh([[-0.1, -0.1, 0.1], [0.1, -0.1, 0.1], [0.0, 0.1, 0.1]]);
        let far = tri_mesh([[-0.1, -0.1, -0.1], [0.1, -0.1, -0.1], [0.0, 0.1, -0.1]]);
        let both = Mesh {
            vertices: [near.vertices.clone(), far.vertices.clone()].concat(),
            faces: vec![[0, 1, 2], [3, 4, 5]],
        };
        let cam = CameraPose::default();
        let f_near = render_mesh_at(&near, &cam, [0.0; 3], 48, 48).unwrap();
        let f_far = render_mesh_at(&far, &cam, [0.0; 3], 48, 48).unwrap();
        let f_both = render_mesh_at(&both, &cam, [0.0; 3], 48, 48).unwrap();
        for i in 0..f_both.depth.len() {
            let want = f_near.depth[i].min(f_far.depth[i]);
            assert_eq!(f_both.depth[i], want, "pixel {i}");
            let source = if f_near.depth[i] <= f_far.depth[i] { &f_near } else { &f_far };
            if f_both.depth[i].is_finite() {
                assert_eq!(&f_both.rgb[3 * i..3 * i + 3], &source.rgb[3 * i..3 * i + 3]);
            }
        }
    }

    #[test]
    fn camera_yaw_equals_mesh_rotation_pixel_exact() {
        // Pivot at the origin so both paths subtract the identical center.
        let mesh = tri_mesh([[-0.08, -0.06, 0.02], [0.09, -0.05, -0.01], [0.01, 0.1, 0.03]]);
        let yaw = 0.37;
        let cam_yaw = CameraPose {
            yaw,
            ..CameraPose::default()
        };
        let by_camera = render_mesh_at(&mesh, &cam_yaw, [0.0; 3], 96, 96).unwrap();
        let rotated = rotate_mesh_about(&mesh, [0.0; 3], &rot_y(-yaw));
        let by_mesh = render_mesh_at(&rotated, &CameraPose::default(), [0.0; 3], 96, 96).unwrap();
        assert_eq!(by_camera.rgb, by_mesh.rgb);
        assert_eq!(by_camera.depth, by_mesh.depth);
    }

    #[test]
    fn shared_edge_claims_each_pixel_once() {
        // Two triangles splitting a quad along a diagonal; no pixel may be
        // painted twice with conflicting depth, none on the seam skipped.
        let quad = Mesh {
            vertices: [
                [-0.1, -0.1, 0.0],
                [0.1, -0.1, 0.0],
                [0.1, 0.1, 0.0],
                [-0.1, 0.1, 0.0],
            ]
            .concat(),
            faces: vec![[0, 1, 2], [0, 2, 3]],
        };
        let frame = render_mesh_at(&quad, &CameraPose::default(), [0.0; 3], 64, 64).unwrap();
        // Interior coverage should be a solid block: every pixel whose
        // center lies strictly inside the projected quad is covered.
        let (px0, py0, _) = super::super::camera::project_point(
            &CameraPose::default(),
            [0.0; 3],
            64,
            64,
            [-0.1, -0.1, 0.0],
        )
        .unwrap();
        let (px1, py1, _) = super::super::camera::project_point(
            &CameraPose::default(),
            [0.0; 3],
            64,
            64,
            [0.1, 0.1, 0.0],
        )
        .unwrap();
        let (xmin, xmax) = (px0.min(px1), px0.max(px1));
        let (ymin, ymax) = (py0.min(py1), py0.max(py1));
        for py in 0..64usize {
            for px in 0..64usize {
                let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                let strictly_inside =
                    cx > xmin + 0.01 && cx < xmax - 0.01 && cy > ymin + 0.01 && cy < ymax - 0.01;
                if strictly_inside {
                    assert!(frame.depth[py * 64 + px].is_finite(), "hole at {px},{py}");
                }
            }
        }
    }
}
