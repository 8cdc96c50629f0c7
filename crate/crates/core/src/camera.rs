//! Pinhole cameras with a rigid world-to-camera transform.
//!
//! Camera frame: x right, y down, z forward. Pixel `(col, row)` covers the
//! square `[col, col + 1) x [row, row + 1)` and samples at its center.

use nalgebra::{Matrix3, Matrix4, Vector3};

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_camera: Matrix4<f64>,
}

impl Camera {
    /// Builds a camera from a row-major 4x4 world-to-camera matrix.
    pub fn from_row_major(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        w2c: &[f64; 16],
    ) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            world_to_camera: Matrix4::from_row_slice(w2c),
        }
    }

    /// Camera at `position` looking at `target`, with `down` hinting the image y axis.
    pub fn look_at(
        position: Vector3<f64>,
        target: Vector3<f64>,
        down: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - position).normalize();
        let right = down.cross(&forward).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * position);
        let mut w2c = Matrix4::identity();
        w2c.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        w2c.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            world_to_camera: w2c,
        }
    }

    pub fn row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.world_to_camera[(r, c)];
            }
        }
        out
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * world + self.translation()
    }

    /// Eye position in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    /// World-space ray through the center of pixel `(col, row)`: `(origin, unit direction)`.
    pub fn pixel_ray(&self, col: usize, row: usize) -> (Vector3<f64>, Vector3<f64>) {
        let dir_cam = Vector3::new(
            (col as f64 + 0.5 - self.cx) / self.fx,
            (row as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        );
        let dir = (self.rotation().transpose() * dir_cam).normalize();
        (self.center(), dir)
    }

    /// Nearest pixel `(col, row)` hit by a world point, if it lies in front of
    /// the camera (depth > `near`) and inside the image.
    pub fn project_to_pixel(&self, world: &Vector3<f64>, near: f64) -> Option<(usize, usize)> {
        let p = self.to_camera(world);
        if !(p.z > near) {
            return None;
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        let col = (u - 0.5).round();
        let row = (v - 0.5).round();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some((col as usize, row as usize))
    }

    /// Human-readable invariant violations; empty when the camera is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.fx > 0.0 && self.fy > 0.0) {
            out.push(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            out.push(format!("cx={} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            out.push(format!("cy={} outside [0, {})", self.cy, self.height));
        }
        let r = self.rotation();
        let err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) || !(r.determinant() > 0.0) {
            out.push(format!("world_to_camera rotation is not orthonormal (error {err:e})"));
        }
        let bottom = self.world_to_camera.row(3);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            out.push("world_to_camera bottom row must be (0, 0, 0, 1)".into());
        }
        out
    }
}
