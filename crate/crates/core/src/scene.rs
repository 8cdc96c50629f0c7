//! Multi-view scenes and their validation.

use std::fmt;

use serde::Serialize;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{normalize_quaternion, GaussianSet};
use crate::grid::ImageView;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneView {
    pub image: ImageView,
    pub camera: Camera,
    pub gaussians: GaussianSet,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    pub views: Vec<SceneView>,
}

impl Scene {
    pub fn new(views: Vec<SceneView>) -> Self {
        Self { views }
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    /// Shared `(height, width)` of every view.
    pub fn resolution(&self) -> Result<(usize, usize)> {
        let first = self
            .views
            .first()
            .ok_or_else(|| Error::InvalidArgument("scene has no views".into()))?;
        let res = (first.image.height, first.image.width);
        for (i, v) in self.views.iter().enumerate() {
            if (v.image.height, v.image.width) != res {
                return Err(Error::View {
                    view_id: i,
                    message: format!(
                        "resolution {}x{} differs from view 0 ({}x{})",
                        v.image.height, v.image.width, res.0, res.1
                    ),
                });
            }
        }
        Ok(res)
    }

    /// `N * H * W`, the pixel-aligned primitive pool.
    pub fn total_pool(&self) -> Result<u64> {
        let (h, w) = self.resolution()?;
        Ok((self.view_count() * h * w) as u64)
    }

    /// All view sets concatenated in view order.
    pub fn pooled_gaussians(&self) -> GaussianSet {
        GaussianSet::concat(self.views.iter().map(|v| &v.gaussians))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub view: Option<usize>,
    pub primitive: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(v) = self.view {
            write!(f, "view {v}: ")?;
        }
        if let Some(p) = self.primitive {
            write!(f, "primitive {p}: ")?;
        }
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Checks every type invariant of the scene. Returns an empty list when valid.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    if scene.views.is_empty() {
        out.push(Violation {
            view: None,
            primitive: None,
            field: "views",
            message: "scene must contain at least one view".into(),
        });
    }
    for (i, view) in scene.views.iter().enumerate() {
        let mut push = |primitive, field, message: String| {
            out.push(Violation {
                view: Some(i),
                primitive,
                field,
                message,
            })
        };
        for m in view.camera.violations() {
            push(None, "camera", m);
        }
        for m in view.image.violations() {
            push(None, "image", m);
        }
        let (h, w) = (view.image.height, view.image.width);
        if (view.camera.height, view.camera.width) != (h, w) {
            push(
                None,
                "camera",
                format!(
                    "camera is {}x{} but image is {h}x{w}",
                    view.camera.height, view.camera.width
                ),
            );
        }
        let set = &view.gaussians;
        if let Some(pixels) = &set.source_pixel {
            if set.len() != h * w {
                push(
                    None,
                    "gaussians",
                    format!("pixel-aligned set has {} primitives, expected {}", set.len(), h * w),
                );
            } else if pixels.len() != set.len() || pixels.iter().enumerate().any(|(j, &p)| j != p) {
                push(
                    None,
                    "source_pixel",
                    "pixel indices are not the row-major enumeration".into(),
                );
            }
        }
        for (k, g) in set.primitives.iter().enumerate() {
            if !(0.0..=1.0).contains(&g.opacity) {
                push(Some(k), "opacity", format!("{} outside [0, 1]", g.opacity));
            }
            if g.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                push(Some(k), "scale", format!("{:?} not strictly positive", g.scale));
            }
            if normalize_quaternion(g.rotation).is_err() {
                push(Some(k), "rotation", "zero or non-finite quaternion".into());
            }
            if g.sh_degree().is_none() {
                push(
                    Some(k),
                    "sh",
                    format!("{} coefficients is not 3*(d+1)^2 for d <= 3", g.sh.len() * 3),
                );
            }
            if g.center.iter().any(|c| !c.is_finite()) {
                push(Some(k), "center", "non-finite center".into());
            }
        }
    }
    out
}

/// Fails with the first few violations when the scene is invalid.
pub fn ensure_valid(scene: &Scene) -> Result<()> {
    let violations = validate_scene(scene);
    if violations.is_empty() {
        return Ok(());
    }
    let shown: Vec<String> = violations.iter().take(5).map(|v| v.to_string()).collect();
    let more = violations.len().saturating_sub(shown.len());
    let mut msg = shown.join("; ");
    if more > 0 {
        msg.push_str(&format!("; and {more} more"));
    }
    Err(Error::Validation(msg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synthetic::{synthesize_scene, Layout, SyntheticSpec};

    fn scene() -> Scene {
        synthesize_scene(&SyntheticSpec {
            views: 2,
            height: 8,
            width: 8,
            seed: 3,
            layout: Layout::Plane,
        })
        .unwrap()
    }

    #[test]
    fn well_formed_scene_has_no_violations() {
        assert!(validate_scene(&scene()).is_empty());
    }

    #[test]
    fn bad_opacity_names_view_primitive_and_field() {
        let mut s = scene();
        s.views[1].gaussians.primitives[5].opacity = 1.5;
        let v = validate_scene(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].view, Some(1));
        assert_eq!(v[0].primitive, Some(5));
        assert_eq!(v[0].field, "opacity");
    }

    #[test]
    fn wrong_pixel_aligned_count_is_one_violation() {
        let mut s = scene();
        s.views[0].gaussians.primitives.pop();
        let v = validate_scene(&s);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].field, "gaussians");
    }

    #[test]
    fn camera_image_mismatch_is_reported() {
        let mut s = scene();
        s.views[0].camera.width = 16;
        s.views[0].camera.cx = 8.0;
        assert!(validate_scene(&s).iter().any(|v| v.field == "camera"));
    }

    #[test]
    fn validation_is_idempotent() {
        let mut s = scene();
        s.views[0].gaussians.primitives[0].scale[1] = -1.0;
        let before = s.clone();
        let a = validate_scene(&s);
        let b = validate_scene(&s);
        assert_eq!(a, b);
        assert_eq!(s, before);
    }
}
