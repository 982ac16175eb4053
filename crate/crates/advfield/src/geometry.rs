//! Core 3D types and the geometric predicates shared by every other module:
//! box-frame transforms, containment, oriented 3D IoU, and the relative
//! rotation grouping used to pick vector fields.
//!
//! Conventions, used everywhere without exception:
//! - right-handed world frame, z up, angles counter-clockwise viewed from
//!   above (positive yaw turns +x towards +y);
//! - box frame: x along the heading (length axis), y to the left (width
//!   axis), z up (height axis), origin at the box center;
//! - yaw is stored normalized to [-pi, pi).

use crate::error::{Error, Result};
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

/// A point or displacement in meters. Components must stay finite.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Unit vector in the same direction; `None` when shorter than `1e-12`.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n < 1e-12 {
            None
        } else {
            Some(self * (1.0 / n))
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotation about the vertical axis by `yaw` radians (CCW from above).
    pub fn rotated_z(self, yaw: f64) -> Vec3 {
        let (s, c) = yaw.sin_cos();
        Vec3 {
            x: c * self.x - s * self.y,
            y: s * self.x + c * self.y,
            z: self.z,
        }
    }

    pub fn max_abs_component(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self * -1.0
    }
}

/// A sensor ray. `direction` is unit length within 1e-9; constructors
/// enforce it.
#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Ray from `origin` through `target`. Degenerate when the two points
    /// coincide (within 1e-12).
    pub fn through(origin: Vec3, target: Vec3) -> Result<Ray> {
        let direction = (target - origin)
            .normalized()
            .ok_or_else(|| Error::Geometry("ray through coincident points".into()))?;
        Ok(Ray { origin, direction })
    }
}

/// Wraps an angle to [-pi, pi). The upper boundary maps to -pi, so the
/// interval is half-open exactly.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = a - 2.0 * PI * ((a + PI) / (2.0 * PI)).floor();
    // Guard the w == pi case that fp rounding can produce for inputs just
    // below an odd multiple of pi.
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// An upright oriented box: yaw about the vertical axis only, no roll or
/// pitch, matching KITTI-style labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox3 {
    pub center: Vec3,
    /// Extent along the box y axis.
    pub width: f64,
    /// Extent along the box z axis.
    pub height: f64,
    /// Extent along the box x (heading) axis.
    pub length: f64,
    /// Radians, normalized to [-pi, pi).
    pub yaw: f64,
}

impl OrientedBox3 {
    pub fn new(center: Vec3, width: f64, height: f64, length: f64, yaw: f64) -> Self {
        debug_assert!(width > 0.0 && height > 0.0 && length > 0.0);
        OrientedBox3 {
            center,
            width,
            height,
            length,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0 && self.length > 0.0) {
            return Err(Error::Geometry(format!(
                "box dims must be positive, got w={} h={} l={}",
                self.width, self.height, self.length
            )));
        }
        if !self.center.is_finite() || !self.yaw.is_finite() {
            return Err(Error::Geometry("non-finite box pose".into()));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.width * self.height * self.length
    }

    /// BEV footprint corners in world xy, counter-clockwise.
    pub fn bev_corners(&self) -> [(f64, f64); 4] {
        let hl = self.length * 0.5;
        let hw = self.width * 0.5;
        let (s, c) = self.yaw.sin_cos();
        let corner = |bx: f64, by: f64| {
            (
                self.center.x + c * bx - s * by,
                self.center.y + s * bx + c * by,
            )
        };
        [
            corner(hl, hw),
            corner(-hl, hw),
            corner(-hl, -hw),
            corner(hl, -hw),
        ]
    }
}

/// Expresses `p` in the frame of `bbox` (origin at the center, x along the
/// heading). Exact inverse of [`box_frame_inverse`].
pub fn box_frame_transform(p: Vec3, bbox: &OrientedBox3) -> Vec3 {
    (p - bbox.center).rotated_z(-bbox.yaw)
}

/// Expresses `p` in the candidate frame of `bbox`: the box frame scaled
/// per axis by the half-extents, so every wall sits at ±1 regardless of
/// box size. Score crops live in this frame; without the scaling, box
/// size variation across objects drowns out surface-scale geometry.
pub fn candidate_frame(p: Vec3, bbox: &OrientedBox3) -> Vec3 {
    let q = box_frame_transform(p, bbox);
    Vec3::new(
        q.x / (bbox.length * 0.5),
        q.y / (bbox.width * 0.5),
        q.z / (bbox.height * 0.5),
    )
}

/// Pulls a gradient taken w.r.t. candidate-frame coordinates back to world
/// coordinates: the adjoint of [`candidate_frame`].
pub fn candidate_frame_grad_to_world(g: Vec3, bbox: &OrientedBox3) -> Vec3 {
    Vec3::new(
        g.x / (bbox.length * 0.5),
        g.y / (bbox.width * 0.5),
        g.z / (bbox.height * 0.5),
    )
    .rotated_z(bbox.yaw)
}

/// Maps box-frame coordinates back to the world frame.
pub fn box_frame_inverse(p_box: Vec3, bbox: &OrientedBox3) -> Vec3 {
    p_box.rotated_z(bbox.yaw) + bbox.center
}

/// True iff `p` lies within the box extended by `margin` on every axis.
/// Closed boundaries: face points are contained at margin 0.
pub fn box_contains(p: Vec3, bbox: &OrientedBox3, margin: f64) -> bool {
    debug_assert!(margin >= 0.0);
    let q = box_frame_transform(p, bbox);
    q.x.abs() <= bbox.length * 0.5 + margin
        && q.y.abs() <= bbox.width * 0.5 + margin
        && q.z.abs() <= bbox.height * 0.5 + margin
}

/// Clips convex polygon `poly` (CCW) against the half-plane on the left of
/// the directed edge a->b. One Sutherland-Hodgman step.
fn clip_edge(poly: &[(f64, f64)], a: (f64, f64), b: (f64, f64)) -> Vec<(f64, f64)> {
    let side = |p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let cur = poly[i];
        let prev = poly[(i + poly.len() - 1) % poly.len()];
        let sc = side(cur);
        let sp = side(prev);
        if sc >= 0.0 {
            if sp < 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
            out.push(cur);
        } else if sp >= 0.0 {
            out.push(intersect(prev, cur, sp, sc));
        }
    }
    out
}

/// Intersection of segment p->q with the clip line, given the signed side
/// values sp, sq (sp and sq have opposite signs by construction).
fn intersect(p: (f64, f64), q: (f64, f64), sp: f64, sq: f64) -> (f64, f64) {
    let t = sp / (sp - sq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc.abs()
}

/// 3D IoU of two upright oriented boxes: BEV rectangle intersection area
/// (convex polygon clipping) times the vertical overlap, over the union
/// volume. Symmetric, result in [0, 1].
pub fn iou_3d(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    let mut poly: Vec<(f64, f64)> = a.bev_corners().to_vec();
    let cb = b.bev_corners();
    for i in 0..4 {
        if poly.is_empty() {
            break;
        }
        poly = clip_edge(&poly, cb[i], cb[(i + 1) % 4]);
    }
    let bev_inter = polygon_area(&poly);

    let za0 = a.center.z - a.height * 0.5;
    let za1 = a.center.z + a.height * 0.5;
    let zb0 = b.center.z - b.height * 0.5;
    let zb1 = b.center.z + b.height * 0.5;
    let dz = (za1.min(zb1) - za0.max(zb0)).max(0.0);

    let inter = bev_inter * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Angle between the box heading and the sensor-to-center azimuth, wrapped
/// to [-pi, pi). Sign convention: yaw minus azimuth, so a box at (0, 10, 0)
/// with yaw 0 seen from the origin yields -pi/2.
pub fn relative_rotation(bbox: &OrientedBox3, sensor_origin: Vec3) -> Result<f64> {
    let d = bbox.center - sensor_origin;
    if d.x * d.x + d.y * d.y < 1e-18 {
        return Err(Error::Geometry(
            "relative rotation undefined: box center on the sensor vertical axis".into(),
        ));
    }
    Ok(wrap_angle(bbox.yaw - d.y.atan2(d.x)))
}

/// Partition of [-pi, pi) into G equal bins with the first edge at -pi.
/// The clamp only fires for inputs at the wrapped boundary.
pub fn rotation_group(angle: f64, groups: usize) -> usize {
    use std::f64::consts::PI;
    debug_assert!(groups >= 1);
    let a = wrap_angle(angle);
    let idx = ((a + PI) / (2.0 * PI / groups as f64)).floor() as isize;
    idx.clamp(0, groups as isize - 1) as usize
}

/// Points with per-point intensity in [0, 1]. Deformations preserve order,
/// count, and intensity; only attacks that add or remove points by contract
/// may change the length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub intensity: Vec<f32>,
}

impl PointCloud {
    pub fn new() -> Self {
        PointCloud::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        PointCloud {
            points: Vec::with_capacity(n),
            intensity: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, p: Vec3, intensity: f32) {
        self.points.push(p);
        self.intensity.push(intensity);
    }

    pub fn len(&self) -> usize {
        debug_assert_eq!(self.points.len(), self.intensity.len());
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of points inside `bbox` at the given margin, ascending.
    pub fn indices_in_box(&self, bbox: &OrientedBox3, margin: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| box_contains(self.points[i], bbox, margin))
            .collect()
    }
}

/// One labeled object: id is the label-file line index, kind the verbatim
/// type string.
#[derive(Clone, Debug, PartialEq)]
pub struct GtObject {
    pub id: usize,
    pub kind: String,
    pub bbox: OrientedBox3,
}

/// One frame: cloud, sensor position, ground-truth objects.
#[derive(Clone, Debug, Default)]
pub struct SceneFrame {
    pub cloud: PointCloud,
    pub sensor_origin: Vec3,
    pub objects: Vec<GtObject>,
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn any_box() -> impl Strategy<Value = OrientedBox3> {
        (
            (-40.0..40.0f64, -40.0..40.0f64, -3.0..3.0f64),
            0.5..4.0f64,
            0.5..4.0f64,
            0.8..6.0f64,
            -10.0..10.0f64,
        )
            .prop_map(|((x, y, z), w, h, l, yaw)| {
                OrientedBox3::new(Vec3::new(x, y, z), w, h, l, yaw)
            })
    }

    fn any_point() -> impl Strategy<Value = Vec3> {
        (-50.0..50.0f64, -50.0..50.0f64, -10.0..10.0f64)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn wrap_angle_is_half_open_and_preserves_the_angle(a in -60.0..60.0f64) {
            let w = wrap_angle(a);
            prop_assert!((-PI..PI).contains(&w), "wrapped {a} to {w}");
            let turns = (a - w) / (2.0 * PI);
            prop_assert!((turns - turns.round()).abs() < 1e-9, "{a} -> {w} is not a whole number of turns");
        }

        #[test]
        fn box_frame_transform_round_trips(p in any_point(), bbox in any_box()) {
            let back = box_frame_inverse(box_frame_transform(p, &bbox), &bbox);
            prop_assert!((back - p).norm() < 1e-9);
        }

        #[test]
        fn candidate_frame_is_the_box_frame_scaled_to_unit_walls(p in any_point(), bbox in any_box()) {
            let q = box_frame_transform(p, &bbox);
            let c = candidate_frame(p, &bbox);
            prop_assert!((c.x * bbox.length * 0.5 - q.x).abs() < 1e-9);
            prop_assert!((c.y * bbox.width * 0.5 - q.y).abs() < 1e-9);
            prop_assert!((c.z * bbox.height * 0.5 - q.z).abs() < 1e-9);
        }

        #[test]
        fn iou_is_symmetric_and_bounded(a in any_box(), b in any_box()) {
            let ab = iou_3d(&a, &b);
            let ba = iou_3d(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        }
    }
}
