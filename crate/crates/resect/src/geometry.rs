//! Rigid-body geometry: SE(3) transforms, the tracked pose graph, resection
//! planes with their cut windows, and plane patch sampling.

use std::collections::{BTreeMap, HashMap, VecDeque};

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::rng::{self, TAG_PATCH};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("quaternion norm {norm} too far from 1 to renormalize")]
    DegenerateQuaternion { norm: f64 },
    #[error("pose graph already has an edge for {a:?}->{b:?} at t={t_us}us")]
    DuplicateEdge { a: Body, b: Body, t_us: i64 },
    #[error("{body:?} unobservable at t={t_us}us (no pose within staleness bound)")]
    Unobservable { body: Body, t_us: i64 },
    #[error("invalid plane {name:?}: {reason}")]
    InvalidPlane { name: String, reason: String },
}

/// Rotation plus translation. The rotation is kept unit-norm by
/// renormalizing on every construction, so long composition chains cannot
/// drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3 {
    rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Se3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Renormalizes `rotation`; rejects quaternions too degenerate to rescue.
    pub fn from_parts(
        rotation: Quaternion<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let norm = rotation.norm();
        if !norm.is_finite() || norm < 1e-6 {
            return Err(GeometryError::DegenerateQuaternion { norm });
        }
        Ok(Self {
            rotation: UnitQuaternion::from_quaternion(rotation),
            translation,
        })
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        // Re-wrap to renormalize: quaternion products drift a few ulps each.
        Self {
            rotation: UnitQuaternion::from_quaternion(rotation.into_inner()),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn quaternion_norm(&self) -> f64 {
        self.rotation.as_ref().norm()
    }

    /// `self ∘ rhs`: applies `rhs` first. Matches matrix multiplication.
    pub fn compose(&self, rhs: &Se3) -> Se3 {
        Se3::new(
            self.rotation * rhs.rotation,
            self.rotation * rhs.translation + self.translation,
        )
    }

    pub fn invert(&self) -> Se3 {
        let inv = self.rotation.inverse();
        Se3::new(inv, -(inv * self.translation))
    }

    pub fn apply(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Rotation by intrinsic yaw (z), pitch (y), roll (x), in degrees:
    /// `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn rotation_rpy_deg(yaw: f64, pitch: f64, roll: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_euler_angles(
            roll.to_radians(),
            pitch.to_radians(),
            yaw.to_radians(),
        )
    }

    /// Geodesic rotation angle to `other`, degrees.
    pub fn rotation_angle_to_deg(&self, other: &Se3) -> f64 {
        self.rotation.angle_to(&other.rotation).to_degrees()
    }
}

#[derive(Serialize, Deserialize)]
struct Se3Repr {
    /// `[w, x, y, z]`
    q: [f64; 4],
    /// `[x, y, z]` millimeters
    t: [f64; 3],
}

impl Serialize for Se3 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let q = self.rotation.as_ref();
        Se3Repr {
            q: [q.w, q.i, q.j, q.k],
            t: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Se3 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = Se3Repr::deserialize(deserializer)?;
        let q = Quaternion::new(repr.q[0], repr.q[1], repr.q[2], repr.q[3]);
        Se3::from_parts(q, Vector3::new(repr.t[0], repr.t[1], repr.t[2]))
            .map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// Tracked rigid bodies on the bench.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Body {
    EndEffector,
    Femur,
    Tibia,
    Camera,
}

impl Body {
    pub const ALL: [Body; 4] = [Body::EndEffector, Body::Femur, Body::Tibia, Body::Camera];
}

/// Time-indexed transforms between tracked bodies.
///
/// Edges are stored exactly as inserted, one per `(pair, timestamp)`. A
/// lookup at time `t` uses, per edge, the latest sample at or before `t`
/// within the staleness bound, then composes transforms along a shortest
/// edge path. The tracker reports bodies in the camera frame, so the usual
/// topology is a star centered on [`Body::Camera`]; composition itself is
/// topology-agnostic.
///
/// Directions follow `T[a->b]`, mapping coordinates in frame `a` into frame
/// `b`. An edge inserted as `a->b` is usable in both directions.
#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    edges: HashMap<(Body, Body), BTreeMap<i64, Se3>>,
    max_staleness_us: i64,
}

impl PoseGraph {
    pub fn new(max_staleness_us: i64) -> Self {
        Self {
            edges: HashMap::new(),
            max_staleness_us,
        }
    }

    pub fn max_staleness_us(&self) -> i64 {
        self.max_staleness_us
    }

    /// Records `T[from->to]` observed at `t_us`.
    pub fn insert(
        &mut self,
        from: Body,
        to: Body,
        t_us: i64,
        pose: Se3,
    ) -> Result<(), GeometryError> {
        let series = self.edges.entry((from, to)).or_default();
        if series.contains_key(&t_us) {
            return Err(GeometryError::DuplicateEdge {
                a: from,
                b: to,
                t_us,
            });
        }
        series.insert(t_us, pose);
        Ok(())
    }

    fn live_edge(&self, from: Body, to: Body, t_us: i64) -> Option<Se3> {
        let lookup = |a: Body, b: Body| -> Option<Se3> {
            let series = self.edges.get(&(a, b))?;
            let (&ts, pose) = series.range(..=t_us).next_back()?;
            (t_us - ts <= self.max_staleness_us).then_some(*pose)
        };
        lookup(from, to).or_else(|| lookup(to, from).map(|p| p.invert()))
    }

    fn has_live_edge(&self, body: Body, t_us: i64) -> bool {
        Body::ALL
            .into_iter()
            .any(|other| other != body && self.live_edge(body, other, t_us).is_some())
    }

    /// `T[from->to]` at `t_us`, composed along a shortest live-edge path.
    pub fn relative(&self, from: Body, to: Body, t_us: i64) -> Result<Se3, GeometryError> {
        if from == to {
            return Ok(Se3::identity());
        }
        for body in [from, to] {
            if !self.has_live_edge(body, t_us) {
                return Err(GeometryError::Unobservable { body, t_us });
            }
        }
        // BFS over bodies; accumulated[b] = T[from->b].
        let mut accumulated: HashMap<Body, Se3> = HashMap::new();
        accumulated.insert(from, Se3::identity());
        let mut queue = VecDeque::from([from]);
        while let Some(here) = queue.pop_front() {
            let t_from_here = accumulated[&here];
            if here == to {
                return Ok(t_from_here);
            }
            for next in Body::ALL {
                if accumulated.contains_key(&next) {
                    continue;
                }
                if let Some(t_here_next) = self.live_edge(here, next, t_us) {
                    accumulated.insert(next, t_here_next.compose(&t_from_here));
                    queue.push_back(next);
                }
            }
        }
        Err(GeometryError::Unobservable { body: to, t_us })
    }
}

/// A named anatomical reference point, bone-frame millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub name: String,
    pub position: [f64; 3],
}

impl Landmark {
    pub fn point(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

/// Rectangular cut window inside a resection plane. Extents are
/// half-extents, millimeters; the blade sweeps along `axis_u` from
/// `center - extent_u * axis_u` to `center + extent_u * axis_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneWindow {
    pub center: Vector3<f64>,
    pub axis_u: Vector3<f64>,
    pub axis_v: Vector3<f64>,
    pub extent_u: f64,
    pub extent_v: f64,
}

/// One planar resection with its window and a difficulty weight that scales
/// executed-cut noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ResectionPlane {
    pub id: u32,
    pub name: String,
    pub normal: Vector3<f64>,
    /// Signed plane offset: `normal . x = offset` on the plane.
    pub offset: f64,
    pub window: PlaneWindow,
    pub difficulty: f64,
}

const ORTHO_TOL: f64 = 1e-9;

impl ResectionPlane {
    /// Validates unit lengths, orthogonality, right-handedness
    /// (`axis_u x axis_v = normal`), and that the window lies on the plane.
    pub fn new(
        id: u32,
        name: impl Into<String>,
        normal: Vector3<f64>,
        offset: f64,
        window: PlaneWindow,
        difficulty: f64,
    ) -> Result<Self, GeometryError> {
        let name = name.into();
        let fail = |reason: &str| GeometryError::InvalidPlane {
            name: name.clone(),
            reason: reason.into(),
        };
        for (label, v) in [
            ("normal", &normal),
            ("axis_u", &window.axis_u),
            ("axis_v", &window.axis_v),
        ] {
            if (v.norm() - 1.0).abs() > ORTHO_TOL {
                return Err(fail(&format!("{label} is not unit length")));
            }
        }
        if normal.dot(&window.axis_u).abs() > ORTHO_TOL
            || normal.dot(&window.axis_v).abs() > ORTHO_TOL
            || window.axis_u.dot(&window.axis_v).abs() > ORTHO_TOL
        {
            return Err(fail("window axes are not orthogonal to each other and the normal"));
        }
        if (window.axis_u.cross(&window.axis_v) - normal).norm() > 1e-6 {
            return Err(fail("axis_u x axis_v must equal the normal (right-handed)"));
        }
        if (normal.dot(&window.center) - offset).abs() > 1e-6 {
            return Err(fail("window center is off the plane"));
        }
        if window.extent_u <= 0.0 || window.extent_v <= 0.0 {
            return Err(fail("window extents must be positive"));
        }
        if !(difficulty.is_finite() && difficulty >= 0.0) {
            return Err(fail("difficulty must be finite and non-negative"));
        }
        Ok(Self {
            id,
            name,
            normal,
            offset,
            window,
            difficulty,
        })
    }

    /// Frame with origin at the window center and rotation columns
    /// `[axis_u, axis_v, normal]`, so the blade normal is the local z axis.
    pub fn canonical_frame(&self) -> Se3 {
        let r = nalgebra::Rotation3::from_basis_unchecked(&[
            self.window.axis_u,
            self.window.axis_v,
            self.normal,
        ]);
        Se3::new(UnitQuaternion::from_rotation_matrix(&r), self.window.center)
    }

    /// Sweep start: `center - extent_u * axis_u`.
    pub fn entry_point(&self) -> Vector3<f64> {
        self.window.center - self.window.axis_u * self.window.extent_u
    }

    /// Sweep end: `center + extent_u * axis_u`.
    pub fn sweep_end_point(&self) -> Vector3<f64> {
        self.window.center + self.window.axis_u * self.window.extent_u
    }

    /// One full pass along `axis_u`.
    pub fn sweep_length(&self) -> f64 {
        2.0 * self.window.extent_u
    }

    /// Tool pose parked at the sweep start, blade normal along the plane
    /// normal.
    pub fn entry_pose(&self) -> Se3 {
        let frame = self.canonical_frame();
        Se3::new(*frame.rotation(), self.entry_point())
    }

    pub fn contains_in_window(&self, point: &Vector3<f64>, tol: f64) -> bool {
        let d = point - self.window.center;
        (self.normal.dot(&d)).abs() <= tol
            && self.window.axis_u.dot(&d).abs() <= self.window.extent_u + tol
            && self.window.axis_v.dot(&d).abs() <= self.window.extent_v + tol
    }
}

/// Angular and translational deviation of a tool pose from a plane:
/// `(degrees, millimeters)`.
///
/// The blade normal is the tool frame's z axis. The angle ignores the
/// normal's sign, so a flipped blade still counts as aligned; the distance
/// is the unsigned point-to-plane distance of the tool origin.
pub fn alignment_error(tool: &Se3, plane: &ResectionPlane) -> (f64, f64) {
    let blade = tool.rotation() * Vector3::z();
    // atan2 keeps the angle well-conditioned near 0, where acos of a dot
    // product loses ~8 digits to rounding.
    let sine = blade.cross(&plane.normal).norm();
    let cosine = blade.dot(&plane.normal).abs();
    let angle_deg = sine.atan2(cosine).to_degrees();
    let dist_mm = (plane.normal.dot(&tool.translation) - plane.offset).abs();
    (angle_deg, dist_mm)
}

/// Uniform points over the plane window, deterministic in `(seed, plane.id)`.
pub fn sample_plane_patch(plane: &ResectionPlane, n: usize, seed: u64) -> Vec<Vector3<f64>> {
    use rand::Rng;
    let mut rng = rng::stream(seed, TAG_PATCH, plane.id as u64);
    let w = &plane.window;
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(-w.extent_u..=w.extent_u);
            let v: f64 = rng.gen_range(-w.extent_v..=w.extent_v);
            w.center + w.axis_u * u + w.axis_v * v
        })
        .collect()
}

/// Builds an orthonormal, right-handed window basis for a given normal; used
/// by tests and plan authoring, not by the load path (plans ship explicit
/// axes).
pub fn window_basis(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let n = Unit::new_normalize(*normal);
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let axis_v = Unit::new_normalize(n.cross(&helper));
    let axis_u = Unit::new_normalize(axis_v.cross(&n));
    (axis_u.into_inner(), axis_v.into_inner())
}
