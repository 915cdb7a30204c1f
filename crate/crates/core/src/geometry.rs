//! Road topology and specular-reflection geometry.
//!
//! The road is the x-axis (`y = 0`). The serving base station sits at negative
//! `y`, the reflecting panels at positive `y`. Panels are vertical planes that
//! cover the whole road height, so all reflection geometry is resolved in the
//! horizontal plane and heights only enter through path lengths.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RetfError};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Horizontal (xy-plane) distance.
    pub fn horizontal_distance(self, o: Vec3) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Azimuth of the horizontal projection, in `(-π, π]`.
    pub fn azimuth(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
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
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A transmitter on the road side. Index 0 is the serving base station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmitter {
    pub index: usize,
    pub position: Vec3,
    /// Boresight of the antenna panel (unit vector).
    pub orientation: Vec3,
    pub power_w: f64,
}

impl Transmitter {
    pub fn new(index: usize, position: Vec3, orientation: Vec3, power_w: f64) -> Result<Self> {
        if !(power_w > 0.0 && power_w.is_finite()) {
            return Err(RetfError::InvalidScenario(format!(
                "transmitter {index}: power must be positive, got {power_w}"
            )));
        }
        if !position.is_finite() {
            return Err(RetfError::InvalidScenario(format!(
                "transmitter {index}: non-finite position"
            )));
        }
        let orientation = orientation.normalized().ok_or_else(|| {
            RetfError::InvalidScenario(format!("transmitter {index}: zero orientation"))
        })?;
        Ok(Self {
            index,
            position,
            orientation,
            power_w,
        })
    }

    pub fn is_serving(&self) -> bool {
        self.index == 0
    }
}

/// Kinematic state of the target vehicle. The primary panel faces the base
/// station side (`-y`), the secondary panel the reflector side (`+y`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetVehicleState {
    pub position_x: f64,
    pub time: f64,
    pub speed: f64,
    pub pap_orientation: Vec3,
    pub sap_orientation: Vec3,
}

impl TargetVehicleState {
    pub fn at_time(time: f64, speed: f64) -> Self {
        Self {
            position_x: speed * time,
            time,
            speed,
            pap_orientation: Vec3::new(0.0, -1.0, 0.0),
            sap_orientation: Vec3::new(0.0, 1.0, 0.0),
        }
    }

    pub fn at_position(x: f64, speed: f64) -> Self {
        Self::at_time(x / speed, speed)
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.position_x, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitiveUser {
    /// Where the user meets the target vehicle (its position for a stationary user).
    pub encounter_x: f64,
    pub lateral_y: f64,
    /// Index of the serving transmitter, in `1..=N_G`.
    pub serving_index: usize,
    /// Signed velocity along x; 0 for a stationary user.
    pub speed: f64,
}

impl SensitiveUser {
    pub fn stationary(x: f64, y: f64, serving_index: usize) -> Self {
        Self {
            encounter_x: x,
            lateral_y: y,
            serving_index,
            speed: 0.0,
        }
    }

    pub fn is_mobile(&self) -> bool {
        self.speed != 0.0
    }

    /// Time at which the target vehicle passes the user.
    pub fn encounter_time(&self, rated_speed: f64) -> f64 {
        self.encounter_x / rated_speed
    }

    pub fn x_at(&self, t: f64, rated_speed: f64) -> f64 {
        self.encounter_x + self.speed * (t - self.encounter_time(rated_speed))
    }

    pub fn position_at(&self, t: f64, rated_speed: f64) -> Vec3 {
        Vec3::new(self.x_at(t, rated_speed), self.lateral_y, 0.0)
    }
}

/// A reflecting panel (one virtual group of patches, or a single patch).
///
/// `start_point`/`end_point` are the unrotated endpoints on the panel line;
/// `azimuth` is the direction of the panel normal (`π/2` when the panel is
/// parallel to the road). A rotated panel pivots about its midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectivePanel {
    pub start_point: Vec3,
    pub end_point: Vec3,
    pub azimuth: f64,
    pub zenith: f64,
    pub length: f64,
}

impl EffectivePanel {
    pub fn parallel(start_x: f64, end_x: f64, y: f64) -> Result<Self> {
        if !(start_x < end_x) {
            return Err(RetfError::InvalidScenario(format!(
                "panel start {start_x} must lie left of end {end_x}"
            )));
        }
        Ok(Self {
            start_point: Vec3::new(start_x, y, 0.0),
            end_point: Vec3::new(end_x, y, 0.0),
            azimuth: std::f64::consts::FRAC_PI_2,
            zenith: std::f64::consts::FRAC_PI_2,
            length: end_x - start_x,
        })
    }

    pub fn rotated(self, azimuth: f64) -> Self {
        Self { azimuth, ..self }
    }

    pub fn y(&self) -> f64 {
        self.start_point.y
    }

    pub fn midpoint(&self) -> Vec3 {
        (self.start_point + self.end_point) * 0.5
    }

    /// Horizontal unit normal `(cos α, sin α, 0)`.
    pub fn normal(&self) -> Vec3 {
        Vec3::new(self.azimuth.cos(), self.azimuth.sin(), 0.0)
    }

    /// Unit vector along the panel, pointing from the start to the end side.
    pub fn tangent(&self) -> Vec3 {
        Vec3::new(self.azimuth.sin(), -self.azimuth.cos(), 0.0)
    }

    pub fn is_parallel_to_road(&self) -> bool {
        (self.azimuth - std::f64::consts::FRAC_PI_2).abs() < 1e-15
    }

    /// Endpoints after rotation about the midpoint.
    pub fn rotated_endpoints(&self) -> (Vec3, Vec3) {
        let c = self.midpoint();
        let t = self.tangent() * (0.5 * self.length);
        (c - t, c + t)
    }
}

/// Road-axis image of one panel endpoint: the point where the ray from the
/// base station, reflected at `P_x` on the (unrotated) panel line, meets the road.
fn mirror_point(bs: Vec3, panel_y: f64, panel_x: f64) -> f64 {
    let (qx, qy) = (bs.x, bs.y);
    (qy - 2.0 * panel_y) / (qy - panel_y) * panel_x + qx * panel_y / (qy - panel_y)
}

/// Endpoints `(B⁻, B⁺)` of the direct reflection area of an unrotated panel.
pub fn mirror_dra_endpoints(bs: Vec3, panel: &EffectivePanel) -> Result<(f64, f64)> {
    let py = panel.y();
    if bs.y == py || !(bs.y - py).is_finite() {
        return Err(RetfError::InvalidScenario(format!(
            "base station y ({}) coincides with panel line y ({py})",
            bs.y
        )));
    }
    let lo = mirror_point(bs, py, panel.start_point.x);
    let hi = mirror_point(bs, py, panel.end_point.x);
    Ok((lo.min(hi), lo.max(hi)))
}

/// Specular point on a (possibly rotated) panel for the path BS → panel → vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectingPoint {
    pub point: Vec3,
    /// True when the geometric specular point fell outside the panel and was
    /// clamped to the nearest endpoint (vehicle in an indirect area).
    pub clamped: bool,
}

pub fn reflecting_point(bs: Vec3, vehicle: Vec3, panel: &EffectivePanel) -> Result<ReflectingPoint> {
    let c = panel.midpoint();
    let n = panel.normal();
    let t = panel.tangent();
    let sq = (bs - c).dot(n);
    let sv = (vehicle - c).dot(n);
    if sq * sv <= 0.0 {
        return Err(RetfError::InvalidScenario(
            "base station and vehicle must lie strictly on the same side of the panel".into(),
        ));
    }
    // In-plane coordinates: u along the panel, s off the plane.
    let uq = (bs - c).dot(t);
    let uv = (vehicle - c).dot(t);
    // Mirror the BS to (uq, -sq); the line to (uv, sv) crosses s = 0 here.
    let u = uq + (uv - uq) * sq / (sq + sv);
    let half = 0.5 * panel.length;
    let eps = 1e-9 * half.max(1.0);
    let (u, clamped) = if u < -half - eps {
        (-half, true)
    } else if u > half + eps {
        (half, true)
    } else {
        (u.clamp(-half, half), false)
    };
    let foot = c + t * u;
    let dq = bs.horizontal_distance(foot);
    let dv = vehicle.horizontal_distance(foot);
    let z = if dq + dv > 0.0 {
        bs.z + (vehicle.z - bs.z) * dq / (dq + dv)
    } else {
        bs.z
    };
    Ok(ReflectingPoint {
        point: Vec3::new(foot.x, foot.y, z),
        clamped,
    })
}

/// Specular point on the unbounded panel line `y = standoff` for the path
/// `bs -> line -> rx`, with the height interpolated along the horizontal legs.
pub fn panel_line_point(bs: Vec3, rx: Vec3, standoff: f64) -> Option<Vec3> {
    let sq = standoff - bs.y;
    let sv = standoff - rx.y;
    if !(sq > 0.0 && sv > 0.0) {
        return None;
    }
    let x = bs.x + (rx.x - bs.x) * sq / (sq + sv);
    let foot = Vec3::new(x, standoff, 0.0);
    let dq = bs.horizontal_distance(foot);
    let dv = rx.horizontal_distance(foot);
    Some(Vec3::new(x, standoff, bs.z + (rx.z - bs.z) * dq / (dq + dv)))
}

/// Road x-coordinate where a ray from `bs`, reflected at `point` off a surface
/// with horizontal normal `normal`, lands on `y = 0`. `None` when the reflected
/// ray does not head back toward the road.
pub fn specular_landing(bs: Vec3, point: Vec3, normal: Vec3) -> Option<f64> {
    let dx = point.x - bs.x;
    let dy = point.y - bs.y;
    let (nx, ny) = (normal.x, normal.y);
    let k = 2.0 * (dx * nx + dy * ny);
    let (rx, ry) = (dx - k * nx, dy - k * ny);
    if ry * point.y >= 0.0 {
        return None;
    }
    Some(point.x - point.y * rx / ry)
}

fn check_threshold(decay: f64, threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(RetfError::InvalidScenario(format!(
            "reflection threshold must lie in (0, 1], got {threshold}"
        )));
    }
    if !(decay > 0.0 && decay.is_finite()) {
        return Err(RetfError::InvalidScenario(format!(
            "bias-loss decay must be positive, got {decay}"
        )));
    }
    Ok(())
}

/// Width of one indirect area: the distance over which `e^{-χ d²}` falls to `ω₀`.
pub fn idra_half_width(decay: f64, threshold: f64) -> Result<f64> {
    check_threshold(decay, threshold)?;
    Ok((-threshold.ln() / decay).sqrt())
}

/// Approximate length of a panel's reflection area (direct part plus both indirect flanks).
pub fn ra_length(panel: &EffectivePanel, bs: Vec3, decay: f64, threshold: f64) -> Result<f64> {
    let half = idra_half_width(decay, threshold)?;
    let py = panel.y();
    if bs.y == py {
        return Err(RetfError::InvalidScenario(
            "base station y coincides with panel line".into(),
        ));
    }
    let scale = (bs.y - 2.0 * py) / (bs.y - py);
    Ok(scale * panel.length + 2.0 * half)
}

/// Reflection area of one panel on the road axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReflectionArea {
    pub dra_start: f64,
    pub dra_end: f64,
    pub ra_start: f64,
    pub ra_end: f64,
    pub decay: f64,
    pub threshold: f64,
    pub ra_length: f64,
}

impl ReflectionArea {
    pub fn from_dra(dra_start: f64, dra_end: f64, decay: f64, threshold: f64) -> Result<Self> {
        let half = idra_half_width(decay, threshold)?;
        let (lo, hi) = (dra_start.min(dra_end), dra_start.max(dra_end));
        Ok(Self {
            dra_start: lo,
            dra_end: hi,
            ra_start: lo - half,
            ra_end: hi + half,
            decay,
            threshold,
            ra_length: hi - lo + 2.0 * half,
        })
    }

    pub fn for_panel(panel: &EffectivePanel, bs: Vec3, decay: f64, threshold: f64) -> Result<Self> {
        let (b0, b1) = mirror_dra_endpoints(bs, panel)?;
        Self::from_dra(b0, b1, decay, threshold)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.ra_start && x <= self.ra_end
    }

    pub fn in_dra(&self, x: f64) -> bool {
        x >= self.dra_start && x <= self.dra_end
    }

    pub fn dra_midpoint(&self) -> f64 {
        0.5 * (self.dra_start + self.dra_end)
    }

    /// Distance from `x` to the direct area (0 inside it).
    pub fn offset_from_dra(&self, x: f64) -> f64 {
        if x < self.dra_start {
            self.dra_start - x
        } else if x > self.dra_end {
            x - self.dra_end
        } else {
            0.0
        }
    }

    /// Single-panel bias-loss power ratio: 1 in the direct area, Gaussian decay
    /// across the indirect flanks, 0 once it drops below the threshold.
    pub fn ratio(&self, x: f64) -> f64 {
        let d = self.offset_from_dra(x);
        if d == 0.0 {
            return 1.0;
        }
        let w = (-self.decay * d * d).exp();
        if w < self.threshold || !self.contains(x) {
            0.0
        } else {
            w
        }
    }

    /// Overlap length with `[lo, hi]`.
    pub fn overlap(&self, lo: f64, hi: f64) -> f64 {
        (self.ra_end.min(hi) - self.ra_start.max(lo)).max(0.0)
    }
}
