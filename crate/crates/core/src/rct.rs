//! Rotational collaborative teams.
//!
//! Every patch pivots about its own centre, so a rotated group is a row of
//! parallel facets on the panel line. An assisting group is rotated so the
//! ray reflected at its midpoint lands on the middle of the main group's
//! direct area; facets whose footprint falls outside that area are switched
//! off.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::Serialize;

use crate::dgv::{DgvContext, VirtualGroupSet};
use crate::error::Result;
use crate::geometry::{ReflectionArea, Transmitter, Vec3};
use crate::propagation::{received_power, AntennaPattern, LossModel, Path, Receiver};

/// Normal angle for a facet row at `x_a` (on the panel line `y = standoff`)
/// that sends the BS ray to road point `x_m`. Signed distances:
/// `h = x_m - x_a`, `h0 = x_m - Q_x`.
pub fn rotation_angle_at(bs: Vec3, standoff: f64, x_a: f64, x_m: f64) -> f64 {
    let q0 = -bs.y;
    let d0 = standoff;
    let h = x_m - x_a;
    let h0 = x_m - bs.x;
    let sigma = ((h - h0).powi(2) + (d0 + q0).powi(2)).sqrt() / (h * h + d0 * d0).sqrt();
    let num = (sigma - 1.0) * h + h0;
    let den = (sigma - 1.0) * d0 - q0;
    if den == 0.0 {
        return FRAC_PI_2;
    }
    let a = (num / den).atan();
    if a <= 0.0 {
        a + PI
    } else {
        a
    }
}

/// Rotation of group `avrg` toward the direct-area midpoint of `mvrg`.
pub fn rotation_angle(ctx: &DgvContext, set: &VirtualGroupSet, mvrg: usize, avrg: usize) -> Result<f64> {
    let m = set.groups[mvrg];
    let a = set.groups[avrg];
    let x_m = ctx.group_area(m.start_idx, m.end_idx)?.dra_midpoint();
    let x_a = ctx.array.effective_panel(a.start_idx, a.end_idx).midpoint().x;
    Ok(rotation_angle_at(ctx.bs, ctx.array.standoff, x_a, x_m))
}

fn normal(alpha: f64) -> (f64, f64) {
    (alpha.cos(), alpha.sin())
}

/// Where the BS ray reflected at `(x_p, standoff)` by a facet with normal
/// angle `alpha` crosses the line `y = y_target`.
pub fn facet_landing(bs: Vec3, standoff: f64, x_p: f64, alpha: f64, y_target: f64) -> Option<f64> {
    let (nx, ny) = normal(alpha);
    let dx = x_p - bs.x;
    let dy = standoff - bs.y;
    let k = 2.0 * (dx * nx + dy * ny);
    let (rx, ry) = (dx - k * nx, dy - k * ny);
    if ry >= 0.0 || y_target >= standoff {
        return None;
    }
    Some(x_p + (y_target - standoff) * rx / ry)
}

/// Facet range `(first, last)` inside group `avrg` whose footprints reach the
/// direct area of `mvrg`, or `None` when nothing lands there.
pub fn active_patch_bounds(
    ctx: &DgvContext,
    set: &VirtualGroupSet,
    mvrg: usize,
    avrg: usize,
    alpha: f64,
) -> Result<Option<(usize, usize)>> {
    let m = set.groups[mvrg];
    let a = set.groups[avrg];
    let target = ctx.group_area(m.start_idx, m.end_idx)?;
    let arr = &ctx.array;
    let land = |x: f64| facet_landing(ctx.bs, arr.standoff, x, alpha, 0.0);

    let mut first = None;
    let mut last = None;
    for e in a.start_idx..=a.end_idx {
        if matches!(land(arr.patch_start(e)), Some(l) if l <= target.dra_start) {
            first = Some(e);
        }
    }
    for e in (a.start_idx..=a.end_idx).rev() {
        if matches!(land(arr.patch_end(e)), Some(l) if l >= target.dra_end) {
            last = Some(e);
        }
    }
    let first = first.unwrap_or(a.start_idx);
    let last = last.unwrap_or(a.end_idx);
    if first > last {
        return Ok(None);
    }
    // Reject ranges whose footprint misses the target area altogether.
    let (Some(lo), Some(hi)) = (land(arr.patch_start(first)), land(arr.patch_end(last))) else {
        return Ok(None);
    };
    let (lo, hi) = (lo.min(hi), lo.max(hi));
    if hi < target.dra_start || lo > target.dra_end {
        return Ok(None);
    }
    Ok(Some((first, last)))
}

/// One reflecting facet row as seen from the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reflector {
    pub group: usize,
    pub first: usize,
    pub last: usize,
    /// Facet normal angle; `π/2` for an unrotated group.
    pub alpha: f64,
    /// Road footprint of the facet row.
    pub area: ReflectionArea,
}

impl Reflector {
    pub fn new(ctx: &DgvContext, group: usize, first: usize, last: usize, alpha: f64) -> Result<Option<Self>> {
        let arr = &ctx.array;
        let lo = facet_landing(ctx.bs, arr.standoff, arr.patch_start(first), alpha, 0.0);
        let hi = facet_landing(ctx.bs, arr.standoff, arr.patch_end(last), alpha, 0.0);
        let (Some(lo), Some(hi)) = (lo, hi) else {
            return Ok(None);
        };
        Ok(Some(Self {
            group,
            first,
            last,
            alpha,
            area: ReflectionArea::from_dra(lo, hi, ctx.decay, ctx.threshold)?,
        }))
    }

    pub fn unrotated(ctx: &DgvContext, set: &VirtualGroupSet, group: usize) -> Result<Self> {
        let g = set.groups[group];
        Ok(Self::new(ctx, group, g.start_idx, g.end_idx, FRAC_PI_2)?
            .expect("flat panel always reflects toward the road"))
    }

    pub fn is_rotated(&self) -> bool {
        self.alpha != FRAC_PI_2
    }

    /// Reflecting point on the facet row for a receiver at `rx`; clamped to
    /// the row's ends when the specular point falls outside.
    pub fn facet_point(&self, ctx: &DgvContext, rx: Vec3) -> Vec3 {
        let arr = &ctx.array;
        let (mut lo, mut hi) = (arr.patch_start(self.first), arr.patch_end(self.last));
        let f = |x: f64| facet_landing(ctx.bs, arr.standoff, x, self.alpha, rx.y).map(|l| l - rx.x);
        let x = match (f(lo), f(hi)) {
            (Some(a), _) if a >= 0.0 => lo,
            (_, Some(b)) if b <= 0.0 => hi,
            (Some(_), Some(_)) => {
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    match f(mid) {
                        Some(v) if v < 0.0 => lo = mid,
                        _ => hi = mid,
                    }
                }
                0.5 * (lo + hi)
            }
            _ => 0.5 * (lo + hi),
        };
        let foot = Vec3::new(x, arr.standoff, 0.0);
        let dq = ctx.bs.horizontal_distance(foot);
        let dv = rx.horizontal_distance(foot);
        Vec3::new(x, arr.standoff, ctx.bs.z + (rx.z - ctx.bs.z) * dq / (dq + dv))
    }

    /// Received reflex power at `rx` (bias taken at the receiver's road x).
    pub fn power(
        &self,
        ctx: &DgvContext,
        bs: &Transmitter,
        tx_pattern: &AntennaPattern,
        rx: &Receiver<'_>,
        model: &LossModel,
    ) -> Result<f64> {
        let bias = self.area.ratio(rx.position.x);
        if bias <= 0.0 {
            return Ok(0.0);
        }
        let point = self.facet_point(ctx, rx.position);
        received_power(bs, tx_pattern, rx, Path::Reflex { point, bias }, model)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RctAssignment {
    pub teams: [Vec<usize>; 2],
}

impl RctAssignment {
    pub fn team_of(&self, group: usize) -> usize {
        group % 2
    }

    pub fn is_degenerate(&self) -> bool {
        self.teams[1].is_empty()
    }
}

/// Even road-order groups to team 0, odd ones to team 1.
pub fn ans_assign(groups: usize) -> RctAssignment {
    RctAssignment {
        teams: [
            (0..groups).step_by(2).collect(),
            (1..groups).step_by(2).collect(),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanEntry {
    pub group: usize,
    pub rotation_angle: f64,
    pub active_range: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationPlan {
    pub mvrg: usize,
    pub entries: Vec<PlanEntry>,
}

/// Team plan for the vehicle in region `mvrg`: the nearest same-team groups
/// within `max_distance` (by panel midpoint), up to `team_size - 1`.
pub fn plan_for_region(
    ctx: &DgvContext,
    set: &VirtualGroupSet,
    mvrg: usize,
    team_size: usize,
    max_distance: f64,
) -> Result<RotationPlan> {
    let mid = |g: usize| {
        let v = set.groups[g];
        ctx.array.effective_panel(v.start_idx, v.end_idx).midpoint().x
    };
    let xm = mid(mvrg);
    let mut cands: Vec<(f64, usize)> = (0..set.groups.len())
        .filter(|&g| g != mvrg && g % 2 == mvrg % 2)
        .map(|g| ((mid(g) - xm).abs(), g))
        .filter(|&(d, _)| d <= max_distance)
        .collect();
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut entries = Vec::new();
    for &(_, g) in cands.iter().take(team_size.saturating_sub(1)) {
        let alpha = rotation_angle(ctx, set, mvrg, g)?;
        entries.push(PlanEntry {
            group: g,
            rotation_angle: alpha,
            active_range: active_patch_bounds(ctx, set, mvrg, g, alpha)?,
        });
    }
    Ok(RotationPlan { mvrg, entries })
}

/// Rotated facet rows of a plan (assisting groups only).
pub fn plan_reflectors(ctx: &DgvContext, plan: &RotationPlan) -> Result<Vec<Reflector>> {
    let mut out = Vec::new();
    for e in &plan.entries {
        if let Some((f, l)) = e.active_range {
            if let Some(r) = Reflector::new(ctx, e.group, f, l, e.rotation_angle)? {
                out.push(r);
            }
        }
    }
    Ok(out)
}

/// Main group plus its assisting groups; the aggregate reflex power at `rx`
/// is the sum over the returned rows.
pub fn rct_reflectors(ctx: &DgvContext, set: &VirtualGroupSet, plan: &RotationPlan) -> Result<Vec<Reflector>> {
    let mut out = vec![Reflector::unrotated(ctx, set, plan.mvrg)?];
    out.extend(plan_reflectors(ctx, plan)?);
    Ok(out)
}

pub fn rct_enhancement(
    ctx: &DgvContext,
    reflectors: &[Reflector],
    bs: &Transmitter,
    tx_pattern: &AntennaPattern,
    rx: &Receiver<'_>,
    model: &LossModel,
) -> Result<f64> {
    let mut total = 0.0;
    for r in reflectors {
        total += r.power(ctx, bs, tx_pattern, rx, model)?;
    }
    Ok(total)
}

/// Region served at road position `x`: a group whose direct area holds `x`,
/// else the group with the strongest indirect coverage.
pub fn region_of(areas: &[ReflectionArea], x: f64) -> Option<usize> {
    if let Some(i) = areas.iter().position(|a| a.in_dra(x)) {
        return Some(i);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, a) in areas.iter().enumerate() {
        let r = a.ratio(x);
        if r > 0.0 && best.is_none_or(|(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    best.map(|b| b.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnsViolation {
    pub region: usize,
    pub available: f64,
    pub required: f64,
}

/// The team serving region `k + 1` stops serving when the vehicle leaves
/// region `k - 1` and must finish rotating before it enters region `k + 1`.
pub fn ans_feasibility(ctx: &DgvContext, areas: &[ReflectionArea]) -> Vec<AnsViolation> {
    let v = ctx.rated_speed;
    let tg = ctx.array.switch_time;
    let mut out = Vec::new();
    for k in 1..areas.len() {
        let freed = if k >= 2 { areas[k - 2].ra_end.max(0.0) / v } else { 0.0 };
        let needed = areas[k].ra_start / v;
        let available = needed - freed;
        if available < tg && areas[k].ra_start > 0.0 {
            out.push(AnsViolation {
                region: k,
                available,
                required: tg,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgv::RppArray;

    fn ctx() -> DgvContext {
        let decay = std::f64::consts::LN_10 / 4.0;
        DgvContext {
            array: RppArray::new(80, 4.0, 1.0, 20.0, 0.2, decay).unwrap(),
            bs: Vec3::new(200.0, -20.0, 10.0),
            decay,
            threshold: 0.1,
            rated_speed: 20.0,
            road_length: 400.0,
        }
    }

    fn uniform(n: usize, size: usize) -> VirtualGroupSet {
        VirtualGroupSet::from_mask(&(0..n).map(|e| e % (size + 1) != size).collect::<Vec<_>>())
    }

    #[test]
    fn unrotated_limit() {
        // A facet aimed at its own mirror image needs no rotation.
        let bs = Vec3::new(0.0, -10.0, 0.0);
        let x_a = 5.0;
        let mirror = (bs.y - 2.0 * 10.0) / (bs.y - 10.0) * x_a + bs.x * 10.0 / (bs.y - 10.0);
        let a = rotation_angle_at(bs, 10.0, x_a, mirror);
        assert!((a - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn rotation_matches_ray_trace() {
        // q0 = 10, d0 = 10, h0 = 20, h = 40.
        let bs = Vec3::new(0.0, -10.0, 0.0);
        let x_m = 20.0;
        let x_a = -20.0;
        let a = rotation_angle_at(bs, 10.0, x_a, x_m);
        assert!(a > 0.0 && a < PI);
        let land = facet_landing(bs, 10.0, x_a, a, 0.0).unwrap();
        assert!((land - x_m).abs() < 1e-9);
        let sigma = (800.0f64 / 1700.0).sqrt();
        let t = ((sigma - 1.0) * 40.0 + 20.0) / ((sigma - 1.0) * 10.0 - 10.0);
        assert!(((a.tan()) - t).abs() < 1e-9);
    }

    #[test]
    fn beta_at_forty_five_degrees() {
        // Facet aimed straight back along the incoming ray at 45 degrees.
        let beta = (10.0f64 + 10.0).atan2(20.0);
        assert!((beta - PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn assisting_midpoint_lands_on_target() {
        let c = ctx();
        let set = uniform(80, 4);
        let areas = c.areas(&set).unwrap();
        for a in 0..set.groups.len() {
            if a == 3 {
                continue;
            }
            let alpha = rotation_angle(&c, &set, 3, a).unwrap();
            let g = set.groups[a];
            let xa = c.array.effective_panel(g.start_idx, g.end_idx).midpoint().x;
            let land = facet_landing(c.bs, 20.0, xa, alpha, 0.0).unwrap();
            assert!((land - areas[3].dra_midpoint()).abs() < 1e-6);
        }
    }

    #[test]
    fn active_bounds_footprint_within_target() {
        let c = ctx();
        let set = uniform(80, 4);
        let areas = c.areas(&set).unwrap();
        let m = 3;
        let patch_ra = c.patch_area(0).unwrap().ra_length;
        for a in [1usize, 5, 7] {
            let alpha = rotation_angle(&c, &set, m, a).unwrap();
            let (f, l) = active_patch_bounds(&c, &set, m, a, alpha).unwrap().unwrap();
            let g = set.groups[a];
            assert!(g.start_idx <= f && f <= l && l <= g.end_idx);
            let r = Reflector::new(&c, a, f, l, alpha).unwrap().unwrap();
            // Overshoot is at most one edge facet's own footprint.
            let lf = Reflector::new(&c, a, f, f, alpha).unwrap().unwrap();
            let rf = Reflector::new(&c, a, l, l, alpha).unwrap().unwrap();
            assert!(r.area.ra_start >= areas[m].ra_start - lf.area.ra_length - 1e-9);
            assert!(r.area.ra_end <= areas[m].ra_end + rf.area.ra_length + 1e-9);
        }
        // Neighbouring same-team groups stay within one flat patch area.
        for a in [1usize, 5] {
            let alpha = rotation_angle(&c, &set, m, a).unwrap();
            let (f, l) = active_patch_bounds(&c, &set, m, a, alpha).unwrap().unwrap();
            let r = Reflector::new(&c, a, f, l, alpha).unwrap().unwrap();
            assert!(r.area.dra_start >= areas[m].ra_start - patch_ra);
            assert!(r.area.dra_end <= areas[m].ra_end + patch_ra);
        }
    }

    #[test]
    fn ans_examples() {
        let a = ans_assign(5);
        assert_eq!(a.teams, [vec![0, 2, 4], vec![1, 3]]);
        let a = ans_assign(2);
        assert_eq!(a.teams, [vec![0], vec![1]]);
        assert!(ans_assign(1).is_degenerate());
        for n in 2..20 {
            let a = ans_assign(n);
            for k in 0..n - 1 {
                assert_ne!(a.team_of(k), a.team_of(k + 1));
            }
        }
    }

    #[test]
    fn team_power_is_monotone() {
        let c = ctx();
        let set = uniform(80, 4);
        let areas = c.areas(&set).unwrap();
        let bs = Transmitter::new(0, c.bs, Vec3::new(0.0, 1.0, 0.0), 40.0).unwrap();
        let pat = AntennaPattern::default();
        let model = LossModel::default();
        let m = 3;
        let rx = Receiver {
            position: Vec3::new(areas[m].dra_midpoint(), 0.0, 0.0),
            orientation: Vec3::new(0.0, 1.0, 0.0),
            pattern: &pat,
        };
        let mut prev = 0.0;
        for team in [1, 2, 4, 8] {
            let plan = plan_for_region(&c, &set, m, team, 1e3).unwrap();
            let refl = rct_reflectors(&c, &set, &plan).unwrap();
            let p = rct_enhancement(&c, &refl, &bs, &pat, &rx, &model).unwrap();
            assert!(p > prev, "team {team}: {p} <= {prev}");
            prev = p;
        }
    }

    #[test]
    fn team_of_one_is_plain_group() {
        let c = ctx();
        let set = uniform(80, 4);
        let plan = plan_for_region(&c, &set, 2, 1, 1e3).unwrap();
        assert!(plan.entries.is_empty());
        let r = rct_reflectors(&c, &set, &plan).unwrap();
        assert_eq!(r.len(), 1);
        let flat = c.group_area(set.groups[2].start_idx, set.groups[2].end_idx).unwrap();
        assert!((r[0].area.dra_start - flat.dra_start).abs() < 1e-9);
        assert!((r[0].area.dra_end - flat.dra_end).abs() < 1e-9);
    }

    #[test]
    fn flat_facet_point_is_specular() {
        let c = ctx();
        let set = VirtualGroupSet::full(80);
        let r = Reflector::unrotated(&c, &set, 0).unwrap();
        let rx = Vec3::new(r.area.dra_midpoint(), 0.0, 0.0);
        let p = r.facet_point(&c, rx);
        let panel = c.array.effective_panel(0, 79);
        let exact = crate::geometry::reflecting_point(c.bs, rx, &panel).unwrap();
        assert!((p.x - exact.point.x).abs() < 1e-9);
        assert!((p.z - exact.point.z).abs() < 1e-9);
    }

    #[test]
    fn region_lookup() {
        let c = ctx();
        let set = uniform(80, 4);
        let areas = c.areas(&set).unwrap();
        assert_eq!(region_of(&areas, areas[2].dra_midpoint()), Some(2));
        assert_eq!(region_of(&areas, -1e3), None);
    }

    #[test]
    fn ans_feasibility_flags_slow_switching() {
        let mut c = ctx();
        let set = uniform(80, 4);
        let areas = c.areas(&set).unwrap();
        assert!(ans_feasibility(&c, &areas).is_empty());
        c.array.switch_time = 50.0;
        assert!(!ans_feasibility(&c, &areas).is_empty());
    }
}
