//! Dynamic group virtualization: partitioning the patch lattice into virtual
//! groups, the state-switching schedule, and the greedy and exhaustive
//! solvers for the grouping objective.
//!
//! A group set is always the set of maximal runs of enabled patches, so it
//! round-trips through an activation mask.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::capacity::{InfluenceTerm, ThroughputRatios};
use crate::error::{Result, RetfError};
use crate::exec::Execution;
use crate::geometry::{EffectivePanel, ReflectionArea, SensitiveUser, Vec3};
use crate::propagation::max_uniform_spacing;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RppArray {
    pub count: usize,
    pub patch_length: f64,
    pub spacing: f64,
    /// Distance from the road line to the panel line.
    pub standoff: f64,
    pub switch_time: f64,
}

impl RppArray {
    /// Validates the lattice; `decay` bounds the spacing so neighbouring
    /// indirect areas overlap without a power hole.
    pub fn new(
        count: usize,
        patch_length: f64,
        spacing: f64,
        standoff: f64,
        switch_time: f64,
        decay: f64,
    ) -> Result<Self> {
        let a = Self {
            count,
            patch_length,
            spacing,
            standoff,
            switch_time,
        };
        a.validate(decay)?;
        Ok(a)
    }

    pub fn validate(&self, decay: f64) -> Result<()> {
        if self.count == 0 {
            return Err(RetfError::InvalidScenario("patch array is empty".into()));
        }
        if !(self.patch_length > 0.0) || !(self.spacing >= 0.0) || !(self.standoff > 0.0) {
            return Err(RetfError::InvalidScenario(
                "patch length and standoff must be positive, spacing non-negative".into(),
            ));
        }
        if !(self.switch_time >= 0.0) {
            return Err(RetfError::InvalidScenario("switch time must be >= 0".into()));
        }
        let bound = max_uniform_spacing(decay);
        if self.spacing > bound + 1e-12 {
            return Err(RetfError::InvalidScenario(format!(
                "patch spacing {} exceeds the coverage bound {bound:.6}",
                self.spacing
            )));
        }
        Ok(())
    }

    pub fn pitch(&self) -> f64 {
        self.patch_length + self.spacing
    }

    pub fn patch_start(&self, e: usize) -> f64 {
        self.pitch() * e as f64
    }

    pub fn patch_end(&self, e: usize) -> f64 {
        self.patch_start(e) + self.patch_length
    }

    /// Minimum group size so a passing vehicle leaves time for switching.
    pub fn min_group_size(&self, rated_speed: f64) -> usize {
        ((rated_speed * self.switch_time / self.pitch()) - 1e-12).ceil().max(1.0) as usize
    }

    /// The panel realised by patches `start..=end`.
    pub fn effective_panel(&self, start: usize, end: usize) -> EffectivePanel {
        EffectivePanel::parallel(self.patch_start(start), self.patch_end(end), self.standoff)
            .expect("positive patch length")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VirtualGroup {
    pub start_idx: usize,
    pub end_idx: usize,
    pub active: bool,
    /// Normal direction of the group's panel; `π/2` when unrotated.
    pub rotation_angle: f64,
}

impl VirtualGroup {
    pub fn new(start_idx: usize, end_idx: usize) -> Self {
        Self {
            start_idx,
            end_idx,
            active: true,
            rotation_angle: FRAC_PI_2,
        }
    }

    pub fn size(&self) -> usize {
        self.end_idx - self.start_idx + 1
    }

    pub fn contains_patch(&self, e: usize) -> bool {
        (self.start_idx..=self.end_idx).contains(&e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VirtualGroupSet {
    pub groups: Vec<VirtualGroup>,
    pub ungrouped: Vec<usize>,
    pub patch_count: usize,
}

impl VirtualGroupSet {
    pub fn from_mask(mask: &[bool]) -> Self {
        let mut groups = Vec::new();
        let mut ungrouped = Vec::new();
        let mut run: Option<usize> = None;
        for (e, &on) in mask.iter().enumerate() {
            match (on, run) {
                (true, None) => run = Some(e),
                (false, Some(s)) => {
                    groups.push(VirtualGroup::new(s, e - 1));
                    run = None;
                }
                _ => {}
            }
            if !on {
                ungrouped.push(e);
            }
        }
        if let Some(s) = run {
            groups.push(VirtualGroup::new(s, mask.len() - 1));
        }
        Self {
            groups,
            ungrouped,
            patch_count: mask.len(),
        }
    }

    pub fn from_bits(bits: u64, n: usize) -> Self {
        let mask: Vec<bool> = (0..n).map(|e| bits >> e & 1 == 1).collect();
        Self::from_mask(&mask)
    }

    pub fn full(n: usize) -> Self {
        Self::from_mask(&vec![true; n])
    }

    pub fn empty(n: usize) -> Self {
        Self::from_mask(&vec![false; n])
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.patch_count];
        for g in &self.groups {
            m[g.start_idx..=g.end_idx].iter_mut().for_each(|b| *b = true);
        }
        m
    }

    pub fn active_patches(&self) -> usize {
        self.groups.iter().map(|g| g.size()).sum()
    }

    /// `(start, end)` pairs in road order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.groups.iter().map(|g| (g.start_idx, g.end_idx)).collect()
    }

    pub fn group_of_patch(&self, e: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains_patch(e))
    }

    /// Range, size and non-overlap constraints.
    pub fn satisfies(&self, min_size: usize) -> bool {
        let sorted = self
            .groups
            .windows(2)
            .all(|w| w[0].end_idx < w[1].start_idx);
        let sized = self.groups.iter().all(|g| g.size() >= min_size);
        let ranged = self
            .groups
            .iter()
            .all(|g| g.start_idx <= g.end_idx && g.end_idx < self.patch_count);
        sorted && sized && ranged
    }
}

/// Geometry shared by the solvers: the lattice, the serving BS and the
/// bias-loss parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgvContext {
    pub array: RppArray,
    pub bs: Vec3,
    pub decay: f64,
    pub threshold: f64,
    pub rated_speed: f64,
    pub road_length: f64,
}

impl DgvContext {
    pub fn min_group_size(&self) -> usize {
        self.array.min_group_size(self.rated_speed)
    }

    pub fn group_area(&self, start: usize, end: usize) -> Result<ReflectionArea> {
        ReflectionArea::for_panel(
            &self.array.effective_panel(start, end),
            self.bs,
            self.decay,
            self.threshold,
        )
    }

    pub fn patch_area(&self, e: usize) -> Result<ReflectionArea> {
        self.group_area(e, e)
    }

    pub fn areas(&self, set: &VirtualGroupSet) -> Result<Vec<ReflectionArea>> {
        set.groups
            .iter()
            .map(|g| self.group_area(g.start_idx, g.end_idx))
            .collect()
    }

    /// Road-clipped RA length.
    pub fn clipped_length(&self, a: &ReflectionArea) -> f64 {
        a.overlap(0.0, self.road_length)
    }

    /// Patch whose area hosts road position `x`: the last patch whose direct
    /// area starts at or before `x`, provided `x` lies inside some patch area.
    pub fn covering_patch(&self, x: f64) -> Result<Option<usize>> {
        let mut inside = false;
        let mut last = None;
        for e in 0..self.array.count {
            let a = self.patch_area(e)?;
            inside |= a.contains(x);
            if a.dra_start <= x {
                last = Some(e);
            }
        }
        Ok(if inside { last.or(Some(0)) } else { None })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SsmAction {
    Activate,
    Deactivate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SsmEvent {
    /// Time the command is issued.
    pub time: f64,
    pub group: usize,
    pub action: SsmAction,
}

/// Activation commands `T_g` ahead of each RA entry, deactivation on exit.
pub fn ssm_schedule(ctx: &DgvContext, set: &VirtualGroupSet) -> Result<Vec<SsmEvent>> {
    let v = ctx.rated_speed;
    let tg = ctx.array.switch_time;
    let mut events = Vec::with_capacity(2 * set.groups.len());
    for (i, a) in ctx.areas(set)?.iter().enumerate() {
        if a.ra_length < v * tg {
            return Err(RetfError::Infeasible(format!(
                "group {i}: RA length {:.3} m is shorter than v_r*T_g = {:.3} m",
                a.ra_length,
                v * tg
            )));
        }
        events.push(SsmEvent {
            time: a.ra_start / v - tg,
            group: i,
            action: SsmAction::Activate,
        });
        events.push(SsmEvent {
            time: a.ra_end / v,
            group: i,
            action: SsmAction::Deactivate,
        });
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.group.cmp(&b.group)));
    Ok(events)
}

/// Replays a schedule: a group is on at `t` once its activation has taken
/// effect (`T_g` after the command) and until its deactivation.
pub fn ssm_active(events: &[SsmEvent], groups: usize, switch_time: f64, t: f64) -> Vec<bool> {
    let mut on = vec![false; groups];
    for ev in events {
        match ev.action {
            SsmAction::Activate if ev.time + switch_time <= t => on[ev.group] = true,
            SsmAction::Deactivate if ev.time <= t => on[ev.group] = false,
            _ => {}
        }
    }
    on
}

/// Groups whose areas the SU occupies while the vehicle is inside them, with
/// the co-located road length.
pub fn influence_set(
    ctx: &DgvContext,
    su: &SensitiveUser,
    areas: &[ReflectionArea],
) -> Vec<InfluenceTerm> {
    let v = ctx.rated_speed;
    let mut out = Vec::new();
    for (i, a) in areas.iter().enumerate() {
        let lo = a.ra_start.max(0.0);
        let hi = a.ra_end.min(ctx.road_length);
        if hi <= lo {
            continue;
        }
        let xi = hi - lo;
        if !su.is_mobile() {
            if su.encounter_x >= lo && su.encounter_x <= hi {
                out.push(InfluenceTerm {
                    group: i,
                    xi,
                    psi: f64::INFINITY,
                    at: su.encounter_x,
                });
            }
            continue;
        }
        // Vehicle inside [lo, hi] during [t0, t1]; SU x(t) is affine.
        let (t0, t1) = (lo / v, hi / v);
        let x0 = su.x_at(t0, v);
        let (s, e) = if su.speed > 0.0 {
            ((lo - x0) / su.speed, (hi - x0) / su.speed)
        } else {
            ((hi - x0) / su.speed, (lo - x0) / su.speed)
        };
        let start = t0 + s.max(0.0);
        let end = (t0 + e).min(t1);
        if end > start {
            out.push(InfluenceTerm {
                group: i,
                xi,
                psi: (end - start) * su.speed.abs(),
                at: su.x_at(0.5 * (start + end), v),
            });
        }
    }
    out
}

/// Rows of the local reconfiguration table over patches `(e-1, e, e+1)`;
/// `true` = active. The lone-gap shape `A N A` is excluded.
pub const SUBCASES: [(&str, [bool; 3]); 7] = [
    ("A1", [false, false, false]),
    ("B2", [true, false, false]),
    ("B3", [false, false, true]),
    ("C4", [true, true, false]),
    ("C5", [true, false, true]),
    ("C6", [false, true, true]),
    ("D7", [true, true, true]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Subcase {
    pub label: &'static str,
    /// `(patch, active)` for the patches that exist.
    pub states: Vec<(usize, bool)>,
}

impl Subcase {
    pub fn active_count(&self) -> usize {
        self.states.iter().filter(|s| s.1).count()
    }

    pub fn apply(&self, mask: &[bool]) -> Vec<bool> {
        let mut m = mask.to_vec();
        for &(e, on) in &self.states {
            m[e] = on;
        }
        m
    }
}

/// Candidate patterns around covering patch `e`. Patterns that would need a
/// patch outside the array to be active are dropped.
pub fn subcase_states(e: usize, patch_count: usize) -> Vec<Subcase> {
    SUBCASES
        .iter()
        .filter_map(|&(label, pat)| {
            let mut states = Vec::with_capacity(3);
            for (k, &on) in pat.iter().enumerate() {
                let idx = e as isize + k as isize - 1;
                if idx < 0 || idx >= patch_count as isize {
                    if on {
                        return None;
                    }
                    continue;
                }
                states.push((idx as usize, on));
            }
            Some(Subcase { label, states })
        })
        .collect()
}

/// Evaluates the grouping objective for a candidate set.
pub trait Objective: Sync {
    fn evaluate(&self, set: &VirtualGroupSet) -> Result<ThroughputRatios>;
}

impl<F> Objective for F
where
    F: Fn(&VirtualGroupSet) -> Result<ThroughputRatios> + Sync,
{
    fn evaluate(&self, set: &VirtualGroupSet) -> Result<ThroughputRatios> {
        self(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GssaStep {
    pub su: usize,
    pub covering_patch: Option<usize>,
    pub chosen: Option<&'static str>,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgvSolution {
    pub set: VirtualGroupSet,
    pub ratios: ThroughputRatios,
    /// `Φ` after initialisation and after each SU.
    pub history: Vec<f64>,
    pub steps: Vec<GssaStep>,
}

/// SU indices ordered by distance from the serving BS (ties by index).
pub fn su_order(ctx: &DgvContext, sus: &[SensitiveUser]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sus.len()).collect();
    let d: Vec<f64> = sus
        .iter()
        .map(|s| ctx.bs.distance(Vec3::new(s.encounter_x, s.lateral_y, 0.0)))
        .collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    idx
}

/// Greedy search: starting from `start`, visit SUs in BS-distance order and
/// commit the best surviving local pattern for each.
pub fn gssa_from(
    ctx: &DgvContext,
    sus: &[SensitiveUser],
    order: &[usize],
    start: VirtualGroupSet,
    objective: &dyn Objective,
    exec: Execution,
) -> Result<DgvSolution> {
    let n0 = ctx.min_group_size();
    let mut set = start;
    let mut ratios = objective.evaluate(&set)?;
    let mut history = vec![ratios.joint];
    let mut steps = Vec::with_capacity(order.len());
    for &j in order {
        let e = ctx.covering_patch(sus[j].encounter_x)?;
        let Some(e) = e else {
            steps.push(GssaStep {
                su: j,
                covering_patch: None,
                chosen: None,
                phi: ratios.joint,
            });
            history.push(ratios.joint);
            continue;
        };
        let mask = set.mask();
        let cands = subcase_states(e, set.patch_count);
        let evaluated = exec.map(&cands, |c| -> Result<Option<(VirtualGroupSet, ThroughputRatios)>> {
            let cand = VirtualGroupSet::from_mask(&c.apply(&mask));
            if !cand.satisfies(n0) {
                return Ok(None);
            }
            let r = objective.evaluate(&cand)?;
            Ok(Some((cand, r)))
        });
        let mut best: Option<(usize, VirtualGroupSet, ThroughputRatios)> = None;
        for (k, res) in evaluated.into_iter().enumerate() {
            let Some((cand, r)) = res? else { continue };
            if r.joint < ratios.joint {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bk, _, br)) => {
                    r.joint > br.joint
                        || (r.joint == br.joint
                            && cands[k].active_count() > cands[*bk].active_count())
                }
            };
            if better {
                best = Some((k, cand, r));
            }
        }
        let chosen = best.map(|(k, cand, r)| {
            set = cand;
            ratios = r;
            cands[k].label
        });
        steps.push(GssaStep {
            su: j,
            covering_patch: Some(e),
            chosen,
            phi: ratios.joint,
        });
        history.push(ratios.joint);
    }
    Ok(DgvSolution {
        set,
        ratios,
        history,
        steps,
    })
}

/// Upper bound on SU sweeps in [`gssa`].
pub const MAX_SWEEPS: usize = 8;

/// Greedy search from the all-enabled lattice. The SU sweep is repeated from
/// the committed set until it stops changing, so a split made early can be
/// undone once later splits have shortened the group.
pub fn gssa(
    ctx: &DgvContext,
    sus: &[SensitiveUser],
    objective: &dyn Objective,
    exec: Execution,
) -> Result<DgvSolution> {
    let order = su_order(ctx, sus);
    let mut sol = gssa_from(ctx, sus, &order, VirtualGroupSet::full(ctx.array.count), objective, exec)?;
    for _ in 1..MAX_SWEEPS {
        let next = gssa_from(ctx, sus, &order, sol.set.clone(), objective, exec)?;
        if next.set == sol.set {
            break;
        }
        sol.history.extend_from_slice(&next.history[1..]);
        sol.steps.extend(next.steps);
        sol.set = next.set;
        sol.ratios = next.ratios;
    }
    Ok(sol)
}

/// Evaluates every activation mask; ties go to the numerically smallest mask.
pub fn exhaustive_dgv(
    ctx: &DgvContext,
    objective: &dyn Objective,
    max_patches: usize,
    exec: Execution,
) -> Result<DgvSolution> {
    let n = ctx.array.count;
    let cap = max_patches.min(14);
    if n > cap {
        return Err(RetfError::Refused(format!(
            "exhaustive search over {n} patches exceeds the limit of {cap} (2^{n} masks)"
        )));
    }
    let n0 = ctx.min_group_size();
    let results = exec.map_range(1usize << n, |bits| -> Result<Option<ThroughputRatios>> {
        let set = VirtualGroupSet::from_bits(bits as u64, n);
        if !set.satisfies(n0) {
            return Ok(None);
        }
        objective.evaluate(&set).map(Some)
    });
    let mut best: Option<(usize, ThroughputRatios)> = None;
    for (bits, r) in results.into_iter().enumerate() {
        let Some(r) = r? else { continue };
        if best.as_ref().is_none_or(|(_, b)| r.joint > b.joint) {
            best = Some((bits, r));
        }
    }
    let (bits, ratios) = best.ok_or_else(|| RetfError::Invariant("no valid mask".into()))?;
    Ok(DgvSolution {
        set: VirtualGroupSet::from_bits(bits as u64, n),
        ratios,
        history: vec![ratios.joint],
        steps: Vec::new(),
    })
}

/// Re-enables the three patches around a departed SU, merging them into
/// neighbouring groups.
pub fn release_su(ctx: &DgvContext, set: &VirtualGroupSet, su: &SensitiveUser) -> Result<VirtualGroupSet> {
    let Some(e) = ctx.covering_patch(su.encounter_x)? else {
        return Ok(set.clone());
    };
    let mut mask = set.mask();
    mask[e.saturating_sub(1)..=(e + 1).min(set.patch_count - 1)].fill(true);
    Ok(VirtualGroupSet::from_mask(&mask))
}

/// Updates a solution after SUs leave and arrive. The greedy pass restarts
/// from the released set over the remaining SUs; if that ends below a fresh
/// run the fresh result is kept.
pub fn incremental_update(
    ctx: &DgvContext,
    previous: &VirtualGroupSet,
    departed: &[SensitiveUser],
    remaining: &[SensitiveUser],
    objective: &dyn Objective,
    exec: Execution,
) -> Result<DgvSolution> {
    let mut set = previous.clone();
    for su in departed {
        set = release_su(ctx, &set, su)?;
    }
    let order = su_order(ctx, remaining);
    let warm = gssa_from(ctx, remaining, &order, set, objective, exec)?;
    let fresh = gssa(ctx, remaining, objective, exec)?;
    Ok(if warm.ratios.joint >= fresh.ratios.joint { warm } else { fresh })
}
