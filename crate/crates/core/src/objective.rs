//! The grouping objective `Φ = Φ_tar + ζ·Φ_sen` evaluated for candidate
//! group sets, in geometry, CSI or hybrid capacity mode.
//!
//! Everything that does not depend on the candidate (direct powers along the
//! trajectory, snapshot spectra, SU baselines) is computed once in
//! [`Prepared`]; a candidate evaluation only sums bias ratios and, in CSI
//! mode, re-diagonalizes the covariance of the affected snapshot cells.

use crate::budget::{LinkBudget, SuDirect, TvDirect};
use crate::capacity::{
    csi_capacity, geometry_capacity, interference_duration, midpoint_grid, su_capacities, su_ratio,
    throughput_ratios, ThroughputRatios,
};
use crate::channel::{hermitian_eigen, select_rank, RankAdaptation, C64};
use crate::dgv::{influence_set, Objective, VirtualGroupSet};
use crate::error::Result;
use crate::exec::Execution;
use crate::geometry::{ReflectionArea, SensitiveUser, Vec3};
use crate::scenario::{CapacityMode, Scenario};
use crate::snapshot::{precoded_gain, Snapshot, SnapshotStore};

/// Candidate-independent quantities along the vehicle trajectory.
#[derive(Debug, Clone)]
pub struct TvProfile {
    pub times: Vec<f64>,
    pub step: f64,
    pub x: Vec<f64>,
    pub direct: Vec<TvDirect>,
    pub reflex_unit: Vec<f64>,
    pub c_org_geometry: Vec<f64>,
}

impl TvProfile {
    pub fn build(scenario: &Scenario, exec: Execution) -> Result<Self> {
        let cfg = &scenario.config;
        let (times, step) = midpoint_grid(cfg.duration(), cfg.time_step);
        let budget = LinkBudget::new(scenario);
        let x: Vec<f64> = times.iter().map(|t| t * cfg.rated_speed).collect();
        let rows = exec.map(&x, |&x| -> Result<(TvDirect, f64, f64)> {
            let d = budget.tv_direct(x)?;
            let u = budget.tv_reflex_unit(x)?;
            let (c, _) = geometry_capacity(d.signal, d.interference_pap, 0.0, 0.0, &cfg.capacity)?;
            Ok((d, u, c))
        });
        let mut direct = Vec::with_capacity(x.len());
        let mut reflex_unit = Vec::with_capacity(x.len());
        let mut c_org_geometry = Vec::with_capacity(x.len());
        for r in rows {
            let (d, u, c) = r?;
            direct.push(d);
            reflex_unit.push(u);
            c_org_geometry.push(c);
        }
        Ok(Self {
            times,
            step,
            x,
            direct,
            reflex_unit,
            c_org_geometry,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sample indices whose positions fall inside `[lo, hi]`.
    pub fn span(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let dx = self.x.get(1).map_or(1.0, |b| b - self.x[0]);
        let first = self.x[0];
        let a = (((lo - first) / dx).ceil().max(0.0) as usize).min(self.len());
        let b = ((((hi - first) / dx).floor() + 1.0).max(0.0) as usize).min(self.len());
        let mut r = a..b.max(a);
        // Guard against rounding at the interval ends.
        while r.start > 0 && self.x[r.start - 1] >= lo {
            r.start -= 1;
        }
        while r.start < r.end && self.x[r.start] < lo {
            r.start += 1;
        }
        while r.end < self.len() && self.x[r.end] <= hi {
            r.end += 1;
        }
        while r.end > r.start && self.x[r.end - 1] > hi {
            r.end -= 1;
        }
        r
    }

    /// Capped bias ratio of `areas` at every sample.
    pub fn bias(&self, areas: &[ReflectionArea]) -> Vec<f64> {
        let mut b = vec![0.0; self.len()];
        for a in areas {
            for i in self.span(a.ra_start, a.ra_end) {
                b[i] += a.ratio(self.x[i]);
            }
        }
        for v in &mut b {
            *v = v.min(1.0);
        }
        b
    }
}

/// Capped bias ratio of `areas` at one position.
pub fn bias_at(areas: &[ReflectionArea], x: f64) -> f64 {
    areas.iter().map(|a| a.ratio(x)).sum::<f64>().min(1.0)
}

/// Candidate-independent view of one SU.
#[derive(Debug, Clone)]
pub struct SuModel {
    pub su: SensitiveUser,
    pub position: Vec3,
    pub direct: SuDirect,
    pub reflex_unit: f64,
    /// `∫ C_nrm dt` over the transit window.
    pub nrm_integral: f64,
    /// Prefix sums over snapshot cells of the precoder leakage toward the
    /// SU with the vehicle in that cell at full reflection.
    pub csi_gain_prefix: Option<Vec<f64>>,
    pub csi_fresh: bool,
}

impl SuModel {
    /// Mean leakage while the vehicle crosses `[lo, hi]`.
    pub fn csi_gain_over(&self, st: &SnapshotStore, lo: f64, hi: f64) -> Option<f64> {
        let p = self.csi_gain_prefix.as_ref()?;
        let a = st.grid.cell_of(lo);
        let b = st.grid.cell_of(hi).max(a);
        Some((p[b + 1] - p[a]) / (b + 1 - a) as f64)
    }
}

/// Spectrum of the joint covariance with reflex weight `omega`.
pub fn joint_rank(scenario: &Scenario, snap: &Snapshot, omega: f64) -> Result<(RankAdaptation, Vec<nalgebra::DVector<C64>>)> {
    let p = &scenario.config.capacity;
    let (ev, vecs) = if omega > 0.0 {
        hermitian_eigen(&(&snap.cov_direct + &snap.cov_reflex * C64::from(omega)))
    } else {
        hermitian_eigen(&snap.cov_direct)
    };
    let rows = if omega > 0.0 { 2 } else { 1 } * p.num_rx_antennas;
    let r = select_rank(ev, rows.min(p.num_tx_antennas), p.eigen_threshold, snap.direct_top())?;
    Ok((r, vecs))
}

/// Everything a candidate evaluation reads.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub profile: TvProfile,
    pub snapshots: Option<SnapshotStore>,
    pub sus: Vec<SuModel>,
    /// CSI-mode original capacity per sample (when snapshots exist).
    pub c_org_csi: Vec<f64>,
    /// Sample index range of every snapshot cell.
    pub cell_samples: Vec<std::ops::Range<usize>>,
}

impl Prepared {
    /// Snapshots are generated unless the scenario runs in geometry mode.
    pub fn new(scenario: Scenario, exec: Execution) -> Result<Self> {
        let with_csi = scenario.config.capacity_mode != CapacityMode::Geometry;
        Self::with_snapshots(scenario, with_csi, exec)
    }

    pub fn with_snapshots(scenario: Scenario, with_csi: bool, exec: Execution) -> Result<Self> {
        let profile = TvProfile::build(&scenario, exec)?;
        let snapshots = if with_csi {
            Some(SnapshotStore::build(&scenario, exec)?)
        } else {
            None
        };
        let mut c_org_csi = Vec::new();
        let mut cell_samples = Vec::new();
        if let Some(st) = &snapshots {
            let g = st.grid;
            for c in 0..g.cells {
                let lo = c as f64 * g.spacing;
                let hi = if c + 1 == g.cells { f64::INFINITY } else { lo + g.spacing };
                let mut r = profile.span(lo, hi);
                if r.end > r.start && profile.x[r.end - 1] >= hi {
                    r.end -= 1;
                }
                cell_samples.push(r);
            }
            c_org_csi = vec![0.0; profile.len()];
            for (c, r) in cell_samples.iter().enumerate() {
                let rank = &st.cells[c].direct_rank;
                for i in r.clone() {
                    let d = profile.direct[i];
                    c_org_csi[i] = csi_capacity(
                        d.signal,
                        d.interference_pap,
                        &rank.eigenvalues,
                        rank.rank,
                        &scenario.config.capacity,
                    )?;
                }
            }
        }
        let sus = build_su_models(&scenario, &profile, snapshots.as_ref(), exec)?;
        Ok(Self {
            scenario,
            profile,
            snapshots,
            sus,
            c_org_csi,
            cell_samples,
        })
    }

    pub fn view(&self, mode: CapacityMode) -> ObjectiveView<'_> {
        ObjectiveView {
            prepared: self,
            mode: if self.snapshots.is_some() { mode } else { CapacityMode::Geometry },
            ilf: self.scenario.config.capacity.ilf,
        }
    }
}

fn build_su_models(
    scenario: &Scenario,
    profile: &TvProfile,
    snapshots: Option<&SnapshotStore>,
    exec: Execution,
) -> Result<Vec<SuModel>> {
    let cfg = &scenario.config;
    let v = cfg.rated_speed;
    let budget = LinkBudget::new(scenario);
    // Vehicle precoder per cell with the flat reflex at unit bias.
    let precoders = match snapshots {
        Some(st) => {
            let p = exec.map(&st.cells, |snap| {
                let omega = if snap.signal > 0.0 { snap.reflex_unit / snap.signal } else { 0.0 };
                joint_rank(scenario, snap, omega)
            });
            Some(p.into_iter().collect::<Result<Vec<_>>>()?)
        }
        None => None,
    };
    let precoders = precoders.as_ref();
    let models = exec.map_range(scenario.sus.len(), |j| -> Result<SuModel> {
        let su = scenario.sus[j];
        let position = su.position_at(su.encounter_time(v), v);
        let direct = budget.su_direct(&su, position)?;
        let reflex_unit = budget.reflex_unit(&LinkBudget::su_receiver(position))?;
        let nrm_integral = if su.is_mobile() {
            let mut acc = 0.0;
            for &t in &profile.times {
                let d = budget.su_direct(&su, su.position_at(t, v))?;
                acc += su_capacities(d.own, d.serving_bs, d.others, 0.0, &cfg.capacity)?.0;
            }
            acc * profile.step
        } else {
            su_capacities(direct.own, direct.serving_bs, direct.others, 0.0, &cfg.capacity)?.0
                * cfg.duration()
        };
        let (csi_gain_prefix, csi_fresh) = match (snapshots, precoders) {
            (Some(st), Some(pre)) => {
                let mut prefix = Vec::with_capacity(pre.len() + 1);
                prefix.push(0.0);
                for (rank, vecs) in pre {
                    let g = precoded_gain(&st.su_reflex[j], vecs, rank.rank);
                    prefix.push(prefix.last().copied().unwrap_or(0.0) + g);
                }
                (Some(prefix), st.at(su.encounter_x).fresh)
            }
            _ => (None, false),
        };
        Ok(SuModel {
            su,
            position,
            direct,
            reflex_unit,
            nrm_integral,
            csi_gain_prefix,
            csi_fresh,
        })
    });
    models.into_iter().collect()
}

/// Objective evaluator in one capacity mode.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveView<'a> {
    pub prepared: &'a Prepared,
    pub mode: CapacityMode,
    pub ilf: f64,
}

impl ObjectiveView<'_> {
    pub fn with_ilf(mut self, ilf: f64) -> Self {
        self.ilf = ilf;
        self
    }

    fn cell_uses_csi(&self, snap: &Snapshot) -> bool {
        match self.mode {
            CapacityMode::Geometry => false,
            CapacityMode::Csi => true,
            CapacityMode::Hybrid => snap.fresh,
        }
    }

    /// `(∫C_org, ∫C_enh)` up to the common step factor.
    pub fn tv_integrals(&self, areas: &[ReflectionArea]) -> Result<(f64, f64)> {
        let p = self.prepared;
        let prof = &p.profile;
        let params = &p.scenario.config.capacity;
        let bias = prof.bias(areas);
        let geo = |i: usize| -> Result<(f64, f64)> {
            let d = prof.direct[i];
            if bias[i] <= 0.0 {
                return Ok((prof.c_org_geometry[i], prof.c_org_geometry[i]));
            }
            geometry_capacity(
                d.signal,
                d.interference_pap,
                bias[i] * prof.reflex_unit[i],
                d.interference_sap,
                params,
            )
        };
        let mut org = 0.0;
        let mut enh = 0.0;
        match &p.snapshots {
            Some(st) if self.mode != CapacityMode::Geometry => {
                for (c, range) in p.cell_samples.iter().enumerate() {
                    let snap = &st.cells[c];
                    if !self.cell_uses_csi(snap) {
                        for i in range.clone() {
                            let (o, e) = geo(i)?;
                            org += o;
                            enh += e;
                        }
                        continue;
                    }
                    let omega = if snap.signal > 0.0 {
                        bias_at(areas, snap.x) * snap.reflex_unit / snap.signal
                    } else {
                        0.0
                    };
                    if omega <= 0.0 {
                        for i in range.clone() {
                            org += p.c_org_csi[i];
                            enh += p.c_org_csi[i];
                        }
                        continue;
                    }
                    let (r, _) = joint_rank(&p.scenario, snap, omega)?;
                    for i in range.clone() {
                        let d = prof.direct[i];
                        org += p.c_org_csi[i];
                        enh += csi_capacity(d.signal, d.interference_pap, &r.eigenvalues, r.rank, params)?;
                    }
                }
            }
            _ => {
                for i in 0..prof.len() {
                    let (o, e) = geo(i)?;
                    org += o;
                    enh += e;
                }
            }
        }
        Ok((org, enh))
    }

    /// Scale applied to an SU's geometric reflex estimate from the group
    /// with area `a`: the empirical factor, or in CSI the mean precoder
    /// leakage while the vehicle is inside `a`.
    pub fn su_factor(&self, m: &SuModel, a: &ReflectionArea) -> f64 {
        let p = self.prepared;
        let empirical = p.scenario.config.capacity.empirical_power_factor;
        let csi = match self.mode {
            CapacityMode::Geometry => false,
            CapacityMode::Csi => true,
            CapacityMode::Hybrid => m.csi_fresh,
        };
        let lo = a.ra_start.max(0.0);
        let hi = a.ra_end.min(p.scenario.config.road_length);
        match (csi, &p.snapshots) {
            (true, Some(st)) => m.csi_gain_over(st, lo, hi).unwrap_or(empirical),
            _ => empirical,
        }
    }

    /// Per-SU throughput ratios; users influenced by more than two groups
    /// are split into one virtual user per group.
    pub fn su_ratios(&self, areas: &[ReflectionArea]) -> Result<Vec<f64>> {
        let p = self.prepared;
        let cfg = &p.scenario.config;
        let v = cfg.rated_speed;
        let budget = LinkBudget::new(&p.scenario);
        let mut out = Vec::with_capacity(p.sus.len());
        for m in &p.sus {
            let terms = influence_set(&p.scenario.ctx, &m.su, areas);
            if terms.len() <= 2 {
                let dur = interference_duration(&terms, v, m.su.speed);
                let x = m.su.encounter_x;
                let (mut sum, mut weighted) = (0.0, 0.0);
                for t in &terms {
                    let a = &areas[t.group];
                    let r = a.ratio(x);
                    sum += r;
                    weighted += r * self.su_factor(m, a);
                }
                let r0 = if sum > 0.0 { sum.min(1.0) * m.reflex_unit * weighted / sum } else { 0.0 };
                let d = m.direct;
                let (cn, ci) = su_capacities(d.own, d.serving_bs, d.others, r0, &cfg.capacity)?;
                out.push(su_ratio(dur, cn, ci, m.nrm_integral));
                continue;
            }
            for t in &terms {
                let dur = interference_duration(std::slice::from_ref(t), v, m.su.speed);
                let pos = Vec3::new(t.at, m.su.lateral_y, 0.0);
                let d = budget.su_direct(&m.su, pos)?;
                let unit = budget.reflex_unit(&LinkBudget::su_receiver(pos))?;
                let a = &areas[t.group];
                let r0 = a.ratio(t.at).min(1.0) * unit * self.su_factor(m, a);
                let (cn, ci) = su_capacities(d.own, d.serving_bs, d.others, r0, &cfg.capacity)?;
                out.push(su_ratio(dur, cn, ci, m.nrm_integral));
            }
        }
        Ok(out)
    }

    pub fn ratios_for_areas(&self, areas: &[ReflectionArea]) -> Result<ThroughputRatios> {
        let (org, enh) = self.tv_integrals(areas)?;
        let su = self.su_ratios(areas)?;
        throughput_ratios(org, enh, &su, self.ilf)
    }
}

impl Objective for ObjectiveView<'_> {
    fn evaluate(&self, set: &VirtualGroupSet) -> Result<ThroughputRatios> {
        let areas = self.prepared.scenario.ctx.areas(set)?;
        self.ratios_for_areas(&areas)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SensitiveUser;
    use crate::scenario::ScenarioConfig;

    fn config() -> ScenarioConfig {
        let mut c = ScenarioConfig::scaled_default();
        c.time_step = 0.01;
        c.snapshot_spacing = 10.0;
        c.sus.count = 0;
        c
    }

    fn prepared(c: ScenarioConfig, csi: bool) -> Prepared {
        Prepared::with_snapshots(Scenario::build(c).unwrap(), csi, Execution::Parallel).unwrap()
    }

    #[test]
    fn span_matches_filter() {
        let p = prepared(config(), false);
        let prof = &p.profile;
        for (lo, hi) in [(0.0, 400.0), (13.1, 13.3), (13.1, 13.1), (-5.0, 2.0), (399.0, 500.0), (57.0, 83.4)] {
            let want: Vec<usize> = (0..prof.len()).filter(|&i| prof.x[i] >= lo && prof.x[i] <= hi).collect();
            let got: Vec<usize> = prof.span(lo, hi).collect();
            assert_eq!(got, want, "[{lo}, {hi}]");
        }
    }

    #[test]
    fn no_panels_gives_unit_ratios() {
        for csi in [false, true] {
            let p = prepared(config(), csi);
            let view = p.view(CapacityMode::Csi);
            let r = view.evaluate(&VirtualGroupSet::empty(p.scenario.config.rpp.count)).unwrap();
            assert!((r.tv_ratio - 1.0).abs() < 1e-12);
            assert_eq!(r.su_ratio, 1.0);
            assert!((r.joint - (1.0 + p.scenario.config.capacity.ilf)).abs() < 1e-12);
        }
    }

    #[test]
    fn full_lattice_enhances() {
        for (csi, mode) in [(false, CapacityMode::Geometry), (true, CapacityMode::Csi)] {
            let p = prepared(config(), csi);
            let full = VirtualGroupSet::full(p.scenario.config.rpp.count);
            let r = p.view(mode).evaluate(&full).unwrap();
            assert!(r.tv_ratio > 1.0, "{mode:?}: {r:?}");
        }
    }

    #[test]
    fn zero_ilf_echoes_tv_ratio() {
        let mut c = config();
        c.sus.explicit = vec![SensitiveUser::stationary(150.0, 3.5, 1)];
        let p = prepared(c, false);
        let full = VirtualGroupSet::full(p.scenario.config.rpp.count);
        let r = p.view(CapacityMode::Geometry).with_ilf(0.0).evaluate(&full).unwrap();
        assert_eq!(r.joint, r.tv_ratio);
        assert!(r.su_ratio < 1.0);
    }

    #[test]
    fn gap_protects_su() {
        let mut c = config();
        c.sus.explicit = vec![SensitiveUser::stationary(150.0, 3.5, 1)];
        let p = prepared(c, false);
        let ctx = p.scenario.ctx;
        let e = ctx.covering_patch(150.0).unwrap().unwrap();
        let mut mask = vec![true; ctx.array.count];
        mask[e - 1..=e + 1].fill(false);
        let view = p.view(CapacityMode::Geometry);
        let split = view.evaluate(&VirtualGroupSet::from_mask(&mask)).unwrap();
        let full = view.evaluate(&VirtualGroupSet::full(ctx.array.count)).unwrap();
        assert_eq!(split.su_ratio, 1.0);
        assert!(full.su_ratio < 1.0);
        assert!(split.tv_ratio < full.tv_ratio);
    }

    #[test]
    fn hybrid_all_fresh_equals_csi() {
        let mut c = config();
        c.capacity_mode = CapacityMode::Hybrid;
        c.hybrid.max_record_age = 0.0;
        let p = prepared(c, true);
        let full = VirtualGroupSet::full(p.scenario.config.rpp.count);
        let a = p.view(CapacityMode::Hybrid).evaluate(&full).unwrap();
        let b = p.view(CapacityMode::Csi).evaluate(&full).unwrap();
        assert_eq!(a, b);
    }
}
