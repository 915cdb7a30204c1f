//! Layout solving, the time-stepped run and parameter sweeps.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use nalgebra::DVector;
use serde::Serialize;

use crate::budget::LinkBudget;
use crate::capacity::{csi_capacity, geometry_capacity, su_capacities, ThroughputRatios};
use crate::channel::{hermitian_eigen, mean_gram, select_rank, CMatrix, RankAdaptation, C64};
use crate::dgv::{gssa, gssa_from, ssm_schedule, su_order, GssaStep, Objective, SsmAction, VirtualGroupSet};
use crate::error::{Result, RetfError};
use crate::exec::Execution;
use crate::geometry::ReflectionArea;
use crate::objective::{bias_at, Prepared};
use crate::propagation::Receiver;
use crate::rct::{ans_feasibility, plan_for_region, plan_reflectors, region_of, Reflector, RotationPlan};
use crate::scenario::{stream, CapacityMode, Layout, Scenario, ScenarioConfig};
use crate::snapshot::{channel_seed, precoded_gain, realize, rotated_key};

/// `group_size` patches on, one off, repeated.
pub fn uniform_layout(patches: usize, group_size: usize) -> VirtualGroupSet {
    let period = group_size + 1;
    let mask: Vec<bool> = (0..patches).map(|e| e % period < group_size).collect();
    VirtualGroupSet::from_mask(&mask)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayoutSolution {
    pub set: VirtualGroupSet,
    /// Objective of the set in the scenario's capacity mode.
    pub ratios: ThroughputRatios,
    pub history: Vec<f64>,
    pub steps: Vec<GssaStep>,
    /// Hybrid mode: whether the CSI refinement changed the geometry solution.
    pub refined: bool,
}

/// Group set for the configured layout. An optimized hybrid layout starts
/// from the geometry solution and refines it with the hybrid objective.
pub fn solve_layout(prep: &Prepared, exec: Execution) -> Result<LayoutSolution> {
    let cfg = &prep.scenario.config;
    let mode = cfg.capacity_mode;
    let n = cfg.rpp.count;
    let fixed = |set: VirtualGroupSet| -> Result<LayoutSolution> {
        let ratios = prep.view(mode).evaluate(&set)?;
        Ok(LayoutSolution {
            set,
            ratios,
            history: vec![ratios.joint],
            steps: Vec::new(),
            refined: false,
        })
    };
    match cfg.layout {
        Layout::Full => fixed(VirtualGroupSet::full(n)),
        Layout::Disabled => fixed(VirtualGroupSet::empty(n)),
        Layout::Uniform { group_size } => fixed(uniform_layout(n, group_size)),
        Layout::Optimized => optimize(prep, mode, cfg.capacity.ilf, exec),
    }
}

/// Greedy grouping in `mode` with interference level factor `ilf`.
pub fn optimize(prep: &Prepared, mode: CapacityMode, ilf: f64, exec: Execution) -> Result<LayoutSolution> {
    let scn = &prep.scenario;
    let sus = &scn.sus;
    if mode != CapacityMode::Hybrid {
        let s = gssa(&scn.ctx, sus, &prep.view(mode).with_ilf(ilf), exec)?;
        return Ok(LayoutSolution {
            set: s.set,
            ratios: s.ratios,
            history: s.history,
            steps: s.steps,
            refined: false,
        });
    }
    let geo = gssa(&scn.ctx, sus, &prep.view(CapacityMode::Geometry).with_ilf(ilf), exec)?;
    let order = su_order(&scn.ctx, sus);
    let view = prep.view(CapacityMode::Hybrid).with_ilf(ilf);
    let refined = gssa_from(&scn.ctx, sus, &order, geo.set.clone(), &view, exec)?;
    let changed = refined.set != geo.set;
    let mut history = geo.history;
    history.extend(refined.history);
    let mut steps = geo.steps;
    steps.extend(refined.steps);
    Ok(LayoutSolution {
        set: refined.set,
        ratios: refined.ratios,
        history,
        steps,
        refined: changed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub x: f64,
    pub region: Option<usize>,
    pub rank_org: usize,
    pub rank_enh: usize,
    pub c_org: f64,
    pub c_enh: f64,
    pub se_org: f64,
    pub se_enh: f64,
    /// Aggregate reflex power at the secondary panel, W.
    pub reflex_power: f64,
    /// Groups reflecting at this step (flat or rotated).
    pub active: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuSample {
    pub su: usize,
    pub t: f64,
    pub se_nrm: f64,
    pub se_int: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuSummary {
    pub su: usize,
    pub nrm_integral: f64,
    pub int_integral: f64,
    /// `1 - ∫C_int / ∫C_nrm`.
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct RegionStats {
    pub steps: usize,
    pub mean_se_org: f64,
    pub mean_se_enh: f64,
    pub mean_rank_org: f64,
    pub mean_rank_enh: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceSummary {
    pub phi_tar: f64,
    pub phi_sen: f64,
    pub phi: f64,
    pub ilf: f64,
    pub mean_rank_org: f64,
    pub mean_rank_enh: f64,
    pub mean_se_org: f64,
    pub mean_se_enh: f64,
    pub center: RegionStats,
    pub edge: RegionStats,
    pub mean_su_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceWarning {
    pub kind: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationTrace {
    pub mode: CapacityMode,
    pub groups: Vec<(usize, usize)>,
    pub plans: Vec<RotationPlan>,
    pub rows: Vec<StepRecord>,
    pub su_series: Vec<SuSample>,
    pub su_summary: Vec<SuSummary>,
    pub summary: TraceSummary,
    pub warnings: Vec<TraceWarning>,
}

/// Reflectors active at one instant: flat groups share one specular
/// geometry, rotated ones carry the group they serve.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    pub region: Option<usize>,
    pub flat: Vec<usize>,
    pub rotated: Vec<(Reflector, usize)>,
}

impl ActiveSet {
    pub fn groups(&self) -> Vec<usize> {
        let mut g: Vec<usize> = self.flat.iter().copied().chain(self.rotated.iter().map(|r| r.0.group)).collect();
        g.sort_unstable();
        g.dedup();
        g
    }

    fn key(&self) -> Vec<(usize, usize, usize, u64, usize)> {
        let mut k: Vec<_> = self.flat.iter().map(|&g| (g, 0, 0, 0, usize::MAX)).collect();
        k.extend(self.rotated.iter().map(|(r, m)| (r.group, r.first, r.last, r.alpha.to_bits(), *m)));
        k
    }
}

/// Spectrum of the vehicle's joint covariance in one snapshot cell.
#[derive(Debug, Clone)]
pub struct CellSpectrum {
    pub rank: RankAdaptation,
    pub vectors: Vec<DVector<C64>>,
    pub omega: f64,
}

/// Snapshot cell plus the active reflector key (group, first, last, angle bits, main group).
type SpectrumKey = (usize, Vec<(usize, usize, usize, u64, usize)>);

/// Per-instant evaluation of a fixed group set.
pub struct Stepper<'a> {
    prep: &'a Prepared,
    mode: CapacityMode,
    team_size: usize,
    areas: Vec<ReflectionArea>,
    windows: Vec<(f64, f64)>,
    /// Assisting rows per region (empty without collaboration).
    assist: Vec<Vec<Reflector>>,
    pub plans: Vec<RotationPlan>,
    pub warnings: Vec<TraceWarning>,
    spectra: HashMap<SpectrumKey, Rc<CellSpectrum>>,
    rotated_channels: HashMap<(usize, u64), Rc<Vec<CMatrix>>>,
    /// Precoder leakage per (SU, spectrum); spectra stay alive in `spectra`.
    leakage: RefCell<HashMap<(usize, *const CellSpectrum), f64>>,
}

impl<'a> Stepper<'a> {
    pub fn new(prep: &'a Prepared, set: &VirtualGroupSet, mode: CapacityMode, team_size: usize) -> Result<Self> {
        let scn = &prep.scenario;
        let ctx = &scn.ctx;
        let cfg = &scn.config;
        let areas = ctx.areas(set)?;
        let mut warnings = Vec::new();
        let v = cfg.rated_speed;
        let tg = cfg.rpp.switch_time;
        // Activation takes effect T_g after the command; deactivation is immediate.
        let windows = match ssm_schedule(ctx, set) {
            Ok(events) => {
                let mut w = vec![(f64::INFINITY, f64::INFINITY); areas.len()];
                for e in events {
                    match e.action {
                        SsmAction::Activate => w[e.group].0 = e.time + tg,
                        SsmAction::Deactivate => w[e.group].1 = e.time,
                    }
                }
                w
            }
            Err(RetfError::Infeasible(msg)) => {
                warnings.push(TraceWarning {
                    kind: "ssm_infeasible",
                    message: msg,
                });
                areas.iter().map(|a| (a.ra_start / v, a.ra_end / v)).collect()
            }
            Err(e) => return Err(e),
        };
        let collaborate = team_size > 1 && set.groups.len() >= 2;
        let mut plans = Vec::new();
        let mut assist = Vec::new();
        if collaborate {
            for k in 0..set.groups.len() {
                let plan = plan_for_region(ctx, set, k, team_size, cfg.rct_max_distance)?;
                assist.push(plan_reflectors(ctx, &plan)?);
                plans.push(plan);
            }
            for a in ans_feasibility(ctx, &areas) {
                warnings.push(TraceWarning {
                    kind: "ans_infeasible",
                    message: format!(
                        "region {}: {:.3} s available for pre-rotation, {:.3} s required",
                        a.region, a.available, a.required
                    ),
                });
            }
        }
        Ok(Self {
            prep,
            mode: if prep.snapshots.is_some() { mode } else { CapacityMode::Geometry },
            team_size,
            areas,
            windows,
            assist,
            plans,
            warnings,
            spectra: HashMap::new(),
            rotated_channels: HashMap::new(),
            leakage: RefCell::new(HashMap::new()),
        })
    }

    pub fn areas(&self) -> &[ReflectionArea] {
        &self.areas
    }

    fn budget(&self) -> LinkBudget<'a> {
        LinkBudget::new(&self.prep.scenario)
    }

    /// Reflectors on at time `t` with the vehicle at `x`.
    pub fn active_at(&self, t: f64, x: f64) -> ActiveSet {
        let ssm: Vec<usize> = (0..self.areas.len())
            .filter(|&g| self.windows[g].0 <= t && t < self.windows[g].1)
            .collect();
        if self.assist.is_empty() {
            return ActiveSet {
                region: region_of(&self.areas, x),
                flat: ssm,
                rotated: Vec::new(),
            };
        }
        let region = region_of(&self.areas, x);
        let mut rotated = Vec::new();
        if let Some(k) = region {
            rotated.extend(self.assist[k].iter().map(|r| (*r, k)));
            if k + 1 < self.assist.len() {
                rotated.extend(self.assist[k + 1].iter().map(|r| (*r, k + 1)));
            }
        }
        let flat: Vec<usize> = ssm
            .into_iter()
            .filter(|g| !rotated.iter().any(|(r, _)| r.group == *g))
            .collect();
        ActiveSet { region, flat, rotated }
    }

    fn flat_areas(&self, act: &ActiveSet) -> Vec<ReflectionArea> {
        act.flat.iter().map(|&g| self.areas[g]).collect()
    }

    /// Flat (capped) and per-rotated-row reflex powers at `rx`.
    pub fn reflex_parts(&self, act: &ActiveSet, rx: &Receiver<'_>) -> Result<(f64, Vec<f64>)> {
        let b = self.budget();
        let bias = bias_at(&self.flat_areas(act), rx.position.x);
        let flat = if bias > 0.0 { bias * b.reflex_unit(rx)? } else { 0.0 };
        let rot = act
            .rotated
            .iter()
            .map(|(r, _)| b.reflector_power(r, rx))
            .collect::<Result<Vec<_>>>()?;
        Ok((flat, rot))
    }

    pub fn reflex_total(&self, act: &ActiveSet, rx: &Receiver<'_>) -> Result<f64> {
        let (f, r) = self.reflex_parts(act, rx)?;
        Ok(f + r.iter().sum::<f64>())
    }

    fn rotated_channel(&mut self, cell: usize, r: &Reflector, mvrg: usize) -> Rc<Vec<CMatrix>> {
        let key = rotated_key(r.group, mvrg);
        if let Some(h) = self.rotated_channels.get(&(cell, key)) {
            return h.clone();
        }
        let scn = &self.prep.scenario;
        let st = self.prep.snapshots.as_ref().expect("CSI mode has snapshots");
        let x = st.grid.center(cell);
        let tv = self.budget().sap(x).position;
        let point = r.facet_point(&scn.ctx, tv);
        let h = Rc::new(realize(
            scn,
            scn.bs().position,
            Some(point),
            tv,
            scn.config.capacity.num_rx_antennas,
            channel_seed(scn, &[stream::REFLEX, cell as u64, key]),
        ));
        self.rotated_channels.insert((cell, key), h.clone());
        h
    }

    /// Joint spectrum in `cell` for the active reflectors, with the reflex
    /// weight evaluated at the cell centre.
    pub fn spectrum(&mut self, cell: usize, act: &ActiveSet) -> Result<Rc<CellSpectrum>> {
        let key = (cell, act.key());
        if let Some(s) = self.spectra.get(&key) {
            return Ok(s.clone());
        }
        let scn = &self.prep.scenario;
        let params = scn.config.capacity;
        let snap = &self.prep.snapshots.as_ref().expect("CSI mode has snapshots").cells[cell];
        let sap = self.budget().sap(snap.x);
        let (flat, rot) = self.reflex_parts(act, &sap)?;
        let total = flat + rot.iter().sum::<f64>();
        let omega = if snap.signal > 0.0 { total / snap.signal } else { 0.0 };
        let spec = if omega <= 0.0 {
            let (_, vectors) = hermitian_eigen(&snap.cov_direct);
            CellSpectrum {
                rank: snap.direct_rank.clone(),
                vectors,
                omega: 0.0,
            }
        } else {
            let cov_reflex = if rot.iter().all(|&p| p == 0.0) {
                snap.cov_reflex.clone()
            } else {
                let mut h: Vec<CMatrix> = snap.reflex.iter().map(|m| m * C64::from((flat / total).sqrt())).collect();
                for ((r, m), p) in act.rotated.clone().iter().zip(&rot) {
                    if *p <= 0.0 {
                        continue;
                    }
                    let hr = self.rotated_channel(cell, r, *m);
                    let w = C64::from((p / total).sqrt());
                    for (acc, add) in h.iter_mut().zip(hr.iter()) {
                        *acc += add * w;
                    }
                }
                mean_gram(&h).expect("non-empty")
            };
            let (ev, vectors) = hermitian_eigen(&(&snap.cov_direct + cov_reflex * C64::from(omega)));
            let rows = (2 * params.num_rx_antennas).min(params.num_tx_antennas);
            CellSpectrum {
                rank: select_rank(ev, rows, params.eigen_threshold, snap.direct_top())?,
                vectors,
                omega,
            }
        };
        let spec = Rc::new(spec);
        self.spectra.insert(key, spec.clone());
        Ok(spec)
    }

    fn uses_csi(&self, x: f64) -> Option<usize> {
        let st = self.prep.snapshots.as_ref()?;
        let c = st.grid.cell_of(x);
        match self.mode {
            CapacityMode::Geometry => None,
            CapacityMode::Csi => Some(c),
            CapacityMode::Hybrid => st.cells[c].fresh.then_some(c),
        }
    }
}

/// One instant of the vehicle link.
#[derive(Debug, Clone)]
pub struct TvEval {
    pub active: ActiveSet,
    pub reflex_power: f64,
    pub rank_org: usize,
    pub rank_enh: usize,
    pub c_org: f64,
    pub c_enh: f64,
    /// Precoder used toward the vehicle (CSI cells only).
    pub spectrum: Option<Rc<CellSpectrum>>,
}

impl Stepper<'_> {
    /// Evaluates profile sample `i`.
    pub fn tv_step(&mut self, i: usize) -> Result<TvEval> {
        let prof = &self.prep.profile;
        let (t, x) = (prof.times[i], prof.x[i]);
        let d = prof.direct[i];
        let params = self.prep.scenario.config.capacity;
        let active = self.active_at(t, x);
        let sap = self.budget().sap(x);
        let reflex_power = self.reflex_total(&active, &sap)?;
        if let Some(cell) = self.uses_csi(x) {
            let spec = self.spectrum(cell, &active)?;
            let snap = &self.prep.snapshots.as_ref().expect("snapshots").cells[cell];
            let c_enh = csi_capacity(d.signal, d.interference_pap, &spec.rank.eigenvalues, spec.rank.rank, &params)?;
            return Ok(TvEval {
                active,
                reflex_power,
                rank_org: snap.direct_rank.rank,
                rank_enh: spec.rank.rank,
                c_org: self.prep.c_org_csi[i],
                c_enh,
                spectrum: Some(spec),
            });
        }
        let (c_org, c_enh) = geometry_capacity(d.signal, d.interference_pap, reflex_power, d.interference_sap, &params)?;
        let nr = params.num_rx_antennas;
        Ok(TvEval {
            active,
            reflex_power,
            rank_org: nr,
            rank_enh: if reflex_power > 0.0 { 2 * nr } else { nr },
            c_org,
            c_enh,
            spectrum: None,
        })
    }

    /// `(C_nrm, C_int)` of SU `j` at sample `i` given the vehicle state.
    pub fn su_step(&self, j: usize, i: usize, tv: &TvEval) -> Result<(f64, f64)> {
        let p = self.prep;
        let cfg = &p.scenario.config;
        let m = &p.sus[j];
        let t = p.profile.times[i];
        let pos = m.su.position_at(t, cfg.rated_speed);
        let b = self.budget();
        let d = if m.su.is_mobile() { b.su_direct(&m.su, pos)? } else { m.direct };
        let hit = tv.active.flat.iter().any(|&g| self.areas[g].ratio(pos.x) > 0.0)
            || tv.active.rotated.iter().any(|(r, _)| r.area.ratio(pos.x) > 0.0);
        let r0 = if hit {
            let raw = self.reflex_total(&tv.active, &LinkBudget::su_receiver(pos))?;
            let factor = match (&tv.spectrum, p.snapshots.as_ref()) {
                (Some(s), Some(st)) => *self
                    .leakage
                    .borrow_mut()
                    .entry((j, Rc::as_ptr(s)))
                    .or_insert_with(|| precoded_gain(&st.su_reflex[j], &s.vectors, s.rank.rank)),
                _ => cfg.capacity.empirical_power_factor,
            };
            raw * factor
        } else {
            0.0
        };
        su_capacities(d.own, d.serving_bs, d.others, r0, &cfg.capacity)
    }

    pub fn team_size(&self) -> usize {
        self.team_size
    }
}

fn region_stats(rows: &[&StepRecord]) -> RegionStats {
    let n = rows.len();
    if n == 0 {
        return RegionStats::default();
    }
    let mean = |f: &dyn Fn(&StepRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n as f64;
    RegionStats {
        steps: n,
        mean_se_org: mean(&|r| r.se_org),
        mean_se_enh: mean(&|r| r.se_enh),
        mean_rank_org: mean(&|r| r.rank_org as f64),
        mean_rank_enh: mean(&|r| r.rank_enh as f64),
    }
}

/// Summary statistics recomputed from trace rows and SU integrals.
pub fn summarize(rows: &[StepRecord], su: &[SuSummary], road_length: f64, ilf: f64) -> TraceSummary {
    let org: f64 = rows.iter().map(|r| r.c_org).sum();
    let enh: f64 = rows.iter().map(|r| r.c_enh).sum();
    let phi_tar = if org > 0.0 { enh / org } else { 1.0 };
    let phi_sen = if su.is_empty() {
        1.0
    } else {
        su.iter().map(|s| 1.0 - s.loss).sum::<f64>() / su.len() as f64
    };
    let (lo, hi) = (road_length / 3.0, 2.0 * road_length / 3.0);
    let all: Vec<&StepRecord> = rows.iter().collect();
    let center: Vec<&StepRecord> = rows.iter().filter(|r| r.x >= lo && r.x <= hi).collect();
    let edge: Vec<&StepRecord> = rows.iter().filter(|r| r.x < lo || r.x > hi).collect();
    let overall = region_stats(&all);
    TraceSummary {
        phi_tar,
        phi_sen,
        phi: phi_tar + ilf * phi_sen,
        ilf,
        mean_rank_org: overall.mean_rank_org,
        mean_rank_enh: overall.mean_rank_enh,
        mean_se_org: overall.mean_se_org,
        mean_se_enh: overall.mean_se_enh,
        center: region_stats(&center),
        edge: region_stats(&edge),
        mean_su_loss: 1.0 - phi_sen,
    }
}

/// Runs the vehicle across the road with `set` fixed.
pub fn run_with_set(prep: &Prepared, set: &VirtualGroupSet, mode: CapacityMode) -> Result<SimulationTrace> {
    let cfg = &prep.scenario.config;
    let mut stepper = Stepper::new(prep, set, mode, cfg.rct_team_size)?;
    let prof = &prep.profile;
    let w = cfg.capacity.bandwidth_hz;
    let stride = cfg.su_series_stride.max(1);
    let n_su = prep.sus.len();
    let mut rows = Vec::with_capacity(prof.len());
    let mut su_series = Vec::new();
    let mut nrm = vec![0.0; n_su];
    let mut int = vec![0.0; n_su];
    for i in 0..prof.len() {
        let tv = stepper.tv_step(i)?;
        for j in 0..n_su {
            let (cn, ci) = stepper.su_step(j, i, &tv)?;
            nrm[j] += cn * prof.step;
            int[j] += ci * prof.step;
            if i % stride == 0 {
                su_series.push(SuSample {
                    su: j,
                    t: prof.times[i],
                    se_nrm: cn / w,
                    se_int: ci / w,
                });
            }
        }
        rows.push(StepRecord {
            t: prof.times[i],
            x: prof.x[i],
            region: tv.active.region,
            rank_org: tv.rank_org,
            rank_enh: tv.rank_enh,
            c_org: tv.c_org,
            c_enh: tv.c_enh,
            se_org: tv.c_org / w,
            se_enh: tv.c_enh / w,
            reflex_power: tv.reflex_power,
            active: tv.active.groups(),
        });
    }
    let su_summary: Vec<SuSummary> = (0..n_su)
        .map(|j| SuSummary {
            su: j,
            nrm_integral: nrm[j],
            int_integral: int[j],
            loss: if nrm[j] > 0.0 { 1.0 - int[j] / nrm[j] } else { 0.0 },
        })
        .collect();
    let summary = summarize(&rows, &su_summary, cfg.road_length, cfg.capacity.ilf);
    Ok(SimulationTrace {
        mode: stepper.mode,
        groups: set.pairs(),
        plans: std::mem::take(&mut stepper.plans),
        rows,
        su_series,
        su_summary,
        summary,
        warnings: std::mem::take(&mut stepper.warnings),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutput {
    pub layout: LayoutSolution,
    pub trace: SimulationTrace,
}

/// Builds, solves the layout and runs one scenario.
pub fn run(scenario: Scenario, exec: Execution) -> Result<RunOutput> {
    let prep = Prepared::new(scenario, exec)?;
    let layout = solve_layout(&prep, exec)?;
    let trace = run_with_set(&prep, &layout.set, prep.scenario.config.capacity_mode)?;
    Ok(RunOutput { layout, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    RctTeamSize,
    SuCount,
    AntennaCount,
}

impl std::str::FromStr for SweepAxis {
    type Err = RetfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rctTeamSize" | "rct_team_size" => Ok(Self::RctTeamSize),
            "suCount" | "su_count" => Ok(Self::SuCount),
            "antennaCount" | "antenna_count" => Ok(Self::AntennaCount),
            _ => Err(RetfError::Parse(format!(
                "unknown sweep axis `{s}` (expected rctTeamSize, suCount or antennaCount)"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::RctTeamSize => "rctTeamSize",
            Self::SuCount => "suCount",
            Self::AntennaCount => "antennaCount",
        }
    }

    pub fn apply(self, cfg: &mut ScenarioConfig, value: usize) {
        match self {
            Self::RctTeamSize => cfg.rct_team_size = value,
            Self::SuCount => cfg.sus.count = value,
            Self::AntennaCount => cfg.capacity.num_tx_antennas = value,
        }
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: usize,
    pub runs: usize,
    pub phi_tar: Stat,
    pub phi: Stat,
    pub se_org: Stat,
    pub se_enh: Stat,
    pub rank_enh: Stat,
    pub su_loss: Stat,
}

/// Independent runs for every `(value, seed)` pair, aggregated per value in
/// axis order.
pub fn sweep(
    template: &ScenarioConfig,
    axis: SweepAxis,
    values: &[usize],
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    let seeds: Vec<u64> = if seeds.is_empty() { vec![template.seed] } else { seeds.to_vec() };
    let mut configs = Vec::new();
    for &v in values {
        for &s in &seeds {
            let mut c = template.clone();
            axis.apply(&mut c, v);
            c.seed = s;
            c.validate()?;
            configs.push(c);
        }
    }
    let results = exec.map(&configs, |c| -> Result<TraceSummary> {
        Ok(run(Scenario::build(c.clone())?, Execution::Sequential)?.trace.summary)
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(values
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(&value, chunk)| {
            let col = |f: fn(&TraceSummary) -> f64| Stat::of(&chunk.iter().map(f).collect::<Vec<_>>());
            SweepRow {
                axis,
                value,
                runs: chunk.len(),
                phi_tar: col(|s| s.phi_tar),
                phi: col(|s| s.phi),
                se_org: col(|s| s.mean_se_org),
                se_enh: col(|s| s.mean_se_enh),
                rank_enh: col(|s| s.mean_rank_enh),
                su_loss: col(|s| s.mean_su_loss),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SensitiveUser;

    fn config() -> ScenarioConfig {
        let mut c = ScenarioConfig::scaled_default();
        c.time_step = 0.01;
        c.snapshot_spacing = 8.0;
        c.sus.count = 4;
        c.rct_team_size = 1;
        c
    }

    #[test]
    fn uniform_layout_pattern() {
        let s = uniform_layout(10, 3);
        assert_eq!(s.pairs(), vec![(0, 2), (4, 6), (8, 9)]);
    }

    #[test]
    fn disabled_layout_is_baseline() {
        for mode in [CapacityMode::Geometry, CapacityMode::Csi] {
            let mut c = config();
            c.layout = Layout::Disabled;
            c.capacity_mode = mode;
            let out = run(Scenario::build(c).unwrap(), Execution::Parallel).unwrap();
            assert!(out.trace.rows.iter().all(|r| r.se_enh == r.se_org && r.reflex_power == 0.0));
            assert_eq!(out.trace.summary.phi_tar, 1.0);
            assert!(out.trace.su_summary.iter().all(|s| s.loss == 0.0));
        }
    }

    #[test]
    fn flat_run_matches_objective() {
        for mode in [CapacityMode::Geometry, CapacityMode::Csi] {
            let mut c = config();
            c.layout = Layout::Uniform { group_size: 12 };
            c.capacity_mode = mode;
            c.rpp.switch_time = 0.0;
            let prep = Prepared::new(Scenario::build(c).unwrap(), Execution::Parallel).unwrap();
            let layout = solve_layout(&prep, Execution::Parallel).unwrap();
            let trace = run_with_set(&prep, &layout.set, mode).unwrap();
            let rel = (trace.summary.phi_tar - layout.ratios.tv_ratio).abs() / layout.ratios.tv_ratio;
            // CSI cells straddling an area boundary see the switching state.
            let tol = if mode == CapacityMode::Geometry { 1e-9 } else { 1e-3 };
            assert!(rel < tol, "{mode:?}: {} vs {}", trace.summary.phi_tar, layout.ratios.tv_ratio);
        }
    }

    #[test]
    fn steps_increase_and_se_is_capacity_over_bandwidth() {
        let out = run(Scenario::build(config()).unwrap(), Execution::Parallel).unwrap();
        let w = 100e6;
        assert!(out.trace.rows.windows(2).all(|p| p[0].t < p[1].t));
        for r in &out.trace.rows {
            assert!(r.se_enh >= r.se_org);
            assert_eq!(r.se_org, r.c_org / w);
        }
    }

    #[test]
    fn ssm_replay_respects_switch_delay() {
        let mut c = config();
        c.layout = Layout::Uniform { group_size: 10 };
        let prep = Prepared::new(Scenario::build(c).unwrap(), Execution::Parallel).unwrap();
        let set = uniform_layout(prep.scenario.config.rpp.count, 10);
        let trace = run_with_set(&prep, &set, CapacityMode::Geometry).unwrap();
        let events = ssm_schedule(&prep.scenario.ctx, &set).unwrap();
        for r in &trace.rows {
            for &g in &r.active {
                let act = events
                    .iter()
                    .find(|e| e.group == g && e.action == SsmAction::Activate)
                    .unwrap();
                let off = events
                    .iter()
                    .find(|e| e.group == g && e.action == SsmAction::Deactivate)
                    .unwrap();
                assert!(act.time + 0.2 <= r.t + 1e-12 && r.t < off.time);
            }
        }
    }

    #[test]
    fn serial_and_parallel_traces_identical() {
        let mut c = config();
        c.capacity_mode = CapacityMode::Hybrid;
        let a = run(Scenario::build(c.clone()).unwrap(), Execution::Sequential).unwrap();
        let b = run(Scenario::build(c).unwrap(), Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn collaboration_adds_reflex_power() {
        let mut c = config();
        c.layout = Layout::Uniform { group_size: 6 };
        c.sus.count = 0;
        let base = run(Scenario::build(c.clone()).unwrap(), Execution::Parallel).unwrap();
        c.rct_team_size = 4;
        let team = run(Scenario::build(c).unwrap(), Execution::Parallel).unwrap();
        let sum = |o: &RunOutput| o.trace.rows.iter().map(|r| r.reflex_power).sum::<f64>();
        assert!(sum(&team) > sum(&base));
        assert!(!team.trace.plans.is_empty());
    }

    #[test]
    fn sweep_rows_follow_values() {
        let mut c = config();
        c.sus.count = 0;
        c.sus.explicit = vec![SensitiveUser::stationary(120.0, 3.5, 1)];
        let rows = sweep(&c, SweepAxis::RctTeamSize, &[1, 2, 4, 8], &[1, 2], Execution::Parallel).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![1, 2, 4, 8]);
        assert!(rows.iter().all(|r| r.runs == 2));
        let single = sweep(&c, SweepAxis::SuCount, &[0], &[], Execution::Sequential).unwrap();
        let direct = run(Scenario::build(c).unwrap(), Execution::Sequential).unwrap();
        assert_eq!(single[0].phi.mean, direct.trace.summary.phi);
    }
}
