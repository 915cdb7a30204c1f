//! Channel snapshots on a fixed road grid: one direct and one flat-panel
//! reflex realization per cell, plus each SU's reflex channel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::budget::LinkBudget;
use crate::channel::{
    generate_cir, hermitian_eigen, mean_gram, select_rank, to_frequency, CMatrix, LinkGeometry,
    RankAdaptation, C64,
};
use crate::error::Result;
use crate::exec::Execution;
use crate::geometry::{panel_line_point, Vec3};
use crate::scenario::{derive_seed, stream, CapacityMode, Scenario};

/// Cells of width `spacing` over `[0, length]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotGrid {
    pub spacing: f64,
    pub cells: usize,
}

impl SnapshotGrid {
    pub fn new(length: f64, spacing: f64) -> Self {
        Self {
            spacing,
            cells: ((length / spacing).ceil() as usize).max(1),
        }
    }

    pub fn cell_of(&self, x: f64) -> usize {
        ((x / self.spacing).floor().max(0.0) as usize).min(self.cells - 1)
    }

    pub fn center(&self, c: usize) -> f64 {
        (c as f64 + 0.5) * self.spacing
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub x: f64,
    pub direct: Vec<CMatrix>,
    pub reflex: Vec<CMatrix>,
    pub cov_direct: CMatrix,
    pub cov_reflex: CMatrix,
    /// Direct-only spectrum and its rank.
    pub direct_rank: RankAdaptation,
    /// BS power at the PAP and flat-panel reflex power at unit bias, at `x`.
    pub signal: f64,
    pub reflex_unit: f64,
    /// Age of the record when the controller consults it, seconds.
    pub age: f64,
    pub fresh: bool,
}

impl Snapshot {
    pub fn direct_top(&self) -> f64 {
        self.direct_rank.eigenvalues[0]
    }
}

#[derive(Debug, Clone)]
pub struct SnapshotStore {
    pub grid: SnapshotGrid,
    pub cells: Vec<Snapshot>,
    /// Per SU, the `1 x N_t` reflex channel on every subcarrier.
    pub su_reflex: Vec<Vec<CMatrix>>,
}

/// Reflex-key for the flat-panel realization shared by every unrotated group.
pub const FLAT_KEY: u64 = 0;

/// Key of an assisting group's realization while it serves `mvrg`.
pub fn rotated_key(avrg: usize, mvrg: usize) -> u64 {
    1 + ((avrg as u64) << 32 | mvrg as u64)
}

pub fn channel_seed(scenario: &Scenario, keys: &[u64]) -> u64 {
    derive_seed(scenario.seed(), keys)
}

/// Per-subcarrier channel for the link `tx -> rx`, optionally via `point`.
pub fn realize(
    scenario: &Scenario,
    tx: Vec3,
    via: Option<Vec3>,
    rx: Vec3,
    num_rx: usize,
    seed: u64,
) -> Vec<CMatrix> {
    let nt = scenario.config.capacity.num_tx_antennas;
    let link = match via {
        Some(p) => LinkGeometry::via(tx, p, rx, nt, num_rx),
        None => LinkGeometry::between(tx, rx, nt, num_rx),
    };
    to_frequency(&generate_cir(&link, &scenario.config.fading, seed), &scenario.config.fading)
}

pub fn direct_rank(scenario: &Scenario, cov: &CMatrix) -> Result<RankAdaptation> {
    let p = &scenario.config.capacity;
    let (ev, _) = hermitian_eigen(cov);
    select_rank(
        ev,
        p.num_rx_antennas.min(p.num_tx_antennas),
        p.eigen_threshold,
        0.0,
    )
}

impl SnapshotStore {
    pub fn build(scenario: &Scenario, exec: Execution) -> Result<Self> {
        let cfg = &scenario.config;
        let grid = SnapshotGrid::new(cfg.road_length, cfg.snapshot_spacing);
        let budget = LinkBudget::new(scenario);
        let nr = cfg.capacity.num_rx_antennas;
        let bs = scenario.bs().position;
        let standoff = cfg.rpp.standoff;

        let mut age_rng = ChaCha8Rng::seed_from_u64(channel_seed(scenario, &[stream::RECORD_AGE]));
        let ages: Vec<f64> = (0..grid.cells)
            .map(|_| match cfg.capacity_mode {
                CapacityMode::Hybrid => age_rng.random_range(0.0..=cfg.hybrid.max_record_age),
                _ => 0.0,
            })
            .collect();

        let cells = exec.map_range(grid.cells, |c| -> Result<Snapshot> {
            let x = grid.center(c);
            let tv = budget.pap(x).position;
            let direct = realize(scenario, bs, None, tv, nr, channel_seed(scenario, &[stream::DIRECT, c as u64]));
            let point = panel_line_point(bs, tv, standoff).unwrap_or(Vec3::new(x, standoff, 0.0));
            let reflex = realize(
                scenario,
                bs,
                Some(point),
                tv,
                nr,
                channel_seed(scenario, &[stream::REFLEX, c as u64, FLAT_KEY]),
            );
            let cov_direct = mean_gram(&direct).expect("non-empty");
            let cov_reflex = mean_gram(&reflex).expect("non-empty");
            Ok(Snapshot {
                x,
                direct_rank: direct_rank(scenario, &cov_direct)?,
                cov_direct,
                cov_reflex,
                direct,
                reflex,
                signal: budget.tv_direct(x)?.signal,
                reflex_unit: budget.tv_reflex_unit(x)?,
                age: ages[c],
                fresh: ages[c] <= cfg.hybrid.staleness_horizon || cfg.capacity_mode != CapacityMode::Hybrid,
            })
        });
        let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;

        let su_reflex = exec.map_range(scenario.sus.len(), |j| {
            let su = &scenario.sus[j];
            let pos = su.position_at(su.encounter_time(cfg.rated_speed), cfg.rated_speed);
            let point = panel_line_point(bs, pos, standoff).unwrap_or(Vec3::new(pos.x, standoff, 0.0));
            realize(scenario, bs, Some(point), pos, 1, channel_seed(scenario, &[stream::SU_REFLEX, j as u64]))
        });
        Ok(Self {
            grid,
            cells,
            su_reflex,
        })
    }

    pub fn at(&self, x: f64) -> &Snapshot {
        &self.cells[self.grid.cell_of(x)]
    }
}

/// Mean leakage `(1/N_B) Σ_v ‖h_v W‖² / R` of a precoder `W` (columns
/// `vectors[..rank]`) into the channel `h`.
pub fn precoded_gain(h: &[CMatrix], vectors: &[nalgebra::DVector<C64>], rank: usize) -> f64 {
    if h.is_empty() || rank == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for hv in h {
        for w in &vectors[..rank] {
            acc += (hv * w).norm_squared();
        }
    }
    acc / (h.len() as f64 * rank as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::hermitian_eigenvalues;
    use crate::scenario::ScenarioConfig;

    fn small() -> Scenario {
        let mut c = ScenarioConfig::scaled_default();
        c.snapshot_spacing = 40.0;
        c.sus.count = 3;
        Scenario::build(c).unwrap()
    }

    #[test]
    fn grid_cells() {
        let g = SnapshotGrid::new(400.0, 2.0);
        assert_eq!(g.cells, 200);
        assert_eq!(g.cell_of(-1.0), 0);
        assert_eq!(g.cell_of(3.9), 1);
        assert_eq!(g.cell_of(400.0), 199);
        assert_eq!(g.center(0), 1.0);
    }

    #[test]
    fn store_is_deterministic_and_parallel_safe() {
        let s = small();
        let a = SnapshotStore::build(&s, Execution::Sequential).unwrap();
        let b = SnapshotStore::build(&s, Execution::Parallel).unwrap();
        assert_eq!(a.cells.len(), 10);
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(x.direct, y.direct);
            assert_eq!(x.reflex, y.reflex);
        }
        assert_eq!(a.su_reflex, b.su_reflex);
        assert_eq!(a.su_reflex.len(), 3);
        assert_eq!(a.su_reflex[0][0].shape(), (1, 8));
    }

    #[test]
    fn covariances_are_hermitian_psd() {
        let s = small();
        let st = SnapshotStore::build(&s, Execution::Parallel).unwrap();
        for c in &st.cells {
            for m in [&c.cov_direct, &c.cov_reflex] {
                assert!((m - m.adjoint()).norm() <= 1e-12 * m.norm());
                assert!(hermitian_eigenvalues(m).iter().all(|&l| l >= -1e-12 * m.norm()));
            }
        }
    }

    #[test]
    fn precoder_leakage_bounds() {
        let s = small();
        let st = SnapshotStore::build(&s, Execution::Sequential).unwrap();
        let (_, vecs) = hermitian_eigen(&st.cells[3].cov_direct);
        let h = &st.su_reflex[0];
        let energy: f64 = h.iter().map(|m| m.norm_squared()).sum::<f64>() / h.len() as f64;
        // The full unitary basis preserves energy.
        let all = precoded_gain(h, &vecs, 8) * 8.0;
        assert!((all - energy).abs() <= 1e-9 * energy);
        assert!(precoded_gain(h, &vecs, 1) <= energy + 1e-12);
    }
}
