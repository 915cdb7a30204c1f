//! Cluster-ray fast fading, the joint direct/reflex frequency-domain channel
//! and covariance-based rank adaptation.
//!
//! Rays are drawn around the line-of-sight departure/arrival azimuths with an
//! exponential delay profile; arrays are half-wavelength ULAs along the road
//! axis. Channels are normalized to unit mean ray power, so the large-scale
//! power difference between the direct and reflex links is carried entirely
//! by the power factor.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RetfError};
use crate::geometry::{
    reflecting_point, EffectivePanel, ReflectionArea, TargetVehicleState, Transmitter, Vec3,
};
use crate::propagation::{bias_loss_ratio, received_power, Path, RadioModels, Receiver};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FadingConfig {
    pub num_clusters: usize,
    pub rays_per_cluster: usize,
    /// RMS-scale of the exponential delay profile, seconds.
    pub delay_spread: f64,
    pub angle_spread_deg: f64,
    pub num_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    /// Mixed into the scenario seed to derive every fading stream.
    pub seed: u64,
}

impl Default for FadingConfig {
    fn default() -> Self {
        Self {
            num_clusters: 6,
            rays_per_cluster: 4,
            delay_spread: 300e-9,
            angle_spread_deg: 8.0,
            num_subcarriers: 32,
            subcarrier_spacing_hz: 3.125e6,
            seed: 0,
        }
    }
}

impl FadingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_subcarriers == 0 || self.num_clusters == 0 || self.rays_per_cluster == 0 {
            return Err(RetfError::InvalidScenario(
                "fading needs at least one subcarrier, cluster and ray".into(),
            ));
        }
        if !(self.delay_spread > 0.0) || !(self.subcarrier_spacing_hz > 0.0) {
            return Err(RetfError::InvalidScenario(
                "delay spread and subcarrier spacing must be positive".into(),
            ));
        }
        if !(self.angle_spread_deg >= 0.0) {
            return Err(RetfError::InvalidScenario("angle spread must be >= 0".into()));
        }
        Ok(())
    }

    /// Delay-tap spacing of the sampled impulse response.
    pub fn sample_period(&self) -> f64 {
        1.0 / (self.num_subcarriers as f64 * self.subcarrier_spacing_hz)
    }
}

/// Line-of-sight azimuths of a link plus the array sizes at both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub aod: f64,
    pub aoa: f64,
    pub num_tx: usize,
    pub num_rx: usize,
}

impl LinkGeometry {
    pub fn between(tx: Vec3, rx: Vec3, num_tx: usize, num_rx: usize) -> Self {
        Self {
            aod: (rx - tx).azimuth(),
            aoa: (tx - rx).azimuth(),
            num_tx,
            num_rx,
        }
    }

    /// Reflected link: departure toward the reflecting point, arrival from it.
    pub fn via(tx: Vec3, point: Vec3, rx: Vec3, num_tx: usize, num_rx: usize) -> Self {
        Self {
            aod: (point - tx).azimuth(),
            aoa: (point - rx).azimuth(),
            num_tx,
            num_rx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub delay: f64,
    /// Mean power; the powers of one impulse response sum to 1.
    pub power: f64,
    pub aod: f64,
    pub aoa: f64,
    pub phase: f64,
}

/// Steering vector of a half-wavelength ULA along the x-axis.
pub fn steering(n: usize, azimuth: f64) -> DVector<C64> {
    let c = azimuth.cos();
    DVector::from_fn(n, |k, _| C64::from_polar(1.0, PI * k as f64 * c))
}

impl Ray {
    /// `√P e^{jΦ} a_rx(aoa) a_tx(aod)ᴴ`.
    pub fn coefficient(&self, num_rx: usize, num_tx: usize) -> CMatrix {
        let ar = steering(num_rx, self.aoa);
        let at = steering(num_tx, self.aod);
        let scale = C64::from_polar(self.power.sqrt(), self.phase);
        (ar * at.adjoint()) * scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cir {
    pub rays: Vec<Ray>,
    pub num_rx: usize,
    pub num_tx: usize,
}

pub fn generate_cir(link: &LinkGeometry, cfg: &FadingConfig, stream_seed: u64) -> Cir {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let spread = cfg.angle_spread_deg.to_radians();
    let angle = Normal::new(0.0, spread).expect("non-negative spread");
    let shadow = Normal::new(0.0, 3.0).expect("finite");

    let mut clusters: Vec<(f64, f64)> = (0..cfg.num_clusters)
        .map(|c| {
            let tau = if c == 0 {
                0.0
            } else {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                -cfg.delay_spread * u.ln()
            };
            let z: f64 = shadow.sample(&mut rng);
            (tau, (-tau / cfg.delay_spread).exp() * 10f64.powf(-z / 10.0))
        })
        .collect();
    let total: f64 = clusters.iter().map(|c| c.1).sum();
    for c in &mut clusters {
        c.1 /= total;
    }

    let per = cfg.rays_per_cluster as f64;
    let mut rays = Vec::with_capacity(cfg.num_clusters * cfg.rays_per_cluster);
    for (tau, p) in clusters {
        for _ in 0..cfg.rays_per_cluster {
            let d_off: f64 = angle.sample(&mut rng);
            let a_off: f64 = angle.sample(&mut rng);
            let phase = rng.random_range(0.0..TAU);
            rays.push(Ray {
                delay: tau,
                power: p / per,
                aod: link.aod + d_off,
                aoa: link.aoa + a_off,
                phase,
            });
        }
    }
    Cir {
        rays,
        num_rx: link.num_rx,
        num_tx: link.num_tx,
    }
}

/// Rays binned onto the sampled delay grid (circularly wrapped); rays that
/// share a tap add coherently.
pub fn tap_matrices(cir: &Cir, cfg: &FadingConfig) -> BTreeMap<usize, CMatrix> {
    let ts = cfg.sample_period();
    let nb = cfg.num_subcarriers;
    let mut taps: BTreeMap<usize, CMatrix> = BTreeMap::new();
    for ray in &cir.rays {
        let n = ((ray.delay / ts).round() as usize) % nb;
        let c = ray.coefficient(cir.num_rx, cir.num_tx);
        taps.entry(n)
            .and_modify(|m| *m += &c)
            .or_insert(c);
    }
    taps
}

/// Per-subcarrier channel `H_v = Σ_n h_n e^{-j2π v n / N_B}`.
pub fn to_frequency(cir: &Cir, cfg: &FadingConfig) -> Vec<CMatrix> {
    let nb = cfg.num_subcarriers;
    let taps = tap_matrices(cir, cfg);
    (0..nb)
        .map(|v| {
            let mut h = CMatrix::zeros(cir.num_rx, cir.num_tx);
            for (n, m) in &taps {
                let w = C64::from_polar(1.0, -TAU * (v * n % nb) as f64 / nb as f64);
                h += m * w;
            }
            h
        })
        .collect()
}

/// `(1/N_B) Σ_v H_vᴴ H_v`.
pub fn mean_gram(hs: &[CMatrix]) -> Option<CMatrix> {
    let first = hs.first()?;
    let mut acc = CMatrix::zeros(first.ncols(), first.ncols());
    for h in hs {
        acc += h.adjoint() * h;
    }
    Some(acc / C64::from(hs.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointChannel {
    pub direct: Vec<CMatrix>,
    pub reflex: Vec<CMatrix>,
    /// Weight of the reflex block (reflex/direct received-power ratio).
    pub power_factor: f64,
}

impl JointChannel {
    pub fn new(direct: Vec<CMatrix>, reflex: Vec<CMatrix>, power_factor: f64) -> Result<Self> {
        if direct.is_empty() {
            return Err(RetfError::InvalidScenario("joint channel needs N_B >= 1".into()));
        }
        if !(power_factor >= 0.0 && power_factor.is_finite()) {
            return Err(RetfError::InvalidScenario(format!(
                "power factor must be finite and >= 0, got {power_factor}"
            )));
        }
        let shape = direct[0].shape();
        if direct.iter().any(|h| h.shape() != shape) {
            return Err(RetfError::InvalidScenario("direct matrices differ in shape".into()));
        }
        if !reflex.is_empty()
            && (reflex.len() != direct.len() || reflex.iter().any(|h| h.shape() != shape))
        {
            return Err(RetfError::InvalidScenario(
                "reflex matrices must match the direct channel in count and shape".into(),
            ));
        }
        Ok(Self {
            direct,
            reflex,
            power_factor,
        })
    }

    pub fn direct_only(direct: Vec<CMatrix>) -> Result<Self> {
        Self::new(direct, Vec::new(), 0.0)
    }

    pub fn has_reflex(&self) -> bool {
        !self.reflex.is_empty() && self.power_factor > 0.0
    }

    pub fn num_subcarriers(&self) -> usize {
        self.direct.len()
    }

    pub fn num_rx(&self) -> usize {
        self.direct[0].nrows()
    }

    pub fn num_tx(&self) -> usize {
        self.direct[0].ncols()
    }

    /// `[H_dir; √ω* H_ref]` for subcarrier `v`; the direct block alone when
    /// the reflex branch is absent.
    pub fn stacked(&self, v: usize) -> CMatrix {
        let d = &self.direct[v];
        if !self.has_reflex() {
            return d.clone();
        }
        let r = &self.reflex[v] * C64::from(self.power_factor.sqrt());
        let mut out = CMatrix::zeros(2 * d.nrows(), d.ncols());
        out.rows_mut(0, d.nrows()).copy_from(d);
        out.rows_mut(d.nrows(), d.nrows()).copy_from(&r);
        out
    }

    pub fn direct_covariance(&self) -> CMatrix {
        mean_gram(&self.direct).expect("non-empty")
    }

    pub fn reflex_covariance(&self) -> Option<CMatrix> {
        mean_gram(&self.reflex)
    }

    pub fn covariance(&self) -> CMatrix {
        let mut cov = self.direct_covariance();
        if self.has_reflex() {
            cov += self.reflex_covariance().expect("reflex present") * C64::from(self.power_factor);
        }
        cov
    }

    /// Receive rows of the stacked channel (upper bound on the layer count).
    pub fn stacked_rows(&self) -> usize {
        if self.has_reflex() {
            2 * self.num_rx()
        } else {
            self.num_rx()
        }
    }
}

/// Eigenvalues of a Hermitian matrix, descending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Eigenpairs of a Hermitian matrix, descending by eigenvalue.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, Vec<DVector<C64>>) {
    let e = m.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..e.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]));
    let vals = idx.iter().map(|&i| e.eigenvalues[i]).collect();
    let vecs = idx.iter().map(|&i| e.eigenvectors.column(i).into_owned()).collect();
    (vals, vecs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankAdaptation {
    pub rank: usize,
    /// Eigenvalues of the covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalue the relative threshold is measured against.
    pub reference: f64,
}

/// Rank selection on a precomputed covariance spectrum. Layers are counted
/// against `threshold × reference` and capped at the number of stacked
/// receive rows.
pub fn select_rank(
    eigenvalues: Vec<f64>,
    max_layers: usize,
    threshold: f64,
    reference: f64,
) -> Result<RankAdaptation> {
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(RetfError::InvalidScenario(
            "rank adaptation on an all-zero channel".into(),
        ));
    }
    let reference = if reference > 0.0 { reference } else { top };
    let cut = threshold * reference;
    let count = eigenvalues.iter().filter(|&&l| l >= cut).count();
    let rank = count.min(max_layers).max(1);
    Ok(RankAdaptation {
        rank,
        eigenvalues,
        reference,
    })
}

/// Rank adaptation on the averaged joint covariance. The threshold is
/// relative to the largest eigenvalue of the direct-only covariance, so the
/// same absolute cut applies with and without the reflex branch.
pub fn rank_adapt(joint: &JointChannel, threshold: f64) -> Result<RankAdaptation> {
    let direct_top = hermitian_eigenvalues(&joint.direct_covariance())
        .first()
        .copied()
        .unwrap_or(0.0);
    let ev = hermitian_eigenvalues(&joint.covariance());
    let layers = joint.stacked_rows().min(joint.num_tx());
    select_rank(ev, layers, threshold, direct_top)
}

/// Received powers behind the power factor at one vehicle position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFactor {
    pub value: f64,
    pub direct_power: f64,
    pub reflex_power: f64,
}

/// Reflex-to-direct received power ratio for the vehicle at `tv`, reflecting
/// off `panel` whose area profile is given by `areas`. Zero when the vehicle
/// is outside every active area.
pub fn power_factor(
    tv: &TargetVehicleState,
    bs: &Transmitter,
    panel: &EffectivePanel,
    areas: &[(ReflectionArea, bool)],
    models: &RadioModels,
) -> Result<PowerFactor> {
    let pos = tv.position();
    let pap = Receiver {
        position: pos,
        orientation: tv.pap_orientation,
        pattern: &models.vehicle_pattern,
    };
    let direct_power = received_power(bs, &models.tx_pattern, &pap, Path::Direct, &models.loss)?;
    let bias = bias_loss_ratio(tv.position_x, areas);
    let reflex_power = if bias > 0.0 {
        let point = reflecting_point(bs.position, pos, panel)?.point;
        let sap = Receiver {
            orientation: tv.sap_orientation,
            ..pap
        };
        received_power(bs, &models.tx_pattern, &sap, Path::Reflex { point, bias }, &models.loss)?
    } else {
        0.0
    };
    Ok(PowerFactor {
        value: if direct_power > 0.0 { reflex_power / direct_power } else { 0.0 },
        direct_power,
        reflex_power,
    })
}
