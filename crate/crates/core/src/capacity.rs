//! Shannon capacities for the target vehicle and sensitive users, and the
//! throughput ratios that make up the grouping objective.
//!
//! The functions here take received powers that the caller has already
//! evaluated; scenario plumbing lives in `objective`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RetfError};

/// Thermal noise density, W/Hz (-174 dBm/Hz).
pub const THERMAL_NOISE_W_PER_HZ: f64 = 3.981_071_705_534_972e-21;

/// The interference level factor has no default and must be configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityParams {
    #[serde(default = "param_defaults::bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default = "param_defaults::rx")]
    pub num_rx_antennas: usize,
    #[serde(default = "param_defaults::tx")]
    pub num_tx_antennas: usize,
    /// Absent means thermal noise integrated over the bandwidth.
    #[serde(default)]
    pub noise_floor_watts: Option<f64>,
    /// Interference level factor ζ.
    pub ilf: f64,
    /// Relative eigenvalue threshold for rank adaptation.
    #[serde(default = "param_defaults::threshold")]
    pub eigen_threshold: f64,
    /// Scale applied to the geometric SU interference estimate.
    #[serde(default = "param_defaults::one")]
    pub empirical_power_factor: f64,
}

mod param_defaults {
    pub fn bandwidth() -> f64 {
        100e6
    }
    pub fn rx() -> usize {
        2
    }
    pub fn tx() -> usize {
        8
    }
    pub fn threshold() -> f64 {
        0.01
    }
    pub fn one() -> f64 {
        1.0
    }
}

impl Default for CapacityParams {
    fn default() -> Self {
        Self {
            bandwidth_hz: 100e6,
            num_rx_antennas: 2,
            num_tx_antennas: 8,
            noise_floor_watts: None,
            ilf: 1.0,
            eigen_threshold: 0.01,
            empirical_power_factor: 1.0,
        }
    }
}

impl CapacityParams {
    pub fn noise(&self) -> f64 {
        self.noise_floor_watts
            .unwrap_or(THERMAL_NOISE_W_PER_HZ * self.bandwidth_hz)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0) {
            return Err(RetfError::InvalidScenario("bandwidth must be positive".into()));
        }
        if self.num_rx_antennas == 0 || self.num_tx_antennas < self.num_rx_antennas {
            return Err(RetfError::InvalidScenario(
                "need N_r >= 1 and N_t >= N_r".into(),
            ));
        }
        if !(self.noise().is_finite() && self.noise() >= 0.0) {
            return Err(RetfError::InvalidScenario("noise floor must be >= 0".into()));
        }
        if !(self.ilf >= 0.0 && self.ilf.is_finite()) {
            return Err(RetfError::InvalidScenario("ILF must be finite and >= 0".into()));
        }
        if !(self.eigen_threshold > 0.0 && self.eigen_threshold < 1.0) {
            return Err(RetfError::InvalidScenario(
                "eigen threshold must lie in (0, 1)".into(),
            ));
        }
        if !(self.empirical_power_factor >= 0.0) {
            return Err(RetfError::InvalidScenario(
                "empirical power factor must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn sinr(signal: f64, impairment: f64) -> Result<f64> {
    if !(impairment > 0.0) {
        return Err(RetfError::InvalidScenario(
            "SINR denominator is zero: configure a noise floor or add interferers".into(),
        ));
    }
    Ok(signal / impairment)
}

/// Original (direct only) and enhanced (direct plus reflex) capacity from
/// geometric SINRs. `interference_*` are summed interferer powers on each
/// panel, excluding noise.
pub fn geometry_capacity(
    signal_pap: f64,
    interference_pap: f64,
    signal_sap: f64,
    interference_sap: f64,
    params: &CapacityParams,
) -> Result<(f64, f64)> {
    let scale = params.bandwidth_hz * params.num_rx_antennas as f64;
    let noise = params.noise();
    let c_org = scale * (1.0 + sinr(signal_pap, interference_pap + noise)?).log2();
    if signal_sap <= 0.0 {
        return Ok((c_org, c_org));
    }
    let c_ref = scale * (1.0 + sinr(signal_sap, interference_sap + noise)?).log2();
    Ok((c_org, c_org + c_ref))
}

/// Capacity over `rank` layers with the transmit power split uniformly.
/// `eigenvalues` are the covariance eigenvalues in descending order.
pub fn csi_capacity(
    signal: f64,
    interference: f64,
    eigenvalues: &[f64],
    rank: usize,
    params: &CapacityParams,
) -> Result<f64> {
    if rank == 0 || rank > eigenvalues.len() {
        return Err(RetfError::Invariant(format!(
            "rank {rank} outside 1..={}",
            eigenvalues.len()
        )));
    }
    let impairment = rank as f64 * (interference + params.noise());
    let mut c = 0.0;
    for &l in &eigenvalues[..rank] {
        c += (1.0 + sinr(signal * l.max(0.0), impairment)?).log2();
    }
    Ok(params.bandwidth_hz * c)
}

/// Normal and interfered capacities of a single-antenna SU. `own` is the
/// serving transmitter's power, `serving_bs` the TV's BS power at the SU,
/// `others` the remaining transmitters, `reflex` the reflected interference.
pub fn su_capacities(
    own: f64,
    serving_bs: f64,
    others: f64,
    reflex: f64,
    params: &CapacityParams,
) -> Result<(f64, f64)> {
    let base = serving_bs + others + params.noise();
    let w = params.bandwidth_hz;
    let c_nrm = w * (1.0 + sinr(own, base)?).log2();
    let c_int = if reflex > 0.0 {
        w * (1.0 + sinr(own, base + reflex)?).log2()
    } else {
        c_nrm
    };
    Ok((c_nrm, c_int))
}

/// One element of an SU's influence set: RA length `xi`, the road length
/// `psi` over which the SU stays inside that RA, and the SU's road position
/// `at` in the middle of the co-location window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfluenceTerm {
    pub group: usize,
    pub xi: f64,
    pub psi: f64,
    pub at: f64,
}

/// Total interference duration for an SU moving at `su_speed` (0 when
/// stationary) while the TV crosses the influencing areas at `tv_speed`.
pub fn interference_duration(terms: &[InfluenceTerm], tv_speed: f64, su_speed: f64) -> f64 {
    terms
        .iter()
        .map(|t| {
            let tv = t.xi / tv_speed;
            if su_speed == 0.0 {
                tv
            } else {
                tv.min(t.psi / su_speed.abs())
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThroughputRatios {
    pub tv_ratio: f64,
    pub su_ratio: f64,
    pub joint: f64,
}

/// Per-SU throughput ratio, clamped to `[0, 1]`.
pub fn su_ratio(duration: f64, c_nrm_at: f64, c_int_at: f64, c_nrm_integral: f64) -> f64 {
    let loss = c_nrm_at - c_int_at;
    if duration <= 0.0 || loss <= 0.0 {
        return 1.0;
    }
    if !(c_nrm_integral > 0.0) {
        return 0.0;
    }
    (1.0 - duration * loss / c_nrm_integral).clamp(0.0, 1.0)
}

/// Combines the TV capacity integrals and per-SU ratios into `Φ`.
pub fn throughput_ratios(
    c_org_integral: f64,
    c_enh_integral: f64,
    su_ratios: &[f64],
    ilf: f64,
) -> Result<ThroughputRatios> {
    if !(c_org_integral > 0.0) {
        return Err(RetfError::Invariant(
            "original TV capacity integrates to zero".into(),
        ));
    }
    let tv_ratio = c_enh_integral / c_org_integral;
    let su = if su_ratios.is_empty() {
        1.0
    } else {
        su_ratios.iter().sum::<f64>() / su_ratios.len() as f64
    };
    Ok(ThroughputRatios {
        tv_ratio,
        su_ratio: su,
        joint: tv_ratio + ilf * su,
    })
}

/// Midpoint-rule sample times covering `[0, span]` with step close to `dt`.
pub fn midpoint_grid(span: f64, dt: f64) -> (Vec<f64>, f64) {
    let n = ((span / dt).round() as usize).max(1);
    let h = span / n as f64;
    ((0..n).map(|k| (k as f64 + 0.5) * h).collect(), h)
}
