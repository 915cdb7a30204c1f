//! Antenna gains, path/reflection/bias losses and received power for the
//! direct and reflex links. All ratios are linear power ratios.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RetfError};
use crate::geometry::{ReflectionArea, Transmitter, Vec3};

/// Element pattern. `Sector` follows the 3GPP three-sector pattern: parabolic
/// horizontal and vertical cuts combined and clipped at the front-to-back floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AntennaPattern {
    Omni,
    Sector {
        max_gain_db: f64,
        beamwidth_3db_deg: f64,
        sidelobe_floor_db: f64,
        vertical_sla_db: f64,
    },
}

impl Default for AntennaPattern {
    fn default() -> Self {
        AntennaPattern::Sector {
            max_gain_db: 8.0,
            beamwidth_3db_deg: 65.0,
            sidelobe_floor_db: 30.0,
            vertical_sla_db: 30.0,
        }
    }
}

fn wrap_pi(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut a = a % tau;
    if a > std::f64::consts::PI {
        a -= tau;
    } else if a < -std::f64::consts::PI {
        a += tau;
    }
    a
}

impl AntennaPattern {
    pub fn validate(&self) -> Result<()> {
        if let AntennaPattern::Sector {
            max_gain_db,
            beamwidth_3db_deg,
            sidelobe_floor_db,
            vertical_sla_db,
        } = *self
        {
            if !max_gain_db.is_finite() || !(beamwidth_3db_deg > 0.0) {
                return Err(RetfError::InvalidScenario(
                    "antenna pattern needs finite gain and positive beamwidth".into(),
                ));
            }
            if sidelobe_floor_db < 0.0 || vertical_sla_db < 0.0 {
                return Err(RetfError::InvalidScenario(
                    "antenna attenuation floors must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    /// Attenuation in dB for a direction `dir` relative to boresight `orient`.
    pub fn attenuation_db(&self, dir: Vec3, orient: Vec3) -> f64 {
        let AntennaPattern::Sector {
            beamwidth_3db_deg,
            sidelobe_floor_db,
            vertical_sla_db,
            ..
        } = *self
        else {
            return 0.0;
        };
        let horiz = |v: Vec3| v.x.hypot(v.y);
        let phi = if horiz(dir) > 0.0 && horiz(orient) > 0.0 {
            wrap_pi(dir.azimuth() - orient.azimuth()).abs().to_degrees()
        } else {
            0.0
        };
        let theta = (dir.z.atan2(horiz(dir)) - orient.z.atan2(horiz(orient))).to_degrees();
        let a_h = (12.0 * (phi / beamwidth_3db_deg).powi(2)).min(sidelobe_floor_db);
        let a_v = (12.0 * (theta / beamwidth_3db_deg).powi(2)).min(vertical_sla_db);
        (a_h + a_v).min(sidelobe_floor_db)
    }

    /// Linear power gain of a panel at `panel_pos` with boresight `orient`
    /// toward `target`.
    pub fn gain(&self, panel_pos: Vec3, target: Vec3, orient: Vec3) -> Result<f64> {
        let dir = target - panel_pos;
        if !(dir.norm() > 0.0) {
            return Err(RetfError::InvalidScenario(
                "antenna gain requested along a zero-length direction".into(),
            ));
        }
        match *self {
            AntennaPattern::Omni => Ok(1.0),
            AntennaPattern::Sector { max_gain_db, .. } => {
                Ok(db_to_ratio(max_gain_db - self.attenuation_db(dir, orient)))
            }
        }
    }
}

pub fn db_to_ratio(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn ratio_to_db(r: f64) -> f64 {
    10.0 * r.log10()
}

/// Distance-based losses plus the reflection and bias-loss parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossModel {
    pub carrier_freq_hz: f64,
    pub pl_exponent: f64,
    pub pl_intercept_db: f64,
    pub reflection_loss_db: f64,
    /// Bias-loss decay χ in 1/m².
    pub decay: f64,
    /// Bias-loss cutoff ω₀.
    pub threshold: f64,
}

impl Default for LossModel {
    fn default() -> Self {
        // UMa LOS at 3.5 GHz: 28 + 22 log10(d) + 20 log10(f_GHz).
        let f = 3.5e9;
        Self {
            carrier_freq_hz: f,
            pl_exponent: 2.2,
            pl_intercept_db: 28.0 + 20.0 * (f / 1e9).log10(),
            reflection_loss_db: 10.0,
            decay: std::f64::consts::LN_10 / 4.0,
            threshold: 0.1,
        }
    }
}

impl LossModel {
    pub fn free_space(carrier_freq_hz: f64) -> Self {
        Self {
            carrier_freq_hz,
            pl_exponent: 2.0,
            pl_intercept_db: 20.0 * carrier_freq_hz.log10() - 147.55,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::geometry::idra_half_width(self.decay, self.threshold)?;
        if !(self.reflection_loss_db >= 0.0) {
            return Err(RetfError::InvalidScenario(
                "reflection loss must be non-negative dB".into(),
            ));
        }
        if !(self.pl_exponent > 0.0) || !self.pl_intercept_db.is_finite() {
            return Err(RetfError::InvalidScenario("invalid path-loss parameters".into()));
        }
        Ok(())
    }

    pub fn path_loss_db_at(&self, d: f64) -> f64 {
        self.pl_intercept_db + 10.0 * self.pl_exponent * d.log10()
    }

    pub fn ratio_at_distance(&self, d: f64) -> Result<f64> {
        if !(d > 0.0) {
            return Err(RetfError::InvalidScenario(
                "path loss requested at zero distance".into(),
            ));
        }
        Ok(db_to_ratio(-self.path_loss_db_at(d)))
    }

    pub fn reflection_ratio(&self) -> f64 {
        db_to_ratio(-self.reflection_loss_db)
    }
}

pub fn path_loss_ratio(a: Vec3, b: Vec3, model: &LossModel) -> Result<f64> {
    model.ratio_at_distance(a.distance(b))
}

/// Two-stage path loss over `a → point → b`.
pub fn reflex_path_loss_ratio(a: Vec3, point: Vec3, b: Vec3, model: &LossModel) -> Result<f64> {
    model.ratio_at_distance(a.distance(point) + point.distance(b))
}

/// Combined bias-loss ratio at road position `x` over a set of panels:
/// the capped sum of the active panels' individual ratios.
pub fn bias_loss_ratio(x: f64, areas: &[(ReflectionArea, bool)]) -> f64 {
    let sum: f64 = areas
        .iter()
        .filter(|(_, active)| *active)
        .map(|(a, _)| a.ratio(x))
        .sum();
    sum.min(1.0)
}

/// Sum of the bias-loss ratios at the overlap of two neighbouring patch
/// areas separated by `spacing`, `Δx` from one of the direct-area edges.
pub fn overlap_ratio_sum(dx: f64, spacing: f64, decay: f64) -> f64 {
    (-decay * dx * dx).exp() + (-decay * (spacing - dx).powi(2)).exp()
}

/// Largest patch spacing for which overlapping indirect areas never drop below unit power.
pub fn max_uniform_spacing(decay: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 / decay).sqrt()
}

/// Loss model plus the element patterns at the transmitters and vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioModels {
    pub loss: LossModel,
    pub tx_pattern: AntennaPattern,
    pub vehicle_pattern: AntennaPattern,
}

impl RadioModels {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.tx_pattern.validate()?;
        self.vehicle_pattern.validate()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Receiver<'a> {
    pub position: Vec3,
    pub orientation: Vec3,
    pub pattern: &'a AntennaPattern,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Path {
    Direct,
    /// Reflection at `point` with bias-loss ratio `bias`.
    Reflex { point: Vec3, bias: f64 },
}

pub fn received_power(
    tx: &Transmitter,
    tx_pattern: &AntennaPattern,
    rx: &Receiver<'_>,
    path: Path,
    model: &LossModel,
) -> Result<f64> {
    match path {
        Path::Direct => {
            let pl = path_loss_ratio(tx.position, rx.position, model)?;
            let g_tx = tx_pattern.gain(tx.position, rx.position, tx.orientation)?;
            let g_rx = rx.pattern.gain(rx.position, tx.position, rx.orientation)?;
            Ok(tx.power_w * pl * g_tx * g_rx)
        }
        Path::Reflex { bias, .. } if bias <= 0.0 => Ok(0.0),
        Path::Reflex { point, bias } => {
            let pl = reflex_path_loss_ratio(tx.position, point, rx.position, model)?;
            let g_tx = tx_pattern.gain(tx.position, point, tx.orientation)?;
            let g_rx = rx.pattern.gain(rx.position, point, rx.orientation)?;
            Ok(tx.power_w * pl * model.reflection_ratio() * bias * g_tx * g_rx)
        }
    }
}
