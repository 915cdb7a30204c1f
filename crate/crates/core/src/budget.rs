//! Large-scale received powers for the target vehicle and the sensitive users.

use crate::dgv::DgvContext;
use crate::error::{Result, RetfError};
use crate::geometry::{panel_line_point, SensitiveUser, TargetVehicleState, Vec3};
use crate::propagation::{received_power, AntennaPattern, Path, Receiver};
use crate::rct::Reflector;
use crate::scenario::Scenario;

/// SUs carry a single omnidirectional antenna.
pub const SU_PATTERN: AntennaPattern = AntennaPattern::Omni;

/// Direct powers at the vehicle's two panels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvDirect {
    pub signal: f64,
    pub interference_pap: f64,
    pub interference_sap: f64,
}

/// Direct powers at an SU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuDirect {
    pub own: f64,
    pub serving_bs: f64,
    pub others: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LinkBudget<'a> {
    pub scenario: &'a Scenario,
}

impl<'a> LinkBudget<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        Self { scenario }
    }

    fn ctx(&self) -> &DgvContext {
        &self.scenario.ctx
    }

    fn state(&self, x: f64) -> TargetVehicleState {
        TargetVehicleState::at_position(x, self.scenario.config.rated_speed)
    }

    pub fn pap(&self, x: f64) -> Receiver<'a> {
        let s = self.state(x);
        Receiver {
            position: s.position(),
            orientation: s.pap_orientation,
            pattern: &self.scenario.config.radio.vehicle_pattern,
        }
    }

    pub fn sap(&self, x: f64) -> Receiver<'a> {
        let s = self.state(x);
        Receiver {
            position: s.position(),
            orientation: s.sap_orientation,
            pattern: &self.scenario.config.radio.vehicle_pattern,
        }
    }

    pub fn su_receiver(pos: Vec3) -> Receiver<'static> {
        Receiver {
            position: pos,
            orientation: Vec3::new(0.0, 1.0, 0.0),
            pattern: &SU_PATTERN,
        }
    }

    pub fn tv_direct(&self, x: f64) -> Result<TvDirect> {
        let radio = &self.scenario.config.radio;
        let (pap, sap) = (self.pap(x), self.sap(x));
        let txs = &self.scenario.transmitters;
        let signal = received_power(&txs[0], &radio.tx_pattern, &pap, Path::Direct, &radio.loss)?;
        let mut ip = 0.0;
        let mut is = 0.0;
        for t in &txs[1..] {
            ip += received_power(t, &radio.tx_pattern, &pap, Path::Direct, &radio.loss)?;
            is += received_power(t, &radio.tx_pattern, &sap, Path::Direct, &radio.loss)?;
        }
        Ok(TvDirect {
            signal,
            interference_pap: ip,
            interference_sap: is,
        })
    }

    /// Reflex power via the unbounded panel line at unit bias ratio.
    pub fn reflex_unit(&self, rx: &Receiver<'_>) -> Result<f64> {
        let radio = &self.scenario.config.radio;
        let bs = self.scenario.bs();
        let Some(point) = panel_line_point(bs.position, rx.position, self.ctx().array.standoff) else {
            return Ok(0.0);
        };
        received_power(bs, &radio.tx_pattern, rx, Path::Reflex { point, bias: 1.0 }, &radio.loss)
    }

    pub fn tv_reflex_unit(&self, x: f64) -> Result<f64> {
        self.reflex_unit(&self.sap(x))
    }

    pub fn su_direct(&self, su: &SensitiveUser, pos: Vec3) -> Result<SuDirect> {
        let radio = &self.scenario.config.radio;
        let rx = Self::su_receiver(pos);
        let txs = &self.scenario.transmitters;
        if su.serving_index == 0 || su.serving_index >= txs.len() {
            return Err(RetfError::InvalidScenario(format!(
                "SU serving index {} does not name an interferer",
                su.serving_index
            )));
        }
        let mut out = SuDirect {
            own: 0.0,
            serving_bs: 0.0,
            others: 0.0,
        };
        for t in txs {
            let p = received_power(t, &radio.tx_pattern, &rx, Path::Direct, &radio.loss)?;
            if t.index == su.serving_index {
                out.own = p;
            } else if t.index == 0 {
                out.serving_bs = p;
            } else {
                out.others += p;
            }
        }
        Ok(out)
    }

    /// Power reflected by one facet row toward `rx`. A flat row uses the same
    /// panel-line specular point as the grouping objective.
    pub fn reflector_power(&self, r: &Reflector, rx: &Receiver<'_>) -> Result<f64> {
        let bias = r.area.ratio(rx.position.x);
        if bias <= 0.0 {
            return Ok(0.0);
        }
        if !r.is_rotated() {
            return Ok(bias * self.reflex_unit(rx)?);
        }
        let radio = &self.scenario.config.radio;
        r.power(self.ctx(), self.scenario.bs(), &radio.tx_pattern, rx, &radio.loss)
    }
}
