//! Scenario configuration (TOML), validation and entity construction.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capacity::CapacityParams;
use crate::channel::FadingConfig;
use crate::dgv::{DgvContext, RppArray};
use crate::error::{ConfigIssue, Result, RetfError};
use crate::geometry::{SensitiveUser, Transmitter, Vec3};
use crate::propagation::RadioModels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CapacityMode {
    #[default]
    Geometry,
    Csi,
    Hybrid,
}

impl std::str::FromStr for CapacityMode {
    type Err = RetfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometry" => Ok(Self::Geometry),
            "csi" => Ok(Self::Csi),
            "hybrid" => Ok(Self::Hybrid),
            _ => Err(RetfError::Parse(format!("unknown capacity mode `{s}`"))),
        }
    }
}

/// How the patch lattice is grouped before the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layout {
    /// Solve the grouping problem with the greedy search.
    #[default]
    Optimized,
    /// Fixed groups of `group_size` patches separated by one disabled patch.
    Uniform { group_size: usize },
    /// One group over the whole lattice.
    Full,
    /// No patches enabled.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmitterConfig {
    pub position: Vec3,
    pub orientation: Vec3,
    pub power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuConfig {
    pub count: usize,
    /// Fraction of randomly placed users that move (κ).
    pub mobile_ratio: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Lateral offsets users are placed on.
    pub lanes: Vec<f64>,
    /// Added to the random users.
    pub explicit: Vec<SensitiveUser>,
}

impl Default for SuConfig {
    fn default() -> Self {
        Self {
            count: 20,
            mobile_ratio: 0.3,
            speed_min: 5.0,
            speed_max: 15.0,
            lanes: vec![-3.5, 3.5],
            explicit: Vec::new(),
        }
    }
}

/// CSI record freshness for the hybrid mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridConfig {
    /// Records older than this are disregarded, seconds.
    pub staleness_horizon: f64,
    /// Record ages are drawn uniformly in `[0, max_record_age]`.
    pub max_record_age: f64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            staleness_horizon: 1.0,
            max_record_age: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::road_length")]
    pub road_length: f64,
    #[serde(default = "defaults::rated_speed")]
    pub rated_speed: f64,
    #[serde(default = "defaults::time_step")]
    pub time_step: f64,
    #[serde(default)]
    pub capacity_mode: CapacityMode,
    #[serde(default = "defaults::team_size")]
    pub rct_team_size: usize,
    #[serde(default = "defaults::max_distance")]
    pub rct_max_distance: f64,
    #[serde(default)]
    pub layout: Layout,
    /// Spacing of the CSI snapshot grid along the road, m.
    #[serde(default = "defaults::snapshot_spacing")]
    pub snapshot_spacing: f64,
    /// Per-SU series keep every n-th step.
    #[serde(default = "defaults::su_stride")]
    pub su_series_stride: usize,
    #[serde(default = "defaults::transmitters")]
    pub transmitters: Vec<TransmitterConfig>,
    #[serde(default)]
    pub sus: SuConfig,
    #[serde(default = "defaults::rpp")]
    pub rpp: RppArray,
    #[serde(default = "defaults::fading")]
    pub fading: FadingConfig,
    /// Required: carries the interference level factor.
    pub capacity: CapacityParams,
    #[serde(default)]
    pub radio: RadioModels,
    #[serde(default)]
    pub hybrid: HybridConfig,
}

mod defaults {
    use super::*;

    pub fn seed() -> u64 {
        1
    }
    pub fn road_length() -> f64 {
        400.0
    }
    pub fn rated_speed() -> f64 {
        20.0
    }
    pub fn time_step() -> f64 {
        1e-3
    }
    pub fn team_size() -> usize {
        8
    }
    pub fn max_distance() -> f64 {
        200.0
    }
    pub fn snapshot_spacing() -> f64 {
        2.0
    }
    pub fn su_stride() -> usize {
        50
    }
    pub fn transmitters() -> Vec<TransmitterConfig> {
        let l = road_length();
        let mid = l / 2.0;
        vec![
            TransmitterConfig {
                position: Vec3::new(mid, -20.0, 10.0),
                orientation: Vec3::new(0.0, 1.0, 0.0),
                power_w: 40.0,
            },
            TransmitterConfig {
                position: Vec3::new(mid - 1.5 * l, -20.0, 10.0),
                orientation: Vec3::new(1.0, 0.0, 0.0),
                power_w: 40.0,
            },
            TransmitterConfig {
                position: Vec3::new(mid + 1.5 * l, -20.0, 10.0),
                orientation: Vec3::new(-1.0, 0.0, 0.0),
                power_w: 40.0,
            },
            TransmitterConfig {
                position: Vec3::new(mid, 1.5 * l, 10.0),
                orientation: Vec3::new(0.0, -1.0, 0.0),
                power_w: 40.0,
            },
        ]
    }
    pub fn rpp() -> RppArray {
        RppArray {
            count: 70,
            patch_length: 4.0,
            spacing: 1.0,
            standoff: 20.0,
            switch_time: 0.2,
        }
    }
    pub fn fading() -> FadingConfig {
        FadingConfig {
            num_subcarriers: 64,
            subcarrier_spacing_hz: 1.5625e6,
            ..FadingConfig::default()
        }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::scaled_default()
    }
}

impl ScenarioConfig {
    /// Reduced array sizes for fast runs (8 transmit antennas).
    pub fn scaled_default() -> Self {
        Self {
            seed: defaults::seed(),
            road_length: defaults::road_length(),
            rated_speed: defaults::rated_speed(),
            time_step: defaults::time_step(),
            capacity_mode: CapacityMode::default(),
            rct_team_size: defaults::team_size(),
            rct_max_distance: defaults::max_distance(),
            layout: Layout::default(),
            snapshot_spacing: defaults::snapshot_spacing(),
            su_series_stride: defaults::su_stride(),
            transmitters: defaults::transmitters(),
            sus: SuConfig::default(),
            rpp: defaults::rpp(),
            fading: defaults::fading(),
            capacity: CapacityParams::default(),
            radio: RadioModels::default(),
            hybrid: HybridConfig::default(),
        }
    }

    /// Full-size base station array (32 transmit antennas).
    pub fn full_scale_default() -> Self {
        let mut c = Self::scaled_default();
        c.capacity.num_tx_antennas = 32;
        c
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| RetfError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| RetfError::Parse(e.to_string()))
    }

    pub fn duration(&self) -> f64 {
        self.road_length / self.rated_speed
    }

    pub fn interferer_count(&self) -> usize {
        self.transmitters.len().saturating_sub(1)
    }

    /// Every problem found, each with its field path.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut check = |ok: bool, path: &str, msg: &str| {
            if !ok {
                out.push(ConfigIssue::new(path, msg));
            }
        };
        check(self.road_length > 0.0 && self.road_length.is_finite(), "road_length", "must be positive");
        check(self.rated_speed > 0.0 && self.rated_speed.is_finite(), "rated_speed", "must be positive");
        check(self.time_step > 0.0, "time_step", "must be positive");
        if self.road_length > 0.0 && self.rated_speed > 0.0 {
            check(self.time_step <= self.duration(), "time_step", "exceeds the transit duration");
        }
        check(self.rct_team_size >= 1, "rct_team_size", "must be at least 1");
        check(self.rct_max_distance > 0.0, "rct_max_distance", "must be positive");
        check(self.snapshot_spacing > 0.0, "snapshot_spacing", "must be positive");
        check(self.su_series_stride >= 1, "su_series_stride", "must be at least 1");
        if let Layout::Uniform { group_size } = self.layout {
            check(group_size >= 1, "layout.group_size", "must be at least 1");
        }

        check(!self.transmitters.is_empty(), "transmitters", "at least the serving base station is required");
        for (i, t) in self.transmitters.iter().enumerate() {
            let p = format!("transmitters[{i}]");
            check(t.power_w > 0.0 && t.power_w.is_finite(), &format!("{p}.power_w"), "must be positive");
            check(t.position.is_finite(), &format!("{p}.position"), "must be finite");
            check(t.orientation.normalized().is_some(), &format!("{p}.orientation"), "must be non-zero");
        }
        if let Some(bs) = self.transmitters.first() {
            check(bs.position.y < 0.0, "transmitters[0].position.y", "serving base station must sit at negative y");
        }

        let s = &self.sus;
        check((0.0..=1.0).contains(&s.mobile_ratio), "sus.mobile_ratio", "must lie in [0, 1]");
        check(s.speed_min >= 0.0 && s.speed_min <= s.speed_max, "sus.speed_min", "need 0 <= speed_min <= speed_max");
        check(s.count == 0 || !s.lanes.is_empty(), "sus.lanes", "random users need at least one lane");
        for (i, y) in s.lanes.iter().enumerate() {
            check(*y < self.rpp.standoff, &format!("sus.lanes[{i}]"), "must lie between the road and the panels");
        }
        let n_g = self.interferer_count();
        check(s.count == 0 || n_g > 0, "sus.count", "users need a serving transmitter other than the base station");
        for (i, u) in s.explicit.iter().enumerate() {
            check(
                (1..=n_g).contains(&u.serving_index),
                &format!("sus.explicit[{i}].serving_index"),
                "must reference an interfering transmitter (1..=N_G)",
            );
            check(u.lateral_y < self.rpp.standoff, &format!("sus.explicit[{i}].lateral_y"), "must lie below the panel line");
        }

        let mut section = |r: Result<()>, path: &str| {
            if let Err(e) = r {
                let msg = match e {
                    RetfError::InvalidScenario(m) => m,
                    other => other.to_string(),
                };
                out.push(ConfigIssue::new(path, msg));
            }
        };
        section(self.radio.validate(), "radio");
        if self.radio.validate().is_ok() {
            section(self.rpp.validate(self.radio.loss.decay), "rpp");
        }
        section(self.fading.validate(), "fading");
        section(self.capacity.validate(), "capacity");
        if let Some(bs) = self.transmitters.first() {
            if bs.position.y >= self.rpp.standoff {
                out.push(ConfigIssue::new("rpp.standoff", "panel line must lie beyond the road from the base station"));
            }
        }
        let h = &self.hybrid;
        if !(h.staleness_horizon >= 0.0 && h.max_record_age >= 0.0) {
            out.push(ConfigIssue::new("hybrid", "ages must be non-negative"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(RetfError::Config(issues))
        }
    }
}

/// splitmix64 finaliser.
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a path of keys.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix(base), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub mod stream {
    pub const SU_PLACEMENT: u64 = 1;
    pub const DIRECT: u64 = 2;
    pub const REFLEX: u64 = 3;
    pub const SU_REFLEX: u64 = 4;
    pub const RECORD_AGE: u64 = 5;
}

/// Validated scenario with all entities built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub transmitters: Vec<Transmitter>,
    pub sus: Vec<SensitiveUser>,
    pub ctx: DgvContext,
}

impl Scenario {
    pub fn build(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let transmitters = config
            .transmitters
            .iter()
            .enumerate()
            .map(|(i, t)| Transmitter::new(i, t.position, t.orientation, t.power_w))
            .collect::<Result<Vec<_>>>()?;
        let sus = place_sus(&config);
        let ctx = DgvContext {
            array: config.rpp,
            bs: transmitters[0].position,
            decay: config.radio.loss.decay,
            threshold: config.radio.loss.threshold,
            rated_speed: config.rated_speed,
            road_length: config.road_length,
        };
        Ok(Self {
            config,
            transmitters,
            sus,
            ctx,
        })
    }

    pub fn bs(&self) -> &Transmitter {
        &self.transmitters[0]
    }

    pub fn duration(&self) -> f64 {
        self.config.duration()
    }

    pub fn seed(&self) -> u64 {
        self.config.seed.wrapping_add(self.config.fading.seed.rotate_left(32))
    }
}

/// Random users (uniform encounter point and lane; a `κ` share moving in
/// either direction) followed by the explicit ones.
pub fn place_sus(config: &ScenarioConfig) -> Vec<SensitiveUser> {
    let s = &config.sus;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[stream::SU_PLACEMENT]));
    let n_g = config.interferer_count();
    let mobile = (s.mobile_ratio * s.count as f64).round() as usize;
    let mut out = Vec::with_capacity(s.count + s.explicit.len());
    for i in 0..s.count {
        let x = rng.random_range(0.0..config.road_length);
        let lane = s.lanes[rng.random_range(0..s.lanes.len())];
        let serving = rng.random_range(1..=n_g);
        let speed = if i < mobile {
            let v = if s.speed_max > s.speed_min {
                rng.random_range(s.speed_min..s.speed_max)
            } else {
                s.speed_min
            };
            if rng.random_bool(0.5) { v } else { -v }
        } else {
            0.0
        };
        out.push(SensitiveUser {
            encounter_x: x,
            lateral_y: lane,
            serving_index: serving,
            speed,
        });
    }
    out.extend(s.explicit.iter().copied());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ScenarioConfig::scaled_default().validate().unwrap();
        ScenarioConfig::full_scale_default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let c = ScenarioConfig::scaled_default();
        let s = c.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&s).unwrap(), c);
    }

    #[test]
    fn ilf_is_required() {
        let err = ScenarioConfig::from_toml_str("[capacity]\nbandwidth_hz = 1e6\n").unwrap_err();
        assert!(err.to_string().contains("ilf"), "{err}");
        let c = ScenarioConfig::from_toml_str("[capacity]\nilf = 2.0\n").unwrap();
        assert_eq!(c.capacity.ilf, 2.0);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(matches!(
            ScenarioConfig::from_toml_str("bogus = 1\n[capacity]\nilf = 1.0\n"),
            Err(RetfError::Parse(_))
        ));
    }

    #[test]
    fn every_issue_reported() {
        let mut c = ScenarioConfig::scaled_default();
        c.road_length = -1.0;
        c.time_step = 0.0;
        c.sus.mobile_ratio = 2.0;
        c.capacity.bandwidth_hz = 0.0;
        let issues = c.issues();
        let paths: Vec<_> = issues.iter().map(|i| i.path.as_str()).collect();
        for p in ["road_length", "time_step", "sus.mobile_ratio", "capacity"] {
            assert!(paths.contains(&p), "{p} missing from {paths:?}");
        }
    }

    #[test]
    fn placement_is_seeded() {
        let c = ScenarioConfig::scaled_default();
        assert_eq!(place_sus(&c), place_sus(&c));
        let mut d = c.clone();
        d.seed = 99;
        assert_ne!(place_sus(&c), place_sus(&d));
        let mut k = c.clone();
        k.sus.mobile_ratio = 0.0;
        assert!(place_sus(&k).iter().all(|u| !u.is_mobile()));
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, &[2, 3]);
        assert_ne!(a, derive_seed(1, &[3, 2]));
        assert_ne!(a, derive_seed(2, &[2, 3]));
        assert_eq!(a, derive_seed(1, &[2, 3]));
    }
}
