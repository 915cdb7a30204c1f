//! CSV and JSON artifacts. Numbers are written with 12 significant digits so
//! files are byte-identical for identical inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dgv::{DgvContext, VirtualGroupSet};
use crate::error::{Result, RetfError};
use crate::geometry::ReflectionArea;
use crate::propagation::bias_loss_ratio;
use crate::scenario::ScenarioConfig;
use crate::sim::{RunOutput, SimulationTrace, SweepRow};

/// Decimal rendering with 12 significant digits (scientific outside
/// `1e-6 ..= 1e15`), trailing zeros trimmed.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.11e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if !(-6..=15).contains(&exp) {
        return sci;
    }
    let decimals = (11 - exp).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(String::new, |k| k.to_string())
}

fn join(v: &[usize]) -> String {
    v.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(";")
}

pub fn trace_csv(trace: &SimulationTrace) -> String {
    let mut s = String::from("t,x,region,rank_org,rank_enh,c_org,c_enh,se_org,se_enh,reflex_power,active\n");
    for r in &trace.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt_num(r.t),
            fmt_num(r.x),
            opt(r.region),
            r.rank_org,
            r.rank_enh,
            fmt_num(r.c_org),
            fmt_num(r.c_enh),
            fmt_num(r.se_org),
            fmt_num(r.se_enh),
            fmt_num(r.reflex_power),
            join(&r.active)
        );
    }
    s
}

pub fn su_series_csv(trace: &SimulationTrace) -> String {
    let mut s = String::from("su,t,se_nrm,se_int\n");
    for r in &trace.su_series {
        let _ = writeln!(s, "{},{},{},{}", r.su, fmt_num(r.t), fmt_num(r.se_nrm), fmt_num(r.se_int));
    }
    s
}

pub fn su_summary_csv(trace: &SimulationTrace) -> String {
    let mut s = String::from("su,nrm_integral,int_integral,loss\n");
    for r in &trace.su_summary {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.su,
            fmt_num(r.nrm_integral),
            fmt_num(r.int_integral),
            fmt_num(r.loss)
        );
    }
    s
}

pub fn summary_csv(trace: &SimulationTrace) -> String {
    let m = &trace.summary;
    let cols: [(&str, f64); 19] = [
        ("phi_tar", m.phi_tar),
        ("phi_sen", m.phi_sen),
        ("phi", m.phi),
        ("ilf", m.ilf),
        ("mean_rank_org", m.mean_rank_org),
        ("mean_rank_enh", m.mean_rank_enh),
        ("mean_se_org", m.mean_se_org),
        ("mean_se_enh", m.mean_se_enh),
        ("center_steps", m.center.steps as f64),
        ("center_se_org", m.center.mean_se_org),
        ("center_se_enh", m.center.mean_se_enh),
        ("center_rank_org", m.center.mean_rank_org),
        ("center_rank_enh", m.center.mean_rank_enh),
        ("edge_steps", m.edge.steps as f64),
        ("edge_se_org", m.edge.mean_se_org),
        ("edge_se_enh", m.edge.mean_se_enh),
        ("edge_rank_org", m.edge.mean_rank_org),
        ("edge_rank_enh", m.edge.mean_rank_enh),
        ("mean_su_loss", m.mean_su_loss),
    ];
    let head: Vec<&str> = cols.iter().map(|c| c.0).collect();
    let vals: Vec<String> = cols.iter().map(|c| fmt_num(c.1)).collect();
    format!("mode,{}\n{},{}\n", head.join(","), mode_name(trace), vals.join(","))
}

fn mode_name(trace: &SimulationTrace) -> &'static str {
    match trace.mode {
        crate::scenario::CapacityMode::Geometry => "geometry",
        crate::scenario::CapacityMode::Csi => "csi",
        crate::scenario::CapacityMode::Hybrid => "hybrid",
    }
}

pub fn groups_csv(ctx: &DgvContext, set: &VirtualGroupSet) -> Result<String> {
    let mut s = String::from("group,start_idx,end_idx,dra_start,dra_end,ra_start,ra_end\n");
    for (i, (g, a)) in set.groups.iter().zip(ctx.areas(set)?).enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            i,
            g.start_idx,
            g.end_idx,
            fmt_num(a.dra_start),
            fmt_num(a.dra_end),
            fmt_num(a.ra_start),
            fmt_num(a.ra_end)
        );
    }
    Ok(s)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "axis,value,runs,phi_tar_mean,phi_tar_std,phi_mean,phi_std,se_org_mean,se_org_std,se_enh_mean,se_enh_std,rank_enh_mean,rank_enh_std,su_loss_mean,su_loss_std\n",
    );
    for r in rows {
        let mut line = format!("{},{},{}", r.axis.name(), r.value, r.runs);
        for st in [r.phi_tar, r.phi, r.se_org, r.se_enh, r.rank_enh, r.su_loss] {
            let _ = write!(line, ",{},{}", fmt_num(st.mean), fmt_num(st.std));
        }
        s.push_str(&line);
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CoverageLabel {
    #[serde(rename = "DRA")]
    Dra,
    #[serde(rename = "IDRA")]
    Idra,
    #[serde(rename = "GAP")]
    Gap,
}

impl CoverageLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dra => "DRA",
            Self::Idra => "IDRA",
            Self::Gap => "GAP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub x: f64,
    pub bias: f64,
    pub label: CoverageLabel,
    pub groups: Vec<usize>,
}

/// Grid points `0, step, 2·step, …` plus the road end.
pub fn road_grid(length: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(RetfError::InvalidScenario(format!("grid step must be positive, got {step}")));
    }
    let n = (length / step * (1.0 + 1e-12)).floor() as usize;
    let mut xs: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
    if xs.last().is_some_and(|&x| x < length * (1.0 - 1e-12)) {
        xs.push(length);
    }
    Ok(xs)
}

/// Bias ratio, coverage label and owning groups at every grid point for an
/// all-active group set.
pub fn coverage(ctx: &DgvContext, set: &VirtualGroupSet, step: f64) -> Result<Vec<CoverageRow>> {
    let areas = ctx.areas(set)?;
    let active: Vec<(ReflectionArea, bool)> = areas.iter().map(|a| (*a, true)).collect();
    road_grid(ctx.road_length, step)?
        .into_iter()
        .map(|x| {
            let groups: Vec<usize> = (0..areas.len()).filter(|&i| areas[i].contains(x)).collect();
            let label = if areas.iter().any(|a| a.in_dra(x)) {
                CoverageLabel::Dra
            } else if !groups.is_empty() {
                CoverageLabel::Idra
            } else {
                CoverageLabel::Gap
            };
            Ok(CoverageRow {
                x,
                bias: bias_loss_ratio(x, &active),
                label,
                groups,
            })
        })
        .collect()
}

pub fn coverage_csv(rows: &[CoverageRow]) -> String {
    let mut s = String::from("x,bias,label,groups\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", fmt_num(r.x), fmt_num(r.bias), r.label.as_str(), join(&r.groups));
    }
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    /// File name to content hash.
    pub files: BTreeMap<String, String>,
}

fn write_files(dir: &Path, files: &[(&str, String)], command: &str, cfg: &ScenarioConfig) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut hashes = BTreeMap::new();
    for (name, body) in files {
        std::fs::write(dir.join(name), body)?;
        hashes.insert((*name).to_string(), sha256_hex(body.as_bytes()));
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: command.into(),
        seed: cfg.seed,
        config_sha256: sha256_hex(cfg.to_toml_string()?.as_bytes()),
        files: hashes,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| RetfError::Invariant(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(manifest)
}

#[derive(Serialize)]
struct RunResult<'a> {
    groups: Vec<(usize, usize)>,
    layout_ratios: crate::capacity::ThroughputRatios,
    gssa_history: &'a [f64],
    gssa_steps: &'a [crate::dgv::GssaStep],
    hybrid_refined: bool,
    rotation_plans: &'a [crate::rct::RotationPlan],
    summary: &'a crate::sim::TraceSummary,
    warnings: &'a [crate::sim::TraceWarning],
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| RetfError::Invariant(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Writes every artifact of a run plus the manifest.
pub fn write_run(dir: &Path, cfg: &ScenarioConfig, ctx: &DgvContext, out: &RunOutput) -> Result<Manifest> {
    let t = &out.trace;
    let result = RunResult {
        groups: out.layout.set.pairs(),
        layout_ratios: out.layout.ratios,
        gssa_history: &out.layout.history,
        gssa_steps: &out.layout.steps,
        hybrid_refined: out.layout.refined,
        rotation_plans: &t.plans,
        summary: &t.summary,
        warnings: &t.warnings,
    };
    write_files(
        dir,
        &[
            ("trace.csv", trace_csv(t)),
            ("summary.csv", summary_csv(t)),
            ("su_series.csv", su_series_csv(t)),
            ("su_summary.csv", su_summary_csv(t)),
            ("groups.csv", groups_csv(ctx, &out.layout.set)?),
            ("result.json", json(&result)?),
        ],
        "run",
        cfg,
    )
}

pub fn write_sweep(dir: &Path, cfg: &ScenarioConfig, rows: &[SweepRow]) -> Result<Manifest> {
    write_files(dir, &[("sweep.csv", sweep_csv(rows))], "sweep", cfg)
}

pub fn write_coverage(dir: &Path, cfg: &ScenarioConfig, rows: &[CoverageRow]) -> Result<Manifest> {
    write_files(dir, &[("geometry.csv", coverage_csv(rows))], "geometry", cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(-2.0 / 3.0 * 1e3), "-666.666666667");
        assert_eq!(fmt_num(123456789012345.0), "123456789012345");
        assert_eq!(fmt_num(1.5e-9), "1.50000000000e-9");
        assert_eq!(fmt_num(9.9999999999999e-1), "1");
        assert_eq!(fmt_num(-1e-30), "-1.00000000000e-30");
    }

    #[test]
    fn grid_endpoints() {
        assert_eq!(road_grid(400.0, 400.0).unwrap(), vec![0.0, 400.0]);
        assert_eq!(road_grid(10.0, 3.0).unwrap(), vec![0.0, 3.0, 6.0, 9.0, 10.0]);
        assert!(road_grid(10.0, 0.0).is_err());
        assert!(road_grid(10.0, -1.0).is_err());
    }

    #[test]
    fn coverage_matches_bias_and_partitions() {
        let s = Scenario::build(ScenarioConfig::scaled_default()).unwrap();
        let set = crate::sim::uniform_layout(s.config.rpp.count, 5);
        let rows = coverage(&s.ctx, &set, 0.5).unwrap();
        let areas: Vec<_> = s.ctx.areas(&set).unwrap().into_iter().map(|a| (a, true)).collect();
        let mut seen = [false; 3];
        for r in &rows {
            assert_eq!(r.bias, bias_loss_ratio(r.x, &areas));
            match r.label {
                CoverageLabel::Dra => {
                    assert_eq!(r.bias, 1.0);
                    seen[0] = true;
                }
                CoverageLabel::Idra => {
                    assert!(!r.groups.is_empty());
                    seen[1] = true;
                }
                CoverageLabel::Gap => {
                    assert!(r.groups.is_empty() && r.bias == 0.0);
                    seen[2] = true;
                }
            }
        }
        assert_eq!(seen, [true; 3]);
    }
}
