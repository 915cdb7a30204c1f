use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;

use retf_core::capacity::{geometry_capacity, CapacityParams};
use retf_core::channel::{
    generate_cir, hermitian_eigenvalues, rank_adapt, to_frequency, FadingConfig, JointChannel, LinkGeometry,
};
use retf_core::dgv::{gssa, incremental_update, ssm_active, ssm_schedule, DgvContext, RppArray, VirtualGroupSet};
use retf_core::exec::Execution;
use retf_core::geometry::{
    idra_half_width, mirror_dra_endpoints, ra_length, EffectivePanel, ReflectionArea, SensitiveUser, Vec3,
};
use retf_core::objective::Prepared;
use retf_core::propagation::{max_uniform_spacing, overlap_ratio_sum, AntennaPattern};
use retf_core::rct::{ans_assign, rotation_angle_at};
use retf_core::scenario::{CapacityMode, Scenario, ScenarioConfig};

fn channel(seed: u64, nt: usize, nr: usize, x: f64) -> Vec<retf_core::channel::CMatrix> {
    let cfg = FadingConfig::default();
    let link = LinkGeometry::between(Vec3::new(0.0, -20.0, 10.0), Vec3::new(x, 0.0, 1.5), nt, nr);
    to_frequency(&generate_cir(&link, &cfg, seed), &cfg)
}

fn small_scenario(seed: u64, sus: usize) -> Scenario {
    let mut c = ScenarioConfig::scaled_default();
    c.seed = seed;
    c.capacity.ilf = 5.0;
    c.rpp.count = 30;
    c.road_length = 200.0;
    c.time_step = 5e-3;
    c.sus.count = sus;
    for t in &mut c.transmitters {
        t.position.x /= 2.0;
    }
    Scenario::build(c).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dra_width_is_scaled_panel_length(
        qx in -300.0..300.0f64, qy in -80.0..-1.0f64, py in 1.0..50.0f64,
        x0 in -100.0..100.0f64, len in 0.1..80.0f64,
    ) {
        let panel = EffectivePanel::parallel(x0, x0 + len, py).unwrap();
        let (lo, hi) = mirror_dra_endpoints(Vec3::new(qx, qy, 10.0), &panel).unwrap();
        let want = (qy - 2.0 * py) / (qy - py) * len;
        prop_assert!(((hi - lo) - want).abs() <= 1e-9 * want.max(1.0));
    }

    #[test]
    fn ra_length_monotone(len in 0.5..40.0f64, extra in 0.1..10.0f64, w0 in 0.01..0.9f64, dw in 0.01..0.09f64) {
        let bs = Vec3::new(0.0, -20.0, 10.0);
        let decay = std::f64::consts::LN_10 / 4.0;
        let a = EffectivePanel::parallel(0.0, len, 20.0).unwrap();
        let b = EffectivePanel::parallel(0.0, len + extra, 20.0).unwrap();
        prop_assert!(ra_length(&b, bs, decay, w0).unwrap() > ra_length(&a, bs, decay, w0).unwrap());
        prop_assert!(ra_length(&a, bs, decay, w0 + dw).unwrap() < ra_length(&a, bs, decay, w0).unwrap());
    }

    #[test]
    fn bias_ratio_bounded_and_continuous(
        start in -50.0..50.0f64, width in 0.5..30.0f64, decay in 0.05..3.0f64, w0 in 0.01..0.9f64, x in -120.0..120.0f64,
    ) {
        let a = ReflectionArea::from_dra(start, start + width, decay, w0).unwrap();
        let r = a.ratio(x);
        prop_assert!((0.0..=1.0).contains(&r));
        let eps = 1e-9;
        prop_assert!((a.ratio(a.dra_start - eps) - 1.0).abs() < 1e-6);
        prop_assert!((a.ratio(a.dra_end + eps) - 1.0).abs() < 1e-6);
        // The only jump is the threshold cut at the area edge.
        let half = idra_half_width(decay, w0).unwrap();
        let inside = a.ratio(a.dra_end + half * (1.0 - 1e-9));
        let outside = a.ratio(a.dra_end + half * (1.0 + 1e-9));
        prop_assert!(inside - outside <= w0 + 1e-6);
    }

    #[test]
    fn spacing_bound_covers_gap(decay in 0.01..10.0f64, frac in 0.0..=1.0f64, shrink in 0.5..=1.0f64) {
        let mu = max_uniform_spacing(decay) * shrink;
        prop_assert!(overlap_ratio_sum(frac * mu, mu, decay) >= 1.0 - 1e-12);
    }

    #[test]
    fn gain_peaks_at_boresight_and_is_symmetric(az in 0.01..3.1f64, dist in 5.0..200.0f64) {
        let p = AntennaPattern::default();
        let pos = Vec3::new(0.0, 0.0, 0.0);
        let orient = Vec3::new(0.0, 1.0, 0.0);
        let left = Vec3::new(-dist * az.sin(), dist * az.cos(), 0.0);
        let right = Vec3::new(dist * az.sin(), dist * az.cos(), 0.0);
        let g0 = p.gain(pos, Vec3::new(0.0, dist, 0.0), orient).unwrap();
        let gl = p.gain(pos, left, orient).unwrap();
        let gr = p.gain(pos, right, orient).unwrap();
        prop_assert!((gl - gr).abs() <= 1e-12 * g0);
        prop_assert!(gl <= g0);
    }

    #[test]
    fn covariance_psd_trace_linear_and_weyl(seed in any::<u64>(), omega in 0.0..5.0f64, x in 0.0..400.0f64) {
        let d = channel(seed, 8, 2, x);
        let r = channel(seed ^ 0x5555, 8, 2, x + 3.0);
        let j = JointChannel::new(d.clone(), r, omega).unwrap();
        let cov = j.covariance();
        let scale = cov.norm();
        prop_assert!((&cov - cov.adjoint()).norm() <= 1e-12 * scale);
        let ev = hermitian_eigenvalues(&cov);
        prop_assert!(ev.iter().all(|&l| l >= -1e-12 * scale));
        let tr = j.direct_covariance().trace().re + omega * j.reflex_covariance().unwrap().trace().re;
        prop_assert!((ev.iter().sum::<f64>() - tr).abs() <= 1e-9 * tr);
        let ev0 = hermitian_eigenvalues(&j.direct_covariance());
        prop_assert!(ev.iter().zip(&ev0).all(|(a, b)| *a >= b - 1e-12 * scale));
        let r0 = rank_adapt(&JointChannel::direct_only(d).unwrap(), 0.01).unwrap().rank;
        prop_assert!(rank_adapt(&j, 0.01).unwrap().rank >= r0);
    }

    #[test]
    fn joint_channel_is_deterministic(seed in any::<u64>()) {
        prop_assert_eq!(channel(seed, 8, 2, 100.0), channel(seed, 8, 2, 100.0));
    }

    #[test]
    fn reflex_never_lowers_geometry_capacity(
        s0p in 1e-12..1e-6f64, ip in 0.0..1e-8f64, s0s in 0.0..1e-6f64, is in 0.0..1e-8f64,
    ) {
        let (org, enh) = geometry_capacity(s0p, ip, s0s, is, &CapacityParams::default()).unwrap();
        prop_assert!(enh >= org);
    }

    #[test]
    fn ans_never_pairs_neighbours(groups in 2usize..60) {
        let a = ans_assign(groups);
        for g in 0..groups - 1 {
            prop_assert_ne!(a.team_of(g), a.team_of(g + 1));
        }
        let mut all: Vec<usize> = a.teams.concat();
        all.sort();
        prop_assert_eq!(all, (0..groups).collect::<Vec<_>>());
    }

    #[test]
    fn rotation_lands_on_target_midpoint(xa in 0.0..400.0f64, xm in 0.0..400.0f64, qx in 100.0..300.0f64) {
        prop_assume!((xa - xm).abs() > 1.0);
        let bs = Vec3::new(qx, -20.0, 10.0);
        let alpha = rotation_angle_at(bs, 20.0, xa, xm);
        let n = Vec3::new(alpha.cos(), alpha.sin(), 0.0);
        // Trace BS -> patch midpoint -> road in the horizontal plane.
        let (dx, dy) = (xa - bs.x, 20.0 - bs.y);
        let k = 2.0 * (dx * n.x + dy * n.y);
        let (rx, ry) = (dx - k * n.x, dy - k * n.y);
        prop_assume!(ry < 0.0);
        let land = xa - 20.0 * rx / ry;
        prop_assert!((land - xm).abs() <= 1e-6 * 400.0, "{land} vs {xm}");
    }

    #[test]
    fn mask_round_trips(bits in any::<u16>(), n in 1usize..16) {
        let mask: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
        let s = VirtualGroupSet::from_mask(&mask);
        prop_assert_eq!(s.mask(), mask);
        prop_assert!(s.groups.windows(2).all(|w| w[0].end_idx + 1 < w[1].start_idx));
    }

    #[test]
    fn ssm_marks_groups_only_inside_windows(bits in 1u16.., t in 0.0..25.0f64) {
        let ctx = DgvContext {
            array: RppArray::new(16, 4.0, 1.0, 20.0, 0.2, std::f64::consts::LN_10 / 4.0).unwrap(),
            bs: Vec3::new(40.0, -20.0, 10.0),
            decay: std::f64::consts::LN_10 / 4.0,
            threshold: 0.1,
            rated_speed: 10.0,
            road_length: 120.0,
        };
        let set = VirtualGroupSet::from_bits(bits as u64, 16);
        let areas = ctx.areas(&set).unwrap();
        let events = ssm_schedule(&ctx, &set).unwrap();
        let on = ssm_active(&events, areas.len(), 0.2, t);
        for (g, a) in areas.iter().enumerate() {
            let window = t >= a.ra_start / 10.0 && t < a.ra_end / 10.0;
            prop_assert_eq!(on[g], window, "group {} at t {}", g, t);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn greedy_is_monotone_and_feasible(seed in 0u64..1000, sus in 1usize..10) {
        let scn = small_scenario(seed, sus);
        let prep = Prepared::new(scn, Execution::Sequential).unwrap();
        let view = prep.view(CapacityMode::Geometry);
        let ctx = &prep.scenario.ctx;
        let g = gssa(ctx, &prep.scenario.sus, &view, Execution::Sequential).unwrap();
        prop_assert!(g.history.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(g.set.satisfies(ctx.min_group_size()));
        prop_assert_eq!(g.set.patch_count, ctx.array.count);
    }

    #[test]
    fn incremental_never_worse_than_fresh(seed in 0u64..1000, sus in 2usize..8, leave in 0usize..8) {
        let scn = small_scenario(seed, sus);
        let prep = Prepared::new(scn.clone(), Execution::Sequential).unwrap();
        let view = prep.view(CapacityMode::Geometry);
        let ctx = &scn.ctx;
        let before = gssa(ctx, &scn.sus, &view, Execution::Sequential).unwrap();
        // Drop one SU and re-optimize against the reduced set.
        let k = leave % scn.sus.len();
        let mut cfg = scn.config.clone();
        cfg.sus.count = 0;
        cfg.sus.explicit = scn.sus.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, s)| *s).collect();
        let reduced = Scenario::build(cfg).unwrap();
        let prep2 = Prepared::new(reduced.clone(), Execution::Sequential).unwrap();
        let view2 = prep2.view(CapacityMode::Geometry);
        let departed: Vec<SensitiveUser> = vec![scn.sus[k]];
        let inc = incremental_update(ctx, &before.set, &departed, &reduced.sus, &view2, Execution::Sequential).unwrap();
        let fresh = gssa(ctx, &reduced.sus, &view2, Execution::Sequential).unwrap();
        prop_assert!(inc.ratios.joint >= fresh.ratios.joint);
    }
}

#[test]
fn quadrature_converges() {
    let mut c = ScenarioConfig::scaled_default();
    c.capacity.ilf = 1.0;
    c.sus.count = 0;
    let phi = |dt: f64| {
        let mut c = c.clone();
        c.time_step = dt;
        let prep = Prepared::new(Scenario::build(c).unwrap(), Execution::Sequential).unwrap();
        let set = VirtualGroupSet::full(prep.scenario.config.rpp.count);
        use retf_core::dgv::Objective;
        prep.view(CapacityMode::Geometry).evaluate(&set).unwrap().tv_ratio
    };
    let (a, b) = (phi(2e-3), phi(1e-3));
    assert!((a - b).abs() / b < 1e-3, "{a} vs {b}");
}

#[test]
fn unrotated_normal_is_road_facing() {
    assert_eq!(rotation_angle_at(Vec3::new(200.0, -20.0, 10.0), 20.0, 200.0, 200.0).to_bits(), FRAC_PI_2.to_bits());
}
