use std::f64::consts::PI;

use acat_core::compliance::{
    check_fuse_sizing, parse_bom, FuseLadders, FuseSpec, Severity, CLASS_J_LADDER_A, FUSE_LOAD_FACTOR,
};
use acat_core::goniometry::{cap_from_volume_angle, fit_circle, synthesize_profile, ProfilePoints};
use proptest::prelude::*;

/// Cap volume by slicing the sphere into discs, composite Simpson's rule.
fn sliced_volume(radius: f64, center_y: f64, height: f64) -> f64 {
    let n = 2000;
    let dy = height / n as f64;
    let area = |y: f64| PI * (radius * radius - (y - center_y).powi(2)).max(0.0);
    let mut sum = area(0.0) + area(height);
    for i in 1..n {
        sum += area(i as f64 * dy) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * dy / 3.0
}

fn fuse(rating_a: f64, load_a: f64) -> FuseSpec {
    FuseSpec {
        id: "FU-T".into(),
        rating_a,
        class: "CLASS J".into(),
        branch: "TEST".into(),
        load_a: Some(load_a),
        line: 1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn cap_volume_matches_slicing(volume in 0.5f64..50.0, theta in 6.0f64..174.0) {
        let cap = cap_from_volume_angle(volume, theta).unwrap();
        let sliced = sliced_volume(cap.sphere_radius_mm, cap.center_height_mm(), cap.apex_height_mm);
        prop_assert!((sliced - volume).abs() / volume < 1e-8, "{sliced} vs {volume}");
    }

    #[test]
    fn noise_free_fit_recovers_angle(volume in 0.5f64..50.0, theta in 6.0f64..174.0, n in 5usize..300) {
        let cap = cap_from_volume_angle(volume, theta).unwrap();
        let fit = fit_circle(&synthesize_profile(&cap, n, 0.0, 0).unwrap()).unwrap();
        prop_assert!((fit.contact_angle_deg - theta).abs() < 1e-6);
        prop_assert!((fit.radius - cap.sphere_radius_mm).abs() < 1e-9 * cap.sphere_radius_mm.max(1.0));
    }

    #[test]
    fn fit_is_invariant_to_scale_and_shift(
        theta in 10.0f64..170.0,
        scale in 0.01f64..100.0,
        dx in -50.0f64..50.0,
        dy in -50.0f64..50.0,
        seed in any::<u64>(),
    ) {
        let cap = cap_from_volume_angle(5.0, theta).unwrap();
        let profile = synthesize_profile(&cap, 80, 0.002, seed).unwrap();
        let base = fit_circle(&profile).unwrap();
        let moved = ProfilePoints {
            points: profile.points.iter().map(|&(x, y)| (x * scale + dx, y * scale + dy)).collect(),
            baseline_y: profile.baseline_y * scale + dy,
            ..profile.clone()
        };
        let fit = fit_circle(&moved).unwrap();
        prop_assert!((fit.contact_angle_deg - base.contact_angle_deg).abs() < 1e-7);
        prop_assert!((fit.radius - base.radius * scale).abs() < 1e-7 * scale);
    }

    #[test]
    fn base_radius_shrinks_as_angle_grows(volume in 0.5f64..50.0, a in 1.0f64..179.0, b in 1.0f64..179.0) {
        prop_assume!((a - b).abs() > 1e-6);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let r_lo = cap_from_volume_angle(volume, lo).unwrap().base_radius_mm;
        let r_hi = cap_from_volume_angle(volume, hi).unwrap().base_radius_mm;
        prop_assert!(r_hi < r_lo);
    }

    #[test]
    fn fuse_rule_fails_exactly_below_125_percent(load in 0.05f64..40.0, ratio in 0.5f64..2.0) {
        let rating = load * ratio;
        // Keep clear of the tolerance band at the boundary.
        prop_assume!((ratio - FUSE_LOAD_FACTOR).abs() > 1e-6);
        let finding = check_fuse_sizing(&fuse(rating, load), &FuseLadders::default()).unwrap();
        prop_assert_eq!(finding.severity == Severity::Fail, ratio < FUSE_LOAD_FACTOR, "{:?}", finding);
    }

    #[test]
    fn smallest_adequate_standard_fuse_passes(load in 0.1f64..45.0) {
        let rating = CLASS_J_LADDER_A.iter().copied().find(|&s| s >= 1.25 * load).unwrap();
        let finding = check_fuse_sizing(&fuse(rating, load), &FuseLadders::default()).unwrap();
        prop_assert_eq!(finding.severity, Severity::Pass, "{:?}", finding);
    }

    #[test]
    fn bom_parser_never_panics(text in "(?s).{0,400}") {
        let _ = parse_bom(&text);
    }

    #[test]
    fn fuse_rows_round_trip(rows in prop::collection::vec((1u32..9999, 1u32..600, 1u32..400), 1..20)) {
        let mut text = String::from("id,rating_a,class,branch,load_a\n");
        for (id, rating, load) in &rows {
            text.push_str(&format!("FU-{id},{},CLASS J,POWER,{}\n", f64::from(*rating) / 10.0, f64::from(*load) / 10.0));
        }
        let bom = parse_bom(&text);
        prop_assert!(bom.issues.is_empty(), "{:?}", bom.issues);
        prop_assert_eq!(bom.fuses.len(), rows.len());
        for (fuse, (id, rating, load)) in bom.fuses.iter().zip(&rows) {
            prop_assert_eq!(&fuse.id, &format!("FU-{id}"));
            prop_assert_eq!(fuse.rating_a, f64::from(*rating) / 10.0);
            prop_assert_eq!(fuse.load_a, Some(f64::from(*load) / 10.0));
        }
    }
}
