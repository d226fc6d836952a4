mod common;

use common::*;
use dsfec_core::postprocess::{nms, rotated_iou, ClassLabel, Detection};
use dsfec_core::synth::SceneRng;
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = Detection> {
    (
        -6.0f64..6.0,
        -6.0f64..6.0,
        0.2f64..4.0,
        0.2f64..7.0,
        -std::f64::consts::PI..std::f64::consts::PI,
        0usize..2,
        // A coarse score grid makes ties common.
        0u8..6,
    )
        .prop_map(|(cx, cy, w, l, theta, c, s)| Detection {
            cx,
            cy,
            w,
            l,
            theta,
            class_label: [ClassLabel::Car, ClassLabel::Truck][c],
            score: s as f64 / 5.0,
        })
}

fn rotate(d: &Detection, angle: f64) -> Detection {
    let (s, c) = angle.sin_cos();
    Detection { cx: d.cx * c - d.cy * s, cy: d.cx * s + d.cy * c, theta: d.theta + angle, ..*d }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn nms_matches_reference(dets in prop::collection::vec(arb_box(), 0..20), t in 0.05f64..1.0, per_class in any::<bool>()) {
        prop_assert_eq!(nms(&dets, t, per_class).unwrap(), reference_nms(&dets, t, per_class));
    }

    #[test]
    fn nms_output_is_a_clean_subset(dets in prop::collection::vec(arb_box(), 0..20), t in 0.05f64..1.0) {
        let out = nms(&dets, t, true).unwrap();
        prop_assert!(out.iter().all(|d| dets.contains(d)));
        prop_assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
        for (i, a) in out.iter().enumerate() {
            for b in &out[i + 1..] {
                prop_assert!(a.class_label != b.class_label || rotated_iou(a, b) < t);
            }
        }
    }

    #[test]
    fn raising_threshold_never_drops_survivors(dets in prop::collection::vec(arb_box(), 0..20), t in 0.05f64..0.9, dt in 0.0f64..0.5) {
        let lo = nms(&dets, t, false).unwrap().len();
        let hi = nms(&dets, (t + dt).min(1.0), false).unwrap().len();
        prop_assert!(hi >= lo);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let (ab, ba) = (rotated_iou(&a, &b), rotated_iou(&b, &a));
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((rotated_iou(&a, &a) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn iou_is_rotation_equivariant(a in arb_box(), b in arb_box(), angle in -3.2f64..3.2) {
        let before = rotated_iou(&a, &b);
        let after = rotated_iou(&rotate(&a, angle), &rotate(&b, angle));
        prop_assert!((before - after).abs() < 1e-6, "{} vs {}", before, after);
    }
}

#[test]
fn iou_matches_monte_carlo() {
    let mut rng = SceneRng::new(404);
    for _ in 0..20 {
        let a = random_box(&mut rng, 1.0);
        let b = random_box(&mut rng, 1.0);
        let mc = monte_carlo_iou(&a, &b, 400, &mut rng);
        let exact = rotated_iou(&a, &b);
        assert!((mc - exact).abs() < 5e-3, "{a:?} {b:?}: exact {exact}, mc {mc}");
    }
}

#[test]
fn unit_square_rotated_45_matches_monte_carlo_at_1e6() {
    let a = Detection { cx: 0.0, cy: 0.0, w: 1.0, l: 1.0, theta: 0.0, class_label: ClassLabel::Car, score: 1.0 };
    let b = Detection { theta: std::f64::consts::FRAC_PI_4, ..a };
    let mc = monte_carlo_iou(&a, &b, 1000, &mut SceneRng::new(1));
    assert!((mc - rotated_iou(&a, &b)).abs() < 2e-3);
}
