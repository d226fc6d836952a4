mod common;

use common::*;
use dsfec_core::metrics::{
    average_precision, evaluate, match_detections, FrameDetections, FrameGroundTruth, GroundTruthBox,
    DEFAULT_THRESHOLDS,
};
use dsfec_core::postprocess::{ClassLabel, Detection};
use dsfec_core::synth::{generate_scene, oracle_detector, SceneRng, SceneSpec, ScoreModel};
use proptest::prelude::*;

fn car_det(cx: f64, cy: f64, score: f64) -> Detection {
    Detection { cx, cy, w: 1.8, l: 4.5, theta: 0.0, class_label: ClassLabel::Car, score }
}

fn car_gt(cx: f64, cy: f64) -> GroundTruthBox {
    GroundTruthBox { cx, cy, w: 1.8, l: 4.5, theta: 0.0, class_label: ClassLabel::Car }
}

fn arb_frame(id: usize) -> impl Strategy<Value = (FrameDetections, FrameGroundTruth)> {
    (
        prop::collection::vec((0.0f64..12.0, 0.0f64..12.0, 0u8..10), 0..6),
        prop::collection::vec((0.0f64..12.0, 0.0f64..12.0), 0..5),
    )
        .prop_map(move |(d, g)| {
            let frame_id = format!("f{id}");
            (
                FrameDetections {
                    frame_id: frame_id.clone(),
                    detections: d.into_iter().map(|(x, y, s)| car_det(x, y, s as f64 / 10.0)).collect(),
                },
                FrameGroundTruth { frame_id, boxes: g.into_iter().map(|(x, y)| car_gt(x, y)).collect() },
            )
        })
}

fn arb_frames() -> impl Strategy<Value = (Vec<FrameDetections>, Vec<FrameGroundTruth>)> {
    (arb_frame(0), arb_frame(1), arb_frame(2)).prop_map(|(a, b, c)| {
        let (d, g): (Vec<_>, Vec<_>) = [a, b, c].into_iter().unzip();
        (d, g)
    })
}

proptest! {
    #[test]
    fn ap_matches_pr_oracles(flags in prop::collection::vec(any::<bool>(), 0..10), extra_gt in 0usize..4) {
        let n_gt = flags.iter().filter(|&&f| f).count() + extra_gt;
        let ap = average_precision(&flags, n_gt).ap;
        prop_assert!((ap - ap101_oracle(&flags, n_gt)).abs() < 1e-12);
        prop_assert!((ap - pr_area_oracle(&flags, n_gt)).abs() < 0.01, "ap {} area {}", ap, pr_area_oracle(&flags, n_gt));
    }

    #[test]
    fn ap_grows_with_distance_threshold((dets, gts) in arb_frames()) {
        let r = evaluate(&dets, &gts, &DEFAULT_THRESHOLDS).unwrap();
        let car = &r.classes[&ClassLabel::Car];
        prop_assert!(car.ap.windows(2).all(|w| w[0].ap <= w[1].ap + 1e-12), "{:?}", car.ap);
    }

    #[test]
    fn duplicating_detections_never_helps((dets, gts) in arb_frames()) {
        let doubled: Vec<FrameDetections> = dets
            .iter()
            .map(|f| FrameDetections { frame_id: f.frame_id.clone(), detections: f.detections.iter().flat_map(|d| [*d, *d]).collect() })
            .collect();
        let a = evaluate(&dets, &gts, &DEFAULT_THRESHOLDS).unwrap();
        let b = evaluate(&doubled, &gts, &DEFAULT_THRESHOLDS).unwrap();
        // A copy can claim a second box when one detection reaches two boxes, so
        // the claim only holds while boxes are more than 2t apart.
        let min_gap = gts
            .iter()
            .flat_map(|f| f.boxes.iter().enumerate().flat_map(move |(i, a)| f.boxes[i + 1..].iter().map(move |b| (a.cx - b.cx).hypot(a.cy - b.cy))))
            .fold(f64::INFINITY, f64::min);
        for (x, y) in a.classes[&ClassLabel::Car].ap.iter().zip(&b.classes[&ClassLabel::Car].ap) {
            if min_gap > 2.0 * x.threshold {
                prop_assert!(y.ap <= x.ap + 1e-12);
            }
        }
    }

    #[test]
    fn frame_order_does_not_matter((dets, gts) in arb_frames()) {
        let a = evaluate(&dets, &gts, &DEFAULT_THRESHOLDS).unwrap();
        let mut rd = dets.clone();
        rd.reverse();
        let mut rg = gts.clone();
        rg.rotate_left(1);
        let b = evaluate(&rd, &rg, &DEFAULT_THRESHOLDS).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn map_is_mean_of_threshold_aps((dets, gts) in arb_frames()) {
        let r = evaluate(&dets, &gts, &DEFAULT_THRESHOLDS).unwrap();
        for c in r.classes.values() {
            let mean = (c.ap[0].ap + c.ap[1].ap + c.ap[2].ap + c.ap[3].ap) / 4.0;
            prop_assert_eq!(c.map, mean);
        }
    }
}

#[test]
fn duplicates_can_claim_a_second_nearby_box() {
    let gts = [FrameGroundTruth { frame_id: "a".into(), boxes: vec![car_gt(9.0, 6.9), car_gt(9.2, 5.1)] }];
    let once = [FrameDetections { frame_id: "a".into(), detections: vec![car_det(7.2, 4.0, 0.2)] }];
    let twice = [FrameDetections { frame_id: "a".into(), detections: vec![car_det(7.2, 4.0, 0.2); 2] }];
    let a = evaluate(&once, &gts, &[4.0]).unwrap().car_map;
    let b = evaluate(&twice, &gts, &[4.0]).unwrap().car_map;
    assert!(b > a);
}

#[test]
fn matching_is_one_to_one() {
    let dets = [car_det(0.0, 0.0, 0.9), car_det(0.2, 0.0, 0.8), car_det(0.1, 0.1, 0.7)];
    let gts = [car_gt(0.0, 0.0), car_gt(0.3, 0.0)];
    let m = match_detections(&dets, &gts, ClassLabel::Car, 1.0);
    let mut hit: Vec<usize> = m.iter().filter_map(|x| x.gt).collect();
    hit.sort();
    assert_eq!(hit, vec![0, 1]);
    assert!(!m[2].is_tp());
}

#[test]
fn oracle_detector_scenarios_over_fifty_frames() {
    let spec = SceneSpec::default();
    let scenes: Vec<(String, Vec<GroundTruthBox>)> =
        (0..50).map(|i| (format!("frame_{i}"), generate_scene(&spec.for_frame(i)).unwrap().1)).collect();
    let gts: Vec<FrameGroundTruth> =
        scenes.iter().map(|(id, b)| FrameGroundTruth { frame_id: id.clone(), boxes: b.clone() }).collect();
    for (noise, expected) in [(0.0, 1.0), (3.0, 0.25), (10.0, 0.0)] {
        let dets: Vec<FrameDetections> = scenes
            .iter()
            .enumerate()
            .map(|(i, (id, b))| FrameDetections {
                frame_id: id.clone(),
                detections: oracle_detector(b, noise, ScoreModel::Uniform { low: 0.2, high: 1.0 }, i as u64).unwrap(),
            })
            .collect();
        let r = evaluate(&dets, &gts, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(r.car_map, expected, "noise {noise}");
    }
}

#[test]
fn random_small_cases_match_bruteforce_pipeline() {
    let mut rng = SceneRng::new(99);
    for _ in 0..200 {
        let n_gt = rng.range_inclusive(0, 5);
        let gts: Vec<GroundTruthBox> =
            (0..n_gt).map(|_| car_gt(rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0))).collect();
        let n_det = rng.range_inclusive(0, 5);
        let dets: Vec<Detection> =
            (0..n_det).map(|_| car_det(rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0), rng.unit())).collect();
        let flags: Vec<bool> = match_detections(&dets, &gts, ClassLabel::Car, 2.0).iter().map(|m| m.is_tp()).collect();
        let r = evaluate(
            &[FrameDetections { frame_id: "x".into(), detections: dets }],
            &[FrameGroundTruth { frame_id: "x".into(), boxes: gts }],
            &[2.0],
        )
        .unwrap();
        let ap = r.classes[&ClassLabel::Car].ap[0].ap;
        assert!((ap - pr_area_oracle(&flags, n_gt)).abs() < 0.01);
    }
}
