use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use slack::attack::{baseline_rn_with, baseline_rr, count_pij, PIJ_EPS};
use slack::backbone::{bce, loss_dice, loss_npair, loss_recon, loss_triplet, LatentCode};
use slack::quality::dsr_from_mask;
use slack::scanio::{difference_mask, synth_sequence, RangeImage, SegMask, SensorConfig, WorldSpec};
use slack::slameval::{rpe, umeyama_align, Trajectory};

fn small_sensor() -> SensorConfig {
    SensorConfig { beams: 8, azimuth_bins: 32, ..SensorConfig::default() }
}

fn arb_image() -> impl Strategy<Value = RangeImage> {
    let s = small_sensor();
    prop::collection::vec(prop_oneof![Just(0.0), 0.5f64..50.0], s.cells()).prop_map(move |r| RangeImage::from_ranges(s, &r).unwrap())
}

fn arb_code(d: usize) -> impl Strategy<Value = LatentCode> {
    prop::collection::vec(-2.0f64..2.0, d).prop_map(LatentCode)
}

fn arb_iso() -> impl Strategy<Value = Isometry3<f64>> {
    (prop::array::uniform3(-20.0f64..20.0), prop::array::uniform3(-1.0f64..1.0), -3.0f64..3.0).prop_map(|(t, a, ang)| {
        let axis = Vector3::from(a);
        let rot = if axis.norm() < 1e-3 { UnitQuaternion::identity() } else { UnitQuaternion::from_scaled_axis(axis.normalize() * ang) };
        Isometry3::from_parts(Translation3::new(t[0], t[1], t[2]), rot)
    })
}

fn arb_trajectory() -> impl Strategy<Value = Trajectory> {
    prop::collection::vec(arb_iso(), 4..12).prop_map(|isos| {
        let ts: Vec<f64> = (0..isos.len()).map(|i| i as f64).collect();
        Trajectory::from_isometries(&ts, &isos).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn world_masks_match_range_differences(seed in 0u64..10_000, actors in 1usize..6) {
        let spec = WorldSpec { seed, frame_count: 2, dynamic_actors: actors, sensor: small_sensor(), ..WorldSpec::default() };
        for p in synth_sequence(&spec).unwrap() {
            prop_assert_eq!(&p.dynamic_mask, &difference_mask(&p.static_scan, &p.dynamic));
            prop_assert_eq!(p.static_mask.count(), 0);
            let (rows, cols) = p.dynamic.shape();
            for r in 0..rows {
                for c in 0..cols {
                    prop_assert!(!p.dynamic_mask.get(r, c) || p.dynamic.is_valid(r, c));
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn losses_nonnegative_and_zero_on_identity(x in arb_image(), y in arb_image(), a in arb_code(5), p in arb_code(5), n in arb_code(5)) {
        prop_assert!(loss_recon(&x, &y).unwrap() >= 0.0);
        prop_assert_eq!(loss_recon(&x, &x).unwrap(), 0.0);
        prop_assert!(loss_triplet(&a, &p, &n, 0.5).unwrap() >= 0.0);
        prop_assert_eq!(loss_triplet(&a, &a, &n, 0.0).unwrap(), 0.0);
        prop_assert!(loss_npair(&a, &p, std::slice::from_ref(&n)).unwrap() >= 0.0);
        let labels: Vec<bool> = x.valid().to_vec();
        let gt = SegMask::from_labels(x.rows(), x.cols(), labels.clone()).unwrap();
        let pred: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let d = loss_dice(&pred, &gt).unwrap();
        prop_assert!(d.abs() < 1e-9, "dice on a perfect prediction: {}", d);
    }

    #[test]
    fn bce_is_finite_and_nonnegative(p in -1.0f64..2.0, label in prop_oneof![Just(0.0), Just(1.0)]) {
        let v = bce(p, label);
        prop_assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn baselines_respect_valid_sets(x in arb_image(), f in 0.0f64..1.0, seed in 0u64..1000, mags in prop::collection::vec(0.1f64..3.0, 1..10)) {
        let rr = baseline_rr(&x, f, seed).unwrap();
        for i in 0..x.valid().len() {
            prop_assert!(!rr.attacked.valid()[i] || x.valid()[i]);
        }
        let k = (x.valid_count() / 3).max(1).min(x.valid_count());
        if x.valid_count() > 0 {
            let rn = baseline_rn_with(&x, k, &mags, seed).unwrap();
            prop_assert_eq!(rn.attacked.valid(), x.valid());
            prop_assert_eq!(count_pij(&x, &x, PIJ_EPS).unwrap().0, 0);
        }
    }

    #[test]
    fn gt_mask_dsr_in_unit_interval(x in arb_image(), flips in prop::collection::vec(any::<bool>(), 256)) {
        let labels: Vec<bool> = x.valid().iter().zip(&flips).map(|(&v, &f)| v && f).collect();
        let m = SegMask::from_labels(x.rows(), x.cols(), labels).unwrap();
        let d = dsr_from_mask(&x, &m).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn alignment_is_proper_and_rpe_ignores_global_motion(gt in arb_trajectory(), est_noise in arb_iso(), t in arb_iso()) {
        let est = Trajectory::from_isometries(
            &gt.poses().iter().map(|p| p.timestamp).collect::<Vec<_>>(),
            &gt.isometries().iter().enumerate().map(|(i, g)| if i % 2 == 0 { g * est_noise } else { *g }).collect::<Vec<_>>(),
        ).unwrap();
        if let Ok(align) = umeyama_align(&est, &gt) {
            let det = align.rotation.to_rotation_matrix().matrix().determinant();
            prop_assert!((det - 1.0).abs() < 1e-9);
        }
        let base = rpe(&est, &gt, 1).unwrap();
        for moved in [rpe(&est.transformed(&t), &gt, 1).unwrap(), rpe(&est, &gt.transformed(&t), 1).unwrap()] {
            prop_assert!((moved.trans - base.trans).abs() < 1e-9);
            prop_assert!((moved.rot_deg - base.rot_deg).abs() < 1e-7);
        }
        for p in est.poses() {
            prop_assert!((p.rotation.norm() - 1.0).abs() < 1e-9);
        }
    }
}
