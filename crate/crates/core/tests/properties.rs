use gnss_init::cli::parse_indices;
use gnss_init::dataset_io::{load_gnss, load_imu, write_gnss, write_imu, TimeOrigin, TimeUnit};
use gnss_init::manifold::*;
use gnss_init::preintegration::{integrate_between, ImuNoiseModel, ImuSample};
use gnss_init::residuals::{gnss_relative, total_cost, GnssMeasurement, Indexed, InitState, KeyframeState};
use gnss_init::trigger::{extrinsic_hessian, symmetric_singular_values, TriggerTrace};
use nalgebra::{Matrix3, Vector2, Vector3, Vector6};
use proptest::prelude::*;
use std::f64::consts::PI;

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-r..r).prop_map(Vector3::from)
}

fn ball(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    vec3(1.0).prop_filter("nonzero", |v| v.norm() > 1e-3).prop_flat_map(move |v| {
        let u = v.normalize();
        (0.0..r).prop_map(move |s| u * s)
    })
}

fn unit(v: Vector3<f64>) -> GravityDirection {
    GravityDirection::from_vector(v).expect("nonzero")
}

fn keyframe(p: Vector3<f64>) -> KeyframeState {
    KeyframeState { rotation: Rotation::identity(), position: p, angular_velocity: Vector3::zeros(), velocity: Vector3::zeros() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn hat_is_antisymmetric_and_vee_inverts_it(v in vec3(100.0)) {
        let m = hat(&v);
        prop_assert_eq!(m, -m.transpose());
        prop_assert_eq!(vee(&m).unwrap(), v);
    }

    #[test]
    fn so3_log_inverts_exp(phi in ball(PI - 1e-6)) {
        let back = log_so3(&exp_so3(&phi));
        prop_assert!((back - phi).norm() <= 1e-9, "{phi} -> {back}");
    }

    #[test]
    fn so3_exp_is_orthonormal(phi in ball(10.0)) {
        let r = *exp_so3(&phi).matrix();
        prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() <= 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn se3_log_inverts_exp(rho in vec3(5.0), phi in ball(3.0)) {
        let xi = Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z);
        let back = log_se3(&exp_se3(&xi));
        prop_assert!((back - xi).norm() <= 1e-9 * (1.0 + xi.norm()), "{xi} -> {back}");
    }

    #[test]
    fn s2_chains_stay_on_the_sphere(
        start in vec3(1.0).prop_filter("nonzero", |v| v.norm() > 1e-2),
        steps in prop::collection::vec(prop::array::uniform2(-1.0..1.0), 1..40),
    ) {
        let mut g = unit(start);
        for d in steps {
            g = s2_boxplus(&g, &Vector2::from(d));
            prop_assert!((g.vector().norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn s2_boxminus_inverts_boxplus(start in vec3(1.0).prop_filter("nonzero", |v| v.norm() > 1e-2), d in prop::array::uniform2(-1.5..1.5)) {
        let g = unit(start);
        let delta = Vector2::from(d);
        let back = s2_boxminus(&s2_boxplus(&g, &delta), &g).unwrap();
        prop_assert!((back - delta).norm() <= 1e-9, "{delta} -> {back}");
    }

    #[test]
    fn split_preintegration_composes(
        rate in vec3(1.0),
        accel in vec3(5.0),
        wobble in vec3(0.5),
        split in 1usize..99,
    ) {
        let samples: Vec<ImuSample> = (0..100)
            .map(|k| {
                let t = k as f64 * 0.005;
                ImuSample { timestamp: t, gyro: rate + wobble * (7.0 * t).sin(), accel }
            })
            .collect();
        let noise = ImuNoiseModel::isotropic(1e-3, 1e-2);
        let z = Vector3::zeros();
        let whole = integrate_between(&samples, 0.5, &noise, &z, &z).unwrap();
        let t_split = samples[split].timestamp;
        let a = integrate_between(&samples[..split], t_split, &noise, &z, &z).unwrap();
        let b = integrate_between(&samples[split..], 0.5, &noise, &z, &z).unwrap();
        let composed = a.delta_r * b.delta_r;
        prop_assert!((composed.matrix() - whole.delta_r.matrix()).abs().max() <= 1e-9);
        let dv = a.delta_v + a.delta_r.rotate(&b.delta_v);
        prop_assert!((dv - whole.delta_v).norm() <= 1e-9);
    }

    #[test]
    fn relative_gnss_residual_ignores_common_translation(
        pj in vec3(50.0), pk in vec3(50.0), mj in vec3(50.0), mk in vec3(50.0), shift in vec3(1000.0),
    ) {
        let (j, k) = (keyframe(pj), keyframe(pk));
        let (gj, gk) = (GnssMeasurement::isotropic(1.0, mj, 0.2), GnssMeasurement::isotropic(0.0, mk, 0.2));
        let base = gnss_relative(Indexed::new(1, &j), Indexed::new(0, &k), &gj, &gk).unwrap();
        let (js, ks) = (keyframe(pj + shift), keyframe(pk + shift));
        let moved = gnss_relative(Indexed::new(1, &js), Indexed::new(0, &ks), &gj, &gk).unwrap();
        prop_assert!((base.value - moved.value).amax() <= 1e-9);
    }

    #[test]
    fn cost_does_not_depend_on_block_order(
        points in prop::collection::vec((vec3(20.0), vec3(20.0)), 2..12),
        seed in any::<u64>(),
    ) {
        let kfs: Vec<KeyframeState> = points.iter().map(|(p, _)| keyframe(*p)).collect();
        let meas: Vec<GnssMeasurement> = points.iter().enumerate().map(|(i, (_, m))| GnssMeasurement::isotropic(i as f64, *m, 0.3)).collect();
        let mut blocks: Vec<_> = (1..kfs.len())
            .map(|i| gnss_relative(Indexed::new(i, &kfs[i]), Indexed::new(i - 1, &kfs[i - 1]), &meas[i], &meas[i - 1]).unwrap())
            .collect();
        let a = total_cost(&blocks);
        let n = blocks.len();
        blocks.rotate_left((seed as usize) % n);
        blocks.reverse();
        let b = total_cost(&blocks);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn singular_value_ratio_ignores_covariance_scale(
        points in prop::collection::vec(vec3(30.0), 3..15),
        scale in 1e-3f64..1e3,
    ) {
        let state = InitState::new(points.iter().map(|p| keyframe(*p)).collect(), Vector3::zeros(), GravityDirection::down());
        let meas = |s: f64| -> Vec<GnssMeasurement> {
            points.iter().enumerate().map(|(i, p)| GnssMeasurement::isotropic(i as f64, *p, 0.2 * s.sqrt())).collect()
        };
        let ratio = |h| { let s = symmetric_singular_values(&h); s[0] / s[5] };
        let h1 = extrinsic_hessian(&meas(1.0), &state, &Pose::identity()).unwrap();
        let h2 = extrinsic_hessian(&meas(scale), &state, &Pose::identity()).unwrap();
        let (r1, r2) = (ratio(h1), ratio(h2));
        prop_assert!((r1 - r2).abs() <= 1e-6 * r1, "{r1} vs {r2}");
    }

    #[test]
    fn smallest_singular_value_never_drops(points in prop::collection::vec(vec3(30.0), 3..15)) {
        let state = InitState::new(points.iter().map(|p| keyframe(*p)).collect(), Vector3::zeros(), GravityDirection::down());
        let meas: Vec<GnssMeasurement> = points.iter().enumerate().map(|(i, p)| GnssMeasurement::isotropic(i as f64, *p, 0.2)).collect();
        let mut prev = 0.0;
        let mut trace = TriggerTrace::new(1e-2);
        for n in 2..=meas.len() {
            let h = extrinsic_hessian(&meas[..n], &state, &Pose::identity()).unwrap();
            let rec = trace.update(&h);
            let smin = rec.singular_values[5];
            prop_assert!(smin >= prev - 1e-9 * rec.singular_values[0]);
            prop_assert!(rec.delta_rho >= 0.0);
            prev = smin;
        }
    }

    #[test]
    fn imu_csv_roundtrip_is_lossless(
        rows in prop::collection::vec((0.0f64..1e-3, prop::array::uniform3(-1e6f64..1e6), prop::array::uniform3(-1e6f64..1e6)), 1..30),
        t0 in -1e9f64..1e9,
    ) {
        let mut t = t0;
        let imu: Vec<ImuSample> = rows
            .iter()
            .map(|(dt, g, a)| {
                t += dt + 1e-3;
                ImuSample { timestamp: t, gyro: Vector3::from(*g), accel: Vector3::from(*a) }
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imu.csv");
        write_imu(&path, &imu).unwrap();
        let (_, back) = load_imu(&path, TimeUnit::S, Some(TimeOrigin::S(0.0))).unwrap();
        prop_assert_eq!(back, imu);
    }

    #[test]
    fn gnss_csv_roundtrip_is_lossless(
        rows in prop::collection::vec((prop::array::uniform3(-1e7f64..1e7), 1e-6f64..1e2), 1..30),
    ) {
        let gnss: Vec<GnssMeasurement> = rows
            .iter()
            .enumerate()
            .map(|(i, (p, s))| GnssMeasurement::isotropic(0.2 * i as f64, Vector3::from(*p), *s))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gnss.csv");
        write_gnss(&path, &gnss).unwrap();
        let (_, back) = load_gnss(&path, TimeUnit::S, Some(TimeOrigin::S(0.0))).unwrap();
        prop_assert_eq!(back, gnss);
    }

    #[test]
    fn index_ranges_expand_in_order(start in 0usize..50, len in 1usize..50, step in 1usize..7) {
        let end = start + len;
        let got = parse_indices(&format!("{start}:{end}:{step}")).unwrap();
        let want: Vec<usize> = (start..=end).step_by(step).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn index_lists_parse_verbatim(list in prop::collection::vec(0usize..1000, 1..20)) {
        let text = list.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        prop_assert_eq!(parse_indices(&text).unwrap(), list);
    }
}
