use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use planar_impact::dynamics::{build_contact_frame, BodyModel, ContactFrame, PlanarState};
use planar_impact::feasible::EnergyEllipse;
use planar_impact::models::{mu_of_u, predict, ModelId, ModelParams, DEFAULT_MU_MAX};
use planar_impact::sysid::{EventSource, ImpactEvent};
use planar_impact::trajectory::TrajectorySeries;
use proptest::prelude::*;

fn frame_strategy() -> impl Strategy<Value = ContactFrame> {
    (0.2..2.0f64, 0.02..0.2f64, -0.15..0.15f64, -0.15..0.02f64, -2.0..2.0f64, 0.1..3.0f64).prop_map(
        |(m, rho, rx, ry, vt, vn)| {
            let j = Matrix2x3::new(1.0, 0.0, -ry, 0.0, 1.0, rx);
            let m_inv = Matrix3::from_diagonal(&Vector3::new(1.0 / m, 1.0 / m, 1.0 / (m * rho * rho)));
            let a: Matrix2<f64> = j * m_inv * j.transpose();
            ContactFrame::from_contact_space(0.5 * (a + a.transpose()), Vector2::new(vt, -vn)).unwrap()
        },
    )
}

fn model_strategy() -> impl Strategy<Value = ModelId> {
    prop::sample::select(ModelId::ALL.to_vec())
}

fn finite() -> impl Strategy<Value = f64> {
    -1e3..1e3f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn predictions_push_and_separate(f in frame_strategy(), m in model_strategy(), mu in 0.0..2.0f64, eps in 0.0..1.0f64) {
        let r = predict(m, &f, ModelParams { mu, eps }).unwrap();
        let scale = (f.m_c * f.v_c).norm();
        prop_assert!(r.impulse.p_n >= -1e-9 * scale);
        prop_assert!(r.post_contact_velocity.y >= -1e-9 * f.v_c.norm());
        // Newton restitution on a coupled frame can add energy
        if m != ModelId::ApNewton {
            let ell = EnergyEllipse::new(&f).unwrap();
            prop_assert!(ell.energy_fraction(r.impulse) <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn contact_inverse_mass_symmetric_positive(
        mass in 0.1..5.0f64, a in 0.01..0.2f64, b in 0.01..0.2f64,
        th in -3.2..3.2f64, cx in -0.2..0.2f64, cy in -0.2..0.2f64,
    ) {
        let body = BodyModel::ellipse(mass, a, b, 16).unwrap();
        let s = PlanarState::new(Vector3::new(0.0, 0.1, th), Vector3::new(0.1, -1.0, 0.5), 0.0);
        let f = build_contact_frame(&s, &body, Vector2::new(cx, cy)).unwrap();
        let k = f.m_c_inv;
        prop_assert!((k.m12 - k.m21).abs() <= 1e-12 * k.norm());
        prop_assert!(k.m11 > 0.0 && k.determinant() > -1e-12 * k.norm_squared());
        let id = f.m_c * f.m_c_inv;
        prop_assert!((id - Matrix2::identity()).norm() < 1e-8);
    }

    #[test]
    fn mu_axis_monotone(f in frame_strategy(), m in model_strategy(), eps in 0.0..1.0f64, u0 in 0.0..1.0f64, u1 in 0.0..1.0f64) {
        let (lo, hi) = if u0 <= u1 { (u0, u1) } else { (u1, u0) };
        let a = mu_of_u(m, &f, eps, lo, DEFAULT_MU_MAX);
        let b = mu_of_u(m, &f, eps, hi, DEFAULT_MU_MAX);
        prop_assert!(a >= 0.0 && a <= b + 1e-12 && b <= DEFAULT_MU_MAX + 1e-12);
    }

    #[test]
    fn trajectory_csv_lossless(rows in prop::collection::vec((finite(), finite(), finite()), 1..40), t0 in -10.0..10.0f64, dts in prop::collection::vec(1e-4..0.1f64, 40)) {
        let mut t = t0;
        let samples: Vec<_> = rows
            .iter()
            .zip(&dts)
            .map(|(&(x, y, th), &dt)| {
                t += dt;
                PlanarState::at_rest(Vector3::new(x, y, th), t)
            })
            .collect();
        let series = TrajectorySeries::new(samples, "b");
        let mut buf = Vec::new();
        series.write_csv(&mut buf).unwrap();
        let back = TrajectorySeries::read_csv(buf.as_slice(), "b").unwrap();
        prop_assert_eq!(back, series);
    }

    #[test]
    fn event_json_lossless(
        q in prop::array::uniform3(finite()), vp in prop::array::uniform3(finite()), vq in prop::array::uniform3(finite()),
        c in prop::array::uniform2(finite()), t in finite(), mu in 0.0..2.0f64, eps in 0.0..1.0f64, synth in any::<bool>(),
    ) {
        let e = ImpactEvent {
            t,
            q: Vector3::from(q),
            v_pre: Vector3::from(vp),
            v_post: Vector3::from(vq),
            contact_point: Vector2::from(c),
            body_ref: "body.json".into(),
            source: if synth { EventSource::Synthetic { model: ModelId::Whittaker, params: ModelParams { mu, eps } } } else { EventSource::Measured },
            flat_contact: synth,
        };
        let text = serde_json::to_string(&e).unwrap();
        prop_assert_eq!(serde_json::from_str::<ImpactEvent>(&text).unwrap(), e);
    }
}
