use bubbleflow::profiles::*;
use bubbleflow::vec3::{self, dot};
use proptest::prelude::*;
use std::f64::consts::PI;

#[test]
fn bubble_energy_is_eight_pi() {
    let e = bubble_energy().unwrap();
    assert!((e - 8.0 * PI).abs() < 1e-6, "{e}");
}

#[test]
fn profile_moments() {
    let [a, b] = bubbleflow::profiles::profile_moments().unwrap();
    assert!((a - 2.0).abs() < 1e-8, "{a}");
    assert!(b.abs() < 1e-8, "{b}");
}

#[test]
fn kernels_are_annihilated_at_second_order() {
    let s = kernel_annihilation_study(&[1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]).unwrap();
    for (k, o) in s.orders.iter().enumerate() {
        assert!((o - 2.0).abs() < 0.1, "kernel {:?}: order {o}, {:?}", KERNEL_INDICES[k], s.residuals);
    }
}

#[test]
fn mode_kernels_are_annihilated() {
    for k in [-1, 0, 1] {
        let r = mode_kernel_residual(k, 1e-3).unwrap();
        assert!(r < 1e-6, "k = {k}: {r}");
    }
    // a non-kernel is not
    let mesh: Vec<f64> = (0..=200).map(|i| 0.5 + i as f64 * 1e-2).collect();
    let m = ModeFunction::from_real(2, mesh, |r| mode_kernel(0, r)).unwrap();
    assert!(mode_operator_apply(2, &m).unwrap().sup_norm() > 0.1);
}

fn any_spec() -> impl Strategy<Value = BubbleSpec> {
    prop_oneof![
        (0.01f64..2.0, -1.0f64..1.0).prop_map(|(l, x)| BubbleSpec::boundary(l, x)),
        (0.01f64..2.0, -3.0f64..3.0, -1.0f64..1.0, 0.05f64..1.0)
            .prop_map(|(l, w, x, y)| BubbleSpec::interior(l, w, [x, y])),
        (0.01f64..2.0, -3.0f64..3.0, -1.0f64..1.0, 0.05f64..1.0)
            .prop_map(|(l, w, x, y)| BubbleSpec::interior(l, w, [x, y]).reflected()),
    ]
}

proptest! {
    #[test]
    fn bubble_has_unit_length(spec in any_spec(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let b = bubble(&spec, [x, y]).components();
        prop_assert!((vec3::norm(b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_bubble_third_component_vanishes_on_boundary(l in 0.01f64..2.0, c in -1.0f64..1.0, x in -3.0f64..3.0) {
        let b = bubble(&BubbleSpec::boundary(l, c), [x, 0.0]).components();
        prop_assert_eq!(b[2], 0.0);
    }

    #[test]
    fn frame_is_orthonormal_and_tangent(spec in any_spec(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
        prop_assume!((x - spec.center()[0]).hypot(y - spec.center()[1]) > 1e-6);
        let u = bubble(&spec, [x, y]).components();
        let (e1, e2) = frame(&spec, [x, y]).unwrap();
        let (e1, e2) = (e1.components(), e2.components());
        prop_assert!((dot(e1, e1) - 1.0).abs() < 1e-12);
        prop_assert!((dot(e2, e2) - 1.0).abs() < 1e-12);
        prop_assert!(dot(e1, e2).abs() < 1e-12);
        prop_assert!(dot(e1, u).abs() < 1e-12 && dot(e2, u).abs() < 1e-12);
    }

    #[test]
    fn projection_is_tangent_and_idempotent(a in -1.0f64..1.0, b in -1.0f64..1.0, v in prop::array::uniform3(-5.0f64..5.0)) {
        let u = Direction3::normalize([a, b, 0.7]).unwrap().components();
        let p = project_tangent(u, v);
        prop_assert!(dot(p, u).abs() < 1e-12);
        let pp = project_tangent(u, p);
        prop_assert!(vec3::norm(vec3::sub(p, pp)) < 1e-12);
    }

    #[test]
    fn kernels_are_tangent(p in 0usize..6, x in -3.0f64..3.0, y in -3.0f64..3.0) {
        prop_assume!(x.hypot(y) > 1e-6);
        let spec = BubbleSpec::interior(0.5, 0.3, [0.0, 1.0]);
        let (pi, qi) = KERNEL_INDICES[p];
        let z = kernel_z(pi, qi, &spec, [x, y]).unwrap();
        let w = vec3::mat_vec(&spec.target_matrix(), w2([x, y]));
        prop_assert!(dot(z, w).abs() < 1e-12);
    }
}
