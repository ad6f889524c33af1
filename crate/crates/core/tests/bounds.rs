mod common;

use common::oracle::{forward, ibp_soundness};
use common::{random_net, random_obs, rng};
use proptest::prelude::*;
use radial_core::bounds::{ibp_dense, ibp_input, ibp_network, ibp_relu, softmax_prob_bounds_all, IntervalTensor};
use radial_core::nn::HeadKind;
use radial_core::tensor::softmax;
use radial_core::Tensor;

#[test]
fn sampled_outputs_stay_inside_bounds() {
    let s = ibp_soundness(24, 5, 200);
    assert_eq!(s.violations, 0, "{s:?}");
    assert_eq!(s.samples, 24 * 5 * 3 * 200);
}

#[test]
fn library_containment_check_agrees() {
    let mut r = rng(3);
    for n in 0..10 {
        let net = random_net(&mut r, 4, HeadKind::DuelingQ, 3, 3, 32);
        let obs: Vec<Vec<f64>> = (0..5).map(|_| random_obs(&mut r, 4)).collect();
        let range = (n % 2 == 0).then_some((-1.0, 1.0));
        let rep = radial_core::bounds::sampled_containment(&net, &obs, 0.1, range, 200, &mut r).unwrap();
        assert_eq!(rep.violations, 0);
        assert_eq!(rep.max_excess, 0.0);
        assert_eq!(rep.samples, 1000);
    }
}

fn head_strategy() -> impl Strategy<Value = HeadKind> {
    prop_oneof![
        Just(HeadKind::DuelingQ),
        Just(HeadKind::Softmax),
        Just(HeadKind::Gaussian),
        Just(HeadKind::Linear),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_radius_bounds_are_the_forward_pass(seed in 0u64..10_000, head in head_strategy(), dim in 1usize..6) {
        let mut r = rng(seed);
        let net = random_net(&mut r, dim, head, 3, 3, 16);
        let x = random_obs(&mut r, dim);
        let b = ibp_network(&net, &Tensor::vector(x.clone()).unwrap(), 0.0, None).unwrap();
        let y = forward(&net, &x).primary;
        for j in 0..y.len() {
            prop_assert!((b.lower().data()[j] - y[j]).abs() < 1e-12);
            prop_assert!((b.upper().data()[j] - y[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn bounds_are_ordered_and_nested_in_epsilon(
        seed in 0u64..10_000,
        head in head_strategy(),
        e1 in 0.0f64..0.3,
        e2 in 0.0f64..0.3,
    ) {
        let (small, large) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let mut r = rng(seed);
        let net = random_net(&mut r, 3, head, 3, 2, 16);
        let x = Tensor::vector(random_obs(&mut r, 3)).unwrap();
        let a = ibp_network(&net, &x, small, None).unwrap();
        let b = ibp_network(&net, &x, large, None).unwrap();
        for j in 0..a.lower().len() {
            prop_assert!(a.lower().data()[j] <= a.upper().data()[j]);
            prop_assert!(b.lower().data()[j] <= a.lower().data()[j] + 1e-12);
            prop_assert!(a.upper().data()[j] <= b.upper().data()[j] + 1e-12);
        }
    }

    #[test]
    fn affine_and_relu_steps_are_exact_on_corners(
        w in prop::collection::vec(-2.0f64..2.0, 6),
        bias in prop::collection::vec(-1.0f64..1.0, 3),
        x in prop::collection::vec(-1.0f64..1.0, 2),
        eps in 0.0f64..0.5,
    ) {
        // For one affine layer the interval is attained at box corners.
        let input = ibp_input(&Tensor::vector(x.clone()).unwrap(), eps, None).unwrap();
        let wt = Tensor::matrix(3, 2, w.clone()).unwrap();
        let out = ibp_dense(&input, &wt, &Tensor::vector(bias.clone()).unwrap()).unwrap();
        for o in 0..3 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for m in 0..4 {
                let c: Vec<f64> = (0..2).map(|i| if m >> i & 1 == 1 { x[i] + eps } else { x[i] - eps }).collect();
                let y = bias[o] + w[2 * o] * c[0] + w[2 * o + 1] * c[1];
                lo = lo.min(y);
                hi = hi.max(y);
            }
            prop_assert!((out.lower().data()[o] - lo).abs() < 1e-12);
            prop_assert!((out.upper().data()[o] - hi).abs() < 1e-12);
        }
        let r = ibp_relu(&out);
        for o in 0..3 {
            prop_assert_eq!(r.lower().data()[o], out.lower().data()[o].max(0.0));
            prop_assert_eq!(r.upper().data()[o], out.upper().data()[o].max(0.0));
        }
    }

    #[test]
    fn softmax_bounds_contain_every_probability(
        lo in prop::collection::vec(-3.0f64..3.0, 3),
        width in prop::collection::vec(0.0f64..2.0, 3),
        t in prop::collection::vec(0.0f64..=1.0, 3),
    ) {
        let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
        let iv = IntervalTensor::new(Tensor::vector(lo.clone()).unwrap(), Tensor::vector(hi.clone()).unwrap()).unwrap();
        let (pl, pu) = softmax_prob_bounds_all(&iv).unwrap();
        let z: Vec<f64> = (0..3).map(|i| lo[i] + t[i] * width[i]).collect();
        for (i, p) in softmax(&z).into_iter().enumerate() {
            prop_assert!(pl[i] <= p + 1e-15 && p <= pu[i] + 1e-15);
        }
    }
}
