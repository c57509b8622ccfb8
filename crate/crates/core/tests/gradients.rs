//! Reverse-mode gradients of every op against central differences.

mod common;

use common::{contract, directional_grad, ops, tensors};
use jacnuc::autodiff::{grad, gradient_check, Tensor};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn first_order_matches_finite_differences(
        values in prop::collection::vec(-2.0f64..2.0, 64),
        w in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        for (name, shapes, op) in ops() {
            let inputs = tensors(&shapes, &values);
            let check = gradient_check(|t| contract(&op(t)?, &w), &inputs, 1e-5).unwrap();
            prop_assert!(check.max_rel_err <= 1e-5, "{name}: {check:?}");
        }
    }

    #[test]
    fn second_order_matches_finite_differences(
        values in prop::collection::vec(-2.0f64..2.0, 64),
        w in prop::collection::vec(-1.0f64..1.0, 64),
        v in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        for (name, shapes, op) in ops() {
            let inputs = tensors(&shapes, &values);
            let check = gradient_check(|t| directional_grad(op, t, &w, &v), &inputs, 1e-5).unwrap();
            prop_assert!(check.max_rel_err <= 1e-4, "{name}: {check:?}");
        }
    }

    #[test]
    fn backward_is_bit_reproducible(values in prop::collection::vec(-2.0f64..2.0, 64)) {
        let run = || {
            let inputs: Vec<Tensor> = tensors(&[vec![3, 4], vec![4, 4], vec![1, 4]], &values)
                .iter()
                .map(Tensor::requires_grad)
                .collect();
            let y = inputs[0].matmul(&inputs[1]).unwrap().add_row(&inputs[2]).unwrap().elu().sin().sq_norm();
            let refs: Vec<&Tensor> = inputs.iter().collect();
            grad(&y, &refs, false).unwrap().iter().flat_map(|g| g.to_vec()).map(f64::to_bits).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn third_order_nesting_is_rejected() {
    let x = Tensor::new(vec![0.3], &[1]).requires_grad();
    let y = x.sin().sum();
    let g1 = grad(&y, &[&x], true).unwrap().remove(0).sum();
    let g2 = grad(&g1, &[&x], false).unwrap().remove(0);
    assert!((g2.item() + 0.3f64.sin()).abs() < 1e-15);
    let err = grad(&g1, &[&x], true).unwrap_err();
    assert!(matches!(err, jacnuc::Error::NestingDepth), "{err}");
}
