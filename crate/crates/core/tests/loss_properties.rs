//! Margin losses against straightforward loop implementations.

use ftsqa::loss::{full_time_loss, full_time_loss_shared, pooling_loss, LossConfig};
use ftsqa::numeric::numerical_gradient;
use ftsqa::Tensor;
use proptest::prelude::*;

mod common;
use common::{naive_full_time, naive_pooling, naive_shared};

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn tensors(v: &[Vec<f64>]) -> Vec<Tensor> {
    v.iter().map(|x| Tensor::from_vec(x.clone())).collect()
}

prop_compose! {
    fn instance(max_steps: usize)(d in 1usize..6, steps in 1..=max_steps, n_wrong in 1usize..5)
        (o in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, d), steps),
         c in proptest::collection::vec(-2.0f64..2.0, d),
         w in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, d), n_wrong),
         margin in 0.1f64..2.0)
        -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, f64) {
        (o, c, w, margin)
    }
}

prop_compose! {
    fn shared_instance()(d in 1usize..5, steps in 1usize..6, n_wrong in 1usize..4)
        (o in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, d), steps),
         c in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, d), steps),
         w in proptest::collection::vec(proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, d), steps), n_wrong),
         margin in 0.1f64..2.0)
        -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, f64) {
        (o, c, w, margin)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn full_time_matches_loop_oracle((o, c, w, margin) in instance(8)) {
        let cfg = LossConfig { margin, ..Default::default() };
        let (ot, ct, wt) = (tensors(&o), Tensor::from_vec(c.clone()), tensors(&w));
        let wrong: Vec<(usize, &Tensor)> = wt.iter().enumerate().collect();
        let res = full_time_loss(&ot, &ct, &wrong, &cfg).unwrap();
        let naive = naive_full_time(&o, &c, &w, margin);
        prop_assert!((res.value - naive.value).abs() <= 1e-12);
        for (g, n) in res.grad_outputs.iter().zip(&naive.g_out) {
            prop_assert!(close(g.as_slice(), n, 1e-12));
        }
        prop_assert!(close(res.grad_correct[0].as_slice(), &naive.g_correct[0], 1e-12));
        for (k, n) in naive.g_wrong.iter().enumerate() {
            prop_assert!(close(res.grad_wrong[&k][0].as_slice(), &n[0], 1e-12));
        }
    }

    #[test]
    fn pooling_matches_loop_oracle((o, c, w, margin) in instance(8)) {
        let cfg = LossConfig { margin, ..Default::default() };
        let (ot, ct, wt) = (tensors(&o), Tensor::from_vec(c.clone()), tensors(&w));
        let wrong: Vec<(usize, &Tensor)> = wt.iter().enumerate().collect();
        let res = pooling_loss(&ot, &ct, &wrong, &cfg).unwrap();
        let naive = naive_pooling(&o, &c, &w, margin);
        prop_assert!((res.value - naive.value).abs() <= 1e-12);
        for (g, n) in res.grad_outputs.iter().zip(&naive.g_out) {
            prop_assert!(close(g.as_slice(), n, 1e-12));
        }
        prop_assert!(close(res.grad_correct[0].as_slice(), &naive.g_correct[0], 1e-12));
    }

    #[test]
    fn shared_matches_loop_oracle((o, c, w, margin) in shared_instance()) {
        let cfg = LossConfig { margin, ..Default::default() };
        let (ot, ct) = (tensors(&o), tensors(&c));
        let wt: Vec<Vec<Tensor>> = w.iter().map(|x| tensors(x)).collect();
        let wrong: Vec<(usize, &[Tensor])> = wt.iter().enumerate().map(|(k, x)| (k, &x[..])).collect();
        let res = full_time_loss_shared(&ot, &ct, &wrong, &cfg).unwrap();
        let naive = naive_shared(&o, &c, &w, margin);
        prop_assert!((res.value - naive.value).abs() <= 1e-12);
        for t in 0..o.len() {
            prop_assert!(close(res.grad_outputs[t].as_slice(), &naive.g_out[t], 1e-12));
            prop_assert!(close(res.grad_correct[t].as_slice(), &naive.g_correct[t], 1e-12));
            for k in 0..w.len() {
                prop_assert!(close(res.grad_wrong[&k][t].as_slice(), &naive.g_wrong[k][t], 1e-12));
            }
        }
    }

    #[test]
    fn single_step_full_time_equals_pooling((o, c, w, margin) in instance(1)) {
        let cfg = LossConfig { margin, ..Default::default() };
        let (ot, ct, wt) = (tensors(&o), Tensor::from_vec(c), tensors(&w));
        let wrong: Vec<(usize, &Tensor)> = wt.iter().enumerate().collect();
        let a = full_time_loss(&ot, &ct, &wrong, &cfg).unwrap();
        let b = pooling_loss(&ot, &ct, &wrong, &cfg).unwrap();
        prop_assert_eq!(a.value, b.value);
    }

    #[test]
    fn losses_are_non_negative((o, c, w, margin) in instance(8)) {
        let cfg = LossConfig { margin, ..Default::default() };
        let (ot, ct, wt) = (tensors(&o), Tensor::from_vec(c), tensors(&w));
        let wrong: Vec<(usize, &Tensor)> = wt.iter().enumerate().collect();
        prop_assert!(full_time_loss(&ot, &ct, &wrong, &cfg).unwrap().value >= 0.0);
        prop_assert!(pooling_loss(&ot, &ct, &wrong, &cfg).unwrap().value >= 0.0);
    }

    #[test]
    fn output_gradient_matches_finite_differences((o, c, w, margin) in instance(4)) {
        let cfg = LossConfig { margin, ..Default::default() };
        let (ot, ct, wt) = (tensors(&o), Tensor::from_vec(c), tensors(&w));
        let wrong: Vec<(usize, &Tensor)> = wt.iter().enumerate().collect();
        let res = full_time_loss(&ot, &ct, &wrong, &cfg).unwrap();
        for t in 0..ot.len() {
            let f = |x: &Tensor| {
                let mut os = ot.clone();
                os[t] = x.clone();
                full_time_loss(&os, &ct, &wrong, &cfg).unwrap().value
            };
            // stay away from hinge kinks
            let near_kink = ot.iter().any(|ot| wt.iter().any(|a| {
                let h = margin - ftsqa::numeric::dot(ot, &ct).unwrap() + ftsqa::numeric::dot(ot, a).unwrap();
                h.abs() < 1e-4
            }));
            prop_assume!(!near_kink);
            let num = numerical_gradient(f, &ot[t], 1e-6).unwrap();
            prop_assert!(close(res.grad_outputs[t].as_slice(), num.as_slice(), 1e-6));
        }
    }
}

#[test]
fn satisfied_margins_give_zero() {
    let o = vec![Tensor::from_vec(vec![1.0, 0.0]); 3];
    let c = Tensor::from_vec(vec![5.0, 0.0]);
    let w = Tensor::from_vec(vec![-1.0, 9.0]);
    let res = full_time_loss(&o, &c, &[(1, &w)], &LossConfig::default()).unwrap();
    assert_eq!(res.value, 0.0);
    let res = pooling_loss(&o, &c, &[(1, &w)], &LossConfig::default()).unwrap();
    assert_eq!(res.value, 0.0);
}
