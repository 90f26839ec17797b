mod common;

use proptest::prelude::*;

use common::oracles::{brute_returns, worked_examples, TOLERANCE};
use tripnet::env::{clamped_iou, temporal_iou, Window};
use tripnet::ndcore::{Tape, Tensor};
use tripnet::policy::{discounted_returns, gae};

#[test]
fn worked_examples_match_oracles() {
    for c in worked_examples() {
        assert!(c.error() < TOLERANCE, "{}: got {} want {}", c.name, c.got, c.want);
    }
}

fn window() -> impl Strategy<Value = Window> {
    (0usize..500, 1usize..200).prop_map(|(s, l)| Window::new(s, s + l).unwrap())
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in window(), b in window()) {
        let x = temporal_iou(a, b);
        prop_assert_eq!(x, temporal_iou(b, a));
        prop_assert!(x > -1.0 && x <= 1.0);
        prop_assert_eq!(temporal_iou(a, a), 1.0);
        let c = clamped_iou(a, b);
        prop_assert!((0.0..=1.0).contains(&c));
    }

    #[test]
    fn returns_match_brute_force(rs in prop::collection::vec(-1.0f64..1.0, 1..30), g in 0.5f64..1.0) {
        for (x, y) in discounted_returns(&rs, g).iter().zip(brute_returns(&rs, g)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn gae_limits(rs in prop::collection::vec(-1.0f64..1.0, 1..30), seed in 0u64..1000, g in 0.5f64..1.0) {
        let vs: Vec<f64> = (0..rs.len()).map(|i| ((i as u64 * 31 + seed) as f64).sin()).collect();
        let a0 = gae(&rs, &vs, g, 0.0).unwrap();
        for t in 0..rs.len() {
            let next = vs.get(t + 1).copied().unwrap_or(0.0);
            prop_assert!((a0[t] - (rs[t] + g * next - vs[t])).abs() < 1e-12);
        }
        let a1 = gae(&rs, &vs, g, 1.0).unwrap();
        for (t, r) in brute_returns(&rs, g).iter().enumerate() {
            prop_assert!((a1[t] - (r - vs[t])).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_sums_to_one(xs in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(xs));
        let p = tape.softmax(x).unwrap();
        let s: f64 = tape.value(p).data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(tape.value(p).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn backward_twice_doubles_gradients(xs in prop::collection::vec(-2.0f64..2.0, 7)) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(xs), true);
        let lp = tape.log_softmax(x).unwrap();
        let t = tape.tanh(lp);
        let loss = tape.sum(t);
        tape.backward(loss).unwrap();
        let once = tape.grad(x).unwrap().clone();
        tape.backward(loss).unwrap();
        let twice = tape.grad(x).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((2.0 * a - b).abs() < 1e-12);
        }
    }
}
