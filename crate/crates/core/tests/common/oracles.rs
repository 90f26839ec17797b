//! Worked examples checked against independent hand or brute-force values.

use tripnet::env::{shaped_reward, temporal_iou, Window};
use tripnet::policy::{discounted_returns, entropy, gae, policy_loss, total_loss, value_loss};

pub const TOLERANCE: f64 = 1e-9;

pub struct Check {
    pub name: &'static str,
    pub got: f64,
    pub want: f64,
}

impl Check {
    pub fn error(&self) -> f64 {
        (self.got - self.want).abs()
    }
}

fn w(s: usize, e: usize) -> Window {
    Window::new(s, e).unwrap()
}

/// `Σ_k γ^k r_{t+k}` by explicit summation.
pub fn brute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| {
            rewards[t..]
                .iter()
                .enumerate()
                .map(|(k, r)| gamma.powi(k as i32) * r)
                .sum()
        })
        .collect()
}

pub fn worked_examples() -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name, got, want| out.push(Check { name, got, want });

    push("iou identical", temporal_iou(w(0, 10), w(0, 10)), 1.0);
    push("iou overlap", temporal_iou(w(0, 10), w(5, 15)), 5.0 / 15.0);
    push("iou disjoint", temporal_iou(w(0, 10), w(20, 30)), -10.0 / 30.0);

    push("reward 0.2 to 0.5 at t=3", shaped_reward(0.2, 0.5, 3, 0.01), 0.27);
    push("reward clamped at t=5", shaped_reward(0.4, 0.4, 5, 0.01), -0.05);

    let rewards = [0.27, -0.02, 0.1];
    let got = discounted_returns(&rewards, 0.99);
    let want = brute_returns(&rewards, 0.99);
    let names = ["returns[0]", "returns[1]", "returns[2]"];
    for ((n, g), wv) in names.into_iter().zip(&got).zip(&want) {
        push(n, *g, *wv);
    }
    // 0.27 + 0.99 (-0.02) + 0.9801 (0.1)
    push("returns[0] by hand", got[0], 0.34821);
    push("returns[1] by hand", got[1], 0.079);

    let ones = discounted_returns(&[1.0, 1.0, 1.0], 1.0);
    push("returns gamma=1", ones[0], 3.0);

    push("value loss", value_loss(&[1.0, 1.0], &[0.0, 0.0], 0.5).unwrap(), 1.0);
    let h7 = entropy(&[1.0 / 7.0; 7]);
    push("uniform entropy", h7, 7f64.ln());
    let pl = policy_loss(&[-1.0], &[2.0], &[h7], 0.5).unwrap();
    push("policy loss", pl, 2.0 - 0.5 * 7f64.ln());
    push("total loss", total_loss(1.027, 1.0), 2.027);

    let values = [0.3, -0.1, 0.6];
    let g = 0.99;
    let a0 = gae(&rewards, &values, g, 0.0).unwrap();
    for t in 0..3 {
        let next = if t + 1 < 3 { values[t + 1] } else { 0.0 };
        push("gae lambda=0 is td error", a0[t], rewards[t] + g * next - values[t]);
    }
    let a1 = gae(&rewards, &values, g, 1.0).unwrap();
    for t in 0..3 {
        push("gae lambda=1 is return minus value", a1[t], want[t] - values[t]);
    }
    out
}
