use super::params::{Gradients, ParamSet};

/// Plain SGD: `p -= lr * grad(p)` for every parameter holding a gradient,
/// then clears gradients and bumps the version counter.
pub fn sgd_step(params: &mut ParamSet, lr: f64) {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let Some(g) = params.grad(&name).cloned() else {
            log::debug!("sgd_step: no gradient for {name}, skipped");
            continue;
        };
        let p = params.get_mut(&name).expect("name from same set");
        for (v, d) in p.data_mut().iter_mut().zip(g.data()) {
            *v -= lr * d;
        }
    }
    params.zero_grad();
    params.bump_version();
}

pub fn global_norm(grads: &Gradients) -> f64 {
    grads.values().map(|g| g.sq_norm()).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
