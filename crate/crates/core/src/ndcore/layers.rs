//! Differentiable layers built from tape primitives, with their parameter
//! initializers.
//!
//! Matrices are initialized uniform in `±1/sqrt(fan_in)`; biases start at
//! zero.

use rand::Rng;

use super::params::{Bound, ParamSet};
use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

pub fn uniform_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (cols.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}

/// Registers `{prefix}.W` (`out x inp`) and `{prefix}.b` (`out`).
pub fn init_linear(
    ps: &mut ParamSet,
    prefix: &str,
    inp: usize,
    out: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    ps.insert(format!("{prefix}.W"), uniform_matrix(out, inp, rng))?;
    ps.insert(format!("{prefix}.b"), Tensor::zeros(&[out]))
}

/// `W x + b`.
pub fn linear(tape: &mut Tape, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{prefix}.W"))?;
    let b = p.var(&format!("{prefix}.b"))?;
    let wx = tape.matmul(w, x)?;
    tape.add(wx, b)
}

/// `W x + U h + b` for one gate.
fn gate(tape: &mut Tape, p: &Bound, prefix: &str, g: &str, x: Var, h: Var) -> Result<Var> {
    let w = p.var(&format!("{prefix}.W_{g}"))?;
    let u = p.var(&format!("{prefix}.U_{g}"))?;
    let b = p.var(&format!("{prefix}.b_{g}"))?;
    let wx = tape.matmul(w, x)?;
    let uh = tape.matmul(u, h)?;
    let s = tape.add(wx, uh)?;
    tape.add(s, b)
}

fn init_gates(
    ps: &mut ParamSet,
    prefix: &str,
    gates: &[&str],
    inp: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    for g in gates {
        ps.insert(format!("{prefix}.W_{g}"), uniform_matrix(hidden, inp, rng))?;
        ps.insert(format!("{prefix}.U_{g}"), uniform_matrix(hidden, hidden, rng))?;
        ps.insert(format!("{prefix}.b_{g}"), Tensor::zeros(&[hidden]))?;
    }
    Ok(())
}

pub const GRU_GATES: [&str; 3] = ["z", "r", "n"];
pub const LSTM_GATES: [&str; 4] = ["i", "f", "o", "g"];

pub fn init_gru(ps: &mut ParamSet, prefix: &str, inp: usize, hidden: usize, rng: &mut impl Rng) -> Result<()> {
    init_gates(ps, prefix, &GRU_GATES, inp, hidden, rng)
}

pub fn init_lstm(ps: &mut ParamSet, prefix: &str, inp: usize, hidden: usize, rng: &mut impl Rng) -> Result<()> {
    init_gates(ps, prefix, &LSTM_GATES, inp, hidden, rng)
}

fn check_state(tape: &Tape, p: &Bound, prefix: &str, first_gate: &str, x: Var, h: Var) -> Result<()> {
    let w = tape.shape(p.var(&format!("{prefix}.W_{first_gate}"))?).to_vec();
    let (hidden, inp) = (w[0], w[1]);
    if tape.shape(x) != [inp] {
        return Err(Error::shape("rnn input", tape.shape(x), &[inp]));
    }
    if tape.shape(h) != [hidden] {
        return Err(Error::shape("rnn state", tape.shape(h), &[hidden]));
    }
    Ok(())
}

/// GRU update:
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// n = tanh(W_n x + U_n (r ⊙ h) + b_n)
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
pub fn gru_cell(tape: &mut Tape, p: &Bound, prefix: &str, x: Var, h: Var) -> Result<Var> {
    check_state(tape, p, prefix, "z", x, h)?;
    let z = gate(tape, p, prefix, "z", x, h)?;
    let z = tape.sigmoid(z);
    let r = gate(tape, p, prefix, "r", x, h)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h)?;
    let n = gate(tape, p, prefix, "n", x, rh)?;
    let n = tape.tanh(n);
    // h' = n + z ⊙ (h - n)
    let diff = tape.sub(h, n)?;
    let zd = tape.mul(z, diff)?;
    tape.add(n, zd)
}

/// LSTM update with input, forget and output gates and a tanh candidate.
pub fn lstm_cell(tape: &mut Tape, p: &Bound, prefix: &str, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    check_state(tape, p, prefix, "i", x, h)?;
    if tape.shape(c) != tape.shape(h) {
        return Err(Error::shape("lstm cell state", tape.shape(c), tape.shape(h)));
    }
    let i = gate(tape, p, prefix, "i", x, h)?;
    let i = tape.sigmoid(i);
    let f = gate(tape, p, prefix, "f", x, h)?;
    let f = tape.sigmoid(f);
    let o = gate(tape, p, prefix, "o", x, h)?;
    let o = tape.sigmoid(o);
    let g = gate(tape, p, prefix, "g", x, h)?;
    let g = tape.tanh(g);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let tc = tape.tanh(c_new);
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c_new))
}
