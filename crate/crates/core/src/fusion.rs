//! State processing: query encoding, window pooling and the two fusion
//! variants.
//!
//! * Gated attention: `att = σ(W x_L + b)`, `s = att ⊙ x_M`.
//! * Concat baseline: `x'_M = σ(W_s x_M + b_s) ⊙ x_M`,
//!   `s = P [x'_M ; x_L] + b_P`.

use crate::data::{FeatureVideo, UNK_ID};
use crate::env::Window;
use crate::error::{Error, Result};
use crate::ndcore::layers::{gru_cell, linear};
use crate::ndcore::{Bound, Tape, Tensor, Var};

pub const EMBED: &str = "query.embed";
pub const QUERY_GRU: &str = "query.gru";
pub const GATE: &str = "fusion.gate";
pub const SELF_GATE: &str = "fusion.self";
pub const PROJ: &str = "fusion.proj";

/// Embeds tokens and runs the GRU left to right from a zero state; the
/// final hidden state is the query encoding `x_L`. Ids outside the
/// embedding table map to the unknown-word row.
pub fn encode_query(tape: &mut Tape, p: &Bound, tokens: &[usize]) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Invalid("empty query".into()));
    }
    let table = p.var(EMBED)?;
    let vocab = tape.shape(table)[0];
    let hidden = tape.shape(p.var(&format!("{QUERY_GRU}.U_z"))?)[0];
    let mut h = tape.constant(Tensor::zeros(&[hidden]));
    for &id in tokens {
        let id = if id < vocab { id } else { UNK_ID };
        let x = tape.row(table, id)?;
        h = gru_cell(tape, p, QUERY_GRU, x, h)?;
    }
    Ok(h)
}

/// Mean of the feature units overlapping `window`.
pub fn pool_window_features(video: &FeatureVideo, window: Window) -> Result<Vec<f64>> {
    if window.end() > video.frames {
        return Err(Error::Invalid(format!(
            "window {window} outside video of {} frames",
            video.frames
        )));
    }
    let units = video.timeline().units_overlapping(window);
    let n = units.len();
    if n == 0 {
        return Err(Error::Invalid(format!("window {window} covers no feature units")));
    }
    let mut acc = vec![0.0; video.dim()];
    for u in units {
        for (a, &v) in acc.iter_mut().zip(video.unit(u)) {
            *a += v as f64;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

/// Query-conditioned sigmoid gate `σ(W x_L + b)`.
pub fn attention_gate(tape: &mut Tape, p: &Bound, x_l: Var) -> Result<Var> {
    let z = linear(tape, p, GATE, x_l)?;
    Ok(tape.sigmoid(z))
}

pub fn gated_fuse(tape: &mut Tape, p: &Bound, x_m: Var, x_l: Var) -> Result<Var> {
    let att = attention_gate(tape, p, x_l)?;
    if tape.shape(att) != tape.shape(x_m) {
        return Err(Error::shape("gated_fuse", tape.shape(att), tape.shape(x_m)));
    }
    tape.mul(att, x_m)
}

pub fn concat_fuse(tape: &mut Tape, p: &Bound, x_m: Var, x_l: Var) -> Result<Var> {
    let g = linear(tape, p, SELF_GATE, x_m)?;
    let g = tape.sigmoid(g);
    let gated = tape.mul(g, x_m)?;
    let joint = tape.concat(&[gated, x_l])?;
    linear(tape, p, PROJ, joint)
}
