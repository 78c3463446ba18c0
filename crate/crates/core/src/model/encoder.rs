//! Soft prompt encoder: stacked bidirectional LSTM followed by a two-layer
//! MLP, added back onto the raw soft-token embeddings.

use super::{Encoder, Gate, LstmDir};
use crate::autodiff::{Tape, Var};
use crate::error::Result;

fn gate_pre(tape: &mut Tape, vars: &[Var], gate: &Gate, x: &[Var], h: Option<Var>) -> Result<Var> {
    let mut acc = tape.matmul(x[0], vars[gate.w_in[0]])?;
    for (part, &w) in x.iter().zip(&gate.w_in).skip(1) {
        let t = tape.matmul(*part, vars[w])?;
        acc = tape.add(acc, t)?;
    }
    if let Some(h) = h {
        let t = tape.matmul(h, vars[gate.w_hid])?;
        acc = tape.add(acc, t)?;
    }
    tape.add(acc, vars[gate.bias])
}

/// Runs one direction over `inputs` (one row-vector list per position) in the given order.
fn run_direction(
    tape: &mut Tape,
    vars: &[Var],
    dir: &LstmDir,
    inputs: &[Vec<Var>],
    order: impl Iterator<Item = usize>,
) -> Result<Vec<Option<Var>>> {
    let mut out = vec![None; inputs.len()];
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    for t in order {
        let x = &inputs[t];
        let i = gate_pre(tape, vars, &dir.input, x, h)?;
        let i = tape.sigmoid(i)?;
        let g = gate_pre(tape, vars, &dir.cell, x, h)?;
        let g = tape.tanh(g)?;
        let ig = tape.mul(i, g)?;
        let c_new = match c {
            // Zero initial cell state: the forget-gate term vanishes at the first step.
            None => ig,
            Some(c_prev) => {
                let f = gate_pre(tape, vars, &dir.forget, x, h)?;
                let f = tape.sigmoid(f)?;
                let fc = tape.mul(f, c_prev)?;
                tape.add(fc, ig)?
            }
        };
        let o = gate_pre(tape, vars, &dir.output, x, h)?;
        let o = tape.sigmoid(o)?;
        let tc = tape.tanh(c_new)?;
        let h_new = tape.mul(o, tc)?;
        out[t] = Some(h_new);
        h = Some(h_new);
        c = Some(c_new);
    }
    Ok(out)
}

pub(super) fn encode(tape: &mut Tape, vars: &[Var], enc: &Encoder) -> Result<Var> {
    let raw = vars[enc.raw];
    let (m, _) = tape.value(raw).dims2("encode_soft_prompts")?;
    let mut inputs: Vec<Vec<Var>> = (0..m)
        .map(|t| tape.index_rows(raw, &[t]).map(|r| vec![r]))
        .collect::<Result<_>>()?;
    for [fwd, bwd] in &enc.layers {
        let f = run_direction(tape, vars, fwd, &inputs, 0..m)?;
        let b = run_direction(tape, vars, bwd, &inputs, (0..m).rev())?;
        inputs = f
            .into_iter()
            .zip(b)
            .map(|(f, b)| vec![f.expect("visited"), b.expect("visited")])
            .collect();
    }
    let hf: Vec<Var> = inputs.iter().map(|x| x[0]).collect();
    let hb: Vec<Var> = inputs.iter().map(|x| x[1]).collect();
    let hf = if m == 1 { hf[0] } else { tape.concat_rows(&hf)? };
    let hb = if m == 1 { hb[0] } else { tape.concat_rows(&hb)? };
    let a = tape.matmul(hf, vars[enc.mlp_in[0]])?;
    let b = tape.matmul(hb, vars[enc.mlp_in[1]])?;
    let pre = tape.add(a, b)?;
    let pre = tape.add_row(pre, vars[enc.mlp_b1])?;
    let hidden = tape.tanh(pre)?;
    let out = tape.matmul(hidden, vars[enc.mlp_w2])?;
    let out = tape.add_row(out, vars[enc.mlp_b2])?;
    tape.add(raw, out)
}
