//! Mixer backbone: token + position embeddings, residual layers that combine
//! each position with an attention-pooled context, and a head tied to the
//! token embeddings. Only the `[MASK]` row is carried through the last layer.

use super::{Layout, MixLayer, Rendered, Source};
use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Embeds one rendered sequence as `[len, d]`.
fn embed(tape: &mut Tape, vars: &[Var], layout: &Layout, seq: &Rendered, soft: Option<Var>) -> Result<Var> {
    let mut pieces = Vec::new();
    let mut i = 0;
    let src = &seq.sources;
    while i < src.len() {
        let is_soft = matches!(src[i], Source::Soft(_));
        let mut ids = Vec::new();
        while i < src.len() && matches!(src[i], Source::Soft(_)) == is_soft {
            ids.push(match src[i] {
                Source::Token(t) | Source::Soft(t) => t,
            });
            i += 1;
        }
        let table = if is_soft {
            soft.expect("soft positions need encoded prompts")
        } else {
            vars[layout.tok_emb]
        };
        pieces.push(tape.index_rows(table, &ids)?);
    }
    let x = if pieces.len() == 1 {
        pieces[0]
    } else {
        tape.concat_rows(&pieces)?
    };
    let positions: Vec<usize> = (0..src.len()).collect();
    let pos = tape.index_rows(vars[layout.pos_emb], &positions)?;
    tape.add(x, pos)
}

/// Single-head attention of `rows` over the positions of `x`, values are `x` itself.
fn attend(tape: &mut Tape, vars: &[Var], layer: &MixLayer, rows: Var, x: Var) -> Result<Var> {
    let d = tape.value(x).shape()[1];
    let q = tape.matmul(rows, vars[layer.w_query])?;
    let k = tape.matmul(x, vars[layer.w_key])?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let weights = tape.softmax(scores)?;
    tape.matmul(weights, x)
}

/// `x + tanh(x W_tok + ctx W_ctx + b) W_back`, with `ctx` a row broadcast over `x` or a matching matrix.
fn mix(tape: &mut Tape, vars: &[Var], layer: &MixLayer, x: Var, ctx: Var) -> Result<Var> {
    let a = tape.matmul(x, vars[layer.w_tok])?;
    let c = tape.matmul(ctx, vars[layer.w_ctx])?;
    let a_rows = tape.value(a).shape()[0];
    let c = if tape.value(c).shape()[0] == a_rows {
        c
    } else {
        tape.broadcast_rows(c, a_rows)?
    };
    let pre = tape.add(a, c)?;
    let pre = tape.add_row(pre, vars[layer.bias])?;
    let h = tape.tanh(pre)?;
    let back = tape.matmul(h, vars[layer.w_back])?;
    tape.add(x, back)
}

pub(super) fn logits(
    tape: &mut Tape,
    vars: &[Var],
    layout: &Layout,
    batch: &[Rendered],
    soft: Option<Var>,
) -> Result<Var> {
    let depth = layout.mix.len();
    let mut mask_rows = Vec::with_capacity(batch.len());
    let mut contexts = Vec::with_capacity(batch.len());
    for seq in batch {
        let mut x = embed(tape, vars, layout, seq, soft)?;
        for layer in layout.mix.iter().take(depth.saturating_sub(1)) {
            let ctx = attend(tape, vars, layer, x, x)?;
            x = mix(tape, vars, layer, x, ctx)?;
        }
        let row = tape.index_rows(x, &[seq.mask_pos])?;
        if let Some(last) = layout.mix.last() {
            contexts.push(attend(tape, vars, last, row, x)?);
        }
        mask_rows.push(row);
    }
    let stack = |tape: &mut Tape, rows: &[Var]| {
        if rows.len() == 1 {
            Ok(rows[0])
        } else {
            tape.concat_rows(rows)
        }
    };
    let mut h = stack(tape, &mask_rows)?;
    if let Some(last) = layout.mix.last() {
        let ctx = stack(tape, &contexts)?;
        h = mix(tape, vars, last, h, ctx)?;
    }
    let out = tape.matmul(h, vars[layout.head_w])?;
    let out = tape.add_row(out, vars[layout.head_b])?;
    let out = tape.tanh(out)?;
    let emb_t = tape.transpose(vars[layout.tok_emb])?;
    let logits = tape.matmul(out, emb_t)?;
    tape.add_row(logits, vars[layout.vocab_bias])
}
