//! Post-norm transformer encoder: learned absolute positions, multi-head
//! scaled dot-product attention, GELU feed-forward.

use super::{Dropout, Encoder};
use crate::autograd::{Tape, Var};

pub(super) fn hidden<'a>(
    enc: &'a Encoder,
    tape: &mut Tape<'a>,
    ids: &[usize],
    visible: &[bool],
    dropout: &mut Option<Dropout>,
) -> Var {
    let cfg = enc.config();
    let n = ids.len();
    let heads = cfg.num_heads;
    let head_dim = cfg.hidden_size / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let tok = enc.param(tape, "embeddings.token");
    let pos = enc.param(tape, "embeddings.position");
    let positions: Vec<usize> = (0..n).collect();
    let x = tape.gather(tok, ids);
    let p = tape.gather(pos, &positions);
    let x = tape.add(x, p);
    let (g, b) = (enc.param(tape, "embeddings.norm.gain"), enc.param(tape, "embeddings.norm.bias"));
    let x = tape.layer_norm(x, g, b);
    let mut x = Dropout::apply(dropout, tape, x);

    for l in 0..cfg.num_layers {
        let proj = |tape: &mut Tape<'a>, x: Var, name: &str| {
            let w = enc.param(tape, &format!("layers.{l}.attn.{name}.weight"));
            let b = enc.param(tape, &format!("layers.{l}.attn.{name}.bias"));
            tape.linear(x, w, b)
        };
        let q = proj(tape, x, "query");
        let k = proj(tape, x, "key");
        let v = proj(tape, x, "value");
        let mut contexts = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim);
            let kh = tape.slice_cols(k, h * head_dim, head_dim);
            let vh = tape.slice_cols(v, h * head_dim, head_dim);
            let scores = tape.matmul_bt(qh, kh);
            let scores = tape.scale(scores, scale);
            let probs = tape.masked_softmax(scores, visible.to_vec());
            contexts.push(tape.matmul(probs, vh));
        }
        let ctx = if heads == 1 { contexts[0] } else { tape.concat_cols(&contexts) };
        let attn = proj(tape, ctx, "output");
        let attn = Dropout::apply(dropout, tape, attn);
        let res = tape.add(x, attn);
        let g = enc.param(tape, &format!("layers.{l}.attn_norm.gain"));
        let b = enc.param(tape, &format!("layers.{l}.attn_norm.bias"));
        let x1 = tape.layer_norm(res, g, b);

        let w_in = enc.param(tape, &format!("layers.{l}.ffn.in.weight"));
        let b_in = enc.param(tape, &format!("layers.{l}.ffn.in.bias"));
        let w_out = enc.param(tape, &format!("layers.{l}.ffn.out.weight"));
        let b_out = enc.param(tape, &format!("layers.{l}.ffn.out.bias"));
        let f = tape.linear(x1, w_in, b_in);
        let f = tape.gelu(f);
        let f = tape.linear(f, w_out, b_out);
        let f = Dropout::apply(dropout, tape, f);
        let res = tape.add(x1, f);
        let g = enc.param(tape, &format!("layers.{l}.ffn_norm.gain"));
        let b = enc.param(tape, &format!("layers.{l}.ffn_norm.bias"));
        x = tape.layer_norm(res, g, b);
    }
    debug_assert_eq!(tape.value(x).rows(), n);
    x
}
