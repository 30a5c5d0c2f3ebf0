//! Multi-layer LSTM (gate order input, forget, cell, output) with embedding
//! and inter-layer dropout.

use super::{Dropout, Encoder};
use crate::autograd::{Tape, Var};
use crate::tensor::Tensor;

pub(super) fn hidden<'a>(enc: &'a Encoder, tape: &mut Tape<'a>, ids: &[usize], dropout: &mut Option<Dropout>) -> Var {
    let cfg = enc.config();
    let tok = enc.param(tape, "embeddings.token");
    let x = tape.gather(tok, ids);
    let mut x = Dropout::apply(dropout, tape, x);
    for l in 0..cfg.num_layers {
        let width = cfg.recurrent_width(l);
        let w_in = enc.param(tape, &format!("layers.{l}.lstm.input.weight"));
        let w_hid = enc.param(tape, &format!("layers.{l}.lstm.hidden.weight"));
        let bias = enc.param(tape, &format!("layers.{l}.lstm.bias"));
        let pre = tape.linear(x, w_in, bias);
        let mut h = tape.leaf(Tensor::zeros(1, width));
        let mut c = tape.leaf(Tensor::zeros(1, width));
        let mut outputs = Vec::with_capacity(ids.len());
        for t in 0..ids.len() {
            let row = tape.select_rows(pre, &[t]);
            let rec = tape.matmul(h, w_hid);
            let gates = tape.add(row, rec);
            let i = tape.slice_cols(gates, 0, width);
            let f = tape.slice_cols(gates, width, width);
            let g = tape.slice_cols(gates, 2 * width, width);
            let o = tape.slice_cols(gates, 3 * width, width);
            let i = tape.sigmoid(i);
            let f = tape.sigmoid(f);
            let g = tape.tanh(g);
            let o = tape.sigmoid(o);
            let keep = tape.mul(f, c);
            let write = tape.mul(i, g);
            c = tape.add(keep, write);
            let tc = tape.tanh(c);
            h = tape.mul(o, tc);
            outputs.push(h);
        }
        x = tape.concat_rows(&outputs);
        if l + 1 < cfg.num_layers {
            x = Dropout::apply(dropout, tape, x);
        }
    }
    x
}
