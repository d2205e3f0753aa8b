//! Scaled dot-product multihead attention, composed from tape primitives.

use std::sync::Arc;

use super::{Real, SoftmaxMask, Tape, Var};

/// Projection parameters of one attention sublayer. All weights are
/// `[d, d]`, biases `[d]`.
#[derive(Debug, Clone, Copy)]
pub struct AttnParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Key-side mask: `allowed` holds `entries` rows of `[s]` booleans; the
/// attention batch must be a multiple of `entries` (row `bt` uses entry
/// `bt / (batch / entries)`). Queries at disallowed positions still run;
/// rows with no allowed key produce zero attention context.
#[derive(Debug, Clone)]
pub struct KeyMask {
    pub allowed: Arc<Vec<bool>>,
    pub entries: usize,
}

/// Standard multihead attention over `[batch, s, d]` inputs with `heads`
/// heads of dimension `d / heads` and an output projection.
pub fn multihead_attention<E: Real>(
    tape: &mut Tape<E>,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    heads: usize,
    params: &AttnParams,
    key_mask: Option<&KeyMask>,
) -> Var {
    let shape = tape.shape(q_in).to_vec();
    assert_eq!(shape.len(), 3, "attention: inputs must be [batch, s, d]");
    let (batch, s, d) = (shape[0], shape[1], shape[2]);
    assert_eq!(tape.shape(k_in), &[batch, s, d], "attention: k shape");
    assert_eq!(tape.shape(v_in), &[batch, s, d], "attention: v shape");
    assert!(heads > 0 && d % heads == 0, "attention: d % heads != 0");
    let dh = d / heads;

    let q = tape.linear(q_in, params.wq, Some(params.bq));
    let k = tape.linear(k_in, params.wk, Some(params.bk));
    let v = tape.linear(v_in, params.wv, Some(params.bv));

    // [batch, s, d] -> [batch*heads, s, dh]
    let split = |tape: &mut Tape<E>, x: Var| {
        let x = tape.reshape(x, &[batch, s, heads, dh]);
        let x = tape.transpose12(x); // [batch, heads, s, dh]
        tape.reshape(x, &[batch * heads, s, dh])
    };
    let q = split(tape, q);
    let k = split(tape, k);
    let v = split(tape, v);

    // scores = q @ k^T / sqrt(dh)
    let k4 = tape.reshape(k, &[batch * heads, s, dh, 1]);
    let kt4 = tape.transpose12(k4);
    let kt = tape.reshape(kt4, &[batch * heads, dh, s]);
    let scores = tape.batch_matmul(q, kt);
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());

    let mask = key_mask.map(|m| {
        assert_eq!(batch % m.entries, 0, "attention: mask entries divide batch");
        assert_eq!(m.allowed.len(), m.entries * s, "attention: mask length");
        SoftmaxMask {
            allowed: m.allowed.clone(),
            // score rows: [batch*heads*s]; one entry covers all rows of
            // (batch/entries) inputs, each with `heads * s` query rows.
            rows_per_entry: (batch / m.entries) * heads * s,
        }
    });
    let probs = tape.softmax_lastdim(scores, mask.as_ref());

    let ctx = tape.batch_matmul(probs, v); // [batch*heads, s, dh]
    let ctx = tape.reshape(ctx, &[batch, heads, s, dh]);
    let ctx = tape.transpose12(ctx); // [batch, s, heads, dh]
    let ctx = tape.reshape(ctx, &[batch, s, d]);

    tape.linear(ctx, params.wo, Some(params.bo))
}
