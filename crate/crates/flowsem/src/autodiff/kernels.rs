//! Forward/backward numerical kernels behind the tape operations.
//!
//! Large matmuls parallelize over disjoint output rows with rayon; every
//! element is still computed by a fixed sequential inner loop, so results
//! are bit-identical regardless of thread count.

use rayon::prelude::*;

use super::{EmbedSpec, Real, SoftmaxMask};

/// Work threshold (multiply-accumulate count) above which matmuls go wide.
const PAR_THRESHOLD: usize = 1 << 16;

pub(super) fn zip<E: Real>(a: &[E], b: &[E], f: impl Fn(E, E) -> E) -> Vec<E> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

// -- gelu (tanh approximation) ------------------------------------------------

pub(super) fn gelu<E: Real>(x: E) -> E {
    let c = E::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = E::from_f64(0.044_715);
    let half = E::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (E::ONE + u.tanh())
}

pub(super) fn gelu_grad<E: Real>(x: E) -> E {
    let c = E::from_f64(0.797_884_560_802_865_4);
    let a = E::from_f64(0.044_715);
    let half = E::from_f64(0.5);
    let three = E::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = E::ONE - t * t;
    half * (E::ONE + t) + half * x * sech2 * c * (E::ONE + three * a * x * x)
}

// -- matmul --------------------------------------------------------------------

/// `x: [m, k] @ w: [k, n] (+ bias[n])`.
pub(super) fn matmul<E: Real>(
    x: &[E],
    w: &[E],
    bias: Option<&[E]>,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<E> {
    let mut out = vec![E::ZERO; m * n];
    let row = |out_row: &mut [E], xi: &[E]| {
        if let Some(b) = bias {
            out_row.copy_from_slice(b);
        }
        for (p, &xv) in xi.iter().enumerate() {
            let wrow = &w[p * n..(p + 1) * n];
            for (o, &wv) in out_row.iter_mut().zip(wrow) {
                *o = *o + xv * wv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n)
            .zip(x.par_chunks(k))
            .for_each(|(o, xi)| row(o, xi));
    } else {
        for (o, xi) in out.chunks_mut(n).zip(x.chunks(k)) {
            row(o, xi);
        }
    }
    out
}

/// Returns `(dx, dw, db)` for `y = x @ w + b`.
pub(super) fn linear_backward<E: Real>(
    dy: &[E],
    x: &[E],
    w: &[E],
    m: usize,
    k: usize,
    n: usize,
    want_bias: bool,
) -> (Vec<E>, Vec<E>, Option<Vec<E>>) {
    // dx[m,k] = dy[m,n] @ w^T[n,k]
    let mut dx = vec![E::ZERO; m * k];
    let dx_row = |o: &mut [E], dyr: &[E]| {
        for (p, slot) in o.iter_mut().enumerate() {
            let wrow = &w[p * n..(p + 1) * n];
            let mut acc = E::ZERO;
            for (&g, &wv) in dyr.iter().zip(wrow) {
                acc = acc + g * wv;
            }
            *slot = acc;
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        dx.par_chunks_mut(k)
            .zip(dy.par_chunks(n))
            .for_each(|(o, dyr)| dx_row(o, dyr));
    } else {
        for (o, dyr) in dx.chunks_mut(k).zip(dy.chunks(n)) {
            dx_row(o, dyr);
        }
    }

    // dw[k,n] = x^T[k,m] @ dy[m,n]; parallel over dw rows (fixed inner order).
    let mut dw = vec![E::ZERO; k * n];
    let dw_row = |p: usize, o: &mut [E]| {
        for (xrow, dyr) in x.chunks(k).zip(dy.chunks(n)) {
            let xv = xrow[p];
            for (slot, &g) in o.iter_mut().zip(dyr) {
                *slot = *slot + xv * g;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        dw.par_chunks_mut(n)
            .enumerate()
            .for_each(|(p, o)| dw_row(p, o));
    } else {
        for (p, o) in dw.chunks_mut(n).enumerate() {
            dw_row(p, o);
        }
    }

    let db = want_bias.then(|| {
        let mut db = vec![E::ZERO; n];
        for dyr in dy.chunks(n) {
            for (slot, &g) in db.iter_mut().zip(dyr) {
                *slot = *slot + g;
            }
        }
        db
    });
    (dx, dw, db)
}

pub(super) fn batch_matmul<E: Real>(
    a: &[E],
    b: &[E],
    g: usize,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<E> {
    let mut out = vec![E::ZERO; g * m * n];
    let one_group = |og: &mut [E], ag: &[E], bg: &[E]| {
        for i in 0..m {
            let arow = &ag[i * k..(i + 1) * k];
            let orow = &mut og[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                let brow = &bg[p * n..(p + 1) * n];
                for (slot, &bv) in orow.iter_mut().zip(brow) {
                    *slot = *slot + av * bv;
                }
            }
        }
    };
    if g * m * k * n >= PAR_THRESHOLD && g > 1 {
        out.par_chunks_mut(m * n)
            .zip(a.par_chunks(m * k).zip(b.par_chunks(k * n)))
            .for_each(|(og, (ag, bg))| one_group(og, ag, bg));
    } else {
        for ((og, ag), bg) in out.chunks_mut(m * n).zip(a.chunks(m * k)).zip(b.chunks(k * n)) {
            one_group(og, ag, bg);
        }
    }
    out
}

pub(super) fn batch_matmul_backward<E: Real>(
    dy: &[E],
    a: &[E],
    b: &[E],
    g: usize,
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<E>, Vec<E>) {
    let mut da = vec![E::ZERO; g * m * k];
    let mut db = vec![E::ZERO; g * k * n];
    let one_group = |dag: &mut [E], dbg: &mut [E], dyg: &[E], ag: &[E], bg: &[E]| {
        // dA = dY @ B^T
        for i in 0..m {
            let dyr = &dyg[i * n..(i + 1) * n];
            let dar = &mut dag[i * k..(i + 1) * k];
            for (p, slot) in dar.iter_mut().enumerate() {
                let brow = &bg[p * n..(p + 1) * n];
                let mut acc = E::ZERO;
                for (&gv, &bv) in dyr.iter().zip(brow) {
                    acc = acc + gv * bv;
                }
                *slot = acc;
            }
        }
        // dB = A^T @ dY
        for i in 0..m {
            let arow = &ag[i * k..(i + 1) * k];
            let dyr = &dyg[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                let dbr = &mut dbg[p * n..(p + 1) * n];
                for (slot, &gv) in dbr.iter_mut().zip(dyr) {
                    *slot = *slot + av * gv;
                }
            }
        }
    };
    if g * m * k * n >= PAR_THRESHOLD && g > 1 {
        da.par_chunks_mut(m * k)
            .zip(db.par_chunks_mut(k * n))
            .zip(dy.par_chunks(m * n).zip(a.par_chunks(m * k).zip(b.par_chunks(k * n))))
            .for_each(|((dag, dbg), (dyg, (ag, bg)))| one_group(dag, dbg, dyg, ag, bg));
    } else {
        for gi in 0..g {
            let (dag, dbg) = (
                &mut da[gi * m * k..(gi + 1) * m * k],
                &mut db[gi * k * n..(gi + 1) * k * n],
            );
            one_group(
                dag,
                dbg,
                &dy[gi * m * n..(gi + 1) * m * n],
                &a[gi * m * k..(gi + 1) * m * k],
                &b[gi * k * n..(gi + 1) * k * n],
            );
        }
    }
    (da, db)
}

pub(super) fn transpose12<E: Real>(x: &[E], dims: [usize; 4]) -> Vec<E> {
    let [d0, d1, d2, d3] = dims;
    let mut out = vec![E::ZERO; x.len()];
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                let src = ((i0 * d1 + i1) * d2 + i2) * d3;
                let dst = ((i0 * d2 + i2) * d1 + i1) * d3;
                out[dst..dst + d3].copy_from_slice(&x[src..src + d3]);
            }
        }
    }
    out
}

// -- layer norm ------------------------------------------------------------------

pub(super) fn layer_norm<E: Real>(x: &[E], gain: &[E], bias: &[E], d: usize, eps: f64) -> Vec<E> {
    let mut out = vec![E::ZERO; x.len()];
    let inv_d = E::from_f64(1.0 / d as f64);
    let eps = E::from_f64(eps);
    for (orow, xrow) in out.chunks_mut(d).zip(x.chunks(d)) {
        let mut mean = E::ZERO;
        for &v in xrow {
            mean = mean + v;
        }
        mean = mean * inv_d;
        let mut var = E::ZERO;
        for &v in xrow {
            let c = v - mean;
            var = var + c * c;
        }
        var = var * inv_d;
        let rstd = E::ONE / (var + eps).sqrt();
        for ((o, &v), (&g, &b)) in orow.iter_mut().zip(xrow).zip(gain.iter().zip(bias)) {
            *o = (v - mean) * rstd * g + b;
        }
    }
    out
}

pub(super) fn layer_norm_backward<E: Real>(
    dy: &[E],
    x: &[E],
    gain: &[E],
    d: usize,
    eps: f64,
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let mut dx = vec![E::ZERO; x.len()];
    let mut dgain = vec![E::ZERO; d];
    let mut dbias = vec![E::ZERO; d];
    let inv_d = E::from_f64(1.0 / d as f64);
    let eps = E::from_f64(eps);
    for ((dxrow, xrow), dyrow) in dx.chunks_mut(d).zip(x.chunks(d)).zip(dy.chunks(d)) {
        let mut mean = E::ZERO;
        for &v in xrow {
            mean = mean + v;
        }
        mean = mean * inv_d;
        let mut var = E::ZERO;
        for &v in xrow {
            let c = v - mean;
            var = var + c * c;
        }
        var = var * inv_d;
        let rstd = E::ONE / (var + eps).sqrt();

        // dxhat = dy * gain; dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        let mut mean_dxhat = E::ZERO;
        let mut mean_dxhat_xhat = E::ZERO;
        for (i, (&g, &v)) in dyrow.iter().zip(xrow).enumerate() {
            let xhat = (v - mean) * rstd;
            let dxhat = g * gain[i];
            mean_dxhat = mean_dxhat + dxhat;
            mean_dxhat_xhat = mean_dxhat_xhat + dxhat * xhat;
            dgain[i] = dgain[i] + g * xhat;
            dbias[i] = dbias[i] + g;
        }
        mean_dxhat = mean_dxhat * inv_d;
        mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
        for (i, slot) in dxrow.iter_mut().enumerate() {
            let xhat = (xrow[i] - mean) * rstd;
            let dxhat = dyrow[i] * gain[i];
            *slot = rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
        }
    }
    (dx, dgain, dbias)
}

// -- softmax ------------------------------------------------------------------------

pub(super) fn softmax<E: Real>(x: &[E], dim: usize, mask: Option<&SoftmaxMask>) -> Vec<E> {
    let mut out = vec![E::ZERO; x.len()];
    for (r, (orow, xrow)) in out.chunks_mut(dim).zip(x.chunks(dim)).enumerate() {
        let allowed_row = mask.map(|m| {
            let entry = r / m.rows_per_entry;
            &m.allowed[entry * dim..(entry + 1) * dim]
        });
        let allow = |j: usize| allowed_row.map_or(true, |a| a[j]);

        let mut max: Option<E> = None;
        for (j, &v) in xrow.iter().enumerate() {
            if allow(j) {
                max = Some(match max {
                    Some(m) => m.maximum(v),
                    None => v,
                });
            }
        }
        let Some(max) = max else {
            continue; // fully masked row stays zero
        };
        let mut total = E::ZERO;
        for (j, (&v, o)) in xrow.iter().zip(orow.iter_mut()).enumerate() {
            if allow(j) {
                let e = (v - max).exp();
                *o = e;
                total = total + e;
            }
        }
        for o in orow.iter_mut() {
            *o = *o / total;
        }
    }
    out
}

pub(super) fn softmax_backward<E: Real>(dy: &[E], y: &[E], dim: usize) -> Vec<E> {
    let mut dx = vec![E::ZERO; y.len()];
    for ((dxrow, yrow), dyrow) in dx.chunks_mut(dim).zip(y.chunks(dim)).zip(dy.chunks(dim)) {
        let mut dot = E::ZERO;
        for (&g, &v) in dyrow.iter().zip(yrow) {
            dot = dot + g * v;
        }
        for ((slot, &g), &v) in dxrow.iter_mut().zip(dyrow).zip(yrow) {
            *slot = v * (g - dot);
        }
    }
    dx
}

// -- pooling ----------------------------------------------------------------------------

pub(super) fn mean_pool<E: Real>(x: &[E], valid: &[bool], dims: [usize; 4]) -> Vec<E> {
    let [b, t, n, d] = dims;
    let mut out = vec![E::ZERO; b * d];
    for bi in 0..b {
        let count = valid[bi * t..(bi + 1) * t].iter().filter(|&&v| v).count();
        if count == 0 {
            continue;
        }
        let orow = &mut out[bi * d..(bi + 1) * d];
        for ti in 0..t {
            if !valid[bi * t + ti] {
                continue;
            }
            for ni in 0..n {
                let base = ((bi * t + ti) * n + ni) * d;
                for (slot, &v) in orow.iter_mut().zip(&x[base..base + d]) {
                    *slot = *slot + v;
                }
            }
        }
        let inv = E::from_f64(1.0 / (count * n) as f64);
        for slot in orow.iter_mut() {
            *slot = *slot * inv;
        }
    }
    out
}

pub(super) fn mean_pool_backward<E: Real>(dz: &[E], valid: &[bool], dims: [usize; 4]) -> Vec<E> {
    let [b, t, n, d] = dims;
    let mut dx = vec![E::ZERO; b * t * n * d];
    for bi in 0..b {
        let count = valid[bi * t..(bi + 1) * t].iter().filter(|&&v| v).count();
        if count == 0 {
            continue;
        }
        let inv = E::from_f64(1.0 / (count * n) as f64);
        let dzrow = &dz[bi * d..(bi + 1) * d];
        for ti in 0..t {
            if !valid[bi * t + ti] {
                continue;
            }
            for ni in 0..n {
                let base = ((bi * t + ti) * n + ni) * d;
                for (slot, &g) in dx[base..base + d].iter_mut().zip(dzrow) {
                    *slot = g * inv;
                }
            }
        }
    }
    dx
}

// -- FSU embedding / decoding ----------------------------------------------------------

pub(super) fn embed<E: Real>(
    x: &[E],
    w: &[E],
    b: &[E],
    mask_token: &[E],
    fsu_pos: &[E],
    time_pos: &[E],
    spec: &EmbedSpec,
) -> Vec<E> {
    let (bb, t, n, d) = (spec.batch, spec.t, spec.n, spec.dim);
    let mut out = vec![E::ZERO; bb * t * n * d];
    let work = |obatch: &mut [E], bi: usize| {
        for ti in 0..t {
            let qrow = &time_pos[ti * d..(ti + 1) * d];
            for ni in 0..n {
                let cell = (bi * t + ti) * n + ni;
                let orow = &mut obatch[(ti * n + ni) * d..(ti * n + ni + 1) * d];
                let prow = &fsu_pos[ni * d..(ni + 1) * d];
                if spec.input_mask[cell] {
                    for (((o, &m), &p), &q) in
                        orow.iter_mut().zip(mask_token).zip(prow).zip(qrow)
                    {
                        *o = m + p + q;
                    }
                } else {
                    let k = spec.index_map[ni];
                    let xv = x[cell];
                    let wrow = &w[k * d..(k + 1) * d];
                    let brow = &b[k * d..(k + 1) * d];
                    for ((((o, &wv), &bv), &p), &q) in orow
                        .iter_mut()
                        .zip(wrow)
                        .zip(brow)
                        .zip(prow)
                        .zip(qrow)
                    {
                        *o = wv * xv + bv + p + q;
                    }
                }
            }
        }
    };
    if bb * t * n * d >= PAR_THRESHOLD && bb > 1 {
        out.par_chunks_mut(t * n * d)
            .enumerate()
            .for_each(|(bi, ob)| work(ob, bi));
    } else {
        for (bi, ob) in out.chunks_mut(t * n * d).enumerate() {
            work(ob, bi);
        }
    }
    out
}

pub(super) struct EmbedGrads<E> {
    pub dx: Vec<E>,
    pub dw: Vec<E>,
    pub db: Vec<E>,
    pub dmask: Vec<E>,
    pub dfsu: Vec<E>,
    pub dtime: Vec<E>,
}

pub(super) fn embed_backward<E: Real>(
    dy: &[E],
    x: &[E],
    w: &[E],
    k: usize,
    spec: &EmbedSpec,
) -> EmbedGrads<E> {
    let (bb, t, n, d) = (spec.batch, spec.t, spec.n, spec.dim);
    let mut g = EmbedGrads {
        dx: vec![E::ZERO; bb * t * n],
        dw: vec![E::ZERO; k * d],
        db: vec![E::ZERO; k * d],
        dmask: vec![E::ZERO; d],
        dfsu: vec![E::ZERO; n * d],
        dtime: vec![E::ZERO; t * d],
    };
    for bi in 0..bb {
        for ti in 0..t {
            for ni in 0..n {
                let cell = (bi * t + ti) * n + ni;
                let grow = &dy[cell * d..(cell + 1) * d];
                for (slot, &gv) in g.dfsu[ni * d..(ni + 1) * d].iter_mut().zip(grow) {
                    *slot = *slot + gv;
                }
                for (slot, &gv) in g.dtime[ti * d..(ti + 1) * d].iter_mut().zip(grow) {
                    *slot = *slot + gv;
                }
                if spec.input_mask[cell] {
                    for (slot, &gv) in g.dmask.iter_mut().zip(grow) {
                        *slot = *slot + gv;
                    }
                } else {
                    let ki = spec.index_map[ni];
                    let xv = x[cell];
                    let wrow = &w[ki * d..(ki + 1) * d];
                    let mut acc = E::ZERO;
                    for ((dwv, dbv), (&gv, &wv)) in g.dw[ki * d..(ki + 1) * d]
                        .iter_mut()
                        .zip(g.db[ki * d..(ki + 1) * d].iter_mut())
                        .zip(grow.iter().zip(wrow))
                    {
                        *dwv = *dwv + gv * xv;
                        *dbv = *dbv + gv;
                        acc = acc + gv * wv;
                    }
                    g.dx[cell] = acc;
                }
            }
        }
    }
    g
}

pub(super) fn decode_heads<E: Real>(h: &[E], w: &[E], c: &[E], dims: [usize; 4]) -> Vec<E> {
    let [b, t, n, d] = dims;
    let mut out = vec![E::ZERO; b * t * n];
    for (cell, slot) in out.iter_mut().enumerate() {
        let ni = cell % n;
        let hrow = &h[cell * d..(cell + 1) * d];
        let wrow = &w[ni * d..(ni + 1) * d];
        let mut acc = c[ni];
        for (&hv, &wv) in hrow.iter().zip(wrow) {
            acc = acc + hv * wv;
        }
        *slot = acc;
    }
    let _ = (b, t);
    out
}

pub(super) fn decode_heads_backward<E: Real>(
    dy: &[E],
    h: &[E],
    w: &[E],
    dims: [usize; 4],
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let [b, t, n, d] = dims;
    let mut dh = vec![E::ZERO; b * t * n * d];
    let mut dw = vec![E::ZERO; n * d];
    let mut dc = vec![E::ZERO; n];
    for (cell, &g) in dy.iter().enumerate() {
        let ni = cell % n;
        let wrow = &w[ni * d..(ni + 1) * d];
        let hrow = &h[cell * d..(cell + 1) * d];
        for ((slot, &wv), _) in dh[cell * d..(cell + 1) * d]
            .iter_mut()
            .zip(wrow)
            .zip(hrow)
        {
            *slot = g * wv;
        }
        for (slot, &hv) in dw[ni * d..(ni + 1) * d].iter_mut().zip(hrow) {
            *slot = *slot + g * hv;
        }
        dc[ni] = dc[ni] + g;
    }
    (dh, dw, dc)
}

// -- cross entropy ---------------------------------------------------------------------

pub(super) fn cross_entropy<E: Real>(logits: &[E], labels: &[usize], b: usize, c: usize) -> E {
    let mut total = E::ZERO;
    for (bi, &label) in labels.iter().enumerate() {
        let row = &logits[bi * c..(bi + 1) * c];
        let mut max = row[0];
        for &v in row {
            max = max.maximum(v);
        }
        let mut denom = E::ZERO;
        for &v in row {
            denom = denom + (v - max).exp();
        }
        total = total + denom.ln() - (row[label] - max);
    }
    total / E::from_f64(b as f64)
}

pub(super) fn cross_entropy_backward<E: Real>(
    dy: &[E],
    logits: &[E],
    labels: &[usize],
    b: usize,
    c: usize,
) -> Vec<E> {
    let g = dy[0] / E::from_f64(b as f64);
    let mut dl = vec![E::ZERO; logits.len()];
    for (bi, &label) in labels.iter().enumerate() {
        let row = &logits[bi * c..(bi + 1) * c];
        let mut max = row[0];
        for &v in row {
            max = max.maximum(v);
        }
        let mut denom = E::ZERO;
        for &v in row {
            denom = denom + (v - max).exp();
        }
        let drow = &mut dl[bi * c..(bi + 1) * c];
        for (j, (slot, &v)) in drow.iter_mut().zip(row).enumerate() {
            let p = (v - max).exp() / denom;
            let indicator = if j == label { E::ONE } else { E::ZERO };
            *slot = g * (p - indicator);
        }
    }
    dl
}
