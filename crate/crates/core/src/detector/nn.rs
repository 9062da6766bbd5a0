//! Forward passes with cached activations and their hand-written backward
//! passes.

use alloc::vec;
use alloc::vec::Vec;

use super::params::{Attention, BiGru, Classifier, GruDir};
use crate::linalg::{dot, gemv_acc, gemv_t_acc, outer_acc, sigmoid};

#[derive(Debug, Clone)]
pub struct GruStep {
    pub hp: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    /// `r ⊙ h_prev`, the input to `U_h`.
    pub rh: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn gru_step(p: &GruDir, x: &[f64], hp: &[f64]) -> GruStep {
    let (i, h) = (p.input, p.hidden);
    let gate = |w: &[f64], u: &[f64], b: &[f64], hv: &[f64]| {
        let mut a = b.to_vec();
        gemv_acc(w, i, x, &mut a);
        gemv_acc(u, h, hv, &mut a);
        a
    };
    let z: Vec<f64> = gate(&p.w_z, &p.u_z, &p.b_z, hp).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate(&p.w_r, &p.u_r, &p.b_r, hp).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(hp).map(|(a, b)| a * b).collect();
    let n: Vec<f64> = gate(&p.w_h, &p.u_h, &p.b_h, &rh).into_iter().map(libm::tanh).collect();
    let hn = (0..h).map(|k| (1.0 - z[k]) * hp[k] + z[k] * n[k]).collect();
    GruStep {
        hp: hp.to_vec(),
        z,
        r,
        n,
        rh,
        h: hn,
    }
}

/// Runs one direction over `xs`; steps are returned in processing order.
pub fn gru_run(p: &GruDir, xs: &[Vec<f64>], reverse: bool) -> Vec<GruStep> {
    let mut h = vec![0.0; p.hidden];
    let mut steps = Vec::with_capacity(xs.len());
    let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
    for t in order {
        let s = gru_step(p, &xs[t], &h);
        h.clone_from(&s.h);
        steps.push(s);
    }
    steps
}

/// BPTT for one direction. `dh` holds the loss gradient on each step's
/// output (processing order); `dxs` receives input gradients in the same
/// order.
pub fn gru_backward(p: &GruDir, xs: &[&[f64]], steps: &[GruStep], dh: &[Vec<f64>], g: &mut GruDir, dxs: &mut [Vec<f64>]) {
    let (i, h) = (p.input, p.hidden);
    let mut carry = vec![0.0; h];
    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        let x = xs[t];
        let dht: Vec<f64> = dh[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
        let mut dhp: Vec<f64> = (0..h).map(|k| dht[k] * (1.0 - s.z[k])).collect();

        let dan: Vec<f64> = (0..h).map(|k| dht[k] * s.z[k] * (1.0 - s.n[k] * s.n[k])).collect();
        let daz: Vec<f64> = (0..h).map(|k| dht[k] * (s.n[k] - s.hp[k]) * s.z[k] * (1.0 - s.z[k])).collect();

        outer_acc(&mut g.w_h, i, &dan, x);
        outer_acc(&mut g.u_h, h, &dan, &s.rh);
        add_into(&mut g.b_h, &dan);
        let mut drh = vec![0.0; h];
        gemv_t_acc(&p.u_h, h, &dan, &mut drh);
        let dar: Vec<f64> = (0..h).map(|k| drh[k] * s.hp[k] * s.r[k] * (1.0 - s.r[k])).collect();
        for k in 0..h {
            dhp[k] += drh[k] * s.r[k];
        }

        outer_acc(&mut g.w_z, i, &daz, x);
        outer_acc(&mut g.u_z, h, &daz, &s.hp);
        add_into(&mut g.b_z, &daz);
        outer_acc(&mut g.w_r, i, &dar, x);
        outer_acc(&mut g.u_r, h, &dar, &s.hp);
        add_into(&mut g.b_r, &dar);

        gemv_t_acc(&p.u_z, h, &daz, &mut dhp);
        gemv_t_acc(&p.u_r, h, &dar, &mut dhp);
        let dx = &mut dxs[t];
        gemv_t_acc(&p.w_h, i, &dan, dx);
        gemv_t_acc(&p.w_z, i, &daz, dx);
        gemv_t_acc(&p.w_r, i, &dar, dx);
        carry = dhp;
    }
}

#[derive(Debug, Clone)]
pub struct BiGruCache {
    pub fwd: Vec<GruStep>,
    /// Processing order, i.e. position `T-1` first.
    pub bwd: Vec<GruStep>,
    pub out: Vec<Vec<f64>>,
}

pub fn bigru_forward(p: &BiGru, xs: &[Vec<f64>]) -> BiGruCache {
    let fwd = gru_run(&p.fwd, xs, false);
    let bwd = gru_run(&p.bwd, xs, true);
    let t_len = xs.len();
    let hdim = p.fwd.hidden;
    let out = (0..t_len)
        .map(|t| {
            let mut y = p.b.clone();
            gemv_acc(&p.w_f, hdim, &fwd[t].h, &mut y);
            gemv_acc(&p.w_b, hdim, &bwd[t_len - 1 - t].h, &mut y);
            y
        })
        .collect();
    BiGruCache { fwd, bwd, out }
}

/// Returns input gradients per position.
pub fn bigru_backward(p: &BiGru, xs: &[Vec<f64>], cache: &BiGruCache, dys: &[Vec<f64>], g: &mut BiGru) -> Vec<Vec<f64>> {
    let t_len = xs.len();
    let hdim = p.fwd.hidden;
    let mut dh_f = vec![vec![0.0; hdim]; t_len];
    let mut dh_b = vec![vec![0.0; hdim]; t_len];
    for t in 0..t_len {
        let dy = &dys[t];
        let hb = &cache.bwd[t_len - 1 - t].h;
        outer_acc(&mut g.w_f, hdim, dy, &cache.fwd[t].h);
        outer_acc(&mut g.w_b, hdim, dy, hb);
        add_into(&mut g.b, dy);
        gemv_t_acc(&p.w_f, hdim, dy, &mut dh_f[t]);
        gemv_t_acc(&p.w_b, hdim, dy, &mut dh_b[t_len - 1 - t]);
    }
    let xs_f: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let xs_b: Vec<&[f64]> = xs.iter().rev().map(|x| x.as_slice()).collect();
    let mut dx_f = vec![vec![0.0; p.fwd.input]; t_len];
    let mut dx_b = vec![vec![0.0; p.fwd.input]; t_len];
    gru_backward(&p.fwd, &xs_f, &cache.fwd, &dh_f, &mut g.fwd, &mut dx_f);
    gru_backward(&p.bwd, &xs_b, &cache.bwd, &dh_b, &mut g.bwd, &mut dx_b);
    for t in 0..t_len {
        let back = &dx_b[t_len - 1 - t];
        add_into(&mut dx_f[t], back);
    }
    dx_f
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// `weights[head][t][u]`
    pub weights: Vec<Vec<Vec<f64>>>,
    /// Concatenated head outputs per position.
    pub concat: Vec<Vec<f64>>,
    pub out: Vec<Vec<f64>>,
}

pub fn attention_forward(p: &Attention, ys: &[Vec<f64>]) -> AttentionCache {
    let d = p.dim;
    let dk = d / p.heads;
    let scale = 1.0 / libm::sqrt(dk as f64);
    let proj = |w: &[f64]| -> Vec<Vec<f64>> {
        ys.iter()
            .map(|y| {
                let mut o = vec![0.0; d];
                gemv_acc(w, d, y, &mut o);
                o
            })
            .collect()
    };
    let (q, k, v) = (proj(&p.w_q), proj(&p.w_k), proj(&p.w_v));
    let t_len = ys.len();
    let mut weights = Vec::with_capacity(p.heads);
    let mut concat = vec![vec![0.0; d]; t_len];
    for hd in 0..p.heads {
        let lo = hd * dk;
        let hi = lo + dk;
        let mut head_w = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let scores: Vec<f64> = (0..t_len).map(|u| dot(&q[t][lo..hi], &k[u][lo..hi]) * scale).collect();
            let row = softmax(&scores);
            for (u, a) in row.iter().enumerate() {
                for j in lo..hi {
                    concat[t][j] += a * v[u][j];
                }
            }
            head_w.push(row);
        }
        weights.push(head_w);
    }
    let out = concat
        .iter()
        .map(|c| {
            let mut o = vec![0.0; d];
            gemv_acc(&p.w_o, d, c, &mut o);
            o
        })
        .collect();
    AttentionCache { q, k, v, weights, concat, out }
}

pub fn attention_backward(p: &Attention, ys: &[Vec<f64>], cache: &AttentionCache, dout: &[Vec<f64>], g: &mut Attention) -> Vec<Vec<f64>> {
    let d = p.dim;
    let dk = d / p.heads;
    let scale = 1.0 / libm::sqrt(dk as f64);
    let t_len = ys.len();
    let mut dconcat = vec![vec![0.0; d]; t_len];
    for t in 0..t_len {
        outer_acc(&mut g.w_o, d, &dout[t], &cache.concat[t]);
        gemv_t_acc(&p.w_o, d, &dout[t], &mut dconcat[t]);
    }
    let mut dq = vec![vec![0.0; d]; t_len];
    let mut dk_ = vec![vec![0.0; d]; t_len];
    let mut dv = vec![vec![0.0; d]; t_len];
    for hd in 0..p.heads {
        let lo = hd * dk;
        let hi = lo + dk;
        for t in 0..t_len {
            let row = &cache.weights[hd][t];
            let da: Vec<f64> = (0..t_len).map(|u| dot(&dconcat[t][lo..hi], &cache.v[u][lo..hi])).collect();
            let mean: f64 = row.iter().zip(&da).map(|(a, b)| a * b).sum();
            for u in 0..t_len {
                for j in lo..hi {
                    dv[u][j] += row[u] * dconcat[t][j];
                }
                let ds = row[u] * (da[u] - mean) * scale;
                if ds == 0.0 {
                    continue;
                }
                for j in lo..hi {
                    dq[t][j] += ds * cache.k[u][j];
                    dk_[u][j] += ds * cache.q[t][j];
                }
            }
        }
    }
    let mut dys = vec![vec![0.0; d]; t_len];
    for t in 0..t_len {
        outer_acc(&mut g.w_q, d, &dq[t], &ys[t]);
        outer_acc(&mut g.w_k, d, &dk_[t], &ys[t]);
        outer_acc(&mut g.w_v, d, &dv[t], &ys[t]);
        gemv_t_acc(&p.w_q, d, &dq[t], &mut dys[t]);
        gemv_t_acc(&p.w_k, d, &dk_[t], &mut dys[t]);
        gemv_t_acc(&p.w_v, d, &dv[t], &mut dys[t]);
    }
    dys
}

#[derive(Debug, Clone)]
pub struct ClassifierCache {
    pub u: Vec<f64>,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logit: f64,
    pub p: f64,
}

pub fn classifier_forward(p: &Classifier, c: &[f64], m: &[f64]) -> ClassifierCache {
    let mut u = c.to_vec();
    u.extend_from_slice(m);
    let mut pre = p.b1.clone();
    gemv_acc(&p.w1, 2 * p.dim, &u, &mut pre);
    let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
    let logit = dot(&p.w2, &hidden) + p.b2[0];
    ClassifierCache {
        u,
        pre,
        hidden,
        logit,
        p: sigmoid(logit),
    }
}

/// Returns the gradient on `[c; m]`.
pub fn classifier_backward(p: &Classifier, cache: &ClassifierCache, dlogit: f64, g: &mut Classifier) -> Vec<f64> {
    for (gw, h) in g.w2.iter_mut().zip(&cache.hidden) {
        *gw += dlogit * h;
    }
    g.b2[0] += dlogit;
    let dpre: Vec<f64> = p
        .w2
        .iter()
        .zip(&cache.pre)
        .map(|(w, a)| if *a > 0.0 { dlogit * w } else { 0.0 })
        .collect();
    outer_acc(&mut g.w1, 2 * p.dim, &dpre, &cache.u);
    add_into(&mut g.b1, &dpre);
    let mut du = vec![0.0; 2 * p.dim];
    gemv_t_acc(&p.w1, 2 * p.dim, &dpre, &mut du);
    du
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| libm::exp(v - max)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows.first().map_or(0, |r| r.len())];
    for r in rows {
        add_into(&mut out, r);
    }
    let n = rows.len().max(1) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

pub fn norm(v: &[f64]) -> f64 {
    libm::sqrt(dot(v, v))
}

#[inline]
pub fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}
