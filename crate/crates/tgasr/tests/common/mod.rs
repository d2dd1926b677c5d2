//! Shared support for integration tests: an independent straight-line
//! transcription of the fusion equations (no tape, no model code), plus
//! corpus/model helpers.

use tgasr::model::PgcaParams;
use tgasr::tensor::{ParamSet, Tensor};

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

/// out[m×n] = a[m×k] · b[k×n], plain loops.
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// Multi-head attention written out longhand from the definition:
/// softmax(q Wq (e Wk)ᵀ / sqrt(d_k)) (e Wv), heads concatenated, times Wo.
fn attention_oracle(
    set: &ParamSet,
    prefix: &str,
    heads: usize,
    d: usize,
    y: &[f64],
    t_y: usize,
    e: &Tensor,
) -> Vec<f64> {
    let d_k = d / heads;
    let t_k = e.shape()[0];
    let mut concat = vec![0.0; t_y * d];
    for h in 0..heads {
        let wq = set.get(&format!("{prefix}.h{h}.wq")).unwrap().data();
        let wk = set.get(&format!("{prefix}.h{h}.wk")).unwrap().data();
        let wv = set.get(&format!("{prefix}.h{h}.wv")).unwrap().data();
        let q = mm(y, wq, t_y, d, d_k);
        let k = mm(e.data(), wk, t_k, d, d_k);
        let v = mm(e.data(), wv, t_k, d, d_k);
        for i in 0..t_y {
            let mut scores = vec![0.0; t_k];
            for (j, sc) in scores.iter_mut().enumerate() {
                let mut s = 0.0;
                for c in 0..d_k {
                    s += q[i * d_k + c] * k[j * d_k + c];
                }
                *sc = s / (d_k as f64).sqrt();
            }
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..d_k {
                let mut s = 0.0;
                for j in 0..t_k {
                    s += exps[j] / z * v[j * d_k + c];
                }
                concat[i * d + h * d_k + c] = s;
            }
        }
    }
    let wo = set.get(&format!("{prefix}.wo")).unwrap().data();
    mm(&concat, wo, t_y, d, d)
}

/// Straight-line transcription of the two fusion equations:
///   Y' = Y + Σ_l tanh(α_l) · attn(Y, E_l, E_l)
///   Z  = Y' + tanh(α_fnn) · fnn(Y')
pub fn pgca_equations_oracle(
    p: &PgcaParams,
    set: &ParamSet,
    y: &Tensor,
    aux: &[Tensor],
) -> Vec<f64> {
    let d = p.d;
    let t_y = y.shape()[0];
    let mut y_prime = y.data().to_vec();
    for (l, e) in aux.iter().enumerate() {
        let alpha = set
            .get(&format!("{}.alpha_attn{l}", p.prefix))
            .unwrap()
            .data()[0];
        let branch = attention_oracle(
            set,
            &format!("{}.branch{l}", p.prefix),
            p.heads,
            d,
            y.data(),
            t_y,
            e,
        );
        for (acc, b) in y_prime.iter_mut().zip(&branch) {
            *acc += alpha.tanh() * b;
        }
    }

    let alpha_f = set.get(&format!("{}.alpha_fnn", p.prefix)).unwrap().data()[0];
    let w1 = set.get(&format!("{}.fnn.w1", p.prefix)).unwrap().data();
    let b1 = set.get(&format!("{}.fnn.b1", p.prefix)).unwrap().data();
    let w2 = set.get(&format!("{}.fnn.w2", p.prefix)).unwrap().data();
    let b2 = set.get(&format!("{}.fnn.b2", p.prefix)).unwrap().data();
    let d_ff = p.d_ff;

    let mut z = y_prime.clone();
    for t in 0..t_y {
        let row = &y_prime[t * d..(t + 1) * d];
        let mut hidden = vec![0.0; d_ff];
        for (j, hv) in hidden.iter_mut().enumerate() {
            let mut s = b1[j];
            for i in 0..d {
                s += row[i] * w1[i * d_ff + j];
            }
            *hv = gelu(s);
        }
        for o in 0..d {
            let mut s = b2[o];
            for (j, hv) in hidden.iter().enumerate() {
                s += hv * w2[j * d + o];
            }
            z[t * d + o] += alpha_f.tanh() * s;
        }
    }
    z
}
