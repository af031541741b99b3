//! Independent re-implementation of one forward pass, written with plain
//! nested vectors and explicit loops against the documented layer semantics,
//! then compared to the production path on a d_model=4 model.

use alvc::neural::{forward_logprobs, init_model, ModelConfig, ModelState};
use alvc::text::{BOS_ID, PAD_ID};

type M = Vec<Vec<f64>>;

fn get(model: &ModelState<f64>, name: &str) -> M {
    let p = model
        .param(name)
        .unwrap_or_else(|| panic!("missing param {name}"));
    (0..p.rows).map(|r| p.row(r).to_vec()).collect()
}

fn matmul(a: &M, b: &M) -> M {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i][t] * b[t][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn add(a: &M, b: &M) -> M {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect()
}

fn add_bias(a: &M, bias: &M) -> M {
    a.iter()
        .map(|row| row.iter().zip(&bias[0]).map(|(x, b)| x + b).collect())
        .collect()
}

fn linear(x: &M, w: &M, b: &M) -> M {
    add_bias(&matmul(x, w), b)
}

fn relu(a: &M) -> M {
    a.iter()
        .map(|row| row.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect())
        .collect()
}

fn layer_norm(x: &M, gain: &M, bias: &M) -> M {
    let d = x[0].len();
    x.iter()
        .map(|row| {
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + 1e-5).sqrt();
            (0..d)
                .map(|c| gain[0][c] * ((row[c] - mean) * inv) + bias[0][c])
                .collect()
        })
        .collect()
}

fn softmax_masked(x: &M, mask: &dyn Fn(usize, usize) -> bool) -> M {
    let cols = x[0].len();
    x.iter()
        .enumerate()
        .map(|(r, row)| {
            let mut max = f64::NEG_INFINITY;
            for c in 0..cols {
                if mask(r, c) {
                    max = max.max(row[c]);
                }
            }
            let mut out = vec![0.0; cols];
            if max == f64::NEG_INFINITY {
                return out;
            }
            let mut total = 0.0;
            for c in 0..cols {
                if mask(r, c) {
                    out[c] = (row[c] - max).exp();
                    total += out[c];
                }
            }
            for v in out.iter_mut() {
                *v /= total;
            }
            out
        })
        .collect()
}

fn positional_encoding(rows: usize, d: usize) -> M {
    let mut pe = vec![vec![0.0; d]; rows];
    for (pos, row) in pe.iter_mut().enumerate() {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            row[2 * i] = angle.sin();
            row[2 * i + 1] = angle.cos();
        }
    }
    pe
}

fn attention(
    model: &ModelState<f64>,
    prefix: &str,
    q_in: &M,
    kv_in: &M,
    mask: &dyn Fn(usize, usize) -> bool,
    n_heads: usize,
) -> M {
    let q = linear(
        q_in,
        &get(model, &format!("{prefix}.wq")),
        &get(model, &format!("{prefix}.bq")),
    );
    let k = linear(
        kv_in,
        &get(model, &format!("{prefix}.wk")),
        &get(model, &format!("{prefix}.bk")),
    );
    let v = linear(
        kv_in,
        &get(model, &format!("{prefix}.wv")),
        &get(model, &format!("{prefix}.bv")),
    );
    let d = q[0].len();
    let dh = d / n_heads;
    let tq = q.len();
    let tk = k.len();
    let mut cat = vec![vec![0.0; d]; tq];
    for h in 0..n_heads {
        let lo = h * dh;
        // scores = Qh · Khᵀ, scaled by 1/sqrt(dh)
        let mut scores = vec![vec![0.0; tk]; tq];
        for i in 0..tq {
            for j in 0..tk {
                let mut acc = 0.0;
                for c in 0..dh {
                    acc += q[i][lo + c] * k[j][lo + c];
                }
                scores[i][j] = acc * (1.0 / (dh as f64).sqrt());
            }
        }
        let weights = softmax_masked(&scores, mask);
        for i in 0..tq {
            for c in 0..dh {
                let mut acc = 0.0;
                for j in 0..tk {
                    acc += weights[i][j] * v[j][lo + c];
                }
                cat[i][lo + c] = acc;
            }
        }
    }
    linear(
        &cat,
        &get(model, &format!("{prefix}.wo")),
        &get(model, &format!("{prefix}.bo")),
    )
}

fn residual_ln(model: &ModelState<f64>, ln: &str, x: &M, sub: &M) -> M {
    layer_norm(
        &add(x, sub),
        &get(model, &format!("{ln}.g")),
        &get(model, &format!("{ln}.b")),
    )
}

fn ffn(model: &ModelState<f64>, prefix: &str, x: &M) -> M {
    let hidden = linear(
        x,
        &get(model, &format!("{prefix}.w1")),
        &get(model, &format!("{prefix}.b1")),
    );
    linear(
        &relu(&hidden),
        &get(model, &format!("{prefix}.w2")),
        &get(model, &format!("{prefix}.b2")),
    )
}

/// The whole forward pass, spelled out step by step.
fn oracle_forward(
    model: &ModelState<f64>,
    frames: &M,
    context_ids: &[u32],
    target_prefix: &[u32],
) -> M {
    let config = &model.config;
    let d = config.d_model;
    let h = config.n_heads;

    // video encoder
    let frame_valid: Vec<bool> = vec![true; frames.len()];
    let mut v_x = linear(frames, &get(model, "frame_w"), &get(model, "frame_b"));
    v_x = add(&v_x, &positional_encoding(frames.len(), d));
    for l in 0..config.n_layers {
        let fv = frame_valid.clone();
        let attn = attention(
            model,
            &format!("venc{l}.attn"),
            &v_x,
            &v_x,
            &|_, c| fv[c],
            h,
        );
        v_x = residual_ln(model, &format!("venc{l}.ln1"), &v_x, &attn);
        let ff = ffn(model, &format!("venc{l}.ffn"), &v_x);
        v_x = residual_ln(model, &format!("venc{l}.ln2"), &v_x, &ff);
    }
    let video_mem = v_x;

    // text encoder
    let tok = get(model, "tok_embed");
    let ctx_valid: Vec<bool> = context_ids.iter().map(|&id| id != PAD_ID).collect();
    let mut t_x: M = context_ids
        .iter()
        .map(|&id| tok[id as usize].clone())
        .collect();
    t_x = add(&t_x, &positional_encoding(context_ids.len(), d));
    for l in 0..config.n_layers {
        let cv = ctx_valid.clone();
        let attn = attention(
            model,
            &format!("tenc{l}.self"),
            &t_x,
            &t_x,
            &|_, c| cv[c],
            h,
        );
        t_x = residual_ln(model, &format!("tenc{l}.ln1"), &t_x, &attn);
        let fv = frame_valid.clone();
        let cross = attention(
            model,
            &format!("tenc{l}.cross"),
            &t_x,
            &video_mem,
            &|_, c| fv[c],
            h,
        );
        t_x = residual_ln(model, &format!("tenc{l}.ln2"), &t_x, &cross);
        let ff = ffn(model, &format!("tenc{l}.ffn"), &t_x);
        t_x = residual_ln(model, &format!("tenc{l}.ln3"), &t_x, &ff);
    }
    let text_mem = t_x;

    // decoder
    let tgt_valid: Vec<bool> = target_prefix.iter().map(|&id| id != PAD_ID).collect();
    let mut y_x: M = target_prefix
        .iter()
        .map(|&id| tok[id as usize].clone())
        .collect();
    y_x = add(&y_x, &positional_encoding(target_prefix.len(), d));
    for l in 0..config.n_layers {
        let tv = tgt_valid.clone();
        let attn = attention(
            model,
            &format!("dec{l}.self"),
            &y_x,
            &y_x,
            &|r, c| c <= r && tv[c],
            h,
        );
        y_x = residual_ln(model, &format!("dec{l}.ln1"), &y_x, &attn);
        let fv = frame_valid.clone();
        let crossv = attention(
            model,
            &format!("dec{l}.crossv"),
            &y_x,
            &video_mem,
            &|_, c| fv[c],
            h,
        );
        y_x = residual_ln(model, &format!("dec{l}.ln2"), &y_x, &crossv);
        let cv = ctx_valid.clone();
        let crosst = attention(
            model,
            &format!("dec{l}.crosst"),
            &y_x,
            &text_mem,
            &|_, c| cv[c],
            h,
        );
        y_x = residual_ln(model, &format!("dec{l}.ln3"), &y_x, &crosst);
        let ff = ffn(model, &format!("dec{l}.ffn"), &y_x);
        y_x = residual_ln(model, &format!("dec{l}.ln4"), &y_x, &ff);
    }

    // vocab projection + log softmax
    let logits = linear(&y_x, &get(model, "out_w"), &get(model, "out_b"));
    logits
        .iter()
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + total.ln();
            row.iter().map(|v| v - lse).collect()
        })
        .collect()
}

fn compare_case(seed: u64, frames: M, context_ids: Vec<u32>, prefix: Vec<u32>) {
    let config = ModelConfig {
        d_model: 4,
        n_heads: 2,
        n_layers: 1,
        ff_dim: 8,
        dropout: 0.0,
        vocab_size: 9,
        max_frames: 4,
        max_context: 6,
        max_target: 5,
        feature_dim: 3,
    };
    let model: ModelState<f64> = init_model(&config, seed);
    let expect = oracle_forward(&model, &frames, &context_ids, &prefix);
    let got = forward_logprobs(&model, &frames, &context_ids, &prefix).unwrap();
    assert_eq!(got.rows, expect.len());
    assert_eq!(got.cols, expect[0].len());
    for r in 0..got.rows {
        for c in 0..got.cols {
            let diff = (got.at(r, c) - expect[r][c]).abs();
            assert!(
                diff < 1e-9,
                "({r},{c}): {} vs {}",
                got.at(r, c),
                expect[r][c]
            );
        }
    }
}

#[test]
fn forward_matches_independent_oracle() {
    compare_case(
        42,
        vec![vec![0.3, -0.7, 0.2], vec![-0.1, 0.5, 0.9]],
        vec![4, 5, PAD_ID],
        vec![BOS_ID, 6, 7, 8],
    );
}

#[test]
fn forward_matches_oracle_on_second_shape() {
    compare_case(
        7,
        vec![vec![1.0, 0.0, -1.0]],
        vec![8, 7, 6, 5],
        vec![BOS_ID, 4],
    );
}
