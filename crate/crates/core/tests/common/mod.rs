//! Independent reference implementations used by the integration tests and
//! the acceptance suite. Plain `Vec<f64>` algebra only; nothing here calls
//! into the crate's numerics.
#![allow(dead_code)]

pub mod inputs;

use steerprobe_core::container::TensorContainer;

pub type Mat = Vec<Vec<f64>>;

pub struct RefConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
}

pub fn ref_config(c: &TensorContainer) -> RefConfig {
    let cfg = &c.metadata["config"];
    let get = |k: &str| cfg[k].as_u64().unwrap() as usize;
    RefConfig {
        n_layers: get("n_layers"),
        n_heads: get("n_heads"),
        head_dim: get("head_dim"),
        embed_dim: get("embed_dim"),
        vocab_size: get("vocab_size"),
    }
}

fn tensor(c: &TensorContainer, name: &str) -> (Vec<usize>, Vec<f64>) {
    let t = c.get(name).unwrap_or_else(|| panic!("missing tensor {name}"));
    (t.shape.clone(), t.data.iter().map(|&v| v as f64).collect())
}

fn mat(c: &TensorContainer, name: &str) -> Mat {
    let (shape, data) = tensor(c, name);
    data.chunks(shape[1]).map(|r| r.to_vec()).collect()
}

fn vecn(c: &TensorContainer, name: &str) -> Vec<f64> {
    tensor(c, name).1
}

/// `m` is `out x in`; returns `m v`.
pub fn matvec(m: &Mat, v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

pub fn rmsnorm(x: &[f64], g: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let r = (ms + 1e-5).sqrt();
    x.iter().zip(g).map(|(v, gi)| v / r * gi).collect()
}

pub fn gelu_tanh(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// Additive offsets per head, applied at every position or only the last.
pub struct RefPlan {
    pub offsets: Vec<((usize, usize), Vec<f64>)>,
    pub last_only: bool,
}

pub struct RefOutput {
    pub logits: Mat,
    /// Pre-offset head outputs per (layer, head), `seq x head_dim`.
    pub heads: Vec<((usize, usize), Mat)>,
}

/// Dense-algebra forward pass reading the named tensors directly.
pub fn reference_forward(c: &TensorContainer, tokens: &[u32], plan: Option<&RefPlan>) -> RefOutput {
    let cfg = ref_config(c);
    let n = tokens.len();
    let tok = mat(c, "token_embedding");
    let pos = mat(c, "position_embedding");
    let mut x: Mat = (0..n)
        .map(|p| tok[tokens[p] as usize].iter().zip(&pos[p]).map(|(a, b)| a + b).collect())
        .collect();
    let mut heads_out = Vec::new();
    for l in 0..cfg.n_layers {
        let g = vecn(c, &format!("layers.{l}.attn_norm"));
        let xn: Mat = x.iter().map(|r| rmsnorm(r, &g)).collect();
        let mut delta = vec![vecn(c, &format!("layers.{l}.attn_output_bias")); n];
        for h in 0..cfg.n_heads {
            let p = format!("layers.{l}.heads.{h}");
            let (wq, wk, wv, wo) = (
                mat(c, &format!("{p}.query")),
                mat(c, &format!("{p}.key")),
                mat(c, &format!("{p}.value")),
                mat(c, &format!("{p}.output")),
            );
            let q: Mat = xn.iter().map(|r| matvec(&wq, r)).collect();
            let k: Mat = xn.iter().map(|r| matvec(&wk, r)).collect();
            let v: Mat = xn.iter().map(|r| matvec(&wv, r)).collect();
            let scale = 1.0 / (cfg.head_dim as f64).sqrt();
            let mut z: Mat = Vec::with_capacity(n);
            for i in 0..n {
                let s: Vec<f64> = (0..=i).map(|j| dot(&q[i], &k[j]) * scale).collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
                let tot: f64 = e.iter().sum();
                let mut zi = vec![0.0; cfg.head_dim];
                for j in 0..=i {
                    for d in 0..cfg.head_dim {
                        zi[d] += e[j] / tot * v[j][d];
                    }
                }
                z.push(zi);
            }
            heads_out.push(((l, h), z.clone()));
            if let Some(plan) = plan {
                for ((pl, ph), off) in &plan.offsets {
                    if (*pl, *ph) == (l, h) {
                        let start = if plan.last_only { n - 1 } else { 0 };
                        for zi in z.iter_mut().skip(start) {
                            add(zi, off);
                        }
                    }
                }
            }
            for i in 0..n {
                let o = matvec(&wo, &z[i]);
                add(&mut delta[i], &o);
            }
        }
        for i in 0..n {
            add(&mut x[i], &delta[i]);
        }
        let g = vecn(c, &format!("layers.{l}.ffn_norm"));
        let up = mat(c, &format!("layers.{l}.ffn_up"));
        let upb = vecn(c, &format!("layers.{l}.ffn_up_bias"));
        let down = mat(c, &format!("layers.{l}.ffn_down"));
        let downb = vecn(c, &format!("layers.{l}.ffn_down_bias"));
        for xi in x.iter_mut() {
            let xn = rmsnorm(xi, &g);
            let hidden: Vec<f64> = matvec(&up, &xn).iter().zip(&upb).map(|(a, b)| gelu_tanh(a + b)).collect();
            let out: Vec<f64> = matvec(&down, &hidden).iter().zip(&downb).map(|(a, b)| a + b).collect();
            add(xi, &out);
        }
    }
    let g = vecn(c, "final_norm");
    let un = mat(c, "unembedding");
    let logits = x.iter().map(|r| matvec(&un, &rmsnorm(r, &g))).collect();
    RefOutput {
        logits,
        heads: heads_out,
    }
}

/// Largest elementwise relative error, with denominators floored at `floor`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Mean of the last `min(w, rows)` rows.
pub fn window_mean(rows: &Mat, w: usize) -> Vec<f64> {
    let n = rows.len();
    let w = w.min(n);
    let mut out = vec![0.0; rows[0].len()];
    for r in &rows[n - w..] {
        add(&mut out, r);
    }
    out.iter().map(|v| v / w as f64).collect()
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// MC1 by enumeration: the best correct answer must beat each incorrect one.
pub fn brute_mc1(correct: &[f64], incorrect: &[f64]) -> f64 {
    let best = correct[0];
    let mut wins = true;
    for &i in incorrect {
        if !(best > i) {
            wins = false;
        }
    }
    if wins {
        1.0
    } else {
        0.0
    }
}

/// MC2 as plain normalized likelihood mass of the correct set.
pub fn brute_mc2(correct: &[f64], incorrect: &[f64]) -> f64 {
    let c: f64 = correct.iter().map(|v| v.exp()).sum();
    let i: f64 = incorrect.iter().map(|v| v.exp()).sum();
    c / (c + i)
}

/// Answer log-likelihood from a full forward of the rendered prompt:
/// the sum of `log p(token_t | prefix)` over the answer span.
pub fn answer_loglik(logits: &Mat, tokens: &[u32], start: usize, end: usize) -> f64 {
    (start..end).map(|t| log_softmax(&logits[t - 1])[tokens[t] as usize]).sum()
}

/// Mass-mean-shift direction, its unit form and the projection std.
pub fn mass_mean_direction(rows: &Mat, labels: &[bool]) -> (Vec<f64>, f64) {
    let d = rows[0].len();
    let (mut t, mut f) = (vec![0.0; d], vec![0.0; d]);
    let (mut nt, mut nf) = (0.0, 0.0);
    for (r, &y) in rows.iter().zip(labels) {
        if y {
            add(&mut t, r);
            nt += 1.0;
        } else {
            add(&mut f, r);
            nf += 1.0;
        }
    }
    let raw: Vec<f64> = t.iter().zip(&f).map(|(a, b)| a / nt - b / nf).collect();
    let norm = dot(&raw, &raw).sqrt();
    let unit: Vec<f64> = raw.iter().map(|v| v / norm).collect();
    let proj: Vec<f64> = rows.iter().map(|r| dot(r, &unit)).collect();
    let mean = proj.iter().sum::<f64>() / proj.len() as f64;
    let var = proj.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / proj.len() as f64;
    (unit, var.sqrt())
}

/// Best accuracy any line `w . x >= b` reaches on 2-D points, scanning
/// directions in `steps` increments and every threshold between points.
pub fn best_linear_accuracy_2d(xs: &[[f64; 2]], ys: &[bool], steps: usize) -> f64 {
    let mut best: f64 = 0.0;
    for s in 0..steps {
        let a = s as f64 * std::f64::consts::TAU / steps as f64;
        let w = [a.cos(), a.sin()];
        let mut proj: Vec<(f64, bool)> = xs.iter().zip(ys).map(|(x, &y)| (w[0] * x[0] + w[1] * x[1], y)).collect();
        proj.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total_true = ys.iter().filter(|y| **y).count();
        // Everything at or above the cut is predicted true.
        let mut true_below = 0;
        let mut false_below = 0;
        for i in 0..=proj.len() {
            let correct = false_below + (total_true - true_below);
            best = best.max(correct as f64 / ys.len() as f64);
            if i < proj.len() {
                if proj[i].1 {
                    true_below += 1;
                } else {
                    false_below += 1;
                }
            }
        }
    }
    best
}

/// Mean BCE of a probe given its logits function, with plain loops.
pub fn bce(logits: &[f64], ys: &[bool]) -> f64 {
    logits
        .iter()
        .zip(ys)
        .map(|(&z, &y)| {
            let p = 1.0 / (1.0 + (-z).exp());
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / ys.len() as f64
}

/// Byte-level rendering with a leading BOS (256); returns the tokens and the
/// answer's `[start, end)` span.
pub fn render_bytes(prefix: &str, template: &str, q: &str, a: &str) -> (Vec<u32>, usize, usize) {
    let (before, after) = template.split_once("{a}").unwrap();
    let context = format!("{prefix}{}", before.replace("{q}", q));
    let mut tokens = vec![256u32];
    tokens.extend(context.bytes().map(u32::from));
    let start = tokens.len();
    tokens.extend(a.bytes().map(u32::from));
    let end = tokens.len();
    tokens.extend(after.replace("{q}", q).bytes().map(u32::from));
    (tokens, start, end)
}

/// Summed answer log-likelihood under the reference forward.
pub fn oracle_score(c: &TensorContainer, prefix: &str, template: &str, q: &str, a: &str, plan: Option<&RefPlan>) -> f64 {
    let (tokens, start, end) = render_bytes(prefix, template, q, a);
    let out = reference_forward(c, &tokens[..end], plan);
    answer_loglik(&out.logits, &tokens, start, end)
}

/// Offsets `alpha * sigma * direction` for each entry of a saved plan.
pub fn ref_plan_from(plan: &steerprobe_core::InterventionPlan) -> RefPlan {
    RefPlan {
        offsets: plan
            .entries()
            .iter()
            .map(|e| {
                let off = e.direction.iter().map(|d| plan.alpha() * e.sigma * d).collect();
                ((e.head.layer, e.head.head), off)
            })
            .collect(),
        last_only: plan.scope() == steerprobe_core::InterventionScope::LastPosition,
    }
}
