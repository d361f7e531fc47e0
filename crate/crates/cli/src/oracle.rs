//! Dense replay used by the verification suites. Nothing here calls the
//! library's kernels: inputs are read out of its types and all arithmetic
//! runs on nested `Vec`s with explicit boolean masks.

use pfa_core::{DenseMatrix, FeatureMap, LayerWeights, ModelPreset, Variant};

pub type Dense = Vec<Vec<f64>>;

pub fn to_nested(m: &DenseMatrix) -> Dense {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let n = b[0].len();
    a.iter()
        .map(|row| {
            let mut out = vec![0.0; n];
            for (x, brow) in row.iter().zip(b) {
                for (o, y) in out.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
            out
        })
        .collect()
}

pub fn max_abs(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// One dense focused-attention step: masked scores, masked softmax,
/// product with the previous map, normalisation, top-k, optional rescale.
/// Returns (A, mask, O).
pub fn dense_pfa_step(
    q: &Dense,
    k: &Dense,
    v: &Dense,
    prev: &Dense,
    prev_mask: &[Vec<bool>],
    budget: usize,
    renorm: bool,
) -> (Dense, Vec<Vec<bool>>, Dense) {
    let n = q.len();
    let d = q[0].len();
    let scale = 1.0 / (d as f64).sqrt();
    let mut a = vec![vec![0.0; n]; n];
    let mut mask = vec![vec![false; n]; n];
    for i in 0..n {
        let allowed: Vec<usize> = (0..n).filter(|&j| prev_mask[i][j]).collect();
        let s: Vec<f64> = allowed
            .iter()
            .map(|&j| (0..d).map(|p| q[i][p] * k[j][p]).sum::<f64>() * scale)
            .collect();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|&x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let prod: Vec<f64> = allowed
            .iter()
            .zip(&e)
            .map(|(&j, x)| x / z * prev[i][j])
            .collect();
        let zp: f64 = prod.iter().sum();
        let normed: Vec<f64> = prod.iter().map(|x| x / zp).collect();
        // rank positions within `allowed`: larger weight first, then lower column
        let mut order: Vec<usize> = (0..allowed.len()).collect();
        order.sort_by(|&x, &y| normed[y].partial_cmp(&normed[x]).unwrap().then(x.cmp(&y)));
        order.truncate(budget);
        let dropped = allowed.len() > budget;
        let kept_sum: f64 = order.iter().map(|&p| normed[p]).sum();
        for &p in &order {
            let j = allowed[p];
            mask[i][j] = true;
            a[i][j] = if renorm && dropped {
                normed[p] / kept_sum
            } else {
                normed[p]
            };
        }
    }
    let o = matmul(&a, v);
    (a, mask, o)
}

/// Dense attention, optionally restricted to the top `keep` scores per row
/// or multiplied into a previous map (progressive variant).
pub fn dense_simple_step(
    q: &Dense,
    k: &Dense,
    v: &Dense,
    keep: Option<usize>,
    prev: Option<&Dense>,
) -> (Dense, Dense) {
    let n = q.len();
    let d = q[0].len();
    let scale = 1.0 / (d as f64).sqrt();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut s: Vec<f64> = (0..n)
            .map(|j| (0..d).map(|p| q[i][p] * k[j][p]).sum::<f64>() * scale)
            .collect();
        if let Some(keep) = keep {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&x, &y| s[y].partial_cmp(&s[x]).unwrap().then(x.cmp(&y)));
            for &j in &order[keep..] {
                s[j] = f64::NEG_INFINITY;
            }
        }
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|&x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..n {
            a[i][j] = e[j] / z;
        }
        if let Some(prev) = prev {
            let prod: Vec<f64> = (0..n).map(|j| a[i][j] * prev[i][j]).collect();
            let zp: f64 = prod.iter().sum();
            for j in 0..n {
                a[i][j] = prod[j] / zp;
            }
        }
    }
    let o = matmul(&a, v);
    (a, o)
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Replays a whole cascade densely and returns the output values in
/// channel-last order. Maps whose sides are not window multiples are
/// reflection padded each layer and cropped again.
pub fn dense_cascade(
    preset: &ModelPreset,
    weights: &LayerWeights,
    input: &FeatureMap,
    variant: Variant,
    renorm: bool,
) -> Vec<f64> {
    let (h, w, c) = (input.height(), input.width(), input.channels());
    let ws = preset.window;
    let (ph, pw) = (h.div_ceil(ws) * ws, w.div_ceil(ws) * ws);
    let n = ws * ws;
    let heads = preset.heads;
    let d = c / heads;
    let budgets = preset.layer_budgets();
    let mut x: Dense = (0..h * w)
        .map(|p| input.values()[p * c..(p + 1) * c].to_vec())
        .collect();
    let (wy_count, wx_count) = (ph / ws, pw / ws);
    let wins = wy_count * wx_count;
    // chains[parity][window * heads + head] = (A, mask)
    let ones = (vec![vec![1.0; n]; n], vec![vec![true; n]; n]);
    let mut chains = vec![vec![ones; wins * heads]; 2];
    for (li, budget) in budgets.iter().enumerate() {
        let layer = li + 1;
        let shift = if layer % 2 == 1 { 0 } else { ws / 2 };
        let par = (layer + 1) % 2;
        let p = &weights.layers()[li];
        let (wq, wk, wv, wo) = (
            to_nested(&p.q),
            to_nested(&p.k),
            to_nested(&p.v),
            to_nested(&p.o),
        );
        let mut next = x.clone();
        for wy in 0..wy_count {
            for wx in 0..wx_count {
                let win = wy * wx_count + wx;
                // padded coordinates of every token
                let coords: Vec<(usize, usize)> = (0..n)
                    .map(|t| {
                        (
                            (wy * ws + t / ws + shift) % ph,
                            (wx * ws + t % ws + shift) % pw,
                        )
                    })
                    .collect();
                let tokens: Dense = coords
                    .iter()
                    .map(|&(y, xx)| x[reflect(y, h) * w + reflect(xx, w)].clone())
                    .collect();
                let q = matmul(&tokens, &wq);
                let k = matmul(&tokens, &wk);
                let v = matmul(&tokens, &wv);
                let mut concat = vec![vec![0.0; c]; n];
                for hd in 0..heads {
                    let slice = |m: &Dense| -> Dense {
                        m.iter().map(|r| r[hd * d..(hd + 1) * d].to_vec()).collect()
                    };
                    let (qh, kh, vh) = (slice(&q), slice(&k), slice(&v));
                    let budget = (*budget).min(n);
                    let o = match variant {
                        Variant::Vanilla => dense_simple_step(&qh, &kh, &vh, None, None).1,
                        Variant::TopK => dense_simple_step(&qh, &kh, &vh, Some(budget), None).1,
                        Variant::Progressive => {
                            let cell = &mut chains[par][win * heads + hd];
                            let (a, o) = dense_simple_step(&qh, &kh, &vh, None, Some(&cell.0));
                            cell.0 = a;
                            o
                        }
                        Variant::Pfa => {
                            let cell = &mut chains[par][win * heads + hd];
                            let (a, m, o) =
                                dense_pfa_step(&qh, &kh, &vh, &cell.0, &cell.1, budget, renorm);
                            *cell = (a, m);
                            o
                        }
                    };
                    for t in 0..n {
                        concat[t][hd * d..(hd + 1) * d].copy_from_slice(&o[t]);
                    }
                }
                let proj = matmul(&concat, &wo);
                for (t, &(y, xx)) in coords.iter().enumerate() {
                    if y < h && xx < w {
                        for ch in 0..c {
                            next[y * w + xx][ch] = tokens[t][ch] + proj[t][ch];
                        }
                    }
                }
            }
        }
        x = next;
    }
    x.concat()
}
