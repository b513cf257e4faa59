//! Independent oracles shared by the integration tests.

use tscl::nn::{Module, Tensor};

/// `||a - n|| / max(||a||, ||n||)`, or 0 when both vanish.
pub fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    assert_eq!(a.len(), n.len());
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` around `x`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            v[i] = x[i] + h;
            let up = f(&v);
            v[i] = x[i] - h;
            let down = f(&v);
            v[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-6;

/// Central differences of a vanishing gradient only show roundoff of the
/// loss (about `eps * |L| / h`), far below this.
pub const FD_NOISE: f64 = 1e-7;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative error, except for gradients that vanish identically (a bias in
/// front of batch norm): those have no meaningful relative error and are
/// accepted when the analytic gradient is zero to machine precision and the
/// numeric one is within roundoff. The flag marks that case.
pub fn grad_error(analytic: &[f64], numeric: &[f64]) -> (f64, bool) {
    if norm(analytic) <= 1e-12 && norm(numeric) <= FD_NOISE {
        (0.0, true)
    } else {
        (rel_error(analytic, numeric), false)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks a module through the scalar `sum(r * forward(x))`.
///
/// `forward` runs a training-mode pass on a fresh clone each time, so cached
/// randomness (dropout streams) repeats exactly. `backward` receives `r` and
/// returns the input gradient when the module exposes one. Returns
/// `(tensor, error, vanishing)` per checked tensor, see [`grad_error`].
pub fn module_errors<M: Module<f64> + Clone>(
    module: &M,
    x: &Tensor<f64>,
    r_seed: u64,
    forward: impl Fn(&mut M, &Tensor<f64>) -> Tensor<f64>,
    backward: impl Fn(&mut M, &Tensor<f64>) -> Option<Tensor<f64>>,
) -> Vec<(String, f64, bool)> {
    let mut m = module.clone();
    m.zero_grad();
    let y = forward(&mut m, x);
    let r = Tensor::from_vec(y.shape(), uniform(r_seed, y.len(), -1.0, 1.0)).unwrap();
    let dx = backward(&mut m, &r);

    let mut out = Vec::new();
    if let Some(dx) = dx {
        let num = numeric_grad(x.data(), FD_STEP, |v| {
            let xt = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
            dot(forward(&mut module.clone(), &xt).data(), r.data())
        });
        let (e, zero) = grad_error(dx.data(), &num);
        out.push(("input".to_string(), e, zero));
    }
    let trained: Vec<(String, Vec<f64>, Vec<f64>)> =
        m.params().into_iter().filter(|p| p.kind.trainable()).map(|p| (p.name.clone(), p.value.clone(), p.grad.clone())).collect();
    for (k, (name, value, grad)) in trained.iter().enumerate() {
        let num = numeric_grad(value, FD_STEP, |v| {
            let mut c = module.clone();
            c.params_mut().into_iter().filter(|p| p.kind.trainable()).nth(k).unwrap().value.copy_from_slice(v);
            dot(forward(&mut c, x).data(), r.data())
        });
        let (e, zero) = grad_error(grad, &num);
        out.push((name.clone(), e, zero));
    }
    out
}

/// Deterministic uniform values (splitmix64), independent of the crate's RNG.
pub fn uniform(seed: u64, n: usize, low: f64, high: f64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0xd1b5_4a32_d192_ed03;
    (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            low + (high - low) * ((z >> 11) as f64 / (1u64 << 53) as f64)
        })
        .collect()
}

/// OA, kappa and macro-F1 recomputed by expanding a row-major confusion
/// matrix (`counts[truth * k + pred]`) into individual (truth, pred) pairs.
pub fn brute_force_metrics(k: usize, counts: &[u64]) -> (f64, f64, f64) {
    let mut pairs = Vec::new();
    for t in 0..k {
        for p in 0..k {
            for _ in 0..counts[t * k + p] {
                pairs.push((t, p));
            }
        }
    }
    let n = pairs.len() as f64;
    let agree = pairs.iter().filter(|(t, p)| t == p).count() as f64;
    let oa = agree / n;
    // chance agreement: probability that independent draws from both marginals agree
    let mut pe = 0.0;
    for c in 0..k {
        let truth = pairs.iter().filter(|(t, _)| *t == c).count() as f64;
        let pred = pairs.iter().filter(|(_, p)| *p == c).count() as f64;
        pe += (truth / n) * (pred / n);
    }
    let kappa = if pe == 1.0 { if oa == 1.0 { 1.0 } else { 0.0 } } else { (oa - pe) / (1.0 - pe) };
    let mut f1_sum = 0.0;
    for c in 0..k {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
        let fneg = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        f1_sum += if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    }
    (oa, kappa, f1_sum / k as f64)
}
