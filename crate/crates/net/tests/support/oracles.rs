//! Independent reference implementations shared by test targets.
#![allow(dead_code)]

use eit3d_net::{mse_loss, Architecture, TnNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct scatter: every input element adds `value * kernel` into the
/// output at its strided offset. Input `[c_in, d, h, w]`, weights
/// `[c_in, c_out, k, k, k]`.
#[allow(clippy::too_many_arguments)]
pub fn scatter_conv_transpose(
    input: &[f64],
    c_in: usize,
    dims: [usize; 3],
    weight: &[f64],
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> (Vec<f64>, [usize; 3]) {
    let o: Vec<usize> = dims.iter().map(|&n| (n - 1) * stride + k - 2 * padding).collect();
    let mut out = vec![0.0; c_out * o[0] * o[1] * o[2]];
    for ci in 0..c_in {
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    let v = input[((ci * dims[0] + z) * dims[1] + y) * dims[2] + x];
                    for co in 0..c_out {
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let oz = (z * stride + kz) as isize - padding as isize;
                                    let oy = (y * stride + ky) as isize - padding as isize;
                                    let ox = (x * stride + kx) as isize - padding as isize;
                                    if oz < 0 || oy < 0 || ox < 0 {
                                        continue;
                                    }
                                    let (oz, oy, ox) = (oz as usize, oy as usize, ox as usize);
                                    if oz >= o[0] || oy >= o[1] || ox >= o[2] {
                                        continue;
                                    }
                                    let w = weight[(((ci * c_out + co) * k + kz) * k + ky) * k + kx];
                                    out[((co * o[0] + oz) * o[1] + oy) * o[2] + ox] += v * w;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (out, [o[0], o[1], o[2]])
}

pub struct GradCheck {
    /// Per layer: name, entries checked, max relative error.
    pub layers: Vec<(String, usize, f64)>,
    /// Picks abandoned because every attempt straddled a kink.
    pub skipped: usize,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.layers.iter().map(|l| l.2).fold(0.0, f64::max)
    }

    pub fn min_checked(&self) -> usize {
        self.layers.iter().map(|l| l.1).min().unwrap_or(0)
    }
}

fn layer_of(name: &str) -> String {
    // "bnK.*" belongs to the block of "deconvK".
    let head = name.split('.').next().unwrap();
    match head.strip_prefix("bn") {
        Some(k) => format!("deconv{k}"),
        None => head.to_string(),
    }
}

/// Central-difference check of the full network in double precision with
/// dropout disabled. Every layer gets at least `per_layer` sampled entries.
pub fn gradient_check(mut arch: Architecture, per_layer: usize, batch: usize, seed: u64) -> GradCheck {
    arch.dropout_rate = 0.0;
    gradient_check_with_dropout(arch, per_layer, batch, seed)
}

/// As [`gradient_check`] but keeps the architecture's dropout rate; every
/// evaluation reuses the same masks.
pub fn gradient_check_with_dropout(arch: Architecture, per_layer: usize, batch: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = TnNet::<f64>::init(&arch, &mut rng).unwrap();
    for bn in &mut net.bn {
        bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
        bn.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
    }
    let x: Vec<f64> = (0..batch * arch.input_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let target: Vec<f64> = (0..batch * net.output_len()).map(|_| rng.random_range(-0.5..0.5)).collect();

    let eval = |n: &TnNet<f64>| {
        let (out, cache) = n.forward_train(&x, batch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        (out, n.kink_pattern(&cache))
    };
    // L(+) - L(-) summed elementwise as (o+ - o-)(o+ + o- - 2t) / N, which
    // avoids cancelling two nearly equal loss values.
    let loss_difference = |p: &[f64], m: &[f64]| {
        let s: f64 = p.iter().zip(m).zip(&target).map(|((a, b), t)| (a - b) * (a + b - 2.0 * t)).sum();
        s / p.len() as f64
    };
    let (out, cache) = net.forward_train(&x, batch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (_, g) = mse_loss(&out, &target);
    let grads = net.backward(&cache, &g).unwrap();

    let info = net.param_info();
    // Small tensors are checked in full, larger ones at `per_layer` random
    // entries, so each layer gets at least `per_layer` checks.
    let mut picks: Vec<(usize, usize)> = Vec::new();
    for (t, p) in info.iter().enumerate() {
        if p.len <= per_layer {
            picks.extend((0..p.len).map(|i| (t, i)));
        } else {
            picks.extend((0..per_layer).map(|_| (t, rng.random_range(0..p.len))));
        }
    }
    let mut layer_names: Vec<String> = info.iter().map(|p| layer_of(&p.name)).collect();
    layer_names.dedup();

    let mut layers: Vec<(String, usize, f64)> = layer_names.iter().map(|n| (n.clone(), 0, 0.0)).collect();
    let mut skipped = 0;
    for (t, first) in picks {
        // The largest step whose perturbation keeps every leaky-ReLU input
        // on the same side of zero is used; if none does, large tensors
        // redraw the entry.
        let mut i = first;
        let mut done = None;
        'draw: for _ in 0..8 {
            for h in [1e-5, 1e-6, 1e-7, 1e-8] {
                let orig = net.params()[t][i];
                net.params_mut()[t][i] = orig + h;
                let (lp, kp) = eval(&net);
                net.params_mut()[t][i] = orig - h;
                let (lm, km) = eval(&net);
                net.params_mut()[t][i] = orig;
                if kp == km {
                    done = Some((grads.tensors[t][i], loss_difference(&lp, &lm) / (2.0 * h)));
                    break 'draw;
                }
            }
            if info[t].len <= per_layer {
                break;
            }
            i = rng.random_range(0..info[t].len);
        }
        let Some((analytic, numeric)) = done else {
            skipped += 1;
            continue;
        };
        let scale = analytic.abs().max(numeric.abs());
        // Entries below the finite-difference noise floor carry no signal.
        let err = if scale < 1e-11 { 0.0 } else { (analytic - numeric).abs() / scale };
        let slot = layers.iter_mut().find(|l| l.0 == layer_of(&info[t].name)).unwrap();
        slot.1 += 1;
        slot.2 = slot.2.max(err);
    }
    GradCheck { layers, skipped }
}
