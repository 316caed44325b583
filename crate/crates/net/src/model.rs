//! The network: fully connected decoder, transposed-convolution stack and
//! the resampling head, with exact manual backpropagation.

use eit3d_core::voxel::inside_mask;
use rand::Rng;

use crate::arch::{Architecture, OUTPUT_GRID};
use crate::float::Float;
use crate::layers::{
    affine_leaky_relu, batch_norm_backward, batch_norm_eval, batch_norm_train, conv_transpose_sample,
    conv_transpose_sample_backward, linear_backward, linear_forward, BnStats, ConvGeometry, Resampler,
};
use crate::NetError;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub n_in: usize,
    pub n_out: usize,
    /// `[n_out, n_in]`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deconv<T> {
    pub geometry: ConvGeometry,
    /// `[c_in, c_out, k, k, k]`.
    pub weight: Vec<T>,
    /// Only the output layer has a bias; the others feed a batch norm that
    /// would cancel it.
    pub bias: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Name and decay flag of one trainable tensor, in canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub len: usize,
    pub decay: bool,
}

/// Gradients aligned with [`TnNet::param_info`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Float> Grads<T> {
    pub fn scale(&mut self, s: T) {
        self.tensors.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|g| *g == T::zero())
    }
}

/// Activations kept by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    batch: usize,
    fc_inputs: Vec<Vec<T>>,
    dropout_masks: Vec<Option<Vec<T>>>,
    latent: Vec<T>,
    xhat: Vec<Vec<T>>,
    stats: Vec<BnStats<T>>,
    tanh_out: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TnNet<T> {
    arch: Architecture,
    pub fc: Vec<Linear<T>>,
    pub deconv: Vec<Deconv<T>>,
    pub bn: Vec<BatchNorm<T>>,
    resampler: Resampler,
    mask: Vec<T>,
}

fn check<T: Float>(layer: impl Into<String>, v: &[T]) -> Result<(), NetError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NetError::NonFinite { layer: layer.into() })
    }
}

impl<T: Float> TnNet<T> {
    /// Network with every parameter zero, batch-norm scale one and unit
    /// running variance.
    pub fn zeros(arch: &Architecture) -> Result<Self, NetError> {
        arch.validate()?;
        if arch.output_grid != OUTPUT_GRID {
            return Err(NetError::Architecture(format!(
                "output grid {:?} must be the voxel grid {:?}",
                arch.output_grid, OUTPUT_GRID
            )));
        }
        let mut fc = Vec::new();
        let mut n_in = arch.input_len;
        for &n_out in &arch.fc_sizes {
            fc.push(Linear { n_in, n_out, weight: vec![T::zero(); n_in * n_out], bias: vec![T::zero(); n_out] });
            n_in = n_out;
        }
        let geoms = arch.conv_geometries();
        let last = geoms.len() - 1;
        let deconv = geoms
            .iter()
            .enumerate()
            .map(|(i, g)| Deconv {
                geometry: *g,
                weight: vec![T::zero(); g.weight_shape().iter().product()],
                bias: (i == last).then(|| vec![T::zero(); g.c_out]),
            })
            .collect();
        let bn = geoms[..last]
            .iter()
            .map(|g| BatchNorm {
                gamma: vec![T::one(); g.c_out],
                beta: vec![T::zero(); g.c_out],
                running_mean: vec![T::zero(); g.c_out],
                running_var: vec![T::one(); g.c_out],
            })
            .collect();
        let e = geoms[last].output;
        let mask = inside_mask().into_iter().map(|m| if m { T::one() } else { T::zero() }).collect();
        Ok(Self { arch: arch.clone(), fc, deconv, bn, resampler: Resampler::new(e, arch.output_grid), mask })
    }

    /// Uniform initialization in `±1/sqrt(fan_in)`, with `fan_in` the input
    /// width for dense layers and `c_in·k³` for transposed convolutions.
    pub fn init(arch: &Architecture, rng: &mut impl Rng) -> Result<Self, NetError> {
        let mut net = Self::zeros(arch)?;
        let mut fill = |v: &mut [T], fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            for x in v {
                *x = T::of(rng.random_range(-b..b));
            }
        };
        for l in &mut net.fc {
            fill(&mut l.weight, l.n_in);
            fill(&mut l.bias, l.n_in);
        }
        for d in &mut net.deconv {
            let fan_in = d.geometry.c_in * d.geometry.kernel.pow(3);
            fill(&mut d.weight, fan_in);
            if let Some(b) = &mut d.bias {
                fill(b, fan_in);
            }
        }
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn output_len(&self) -> usize {
        self.resampler.dst_len()
    }

    pub fn param_info(&self) -> Vec<ParamInfo> {
        let p = |name: String, len: usize, decay: bool| ParamInfo { name, len, decay };
        let mut out = Vec::new();
        for (i, l) in self.fc.iter().enumerate() {
            out.push(p(format!("fc{i}.weight"), l.weight.len(), true));
            out.push(p(format!("fc{i}.bias"), l.bias.len(), false));
        }
        for (i, d) in self.deconv.iter().enumerate() {
            out.push(p(format!("deconv{i}.weight"), d.weight.len(), true));
            if let Some(b) = &d.bias {
                out.push(p(format!("deconv{i}.bias"), b.len(), false));
            }
            if let Some(bn) = self.bn.get(i) {
                out.push(p(format!("bn{i}.gamma"), bn.gamma.len(), false));
                out.push(p(format!("bn{i}.beta"), bn.beta.len(), false));
            }
        }
        out
    }

    /// Trainable tensors in canonical order.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for l in &self.fc {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for (i, d) in self.deconv.iter().enumerate() {
            out.push(&d.weight);
            if let Some(b) = &d.bias {
                out.push(b);
            }
            if let Some(bn) = self.bn.get(i) {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for l in &mut self.fc {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        let mut bns = self.bn.iter_mut();
        for d in &mut self.deconv {
            out.push(&mut d.weight);
            if let Some(b) = &mut d.bias {
                out.push(b);
            }
            if let Some(bn) = bns.next() {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    /// Running statistics in order (mean then variance per layer).
    pub fn buffers(&self) -> Vec<&[T]> {
        self.bn.iter().flat_map(|b| [&b.running_mean[..], &b.running_var[..]]).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [T]> {
        self.bn.iter_mut().flat_map(|b| [&mut b.running_mean[..], &mut b.running_var[..]]).collect()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads { tensors: self.params().iter().map(|p| vec![T::zero(); p.len()]).collect() }
    }

    pub fn cast<U: Float>(&self) -> TnNet<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.wide())).collect::<Vec<U>>();
        TnNet {
            arch: self.arch.clone(),
            fc: self
                .fc
                .iter()
                .map(|l| Linear { n_in: l.n_in, n_out: l.n_out, weight: c(&l.weight), bias: c(&l.bias) })
                .collect(),
            deconv: self
                .deconv
                .iter()
                .map(|d| Deconv { geometry: d.geometry, weight: c(&d.weight), bias: d.bias.as_deref().map(c) })
                .collect(),
            bn: self
                .bn
                .iter()
                .map(|b| BatchNorm {
                    gamma: c(&b.gamma),
                    beta: c(&b.beta),
                    running_mean: c(&b.running_mean),
                    running_var: c(&b.running_var),
                })
                .collect(),
            resampler: self.resampler.clone(),
            mask: c(&self.mask),
        }
    }

    fn check_input(&self, frames: &[T], batch: usize) -> Result<(), NetError> {
        if batch == 0 || frames.len() != batch * self.arch.input_len {
            return Err(NetError::Shape {
                what: "input frames".into(),
                expected: vec![batch, self.arch.input_len],
                actual: vec![frames.len()],
            });
        }
        check("input", frames)
    }

    /// Eval-mode forward: no dropout, batch norm on running statistics.
    /// Returns `batch` masked volumes of the output grid.
    pub fn forward(&self, frames: &[T], batch: usize) -> Result<Vec<T>, NetError> {
        self.check_input(frames, batch)?;
        let mut h = frames.to_vec();
        for (i, l) in self.fc.iter().enumerate() {
            h = linear_forward(&h, batch, &l.weight, &l.bias, l.n_in, l.n_out);
            check(format!("fc{i}"), &h)?;
        }
        let slope = T::of(self.arch.leaky_slope);
        let eps = T::of(self.arch.bn_eps);
        let mut cols = Vec::new();
        for (i, d) in self.deconv.iter().enumerate() {
            let mut y = self.deconv_batch(d, &h, batch, &mut cols);
            if let Some(bn) = self.bn.get(i) {
                let spatial = d.geometry.output_len();
                batch_norm_eval(&mut y, d.geometry.c_out, spatial, &bn.running_mean, &bn.running_var, eps);
                y = affine_leaky_relu(&y, d.geometry.c_out, spatial, &bn.gamma, &bn.beta, slope);
            } else {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            check(format!("deconv{i}"), &y)?;
            h = y;
        }
        Ok(self.head(&h, batch))
    }

    /// Training-mode forward. Dropout masks come from `rng`; batch norm uses
    /// batch statistics. Running statistics are left untouched, see
    /// [`TnNet::update_running_stats`].
    pub fn forward_train(&self, frames: &[T], batch: usize, rng: &mut impl Rng) -> Result<(Vec<T>, Cache<T>), NetError> {
        self.check_input(frames, batch)?;
        let p = self.arch.dropout_rate;
        let keep = T::of(1.0 / (1.0 - p));
        let mut fc_inputs = Vec::with_capacity(self.fc.len());
        let mut dropout_masks = Vec::with_capacity(self.fc.len());
        let mut h = frames.to_vec();
        for (i, l) in self.fc.iter().enumerate() {
            let mut z = linear_forward(&h, batch, &l.weight, &l.bias, l.n_in, l.n_out);
            let mask = (p > 0.0).then(|| {
                (0..z.len()).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect::<Vec<T>>()
            });
            if let Some(m) = &mask {
                z.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
            }
            check(format!("fc{i}"), &z)?;
            fc_inputs.push(std::mem::replace(&mut h, z));
            dropout_masks.push(mask);
        }
        let latent = h;
        let slope = T::of(self.arch.leaky_slope);
        let eps = T::of(self.arch.bn_eps);
        let mut xhat = Vec::with_capacity(self.bn.len());
        let mut stats = Vec::with_capacity(self.bn.len());
        let mut cols = Vec::new();
        let mut act: Option<Vec<T>> = None;
        let mut tanh_out = Vec::new();
        for (i, d) in self.deconv.iter().enumerate() {
            let input = act.as_deref().unwrap_or(&latent);
            let mut y = self.deconv_batch(d, input, batch, &mut cols);
            let (c, spatial) = (d.geometry.c_out, d.geometry.output_len());
            if let Some(bn) = self.bn.get(i) {
                stats.push(batch_norm_train(&mut y, batch, c, spatial, eps));
                let u = affine_leaky_relu(&y, c, spatial, &bn.gamma, &bn.beta, slope);
                check(format!("deconv{i}"), &u)?;
                xhat.push(y);
                act = Some(u);
            } else {
                y.iter_mut().for_each(|v| *v = v.tanh());
                check(format!("deconv{i}"), &y)?;
                tanh_out = y;
            }
        }
        let out = self.head(&tanh_out, batch);
        Ok((out, Cache { batch, fc_inputs, dropout_masks, latent, xhat, stats, tanh_out }))
    }

    fn deconv_batch(&self, d: &Deconv<T>, input: &[T], batch: usize, cols: &mut Vec<T>) -> Vec<T> {
        let g = &d.geometry;
        let (n_in, n_out) = (g.c_in * g.input_len(), g.c_out * g.output_len());
        let mut y = vec![T::zero(); batch * n_out];
        for (x, o) in input.chunks_exact(n_in).zip(y.chunks_exact_mut(n_out)) {
            conv_transpose_sample(g, &d.weight, d.bias.as_deref(), x, cols, o);
        }
        y
    }

    fn head(&self, volumes: &[T], batch: usize) -> Vec<T> {
        let (src, dst) = (self.resampler.src_len(), self.resampler.dst_len());
        let mut out = vec![T::zero(); batch * dst];
        for (v, o) in volumes.chunks_exact(src).zip(out.chunks_exact_mut(dst)) {
            self.resampler.forward(v, o);
            o.iter_mut().zip(&self.mask).for_each(|(x, &m)| *x *= m);
        }
        out
    }

    /// Which leaky-ReLU inputs of a cached pass are negative. Two passes with
    /// different patterns straddle a kink, where finite differences are
    /// meaningless.
    pub fn kink_pattern(&self, cache: &Cache<T>) -> Vec<bool> {
        let mut out = Vec::new();
        for (i, bn) in self.bn.iter().enumerate() {
            let spatial = self.deconv[i].geometry.output_len();
            let c = bn.gamma.len();
            for (k, block) in cache.xhat[i].chunks_exact(spatial).enumerate() {
                let (g, b) = (bn.gamma[k % c], bn.beta[k % c]);
                out.extend(block.iter().map(|&v| g * v + b < T::zero()));
            }
        }
        out
    }

    /// Exponential update of the running statistics from a training pass,
    /// using the unbiased batch variance.
    pub fn update_running_stats(&mut self, cache: &Cache<T>) {
        let m = T::of(self.arch.bn_momentum);
        for (bn, s) in self.bn.iter_mut().zip(&cache.stats) {
            let unbias = if s.count > 1 { T::of(s.count as f64 / (s.count - 1) as f64) } else { T::one() };
            for c in 0..bn.gamma.len() {
                bn.running_mean[c] = (T::one() - m) * bn.running_mean[c] + m * s.mean[c];
                bn.running_var[c] = (T::one() - m) * bn.running_var[c] + m * s.var[c] * unbias;
            }
        }
    }

    /// Gradients of a scalar loss given its gradient w.r.t. the network
    /// output of the cached training pass.
    pub fn backward(&self, cache: &Cache<T>, grad_output: &[T]) -> Result<Grads<T>, NetError> {
        let batch = cache.batch;
        let dst = self.resampler.dst_len();
        if grad_output.len() != batch * dst {
            return Err(NetError::Shape {
                what: "output gradient".into(),
                expected: vec![batch, dst],
                actual: vec![grad_output.len()],
            });
        }
        let mut grads = self.zero_grads();
        let slots = self.grad_slots();

        let src = self.resampler.src_len();
        let mut g = vec![T::zero(); batch * src];
        for (b, gs) in g.chunks_exact_mut(src).enumerate() {
            let go: Vec<T> = grad_output[b * dst..(b + 1) * dst].iter().zip(&self.mask).map(|(&v, &m)| v * m).collect();
            self.resampler.adjoint(&go, gs);
        }
        g.iter_mut().zip(&cache.tanh_out).for_each(|(d, &t)| *d *= T::one() - t * t);

        let slope = T::of(self.arch.leaky_slope);
        let mut cols = Vec::new();
        for (i, d) in self.deconv.iter().enumerate().rev() {
            let geo = &d.geometry;
            let (c, spatial) = (geo.c_out, geo.output_len());
            if let Some(bn) = self.bn.get(i) {
                let (sg, sb) = slots.bn[i];
                let (dgamma, dbeta) = two_mut(&mut grads.tensors, sg, sb);
                batch_norm_backward(
                    &mut g,
                    &cache.xhat[i],
                    batch,
                    c,
                    spatial,
                    &bn.gamma,
                    &bn.beta,
                    slope,
                    &cache.stats[i],
                    dgamma,
                    dbeta,
                );
            }
            let input: Vec<T> = if i == 0 {
                cache.latent.clone()
            } else {
                let prev = &self.deconv[i - 1].geometry;
                let bn = &self.bn[i - 1];
                affine_leaky_relu(&cache.xhat[i - 1], prev.c_out, prev.output_len(), &bn.gamma, &bn.beta, slope)
            };
            let n_in = geo.c_in * geo.input_len();
            let n_out = c * spatial;
            let mut gin = vec![T::zero(); batch * n_in];
            let (sw, sbias) = slots.deconv[i];
            for b in 0..batch {
                let (gw, gb) = match sbias {
                    Some(sb) => {
                        let (w, bb) = two_mut(&mut grads.tensors, sw, sb);
                        (w, Some(bb))
                    }
                    None => (&mut grads.tensors[sw][..], None),
                };
                conv_transpose_sample_backward(
                    geo,
                    &d.weight,
                    &input[b * n_in..(b + 1) * n_in],
                    &g[b * n_out..(b + 1) * n_out],
                    &mut cols,
                    gw,
                    gb,
                    Some(&mut gin[b * n_in..(b + 1) * n_in]),
                );
            }
            g = gin;
        }

        for (i, l) in self.fc.iter().enumerate().rev() {
            if let Some(m) = &cache.dropout_masks[i] {
                g.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
            }
            let (sw, sb) = slots.fc[i];
            let (dw, db) = two_mut(&mut grads.tensors, sw, sb);
            g = linear_backward(&cache.fc_inputs[i], &g, batch, &l.weight, l.n_in, l.n_out, dw, db);
        }
        Ok(grads)
    }

    fn grad_slots(&self) -> Slots {
        let mut s = Slots::default();
        let mut k = 0;
        for _ in &self.fc {
            s.fc.push((k, k + 1));
            k += 2;
        }
        for (i, d) in self.deconv.iter().enumerate() {
            let w = k;
            k += 1;
            let b = d.bias.as_ref().map(|_| {
                k += 1;
                k - 1
            });
            s.deconv.push((w, b));
            if i < self.bn.len() {
                s.bn.push((k, k + 1));
                k += 2;
            }
        }
        s
    }
}

#[derive(Default)]
struct Slots {
    fc: Vec<(usize, usize)>,
    deconv: Vec<(usize, Option<usize>)>,
    bn: Vec<(usize, usize)>,
}

fn two_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// Mean squared error over every element and its gradient.
pub fn mse_loss<T: Float>(output: &[T], target: &[T]) -> (T, Vec<T>) {
    assert_eq!(output.len(), target.len());
    let n = T::of(output.len() as f64);
    let mut loss = 0.0f64;
    let grad = output
        .iter()
        .zip(target)
        .map(|(&o, &t)| {
            let d = o - t;
            loss += (d * d).wide();
            T::of(2.0) * d / n
        })
        .collect();
    (T::of(loss / output.len() as f64), grad)
}
