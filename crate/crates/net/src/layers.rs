//! Layer kernels. Batched activations are stored `[batch, channel, spatial]`
//! with the spatial block row-major (depth, height, width).

use crate::float::Float;
use crate::tensor::Tensor;
use crate::NetError;

/// Output extent of a transposed convolution along one axis.
pub fn transposed_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    ((input.checked_sub(1)? * stride) + kernel).checked_sub(2 * padding)
}

/// Geometry of one transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeometry {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize, input: [usize; 3]) -> Option<Self> {
        if kernel == 0 || stride == 0 {
            return None;
        }
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = transposed_extent(input[a], kernel, stride, padding).filter(|&o| o > 0)?;
        }
        Some(Self { c_in, c_out, kernel, stride, padding, input, output })
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output.iter().product()
    }

    fn taps(&self) -> usize {
        self.kernel.pow(3)
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        [self.c_in, self.c_out, self.kernel, self.kernel, self.kernel]
    }

    /// Input indices along `axis` whose scatter with kernel offset `k` lands
    /// inside the output.
    fn valid_range(&self, axis: usize, k: usize) -> std::ops::Range<usize> {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let k = k as isize;
        let lo = (p - k).max(0);
        let lo = (lo + s - 1) / s;
        let hi = (self.output[axis] as isize - 1 + p - k).div_euclid(s) + 1;
        let hi = hi.min(self.input[axis] as isize);
        if hi <= lo {
            0..0
        } else {
            lo as usize..hi as usize
        }
    }

    #[inline]
    fn out_index(&self, i: usize, k: usize) -> usize {
        i * self.stride + k - self.padding
    }

    /// Visits every (column row, input offset, output offset) triple of
    /// the scatter for one output channel's kernel taps.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [_, ih, iw] = self.input;
        let [_, oh, ow] = self.output;
        let k = self.kernel;
        for kz in 0..k {
            let rz = self.valid_range(0, kz);
            for ky in 0..k {
                let ry = self.valid_range(1, ky);
                for kx in 0..k {
                    let rx = self.valid_range(2, kx);
                    if rx.is_empty() {
                        continue;
                    }
                    let tap = (kz * k + ky) * k + kx;
                    for iz in rz.clone() {
                        let oz = self.out_index(iz, kz);
                        for iy in ry.clone() {
                            let oy = self.out_index(iy, ky);
                            let src = (iz * ih + iy) * iw;
                            let dst = (oz * oh + oy) * ow;
                            f(tap, src + rx.start, dst + self.out_index(rx.start, kx), rx.len());
                        }
                    }
                }
            }
        }
    }
}

/// Forward transposed convolution for one sample. `input` is `c_in` blocks of
/// the input volume, the result is `c_out` blocks of the output volume.
pub(crate) fn conv_transpose_sample<T: Float>(
    g: &ConvGeometry,
    weight: &[T],
    bias: Option<&[T]>,
    input: &[T],
    cols: &mut Vec<T>,
    out: &mut [T],
) {
    let n_in = g.input_len();
    let n_out = g.output_len();
    let rows = g.c_out * g.taps();
    cols.clear();
    cols.resize(rows * n_in, T::zero());
    T::gemm(
        rows,
        g.c_in,
        n_in,
        T::one(),
        (weight, 1, rows as isize),
        (input, n_in as isize, 1),
        T::zero(),
        (cols, n_in as isize, 1),
    );
    for (co, o) in out.chunks_exact_mut(n_out).enumerate().take(g.c_out) {
        o.fill(bias.map_or(T::zero(), |b| b[co]));
        let base = co * g.taps();
        let stride = g.stride;
        g.for_each_tap(|tap, src, dst, len| {
            let c = &cols[(base + tap) * n_in + src..][..len];
            for (x, &v) in c.iter().enumerate() {
                o[dst + x * stride] += v;
            }
        });
    }
}

/// Backward of [`conv_transpose_sample`]: accumulates weight and bias
/// gradients and optionally writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose_sample_backward<T: Float>(
    g: &ConvGeometry,
    weight: &[T],
    input: &[T],
    grad_out: &[T],
    cols: &mut Vec<T>,
    grad_weight: &mut [T],
    grad_bias: Option<&mut [T]>,
    grad_input: Option<&mut [T]>,
) {
    let n_in = g.input_len();
    let n_out = g.output_len();
    let rows = g.c_out * g.taps();
    cols.clear();
    cols.resize(rows * n_in, T::zero());
    for co in 0..g.c_out {
        let o = &grad_out[co * n_out..(co + 1) * n_out];
        let base = co * g.taps();
        let stride = g.stride;
        g.for_each_tap(|tap, src, dst, len| {
            let c = &mut cols[(base + tap) * n_in + src..][..len];
            for (x, v) in c.iter_mut().enumerate() {
                *v = o[dst + x * stride];
            }
        });
    }
    if let Some(gb) = grad_bias {
        for co in 0..g.c_out {
            gb[co] += grad_out[co * n_out..(co + 1) * n_out].iter().copied().sum::<T>();
        }
    }
    T::gemm(
        g.c_in,
        n_in,
        rows,
        T::one(),
        (input, n_in as isize, 1),
        (cols, 1, n_in as isize),
        T::one(),
        (grad_weight, rows as isize, 1),
    );
    if let Some(gi) = grad_input {
        T::gemm(
            g.c_in,
            rows,
            n_in,
            T::one(),
            (weight, rows as isize, 1),
            (cols, n_in as isize, 1),
            T::zero(),
            (gi, n_in as isize, 1),
        );
    }
}

/// Transposed 3D convolution of a `[C_in, D, H, W]` tensor with weights laid
/// out `[C_in, C_out, k, k, k]`.
pub fn conv_transpose3d_forward<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, NetError> {
    let (is, ws) = (input.shape(), weight.shape());
    let bad = || NetError::Shape {
        what: "transposed convolution input vs weight".into(),
        expected: ws.to_vec(),
        actual: is.to_vec(),
    };
    if is.len() != 4 || ws.len() != 5 || ws[0] != is[0] || ws[2] != ws[3] || ws[3] != ws[4] {
        return Err(bad());
    }
    let g = ConvGeometry::new(is[0], ws[1], ws[2], stride, padding, [is[1], is[2], is[3]]).ok_or_else(bad)?;
    if let Some(b) = bias {
        if b.len() != g.c_out {
            return Err(NetError::Shape { what: "transposed convolution bias".into(), expected: vec![g.c_out], actual: vec![b.len()] });
        }
    }
    let mut out = Tensor::zeros(&[g.c_out, g.output[0], g.output[1], g.output[2]]);
    conv_transpose_sample(&g, weight.data(), bias, input.data(), &mut Vec::new(), out.data_mut());
    Ok(out)
}

/// `y = x w^T + b` for `batch` rows; `w` is `[out, in]`.
pub(crate) fn linear_forward<T: Float>(x: &[T], batch: usize, w: &[T], b: &[T], n_in: usize, n_out: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(batch * n_out);
    for _ in 0..batch {
        y.extend_from_slice(b);
    }
    T::gemm(batch, n_in, n_out, T::one(), (x, n_in as isize, 1), (w, 1, n_in as isize), T::one(), (&mut y, n_out as isize, 1));
    y
}

/// Returns the input gradient and accumulates weight and bias gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Float>(
    x: &[T],
    dy: &[T],
    batch: usize,
    w: &[T],
    n_in: usize,
    n_out: usize,
    dw: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    for row in dy.chunks_exact(n_out) {
        for (g, &d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
    T::gemm(n_out, batch, n_in, T::one(), (dy, 1, n_out as isize), (x, n_in as isize, 1), T::one(), (dw, n_in as isize, 1));
    let mut dx = vec![T::zero(); batch * n_in];
    T::gemm(batch, n_out, n_in, T::one(), (dy, n_out as isize, 1), (w, n_in as isize, 1), T::zero(), (&mut dx, n_in as isize, 1));
    dx
}

/// Batch statistics saved by a training-mode batch norm.
#[derive(Debug, Clone)]
pub(crate) struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    /// Values per channel, used for the unbiased running variance.
    pub count: usize,
}

/// Normalizes `x` in place with batch statistics, leaving `xhat`.
pub(crate) fn batch_norm_train<T: Float>(x: &mut [T], batch: usize, channels: usize, spatial: usize, eps: T) -> BnStats<T> {
    let count = batch * spatial;
    let mut mean = vec![T::zero(); channels];
    let mut var = vec![T::zero(); channels];
    for c in 0..channels {
        let blocks = || (0..batch).map(|b| &x[(b * channels + c) * spatial..][..spatial]);
        let s: f64 = blocks().flat_map(|v| v.iter()).map(|v| v.wide()).sum();
        let m = s / count as f64;
        let q: f64 = blocks().flat_map(|v| v.iter()).map(|v| (v.wide() - m).powi(2)).sum();
        mean[c] = T::of(m);
        var[c] = T::of(q / count as f64);
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    for (i, block) in x.chunks_exact_mut(spatial).enumerate() {
        let c = i % channels;
        let (m, is) = (mean[c], inv_std[c]);
        for v in block {
            *v = (*v - m) * is;
        }
    }
    BnStats { mean, var, inv_std, count }
}

/// Running-statistics normalization in place, leaving `xhat`.
pub(crate) fn batch_norm_eval<T: Float>(x: &mut [T], channels: usize, spatial: usize, running_mean: &[T], running_var: &[T], eps: T) {
    for (i, block) in x.chunks_exact_mut(spatial).enumerate() {
        let c = i % channels;
        let is = T::one() / (running_var[c] + eps).sqrt();
        let m = running_mean[c];
        for v in block {
            *v = (*v - m) * is;
        }
    }
}

/// `leaky_relu(gamma * xhat + beta)` per channel.
pub(crate) fn affine_leaky_relu<T: Float>(xhat: &[T], channels: usize, spatial: usize, gamma: &[T], beta: &[T], slope: T) -> Vec<T> {
    let mut out = Vec::with_capacity(xhat.len());
    for (i, block) in xhat.chunks_exact(spatial).enumerate() {
        let c = i % channels;
        let (g, b) = (gamma[c], beta[c]);
        out.extend(block.iter().map(|&v| {
            let z = g * v + b;
            if z < T::zero() {
                z * slope
            } else {
                z
            }
        }));
    }
    out
}

/// Backward through `leaky_relu(gamma * xhat + beta)` and the batch
/// normalization. Overwrites `grad` (w.r.t. the activation) with the gradient
/// w.r.t. the normalization input and accumulates scale/shift gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_backward<T: Float>(
    grad: &mut [T],
    xhat: &[T],
    batch: usize,
    channels: usize,
    spatial: usize,
    gamma: &[T],
    beta: &[T],
    slope: T,
    stats: &BnStats<T>,
    dgamma: &mut [T],
    dbeta: &mut [T],
) {
    let n = T::of(stats.count as f64);
    for c in 0..channels {
        let (g, b) = (gamma[c], beta[c]);
        let mut sum_dz = T::zero();
        let mut sum_dz_xhat = T::zero();
        for bi in 0..batch {
            let off = (bi * channels + c) * spatial;
            for (d, &xh) in grad[off..off + spatial].iter_mut().zip(&xhat[off..off + spatial]) {
                if g * xh + b < T::zero() {
                    *d *= slope;
                }
                sum_dz += *d;
                sum_dz_xhat += *d * xh;
            }
        }
        dgamma[c] += sum_dz_xhat;
        dbeta[c] += sum_dz;
        let k = g * stats.inv_std[c] / n;
        for bi in 0..batch {
            let off = (bi * channels + c) * spatial;
            for (d, &xh) in grad[off..off + spatial].iter_mut().zip(&xhat[off..off + spatial]) {
                *d = k * (n * *d - sum_dz - xh * sum_dz_xhat);
            }
        }
    }
}

/// One axis of an align-corners linear interpolation.
#[derive(Debug, Clone, PartialEq)]
struct AxisTable {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

impl AxisTable {
    fn new(src: usize, dst: usize) -> Self {
        let mut t = AxisTable { lo: Vec::with_capacity(dst), hi: Vec::with_capacity(dst), frac: Vec::with_capacity(dst) };
        for i in 0..dst {
            let pos = if dst > 1 { i as f64 * (src - 1) as f64 / (dst - 1) as f64 } else { 0.0 };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            t.lo.push(lo);
            t.hi.push(hi);
            t.frac.push(pos - lo as f64);
        }
        t
    }
}

/// Align-corners trilinear resampling between fixed `(depth, height, width)`
/// extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampler {
    src: [usize; 3],
    dst: [usize; 3],
    axes: [AxisTable; 3],
}

impl Resampler {
    pub fn new(src: [usize; 3], dst: [usize; 3]) -> Self {
        assert!(src.iter().chain(&dst).all(|&n| n > 0), "resampler extents must be positive");
        let axes = [AxisTable::new(src[0], dst[0]), AxisTable::new(src[1], dst[1]), AxisTable::new(src[2], dst[2])];
        Self { src, dst, axes }
    }

    pub fn src(&self) -> [usize; 3] {
        self.src
    }

    pub fn dst(&self) -> [usize; 3] {
        self.dst
    }

    pub fn src_len(&self) -> usize {
        self.src.iter().product()
    }

    pub fn dst_len(&self) -> usize {
        self.dst.iter().product()
    }

    /// Visits the eight source indices and weights of each target sample.
    fn for_each<F: FnMut(usize, [(usize, f64); 8])>(&self, mut f: F) {
        let [_, sh, sw] = self.src;
        let [az, ay, ax] = &self.axes;
        let mut i = 0;
        for z in 0..self.dst[0] {
            let (z0, z1, fz) = (az.lo[z], az.hi[z], az.frac[z]);
            for y in 0..self.dst[1] {
                let (y0, y1, fy) = (ay.lo[y], ay.hi[y], ay.frac[y]);
                for x in 0..self.dst[2] {
                    let (x0, x1, fx) = (ax.lo[x], ax.hi[x], ax.frac[x]);
                    let idx = |zz: usize, yy: usize, xx: usize| (zz * sh + yy) * sw + xx;
                    f(
                        i,
                        [
                            (idx(z0, y0, x0), (1.0 - fz) * (1.0 - fy) * (1.0 - fx)),
                            (idx(z0, y0, x1), (1.0 - fz) * (1.0 - fy) * fx),
                            (idx(z0, y1, x0), (1.0 - fz) * fy * (1.0 - fx)),
                            (idx(z0, y1, x1), (1.0 - fz) * fy * fx),
                            (idx(z1, y0, x0), fz * (1.0 - fy) * (1.0 - fx)),
                            (idx(z1, y0, x1), fz * (1.0 - fy) * fx),
                            (idx(z1, y1, x0), fz * fy * (1.0 - fx)),
                            (idx(z1, y1, x1), fz * fy * fx),
                        ],
                    );
                    i += 1;
                }
            }
        }
    }

    pub fn forward<T: Float>(&self, src: &[T], dst: &mut [T]) {
        assert_eq!(src.len(), self.src_len());
        assert_eq!(dst.len(), self.dst_len());
        self.for_each(|i, corners| {
            dst[i] = corners.iter().map(|&(j, w)| src[j] * T::of(w)).sum();
        });
    }

    /// Adjoint of [`Resampler::forward`], accumulated into `dsrc`.
    pub fn adjoint<T: Float>(&self, ddst: &[T], dsrc: &mut [T]) {
        assert_eq!(ddst.len(), self.dst_len());
        assert_eq!(dsrc.len(), self.src_len());
        self.for_each(|i, corners| {
            for (j, w) in corners {
                dsrc[j] += ddst[i] * T::of(w);
            }
        });
    }

    /// Source corners of target sample `i`, for tests.
    pub fn corners(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each(|k, c| {
            if k == i {
                out = c.iter().map(|&(j, _)| j).collect();
            }
        });
        out
    }
}

/// Resamples a `[D, H, W]` tensor to the given extents.
pub fn trilinear_resample<T: Float>(volume: &Tensor<T>, dst: [usize; 3]) -> Result<Tensor<T>, NetError> {
    let s = volume.shape();
    if s.len() != 3 {
        return Err(NetError::Shape { what: "resample input".into(), expected: vec![0, 0, 0], actual: s.to_vec() });
    }
    let r = Resampler::new([s[0], s[1], s[2]], dst);
    let mut out = Tensor::zeros(&dst);
    r.forward(volume.data(), out.data_mut());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn output_extent_formula() {
        assert_eq!(transposed_extent(4, 4, 2, 1), Some(8));
        assert_eq!(transposed_extent(1, 4, 2, 0), Some(4));
        let g = ConvGeometry::new(16, 8, 4, 2, 1, [4, 4, 4]).unwrap();
        assert_eq!(g.output, [8, 8, 8]);
    }

    #[test]
    fn single_voxel_scatters_the_kernel() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0f32]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 4, 4, 4], vec![1.0f32; 64]).unwrap();
        let y = conv_transpose3d_forward(&x, &w, None, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mismatched_channels_rejected() {
        let x = Tensor::<f32>::zeros(&[2, 3, 3, 3]);
        let w = Tensor::<f32>::zeros(&[3, 1, 4, 4, 4]);
        let err = conv_transpose3d_forward(&x, &w, None, 2, 1).unwrap_err().to_string();
        assert!(err.contains("[3, 1, 4, 4, 4]") && err.contains("[2, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn conv_backward_is_the_adjoint_of_forward() {
        // <y, F x> = <F^T y, x> for the input map and likewise for weights.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ConvGeometry::new(3, 2, 4, 2, 1, [3, 4, 2]).unwrap();
        let w = random(3 * 2 * 64, &mut rng);
        let x = random(3 * g.input_len(), &mut rng);
        let dy = random(2 * g.output_len(), &mut rng);
        let mut y = vec![0.0; 2 * g.output_len()];
        conv_transpose_sample(&g, &w, None, &x, &mut Vec::new(), &mut y);
        let mut dw = vec![0.0; w.len()];
        let mut dx = vec![0.0; x.len()];
        conv_transpose_sample_backward(&g, &w, &x, &dy, &mut Vec::new(), &mut dw, None, Some(&mut dx));
        let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let via_x: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        let via_w: f64 = dw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-12 * lhs.abs().max(1.0));
        assert!((lhs - via_w).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn linear_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (b, n_in, n_out) = (3, 5, 4);
        let w = random(n_in * n_out, &mut rng);
        let x = random(b * n_in, &mut rng);
        let dy = random(b * n_out, &mut rng);
        let y = linear_forward(&x, b, &w, &vec![0.0; n_out], n_in, n_out);
        for r in 0..b {
            for o in 0..n_out {
                let want: f64 = (0..n_in).map(|i| x[r * n_in + i] * w[o * n_in + i]).sum();
                assert!((y[r * n_out + o] - want).abs() < 1e-14);
            }
        }
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; n_out];
        let dx = linear_backward(&x, &dy, b, &w, n_in, n_out, &mut dw, &mut db);
        let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let via_x: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        let via_w: f64 = dw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-12);
        assert!((lhs - via_w).abs() < 1e-12);
        let col: f64 = (0..b).map(|r| dy[r * n_out + 2]).sum();
        assert!((db[2] - col).abs() < 1e-15);
    }

    #[test]
    fn batch_norm_normalizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (b, c, s) = (2, 3, 10);
        let mut x: Vec<f64> = random(b * c * s, &mut rng).iter().map(|v| 3.0 * v + 1.0).collect();
        batch_norm_train(&mut x, b, c, s, 0.0);
        for ch in 0..c {
            let vals: Vec<f64> = (0..b).flat_map(|bb| x[(bb * c + ch) * s..][..s].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|t| (t - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn resample_reproduces_constants_and_ramps() {
        let r = Resampler::new([64, 64, 64], [40, 32, 32]);
        let c = vec![0.37f64; r.src_len()];
        let mut out = vec![0.0; r.dst_len()];
        r.forward(&c, &mut out);
        assert!(out.iter().all(|v| (v - 0.37).abs() < 1e-14));

        let ramp: Vec<f64> = (0..r.src_len()).map(|i| (i / (64 * 64)) as f64 / 63.0).collect();
        r.forward(&ramp, &mut out);
        for z in 0..40 {
            let want = z as f64 / 39.0;
            for i in 0..32 * 32 {
                assert!((out[z * 1024 + i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resample_stays_within_source_corners() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = Resampler::new([64, 64, 64], [40, 32, 32]);
        let src = random(r.src_len(), &mut rng);
        let mut out = vec![0.0; r.dst_len()];
        r.forward(&src, &mut out);
        for i in (0..r.dst_len()).step_by(97) {
            let vals: Vec<f64> = r.corners(i).iter().map(|&j| src[j]).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(out[i] >= lo - 1e-12 && out[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn resample_adjoint_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = Resampler::new([8, 6, 5], [5, 4, 7]);
        let x = random(r.src_len(), &mut rng);
        let y = random(r.dst_len(), &mut rng);
        let mut fx = vec![0.0; r.dst_len()];
        r.forward(&x, &mut fx);
        let mut aty = vec![0.0; r.src_len()];
        r.adjoint(&y, &mut aty);
        let a: f64 = fx.iter().zip(&y).map(|(p, q)| p * q).sum();
        let b: f64 = aty.iter().zip(&x).map(|(p, q)| p * q).sum();
        assert!((a - b).abs() < 1e-12);
    }
}
