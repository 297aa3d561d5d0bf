//! Stateless forward/backward kernels over NCHW tensors.
//!
//! Everything here is a pure function of its arguments; the layer nodes in
//! [`crate::layers`] own parameters and caches and call into these.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of a 2-D convolution. The weight tensor is
/// `[out_channels, in_channels / groups, kernel, kernel]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self { in_channels, out_channels, kernel, stride: 1, padding: 0, groups: 1, bias: false }
    }

    /// `k`×`k` depthwise convolution: one filter per channel.
    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        Self::new(channels, channels, kernel).groups(channels)
    }

    /// 1×1 convolution.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1)
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels / self.groups, self.kernel, self.kernel]
    }

    pub fn fan_in(&self) -> usize {
        (self.in_channels / self.groups) * self.kernel * self.kernel
    }

    pub fn validate(&self) -> Result<()> {
        let Self { in_channels, out_channels, kernel, stride, groups, .. } = *self;
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(Error::layer("conv2d", "channels and kernel must be positive"));
        }
        if stride == 0 {
            return Err(Error::layer("conv2d", "stride must be at least 1"));
        }
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::layer(
                "conv2d",
                format!("groups={groups} must divide both in_channels={in_channels} and out_channels={out_channels}"),
            ));
        }
        Ok(())
    }

    /// Output spatial extent for an input extent.
    pub fn output_extent(&self, input: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::layer(
                "conv2d",
                format!("kernel {} larger than padded input extent {padded}", self.kernel),
            ));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

/// Output positions `o` in `[lo, hi)` whose tap `o*stride + k - pad` lands in
/// `[0, input)`.
/// Dot product with eight interleaved partial sums, so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    lanes.iter().sum::<f64>() + tail
}

/// Sum with eight interleaved partial sums; see [`dot`].
pub(crate) fn lane_sum(a: &[f64]) -> f64 {
    let mut lanes = [0.0; 8];
    let mut chunks = a.chunks_exact(8);
    for x in &mut chunks {
        for i in 0..8 {
            lanes[i] += x[i];
        }
    }
    lanes.iter().sum::<f64>() + chunks.remainder().iter().sum::<f64>()
}

/// Sum of squared deviations from `mean`; see [`dot`].
pub(crate) fn lane_sq_dev(a: &[f64], mean: f64) -> f64 {
    let mut lanes = [0.0; 8];
    let mut chunks = a.chunks_exact(8);
    for x in &mut chunks {
        for i in 0..8 {
            let d = x[i] - mean;
            lanes[i] += d * d;
        }
    }
    lanes.iter().sum::<f64>() + chunks.remainder().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (d, &v) in y.iter_mut().zip(x) {
        *d += alpha * v;
    }
}

/// Column-phase split of one sample for strided convolution: entry
/// `((ch * s + r) * h + y) * wq + q` holds input column `q * s + r`, so every
/// kernel tap reads a contiguous run. Out-of-range slots are zero.
fn phase_split(src: &[f64], c: usize, h: usize, w: usize, s: usize) -> (Vec<f64>, usize) {
    let wq = w.div_ceil(s);
    let mut out = vec![0.0; c * s * h * wq];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..][..w];
            for (x, &v) in row.iter().enumerate() {
                out[((ch * s + x % s) * h + y) * wq + x / s] = v;
            }
        }
    }
    (out, wq)
}

/// Inverse of [`phase_split`] for one sample.
fn phase_merge(phased: &[f64], dst: &mut [f64], c: usize, h: usize, w: usize, s: usize, wq: usize) {
    for ch in 0..c {
        for y in 0..h {
            let row = &mut dst[(ch * h + y) * w..][..w];
            for (x, d) in row.iter_mut().enumerate() {
                *d = phased[((ch * s + x % s) * h + y) * wq + x / s];
            }
        }
    }
}

fn valid_span(out: usize, input: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if input + pad <= k {
        return (0, 0);
    }
    let hi = ((input - 1 + pad - k) / stride + 1).min(out);
    (lo.min(hi), hi)
}

fn check_conv_input(x: &Tensor, weight: &Tensor, spec: &ConvSpec) -> Result<([usize; 4], usize, usize)> {
    spec.validate()?;
    let [n, c, h, w] = x.dims4("conv2d")?;
    if c != spec.in_channels {
        return Err(Error::layer("conv2d", format!("input has {c} channels, layer expects {}", spec.in_channels)));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::layer(
            "conv2d",
            format!("weight shape {:?} does not match {:?}", weight.shape(), spec.weight_shape()),
        ));
    }
    let ho = spec.output_extent(h)?;
    let wo = spec.output_extent(w)?;
    Ok(([n, c, h, w], ho, wo))
}

/// Grouped 2-D convolution with zero padding.
///
/// Output channel `o` in group `g = o / (C_out/G)` reads only input channels
/// `g*(C_in/G) .. (g+1)*(C_in/G)`. Depthwise is `groups == C_in`, pointwise is
/// `kernel == 1`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    let ([n, c, h, w], ho, wo) = check_conv_input(x, weight, spec)?;
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(Error::layer(
                "conv2d",
                format!("bias shape {:?}, expected [{}]", b.shape(), spec.out_channels),
            ));
        }
    }
    let co = spec.out_channels;
    let k = spec.kernel;
    let (s, p) = (spec.stride, spec.padding);
    let cin_g = c / spec.groups;
    let cout_g = co / spec.groups;
    let (in_plane, out_plane) = (h * w, ho * wo);
    let flat_1x1 = k == 1 && s == 1 && p == 0;

    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0.0; n * co * out_plane];

    for b in 0..n {
        let sample = &xd[b * c * in_plane..][..c * in_plane];
        let phased = (s > 1).then(|| phase_split(sample, c, h, w, s));
        for oc in 0..co {
            let g = oc / cout_g;
            let dst = &mut out[(b * co + oc) * out_plane..][..out_plane];
            if let Some(bias) = bias {
                dst.fill(bias.data()[oc]);
            }
            for icl in 0..cin_g {
                let ic = g * cin_g + icl;
                let src = &xd[(b * c + ic) * in_plane..][..in_plane];
                let wbase = (oc * cin_g + icl) * k * k;
                if flat_1x1 {
                    axpy(wd[wbase], src, dst);
                    continue;
                }
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_span(ho, h, ky, s, p);
                    for kx in 0..k {
                        let wv = wd[wbase + ky * k + kx];
                        let (ox_lo, ox_hi) = valid_span(wo, w, kx, s, p);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let drow = &mut dst[oy * wo + ox_lo..oy * wo + ox_hi];
                            let ix0 = ox_lo * s + kx - p;
                            match &phased {
                                None => axpy(wv, &src[iy * w + ix0..(iy + 1) * w], drow),
                                Some((ph, wq)) => {
                                    let row = ((ic * s + ix0 % s) * h + iy) * wq;
                                    axpy(wv, &ph[row + ix0 / s..row + wq], drow);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, co, ho, wo], out))
}

/// Gradients of [`conv2d`]: `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    spec: &ConvSpec,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let ([n, c, h, w], ho, wo) = check_conv_input(x, weight, spec)?;
    let co = spec.out_channels;
    if grad_out.shape() != [n, co, ho, wo] {
        return Err(Error::ShapeMismatch { left: grad_out.shape().to_vec(), right: vec![n, co, ho, wo] });
    }
    let k = spec.kernel;
    let (s, p) = (spec.stride, spec.padding);
    let cin_g = c / spec.groups;
    let cout_g = co / spec.groups;
    let (in_plane, out_plane) = (h * w, ho * wo);
    let flat_1x1 = k == 1 && s == 1 && p == 0;

    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; weight.len()];

    for b in 0..n {
        let sample = &xd[b * c * in_plane..][..c * in_plane];
        let phased = (s > 1).then(|| phase_split(sample, c, h, w, s));
        let mut gphased = phased.as_ref().map(|(ph, _)| vec![0.0; ph.len()]);
        for oc in 0..co {
            let g = oc / cout_g;
            let go = &gd[(b * co + oc) * out_plane..][..out_plane];
            for icl in 0..cin_g {
                let ic = g * cin_g + icl;
                let src = &xd[(b * c + ic) * in_plane..][..in_plane];
                let gsrc = &mut gx[(b * c + ic) * in_plane..][..in_plane];
                let wbase = (oc * cin_g + icl) * k * k;
                if flat_1x1 {
                    axpy(wd[wbase], go, gsrc);
                    gw[wbase] += dot(go, src);
                    continue;
                }
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_span(ho, h, ky, s, p);
                    for kx in 0..k {
                        let wv = wd[wbase + ky * k + kx];
                        let (ox_lo, ox_hi) = valid_span(wo, w, kx, s, p);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let grow = &go[oy * wo + ox_lo..oy * wo + ox_hi];
                            let ix0 = ox_lo * s + kx - p;
                            match (&phased, gphased.as_mut()) {
                                (Some((ph, wq)), Some(gph)) => {
                                    let row = ((ic * s + ix0 % s) * h + iy) * wq;
                                    let span = row + ix0 / s..row + wq;
                                    axpy(wv, grow, &mut gph[span.clone()]);
                                    acc += dot(grow, &ph[span]);
                                }
                                _ => {
                                    let span = iy * w + ix0..(iy + 1) * w;
                                    axpy(wv, grow, &mut gsrc[span.clone()]);
                                    acc += dot(grow, &src[span]);
                                }
                            }
                        }
                        gw[wbase + ky * k + kx] += acc;
                    }
                }
            }
        }
        if let (Some((_, wq)), Some(gph)) = (&phased, &gphased) {
            phase_merge(gph, &mut gx[b * c * in_plane..][..c * in_plane], c, h, w, s, *wq);
        }
    }

    let gb = spec.bias.then(|| {
        let mut gb = vec![0.0; co];
        for b in 0..n {
            for (oc, slot) in gb.iter_mut().enumerate() {
                *slot += gd[(b * co + oc) * out_plane..][..out_plane].iter().sum::<f64>();
            }
        }
        Tensor::from_parts(vec![co], gb)
    });

    Ok((Tensor::from_parts(x.shape().to_vec(), gx), Tensor::from_parts(weight.shape().to_vec(), gw), gb))
}

/// Destination index of input channel `c` under a `groups`-way shuffle of
/// `channels` channels: the `[G, C/G]` channel grid is transposed.
pub fn shuffle_destination(c: usize, channels: usize, groups: usize) -> usize {
    let per = channels / groups;
    (c % per) * groups + c / per
}

fn check_shuffle(x: &Tensor, groups: usize) -> Result<[usize; 4]> {
    let dims = x.dims4("channel_shuffle")?;
    if groups == 0 || dims[1] % groups != 0 {
        return Err(Error::layer(
            "channel_shuffle",
            format!("{} channels not divisible into {groups} groups", dims[1]),
        ));
    }
    Ok(dims)
}

fn permute_channels(x: &Tensor, dims: [usize; 4], dest: impl Fn(usize) -> usize) -> Tensor {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for b in 0..n {
        for ch in 0..c {
            let to = dest(ch);
            out[(b * c + to) * plane..][..plane].copy_from_slice(&src[(b * c + ch) * plane..][..plane]);
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Interleave channel groups so each output group draws from every input
/// group. A pure permutation of channel planes.
pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let dims = check_shuffle(x, groups)?;
    let c = dims[1];
    Ok(permute_channels(x, dims, |ch| shuffle_destination(ch, c, groups)))
}

/// Inverse of [`channel_shuffle`] with the same `groups`.
pub fn channel_unshuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let dims = check_shuffle(x, groups)?;
    let c = dims[1];
    // shuffle sends c -> d; the inverse sends d -> c, i.e. a shuffle with C/G groups.
    Ok(permute_channels(x, dims, |ch| shuffle_destination(ch, c, c / groups)))
}

/// Copy of channels `start .. start + len`.
pub fn channel_slice(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4("channel_slice")?;
    if len == 0 || start + len > c {
        return Err(Error::InvalidArgument(format!(
            "channel range {start}..{} out of bounds for {c} channels",
            start + len
        )));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * len * plane);
    for b in 0..n {
        out.extend_from_slice(&x.data()[(b * c + start) * plane..][..len * plane]);
    }
    Ok(Tensor::from_parts(vec![n, len, h, w], out))
}

/// Add `part` into channels `start ..` of `dst` (which must share N, H, W).
pub(crate) fn add_into_channels(dst: &mut Tensor, part: &Tensor, start: usize) {
    let [n, c, h, w] = dst.dims4("channel_slice").expect("rank-4");
    let len = part.shape()[1];
    let plane = h * w;
    let pd = part.data();
    let dd = dst.data_mut();
    for b in 0..n {
        let d = &mut dd[(b * c + start) * plane..][..len * plane];
        for (a, &v) in d.iter_mut().zip(&pd[b * len * plane..][..len * plane]) {
            *a += v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Relu6,
}

impl ActivationKind {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            ActivationKind::Relu => v.max(0.0),
            ActivationKind::Relu6 => v.clamp(0.0, 6.0),
        }
    }

    /// Derivative at `v`; zero at the kinks.
    pub fn slope(self, v: f64) -> f64 {
        match self {
            ActivationKind::Relu => f64::from(u8::from(v > 0.0)),
            ActivationKind::Relu6 => f64::from(u8::from(v > 0.0 && v < 6.0)),
        }
    }
}

pub fn activation(x: &Tensor, kind: ActivationKind) -> Tensor {
    x.map(|v| kind.apply(v))
}

pub fn activation_backward(x: &Tensor, grad_out: &Tensor, kind: ActivationKind) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch { left: grad_out.shape().to_vec(), right: x.shape().to_vec() });
    }
    let data = x.data().iter().zip(grad_out.data()).map(|(&v, &g)| g * kind.slope(v)).collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

/// 2×2, stride-2 max pooling. Returns the pooled tensor and, per output
/// element, the flat input index that won (first in row-major order on ties).
pub fn maxpool2x2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = x.dims4("maxpool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::layer("maxpool2d", format!("spatial extent {h}x{w} must be even")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, ho, wo], out), argmax))
}

pub fn maxpool2x2_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::layer(
            "maxpool2d",
            format!("gradient has {} elements, forward produced {}", grad_out.len(), argmax.len()),
        ));
    }
    let mut gx = vec![0.0; input_shape.iter().product()];
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gx[idx] += g;
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), gx))
}

/// Per-channel spatial mean: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4("global_avg_pool")?;
    let plane = h * w;
    let data = x.data().chunks_exact(plane).map(|p| p.iter().sum::<f64>() / plane as f64).collect();
    Ok(Tensor::from_parts(vec![n, c], data))
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = match *input_shape {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(Error::layer("global_avg_pool", "input shape must be rank 4")),
    };
    if grad_out.shape() != [n, c] {
        return Err(Error::ShapeMismatch { left: grad_out.shape().to_vec(), right: vec![n, c] });
    }
    let plane = h * w;
    let scale = 1.0 / plane as f64;
    let mut gx = Vec::with_capacity(n * c * plane);
    for &g in grad_out.data() {
        gx.extend(std::iter::repeat_n(g * scale, plane));
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), gx))
}

/// `y = x Wᵀ + b` with `x: [N, F]`, `W: [K, F]`, `b: [K]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, f] = x.dims2("linear")?;
    let [k, wf] = weight.dims2("linear")?;
    if wf != f || bias.shape() != [k] {
        return Err(Error::layer(
            "linear",
            format!("input [{n}, {f}] incompatible with weight {:?} and bias {:?}", weight.shape(), bias.shape()),
        ));
    }
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    let mut out = Vec::with_capacity(n * k);
    for row in xd.chunks_exact(f) {
        for (j, wrow) in wd.chunks_exact(f).enumerate() {
            out.push(bd[j] + row.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    Ok(Tensor::from_parts(vec![n, k], out))
}

/// Gradients of [`linear`]: `(d_input, d_weight, d_bias)`.
pub fn linear_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let [n, f] = x.dims2("linear")?;
    let [k, _] = weight.dims2("linear")?;
    if grad_out.shape() != [n, k] {
        return Err(Error::ShapeMismatch { left: grad_out.shape().to_vec(), right: vec![n, k] });
    }
    let (xd, wd, gd) = (x.data(), weight.data(), grad_out.data());
    let mut gx = vec![0.0; n * f];
    let mut gw = vec![0.0; k * f];
    let mut gb = vec![0.0; k];
    for i in 0..n {
        let xrow = &xd[i * f..][..f];
        let gxrow = &mut gx[i * f..][..f];
        for j in 0..k {
            let g = gd[i * k + j];
            gb[j] += g;
            let wrow = &wd[j * f..][..f];
            let gwrow = &mut gw[j * f..][..f];
            for t in 0..f {
                gxrow[t] += g * wrow[t];
                gwrow[t] += g * xrow[t];
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, f], gx), Tensor::from_parts(vec![k, f], gw), Tensor::from_parts(vec![k], gb)))
}
