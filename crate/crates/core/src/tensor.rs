//! Dense NHWC tensor kernels.
//!
//! Everything in the network bottoms out here: standard, depthwise and
//! pointwise convolution, inference-mode batch normalization, activations and
//! elementwise addition. Layout is row-major with channels innermost, so a 1×1
//! convolution is a matrix multiply per pixel.
//!
//! All kernels accumulate in `f32` and are pure functions of their inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Height × width × channels activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::config(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::config(format!(
                "feature map data has {} values, expected {}x{}x{} = {}",
                data.len(),
                height,
                width,
                channels,
                height * width * channels
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    /// # Panics
    /// If any dimension is zero.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "zero-sized feature map");
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    /// Builds a map by evaluating `f(row, col, channel)` for every element.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut map = Self::zeros(height, width, channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    map.data[(r * width + c) * channels + ch] = f(r, c, ch);
                }
            }
        }
        map
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f32) {
        self.data[(row * self.width + col) * self.channels + channel] = value;
    }

    /// All channels of one cell.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Size of the tensor in bytes when stored as 32-bit reals.
    pub fn byte_len(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding so that the output is `ceil(input / stride)`; odd padding
    /// goes to the bottom/right.
    Same,
    Valid,
}

impl Padding {
    /// Output extent and leading (top/left) padding along one axis.
    pub fn output_extent(self, input: usize, kernel: usize, stride: usize) -> Option<(usize, usize)> {
        match self {
            Padding::Same => {
                let out = input.div_ceil(stride);
                let needed = ((out - 1) * stride + kernel).saturating_sub(input);
                Some((out, needed / 2))
            }
            Padding::Valid => {
                if input < kernel {
                    None
                } else {
                    Some(((input - kernel) / stride + 1, 0))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Window {
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

fn window(input: &FeatureMap, kernel: (usize, usize), stride: usize, padding: Padding) -> Result<Window> {
    let (out_h, pad_top) = padding
        .output_extent(input.height, kernel.0, stride)
        .ok_or_else(|| Error::config(format!("input height {} smaller than kernel {}", input.height, kernel.0)))?;
    let (out_w, pad_left) = padding
        .output_extent(input.width, kernel.1, stride)
        .ok_or_else(|| Error::config(format!("input width {} smaller than kernel {}", input.width, kernel.1)))?;
    Ok(Window { out_h, out_w, pad_top, pad_left })
}

#[inline]
fn source_index(out: usize, tap: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (out * stride + tap).checked_sub(pad)?;
    (pos < extent).then_some(pos)
}

#[inline]
fn axpy(acc: &mut [f32], x: f32, w: &[f32]) {
    for (a, w) in acc.iter_mut().zip(w) {
        *a += x * w;
    }
}

/// Standard k×k convolution parameters.
///
/// `weights` are laid out `[out_channels][in_channels][kh][kw]`; a
/// pixel-major copy is kept internally for the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    kernel: (usize, usize),
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    padding: Padding,
    weights: Vec<f32>,
    bias: Option<Vec<f32>>,
    packed: Vec<f32>,
}

impl ConvSpec {
    pub fn new(
        kernel: (usize, usize),
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: Padding,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        if kh == 0 || kw == 0 || in_channels == 0 || out_channels == 0 || stride == 0 {
            return Err(Error::config("conv kernel, channels and stride must be positive"));
        }
        if weights.len() != out_channels * in_channels * kh * kw {
            return Err(Error::config(format!(
                "conv weights have {} values, expected {out_channels}x{in_channels}x{kh}x{kw}",
                weights.len()
            )));
        }
        check_bias(&bias, out_channels)?;
        let mut packed = vec![0.0; weights.len()];
        for co in 0..out_channels {
            for ci in 0..in_channels {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let src = ((co * in_channels + ci) * kh + ky) * kw + kx;
                        let dst = ((ky * kw + kx) * in_channels + ci) * out_channels + co;
                        packed[dst] = weights[src];
                    }
                }
            }
        }
        Ok(Self { kernel, in_channels, out_channels, stride, padding, weights, bias, packed })
    }

    pub fn kernel(&self) -> (usize, usize) {
        self.kernel
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    pub fn weight(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f32 {
        let (kh, kw) = self.kernel;
        self.weights[((co * self.in_channels + ci) * kh + ky) * kw + kx]
    }
}

fn check_bias(bias: &Option<Vec<f32>>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => {
            Err(Error::config(format!("bias has {} values, expected {channels}", b.len())))
        }
        _ => Ok(()),
    }
}

fn init_output(out: &mut FeatureMap, bias: Option<&[f32]>) {
    if let Some(bias) = bias {
        for px in out.data.chunks_exact_mut(out.channels) {
            px.copy_from_slice(bias);
        }
    }
}

pub fn conv2d(input: &FeatureMap, spec: &ConvSpec) -> Result<FeatureMap> {
    if input.channels != spec.in_channels {
        return Err(Error::config(format!(
            "conv2d expects {} input channels, got {}",
            spec.in_channels, input.channels
        )));
    }
    let (kh, kw) = spec.kernel;
    let win = window(input, spec.kernel, spec.stride, spec.padding)?;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let mut out = FeatureMap::zeros(win.out_h, win.out_w, cout);
    init_output(&mut out, spec.bias());
    for oy in 0..win.out_h {
        for ox in 0..win.out_w {
            let acc = out.pixel_mut(oy, ox);
            for ky in 0..kh {
                let Some(iy) = source_index(oy, ky, spec.stride, win.pad_top, input.height) else {
                    continue;
                };
                for kx in 0..kw {
                    let Some(ix) = source_index(ox, kx, spec.stride, win.pad_left, input.width) else {
                        continue;
                    };
                    let px = input.pixel(iy, ix);
                    let taps = &spec.packed[(ky * kw + kx) * cin * cout..][..cin * cout];
                    for (&x, w) in px.iter().zip(taps.chunks_exact(cout)) {
                        if x != 0.0 {
                            axpy(acc, x, w);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One k×k kernel per channel, laid out `[channels][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseSpec {
    kernel: (usize, usize),
    channels: usize,
    stride: usize,
    padding: Padding,
    weights: Vec<f32>,
    bias: Option<Vec<f32>>,
    packed: Vec<f32>,
}

impl DepthwiseSpec {
    pub fn new(
        kernel: (usize, usize),
        channels: usize,
        stride: usize,
        padding: Padding,
        weights: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        if kh == 0 || kw == 0 || channels == 0 || stride == 0 {
            return Err(Error::config("depthwise kernel, channels and stride must be positive"));
        }
        if weights.len() != channels * kh * kw {
            return Err(Error::config(format!(
                "depthwise weights have {} values, expected {channels} kernels of {kh}x{kw}",
                weights.len()
            )));
        }
        check_bias(&bias, channels)?;
        let mut packed = vec![0.0; weights.len()];
        for c in 0..channels {
            for tap in 0..kh * kw {
                packed[tap * channels + c] = weights[c * kh * kw + tap];
            }
        }
        Ok(Self { kernel, channels, stride, padding, weights, bias, packed })
    }

    pub fn kernel(&self) -> (usize, usize) {
        self.kernel
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    pub fn weight(&self, c: usize, ky: usize, kx: usize) -> f32 {
        let (kh, kw) = self.kernel;
        self.weights[(c * kh + ky) * kw + kx]
    }
}

pub fn depthwise_conv2d(input: &FeatureMap, spec: &DepthwiseSpec) -> Result<FeatureMap> {
    if input.channels != spec.channels {
        return Err(Error::config(format!(
            "depthwise conv has {} kernels but input has {} channels",
            spec.channels, input.channels
        )));
    }
    let (kh, kw) = spec.kernel;
    let win = window(input, spec.kernel, spec.stride, spec.padding)?;
    let c = spec.channels;
    let mut out = FeatureMap::zeros(win.out_h, win.out_w, c);
    init_output(&mut out, spec.bias());
    for oy in 0..win.out_h {
        for ox in 0..win.out_w {
            let acc = out.pixel_mut(oy, ox);
            for ky in 0..kh {
                let Some(iy) = source_index(oy, ky, spec.stride, win.pad_top, input.height) else {
                    continue;
                };
                for kx in 0..kw {
                    let Some(ix) = source_index(ox, kx, spec.stride, win.pad_left, input.width) else {
                        continue;
                    };
                    let px = input.pixel(iy, ix);
                    let taps = &spec.packed[(ky * kw + kx) * c..][..c];
                    for ((a, &x), &w) in acc.iter_mut().zip(px).zip(taps) {
                        *a += x * w;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// 1×1 convolution, weights laid out `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseSpec {
    in_channels: usize,
    out_channels: usize,
    weights: Vec<f32>,
    bias: Option<Vec<f32>>,
    packed: Vec<f32>,
}

impl PointwiseSpec {
    pub fn new(in_channels: usize, out_channels: usize, weights: Vec<f32>, bias: Option<Vec<f32>>) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::config("pointwise channels must be positive"));
        }
        if weights.len() != in_channels * out_channels {
            return Err(Error::config(format!(
                "pointwise weights have {} values, expected {out_channels}x{in_channels}",
                weights.len()
            )));
        }
        check_bias(&bias, out_channels)?;
        let mut packed = vec![0.0; weights.len()];
        for co in 0..out_channels {
            for ci in 0..in_channels {
                packed[ci * out_channels + co] = weights[co * in_channels + ci];
            }
        }
        Ok(Self { in_channels, out_channels, weights, bias, packed })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    /// `out = W · x (+ b)` for a single feature vector.
    pub fn apply_vector(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.in_channels);
        debug_assert_eq!(out.len(), self.out_channels);
        match &self.bias {
            Some(b) => out.copy_from_slice(b),
            None => out.fill(0.0),
        }
        for (&v, w) in x.iter().zip(self.packed.chunks_exact(self.out_channels)) {
            if v != 0.0 {
                axpy(out, v, w);
            }
        }
    }
}

pub fn pointwise_conv2d(input: &FeatureMap, spec: &PointwiseSpec) -> Result<FeatureMap> {
    if input.channels != spec.in_channels {
        return Err(Error::config(format!(
            "pointwise conv expects {} input channels, got {}",
            spec.in_channels, input.channels
        )));
    }
    let mut out = FeatureMap::zeros(input.height, input.width, spec.out_channels);
    for (x, y) in input.data.chunks_exact(input.channels).zip(out.data.chunks_exact_mut(spec.out_channels)) {
        spec.apply_vector(x, y);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub epsilon: f32,
}

impl BatchNormParams {
    pub fn new(
        gamma: Vec<f32>,
        beta: Vec<f32>,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
        epsilon: f32,
    ) -> Result<Self> {
        let n = gamma.len();
        if beta.len() != n || running_mean.len() != n || running_var.len() != n {
            return Err(Error::config("batch norm parameter arrays differ in length"));
        }
        // epsilon = 0 is tolerated as long as every denominator stays positive.
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::config(format!("batch norm epsilon must be >= 0, got {epsilon}")));
        }
        if let Some(v) = running_var.iter().find(|&&v| v.is_nan() || v < 0.0 || v + epsilon <= 0.0) {
            return Err(Error::config(format!(
                "batch norm running variance {v} with epsilon {epsilon} gives a non-positive denominator"
            )));
        }
        Ok(Self { gamma, beta, running_mean, running_var, epsilon })
    }

    /// gamma = 1, beta = 0, mean = 0, var = 1.
    pub fn neutral(channels: usize, epsilon: f32) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn scales(&self) -> Vec<f32> {
        self.gamma.iter().zip(&self.running_var).map(|(g, v)| g / (v + self.epsilon).sqrt()).collect()
    }

    /// Normalizes a single feature vector in place.
    pub fn apply_vector(&self, x: &mut [f32]) {
        for (i, v) in x.iter_mut().enumerate() {
            let scale = self.gamma[i] / (self.running_var[i] + self.epsilon).sqrt();
            *v = (*v - self.running_mean[i]) * scale + self.beta[i];
        }
    }
}

pub fn batch_norm_infer(input: &FeatureMap, params: &BatchNormParams) -> Result<FeatureMap> {
    if params.channels() != input.channels {
        return Err(Error::config(format!(
            "batch norm has {} channels, input has {}",
            params.channels(),
            input.channels
        )));
    }
    let scale = params.scales();
    let mut out = input.clone();
    for px in out.data.chunks_exact_mut(input.channels) {
        for (i, v) in px.iter_mut().enumerate() {
            *v = (*v - params.running_mean[i]) * scale[i] + params.beta[i];
        }
    }
    Ok(out)
}

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f32 },
    Swish,
    Mish,
    Identity,
    Sigmoid,
}

impl Activation {
    pub const DEFAULT_LEAKY_SLOPE: f32 = 0.1;

    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu { slope: Self::DEFAULT_LEAKY_SLOPE }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => {
                Err(Error::config(format!("leaky_relu slope must lie in (0,1), got {slope}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Swish => "swish",
            Activation::Mish => "mish",
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
        }
    }

    #[inline]
    pub fn apply(&self, x: f32) -> f32 {
        match *self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Swish => x * sigmoid(x),
            Activation::Mish => x * softplus(x).tanh(),
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn apply_activation(input: &FeatureMap, act: Activation) -> FeatureMap {
    let mut out = input.clone();
    apply_activation_in_place(&mut out, act);
    out
}

pub fn apply_activation_in_place(map: &mut FeatureMap, act: Activation) {
    if act == Activation::Identity {
        return;
    }
    for v in &mut map.data {
        *v = act.apply(*v);
    }
}

pub fn add(input_a: &FeatureMap, input_b: &FeatureMap) -> Result<FeatureMap> {
    if input_a.shape() != input_b.shape() {
        return Err(Error::config(format!("add shape mismatch: {:?} vs {:?}", input_a.shape(), input_b.shape())));
    }
    let mut out = input_a.clone();
    for (a, b) in out.data.iter_mut().zip(&input_b.data) {
        *a += b;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_map(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        FeatureMap::from_fn(h, w, c, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
        })
    }

    fn lcg_vec(n: usize, seed: u64) -> Vec<f32> {
        lcg_map(1, 1, n, seed).into_data()
    }

    /// Quadruple-loop reference with explicit zero padding.
    fn naive_conv(input: &FeatureMap, spec: &ConvSpec) -> FeatureMap {
        let (kh, kw) = spec.kernel();
        let s = spec.stride();
        let (oh, pt) = spec.padding().output_extent(input.height(), kh, s).unwrap();
        let (ow, pl) = spec.padding().output_extent(input.width(), kw, s).unwrap();
        FeatureMap::from_fn(oh, ow, spec.out_channels(), |oy, ox, co| {
            let mut acc = spec.bias().map_or(0.0f64, |b| b[co] as f64);
            for ci in 0..spec.in_channels() {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * s + ky) as isize - pt as isize;
                        let ix = (ox * s + kx) as isize - pl as isize;
                        if iy < 0 || ix < 0 || iy >= input.height() as isize || ix >= input.width() as isize {
                            continue;
                        }
                        acc += input.get(iy as usize, ix as usize, ci) as f64 * spec.weight(co, ci, ky, kx) as f64;
                    }
                }
            }
            acc as f32
        })
    }

    #[test]
    fn identity_1x1_conv_reproduces_input() {
        let input = lcg_map(5, 4, 3, 1);
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let spec = ConvSpec::new((1, 1), 3, 3, 1, Padding::Same, w, None).unwrap();
        assert_eq!(conv2d(&input, &spec).unwrap(), input);
    }

    #[test]
    fn all_ones_3x3_on_2x2_gives_four() {
        let input = FeatureMap::new(2, 2, 1, vec![1.0; 4]).unwrap();
        let spec = ConvSpec::new((3, 3), 1, 1, 1, Padding::Same, vec![1.0; 9], None).unwrap();
        let out = conv2d(&input, &spec).unwrap();
        assert_eq!(out.shape(), (2, 2, 1));
        assert!(out.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn strided_conv_matches_naive_loop() {
        let input = lcg_map(4, 4, 3, 7);
        let spec = ConvSpec::new((3, 3), 3, 5, 2, Padding::Same, lcg_vec(5 * 3 * 9, 8), Some(lcg_vec(5, 9))).unwrap();
        let out = conv2d(&input, &spec).unwrap();
        assert_eq!(out.shape(), (2, 2, 5));
        let reference = naive_conv(&input, &spec);
        for (a, b) in out.data().iter().zip(reference.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn same_padding_puts_extra_on_bottom_right() {
        // 4 wide, k=2, stride 1: one column of padding, all of it on the right.
        assert_eq!(Padding::Same.output_extent(4, 2, 1), Some((4, 0)));
        assert_eq!(Padding::Same.output_extent(5, 3, 2), Some((3, 1)));
        assert_eq!(Padding::Same.output_extent(4, 3, 2), Some((2, 0)));
        assert_eq!(Padding::Valid.output_extent(2, 3, 1), None);
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_bad_shapes() {
        let input = lcg_map(3, 3, 2, 1);
        let spec = ConvSpec::new((3, 3), 3, 1, 1, Padding::Same, vec![0.0; 27], None).unwrap();
        assert!(matches!(conv2d(&input, &spec), Err(Error::Config(_))));
        assert!(ConvSpec::new((3, 3), 3, 1, 1, Padding::Same, vec![0.0; 26], None).is_err());
        assert!(FeatureMap::new(0, 3, 1, vec![]).is_err());
        let valid = ConvSpec::new((5, 5), 2, 1, 1, Padding::Valid, vec![0.0; 50], None).unwrap();
        assert!(conv2d(&input, &valid).is_err());
    }

    #[test]
    fn depthwise_identity_and_window() {
        let input = lcg_map(4, 5, 2, 3);
        let mut w = vec![0.0; 18];
        w[4] = 1.0;
        w[9 + 4] = 1.0;
        let spec = DepthwiseSpec::new((3, 3), 2, 1, Padding::Same, w, None).unwrap();
        assert_eq!(depthwise_conv2d(&input, &spec).unwrap(), input);

        let ones = FeatureMap::new(2, 2, 2, vec![1.0; 8]).unwrap();
        let spec = DepthwiseSpec::new((3, 3), 2, 1, Padding::Same, vec![1.0; 18], None).unwrap();
        assert!(depthwise_conv2d(&ones, &spec).unwrap().data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn depthwise_equals_block_diagonal_conv() {
        let c = 4;
        let input = lcg_map(6, 7, c, 11);
        let dw = lcg_vec(c * 9, 12);
        let spec = DepthwiseSpec::new((3, 3), c, 2, Padding::Same, dw.clone(), None).unwrap();
        let mut full = vec![0.0; c * c * 9];
        for ch in 0..c {
            full[(ch * c + ch) * 9..][..9].copy_from_slice(&dw[ch * 9..][..9]);
        }
        let conv = ConvSpec::new((3, 3), c, c, 2, Padding::Same, full, None).unwrap();
        let a = depthwise_conv2d(&input, &spec).unwrap();
        let b = conv2d(&input, &conv).unwrap();
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn depthwise_rejects_wrong_kernel_count() {
        let input = lcg_map(3, 3, 3, 1);
        let spec = DepthwiseSpec::new((3, 3), 2, 1, Padding::Same, vec![0.0; 18], None).unwrap();
        assert!(depthwise_conv2d(&input, &spec).is_err());
    }

    #[test]
    fn pointwise_dot_product_and_conv_equivalence() {
        let input = FeatureMap::new(1, 1, 2, vec![2.0, 4.0]).unwrap();
        let spec = PointwiseSpec::new(2, 1, vec![0.5, 0.5], None).unwrap();
        assert_eq!(pointwise_conv2d(&input, &spec).unwrap().data(), &[3.0]);

        let input = lcg_map(5, 5, 3, 21);
        let w = lcg_vec(4 * 3, 22);
        let b = lcg_vec(4, 23);
        let pw = PointwiseSpec::new(3, 4, w.clone(), Some(b.clone())).unwrap();
        let conv = ConvSpec::new((1, 1), 3, 4, 1, Padding::Same, w, Some(b)).unwrap();
        let x = pointwise_conv2d(&input, &pw).unwrap();
        let y = conv2d(&input, &conv).unwrap();
        for (p, q) in x.data().iter().zip(y.data()) {
            assert!((p - q).abs() < 1e-6);
        }
        assert!(PointwiseSpec::new(3, 4, vec![0.0; 11], None).is_err());
        let bad = lcg_map(2, 2, 2, 1);
        assert!(pointwise_conv2d(&bad, &pw).is_err());
    }

    #[test]
    fn batch_norm_hand_values() {
        let input = lcg_map(3, 3, 2, 5);
        let neutral = BatchNormParams::neutral(2, 1e-5);
        let out = batch_norm_infer(&input, &neutral).unwrap();
        for (a, b) in out.data().iter().zip(input.data()) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-3));
        }

        let x = FeatureMap::new(1, 1, 1, vec![3.0]).unwrap();
        let p = BatchNormParams::new(vec![2.0], vec![1.0], vec![1.0], vec![4.0], 0.0).unwrap();
        assert_eq!(batch_norm_infer(&x, &p).unwrap().data(), &[3.0]);

        let constant = FeatureMap::new(2, 2, 1, vec![0.7; 4]).unwrap();
        let p = BatchNormParams::new(vec![1.3], vec![0.1], vec![0.7], vec![2.0], 1e-5).unwrap();
        assert!(batch_norm_infer(&constant, &p).unwrap().data().iter().all(|&v| v == 0.1));
    }

    #[test]
    fn batch_norm_rejects_bad_params() {
        assert!(BatchNormParams::new(vec![1.0], vec![0.0], vec![0.0], vec![-1.0], 1e-5).is_err());
        assert!(BatchNormParams::new(vec![1.0], vec![0.0], vec![0.0], vec![0.0], 0.0).is_err());
        assert!(BatchNormParams::new(vec![1.0; 2], vec![0.0], vec![0.0], vec![1.0], 1e-5).is_err());
        let input = lcg_map(2, 2, 3, 1);
        assert!(batch_norm_infer(&input, &BatchNormParams::neutral(2, 1e-5)).is_err());
    }

    #[test]
    fn activation_closed_forms() {
        assert_eq!(Activation::Swish.apply(0.0), 0.0);
        assert_eq!(Activation::Mish.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert!((Activation::LeakyRelu { slope: 0.1 }.apply(-2.0) + 0.2).abs() < 1e-7);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((Activation::Swish.apply(1.0) as f64 - expected).abs() < 1e-4);
        assert!((Activation::Swish.apply(1.0) - 0.7311).abs() < 1e-4);
        // mish(1) = tanh(ln(1 + e))
        let mish1 = (1.0f64 + 1.0f64.exp()).ln().tanh();
        assert!((Activation::Mish.apply(1.0) as f64 - mish1).abs() < 1e-6);
        assert!(Activation::Mish.apply(100.0).is_finite());
        assert!(Activation::Swish.apply(-100.0).is_finite());
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert!(Activation::LeakyRelu { slope: 1.5 }.validate().is_err());
        assert!(Activation::LeakyRelu { slope: 0.0 }.validate().is_err());
    }

    #[test]
    fn add_behaviour() {
        let a = lcg_map(3, 2, 2, 1);
        let zeros = FeatureMap::zeros(3, 2, 2);
        assert_eq!(add(&a, &zeros).unwrap(), a);
        let neg = FeatureMap::new(3, 2, 2, a.data().iter().map(|v| -v).collect()).unwrap();
        assert!(add(&a, &neg).unwrap().data().iter().all(|&v| v == 0.0));
        let b = lcg_map(3, 2, 2, 2);
        let sum = add(&a, &b).unwrap();
        for i in 0..a.data().len() {
            assert_eq!(sum.data()[i], a.data()[i] + b.data()[i]);
        }
        assert!(add(&a, &FeatureMap::zeros(2, 3, 2)).is_err());
    }

    #[test]
    fn activation_serde_shape() {
        let json = serde_json::to_string(&Activation::LeakyRelu { slope: 0.1 }).unwrap();
        assert_eq!(json, r#"{"kind":"leaky_relu","slope":0.1}"#);
        let relu: Activation = serde_json::from_str(r#"{"kind":"relu"}"#).unwrap();
        assert_eq!(relu, Activation::Relu);
    }
}
