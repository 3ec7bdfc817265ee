//! Layer kernels with explicit forward and backward passes, and the
//! sequential `Network` container.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let momentum = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            momentum,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.pad, w + 2 * self.pad);
        if hp < self.kernel || wp < self.kernel || self.stride == 0 {
            return None;
        }
        Some((
            (hp - self.kernel) / self.stride + 1,
            (wp - self.kernel) / self.stride + 1,
        ))
    }
}

/// Output index range `lo..hi` whose taps `o * stride + k - pad` land in `0..len`.
#[inline]
fn valid_range(out_len: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // ix = o*s + k - pad >= 0  <=>  o >= ceil((pad - k) / s)
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    // ix <= len - 1  <=>  o <= (len - 1 + pad - k) / s
    let hi = if len + pad > k {
        ((len - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Row-major matrix operand: `data` holds a `rows x cols` matrix, read
/// transposed when `transposed` is set.
struct Mat<'a> {
    data: &'a [f64],
    transposed: bool,
}

impl Mat<'_> {
    /// (row stride, column stride) of the logical matrix whose stored
    /// row length is `stored_cols`.
    fn strides(&self, stored_cols: usize) -> (isize, isize) {
        if self.transposed {
            (1, stored_cols as isize)
        } else {
            (stored_cols as isize, 1)
        }
    }
}

/// `c = a * b + beta * c` with `a` logically (m, k), `b` (k, n), `c` (m, n).
fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64]) {
    assert!(a.data.len() >= m * k && b.data.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = a.strides(if a.transposed { m } else { k });
    let (rsb, csb) = b.strides(if b.transposed { k } else { n });
    // SAFETY: the asserted lengths cover every index reachable through the
    // given dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold one (c, h, w) sample into a (c * k * k, ho * wo) patch matrix.
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    ho: usize,
    wo: usize,
    cols: &mut [f64],
) {
    let (k, s, p) = (spec.kernel, spec.stride, spec.pad);
    let l = ho * wo;
    for ic in 0..c {
        let plane = &x[ic * h * w..][..h * w];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(ho, h, ky, s, p);
            for kx in 0..k {
                let (ox_lo, ox_hi) = valid_range(wo, w, kx, s, p);
                let row = &mut cols[((ic * k + ky) * k + kx) * l..][..l];
                row.fill(0.0);
                if ox_lo >= ox_hi {
                    continue;
                }
                let ix0 = ox_lo * s + kx - p;
                for oy in oy_lo..oy_hi {
                    let irow = &plane[(oy * s + ky - p) * w..][..w];
                    let orow = &mut row[oy * wo..][ox_lo..ox_hi];
                    if s == 1 {
                        orow.copy_from_slice(&irow[ix0..ix0 + orow.len()]);
                    } else {
                        for (o, i) in orow.iter_mut().zip(irow[ix0..].iter().step_by(s)) {
                            *o = *i;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back onto a sample.
fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    ho: usize,
    wo: usize,
    x: &mut [f64],
) {
    let (k, s, p) = (spec.kernel, spec.stride, spec.pad);
    let l = ho * wo;
    for ic in 0..c {
        let plane = &mut x[ic * h * w..][..h * w];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(ho, h, ky, s, p);
            for kx in 0..k {
                let (ox_lo, ox_hi) = valid_range(wo, w, kx, s, p);
                if ox_lo >= ox_hi {
                    continue;
                }
                let row = &cols[((ic * k + ky) * k + kx) * l..][..l];
                let ix0 = ox_lo * s + kx - p;
                for oy in oy_lo..oy_hi {
                    let irow = &mut plane[(oy * s + ky - p) * w..][..w];
                    let grow = &row[oy * wo..][ox_lo..ox_hi];
                    if s == 1 {
                        for (d, g) in irow[ix0..].iter_mut().zip(grow) {
                            *d += g;
                        }
                    } else {
                        for (d, g) in irow[ix0..].iter_mut().step_by(s).zip(grow) {
                            *d += g;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input` (n, c, h, w) with `weight` (o, c, k, k).
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4("conv2d")?;
    check_conv_shapes(c, weight, bias, spec)?;
    let (ho, wo) = spec.output_size(h, w).ok_or_else(|| Error::Shape {
        op: "conv2d",
        expected: vec![spec.kernel, spec.kernel],
        actual: vec![h + 2 * spec.pad, w + 2 * spec.pad],
    })?;
    let o_ch = spec.out_channels;
    let (l, patch) = (ho * wo, c * spec.kernel * spec.kernel);
    let mut out = Tensor::zeros(&[n, o_ch, ho, wo]);
    let mut cols = vec![0.0; patch * l];
    let (x, wt, b) = (input.data(), weight.data(), bias.data());
    for ni in 0..n {
        im2col(
            &x[ni * c * h * w..][..c * h * w],
            c,
            h,
            w,
            spec,
            ho,
            wo,
            &mut cols,
        );
        let od = &mut out.data_mut()[ni * o_ch * l..][..o_ch * l];
        for (oc, plane) in od.chunks_mut(l).enumerate() {
            plane.fill(b[oc]);
        }
        let a = Mat {
            data: wt,
            transposed: false,
        };
        gemm(
            o_ch,
            patch,
            l,
            a,
            Mat {
                data: &cols,
                transposed: false,
            },
            1.0,
            od,
        );
    }
    Ok(out)
}

/// Gradients of a convolution. Returns the input gradient; kernel and bias
/// gradients are accumulated into `grad_weight` / `grad_bias` when given.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    mut grad_weight: Option<&mut Tensor>,
    mut grad_bias: Option<&mut Tensor>,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    let (n, c, h, w) = input.dims4("conv2d_backward")?;
    let (gn, go, ho, wo) = grad_out.dims4("conv2d_backward")?;
    if gn != n || go != spec.out_channels || spec.output_size(h, w) != Some((ho, wo)) {
        return Err(Error::Shape {
            op: "conv2d_backward",
            expected: vec![n, spec.out_channels, ho, wo],
            actual: grad_out.shape().to_vec(),
        });
    }
    let o_ch = spec.out_channels;
    let (l, patch) = (ho * wo, c * spec.kernel * spec.kernel);
    let (x, wt, g) = (input.data(), weight.data(), grad_out.data());
    let mut grad_in = want_input_grad.then(|| Tensor::zeros(&[n, c, h, w]));
    let mut cols = vec![0.0; patch * l];

    for ni in 0..n {
        let g_sample = &g[ni * o_ch * l..][..o_ch * l];
        if let Some(gb) = grad_bias.as_deref_mut() {
            for (acc, plane) in gb.data_mut().iter_mut().zip(g_sample.chunks(l)) {
                *acc += plane.iter().sum::<f64>();
            }
        }
        if let Some(gw) = grad_weight.as_deref_mut() {
            im2col(
                &x[ni * c * h * w..][..c * h * w],
                c,
                h,
                w,
                spec,
                ho,
                wo,
                &mut cols,
            );
            let a = Mat {
                data: g_sample,
                transposed: false,
            };
            gemm(
                o_ch,
                l,
                patch,
                a,
                Mat {
                    data: &cols,
                    transposed: true,
                },
                1.0,
                gw.data_mut(),
            );
        }
        if let Some(gi) = grad_in.as_mut() {
            let a = Mat {
                data: wt,
                transposed: true,
            };
            gemm(
                patch,
                o_ch,
                l,
                a,
                Mat {
                    data: g_sample,
                    transposed: false,
                },
                0.0,
                &mut cols,
            );
            col2im(
                &cols,
                c,
                h,
                w,
                spec,
                ho,
                wo,
                &mut gi.data_mut()[ni * c * h * w..][..c * h * w],
            );
        }
    }
    Ok(grad_in)
}

fn check_conv_shapes(c: usize, weight: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<()> {
    let expected = [
        spec.out_channels,
        spec.in_channels,
        spec.kernel,
        spec.kernel,
    ];
    if c != spec.in_channels {
        return Err(Error::Shape {
            op: "conv2d input channels",
            expected: vec![spec.in_channels],
            actual: vec![c],
        });
    }
    if weight.shape() != expected {
        return Err(Error::Shape {
            op: "conv2d kernel",
            expected: expected.to_vec(),
            actual: weight.shape().to_vec(),
        });
    }
    if bias.shape() != [spec.out_channels] {
        return Err(Error::Shape {
            op: "conv2d bias",
            expected: vec![spec.out_channels],
            actual: bias.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    let mut out = x.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v > 0.0 { *v } else { slope * *v });
    out
}

pub fn leaky_relu_backward(x: &Tensor, slope: f64, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
        if *xv <= 0.0 {
            *gv *= slope;
        }
    }
    g
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
    out
}

pub fn sigmoid_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
        let s = 1.0 / (1.0 + (-xv).exp());
        *gv *= s * (1.0 - s);
    }
    g
}

/// (n, f) x (o, f)^T + b.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f) = x.dims2("linear")?;
    let (o, wf) = weight.dims2("linear weight")?;
    if wf != f || bias.shape() != [o] {
        return Err(Error::Shape {
            op: "linear",
            expected: vec![o, f],
            actual: weight.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[n, o]);
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    for (row, orow) in xd.chunks(f).zip(out.data_mut().chunks_mut(o)) {
        for (j, ov) in orow.iter_mut().enumerate() {
            *ov = bd[j]
                + wd[j * f..][..f]
                    .iter()
                    .zip(row)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
    }
    Ok(out)
}

pub fn linear_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    grad_weight: Option<&mut Tensor>,
    grad_bias: Option<&mut Tensor>,
) -> Result<Tensor> {
    let (n, f) = x.dims2("linear_backward")?;
    let (o, _) = weight.dims2("linear_backward weight")?;
    if grad_out.shape() != [n, o] {
        return Err(Error::Shape {
            op: "linear_backward",
            expected: vec![n, o],
            actual: grad_out.shape().to_vec(),
        });
    }
    let (xd, wd, gd) = (x.data(), weight.data(), grad_out.data());
    let mut gi = Tensor::zeros(&[n, f]);
    for (grow, girow) in gd.chunks(o).zip(gi.data_mut().chunks_mut(f)) {
        for (j, gv) in grow.iter().enumerate() {
            for (d, wv) in girow.iter_mut().zip(&wd[j * f..][..f]) {
                *d += gv * wv;
            }
        }
    }
    if let Some(gw) = grad_weight {
        let gwd = gw.data_mut();
        for (grow, xrow) in gd.chunks(o).zip(xd.chunks(f)) {
            for (j, gv) in grow.iter().enumerate() {
                for (d, xv) in gwd[j * f..][..f].iter_mut().zip(xrow) {
                    *d += gv * xv;
                }
            }
        }
    }
    if let Some(gb) = grad_bias {
        for grow in gd.chunks(o) {
            for (d, gv) in gb.data_mut().iter_mut().zip(grow) {
                *d += gv;
            }
        }
    }
    Ok(gi)
}

/// Spatial mean per channel: (n, c, h, w) -> (n, c).
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("global_avg_pool")?;
    let plane = h * w;
    let data = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let plane: usize = input_shape[2] * input_shape[3];
    let mut g = Tensor::zeros(input_shape);
    for (chunk, gv) in g.data_mut().chunks_mut(plane).zip(grad_out.data()) {
        chunk.fill(gv / plane as f64);
    }
    g
}

/// Nearest-neighbour 2x spatial upsampling.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4("upsample2x")?;
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    let od = out.data_mut();
    for (pi, plane) in x.data().chunks(h * w).enumerate() {
        let oplane = &mut od[pi * 4 * h * w..][..4 * h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                oplane[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
            }
        }
    }
    Ok(out)
}

pub fn upsample2x_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (h, w) = (input_shape[2], input_shape[3]);
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (pi, oplane) in grad_out.data().chunks(4 * h * w).enumerate() {
        let plane = &mut gd[pi * h * w..][..h * w];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                plane[(y / 2) * w + xx / 2] += oplane[y * 2 * w + xx];
            }
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d {
        spec: ConvSpec,
        weight: usize,
        bias: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Sigmoid,
    Upsample2x,
    GlobalAvgPool,
    Linear {
        inputs: usize,
        outputs: usize,
        weight: usize,
        bias: usize,
    },
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Conv2d { spec, .. } => write!(
                f,
                "conv2d {} {} {} {} {}",
                spec.in_channels, spec.out_channels, spec.kernel, spec.stride, spec.pad
            ),
            Layer::LeakyRelu { slope } => write!(f, "leaky_relu {slope}"),
            Layer::Sigmoid => write!(f, "sigmoid"),
            Layer::Upsample2x => write!(f, "upsample2x"),
            Layer::GlobalAvgPool => write!(f, "global_avg_pool"),
            Layer::Linear {
                inputs, outputs, ..
            } => write!(f, "linear {inputs} {outputs}"),
        }
    }
}

/// Activations recorded by a forward pass; `inputs[i]` feeds layer `i`.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Tensor>,
}

impl Tape {
    /// Input of layer `k`, i.e. the output of layer `k - 1`.
    pub fn activation(&self, k: usize) -> &Tensor {
        &self.inputs[k]
    }

    /// Sign pattern of every leaky-relu input. A change in this pattern
    /// between two evaluations means a kink was crossed.
    pub fn kink_signature(&self, net: &Network) -> Vec<bool> {
        net.layers
            .iter()
            .zip(&self.inputs)
            .filter(|(l, _)| matches!(l, Layer::LeakyRelu { .. }))
            .flat_map(|(_, x)| x.data().iter().map(|v| *v > 0.0))
            .collect()
    }
}

/// Sequential network with its own parameter registry.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub name: String,
    layers: Vec<Layer>,
    params: Vec<Parameter>,
}

impl Network {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            layers: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push_param(&mut self, suffix: &str, value: Tensor) -> usize {
        let name = format!("{}.{}.{}", self.name, self.layers.len(), suffix);
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    /// Kaiming-normal kernel (fan-in scaling), zero bias.
    pub fn conv(mut self, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        let shape = [
            spec.out_channels,
            spec.in_channels,
            spec.kernel,
            spec.kernel,
        ];
        let weight = kaiming(&shape, fan_in, rng);
        let weight = self.push_param("weight", weight);
        let bias = self.push_param("bias", Tensor::zeros(&[spec.out_channels]));
        self.layers.push(Layer::Conv2d { spec, weight, bias });
        self
    }

    pub fn conv3x3(
        self,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        self.conv(
            ConvSpec {
                in_channels,
                out_channels,
                kernel: 3,
                stride,
                pad: 1,
            },
            rng,
        )
    }

    pub fn linear(mut self, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let weight = kaiming(&[outputs, inputs], inputs, rng);
        let weight = self.push_param("weight", weight);
        let bias = self.push_param("bias", Tensor::zeros(&[outputs]));
        self.layers.push(Layer::Linear {
            inputs,
            outputs,
            weight,
            bias,
        });
        self
    }

    pub fn leaky_relu(mut self, slope: f64) -> Self {
        self.layers.push(Layer::LeakyRelu { slope });
        self
    }

    pub fn sigmoid(mut self) -> Self {
        self.layers.push(Layer::Sigmoid);
        self
    }

    pub fn upsample2x(mut self) -> Self {
        self.layers.push(Layer::Upsample2x);
        self
    }

    pub fn global_avg_pool(mut self) -> Self {
        self.layers.push(Layer::GlobalAvgPool);
        self
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.params.iter_mut().for_each(|p| p.trainable = trainable);
    }

    pub fn is_frozen(&self) -> bool {
        self.params.iter().all(|p| !p.trainable)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Architecture description, one layer per line.
    pub fn architecture(&self) -> Vec<String> {
        self.layers.iter().map(Layer::to_string).collect()
    }

    fn apply(&self, layer: &Layer, x: &Tensor) -> Result<Tensor> {
        match layer {
            Layer::Conv2d { spec, weight, bias } => conv2d_forward(
                x,
                &self.params[*weight].value,
                &self.params[*bias].value,
                spec,
            ),
            Layer::LeakyRelu { slope } => Ok(leaky_relu(x, *slope)),
            Layer::Sigmoid => Ok(sigmoid(x)),
            Layer::Upsample2x => upsample2x(x),
            Layer::GlobalAvgPool => global_avg_pool(x),
            Layer::Linear { weight, bias, .. } => {
                linear(x, &self.params[*weight].value, &self.params[*bias].value)
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = self.apply(layer, &cur)?;
        }
        check_finite(&self.name, &cur)?;
        Ok(cur)
    }

    /// Output of the first `layers` layers.
    pub fn forward_prefix(&self, x: &Tensor, layers: usize) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers[..layers.min(self.layers.len())] {
            cur = self.apply(layer, &cur)?;
        }
        check_finite(&self.name, &cur)?;
        Ok(cur)
    }

    pub fn forward_with_tape(&self, x: &Tensor) -> Result<(Tensor, Tape)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let next = self.apply(layer, &cur)?;
            inputs.push(std::mem::replace(&mut cur, next));
        }
        check_finite(&self.name, &cur)?;
        Ok((cur, Tape { inputs }))
    }

    /// Backpropagate `grad_out` through the recorded pass. Gradients of
    /// trainable parameters are accumulated; frozen parameters are skipped.
    /// Returns the gradient w.r.t. the network input.
    pub fn backward(&mut self, tape: &Tape, grad_out: &Tensor) -> Result<Tensor> {
        self.backward_with(tape, grad_out, &[])
    }

    /// Like [`Network::backward`], but also adds `(k, g)` gradients w.r.t.
    /// intermediate activation `k` (the input of layer `k`).
    pub fn backward_with(
        &mut self,
        tape: &Tape,
        grad_out: &Tensor,
        injected: &[(usize, &Tensor)],
    ) -> Result<Tensor> {
        let mut grad = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            for (_, g) in injected.iter().filter(|(k, _)| *k == i + 1) {
                if g.shape() != grad.shape() {
                    return Err(Error::Shape {
                        op: "backward_with",
                        expected: grad.shape().to_vec(),
                        actual: g.shape().to_vec(),
                    });
                }
                grad.add_assign(g);
            }
            let x = &tape.inputs[i];
            grad = match layer {
                Layer::Conv2d { spec, weight, bias } => {
                    let (wi, bi) = (*weight, *bias);
                    let (w_train, b_train) = (self.params[wi].trainable, self.params[bi].trainable);
                    let mut gw = w_train
                        .then(|| std::mem::replace(&mut self.params[wi].grad, Tensor::zeros(&[])));
                    let mut gb = b_train
                        .then(|| std::mem::replace(&mut self.params[bi].grad, Tensor::zeros(&[])));
                    let gi = conv2d_backward(
                        x,
                        &self.params[wi].value,
                        spec,
                        &grad,
                        gw.as_mut(),
                        gb.as_mut(),
                        true,
                    );
                    if let Some(gw) = gw {
                        self.params[wi].grad = gw;
                    }
                    if let Some(gb) = gb {
                        self.params[bi].grad = gb;
                    }
                    gi?.expect("input gradient requested")
                }
                Layer::LeakyRelu { slope } => leaky_relu_backward(x, *slope, &grad),
                Layer::Sigmoid => sigmoid_backward(x, &grad),
                Layer::Upsample2x => upsample2x_backward(x.shape(), &grad),
                Layer::GlobalAvgPool => global_avg_pool_backward(x.shape(), &grad),
                Layer::Linear { weight, bias, .. } => {
                    let (wi, bi) = (*weight, *bias);
                    let (w_train, b_train) = (self.params[wi].trainable, self.params[bi].trainable);
                    let mut gw = w_train
                        .then(|| std::mem::replace(&mut self.params[wi].grad, Tensor::zeros(&[])));
                    let mut gb = b_train
                        .then(|| std::mem::replace(&mut self.params[bi].grad, Tensor::zeros(&[])));
                    let gi =
                        linear_backward(x, &self.params[wi].value, &grad, gw.as_mut(), gb.as_mut());
                    if let Some(gw) = gw {
                        self.params[wi].grad = gw;
                    }
                    if let Some(gb) = gb {
                        self.params[bi].grad = gb;
                    }
                    gi?
                }
            };
        }
        Ok(grad)
    }
}

fn check_finite(name: &str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite activation in {name}")))
    }
}

fn kaiming(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(c: usize, o: usize, stride: usize, pad: usize) -> ConvSpec {
        ConvSpec {
            in_channels: c,
            out_channels: o,
            kernel: 3,
            stride,
            pad,
        }
    }

    #[test]
    fn all_ones_conv_sums_window() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let out = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), &spec(1, 1, 1, 0)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_vec(
            &[1, 1, 4, 5],
            (0..20).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let out = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), &spec(1, 1, 1, 1)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn strided_conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sp = spec(2, 3, 2, 1);
        let x = Tensor::from_vec(
            &[1, 2, 5, 6],
            (0..60).map(|_| rng.random::<f64>() - 0.5).collect(),
        )
        .unwrap();
        let w = Tensor::from_vec(
            &[3, 2, 3, 3],
            (0..54).map(|_| rng.random::<f64>() - 0.5).collect(),
        )
        .unwrap();
        let b = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let out = conv2d_forward(&x, &w, &b, &sp).unwrap();
        let (ho, wo) = sp.output_size(5, 6).unwrap();
        assert_eq!(out.shape(), &[1, 3, ho, wo]);
        for o in 0..3 {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[o];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= 5 || ix >= 6 {
                                    continue;
                                }
                                acc += w.data()[((o * 2 + c) * 3 + ky) * 3 + kx]
                                    * x.data()[(c * 5 + iy as usize) * 6 + ix as usize];
                            }
                        }
                    }
                    let got = out.data()[(o * ho + oy) * wo + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_reports_shape_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let err = conv2d_forward(
            &x,
            &Tensor::zeros(&[1, 3, 3, 3]),
            &Tensor::zeros(&[1]),
            &spec(3, 1, 1, 1),
        )
        .unwrap_err();
        assert!(err.to_string().contains("expected [3]"), "{err}");
    }

    #[test]
    fn elementwise_ops() {
        let x = Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.1).data(), &[-0.1, 2.0]);
        let c = Tensor::full(&[1, 2, 3, 3], 0.7);
        let pooled = global_avg_pool(&c).unwrap();
        assert_eq!(pooled.shape(), &[1, 2]);
        assert!(pooled.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
        assert_eq!(sigmoid(&Tensor::zeros(&[1])).data(), &[0.5]);
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let g = Tensor::full(&[1, 1, 4, 4], 1.0);
        let back = upsample2x_backward(&[1, 1, 2, 2], &g);
        assert_eq!(back.data(), &[4.0; 4]);
    }

    #[test]
    fn frozen_parameters_receive_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::new("n").conv3x3(1, 2, 1, &mut rng).leaky_relu(0.1);
        net.set_trainable(false);
        let x = Tensor::full(&[1, 1, 4, 4], 0.5);
        let (y, tape) = net.forward_with_tape(&x).unwrap();
        let gi = net.backward(&tape, &Tensor::full(y.shape(), 1.0)).unwrap();
        assert_eq!(gi.shape(), x.shape());
        assert!(net
            .params()
            .iter()
            .all(|p| p.grad.data().iter().all(|&g| g == 0.0)));
    }
}
