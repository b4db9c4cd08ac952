use crate::error::{Error, Result};
use crate::numerics::conv::{self, Geometry};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    Conv1d,
    TConv2d,
    TConv1d,
    Fc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    #[inline]
    pub fn apply<S: Scalar>(self, v: S) -> S {
        match self {
            Activation::Relu => v.max(S::zero()),
            Activation::Sigmoid => sigmoid(v),
            Activation::None => v,
        }
    }

    /// Gradient with respect to the pre-activation, given the post-activation
    /// output `y` and upstream gradient `dy`.
    #[inline]
    pub fn backward<S: Scalar>(self, y: S, dy: S) -> S {
        match self {
            Activation::Relu => {
                if y > S::zero() {
                    dy
                } else {
                    S::zero()
                }
            }
            Activation::Sigmoid => dy * y * (S::one() - y),
            Activation::None => dy,
        }
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

/// `log(1 + exp(v))` without overflow.
#[inline]
pub fn softplus<S: Scalar>(v: S) -> S {
    v.max(S::zero()) + (-v.abs()).exp().ln_1p()
}

/// Static description of one layer. Weight layouts:
///
/// | kind    | weight dims            |
/// |---------|------------------------|
/// | conv2d  | `[k, k, in, out]`      |
/// | conv1d  | `[k, in, out]`         |
/// | tconv2d | `[k, k, out, in]`      |
/// | tconv1d | `[k, out, in]`         |
/// | fc      | `[out, in]`            |
///
/// Bias is always `[out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Extra trailing `[rows, cols]` on transposed convolutions (1D layers
    /// use `cols`).
    pub output_padding: [usize; 2],
    pub activation: Activation,
}

impl LayerSpec {
    fn conv(kind: LayerKind, cin: usize, cout: usize, k: usize, s: usize, p: usize) -> Self {
        Self {
            kind,
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            stride: s,
            padding: p,
            output_padding: [0, 0],
            activation: Activation::None,
        }
    }

    pub fn conv2d(cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::conv(LayerKind::Conv2d, cin, cout, kernel, stride, padding)
    }

    pub fn conv1d(cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::conv(LayerKind::Conv1d, cin, cout, kernel, stride, padding)
    }

    pub fn tconv2d(cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::conv(LayerKind::TConv2d, cin, cout, kernel, stride, padding)
    }

    pub fn tconv1d(cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::conv(LayerKind::TConv1d, cin, cout, kernel, stride, padding)
    }

    pub fn fc(cin: usize, cout: usize) -> Self {
        Self::conv(LayerKind::Fc, cin, cout, 1, 1, 0)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_output_padding(mut self, output_padding: usize) -> Self {
        self.output_padding = [output_padding, output_padding];
        self
    }

    pub fn with_output_padding2(mut self, rows: usize, cols: usize) -> Self {
        self.output_padding = [rows, cols];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.kernel == 0 {
            return Err(Error::invalid("kernel must be >= 1"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        let transposed = matches!(self.kind, LayerKind::TConv1d | LayerKind::TConv2d);
        let op = self.output_padding[0].max(self.output_padding[1]);
        if op > 0 && (!transposed || op >= self.stride) {
            return Err(Error::invalid(
                "output_padding only allowed on transposed convs and must be < stride",
            ));
        }
        Ok(())
    }

    pub fn weight_dims(&self) -> Vec<usize> {
        let (k, i, o) = (self.kernel, self.in_channels, self.out_channels);
        match self.kind {
            LayerKind::Conv2d => vec![k, k, i, o],
            LayerKind::Conv1d => vec![k, i, o],
            LayerKind::TConv2d => vec![k, k, o, i],
            LayerKind::TConv1d => vec![k, o, i],
            LayerKind::Fc => vec![o, i],
        }
    }

    pub fn bias_dims(&self) -> Vec<usize> {
        vec![self.out_channels]
    }

    /// Number of inputs feeding each output unit, used for init scaling.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d => self.kernel * self.kernel * self.in_channels,
            LayerKind::Conv1d => self.kernel * self.in_channels,
            // each output of a strided transposed conv sees ~kernel/stride taps per axis
            LayerKind::TConv2d => {
                let taps = self.kernel.div_ceil(self.stride);
                taps * taps * self.in_channels
            }
            LayerKind::TConv1d => self.kernel.div_ceil(self.stride) * self.in_channels,
            LayerKind::Fc => self.in_channels,
        }
    }

    /// Output dims for an input of the given dims.
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let (k, s, p, op) = (self.kernel, self.stride, self.padding, self.output_padding);
        match self.kind {
            LayerKind::Conv2d | LayerKind::TConv2d => {
                if input.len() != 3 {
                    return Err(Error::shape("rank", 3, input.len()));
                }
                check_axis("channels", self.in_channels, input[2])?;
                let (h, w) = if self.kind == LayerKind::Conv2d {
                    (conv_out_len(input[0], k, s, p)?, conv_out_len(input[1], k, s, p)?)
                } else {
                    (
                        tconv_out_len(input[0], k, s, p, op[0])?,
                        tconv_out_len(input[1], k, s, p, op[1])?,
                    )
                };
                Ok(vec![h, w, self.out_channels])
            }
            LayerKind::Conv1d | LayerKind::TConv1d => {
                if input.len() != 2 {
                    return Err(Error::shape("rank", 2, input.len()));
                }
                check_axis("channels", self.in_channels, input[1])?;
                let l = if self.kind == LayerKind::Conv1d {
                    conv_out_len(input[0], k, s, p)?
                } else {
                    tconv_out_len(input[0], k, s, p, op[1])?
                };
                Ok(vec![l, self.out_channels])
            }
            LayerKind::Fc => {
                let n: usize = input.iter().product();
                check_axis("features", self.in_channels, n)?;
                Ok(vec![self.out_channels])
            }
        }
    }

    fn geometry(&self, input: &[usize], output: &[usize]) -> Geometry {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let (in_hw, out_hw) = match self.kind {
            LayerKind::Conv2d | LayerKind::TConv2d => ((input[0], input[1]), (output[0], output[1])),
            _ => ((1, input[0]), (1, output[0])),
        };
        let two_d = matches!(self.kind, LayerKind::Conv2d | LayerKind::TConv2d);
        let (kh, sh, ph) = if two_d { (k, s, p) } else { (1, 1, 0) };
        // for transposed layers the convolution runs from output back to input
        let ((ih, iw), (oh, ow)) = match self.kind {
            LayerKind::TConv1d | LayerKind::TConv2d => (out_hw, in_hw),
            _ => (in_hw, out_hw),
        };
        Geometry {
            in_h: ih,
            in_w: iw,
            out_h: oh,
            out_w: ow,
            kh,
            kw: k,
            sh,
            sw: s,
            ph,
            pw: p,
        }
    }
}

fn check_axis(axis: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(axis, expected, actual));
    }
    Ok(())
}

/// `floor((n + 2*pad - kernel) / stride) + 1`.
pub fn conv_out_len(n: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if n == 0 || kernel == 0 || stride == 0 {
        return Err(Error::invalid("n, kernel and stride must be >= 1"));
    }
    let padded = n + 2 * pad;
    if padded < kernel {
        return Err(Error::Degenerate(format!(
            "input {n} with padding {pad} is smaller than kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// `(n - 1)*stride - 2*pad + kernel + output_padding`.
pub fn tconv_out_len(
    n: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_padding: usize,
) -> Result<usize> {
    if n == 0 || kernel == 0 || stride == 0 {
        return Err(Error::invalid("n, kernel and stride must be >= 1"));
    }
    let full = (n - 1) * stride + kernel + output_padding;
    if full <= 2 * pad {
        return Err(Error::Degenerate(format!(
            "transposed output for input {n} is empty"
        )));
    }
    Ok(full - 2 * pad)
}

/// Output padding that makes a transposed conv map `n` back to `target`.
pub fn output_padding_for(
    n: usize,
    target: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize> {
    let base = tconv_out_len(n, kernel, stride, pad, 0)?;
    if target < base || target - base >= stride.max(1) {
        return Err(Error::Degenerate(format!(
            "cannot invert {n} -> {target} with kernel {kernel}, stride {stride}, pad {pad}"
        )));
    }
    Ok(target - base)
}

fn check_params<S: Scalar>(spec: &LayerSpec, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<()> {
    let wd = spec.weight_dims();
    if weight.dims() != wd.as_slice() {
        return Err(Error::shape("weight", wd.iter().product(), weight.len()));
    }
    check_axis("bias", spec.out_channels, bias.len())
}

/// Affine part of the layer, before the activation.
pub fn preactivate<S: Scalar>(
    spec: &LayerSpec,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    check_params(spec, weight, bias)?;
    let out_dims = spec.output_dims(x.dims())?;
    let cout = spec.out_channels;
    let mut y = Tensor::zeros(&out_dims);
    let b = bias.data();
    match spec.kind {
        LayerKind::Fc => {
            let xs = x.data();
            let w = weight.data();
            let n = spec.in_channels;
            for (o, yv) in y.data_mut().iter_mut().enumerate() {
                *yv = b[o] + conv::dot(&w[o * n..(o + 1) * n], xs);
            }
        }
        LayerKind::Conv1d | LayerKind::Conv2d => {
            let g = spec.geometry(x.dims(), &out_dims);
            fill_bias(y.data_mut(), b);
            conv::gather(&g, x.data(), weight.data(), spec.in_channels, cout, y.data_mut());
        }
        LayerKind::TConv1d | LayerKind::TConv2d => {
            let g = spec.geometry(x.dims(), &out_dims);
            fill_bias(y.data_mut(), b);
            // conv "input" channels = our outputs, conv "output" channels = our inputs
            conv::scatter(&g, x.data(), weight.data(), cout, spec.in_channels, y.data_mut());
        }
    }
    Ok(y)
}

fn fill_bias<S: Scalar>(y: &mut [S], b: &[S]) {
    for chunk in y.chunks_mut(b.len()) {
        chunk.copy_from_slice(b);
    }
}

/// Layer forward pass with the activation applied last.
pub fn forward<S: Scalar>(
    spec: &LayerSpec,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    let mut y = preactivate(spec, weight, bias, x)?;
    let act = spec.activation;
    if act != Activation::None {
        y.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
    }
    Ok(y)
}

/// Backward pass given the layer input `x`, its post-activation output `y`,
/// and the gradient `dy` with respect to `y`. Parameter gradients are
/// accumulated into `grad_w` / `grad_b`. The input gradient is only computed
/// when `need_dx` is set.
#[allow(clippy::too_many_arguments)]
pub fn backward<S: Scalar>(
    spec: &LayerSpec,
    weight: &Tensor<S>,
    x: &Tensor<S>,
    y: &Tensor<S>,
    dy: &Tensor<S>,
    grad_w: &mut Tensor<S>,
    grad_b: &mut Tensor<S>,
    need_dx: bool,
) -> Result<Option<Tensor<S>>> {
    if y.dims() != dy.dims() {
        return Err(Error::shape("upstream gradient", y.len(), dy.len()));
    }
    let act = spec.activation;
    let dpre: Vec<S> = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&yv, &g)| act.backward(yv, g))
        .collect();
    backward_pre(spec, weight, x, y.dims(), &dpre, grad_w, grad_b, need_dx)
}

/// Backward pass starting from the gradient with respect to the pre-activation.
#[allow(clippy::too_many_arguments)]
pub fn backward_pre<S: Scalar>(
    spec: &LayerSpec,
    weight: &Tensor<S>,
    x: &Tensor<S>,
    out_dims: &[usize],
    dpre: &[S],
    grad_w: &mut Tensor<S>,
    grad_b: &mut Tensor<S>,
    need_dx: bool,
) -> Result<Option<Tensor<S>>> {
    let cout = spec.out_channels;
    let cin = spec.in_channels;
    if grad_w.dims() != weight.dims() {
        return Err(Error::shape("weight gradient", weight.len(), grad_w.len()));
    }
    check_axis("bias gradient", cout, grad_b.len())?;
    let gb = grad_b.data_mut();
    for chunk in dpre.chunks(cout) {
        for (a, &d) in gb.iter_mut().zip(chunk) {
            *a = *a + d;
        }
    }
    match spec.kind {
        LayerKind::Fc => {
            let xs = x.data();
            let w = weight.data();
            let gw = grad_w.data_mut();
            for (o, &d) in dpre.iter().enumerate() {
                if d == S::zero() {
                    continue;
                }
                for (g, &xv) in gw[o * cin..(o + 1) * cin].iter_mut().zip(xs) {
                    *g = *g + d * xv;
                }
            }
            if !need_dx {
                return Ok(None);
            }
            let mut dx = Tensor::zeros(x.dims());
            let dxs = dx.data_mut();
            for (o, &d) in dpre.iter().enumerate() {
                if d == S::zero() {
                    continue;
                }
                for (g, &wv) in dxs.iter_mut().zip(&w[o * cin..(o + 1) * cin]) {
                    *g = *g + d * wv;
                }
            }
            Ok(Some(dx))
        }
        LayerKind::Conv1d | LayerKind::Conv2d => {
            let g = spec.geometry(x.dims(), out_dims);
            conv::weight_grad(&g, x.data(), dpre, cin, cout, grad_w.data_mut());
            if !need_dx {
                return Ok(None);
            }
            let mut dx = Tensor::zeros(x.dims());
            conv::scatter(&g, dpre, weight.data(), cin, cout, dx.data_mut());
            Ok(Some(dx))
        }
        LayerKind::TConv1d | LayerKind::TConv2d => {
            let g = spec.geometry(x.dims(), out_dims);
            conv::weight_grad(&g, dpre, x.data(), cout, cin, grad_w.data_mut());
            if !need_dx {
                return Ok(None);
            }
            let mut dx = Tensor::zeros(x.dims());
            conv::gather(&g, dpre, weight.data(), cout, cin, dx.data_mut());
            Ok(Some(dx))
        }
    }
}
