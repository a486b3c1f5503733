use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One stage of a feed-forward layer chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool {
        kernel: usize,
    },
    Dense {
        out_dim: usize,
    },
    Relu,
    Flatten,
}

impl LayerSpec {
    /// Output shape for a per-sample input shape, or an error if the chain
    /// does not type-check.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
            } => {
                let [_, h, w] = chw(input, "conv")?;
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::InvalidArgument(format!("degenerate conv {self:?}")));
                }
                if kernel > h || kernel > w {
                    return Err(Error::InvalidArgument(format!(
                        "conv kernel {kernel} larger than input {h}x{w}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ])
            }
            LayerSpec::MaxPool { kernel } => {
                let [c, h, w] = chw(input, "maxpool")?;
                if kernel == 0 || kernel > h || kernel > w {
                    return Err(Error::InvalidArgument(format!(
                        "pool kernel {kernel} does not fit input {h}x{w}"
                    )));
                }
                Ok(vec![c, h / kernel, w / kernel])
            }
            LayerSpec::Dense { out_dim } => {
                if input.len() != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "dense layer needs a flat input, got {input:?}"
                    )));
                }
                if out_dim == 0 {
                    return Err(Error::InvalidArgument("dense out_dim is zero".into()));
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// (weight count, bias count) for this layer on the given input shape.
    pub fn param_counts(&self, input: &[usize]) -> (usize, usize) {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                ..
            } => (out_channels * input[0] * kernel * kernel, out_channels),
            LayerSpec::Dense { out_dim } => (out_dim * input[0], out_dim),
            _ => (0, 0),
        }
    }
}

fn chw(input: &[usize], what: &str) -> Result<[usize; 3]> {
    match input {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(Error::InvalidArgument(format!(
            "{what} layer needs a channels x height x width input, got {input:?}"
        ))),
    }
}

/// A layer with resolved shapes and its parameters.
///
/// Conv weights are `[out_channels, in_channels, k, k]`; dense weights are
/// `[out_dim, in_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T: Scalar = f32> {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients for one layer, shaped like its parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerGrads<T: Scalar = f32> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(spec: LayerSpec, in_shape: &[usize]) -> Result<Self> {
        let out_shape = spec.output_shape(in_shape)?;
        let (nw, nb) = spec.param_counts(in_shape);
        Ok(Layer {
            spec,
            in_shape: in_shape.to_vec(),
            out_shape,
            weight: vec![T::zero(); nw],
            bias: vec![T::zero(); nb],
        })
    }

    pub fn fan_in(&self) -> usize {
        match self.spec {
            LayerSpec::Conv { kernel, .. } => self.in_shape[0] * kernel * kernel,
            LayerSpec::Dense { .. } => self.in_shape[0],
            _ => 0,
        }
    }

    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        let c = |v: &Vec<T>| v.iter().map(|&x| U::from(x).unwrap()).collect();
        Layer {
            spec: self.spec,
            in_shape: self.in_shape.clone(),
            out_shape: self.out_shape.clone(),
            weight: c(&self.weight),
            bias: c(&self.bias),
        }
    }

    /// Batched forward; `input` holds `batch * in_len` values.
    pub fn forward(&self, input: &[T], batch: usize) -> Vec<T> {
        let mut out = vec![T::zero(); batch * self.out_len()];
        match self.spec {
            LayerSpec::Conv { kernel, stride, .. } => {
                let geo = ConvGeometry::new(&self.in_shape, &self.out_shape, kernel, stride);
                let mut cols = vec![T::zero(); geo.col_rows() * geo.col_cols()];
                for (x, y) in input
                    .chunks(self.in_len())
                    .zip(out.chunks_mut(self.out_len()))
                {
                    geo.im2col(x, &mut cols);
                    let (oc, ckk, hw) = (geo.out_c, geo.col_rows(), geo.col_cols());
                    for (o, row) in y.chunks_mut(hw).enumerate() {
                        row.fill(self.bias[o]);
                    }
                    T::gemm(
                        oc,
                        ckk,
                        hw,
                        T::one(),
                        &self.weight,
                        (ckk as isize, 1),
                        &cols,
                        (hw as isize, 1),
                        T::one(),
                        y,
                        (hw as isize, 1),
                    );
                }
            }
            LayerSpec::Dense { out_dim } => {
                let in_dim = self.in_shape[0];
                for row in out.chunks_mut(out_dim) {
                    row.copy_from_slice(&self.bias);
                }
                T::gemm(
                    batch,
                    in_dim,
                    out_dim,
                    T::one(),
                    input,
                    (in_dim as isize, 1),
                    &self.weight,
                    (1, in_dim as isize),
                    T::one(),
                    &mut out,
                    (out_dim as isize, 1),
                );
            }
            LayerSpec::MaxPool { kernel } => {
                let (c, h, w) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (self.out_shape[1], self.out_shape[2]);
                for (x, y) in input
                    .chunks(self.in_len())
                    .zip(out.chunks_mut(self.out_len()))
                {
                    for ch in 0..c {
                        let plane = &x[ch * h * w..(ch + 1) * h * w];
                        for i in 0..oh {
                            for j in 0..ow {
                                let idx = pool_argmax(plane, w, i, j, kernel);
                                y[ch * oh * ow + i * ow + j] = plane[idx];
                            }
                        }
                    }
                }
            }
            LayerSpec::Relu => {
                for (y, &x) in out.iter_mut().zip(input) {
                    *y = if x > T::zero() { x } else { T::zero() };
                }
            }
            LayerSpec::Flatten => out.copy_from_slice(input),
        }
        out
    }

    /// Backward pass through this layer.
    ///
    /// Accumulates parameter gradients into `grads` and returns the
    /// gradient w.r.t. the input when `need_input_grad` is set.
    pub fn backward(
        &self,
        input: &[T],
        output: &[T],
        grad_out: &[T],
        batch: usize,
        grads: &mut LayerGrads<T>,
        need_input_grad: bool,
    ) -> Option<Vec<T>> {
        match self.spec {
            LayerSpec::Conv { kernel, stride, .. } => {
                let geo = ConvGeometry::new(&self.in_shape, &self.out_shape, kernel, stride);
                let (oc, ckk, hw) = (geo.out_c, geo.col_rows(), geo.col_cols());
                let mut cols = vec![T::zero(); ckk * hw];
                let mut dcols = vec![T::zero(); ckk * hw];
                let mut dx = need_input_grad.then(|| vec![T::zero(); batch * self.in_len()]);
                for n in 0..batch {
                    let x = &input[n * self.in_len()..(n + 1) * self.in_len()];
                    let dy = &grad_out[n * self.out_len()..(n + 1) * self.out_len()];
                    geo.im2col(x, &mut cols);
                    // dW += dY [oc, hw] * cols^T [hw, ckk]
                    T::gemm(
                        oc,
                        hw,
                        ckk,
                        T::one(),
                        dy,
                        (hw as isize, 1),
                        &cols,
                        (1, hw as isize),
                        T::one(),
                        &mut grads.weight,
                        (ckk as isize, 1),
                    );
                    for (o, row) in dy.chunks(hw).enumerate() {
                        grads.bias[o] = grads.bias[o] + row.iter().fold(T::zero(), |a, &b| a + b);
                    }
                    if let Some(dx) = dx.as_mut() {
                        // dcols = W^T [ckk, oc] * dY [oc, hw]
                        T::gemm(
                            ckk,
                            oc,
                            hw,
                            T::one(),
                            &self.weight,
                            (1, ckk as isize),
                            dy,
                            (hw as isize, 1),
                            T::zero(),
                            &mut dcols,
                            (hw as isize, 1),
                        );
                        geo.col2im(&dcols, &mut dx[n * self.in_len()..(n + 1) * self.in_len()]);
                    }
                }
                dx
            }
            LayerSpec::Dense { out_dim } => {
                let in_dim = self.in_shape[0];
                // dW [out, in] += dY^T [out, batch] * X [batch, in]
                T::gemm(
                    out_dim,
                    batch,
                    in_dim,
                    T::one(),
                    grad_out,
                    (1, out_dim as isize),
                    input,
                    (in_dim as isize, 1),
                    T::one(),
                    &mut grads.weight,
                    (in_dim as isize, 1),
                );
                for row in grad_out.chunks(out_dim) {
                    for (b, &g) in grads.bias.iter_mut().zip(row) {
                        *b = *b + g;
                    }
                }
                need_input_grad.then(|| {
                    let mut dx = vec![T::zero(); batch * in_dim];
                    T::gemm(
                        batch,
                        out_dim,
                        in_dim,
                        T::one(),
                        grad_out,
                        (out_dim as isize, 1),
                        &self.weight,
                        (in_dim as isize, 1),
                        T::zero(),
                        &mut dx,
                        (in_dim as isize, 1),
                    );
                    dx
                })
            }
            LayerSpec::MaxPool { kernel } => need_input_grad.then(|| {
                let (c, h, w) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (self.out_shape[1], self.out_shape[2]);
                let mut dx = vec![T::zero(); batch * self.in_len()];
                for n in 0..batch {
                    let x = &input[n * self.in_len()..(n + 1) * self.in_len()];
                    let dy = &grad_out[n * self.out_len()..(n + 1) * self.out_len()];
                    let dxn = &mut dx[n * self.in_len()..(n + 1) * self.in_len()];
                    for ch in 0..c {
                        let plane = &x[ch * h * w..(ch + 1) * h * w];
                        for i in 0..oh {
                            for j in 0..ow {
                                let idx = pool_argmax(plane, w, i, j, kernel);
                                let g = dy[ch * oh * ow + i * ow + j];
                                dxn[ch * h * w + idx] = dxn[ch * h * w + idx] + g;
                            }
                        }
                    }
                }
                dx
            }),
            LayerSpec::Relu => need_input_grad.then(|| {
                grad_out
                    .iter()
                    .zip(output)
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                    .collect()
            }),
            LayerSpec::Flatten => need_input_grad.then(|| grad_out.to_vec()),
        }
    }

    pub fn zero_grads(&self) -> LayerGrads<T> {
        LayerGrads {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }
}

/// Position (within the plane) of the window maximum; first maximum wins.
fn pool_argmax<T: Scalar>(plane: &[T], w: usize, i: usize, j: usize, k: usize) -> usize {
    let mut best = (i * k) * w + j * k;
    for di in 0..k {
        for dj in 0..k {
            let idx = (i * k + di) * w + j * k + dj;
            if plane[idx] > plane[best] {
                best = idx;
            }
        }
    }
    best
}

struct ConvGeometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kernel: usize,
    stride: usize,
}

impl ConvGeometry {
    fn new(in_shape: &[usize], out_shape: &[usize], kernel: usize, stride: usize) -> Self {
        ConvGeometry {
            in_c: in_shape[0],
            in_h: in_shape[1],
            in_w: in_shape[2],
            out_c: out_shape[0],
            out_h: out_shape[1],
            out_w: out_shape[2],
            kernel,
            stride,
        }
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let k = self.kernel;
        let hw = self.col_cols();
        for c in 0..self.in_c {
            let plane = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for oi in 0..self.out_h {
                        let src = &plane[(oi * self.stride + ki) * self.in_w + kj..];
                        let d = &mut dst[oi * self.out_w..(oi + 1) * self.out_w];
                        if self.stride == 1 {
                            d.copy_from_slice(&src[..self.out_w]);
                        } else {
                            for (oj, v) in d.iter_mut().enumerate() {
                                *v = src[oj * self.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let k = self.kernel;
        let hw = self.col_cols();
        for c in 0..self.in_c {
            let plane = &mut dx[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for oi in 0..self.out_h {
                        for oj in 0..self.out_w {
                            let idx = (oi * self.stride + ki) * self.in_w + oj * self.stride + kj;
                            plane[idx] = plane[idx] + src[oi * self.out_w + oj];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_shapes() {
        let conv = LayerSpec::Conv {
            out_channels: 6,
            kernel: 5,
            stride: 1,
        };
        assert_eq!(conv.output_shape(&[1, 32, 32]).unwrap(), vec![6, 28, 28]);
        assert_eq!(
            LayerSpec::MaxPool { kernel: 2 }.output_shape(&[6, 28, 28]).unwrap(),
            vec![6, 14, 14]
        );
        assert_eq!(LayerSpec::Flatten.output_shape(&[16, 5, 5]).unwrap(), vec![400]);
        assert!(LayerSpec::Dense { out_dim: 3 }.output_shape(&[16, 5, 5]).is_err());
        assert!(conv.output_shape(&[400]).is_err());
        assert!(conv.output_shape(&[1, 3, 3]).is_err());
    }

    #[test]
    fn strided_conv_matches_direct_sum() {
        let mut layer = Layer::<f64>::new(
            LayerSpec::Conv {
                out_channels: 2,
                kernel: 2,
                stride: 2,
            },
            &[1, 4, 4],
        )
        .unwrap();
        layer.weight = vec![1., 0., 0., 1., 0.5, 0.5, 0.5, 0.5];
        layer.bias = vec![0.0, 1.0];
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let y = layer.forward(&x, 1);
        // window (0,0): [0,1,4,5]
        assert_eq!(y[0], 0.0 + 5.0);
        assert_eq!(y[4], 1.0 + 0.5 * (0.0 + 1.0 + 4.0 + 5.0));
        // window (1,1): [10,11,14,15]
        assert_eq!(y[3], 10.0 + 15.0);
    }
}
