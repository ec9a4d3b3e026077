//! Volumetric layers with exact backward passes.
//!
//! Convolutions are lowered to matrix products: a 3x3x3 convolution with
//! zero padding 1 is `W (O x 27C) * col (27C x V)`, where `col` gathers the
//! shifted input neighbourhoods.

use crate::error::{NnError, Result};
use crate::scalar::{gemm, Mat, Scalar};
use crate::tensor::Tensor;

/// Cross-correlation with stride 1; kernel 3 uses zero padding 1, kernel 1
/// none. Weights are `[out][in][kz][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

fn taps(kernel: usize) -> usize {
    kernel * kernel * kernel
}

/// Copies `src` shifted by `d - 1` into `dst` (zero fill at the ends).
fn shift_row<T: Scalar>(dst: &mut [T], src: &[T], d: usize) {
    let n = dst.len();
    match d {
        0 => {
            dst[0] = T::zero();
            dst[1..].copy_from_slice(&src[..n - 1]);
        }
        1 => dst.copy_from_slice(src),
        _ => {
            dst[..n - 1].copy_from_slice(&src[1..]);
            dst[n - 1] = T::zero();
        }
    }
}

/// Adds `src` shifted by `1 - d` into `dst`; adjoint of [`shift_row`].
fn unshift_row_add<T: Scalar>(dst: &mut [T], src: &[T], d: usize) {
    let n = dst.len();
    match d {
        0 => {
            for (a, &b) in dst[..n - 1].iter_mut().zip(&src[1..]) {
                *a += b;
            }
        }
        1 => {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
        _ => {
            for (a, &b) in dst[1..].iter_mut().zip(&src[..n - 1]) {
                *a += b;
            }
        }
    }
}

fn in_range(i: usize, d: usize, n: usize) -> Option<usize> {
    let s = i as isize + d as isize - 1;
    (s >= 0 && (s as usize) < n).then_some(s as usize)
}

fn im2col<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let [nx, ny, nz] = x.dims();
    let v = x.voxels();
    let mut col = vec![T::zero(); x.channels() * 27 * v];
    for c in 0..x.channels() {
        let src = x.channel(c);
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut col[((c * 27) + kz * 9 + ky * 3 + kx) * v..][..v];
                    for z in 0..nz {
                        let Some(sz) = in_range(z, kz, nz) else { continue };
                        for y in 0..ny {
                            let Some(sy) = in_range(y, ky, ny) else { continue };
                            let s = &src[(sz * ny + sy) * nx..][..nx];
                            shift_row(&mut row[(z * ny + y) * nx..][..nx], s, kx);
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &[T], channels: usize, dims: [usize; 3]) -> Tensor<T> {
    let [nx, ny, nz] = dims;
    let mut out = Tensor::zeros(channels, dims);
    let v = out.voxels();
    let data = out.as_mut_slice();
    for c in 0..channels {
        let dst = &mut data[c * v..(c + 1) * v];
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &col[((c * 27) + kz * 9 + ky * 3 + kx) * v..][..v];
                    for z in 0..nz {
                        let Some(sz) = in_range(z, kz, nz) else { continue };
                        for y in 0..ny {
                            let Some(sy) = in_range(y, ky, ny) else { continue };
                            let d = &mut dst[(sz * ny + sy) * nx..][..nx];
                            unshift_row_add(d, &row[(z * ny + y) * nx..][..nx], kx);
                        }
                    }
                }
            }
        }
    }
    out
}

impl<T: Scalar> Conv3d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        if kernel != 1 && kernel != 3 {
            return Err(NnError::Config(format!("unsupported kernel size {kernel}")));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![T::zero(); out_channels * in_channels * taps(kernel)],
            bias: vec![T::zero(); out_channels],
        })
    }

    /// Fan-in of each output unit.
    pub fn fan_in(&self) -> usize {
        self.in_channels * taps(self.kernel)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(NnError::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let v = x.voxels();
        let k = self.fan_in();
        let mut out = Tensor::zeros(self.out_channels, x.dims());
        {
            let data = out.as_mut_slice();
            for (o, &b) in self.bias.iter().enumerate() {
                data[o * v..(o + 1) * v].fill(b);
            }
        }
        let w = Mat::new(&self.weight, self.out_channels, k);
        if self.kernel == 1 {
            gemm(w, Mat::new(x.as_slice(), k, v), T::one(), out.as_mut_slice());
        } else {
            let col = im2col(x);
            gemm(w, Mat::new(&col, k, v), T::one(), out.as_mut_slice());
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grad_w` / `grad_b`; returns
    /// the input gradient when `input_grad` is set.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grad_w: &mut [T],
        grad_b: &mut [T],
        input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        self.check_input(x)?;
        if grad_out.channels() != self.out_channels || grad_out.dims() != x.dims() {
            return Err(NnError::Shape("convolution output gradient has the wrong shape".into()));
        }
        let v = x.voxels();
        let k = self.fan_in();
        let go = Mat::new(grad_out.as_slice(), self.out_channels, v);
        for (o, gb) in grad_b.iter_mut().enumerate() {
            *gb += grad_out.channel(o).iter().copied().sum::<T>();
        }
        let w = Mat::new(&self.weight, self.out_channels, k);
        if self.kernel == 1 {
            gemm(go, Mat::new(x.as_slice(), k, v).t(), T::one(), grad_w);
            if !input_grad {
                return Ok(None);
            }
            let mut gx = Tensor::zeros(self.in_channels, x.dims());
            gemm(w.t(), go, T::zero(), gx.as_mut_slice());
            return Ok(Some(gx));
        }
        let col = im2col(x);
        gemm(go, Mat::new(&col, k, v).t(), T::one(), grad_w);
        if !input_grad {
            return Ok(None);
        }
        let mut gcol = col;
        gemm(w.t(), go, T::zero(), &mut gcol);
        Ok(Some(col2im(&gcol, self.in_channels, x.dims())))
    }
}

/// 2x2x2 transposed convolution with stride 2. Weights are
/// `[in][out][kz][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TConv3d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> TConv3d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![T::zero(); in_channels * out_channels * 8],
            bias: vec![T::zero(); out_channels],
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(NnError::Shape(format!(
                "transposed convolution expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let [nx, ny, nz] = x.dims();
        let v = x.voxels();
        let o8 = self.out_channels * 8;
        let mut y = vec![T::zero(); o8 * v];
        gemm(
            Mat::new(&self.weight, self.in_channels, o8).t(),
            Mat::new(x.as_slice(), self.in_channels, v),
            T::zero(),
            &mut y,
        );
        let od = [2 * nx, 2 * ny, 2 * nz];
        let mut out = Tensor::zeros(self.out_channels, od);
        let ov = out.voxels();
        let data = out.as_mut_slice();
        for o in 0..self.out_channels {
            let dst = &mut data[o * ov..(o + 1) * ov];
            let b = self.bias[o];
            for tap in 0..8 {
                let (a, bb, c) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                let src = &y[(o * 8 + tap) * v..][..v];
                for z in 0..nz {
                    for yy in 0..ny {
                        let row = &src[(z * ny + yy) * nx..][..nx];
                        let base = ((2 * z + a) * od[1] + 2 * yy + bb) * od[0] + c;
                        for (x, &val) in row.iter().enumerate() {
                            dst[base + 2 * x] = val + b;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        grad_w: &mut [T],
        grad_b: &mut [T],
    ) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let [nx, ny, nz] = x.dims();
        let od = [2 * nx, 2 * ny, 2 * nz];
        if grad_out.channels() != self.out_channels || grad_out.dims() != od {
            return Err(NnError::Shape("transposed convolution output gradient has the wrong shape".into()));
        }
        let v = x.voxels();
        let o8 = self.out_channels * 8;
        let mut gy = vec![T::zero(); o8 * v];
        for o in 0..self.out_channels {
            let src = grad_out.channel(o);
            grad_b[o] += src.iter().copied().sum::<T>();
            for tap in 0..8 {
                let (a, bb, c) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                let dst = &mut gy[(o * 8 + tap) * v..][..v];
                for z in 0..nz {
                    for yy in 0..ny {
                        let base = ((2 * z + a) * od[1] + 2 * yy + bb) * od[0] + c;
                        for (x, d) in dst[(z * ny + yy) * nx..][..nx].iter_mut().enumerate() {
                            *d = src[base + 2 * x];
                        }
                    }
                }
            }
        }
        let gyt = Mat::new(&gy, o8, v);
        gemm(Mat::new(x.as_slice(), self.in_channels, v), gyt.t(), T::one(), grad_w);
        let mut gx = Tensor::zeros(self.in_channels, x.dims());
        gemm(Mat::new(&self.weight, self.in_channels, o8), gyt, T::zero(), gx.as_mut_slice());
        Ok(gx)
    }
}

/// 2x2x2 max pooling; returns the pooled tensor and, per output entry, the
/// flat input index of the selected element (first maximum in window order).
pub fn maxpool3d_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let [nx, ny, nz] = x.dims();
    if nx % 2 != 0 || ny % 2 != 0 || nz % 2 != 0 {
        return Err(NnError::Shape(format!("max pooling needs even dims, got {:?}", x.dims())));
    }
    let od = [nx / 2, ny / 2, nz / 2];
    let mut out = Tensor::zeros(x.channels(), od);
    let mut arg = vec![0u32; out.len()];
    let src = x.as_slice();
    let mut n = 0;
    for c in 0..x.channels() {
        for z in 0..od[2] {
            for y in 0..od[1] {
                for xo in 0..od[0] {
                    let mut best = usize::MAX;
                    let mut val = T::neg_infinity();
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = x.index(c, [2 * xo + dx, 2 * y + dy, 2 * z + dz]);
                                if best == usize::MAX || src[i] > val {
                                    best = i;
                                    val = src[i];
                                }
                            }
                        }
                    }
                    out.as_mut_slice()[n] = val;
                    arg[n] = best as u32;
                    n += 1;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool3d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[u32],
    input_dims: [usize; 3],
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(NnError::Shape("pooling argmax does not match the gradient".into()));
    }
    let mut gx = Tensor::zeros(grad_out.channels(), input_dims);
    let g = gx.as_mut_slice();
    for (&i, &v) in argmax.iter().zip(grad_out.as_slice()) {
        g[i as usize] += v;
    }
    Ok(gx)
}

pub fn relu_in_place<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.as_mut_slice() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` where the activation output was not positive.
pub fn relu_backward_in_place<T: Scalar>(output: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, &o) in grad.as_mut_slice().iter_mut().zip(output.as_slice()) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn conv3d_forward<T: Scalar>(x: &Tensor<T>, layer: &Conv3d<T>) -> Result<Tensor<T>> {
    layer.forward(x)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    layer: &Conv3d<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let mut gw = vec![T::zero(); layer.weight.len()];
    let mut gb = vec![T::zero(); layer.bias.len()];
    let gx = layer.backward(x, grad_out, &mut gw, &mut gb, true)?.expect("input gradient requested");
    Ok((gx, gw, gb))
}

pub fn tconv3d_forward<T: Scalar>(x: &Tensor<T>, layer: &TConv3d<T>) -> Result<Tensor<T>> {
    layer.forward(x)
}

pub fn tconv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    layer: &TConv3d<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let mut gw = vec![T::zero(); layer.weight.len()];
    let mut gb = vec![T::zero(); layer.bias.len()];
    let gx = layer.backward(x, grad_out, &mut gw, &mut gb)?;
    Ok((gx, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let mut conv = Conv3d::<f64>::zeros(1, 1, 3).unwrap();
        conv.weight[13] = 1.0;
        let x = Tensor::from_vec(1, [3, 4, 5], (0..60).map(|v| v as f64 * 0.3 - 4.0).collect()).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_overlap() {
        let mut conv = Conv3d::<f64>::zeros(1, 1, 3).unwrap();
        conv.weight.fill(1.0);
        let x = Tensor::from_vec(1, [4, 4, 4], vec![1.0; 64]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.as_slice()[y.index(0, [0, 0, 0])], 8.0);
        assert_eq!(y.as_slice()[y.index(0, [1, 1, 1])], 27.0);
        assert_eq!(y.as_slice()[y.index(0, [0, 1, 2])], 18.0);
    }

    #[test]
    fn pool_ties_and_maxima() {
        let x = Tensor::from_vec(1, [2, 2, 2], vec![5.0f64; 8]).unwrap();
        let (y, arg) = maxpool3d_forward(&x).unwrap();
        assert_eq!(y.as_slice(), &[5.0]);
        assert_eq!(arg, vec![0]);
        let g = maxpool3d_backward(&Tensor::from_vec(1, [1, 1, 1], vec![2.0]).unwrap(), &arg, [2, 2, 2]).unwrap();
        assert_eq!(g.as_slice(), &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

        let x = Tensor::from_vec(1, [4, 2, 2], (0..16).map(|v| ((v * 7) % 16) as f64).collect()).unwrap();
        let (y, _) = maxpool3d_forward(&x).unwrap();
        let expect: Vec<f64> = (0..2)
            .map(|w| {
                (0..16)
                    .filter(|v| (v % 4) / 2 == w)
                    .map(|v| ((v * 7) % 16) as f64)
                    .fold(f64::MIN, f64::max)
            })
            .collect();
        assert_eq!(y.as_slice(), expect.as_slice());
        assert!(maxpool3d_forward(&Tensor::<f64>::zeros(1, [3, 2, 2])).is_err());
    }

    #[test]
    fn tconv_single_block() {
        let mut t = TConv3d::<f64>::zeros(1, 1);
        for (i, w) in t.weight.iter_mut().enumerate() {
            *w = i as f64 + 1.0;
        }
        t.bias[0] = 0.5;
        let x = Tensor::from_vec(1, [1, 1, 1], vec![2.0]).unwrap();
        let y = t.forward(&x).unwrap();
        assert_eq!(y.dims(), [2, 2, 2]);
        let expect: Vec<f64> = (0..8).map(|i| 2.0 * (i as f64 + 1.0) + 0.5).collect();
        assert_eq!(y.as_slice(), expect.as_slice());
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let conv = Conv3d::<f32>::zeros(2, 1, 3).unwrap();
        assert!(conv.forward(&Tensor::zeros(3, [2, 2, 2])).is_err());
        let t = TConv3d::<f32>::zeros(2, 1);
        assert!(t.forward(&Tensor::zeros(1, [2, 2, 2])).is_err());
        assert!(Conv3d::<f32>::zeros(1, 1, 2).is_err());
    }
}
