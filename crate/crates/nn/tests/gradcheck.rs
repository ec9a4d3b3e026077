//! Central finite-difference checks of every backward pass in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use umesh_nn::{
    conv3d_backward, masked_mse, maxpool3d_backward, maxpool3d_forward, tconv3d_backward, Conv3d, TConv3d, Tensor,
    UNet, UNetConfig,
};

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, c: usize, dims: [usize; 3]) -> Tensor<f64> {
    Tensor::from_vec(c, dims, rand_vec(rng, c * dims.iter().product::<usize>())).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest entrywise relative error, scaled by the gradient's magnitude.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}

/// Central differences of `f` with respect to every entry of `x`.
fn numeric_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + H;
            let fp = f(x);
            x[i] = orig - H;
            let fm = f(x);
            x[i] = orig;
            (fp - fm) / (2.0 * H)
        })
        .collect()
}

fn check_conv(kernel: usize, cin: usize, cout: usize, dims: [usize; 3], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Conv3d::<f64>::zeros(cin, cout, kernel).unwrap();
    layer.weight = rand_vec(&mut rng, layer.weight.len());
    layer.bias = rand_vec(&mut rng, cout);
    let x = rand_tensor(&mut rng, cin, dims);
    let r = rand_tensor(&mut rng, cout, dims);
    let (gx, gw, gb) = conv3d_backward(&x, &layer, &r).unwrap();

    let loss = |l: &Conv3d<f64>, x: &Tensor<f64>| dot(l.forward(x).unwrap().as_slice(), r.as_slice());

    let mut w = layer.weight.clone();
    let nw = numeric_grad(&mut w, |w| {
        let mut l = layer.clone();
        l.weight = w.to_vec();
        loss(&l, &x)
    });
    let mut b = layer.bias.clone();
    let nb = numeric_grad(&mut b, |b| {
        let mut l = layer.clone();
        l.bias = b.to_vec();
        loss(&l, &x)
    });
    let mut xv = x.as_slice().to_vec();
    let nx = numeric_grad(&mut xv, |xv| loss(&layer, &Tensor::from_vec(cin, dims, xv.to_vec()).unwrap()));

    for (name, a, n) in [("weight", &gw, &nw), ("bias", &gb, &nb), ("input", &gx.as_slice().to_vec(), &nx)] {
        let e = rel_error(a, n);
        assert!(e < TOL, "conv k={kernel} {name}: relative error {e:.2e}");
    }
}

#[test]
fn conv3x3x3_gradients() {
    check_conv(3, 2, 3, [4, 3, 2], 1);
    check_conv(3, 1, 2, [1, 2, 5], 2);
}

#[test]
fn conv1x1x1_gradients() {
    check_conv(1, 4, 3, [2, 3, 2], 3);
}

#[test]
fn tconv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (cin, cout, dims) = (3, 2, [2, 1, 3]);
    let mut layer = TConv3d::<f64>::zeros(cin, cout);
    layer.weight = rand_vec(&mut rng, layer.weight.len());
    layer.bias = rand_vec(&mut rng, cout);
    let x = rand_tensor(&mut rng, cin, dims);
    let r = rand_tensor(&mut rng, cout, dims.map(|d| 2 * d));
    let (gx, gw, gb) = tconv3d_backward(&x, &layer, &r).unwrap();
    let loss = |l: &TConv3d<f64>, x: &Tensor<f64>| dot(l.forward(x).unwrap().as_slice(), r.as_slice());

    let mut w = layer.weight.clone();
    let nw = numeric_grad(&mut w, |w| {
        let mut l = layer.clone();
        l.weight = w.to_vec();
        loss(&l, &x)
    });
    let mut b = layer.bias.clone();
    let nb = numeric_grad(&mut b, |b| {
        let mut l = layer.clone();
        l.bias = b.to_vec();
        loss(&l, &x)
    });
    let mut xv = x.as_slice().to_vec();
    let nx = numeric_grad(&mut xv, |xv| loss(&layer, &Tensor::from_vec(cin, dims, xv.to_vec()).unwrap()));
    assert!(rel_error(&gw, &nw) < TOL);
    assert!(rel_error(&gb, &nb) < TOL);
    assert!(rel_error(gx.as_slice(), &nx) < TOL);
}

#[test]
fn maxpool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = [4, 2, 6];
    let x = rand_tensor(&mut rng, 2, dims);
    let (y, arg) = maxpool3d_forward(&x).unwrap();
    let r = rand_tensor(&mut rng, 2, y.dims());
    let gx = maxpool3d_backward(&r, &arg, dims).unwrap();
    let mut xv = x.as_slice().to_vec();
    let nx = numeric_grad(&mut xv, |xv| {
        let t = Tensor::from_vec(2, dims, xv.to_vec()).unwrap();
        dot(maxpool3d_forward(&t).unwrap().0.as_slice(), r.as_slice())
    });
    assert!(rel_error(gx.as_slice(), &nx) < TOL);
}

#[test]
fn masked_mse_gradient_and_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dims = [3, 2, 2];
    let p = rand_tensor(&mut rng, 3, dims);
    let t = rand_tensor(&mut rng, 3, dims);
    let mask: Vec<bool> = (0..12).map(|_| rng.random_bool(0.6)).collect();
    let (loss, g) = masked_mse(&p, &t, &mask).unwrap();

    let mut sum = 0.0;
    let mut count = 0;
    for c in 0..3 {
        for v in 0..12 {
            if mask[v] {
                let d = p.as_slice()[c * 12 + v] - t.as_slice()[c * 12 + v];
                sum += d * d;
                count += 1;
            }
        }
    }
    assert!((loss - sum / count as f64).abs() < 1e-12);

    let mut pv = p.as_slice().to_vec();
    let np = numeric_grad(&mut pv, |pv| {
        masked_mse(&Tensor::from_vec(3, dims, pv.to_vec()).unwrap(), &t, &mask).unwrap().0
    });
    assert!(rel_error(g.as_slice(), &np) < TOL);
}

/// Stride-2 2x2x2 convolution written directly from its definition.
fn conv_stride2(y: &Tensor<f64>, w: &[f64], cin: usize, cout: usize) -> Tensor<f64> {
    let od = y.dims();
    let dims = od.map(|d| d / 2);
    let mut x = Tensor::zeros(cin, dims);
    for i in 0..cin {
        for z in 0..dims[2] {
            for yy in 0..dims[1] {
                for xx in 0..dims[0] {
                    let mut acc = 0.0;
                    for o in 0..cout {
                        for a in 0..2 {
                            for b in 0..2 {
                                for c in 0..2 {
                                    let wi = (i * cout + o) * 8 + a * 4 + b * 2 + c;
                                    acc += w[wi] * y.as_slice()[y.index(o, [2 * xx + c, 2 * yy + b, 2 * z + a])];
                                }
                            }
                        }
                    }
                    let idx = x.index(i, [xx, yy, z]);
                    x.as_mut_slice()[idx] = acc;
                }
            }
        }
    }
    x
}

#[test]
fn tconv_is_adjoint_of_strided_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (cin, cout, dims) = (3, 4, [3, 2, 2]);
    let mut layer = TConv3d::<f64>::zeros(cin, cout);
    layer.weight = rand_vec(&mut rng, layer.weight.len());
    let x = rand_tensor(&mut rng, cin, dims);
    let y = rand_tensor(&mut rng, cout, dims.map(|d| 2 * d));
    let lhs = dot(layer.forward(&x).unwrap().as_slice(), y.as_slice());
    let rhs = dot(x.as_slice(), conv_stride2(&y, &layer.weight, cin, cout).as_slice());
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
}

#[test]
fn whole_network_gradient() {
    let cfg = UNetConfig::new(2, 2, [4, 4, 4]).unwrap();
    let mut net = UNet::<f64>::new(cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (_, b) in net.layer_params_mut() {
        for v in b.iter_mut() {
            *v = rng.random_range(0.0..0.2);
        }
    }
    let x = rand_tensor(&mut rng, 3, cfg.dims);
    let t = rand_tensor(&mut rng, 3, cfg.dims);
    let mask: Vec<bool> = (0..64).map(|i| i % 3 != 0).collect();
    let (pred, cache) = net.forward_cached(&x).unwrap();
    let (_, g) = masked_mse(&pred, &t, &mask).unwrap();
    let mut grads = net.zero_gradients();
    net.backward(&cache, &g, &mut grads).unwrap();

    let n_layers = grads.len();
    for layer in 0..n_layers {
        for which in 0..2 {
            let analytic = if which == 0 { &grads[layer].0 } else { &grads[layer].1 };
            let mut probe = net.clone();
            let mut values = {
                let p = probe.layer_params()[layer];
                if which == 0 { p.0.clone() } else { p.1.clone() }
            };
            // A few entries per tensor keep the check fast.
            let picks: Vec<usize> = (0..values.len()).step_by(values.len().div_ceil(6).max(1)).collect();
            for &i in &picks {
                let orig = values[i];
                let mut eval = |v: f64| {
                    values[i] = v;
                    {
                        let mut ps = probe.layer_params_mut();
                        let dst = if which == 0 { &mut *ps[layer].0 } else { &mut *ps[layer].1 };
                        dst.clone_from(&values);
                    }
                    masked_mse(&probe.forward(&x).unwrap(), &t, &mask).unwrap().0
                };
                let fd = (eval(orig + H) - eval(orig - H)) / (2.0 * H);
                eval(orig);
                let a = analytic[i];
                let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-7);
                assert!(err < TOL, "layer {layer} tensor {which} entry {i}: {a} vs {fd}");
            }
        }
    }
}
