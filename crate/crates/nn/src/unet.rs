//! 3D U-Net: `k` encoder stages, a two-convolution bottleneck, `k` decoder
//! stages with skip concatenation, and a linear 1x1x1 head to 3 channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layers::{maxpool3d_backward, maxpool3d_forward, relu_backward_in_place, relu_in_place, Conv3d, TConv3d};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IO_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Feature channels of the first stage (`c`).
    pub channels: usize,
    /// Encoder depth (`k`).
    pub steps: usize,
    /// Padded grid dims (x, y, z).
    pub dims: [usize; 3],
}

impl UNetConfig {
    pub fn new(channels: usize, steps: usize, dims: [usize; 3]) -> Result<Self> {
        let cfg = Self { channels, steps, dims };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.steps == 0 {
            return Err(NnError::Config("channels and steps must be positive".into()));
        }
        let m = 1usize << self.steps;
        if self.dims.iter().any(|&d| d == 0 || d % m != 0) {
            return Err(NnError::Config(format!(
                "dims {:?} must be positive multiples of 2^{} = {m}",
                self.dims, self.steps
            )));
        }
        Ok(())
    }

    /// Bottleneck channel count `c * 2^k`.
    pub fn feature_space_size(&self) -> usize {
        self.channels << self.steps
    }

    /// Output channels of encoder stage `i` (1-based).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.channels << (i - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStage<T> {
    pub up: TConv3d<T>,
    pub convs: [Conv3d<T>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    pub config: UNetConfig,
    pub encoder: Vec<[Conv3d<T>; 2]>,
    pub bottleneck: [Conv3d<T>; 2],
    /// Deepest stage first.
    pub decoder: Vec<DecoderStage<T>>,
    pub head: Conv3d<T>,
    pub force_scale: f64,
    pub disp_scale: f64,
    /// Initialisation seed.
    pub seed: u64,
}

/// Per-layer `(weight, bias)` gradients in [`UNet::layer_params`] order.
pub type Gradients<T> = Vec<(Vec<T>, Vec<T>)>;

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache<T> {
    enc: Vec<EncCache<T>>,
    bottleneck_in: Tensor<T>,
    b1: Tensor<T>,
    b2: Tensor<T>,
    dec: Vec<DecCache<T>>,
}

struct EncCache<T> {
    input: Tensor<T>,
    h1: Tensor<T>,
    h2: Tensor<T>,
    argmax: Vec<u32>,
}

struct DecCache<T> {
    input: Tensor<T>,
    cat: Tensor<T>,
    d1: Tensor<T>,
    d2: Tensor<T>,
}

/// Shape of one layer application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTrace {
    pub layers: Vec<LayerShape>,
    pub bottleneck_channels: usize,
    pub output_channels: usize,
    pub output_dims: [usize; 3],
    pub parameter_count: usize,
}

/// Layer-by-layer shapes without allocating weights. Fails if a skip
/// connection does not line up with its upsampled input.
pub fn trace_shapes(cfg: &UNetConfig) -> Result<ShapeTrace> {
    cfg.validate()?;
    let mut layers = Vec::new();
    let mut params = 0;
    let mut push = |name: String, ic: usize, oc: usize, id: [usize; 3], od: [usize; 3], taps: usize| {
        params += ic * oc * taps + oc;
        layers.push(LayerShape {
            name,
            in_channels: ic,
            out_channels: oc,
            in_dims: id,
            out_dims: od,
        });
    };
    let mut ch = IO_CHANNELS;
    let mut dims = cfg.dims;
    let mut skips = Vec::new();
    for i in 1..=cfg.steps {
        let oc = cfg.stage_channels(i);
        push(format!("enc{i}.conv1"), ch, oc, dims, dims, 27);
        push(format!("enc{i}.conv2"), oc, oc, dims, dims, 27);
        skips.push((oc, dims));
        ch = oc;
        dims = dims.map(|d| d / 2);
    }
    let fss = cfg.feature_space_size();
    push("bottleneck.conv1".into(), ch, fss, dims, dims, 27);
    push("bottleneck.conv2".into(), fss, fss, dims, dims, 27);
    ch = fss;
    for i in (1..=cfg.steps).rev() {
        let (sc, sd) = skips[i - 1];
        let up = dims.map(|d| d * 2);
        push(format!("dec{i}.up"), ch, ch / 2, dims, up, 8);
        if up != sd || ch / 2 != sc {
            return Err(NnError::Shape(format!(
                "decoder stage {i}: upsampled {}x{up:?} does not match skip {sc}x{sd:?}",
                ch / 2
            )));
        }
        push(format!("dec{i}.conv1"), 2 * sc, sc, up, up, 27);
        push(format!("dec{i}.conv2"), sc, sc, up, up, 27);
        ch = sc;
        dims = up;
    }
    push("head".into(), ch, IO_CHANNELS, dims, dims, 1);
    Ok(ShapeTrace {
        layers,
        bottleneck_channels: fss,
        output_channels: IO_CHANNELS,
        output_dims: dims,
        parameter_count: params,
    })
}

fn relu_conv<T: Scalar>(conv: &Conv3d<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut y = conv.forward(x)?;
    relu_in_place(&mut y);
    Ok(y)
}

impl<T: Scalar> UNet<T> {
    /// All-zero network.
    pub fn zeros(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut encoder = Vec::new();
        let mut ch = IO_CHANNELS;
        for i in 1..=config.steps {
            let oc = config.stage_channels(i);
            encoder.push([Conv3d::zeros(ch, oc, 3)?, Conv3d::zeros(oc, oc, 3)?]);
            ch = oc;
        }
        let fss = config.feature_space_size();
        let bottleneck = [Conv3d::zeros(ch, fss, 3)?, Conv3d::zeros(fss, fss, 3)?];
        let mut decoder = Vec::new();
        for i in (1..=config.steps).rev() {
            let sc = config.stage_channels(i);
            decoder.push(DecoderStage {
                up: TConv3d::zeros(2 * sc, sc),
                convs: [Conv3d::zeros(2 * sc, sc, 3)?, Conv3d::zeros(sc, sc, 3)?],
            });
        }
        Ok(Self {
            config,
            encoder,
            bottleneck,
            decoder,
            head: Conv3d::zeros(config.channels, IO_CHANNELS, 1)?,
            force_scale: 1.0,
            disp_scale: 1.0,
            seed: 0,
        })
    }

    /// He-normal weights (fan-in), zero biases, drawn in layer order.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        net.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fans = net.fan_ins();
        for ((w, _), fan) in net.layer_params_mut().into_iter().zip(fans) {
            let normal = Normal::new(0.0, (2.0 / fan as f64).sqrt()).expect("positive std");
            for x in w.iter_mut() {
                *x = T::from_f64(normal.sample(&mut rng));
            }
        }
        Ok(net)
    }

    fn fan_ins(&self) -> Vec<usize> {
        let mut f = Vec::new();
        for s in &self.encoder {
            f.extend(s.iter().map(|c| c.fan_in()));
        }
        f.extend(self.bottleneck.iter().map(|c| c.fan_in()));
        for s in &self.decoder {
            f.push(s.up.in_channels);
            f.extend(s.convs.iter().map(|c| c.fan_in()));
        }
        f.push(self.head.fan_in());
        f
    }

    /// `(weight, bias)` per layer: encoder stages, bottleneck, decoder
    /// stages (deepest first; transposed convolution then two convolutions),
    /// head.
    pub fn layer_params(&self) -> Vec<(&Vec<T>, &Vec<T>)> {
        let mut p = Vec::new();
        for s in &self.encoder {
            p.extend(s.iter().map(|c| (&c.weight, &c.bias)));
        }
        p.extend(self.bottleneck.iter().map(|c| (&c.weight, &c.bias)));
        for s in &self.decoder {
            p.push((&s.up.weight, &s.up.bias));
            p.extend(s.convs.iter().map(|c| (&c.weight, &c.bias)));
        }
        p.push((&self.head.weight, &self.head.bias));
        p
    }

    pub fn layer_params_mut(&mut self) -> Vec<(&mut Vec<T>, &mut Vec<T>)> {
        let mut p = Vec::new();
        for s in &mut self.encoder {
            p.extend(s.iter_mut().map(|c| (&mut c.weight, &mut c.bias)));
        }
        p.extend(self.bottleneck.iter_mut().map(|c| (&mut c.weight, &mut c.bias)));
        for s in &mut self.decoder {
            p.push((&mut s.up.weight, &mut s.up.bias));
            p.extend(s.convs.iter_mut().map(|c| (&mut c.weight, &mut c.bias)));
        }
        p.push((&mut self.head.weight, &mut self.head.bias));
        p
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_params().iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        self.layer_params()
            .iter()
            .map(|(w, b)| (vec![T::zero(); w.len()], vec![T::zero(); b.len()]))
            .collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != IO_CHANNELS || x.dims() != self.config.dims {
            return Err(NnError::Shape(format!(
                "network expects {IO_CHANNELS}x{:?}, got {}x{:?}",
                self.config.dims,
                x.channels(),
                x.dims()
            )));
        }
        Ok(())
    }

    /// Network output in normalised units.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mut enc = Vec::with_capacity(self.encoder.len());
        let mut a = x.clone();
        for [c1, c2] in &self.encoder {
            let h1 = relu_conv(c1, &a)?;
            let h2 = relu_conv(c2, &h1)?;
            let (pooled, argmax) = maxpool3d_forward(&h2)?;
            enc.push(EncCache {
                input: std::mem::replace(&mut a, pooled),
                h1,
                h2,
                argmax,
            });
        }
        let b1 = relu_conv(&self.bottleneck[0], &a)?;
        let b2 = relu_conv(&self.bottleneck[1], &b1)?;
        let bottleneck_in = std::mem::replace(&mut a, b2.clone());
        let mut dec = Vec::with_capacity(self.decoder.len());
        for (j, stage) in self.decoder.iter().enumerate() {
            let skip = &enc[enc.len() - 1 - j].h2;
            let up = stage.up.forward(&a)?;
            let cat = Tensor::concat(&up, skip)?;
            let d1 = relu_conv(&stage.convs[0], &cat)?;
            let d2 = relu_conv(&stage.convs[1], &d1)?;
            dec.push(DecCache {
                input: std::mem::replace(&mut a, d2.clone()),
                cat,
                d1,
                d2,
            });
        }
        let out = self.head.forward(&a)?;
        Ok((
            out,
            ForwardCache {
                enc,
                bottleneck_in,
                b1,
                b2,
                dec,
            },
        ))
    }

    /// Accumulates parameter gradients of a scalar loss with output
    /// gradient `grad_out` into `grads`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &Tensor<T>, grads: &mut Gradients<T>) -> Result<()> {
        let k = self.encoder.len();
        let head_idx = grads.len() - 1;
        let dec_base = 2 * k + 2;
        let last = &cache.dec.last().expect("at least one stage").d2;
        let (gw, gb) = &mut grads[head_idx];
        let mut g = self.head.backward(last, grad_out, gw, gb, true)?.expect("input gradient");

        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..k).map(|_| None).collect();
        for j in (0..k).rev() {
            let (stage, c) = (&self.decoder[j], &cache.dec[j]);
            let base = dec_base + 3 * j;
            relu_backward_in_place(&c.d2, &mut g);
            let (gw, gb) = &mut grads[base + 2];
            g = stage.convs[1].backward(&c.d1, &g, gw, gb, true)?.expect("input gradient");
            relu_backward_in_place(&c.d1, &mut g);
            let (gw, gb) = &mut grads[base + 1];
            g = stage.convs[0].backward(&c.cat, &g, gw, gb, true)?.expect("input gradient");
            let (g_up, g_skip) = g.split_channels(stage.up.out_channels);
            skip_grads[k - 1 - j] = Some(g_skip);
            let (gw, gb) = &mut grads[base];
            g = stage.up.backward(&c.input, &g_up, gw, gb)?;
        }

        relu_backward_in_place(&cache.b2, &mut g);
        let (gw, gb) = &mut grads[2 * k + 1];
        g = self.bottleneck[1].backward(&cache.b1, &g, gw, gb, true)?.expect("input gradient");
        relu_backward_in_place(&cache.b1, &mut g);
        let (gw, gb) = &mut grads[2 * k];
        g = self.bottleneck[0].backward(&cache.bottleneck_in, &g, gw, gb, true)?.expect("input gradient");

        for i in (0..k).rev() {
            let c = &cache.enc[i];
            g = maxpool3d_backward(&g, &c.argmax, c.h2.dims())?;
            let skip = skip_grads[i].take().expect("decoder visited every stage");
            for (a, &b) in g.as_mut_slice().iter_mut().zip(skip.as_slice()) {
                *a += b;
            }
            relu_backward_in_place(&c.h2, &mut g);
            let (gw, gb) = &mut grads[2 * i + 1];
            g = self.encoder[i][1].backward(&c.h1, &g, gw, gb, true)?.expect("input gradient");
            relu_backward_in_place(&c.h1, &mut g);
            let (gw, gb) = &mut grads[2 * i];
            match self.encoder[i][0].backward(&c.input, &g, gw, gb, i > 0)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> UNet<U> {
        let conv = |c: &Conv3d<T>| Conv3d {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            weight: c.weight.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            bias: c.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        };
        UNet {
            config: self.config,
            encoder: self.encoder.iter().map(|[a, b]| [conv(a), conv(b)]).collect(),
            bottleneck: [conv(&self.bottleneck[0]), conv(&self.bottleneck[1])],
            decoder: self
                .decoder
                .iter()
                .map(|s| DecoderStage {
                    up: TConv3d {
                        in_channels: s.up.in_channels,
                        out_channels: s.up.out_channels,
                        weight: s.up.weight.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                        bias: s.up.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    },
                    convs: [conv(&s.convs[0]), conv(&s.convs[1])],
                })
                .collect(),
            head: conv(&self.head),
            force_scale: self.force_scale,
            disp_scale: self.disp_scale,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_fss_values() {
        for (c, k, fss) in [(16, 4, 256), (32, 4, 512), (64, 3, 512), (128, 3, 1024), (8, 2, 32)] {
            let t = trace_shapes(&UNetConfig::new(c, k, [32, 16, 16]).unwrap()).unwrap();
            assert_eq!(t.bottleneck_channels, fss);
            assert_eq!(t.output_dims, [32, 16, 16]);
            assert_eq!(t.output_channels, 3);
        }
    }

    #[test]
    fn trace_matches_allocated_network() {
        let cfg = UNetConfig::new(4, 2, [8, 4, 4]).unwrap();
        let net = UNet::<f32>::new(cfg, 1).unwrap();
        let t = trace_shapes(&cfg).unwrap();
        assert_eq!(t.parameter_count, net.parameter_count());
        assert_eq!(t.layers.len(), net.layer_params().len());
        let y = net.forward(&Tensor::zeros(3, cfg.dims)).unwrap();
        assert_eq!((y.channels(), y.dims()), (3, cfg.dims));
    }

    #[test]
    fn zero_network_gives_zero() {
        let cfg = UNetConfig::new(4, 1, [4, 4, 2]).unwrap();
        let net = UNet::<f64>::zeros(cfg).unwrap();
        let x = Tensor::from_vec(3, cfg.dims, (0..96).map(|v| v as f64 - 40.0).collect()).unwrap();
        assert!(net.forward(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_configs() {
        assert!(UNetConfig::new(8, 3, [32, 16, 12]).is_err());
        assert!(UNetConfig::new(0, 1, [2, 2, 2]).is_err());
        let net = UNet::<f32>::zeros(UNetConfig::new(2, 1, [4, 4, 4]).unwrap()).unwrap();
        assert!(net.forward(&Tensor::zeros(3, [4, 4, 2])).is_err());
    }
}
