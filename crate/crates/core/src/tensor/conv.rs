use rand::Rng;

use super::{Result, Tape, Tensor, TensorError, Var};

pub(crate) fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

/// Output positions `o` in `[lo, hi)` whose tap `o * stride + k - padding`
/// lands inside `[0, n)`.
#[inline]
fn valid_range(n: usize, out: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    // o * stride + k - padding <= n - 1
    let hi = if n + padding < k + 1 {
        0
    } else {
        ((n + padding - k - 1) / stride + 1).min(out)
    };
    (lo.min(hi), hi)
}

struct Geometry {
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn geometry(input: &[usize], weight: &[usize], bias: &[usize], stride: usize, padding: usize) -> Result<Geometry> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "conv2d",
        lhs: input.to_vec(),
        rhs: weight.to_vec(),
    };
    let (&[ci, h, w], &[co, wci, kh, kw]) = (input, weight) else {
        return Err(mismatch());
    };
    if ci != wci || bias != [co] {
        return Err(mismatch());
    }
    let oh = conv_output_extent(h, kh, stride, padding).ok_or_else(mismatch)?;
    let ow = conv_output_extent(w, kw, stride, padding).ok_or_else(mismatch)?;
    Ok(Geometry {
        ci,
        h,
        w,
        co,
        kh,
        kw,
        oh,
        ow,
    })
}

pub(crate) fn conv2d_forward_raw(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = geometry(input.shape(), weight.shape(), bias.shape(), stride, padding)?;
    let (x, wt) = (input.data(), weight.data());
    let mut out = vec![0.0; g.co * g.oh * g.ow];
    for o in 0..g.co {
        let plane = &mut out[o * g.oh * g.ow..(o + 1) * g.oh * g.ow];
        plane.iter_mut().for_each(|v| *v = bias.data()[o]);
        for i in 0..g.ci {
            let src = &x[i * g.h * g.w..(i + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (y0, y1) = valid_range(g.h, g.oh, ky, stride, padding);
                for kx in 0..g.kw {
                    let wv = wt[((o * g.ci + i) * g.kh + ky) * g.kw + kx];
                    let (x0, x1) = valid_range(g.w, g.ow, kx, stride, padding);
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in y0..y1 {
                        let iy = oy * stride + ky - padding;
                        let dst = &mut plane[oy * g.ow + x0..oy * g.ow + x1];
                        let ix0 = x0 * stride + kx - padding;
                        let row = &src[iy * g.w..(iy + 1) * g.w];
                        if stride == 1 {
                            for (d, s) in dst.iter_mut().zip(&row[ix0..ix0 + (x1 - x0)]) {
                                *d += wv * s;
                            }
                        } else {
                            for (j, d) in dst.iter_mut().enumerate() {
                                *d += wv * row[ix0 + j * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.co, g.oh, g.ow], out)
}

/// Gradients with respect to (input, weight, bias).
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    out_shape: &[usize],
    gout: &[f64],
    stride: usize,
    padding: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let g = geometry(input.shape(), weight.shape(), &[out_shape[0]], stride, padding)
        .expect("shapes validated in forward");
    let (x, wt) = (input.data(), weight.data());
    let mut gi = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; g.co];
    for o in 0..g.co {
        let gplane = &gout[o * g.oh * g.ow..(o + 1) * g.oh * g.ow];
        gb[o] = gplane.iter().sum();
        for i in 0..g.ci {
            let src = &x[i * g.h * g.w..(i + 1) * g.h * g.w];
            let gsrc = &mut gi[i * g.h * g.w..(i + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (y0, y1) = valid_range(g.h, g.oh, ky, stride, padding);
                for kx in 0..g.kw {
                    let widx = ((o * g.ci + i) * g.kh + ky) * g.kw + kx;
                    let wv = wt[widx];
                    let (x0, x1) = valid_range(g.w, g.ow, kx, stride, padding);
                    if x0 >= x1 {
                        continue;
                    }
                    let mut dw = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * stride + ky - padding;
                        let grow = &gplane[oy * g.ow + x0..oy * g.ow + x1];
                        let ix0 = x0 * stride + kx - padding;
                        if stride == 1 {
                            let n = x1 - x0;
                            let row = &src[iy * g.w + ix0..iy * g.w + ix0 + n];
                            dw += grow.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                            let grow_in = &mut gsrc[iy * g.w + ix0..iy * g.w + ix0 + n];
                            for (d, gv) in grow_in.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        } else {
                            for (j, gv) in grow.iter().enumerate() {
                                let ix = iy * g.w + ix0 + j * stride;
                                dw += gv * src[ix];
                                gsrc[ix] += wv * gv;
                            }
                        }
                    }
                    gw[widx] += dw;
                }
            }
        }
    }
    (gi, gw, gb)
}

/// A 2-D convolution layer: O×C×kH×kW weights, O biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

/// A [`ConvLayer`] whose parameters are recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundConv {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    pub fn zeros(out_ch: usize, in_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding,
        }
    }

    /// He-style fan-in uniform weights in `±sqrt(6 / fan_in)`, zero bias.
    pub fn fan_in_uniform<R: Rng>(
        out_ch: usize,
        in_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(out_ch, in_ch, kernel, stride, padding);
        let bound = (6.0 / (in_ch * kernel * kernel) as f64).sqrt();
        for w in layer.weight.data_mut() {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    /// Spatial output size for an `h`×`w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel();
        Some((
            conv_output_extent(h, kh, self.stride, self.padding)?,
            conv_output_extent(w, kw, self.stride, self.padding)?,
        ))
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundConv {
        BoundConv {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
            stride: self.stride,
            padding: self.padding,
        }
    }

    /// Binds the parameters and applies the layer.
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        self.bind(tape).forward(tape, input)
    }
}

impl BoundConv {
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        tape.conv2d(input, self.weight, self.bias, self.stride, self.padding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Six-nested-loop correlation with explicit zero padding.
    fn reference_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (ci, h, wd) = x.dims3().unwrap();
        let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[co, oh, ow]);
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b.data()[o];
                    for i in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += w.data()[((o * ci + i) * kh + ky) * kw + kx]
                                        * x.at(i, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.set(o, oy, ox, s);
                }
            }
        }
        out
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn all_ones_kernel_sums_window() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::full(&[1, 3, 3], 1.0));
        let layer = ConvLayer {
            weight: Tensor::full(&[1, 1, 3, 3], 1.0),
            bias: Tensor::zeros(&[1]),
            stride: 1,
            padding: 0,
        };
        let y = layer.forward(&mut t, x).unwrap();
        assert_eq!(t.shape(y), &[1, 1, 1]);
        assert_eq!(t.value(y).item(), 9.0);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random(&[1, 5, 4], &mut rng);
        let mut t = Tape::new();
        let x = t.leaf(input.clone());
        let layer = ConvLayer {
            weight: Tensor::full(&[1, 1, 1, 1], 1.0),
            bias: Tensor::zeros(&[1]),
            stride: 1,
            padding: 0,
        };
        let y = layer.forward(&mut t, x).unwrap();
        assert_eq!(t.value(y).data(), input.data());
    }

    #[test]
    fn padded_conv_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[2, 4, 4], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let got = conv2d_forward_raw(&x, &w, &b, 1, 1).unwrap();
        let want = reference_conv(&x, &w, &b, 1, 1);
        assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d_forward_raw(&x, &w, &Tensor::zeros(&[1]), 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn too_small_input_is_rejected() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(conv2d_forward_raw(&x, &w, &Tensor::zeros(&[1]), 1, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn conv_matches_six_loop_reference(
            ci in 1usize..4, co in 1usize..4, h in 1usize..9, w in 1usize..9,
            k in 1usize..4, stride in 1usize..3, pad in 0usize..3, seed in any::<u64>(),
        ) {
            prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[ci, h, w], &mut rng);
            let wt = random(&[co, ci, k, k], &mut rng);
            let b = random(&[co], &mut rng);
            let got = conv2d_forward_raw(&x, &wt, &b, stride, pad).unwrap();
            let want = reference_conv(&x, &wt, &b, stride, pad);
            prop_assert_eq!(got.shape(), want.shape());
            let layer = ConvLayer { weight: wt, bias: b, stride, padding: pad };
            prop_assert_eq!(layer.output_size(h, w), Some((want.shape()[1], want.shape()[2])));
            for (a, b) in got.data().iter().zip(want.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
