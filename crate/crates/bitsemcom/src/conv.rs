//! Direct 2-D convolution kernels on flat row-major buffers.
//!
//! Layouts: activations are [N, C, H, W]; conv weights are [Co, Ci, K, K];
//! transposed-conv weights are [Ci, Co, K, K]. All loops are plain nested
//! iteration with the valid output range hoisted out of the inner loop;
//! feature maps at desk scale are small enough that this is fast in an
//! optimized build.
#![allow(clippy::needless_range_loop)] // strided dual-index inner loops

/// Geometry of one conv application.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDims {
    /// Output height/width of the forward (downsampling) direction.
    pub fn out_hw(&self) -> (usize, usize) {
        let oh = (self.h + 2 * self.pad - self.k) / self.stride + 1;
        let ow = (self.w + 2 * self.pad - self.k) / self.stride + 1;
        (oh, ow)
    }

    /// Output height/width of the transposed (upsampling) direction.
    pub fn transposed_out_hw(&self) -> (usize, usize) {
        let oh = (self.h - 1) * self.stride + self.k - 2 * self.pad;
        let ow = (self.w - 1) * self.stride + self.k - 2 * self.pad;
        (oh, ow)
    }
}

/// Range `lo..hi` of source indices s such that 0 <= s*stride + k_off - pad < limit.
#[inline]
fn valid_range(k_off: usize, pad: usize, stride: usize, limit: usize, n_src: usize) -> (usize, usize) {
    let lo = if pad > k_off {
        (pad - k_off).div_ceil(stride)
    } else {
        0
    };
    let hi = if limit + pad > k_off {
        (((limit - 1 + pad - k_off) / stride) + 1).min(n_src)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// out[n,co,oy,ox] = bias[co] + sum_{ci,ky,kx} in[n,ci,oy*s+ky-p, ox*s+kx-p] * w[co,ci,ky,kx]
pub(crate) fn conv2d_forward(input: &[f64], weight: &[f64], bias: &[f64], d: &ConvDims) -> Vec<f64> {
    let (oh, ow) = d.out_hw();
    let mut out = vec![0.0; d.n * d.c_out * oh * ow];
    for n in 0..d.n {
        for co in 0..d.c_out {
            out[(n * d.c_out + co) * oh * ow..][..oh * ow].fill(bias[co]);
        }
    }
    for n in 0..d.n {
        for ci in 0..d.c_in {
            let in_plane = &input[(n * d.c_in + ci) * d.h * d.w..][..d.h * d.w];
            for co in 0..d.c_out {
                let w_base = (co * d.c_in + ci) * d.k * d.k;
                let out_base = (n * d.c_out + co) * oh * ow;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = weight[w_base + ky * d.k + kx];
                        let (ox_lo, ox_hi) = valid_range(kx, d.pad, d.stride, d.w, ow);
                        for oy in 0..oh {
                            let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let in_row = &in_plane[iy as usize * d.w..][..d.w];
                            let out_row = &mut out[out_base + oy * ow..][..ow];
                            let mut ix = ox_lo * d.stride + kx - d.pad;
                            for ox in ox_lo..ox_hi {
                                out_row[ox] += wv * in_row[ix];
                                ix += d.stride;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of `conv2d_forward` w.r.t. input, weight, and bias.
pub(crate) fn conv2d_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    d: &ConvDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = d.out_hw();
    let mut d_in = vec![0.0; input.len()];
    let mut d_w = vec![0.0; weight.len()];
    let mut d_b = vec![0.0; d.c_out];

    for n in 0..d.n {
        for co in 0..d.c_out {
            let g_plane = &grad_out[(n * d.c_out + co) * oh * ow..][..oh * ow];
            d_b[co] += g_plane.iter().sum::<f64>();
        }
    }

    for n in 0..d.n {
        for ci in 0..d.c_in {
            let in_plane = &input[(n * d.c_in + ci) * d.h * d.w..][..d.h * d.w];
            let din_base = (n * d.c_in + ci) * d.h * d.w;
            for co in 0..d.c_out {
                let w_base = (co * d.c_in + ci) * d.k * d.k;
                let g_base = (n * d.c_out + co) * oh * ow;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = weight[w_base + ky * d.k + kx];
                        let mut wsum = 0.0;
                        let (ox_lo, ox_hi) = valid_range(kx, d.pad, d.stride, d.w, ow);
                        for oy in 0..oh {
                            let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let in_row = &in_plane[iy as usize * d.w..][..d.w];
                            let g_row = &grad_out[g_base + oy * ow..][..ow];
                            let din_row = &mut d_in[din_base + iy as usize * d.w..][..d.w];
                            let mut ix = ox_lo * d.stride + kx - d.pad;
                            for ox in ox_lo..ox_hi {
                                let g = g_row[ox];
                                wsum += g * in_row[ix];
                                din_row[ix] += g * wv;
                                ix += d.stride;
                            }
                        }
                        d_w[w_base + ky * d.k + kx] += wsum;
                    }
                }
            }
        }
    }
    (d_in, d_w, d_b)
}

/// out[n,co,iy*s+ky-p, ix*s+kx-p] += in[n,ci,iy,ix] * w[ci,co,ky,kx], plus bias.
pub(crate) fn conv2d_transposed_forward(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    d: &ConvDims,
) -> Vec<f64> {
    let (oh, ow) = d.transposed_out_hw();
    let mut out = vec![0.0; d.n * d.c_out * oh * ow];
    for n in 0..d.n {
        for co in 0..d.c_out {
            out[(n * d.c_out + co) * oh * ow..][..oh * ow].fill(bias[co]);
        }
    }
    for n in 0..d.n {
        for ci in 0..d.c_in {
            let in_plane = &input[(n * d.c_in + ci) * d.h * d.w..][..d.h * d.w];
            for co in 0..d.c_out {
                let w_base = (ci * d.c_out + co) * d.k * d.k;
                let out_base = (n * d.c_out + co) * oh * ow;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = weight[w_base + ky * d.k + kx];
                        let (ix_lo, ix_hi) = valid_range(kx, d.pad, d.stride, ow, d.w);
                        for iy in 0..d.h {
                            let oy = (iy * d.stride + ky) as isize - d.pad as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            let in_row = &in_plane[iy * d.w..][..d.w];
                            let out_row = &mut out[out_base + oy as usize * ow..][..ow];
                            let mut ox = ix_lo * d.stride + kx - d.pad;
                            for ix in ix_lo..ix_hi {
                                out_row[ox] += wv * in_row[ix];
                                ox += d.stride;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of `conv2d_transposed_forward` w.r.t. input, weight, and bias.
pub(crate) fn conv2d_transposed_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    d: &ConvDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = d.transposed_out_hw();
    let mut d_in = vec![0.0; input.len()];
    let mut d_w = vec![0.0; weight.len()];
    let mut d_b = vec![0.0; d.c_out];

    for n in 0..d.n {
        for co in 0..d.c_out {
            let g_plane = &grad_out[(n * d.c_out + co) * oh * ow..][..oh * ow];
            d_b[co] += g_plane.iter().sum::<f64>();
        }
    }

    for n in 0..d.n {
        for ci in 0..d.c_in {
            let in_plane = &input[(n * d.c_in + ci) * d.h * d.w..][..d.h * d.w];
            let din_base = (n * d.c_in + ci) * d.h * d.w;
            for co in 0..d.c_out {
                let w_base = (ci * d.c_out + co) * d.k * d.k;
                let g_base = (n * d.c_out + co) * oh * ow;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = weight[w_base + ky * d.k + kx];
                        let mut wsum = 0.0;
                        let (ix_lo, ix_hi) = valid_range(kx, d.pad, d.stride, ow, d.w);
                        for iy in 0..d.h {
                            let oy = (iy * d.stride + ky) as isize - d.pad as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            let in_row = &in_plane[iy * d.w..][..d.w];
                            let g_row = &grad_out[g_base + oy as usize * ow..][..ow];
                            let din_row = &mut d_in[din_base + iy * d.w..][..d.w];
                            let mut ox = ix_lo * d.stride + kx - d.pad;
                            for ix in ix_lo..ix_hi {
                                let g = g_row[ox];
                                wsum += g * in_row[ix];
                                din_row[ix] += g * wv;
                                ox += d.stride;
                            }
                        }
                        d_w[w_base + ky * d.k + kx] += wsum;
                    }
                }
            }
        }
    }
    (d_in, d_w, d_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passes_through() {
        // 1x1 kernel with weight 1 and zero bias is the identity map.
        let d = ConvDims {
            n: 1,
            c_in: 1,
            h: 3,
            w: 3,
            c_out: 1,
            k: 1,
            stride: 1,
            pad: 0,
        };
        let input: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let out = conv2d_forward(&input, &[1.0], &[0.0], &d);
        assert_eq!(out, input);
    }

    #[test]
    fn stride_two_halves_geometry() {
        let d = ConvDims {
            n: 1,
            c_in: 1,
            h: 32,
            w: 32,
            c_out: 1,
            k: 3,
            stride: 2,
            pad: 1,
        };
        assert_eq!(d.out_hw(), (16, 16));
    }

    #[test]
    fn transposed_doubles_geometry() {
        let d = ConvDims {
            n: 1,
            c_in: 1,
            h: 8,
            w: 8,
            c_out: 1,
            k: 4,
            stride: 2,
            pad: 1,
        };
        assert_eq!(d.transposed_out_hw(), (16, 16));
    }

    #[test]
    fn hand_computed_3x3_same_conv() {
        // 3x3 input, 3x3 all-ones kernel, pad 1: center output is the full sum.
        let d = ConvDims {
            n: 1,
            c_in: 1,
            h: 3,
            w: 3,
            c_out: 1,
            k: 3,
            stride: 1,
            pad: 1,
        };
        let input = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let out = conv2d_forward(&input, &[1.0; 9], &[0.0], &d);
        assert_eq!(out[4], 45.0);
        assert_eq!(out[0], 1.0 + 2.0 + 4.0 + 5.0);
    }
}
