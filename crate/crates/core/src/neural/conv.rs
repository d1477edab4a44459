//! Zero-padded "same" 2-D convolution over channel-major feature maps.
//!
//! A feature map with `c` channels of `h×w` pixels is one `Vec<f64>` of
//! length `c·h·w`, channel after channel. Kernels are stored as
//! `[out][in][ky][kx]`.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Output range `lo..hi` along an axis of length `len` that kernel offset
    /// `d` can reach, and the input index read at `lo`.
    fn span(&self, d: usize, len: usize) -> (usize, usize, usize) {
        let pad = self.kernel / 2;
        // Output index o reads input o + d - pad; keep both inside [0, len).
        let lo = pad.saturating_sub(d);
        let hi = (len + pad).saturating_sub(d).min(len).max(lo);
        (lo, hi, lo + d - pad)
    }
}

pub fn forward(s: &ConvShape, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (h, w, k, plane) = (s.height, s.width, s.kernel, s.plane());
    debug_assert_eq!(input.len(), s.in_ch * plane);
    debug_assert_eq!(weight.len(), s.weight_len());
    let mut out = vec![0.0; s.out_ch * plane];
    for o in 0..s.out_ch {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(bias[o]);
        for i in 0..s.in_ch {
            let src = &input[i * plane..(i + 1) * plane];
            for dy in 0..k {
                let (r0, r1, sr0) = s.span(dy, h);
                for dx in 0..k {
                    let wv = weight[((o * s.in_ch + i) * k + dy) * k + dx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (c0, c1, sc0) = s.span(dx, w);
                    for (r, sr) in (r0..r1).zip(sr0..) {
                        let d = &mut dst[r * w + c0..r * w + c1];
                        let x = &src[sr * w + sc0..sr * w + sc0 + (c1 - c0)];
                        for (a, b) in d.iter_mut().zip(x) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub fn backward(
    s: &ConvShape,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let (h, w, k, plane) = (s.height, s.width, s.kernel, s.plane());
    let mut grad_in = vec![0.0; s.in_ch * plane];
    for o in 0..s.out_ch {
        let g = &grad_out[o * plane..(o + 1) * plane];
        grad_bias[o] += g.iter().sum::<f64>();
        for i in 0..s.in_ch {
            let src = &input[i * plane..(i + 1) * plane];
            let gi = &mut grad_in[i * plane..(i + 1) * plane];
            for dy in 0..k {
                let (r0, r1, sr0) = s.span(dy, h);
                for dx in 0..k {
                    let widx = ((o * s.in_ch + i) * k + dy) * k + dx;
                    let wv = weight[widx];
                    let (c0, c1, sc0) = s.span(dx, w);
                    let n = c1 - c0;
                    let mut gw = 0.0;
                    for (r, sr) in (r0..r1).zip(sr0..) {
                        let go = &g[r * w + c0..r * w + c1];
                        let x = &src[sr * w + sc0..sr * w + sc0 + n];
                        gw += crate::linalg::dot(go, x);
                        let gx = &mut gi[sr * w + sc0..sr * w + sc0 + n];
                        for (a, b) in gx.iter_mut().zip(go) {
                            *a += wv * b;
                        }
                    }
                    grad_weight[widx] += gw;
                }
            }
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive(s: &ConvShape, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let (h, w, k) = (s.height as isize, s.width as isize, s.kernel);
        let pad = (k / 2) as isize;
        let mut out = vec![0.0; s.out_ch * s.plane()];
        for o in 0..s.out_ch {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o];
                    for i in 0..s.in_ch {
                        for dy in 0..k {
                            for dx in 0..k {
                                let (sy, sx) = (y + dy as isize - pad, x + dx as isize - pad);
                                if sy < 0 || sx < 0 || sy >= h || sx >= w {
                                    continue;
                                }
                                acc += weight[((o * s.in_ch + i) * k + dy) * k + dx]
                                    * input[i * s.plane() + (sy * w + sx) as usize];
                            }
                        }
                    }
                    out[o * s.plane() + (y * w + x) as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_sum() {
        let mut rng = Rng::new(1);
        for (k, h, w) in [(3, 5, 7), (5, 4, 4), (1, 3, 2), (3, 1, 6)] {
            let s = ConvShape { in_ch: 2, out_ch: 3, kernel: k, height: h, width: w };
            let x = rng.normals(2 * h * w);
            let wt = rng.normals(s.weight_len());
            let b = rng.normals(3);
            let fast = forward(&s, &x, &wt, &b);
            let slow = naive(&s, &x, &wt, &b);
            for (a, c) in fast.iter().zip(&slow) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_is_adjoint() {
        // <g, conv(x)> is bilinear in (w, x); its gradients are the adjoints.
        let mut rng = Rng::new(2);
        let s = ConvShape { in_ch: 3, out_ch: 2, kernel: 3, height: 6, width: 5 };
        let x = rng.normals(3 * 30);
        let wt = rng.normals(s.weight_len());
        let b = vec![0.0; 2];
        let g = rng.normals(2 * 30);
        let mut gw = vec![0.0; s.weight_len()];
        let mut gb = vec![0.0; 2];
        let gx = backward(&s, &x, &wt, &g, &mut gw, &mut gb);
        let y = forward(&s, &x, &wt, &b);
        let lhs = crate::linalg::dot(&g, &y);
        assert!((crate::linalg::dot(&gx, &x) - lhs).abs() < 1e-9);
        assert!((crate::linalg::dot(&gw, &wt) - lhs).abs() < 1e-9);
        assert!((gb[0] - g[..30].iter().sum::<f64>()).abs() < 1e-12);
    }
}
