//! Channel-first (CHW) building blocks with hand-written backward passes.

/// A square convolution with zero padding `k / 2` and stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv {
    pub fn zeros(in_ch: usize, out_ch: usize, k: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            k,
            weight: vec![0.0; out_ch * in_ch * k * k],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.in_ch + i) * self.k + ky) * self.k + kx]
    }

    /// Output rows/cols `[lo, hi)` that read an in-bounds input at offset `d`.
    #[inline]
    fn valid(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).min(len as isize).max(0) as usize;
        (lo, hi.max(lo))
    }

    pub fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let plane = h * w;
        let pad = (self.k / 2) as isize;
        let mut out = vec![0.0; self.out_ch * plane];
        for o in 0..self.out_ch {
            let dst = &mut out[o * plane..(o + 1) * plane];
            dst.fill(self.bias[o]);
            for i in 0..self.in_ch {
                let src = &input[i * plane..(i + 1) * plane];
                for ky in 0..self.k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = Self::valid(h, dy);
                    for kx in 0..self.k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = Self::valid(w, dx);
                        let wt = self.w(o, i, ky, kx);
                        if wt == 0.0 {
                            continue;
                        }
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let d = &mut dst[y * w + x0..y * w + x1];
                            let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            for (a, b) in d.iter_mut().zip(s) {
                                *a += wt * b;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates the input gradient, and the parameter gradients when
    /// `grads` is given.
    pub fn backward(
        &self,
        input: &[f64],
        grad_out: &[f64],
        h: usize,
        w: usize,
        mut grads: Option<&mut Conv>,
    ) -> Vec<f64> {
        let plane = h * w;
        let pad = (self.k / 2) as isize;
        let mut grad_in = vec![0.0; self.in_ch * plane];
        for o in 0..self.out_ch {
            let go = &grad_out[o * plane..(o + 1) * plane];
            if let Some(g) = grads.as_deref_mut() {
                g.bias[o] += go.iter().sum::<f64>();
            }
            for i in 0..self.in_ch {
                let src = &input[i * plane..(i + 1) * plane];
                let gi = &mut grad_in[i * plane..(i + 1) * plane];
                for ky in 0..self.k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = Self::valid(h, dy);
                    for kx in 0..self.k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = Self::valid(w, dx);
                        let wt = self.w(o, i, ky, kx);
                        let mut wgrad = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let g = &go[y * w + x0..y * w + x1];
                            let range = sy * w + sx0..sy * w + sx0 + (x1 - x0);
                            for (a, b) in gi[range.clone()].iter_mut().zip(g) {
                                *a += wt * b;
                            }
                            if grads.is_some() {
                                wgrad += src[range].iter().zip(g).map(|(s, g)| s * g).sum::<f64>();
                            }
                        }
                        if let Some(gr) = grads.as_deref_mut() {
                            gr.weight[((o * self.in_ch + i) * self.k + ky) * self.k + kx] += wgrad;
                        }
                    }
                }
            }
        }
        grad_in
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through ReLU, given the pre-activation.
pub fn relu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 average pooling with stride 2 over `ch` planes of `h×w`.
pub fn avg_pool2(x: &[f64], ch: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; ch * oh * ow];
    for c in 0..ch {
        let src = &x[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                let a = src[2 * y * w + 2 * xx];
                let b = src[2 * y * w + 2 * xx + 1];
                let c2 = src[(2 * y + 1) * w + 2 * xx];
                let d = src[(2 * y + 1) * w + 2 * xx + 1];
                dst[y * ow + xx] = 0.25 * (a + b + c2 + d);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad: &[f64], ch: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; ch * h * w];
    for c in 0..ch {
        let g = &grad[c * oh * ow..(c + 1) * oh * ow];
        let dst = &mut out[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = 0.25 * g[(y / 2) * ow + x / 2];
            }
        }
    }
    out
}
