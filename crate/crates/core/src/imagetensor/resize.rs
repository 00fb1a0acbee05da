use super::{Image, Tensor};
use crate::error::{Error, Result};

/// Two-tap interpolation weights for one output coordinate.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    w_lo: f64,
    w_hi: f64,
}

/// Half-pixel-center mapping: `src = (dst + 0.5) * in/out - 0.5`, clamped to
/// `[0, in - 1]`.
fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    let max = (in_len - 1) as f64;
    (0..out_len)
        .map(|dst| {
            let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            let frac = src - lo as f64;
            Tap {
                lo,
                hi,
                w_lo: 1.0 - frac,
                w_hi: frac,
            }
        })
        .collect()
}

/// Bilinear resize of an arbitrary array. This is a linear map, so it is also
/// what gradients and perturbations go through.
pub fn resize_tensor(src: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "resize target must be non-empty, got {out_h}x{out_w}"
        )));
    }
    let (in_h, in_w, c) = src.shape();
    if in_h == 0 || in_w == 0 {
        return Err(Error::invalid("cannot resize an empty array"));
    }
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(src.clone());
    }
    let rows = taps(in_h, out_h);
    let cols = taps(in_w, out_w);
    let mut out = Tensor::zeros(out_h, out_w, c);
    let data = src.data();
    for (y, ry) in rows.iter().enumerate() {
        for (x, cx) in cols.iter().enumerate() {
            let o = out.index(y, x, 0);
            for ch in 0..c {
                let at = |r: usize, q: usize| data[(r * in_w + q) * c + ch];
                let top = cx.w_lo * at(ry.lo, cx.lo) + cx.w_hi * at(ry.lo, cx.hi);
                let bottom = cx.w_lo * at(ry.hi, cx.lo) + cx.w_hi * at(ry.hi, cx.hi);
                out.data_mut()[o + ch] = ry.w_lo * top + ry.w_hi * bottom;
            }
        }
    }
    Ok(out)
}

/// Resizes an image with bilinear interpolation (half-pixel centers).
///
/// Output intensities are convex combinations of inputs, so they stay in
/// `[0,1]`; the final clamp only absorbs rounding.
pub fn resize_bilinear(src: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    Ok(resize_tensor(src.as_tensor(), out_h, out_w)?.clamp_to_image())
}

/// Transpose of [`resize_tensor`]: maps a gradient at the resized resolution
/// back to a `src_h×src_w` gradient.
///
/// For all `a`, `b`: `⟨resize(a), b⟩ = ⟨a, resize_bilinear_adjoint(b)⟩`.
pub fn resize_bilinear_adjoint(grad_out: &Tensor, src_h: usize, src_w: usize) -> Result<Tensor> {
    if src_h == 0 || src_w == 0 {
        return Err(Error::invalid(format!(
            "adjoint source must be non-empty, got {src_h}x{src_w}"
        )));
    }
    let (out_h, out_w, c) = grad_out.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("adjoint of an empty gradient"));
    }
    if (src_h, src_w) == (out_h, out_w) {
        return Ok(grad_out.clone());
    }
    let rows = taps(src_h, out_h);
    let cols = taps(src_w, out_w);
    let mut out = Tensor::zeros(src_h, src_w, c);
    let g = grad_out.data();
    for (y, ry) in rows.iter().enumerate() {
        for (x, cx) in cols.iter().enumerate() {
            let o = (y * out_w + x) * c;
            for ch in 0..c {
                let v = g[o + ch];
                let acc = out.data_mut();
                acc[(ry.lo * src_w + cx.lo) * c + ch] += ry.w_lo * cx.w_lo * v;
                acc[(ry.lo * src_w + cx.hi) * c + ch] += ry.w_lo * cx.w_hi * v;
                acc[(ry.hi * src_w + cx.lo) * c + ch] += ry.w_hi * cx.w_lo * v;
                acc[(ry.hi * src_w + cx.hi) * c + ch] += ry.w_hi * cx.w_hi * v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor {
        let data = (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(h, w, c, data).unwrap()
    }

    #[test]
    fn same_size_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_tensor(&mut rng, 64, 64, 3).clamp_to_image();
        assert_eq!(resize_bilinear(&t, 64, 64).unwrap(), t);
        let g = random_tensor(&mut rng, 64, 64, 3);
        assert_eq!(resize_bilinear_adjoint(&g, 64, 64).unwrap(), g);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::filled(64, 64, 3, 0.5).unwrap();
        let up = resize_bilinear(&img, 128, 128).unwrap();
        assert!(up.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_target_is_rejected() {
        let img = Image::filled(4, 4, 1, 0.5).unwrap();
        assert!(matches!(
            resize_bilinear(&img, 0, 4),
            Err(Error::InvalidArgument(_))
        ));
        assert!(resize_bilinear_adjoint(img.as_tensor(), 4, 0).is_err());
    }

    #[test]
    fn two_by_two_to_four_by_four_matches_hand_formula() {
        let (a, b, c, d) = (0.1, 0.9, 0.4, 0.7);
        let img = Image::new(2, 2, 1, vec![a, b, c, d]).unwrap();
        let out = resize_bilinear(&img, 4, 4).unwrap();
        // (dst + 0.5) * 0.5 - 0.5 for dst = 0..4, clamped into [0, 1].
        let coords = [0.0, 0.25, 0.75, 1.0];
        for (i, &r) in coords.iter().enumerate() {
            for (j, &q) in coords.iter().enumerate() {
                let expect =
                    (1.0 - r) * (1.0 - q) * a + (1.0 - r) * q * b + r * (1.0 - q) * c + r * q * d;
                assert!((out.get(i, j, 0) - expect).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn adjoint_passes_dot_product_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_tensor(&mut rng, 5, 7, 3);
        let b = random_tensor(&mut rng, 11, 13, 3);
        let lhs = resize_tensor(&a, 11, 13).unwrap().dot(&b);
        let rhs = a.dot(&resize_bilinear_adjoint(&b, 5, 7).unwrap());
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn adjoint_of_ones_sums_interpolation_weights() {
        let (h, w) = (3, 4);
        let ones = Tensor::from_vec(2 * h, 2 * w, 1, vec![1.0; 4 * h * w]).unwrap();
        let adj = resize_bilinear_adjoint(&ones, h, w).unwrap();
        // Brute force: the weight of source pixel p in output q is the response
        // of the forward map to the unit impulse at p.
        for p in 0..h * w {
            let mut e = vec![0.0; h * w];
            e[p] = 1.0;
            let impulse = Tensor::from_vec(h, w, 1, e).unwrap();
            let total: f64 = resize_tensor(&impulse, 2 * h, 2 * w)
                .unwrap()
                .data()
                .iter()
                .sum();
            assert!((adj.data()[p] - total).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (h, w) = (rng.gen_range(1..9), rng.gen_range(1..9));
            let (oh, ow) = (rng.gen_range(1..15), rng.gen_range(1..15));
            let a = random_tensor(&mut rng, h, w, 3);
            let b = random_tensor(&mut rng, h, w, 3);
            let (alpha, beta) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let mix = Tensor::from_vec(
                h,
                w,
                3,
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| alpha * x + beta * y)
                    .collect(),
            )
            .unwrap();
            let lhs = resize_tensor(&mix, oh, ow).unwrap();
            let ra = resize_tensor(&a, oh, ow).unwrap();
            let rb = resize_tensor(&b, oh, ow).unwrap();
            for i in 0..lhs.data().len() {
                let rhs = alpha * ra.data()[i] + beta * rb.data()[i];
                assert!((lhs.data()[i] - rhs).abs() < 1e-12);
            }
        }
    }
}
