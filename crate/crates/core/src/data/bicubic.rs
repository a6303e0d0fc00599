//! Separable bicubic resampling.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Keys cubic with `a = -0.5` (Catmull-Rom).
pub fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps and normalized weights for every output sample along one axis.
///
/// Pixel centres are aligned (`src = (dst + 0.5) * in / out - 0.5`). When
/// shrinking, the kernel is stretched by the scale factor to low-pass the
/// input. Out-of-range taps are clamped to the border.
pub fn resample_taps(input: usize, output: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = input as f64 / output as f64;
    let stretch = ratio.max(1.0);
    let radius = 2.0 * stretch;
    (0..output)
        .map(|o| {
            let center = (o as f64 + 0.5) * ratio - 0.5;
            let lo = (center - radius).floor() as isize;
            let hi = (center + radius).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for i in lo..=hi {
                let w = cubic((i as f64 - center) / stretch);
                if w == 0.0 {
                    continue;
                }
                let src = i.clamp(0, input as isize - 1) as usize;
                match taps.iter_mut().find(|(s, _)| *s == src) {
                    Some(t) => t.1 += w,
                    None => taps.push((src, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Resizes a `C x H x W` image to `C x out_h x out_w`.
pub fn bicubic_resize<T: Element>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [c, h, w] = match *img.shape() {
        [c, h, w] => [c, h, w],
        _ => return Err(Error::invalid("bicubic_resize", format!("expected C x H x W, got {:?}", img.shape()))),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bicubic_resize", "output extents must be positive"));
    }
    let (rows, cols) = (resample_taps(h, out_h), resample_taps(w, out_w));
    let src = img.data();
    let mut tmp = vec![0.0f64; c * h * out_w];
    for ch in 0..c {
        for y in 0..h {
            let line = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (x, taps) in cols.iter().enumerate() {
                tmp[(ch * h + y) * out_w + x] = taps.iter().map(|&(s, wt)| line[s].to_f64() * wt).sum();
            }
        }
    }
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for taps in &rows {
            for x in 0..out_w {
                let v: f64 = taps.iter().map(|&(s, wt)| tmp[(ch * h + s) * out_w + x] * wt).sum();
                out.push(T::from_f64(v));
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_interpolates_at_integers() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn taps_sum_to_one() {
        for (i, o) in [(256, 64), (64, 256), (7, 5), (1, 4), (5, 1)] {
            for taps in resample_taps(i, o) {
                let s: f64 = taps.iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_size_is_identity() {
        let img = Tensor::<f64>::from_fn(&[2, 5, 7], |i| (i as f64 * 0.3).sin());
        let out = bicubic_resize(&img, 5, 7).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Tensor::<f32>::full(&[3, 256, 256], 0.37);
        let out = bicubic_resize(&img, 64, 64).unwrap();
        assert_eq!(out.shape(), &[3, 64, 64]);
        assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn rejects_bad_rank_and_empty_output() {
        assert!(bicubic_resize(&Tensor::<f32>::zeros(&[4, 4]), 2, 2).is_err());
        assert!(bicubic_resize(&Tensor::<f32>::zeros(&[1, 4, 4]), 0, 2).is_err());
    }
}
