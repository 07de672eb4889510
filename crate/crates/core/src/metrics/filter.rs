use ndarray::{s, Array2};

/// Normalised 1-D Gaussian of odd length `n`; its outer product with itself is
/// MATLAB's `fspecial('gaussian', n, sigma)`.
pub fn gaussian_1d(n: usize, sigma: f64) -> Vec<f64> {
    let half = (n as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 - half;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Correlation with a separable kernel, keeping only fully overlapped positions.
pub fn filter_valid(img: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let n = kernel.len();
    let (h, w) = img.dim();
    if h < n || w < n {
        return Array2::zeros((0, 0));
    }
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = Array2::<f64>::zeros((oh, w));
    for (k, &kv) in kernel.iter().enumerate() {
        rows.scaled_add(kv, &img.slice(s![k..k + oh, ..]));
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for (k, &kv) in kernel.iter().enumerate() {
        out.scaled_add(kv, &rows.slice(s![.., k..k + ow]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_sums_to_one_and_is_symmetric() {
        let g = gaussian_1d(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert!((g[i] - g[10 - i]).abs() < 1e-18);
        }
    }

    #[test]
    fn valid_filter_matches_direct_2d_sum() {
        let img = Array2::from_shape_fn((7, 9), |(y, x)| ((y * 31 + x * 7) % 11) as f64);
        let k = gaussian_1d(3, 0.8);
        let out = filter_valid(&img, &k);
        assert_eq!(out.dim(), (5, 7));
        for y in 0..5 {
            for x in 0..7 {
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        acc += k[i] * k[j] * img[[y + i, x + j]];
                    }
                }
                assert!((out[[y, x]] - acc).abs() < 1e-12);
            }
        }
    }
}
