//! Structure criterion: mean SSIM over grayscale images resized to 256x256.

use image::RgbImage;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 255.0;
pub const RESIZE_TO: usize = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SsimError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("images must be at least {WINDOW}x{WINDOW}, got {0}x{1}")]
    TooSmall(usize, usize),
}

/// Row-major grayscale samples in [0, 255].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMatrix {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayMatrix {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "data length must be width * height");
        GrayMatrix { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        GrayMatrix { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// BT.601 luma.
pub fn luma(img: &RgbImage) -> GrayMatrix {
    let data = img
        .pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    GrayMatrix::new(img.width() as usize, img.height() as usize, data)
}

/// Bilinear interpolation with pixel-center alignment and edge clamping.
pub fn resize_bilinear(src: &GrayMatrix, width: usize, height: usize) -> GrayMatrix {
    let sx = src.width as f64 / width as f64;
    let sy = src.height as f64 / height as f64;
    let coord = |dst: usize, scale: f64, len: usize| {
        let c = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, c - i0 as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| coord(x, sx, src.width)).collect();
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, sy, src.height);
        for &(x0, x1, fx) in &cols {
            let top = src.at(x0, y0) * (1.0 - fx) + src.at(x1, y0) * fx;
            let bottom = src.at(x0, y1) * (1.0 - fx) + src.at(x1, y1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    GrayMatrix::new(width, height, data)
}

pub fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let center = (WINDOW / 2) as f64;
    for (i, w) in k.iter_mut().enumerate() {
        let d = i as f64 - center;
        *w = (-(d * d) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

/// Separable "valid" filtering: output is (w - 10) x (h - 10).
fn filter_valid(src: &[f64], width: usize, height: usize, kernel: &[f64; WINDOW]) -> Vec<f64> {
    let ow = width - WINDOW + 1;
    let oh = height - WINDOW + 1;
    let mut horiz = vec![0.0; ow * height];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..ow {
            horiz[y * ow + x] = kernel.iter().zip(&row[x..x + WINDOW]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * horiz[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Unclamped mean SSIM in [-1, 1].
pub fn raw_ssim(a: &GrayMatrix, b: &GrayMatrix) -> Result<f64, SsimError> {
    if a.width != b.width || a.height != b.height {
        return Err(SsimError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    if a.width < WINDOW || a.height < WINDOW {
        return Err(SsimError::TooSmall(a.width, a.height));
    }
    let (w, h) = (a.width, a.height);
    let kernel = gaussian_kernel();
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);

    let aa: Vec<f64> = a.data.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.data.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(&a.data, w, h, &kernel);
    let mu_b = filter_valid(&b.data, w, h, &kernel);
    let e_aa = filter_valid(&aa, w, h, &kernel);
    let e_bb = filter_valid(&bb, w, h, &kernel);
    let e_ab = filter_valid(&ab, w, h, &kernel);

    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// m3 in [0, 1].
pub fn structure_score(generated: &RgbImage, reference: &RgbImage) -> f64 {
    let a = resize_bilinear(&luma(generated), RESIZE_TO, RESIZE_TO);
    let b = resize_bilinear(&luma(reference), RESIZE_TO, RESIZE_TO);
    raw_ssim(&a, &b)
        .expect("both operands are resized to the same size")
        .clamp(0.0, 1.0)
}
