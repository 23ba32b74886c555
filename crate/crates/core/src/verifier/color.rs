//! Color criterion: 11-bin HSV pixel histograms compared by cosine similarity.

use image::RgbImage;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorBin {
    Red,
    Orange,
    Yellow,
    Green,
    Cyan,
    Blue,
    Purple,
    Magenta,
    White,
    Gray,
    Black,
}

impl ColorBin {
    pub const ALL: [ColorBin; 11] = [
        ColorBin::Red,
        ColorBin::Orange,
        ColorBin::Yellow,
        ColorBin::Green,
        ColorBin::Cyan,
        ColorBin::Blue,
        ColorBin::Purple,
        ColorBin::Magenta,
        ColorBin::White,
        ColorBin::Gray,
        ColorBin::Black,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Achromatic cut-offs on saturation and value.
const BLACK_MAX_V: f64 = 0.15;
const ACHROMATIC_MAX_S: f64 = 0.15;
const WHITE_MIN_V: f64 = 0.85;

/// Hue band upper bounds in degrees, walking up from 15°; red wraps around 0°.
const HUE_BANDS: [(f64, ColorBin); 7] = [
    (45.0, ColorBin::Orange),
    (70.0, ColorBin::Yellow),
    (170.0, ColorBin::Green),
    (200.0, ColorBin::Cyan),
    (260.0, ColorBin::Blue),
    (300.0, ColorBin::Purple),
    (345.0, ColorBin::Magenta),
];

/// RGB to (hue in degrees [0, 360), saturation [0, 1], value [0, 1]).
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h.rem_euclid(360.0), s, v)
}

pub fn classify(h: f64, s: f64, v: f64) -> ColorBin {
    if v < BLACK_MAX_V {
        return ColorBin::Black;
    }
    if s < ACHROMATIC_MAX_S {
        return if v >= WHITE_MIN_V {
            ColorBin::White
        } else {
            ColorBin::Gray
        };
    }
    if !(15.0..345.0).contains(&h) {
        return ColorBin::Red;
    }
    HUE_BANDS
        .iter()
        .find(|(upper, _)| h < *upper)
        .map_or(ColorBin::Red, |(_, bin)| *bin)
}

pub fn classify_rgb(r: u8, g: u8, b: u8) -> ColorBin {
    let (h, s, v) = rgb_to_hsv(r, g, b);
    classify(h, s, v)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorHistogram {
    pub counts: [u64; 11],
}

impl ColorHistogram {
    pub fn get(&self, bin: ColorBin) -> u64 {
        self.counts[bin.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Every pixel lands in exactly one bin.
pub fn hsv_histogram(img: &RgbImage) -> ColorHistogram {
    // Bin lookups are cached per distinct color; charts use few colors.
    let mut cache: std::collections::HashMap<[u8; 3], ColorBin> = std::collections::HashMap::new();
    let mut hist = ColorHistogram::default();
    for p in img.pixels() {
        let bin = *cache.entry(p.0).or_insert_with(|| classify_rgb(p[0], p[1], p[2]));
        hist.counts[bin.index()] += 1;
    }
    hist
}

/// Cosine similarity of two count vectors. Two zero vectors count as identical.
pub fn cosine_similarity(a: &[u64], b: &[u64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        // sqrt of the product keeps identical histograms at exactly 1.
        _ => dot / (na * nb).sqrt(),
    }
}

/// m1 in [0, 1].
pub fn color_score(generated: &RgbImage, reference: &RgbImage) -> f64 {
    let a = hsv_histogram(generated);
    let b = hsv_histogram(reference);
    cosine_similarity(&a.counts, &b.counts).clamp(0.0, 1.0)
}
