//! Static PNG output: matrix heatmaps and categorical grid maps.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

/// Five-stop approximation of the viridis colour map, `v` in `[0, 1]`.
pub fn viridis(v: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let x = v * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Heatmap of `m` scaled to its own min/max, `cell` pixels per entry.
pub fn heatmap(m: &Array2<f64>, cell: u32) -> RgbImage {
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cell = cell.max(1);
    let (rows, cols) = m.dim();
    RgbImage::from_fn(cols as u32 * cell, rows as u32 * cell, |x, y| {
        viridis((m[[(y / cell) as usize, (x / cell) as usize]] - lo) / span)
    })
}

/// Pixels per entry so a side of `n` entries spans roughly 256 pixels.
pub fn cell_size(n: usize) -> u32 {
    (256 / n.max(1)).clamp(1, 32) as u32
}

/// One pixel per cell of an `rows x cols` grid, coloured by category index.
pub fn category_grid(rows: usize, cols: usize, category: &[usize], palette: &[Rgb<u8>]) -> RgbImage {
    assert_eq!(category.len(), rows * cols, "one category per grid cell");
    RgbImage::from_fn(cols as u32, rows as u32, |x, y| palette[category[y as usize * cols + x as usize]])
}

pub fn save(img: &RgbImage, path: &Path) -> anyhow::Result<()> {
    img.save(path)
        .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))
}
