//! Minimal PNG rendering for report figures: CDF line plots and
//! spectrogram heat maps. Deliberately dependency-light; no text labels,
//! just axes, grid, and data.

use super::Spectrogram;
use crate::{Error, Result};
use image::{Rgb, RgbImage};
use std::path::Path;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

/// Fixed palette for CDF series.
pub const PALETTE: [Rgb<u8>; 5] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
];

fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = x0 + (x1 - x0) * t;
        let y = y0 + (y1 - y0) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// One named CDF curve.
pub struct CdfSeries<'a> {
    pub label: &'a str,
    pub grid: &'a [f64],
    pub cdf: &'a [f64],
}

/// Renders cumulative-distribution curves over a shared score axis.
/// Series are drawn in palette order; a legend strip of colored squares is
/// drawn top-left in the same order as `series`.
pub fn save_cdf_png(path: impl AsRef<Path>, series: &[CdfSeries<'_>]) -> Result<()> {
    let (w, h) = (640u32, 480u32);
    let margin = 40.0;
    let mut img = RgbImage::from_pixel(w, h, BG);

    let lo = series
        .iter()
        .flat_map(|s| s.grid.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let hi = series
        .iter()
        .flat_map(|s| s.grid.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput("no data to plot".into()));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };

    let px = |score: f64| margin + (score - lo) / span * (w as f64 - 2.0 * margin);
    let py = |frac: f64| (h as f64 - margin) - frac * (h as f64 - 2.0 * margin);

    for i in 0..=10 {
        let y = py(i as f64 / 10.0);
        draw_line(&mut img, margin, y, w as f64 - margin, y, GRID);
    }
    draw_line(&mut img, margin, py(0.0), w as f64 - margin, py(0.0), AXIS);
    draw_line(&mut img, margin, py(0.0), margin, py(1.0), AXIS);

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for win in s.grid.iter().zip(s.cdf).collect::<Vec<_>>().windows(2) {
            let (g0, c0) = win[0];
            let (g1, c1) = win[1];
            draw_line(&mut img, px(*g0), py(*c0), px(*g1), py(*c1), color);
        }
        // legend swatch
        for dy in 0..10u32 {
            for dx in 0..10u32 {
                img.put_pixel(8 + dx, 8 + i as u32 * 14 + dy, color);
            }
        }
    }

    let path = path.as_ref();
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

/// Inferno-ish three-stop gradient from dB in [-80, 0].
fn heat_color(db: f64) -> Rgb<u8> {
    let t = ((db + 80.0) / 80.0).clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64, t: f64| (a + (b - a) * t) as u8;
    if t < 0.5 {
        let u = t / 0.5;
        Rgb([lerp(5.0, 190.0, u), lerp(5.0, 55.0, u), lerp(60.0, 90.0, u)])
    } else {
        let u = (t - 0.5) / 0.5;
        Rgb([
            lerp(190.0, 252.0, u),
            lerp(55.0, 255.0, u),
            lerp(90.0, 160.0, u),
        ])
    }
}

/// Renders a spectrogram heat map: time left-to-right, frequency
/// bottom-to-top.
pub fn save_spectrogram_png(path: impl AsRef<Path>, spec: &Spectrogram) -> Result<()> {
    let w = spec.frames as u32;
    let h = spec.bins as u32;
    let mut img = RgbImage::new(w, h);
    for f in 0..spec.frames {
        for k in 0..spec.bins {
            let db = spec.values_db[f * spec.bins + k];
            // low frequency at the bottom row
            img.put_pixel(f as u32, (spec.bins - 1 - k) as u32, heat_color(db));
        }
    }
    let path = path.as_ref();
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_readable_pngs() {
        let dir = tempfile::tempdir().unwrap();
        let cdf_path = dir.path().join("cdf.png");
        let grid = [0.0, 0.5, 1.0];
        let cdf = [0.0, 0.6, 1.0];
        save_cdf_png(
            &cdf_path,
            &[CdfSeries {
                label: "bona fide",
                grid: &grid,
                cdf: &cdf,
            }],
        )
        .unwrap();
        assert!(image::open(&cdf_path).unwrap().width() > 0);

        let spec_path = dir.path().join("spec.png");
        let spec = Spectrogram {
            frames: 4,
            bins: 3,
            values_db: vec![
                -80.0, -40.0, 0.0, -80.0, -40.0, 0.0, -80.0, -40.0, 0.0, -80.0, -40.0, 0.0,
            ],
        };
        save_spectrogram_png(&spec_path, &spec).unwrap();
        let img = image::open(&spec_path).unwrap();
        assert_eq!((img.width(), img.height()), (4, 3));
    }
}
