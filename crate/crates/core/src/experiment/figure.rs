//! Static overlay panels: ground truth next to each variant's detections,
//! labelled with objectness (FG) and predicted score (MS).

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::detector::{Detection, Grading};
use crate::error::{Error, Result};
use crate::eval_metrics::{BinningScheme, GtObject};
use crate::geometry::BBox;
use crate::volume::Volume;

const SCALE: u32 = 3;
const GT_COLOR: Rgb<u8> = Rgb([60, 220, 60]);
const DET_COLOR: Rgb<u8> = Rgb([240, 90, 40]);
const TEXT_COLOR: Rgb<u8> = Rgb([255, 255, 80]);

/// 3×5 glyphs, one row per entry, most significant bit on the left.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        'A' => [2, 5, 7, 5, 5],
        'C' => [7, 4, 4, 4, 7],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [7, 4, 5, 5, 7],
        'I' => [7, 2, 2, 2, 7],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'O' => [7, 5, 5, 5, 7],
        'R' => [6, 5, 6, 5, 5],
        'S' => [7, 4, 7, 1, 7],
        'T' => [7, 2, 2, 2, 2],
        _ => [0; 5],
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for ch in text.chars() {
        let g = glyph(ch.to_ascii_uppercase());
        for (row, bits) in g.iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) != 0 {
                    put(img, cx + col, y + row as i64, color);
                }
            }
        }
        cx += 4;
    }
}

fn draw_box(img: &mut RgbImage, ox: u32, b: &BBox, color: Rgb<u8>) {
    let s = SCALE as f64;
    let x0 = (b.min[0] * s).round() as i64 + ox as i64;
    let x1 = (b.max[0] * s).round() as i64 + ox as i64 - 1;
    let y0 = (b.min[1] * s).round() as i64;
    let y1 = (b.max[1] * s).round() as i64 - 1;
    for x in x0..=x1 {
        put(img, x, y0, color);
        put(img, x, y1, color);
    }
    for y in y0..=y1 {
        put(img, x0, y, color);
        put(img, x1, y, color);
    }
}

/// Render slice `z` of `volume` once per panel: ground truth first, then one
/// panel per `(title, detections)` pair.
pub fn render_overlay(
    volume: &Volume,
    z: usize,
    gts: &[GtObject],
    panels: &[(&str, &[Detection])],
    scheme: &BinningScheme,
) -> Result<RgbImage> {
    let slice = volume.slice_z(z)?;
    let [nx, ny, _] = slice.dims();
    let (lo, hi) = slice
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = (nx as u32 * SCALE, ny as u32 * SCALE);
    let header = 10;
    let n_panels = 1 + panels.len() as u32;
    let mut img = RgbImage::new(w * n_panels, h + header);
    for p in 0..n_panels {
        for y in 0..h {
            for x in 0..w {
                let v = slice.get((x / SCALE) as usize, (y / SCALE) as usize, 0);
                let g = (((v - lo) / span) * 255.0).clamp(0.0, 255.0) as u8;
                img.put_pixel(p * w + x, y + header, Rgb([g, g, g]));
            }
        }
    }
    let shifted = |b: &BBox| {
        let mut b = *b;
        b.min[1] += header as f64 / SCALE as f64;
        b.max[1] += header as f64 / SCALE as f64;
        b
    };
    draw_text(&mut img, 2, 2, "GT", TEXT_COLOR);
    for g in gts {
        let b = shifted(&g.bbox);
        draw_box(&mut img, 0, &b, GT_COLOR);
        let label = format!("MS{:.1}", g.score);
        draw_text(
            &mut img,
            (b.min[0] * SCALE as f64) as i64,
            (b.min[1] * SCALE as f64) as i64 - 6,
            &label,
            GT_COLOR,
        );
    }
    for (k, (title, dets)) in panels.iter().enumerate() {
        let ox = (k as u32 + 1) * w;
        draw_text(&mut img, ox as i64 + 2, 2, title, TEXT_COLOR);
        for d in dets.iter() {
            let b = shifted(&d.bbox);
            draw_box(&mut img, ox, &b, DET_COLOR);
            let ms = match &d.grading {
                Grading::Score(s) => *s,
                g @ Grading::Probabilities(_) => g.point(scheme)?,
            };
            let label = format!("FG{:.2} MS{:.1}", d.objectness, ms);
            let x = ox as i64 + (b.min[0] * SCALE as f64) as i64;
            draw_text(&mut img, x, (b.max[1] * SCALE as f64) as i64 + 1, &label, DET_COLOR);
        }
    }
    Ok(img)
}

pub fn write_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}
