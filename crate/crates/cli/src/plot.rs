//! Dependency-light raster plots: loss curves, metric bars, and center-slice
//! montages. Text uses a built-in 5x7 bitmap font; output is deterministic
//! PNG (no embedded timestamps).

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

use jointsynth_phantom::Volume;
use jointsynth_tabular::{FeatureKind, MixedRecord, TabularSchema};

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const FG: Rgb<u8> = Rgb([30, 30, 30]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);
const PALETTE: [Rgb<u8>; 8] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
    Rgb([227, 119, 194]),
    Rgb([127, 127, 127]),
];

/// 5x7 glyphs; lowercase maps onto uppercase. Rows are 5-bit masks, MSB left.
fn glyph(c: char) -> [u8; 7] {
    let c = c.to_ascii_uppercase();
    match c {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x0A, 0x04, 0x04, 0x04, 0x0A, 0x11],
        'Y' => [0x11, 0x0A, 0x04, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x13, 0x15, 0x15, 0x15, 0x19, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x06, 0x08, 0x10, 0x1F],
        '3' => [0x0E, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        '%' => [0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        _ => [0x00; 7], // space and anything unmapped
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for ch in text.chars() {
        let rows = glyph(ch);
        for (ry, row) in rows.iter().enumerate() {
            for bit in 0..5 {
                if row & (1 << (4 - bit)) != 0 {
                    put(img, cx + bit as i64, y + ry as i64, color);
                }
            }
        }
        cx += 6;
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    // Bresenham
    let (mut x, mut y) = (x0, y0);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Multi-series line chart (e.g. loss curves over steps).
pub fn line_chart(
    path: &Path,
    title: &str,
    series: &[(String, Vec<(f64, f64)>)],
    log_y: bool,
) -> Result<()> {
    let (w, h) = (860u32, 480u32);
    let (ml, mr, mt, mb) = (70i64, 160i64, 30i64, 40i64);
    let mut img = RgbImage::from_pixel(w, h, BG);

    let tx = |v: f64| if log_y { v.max(1e-12).log10() } else { v };
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for (_, pts) in series {
        for &(x, y) in pts {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(tx(y));
            ymax = ymax.max(tx(y));
        }
    }
    if !xmin.is_finite() || xmin == xmax {
        xmax = xmin + 1.0;
    }
    if !ymin.is_finite() {
        ymin = 0.0;
        ymax = 1.0;
    }
    if ymin == ymax {
        ymax = ymin + 1.0;
    }
    let plot_w = (w as i64 - ml - mr) as f64;
    let plot_h = (h as i64 - mt - mb) as f64;
    let px = |x: f64| ml + ((x - xmin) / (xmax - xmin) * plot_w) as i64;
    let py = |y: f64| (h as i64 - mb) - ((tx(y) - ymin) / (ymax - ymin) * plot_h) as i64;

    // frame + ticks
    draw_line(&mut img, ml, mt, ml, h as i64 - mb, FG);
    draw_line(&mut img, ml, h as i64 - mb, w as i64 - mr, h as i64 - mb, FG);
    for i in 0..=4 {
        let fy = ymin + (ymax - ymin) * i as f64 / 4.0;
        let y = (h as i64 - mb) - (plot_h * i as f64 / 4.0) as i64;
        draw_line(&mut img, ml, y, w as i64 - mr, y, GRID);
        let label = if log_y { fmt_tick(10f64.powf(fy)) } else { fmt_tick(fy) };
        draw_text(&mut img, 4, y - 3, &label, FG);
        let fx = xmin + (xmax - xmin) * i as f64 / 4.0;
        let x = ml + (plot_w * i as f64 / 4.0) as i64;
        draw_text(&mut img, x - 8, h as i64 - mb + 6, &fmt_tick(fx), FG);
    }
    draw_text(&mut img, ml, 10, title, FG);

    for (si, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for pair in pts.windows(2) {
            draw_line(
                &mut img,
                px(pair[0].0),
                py(pair[0].1),
                px(pair[1].0),
                py(pair[1].1),
                color,
            );
        }
        let ly = mt + 12 * si as i64;
        let lx = w as i64 - mr + 8;
        draw_line(&mut img, lx, ly + 3, lx + 14, ly + 3, color);
        draw_text(&mut img, lx + 18, ly, name, FG);
    }
    img.save(path)
        .with_context(|| format!("cannot write {}", path.display()))
}

/// Horizontal bar chart of named scalars.
pub fn bar_chart(path: &Path, title: &str, bars: &[(String, f64)]) -> Result<()> {
    let row_h = 26i64;
    let w = 720u32;
    let h = (60 + bars.len() as i64 * row_h) as u32;
    let mut img = RgbImage::from_pixel(w, h, BG);
    draw_text(&mut img, 20, 10, title, FG);
    let vmax = bars
        .iter()
        .map(|(_, v)| v.abs())
        .fold(f64::MIN_POSITIVE, f64::max);
    let label_w = 190i64;
    let bar_w = (w as i64 - label_w - 120) as f64;
    for (i, (name, v)) in bars.iter().enumerate() {
        let y = 40 + i as i64 * row_h;
        draw_text(&mut img, 20, y + 4, name, FG);
        let len = ((v.abs() / vmax) * bar_w) as i64;
        let color = PALETTE[i % PALETTE.len()];
        for dy in 0..16 {
            draw_line(&mut img, label_w, y + dy, label_w + len.max(1), y + dy, color);
        }
        draw_text(&mut img, label_w + len + 8, y + 4, &format!("{v:.4}"), FG);
    }
    img.save(path)
        .with_context(|| format!("cannot write {}", path.display()))
}

/// Center slices for each orientation per volume, with its tabular row
/// rendered underneath.
pub fn montage(
    path: &Path,
    volumes: &[(&Volume, &MixedRecord)],
    schema: &TabularSchema,
) -> Result<()> {
    if volumes.is_empty() {
        anyhow::bail!("montage needs at least one volume");
    }
    let scale = 3usize;
    let [d, hh, ww] = volumes[0].0.shape;
    let slice_w = (ww.max(hh) * scale) as i64;
    let slice_h = (d.max(hh) * scale) as i64;
    let pad = 10i64;
    let text_h = 26i64;
    let tile_w = 3 * (slice_w + pad) + pad;
    let tile_h = slice_h + text_h + 2 * pad;
    let img_w = tile_w as u32;
    let img_h = (tile_h * volumes.len() as i64) as u32;
    let mut img = RgbImage::from_pixel(img_w, img_h, BG);

    for (vi, (vol, record)) in volumes.iter().enumerate() {
        let oy = vi as i64 * tile_h + pad;
        // axial (z = d/2): (h, w) plane; coronal (y = h/2): (d, w);
        // sagittal (x = w/2): (d, h)
        let planes: [(usize, usize, Box<dyn Fn(usize, usize) -> f32>); 3] = [
            (hh, ww, Box::new(|r, c| vol.at(d / 2, r, c))),
            (d, ww, Box::new(|r, c| vol.at(r, hh / 2, c))),
            (d, hh, Box::new(|r, c| vol.at(r, c, ww / 2))),
        ];
        for (pi, (rows, cols, get)) in planes.iter().enumerate() {
            let ox = pad + pi as i64 * (slice_w + pad);
            for r in 0..*rows {
                for c in 0..*cols {
                    let v = (get(r, c).clamp(0.0, 1.0) * 255.0) as u8;
                    for sy in 0..scale {
                        for sx in 0..scale {
                            put(
                                &mut img,
                                ox + (c * scale + sx) as i64,
                                oy + (r * scale + sy) as i64,
                                Rgb([v, v, v]),
                            );
                        }
                    }
                }
            }
        }
        let mut parts = Vec::new();
        for f in &schema.features {
            match f.kind {
                FeatureKind::Numeric => {
                    parts.push(format!("{}={:.1}", f.name, record.numeric(&f.name)))
                }
                FeatureKind::Categorical => {
                    parts.push(format!("{}={}", f.name, record.categorical(&f.name)))
                }
            }
        }
        draw_text(&mut img, pad, oy + slice_h + 8, &parts.join("  "), FG);
    }
    img.save(path)
        .with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_deterministic() {
        let dir = std::env::temp_dir().join("jointsynth-plot-test");
        std::fs::create_dir_all(&dir).unwrap();
        let series = vec![(
            "total".to_string(),
            (0..50).map(|i| (i as f64, 1.0 / (1.0 + i as f64))).collect(),
        )];
        let p1 = dir.join("a.png");
        let p2 = dir.join("b.png");
        line_chart(&p1, "loss", &series, true).unwrap();
        line_chart(&p2, "loss", &series, true).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let bars = vec![("fd".to_string(), 1.23), ("detection".to_string(), 0.61)];
        let p3 = dir.join("bars.png");
        bar_chart(&p3, "metrics", &bars).unwrap();
        assert!(p3.exists());
        std::fs::remove_dir_all(&dir).ok();
    }
}
