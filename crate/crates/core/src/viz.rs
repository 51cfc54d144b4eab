//! Static figures: the 1×4 inference grid and grouped metric bar charts.

use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, MetricsRow};
use crate::raster::{BinaryMask, ProbabilityMap, RgbImage};

pub const GRID_PAD: usize = 4;
pub const GT_COLOR: [f32; 3] = [1.0, 0.0, 0.0];
pub const PRED_COLOR: [f32; 3] = [0.0, 1.0, 0.0];
const PAD_COLOR: [f32; 3] = [1.0, 1.0, 1.0];

/// Foreground pixels with at least one 4-neighbour that is background or
/// outside the image.
pub fn mask_boundary(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    let mut out = BinaryMask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) == 0 {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || mask.get(x - 1, y) == 0
                || mask.get(x + 1, y) == 0
                || mask.get(x, y - 1) == 0
                || mask.get(x, y + 1) == 0;
            out.set(x, y, edge);
        }
    }
    out
}

fn blit(dst: &mut RgbImage, src: &RgbImage, x_off: usize) {
    let (h, w) = src.dims();
    for y in 0..h {
        for x in 0..w {
            dst.set_pixel(x_off + x, y, src.pixel(x, y));
        }
    }
}

fn gray(mask: &BinaryMask) -> RgbImage {
    let (h, w) = mask.dims();
    let mut img = RgbImage::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let v = mask.get(x, y) as f32;
            img.set_pixel(x, y, [v, v, v]);
        }
    }
    img
}

/// Input | GT mask | thresholded prediction | overlay, separated by
/// [`GRID_PAD`] white columns. The overlay draws the GT boundary in red
/// first and the prediction boundary in green on top, so coinciding
/// boundaries show green.
pub fn render_grid(image: &RgbImage, gt: &BinaryMask, pred: &ProbabilityMap, threshold: f32) -> Result<RgbImage> {
    let (h, w) = image.dims();
    if gt.dims() != (h, w) || pred.dims() != (h, w) {
        return Err(Error::shape(format!("{h}x{w}"), format!("gt {:?}, prediction {:?}", gt.dims(), pred.dims())));
    }
    let binary = pred.threshold(threshold);
    let mut overlay = image.clone();
    for (mask, color) in [(gt, GT_COLOR), (&binary, PRED_COLOR)] {
        let edge = mask_boundary(mask);
        for y in 0..h {
            for x in 0..w {
                if edge.get(x, y) == 1 {
                    overlay.set_pixel(x, y, color);
                }
            }
        }
    }
    let mut out = RgbImage::new(h, 4 * w + 3 * GRID_PAD);
    for y in 0..h {
        for x in 0..out.width() {
            out.set_pixel(x, y, PAD_COLOR);
        }
    }
    for (i, panel) in [image.clone(), gray(gt), gray(&binary), overlay].iter().enumerate() {
        blit(&mut out, panel, i * (w + GRID_PAD));
    }
    Ok(out)
}

/// Columns of a [`MetricsRow`] that can be charted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Iou,
    Dice,
    Precision,
    Recall,
    F1,
    Psnr,
    Ssim,
}

impl Metric {
    pub const MASK: [Metric; 5] = [Metric::Iou, Metric::Dice, Metric::Precision, Metric::Recall, Metric::F1];
    pub const QUALITY: [Metric; 2] = [Metric::Psnr, Metric::Ssim];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Iou => "IOU",
            Metric::Dice => "DICE",
            Metric::Precision => "PREC",
            Metric::Recall => "REC",
            Metric::F1 => "F1",
            Metric::Psnr => "PSNR",
            Metric::Ssim => "SSIM",
        }
    }

    pub fn value(self, row: &MetricsRow) -> f64 {
        match self {
            Metric::Iou => row.iou,
            Metric::Dice => row.dice,
            Metric::Precision => row.precision,
            Metric::Recall => row.recall,
            Metric::F1 => row.f1,
            Metric::Psnr => row.psnr,
            Metric::Ssim => row.ssim,
        }
    }
}

const PALETTE: [[f32; 3]; 7] = [
    [0.12, 0.47, 0.71],
    [1.00, 0.50, 0.05],
    [0.17, 0.63, 0.17],
    [0.84, 0.15, 0.16],
    [0.58, 0.40, 0.74],
    [0.55, 0.34, 0.29],
    [0.89, 0.47, 0.76],
];

const BAR_W: usize = 26;
const GROUP_GAP: usize = 14;
const MARGIN: usize = 10;
const PLOT_H: usize = 160;
const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;

/// 3×5 bitmap glyphs, one row per byte, high bit on the left.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        '_' => [0, 0, 0, 0, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        _ => [0; 5],
    }
}

fn text_width(s: &str) -> usize {
    s.chars().count() * (GLYPH_W + 1)
}

fn draw_text(img: &mut RgbImage, s: &str, x: usize, y: usize, color: [f32; 3]) {
    for (i, c) in s.chars().enumerate() {
        let rows = glyph(c);
        for (dy, bits) in rows.iter().enumerate() {
            for dx in 0..GLYPH_W {
                if bits & (4 >> dx) != 0 {
                    let (px, py) = (x + i * (GLYPH_W + 1) + dx, y + dy);
                    if px < img.width() && py < img.height() {
                        img.set_pixel(px, py, color);
                    }
                }
            }
        }
    }
}

fn fill(img: &mut RgbImage, x0: usize, y0: usize, w: usize, h: usize, color: [f32; 3]) {
    for y in y0..(y0 + h).min(img.height()) {
        for x in x0..(x0 + w).min(img.width()) {
            img.set_pixel(x, y, color);
        }
    }
}

fn value_label(v: f64) -> String {
    if v.is_infinite() {
        "INF".to_string()
    } else {
        format!("{v:.4}")
    }
}

/// Grouped bars, one group per row of the report and one bar per metric,
/// each labelled with its value to 4 decimals. Bars share a linear scale
/// whose top is the larger of 1 and the largest finite value; infinite
/// values are drawn full height and labelled `INF`.
pub fn render_metric_bars(report: &MetricsReport, metrics: &[Metric]) -> Result<RgbImage> {
    if report.rows.is_empty() || metrics.is_empty() {
        return Err(Error::invalid("bar chart needs at least one row and one metric"));
    }
    let top = report
        .rows
        .iter()
        .flat_map(|r| metrics.iter().map(move |m| m.value(r)))
        .filter(|v| v.is_finite())
        .fold(1.0f64, f64::max);
    let group_w = metrics.len() * BAR_W;
    let legend_h = GLYPH_H + 6;
    let label_h = GLYPH_H + 4;
    let width = 2 * MARGIN + report.rows.len() * group_w + (report.rows.len() - 1) * GROUP_GAP;
    let width = width.max(2 * MARGIN + metrics.iter().map(|m| text_width(m.label()) + 10).sum::<usize>());
    let height = MARGIN + legend_h + label_h + PLOT_H + 2 + label_h + MARGIN;
    let mut img = RgbImage::new(height, width);
    fill(&mut img, 0, 0, width, height, [1.0; 3]);

    let mut lx = MARGIN;
    for (i, m) in metrics.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        fill(&mut img, lx, MARGIN, GLYPH_H, GLYPH_H, color);
        draw_text(&mut img, m.label(), lx + GLYPH_H + 2, MARGIN, [0.0; 3]);
        lx += text_width(m.label()) + 10;
    }

    let baseline = MARGIN + legend_h + label_h + PLOT_H;
    fill(&mut img, MARGIN, baseline, width - 2 * MARGIN, 1, [0.0; 3]);
    for (g, row) in report.rows.iter().enumerate() {
        let gx = MARGIN + g * (group_w + GROUP_GAP);
        for (i, m) in metrics.iter().enumerate() {
            let v = m.value(row);
            let frac = if v.is_infinite() { 1.0 } else { (v / top).clamp(0.0, 1.0) };
            let bar_h = (frac * PLOT_H as f64).round() as usize;
            let bx = gx + i * BAR_W;
            fill(&mut img, bx + 1, baseline - bar_h, BAR_W - 2, bar_h, PALETTE[i % PALETTE.len()]);
            let label = value_label(v);
            let tx = bx + (BAR_W.saturating_sub(text_width(&label))) / 2;
            draw_text(&mut img, &label, tx, baseline - bar_h - label_h + 2, [0.0; 3]);
        }
        let name_x = gx + group_w.saturating_sub(text_width(&row.arch)) / 2;
        draw_text(&mut img, &row.arch, name_x, baseline + 4, [0.0; 3]);
    }
    Ok(img)
}
