//! Minimal raster plots: ROC curves and score-over-time bands.

use std::path::{Path, PathBuf};

use super::Report;
use crate::error::Result;

#[cfg(not(feature = "plots"))]
pub(super) fn draw_all(_report: &Report, _dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(Vec::new())
}

#[cfg(feature = "plots")]
pub(super) fn draw_all(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    use crate::detector::Scorer;
    use crate::error::Error;

    let mut models: Vec<&str> = report.roc.iter().map(|r| r.model.as_str()).collect();
    models.dedup();
    let mut out = Vec::new();
    for model in models {
        let mut canvas = Canvas::new();
        canvas.line_data((0.0, 0.0), (1.0, 1.0), GREY);
        for (i, e) in report.roc.iter().filter(|e| e.model == model).enumerate() {
            let pts: Vec<(f64, f64)> = e.curve.points.iter().map(|p| (p.fpr, p.tpr)).collect();
            canvas.polyline(&pts, PALETTE[i % PALETTE.len()]);
        }
        let path = dir.join(format!("{model}_roc.png"));
        canvas.save(&path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        out.push(path);

        if let Some(e) = report
            .score_over_time
            .iter()
            .find(|e| e.model == model && e.scorer == Scorer::Contour)
        {
            let b = &e.bands;
            let steps = b.normal_mean.len().max(2) - 1;
            let x = |t: usize| t as f64 / steps as f64;
            let mut canvas = Canvas::new();
            for (mean, sd, colour) in [
                (&b.normal_mean, &b.normal_sd, PALETTE[0]),
                (&b.anomalous_mean, &b.anomalous_sd, PALETTE[1]),
            ] {
                let lo: Vec<(f64, f64)> = (0..mean.len()).map(|t| (x(t), mean[t] - sd[t])).collect();
                let hi: Vec<(f64, f64)> = (0..mean.len()).map(|t| (x(t), mean[t] + sd[t])).collect();
                canvas.band(&lo, &hi, tint(colour));
                let mid: Vec<(f64, f64)> = (0..mean.len()).map(|t| (x(t), mean[t])).collect();
                canvas.polyline(&mid, colour);
            }
            let path = dir.join(format!("{model}_score_over_time.png"));
            canvas.save(&path).map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
            out.push(path);
        }
    }
    Ok(out)
}

#[cfg(feature = "plots")]
const GREY: [u8; 3] = [170, 170, 170];
#[cfg(feature = "plots")]
const PALETTE: [[u8; 3]; 4] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189]];

#[cfg(feature = "plots")]
fn tint(c: [u8; 3]) -> [u8; 3] {
    c.map(|v| ((u16::from(v) + 3 * 255) / 4) as u8)
}

/// Unit square data coordinates mapped into a fixed-size image with margins.
#[cfg(feature = "plots")]
struct Canvas {
    img: image::RgbImage,
}

#[cfg(feature = "plots")]
impl Canvas {
    const W: u32 = 480;
    const H: u32 = 360;
    const M: u32 = 30;

    fn new() -> Self {
        let mut img = image::RgbImage::from_pixel(Self::W, Self::H, image::Rgb([255, 255, 255]));
        let (x0, y0, x1, y1) = (Self::M, Self::M, Self::W - Self::M, Self::H - Self::M);
        for x in x0..=x1 {
            img.put_pixel(x, y1, image::Rgb([0, 0, 0]));
        }
        for y in y0..=y1 {
            img.put_pixel(x0, y, image::Rgb([0, 0, 0]));
        }
        Self { img }
    }

    fn to_px(p: (f64, f64)) -> (f64, f64) {
        let w = f64::from(Self::W - 2 * Self::M);
        let h = f64::from(Self::H - 2 * Self::M);
        let x = f64::from(Self::M) + p.0.clamp(0.0, 1.0) * w;
        let y = f64::from(Self::H - Self::M) - p.1.clamp(0.0, 1.0) * h;
        (x, y)
    }

    fn put(&mut self, x: f64, y: f64, c: [u8; 3]) {
        let (x, y) = (x.round(), y.round());
        if x >= 0.0 && y >= 0.0 && (x as u32) < Self::W && (y as u32) < Self::H {
            self.img.put_pixel(x as u32, y as u32, image::Rgb(c));
        }
    }

    fn line_data(&mut self, a: (f64, f64), b: (f64, f64), c: [u8; 3]) {
        let (a, b) = (Self::to_px(a), Self::to_px(b));
        let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            self.put(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), c);
        }
    }

    fn polyline(&mut self, pts: &[(f64, f64)], c: [u8; 3]) {
        for w in pts.windows(2) {
            self.line_data(w[0], w[1], c);
        }
    }

    /// Fill between two curves sharing x coordinates.
    fn band(&mut self, lo: &[(f64, f64)], hi: &[(f64, f64)], c: [u8; 3]) {
        for (a, b) in lo.windows(2).zip(hi.windows(2)) {
            let (l0, l1) = (Self::to_px(a[0]), Self::to_px(a[1]));
            let (h0, h1) = (Self::to_px(b[0]), Self::to_px(b[1]));
            let span = (l1.0 - l0.0).max(1.0);
            let mut x = l0.0;
            while x <= l1.0 {
                let t = (x - l0.0) / span;
                let ylo = l0.1 + t * (l1.1 - l0.1);
                let yhi = h0.1 + t * (h1.1 - h0.1);
                let mut y = yhi.min(ylo);
                while y <= yhi.max(ylo) {
                    self.put(x, y, c);
                    y += 1.0;
                }
                x += 1.0;
            }
        }
    }

    fn save(&self, path: &Path) -> std::result::Result<(), image::ImageError> {
        self.img.save_with_format(path, image::ImageFormat::Png)
    }
}
