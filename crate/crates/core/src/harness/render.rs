//! Overlay of a localization result on its image: ground-truth match circles
//! of radius `sigma_l`, green for true positives, red for missed heads,
//! magenta for false positives.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::infer::gt_points;
use crate::error::{Error, Result};
use crate::evalx::{match_instances, MatchReport};
use crate::instances::LocalizationResult;
use crate::labels::Annotation;
use crate::numgrid::Grid;

pub const GREEN: Rgb<u8> = Rgb([0, 255, 0]);
pub const RED: Rgb<u8> = Rgb([255, 0, 0]);
pub const MAGENTA: Rgb<u8> = Rgb([255, 0, 255]);

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn dot(img: &mut RgbImage, center: [f64; 2], c: Rgb<u8>) {
    let (x, y) = (center[0].round() as i64, center[1].round() as i64);
    for dy in -1..=1 {
        for dx in -1..=1 {
            put(img, x + dx, y + dy, c);
        }
    }
}

fn circle(img: &mut RgbImage, center: [f64; 2], r: f64, c: Rgb<u8>) {
    let steps = ((2.0 * std::f64::consts::PI * r).ceil() as usize * 2).max(8);
    for i in 0..steps {
        let t = i as f64 / steps as f64 * std::f64::consts::TAU;
        put(img, (center[0] + r * t.cos()).round() as i64, (center[1] + r * t.sin()).round() as i64, c);
    }
}

/// Draws the overlay and returns it with the match it depicts.
pub fn overlay(image: &Grid, result: &LocalizationResult, ann: &Annotation) -> Result<(RgbImage, MatchReport)> {
    let gts = gt_points(ann)?;
    let preds = result.centers();
    let report = match_instances(&preds, &gts);
    let mut img = RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let v = (image.get(y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    });
    for (j, g) in gts.iter().enumerate() {
        let c = if report.matched_gt(j) { GREEN } else { RED };
        circle(&mut img, g.center, g.sigma, c);
    }
    for (j, g) in gts.iter().enumerate() {
        if !report.matched_gt(j) {
            dot(&mut img, g.center, RED);
        }
    }
    for (i, p) in preds.iter().enumerate() {
        let c = if report.matched_pred(i) { GREEN } else { MAGENTA };
        dot(&mut img, *p, c);
    }
    Ok((img, report))
}

pub fn render_overlay(path: &Path, image: &Grid, result: &LocalizationResult, ann: &Annotation) -> Result<MatchReport> {
    let (img, report) = overlay(image, result, ann)?;
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(report)
}
