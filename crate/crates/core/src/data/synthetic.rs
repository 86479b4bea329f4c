//! Procedural image/mask/class generator used as a desk-scale benchmark.
//!
//! Class 0 is a filled ellipse, class 1 a filled rectangle, class 2 (when
//! requested) a filled triangle. Each shape is randomly placed, sized, and
//! rotated on a noisy shaded background that also carries a few small bright
//! distractor blobs outside the mask.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::preprocess::normalize_min_max;
use super::types::{ClassLabel, Image, Mask, Sample};
use crate::error::{Error, Result};
use crate::rng;

pub const MIN_SYNTHETIC_SIDE: usize = 16;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { a: f64, b: f64 },
    Rectangle { hw: f64, hh: f64 },
    Triangle { r: f64 },
}

impl Shape {
    /// Membership test in the shape's local (unrotated, centred) frame.
    fn contains(&self, u: f64, v: f64) -> bool {
        match *self {
            Shape::Ellipse { a, b } => (u / a).powi(2) + (v / b).powi(2) <= 1.0,
            Shape::Rectangle { hw, hh } => u.abs() <= hw && v.abs() <= hh,
            Shape::Triangle { r } => {
                // Equilateral triangle with circumradius r, apex along -v.
                let verts = [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0]
                    .map(|t: f64| (r * t.sin(), -r * t.cos()));
                let mut sign = 0.0;
                for i in 0..3 {
                    let (x0, y0) = verts[i];
                    let (x1, y1) = verts[(i + 1) % 3];
                    let cross = (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0);
                    if sign == 0.0 {
                        sign = cross.signum();
                    } else if cross * sign < 0.0 {
                        return false;
                    }
                }
                true
            }
        }
    }
}

fn draw_shape(class: usize, side: f64, rng: &mut impl Rng) -> Shape {
    match class {
        0 => Shape::Ellipse {
            a: rng.gen_range(0.15..0.33) * side,
            b: rng.gen_range(0.15..0.33) * side,
        },
        1 => Shape::Rectangle {
            hw: rng.gen_range(0.13..0.29) * side,
            hh: rng.gen_range(0.13..0.29) * side,
        },
        _ => Shape::Triangle {
            r: rng.gen_range(0.24..0.4) * side,
        },
    }
}

fn generate_one(id: String, class: usize, class_count: usize, side: usize, seed: u64, index: u64) -> Result<Sample> {
    let mut rng = rng::stream(seed, "synthetic", &[index]);
    let s = side as f64;
    let shape = draw_shape(class, s, &mut rng);
    let cx = rng.gen_range(0.35..0.65) * s;
    let cy = rng.gen_range(0.35..0.65) * s;
    let angle = rng.gen_range(0.0..PI);
    let (sin, cos) = angle.sin_cos();

    let base = rng.gen_range(0.15..0.45);
    let gx = rng.gen_range(-0.15..0.15);
    let gy = rng.gen_range(-0.15..0.15);
    let contrast = rng.gen_range(0.12..0.3);
    let sigma = rng.gen_range(0.05..0.1);
    let noise = Normal::new(0.0, sigma).expect("valid sigma");

    let n_blobs = rng.gen_range(0..=2);
    let blobs: Vec<(f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            (
                rng.gen_range(0.0..s),
                rng.gen_range(0.0..s),
                rng.gen_range(0.03..0.06) * s,
            )
        })
        .collect();

    let mut pixels = Vec::with_capacity(side * side);
    let mut fg = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
            let (dx, dy) = (x - cx, y - cy);
            let u = cos * dx + sin * dy;
            let v = -sin * dx + cos * dy;
            let inside = shape.contains(u, v);
            let mut value = base + gx * (x / s - 0.5) + gy * (y / s - 0.5);
            // Distractor blobs are as bright as the object but never in its mask.
            let blob = blobs
                .iter()
                .any(|&(bx, by, br)| (x - bx).powi(2) + (y - by).powi(2) <= br * br);
            if inside || blob {
                value += contrast;
            }
            value += noise.sample(&mut rng);
            pixels.push(value);
            fg.push(inside);
        }
    }
    normalize_min_max(&mut pixels);
    let image = Image::new(side, side, pixels)?;
    let mask = Mask::from_binary(side, &fg)?;
    Sample::labeled(id, image, mask, ClassLabel::new(class, class_count)?)
}

/// Generates `count` labeled samples with classes assigned round-robin, so
/// class counts differ by at most one. Deterministic in `seed`.
pub fn make_synthetic(count: usize, side: usize, class_count: usize, seed: u64) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(Error::invalid("synthetic count must be positive"));
    }
    if side < MIN_SYNTHETIC_SIDE {
        return Err(Error::invalid(format!(
            "synthetic side {side} is below the minimum of {MIN_SYNTHETIC_SIDE}"
        )));
    }
    if !(2..=3).contains(&class_count) {
        return Err(Error::invalid("synthetic data supports 2 or 3 classes"));
    }
    (0..count)
        .map(|i| {
            generate_one(
                format!("syn{i:05}"),
                i % class_count,
                class_count,
                side,
                seed,
                i as u64,
            )
        })
        .collect()
}
