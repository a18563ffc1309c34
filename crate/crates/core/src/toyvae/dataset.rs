//! Synthetic factor dataset: white squares on a black 16×16 canvas.
//!
//! Three ground-truth factors with known cardinalities — horizontal position
//! (8), vertical position (8), and size (3) — give 192 images, each pixel 0
//! or 1. Positions are spread evenly over the range that keeps the square
//! fully on the canvas, so every (x, y, size) triple renders a distinct image.

use ndarray::Array2;

use crate::num::Real;

pub const IMAGE_SIDE: usize = 16;
pub const N_X: usize = 8;
pub const N_Y: usize = 8;
pub const SIZES: [usize; 3] = [3, 5, 7];

#[derive(Debug, Clone)]
pub struct FactorDataset<T> {
    /// One image per row, `IMAGE_SIDE * IMAGE_SIDE` pixels, values 0 or 1.
    pub images: Array2<T>,
    /// Per-row factor indices `[x_idx, y_idx, size_idx]`.
    pub factors: Vec<[usize; 3]>,
    pub cardinalities: [usize; 3],
}

impl<T> FactorDataset<T> {
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        IMAGE_SIDE * IMAGE_SIDE
    }
}

/// Evenly spread `n` integer offsets over `[0, max]`, rounding to nearest.
fn spread_positions(max: usize, n: usize) -> Vec<usize> {
    (0..n)
        .map(|i| ((max * i) as f64 / (n - 1) as f64).round() as usize)
        .collect()
}

pub fn make_factor_dataset<T: Real>() -> FactorDataset<T> {
    let d = IMAGE_SIDE * IMAGE_SIDE;
    let n = N_X * N_Y * SIZES.len();
    let mut pixels = Vec::with_capacity(n * d);
    let mut factors = Vec::with_capacity(n);
    for (s_idx, &size) in SIZES.iter().enumerate() {
        let offsets = spread_positions(IMAGE_SIDE - size, N_X);
        for (y_idx, &y0) in offsets.iter().enumerate() {
            for (x_idx, &x0) in offsets.iter().enumerate() {
                let mut img = vec![T::zero(); d];
                for row in y0..y0 + size {
                    for col in x0..x0 + size {
                        img[row * IMAGE_SIDE + col] = T::one();
                    }
                }
                pixels.extend_from_slice(&img);
                factors.push([x_idx, y_idx, s_idx]);
            }
        }
    }
    FactorDataset {
        images: Array2::from_shape_vec((n, d), pixels).expect("grid dimensions are consistent"),
        factors,
        cardinalities: [N_X, N_Y, SIZES.len()],
    }
}
