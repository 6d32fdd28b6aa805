//! Fixtures shared by the benchmarks.

use ndarray::Array3;

/// Smooth deterministic field in [0, 1) with `c` channels.
pub fn field(c: usize, h: usize, w: usize, phase: f64) -> Array3<f32> {
    Array3::from_shape_fn((c, h, w), |(k, i, j)| {
        let t = (i as f64 * 0.37 + j as f64 * 0.21 + k as f64 + phase).sin();
        (0.5 + 0.45 * t) as f32
    })
}
