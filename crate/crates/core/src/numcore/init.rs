use super::{Matrix, RngState};
use crate::error::{Error, Result};

/// He-normal initialization: `N(0, 2 / rows)` where `rows` is the fan-in.
pub fn he_init(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
    let std = (2.0 / rows.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.normal(0.0, std)).collect();
    Matrix::new(rows, cols, data).expect("length matches shape")
}

/// Inverted-dropout mask: each entry is `0` with probability `rate`, otherwise
/// `1 / (1 - rate)`, so `E[mask ⊙ x] = x`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut RngState) -> Result<Matrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(Matrix::filled(rows, cols, 1.0));
    }
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.unit() < rate { 0.0 } else { keep })
        .collect();
    Matrix::new(rows, cols, data)
}
