//! Fixtures for the pipeline benchmarks.

use nalgebra::DMatrix;
use tenseco::statespace::ClosedLoop;

/// Lightly coupled chain of `n` damped states, stable for every `n`.
pub fn chain_loop(n: usize) -> ClosedLoop {
    let a = DMatrix::from_fn(n, n, |i, j| match (i as isize - j as isize).abs() {
        0 => -1.0,
        1 => 0.4,
        _ => 0.0,
    });
    let b = DMatrix::from_fn(n, 2, |i, j| if i % 2 == j { 1.0 } else { 0.0 });
    let c = DMatrix::from_fn(1, n, |_, j| 1.0 / (1.0 + j as f64));
    ClosedLoop::standard(a, b, c)
}
