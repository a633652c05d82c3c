//! Impulse-aligned time meshes shared by the simulator, the grid solvers and
//! the Riccati integrator. All three must produce bit-identical node times so
//! that policies, value slices and trajectories line up.

use serde::{Deserialize, Serialize};

/// Which one-sided limit a stored sample represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    /// Left limit at an impulse time.
    Minus,
    /// Right limit at an impulse time.
    Plus,
    /// An ordinary mesh node.
    Regular,
}

impl Side {
    /// Tag used in CSV files: `-`, `+` or `.`.
    pub fn symbol(self) -> char {
        match self {
            Side::Minus => '-',
            Side::Plus => '+',
            Side::Regular => '.',
        }
    }

    pub fn from_symbol(c: char) -> Option<Side> {
        match c {
            '-' => Some(Side::Minus),
            '+' => Some(Side::Plus),
            '.' => Some(Side::Regular),
            _ => None,
        }
    }
}

/// Number of equal steps used to cover an interval of length `len` with a
/// requested step `dt`: `ceil(len / dt)`, at least one.
pub fn interval_steps(len: f64, dt: f64) -> usize {
    let ratio = len / dt;
    // absorb rounding noise such as 0.5 / 0.001 = 500.00000000000006
    let m = (ratio - 1e-9 * ratio.max(1.0)).ceil();
    (m as usize).max(1)
}

/// Time of node `j` of `m` equal steps on `[a, b]`; the last node is `b` exactly.
pub fn node_time(a: f64, b: f64, m: usize, j: usize) -> f64 {
    if j >= m {
        b
    } else {
        a + (b - a) * (j as f64) / (m as f64)
    }
}

/// Breakpoints `start, τ_k (start < τ_k < end), end`.
pub fn breakpoints(start: f64, end: f64, impulse_times: &[f64]) -> Vec<f64> {
    let mut out = vec![start];
    out.extend(impulse_times.iter().copied().filter(|&t| t > start && t < end));
    out.push(end);
    out
}

/// Every node time of the impulse-aligned mesh on `[start, end]`, with
/// breakpoints appearing once.
pub fn mesh_times(start: f64, end: f64, impulse_times: &[f64], dt: f64) -> Vec<f64> {
    let bps = breakpoints(start, end, impulse_times);
    let mut out = vec![start];
    for w in bps.windows(2) {
        let m = interval_steps(w[1] - w[0], dt);
        out.extend((1..=m).map(|j| node_time(w[0], w[1], m, j)));
    }
    out
}
