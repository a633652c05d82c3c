use serde::{Deserialize, Serialize};

/// Fractions this close to 0 or 1 snap to the node, so foot points that land
/// on a node up to rounding reproduce its value exactly.
const SNAP: f64 = 1e-12;

/// Tensor grid over a box; values are stored row-major with the last
/// dimension fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
    /// Requested time step; each inter-impulse interval uses the largest
    /// step not above it that divides the interval evenly.
    pub dt: f64,
}

/// Position of a point relative to the grid cells.
#[derive(Debug, Clone)]
pub struct Location {
    base: usize,
    frac: Vec<f64>,
    pub clamped: bool,
}

impl Grid {
    pub fn validate(&self) -> Result<(), String> {
        let d = self.lo.len();
        if d == 0 || self.hi.len() != d || self.nodes.len() != d {
            return Err("grid bounds and node counts must be non-empty and equally long".into());
        }
        for i in 0..d {
            if !(self.lo[i] < self.hi[i]) || !self.lo[i].is_finite() || !self.hi[i].is_finite() {
                return Err(format!("grid axis {i}: need lo < hi"));
            }
            if self.nodes[i] < 2 {
                return Err(format!("grid axis {i}: need at least 2 nodes"));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err("grid time step must be positive".into());
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, d: usize) -> f64 {
        (self.hi[d] - self.lo[d]) / (self.nodes[d] - 1) as f64
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|d| self.spacing(d)).fold(0.0, f64::max)
    }

    pub fn coord(&self, d: usize, i: usize) -> f64 {
        if i + 1 == self.nodes[d] {
            self.hi[d]
        } else {
            self.lo[d] + self.spacing(d) * i as f64
        }
    }

    fn stride(&self, d: usize) -> usize {
        self.nodes[d + 1..].iter().product()
    }

    /// Per-axis indices of a flat node index.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            idx[d] = flat % self.nodes[d];
            flat /= self.nodes[d];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.nodes).fold(0, |acc, (i, n)| acc * n + i)
    }

    /// Coordinates of a flat node index, written into `out`.
    pub fn node_into(&self, flat: usize, out: &mut Vec<f64>) {
        out.clear();
        let idx = self.multi_index(flat);
        out.extend(idx.iter().enumerate().map(|(d, &i)| self.coord(d, i)));
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        self.node_into(flat, &mut v);
        v
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(d, &v)| v >= self.lo[d] - SNAP * (1.0 + self.lo[d].abs()) && v <= self.hi[d] + SNAP * (1.0 + self.hi[d].abs()))
    }

    /// Cell and weights of `x`, clamped into the box.
    pub fn locate(&self, x: &[f64]) -> Location {
        let d = self.dim();
        let mut base = 0;
        let mut frac = vec![0.0; d];
        let mut clamped = false;
        for k in 0..d {
            let h = self.spacing(k);
            let mut pos = (x[k] - self.lo[k]) / h;
            let last = (self.nodes[k] - 1) as f64;
            if !(pos >= 0.0) {
                clamped |= pos < -SNAP || pos.is_nan();
                pos = 0.0;
            } else if pos > last {
                clamped |= pos > last + SNAP;
                pos = last;
            }
            let mut i = pos.floor();
            let mut f = pos - i;
            if f < SNAP {
                f = 0.0;
            } else if f > 1.0 - SNAP {
                i += 1.0;
                f = 0.0;
            }
            let mut i = i as usize;
            // keep a full cell: the top node is reached as frac 1 of the last cell
            if i + 1 >= self.nodes[k] {
                i = self.nodes[k] - 2;
                f = 1.0;
            }
            frac[k] = f;
            base += i * self.stride(k);
        }
        Location {
            base,
            frac,
            clamped,
        }
    }

    /// Multilinear interpolation of `values` at a located point.
    pub fn eval_at(&self, loc: &Location, values: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        'corners: for mask in 0..(1usize << d) {
            let mut w = 1.0;
            let mut offset = 0;
            for k in 0..d {
                let up = mask >> k & 1 == 1;
                let wk = if up { loc.frac[k] } else { 1.0 - loc.frac[k] };
                if wk == 0.0 {
                    continue 'corners;
                }
                w *= wk;
                if up {
                    offset += self.stride(k);
                }
            }
            acc += w * values[loc.base + offset];
        }
        acc
    }

    /// Multilinear interpolation with clamping; also reports whether `x`
    /// was outside the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> (f64, bool) {
        let loc = self.locate(x);
        (self.eval_at(&loc, values), loc.clamped)
    }

    /// Flat index of the node nearest to `x` (clamped).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for k in 0..self.dim() {
            let pos = ((x[k] - self.lo[k]) / self.spacing(k)).round();
            let i = if pos.is_nan() || pos < 0.0 {
                0
            } else {
                (pos as usize).min(self.nodes[k] - 1)
            };
            flat = flat * self.nodes[k] + i;
        }
        flat
    }

    /// `g` evaluated at every node.
    pub fn sample(&self, mut g: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        (0..self.len())
            .map(|i| {
                self.node_into(i, &mut x);
                g(&x)
            })
            .collect()
    }
}
