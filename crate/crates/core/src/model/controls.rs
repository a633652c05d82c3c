use serde::{Deserialize, Serialize};

/// Admissible control values. Every minimization over controls in the
/// solvers enumerates [`ControlSet::enumerate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSet {
    /// Explicit list of control vectors, enumerated in declaration order.
    Finite(Vec<Vec<f64>>),
    /// Axis-aligned box sampled on a lattice with `samples[i]` points per axis,
    /// enumerated lexicographically (first axis slowest).
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        samples: Vec<usize>,
    },
}

impl ControlSet {
    /// The single zero-dimensional control; used when a system has no control
    /// of that kind.
    pub fn none() -> Self {
        ControlSet::Finite(vec![Vec::new()])
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Finite(list) => list.first().map_or(0, Vec::len),
            ControlSet::Box { lo, .. } => lo.len(),
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, ControlSet::Finite(_))
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            ControlSet::Finite(list) => {
                let Some(first) = list.first() else {
                    return Err("finite control set is empty".into());
                };
                if list.iter().any(|v| v.len() != first.len()) {
                    return Err("finite control set mixes vector lengths".into());
                }
                if list.iter().flatten().any(|c| !c.is_finite()) {
                    return Err("finite control set contains a non-finite value".into());
                }
                Ok(())
            }
            ControlSet::Box { lo, hi, samples } => {
                if lo.len() != hi.len() || lo.len() != samples.len() {
                    return Err("box bounds and sample counts differ in length".into());
                }
                for (i, ((l, h), s)) in lo.iter().zip(hi).zip(samples).enumerate() {
                    if !(l.is_finite() && h.is_finite()) || l > h {
                        return Err(format!("box axis {i}: need lo <= hi, got [{l}, {h}]"));
                    }
                    if *s < 1 {
                        return Err(format!("box axis {i}: sample count must be >= 1"));
                    }
                }
                Ok(())
            }
        }
    }

    /// Number of points in [`ControlSet::enumerate`].
    pub fn len(&self) -> usize {
        match self {
            ControlSet::Finite(list) => list.len(),
            ControlSet::Box { samples, .. } => samples.iter().product(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn axis_value(lo: f64, hi: f64, samples: usize, k: usize) -> f64 {
        if samples == 1 {
            0.5 * (lo + hi)
        } else if k + 1 == samples {
            hi
        } else {
            lo + (hi - lo) * (k as f64) / ((samples - 1) as f64)
        }
    }

    /// All candidate controls in enumeration order (the tie-break order of
    /// every argmin in the crate).
    pub fn enumerate(&self) -> Vec<Vec<f64>> {
        match self {
            ControlSet::Finite(list) => list.clone(),
            ControlSet::Box { lo, hi, samples } => {
                let mut out = Vec::with_capacity(self.len());
                let dim = lo.len();
                let mut idx = vec![0usize; dim];
                loop {
                    out.push(
                        (0..dim)
                            .map(|d| Self::axis_value(lo[d], hi[d], samples[d], idx[d]))
                            .collect(),
                    );
                    // odometer with the last axis fastest
                    let mut d = dim;
                    loop {
                        if d == 0 {
                            return out;
                        }
                        d -= 1;
                        idx[d] += 1;
                        if idx[d] < samples[d] {
                            break;
                        }
                        idx[d] = 0;
                    }
                }
            }
        }
    }

    /// Membership: exact for finite sets, bounds check for boxes.
    pub fn contains(&self, v: &[f64]) -> bool {
        match self {
            ControlSet::Finite(list) => list.iter().any(|c| c.as_slice() == v),
            ControlSet::Box { lo, hi, .. } => {
                v.len() == lo.len()
                    && v.iter()
                        .zip(lo.iter().zip(hi))
                        .all(|(x, (l, h))| *x >= *l && *x <= *h)
            }
        }
    }

    /// Same set with a different lattice density; finite sets are unchanged.
    pub fn with_samples(&self, per_axis: usize) -> ControlSet {
        match self {
            ControlSet::Finite(_) => self.clone(),
            ControlSet::Box { lo, hi, .. } => ControlSet::Box {
                lo: lo.clone(),
                hi: hi.clone(),
                samples: vec![per_axis; lo.len()],
            },
        }
    }

    /// Index of the enumerated control closest (Euclidean) to `v`; first wins ties.
    pub fn nearest_index(candidates: &[Vec<f64>], v: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in candidates.iter().enumerate() {
            let d: f64 = c.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_lattice_is_lexicographic() {
        let set = ControlSet::Box {
            lo: vec![-1.0, 0.0],
            hi: vec![1.0, 1.0],
            samples: vec![3, 2],
        };
        let pts = set.enumerate();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![-1.0, 0.0]);
        assert_eq!(pts[1], vec![-1.0, 1.0]);
        assert_eq!(pts[2], vec![0.0, 0.0]);
        assert_eq!(pts[5], vec![1.0, 1.0]);
        assert!(pts.iter().all(|p| set.contains(p)));
    }

    #[test]
    fn acceptance_lattice_hits_endpoints() {
        let set = ControlSet::Box {
            lo: vec![-4.0],
            hi: vec![4.0],
            samples: vec![81],
        };
        let pts = set.enumerate();
        assert_eq!(pts[0][0], -4.0);
        assert_eq!(pts[40][0], 0.0);
        assert_eq!(pts[80][0], 4.0);
    }

    #[test]
    fn invalid_sets() {
        assert!(ControlSet::Finite(vec![]).validate().is_err());
        let bad = ControlSet::Box {
            lo: vec![1.0],
            hi: vec![0.0],
            samples: vec![3],
        };
        assert!(bad.validate().is_err());
        let bad = ControlSet::Box {
            lo: vec![0.0],
            hi: vec![1.0],
            samples: vec![0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_shape() {
        let set: ControlSet =
            serde_json::from_str(r#"{"box": {"lo": [-4], "hi": [4], "samples": [81]}}"#).unwrap();
        assert_eq!(set.len(), 81);
        let set: ControlSet = serde_json::from_str(r#"{"finite": [[0], [1]]}"#).unwrap();
        assert_eq!(set.enumerate(), vec![vec![0.0], vec![1.0]]);
    }
}
