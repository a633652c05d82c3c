//! Fixed problem instances shared by the benchmarks.

use hdp_core::hjb::Grid;
use hdp_core::model::{lq_to_general, validate_system, CostSpec, CostsSpec, HybridSystem, SystemSpec};
use hdp_core::riccati::{validate_lq, LqSpec, LqSystem};
use serde_json::json;

/// Scalar LQ problem with one impulse at 0.5.
pub fn scalar_lq(u_samples: usize, w_samples: usize) -> LqSystem {
    let spec: LqSpec = serde_json::from_value(json!({
        "n": 1, "mu": 1, "mw": 1,
        "P": [[0]], "Q": [[1]], "A": [[1]], "B": [[0]], "C": [[1]], "A0": [[1]],
        "impulses": [{"tau": 0.5, "M": [[0]], "N": [[1]], "alpha": [[0]], "beta": [[0]], "gamma": [[1]]}],
        "controls": {
            "u": {"box": {"lo": [-4.0], "hi": [4.0], "samples": [u_samples]}},
            "w": {"box": {"lo": [-4.0], "hi": [4.0], "samples": [w_samples]}}
        }
    }))
    .expect("well-formed LQ block");
    validate_lq(&spec, 1.0).expect("valid LQ problem")
}

pub fn scalar_general(u_samples: usize, w_samples: usize) -> (HybridSystem, CostSpec) {
    lq_to_general(&scalar_lq(u_samples, w_samples)).expect("LQ problems convert")
}

pub fn scalar_grid(nodes: usize, dt: f64) -> Grid {
    Grid {
        lo: vec![-2.0],
        hi: vec![2.0],
        nodes: vec![nodes],
        dt,
    }
}

/// Double integrator with three velocity kicks.
pub fn double_integrator() -> (HybridSystem, CostSpec, Grid) {
    let sys: SystemSpec = serde_json::from_value(json!({
        "n": 2,
        "f": ["x2", "u1"],
        "impulse": {"times": [0.5, 1.0, 1.5], "I": ["0", "w1"]},
        "controls": {
            "u": {"box": {"lo": [-1.0], "hi": [1.0], "samples": [5]}},
            "w": {"finite": [[-0.5], [0.0], [0.5]]}
        }
    }))
    .expect("well-formed system");
    let costs: CostsSpec = serde_json::from_value(json!({"F": "0.1*u1^2", "Phi": "0.2*abs(w1)", "F0": "x1^2 + x2^2"}))
        .expect("well-formed costs");
    let (sys, costs) = validate_system(&sys, &costs, 2.0).expect("valid system");
    let grid = Grid {
        lo: vec![-2.0, -2.0],
        hi: vec![2.0, 2.0],
        nodes: vec![41, 41],
        dt: 0.02,
    };
    (sys, costs, grid)
}
