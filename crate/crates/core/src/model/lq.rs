use nalgebra::DMatrix;

use super::system::{
    validate_system, ControlsSpec, CostSpec, CostsSpec, HybridSystem, ImpulseCoupling, ImpulseSpec,
    SystemSpec, ValidationErrors,
};
use crate::expr::indexed_names;
use crate::riccati::{Entry, LqImpulse, LqSystem, TimeMatrix};

/// Signed terms of a generated sum.
#[derive(Default)]
struct Sum {
    terms: Vec<(bool, String)>,
}

impl Sum {
    fn push_const(&mut self, c: f64, factors: &[&str]) {
        if c == 0.0 {
            return;
        }
        let mag = c.abs();
        let body = match (factors.is_empty(), mag == 1.0) {
            (true, _) => format!("{mag}"),
            (false, true) => factors.join("*"),
            (false, false) => format!("{mag}*{}", factors.join("*")),
        };
        self.terms.push((c < 0.0, body));
    }

    fn push_entry(&mut self, entry: &Entry, scale: f64, factors: &[&str]) {
        match entry {
            Entry::Const(c) => self.push_const(c * scale, factors),
            Entry::Expr(e) if e.is_zero() => {}
            Entry::Expr(e) => {
                let mut parts = Vec::with_capacity(factors.len() + 2);
                if scale != 1.0 {
                    parts.push(format!("{scale}"));
                }
                parts.push(format!("({e})"));
                parts.extend(factors.iter().map(|s| s.to_string()));
                self.terms.push((false, parts.join("*")));
            }
        }
    }

    /// `e1*f + e2*f`, folded when both entries are constants.
    fn push_pair(&mut self, e1: &Entry, e2: &Entry, scale: f64, factors: &[&str]) {
        match (e1, e2) {
            (Entry::Const(a), Entry::Const(b)) => self.push_const((a + b) * scale, factors),
            _ => {
                self.push_entry(e1, scale, factors);
                self.push_entry(e2, scale, factors);
            }
        }
    }

    fn append(&mut self, other: Sum) {
        self.terms.extend(other.terms);
    }

    fn render(&self) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        let mut out = String::new();
        for (k, (neg, body)) in self.terms.iter().enumerate() {
            match (k, neg) {
                (0, true) => out.push('-'),
                (0, false) => {}
                (_, true) => out.push_str(" - "),
                (_, false) => out.push_str(" + "),
            }
            out.push_str(body);
        }
        out
    }
}

fn entries(m: &DMatrix<f64>) -> TimeMatrix {
    TimeMatrix::constant(m)
}

/// `vᵀ S v` for a square matrix.
fn quadratic(m: &TimeMatrix, v: &[String]) -> Sum {
    let mut s = Sum::default();
    for i in 0..v.len() {
        s.push_entry(m.entry(i, i), 1.0, &[&v[i], &v[i]]);
        for j in i + 1..v.len() {
            s.push_pair(m.entry(i, j), m.entry(j, i), 1.0, &[&v[i], &v[j]]);
        }
    }
    s
}

/// `2 vᵀ S r`.
fn bilinear(m: &TimeMatrix, v: &[String], r: &[String]) -> Sum {
    let mut s = Sum::default();
    for (i, vi) in v.iter().enumerate() {
        for (j, rj) in r.iter().enumerate() {
            s.push_entry(m.entry(i, j), 2.0, &[vi, rj]);
        }
    }
    s
}

/// Row `i` of `S v`.
fn linear_row(m: &TimeMatrix, i: usize, v: &[String]) -> Sum {
    let mut s = Sum::default();
    for (j, vj) in v.iter().enumerate() {
        s.push_entry(m.entry(i, j), 1.0, &[vj]);
    }
    s
}

fn same_jump(a: &LqImpulse, b: &LqImpulse) -> bool {
    a.m == b.m && a.n == b.n && a.alpha == b.alpha && a.beta == b.beta && a.gamma == b.gamma
}

/// Indicator expressions picking impulse `k` among those at `taus`, switching
/// halfway between consecutive impulse times.
fn selectors(taus: &[f64]) -> Vec<String> {
    let mids: Vec<f64> = taus.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    (0..taus.len())
        .map(|k| {
            let on = (k > 0).then(|| format!("step(t - {})", mids[k - 1]));
            let off = (k + 1 < taus.len()).then(|| format!("step(t - {})", mids[k]));
            match (on, off) {
                (None, None) => "1".to_string(),
                (None, Some(off)) => format!("(1 - {off})"),
                (Some(on), None) => on,
                (Some(on), Some(off)) => format!("({on} - {off})"),
            }
        })
        .collect()
}

/// Writes a linear-quadratic problem as general expressions:
/// `f = P x + Q u`, `I = M x + N w`, `F = xᵀAx + 2xᵀBu + uᵀCu`,
/// `Φ = xᵀαx + 2xᵀβw + wᵀγw`, `F0 = xᵀA₀x`.
///
/// Impulses with differing matrices are distinguished through `step(t - ·)`
/// selectors in `t`.
pub fn lq_to_general(lq: &LqSystem) -> Result<(HybridSystem, CostSpec), ValidationErrors> {
    let xs = indexed_names("x", lq.n);
    let us = indexed_names("u", lq.mu);
    let ws = indexed_names("w", lq.mw);

    let f: Vec<String> = (0..lq.n)
        .map(|i| {
            let mut s = linear_row(&lq.p, i, &xs);
            s.append(linear_row(&lq.q, i, &us));
            s.render()
        })
        .collect();

    let jump_rows = |imp: &LqImpulse| -> (Vec<String>, String) {
        let rows = (0..lq.n)
            .map(|i| {
                let mut s = linear_row(&entries(&imp.m), i, &xs);
                s.append(linear_row(&entries(&imp.n), i, &ws));
                s.render()
            })
            .collect();
        let mut phi = quadratic(&entries(&imp.alpha), &xs);
        phi.append(bilinear(&entries(&imp.beta), &xs, &ws));
        phi.append(quadratic(&entries(&imp.gamma), &ws));
        (rows, phi.render())
    };

    let (map, phi) = match lq.impulses.as_slice() {
        [] => (vec!["0".to_string(); lq.n], "0".to_string()),
        [first, rest @ ..] if rest.iter().all(|r| same_jump(first, r)) => jump_rows(first),
        all => {
            let sel = selectors(&lq.impulse_times());
            let parts: Vec<(Vec<String>, String)> = all.iter().map(jump_rows).collect();
            let gate = |k: usize, body: &str| format!("{}*({body})", sel[k]);
            let map = (0..lq.n)
                .map(|i| {
                    parts
                        .iter()
                        .enumerate()
                        .map(|(k, (rows, _))| gate(k, &rows[i]))
                        .collect::<Vec<_>>()
                        .join(" + ")
                })
                .collect();
            let phi = parts
                .iter()
                .enumerate()
                .map(|(k, (_, phi))| gate(k, phi))
                .collect::<Vec<_>>()
                .join(" + ");
            (map, phi)
        }
    };

    let mut running = quadratic(&lq.a, &xs);
    running.append(bilinear(&lq.b, &xs, &us));
    running.append(quadratic(&lq.c, &us));
    let terminal = quadratic(&entries(&lq.a0), &xs);

    let spec = SystemSpec {
        n: lq.n,
        f,
        impulse: ImpulseSpec {
            times: Some(lq.impulse_times()),
            surface: None,
            map,
            coupling: ImpulseCoupling::Plain,
            initial_b: None,
        },
        controls: ControlsSpec {
            u: lq.u_set.clone(),
            w: lq.w_set.clone(),
        },
    };
    let costs = CostsSpec {
        running: running.render(),
        impulse: phi,
        terminal: terminal.render(),
    };
    validate_system(&spec, &costs, lq.horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ControlSet;
    use crate::riccati::CrossTerm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_lq() -> LqSystem {
        LqSystem {
            n: 1,
            mu: 1,
            mw: 1,
            p: TimeMatrix::zeros(1, 1),
            q: TimeMatrix::constant(&scalar(1.0)),
            a: TimeMatrix::zeros(1, 1),
            b: TimeMatrix::zeros(1, 1),
            c: TimeMatrix::constant(&scalar(1.0)),
            a0: scalar(1.0),
            impulses: vec![],
            horizon: 1.0,
            cross_term: CrossTerm::Full,
            u_set: ControlSet::Finite(vec![vec![0.0]]),
            w_set: ControlSet::Finite(vec![vec![0.0]]),
        }
    }

    #[test]
    fn scalar_strings_and_values() {
        let (sys, costs) = lq_to_general(&scalar_lq()).unwrap();
        assert_eq!(sys.f[0].to_string(), "u1");
        assert_eq!(costs.running.to_string(), "u1*u1");
        assert_eq!(costs.terminal.to_string(), "x1*x1");
        assert_eq!(sys.f[0].eval(&[0.0, 2.0, 3.0]).unwrap(), 3.0);
        assert_eq!(costs.running.eval(&[0.0, 2.0, 3.0]).unwrap(), 9.0);
        assert_eq!(costs.terminal.eval(&[2.0]).unwrap(), 4.0);
    }

    #[test]
    fn zero_matrices_give_zero() {
        let mut lq = scalar_lq();
        lq.q = TimeMatrix::zeros(1, 1);
        lq.c = TimeMatrix::zeros(1, 1);
        lq.a0 = scalar(0.0);
        let (sys, costs) = lq_to_general(&lq).unwrap();
        assert!(sys.f[0].is_zero());
        assert!(costs.running.is_zero());
        assert!(costs.terminal.is_zero());
        assert!(costs.impulse.is_zero());
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-2.0..2.0))
    }

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let m = random_matrix(rng, n, n);
        (&m + m.transpose()) * 0.5
    }

    fn quad(m: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
        (v.transpose() * m * v)[(0, 0)]
    }

    #[test]
    fn random_instances_match_matrix_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 2;
        let imp = |rng: &mut ChaCha8Rng, tau: f64| LqImpulse {
            tau,
            m: random_matrix(rng, n, n),
            n: random_matrix(rng, n, n),
            alpha: random_sym(rng, n),
            beta: random_matrix(rng, n, n),
            gamma: random_sym(rng, n),
        };
        let p = random_matrix(&mut rng, n, n);
        let q = random_matrix(&mut rng, n, n);
        let a = random_sym(&mut rng, n);
        let b = random_matrix(&mut rng, n, n);
        let c = random_sym(&mut rng, n);
        let a0 = random_sym(&mut rng, n);
        let impulses = vec![imp(&mut rng, 0.3), imp(&mut rng, 0.6)];
        let set = ControlSet::Finite(vec![vec![0.0; n]]);
        let lq = LqSystem {
            n,
            mu: n,
            mw: n,
            p: TimeMatrix::constant(&p),
            q: TimeMatrix::constant(&q),
            a: TimeMatrix::constant(&a),
            b: TimeMatrix::constant(&b),
            c: TimeMatrix::constant(&c),
            a0: a0.clone(),
            impulses: impulses.clone(),
            horizon: 1.0,
            cross_term: CrossTerm::Full,
            u_set: set.clone(),
            w_set: set,
        };
        let (sys, costs) = lq_to_general(&lq).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = random_matrix(&mut rng, n, 1);
            let u = random_matrix(&mut rng, n, 1);
            let t = rng.gen_range(0.0..1.0);
            let args: Vec<f64> = std::iter::once(t).chain(x.iter().copied()).chain(u.iter().copied()).collect();
            let fx = &p * &x + &q * &u;
            for i in 0..n {
                worst = worst.max((sys.f[i].eval(&args).unwrap() - fx[i]).abs());
            }
            let running = quad(&a, &x) + 2.0 * (x.transpose() * &b * &u)[(0, 0)] + quad(&c, &u);
            worst = worst.max((costs.running.eval(&args).unwrap() - running).abs());
            worst = worst.max((costs.terminal.eval(x.as_slice()).unwrap() - quad(&a0, &x)).abs());
            for imp in &impulses {
                let args: Vec<f64> = std::iter::once(imp.tau)
                    .chain(x.iter().copied())
                    .chain(u.iter().copied())
                    .collect();
                let jump = &imp.m * &x + &imp.n * &u;
                for i in 0..n {
                    worst = worst.max((sys.impulse[i].eval(&args).unwrap() - jump[i]).abs());
                }
                let phi = quad(&imp.alpha, &x)
                    + 2.0 * (x.transpose() * &imp.beta * &u)[(0, 0)]
                    + quad(&imp.gamma, &u);
                worst = worst.max((costs.impulse.eval(&args).unwrap() - phi).abs());
            }
        }
        assert!(worst <= 1e-12, "max abs diff {worst}");
    }
}
