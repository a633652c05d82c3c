//! CSV writers for trajectories, value functions, policies, costates,
//! extremum reports and Riccati solutions, plus a trajectory reader.
//!
//! Floats are written with 17 significant digits, so they read back
//! bit-exactly; lines end in LF.

use std::io::{Read, Write};

use thiserror::Error;

use crate::hjb::{Policy, ValueFunction, Variant};
use crate::mesh::Side;
use crate::model::{HybridSystem, ImpulseCoupling};
use crate::pmp::{CostatePath, ExtremumReport};
use crate::riccati::RiccatiSolution;
use crate::sim::{JumpRecord, Trajectory};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Format { line: u64, message: String },
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

struct Row(Vec<String>);

impl Row {
    fn new() -> Self {
        Row(Vec::new())
    }
    fn text(mut self, s: &str) -> Self {
        self.0.push(s.to_string());
        self
    }
    fn num(mut self, v: f64) -> Self {
        self.0.push(fmt_f64(v));
        self
    }
    fn nums(mut self, vs: &[f64]) -> Self {
        self.0.extend(vs.iter().map(|&v| fmt_f64(v)));
        self
    }
    fn blanks(mut self, n: usize) -> Self {
        self.0.extend(std::iter::repeat_n(String::new(), n));
        self
    }
    fn maybe(self, vs: Option<&[f64]>, n: usize) -> Self {
        match vs {
            Some(v) => self.nums(v),
            None => self.blanks(n),
        }
    }
}

fn extra_prefix(coupling: ImpulseCoupling) -> &'static str {
    match coupling {
        ImpulseCoupling::ControlLeftLimit => "a",
        _ => "b",
    }
}

/// Columns `t, side, x.., u.., jump, w.., a..|b..`. Impulse times have a
/// `-` and a `+` row, both with `jump = 1` and the applied impulse control.
pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory, sys: &HybridSystem) -> Result<(), ExportError> {
    let mut w = writer(out);
    let extra = sys.extra_dim();
    let mut header = vec!["t".to_string(), "side".to_string()];
    header.extend(names("x", traj.n));
    header.extend(names("u", traj.mu));
    header.push("jump".into());
    header.extend(names("w", sys.mw));
    header.extend(names(extra_prefix(sys.coupling), extra));
    w.write_record(&header)?;
    let mut jumps = traj.jumps.iter().peekable();
    for i in 0..traj.len() {
        let rec = match traj.sides[i] {
            Side::Minus => jumps.peek().copied().filter(|r| r.row == i),
            Side::Plus => jumps.next_if(|r| r.row + 1 == i),
            Side::Regular => None,
        };
        let row = Row::new()
            .num(traj.times[i])
            .text(&traj.sides[i].symbol().to_string())
            .nums(&traj.states[i])
            .nums(&traj.controls[i])
            .text(if rec.is_some() { "1" } else { "0" })
            .maybe(rec.map(|r| r.w.as_slice()), sys.mw)
            .maybe(rec.map(|r| r.extra.as_slice()), extra);
        w.write_record(&row.0)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_num(s: &str, line: u64) -> Result<f64, ExportError> {
    s.trim().parse().map_err(|_| ExportError::Format {
        line,
        message: format!("not a number: {s:?}"),
    })
}

/// Reads a CSV written by [`write_trajectory`].
pub fn read_trajectory<R: Read>(input: R) -> Result<Trajectory, ExportError> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    let header = r.headers()?.clone();
    let count = |p: char| {
        header
            .iter()
            .filter(|h| h.starts_with(p) && h[1..].parse::<usize>().is_ok())
            .count()
    };
    let (n, mu, mw) = (count('x'), count('u'), count('w'));
    let extra = count('a') + count('b');
    let expected = 2 + n + mu + 1 + mw + extra;
    if header.len() != expected || &header[0] != "t" || &header[1] != "side" {
        return Err(ExportError::Format {
            line: 1,
            message: "unrecognized trajectory header".into(),
        });
    }
    let mut traj = Trajectory::new(n, mu);
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let nums = |range: std::ops::Range<usize>| -> Result<Vec<f64>, ExportError> {
            range.map(|k| parse_num(&rec[k], line)).collect()
        };
        let t = parse_num(&rec[0], line)?;
        let side = rec[1]
            .chars()
            .next()
            .and_then(Side::from_symbol)
            .ok_or_else(|| ExportError::Format {
                line,
                message: format!("bad side {:?}", &rec[1]),
            })?;
        let x = nums(2..2 + n)?;
        let u = nums(2 + n..2 + n + mu)?;
        let jump = &rec[2 + n + mu] == "1";
        let row = traj.len();
        if jump && side == Side::Plus {
            let prev = row.checked_sub(1).filter(|&p| traj.sides[p] == Side::Minus).ok_or_else(|| {
                ExportError::Format {
                    line,
                    message: "jump `+` row without a `-` row".into(),
                }
            })?;
            let base = 3 + n + mu;
            traj.jumps.push(JumpRecord {
                t,
                row: prev,
                x_minus: traj.states[prev].clone(),
                x_plus: x.clone(),
                w: nums(base..base + mw)?,
                extra: nums(base + mw..base + mw + extra)?,
            });
        }
        traj.times.push(t);
        traj.sides.push(side);
        traj.states.push(x);
        traj.controls.push(u);
    }
    Ok(traj)
}

fn layer_prefix(vf: &ValueFunction) -> (&'static str, usize) {
    match vf.variant {
        Variant::Basic => ("", 0),
        Variant::Parametrized => ("a", vf.a_values.first().map_or(0, Vec::len)),
        Variant::Aftereffect => ("b", vf.layer_params.first().map_or(0, Vec::len)),
    }
}

/// Whether slice `i` of `len` is exported at the given stride.
pub fn keep_slice(i: usize, len: usize, side: Side, stride: usize) -> bool {
    i % stride.max(1) == 0 || i + 1 == len || side != Side::Regular
}

/// Columns `s, side, x.., [a..|b..], V`. Every `stride`-th slice is written,
/// plus impulse slices and the last one. Aftereffect values have one row per
/// node and layer `b`; parametrized `-` slices add one row per node and
/// sampled `a`, the `a`-less rows being the envelope.
pub fn write_value_function<W: Write>(out: W, vf: &ValueFunction, stride: usize) -> Result<(), ExportError> {
    let mut w = writer(out);
    let g = &vf.grid;
    let (prefix, pdim) = layer_prefix(vf);
    let mut header = vec!["s".to_string(), "side".to_string()];
    header.extend(names("x", g.dim()));
    header.extend(names(prefix, pdim));
    header.push("V".into());
    w.write_record(&header)?;
    let mut x = vec![0.0; g.dim()];
    for (i, sl) in vf.slices.iter().enumerate() {
        if !keep_slice(i, vf.slices.len(), sl.side, stride) {
            continue;
        }
        let side = sl.side.symbol().to_string();
        let mut emit = |values: &[f64], param: Option<&[f64]>| -> Result<(), ExportError> {
            for (k, v) in values.iter().enumerate() {
                g.node_into(k, &mut x);
                let row = Row::new().num(sl.s).text(&side).nums(&x).maybe(param, pdim).num(*v);
                w.write_record(&row.0)?;
            }
            Ok(())
        };
        match vf.variant {
            Variant::Aftereffect => {
                for (l, values) in sl.layers.iter().enumerate() {
                    emit(values, Some(&vf.layer_params[l]))?;
                }
            }
            _ => {
                emit(&sl.layers[0], None)?;
                for (a, values) in vf.a_values.iter().zip(&sl.per_a) {
                    emit(values, Some(a))?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns `s, side, x.., [a..|b..], u.., w..`. Step rows (side `.` or `+`)
/// carry the minimizing `u` from `s` to the next step; impulse rows (side
/// `-`) carry the minimizing `w`. For the parametrized variant, impulse
/// rows without `a` give the minimizing `a` in the `u` columns.
pub fn write_policy<W: Write>(out: W, pol: &Policy, stride: usize) -> Result<(), ExportError> {
    let mut w = writer(out);
    let g = &pol.grid;
    let mu = pol.u_candidates.first().map_or(0, Vec::len);
    let mw = pol.w_candidates.first().map_or(0, Vec::len);
    let (prefix, pdim) = match pol.variant {
        Variant::Basic => ("", 0),
        Variant::Parametrized => ("a", mu),
        Variant::Aftereffect => ("b", mw),
    };
    let mut header = vec!["s".to_string(), "side".to_string()];
    header.extend(names("x", g.dim()));
    header.extend(names(prefix, pdim));
    header.extend(names("u", mu));
    header.extend(names("w", mw));
    w.write_record(&header)?;
    let param = |l: usize| -> Option<&[f64]> {
        match pol.variant {
            Variant::Basic => None,
            Variant::Parametrized => Some(&pol.u_candidates[l]),
            Variant::Aftereffect => Some(&pol.w_candidates[l]),
        }
    };
    let mut x = vec![0.0; g.dim()];
    let mut impulses = pol.impulses.iter().peekable();
    for (i, st) in pol.steps.iter().enumerate() {
        while let Some(imp) = impulses.next_if(|imp| imp.tau <= st.t0 + 1e-12 * st.t1.abs().max(1.0)) {
            for (l, ws) in imp.w.iter().enumerate() {
                for (k, &wi) in ws.iter().enumerate() {
                    g.node_into(k, &mut x);
                    let row = Row::new()
                        .num(imp.tau)
                        .text("-")
                        .nums(&x)
                        .maybe(param(l), pdim)
                        .blanks(mu)
                        .nums(&pol.w_candidates[wi as usize]);
                    w.write_record(&row.0)?;
                }
            }
            if let Some(a) = &imp.a {
                for (k, &ai) in a.iter().enumerate() {
                    g.node_into(k, &mut x);
                    let wi = imp.w[ai as usize][k];
                    let row = Row::new()
                        .num(imp.tau)
                        .text("-")
                        .nums(&x)
                        .blanks(pdim)
                        .nums(&pol.u_candidates[ai as usize])
                        .nums(&pol.w_candidates[wi as usize]);
                    w.write_record(&row.0)?;
                }
            }
        }
        let at_impulse = pol.impulse_index(st.t0).is_some();
        if !(i % stride.max(1) == 0 || at_impulse) {
            continue;
        }
        let side = if at_impulse { "+" } else { "." };
        for (l, us) in st.u.iter().enumerate() {
            // the parametrized policy has one continuous layer
            let p = if pol.variant == Variant::Aftereffect { param(l) } else { None };
            for (k, &ui) in us.iter().enumerate() {
                g.node_into(k, &mut x);
                let row = Row::new()
                    .num(st.t0)
                    .text(side)
                    .nums(&x)
                    .maybe(p, pdim)
                    .nums(&pol.u_candidates[ui as usize])
                    .blanks(mw);
                w.write_record(&row.0)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns `s, side, p..`.
pub fn write_costate<W: Write>(out: W, cp: &CostatePath) -> Result<(), ExportError> {
    let mut w = writer(out);
    let n = cp.costates.first().map_or(0, Vec::len);
    let mut header = vec!["s".to_string(), "side".to_string()];
    header.extend(names("p", n));
    w.write_record(&header)?;
    for ((t, side), p) in cp.times.iter().zip(&cp.sides).zip(&cp.costates) {
        let row = Row::new().num(*t).text(&side.symbol().to_string()).nums(p);
        w.write_record(&row.0)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `s, kind, control.., margin`; `H` rows hold a continuous control,
/// `K` rows an impulse control, padded to the wider of the two.
pub fn write_extremum<W: Write>(out: W, report: &ExtremumReport) -> Result<(), ExportError> {
    let mut w = writer(out);
    let width = report.margins.iter().map(|m| m.control.len()).max().unwrap_or(0);
    let mut header = vec!["s".to_string(), "kind".to_string()];
    header.extend(names("control", width));
    header.push("margin".into());
    w.write_record(&header)?;
    for m in &report.margins {
        let row = Row::new()
            .num(m.s)
            .text(m.kind.symbol())
            .nums(&m.control)
            .blanks(width - m.control.len())
            .num(m.margin);
        w.write_record(&row.0)?;
    }
    w.flush()?;
    Ok(())
}

fn matrix_names(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    (1..=rows)
        .flat_map(|i| (1..=cols).map(move |j| format!("{prefix}_{i}{j}")))
        .collect()
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
        .collect()
}

/// Columns `s, side, K_11.. K_nn`, row-major.
pub fn write_riccati_path<W: Write>(out: W, sol: &RiccatiSolution) -> Result<(), ExportError> {
    let mut w = writer(out);
    let rows = sol.rows();
    let n = rows.first().map_or(0, |r| r.2.nrows());
    let mut header = vec!["s".to_string(), "side".to_string()];
    header.extend(matrix_names("K", n, n));
    w.write_record(&header)?;
    for (s, side, k) in rows {
        let row = Row::new().num(s).text(&side.symbol().to_string()).nums(&row_major(k));
        w.write_record(&row.0)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `tau_k, L_11..`, row-major.
pub fn write_gains<W: Write>(out: W, sol: &RiccatiSolution) -> Result<(), ExportError> {
    let mut w = writer(out);
    let (r, c) = sol.gains.first().map_or((0, 0), |g| g.gain.shape());
    let mut header = vec!["tau_k".to_string()];
    header.extend(matrix_names("L", r, c));
    w.write_record(&header)?;
    for g in &sol.gains {
        let row = Row::new().num(g.tau).nums(&row_major(&g.gain));
        w.write_record(&row.0)?;
    }
    w.flush()?;
    Ok(())
}
