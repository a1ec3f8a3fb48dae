//! Fixed-step RK4 integration of mechanical systems and of synthesized
//! linear models, and the trajectory correspondence between them.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{EvalError, Expr, Tape};
use crate::geometry::MechanicalSystem;
use crate::synthesis::{LinearModel, MechanicalDiffeo, MechanicalFeedback, SynthesisError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("step size must be positive and no larger than the horizon (dt = {dt}, T = {t_end})")]
    BadGrid { dt: f64, t_end: f64 },
    #[error("initial configuration {0:?} lies outside the domain")]
    StartOutside(Vec<f64>),
    #[error("initial state has {got} entries, expected {expected}")]
    StateSize { expected: usize, got: usize },
    #[error("trajectory left the domain at t = {t} (x = {x:?})")]
    DomainExit { t: f64, x: Vec<f64>, y: Vec<f64> },
    #[error("state became non-finite at t = {0}")]
    NonFiniteState(f64),
    #[error("beta vanished at t = {t} (x = {x:?})")]
    BetaVanished { t: f64, x: Vec<f64> },
    #[error("evaluation failed at t = {t}: {error}")]
    Eval { t: f64, error: EvalError },
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

/// The new input `ũ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSignal {
    Zero,
    /// `a sin(w t)`.
    Sine { a: f64, w: f64 },
    /// Piecewise-cubic Hermite interpolation through `(t, u)` samples with
    /// finite-difference slopes; constant beyond the ends.
    Table { t: Vec<f64>, u: Vec<f64> },
}

impl ControlSignal {
    pub fn table(t: Vec<f64>, u: Vec<f64>) -> Option<ControlSignal> {
        let ok = t.len() >= 2 && t.len() == u.len() && t.windows(2).all(|w| w[1] > w[0]);
        ok.then_some(ControlSignal::Table { t, u })
    }

    pub fn eval(&self, time: f64) -> f64 {
        match self {
            ControlSignal::Zero => 0.0,
            ControlSignal::Sine { a, w } => a * (w * time).sin(),
            ControlSignal::Table { t, u } => {
                let last = t.len() - 1;
                if time <= t[0] {
                    return u[0];
                }
                if time >= t[last] {
                    return u[last];
                }
                let i = t.partition_point(|&k| k <= time) - 1;
                let slope = |k: usize| {
                    let (a, b) = (k.saturating_sub(1), (k + 1).min(last));
                    (u[b] - u[a]) / (t[b] - t[a])
                };
                let h = t[i + 1] - t[i];
                let s = (time - t[i]) / h;
                let (s2, s3) = (s * s, s * s * s);
                (2.0 * s3 - 3.0 * s2 + 1.0) * u[i]
                    + (s3 - 2.0 * s2 + s) * h * slope(i)
                    + (-2.0 * s3 + 3.0 * s2) * u[i + 1]
                    + (s3 - s2) * h * slope(i + 1)
            }
        }
    }
}

/// Input applied to the original system.
pub trait Control {
    fn value(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64, SimError>;
}

impl Control for ControlSignal {
    fn value(&self, t: f64, _x: &[f64], _y: &[f64]) -> Result<f64, SimError> {
        Ok(self.eval(t))
    }
}

/// `u = γ_jk(x) y^j y^k + α(x) + β(x) ũ(t)`.
pub struct ClosedLoop<'a> {
    tape: Tape,
    n: usize,
    utilde: &'a ControlSignal,
}

impl ClosedLoop<'_> {
    /// Values `(α, β, γ)` at `x`.
    fn terms(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, SimError> {
        self.tape.eval(x).map_err(|error| SimError::Eval { t, error })
    }
}

pub fn closed_loop<'a>(
    sys: &MechanicalSystem,
    feedback: &MechanicalFeedback,
    utilde: &'a ControlSignal,
) -> Result<ClosedLoop<'a>, SimError> {
    let mut flat: Vec<Expr> = vec![feedback.alpha.clone(), feedback.beta.clone()];
    flat.extend(feedback.gamma.iter().flatten().cloned());
    let tape = Tape::compile(&flat, sys.params()).map_err(|error| SimError::Eval { t: 0.0, error })?;
    Ok(ClosedLoop { tape, n: sys.n(), utilde })
}

impl Control for ClosedLoop<'_> {
    fn value(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64, SimError> {
        let v = self.terms(t, x)?;
        let (alpha, beta) = (v[0], v[1]);
        if !(beta.abs() > 0.0) || !beta.is_finite() {
            return Err(SimError::BetaVanished { t, x: x.to_vec() });
        }
        let n = self.n;
        let mut quad = 0.0;
        for j in 0..n {
            for k in 0..n {
                quad += v[2 + j * n + k] * y[j] * y[k];
            }
        }
        Ok(quad + alpha + beta * self.utilde.eval(t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// Input applied at each grid point.
    pub input: Vec<f64>,
}

impl Trajectory {
    /// CSV with header `t,x1..xn,y1..yn,u`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.x.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("y{i}")));
        header.push("u".into());
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.times.len() {
            let mut row = vec![format!("{:.16e}", self.times[k])];
            row.extend(self.x[k].iter().map(|v| format!("{v:.16e}")));
            row.extend(self.y[k].iter().map(|v| format!("{v:.16e}")));
            row.push(format!("{:.16e}", self.input[k]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn grid(t_end: f64, dt: f64) -> Result<usize, SimError> {
    if !(dt > 0.0) || !dt.is_finite() || !(t_end >= dt) || !t_end.is_finite() {
        return Err(SimError::BadGrid { dt, t_end });
    }
    Ok((t_end / dt).round() as usize)
}

fn kahan(sum: &mut f64, carry: &mut f64, term: f64) {
    let t = term - *carry;
    let next = *sum + t;
    *carry = (next - *sum) - t;
    *sum = next;
}

/// Generic fixed-step RK4 on `(x, y)` with acceleration `acc(t, x, y)`.
fn rk4<F>(
    x0: &[f64],
    y0: &[f64],
    steps: usize,
    dt: f64,
    mut acc: F,
    inside: &dyn Fn(&[f64]) -> bool,
    input: &dyn Fn(f64, &[f64], &[f64]) -> Result<f64, SimError>,
) -> Result<Trajectory, SimError>
where
    F: FnMut(f64, &[f64], &[f64]) -> Result<Vec<f64>, SimError>,
{
    let n = x0.len();
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        input: Vec::with_capacity(steps + 1),
    };
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    // compensated summation keeps the round-off floor below the truncation error
    let (mut cx, mut cy) = (vec![0.0; n], vec![0.0; n]);
    let axpy = |a: &[f64], h: f64, d: &[f64]| -> Vec<f64> { a.iter().zip(d).map(|(p, q)| p + h * q).collect() };
    for k in 0..=steps {
        let t = k as f64 * dt;
        traj.times.push(t);
        traj.input.push(input(t, &x, &y)?);
        traj.x.push(x.clone());
        traj.y.push(y.clone());
        if k == steps {
            break;
        }
        let a1 = acc(t, &x, &y)?;
        let (x2, y2) = (axpy(&x, 0.5 * dt, &y), axpy(&y, 0.5 * dt, &a1));
        let a2 = acc(t + 0.5 * dt, &x2, &y2)?;
        let (x3, y3) = (axpy(&x, 0.5 * dt, &y2), axpy(&y, 0.5 * dt, &a2));
        let a3 = acc(t + 0.5 * dt, &x3, &y3)?;
        let (x4, y4) = (axpy(&x, dt, &y3), axpy(&y, dt, &a3));
        let a4 = acc(t + dt, &x4, &y4)?;
        for i in 0..n {
            kahan(&mut x[i], &mut cx[i], dt / 6.0 * (y[i] + 2.0 * y2[i] + 2.0 * y3[i] + y4[i]));
            kahan(&mut y[i], &mut cy[i], dt / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]));
        }
        let t_next = t + dt;
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteState(t_next));
        }
        if !inside(&x) {
            return Err(SimError::DomainExit { t: t_next, x, y });
        }
    }
    Ok(traj)
}

/// Integrate `ẋ = y`, `ẏ^i = −Γ^i_jk y^j y^k + e^i + g^i u` from `(x0, y0)`
/// over `[0, T]` with step `dt`.
pub fn integrate(
    sys: &MechanicalSystem,
    x0: &[f64],
    y0: &[f64],
    control: &dyn Control,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, SimError> {
    let n = sys.n();
    let steps = grid(t_end, dt)?;
    for v in [x0, y0] {
        if v.len() != n {
            return Err(SimError::StateSize { expected: n, got: v.len() });
        }
    }
    if !sys.domain().contains(x0) {
        return Err(SimError::StartOutside(x0.to_vec()));
    }
    let entries: Vec<(usize, usize, usize)> = sys.gamma_entries().keys().copied().collect();
    let mut flat: Vec<Expr> = sys.gamma_entries().values().cloned().collect();
    flat.extend(sys.e().0.iter().cloned());
    flat.extend(sys.g().0.iter().cloned());
    let tape = Tape::compile(&flat, sys.params()).map_err(|error| SimError::Eval { t: 0.0, error })?;
    let m = entries.len();
    let acc = |t: f64, x: &[f64], y: &[f64]| -> Result<Vec<f64>, SimError> {
        let v = tape.eval(x).map_err(|error| SimError::Eval { t, error })?;
        let u = control.value(t, x, y)?;
        let mut a: Vec<f64> = (0..n).map(|i| v[m + i] + v[m + n + i] * u).collect();
        for (slot, &(i, j, k)) in entries.iter().enumerate() {
            let w = if j == k { y[j] * y[k] } else { 2.0 * y[j] * y[k] };
            a[i] -= v[slot] * w;
        }
        Ok(a)
    };
    let inside = |x: &[f64]| sys.domain().contains(x);
    let input = |t: f64, x: &[f64], y: &[f64]| control.value(t, x, y);
    rk4(x0, y0, steps, dt, acc, &inside, &input)
}

/// Integrate `ẍ̃ = E (x̃ + offset) + b ũ(t)`.
pub fn integrate_linear(
    model: &LinearModel,
    x0: &[f64],
    y0: &[f64],
    utilde: &ControlSignal,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, SimError> {
    let n = model.b.len();
    let steps = grid(t_end, dt)?;
    for v in [x0, y0] {
        if v.len() != n {
            return Err(SimError::StateSize { expected: n, got: v.len() });
        }
    }
    let e: &DMatrix<f64> = &model.e;
    let acc = |t: f64, x: &[f64], _y: &[f64]| -> Result<Vec<f64>, SimError> {
        let xs = DVector::from_column_slice(x) + &model.offset;
        let a = e * xs + &model.b * utilde.eval(t);
        Ok(a.iter().copied().collect())
    };
    let inside = |_: &[f64]| true;
    let input = |t: f64, _: &[f64], _: &[f64]| Ok(utilde.eval(t));
    rk4(x0, y0, steps, dt, acc, &inside, &input)
}

/// Outcome of running both sides of the commuting diagram.
#[derive(Debug, Clone)]
pub struct Correspondence {
    /// `sup_t ‖Φ(z(t)) − z̃(t)‖∞`.
    pub error: f64,
    /// `sup_t ‖φ(x(t)) − x̃(t)‖∞`.
    pub configuration_error: f64,
    pub original: Trajectory,
    pub linear: Trajectory,
}

/// Integrate the original system under the synthesized feedback and the
/// linear model from the mapped initial state, then compare on the grid.
#[allow(clippy::too_many_arguments)]
pub fn correspondence_error(
    sys: &MechanicalSystem,
    model: &LinearModel,
    diffeo: &MechanicalDiffeo,
    feedback: &MechanicalFeedback,
    x0: &[f64],
    y0: &[f64],
    utilde: &ControlSignal,
    t_end: f64,
    dt: f64,
) -> Result<Correspondence, SimError> {
    let p = sys.params();
    let control = closed_loop(sys, feedback, utilde)?;
    let original = integrate(sys, x0, y0, &control, t_end, dt)?;
    let (xt0, yt0) = model.state_of(diffeo, x0, y0, p)?;
    let linear = integrate_linear(model, &xt0, &yt0, utilde, t_end, dt)?;
    let mut error: f64 = 0.0;
    let mut configuration_error: f64 = 0.0;
    for k in 0..original.times.len() {
        let (xm, ym) = model.state_of(diffeo, &original.x[k], &original.y[k], p)?;
        let dx = xm.iter().zip(&linear.x[k]).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        let dy = ym.iter().zip(&linear.y[k]).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
        configuration_error = configuration_error.max(dx);
        error = error.max(dx.max(dy));
    }
    Ok(Correspondence { error, configuration_error, original, linear })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Params;
    use crate::geometry::VectorFieldSym;
    use crate::sampling::Domain;

    fn free(n: usize) -> MechanicalSystem {
        MechanicalSystem::new(
            n,
            vec![],
            VectorFieldSym::zero(n),
            VectorFieldSym::coordinate(n, 0),
            Domain::from_bounds(&vec![(-10.0, 10.0); n]).unwrap(),
            Params::new(),
        )
        .unwrap()
    }

    #[test]
    fn free_motion_is_exact() {
        let sys = free(2);
        let tr = integrate(&sys, &[0.5, -1.0], &[0.3, 2.0], &ControlSignal::Zero, 1.0, 0.01).unwrap();
        let k = tr.times.len() - 1;
        assert_eq!(tr.times.len(), 101);
        assert!((tr.x[k][0] - 0.8).abs() < 1e-13 && (tr.x[k][1] - 1.0).abs() < 1e-13);
        assert!(tr.input.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn rejects_bad_grid_and_exit() {
        let sys = free(2);
        let z = ControlSignal::Zero;
        assert!(matches!(integrate(&sys, &[0.0; 2], &[0.0; 2], &z, 1.0, 0.0), Err(SimError::BadGrid { .. })));
        assert!(matches!(integrate(&sys, &[0.0; 2], &[0.0; 2], &z, 0.001, 0.01), Err(SimError::BadGrid { .. })));
        assert!(matches!(integrate(&sys, &[11.0, 0.0], &[0.0; 2], &z, 1.0, 0.1), Err(SimError::StartOutside(_))));
        match integrate(&sys, &[9.0, 0.0], &[5.0, 0.0], &z, 1.0, 0.1) {
            Err(SimError::DomainExit { t, .. }) => assert!((t - 0.3).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_signal_interpolates() {
        let s = ControlSignal::table(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 4.0, 9.0]).unwrap();
        assert_eq!(s.eval(1.0), 1.0);
        assert_eq!(s.eval(-1.0), 0.0);
        assert_eq!(s.eval(5.0), 9.0);
        assert!((s.eval(1.5) - 2.25).abs() < 0.2);
        assert!(ControlSignal::table(vec![0.0, 0.0], vec![1.0, 1.0]).is_none());
    }

    #[test]
    fn identity_wrapper() {
        let sys = free(2);
        let sig = ControlSignal::Sine { a: 0.5, w: 2.0 };
        let cl = closed_loop(&sys, &MechanicalFeedback::identity(2), &sig).unwrap();
        for t in [0.0, 0.3, 1.7] {
            assert_eq!(cl.value(t, &[0.1, 0.2], &[3.0, -1.0]).unwrap(), sig.eval(t));
        }
    }

    #[test]
    fn csv_layout() {
        let sys = free(2);
        let tr = integrate(&sys, &[0.0; 2], &[1.0, 0.0], &ControlSignal::Zero, 0.2, 0.1).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,x2,y1,y2,u");
        assert_eq!(lines.len(), 4);
        let last: Vec<f64> = lines[3].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(last.len(), 6);
        assert!((last[1] - 0.2).abs() < 1e-15);
        assert!(lines[1].starts_with("0.0000000000000000e0,"));
    }
}
