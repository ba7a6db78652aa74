//! Ground-truth integration in the original coordinates, the mapping of
//! direct trajectories into the reduced chart, and trajectory comparison.
//!
//! The direct route never touches the reduced tensors: it integrates the
//! Euler–Lagrange equations of the ambient Lagrangian as they stand, so the
//! comparison against the reduced flow is a genuine cross-check. The same
//! fixed-step RK4 scheme is used on both sides so that discretization error
//! largely cancels in the comparison.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{AmbientState, ReducedDynamics, ReducedState};
use crate::error::Error;
use crate::fd;
use crate::linalg::max_abs_vec;
use crate::system::SystemDef;
use crate::Result;

/// Fixed-step integrator for the ambient Euler–Lagrange equations.
pub struct ReferenceIntegrator<'a> {
    sys: &'a SystemDef,
}

impl<'a> ReferenceIntegrator<'a> {
    pub fn new(sys: &'a SystemDef) -> Self {
        Self { sys }
    }

    /// Accelerations `(qddot, fddot)` of the ambient equations: the
    /// configuration sector carries the metric Christoffel term (zero for a
    /// constant metric), the multiplet metric is always constant.
    pub fn el_rhs(&self, s: &AmbientState) -> Result<(DVector<f64>, DVector<f64>)> {
        let sys = self.sys;
        let g_q_inv = sys.metric_q_inv(&s.q)?;
        let g_v_inv = sys.metric_v_inv()?;
        let (grad_q, grad_v) = sys.potential_grad(&s.q, &s.f)?;
        let mut qddot = -(&g_q_inv * grad_q);
        if !sys.metric_is_flat() {
            let n = sys.dim_q();
            let mut dg: Vec<DMatrix<f64>> = Vec::with_capacity(n);
            for j in 0..n {
                dg.push(fd::partial_matrix(
                    |x: &DVector<f64>| Ok(sys.metric_q(x)),
                    &s.q,
                    j,
                )?);
            }
            // Lowered quadratic term: Gamma_{D BC} qdot^B qdot^C.
            let mut lowered = DVector::zeros(n);
            for d in 0..n {
                let mut acc = 0.0;
                for bq in 0..n {
                    for c in 0..n {
                        let gamma = 0.5
                            * (dg[c][(d, bq)] + dg[bq][(d, c)] - dg[d][(bq, c)]);
                        acc += gamma * s.qdot[bq] * s.qdot[c];
                    }
                }
                lowered[d] = acc;
            }
            qddot -= &g_q_inv * lowered;
        }
        Ok((qddot, -(&g_v_inv * grad_v)))
    }

    /// One RK4 step.
    pub fn step(&self, s: &AmbientState, dt: f64) -> Result<AmbientState> {
        let half = 0.5 * dt;
        let (a1q, a1f) = self.el_rhs(s)?;
        let s2 = shift(s, &s.qdot, &s.fdot, &a1q, &a1f, half);
        let (a2q, a2f) = self.el_rhs(&s2)?;
        let s3 = shift(s, &s2.qdot, &s2.fdot, &a2q, &a2f, half);
        let (a3q, a3f) = self.el_rhs(&s3)?;
        let s4 = shift(s, &s3.qdot, &s3.fdot, &a3q, &a3f, dt);
        let (a4q, a4f) = self.el_rhs(&s4)?;
        let sixth = dt / 6.0;
        Ok(AmbientState {
            q: &s.q + (&s.qdot + &s2.qdot * 2.0 + &s3.qdot * 2.0 + &s4.qdot) * sixth,
            f: &s.f + (&s.fdot + &s2.fdot * 2.0 + &s3.fdot * 2.0 + &s4.fdot) * sixth,
            qdot: &s.qdot + (&a1q + &a2q * 2.0 + &a3q * 2.0 + &a4q) * sixth,
            fdot: &s.fdot + (&a1f + &a2f * 2.0 + &a3f * 2.0 + &a4f) * sixth,
        })
    }

    /// Integrate `steps` steps; the returned trajectory includes the initial
    /// state, so its length is `steps + 1`.
    pub fn integrate(&self, s0: &AmbientState, dt: f64, steps: usize) -> Result<Vec<AmbientState>> {
        let mut traj = Vec::with_capacity(steps + 1);
        traj.push(s0.clone());
        for k in 0..steps {
            let next = self.step(&traj[k], dt)?;
            traj.push(next);
        }
        Ok(traj)
    }

    /// Ambient symmetry charge `K(x)^T G xdot`.
    pub fn charge(&self, s: &AmbientState) -> DVector<f64> {
        self.sys.killing_q(&s.q).transpose() * self.sys.metric_q(&s.q) * &s.qdot
            + self.sys.killing_v(&s.f).transpose() * self.sys.metric_v() * &s.fdot
    }

    /// Ambient total energy.
    pub fn energy(&self, s: &AmbientState) -> f64 {
        0.5 * (s.qdot.dot(&(self.sys.metric_q(&s.q) * &s.qdot))
            + s.fdot.dot(&(self.sys.metric_v() * &s.fdot)))
            + self.sys.potential(&s.q, &s.f)
    }
}

fn shift(
    s: &AmbientState,
    qdot: &DVector<f64>,
    fdot: &DVector<f64>,
    qddot: &DVector<f64>,
    fddot: &DVector<f64>,
    h: f64,
) -> AmbientState {
    AmbientState {
        q: &s.q + qdot * h,
        f: &s.f + fdot * h,
        qdot: &s.qdot + qddot * h,
        fdot: &s.fdot + fddot * h,
    }
}

/// Map a direct trajectory into reduced variables, warm-starting each frame
/// solve with the previous sample's group coordinate.
pub fn map_to_reduced(
    dynamics: &ReducedDynamics<'_>,
    traj: &[AmbientState],
) -> Result<Vec<ReducedState>> {
    let mut out = Vec::with_capacity(traj.len());
    let mut warm: Option<DVector<f64>> = None;
    for s in traj {
        let st = dynamics.from_ambient(&s.q, &s.f, &s.qdot, &s.fdot, warm.as_ref())?;
        warm = Some(st.group_coords.clone());
        out.push(st);
    }
    Ok(out)
}

/// Per-variable-group maximum relative deviation between two reduced
/// trajectories on the same time grid: `max_t |a - b|_inf / (1 + |b|_inf)`,
/// with the group coordinate compared wrap-safely through the group.
#[derive(Debug, Clone, Default)]
pub struct ComparisonReport {
    pub q_star: f64,
    pub f_tilde: f64,
    pub omega_q: f64,
    pub omega_v: f64,
    pub p: f64,
    pub group_coords: f64,
}

impl ComparisonReport {
    /// The largest deviation and the variable group it occurred in.
    pub fn worst(&self) -> (f64, &'static str) {
        let entries = [
            (self.q_star, "q_star"),
            (self.f_tilde, "f_tilde"),
            (self.omega_q, "omega_q"),
            (self.omega_v, "omega_v"),
            (self.p, "p"),
            (self.group_coords, "group_coords"),
        ];
        let mut best = entries[0];
        for e in &entries[1..] {
            if e.0 > best.0 {
                best = *e;
            }
        }
        best
    }
}

fn rel(a: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    max_abs_vec(&(a - reference)) / (1.0 + max_abs_vec(reference))
}

pub fn compare_trajectories(
    sys: &SystemDef,
    a: &[ReducedState],
    b: &[ReducedState],
) -> Result<ComparisonReport> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "trajectory comparison grids".into(),
            expected: b.len(),
            got: a.len(),
        });
    }
    let group = sys.group();
    let mut report = ComparisonReport::default();
    for (sa, sb) in a.iter().zip(b) {
        report.q_star = report.q_star.max(rel(&sa.q_star, &sb.q_star));
        report.f_tilde = report.f_tilde.max(rel(&sa.f_tilde, &sb.f_tilde));
        report.omega_q = report.omega_q.max(rel(&sa.omega_q, &sb.omega_q));
        report.omega_v = report.omega_v.max(rel(&sa.omega_v, &sb.omega_v));
        report.p = report.p.max(rel(&sa.p, &sb.p));
        let twist = group.compose(&sa.group_coords, &group.inverse(&sb.group_coords));
        report.group_coords = report
            .group_coords
            .max(max_abs_vec(&twist) / (1.0 + max_abs_vec(&sb.group_coords)));
    }
    Ok(report)
}
