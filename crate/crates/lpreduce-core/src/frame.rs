//! Adapted coordinates on a configuration space with a free proper group
//! action: every point `(Q, f)` is written as a slice point `Q*` (on the
//! gauge surface `chi = 0`, canonical sheet), a co-rotated multiplet
//! `f~ = D(a) f`, and the group coordinates `a` of the frame, so that
//! `Q = F(Q*, a)` and `f = D(a)^-1 f~`.
//!
//! The frame solve is a damped Newton iteration on the gauge residual
//! `chi(F(Q, a^-1))`; its Jacobian is the Faddeev-Popov operator evaluated
//! along the orbit. Cold starts seed the iteration from the identity and
//! from the system's sheet flips (with a coarse orbit search as a fallback)
//! and then apply flip corrections so the result lands on the canonical
//! sheet; warm starts follow the given branch without sheet logic, which is
//! what continuous trajectories need.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::fd;
use crate::linalg::LuSolver;
use crate::system::SystemDef;
use crate::tol;
use crate::{Error, Result};

/// A configuration in adapted coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedPoint {
    /// Point on the gauge slice (`chi(q_star) = 0`, canonical sheet).
    pub q_star: DVector<f64>,
    /// Multiplet co-rotated into the slice frame.
    pub f_tilde: DVector<f64>,
    /// Group coordinates of the frame along the orbit.
    pub group_coords: DVector<f64>,
}

/// Jacobian blocks of the chart map `(Q, f) -> (Q*, f~, a)`, evaluated at an
/// adapted point.
#[derive(Debug, Clone)]
pub struct BasisChange {
    /// `dQ*/dQ` — the slice projector pushed through the frame.
    pub dq_star_dq: DMatrix<f64>,
    /// `da/dQ` — response of the frame coordinates to a configuration move.
    pub da_dq: DMatrix<f64>,
    /// `df~/dQ` — induced rotation of the multiplet.
    pub df_tilde_dq: DMatrix<f64>,
    /// `df~/df = D(a)`.
    pub df_tilde_df: DMatrix<f64>,
}

/// Jacobian blocks of the inverse map `(Q*, f~, a) -> (Q, f)`.
#[derive(Debug, Clone)]
pub struct ForwardJacobian {
    /// `dQ/dQ*` — the frame matrix `F^A_B(Q*, a)`.
    pub dq_dq_star: DMatrix<f64>,
    /// `dQ/da` — Killing fields at the ambient point times the left
    /// Maurer-Cartan coefficient: `K_nu(Q) u^nu_mu(a)`.
    pub dq_da: DMatrix<f64>,
    /// `df/df~ = D(a)^-1`.
    pub df_df_tilde: DMatrix<f64>,
    /// `df/da = K_v,nu(f) u^nu_mu(a)`.
    pub df_da: DMatrix<f64>,
}

/// Solve for the group coordinates `a` with `chi(F(q, a^-1)) = 0`.
///
/// With a warm start the Newton iteration follows that branch and no sheet
/// correction is applied. A cold start tries the identity and every sheet
/// flip as seeds (plus a coarse orbit search if none of those converge) and
/// returns a solution on the canonical sheet whenever one exists.
pub fn solve_group_element(
    sys: &SystemDef,
    q: &DVector<f64>,
    warm_start: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    match warm_start {
        Some(a0) => newton(sys, q, a0),
        None => cold_solve(sys, q),
    }
}

/// Map an ambient configuration to adapted coordinates.
pub fn to_adapted(
    sys: &SystemDef,
    q: &DVector<f64>,
    f: &DVector<f64>,
    warm_start: Option<&DVector<f64>>,
) -> Result<AdaptedPoint> {
    let a = solve_group_element(sys, q, warm_start)?;
    let a_inv = sys.group().inverse(&a);
    let q_star = sys.action_q(q, &a_inv);
    let f_tilde = sys.action_v(f, &a_inv);
    Ok(AdaptedPoint {
        q_star,
        f_tilde,
        group_coords: a,
    })
}

/// Map adapted coordinates back to the ambient configuration.
pub fn from_adapted(sys: &SystemDef, pt: &AdaptedPoint) -> (DVector<f64>, DVector<f64>) {
    (
        sys.action_q(&pt.q_star, &pt.group_coords),
        sys.action_v(&pt.f_tilde, &pt.group_coords),
    )
}

/// Frame matrix `F^A_B(Q*, a)`: the Jacobian of the action map in its first
/// argument, holding the group coordinates fixed. For affine actions the
/// Jacobian is configuration-independent and column probes recover it to
/// roundoff; otherwise it falls back to finite differences.
pub fn frame_matrix(sys: &SystemDef, q_star: &DVector<f64>, a: &DVector<f64>) -> Result<DMatrix<f64>> {
    if sys.action_is_affine() {
        let n = sys.dim_q();
        let offset = sys.action_q(&DVector::zeros(n), a);
        let mut jac = DMatrix::zeros(n, n);
        let mut probe = DVector::zeros(n);
        for j in 0..n {
            probe[j] = 1.0;
            jac.set_column(j, &(sys.action_q(&probe, a) - &offset));
            probe[j] = 0.0;
        }
        Ok(jac)
    } else {
        fd::jacobian(|x: &DVector<f64>| Ok(sys.action_q(x, a)), q_star)
    }
}

/// Chart-Jacobian blocks at an adapted point.
pub fn basis_change(sys: &SystemDef, pt: &AdaptedPoint) -> Result<BasisChange> {
    let group = sys.group();
    let f_ab = frame_matrix(sys, &pt.q_star, &pt.group_coords)?;
    let f_check = LuSolver::new(&f_ab, "chart frame")?.inverse(f_ab.nrows())?;
    let pr = sys.projectors(&pt.q_star, &pt.f_tilde)?;
    let v_bar = group.v_bar_matrix(&pt.group_coords)?;
    Ok(BasisChange {
        dq_star_dq: &pr.n_qq * &f_check,
        da_dq: v_bar * (&pr.lambda * &f_check),
        df_tilde_dq: &pr.n_vq * &f_check,
        df_tilde_df: group.rep_v(&pt.group_coords),
    })
}

/// Jacobian blocks of the inverse chart map at an adapted point.
pub fn forward_jacobian(sys: &SystemDef, pt: &AdaptedPoint) -> Result<ForwardJacobian> {
    let group = sys.group();
    let a = &pt.group_coords;
    let u = group.u_matrix(a);
    let (q, f) = from_adapted(sys, pt);
    Ok(ForwardJacobian {
        dq_dq_star: frame_matrix(sys, &pt.q_star, a)?,
        dq_da: sys.killing_q(&q) * &u,
        df_df_tilde: group.rep_v_bar(a),
        df_da: sys.killing_v(&f) * &u,
    })
}

// ---- Newton machinery -----------------------------------------------------

fn gauge_residual(sys: &SystemDef, q: &DVector<f64>, a: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let y = sys.action_q(q, &sys.group().inverse(a));
    let r = sys.chi(&y);
    (y, r)
}

/// Wrap coordinates back into the canonical chart (composition with the
/// identity routes through the group's canonical representative).
fn canonicalize(sys: &SystemDef, a: &DVector<f64>) -> DVector<f64> {
    sys.group().compose(a, &DVector::zeros(sys.dim_g()))
}

fn newton(sys: &SystemDef, q: &DVector<f64>, seed: &DVector<f64>) -> Result<DVector<f64>> {
    let group = sys.group();
    let mut a = canonicalize(sys, seed);
    let (mut y, mut res) = gauge_residual(sys, q, &a);
    let mut res_norm = res.amax();
    for _ in 0..tol::NEWTON_MAX_ITER {
        if res_norm < tol::NEWTON_TOL {
            return Ok(a);
        }
        // Step = v_bar(a) Phi(y)^-1 r, from the chain rule through the
        // inverse-exponential chart.
        let (_, phi_inv) = sys.faddeev_popov(&y)?;
        let v_bar = group.v_bar_matrix(&a)?;
        let step = v_bar * (&phi_inv * &res);

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=tol::NEWTON_MAX_HALVINGS {
            let cand = canonicalize(sys, &(&a + scale * &step));
            let (y_new, res_new) = gauge_residual(sys, q, &cand);
            let norm_new = res_new.amax();
            if norm_new < res_norm {
                a = cand;
                y = y_new;
                res = res_new;
                res_norm = norm_new;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: tol::NEWTON_MAX_HALVINGS,
                residual: res_norm,
                tol: tol::NEWTON_TOL,
                context: format!("gauge-frame line search stalled for `{}`", sys.name()),
            });
        }
    }
    if res_norm < tol::NEWTON_TOL {
        return Ok(a);
    }
    Err(Error::NoConvergence {
        iterations: tol::NEWTON_MAX_ITER,
        residual: res_norm,
        tol: tol::NEWTON_TOL,
        context: format!("gauge-frame solve for `{}`", sys.name()),
    })
}

fn cold_solve(sys: &SystemDef, q: &DVector<f64>) -> Result<DVector<f64>> {
    let dim_g = sys.dim_g();
    let mut seeds: Vec<DVector<f64>> = Vec::new();
    seeds.push(DVector::zeros(dim_g));
    for flip in sys.sheet_flips() {
        if flip.amax() > 0.0 {
            seeds.push(flip.clone());
        }
    }

    let mut first_error: Option<Error> = None;
    let mut fallback: Option<DVector<f64>> = None;
    for seed in &seeds {
        match try_seed(sys, q, seed, &mut fallback) {
            Ok(Some(a)) => return Ok(a),
            Ok(None) => {}
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }

    // None of the structured seeds converged to the canonical sheet; scan the
    // orbit coarsely for a better start before giving up.
    for seed in coarse_seeds(dim_g) {
        match try_seed(sys, q, &seed, &mut fallback) {
            Ok(Some(a)) => return Ok(a),
            Ok(None) => {}
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }

    if let Some(a) = fallback {
        // The constraint is solved but no flip reaches the canonical sheet
        // (possible only on the sheet boundary).
        return Ok(a);
    }
    Err(first_error.unwrap_or(Error::NoConvergence {
        iterations: tol::NEWTON_MAX_ITER,
        residual: f64::INFINITY,
        tol: tol::NEWTON_TOL,
        context: format!("gauge-frame solve for `{}`: no seed converged", sys.name()),
    }))
}

/// Run Newton from one seed; on success apply sheet-flip corrections.
/// Returns `Ok(Some(a))` for a canonical-sheet solution, `Ok(None)` if this
/// seed failed to converge (other seeds may still work, so the caller keeps
/// going), and `Err(GaugeSingular)` when the seed converged but the solution
/// sits where the chart does not exist — the caller records it and keeps
/// trying other seeds.
fn try_seed(
    sys: &SystemDef,
    q: &DVector<f64>,
    seed: &DVector<f64>,
    fallback: &mut Option<DVector<f64>>,
) -> Result<Option<DVector<f64>>> {
    let Ok(a) = newton(sys, q, seed) else {
        return Ok(None);
    };

    let group = sys.group();
    let q_star = sys.action_q(q, &group.inverse(&a));
    // The chart requires an invertible gauge-fixing operator at the solution.
    sys.faddeev_popov(&q_star)?;
    if sys.on_sheet(&q_star) {
        return Ok(Some(a));
    }
    for flip in sys.sheet_flips() {
        if flip.amax() == 0.0 {
            continue;
        }
        let cand = canonicalize(sys, &group.compose(flip, &a));
        let (_, res) = gauge_residual(sys, q, &cand);
        if res.amax() > tol::CONSTRAINT_RESIDUAL {
            continue;
        }
        let q_cand = sys.action_q(q, &group.inverse(&cand));
        if sys.on_sheet(&q_cand) {
            return Ok(Some(cand));
        }
    }
    if fallback.is_none() {
        *fallback = Some(a);
    }
    Ok(None)
}

/// Deterministic coarse seeds covering the chart, used only when the
/// structured seeds fail.
fn coarse_seeds(dim_g: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::new();
    match dim_g {
        1 => {
            for k in 0..8 {
                let angle = -core::f64::consts::PI + (k as f64 + 0.5) * core::f64::consts::FRAC_PI_4;
                out.push(DVector::from_vec(alloc::vec![angle]));
            }
        }
        _ => {
            let mut dirs: Vec<DVector<f64>> = Vec::new();
            for i in 0..dim_g {
                for sign in [1.0, -1.0] {
                    let mut d = DVector::zeros(dim_g);
                    d[i] = sign;
                    dirs.push(d);
                }
            }
            if dim_g == 3 {
                for sx in [1.0f64, -1.0] {
                    for sy in [1.0f64, -1.0] {
                        for sz in [1.0f64, -1.0] {
                            let d = DVector::from_vec(alloc::vec![sx, sy, sz]);
                            let norm = d.norm();
                            dirs.push(d / norm);
                        }
                    }
                }
            }
            for radius in [0.7, 1.5, 2.3, 2.9] {
                for d in &dirs {
                    out.push(d * radius);
                }
            }
        }
    }
    out
}
