//! Time evolution of the reduced system.
//!
//! State variables on the slice: the constrained configuration `Q*`, the
//! rotated multiplet `f~`, their velocities `omega_q = dQ*/dt` and
//! `omega_v = df~/dt`, the vertical momentum `p`, and the carried group
//! coordinate used to reconstruct the ambient motion.
//!
//! Two equation sets are provided. [`EquationSet::Full`] keeps the slice
//! projectors and the constraint-completion term, making the horizontal
//! equations a well-posed ODE on the slice tangent.
//! [`EquationSet::SpecialCase`] drops the projectors — the regime used for
//! the field-theory limit, exact whenever the projected bracket vanishes.

use nalgebra::{DMatrix, DVector};

use crate::frame::{self, AdaptedPoint};
use crate::geometry::{self, GeometryCache, Pathway};
use crate::linalg::SpdSolver;
use crate::system::SystemDef;
use crate::Result;

/// Which reduced equations to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquationSet {
    /// Projector-bearing horizontal equations plus constraint completion.
    Full,
    /// Projector-free equations (field-theory regime).
    SpecialCase,
}

/// How the vertical momentum pairs with the vertical quasi-velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentumConvention {
    /// Pair with the full orbit metric (principal + multiplet sectors).
    OrbitTotal,
    /// Pair with the principal-sector Killing Gram only.
    PrincipalOnly,
}

/// Reduced phase-space point.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub q_star: DVector<f64>,
    pub f_tilde: DVector<f64>,
    pub omega_q: DVector<f64>,
    pub omega_v: DVector<f64>,
    pub p: DVector<f64>,
    /// Carried group coordinate (reconstruction of the ambient motion).
    pub group_coords: DVector<f64>,
}

/// Time derivative of a [`ReducedState`].
#[derive(Debug, Clone)]
pub struct ReducedRhs {
    pub dq_star: DVector<f64>,
    pub df_tilde: DVector<f64>,
    pub domega_q: DVector<f64>,
    pub domega_v: DVector<f64>,
    pub dp: DVector<f64>,
    pub da: DVector<f64>,
}

/// Ambient phase-space data `(q, f, qdot, fdot)`.
#[derive(Debug, Clone)]
pub struct AmbientState {
    pub q: DVector<f64>,
    pub f: DVector<f64>,
    pub qdot: DVector<f64>,
    pub fdot: DVector<f64>,
}

/// Integrator for the reduced equations of one system.
pub struct ReducedDynamics<'a> {
    sys: &'a SystemDef,
    pathway: Pathway,
    equations: EquationSet,
    convention: MomentumConvention,
}

impl<'a> ReducedDynamics<'a> {
    /// Defaults: closed-form tensors when the ambient metric is constant
    /// (finite differences otherwise), full equations, orbit-total momentum.
    pub fn new(sys: &'a SystemDef) -> Self {
        let pathway = if sys.metric_is_flat() {
            Pathway::ClosedForm
        } else {
            Pathway::FiniteDifference
        };
        Self {
            sys,
            pathway,
            equations: EquationSet::Full,
            convention: MomentumConvention::OrbitTotal,
        }
    }

    pub fn with_pathway(mut self, pathway: Pathway) -> Self {
        self.pathway = pathway;
        self
    }

    pub fn with_equations(mut self, equations: EquationSet) -> Self {
        self.equations = equations;
        self
    }

    pub fn with_convention(mut self, convention: MomentumConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn system(&self) -> &SystemDef {
        self.sys
    }

    pub fn equations(&self) -> EquationSet {
        self.equations
    }

    // ---- chart maps -------------------------------------------------------

    /// Build a reduced state from ambient positions and velocities.
    pub fn from_ambient(
        &self,
        q: &DVector<f64>,
        f: &DVector<f64>,
        qdot: &DVector<f64>,
        fdot: &DVector<f64>,
        warm_start: Option<&DVector<f64>>,
    ) -> Result<ReducedState> {
        let pt = frame::to_adapted(self.sys, q, f, warm_start)?;
        let bc = frame::basis_change(self.sys, &pt)?;
        let omega_q = &bc.dq_star_dq * qdot;
        let omega_v = &bc.df_tilde_dq * qdot + &bc.df_tilde_df * fdot;
        // The vertical quasi-velocity in the rotated frame is the ambient
        // connection value conjugated by the orbit rotation.
        let omega_hat = geometry::connection_form_ambient(self.sys, &pt, qdot, fdot)?;
        let sigma = self.sys.group().rho(&pt.group_coords) * omega_hat;
        let b = geometry::conn_blocks(self.sys, &pt.q_star, &pt.f_tilde)?;
        let p = self.pairing(&b)? * sigma;
        Ok(ReducedState {
            q_star: pt.q_star,
            f_tilde: pt.f_tilde,
            omega_q,
            omega_v,
            p,
            group_coords: pt.group_coords,
        })
    }

    /// Map a reduced state to ambient positions and velocities.
    pub fn to_ambient(&self, st: &ReducedState) -> Result<AmbientState> {
        let pt = AdaptedPoint {
            q_star: st.q_star.clone(),
            f_tilde: st.f_tilde.clone(),
            group_coords: st.group_coords.clone(),
        };
        let b = geometry::conn_blocks(self.sys, &st.q_star, &st.f_tilde)?;
        let a_dot = self.reconstruction_rate(&b, st)?;
        let fj = frame::forward_jacobian(self.sys, &pt)?;
        let (q, f) = frame::from_adapted(self.sys, &pt);
        Ok(AmbientState {
            q,
            f,
            qdot: &fj.dq_dq_star * &st.omega_q + &fj.dq_da * &a_dot,
            fdot: &fj.df_df_tilde * &st.omega_v + &fj.df_da * &a_dot,
        })
    }

    // ---- first integrals --------------------------------------------------

    /// Total energy: horizontal kinetic + vertical kinetic + potential.
    pub fn energy(&self, st: &ReducedState) -> Result<f64> {
        let b = geometry::conn_blocks(self.sys, &st.q_star, &st.f_tilde)?;
        let (gh_qq, gh_qv, gh_vv) = geometry::gh_blocks(&b);
        let horizontal = st.omega_q.dot(&(&gh_qq * &st.omega_q))
            + 2.0 * st.omega_q.dot(&(&gh_qv * &st.omega_v))
            + st.omega_v.dot(&(&gh_vv * &st.omega_v));
        let sigma = self.vertical_velocity(&b, &st.p)?;
        let vertical = sigma.dot(&(&b.d * &sigma));
        Ok(0.5 * (horizontal + vertical) + self.sys.potential(&st.q_star, &st.f_tilde))
    }

    /// The conserved symmetry charge `rho(a)^T p` (equals the ambient charge
    /// `K(x)^T G xdot` under the orbit-total convention).
    pub fn charge(&self, st: &ReducedState) -> Result<DVector<f64>> {
        Ok(self.sys.group().rho(&st.group_coords).transpose() * &st.p)
    }

    // ---- equations of motion ----------------------------------------------

    /// Evaluate the reduced equations at a state.
    pub fn rhs(&self, st: &ReducedState) -> Result<ReducedRhs> {
        let cache = GeometryCache::new(self.sys, &st.q_star, &st.f_tilde, self.pathway)?;
        let n = cache.dim_q() + cache.dim_v();
        let mut w = DVector::zeros(n);
        w.rows_mut(0, cache.dim_q()).copy_from(&st.omega_q);
        w.rows_mut(cache.dim_q(), cache.dim_v())
            .copy_from(&st.omega_v);

        let e_q = self.bracket_q(&cache, &w, &st.p);
        let e_v = self.bracket_v(&cache, &w, &st.p);

        let (domega_q, domega_v) = match self.equations {
            EquationSet::Full => {
                let completion = self.completion_term(&cache, &st.omega_q)?;
                let domega_q = -(&cache.proj.n_qq * &e_q) - completion;
                // Residual of the first horizontal equation without its
                // projector, reused by the second equation.
                let resid = &domega_q + &e_q;
                let domega_v = -(&cache.proj.n_vq * &resid) - &e_v;
                (domega_q, domega_v)
            }
            EquationSet::SpecialCase => (-e_q, -e_v),
        };

        let dp = self.vertical_rhs(&cache, &w, &st.p);
        let b_view = cache_conn_view(&cache);
        let da = self.reconstruction_rate_from(&b_view, st)?;

        Ok(ReducedRhs {
            dq_star: st.omega_q.clone(),
            df_tilde: st.omega_v.clone(),
            domega_q,
            domega_v,
            dp,
            da,
        })
    }

    /// One fixed-step RK4 step followed by a retraction: the drifted point is
    /// pulled back onto the slice by a near-identity group element (positions
    /// and velocities rotate with it, the carried coordinate absorbs it) and
    /// the slice-tangency of `omega_q` is re-enforced.
    pub fn step(&self, st: &ReducedState, dt: f64) -> Result<ReducedState> {
        let k1 = self.rhs(st)?;
        let s2 = advance(st, &k1, 0.5 * dt);
        let k2 = self.rhs(&s2)?;
        let s3 = advance(st, &k2, 0.5 * dt);
        let k3 = self.rhs(&s3)?;
        let s4 = advance(st, &k3, dt);
        let k4 = self.rhs(&s4)?;

        let sixth = dt / 6.0;
        let mix = |sel: fn(&ReducedRhs) -> &DVector<f64>| -> DVector<f64> {
            (sel(&k1) + sel(&k2) * 2.0 + sel(&k3) * 2.0 + sel(&k4)) * sixth
        };
        let mut out = ReducedState {
            q_star: &st.q_star + mix(|k| &k.dq_star),
            f_tilde: &st.f_tilde + mix(|k| &k.df_tilde),
            omega_q: &st.omega_q + mix(|k| &k.domega_q),
            omega_v: &st.omega_v + mix(|k| &k.domega_v),
            p: &st.p + mix(|k| &k.dp),
            group_coords: &st.group_coords + mix(|k| &k.da),
        };
        self.retract(&mut out)?;
        Ok(out)
    }

    fn retract(&self, st: &mut ReducedState) -> Result<()> {
        let sys = self.sys;
        let group = sys.group();
        let zeros = DVector::zeros(group.dim());
        let a_c = frame::solve_group_element(sys, &st.q_star, Some(&zeros))?;
        let a_c_inv = group.inverse(&a_c);
        st.q_star = sys.action_q(&st.q_star, &a_c_inv);
        st.f_tilde = sys.action_v(&st.f_tilde, &a_c_inv);
        // Velocities rotate with the linear part of the same maps.
        let offset = sys.action_q(&DVector::zeros(sys.dim_q()), &a_c_inv);
        st.omega_q = sys.action_q(&st.omega_q, &a_c_inv) - offset;
        st.omega_v = sys.action_v(&st.omega_v, &a_c_inv);
        st.group_coords = group.compose(&a_c, &st.group_coords);
        let pr = sys.projectors(&st.q_star, &st.f_tilde)?;
        st.omega_q = &pr.p_perp * &st.omega_q;
        Ok(())
    }

    // ---- internals --------------------------------------------------------

    fn pairing(&self, b: &geometry::ConnBlocks) -> Result<DMatrix<f64>> {
        match self.convention {
            MomentumConvention::OrbitTotal => Ok(b.d.clone()),
            MomentumConvention::PrincipalOnly => {
                Ok(b.k_q.transpose() * &b.g_q * &b.k_q)
            }
        }
    }

    /// `sigma = pairing^-1 p`, the rotated vertical quasi-velocity.
    fn vertical_velocity(&self, b: &geometry::ConnBlocks, p: &DVector<f64>) -> Result<DVector<f64>> {
        match self.convention {
            MomentumConvention::OrbitTotal => Ok(&b.d_inv * p),
            MomentumConvention::PrincipalOnly => {
                let gamma = b.k_q.transpose() * &b.g_q * &b.k_q;
                Ok(SpdSolver::new(&gamma, "principal Killing Gram")?.solve_vec(p))
            }
        }
    }

    fn reconstruction_rate(
        &self,
        b: &geometry::ConnBlocks,
        st: &ReducedState,
    ) -> Result<DVector<f64>> {
        let sigma = self.vertical_velocity(b, &st.p)?;
        let along = &b.a_q * &st.omega_q + &b.a_v * &st.omega_v;
        let v_bar = self.sys.group().v_bar_matrix(&st.group_coords)?;
        Ok(v_bar * (sigma - along))
    }

    fn reconstruction_rate_from(
        &self,
        b: &geometry::ConnBlocks,
        st: &ReducedState,
    ) -> Result<DVector<f64>> {
        self.reconstruction_rate(b, st)
    }

    /// Raised principal-sector bracket `G^{AR} [ Christoffel w w + curvature
    /// w p + 1/2 (D d) p p + V_{,R} ]`.
    fn bracket_q(&self, cache: &GeometryCache, w: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        let n_q = cache.dim_q();
        let n = w.len();
        let g = cache.dim_g();
        let mut out = &cache.g_q_inv * &cache.grad_q;
        for a in 0..n_q {
            let mut acc = 0.0;
            for x in 0..n {
                for y in 0..n {
                    acc += cache.christoffel_q.get(a, x, y) * w[x] * w[y];
                }
            }
            for alpha in 0..g {
                for x in 0..n {
                    acc += cache.curvature_q.get(a, alpha, x) * w[x] * p[alpha];
                }
                for sigma in 0..g {
                    acc += 0.5 * cache.dd_q.get(a, alpha, sigma) * p[alpha] * p[sigma];
                }
            }
            out[a] += acc;
        }
        out
    }

    /// Raised multiplet-sector bracket.
    fn bracket_v(&self, cache: &GeometryCache, w: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        let n_v = cache.dim_v();
        let n = w.len();
        let g = cache.dim_g();
        let mut out = &cache.g_v_inv * &cache.grad_v;
        for r in 0..n_v {
            let mut acc = 0.0;
            for x in 0..n {
                for y in 0..n {
                    acc += cache.christoffel_v.get(r, x, y) * w[x] * w[y];
                }
            }
            for alpha in 0..g {
                for x in 0..n {
                    acc += cache.curvature_v.get(r, alpha, x) * w[x] * p[alpha];
                }
                for sigma in 0..g {
                    acc += 0.5 * cache.dd_v.get(r, alpha, sigma) * p[alpha] * p[sigma];
                }
            }
            out[r] += acc;
        }
        out
    }

    /// Constraint completion `K_q Phi^-1 (chi'' w w)`: the gauge-normal part
    /// of `domega_q/dt` enforced by differentiating the slice constraint
    /// twice (zero for linear gauge maps).
    fn completion_term(&self, cache: &GeometryCache, omega_q: &DVector<f64>) -> Result<DVector<f64>> {
        let chi2 = self.sys.chi_second(&cache.q_star)?;
        let (n_chi, n_q, _) = chi2.dims();
        let mut s = DVector::zeros(n_chi);
        for mu in 0..n_chi {
            let mut acc = 0.0;
            for a in 0..n_q {
                for bq in 0..n_q {
                    acc += chi2.get(mu, a, bq) * omega_q[a] * omega_q[bq];
                }
            }
            s[mu] = acc;
        }
        Ok(&cache.k_q * (&cache.proj.phi_inv * s))
    }

    /// Vertical momentum equation.
    fn vertical_rhs(&self, cache: &GeometryCache, w: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        let g = cache.dim_g();
        let n_q = cache.dim_q();
        let n = w.len();
        let group = self.sys.group();
        let mut dp = DVector::zeros(g);
        for beta in 0..g {
            let mut acc = 0.0;
            for nu in 0..g {
                for mu in 0..g {
                    let c = group.structure_constant(nu, mu, beta);
                    if c == 0.0 {
                        continue;
                    }
                    for sigma in 0..g {
                        acc -= c * cache.d_inv[(mu, sigma)] * p[sigma] * p[nu];
                    }
                }
                for sigma in 0..g {
                    let c = group.structure_constant(nu, sigma, beta);
                    if c == 0.0 {
                        continue;
                    }
                    for x in 0..n {
                        let a_sx = if x < n_q {
                            cache.a_q[(sigma, x)]
                        } else {
                            cache.a_v[(sigma, x - n_q)]
                        };
                        acc += c * a_sx * w[x] * p[nu];
                    }
                }
            }
            dp[beta] = acc;
        }
        dp
    }
}

/// Euler substep used inside RK4 (chart-linear on every component).
fn advance(st: &ReducedState, k: &ReducedRhs, h: f64) -> ReducedState {
    ReducedState {
        q_star: &st.q_star + &k.dq_star * h,
        f_tilde: &st.f_tilde + &k.df_tilde * h,
        omega_q: &st.omega_q + &k.domega_q * h,
        omega_v: &st.omega_v + &k.domega_v * h,
        p: &st.p + &k.dp * h,
        group_coords: &st.group_coords + &k.da * h,
    }
}

/// View the connection-level blocks of a full cache without recomputing.
fn cache_conn_view(cache: &GeometryCache) -> geometry::ConnBlocks {
    geometry::ConnBlocks {
        k_q: cache.k_q.clone(),
        k_v: cache.k_v.clone(),
        g_q: cache.g_q.clone(),
        g_v: cache.g_v.clone(),
        d: cache.d.clone(),
        d_inv: cache.d_inv.clone(),
        a_q: cache.a_q.clone(),
        a_v: cache.a_v.clone(),
    }
}
