//! System definitions: configuration metric, group action, gauge-fixing
//! condition, potential — plus the derived pointwise objects every later
//! stage consumes (Killing fields, the gauge-fixing operator, slice
//! projectors, orbit-metric blocks).
//!
//! A system couples a "principal" sector `Q` (dimension `dim_q`, where the
//! gauge condition `chi(Q) = 0` lives) with a linear scalar-multiplet sector
//! `f` in the group representation carried by [`LieGroup::rep_v`]. The right
//! action is `(Q, f) . a = (F(Q, a), D(a)^-1 f)`.
//!
//! Analytic derivatives are optional everywhere; when absent, the engine
//! falls back to Richardson-refined finite differences from [`crate::fd`]
//! (the independent pathway used by the validation suite).

use crate::error::{Error, Result};
use crate::fd;
use crate::linalg::{LuSolver, SpdSolver, Tensor3};
use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::lie::LieGroup;

type QMap = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type PointMatrix = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type PointVector = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type PointMatrixList = Box<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;
type PointTensor = Box<dyn Fn(&DVector<f64>) -> Tensor3 + Send + Sync>;
type Potential = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
type PotentialGrad =
    Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> (DVector<f64>, DVector<f64>) + Send + Sync>;
type SheetTest = Box<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

/// Configuration-space metric on the `Q` sector.
enum MetricField {
    Constant(DMatrix<f64>),
    Varying(PointMatrix),
}

/// Pointwise projector bundle at a configuration `(Q, f)`.
///
/// * `phi` / `phi_inv` — the gauge-fixing (Faddeev-Popov) operator
///   `Phi^beta_mu = chi^beta_,A K^A_mu` and its inverse;
/// * `lambda = Phi^-1 chi'` — the co-slice form;
/// * `n_qq = I - K lambda` — oblique projector along orbit directions onto
///   the slice tangent (kernel: Killing directions, image: `ker chi'`);
/// * `n_vq = -K_v lambda` — the scalar-sector block of the extended oblique
///   projector (how slice motion re-aims the multiplet);
/// * `p_perp` — the metric-orthogonal projector onto `ker chi'`.
pub struct Projectors {
    pub phi: DMatrix<f64>,
    pub phi_inv: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub n_qq: DMatrix<f64>,
    pub n_vq: DMatrix<f64>,
    pub p_perp: DMatrix<f64>,
}

/// A mechanical system with symmetry, defined by data closures plus optional
/// analytic derivatives.
pub struct SystemDef {
    name: String,
    group: Arc<dyn LieGroup>,
    dim_q: usize,
    dim_v: usize,
    metric_q: MetricField,
    metric_v: DMatrix<f64>,
    action_q: QMap,
    killing_q: Option<PointMatrix>,
    killing_q_deriv: Option<PointMatrixList>,
    chi: PointVector,
    chi_jacobian: Option<PointMatrix>,
    chi_second: Option<PointTensor>,
    potential: Potential,
    potential_grad: Option<PotentialGrad>,
    metric_is_flat: bool,
    affine_action: bool,
    sheet_flips: Vec<DVector<f64>>,
    sheet_ok: SheetTest,
}

impl SystemDef {
    /// Assemble a system from its required data. Optional analytic
    /// derivatives are attached with the `with_*` methods; finite differences
    /// cover anything left out.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        group: Arc<dyn LieGroup>,
        dim_q: usize,
        metric_q_const: DMatrix<f64>,
        metric_v: DMatrix<f64>,
        action_q: QMap,
        chi: PointVector,
        potential: Potential,
    ) -> Self {
        let dim_v = group.rep_dim();
        assert_eq!(metric_q_const.nrows(), dim_q);
        assert_eq!(metric_v.nrows(), dim_v);
        Self {
            name: name.to_string(),
            group,
            dim_q,
            dim_v,
            metric_q: MetricField::Constant(metric_q_const),
            metric_v,
            action_q,
            killing_q: None,
            killing_q_deriv: None,
            chi,
            chi_jacobian: None,
            chi_second: None,
            potential,
            potential_grad: None,
            metric_is_flat: true,
            affine_action: true,
            sheet_flips: alloc::vec![],
            sheet_ok: Box::new(|_| true),
        }
    }

    /// Declare that the configuration action is *not* affine in `Q` (its
    /// Jacobian then has to be taken numerically at each point).
    pub fn with_nonaffine_action(mut self) -> Self {
        self.affine_action = false;
        self
    }

    /// Whether `action_q(., a)` is affine, i.e. has a configuration-
    /// independent Jacobian that column probes recover exactly.
    pub fn action_is_affine(&self) -> bool {
        self.affine_action
    }

    /// Replace the constant metric with a position-dependent one (disables
    /// the flat-metric closed-form pathway).
    pub fn with_varying_metric_q(mut self, metric: PointMatrix) -> Self {
        self.metric_q = MetricField::Varying(metric);
        self.metric_is_flat = false;
        self
    }

    pub fn with_killing_q(mut self, killing: PointMatrix) -> Self {
        self.killing_q = Some(killing);
        self
    }

    pub fn with_killing_q_deriv(mut self, deriv: PointMatrixList) -> Self {
        self.killing_q_deriv = Some(deriv);
        self
    }

    pub fn with_chi_jacobian(mut self, jac: PointMatrix) -> Self {
        self.chi_jacobian = Some(jac);
        self
    }

    /// Attach the second derivative `chi^mu_{,AB}`; pass a zero tensor for
    /// linear gauge conditions to skip the FD fallback entirely.
    pub fn with_chi_second(mut self, second: PointTensor) -> Self {
        self.chi_second = Some(second);
        self
    }

    pub fn with_potential_grad(mut self, grad: PotentialGrad) -> Self {
        self.potential_grad = Some(grad);
        self
    }

    /// Candidate group elements for moving a solved gauge frame onto the
    /// canonical sheet, and the sheet membership test for slice points.
    pub fn with_sheet(mut self, flips: Vec<DVector<f64>>, ok: SheetTest) -> Self {
        self.sheet_flips = flips;
        self.sheet_ok = ok;
        self
    }

    // ---- accessors -------------------------------------------------------

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn group(&self) -> &Arc<dyn LieGroup> {
        &self.group
    }

    pub fn dim_q(&self) -> usize {
        self.dim_q
    }

    pub fn dim_v(&self) -> usize {
        self.dim_v
    }

    pub fn dim_g(&self) -> usize {
        self.group.dim()
    }

    /// Whether the `Q`-sector metric is constant (flat coordinates), which
    /// enables the closed-form geometry pathway.
    pub fn metric_is_flat(&self) -> bool {
        self.metric_is_flat
    }

    pub fn sheet_flips(&self) -> &[DVector<f64>] {
        &self.sheet_flips
    }

    pub fn on_sheet(&self, q: &DVector<f64>) -> bool {
        (self.sheet_ok)(q)
    }

    // ---- metric ----------------------------------------------------------

    pub fn metric_q(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match &self.metric_q {
            MetricField::Constant(m) => m.clone(),
            MetricField::Varying(f) => f(q),
        }
    }

    pub fn metric_q_inv(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        SpdSolver::new(&self.metric_q(q), "metric-q").map(|s| s.inverse())
    }

    pub fn metric_v(&self) -> &DMatrix<f64> {
        &self.metric_v
    }

    pub fn metric_v_inv(&self) -> Result<DMatrix<f64>> {
        SpdSolver::new(&self.metric_v, "metric-v").map(|s| s.inverse())
    }

    // ---- action and Killing fields --------------------------------------

    /// Right action on the principal sector: `F(Q, a)`.
    pub fn action_q(&self, q: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        (self.action_q)(q, a)
    }

    /// Right action on the multiplet: `D(a)^-1 f`.
    pub fn action_v(&self, f: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        self.group.rep_v_bar(a) * f
    }

    /// Killing fields of the principal sector as columns of an
    /// `dim_q x dim_g` matrix: `K_alpha = d/dt F(Q, t e_alpha)|_0`.
    pub fn killing_q(&self, q: &DVector<f64>) -> DMatrix<f64> {
        if let Some(k) = &self.killing_q {
            return k(q);
        }
        let dim_g = self.group.dim();
        let mut out = DMatrix::zeros(self.dim_q, dim_g);
        for alpha in 0..dim_g {
            let col = fd::partial_vector(
                |t: &DVector<f64>| {
                    let mut a = DVector::zeros(dim_g);
                    a[alpha] = t[0];
                    Ok(self.action_q(q, &a))
                },
                &DVector::zeros(1),
                0,
            )
            .expect("infallible closure");
            out.set_column(alpha, &col);
        }
        out
    }

    /// Derivatives of the Killing matrix: entry `b` of the result is
    /// `d K / d Q^b` (a `dim_q x dim_g` matrix).
    pub fn killing_q_deriv(&self, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        if let Some(d) = &self.killing_q_deriv {
            return Ok(d(q));
        }
        (0..self.dim_q)
            .map(|b| fd::partial_matrix(|x: &DVector<f64>| Ok(self.killing_q(x)), q, b))
            .collect()
    }

    /// Killing fields of the multiplet sector: columns `Jbar_alpha f`.
    pub fn killing_v(&self, f: &DVector<f64>) -> DMatrix<f64> {
        let dim_g = self.group.dim();
        let mut out = DMatrix::zeros(self.dim_v, dim_g);
        for alpha in 0..dim_g {
            out.set_column(alpha, &(self.group.jbar(alpha) * f));
        }
        out
    }

    // ---- gauge condition -------------------------------------------------

    pub fn chi(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.chi)(q)
    }

    pub fn dim_chi(&self) -> usize {
        self.group.dim()
    }

    /// Jacobian `chi^mu_{,A}` as a `dim_g x dim_q` matrix.
    pub fn chi_jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        if let Some(j) = &self.chi_jacobian {
            return Ok(j(q));
        }
        fd::jacobian(|x: &DVector<f64>| Ok(self.chi(x)), q)
    }

    /// Second derivative `chi^mu_{,AB}` with layout `(mu, A, B)`.
    pub fn chi_second(&self, q: &DVector<f64>) -> Result<Tensor3> {
        if let Some(s) = &self.chi_second {
            return Ok(s(q));
        }
        let dim_g = self.group.dim();
        let mut t = Tensor3::zeros(dim_g, self.dim_q, self.dim_q);
        for b in 0..self.dim_q {
            let d = fd::partial_matrix(|x: &DVector<f64>| self.chi_jacobian(x), q, b)?;
            for mu in 0..dim_g {
                for a in 0..self.dim_q {
                    t.set(mu, a, b, d[(mu, a)]);
                }
            }
        }
        Ok(t)
    }

    // ---- gauge-fixing operator and projectors ---------------------------

    /// The gauge-fixing (Faddeev-Popov) operator `Phi^beta_mu = chi^beta_{,A}
    /// K^A_mu` and its inverse. Fails with `GaugeSingular` where the slice is
    /// not transverse to the orbit.
    pub fn faddeev_popov(&self, q: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let phi = self.chi_jacobian(q)? * self.killing_q(q);
        let solver = LuSolver::new(&phi, "faddeev-popov").map_err(|e| match e {
            Error::SingularOperator { rcond, .. } => Error::GaugeSingular {
                rcond,
                context: alloc::format!("system `{}`", self.name),
            },
            other => other,
        })?;
        let phi_inv = solver.inverse(phi.nrows())?;
        Ok((phi, phi_inv))
    }

    /// Pointwise projector bundle at `(q, f)`.
    pub fn projectors(&self, q: &DVector<f64>, f: &DVector<f64>) -> Result<Projectors> {
        let (phi, phi_inv) = self.faddeev_popov(q)?;
        let chij = self.chi_jacobian(q)?;
        let lambda = &phi_inv * &chij;
        let k_q = self.killing_q(q);
        let n_qq = DMatrix::identity(self.dim_q, self.dim_q) - &k_q * &lambda;
        let n_vq = -(self.killing_v(f) * &lambda);

        // Metric-orthogonal projector onto ker(chi'):
        // P = I - G^-1 chi'^T (chi' G^-1 chi'^T)^-1 chi'.
        let g_inv = self.metric_q_inv(q)?;
        let w = &g_inv * chij.transpose();
        let gram = &chij * &w;
        let gram_solver = SpdSolver::new(&gram, "slice-normal gram")?;
        let p_perp = DMatrix::identity(self.dim_q, self.dim_q) - &w * gram_solver.solve_mat(&chij);

        Ok(Projectors {
            phi,
            phi_inv,
            lambda,
            n_qq,
            n_vq,
            p_perp,
        })
    }

    // ---- orbit-metric blocks --------------------------------------------

    /// Principal-sector Gram block `gamma_{mu nu} = K_mu . G_q . K_nu`.
    pub fn gamma_q(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let k = self.killing_q(q);
        k.transpose() * self.metric_q(q) * k
    }

    /// Multiplet-sector Gram block `gamma'_{mu nu} = K_mu . G_v . K_nu`.
    pub fn gamma_v(&self, f: &DVector<f64>) -> DMatrix<f64> {
        let k = self.killing_v(f);
        k.transpose() * &self.metric_v * k
    }

    // ---- potential -------------------------------------------------------

    pub fn potential(&self, q: &DVector<f64>, f: &DVector<f64>) -> f64 {
        (self.potential)(q, f)
    }

    /// Gradient of the potential in both sectors, analytic when attached.
    pub fn potential_grad(&self, q: &DVector<f64>, f: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if let Some(g) = &self.potential_grad {
            return Ok(g(q, f));
        }
        let dq = fd::gradient(|x: &DVector<f64>| Ok(self.potential(x, f)), q)?;
        let dv = fd::gradient(|x: &DVector<f64>| Ok(self.potential(q, x)), f)?;
        Ok((dq, dv))
    }
}

// ---- builtin systems -----------------------------------------------------

/// Parameters of the planar circle-symmetric system.
#[derive(Debug, Clone, Copy)]
pub struct So2BeadParams {
    /// Radial spring stiffness.
    pub k_radial: f64,
    /// Rest radius of the radial spring.
    pub rest_radius: f64,
    /// Mass-squared of the charged scalar pair.
    pub scalar_mass2: f64,
    /// Rotation-invariant coupling on `Q . f`.
    pub coupling: f64,
}

impl Default for So2BeadParams {
    fn default() -> Self {
        Self {
            k_radial: 1.0,
            rest_radius: 1.0,
            scalar_mass2: 0.5,
            coupling: 0.3,
        }
    }
}

/// Parameters of the rotation-symmetric two-vector system.
#[derive(Debug, Clone, Copy)]
pub struct So3TwoVectorParams {
    pub k1: f64,
    pub r1: f64,
    pub k2: f64,
    pub r2: f64,
    /// Coupling on `Q1 . Q2`.
    pub c12: f64,
    /// Coupling on `Q2 . f`.
    pub cf: f64,
    pub scalar_mass2: f64,
}

impl Default for So3TwoVectorParams {
    fn default() -> Self {
        Self {
            k1: 1.0,
            r1: 1.0,
            k2: 0.8,
            r2: 1.5,
            c12: 0.25,
            cf: 0.3,
            scalar_mass2: 0.6,
        }
    }
}

impl SystemDef {
    /// Planar system with circle symmetry: a point `Q` in the punctured
    /// plane coupled to a charged scalar pair `f`. Gauge condition
    /// `chi = Q^2`, canonical sheet `Q^1 > 0`, flat metrics.
    pub fn so2_bead(params: So2BeadParams) -> Self {
        let group: Arc<dyn LieGroup> = Arc::new(crate::lie::So2);
        let g_action = group.clone();
        let action: QMap = Box::new(move |q, a| g_action.matrix_rep(&g_action.inverse(a)) * q);
        let chi: PointVector = Box::new(|q| DVector::from_vec(alloc::vec![q[1]]));
        let pot: Potential = Box::new(move |q, f| {
            let r = q.norm();
            let dr = r - params.rest_radius;
            0.5 * params.k_radial * dr * dr
                + 0.5 * params.scalar_mass2 * f.norm_squared()
                + params.coupling * q.dot(f)
        });
        SystemDef::new(
            "so2-bead",
            group,
            2,
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            action,
            chi,
            pot,
        )
        .with_killing_q(Box::new(|q| {
            DMatrix::from_column_slice(2, 1, &[-q[1], q[0]])
        }))
        .with_killing_q_deriv(Box::new(|_q| {
            alloc::vec![
                DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
                DMatrix::from_column_slice(2, 1, &[-1.0, 0.0]),
            ]
        }))
        .with_chi_jacobian(Box::new(|_q| {
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0])
        }))
        .with_chi_second(Box::new(|_q| Tensor3::zeros(1, 2, 2)))
        .with_potential_grad(Box::new(move |q, f| {
            let r = q.norm();
            let radial = if r > 0.0 {
                q * (params.k_radial * (r - params.rest_radius) / r)
            } else {
                DVector::zeros(2)
            };
            let dq = radial + f * params.coupling;
            let dv = f * params.scalar_mass2 + q * params.coupling;
            (dq, dv)
        }))
        .with_sheet(
            alloc::vec![
                DVector::from_vec(alloc::vec![0.0]),
                DVector::from_vec(alloc::vec![core::f64::consts::PI]),
            ],
            Box::new(|q| q[0] > 0.0),
        )
    }

    pub fn so2_bead_default() -> Self {
        Self::so2_bead(So2BeadParams::default())
    }

    /// Rotation-symmetric system of two vectors in space coupled to an
    /// adjoint scalar triplet. Gauge condition aligns `Q1` with the x-axis
    /// and puts `Q2` in the upper xy half-plane:
    /// `chi = (Q1^2, Q1^3, Q2^3)`, sheet `Q1^1 > 0 && Q2^2 > 0`.
    pub fn so3_two_vector(params: So3TwoVectorParams) -> Self {
        let group: Arc<dyn LieGroup> = Arc::new(crate::lie::Spin3::so3());
        let g_action = group.clone();
        let action: QMap = Box::new(move |q, a| {
            let m = g_action.matrix_rep(&g_action.inverse(a));
            let mut out = DVector::zeros(6);
            for half in 0..2 {
                let x = DVector::from_fn(3, |i, _| q[3 * half + i]);
                let y = &m * x;
                for i in 0..3 {
                    out[3 * half + i] = y[i];
                }
            }
            out
        });
        let chi: PointVector = Box::new(|q| DVector::from_vec(alloc::vec![q[1], q[2], q[5]]));
        let pot: Potential = Box::new(move |q, f| {
            let q1 = q.rows(0, 3);
            let q2 = q.rows(3, 3);
            let d1 = q1.norm() - params.r1;
            let d2 = q2.norm() - params.r2;
            0.5 * params.k1 * d1 * d1
                + 0.5 * params.k2 * d2 * d2
                + params.c12 * q1.dot(&q2)
                + params.cf * q2.dot(f)
                + 0.5 * params.scalar_mass2 * f.norm_squared()
        });
        SystemDef::new(
            "so3-two-vector",
            group,
            6,
            DMatrix::identity(6, 6),
            DMatrix::identity(3, 3),
            action,
            chi,
            pot,
        )
        .with_killing_q(Box::new(|q| {
            // Column alpha is e_alpha x Q on each vector: blocks -[Q_i]x.
            let mut k = DMatrix::zeros(6, 3);
            for half in 0..2 {
                let x = [q[3 * half], q[3 * half + 1], q[3 * half + 2]];
                let cross = DMatrix::from_row_slice(
                    3,
                    3,
                    &[0.0, -x[2], x[1], x[2], 0.0, -x[0], -x[1], x[0], 0.0],
                );
                for i in 0..3 {
                    for j in 0..3 {
                        k[(3 * half + i, j)] = -cross[(i, j)];
                    }
                }
            }
            k
        }))
        .with_killing_q_deriv(Box::new(|_q| {
            // d/dQ^b of the linear blocks -[Q_i]x: constant tensors.
            let mut out = Vec::with_capacity(6);
            for b in 0..6usize {
                let half = b / 3;
                let comp = b % 3;
                let mut e = [0.0; 3];
                e[comp] = 1.0;
                let cross = DMatrix::from_row_slice(
                    3,
                    3,
                    &[0.0, -e[2], e[1], e[2], 0.0, -e[0], -e[1], e[0], 0.0],
                );
                let mut d = DMatrix::zeros(6, 3);
                for i in 0..3 {
                    for j in 0..3 {
                        d[(3 * half + i, j)] = -cross[(i, j)];
                    }
                }
                out.push(d);
            }
            out
        }))
        .with_chi_jacobian(Box::new(|_q| {
            let mut j = DMatrix::zeros(3, 6);
            j[(0, 1)] = 1.0;
            j[(1, 2)] = 1.0;
            j[(2, 5)] = 1.0;
            j
        }))
        .with_chi_second(Box::new(|_q| Tensor3::zeros(3, 6, 6)))
        .with_potential_grad(Box::new(move |q, f| {
            let q1 = q.rows(0, 3).into_owned();
            let q2 = q.rows(3, 3).into_owned();
            let n1 = q1.norm();
            let n2 = q2.norm();
            let g1 = if n1 > 0.0 {
                &q1 * (params.k1 * (n1 - params.r1) / n1)
            } else {
                DVector::zeros(3)
            } + &q2 * params.c12;
            let g2 = if n2 > 0.0 {
                &q2 * (params.k2 * (n2 - params.r2) / n2)
            } else {
                DVector::zeros(3)
            } + &q1 * params.c12
                + f * params.cf;
            let mut dq = DVector::zeros(6);
            for i in 0..3 {
                dq[i] = g1[i];
                dq[3 + i] = g2[i];
            }
            let dv = f * params.scalar_mass2 + &q2 * params.cf;
            (dq, dv)
        }))
        .with_sheet(
            alloc::vec![
                DVector::zeros(3),
                DVector::from_vec(alloc::vec![core::f64::consts::PI, 0.0, 0.0]),
                DVector::from_vec(alloc::vec![0.0, core::f64::consts::PI, 0.0]),
                DVector::from_vec(alloc::vec![0.0, 0.0, core::f64::consts::PI]),
            ],
            Box::new(|q| q[0] > 0.0 && q[4] > 0.0),
        )
    }

    pub fn so3_two_vector_default() -> Self {
        Self::so3_two_vector(So3TwoVectorParams::default())
    }
}
