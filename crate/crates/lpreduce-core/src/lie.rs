//! Exponential-chart Lie group operations.
//!
//! Groups are presented in canonical coordinates of the first kind: an
//! element is a coordinate vector `a` standing for `exp(sum_alpha a^alpha
//! T_alpha)` in the faithful matrix picture. All convention-sensitive objects
//! are defined through that picture and locked by finite-difference tests:
//!
//! * `compose(a, b)` is the chart expression of the matrix product, so
//!   `matrix_rep` is a homomorphism;
//! * `u_matrix(a)` is the left Maurer-Cartan coefficient matrix
//!   (`M^-1 dM = (u da)^alpha T_alpha`), equal to `phi1(-ad_a)` where
//!   `phi1(z) = (e^z - 1)/z`;
//! * `u_bar_matrix(a) = u_matrix(-a) = phi1(+ad_a)` is the right coefficient;
//! * `v_matrix`, `v_bar_matrix` are their inverses (failing with a
//!   chart-domain error where the chart degenerates);
//! * `rho(a) = exp(ad_a)` is the adjoint representation in coordinates; it
//!   satisfies `rho = u_bar * v` and is a homomorphism.
//!
//! The scalar-multiplet representation `rep_v(a) = exp(-sum a^alpha
//! Jbar_alpha)` uses right-action generators `Jbar` with `[Jbar_a, Jbar_b] =
//! -c^g_{ab} Jbar_g`, so that `rep_v` composes in the same order as
//! `matrix_rep`.

use crate::error::{Error, Result};
use crate::fmath;
use alloc::sync::Arc;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

/// Scaling-and-squaring matrix exponential together with
/// `phi1(M) = integral_0^1 exp(s M) ds = (e^M - 1) M^-1` (defined for all M
/// by the series). The doubling step uses `exp(2M) = exp(M)^2` and
/// `phi1(2M) = (exp(M) + I) phi1(M) / 2`.
pub fn mat_exp_phi1(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let norm = crate::linalg::max_abs(m) * n as f64;
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.25 && squarings < 64 {
        scale *= 0.5;
        squarings += 1;
    }
    let scaled = m * scale;

    let mut exp = DMatrix::identity(n, n);
    let mut phi = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=13u32 {
        term = (&term * &scaled) / (k as f64);
        exp += &term;
        phi += &term / ((k + 1) as f64);
    }
    for _ in 0..squarings {
        phi = (&exp + DMatrix::identity(n, n)) * &phi * 0.5;
        exp = &exp * &exp;
    }
    (exp, phi)
}

/// Matrix exponential (scaling and squaring).
pub fn mat_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    mat_exp_phi1(m).0
}

/// A finite-dimensional Lie group in an exponential coordinate chart,
/// together with a linear representation on the scalar-multiplet space `V`.
pub trait LieGroup: Send + Sync {
    /// Group dimension (number of chart coordinates).
    fn dim(&self) -> usize;

    /// Dimension of the scalar-multiplet representation space `V`.
    fn rep_dim(&self) -> usize;

    /// Structure constant `c^gamma_{alpha beta}` of the chart basis.
    fn structure_constant(&self, gamma: usize, alpha: usize, beta: usize) -> f64;

    /// Representation generator `Jbar_alpha` on `V` (right-action convention:
    /// `[Jbar_a, Jbar_b] = -c^g_{ab} Jbar_g`).
    fn jbar(&self, alpha: usize) -> DMatrix<f64>;

    /// Chart composition: coordinates of the product of the elements with
    /// coordinates `a` and `b` (in that order).
    fn compose(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64>;

    /// Coordinates of the inverse element.
    fn inverse(&self, a: &DVector<f64>) -> DVector<f64>;

    /// Faithful matrix form `M(a) = exp(sum a^alpha T_alpha)`.
    fn matrix_rep(&self, a: &DVector<f64>) -> DMatrix<f64>;

    /// Whether `a` lies strictly inside the coordinate chart.
    fn in_chart(&self, a: &DVector<f64>) -> bool;

    /// Short label for reports.
    fn label(&self) -> &'static str;

    /// Coordinates of the identity element.
    fn identity_coords(&self) -> DVector<f64> {
        DVector::zeros(self.dim())
    }

    /// Adjoint action of the algebra on itself: `(ad_a)^g_b = a^alpha
    /// c^g_{alpha b}`.
    fn ad(&self, a: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |gamma, beta| {
            (0..n)
                .map(|alpha| a[alpha] * self.structure_constant(gamma, alpha, beta))
                .sum()
        })
    }

    /// Cartan-Killing form `k_{ab} = c^t_{ma} c^m_{tb}`.
    fn cartan_killing(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |alpha, beta| {
            let mut sum = 0.0;
            for tau in 0..n {
                for mu in 0..n {
                    sum += self.structure_constant(tau, mu, alpha)
                        * self.structure_constant(mu, tau, beta);
                }
            }
            sum
        })
    }

    /// Left Maurer-Cartan coefficient matrix `u(a) = phi1(-ad_a)`.
    fn u_matrix(&self, a: &DVector<f64>) -> DMatrix<f64> {
        mat_exp_phi1(&(-self.ad(a))).1
    }

    /// Right Maurer-Cartan coefficient matrix `u_bar(a) = u(-a) =
    /// phi1(+ad_a)`.
    fn u_bar_matrix(&self, a: &DVector<f64>) -> DMatrix<f64> {
        mat_exp_phi1(&self.ad(a)).1
    }

    /// Inverse of `u_matrix`; fails with a chart-domain error where the chart
    /// degenerates.
    fn v_matrix(&self, a: &DVector<f64>) -> Result<DMatrix<f64>> {
        if !self.in_chart(a) {
            return Err(Error::ChartDomain { norm: a.norm() });
        }
        crate::linalg::LuSolver::new(&self.u_matrix(a), "u-matrix")
            .and_then(|lu| lu.inverse(self.dim()))
            .map_err(|_| Error::ChartDomain { norm: a.norm() })
    }

    /// Inverse of `u_bar_matrix`.
    fn v_bar_matrix(&self, a: &DVector<f64>) -> Result<DMatrix<f64>> {
        if !self.in_chart(a) {
            return Err(Error::ChartDomain { norm: a.norm() });
        }
        crate::linalg::LuSolver::new(&self.u_bar_matrix(a), "u-bar-matrix")
            .and_then(|lu| lu.inverse(self.dim()))
            .map_err(|_| Error::ChartDomain { norm: a.norm() })
    }

    /// Adjoint representation in coordinates, `rho(a) = exp(ad_a)`; a
    /// homomorphism with `rho = u_bar * v`.
    fn rho(&self, a: &DVector<f64>) -> DMatrix<f64> {
        mat_exp(&self.ad(a))
    }

    /// Inverse adjoint, `rho_bar(a) = rho(a)^-1 = exp(-ad_a)`.
    fn rho_bar(&self, a: &DVector<f64>) -> DMatrix<f64> {
        mat_exp(&(-self.ad(a)))
    }

    /// Representation of the element `a` on the scalar-multiplet space:
    /// `D(a) = exp(-sum a^alpha Jbar_alpha)`; composes like `matrix_rep`.
    fn rep_v(&self, a: &DVector<f64>) -> DMatrix<f64> {
        let nv = self.rep_dim();
        let mut x = DMatrix::zeros(nv, nv);
        for alpha in 0..self.dim() {
            x += self.jbar(alpha) * (-a[alpha]);
        }
        mat_exp(&x)
    }

    /// Representation of the inverse element on `V`.
    fn rep_v_bar(&self, a: &DVector<f64>) -> DMatrix<f64> {
        self.rep_v(&self.inverse(a))
    }
}

/// Levi-Civita symbol on three indices.
fn epsilon(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// The circle group in the angle chart `(-pi, pi]`, acting on a charged
/// two-component scalar plane.
#[derive(Debug, Clone, Copy, Default)]
pub struct So2;

impl LieGroup for So2 {
    fn dim(&self) -> usize {
        1
    }

    fn rep_dim(&self) -> usize {
        2
    }

    fn structure_constant(&self, _gamma: usize, _alpha: usize, _beta: usize) -> f64 {
        0.0
    }

    fn jbar(&self, _alpha: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
    }

    fn compose(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(alloc::vec![fmath::wrap_angle(a[0] + b[0])])
    }

    fn inverse(&self, a: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(alloc::vec![fmath::wrap_angle(-a[0])])
    }

    fn matrix_rep(&self, a: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = (fmath::sin(a[0]), fmath::cos(a[0]));
        DMatrix::from_row_slice(2, 2, &[c, s, -s, c])
    }

    fn in_chart(&self, _a: &DVector<f64>) -> bool {
        true
    }

    fn label(&self) -> &'static str {
        "so2"
    }

    fn u_matrix(&self, _a: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }

    fn u_bar_matrix(&self, _a: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }

    fn v_matrix(&self, _a: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(1, 1))
    }

    fn v_bar_matrix(&self, _a: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(1, 1))
    }

    fn rho(&self, _a: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }

    fn rho_bar(&self, _a: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }

    fn rep_v(&self, a: &DVector<f64>) -> DMatrix<f64> {
        // exp(-a Jbar) with Jbar the counterclockwise generator: a clockwise
        // rotation, matching `matrix_rep`.
        self.matrix_rep(a)
    }
}

/// Unit quaternion `(w, x, y, z)` helpers for the rotation groups.
fn quat_mul(p: [f64; 4], q: [f64; 4]) -> [f64; 4] {
    [
        p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
        p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
        p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
        p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0],
    ]
}

/// The rotation group (single cover) or its double cover, sharing the same
/// algebra: structure constants `c^g_{ab} = -epsilon_{abg}` in the chart
/// basis, scalar multiplets in the three-dimensional adjoint representation.
///
/// Charts: coordinates `a` with `|a| = theta` the (double-cover) rotation
/// angle. The single cover logs back to the canonical range `theta <= pi`;
/// the double cover keeps `theta < 2 pi`, where the chart degenerates.
#[derive(Debug, Clone, Copy)]
pub struct Spin3 {
    double_cover: bool,
}

impl Spin3 {
    /// The rotation group SO(3) (canonical log range `theta <= pi`).
    pub fn so3() -> Self {
        Self {
            double_cover: false,
        }
    }

    /// The double cover SU(2) (chart range `theta < 2 pi`).
    pub fn su2() -> Self {
        Self { double_cover: true }
    }

    /// Chart coordinates -> unit quaternion `(cos(t/2), -sin(t/2) axis)`.
    fn quat(&self, a: &DVector<f64>) -> [f64; 4] {
        let theta = a.norm();
        if theta < 1e-300 {
            return [1.0, 0.0, 0.0, 0.0];
        }
        let half = 0.5 * theta;
        let scale = -fmath::sin(half) / theta;
        [
            fmath::cos(half),
            scale * a[0],
            scale * a[1],
            scale * a[2],
        ]
    }

    /// Unit quaternion -> chart coordinates (inverse of `quat`).
    fn log(&self, q: [f64; 4]) -> DVector<f64> {
        let mut q = q;
        if !self.double_cover && q[0] < 0.0 {
            // The single cover identifies antipodal quaternions; keep the
            // canonical representative with theta <= pi.
            for c in q.iter_mut() {
                *c = -*c;
            }
        }
        let s = fmath::sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        let theta = 2.0 * fmath::atan2(s, q[0]);
        let scale = if s > 1e-12 {
            -theta / s
        } else if q[0] > 0.0 {
            // Near the identity: -theta/s -> -2/w.
            -2.0 / q[0]
        } else {
            // The antipode of the double cover: axis indeterminate, chart
            // boundary. Return a boundary representative on the x-axis.
            return DVector::from_vec(alloc::vec![theta, 0.0, 0.0]);
        };
        DVector::from_vec(alloc::vec![scale * q[1], scale * q[2], scale * q[3]])
    }
}

impl LieGroup for Spin3 {
    fn dim(&self) -> usize {
        3
    }

    fn rep_dim(&self) -> usize {
        3
    }

    fn structure_constant(&self, gamma: usize, alpha: usize, beta: usize) -> f64 {
        -epsilon(alpha, beta, gamma)
    }

    fn jbar(&self, alpha: usize) -> DMatrix<f64> {
        // (Jbar_alpha)^g_b = epsilon_{alpha b g} = -(ad_alpha)^g_b.
        DMatrix::from_fn(3, 3, |gamma, beta| epsilon(alpha, beta, gamma))
    }

    fn compose(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        self.log(quat_mul(self.quat(a), self.quat(b)))
    }

    fn inverse(&self, a: &DVector<f64>) -> DVector<f64> {
        -a
    }

    fn matrix_rep(&self, a: &DVector<f64>) -> DMatrix<f64> {
        let q = self.quat(a);
        if self.double_cover {
            // Left multiplication by q on the quaternion space.
            let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
            DMatrix::from_row_slice(
                4,
                4,
                &[
                    w, -x, -y, -z, //
                    x, w, -z, y, //
                    y, z, w, -x, //
                    z, -y, x, w,
                ],
            )
        } else {
            // Rotation matrix of q: R = I + 2 w [v]x + 2 [v]x^2.
            let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
            let vx = DMatrix::from_row_slice(3, 3, &[0.0, -z, y, z, 0.0, -x, -y, x, 0.0]);
            DMatrix::identity(3, 3) + &vx * (2.0 * w) + &vx * &vx * 2.0
        }
    }

    fn in_chart(&self, a: &DVector<f64>) -> bool {
        a.norm() < 2.0 * core::f64::consts::PI * (1.0 - 1e-12)
    }

    fn label(&self) -> &'static str {
        if self.double_cover {
            "su2"
        } else {
            "so3"
        }
    }

    fn rho(&self, a: &DVector<f64>) -> DMatrix<f64> {
        // Closed form for ad^3 = -theta^2 ad:
        // exp(ad) = I + sin(t)/t ad + (1 - cos t)/t^2 ad^2.
        let theta = a.norm();
        let ad = self.ad(a);
        if theta < 1e-4 {
            return mat_exp(&ad);
        }
        let c1 = fmath::sin(theta) / theta;
        let c2 = (1.0 - fmath::cos(theta)) / (theta * theta);
        DMatrix::identity(3, 3) + &ad * c1 + &ad * &ad * c2
    }

    fn rho_bar(&self, a: &DVector<f64>) -> DMatrix<f64> {
        self.rho(&-a)
    }

    fn rep_v(&self, a: &DVector<f64>) -> DMatrix<f64> {
        // The scalar multiplet is the adjoint: D = rho.
        self.rho(a)
    }

    fn u_matrix(&self, a: &DVector<f64>) -> DMatrix<f64> {
        // phi1(-ad): I - (1 - cos t)/t^2 ad + (t - sin t)/t^3 ad^2.
        let theta = a.norm();
        let ad = self.ad(a);
        if theta < 1e-4 {
            return mat_exp_phi1(&(-&ad)).1;
        }
        let c1 = (1.0 - fmath::cos(theta)) / (theta * theta);
        let c2 = (theta - fmath::sin(theta)) / (theta * theta * theta);
        DMatrix::identity(3, 3) - &ad * c1 + &ad * &ad * c2
    }

    fn u_bar_matrix(&self, a: &DVector<f64>) -> DMatrix<f64> {
        self.u_matrix(&-a)
    }
}

/// Direct product of `copies` identical factors, acting blockwise. Chart
/// coordinates, the multiplet space, and all coefficient matrices are
/// concatenations/block-diagonals of the per-factor ones.
///
/// Index layout: group coordinate `site * base.dim() + alpha`, multiplet
/// component `site * base.rep_dim() + m`.
#[derive(Clone)]
pub struct ProductGroup {
    base: Arc<dyn LieGroup>,
    copies: usize,
}

impl ProductGroup {
    pub fn new(base: Arc<dyn LieGroup>, copies: usize) -> Self {
        assert!(copies > 0, "product group needs at least one factor");
        Self { base, copies }
    }

    pub fn base(&self) -> &Arc<dyn LieGroup> {
        &self.base
    }

    pub fn copies(&self) -> usize {
        self.copies
    }

    fn site_coords(&self, a: &DVector<f64>, site: usize) -> DVector<f64> {
        let bd = self.base.dim();
        DVector::from_fn(bd, |i, _| a[site * bd + i])
    }

    /// Apply a per-site group operation and concatenate the results.
    fn map_sites<F>(&self, a: &DVector<f64>, op: F) -> DVector<f64>
    where
        F: Fn(&DVector<f64>) -> DVector<f64>,
    {
        let bd = self.base.dim();
        let mut out = DVector::zeros(self.copies * bd);
        for s in 0..self.copies {
            let r = op(&self.site_coords(a, s));
            for i in 0..bd {
                out[s * bd + i] = r[i];
            }
        }
        out
    }

    /// Assemble a block-diagonal matrix from per-site blocks.
    fn block_diag<F>(&self, block_dim: usize, mut op: F) -> DMatrix<f64>
    where
        F: FnMut(usize) -> DMatrix<f64>,
    {
        let n = self.copies * block_dim;
        let mut out = DMatrix::zeros(n, n);
        for s in 0..self.copies {
            let b = op(s);
            debug_assert_eq!(b.nrows(), block_dim);
            for i in 0..block_dim {
                for j in 0..block_dim {
                    out[(s * block_dim + i, s * block_dim + j)] = b[(i, j)];
                }
            }
        }
        out
    }
}

impl LieGroup for ProductGroup {
    fn dim(&self) -> usize {
        self.copies * self.base.dim()
    }

    fn rep_dim(&self) -> usize {
        self.copies * self.base.rep_dim()
    }

    fn structure_constant(&self, gamma: usize, alpha: usize, beta: usize) -> f64 {
        let bd = self.base.dim();
        let (sg, g) = (gamma / bd, gamma % bd);
        let (sa, a) = (alpha / bd, alpha % bd);
        let (sb, b) = (beta / bd, beta % bd);
        if sg == sa && sa == sb {
            self.base.structure_constant(g, a, b)
        } else {
            0.0
        }
    }

    fn jbar(&self, alpha: usize) -> DMatrix<f64> {
        let bd = self.base.dim();
        let brd = self.base.rep_dim();
        let (site, a) = (alpha / bd, alpha % bd);
        let block = self.base.jbar(a);
        let n = self.rep_dim();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..brd {
            for j in 0..brd {
                out[(site * brd + i, site * brd + j)] = block[(i, j)];
            }
        }
        out
    }

    fn compose(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let bd = self.base.dim();
        let mut out = DVector::zeros(self.dim());
        for s in 0..self.copies {
            let r = self
                .base
                .compose(&self.site_coords(a, s), &self.site_coords(b, s));
            for i in 0..bd {
                out[s * bd + i] = r[i];
            }
        }
        out
    }

    fn inverse(&self, a: &DVector<f64>) -> DVector<f64> {
        self.map_sites(a, |x| self.base.inverse(x))
    }

    fn matrix_rep(&self, a: &DVector<f64>) -> DMatrix<f64> {
        let block_dim = self.base.matrix_rep(&self.base.identity_coords()).nrows();
        self.block_diag(block_dim, |s| self.base.matrix_rep(&self.site_coords(a, s)))
    }

    fn in_chart(&self, a: &DVector<f64>) -> bool {
        (0..self.copies).all(|s| self.base.in_chart(&self.site_coords(a, s)))
    }

    fn label(&self) -> &'static str {
        "product"
    }

    fn u_matrix(&self, a: &DVector<f64>) -> DMatrix<f64> {
        self.block_diag(self.base.dim(), |s| {
            self.base.u_matrix(&self.site_coords(a, s))
        })
    }

    fn u_bar_matrix(&self, a: &DVector<f64>) -> DMatrix<f64> {
        self.block_diag(self.base.dim(), |s| {
            self.base.u_bar_matrix(&self.site_coords(a, s))
        })
    }

    fn v_matrix(&self, a: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut blocks = Vec::with_capacity(self.copies);
        for s in 0..self.copies {
            blocks.push(self.base.v_matrix(&self.site_coords(a, s))?);
        }
        Ok(self.block_diag(self.base.dim(), |s| blocks[s].clone()))
    }

    fn v_bar_matrix(&self, a: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut blocks = Vec::with_capacity(self.copies);
        for s in 0..self.copies {
            blocks.push(self.base.v_bar_matrix(&self.site_coords(a, s))?);
        }
        Ok(self.block_diag(self.base.dim(), |s| blocks[s].clone()))
    }

    fn rho(&self, a: &DVector<f64>) -> DMatrix<f64> {
        self.block_diag(self.base.dim(), |s| self.base.rho(&self.site_coords(a, s)))
    }

    fn rho_bar(&self, a: &DVector<f64>) -> DMatrix<f64> {
        self.block_diag(self.base.dim(), |s| {
            self.base.rho_bar(&self.site_coords(a, s))
        })
    }

    fn rep_v(&self, a: &DVector<f64>) -> DMatrix<f64> {
        self.block_diag(self.base.rep_dim(), |s| {
            self.base.rep_v(&self.site_coords(a, s))
        })
    }

    fn rep_v_bar(&self, a: &DVector<f64>) -> DMatrix<f64> {
        self.block_diag(self.base.rep_dim(), |s| {
            self.base.rep_v_bar(&self.site_coords(a, s))
        })
    }
}
