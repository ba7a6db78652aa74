//! Central numeric tolerances and solver limits.
//!
//! Every hard-coded tolerance in the engine lives here with a short
//! justification, so a reviewer can audit the numerics in one place and tests
//! can reference the same constants they exercise.

/// Relative scale for finite-difference steps: `h = FD_STEP_SCALE * max(1, |x|)`.
///
/// With one Richardson refinement of a central difference the truncation error
/// is O(h^4) while the roundoff error is O(eps/h); `1e-6` balances the two at
/// roughly `1e-9`-`1e-10` absolute error for quantities of order one, well
/// inside every agreement tolerance used by the dual-pathway checks.
pub const FD_STEP_SCALE: f64 = 1e-6;

/// Agreement tolerance between analytic first derivatives and their
/// Richardson-refined central-difference counterparts.
pub const FD_FIRST_DERIV: f64 = 1e-6;

/// Agreement tolerance for curvature and Christoffel contractions between the
/// closed-form pathway and the finite-difference pathway. These involve one
/// derivative of already-assembled blocks, so the noise floor is higher than
/// for plain first derivatives.
pub const FD_CONTRACTION: f64 = 1e-5;

/// Agreement tolerance between the two closed-form representations of the
/// scalar-sector connection partial derivatives (both analytic, so only
/// roundoff separates them).
pub const CONNECTION_PARTIAL_EQUIV: f64 = 1e-8;

/// Newton solve: residual tolerance on the gauge-fixing condition.
pub const NEWTON_TOL: f64 = 1e-12;

/// Newton solve: iteration cap.
pub const NEWTON_MAX_ITER: usize = 50;

/// Newton solve: maximum step halvings per iteration before declaring failure.
pub const NEWTON_MAX_HALVINGS: usize = 8;

/// Reciprocal condition estimate below which a factorization is reported as
/// singular rather than merely ill-conditioned.
pub const SINGULAR_RCOND: f64 = 1e-12;

/// Tolerance on the defining invariant `u(a) * v(a) = I` of the Maurer-Cartan
/// coefficient matrices (pure roundoff; the matrices are inverses by
/// construction).
pub const CHART_INVERSE: f64 = 1e-12;

/// Tolerance on the reproducing property `connection(killing) = identity`
/// (exact by construction of the mechanical connection; roundoff only).
pub const CONNECTION_REPRODUCING: f64 = 1e-12;

/// Tolerance on horizontality: the connection evaluated on projected
/// (horizontal) vectors. One matrix solve deeper than the reproducing
/// property, hence the looser bound.
pub const CONNECTION_HORIZONTAL: f64 = 1e-9;

/// Tolerance for the algebraic identity suite of the reduction geometry
/// (metric compatibilities, projector relations). These chain several solves
/// and products.
pub const GEOMETRY_IDENTITY: f64 = 1e-8;

/// Tolerance on adapted-coordinate round trips and equivariance checks.
pub const CHART_ROUND_TRIP: f64 = 1e-10;

/// Tolerance on equivariance of the adapted-coordinate map under a prior
/// group displacement of the input point.
pub const CHART_EQUIVARIANCE: f64 = 1e-9;

/// Constraint residual treated as "on the gauge slice" by state validation
/// and by the integrator's retraction bookkeeping.
pub const CONSTRAINT_RESIDUAL: f64 = 1e-9;

/// Residual tolerance for orbit-space (Green function) linear solves on the
/// lattice.
pub const GREEN_RESIDUAL: f64 = 1e-10;
