//! Oracle tests for system definitions: Killing fields, the gauge-fixing
//! (Faddeev-Popov) operator, and the slice projectors.
//!
//! Hand-computed values for the circle-symmetric planar system ("so2-bead"):
//! the action rotates `Q` counterclockwise by the group angle, the gauge
//! condition is `chi(Q) = Q^2` (second component), and the slice is the
//! positive `Q^1` axis. At `Q = (1, 1)`:
//!   K(Q) = (-Q^2, Q^1) = (-1, 1),  chi' = (0, 1),  Phi = K^A chi_,A = Q^1 = 1.
//! At `Q = (0, 1)` the slice condition is tangent to the orbit: Phi = 0.
//! On the slice at `(r, 0)`: Phi = r, N = P_perp = diag(1, 0) in the Q-block.

use lpreduce_core::system::SystemDef;
use lpreduce_core::{fd, Error};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec2(a: f64, b: f64) -> DVector<f64> {
    DVector::from_vec(vec![a, b])
}

fn bead() -> SystemDef {
    SystemDef::so2_bead_default()
}

fn two_vector() -> SystemDef {
    SystemDef::so3_two_vector_default()
}

#[test]
fn so2_killing_field_hand_values() {
    // [PAPER-STYLE HAND VALUE] K(Q) = (-Q^2, Q^1); at Q = (1,1) this is
    // (-1, 1). The scalar multiplet Killing field is f rotated the same way.
    let sys = bead();
    let k = sys.killing_q(&vec2(1.0, 1.0));
    assert_eq!(k.shape(), (2, 1));
    assert!((k[(0, 0)] + 1.0).abs() < 1e-14);
    assert!((k[(1, 0)] - 1.0).abs() < 1e-14);

    let kv = sys.killing_v(&vec2(0.3, -0.2));
    assert!((kv[(0, 0)] - 0.2).abs() < 1e-14);
    assert!((kv[(1, 0)] - 0.3).abs() < 1e-14);
}

#[test]
fn killing_fields_match_fd_of_action_all_systems() {
    // [DERIVED] K_alpha(Q) = d/dt F(Q, t e_alpha) |_{t=0} — the
    // infinitesimal generator of the right action. For the builtin matrix
    // actions F(Q, a) = M(a)^-1 Q this gives K_alpha = -T_alpha Q.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for sys in [bead(), two_vector()] {
        let g = sys.group();
        for _ in 0..10 {
            let q = DVector::from_fn(sys.dim_q(), |_, _| rng.gen_range(-1.5..1.5));
            let k = sys.killing_q(&q);
            for alpha in 0..g.dim() {
                let col = fd::partial_vector(
                    |t: &DVector<f64>| {
                        let mut a = DVector::zeros(g.dim());
                        a[alpha] = t[0];
                        Ok(sys.action_q(&q, &a))
                    },
                    &DVector::zeros(1),
                    0,
                )
                .unwrap();
                assert!(
                    (col - k.column(alpha)).amax() < 1e-8,
                    "{}: Killing vs FD of action",
                    sys.name()
                );
            }
        }
    }
}

#[test]
fn so2_faddeev_popov_hand_values_and_singularity() {
    let sys = bead();
    // [HAND VALUE] Phi = [Q^1] at Q = (1,1) -> [1].
    let (phi, _phi_inv) = sys.faddeev_popov(&vec2(1.0, 1.0)).unwrap();
    assert_eq!(phi.shape(), (1, 1));
    assert!((phi[(0, 0)] - 1.0).abs() < 1e-14);

    // [HAND VALUE] At Q = (0, 1) the orbit is tangent to the slice
    // condition: Phi = 0 and the solve must fail as GaugeSingular.
    match sys.faddeev_popov(&vec2(0.0, 1.0)) {
        Err(Error::GaugeSingular { .. }) => {}
        other => panic!("expected GaugeSingular, got {other:?}"),
    }
}

#[test]
fn so3_faddeev_popov_invertible_at_generic_point() {
    // [DERIVED] For the two-vector system at a generic configuration the
    // 3x3 gauge-fixing operator is invertible; Phi * Phi^-1 = I.
    let sys = two_vector();
    let mut q = DVector::zeros(6);
    q.copy_from_slice(&[1.1, 0.2, -0.3, 0.4, 1.3, 0.25]);
    let (phi, phi_inv) = sys.faddeev_popov(&q).unwrap();
    let id = DMatrix::identity(3, 3);
    assert!(((&phi * &phi_inv) - id).abs().max() < 1e-12);
}

#[test]
fn projectors_on_the_slice_hand_values() {
    // [HAND VALUE] so2-bead on the slice at (r, 0), f = 0: the orbit
    // direction is (0, r); the oblique and orthogonal projectors agree and
    // equal diag(1, 0) on the Q-block, and the scalar block of the oblique
    // projector vanishes.
    let sys = bead();
    let q = vec2(2.0, 0.0);
    let f = vec2(0.0, 0.0);
    let projs = sys.projectors(&q, &f).unwrap();
    let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    assert!((&projs.n_qq - &expect).abs().max() < 1e-14, "N_qq");
    assert!((&projs.p_perp - &expect).abs().max() < 1e-14, "P_perp");
    assert!(projs.n_vq.abs().max() < 1e-14, "N_vq vanishes at f = 0");

    // With a nonzero multiplet the scalar block picks up the orbit motion of
    // f: N^m_A = -K^m_alpha (Phi^-1 chi')^alpha_A. Here K^m(f) = (-f^2, f^1),
    // (Phi^-1 chi')^1_A = (0, 1/r): N_vq = -(1/r) * (-f^2, f^1) in column 2.
    let f = vec2(0.5, -0.1);
    let projs = sys.projectors(&q, &f).unwrap();
    let mut expect_vq = DMatrix::zeros(2, 2);
    expect_vq[(0, 1)] = -(-f[1]) / 2.0; // = f^2 / r = -0.05
    expect_vq[(1, 1)] = -(f[0]) / 2.0; // = -f^1 / r = -0.25
    assert!((&projs.n_vq - &expect_vq).abs().max() < 1e-13, "N_vq");
}

#[test]
fn projector_algebra_random_points() {
    // [DERIVED] N and P_perp are projectors (X^2 = X); N annihilates the
    // Killing directions; P_perp is G-orthogonal (G P = P^T G) and maps onto
    // ker(chi'). The trace of N equals dim Q - dim g (rank oracle via SVD of
    // the complementary projector onto the orbit directions).
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for sys in [bead(), two_vector()] {
        let n_q = sys.dim_q();
        let dim_g = sys.group().dim();
        let mut accepted = 0;
        while accepted < 8 {
            let q = DVector::from_fn(n_q, |_, _| rng.gen_range(-1.5..1.5));
            let f = DVector::from_fn(sys.dim_v(), |_, _| rng.gen_range(-1.0..1.0));
            let Ok(projs) = sys.projectors(&q, &f) else {
                continue; // near-singular sample; draw another
            };
            accepted += 1;
            let n = &projs.n_qq;
            let p = &projs.p_perp;
            assert!((n * n - n).abs().max() < 1e-9, "{}: N idempotent", sys.name());
            assert!((p * p - p).abs().max() < 1e-9, "{}: P idempotent", sys.name());
            let k = sys.killing_q(&q);
            assert!((n * &k).abs().max() < 1e-9, "{}: N K = 0", sys.name());
            // chi' P = 0: image of P lies in the constraint tangent space.
            let chij = sys.chi_jacobian(&q).unwrap();
            assert!((&chij * p).abs().max() < 1e-9, "{}: chi' P = 0", sys.name());
            let gq = sys.metric_q(&q);
            assert!(
                (&gq * p - (&gq * p).transpose()).abs().max() < 1e-9,
                "{}: P G-symmetric",
                sys.name()
            );
            // Rank oracle: trace N = n_q - dim_g, and the complementary
            // projector has exactly dim_g singular values near 1.
            let tr: f64 = n.trace();
            assert!(
                (tr - (n_q - dim_g) as f64).abs() < 1e-8,
                "{}: trace N",
                sys.name()
            );
            let complement = DMatrix::identity(n_q, n_q) - n;
            let sv = complement.clone().svd(false, false).singular_values;
            let big = sv.iter().filter(|&&s| s > 0.5).count();
            assert_eq!(big, dim_g, "{}: rank of I - N", sys.name());
        }
    }
}

#[test]
fn potential_is_action_invariant_and_gradient_matches_fd() {
    // [DERIVED] V(F(Q,a), D(a)^-1-action f) = V(Q, f) for builtin systems
    // (invariant construction from |Q|, |f|, Q.f type scalars); the analytic
    // gradient agrees with the FD pathway.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for sys in [bead(), two_vector()] {
        let g = sys.group();
        for _ in 0..10 {
            let q = DVector::from_fn(sys.dim_q(), |_, _| rng.gen_range(-1.2..1.2));
            let f = DVector::from_fn(sys.dim_v(), |_, _| rng.gen_range(-1.0..1.0));
            let a = DVector::from_fn(g.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let v0 = sys.potential(&q, &f);
            let qg = sys.action_q(&q, &a);
            let fg = sys.action_v(&f, &a);
            let v1 = sys.potential(&qg, &fg);
            assert!((v0 - v1).abs() < 1e-12, "{}: V invariance", sys.name());

            let (dq, dv) = sys.potential_grad(&q, &f).unwrap();
            let fd_q = fd::gradient(|x: &DVector<f64>| Ok(sys.potential(x, &f)), &q).unwrap();
            let fd_v = fd::gradient(|x: &DVector<f64>| Ok(sys.potential(&q, x)), &f).unwrap();
            assert!((dq - fd_q).amax() < 1e-7, "{}: dV/dQ", sys.name());
            assert!((dv - fd_v).amax() < 1e-7, "{}: dV/df", sys.name());
        }
    }
}

#[test]
fn metric_is_action_invariant() {
    // [DERIVED] The builtin metrics are flat (identity blocks), so the
    // isometry property reduces to the action matrices being orthogonal.
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for sys in [bead(), two_vector()] {
        let g = sys.group();
        let q = DVector::from_fn(sys.dim_q(), |_, _| rng.gen_range(-1.0..1.0));
        let a = DVector::from_fn(g.dim(), |_, _| rng.gen_range(-1.0..1.0));
        let qg = sys.action_q(&q, &a);
        // Metric pulled back along the linear action equals the metric.
        let m = fd::jacobian(|x: &DVector<f64>| Ok(sys.action_q(x, &a)), &q).unwrap();
        let pulled = m.transpose() * sys.metric_q(&qg) * &m;
        assert!(
            (pulled - sys.metric_q(&q)).abs().max() < 1e-8,
            "{}: isometry",
            sys.name()
        );
        assert!(sys.metric_is_flat(), "{}: builtin metrics are flat", sys.name());
    }
}

#[test]
fn killing_derivative_matches_fd() {
    // [DERIVED] The analytic Killing derivative tensor dK^A_alpha / dQ^B
    // agrees with finite differences of the Killing field.
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for sys in [bead(), two_vector()] {
        let q = DVector::from_fn(sys.dim_q(), |_, _| rng.gen_range(-1.5..1.5));
        let dk = sys.killing_q_deriv(&q).unwrap();
        for b in 0..sys.dim_q() {
            let fd_b =
                fd::partial_matrix(|x: &DVector<f64>| Ok(sys.killing_q(x)), &q, b).unwrap();
            assert!(
                (&dk[b] - &fd_b).abs().max() < 1e-7,
                "{}: dK/dQ^{b}",
                sys.name()
            );
        }
    }
}

#[test]
fn gamma_blocks_are_killing_grams() {
    // [DERIVED] gamma_{ab} = K_a . G . K_b for the Q-sector; at (r, 0) with
    // the so2 system this is [r^2]. The scalar-sector block is the same Gram
    // in G_v: at f = (c, 0) it is [c^2].
    let sys = bead();
    let q = vec2(3.0, 0.0);
    let f = vec2(0.5, 0.0);
    let gamma_q = sys.gamma_q(&q);
    assert!((gamma_q[(0, 0)] - 9.0).abs() < 1e-14);
    let gamma_v = sys.gamma_v(&f);
    assert!((gamma_v[(0, 0)] - 0.25).abs() < 1e-14);
}
