//! Oracle tests for the reduced geometry: orbit metric, mechanical
//! connection, horizontal metric, Christoffel/curvature/orbit-derivative
//! tensors along two independent routes (finite differences of the defining
//! objects vs. closed forms valid for flat ambient metrics), and the
//! projector identities the reduced equations rely on.

use lpreduce_core::frame;
use lpreduce_core::geometry::{self, GeometryCache, Pathway};
use lpreduce_core::system::SystemDef;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn so2_point(r: f64, f1: f64, f2: f64) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from_vec(vec![r, 0.0]),
        DVector::from_vec(vec![f1, f2]),
    )
}

fn random_slice_point(sys: &SystemDef, rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
    let q = match sys.dim_q() {
        2 => DVector::from_vec(vec![rng.gen_range(0.6..1.8), 0.0]),
        6 => DVector::from_vec(vec![
            rng.gen_range(0.6..1.6),
            0.0,
            0.0,
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.6..1.5),
            0.0,
        ]),
        other => panic!("unexpected dimension {other}"),
    };
    let f = DVector::from_fn(sys.dim_v(), |_, _| rng.gen_range(-0.9..0.9));
    (q, f)
}

#[test]
fn orbit_metric_hand_values() {
    // [HAND VALUE] circle system at (r, 0): d = [r^2] without the multiplet,
    // [r^2 + |f|^2] with it (unit metrics).
    let sys = SystemDef::so2_bead_default();
    let (q, f0) = so2_point(3.0, 0.0, 0.0);
    let cache = GeometryCache::new(&sys, &q, &f0, Pathway::ClosedForm).unwrap();
    assert!((cache.d[(0, 0)] - 9.0).abs() < 1e-12);

    let (q, f) = so2_point(2.0, 0.5, -0.3);
    let cache = GeometryCache::new(&sys, &q, &f, Pathway::ClosedForm).unwrap();
    assert!((cache.d[(0, 0)] - (4.0 + 0.25 + 0.09)).abs() < 1e-12);

    // [DERIVED] two-vector system: gamma = (|Q1|^2 + |Q2|^2) I - Q1 Q1^T -
    // Q2 Q2^T and gamma' = |f|^2 I - f f^T, from the cross-product identity.
    let sys = SystemDef::so3_two_vector_default();
    let q1 = DVector::from_vec(vec![1.1, 0.0, 0.0]);
    let q2 = DVector::from_vec(vec![0.4, 0.9, 0.0]);
    let f = DVector::from_vec(vec![0.3, -0.2, 0.7]);
    let q = DVector::from_vec(vec![q1[0], q1[1], q1[2], q2[0], q2[1], q2[2]]);
    let cache = GeometryCache::new(&sys, &q, &f, Pathway::ClosedForm).unwrap();
    let eye = DMatrix::identity(3, 3);
    let expect = (q1.norm_squared() + q2.norm_squared() + f.norm_squared()) * &eye
        - &q1 * q1.transpose()
        - &q2 * q2.transpose()
        - &f * f.transpose();
    assert!((&cache.d - &expect).abs().max() < 1e-12);
}

#[test]
fn connection_hand_values_and_reproducing_property() {
    // [PAPER-ADJACENT HAND VALUE] circle system at (r, 0), f = 0: the
    // principal-sector connection row is (0, 1/r).
    let sys = SystemDef::so2_bead_default();
    let (q, f) = so2_point(2.0, 0.0, 0.0);
    let cache = GeometryCache::new(&sys, &q, &f, Pathway::ClosedForm).unwrap();
    assert!(cache.a_q[(0, 0)].abs() < 1e-13);
    assert!((cache.a_q[(0, 1)] - 0.5).abs() < 1e-13);

    // A(K) = identity on the orbit directions, both systems, random points.
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for sys in [
        SystemDef::so2_bead_default(),
        SystemDef::so3_two_vector_default(),
    ] {
        for _ in 0..10 {
            let (q, f) = random_slice_point(&sys, &mut rng);
            let cache = GeometryCache::new(&sys, &q, &f, Pathway::ClosedForm).unwrap();
            let reproduced = &cache.a_q * &cache.k_q + &cache.a_v * &cache.k_v;
            let eye = DMatrix::identity(sys.dim_g(), sys.dim_g());
            assert!(
                (&reproduced - &eye).abs().max() < 1e-12,
                "{}: A(K) = id",
                sys.name()
            );
        }
    }
}

#[test]
fn horizontal_metric_hand_values_and_kernel() {
    // [HAND VALUE] circle system at (r, 0) with f = (s, 0):
    // GH_qq = diag(1, s^2/(r^2+s^2)), GH_qv(2,2) = -r s/(r^2+s^2),
    // GH_vv = diag(1, r^2/(r^2+s^2)).
    let sys = SystemDef::so2_bead_default();
    let (r, s) = (2.0, 0.7);
    let (q, f) = so2_point(r, s, 0.0);
    let cache = GeometryCache::new(&sys, &q, &f, Pathway::ClosedForm).unwrap();
    let den = r * r + s * s;
    assert!((cache.gh_qq[(0, 0)] - 1.0).abs() < 1e-12);
    assert!((cache.gh_qq[(1, 1)] - s * s / den).abs() < 1e-12);
    assert!(cache.gh_qq[(0, 1)].abs() < 1e-13);
    assert!((cache.gh_qv[(1, 1)] - (-r * s / den)).abs() < 1e-12);
    assert!((cache.gh_vv[(1, 1)] - r * r / den).abs() < 1e-12);

    // The horizontal metric annihilates the orbit directions in both sectors.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for sys in [
        SystemDef::so2_bead_default(),
        SystemDef::so3_two_vector_default(),
    ] {
        for _ in 0..10 {
            let (q, f) = random_slice_point(&sys, &mut rng);
            let cache = GeometryCache::new(&sys, &q, &f, Pathway::ClosedForm).unwrap();
            let gh = cache.gh_joint();
            let kj = cache.k_joint();
            assert!(
                (&gh * &kj).abs().max() < 1e-12,
                "{}: GH K = 0",
                sys.name()
            );
            // Symmetry of the assembled joint block.
            assert!((&gh - gh.transpose()).abs().max() < 1e-12);
        }
    }
}

#[test]
fn connection_form_reproduces_vertical_and_kills_horizontal() {
    // The bundle connection evaluated through the chart: an ambient velocity
    // tangent to the orbit with generator xi must produce exactly xi
    // (reproducing property); an ambient velocity G-orthogonal to the orbit
    // must map to zero (the connection is the metric-orthogonal complement).
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for sys in [
        SystemDef::so2_bead_default(),
        SystemDef::so3_two_vector_default(),
    ] {
        let mut done = 0;
        while done < 15 {
            let q = DVector::from_fn(sys.dim_q(), |_, _| rng.gen_range(-1.4..1.4));
            let f = DVector::from_fn(sys.dim_v(), |_, _| rng.gen_range(-0.9..0.9));
            let Ok(pt) = frame::to_adapted(&sys, &q, &f, None) else {
                continue;
            };
            if pt.q_star[0].abs() < 0.4 {
                continue;
            }
            done += 1;

            // Vertical velocity with generator xi.
            let xi = DVector::from_fn(sys.dim_g(), |_, _| rng.gen_range(-1.0..1.0));
            let qdot = sys.killing_q(&q) * &xi;
            let fdot = sys.killing_v(&f) * &xi;
            let omega = geometry::connection_form_ambient(&sys, &pt, &qdot, &fdot).unwrap();
            assert!(
                (&omega - &xi).amax() < 1e-12,
                "{}: reproducing property, got {}",
                sys.name(),
                (&omega - &xi).amax()
            );

            // Horizontal velocity: project a random velocity G-orthogonally
            // off the orbit directions at the ambient point.
            let vq = DVector::from_fn(sys.dim_q(), |_, _| rng.gen_range(-1.0..1.0));
            let vf = DVector::from_fn(sys.dim_v(), |_, _| rng.gen_range(-1.0..1.0));
            let (hq, hf) = geometry::horizontal_projection_ambient(&sys, &q, &f, &vq, &vf).unwrap();
            let omega = geometry::connection_form_ambient(&sys, &pt, &hq, &hf).unwrap();
            assert!(
                omega.amax() < 1e-9,
                "{}: horizontal velocity has zero connection value, got {}",
                sys.name(),
                omega.amax()
            );
        }
    }
}

#[test]
fn christoffel_pathways_agree() {
    // [DUAL ROUTE] Finite differences of the horizontal metric vs. the
    // flat-metric closed forms built from connection partials.
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for sys in [
        SystemDef::so2_bead_default(),
        SystemDef::so3_two_vector_default(),
    ] {
        for _ in 0..5 {
            let (q, f) = random_slice_point(&sys, &mut rng);
            let fd_cache = GeometryCache::new(&sys, &q, &f, Pathway::FiniteDifference).unwrap();
            let cf_cache = GeometryCache::new(&sys, &q, &f, Pathway::ClosedForm).unwrap();
            let dq = fd_cache.christoffel_q.diff(&cf_cache.christoffel_q);
            let dv = fd_cache.christoffel_v.diff(&cf_cache.christoffel_v);
            assert!(dq < 1e-5, "{}: principal Christoffel routes {dq}", sys.name());
            assert!(dv < 1e-5, "{}: multiplet Christoffel routes {dv}", sys.name());
        }
    }
}

#[test]
fn christoffel_killing_and_projector_identities() {
    // The lowered horizontal Christoffel tensor annihilates orbit directions
    // in its derivative slot and is reproduced by the projector N there.
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for sys in [
        SystemDef::so2_bead_default(),
        SystemDef::so3_two_vector_default(),
    ] {
        let (q, f) = random_slice_point(&sys, &mut rng);
        let lowered = geometry::christoffel_lowered_fd(&sys, &q, &f).unwrap();
        let cache = GeometryCache::new(&sys, &q, &f, Pathway::ClosedForm).unwrap();
        let kj = cache.k_joint();
        let nj = cache.n_joint();
        let n = kj.nrows();

        let mut max_k = 0.0f64;
        let mut max_n = 0.0f64;
        for b in 0..n {
            for m in 0..n {
                for alpha in 0..sys.dim_g() {
                    let mut acc = 0.0;
                    for e in 0..n {
                        acc += lowered.get(b, m, e) * kj[(e, alpha)];
                    }
                    max_k = max_k.max(acc.abs());
                }
                for fidx in 0..n {
                    let mut acc = 0.0;
                    for t in 0..n {
                        acc += nj[(t, fidx)] * lowered.get(b, m, t);
                    }
                    max_n = max_n.max((acc - lowered.get(b, m, fidx)).abs());
                }
            }
        }
        assert!(max_k < 1e-8, "{}: K-contraction of Christoffel {max_k}", sys.name());
        assert!(max_n < 1e-8, "{}: N-invariance of Christoffel {max_n}", sys.name());
    }
}

#[test]
fn curvature_pathways_agree_and_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    for sys in [
        SystemDef::so2_bead_default(),
        SystemDef::so3_two_vector_default(),
    ] {
        for _ in 0..4 {
            let (q, f) = random_slice_point(&sys, &mut rng);
            let fd_cache = GeometryCache::new(&sys, &q, &f, Pathway::FiniteDifference).unwrap();
            let cf_cache = GeometryCache::new(&sys, &q, &f, Pathway::ClosedForm).unwrap();
            let dq = fd_cache.curvature_q.diff(&cf_cache.curvature_q);
            let dv = fd_cache.curvature_v.diff(&cf_cache.curvature_v);
            assert!(dq < 1e-5, "{}: principal curvature routes {dq}", sys.name());
            assert!(dv < 1e-5, "{}: multiplet curvature routes {dv}", sys.name());

            // Antisymmetry of the 2-form and vanishing orbit contraction.
            let form = geometry::curvature_form(&sys, &q, &f).unwrap();
            let kj = cf_cache.k_joint();
            let n = kj.nrows();
            let mut max_asym = 0.0f64;
            let mut max_k = 0.0f64;
            for alpha in 0..sys.dim_g() {
                for s in 0..n {
                    for p in 0..n {
                        max_asym =
                            max_asym.max((form.get(alpha, s, p) + form.get(alpha, p, s)).abs());
                        for beta in 0..sys.dim_g() {
                            let mut acc = 0.0;
                            for r in 0..n {
                                acc += form.get(alpha, s, r) * kj[(r, beta)];
                            }
                            max_k = max_k.max(acc.abs());
                        }
                    }
                }
            }
            assert!(max_asym < 1e-8, "{}: curvature antisymmetry", sys.name());
            assert!(max_k < 1e-8, "{}: curvature orbit contraction {max_k}", sys.name());
        }
    }
}

#[test]
fn so2_pure_configuration_curvature_vanishes() {
    // [DERIVED] For the circle system with the multiplet switched off the
    // connection is the angle form, which is flat away from the origin.
    let sys = SystemDef::so2_bead_default();
    let (q, f) = so2_point(1.3, 0.0, 0.0);
    let form = geometry::curvature_form(&sys, &q, &f).unwrap();
    for s in 0..2 {
        for p in 0..2 {
            assert!(form.get(0, s, p).abs() < 1e-9, "entry ({s},{p})");
        }
    }
}

#[test]
fn orbit_derivative_pathways_and_hand_value() {
    // [HAND VALUE] circle system at (r, 0), f = (s, 0): the covariant
    // derivative of d^{-1} along the radial direction is -2r/(r^2+s^2)^2 and
    // along the first multiplet direction -2s/(r^2+s^2)^2 (abelian group:
    // connection terms drop).
    let sys = SystemDef::so2_bead_default();
    let (r, s) = (1.4, 0.6);
    let (q, f) = so2_point(r, s, 0.0);
    let den = (r * r + s * s) * (r * r + s * s);
    let (dd_q_low, dd_v_low) = geometry::orbit_derivative_lowered_fd(&sys, &q, &f).unwrap();
    assert!((dd_q_low.get(0, 0, 0) - (-2.0 * r / den)).abs() < 1e-8);
    assert!(dd_q_low.get(1, 0, 0).abs() < 1e-8);
    assert!((dd_v_low.get(0, 0, 0) - (-2.0 * s / den)).abs() < 1e-8);

    // [DUAL ROUTE + IDENTITIES] both systems at random points.
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    for sys in [
        SystemDef::so2_bead_default(),
        SystemDef::so3_two_vector_default(),
    ] {
        for _ in 0..4 {
            let (q, f) = random_slice_point(&sys, &mut rng);
            let fd_cache = GeometryCache::new(&sys, &q, &f, Pathway::FiniteDifference).unwrap();
            let cf_cache = GeometryCache::new(&sys, &q, &f, Pathway::ClosedForm).unwrap();
            let dq = fd_cache.dd_q.diff(&cf_cache.dd_q);
            let dv = fd_cache.dd_v.diff(&cf_cache.dd_v);
            assert!(dq < 1e-5, "{}: principal orbit-derivative routes {dq}", sys.name());
            assert!(dv < 1e-5, "{}: multiplet orbit-derivative routes {dv}", sys.name());

            let (low_q, low_v) = geometry::orbit_derivative_lowered_fd(&sys, &q, &f).unwrap();
            let kj = cf_cache.k_joint();
            let nj = cf_cache.n_joint();
            let g = sys.dim_g();
            let n_q = sys.dim_q();
            let n = kj.nrows();
            let read = |r_idx: usize, k: usize, sg: usize| {
                if r_idx < n_q {
                    low_q.get(r_idx, k, sg)
                } else {
                    low_v.get(r_idx - n_q, k, sg)
                }
            };
            let mut max_k = 0.0f64;
            let mut max_n = 0.0f64;
            for kappa in 0..g {
                for sigma in 0..g {
                    for eps in 0..g {
                        let mut acc = 0.0;
                        for r_idx in 0..n {
                            acc += read(r_idx, kappa, sigma) * kj[(r_idx, eps)];
                        }
                        max_k = max_k.max(acc.abs());
                    }
                    for fidx in 0..n {
                        let mut acc = 0.0;
                        for r_idx in 0..n {
                            acc += nj[(r_idx, fidx)] * read(r_idx, kappa, sigma);
                        }
                        max_n = max_n.max((acc - read(fidx, kappa, sigma)).abs());
                    }
                }
            }
            assert!(max_k < 1e-8, "{}: K-contraction of orbit derivative", sys.name());
            assert!(max_n < 1e-8, "{}: N-invariance of orbit derivative", sys.name());
        }
    }
}

#[test]
fn connection_partials_equivalent_representations() {
    // [DUAL ROUTE] Closed-form connection partials vs. finite differences of
    // the connection, and the two printed closed forms for the mixed blocks
    // against each other.
    let mut rng = ChaCha8Rng::seed_from_u64(48);
    for sys in [
        SystemDef::so2_bead_default(),
        SystemDef::so3_two_vector_default(),
    ] {
        for _ in 0..4 {
            let (q, f) = random_slice_point(&sys, &mut rng);
            let closed = geometry::connection_partials_closed(&sys, &q, &f).unwrap();
            let fd = geometry::connection_partials_fd(&sys, &q, &f).unwrap();
            assert!(closed.aq_dq.diff(&fd.aq_dq) < 1e-8, "{}: d(Aq)/dQ", sys.name());
            assert!(closed.aq_df.diff(&fd.aq_df) < 1e-8, "{}: d(Aq)/df", sys.name());
            assert!(closed.av_dq.diff(&fd.av_dq) < 1e-8, "{}: d(Av)/dQ", sys.name());
            assert!(closed.av_df.diff(&fd.av_df) < 1e-8, "{}: d(Av)/df", sys.name());

            let alt = geometry::connection_mixed_partials_alternative(&sys, &q, &f).unwrap();
            assert!(
                closed.aq_df.diff(&alt.0) < 1e-10,
                "{}: mixed partial, second printed form (q-rows)",
                sys.name()
            );
            assert!(
                closed.av_dq.diff(&alt.1) < 1e-10,
                "{}: mixed partial, second printed form (multiplet rows)",
                sys.name()
            );
        }
    }
}

#[test]
fn potential_gradient_identities() {
    // Invariance: the orbit derivative of the potential vanishes, and the
    // projector N leaves the gradient unchanged.
    let mut rng = ChaCha8Rng::seed_from_u64(49);
    for sys in [
        SystemDef::so2_bead_default(),
        SystemDef::so3_two_vector_default(),
    ] {
        for _ in 0..6 {
            let (q, f) = random_slice_point(&sys, &mut rng);
            let cache = GeometryCache::new(&sys, &q, &f, Pathway::ClosedForm).unwrap();
            let grad = cache.grad_joint();
            let kj = cache.k_joint();
            let nj = cache.n_joint();
            assert!(
                (kj.transpose() * &grad).amax() < 1e-9,
                "{}: orbit derivative of V",
                sys.name()
            );
            assert!(
                (nj.transpose() * &grad - &grad).amax() < 1e-9,
                "{}: N-invariance of grad V",
                sys.name()
            );
        }
    }
}

#[test]
fn rotated_orbit_metric_is_congruent() {
    // d~ = rho^T d rho stays symmetric positive definite and reduces to d at
    // the identity.
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let sys = SystemDef::so3_two_vector_default();
    let (q, f) = random_slice_point(&sys, &mut rng);
    let cache = GeometryCache::new(&sys, &q, &f, Pathway::ClosedForm).unwrap();
    let a = DVector::from_vec(vec![0.4, -0.8, 0.3]);
    let d_rot = geometry::rotated_orbit_metric(&sys, &cache.d, &a);
    assert!((&d_rot - d_rot.transpose()).abs().max() < 1e-12);
    assert!(nalgebra::Cholesky::new(d_rot).is_some());
    let d_id = geometry::rotated_orbit_metric(&sys, &cache.d, &DVector::zeros(3));
    assert!((&d_id - &cache.d).abs().max() < 1e-13);
}
