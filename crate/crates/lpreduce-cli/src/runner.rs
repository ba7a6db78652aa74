//! Command implementations: `run`, `validate`, and `compare`.

use std::path::{Path, PathBuf};

use lpreduce_core::dynamics::ReducedDynamics;
use lpreduce_core::geometry::{self, GeometryCache, Pathway};
use lpreduce_core::lattice::{
    self, build_system, coulomb_residual, evolve_gauge, gauge_energy, GaugeFieldState,
    GaugeGroup, Sector, TermAssembly, TermId,
};
use lpreduce_core::system::SystemDef;
use lpreduce_core::linalg::SpdSolver;
use lpreduce_core::{fd, frame, tol};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, SystemChoice};
use crate::report::{InvariantReport, MaxTracker};
use crate::{sample, traj, Failure};

fn core_err(e: lpreduce_core::Error) -> Failure {
    Failure::Numeric(e.to_string())
}

fn build_mechanical(choice: SystemChoice) -> SystemDef {
    match choice {
        SystemChoice::So2Bead => SystemDef::so2_bead_default(),
        SystemChoice::So3TwoVector => SystemDef::so3_two_vector_default(),
        SystemChoice::GaugeLattice => unreachable!("lattice runs use the gauge path"),
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

fn write_report(dir: &Path, report: &InvariantReport) -> Result<PathBuf, Failure> {
    let path = dir.join("report.txt");
    std::fs::write(&path, report.render())
        .map_err(|e| Failure::Numeric(format!("cannot write `{}`: {e}", path.display())))?;
    Ok(path)
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), Failure> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| {
        Failure::Numeric(format!("cannot create `{}`: {e}", cfg.out.display()))
    })
}

fn common_meta(report: &mut InvariantReport, cfg: &RunConfig) {
    report.meta("system", cfg.system);
    report.meta("seed", cfg.seed);
    report.meta("tolerance-scale", cfg.tolerance_scale);
    report.meta("threads", cfg.threads);
    if cfg.system == SystemChoice::GaugeLattice {
        report.meta("lattice", cfg.lattice.label());
    }
}

/// Human-stable slug for one quadratic block.
fn term_slug(id: TermId) -> String {
    let s = |sec: Sector| match sec {
        Sector::Principal => "p",
        Sector::Multiplet => "m",
    };
    match id {
        TermId::Christoffel { free, slots } => {
            format!("term_christoffel_{}_{}{}", s(free), s(slots.0), s(slots.1))
        }
        TermId::Curvature { free, slot } => format!("term_curvature_{}_{}", s(free), s(slot)),
        TermId::OrbitMetricDerivative { free } => format!("term_orbit_derivative_{}", s(free)),
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

pub fn cmd_run(cfg: &RunConfig) -> Result<bool, Failure> {
    ensure_out_dir(cfg)?;
    let mut report = InvariantReport::new("run");
    common_meta(&mut report, cfg);
    report.meta("t-end", cfg.t_end);
    report.meta("dt", cfg.dt);
    report.meta("steps", cfg.steps());

    let rows = match cfg.system {
        SystemChoice::GaugeLattice => run_gauge(cfg, &mut report)?,
        _ => run_mechanical(cfg, &mut report)?,
    };

    let traj_path = cfg.out.join("trajectory.csv");
    let header = rows.0;
    traj::write_csv(&traj_path, &header, &rows.1)?;
    let report_path = write_report(&cfg.out, &report)?;

    print!("{}", report.render());
    println!("trajectory {}", traj_path.display());
    println!("report {}", report_path.display());
    Ok(report.all_pass())
}

type Rows = (Vec<String>, Vec<Vec<f64>>);

fn run_mechanical(cfg: &RunConfig, report: &mut InvariantReport) -> Result<Rows, Failure> {
    let sys = build_mechanical(cfg.system);
    let dynamics = ReducedDynamics::new(&sys).with_equations(cfg.equation_set);
    report.meta(
        "equation-set",
        match cfg.equation_set {
            lpreduce_core::dynamics::EquationSet::Full => "full",
            lpreduce_core::dynamics::EquationSet::SpecialCase => "special",
        },
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let st0 = sample::initial_state(&dynamics, &mut rng)?;
    let steps = cfg.steps();

    let e0 = dynamics.energy(&st0).map_err(core_err)?;
    let j0 = dynamics.charge(&st0).map_err(core_err)?;
    let p0 = st0.p.clone();

    let header = traj::header(sys.dim_q(), sys.dim_v(), sys.dim_g());
    let mut rows = Vec::with_capacity(steps + 1);
    let mut st = st0;
    let mut energy_drift = 0.0_f64;
    let mut charge_drift = 0.0_f64;
    let mut momentum_drift = 0.0_f64;
    let mut constraint = 0.0_f64;
    let mut energy_final = e0;

    for i in 0..=steps {
        let t = i as f64 * cfg.dt;
        let e = dynamics.energy(&st).map_err(core_err)?;
        let j = dynamics.charge(&st).map_err(core_err)?;
        energy_drift = energy_drift.max((e - e0).abs());
        charge_drift = charge_drift.max(max_abs_vec(&(&j - &j0)));
        momentum_drift = momentum_drift.max(max_abs_vec(&(&st.p - &p0)));
        constraint = constraint.max(max_abs_vec(&sys.chi(&st.q_star)));
        energy_final = e;
        rows.push(traj::row(t, &st.q_star, &st.f_tilde, &st.omega_q, &st.omega_v, &st.p, e));
        if i < steps {
            st = dynamics.step(&st, cfg.dt).map_err(core_err)?;
        }
    }

    let ts = cfg.tolerance_scale;
    report.check("slice_constraint", constraint, tol::CONSTRAINT_RESIDUAL * ts);
    report.check("energy_drift", energy_drift, 1e-8 * ts);
    report.check("charge_drift", charge_drift, 1e-8 * ts);
    if cfg.system == SystemChoice::So2Bead {
        // Commutative symmetry: the vertical momentum itself is conserved.
        report.check("momentum_drift", momentum_drift, 1e-12 * ts);
    } else {
        report.info("momentum_drift", momentum_drift);
    }
    report.info("energy_initial", e0);
    report.info("energy_final", energy_final);
    Ok((header, rows))
}

fn run_gauge(cfg: &RunConfig, report: &mut InvariantReport) -> Result<Rows, Failure> {
    let lat = &cfg.lattice;
    let st0 = GaugeFieldState::random(lat, cfg.seed).map_err(core_err)?;
    let steps = cfg.steps();
    let (states, evolve) = evolve_gauge(lat, &st0, cfg.dt, steps).map_err(core_err)?;

    let header = traj::header(lat.dim_field(), lat.dim_scalar(), lat.dim_gauge());
    let mut rows = Vec::with_capacity(states.len());
    for (i, st) in states.iter().enumerate() {
        let t = i as f64 * cfg.dt;
        let e = gauge_energy(lat, st).map_err(core_err)?;
        rows.push(traj::row(
            t,
            &st.field,
            &st.scalar,
            &st.field_dot,
            &st.scalar_dot,
            &st.momentum,
            e,
        ));
    }

    let ts = cfg.tolerance_scale;
    report.check("coulomb_constraint", evolve.max_constraint, 1e-8 * ts);
    gauge_term_checks(lat, &st0, ts, report)?;
    let p_drift = states
        .iter()
        .map(|s| max_abs_vec(&(&s.momentum - &st0.momentum)))
        .fold(0.0_f64, f64::max);
    if lat.group == GaugeGroup::So2 {
        report.check("momentum_drift", p_drift, 1e-12 * ts);
    } else {
        report.info("momentum_drift", p_drift);
    }
    // The discrete potential is not exactly orbit-invariant once the scalar
    // couples (central differences obey no product rule), so energy drift is
    // reported but not gated for the lattice.
    report.info("energy_initial", evolve.energy_initial);
    report.info("energy_final", evolve.energy_final);
    report.info("energy_drift", evolve.max_energy_drift);
    Ok((header, rows))
}

/// Route equality of all twelve quadratic blocks at one state: the by-hand
/// assembly against the generic engine's restricted contraction.
fn gauge_term_checks(
    lat: &lpreduce_core::lattice::LatticeConfig,
    st: &GaugeFieldState,
    ts: f64,
    report: &mut InvariantReport,
) -> Result<(), Failure> {
    let assembly = TermAssembly::new(lat, st).map_err(core_err)?;
    let reference = lattice::engine_term_reference(lat, st, Pathway::ClosedForm).map_err(core_err)?;
    for (id, engine_value) in &reference {
        let ours = assembly.term(*id);
        let gap = max_abs_vec(&(&ours.total - engine_value));
        let rel = gap / (1.0 + max_abs_vec(engine_value));
        report.check(&term_slug(*id), rel, 1e-8 * ts);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

pub fn cmd_validate(cfg: &RunConfig) -> Result<bool, Failure> {
    ensure_out_dir(cfg)?;
    let mut report = InvariantReport::new("validate");
    common_meta(&mut report, cfg);

    match cfg.system {
        SystemChoice::GaugeLattice => validate_gauge(cfg, &mut report)?,
        _ => validate_mechanical(cfg, &mut report)?,
    }

    let report_path = write_report(&cfg.out, &report)?;
    print!("{}", report.render());
    println!("report {}", report_path.display());
    Ok(report.all_pass())
}

fn validate_mechanical(cfg: &RunConfig, report: &mut InvariantReport) -> Result<(), Failure> {
    let sys = build_mechanical(cfg.system);
    report.meta("points", cfg.points);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ts = cfg.tolerance_scale;
    let projector_tol = 1e-9 * ts;
    let identity_tol = tol::GEOMETRY_IDENTITY * ts;
    let mut maxima = MaxTracker::new();

    let g = sys.dim_g();
    let n = sys.dim_q() + sys.dim_v();

    for _ in 0..cfg.points {
        let (q, f) = sample::slice_point(&sys, &mut rng);
        let cf = GeometryCache::new(&sys, &q, &f, Pathway::ClosedForm).map_err(core_err)?;
        let fd_cache =
            GeometryCache::new(&sys, &q, &f, Pathway::FiniteDifference).map_err(core_err)?;

        // Projector and connection identities.
        let nj = cf.n_joint();
        let pp = &cf.proj.p_perp;
        let kj = cf.k_joint();
        let a_joint = {
            let mut m = DMatrix::zeros(g, n);
            m.view_mut((0, 0), (g, sys.dim_q())).copy_from(&cf.a_q);
            m.view_mut((0, sys.dim_q()), (g, sys.dim_v())).copy_from(&cf.a_v);
            m
        };
        maxima.update(
            "projector_n_idempotence",
            max_abs(&(&nj * &nj - &nj)),
            projector_tol,
        );
        maxima.update(
            "projector_perp_idempotence",
            max_abs(&(pp * pp - pp)),
            projector_tol,
        );
        maxima.update(
            "connection_reproduces_generators",
            max_abs(&(&a_joint * &kj - DMatrix::<f64>::identity(g, g))),
            projector_tol,
        );
        maxima.update(
            "horizontal_metric_annihilates_orbit",
            max_abs(&(cf.gh_joint() * &kj)),
            projector_tol,
        );

        // Connection value of a horizontally projected ambient velocity.
        let pt = frame::to_adapted(&sys, &q, &f, None).map_err(core_err)?;
        let vq = DVector::from_fn(sys.dim_q(), |i, _| ((i + 1) as f64 * 0.37).sin());
        let vf = DVector::from_fn(sys.dim_v(), |i, _| ((i + 2) as f64 * 0.53).cos());
        let (hq, hf) =
            geometry::horizontal_projection_ambient(&sys, &q, &f, &vq, &vf).map_err(core_err)?;
        let omega = geometry::connection_form_ambient(&sys, &pt, &hq, &hf).map_err(core_err)?;
        maxima.update("horizontal_connection_value", max_abs_vec(&omega), projector_tol);

        // Identity suite: orbit contractions and projector invariance.
        let lowered = geometry::christoffel_lowered_fd(&sys, &q, &f).map_err(core_err)?;
        let (mut max_k, mut max_n) = (0.0_f64, 0.0_f64);
        for b in 0..n {
            for m in 0..n {
                for alpha in 0..g {
                    let mut acc = 0.0;
                    for e in 0..n {
                        acc += lowered.get(b, m, e) * kj[(e, alpha)];
                    }
                    max_k = max_k.max(acc.abs());
                }
                for fi in 0..n {
                    let mut acc = 0.0;
                    for t in 0..n {
                        acc += nj[(t, fi)] * lowered.get(b, m, t);
                    }
                    max_n = max_n.max((acc - lowered.get(b, m, fi)).abs());
                }
            }
        }
        maxima.update("christoffel_orbit_contraction", max_k, identity_tol);
        maxima.update("christoffel_projector_invariance", max_n, identity_tol);

        let form = geometry::curvature_form(&sys, &q, &f).map_err(core_err)?;
        let (mut asym, mut curv_k) = (0.0_f64, 0.0_f64);
        for alpha in 0..g {
            for s in 0..n {
                for p in 0..n {
                    asym = asym.max((form.get(alpha, s, p) + form.get(alpha, p, s)).abs());
                }
                for beta in 0..g {
                    let mut acc = 0.0;
                    for r in 0..n {
                        acc += form.get(alpha, s, r) * kj[(r, beta)];
                    }
                    curv_k = curv_k.max(acc.abs());
                }
            }
        }
        maxima.update("curvature_antisymmetry", asym, identity_tol);
        maxima.update("curvature_orbit_contraction", curv_k, identity_tol);

        let (low_q, low_v) = geometry::orbit_derivative_lowered_fd(&sys, &q, &f).map_err(core_err)?;
        let n_q = sys.dim_q();
        let read = |r_idx: usize, k: usize, sg: usize| {
            if r_idx < n_q {
                low_q.get(r_idx, k, sg)
            } else {
                low_v.get(r_idx - n_q, k, sg)
            }
        };
        let (mut od_k, mut od_n) = (0.0_f64, 0.0_f64);
        for kappa in 0..g {
            for sigma in 0..g {
                for eps in 0..g {
                    let mut acc = 0.0;
                    for r_idx in 0..n {
                        acc += read(r_idx, kappa, sigma) * kj[(r_idx, eps)];
                    }
                    od_k = od_k.max(acc.abs());
                }
                for fi in 0..n {
                    let mut acc = 0.0;
                    for r_idx in 0..n {
                        acc += nj[(r_idx, fi)] * read(r_idx, kappa, sigma);
                    }
                    od_n = od_n.max((acc - read(fi, kappa, sigma)).abs());
                }
            }
        }
        maxima.update("orbit_derivative_orbit_contraction", od_k, identity_tol);
        maxima.update("orbit_derivative_projector_invariance", od_n, identity_tol);

        let grad = cf.grad_joint();
        maxima.update(
            "potential_orbit_derivative",
            max_abs_vec(&(kj.transpose() * &grad)),
            projector_tol,
        );
        maxima.update(
            "potential_projector_invariance",
            max_abs_vec(&(nj.transpose() * &grad - &grad)),
            projector_tol,
        );

        // Dual-route disagreements.
        maxima.update(
            "route_christoffel",
            fd_cache
                .christoffel_q
                .diff(&cf.christoffel_q)
                .max(fd_cache.christoffel_v.diff(&cf.christoffel_v)),
            tol::FD_CONTRACTION * ts,
        );
        maxima.update(
            "route_curvature",
            fd_cache
                .curvature_q
                .diff(&cf.curvature_q)
                .max(fd_cache.curvature_v.diff(&cf.curvature_v)),
            tol::FD_CONTRACTION * ts,
        );
        maxima.update(
            "route_orbit_derivative",
            fd_cache.dd_q.diff(&cf.dd_q).max(fd_cache.dd_v.diff(&cf.dd_v)),
            tol::FD_CONTRACTION * ts,
        );

        let closed = geometry::connection_partials_closed(&sys, &q, &f).map_err(core_err)?;
        let fd_partials = geometry::connection_partials_fd(&sys, &q, &f).map_err(core_err)?;
        let partial_gap = closed
            .aq_dq
            .diff(&fd_partials.aq_dq)
            .max(closed.aq_df.diff(&fd_partials.aq_df))
            .max(closed.av_dq.diff(&fd_partials.av_dq))
            .max(closed.av_df.diff(&fd_partials.av_df));
        maxima.update("route_connection_partials", partial_gap, tol::FD_FIRST_DERIV * ts);

        let alt = geometry::connection_mixed_partials_alternative(&sys, &q, &f).map_err(core_err)?;
        let printed_gap = closed.aq_df.diff(&alt.0).max(closed.av_dq.diff(&alt.1));
        maxima.update(
            "connection_mixed_printed_forms",
            printed_gap,
            tol::CONNECTION_PARTIAL_EQUIV * ts,
        );
    }

    maxima.emit(report);
    Ok(())
}

fn validate_gauge(cfg: &RunConfig, report: &mut InvariantReport) -> Result<(), Failure> {
    let lat = &cfg.lattice;
    report.meta("states", cfg.states);
    let ts = cfg.tolerance_scale;
    let mut maxima = MaxTracker::new();

    for k in 0..cfg.states {
        let st = GaugeFieldState::random(lat, cfg.seed.wrapping_add(k as u64)).map_err(core_err)?;
        maxima.update(
            "coulomb_constraint",
            coulomb_residual(lat, &st.field),
            1e-9 * ts,
        );
        let assembly = TermAssembly::new(lat, &st).map_err(core_err)?;
        let reference =
            lattice::engine_term_reference(lat, &st, Pathway::ClosedForm).map_err(core_err)?;
        for (id, engine_value) in &reference {
            let ours = assembly.term(*id);
            let gap = max_abs_vec(&(&ours.total - engine_value));
            let rel = gap / (1.0 + max_abs_vec(engine_value));
            maxima.update(&term_slug(*id), rel, 1e-8 * ts);
        }
    }

    // Structural identities that hold for any generator matrix, plus the
    // potential-force cross-check, at one state. Assembled directly from the
    // system data (Killing fields, metric, projectors) — these are cheap
    // linear-algebra statements and need none of the engine's tensor caches.
    let st = GaugeFieldState::random(lat, cfg.seed).map_err(core_err)?;
    let sys = build_system(lat).map_err(core_err)?;
    let n_q = sys.dim_q();
    let n_v = sys.dim_v();
    let g = sys.dim_g();
    let n = n_q + n_v;
    let kj = geometry::joint_killing_at(&sys, &st.field, &st.scalar).map_err(core_err)?;
    let gmat = {
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (n_q, n_q)).copy_from(&sys.metric_q(&st.field));
        m.view_mut((n_q, n_q), (n_v, n_v)).copy_from(sys.metric_v());
        m
    };
    let d = kj.transpose() * &gmat * &kj;
    let d_inv = SpdSolver::new(&d, "validate orbit metric")
        .map_err(core_err)?
        .inverse();
    let a_joint = &d_inv * kj.transpose() * &gmat;
    let gh = &gmat - &gmat * &kj * &a_joint;
    let proj = sys.projectors(&st.field, &st.scalar).map_err(core_err)?;
    let nj = {
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (n_q, n_q)).copy_from(&proj.n_qq);
        m.view_mut((n_q, 0), (n_v, n_q)).copy_from(&proj.n_vq);
        m.view_mut((n_q, n_q), (n_v, n_v))
            .copy_from(&DMatrix::identity(n_v, n_v));
        m
    };
    let pp = &proj.p_perp;
    let projector_tol = 1e-9 * ts;
    maxima.update(
        "projector_n_idempotence",
        max_abs(&(&nj * &nj - &nj)),
        projector_tol,
    );
    maxima.update(
        "projector_perp_idempotence",
        max_abs(&(pp * pp - pp)),
        projector_tol,
    );
    maxima.update(
        "connection_reproduces_generators",
        max_abs(&(&a_joint * &kj - DMatrix::<f64>::identity(g, g))),
        projector_tol,
    );
    maxima.update(
        "horizontal_metric_annihilates_orbit",
        max_abs(&(&gh * &kj)),
        projector_tol,
    );

    let (grad_q, grad_v) = sys.potential_grad(&st.field, &st.scalar).map_err(core_err)?;
    let fd_q = fd::gradient(
        |x: &DVector<f64>| Ok(sys.potential(x, &st.scalar)),
        &st.field,
    )
    .map_err(core_err)?;
    let fd_v = fd::gradient(
        |x: &DVector<f64>| Ok(sys.potential(&st.field, x)),
        &st.scalar,
    )
    .map_err(core_err)?;
    let force_gap = max_abs_vec(&(&grad_q - &fd_q)).max(max_abs_vec(&(&grad_v - &fd_v)));
    maxima.update("potential_force_fd", force_gap, tol::FD_FIRST_DERIV * ts);

    maxima.emit(report);
    Ok(())
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

pub fn cmd_compare(
    path_a: &Path,
    path_b: &Path,
    tolerance: f64,
    tolerance_scale: f64,
    out: Option<&Path>,
) -> Result<bool, Failure> {
    let a = traj::read_csv(path_a)?;
    let b = traj::read_csv(path_b)?;

    if a.header != b.header {
        return Err(Failure::GridMismatch(format!(
            "column sets differ: `{}` has [{}], `{}` has [{}]",
            path_a.display(),
            a.header.join(","),
            path_b.display(),
            b.header.join(","),
        )));
    }
    if a.rows.len() != b.rows.len() {
        return Err(Failure::GridMismatch(format!(
            "row counts differ: {} vs {}",
            a.rows.len(),
            b.rows.len()
        )));
    }
    let t_col = a.header.iter().position(|h| h == "t").ok_or_else(|| {
        Failure::GridMismatch("trajectories have no `t` column".to_string())
    })?;
    for (i, (ra, rb)) in a.rows.iter().zip(&b.rows).enumerate() {
        if ra[t_col] != rb[t_col] {
            return Err(Failure::GridMismatch(format!(
                "time grids differ at row {i}: {} vs {}",
                ra[t_col], rb[t_col]
            )));
        }
    }

    let mut report = InvariantReport::new("compare");
    report.meta("file-a", path_a.display());
    report.meta("file-b", path_b.display());
    report.meta("rows", a.rows.len());
    report.meta("tolerance-scale", tolerance_scale);

    // Largest relative deviation per column group, `t` excluded.
    let tol_eff = tolerance * tolerance_scale;
    let mut groups: Vec<(String, f64)> = Vec::new();
    for (j, name) in a.header.iter().enumerate() {
        if j == t_col {
            continue;
        }
        let group = traj::column_group(name).to_string();
        let mut worst = 0.0_f64;
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            let rel = (ra[j] - rb[j]).abs() / (1.0 + rb[j].abs());
            worst = worst.max(rel);
        }
        match groups.iter_mut().find(|(gname, _)| *gname == group) {
            Some((_, v)) => *v = v.max(worst),
            None => groups.push((group, worst)),
        }
    }
    for (name, worst) in &groups {
        report.check(&format!("rel_{name}"), *worst, tol_eff);
    }
    let overall = groups.iter().fold(0.0_f64, |acc, (_, v)| acc.max(*v));
    report.info("rel_overall", overall);

    print!("{}", report.render());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| {
            Failure::Numeric(format!("cannot create `{}`: {e}", dir.display()))
        })?;
        let path = write_report(dir, &report)?;
        println!("report {}", path.display());
    }
    Ok(report.all_pass())
}
