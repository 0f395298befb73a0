use super::*;
use crate::grid::{build_domain, complex_hessian, gradient, real_hessian, GridDomain, ShapeSpec};
use crate::solver::{solve_dirichlet, SolveConfig};
use proptest::prelude::*;

fn r2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn ball(n: usize, res: usize) -> Arc<GridDomain> {
    build_domain(n, &ShapeSpec::Ball { radius: 1.0 }, res).unwrap()
}

fn node_near(d: &GridDomain, x: &[f64]) -> usize {
    d.nearest_node(x).unwrap()
}

fn random_unitary(seed: u64) -> CMat {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m = CMat::from_fn(2, 2, |_, _| {
        c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    m.qr().q()
}

#[test]
fn taylor_split_of_norm_squared() {
    let d = ball(2, 17);
    let u = GridFunction::from_fn(&d, r2);
    let x0 = node_near(&d, &[0.25, -0.125, 0.125, 0.25]);
    let p = d.coord(x0);
    let (h, a) = taylor_split(&u, x0).unwrap();
    let want = [c(2.0 * p[0], -2.0 * p[1]), c(2.0 * p[2], -2.0 * p[3])];
    for i in 0..2 {
        assert!((h.l[i] - want[i]).norm() < 1e-10);
        for j in 0..2 {
            assert!(h.b[(i, j)].norm() < 1e-10);
            let e = if i == j { 1.0 } else { 0.0 };
            assert!((a.get(i, j) - c(e, 0.0)).norm() < 1e-10);
        }
    }
    // h(z) = 2 Re<z - x0, x0>
    let z = [0.1, 0.3, -0.2, 0.05];
    let lin: f64 = (0..4).map(|k| 2.0 * (z[k] - p[k]) * p[k]).sum();
    assert!((h.eval(&z) - lin).abs() < 1e-10);
}

#[test]
fn taylor_split_of_pluriharmonic_and_sum() {
    let d = ball(2, 17);
    let o = d.origin_node().unwrap();
    let ph = GridFunction::from_fn(&d, |x| x[0] * x[0] - x[1] * x[1]);
    let (h, a) = taylor_split(&ph, o).unwrap();
    assert!((h.b[(0, 0)] - c(1.0, 0.0)).norm() < 1e-10);
    assert!(a.entries().iter().all(|e| e.norm() < 1e-10));
    let z = [0.3, -0.2, 0.1, 0.4];
    assert!((h.eval(&z) - (z[0] * z[0] - z[1] * z[1])).abs() < 1e-12);

    let sum = GridFunction::from_fn(&d, |x| r2(x) + x[0] * x[0] - x[1] * x[1]);
    let (h, a) = taylor_split(&sum, o).unwrap();
    assert!(h.l.iter().all(|l| l.norm() < 1e-10));
    assert!((h.b[(0, 0)] - c(1.0, 0.0)).norm() < 1e-10);
    assert!(
        (a.get(0, 0) - c(1.0, 0.0)).norm() < 1e-10 && (a.get(1, 1) - c(1.0, 0.0)).norm() < 1e-10
    );
}

#[test]
fn taylor_split_remainder_is_cubic() {
    // v = |z|^2 + Re(z1^2 z2) + 0.3 x1^3 has remainder O(|w|^3) at x0
    let f = |x: &[f64]| {
        r2(x) + (x[0] * x[0] - x[1] * x[1]) * x[2] - 2.0 * x[0] * x[1] * x[3] + 0.3 * x[0].powi(3)
    };
    for res in [17, 33] {
        let d = ball(2, res);
        let v = GridFunction::from_fn(&d, f);
        let x0 = node_near(&d, &[0.125, 0.0, 0.0, 0.125]);
        let (h, a) = taylor_split(&v, x0).unwrap();
        let p = d.coord(x0);
        let t = 0.05;
        let w = [t, -t, 0.5 * t, t];
        let z: Vec<f64> = (0..4).map(|k| p[k] + w[k]).collect();
        let rem = f(&z) - f(&p) - h.eval(&z) - a.quadratic_form(&to_complex(&w));
        assert!(rem.abs() < 20.0 * t.powi(3) + 50.0 * d.h * d.h * t * t / 0.01);
    }
}

#[test]
fn normalize_identity_and_diagonal() {
    let t = normalize_transform(&HermitianMatrix::identity(2)).unwrap();
    assert!(t.distance_to_identity() < 1e-14);

    let t = normalize_transform(&HermitianMatrix::diagonal(&[4.0, 0.25])).unwrap();
    assert!((t.matrix[(0, 0)] - c(0.5, 0.0)).norm() < 1e-14);
    assert!((t.matrix[(1, 1)] - c(2.0, 0.0)).norm() < 1e-14);
    assert!((t.distance_to_identity() - 1.0).abs() < 1e-12);
    assert!((t.inverse().unwrap().distance_to_identity() - 1.0).abs() < 1e-12);
    assert!((t.det_abs() - 1.0).abs() < 1e-12);
}

#[test]
fn normalize_rejects_bad_input() {
    assert!(matches!(
        normalize_transform(&HermitianMatrix::diagonal(&[2.0, -0.5])),
        Err(Error::DegenerateHessian { .. })
    ));
    assert!(matches!(
        normalize_transform(&HermitianMatrix::diagonal(&[2.0, 2.0])),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn normalize_random_unitary_monte_carlo() {
    use rand::{Rng, SeedableRng};
    let u = random_unitary(7);
    let a = HermitianMatrix::from_matrix(
        &(&u * CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(2.0, 0.0), c(0.5, 0.0)]))
            * u.adjoint()),
    );
    let t = normalize_transform(&a).unwrap();
    let lam = [2.0f64, 0.5];
    let bound = lam
        .iter()
        .map(|l| (l.powf(-0.5) - 1.0).abs())
        .fold(0.0, f64::max);
    assert!(t.distance_to_identity() <= bound + 1e-12);
    let bound_inv = lam
        .iter()
        .map(|l| (l.sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    assert!(t.inverse().unwrap().distance_to_identity() <= bound_inv + 1e-12);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let r = 0.7;
    for _ in 0..1000 {
        let g: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = r2(&g).sqrt();
        let w: Vec<f64> = g.iter().map(|v| r * v / s).collect();
        let img = t.apply(&to_complex(&w));
        assert!((a.quadratic_form(&img) - r * r).abs() < 1e-10);
    }
}

#[test]
fn mu0_formula() {
    let m = mu0_from_sigma(0.2, 0.2).unwrap();
    assert!((m - (0.01 / 3f64.powf(1.5)).powi(2)).abs() < 1e-18);
    assert!((m - 3.704e-6).abs() < 1e-9);
    let m1 = mu0_from_sigma(1.0, 1.0).unwrap();
    assert!((m1 - 9.26e-5).abs() < 1e-7);
    let mut last = f64::INFINITY;
    for s in [0.5, 0.1, 0.01, 0.001] {
        let m = mu0_from_sigma(s, 0.5).unwrap();
        assert!(m < last);
        last = m;
    }
    assert!(mu0_from_sigma(0.0, 0.5).is_err());
}

#[test]
fn exact_quadratic_section_is_lattice_ball() {
    let d = ball(1, 129);
    let u = GridFunction::from_fn(&d, r2);
    let x0 = node_near(&d, &[0.1, -0.2]);
    let (h, _) = taylor_split(&u, x0).unwrap();
    let mu = 0.09;
    let s = build_section(&u, x0, mu, &h).unwrap();
    let p = d.coord(x0);
    let want: Vec<usize> = d
        .interior_nodes()
        .iter()
        .copied()
        .filter(|&q| {
            let x = d.coord(q);
            (x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2) <= mu + 1e-12
        })
        .collect();
    assert_eq!(s.nodes, want);
    assert!(s.contains_node(x0));
    let mut s = s;
    let fit = s.attach_fit(&HermitianMatrix::identity(1)).unwrap();
    let slack = 2.0 * d.h / mu.sqrt();
    assert!(fit.c_in >= 1.0 - slack && fit.c_out <= 1.0 + slack);
    assert!(fit.c_out <= 1.0 + 1e-12);
}

#[test]
fn rippled_section_close_to_ball() {
    let d = ball(1, 257);
    let ripple = |x: &[f64]| (40.0 * x[0]).sin() * (40.0 * x[1]).cos();
    let u = GridFunction::from_fn(&d, |x| r2(x) + 0.001 * ripple(x));
    let q = GridFunction::from_fn(&d, r2);
    let x0 = d.origin_node().unwrap();
    let (h, _) = taylor_split(&q, x0).unwrap();
    let mu = 0.01;
    let s = build_section(&u, x0, mu, &h).unwrap();
    let ball_nodes: Vec<usize> = d
        .interior_nodes()
        .iter()
        .copied()
        .filter(|&i| r2(&d.coord(i)) <= mu)
        .collect();
    let sym = s
        .nodes
        .iter()
        .filter(|i| ball_nodes.binary_search(i).is_err())
        .count()
        + ball_nodes
            .iter()
            .filter(|i| s.nodes.binary_search(i).is_err())
            .count();
    assert!(
        (sym as f64) <= 0.15 * ball_nodes.len() as f64,
        "{sym} of {}",
        ball_nodes.len()
    );
}

#[test]
fn section_escape_and_bad_height() {
    let d = ball(1, 65);
    let u = GridFunction::from_fn(&d, r2);
    let x0 = node_near(&d, &[0.5, 0.0]);
    let (h, _) = taylor_split(&u, x0).unwrap();
    assert!(matches!(
        build_section(&u, x0, 0.5, &h),
        Err(Error::SectionEscape { .. })
    ));
    assert!(build_section(&u, x0, 0.0, &h).is_err());
}

#[test]
fn square_section_ratio_sqrt_two() {
    // v = max(|x|, |y|)^2 has square sections
    let d = ball(1, 257);
    let u = GridFunction::from_fn(&d, |x| x[0].abs().max(x[1].abs()).powi(2));
    let o = d.origin_node().unwrap();
    let h = PluriharmonicPoly::zero(vec![c(0.0, 0.0)]);
    let mu = 0.16;
    let mut s = build_section(&u, o, mu, &h).unwrap();
    let fit = s.attach_fit(&HermitianMatrix::identity(1)).unwrap();
    let ratio = fit.c_out / fit.c_in;
    let slack = 4.0 * d.h / mu.sqrt();
    assert!((ratio - 2f64.sqrt()).abs() <= slack, "{ratio}");
}

#[test]
fn ellipsoid_dilation_height() {
    let e = Ellipsoid {
        center: vec![0.0, 0.0],
        a: HermitianMatrix::identity(1),
        height: 0.2,
    };
    let e3 = e.dilate(3.0);
    assert!((e3.height - 1.8).abs() < 1e-15);
    assert!(e3.contains(&[1.3, 0.0]) && !e.contains(&[0.5, 0.0]));
}

#[test]
fn rescale_exact_self_similarity() {
    let d = ball(1, 129);
    let u = GridFunction::from_fn(&d, |x| r2(x) - 1.0);
    let o = d.origin_node().unwrap();
    let h = PluriharmonicPoly::zero(vec![c(0.0, 0.0)]);
    let w = rescale_to_unit(&u, o, 0.25, &h, &HermitianTransform::identity(1)).unwrap();
    let wd = &w.domain;
    let (lo, hi) = wd.crossing_radii(&[0.0, 0.0]);
    assert!((lo - 1.0).abs() < 1e-9 && (hi - 1.0).abs() < 1e-9);
    for &q in wd.interior_nodes() {
        let x = wd.coord(q);
        assert!((w.values[q] - (r2(&x[..2]) - 1.0)).abs() < 1e-10);
    }
}

#[test]
fn rescale_preserves_equation() {
    let d = build_domain(1, &ShapeSpec::PerturbedBall { gamma: 0.1 }, 129).unwrap();
    let f = GridFunction::from_fn(&d, |x| 1.0 + 0.2 * x[0]);
    let (u, rep) = solve_dirichlet(&d, &f, &|_| 0.0, &SolveConfig::default()).unwrap();
    let x0 = d.origin_node().unwrap();
    let (h, a) = taylor_split(&u, x0).unwrap();
    let (an, _) = a.det_normalized().unwrap();
    let t = normalize_transform(&an).unwrap();
    let mu = 0.1;
    let w = rescale_to_unit(&u, x0, mu, &h, &t).unwrap();
    // det of the rescaled function is f(x0 + sqrt(mu) T zeta)
    let wf = GridFunction::from_fn(&w.domain, |z| {
        let y = t.real_matrix() * nalgebra::DVector::from_column_slice(z) * mu.sqrt();
        1.0 + 0.2 * y[0]
    });
    let res = crate::solver::residual_field(&w, &wf).unwrap();
    let worst = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    // Interpolation slack: multilinear kinks of the cubic remainder r = u - Q
    // show up in fine second differences amplified by h_old / h_new.
    let p = d.coord(x0);
    let g = gradient(&u, x0).unwrap();
    let hs = real_hessian(&u, x0).unwrap();
    let q = RealQuadratic {
        c: u.values[x0],
        g,
        hess: hs.iter().copied().collect(),
    };
    let values = (0..d.node_count())
        .map(|i| {
            let x = d.coord(i);
            u.values[i] - q.eval(&[x[0] - p[0], x[1] - p[1]])
        })
        .collect();
    let r = GridFunction {
        domain: d.clone(),
        values,
        trace: u.trace.clone(),
    };
    let reach = 1.3 * mu.sqrt() * t.op_norm();
    let mut m2: f64 = 0.0;
    for &i in d.interior_nodes() {
        let x = d.coord(i);
        if ((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)).sqrt() <= reach {
            if let Ok(hr) = real_hessian(&r, i) {
                m2 = m2.max(hr.amax());
            }
        }
    }
    let sing_min = 1.0 / t.inverse().unwrap().op_norm();
    let ratio = d.h / (mu.sqrt() * sing_min * w.domain.h);
    let slack = m2 * (1.0 + ratio);
    assert!(
        worst <= 2.0 * rep.residual + slack,
        "{worst} vs slack {slack}"
    );
    assert!(matches!(
        rescale_to_unit(
            &u,
            x0,
            mu,
            &h,
            &HermitianTransform::from_matrix(CMat::zeros(1, 1))
        ),
        Err(Error::SingularTransform)
    ));
}

#[test]
fn rescale_image_escape() {
    let d = ball(1, 65);
    let u = GridFunction::from_fn(&d, |x| r2(x) - 1.0);
    let x0 = node_near(&d, &[0.5, 0.0]);
    let (h, _) = taylor_split(&u, x0).unwrap();
    let r = rescale_to_unit(&u, x0, 0.5, &h, &HermitianTransform::identity(1));
    assert!(matches!(r, Err(Error::ImageEscape)), "{r:?}", r = r.err());
}

#[test]
fn chain_on_exact_ball_is_self_similar() {
    let d = ball(1, 129);
    let u = GridFunction::from_fn(&d, |x| r2(x) - 1.0);
    let o = d.origin_node().unwrap();
    let cfg = ChainConfig::default();
    let ch = construct_section_chain(&u, o, 0.2, 3, &cfg).unwrap();
    assert_eq!(ch.levels.len(), 3);
    for l in &ch.levels {
        assert!(
            l.local_transform.distance_to_identity() < 1e-6,
            "{}",
            l.local_transform.distance_to_identity()
        );
        assert!(l.fit.within(l.fit_slack), "{:?}", l.fit);
        assert!(((l.composed_transform.det_abs()) - 1.0).abs() < NORMALIZATION_TOL);
        if let Some((lo, hi)) = l.next_domain_radii {
            assert!((lo - 1.0).abs() < 1e-6 && (hi - 1.0).abs() < 1e-6);
        }
    }
    assert!(ch.spread() <= 1.0 + 1e-9);
    assert!((ch.mu0_sigma - 3.704e-6).abs() < 1e-9);
}

fn perturbed_solution(n: usize, res: usize) -> GridFunction {
    let d = build_domain(n, &ShapeSpec::PerturbedBall { gamma: 0.05 }, res).unwrap();
    let f = GridFunction::from_fn(&d, |x| {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let c4 = if r > 0.0 {
            (4.0 * x[1].atan2(x[0])).cos() * (r * r).min(1.0)
        } else {
            0.0
        };
        1.0 + 0.01 * c4
    });
    solve_dirichlet(&d, &f, &|_| 0.0, &SolveConfig::default())
        .unwrap()
        .0
}

#[test]
fn chain_on_perturbed_data_passes_fits() {
    let u = perturbed_solution(1, 129);
    let d = u.domain.clone();
    let x0 = node_near(&d, &[0.1, 0.05]);
    let ch = construct_section_chain(&u, x0, 0.2, 3, &ChainConfig::default()).unwrap();
    assert_eq!(ch.levels.len(), 3);
    let mut cprime: f64 = 0.0;
    for l in &ch.levels {
        let tol = 0.1 * 0.2 + l.fit_slack;
        assert!(
            l.fit.within(tol),
            "level {} fit {:?} tol {tol}",
            l.level,
            l.fit
        );
        assert!((l.composed_transform.det_abs() - 1.0).abs() < NORMALIZATION_TOL);
        cprime = cprime.max(l.local_transform.distance_to_identity() / 0.2f64.sqrt());
        if let Some((lo, hi)) = l.next_domain_radii {
            let slack = 2.0 * ch.levels[0].grid_h.max(2.6 / 64.0);
            assert!(
                lo >= 1.0 - 0.02 - slack && hi <= 1.0 + 0.02 + slack,
                "{lo} {hi}"
            );
        }
    }
    assert!(cprime.is_finite() && cprime < 1.0, "C' = {cprime}");

    // shifts vanish at x0 and are pluriharmonic on the grid
    for l in &ch.levels {
        assert!(l.shift.eval(&ch.base_point).abs() < 1e-14);
        let hf = GridFunction::from_fn(&d, |x| l.shift.eval(x));
        let a = complex_hessian(&hf, x0).unwrap();
        assert!(a.entries().iter().all(|e| e.norm() < 1e-9));
    }

    // monotonicity with slack over pairs of heights
    let top = ch.top_height;
    let low = ch.lowest_height();
    let hs: Vec<f64> = (0..7)
        .map(|j| top * (low / top).powf(j as f64 / 6.5))
        .collect();
    let mut pairs = 0;
    let mut worst_c: f64 = 0.0;
    for i in 0..hs.len() {
        for j in i..hs.len() {
            let (m2, m1) = (hs[i], hs[j]);
            let s1 = ch.section_at(&u, m1).unwrap();
            // smallest c with S_{m1} inside S_{(1+c) m2}
            let mut cc = 0.0;
            loop {
                let s2 = ch.section_at(&u, (1.0 + cc) * m2);
                let s2 = match s2 {
                    Ok(s) => s,
                    Err(_) => build_section(
                        &u,
                        x0,
                        (1.0 + cc) * m2,
                        &ch.shift_and_transform(m2).unwrap().0.clone(),
                    )
                    .unwrap(),
                };
                if s1.nodes.iter().all(|q| s2.contains_node(*q)) || cc > 4.0 {
                    break;
                }
                cc += 0.05;
            }
            worst_c = worst_c.max(cc);
            pairs += 1;
        }
    }
    assert!(pairs >= 20);
    assert!(worst_c <= 3.0 * 0.2f64.sqrt(), "c(sigma) = {worst_c}");
}

#[test]
fn chain_in_two_variables() {
    let u = perturbed_solution(2, 17);
    let d = u.domain.clone();
    let o = d.origin_node().unwrap();
    let cfg = ChainConfig {
        top_height: Some(0.2),
        ..ChainConfig::default()
    };
    let ch = construct_section_chain(&u, o, 0.2, 2, &cfg).unwrap();
    assert_eq!(ch.levels.len(), 2);
    for l in &ch.levels {
        assert!((l.composed_transform.det_abs() - 1.0).abs() < NORMALIZATION_TOL);
        assert!(l.fit.within(0.5 * 0.2 + l.fit_slack), "{:?}", l.fit);
    }
    let rec = ch.record();
    assert_eq!(rec.levels[0].transform.len(), 2 * 2 * 2);
    let js = serde_json::to_string(&rec).unwrap();
    let back: ChainRecord = serde_json::from_str(&js).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), js);
}

#[test]
fn chain_preconditions() {
    let d = ball(1, 65);
    let u = GridFunction::from_fn(&d, |x| r2(x) - 1.0);
    let ctx = ChainContext::new(&u, &ChainConfig::default()).unwrap();
    let edge = d
        .interior_nodes()
        .iter()
        .copied()
        .find(|&q| d.cell_neighbors(q).iter().any(|&p| !d.is_interior(p)))
        .unwrap();
    assert!(matches!(
        ctx.chain(edge, 0.2, 2),
        Err(Error::Precondition(_))
    ));
    let o = d.origin_node().unwrap();
    assert!(ctx.chain(o, 0.0, 2).is_err());
    assert!(ctx.chain(o, 0.2, 0).is_err());
    let bad = ChainConfig {
        mu0: 0.5,
        ..ChainConfig::default()
    };
    assert!(ChainContext::new(&u, &bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pluriharmonic_poly_has_zero_complex_hessian(
        l in proptest::collection::vec(-2.0f64..2.0, 4),
        b in proptest::collection::vec(-2.0f64..2.0, 8),
        x0 in proptest::collection::vec(-0.3f64..0.3, 4),
    ) {
        let d = ball(2, 9);
        let l = vec![c(l[0], l[1]), c(l[2], l[3])];
        let bm = CMat::from_row_slice(2, 2, &[c(b[0], b[1]), c(b[2], b[3]), c(b[4], b[5]), c(b[6], b[7])]);
        let p = PluriharmonicPoly::new(to_complex(&x0), l, bm);
        prop_assert!(p.eval(&x0).abs() < 1e-15);
        prop_assert!((p.b[(0, 1)] - p.b[(1, 0)]).norm() == 0.0);
        let f = GridFunction::from_fn(&d, |x| p.eval(x));
        let o = d.origin_node().unwrap();
        let a = complex_hessian(&f, o).unwrap();
        prop_assert!(a.entries().iter().all(|e| e.norm() < 1e-10));
        // real quadratic agrees with the complex evaluation
        let q = p.real_quadratic();
        let z = [0.2, -0.1, 0.05, 0.3];
        let y: Vec<f64> = (0..4).map(|k| z[k] - x0[k]).collect();
        prop_assert!((q.eval(&y) - p.eval(&z)).abs() < 1e-12);
    }

    #[test]
    fn pull_back_matches_composition(
        l in proptest::collection::vec(-1.0f64..1.0, 4),
        b in proptest::collection::vec(-1.0f64..1.0, 6),
        s in 0.2f64..1.0,
        seed in 0u64..1000,
    ) {
        let m = random_unitary(seed) * c(1.3, 0.0);
        let x0 = vec![c(0.1, -0.2), c(0.05, 0.0)];
        let bm = CMat::from_row_slice(2, 2, &[c(b[0], b[1]), c(b[2], b[3]), c(b[2], b[3]), c(b[4], b[5])]);
        let p = PluriharmonicPoly::new(vec![c(0.0, 0.0); 2], vec![c(l[0], l[1]), c(l[2], l[3])], bm);
        let eta = s * s;
        let q = p.pull_back(&x0, s, &m, eta);
        let z = vec![c(0.3, 0.1), c(-0.2, 0.25)];
        let w: Vec<C64> = (0..2).map(|i| z[i] - x0[i]).collect();
        let mw = &m * nalgebra::DVector::from_column_slice(&w);
        let arg: Vec<C64> = (0..2).map(|i| mw[i] / s).collect();
        prop_assert!((q.eval_c(&z) - eta * p.eval_c(&arg)).abs() < 1e-12);
    }
}
