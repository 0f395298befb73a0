use super::*;
use crate::linalg::to_complex;
use proptest::prelude::*;

fn ball(n: usize, r: f64, res: usize) -> Arc<GridDomain> {
    build_domain(n, &ShapeSpec::Ball { radius: r }, res).unwrap()
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[test]
fn unit_disk_spacing_and_count() {
    let d = ball(1, 1.0, 129);
    assert!((d.h - 2.0 / 128.0).abs() < 1e-15);
    let area = std::f64::consts::PI / (d.h * d.h);
    let count = d.interior_nodes().len() as f64;
    assert!((count - area).abs() / area < 0.01, "{count} vs {area}");
}

#[test]
fn coarse_disk_center_is_interior() {
    let d = ball(1, 1.0, 9);
    let c = d.origin_node().unwrap();
    assert!(d.is_interior(c));
}

#[test]
fn masks_are_disjoint_and_close_stencils() {
    let d = build_domain(2, &ShapeSpec::PerturbedBall { gamma: 0.05 }, 13).unwrap();
    let im = d.interior_mask();
    let bm = d.boundary_mask();
    assert!(im.iter().zip(&bm).all(|(a, b)| !(*a && *b)));
    for &q in d.interior_nodes() {
        for k in 0..d.dirs().len() {
            for s in [1isize, -1] {
                let p = (q as isize + s * d.offset(k)) as usize;
                assert!(im[p] || bm[p]);
            }
        }
    }
}

#[test]
fn perturbed_boundary_nodes_near_sphere() {
    let gamma = 0.05;
    let d = build_domain(2, &ShapeSpec::PerturbedBall { gamma }, 17).unwrap();
    let mut worst_axis: f64 = 0.0;
    for p in d.boundary_nodes() {
        let r = norm2(&d.coord(p)[..4]).sqrt();
        let dist = (r - 1.0).abs();
        assert!(dist <= gamma + std::f64::consts::SQRT_2 * d.h + 1e-12);
        let axis_only = (0..d.dim).any(|a| d.axis_neighbors(p, a).any(|q| d.is_interior(q)));
        if axis_only {
            worst_axis = worst_axis.max(dist);
        }
    }
    assert!(worst_axis <= gamma + d.h + 1e-12, "{worst_axis}");
}

#[test]
fn rejects_bad_inputs() {
    assert!(matches!(
        build_domain(1, &ShapeSpec::PerturbedBall { gamma: 0.6 }, 33),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        build_domain(1, &ShapeSpec::Ball { radius: 1.0 }, 7),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        build_domain(3, &ShapeSpec::Ball { radius: 1.0 }, 9),
        Err(Error::InvalidInput(_))
    ));
    let r = GridDomain::new(
        2,
        Shape::Spec(ShapeSpec::Ball { radius: 1.0 }),
        101,
        1.0,
        1_000_000,
        None,
    );
    assert!(matches!(r, Err(Error::MemoryCap { .. })));
}

#[test]
fn identity_hessian_of_modulus_squared() {
    let d = build_domain(2, &ShapeSpec::PerturbedBall { gamma: 0.05 }, 13).unwrap();
    let u = GridFunction::from_fn(&d, norm2);
    for &q in d.interior_nodes() {
        let a = complex_hessian(&u, q).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((a.get(i, j).re - e).abs() < 1e-9 && a.get(i, j).im.abs() < 1e-9);
            }
        }
        assert!((laplacian(&u, q).unwrap() - 8.0).abs() < 1e-8);
        assert!((trace_inverse(&u, q).unwrap() - 2.0).abs() < 1e-8);
    }
}

#[test]
fn pluriharmonic_quadratic_has_zero_hessian() {
    let d = ball(2, 1.0, 13);
    let u = GridFunction::from_fn(&d, |x| x[0] * x[0] - x[1] * x[1]);
    for &q in d.interior_nodes() {
        let a = complex_hessian(&u, q).unwrap();
        assert!(a.entries().iter().all(|c| c.norm() < 1e-10));
    }
    let c = d.origin_node().unwrap();
    assert!(matches!(
        trace_inverse(&u, c),
        Err(Error::DegenerateHessian { .. })
    ));
}

#[test]
fn diagonal_quadratic_closed_forms() {
    let d = ball(2, 1.0, 13);
    let u = GridFunction::from_fn(&d, |x| {
        2.0 * (x[0] * x[0] + x[1] * x[1]) + 0.5 * (x[2] * x[2] + x[3] * x[3])
    });
    let c = d.origin_node().unwrap();
    assert!((laplacian(&u, c).unwrap() - 10.0).abs() < 1e-9);
    assert!((trace_inverse(&u, c).unwrap() - 2.5).abs() < 1e-9);
}

fn quartic_error(res: usize) -> f64 {
    let d = Arc::new(
        GridDomain::new(
            2,
            Shape::Spec(ShapeSpec::Ball { radius: 1.5 }),
            res,
            2.0,
            DEFAULT_NODE_CAP,
            None,
        )
        .unwrap(),
    );
    let u = GridFunction::from_fn(&d, |x| (x[0] * x[0] + x[1] * x[1]).powi(2));
    let q = d.nearest_node(&[1.0, 0.0, 0.0, 0.0]).unwrap();
    let a = complex_hessian(&u, q).unwrap();
    let exact = [[4.0, 0.0], [0.0, 0.0]];
    let mut err: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            err = err.max((a.get(i, j) - nalgebra::Complex::new(exact[i][j], 0.0)).norm());
        }
    }
    err
}

#[test]
fn quartic_hessian_second_order() {
    let e1 = quartic_error(17);
    let e2 = quartic_error(33);
    assert!(e1 < 0.2, "{e1}");
    let ratio = e1 / e2;
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn boundary_node_is_a_stencil_violation() {
    let d = ball(1, 1.0, 17);
    let u = GridFunction::from_fn(&d, norm2);
    let b = d.boundary_nodes()[0];
    assert!(matches!(
        complex_hessian(&u, b),
        Err(Error::StencilViolation { .. })
    ));
}

#[test]
fn gradient_exact_on_quadratics_near_boundary() {
    let d = build_domain(1, &ShapeSpec::PerturbedBall { gamma: 0.1 }, 21).unwrap();
    let u = GridFunction::from_fn(&d, |x| 3.0 * x[0] * x[0] - x[0] * x[1] + 2.0 * x[1]);
    for &q in d.interior_nodes() {
        let x = d.coord(q);
        let g = gradient(&u, q).unwrap();
        assert!((g[0] - (6.0 * x[0] - x[1])).abs() < 1e-9);
        assert!((g[1] - (2.0 - x[0])).abs() < 1e-9);
    }
}

#[test]
fn interpolation_estimate_examples() {
    let d = ball(1, 1.0, 65);
    let c = d.origin_node().unwrap();
    let mu = 0.3;
    let u = GridFunction::from_fn(&d, |_| mu);
    let rep = interpolation_check(&u, c, mu, 0.5, 1.0, 1.0, 1.0).unwrap();
    assert!(rep.checks[0].value == 0.0 && rep.checks[0].holds);

    let lam = 0.4;
    let u = GridFunction::from_fn(&d, |x| mu * (x[0] / lam).sin());
    // |D^m u| <= mu / lam^m exactly, so C = 1 suffices for the mu / lambda^m term
    let rep = interpolation_check(&u, c, mu, lam, 1.0, 2.0, 1.0).unwrap();
    assert!(rep.holds, "{rep:?}");

    let r0 = 0.9;
    let u = GridFunction::from_fn(&d, norm2);
    let sup = r0 * r0;
    let best = (1..200)
        .map(|i| r0 * i as f64 / 200.0)
        .map(|l| (l, l * l + sup / (l * l)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let rep = interpolation_check(&u, c, sup, best.0, 2.0, 1.0, r0).unwrap();
    assert!((rep.checks[1].value - 2.0).abs() < 1e-9);
    assert!(rep.checks[1].holds);
    assert!(interpolation_check(&u, c, sup, 1.5, 1.0, 1.0, r0).is_err());
}

#[test]
fn cache_and_csv_roundtrip() {
    let d = ball(1, 1.0, 17);
    let u = GridFunction::from_fn(&d, norm2);
    let dir = std::env::temp_dir().join(format!("cmalab-grid-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("u.cmag");
    io::write_cache(&u, &p).unwrap();
    let (hdr, vals) = io::read_cache(&p).unwrap();
    assert_eq!(
        hdr,
        io::CacheHeader {
            n: 1,
            resolution: 17,
            h: d.h
        }
    );
    assert!(vals
        .iter()
        .zip(&u.values)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..4], b"CMAG");
    assert_eq!(bytes.len(), 4 + 2 + 2 + 4 + 8 + 8 * 17 * 17);
    let c = dir.join("u.csv");
    io::write_csv(&u, &c).unwrap();
    let text = std::fs::read_to_string(&c).unwrap();
    assert!(text.starts_with("node,x1,y1,value"));
    assert_eq!(
        text.lines().count(),
        1 + u.values.iter().filter(|v| v.is_finite()).count()
    );
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn boundary_trace_detects_shift() {
    let d = ball(1, 1.0, 33);
    let u = GridFunction::from_fn(&d, |x| norm2(x) - 1.0);
    let mut v = u.clone();
    v.trace = None;
    assert!(v.boundary_trace().iter().all(|t| t.abs() < 1e-12));
    let w = v.map(|x| x + 0.1);
    assert!(w.boundary_trace().iter().all(|t| (t - 0.1).abs() < 1e-12));
}

#[test]
fn multilinear_reproduces_affine() {
    let vals: Vec<f64> = (0..81)
        .map(|i| (i / 9) as f64 * 0.5 - (i % 9) as f64)
        .collect();
    // node (i, j) at (-1 + i/4, -1 + j/4): value 0.5 i - j
    let x = [0.13, -0.41];
    let i = (x[0] + 1.0) * 4.0;
    let j = (x[1] + 1.0) * 4.0;
    let v = multilinear(&vals, 2, 9, 1.0, &x).unwrap();
    assert!((v - (0.5 * i - j)).abs() < 1e-12);
    assert!(multilinear(&vals, 2, 9, 1.0, &[1.2, 0.0]).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hermitian_symmetry_is_exact(c in prop::collection::vec(-2.0f64..2.0, 10)) {
        let d = ball(2, 1.0, 9);
        let u = GridFunction::from_fn(&d, |x| {
            let z = to_complex(x);
            c[0] * z[0].norm_sqr() + c[1] * z[1].norm_sqr() + c[2] * (z[0] * z[1].conj()).re
                + c[3] * (z[0] * z[1].conj()).im + c[4] * x[0].powi(3) + c[5] * x[1] * x[2] * x[3]
                + c[6] * (x[0] * 3.0).sin() + c[7] * x[3].powi(4) + c[8] * x[1] * x[2] + c[9]
        });
        for &q in d.interior_nodes() {
            let a = complex_hessian(&u, q).unwrap();
            let e = a.entries();
            prop_assert_eq!(e[(0, 1)], e[(1, 0)].conj());
            prop_assert_eq!(e[(0, 0)].im, 0.0);
        }
    }

    #[test]
    fn convex_quadratics_have_nonnegative_laplacian(m in prop::collection::vec(-1.0f64..1.0, 16)) {
        let d = ball(2, 1.0, 9);
        let b = nalgebra::DMatrix::from_row_slice(4, 4, &m);
        let s = &b * b.transpose();
        let u = GridFunction::from_fn(&d, |x| {
            let v = nalgebra::DVector::from_column_slice(x);
            (v.transpose() * &s * v)[(0, 0)]
        });
        for &q in d.interior_nodes() {
            prop_assert!(laplacian(&u, q).unwrap() >= -1e-9);
        }
    }

    #[test]
    fn pluriharmonic_polys_vanish(l in prop::collection::vec(-1.0f64..1.0, 4), b in prop::collection::vec(-1.0f64..1.0, 6)) {
        let d = build_domain(2, &ShapeSpec::PerturbedBall { gamma: 0.1 }, 9).unwrap();
        let u = GridFunction::from_fn(&d, |x| {
            let z = to_complex(x);
            let lz = nalgebra::Complex::new(l[0], l[1]) * z[0] + nalgebra::Complex::new(l[2], l[3]) * z[1];
            let q = nalgebra::Complex::new(b[0], b[1]) * z[0] * z[0]
                + nalgebra::Complex::new(b[2], b[3]) * z[0] * z[1]
                + nalgebra::Complex::new(b[4], b[5]) * z[1] * z[1];
            (lz + q).re
        });
        for &q in d.interior_nodes() {
            let a = complex_hessian(&u, q).unwrap();
            prop_assert!(a.entries().iter().all(|c| c.norm() < 1e-11));
        }
    }
}
