use freeconv::haar::{identity_defect, sample_haar, Field, HaarMatrix};
use freeconv::stats;

fn corr(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (stats::mean(x), stats::mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn first_entry_law_is_rotation_invariant() {
    let n = 16;
    let draws = 2000;
    for field in [Field::Unitary, Field::Orthogonal] {
        let v: HaarMatrix<f64> = sample_haar(n, field, 99).unwrap();
        let plain: Vec<f64> =
            (0..draws).map(|s| sample_haar::<f64>(n, field, s).unwrap().entries[(0, 0)].norm_sqr()).collect();
        let rotated: Vec<f64> = (0..draws)
            .map(|s| {
                let u = sample_haar::<f64>(n, field, 100_000 + s).unwrap();
                (&v.entries * &u.entries)[(0, 0)].norm_sqr()
            })
            .collect();
        let d = stats::ks_statistic(&plain, &rotated);
        assert!(d < stats::ks_critical(draws as usize, draws as usize, 0.01), "{field:?}: KS {d}");
    }
}

#[test]
fn decomposition_pieces_are_uncorrelated() {
    let n = 6;
    let i = 2;
    for field in [Field::Unitary, Field::Orthogonal] {
        let mut v_entry = Vec::new();
        let mut v_other = Vec::new();
        let mut minor_diag = Vec::new();
        let mut minor_off = Vec::new();
        for s in 0..500 {
            let u: HaarMatrix<f64> = sample_haar(n, field, 7_000 + s).unwrap();
            let d = u.partial_decompose(i).unwrap();
            v_entry.push(d.v[i].norm_sqr());
            v_other.push(d.v[0].re);
            let minor = &d.minor_factor;
            minor_diag.push(minor[(0, 0)].norm_sqr());
            minor_off.push(minor[(3, 4)].re);
            // The minor acts as the identity on e_i.
            for k in 0..n {
                let expected = if k == i { 1.0 } else { 0.0 };
                assert!((minor[(k, i)].re - expected).abs() < 1e-12 && minor[(k, i)].im.abs() < 1e-12);
                assert!((minor[(i, k)].re - expected).abs() < 1e-12 && minor[(i, k)].im.abs() < 1e-12);
            }
            assert!(identity_defect(&(minor.adjoint() * minor)) < 1e-10);
        }
        for (x, y) in [(&v_entry, &minor_diag), (&v_other, &minor_off)] {
            let c = corr(x, y);
            assert!(c.abs() < 0.1, "{field:?}: correlation {c}");
        }
    }
}

#[test]
fn recomposition_stays_unitary() {
    for field in [Field::Unitary, Field::Orthogonal] {
        let u: HaarMatrix<f64> = sample_haar(40, field, 5).unwrap();
        for i in [0, 17, 39] {
            let d = u.partial_decompose(i).unwrap();
            assert!(identity_defect(&(d.householder().adjoint() * d.householder())) < 1e-10);
            let back = d.reconstruct();
            assert!(identity_defect(&(back.adjoint() * &back)) < 1e-10);
        }
    }
}

#[test]
fn same_seed_same_bits() {
    for field in [Field::Unitary, Field::Orthogonal] {
        let a: HaarMatrix<f64> = sample_haar(30, field, 11).unwrap();
        let b: HaarMatrix<f64> = sample_haar(30, field, 11).unwrap();
        assert_eq!(a.entries, b.entries);
        let c: HaarMatrix<f64> = sample_haar(30, field, 12).unwrap();
        assert_ne!(a.entries, c.entries);
    }
}
