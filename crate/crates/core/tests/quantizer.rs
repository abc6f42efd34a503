use nalgebra::DVector;
use proptest::prelude::*;
use quantswitch::example;
use quantswitch::quantizer::{bits_per_sample, build_log_quantizer, cell_max_deviation, cell_min_norm, cells_covering_ellipsoid, Cell};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_box(rng: &mut ChaCha8Rng) -> Cell {
    let lo: Vec<f64> = (0..2).map(|_| rng.random_range(-5.0..5.0)).collect();
    let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.05..3.0)).collect();
    let straddles = lo.iter().zip(&hi).all(|(l, h)| *l <= 0.0 && *h >= 0.0);
    let q: Vec<f64> = if straddles {
        vec![0.0, 0.0]
    } else {
        lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect()
    };
    Cell::closed(0, &lo, &hi, &q).unwrap()
}

/// Uniform grid over the box, plus each axis' zero crossing when it lies inside.
fn grid_points(cell: &Cell, per_axis: usize) -> Vec<DVector<f64>> {
    let axis = |k: usize| {
        let mut v: Vec<f64> = (0..per_axis)
            .map(|i| cell.lower[k] + i as f64 / (per_axis - 1) as f64 * (cell.upper[k] - cell.lower[k]))
            .collect();
        if cell.lower[k] < 0.0 && cell.upper[k] > 0.0 {
            v.push(0.0);
        }
        v
    };
    let (xs, ys) = (axis(0), axis(1));
    xs.iter()
        .flat_map(|&x| ys.iter().map(move |&y| DVector::from_vec(vec![x, y])))
        .collect()
}

#[test]
fn deadzone_and_first_band() {
    let qz = example::quantizer();
    let (q, _) = qz.quantize(&DVector::from_vec(vec![0.05, -0.05])).unwrap();
    assert_eq!(q, DVector::from_vec(vec![0.0, 0.0]));
    let (q, _) = qz.quantize(&DVector::from_vec(vec![0.09, 0.0])).unwrap();
    assert!((q[0] - 0.088).abs() < 1e-15);
    assert_eq!(q[1], 0.0);
}

#[test]
fn min_norm_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let cell = random_box(&mut rng);
        let oracle = grid_points(&cell, 100).iter().map(|x| x.norm()).fold(f64::INFINITY, f64::min);
        assert!((cell_min_norm(&cell) - oracle).abs() <= 1e-6);
    }
}

#[test]
fn max_deviation_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let cell = random_box(&mut rng);
        let oracle = grid_points(&cell, 100).iter().map(|x| (&cell.q - x).norm()).fold(0.0, f64::max);
        // The maximum sits at a vertex, which the grid contains.
        assert!((cell_max_deviation(&cell) - oracle).abs() <= 1e-6);
    }
}

#[test]
fn exactly_one_cell_claims_each_point() {
    let qz = build_log_quantizer(0.08, 1.2, 12, 2).unwrap();
    let radius = qz.coverage_radius();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let x = loop {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-radius..radius));
            if x.norm() <= radius {
                break x;
            }
        };
        let claims: Vec<usize> = qz.cells().iter().filter(|c| c.contains(&x)).map(|c| c.id).collect();
        assert_eq!(claims.len(), 1, "{x:?} claimed by {claims:?}");
        assert_eq!(qz.locate(&x), Some(claims[0]));
    }
    // Points on band boundaries go to the cell nearer the origin.
    for x in [[0.08, 0.0], [-0.08, 0.096], [0.096, -0.096]] {
        let x = DVector::from_vec(x.to_vec());
        let claims: Vec<usize> = qz.cells().iter().filter(|c| c.contains(&x)).map(|c| c.id).collect();
        assert_eq!(claims.len(), 1);
        assert_eq!(qz.locate(&x), Some(claims[0]));
    }
}

#[test]
fn covering_cells_contain_ellipsoid_samples() {
    let qz = example::quantizer();
    let cert = example::reference_certificate().unwrap();
    let level = cert.outer_level();
    let cover = cells_covering_ellipsoid(&qz, cert.p(), level).unwrap();
    let mut member = vec![false; qz.cells().len()];
    for &id in &cover {
        member[id] = true;
    }
    let half_axis = (level / cert.lambda_min()).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut hits = 0;
    while hits < 100_000 {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-half_axis..half_axis));
        if cert.value(&x) > level {
            continue;
        }
        hits += 1;
        let (_, id) = qz.quantize(&x).unwrap();
        assert!(member[id], "cell {id} missing for {x:?}");
    }
    assert!((bits_per_sample(cover.len(), 2) - ((cover.len() as f64).log2() + 1.0)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn quantization_error_within_cell_deviation(x in -80.0f64..80.0, y in -80.0f64..80.0) {
        let qz = example::quantizer();
        let p = DVector::from_vec(vec![x, y]);
        prop_assume!(p.norm() <= qz.coverage_radius());
        let (q, id) = qz.quantize(&p).unwrap();
        prop_assert!((&q - &p).norm() <= cell_max_deviation(qz.cell(id)) + 1e-12);
        prop_assert!(qz.cell(id).contains(&p));
    }

    #[test]
    fn cells_away_from_origin_have_positive_min_norm(xi0 in 0.01f64..1.0, eta in 1.05f64..2.0, levels in 1usize..15) {
        let qz = build_log_quantizer(xi0, eta, levels, 2).unwrap();
        for cell in qz.cells() {
            if !cell.closure_contains_origin() {
                prop_assert!(cell_min_norm(cell) > 0.0);
            }
        }
    }

    #[test]
    fn outside_coverage_is_rejected(angle in 0.0f64..std::f64::consts::TAU, extra in 1e-6f64..10.0) {
        let qz = build_log_quantizer(0.08, 1.2, 10, 2).unwrap();
        let r = qz.coverage_radius() + extra;
        let x = DVector::from_vec(vec![r * angle.cos(), r * angle.sin()]);
        prop_assert!(qz.quantize(&x).is_err());
    }
}
