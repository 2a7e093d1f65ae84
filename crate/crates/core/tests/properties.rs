use nalgebra::Matrix3;
use proptest::prelude::*;

use homogbound::analysis::{certify_ordering, eig3_sym};
use homogbound::coefficients::{read_voxel_file, write_voxel_file, CoefficientField};
use homogbound::operators::DerivativeOperators;
use homogbound::{PeriodicGrid, Sym3};

fn spd() -> impl Strategy<Value = Sym3> {
    prop::array::uniform9(-1.0f64..1.0).prop_map(|b| {
        let b = Matrix3::from_row_slice(&b);
        Sym3::from_matrix3(&(b * b.transpose() + Matrix3::identity() * 0.1))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn node_index_is_periodic(n in prop::array::uniform3(1usize..7), c in prop::array::uniform3(-20i64..20), k in prop::array::uniform3(-3i64..3)) {
        let g = PeriodicGrid::new(n, [1.0; 3]).unwrap();
        let shifted = g.node_index(
            c[0] + k[0] * n[0] as i64,
            c[1] + k[1] * n[1] as i64,
            c[2] + k[2] * n[2] as i64,
        );
        prop_assert_eq!(g.node_index(c[0], c[1], c[2]), shifted);
        prop_assert!(shifted < g.n_nodes());
    }

    #[test]
    fn voxel_file_round_trip_is_bit_exact(n in prop::array::uniform3(1usize..4), cells in prop::collection::vec(spd(), 27)) {
        let grid = PeriodicGrid::new(n, [1.0, 2.0, 0.5]).unwrap();
        let voxels: Vec<Sym3> = cells.into_iter().take(grid.n_vox()).collect();
        let field = CoefficientField::from_voxels(&grid, &voxels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.vox");
        write_voxel_file(&path, &grid, &field).unwrap();
        let (g2, back) = read_voxel_file(&path).unwrap();
        prop_assert_eq!(g2.n(), grid.n());
        for (a, b) in voxels.iter().zip(&back) {
            for (x, y) in a.components().iter().zip(b.components()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn eigenvalues_match_nalgebra(m in spd(), shift in -5.0f64..5.0) {
        let a = m.to_matrix3() - Matrix3::identity() * shift;
        let ours = eig3_sym(&a).unwrap();
        let mut theirs: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
        theirs.sort_by(f64::total_cmp);
        for (x, y) in ours.iter().zip(&theirs) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn ordering_certificate_matches_shift(m in spd(), eps in 1e-6f64..1.0) {
        let a = m.to_matrix3();
        let up = a + Matrix3::identity() * eps;
        prop_assert!(certify_ordering(&a, &up, 0.0).ordered);
        prop_assert!(!certify_ordering(&up, &a, 0.0).ordered);
        prop_assert!((certify_ordering(&a, &up, 0.0).min_gap_eig - eps).abs() < 1e-10);
    }

    #[test]
    fn gradient_and_curl_are_orthogonal(n in prop::array::uniform3(1usize..5), seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let grid = PeriodicGrid::new(n, [1.0, 0.7, 1.3]).unwrap();
        let ops = DerivativeOperators::new(&grid);
        let u: Vec<f64> = (0..grid.n_vox()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let psi: Vec<f64> = (0..3 * grid.n_vox()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (g, c) = (ops.grad(&u).unwrap(), ops.curl(&psi).unwrap());
        let scale = (ops.inner(&g, &g) * ops.inner(&c, &c)).sqrt();
        prop_assert!(ops.inner(&g, &c).abs() <= 1e-12 * scale.max(1e-300));
    }
}
