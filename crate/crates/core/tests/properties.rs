use phi4_core::noise::halve;
use phi4_core::{
    apply_discrete_laplacian, build_grid_mra, daubechies_coefficients, drift, forward_transform,
    heat_semigroup_apply, holder_norm, inverse_transform, inverse_wavelet_transform, lattice_action, make_grid,
    symbol_table, wavelet_transform, wick_power, GridField, KernelSet, LatticeMeasureParams, Phi4Params,
    Phi4Stepper, Trajectory,
};
use proptest::prelude::*;

fn field(n: u32) -> impl Strategy<Value = GridField> {
    let len = 1usize << (3 * n);
    prop::collection::vec(-3.0f64..3.0, len).prop_map(move |v| GridField::new(make_grid(n).unwrap(), v).unwrap())
}

fn field_pair(n: u32) -> impl Strategy<Value = (GridField, GridField)> {
    (field(n), field(n))
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn wavelet_round_trip_and_parseval(f in field(3), order in 1u32..=2, n_min in 0u32..=1) {
        let mra = build_grid_mra(f.grid(), daubechies_coefficients(order).unwrap(), n_min).unwrap();
        let c = wavelet_transform(&f, &mra).unwrap();
        let back = inverse_wavelet_transform(&c, &mra).unwrap();
        prop_assert!(close(back.values(), f.values(), 1e-10));
        let energy: f64 = f.values().iter().map(|v| v * v).sum::<f64>() * f.grid().cell_volume();
        prop_assert!((c.sum_of_squares() - energy).abs() <= 1e-10 * (1.0 + energy));
    }

    #[test]
    fn holder_norm_is_homogeneous_and_subadditive((f, g) in field_pair(3), s in -4.0f64..4.0) {
        let mra = build_grid_mra(f.grid(), daubechies_coefficients(1).unwrap(), 0).unwrap();
        let nf = holder_norm(&f, -0.6, &mra).unwrap();
        let ng = holder_norm(&g, -0.6, &mra).unwrap();
        let ns = holder_norm(&f.scaled(s), -0.6, &mra).unwrap();
        prop_assert!((ns - s.abs() * nf).abs() <= 1e-10 * (1.0 + ns));
        let nsum = holder_norm(&f.add(&g).unwrap(), -0.6, &mra).unwrap();
        prop_assert!(nsum <= nf + ng + 1e-10);
    }

    #[test]
    fn fourier_round_trip(f in field(3)) {
        let back = inverse_transform(&forward_transform(&f));
        prop_assert!(close(back.values(), f.values(), 1e-12));
    }

    #[test]
    fn laplacian_matches_its_symbol(f in field(2)) {
        let symbols = symbol_table(&f.grid());
        let mut spec = forward_transform(&f);
        for (c, a) in spec.coeffs_mut().iter_mut().zip(&symbols) {
            *c *= *a;
        }
        let spectral = inverse_transform(&spec);
        let direct = apply_discrete_laplacian(&f);
        prop_assert!(close(spectral.values(), direct.values(), 1e-10));
        prop_assert!(symbols.iter().all(|&a| a <= 0.0));
    }

    #[test]
    fn heat_semigroup_composes_and_preserves_mean(f in field(2), s in 0.0f64..0.2, t in 0.0f64..0.2) {
        let k = KernelSet::new(f.grid());
        let two = heat_semigroup_apply(&heat_semigroup_apply(&f, s, &k).unwrap(), t, &k).unwrap();
        let one = heat_semigroup_apply(&f, s + t, &k).unwrap();
        prop_assert!(close(two.values(), one.values(), 1e-10));
        prop_assert!((one.integral() - f.integral()).abs() <= 1e-10 * (1.0 + f.integral().abs()));
    }

    #[test]
    fn action_is_even_and_drift_odd(f in field(2), lambda in 0.0f64..1.0, c in -1.0f64..1.0) {
        let p = LatticeMeasureParams::new(f.grid(), lambda, 1.0, c);
        let neg = f.scaled(-1.0);
        let (s, sn) = (lattice_action(&f, &p), lattice_action(&neg, &p));
        prop_assert!((s - sn).abs() <= 1e-12 * (1.0 + s.abs()));
        let d = drift(&f, &p);
        let dn = drift(&neg, &p).scaled(-1.0);
        prop_assert!(close(d.values(), dn.values(), 1e-12));
    }

    #[test]
    fn halving_averages_children(f in field(3)) {
        let coarse = halve(f.values(), f.grid());
        let coarse = GridField::new(make_grid(2).unwrap(), coarse).unwrap();
        prop_assert!((coarse.integral() - f.integral()).abs() <= 1e-12 * (1.0 + f.integral().abs()));
        let back = coarse.inject(f.grid()).unwrap();
        let again = halve(back.values(), f.grid());
        prop_assert!(close(&again, coarse.values(), 1e-14));
    }

    #[test]
    fn wick_square_is_recentred_square(f in field(2), c1 in 0.0f64..5.0) {
        let mut traj = Trajectory::new(f.grid());
        traj.push(0.0, f.clone()).unwrap();
        let w = wick_power(&traj, 2, c1).unwrap();
        let expected: Vec<f64> = f.values().iter().map(|v| v * v - c1).collect();
        prop_assert_eq!(w.slice(0).values(), &expected[..]);
    }

    #[test]
    fn linear_step_is_affine((a, b) in field_pair(2), w in field(2), s in -2.0f64..2.0) {
        let grid = a.grid();
        let k = KernelSet::new(grid);
        let p = Phi4Params::new(grid, 1.0, 0.0, 0.3, 1.0);
        let st = Phi4Stepper::new(&k, &p).unwrap();
        let noise = w.values();
        let zero = st.step(&GridField::zeros(grid), noise).unwrap();
        let lhs = st.step(&a.add(&b.scaled(s)).unwrap(), noise).unwrap().sub(&zero).unwrap();
        let la = st.step(&a, noise).unwrap().sub(&zero).unwrap();
        let lb = st.step(&b, noise).unwrap().sub(&zero).unwrap();
        let rhs = la.add(&lb.scaled(s)).unwrap();
        prop_assert!(close(lhs.values(), rhs.values(), 1e-10));
    }

    #[test]
    fn field_serialisation_round_trip(f in field(2)) {
        let back = GridField::from_bytes(&f.to_bytes()).unwrap();
        prop_assert_eq!(back, f);
    }
}
