use brp_core::checks::{random_connection, random_transition};
use brp_core::geometry::{christoffel_transform, right_inverse_residual, s_family, transform_check, Connection, CovariantCoeffs, SymbolChoice, TransferSymbols};
use brp_core::hopf::qr;
use brp_core::poly::QPolyMap;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn connection(seed: u64, m: usize) -> Connection {
    random_connection(&mut ChaCha8Rng::seed_from_u64(seed), m, 1)
}

fn symmetric(conn: &Connection) -> Connection {
    let m = conn.dim();
    let half = qr(1, 2);
    let symbols = (0..m * m * m)
        .map(|i| {
            let (g, a, b) = (i / (m * m), (i / m) % m, i % m);
            conn.symbol(g, a, b).add(conn.symbol(g, b, a)).scale(&half)
        })
        .collect();
    Connection::new(m, symbols).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transfer_symbols_are_a_right_inverse(seed in any::<u64>(), m in 1usize..=2, n in 2u32..=3, x in prop::array::uniform2(-0.8f64..0.8)) {
        let conn = connection(seed, m);
        let cov = CovariantCoeffs::new(&conn, n);
        let s = TransferSymbols::new(&cov).at(&x[..m]);
        prop_assert!(right_inverse_residual(&cov, &s, &x[..m]) < 1e-10);
    }

    #[test]
    fn torsion_free_family_collapses(seed in any::<u64>(), c in -2.0f64..3.0, x in prop::array::uniform2(-0.8f64..0.8)) {
        let conn = symmetric(&connection(seed, 2));
        prop_assert!(conn.is_torsion_free());
        let exact = TransferSymbols::from_connection(&conn, 3).at(&x);
        prop_assert!(s_family(&conn, c, &x).upper_symmetrised().max_diff(&exact) < 1e-10);
    }

    #[test]
    fn transfer_symbols_transform_between_charts(seed in any::<u64>(), x in prop::array::uniform2(-0.3f64..0.3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conn = random_connection(&mut rng, 2, 1);
        let map = random_transition(&mut rng, 2);
        prop_assert!(transform_check(&conn, &map, &x, 3, SymbolChoice::Transfer).unwrap() < 1e-9);
    }

    #[test]
    fn christoffel_rule_round_trips(seed in any::<u64>(), a in -3i64..=3, b in -3i64..=3) {
        let conn = connection(seed, 2);
        let map = QPolyMap::parse(&[&format!("x1 + {a}*x2^2"), "x2"], 2).unwrap();
        let inv = QPolyMap::parse(&[&format!("x1 - {a}*x2^2"), "x2"], 2).unwrap();
        let shear = QPolyMap::parse(&["x1", &format!("x2 + {b}*x1^3")], 2).unwrap();
        let shear_inv = QPolyMap::parse(&["x1", &format!("x2 - {b}*x1^3")], 2).unwrap();
        let there = christoffel_transform(&christoffel_transform(&conn, &map, &inv).unwrap(), &shear, &shear_inv).unwrap();
        let back = christoffel_transform(&christoffel_transform(&there, &shear_inv, &shear).unwrap(), &inv, &map).unwrap();
        prop_assert_eq!(back, conn);
    }
}
