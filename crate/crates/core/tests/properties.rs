use cce_core::io::{fmt_f64, parse_f64, parse_profile_csv, profile_csv};
use cce_core::series::{fg_series_origin, origin_second_derivatives, NonlocalParams};
use cce_core::solver::{solve_bvp, SolverOptions};
use cce_core::systems::{jacobian_state, residual_gberger, residual_sp, BoundaryData, Family, StateVector, SystemKind};
use cce_core::verification::origin_closed_forms;
use proptest::prelude::*;

fn kinds() -> impl Strategy<Value = (SystemKind, usize)> {
    prop_oneof![
        Just((SystemKind::GeneralizedBerger, 3)),
        (1usize..6).prop_map(|k| (SystemKind::SuInvariant, 2 * k + 1)),
        (0usize..3).prop_map(|k| (SystemKind::SpInvariant, 4 * k + 7)),
    ]
}

fn state(m: usize) -> impl Strategy<Value = StateVector> {
    (0.05f64..0.95, prop::collection::vec(-0.5f64..0.5, 3 * m)).prop_map(move |(x, v)| StateVector {
        x,
        y: v[..m].to_vec(),
        yp: v[m..2 * m].to_vec(),
        ypp: v[2 * m..].to_vec(),
    })
}

fn kind_and_state() -> impl Strategy<Value = (SystemKind, usize, StateVector)> {
    kinds().prop_flat_map(|(k, n)| state(k.unknowns()).prop_map(move |s| (k, n, s)))
}

proptest! {
    #[test]
    fn zero_state_is_a_root((kind, n) in kinds(), x in 0.0f64..=1.0) {
        let fam = Family::new(kind, n).unwrap();
        let r = fam.evaluate(&StateVector::zero(kind.unknowns(), x), None).unwrap();
        prop_assert!(r.evo.iter().all(|v| *v == 0.0));
        prop_assert_eq!(r.constraint, 0.0);
    }

    #[test]
    fn jacobian_matches_central_differences((kind, n, s) in kind_and_state()) {
        let fam = Family::new(kind, n).unwrap();
        let m = kind.unknowns();
        let jac = jacobian_state(kind, n, &s).unwrap();
        let h = 1e-6;
        let rows = |st: &StateVector| {
            let r = fam.evaluate(st, None).unwrap();
            let mut v = r.evo.clone();
            v.push(r.constraint);
            v
        };
        for which in 0..3 {
            for j in 0..m {
                let bump = |d: f64| {
                    let mut t = s.clone();
                    match which { 0 => t.y[j] += d, 1 => t.yp[j] += d, _ => t.ypp[j] += d }
                    rows(&t)
                };
                let (p, q) = (bump(h), bump(-h));
                for row in 0..=m {
                    let fd = (p[row] - q[row]) / (2.0 * h);
                    let an = match which { 0 => jac.d_y(row, j), 1 => jac.d_yp(row, j), _ => jac.d_ypp(row, j) };
                    prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "row {} col {} part {}: {} vs {}", row, j, which, an, fd);
                }
            }
        }
    }

    #[test]
    fn gberger_relabeling(s in state(3)) {
        // (y2, y3) -> (y2 + y3, -y3) swaps the second and third slice directions
        let t = |v: &[f64]| vec![v[0], v[1] + v[2], -v[2]];
        let moved = StateVector { x: s.x, y: t(&s.y), yp: t(&s.yp), ypp: t(&s.ypp) };
        let a = residual_gberger(&s).unwrap();
        let b = residual_gberger(&moved).unwrap();
        let want = t(&a.evo);
        for i in 0..3 {
            prop_assert!((b.evo[i] - want[i]).abs() <= 1e-10 * (1.0 + want[i].abs()));
        }
        prop_assert!((a.constraint - b.constraint).abs() <= 1e-10 * (1.0 + a.constraint.abs()));
    }

    #[test]
    fn sp_permutation(k in 0usize..2, s in state(4), perm in Just([1usize, 2, 3]).prop_shuffle()) {
        let n = 4 * k + 7;
        let p = |v: &[f64]| vec![v[0], v[perm[0]], v[perm[1]], v[perm[2]]];
        let moved = StateVector { x: s.x, y: p(&s.y), yp: p(&s.yp), ypp: p(&s.ypp) };
        let a = residual_sp(n, &s).unwrap();
        let b = residual_sp(n, &moved).unwrap();
        let want = p(&a.evo);
        for i in 0..4 {
            prop_assert!((b.evo[i] - want[i]).abs() <= 1e-10 * (1.0 + want[i].abs()));
        }
        prop_assert!((a.constraint - b.constraint).abs() <= 1e-10 * (1.0 + a.constraint.abs()));
    }

    #[test]
    fn aux_equation_is_source_free((kind, n, s) in kind_and_state()) {
        // the combination has no exponential terms: shifting y1 leaves it unchanged
        let fam = Family::new(kind, n).unwrap();
        let mut t = s.clone();
        t.y[0] += 0.3;
        let (a, b) = (fam.aux_residual(&s).unwrap(), fam.aux_residual(&t).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn gberger_origin_identities_from_recursion(p1 in 0.5f64..2.0, p2 in 0.5f64..2.0, lk in -0.3f64..0.0) {
        let bd = BoundaryData::new(SystemKind::GeneralizedBerger, 3, vec![p1, p2]).unwrap();
        let sc = fg_series_origin(&bd, lk, &NonlocalParams { coeffs: vec![1.5, -0.7] }, 9).unwrap();
        let got: Vec<f64> = (0..3).map(|i| 2.0 * sc.table[i][2]).collect();
        let generic = origin_second_derivatives(&bd, lk).unwrap();
        let mut y0 = vec![lk];
        y0.extend(bd.log_ratios());
        let want = origin_closed_forms(SystemKind::GeneralizedBerger, 3, &y0).unwrap();
        for i in 0..3 {
            prop_assert!((got[i] - want[i]).abs() <= 1e-12 * (1.0 + want[i].abs()));
            prop_assert!((generic[i] - want[i]).abs() <= 1e-12 * (1.0 + want[i].abs()));
        }
    }

    #[test]
    fn nonlocal_terms_are_local((kind, n) in kinds(), lk in -0.2f64..0.0, f in prop::collection::vec(-5.0f64..5.0, 3)) {
        let bd = BoundaryData::new(kind, n, vec![0.9; kind.free_count()]).unwrap();
        let zero = NonlocalParams::zero(kind);
        let other = NonlocalParams { coeffs: f[..kind.free_count()].to_vec() };
        let a = fg_series_origin(&bd, lk, &zero, n + 4).unwrap();
        let b = fg_series_origin(&bd, lk, &other, n + 4).unwrap();
        for i in 0..kind.unknowns() {
            prop_assert_eq!(&a.table[i][..n], &b.table[i][..n]);
        }
    }

    #[test]
    fn decimal_round_trip(bits in any::<u64>()) {
        let v = f64::from_bits(bits);
        prop_assume!(v.is_finite());
        let s = fmt_f64(v);
        let digits = s.trim_start_matches('-').split('e').next().unwrap().chars().filter(char::is_ascii_digit).collect::<String>();
        prop_assert!(digits.trim_start_matches('0').trim_end_matches('0').len() <= 17);
        let back = parse_f64(&s).unwrap();
        prop_assert!(back == v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn profile_csv_round_trip(phi in 0.7f64..1.4) {
        let bd = BoundaryData::new(SystemKind::SuInvariant, 3, vec![phi]).unwrap();
        let (p, _) = solve_bvp(&bd, &SolverOptions::default()).unwrap();
        let bytes = profile_csv(&p).unwrap();
        let q = parse_profile_csv(std::str::from_utf8(&bytes).unwrap()).unwrap();
        prop_assert_eq!(&p.y, &q.y);
        prop_assert_eq!(&p.yp, &q.yp);
        prop_assert_eq!(&p.mesh.nodes, &q.mesh.nodes);
        prop_assert_eq!(bytes, profile_csv(&q).unwrap());
    }

    #[test]
    fn solves_are_deterministic(phi in 0.7f64..1.4) {
        let bd = BoundaryData::new(SystemKind::SuInvariant, 5, vec![phi]).unwrap();
        let a = solve_bvp(&bd, &SolverOptions::default()).unwrap().0;
        let b = solve_bvp(&bd, &SolverOptions::default()).unwrap().0;
        prop_assert_eq!(profile_csv(&a).unwrap(), profile_csv(&b).unwrap());
    }
}
