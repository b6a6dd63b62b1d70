mod common;

use common::{ctx, default_spec, wide_spec};
use fracsing::barriers::first_pair;
use fracsing::multiplicity::{
    maximal_fixed_point, minimal_fixed_point, search_from_starts, three_solutions, Direction,
};
use fracsing::tmap::residual_p;
use fracsing::{cone_inf, strong_increasing_gap};

#[test]
fn upward_iterates_increase_and_converge() {
    let spec = default_spec(128);
    let c = ctx(&spec, 0.5);
    let p = first_pair(&c).unwrap();
    let run = minimal_fixed_point(&c, &p.zeta1, &p.theta1).unwrap();
    assert_eq!(run.direction, Direction::Upward);
    assert!(run
        .iterates_sup
        .windows(2)
        .all(|w| w[1] >= w[0] * (1.0 - 1e-12)));
    assert!(run.residual <= spec.tol_residual);
    assert!(residual_p(&c, &run.result).unwrap() <= spec.tol_residual);
    assert!(p.zeta1.le_within(&run.result, spec.tol_order));
    assert!(run.result.le_within(&p.theta1, spec.tol_order));
}

#[test]
fn minimal_below_maximal() {
    let spec = wide_spec(128);
    for lambda in [0.1, 1.0] {
        let c = ctx(&spec, lambda);
        let p = first_pair(&c).unwrap();
        let lo = minimal_fixed_point(&c, &p.zeta1, &p.theta1).unwrap();
        let hi = maximal_fixed_point(&c, &p.zeta1, &p.theta1).unwrap();
        assert!(lo
            .result
            .le_within(&hi.result, spec.tol_order * hi.result.sup_norm().max(1.0)));
        assert!(hi
            .iterates_sup
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }
}

#[test]
fn unordered_interval_is_rejected() {
    let spec = default_spec(64);
    let c = ctx(&spec, 0.5);
    let p = first_pair(&c).unwrap();
    assert!(minimal_fixed_point(&c, &p.theta1, &p.zeta1).is_err());
}

#[test]
fn three_solutions_inside_the_window() {
    let spec = wide_spec(256);
    let c = ctx(&spec, 0.3);
    let set = three_solutions(&c, Some(1)).unwrap();
    assert!(set.u1.sup_norm() <= spec.sigma1);
    assert!(set.u2.sup_norm() >= set.barriers.a && set.barriers.a > spec.sigma1);
    assert!(set.residuals.iter().all(|r| *r <= spec.tol_residual));
    assert!(set.barriers.zeta1.le_within(&set.u1, spec.tol_order));
    assert!(set.u1.le_within(&set.barriers.theta2, spec.tol_order));
    assert!(set
        .barriers
        .zeta2
        .le_within(&set.u2, spec.tol_order * set.u2.sup_norm()));
    for (_, u) in set.solutions() {
        assert!(cone_inf(u, c.phi()).unwrap() > 0.0);
    }
    if let Some(u3) = &set.u3 {
        assert!(u3.sup_distance(&set.u1) >= 10.0 * spec.tol_residual);
        assert!(u3.sup_distance(&set.u2) >= 10.0 * spec.tol_residual);
    }
    let gap = strong_increasing_gap(&c, &set.barriers.zeta1, &set.u1).unwrap();
    assert!(gap > 0.0);
}

#[test]
fn deflation_reports_absence_on_a_monotone_branch() {
    let spec = wide_spec(128);
    let c = ctx(&spec, 5.0);
    let p = first_pair(&c).unwrap();
    let u = minimal_fixed_point(&c, &p.zeta1, &p.theta1).unwrap().result;
    let starts = vec![u.scale(0.5), u.scale(0.9), u.scale(1.1), p.zeta1.clone()];
    assert!(search_from_starts(&c, &[u], &starts, Some(3)).is_none());
}
