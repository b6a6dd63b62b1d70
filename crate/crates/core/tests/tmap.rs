mod common;

use common::{ctx, default_spec};
use fracsing::multiplicity::strong_increasing_gap;
use fracsing::tmap::{apply_t, residual_p};
use fracsing::GridFunction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn t_is_monotone_on_random_ordered_pairs() {
    let spec = default_spec(128);
    let c = ctx(&spec, 0.5);
    let w = c.profile().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..6 {
        let amp: f64 = rng.random_range(0.1..5.0);
        let u1 = GridFunction::new(
            w.values()
                .iter()
                .map(|v| amp * v * rng.random_range(0.5..1.0))
                .collect(),
        );
        let u2 = GridFunction::new(
            u1.values()
                .iter()
                .map(|v| v + rng.random_range(0.0..1.0))
                .collect(),
        );
        let t1 = apply_t(&c, &u1).unwrap().z;
        let t2 = apply_t(&c, &u2).unwrap().z;
        assert!(t1.le_violation(&t2) <= spec.tol_order * t2.sup_norm().max(1.0));
        assert!(strong_increasing_gap(&c, &u1, &u2).unwrap() > 0.0);
    }
}

#[test]
fn strong_gap_rejects_equal_or_unordered_pairs() {
    let spec = default_spec(64);
    let c = ctx(&spec, 0.5);
    let u = c.profile().clone();
    assert!(strong_increasing_gap(&c, &u, &u).is_err());
    assert!(strong_increasing_gap(&c, &u.scale(2.0), &u).is_err());
}

#[test]
fn t_output_is_in_the_cone() {
    let spec = default_spec(128);
    let c = ctx(&spec, 1.0);
    let r = apply_t(&c, c.profile()).unwrap();
    assert!(r.cone_lower > 0.0);
    assert!(r.residual <= spec.tol_residual);
    assert!(!r.eps_trace.is_empty());
    assert!(r.z.min() > 0.0);
}

#[test]
fn residual_is_zero_only_at_fixed_points() {
    let spec = default_spec(64);
    let c = ctx(&spec, 0.5);
    let u = c.profile().clone();
    assert!(residual_p(&c, &u).unwrap() > 1e-3);
    let short = GridFunction::zeros(10);
    assert!(residual_p(&c, &short).is_err());
}
