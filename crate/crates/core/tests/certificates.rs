//! Certificates checked against sampled Lipschitz ratios.

use poolinv::certify::{
    empirical_lipschitz, l1pool_bound, l2pool_bound, maxout_bound, maxpool_bound,
    rectified_l2pool_bound, SplitSearch, SwitchedOptions,
};
use poolinv::frames::make_random_frame;
use poolinv::pooling::{Operator, PoolNorm, PoolingSpec};

fn pool_op(p: PoolNorm) -> Operator {
    Operator::Pool(PoolingSpec::new(p, false))
}

#[test]
fn maxpool_bound_below_sampled_ratios() {
    for seed in 0..3 {
        let f = make_random_frame(2, 3, 2, false, seed).unwrap();
        let r = maxpool_bound(&f, &SwitchedOptions::default(), None).unwrap();
        let emp = empirical_lipschitz(&f, &pool_op(PoolNorm::Inf), 10_000, 100 + seed).unwrap();
        assert!(0.9 * r.value <= emp.value, "seed {seed}: {} vs {}", r.value, emp.value);
    }
}

#[test]
fn l1pool_bound_below_sampled_ratios() {
    for seed in 0..3 {
        let f = make_random_frame(2, 4, 2, false, 10 + seed).unwrap();
        let r = l1pool_bound(&f, &SwitchedOptions::default()).unwrap();
        let emp = empirical_lipschitz(&f, &pool_op(PoolNorm::L1), 10_000, 200 + seed).unwrap();
        assert!(0.9 * r.value <= emp.value, "seed {seed}: {} vs {}", r.value, emp.value);
    }
}

#[test]
fn l2pool_bound_below_sampled_ratios() {
    for seed in 0..5 {
        let f = make_random_frame(3, 4, 2, false, 20 + seed).unwrap();
        let r = l2pool_bound(&f, 200, &SplitSearch::default());
        let emp = empirical_lipschitz(&f, &pool_op(PoolNorm::L2), 10_000, 300 + seed).unwrap();
        assert!(r.value <= emp.value + 1e-9, "seed {seed}: {} vs {}", r.value, emp.value);
    }
}

#[test]
fn rectified_l2_bound_below_sampled_ratios() {
    for seed in 0..3 {
        let f = make_random_frame(2, 4, 2, false, 30 + seed).unwrap();
        let alpha = vec![0.0; 8];
        let r = rectified_l2pool_bound(&f, &alpha, 2000, 20, &SplitSearch::default()).unwrap();
        let op = Operator::Pool(PoolingSpec::new(PoolNorm::L2, true));
        let emp = empirical_lipschitz(&f, &op, 10_000, 400 + seed).unwrap();
        assert!(0.9 * r.value <= emp.value, "seed {seed}: {} vs {}", r.value, emp.value);
    }
}

#[test]
fn maxout_bound_below_sampled_ratios_and_injective() {
    for seed in 0..3 {
        let f = make_random_frame(2, 5, 2, false, 40 + seed).unwrap();
        let r = maxout_bound(&f, &SwitchedOptions::default()).unwrap();
        let emp = empirical_lipschitz(&f, &Operator::Maxout, 10_000, 500 + seed).unwrap();
        assert!(emp.value > 0.0);
        assert!(0.9 * r.value <= emp.value, "seed {seed}: {} vs {}", r.value, emp.value);
    }
}
