//! Acceptance suite: runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any fails.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use poolinv::certify::{
    empirical_lipschitz, halfrect_bound, injectivity_probe, phaseless_bound, SplitSearch,
};
use poolinv::dictlearn::{block_omp, learn_dictionary_traced, DictConfig};
use poolinv::frames::{column_bounds, hadamard_lift, make_random_frame, Frame};
use poolinv::harness::{run_experiment, CurvePoint, ExperimentConfig, RecoveryMethod};
use poolinv::linalg;
use poolinv::pooling::{pool, Operator, PoolNorm, PoolingSpec};
use poolinv::recovery::{alt_min, recovery_angle, sign_oracle, Init, RecoveryConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn random_frames(count: usize, seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n = rng.random_range(2..=4);
            let m = rng.random_range(n..=8);
            make_random_frame(n, m, 1, false, seed * 1000 + i as u64).unwrap()
        })
        .collect()
}

fn lift_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let n = rng.random_range(1..=6);
        let l = rng.random_range(1..=3);
        let k = rng.random_range(1..=5);
        let f = make_random_frame(n, k, l, false, 100 + i).unwrap();
        let lifted = hadamard_lift(&f).unwrap();
        let p1 = PoolingSpec::new(PoolNorm::L1, false);
        let pinf = PoolingSpec::new(PoolNorm::Inf, false);
        for _ in 0..100 {
            let x = linalg::gaussian_vector(&mut rng, n);
            let a = pool(&f, &p1, &x).unwrap().values;
            let b = pool(&lifted, &pinf, &x).unwrap().values;
            worst = worst.max((a - b).amax());
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-10 && within(t, 5.0),
        format!("max |P1(F) - Pinf(lift F)| = {worst:.2e} ({:.2}s)", t.as_secs_f64()),
    )
}

fn certificate_soundness() -> Outcome {
    let start = Instant::now();
    let mut worst_margin = f64::INFINITY;
    let mut exact = 0;
    for (i, f) in random_frames(50, 2).iter().enumerate() {
        let report = phaseless_bound(f, &SplitSearch::default());
        if report.method == poolinv::certify::Method::Exact {
            exact += 1;
        }
        let emp = empirical_lipschitz(f, &Operator::Modulus, 10_000, 7000 + i as u64).unwrap();
        worst_margin = worst_margin.min(emp.value - report.value);
    }
    let t = start.elapsed();
    outcome(
        worst_margin >= -1e-9 && exact == 50 && within(t, 60.0),
        format!(
            "min(empirical - A_F) = {worst_margin:.3e} over 50 frames, {exact} exact ({:.2}s)",
            t.as_secs_f64()
        ),
    )
}

fn upper_bound() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for (i, f) in random_frames(50, 2).iter().enumerate() {
        let b = column_bounds(f.matrix(), false).lambda_plus;
        let grouped = if f.len() % 2 == 0 {
            f.with_pool_size(2).unwrap()
        } else {
            f.clone()
        };
        let ops = [
            (f.clone(), Operator::Modulus),
            (grouped, Operator::Pool(PoolingSpec::new(PoolNorm::L2, false))),
        ];
        for (g, op) in &ops {
            let emp = empirical_lipschitz(g, op, 10_000, 9000 + i as u64).unwrap();
            worst = worst.max(emp.details["max_ratio"] - b);
        }
    }
    outcome(
        worst <= 1e-9,
        format!("max(empirical max ratio - lambda_+) = {worst:.3e}"),
    )
}

fn injectivity() -> Outcome {
    let start = Instant::now();
    let mut total = 0;
    let mut parts = Vec::new();
    for n in 2..=4usize {
        for (p, k) in [(PoolNorm::L1, 4 * n), (PoolNorm::Inf, 4 * n), (PoolNorm::L2, 2 * n - 1)] {
            let op = Operator::Pool(PoolingSpec::new(p, false));
            let r = injectivity_probe(n, k, 2, &op, 10_000, 40 + n as u64).unwrap();
            total += r.collisions;
            parts.push(format!("N={n} p={p} K={k}: {}", r.collisions));
        }
    }
    let t = start.elapsed();
    outcome(
        total == 0 && within(t, 30.0),
        format!("collisions [{}] ({:.2}s)", parts.join(", "), t.as_secs_f64()),
    )
}

fn maxout_injectivity() -> Outcome {
    let mut total = 0;
    let mut parts = Vec::new();
    for n in 2..=3usize {
        let r = injectivity_probe(n, 2 * n + 1, 2, &Operator::Maxout, 10_000, 50 + n as u64).unwrap();
        total += r.collisions;
        parts.push(format!("N={n}: {} of {} pairs", r.collisions, r.pairs_checked));
    }
    outcome(total == 0, format!("collisions [{}]", parts.join(", ")))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 1.0f64;
    for i in 0..20u64 {
        let n = 2 + (i as usize % 4);
        let f = make_random_frame(n, 2 * n - 1, 1, false, 600 + i).unwrap();
        let spec = PoolingSpec::new(PoolNorm::L2, false);
        let x = linalg::gaussian_vector(&mut rng, n);
        let meas = pool(&f, &spec, &x).unwrap();
        let start = sign_oracle(&f, &meas).unwrap();
        let cfg = RecoveryConfig::new(spec).init(Init::Vector(start));
        let r = alt_min(&f, &meas, &cfg).unwrap();
        worst = worst.min(recovery_angle(&r.reconstruction, &x).unwrap());
    }
    outcome(worst >= 1.0 - 1e-6, format!("min angle {worst:.12} over 20 instances"))
}

fn fixed_point() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 1.0f64;
    for p in PoolNorm::ALL {
        for rectify in [false, true] {
            for i in 0..10u64 {
                let f = make_random_frame(8, 20, 2, false, 700 + i).unwrap();
                let spec = PoolingSpec::new(p, rectify);
                let x = linalg::gaussian_vector(&mut rng, 8);
                let meas = pool(&f, &spec, &x).unwrap();
                let cfg = RecoveryConfig::new(spec).init(Init::Vector(x.clone()));
                let r = alt_min(&f, &meas, &cfg).unwrap();
                worst = worst.min(recovery_angle(&r.reconstruction, &x).unwrap());
            }
        }
    }
    outcome(worst >= 1.0 - 1e-9, format!("min angle {worst:.15} over 6 variants x 10"))
}

fn half_redundancy_curves() -> (Vec<CurvePoint>, Duration) {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_json(
        r#"{"data": {"kind": "synthetic", "n": 20, "count": 50, "seed": 8},
            "frame": {"kind": "random", "pairwise_orthogonal": true},
            "pool_size": 2, "sweep": [40],
            "p": ["1", "2", "inf"], "rectify": [false, true],
            "methods": ["altmin-random"], "trials": 50, "seed": 8}"#,
    )
    .unwrap();
    (run_experiment(&cfg).unwrap(), start.elapsed())
}

fn angle(points: &[CurvePoint], p: PoolNorm, rectify: bool) -> f64 {
    points
        .iter()
        .find(|c| c.p == p && c.rectify == rectify)
        .expect("point present")
        .mean_angle
}

fn rectification_advantage(points: &[CurvePoint], t: Duration) -> Outcome {
    let mut ok = within(t, 180.0);
    let mut parts = Vec::new();
    for p in PoolNorm::ALL {
        let (r, u) = (angle(points, p, true), angle(points, p, false));
        ok &= r >= u - 0.02;
        parts.push(format!("p={p}: rect {r:.3} vs plain {u:.3}"));
    }
    outcome(ok, format!("{} ({:.1}s)", parts.join(", "), t.as_secs_f64()))
}

fn p_similarity(points: &[CurvePoint]) -> Outcome {
    let mut worst = 0.0f64;
    for rectify in [false, true] {
        for a in PoolNorm::ALL {
            for b in PoolNorm::ALL {
                worst = worst.max((angle(points, a, rectify) - angle(points, b, rectify)).abs());
            }
        }
    }
    outcome(worst <= 0.15, format!("max |angle(p) - angle(p')| = {worst:.3}"))
}

fn init_benefit() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_json(
        r#"{"data": {"kind": "clusters", "n": 20, "count": 2050, "clusters": 20,
                     "spread": 0.15, "seed": 10},
            "frame": {"kind": "random", "pairwise_orthogonal": true},
            "pool_size": 2, "sweep": [10, 15, 20, 25, 30, 40, 60],
            "p": ["2"], "rectify": [false],
            "methods": ["altmin-random", "altmin-knn"],
            "trials": 50, "q": 10, "seed": 10}"#,
    )
    .unwrap();
    let points = run_experiment(&cfg).unwrap();
    let t = start.elapsed();
    let mut ok = within(t, 300.0);
    let mut best_gain = f64::NEG_INFINITY;
    let mut parts = Vec::new();
    for &k in &cfg.sweep {
        let get = |m: RecoveryMethod| {
            points
                .iter()
                .find(|c| c.k == k && c.method == m)
                .expect("point present")
                .mean_angle
        };
        let (knn, rnd) = (get(RecoveryMethod::AltminKnn), get(RecoveryMethod::AltminRandom));
        ok &= knn >= rnd - 0.02;
        best_gain = best_gain.max(knn - rnd);
        parts.push(format!("K={k}: {knn:.3}/{rnd:.3}"));
    }
    ok &= best_gain >= 0.05;
    outcome(
        ok,
        format!(
            "knn/random [{}], best gain {best_gain:.3} ({:.1}s)",
            parts.join(", "),
            t.as_secs_f64()
        ),
    )
}

fn corollary_relation() -> Outcome {
    let mut worst = f64::INFINITY;
    for (i, f) in random_frames(20, 11).iter().enumerate() {
        let a = phaseless_bound(f, &SplitSearch::default()).value;
        let r = halfrect_bound(f, &vec![0.0; f.len()], 20_000, 1100 + i as u64).unwrap();
        worst = worst.min(r.details["tilde_A"] - a / 2f64.sqrt());
    }
    outcome(worst >= -1e-9, format!("min(A~ - A_F/sqrt 2) = {worst:.3e} over 20 frames"))
}

fn planted_block_data(dict: &Frame, t: usize, blocks: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<Vec<usize>>) {
    let k = dict.num_pools();
    let mut data = DMatrix::zeros(dict.dim(), t);
    let mut supports = Vec::with_capacity(t);
    for j in 0..t {
        let mut chosen: Vec<usize> = Vec::new();
        while chosen.len() < blocks {
            let b = rng.random_range(0..k);
            if !chosen.contains(&b) {
                chosen.push(b);
            }
        }
        chosen.sort();
        let cols = dict.pool_columns(&chosen);
        let coeffs = linalg::gaussian_vector(rng, cols.len());
        data.set_column(j, &(dict.columns(&cols) * coeffs));
        supports.push(chosen);
    }
    (data, supports)
}

fn dictionary_learning() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);

    // Planted support recovery at 40 dB.
    let mut hits = 0;
    for trial in 0..100u64 {
        let dict = make_random_frame(32, 20, 2, false, 1200 + trial).unwrap();
        let (clean, supports) = planted_block_data(&dict, 1, 5, &mut rng);
        let x = clean.column(0).into_owned();
        let noise = linalg::gaussian_vector(&mut rng, 32);
        let scale = x.norm() / noise.norm() * 10f64.powf(-40.0 / 20.0);
        let noisy = &x + noise * scale;
        let mut found = block_omp(&dict, &noisy, 5).unwrap().blocks;
        found.sort();
        if found == supports[0] {
            hits += 1;
        }
    }

    // Objective monotonicity and reduction on a planted dictionary.
    let planted = make_random_frame(16, 20, 2, false, 1300).unwrap();
    let (data, _) = planted_block_data(&planted, 2000, 5, &mut rng);
    let cfg = DictConfig {
        num_blocks: 20,
        block_size: 2,
        nonzero_blocks: 5,
        iterations: 20,
        seed: 13,
    };
    let (_, trace) = learn_dictionary_traced(&data, &cfg).unwrap();
    let monotone = trace.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    let ratio = trace.last().unwrap() / trace[0];
    let t = start.elapsed();
    outcome(
        hits >= 90 && monotone && ratio <= 0.5 && within(t, 120.0),
        format!(
            "support recovered {hits}/100, objective monotone={monotone}, final/initial {ratio:.3} ({:.1}s)",
            t.as_secs_f64()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bench.json");
    std::fs::write(
        &config,
        r#"{"data": {"kind": "clusters", "n": 10, "count": 300, "clusters": 5, "spread": 0.2, "seed": 3},
            "frame": {"kind": "random"}, "sweep": [5, 10, 20],
            "p": ["1", "2", "inf"], "rectify": [false, true],
            "methods": ["altmin-random", "altmin-knn", "knn-only"],
            "trials": 20, "q": 5, "seed": 99}"#,
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_poolinv");
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "4", "1"].iter().enumerate() {
        let out = dir.path().join(format!("curve{i}.csv"));
        let status = std::process::Command::new(bin)
            .args(["bench", "--config"])
            .arg(&config)
            .args(["--threads", threads, "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    outcome(
        same && !outputs[0].is_empty(),
        format!("3 runs (1, 4, 1 threads), {} bytes each, identical={same}", outputs[0].len()),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        let o = f();
        println!(
            "criterion {id:>2} [{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o));
    };
    run(1, "lifting identity", &lift_identity);
    run(2, "certificate soundness", &certificate_soundness);
    run(3, "upper bound", &upper_bound);
    run(4, "pooling injectivity", &injectivity);
    run(5, "maxout injectivity", &maxout_injectivity);
    run(6, "oracle equivalence", &oracle_equivalence);
    run(7, "fixed point", &fixed_point);
    let (curves, t) = half_redundancy_curves();
    run(8, "rectification advantage", &|| rectification_advantage(&curves, t));
    run(9, "p similarity", &|| p_similarity(&curves));
    run(10, "initialization benefit", &init_benefit);
    run(11, "sign-folded bound relation", &corollary_relation);
    run(12, "dictionary learning", &dictionary_learning);
    run(13, "determinism", &determinism);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}

