//! Property suite behind the `selfcheck` subcommand.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eqgs_core::egnn::{run_egnn_stack, EgnnLayer, FeatureGraph};
use eqgs_core::geometry::{PointCloud, Quaternion, RigidTransform, Vec3, DESCRIPTOR_DIM};
use eqgs_core::graph::build_knn;
use eqgs_core::linalg::numerical_rank;
use eqgs_core::matcher::{compute_similarity, rank_regularizer, verification_window, verify_submatrices, window, DET_TOL};
use eqgs_core::nn::{matmul, ParamStore, Tensor};
use eqgs_core::objective::{f1_from, inlier_delta, PairEvaluation};
use eqgs_core::pipeline::{Model, ModelConfig, NeighborMode, PreparedPair};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {} ({:.2}s)", self.name, self.detail, self.seconds)
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> (bool, String)) -> CheckOutcome {
    let t0 = Instant::now();
    let (passed, detail) = f();
    CheckOutcome {
        name,
        passed,
        detail,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
}

pub fn random_rigid(rng: &mut ChaCha8Rng, max_translation: f64) -> RigidTransform {
    loop {
        let q = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if let Ok(tr) = RigidTransform::new(q, t.scale(max_translation)) {
            return tr;
        }
    }
}

fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    let d = a.zip_map(b, |x, y| x - y).frobenius();
    d / a.frobenius().max(1e-300)
}

/// Four-layer stack on random graphs: coordinates move with the transform,
/// hidden features stay put.
pub fn check_equivariance(transforms: usize, tol: f64, seed: u64) -> CheckOutcome {
    timed("equivariance", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layers: Vec<EgnnLayer> = (0..4).map(|l| EgnnLayer::new(&mut store, &format!("egnn.{l}"), &mut rng)).collect();
        let (mut worst, mut degenerate, mut edges, mut excluded, mut failures) = (0.0f64, 0usize, 0usize, 0usize, 0usize);
        for _ in 0..transforms {
            let t = random_rigid(&mut rng, 3.0);
            for n in [8usize, 16, 64] {
                let pts: Vec<Vec3> = (0..n)
                    .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect();
                let pc = PointCloud::new(pts).expect("non-empty");
                let nbrs = build_knn(&pc, 4.min(n - 1)).expect("valid k");
                let coords = Tensor::from_vec(n, 3, pc.points().iter().flat_map(|p| p.to_array()).collect());
                let moved = Tensor::from_vec(n, 3, pc.points().iter().flat_map(|p| t.apply(*p).to_array()).collect());
                let h = uniform(&mut rng, n, DESCRIPTOR_DIM);
                edges += 4 * nbrs.edge_count();
                let run = |x: Tensor| run_egnn_stack(&store, &FeatureGraph::new(h.clone(), x, nbrs.clone()).expect("shapes"), &layers, 0.5);
                let (a, b) = match (run(coords), run(moved)) {
                    (Ok(a), Ok(b)) => (a, b),
                    _ => {
                        failures += 1;
                        continue;
                    }
                };
                degenerate += a.degenerate_edges.max(b.degenerate_edges);
                if a.degenerate_edges + b.degenerate_edges > 0 {
                    excluded += 1;
                    continue;
                }
                let ca = &a.graph.coord_embeddings;
                let expect = Tensor::from_vec(
                    n,
                    3,
                    (0..n).flat_map(|i| t.apply(Vec3::new(ca.get(i, 0), ca.get(i, 1), ca.get(i, 2))).to_array()).collect(),
                );
                worst = worst
                    .max(rel_err(&expect, &b.graph.coord_embeddings))
                    .max(rel_err(&a.graph.node_features, &b.graph.node_features));
            }
        }
        let frac = degenerate as f64 / edges.max(1) as f64;
        let passed = failures == 0 && worst <= tol && frac < 0.01;
        (
            passed,
            format!(
                "{} stacks, worst relative error {worst:.3e} (tol {tol:.0e}), degenerate edges {degenerate}/{edges} ({:.4}%), excluded graphs {excluded}, failed runs {failures}",
                3 * transforms,
                100.0 * frac
            ),
        )
    })
}

fn random_rank(rng: &mut ChaCha8Rng, m: usize, n: usize, r: usize) -> Tensor {
    matmul(&uniform(rng, m, r), &uniform(rng, r, n))
}

/// `rank(AB) ≤ min(rank A, rank B)` on random low-rank factors.
pub fn check_rank_theorem(cases: usize, seed: u64) -> CheckOutcome {
    timed("rank theorem", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut violations = 0;
        for _ in 0..cases {
            let (m, k, n) = (rng.random_range(1..=12), rng.random_range(1..=12), rng.random_range(1..=12));
            let ra = rng.random_range(1..=m.min(k));
            let rb = rng.random_range(1..=k.min(n));
            let a = random_rank(&mut rng, m, k, ra);
            let b = random_rank(&mut rng, k, n, rb);
            let (rank_a, rank_b) = (numerical_rank(&a, 1e-10), numerical_rank(&b, 1e-10));
            if numerical_rank(&matmul(&a, &b), 1e-10) > rank_a.min(rank_b) {
                violations += 1;
            }
        }
        (violations == 0, format!("{cases} cases, {violations} violations"))
    })
}

/// Eight-point toy pair and a small model for the finite-difference check.
pub fn toy_problem(seed: u64) -> (Model, PreparedPair) {
    let config = ModelConfig {
        num_points: 8,
        neighbor_mode: NeighborMode::Knn { k: 3 },
        lrft_rank: 4,
        lrft_out: 8,
        ..ModelConfig::default()
    };
    let model = Model::new(config, seed).expect("valid toy config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let src: Vec<Vec3> = (0..8)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let gt = random_rigid(&mut rng, 0.3);
    let tar: Vec<Vec3> = src
        .iter()
        .map(|&p| gt.apply(p) + Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02)))
        .collect();
    let src = PointCloud::new(src).expect("non-empty");
    let tar = PointCloud::new(tar).expect("non-empty");
    let pair = model.prepare(&src, &tar, Some(&gt)).expect("toy pair prepares");
    (model, pair)
}

/// Summary of a finite-difference sweep over every parameter scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientSweep {
    pub checked: usize,
    pub agreeing: usize,
    pub worst_abs: f64,
}

/// Central differences with step `eps` against the analytic gradient of
/// the total loss; agreement means within `rel` relative or `abs` absolute.
pub fn gradient_sweep(model: &mut Model, pair: &PreparedPair, eps: f64, rel: f64, abs: f64) -> eqgs_core::Result<GradientSweep> {
    let (_, grads) = model.loss_and_grads(pair)?;
    let mut sweep = GradientSweep {
        checked: 0,
        agreeing: 0,
        worst_abs: 0.0,
    };
    for (p, g) in grads.iter().enumerate() {
        for k in 0..g.len() {
            let orig = model.store.values()[p].data()[k];
            model.store.values_mut()[p].data_mut()[k] = orig + eps;
            let up = model.loss(pair)?.total;
            model.store.values_mut()[p].data_mut()[k] = orig - eps;
            let down = model.loss(pair)?.total;
            model.store.values_mut()[p].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = g.data()[k];
            let diff = (numeric - analytic).abs();
            sweep.checked += 1;
            if diff <= abs || diff <= rel * numeric.abs().max(analytic.abs()) {
                sweep.agreeing += 1;
            }
            sweep.worst_abs = sweep.worst_abs.max(diff);
        }
    }
    Ok(sweep)
}

pub fn check_gradients(seed: u64) -> CheckOutcome {
    timed("gradients", || {
        let (mut model, pair) = toy_problem(seed);
        match gradient_sweep(&mut model, &pair, 1e-5, 1e-4, 1e-6) {
            Ok(s) => {
                let frac = s.agreeing as f64 / s.checked.max(1) as f64;
                (
                    frac >= 0.99,
                    format!(
                        "{}/{} parameters agree ({:.3}%), worst absolute difference {:.3e}",
                        s.agreeing,
                        s.checked,
                        100.0 * frac,
                        s.worst_abs
                    ),
                )
            }
            Err(e) => (false, format!("toy pair failed: {e}")),
        }
    })
}

/// Row normalization, window verification and the Frobenius regularizer on
/// random feature pairs, some with duplicated or zero rows.
pub fn check_similarity(cases: usize, seed: u64) -> CheckOutcome {
    timed("similarity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut bad_sum, mut bad_window, mut bad_reg, mut windows) = (0usize, 0usize, 0usize, 0usize);
        for case in 0..cases {
            let n = rng.random_range(7..=24);
            let mut hs = uniform(&mut rng, n, 35);
            let mut ht = uniform(&mut rng, n, 35);
            match case % 4 {
                1 => {
                    let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
                    let row = ht.row_slice(a).to_vec();
                    ht.row_slice_mut(b).copy_from_slice(&row);
                }
                2 => hs.row_slice_mut(rng.random_range(0..n)).iter_mut().for_each(|v| *v = 0.0),
                3 => {
                    let row = ht.row_slice(0).to_vec();
                    for r in 1..n {
                        ht.row_slice_mut(r).copy_from_slice(&row);
                    }
                }
                _ => {}
            }
            let s = match compute_similarity(&hs, &ht, 4) {
                Ok(s) => s,
                Err(_) => continue,
            };
            for i in 0..n {
                if s.row_valid[i] {
                    let sum: f64 = s.values.row_slice(i).iter().sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        bad_sum += 1;
                    }
                }
            }
            let mut sq = 0.0;
            for i in 0..n {
                for j in 0..n {
                    sq += s.values.get(i, j) * s.values.get(i, j);
                }
            }
            let target = rng.random_range(0.0..8.0);
            if (rank_regularizer(&s.values, target) - (sq.sqrt() - target).abs()).abs() > 1e-12 {
                bad_reg += 1;
            }
            let v = verify_submatrices(&s, DET_TOL).expect("n >= 7");
            for i in 0..n {
                if v.row_valid[i] {
                    let j = v.row_argmax(i);
                    let win = verification_window(i, j, n);
                    windows += 1;
                    if numerical_rank(&window(&s.values, win), 1e-10) < win.2 {
                        bad_window += 1;
                    }
                }
            }
        }
        (
            bad_sum + bad_window + bad_reg == 0,
            format!("{cases} pairs, row-sum violations {bad_sum}, rank-deficient windows accepted {bad_window}/{windows}, regularizer mismatches {bad_reg}"),
        )
    })
}

/// Closed-form metric cases.
pub fn check_metrics() -> CheckOutcome {
    timed("metrics", || {
        let src: Vec<Vec3> = (0..100).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let tar: Vec<Vec3> = src.iter().enumerate().map(|(i, &p)| if i % 2 == 0 { p } else { p + Vec3::new(0.0, 1.0, 0.0) }).collect();
        let corr: Vec<(usize, usize)> = (0..100).map(|i| (i, i)).collect();
        let ev = PairEvaluation {
            src: &src,
            tar: &tar,
            correspondences: &corr,
            estimate: RigidTransform::IDENTITY,
            ground_truth: RigidTransform::IDENTITY,
        };
        let delta = inlier_delta(&ev, 0.1).unwrap_or(f64::NAN);
        let f1 = [f1_from(1.0, 1.0), f1_from(1.0, 0.0), f1_from(0.8, 0.5)];
        let passed = (delta - 0.5f64.sqrt()).abs() <= 1e-9 && f1 == [1.0, 0.0, 2.0 * 0.8 * 0.5 / 1.3];
        (passed, format!("delta at half inliers {delta:.9}, F1 cases {f1:?}"))
    })
}

/// The full suite at acceptance sizes.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        check_equivariance(100, 1e-5, seed),
        check_rank_theorem(1000, seed.wrapping_add(1)),
        check_gradients(seed.wrapping_add(2)),
        check_similarity(1000, seed.wrapping_add(3)),
        check_metrics(),
    ]
}
