//! Acceptance suite. Each test prints one `PASS`/`FAIL` line and then
//! asserts the same condition. Run with `--nocapture` to see the lines.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use topokd::autodiff::{finite_diff_check, relative_error};
use topokd::diagmetrics::{
    bound_check, chamfer, diagonal_sq_dist, jitter_diagram, nearest_maps_are_bijections, random_diagram, wasserstein2_exact,
    BoundSummary,
};
use topokd::harness::{run_ablation, AblationRow, Reporter, RunConfig};
use topokd::kd::{
    clamp_topo_gradient, distill_step, frobenius, grad_align_loss, importance_weights, kld_loss_directed, saliency_map,
    scale_features, teacher_targets, topo_loss, topo_loss_on, DistillConfig, KldDirection, LossBreakdown,
};
use topokd::net::{activation_gradients, cross_entropy, pair_stages, task_loss, Neighbors, Network, NetworkConfig};
use topokd::pointcloud::{augment, fnv1a_64, grid_sample, AugmentConfig, PointCloud};
use topokd::tda::{default_threshold, h0_unionfind, persistence, persistence_default, DiagramPoint, PersistenceDiagram};

fn verdict(id: u32, title: &str, ok: bool, detail: &str) {
    println!("criterion {id} [{}] {title}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}

fn sorted_finite_deaths(d: &PersistenceDiagram) -> Vec<f64> {
    let mut v: Vec<f64> = d.dimension(0).filter(|p| p.is_finite()).map(|p| p.death).collect();
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn criterion_1_tda_correctness() {
    let clock = Instant::now();
    let square = array![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let d = persistence_default(square.view(), 1).unwrap();
    let h1: Vec<&DiagramPoint> = d.dimension(1).filter(|p| !p.is_zero_persistence()).collect();
    let square_ok = h1.len() == 1
        && (h1[0].birth - 1.0).abs() <= 1e-9
        && (h1[0].death - std::f64::consts::SQRT_2).abs() <= 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..200 {
        let m = rng.random_range(1..=64);
        let pts = random_points(&mut rng, m, 3);
        let t = default_threshold(pts.view());
        let a = persistence(pts.view(), 0, t).unwrap();
        let b = h0_unionfind(pts.view(), t).unwrap();
        if sorted_finite_deaths(&a) != sorted_finite_deaths(&b) || a.essential_count(0) != b.essential_count(0) {
            mismatches += 1;
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let ok = square_ok && mismatches == 0 && secs < 10.0;
    verdict(
        1,
        "TDA correctness",
        ok,
        &format!("unit square H1 {:?}, H0 mismatches {mismatches}/200, {secs:.2}s", h1.iter().map(|p| (p.birth, p.death)).collect::<Vec<_>>()),
    );
    assert!(ok);
}

fn point(dim: usize, birth: f64, death: f64) -> DiagramPoint {
    DiagramPoint { dim, birth, death, birth_simplex: vec![0], death_simplex: Some(vec![0, 1]) }
}

/// Brute-force Chamfer over the distance support of each dimension.
fn chamfer_oracle(a: &PersistenceDiagram, b: &PersistenceDiagram) -> f64 {
    let support = |d: &PersistenceDiagram, dim: usize| -> Vec<(f64, f64)> {
        d.points.iter().filter(|p| p.dim == dim && p.is_finite() && p.death != p.birth).map(|p| (p.birth, p.death)).collect()
    };
    let diag = |p: (f64, f64)| 0.5 * (p.1 - p.0).powi(2);
    let dims = a.points.iter().chain(&b.points).map(|p| p.dim).max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for dim in 0..dims {
        let (x, y) = (support(a, dim), support(b, dim));
        let side = |from: &[(f64, f64)], to: &[(f64, f64)]| -> f64 {
            from.iter()
                .map(|&p| {
                    if to.is_empty() {
                        diag(p)
                    } else {
                        to.iter().map(|&q| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).fold(f64::INFINITY, f64::min)
                    }
                })
                .sum()
        };
        total += side(&x, &y) + side(&y, &x);
    }
    total
}

/// Minimum over every partial matching (the rest go to the diagonal),
/// enumerated by recursion, per dimension.
fn w2_oracle(a: &PersistenceDiagram, b: &PersistenceDiagram) -> f64 {
    let support = |d: &PersistenceDiagram, dim: usize| -> Vec<(f64, f64)> {
        d.points.iter().filter(|p| p.dim == dim && p.is_finite() && p.death != p.birth).map(|p| (p.birth, p.death)).collect()
    };
    let diag = |p: (f64, f64)| 0.5 * (p.1 - p.0).powi(2);
    fn best(i: usize, x: &[(f64, f64)], y: &[(f64, f64)], used: &mut Vec<bool>, diag: &dyn Fn((f64, f64)) -> f64) -> f64 {
        if i == x.len() {
            return y.iter().zip(used.iter()).filter(|(_, u)| !**u).map(|(q, _)| diag(*q)).sum();
        }
        let mut out = diag(x[i]) + best(i + 1, x, y, used, diag);
        for j in 0..y.len() {
            if !used[j] {
                used[j] = true;
                let c = (x[i].0 - y[j].0).powi(2) + (x[i].1 - y[j].1).powi(2);
                out = out.min(c + best(i + 1, x, y, used, diag));
                used[j] = false;
            }
        }
        out
    }
    let dims = a.points.iter().chain(&b.points).map(|p| p.dim).max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for dim in 0..dims {
        let (x, y) = (support(a, dim), support(b, dim));
        total += best(0, &x, &y, &mut vec![false; y.len()], &diag);
    }
    total.sqrt()
}

#[test]
fn criterion_2_diagram_metric_oracles() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut cd_bad, mut w2_bad, mut worst) = (0, 0, 0.0f64);
    for trial in 0..500 {
        let make = |rng: &mut ChaCha8Rng| {
            let n = rng.random_range(0..=5);
            let mut d = random_diagram(rng, n, 2);
            // a few exact duplicates, zero-persistence and essential points
            if n > 0 && trial % 7 == 0 {
                let p = d.points[0].clone();
                d.points.push(p);
            }
            if trial % 11 == 0 {
                d.points.push(point(0, 0.3, 0.3));
                d.points.push(point(0, 0.0, f64::INFINITY));
            }
            d
        };
        let (a, b) = (make(&mut rng), make(&mut rng));
        if chamfer(&a, &b).value != chamfer_oracle(&a, &b) {
            cd_bad += 1;
        }
        let (w2, _) = wasserstein2_exact(&a, &b).unwrap();
        let err = (w2 - w2_oracle(&a, &b)).abs();
        worst = worst.max(err);
        if err > 1e-9 {
            w2_bad += 1;
        }
    }
    // the diagonal distance itself against its closed form
    let diag_ok = diagonal_sq_dist(&point(0, 1.0, 3.0)) == 2.0;
    let secs = clock.elapsed().as_secs_f64();
    let ok = cd_bad == 0 && w2_bad == 0 && diag_ok && secs < 60.0;
    verdict(
        2,
        "diagram-metric oracle equivalence",
        ok,
        &format!("chamfer mismatches {cd_bad}/500, W2 mismatches {w2_bad}/500 (worst {worst:.1e}), {secs:.2}s"),
    );
    assert!(ok);
}

#[test]
fn criterion_3_chamfer_bounds_wasserstein() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bijective = BoundSummary::default();
    let mut attempts = 0;
    while bijective.checked < 1000 {
        attempts += 1;
        let n = rng.random_range(1..=8);
        let a = random_diagram(&mut rng, n, 2);
        let eps = rng.random_range(0.001..0.2);
        let b = jitter_diagram(&mut rng, &a, eps);
        if a.len() != b.len() || !nearest_maps_are_bijections(&a, &b) {
            continue;
        }
        let r = bound_check(&a, &b).unwrap();
        bijective.record(&a, &b, &r);
    }
    let mut unrestricted = BoundSummary::default();
    for _ in 0..1000 {
        let (na, nb) = (rng.random_range(0..=8), rng.random_range(0..=8));
        let a = random_diagram(&mut rng, na, 2);
        let b = random_diagram(&mut rng, nb, 2);
        let r = bound_check(&a, &b).unwrap();
        unrestricted.record(&a, &b, &r);
    }
    let secs = clock.elapsed().as_secs_f64();
    let ok = bijective.passed == bijective.checked && secs < 30.0;
    verdict(
        3,
        "Chamfer bound on bijective pairs",
        ok,
        &format!(
            "bijective {}/{} ({} draws), unrestricted {}/{} = {:.2}%, {secs:.2}s",
            bijective.passed,
            bijective.checked,
            attempts,
            unrestricted.passed,
            unrestricted.checked,
            100.0 * unrestricted.pass_rate()
        ),
    );
    for c in unrestricted.counterexamples.iter().take(3) {
        println!("  counterexample: {}", serde_json::to_string(c).unwrap());
    }
    assert!(ok);
}

fn labelled_cloud(rng: &mut ChaCha8Rng, n: usize, k: usize) -> PointCloud {
    let coords = (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)]).collect();
    let labels = (0..n).map(|i| (i % k) as u32).collect();
    PointCloud::new(coords, None, Some(labels), k).unwrap()
}

fn random_net(rng: &mut ChaCha8Rng, k: usize) -> NetworkConfig {
    let stages = rng.random_range(1..=3);
    NetworkConfig {
        depths: (0..stages).map(|_| rng.random_range(1..=2)).collect(),
        channels: (0..stages).map(|_| rng.random_range(2..=5)).collect(),
        neighbors: rng.random_range(1..=4),
        num_classes: k,
        seed: rng.random(),
    }
}

fn topo_fd(t: &Array2<f64>, s: &Array2<f64>, maxdim: usize, h: f64) -> Array2<f64> {
    Array2::from_shape_fn(s.dim(), |(i, j)| {
        let (mut sp, mut sm) = (s.clone(), s.clone());
        sp[[i, j]] += h;
        sm[[i, j]] -= h;
        let fp = topo_loss_on(t.view(), sp.view(), maxdim, 0).unwrap().value;
        let fm = topo_loss_on(t.view(), sm.view(), maxdim, 0).unwrap().value;
        (fp - fm) / (2.0 * h)
    })
}

#[test]
fn criterion_4_gradient_fidelity() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let (mut ad_worst, mut ad_checked, mut ad_kinked) = (0.0f64, 0, 0);
    for _ in 0..50 {
        let k = rng.random_range(2..=4);
        let net = Network::init(random_net(&mut rng, k)).unwrap();
        let n = rng.random_range(6..=16);
        let cloud = labelled_cloud(&mut rng, n, k);
        let mut trace = net.forward(&cloud).unwrap();
        let loss = task_loss(&mut trace, cloud.labels().unwrap()).unwrap();
        let mut wrt = trace.param_nodes().to_vec();
        wrt.extend_from_slice(trace.feature_nodes());
        let r = finite_diff_check(trace.graph(), trace.bindings(), loss, &wrt, 1e-4).unwrap();
        ad_worst = ad_worst.max(r.max_rel_error);
        ad_checked += r.checked;
        ad_kinked += r.kinked;
    }

    let (mut topo_worst, mut instances, mut skipped) = (0.0f64, 0, 0);
    while instances < 50 {
        let n = rng.random_range(4..=10);
        let maxdim = if instances % 2 == 0 { 0 } else { 1 };
        let t = random_points(&mut rng, n, 3);
        let width = rng.random_range(2..=4);
        let s = random_points(&mut rng, n, width);
        let r = topo_loss_on(t.view(), s.view(), maxdim, 0).unwrap();
        if r.tie_events > 0 {
            skipped += 1;
            continue;
        }
        let fd = topo_fd(&t, &s, maxdim, 1e-6);
        for (a, f) in r.grad.iter().zip(&fd) {
            if *a == 0.0 && f.abs() < 1e-9 {
                continue;
            }
            topo_worst = topo_worst.max(relative_error(*a, *f));
        }
        instances += 1;
    }
    let secs = clock.elapsed().as_secs_f64();
    let ok = ad_worst < 1e-4 && topo_worst < 1e-3 && secs < 120.0;
    verdict(
        4,
        "gradient fidelity",
        ok,
        &format!(
            "autodiff worst rel {ad_worst:.1e} over {ad_checked} coords ({ad_kinked} kink-straddling skipped) on 50 nets; \
             topo worst rel {topo_worst:.1e} on {instances} tie-free instances ({skipped} tied skipped), {secs:.1}s"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_5_saliency_algebra() {
    let mut failures: Vec<String> = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    check("w = 2 for grads {+1, -3}", importance_weights(&array![[1.0], [-3.0]]).unwrap() == array![2.0]);
    check("constant channel gives |g|", importance_weights(&Array2::from_elem((5, 1), -0.75)).unwrap() == array![0.75]);
    check("F=[[1,2]], w=[3,0.5] scales to [[3,1]]", scale_features(&array![[1.0, 2.0]], &array![3.0, 0.5]).unwrap() == array![[3.0, 1.0]]);
    check("pre-norm [1,3,5] maps to [0,0.5,1]", saliency_map(&array![[1.0], [3.0], [5.0]]).unwrap() == array![0.0, 0.5, 1.0]);
    check("one nonzero row maps to 1", saliency_map(&array![[0.0, 0.0], [2.0, -1.0], [0.0, 0.0]]).unwrap() == array![0.0, 1.0, 0.0]);
    check("constant map is all zeros", saliency_map(&Array2::from_elem((4, 3), 0.5)).unwrap() == Array1::<f64>::zeros(4));
    check(
        "M_T=[1,0], M_S=[0,1] gives 1",
        grad_align_loss(&[array![1.0, 0.0]], &[array![0.0, 1.0]]).unwrap() == 1.0,
    );

    for _ in 0..200 {
        let (n, c) = (rng.random_range(2..=30), rng.random_range(1..=8));
        let g = Array2::from_shape_fn((n, c), |_| rng.random_range(-2.0..2.0));
        let w = importance_weights(&g).unwrap();
        for scale in [2.0, 0.5, 4.0, 0.25] {
            let scaled = importance_weights(&(&g * scale)).unwrap();
            check("homogeneity under power-of-two scaling", scaled == &w * scale);
        }
        let neg = importance_weights(&(&g * -1.0)).unwrap();
        check("sign invariance", neg == w);

        let f = Array2::from_shape_fn((n, c), |_| rng.random_range(-3.0..3.0));
        let m = saliency_map(&scale_features(&f, &w).unwrap()).unwrap();
        check("saliency in [0,1]", m.iter().all(|&v| (0.0..=1.0).contains(&v)));
        check("saliency attains 0 and 1", m.iter().any(|&v| v == 0.0) && m.iter().any(|&v| v == 1.0));

        let stages = rng.random_range(1..=3);
        let mk = |rng: &mut ChaCha8Rng| -> Vec<Array1<f64>> {
            (0..stages).map(|_| Array1::from_shape_fn(n, |_| rng.random_range(0.0..1.0))).collect()
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        check("alignment zero on identity", grad_align_loss(&a, &a).unwrap() == 0.0);
        check("alignment symmetric", grad_align_loss(&a, &b).unwrap() == grad_align_loss(&b, &a).unwrap());
        check("alignment non-negative", grad_align_loss(&a, &b).unwrap() >= 0.0);
    }
    failures.dedup();
    let ok = failures.is_empty();
    verdict(5, "saliency algebra", ok, &if ok { "all hand values and 200 random cases exact".to_string() } else { failures.join("; ") });
    assert!(ok);
}

#[test]
fn criterion_6_objective_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut worst_parts = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(2..=4);
        let n = rng.random_range(6..=20);
        let tcfg = random_net(&mut rng, k);
        let scfg = random_net(&mut rng, k);
        let teacher = Network::init(tcfg).unwrap();
        let student = Network::init(scfg).unwrap();
        let cloud = labelled_cloud(&mut rng, n, k);
        let labels = cloud.labels().unwrap().to_vec();
        let cfg = DistillConfig {
            lambda_grad: rng.random_range(0.0..3.0),
            lambda_kld: rng.random_range(0.0..3.0),
            lambda_seg: rng.random_range(0.0..3.0),
            temperature: rng.random_range(0.5..4.0),
            kld_direction: if rng.random_bool(0.5) { KldDirection::TeacherStudent } else { KldDirection::StudentTeacher },
            alpha: rng.random_range(0.05..2.0),
            topo_enabled: rng.random_bool(0.8),
            topo_subsample: rng.random_range(2..=n),
            topo_maxdim: rng.random_range(0..=1),
            topo_stage: None,
            align_stages: None,
        };
        let seed: u64 = rng.random();
        let tn = Neighbors::compute(cloud.coords(), teacher.config().neighbors);
        let sn = Neighbors::compute(cloud.coords(), student.config().neighbors);
        let targets = teacher_targets(&teacher, &cloud, &tn, &labels).unwrap();
        let step = distill_step(&student, &targets, &cloud, &sn, &labels, &cfg, seed).unwrap();
        let b = &step.breakdown;

        // the same four terms from the non-graph implementations
        let mut trace = student.forward_with(&cloud, &sn).unwrap();
        let seg_node = task_loss(&mut trace, &labels).unwrap();
        let grads = activation_gradients(&trace, seg_node).unwrap();
        let logits = trace.logits().unwrap().clone();
        let seg = cross_entropy(&logits, &labels).unwrap();
        let kld = kld_loss_directed(&targets.logits, &logits, cfg.temperature, cfg.kld_direction).unwrap();
        let pairs = pair_stages(trace.num_stages(), targets.features.len());
        let (mut mt, mut ms) = (Vec::new(), Vec::new());
        for &(s, t) in &pairs {
            let w = importance_weights(&grads[s]).unwrap();
            ms.push(saliency_map(&scale_features(trace.feature(s).unwrap(), &w).unwrap()).unwrap());
            mt.push(targets.saliency[t].clone());
        }
        let grad = grad_align_loss(&mt, &ms).unwrap();
        let topo = if cfg.topo_enabled {
            let &(s, t) = pairs.last().unwrap();
            topo_loss(&targets.features[t], trace.feature(s).unwrap(), cfg.topo_subsample, cfg.topo_maxdim, seed).unwrap().value
        } else {
            0.0
        };
        let independent = topo + cfg.lambda_grad * grad + cfg.lambda_kld * kld + cfg.lambda_seg * seg;
        worst = worst.max((b.total - independent).abs());
        worst_parts = worst_parts
            .max((b.topo - topo).abs())
            .max((b.grad - grad).abs())
            .max((b.kld - kld).abs())
            .max((b.seg - seg).abs());
        worst = worst.max((b.total - LossBreakdown::compose(b.topo, b.grad, b.kld, b.seg, b.lambdas)).abs());
    }
    let ok = worst <= 1e-12;
    verdict(
        6,
        "objective identity",
        ok,
        &format!("100 random configs: worst |total - recomputed| {worst:.1e}, worst per-term gap {worst_parts:.1e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_7_clamp_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut bound_bad, mut dir_bad) = (0, 0);
    for i in 0..1000 {
        let shape = (rng.random_range(1..=20), rng.random_range(1..=8));
        let spread = 10f64.powi(rng.random_range(-6..=6));
        let g = Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0) * spread);
        let f = if i % 100 == 0 { Array2::zeros(shape) } else { Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0)) };
        let alpha = 10f64.powi(rng.random_range(-3..=1)) * rng.random_range(0.5..1.5);
        let out = clamp_topo_gradient(&g, &f, alpha).unwrap();
        if frobenius(&out) > alpha * frobenius(&f) + 1e-12 {
            bound_bad += 1;
        }
        // direction: out = c·g with c ∈ [0, 1]
        let c = (&out * &g).sum() / (&g * &g).sum();
        let collinear = out.iter().zip(&g).all(|(o, x)| (o - c * x).abs() <= 1e-12 * x.abs().max(1.0) * spread.max(1.0));
        if !(collinear && (0.0..=1.0).contains(&c)) {
            dir_bad += 1;
        }
    }
    let ok = bound_bad == 0 && dir_bad == 0;
    verdict(7, "clamp contract", ok, &format!("bound violations {bound_bad}/1000, direction violations {dir_bad}/1000"));
    assert!(ok);
}

/// Slack allowed on each link of the non-strict ordering.
const WIGGLE: f64 = 0.01;

#[test]
fn criterion_8_component_ablation() {
    let clock = Instant::now();
    let cfg = RunConfig::desk_default();
    let report = run_ablation(cfg, &mut Reporter::sink()).unwrap();
    let grid = report.ablation.as_ref().unwrap();
    let secs = clock.elapsed().as_secs_f64();
    print!("{}", grid.table());
    use AblationRow::*;
    let d = |a, b| grid.paired_delta(a, b).unwrap();
    let (grad_base, topo_grad, gain) = (d(Grad, KldSeg), d(Topo, Grad), d(TopoGrad, KldSeg));
    let ordering = grad_base >= -WIGGLE && topo_grad >= -WIGGLE;
    let residual = grid.cells.iter().map(|c| c.identity_residual).fold(0.0, f64::max);
    let ok = ordering && gain >= 0.01 && secs < 1800.0 && residual <= 1e-12;
    verdict(
        8,
        "component ablation",
        ok,
        &format!(
            "paired medians +grad−kld {grad_base:+.4}, +topo−grad {topo_grad:+.4} (slack {WIGGLE}): {ordering}; \
             +topo+grad−kld {:+.2} points (need ≥ 1); no-KD {:.4}; {secs:.0}s",
            100.0 * gain,
            grid.no_kd_median
        ),
    );
    assert!(ok);
}

const FNV_CORPUS: [u64; 100] = [
    0xcbf29ce484222325, 0xaf63984c86017900, 0x092e2f07b5c162d8, 0x19e0ba1921a925cb,
    0x504c5f0ccbc3dfdd, 0xf1b30aba37876b90, 0xb410d8e5f84009cc, 0xd1a5d25ba8511207,
    0x8c09a19dac552f05, 0x7537fbe184b6be00, 0x78eed02c4d806fa0, 0xac59244ec7103f7b,
    0x2fc6ec42ac861bed, 0x63c2bc3ed8a640b0, 0xe4740bafed37dc14, 0x96d8dc02117a7cd7,
    0xeabaab5d58fed4c5, 0x3a875e9895ef9ce0, 0x77a5502be8c5f648, 0x3dc481bdbc155f8b,
    0xa1136de8bbb0fb1d, 0x25039da53ebd11d0, 0x426e5f6f97765c9c, 0xbc897e8f32fd0ea7,
    0x556d528d826973c5, 0xe457955f914c14a0, 0x651c81f9e13fddd0, 0x970915cf4065345b,
    0x6b1b23fe7ca39b4d, 0x30dc5e9278858d70, 0x7a4482af6b8583e4, 0x62c41ae9d9989a17,
    0x7c7d8f3f6ca325a5, 0x804172ac0d557480, 0x1bdc56c5b5748b78, 0xb60b9d2f0f72848b,
    0xd9f5f591bdb026dd, 0x0c0e2b0172e82490, 0x467e4d72159046ac, 0x0f68ebc5ed073d07,
    0x7aed1b26898de405, 0x0fdbbc30496fd440, 0xf9365d698e011ac0, 0x311f514fd1dfd27b,
    0x5cc808dc4303e2ad, 0x215ca0c20d256070, 0x107e2141b5f36ab4, 0x920feb871aeff157,
    0x05b98024cba30c85, 0x8b5ac3f2d8a98120, 0xc013c3ae22025e88, 0xb80881889027e45e,
    0x62246bee8886e48f, 0x353aed231304436a, 0x02b908fee582595f, 0x9e4804ca593801b6,
    0x7acff683e12d8ea7, 0x02637dcaa8ec17d5, 0xac68488be308b6e4, 0xd3dc084141c72164,
    0x7ba4ed9396e60649, 0x924ccc288043007b, 0x7be4fc41f6aa587e, 0x15a9891beeb54b3a,
    0x7b032626d6569de0, 0xd8e9fbbb254cd2ec, 0xe8a120710279df6d, 0xa79f38b1ff417e03,
    0x73d2757105e15867, 0x75dcc0f22169950d, 0xcdaf18295d4b1d41, 0x15700a84d64251d2,
    0x2ce215b47d6a2b88, 0x790479aa08530764, 0x6e1850852a415a81, 0xf81c7c5778b0a439,
    0x4e6303e9aecafaa9, 0x5f87dddffa66e8fb, 0xbc948b91fb21c7e8, 0x5cdf974c5f240c80,
    0x9e8986152f2f9e5f, 0x5d591c68c0d46198, 0xf1217edee8bc9476, 0x798ca46c722779e5,
    0x9cb71d70dd00be7a, 0xf845b4eb674a03c5, 0x26945536a5f3250e, 0x01a02ee7ec2efe55,
    0xba218a2b1585e5fa, 0x42afb5a5ccb9d90d, 0x4e98361611fcb626, 0xc10036014ee6c5f5,
    0xf0d1143db79d8cdf, 0xed4779f218c5b880, 0x73d59884808bed03, 0x17c562bf9f20439b,
    0x3b82cbb9708686e4, 0x9f31c90379b709ce, 0x4445016323eedf85, 0x3d8de7bf9a668389,
];

fn fnv_corpus_input(i: usize) -> Vec<u8> {
    if i < 50 {
        (0..i).map(|j| ((i * 37 + j * 11) % 256) as u8).collect()
    } else {
        let i = (i - 50) as i64;
        [i - 25, 3 * i - 70, -7 * i * i].iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

#[test]
fn criterion_9_preprocessing() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // grid: independent bucketing by floor(x / g) in a sorted map
    let mut grid_bad = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=400);
        let g = rng.random_range(0.01..0.5);
        let coords: Vec<[f64; 3]> =
            (0..n).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-0.5..0.5)]).collect();
        let cloud = PointCloud::from_coords(coords.clone()).unwrap();
        let mut first: BTreeMap<(i64, i64, i64), usize> = BTreeMap::new();
        for (i, p) in coords.iter().enumerate() {
            let key = ((p[0] / g).floor() as i64, (p[1] / g).floor() as i64, (p[2] / g).floor() as i64);
            first.entry(key).or_insert(i);
        }
        let mut keep: Vec<usize> = first.into_values().collect();
        keep.sort_unstable();
        let expected: Vec<[f64; 3]> = keep.iter().map(|&i| coords[i]).collect();
        if grid_sample(&cloud, g).unwrap().coords() != &expected[..] {
            grid_bad += 1;
        }
    }

    let fnv_bad = (0..100).filter(|&i| fnv1a_64(&fnv_corpus_input(i)) != FNV_CORPUS[i]).count();

    let n = 1000;
    let cloud = PointCloud::from_coords(
        (0..n).map(|_| [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0)]).collect(),
    )
    .unwrap();
    let cfg = AugmentConfig { jitter_sigma: 0.01, jitter_clip: 0.02, ..AugmentConfig::identity() };
    let (mut samples, mut exceeded, mut clipped) = (0usize, 0usize, 0usize);
    let mut seed = 0;
    while samples < 1_000_000 {
        let out = augment(&cloud, &cfg, seed).unwrap();
        for (a, b) in cloud.coords().iter().zip(out.coords()) {
            for j in 0..3 {
                let d = (b[j] - a[j]).abs();
                if d > cfg.jitter_clip {
                    exceeded += 1;
                }
                if d >= cfg.jitter_clip * (1.0 - 1e-9) {
                    clipped += 1;
                }
                samples += 1;
            }
        }
        seed += 1;
    }
    // the clip must actually bind for the check to mean anything
    let reference = Normal::new(0.0, cfg.jitter_sigma).unwrap();
    let expected_tail = {
        let mut r = ChaCha8Rng::seed_from_u64(99);
        (0..100_000).filter(|_| reference.sample(&mut r).abs() > cfg.jitter_clip).count()
    };
    let ok = grid_bad == 0 && fnv_bad == 0 && exceeded == 0 && clipped > 0;
    verdict(
        9,
        "preprocessing",
        ok,
        &format!(
            "grid oracle mismatches {grid_bad}/100, FNV-1a digest mismatches {fnv_bad}/100, \
             jitter over clip {exceeded}/{samples} (clip reached {clipped} times; ~{:.2}% expected)",
            expected_tail as f64 / 1000.0
        ),
    );
    assert!(ok);
}
