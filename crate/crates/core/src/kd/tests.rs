use super::*;
use crate::autodiff::relative_error;
use crate::net::{cross_entropy, Neighbors, Network, NetworkConfig};
use crate::pointcloud::PointCloud;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn importance_weights_by_hand() {
    assert_eq!(importance_weights(&array![[1.0], [-3.0]]).unwrap(), array![2.0]);
    let w = importance_weights(&Array2::from_elem((5, 2), -0.25)).unwrap();
    assert_eq!(w, array![0.25, 0.25]);
    assert!(importance_weights(&Array2::zeros((0, 3))).is_err());
}

#[test]
fn importance_weights_are_homogeneous() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = Array2::from_shape_simple_fn((20, 6), || rng.random_range(-1.0..1.0));
    let w = importance_weights(&g).unwrap();
    assert_eq!(importance_weights(&(&g * 4.0)).unwrap(), &w * 4.0);
    let w3 = importance_weights(&(&g * 3.0)).unwrap();
    for (a, b) in w3.iter().zip(&w) {
        assert!(relative_error(*a, 3.0 * b) < 1e-14);
    }
}

#[test]
fn scale_features_by_hand() {
    let f = array![[1.0, 2.0]];
    assert_eq!(scale_features(&f, &array![3.0, 0.5]).unwrap(), array![[3.0, 1.0]]);
    assert_eq!(scale_features(&f, &array![1.0, 1.0]).unwrap(), f);
    assert_eq!(scale_features(&f, &array![0.0, 0.0]).unwrap(), array![[0.0, 0.0]]);
    assert!(matches!(scale_features(&f, &array![1.0]), Err(Error::LengthMismatch(2, 1))));
}

#[test]
fn saliency_by_hand() {
    assert_eq!(saliency_map(&array![[1.0], [-3.0], [5.0]]).unwrap(), array![0.0, 0.5, 1.0]);
    assert_eq!(saliency_map(&array![[0.0, 0.0], [0.0, 2.0], [0.0, 0.0]]).unwrap(), array![0.0, 1.0, 0.0]);
    assert_eq!(saliency_map(&Array2::from_elem((4, 2), 7.0)).unwrap(), Array1::<f64>::zeros(4));
    assert!(saliency_map(&Array2::zeros((0, 2))).is_err());
}

#[test]
fn grad_align_by_hand() {
    let t = vec![array![1.0, 0.0]];
    let s = vec![array![0.0, 1.0]];
    assert_eq!(grad_align_loss(&t, &s).unwrap(), 1.0);
    assert_eq!(grad_align_loss(&t, &t).unwrap(), 0.0);
    assert!(grad_align_loss(&t, &[]).is_err());
    assert!(grad_align_loss(&t, &[array![1.0]]).is_err());
}

#[test]
fn kld_closed_forms() {
    let z = array![[0.3, -1.0, 2.0], [0.0, 0.0, 0.0]];
    assert_eq!(kld_loss(&z, &z, 1.7).unwrap(), 0.0);
    let kl = kld_loss(&array![[20.0, 0.0]], &array![[0.0, 0.0]], 1.0).unwrap();
    assert!((kl - 2f64.ln()).abs() < 1e-6);
    assert!(kld_loss(&z, &array![[1.0, 2.0]], 1.0).is_err());
    assert!(kld_loss(&z, &z, 0.0).is_err());
}

#[test]
fn kld_is_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let a = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-5.0..5.0));
        let b = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-5.0..5.0));
        let t = rng.random_range(0.5..4.0);
        assert!(kld_loss(&a, &b, t).unwrap() >= 0.0);
        assert!(kld_loss_directed(&a, &b, t, KldDirection::StudentTeacher).unwrap() >= 0.0);
    }
}

#[test]
fn clamp_examples() {
    let unit = |n: f64| array![[n, 0.0]];
    assert_eq!(clamp_topo_gradient(&unit(1.0), &unit(10.0), 0.5).unwrap(), unit(1.0));
    let out = clamp_topo_gradient(&array![[6.0, 8.0]], &unit(1.0), 0.5).unwrap();
    assert!((frobenius(&out) - 0.5).abs() < 1e-15);
    assert!((out[[0, 0]] / out[[0, 1]] - 0.75).abs() < 1e-15);
    assert_eq!(clamp_topo_gradient(&unit(3.0), &unit(0.0), 2.0).unwrap(), unit(0.0));
    assert!(clamp_topo_gradient(&unit(3.0), &array![[1.0]], 2.0).is_err());
    assert!(clamp_topo_gradient(&unit(3.0), &unit(1.0), 0.0).is_err());
}

proptest! {
    #[test]
    fn saliency_range(vals in proptest::collection::vec(-100.0..100.0f64, 2..40)) {
        let f = Array2::from_shape_vec((vals.len() / 2, 2), vals[..vals.len() / 2 * 2].to_vec()).unwrap();
        let m = saliency_map(&f).unwrap();
        prop_assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
        let pre = f.mapv(f64::abs).sum_axis(Axis(1));
        if pre.iter().any(|&v| v != pre[0]) {
            prop_assert_eq!(m.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
            prop_assert_eq!(m.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
    }

    #[test]
    fn grad_align_symmetric(a in proptest::collection::vec(0.0..1.0f64, 1..20), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Array1<f64> = a.iter().map(|_| rng.random::<f64>()).collect();
        let a = Array1::from(a);
        let ab = grad_align_loss(&[a.clone()], &[b.clone()]).unwrap();
        prop_assert_eq!(ab, grad_align_loss(&[b], &[a.clone()]).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(grad_align_loss(&[a.clone()], &[a]).unwrap(), 0.0);
    }

    #[test]
    fn clamp_invariant(seed in 0u64..10_000, alpha in 0.01..10.0f64, scale in -6i32..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-1.0..1.0) * 10f64.powi(scale));
        let gf = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-1.0..1.0));
        let out = clamp_topo_gradient(&gt, &gf, alpha).unwrap();
        prop_assert!(frobenius(&out) <= alpha * frobenius(&gf) + 1e-12);
        let cos = (&out * &gt).sum() / (frobenius(&out) * frobenius(&gt));
        prop_assert!((cos - 1.0).abs() < 1e-12);
    }
}

fn random_points(m: usize, c: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((m, c), || rng.random_range(0.0..1.0))
}

/// Central differences of the topology loss value with respect to the student points.
fn topo_fd(t: &Array2<f64>, s: &Array2<f64>, maxdim: usize, h: f64) -> Array2<f64> {
    let mut out = Array2::zeros(s.dim());
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            let (mut sp, mut sm) = (s.clone(), s.clone());
            sp[[i, j]] += h;
            sm[[i, j]] -= h;
            let fp = topo_loss_on(t.view(), sp.view(), maxdim, 0).unwrap().value;
            let fm = topo_loss_on(t.view(), sm.view(), maxdim, 0).unwrap().value;
            out[[i, j]] = (fp - fm) / (2.0 * h);
        }
    }
    out
}

#[test]
fn topo_loss_vanishes_on_identical_inputs() {
    let p = random_points(12, 3, 4);
    for maxdim in [0, 1] {
        let r = topo_loss_on(p.view(), p.view(), maxdim, 1).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn topo_gradient_matches_finite_differences() {
    for (seed, maxdim) in [(10, 0), (11, 0), (12, 1), (13, 1)] {
        let t = random_points(9, 3, seed);
        let s = random_points(9, 4, seed + 100);
        let r = topo_loss_on(t.view(), s.view(), maxdim, seed).unwrap();
        assert_eq!(r.tie_events, 0);
        let fd = topo_fd(&t, &s, maxdim, 1e-6);
        for (a, f) in r.grad.iter().zip(&fd) {
            if a.abs() < 1e-8 && f.abs() < 1e-8 {
                continue;
            }
            assert!(relative_error(*a, *f) < 1e-3, "seed {seed}: analytic {a} vs fd {f}");
        }
    }
}

#[test]
fn two_points_on_the_critical_edge() {
    let t = array![[0.0, 0.0], [2.0, 0.0]];
    let s = array![[0.0, 0.0], [1.0, 0.0]];
    let r = topo_loss_on(t.view(), s.view(), 0, 0).unwrap();
    // one finite H0 bar each: (0,2) vs (0,1), loss 2·1² with gradient −4 on the death
    assert_eq!(r.value, 2.0);
    assert_eq!(r.grad, array![[4.0, 0.0], [-4.0, 0.0]]);
    let fd = topo_fd(&t, &s, 0, 1e-6);
    for (a, f) in r.grad.iter().zip(&fd) {
        assert!((a - f).abs() < 1e-6);
    }
}

#[test]
fn scaling_direction_matches_finite_difference() {
    let t = random_points(10, 3, 20);
    let s = random_points(10, 3, 21);
    let r = topo_loss_on(t.view(), s.view(), 0, 0).unwrap();
    let eps = 1e-6;
    let up = topo_loss_on(t.view(), (&s * (1.0 + eps)).view(), 0, 0).unwrap().value;
    let down = topo_loss_on(t.view(), (&s * (1.0 - eps)).view(), 0, 0).unwrap().value;
    let directional = (&r.grad * &s).sum();
    assert_eq!(directional.signum(), (up - down).signum());
    assert!(relative_error(directional, (up - down) / (2.0 * eps)) < 1e-3);
}

#[test]
fn duplicated_student_points_tie_and_are_zeroed() {
    // four identical student points: every merge is a tie at length 0, so
    // nothing is in the support and the gradient is zero
    let t = random_points(4, 2, 30);
    let s = Array2::from_elem((4, 2), 0.5);
    let r = topo_loss_on(t.view(), s.view(), 0, 0).unwrap();
    assert!(r.value > 0.0);
    assert!(r.grad.iter().all(|&v| v == 0.0));
}

#[test]
fn subsampled_gradient_is_scattered() {
    let t = random_points(30, 3, 40);
    let s = random_points(30, 2, 41);
    let r = topo_loss(&t, &s, 8, 0, 5).unwrap();
    assert_eq!(r.indices.len(), 8);
    assert_eq!(r.grad.dim(), (30, 2));
    for i in 0..30 {
        if !r.indices.contains(&i) {
            assert!(r.grad.row(i).iter().all(|&v| v == 0.0));
        }
    }
}

fn cloud(n: usize, k: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]).collect();
    let labels = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
    PointCloud::new(coords, None, Some(labels), k).unwrap()
}

fn pair(seed: u64) -> (Network, Network) {
    let t = NetworkConfig { depths: vec![1, 2, 1], channels: vec![6, 8, 10], neighbors: 4, num_classes: 3, seed };
    let s = NetworkConfig { depths: vec![1, 1], channels: vec![3, 4], neighbors: 4, num_classes: 3, seed: seed + 1 };
    (Network::init(t).unwrap(), Network::init(s).unwrap())
}

#[test]
fn seg_only_config_is_plain_cross_entropy() {
    let (teacher, student) = pair(1);
    let c = cloud(40, 3, 1);
    let nb = Neighbors::compute(c.coords(), 4);
    let labels = c.labels().unwrap();
    let targets = teacher_targets(&teacher, &c, &nb, labels).unwrap();
    let cfg = DistillConfig { lambda_grad: 0.0, lambda_kld: 0.0, lambda_seg: 1.0, topo_enabled: false, ..Default::default() };
    let step = distill_step(&student, &targets, &c, &nb, labels, &cfg, 0).unwrap();
    let mut trace = student.forward_with(&c, &nb).unwrap();
    let loss = crate::net::task_loss(&mut trace, labels).unwrap();
    assert_eq!(step.breakdown.total, trace.scalar(loss).unwrap());
    assert_eq!(step.breakdown.total, step.breakdown.seg);
    assert!((step.breakdown.seg - cross_entropy(trace.logits().unwrap(), labels).unwrap()).abs() < 1e-12);
    assert_eq!(step.grads, crate::net::parameter_gradients(&trace, loss).unwrap());
}

#[test]
fn identical_networks_have_no_alignment_terms() {
    let (teacher, _) = pair(2);
    let c = cloud(50, 3, 2);
    let nb = Neighbors::compute(c.coords(), 4);
    let labels = c.labels().unwrap();
    let targets = teacher_targets(&teacher, &c, &nb, labels).unwrap();
    let cfg = DistillConfig { topo_subsample: 20, ..Default::default() };
    let b = distill_step(&teacher, &targets, &c, &nb, labels, &cfg, 3).unwrap().breakdown;
    assert_eq!((b.topo, b.grad, b.kld), (0.0, 0.0, 0.0));
    assert_eq!(b.total, cfg.lambda_seg * b.seg);
}

#[test]
fn breakdown_identity_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..5 {
        let (teacher, student) = pair(10 + trial);
        let c = cloud(30, 3, trial);
        let nb = Neighbors::compute(c.coords(), 4);
        let labels = c.labels().unwrap();
        let targets = teacher_targets(&teacher, &c, &nb, labels).unwrap();
        let cfg = DistillConfig {
            lambda_grad: rng.random_range(0.0..2.0),
            lambda_kld: rng.random_range(0.0..2.0),
            lambda_seg: rng.random_range(0.0..2.0),
            temperature: rng.random_range(0.5..3.0),
            alpha: rng.random_range(0.1..2.0),
            topo_subsample: 16,
            topo_maxdim: (trial % 2) as usize,
            ..Default::default()
        };
        let b = distill_step(&student, &targets, &c, &nb, labels, &cfg, trial).unwrap().breakdown;
        let independent = b.topo + cfg.lambda_grad * b.grad + cfg.lambda_kld * b.kld + cfg.lambda_seg * b.seg;
        assert!((b.total - independent).abs() <= 1e-12);
        assert!(b.topo > 0.0 && b.grad > 0.0 && b.kld > 0.0);
        assert!(b.norms.topo_clamped <= cfg.alpha * b.norms.feat + 1e-12);
        let direct = kld_loss(&targets.logits, student.forward_with(&c, &nb).unwrap().logits().unwrap(), cfg.temperature).unwrap();
        assert!((b.kld - direct).abs() < 1e-12);
    }
}

#[test]
fn alignment_graph_matches_pure_functions() {
    let (teacher, student) = pair(4);
    let c = cloud(25, 3, 4);
    let nb = Neighbors::compute(c.coords(), 4);
    let labels = c.labels().unwrap();
    let targets = teacher_targets(&teacher, &c, &nb, labels).unwrap();
    let cfg = DistillConfig { topo_enabled: false, ..Default::default() };
    let b = distill_step(&student, &targets, &c, &nb, labels, &cfg, 0).unwrap().breakdown;

    let mut trace = student.forward_with(&c, &nb).unwrap();
    let loss = crate::net::task_loss(&mut trace, labels).unwrap();
    let grads = crate::net::activation_gradients(&trace, loss).unwrap();
    let pairs = crate::net::pair_stages(2, 3);
    let m_s: Vec<_> = pairs
        .iter()
        .map(|&(s, _)| {
            let w = importance_weights(&grads[s]).unwrap();
            saliency_map(&scale_features(trace.feature(s).unwrap(), &w).unwrap()).unwrap()
        })
        .collect();
    let m_t: Vec<_> = pairs.iter().map(|&(_, t)| targets.saliency[t].clone()).collect();
    assert!((b.grad - grad_align_loss(&m_t, &m_s).unwrap()).abs() < 1e-12);
}

#[test]
fn one_step_on_alignment_loss_reduces_it() {
    let (teacher, mut student) = pair(5);
    let c = cloud(64, 3, 5);
    let nb = Neighbors::compute(c.coords(), 4);
    let labels = c.labels().unwrap();
    let targets = teacher_targets(&teacher, &c, &nb, labels).unwrap();
    let cfg = DistillConfig { lambda_grad: 1.0, lambda_kld: 0.0, lambda_seg: 0.0, topo_enabled: false, ..Default::default() };
    let before = distill_step(&student, &targets, &c, &nb, labels, &cfg, 0).unwrap();
    student.apply_gradients(&before.grads, 1e-3).unwrap();
    let after = distill_step(&student, &targets, &c, &nb, labels, &cfg, 0).unwrap();
    assert!(after.breakdown.grad < before.breakdown.grad, "{} -> {}", before.breakdown.grad, after.breakdown.grad);
}

#[test]
fn invalid_distill_configs() {
    for cfg in [
        DistillConfig { lambda_grad: -1.0, ..Default::default() },
        DistillConfig { temperature: 0.0, ..Default::default() },
        DistillConfig { alpha: 0.0, ..Default::default() },
        DistillConfig { topo_maxdim: 3, ..Default::default() },
        DistillConfig { topo_subsample: 1, ..Default::default() },
    ] {
        assert!(cfg.validate().is_err());
    }
}
