//! Acceptance gate: one check per release criterion, each printing a single
//! PASS/FAIL line with its pinned tolerance. Run with `--nocapture` to see
//! the lines for passing criteria too.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sphere_grouping::decoder::{decode_modes, multi_bandwidth_proposals, ProposalSet};
use sphere_grouping::embedding::{calibrated_similarity, normalize_columns, EmbeddingMatrix};
use sphere_grouping::eval::{average_recall, best_iou, similarity_histogram, standard_ar_thresholds};
use sphere_grouping::gbms::{bandwidth_from_margin, gbms_step, KernelConfig, LossMode};
use sphere_grouping::gradcheck::{random_matrix, run_all_paths, GradcheckConfig};
use sphere_grouping::loss::{
    check_total_similarity_bound, instance_weights, margin_lower_bound, pair_loss,
    InstanceLabeling, LossConfig, Normalization,
};
use sphere_grouping::net::PerPixelNet;
use sphere_grouping::synth::{
    gen_1d_gaussians, gen_instance_scene, GaussianMixSpec, Layout, Scene, ShapeSceneSpec,
    FEATURE_DIM,
};
use sphere_grouping::toy::{
    count_1d_modes, toy_1d_descent, toy_gradient, train_config_without_grouping,
    train_toy_instances, FixedRegressor, InstanceTrainConfig, ToyTrainConfig,
};

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { name, pass, detail }
}

// --- criterion 1: margin table --------------------------------------------

fn criterion_margin_table() -> Verdict {
    let table = [(4, 0.093), (5, 0.274), (6, 0.395), (7, 0.482)];
    let mut worst = 0.0f64;
    for (n, expected) in table {
        worst = worst.max((margin_lower_bound(n) - expected).abs());
    }
    report(
        "margin table",
        worst <= 1e-3,
        format!("max |dev| = {worst:.2e} (tol 1e-3)"),
    )
}

// --- criterion 2: gradient oracle suite -----------------------------------

fn criterion_gradcheck() -> Verdict {
    let reports = run_all_paths(&GradcheckConfig::default());
    let pass = reports.iter().all(|r| r.passed());
    let worst = reports
        .iter()
        .max_by(|a, b| {
            (a.max_rel_err / a.tolerance)
                .partial_cmp(&(b.max_rel_err / b.tolerance))
                .unwrap()
        })
        .unwrap();
    report(
        "gradient oracle suite",
        pass,
        format!(
            "{} paths; worst {} = {:.2e} (tol {:.0e})",
            reports.len(),
            worst.name,
            worst.max_rel_err,
            worst.tolerance
        ),
    )
}

// --- criterion 3: GBMS convergence ----------------------------------------

/// Three spherical clusters in R^4 with pairwise-obtuse seeded centers.
fn three_sphere_clusters(seed: u64, per_cluster: usize, sigma: f64) -> (EmbeddingMatrix, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Random orthonormal pair via Gram-Schmidt, then a planar simplex:
    // centers at mutual angle 120 degrees (dot = -1/2).
    let d = 4;
    let gram_schmidt = |rng: &mut ChaCha8Rng, prev: &[Vec<f64>]| -> Vec<f64> {
        loop {
            let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
            for p in prev {
                let dot: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum();
                for k in 0..d {
                    v[k] -= dot * p[k];
                }
            }
            let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-3 {
                v.iter_mut().for_each(|a| *a /= norm);
                return v;
            }
        }
    };
    let q1 = gram_schmidt(&mut rng, &[]);
    let q2 = gram_schmidt(&mut rng, &[q1.clone()]);
    let centers: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let theta = 2.0 * std::f64::consts::PI * c as f64 / 3.0;
            (0..d)
                .map(|k| theta.cos() * q1[k] + theta.sin() * q2[k])
                .collect()
        })
        .collect();
    let n = 3 * per_cluster;
    let mut m = Array2::zeros((d, n));
    let mut labels = Vec::with_capacity(n);
    for c in 0..3 {
        for i in 0..per_cluster {
            let col = c * per_cluster + i;
            for k in 0..d {
                m[[k, col]] = centers[c][k] + sigma * rng.gen_range(-1.0..1.0);
            }
            labels.push(c as u32);
        }
    }
    (normalize_columns(&m).unwrap(), labels)
}

fn rand_index(a: &[usize], b: &[u32]) -> f64 {
    let n = a.len();
    let mut agree = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let same_a = a[i] == a[j];
            let same_b = b[i] == b[j];
            if same_a == same_b {
                agree += 1;
            }
            total += 1;
        }
    }
    agree as f64 / total as f64
}

fn criterion_gbms_convergence() -> Verdict {
    let (x0, labels) = three_sphere_clusters(7, 20, 0.08);
    let kernel = KernelConfig::new(6.0, 1.0, 1).unwrap();
    let mut x = x0;
    for _ in 0..10 {
        x = gbms_step(&x, &kernel).unwrap().y;
    }
    let s = calibrated_similarity(&x).unwrap();
    let n = labels.len();
    let mut within_min = f64::INFINITY;
    let mut between_max = f64::NEG_INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = s.data()[[i, j]];
            if labels[i] == labels[j] {
                within_min = within_min.min(v);
            } else {
                between_max = between_max.max(v);
            }
        }
    }
    let partition = decode_modes(&x, 0.95).unwrap();
    let ri = rand_index(&partition.assignment, &labels);
    let pass = within_min >= 0.999 && between_max <= 0.5 && ri == 1.0;
    report(
        "GBMS convergence",
        pass,
        format!("within >= {within_min:.6}, between <= {between_max:.4}, Rand index {ri}"),
    )
}

// --- criterion 4: appendix toy replication --------------------------------

fn criterion_toy() -> Verdict {
    let spec = GaussianMixSpec::three_gaussians(100);
    let reg = FixedRegressor::standard();
    let threshold = 0.01;
    let mut detail = String::new();
    let mut pass = true;
    for seed in 0u64..5 {
        let (points, labels) = gen_1d_gaussians(&spec, seed);

        // (a) without the grouping module: three visible 1-D modes remain.
        let no_gbms = ToyTrainConfig::standard(0, LossMode::InitialOnly);
        let r0 = toy_1d_descent(&points, &labels, &reg, &no_gbms);
        let modes = count_1d_modes(&r0.final_points, 0.2);
        pass &= modes == 3;

        // (b) 5-loop all-loops run: grouped points on the ideal spots.
        let all = ToyTrainConfig::standard(5, LossMode::AllLoops);
        let ra = toy_1d_descent(&points, &labels, &reg, &all);
        let worst = ra
            .final_grouped
            .iter()
            .zip(&labels)
            .map(|(x, l)| (x - reg.ideal_point(*l)).abs())
            .fold(0.0f64, f64::max);
        pass &= worst <= 0.1;

        // (c) all-loops reaches the loss threshold at least as fast.
        let fin = ToyTrainConfig::standard(5, LossMode::FinalOnly);
        let rf = toy_1d_descent(&points, &labels, &reg, &fin);
        let first = |curve: &[f64]| {
            curve
                .iter()
                .position(|v| *v <= threshold)
                .map(|p| p as i64)
                .unwrap_or(i64::MAX)
        };
        pass &= first(&ra.mse_curve) <= first(&rf.mse_curve);
        detail += &format!("s{seed}: modes={modes} dev={worst:.3}; ");
    }
    report("appendix toy replication", pass, detail)
}

// --- criterion 5: Proposition 1 property ----------------------------------

fn criterion_prop1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut all_hold = true;
    for _ in 0..1000 {
        let d = 2 + rng.gen_range(0..7);
        let n = 2 + rng.gen_range(0..31);
        let x = normalize_columns(&random_matrix(d, n, &mut rng)).unwrap();
        all_hold &= check_total_similarity_bound(&x).holds;
    }
    // Equality at the antipodal N = 2 construction.
    let mut m = Array2::zeros((3, 2));
    m[[0, 0]] = 1.0;
    m[[0, 1]] = -1.0;
    let x = EmbeddingMatrix::new(m).unwrap();
    let check = check_total_similarity_bound(&x);
    let gap = (check.lhs - check.bound).abs();
    let pass = all_hold && gap <= 1e-12;
    report(
        "Proposition 1 bound",
        pass,
        format!("1000 draws hold; antipodal equality gap {gap:.1e} (tol 1e-12)"),
    )
}

// --- criterion 6: column stochasticity and contraction --------------------

fn criterion_stochastic_contraction() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut col_dev = 0.0f64;
    for _ in 0..100 {
        let d = 2 + rng.gen_range(0..7);
        let n = 2 + rng.gen_range(0..31);
        let x = normalize_columns(&random_matrix(d, n, &mut rng)).unwrap();
        let beta = rng.gen_range(0.5..8.0);
        let cache = gbms_step(&x, &KernelConfig::new(beta, 1.0, 1).unwrap()).unwrap();
        // K diag(q) must be column-stochastic.
        for j in 0..n {
            let mut sum = 0.0;
            for i in 0..n {
                sum += cache.k[[i, j]] * cache.q[j];
            }
            col_dev = col_dev.max((sum - 1.0).abs());
        }
    }

    // Angular-diameter contraction for points inside a hemispheric cap.
    let mut diam_growth = f64::NEG_INFINITY;
    for _ in 0..100 {
        let d = 3;
        let n = 2 + rng.gen_range(0..15);
        // Axis plus perturbations within an angular radius below 45 degrees,
        // so every pairwise angle stays below 90 degrees.
        let mut m = Array2::zeros((d, n));
        for j in 0..n {
            m[[0, j]] = 1.0;
            for k in 1..d {
                m[[k, j]] = rng.gen_range(-0.4..0.4);
            }
        }
        let x = normalize_columns(&m).unwrap();
        let diameter = |x: &EmbeddingMatrix| -> f64 {
            let s = x.data().t().dot(x.data());
            let mut min_dot = f64::INFINITY;
            for i in 0..n {
                for j in (i + 1)..n {
                    min_dot = min_dot.min(s[[i, j]]);
                }
            }
            min_dot.clamp(-1.0, 1.0).acos()
        };
        let before = diameter(&x);
        let beta = rng.gen_range(0.5..8.0);
        let after = diameter(&gbms_step(&x, &KernelConfig::new(beta, 1.0, 1).unwrap()).unwrap().y);
        diam_growth = diam_growth.max(after - before);
    }
    let pass = col_dev <= 1e-9 && diam_growth <= 1e-12;
    report(
        "column stochasticity and contraction",
        pass,
        format!("max column dev {col_dev:.1e} (tol 1e-9); max diameter growth {diam_growth:.1e}"),
    )
}

// --- criterion 7: zero-loss antipodal fixed point -------------------------

fn criterion_zero_loss_fixed_point() -> Verdict {
    // Two instances of 4 points each, placed antipodally on one axis of R^3.
    let n = 8;
    let mut m = Array2::zeros((3, n));
    let mut ids = Vec::with_capacity(n);
    for j in 0..n {
        m[[0, j]] = if j < n / 2 { 1.0 } else { -1.0 };
        ids.push(if j < n / 2 { 1u32 } else { 2u32 });
    }
    let x = EmbeddingMatrix::new(m).unwrap();
    let labels = InstanceLabeling::new(ids).unwrap();
    let weights = instance_weights(&labels);
    let cfg = LossConfig::new(0.5, n, 0, Normalization::PerImageN).unwrap();
    let subset: Vec<usize> = (0..n).collect();
    let s = calibrated_similarity(&x).unwrap();
    let loss = pair_loss(&s, &labels, &weights, &cfg, &subset).unwrap();

    let step = gbms_step(&x, &KernelConfig::new(6.0, 1.0, 1).unwrap()).unwrap();
    let mut disp = 0.0f64;
    for j in 0..n {
        for k in 0..3 {
            disp = disp.max((step.y.data()[[k, j]] - x.data()[[k, j]]).abs());
        }
    }
    let pass = loss.value == 0.0 && disp < 1e-9;
    report(
        "zero-loss antipodal fixed point",
        pass,
        format!("pair_loss {} ; max displacement {disp:.1e} (tol 1e-9)", loss.value),
    )
}

// --- criteria 8 and 9: end-to-end training + histogram sharpening ---------

/// Reference seeded configuration, frozen after the first verified run:
/// 32 train scenes (16x16, 2 shapes, noise 0.05), net 5->64->8 seed 0,
/// 500 SGD steps at lr 0.3, alpha 0.5, T=5, all-loops; eval on 10 held-out
/// scenes with the pooled bandwidth ladder at tau 0.95.
struct E2eOutcome {
    mean_iou: f64,
    mean_ar: f64,
    abl_iou: f64,
    abl_ar: f64,
    pre_mass: f64,
    post_mass: f64,
}

fn scene_spec(seed: u64) -> ShapeSceneSpec {
    ShapeSceneSpec {
        width: 16,
        height: 16,
        layout: Layout::Random { num_shapes: 2 },
        noise_sigma: 0.05,
        seed,
    }
}

fn run_reference_training() -> E2eOutcome {
    let alpha = 0.5;
    let beta = bandwidth_from_margin(alpha).unwrap();
    let kernel = KernelConfig::new(beta, 1.0, 5).unwrap();
    let betas = [beta / 2.0, beta, beta * 2.0, beta * 4.0, beta * 8.0, beta * 16.0];
    let thresholds = standard_ar_thresholds();
    let train_scenes: Vec<Scene> = (0..32u64)
        .map(|i| gen_instance_scene(&scene_spec(i)).unwrap())
        .collect();
    let eval_scenes: Vec<Scene> = (0..10u64)
        .map(|k| gen_instance_scene(&scene_spec(1_000_000 + k)).unwrap())
        .collect();
    let cfg = InstanceTrainConfig {
        steps: 500,
        lr: 0.3,
        kernel: kernel.clone(),
        loss: LossConfig::new(alpha, 1024, 0, Normalization::PerImageN).unwrap(),
        loss_mode: LossMode::AllLoops,
    };

    let mut net = PerPixelNet::random(FEATURE_DIM, 64, 8, 0);
    train_toy_instances(&train_scenes, &mut net, &cfg).unwrap();

    let mut abl_net = PerPixelNet::random(FEATURE_DIM, 64, 8, 0);
    train_toy_instances(&train_scenes, &mut abl_net, &train_config_without_grouping(&cfg)).unwrap();

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut ious = Vec::new();
    let mut ars = Vec::new();
    let mut abl_ious = Vec::new();
    let mut abl_ars = Vec::new();
    let mut pre_masses = Vec::new();
    let mut post_masses = Vec::new();
    for scene in &eval_scenes {
        let cache = net.forward(&scene.features).unwrap();
        let props = multi_bandwidth_proposals(&cache.out, &betas, &kernel, 0.95).unwrap();
        ious.push(best_iou(&props, &scene.labels, true).unwrap().mean_best_iou);
        ars.push(average_recall(&props, &scene.labels, &thresholds).unwrap());

        // T = 0 ablation: no grouping during training or decoding.
        let abl_cache = abl_net.forward(&scene.features).unwrap();
        let abl_partition = decode_modes(&abl_cache.out, 0.95).unwrap();
        let abl_props = ProposalSet::from_partition(&abl_partition, kernel.beta);
        abl_ious.push(best_iou(&abl_props, &scene.labels, true).unwrap().mean_best_iou);
        abl_ars.push(average_recall(&abl_props, &scene.labels, &thresholds).unwrap());

        // Histogram sharpening material (criterion 9) on the full model.
        let mut x = cache.out.clone();
        for _ in 0..kernel.loops {
            x = gbms_step(&x, &kernel).unwrap().y;
        }
        let pre = similarity_histogram(
            &calibrated_similarity(&cache.out).unwrap(),
            &scene.labels,
            1000,
            20_000,
            0,
        )
        .unwrap();
        let post =
            similarity_histogram(&calibrated_similarity(&x).unwrap(), &scene.labels, 1000, 20_000, 0)
                .unwrap();
        pre_masses.push(pre.positive_mass_above(0.999));
        post_masses.push(post.positive_mass_above(0.999));
    }
    E2eOutcome {
        mean_iou: mean(&ious),
        mean_ar: mean(&ars),
        abl_iou: mean(&abl_ious),
        abl_ar: mean(&abl_ars),
        pre_mass: mean(&pre_masses),
        post_mass: mean(&post_masses),
    }
}

fn criterion_end_to_end(out: &E2eOutcome) -> Verdict {
    let pass = out.mean_iou >= 0.9
        && out.mean_ar >= 0.7
        && out.abl_iou <= out.mean_iou
        && out.abl_ar <= out.mean_ar;
    report(
        "end-to-end toy training",
        pass,
        format!(
            "IoU {:.3} (>= 0.9), AR {:.3} (>= 0.7); T=0 ablation IoU {:.3}, AR {:.3}",
            out.mean_iou, out.mean_ar, out.abl_iou, out.abl_ar
        ),
    )
}

fn criterion_histogram_sharpening(out: &E2eOutcome) -> Verdict {
    report(
        "histogram sharpening",
        out.post_mass > out.pre_mass,
        format!(
            "positive-pair mass in [0.999, 1]: pre {:.4} -> post {:.4}",
            out.pre_mass, out.post_mass
        ),
    )
}

// --- criterion 10: gradient focusing --------------------------------------

fn criterion_gradient_focusing() -> Verdict {
    let spec = GaussianMixSpec::three_gaussians(100);
    let reg = FixedRegressor::standard();
    let mut pass = true;
    let mut detail = String::new();
    for seed in 0u64..3 {
        let (points, labels) = gen_1d_gaussians(&spec, seed);
        let cfg = ToyTrainConfig::standard(1, LossMode::AllLoops);
        let grad = toy_gradient(&points, &labels, &reg, &cfg);
        let dist: Vec<f64> = points
            .iter()
            .zip(&labels)
            .map(|(x, l)| (x - reg.ideal_point(*l)).abs())
            .collect();
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap());
        let fifth = points.len() / 5;
        let near = order[..fifth].iter().map(|&i| grad[i].abs()).sum::<f64>() / fifth as f64;
        let far = order[order.len() - fifth..]
            .iter()
            .map(|&i| grad[i].abs())
            .sum::<f64>()
            / fifth as f64;
        pass &= far > near;
        detail += &format!("s{seed}: far {far:.2e} vs near {near:.2e}; ");
    }
    report("gradient focusing", pass, detail)
}

// --- gate ------------------------------------------------------------------

#[test]
fn acceptance() {
    let e2e = run_reference_training();
    let verdicts = vec![
        criterion_margin_table(),
        criterion_gradcheck(),
        criterion_gbms_convergence(),
        criterion_toy(),
        criterion_prop1(),
        criterion_stochastic_contraction(),
        criterion_zero_loss_fixed_point(),
        criterion_end_to_end(&e2e),
        criterion_histogram_sharpening(&e2e),
        criterion_gradient_focusing(),
    ];
    let mut failures = 0;
    for (i, v) in verdicts.iter().enumerate() {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} [{tag}] {}: {}", i + 1, v.name, v.detail);
        if !v.pass {
            failures += 1;
        }
    }
    assert_eq!(failures, 0, "{failures} acceptance criteria failed");
}
