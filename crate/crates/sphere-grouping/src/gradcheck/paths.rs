//! Named gradient-path checks comparing every analytic backward pass to the
//! central finite-difference oracle on batches of seeded random instances.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    finite_diff, finite_diff_scalar, max_rel_err, random_matrix, scalar_rel_err, FaultInjection,
    PathReport, COMPOSITE_TOL, FD_STEP, PATH_TOL,
};
use crate::embedding::{
    calibrated_similarity, calibrated_similarity_backward, normalize_columns,
    normalize_columns_backward, EmbeddingMatrix,
};
use crate::gbms::{
    gbms_step, gbms_step_backward, gbms_unroll, gbms_unroll_backward, KernelConfig, LossMode,
};
use crate::loss::{instance_weights, pair_loss, InstanceLabeling, LossConfig, Normalization};
use crate::net::PerPixelNet;
use crate::synth::{gen_instance_scene, Layout, ShapeSceneSpec};
use crate::toy::composite_param_gradients;

/// Instance counts and unroll depth for the full check run.
#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub instances: usize,
    pub unroll_loops: Vec<usize>,
    pub fault: FaultInjection,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 100,
            unroll_loops: vec![1, 2, 3],
            fault: FaultInjection::None,
        }
    }
}

fn flip_if(fault: &FaultInjection, name: &str, g: &mut Array2<f64>) {
    if let FaultInjection::SignFlip(target) = fault {
        if *target == name {
            g.mapv_inplace(|v| -v);
        }
    }
}

fn dims(rng: &mut impl Rng) -> (usize, usize) {
    (2 + rng.gen_range(0..7), 2 + rng.gen_range(0..31))
}

fn check_normalization(cfg: &GradcheckConfig) -> PathReport {
    let mut worst = 0.0f64;
    for i in 0..cfg.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + i as u64);
        let (d, n) = dims(&mut rng);
        let m = random_matrix(d, n, &mut rng);
        let probe = random_matrix(d, n, &mut rng);
        let mut analytic = normalize_columns_backward(&m, &probe).unwrap();
        flip_if(&cfg.fault, "normalization", &mut analytic);
        let numeric = finite_diff(&m, FD_STEP, |m| {
            (&probe * normalize_columns(m).unwrap().data()).sum()
        });
        worst = worst.max(max_rel_err(&analytic, &numeric));
    }
    PathReport {
        name: "normalization",
        max_rel_err: worst,
        tolerance: PATH_TOL,
        instances: cfg.instances,
    }
}

fn check_similarity(cfg: &GradcheckConfig) -> PathReport {
    let mut worst = 0.0f64;
    for i in 0..cfg.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 1000 + i as u64);
        let (d, n) = dims(&mut rng);
        let x = normalize_columns(&random_matrix(d, n, &mut rng)).unwrap();
        let half = random_matrix(n, n, &mut rng);
        let ds = &half + &half.t();
        let mut analytic = calibrated_similarity_backward(&x, &ds).unwrap();
        flip_if(&cfg.fault, "similarity", &mut analytic);
        let numeric = finite_diff(x.data(), FD_STEP, |m| {
            let s = m.t().dot(m).mapv(|v| 0.5 * (1.0 + v));
            (&ds * &s).sum()
        });
        worst = worst.max(max_rel_err(&analytic, &numeric));
    }
    PathReport {
        name: "similarity",
        max_rel_err: worst,
        tolerance: PATH_TOL,
        instances: cfg.instances,
    }
}

fn random_labels(n: usize, rng: &mut impl Rng) -> InstanceLabeling {
    InstanceLabeling::new((0..n).map(|_| rng.gen_range(0..3u32)).collect()).unwrap()
}

fn check_loss(cfg: &GradcheckConfig) -> PathReport {
    let mut worst = 0.0f64;
    let mut done = 0usize;
    let mut seed = cfg.seed + 2000;
    while done < cfg.instances {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, n) = dims(&mut rng);
        let x = normalize_columns(&random_matrix(d, n, &mut rng)).unwrap();
        let s = calibrated_similarity(&x).unwrap();
        let labels = random_labels(n, &mut rng);
        let alpha = 0.4;
        // Kink exclusion: any cross-instance similarity near the hinge makes
        // central differences invalid, so skip that draw.
        let near = (0..n).any(|i| {
            (0..n)
                .any(|j| labels.label(i) != labels.label(j) && (s.get(i, j) - alpha).abs() < 1e-4)
        });
        if near {
            continue;
        }
        let weights = instance_weights(&labels);
        let loss_cfg = LossConfig::new(alpha, n, 0, Normalization::PerSampleS).unwrap();
        let subset: Vec<usize> = (0..n).collect();
        let result = pair_loss(&s, &labels, &weights, &loss_cfg, &subset).unwrap();
        let mut analytic = result.grad_s.clone();
        flip_if(&cfg.fault, "loss", &mut analytic);
        let numeric = finite_diff(s.data(), FD_STEP, |sm| {
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let scale = weights.get(i) * weights.get(j) / n as f64;
                    if labels.label(i) == labels.label(j) {
                        total += scale * (1.0 - sm[[i, j]]);
                    } else {
                        total += scale * (sm[[i, j]] - alpha).max(0.0);
                    }
                }
            }
            total
        });
        worst = worst.max(max_rel_err(&analytic, &numeric));
        done += 1;
    }
    PathReport {
        name: "loss",
        max_rel_err: worst,
        tolerance: PATH_TOL,
        instances: cfg.instances,
    }
}

fn check_gbms_step(cfg: &GradcheckConfig) -> (PathReport, PathReport) {
    let mut worst_x = 0.0f64;
    let mut worst_beta = 0.0f64;
    for i in 0..cfg.instances {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 3000 + i as u64);
        let d = 2 + rng.gen_range(0..7);
        let n = 2 + rng.gen_range(0..15);
        let x = normalize_columns(&random_matrix(d, n, &mut rng)).unwrap();
        let probe = random_matrix(d, n, &mut rng);
        let kernel = KernelConfig::new(0.5 + rng.gen_range(0.0..4.0), 1.0, 1).unwrap();
        let cache = gbms_step(&x, &kernel).unwrap();
        let grads = gbms_step_backward(&cache, &probe).unwrap();
        let mut analytic = grads.d_x.clone();
        flip_if(&cfg.fault, "gbms_step", &mut analytic);
        let numeric = finite_diff(x.data(), FD_STEP, |m| {
            let xm = EmbeddingMatrix::new_unchecked(m.clone());
            (&probe * gbms_step(&xm, &kernel).unwrap().y.data()).sum()
        });
        worst_x = worst_x.max(max_rel_err(&analytic, &numeric));

        let mut analytic_beta = grads.d_beta;
        if cfg.fault == FaultInjection::SignFlip("gbms_step_beta") {
            analytic_beta = -analytic_beta;
        }
        let numeric_beta = finite_diff_scalar(kernel.beta, FD_STEP, |b| {
            let k = KernelConfig::new(b, 1.0, 1).unwrap();
            (&probe * gbms_step(&x, &k).unwrap().y.data()).sum()
        });
        worst_beta = worst_beta.max(scalar_rel_err(analytic_beta, numeric_beta));
    }
    (
        PathReport {
            name: "gbms_step",
            max_rel_err: worst_x,
            tolerance: PATH_TOL,
            instances: cfg.instances,
        },
        PathReport {
            name: "gbms_step_beta",
            max_rel_err: worst_beta,
            tolerance: PATH_TOL,
            instances: cfg.instances,
        },
    )
}

fn check_unroll(cfg: &GradcheckConfig, loops: usize) -> PathReport {
    let mut worst = 0.0f64;
    let mut done = 0usize;
    let mut seed = cfg.seed + 4000 + 500 * loops as u64;
    // Smaller instances here: each oracle evaluation reruns the whole unroll.
    while done < cfg.instances {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3 + rng.gen_range(0..4);
        let n = 4 + rng.gen_range(0..9);
        let raw = random_matrix(d, n, &mut rng);
        let x0 = normalize_columns(&raw).unwrap();
        let labels = random_labels(n, &mut rng);
        let weights = instance_weights(&labels);
        let alpha = 0.4;
        let loss_cfg = LossConfig::new(alpha, n, seed, Normalization::PerSampleS).unwrap();
        let kernel = KernelConfig::new(2.0, 1.0, loops).unwrap();
        let traj = gbms_unroll(&x0, &kernel, &labels, &weights, &loss_cfg, LossMode::AllLoops)
            .unwrap();
        let near = traj.states.iter().any(|state| {
            let s = calibrated_similarity(state).unwrap();
            (0..n).any(|i| {
                (0..n).any(|j| {
                    labels.label(i) != labels.label(j) && (s.get(i, j) - alpha).abs() < 1e-4
                })
            })
        });
        if near {
            continue;
        }
        let grads = gbms_unroll_backward(&traj).unwrap();
        let mut analytic = normalize_columns_backward(&raw, &grads.d_x0).unwrap();
        flip_if(&cfg.fault, "unroll", &mut analytic);
        let numeric = finite_diff(&raw, FD_STEP, |m| {
            let x = normalize_columns(m).unwrap();
            gbms_unroll(&x, &kernel, &labels, &weights, &loss_cfg, LossMode::AllLoops)
                .unwrap()
                .total_loss
        });
        worst = worst.max(max_rel_err(&analytic, &numeric));

        let numeric_beta = finite_diff_scalar(kernel.beta, FD_STEP, |b| {
            let k = KernelConfig::new(b, 1.0, loops).unwrap();
            gbms_unroll(&x0, &k, &labels, &weights, &loss_cfg, LossMode::AllLoops)
                .unwrap()
                .total_loss
        });
        worst = worst.max(scalar_rel_err(grads.d_beta, numeric_beta));
        done += 1;
    }
    PathReport {
        name: match loops {
            1 => "unroll_t1",
            2 => "unroll_t2",
            3 => "unroll_t3",
            _ => "unroll",
        },
        max_rel_err: worst,
        tolerance: PATH_TOL,
        instances: cfg.instances,
    }
}

fn check_net(cfg: &GradcheckConfig) -> PathReport {
    let mut worst = 0.0f64;
    let mut done = 0usize;
    let mut seed = cfg.seed + 6000;
    while done < cfg.instances {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = 2 + rng.gen_range(0..3);
        let h = 2 + rng.gen_range(0..4);
        let d = 2 + rng.gen_range(0..3);
        let n = 3 + rng.gen_range(0..6);
        let net = PerPixelNet::random(f, h, d, seed);
        let features = random_matrix(f, n, &mut rng);
        let cache = match net.forward(&features) {
            Ok(c) => c,
            Err(_) => continue,
        };
        // Rectifier boundary exclusion.
        if cache.pre_hidden.iter().any(|v| v.abs() < 1e-4) {
            continue;
        }
        let probe = random_matrix(d, n, &mut rng);
        let grads = net.backward(&cache, &probe).unwrap();
        let mut analytic = grads.d_w1.clone();
        flip_if(&cfg.fault, "net", &mut analytic);
        let numeric = finite_diff(&net.w1, FD_STEP, |w| {
            let mut n2 = net.clone();
            n2.w1 = w.clone();
            (&probe * n2.forward(&features).unwrap().out.data()).sum()
        });
        worst = worst.max(max_rel_err(&analytic, &numeric));
        let numeric_w2 = finite_diff(&net.w2, FD_STEP, |w| {
            let mut n2 = net.clone();
            n2.w2 = w.clone();
            (&probe * n2.forward(&features).unwrap().out.data()).sum()
        });
        worst = worst.max(max_rel_err(&grads.d_w2, &numeric_w2));
        done += 1;
    }
    PathReport {
        name: "net",
        max_rel_err: worst,
        tolerance: PATH_TOL,
        instances: cfg.instances,
    }
}

fn check_composite(cfg: &GradcheckConfig) -> PathReport {
    let instances = cfg.instances.min(20);
    let mut worst = 0.0f64;
    let mut done = 0usize;
    let mut seed = cfg.seed + 7000;
    while done < instances {
        seed += 1;
        let scene = match gen_instance_scene(&ShapeSceneSpec {
            width: 3,
            height: 4,
            layout: Layout::Random { num_shapes: 1 },
            noise_sigma: 0.05,
            seed,
        }) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let net = PerPixelNet::random(5, 4, 4, seed);
        let kernel = KernelConfig::new(2.0, 1.0, 2).unwrap();
        let loss_cfg = LossConfig::new(0.4, 12, seed, Normalization::PerSampleS).unwrap();
        let cache = match net.forward(&scene.features) {
            Ok(c) => c,
            Err(_) => continue,
        };
        if cache.pre_hidden.iter().any(|v| v.abs() < 1e-4) {
            continue;
        }
        // Kink exclusion over every unrolled state.
        let weights = instance_weights(&scene.labels);
        let traj = gbms_unroll(
            &cache.out,
            &kernel,
            &scene.labels,
            &weights,
            &loss_cfg,
            LossMode::AllLoops,
        )
        .unwrap();
        let near = traj.states.iter().any(|state| {
            let s = calibrated_similarity(state).unwrap();
            let n = state.num_points();
            (0..n).any(|i| {
                (0..n).any(|j| {
                    scene.labels.label(i) != scene.labels.label(j)
                        && (s.get(i, j) - loss_cfg.alpha).abs() < 1e-4
                })
            })
        });
        if near {
            continue;
        }
        let (_, grads) =
            composite_param_gradients(&net, &scene, &kernel, &loss_cfg, LossMode::AllLoops)
                .unwrap();
        let mut analytic = grads.d_w1.clone();
        flip_if(&cfg.fault, "composite", &mut analytic);
        let numeric = finite_diff(&net.w1, FD_STEP, |w| {
            let mut n2 = net.clone();
            n2.w1 = w.clone();
            composite_param_gradients(&n2, &scene, &kernel, &loss_cfg, LossMode::AllLoops)
                .unwrap()
                .0
        });
        worst = worst.max(max_rel_err(&analytic, &numeric));
        done += 1;
    }
    PathReport {
        name: "composite",
        max_rel_err: worst,
        tolerance: COMPOSITE_TOL,
        instances,
    }
}

/// Runs every named path check and returns one report per path.
pub fn run_all_paths(cfg: &GradcheckConfig) -> Vec<PathReport> {
    let mut reports = vec![
        check_normalization(cfg),
        check_similarity(cfg),
        check_loss(cfg),
    ];
    let (step, step_beta) = check_gbms_step(cfg);
    reports.push(step);
    reports.push(step_beta);
    for &t in &cfg.unroll_loops {
        reports.push(check_unroll(cfg, t));
    }
    reports.push(check_net(cfg));
    reports.push(check_composite(cfg));
    reports
}
