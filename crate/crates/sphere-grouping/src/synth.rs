//! Seeded generators: 1-D Gaussian mixtures for the descent toy, and small
//! multi-shape scenes with ground-truth instance masks.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::loss::InstanceLabeling;

/// How a mixture component maps to a regression label.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentLabel {
    Fixed(u32),
    /// Label of the nearest target position, decided per sample.
    NearestOf(Vec<(f64, u32)>),
}

#[derive(Debug, Clone)]
pub struct GaussianComponent {
    pub mu: f64,
    pub sigma: f64,
    pub count: usize,
    pub label: ComponentLabel,
}

/// 1-D Gaussian mixture specification.
#[derive(Debug, Clone)]
pub struct GaussianMixSpec {
    pub components: Vec<GaussianComponent>,
}

impl GaussianMixSpec {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        if components.iter().any(|c| !(c.sigma >= 0.0)) {
            return Err(Error::InvalidConfig("sigma must be nonnegative".into()));
        }
        Ok(Self { components })
    }

    /// The three-component mixture used by the 1-D descent experiment:
    /// (3, 0.2), (4, 0.3), (5, 0.1); the middle component takes the label of
    /// the nearer target.
    pub fn three_gaussians(count_per_component: usize) -> Self {
        let targets = vec![(3.0, 1), (5.0, 2)];
        Self {
            components: vec![
                GaussianComponent {
                    mu: 3.0,
                    sigma: 0.2,
                    count: count_per_component,
                    label: ComponentLabel::Fixed(1),
                },
                GaussianComponent {
                    mu: 4.0,
                    sigma: 0.3,
                    count: count_per_component,
                    label: ComponentLabel::NearestOf(targets),
                },
                GaussianComponent {
                    mu: 5.0,
                    sigma: 0.1,
                    count: count_per_component,
                    label: ComponentLabel::Fixed(2),
                },
            ],
        }
    }
}

/// Draws points from each component with its count. Deterministic per seed.
pub fn gen_1d_gaussians(spec: &GaussianMixSpec, seed: u64) -> (Vec<f64>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for comp in &spec.components {
        let dist = Normal::new(comp.mu, comp.sigma).unwrap();
        for _ in 0..comp.count {
            let x = if comp.sigma == 0.0 {
                comp.mu
            } else {
                dist.sample(&mut rng)
            };
            let label = match &comp.label {
                ComponentLabel::Fixed(l) => *l,
                ComponentLabel::NearestOf(targets) => {
                    targets
                        .iter()
                        .min_by(|a, b| {
                            (x - a.0).abs().partial_cmp(&(x - b.0).abs()).unwrap()
                        })
                        .unwrap()
                        .1
                }
            };
            points.push(x);
            labels.push(label);
        }
    }
    (points, labels)
}

/// A placed shape with its intrinsic color.
#[derive(Debug, Clone)]
pub enum Shape {
    Disc { cx: f64, cy: f64, r: f64, color: [f64; 3] },
    Rect { x0: usize, y0: usize, x1: usize, y1: usize, color: [f64; 3] },
}

impl Shape {
    fn covers(&self, x: usize, y: usize) -> bool {
        match self {
            Shape::Disc { cx, cy, r, .. } => {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                dx * dx + dy * dy <= r * r
            }
            Shape::Rect { x0, y0, x1, y1, .. } => x >= *x0 && x <= *x1 && y >= *y0 && y <= *y1,
        }
    }

    fn color(&self) -> [f64; 3] {
        match self {
            Shape::Disc { color, .. } | Shape::Rect { color, .. } => *color,
        }
    }
}

/// Which shapes go on the canvas.
#[derive(Debug, Clone)]
pub enum Layout {
    Random { num_shapes: usize },
    /// Fixed shapes; later-listed shapes occlude earlier ones.
    Explicit(Vec<Shape>),
}

/// Scene generator settings. Later shapes occlude earlier ones; background
/// is instance id 0.
#[derive(Debug, Clone)]
pub struct ShapeSceneSpec {
    pub width: usize,
    pub height: usize,
    pub layout: Layout,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Feature dimension: normalized x, normalized y, color triple.
pub const FEATURE_DIM: usize = 5;

/// Minimum pairwise L2 distance between shape (and background) colors so
/// instances stay separable in feature space.
const MIN_COLOR_DIST: f64 = 0.4;

/// One generated scene: per-pixel features and the instance mask.
#[derive(Debug, Clone)]
pub struct Scene {
    pub features: Array2<f64>,
    pub labels: InstanceLabeling,
    pub width: usize,
    pub height: usize,
}

fn distinct_color<R: Rng>(rng: &mut R, used: &[[f64; 3]]) -> [f64; 3] {
    loop {
        let c = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let ok = used.iter().all(|u| {
            let d2: f64 = (0..3).map(|k| (c[k] - u[k]) * (c[k] - u[k])).sum();
            d2.sqrt() >= MIN_COLOR_DIST
        });
        if ok {
            return c;
        }
    }
}

/// Renders the scene: topmost shape wins each pixel, background id is 0.
pub fn gen_instance_scene(spec: &ShapeSceneSpec) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let n = w * h;

    for attempt in 0..1000 {
        let background = distinct_color(&mut rng, &[]);
        let mut used = vec![background];
        let shapes: Vec<Shape> = match &spec.layout {
            Layout::Explicit(shapes) => shapes.clone(),
            Layout::Random { num_shapes } => {
                let mut shapes = Vec::with_capacity(*num_shapes);
                for _ in 0..*num_shapes {
                    let color = distinct_color(&mut rng, &used);
                    used.push(color);
                    let shape = if rng.gen_bool(0.5) {
                        let r = rng.gen_range(0.15..0.3) * w.min(h) as f64;
                        Shape::Disc {
                            cx: rng.gen_range(r..(w as f64 - 1.0 - r)),
                            cy: rng.gen_range(r..(h as f64 - 1.0 - r)),
                            r,
                            color,
                        }
                    } else {
                        let sw = rng.gen_range(w / 4..w / 2).max(2);
                        let sh = rng.gen_range(h / 4..h / 2).max(2);
                        let x0 = rng.gen_range(0..w - sw);
                        let y0 = rng.gen_range(0..h - sh);
                        Shape::Rect {
                            x0,
                            y0,
                            x1: x0 + sw - 1,
                            y1: y0 + sh - 1,
                            color,
                        }
                    };
                    shapes.push(shape);
                }
                shapes
            }
        };

        let mut ids = vec![0u32; n];
        for (s, shape) in shapes.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    if shape.covers(x, y) {
                        ids[y * w + x] = s as u32 + 1;
                    }
                }
            }
        }

        // Every shape (and the background) must keep at least one visible
        // pixel after occlusion; otherwise resample the layout.
        let visible = |id: u32| ids.iter().any(|&v| v == id);
        let all_visible = (0..=shapes.len() as u32).all(visible);
        if !all_visible {
            if matches!(spec.layout, Layout::Explicit(_)) || attempt == 999 {
                return Err(Error::InfeasiblePlacement(attempt));
            }
            continue;
        }

        let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).unwrap();
        let mut features = Array2::zeros((FEATURE_DIM, n));
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let color = if ids[i] == 0 {
                    background
                } else {
                    shapes[ids[i] as usize - 1].color()
                };
                features[[0, i]] = x as f64 / (w - 1).max(1) as f64;
                features[[1, i]] = y as f64 / (h - 1).max(1) as f64;
                for k in 0..3 {
                    features[[2 + k, i]] = color[k];
                }
                if spec.noise_sigma > 0.0 {
                    for f in 0..FEATURE_DIM {
                        features[[f, i]] += noise.sample(&mut rng);
                    }
                }
            }
        }
        return Ok(Scene {
            features,
            labels: InstanceLabeling::new(ids)?,
            width: w,
            height: h,
        });
    }
    Err(Error::InfeasiblePlacement(1000))
}
