#![allow(dead_code)]

use implicit_sampling::geometry::{Environment, Point, Rect};
use implicit_sampling::nn::{Layer, Matrix, NeuralNet};
use implicit_sampling::planners::SearchTree;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-3;
/// Denominator floor for relative errors, so gradients that are zero up to
/// rounding do not produce meaningless ratios.
pub const FD_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub compared: usize,
    /// Coordinates skipped because a ReLU changed side between the two
    /// perturbed evaluations.
    pub skipped: usize,
    pub norm_params_compared: usize,
}

/// Smallest nonzero batch variance a batch-norm unit may see in a gradient
/// check problem. Closer to the normalization epsilon (1e-5) the third
/// derivative grows like 1/var, and central differences at `FD_STEP` stop
/// being an accurate reference even though the analytic gradient is exact.
pub const MIN_NORM_VARIANCE: f64 = 1e-3;

/// Random small network with every parameter (including batch-norm scale
/// and shift) drawn away from its default, plus a random batch and a random
/// linear read-out of the outputs. Draws that put a batch-norm unit in the
/// near-singular regime are redrawn.
pub fn random_problem(rng: &mut ChaCha8Rng) -> (NeuralNet, Matrix, Matrix) {
    loop {
        let problem = draw_problem(rng);
        if min_norm_variance(&problem.0, &problem.1) >= MIN_NORM_VARIANCE {
            return problem;
        }
    }
}

fn draw_problem(rng: &mut ChaCha8Rng) -> (NeuralNet, Matrix, Matrix) {
    let input = rng.gen_range(1..=4);
    let depth = rng.gen_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(2..=6)).collect();
    let output = rng.gen_range(1..=3);
    let batch = rng.gen_range(3..=9);
    let mut net = NeuralNet::mlp(input, &hidden, output, rng).unwrap();
    for layer in net.layers_mut() {
        match layer {
            Layer::Affine(a) => {
                a.bias
                    .iter_mut()
                    .for_each(|b| *b = rng.gen_range(-0.5..0.5));
            }
            Layer::BatchNorm(n) => {
                n.scale
                    .iter_mut()
                    .for_each(|s| *s = rng.gen_range(0.5..1.5));
                n.shift
                    .iter_mut()
                    .for_each(|s| *s = rng.gen_range(-0.5..0.5));
            }
            Layer::Relu { .. } => {}
        }
    }
    let x = Matrix::from_vec(
        batch,
        input,
        (0..batch * input)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect(),
    )
    .unwrap();
    let g = Matrix::from_vec(
        batch,
        output,
        (0..batch * output)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    (net, x, g)
}

/// Smallest nonzero batch variance among batch-norm inputs. Every hidden
/// block is affine, ReLU, batch norm, so those inputs are the rectified
/// pre-activations. Dead units (variance exactly zero) are constant and
/// harmless.
pub fn min_norm_variance(net: &NeuralNet, x: &Matrix) -> f64 {
    let (_, cache) = net.forward_batch_stats(x).unwrap();
    let mut least = f64::INFINITY;
    for m in cache.pre_activations() {
        for c in 0..m.cols {
            let col: Vec<f64> = (0..m.rows)
                .map(|r| m.data[r * m.cols + c].max(0.0))
                .collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
            if var > 0.0 {
                least = least.min(var);
            }
        }
    }
    least
}

fn objective(net: &NeuralNet, x: &Matrix, g: &Matrix) -> (f64, Vec<bool>) {
    let (y, cache) = net.forward_batch_stats(x).unwrap();
    let f = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
    let signs = cache
        .pre_activations()
        .iter()
        .flat_map(|m| m.data.iter().map(|&v| v > 0.0))
        .collect();
    (f, signs)
}

/// Indices of batch-norm parameters in flat parameter order.
pub fn norm_param_indices(net: &NeuralNet) -> Vec<usize> {
    let mut out = Vec::new();
    let mut offset = 0;
    for l in net.layers() {
        match l {
            Layer::Affine(a) => offset += a.weights.len() + a.bias.len(),
            Layer::BatchNorm(n) => {
                out.extend(offset..offset + 2 * n.width);
                offset += 2 * n.width;
            }
            Layer::Relu { .. } => {}
        }
    }
    out
}

/// Central differences against `backward` on one random problem.
pub fn check_gradients(rng: &mut ChaCha8Rng) -> GradCheck {
    let (mut net, x, g) = random_problem(rng);
    let (_, cache) = net.forward_batch_stats(&x).unwrap();
    let analytic = net.backward(&cache, &g).unwrap();
    let (_, base_signs) = objective(&net, &x, &g);
    let theta = net.params();
    let norm_idx = norm_param_indices(&net);
    let mut out = GradCheck::default();
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + FD_STEP;
        net.set_params(&t).unwrap();
        let (fp, sp) = objective(&net, &x, &g);
        t[i] = theta[i] - FD_STEP;
        net.set_params(&t).unwrap();
        let (fm, sm) = objective(&net, &x, &g);
        if sp != base_signs || sm != base_signs {
            out.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let denom = analytic[i].abs().max(numeric.abs()).max(FD_ABS_FLOOR);
        let rel = (analytic[i] - numeric).abs() / denom;
        out.max_rel_err = out.max_rel_err.max(rel);
        out.compared += 1;
        if norm_idx.contains(&i) {
            out.norm_params_compared += 1;
        }
    }
    net.set_params(&theta).unwrap();
    out
}

/// Number of 4-connected free components when `env` is rasterized at
/// `n x n` cell centers.
pub fn free_components(env: &Environment, n: usize) -> usize {
    let b = env.bounds;
    let free: Vec<bool> = (0..n * n)
        .map(|k| {
            let (i, j) = (k % n, k / n);
            let q = Point::new(
                b.x + (i as f64 + 0.5) * b.w / n as f64,
                b.y + (j as f64 + 0.5) * b.h / n as f64,
            );
            !env.point_in_collision(q)
        })
        .collect();
    let mut seen = vec![false; n * n];
    let mut components = 0;
    for s in 0..n * n {
        if !free[s] || seen[s] {
            continue;
        }
        components += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(k) = stack.pop() {
            let (i, j) = (k % n, k / n);
            let mut nb = Vec::with_capacity(4);
            if i > 0 {
                nb.push(k - 1);
            }
            if i + 1 < n {
                nb.push(k + 1);
            }
            if j > 0 {
                nb.push(k - n);
            }
            if j + 1 < n {
                nb.push(k + n);
            }
            for m in nb {
                if free[m] && !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
    }
    components
}

/// 20x20 world whose obstacles cover whole unit cells.
pub fn grid_world() -> Environment {
    let r = |x: f64, y: f64, w: f64, h: f64| Rect { x, y, w, h };
    Environment::new(
        "grid20",
        r(0.0, 0.0, 20.0, 20.0),
        vec![
            r(4.0, 4.0, 3.0, 9.0),
            r(11.0, 2.0, 2.0, 7.0),
            r(9.0, 14.0, 7.0, 2.0),
        ],
    )
    .unwrap()
}

/// A handful of free nodes in [`grid_world`] with their clearances.
pub fn grid_tree(env: &Environment) -> SearchTree<Point> {
    let pts = [
        Point::new(2.5, 2.5),
        Point::new(8.5, 3.0),
        Point::new(9.0, 10.5),
        Point::new(17.5, 11.0),
        Point::new(3.0, 17.0),
    ];
    let mut t = SearchTree::new(pts[0], env.distance_to_obstacles(pts[0]));
    for (i, &p) in pts[1..].iter().enumerate() {
        t.push(p, i, env.distance_to_obstacles(p));
    }
    t
}

/// Total-variation distance between two distributions on the same cells.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
