use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// Random-forest regressor: bootstrap samples, a random feature subset per
/// split, variance-reduction splits. Targets are standardized before
/// fitting, so predictions are equivariant under positive affine maps of
/// the targets. The spread across trees serves as the uncertainty.
#[derive(Clone, Debug)]
pub struct RandomForest {
    trees: Vec<Tree>,
    mean: f64,
    scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features considered at each split.
    pub feature_fraction: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: 48,
            max_depth: 12,
            min_leaf: 1,
            feature_fraction: 0.5,
        }
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    p: ForestParams,
    nodes: Vec<Node>,
}

fn mean_of(y: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

fn sse(y: &[f64], idx: &[usize]) -> f64 {
    let m = mean_of(y, idx);
    idx.iter().map(|&i| (y[i] - m).powi(2)).sum()
}

impl Builder<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf(mean_of(self.y, &idx)));
        let parent = sse(self.y, &idx);
        if depth >= self.p.max_depth || idx.len() < 2 * self.p.min_leaf || parent <= 1e-12 * idx.len() as f64 {
            return slot;
        }
        let width = self.x[0].len();
        let k = ((width as f64 * self.p.feature_fraction).ceil() as usize).clamp(1, width);
        let mut features: Vec<usize> = (0..width).collect();
        for i in 0..k {
            let j = rng.random_range(i..width);
            features.swap(i, j);
        }
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features[..k] {
            let mut vals: Vec<f64> = idx.iter().map(|&i| self.x[i][f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][f] <= t);
                if l.len() < self.p.min_leaf || r.len() < self.p.min_leaf {
                    continue;
                }
                let gain = parent - sse(self.y, &l) - sse(self.y, &r);
                if best.is_none_or(|(g, _, _)| gain > g * (1.0 + 1e-9) + 1e-15) {
                    best = Some((gain, f, t));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return slot;
        };
        if gain <= 1e-12 * parent {
            return slot;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[slot] = Node::Split { feature, threshold, left, right };
        slot
    }
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: ForestParams, seed: u64) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::Search(format!("surrogate needs matching non-empty data, got {} rows and {} targets", x.len(), y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Search("surrogate targets must be finite".into()));
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let scale = if sd > 0.0 { sd } else { 1.0 };
        let z: Vec<f64> = y.iter().map(|v| if sd > 0.0 { (v - mean) / scale } else { 0.0 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..params.trees.max(1))
            .map(|_| {
                let idx: Vec<usize> = (0..y.len()).map(|_| rng.random_range(0..y.len())).collect();
                let mut b = Builder { x, y: &z, p: params, nodes: Vec::new() };
                b.grow(idx, 0, &mut rng);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(Self { trees, mean, scale })
    }

    /// Mean and standard deviation across trees, in standardized units.
    pub fn predict_standardized(&self, x: &[f64]) -> (f64, f64) {
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        let n = preds.len() as f64;
        let m = preds.iter().sum::<f64>() / n;
        let var = preds.iter().map(|p| (p - m).powi(2)).sum::<f64>() / n;
        (m, var.sqrt())
    }

    /// Mean and standard deviation across trees, in target units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, s) = self.predict_standardized(x);
        (self.mean + self.scale * m, self.scale * s)
    }
}

/// Expected improvement over `best` for maximization.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    let d = mean - best;
    if std <= 0.0 {
        return d.max(0.0);
    }
    let z = d / std;
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = 0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2));
    d * cdf + std * pdf
}
