//! Base point-prediction regressors: a native least-squares gradient-boosted
//! tree ensemble and a k-nearest-neighbor fallback, behind one interface.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform interface over fitted point-prediction models.
pub trait Regressor {
    fn predict(&self, x: &[f64]) -> Result<f64>;

    fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams { n_trees: 300, max_depth: 3, learning_rate: 0.1, min_leaf: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeNode {
    feature: usize,
    threshold: f64,
    /// Children indices into the node arena; `None` marks a leaf.
    left: Option<usize>,
    right: Option<usize>,
    value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match (node.left, node.right) {
                (Some(l), Some(r)) => {
                    i = if x[node.feature] <= node.threshold { l } else { r };
                }
                _ => return node.value,
            }
        }
    }
}

struct TreeBuilder<'a> {
    features: &'a [Vec<f64>],
    targets: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

struct Split {
    feature: usize,
    threshold: f64,
    left_rows: Vec<usize>,
    right_rows: Vec<usize>,
}

impl<'a> TreeBuilder<'a> {
    /// Exact greedy variance-reduction split over every feature and every
    /// midpoint between adjacent distinct values.
    fn best_split(&self, rows: &[usize]) -> Option<Split> {
        let d = self.features[0].len();
        let total_sum: f64 = rows.iter().map(|&i| self.targets[i]).sum();
        let n = rows.len() as f64;
        let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)

        for j in 0..d {
            let mut order: Vec<usize> = rows.to_vec();
            order.sort_by(|&a, &b| {
                self.features[a][j]
                    .partial_cmp(&self.features[b][j])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut left_sum = 0.0;
            for (pos, &i) in order.iter().enumerate().take(order.len() - 1) {
                left_sum += self.targets[i];
                let nl = (pos + 1) as f64;
                let v_here = self.features[i][j];
                let v_next = self.features[order[pos + 1]][j];
                if v_here == v_next {
                    continue;
                }
                if (pos + 1) < self.min_leaf || (rows.len() - pos - 1) < self.min_leaf {
                    continue;
                }
                let nr = n - nl;
                let right_sum = total_sum - left_sum;
                // Maximizing sum-of-squares gain == minimizing SSE.
                let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                let better = match best {
                    None => true,
                    Some((s, _, _)) => score > s + 1e-12,
                };
                if better {
                    best = Some((score, j, 0.5 * (v_here + v_next)));
                }
            }
        }

        best.map(|(_, feature, threshold)| {
            let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
            for &i in rows {
                if self.features[i][feature] <= threshold {
                    left_rows.push(i);
                } else {
                    right_rows.push(i);
                }
            }
            Split { feature, threshold, left_rows, right_rows }
        })
    }

    fn build(&mut self, rows: &[usize], depth: usize) -> usize {
        let mean = rows.iter().map(|&i| self.targets[i]).sum::<f64>() / rows.len() as f64;
        let id = self.nodes.len();
        self.nodes.push(TreeNode { feature: 0, threshold: 0.0, left: None, right: None, value: mean });
        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf {
            return id;
        }
        if let Some(split) = self.best_split(rows) {
            let left = self.build(&split.left_rows, depth + 1);
            let right = self.build(&split.right_rows, depth + 1);
            self.nodes[id].feature = split.feature;
            self.nodes[id].threshold = split.threshold;
            self.nodes[id].left = Some(left);
            self.nodes[id].right = Some(right);
        }
        id
    }
}

/// Least-squares gradient-boosted trees: stage 0 is the target mean, each
/// stage fits a depth-limited tree to the current residuals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtModel {
    pub params: GbtParams,
    base_score: f64,
    trees: Vec<Tree>,
}

pub fn gbt_fit(features: &[Vec<f64>], targets: &[f64], params: &GbtParams) -> Result<GbtModel> {
    let n = features.len();
    if n < 2 * params.min_leaf.max(1) {
        return Err(Error::TooFewRows { needed: 2 * params.min_leaf.max(1), got: n });
    }
    debug_assert_eq!(n, targets.len());
    let base_score = targets.iter().sum::<f64>() / n as f64;
    let mut residuals: Vec<f64> = targets.iter().map(|y| y - base_score).collect();
    let rows: Vec<usize> = (0..n).collect();
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let mut builder = TreeBuilder {
            features,
            targets: &residuals,
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            nodes: Vec::new(),
        };
        builder.build(&rows, 0);
        let tree = Tree { nodes: builder.nodes };
        for (i, r) in residuals.iter_mut().enumerate() {
            *r -= params.learning_rate * tree.predict(&features[i]);
        }
        trees.push(tree);
    }
    Ok(GbtModel { params: params.clone(), base_score, trees })
}

impl Regressor for GbtModel {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        let mut y = self.base_score;
        for tree in &self.trees {
            y += self.params.learning_rate * tree.predict(x);
        }
        Ok(y)
    }
}

/// k-nearest-neighbor mean regressor; ties broken by lower row index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnModel {
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
    k: usize,
}

pub fn knn_fit(features: &[Vec<f64>], targets: &[f64], k: usize) -> Result<KnnModel> {
    if k == 0 || k > features.len() {
        return Err(Error::KTooLarge { k, n: features.len() });
    }
    Ok(KnnModel { features: features.to_vec(), targets: targets.to_vec(), k })
}

impl Regressor for KnnModel {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        let d = self.features[0].len();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        let mut dists: Vec<(f64, usize)> = self
            .features
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let dist: f64 = row.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
                (dist, i)
            })
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let sum: f64 = dists[..self.k].iter().map(|&(_, i)| self.targets[i]).sum();
        Ok(sum / self.k as f64)
    }
}

/// Serializable closed set of supported regressors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Gbt(GbtModel),
    Knn(KnnModel),
}

impl Regressor for Model {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            Model::Gbt(m) => m.predict(x),
            Model::Knn(m) => m.predict(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gbt_constant_targets() {
        let xs = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let ys = vec![4.0; 4];
        let params = GbtParams { min_leaf: 1, n_trees: 10, ..GbtParams::default() };
        let m = gbt_fit(&xs, &ys, &params).unwrap();
        assert_eq!(m.predict(&[1.5]).unwrap(), 4.0);
        assert_eq!(m.predict(&[100.0]).unwrap(), 4.0);
    }

    #[test]
    fn gbt_step_function() {
        let xs = vec![vec![0.0], vec![0.1], vec![0.9], vec![1.0]];
        let ys = vec![0.0, 0.0, 1.0, 1.0];
        let params =
            GbtParams { n_trees: 50, max_depth: 1, learning_rate: 0.3, min_leaf: 1, seed: 0 };
        let m = gbt_fit(&xs, &ys, &params).unwrap();
        let lo = m.predict(&[0.05]).unwrap();
        let hi = m.predict(&[0.95]).unwrap();
        assert!((-0.05..=0.05).contains(&lo), "predict(0.05) = {lo}");
        assert!((0.95..=1.05).contains(&hi), "predict(0.95) = {hi}");
    }

    #[test]
    fn gbt_training_mse_non_increasing() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 40.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x[0] * 7.0).sin() + 0.2 * x[0]).collect();
        let params =
            GbtParams { n_trees: 30, max_depth: 2, learning_rate: 0.2, min_leaf: 2, seed: 0 };
        // Refit with increasing tree counts; training MSE must not increase.
        let mut prev = f64::INFINITY;
        for t in [1, 5, 10, 20, 30] {
            let m = gbt_fit(&xs, &ys, &GbtParams { n_trees: t, ..params.clone() }).unwrap();
            let mse: f64 = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (m.predict(x).unwrap() - y).powi(2))
                .sum::<f64>()
                / ys.len() as f64;
            assert!(mse <= prev + 1e-12, "MSE increased: {prev} -> {mse}");
            prev = mse;
        }
    }

    #[test]
    fn gbt_too_few_rows() {
        let xs = vec![vec![0.0], vec![1.0]];
        let ys = vec![0.0, 1.0];
        assert!(matches!(
            gbt_fit(&xs, &ys, &GbtParams::default()),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn gbt_deterministic() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let ys: Vec<f64> = (0..30).map(|i| (i as f64).sqrt()).collect();
        let params = GbtParams { n_trees: 20, min_leaf: 2, ..GbtParams::default() };
        let a = gbt_fit(&xs, &ys, &params).unwrap();
        let b = gbt_fit(&xs, &ys, &params).unwrap();
        for x in &xs {
            assert_eq!(a.predict(x).unwrap(), b.predict(x).unwrap());
        }
    }

    /// Brute-force single-stump oracle: try every (feature, midpoint) split,
    /// minimize SSE directly, honor min_leaf. Independent of TreeBuilder.
    fn brute_force_stump(xs: &[Vec<f64>], ys: &[f64], min_leaf: usize) -> Box<dyn Fn(&[f64]) -> f64> {
        let n = xs.len();
        let d = xs[0].len();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let mut best: Option<(f64, usize, f64, f64, f64)> = None; // (sse, j, thr, lmean, rmean)
        for j in 0..d {
            let mut vals: Vec<f64> = xs.iter().map(|x| x[j]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                let thr = 0.5 * (w[0] + w[1]);
                let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
                for (x, y) in xs.iter().zip(ys) {
                    if x[j] <= thr {
                        ls += y;
                        ln += 1;
                    } else {
                        rs += y;
                        rn += 1;
                    }
                }
                if ln < min_leaf || rn < min_leaf {
                    continue;
                }
                let (lm, rm) = (ls / ln as f64, rs / rn as f64);
                let sse: f64 = xs
                    .iter()
                    .zip(ys)
                    .map(|(x, y)| {
                        let p = if x[j] <= thr { lm } else { rm };
                        (y - p).powi(2)
                    })
                    .sum();
                if best.is_none() || sse < best.unwrap().0 - 1e-12 {
                    best = Some((sse, j, thr, lm, rm));
                }
            }
        }
        match best {
            Some((_, j, thr, lm, rm)) => {
                Box::new(move |x: &[f64]| if x[j] <= thr { lm } else { rm })
            }
            None => Box::new(move |_| mean),
        }
    }

    #[test]
    fn gbt_single_stump_matches_brute_force() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let n = 10 + (trial % 5) * 8; // up to 42 <= 50
            let xs: Vec<Vec<f64>> =
                (0..n).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let params =
                GbtParams { n_trees: 1, max_depth: 1, learning_rate: 1.0, min_leaf: 1, seed: 0 };
            let m = gbt_fit(&xs, &ys, &params).unwrap();
            let mean = ys.iter().sum::<f64>() / n as f64;
            let centered: Vec<f64> = ys.iter().map(|y| y - mean).collect();
            let oracle = brute_force_stump(&xs, &centered, 1);
            for x in &xs {
                let expected = mean + oracle(x);
                let got = m.predict(x).unwrap();
                assert!(
                    (expected - got).abs() < 1e-9,
                    "trial {trial}: oracle {expected} vs gbt {got}"
                );
            }
        }
    }

    #[test]
    fn knn_examples() {
        let xs = vec![vec![0.0], vec![10.0]];
        let ys = vec![1.0, 2.0];
        let m1 = knn_fit(&xs, &ys, 1).unwrap();
        assert_eq!(m1.predict(&[1.0]).unwrap(), 1.0);
        let m2 = knn_fit(&xs, &ys, 2).unwrap();
        assert_eq!(m2.predict(&[5.0]).unwrap(), 1.5);
        assert_eq!(m2.predict(&[-100.0]).unwrap(), 1.5);
        assert!(matches!(knn_fit(&xs, &ys, 3), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn model_json_round_trip_bit_exact() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64).cos(), i as f64]).collect();
        let ys: Vec<f64> = (0..30).map(|i| (i as f64) * 0.37 - 2.0).collect();
        let params = GbtParams { n_trees: 15, min_leaf: 2, ..GbtParams::default() };
        let m = Model::Gbt(gbt_fit(&xs, &ys, &params).unwrap());
        let json = serde_json::to_string(&m).unwrap();
        let back: Model = serde_json::from_str(&json).unwrap();
        for x in &xs {
            assert_eq!(m.predict(x).unwrap().to_bits(), back.predict(x).unwrap().to_bits());
        }
        assert_eq!(json, serde_json::to_string(&back).unwrap());
    }
}
