//! CART decision trees (Gini or variance splits) and bagged forests.

use rand::seq::index;
use rand::Rng;

use super::design::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum Target<'a> {
    Classes { labels: &'a [usize], n_classes: usize },
    Values(&'a [f64]),
}

impl Target<'_> {
    fn len(&self) -> usize {
        match self {
            Target::Classes { labels, .. } => labels.len(),
            Target::Values(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeOptions {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; all when `None`.
    pub max_features: Option<usize>,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions { max_depth: 12, min_samples_split: 2, min_samples_leaf: 1, max_features: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    /// Class distribution, or a single mean for regression.
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

struct Builder<'a, R> {
    x: &'a Matrix,
    y: &'a Target<'a>,
    opts: TreeOptions,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

struct Best {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn leaf(&self, idx: &[usize]) -> Vec<f64> {
        match self.y {
            Target::Classes { labels, n_classes } => {
                let mut dist = vec![0.0; *n_classes];
                for &i in idx {
                    dist[labels[i]] += 1.0;
                }
                let n = idx.len() as f64;
                dist.iter_mut().for_each(|d| *d /= n);
                dist
            }
            Target::Values(v) => vec![idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64],
        }
    }

    fn pure(&self, idx: &[usize]) -> bool {
        match self.y {
            Target::Classes { labels, .. } => idx.iter().all(|&i| labels[i] == labels[idx[0]]),
            Target::Values(v) => idx.iter().all(|&i| v[i] == v[idx[0]]),
        }
    }

    /// Best split of `idx` on `f`. The score is the quantity a split maximises:
    /// `Σ count² / n` per side for Gini, `sum² / n` per side for variance.
    fn best_on(&self, f: usize, idx: &mut [usize], best: &mut Option<Best>) {
        let x = self.x;
        idx.sort_unstable_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
        let n = idx.len();
        let leaf = self.opts.min_samples_leaf.max(1);
        let mut consider = |pos: usize, score: f64| {
            // split between idx[pos - 1] and idx[pos]
            let (a, b) = (x.get(idx[pos - 1], f), x.get(idx[pos], f));
            if a == b || pos < leaf || n - pos < leaf {
                return;
            }
            if best.as_ref().is_none_or(|bs| score > bs.score + 1e-12) {
                let mut threshold = 0.5 * (a + b);
                if threshold >= b {
                    threshold = a;
                }
                *best = Some(Best { feature: f, threshold, score });
            }
        };
        match self.y {
            Target::Classes { labels, n_classes } => {
                let mut left = vec![0.0f64; *n_classes];
                let mut right = vec![0.0f64; *n_classes];
                for &i in idx.iter() {
                    right[labels[i]] += 1.0;
                }
                let (mut sq_l, mut sq_r) = (0.0, right.iter().map(|c| c * c).sum::<f64>());
                for pos in 1..n {
                    let c = labels[idx[pos - 1]];
                    sq_l += 2.0 * left[c] + 1.0;
                    sq_r -= 2.0 * right[c] - 1.0;
                    left[c] += 1.0;
                    right[c] -= 1.0;
                    consider(pos, sq_l / pos as f64 + sq_r / (n - pos) as f64);
                }
            }
            Target::Values(v) => {
                let total: f64 = idx.iter().map(|&i| v[i]).sum();
                let mut s_l = 0.0;
                for pos in 1..n {
                    s_l += v[idx[pos - 1]];
                    let s_r = total - s_l;
                    consider(pos, s_l * s_l / pos as f64 + s_r * s_r / (n - pos) as f64);
                }
            }
        }
    }

    fn build(&mut self, mut idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(Vec::new()));
        if depth >= self.opts.max_depth || idx.len() < self.opts.min_samples_split.max(2) || self.pure(&idx) {
            self.nodes[id] = Node::Leaf(self.leaf(&idx));
            return id;
        }
        let p = self.x.cols;
        let k = self.opts.max_features.unwrap_or(p).clamp(1, p);
        let features: Vec<usize> = if k < p { index::sample(self.rng, p, k).into_vec() } else { (0..p).collect() };
        let mut best = None;
        for f in features {
            self.best_on(f, &mut idx, &mut best);
        }
        match best {
            None => {
                self.nodes[id] = Node::Leaf(self.leaf(&idx));
            }
            Some(b) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.into_iter().partition(|&i| self.x.get(i, b.feature) <= b.threshold);
                let left = self.build(l, depth + 1);
                let right = self.build(r, depth + 1);
                self.nodes[id] = Node::Split { feature: b.feature, threshold: b.threshold, left, right };
            }
        }
        id
    }
}

impl Tree {
    /// Fits on the rows listed in `idx` (repeats allowed, as in a bootstrap).
    pub fn fit_on<R: Rng>(x: &Matrix, y: &Target, idx: Vec<usize>, opts: TreeOptions, rng: &mut R) -> Tree {
        assert_eq!(x.rows, y.len());
        assert!(!idx.is_empty(), "cannot fit a tree on no rows");
        let mut b = Builder { x, y, opts, rng, nodes: Vec::new() };
        b.build(idx, 0);
        Tree { nodes: b.nodes }
    }

    pub fn fit<R: Rng>(x: &Matrix, y: &Target, opts: TreeOptions, rng: &mut R) -> Tree {
        Tree::fit_on(x, y, (0..x.rows).collect(), opts, rng)
    }

    /// Leaf payload for one input: class distribution or `[mean]`.
    pub fn predict_row(&self, row: &[f64]) -> &[f64] {
        let mut n = 0;
        loop {
            match &self.nodes[n] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    n = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], n: usize) -> usize {
            match &nodes[n] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Bagged trees, each on a bootstrap resample. `opts.max_features` defaults
    /// to √p for classification and p/3 for regression.
    pub fn fit<R: Rng>(x: &Matrix, y: &Target, n_trees: usize, opts: TreeOptions, rng: &mut R) -> Forest {
        let p = x.cols.max(1);
        let max_features = opts.max_features.or(Some(match y {
            Target::Classes { .. } => (p as f64).sqrt().round() as usize,
            Target::Values(_) => p / 3,
        }));
        let opts = TreeOptions { max_features: max_features.map(|k| k.max(1)), ..opts };
        let trees = (0..n_trees)
            .map(|_| {
                let idx: Vec<usize> = (0..x.rows).map(|_| rng.gen_range(0..x.rows)).collect();
                Tree::fit_on(x, y, idx, opts, rng)
            })
            .collect();
        Forest { trees }
    }

    /// Mean leaf payload over the first `n_trees` trees.
    pub fn predict_row_with(&self, row: &[f64], n_trees: usize) -> Vec<f64> {
        let used = &self.trees[..n_trees.min(self.trees.len())];
        let mut out = vec![0.0; used[0].predict_row(row).len()];
        for t in used {
            for (o, v) in out.iter_mut().zip(t.predict_row(row)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= used.len() as f64);
        out
    }

    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        self.predict_row_with(row, self.trees.len())
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn xor_is_learned_exactly_at_depth_two() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        let labels = [0, 1, 1, 0];
        let y = Target::Classes { labels: &labels, n_classes: 2 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let tree = Tree::fit(&x, &y, TreeOptions { max_depth: 2, ..TreeOptions::default() }, &mut rng);
        for (i, &label) in labels.iter().enumerate() {
            assert_eq!(argmax(tree.predict_row(x.row(i))), label);
        }
        let stump = Tree::fit(&x, &y, TreeOptions { max_depth: 1, ..TreeOptions::default() }, &mut rng);
        assert!((0..4).any(|i| argmax(stump.predict_row(x.row(i))) != labels[i]));
    }

    #[test]
    fn regression_tree_fits_steps() {
        let x = Matrix::from_rows(&(0..20).map(|i| vec![i as f64]).collect::<Vec<_>>());
        let v: Vec<f64> = (0..20).map(|i| if i < 10 { 1.0 } else { 5.0 }).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let tree = Tree::fit(&x, &Target::Values(&v), TreeOptions::default(), &mut rng);
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.predict_row(&[3.0]), [1.0]);
        assert_eq!(tree.predict_row(&[9.6]), [5.0]);
    }

    #[test]
    fn depth_is_capped() {
        let x = Matrix::from_rows(&(0..64).map(|i| vec![i as f64]).collect::<Vec<_>>());
        let labels: Vec<usize> = (0..64).map(|i| i % 2).collect();
        let y = Target::Classes { labels: &labels, n_classes: 2 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let tree = Tree::fit(&x, &y, TreeOptions { max_depth: 3, ..TreeOptions::default() }, &mut rng);
        assert!(tree.depth() <= 3);
    }
}
