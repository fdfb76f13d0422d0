use rand::Rng;
use rand_distr::StandardNormal;

use crate::kernels::{max_abs, min_eigenvalue, path_rng, symmetrize, Mat};

use super::TreeError;

/// Largest depth accepted by the backward recursion.
pub const MAX_DEPTH: usize = 20;

const PSD_TOL: f64 = 1e-12;

/// Coefficients at one node; `a` already includes `A1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeCoefficients {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub q: Mat,
    pub r: Mat,
}

impl TreeCoefficients {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            a: Mat::zeros(n, n),
            b: Mat::zeros(n, m),
            c: Mat::zeros(n, n),
            d: Mat::zeros(n, m),
            q: Mat::zeros(n, n),
            r: Mat::zeros(m, m),
        }
    }
}

/// Dynamics `x_{k+1} = (A + C w_k) x_k + (B + D w_k) u_k` with cost
/// `½ E[Σ_k (x'Qx + u'Ru) + x_N' G x_N]`, coefficients adapted to the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub n: usize,
    pub m: usize,
    pub depth: usize,
    /// `nodes[k][h]` for `k < depth`, `h < 2^k`.
    pub nodes: Vec<Vec<TreeCoefficients>>,
    /// Terminal weight per leaf history `h < 2^depth`.
    pub terminal: Vec<Mat>,
}

impl TreeModel {
    /// Builds a model from node and leaf generators, then validates it.
    pub fn from_fn<F, G>(
        n: usize,
        m: usize,
        depth: usize,
        node: F,
        leaf: G,
    ) -> Result<Self, TreeError>
    where
        F: Fn(usize, usize) -> TreeCoefficients,
        G: Fn(usize) -> Mat,
    {
        if depth == 0 || depth > MAX_DEPTH {
            return Err(TreeError::InvalidModel(format!(
                "depth must lie in 1..={MAX_DEPTH}, got {depth}"
            )));
        }
        let nodes = (0..depth)
            .map(|k| (0..1usize << k).map(|h| node(k, h)).collect())
            .collect();
        let terminal = (0..1usize << depth).map(leaf).collect();
        let model = Self {
            n,
            m,
            depth,
            nodes,
            terminal,
        };
        model.validate()?;
        Ok(model)
    }

    /// Same coefficients at every node and a deterministic terminal weight.
    pub fn deterministic(depth: usize, coeffs: TreeCoefficients, g: Mat) -> Result<Self, TreeError> {
        let (n, m) = coeffs.b.shape();
        Self::from_fn(n, m, depth, |_, _| coeffs.clone(), |_| g.clone())
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        let (n, m) = (self.n, self.m);
        if self.depth == 0 || self.depth > MAX_DEPTH {
            return Err(TreeError::InvalidModel(format!("depth {}", self.depth)));
        }
        if self.nodes.len() != self.depth
            || self.terminal.len() != 1 << self.depth
            || self.nodes.iter().enumerate().any(|(k, v)| v.len() != 1 << k)
        {
            return Err(TreeError::InvalidModel("node layout does not match depth".into()));
        }
        for (k, level) in self.nodes.iter().enumerate() {
            for (h, c) in level.iter().enumerate() {
                let shapes = [
                    (c.a.shape(), (n, n)),
                    (c.b.shape(), (n, m)),
                    (c.c.shape(), (n, n)),
                    (c.d.shape(), (n, m)),
                    (c.q.shape(), (n, n)),
                    (c.r.shape(), (m, m)),
                ];
                if shapes.iter().any(|(got, want)| got != want) {
                    return Err(TreeError::InvalidModel(format!(
                        "coefficient shapes at time {k}, node {h}"
                    )));
                }
                check_psd(&c.q, "Q", k, h)?;
                check_psd(&c.r, "R", k, h)?;
                for mat in [&c.a, &c.b, &c.c, &c.d] {
                    if mat.iter().any(|v| !v.is_finite()) {
                        return Err(TreeError::InvalidModel(format!(
                            "non-finite coefficient at time {k}, node {h}"
                        )));
                    }
                }
            }
        }
        for (h, g) in self.terminal.iter().enumerate() {
            if g.shape() != (n, n) {
                return Err(TreeError::InvalidModel(format!("G shape at leaf {h}")));
            }
            check_psd(g, "G", self.depth, h)?;
        }
        Ok(())
    }

    pub fn node(&self, k: usize, h: usize) -> &TreeCoefficients {
        &self.nodes[k][h]
    }

    /// Total number of control coordinates over all non-terminal nodes.
    pub fn control_dim(&self) -> usize {
        self.m * ((1usize << self.depth) - 1)
    }
}

fn check_psd(m: &Mat, name: &str, k: usize, h: usize) -> Result<(), TreeError> {
    let scale = max_abs(m).max(1.0);
    let finite = m.iter().all(|v| v.is_finite());
    if !finite
        || max_abs(&(m - m.transpose())) > PSD_TOL * scale
        || (m.nrows() > 0 && min_eigenvalue(m) < -PSD_TOL * scale)
    {
        return Err(TreeError::InvalidModel(format!(
            "{name} at time {k}, node {h} is not symmetric PSD"
        )));
    }
    Ok(())
}

/// Knobs for [`random_tree_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomTreeOptions {
    /// Draw coefficients independently at each node rather than per time.
    pub adapted: bool,
    /// Add `I` to every `R` (otherwise `R` may be singular).
    pub r_floor: f64,
}

impl Default for RandomTreeOptions {
    fn default() -> Self {
        Self {
            adapted: true,
            r_floor: 0.5,
        }
    }
}

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn gram(rng: &mut impl Rng, n: usize, scale: f64) -> Mat {
    let f = gaussian(rng, n, n, 1.0);
    symmetrize(&(&f * f.transpose() * (scale / n.max(1) as f64)))
}

/// Seeded random tree model with PSD weights and node-dependent coefficients.
pub fn random_tree_model(
    n: usize,
    m: usize,
    depth: usize,
    seed: u64,
    opts: RandomTreeOptions,
) -> Result<TreeModel, TreeError> {
    let draw = |stream: usize| {
        let mut rng = path_rng(seed, stream);
        TreeCoefficients {
            a: gaussian(&mut rng, n, n, 0.6),
            b: gaussian(&mut rng, n, m, 0.6),
            c: gaussian(&mut rng, n, n, 0.3),
            d: gaussian(&mut rng, n, m, 0.3),
            q: gram(&mut rng, n, 1.0),
            r: Mat::identity(m, m) * opts.r_floor + gram(&mut rng, m, 0.5),
        }
    };
    let leaf_stream = 1usize << 30;
    TreeModel::from_fn(
        n,
        m,
        depth,
        |k, h| {
            if opts.adapted {
                draw((1 << k) + h)
            } else {
                draw(k + 1)
            }
        },
        |h| {
            let mut rng = path_rng(seed, leaf_stream + if opts.adapted { h } else { 0 });
            gram(&mut rng, n, 1.0)
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_depth() {
        let model = random_tree_model(2, 1, 4, 3, RandomTreeOptions::default()).unwrap();
        assert_eq!(model.nodes.len(), 4);
        assert_eq!(model.nodes[3].len(), 8);
        assert_eq!(model.terminal.len(), 16);
        assert_eq!(model.control_dim(), 15);
    }

    #[test]
    fn depth_limits_enforced() {
        let c = TreeCoefficients::zeros(1, 1);
        assert!(TreeModel::deterministic(0, c.clone(), Mat::zeros(1, 1)).is_err());
        assert!(TreeModel::deterministic(MAX_DEPTH + 1, c, Mat::zeros(1, 1)).is_err());
    }

    #[test]
    fn indefinite_weight_rejected() {
        let mut c = TreeCoefficients::zeros(1, 1);
        c.q[(0, 0)] = -1.0;
        assert!(matches!(
            TreeModel::deterministic(1, c, Mat::zeros(1, 1)),
            Err(TreeError::InvalidModel(_))
        ));
    }
}
