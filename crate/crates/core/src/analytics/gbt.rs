use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{AnalyticsError, DesignMatrix};

/// Splits must beat this fraction of the node's residual sum of squares.
const GAIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            rounds: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf: 5,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(AnalyticsError::InvalidParams(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if self.max_depth == 0 || self.min_leaf == 0 {
            return Err(AnalyticsError::InvalidParams("max_depth and min_leaf must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf { value: f64 },
    /// Rows with `x[feature] < threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn uses_feature(&self, f: usize) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::Split { feature, .. } if *feature == f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub feature_names: Vec<String>,
    pub initial_prediction: f64,
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    /// Training MSE after round 0 (the mean) and after each kept tree.
    pub train_mse: Vec<f64>,
}

impl GbtModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut f = self.initial_prediction;
        for t in &self.trees {
            f += self.learning_rate * t.predict(row);
        }
        f
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|c| c == name)
    }

    pub fn uses_feature(&self, f: usize) -> bool {
        self.trees.iter().any(|t| t.uses_feature(f))
    }
}

struct Ctx<'a> {
    /// Column-major features in canonical row order.
    cols: &'a [Vec<f64>],
    /// Per feature, row indices sorted by value.
    sorted: &'a [Vec<usize>],
    resid: &'a [f64],
    params: &'a GbtParams,
}

fn cmp_rows(a: &[f64], ya: f64, b: &[f64], yb: f64) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then_with(|| ya.total_cmp(&yb))
}

/// Squared-error gradient boosting with exact greedy splits.
pub fn gbt_fit(x: &DesignMatrix, y: &[f64], params: &GbtParams) -> Result<GbtModel, AnalyticsError> {
    params.validate()?;
    let (n, p) = (x.n_rows(), x.n_cols());
    if y.len() != n {
        return Err(AnalyticsError::DimensionMismatch(format!("{} targets for {n} rows", y.len())));
    }
    if n < 2 * params.min_leaf {
        return Err(AnalyticsError::InsufficientData(format!(
            "{n} rows, need at least {}",
            2 * params.min_leaf
        )));
    }
    if y.iter().any(|v| !v.is_finite()) || (0..n).any(|r| x.row(r).iter().any(|v| !v.is_finite())) {
        return Err(AnalyticsError::InvalidParams("non-finite value in training data".into()));
    }

    // A canonical row order makes every floating-point sum, and hence the
    // model, independent of the caller's row order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp_rows(x.row(a), y[a], x.row(b), y[b]));
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let cols: Vec<Vec<f64>> = (0..p).map(|c| order.iter().map(|&i| x.get(i, c)).collect()).collect();
    let sorted: Vec<Vec<usize>> = cols
        .iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let initial = ys.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![initial; n];
    let mse = |f: &[f64]| ys.iter().zip(f).map(|(y, f)| (y - f).powi(2)).sum::<f64>() / n as f64;
    let mut train_mse = vec![mse(&fitted)];
    let mut trees = Vec::new();
    let all: Vec<usize> = (0..n).collect();

    for _ in 0..params.rounds {
        let resid: Vec<f64> = ys.iter().zip(&fitted).map(|(y, f)| y - f).collect();
        let ctx = Ctx {
            cols: &cols,
            sorted: &sorted,
            resid: &resid,
            params,
        };
        let mut nodes = Vec::new();
        grow(&ctx, &mut nodes, &all, 0);
        if nodes.len() == 1 {
            break;
        }
        let tree = Tree { nodes };
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let row: Vec<f64> = cols.iter().map(|c| c[i]).collect();
                fitted[i] + params.learning_rate * tree.predict(&row)
            })
            .collect();
        let next_mse = mse(&next);
        if next_mse > *train_mse.last().expect("non-empty") {
            break;
        }
        fitted = next;
        train_mse.push(next_mse);
        trees.push(tree);
    }

    Ok(GbtModel {
        feature_names: x.columns().to_vec(),
        initial_prediction: initial,
        trees,
        learning_rate: params.learning_rate,
        train_mse,
    })
}

fn grow(ctx: &Ctx, nodes: &mut Vec<Node>, rows: &[usize], depth: usize) -> usize {
    let id = nodes.len();
    let mean = rows.iter().map(|&i| ctx.resid[i]).sum::<f64>() / rows.len() as f64;
    nodes.push(Node::Leaf { value: mean });
    if depth >= ctx.params.max_depth || rows.len() < 2 * ctx.params.min_leaf {
        return id;
    }
    let Some((feature, threshold)) = best_split(ctx, rows) else {
        return id;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| ctx.cols[feature][i] < threshold);
    let left = grow(ctx, nodes, &l, depth + 1);
    let right = grow(ctx, nodes, &r, depth + 1);
    nodes[id] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    id
}

fn best_split(ctx: &Ctx, rows: &[usize]) -> Option<(usize, f64)> {
    let n_total = ctx.resid.len();
    let mut in_node = vec![false; n_total];
    for &i in rows {
        in_node[i] = true;
    }
    let n = rows.len();
    let total: f64 = rows.iter().map(|&i| ctx.resid[i]).sum();
    let sumsq: f64 = rows.iter().map(|&i| ctx.resid[i].powi(2)).sum();
    let parent = total * total / n as f64;
    let min_leaf = ctx.params.min_leaf;
    let mut best: Option<(f64, usize, f64)> = None;
    for (f, sorted) in ctx.sorted.iter().enumerate() {
        let col = &ctx.cols[f];
        let ord: Vec<usize> = sorted.iter().copied().filter(|&i| in_node[i]).collect();
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += ctx.resid[ord[k]];
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_leaf {
                continue;
            }
            if nr < min_leaf {
                break;
            }
            let (v, next) = (col[ord[k]], col[ord[k + 1]]);
            if v == next {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - parent;
            if gain > GAIN_TOL * sumsq && best.is_none_or(|(g, _, _)| gain > g) {
                let mut thr = v + (next - v) / 2.0;
                if thr <= v {
                    thr = next;
                }
                best = Some((gain, f, thr));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}
