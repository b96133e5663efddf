use crate::encoder::{argmax, ParamStore};
use crate::error::{Error, Result};

use super::linalg::solve_damped;
use super::model::LossModel;

/// Probability change `−log p(y|E′) + log p(y|E)`, with `y` the prediction on `E`.
pub fn pc<M: LossModel>(model: &M, params: &ParamStore, e: &M::Input, e_prime: &M::Input) -> Result<f64> {
    let y = argmax(&model.log_probs(params, e)?);
    pc_at(model, params, e, e_prime, y)
}

/// [`pc`] at an explicit class `y`.
pub fn pc_at<M: LossModel>(model: &M, params: &ParamStore, e: &M::Input, e_prime: &M::Input, y: usize) -> Result<f64> {
    let lp = model.log_probs(params, e)?;
    let lp_prime = model.log_probs(params, e_prime)?;
    if y >= lp.len() {
        return Err(Error::OutOfRange(format!("class {y}")));
    }
    Ok(lp[y] - lp_prime[y])
}

/// `Σ_i g′_i · (g_i − g′_i)` over per-checkpoint gradient pairs `(g_i, g′_i)`.
pub fn tracin_from_grads(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut total = 0.0;
    for (g, gp) in pairs {
        if g.len() != gp.len() {
            return Err(Error::shape("tracin", "gradient lengths differ"));
        }
        total += gp.iter().zip(g).map(|(a, b)| a * (b - a)).sum::<f64>();
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("tracin"));
    }
    Ok(total)
}

/// Scores perturbations of one original input against a checkpoint trace,
/// caching the original's gradients.
pub struct TracInScorer<'a, M: LossModel> {
    model: &'a M,
    checkpoints: Vec<&'a ParamStore>,
    base: Vec<Vec<f64>>,
    label: usize,
}

impl<'a, M: LossModel> TracInScorer<'a, M> {
    pub fn new(model: &'a M, checkpoints: Vec<&'a ParamStore>, e: &M::Input, label: usize) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::Empty("checkpoint trace"));
        }
        for c in &checkpoints {
            model.check_params(c)?;
        }
        let base = checkpoints
            .iter()
            .map(|p| model.loss_grad(p, e, label).map(|(_, g)| g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model, checkpoints, base, label })
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn score(&self, e_prime: &M::Input) -> Result<f64> {
        let mut total = 0.0;
        for (p, g) in self.checkpoints.iter().zip(&self.base) {
            let (_, gp) = self.model.loss_grad(p, e_prime, self.label)?;
            total += gp.iter().zip(g).map(|(a, b)| a * (b - a)).sum::<f64>();
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("tracin"));
        }
        Ok(total)
    }
}

/// TracIn+ of `e_prime` relative to `e` at class `y`.
pub fn tracin_plus<M: LossModel>(
    model: &M,
    checkpoints: Vec<&ParamStore>,
    e: &M::Input,
    e_prime: &M::Input,
    y: usize,
) -> Result<f64> {
    TracInScorer::new(model, checkpoints, e, y)?.score(e_prime)
}

/// Average Hessian of the training loss over the tracked parameters, by
/// central differences of analytic gradients, symmetrized. Row-major.
pub fn average_hessian<M: LossModel>(
    model: &M,
    params: &ParamStore,
    training: &[(&M::Input, usize)],
    step: f64,
) -> Result<Vec<f64>> {
    if training.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let names = model.tracked(params);
    let theta = params.flatten(&names)?;
    let n = theta.len();
    let mean_grad = |p: &ParamStore| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; n];
        for (x, y) in training {
            let (_, g) = model.loss_grad(p, x, *y)?;
            acc.iter_mut().zip(g).for_each(|(a, v)| *a += v);
        }
        Ok(acc.into_iter().map(|v| v / training.len() as f64).collect())
    };
    let mut h = vec![0.0; n * n];
    let mut work = params.clone();
    for j in 0..n {
        let mut t = theta.clone();
        t[j] = theta[j] + step;
        work.assign(&names, &t)?;
        let plus = mean_grad(&work)?;
        t[j] = theta[j] - step;
        work.assign(&names, &t)?;
        let minus = mean_grad(&work)?;
        for i in 0..n {
            h[i * n + j] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (h[i * n + j] + h[j * n + i]);
            h[i * n + j] = s;
            h[j * n + i] = s;
        }
    }
    Ok(h)
}

/// `(H + λI)⁻¹ (∇L(E) − ∇L(E′))` with `H` the average training Hessian.
pub fn exact_influence<M: LossModel>(
    model: &M,
    params: &ParamStore,
    e: &M::Input,
    e_prime: &M::Input,
    y: usize,
    training: &[(&M::Input, usize)],
    damping: f64,
) -> Result<Vec<f64>> {
    let (_, g) = model.loss_grad(params, e, y)?;
    let (_, gp) = model.loss_grad(params, e_prime, y)?;
    let diff: Vec<f64> = g.iter().zip(&gp).map(|(a, b)| a - b).collect();
    let h = average_hessian(model, params, training, 1e-5)?;
    let (x, residual) = solve_damped(&h, &diff, damping)?;
    let scale = diff.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    if residual > 1e-8 * scale {
        return Err(Error::Singular(format!("residual {residual:e} after damping")));
    }
    Ok(x)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("spearman needs two equal-length series of at least 2"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        va += (x - mean).powi(2);
        vb += (y - mean).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::invalid("spearman of a constant series"));
    }
    Ok(num / (va * vb).sqrt())
}
