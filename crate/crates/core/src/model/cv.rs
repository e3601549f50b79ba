use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::lbfgs::LbfgsOptions;
use super::logreg::{predict_proba, train_logreg};
use super::metrics::{f1_score, threshold};
use super::tfidf::CsrMatrix;
use crate::seed;
use crate::{Error, Result};

pub const DEFAULT_C_GRID: [f64; 5] = [1e-2, 1e-1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub c_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    /// Start each grid point from the previous (smaller C) solution.
    pub warm_start: bool,
    pub lbfgs: LbfgsOptions,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            c_grid: DEFAULT_C_GRID.to_vec(),
            folds: 10,
            seed: 1,
            warm_start: true,
            lbfgs: LbfgsOptions::default(),
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::invalid("C grid", "needs at least one positive finite value"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("folds", "must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// Ascending.
    pub grid: Vec<f64>,
    pub mean_f1: Vec<f64>,
    /// `fold_f1[c][fold]`.
    pub fold_f1: Vec<Vec<f64>>,
    pub folds_used: usize,
    pub chosen_c: f64,
}

/// Stratified fold assignment: each class is shuffled with the seed and dealt
/// round-robin.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut out = vec![0usize; labels.len()];
    let mut rng = seed::rng(seed::derive(seed, "folds"));
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (r, i) in idx.into_iter().enumerate() {
            out[i] = r % folds;
        }
    }
    out
}

pub fn effective_folds(labels: &[bool], folds: usize) -> Result<usize> {
    let pos = labels.iter().filter(|&&l| l).count();
    let min_class = pos.min(labels.len() - pos);
    if min_class < 2 {
        return Err(Error::Insufficient(format!(
            "cross-validation needs >= 2 rows per class, smallest class has {min_class}"
        )));
    }
    if min_class < folds {
        log::warn!("reducing folds from {folds} to {min_class} (smallest class size)");
        return Ok(min_class);
    }
    Ok(folds)
}

/// Held-out F1 for every grid value in one fold, grid ascending.
pub fn fold_scores(x: &CsrMatrix, labels: &[bool], assign: &[usize], fold: usize, grid: &[f64], cfg: &CvConfig) -> Result<Vec<f64>> {
    let train: Vec<usize> = (0..labels.len()).filter(|&i| assign[i] != fold).collect();
    let test: Vec<usize> = (0..labels.len()).filter(|&i| assign[i] == fold).collect();
    let xt = x.select_rows(&train);
    let yt: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
    let xv = x.select_rows(&test);
    let yv: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
    let mut start: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(grid.len());
    for &c in grid {
        let fit = train_logreg(&xt, &yt, c, &cfg.lbfgs, start.as_deref())?;
        let preds = threshold(&predict_proba(&xv, &fit.weights, fit.bias));
        out.push(f1_score(&preds, &yv).f1);
        if cfg.warm_start {
            start = Some(fit.theta());
        }
    }
    Ok(out)
}

/// Stratified k-fold over the grid; the C with the highest mean held-out F1
/// wins, ties going to the smaller C.
pub fn select_c_cv(x: &CsrMatrix, labels: &[bool], cfg: &CvConfig) -> Result<CvReport> {
    cfg.validate()?;
    let mut grid = cfg.c_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() == 1 {
        return Ok(CvReport {
            chosen_c: grid[0],
            mean_f1: vec![f64::NAN],
            fold_f1: vec![Vec::new()],
            folds_used: 0,
            grid,
        });
    }
    let folds = effective_folds(labels, cfg.folds)?;
    let assign = stratified_folds(labels, folds, cfg.seed);
    let per_fold: Vec<Vec<f64>> = (0..folds).map(|f| fold_scores(x, labels, &assign, f, &grid, cfg)).collect::<Result<_>>()?;
    let fold_f1: Vec<Vec<f64>> = (0..grid.len()).map(|c| per_fold.iter().map(|f| f[c]).collect()).collect();
    let mean_f1: Vec<f64> = fold_f1.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let mut best = 0;
    for i in 1..grid.len() {
        if mean_f1[i] > mean_f1[best] {
            best = i;
        }
    }
    Ok(CvReport {
        chosen_c: grid[best],
        grid,
        mean_f1,
        fold_f1,
        folds_used: folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noisy(seed: u64, n: usize, d: usize) -> (CsrMatrix, Vec<bool>) {
        let mut rng = crate::seed::rng(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let l = i % 2 == 0;
            let mut r: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            r[0] += if l { 0.4 } else { -0.4 };
            rows.push(r);
            y.push(l);
        }
        (CsrMatrix::from_dense(&rows), y)
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<bool> = (0..53).map(|i| i % 3 == 0).collect();
        let a = stratified_folds(&labels, 10, 7);
        for f in 0..10 {
            let pos = (0..53).filter(|&i| a[i] == f && labels[i]).count();
            assert!((1..=2).contains(&pos));
        }
        assert_eq!(a, stratified_folds(&labels, 10, 7));
    }

    #[test]
    fn single_value_grid() {
        let (x, y) = noisy(1, 40, 3);
        let cfg = CvConfig {
            c_grid: vec![3.0],
            ..CvConfig::default()
        };
        assert_eq!(select_c_cv(&x, &y, &cfg).unwrap().chosen_c, 3.0);
    }

    #[test]
    fn ties_choose_smallest() {
        // identical rows per class: every C classifies held-out rows perfectly
        let rows: Vec<Vec<f64>> = (0..20).map(|i| if i % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
        let y: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let r = select_c_cv(&CsrMatrix::from_dense(&rows), &y, &CvConfig::default()).unwrap();
        assert!(r.mean_f1.iter().all(|&f| f == 1.0));
        assert_eq!(r.chosen_c, 1e-2);
    }

    #[test]
    fn matches_exhaustive_recomputation() {
        let (x, y) = noisy(5, 80, 30);
        let cfg = CvConfig {
            warm_start: false,
            ..CvConfig::default()
        };
        let r = select_c_cv(&x, &y, &cfg).unwrap();
        let assign = stratified_folds(&y, 10, cfg.seed);
        let mut means = Vec::new();
        for &c in &r.grid {
            let mut total = 0.0;
            for f in 0..10 {
                let train: Vec<usize> = (0..80).filter(|&i| assign[i] != f).collect();
                let test: Vec<usize> = (0..80).filter(|&i| assign[i] == f).collect();
                let fit = train_logreg(&x.select_rows(&train), &train.iter().map(|&i| y[i]).collect::<Vec<_>>(), c, &cfg.lbfgs, None).unwrap();
                let p = threshold(&predict_proba(&x.select_rows(&test), &fit.weights, fit.bias));
                total += f1_score(&p, &test.iter().map(|&i| y[i]).collect::<Vec<_>>()).f1;
            }
            means.push(total / 10.0);
        }
        assert_eq!(means, r.mean_f1);
        let best = means.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(r.chosen_c, r.grid[means.iter().position(|&m| m == best).unwrap()]);
    }

    #[test]
    fn too_few_rows_reduce_folds() {
        let (x, y) = noisy(2, 8, 2);
        assert_eq!(select_c_cv(&x, &y, &CvConfig::default()).unwrap().folds_used, 4);
    }
}
