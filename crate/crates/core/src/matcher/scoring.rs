use nalgebra::DMatrix;

use super::{ConfidenceMatrix, Match, MatchSet, ScoreMatrix};
use crate::{Error, Result};

/// Lower clamp applied inside the focal-loss logarithm.
pub(crate) const LOG_FLOOR: f64 = 1e-12;

/// Row-wise and column-wise softmax of `s`.
pub(crate) fn softmax_factors(s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (q, j) = s.shape();
    let mut row = DMatrix::zeros(q, j);
    for r in 0..q {
        let max = s.row(r).max();
        let mut sum = 0.0;
        for c in 0..j {
            let e = (s[(r, c)] - max).exp();
            row[(r, c)] = e;
            sum += e;
        }
        row.row_mut(r).iter_mut().for_each(|x| *x /= sum);
    }
    let mut col = DMatrix::zeros(q, j);
    for c in 0..j {
        let max = s.column(c).max();
        let mut sum = 0.0;
        for r in 0..q {
            let e = (s[(r, c)] - max).exp();
            col[(r, c)] = e;
            sum += e;
        }
        col.column_mut(c).iter_mut().for_each(|x| *x /= sum);
    }
    (row, col)
}

/// `C(q, j) = softmax(S(q, ·))_j · softmax(S(·, j))_q`
pub fn dual_softmax(s: &ScoreMatrix) -> ConfidenceMatrix {
    let (row, col) = softmax_factors(&s.0);
    ConfidenceMatrix(row.component_mul(&col))
}

/// Gradient of the dual softmax with respect to the scores.
pub(crate) fn dual_softmax_backward(
    row: &DMatrix<f64>,
    col: &DMatrix<f64>,
    d_conf: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (q, j) = row.shape();
    let d_row = d_conf.component_mul(col);
    let d_col = d_conf.component_mul(row);
    let mut d_s = DMatrix::zeros(q, j);
    for r in 0..q {
        let dot: f64 = (0..j).map(|c| row[(r, c)] * d_row[(r, c)]).sum();
        for c in 0..j {
            d_s[(r, c)] += row[(r, c)] * (d_row[(r, c)] - dot);
        }
    }
    for c in 0..j {
        let dot: f64 = (0..q).map(|r| col[(r, c)] * d_col[(r, c)]).sum();
        for r in 0..q {
            d_s[(r, c)] += col[(r, c)] * (d_col[(r, c)] - dot);
        }
    }
    d_s
}

/// Mutual-maximum cells of `C` whose confidence reaches `threshold`.
///
/// Ties resolve to the lowest index, so every query and every point appears
/// at most once.
pub fn select_matches(c: &ConfidenceMatrix, threshold: f64) -> MatchSet {
    let m = &c.0;
    let (q, j) = m.shape();
    if q == 0 || j == 0 {
        return MatchSet::default();
    }
    let argmax = |vals: &mut dyn Iterator<Item = f64>| {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, v) in vals.enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        best.0
    };
    let col_best: Vec<usize> = (0..j).map(|c| argmax(&mut m.column(c).iter().copied())).collect();
    let matches = (0..q)
        .filter_map(|r| {
            let c = argmax(&mut m.row(r).iter().copied());
            let conf = m[(r, c)];
            (col_best[c] == r && conf >= threshold).then_some(Match {
                query: r,
                point: c,
                confidence: conf,
            })
        })
        .collect();
    MatchSet { matches }
}

/// Dense ground-truth mask from positive cells, checking one-to-one-ness.
pub(crate) fn positive_mask(shape: (usize, usize), positives: &[(usize, usize)]) -> Result<DMatrix<bool>> {
    let mut mask = DMatrix::from_element(shape.0, shape.1, false);
    let mut row_used = vec![false; shape.0];
    let mut col_used = vec![false; shape.1];
    for &(q, j) in positives {
        if q >= shape.0 || j >= shape.1 {
            return Err(Error::InvalidConfig(format!("ground-truth match ({q}, {j}) out of range")));
        }
        if row_used[q] || col_used[j] {
            return Err(Error::InvalidConfig(format!(
                "ground truth has several positives in row {q} or column {j}"
            )));
        }
        row_used[q] = true;
        col_used[j] = true;
        mask[(q, j)] = true;
    }
    Ok(mask)
}

fn focal_term(p: f64, gamma: f64) -> f64 {
    let p = p.clamp(LOG_FLOOR, 1.0);
    -(1.0 - p).powf(gamma) * p.ln()
}

/// d(term)/dp for the clamped focal term.
fn focal_term_grad(p: f64, gamma: f64) -> f64 {
    if !(LOG_FLOOR..=1.0).contains(&p) {
        return 0.0;
    }
    let one_minus = 1.0 - p;
    let decay = if gamma == 0.0 || one_minus <= 0.0 {
        0.0
    } else {
        gamma * one_minus.powf(gamma - 1.0) * p.ln()
    };
    decay - one_minus.powf(gamma) / p
}

/// Mean focal loss over all cells. Positive cells use `C`, negative cells `1 - C`.
pub fn focal_loss(c: &ConfidenceMatrix, positives: &[(usize, usize)], gamma: f64) -> Result<f64> {
    let mask = positive_mask(c.0.shape(), positives)?;
    Ok(focal_loss_masked(&c.0, &mask, gamma))
}

pub(crate) fn focal_loss_masked(c: &DMatrix<f64>, mask: &DMatrix<bool>, gamma: f64) -> f64 {
    let n = c.len().max(1) as f64;
    c.iter()
        .zip(mask.iter())
        .map(|(&v, &pos)| focal_term(if pos { v } else { 1.0 - v }, gamma))
        .sum::<f64>()
        / n
}

pub(crate) fn focal_loss_grad(c: &DMatrix<f64>, mask: &DMatrix<bool>, gamma: f64) -> DMatrix<f64> {
    let n = c.len().max(1) as f64;
    c.zip_map(mask, |v, pos| {
        if pos {
            focal_term_grad(v, gamma) / n
        } else {
            -focal_term_grad(1.0 - v, gamma) / n
        }
    })
}
