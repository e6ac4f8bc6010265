//! Localized contrastive estimation: per-group InfoNCE over one positive and
//! `m` hard negatives, averaged over the groups of a batch.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GroupScores {
    pub positive: f64,
    pub negatives: Vec<f64>,
}

impl GroupScores {
    pub fn new(positive: f64, negatives: Vec<f64>) -> Self {
        Self { positive, negatives }
    }
}

/// `−log softmax(positive)` over the group, via a max-shifted log-sum-exp.
pub fn group_loss(g: &GroupScores) -> Result<f64> {
    if g.negatives.is_empty() {
        return Err(Error::Argument("group has no negatives".into()));
    }
    let m = g.negatives.iter().copied().fold(g.positive, f64::max);
    let tail: f64 = g.negatives.iter().map(|&s| (s - m).exp()).sum();
    let loss = if m == g.positive { tail.ln_1p() } else { (m - g.positive) + ((g.positive - m).exp() + tail).ln() };
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite group loss from scores {g:?}")));
    }
    Ok(loss)
}

/// Batch mean of [`group_loss`].
pub fn lce_loss(groups: &[GroupScores]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut total = 0.0;
    for g in groups {
        total += group_loss(g)?;
    }
    Ok(total / groups.len() as f64)
}

/// Loss plus its gradient with respect to every score: for each group,
/// `d/ds_pos = (p_pos − 1)/|Q|` and `d/ds_neg = p_neg/|Q|`.
pub fn lce_loss_with_grad(groups: &[GroupScores]) -> Result<(f64, Vec<GroupScores>)> {
    let loss = lce_loss(groups)?;
    let n = groups.len() as f64;
    let grads = groups
        .iter()
        .map(|g| {
            let m = g.negatives.iter().copied().fold(g.positive, f64::max);
            let e_pos = (g.positive - m).exp();
            let e_neg: Vec<f64> = g.negatives.iter().map(|&s| (s - m).exp()).collect();
            let z = e_pos + e_neg.iter().sum::<f64>();
            GroupScores::new((e_pos / z - 1.0) / n, e_neg.iter().map(|e| e / z / n).collect())
        })
        .collect();
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(pos: f64, negs: &[f64]) -> f64 {
        lce_loss(&[GroupScores::new(pos, negs.to_vec())]).unwrap()
    }

    #[test]
    fn closed_forms() {
        assert!((one(0.0, &[0.0; 4]) - 5f64.ln()).abs() < 1e-12);
        assert!((one(0.0, &[0.0; 4]) - 1.609_437_9).abs() < 1e-7);
        assert!(one(30.0, &[0.0; 4]) < 1e-9);
        assert!(one(30.0, &[0.0; 4]) >= 0.0);
        // scalar oracle −ln(e²/(e²+4))
        let e2 = 2f64.exp();
        let oracle = -(e2 / (e2 + 4.0)).ln();
        assert!((one(2.0, &[0.0; 4]) - oracle).abs() < 1e-12);
        assert!((oracle - 0.432_652_9).abs() < 1e-7);
    }

    #[test]
    fn batch_is_mean() {
        let a = GroupScores::new(1.0, vec![0.0, -1.0]);
        let b = GroupScores::new(-2.0, vec![3.0]);
        let mean = (group_loss(&a).unwrap() + group_loss(&b).unwrap()) / 2.0;
        assert!((lce_loss(&[a, b]).unwrap() - mean).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(lce_loss(&[]).is_err());
        assert!(lce_loss(&[GroupScores::new(0.0, vec![])]).is_err());
    }

    #[test]
    fn score_gradient_matches_differences() {
        let g = vec![GroupScores::new(0.3, vec![1.2, -0.7, 0.1]), GroupScores::new(-1.0, vec![2.0])];
        let (_, grads) = lce_loss_with_grad(&g).unwrap();
        let h = 1e-6;
        let mut bumped = g.clone();
        bumped[0].negatives[0] += h;
        let up = lce_loss(&bumped).unwrap();
        bumped[0].negatives[0] -= 2.0 * h;
        let down = lce_loss(&bumped).unwrap();
        assert!(((up - down) / (2.0 * h) - grads[0].negatives[0]).abs() < 1e-8);
        // softmax gradients sum to zero within a group
        let s: f64 = grads[1].positive + grads[1].negatives.iter().sum::<f64>();
        assert!(s.abs() < 1e-15);
    }
}
