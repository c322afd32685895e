use super::EvalError;
use crate::mapping::FloorPlan;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerRmse {
    /// RMSE over matched corner pairs (m).
    pub rmse: f64,
    pub matched: usize,
    pub unmatched_pred: usize,
    pub unmatched_truth: usize,
}

/// Corner RMSE under greedy one-to-one nearest-neighbour matching within `radius`.
///
/// Pairs are taken in order of increasing distance (ties by index). With no
/// pair inside the radius the RMSE is infinite.
pub fn corner_rmse(pred: &FloorPlan, truth: &FloorPlan, radius: f64) -> Result<CornerRmse, EvalError> {
    if pred.corners.is_empty() || truth.corners.is_empty() {
        return Err(EvalError::NoCorners);
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.corners.iter().enumerate() {
        for (j, t) in truth.corners.iter().enumerate() {
            let d = (p - t).norm();
            if d <= radius {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; pred.corners.len()];
    let mut used_t = vec![false; truth.corners.len()];
    let (mut sum, mut matched) = (0.0, 0usize);
    for (d, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            sum += d * d;
            matched += 1;
        }
    }
    Ok(CornerRmse {
        rmse: if matched == 0 { f64::INFINITY } else { (sum / matched as f64).sqrt() },
        matched,
        unmatched_pred: pred.corners.len() - matched,
        unmatched_truth: truth.corners.len() - matched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;

    fn plan(c: &[(f64, f64)]) -> FloorPlan {
        FloorPlan { walls: vec![], corners: c.iter().map(|&(x, y)| Vec2::new(x, y)).collect() }
    }

    #[test]
    fn examples() {
        let a = plan(&[(0.0, 0.0), (4.0, 0.0), (4.0, 4.0)]);
        let r = corner_rmse(&a, &a, 1.0).unwrap();
        assert_eq!((r.rmse, r.matched), (0.0, 3));
        let b = plan(&[(0.3, 0.0)]);
        let r = corner_rmse(&b, &plan(&[(0.0, 0.0)]), 1.0).unwrap();
        assert!((r.rmse - 0.3).abs() < 1e-15);
        let r = corner_rmse(&b, &a, 1.0).unwrap();
        assert_eq!((r.matched, r.unmatched_pred, r.unmatched_truth), (1, 0, 2));
        assert!(matches!(corner_rmse(&plan(&[]), &a, 1.0), Err(EvalError::NoCorners)));
    }

    #[test]
    fn greedy_prefers_closest() {
        let pred = plan(&[(0.0, 0.0), (0.5, 0.0)]);
        let truth = plan(&[(0.45, 0.0)]);
        let r = corner_rmse(&pred, &truth, 1.0).unwrap();
        assert!((r.rmse - 0.05).abs() < 1e-12);
        assert_eq!(r.unmatched_pred, 1);
    }
}
