/// Pearson correlation over the cells where `responses` is present.
/// `None` with fewer than two cells or zero variance on either side.
pub fn pearson_r(predictions: &[f64], responses: &[Option<f64>]) -> Option<f64> {
    weighted_pearson(predictions.iter().zip(responses).filter_map(|(&p, r)| r.map(|r| (p, r, 1.0))))
}

/// Pearson correlation of `(x, y, weight)` triples; integer weights equal
/// repeating a cell that many times.
pub fn weighted_pearson(cells: impl Iterator<Item = (f64, f64, f64)> + Clone) -> Option<f64> {
    let (mut w_sum, mut x_sum, mut y_sum, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (x, y, w) in cells.clone() {
        if w > 0.0 {
            w_sum += w;
            x_sum += w * x;
            y_sum += w * y;
            n += 1;
        }
    }
    if n < 2 {
        return None;
    }
    let (mx, my) = (x_sum / w_sum, y_sum / w_sum);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y, w) in cells {
        if w > 0.0 {
            let (dx, dy) = (x - mx, y - my);
            sxy += w * dx * dy;
            sxx += w * dx * dx;
            syy += w * dy * dy;
        }
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean squared difference over the cells where `responses` is present.
pub fn mse_score(predictions: &[f64], responses: &[Option<f64>]) -> Option<f64> {
    weighted_mse(predictions.iter().zip(responses).filter_map(|(&p, r)| r.map(|r| (p, r, 1.0))))
}

pub fn weighted_mse(cells: impl Iterator<Item = (f64, f64, f64)>) -> Option<f64> {
    let (mut total, mut weight) = (0.0, 0.0);
    for (x, y, w) in cells {
        total += w * (x - y) * (x - y);
        weight += w;
    }
    (weight > 0.0).then(|| total / weight)
}

/// Mean of the defined values; `None` if there are none.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    crate::math::mean(&defined)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn some(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().map(|&x| Some(x)).collect()
    }

    #[test]
    fn perfect_relations() {
        let p = [0.1, 0.4, 0.35, 0.9];
        assert!((pearson_r(&p, &some(&p)).unwrap() - 1.0).abs() < 1e-15);
        let inv: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        assert!((pearson_r(&p, &some(&inv)).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_integer_oracle() {
        // Scaling by 10 and 4 turns both vectors into integers; r is scale-free.
        let (x, y) = ([1i64, 2, 7], [0i64, 1, 3]);
        let n = 3i64;
        let sx: i64 = x.iter().sum();
        let sy: i64 = y.iter().sum();
        let sxy: i64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: i64 = x.iter().map(|a| a * a).sum();
        let syy: i64 = y.iter().map(|a| a * a).sum();
        let num = (n * sxy - sx * sy) as f64;
        let den = (((n * sxx - sx * sx) * (n * syy - sy * sy)) as f64).sqrt();
        let r = pearson_r(&[0.1, 0.2, 0.7], &some(&[0.0, 0.25, 0.75])).unwrap();
        assert!((r - num / den).abs() < 1e-12);
    }

    #[test]
    fn missing_cells_are_skipped() {
        let r = pearson_r(&[0.1, 0.2, 100.0, 0.7], &[Some(0.0), Some(0.25), None, Some(0.75)]).unwrap();
        let full = pearson_r(&[0.1, 0.2, 0.7], &some(&[0.0, 0.25, 0.75])).unwrap();
        assert_eq!(r, full);
    }

    #[test]
    fn zero_variance_is_undefined() {
        assert_eq!(pearson_r(&[0.1, 0.2], &some(&[0.5, 0.5])), None);
        assert_eq!(pearson_r(&[0.1], &some(&[0.5])), None);
    }

    #[test]
    fn affine_invariance() {
        let p = [0.12, 0.5, 0.33, 0.91, 0.07];
        let r = some(&[0.0, 0.5, 0.25, 1.0, 0.25]);
        let base = pearson_r(&p, &r).unwrap();
        let shifted: Vec<f64> = p.iter().map(|v| 3.5 * v - 2.0).collect();
        assert!((pearson_r(&shifted, &r).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn weights_equal_repetition() {
        let rep = pearson_r(&[0.1, 0.1, 0.5, 0.8], &some(&[0.0, 0.0, 0.75, 0.5])).unwrap();
        let w = weighted_pearson([(0.1, 0.0, 2.0), (0.5, 0.75, 1.0), (0.8, 0.5, 1.0)].into_iter()).unwrap();
        assert!((rep - w).abs() < 1e-12);
    }

    #[test]
    fn mse_examples() {
        let p = [0.2, 0.4, 0.9];
        assert_eq!(mse_score(&p, &some(&p)), Some(0.0));
        let off: Vec<f64> = p.iter().map(|v| v - 0.1).collect();
        assert!((mse_score(&p, &some(&off)).unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(mse_score(&p, &[None, None, None]), None);
        let r = [Some(0.0), None, Some(0.5)];
        let direct = ((0.2f64 - 0.0).powi(2) + (0.9f64 - 0.5).powi(2)) / 2.0;
        assert!((mse_score(&p, &r).unwrap() - direct).abs() < 1e-12);
    }
}
