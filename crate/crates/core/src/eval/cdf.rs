//! Empirical cumulative distribution of per-file DER values.

use crate::error::{Error, Result};

/// Sorted `(der, cumulative fraction)` step points. Equal values collapse
/// into a single step at their highest fraction.
pub fn cumulative_der(per_file: &[f64]) -> Result<Vec<(f64, f64)>> {
    if per_file.is_empty() {
        return Err(Error::invalid("cumulative_der of an empty list"));
    }
    let mut sorted = per_file.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, &value) in sorted.iter().enumerate() {
        let fraction = (i + 1) as f64 / n;
        match points.last_mut() {
            Some((last, frac)) if *last == value => *frac = fraction,
            _ => points.push((value, fraction)),
        }
    }
    Ok(points)
}

/// Plot-ready text: one `der<TAB>fraction` row per step point.
pub fn render_cdf(points: &[(f64, f64)]) -> String {
    let mut out = String::new();
    for (value, fraction) in points {
        out.push_str(&format!("{value:.4}\t{fraction:.4}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_values_collapse_to_one_step() {
        let points = cumulative_der(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(points, vec![(5.0, 1.0)]);
    }

    #[test]
    fn quarter_steps() {
        let points = cumulative_der(&[3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(points, vec![(1.0, 0.25), (2.0, 0.5), (3.0, 0.75), (4.0, 1.0)]);
    }

    #[test]
    fn empty_input_is_invalid() {
        assert!(cumulative_der(&[]).is_err());
    }

    #[test]
    fn cdf_median_matches_order_statistics() {
        use crate::rng::Rng;
        let mut rng = Rng::from_seed(43);
        for _ in 0..20 {
            let n = 1 + 2 * rng.below(20); // odd count, unambiguous median
            let values: Vec<f64> = (0..n).map(|_| rng.range(0.0, 50.0)).collect();
            let points = cumulative_der(&values).unwrap();
            let cdf_median = points
                .iter()
                .find(|(_, f)| *f >= 0.5)
                .map(|(v, _)| *v)
                .unwrap();
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let direct = sorted[n / 2];
            assert_eq!(cdf_median, direct);
        }
    }
}
