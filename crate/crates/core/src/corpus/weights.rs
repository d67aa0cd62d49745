use crate::error::{Error, Result};

/// Sampling probability of each dataset: `weight_i * size_i / sum_j weight_j * size_j`.
pub fn normalize_weights(datasets: &[(f64, f64)]) -> Result<Vec<f64>> {
    for &(w, s) in datasets {
        if !(w >= 0.0 && s >= 0.0) || !w.is_finite() || !s.is_finite() {
            return Err(Error::Input(format!(
                "dataset weight and size must be finite and non-negative, got ({w}, {s})"
            )));
        }
    }
    let mass: Vec<f64> = datasets.iter().map(|&(w, s)| w * s).collect();
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return Err(Error::Input("datasets carry no weighted mass".into()));
    }
    Ok(mass.into_iter().map(|m| m / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_dataset_is_certain() {
        assert_eq!(normalize_weights(&[(0.5, 12.0)]).unwrap(), vec![1.0]);
    }

    #[test]
    fn english_books_share() {
        // books3, PubMed+arXiv, StackExchange, OpenWebText, Wikipedia
        let p = normalize_weights(&[(1.0, 89.0), (0.9, 33.0), (1.0, 35.0), (0.5, 58.0), (1.5, 15.0)]).unwrap();
        assert!((p[0] - 89.0 / 205.2).abs() < 1e-12);
        assert!((p[0] - 0.43).abs() <= 0.01);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norwegian_row() {
        let p = normalize_weights(&[(1.0, 39.0), (0.5, 78.0), (1.5, 0.5)]).unwrap();
        assert!((p[0] - 39.0 / 78.75).abs() < 1e-12);
        assert!((p[1] - 39.0 / 78.75).abs() < 1e-12);
        assert!((p[2] - 0.75 / 78.75).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_is_rejected() {
        assert!(matches!(
            normalize_weights(&[(0.0, 5.0), (1.0, 0.0)]),
            Err(Error::Input(_))
        ));
        assert!(matches!(normalize_weights(&[]), Err(Error::Input(_))));
        assert!(matches!(normalize_weights(&[(-1.0, 5.0)]), Err(Error::Input(_))));
    }
}
