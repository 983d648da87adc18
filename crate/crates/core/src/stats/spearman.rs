use crate::error::{Error, Result};

/// Mid-ranks (1-based); tied values share the average of their positions.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: Pearson correlation of mid-ranks.
pub fn spearman_rho(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: pairs.len(),
        });
    }
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    pearson(&mid_ranks(&a), &mid_ranks(&b)).ok_or(Error::Undefined("a variable is constant"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn monotone_pairs() {
        let up: Vec<_> = (0..20).map(|i| (i as f64, (i * i) as f64)).collect();
        assert_eq!(spearman_rho(&up).unwrap(), 1.0);
        let down: Vec<_> = (0..20).map(|i| (i as f64, -(i as f64).exp())).collect();
        assert_eq!(spearman_rho(&down).unwrap(), -1.0);
    }

    #[test]
    fn ties_get_mid_ranks() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!(matches!(
            spearman_rho(&[(1.0, 2.0), (1.0, 3.0)]),
            Err(Error::Undefined(_))
        ));
        assert!(spearman_rho(&[(1.0, 2.0)]).is_err());
    }

    proptest! {
        #[test]
        fn invariant_under_monotone_transforms(
            pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40)
        ) {
            if let Ok(rho) = spearman_rho(&pairs) {
                let t: Vec<_> = pairs.iter().map(|&(a, b)| (a.exp().min(1e300), 3.0 * b - 7.0)).collect();
                let rho_t = spearman_rho(&t).unwrap();
                prop_assert!((rho - rho_t).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&rho));
            }
        }
    }
}
