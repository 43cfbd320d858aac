use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::C64;

/// NMSE values at or below this are reported as this, in dB.
pub const NMSE_FLOOR_DB: f64 = -120.0;

/// Root mean square of user position errors.
pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("rmse of an empty error list".into()));
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("median of an empty list".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Ok(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

/// `||h_est - h_true||^2 / ||h_true||^2`.
pub fn nmse(h_true: &DVector<C64>, h_est: &DVector<C64>) -> Result<f64> {
    if h_true.len() != h_est.len() {
        return Err(Error::DimensionMismatch(format!(
            "true channel has {} entries, estimate {}",
            h_true.len(),
            h_est.len()
        )));
    }
    let denom = h_true.norm_squared();
    if !(denom > 0.0) {
        return Err(Error::InvalidInput("NMSE against a zero channel".into()));
    }
    Ok((h_est - h_true).norm_squared() / denom)
}

/// Linear NMSE to dB, clamped at [`NMSE_FLOOR_DB`].
pub fn nmse_db(value: f64) -> f64 {
    if value > 0.0 {
        (10.0 * value.log10()).max(NMSE_FLOOR_DB)
    } else {
        NMSE_FLOOR_DB
    }
}

/// Outcome of a one-sided paired sign test of "a is smaller than b".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

impl SignTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} against {} paired values", a.len(), b.len())));
    }
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Less) => wins += 1,
            Some(std::cmp::Ordering::Greater) => losses += 1,
            _ => ties += 1,
        }
    }
    Ok(SignTest {
        wins,
        losses,
        ties,
        p_value: binomial_upper_tail(wins + losses, wins),
    })
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`, summed in log space.
fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if n == 0 || k == 0 {
        return 1.0;
    }
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_choose = 0.0; // ln C(n, 0)
    let mut terms = Vec::with_capacity(n + 1);
    for i in 0..=n {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            terms.push(ln_choose + ln_half_n);
        }
    }
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (top.exp() * terms.iter().map(|t| (t - top).exp()).sum::<f64>()).min(1.0)
}

/// Number of adjacent increases in a sequence.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[]).is_err());
    }

    #[test]
    fn rmse_matches_radial_second_moment() {
        // planar Gaussian errors: E[r^2] = 2 sigma^2
        let sigma = 0.07;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let errors: Vec<f64> = (0..10_000)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                let y: f64 = StandardNormal.sample(&mut rng);
                sigma * x.hypot(y)
            })
            .collect();
        let expected = (2.0f64).sqrt() * sigma;
        assert!((rmse(&errors).unwrap() / expected - 1.0).abs() < 0.03);
    }

    #[test]
    fn nmse_examples() {
        let h = DVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.25), C64::new(0.0, 3.0)]);
        assert_eq!(nmse(&h, &h).unwrap(), 0.0);
        assert_eq!(nmse_db(nmse(&h, &h).unwrap()), NMSE_FLOOR_DB);
        let zero = DVector::zeros(3);
        assert!((nmse(&h, &zero).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse_db(1.0).abs() < 1e-15);
        for delta in [0.1, 1.0, 2.5, -0.7] {
            let rotated = &h * C64::from_polar(1.0, delta);
            let expected = 4.0 * (delta / 2.0f64).sin().powi(2);
            assert!((nmse(&h, &rotated).unwrap() - expected).abs() < 1e-12);
        }
        assert!(nmse(&zero, &h).is_err());
        assert!(nmse(&h, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn median_handles_parity() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
    }

    #[test]
    fn sign_test_tail() {
        // 9 wins of 10: P(X >= 9) = 11 / 1024
        let a = [0.0; 10];
        let mut b = [1.0; 10];
        b[0] = -1.0;
        let t = sign_test(&a, &b).unwrap();
        assert_eq!((t.wins, t.losses, t.ties), (9, 1, 0));
        assert!((t.p_value - 11.0 / 1024.0).abs() < 1e-15);
        assert!(t.significant(0.05));
        assert_eq!(binomial_upper_tail(10, 0), 1.0);
        assert!((binomial_upper_tail(4, 2) - 11.0 / 16.0).abs() < 1e-15);
        // large n stays finite
        assert!(binomial_upper_tail(2000, 1100) < 1e-5);
    }

    #[test]
    fn inversion_count() {
        assert_eq!(inversions(&[5.0, 4.0, 4.5, 3.0]), 1);
    }
}
