use crate::error::{MasqError, Result};

pub const LOGSTD_MIN: f64 = -5.0;
pub const LOGSTD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianAction {
    pub mean: Vec<f64>,
    pub logstd: Vec<f64>,
    pub sample: Vec<f64>,
    pub logprob: f64,
}

#[inline]
pub fn clamp_logstd(v: f64) -> f64 {
    v.clamp(LOGSTD_MIN, LOGSTD_MAX)
}

/// Reparameterised draw `mean + exp(logstd) * noise` and its log density.
pub fn gaussian_sample_logprob(
    mean: &[f64],
    logstd: &[f64],
    noise: &[f64],
) -> Result<GaussianAction> {
    if logstd.len() != mean.len() {
        return Err(MasqError::dim("gaussian logstd", mean.len(), logstd.len()));
    }
    if noise.len() != mean.len() {
        return Err(MasqError::dim("gaussian noise", mean.len(), noise.len()));
    }
    let logstd: Vec<f64> = logstd.iter().map(|&l| clamp_logstd(l)).collect();
    let sample = mean
        .iter()
        .zip(&logstd)
        .zip(noise)
        .map(|((&m, &l), &n)| m + l.exp() * n)
        .collect();
    let logprob = noise
        .iter()
        .zip(&logstd)
        .map(|(&n, &l)| -0.5 * n * n - l - HALF_LN_2PI)
        .sum();
    Ok(GaussianAction {
        mean: mean.to_vec(),
        logstd,
        sample,
        logprob,
    })
}

/// Log density of `action` under the diagonal Gaussian (log-std clamped).
pub fn gaussian_logprob(mean: &[f64], logstd: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(logstd)
        .zip(action)
        .map(|((&m, &l), &a)| {
            let l = clamp_logstd(l);
            let z = (a - m) * (-l).exp();
            -0.5 * z * z - l - HALF_LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(logstd: &[f64]) -> f64 {
    logstd.iter().map(|&l| l + 0.5 + HALF_LN_2PI).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    #[test]
    fn standard_normal_at_mode() {
        let g = gaussian_sample_logprob(&[0.0], &[0.0], &[0.0]).unwrap();
        assert_eq!(g.sample, vec![0.0]);
        assert!((g.logprob - (-0.5 * (2.0 * PI).ln())).abs() < 1e-15);
        assert!((g.logprob + 0.918_94).abs() < 1e-5);
    }

    #[test]
    fn two_unit_modes() {
        let g = gaussian_sample_logprob(&[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(g.sample, vec![1.0, 1.0]);
        assert!((g.logprob + 1.837_88).abs() < 1e-5);
    }

    #[test]
    fn scaled_draw_by_hand() {
        let g = gaussian_sample_logprob(&[0.0], &[LN_2], &[1.0]).unwrap();
        assert!((g.sample[0] - 2.0).abs() < 1e-15);
        let want = -0.5 - LN_2 - 0.5 * (2.0 * PI).ln();
        assert!((g.logprob - want).abs() < 1e-14);
        assert!((g.logprob + 2.112_09).abs() < 1e-5);
    }

    #[test]
    fn logprob_of_sample_matches_reported() {
        let g = gaussian_sample_logprob(&[0.3, -1.2], &[-0.7, 0.4], &[0.9, -1.3]).unwrap();
        let lp = gaussian_logprob(&g.mean, &g.logstd, &g.sample);
        assert!((lp - g.logprob).abs() < 1e-12);
    }

    #[test]
    fn logstd_is_clamped() {
        let g = gaussian_sample_logprob(&[0.0, 0.0], &[-9.0, 7.0], &[1.0, 1.0]).unwrap();
        assert_eq!(g.logstd, vec![LOGSTD_MIN, LOGSTD_MAX]);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(gaussian_sample_logprob(&[0.0, 1.0], &[0.0], &[0.0, 0.0]).is_err());
        assert!(gaussian_sample_logprob(&[0.0], &[0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn entropy_values() {
        let unit = 0.5 * (2.0 * PI * std::f64::consts::E).ln();
        assert!((gaussian_entropy(&[0.0]) - unit).abs() < 1e-15);
        assert!((gaussian_entropy(&[0.0]) - 1.418_94).abs() < 1e-5);
        assert!((gaussian_entropy(&[0.0; 3]) - 4.256_81).abs() < 1e-5);
        assert!((gaussian_entropy(&[LN_2]) - 2.112_09).abs() < 1e-5);
    }
}
