use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Mean, sample standard deviation and range of a set of numbers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 for one value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Ok(Self {
            mean,
            std: var.sqrt(),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n,
        })
    }
}

/// Result of a two-sided two-sample t-test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Welch's unequal-variance t-test of `mean(a) == mean(b)`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(
            "t-test needs at least two samples per group".into(),
        ));
    }
    let sa = Summary::of(a)?;
    let sb = Summary::of(b)?;
    let va = sa.std.powi(2) / a.len() as f64;
    let vb = sb.std.powi(2) / b.len() as f64;
    let se = (va + vb).sqrt();
    let diff = sa.mean - sb.mean;
    if se == 0.0 {
        let p = if diff == 0.0 { 1.0 } else { 0.0 };
        return Ok(TTest {
            t: if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY },
            df: (a.len() + b.len() - 2) as f64,
            p_value: p,
        });
    }
    let t = diff / se;
    let df = (va + vb).powi(2)
        / (va.powi(2) / (a.len() - 1) as f64 + vb.powi(2) / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(TTest {
        t,
        df,
        p_value: 2.0 * (1.0 - dist.cdf(t.abs())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_known_values() {
        let s = Summary::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(s.mean, 5.0);
        assert!((s.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!((s.min, s.max, s.n), (2.0, 9.0, 8));
        assert_eq!(Summary::of(&[3.0]).unwrap().std, 0.0);
        assert!(Summary::of(&[]).is_err());
    }

    #[test]
    fn welch_matches_reference_values() {
        // scipy.stats.ttest_ind(a, b, equal_var=False)
        let a = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4];
        let b = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4];
        let r = welch_t_test(&a, &b).unwrap();
        assert!((r.t - -2.455356).abs() < 1e-5, "{}", r.t);
        assert!((r.df - 24.98853).abs() < 1e-3, "{}", r.df);
        assert!((r.p_value - 0.021378).abs() < 1e-5, "{}", r.p_value);
    }

    #[test]
    fn identical_constant_groups() {
        let r = welch_t_test(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(r.p_value, 1.0);
    }
}
