//! Cycle spectra, GEM / Poisson-Dirichlet reference samplers and the
//! goodness-of-fit checks built on them.
//!
//! Every reference law is Monte Carlo: the PD side of each comparison is an
//! independent stick-breaking sample, never a closed-form density.

use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric;

/// Cycle lengths of one permutation in non-increasing order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CycleSpectrum {
    lengths: Vec<usize>,
    total: usize,
}

impl CycleSpectrum {
    pub fn new(mut lengths: Vec<usize>) -> Result<Self> {
        if lengths.iter().any(|&l| l == 0) {
            return Err(Error::Domain("cycle lengths must be positive".into()));
        }
        lengths.sort_unstable_by(|a, b| b.cmp(a));
        let total = lengths.iter().sum();
        Ok(Self { lengths, total })
    }

    /// Spectrum from cycle counts `r[j - 1]`.
    pub fn from_counts(r: &[usize]) -> Self {
        let mut lengths = Vec::new();
        for (i, &c) in r.iter().enumerate().rev() {
            lengths.extend(std::iter::repeat(i + 1).take(c));
        }
        let total = lengths.iter().sum();
        Self { lengths, total }
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn largest(&self) -> usize {
        self.lengths.first().copied().unwrap_or(0)
    }

    /// `l_i / (nu N)`.
    pub fn normalized(&self, nu: f64) -> Vec<f64> {
        let scale = nu * self.total as f64;
        self.lengths.iter().map(|&l| l as f64 / scale).collect()
    }

    /// `sum_i (l_i / (nu N))^2`.
    pub fn sum_squares(&self, nu: f64) -> f64 {
        self.normalized(nu).iter().map(|p| p * p).sum()
    }

    /// `(1/N) sum_{l > K} l`.
    pub fn long_fraction(&self, k: usize) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.lengths.iter().take_while(|&&l| l > k).sum::<usize>() as f64 / self.total as f64
    }

    /// Counts `r_j`, `r[j - 1]`, over `j = 1..=N`.
    pub fn counts(&self) -> Vec<usize> {
        let mut r = vec![0; self.total];
        for &l in &self.lengths {
            r[l - 1] += 1;
        }
        r
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("theta must be positive and finite, got {theta}")))
    }
}

/// First `m` GEM(theta) fragments: `X_i = 1 - U^{1/theta}` and
/// `P_i = X_i prod_{l < i} (1 - X_l)`.
pub fn sample_gem<R: Rng + ?Sized>(theta: f64, m: usize, rng: &mut R) -> Result<Vec<f64>> {
    check_theta(theta)?;
    let mut rest = 1.0;
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        // gen() is in [0, 1); use 1 - u so that U lies in (0, 1]
        let u: f64 = 1.0 - rng.gen::<f64>();
        let x = -(u.ln() / theta).exp_m1();
        out.push(rest * x);
        rest *= 1.0 - x;
    }
    Ok(out)
}

/// GEM fragments in non-increasing order (a truncated PD(theta) draw).
pub fn sample_pd<R: Rng + ?Sized>(theta: f64, m: usize, rng: &mut R) -> Result<Vec<f64>> {
    let mut p = sample_gem(theta, m, rng)?;
    p.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(p)
}

/// Monte Carlo mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(x: &[f64]) -> Self {
        let m = x.len() as f64;
        let mean = x.iter().sum::<f64>() / m;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
        Self { mean, stderr: (var / m).sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SumSquaresReference {
    pub estimate: Estimate,
    /// Expected fragment mass beyond the truncation, `(theta / (theta + 1))^m`.
    pub truncation_residual: f64,
}

/// Monte Carlo `E[sum_i P_i^2]` for PD(theta) from `draws` truncated
/// stick-breaking samples.
pub fn pd_sum_squares_reference<R: Rng + ?Sized>(theta: f64, draws: usize, m_trunc: usize, rng: &mut R) -> Result<SumSquaresReference> {
    check_theta(theta)?;
    if draws < 2 {
        return Err(Error::Domain("need at least two reference draws".into()));
    }
    let values: Vec<f64> = (0..draws)
        .map(|_| sample_gem(theta, m_trunc, rng).map(|p| p.iter().map(|x| x * x).sum()))
        .collect::<Result<_>>()?;
    Ok(SumSquaresReference {
        estimate: Estimate::from_samples(&values),
        truncation_residual: (theta / (theta + 1.0)).powf(m_trunc as f64),
    })
}

/// Two-sample Kolmogorov-Smirnov distance and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub distance: f64,
    pub p_value: f64,
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("KS test needs two nonempty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_unstable_by(|p, q| p.total_cmp(q));
    y.sort_unstable_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let s = ne.sqrt();
    let lambda = (s + 0.12 + 0.11 / s) * d;
    Ok(KsResult { distance: d, p_value: numeric::kolmogorov_survival(lambda) })
}

/// Chi-square goodness of fit of `counts` against `probs`. Cells are merged
/// in order of increasing expectation until each holds at least five
/// expected counts. Returns `(statistic, p-value, degrees of freedom)`.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> (f64, f64, usize) {
    let total: u64 = counts.iter().sum();
    let t = total as f64;
    let mut cells: Vec<(f64, f64)> = counts.iter().zip(probs).map(|(&c, &p)| (c as f64, p * t)).collect();
    cells.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (o, e) in cells {
        acc.0 += o;
        acc.1 += e;
        if acc.1 >= 5.0 {
            merged.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => merged.push(acc),
        }
    }
    let stat: f64 = merged
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e).powi(2) / e } else if o > 0.0 { f64::INFINITY } else { 0.0 })
        .sum();
    let dof = merged.len().saturating_sub(1);
    let p = if dof == 0 { 1.0 } else { numeric::chi_square_survival(stat, dof as f64) };
    (stat, p, dof)
}

/// Chi-square test that two count vectors over the same cells share a law.
/// Cells with fewer than five pooled counts are merged.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> (f64, f64, usize) {
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let mut cells: Vec<(f64, f64)> = a.iter().zip(b).map(|(&x, &y)| (x as f64, y as f64)).collect();
    cells.sort_by(|p, q| (p.0 + p.1).total_cmp(&(q.0 + q.1)));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (x, y) in cells {
        acc.0 += x;
        acc.1 += y;
        if acc.0 + acc.1 >= 10.0 {
            merged.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 + acc.1 > 0.0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => merged.push(acc),
        }
    }
    let ka = (nb / na).sqrt();
    let kb = (na / nb).sqrt();
    let stat: f64 = merged.iter().map(|&(x, y)| (ka * x - kb * y).powi(2) / (x + y)).sum();
    let dof = merged.len().saturating_sub(1);
    let p = if dof == 0 { 1.0 } else { numeric::chi_square_survival(stat, dof as f64) };
    (stat, p, dof)
}

/// Comparison of normalized spectra with PD(theta).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdFitReport {
    pub samples: usize,
    pub reference_draws: usize,
    pub nu: f64,
    pub theta: f64,
    /// KS result for the `i`-th largest normalized length, `i = 1..=k`.
    pub coordinates: Vec<KsResult>,
    pub sum_squares: Estimate,
    pub reference_sum_squares: Estimate,
    /// Two-sided normal p-value of the difference of the two means.
    pub sum_squares_p_value: f64,
}

impl PdFitReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>12} {:>12}", "coordinate", "ks_distance", "p_value");
        for (i, c) in self.coordinates.iter().enumerate() {
            let _ = writeln!(s, "{:<12} {:>12.6} {:>12.6}", i + 1, c.distance, c.p_value);
        }
        let _ = writeln!(
            s,
            "sum of squares {:.6} +- {:.6}, reference {:.6} +- {:.6}, p = {:.4}",
            self.sum_squares.mean,
            self.sum_squares.stderr,
            self.reference_sum_squares.mean,
            self.reference_sum_squares.stderr,
            self.sum_squares_p_value
        );
        s
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if nu > 0.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("normalization needs nu > 0, got {nu}")))
    }
}

/// KS tests of the first `k` normalized lengths `l_i / (nu N)` against a
/// PD(theta) Monte Carlo reference of `reference_draws` draws (stick
/// breaking truncated at 200 fragments), plus a comparison of
/// `sum_i (l_i / (nu N))^2` with the reference mean.
pub fn pd_fit_test<R: Rng + ?Sized>(
    spectra: &[CycleSpectrum],
    nu: f64,
    theta: f64,
    k: usize,
    reference_draws: usize,
    rng: &mut R,
) -> Result<PdFitReport> {
    check_nu(nu)?;
    check_theta(theta)?;
    if spectra.is_empty() || reference_draws < 2 || k == 0 {
        return Err(Error::Domain("PD fit needs spectra, k >= 1 and at least two reference draws".into()));
    }
    const TRUNC: usize = 200;
    let reference: Vec<Vec<f64>> = (0..reference_draws).map(|_| sample_pd(theta, TRUNC, rng)).collect::<Result<_>>()?;
    let coordinates = (0..k)
        .map(|i| {
            let a: Vec<f64> = spectra.iter().map(|s| s.normalized(nu).get(i).copied().unwrap_or(0.0)).collect();
            let b: Vec<f64> = reference.iter().map(|p| p[i]).collect();
            ks_two_sample(&a, &b)
        })
        .collect::<Result<_>>()?;
    let ss: Vec<f64> = spectra.iter().map(|s| s.sum_squares(nu)).collect();
    let rs: Vec<f64> = reference.iter().map(|p| p.iter().map(|x| x * x).sum()).collect();
    let sum_squares = Estimate::from_samples(&ss);
    let reference_sum_squares = Estimate::from_samples(&rs);
    let z = (sum_squares.mean - reference_sum_squares.mean)
        / (sum_squares.stderr.powi(2) + reference_sum_squares.stderr.powi(2)).sqrt().max(1e-300);
    let sum_squares_p_value = 2.0 * normal_upper_tail(z.abs());
    Ok(PdFitReport {
        samples: spectra.len(),
        reference_draws,
        nu,
        theta,
        coordinates,
        sum_squares,
        reference_sum_squares,
        sum_squares_p_value,
    })
}

fn normal_upper_tail(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

/// Law of the largest normalized cycle `l_1 / (nu N)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GiantCycleReport {
    pub samples: usize,
    pub nu: f64,
    pub p_above_0_9: f64,
    pub mean: f64,
    /// Empirical quantiles at 0.05, 0.25, 0.5, 0.75, 0.95.
    pub quantiles: Vec<f64>,
}

/// Headline statistic `P(l_1 / (nu N) > 0.9)` with summary quantiles. Meant
/// for the logarithmic weight regime, where a single cycle takes almost all
/// of the long-cycle mass.
pub fn giant_cycle_test(spectra: &[CycleSpectrum], nu: f64) -> Result<GiantCycleReport> {
    check_nu(nu)?;
    if spectra.is_empty() {
        return Err(Error::Domain("giant-cycle test needs spectra".into()));
    }
    let mut x: Vec<f64> = spectra.iter().map(|s| s.largest() as f64 / (nu * s.total() as f64)).collect();
    let m = x.len() as f64;
    let above = x.iter().filter(|&&v| v > 0.9).count() as f64 / m;
    let mean = x.iter().sum::<f64>() / m;
    x.sort_unstable_by(|a, b| a.total_cmp(b));
    let quantiles = [0.05, 0.25, 0.5, 0.75, 0.95]
        .iter()
        .map(|q| x[((q * (m - 1.0)).round() as usize).min(x.len() - 1)])
        .collect();
    Ok(GiantCycleReport { samples: spectra.len(), nu, p_above_0_9: above, mean, quantiles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spectrum_basics() {
        let s = CycleSpectrum::new(vec![1, 5, 2, 2]).unwrap();
        assert_eq!(s.lengths(), &[5, 2, 2, 1]);
        assert_eq!(s.total(), 10);
        assert_eq!(s.long_fraction(0), 1.0);
        assert_eq!(s.long_fraction(10), 0.0);
        assert!((s.long_fraction(1) - 0.9).abs() < 1e-15);
        assert_eq!(CycleSpectrum::from_counts(&s.counts()), s);
        assert!(CycleSpectrum::new(vec![0, 2]).is_err());
    }

    #[test]
    fn gem_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = 200_000;
        for (theta, mean, var) in [(1.0, 0.5, 1.0 / 12.0), (2.0, 1.0 / 3.0, 2.0 / 36.0)] {
            let x: Vec<f64> = (0..m).map(|_| sample_gem(theta, 1, &mut rng).unwrap()[0]).collect();
            let e = Estimate::from_samples(&x);
            assert!((e.mean - mean).abs() < 3.0 * (var / m as f64).sqrt() * 1.5, "theta={theta}: {e:?}");
        }
        for _ in 0..1000 {
            let p = sample_gem(0.7, 50, &mut rng).unwrap();
            assert!(p.iter().all(|&v| v > 0.0));
            assert!(p.iter().sum::<f64>() <= 1.0 + 1e-12);
            let q = sample_gem(0.7, 5, &mut rng).unwrap();
            assert!(q.iter().sum::<f64>() < 1.0);
        }
        assert!(sample_gem(0.0, 3, &mut rng).is_err());
    }

    #[test]
    fn sum_squares_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for theta in [1.0, 2.0] {
            let r = pd_sum_squares_reference(theta, 40_000, 100, &mut rng).unwrap();
            let exact = 1.0 / (1.0 + theta);
            assert!((r.estimate.mean - exact).abs() < 3.0 * r.estimate.stderr + 1e-6, "{r:?}");
            assert!(r.truncation_residual < 1e-6);
        }
        // truncation only drops positive mass
        let mut last = 0.0;
        for m in [1, 3, 10, 30] {
            let r = pd_sum_squares_reference(1.0, 2000, m, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let p = sample_gem(1.0, 40, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let head: f64 = p[..m].iter().map(|x| x * x).sum();
            assert!(head >= last);
            last = head;
            assert!(r.estimate.mean <= 0.5 + 4.0 * r.estimate.stderr);
        }
    }

    #[test]
    fn ks_same_and_different() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a: Vec<f64> = (0..3000).map(|_| rng.gen()).collect();
        let b: Vec<f64> = (0..3000).map(|_| rng.gen()).collect();
        let c: Vec<f64> = (0..3000).map(|_| rng.gen::<f64>().powi(2)).collect();
        assert!(ks_two_sample(&a, &b).unwrap().p_value > 0.001);
        assert!(ks_two_sample(&a, &c).unwrap().p_value < 1e-6);
        let d = ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(d.distance, 0.0);
    }

    #[test]
    fn pd_self_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let spectra: Vec<CycleSpectrum> = (0..2000)
            .map(|_| {
                let p = sample_pd(1.0, 200, &mut rng).unwrap();
                // integer lengths on a fine grid, total ~ 10^6
                let lengths: Vec<usize> = p.iter().map(|x| (x * 1e6).round() as usize).filter(|&l| l > 0).collect();
                CycleSpectrum::new(lengths).unwrap()
            })
            .collect();
        let r = pd_fit_test(&spectra, 1.0, 1.0, 3, 4000, &mut rng).unwrap();
        assert!(r.coordinates.iter().all(|c| c.p_value > 0.01), "{r:?}");
        assert!(r.sum_squares_p_value > 0.01);
        assert!(pd_fit_test(&spectra, 0.0, 1.0, 3, 100, &mut rng).is_err());
        assert!(r.to_table().contains("sum of squares"));
    }

    #[test]
    fn giant_cycle_examples() {
        let s = vec![CycleSpectrum::new(vec![90, 10]).unwrap()];
        let r = giant_cycle_test(&s, 0.9).unwrap();
        assert!((r.mean - 1.0).abs() < 1e-15);
        assert!(giant_cycle_test(&s, -1.0).is_err());
    }

    #[test]
    fn gof_merging() {
        let (_, p, dof) = chi_square_gof(&[50, 50], &[0.5, 0.5]);
        assert_eq!(dof, 1);
        assert!((p - 1.0).abs() < 1e-12);
        let (stat, _, dof) = chi_square_gof(&[10, 0, 0, 90], &[0.1, 0.001, 0.001, 0.898]);
        assert_eq!(dof, 1);
        assert!(stat.is_finite());
        let (_, p, _) = chi_square_two_sample(&[100, 200, 300], &[100, 200, 300]);
        assert!((p - 1.0).abs() < 1e-12);
    }
}
