//! Small numerical kernels: log-domain accumulation, Hurwitz zeta with a
//! certified Euler-Maclaurin remainder, adaptive quadrature and
//! acceleration of alternating series.

use crate::error::{Error, Result};

/// `log(sum(exp(v)))` over a slice. Returns `-inf` for an empty slice or when
/// every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `exp(x) - 1 - x` without cancellation for small `|x|`.
pub fn expm1_minus_x(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let mut term = x * x / 2.0;
        let mut sum = term;
        let mut k = 2.0;
        while term.abs() > 1e-18 * sum.abs() {
            k += 1.0;
            term *= x / k;
            sum += term;
        }
        sum
    } else {
        x.exp_m1() - x
    }
}

// B_2, B_4, ..., B_20
const BERNOULLI_EVEN: [f64; 10] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
];

/// A value together with a bound on its absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounded {
    pub value: f64,
    pub error: f64,
}

/// Hurwitz zeta `sum_{n >= 0} (q + n)^{-s}` for `s > 1`, `q > 0`.
///
/// Direct summation of the first terms followed by an Euler-Maclaurin tail.
/// `x^{-s}` is completely monotone, so the remainder after the last Bernoulli
/// term is bounded by the magnitude of the first omitted term.
pub fn hurwitz_zeta(s: f64, q: f64) -> Result<Bounded> {
    if !(s > 1.0) || !(q > 0.0) || !s.is_finite() || !q.is_finite() {
        return Err(Error::Domain(format!(
            "hurwitz zeta needs s > 1 and q > 0, got s={s}, q={q}"
        )));
    }
    const DIRECT: usize = 12;
    let mut head = 0.0;
    for n in 0..DIRECT {
        head += (q + n as f64).powf(-s);
    }
    let a = q + DIRECT as f64;
    let mut tail = a.powf(1.0 - s) / (s - 1.0) + 0.5 * a.powf(-s);
    // rising factorial (s)_{2k-1} / (2k)! times a^{-s-2k+1}
    let mut coef = s / a.powf(s + 1.0) / 2.0; // k = 1: (s)_1 / 2! * a^{-s-1}
    let mut error = f64::INFINITY;
    let terms = BERNOULLI_EVEN.len() - 1;
    for (k, b) in BERNOULLI_EVEN.iter().enumerate() {
        let term = b * coef;
        if k == terms {
            error = term.abs();
            break;
        }
        tail += term;
        let kk = (k + 1) as f64; // current k (1-based)
        // advance from k to k+1: multiply by (s+2k-1)(s+2k) / ((2k+1)(2k+2) a^2)
        coef *= (s + 2.0 * kk - 1.0) * (s + 2.0 * kk) / ((2.0 * kk + 1.0) * (2.0 * kk + 2.0) * a * a);
    }
    Ok(Bounded {
        value: head + tail,
        error: error + 4.0 * f64::EPSILON * (head + tail),
    })
}

/// Riemann zeta for `s > 1`.
pub fn zeta(s: f64) -> Result<Bounded> {
    hurwitz_zeta(s, 1.0)
}

/// Adaptive Simpson quadrature on `[a, b]` with absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<Bounded> {
    if a == b {
        return Ok(Bounded { value: 0.0, error: 0.0 });
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut error = 0.0;
    let value = simpson_step(f, a, b, fa, fm, fb, whole, tol, 160, &mut error)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite integral on [{a}, {b}]")));
    }
    Ok(Bounded { value, error })
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    error: &mut f64,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // a difference at roundoff level cannot be refined further
    let roundoff = 64.0 * f64::EPSILON * (left.abs() + right.abs());
    if delta.abs() <= 15.0 * tol || delta.abs() <= roundoff || (depth == 0 && delta.abs() <= 1e3 * tol.max(1e-300)) {
        *error += delta.abs() / 15.0;
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Numeric(format!(
            "adaptive quadrature did not converge on [{a}, {b}] (residual {delta:e})"
        )));
    }
    let l = simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, error)?;
    let r = simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, error)?;
    Ok(l + r)
}

/// Sum of an alternating series of terms with smoothly varying magnitude,
/// accelerated by repeated averaging of partial sums (Euler transform).
/// The error estimate is the change between the two deepest levels.
pub fn accelerate_alternating(terms: &[f64]) -> Bounded {
    let mut partial: Vec<f64> = terms
        .iter()
        .scan(0.0, |acc, t| {
            *acc += t;
            Some(*acc)
        })
        .collect();
    if partial.len() < 2 {
        let v = partial.first().copied().unwrap_or(0.0);
        return Bounded { value: v, error: f64::INFINITY };
    }
    let mut previous = partial[partial.len() - 1];
    while partial.len() > 1 {
        previous = partial[partial.len() - 1];
        partial = partial.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let value = partial[0];
    Bounded { value, error: (value - previous).abs() }
}

/// Survival function of the Kolmogorov distribution, `P(K > x)`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.3 {
        // small-x form converges fast here
        let c = std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let mut cdf = 0.0;
        for k in 1..=50 {
            let odd = (2 * k - 1) as f64;
            cdf += (-odd * odd * c).exp();
        }
        return 1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * cdf;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Upper tail `P(X > x)` of a chi-square variable with `dof` degrees of freedom.
pub fn chi_square_survival(x: f64, dof: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    match ChiSquared::new(dof) {
        Ok(dist) => dist.sf(x),
        Err(_) => f64::NAN,
    }
}
