//! Jump kernels `exp(-xi)`, their dispersion relations `eps(k)`, the
//! periodized kernel on a torus and the critical densities
//!
//! ```text
//! rho_c       = sum_j exp(-alpha_j) ∫ exp(-j eps(k)) dk
//! rho_c(box)  = sum_j exp(-alpha_j) |box|^{-1} sum_{k != 0} exp(-j eps(k))
//! ```
//!
//! The Gaussian family `xi(x) = |x|^2 / (4 beta) + (d/2) log(4 pi beta)` has
//! `eps(k) = 4 pi^2 beta |k|^2` and is handled in closed form. The
//! one-dimensional power-law family `exp(-xi(x)) ∝ (1 + |x|)^{-gamma}` is an
//! experimental extension point: its dispersion comes from oscillatory
//! quadrature and its Fourier positivity is checked on a grid at
//! construction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, Bounded};
use crate::weights::{CycleWeightModel, WeightRegime};

/// Absolute tolerance on the neglected images of the periodized kernel.
pub const IMAGE_TOL: f64 = 1e-14;
/// Images are summed over `|z_i| <= MAX_IMAGES` per coordinate at most.
pub const MAX_IMAGES: i64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian { beta: f64 },
    PowerLaw1d { exponent: f64 },
}

/// Lower bound `eps(k) >= a |k|^eta` for small `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthCertificate {
    pub a: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpKernel {
    dim: usize,
    family: KernelFamily,
    growth: GrowthCertificate,
}

impl JumpKernel {
    pub fn gaussian(dim: usize, beta: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        Ok(Self {
            dim,
            family: KernelFamily::Gaussian { beta },
            growth: GrowthCertificate { a: 4.0 * PI * PI * beta, eta: 2.0 },
        })
    }

    /// Power-law kernel in one dimension with `1 < exponent < 2`.
    ///
    /// Without a certificate, `eta = exponent - 1` and `a` is half the
    /// smallest observed ratio `eps(k) / k^eta` on `(0, 1/2]`. A supplied
    /// certificate is checked on the same grid.
    pub fn power_law_1d(exponent: f64, growth: Option<GrowthCertificate>) -> Result<Self> {
        if !(exponent > 1.0 && exponent < 2.0) {
            return Err(Error::Config(format!(
                "power-law exponent must lie in (1, 2), got {exponent}"
            )));
        }
        let provisional = Self {
            dim: 1,
            family: KernelFamily::PowerLaw1d { exponent },
            growth: GrowthCertificate { a: 0.0, eta: exponent - 1.0 },
        };
        // positivity of the Fourier transform on a log grid
        for e in -24..=12 {
            let k = 10f64.powf(e as f64 / 4.0);
            let eps = provisional.dispersion_norm(k)?;
            if !(eps > 0.0) || !eps.is_finite() {
                return Err(Error::Domain(format!(
                    "Fourier transform of the power-law kernel is not positive at k={k} (eps={eps})"
                )));
            }
        }
        let grid: Vec<f64> = (1..=40).map(|i| 0.5 * 10f64.powf(-(i as f64) / 8.0)).collect();
        let observed: Vec<(f64, f64)> = grid
            .iter()
            .map(|&k| provisional.dispersion_norm(k).map(|e| (k, e)))
            .collect::<Result<_>>()?;
        let growth = match growth {
            Some(g) => {
                if !(g.a > 0.0) || !(g.eta > 0.0 && g.eta < 1.0) {
                    return Err(Error::Config(format!(
                        "growth certificate needs a > 0 and 0 < eta < d = 1, got {g:?}"
                    )));
                }
                for &(k, e) in &observed {
                    if e < g.a * k.powf(g.eta) {
                        return Err(Error::Domain(format!(
                            "growth certificate fails at k={k}: eps={e} < a k^eta = {}",
                            g.a * k.powf(g.eta)
                        )));
                    }
                }
                g
            }
            None => {
                let eta = exponent - 1.0;
                let a = observed
                    .iter()
                    .map(|&(k, e)| e / k.powf(eta))
                    .fold(f64::INFINITY, f64::min);
                GrowthCertificate { a: 0.5 * a, eta }
            }
        };
        Ok(Self { growth, ..provisional })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn growth(&self) -> GrowthCertificate {
        self.growth
    }

    pub fn beta(&self) -> Option<f64> {
        match self.family {
            KernelFamily::Gaussian { beta } => Some(beta),
            KernelFamily::PowerLaw1d { .. } => None,
        }
    }

    /// `exp(-xi(x))` on the whole space.
    pub fn density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match self.family {
            KernelFamily::Gaussian { beta } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                (4.0 * PI * beta).powf(-(self.dim as f64) / 2.0) * (-r2 / (4.0 * beta)).exp()
            }
            KernelFamily::PowerLaw1d { exponent } => {
                0.5 * (exponent - 1.0) * (1.0 + x[0].abs()).powf(-exponent)
            }
        }
    }

    /// `∫ exp(-xi)` over the whole space: closed form for the Gaussian,
    /// quadrature plus an analytic tail for the power law.
    pub fn total_mass(&self) -> Result<f64> {
        match self.family {
            KernelFamily::Gaussian { .. } => Ok(1.0),
            KernelFamily::PowerLaw1d { exponent } => {
                let c = exponent - 1.0;
                let cut: f64 = 1e6;
                // x = e^u - 1
                let f = |u: f64| 0.5 * c * (u * (1.0 - exponent)).exp();
                let head = numeric::integrate(&f, 0.0, (1.0 + cut).ln(), 1e-14)?;
                let tail = 0.5 * (1.0 + cut).powf(1.0 - exponent);
                Ok(2.0 * (head.value + tail))
            }
        }
    }

    /// `eps(k)` for a wave vector `k`.
    pub fn dispersion(&self, k: &[f64]) -> Result<f64> {
        if k.len() != self.dim {
            return Err(Error::Config(format!(
                "wave vector has {} components, kernel dimension is {}",
                k.len(),
                self.dim
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("wave vector must be finite".into()));
        }
        let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.dispersion_norm(norm)
    }

    /// `eps` as a function of `|k|` (both families are isotropic).
    pub fn dispersion_norm(&self, knorm: f64) -> Result<f64> {
        match self.family {
            KernelFamily::Gaussian { beta } => Ok(4.0 * PI * PI * beta * knorm * knorm),
            KernelFamily::PowerLaw1d { exponent } => power_law_dispersion(exponent, knorm),
        }
    }

    /// Upper bound on `exp(-eps(k))` for power-law kernels, `2 g (g - 1) / (2 pi k)^2`.
    fn power_law_fourier_bound(exponent: f64, knorm: f64) -> f64 {
        2.0 * exponent * (exponent - 1.0) / (2.0 * PI * knorm).powi(2)
    }
}

fn rising(x: f64, n: usize) -> f64 {
    (0..n).map(|i| x + i as f64).product()
}

/// `eps(k) = -log((g-1) ∫_0^∞ cos(2 pi k x) (1 + x)^{-g} dx)`.
fn power_law_dispersion(g: f64, knorm: f64) -> Result<f64> {
    let k = knorm.abs();
    if k == 0.0 {
        return Ok(0.0);
    }
    let c = g - 1.0;
    let w = 2.0 * PI * k;
    const PIECES: usize = 64;
    let zero = |m: usize| (0.5 * PI + m as f64 * PI) / w;

    let result = if w < 1.0 {
        // 1 - phi = c [ ∫_0^X (1 - cos wx) h + ∫_X^∞ h - ∫_X^∞ cos(wx) h ], X = first zero
        let h = |x: f64| (1.0 + x).powf(-g);
        let x0 = zero(0);
        let i2 = (1.0 + x0).powf(1.0 - g) / c;
        let i1 = numeric::integrate(&|x: f64| 2.0 * (0.5 * w * x).sin().powi(2) * h(x), 0.0, x0, 1e-15 * i2)?;
        let terms: Vec<f64> = (0..PIECES)
            .map(|m| {
                numeric::integrate(&|x: f64| (w * x).cos() * h(x), zero(m), zero(m + 1), 1e-16 * i2)
                    .map(|b| b.value)
            })
            .collect::<Result<_>>()?;
        let i3 = numeric::accelerate_alternating(&terms);
        let omp = c * (i1.value + i2 - i3.value);
        let err = c * (i1.error + i3.error);
        if err > 1e-9 * omp {
            return Err(Error::Numeric(format!(
                "power-law dispersion at k={k}: quadrature error {err:e} too large"
            )));
        }
        -(-omp).ln_1p()
    } else if w >= 50.0 {
        // asymptotic series sum_n (-1)^{n+1} (g)_{2n-1} / w^{2n}
        let mut sum = 0.0;
        let mut last = f64::INFINITY;
        let mut converged = false;
        for n in 1..200 {
            let t = rising(g, 2 * n - 1) / w.powi(2 * n as i32);
            if t > last {
                break;
            }
            sum += if n % 2 == 1 { t } else { -t };
            last = t;
            if t < 1e-16 * sum.abs() {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numeric(format!("asymptotic dispersion series failed at k={k}")));
        }
        -(c * sum).ln()
    } else {
        // phi = c (g - J) / w^2 with J = ∫_0^∞ cos(wx) h''(x) dx
        let h2 = |x: f64| g * (g + 1.0) * (1.0 + x).powf(-g - 2.0);
        let first = numeric::integrate(&|x: f64| (w * x).cos() * h2(x), 0.0, zero(0), 1e-16)?;
        let mut terms = vec![first.value];
        for m in 0..PIECES {
            terms.push(
                numeric::integrate(&|x: f64| (w * x).cos() * h2(x), zero(m), zero(m + 1), 1e-17)?.value,
            );
        }
        // the leading piece is not part of the alternating pattern
        let rest = numeric::accelerate_alternating(&terms[1..]);
        let j = terms[0] + rest.value;
        let phi = c * (g - j) / (w * w);
        if rest.error > 1e-10 * phi * w * w {
            return Err(Error::Numeric(format!(
                "power-law dispersion at k={k}: quadrature error {:e} too large",
                rest.error
            )));
        }
        if !(phi > 0.0) {
            return Err(Error::Numeric(format!("non-positive Fourier transform {phi} at k={k}")));
        }
        -phi.ln()
    };
    if !result.is_finite() || result < 0.0 {
        return Err(Error::Numeric(format!("dispersion at k={k} evaluated to {result}")));
    }
    Ok(result)
}

/// Cubic box `[0, L)^d` with Fourier modes `k ∈ Z^d / L`, `|k| <= k_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxGeometry {
    side: f64,
    dim: usize,
    k_max: f64,
}

impl BoxGeometry {
    pub fn new(side: f64, dim: usize, k_max: f64) -> Result<Self> {
        if !(side > 0.0) || !side.is_finite() {
            return Err(Error::Config(format!("box side must be positive, got {side}")));
        }
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if !(k_max >= 0.0) {
            return Err(Error::Config(format!("mode cutoff must be nonnegative, got {k_max}")));
        }
        Ok(Self { side, dim, k_max })
    }

    /// Box whose mode cutoff keeps exactly the modes with `eps(k) <= eps_cut`.
    pub fn with_energy_cutoff(kernel: &JumpKernel, side: f64, eps_cut: f64) -> Result<Self> {
        let k_max = match kernel.family() {
            KernelFamily::Gaussian { beta } => (eps_cut / (4.0 * PI * PI * beta)).sqrt(),
            KernelFamily::PowerLaw1d { exponent } => {
                // exp(-eps) ~ g (g - 1) / (2 pi k)^2 for large k
                let k = (exponent * (exponent - 1.0) * eps_cut.exp()).sqrt() / (2.0 * PI);
                if k * side > 1e7 {
                    return Err(Error::Config(format!(
                        "energy cutoff {eps_cut} needs k_max ~ {k:e} for the power-law kernel; set k_max explicitly"
                    )));
                }
                k
            }
        };
        Self::new(side, kernel.dim(), k_max)
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    /// Largest integer `|n|^2` with `|n| / L <= k_max`.
    pub fn max_norm2(&self) -> u64 {
        let r = self.k_max * self.side;
        let mut m = (r * r).floor() as u64;
        // guard against rounding at the boundary
        while ((m + 1) as f64).sqrt() <= r * (1.0 + 1e-15) {
            m += 1;
        }
        while m > 0 && (m as f64).sqrt() > r * (1.0 + 1e-15) {
            m -= 1;
        }
        m
    }

    /// Reduce a coordinate to `[-L/2, L/2)`.
    pub fn reduce(&self, x: f64) -> f64 {
        let l = self.side;
        let y = x - l * (x / l + 0.5).floor();
        if y >= 0.5 * l { y - l } else { y }
    }
}

/// Number of integer points of `Z^d` on each sphere `|n|^2 = m`, `m <= max_norm2`.
/// Entry `m` of the result is the count (zero for empty spheres).
pub fn lattice_shell_counts(dim: usize, max_norm2: u64) -> Vec<u64> {
    let m = max_norm2 as usize;
    let mut one = vec![0u64; m + 1];
    let mut n = 0usize;
    while n * n <= m {
        one[n * n] += if n == 0 { 1 } else { 2 };
        n += 1;
    }
    let squares: Vec<(usize, u64)> = one.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| (i, c)).collect();
    let mut acc = one.clone();
    for _ in 1..dim {
        let mut next = vec![0u64; m + 1];
        for (i, &c) in acc.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for &(s, cs) in &squares {
                if i + s > m {
                    break;
                }
                next[i + s] += c * cs;
            }
        }
        acc = next;
    }
    acc
}

/// `exp(-xi_box(x)) = sum_{z ∈ Z^d} exp(-xi(x - L z))` with the neglected
/// images below `IMAGE_TOL`.
pub fn periodized_jump_weight(kernel: &JumpKernel, geom: &BoxGeometry, x: &[f64]) -> Result<f64> {
    if x.len() != kernel.dim() || geom.dim() != kernel.dim() {
        return Err(Error::Config("dimension mismatch between kernel, box and point".into()));
    }
    let l = geom.side();
    match kernel.family() {
        KernelFamily::Gaussian { beta } => {
            let zmax = gaussian_image_count(beta, l, kernel.dim())?;
            let norm = (4.0 * PI * beta).powf(-0.5);
            let mut w = 1.0;
            for &xi in x {
                let r = geom.reduce(xi);
                let mut s = 0.0;
                for z in -zmax..=zmax {
                    let d = r - l * z as f64;
                    s += (-d * d / (4.0 * beta)).exp();
                }
                w *= norm * s;
            }
            Ok(w)
        }
        KernelFamily::PowerLaw1d { exponent } => {
            let g = exponent;
            let c = 0.5 * (g - 1.0);
            let r = geom.reduce(x[0]);
            const Z: i64 = 2;
            let mut s = 0.0;
            for z in -Z..=Z {
                s += (1.0 + (r - l * z as f64).abs()).powf(-g);
            }
            let q0 = (Z + 1) as f64;
            let right = numeric::hurwitz_zeta(g, q0 + (1.0 - r) / l)?;
            let left = numeric::hurwitz_zeta(g, q0 + (1.0 + r) / l)?;
            let tail = l.powf(-g) * (right.value + left.value);
            let err = c * l.powf(-g) * (right.error + left.error);
            if err > IMAGE_TOL {
                return Err(Error::Numeric(format!("image tail error {err:e} above tolerance")));
            }
            Ok(c * (s + tail))
        }
    }
}

/// `xi_box(x) = -log exp(-xi_box(x))`.
pub fn periodized_xi(kernel: &JumpKernel, geom: &BoxGeometry, x: &[f64]) -> Result<f64> {
    Ok(-periodized_jump_weight(kernel, geom, x)?.ln())
}

/// Number of images per coordinate needed for the Gaussian image sum.
pub(crate) fn gaussian_image_count(beta: f64, side: f64, dim: usize) -> Result<i64> {
    let norm = (4.0 * PI * beta).powf(-0.5);
    // largest per-coordinate sum is at r = 0
    let full: f64 = norm * (1.0 + 2.0 * (1..=MAX_IMAGES).map(|z| (-(side * z as f64).powi(2) / (4.0 * beta)).exp()).sum::<f64>());
    let tail_bound = |z: i64| {
        let start = (z as f64 + 0.5) * side;
        let t = (-start * start / (4.0 * beta)).exp();
        let ratio = (-side * side / (2.0 * beta)).exp();
        2.0 * norm * t / (1.0 - ratio)
    };
    let prefactor = dim as f64 * full.max(1.0).powi(dim as i32 - 1);
    for z in 0..=MAX_IMAGES {
        if prefactor * tail_bound(z) <= IMAGE_TOL {
            return Ok(z);
        }
    }
    // smallest side that would work with MAX_IMAGES images
    let mut lo = side;
    let mut hi = side * 2.0;
    let ok = |l: f64| {
        let start = (MAX_IMAGES as f64 + 0.5) * l;
        let ratio = (-l * l / (2.0 * beta)).exp();
        prefactor * 2.0 * norm * (-start * start / (4.0 * beta)).exp() / (1.0 - ratio) <= IMAGE_TOL
    };
    while !ok(hi) {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) { hi = mid } else { lo = mid }
    }
    Err(Error::Config(format!(
        "box side {side} too small for image tolerance {IMAGE_TOL:e} at beta={beta}; minimal admissible side is {hi:.6}"
    )))
}

/// A critical density together with its truncation residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalDensity {
    pub value: f64,
    pub residual: f64,
}

/// Infinite-volume critical density.
pub fn critical_density(kernel: &JumpKernel, weights: &CycleWeightModel, tol: f64) -> Result<CriticalDensity> {
    let d = kernel.dim() as f64;
    let eta = kernel.growth().eta;
    if d <= eta {
        return Err(Error::Domain(format!(
            "critical density diverges: dimension {d} does not exceed growth exponent {eta}"
        )));
    }
    match kernel.family() {
        KernelFamily::Gaussian { beta } => {
            let prefactor = (4.0 * PI * beta).powf(-d / 2.0);
            let series = weights.dirichlet_series(d / 2.0)?;
            let value = prefactor * series.value;
            let residual = prefactor * series.error;
            if residual > tol * value.abs() {
                return Err(Error::Numeric(format!(
                    "critical density residual {residual:e} above tolerance {tol:e}"
                )));
            }
            Ok(CriticalDensity { value, residual })
        }
        KernelFamily::PowerLaw1d { exponent } => power_law_critical_density(kernel, exponent, weights, tol),
    }
}

fn power_law_critical_density(
    kernel: &JumpKernel,
    exponent: f64,
    weights: &CycleWeightModel,
    tol: f64,
) -> Result<CriticalDensity> {
    let GrowthCertificate { a, eta } = kernel.growth();
    let wsup = weights.sup_weight();
    let small_bound = |kmin: f64| -> Result<f64> {
        Ok(match weights.regime() {
            WeightRegime::Logarithmic { gamma } if *gamma > 1.0 => 2.0 * kmin * numeric::zeta(*gamma)?.value,
            WeightRegime::Logarithmic { gamma } => {
                let p = 1.0 + eta * (gamma - 1.0);
                2.0 * statrs::function::gamma::gamma(1.0 - gamma) * a.powf(gamma - 1.0) * kmin.powf(p) / p
            }
            _ => 2.0 * wsup * kmin.powf(1.0 - eta) / (a * (1.0 - eta)),
        })
    };
    let large_bound = |kmax: f64| -> Result<f64> {
        let phi = (-kernel.dispersion_norm(kmax)?).exp();
        let b = JumpKernel::power_law_fourier_bound(exponent, 1.0);
        Ok(2.0 * wsup / (1.0 - phi) * b / kmax)
    };
    // k = e^u; integrand 2 G(eps(k)) k
    let integrand = |u: f64| -> f64 {
        let k = u.exp();
        match kernel.dispersion_norm(k).and_then(|e| weights.geometric_sum(e)) {
            Ok(g) => 2.0 * g.value * k,
            Err(_) => f64::NAN,
        }
    };
    let mut kmin: f64 = 1e-3;
    let mut kmax: f64 = 1e3;
    let mut head = numeric::integrate(&integrand, kmin.ln(), kmax.ln(), tol * 1e-3)?;
    let mut guard = 0;
    loop {
        let sb = small_bound(kmin)?;
        let lb = large_bound(kmax)?;
        let target = 0.25 * tol * head.value;
        if sb <= target && lb <= target {
            let residual = sb + lb + head.error;
            if residual > tol * head.value {
                return Err(Error::Numeric(format!("critical density residual {residual:e} above tolerance")));
            }
            return Ok(CriticalDensity { value: head.value, residual });
        }
        guard += 1;
        if guard > 40 {
            return Err(Error::Numeric("power-law critical density: tail bounds did not reach tolerance".into()));
        }
        let abs_tol = tol * 1e-3 * head.value;
        if sb > target {
            let next = kmin * 1e-2;
            let extra = numeric::integrate(&integrand, next.ln(), kmin.ln(), abs_tol)?;
            head = Bounded { value: head.value + extra.value, error: head.error + extra.error };
            kmin = next;
        }
        if lb > target {
            let next = kmax * 1e2;
            let extra = numeric::integrate(&integrand, kmax.ln(), next.ln(), abs_tol)?;
            head = Bounded { value: head.value + extra.value, error: head.error + extra.error };
            kmax = next;
        }
    }
}

/// Riemann-sum critical density over the box modes with a report of the
/// neglected `j` and `|k| > k_max` contributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteVolumeDensity {
    pub value: f64,
    /// Bound on the neglected cycle lengths `j > j_cutoff`.
    pub j_residual: f64,
    /// Bound on the neglected modes `|k| > k_max`.
    pub mode_residual: f64,
}

/// `rho_c(box)`. With `j_cutoff = None` the `j`-series is summed in closed
/// form (or with a certified remainder); otherwise it stops at `j_cutoff`.
pub fn finite_volume_critical_density(
    kernel: &JumpKernel,
    weights: &CycleWeightModel,
    geom: &BoxGeometry,
    j_cutoff: Option<usize>,
) -> Result<FiniteVolumeDensity> {
    if geom.dim() != kernel.dim() {
        return Err(Error::Config("dimension mismatch between kernel and box".into()));
    }
    let l = geom.side();
    let vol = geom.volume();
    let counts = lattice_shell_counts(kernel.dim(), geom.max_norm2());
    let wsup = weights.sup_weight();
    let mut value = 0.0;
    let mut j_residual = 0.0;
    for (m, &c) in counts.iter().enumerate().skip(1) {
        if c == 0 {
            continue;
        }
        let eps = kernel.dispersion_norm((m as f64).sqrt() / l)?;
        let g = match j_cutoff {
            None => {
                let b = weights.geometric_sum(eps)?;
                j_residual += c as f64 * b.error;
                b.value
            }
            Some(jc) => {
                let mut s = 0.0;
                for j in 1..=jc {
                    s += weights.weight(j) * (-(j as f64) * eps).exp();
                }
                let q = (-eps).exp();
                j_residual += c as f64 * wsup * q.powf(jc as f64 + 1.0) / (1.0 - q);
                s
            }
        };
        value += c as f64 * g;
    }
    let mode_residual = match kernel.family() {
        KernelFamily::Gaussian { beta } => {
            // for |n| > R: exp(-c n^2) <= exp(-c t R^2) exp(-c (1 - t) n^2), 0 < t < 1
            let r = geom.k_max() * l;
            let cc = 4.0 * PI * PI * beta / (l * l);
            let d = kernel.dim() as f64;
            let theta_sum = |a: f64| 1.0 + 2.0 * (1..).map(|n: u64| (-a * (n * n) as f64).exp()).take_while(|t| *t > 1e-300).sum::<f64>();
            let eps_r = cc * r * r;
            let gfactor = if eps_r > 0.0 { wsup / -(-eps_r).exp_m1() } else { f64::INFINITY };
            let best = (1..20)
                .map(|i| {
                    let t = i as f64 / 20.0;
                    (-t * eps_r).exp() * theta_sum((1.0 - t) * cc).powf(d)
                })
                .fold(f64::INFINITY, f64::min);
            gfactor * best / vol
        }
        KernelFamily::PowerLaw1d { exponent } => {
            let r = geom.k_max() * l;
            if r < 1.0 {
                f64::INFINITY
            } else {
                let phi_r = (-kernel.dispersion_norm(geom.k_max())?).exp();
                let b = JumpKernel::power_law_fourier_bound(exponent, 1.0) * l * l;
                2.0 * wsup / (1.0 - phi_r) * b / r.floor() / vol
            }
        }
    };
    Ok(FiniteVolumeDensity { value: value / vol, j_residual: j_residual / vol, mode_residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ewens(alpha: f64) -> CycleWeightModel {
        CycleWeightModel::constant(alpha).unwrap()
    }

    #[test]
    fn gaussian_dispersion_examples() {
        let k3 = JumpKernel::gaussian(3, 1.0 / (4.0 * PI)).unwrap();
        assert_eq!(k3.dispersion(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((k3.dispersion(&[1.0, 0.0, 0.0]).unwrap() - PI).abs() < 1e-14);
        let k1 = JumpKernel::gaussian(1, 1.0).unwrap();
        assert!((k1.dispersion(&[0.5]).unwrap() - PI * PI).abs() < 1e-13);
        assert!(k1.dispersion(&[0.5, 0.1]).is_err());
        assert!(k1.dispersion(&[f64::NAN]).is_err());
        for k in [0.1, 0.7, 2.3] {
            assert_eq!(k3.dispersion(&[k, -0.2, 0.4]).unwrap(), k3.dispersion(&[-k, 0.2, -0.4]).unwrap());
        }
    }

    #[test]
    fn gaussian_dispersion_matches_fourier_quadrature() {
        // e^{-eps(k)} = ∫ cos(2 pi k x) e^{-xi(x)} dx in d = 1
        let beta = 0.3;
        let kern = JumpKernel::gaussian(1, beta).unwrap();
        for k in [0.2, 0.5, 1.1] {
            let f = |x: f64| (2.0 * PI * k * x).cos() * kern.density(&[x]);
            let q = numeric::integrate(&f, -20.0, 20.0, 1e-14).unwrap().value;
            let eps = kern.dispersion(&[k]).unwrap();
            assert!((q - (-eps).exp()).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn periodized_examples() {
        let kern = JumpKernel::gaussian(3, 1.0 / (4.0 * PI)).unwrap();
        let geom = BoxGeometry::new(10.0, 3, 1.0).unwrap();
        let w0 = periodized_jump_weight(&kern, &geom, &[0.0, 0.0, 0.0]).unwrap();
        assert!((w0 - 1.0).abs() < 1e-14);
        let x = [1.3, -2.2, 4.9];
        let mx = [-1.3, 2.2, -4.9];
        let shifted = [1.3 + 10.0, -2.2, 4.9];
        let a = periodized_jump_weight(&kern, &geom, &x).unwrap();
        assert!((a - periodized_jump_weight(&kern, &geom, &mx).unwrap()).abs() < 1e-15);
        assert!((a - periodized_jump_weight(&kern, &geom, &shifted).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn periodized_small_box_oracle() {
        // direct image sum over a wide window as oracle
        let beta = 0.5;
        let kern = JumpKernel::gaussian(2, beta).unwrap();
        let geom = BoxGeometry::new(1.5, 2, 1.0).unwrap();
        let x = [0.4, -0.7];
        let mut direct = 0.0;
        for z1 in -40i64..=40 {
            for z2 in -40i64..=40 {
                let y = [x[0] - 1.5 * z1 as f64, x[1] - 1.5 * z2 as f64];
                direct += kern.density(&y);
            }
        }
        let w = periodized_jump_weight(&kern, &geom, &x).unwrap();
        assert!((w - direct).abs() < 1e-14);
        // integrates to one over the box
        let n = 200;
        let h = 1.5 / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = [(i as f64 + 0.5) * h - 0.75, (j as f64 + 0.5) * h - 0.75];
                total += periodized_jump_weight(&kern, &geom, &p).unwrap() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-10, "total {total}");
    }

    #[test]
    fn periodized_box_too_small_reports_minimum() {
        let kern = JumpKernel::gaussian(1, 50.0).unwrap();
        let geom = BoxGeometry::new(0.5, 1, 1.0).unwrap();
        match periodized_jump_weight(&kern, &geom, &[0.1]) {
            Err(Error::Config(msg)) => assert!(msg.contains("minimal admissible side")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    fn brute_series(beta: f64, weights: &CycleWeightModel) -> f64 {
        let n = 4_000_000usize;
        let head: f64 = (1..=n).rev().map(|j| weights.weight(j) * (j as f64).powf(-1.5)).sum();
        let s = match weights.regime() {
            WeightRegime::Logarithmic { gamma } => 1.5 + gamma,
            _ => 1.5,
        };
        let tail = (n as f64 + 0.5).powf(1.0 - s) / (s - 1.0);
        (4.0 * PI * beta).powf(-1.5) * (head + tail)
    }

    #[test]
    fn critical_density_examples() {
        let kern = JumpKernel::gaussian(3, 1.0 / (4.0 * PI)).unwrap();
        let r = critical_density(&kern, &ewens(0.0), 1e-10).unwrap();
        assert!((r.value - 2.612_375_348_685_488).abs() < 1e-12);
        assert!((r.value - brute_series(1.0 / (4.0 * PI), &ewens(0.0))).abs() < 1e-11);
        let r = critical_density(&kern, &ewens(2f64.ln()), 1e-10).unwrap();
        assert!((r.value - 1.306_187_674_342_744).abs() < 1e-12);
        let lg = CycleWeightModel::logarithmic(1.0).unwrap();
        let r = critical_density(&kern, &lg, 1e-10).unwrap();
        assert!((r.value - 1.341_487_257_250_917).abs() < 1e-12);
        assert!((r.value - brute_series(1.0 / (4.0 * PI), &lg)).abs() < 1e-11);
    }

    #[test]
    fn critical_density_rejects_low_dimension() {
        let kern = JumpKernel::gaussian(2, 1.0).unwrap();
        assert!(matches!(critical_density(&kern, &ewens(0.0), 1e-8), Err(Error::Domain(_))));
    }

    #[test]
    fn critical_density_beta_scaling() {
        let w = CycleWeightModel::asymptotic(0.3, vec![(1, -0.5), (2, 1.0)]).unwrap();
        let scaled: Vec<f64> = [0.1, 1.0, 10.0]
            .iter()
            .map(|&b| {
                let k = JumpKernel::gaussian(3, b).unwrap();
                critical_density(&k, &w, 1e-12).unwrap().value * (4.0 * PI * b).powf(1.5)
            })
            .collect();
        assert!((scaled[0] - scaled[1]).abs() < 1e-10 * scaled[1]);
        assert!((scaled[2] - scaled[1]).abs() < 1e-10 * scaled[1]);
    }

    #[test]
    fn critical_density_below_geometric_integral() {
        let kern = JumpKernel::gaussian(3, 0.7).unwrap();
        let bose = (4.0 * PI * 0.7f64).powf(-1.5) * numeric::zeta(1.5).unwrap().value;
        for w in [ewens(0.0), ewens(0.4), CycleWeightModel::logarithmic(0.5).unwrap()] {
            assert!(critical_density(&kern, &w, 1e-10).unwrap().value <= bose * (1.0 + 1e-14));
        }
    }

    #[test]
    fn shell_counts_match_enumeration() {
        let counts = lattice_shell_counts(3, 50);
        let mut direct = vec![0u64; 51];
        for a in -8i64..=8 {
            for b in -8i64..=8 {
                for c in -8i64..=8 {
                    let m = (a * a + b * b + c * c) as usize;
                    if m <= 50 {
                        direct[m] += 1;
                    }
                }
            }
        }
        assert_eq!(counts, direct);
        assert_eq!(counts[1], 6);
    }

    #[test]
    fn finite_volume_degenerate_and_convergence() {
        let kern = JumpKernel::gaussian(3, 1.0 / (4.0 * PI)).unwrap();
        let w = ewens(0.0);
        let empty = BoxGeometry::new(8.0, 3, 0.0).unwrap();
        assert_eq!(finite_volume_critical_density(&kern, &w, &empty, None).unwrap().value, 0.0);
        let rc = critical_density(&kern, &w, 1e-12).unwrap().value;
        let errs: Vec<f64> = [8.0, 16.0, 32.0]
            .iter()
            .map(|&l| {
                let g = BoxGeometry::with_energy_cutoff(&kern, l, 40.0).unwrap();
                let fv = finite_volume_critical_density(&kern, &w, &g, None).unwrap();
                assert!(fv.mode_residual < 1e-12 && fv.j_residual < 1e-12, "{fv:?}");
                (fv.value - rc).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        // error halves under doubling
        assert!(errs[1] <= 0.5 * errs[0] * 1.01 && errs[2] <= 0.5 * errs[1] * 1.01, "{errs:?}");
    }

    #[test]
    fn finite_volume_matches_direct_mode_sum() {
        // oracle: explicit enumeration of modes and j-sums
        let beta = 0.2;
        let kern = JumpKernel::gaussian(3, beta).unwrap();
        let w = CycleWeightModel::asymptotic(0.2, vec![(1, -0.3)]).unwrap();
        let geom = BoxGeometry::new(3.0, 3, 2.0).unwrap();
        let fv = finite_volume_critical_density(&kern, &w, &geom, Some(400)).unwrap();
        let mut direct = 0.0;
        for a in -6i64..=6 {
            for b in -6i64..=6 {
                for c in -6i64..=6 {
                    let n2 = (a * a + b * b + c * c) as f64;
                    if n2 == 0.0 || n2.sqrt() / 3.0 > 2.0 {
                        continue;
                    }
                    let eps = 4.0 * PI * PI * beta * n2 / 9.0;
                    for j in 1..=400 {
                        direct += w.weight(j) * (-(j as f64) * eps).exp();
                    }
                }
            }
        }
        direct /= 27.0;
        assert!((fv.value - direct).abs() < 1e-12 * direct);
        let closed = finite_volume_critical_density(&kern, &w, &geom, None).unwrap();
        assert!((closed.value - fv.value).abs() <= fv.j_residual + 1e-13);
    }

    #[test]
    fn power_law_kernel_basics() {
        let kern = JumpKernel::power_law_1d(1.5, None).unwrap();
        assert!((kern.total_mass().unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(kern.dispersion(&[0.0]).unwrap(), 0.0);
        // the three evaluation routes agree where they meet
        for k in [1.0 / (2.0 * PI) * 0.999, 1.0 / (2.0 * PI) * 1.001, 50.0 / (2.0 * PI) * 0.999, 50.0 / (2.0 * PI) * 1.001] {
            let e = kern.dispersion_norm(k).unwrap();
            assert!(e > 0.0);
        }
        let lo = kern.dispersion_norm(1.0 / (2.0 * PI) * (1.0 - 1e-9)).unwrap();
        let hi = kern.dispersion_norm(1.0 / (2.0 * PI) * (1.0 + 1e-9)).unwrap();
        assert!((lo - hi).abs() < 1e-8 * lo, "{lo} vs {hi}");
        let lo = kern.dispersion_norm(50.0 / (2.0 * PI) * (1.0 - 1e-9)).unwrap();
        let hi = kern.dispersion_norm(50.0 / (2.0 * PI) * (1.0 + 1e-9)).unwrap();
        assert!((lo - hi).abs() < 1e-8 * lo, "{lo} vs {hi}");
        // small-k growth exponent eta = gamma - 1
        let r1 = kern.dispersion_norm(1e-6).unwrap() / 1e-6f64.powf(0.5);
        let r2 = kern.dispersion_norm(1e-8).unwrap() / 1e-8f64.powf(0.5);
        assert!((r1 / r2 - 1.0).abs() < 0.01, "{r1} {r2}");
        let g = kern.growth();
        assert!(g.a > 0.0 && (g.eta - 0.5).abs() < 1e-15);
        assert!(JumpKernel::power_law_1d(1.5, Some(GrowthCertificate { a: 1e3, eta: 0.5 })).is_err());
        assert!(JumpKernel::power_law_1d(2.5, None).is_err());
    }

    #[test]
    fn power_law_dispersion_matches_direct_quadrature() {
        // moderate k: brute midpoint quadrature of the cosine transform with an
        // integrated-by-parts tail remainder
        let g = 1.5;
        let kern = JumpKernel::power_law_1d(g, None).unwrap();
        let k = 0.8;
        let w = 2.0 * PI * k;
        let xmax = 4000.0;
        let n = 8_000_000;
        let hstep = xmax / n as f64;
        let mut s = 0.0;
        for i in 0..n {
            let x = (i as f64 + 0.5) * hstep;
            s += (w * x).cos() * (1.0 + x).powf(-g);
        }
        s *= hstep;
        // ∫_X^∞ cos(wx) h = -sin(wX) h(X) / w + O(h'(X) / w^2)
        s += -(w * xmax).sin() * (1.0 + xmax).powf(-g) / w;
        let phi = (g - 1.0) * s;
        let eps = kern.dispersion_norm(k).unwrap();
        assert!((phi - (-eps).exp()).abs() < 1e-7, "{phi} vs {}", (-eps).exp());
    }

    #[test]
    fn power_law_periodized_and_critical_density() {
        let kern = JumpKernel::power_law_1d(1.5, None).unwrap();
        let geom = BoxGeometry::new(20.0, 1, 2.0).unwrap();
        let a = periodized_jump_weight(&kern, &geom, &[3.0]).unwrap();
        let mut direct = 0.0;
        for z in -200_000i64..=200_000 {
            direct += kern.density(&[3.0 - 20.0 * z as f64]);
        }
        // the direct oracle misses sum_{|z| > Z} ~ 2 (c / 2) L^{-g} (Z + 1/2)^{1-g} / (g - 1)
        let missing = 0.5 * 20f64.powf(-1.5) * 200_000.5f64.powf(-0.5) / 0.5;
        assert!(((a - direct) - missing).abs() < 1e-3 * missing, "{} vs {missing}", a - direct);
        assert!(a > direct);
        assert!((a - periodized_jump_weight(&kern, &geom, &[-3.0]).unwrap()).abs() < 1e-15);
        let rc = critical_density(&kern, &ewens(1.0), 1e-6).unwrap();
        assert!(rc.value.is_finite() && rc.value > 0.0);
        assert!(rc.residual <= 1e-6 * rc.value);
    }
}
