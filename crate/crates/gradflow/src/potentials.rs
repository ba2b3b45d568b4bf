//! Scalar convex-analysis kernel: the cosh dissipation pair, Boltzmann
//! entropy density, logarithmic mean and numeric Legendre transforms.

use std::fmt;
use std::sync::Arc;

use crate::error::{domain, Error, Result};
use crate::numerics::{golden_min, minimize_scalar};

/// Default tolerance for numeric conjugates.
pub const LEGENDRE_TOL: f64 = 1e-10;
/// Default half-width of the search interval for numeric conjugates.
pub const LEGENDRE_BOUND: f64 = 1e3;

/// Inverse hyperbolic sine via the log form, odd-symmetric so that large
/// negative arguments do not cancel.
pub fn arsinh(x: f64) -> f64 {
    let a = x.abs();
    let r = if a > 1e8 {
        a.ln() + std::f64::consts::LN_2
    } else {
        // ln(a + sqrt(a^2+1)) = ln1p(a + a^2/(1 + sqrt(a^2+1)))
        (a + a * a / (1.0 + (a * a + 1.0).sqrt())).ln_1p()
    };
    r.copysign(x)
}

/// `C*(xi) = 4(cosh(xi/2) - 1)`, evaluated as `8 sinh^2(xi/4)`.
pub fn cosh_star(xi: f64) -> f64 {
    let s = (0.25 * xi).sinh();
    8.0 * s * s
}

/// Like [`cosh_star`] but reports overflow instead of returning infinity.
pub fn try_cosh_star(xi: f64) -> Result<f64> {
    if !xi.is_finite() {
        return domain(format!("cosh_star of non-finite force {xi}"));
    }
    let v = cosh_star(xi);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::OutOfRange(format!("cosh_star({xi}) overflows")))
    }
}

/// `(C*)'(xi) = 2 sinh(xi/2)`.
pub fn dcosh_star(xi: f64) -> f64 {
    2.0 * (0.5 * xi).sinh()
}

/// `(C*)''(xi) = cosh(xi/2)`.
pub fn ddcosh_star(xi: f64) -> f64 {
    (0.5 * xi).cosh()
}

/// `C(v) = 2v arsinh(v/2) - 2 sqrt(4+v^2) + 4`, rearranged so small `v`
/// keeps full relative accuracy.
pub fn cosh_c(v: f64) -> f64 {
    let root = (4.0 + v * v).sqrt();
    2.0 * v * arsinh(0.5 * v) - 2.0 * v * v / (2.0 + root)
}

/// `C'(v) = 2 arsinh(v/2)`.
pub fn cosh_c_prime(v: f64) -> f64 {
    2.0 * arsinh(0.5 * v)
}

/// `C''(v) = 2 / sqrt(4 + v^2)`.
pub fn cosh_c_second(v: f64) -> f64 {
    2.0 / (4.0 + v * v).sqrt()
}

/// Numeric Legendre–Fenchel conjugate `sup_v (xi v - psi(v))` with default
/// tolerance and search bound.
pub fn legendre<F: Fn(f64) -> f64>(psi: F, xi: f64) -> Result<f64> {
    legendre_with(psi, xi, LEGENDRE_BOUND, LEGENDRE_TOL)
}

/// Numeric conjugate with explicit search bound and tolerance.
pub fn legendre_with<F: Fn(f64) -> f64>(psi: F, xi: f64, bound: f64, tol: f64) -> Result<f64> {
    legendre_argmax(psi, xi, bound, tol).map(|(_, val)| val)
}

/// Conjugate value together with the maximizing rate.
pub fn legendre_argmax<F: Fn(f64) -> f64>(
    psi: F,
    xi: f64,
    bound: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let neg = |v: f64| {
        let p = psi(v);
        if p.is_finite() {
            p - xi * v
        } else {
            f64::INFINITY
        }
    };
    let (v, f) = minimize_scalar(neg, 0.0, 0.1, bound, tol)?;
    Ok((v, -f))
}

/// Boltzmann function `z ln z - z + 1`, continuous at `z = 0`.
pub fn boltzmann(z: f64) -> Result<f64> {
    if z < 0.0 || z.is_nan() {
        return domain(format!("boltzmann argument {z} is negative"));
    }
    if z == 0.0 {
        return Ok(1.0);
    }
    Ok(z * z.ln() - z + 1.0)
}

/// Derivative `ln z` of the Boltzmann function.
pub fn boltzmann_prime(z: f64) -> Result<f64> {
    if z <= 0.0 || z.is_nan() {
        return domain(format!("boltzmann derivative needs z > 0, got {z}"));
    }
    Ok(z.ln())
}

/// Logarithmic mean `(a - b)/(ln a - ln b)`, equal to `a` on the diagonal.
pub fn log_mean(a: f64, b: f64) -> Result<f64> {
    if a <= 0.0 || b <= 0.0 || a.is_nan() || b.is_nan() {
        return domain(format!("log_mean needs positive arguments, got ({a}, {b})"));
    }
    Ok(log_mean_unchecked(a, b))
}

pub(crate) fn log_mean_unchecked(a: f64, b: f64) -> f64 {
    let x = a / b - 1.0;
    if x.abs() < 1e-4 {
        b * (1.0 + x / 2.0 - x * x / 12.0 + x * x * x / 24.0)
    } else {
        b * x / x.ln_1p()
    }
}

/// Closed form of `inf_tau (a C*(tau) + b C*(xi - tau))`, written without
/// the cancelling subtraction.
pub fn inf_convolution_cosh(a: f64, b: f64, xi: f64) -> f64 {
    let s = a + b;
    let c = cosh_star(xi);
    2.0 * a * b * c / ((s * s + 0.5 * a * b * c).sqrt() + s)
}

/// Numeric inf-convolution `inf_tau (f(tau) + g(xi - tau))` for convex `f, g`
/// vanishing at 0; the minimizer then lies between 0 and `xi`.
pub fn inf_convolution_numeric<F, G>(f: F, g: G, xi: f64, tol: f64) -> f64
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if xi == 0.0 {
        return f(0.0) + g(0.0);
    }
    let (lo, hi) = if xi > 0.0 { (0.0, xi) } else { (xi, 0.0) };
    golden_min(|t| f(t) + g(xi - t), lo, hi, tol).1
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    Quadratic,
    Cosh,
    Custom,
}

/// A convex dissipation potential together with its dual and derivatives.
#[derive(Clone)]
pub struct DissipationPair {
    pub psi: ScalarFn,
    pub psi_star: ScalarFn,
    pub dpsi: ScalarFn,
    pub dpsi_star: ScalarFn,
    /// `(psi*)''(0)`, used where a removable singularity needs the linearization.
    pub ddpsi_star0: f64,
    pub kind: PairKind,
}

impl fmt::Debug for DissipationPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DissipationPair")
            .field("kind", &self.kind)
            .field("ddpsi_star0", &self.ddpsi_star0)
            .finish()
    }
}

impl DissipationPair {
    /// Self-dual `v^2/2`.
    pub fn quadratic() -> Self {
        Self {
            psi: Arc::new(|v| 0.5 * v * v),
            psi_star: Arc::new(|x| 0.5 * x * x),
            dpsi: Arc::new(|v| v),
            dpsi_star: Arc::new(|x| x),
            ddpsi_star0: 1.0,
            kind: PairKind::Quadratic,
        }
    }

    /// `psi = C`, `psi* = C*`.
    pub fn cosh() -> Self {
        Self {
            psi: Arc::new(cosh_c),
            psi_star: Arc::new(cosh_star),
            dpsi: Arc::new(cosh_c_prime),
            dpsi_star: Arc::new(dcosh_star),
            ddpsi_star0: 1.0,
            kind: PairKind::Cosh,
        }
    }

    /// Build a pair from a dual potential only; the primal side is obtained
    /// by numeric conjugation.
    pub fn custom<F, D>(psi_star: F, dpsi_star: D, ddpsi_star0: f64) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let ps: ScalarFn = Arc::new(psi_star);
        let p1 = ps.clone();
        let p2 = ps.clone();
        Self {
            psi: Arc::new(move |v| legendre(|x| p1(x), v).unwrap_or(f64::INFINITY)),
            psi_star: ps,
            dpsi: Arc::new(move |v| {
                legendre_argmax(|x| p2(x), v, LEGENDRE_BOUND, LEGENDRE_TOL)
                    .map(|(x, _)| x)
                    .unwrap_or(f64::NAN)
            }),
            dpsi_star: Arc::new(dpsi_star),
            ddpsi_star0,
            kind: PairKind::Custom,
        }
    }

    pub fn psi(&self, v: f64) -> f64 {
        (self.psi)(v)
    }
    pub fn psi_star(&self, xi: f64) -> f64 {
        (self.psi_star)(xi)
    }
    pub fn dpsi(&self, v: f64) -> f64 {
        (self.dpsi)(v)
    }
    pub fn dpsi_star(&self, xi: f64) -> f64 {
        (self.dpsi_star)(xi)
    }

    /// Young–Fenchel gap `psi(v) + psi*(xi) - v xi`, nonnegative.
    pub fn fenchel_gap(&self, v: f64, xi: f64) -> f64 {
        self.psi(v) + self.psi_star(xi) - v * xi
    }
}

/// Convex entropy density used as `phi` in weighted energies `sum w phi(u/w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyDensity {
    /// `r^2 / 2`
    Quadratic,
    /// Boltzmann function
    Boltzmann,
}

impl EntropyDensity {
    pub fn phi(self, r: f64) -> Result<f64> {
        match self {
            Self::Quadratic => Ok(0.5 * r * r),
            Self::Boltzmann => boltzmann(r),
        }
    }
    pub fn dphi(self, r: f64) -> Result<f64> {
        match self {
            Self::Quadratic => Ok(r),
            Self::Boltzmann => boltzmann_prime(r),
        }
    }
    pub fn ddphi(self, r: f64) -> Result<f64> {
        match self {
            Self::Quadratic => Ok(1.0),
            Self::Boltzmann if r > 0.0 => Ok(1.0 / r),
            Self::Boltzmann => domain(format!("second derivative of boltzmann at {r}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosh_star_examples() {
        assert_eq!(cosh_star(0.0), 0.0);
        assert!((cosh_star(2.0) - 2.172_322_539_260_975).abs() < 1e-12);
        let (p, q) = (4.0f64, 1.0f64);
        assert!(((p * q).sqrt() * cosh_star(p.ln() - q.ln()) - 2.0).abs() < 1e-13);
        assert!(try_cosh_star(3000.0).is_err());
        assert!(try_cosh_star(10.0).is_ok());
    }

    #[test]
    fn cosh_c_examples() {
        assert_eq!(cosh_c(0.0), 0.0);
        assert!((cosh_c(1e-3) - 0.5e-6).abs() < 1e-12);
        let oracle = -golden_min(|x| cosh_star(x) - 3.0 * x, -10.0, 10.0, 1e-13).1;
        assert!((cosh_c(3.0) - oracle).abs() < 1e-10);
        let direct = 4.0 * arsinh(1.0) - 2.0 * 8f64.sqrt() + 4.0;
        assert!((cosh_c(2.0) - direct).abs() < 1e-14);
        assert!((cosh_c(2.0) - 1.868_640_098_585_792).abs() < 1e-14);
    }

    #[test]
    fn arsinh_matches_std() {
        for &x in &[-1e10, -50.0, -1.0, -1e-9, 0.0, 1e-9, 0.3, 7.0, 1e10] {
            let s = f64::asinh(x);
            assert!((arsinh(x) - s).abs() <= 1e-15 * (1.0 + s.abs()), "{x}");
        }
    }

    #[test]
    fn legendre_examples() {
        assert!((legendre(|v| 0.5 * v * v, 3.0).unwrap() - 4.5).abs() < 1e-10);
        for k in 0..=40 {
            let xi = -5.0 + 0.25 * k as f64;
            let num = legendre(cosh_c, xi).unwrap();
            assert!((num - cosh_star(xi)).abs() < 1e-8, "xi={xi}");
        }
        for k in 0..=20 {
            let v = -5.0 + 0.5 * k as f64;
            let bi = legendre(|x| legendre(cosh_c, x).unwrap(), v).unwrap();
            assert!((bi - cosh_c(v)).abs() < 1e-8, "v={v}");
        }
        assert!(matches!(legendre(|v| -v * v, 1.0), Err(Error::Unbounded(_))));
    }

    #[test]
    fn boltzmann_examples() {
        assert_eq!(boltzmann(1.0).unwrap(), 0.0);
        assert_eq!(boltzmann(0.0).unwrap(), 1.0);
        assert!((boltzmann(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        assert!(boltzmann(-0.1).is_err());
        assert!(boltzmann_prime(0.0).is_err());
    }

    #[test]
    fn log_mean_examples() {
        assert_eq!(log_mean(2.0, 2.0).unwrap(), 2.0);
        assert!((log_mean(4.0, 1.0).unwrap() - 3.0 / 4f64.ln()).abs() < 1e-14);
        assert!(log_mean(0.0, 1.0).is_err());
        // continuity across the series switch
        let a = 1.0 + 0.999e-4;
        let b = 1.0 + 1.001e-4;
        assert!((log_mean(a, 1.0).unwrap() - log_mean(b, 1.0).unwrap()).abs() < 1e-7);
    }

    #[test]
    fn inf_convolution_examples() {
        assert_eq!(inf_convolution_cosh(1.0, 2.0, 0.0), 0.0);
        let v = inf_convolution_cosh(1.0, 1.0, 2.0);
        assert!((v - 8.0 * ((0.5f64).cosh() - 1.0)).abs() < 1e-13);
        let closed_form = |a: f64, b: f64, x: f64| {
            4.0 * ((a + b).powi(2) + 0.5 * a * b * cosh_star(x)).sqrt() - 4.0 * (a + b)
        };
        assert!((inf_convolution_cosh(0.3, 2.0, 4.0) - closed_form(0.3, 2.0, 4.0)).abs() < 1e-12);
    }

    #[test]
    fn custom_pair_recovers_quadratic() {
        let p = DissipationPair::custom(|x| 0.5 * x * x, |x| x, 1.0);
        assert!((p.psi(1.5) - 1.125).abs() < 1e-9);
        assert!((p.dpsi(1.5) - 1.5).abs() < 1e-5);
    }

    fn pairs() -> Vec<DissipationPair> {
        vec![DissipationPair::quadratic(), DissipationPair::cosh()]
    }

    #[test]
    fn pair_axioms() {
        for p in pairs() {
            assert_eq!(p.psi(0.0), 0.0);
            assert_eq!(p.psi_star(0.0), 0.0);
            assert_eq!(p.dpsi(0.0), 0.0);
            assert_eq!(p.dpsi_star(0.0), 0.0);
        }
    }

    proptest! {
        #[test]
        fn young_fenchel(v in -8.0f64..8.0, xi in -8.0f64..8.0) {
            for p in pairs() {
                prop_assert!(p.fenchel_gap(v, xi) >= -1e-12);
                let eq = p.fenchel_gap(v, p.dpsi(v));
                prop_assert!(eq.abs() <= 1e-8 * (1.0 + v * v));
                prop_assert!((p.psi(-v) - p.psi(v)).abs() <= 1e-12 * (1.0 + p.psi(v)));
            }
        }

        #[test]
        fn elementary_relation(p in 0.01f64..10.0, q in 0.01f64..10.0) {
            let g = (p * q).sqrt();
            let d = p.ln() - q.ln();
            prop_assert!((g * dcosh_star(d) - (p - q)).abs() <= 1e-10 * p.max(q));
            let sq = 2.0 * (p.sqrt() - q.sqrt()).powi(2);
            prop_assert!((g * cosh_star(d) - sq).abs() <= 1e-10 * p.max(q));
        }

        #[test]
        fn convex_second_differences(x in -6.0f64..6.0, h in 1e-3f64..2.0) {
            for f in [cosh_c as fn(f64) -> f64, cosh_star] {
                prop_assert!(f(x + h) - 2.0 * f(x) + f(x - h) >= -1e-12 * (1.0 + f(x).abs()));
            }
        }

        #[test]
        fn log_mean_between_means(a in 1e-3f64..1e3, b in 1e-3f64..1e3) {
            let l = log_mean(a, b).unwrap();
            let tol = 1e-12 * a.max(b);
            prop_assert!((a * b).sqrt() <= l + tol);
            prop_assert!(l <= 0.5 * (a + b) + tol);
        }

        #[test]
        fn inf_convolution_matches_numeric(a in 0.05f64..5.0, b in 0.05f64..5.0, xi in -6.0f64..6.0) {
            let closed = inf_convolution_cosh(a, b, xi);
            let num = inf_convolution_numeric(|t| a * cosh_star(t), |t| b * cosh_star(t), xi, 1e-12);
            prop_assert!((closed - num).abs() < 1e-8 * (1.0 + closed));
        }
    }
}
