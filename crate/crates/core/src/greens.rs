//! Fundamental solutions of `Delta - k^2` and the modified Bessel functions
//! K0, K1 they require.
//!
//! The Bessel functions are built from scratch: the ascending series below
//! x = 2 and a Steed continued fraction above, both good to close to machine
//! precision. No polynomial fits are involved, so there are no range seams
//! worse than an ulp or two.

use crate::error::{KsError, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// I0 power series; converges quickly for x <= 2.
fn i0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..40 {
        term *= q / ((m * m) as f64);
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    sum
}

/// I1 power series; converges quickly for x <= 2.
fn i1_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 0.5 * x;
    let mut sum = term;
    for m in 1..40 {
        term *= q / ((m * (m + 1)) as f64);
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    sum
}

/// Ascending series for K0, valid (and accurate) for 0 < x <= 2:
/// K0 = -(ln(x/2) + gamma) I0(x) + sum_{m>=1} (x^2/4)^m / (m!)^2 * H_m.
fn k0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let lead = -((0.5 * x).ln() + EULER_GAMMA) * i0_series(x);
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut sum = 0.0;
    for m in 1..40 {
        term *= q / ((m * m) as f64);
        harmonic += 1.0 / m as f64;
        let add = term * harmonic;
        sum += add;
        if add.abs() < (sum.abs() + 1.0) * 1e-18 {
            break;
        }
    }
    lead + sum
}

/// Ascending series for K1, valid for 0 < x <= 2:
/// K1 = 1/x + ln(x/2) I1(x) - (x/4) sum_{m>=0} (H_m + H_{m+1}) (x^2/4)^m / (m!(m+1)!).
fn k1_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let lead = 1.0 / x + (0.5 * x).ln() * i1_series(x);
    let mut term = 1.0; // (x^2/4)^m / (m! (m+1)!)
    let mut h_m = 0.0;
    let mut h_m1 = 1.0;
    let mut sum = term * (h_m + h_m1 - 2.0 * EULER_GAMMA);
    for m in 1..40 {
        term *= q / ((m * (m + 1)) as f64);
        h_m += 1.0 / m as f64;
        h_m1 += 1.0 / (m + 1) as f64;
        let add = term * (h_m + h_m1 - 2.0 * EULER_GAMMA);
        sum += add;
        if add.abs() < (sum.abs() + 1.0) * 1e-18 {
            break;
        }
    }
    lead - 0.25 * x * sum
}

/// Steed continued fraction (CF2) for K0 and K1 at x >= 2; essentially exact
/// in double precision and smoothly covers the asymptotic regime.
fn k0_k1_cf2(x: f64) -> (f64, f64) {
    let a1 = 0.25;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 1..10_000 {
        a -= 2.0 * i as f64;
        c = -a * c / (i as f64 + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() <= f64::EPSILON {
            break;
        }
    }
    h = a1 * h;
    let k0 = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}

/// Modified Bessel function of the second kind, order 0.
pub fn bessel_k0(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(KsError::InvalidInput(format!("K0 requires x > 0, got {x}")));
    }
    Ok(if x <= 2.0 { k0_series(x) } else { k0_k1_cf2(x).0 })
}

/// Modified Bessel function of the second kind, order 1.
pub fn bessel_k1(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(KsError::InvalidInput(format!("K1 requires x > 0, got {x}")));
    }
    Ok(if x <= 2.0 { k1_series(x) } else { k0_k1_cf2(x).1 })
}

/// Which fundamental solution a [`Kernel`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelForm {
    /// d = 1: -exp(-k r) / (2 k), bounded below by -1/(2k).
    Yukawa1d,
    /// d = 2, k > 0: -K0(k r) / (2 pi).
    Bessel2d,
    /// d = 2, k = 0: ln(r) / (2 pi), the planar log kernel.
    Log2d,
    /// d = 3: -exp(-k r) / (4 pi r).
    Yukawa3d,
}

impl KernelForm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "yukawa1d" => Ok(KernelForm::Yukawa1d),
            "bessel2d" => Ok(KernelForm::Bessel2d),
            "log2d" => Ok(KernelForm::Log2d),
            "yukawa3d" => Ok(KernelForm::Yukawa3d),
            _ => Err(KsError::Config(format!(
                "unknown kernel '{s}' (expected yukawa1d|bessel2d|log2d|yukawa3d)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelForm::Yukawa1d => "yukawa1d",
            KernelForm::Bessel2d => "bessel2d",
            KernelForm::Log2d => "log2d",
            KernelForm::Yukawa3d => "yukawa3d",
        }
    }

    pub fn dimension(self) -> usize {
        match self {
            KernelForm::Yukawa1d => 1,
            KernelForm::Bessel2d | KernelForm::Log2d => 2,
            KernelForm::Yukawa3d => 3,
        }
    }
}

/// A free-space Green's function of `Delta - k^2` with its gradient.
#[derive(Debug, Clone, Copy)]
pub struct Kernel {
    pub form: KernelForm,
    pub k: f64,
}

impl Kernel {
    pub fn new(form: KernelForm, k: f64) -> Result<Self> {
        if !k.is_finite() || k < 0.0 {
            return Err(KsError::InvalidInput(format!("decay rate k must be finite and >= 0, got {k}")));
        }
        match form {
            KernelForm::Yukawa1d | KernelForm::Bessel2d if k == 0.0 => Err(KsError::InvalidInput(
                format!("{} requires k > 0; the k = 0 planar kernel is log2d", form.name()),
            )),
            KernelForm::Log2d if k != 0.0 => Err(KsError::InvalidInput(
                "log2d is the k = 0 kernel; use bessel2d for k > 0".into(),
            )),
            _ => Ok(Kernel { form, k }),
        }
    }

    pub fn log2d() -> Self {
        Kernel { form: KernelForm::Log2d, k: 0.0 }
    }

    /// V(r) at separation r > 0.
    pub fn value(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(KsError::InvalidInput(format!("kernel value requires r > 0, got {r}")));
        }
        Ok(match self.form {
            KernelForm::Yukawa1d => -(-self.k * r).exp() / (2.0 * self.k),
            KernelForm::Bessel2d => -bessel_k0(self.k * r)? / TWO_PI,
            KernelForm::Log2d => r.ln() / TWO_PI,
            KernelForm::Yukawa3d => -(-self.k * r).exp() / (2.0 * TWO_PI * r),
        })
    }

    /// dV/dr at separation r > 0. Positive for every form: the potential
    /// increases with separation, so the induced interaction is attractive.
    pub fn radial_derivative(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(KsError::InvalidInput(format!("kernel derivative requires r > 0, got {r}")));
        }
        Ok(match self.form {
            KernelForm::Yukawa1d => 0.5 * (-self.k * r).exp(),
            KernelForm::Bessel2d => self.k * bessel_k1(self.k * r)? / TWO_PI,
            KernelForm::Log2d => 1.0 / (TWO_PI * r),
            KernelForm::Yukawa3d => (-self.k * r).exp() * (1.0 + self.k * r) / (2.0 * TWO_PI * r * r),
        })
    }

    /// grad_x V(|x - y|); errors on coincident points.
    pub fn gradient(&self, x: [f64; 2], y: [f64; 2]) -> Result<[f64; 2]> {
        let dx = x[0] - y[0];
        let dy = x[1] - y[1];
        let r = (dx * dx + dy * dy).sqrt();
        if r == 0.0 {
            return Err(KsError::InvalidInput("kernel gradient at coincident points".into()));
        }
        let dv = self.radial_derivative(r)?;
        Ok([dv * dx / r, dv * dy / r])
    }

    /// Gradient with the separation clamped to at least `eps`; the true
    /// offset vector is kept, so the regularized force goes to zero linearly
    /// as the points coincide. Exactly coincident points return zero force.
    pub fn gradient_clamped(&self, x: [f64; 2], y: [f64; 2], eps: f64) -> Result<[f64; 2]> {
        let dx = x[0] - y[0];
        let dy = x[1] - y[1];
        let r = (dx * dx + dy * dy).sqrt();
        if r == 0.0 {
            if eps == 0.0 {
                return Err(KsError::InvalidInput(
                    "coincident points with zero regularization radius".into(),
                ));
            }
            return Ok([0.0, 0.0]);
        }
        let rc = r.max(eps);
        let dv = self.radial_derivative(rc)?;
        Ok([dv * dx / rc, dv * dy / rc])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference digits frozen from the integral representation
    // K_n(x) = int_0^inf exp(-x cosh t) cosh(n t) dt evaluated by high-order
    // quadrature (the same oracle runs live in the acceptance suite).
    const K0_1: f64 = 0.421_024_438_240_708_23;
    const K1_1: f64 = 0.601_907_230_197_234_58;
    const K0_5: f64 = 3.691_098_334_042_594_2e-3;
    const K1_5: f64 = 4.044_613_445_452_162_9e-3;
    const K0_01: f64 = 2.427_069_024_702_016_35;
    const K1_01: f64 = 9.853_844_780_870_606;

    #[test]
    fn k0_k1_reference_values() {
        assert!((bessel_k0(1.0).unwrap() - K0_1).abs() < 1e-9 * K0_1);
        assert!((bessel_k1(1.0).unwrap() - K1_1).abs() < 1e-9 * K1_1);
        assert!((bessel_k0(5.0).unwrap() - K0_5).abs() < 1e-9 * K0_5);
        assert!((bessel_k1(5.0).unwrap() - K1_5).abs() < 1e-9 * K1_5);
        assert!((bessel_k0(0.1).unwrap() - K0_01).abs() < 1e-9 * K0_01);
        assert!((bessel_k1(0.1).unwrap() - K1_01).abs() < 1e-9 * K1_01);
    }

    #[test]
    fn k0_small_argument_log_law() {
        // K0(x) + ln(x/2) + gamma -> 0 as x -> 0.
        let x = 1e-4;
        let resid = bessel_k0(x).unwrap() + (0.5 * x).ln() + EULER_GAMMA;
        assert!(resid.abs() < 1e-6, "small-x law residual {resid}");
    }

    #[test]
    fn k0_k1_branches_agree_at_seam() {
        for &x in &[1.999, 2.0, 2.001] {
            let s0 = k0_series(x);
            let c0 = k0_k1_cf2(x).0;
            assert!((s0 - c0).abs() < 1e-13 * s0, "K0 seam mismatch at {x}: {s0} vs {c0}");
            let s1 = k1_series(x);
            let c1 = k0_k1_cf2(x).1;
            assert!((s1 - c1).abs() < 1e-13 * s1, "K1 seam mismatch at {x}: {s1} vs {c1}");
        }
    }

    #[test]
    fn k0_k1_positive_and_decreasing() {
        let mut prev0 = f64::INFINITY;
        let mut prev1 = f64::INFINITY;
        let mut x = 1e-6;
        while x < 60.0 {
            let v0 = bessel_k0(x).unwrap();
            let v1 = bessel_k1(x).unwrap();
            assert!(v0 > 0.0 && v1 > 0.0, "K must stay positive at {x}");
            assert!(v0 < prev0 && v1 < prev1, "K must be strictly decreasing at {x}");
            prev0 = v0;
            prev1 = v1;
            x *= 1.8;
        }
    }

    #[test]
    fn k_rejects_nonpositive_argument() {
        assert!(bessel_k0(0.0).is_err());
        assert!(bessel_k0(-1.0).is_err());
        assert!(bessel_k1(f64::NAN).is_err());
    }

    #[test]
    fn kernel_construction_rules() {
        assert!(Kernel::new(KernelForm::Bessel2d, 0.0).is_err());
        assert!(Kernel::new(KernelForm::Yukawa1d, 0.0).is_err());
        assert!(Kernel::new(KernelForm::Log2d, 1.0).is_err());
        assert!(Kernel::new(KernelForm::Log2d, 0.0).is_ok());
        assert!(Kernel::new(KernelForm::Yukawa3d, 0.0).is_ok());
        assert!(Kernel::new(KernelForm::Bessel2d, -1.0).is_err());
    }

    #[test]
    fn yukawa1d_bounded_below() {
        // V1(r -> 0) = -1/(2k): bounded, which is why d = 1 admits no traps.
        let kern = Kernel::new(KernelForm::Yukawa1d, 1.0).unwrap();
        let v = kern.value(1e-12).unwrap();
        assert!((v + 0.5).abs() < 1e-9, "V1(0+) should be -1/2, got {v}");
    }

    #[test]
    fn log2d_values() {
        let kern = Kernel::log2d();
        assert!(kern.value(1.0).unwrap().abs() < 1e-15, "ln 1 = 0");
        let g = kern.gradient([1.0, 0.0], [0.0, 0.0]).unwrap();
        assert!((g[0] - 1.0 / TWO_PI).abs() < 1e-15);
        assert!(g[1].abs() < 1e-15);
    }

    #[test]
    fn bessel2d_value_at_unit_separation() {
        let kern = Kernel::new(KernelForm::Bessel2d, 1.0).unwrap();
        let v = kern.value(1.0).unwrap();
        let expected = -K0_1 / TWO_PI;
        assert!((v - expected).abs() < 1e-12, "V2(1) = -K0(1)/2pi, got {v}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h_rel = 1e-5;
        let cases = [
            Kernel::new(KernelForm::Yukawa1d, 1.0).unwrap(),
            Kernel::new(KernelForm::Bessel2d, 1.0).unwrap(),
            Kernel::new(KernelForm::Bessel2d, 0.3).unwrap(),
            Kernel::log2d(),
            Kernel::new(KernelForm::Yukawa3d, 1.0).unwrap(),
            Kernel::new(KernelForm::Yukawa3d, 0.0).unwrap(),
        ];
        for kern in cases {
            for &r in &[0.05, 0.5, 2.0, 8.0] {
                let h = h_rel * r;
                let fd = (kern.value(r + h).unwrap() - kern.value(r - h).unwrap()) / (2.0 * h);
                let dv = kern.radial_derivative(r).unwrap();
                assert!(
                    (fd - dv).abs() <= 1e-6 * dv.abs(),
                    "{} at r={r}: fd {fd} vs analytic {dv}",
                    kern.form.name()
                );
            }
        }
    }

    #[test]
    fn gradient_vector_matches_value_differences() {
        // Central differences of V along both axes at r = 0.5, k = 1.
        let kern = Kernel::new(KernelForm::Bessel2d, 1.0).unwrap();
        let x = [0.8, 0.4];
        let y = [0.5, 0.0];
        let g = kern.gradient(x, y).unwrap();
        let h = 1e-5 * 0.5;
        for axis in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[axis] += h;
            xm[axis] -= h;
            let rp = ((xp[0] - y[0]).powi(2) + (xp[1] - y[1]).powi(2)).sqrt();
            let rm = ((xm[0] - y[0]).powi(2) + (xm[1] - y[1]).powi(2)).sqrt();
            let fd = (kern.value(rp).unwrap() - kern.value(rm).unwrap()) / (2.0 * h);
            assert!((fd - g[axis]).abs() < 1e-6 * g[axis].abs().max(1e-3), "axis {axis}: {fd} vs {}", g[axis]);
        }
    }

    #[test]
    fn bessel2d_gradient_approaches_log2d_at_small_kr() {
        let kern_b = Kernel::new(KernelForm::Bessel2d, 1.0).unwrap();
        let kern_l = Kernel::log2d();
        let r = 1e-3; // kr = 1e-3
        let gb = kern_b.radial_derivative(r).unwrap();
        let gl = kern_l.radial_derivative(r).unwrap();
        assert!(((gb - gl) / gl).abs() < 0.01, "shared leading singularity: {gb} vs {gl}");
    }

    #[test]
    fn kernel_value_monotone_increasing() {
        let cases = [
            Kernel::new(KernelForm::Yukawa1d, 0.7).unwrap(),
            Kernel::new(KernelForm::Bessel2d, 1.3).unwrap(),
            Kernel::log2d(),
            Kernel::new(KernelForm::Yukawa3d, 0.5).unwrap(),
        ];
        for kern in cases {
            let mut prev = kern.value(1e-4).unwrap();
            let mut r = 2e-4;
            while r < 20.0 {
                let v = kern.value(r).unwrap();
                assert!(v > prev, "{} not increasing at r={r}", kern.form.name());
                prev = v;
                r *= 1.7;
            }
        }
    }

    #[test]
    fn clamped_gradient_is_finite_near_coincidence() {
        let kern = Kernel::log2d();
        let g = kern.gradient_clamped([1e-9, 0.0], [0.0, 0.0], 1e-3).unwrap();
        assert!(g[0].is_finite() && g[0] > 0.0);
        assert!(kern.gradient_clamped([0.0, 0.0], [0.0, 0.0], 1e-3).unwrap() == [0.0, 0.0]);
        assert!(kern.gradient_clamped([0.0, 0.0], [0.0, 0.0], 0.0).is_err());
        assert!(kern.gradient([0.0, 0.0], [0.0, 0.0]).is_err());
    }
}
