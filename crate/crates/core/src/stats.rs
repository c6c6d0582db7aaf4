//! Standard-normal and chi-square helpers.
//!
//! Tail probabilities go through `erfc` so that small overlaps keep their
//! relative precision instead of being computed as `1 - Φ(x)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF Φ(x).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(x), accurate far into the tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Inverse of [`normal_cdf`] for `p` in (0, 1).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs p in (0,1), got {p}")));
    }
    if p > 0.5 {
        // Refine against the upper tail to avoid cancellation near 1.
        let q = 1.0 - p;
        return Ok(-lower_quantile(q));
    }
    Ok(lower_quantile(p))
}

/// Quantile for p ≤ 0.5: rational initial guess followed by Halley steps on Φ.
fn lower_quantile(p: f64) -> f64 {
    let mut x = acklam(p);
    for _ in 0..3 {
        let err = normal_cdf(x) - p;
        let u = err * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        let next = x - u / (1.0 + 0.5 * x * u);
        if !next.is_finite() {
            break;
        }
        x = next;
    }
    x
}

// Acklam's rational approximation, relative error about 1e-9.
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

fn check_dof(dof: usize) -> Result<()> {
    if dof == 2 || dof == 3 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "chi-square degrees of freedom must be 2 or 3, got {dof}"
        )))
    }
}

/// CDF of the chi-square distribution with 2 or 3 degrees of freedom.
pub fn chi_square_cdf(q: f64, dof: usize) -> Result<f64> {
    check_dof(dof)?;
    if q <= 0.0 {
        return Ok(0.0);
    }
    Ok(match dof {
        2 => -(-0.5 * q).exp_m1(),
        _ => {
            let z = (0.5 * q).sqrt();
            if z < 0.05 {
                // Series of P(3/2, z²); the closed form cancels badly here.
                let x = z * z;
                let mut term = 1.0;
                let mut sum = 1.0;
                let mut a = 2.5;
                for _ in 0..12 {
                    term *= x / a;
                    sum += term;
                    a += 1.0;
                }
                4.0 / (3.0 * PI.sqrt()) * z * x * (-x).exp() * sum
            } else {
                libm::erf(z) - (2.0 / PI).sqrt() * q.sqrt() * (-0.5 * q).exp()
            }
        }
    })
}

fn chi_square_pdf(q: f64, dof: usize) -> f64 {
    match dof {
        2 => 0.5 * (-0.5 * q).exp(),
        _ => q.sqrt() * (-0.5 * q).exp() / (SQRT_2 * PI.sqrt()),
    }
}

/// Quantile of the chi-square distribution with 2 or 3 degrees of freedom.
pub fn chi_square_quantile(p: f64, dof: usize) -> Result<f64> {
    check_dof(dof)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("chi-square quantile needs p in (0,1), got {p}")));
    }
    if dof == 2 {
        return Ok(-2.0 * (-p).ln_1p());
    }
    // Safeguarded Newton on the closed-form CDF, starting from Wilson–Hilferty.
    let k = dof as f64;
    let z = normal_quantile(p)?;
    let h = 2.0 / (9.0 * k);
    let mut q = (k * (1.0 - h + z * h.sqrt()).powi(3)).max(1e-8);
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    for _ in 0..100 {
        let f = chi_square_cdf(q, dof)? - p;
        if f == 0.0 {
            return Ok(q);
        }
        if f < 0.0 {
            lo = q;
        } else {
            hi = q;
        }
        let mut next = q - f / chi_square_pdf(q, dof);
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * q.max(1.0)
            };
        }
        if (next - q).abs() <= 1e-15 * q.max(1e-300) {
            return Ok(next);
        }
        q = next;
    }
    Ok(q)
}
