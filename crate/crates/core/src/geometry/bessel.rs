//! Log-space evaluation of the modified Bessel function of the first kind.
//!
//! `log_bessel_i(v, x)` stays finite where `I_v(x)` itself overflows f64
//! (x ~ 1e4 gives I_0(x) ~ e^10000). Three regimes:
//!
//! - large order (v >= 50): uniform asymptotic expansion in v (A&S 9.7.7),
//!   with the polynomials u_k(t) generated from the A&S 9.3.10 recurrence;
//! - small/moderate argument: the ascending power series summed with a
//!   streaming log-sum-exp;
//! - small order, large argument: the large-|x| expansion (A&S 9.7.1).

use once_cell::sync::Lazy;

use super::GeometryError;

const UNIFORM_ORDER_THRESHOLD: f64 = 50.0;
const SERIES_ARGUMENT_LIMIT: f64 = 700.0;
const SERIES_MAX_TERMS: usize = 100_000;

/// Natural log of I_v(x) for v >= 0, x >= 0.
pub fn log_bessel_i(order: f64, x: f64) -> Result<f64, GeometryError> {
    if !order.is_finite() || !x.is_finite() || order < 0.0 || x < 0.0 {
        return Err(GeometryError::NumericalOverflow {
            context: format!("log_bessel_i domain: order={order}, x={x}"),
        });
    }
    if x == 0.0 {
        // I_0(0) = 1, I_v(0) = 0 for v > 0.
        return Ok(if order == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    let value = if order >= UNIFORM_ORDER_THRESHOLD {
        log_bessel_i_uniform(order, x)
    } else if x <= SERIES_ARGUMENT_LIMIT {
        log_bessel_i_series(order, x)?
    } else {
        log_bessel_i_large_x(order, x)
    };
    if value.is_nan() {
        return Err(GeometryError::NumericalOverflow {
            context: format!("log_bessel_i produced NaN at order={order}, x={x}"),
        });
    }
    Ok(value)
}

/// Ascending series I_v(x) = (x/2)^v / Gamma(v+1) * sum_k t_k with
/// t_0 = 1 and t_{k+1} = t_k * (x^2/4) / ((k+1)(v+k+1)).
///
/// All terms are positive; the sum is accumulated as a streaming
/// log-sum-exp so the peak term (which exceeds f64 range near x = 700)
/// never materializes in linear space.
fn log_bessel_i_series(order: f64, x: f64) -> Result<f64, GeometryError> {
    let log_quarter_x2 = (x * x / 4.0).ln();
    let mut max_log_term = 0.0_f64; // log t_0 = 0
    let mut scaled_sum = 1.0_f64; // sum of exp(log t_k - max_log_term)
    let mut log_term = 0.0_f64;
    let mut k = 0usize;
    loop {
        k += 1;
        if k > SERIES_MAX_TERMS {
            return Err(GeometryError::NumericalOverflow {
                context: format!("series for log_bessel_i({order}, {x}) did not converge"),
            });
        }
        let kf = k as f64;
        log_term += log_quarter_x2 - kf.ln() - (order + kf).ln();
        if log_term > max_log_term {
            scaled_sum = scaled_sum * (max_log_term - log_term).exp() + 1.0;
            max_log_term = log_term;
        } else {
            scaled_sum += (log_term - max_log_term).exp();
            // Terms decay beyond the peak; 46 nats is ~1e-20 relative.
            let past_peak = x * x / 4.0 < kf * (order + kf);
            if past_peak && log_term < max_log_term - 46.0 {
                break;
            }
        }
    }
    Ok(order * (x / 2.0).ln() - ln_gamma(order + 1.0) + max_log_term + scaled_sum.ln())
}

/// Uniform asymptotic expansion for large order (A&S 9.7.7):
/// I_v(v z) ~ e^{v eta} / (sqrt(2 pi v) (1+z^2)^{1/4}) * sum_k u_k(t)/v^k.
fn log_bessel_i_uniform(order: f64, x: f64) -> f64 {
    let z = x / order;
    let root = z.hypot(1.0); // sqrt(1 + z^2)
    let t = 1.0 / root;
    let eta = root + (z / (1.0 + root)).ln();

    let mut sum = 0.0;
    let mut order_pow = 1.0;
    for poly in U_POLYNOMIALS.iter() {
        let term = eval_poly(poly, t) / order_pow;
        sum += term;
        if term.abs() < f64::EPSILON * sum.abs() {
            break;
        }
        order_pow *= order;
    }
    order * eta - 0.5 * (2.0 * std::f64::consts::PI * order).ln() + 0.5 * t.ln() + sum.ln()
}

/// Large-argument expansion (A&S 9.7.1), used only for order < 50 where the
/// series is asymptotically decreasing well before machine precision.
fn log_bessel_i_large_x(order: f64, x: f64) -> f64 {
    let mu = 4.0 * order * order;
    let mut sum = 1.0_f64;
    let mut term = 1.0_f64;
    for k in 1..=200usize {
        let kf = k as f64;
        let factor = (mu - (2.0 * kf - 1.0).powi(2)) / (8.0 * x * kf);
        term *= -factor;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
        sum += term;
    }
    x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln()
}

/// u_k(t) polynomials of the uniform expansion, generated from the
/// recurrence u_{k+1} = t^2(1-t^2)/2 * u_k' + 1/8 * int_0^t (1-5 s^2) u_k ds.
/// u_k contains only the powers t^k, t^{k+2}, ..., t^{3k}; `U_POLYNOMIALS[k]`
/// stores dense coefficients indexed by power of t.
static U_POLYNOMIALS: Lazy<Vec<Vec<f64>>> = Lazy::new(|| {
    const K_MAX: usize = 10;
    let mut polys: Vec<Vec<f64>> = vec![vec![1.0]];
    for k in 0..K_MAX {
        let prev = &polys[k];
        let mut next = vec![0.0; prev.len() + 3];
        for (power, &coeff) in prev.iter().enumerate() {
            if coeff == 0.0 {
                continue;
            }
            let p = power as f64;
            next[power + 1] += 0.5 * p * coeff + coeff / (8.0 * (p + 1.0));
            next[power + 3] -= 0.5 * p * coeff + 5.0 * coeff / (8.0 * (p + 3.0));
        }
        polys.push(next);
    }
    polys
});

fn eval_poly(coeffs: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * t + c;
    }
    acc
}

/// Lanczos approximation of ln Gamma(x) for x > 0 (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_1,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_4e-7,
    ];
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x).
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}
