//! Uniform-grid quadrature rules.

use crate::scalar::Real;

/// `out[j] = ∫_{x_0}^{x_j}` by the composite trapezoid rule.
pub fn trapezoid_cumulative<S: Real>(values: &[S], h: S) -> Vec<S> {
    let mut out = Vec::with_capacity(values.len());
    let half = S::lit(0.5) * h;
    let mut acc = S::zero();
    for (j, v) in values.iter().enumerate() {
        if j > 0 {
            acc = acc + half * (values[j - 1] + *v);
        }
        out.push(acc);
    }
    out
}

/// Integral over `[x_i, x_{i+1}]` of the interpolating cubic through the
/// four nearest nodes (quadratic or linear when fewer nodes exist).
#[inline]
fn interval_cubic<S: Real>(v: &[S], i: usize, h: S) -> S {
    let n = v.len() - 1;
    let l = S::lit;
    match n {
        1 => l(0.5) * h * (v[0] + v[1]),
        2 => {
            if i == 0 {
                h * (l(5.0) * v[0] + l(8.0) * v[1] - v[2]) / l(12.0)
            } else {
                h * (-v[0] + l(8.0) * v[1] + l(5.0) * v[2]) / l(12.0)
            }
        }
        _ => {
            if i == 0 {
                h * (l(9.0) * v[0] + l(19.0) * v[1] - l(5.0) * v[2] + v[3]) / l(24.0)
            } else if i == n - 1 {
                h * (v[n - 3] - l(5.0) * v[n - 2] + l(19.0) * v[n - 1] + l(9.0) * v[n]) / l(24.0)
            } else {
                h * (-v[i - 1] + l(13.0) * v[i] + l(13.0) * v[i + 1] - v[i + 2]) / l(24.0)
            }
        }
    }
}

/// `out[j] = ∫_{x_0}^{x_j}` using piecewise cubic interpolation (fourth order).
///
/// Each interval's contribution depends on the full node set, so prefixes
/// are not the same as [`integrate_cubic`] over a truncated slice.
pub fn cubic_cumulative<S: Real>(values: &[S], h: S) -> Vec<S> {
    let mut out = Vec::with_capacity(values.len());
    out.push(S::zero());
    if values.len() < 2 {
        return out;
    }
    let mut acc = S::zero();
    for i in 0..values.len() - 1 {
        acc = acc + interval_cubic(values, i, h);
        out.push(acc);
    }
    out
}

/// `∫_{x_0}^{x_n}` using piecewise cubic interpolation.
pub fn integrate_cubic<S: Real>(values: &[S], h: S) -> S {
    if values.len() < 2 {
        return S::zero();
    }
    let mut acc = S::zero();
    for i in 0..values.len() - 1 {
        acc = acc + interval_cubic(values, i, h);
    }
    acc
}

/// `∫_a^b f` by the piecewise cubic rule on about `(b-a)/step` intervals.
pub fn integrate_fn_cubic<S: Real>(f: impl Fn(S) -> S, a: S, b: S, step: S) -> S {
    if b <= a {
        return S::zero();
    }
    let n = ((b - a) / step).ceil().to_usize().unwrap_or(1).max(1);
    let h = (b - a) / S::from_usize_lossy(n);
    let values: Vec<S> = (0..=n)
        .map(|i| {
            if i == n {
                f(b)
            } else {
                f(a + h * S::from_usize_lossy(i))
            }
        })
        .collect();
    integrate_cubic(&values, h)
}
