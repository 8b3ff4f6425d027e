//! Point processes whose hazard after the latest arrival `s` is `ω(s, t)`.
//!
//! Between arrivals the process behaves like an inhomogeneous Poisson
//! process with rate `ω(τ*, ·)`, where `τ*` is the last arrival time (or 0
//! before the first arrival). The survival probability
//! `p(s,t) = P(N(t) = N(s))` is computed two ways: a renewal Volterra
//! equation for the arrival density (production path, [`survival_solve`])
//! and the explicit sum over arrival configurations ([`survival_series`]).

use std::io::Write;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::quad::{cubic_cumulative, integrate_cubic, integrate_fn_cubic, trapezoid_cumulative};
use crate::scalar::Real;

type FirstFn<S> = dyn Fn(S) -> S + Send + Sync;
type RenewalFn<S> = dyn Fn(S, S) -> S + Send + Sync;

/// Hazard kernel `ω(s, t)`, `0 <= s <= t`.
///
/// The kernel is held as two pieces: the row `ω(0, ·)` used before the
/// first arrival, and the renewal kernel used after an arrival at `s > 0`.
/// The renewal piece must extend continuously to `s = 0`; the first row is
/// allowed to differ from that extension.
#[derive(Clone)]
pub struct LatpIntensity<S> {
    first: Arc<FirstFn<S>>,
    renewal: Arc<RenewalFn<S>>,
    sup_norm: S,
}

impl<S: Real> std::fmt::Debug for LatpIntensity<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatpIntensity")
            .field("sup_norm", &self.sup_norm)
            .finish_non_exhaustive()
    }
}

impl<S: Real> LatpIntensity<S> {
    /// Kernel continuous on the whole triangle.
    pub fn from_fn(f: impl Fn(S, S) -> S + Send + Sync + 'static, sup_norm: S) -> Self {
        let f = Arc::new(f);
        let g = Arc::clone(&f);
        Self {
            first: Arc::new(move |t| g(S::zero(), t)),
            renewal: f,
            sup_norm,
        }
    }

    /// Kernel with a separate pre-first-arrival row.
    pub fn split(
        first: impl Fn(S) -> S + Send + Sync + 'static,
        renewal: impl Fn(S, S) -> S + Send + Sync + 'static,
        sup_norm: S,
    ) -> Self {
        Self {
            first: Arc::new(first),
            renewal: Arc::new(renewal),
            sup_norm,
        }
    }

    pub fn constant(rate: S) -> Self {
        Self::from_fn(move |_, _| rate, rate.abs())
    }

    pub fn zero() -> Self {
        Self::constant(S::zero())
    }

    /// `ω(s, t)`; `s = 0` means "no arrival yet".
    #[inline]
    pub fn rate(&self, s: S, t: S) -> S {
        if s == S::zero() {
            (self.first)(t)
        } else {
            (self.renewal)(s, t)
        }
    }

    #[inline]
    pub fn first_rate(&self, t: S) -> S {
        (self.first)(t)
    }

    /// Renewal kernel including its continuous extension at `s = 0`.
    #[inline]
    pub fn renewal_rate(&self, s: S, t: S) -> S {
        (self.renewal)(s, t)
    }

    pub fn sup_norm(&self) -> S {
        self.sup_norm
    }

    /// Largest value seen on an `n x n` grid of the triangle (both pieces).
    pub fn scan_sup(&self, horizon: S, n: usize) -> S {
        let h = horizon / S::from_usize_lossy(n.max(1));
        let mut sup = S::zero();
        for j in 0..=n {
            let t = h * S::from_usize_lossy(j);
            sup = sup.max(self.first_rate(t).abs());
            for i in 0..=j {
                sup = sup.max(self.renewal_rate(h * S::from_usize_lossy(i), t).abs());
            }
        }
        sup
    }

    /// Largest adjacent-node difference quotient of the renewal kernel on an
    /// `n x n` grid; bounded values indicate continuity at that resolution.
    pub fn max_grid_slope(&self, horizon: S, n: usize) -> S {
        let h = horizon / S::from_usize_lossy(n.max(1));
        let mut worst = S::zero();
        for j in 1..=n {
            let t = h * S::from_usize_lossy(j);
            let tp = h * S::from_usize_lossy(j - 1);
            worst = worst.max(((self.first_rate(t) - self.first_rate(tp)) / h).abs());
            for i in 0..j {
                let s = h * S::from_usize_lossy(i);
                let base = self.renewal_rate(s, t);
                worst = worst.max(((base - self.renewal_rate(s, tp.max(s))) / h).abs());
                let s2 = h * S::from_usize_lossy(i + 1);
                worst = worst.max(((self.renewal_rate(s2, t) - base) / h).abs());
            }
        }
        worst
    }
}

/// Ordered arrival times in `(0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalSequence<S> {
    times: Vec<S>,
    horizon: S,
}

impl<S: Real> ArrivalSequence<S> {
    pub fn new(times: Vec<S>, horizon: S) -> Result<Self> {
        let mut prev = S::zero();
        for (k, t) in times.iter().enumerate() {
            if !(*t > prev) || *t > horizon {
                return Err(Error::domain(
                    "arrival sequence",
                    format!("arrival {k} at {t} breaks strict increase in (0, {horizon}]"),
                ));
            }
            prev = *t;
        }
        Ok(Self { times, horizon })
    }

    pub fn times(&self) -> &[S] {
        &self.times
    }

    pub fn horizon(&self) -> S {
        self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `N(t)`: arrivals in `(0, t]`.
    pub fn count_at(&self, t: S) -> usize {
        self.times.partition_point(|&x| x <= t)
    }

    /// `τ*(t)`: last arrival at or before `t`, or 0.
    pub fn last_arrival(&self, t: S) -> S {
        match self.count_at(t) {
            0 => S::zero(),
            k => self.times[k - 1],
        }
    }

    /// Whether no arrival falls in `(s, t]`.
    pub fn survives(&self, s: S, t: S) -> bool {
        self.count_at(s) == self.count_at(t)
    }
}

/// `Ω(t0, t) = ∫_{t0}^t ω(t0, u) du` by the composite trapezoid rule.
///
/// The first argument is the arrival time the hazard is anchored to, so
/// `Ω(a, b) + Ω(b, c) != Ω(a, c)` in general.
pub fn omega_integral<S: Real>(omega: &LatpIntensity<S>, t0: S, t: S, step: S) -> Result<S> {
    if t0 > t {
        return Err(Error::domain(
            "omega integral",
            format!("t0 = {t0} exceeds t = {t}"),
        ));
    }
    if t0 == t {
        return Ok(S::zero());
    }
    let n = ((t - t0) / step).ceil().to_usize().unwrap_or(1).max(1);
    let h = (t - t0) / S::from_usize_lossy(n);
    let values: Vec<S> = (0..=n)
        .map(|i| {
            let u = if i == n {
                t
            } else {
                t0 + h * S::from_usize_lossy(i)
            };
            omega.rate(t0, u)
        })
        .collect();
    Ok(*trapezoid_cumulative(&values, h).last().expect("non-empty"))
}

/// Thinning envelope with a 5% margin over the sup-norm.
pub fn default_envelope<S: Real>(omega: &LatpIntensity<S>) -> S {
    omega.sup_norm() * S::lit(1.05)
}

/// Samples arrivals on `(0, T]` by thinning a rate-`envelope` candidate
/// stream with uniform marks in `[0, envelope)`. A candidate at `u` is kept
/// iff its mark is below `ω(τ*(u-), u)`.
pub fn sample_arrivals<S: Real, R: Rng + ?Sized>(
    omega: &LatpIntensity<S>,
    horizon: S,
    envelope: S,
    rng: &mut R,
) -> Result<ArrivalSequence<S>> {
    if envelope < omega.sup_norm() {
        return Err(Error::domain(
            "thinning envelope",
            format!("{envelope} is below sup norm {}", omega.sup_norm()),
        ));
    }
    let mut times = Vec::new();
    if envelope <= S::zero() {
        return Ok(ArrivalSequence { times, horizon });
    }
    let env = envelope.as_f64();
    let t_max = horizon.as_f64();
    let mut u = 0.0f64;
    let mut last = S::zero();
    loop {
        let e: f64 = rng.random();
        u += -(1.0 - e).ln() / env;
        if u > t_max {
            break;
        }
        let mark = rng.random::<f64>() * env;
        let us = S::lit(u);
        let rate = omega.rate(last, us);
        if rate.as_f64() > env * (1.0 + 1e-12) {
            return Err(Error::EnvelopeBreach {
                rate: rate.as_f64(),
                envelope: env,
                time: u,
            });
        }
        if mark < rate.as_f64() && us > last {
            times.push(us);
            last = us;
        }
    }
    Ok(ArrivalSequence { times, horizon })
}

/// `p[i][j] ≈ P(N(t_j) = N(t_i))` for `i <= j` on a uniform grid, plus the
/// arrival-rate density on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalTable<S> {
    step: S,
    m: usize,
    p: Vec<S>,
    density: Vec<S>,
}

impl<S: Real> SurvivalTable<S> {
    /// Number of grid intervals.
    pub fn intervals(&self) -> usize {
        self.m
    }

    pub fn step(&self) -> S {
        self.step
    }

    pub fn time(&self, i: usize) -> S {
        self.step * S::from_usize_lossy(i)
    }

    /// `p(t_i, t_j)` for `i <= j`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        debug_assert!(i <= j);
        self.p[i * (self.m + 1) + j]
    }

    /// Arrival-rate density `f(t_j)`.
    pub fn density(&self) -> &[S] {
        &self.density
    }

    /// `p(s, t)` for grid times `s <= t`.
    pub fn value(&self, s: S, t: S) -> Result<S> {
        let i = self.node_index(s)?;
        let j = self.node_index(t)?;
        if i > j {
            return Err(Error::domain(
                "survival query",
                format!("s = {s} > t = {t}"),
            ));
        }
        Ok(self.get(i, j))
    }

    fn node_index(&self, x: S) -> Result<usize> {
        let r = x / self.step;
        let i = r.round();
        if (r - i).abs() > S::lit(1e-6) || i < S::zero() || i > S::from_usize_lossy(self.m) {
            return Err(Error::domain(
                "survival query",
                format!("{x} is not a grid time"),
            ));
        }
        Ok(i.to_usize().expect("checked range"))
    }

    /// Invariant violations exceeding `slack`: diagonal, range, and
    /// monotonicity in each argument.
    pub fn invariant_violations(&self, slack: S) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..=self.m {
            if self.get(i, i) != S::one() {
                out.push(format!("p[{i}][{i}] = {}", self.get(i, i)));
            }
            for j in i..=self.m {
                let v = self.get(i, j);
                if v < S::zero() || v > S::one() {
                    out.push(format!("p[{i}][{j}] = {v} outside [0,1]"));
                }
                if j < self.m && self.get(i, j + 1) > v + slack {
                    out.push(format!("p[{i}][·] increases at j = {j}"));
                }
                if i < j && self.get(i + 1, j) + slack < v {
                    out.push(format!("p[·][{j}] decreases at i = {i}"));
                }
            }
        }
        out
    }

    /// CSV rows `s,t,p` over the upper triangle.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "s,t,p")?;
        for i in 0..=self.m {
            for j in i..=self.m {
                writeln!(out, "{},{},{}", self.time(i), self.time(j), self.get(i, j))?;
            }
        }
        Ok(())
    }
}

/// Uniform grid `0, T/m, ..., T`.
pub fn uniform_grid<S: Real>(horizon: S, m: usize) -> Vec<S> {
    let h = horizon / S::from_usize_lossy(m);
    (0..=m)
        .map(|i| {
            if i == m {
                horizon
            } else {
                h * S::from_usize_lossy(i)
            }
        })
        .collect()
}

pub(crate) fn grid_step<S: Real>(grid: &[S]) -> Result<S> {
    if grid.len() < 2 {
        return Err(Error::Grid("need at least two grid points".into()));
    }
    if grid[0] != S::zero() {
        return Err(Error::Grid("grid must start at 0".into()));
    }
    let m = grid.len() - 1;
    let h = grid[m] / S::from_usize_lossy(m);
    if !(h > S::zero()) {
        return Err(Error::Grid("grid must be increasing".into()));
    }
    let tol = S::lit(1e-9).max(S::epsilon() * S::lit(64.0)) * grid[m].max(S::one());
    for (i, t) in grid.iter().enumerate() {
        if (*t - h * S::from_usize_lossy(i)).abs() > tol {
            return Err(Error::Grid(format!("grid is not uniform at index {i}")));
        }
    }
    Ok(h)
}

/// Solves for the survival table on a uniform grid.
///
/// The arrival density `f` solves
/// `f(u) = ω(0,u) e^{-Ω(0,u)} + ∫_0^u f(v) ω(v,u) e^{-Ω(v,u)} dv`
/// (trapezoid, implicit in the diagonal node), and
/// `p(s,t) = 1 - [e^{-Ω(0,s)} - e^{-Ω(0,t)}] - ∫_0^s f(u) [e^{-Ω(u,s)} - e^{-Ω(u,t)}] du`,
/// which pins `p(s,s) = 1` and keeps `p` non-increasing in `t` exactly.
pub fn survival_solve<S: Real>(omega: &LatpIntensity<S>, grid: &[S]) -> Result<SurvivalTable<S>> {
    let h = grid_step(grid)?;
    let m = grid.len() - 1;
    let first: Vec<S> = grid.iter().map(|&t| omega.first_rate(t)).collect();
    let mut renewal = vec![S::zero(); (m + 1) * (m + 1)];
    for i in 0..=m {
        for j in i..=m {
            renewal[i * (m + 1) + j] = omega.renewal_rate(grid[i], grid[j]);
        }
    }
    SurvivalCore::solve(h, &first, |i, j| renewal[i * (m + 1) + j]).map(|c| c.into_table(h))
}

/// Shared discretization used by [`survival_solve`] and the limit-flow
/// solver: kernel tables plus the trapezoid Volterra solve.
pub(crate) struct SurvivalCore<S> {
    pub m: usize,
    /// `e^{-Ω(0, t_j)}` with the first-arrival row.
    pub first_survival: Vec<S>,
    /// `e^{-Ω(t_i, t_j)}` with the renewal kernel, row-major `(m+1)^2`.
    pub renewal_survival: Vec<S>,
    /// Arrival-rate density.
    pub density: Vec<S>,
}

impl<S: Real> SurvivalCore<S> {
    pub fn solve(h: S, first: &[S], renewal: impl Fn(usize, usize) -> S) -> Result<Self> {
        let omega0 = trapezoid_cumulative(first, h);
        let first_survival: Vec<S> = omega0.iter().map(|o| (-*o).exp()).collect();
        let source: Vec<S> = first
            .iter()
            .zip(&first_survival)
            .map(|(w, e)| *w * *e)
            .collect();
        Self::solve_with_source(h, first_survival, &source, renewal)
    }

    /// Same as [`SurvivalCore::solve`] with caller-supplied source term
    /// `g(u)` and first-arrival survival (used for `z`-averaged problems).
    pub fn solve_with_source(
        h: S,
        first_survival: Vec<S>,
        source: &[S],
        renewal: impl Fn(usize, usize) -> S,
    ) -> Result<Self> {
        let m = source.len() - 1;
        let half = S::lit(0.5);
        let mut renewal_survival = vec![S::zero(); (m + 1) * (m + 1)];
        let mut kernel = vec![S::zero(); (m + 1) * (m + 1)];
        let mut row = Vec::with_capacity(m + 1);
        for i in 0..=m {
            row.clear();
            row.extend((i..=m).map(|j| renewal(i, j)));
            let cum = trapezoid_cumulative(&row, h);
            for (off, j) in (i..=m).enumerate() {
                let e = (-cum[off]).exp();
                renewal_survival[i * (m + 1) + j] = e;
                kernel[i * (m + 1) + j] = row[off] * e;
            }
        }
        let mut density = vec![S::zero(); m + 1];
        density[0] = source[0];
        for j in 1..=m {
            let mut acc = half * density[0] * kernel[j];
            for i in 1..j {
                acc = acc + density[i] * kernel[i * (m + 1) + j];
            }
            let diag = kernel[j * (m + 1) + j];
            let denom = S::one() - half * h * diag;
            if !(denom > S::zero()) {
                return Err(Error::Grid(format!(
                    "step {h} too coarse for kernel value {diag}"
                )));
            }
            density[j] = (source[j] + h * acc) / denom;
        }
        Ok(Self {
            m,
            first_survival,
            renewal_survival,
            density,
        })
    }

    #[inline]
    pub fn renewal_survival(&self, i: usize, j: usize) -> S {
        self.renewal_survival[i * (self.m + 1) + j]
    }

    /// Fills `out[(i, j)]` with survival from `t_i` to `t_j`, normalized so
    /// that `p(t_i, t_i) = total`.
    pub fn survival_rows(&self, h: S, total: S) -> Vec<S> {
        let m = self.m;
        let half = S::lit(0.5);
        let mut p = vec![S::zero(); (m + 1) * (m + 1)];
        // partial[j] = trapezoid over u <= i of f(u) e^{-Ω(u, t_j)}, advanced in i
        let mut partial = vec![S::zero(); m + 1];
        for i in 0..=m {
            if i >= 1 {
                for j in i..=m {
                    partial[j] = partial[j]
                        + half
                            * h
                            * (self.density[i - 1] * self.renewal_survival(i - 1, j)
                                + self.density[i] * self.renewal_survival(i, j));
                }
            }
            let diag = partial[i];
            p[i * (m + 1) + i] = total;
            for j in i + 1..=m {
                let loss = (self.first_survival[i] - self.first_survival[j]) + (diag - partial[j]);
                p[i * (m + 1) + j] = (total - loss).max(S::zero());
            }
        }
        p
    }

    fn into_table(self, h: S) -> SurvivalTable<S> {
        let p = self.survival_rows(h, S::one());
        SurvivalTable {
            step: h,
            m: self.m,
            p,
            density: self.density,
        }
    }
}

/// Truncation bound `(‖ω‖ s)^{k+1} / (k+1)!` of the series after `kmax` terms.
pub fn series_truncation_bound<S: Real>(sup_norm: S, s: S, kmax: usize) -> S {
    let mut term = S::one();
    for k in 1..=kmax + 1 {
        term = term * sup_norm * s / S::from_usize_lossy(k);
    }
    term
}

/// `P(N(t) = N(s))` as the sum over `k <= kmax` arrivals before `s` of the
/// nested simplex integrals, evaluated by iterated piecewise-cubic
/// quadrature with step about `quad`.
///
/// Term `k` is `∫_0^s a_k(u) e^{-Ω(u,t)} du` where `a_k` is the density of
/// the `k`-th arrival; `a_{k+1}(u) = ∫_0^u a_k(v) ω(v,u) e^{-Ω(v,u)} dv`
/// reuses the previous term's inner integral.
pub fn survival_series<S: Real>(
    omega: &LatpIntensity<S>,
    s: S,
    t: S,
    kmax: usize,
    quad: S,
) -> Result<S> {
    if s > t || s < S::zero() {
        return Err(Error::domain(
            "survival series",
            format!("need 0 <= s <= t, got s = {s}, t = {t}"),
        ));
    }
    let zero_arrivals = (-integrate_fn_cubic(|u| omega.first_rate(u), S::zero(), t, quad)).exp();
    if kmax == 0 || s == S::zero() {
        return Ok(zero_arrivals);
    }
    let n = (s / quad).ceil().to_usize().unwrap_or(1).max(1);
    let h = s / S::from_usize_lossy(n);
    let nodes: Vec<S> = (0..=n)
        .map(|i| {
            if i == n {
                s
            } else {
                h * S::from_usize_lossy(i)
            }
        })
        .collect();

    let first: Vec<S> = nodes.iter().map(|&u| omega.first_rate(u)).collect();
    let omega0 = cubic_cumulative(&first, h);
    let mut density: Vec<S> = first
        .iter()
        .zip(&omega0)
        .map(|(w, o)| *w * (-*o).exp())
        .collect();

    // kernel[i][j] = ω(u_i, u_j) e^{-Ω(u_i, u_j)}, j >= i
    let mut kernel = vec![S::zero(); (n + 1) * (n + 1)];
    let mut row = Vec::with_capacity(n + 1);
    for i in 0..=n {
        row.clear();
        row.extend((i..=n).map(|j| omega.renewal_rate(nodes[i], nodes[j])));
        let cum = cubic_cumulative(&row, h);
        for (off, j) in (i..=n).enumerate() {
            kernel[i * (n + 1) + j] = row[off] * (-cum[off]).exp();
        }
    }
    let tail: Vec<S> = nodes
        .iter()
        .map(|&u| (-integrate_fn_cubic(|x| omega.renewal_rate(u, x), u, t, quad)).exp())
        .collect();

    let mut total = zero_arrivals;
    let mut buf = Vec::with_capacity(n + 1);
    for k in 1..=kmax {
        buf.clear();
        buf.extend(density.iter().zip(&tail).map(|(a, e)| *a * *e));
        let term = integrate_cubic(&buf, h);
        total = total + term;
        if k == kmax || density.iter().all(|a| *a == S::zero()) {
            break;
        }
        let mut next = vec![S::zero(); n + 1];
        for (j, slot) in next.iter_mut().enumerate().skip(1) {
            buf.clear();
            buf.extend((0..=j).map(|i| density[i] * kernel[i * (n + 1) + j]));
            *slot = integrate_cubic(&buf, h);
        }
        density = next;
    }
    Ok(total)
}

/// Largest violations of the derivative bounds
/// `0 <= -∂p/∂t <= ‖ω‖` and `0 <= ∂p/∂s <= ‖ω‖ p` (forward differences).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DerivativeReport {
    pub t_below_zero: f64,
    pub t_above_bound: f64,
    pub s_below_zero: f64,
    pub s_above_bound: f64,
    /// Largest `-∂p/∂t` difference quotient seen.
    pub max_t_quotient: f64,
    /// Largest `∂p/∂s` difference quotient seen.
    pub max_s_quotient: f64,
}

impl DerivativeReport {
    pub fn worst(&self) -> f64 {
        self.t_below_zero
            .max(self.t_above_bound)
            .max(self.s_below_zero)
            .max(self.s_above_bound)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() <= tol
    }
}

pub fn derivative_bound_check<S: Real>(
    table: &SurvivalTable<S>,
    omega: &LatpIntensity<S>,
) -> DerivativeReport {
    let h = table.step().as_f64();
    let norm = omega.sup_norm().as_f64();
    let m = table.intervals();
    let mut r = DerivativeReport {
        t_below_zero: 0.0,
        t_above_bound: 0.0,
        s_below_zero: 0.0,
        s_above_bound: 0.0,
        max_t_quotient: 0.0,
        max_s_quotient: 0.0,
    };
    for i in 0..=m {
        for j in i..m {
            let dt = (table.get(i, j) - table.get(i, j + 1)).as_f64() / h;
            r.max_t_quotient = r.max_t_quotient.max(dt);
            r.t_below_zero = r.t_below_zero.max(-dt);
            r.t_above_bound = r.t_above_bound.max(dt - norm);
        }
    }
    for j in 0..=m {
        for i in 0..j {
            let ds = (table.get(i + 1, j) - table.get(i, j)).as_f64() / h;
            r.max_s_quotient = r.max_s_quotient.max(ds);
            r.s_below_zero = r.s_below_zero.max(-ds);
            r.s_above_bound = r
                .s_above_bound
                .max(ds - norm * table.get(i + 1, j).as_f64());
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_plus_s() -> LatpIntensity<f64> {
        LatpIntensity::from_fn(|s, _| 1.0 + s, 2.0)
    }

    #[test]
    fn omega_integral_examples() {
        let z = LatpIntensity::<f64>::zero();
        assert_eq!(omega_integral(&z, 0.0, 1.0, 0.01).unwrap(), 0.0);
        let c = LatpIntensity::constant(2.0f64);
        assert!((omega_integral(&c, 0.0, 0.5, 0.01).unwrap() - 1.0).abs() < 1e-14);
        // ω(s,u) = u - s: closed form (t - s)^2 / 2 = 0.32 for (0.2, 1.0)
        let lin = LatpIntensity::from_fn(|s: f64, u: f64| u - s, 1.0);
        for step in [0.1, 0.05, 0.01] {
            let v = omega_integral(&lin, 0.2, 1.0, step).unwrap();
            assert!((v - 0.32).abs() <= step * step + 1e-14);
        }
        let quad = LatpIntensity::from_fn(|s: f64, u: f64| (u - s) * (u - s), 1.0);
        let exact = 0.8f64.powi(3) / 3.0;
        let e1 = (omega_integral(&quad, 0.2, 1.0, 0.1).unwrap() - exact).abs();
        let e2 = (omega_integral(&quad, 0.2, 1.0, 0.05).unwrap() - exact).abs();
        assert!((e1 / e2 - 4.0).abs() < 0.1);
        assert!(omega_integral(&c, 0.6, 0.5, 0.01).is_err());
    }

    #[test]
    fn sampler_zero_rate_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = LatpIntensity::<f64>::zero();
        assert!(sample_arrivals(&z, 1.0, 0.0, &mut rng).unwrap().is_empty());
        assert!(sample_arrivals(&z, 1.0, 1.0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn sampler_constant_rate_is_poisson() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = 1.7;
        let t = 2.0;
        let omega = LatpIntensity::constant(c);
        let reps = 10_000;
        let total: usize = (0..reps)
            .map(|_| {
                sample_arrivals(&omega, t, 2.0, &mut rng)
                    .unwrap()
                    .times()
                    .len()
            })
            .sum();
        let mean = total as f64 / reps as f64;
        let sigma = (c * t / reps as f64).sqrt();
        assert!((mean - c * t).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn sampler_first_arrival_survival() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let omega = one_plus_s();
        let reps = 10_000;
        let hits = (0..reps)
            .filter(|_| {
                sample_arrivals(&omega, 1.0, default_envelope(&omega), &mut rng)
                    .unwrap()
                    .count_at(1.0)
                    == 0
            })
            .count();
        let p = (-1.0f64).exp();
        let est = hits as f64 / reps as f64;
        assert!((est - p).abs() < 3.0 * (p * (1.0 - p) / reps as f64).sqrt());
    }

    #[test]
    fn sampler_rejects_small_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let omega = one_plus_s();
        assert!(sample_arrivals(&omega, 1.0, 1.0, &mut rng).is_err());
        // lying about the sup-norm is caught at evaluation time
        let liar = LatpIntensity::from_fn(|_, _| 5.0, 1.0);
        assert!(matches!(
            sample_arrivals(&liar, 1.0, 1.0, &mut rng),
            Err(Error::EnvelopeBreach { .. })
        ));
    }

    #[test]
    fn solve_zero_rate() {
        let table = survival_solve(&LatpIntensity::<f64>::zero(), &uniform_grid(1.0, 20)).unwrap();
        for i in 0..=20 {
            for j in i..=20 {
                assert_eq!(table.get(i, j), 1.0);
            }
        }
        assert!(table.density().iter().all(|f| *f == 0.0));
    }

    #[test]
    fn solve_constant_rate_closed_form() {
        let omega = LatpIntensity::constant(2.0);
        for m in [100, 200] {
            let table = survival_solve(&omega, &uniform_grid(1.0, m)).unwrap();
            let h = 1.0 / m as f64;
            let got = table.value(0.0, 0.5).unwrap();
            assert!((got - (-1.0f64).exp()).abs() < 1e-12);
            for i in 0..=m {
                for j in i..=m {
                    let exact = (-2.0 * (j - i) as f64 * h).exp();
                    assert!((table.get(i, j) - exact).abs() <= 2.0 * h * h);
                }
            }
        }
    }

    #[test]
    fn solve_matches_series_for_one_plus_s() {
        let omega = one_plus_s();
        let m = 200;
        let h = 1.0 / m as f64;
        let table = survival_solve(&omega, &uniform_grid(1.0, m)).unwrap();
        let series = survival_series(&omega, 0.5, 1.0, 20, h).unwrap();
        let solved = table.value(0.5, 1.0).unwrap();
        assert!(
            (series - solved).abs() <= 1e-6 + h * h,
            "{series} vs {solved}"
        );
    }

    #[test]
    fn solve_rejects_non_uniform_grid() {
        let grid = vec![0.0, 0.1, 0.3, 0.4];
        assert!(matches!(
            survival_solve(&LatpIntensity::constant(1.0), &grid),
            Err(Error::Grid(_))
        ));
    }

    #[test]
    fn table_invariants_hold() {
        for omega in [LatpIntensity::constant(2.0), one_plus_s()] {
            let table = survival_solve(&omega, &uniform_grid(1.0, 100)).unwrap();
            assert!(table.invariant_violations(1e-12).is_empty());
        }
    }

    #[test]
    fn grid_halving_is_second_order() {
        let omega =
            LatpIntensity::from_fn(|s: f64, t: f64| 1.0 + s + 0.5 * (3.0 * t).sin().abs(), 2.5);
        let coarse = survival_solve(&omega, &uniform_grid(1.0, 50)).unwrap();
        let mid = survival_solve(&omega, &uniform_grid(1.0, 100)).unwrap();
        let fine = survival_solve(&omega, &uniform_grid(1.0, 200)).unwrap();
        let gap = |a: &SurvivalTable<f64>, b: &SurvivalTable<f64>| {
            let mut worst: f64 = 0.0;
            for i in 0..=a.intervals() {
                for j in i..=a.intervals() {
                    worst = worst.max((a.get(i, j) - b.get(2 * i, 2 * j)).abs());
                }
            }
            worst
        };
        let ratio = gap(&coarse, &mid) / gap(&mid, &fine);
        assert!(ratio >= 3.0, "ratio {ratio}");
    }

    #[test]
    fn series_examples() {
        let omega = one_plus_s();
        // kmax = 0 is the zero-arrival term e^{-Ω(0,t)}, Ω(0,1) = 1
        let v = survival_series(&omega, 0.5, 1.0, 0, 0.01).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-14);
        // Poisson total mass at s = t
        let c = LatpIntensity::constant(1.0f64);
        let total = survival_series(&c, 1.0, 1.0, 30, 0.001).unwrap();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
        let v = survival_series(&c, 0.5, 1.0, 20, 0.01).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-8);
        let bound = series_truncation_bound(1.0, 0.5, 20);
        assert!(bound < 1e-25);
    }

    #[test]
    fn derivative_bounds() {
        let z = survival_solve(&LatpIntensity::<f64>::zero(), &uniform_grid(1.0, 40)).unwrap();
        let r = derivative_bound_check(&z, &LatpIntensity::zero());
        assert_eq!(r.max_t_quotient, 0.0);
        assert_eq!(r.max_s_quotient, 0.0);
        assert_eq!(r.worst(), 0.0);

        let c = LatpIntensity::constant(3.0);
        let table = survival_solve(&c, &uniform_grid(1.0, 200)).unwrap();
        let r = derivative_bound_check(&table, &c);
        // -∂p/∂t = c p <= c, so the forward quotient stays below c
        assert!(r.max_t_quotient <= 3.0 + 1e-9);
        assert!(r.passes(1e-9));

        let omega = one_plus_s();
        let h = 1.0 / 200.0;
        let table = survival_solve(&omega, &uniform_grid(1.0, 200)).unwrap();
        assert!(derivative_bound_check(&table, &omega).passes(10.0 * h));
    }

    #[test]
    fn split_kernel_uses_first_row_before_any_arrival() {
        let omega = LatpIntensity::split(|_| 0.0, |_, _| 5.0, 5.0);
        let table = survival_solve(&omega, &uniform_grid(1.0, 50)).unwrap();
        for j in 0..=50 {
            assert_eq!(table.get(0, j), 1.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_arrivals(&omega, 1.0, 5.0, &mut rng)
            .unwrap()
            .is_empty());
    }
}
