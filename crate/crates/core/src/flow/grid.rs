use std::io::{Read, Write};
use std::path::Path;

use super::BoundaryPoint;
use crate::error::{Error, Result};
use crate::scalar::Real;

const CACHE_MAGIC: &[u8; 8] = b"SRPFLOW1";

/// Grid resolution: `m` time steps on `[0,T]` and `mz` steps on `[0,1]`
/// for the initial points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Resolution {
    pub m: usize,
    pub mz: usize,
}

impl Resolution {
    pub fn new(m: usize, mz: usize) -> Result<Self> {
        if m == 0 || mz == 0 {
            return Err(Error::Grid("resolution must be positive".into()));
        }
        Ok(Self { m, mz })
    }
}

/// A flow tabulated on the initial points `z_j = j/mz`, the boundary points
/// `t_b = bΔt` and the time grid `t_k = kΔt`.
///
/// Between grid times values are linear in `t`; between initial nodes they
/// are linear in `z`. Between boundary nodes the two neighbouring rows are
/// blended at equal elapsed time `t - t₀`, so `θ((0,t₀), t₀) = 0` holds for
/// every `t₀`, not only on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGrid<S> {
    horizon: S,
    res: Resolution,
    /// `initial[j * (m+1) + k]`
    initial: Vec<S>,
    /// `boundary[b * (m+1) + k]`, meaningful for `k >= b`
    boundary: Vec<S>,
}

impl<S: Real> FlowGrid<S> {
    /// The flow that never moves: `θ(γ, t) = y₀(γ)`. This is the start of
    /// the fixed-point iteration and the "identity flow" of the experiments.
    pub fn identity(horizon: S, res: Resolution) -> Self {
        let (m, mz) = (res.m, res.mz);
        let mut initial = vec![S::zero(); (mz + 1) * (m + 1)];
        for j in 0..=mz {
            let z = S::from_usize_lossy(j) / S::from_usize_lossy(mz);
            initial[j * (m + 1)..(j + 1) * (m + 1)].fill(z);
        }
        Self {
            horizon,
            res,
            initial,
            boundary: vec![S::zero(); (m + 1) * (m + 1)],
        }
    }

    /// Tabulates `f(γ, t)` on the grid nodes.
    pub fn from_fn(horizon: S, res: Resolution, f: impl Fn(BoundaryPoint, f64) -> f64) -> Self {
        let mut g = Self::identity(horizon, res);
        let (m, mz) = (res.m, res.mz);
        for j in 0..=mz {
            for k in 0..=m {
                g.initial[j * (m + 1) + k] =
                    S::lit(f(BoundaryPoint::Initial(g.z(j).as_f64()), g.t(k).as_f64()));
            }
        }
        for b in 0..=m {
            for k in b..=m {
                g.boundary[b * (m + 1) + k] =
                    S::lit(f(BoundaryPoint::Boundary(g.t(b).as_f64()), g.t(k).as_f64()));
            }
        }
        g
    }

    /// Wraps node tables laid out as described on the type.
    pub(crate) fn from_tables(
        horizon: S,
        res: Resolution,
        initial: Vec<S>,
        boundary: Vec<S>,
    ) -> Self {
        debug_assert_eq!(initial.len(), (res.mz + 1) * (res.m + 1));
        debug_assert_eq!(boundary.len(), (res.m + 1) * (res.m + 1));
        Self {
            horizon,
            res,
            initial,
            boundary,
        }
    }

    pub fn horizon(&self) -> S {
        self.horizon
    }

    pub fn resolution(&self) -> Resolution {
        self.res
    }

    pub fn dt(&self) -> S {
        self.horizon / S::from_usize_lossy(self.res.m)
    }

    pub fn dz(&self) -> S {
        S::one() / S::from_usize_lossy(self.res.mz)
    }

    /// Grid time `t_k`.
    #[inline]
    pub fn t(&self, k: usize) -> S {
        if k == self.res.m {
            self.horizon
        } else {
            self.dt() * S::from_usize_lossy(k)
        }
    }

    /// Initial node `z_j`.
    #[inline]
    pub fn z(&self, j: usize) -> S {
        S::from_usize_lossy(j) / S::from_usize_lossy(self.res.mz)
    }

    #[inline]
    pub fn initial_node(&self, j: usize, k: usize) -> S {
        self.initial[j * (self.res.m + 1) + k]
    }

    #[inline]
    pub fn boundary_node(&self, b: usize, k: usize) -> S {
        debug_assert!(k >= b);
        self.boundary[b * (self.res.m + 1) + k]
    }

    pub(crate) fn initial_mut(&mut self) -> &mut [S] {
        &mut self.initial
    }

    pub(crate) fn boundary_mut(&mut self) -> &mut [S] {
        &mut self.boundary
    }

    pub(crate) fn initial_values(&self) -> &[S] {
        &self.initial
    }

    pub(crate) fn boundary_values(&self) -> &[S] {
        &self.boundary
    }

    /// `θ(γ, t)` with admissibility and range checks.
    pub fn value(&self, gamma: BoundaryPoint, t: f64) -> Result<S> {
        gamma.check(t, self.horizon.as_f64())?;
        Ok(self.value_unchecked(gamma, S::lit(t)))
    }

    /// `θ(γ, t)` for hot loops; arguments are clamped into the grid.
    pub fn value_unchecked(&self, gamma: BoundaryPoint, t: S) -> S {
        match gamma {
            BoundaryPoint::Initial(z) => {
                let (j, fz) = locate(S::lit(z), S::one(), self.res.mz);
                let a = self.row_at(&self.initial, j, 0, t);
                if fz == S::zero() {
                    a
                } else {
                    a + fz * (self.row_at(&self.initial, j + 1, 0, t) - a)
                }
            }
            BoundaryPoint::Boundary(s) => self.boundary_at(S::lit(s), t),
        }
    }

    /// Blends boundary rows `b` and `b+1` at equal elapsed time.
    fn boundary_at(&self, s: S, t: S) -> S {
        let (b, fb) = locate(s, self.horizon, self.res.m);
        let elapsed = (t - s).max(S::zero());
        let a = self.row_at(&self.boundary, b, b, self.t(b) + elapsed);
        if fb == S::zero() {
            return a;
        }
        let m = self.res.m;
        let reach = self.t(b + 1) + elapsed;
        let c = if reach <= self.horizon {
            self.row_at(&self.boundary, b + 1, b + 1, reach)
        } else {
            // past the horizon: continue row b+1 with row b's final slope
            let slope = (self.boundary_node(b, m) - self.boundary_node(b, m - 1)) / self.dt();
            self.boundary_node(b + 1, m) + (reach - self.horizon) * slope
        };
        a + fb * (c - a)
    }

    /// Row `r` of `table` at time `t`, linear between grid times and
    /// clamped to the row's support `[t_r, T]` for boundary rows.
    #[inline]
    fn row_at(&self, table: &[S], r: usize, lo: usize, t: S) -> S {
        let m = self.res.m;
        let row = &table[r * (m + 1)..(r + 1) * (m + 1)];
        let (k, ft) = locate(t, self.horizon, m);
        if k < lo {
            return row[lo];
        }
        if ft == S::zero() {
            row[k]
        } else {
            row[k] + ft * (row[k + 1] - row[k])
        }
    }

    /// Grid nodes violating the flow invariants by more than `slack`.
    pub fn invariant_violations(&self, slack: S) -> Vec<String> {
        let (m, mz) = (self.res.m, self.res.mz);
        let mut out = Vec::new();
        let in_range = |v: S| v >= S::zero() && v <= S::one();
        for j in 0..=mz {
            if self.initial_node(j, 0) != self.z(j) {
                out.push(format!(
                    "initial row {j} starts at {}",
                    self.initial_node(j, 0)
                ));
            }
            for k in 0..=m {
                let v = self.initial_node(j, k);
                if !in_range(v) {
                    out.push(format!("initial ({j},{k}) = {v}"));
                }
                if k < m && self.initial_node(j, k + 1) + slack < v {
                    out.push(format!("initial row {j} decreases at {k}"));
                }
            }
        }
        for b in 0..=m {
            if self.boundary_node(b, b) != S::zero() {
                out.push(format!(
                    "boundary row {b} starts at {}",
                    self.boundary_node(b, b)
                ));
            }
            for k in b..=m {
                let v = self.boundary_node(b, k);
                if !in_range(v) {
                    out.push(format!("boundary ({b},{k}) = {v}"));
                }
                if k < m && self.boundary_node(b, k + 1) + slack < v {
                    out.push(format!("boundary row {b} decreases at {k}"));
                }
            }
        }
        for k in 0..=m {
            let column = self.ordered_column(k);
            for w in column.windows(2) {
                // listed from the top of the order downwards: values must rise
                if w[1] + slack < w[0] {
                    out.push(format!("order monotonicity broken at t index {k}"));
                    break;
                }
            }
            if self.initial_node(mz, k) != S::one() {
                out.push(format!("θ((1,0), t_{k}) = {}", self.initial_node(mz, k)));
            }
        }
        out
    }

    /// Values at time `t_k` from the top of the order (latest boundary
    /// point) down to the initial point `z = 1`.
    fn ordered_column(&self, k: usize) -> Vec<S> {
        let mut col: Vec<S> = (0..=k).rev().map(|b| self.boundary_node(b, k)).collect();
        col.extend((0..=self.res.mz).map(|j| self.initial_node(j, k)));
        col
    }

    /// Restores the flow invariants: values clamped to `[0,1]`, running max
    /// in `t` along each row, then running max down the order at each time.
    /// Returns the largest change made.
    pub fn isotonic_project(&mut self) -> S {
        let (m, mz) = (self.res.m, self.res.mz);
        let mut change = S::zero();
        let mut set = |slot: &mut S, v: S| {
            change = change.max((*slot - v).abs());
            *slot = v;
        };
        for j in 0..=mz {
            let mut run = S::zero();
            for k in 0..=m {
                let idx = j * (m + 1) + k;
                let v = self.initial[idx].max(S::zero()).min(S::one()).max(run);
                run = v;
                set(&mut self.initial[idx], v);
            }
        }
        for b in 0..=m {
            let mut run = S::zero();
            for k in b..=m {
                let idx = b * (m + 1) + k;
                let v = self.boundary[idx].max(S::zero()).min(S::one()).max(run);
                run = v;
                set(&mut self.boundary[idx], v);
            }
        }
        for k in 0..=m {
            let mut run = S::zero();
            for b in (0..=k).rev() {
                let idx = b * (m + 1) + k;
                let v = self.boundary[idx].max(run);
                run = v;
                set(&mut self.boundary[idx], v);
            }
            for j in 0..=mz {
                let idx = j * (m + 1) + k;
                let v = self.initial[idx].max(run);
                run = v;
                set(&mut self.initial[idx], v);
            }
        }
        change
    }

    /// Largest absolute difference over all grid nodes.
    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        if self.res != other.res {
            return Err(Error::Grid("flows on different grids".into()));
        }
        Ok(self
            .initial
            .iter()
            .zip(&other.initial)
            .chain(self.boundary.iter().zip(&other.boundary))
            .fold(S::zero(), |m, (a, b)| m.max((*a - *b).abs())))
    }

    /// CSV rows `tag,gamma_index,gamma_coord,t,theta`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let (m, mz) = (self.res.m, self.res.mz);
        writeln!(out, "tag,gamma_index,gamma_coord,t,theta")?;
        for j in 0..=mz {
            for k in 0..=m {
                writeln!(
                    out,
                    "initial,{j},{},{},{}",
                    self.z(j),
                    self.t(k),
                    self.initial_node(j, k)
                )?;
            }
        }
        for b in 0..=m {
            for k in b..=m {
                writeln!(
                    out,
                    "boundary,{b},{},{},{}",
                    self.t(b),
                    self.t(k),
                    self.boundary_node(b, k)
                )?;
            }
        }
        Ok(())
    }

    /// Binary cache: magic, spec fingerprint, resolution, horizon, then all
    /// node values as little-endian `f64`.
    pub fn write_cache<W: Write>(&self, mut out: W, fingerprint: u64) -> Result<()> {
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&fingerprint.to_le_bytes())?;
        out.write_all(&(self.res.m as u64).to_le_bytes())?;
        out.write_all(&(self.res.mz as u64).to_le_bytes())?;
        out.write_all(&self.horizon.as_f64().to_le_bytes())?;
        for v in self.initial.iter().chain(&self.boundary) {
            out.write_all(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a cache written by [`FlowGrid::write_cache`], checking that it
    /// belongs to `fingerprint` at resolution `res`.
    pub fn read_cache<R: Read>(mut input: R, fingerprint: u64, res: Resolution) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("not a flow cache".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |input: &mut R| -> Result<[u8; 8]> {
            input.read_exact(&mut word)?;
            Ok(word)
        };
        let fp = u64::from_le_bytes(next(&mut input)?);
        if fp != fingerprint {
            return Err(Error::SpecMismatch {
                left: fp,
                right: fingerprint,
            });
        }
        let m = u64::from_le_bytes(next(&mut input)?) as usize;
        let mz = u64::from_le_bytes(next(&mut input)?) as usize;
        if m != res.m || mz != res.mz {
            return Err(Error::Format(format!(
                "cache resolution {m}x{mz}, requested {}x{}",
                res.m, res.mz
            )));
        }
        let horizon = S::lit(f64::from_le_bytes(next(&mut input)?));
        let mut g = Self::identity(horizon, res);
        for v in g.initial.iter_mut().chain(g.boundary.iter_mut()) {
            *v = S::lit(f64::from_le_bytes(next(&mut input)?));
        }
        Ok(g)
    }

    pub fn save_cache(&self, path: &Path, fingerprint: u64) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_cache(f, fingerprint)
    }

    pub fn load_cache(path: &Path, fingerprint: u64, res: Resolution) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_cache(f, fingerprint, res)
    }

    pub fn cast<T: Real>(&self) -> FlowGrid<T> {
        FlowGrid {
            horizon: T::lit(self.horizon.as_f64()),
            res: self.res,
            initial: self.initial.iter().map(|v| T::lit(v.as_f64())).collect(),
            boundary: self.boundary.iter().map(|v| T::lit(v.as_f64())).collect(),
        }
    }
}

/// Cell index and fraction of `x` on `n` uniform cells over `[0, len]`,
/// clamped so that `idx + 1 <= n` whenever the fraction is non-zero.
#[inline]
pub(crate) fn locate<S: Real>(x: S, len: S, n: usize) -> (usize, S) {
    let nf = S::from_usize_lossy(n);
    let mut r = (x / len * nf).max(S::zero());
    // snap queries that sit on a node up to rounding
    let near = r.round();
    if (r - near).abs() <= S::lit(1e-10) * nf.max(S::one()) {
        r = near;
    }
    if r >= nf {
        return (n, S::zero());
    }
    let i = r.floor();
    (i.to_usize().unwrap_or(0), r - i)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res() -> Resolution {
        Resolution::new(10, 5).unwrap()
    }

    #[test]
    fn identity_flow_is_valid() {
        let g = FlowGrid::<f64>::identity(1.0, res());
        assert!(g.invariant_violations(0.0).is_empty());
        assert!((g.value(BoundaryPoint::Initial(0.3), 0.55).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(g.value(BoundaryPoint::Initial(0.4), 0.55).unwrap(), 0.4);
        assert_eq!(g.value(BoundaryPoint::Boundary(0.37), 0.9).unwrap(), 0.0);
        assert!(g.value(BoundaryPoint::Boundary(0.5), 0.4).is_err());
    }

    #[test]
    fn interpolation_reproduces_affine_flows() {
        // z + (1-z)t/2 is bilinear in (z,t), so interpolation is exact
        let f = |g: BoundaryPoint, t: f64| match g {
            BoundaryPoint::Initial(z) => z + (1.0 - z) * 0.5 * t,
            BoundaryPoint::Boundary(s) => 0.5 * (t - s),
        };
        let g = FlowGrid::<f64>::from_fn(1.0, res(), f);
        for (gamma, t) in [
            (BoundaryPoint::Initial(0.33), 0.71),
            (BoundaryPoint::Initial(1.0), 1.0),
            (BoundaryPoint::Boundary(0.37), 0.9),
            (BoundaryPoint::Boundary(0.37), 0.37),
            (BoundaryPoint::Boundary(0.95), 1.0),
        ] {
            let v = g.value(gamma, t).unwrap();
            assert!((v - f(gamma, t)).abs() < 1e-12, "{gamma:?} {t}: {v}");
        }
        assert!(g.invariant_violations(1e-15).is_empty());
    }

    #[test]
    fn projection_repairs_and_reports() {
        let mut g = FlowGrid::<f64>::identity(1.0, res());
        assert_eq!(g.isotonic_project(), 0.0);
        g.initial_mut()[2 * 11 + 4] = 0.1; // dips below z = 0.4
        g.boundary_mut()[3 * 11 + 7] = 1.5;
        let change = g.isotonic_project();
        assert!(change > 0.0);
        assert!(
            g.invariant_violations(0.0).len() <= 1,
            "{:?}",
            g.invariant_violations(0.0)
        );
    }

    #[test]
    fn cache_round_trip_checks_key() {
        let g = FlowGrid::<f64>::from_fn(2.0, res(), |g, t| (g.y0() + 0.1 * t).min(1.0));
        let mut buf = Vec::new();
        g.write_cache(&mut buf, 42).unwrap();
        let back = FlowGrid::<f64>::read_cache(&buf[..], 42, res()).unwrap();
        assert_eq!(back, g);
        assert!(matches!(
            FlowGrid::<f64>::read_cache(&buf[..], 7, res()),
            Err(Error::SpecMismatch { .. })
        ));
        assert!(
            FlowGrid::<f64>::read_cache(&buf[..], 42, Resolution::new(10, 6).unwrap()).is_err()
        );
    }
}
