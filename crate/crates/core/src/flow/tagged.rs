use super::{BoundaryPoint, FlowGrid};
use crate::error::{Error, Result};
use crate::intensity::IntensityField;
use crate::stream::CandidateStream;

/// A limit tagged-particle path: jump times, and between jumps the flow
/// from the last reset point.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedPath {
    pub y0: f64,
    pub horizon: f64,
    pub jumps: Vec<f64>,
}

impl TaggedPath {
    /// Reset point `γ(t)`: the initial point before the first jump, then
    /// the boundary point of the last jump at or before `t`.
    pub fn gamma(&self, t: f64) -> BoundaryPoint {
        match self.jumps.partition_point(|&s| s <= t) {
            0 => BoundaryPoint::Initial(self.y0),
            k => BoundaryPoint::Boundary(self.jumps[k - 1]),
        }
    }

    /// `Y(t) = θ(γ(t), t)`.
    pub fn position(&self, flow: &FlowGrid<f64>, t: f64) -> f64 {
        flow.value_unchecked(self.gamma(t), t)
    }

    /// `(t_k, Y(t_k))` on `n` uniform steps.
    pub fn on_grid(&self, flow: &FlowGrid<f64>, n: usize) -> Vec<(f64, f64)> {
        (0..=n)
            .map(|k| {
                let t = self.horizon * k as f64 / n as f64;
                (t, self.position(flow, t))
            })
            .collect()
    }
}

/// Simulates the limit dynamics of one particle with rate field `w` from
/// `y₀`: candidates of `stream` (rate `‖w‖`) are accepted iff their mark is
/// below `w(Y(u-), u)`, where `Y` follows `flow` from its last reset point.
pub fn tagged_limit_path(
    flow: &FlowGrid<f64>,
    w: &IntensityField<f64>,
    y0: f64,
    stream: &mut CandidateStream,
) -> Result<TaggedPath> {
    let horizon = flow.horizon();
    if stream.rate() < w.sup_norm() {
        return Err(Error::Stream(format!(
            "stream rate {} below field sup norm {}",
            stream.rate(),
            w.sup_norm()
        )));
    }
    if !(0.0..=1.0).contains(&y0) {
        return Err(Error::domain("position", format!("y0 = {y0}")));
    }
    let mut path = TaggedPath {
        y0,
        horizon,
        jumps: Vec::new(),
    };
    while let Some(c) = stream.next_candidate() {
        if c.time > horizon {
            break;
        }
        let y = path.position(flow, c.time);
        if c.mark < w.rate(y, c.time) {
            path.jumps.push(c.time);
        }
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Resolution;

    #[test]
    fn zero_rate_follows_the_flow() {
        let flow = FlowGrid::<f64>::from_fn(1.0, Resolution::new(20, 10).unwrap(), |g, t| {
            (g.y0() + 0.4 * (t - g.t0())).min(1.0)
        });
        let w = IntensityField::constant(0.0, 1.0).unwrap();
        let mut s = CandidateStream::new(1, 0, 0.0).unwrap();
        let p = tagged_limit_path(&flow, &w, 0.2, &mut s).unwrap();
        assert!(p.jumps.is_empty());
        for (t, y) in p.on_grid(&flow, 10) {
            assert!((y - (0.2 + 0.4 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_rate_jump_count_is_poisson() {
        let flow = FlowGrid::<f64>::identity(2.0, Resolution::new(20, 10).unwrap());
        let w = IntensityField::constant(1.5, 2.0).unwrap();
        let reps = 4000;
        let mut total = 0usize;
        for r in 0..reps {
            let mut s = CandidateStream::new(17, r, 1.5).unwrap();
            let p = tagged_limit_path(&flow, &w, 0.5, &mut s).unwrap();
            for (_, y) in p.on_grid(&flow, 40) {
                assert!((0.0..=1.0).contains(&y));
            }
            total += p.jumps.len();
        }
        let mean = total as f64 / reps as f64;
        assert!(
            (mean - 3.0).abs() < 3.0 * (3.0f64 / reps as f64).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn slow_stream_is_rejected() {
        let flow = FlowGrid::<f64>::identity(1.0, Resolution::new(4, 4).unwrap());
        let w = IntensityField::constant(2.0, 1.0).unwrap();
        let mut s = CandidateStream::new(1, 0, 1.0).unwrap();
        assert!(tagged_limit_path(&flow, &w, 0.0, &mut s).is_err());
    }
}
