use crate::error::{format_err, invalid, Result};

/// Highest spline order the fixed-size basis scratch supports.
pub const MAX_ORDER: usize = 7;

/// Uniform knot grid on `[lo, hi]` with `intervals` interior intervals and
/// `order` extension knots on each side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplineGrid {
    pub lo: f32,
    pub hi: f32,
    pub intervals: usize,
    pub order: usize,
}

impl Default for SplineGrid {
    fn default() -> Self {
        Self {
            lo: -3.0,
            hi: 3.0,
            intervals: 8,
            order: 3,
        }
    }
}

impl SplineGrid {
    pub fn new(lo: f32, hi: f32, intervals: usize, order: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return invalid(format!("spline range [{lo}, {hi}] is empty"));
        }
        if intervals == 0 {
            return invalid("spline grid needs at least one interval");
        }
        if order > MAX_ORDER {
            return invalid(format!("spline order {order} exceeds {MAX_ORDER}"));
        }
        Ok(Self {
            lo,
            hi,
            intervals,
            order,
        })
    }

    pub fn num_basis(&self) -> usize {
        self.intervals + self.order
    }

    fn step(&self) -> f64 {
        (self.hi as f64 - self.lo as f64) / self.intervals as f64
    }

    fn knot(&self, i: usize) -> f64 {
        self.lo as f64 + (i as f64 - self.order as f64) * self.step()
    }

    /// Full knot vector, `intervals + 1 + 2·order` entries.
    pub fn knots(&self) -> Vec<f32> {
        (0..self.intervals + 1 + 2 * self.order)
            .map(|i| self.knot(i) as f32)
            .collect()
    }

    /// Rebuilds a grid from a serialized knot vector and its basis count.
    pub fn from_knots(knots: &[f32], num_basis: usize) -> Result<Self> {
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return format_err("knot vector is not strictly increasing");
        }
        let Some(order) = knots.len().checked_sub(num_basis + 1) else {
            return format_err("knot vector too short for the coefficient count");
        };
        if num_basis <= order {
            return format_err("coefficient count too small for the spline order");
        }
        let intervals = num_basis - order;
        let grid = Self::new(knots[order], knots[order + intervals], intervals, order)
            .map_err(|e| crate::Error::Format(e.to_string()))?;
        let tol = 1e-5 * (grid.hi - grid.lo).abs();
        if grid
            .knots()
            .iter()
            .zip(knots)
            .any(|(a, b)| (a - b).abs() > tol)
        {
            return format_err("only uniform knot grids are supported");
        }
        Ok(grid)
    }

    /// Nonzero basis values at `x` (clamped to `[lo, hi]`).
    ///
    /// Writes `order + 1` values into `out` and returns the index of the first
    /// one. Basis `start + r` has value `out[r]`; all others are zero.
    pub fn nonzero_basis(&self, x: f32, out: &mut [f32]) -> usize {
        let k = self.order;
        let step = self.step();
        let xc = (x as f64).clamp(self.lo as f64, self.hi as f64);
        let cell = ((xc - self.lo as f64) / step).floor();
        let s = if cell.is_nan() {
            0
        } else {
            (cell as usize).min(self.intervals - 1)
        };
        let span = s + k;

        // Cox–de Boor triangle over the `order + 1` functions supported on
        // [knot(span), knot(span + 1)).
        let mut n = [0.0f64; MAX_ORDER + 1];
        let mut left = [0.0f64; MAX_ORDER + 1];
        let mut right = [0.0f64; MAX_ORDER + 1];
        n[0] = 1.0;
        for j in 1..=k {
            left[j] = xc - self.knot(span + 1 - j);
            right[j] = self.knot(span + j) - xc;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = n[r] / denom;
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        for (o, v) in out.iter_mut().zip(&n[..=k]) {
            *o = *v as f32;
        }
        s
    }
}

/// Dense basis vector of length `intervals + order` at `x`.
pub fn bspline_basis(x: f32, grid: &SplineGrid) -> Vec<f32> {
    let mut vals = [0.0f32; MAX_ORDER + 1];
    let start = grid.nonzero_basis(x, &mut vals);
    let mut out = vec![0.0; grid.num_basis()];
    out[start..=start + grid.order].copy_from_slice(&vals[..=grid.order]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    /// Textbook recursive Cox–de Boor over an explicit knot list.
    fn oracle(knots: &[f64], i: usize, k: usize, x: f64, last: usize) -> f64 {
        if k == 0 {
            // the right end of the domain belongs to the last interior interval
            let hit = if x == knots[last + 1] {
                i == last
            } else {
                knots[i] <= x && x < knots[i + 1]
            };
            return if hit { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + k] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * oracle(knots, i, k - 1, x, last);
        }
        let d2 = knots[i + k + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + k + 1] - x) / d2 * oracle(knots, i + 1, k - 1, x, last);
        }
        v
    }

    fn oracle_basis(grid: &SplineGrid, x: f32) -> Vec<f64> {
        let knots: Vec<f64> = grid.knots().iter().map(|&k| k as f64).collect();
        let xc = (x as f64).clamp(grid.lo as f64, grid.hi as f64);
        let last = grid.order + grid.intervals - 1;
        (0..grid.num_basis())
            .map(|i| oracle(&knots, i, grid.order, xc, last))
            .collect()
    }

    #[test]
    fn cubic_at_interior_knot() {
        let grid = SplineGrid::default();
        // knot between the 4th and 5th interior interval
        let b = bspline_basis(0.0, &grid);
        let active: Vec<f32> = b.iter().copied().filter(|&v| v > 0.0).collect();
        assert_eq!(active.len(), 3);
        for (got, want) in active.iter().zip([1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        let o = oracle_basis(&grid, 0.0);
        for (a, b) in b.iter().zip(&o) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn order_zero_is_indicator() {
        let grid = SplineGrid::new(-3.0, 3.0, 8, 0).unwrap();
        for (x, cell) in [(-3.0, 0), (-2.3, 0), (-2.25, 1), (0.1, 4), (2.9, 7), (3.0, 7)] {
            let b = bspline_basis(x, &grid);
            assert_eq!(b.len(), 8);
            for (i, v) in b.iter().enumerate() {
                assert_eq!(*v, if i == cell { 1.0 } else { 0.0 }, "x={x} i={i}");
            }
        }
    }

    #[test]
    fn partition_of_unity_random_points() {
        let mut rng = RngStream::new(31, 0);
        for grid in [
            SplineGrid::default(),
            SplineGrid::new(-1.0, 2.0, 5, 2).unwrap(),
            SplineGrid::new(-3.0, 3.0, 16, 3).unwrap(),
            SplineGrid::new(0.0, 1.0, 3, 1).unwrap(),
        ] {
            for _ in 0..1000 {
                let x = rng.uniform_f32(grid.lo, grid.hi);
                let b = bspline_basis(x, &grid);
                let s: f32 = b.iter().sum();
                assert!((s - 1.0).abs() <= 1e-5, "{grid:?} x={x} sum={s}");
                assert!(b.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn matches_recursive_oracle() {
        let mut rng = RngStream::new(32, 0);
        for grid in [SplineGrid::default(), SplineGrid::new(-2.0, 1.0, 4, 2).unwrap()] {
            for _ in 0..500 {
                let x = rng.uniform_f32(grid.lo - 1.0, grid.hi + 1.0);
                let got = bspline_basis(x, &grid);
                let want = oracle_basis(&grid, x);
                for (g, w) in got.iter().zip(&want) {
                    assert!((*g as f64 - w).abs() < 1e-6, "x={x}: {got:?} vs {want:?}");
                }
            }
        }
    }

    #[test]
    fn outside_points_clamp_to_boundary() {
        let grid = SplineGrid::default();
        assert_eq!(bspline_basis(-10.0, &grid), bspline_basis(-3.0, &grid));
        assert_eq!(bspline_basis(10.0, &grid), bspline_basis(3.0, &grid));
    }

    #[test]
    fn knots_round_trip() {
        let grid = SplineGrid::default();
        let knots = grid.knots();
        assert_eq!(knots.len(), 15);
        assert!(knots.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(SplineGrid::from_knots(&knots, 11).unwrap(), grid);
        let mut bad = knots.clone();
        bad.swap(3, 4);
        assert!(SplineGrid::from_knots(&bad, 11).is_err());
    }
}
