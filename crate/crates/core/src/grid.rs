//! Graded one-dimensional grids on the interval (-1, 1).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_NODES: usize = 8;

/// Node-clustering rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Grading {
    /// Chebyshev points of the first kind, x_j = -cos(pi (j + 1/2) / N).
    #[default]
    Chebyshev,
}

impl Grading {
    pub(crate) fn code(self) -> u8 {
        match self {
            Grading::Chebyshev => 1,
        }
    }
}

impl fmt::Display for Grading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grading::Chebyshev => f.write_str("chebyshev"),
        }
    }
}

impl FromStr for Grading {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "chebyshev" | "cheb" => Ok(Grading::Chebyshev),
            other => Err(Error::config(format!("unknown grading `{other}`"))),
        }
    }
}

/// Interior nodes of (-1, 1) together with two sets of weights.
///
/// `weights` is the Fejer (first kind) quadrature rule on the nodes: it sums
/// to 2 and integrates polynomials of degree < N exactly. `mass` holds the
/// integrals of the piecewise-linear hat functions on the node set extended
/// by the endpoints +-1 (where hats vanish); these are the weights consistent
/// with the product-integration rule used for the Green operator and define
/// the discrete L2 inner product of the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    mass: Vec<f64>,
    delta: Vec<f64>,
    grading: Grading,
}

impl Grid {
    pub fn new(n: usize, grading: Grading) -> Result<Self> {
        if n < MIN_NODES {
            return Err(Error::config(format!(
                "grid needs at least {MIN_NODES} nodes, got {n}"
            )));
        }
        let theta: Vec<f64> = (0..n).map(|j| PI * (j as f64 + 0.5) / n as f64).collect();
        let mut nodes: Vec<f64> = theta.iter().map(|t| -t.cos()).collect();
        // enforce exact symmetry about 0
        for j in 0..n / 2 {
            let m = 0.5 * (nodes[n - 1 - j] - nodes[j]);
            nodes[j] = -m;
            nodes[n - 1 - j] = m;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }

        let half = n / 2;
        let weights: Vec<f64> = theta
            .iter()
            .map(|t| {
                let series: f64 = (1..=half)
                    .map(|k| {
                        let k = k as f64;
                        (2.0 * k * t).cos() / (4.0 * k * k - 1.0)
                    })
                    .sum();
                2.0 / n as f64 * (1.0 - 2.0 * series)
            })
            .collect();

        let mass = (0..n)
            .map(|j| {
                let left = if j == 0 { -1.0 } else { nodes[j - 1] };
                let right = if j + 1 == n { 1.0 } else { nodes[j + 1] };
                0.5 * (right - left)
            })
            .collect();
        let delta = nodes.iter().map(|x| 1.0 - x.abs()).collect();

        Ok(Grid {
            nodes,
            weights,
            mass,
            delta,
            grading,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Distance to the boundary, 1 - |x|, per node.
    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn grading(&self) -> Grading {
        self.grading
    }

    /// Node set extended by the endpoints: [-1, x_0, ..., x_{N-1}, 1].
    pub fn extended_nodes(&self) -> Vec<f64> {
        let mut ext = Vec::with_capacity(self.len() + 2);
        ext.push(-1.0);
        ext.extend_from_slice(&self.nodes);
        ext.push(1.0);
        ext
    }

    /// Quadrature of nodal values with the Fejer weights.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Evaluates the boundary-weighted interpolant of nodal values at `x`.
    ///
    /// The ratio u / delta^beta is interpolated linearly between nodes (and
    /// extrapolated linearly into the two end cells), then multiplied back by
    /// delta(x)^beta. With beta = 0 this is plain piecewise-linear
    /// interpolation vanishing at +-1.
    pub fn interpolate(&self, values: &[f64], beta: f64, x: f64) -> f64 {
        let n = self.len();
        if x <= -1.0 || x >= 1.0 {
            return 0.0;
        }
        let d = 1.0 - x.abs();
        let ratio = |j: usize| values[j] / self.delta[j].powf(beta);
        let lerp = |j: usize, x: f64| {
            let t = (x - self.nodes[j]) / (self.nodes[j + 1] - self.nodes[j]);
            (1.0 - t) * ratio(j) + t * ratio(j + 1)
        };
        let r = if beta == 0.0 && (x < self.nodes[0] || x > self.nodes[n - 1]) {
            // plain hat interpolation: value 0 at the endpoint
            let (xe, j) = if x < self.nodes[0] {
                (-1.0, 0)
            } else {
                (1.0, n - 1)
            };
            let t = (x - xe) / (self.nodes[j] - xe);
            return t * values[j];
        } else if x < self.nodes[0] {
            lerp(0, x)
        } else if x > self.nodes[n - 1] {
            lerp(n - 2, x)
        } else {
            let j = self
                .nodes
                .partition_point(|&xn| xn <= x)
                .saturating_sub(1)
                .min(n - 2);
            lerp(j, x)
        };
        r * d.powf(beta)
    }
}

/// Builds the grid for `n` interior nodes.
pub fn make_grid(n: usize, grading: Grading) -> Result<Grid> {
    Grid::new(n, grading)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eight_nodes_symmetric_and_partition_of_unity() {
        let g = make_grid(8, Grading::Chebyshev).unwrap();
        assert_eq!(g.len(), 8);
        for j in 0..8 {
            assert_eq!(g.nodes()[j], -g.nodes()[7 - j]);
            assert!(g.weights()[j] > 0.0);
            assert!(g.delta()[j] > 0.0);
        }
        let total: f64 = g.weights().iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_grids() {
        assert!(matches!(
            make_grid(7, Grading::Chebyshev),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn weights_integrate_quadratics() {
        for n in [8, 9, 33, 256] {
            let g = make_grid(n, Grading::Chebyshev).unwrap();
            let x = g.nodes();
            let one: Vec<f64> = x.iter().map(|_| 1.0).collect();
            let lin: Vec<f64> = x.iter().map(|&t| 3.0 * t - 1.0).collect();
            let quad: Vec<f64> = x.iter().map(|&t| t * t).collect();
            assert!((g.integrate(&one) - 2.0).abs() < 1e-12);
            assert!((g.integrate(&lin) + 2.0).abs() < 1e-10);
            assert!((g.integrate(&quad) - 2.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mass_weights_are_hat_integrals() {
        let g = make_grid(16, Grading::Chebyshev).unwrap();
        let ext = g.extended_nodes();
        let total: f64 = g.mass().iter().sum();
        // hats lose the half end cells next to +-1
        let expected = 2.0 - 0.5 * (ext[1] - ext[0]) - 0.5 * (ext[17] - ext[16]);
        assert_relative_eq!(total, expected, epsilon = 1e-14);
    }

    #[test]
    fn boundary_weighted_interpolation_of_torsion_profile() {
        let s = 0.25;
        let g = make_grid(512, Grading::Chebyshev).unwrap();
        let values: Vec<f64> = g.nodes().iter().map(|x| (1.0 - x * x).powf(s)).collect();
        let mut worst: f64 = 0.0;
        for k in 1..20_000 {
            let x = -1.0 + 2.0 * k as f64 / 20_000.0;
            let exact = (1.0 - x * x).powf(s);
            worst = worst.max((g.interpolate(&values, s, x) - exact).abs());
        }
        // also probe inside the first cell
        let x0 = g.nodes()[0];
        for k in 1..100 {
            let x = -1.0 + (x0 + 1.0) * k as f64 / 100.0;
            worst = worst.max((g.interpolate(&values, s, x) - (1.0 - x * x).powf(s)).abs());
        }
        assert!(worst < 1e-3, "interpolation error {worst}");
    }

    #[test]
    fn grading_parses() {
        assert_eq!("Chebyshev".parse::<Grading>().unwrap(), Grading::Chebyshev);
        assert!("uniform".parse::<Grading>().is_err());
    }
}
