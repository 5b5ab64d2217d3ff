//! Directional derivatives of locally Lipschitz functions.
//!
//! Two independent routes to `f'(x; h)`: one-sided difference quotients along
//! the ray `x + αh`, and the support function of a superdifferential given by
//! its vertices. Plants use the second route analytically; the first is the
//! oracle the tests hold them to.

use nalgebra::SVector;

use crate::error::{Error, Result};

/// A direction `h` in which to differentiate. Never normalized: the
/// directional derivative is positively homogeneous in `h`, and the tests
/// rely on that.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction<const N: usize>(pub SVector<f64, N>);

impl<const N: usize> Direction<N> {
    pub fn new(components: [f64; N]) -> Result<Self> {
        if let Some(&bad) = components.iter().find(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                what: "direction",
                value: bad,
            });
        }
        Ok(Direction(SVector::from(components)))
    }

    pub fn zero() -> Self {
        Direction(SVector::zeros())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Direction(self.0 * factor)
    }
}

impl<const N: usize> From<SVector<f64, N>> for Direction<N> {
    fn from(v: SVector<f64, N>) -> Self {
        Direction(v)
    }
}

/// Extreme points of a polyhedral superdifferential. The superdifferential
/// itself is their convex hull.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperdiffVertexSet<const N: usize> {
    vertices: Vec<SVector<f64, N>>,
}

impl<const N: usize> SuperdiffVertexSet<N> {
    pub fn new(vertices: Vec<SVector<f64, N>>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::invalid("vertices", "superdifferential must be nonempty"));
        }
        for v in &vertices {
            if let Some(&bad) = v.iter().find(|c| !c.is_finite()) {
                return Err(Error::NonFinite {
                    what: "superdifferential vertex",
                    value: bad,
                });
            }
        }
        Ok(SuperdiffVertexSet { vertices })
    }

    pub fn singleton(v: SVector<f64, N>) -> Result<Self> {
        Self::new(vec![v])
    }

    pub fn vertices(&self) -> &[SVector<f64, N>] {
        &self.vertices
    }
}

/// Step sizes for the `α → +0` limit.
#[derive(Debug, Clone, PartialEq)]
pub struct FdSchedule {
    alphas: Vec<f64>,
    /// Extrapolate the quotients to `α = 0` instead of taking them as is.
    pub richardson: bool,
    /// Relative agreement required between the last two estimates.
    pub tolerance: f64,
}

impl FdSchedule {
    pub fn new(alphas: Vec<f64>, richardson: bool, tolerance: f64) -> Result<Self> {
        if alphas.len() < 2 {
            return Err(Error::invalid("alphas", "need at least two step sizes"));
        }
        if alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::invalid("alphas", "step sizes must be positive and finite"));
        }
        if alphas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("alphas", "step sizes must be strictly decreasing"));
        }
        if richardson && alphas.len() < 3 {
            return Err(Error::invalid(
                "alphas",
                "extrapolation needs at least three step sizes",
            ));
        }
        if !(tolerance > 0.0) {
            return Err(Error::invalid("tolerance", "must be positive"));
        }
        Ok(FdSchedule {
            alphas,
            richardson,
            tolerance,
        })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_min(&self) -> f64 {
        *self.alphas.last().expect("schedule is nonempty")
    }
}

impl Default for FdSchedule {
    fn default() -> Self {
        FdSchedule {
            alphas: vec![1e-2, 1e-3, 1e-4, 1e-5],
            richardson: true,
            tolerance: 1e-6,
        }
    }
}

/// One-sided estimate of `f'(x; h) = lim_{α→+0} (f(x + αh) − f(x)) / α`.
///
/// Central differences are deliberately not offered: at a kink they average
/// the two one-sided slopes and return something that is not a directional
/// derivative at all.
pub fn fd_directional_derivative<const N: usize, F>(
    f: F,
    x: &SVector<f64, N>,
    h: &Direction<N>,
    sched: &FdSchedule,
) -> Result<f64>
where
    F: Fn(&SVector<f64, N>) -> f64,
{
    let eval = |p: &SVector<f64, N>| {
        let v = f(p);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                what: "goal function",
                value: v,
            })
        }
    };

    let f0 = eval(x)?;
    let quotients = sched
        .alphas
        .iter()
        .map(|&alpha| Ok((eval(&(x + h.0 * alpha))? - f0) / alpha))
        .collect::<Result<Vec<f64>>>()?;

    let estimates = if sched.richardson {
        extrapolate_to_zero(&sched.alphas, &quotients)
    } else {
        quotients
    };

    let n = estimates.len();
    let (prev, last) = (estimates[n - 2], estimates[n - 1]);
    let spread = (last - prev).abs();
    let allowed = sched.tolerance * (1.0 + last.abs());
    if spread > allowed {
        return Err(Error::NonConvergence {
            spread,
            tolerance: allowed,
        });
    }
    Ok(last)
}

/// Diagonal of the Neville tableau: entry `i` is the value at `α = 0` of the
/// polynomial through the first `i + 1` quotients.
fn extrapolate_to_zero(alphas: &[f64], quotients: &[f64]) -> Vec<f64> {
    let mut row = quotients.to_vec();
    let mut diagonal = vec![row[0]];
    for level in 1..row.len() {
        for i in (level..row.len()).rev() {
            let (far, near) = (alphas[i - level], alphas[i]);
            row[i] = (far * row[i] - near * row[i - 1]) / (far - near);
        }
        diagonal.push(row[level]);
    }
    diagonal
}

/// `min_{v ∈ S} vᵀh`. A linear function attains its minimum over a polytope
/// at a vertex, so scanning the vertices is exact.
pub fn support_min<const N: usize>(set: &SuperdiffVertexSet<N>, h: &Direction<N>) -> f64 {
    set.vertices
        .iter()
        .map(|v| v.dot(&h.0))
        .fold(f64::INFINITY, f64::min)
}
