//! Three-stage Radau IIA (order 5) with simplified Newton iterations and
//! the embedded error estimate of Hairer and Wanner.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::error::{Error, Result};

const SQRT6: f64 = 2.449_489_742_783_178;

const NEWTON_KAPPA: f64 = 0.03;
const NEWTON_MAX_ITER: usize = 10;
const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 4.0;

fn tableau() -> [[f64; 3]; 3] {
    [
        [
            (88.0 - 7.0 * SQRT6) / 360.0,
            (296.0 - 169.0 * SQRT6) / 1800.0,
            (-2.0 + 3.0 * SQRT6) / 225.0,
        ],
        [
            (296.0 + 169.0 * SQRT6) / 1800.0,
            (88.0 + 7.0 * SQRT6) / 360.0,
            (-2.0 - 3.0 * SQRT6) / 225.0,
        ],
        [(16.0 - SQRT6) / 36.0, (16.0 + SQRT6) / 36.0, 1.0 / 9.0],
    ]
}

/// Real eigenvalue of the inverse Radau matrix, inverted.
const GAMMA0: f64 = 1.0 / 3.637_834_252_744_496;

fn error_weights() -> [f64; 3] {
    [
        GAMMA0 * -(13.0 + 7.0 * SQRT6) / 3.0,
        GAMMA0 * (-13.0 + 7.0 * SQRT6) / 3.0,
        -GAMMA0 / 3.0,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RadauSettings {
    pub rtol: f64,
    pub atol: f64,
}

/// Step-size state carried across calls so consecutive output intervals do
/// not restart the controller.
#[derive(Debug, Clone, Default)]
pub(crate) struct RadauState {
    h: Option<f64>,
    pub accepted: u64,
    pub rejected: u64,
}

enum StepOutcome<const N: usize> {
    Done { y: SVector<f64, N>, err: f64 },
    NewtonFailed,
}

fn fd_jacobian<const N: usize, F>(
    f: &F,
    y: &SVector<f64, N>,
    f0: &SVector<f64, N>,
    weights: &SVector<f64, N>,
) -> Result<SMatrix<f64, N, N>>
where
    F: Fn(&SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    let scale = y.component_mul(weights).amax();
    let mut jac = SMatrix::<f64, N, N>::zeros();
    for k in 0..N {
        let mut d = 1e-8 * y[k].abs().max(1e-3 * scale);
        if d == 0.0 {
            d = 1e-10;
        }
        let mut yp = *y;
        yp[k] += d;
        let fp = f(&yp)?;
        jac.set_column(k, &((fp - f0) / d));
    }
    Ok(jac)
}

fn scaled_norm<const N: usize>(
    v: &SVector<f64, N>,
    y0: &SVector<f64, N>,
    y1: &SVector<f64, N>,
    weights: &SVector<f64, N>,
    s: &RadauSettings,
) -> f64 {
    (0..N)
        .filter(|&i| weights[i] != 0.0)
        .map(|i| weights[i] * v[i].abs() / (s.atol + s.rtol * y0[i].abs().max(y1[i].abs())))
        .fold(0.0, f64::max)
}

fn try_step<const N: usize, F>(
    f: &F,
    y0: &SVector<f64, N>,
    h: f64,
    weights: &SVector<f64, N>,
    s: &RadauSettings,
) -> Result<StepOutcome<N>>
where
    F: Fn(&SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    let a = tableau();
    let f0 = f(y0)?;
    let jac = fd_jacobian(f, y0, &f0, weights)?;

    let n3 = 3 * N;
    let mut m = DMatrix::<f64>::identity(n3, n3);
    for i in 0..3 {
        for j in 0..3 {
            for r in 0..N {
                for c in 0..N {
                    m[(i * N + r, j * N + c)] -= h * a[i][j] * jac[(r, c)];
                }
            }
        }
    }
    let lu = m.lu();

    let mut z = [SVector::<f64, N>::zeros(); 3];
    let mut prev_norm = f64::INFINITY;
    let mut converged = false;
    for it in 0..NEWTON_MAX_ITER {
        let mut stage_f = [SVector::<f64, N>::zeros(); 3];
        for i in 0..3 {
            stage_f[i] = f(&(y0 + z[i]))?;
        }
        let mut rhs = DVector::<f64>::zeros(n3);
        for i in 0..3 {
            let mut ri = -z[i];
            for j in 0..3 {
                ri += h * a[i][j] * stage_f[j];
            }
            rhs.rows_mut(i * N, N).copy_from(&ri);
        }
        let Some(dz) = lu.solve(&rhs) else {
            return Ok(StepOutcome::NewtonFailed);
        };
        let mut norm: f64 = 0.0;
        for (i, zi) in z.iter_mut().enumerate() {
            let dzi = SVector::<f64, N>::from_iterator(dz.rows(i * N, N).iter().copied());
            *zi += dzi;
            norm = norm.max(scaled_norm(&dzi, y0, &(y0 + *zi), weights, s));
        }
        if !norm.is_finite() || (it >= 2 && norm > prev_norm) {
            return Ok(StepOutcome::NewtonFailed);
        }
        if norm <= NEWTON_KAPPA {
            converged = true;
            break;
        }
        prev_norm = norm;
    }
    if !converged {
        return Ok(StepOutcome::NewtonFailed);
    }

    let y1 = y0 + z[2];
    let e = error_weights();
    let mut est = GAMMA0 * h * f0;
    for i in 0..3 {
        est += e[i] * z[i];
    }
    let m1 = DMatrix::<f64>::identity(N, N) - DMatrix::from_column_slice(N, N, (jac * (h * GAMMA0)).as_slice());
    let est_d = DVector::from_column_slice(est.as_slice());
    let err_vec = match m1.lu().solve(&est_d) {
        Some(v) => SVector::<f64, N>::from_column_slice(v.as_slice()),
        None => est,
    };
    let err = scaled_norm(&err_vec, y0, &y1, weights, s);
    Ok(StepOutcome::Done { y: y1, err })
}

/// Integrates `y' = f(y)` over `span` starting from `y0`, taking as many
/// internal steps as the tolerances demand. `weights` scales each component
/// in the error norm; a zero weight leaves the component uncontrolled.
pub(crate) fn advance<const N: usize, F>(
    f: &F,
    y0: &SVector<f64, N>,
    t0: f64,
    span: f64,
    weights: &SVector<f64, N>,
    settings: &RadauSettings,
    state: &mut RadauState,
) -> Result<SVector<f64, N>>
where
    F: Fn(&SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    let mut y = *y0;
    let mut done = 0.0;
    let mut h = state.h.unwrap_or(span);
    let h_min = 64.0 * f64::EPSILON * (t0.abs() + span).max(1.0);

    while done < span {
        let remaining = span - done;
        let last = h >= remaining * (1.0 - 1e-12);
        let h_try = if last { remaining } else { h };
        if h_try < h_min && !last {
            return Err(Error::SolverFailure {
                t: t0 + done,
                reason: format!("step size {h_try:e} below minimum"),
            });
        }
        match try_step(f, &y, h_try, weights, settings)? {
            StepOutcome::Done { y: y_new, err } if err <= 1.0 => {
                state.accepted += 1;
                y = y_new;
                done = if last { span } else { done + h_try };
                let fac = (SAFETY * err.max(1e-10).powf(-0.25)).clamp(MIN_FACTOR, MAX_FACTOR);
                h = if last { h.max(h_try * fac) } else { h_try * fac };
            }
            StepOutcome::Done { err, .. } => {
                state.rejected += 1;
                h = h_try * (SAFETY * err.powf(-0.25)).max(MIN_FACTOR);
            }
            StepOutcome::NewtonFailed => {
                state.rejected += 1;
                h = 0.5 * h_try;
            }
        }
        if h < h_min {
            return Err(Error::SolverFailure {
                t: t0 + done,
                reason: format!("step size {h:e} below minimum"),
            });
        }
    }
    state.h = Some(h);
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{vector, Vector1, Vector2};

    fn settings() -> RadauSettings {
        RadauSettings {
            rtol: 1e-10,
            atol: 1e-14,
        }
    }

    #[test]
    fn stiffly_accurate_tableau_sums_to_nodes() {
        let a = tableau();
        let c = [(4.0 - SQRT6) / 10.0, (4.0 + SQRT6) / 10.0, 1.0];
        for i in 0..3 {
            let row: f64 = a[i].iter().sum();
            assert!((row - c[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn exponential_decay() {
        let f = |y: &Vector1<f64>| Ok(-y);
        let mut st = RadauState::default();
        let y = advance(&f, &vector![1.0], 0.0, 2.0, &vector![1.0], &settings(), &mut st).unwrap();
        assert!((y[0] - (-2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn stiff_linear_system() {
        // Fast mode at -1e4 relaxes onto the slow one.
        let f = |y: &Vector2<f64>| Ok(vector![-1e4 * (y[0] - y[1]), -y[1]]);
        let mut st = RadauState::default();
        let y = advance(
            &f,
            &vector![2.0, 1.0],
            0.0,
            1.0,
            &vector![1.0, 1.0],
            &settings(),
            &mut st,
        )
        .unwrap();
        let slow = (-1.0f64).exp();
        assert!((y[1] - slow).abs() < 1e-9);
        assert!((y[0] - slow * 1e4 / (1e4 - 1.0)).abs() < 1e-8);
        assert!(st.accepted < 2000);
    }

    #[test]
    fn oscillator_over_many_intervals() {
        let f = |y: &Vector2<f64>| Ok(vector![y[1], -y[0]]);
        let mut st = RadauState::default();
        let mut y = vector![1.0, 0.0];
        for k in 0..100 {
            y = advance(&f, &y, k as f64 * 0.1, 0.1, &vector![1.0, 1.0], &settings(), &mut st)
                .unwrap();
        }
        assert!((y[0] - 10f64.cos()).abs() < 1e-8);
        assert!((y[1] + 10f64.sin()).abs() < 1e-8);
    }
}
