//! Flow of a Hamiltonian vector field by the Fehlberg 7(8) pair, with
//! first and second variational equations.
//!
//! Steps are advanced with the eighth-order solution; the embedded
//! seventh-order one only drives step control. Error control covers every
//! integrated component, variational ones included.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::symplectic_model::HamiltonianModel;
use crate::{Error, Result};

const STAGES: usize = 13;

#[cfg_attr(not(test), allow(dead_code))]
const C: [f64; STAGES] = [
    0.0,
    2.0 / 27.0,
    1.0 / 9.0,
    1.0 / 6.0,
    5.0 / 12.0,
    0.5,
    5.0 / 6.0,
    1.0 / 6.0,
    2.0 / 3.0,
    1.0 / 3.0,
    1.0,
    0.0,
    1.0,
];

const A: [[f64; 12]; STAGES] = [
    [0.0; 12],
    [2.0 / 27.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 36.0, 1.0 / 12.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 24.0, 0.0, 1.0 / 8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [5.0 / 12.0, 0.0, -25.0 / 16.0, 25.0 / 16.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 20.0, 0.0, 0.0, 1.0 / 4.0, 1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-25.0 / 108.0, 0.0, 0.0, 125.0 / 108.0, -65.0 / 27.0, 125.0 / 54.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [31.0 / 300.0, 0.0, 0.0, 0.0, 61.0 / 225.0, -2.0 / 9.0, 13.0 / 900.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [2.0, 0.0, 0.0, -53.0 / 6.0, 704.0 / 45.0, -107.0 / 9.0, 67.0 / 90.0, 3.0, 0.0, 0.0, 0.0, 0.0],
    [
        -91.0 / 108.0,
        0.0,
        0.0,
        23.0 / 108.0,
        -976.0 / 135.0,
        311.0 / 54.0,
        -19.0 / 60.0,
        17.0 / 6.0,
        -1.0 / 12.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        2383.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -301.0 / 82.0,
        2133.0 / 4100.0,
        45.0 / 82.0,
        45.0 / 164.0,
        18.0 / 41.0,
        0.0,
        0.0,
    ],
    [3.0 / 205.0, 0.0, 0.0, 0.0, 0.0, -6.0 / 41.0, -3.0 / 205.0, -3.0 / 41.0, 3.0 / 41.0, 6.0 / 41.0, 0.0, 0.0],
    [
        -1777.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -289.0 / 82.0,
        2193.0 / 4100.0,
        51.0 / 82.0,
        33.0 / 164.0,
        12.0 / 41.0,
        0.0,
        1.0,
    ],
];

/// Eighth-order weights.
const B8: [f64; STAGES] = [
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    34.0 / 105.0,
    9.0 / 35.0,
    9.0 / 35.0,
    9.0 / 280.0,
    9.0 / 280.0,
    0.0,
    41.0 / 840.0,
    41.0 / 840.0,
];

/// Difference between seventh- and eighth-order weights, nonzero only on
/// stages 0, 10, 11 and 12.
const ERR_WEIGHT: f64 = 41.0 / 840.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { rtol: 1e-13, atol: 1e-13, h_init: 1e-2, h_min: 1e-12, max_steps: 200_000 }
    }
}

#[derive(Debug, Clone)]
pub struct Integration {
    pub y: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
}

/// Integrate `y' = f(y)` from time 0 to `t` (either sign).
pub fn integrate<F>(mut f: F, y0: &[f64], t: f64, cfg: &FlowConfig) -> Result<Integration>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    if !t.is_finite() || y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("integration input".into()));
    }
    let dim = y0.len();
    let mut y = y0.to_vec();
    if t == 0.0 {
        return Ok(Integration { y, accepted: 0, rejected: 0 });
    }
    let dir = t.signum();
    let mut h = cfg.h_init.min(t.abs()) * dir;
    let mut tc = 0.0;
    let mut k = vec![vec![0.0; dim]; STAGES];
    let mut tmp = vec![0.0; dim];
    let mut ynew = vec![0.0; dim];
    let (mut accepted, mut rejected) = (0usize, 0usize);
    while (t - tc) * dir > 0.0 {
        if accepted + rejected >= cfg.max_steps {
            return Err(Error::MaxSteps(cfg.max_steps));
        }
        let remaining = t - tc;
        let last = remaining.abs() <= h.abs();
        if last {
            h = remaining;
        }
        f(&y, &mut k[0])?;
        for s in 1..STAGES {
            tmp.copy_from_slice(&y);
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    let ha = h * a;
                    for (t_i, kj_i) in tmp.iter_mut().zip(kj) {
                        *t_i += ha * kj_i;
                    }
                }
            }
            f(&tmp, &mut k[s])?;
        }
        let mut err = 0.0_f64;
        for i in 0..dim {
            let mut s = 0.0;
            for (st, b) in B8.iter().enumerate() {
                if *b != 0.0 {
                    s += b * k[st][i];
                }
            }
            ynew[i] = y[i] + h * s;
            let e = h * ERR_WEIGHT * (k[0][i] + k[10][i] - k[11][i] - k[12][i]);
            let sc = cfg.atol + cfg.rtol * y[i].abs().max(ynew[i].abs());
            err = err.max(e.abs() / sc);
        }
        if !err.is_finite() || ynew.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("integration state at t = {tc}")));
        }
        let factor = if err == 0.0 { 4.0 } else { (0.9 * err.powf(-1.0 / 8.0)).clamp(0.2, 4.0) };
        if err <= 1.0 {
            tc = if last { t } else { tc + h };
            std::mem::swap(&mut y, &mut ynew);
            accepted += 1;
            if !last {
                h *= factor;
            }
        } else {
            rejected += 1;
            h *= factor;
            if h.abs() < cfg.h_min {
                return Err(Error::StepUnderflow { t: tc });
            }
        }
    }
    Ok(Integration { y, accepted, rejected })
}

/// `φ_t(z)`.
pub fn flow(model: &dyn HamiltonianModel, z: &[f64], t: f64, cfg: &FlowConfig) -> Result<Vec<f64>> {
    Ok(integrate(|y, dy| model.vector_field(y, dy), z, t, cfg)?.y)
}

#[derive(Debug, Clone)]
pub struct FlowJacobian {
    pub end: Vec<f64>,
    pub jac: DMatrix<f64>,
}

/// `φ_t(z)` and the full `Dφ_t(z)` from the matrix variational equation.
pub fn flow_with_jacobian(model: &dyn HamiltonianModel, z: &[f64], t: f64, cfg: &FlowConfig) -> Result<FlowJacobian> {
    let d = z.len();
    let mut y0 = vec![0.0; d + d * d];
    y0[..d].copy_from_slice(z);
    for i in 0..d {
        y0[d + i * d + i] = 1.0;
    }
    let mut a = vec![0.0; d * d];
    let out = integrate(
        |y, dy| {
            model.vector_field(&y[..d], &mut dy[..d])?;
            model.jacobian(&y[..d], &mut a)?;
            let phi = &y[d..];
            for r in 0..d {
                for c in 0..d {
                    let mut s = 0.0;
                    for q in 0..d {
                        s += a[r * d + q] * phi[q * d + c];
                    }
                    dy[d + r * d + c] = s;
                }
            }
            Ok(())
        },
        &y0,
        t,
        cfg,
    )?;
    Ok(FlowJacobian { end: out.y[..d].to_vec(), jac: DMatrix::from_row_slice(d, d, &out.y[d..]) })
}

/// `φ_t(z)` and `Dφ_t(z) U` for the columns of `U`.
pub fn flow_with_columns(
    model: &dyn HamiltonianModel,
    z: &[f64],
    cols: &DMatrix<f64>,
    t: f64,
    cfg: &FlowConfig,
) -> Result<FlowJacobian> {
    let d = z.len();
    let k = cols.ncols();
    let mut y0 = vec![0.0; d + d * k];
    y0[..d].copy_from_slice(z);
    for c in 0..k {
        for r in 0..d {
            y0[d + c * d + r] = cols[(r, c)];
        }
    }
    let mut a = vec![0.0; d * d];
    let out = integrate(
        |y, dy| {
            model.vector_field(&y[..d], &mut dy[..d])?;
            model.jacobian(&y[..d], &mut a)?;
            for c in 0..k {
                let col = &y[d + c * d..d + (c + 1) * d];
                for r in 0..d {
                    let mut s = 0.0;
                    for q in 0..d {
                        s += a[r * d + q] * col[q];
                    }
                    dy[d + c * d + r] = s;
                }
            }
            Ok(())
        },
        &y0,
        t,
        cfg,
    )?;
    let jac = DMatrix::from_fn(d, k, |r, c| out.y[d + c * d + r]);
    Ok(FlowJacobian { end: out.y[..d].to_vec(), jac })
}

#[derive(Debug, Clone)]
pub struct SecondAction {
    pub end: Vec<f64>,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
    /// `D²φ_t(z)[u, v]`.
    pub d2: Vec<f64>,
}

/// Integrate `ż = X`, `Ȧ = DX A`, `Ḃ = DX B`, `Ċ = DX C + D²X[A, B]`
/// from `(z, u, v, 0)`.
pub fn flow_second_action(
    model: &dyn HamiltonianModel,
    z: &[f64],
    u: &[f64],
    v: &[f64],
    t: f64,
    cfg: &FlowConfig,
) -> Result<SecondAction> {
    let d = z.len();
    let mut y0 = vec![0.0; 4 * d];
    y0[..d].copy_from_slice(z);
    y0[d..2 * d].copy_from_slice(u);
    y0[2 * d..3 * d].copy_from_slice(v);
    let mut a = vec![0.0; d * d];
    let mut h2 = vec![0.0; d];
    let out = integrate(
        |y, dy| {
            let (zz, rest) = y.split_at(d);
            model.vector_field(zz, &mut dy[..d])?;
            model.jacobian(zz, &mut a)?;
            model.hessian_action(zz, &rest[..d], &rest[d..2 * d], &mut h2)?;
            for blk in 0..3 {
                let src = &rest[blk * d..(blk + 1) * d];
                for r in 0..d {
                    let mut s = 0.0;
                    for q in 0..d {
                        s += a[r * d + q] * src[q];
                    }
                    dy[d + blk * d + r] = s;
                }
            }
            for r in 0..d {
                dy[3 * d + r] += h2[r];
            }
            Ok(())
        },
        &y0,
        t,
        cfg,
    )?;
    let y = out.y;
    Ok(SecondAction {
        end: y[..d].to_vec(),
        du: y[d..2 * d].to_vec(),
        dv: y[2 * d..3 * d].to_vec(),
        d2: y[3 * d..].to_vec(),
    })
}

/// Apply `f` to every item in parallel on the current rayon pool, keeping
/// the input order. Results do not depend on the number of threads.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Flow every grid point for time `t`.
pub fn flow_grid(model: &dyn HamiltonianModel, points: &[Vec<f64>], t: f64, cfg: &FlowConfig) -> Result<Vec<Vec<f64>>> {
    par_map(points, |z| flow(model, z, t, cfg))
}

/// Flow every grid point with its full Jacobian.
pub fn flow_grid_jacobian(
    model: &dyn HamiltonianModel,
    points: &[Vec<f64>],
    t: f64,
    cfg: &FlowConfig,
) -> Result<Vec<FlowJacobian>> {
    par_map(points, |z| flow_with_jacobian(model, z, t, cfg))
}
