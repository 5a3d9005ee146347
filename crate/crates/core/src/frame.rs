//! Adapted symplectic frame along a multiple-shooting torus.
//!
//! With `L_i = (DK_i, X_H(K_i), W_i)` the frame is `P_i = P̂_i Q_i` where
//! `P̂_i = (L_i, N̂_i)`, `N̂_i = J L_i G_i⁻¹`, `G_i = L_iᵀ G L_i` and
//! `Q_i = [[I, B_i], [0, I]]`. The matrices `B_i` are chosen so that
//!
//! `P_{i+1}(θ+ω/m)⁻¹ Dφ_{T/m}(K_i(θ)) P_i(θ) ≈ [[Λ, S_i], [0, Λ⁻ᵀ]]`
//!
//! with `Λ = diag(I, λ)` and `S_i = diag(S¹_i, 0)`. The blocks of `ξ ∈ R^{2n}`
//! in frame coordinates are `ξ¹ = ξ[0..n-1]`, `ξ² = ξ[n-1]`,
//! `ξ³ = ξ[n..2n-1]` and `ξ⁴ = ξ[2n-1]`.
//!
//! The bundle `W` is rank one, so the construction applies to `n = 3`.

use nalgebra::{DMatrix, DVector};

use crate::cohomology::{solve_multiple_non_small_divisor, solve_multiple_small_divisor};
use crate::flow::{par_map, FlowConfig, FlowJacobian};
use crate::linalg::{condition_number, omega0, symplectic_inverse};
use crate::symplectic_model::HamiltonianModel;
use crate::torus_rep::{MatrixField, PeriodicFunction, TorusState};
use crate::{Error, Result};

/// Endpoints and full Jacobians of the leg maps `φ_{T/m}` at every grid
/// point, indexed `[leg][grid]`.
#[derive(Debug, Clone)]
pub struct LegFlows {
    pub end: Vec<Vec<Vec<f64>>>,
    pub jac: Vec<Vec<DMatrix<f64>>>,
}

pub fn integrate_legs(model: &dyn HamiltonianModel, state: &TorusState, cfg: &FlowConfig) -> Result<LegFlows> {
    let m = state.legs();
    let nn = state.grid_size();
    let pts: Vec<Vec<f64>> = state.k.iter().flat_map(|c| c.points()).collect();
    let t = state.period / m as f64;
    let res: Vec<FlowJacobian> = par_map(&pts, |z| crate::flow::flow_with_jacobian(model, z, t, cfg))?;
    let mut end = vec![Vec::with_capacity(nn); m];
    let mut jac = vec![Vec::with_capacity(nn); m];
    for (idx, r) in res.into_iter().enumerate() {
        end[idx / nn].push(r.end);
        jac[idx / nn].push(r.jac);
    }
    Ok(LegFlows { end, jac })
}

impl LegFlows {
    /// `E_i(θ_j) = φ_{T/m}(K_i(θ_j)) - K_{i+1}(θ_j + ω/m)`.
    pub fn torus_error_fields(&self, state: &TorusState) -> Vec<Vec<Vec<f64>>> {
        let m = state.legs();
        (0..m)
            .map(|i| {
                let next = state.k[(i + 1) % m].rotate(state.omega / m as f64).points();
                self.end[i].iter().zip(next).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect()
            })
            .collect()
    }

    /// `E^W_i(θ_j) = Dφ_{T/m}(K_i(θ_j)) W_i(θ_j) - λ W_{i+1}(θ_j + ω/m)`.
    pub fn bundle_error_fields(&self, state: &TorusState) -> Vec<Vec<Vec<f64>>> {
        let m = state.legs();
        (0..m)
            .map(|i| {
                let next = state.w[(i + 1) % m].rotate(state.omega / m as f64).points();
                let cur = state.w[i].points();
                (0..cur.len())
                    .map(|j| {
                        let dw = &self.jac[i][j] * DVector::from_column_slice(&cur[j]);
                        dw.iter().zip(&next[j]).map(|(a, b)| a - state.lambda * b).collect()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn torus_error(&self, state: &TorusState) -> f64 {
        max_abs(&self.torus_error_fields(state))
    }

    pub fn bundle_error(&self, state: &TorusState) -> f64 {
        max_abs(&self.bundle_error_fields(state))
    }
}

pub(crate) fn max_abs(f: &[Vec<Vec<f64>>]) -> f64 {
    f.iter().flatten().flatten().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOptions {
    /// Replace `B¹ = I` by the solution making the torsion constant.
    pub constant_torsion: bool,
    pub divisor_floor: f64,
    /// Largest accepted condition number of the Gram matrices `G_i`.
    pub max_gram_cond: f64,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self { constant_torsion: false, divisor_floor: crate::cohomology::DEFAULT_DIVISOR_FLOOR, max_gram_cond: 1e14 }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptedFrame {
    pub n: usize,
    pub m: usize,
    pub omega: f64,
    pub lambda: f64,
    /// `P_i(θ_j)`.
    pub p: Vec<Vec<DMatrix<f64>>>,
    /// `P_{i+1}(θ_j + ω/m)`.
    pub p_next: Vec<Vec<DMatrix<f64>>>,
    /// `S¹_i(θ_j)`.
    pub s1: Vec<Vec<DMatrix<f64>>>,
    /// `⟨S¹⟩ = (1/m) Σ_i ⟨S¹_i⟩`.
    pub s1_mean: DMatrix<f64>,
    pub symplecticity_defect: f64,
    pub lagrangian_defect: f64,
    pub s1_symmetry_defect: f64,
}

impl AdaptedFrame {
    pub fn reduced_matrix(&self, i: usize, j: usize) -> DMatrix<f64> {
        let n = self.n;
        let mut r = DMatrix::zeros(2 * n, 2 * n);
        for a in 0..n - 1 {
            r[(a, a)] = 1.0;
            r[(n + a, n + a)] = 1.0;
        }
        r[(n - 1, n - 1)] = self.lambda;
        r[(2 * n - 1, 2 * n - 1)] = 1.0 / self.lambda;
        let s = &self.s1[i][j];
        for a in 0..n - 1 {
            for b in 0..n - 1 {
                r[(a, n + b)] = s[(a, b)];
            }
        }
        r
    }

    /// `P_{i+1}(θ_j+ω/m)⁻¹`.
    pub fn p_next_inv(&self, i: usize, j: usize) -> DMatrix<f64> {
        symplectic_inverse(&self.p_next[i][j])
    }
}

/// Build the adapted frame from the torus and its leg flows.
pub fn build_frame(
    model: &dyn HamiltonianModel,
    state: &TorusState,
    flows: &LegFlows,
    opts: &FrameOptions,
) -> Result<AdaptedFrame> {
    state.validate()?;
    let d = state.dim();
    let n = d / 2;
    if n != 3 {
        return Err(Error::InvalidInput("adapted frame with a rank-one bundle needs n = 3".into()));
    }
    let m = state.legs();
    let nn = state.grid_size();
    let lam = state.lambda;
    let shift = state.omega / m as f64;
    let om = omega0(n);

    let mut ls = Vec::with_capacity(m);
    let mut nhat_fields = Vec::with_capacity(m);
    let mut lag_defect = 0.0_f64;
    for i in 0..m {
        let kd = state.k[i].derivative();
        let kp = state.k[i].points();
        let wp = state.w[i].points();
        let mut l_leg = Vec::with_capacity(nn);
        let mut nhat_leg = Vec::with_capacity(nn);
        for j in 0..nn {
            let x = model.vector_field_vec(&kp[j])?;
            let mut l = DMatrix::zeros(d, n);
            l.set_column(0, &DVector::from_vec(kd.point(j)));
            l.set_column(1, &DVector::from_vec(x));
            l.set_column(2, &DVector::from_column_slice(&wp[j]));
            let g = l.transpose() * &l;
            let cond = condition_number(&g);
            if !(cond < opts.max_gram_cond) {
                return Err(Error::DegenerateFrame(format!("Gram matrix condition {cond:e} on leg {i}, node {j}")));
            }
            let ginv = g
                .try_inverse()
                .ok_or_else(|| Error::DegenerateFrame(format!("singular Gram matrix on leg {i}, node {j}")))?;
            lag_defect = lag_defect.max((l.transpose() * &om * &l).amax());
            nhat_leg.push(&om * &l * ginv);
            l_leg.push(l);
        }
        nhat_fields.push(MatrixField::from_matrices(&nhat_leg)?);
        ls.push(l_leg);
    }
    let nhat: Vec<Vec<DMatrix<f64>>> = nhat_fields.iter().map(|f| f.matrices()).collect();
    let nhat_next: Vec<Vec<DMatrix<f64>>> =
        (0..m).map(|i| nhat_fields[(i + 1) % m].rotate(shift).matrices()).collect();

    // Ŝ_i = N̂_{i+1}(θ+ω/m)ᵀ Ω Dφ N̂_i, symmetrized so that Ŝ Λᵀ = Λ Ŝᵀ.
    let mut shat = vec![Vec::with_capacity(nn); m];
    let mut sym_defect = 0.0_f64;
    for i in 0..m {
        for j in 0..nn {
            let mut s = nhat_next[i][j].transpose() * &om * &flows.jac[i][j] * &nhat[i][j];
            sym_defect = sym_defect.max((s[(0, 1)] - s[(1, 0)]).abs());
            for a in 0..n - 1 {
                for b in a + 1..n - 1 {
                    let v = 0.5 * (s[(a, b)] + s[(b, a)]);
                    s[(a, b)] = v;
                    s[(b, a)] = v;
                }
                let v = 0.5 * (s[(a, n - 1)] + s[(n - 1, a)] / lam);
                s[(a, n - 1)] = v;
                s[(n - 1, a)] = lam * v;
            }
            shat[i].push(s);
        }
    }

    let floor = opts.divisor_floor;
    let field = |i: usize, f: &dyn Fn(&DMatrix<f64>) -> f64| -> Result<PeriodicFunction> {
        PeriodicFunction::from_samples(shat[i].iter().map(f).collect())
    };
    let mut b2 = Vec::with_capacity(n - 1);
    for a in 0..n - 1 {
        let rhs = (0..m).map(|i| field(i, &|s| -s[(a, n - 1)])).collect::<Result<Vec<_>>>()?;
        b2.push(solve_multiple_non_small_divisor(&rhs, state.omega, 1.0, 1.0 / lam, floor)?);
    }
    let rhs4 = (0..m).map(|i| field(i, &|s| -s[(n - 1, n - 1)])).collect::<Result<Vec<_>>>()?;
    let b4 = solve_multiple_non_small_divisor(&rhs4, state.omega, lam, 1.0 / lam, floor)?;

    let mut s1_mean = DMatrix::zeros(n - 1, n - 1);
    for leg in &shat {
        for s in leg {
            s1_mean += s.view((0, 0), (n - 1, n - 1));
        }
    }
    s1_mean /= (m * nn) as f64;

    // B¹ = I, or the solution of B¹_i - B¹_{i+1}(θ+ω/m) = ⟨S¹⟩ - Ŝ¹_i.
    let mut b1: Vec<Vec<Vec<PeriodicFunction>>> = Vec::new();
    if opts.constant_torsion {
        b1 = vec![vec![Vec::new(); n - 1]; n - 1];
        for a in 0..n - 1 {
            for b in 0..n - 1 {
                let rhs = (0..m).map(|i| field(i, &|s| s1_mean[(a, b)] - s[(a, b)])).collect::<Result<Vec<_>>>()?;
                b1[a][b] = solve_multiple_small_divisor(&rhs, state.omega, floor)?.0;
            }
        }
    }

    let mut p = vec![Vec::with_capacity(nn); m];
    let mut s1 = vec![Vec::with_capacity(nn); m];
    let mut sympl = 0.0_f64;
    for i in 0..m {
        for j in 0..nn {
            let mut bm = DMatrix::zeros(n, n);
            for a in 0..n - 1 {
                bm[(a, a)] = 1.0;
                if opts.constant_torsion {
                    for b in 0..n - 1 {
                        bm[(a, b)] += b1[a][b][i].samples()[j];
                    }
                }
                let v = b2[a][i].samples()[j];
                bm[(a, n - 1)] = v;
                bm[(n - 1, a)] = v;
            }
            bm[(n - 1, n - 1)] = b4[i].samples()[j];
            let l = &ls[i][j];
            let mut pm = DMatrix::zeros(d, d);
            pm.view_mut((0, 0), (d, n)).copy_from(l);
            pm.view_mut((0, n), (d, n)).copy_from(&(l * &bm + &nhat[i][j]));
            sympl = sympl.max((pm.transpose() * &om * &pm - &om).amax());
            p[i].push(pm);
            s1[i].push(if opts.constant_torsion {
                s1_mean.clone()
            } else {
                shat[i][j].view((0, 0), (n - 1, n - 1)).into_owned()
            });
        }
    }
    let p_fields = p.iter().map(|leg| MatrixField::from_matrices(leg)).collect::<Result<Vec<_>>>()?;
    let p_next = (0..m).map(|i| p_fields[(i + 1) % m].rotate(shift).matrices()).collect();

    Ok(AdaptedFrame {
        n,
        m,
        omega: state.omega,
        lambda: lam,
        p,
        p_next,
        s1,
        s1_mean,
        symplecticity_defect: sympl,
        lagrangian_defect: lag_defect,
        s1_symmetry_defect: sym_defect,
    })
}

/// `max_{i,j} ‖P_{i+1}(θ_j+ω/m)⁻¹ Dφ P_i(θ_j) - [[Λ, S_i],[0, Λ⁻ᵀ]]‖_max`.
pub fn reduction_residual(frame: &AdaptedFrame, flows: &LegFlows) -> f64 {
    let mut r = 0.0_f64;
    for i in 0..frame.m {
        for j in 0..frame.p[i].len() {
            let red = frame.p_next_inv(i, j) * &flows.jac[i][j] * &frame.p[i][j];
            r = r.max((red - frame.reduced_matrix(i, j)).amax());
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic_model::Rtbp;
    use crate::testutil;

    #[test]
    fn frame_reduces_the_linearized_flow() {
        let m = Rtbp::earth_moon();
        let st = testutil::converged();
        let fl = integrate_legs(&m, st, &FlowConfig::default()).unwrap();
        let fr = build_frame(&m, st, &fl, &FrameOptions::default()).unwrap();
        // The torus has amplitude 1e-3, so frame quantities built from K'
        // lose about six digits against the invariance error; N-hat scales
        // like 1/|K'| and the S1 block like 1/|K'|^2.
        assert!(fr.symplecticity_defect < 1e-5, "{}", fr.symplecticity_defect);
        assert!(fr.lagrangian_defect < 1e-5, "{}", fr.lagrangian_defect);
        let s1_scale = fr.s1.iter().flatten().map(|s| s.amax()).fold(0.0, f64::max);
        assert!(fr.s1_symmetry_defect < 1e-5 * s1_scale, "{} of {s1_scale}", fr.s1_symmetry_defect);
        let red = reduction_residual(&fr, &fl);
        assert!(red < 1e-5 * s1_scale, "{red} of {s1_scale}");
    }

    #[test]
    fn leading_columns_are_tangent_and_field() {
        let m = Rtbp::earth_moon();
        let st = testutil::converged();
        let fl = integrate_legs(&m, st, &FlowConfig::default()).unwrap();
        let fr = build_frame(&m, st, &fl, &FrameOptions::default()).unwrap();
        let kd = st.k[1].derivative();
        for j in [0, 7, 19] {
            let p = &fr.p[1][j];
            let z = st.k[1].point(j);
            let x = m.vector_field_vec(&z).unwrap();
            for c in 0..6 {
                assert!((p[(c, 0)] - kd.point(j)[c]).abs() < 1e-12);
                assert!((p[(c, 1)] - x[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stable_column_is_the_bundle() {
        let m = Rtbp::earth_moon();
        let st = testutil::converged();
        let fl = integrate_legs(&m, st, &FlowConfig::default()).unwrap();
        let fr = build_frame(&m, st, &fl, &FrameOptions::default()).unwrap();
        let w = st.w[2].point(3);
        for c in 0..6 {
            assert!((fr.p[2][3][(c, 2)] - w[c]).abs() < 1e-12);
        }
    }
}
