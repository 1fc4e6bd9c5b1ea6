//! The four layers of one unrolled cell.
//!
//! Order inside a cell is dual → primal v → auxiliary z → global w. Each
//! function is a pure map of its inputs so the same code runs on the
//! client and server side of the federation and inside the tape replay.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, rectify, Cholesky, DiagPD, Mat};

fn check_dims(context: &'static str, k: usize, vs: &[&[f64]]) -> Result<()> {
    for v in vs {
        if v.len() != k {
            return Err(Error::DimensionMismatch {
                context,
                expected: k,
                got: v.len(),
            });
        }
        if !all_finite(v) {
            return Err(Error::NonFiniteInput(context));
        }
    }
    Ok(())
}

/// Dual update: `α + ρ(z − v + w)`.
pub fn phi1_dual(
    alpha_prev: &[f64],
    v_prev: &[f64],
    z_prev: &[f64],
    w_prev: &[f64],
    rho: f64,
) -> Result<Vec<f64>> {
    check_dims("phi1_dual", alpha_prev.len(), &[v_prev, z_prev, w_prev])?;
    if !rho.is_finite() {
        return Err(Error::NonFiniteInput("phi1_dual"));
    }
    Ok((0..alpha_prev.len())
        .map(|j| alpha_prev[j] + rho * (z_prev[j] - v_prev[j] + w_prev[j]))
        .collect())
}

/// The proximal anchor `w + z + α` shared by both v-update variants.
pub fn v_anchor(alpha: &[f64], z_prev: &[f64], w_prev: &[f64]) -> Vec<f64> {
    (0..alpha.len())
        .map(|j| w_prev[j] + z_prev[j] + alpha[j])
        .collect()
}

/// Precomputed `XᵀX` and `XᵀY` for one client.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub gram: Mat,
    pub xty: Vec<f64>,
}

impl NormalEquations {
    pub fn new(x: &Mat, y: &[f64]) -> Result<Self> {
        Ok(NormalEquations {
            gram: x.gram(),
            xty: x.tmatvec(y)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    /// Factor of `XᵀX + ρI`.
    pub fn factor(&self, rho: f64) -> Result<Cholesky> {
        Cholesky::factor(&self.gram.add_diag(rho))
    }

    /// Closed-form v-update given the anchor `w + z + α`.
    pub fn solve_prox(&self, anchor: &[f64], rho: f64) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = anchor
            .iter()
            .zip(&self.xty)
            .map(|(a, b)| rho * a + b)
            .collect();
        self.factor(rho)?.solve(&rhs)
    }

    /// Gradient of `‖Xv − Y‖²`, i.e. `2(XᵀX v − XᵀY)`.
    pub fn loss_grad(&self, v: &[f64]) -> Vec<f64> {
        let gv = self.gram.matvec(v).expect("dims checked by caller");
        gv.iter().zip(&self.xty).map(|(a, b)| 2.0 * (a - b)).collect()
    }
}

/// Closed-form v-update: `(XᵀX + ρI)⁻¹(ρ(w + z + α) + XᵀY)`.
pub fn phi2_v_linear(
    x: &Mat,
    y: &[f64],
    alpha: &[f64],
    z_prev: &[f64],
    w_prev: &[f64],
    rho: f64,
) -> Result<Vec<f64>> {
    check_dims("phi2_v_linear", x.cols(), &[alpha, z_prev, w_prev])?;
    let ne = NormalEquations::new(x, y)?;
    ne.solve_prox(&v_anchor(alpha, z_prev, w_prev), rho)
}

/// Gradient-step v-update on `h(v) = F(v) + ρ/2‖w + z + α − v‖²`,
/// starting from `v_prev`. Returns the iterate after `steps` steps.
#[allow(clippy::too_many_arguments)]
pub fn phi2_v_grad(
    grad_of_f: &dyn Fn(&[f64]) -> Vec<f64>,
    v_prev: &[f64],
    alpha: &[f64],
    z_prev: &[f64],
    w_prev: &[f64],
    rho: f64,
    lr: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut traj = grad_step_trajectory(grad_of_f, v_prev, alpha, z_prev, w_prev, rho, lr, steps)?;
    Ok(traj.pop().expect("trajectory holds v_prev"))
}

/// All iterates `v_0 = v_prev, v_1, …, v_steps`; the learner needs them.
#[allow(clippy::too_many_arguments)]
pub(crate) fn grad_step_trajectory(
    grad_of_f: &dyn Fn(&[f64]) -> Vec<f64>,
    v_prev: &[f64],
    alpha: &[f64],
    z_prev: &[f64],
    w_prev: &[f64],
    rho: f64,
    lr: f64,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    check_dims("phi2_v_grad", v_prev.len(), &[alpha, z_prev, w_prev])?;
    let anchor = v_anchor(alpha, z_prev, w_prev);
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(v_prev.to_vec());
    for _ in 0..steps {
        let v = traj.last().expect("non-empty");
        let g = grad_of_f(v);
        let next: Vec<f64> = (0..v.len())
            .map(|j| v[j] - lr * (g[j] - rho * (anchor[j] - v[j])))
            .collect();
        if !all_finite(&next) {
            return Err(Error::NonFiniteGradient {
                layer: 0,
                client: 0,
            });
        }
        traj.push(next);
    }
    Ok(traj)
}

/// Auxiliary update: `z_j = ρ(v − w − α)_j / (max(0, λ_j) + ρ)`.
pub fn phi3_aux(
    alpha: &[f64],
    v: &[f64],
    w_prev: &[f64],
    rho: f64,
    lambda: &DiagPD,
) -> Result<Vec<f64>> {
    check_dims("phi3_aux", v.len(), &[alpha, w_prev, &lambda.raw_diag])?;
    Ok((0..v.len())
        .map(|j| rho * (v[j] - w_prev[j] - alpha[j]) / (rectify(lambda.raw_diag[j]) + rho))
        .collect())
}

/// The vector a client uploads: `v − z − α`.
pub fn client_message(v: &[f64], z: &[f64], alpha: &[f64]) -> Vec<f64> {
    (0..v.len()).map(|j| v[j] - z[j] - alpha[j]).collect()
}

/// One client's contribution to the global update.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution<'a> {
    pub message: &'a [f64],
    pub p: f64,
    /// Effective (clamped) server copy of ρ.
    pub gamma: f64,
}

/// Weighted average of client messages with weights `p·γ`.
pub fn phi4_global(parts: &[Contribution<'_>]) -> Result<Vec<f64>> {
    let first = parts.first().ok_or(Error::EmptyData("phi4_global"))?;
    let k = first.message.len();
    for part in parts {
        check_dims("phi4_global", k, &[part.message])?;
    }
    let total: f64 = parts.iter().map(|c| c.p * c.gamma).sum();
    if !(total.abs() >= 1e-12) {
        return Err(Error::DegenerateWeights(total));
    }
    let mut w = vec![0.0; k];
    for part in parts {
        let weight = part.p * part.gamma;
        for (wj, mj) in w.iter_mut().zip(part.message) {
            *wj += weight * mj;
        }
    }
    for wj in w.iter_mut() {
        *wj /= total;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn phi1_examples() {
        // consensus residual zero leaves α unchanged
        assert_eq!(
            phi1_dual(&[0.3, -2.0], &[1.0, 1.0], &[0.5, 2.0], &[0.5, -1.0], 7.0).unwrap(),
            vec![0.3, -2.0]
        );
        assert_eq!(
            phi1_dual(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap(),
            vec![1.0, 1.0]
        );
        assert_eq!(phi1_dual(&[1.0], &[3.0], &[0.0], &[1.0], 2.0).unwrap(), vec![-3.0]);
    }

    #[test]
    fn phi1_errors() {
        assert!(matches!(
            phi1_dual(&[0.0, 0.0], &[0.0], &[0.0, 0.0], &[0.0, 0.0], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            phi1_dual(&[0.0], &[f64::NAN], &[0.0], &[0.0], 1.0),
            Err(Error::NonFiniteInput(_))
        ));
    }

    #[test]
    fn phi2_linear_examples() {
        let x = Mat::from_rows(&[vec![1.0]]).unwrap();
        let v = phi2_v_linear(&x, &[2.0], &[0.0], &[0.0], &[0.0], 1.0).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15);

        let zeros = Mat::zeros(3, 2);
        let v = phi2_v_linear(&zeros, &[0.0; 3], &[1.0, -2.0], &[0.5, 0.5], &[0.25, 0.0], 3.0)
            .unwrap();
        assert!((v[0] - 1.75).abs() < 1e-14 && (v[1] + 1.5).abs() < 1e-14);

        let v = phi2_v_linear(&Mat::identity(2), &[2.0, 4.0], &[0.0; 2], &[0.0; 2], &[0.0; 2], 1.0)
            .unwrap();
        assert!((v[0] - 1.0).abs() < 1e-14 && (v[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn phi2_linear_solves_normal_equations() {
        let x = Mat::from_rows(&[vec![1.0, 0.5], vec![0.2, -1.0], vec![2.0, 1.0]]).unwrap();
        let y = [1.0, -0.5, 0.25];
        let (alpha, z, w, rho) = ([0.1, 0.2], [-0.3, 0.0], [0.5, 0.4], 0.7);
        let v = phi2_v_linear(&x, &y, &alpha, &z, &w, rho).unwrap();
        let lhs = x.gram().add_diag(rho).matvec(&v).unwrap();
        let xty = x.tmatvec(&y).unwrap();
        for j in 0..2 {
            let rhs = rho * (w[j] + z[j] + alpha[j]) + xty[j];
            assert!((lhs[j] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn phi2_grad_examples() {
        let zero_f = |v: &[f64]| vec![0.0; v.len()];
        // anchor equals v_prev: no movement
        let v = phi2_v_grad(&zero_f, &[1.0, 2.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0], 1.0, 0.5, 3)
            .unwrap();
        assert!((v[0] - 1.0).abs() < 1e-14 && (v[1] - 2.0).abs() < 1e-14);

        let v = phi2_v_grad(&zero_f, &[0.0], &[2.0], &[0.0], &[0.0], 1.0, 1.0, 1).unwrap();
        assert_eq!(v, vec![2.0]);

        // F = ‖v − 1‖², ρ at its floor
        let quad = |v: &[f64]| v.iter().map(|x| 2.0 * (x - 1.0)).collect();
        let v = phi2_v_grad(&quad, &[5.0], &[0.0], &[0.0], &[0.0], 1e-6, 0.25, 200).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn phi2_grad_reports_divergence() {
        let quad = |v: &[f64]| v.iter().map(|x| 2.0 * x).collect();
        let err = phi2_v_grad(&quad, &[1.0], &[0.0], &[0.0], &[0.0], 1.0, 10.0, 2000).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { .. }));
    }

    #[test]
    fn phi3_examples() {
        let u = [0.5, -1.0, 3.0];
        let zero = DiagPD::new(vec![0.0; 3]);
        let z = phi3_aux(&[0.0; 3], &u, &[0.0; 3], 2.5, &zero).unwrap();
        assert_eq!(z, u.to_vec());

        let huge = DiagPD::new(vec![1e15; 3]);
        let z = phi3_aux(&[0.0; 3], &u, &[0.0; 3], 1.0, &huge).unwrap();
        assert!(z.iter().all(|x| x.abs() < 1e-14));

        let z = phi3_aux(&[0.0], &[4.0], &[0.0], 1.0, &DiagPD::new(vec![1.0])).unwrap();
        assert_eq!(z, vec![2.0]);

        // negative raw storage rectifies to 0
        let z = phi3_aux(&[0.0], &[4.0], &[0.0], 1.0, &DiagPD::new(vec![-5.0])).unwrap();
        assert_eq!(z, vec![4.0]);
    }

    #[test]
    fn phi4_examples() {
        let m = [0.5, -2.0];
        let w = phi4_global(&[Contribution {
            message: &m,
            p: 0.3,
            gamma: 17.0,
        }])
        .unwrap();
        assert_eq!(w, m.to_vec());

        let c = [1.25, -0.5];
        let parts: Vec<_> = [(0.1, 2.0), (0.7, 0.3), (1.0, 1.0)]
            .iter()
            .map(|&(p, gamma)| Contribution {
                message: &c,
                p,
                gamma,
            })
            .collect();
        let w = phi4_global(&parts).unwrap();
        for j in 0..2 {
            assert!((w[j] - c[j]).abs() < 1e-15);
        }

        let (a, b) = ([0.0], [2.0]);
        let w = phi4_global(&[
            Contribution {
                message: &a,
                p: 1.0,
                gamma: 1.0,
            },
            Contribution {
                message: &b,
                p: 1.0,
                gamma: 3.0,
            },
        ])
        .unwrap();
        assert_eq!(w, vec![1.5]);
    }

    #[test]
    fn phi4_degenerate_weights() {
        let (a, b) = ([1.0], [2.0]);
        let err = phi4_global(&[
            Contribution {
                message: &a,
                p: 1.0,
                gamma: 1.0,
            },
            Contribution {
                message: &b,
                p: -1.0,
                gamma: 1.0,
            },
        ])
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateWeights(_)));
    }

    proptest! {
        #[test]
        fn phi3_is_monotone_in_lambda(
            u in -5.0f64..5.0, rho in 1e-3f64..10.0, lam in -1.0f64..10.0, bump in 0.0f64..10.0,
        ) {
            let z0 = phi3_aux(&[0.0], &[u], &[0.0], rho, &DiagPD::new(vec![lam])).unwrap();
            let z1 = phi3_aux(&[0.0], &[u], &[0.0], rho, &DiagPD::new(vec![lam + bump])).unwrap();
            prop_assert!(z1[0].abs() <= z0[0].abs());
        }

        #[test]
        fn phi4_scale_invariant(
            msgs in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 2), 1..5),
            weights in proptest::collection::vec((0.1f64..2.0, 0.1f64..2.0), 5),
            scale in 0.01f64..100.0,
        ) {
            let parts: Vec<_> = msgs.iter().zip(&weights)
                .map(|(m, &(p, gamma))| Contribution { message: m, p, gamma }).collect();
            let scaled: Vec<_> = msgs.iter().zip(&weights)
                .map(|(m, &(p, gamma))| Contribution { message: m, p: p * scale, gamma }).collect();
            let w0 = phi4_global(&parts).unwrap();
            let w1 = phi4_global(&scaled).unwrap();
            for (a, b) in w0.iter().zip(&w1) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }
}
