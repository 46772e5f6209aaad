//! Implicit finite-difference update of the concentration field.
//!
//! One macro step solves
//!
//! ```text
//! (alpha/dt) [C_new - C_old] = Lap_h C_new - k^2 C_new + P
//! ```
//!
//! nodewise, with homogeneous Neumann conditions realized by mirrored ghost
//! nodes (`C[-1][j] = C[1][j]` etc.). Scaling each equation by its trapezoidal
//! quadrature weight (1 interior, 1/2 edge, 1/4 corner) makes the system
//! matrix symmetric positive definite while remaining algebraically
//! equivalent, so it is Cholesky-factorized once per run. The matrix is
//! banded with half bandwidth `min(nx, ny)`; unknowns are ordered along the
//! shorter axis to get that bandwidth.

use crate::error::{KsError, Result};
use crate::grid::{GridField, GridSpec};

/// Lower-banded Cholesky factorization (LL^T) of a symmetric positive
/// definite matrix with half bandwidth `kd`.
///
/// Storage is column-major LAPACK 'L' convention: `ab[col*(kd+1) + r]`
/// holds `A[col+r][col]` for `r in 0..=kd`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    kd: usize,
    ab: Vec<f64>,
}

impl BandedCholesky {
    /// Factor the banded matrix in place. Fails if the matrix is not
    /// positive definite.
    pub fn factor(n: usize, kd: usize, mut ab: Vec<f64>) -> Result<Self> {
        assert_eq!(ab.len(), n * (kd + 1), "banded storage size mismatch");
        let w = kd + 1;
        for j in 0..n {
            let jmin = j.saturating_sub(kd);
            let mut d = ab[j * w];
            for k in jmin..j {
                let l = ab[k * w + (j - k)];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(KsError::SingularOperator(format!(
                    "matrix not positive definite at pivot {j} (d = {d})"
                )));
            }
            let ljj = d.sqrt();
            ab[j * w] = ljj;
            let imax = (j + kd).min(n - 1);
            for i in j + 1..=imax {
                let kmin = jmin.max(i.saturating_sub(kd));
                let mut s = ab[j * w + (i - j)];
                for k in kmin..j {
                    s -= ab[k * w + (i - k)] * ab[k * w + (j - k)];
                }
                ab[j * w + (i - j)] = s / ljj;
            }
        }
        Ok(BandedCholesky { n, kd, ab })
    }

    /// Solve `A x = b` in place via forward and back substitution.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let w = self.kd + 1;
        // L y = b
        for i in 0..self.n {
            let kmin = i.saturating_sub(self.kd);
            let mut s = x[i];
            for k in kmin..i {
                s -= self.ab[k * w + (i - k)] * x[k];
            }
            x[i] = s / self.ab[i * w];
        }
        // L^T x = y
        for i in (0..self.n).rev() {
            let kmax = (i + self.kd).min(self.n - 1);
            let mut s = x[i];
            for k in i + 1..=kmax {
                s -= self.ab[i * w + (k - i)] * x[k];
            }
            x[i] = s / self.ab[i * w];
        }
    }

    pub fn bandwidth(&self) -> usize {
        self.kd
    }
}

/// Factorized implicit operator for one `(spec, alpha, k, dt)` combination.
/// Any change to those parameters requires re-assembly.
#[derive(Debug, Clone)]
pub struct ImplicitSolver {
    spec: GridSpec,
    alpha: f64,
    k: f64,
    dt: f64,
    chol: BandedCholesky,
    /// Unknowns ordered with x fastest (true when nx < ny) to minimize
    /// bandwidth; fields themselves always store y fastest.
    x_fastest: bool,
}

impl ImplicitSolver {
    /// Assemble and factor the weighted operator `W (beta I - Lap_h)` with
    /// `beta = alpha/dt + k^2`.
    pub fn assemble(spec: GridSpec, alpha: f64, k: f64, dt: f64) -> Result<Self> {
        if alpha != 0.0 && alpha != 1.0 {
            return Err(KsError::InvalidInput(format!("alpha must be 0 or 1, got {alpha}")));
        }
        if !k.is_finite() || k < 0.0 {
            return Err(KsError::InvalidInput(format!("decay rate k must be finite and >= 0, got {k}")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(KsError::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        if alpha == 0.0 && k == 0.0 {
            return Err(KsError::SingularOperator(
                "elliptic mode with k = 0 is not well-posed under Neumann conditions".into(),
            ));
        }
        let beta = alpha / dt + k * k;
        let x_fastest = spec.nx < spec.ny;
        let kd = spec.nx.min(spec.ny);
        let n = spec.n_nodes();
        let w = kd + 1;
        let inv_dx2 = 1.0 / (spec.dx * spec.dx);
        let mut ab = vec![0.0; n * w];

        let ord = |i: usize, j: usize| -> usize {
            if x_fastest {
                j * spec.nx + i
            } else {
                i * spec.ny + j
            }
        };

        for i in 0..spec.nx {
            for j in 0..spec.ny {
                let u = ord(i, j);
                let wq = spec.quad_weight(i, j);
                ab[u * w] = wq * (beta + 4.0 * inv_dx2);
                // Lower off-diagonal entries A[ord(b)][u] come from the row of
                // the neighbor b: its coupling to (i,j) is doubled when b sits
                // on the boundary along the shared axis (mirrored ghost).
                let mut couple = |bi: usize, bj: usize, on_boundary: bool| {
                    let v = ord(bi, bj);
                    debug_assert!(v > u && v - u <= kd);
                    let mult = if on_boundary { 2.0 } else { 1.0 };
                    ab[u * w + (v - u)] = -spec.quad_weight(bi, bj) * mult * inv_dx2;
                };
                if i + 1 < spec.nx {
                    couple(i + 1, j, i + 1 == spec.nx - 1);
                }
                if j + 1 < spec.ny {
                    couple(i, j + 1, j + 1 == spec.ny - 1);
                }
            }
        }

        let chol = BandedCholesky::factor(n, kd, ab)?;
        Ok(ImplicitSolver { spec, alpha, k, dt, chol, x_fastest })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn decay_rate(&self) -> f64 {
        self.k
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn is_elliptic(&self) -> bool {
        self.alpha == 0.0
    }

    /// Advance the concentration one macro step. In elliptic mode (alpha = 0)
    /// `c_old` is ignored and the solution of `(k^2 - Lap_h) C = P` is
    /// returned.
    pub fn step_concentration(&self, c_old: &GridField, p: &GridField) -> Result<GridField> {
        if c_old.spec != self.spec || p.spec != self.spec {
            return Err(KsError::SpecMismatch("fields do not match the solver's grid".into()));
        }
        p.ensure_finite("deposited density")?;
        if self.alpha != 0.0 {
            c_old.ensure_finite("concentration field")?;
        }
        let mut rhs = vec![0.0; self.spec.n_nodes()];
        let a_dt = self.alpha / self.dt;
        for i in 0..self.spec.nx {
            for j in 0..self.spec.ny {
                let u = if self.x_fastest { j * self.spec.nx + i } else { i * self.spec.ny + j };
                let src = a_dt * c_old.get(i, j) + p.get(i, j);
                rhs[u] = self.spec.quad_weight(i, j) * src;
            }
        }
        self.chol.solve_in_place(&mut rhs);
        let mut out = GridField::zeros(self.spec);
        for i in 0..self.spec.nx {
            for j in 0..self.spec.ny {
                let u = if self.x_fastest { j * self.spec.nx + i } else { i * self.spec.ny + j };
                out.set(i, j, rhs[u]);
            }
        }
        out.ensure_finite("solved concentration")?;
        Ok(out)
    }

    /// Elliptic solve `(k^2 - Lap_h) C = P`; requires an alpha = 0 solver.
    pub fn solve_elliptic(&self, p: &GridField) -> Result<GridField> {
        if self.alpha != 0.0 {
            return Err(KsError::InvalidInput(
                "solve_elliptic requires a solver assembled with alpha = 0".into(),
            ));
        }
        let zero = GridField::zeros(self.spec);
        self.step_concentration(&zero, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::bessel_k0;
    use crate::rng::{StreamKind, StreamRng};

    #[test]
    fn banded_cholesky_matches_dense_solve() {
        // Random diagonally dominant banded SPD system vs direct residual check.
        let n = 40;
        let kd = 5;
        let w = kd + 1;
        let mut rng = StreamRng::substream(7, StreamKind::Init, 0, 0);
        let mut ab = vec![0.0; n * w];
        for c in 0..n {
            for r in 1..=kd.min(n - 1 - c) {
                ab[c * w + r] = rng.uniform_in(-1.0, 1.0);
            }
        }
        for c in 0..n {
            let mut row_sum = 0.0;
            for r in 1..=kd {
                if c + r < n {
                    row_sum += ab[c * w + r].abs();
                }
                if c >= r {
                    row_sum += ab[(c - r) * w + r].abs();
                }
            }
            ab[c * w] = row_sum + 1.0 + rng.uniform();
        }
        let a_full = ab.clone();
        let chol = BandedCholesky::factor(n, kd, ab).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let mut x = b.clone();
        chol.solve_in_place(&mut x);
        // residual b - A x
        for i in 0..n {
            let mut ax = a_full[i * w] * x[i];
            for r in 1..=kd {
                if i + r < n {
                    ax += a_full[i * w + r] * x[i + r];
                }
                if i >= r {
                    ax += a_full[(i - r) * w + r] * x[i - r];
                }
            }
            assert!((ax - b[i]).abs() < 1e-10, "residual too large at {i}: {}", ax - b[i]);
        }
    }

    #[test]
    fn rejects_elliptic_with_zero_decay() {
        let spec = GridSpec::new(5, 5, 0.1).unwrap();
        let err = ImplicitSolver::assemble(spec, 0.0, 0.0, 0.1).unwrap_err();
        assert!(matches!(err, KsError::SingularOperator(_)));
    }

    #[test]
    fn rejects_invalid_parameters() {
        let spec = GridSpec::new(5, 5, 0.1).unwrap();
        assert!(ImplicitSolver::assemble(spec, 0.5, 1.0, 0.1).is_err());
        assert!(ImplicitSolver::assemble(spec, 1.0, f64::NAN, 0.1).is_err());
        assert!(ImplicitSolver::assemble(spec, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn constant_field_is_fixed_point_without_source() {
        // alpha = 1, k = 0: the discrete Laplacian of a constant is zero.
        let spec = GridSpec::new(9, 7, 0.2).unwrap();
        let solver = ImplicitSolver::assemble(spec, 1.0, 0.0, 0.37).unwrap();
        let c0 = GridField::constant(spec, 3.25);
        let p = GridField::zeros(spec);
        let c1 = solver.step_concentration(&c0, &p).unwrap();
        for v in c1.values() {
            assert!((v - 3.25).abs() < 1e-11, "constant not preserved: {v}");
        }
    }

    #[test]
    fn uniform_source_gives_uniform_steady_state() {
        // alpha = 0, k = 1: C = P / k^2 for uniform P.
        let spec = GridSpec::new(8, 8, 0.1).unwrap();
        let solver = ImplicitSolver::assemble(spec, 0.0, 1.0, 1.0).unwrap();
        let p = GridField::constant(spec, 2.5);
        let c = solver.solve_elliptic(&p).unwrap();
        for v in c.values() {
            assert!((v - 2.5).abs() < 1e-10, "uniform steady state violated: {v}");
        }
    }

    #[test]
    fn repeated_parabolic_steps_converge_to_elliptic_limit() {
        let spec = GridSpec::new(6, 6, 0.25).unwrap();
        let k = 1.3;
        let solver = ImplicitSolver::assemble(spec, 1.0, k, 0.5).unwrap();
        let p = GridField::constant(spec, 4.0);
        let mut c = GridField::zeros(spec);
        for _ in 0..400 {
            c = solver.step_concentration(&c, &p).unwrap();
        }
        let target = 4.0 / (k * k);
        for v in c.values() {
            assert!(
                ((v - target) / target).abs() < 1e-10,
                "fixed point P/k^2 not reached: {v} vs {target}"
            );
        }
    }

    #[test]
    fn decay_without_source_obeys_max_principle() {
        let spec = GridSpec::new(12, 10, 0.1).unwrap();
        let solver = ImplicitSolver::assemble(spec, 1.0, 0.8, 0.2).unwrap();
        let mut rng = StreamRng::substream(21, StreamKind::Init, 0, 0);
        let c0 = GridField::from_fn(spec, |_, _| rng.uniform_in(-1.0, 5.0));
        let p = GridField::zeros(spec);
        let c1 = solver.step_concentration(&c0, &p).unwrap();
        assert!(c1.max_abs() <= c0.max_abs() + 1e-13, "sup norm grew without source");
    }

    #[test]
    fn neumann_diffusion_conserves_mass() {
        // alpha = 1, k = 0, P = 0: quadrature-weighted integral conserved.
        let spec = GridSpec::new(17, 13, 0.05).unwrap();
        let mut rng = StreamRng::substream(3, StreamKind::Init, 1, 0);
        let c0 = GridField::from_fn(spec, |_, _| rng.uniform_in(0.0, 10.0));
        let m0 = c0.integral();
        for dt in [0.01, 0.5, 10.0] {
            let solver = ImplicitSolver::assemble(spec, 1.0, 0.0, dt).unwrap();
            let mut c = c0.clone();
            for _ in 0..25 {
                c = solver.step_concentration(&c, &GridField::zeros(spec)).unwrap();
            }
            let m1 = c.integral();
            assert!(
                ((m1 - m0) / m0).abs() < 1e-10,
                "mass drifted at dt={dt}: {m0} -> {m1}"
            );
        }
    }

    #[test]
    fn implicit_update_unconditionally_stable() {
        // Weighted L2 norm non-increasing for P = 0, any dt, k >= 0.
        let spec = GridSpec::new(11, 9, 0.1).unwrap();
        let mut rng = StreamRng::substream(5, StreamKind::Init, 2, 0);
        let c0 = GridField::from_fn(spec, |_, _| rng.uniform_in(-3.0, 3.0));
        for k in [0.0, 1.0] {
            for dt in [1e-3, 0.1, 1.0, 1e3] {
                let solver = ImplicitSolver::assemble(spec, 1.0, k, dt).unwrap();
                let c1 = solver.step_concentration(&c0, &GridField::zeros(spec)).unwrap();
                assert!(
                    c1.weighted_l2() <= c0.weighted_l2() * (1.0 + 1e-12),
                    "L2 norm grew at k={k}, dt={dt}"
                );
            }
        }
    }

    #[test]
    fn point_source_solution_positive_and_radially_decreasing() {
        // Elliptic solve of a discrete point mass: positive everywhere,
        // decreasing away from the source along the axes, and matching the
        // K0 kernel shape away from the node. The domain is large enough
        // that Neumann images stay below the comparison tolerance.
        let spec = GridSpec::square(6.4, 0.05).unwrap();
        let solver = ImplicitSolver::assemble(spec, 0.0, 1.0, 1.0).unwrap();
        let ic = spec.nx / 2;
        let jc = spec.ny / 2;
        let m = 1.0;
        let mut p = GridField::zeros(spec);
        p.set(ic, jc, m / (spec.dx * spec.dx)); // nodal density of a point mass
        let c = solver.solve_elliptic(&p).unwrap();
        for v in c.values() {
            assert!(*v > 0.0, "concentration must be positive, got {v}");
        }
        for step in 1..10 {
            assert!(
                c.get(ic + step, jc) < c.get(ic + step - 1, jc),
                "not decreasing along +x at offset {step}"
            );
            assert!(
                c.get(ic, jc + step) < c.get(ic, jc + step - 1),
                "not decreasing along +y at offset {step}"
            );
        }
        // Shape check vs (m/2pi) K0(k r) at mid-range radii.
        for step in [5usize, 8, 12] {
            let r = step as f64 * spec.dx;
            let expected = m / (2.0 * std::f64::consts::PI) * bessel_k0(r).unwrap();
            let got = c.get(ic + step, jc);
            assert!(
                ((got - expected) / expected).abs() < 0.1,
                "K0 shape mismatch at r={r}: got {got}, kernel {expected}"
            );
        }
    }

    #[test]
    fn manufactured_solution_second_order() {
        // One implicit step from C = cos(pi x/L) cos(pi y/L) with P = 0 vs the
        // exact semi-discrete update C * (1/dt) / (1/dt + k^2 + lam),
        // lam = 2 (pi/L)^2. Observed order >= 1.9 under refinement.
        let length = 2.0;
        let k = 1.0;
        let dt = 0.1;
        let lam = 2.0 * (std::f64::consts::PI / length).powi(2);
        let factor = (1.0 / dt) / (1.0 / dt + k * k + lam);
        let mut errs = Vec::new();
        for nodes in [17usize, 33, 65] {
            let dx = length / (nodes - 1) as f64;
            let spec = GridSpec::new(nodes, nodes, dx).unwrap();
            let field = |x: f64, y: f64| {
                (std::f64::consts::PI * x / length).cos() * (std::f64::consts::PI * y / length).cos()
            };
            let c0 = GridField::from_fn(spec, field);
            let solver = ImplicitSolver::assemble(spec, 1.0, k, dt).unwrap();
            let c1 = solver.step_concentration(&c0, &GridField::zeros(spec)).unwrap();
            let mut max_err = 0.0_f64;
            for i in 0..spec.nx {
                for j in 0..spec.ny {
                    let (x, y) = spec.node_pos(i, j);
                    max_err = max_err.max((c1.get(i, j) - factor * field(x, y)).abs());
                }
            }
            errs.push(max_err);
        }
        let order1 = (errs[0] / errs[1]).log2();
        let order2 = (errs[1] / errs[2]).log2();
        assert!(
            order1 >= 1.9 && order2 >= 1.9,
            "observed orders {order1:.3}, {order2:.3} (errors {errs:?})"
        );
    }

    #[test]
    fn spec_mismatch_is_rejected() {
        let spec_a = GridSpec::new(5, 5, 0.1).unwrap();
        let spec_b = GridSpec::new(6, 5, 0.1).unwrap();
        let solver = ImplicitSolver::assemble(spec_a, 1.0, 1.0, 0.1).unwrap();
        let c = GridField::zeros(spec_b);
        let p = GridField::zeros(spec_b);
        assert!(matches!(solver.step_concentration(&c, &p), Err(KsError::SpecMismatch(_))));
    }

    #[test]
    fn non_finite_source_is_rejected() {
        let spec = GridSpec::new(5, 5, 0.1).unwrap();
        let solver = ImplicitSolver::assemble(spec, 1.0, 1.0, 0.1).unwrap();
        let c = GridField::zeros(spec);
        let mut p = GridField::zeros(spec);
        p.set(2, 2, f64::NAN);
        assert!(solver.step_concentration(&c, &p).is_err());
    }

    #[test]
    fn tall_grid_uses_short_axis_bandwidth() {
        // nx < ny flips the ordering; results must be identical physics.
        let spec = GridSpec::new(5, 12, 0.1).unwrap();
        let solver = ImplicitSolver::assemble(spec, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(solver.chol.bandwidth(), 5);
        let p = GridField::constant(spec, 1.0);
        let c = solver.solve_elliptic(&p).unwrap();
        for v in c.values() {
            assert!((v - 1.0).abs() < 1e-10);
        }
        let spec_wide = GridSpec::new(12, 5, 0.1).unwrap();
        let solver_wide = ImplicitSolver::assemble(spec_wide, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(solver_wide.chol.bandwidth(), 5);
    }
}
