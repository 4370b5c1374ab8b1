//! Scalar-auxiliary-variable layer: the state (phi, q), the nonlinear stage
//! right-hand sides of the reformulated flow, and the modified and raw
//! discrete energies.
//!
//! The auxiliary variable is q = sqrt((g(phi), 1)_h + C0). C0 is kept as a
//! separate model constant under the square root; the potential density g
//! carries no C0/|Omega| shift. The gamma0 stabilization moves a gamma0
//! multiple of the identity (or of -Delta for the thin-film model) into the
//! linear operator, with the compensation completed inside g as a square,
//! e.g. g = (phi^2 - 1 - gamma0)^2 / 4, so g stays pointwise nonnegative
//! and the radicand cannot go negative on coarsened states. That completion
//! shifts both discrete energies by the constant
//! (gamma0/2 + gamma0^2/4)*|Omega| relative to the unstabilized free
//! energy; [`ModelSpec::energy_shift`] exposes it so observers can report
//! the physical energy.

use crate::error::{Error, Result};
use crate::spectral::{
    apply_derivative, apply_symbol, check_same_grid, inner, integral_h, Field, Grid2D,
    OperatorSymbol, SymbolKind,
};

/// Nonlinear potential density g and its functional derivative.
#[derive(Debug, Clone)]
pub enum Potential {
    /// g identically zero (pure linear flow; used by oracles and tests).
    Zero,
    /// Double well completed with the stabilization shift:
    /// g = (phi^2 - 1 - gamma0)^2 / 4, g' = phi^3 - (1 + gamma0) phi.
    DoubleWell { gamma0: f64 },
    /// Slope-selection density for thin-film growth:
    /// g = (|grad phi|^2 - 1 - gamma0)^2 / 4 with spectral gradients;
    /// the variation is div((gamma0 + 1 - |grad phi|^2) grad phi).
    SlopeSelection { gamma0: f64 },
}

impl Potential {
    /// Pointwise (or gradient-dependent) density g(phi).
    pub fn density(&self, phi: &Field) -> Result<Field> {
        match *self {
            Potential::Zero => Ok(Field::zeros(*phi.grid())),
            Potential::DoubleWell { gamma0 } => {
                let mut out = phi.clone();
                out.values_mut()
                    .mapv_inplace(|v| 0.25 * (v * v - 1.0 - gamma0).powi(2));
                Ok(out)
            }
            Potential::SlopeSelection { gamma0 } => {
                let px = apply_derivative(phi, 1, 0)?;
                let py = apply_derivative(phi, 0, 1)?;
                let mut out = Field::zeros(*phi.grid());
                for ((o, x), y) in out
                    .values_mut()
                    .iter_mut()
                    .zip(px.values().iter())
                    .zip(py.values().iter())
                {
                    let slope2 = x * x + y * y;
                    *o = 0.25 * (slope2 - 1.0 - gamma0).powi(2);
                }
                Ok(out)
            }
        }
    }

    /// Mean-field coefficient of the variation's linearization, used to
    /// strengthen the implicit part of stage solvers: the variation behaves
    /// like `coeff * phi` for the pointwise well and like `coeff * lap phi`
    /// for the slope-selection form.
    pub fn mean_linearization(&self, phi: &Field) -> Result<f64> {
        match *self {
            Potential::Zero => Ok(0.0),
            Potential::DoubleWell { gamma0 } => {
                let mut acc = 0.0;
                for v in phi.values().iter() {
                    acc += 3.0 * v * v;
                }
                Ok(acc / phi.grid().num_nodes() as f64 - (1.0 + gamma0))
            }
            Potential::SlopeSelection { gamma0 } => {
                let px = apply_derivative(phi, 1, 0)?;
                let py = apply_derivative(phi, 0, 1)?;
                let mut acc = 0.0;
                for (x, y) in px.values().iter().zip(py.values().iter()) {
                    acc += x * x + y * y;
                }
                Ok(gamma0 + 1.0 - acc / phi.grid().num_nodes() as f64)
            }
        }
    }

    /// Whether `mean_linearization` multiplies the identity or the discrete
    /// Laplacian.
    pub fn linearization_is_laplacian(&self) -> bool {
        matches!(self, Potential::SlopeSelection { .. })
    }

    /// Prepares the Gateaux derivative of `variation` at `phi` for repeated
    /// application (stage-system Jacobian solves).
    pub fn linearizer(&self, phi: &Field) -> Result<PotentialLinearizer> {
        match *self {
            Potential::Zero => Ok(PotentialLinearizer::Zero),
            Potential::DoubleWell { gamma0 } => {
                let mut second = phi.clone();
                second
                    .values_mut()
                    .mapv_inplace(|v| 3.0 * v * v - (1.0 + gamma0));
                Ok(PotentialLinearizer::Pointwise(second))
            }
            Potential::SlopeSelection { gamma0 } => {
                let gx = apply_derivative(phi, 1, 0)?;
                let gy = apply_derivative(phi, 0, 1)?;
                let mut coeff = Field::zeros(*phi.grid());
                for ((c, x), y) in coeff
                    .values_mut()
                    .iter_mut()
                    .zip(gx.values().iter())
                    .zip(gy.values().iter())
                {
                    *c = gamma0 + 1.0 - (x * x + y * y);
                }
                Ok(PotentialLinearizer::Slope { coeff, gx, gy })
            }
        }
    }

    /// Functional derivative dg/dphi of (g, 1)_h, discretely consistent with
    /// `density` (verified by the directional-derivative tests below).
    pub fn variation(&self, phi: &Field) -> Result<Field> {
        match *self {
            Potential::Zero => Ok(Field::zeros(*phi.grid())),
            Potential::DoubleWell { gamma0 } => {
                let mut out = phi.clone();
                out.values_mut()
                    .mapv_inplace(|v| v * v * v - (1.0 + gamma0) * v);
                Ok(out)
            }
            Potential::SlopeSelection { gamma0 } => {
                let px = apply_derivative(phi, 1, 0)?;
                let py = apply_derivative(phi, 0, 1)?;
                let mut fx = Field::zeros(*phi.grid());
                let mut fy = Field::zeros(*phi.grid());
                for (((ox, oy), x), y) in fx
                    .values_mut()
                    .iter_mut()
                    .zip(fy.values_mut().iter_mut())
                    .zip(px.values().iter())
                    .zip(py.values().iter())
                {
                    let coeff = gamma0 + 1.0 - (x * x + y * y);
                    *ox = coeff * x;
                    *oy = coeff * y;
                }
                let mut div = apply_derivative(&fx, 1, 0)?;
                div.scaled_add(1.0, &apply_derivative(&fy, 0, 1)?);
                Ok(div)
            }
        }
    }
}

/// Frozen Gateaux derivative of a potential's variation, applied to
/// perturbation fields.
#[derive(Debug, Clone)]
pub enum PotentialLinearizer {
    Zero,
    /// d(g')/dphi as a pointwise multiplier field.
    Pointwise(Field),
    /// Slope-selection derivative
    /// div(coeff * grad(delta) - 2 (grad(phi) . grad(delta)) grad(phi)).
    Slope { coeff: Field, gx: Field, gy: Field },
}

impl PotentialLinearizer {
    pub fn apply(&self, delta: &Field) -> Result<Field> {
        match self {
            PotentialLinearizer::Zero => Ok(Field::zeros(*delta.grid())),
            PotentialLinearizer::Pointwise(second) => {
                let mut out = delta.clone();
                out.mul_pointwise(second);
                Ok(out)
            }
            PotentialLinearizer::Slope { coeff, gx, gy } => {
                let dx = apply_derivative(delta, 1, 0)?;
                let dy = apply_derivative(delta, 0, 1)?;
                let gxs = gx.values().as_slice().expect("layout");
                let gys = gy.values().as_slice().expect("layout");
                let cs = coeff.values().as_slice().expect("layout");
                let dxs = dx.values().as_slice().expect("layout");
                let dys = dy.values().as_slice().expect("layout");
                let mut fx = Field::zeros(*delta.grid());
                let mut fy = Field::zeros(*delta.grid());
                {
                    let fxs = fx.values_mut().as_slice_mut().expect("layout");
                    let fys = fy.values_mut().as_slice_mut().expect("layout");
                    for i in 0..cs.len() {
                        let dot = 2.0 * (gxs[i] * dxs[i] + gys[i] * dys[i]);
                        fxs[i] = cs[i] * dxs[i] - dot * gxs[i];
                        fys[i] = cs[i] * dys[i] - dot * gys[i];
                    }
                }
                let mut div = apply_derivative(&fx, 1, 0)?;
                div.scaled_add(1.0, &apply_derivative(&fy, 0, 1)?);
                Ok(div)
            }
        }
    }

    /// Mean coefficient for the mode-diagonal preconditioner: multiplies the
    /// identity for the pointwise case and the Laplacian for the slope case.
    pub fn mean_coefficient(&self) -> f64 {
        match self {
            PotentialLinearizer::Zero => 0.0,
            PotentialLinearizer::Pointwise(second) => second.mean(),
            PotentialLinearizer::Slope { coeff, .. } => coeff.mean(),
        }
    }
}

/// One gradient flow: the mobility symbol G_h, the linear symbol L_h, the
/// nonlinear potential, and the SAV constants.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    name: String,
    mobility: OperatorSymbol,
    linear: OperatorSymbol,
    potential: Potential,
    c0: f64,
    gamma0: f64,
    energy_shift: f64,
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        mobility: OperatorSymbol,
        linear: OperatorSymbol,
        potential: Potential,
        c0: f64,
        gamma0: f64,
    ) -> Result<Self> {
        if mobility.kind() != SymbolKind::MobilityG || linear.kind() != SymbolKind::LinearL {
            return Err(Error::InvalidParameter(
                "model requires a mobility symbol and a linear symbol".into(),
            ));
        }
        check_same_grid(mobility.grid(), linear.grid(), "model symbols")?;
        if !(c0 >= 0.0 && c0.is_finite()) {
            return Err(Error::InvalidParameter(format!("C0 must be >= 0, got {c0}")));
        }
        if !(gamma0 >= 0.0 && gamma0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma0 must be >= 0, got {gamma0}"
            )));
        }
        let area = mobility.grid().area();
        let energy_shift = match potential {
            Potential::Zero => 0.0,
            _ => (gamma0 / 2.0 + gamma0 * gamma0 / 4.0) * area,
        };
        Ok(ModelSpec {
            name: name.into(),
            mobility,
            linear,
            potential,
            c0,
            gamma0,
            energy_shift,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn grid(&self) -> &Grid2D {
        self.mobility.grid()
    }
    pub fn mobility(&self) -> &OperatorSymbol {
        &self.mobility
    }
    pub fn linear(&self) -> &OperatorSymbol {
        &self.linear
    }
    pub fn potential(&self) -> &Potential {
        &self.potential
    }
    pub fn c0(&self) -> f64 {
        self.c0
    }
    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    /// Constant by which the stabilized split energy exceeds the
    /// unstabilized free energy; subtract it to recover the physical value.
    pub fn energy_shift(&self) -> f64 {
        self.energy_shift
    }

    /// (g(phi), 1)_h + C0, guarded against losing positivity.
    pub fn radicand(&self, phi: &Field) -> Result<f64> {
        let g = self.potential.density(phi)?;
        let r = integral_h(&g) + self.c0;
        if !r.is_finite() || r < 1e-12 * self.grid().area() {
            return Err(Error::NonpositiveRadicand {
                value: r,
                c0: self.c0,
            });
        }
        Ok(r)
    }
}

/// The evolving pair (phi, q) at simulation time t.
#[derive(Debug, Clone)]
pub struct SavState {
    pub phi: Field,
    pub q: f64,
    pub t: f64,
}

/// Modified energy E_h = (L_h phi, phi)_h / 2 + q^2 - C0 next to the raw
/// energy F_h = (L_h phi, phi)_h / 2 + (g(phi), 1)_h. The two agree exactly
/// when q is consistent.
#[derive(Debug, Clone, Copy)]
pub struct EnergyPair {
    pub modified: f64,
    pub raw: f64,
}

/// Consistent initialization q(0) = sqrt((g(phi0), 1)_h + C0) at t = 0.
pub fn init_consistent(phi0: Field, model: &ModelSpec) -> Result<SavState> {
    check_same_grid(phi0.grid(), model.grid(), "initial field")?;
    phi0.check_finite("initial field")?;
    let r = model.radicand(&phi0)?;
    Ok(SavState {
        phi: phi0,
        q: r.sqrt(),
        t: 0.0,
    })
}

/// Stage right-hand side of the reformulated flow:
/// k = G_h (L_h phi + q g'(phi) / sqrt(r)), l = (g'(phi) / (2 sqrt(r)), k)_h
/// with r = (g(phi), 1)_h + C0 computed once and shared by k and l.
pub fn stage_rhs(phi: &Field, q: f64, model: &ModelSpec) -> Result<(Field, f64)> {
    let (k, l, _) = stage_rhs_parts(phi, q, model)?;
    Ok((k, l))
}

/// As `stage_rhs`, additionally returning mu = L_h phi + q g'(phi)/sqrt(r)
/// (so k = G_h mu), which the dissipation identity needs.
pub(crate) fn stage_rhs_parts(phi: &Field, q: f64, model: &ModelSpec) -> Result<(Field, f64, Field)> {
    let r = model.radicand(phi)?;
    let sqrt_r = r.sqrt();
    let gp = model.potential.variation(phi)?;
    let mut mu = apply_symbol(&model.linear, phi)?;
    mu.scaled_add(q / sqrt_r, &gp);
    let k = apply_symbol(&model.mobility, &mu)?;
    let l = inner(&gp, &k)? / (2.0 * sqrt_r);
    Ok((k, l, mu))
}

/// Both energies of a state. The modified energy uses q; the raw energy
/// re-evaluates (g(phi), 1)_h.
pub fn energy(state: &SavState, model: &ModelSpec) -> Result<EnergyPair> {
    let lphi = apply_symbol(&model.linear, &state.phi)?;
    let quad = 0.5 * inner(&lphi, &state.phi)?;
    let g = model.potential.density(&state.phi)?;
    Ok(EnergyPair {
        modified: quad + state.q * state.q - model.c0,
        raw: quad + integral_h(&g),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{make_operator_symbol, norm_h};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid_2pi(n: usize) -> Grid2D {
        Grid2D::new(n, n, 2.0 * PI, 2.0 * PI).unwrap()
    }

    /// Allen-Cahn-style model assembled by hand for unit tests.
    fn ac_model(grid: Grid2D, m: f64, eps: f64, gamma0: f64, c0: f64) -> ModelSpec {
        let mobility = make_operator_symbol(&grid, &[(0, -m)], SymbolKind::MobilityG).unwrap();
        let linear =
            make_operator_symbol(&grid, &[(1, -eps * eps), (0, gamma0)], SymbolKind::LinearL)
                .unwrap();
        ModelSpec::new("ac-test", mobility, linear, Potential::DoubleWell { gamma0 }, c0, gamma0)
            .unwrap()
    }

    fn mbe_model(grid: Grid2D, m: f64, eps2: f64, gamma0: f64, c0: f64) -> ModelSpec {
        let mobility = make_operator_symbol(&grid, &[(0, -m)], SymbolKind::MobilityG).unwrap();
        let linear =
            make_operator_symbol(&grid, &[(2, eps2), (1, -gamma0)], SymbolKind::LinearL).unwrap();
        ModelSpec::new(
            "mbe-test",
            mobility,
            linear,
            Potential::SlopeSelection { gamma0 },
            c0,
            gamma0,
        )
        .unwrap()
    }

    #[test]
    fn consistent_init_of_zero_field() {
        // g(0) = 1/4 with gamma0 = 0, so q = sqrt(|Omega|/4 + C0).
        let grid = grid_2pi(16);
        let model = ac_model(grid, 1.0, 1.0, 0.0, 1.0);
        let state = init_consistent(Field::zeros(grid), &model).unwrap();
        let expected = (grid.area() / 4.0 + 1.0).sqrt();
        assert!((state.q - expected).abs() <= 1e-12 * expected);
        assert_eq!(state.t, 0.0);
    }

    #[test]
    fn consistent_init_at_well_minimum() {
        let grid = grid_2pi(16);
        let model = ac_model(grid, 1.0, 1.0, 0.0, 1.0);
        let state = init_consistent(Field::constant(grid, 1.0), &model).unwrap();
        assert!((state.q - 1.0).abs() <= 1e-13);
    }

    #[test]
    fn init_fails_on_zero_radicand() {
        let grid = grid_2pi(16);
        let model = ac_model(grid, 1.0, 1.0, 0.0, 0.0);
        let err = init_consistent(Field::constant(grid, 1.0), &model);
        match err {
            Err(Error::NonpositiveRadicand { value, .. }) => assert!(value.abs() < 1e-12),
            other => panic!("expected radicand failure, got {other:?}"),
        }
    }

    #[test]
    fn stage_rhs_on_constant_field_matches_hand_evaluation() {
        // For phi = 1: g'(1) = -gamma0 and L_h 1 = gamma0, so
        // k = -M (gamma0 - Q gamma0 / sqrt(r)) at every node.
        let grid = grid_2pi(8);
        let (m, gamma0, c0) = (2.0, 0.5, 1.0);
        let model = ac_model(grid, m, 1.0, gamma0, c0);
        let phi = Field::constant(grid, 1.0);
        let q = 1.7;
        let r = integral_h(&model.potential().density(&phi).unwrap()) + c0;
        let expected = -m * (gamma0 - q * gamma0 / r.sqrt());
        let (k, _) = stage_rhs(&phi, q, &model).unwrap();
        for &v in k.values().iter() {
            assert!((v - expected).abs() <= 1e-13 * (1.0 + expected.abs()), "{v} vs {expected}");
        }
    }

    #[test]
    fn stage_rhs_with_zero_q_reduces_to_linear_flow() {
        let grid = grid_2pi(16);
        let model = ac_model(grid, 1.0, 1.0, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut phi = Field::zeros(grid);
        phi.values_mut().mapv_inplace(|_| rng.gen_range(-0.5..0.5));

        let (k, l) = stage_rhs(&phi, 0.0, &model).unwrap();
        let gl = apply_symbol(
            model.mobility(),
            &apply_symbol(model.linear(), &phi).unwrap(),
        )
        .unwrap();
        let mut err: f64 = 0.0;
        for (a, b) in k.values().iter().zip(gl.values().iter()) {
            err = err.max((a - b).abs());
        }
        assert!(err <= 1e-12 * (1.0 + k.max_abs()));

        // l keeps its defining inner product even though q = 0.
        let r = model.radicand(&phi).unwrap();
        let gp = model.potential().variation(&phi).unwrap();
        let expected_l = inner(&gp, &k).unwrap() / (2.0 * r.sqrt());
        assert!((l - expected_l).abs() <= 1e-15 * (1.0 + expected_l.abs()));
    }

    #[test]
    fn stage_scalar_matches_independent_summation_order() {
        let grid = grid_2pi(8);
        let model = ac_model(grid, 1.0, 1.0, 1.0, 1.0);
        let phi = Field::from_fn(grid, |x, _| x.sin());
        let q = 2.0;
        let (k, l) = stage_rhs(&phi, q, &model).unwrap();

        // Re-evaluate the defining inner product with reversed iteration.
        let r = model.radicand(&phi).unwrap();
        let gp = model.potential().variation(&phi).unwrap();
        let gp_flat: Vec<f64> = gp.values().iter().cloned().collect();
        let k_flat: Vec<f64> = k.values().iter().cloned().collect();
        let mut acc = 0.0;
        for (a, b) in gp_flat.iter().rev().zip(k_flat.iter().rev()) {
            acc += a * b;
        }
        let l2 = grid.cell_area() * acc / (2.0 * r.sqrt());
        assert!((l - l2).abs() <= 1e-14 * (1.0 + l.abs()));
    }

    #[test]
    fn denominator_is_shared_between_k_and_l() {
        let grid = grid_2pi(8);
        let model = ac_model(grid, 1.0, 1.0, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut phi = Field::zeros(grid);
        phi.values_mut().mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        let q = 1.3;
        let (k, l) = stage_rhs(&phi, q, &model).unwrap();

        let sqrt_r = model.radicand(&phi).unwrap().sqrt();
        let gp = model.potential().variation(&phi).unwrap();
        let l_recomputed = inner(&gp, &k).unwrap() / (2.0 * sqrt_r);
        assert!((l - l_recomputed).abs() <= 1e-15 * (1.0 + l.abs()));
    }

    #[test]
    fn energy_of_well_minimum_is_zero() {
        let grid = grid_2pi(16);
        let model = ac_model(grid, 1.0, 1.0, 0.0, 1.0);
        let state = SavState {
            phi: Field::constant(grid, 1.0),
            q: 1.0,
            t: 0.0,
        };
        let e = energy(&state, &model).unwrap();
        assert!(e.modified.abs() <= 1e-12);
        assert!(e.raw.abs() <= 1e-12);
    }

    #[test]
    fn consistent_state_has_matching_energies() {
        let grid = grid_2pi(16);
        let model = ac_model(grid, 1.0, 1.0, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut phi = Field::zeros(grid);
        phi.values_mut().mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        let state = init_consistent(phi, &model).unwrap();
        let e = energy(&state, &model).unwrap();
        assert!((e.modified - e.raw).abs() <= 1e-12 * (1.0 + e.raw.abs()));
    }

    #[test]
    fn energy_gap_equals_q_inconsistency() {
        let grid = grid_2pi(8);
        let model = ac_model(grid, 1.0, 1.0, 1.0, 1.0);
        let phi = Field::from_fn(grid, |x, y| 0.3 * x.sin() * y.cos());
        let q = 5.0; // deliberately inconsistent
        let state = SavState { phi: phi.clone(), q, t: 0.0 };
        let e = energy(&state, &model).unwrap();
        let g = model.potential().density(&phi).unwrap();
        let gap = q * q - (integral_h(&g) + model.c0());
        assert!(((e.modified - e.raw) - gap).abs() <= 1e-12 * (1.0 + gap.abs()));
    }

    #[test]
    fn modified_energy_is_quadratic_in_phi_and_q() {
        let grid = grid_2pi(16);
        let model = ac_model(grid, 1.0, 1.0, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut phi = Field::zeros(grid);
        phi.values_mut().mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        let q = 0.8;
        let base = energy(&SavState { phi: phi.clone(), q, t: 0.0 }, &model)
            .unwrap()
            .modified
            + model.c0();
        for alpha in [0.0, 1.0, 2.0] {
            let mut scaled = phi.clone();
            scaled.scale(alpha);
            let e = energy(
                &SavState { phi: scaled, q: alpha * q, t: 0.0 },
                &model,
            )
            .unwrap()
            .modified
                + model.c0();
            assert!(
                (e - alpha * alpha * base).abs() <= 1e-12 * (1.0 + base.abs()),
                "alpha = {alpha}: {e} vs {}",
                alpha * alpha * base
            );
        }
    }

    #[test]
    fn raw_energy_agrees_with_direct_quadrature() {
        // For phi = sin(x) with eps = 1, gamma0 = 0 the raw energy is
        // 0.5 * ||grad phi||^2 + (g, 1), evaluated here through first
        // derivatives instead of the L symbol.
        let grid = grid_2pi(32);
        let model = ac_model(grid, 1.0, 1.0, 0.0, 1.0);
        let phi = Field::from_fn(grid, |x, _| x.sin());
        let state = init_consistent(phi.clone(), &model).unwrap();
        let e = energy(&state, &model).unwrap();

        let px = apply_derivative(&phi, 1, 0).unwrap();
        let py = apply_derivative(&phi, 0, 1).unwrap();
        let grad_sq = inner(&px, &px).unwrap() + inner(&py, &py).unwrap();
        let g = model.potential().density(&phi).unwrap();
        let direct = 0.5 * grad_sq + integral_h(&g);
        assert!((e.raw - direct).abs() <= 1e-11 * (1.0 + direct.abs()));
    }

    #[test]
    fn potential_variations_are_discrete_gradients_of_the_density() {
        // Central directional difference of (g(phi + t psi), 1)_h matches
        // (dg/dphi, psi)_h for both nonlinear potentials; this pins the
        // sign and the discrete consistency of the divergence form.
        let grid = grid_2pi(16);
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let mk_field = |rng: &mut ChaCha8Rng| {
            let ax = rng.gen_range(1..3) as f64;
            let bx = rng.gen_range(1..3) as f64;
            let amp = rng.gen_range(0.2..0.6);
            Field::from_fn(grid, |x, y| amp * (ax * x).sin() * (bx * y).cos())
        };
        for potential in [
            Potential::DoubleWell { gamma0: 1.0 },
            Potential::SlopeSelection { gamma0: 1.0 },
        ] {
            let phi = mk_field(&mut rng);
            let psi = mk_field(&mut rng);
            let theta = 1e-5;
            let mut plus = phi.clone();
            plus.scaled_add(theta, &psi);
            let mut minus = phi.clone();
            minus.scaled_add(-theta, &psi);
            let diff = (integral_h(&potential.density(&plus).unwrap())
                - integral_h(&potential.density(&minus).unwrap()))
                / (2.0 * theta);
            let var = potential.variation(&phi).unwrap();
            let pairing = inner(&var, &psi).unwrap();
            assert!(
                (diff - pairing).abs() <= 1e-6 * (1.0 + pairing.abs()),
                "{potential:?}: {diff} vs {pairing}"
            );
        }
    }

    #[test]
    fn linearizers_match_directional_derivatives_of_variation() {
        let grid = grid_2pi(16);
        let phi = Field::from_fn(grid, |x, y| 0.4 * x.sin() * y.cos() + 0.2 * (2.0 * y).sin());
        let psi = Field::from_fn(grid, |x, y| 0.3 * (2.0 * x).cos() * y.sin());
        for potential in [
            Potential::Zero,
            Potential::DoubleWell { gamma0: 1.0 },
            Potential::SlopeSelection { gamma0: 1.0 },
        ] {
            let theta = 1e-6;
            let mut plus = phi.clone();
            plus.scaled_add(theta, &psi);
            let mut minus = phi.clone();
            minus.scaled_add(-theta, &psi);
            let mut diff = potential.variation(&plus).unwrap();
            diff.scaled_add(-1.0, &potential.variation(&minus).unwrap());
            diff.scale(1.0 / (2.0 * theta));
            let lin = potential.linearizer(&phi).unwrap().apply(&psi).unwrap();
            let mut err: f64 = 0.0;
            for (a, b) in diff.values().iter().zip(lin.values().iter()) {
                err = err.max((a - b).abs());
            }
            assert!(
                err <= 1e-5 * (1.0 + lin.max_abs()),
                "{potential:?}: max deviation {err}"
            );
        }
    }

    #[test]
    fn slope_selection_variation_vanishes_on_constants() {
        let grid = grid_2pi(16);
        let p = Potential::SlopeSelection { gamma0: 0.7 };
        let var = p.variation(&Field::constant(grid, 2.5)).unwrap();
        assert!(var.max_abs() <= 1e-12);
    }

    #[test]
    fn radicand_guard_trips_at_zero() {
        let grid = grid_2pi(8);
        // Double well at its minimum with C0 = 0 has radicand exactly 0.
        let ac = ac_model(grid, 1.0, 1.0, 0.0, 0.0);
        assert!(ac.radicand(&Field::constant(grid, 1.0)).is_err());
        // A constant field has slope density (0-1)^2/4 > 0, so the
        // thin-film radicand stays positive even with C0 = 0.
        let mbe = mbe_model(grid, 1.0, 0.1, 0.0, 0.0);
        assert!(mbe.radicand(&Field::constant(grid, 0.0)).is_ok());
    }

    #[test]
    fn completed_square_keeps_radicand_positive_on_coarsened_states() {
        // A +-1 mixture is exactly the regime where the naive
        // -gamma0/2 phi^2 compensation would drive (g,1)_h negative.
        let grid = grid_2pi(16);
        let model = ac_model(grid, 1.0, 1.0, 1.0, 1.0);
        let phi = Field::from_fn(grid, |x, _| if x < PI { 1.0 } else { -1.0 });
        let r = model.radicand(&phi).unwrap();
        assert!(r > 1.0, "radicand {r}");
    }

    #[test]
    fn norms_are_consistent() {
        let grid = grid_2pi(8);
        let f = Field::constant(grid, 2.0);
        assert!((norm_h(&f) - 2.0 * grid.area().sqrt()).abs() <= 1e-12);
    }
}
