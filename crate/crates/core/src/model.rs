//! Regime- and mode-dependent operators, forcing, and structural checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};
use crate::soe_kernel::SoeKernel;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    Parameter(String),
    #[error("regime {regime}: damping {gamma} does not dominate coupling {beta} x spectral radius {rho}")]
    StabilityMargin {
        regime: usize,
        gamma: f64,
        beta: f64,
        rho: f64,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Controller mode: normal, verify or mitigate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Mode {
    Normal = 0,
    Verify = 1,
    Mitigate = 2,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Normal, Mode::Verify, Mode::Mitigate];

    pub fn level(self) -> u8 {
        self as u8
    }

    pub fn from_level(level: u8) -> Option<Self> {
        match level {
            0 => Some(Mode::Normal),
            1 => Some(Mode::Verify),
            2 => Some(Mode::Mitigate),
            _ => None,
        }
    }
}

impl From<Mode> for u8 {
    fn from(m: Mode) -> u8 {
        m.level()
    }
}

impl TryFrom<u8> for Mode {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Mode::from_level(v).ok_or_else(|| format!("mode {v} is not 0, 1 or 2"))
    }
}

/// Damping and coupling of one regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeDynamics {
    pub gamma: f64,
    pub beta: f64,
}

/// Network, per-regime damping/coupling and localized periodic forcing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub adjacency: Matrix,
    /// Indexed by regime id.
    pub regimes: Vec<RegimeDynamics>,
    pub forced_node: usize,
    pub amplitude: f64,
    pub omega: f64,
}

impl NetworkSpec {
    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }

    /// Checks shapes, forcing and `γ_z > β_z ρ(W)` for every regime.
    pub fn validate(&self) -> Result<()> {
        let w = &self.adjacency;
        if !w.is_square() {
            return Err(ModelError::Parameter(format!(
                "adjacency is {}x{}",
                w.rows(),
                w.cols()
            )));
        }
        if self.forced_node >= self.n() {
            return Err(ModelError::Parameter(format!(
                "forced node {} outside 0..{}",
                self.forced_node,
                self.n()
            )));
        }
        if !self.amplitude.is_finite() || !self.omega.is_finite() {
            return Err(ModelError::Parameter("forcing must be finite".into()));
        }
        if self.regimes.is_empty() {
            return Err(ModelError::Parameter("no regimes".into()));
        }
        let rho = linalg::spectral_radius(w)?;
        for (regime, d) in self.regimes.iter().enumerate() {
            if !(d.gamma > 0.0 && d.beta >= 0.0 && d.gamma.is_finite() && d.beta.is_finite()) {
                return Err(ModelError::Parameter(format!(
                    "regime {regime}: need gamma > 0 and beta >= 0"
                )));
            }
            if d.gamma <= d.beta * rho {
                return Err(ModelError::StabilityMargin {
                    regime,
                    gamma: d.gamma,
                    beta: d.beta,
                    rho,
                });
            }
        }
        Ok(())
    }
}

/// Parameters of the verify and mitigate variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeDesign {
    /// Memory gain multiplier in verify mode.
    pub verify_gain: f64,
    /// Extra damping in mitigate mode.
    pub mitigate_damping: f64,
    /// Extra memory decay in mitigate mode.
    pub mitigate_decay: f64,
}

impl ModeDesign {
    pub fn validate(&self) -> Result<()> {
        if !(self.verify_gain > 0.0 && self.verify_gain < 1.0) {
            return Err(ModelError::Parameter(format!(
                "verify gain {} outside (0, 1)",
                self.verify_gain
            )));
        }
        if !(self.mitigate_damping >= 0.0 && self.mitigate_decay > 0.0) {
            return Err(ModelError::Parameter(
                "mitigate damping must be nonnegative and decay positive".into(),
            ));
        }
        Ok(())
    }
}

/// `B_z = −γ_z I + β_z W`.
pub fn build_instant_operator(spec: &NetworkSpec, regime: usize) -> Result<Matrix> {
    let d = spec
        .regimes
        .get(regime)
        .ok_or_else(|| ModelError::Parameter(format!("unknown regime {regime}")))?;
    Ok(spec.adjacency.scaled(d.beta).shifted(-d.gamma)?)
}

/// Sparse row storage of the top-left block.
#[derive(Debug, Clone, PartialEq)]
struct Csr {
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_dense(m: &Matrix) -> Self {
        let mut row_start = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_start.push(cols.len());
        }
        Self {
            row_start,
            cols,
            vals,
        }
    }
}

/// Lifted operator `A_i^(m)` with cached susceptibility and top symmetric direction.
#[derive(Debug, Clone)]
pub struct LiftedOperator {
    pub regime: usize,
    pub mode: Mode,
    pub matrix: Matrix,
    pub susceptibility: f64,
    pub top_direction: Vec<f64>,
    n: usize,
    block: Csr,
    weights: Vec<f64>,
    rates: Vec<f64>,
}

impl LiftedOperator {
    /// Wraps an arbitrary square matrix as a memoryless operator.
    pub fn from_matrix(a: Matrix, regime: usize, mode: Mode) -> Result<Self> {
        if !a.is_square() {
            return Err(ModelError::Parameter("operator must be square".into()));
        }
        let (susceptibility, top_direction) = linalg::top_symmetric_eigpair(&a)?;
        Ok(Self {
            regime,
            mode,
            n: a.rows(),
            block: Csr::from_dense(&a),
            weights: Vec::new(),
            rates: Vec::new(),
            matrix: a,
            susceptibility,
            top_direction,
        })
    }

    /// Node count `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of memory blocks `K`.
    pub fn k(&self) -> usize {
        self.rates.len()
    }

    /// Lifted dimension `(K+1) n`.
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    /// `out = A x`, exploiting the block structure.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let (xs, ys) = x.split_at(n);
        let (out_x, out_y) = out.split_at_mut(n);
        for i in 0..n {
            let mut acc = 0.0;
            for p in self.block.row_start[i]..self.block.row_start[i + 1] {
                acc += self.block.vals[p] * xs[self.block.cols[p]];
            }
            for (k, &w) in self.weights.iter().enumerate() {
                acc += w * ys[k * n + i];
            }
            out_x[i] = acc;
        }
        for (k, &r) in self.rates.iter().enumerate() {
            let yk = &ys[k * n..(k + 1) * n];
            let ok = &mut out_y[k * n..(k + 1) * n];
            for i in 0..n {
                ok[i] = xs[i] - r * yk[i];
            }
        }
    }
}

/// Assembles the lifted block matrix for `mode`.
///
/// Mode 0 uses `(B, w, r)`; mode 1 scales the memory weights by the verify
/// gain; mode 2 shifts `B` by `−δ I` and the rates by `Δ_r`.
pub fn assemble_lifted(
    b: &Matrix,
    soe: &SoeKernel,
    design: &ModeDesign,
    mode: Mode,
    regime: usize,
) -> Result<LiftedOperator> {
    if !b.is_square() {
        return Err(ModelError::Parameter(format!(
            "instant operator is {}x{}",
            b.rows(),
            b.cols()
        )));
    }
    if soe.weights.len() != soe.rates.len() {
        return Err(ModelError::Parameter("kernel weights and rates differ in length".into()));
    }
    let n = b.rows();
    let k = soe.rates.len();
    let (block, weights, rates) = match mode {
        Mode::Normal => (b.clone(), soe.weights.clone(), soe.rates.clone()),
        Mode::Verify => (
            b.clone(),
            soe.weights.iter().map(|w| design.verify_gain * w).collect(),
            soe.rates.clone(),
        ),
        Mode::Mitigate => (
            b.shifted(-design.mitigate_damping)?,
            soe.weights.clone(),
            soe.rates.iter().map(|r| r + design.mitigate_decay).collect(),
        ),
    };
    let d = (k + 1) * n;
    let mut a = Matrix::zeros(d, d);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = block[(i, j)];
        }
    }
    for kk in 0..k {
        let off = (kk + 1) * n;
        for i in 0..n {
            a[(i, off + i)] = weights[kk];
            a[(off + i, i)] = 1.0;
            a[(off + i, off + i)] = -rates[kk];
        }
    }
    let (susceptibility, top_direction) = linalg::top_symmetric_eigpair(&a)?;
    Ok(LiftedOperator {
        regime,
        mode,
        matrix: a,
        susceptibility,
        top_direction,
        n,
        block: Csr::from_dense(&block),
        weights,
        rates,
    })
}

/// Localized forcing `c + A sin(ω t)` on one node (`c = 0` in all presets).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forcing {
    pub node: usize,
    pub amplitude: f64,
    pub omega: f64,
    #[serde(default)]
    pub bias: f64,
}

impl Forcing {
    pub fn from_spec(spec: &NetworkSpec) -> Self {
        Self {
            node: spec.forced_node,
            amplitude: spec.amplitude,
            omega: spec.omega,
            bias: 0.0,
        }
    }

    /// Forcing that is identically zero.
    pub fn zero() -> Self {
        Self {
            node: 0,
            amplitude: 0.0,
            omega: 0.0,
            bias: 0.0,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.bias + self.amplitude * (self.omega * t).sin()
    }

    /// `‖f̃(t)‖₂`.
    pub fn norm(&self, t: f64) -> f64 {
        self.value(t).abs()
    }

    /// Upper bound on `sup_t ‖f̃(t)‖₂` (exact for the pure sinusoid).
    pub fn sup_norm(&self) -> f64 {
        let wave = if self.omega == 0.0 { 0.0 } else { self.amplitude.abs() };
        self.bias.abs() + wave
    }
}

/// Lifted forcing vector: the only nonzero entry is the forced node of the x-block.
pub fn forcing_eval(forcing: &Forcing, dim: usize, t: f64) -> Vec<f64> {
    let mut f = vec![0.0; dim];
    f[forcing.node] = forcing.value(t);
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionCheck {
    pub certified: bool,
    /// `−μ₂` when certified.
    pub kappa: Option<f64>,
}

/// Certifies `μ₂(A_U^(2)) ≤ −κ < 0`.
pub fn check_mitigation_contraction(op: &LiftedOperator) -> ContractionCheck {
    if op.susceptibility < 0.0 {
        ContractionCheck {
            certified: true,
            kappa: Some(-op.susceptibility),
        }
    } else {
        ContractionCheck {
            certified: false,
            kappa: None,
        }
    }
}

/// All `(regime, mode)` operators of one scenario.
#[derive(Debug, Clone)]
pub struct OperatorTable {
    ops: Vec<[LiftedOperator; 3]>,
    /// `max ‖A_i^(m)‖₂` over the table.
    pub a_star: f64,
}

impl OperatorTable {
    /// Builds every operator. A regime listed in `overrides` uses the given
    /// design's mitigate construction for all of its modes (a permanently
    /// damped variant).
    pub fn build(
        spec: &NetworkSpec,
        soe: &SoeKernel,
        design: &ModeDesign,
        overrides: &[(usize, ModeDesign)],
    ) -> Result<Self> {
        let mut ops = Vec::with_capacity(spec.regimes.len());
        let mut a_star = 0.0f64;
        for regime in 0..spec.regimes.len() {
            let b = build_instant_operator(spec, regime)?;
            let built: Vec<LiftedOperator> = Mode::ALL
                .iter()
                .map(|&mode| match overrides.iter().find(|(r, _)| *r == regime) {
                    Some((_, safe)) => {
                        let mut op = assemble_lifted(&b, soe, safe, Mode::Mitigate, regime)?;
                        op.mode = mode;
                        Ok(op)
                    }
                    None => assemble_lifted(&b, soe, design, mode, regime),
                })
                .collect::<Result<_>>()?;
            for op in &built {
                a_star = a_star.max(linalg::operator_norm_2(&op.matrix)?);
            }
            let [m0, m1, m2]: [LiftedOperator; 3] = built
                .try_into()
                .map_err(|_| ModelError::Parameter("mode count".into()))?;
            ops.push([m0, m1, m2]);
        }
        Ok(Self { ops, a_star })
    }

    /// One constant operator used for every regime and mode.
    pub fn constant(a: Matrix, regimes: usize) -> Result<Self> {
        let mut ops = Vec::with_capacity(regimes);
        for regime in 0..regimes {
            let make = |mode| LiftedOperator::from_matrix(a.clone(), regime, mode);
            ops.push([make(Mode::Normal)?, make(Mode::Verify)?, make(Mode::Mitigate)?]);
        }
        Self::from_operators(ops)
    }

    /// Table from explicit operators, indexed `[regime][mode]`.
    pub fn from_operators(ops: Vec<[LiftedOperator; 3]>) -> Result<Self> {
        let mut a_star = 0.0f64;
        for op in ops.iter().flatten() {
            a_star = a_star.max(linalg::operator_norm_2(&op.matrix)?);
        }
        Ok(Self { ops, a_star })
    }

    pub fn get(&self, regime: usize, mode: Mode) -> &LiftedOperator {
        &self.ops[regime][mode as usize]
    }

    pub fn regimes(&self) -> usize {
        self.ops.len()
    }

    pub fn dim(&self) -> usize {
        self.ops[0][0].dim()
    }

    pub fn n(&self) -> usize {
        self.ops[0][0].n()
    }

    pub fn k(&self) -> usize {
        self.ops[0][0].k()
    }

    /// Adds `shift` to every cached susceptibility (fault injection for audit tests).
    pub fn corrupt_susceptibilities(&mut self, shift: f64) {
        for op in self.ops.iter_mut().flatten() {
            op.susceptibility += shift;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_node() -> (Matrix, SoeKernel, ModeDesign) {
        (
            Matrix::diagonal(&[-2.0]),
            SoeKernel::from_parts(vec![0.5], vec![1.0]).unwrap(),
            ModeDesign {
                verify_gain: 0.5,
                mitigate_damping: 1.0,
                mitigate_decay: 2.0,
            },
        )
    }

    fn spec(w: Matrix, gamma: f64, beta: f64) -> NetworkSpec {
        NetworkSpec {
            adjacency: w,
            regimes: vec![RegimeDynamics { gamma, beta }],
            forced_node: 0,
            amplitude: 1.0,
            omega: 1.0,
        }
    }

    #[test]
    fn instant_operator_examples() {
        let w = Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        let b = build_instant_operator(&spec(w.clone(), 1.0, 0.0), 0).unwrap();
        assert_eq!(b, Matrix::identity(2).scaled(-1.0));
        let b = build_instant_operator(&spec(w, 2.0, 0.5), 0).unwrap();
        assert_eq!(b, Matrix::from_rows(&[&[-2.0, 0.5], &[0.0, -2.0]]).unwrap());
        let swap = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        assert!(matches!(
            spec(swap, 1.0, 2.0).validate(),
            Err(ModelError::StabilityMargin { .. })
        ));
        assert!(build_instant_operator(&spec(Matrix::identity(2), 1.0, 0.0), 3).is_err());
    }

    #[test]
    fn lifted_layout_examples() {
        let (b, soe, design) = one_node();
        let a0 = assemble_lifted(&b, &soe, &design, Mode::Normal, 0).unwrap();
        assert_eq!(a0.matrix, Matrix::from_rows(&[&[-2.0, 0.5], &[1.0, -1.0]]).unwrap());
        let a2 = assemble_lifted(&b, &soe, &design, Mode::Mitigate, 0).unwrap();
        assert_eq!(a2.matrix, Matrix::from_rows(&[&[-3.0, 0.5], &[1.0, -3.0]]).unwrap());
        let a1 = assemble_lifted(&b, &soe, &design, Mode::Verify, 0).unwrap();
        assert_eq!(a1.matrix, Matrix::from_rows(&[&[-2.0, 0.25], &[1.0, -1.0]]).unwrap());
    }

    #[test]
    fn mitigate_shift_with_equal_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 4;
        let w = Matrix::new(n, n, (0..n * n).map(|_| rng.random_range(0.0..0.5)).collect()).unwrap();
        let b = w.shifted(-2.0).unwrap();
        let soe = SoeKernel::from_parts(vec![0.3, 1.2, 0.7], vec![0.5, 2.0, 6.0]).unwrap();
        let delta = 0.8;
        let design = ModeDesign {
            verify_gain: 0.5,
            mitigate_damping: delta,
            mitigate_decay: delta,
        };
        let a0 = assemble_lifted(&b, &soe, &design, Mode::Normal, 0).unwrap();
        let a2 = assemble_lifted(&b, &soe, &design, Mode::Mitigate, 0).unwrap();
        assert_eq!(a2.matrix, a0.matrix.shifted(-delta).unwrap());
        assert!((a2.susceptibility - (a0.susceptibility - delta)).abs() <= 1e-12);
    }

    #[test]
    fn structured_apply_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 5;
        let w = Matrix::new(n, n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let soe = SoeKernel::from_parts(vec![0.3, 0.0, 2.0], vec![0.5, 1.0, 4.0]).unwrap();
        let design = ModeDesign {
            verify_gain: 0.3,
            mitigate_damping: 0.4,
            mitigate_decay: 1.1,
        };
        for mode in Mode::ALL {
            let op = assemble_lifted(&w, &soe, &design, mode, 0).unwrap();
            let x: Vec<f64> = (0..op.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dense = op.matrix.matvec(&x).unwrap();
            let mut fast = vec![0.0; op.dim()];
            op.apply(&x, &mut fast);
            for (a, b) in dense.iter().zip(&fast) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn memory_blocks_integrate_the_node_state() {
        let (b, _, design) = one_node();
        let soe = SoeKernel::from_parts(vec![0.5, 0.1], vec![1.0, 3.0]).unwrap().scaled(1.0);
        let op = assemble_lifted(&b, &soe, &design, Mode::Normal, 0).unwrap();
        assert_eq!(op.dim(), 3);
        let mut out = vec![0.0; 3];
        op.apply(&[2.5, 0.0, 0.0], &mut out);
        assert_eq!(&out[1..], &[2.5, 2.5]);
    }

    #[test]
    fn modes_converge_to_normal() {
        let (b, soe, _) = one_node();
        let a0 = assemble_lifted(&b, &soe, &ModeDesign { verify_gain: 0.5, mitigate_damping: 1.0, mitigate_decay: 1.0 }, Mode::Normal, 0).unwrap();
        let near = ModeDesign {
            verify_gain: 1.0 - 1e-9,
            mitigate_damping: 1e-9,
            mitigate_decay: 1e-9,
        };
        for mode in [Mode::Verify, Mode::Mitigate] {
            let a = assemble_lifted(&b, &soe, &near, mode, 0).unwrap();
            assert!(a.matrix.sub(&a0.matrix).unwrap().inf_norm() < 1e-8);
        }
    }

    #[test]
    fn forcing_examples() {
        let f = Forcing {
            node: 1,
            amplitude: 2.0,
            omega: 3.0,
            bias: 0.0,
        };
        assert!(forcing_eval(&f, 4, 0.0).iter().all(|&v| v == 0.0));
        let peak = forcing_eval(&f, 4, std::f64::consts::FRAC_PI_2 / 3.0);
        assert!((peak[1] - 2.0).abs() < 1e-15);
        assert!(peak.iter().enumerate().all(|(i, &v)| i == 1 || v == 0.0));
        for t in [0.1, 0.7, 5.0] {
            let v = forcing_eval(&f, 4, t);
            assert!((linalg::norm2(&v) - 2.0 * (3.0 * t).sin().abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn contraction_check_examples() {
        let (b, soe, design) = one_node();
        let mut op = assemble_lifted(&b, &soe, &design, Mode::Mitigate, 0).unwrap();
        op.susceptibility = -0.4;
        assert_eq!(
            check_mitigation_contraction(&op),
            ContractionCheck {
                certified: true,
                kappa: Some(0.4)
            }
        );
        op.susceptibility = 0.1;
        assert!(!check_mitigation_contraction(&op).certified);
        let empty = SoeKernel::empty();
        let scalar = assemble_lifted(&Matrix::diagonal(&[-3.0]), &empty, &design, Mode::Normal, 0).unwrap();
        assert_eq!(check_mitigation_contraction(&scalar).kappa, Some(3.0));
    }

    #[test]
    fn table_norm_bound_and_override() {
        let w = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let mut s = spec(w, 2.0, 0.5);
        s.regimes.push(RegimeDynamics { gamma: 1.0, beta: 0.5 });
        let soe = SoeKernel::from_parts(vec![0.5, 1.0], vec![0.5, 2.0]).unwrap();
        let design = ModeDesign {
            verify_gain: 0.5,
            mitigate_damping: 0.5,
            mitigate_decay: 0.5,
        };
        let safe = ModeDesign {
            mitigate_damping: 3.0,
            ..design
        };
        let table = OperatorTable::build(&s, &soe, &design, &[(1, safe)]).unwrap();
        for r in 0..2 {
            for m in Mode::ALL {
                let op = table.get(r, m);
                assert!(linalg::operator_norm_2(&op.matrix).unwrap() <= table.a_star);
                assert_eq!(op.mode, m);
            }
        }
        let b1 = build_instant_operator(&s, 1).unwrap();
        let expect = assemble_lifted(&b1, &soe, &safe, Mode::Mitigate, 1).unwrap();
        assert_eq!(table.get(1, Mode::Normal).matrix, expect.matrix);
    }
}
