//! Uniformly elliptic operators `F(A, x)` and the transforms `F_*`, `F_A`, `F + s`.
//!
//! Sign convention: operators are nonincreasing in the matrix argument, so the
//! Laplacian appears as `-tr(A)`. A supersolution satisfies `F(D^2 u, x) >= 0`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::rng::SplitMix64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PucciSign {
    Plus,
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BellmanMode {
    Min,
    Max,
}

impl BellmanMode {
    pub fn flipped(self) -> Self {
        match self {
            BellmanMode::Min => BellmanMode::Max,
            BellmanMode::Max => BellmanMode::Min,
        }
    }
}

/// Pucci extremal operators:
/// `P+(A) = -tr(A_+) + Λ tr(A_-)`, `P-(A) = -Λ tr(A_+) + tr(A_-)`.
pub fn pucci(sign: PucciSign, a: &SymMatrix, lambda: f64) -> Result<f64> {
    if !a.is_finite() || !lambda.is_finite() {
        return Err(Error::InvalidInput("non-finite Pucci argument".into()));
    }
    if lambda <= 1.0 {
        return Err(Error::InvalidInput(format!(
            "Pucci ellipticity must exceed 1, got {lambda}"
        )));
    }
    Ok(pucci_unchecked(sign, a, lambda))
}

pub(crate) fn pucci_unchecked(sign: PucciSign, a: &SymMatrix, lambda: f64) -> f64 {
    let (pos, neg) = a.trace_parts();
    match sign {
        PucciSign::Plus => -pos + lambda * neg,
        PucciSign::Minus => -lambda * pos + neg,
    }
}

/// `A ↦ -tr(a A) + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearOp {
    pub a: SymMatrix,
    pub c: f64,
}

impl LinearOp {
    pub fn new(a: SymMatrix, c: f64) -> Self {
        LinearOp { a, c }
    }

    #[inline]
    pub fn eval(&self, m: &SymMatrix) -> f64 {
        -self.a.dot(m) + self.c
    }
}

/// One tile of an environment: an x-independent operator.
#[derive(Clone, Debug, PartialEq)]
pub enum LocalOperator {
    Linear(LinearOp),
    Bellman {
        children: Vec<LinearOp>,
        mode: BellmanMode,
    },
    Pucci {
        sign: PucciSign,
        lambda: f64,
        c: f64,
    },
}

impl LocalOperator {
    pub fn linear(a: SymMatrix, c: f64) -> Self {
        LocalOperator::Linear(LinearOp::new(a, c))
    }

    /// `-s tr(A) + c` in dimension `dim`.
    pub fn scalar(dim: usize, s: f64, c: f64) -> Self {
        Self::linear(SymMatrix::scalar(dim, s), c)
    }

    pub fn bellman(children: Vec<LinearOp>, mode: BellmanMode) -> Result<Self> {
        if children.is_empty() {
            return Err(Error::InvalidInput("Bellman operator needs at least one control".into()));
        }
        let d = children[0].a.dim();
        if children.iter().any(|c| c.a.dim() != d) {
            return Err(Error::InvalidInput("Bellman controls of mixed dimension".into()));
        }
        Ok(LocalOperator::Bellman { children, mode })
    }

    pub fn pucci(sign: PucciSign, lambda: f64, c: f64) -> Self {
        LocalOperator::Pucci { sign, lambda, c }
    }

    /// Dimension, or `None` for Pucci operators (which are dimension-agnostic).
    pub fn dim(&self) -> Option<usize> {
        match self {
            LocalOperator::Linear(l) => Some(l.a.dim()),
            LocalOperator::Bellman { children, .. } => Some(children[0].a.dim()),
            LocalOperator::Pucci { .. } => None,
        }
    }

    pub fn eval(&self, m: &SymMatrix) -> f64 {
        match self {
            LocalOperator::Linear(l) => l.eval(m),
            LocalOperator::Bellman { children, mode } => {
                let vals = children.iter().map(|c| c.eval(m));
                match mode {
                    BellmanMode::Min => vals.fold(f64::INFINITY, f64::min),
                    BellmanMode::Max => vals.fold(f64::NEG_INFINITY, f64::max),
                }
            }
            LocalOperator::Pucci { sign, lambda, c } => pucci_unchecked(*sign, m, *lambda) + c,
        }
    }

    /// Linear controls (all of them for Bellman, the single one for Linear).
    pub fn linear_parts(&self) -> Vec<&LinearOp> {
        match self {
            LocalOperator::Linear(l) => vec![l],
            LocalOperator::Bellman { children, .. } => children.iter().collect(),
            LocalOperator::Pucci { .. } => Vec::new(),
        }
    }

    /// Smallest Λ for which the operator satisfies the Pucci sandwich, provided
    /// every linear control has spectrum in `[1, ∞)`; `None` otherwise.
    pub fn natural_ellipticity(&self) -> Option<f64> {
        match self {
            LocalOperator::Pucci { lambda, .. } => Some(*lambda),
            _ => {
                let mut lam: f64 = 1.0;
                for l in self.linear_parts() {
                    let e = l.a.eigen();
                    let lo = e.values.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = e.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    if lo < 1.0 - 1e-12 {
                        return None;
                    }
                    lam = lam.max(hi);
                }
                Some(lam)
            }
        }
    }

    /// Exact-algebra ellipticity check: linear controls have spectrum in `[1, Λ]`.
    pub fn check_ellipticity(&self, lambda: f64) -> Result<()> {
        match self.natural_ellipticity() {
            Some(l) if l <= lambda * (1.0 + 1e-12) => Ok(()),
            Some(l) => Err(Error::InvalidInput(format!(
                "operator needs ellipticity {l}, exceeds Λ = {lambda}"
            ))),
            None => Err(Error::InvalidInput(
                "a linear control has an eigenvalue below 1".into(),
            )),
        }
    }
}

/// The composed transform `(T F)(A, x) = σ F(σ A + B, x) + s`.
///
/// Every finite chain of stars, matrix translations and shifts reduces to this
/// form, so chains are stored in closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct Transform {
    pub sign: f64,
    pub offset: Option<SymMatrix>,
    pub shift: f64,
}

impl Default for Transform {
    fn default() -> Self {
        Transform {
            sign: 1.0,
            offset: None,
            shift: 0.0,
        }
    }
}

impl Transform {
    pub fn is_identity(&self) -> bool {
        self.sign == 1.0 && self.offset.is_none() && self.shift == 0.0
    }

    /// `F ↦ F_* = -F(-·)`.
    pub fn star(&self) -> Transform {
        Transform {
            sign: -self.sign,
            offset: self.offset.clone(),
            shift: -self.shift,
        }
    }

    /// `F ↦ F_{A0} = F(A0 + ·)`.
    pub fn translate(&self, a0: &SymMatrix) -> Transform {
        let add = a0.scale(self.sign);
        let offset = match &self.offset {
            Some(b) => &add + b,
            None => add,
        };
        Transform {
            sign: self.sign,
            offset: Some(offset),
            shift: self.shift,
        }
    }

    pub fn shift(&self, s: f64) -> Transform {
        Transform {
            sign: self.sign,
            offset: self.offset.clone(),
            shift: self.shift + s,
        }
    }

    #[inline]
    pub fn apply(&self, op: &LocalOperator, m: &SymMatrix) -> f64 {
        let arg = match &self.offset {
            Some(b) => &m.scale(self.sign) + b,
            None => m.scale(self.sign),
        };
        self.sign * op.eval(&arg) + self.shift
    }

    /// The transformed Bellman/linear operator in explicit form:
    /// every control `(a, c)` becomes `(a, σ (c - tr(a B)) + s)`, and the
    /// min/max mode flips when σ = -1. `None` for Pucci operators.
    pub fn resolve_controls(&self, op: &LocalOperator) -> Option<(Vec<LinearOp>, BellmanMode)> {
        let mode = match op {
            LocalOperator::Linear(_) => BellmanMode::Min,
            LocalOperator::Bellman { mode, .. } => *mode,
            LocalOperator::Pucci { .. } => return None,
        };
        let mode = if self.sign < 0.0 { mode.flipped() } else { mode };
        let controls = op
            .linear_parts()
            .into_iter()
            .map(|l| {
                let tb = self.offset.as_ref().map_or(0.0, |b| l.a.dot(b));
                LinearOp::new(l.a.clone(), self.sign * (l.c - tb) + self.shift)
            })
            .collect();
        Some((controls, mode))
    }
}

/// A tile map: lattice cell → operator. Implemented by environment realizations.
pub trait TileLookup: Send + Sync + std::fmt::Debug {
    /// Index into [`TileLookup::tiles`] of the operator on `cell`.
    fn tile_index(&self, cell: [i64; 2]) -> Option<usize>;
    fn tiles(&self) -> &[LocalOperator];
    fn lambda(&self) -> f64;
    /// Cells covered, as `(lo, size)`; `None` when unbounded.
    fn cell_window(&self) -> Option<([i64; 2], [usize; 2])>;
}

#[derive(Clone, Debug)]
enum FieldBase {
    Constant { op: Arc<LocalOperator>, lambda: f64 },
    Tiled(Arc<dyn TileLookup>),
}

/// A lattice cell index for a point: the level-0 triadic cube containing it.
/// Points within rounding distance of a cell edge go to the upper cell, so
/// grid nodes laid on edges are assigned consistently.
#[inline]
pub fn cell_of(x: [f64; 2]) -> [i64; 2] {
    let snap = |t: f64| {
        let t = t + 0.5;
        let r = t.round();
        if (t - r).abs() <= 1e-9 * (1.0 + r.abs()) {
            r as i64
        } else {
            t.floor() as i64
        }
    };
    [snap(x[0]), snap(x[1])]
}

/// An operator field `x ↦ F(·, x)` with lazily composed transforms.
#[derive(Clone, Debug)]
pub struct OperatorField {
    base: FieldBase,
    transform: Transform,
    /// Microscopic scale ε: the field is evaluated at `x / ε`.
    eps: f64,
}

/// The operator at one point, with the field's transform attached.
#[derive(Clone, Copy, Debug)]
pub struct TransformedOp<'a> {
    pub op: &'a LocalOperator,
    pub transform: &'a Transform,
}

impl TransformedOp<'_> {
    pub fn eval(&self, m: &SymMatrix) -> f64 {
        self.transform.apply(self.op, m)
    }

    pub fn controls(&self) -> Option<(Vec<LinearOp>, BellmanMode)> {
        self.transform.resolve_controls(self.op)
    }
}

impl OperatorField {
    pub fn constant(op: LocalOperator) -> Self {
        let lambda = op.natural_ellipticity().unwrap_or(f64::INFINITY);
        Self::constant_with_lambda(op, lambda)
    }

    pub fn constant_with_lambda(op: LocalOperator, lambda: f64) -> Self {
        OperatorField {
            base: FieldBase::Constant {
                op: Arc::new(op),
                lambda,
            },
            transform: Transform::default(),
            eps: 1.0,
        }
    }

    pub fn tiled(lookup: Arc<dyn TileLookup>) -> Self {
        OperatorField {
            base: FieldBase::Tiled(lookup),
            transform: Transform::default(),
            eps: 1.0,
        }
    }

    pub fn star(&self) -> Self {
        OperatorField {
            transform: self.transform.star(),
            ..self.clone()
        }
    }

    pub fn translate(&self, a0: &SymMatrix) -> Self {
        OperatorField {
            transform: self.transform.translate(a0),
            ..self.clone()
        }
    }

    pub fn shift(&self, s: f64) -> Self {
        OperatorField {
            transform: self.transform.shift(s),
            ..self.clone()
        }
    }

    /// `x ↦ F(·, x / eps)`.
    pub fn rescaled(&self, eps: f64) -> Self {
        assert!(eps > 0.0);
        OperatorField {
            eps,
            ..self.clone()
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    pub fn lambda(&self) -> f64 {
        match &self.base {
            FieldBase::Constant { lambda, .. } => *lambda,
            FieldBase::Tiled(t) => t.lambda(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.base, FieldBase::Constant { .. })
    }

    /// All base operators the field can return.
    pub fn base_tiles(&self) -> Vec<&LocalOperator> {
        match &self.base {
            FieldBase::Constant { op, .. } => vec![op.as_ref()],
            FieldBase::Tiled(t) => t.tiles().iter().collect(),
        }
    }

    /// Cell index of `x` (in microscopic units).
    pub fn cell(&self, x: [f64; 2]) -> [i64; 2] {
        cell_of([x[0] / self.eps, x[1] / self.eps])
    }

    /// Index of the base tile at `x` (0 for constant fields).
    pub fn tile_id(&self, x: [f64; 2]) -> Result<usize> {
        match &self.base {
            FieldBase::Constant { .. } => Ok(0),
            FieldBase::Tiled(t) => t
                .tile_index(self.cell(x))
                .ok_or(Error::OutOfWindow { x: x[0], y: x[1] }),
        }
    }

    /// Index of the base tile on lattice cell `cell`.
    pub fn tile_id_at_cell(&self, cell: [i64; 2]) -> Option<usize> {
        match &self.base {
            FieldBase::Constant { .. } => Some(0),
            FieldBase::Tiled(t) => t.tile_index(cell),
        }
    }

    pub fn base_tile(&self, id: usize) -> &LocalOperator {
        match &self.base {
            FieldBase::Constant { op, .. } => op,
            FieldBase::Tiled(t) => &t.tiles()[id],
        }
    }

    /// The transformed operator for a base tile index.
    pub fn tile_op(&self, id: usize) -> TransformedOp<'_> {
        TransformedOp {
            op: self.base_tile(id),
            transform: &self.transform,
        }
    }

    pub fn local(&self, x: [f64; 2]) -> Result<TransformedOp<'_>> {
        Ok(self.tile_op(self.tile_id(x)?))
    }

    pub fn eval(&self, a: &SymMatrix, x: [f64; 2]) -> Result<f64> {
        if !a.is_finite() {
            return Err(Error::InvalidInput("non-finite matrix".into()));
        }
        Ok(self.local(x)?.eval(a))
    }

    /// Bounding box of the realization window in macroscopic coordinates.
    pub fn window(&self) -> Option<([f64; 2], [f64; 2])> {
        match &self.base {
            FieldBase::Constant { .. } => None,
            FieldBase::Tiled(t) => t.cell_window().map(|(lo, size)| {
                let a = [
                    (lo[0] as f64 - 0.5) * self.eps,
                    (lo[1] as f64 - 0.5) * self.eps,
                ];
                let b = [
                    (lo[0] as f64 + size[0] as f64 - 0.5) * self.eps,
                    (lo[1] as f64 + size[1] as f64 - 0.5) * self.eps,
                ];
                (a, b)
            }),
        }
    }

    /// Dimension of the matrix argument (2 for tiled fields).
    pub fn dim(&self) -> usize {
        match &self.base {
            FieldBase::Constant { op, .. } => op.dim().unwrap_or(2),
            FieldBase::Tiled(t) => t.tiles().iter().find_map(|o| o.dim()).unwrap_or(2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EllipticityReport {
    pub max_violation: f64,
    pub samples: usize,
}

fn random_sym(rng: &mut SplitMix64, dim: usize, scale: f64) -> SymMatrix {
    let mut m = SymMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            m.set(i, j, scale * rng.normal());
        }
    }
    m
}

/// Largest violation of `P-(A-B) <= F(A,x) - F(B,x) <= P+(A-B)` over random
/// `(A, B, x)` plus rank-one probes along the eigendirections of every linear
/// control (where a spectrum outside `[1, Λ]` shows up first).
pub fn ellipticity_report(field: &OperatorField, n_samples: usize, seed: u64) -> EllipticityReport {
    let n_samples = n_samples.max(1);
    let lambda = field.lambda();
    let dim = field.dim();
    let mut rng = SplitMix64::new(seed);
    let window = field.window();
    let sample_x = |rng: &mut SplitMix64| match window {
        Some((lo, hi)) => [
            rng.uniform(lo[0], hi[0] - 1e-9),
            rng.uniform(lo[1], hi[1] - 1e-9),
        ],
        None => [rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)],
    };
    let violation = |op: TransformedOp<'_>, a: &SymMatrix, b: &SymMatrix| -> f64 {
        let diff = op.eval(a) - op.eval(b);
        let dm = a - b;
        let lo = pucci_unchecked(PucciSign::Minus, &dm, lambda);
        let hi = pucci_unchecked(PucciSign::Plus, &dm, lambda);
        let scale = 1.0 + dm.max_abs_entry();
        ((lo - diff).max(diff - hi).max(0.0)) / scale
    };
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for _ in 0..n_samples {
        let x = sample_x(&mut rng);
        let Ok(op) = field.local(x) else { continue };
        let a = random_sym(&mut rng, dim, 2.0);
        let b = random_sym(&mut rng, dim, 2.0);
        worst = worst.max(violation(op, &a, &b));
        count += 1;
    }
    // rank-one probes on every tile
    let tiles = field.base_tiles();
    for (id, tile) in tiles.iter().enumerate() {
        let op = field.tile_op(id);
        for lin in tile.linear_parts() {
            let e = lin.a.eigen();
            for v in &e.vectors {
                let r1 = SymMatrix::outer(v);
                for t in [1.0, -1.0] {
                    let b = random_sym(&mut rng, dim, 1.0);
                    let a = &b + &r1.scale(t);
                    worst = worst.max(violation(op, &a, &b));
                    count += 1;
                }
            }
        }
    }
    EllipticityReport {
        max_violation: worst,
        samples: count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn i2() -> SymMatrix {
        SymMatrix::identity(2)
    }

    #[test]
    fn pucci_examples() {
        assert_eq!(pucci(PucciSign::Plus, &i2(), 2.0).unwrap(), -2.0);
        assert_eq!(pucci(PucciSign::Plus, &SymMatrix::diag(&[1.0, -1.0]), 2.0).unwrap(), 1.0);
        assert_eq!(pucci(PucciSign::Minus, &i2(), 2.0).unwrap(), -4.0);
        for s in [PucciSign::Plus, PucciSign::Minus] {
            assert_eq!(pucci(s, &SymMatrix::zeros(2), 3.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn pucci_rejects_non_finite() {
        let bad = SymMatrix::new2(f64::NAN, 0.0, 1.0);
        assert!(matches!(pucci(PucciSign::Plus, &bad, 2.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pucci_duality() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..200 {
            let a = random_sym(&mut rng, 2, 3.0);
            let p = pucci(PucciSign::Minus, &a, 2.5).unwrap();
            let q = -pucci(PucciSign::Plus, &-&a, 2.5).unwrap();
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_examples() {
        let f = OperatorField::constant(LocalOperator::scalar(2, 1.0, 1.0));
        assert_eq!(f.eval(&i2(), [0.3, -7.0]).unwrap(), -1.0);

        let b = LocalOperator::bellman(
            vec![
                LinearOp::new(i2(), 0.0),
                LinearOp::new(i2().scale(2.0), 0.0),
            ],
            BellmanMode::Min,
        )
        .unwrap();
        let f = OperatorField::constant(b);
        assert_eq!(f.eval(&SymMatrix::diag(&[1.0, 0.0]), [0.0, 0.0]).unwrap(), -2.0);

        let f = OperatorField::constant(LocalOperator::scalar(2, 1.0, 1.0)).star();
        assert_eq!(f.eval(&SymMatrix::zeros(2), [0.0, 0.0]).unwrap(), -1.0);
    }

    #[test]
    fn star_is_an_involution_exactly() {
        let b = LocalOperator::bellman(
            vec![
                LinearOp::new(SymMatrix::new2(1.0, 0.2, 2.0), 0.5),
                LinearOp::new(SymMatrix::new2(3.0, -0.5, 1.0), -1.0),
            ],
            BellmanMode::Max,
        )
        .unwrap();
        let f = OperatorField::constant(b)
            .translate(&SymMatrix::new2(0.3, 0.1, -0.7))
            .shift(0.25);
        let ff = f.star().star();
        let mut rng = SplitMix64::new(11);
        for _ in 0..100 {
            let a = random_sym(&mut rng, 2, 2.0);
            let x = [rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)];
            assert_eq!(f.eval(&a, x).unwrap(), ff.eval(&a, x).unwrap());
        }
    }

    #[test]
    fn translate_composes_and_commutes_with_shift() {
        let op = LocalOperator::pucci(PucciSign::Plus, 3.0, 0.5);
        let f = OperatorField::constant(op);
        let a = SymMatrix::new2(0.5, -0.2, 1.0);
        let b = SymMatrix::new2(-1.0, 0.4, 0.1);
        let mut rng = SplitMix64::new(5);
        let g1 = f.translate(&a).translate(&b);
        let g2 = f.translate(&(&a + &b));
        let s1 = f.translate(&a).shift(0.7);
        let s2 = f.shift(0.7).translate(&a);
        let zero = f.translate(&SymMatrix::zeros(2));
        let st = f.star().translate(&a);
        for _ in 0..100 {
            let m = random_sym(&mut rng, 2, 2.0);
            let x = [0.0, 0.0];
            let close = |u: f64, v: f64| (u - v).abs() <= 1e-12 * (1.0 + u.abs());
            assert!(close(g1.eval(&m, x).unwrap(), g2.eval(&m, x).unwrap()));
            assert!(close(s1.eval(&m, x).unwrap(), s2.eval(&m, x).unwrap()));
            assert_eq!(zero.eval(&m, x).unwrap(), f.eval(&m, x).unwrap());
            // (F_*)_A (M) = F_*(A + M) = -F(-A - M)
            let expect = -f.eval(&(-&(&a + &m)), x).unwrap();
            assert!(close(st.eval(&m, x).unwrap(), expect));
        }
    }

    #[test]
    fn homogeneous_linear_is_star_invariant() {
        let f = OperatorField::constant(LocalOperator::linear(SymMatrix::new2(2.0, 0.5, 1.5), 0.0));
        let g = f.star();
        let mut rng = SplitMix64::new(8);
        for _ in 0..50 {
            let m = random_sym(&mut rng, 2, 2.0);
            let (u, v) = (f.eval(&m, [0.0; 2]).unwrap(), g.eval(&m, [0.0; 2]).unwrap());
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn resolved_controls_match_evaluation() {
        let b = LocalOperator::bellman(
            vec![
                LinearOp::new(SymMatrix::new2(1.0, 0.2, 2.0), 0.5),
                LinearOp::new(SymMatrix::new2(3.0, -0.5, 1.0), -1.0),
            ],
            BellmanMode::Min,
        )
        .unwrap();
        let mut rng = SplitMix64::new(21);
        let t = Transform::default()
            .translate(&SymMatrix::new2(0.2, 0.3, -0.4))
            .star()
            .shift(-0.3);
        let (controls, mode) = t.resolve_controls(&b).unwrap();
        assert_eq!(mode, BellmanMode::Max);
        for _ in 0..50 {
            let m = random_sym(&mut rng, 2, 2.0);
            let direct = t.apply(&b, &m);
            let via = controls.iter().map(|c| c.eval(&m)).fold(f64::NEG_INFINITY, f64::max);
            assert!((direct - via).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipticity_in_and_out_of_contract() {
        let good = OperatorField::constant_with_lambda(
            LocalOperator::linear(SymMatrix::new2(2.0, 0.5, 1.5), 0.3),
            4.0,
        );
        assert_eq!(ellipticity_report(&good, 500, 1).max_violation, 0.0);

        let bell = LocalOperator::bellman(
            vec![
                LinearOp::new(SymMatrix::identity(2), 0.0),
                LinearOp::new(SymMatrix::scalar(2, 4.0), 1.0),
            ],
            BellmanMode::Min,
        )
        .unwrap();
        let bell = OperatorField::constant_with_lambda(bell, 4.0);
        assert!(ellipticity_report(&bell, 500, 2).max_violation <= 1e-12);
        assert!(ellipticity_report(&bell.star(), 500, 2).max_violation <= 1e-12);

        let bad = OperatorField::constant_with_lambda(
            LocalOperator::linear(SymMatrix::diag(&[1.0, 5.0]), 0.0),
            4.0,
        );
        assert!(ellipticity_report(&bad, 10, 3).max_violation > 0.0);
    }
}
