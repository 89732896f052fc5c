//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`GradTape`] records one forward pass; [`GradTape::backward`] replays it
//! in reverse and returns the gradient of a scalar node with respect to every
//! registered parameter. Scalars are 1×1 matrices. Batches are row-major with
//! one sample per row.

use std::collections::BTreeMap;

use super::matrix::{gemm, gemm_acc, DenseMatrix, Trans};
use crate::error::{shape, Error, Result};

/// Caller-chosen identifier for a differentiable parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle to a node recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, ta: Trans, b: Var, tb: Trans },
    AddRow { x: Var, bias: Var },
    Relu { x: Var },
    MulConst { x: Var, c: DenseMatrix },
    Clamp { x: Var, bound: f64 },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { x: Var, alpha: f64 },
    AddScalar { x: Var },
    Square { x: Var },
    Mean { x: Var },
    Sum { x: Var },
    MulScalar { x: Var, s: Var },
    Recip { s: Var, floor: f64 },
    DotConst { x: Var, c: DenseMatrix },
    RowNorms { x: Var },
    BroadcastRows { x: Var },
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients of one backward pass, keyed by parameter id.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    map: BTreeMap<ParamId, DenseMatrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&DenseMatrix> {
        self.map.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &DenseMatrix)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Adds `alpha * g` to the gradient of `id`, creating it when absent.
    pub fn accumulate(&mut self, id: ParamId, alpha: f64, g: &DenseMatrix) -> Result<()> {
        match self.map.get_mut(&id) {
            Some(existing) => existing.axpy(alpha, g),
            None => {
                self.map.insert(id, g.scale(alpha));
                Ok(())
            }
        }
    }

    pub fn into_map(self) -> BTreeMap<ParamId, DenseMatrix> {
        self.map
    }
}

/// Recorded computation for one forward/backward cycle.
#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul { a, b, .. }
            | Op::AddRow { x: a, bias: b }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::MulScalar { x: a, s: b } => self.needs_grad(*a) || self.needs_grad(*b),
            Op::Relu { x }
            | Op::MulConst { x, .. }
            | Op::Clamp { x, .. }
            | Op::Scale { x, .. }
            | Op::AddScalar { x }
            | Op::Square { x }
            | Op::Mean { x }
            | Op::Sum { x }
            | Op::Recip { s: x, .. }
            | Op::DotConst { x, .. }
            | Op::RowNorms { x }
            | Op::BroadcastRows { x } => self.needs_grad(*x),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable leaf.
    pub fn param(&mut self, id: ParamId, value: DenseMatrix) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].needs_grad = true;
        self.params.push((id, v));
        v
    }

    /// Records a leaf that receives no gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, Trans::No, b, Trans::No)
    }

    /// `op(a) · op(b)`.
    pub fn matmul_t(&mut self, a: Var, ta: Trans, b: Var, tb: Trans) -> Result<Var> {
        let value = gemm(self.value(a), ta, self.value(b), tb)?;
        Ok(self.push(value, Op::MatMul { a, ta, b, tb }))
    }

    /// Adds a 1×n row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape(
                "add_row",
                format!("bias {:?} for input {:?}", bv.shape(), xv.shape()),
            ));
        }
        let mut out = xv.clone();
        let b = bv.as_slice();
        for i in 0..out.rows() {
            for (o, c) in out.row_mut(i).iter_mut().zip(b) {
                *o += c;
            }
        }
        Ok(self.push(out, Op::AddRow { x, bias }))
    }

    /// Elementwise `max(x, 0)`. The reverse pass uses the mask `x > 0`.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu { x })
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: DenseMatrix) -> Result<Var> {
        let out = self.value(x).zip_map(&c, |a, b| a * b)?;
        Ok(self.push(out, Op::MulConst { x, c }))
    }

    /// Elementwise clamp into `[-bound, bound]`.
    pub fn clamp(&mut self, x: Var, bound: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(-bound, bound));
        self.push(out, Op::Clamp { x, bound })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub { a, b }))
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Var {
        let out = self.value(x).scale(alpha);
        self.push(out, Op::Scale { x, alpha })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar { x })
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square { x })
    }

    /// Mean of all entries, as a 1×1 node.
    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let n = m.len().max(1) as f64;
        let out = DenseMatrix::from_raw(1, 1, vec![m.sum() / n]);
        self.push(out, Op::Mean { x })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = DenseMatrix::from_raw(1, 1, vec![self.value(x).sum()]);
        self.push(out, Op::Sum { x })
    }

    /// Multiplies every entry of `x` by the 1×1 node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(shape("mul_scalar", "scale node is not 1x1"));
        }
        let alpha = self.scalar(s);
        let out = self.value(x).scale(alpha);
        Ok(self.push(out, Op::MulScalar { x, s }))
    }

    /// `1 / max(s, floor)` for a 1×1 node; the gradient is zero on the floor.
    pub fn recip(&mut self, s: Var, floor: f64) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(shape("recip", "input node is not 1x1"));
        }
        let v = self.scalar(s).max(floor);
        let out = DenseMatrix::from_raw(1, 1, vec![1.0 / v]);
        Ok(self.push(out, Op::Recip { s, floor }))
    }

    /// `sum(x ⊙ c)` for a constant `c`, as a 1×1 node.
    pub fn dot_const(&mut self, x: Var, c: DenseMatrix) -> Result<Var> {
        self.value(x).check_same_shape(&c, "dot_const")?;
        let s = self
            .value(x)
            .as_slice()
            .iter()
            .zip(c.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let out = DenseMatrix::from_raw(1, 1, vec![s]);
        Ok(self.push(out, Op::DotConst { x, c }))
    }

    /// Euclidean norm of every row, as an n×1 column. Zero rows get gradient 0.
    pub fn row_norms(&mut self, x: Var) -> Var {
        let norms = self.value(x).row_norms();
        let out = DenseMatrix::from_raw(norms.len(), 1, norms);
        self.push(out, Op::RowNorms { x })
    }

    /// Stacks a 1×n row `rows` times.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != 1 {
            return Err(shape("broadcast_rows", "input is not a single row"));
        }
        let mut data = Vec::with_capacity(rows * xv.cols());
        for _ in 0..rows {
            data.extend_from_slice(xv.as_slice());
        }
        let out = DenseMatrix::from_raw(rows, xv.cols(), data);
        Ok(self.push(out, Op::BroadcastRows { x }))
    }

    /// Gradient of the scalar `loss` with respect to every registered parameter.
    ///
    /// Parameters that do not influence `loss` receive a zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<DenseMatrix>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(DenseMatrix::from_raw(1, 1, vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul { a, ta, b, tb } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // C = op(A) op(B): dop(A) = G op(B)ᵀ, dop(B) = op(A)ᵀ G
                    if self.needs_grad(*a) {
                        let mut da = DenseMatrix::zeros(av.rows(), av.cols());
                        match ta {
                            Trans::No => gemm_acc(1.0, &g, Trans::No, bv, flip(*tb), &mut da),
                            Trans::Yes => gemm_acc(1.0, bv, *tb, &g, Trans::Yes, &mut da),
                        }
                        self.accumulate(&mut grads, *a, da);
                    }
                    if self.needs_grad(*b) {
                        let mut db = DenseMatrix::zeros(bv.rows(), bv.cols());
                        match tb {
                            Trans::No => gemm_acc(1.0, av, flip(*ta), &g, Trans::No, &mut db),
                            Trans::Yes => gemm_acc(1.0, &g, Trans::Yes, av, *ta, &mut db),
                        }
                        self.accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddRow { x, bias } => {
                    let mut db = vec![0.0; g.cols()];
                    for r in g.row_iter() {
                        for (d, v) in db.iter_mut().zip(r) {
                            *d += v;
                        }
                    }
                    self.accumulate(&mut grads, *bias, DenseMatrix::from_raw(1, g.cols(), db));
                    self.accumulate(&mut grads, *x, g);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let dx = mask_grad(&g, xv, |v| v > 0.0);
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::MulConst { x, c } => {
                    let dx = DenseMatrix::from_raw(
                        g.rows(),
                        g.cols(),
                        g.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).collect(),
                    );
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Clamp { x, bound } => {
                    let xv = self.value(*x);
                    let b = *bound;
                    let dx = mask_grad(&g, xv, |v| v.abs() <= b);
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Add { a, b } => {
                    self.accumulate(&mut grads, *b, g.clone());
                    self.accumulate(&mut grads, *a, g);
                }
                Op::Sub { a, b } => {
                    self.accumulate(&mut grads, *b, g.scale(-1.0));
                    self.accumulate(&mut grads, *a, g);
                }
                Op::Scale { x, alpha } => self.accumulate(&mut grads, *x, g.scale(*alpha)),
                Op::AddScalar { x } => self.accumulate(&mut grads, *x, g),
                Op::Square { x } => {
                    let xv = self.value(*x);
                    let dx = g.zip_map(xv, |gi, xi| 2.0 * xi * gi)?;
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Mean { x } => {
                    let xv = self.value(*x);
                    let per = g.as_slice()[0] / xv.len().max(1) as f64;
                    self.accumulate(&mut grads, *x, DenseMatrix::filled(xv.rows(), xv.cols(), per));
                }
                Op::Sum { x } => {
                    let xv = self.value(*x);
                    let gs = g.as_slice()[0];
                    self.accumulate(&mut grads, *x, DenseMatrix::filled(xv.rows(), xv.cols(), gs));
                }
                Op::MulScalar { x, s } => {
                    let xv = self.value(*x);
                    let alpha = self.scalar(*s);
                    let ds: f64 = g.as_slice().iter().zip(xv.as_slice()).map(|(a, b)| a * b).sum();
                    self.accumulate(&mut grads, *s, DenseMatrix::from_raw(1, 1, vec![ds]));
                    self.accumulate(&mut grads, *x, g.scale(alpha));
                }
                Op::Recip { s, floor } => {
                    let sv = self.scalar(*s);
                    let ds = if sv < *floor {
                        0.0
                    } else {
                        -g.as_slice()[0] / (sv * sv)
                    };
                    self.accumulate(&mut grads, *s, DenseMatrix::from_raw(1, 1, vec![ds]));
                }
                Op::DotConst { x, c } => {
                    self.accumulate(&mut grads, *x, c.scale(g.as_slice()[0]));
                }
                Op::RowNorms { x } => {
                    let xv = self.value(*x);
                    let norms = &node.value;
                    let mut dx = DenseMatrix::zeros(xv.rows(), xv.cols());
                    for i in 0..xv.rows() {
                        let n = norms.as_slice()[i];
                        if n > 0.0 {
                            let coef = g.as_slice()[i] / n;
                            for (d, v) in dx.row_mut(i).iter_mut().zip(xv.row(i)) {
                                *d = coef * v;
                            }
                        }
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::BroadcastRows { x } => {
                    let mut dx = vec![0.0; g.cols()];
                    for r in g.row_iter() {
                        for (d, v) in dx.iter_mut().zip(r) {
                            *d += v;
                        }
                    }
                    self.accumulate(&mut grads, *x, DenseMatrix::from_raw(1, g.cols(), dx));
                }
            }
        }

        let mut out = Gradients::default();
        for &(id, v) in &self.params {
            let g = match grads.get_mut(v.0).and_then(Option::take) {
                Some(g) => g,
                None => {
                    let (r, c) = self.value(v).shape();
                    DenseMatrix::zeros(r, c)
                }
            };
            out.accumulate(id, 1.0, &g)?;
        }
        Ok(out)
    }
}

fn flip(t: Trans) -> Trans {
    match t {
        Trans::No => Trans::Yes,
        Trans::Yes => Trans::No,
    }
}

fn mask_grad(g: &DenseMatrix, x: &DenseMatrix, keep: impl Fn(f64) -> bool) -> DenseMatrix {
    DenseMatrix::from_raw(
        g.rows(),
        g.cols(),
        g.as_slice()
            .iter()
            .zip(x.as_slice())
            .map(|(&gi, &xi)| if keep(xi) { gi } else { 0.0 })
            .collect(),
    )
}

impl GradTape {
    fn accumulate(&self, grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) {
        if !self.needs_grad(v) {
            return;
        }
        match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
            slot @ None => *slot = Some(g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn squared_norm_of_linear_map() {
        // loss = ‖A x‖², dloss/dA = 2 (A x) xᵀ
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(3, 4, &mut rng);
        let x = random(4, 1, &mut rng);
        let mut tape = GradTape::new();
        let av = tape.param(ParamId(0), a.clone());
        let xv = tape.constant(x.clone());
        let ax = tape.matmul(av, xv).unwrap();
        let sq = tape.square(ax);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(ParamId(0)).unwrap();

        let axv = a.matmul(&x).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let expected = 2.0 * axv.get(i, 0) * x.get(j, 0);
                assert!((g.get(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let mut tape = GradTape::new();
        let p = tape.param(ParamId(7), DenseMatrix::filled(2, 2, 3.0));
        let c = tape.constant(DenseMatrix::filled(2, 2, 1.0));
        let loss = tape.sum(c);
        let _ = p;
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(ParamId(7)).unwrap(), &DenseMatrix::zeros(2, 2));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = GradTape::new();
        let p = tape.param(ParamId(0), DenseMatrix::zeros(2, 1));
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn relu_gradient_by_finite_differences() {
        let f = |x: &[f64]| x.iter().map(|v| v.max(0.0)).sum::<f64>();
        let x = [-1.0, 2.0];
        let h = 1e-6;
        let fd: Vec<f64> = (0..2)
            .map(|i| {
                let mut p = x;
                let mut m = x;
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect();

        let mut tape = GradTape::new();
        let xv = tape.param(ParamId(0), DenseMatrix::new(1, 2, x.to_vec()).unwrap());
        let r = tape.relu(xv);
        let loss = tape.sum(r);
        let g = tape.backward(loss).unwrap();
        let g = g.get(ParamId(0)).unwrap().as_slice();
        assert_eq!(g, &[0.0, 1.0]);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = GradTape::new();
        let xv = tape.param(ParamId(0), DenseMatrix::zeros(1, 1));
        let r = tape.relu(xv);
        let loss = tape.sum(r);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn reused_parameter_accumulates() {
        // loss = sum(A x) + sum(A y) => dA = 1 (x + y)ᵀ
        let a = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let x = DenseMatrix::from_rows(&[[0.5], [-1.0]]).unwrap();
        let y = DenseMatrix::from_rows(&[[2.0], [3.0]]).unwrap();
        let mut tape = GradTape::new();
        let av = tape.param(ParamId(0), a);
        let xv = tape.constant(x);
        let yv = tape.constant(y);
        let l1 = tape.matmul(av, xv).unwrap();
        let l2 = tape.matmul(av, yv).unwrap();
        let s = tape.add(l1, l2).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().as_slice(), &[2.5, 2.0]);
    }

    #[test]
    fn elementary_ops_match_finite_differences() {
        // mean(row_norms(clamp(relu(X Wᵀ + c) * s, 3)) - 1)² with s = 1 / dot(W, K)
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(5, 3, &mut rng);
        let w = random(4, 3, &mut rng).map(|v| v + 0.5);
        let c = random(1, 4, &mut rng);
        let k = random(4, 3, &mut rng).map(|v| v.abs() + 0.1);
        let mask = random(5, 4, &mut rng).map(|v| if v > 0.0 { 1.0 } else { 0.5 });

        let eval = |w: &DenseMatrix, c: &DenseMatrix, grad: bool| {
            let mut tape = GradTape::new();
            let wv = tape.param(ParamId(0), w.clone());
            let cv = tape.param(ParamId(1), c.clone());
            let xv = tape.constant(x.clone());
            let h = tape.matmul_t(xv, Trans::No, wv, Trans::Yes).unwrap();
            let h = tape.add_row(h, cv).unwrap();
            let h = tape.relu(h);
            let h = tape.mul_const(h, mask.clone()).unwrap();
            let sigma = tape.dot_const(wv, k.clone()).unwrap();
            let inv = tape.recip(sigma, 1e-12).unwrap();
            let h = tape.mul_scalar(h, inv).unwrap();
            let h = tape.clamp(h, 3.0);
            let n = tape.row_norms(h);
            let n = tape.add_scalar(n, -1.0);
            let n = tape.square(n);
            let loss = tape.mean(n);
            let value = tape.scalar(loss);
            let grads = if grad { Some(tape.backward(loss).unwrap()) } else { None };
            (value, grads)
        };

        let (_, grads) = eval(&w, &c, true);
        let grads = grads.unwrap();
        let h = 1e-6;
        for (id, base) in [(0usize, &w), (1, &c)] {
            let g = grads.get(ParamId(id)).unwrap();
            for i in 0..base.len() {
                let mut p = base.clone();
                let mut m = base.clone();
                p.as_mut_slice()[i] += h;
                m.as_mut_slice()[i] -= h;
                let (fp, fm) = if id == 0 {
                    (eval(&p, &c, false).0, eval(&m, &c, false).0)
                } else {
                    (eval(&w, &p, false).0, eval(&w, &m, false).0)
                };
                let fd = (fp - fm) / (2.0 * h);
                let an = g.as_slice()[i];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "param {id} entry {i}: fd {fd} vs {an}"
                );
            }
        }
    }
}
