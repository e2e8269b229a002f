//! Reverse-mode automatic differentiation on an explicit tape.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Each
//! operation appends a node holding its output, the ids of its inputs and a
//! closure mapping the output gradient to input gradients. Inputs always
//! have smaller ids than the node that consumes them, so the node list is a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! Nodes whose inputs need no gradient keep no closure and save no buffers.
//! Domain-specific fused operations live next to the maths they implement
//! and register themselves through [`Tape::push_op`].

pub mod check;

use crate::numerics::linalg;
use crate::numerics::special::{normal_cdf, normal_pdf};
use crate::numerics::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// What a backward closure sees: the gradient of the node's output, the
/// values of its inputs and its own value, and which inputs need a gradient.
pub struct BackwardArgs<'a> {
    pub grad: &'a Tensor,
    pub inputs: &'a [&'a Tensor],
    pub output: &'a Tensor,
    pub needs: &'a [bool],
}

pub type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf that requires one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a grad-requiring leaf. Leaves the loss does not depend
    /// on get zeros.
    pub fn get(&self, v: Var) -> &Tensor {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .expect("gradient requested for a node that is not a grad-requiring leaf")
    }

    pub fn try_get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), backward: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn any_requires_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    /// Appends an operation node. `backward` returns one entry per input, in
    /// order; entries for inputs with `needs[i] == false` may be `None`.
    pub fn push_op(
        &mut self,
        inputs: &[Var],
        value: Tensor,
        backward: impl Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>> + 'static,
    ) -> Var {
        let id = self.nodes.len();
        for v in inputs {
            assert!(v.0 < id, "tape inputs must precede their consumer");
        }
        let requires_grad = self.any_requires_grad(inputs);
        let backward: Option<BackwardFn> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.nodes.push(Node { value, parents: inputs.iter().map(|v| v.0).collect(), backward, requires_grad });
        Var(id)
    }

    /// Gradients of the one-element node `loss` with respect to every
    /// grad-requiring leaf.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for id in (0..n).rev() {
            let node = &self.nodes[id];
            let Some(f) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect();
            let args = BackwardArgs { grad: &g, inputs: &inputs, output: &node.value, needs: &needs };
            let parent_grads = f(&args);
            assert_eq!(parent_grads.len(), node.parents.len(), "backward arity");
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let (true, Some(pg)) = (need, pg) else {
                    continue;
                };
                assert_eq!(pg.len(), self.nodes[p].value.len(), "gradient size for node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        for (id, slot) in grads.iter_mut().enumerate() {
            let node = &self.nodes[id];
            if node.requires_grad && node.backward.is_none() && node.parents.is_empty() {
                if slot.is_none() {
                    *slot = Some(Tensor::zeros(node.value.shape()));
                }
            } else {
                *slot = None;
            }
        }
        // Leaves created after the loss are untouched by it.
        for node in &self.nodes[n..] {
            grads.push((node.requires_grad && node.parents.is_empty()).then(|| Tensor::zeros(node.value.shape())));
        }
        Gradients { grads }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
}

/// Elementwise and structural operations.
impl Tape {
    /// Elementwise map whose derivative is expressed through the input and
    /// output values.
    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var {
        let value = self.value(x).map(f);
        self.push_op(&[x], value, move |a| {
            let data = a.inputs[0]
                .data()
                .iter()
                .zip(a.output.data())
                .zip(a.grad.data())
                .map(|((&x, &y), &g)| g * df(x, y))
                .collect();
            vec![Some(Tensor::from_shape(a.inputs[0].shape(), data))]
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "add");
        let value = self.value(a).add(self.value(b)).expect("checked shape");
        self.push_op(&[a, b], value, |a| vec![Some(a.grad.clone()), Some(a.grad.clone())])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "sub");
        let value = self.value(a).sub(self.value(b)).expect("checked shape");
        self.push_op(&[a, b], value, |a| vec![Some(a.grad.clone()), Some(a.grad.scale(-1.0))])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "mul");
        let value = self.value(a).mul(self.value(b)).expect("checked shape");
        self.push_op(&[a, b], value, |a| {
            vec![
                a.needs[0].then(|| a.grad.mul(a.inputs[1]).expect("shape")),
                a.needs[1].then(|| a.grad.mul(a.inputs[0]).expect("shape")),
            ]
        })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        self.push_op(&[x], value, move |a| vec![Some(a.grad.scale(s))])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push_op(&[x], value, |a| vec![Some(a.grad.clone())])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, |x, _| 1.0 / x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, |x| 1.0 / x, |_, y| -y * y)
    }

    /// `max(x, floor)`; the gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, move |x| x.max(floor), move |x, _| if x > floor { 1.0 } else { 0.0 })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.clamp_min(x, 0.0)
    }

    /// Elementwise standard normal distribution function.
    pub fn normal_cdf(&mut self, x: Var) -> Var {
        self.unary(x, normal_cdf, |x, _| normal_pdf(x))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push_op(&[x], value, |a| vec![Some(Tensor::full(a.inputs[0].shape(), a.grad.item()))])
    }

    /// Column sums of an `N×C` matrix, giving a `C` vector.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (n, c) = (v.rows(), v.cols());
        let mut out = vec![0.0; c];
        for i in 0..n {
            for (o, x) in out.iter_mut().zip(v.row(i)) {
                *o += x;
            }
        }
        self.push_op(&[x], Tensor::vector(out), move |a| {
            let mut g = Vec::with_capacity(n * c);
            for _ in 0..n {
                g.extend_from_slice(a.grad.data());
            }
            vec![Some(Tensor::from_shape(a.inputs[0].shape(), g))]
        })
    }

    /// Adds the vector `b` to every row of the matrix `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.cols();
        assert_eq!(bv.len(), c, "add_row: bias length");
        let mut value = xv.clone();
        for i in 0..xv.rows() {
            for (o, b) in value.row_mut(i).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push_op(&[x, b], value, move |a| {
            let bias_grad = a.needs[1].then(|| {
                let mut g = vec![0.0; c];
                for i in 0..a.grad.rows() {
                    for (o, x) in g.iter_mut().zip(a.grad.row(i)) {
                        *o += x;
                    }
                }
                Tensor::from_shape(a.inputs[1].shape(), g)
            });
            vec![Some(a.grad.clone()), bias_grad]
        })
    }

    /// Multiplies every entry of `x` by the one-element tensor `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let value = self.value(x).scale(sv);
        self.push_op(&[x, s], value, |a| {
            let s = a.inputs[1].item();
            vec![
                a.needs[0].then(|| a.grad.scale(s)),
                a.needs[1].then(|| {
                    let d = a.grad.data().iter().zip(a.inputs[0].data()).map(|(g, x)| g * x).sum();
                    Tensor::from_shape(a.inputs[1].shape(), vec![d])
                }),
            ]
        })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).reshape(shape).expect("reshape keeps the element count");
        self.push_op(&[x], value, |a| vec![Some(a.grad.reshape(a.inputs[0].shape()).expect("same count"))])
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        self.push_op(&[x], value, |a| vec![Some(a.grad.transpose())])
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Var {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::stack(&values).expect("stack of equal shapes");
        let k = parts.len();
        self.push_op(parts, value, move |a| (0..k).map(|i| Some(a.grad.index0(i))).collect())
    }

    /// Sub-tensor `i` along the leading axis.
    pub fn index0(&mut self, x: Var, i: usize) -> Var {
        let value = self.value(x).index0(i);
        self.push_op(&[x], value, move |a| {
            let mut g = Tensor::zeros(a.inputs[0].shape());
            let inner = a.grad.len();
            g.data_mut()[i * inner..(i + 1) * inner].copy_from_slice(a.grad.data());
            vec![Some(g)]
        })
    }

    /// Entries `idx` of a flat tensor (repeats allowed).
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Var {
        let src = self.value(x).data();
        let value = Tensor::vector(idx.iter().map(|&i| src[i]).collect());
        let idx = idx.to_vec();
        self.push_op(&[x], value, move |a| {
            let mut g = Tensor::zeros(a.inputs[0].shape());
            for (&i, d) in idx.iter().zip(a.grad.data()) {
                g.data_mut()[i] += d;
            }
            vec![Some(g)]
        })
    }

    /// Columns `idx` of an `N×C` matrix (repeats allowed).
    pub fn select_cols(&mut self, x: Var, idx: &[usize]) -> Var {
        let src = self.value(x);
        let (n, c, m) = (src.rows(), src.cols(), idx.len());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = src.row(i);
            out.extend(idx.iter().map(|&j| row[j]));
        }
        let idx = idx.to_vec();
        self.push_op(&[x], Tensor::from_shape(&[n, m], out), move |a| {
            let mut g = vec![0.0; n * c];
            for i in 0..n {
                for (t, &j) in idx.iter().enumerate() {
                    g[i * c + j] += a.grad.data()[i * m + t];
                }
            }
            vec![Some(Tensor::from_shape(&[n, c], g))]
        })
    }

    /// Broadcasts a vector of length `C` to an `n×C` matrix.
    pub fn broadcast_rows(&mut self, v: Var, n: usize) -> Var {
        let c = self.value(v).len();
        let zeros = self.constant(Tensor::zeros(&[n, c]));
        self.add_row(zeros, v)
    }

    /// `s·I_d` from a one-element tensor `s`.
    pub fn eye_scaled(&mut self, s: Var, d: usize) -> Var {
        let value = Tensor::eye(d).scale(self.value(s).item());
        self.push_op(&[s], value, move |a| {
            let tr = (0..d).map(|i| a.grad.at(i, i)).sum();
            vec![Some(Tensor::from_shape(a.inputs[0].shape(), vec![tr]))]
        })
    }
}

/// Products and factorisations.
impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b)).expect("matmul shapes");
        self.push_op(&[a, b], value, |a| {
            vec![
                a.needs[0].then(|| a.grad.matmul_t(a.inputs[1]).expect("shape")),
                a.needs[1].then(|| a.inputs[0].t_matmul(a.grad).expect("shape")),
            ]
        })
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b)).expect("matmul_t shapes");
        self.push_op(&[a, b], value, |a| {
            vec![
                a.needs[0].then(|| a.grad.matmul(a.inputs[1]).expect("shape")),
                a.needs[1].then(|| a.grad.t_matmul(a.inputs[0]).expect("shape")),
            ]
        })
    }

    /// Cholesky factor of a symmetric positive-definite matrix, reading only
    /// its lower triangle. Panics if the matrix is not positive definite;
    /// use [`Tape::try_cholesky`] to handle that case.
    pub fn cholesky(&mut self, x: Var) -> Var {
        self.try_cholesky(x).expect("cholesky of a positive-definite matrix")
    }

    pub fn try_cholesky(&mut self, x: Var) -> crate::Result<Var> {
        let l = linalg::cholesky(self.value(x))?;
        Ok(self.push_op(&[x], l, |a| vec![Some(cholesky_backward(a.output, a.grad))]))
    }

    /// Softmax cross-entropy of a logit vector against `label`, multiplied
    /// by `weight`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize, weight: f64) -> Var {
        let z = self.value(logits).data();
        assert!(label < z.len(), "label out of range");
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
        let value = Tensor::scalar(weight * (lse - z[label]));
        self.push_op(&[logits], value, move |a| {
            let g = a.grad.item() * weight;
            let mut d: Vec<f64> = a.inputs[0].data().iter().map(|v| g * (v - lse).exp()).collect();
            d[label] -= g;
            vec![Some(Tensor::from_shape(a.inputs[0].shape(), d))]
        })
    }
}

/// Gradient of `A ↦ chol(A)` with respect to the lower triangle of `A`
/// (the entries the factorisation reads).
fn cholesky_backward(l: &Tensor, lbar: &Tensor) -> Tensor {
    let n = l.rows();
    // P = Φ(Lᵀ L̄): lower triangle with the diagonal halved.
    let mut p = l.t_matmul(lbar).expect("square");
    for i in 0..n {
        for j in 0..n {
            let v = match i.cmp(&j) {
                std::cmp::Ordering::Less => 0.0,
                std::cmp::Ordering::Equal => 0.5 * p.at(i, j),
                std::cmp::Ordering::Greater => p.at(i, j),
            };
            p.set(i, j, v);
        }
    }
    // S = L⁻ᵀ P L⁻¹
    let linv = linalg::invert_lower(l);
    let mut tmp = vec![0.0; n * n];
    gemm(n, n, n, 1.0, linv.data(), true, p.data(), false, 0.0, &mut tmp);
    let mut s = vec![0.0; n * n];
    gemm(n, n, n, 1.0, &tmp, false, linv.data(), false, 0.0, &mut s);
    // The symmetric gradient is (S + Sᵀ)/2; folding the upper half onto the
    // lower triangle gives S + Sᵀ off the diagonal.
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        out.set(i, i, s[i * n + i]);
        for j in 0..i {
            out.set(i, j, s[i * n + j] + s[j * n + i]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::check::check_gradients;
    use super::*;

    #[test]
    fn sum_of_squares() {
        let mut t = Tape::new();
        let th = t.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = t.square(th);
        let loss = t.sum(sq);
        let g = t.backward(loss);
        assert_eq!(g.get(th).data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut t = Tape::new();
        let th = t.param(Tensor::vector(vec![1.0, 2.0]));
        let c = t.constant(Tensor::scalar(3.0));
        let loss = t.exp(c);
        let g = t.backward(loss);
        assert_eq!(g.get(th).data(), &[0.0, 0.0]);
    }

    #[test]
    fn constants_keep_no_closures() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::vector(vec![1.0]));
        let e = t.exp(c);
        assert!(!t.requires_grad(e));
        assert!(t.nodes[e.id()].backward.is_none());
    }

    #[test]
    fn repeated_inputs_accumulate() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![3.0]));
        let y = t.mul(x, x);
        let z = t.mul(y, x);
        let g = t.backward(z);
        assert!((g.get(x).item() - 27.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut t = Tape::new();
        let z = t.param(Tensor::vector(vec![0.3; 10]));
        let ce = t.cross_entropy(z, 4, 1.0);
        assert!((t.value(ce).item() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let x = Tensor::from_shape(&[2, 3], vec![0.3, 1.2, 0.7, 2.0, 0.5, 1.1]);
        let y = Tensor::from_shape(&[2, 3], vec![-0.4, 0.9, 1.5, 0.2, -1.3, 0.8]);
        check_gradients(&[x, y], 1e-5, 1e-4, |t, p| {
            let e = t.exp(p[1]);
            let l = t.ln(p[0]);
            let s = t.sqrt(p[0]);
            let r = t.recip(p[0]);
            let c = t.normal_cdf(p[1]);
            let m = t.mul(e, l);
            let a = t.add(m, s);
            let b = t.sub(a, r);
            let q = t.square(c);
            let u = t.mul(b, q);
            let u = t.scale(u, 0.7);
            let u = t.add_scalar(u, 2.0);
            let cl = t.clamp_min(p[1], 0.1);
            let u = t.mul(u, cl);
            t.sum(u)
        })
        .unwrap();
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let x = Tensor::from_shape(&[3, 2], vec![0.3, 1.2, 0.7, -2.0, 0.5, 1.1]);
        let w = Tensor::from_shape(&[4, 2], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, 0.8]);
        let b = Tensor::vector(vec![0.5, -0.5, 0.25, 1.0]);
        let s = Tensor::scalar(1.7);
        check_gradients(&[x, w, b, s], 1e-5, 1e-4, |t, p| {
            let h = t.matmul_t(p[0], p[1]); // 3x4
            let h = t.add_row(h, p[2]);
            let h = t.mul_scalar(h, p[3]);
            let ht = t.transpose(h); // 4x3
            let hh = t.matmul(ht, h); // 4x4
            let cols = t.select_cols(hh, &[0, 2, 2]);
            let r = t.reshape(cols, &[12]);
            let g = t.gather(r, &[1, 5, 5, 11]);
            let st = t.stack(&[g, g]);
            let i1 = t.index0(st, 1);
            let sr = t.sum_rows(h);
            let e = t.eye_scaled(p[3], 2);
            let e = t.reshape(e, &[4]);
            let z = t.mul(sr, e);
            let z = t.add(z, i1);
            let ce = t.cross_entropy(z, 2, 0.6);
            let sq = t.square(z);
            let s2 = t.sum(sq);
            let s2 = t.scale(s2, 1e-3);
            t.add(ce, s2)
        })
        .unwrap();
    }

    #[test]
    fn cholesky_matches_finite_differences() {
        let b = Tensor::from_shape(&[3, 3], vec![1.0, 0.2, -0.3, 0.4, 1.5, 0.1, -0.2, 0.3, 0.9]);
        let wts = Tensor::from_shape(&[3, 3], vec![0.5, 1.0, -0.7, 0.3, 0.2, 0.8, -1.1, 0.6, 0.4]);
        check_gradients(&[b, wts], 1e-5, 1e-4, |t, p| {
            let a = t.matmul_t(p[0], p[0]);
            let eye = t.constant(Tensor::eye(3));
            let a = t.add(a, eye);
            let l = t.cholesky(a);
            let wl = t.mul(l, p[1]);
            let s = t.sum(wl);
            let sq = t.square(l);
            let s2 = t.sum(sq);
            t.add(s, s2)
        })
        .unwrap();
    }

    #[test]
    fn cholesky_gradient_reads_lower_triangle_only() {
        // A itself is the parameter, so the finite differences perturb single
        // entries and the upper triangle must get zero gradient.
        let a = Tensor::from_shape(&[3, 3], vec![4.0, 9.0, 9.0, 1.0, 3.0, 9.0, 0.5, 0.2, 2.0]);
        check_gradients(&[a], 1e-5, 1e-4, |t, p| {
            let l = t.cholesky(p[0]);
            let e = t.exp(l);
            t.sum(e)
        })
        .unwrap();
    }
}
