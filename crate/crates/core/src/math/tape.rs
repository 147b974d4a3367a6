//! A small reverse-mode differentiation tape.
//!
//! Every node is a scalar. A node stores its value and a contiguous run of
//! `(operand, local partial)` edges, so n-ary nodes such as dot products and
//! log-sum-exp cost one node instead of a chain of binary ones. Operands always
//! precede the node that consumes them, which makes the backward sweep a single
//! reverse pass over the node list.
//!
//! The tape is rebuilt for every forward pass: call [`Tape::clear`] and
//! register the parameter leaves again.

use crate::error::{Error, Result};
use crate::math::special;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Default, Clone, Debug)]
pub struct Tape {
    values: Vec<f64>,
    spans: Vec<(u32, u32)>,
    edges: Vec<(u32, f64)>,
}

/// Adjoints of every node with respect to one root.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> f64 {
        self.adjoints[v.index()]
    }

    pub fn wrt(&self, vars: &[Var]) -> Vec<f64> {
        vars.iter().map(|&v| self.get(v)).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            values: Vec::with_capacity(nodes),
            spans: Vec::with_capacity(nodes),
            edges: Vec::with_capacity(nodes * 3),
        }
    }

    /// Drops all nodes but keeps the allocations.
    pub fn clear(&mut self) {
        self.values.clear();
        self.spans.clear();
        self.edges.clear();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    pub fn values(&self, vars: &[Var]) -> Vec<f64> {
        vars.iter().map(|&v| self.value(v)).collect()
    }

    fn push<I>(&mut self, value: f64, edges: I) -> Var
    where
        I: IntoIterator<Item = (Var, f64)>,
    {
        let start = self.edges.len() as u32;
        self.edges
            .extend(edges.into_iter().map(|(v, d)| (v.0, d)));
        let end = self.edges.len() as u32;
        let id = self.values.len() as u32;
        self.values.push(value);
        self.spans.push((start, end));
        Var(id)
    }

    /// A leaf node. Leaves and constants are the same thing on this tape; the
    /// distinction is only whether the caller later asks for its adjoint.
    pub fn var(&mut self, value: f64) -> Var {
        self.push(value, std::iter::empty())
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.var(value)
    }

    pub fn vars(&mut self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&x| self.var(x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, [(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, [(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x * y, [(a, y), (b, x)])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.push(x / y, [(a, 1.0 / y), (b, -x / (y * y))])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = c * self.value(a);
        self.push(v, [(a, c)])
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, [(a, 1.0)])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let e = self.value(a).exp();
        self.push(e, [(a, e)])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(x.ln(), [(a, 1.0 / x)])
    }

    /// `ln(max(a, floor))`; the derivative is zero where the floor is active.
    pub fn ln_floored(&mut self, a: Var, floor: f64) -> Var {
        let x = self.value(a);
        if x > floor {
            self.push(x.ln(), [(a, 1.0 / x)])
        } else {
            self.push(floor.ln(), [(a, 0.0)])
        }
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let x = self.value(a);
        self.push(x.powf(p), [(a, p * x.powf(p - 1.0))])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(x * x, [(a, 2.0 * x)])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let s = self.value(a).sqrt();
        self.push(s, [(a, 0.5 / s)])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(special::softplus(x), [(a, special::sigmoid(x))])
    }

    /// `max(a, floor)`.
    pub fn max_const(&mut self, a: Var, floor: f64) -> Var {
        let x = self.value(a);
        if x > floor {
            self.push(x, [(a, 1.0)])
        } else {
            self.push(floor, [(a, 0.0)])
        }
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let v = xs.iter().map(|&x| self.value(x)).sum();
        self.push(v, xs.iter().map(|&x| (x, 1.0)))
    }

    /// `Σ a_i b_i`, both operands differentiable.
    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        debug_assert_eq!(a.len(), b.len());
        let v = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| self.value(x) * self.value(y))
            .sum();
        let mut edges = Vec::with_capacity(2 * a.len());
        for (&x, &y) in a.iter().zip(b) {
            edges.push((x, self.value(y)));
            edges.push((y, self.value(x)));
        }
        self.push(v, edges)
    }

    /// `c + Σ k_i v_i + Σ p_j q_j`: the general affine-plus-bilinear node used
    /// for every GLM pre-activation.
    pub fn affine(&mut self, c: f64, linear: &[(Var, f64)], bilinear: &[(Var, Var)]) -> Var {
        let mut v = c;
        let mut edges = Vec::with_capacity(linear.len() + 2 * bilinear.len());
        for &(x, k) in linear {
            v += k * self.value(x);
            edges.push((x, k));
        }
        for &(p, q) in bilinear {
            let (pv, qv) = (self.value(p), self.value(q));
            v += pv * qv;
            edges.push((p, qv));
            edges.push((q, pv));
        }
        self.push(v, edges)
    }

    pub fn logsumexp(&mut self, xs: &[Var]) -> Var {
        let vals: Vec<f64> = xs.iter().map(|&x| self.value(x)).collect();
        let v = special::logsumexp(&vals);
        self.push(v, xs.iter().zip(&vals).map(|(&x, &xv)| (x, (xv - v).exp())))
    }

    /// Reverse sweep from `root`. The returned adjoints cover every node; the
    /// adjoint of `root` itself is 1.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let r = root.index();
        if r >= self.values.len() {
            return Err(Error::Usage(format!(
                "backward root {} is not on this tape ({} nodes)",
                r,
                self.values.len()
            )));
        }
        let mut adjoints = vec![0.0; r + 1];
        adjoints[r] = 1.0;
        for node in (0..=r).rev() {
            let g = adjoints[node];
            if g == 0.0 {
                continue;
            }
            let (s, e) = self.spans[node];
            for &(operand, d) in &self.edges[s as usize..e as usize] {
                adjoints[operand as usize] += g * d;
            }
        }
        adjoints.resize(self.values.len(), 0.0);
        Ok(Gradients { adjoints })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel_close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn square_of_leaf() {
        let mut t = Tape::new();
        let x = t.var(3.0);
        let y = t.mul(x, x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x), 6.0);
        assert_eq!(g.get(y), 1.0);
    }

    #[test]
    fn constant_root_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.var(1.5);
        let c = t.constant(4.0);
        let r = t.scale(c, 2.0);
        assert_eq!(t.backward(r).unwrap().get(x), 0.0);
    }

    #[test]
    fn reused_leaf_accumulates() {
        let mut t = Tape::new();
        let x = t.var(0.7);
        let y = t.add(x, x);
        assert_eq!(t.backward(y).unwrap().get(x), 2.0);
    }

    #[test]
    fn foreign_root_is_rejected() {
        let t = Tape::new();
        assert!(t.backward(Var(3)).is_err());
    }

    #[test]
    fn clear_makes_tape_reusable() {
        let mut t = Tape::new();
        let x = t.var(2.0);
        let _ = t.exp(x);
        t.clear();
        assert!(t.is_empty());
        let x = t.var(2.0);
        let y = t.square(x);
        assert_eq!(t.backward(y).unwrap().get(x), 4.0);
    }

    #[test]
    fn softplus_derivative_matches_finite_difference() {
        let mut t = Tape::new();
        let x = t.var(0.3);
        let y = t.softplus(x);
        let g = t.backward(y).unwrap().get(x);
        let fd = central(special::softplus, 0.3, 1e-6);
        assert!(rel_close(g, fd, 1e-6), "{g} vs {fd}");
    }

    type Unary = fn(&mut Tape, Var) -> Var;

    #[test]
    #[allow(clippy::type_complexity)]
    fn unary_ops_match_finite_differences_at_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let ops: Vec<(&str, Unary, fn(f64) -> f64, (f64, f64))> = vec![
            ("exp", |t, a| t.exp(a), f64::exp, (-3.0, 3.0)),
            ("ln", |t, a| t.ln(a), f64::ln, (0.1, 5.0)),
            ("softplus", |t, a| t.softplus(a), special::softplus, (-8.0, 8.0)),
            ("square", |t, a| t.square(a), |x| x * x, (-3.0, 3.0)),
            ("sqrt", |t, a| t.sqrt(a), f64::sqrt, (0.1, 5.0)),
            ("pow", |t, a| t.powf(a, 1.7), |x| x.powf(1.7), (0.1, 4.0)),
            ("neg", |t, a| t.neg(a), |x| -x, (-3.0, 3.0)),
        ];
        for (name, op, f, (lo, hi)) in ops {
            for _ in 0..100 {
                let x0 = rng.random_range(lo..hi);
                let mut t = Tape::new();
                let x = t.var(x0);
                let y = op(&mut t, x);
                assert!((t.value(y) - f(x0)).abs() <= 1e-12 * f(x0).abs().max(1.0));
                let g = t.backward(y).unwrap().get(x);
                let fd = central(f, x0, 1e-6);
                assert!(rel_close(g, fd, 1e-5), "{name} at {x0}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn nary_ops_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let xs: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let eval = |xs: &[f64], which: usize| -> (f64, Vec<f64>) {
                let mut t = Tape::new();
                let v = t.vars(xs);
                let out = match which {
                    0 => t.logsumexp(&v),
                    1 => t.dot(&v[..2], &v[2..]),
                    2 => t.affine(0.5, &[(v[0], 1.5), (v[1], -2.0)], &[(v[2], v[3]), (v[0], v[3])]),
                    3 => {
                        let q = t.div(v[0], v[1]);
                        let s = t.sub(q, v[2]);
                        t.mul(s, v[3])
                    }
                    _ => t.sum(&v),
                };
                (t.value(out), t.backward(out).unwrap().wrt(&v))
            };
            for which in 0..5 {
                let (_, g) = eval(&xs, which);
                for i in 0..xs.len() {
                    let h = 1e-6;
                    let mut up = xs.clone();
                    up[i] += h;
                    let mut dn = xs.clone();
                    dn[i] -= h;
                    let fd = (eval(&up, which).0 - eval(&dn, which).0) / (2.0 * h);
                    assert!(rel_close(g[i], fd, 1e-5), "op {which} coord {i}: {} vs {fd}", g[i]);
                }
            }
        }
    }
}
