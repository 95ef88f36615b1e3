use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::graph::Var;
use crate::scalar::Scalar;
use crate::tensor::{broadcast_shapes, Tensor};

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn apply<T: Scalar>(op: BinOp, a: T, b: T) -> T {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
    }
}

fn binary_kernel<T: Scalar>(op: BinOp, a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, |x, y| apply(op, x, y));
    }
    if b.len() == 1 {
        let y = b.data()[0];
        let out = a.map(|x| apply(op, x, y));
        let shape = broadcast_shapes(a.shape(), b.shape()).expect("broadcast");
        return out.reshape(shape);
    }
    if a.len() == 1 {
        let x = a.data()[0];
        let out = b.map(|y| apply(op, x, y));
        let shape = broadcast_shapes(a.shape(), b.shape()).expect("broadcast");
        return out.reshape(shape);
    }
    let shape = broadcast_shapes(a.shape(), b.shape())
        .unwrap_or_else(|| panic!("shapes {:?} and {:?} do not broadcast", a.shape(), b.shape()));
    let ab = a.broadcast_to(&shape);
    let bb = b.broadcast_to(&shape);
    ab.zip_map(&bb, |x, y| apply(op, x, y))
}

fn binary<T: Scalar>(op: BinOp, a: &Var<T>, b: &Var<T>) -> Var<T> {
    let out = binary_kernel(op, a.value(), b.value());
    Var::from_op(out, vec![a.clone(), b.clone()], move |g, _out, p| {
        let (a, b) = (p[0].value(), p[1].value());
        let ga = p[0].requires_grad().then(|| {
            let full = match op {
                BinOp::Add | BinOp::Sub => g.clone(),
                BinOp::Mul => binary_kernel(BinOp::Mul, g, b),
                BinOp::Div => binary_kernel(BinOp::Div, g, b),
            };
            full.sum_to(a.shape())
        });
        let gb = p[1].requires_grad().then(|| {
            let full = match op {
                BinOp::Add => g.clone(),
                BinOp::Sub => g.map(|v| -v),
                BinOp::Mul => binary_kernel(BinOp::Mul, g, a),
                BinOp::Div => {
                    // d(a/b)/db = -a / b^2
                    let q = binary_kernel(BinOp::Div, a, &b.map(|v| v * v));
                    binary_kernel(BinOp::Mul, g, &q).map(|v| -v)
                }
            };
            full.sum_to(b.shape())
        });
        vec![ga, gb]
    })
}

/// Elementwise op whose derivative is a function of (input, output).
fn unary<T: Scalar>(
    x: &Var<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Var<T> {
    let out = x.value().map(f);
    Var::from_op(out, vec![x.clone()], move |g, out, p| {
        let xin = p[0].value().data();
        let data = g
            .data()
            .iter()
            .zip(xin)
            .zip(out.data())
            .map(|((&gv, &xv), &yv)| gv * df(xv, yv))
            .collect();
        vec![Some(Tensor::new(g.shape().to_vec(), data))]
    })
}

impl<T: Scalar> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Var<T> {
        binary(BinOp::Add, self, other)
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        binary(BinOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        binary(BinOp::Mul, self, other)
    }

    pub fn div(&self, other: &Var<T>) -> Var<T> {
        binary(BinOp::Div, self, other)
    }

    /// Multiply by a constant tensor (masks, fixed weights).
    pub fn mul_const(&self, c: &Tensor<T>) -> Var<T> {
        binary(BinOp::Mul, self, &Var::constant(c.clone()))
    }

    pub fn add_const(&self, c: &Tensor<T>) -> Var<T> {
        binary(BinOp::Add, self, &Var::constant(c.clone()))
    }

    pub fn scale(&self, s: f64) -> Var<T> {
        let s = T::lit(s);
        unary(self, move |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Var<T> {
        let s = T::lit(s);
        unary(self, move |v| v + s, |_, _| T::one())
    }

    pub fn neg(&self) -> Var<T> {
        unary(self, |v| -v, |_, _| -T::one())
    }

    pub fn exp(&self) -> Var<T> {
        unary(self, |v| v.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Var<T> {
        unary(self, |v| v.ln(), |x, _| T::one() / x)
    }

    pub fn sqrt(&self) -> Var<T> {
        unary(self, |v| v.sqrt(), |_, y| T::lit(0.5) / y)
    }

    pub fn square(&self) -> Var<T> {
        unary(self, |v| v * v, |x, _| T::lit(2.0) * x)
    }

    /// `|x|` with subgradient 0 at the origin.
    pub fn abs(&self) -> Var<T> {
        unary(
            self,
            |v| v.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn powf(&self, p: f64) -> Var<T> {
        let pt = T::lit(p);
        unary(self, move |v| v.powf(pt), move |x, _| pt * x.powf(pt - T::one()))
    }

    pub fn relu(&self) -> Var<T> {
        unary(self, |v| v.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s = T::lit(slope);
        unary(
            self,
            move |v| if v > T::zero() { v } else { v * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn sigmoid(&self) -> Var<T> {
        unary(
            self,
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(&self) -> Var<T> {
        unary(self, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    /// `max(x, floor)` with the gradient routed to `x` where it wins.
    pub fn clamp_min(&self, floor: f64) -> Var<T> {
        let f = T::lit(floor);
        unary(self, move |v| v.max(f), move |x, _| if x > f { T::one() } else { T::zero() })
    }

    /// Elementwise maximum of two vars of identical shape.
    pub fn maximum(&self, other: &Var<T>) -> Var<T> {
        assert_eq!(self.shape(), other.shape(), "maximum shape mismatch");
        let out = self.value().zip_map(other.value(), |a, b| a.max(b));
        Var::from_op(out, vec![self.clone(), other.clone()], |g, _, p| {
            let (a, b) = (p[0].value(), p[1].value());
            let pick_a: Vec<bool> = a.data().iter().zip(b.data()).map(|(x, y)| x >= y).collect();
            let ga = Tensor::new(
                g.shape().to_vec(),
                g.data().iter().zip(&pick_a).map(|(&v, &k)| if k { v } else { T::zero() }).collect(),
            );
            let gb = Tensor::new(
                g.shape().to_vec(),
                g.data().iter().zip(&pick_a).map(|(&v, &k)| if k { T::zero() } else { v }).collect(),
            );
            vec![Some(ga), Some(gb)]
        })
    }
}

macro_rules! impl_operator {
    ($trait:ident, $method:ident, $inner:ident) => {
        impl<T: Scalar> $trait<&Var<T>> for &Var<T> {
            type Output = Var<T>;
            fn $method(self, rhs: &Var<T>) -> Var<T> {
                Var::$inner(self, rhs)
            }
        }
        impl<T: Scalar> $trait<Var<T>> for Var<T> {
            type Output = Var<T>;
            fn $method(self, rhs: Var<T>) -> Var<T> {
                Var::$inner(&self, &rhs)
            }
        }
        impl<T: Scalar> $trait<&Var<T>> for Var<T> {
            type Output = Var<T>;
            fn $method(self, rhs: &Var<T>) -> Var<T> {
                Var::$inner(&self, rhs)
            }
        }
        impl<T: Scalar> $trait<Var<T>> for &Var<T> {
            type Output = Var<T>;
            fn $method(self, rhs: Var<T>) -> Var<T> {
                Var::$inner(self, &rhs)
            }
        }
    };
}

impl_operator!(Add, add, add);
impl_operator!(Sub, sub, sub);
impl_operator!(Mul, mul, mul);
impl_operator!(Div, div, div);

impl<T: Scalar> Neg for &Var<T> {
    type Output = Var<T>;
    fn neg(self) -> Var<T> {
        Var::neg(self)
    }
}

impl<T: Scalar> Neg for Var<T> {
    type Output = Var<T>;
    fn neg(self) -> Var<T> {
        Var::neg(&self)
    }
}
