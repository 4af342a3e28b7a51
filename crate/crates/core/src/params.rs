//! Named parameter trees.
//!
//! Every parameter struct is generic over its leaf type: `Tensor` for
//! stored values, [`crate::Var`] once bound to a tape. The [`params!`]
//! macro derives `map` (value -> value, with dotted names) and
//! `for_each_mut` for a struct whose fields are tagged as
//! `leaf` (required tensor), `opt` (optional tensor), `node` (nested tree)
//! or `nodes` (vector of nested trees).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::Tensor;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

macro_rules! params {
    ($name:ident { $($kind:ident $field:ident),* $(,)? }) => {
        impl<T> $name<T> {
            pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> $name<U> {
                $name { $( $field: params!(@map $kind, self.$field, prefix, stringify!($field), f), )* }
            }

            pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
                $( params!(@each $kind, self.$field, prefix, stringify!($field), f); )*
            }

            pub fn for_each(&self, prefix: &str, f: &mut dyn FnMut(&str, &T)) {
                self.map(prefix, &mut |n, t| f(n, t));
            }
        }

        impl $name<$crate::numerics::Tensor> {
            /// Registers every tensor as a differentiable leaf on `tape`.
            pub fn bind(&self, tape: &$crate::numerics::Tape) -> $name<$crate::numerics::Var> {
                self.map("", &mut |_, t| tape.param(t))
            }
        }
    };
    (@map leaf, $v:expr, $p:ident, $n:expr, $f:ident) => {
        $f(&$crate::params::join($p, $n), &$v)
    };
    (@map opt, $v:expr, $p:ident, $n:expr, $f:ident) => {
        $v.as_ref().map(|t| $f(&$crate::params::join($p, $n), t))
    };
    (@map node, $v:expr, $p:ident, $n:expr, $f:ident) => {
        $v.map(&$crate::params::join($p, $n), $f)
    };
    (@map nodes, $v:expr, $p:ident, $n:expr, $f:ident) => {
        $v.iter()
            .enumerate()
            .map(|(i, x)| x.map(&$crate::params::join(&$crate::params::join($p, $n), &i.to_string()), $f))
            .collect()
    };
    (@each leaf, $v:expr, $p:ident, $n:expr, $f:ident) => {
        $f(&$crate::params::join($p, $n), &mut $v)
    };
    (@each opt, $v:expr, $p:ident, $n:expr, $f:ident) => {
        if let Some(t) = $v.as_mut() {
            $f(&$crate::params::join($p, $n), t)
        }
    };
    (@each node, $v:expr, $p:ident, $n:expr, $f:ident) => {
        $v.for_each_mut(&$crate::params::join($p, $n), $f)
    };
    (@each nodes, $v:expr, $p:ident, $n:expr, $f:ident) => {
        for (i, x) in $v.iter_mut().enumerate() {
            x.for_each_mut(&$crate::params::join(&$crate::params::join($p, $n), &i.to_string()), $f)
        }
    };
}

pub(crate) use params;

/// Draws initial parameter values.
pub struct Init<'a> {
    rng: &'a mut ChaCha8Rng,
    scale: f64,
}

impl<'a> Init<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng, scale: f64) -> Self {
        Self { rng, scale }
    }

    /// Uniform in `(-scale, scale)`.
    pub fn uniform(&mut self, dims: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(dims);
        let s = self.scale;
        for v in t.data_mut() {
            *v = self.rng.gen_range(-s..s);
        }
        t
    }

    pub fn constant(&mut self, dims: &[usize], value: f64) -> Tensor {
        Tensor::filled(dims, value)
    }
}
