use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of [`grad_check`]: the worst entry found.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central finite-difference formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error `O(h²)`.
    #[default]
    ThreePoint,
    /// `(f(x−2h) − 8f(x−h) + 8f(x+h) − f(x+2h)) / 12h`, error `O(h⁴)`.
    FivePoint,
}

/// Compares tape gradients of the scalar function `f` against central
/// differences over every entry of every parameter.
///
/// The relative error of an entry is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    grad_check_with(f, params, eps, Stencil::ThreePoint)
}

/// [`grad_check`] with a choice of difference formula.
pub fn grad_check_with<F>(f: F, params: &[Tensor], eps: f64, stencil: Stencil) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::domain(format!("finite-difference step {eps} outside (0, 1e-2]")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let out = f(&tape, &vars)?;
        scalar_value(&tape, out)
    };

    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = f(&tape, &vars)?;
    scalar_value(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut worst = GradCheck { max_rel_error: 0.0, param: 0, index: 0, analytic: 0.0, numeric: 0.0 };
    let mut work = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        for idx in 0..params[pi].len() {
            let analytic = grads.get(*var).map_or(0.0, |g| g.data()[idx]);
            let orig = work[pi].data()[idx];
            let mut at = |delta: f64| -> Result<f64> {
                work[pi].data_mut()[idx] = orig + delta;
                let v = eval(&work);
                work[pi].data_mut()[idx] = orig;
                v
            };
            let numeric = match stencil {
                Stencil::ThreePoint => (at(eps)? - at(-eps)?) / (2.0 * eps),
                Stencil::FivePoint => {
                    (at(-2.0 * eps)? - 8.0 * at(-eps)? + 8.0 * at(eps)? - at(2.0 * eps)?) / (12.0 * eps)
                }
            };
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            if rel > worst.max_rel_error || rel.is_nan() {
                worst = GradCheck { max_rel_error: rel, param: pi, index: idx, analytic, numeric };
            }
        }
    }
    Ok(worst)
}

fn scalar_value(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(&v);
    if t.len() != 1 {
        return Err(Error::domain(format!("gradient check needs a scalar function, got {:?}", t.dims())));
    }
    Ok(t.item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial() {
        let r = grad_check(|t, p| t.mul(&p[0], &p[0]), &[Tensor::scalar(3.0)], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert!((r.analytic - 6.0).abs() < 1e-12);
    }

    #[test]
    fn five_point_is_exact_on_quartics() {
        let quartic = |t: &Tape, p: &[Var]| {
            let sq = t.mul(&p[0], &p[0])?;
            Ok(t.sum(&t.mul(&sq, &sq)?))
        };
        let r = grad_check_with(quartic, &[Tensor::scalar(1.5)], 1e-2, Stencil::FivePoint).unwrap();
        assert!(r.max_rel_error < 1e-12, "{r:?}");
        let r = grad_check(quartic, &[Tensor::scalar(1.5)], 1e-2).unwrap();
        assert!(r.max_rel_error > 1e-6);
    }

    #[test]
    fn rejects_non_scalar_and_bad_eps() {
        let p = [Tensor::vector(vec![1.0, 2.0])];
        assert_eq!(grad_check(|t, p| Ok(t.tanh(&p[0])), &p, 1e-5).unwrap_err().category(), "domain");
        assert_eq!(grad_check(|t, p| Ok(t.sum(&p[0])), &p, 0.5).unwrap_err().category(), "domain");
        assert_eq!(grad_check(|t, p| Ok(t.sum(&p[0])), &p, 0.0).unwrap_err().category(), "domain");
    }
}
