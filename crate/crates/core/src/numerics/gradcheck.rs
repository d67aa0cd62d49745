use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// Compares the tape gradient of a scalar-valued function against central
/// differences, coordinate by coordinate, in 64-bit arithmetic.
///
/// `build` receives a fresh graph and the input variable and must return a
/// scalar node. Returns the worst `|analytic - numeric| / max(|analytic|,
/// |numeric|, RELATIVE_ERROR_FLOOR)`.
pub fn finite_difference_check<F>(build: F, point: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Parameter(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let eval = |x: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let out = build(&mut g, v)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let x = g.param(point.clone());
    let out = build(&mut g, x)?;
    let grads = g.backward(out)?;
    let analytic = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()));

    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DetRng;

    #[test]
    fn linear_op_is_exact() {
        let w = Tensor::from_rows(&[&[0.5, -1.5], &[2.0, 0.25], &[1.0, 1.0]]);
        let point = Tensor::from_rows(&[&[0.3, -0.7, 1.1]]);
        let err = finite_difference_check(
            |g, x| {
                let wv = g.constant(w.clone());
                let y = g.matmul(x, wv)?;
                g.sum(y)
            },
            &point,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn cross_entropy_at_random_point() {
        let mut rng = DetRng::new(5);
        let point: Tensor<f64> = rng.normal_tensor(&[3, 5], 1.0);
        let err = finite_difference_check(|g, x| g.cross_entropy(x, &[1, 4, 0]), &point, 1e-5).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn gelu_at_half() {
        let point = Tensor::scalar(0.5f64);
        let err = finite_difference_check(
            |g, x| {
                let y = g.gelu(x)?;
                g.sum(y)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }
}
