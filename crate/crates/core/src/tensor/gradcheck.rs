use super::{Result, Tape, Tensor, TensorError, Var};

/// Largest `|analytic − numeric| / max(1, |numeric|)` over every entry of
/// every leaf, the numeric value being a central difference with step
/// `epsilon`.
///
/// `f` is rebuilt on a fresh tape for each evaluation and must return a
/// `1 × 1` var.
pub fn grad_check<F>(f: F, leaves: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(TensorError::Usage(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&tape, &vars)?;
        scalar_of(out)
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = leaves.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&tape, &vars)?;
    scalar_of(out)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut worst = 0.0_f64;
    let mut shifted: Vec<Tensor> = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        for k in 0..leaf.len() {
            let orig = leaf.data()[k];
            shifted[li].data_mut()[k] = orig + epsilon;
            let plus = eval(&shifted)?;
            shifted[li].data_mut()[k] = orig - epsilon;
            let minus = eval(&shifted)?;
            shifted[li].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = (analytic[li].data()[k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn scalar_of(v: Var<'_>) -> Result<f64> {
    let (r, c) = v.shape();
    if (r, c) != (1, 1) {
        return Err(TensorError::Usage(format!("gradient check needs a scalar output, got {r}x{c}")));
    }
    Ok(v.item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_fn(3, 4, |i, j| (i as f64) * 0.3 - j as f64);
        let err = grad_check(|_, l| l[0].sum(), &[x], 1e-5).unwrap();
        assert!(err <= 1e-10);
    }

    #[test]
    fn sigmoid_of_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let w = Tensor::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let err = grad_check(
            |tape, l| tape.constant(x.clone()).matmul(l[0])?.sigmoid().sum(),
            &[w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4);
    }

    #[test]
    fn non_scalar_output_is_usage_error() {
        let r = grad_check(|_, l| Ok(l[0]), &[Tensor::ones(2, 2)], 1e-5);
        assert!(matches!(r, Err(TensorError::Usage(_))));
    }

    #[test]
    fn epsilon_out_of_range() {
        let r = grad_check(|_, l| l[0].sum(), &[Tensor::ones(1, 1)], 0.1);
        assert!(matches!(r, Err(TensorError::Usage(_))));
    }
}
