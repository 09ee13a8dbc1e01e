use crate::autodiff::{Graph, Real, Result, Var};

/// Mean of `(|f_i| - h_i)^2`. Invariant under `f -> -f`.
pub fn sal_loss<T: Real>(g: &mut Graph<T>, f: Var, h: Var) -> Result<Var> {
    let a = g.abs(f);
    let d = g.sub(a, h)?;
    let s = g.square(d);
    g.mean_all(s)
}

/// KL divergence of `N(mu, diag exp eta)` from the standard normal.
pub fn kl_loss<T: Real>(g: &mut Graph<T>, mu: Var, eta: Var) -> Result<Var> {
    let e = g.exp(eta);
    let m2 = g.square(mu);
    let s = g.add(e, m2)?;
    let s = g.sub(s, eta)?;
    let s = g.add_scalar(s, T::lit(-1.0));
    let total = g.sum_all(s);
    Ok(g.scale(total, T::lit(0.5)))
}

/// `sal + lambda * kl`.
pub fn total_loss<T: Real>(g: &mut Graph<T>, f: Var, h: Var, mu: Var, eta: Var, lambda: T) -> Result<Var> {
    let sal = sal_loss(g, f, h)?;
    let kl = kl_loss(g, mu, eta)?;
    let weighted = g.scale(kl, lambda);
    g.add(sal, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck_blocks, Tensor};
    use proptest::prelude::*;

    fn eval(f: &[f64], h: &[f64]) -> f64 {
        let mut g = Graph::<f64>::new();
        let f = g.constant(Tensor::new(vec![f.len()], f.to_vec()));
        let h = g.constant(Tensor::new(vec![h.len()], h.to_vec()));
        let l = sal_loss(&mut g, f, h).unwrap();
        g.value(l).item()
    }

    fn kl(mu: &[f64], eta: &[f64]) -> f64 {
        let mut g = Graph::<f64>::new();
        let m = g.constant(Tensor::new(vec![mu.len()], mu.to_vec()));
        let e = g.constant(Tensor::new(vec![eta.len()], eta.to_vec()));
        let l = kl_loss(&mut g, m, e).unwrap();
        g.value(l).item()
    }

    #[test]
    fn sal_examples() {
        assert_eq!(eval(&[0.5, 1.0], &[0.5, 1.0]), 0.0);
        assert_eq!(eval(&[-0.5, -1.0], &[0.5, 1.0]), 0.0);
        assert_eq!(eval(&[2.0, -2.0], &[1.0, 1.0]), 1.0);
    }

    #[test]
    fn sal_shape_mismatch() {
        let mut g = Graph::<f64>::new();
        let f = g.constant(Tensor::zeros(vec![3]));
        let h = g.constant(Tensor::zeros(vec![4]));
        assert!(sal_loss(&mut g, f, h).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl(&[0.0; 256], &[0.0; 256]), 0.0);
        assert_eq!(kl(&[1.0], &[0.0]), 0.5);
        let expected = 0.5 * (2.0 - 1.0 - 2f64.ln());
        assert!((kl(&[0.0], &[2f64.ln()]) - expected).abs() < 1e-15);
        assert!((expected - 0.15343).abs() < 1e-5);
    }

    #[test]
    fn total_examples() {
        let mut g = Graph::<f64>::new();
        let f = g.constant(Tensor::new(vec![2], vec![0.3, -0.2]));
        let h = g.constant(Tensor::new(vec![2], vec![0.1, 0.4]));
        let mu = g.constant(Tensor::new(vec![2], vec![0.5, -1.0]));
        let eta = g.constant(Tensor::new(vec![2], vec![0.2, 0.1]));
        let sal = sal_loss(&mut g, f, h).unwrap();
        let t0 = total_loss(&mut g, f, h, mu, eta, 0.0).unwrap();
        assert_eq!(g.value(t0).item(), g.value(sal).item());

        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::new(vec![2], vec![0.3, 0.4]));
        let z = g.constant(Tensor::zeros(vec![2]));
        for lambda in [0.0, 1e-3, 7.0] {
            let t = total_loss(&mut g, v, v, z, z, lambda).unwrap();
            assert_eq!(g.value(t).item(), 0.0);
        }
    }

    #[test]
    fn loss_gradcheck() {
        let inputs = vec![
            Tensor::new(vec![6], vec![0.3, -0.7, 1.2, -0.1, 0.9, -1.4]),
            Tensor::new(vec![6], vec![0.2, 0.1, 0.5, 0.4, 1.1, 0.3]),
            Tensor::new(vec![4], vec![0.3, -0.2, 0.8, 0.0]),
            Tensor::new(vec![4], vec![0.1, -0.5, 0.4, 0.2]),
        ];
        let report = gradcheck_blocks(
            |g, v| total_loss(g, v[0], v[1], v[2], v[3], 0.37),
            &inputs,
            1e-5,
            None,
        )
        .unwrap();
        assert!(report.max_error() < 1e-6, "{report:?}");
    }

    proptest! {
        #[test]
        fn kl_nonnegative(mu in prop::collection::vec(-3.0f64..3.0, 1..16), seed in prop::collection::vec(-3.0f64..3.0, 16)) {
            let eta = &seed[..mu.len()];
            prop_assert!(kl(&mu, eta) >= 0.0);
        }

        #[test]
        fn sal_sign_symmetric(pairs in prop::collection::vec((-5.0f64..5.0, 0.0f64..5.0), 1..32)) {
            let f: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let nf: Vec<f64> = f.iter().map(|v| -v).collect();
            let h: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assert_eq!(eval(&f, &h).to_bits(), eval(&nf, &h).to_bits());
        }
    }
}
