//! Finite-difference gradient battery shared by the command line and the
//! acceptance suite. Every check runs in 64-bit precision on inputs held
//! away from the kinks of relu, abs and max pooling.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradcheck_blocks, AutodiffError, Graph, Result, Tensor, Var};
use crate::nn::{self, encoder_forward, Arch, BoundParams, InitScheme, LatentMode, NnError, LATENT_DIM};
use crate::training::{kl_loss, sal_loss, shape_objective, total_loss};

/// Relative error bound every check must stay under.
pub const THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckScope {
    All,
    Autodiff,
    Nn,
    Training,
}

impl FromStr for CheckScope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(Self::All),
            "autodiff" => Ok(Self::Autodiff),
            "nn" => Ok(Self::Nn),
            "training" => Ok(Self::Training),
            other => Err(format!("unknown module `{other}` (expected all, autodiff, nn or training)")),
        }
    }
}

impl fmt::Display for CheckScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::All => "all",
            Self::Autodiff => "autodiff",
            Self::Nn => "nn",
            Self::Training => "training",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub error: f64,
    /// `(block, component)` of the worst component.
    pub worst: (usize, usize),
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.error < THRESHOLD
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    random(shape, seed).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// Distinct values on a coarse lattice so no max-pool comparison is close.
fn spread(shape: &[usize], stride: usize) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| ((i * stride) % n) as f64 * (3.0 / n as f64) - 1.5).collect())
}

fn run<F>(name: &'static str, inputs: &[Tensor<f64>], eps: f64, subsample: Option<(usize, u64)>, f: F) -> Result<CheckOutcome>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let r = gradcheck_blocks(f, inputs, eps, subsample)?;
    Ok(CheckOutcome { name, error: r.worst.2, worst: (r.worst.0, r.worst.1) })
}

fn nn_err(e: NnError) -> AutodiffError {
    match e {
        NnError::Autodiff(e) => e,
        other => AutodiffError::Contract { op: "network", msg: other.to_string() },
    }
}

fn autodiff_checks(out: &mut Vec<CheckOutcome>) -> Result<()> {
    out.push(run("affine", &[random(&[4, 6], 1), random(&[3, 4], 3), random(&[3], 2)], 1e-4, None, |g, v| {
        let y = g.affine(v[0], v[1], v[2])?;
        g.mean_all(y)
    })?);
    out.push(run("relu", &[away_from_zero(&[3, 5], 7)], 1e-4, None, |g, v| {
        let y = g.relu(v[0]);
        let y = g.square(y);
        g.mean_all(y)
    })?);
    let elementwise = [away_from_zero(&[4, 3], 11), away_from_zero(&[4, 3], 12), random(&[2, 3], 13)];
    out.push(run("elementwise", &elementwise, 1e-4, None, |g, v| {
        let s = g.add(v[0], v[1])?;
        let d = g.sub(v[0], v[1])?;
        let p = g.mul(s, d)?;
        let q = g.abs(v[0]);
        let e = g.exp(v[1]);
        let e = g.scale(e, 0.3);
        let r = g.add(q, e)?;
        let r = g.add(r, p)?;
        let cat = g.concat_rows(r, v[2])?;
        let mid = g.slice_rows(cat, 1, 5)?;
        let sq = g.square(mid);
        let sq = g.add_scalar(sq, 2.0);
        let flat = g.reshape(sq, &[12])?;
        g.mean_all(flat)
    })?);
    out.push(run("maxpool_pairs", &[spread(&[2, 5], 7)], 1e-4, None, |g, v| {
        let y = g.maxpool_pairs(v[0])?;
        let y = g.square(y);
        g.mean_all(y)
    })?);
    out.push(run("global_maxpool", &[spread(&[3, 4], 5)], 1e-4, None, |g, v| {
        let y = g.global_maxpool(v[0])?;
        let y = g.square(y);
        g.mean_all(y)
    })?);
    out.push(run("repeat_cols", &[random(&[3], 41)], 1e-4, None, |g, v| {
        let r = g.repeat_cols(v[0], 4)?;
        let r = g.square(r);
        Ok(g.sum_all(r))
    })?);
    Ok(())
}

fn network_check(name: &'static str, arch: Arch, with_encoder: bool) -> Result<CheckOutcome> {
    let params = nn::init_params(arch, InitScheme::ScaledUniform, 13).map_err(nn_err)?.cast::<f64>();
    let names: Vec<String> =
        params.names().filter(|n| with_encoder || n.starts_with("decoder.")).map(str::to_string).collect();
    let tensors: Vec<Tensor<f64>> = names.iter().map(|n| params.get(n).expect("listed name").clone()).collect();
    let points = random(&[3, 8], 17);
    let z = Tensor::new(vec![LATENT_DIM], (0..LATENT_DIM).map(|i| (i as f64 * 0.13).cos() * 0.5).collect());
    run(name, &tensors, 1e-4, Some((6, 99)), |g, vars| {
        let p = BoundParams::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
        let x = g.constant(points.clone());
        let z = if with_encoder {
            let (mu, eta) = encoder_forward(g, &p, x).map_err(nn_err)?;
            let e = g.scale(eta, 0.1);
            g.add(mu, e)?
        } else {
            g.constant(z.clone())
        };
        let f = arch.decode(g, &p, z, x).map_err(nn_err)?;
        g.mean_all(f)
    })
}

fn training_checks(out: &mut Vec<CheckOutcome>) -> Result<()> {
    let f = away_from_zero(&[16], 61);
    let h = random(&[16], 62).map(f64::abs);
    out.push(run("sal_loss", &[f], 1e-4, None, |g, v| {
        let h = g.constant(h.clone());
        sal_loss(g, v[0], h)
    })?);
    out.push(run("kl_loss", &[random(&[8], 63), random(&[8], 64)], 1e-4, None, |g, v| kl_loss(g, v[0], v[1]))?);
    let parts = [away_from_zero(&[6], 65), random(&[8], 66), random(&[8], 67)];
    let h = random(&[6], 68).map(f64::abs);
    out.push(run("total_loss", &parts, 1e-4, None, |g, v| {
        let h = g.constant(h.clone());
        total_loss(g, v[0], h, v[1], v[2], 0.5)
    })?);

    // Whole objective from raw parameters through encoder, latent sample and decoder.
    let params = nn::init_params(Arch::LightSal, InitScheme::GeometricSphere, 5).map_err(nn_err)?.cast::<f64>();
    let names: Vec<String> = params.names().map(String::from).collect();
    let tensors: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let cloud = random(&[3, 8], 71);
    let queries = random(&[3, 8], 72).map(|v| 1.05 * v);
    let h = random(&[8], 73).map(|v| 0.2 + 0.3 * v.abs());
    out.push(run(
        "total_loss through encoder and decoder",
        &tensors,
        // Encoder biases move ~10^3 relu and max-pool arguments at once; a
        // small step keeps every one of them on its side of the kink.
        1e-6,
        Some((3, 7)),
        |g, vars| {
            let bound = BoundParams::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            let x = g.constant(cloud.clone());
            let q = g.constant(queries.clone());
            let hv = g.constant(h.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let lv = shape_objective(g, &bound, Arch::LightSal, Some(x), q, hv, 0.5, (LatentMode::Stochastic, &mut rng))
                .map_err(|e| AutodiffError::Contract { op: "objective", msg: e.to_string() })?;
            Ok(lv.total)
        },
    )?);
    Ok(())
}

/// Runs every check in `scope`, in a fixed order.
pub fn run_gradchecks(scope: CheckScope) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    if matches!(scope, CheckScope::All | CheckScope::Autodiff) {
        autodiff_checks(&mut out)?;
    }
    if matches!(scope, CheckScope::All | CheckScope::Nn) {
        out.push(network_check("lightsal decoder", Arch::LightSal, false)?);
        out.push(network_check("sal-baseline decoder", Arch::SalBaseline, false)?);
        out.push(network_check("encoder and lightsal decoder", Arch::LightSal, true)?);
    }
    if matches!(scope, CheckScope::All | CheckScope::Training) {
        training_checks(&mut out)?;
    }
    Ok(out)
}

/// Check with the largest error.
pub fn worst(outcomes: &[CheckOutcome]) -> Option<&CheckOutcome> {
    outcomes.iter().max_by(|a, b| a.error.total_cmp(&b.error))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_tags() {
        for s in ["all", "autodiff", "nn", "training"] {
            assert_eq!(s.parse::<CheckScope>().unwrap().to_string(), s);
        }
        assert!("geometry".parse::<CheckScope>().is_err());
    }

    #[test]
    fn autodiff_scope_passes() {
        let out = run_gradchecks(CheckScope::Autodiff).unwrap();
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(CheckOutcome::passed), "{out:?}");
    }

    #[test]
    fn worst_picks_largest() {
        let mk = |name, error| CheckOutcome { name, error, worst: (0, 0) };
        let v = [mk("a", 1e-9), mk("b", 1e-4), mk("c", 1e-7)];
        assert_eq!(worst(&v).unwrap().name, "b");
        assert!(worst(&[]).is_none());
    }
}
