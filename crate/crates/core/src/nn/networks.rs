use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    decoder_layers, encoder_layers, Arch, BoundParams, NnError, Result, DECODER_INPUT_DIM,
    LATENT_DIM, POINT_DIM, SKIP_LAYER,
};
use crate::autodiff::{Graph, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMode {
    /// `z = mu + exp(eta / 2) * eps`, `eps ~ N(0, I)`.
    Stochastic,
    /// `z = mu`.
    Mean,
}

fn check_points<T: Real>(g: &Graph<T>, points: Var, what: &'static str) -> Result<usize> {
    let s = g.shape(points);
    if s.len() != 2 || s[0] != POINT_DIM || s[1] == 0 {
        return Err(NnError::Dimension { what, expected: "[3, N >= 1]".into(), got: s.to_vec() });
    }
    Ok(s[1])
}

/// Maps a `[3, N]` cloud to `(mu, eta)`, each `[256]`.
pub fn encoder_forward<T: Real>(g: &mut Graph<T>, p: &BoundParams, points: Var) -> Result<(Var, Var)> {
    check_points(g, points, "encoder input")?;
    let layers = encoder_layers();
    let mut x = points;
    for block in layers[..10].chunks(2) {
        let (we, be) = p.layer(&block[0])?;
        let (wp, bp) = p.layer(&block[1])?;
        let element = g.affine(x, we, be)?;
        let neighbours = g.maxpool_pairs(x)?;
        let pooled = g.affine(neighbours, wp, bp)?;
        let sum = g.add(element, pooled)?;
        x = g.relu(sum);
    }
    let (w, b) = p.layer(&layers[10])?;
    let h = g.affine(x, w, b)?;
    let h = g.relu(h);
    let global = g.global_maxpool(h)?;
    let global = g.reshape(global, &[512, 1])?;

    let mut head = |spec| -> Result<Var> {
        let (w, b) = p.layer(spec)?;
        let y = g.affine(global, w, b)?;
        Ok(g.reshape(y, &[LATENT_DIM])?)
    };
    let mu = head(&layers[11])?;
    let eta = head(&layers[12])?;
    Ok((mu, eta))
}

pub fn sample_latent<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    mu: Var,
    eta: Var,
    rng: &mut R,
    mode: LatentMode,
) -> Result<Var> {
    for (v, what) in [(mu, "mu"), (eta, "eta")] {
        if g.shape(v) != [LATENT_DIM] {
            return Err(NnError::Dimension { what, expected: "[256]".into(), got: g.shape(v).to_vec() });
        }
    }
    match mode {
        LatentMode::Mean => Ok(mu),
        LatentMode::Stochastic => {
            let eps: Vec<T> = (0..LATENT_DIM)
                .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let eps = g.constant(Tensor::new(vec![LATENT_DIM], eps));
            let half = g.scale(eta, T::lit(0.5));
            let std = g.exp(half);
            let noise = g.mul(std, eps)?;
            Ok(g.add(mu, noise)?)
        }
    }
}

fn decode<T: Real>(g: &mut Graph<T>, p: &BoundParams, arch: Arch, z: Var, points: Var) -> Result<Var> {
    if g.shape(z) != [LATENT_DIM] {
        return Err(NnError::Dimension {
            what: "latent code",
            expected: "[256]".into(),
            got: g.shape(z).to_vec(),
        });
    }
    let m = check_points(g, points, "decoder queries")?;
    let zs = g.repeat_cols(z, m)?;
    let input = g.concat_rows(zs, points)?;
    debug_assert_eq!(g.shape(input)[0], DECODER_INPUT_DIM);

    let layers = decoder_layers(arch);
    let (hidden, out) = layers.split_at(layers.len() - 1);
    let mut x = input;
    for (i, spec) in hidden.iter().enumerate() {
        if i == SKIP_LAYER {
            x = g.concat_rows(x, input)?;
        }
        let (w, b) = p.layer(spec)?;
        let y = g.affine(x, w, b)?;
        x = g.relu(y);
    }
    let (w, b) = p.layer(&out[0])?;
    let y = g.affine(x, w, b)?;
    Ok(g.reshape(y, &[m])?)
}

/// LightSAL decoder: one value per query column of `points`.
pub fn decoder_forward<T: Real>(g: &mut Graph<T>, p: &BoundParams, z: Var, points: Var) -> Result<Var> {
    decode(g, p, Arch::LightSal, z, points)
}

/// Baseline SAL decoder (seven 512-wide layers plus the output layer).
pub fn baseline_decoder_forward<T: Real>(
    g: &mut Graph<T>,
    p: &BoundParams,
    z: Var,
    points: Var,
) -> Result<Var> {
    decode(g, p, Arch::SalBaseline, z, points)
}

impl Arch {
    /// Dispatches to the decoder matching this architecture.
    pub fn decode<T: Real>(self, g: &mut Graph<T>, p: &BoundParams, z: Var, points: Var) -> Result<Var> {
        decode(g, p, self, z, points)
    }
}
