//! Compensatory modality alignment: a framewise conditional VAE that
//! reconstructs one modality's embedding from the other's.
//!
//! Training encodes `[u_target ∥ u_cond]` into a per-frame diagonal
//! Gaussian and decodes a reparameterized sample together with `u_cond`.
//! At inference the target is absent, so latents are drawn from the
//! standard normal prior the KL term pulls the posterior towards.

use crate::error::{Error, Result};
use crate::latent::{gaussian_sample, kl_diag_gaussian_to_standard, GaussianLatent};
use crate::nn::Mlp;
use crate::params::{Graph, ParamId, ParamStore};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Facial,
    Speech,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Facial => "facial",
            Modality::Speech => "speech",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Modality::Facial => Modality::Speech,
            Modality::Speech => Modality::Facial,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmaConfig {
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    /// Prior samples averaged per frame when synthesizing a substitute.
    pub inference_samples: usize,
}

/// Alignment and KL terms of the CVAE objective, both per frame.
#[derive(Clone, Copy, Debug)]
pub struct CmaLoss {
    pub align: Var,
    pub kl: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmaModule {
    target: Modality,
    config: CmaConfig,
    encoder: Mlp,
    decoder: Mlp,
}

impl CmaModule {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, target: Modality, config: CmaConfig, rng: &mut RngState) -> Result<Self> {
        if [config.embed_dim, config.latent_dim, config.hidden_dim, config.inference_samples].contains(&0) {
            return Err(Error::Invalid(format!("CMA dimensions must be positive: {config:?}")));
        }
        let name = format!("cma_{}", target.name());
        let (du, dz, hid) = (config.embed_dim, config.latent_dim, config.hidden_dim);
        let encoder = Mlp::new(store, &format!("{name}.encoder"), 2 * du, hid, 2 * dz, rng);
        let decoder = Mlp::new(store, &format!("{name}.decoder"), dz + du, hid, du, rng);
        Ok(Self { target, config, encoder, decoder })
    }

    pub fn target(&self) -> Modality {
        self.target
    }

    pub fn config(&self) -> &CmaConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.encoder.params().into_iter().chain(self.decoder.params()).collect()
    }

    fn check_pair<S: Scalar>(&self, g: &Graph<'_, S>, a: Var, a_dim: usize, b: Var) -> Result<usize> {
        let sa = g.tape.shape(a);
        let sb = g.tape.shape(b);
        if sa.len() != 2 || sa[1] != a_dim {
            return Err(Error::Shape { op: "cma", lhs: sa.to_vec(), rhs: vec![sa[0], a_dim] });
        }
        if sb.len() != 2 || sb[1] != self.config.embed_dim {
            return Err(Error::Shape { op: "cma", lhs: sb.to_vec(), rhs: vec![sb[0], self.config.embed_dim] });
        }
        if sa[0] != sb[0] {
            return Err(Error::LengthMismatch(sa[0], sb[0]));
        }
        Ok(sa[0])
    }

    /// Posterior `N(mu, exp(log_var))` per frame, `[T × latent_dim]`.
    pub fn encode<S: Scalar>(&self, g: &mut Graph<'_, S>, u_target: Var, u_cond: Var) -> Result<GaussianLatent> {
        self.check_pair(g, u_target, self.config.embed_dim, u_cond)?;
        let x = g.tape.concat(&[u_target, u_cond], 1)?;
        let h = self.encoder.forward(g, x)?;
        let dz = self.config.latent_dim;
        let mu = g.tape.slice(h, 1, 0, dz)?;
        let log_var = g.tape.slice(h, 1, dz, dz)?;
        GaussianLatent::new(&mut g.tape, mu, log_var)
    }

    /// Substitute embedding `[T × embed_dim]` for latents `z` given the condition.
    pub fn decode<S: Scalar>(&self, g: &mut Graph<'_, S>, z: Var, u_cond: Var) -> Result<Var> {
        self.check_pair(g, z, self.config.latent_dim, u_cond)?;
        let x = g.tape.concat(&[z, u_cond], 1)?;
        self.decoder.forward(g, x)
    }

    /// Decodes prior draws `z ~ N(0, I)`; averages `inference_samples` decodes.
    pub fn infer_substitute<S: Scalar>(&self, g: &mut Graph<'_, S>, u_cond: Var, rng: &mut RngState) -> Result<Var> {
        let frames = g.tape.shape(u_cond)[0];
        let dz = self.config.latent_dim;
        let k = self.config.inference_samples;
        let mut acc: Option<Var> = None;
        for _ in 0..k {
            let z = Tensor::new(vec![frames, dz], rng.normals(frames * dz).into_iter().map(S::lit).collect())?;
            let z = g.input(z);
            let u = self.decode(g, z, u_cond)?;
            acc = Some(match acc {
                None => u,
                Some(prev) => g.tape.add(prev, u)?,
            });
        }
        let sum = acc.expect("inference_samples > 0");
        if k == 1 {
            Ok(sum)
        } else {
            g.tape.scale(sum, S::one() / S::from_count(k))
        }
    }

    /// `(L_align, L_KL)`: squared reconstruction error of a reparameterized
    /// posterior sample and the KL to the prior, each divided by `T`.
    pub fn loss<S: Scalar>(&self, g: &mut Graph<'_, S>, u_target: Var, u_cond: Var, rng: &mut RngState) -> Result<CmaLoss> {
        let frames = g.tape.shape(u_target)[0];
        let per_frame = S::one() / S::from_count(frames);
        let post = self.encode(g, u_target, u_cond)?;
        let z = gaussian_sample(&mut g.tape, post.mu, post.log_var, rng)?;
        let recon = self.decode(g, z, u_cond)?;
        let diff = g.tape.sub(u_target, recon)?;
        let sq = g.tape.square(diff)?;
        let sq = g.tape.sum(sq)?;
        let align = g.tape.scale(sq, per_frame)?;
        let kl = kl_diag_gaussian_to_standard(&mut g.tape, post.mu, post.log_var)?;
        let kl = g.tape.scale(kl, per_frame)?;
        Ok(CmaLoss { align, kl })
    }
}
