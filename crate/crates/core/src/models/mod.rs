//! The Hybrid Code Network family.
//!
//! All three variants share a dialog-level LSTM over
//! `[turn vector, BoW, context, previous action, action mask]` and a
//! one-hidden-layer predictor. They differ in the turn encoder:
//!
//! * HCN: mean of frozen word embeddings,
//! * HHCN: last hidden state of a turn-level LSTM,
//! * VHCN: a Gaussian latent `z` on top of the turn LSTM, trained jointly
//!   with a bag-of-words decoder and a closed-form KL term.

mod network;
mod persist;
#[cfg(test)]
mod tests;

pub use network::{DialogState, Model, TurnTrace};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::corpus::FeaturizedDialog;
use crate::error::{Error, Result};
use crate::nncore::{bow_sigmoid_ce, gaussian_kl, grad_check, softmax_ce};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Hcn,
    Hhcn,
    Vhcn,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Hcn => "hcn",
            Variant::Hhcn => "hhcn",
            Variant::Vhcn => "vhcn",
        }
    }

    /// Display name, e.g. `TD-HCN` when trained with turn dropout.
    pub fn label(self, turn_dropout: bool) -> String {
        let name = self.as_str().to_uppercase();
        if turn_dropout {
            format!("TD-{name}")
        } else {
            name
        }
    }

    /// Tuned turn dropout ratio for this architecture.
    pub fn default_turn_dropout(self) -> f64 {
        match self {
            Variant::Hcn => 0.4,
            Variant::Hhcn => 0.6,
            Variant::Vhcn => 0.3,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hcn" => Ok(Variant::Hcn),
            "hhcn" => Ok(Variant::Hhcn),
            "vhcn" => Ok(Variant::Vhcn),
            other => Err(Error::Config(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub embedding_dim: usize,
    /// VHCN only.
    pub latent_dim: Option<usize>,
    pub dialog_hidden: usize,
    pub predictor_hidden: usize,
    pub word_dropout: f64,
    pub embeddings_path: Option<PathBuf>,
}

impl ModelConfig {
    /// Tuned sizes: embeddings 64 / 128 / 128, latent 8 for VHCN.
    pub fn for_variant(variant: Variant) -> Self {
        let (embedding_dim, latent_dim) = match variant {
            Variant::Hcn => (64, None),
            Variant::Hhcn => (128, None),
            Variant::Vhcn => (128, Some(8)),
        };
        ModelConfig {
            variant,
            embedding_dim,
            latent_dim,
            dialog_hidden: 128,
            predictor_hidden: 128,
            word_dropout: 0.2,
            embeddings_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.variant, self.latent_dim) {
            (Variant::Vhcn, None) | (Variant::Vhcn, Some(0)) => {
                return Err(Error::Config("VHCN needs a positive latent size".into()))
            }
            (Variant::Hcn | Variant::Hhcn, Some(_)) => {
                return Err(Error::Config(format!("{} has no latent variable", self.variant)))
            }
            _ => {}
        }
        if self.embedding_dim == 0 || self.dialog_hidden == 0 || self.predictor_hidden == 0 {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.word_dropout) {
            return Err(Error::Config(format!("word dropout {} outside [0, 1]", self.word_dropout)));
        }
        Ok(())
    }

    /// Size of the vector the turn encoder hands to the dialog LSTM.
    pub fn turn_dim(&self) -> usize {
        match self.variant {
            Variant::Hcn | Variant::Hhcn => self.embedding_dim,
            Variant::Vhcn => self.latent_dim.unwrap_or(0),
        }
    }
}

/// Latent posterior of one VHCN turn.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeEncoding {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub z: Vec<f64>,
}

/// Per-term loss, summed over the turns it covers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub action: f64,
    pub bow: f64,
    pub kl: f64,
    pub turns: usize,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.action + self.bow + self.kl
    }
}

impl std::ops::AddAssign for LossBreakdown {
    fn add_assign(&mut self, rhs: Self) {
        self.action += rhs.action;
        self.bow += rhs.bow;
        self.kl += rhs.kl;
        self.turns += rhs.turns;
    }
}

/// Negative log-likelihood of the target action.
pub fn loss_hcn(logits: &[f64], target: usize, mask: &[u8]) -> Result<f64> {
    softmax_ce(logits, target, mask)
}

/// Single-sample negative evidence lower bound with the BoW reconstruction
/// term: action NLL + BoW sigmoid cross-entropy + KL.
pub fn loss_vhcn(
    logits: &[f64],
    target: usize,
    mask: &[u8],
    encoding: &VaeEncoding,
    bow_logits: &[f64],
    bow_target: &[f64],
) -> Result<(f64, LossBreakdown)> {
    let parts = LossBreakdown {
        action: softmax_ce(logits, target, mask)?,
        bow: bow_sigmoid_ce(bow_logits, bow_target)?,
        kl: gaussian_kl(&encoding.mu, &encoding.sigma)?,
        turns: 1,
    };
    Ok((parts.total(), parts))
}

/// Finite-difference check of [`Model::forward_backward`] on one dialog
/// with fixed noise. Returns the largest relative error over every
/// trainable parameter.
pub fn gradient_check(model: &Model, dialog: &FeaturizedDialog, noise: &[Vec<f64>], h: f64) -> Result<f64> {
    let mut analytic = model.clone();
    analytic.zero_grad();
    analytic.forward_backward(dialog, noise)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (i, param) in analytic.parameters().into_iter().enumerate() {
        if !param.trainable {
            continue;
        }
        let point = param.value.data().to_vec();
        let mut failure = None;
        let err = grad_check(
            |x| {
                probe.parameters_mut()[i].value.data_mut().copy_from_slice(x);
                match probe.dialog_loss(dialog, noise) {
                    Ok(l) => l.total(),
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            &point,
            param.grad.data(),
            h,
        );
        probe.parameters_mut()[i].value.data_mut().copy_from_slice(&point);
        if let Some(e) = failure {
            return Err(e);
        }
        worst = worst.max(err.map_err(|e| Error::InvalidValue(format!("{}: {e}", param.name)))?);
    }
    Ok(worst)
}

#[cfg(test)]
mod loss_tests {
    use super::*;

    #[test]
    fn variant_parsing_and_labels() {
        assert_eq!("VHCN".parse::<Variant>().unwrap(), Variant::Vhcn);
        assert!("lstm".parse::<Variant>().is_err());
        assert_eq!(Variant::Hcn.label(true), "TD-HCN");
        assert_eq!(Variant::Hhcn.label(false), "HHCN");
    }

    #[test]
    fn config_defaults_and_validation() {
        let v = ModelConfig::for_variant(Variant::Vhcn);
        assert_eq!((v.embedding_dim, v.latent_dim, v.turn_dim()), (128, Some(8), 8));
        assert_eq!(ModelConfig::for_variant(Variant::Hcn).embedding_dim, 64);
        for variant in [Variant::Hcn, Variant::Hhcn, Variant::Vhcn] {
            ModelConfig::for_variant(variant).validate().unwrap();
        }
        let mut bad = ModelConfig::for_variant(Variant::Hcn);
        bad.latent_dim = Some(8);
        assert!(bad.validate().is_err());
        let mut bad = ModelConfig::for_variant(Variant::Vhcn);
        bad.latent_dim = None;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hcn_loss_cases() {
        assert!(loss_hcn(&[50.0, 0.0, 0.0], 0, &[1; 3]).unwrap() < 1e-20);
        assert!((loss_hcn(&[0.0; 4], 3, &[1; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn vhcn_loss_terms() {
        let enc = VaeEncoding { mu: vec![0.0; 3], sigma: vec![1.0; 3], z: vec![0.0; 3] };
        let (total, parts) = loss_vhcn(&[0.2, -0.1], 1, &[1, 1], &enc, &[0.3, -2.0, 1.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(parts.kl, 0.0);
        assert!(total >= parts.action && total >= parts.bow && total >= parts.kl);

        let enc = VaeEncoding { mu: vec![0.4, -0.3], sigma: vec![0.7, 1.9], z: vec![0.1, 0.2] };
        let logits = [0.5, -1.5, 2.0];
        let bow_logits = [1.0, -1.0, 0.25];
        let bow = [1.0, 0.0, 0.0];
        let (total, _) = loss_vhcn(&logits, 2, &[1; 3], &enc, &bow_logits, &bow).unwrap();
        // Term-wise oracle from the textbook formulas.
        let ce = -(2.0f64.exp() / logits.iter().map(|l: &f64| l.exp()).sum::<f64>()).ln();
        let bce: f64 = bow_logits
            .iter()
            .zip(&bow)
            .map(|(l, t): (&f64, &f64)| {
                let s = 1.0 / (1.0 + (-l).exp());
                -(t * s.ln() + (1.0 - t) * (1.0 - s).ln())
            })
            .sum();
        let kl: f64 = enc.mu.iter().zip(&enc.sigma).map(|(m, s)| 0.5 * (m * m + s * s - 1.0) - s.ln()).sum();
        assert!((total - (ce + bce + kl)).abs() < 1e-6);
    }
}
