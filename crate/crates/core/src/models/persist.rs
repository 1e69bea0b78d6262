use std::path::Path;

use super::{Model, ModelConfig, Variant};
use crate::corpus::{ActionSet, ContextSlots, Featurizer, Lexicon, Vocabulary};
use crate::error::{Error, Result};
use crate::nncore::checkpoint::{CheckpointFile, TensorRecord};
use crate::nncore::{Linear, LstmCell, Parameter};

fn parse_meta<T: std::str::FromStr>(file: &CheckpointFile, key: &str) -> Result<T> {
    let raw = file.require(key)?;
    raw.parse().map_err(|_| Error::InvalidValue(format!("checkpoint `{key}` has unreadable value `{raw}`")))
}

fn section<'a>(file: &'a CheckpointFile, name: &str) -> Result<&'a [String]> {
    file.section(name).ok_or_else(|| Error::InvalidValue(format!("checkpoint lacks section `{name}`")))
}

impl Model {
    /// Checkpoint with the model config, the featurizer tables and
    /// `extra_meta` (typically the run config) in the header.
    pub fn to_checkpoint(&self, featurizer: &Featurizer, extra_meta: &[(String, String)]) -> Result<CheckpointFile> {
        self.check_featurizer(featurizer)?;
        let c = &self.config;
        let mut meta = vec![
            ("model.variant".to_owned(), c.variant.to_string()),
            ("model.embedding_dim".to_owned(), c.embedding_dim.to_string()),
            ("model.latent_dim".to_owned(), c.latent_dim.map_or("none".into(), |k| k.to_string())),
            ("model.dialog_hidden".to_owned(), c.dialog_hidden.to_string()),
            ("model.predictor_hidden".to_owned(), c.predictor_hidden.to_string()),
            ("model.word_dropout".to_owned(), c.word_dropout.to_string()),
            ("vocab_hash".to_owned(), self.vocab_hash.clone()),
            ("action_hash".to_owned(), self.action_hash.clone()),
            ("fallback_id".to_owned(), self.fallback_id.to_string()),
        ];
        meta.extend(extra_meta.iter().cloned());
        let sections = vec![
            ("vocab".to_owned(), featurizer.vocab.tokens().to_vec()),
            ("actions".to_owned(), featurizer.actions.templates().to_vec()),
            ("lexicon".to_owned(), featurizer.lexicon.entries().iter().map(|(s, v)| format!("{s}\t{v}")).collect()),
            ("context_slots".to_owned(), featurizer.slots.names.to_vec()),
        ];
        let tensors = self.parameters().into_iter().map(TensorRecord::from_parameter).collect();
        Ok(CheckpointFile { meta, sections, tensors })
    }

    /// Rebuilds the model and its featurizer, verifying the stored hashes.
    pub fn from_checkpoint(file: &CheckpointFile) -> Result<(Model, Featurizer)> {
        let variant: Variant = file.require("model.variant")?.parse()?;
        let latent_dim = match file.require("model.latent_dim")? {
            "none" => None,
            _ => Some(parse_meta(file, "model.latent_dim")?),
        };
        let config = ModelConfig {
            variant,
            embedding_dim: parse_meta(file, "model.embedding_dim")?,
            latent_dim,
            dialog_hidden: parse_meta(file, "model.dialog_hidden")?,
            predictor_hidden: parse_meta(file, "model.predictor_hidden")?,
            word_dropout: parse_meta(file, "model.word_dropout")?,
            embeddings_path: None,
        };
        config.validate()?;

        let vocab = Vocabulary::from_tokens(section(file, "vocab")?);
        let templates = section(file, "actions")?;
        let fallback_id: usize = parse_meta(file, "fallback_id")?;
        let fallback = templates
            .get(fallback_id)
            .ok_or_else(|| Error::InvalidValue(format!("fallback id {fallback_id} outside the action list")))?;
        let actions = ActionSet::from_templates(templates, fallback);
        let lexicon = Lexicon::parse(&section(file, "lexicon")?.join("\n"))?;
        let slots = match section(file, "context_slots")? {
            [a, b, c] => ContextSlots { names: [a.clone(), b.clone(), c.clone()] },
            other => return Err(Error::InvalidValue(format!("expected 3 context slots, found {}", other.len()))),
        };
        if vocab.hash() != file.require("vocab_hash")? || vocab.tokens() != section(file, "vocab")? {
            return Err(Error::Mismatch("stored vocabulary does not match its hash".into()));
        }
        if actions.hash() != file.require("action_hash")? || actions.templates() != templates {
            return Err(Error::Mismatch("stored action set does not match its hash".into()));
        }

        let mut it = file.tensors.iter();
        let mut take = |name: &str| -> Result<Parameter> {
            let rec =
                it.next().ok_or_else(|| Error::InvalidValue(format!("checkpoint ends before tensor `{name}`")))?;
            if rec.name != name {
                return Err(Error::InvalidValue(format!("expected tensor `{name}`, found `{}`", rec.name)));
            }
            rec.to_parameter()
        };
        let lstm = |prefix: &str, take: &mut dyn FnMut(&str) -> Result<Parameter>| -> Result<LstmCell> {
            Ok(LstmCell {
                w_x: take(&format!("{prefix}.w_x"))?,
                w_h: take(&format!("{prefix}.w_h"))?,
                bias: take(&format!("{prefix}.bias"))?,
            })
        };
        let linear = |prefix: &str, take: &mut dyn FnMut(&str) -> Result<Parameter>| -> Result<Linear> {
            Ok(Linear { weight: take(&format!("{prefix}.weight"))?, bias: take(&format!("{prefix}.bias"))? })
        };
        let embedding = take("embedding")?;
        let recurrent = variant != Variant::Hcn;
        let turn_lstm = if recurrent { Some(lstm("turn_lstm", &mut take)?) } else { None };
        let (mu_head, logvar_head, bow_decoder) = if variant == Variant::Vhcn {
            (
                Some(linear("mu_head", &mut take)?),
                Some(linear("logvar_head", &mut take)?),
                Some(linear("bow_decoder", &mut take)?),
            )
        } else {
            (None, None, None)
        };
        let dialog_lstm = lstm("dialog_lstm", &mut take)?;
        let predictor_hidden = linear("predictor_hidden", &mut take)?;
        let predictor_out = linear("predictor_out", &mut take)?;

        let featurizer = Featurizer { vocab, actions, lexicon, slots };
        let model = Model {
            vocab_size: featurizer.vocab.len(),
            n_actions: featurizer.actions.len(),
            fallback_id: featurizer.actions.fallback_id(),
            vocab_hash: featurizer.vocab.hash(),
            action_hash: featurizer.actions.hash(),
            config,
            embedding,
            turn_lstm,
            mu_head,
            logvar_head,
            bow_decoder,
            dialog_lstm,
            predictor_hidden,
            predictor_out,
        };
        model.check_shapes()?;
        Ok((model, featurizer))
    }

    pub fn save(&self, featurizer: &Featurizer, extra_meta: &[(String, String)], path: &Path) -> Result<()> {
        let bytes = self.to_checkpoint(featurizer, extra_meta)?.to_bytes();
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Model, Featurizer, CheckpointFile)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file = CheckpointFile::from_bytes(&bytes)?;
        let (model, featurizer) = Model::from_checkpoint(&file)?;
        Ok((model, featurizer, file))
    }

    fn check_shapes(&self) -> Result<()> {
        let v = self.vocab_size;
        let a = self.n_actions;
        let d = self.config.embedding_dim;
        let h = self.config.dialog_hidden;
        let p = self.config.predictor_hidden;
        let mut expected: Vec<Vec<usize>> = vec![vec![v, d]];
        if self.turn_lstm.is_some() {
            expected.extend([vec![d, 4 * d], vec![d, 4 * d], vec![4 * d]]);
        }
        if let Some(k) = self.config.latent_dim {
            expected.extend([vec![d, k], vec![k], vec![d, k], vec![k], vec![k, v], vec![v]]);
        }
        let input = self.config.turn_dim() + v + crate::corpus::CONTEXT_DIM + 2 * a;
        expected.extend([vec![input, 4 * h], vec![h, 4 * h], vec![4 * h], vec![h, p], vec![p], vec![p, a], vec![a]]);
        let params = self.parameters();
        if params.len() != expected.len() {
            return Err(Error::Shape(format!("{} tensors, expected {}", params.len(), expected.len())));
        }
        for (param, shape) in params.iter().zip(&expected) {
            if param.value.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "tensor `{}` has shape {:?}, expected {shape:?}",
                    param.name,
                    param.value.shape()
                )));
            }
        }
        Ok(())
    }
}
