use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LossBreakdown, Mode, ModelConfig, VaeEncoding, Variant};
use crate::corpus::{ActionId, EmbeddingTable, FeaturizedDialog, Featurizer, TurnFeatures, CONTEXT_DIM};
use crate::error::{Error, Result};
use crate::nncore::{
    bow_sigmoid_ce_grad, embed_mean, embed_mean_backward, gaussian_kl_logvar, softmax_ce_grad, Linear, LstmCache,
    LstmCell, Parameter, Tensor,
};

/// Dialog-level recurrent state, reset at the start of every dialog.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl DialogState {
    pub fn new(hidden: usize) -> Self {
        DialogState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// Intermediate values of one turn encoding, kept for back-propagation.
#[derive(Clone, Debug)]
pub struct TurnTrace {
    tokens: Vec<usize>,
    turn_caches: Vec<LstmCache>,
    h_turn: Vec<f64>,
    vae: Option<VaeTrace>,
    turn_vec: Vec<f64>,
}

#[derive(Clone, Debug)]
struct VaeTrace {
    mu: Vec<f64>,
    logvar: Vec<f64>,
    sigma: Vec<f64>,
    noise: Vec<f64>,
    z: Vec<f64>,
    bow_logits: Vec<f64>,
}

impl TurnTrace {
    pub fn turn_vector(&self) -> &[f64] {
        &self.turn_vec
    }

    pub fn encoding(&self) -> Option<VaeEncoding> {
        self.vae.as_ref().map(|v| VaeEncoding { mu: v.mu.clone(), sigma: v.sigma.clone(), z: v.z.clone() })
    }
}

struct StepTrace {
    turn: TurnTrace,
    cache: LstmCache,
    h: Vec<f64>,
    hid_pre: Vec<f64>,
    hid: Vec<f64>,
    logits: Vec<f64>,
}

/// One network of the family. Parameters are listed in [`Model::parameters`]
/// order, which is also the checkpoint order.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub n_actions: usize,
    pub fallback_id: ActionId,
    pub vocab_hash: String,
    pub action_hash: String,
    pub embedding: Parameter,
    pub turn_lstm: Option<LstmCell>,
    pub mu_head: Option<Linear>,
    pub logvar_head: Option<Linear>,
    pub bow_decoder: Option<Linear>,
    pub dialog_lstm: LstmCell,
    pub predictor_hidden: Linear,
    pub predictor_out: Linear,
}

impl Model {
    /// Fresh model for `featurizer`. HCN keeps its embedding table frozen;
    /// the other variants train theirs. Without a pretrained table the
    /// embeddings are drawn from `N(0, 0.1²)`.
    pub fn new<R: Rng>(
        config: &ModelConfig,
        featurizer: &Featurizer,
        pretrained: Option<EmbeddingTable>,
        rng: &mut R,
    ) -> Result<Model> {
        let mut config = config.clone();
        let v = featurizer.vocab.len();
        let a = featurizer.actions.len();
        let table = match pretrained {
            Some(t) => {
                if t.vocab_size() != v {
                    return Err(Error::Shape(format!(
                        "embedding table covers {} tokens, vocabulary has {v}",
                        t.vocab_size()
                    )));
                }
                config.embedding_dim = t.dim;
                t
            }
            None => EmbeddingTable::random(v, config.embedding_dim, 0.1, true, rng),
        };
        config.validate()?;
        let d = config.embedding_dim;
        let embedding =
            Parameter::new("embedding", Tensor::new(vec![v, d], table.values)?, config.variant != Variant::Hcn);
        let recurrent = config.variant != Variant::Hcn;
        let turn_lstm = recurrent.then(|| LstmCell::new("turn_lstm", d, d, rng));
        let (mu_head, logvar_head, bow_decoder) = match config.latent_dim {
            Some(k) if config.variant == Variant::Vhcn => (
                Some(Linear::new("mu_head", d, k, rng)),
                Some(Linear::new("logvar_head", d, k, rng)),
                Some(Linear::new("bow_decoder", k, v, rng)),
            ),
            _ => (None, None, None),
        };
        let input = config.turn_dim() + v + CONTEXT_DIM + 2 * a;
        let dialog_lstm = LstmCell::new("dialog_lstm", input, config.dialog_hidden, rng);
        let predictor_hidden = Linear::new("predictor_hidden", config.dialog_hidden, config.predictor_hidden, rng);
        let predictor_out = Linear::new("predictor_out", config.predictor_hidden, a, rng);
        Ok(Model {
            config,
            vocab_size: v,
            n_actions: a,
            fallback_id: featurizer.actions.fallback_id(),
            vocab_hash: featurizer.vocab.hash(),
            action_hash: featurizer.actions.hash(),
            embedding,
            turn_lstm,
            mu_head,
            logvar_head,
            bow_decoder,
            dialog_lstm,
            predictor_hidden,
            predictor_out,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.embedding];
        if let Some(cell) = &self.turn_lstm {
            out.extend(cell.parameters());
        }
        for layer in [&self.mu_head, &self.logvar_head, &self.bow_decoder].into_iter().flatten() {
            out.extend(layer.parameters());
        }
        out.extend(self.dialog_lstm.parameters());
        out.extend(self.predictor_hidden.parameters());
        out.extend(self.predictor_out.parameters());
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.embedding];
        if let Some(cell) = &mut self.turn_lstm {
            out.extend(cell.parameters_mut());
        }
        for layer in [&mut self.mu_head, &mut self.logvar_head, &mut self.bow_decoder].into_iter().flatten() {
            out.extend(layer.parameters_mut());
        }
        out.extend(self.dialog_lstm.parameters_mut());
        out.extend(self.predictor_hidden.parameters_mut());
        out.extend(self.predictor_out.parameters_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
    }

    /// Sets every weight, frozen or not, to zero.
    pub fn zero_weights(&mut self) {
        for p in self.parameters_mut() {
            p.value.data_mut().fill(0.0);
        }
    }

    /// Fails unless `featurizer` has the vocabulary and action set this
    /// model was built for.
    pub fn check_featurizer(&self, featurizer: &Featurizer) -> Result<()> {
        if featurizer.vocab.hash() != self.vocab_hash {
            return Err(Error::Mismatch("vocabulary hash differs from the model's".into()));
        }
        if featurizer.actions.hash() != self.action_hash {
            return Err(Error::Mismatch("action set hash differs from the model's".into()));
        }
        Ok(())
    }

    fn check_turn(&self, f: &TurnFeatures) -> Result<()> {
        if f.tokens.is_empty() {
            return Err(Error::Empty("turn without tokens".into()));
        }
        if let Some(&t) = f.tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::Shape(format!("token id {t} outside vocabulary of {}", self.vocab_size)));
        }
        if f.bow.len != self.vocab_size {
            return Err(Error::Shape(format!("BoW of {} for vocabulary of {}", f.bow.len, self.vocab_size)));
        }
        if f.mask.len() != self.n_actions {
            return Err(Error::Shape(format!("mask of {} for {} actions", f.mask.len(), self.n_actions)));
        }
        if f.target >= self.n_actions || f.prev_action.is_some_and(|p| p >= self.n_actions) {
            return Err(Error::UnknownAction(f.target.max(f.prev_action.unwrap_or(0))));
        }
        Ok(())
    }

    /// Turn encoder. `noise` selects the VHCN train path (`z = μ + σ ε`);
    /// `None` gives `z = μ`.
    fn encode(&self, tokens: &[usize], noise: Option<&[f64]>) -> Result<TurnTrace> {
        let emb = &self.embedding.value;
        let Some(cell) = &self.turn_lstm else {
            return Ok(TurnTrace {
                tokens: tokens.to_vec(),
                turn_caches: Vec::new(),
                h_turn: Vec::new(),
                vae: None,
                turn_vec: embed_mean(tokens, emb)?,
            });
        };
        if tokens.is_empty() {
            return Err(Error::Empty("cannot encode an empty turn".into()));
        }
        let hd = cell.hidden_dim();
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        let mut caches = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let cache = cell.step(emb.row(t), &h, &c)?;
            h = cache.h();
            c = cache.c.clone();
            caches.push(cache);
        }
        let (vae, turn_vec) = match (&self.mu_head, &self.logvar_head, &self.bow_decoder) {
            (Some(mu_head), Some(lv_head), Some(decoder)) => {
                let mu = mu_head.forward(&h)?;
                let logvar = lv_head.forward(&h)?;
                let sigma: Vec<f64> = logvar.iter().map(|lv| (0.5 * lv).exp()).collect();
                let noise = match noise {
                    Some(n) if n.len() == mu.len() => n.to_vec(),
                    Some(n) => {
                        return Err(Error::Shape(format!("{} noise values for latent of {}", n.len(), mu.len())))
                    }
                    None => vec![0.0; mu.len()],
                };
                let z: Vec<f64> = mu.iter().zip(&sigma).zip(&noise).map(|((m, s), e)| m + s * e).collect();
                let bow_logits = decoder.forward(&z)?;
                let turn_vec = z.clone();
                (Some(VaeTrace { mu, logvar, sigma, noise, z, bow_logits }), turn_vec)
            }
            _ => (None, h.clone()),
        };
        Ok(TurnTrace { tokens: tokens.to_vec(), turn_caches: caches, h_turn: h, vae, turn_vec })
    }

    fn latent_dim(&self) -> usize {
        self.mu_head.as_ref().map_or(0, Linear::output_dim)
    }

    /// Turn vector, plus the latent posterior for VHCN. In train mode VHCN
    /// draws fresh noise from `rng`; every other path ignores it.
    pub fn encode_turn<R: Rng>(
        &self,
        features: &TurnFeatures,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Option<VaeEncoding>)> {
        self.check_turn(features)?;
        let noise = match (mode, self.variant()) {
            (Mode::Train, Variant::Vhcn) => Some(draw_noise(self.latent_dim(), rng)),
            _ => None,
        };
        let trace = self.encode(&features.tokens, noise.as_deref())?;
        let enc = trace.encoding();
        Ok((trace.turn_vec, enc))
    }

    /// `[turn vector, BoW, context, previous action, mask]`.
    fn dialog_input(&self, turn_vec: &[f64], f: &TurnFeatures) -> Result<Vec<f64>> {
        if turn_vec.len() != self.config.turn_dim() {
            return Err(Error::Shape(format!(
                "turn vector of {} for a model expecting {}",
                turn_vec.len(),
                self.config.turn_dim()
            )));
        }
        let mut x = Vec::with_capacity(self.dialog_lstm.input_dim());
        x.extend_from_slice(turn_vec);
        let start = x.len();
        x.resize(start + self.vocab_size, 0.0);
        for &i in &f.bow.indices {
            x[start + i] = 1.0;
        }
        x.extend(f.ctx.to_array());
        x.extend(f.prev_action_one_hot());
        x.extend(f.mask.iter().map(|&m| f64::from(m)));
        Ok(x)
    }

    fn step(&self, state: &DialogState, turn: TurnTrace, f: &TurnFeatures) -> Result<StepTrace> {
        let x = self.dialog_input(&turn.turn_vec, f)?;
        let cache = self.dialog_lstm.step(&x, &state.h, &state.c)?;
        let h = cache.h();
        let hid_pre = self.predictor_hidden.forward(&h)?;
        let hid: Vec<f64> = hid_pre.iter().map(|v| v.max(0.0)).collect();
        let logits = self.predictor_out.forward(&hid)?;
        Ok(StepTrace { turn, cache, h, hid_pre, hid, logits })
    }

    /// One dialog-level step on an already encoded turn. The returned logits
    /// carry the action mask in log space.
    pub fn dialog_step(
        &self,
        state: &DialogState,
        turn_vec: &[f64],
        features: &TurnFeatures,
    ) -> Result<(DialogState, Vec<f64>)> {
        self.check_turn(features)?;
        let turn = TurnTrace {
            tokens: features.tokens.clone(),
            turn_caches: Vec::new(),
            h_turn: Vec::new(),
            vae: None,
            turn_vec: turn_vec.to_vec(),
        };
        let step = self.step(state, turn, features)?;
        let next = DialogState { h: step.h, c: step.cache.c };
        Ok((next, apply_mask(&step.logits, &features.mask)))
    }

    /// Greedy infer-mode decoding, lowest id on ties.
    pub fn predict_dialog(&self, dialog: &FeaturizedDialog) -> Result<Vec<ActionId>> {
        let mut state = DialogState::new(self.config.dialog_hidden);
        let mut out = Vec::with_capacity(dialog.turns.len());
        for f in &dialog.turns {
            self.check_turn(f)?;
            let turn = self.encode(&f.tokens, None)?;
            let step = self.step(&state, turn, f)?;
            out.push(argmax(&apply_mask(&step.logits, &f.mask)));
            state = DialogState { h: step.h, c: step.cache.c };
        }
        Ok(out)
    }

    fn forward(&self, dialog: &FeaturizedDialog, noise: &[Vec<f64>]) -> Result<(Vec<StepTrace>, LossBreakdown)> {
        if self.variant() == Variant::Vhcn && noise.len() != dialog.turns.len() {
            return Err(Error::Shape(format!(
                "{} noise vectors for a dialog of {} turns",
                noise.len(),
                dialog.turns.len()
            )));
        }
        let mut state = DialogState::new(self.config.dialog_hidden);
        let mut steps = Vec::with_capacity(dialog.turns.len());
        let mut loss = LossBreakdown::default();
        for (t, f) in dialog.turns.iter().enumerate() {
            self.check_turn(f)?;
            let turn = self.encode(&f.tokens, noise.get(t).map(Vec::as_slice))?;
            if let Some(v) = &turn.vae {
                let (bow, _) = bow_sigmoid_ce_grad(&v.bow_logits, &f.bow.to_dense())?;
                let (kl, _, _) = gaussian_kl_logvar(&v.mu, &v.logvar);
                loss.bow += bow;
                loss.kl += kl;
            }
            let step = self.step(&state, turn, f)?;
            let (ce, _) = softmax_ce_grad(&step.logits, f.target, &f.mask)?;
            loss.action += ce;
            loss.turns += 1;
            state = DialogState { h: step.h.clone(), c: step.cache.c.clone() };
            steps.push(step);
        }
        Ok((steps, loss))
    }

    /// Loss of a whole dialog with fixed VHCN noise (one vector per turn;
    /// ignored by the other variants).
    pub fn dialog_loss(&self, dialog: &FeaturizedDialog, noise: &[Vec<f64>]) -> Result<LossBreakdown> {
        self.forward(dialog, noise).map(|(_, l)| l)
    }

    /// Draws one noise vector per turn for the VHCN train path.
    pub fn sample_noise<R: Rng>(&self, turns: usize, rng: &mut R) -> Vec<Vec<f64>> {
        match self.variant() {
            Variant::Vhcn => (0..turns).map(|_| draw_noise(self.latent_dim(), rng)).collect(),
            _ => Vec::new(),
        }
    }

    /// Forward and full back-propagation through the dialog. Gradients are
    /// added to whatever the parameters already hold.
    pub fn forward_backward(&mut self, dialog: &FeaturizedDialog, noise: &[Vec<f64>]) -> Result<LossBreakdown> {
        let (steps, loss) = self.forward(dialog, noise)?;
        let hd = self.config.dialog_hidden;
        let td = self.config.turn_dim();
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        for (step, f) in steps.iter().zip(&dialog.turns).rev() {
            let (_, dlogits) = softmax_ce_grad(&step.logits, f.target, &f.mask)?;
            let mut dhid = vec![0.0; step.hid.len()];
            self.predictor_out.backward(&step.hid, &dlogits, Some(&mut dhid));
            for (d, &pre) in dhid.iter_mut().zip(&step.hid_pre) {
                if pre <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut dh = vec![0.0; hd];
            self.predictor_hidden.backward(&step.h, &dhid, Some(&mut dh));
            dh.iter_mut().zip(&dh_next).for_each(|(a, b)| *a += b);
            let mut dturn = vec![0.0; td];
            let (dhp, dcp) = self.dialog_lstm.backward(&step.cache, &dh, &dc_next, Some(&mut dturn));
            dh_next = dhp;
            dc_next = dcp;
            self.turn_backward(&step.turn, f, dturn)?;
        }
        Ok(loss)
    }

    fn turn_backward(&mut self, turn: &TurnTrace, f: &TurnFeatures, dturn: Vec<f64>) -> Result<()> {
        match self.variant() {
            Variant::Hcn => {
                if self.embedding.trainable {
                    embed_mean_backward(&turn.tokens, &dturn, &mut self.embedding.grad);
                }
                Ok(())
            }
            Variant::Hhcn => {
                self.turn_lstm_backward(turn, dturn);
                Ok(())
            }
            Variant::Vhcn => {
                let v = turn.vae.as_ref().ok_or_else(|| Error::Config("VHCN turn traced without a latent".into()))?;
                let (Some(mu_head), Some(lv_head), Some(decoder)) =
                    (&mut self.mu_head, &mut self.logvar_head, &mut self.bow_decoder)
                else {
                    return Err(Error::Config("VHCN model lacks its latent layers".into()));
                };
                let (_, dbow) = bow_sigmoid_ce_grad(&v.bow_logits, &f.bow.to_dense())?;
                let mut dz_bow = vec![0.0; v.z.len()];
                decoder.backward(&v.z, &dbow, Some(&mut dz_bow));
                let (_, dmu_kl, dlv_kl) = gaussian_kl_logvar(&v.mu, &v.logvar);
                let mut dmu = Vec::with_capacity(v.mu.len());
                let mut dlv = Vec::with_capacity(v.mu.len());
                for i in 0..v.mu.len() {
                    let dz = dturn[i] + dz_bow[i];
                    dmu.push(dz + dmu_kl[i]);
                    dlv.push(dz * v.noise[i] * 0.5 * v.sigma[i] + dlv_kl[i]);
                }
                let hd = turn.h_turn.len();
                let mut dh1 = vec![0.0; hd];
                let mut dh2 = vec![0.0; hd];
                mu_head.backward(&turn.h_turn, &dmu, Some(&mut dh1));
                lv_head.backward(&turn.h_turn, &dlv, Some(&mut dh2));
                dh1.iter_mut().zip(&dh2).for_each(|(a, b)| *a += b);
                self.turn_lstm_backward(turn, dh1);
                Ok(())
            }
        }
    }

    fn turn_lstm_backward(&mut self, turn: &TurnTrace, dh_last: Vec<f64>) {
        let Some(cell) = &mut self.turn_lstm else { return };
        let emb = &mut self.embedding;
        let mut dh = dh_last;
        let mut dc = vec![0.0; dh.len()];
        let mut dx = vec![0.0; cell.input_dim()];
        for (cache, &tok) in turn.turn_caches.iter().zip(&turn.tokens).rev() {
            let (dhp, dcp) = cell.backward(cache, &dh, &dc, Some(&mut dx));
            if emb.trainable {
                emb.grad.row_mut(tok).iter_mut().zip(&dx).for_each(|(g, d)| *g += d);
            }
            dh = dhp;
            dc = dcp;
        }
    }
}

fn draw_noise<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    (0..k).map(|_| StandardNormal.sample(rng)).collect()
}

fn apply_mask(logits: &[f64], mask: &[u8]) -> Vec<f64> {
    logits.iter().zip(mask).map(|(&l, &m)| if m == 0 { f64::NEG_INFINITY } else { l }).collect()
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
