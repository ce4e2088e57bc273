use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AttentionMode, HmtConfig};
use super::grid::MomentGrid;
use super::masks::{causal_mask, cross_attention_mask, self_attention_mask};
use super::params::{initialize, AttentionIdx, FeedForwardIdx, Layout, NormIdx, Parameters};
use crate::error::{Error, Result};
use crate::hmm::{sentence_loss, BatchLoss, SentenceLoss};
use crate::numerics::{Array, Tape, Var};

/// Inverted dropout driven by a seeded generator; `Dropout::off()` is the
/// identity.
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: (rate > 0.0).then(|| ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some()
    }

    fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        let scale = 1.0 / (1.0 - self.rate);
        let keep: Vec<f64> = (0..tape.value(x).len())
            .map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { scale })
            .collect();
        tape.dropout(x, Rc::new(keep))
    }
}

/// Everything one sentence's forward pass produces.
#[derive(Clone, Debug)]
pub struct SentenceForward {
    /// Final encoder states, `J x d`.
    pub encoder: Var,
    /// Final state representations, `(I K) x d`, row `i * K + k`.
    pub states: Var,
    /// Output-vocabulary logits per state, `(I K) x V`.
    pub emission_logits: Var,
    /// Pre-sigmoid confidences, `I x K`; the last column is not used.
    pub confidence_logits: Var,
}

/// Parameters bound to a tape.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn at(&self, idx: usize) -> Var {
        self.vars[idx]
    }
}

/// The Hidden Markov Transformer.
#[derive(Clone, Debug)]
pub struct Hmt {
    config: HmtConfig,
    src_vocab: usize,
    tgt_vocab: usize,
    params: Parameters,
    layout: Layout,
}

/// Sinusoidal encodings for positions `1..=len`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Array {
    let half = dim / 2;
    Array::from_fn(len, dim, |p, c| {
        let pos = (p + 1) as f64;
        if c >= 2 * half {
            return 0.0;
        }
        let i = c % half;
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        if c < half {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        }
    })
}

impl Hmt {
    pub fn new(config: HmtConfig, src_vocab: usize, tgt_vocab: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let (params, layout) = initialize(&config, src_vocab, tgt_vocab, seed);
        Ok(Self {
            config,
            src_vocab,
            tgt_vocab,
            params,
            layout,
        })
    }

    /// Rebuilds a model around stored parameters, checking every name and
    /// shape against the architecture `config` describes.
    pub fn from_parameters(config: HmtConfig, src_vocab: usize, tgt_vocab: usize, params: Parameters) -> Result<Self> {
        config.validate()?;
        let (fresh, layout) = initialize(&config, src_vocab, tgt_vocab, 0);
        if fresh.len() != params.len() {
            return Err(Error::data(format!(
                "expected {} parameter arrays, found {}",
                fresh.len(),
                params.len()
            )));
        }
        for ((name, want), (got_name, got)) in fresh.iter().zip(params.iter()) {
            if name != got_name || want.shape() != got.shape() {
                return Err(Error::data(format!(
                    "parameter {got_name} {:?} does not match expected {name} {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(Self {
            config,
            src_vocab,
            tgt_vocab,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &HmtConfig {
        &self.config
    }

    /// Changes settings that do not affect the parameter layout (decoding
    /// threshold, attention mode, loss weights, dropout).
    pub fn set_config(&mut self, config: HmtConfig) -> Result<()> {
        config.validate()?;
        let same_shape = config.states == self.config.states
            && config.layers == self.config.layers
            && config.model_dim == self.config.model_dim
            && config.heads == self.config.heads
            && config.ffn_dim == self.config.ffn_dim;
        if !same_shape {
            return Err(Error::contract("architecture fields cannot change on a built model"));
        }
        self.config = config;
        Ok(())
    }

    pub fn src_vocab(&self) -> usize {
        self.src_vocab
    }

    pub fn tgt_vocab(&self) -> usize {
        self.tgt_vocab
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, requires_grad: bool) -> BoundParams {
        BoundParams {
            vars: self
                .params
                .values()
                .iter()
                .map(|p| tape.param(p, requires_grad))
                .collect(),
        }
    }

    /// Moment grid for a full training pair.
    pub fn grid(&self, target_len: usize, source_len: usize) -> MomentGrid {
        MomentGrid::new(self.config.lower, self.config.states, target_len, source_len)
    }

    fn check_ids(ids: &[usize], vocab: usize, what: &str) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::contract(format!("empty {what} sequence")));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::contract(format!(
                "{what} id {bad} outside vocabulary of {vocab}"
            )));
        }
        Ok(())
    }

    fn norm(&self, tape: &mut Tape<'_>, p: &BoundParams, idx: NormIdx, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.at(idx.gain), p.at(idx.bias))
    }

    fn linear(tape: &mut Tape<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        tape: &mut Tape<'_>,
        p: &BoundParams,
        idx: &AttentionIdx,
        query: Var,
        memory: Var,
        mask: &Rc<Vec<bool>>,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        let q = Self::linear(tape, query, p.at(idx.wq), p.at(idx.bq))?;
        let k = Self::linear(tape, memory, p.at(idx.wk), p.at(idx.bk))?;
        let v = Self::linear(tape, memory, p.at(idx.wv), p.at(idx.bv))?;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let weights = tape.masked_softmax(scores, mask.clone())?;
            let weights = dropout.apply(tape, weights)?;
            heads.push(tape.matmul(weights, vh)?);
        }
        let ctx = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat(&heads)?
        };
        Self::linear(tape, ctx, p.at(idx.wo), p.at(idx.bo))
    }

    fn feed_forward(
        tape: &mut Tape<'_>,
        p: &BoundParams,
        idx: &FeedForwardIdx,
        x: Var,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        let h = Self::linear(tape, x, p.at(idx.w1), p.at(idx.b1))?;
        let h = tape.relu(h);
        let h = dropout.apply(tape, h)?;
        Self::linear(tape, h, p.at(idx.w2), p.at(idx.b2))
    }

    fn residual(tape: &mut Tape<'_>, x: Var, branch: Var, dropout: &mut Dropout) -> Result<Var> {
        let branch = dropout.apply(tape, branch)?;
        tape.add(x, branch)
    }

    fn embed(&self, tape: &mut Tape<'_>, table: Var, ids: &[usize]) -> Result<Var> {
        let e = tape.embedding(table, ids)?;
        Ok(tape.scale(e, (self.config.model_dim as f64).sqrt()))
    }

    /// Unidirectional encoder over the received source tokens, `J x d`.
    pub fn encode(&self, tape: &mut Tape<'_>, p: &BoundParams, source: &[usize], dropout: &mut Dropout) -> Result<Var> {
        Self::check_ids(source, self.src_vocab, "source")?;
        let d = self.config.model_dim;
        let emb = self.embed(tape, p.at(self.layout.src_embed), source)?;
        let pos = tape.constant(sinusoidal_positions(source.len(), d));
        let x = tape.add(emb, pos)?;
        let mut x = dropout.apply(tape, x)?;
        let mask = Rc::new(causal_mask(source.len()));
        for layer in &self.layout.encoder {
            let n = self.norm(tape, p, layer.norm_attn, x)?;
            let a = self.attention(tape, p, &layer.attn, n, n, &mask, dropout)?;
            x = Self::residual(tape, x, a, dropout)?;
            let n = self.norm(tape, p, layer.norm_ffn, x)?;
            let f = Self::feed_forward(tape, p, &layer.ffn, n, dropout)?;
            x = Self::residual(tape, x, f, dropout)?;
        }
        self.norm(tape, p, self.layout.encoder_norm, x)
    }

    /// State representations for target inputs `target_in` (bos-prefixed,
    /// one per row of `grid`); `path` lists earlier selections for
    /// `Selected` attention.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_states(
        &self,
        tape: &mut Tape<'_>,
        p: &BoundParams,
        encoder: Var,
        target_in: &[usize],
        grid: &MomentGrid,
        mode: AttentionMode,
        path: Option<&[usize]>,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        Self::check_ids(target_in, self.tgt_vocab, "target")?;
        if grid.rows() != target_in.len() || grid.states() != self.config.states {
            return Err(Error::contract(format!(
                "grid {}x{} does not fit {} target inputs with K = {}",
                grid.rows(),
                grid.states(),
                target_in.len(),
                self.config.states
            )));
        }
        let (d, states) = (self.config.model_dim, self.config.states);
        let source_len = tape.value(encoder).rows();
        let rows = target_in.len();
        let upsampled: Vec<usize> = target_in.iter().flat_map(|&y| std::iter::repeat_n(y, states)).collect();
        let emb = self.embed(tape, p.at(self.layout.tgt_embed), &upsampled)?;
        let positions = sinusoidal_positions(rows, d);
        let pos = Array::from_fn(rows * states, d, |r, c| positions.get(r / states, c));
        let pos = tape.constant(pos);
        let state_ids: Vec<usize> = (0..rows * states).map(|r| r % states).collect();
        let state_emb = tape.embedding(p.at(self.layout.state_embed), &state_ids)?;
        let x = tape.add(emb, pos)?;
        let x = tape.add(x, state_emb)?;
        let mut x = dropout.apply(tape, x)?;

        let self_mask = Rc::new(self_attention_mask(grid, mode, path)?);
        let cross_mask = Rc::new(cross_attention_mask(grid, source_len, source_len));
        for layer in &self.layout.decoder {
            let n = self.norm(tape, p, layer.norm_self, x)?;
            let a = self.attention(tape, p, &layer.self_attn, n, n, &self_mask, dropout)?;
            x = Self::residual(tape, x, a, dropout)?;
            let n = self.norm(tape, p, layer.norm_cross, x)?;
            let c = self.attention(tape, p, &layer.cross_attn, n, encoder, &cross_mask, dropout)?;
            x = Self::residual(tape, x, c, dropout)?;
            let n = self.norm(tape, p, layer.norm_ffn, x)?;
            let f = Self::feed_forward(tape, p, &layer.ffn, n, dropout)?;
            x = Self::residual(tape, x, f, dropout)?;
        }
        self.norm(tape, p, self.layout.decoder_norm, x)
    }

    /// `s W^O`, one row of vocabulary logits per state.
    pub fn emission_logits(&self, tape: &mut Tape<'_>, p: &BoundParams, states: Var) -> Result<Var> {
        tape.matmul(states, p.at(self.layout.output))
    }

    /// Mean-pooling matrix: row `i * K + k` averages the first `t[i][k]`
    /// received source states.
    pub fn pooling_matrix(grid: &MomentGrid, source_len: usize) -> Array {
        let n = grid.rows() * grid.states();
        let mut pool = Array::zeros(n, source_len);
        for (r, &t) in grid.as_slice().iter().enumerate() {
            let t = t.min(source_len);
            let w = 1.0 / t as f64;
            pool.data_mut()[r * source_len..r * source_len + t].fill(w);
        }
        pool
    }

    /// `[mean(h_{<=t}) : s] W^S` per state, shaped `I x K`.
    pub fn confidence_logits(
        &self,
        tape: &mut Tape<'_>,
        p: &BoundParams,
        states: Var,
        encoder: Var,
        grid: &MomentGrid,
    ) -> Result<Var> {
        let pool = tape.constant(Self::pooling_matrix(grid, tape.value(encoder).rows()));
        let pooled = tape.matmul(pool, encoder)?;
        let features = tape.concat(&[pooled, states])?;
        let scores = tape.matmul(features, p.at(self.layout.confidence))?;
        tape.reshape(scores, grid.rows(), grid.states())
    }

    /// Encoder, decoder states, emissions and confidences in one pass.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        p: &BoundParams,
        source: &[usize],
        target_in: &[usize],
        grid: &MomentGrid,
        mode: AttentionMode,
        path: Option<&[usize]>,
        dropout: &mut Dropout,
    ) -> Result<SentenceForward> {
        let encoder = self.encode(tape, p, source, dropout)?;
        let states = self.decode_states(tape, p, encoder, target_in, grid, mode, path, dropout)?;
        let emission_logits = self.emission_logits(tape, p, states)?;
        let confidence_logits = self.confidence_logits(tape, p, states, encoder, grid)?;
        Ok(SentenceForward {
            encoder,
            states,
            emission_logits,
            confidence_logits,
        })
    }

    /// Smoothed emission log-likelihoods of the gold tokens, `I x K`.
    pub fn emission_log_likelihoods(
        &self,
        tape: &mut Tape<'_>,
        fwd: &SentenceForward,
        target_out: &[usize],
    ) -> Result<Var> {
        let states = self.config.states;
        let gold: Vec<usize> = target_out
            .iter()
            .flat_map(|&y| std::iter::repeat_n(y, states))
            .collect();
        let ce = tape.cross_entropy(fwd.emission_logits, &gold, self.config.label_smoothing)?;
        let e = tape.scale(ce, -1.0);
        tape.reshape(e, target_out.len(), states)
    }

    /// Training loss of one pair. `source` includes the trailing eos,
    /// `target_in` starts with bos and `target_out` ends with eos.
    pub fn sentence_loss(
        &self,
        tape: &mut Tape<'_>,
        p: &BoundParams,
        source: &[usize],
        target_in: &[usize],
        target_out: &[usize],
        dropout: &mut Dropout,
    ) -> Result<SentenceLoss> {
        if target_in.len() != target_out.len() {
            return Err(Error::contract(format!(
                "target input length {} != output length {}",
                target_in.len(),
                target_out.len()
            )));
        }
        Self::check_ids(target_out, self.tgt_vocab, "target")?;
        if self.config.attention == AttentionMode::Selected {
            return Err(Error::contract(
                "selected attention needs a realized path and is only available while decoding",
            ));
        }
        let grid = self.grid(target_in.len(), source.len());
        let fwd = self.forward(tape, p, source, target_in, &grid, self.config.attention, None, dropout)?;
        let emissions = self.emission_log_likelihoods(tape, &fwd, target_out)?;
        let weights = BatchLoss {
            latency_weight: self.config.latency_weight,
            state_weight: self.config.state_weight,
            objective: self.config.objective,
        };
        sentence_loss(tape, emissions, fwd.confidence_logits, &grid, &weights)
    }
}
