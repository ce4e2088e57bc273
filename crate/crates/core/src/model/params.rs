use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::HmtConfig;
use crate::error::{Error, Result};
use crate::numerics::Array;

/// Named parameter arrays in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    values: Vec<Array>,
}

impl Parameters {
    pub fn new(names: Vec<String>, values: Vec<Array>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::contract(format!(
                "{} parameter names for {} arrays",
                names.len(),
                values.len()
            )));
        }
        Ok(Self { names, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array] {
        &mut self.values
    }

    pub fn get(&self, idx: usize) -> &Array {
        &self.values[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct AttentionIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct FeedForwardIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayerIdx {
    pub norm_attn: NormIdx,
    pub attn: AttentionIdx,
    pub norm_ffn: NormIdx,
    pub ffn: FeedForwardIdx,
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderLayerIdx {
    pub norm_self: NormIdx,
    pub self_attn: AttentionIdx,
    pub norm_cross: NormIdx,
    pub cross_attn: AttentionIdx,
    pub norm_ffn: NormIdx,
    pub ffn: FeedForwardIdx,
}

/// Positions of every parameter in [`Parameters`].
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub src_embed: usize,
    pub tgt_embed: usize,
    pub state_embed: usize,
    pub encoder: Vec<EncoderLayerIdx>,
    pub encoder_norm: NormIdx,
    pub decoder: Vec<DecoderLayerIdx>,
    pub decoder_norm: NormIdx,
    pub output: usize,
    pub confidence: usize,
}

enum Init {
    Zeros,
    Ones,
    Embedding,
    Xavier,
}

struct Builder {
    rng: ChaCha8Rng,
    names: Vec<String>,
    values: Vec<Array>,
    dim: usize,
}

impl Builder {
    fn push(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let value = match init {
            Init::Zeros => Array::zeros(rows, cols),
            Init::Ones => Array::filled(rows, cols, 1.0),
            Init::Embedding => {
                // uniform with variance 1 / d
                let a = (3.0 / self.dim as f64).sqrt();
                Array::from_fn(rows, cols, |_, _| self.rng.gen_range(-a..a))
            }
            Init::Xavier => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                Array::from_fn(rows, cols, |_, _| self.rng.gen_range(-a..a))
            }
        };
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    fn norm(&mut self, prefix: &str) -> NormIdx {
        NormIdx {
            gain: self.push(format!("{prefix}.gain"), 1, self.dim, Init::Ones),
            bias: self.push(format!("{prefix}.bias"), 1, self.dim, Init::Zeros),
        }
    }

    fn attention(&mut self, prefix: &str) -> AttentionIdx {
        let d = self.dim;
        let proj = |b: &mut Self, p: &str| {
            (
                b.push(format!("{prefix}.w{p}"), d, d, Init::Xavier),
                b.push(format!("{prefix}.b{p}"), 1, d, Init::Zeros),
            )
        };
        let (wq, bq) = proj(self, "q");
        let (wk, bk) = proj(self, "k");
        let (wv, bv) = proj(self, "v");
        let (wo, bo) = proj(self, "o");
        AttentionIdx {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn ffn(&mut self, prefix: &str, hidden: usize) -> FeedForwardIdx {
        let d = self.dim;
        FeedForwardIdx {
            w1: self.push(format!("{prefix}.w1"), d, hidden, Init::Xavier),
            b1: self.push(format!("{prefix}.b1"), 1, hidden, Init::Zeros),
            w2: self.push(format!("{prefix}.w2"), hidden, d, Init::Xavier),
            b2: self.push(format!("{prefix}.b2"), 1, d, Init::Zeros),
        }
    }
}

/// Freshly initialized parameters and their layout.
pub(crate) fn initialize(config: &HmtConfig, src_vocab: usize, tgt_vocab: usize, seed: u64) -> (Parameters, Layout) {
    let d = config.model_dim;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        names: Vec::new(),
        values: Vec::new(),
        dim: d,
    };
    let src_embed = b.push("encoder.embed".into(), src_vocab, d, Init::Embedding);
    let tgt_embed = b.push("decoder.embed".into(), tgt_vocab, d, Init::Embedding);
    let state_embed = b.push("decoder.state_embed".into(), config.states, d, Init::Embedding);
    let encoder = (0..config.layers)
        .map(|l| {
            let p = format!("encoder.layers.{l}");
            EncoderLayerIdx {
                norm_attn: b.norm(&format!("{p}.norm_attn")),
                attn: b.attention(&format!("{p}.self_attn")),
                norm_ffn: b.norm(&format!("{p}.norm_ffn")),
                ffn: b.ffn(&format!("{p}.ffn"), config.ffn_dim),
            }
        })
        .collect();
    let encoder_norm = b.norm("encoder.norm");
    let decoder = (0..config.layers)
        .map(|l| {
            let p = format!("decoder.layers.{l}");
            DecoderLayerIdx {
                norm_self: b.norm(&format!("{p}.norm_self")),
                self_attn: b.attention(&format!("{p}.self_attn")),
                norm_cross: b.norm(&format!("{p}.norm_cross")),
                cross_attn: b.attention(&format!("{p}.cross_attn")),
                norm_ffn: b.norm(&format!("{p}.norm_ffn")),
                ffn: b.ffn(&format!("{p}.ffn"), config.ffn_dim),
            }
        })
        .collect();
    let decoder_norm = b.norm("decoder.norm");
    let output = b.push("decoder.output".into(), d, tgt_vocab, Init::Xavier);
    let confidence = b.push("decoder.confidence".into(), 2 * d, 1, Init::Xavier);
    let layout = Layout {
        src_embed,
        tgt_embed,
        state_embed,
        encoder,
        encoder_norm,
        decoder,
        decoder_norm,
        output,
        confidence,
    };
    (
        Parameters::new(b.names, b.values).expect("builder keeps names aligned"),
        layout,
    )
}
