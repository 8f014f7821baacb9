//! Two-layer GRU definition decoder with hand-written backpropagation
//! through time.
//!
//! Each step feeds `[token embedding, step signal]` to layer 1, layer 1's
//! state to layer 2, and projects layer 2's state onto the decoder
//! vocabulary. The variant picks which signal (aligned context, target
//! embedding or sense vector) initializes each layer and which is fed at
//! every step.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingTable, BOS, EOS, UNK};
use crate::error::{check_len, Error, Result};
use crate::gradcheck::Parameters;
use crate::linalg::{argmax, log_softmax, sigmoid, softmax, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signal {
    /// `T·v_s`
    AlignedContext,
    /// `v_w`
    TargetWord,
    SenseVector,
}

impl Signal {
    fn letter(self) -> char {
        match self {
            Signal::AlignedContext => 'A',
            Signal::TargetWord => 'T',
            Signal::SenseVector => 'S',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c {
            'A' => Some(Signal::AlignedContext),
            'T' => Some(Signal::TargetWord),
            'S' => Some(Signal::SenseVector),
            _ => None,
        }
    }
}

/// Assignment of signals to (layer-1 init, layer-2 init, per-step input).
/// At least one slot must carry the sense vector, otherwise the mask
/// generator receives no gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Variant {
    pub layer1: Signal,
    pub layer2: Signal,
    pub step: Signal,
}

impl Variant {
    pub const SSS: Variant = Variant::of(Signal::SenseVector, Signal::SenseVector, Signal::SenseVector);
    pub const AAS: Variant = Variant::of(Signal::AlignedContext, Signal::AlignedContext, Signal::SenseVector);
    pub const TTS: Variant = Variant::of(Signal::TargetWord, Signal::TargetWord, Signal::SenseVector);
    pub const ATS: Variant = Variant::of(Signal::AlignedContext, Signal::TargetWord, Signal::SenseVector);
    pub const TAS: Variant = Variant::of(Signal::TargetWord, Signal::AlignedContext, Signal::SenseVector);

    /// The evaluated grid.
    pub const GRID: [Variant; 5] = [Variant::SSS, Variant::AAS, Variant::TTS, Variant::ATS, Variant::TAS];

    const fn of(layer1: Signal, layer2: Signal, step: Signal) -> Self {
        Self {
            layer1,
            layer2,
            step,
        }
    }

    pub fn new(layer1: Signal, layer2: Signal, step: Signal) -> Result<Self> {
        let v = Self::of(layer1, layer2, step);
        if v.slots().contains(&Signal::SenseVector) {
            Ok(v)
        } else {
            Err(Error::InvalidVariant(v.to_string()))
        }
    }

    pub fn slots(&self) -> [Signal; 3] {
        [self.layer1, self.layer2, self.step]
    }
}

impl Default for Variant {
    fn default() -> Self {
        Variant::ATS
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.slots().iter().try_for_each(|s| write!(f, "{}", s.letter()))
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters: Vec<Signal> = s
            .trim()
            .to_ascii_uppercase()
            .chars()
            .map(Signal::from_letter)
            .collect::<Option<_>>()
            .ok_or_else(|| Error::InvalidVariant(s.to_string()))?;
        match letters[..] {
            [a, b, c] => Variant::new(a, b, c).map_err(|_| Error::InvalidVariant(s.to_string())),
            _ => Err(Error::InvalidVariant(s.to_string())),
        }
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

/// Bias-free GRU cell; each matrix acts on `[h_{t-1}, x_t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLayerParams {
    pub w_r: Matrix,
    pub w_z: Matrix,
    pub w_h: Matrix,
}

#[derive(Debug, Clone)]
struct GruCache {
    /// `[h_prev, x]`
    concat: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    candidate: Vec<f64>,
    /// `[r ∘ h_prev, x]`
    gated: Vec<f64>,
}

impl GruLayerParams {
    pub fn new(hidden: usize, input: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = 1.0 / (hidden as f64).sqrt();
        Self {
            w_r: Matrix::uniform(hidden, hidden + input, limit, &mut rng),
            w_z: Matrix::uniform(hidden, hidden + input, limit, &mut rng),
            w_h: Matrix::uniform(hidden, hidden + input, limit, &mut rng),
        }
    }

    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w_r: Matrix::zeros(hidden, hidden + input),
            w_z: Matrix::zeros(hidden, hidden + input),
            w_h: Matrix::zeros(hidden, hidden + input),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.hidden(), self.input())
    }

    pub fn hidden(&self) -> usize {
        self.w_r.rows()
    }

    pub fn input(&self) -> usize {
        self.w_r.cols() - self.w_r.rows()
    }

    pub fn validate(&self) -> Result<()> {
        for w in [&self.w_z, &self.w_h] {
            check_len(self.w_r.rows(), w.rows())?;
            check_len(self.w_r.cols(), w.cols())?;
        }
        if self.w_r.cols() < self.w_r.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.w_r.rows(),
                actual: self.w_r.cols(),
            });
        }
        Ok(())
    }

    fn forward(&self, h_prev: &[f64], x: &[f64]) -> (Vec<f64>, GruCache) {
        let hidden = self.hidden();
        let mut concat = Vec::with_capacity(hidden + x.len());
        concat.extend_from_slice(h_prev);
        concat.extend_from_slice(x);

        let mut r = vec![0.0; hidden];
        let mut z = vec![0.0; hidden];
        self.w_r.matvec_into(&concat, &mut r);
        self.w_z.matvec_into(&concat, &mut z);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut gated = concat.clone();
        for i in 0..hidden {
            gated[i] = r[i] * h_prev[i];
        }
        let mut candidate = vec![0.0; hidden];
        self.w_h.matvec_into(&gated, &mut candidate);
        candidate.iter_mut().for_each(|v| *v = v.tanh());

        let h = (0..hidden)
            .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * candidate[i])
            .collect();
        (
            h,
            GruCache {
                concat,
                r,
                z,
                candidate,
                gated,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to `[h_prev, x]`.
    fn backward(&self, cache: &GruCache, dh: &[f64], grads: &mut GruLayerParams) -> Vec<f64> {
        let hidden = self.hidden();
        let h_prev = &cache.concat[..hidden];
        let (r, z, cand) = (&cache.r, &cache.z, &cache.candidate);

        let mut da_z = vec![0.0; hidden];
        let mut da_h = vec![0.0; hidden];
        for i in 0..hidden {
            da_z[i] = dh[i] * (cand[i] - h_prev[i]) * z[i] * (1.0 - z[i]);
            da_h[i] = dh[i] * z[i] * (1.0 - cand[i] * cand[i]);
        }
        grads.w_h.add_outer(&da_h, &cache.gated);
        let mut d_gated = vec![0.0; cache.concat.len()];
        self.w_h.matvec_t_acc(&da_h, &mut d_gated);

        let mut d_concat = vec![0.0; cache.concat.len()];
        let mut da_r = vec![0.0; hidden];
        for i in 0..hidden {
            da_r[i] = d_gated[i] * h_prev[i] * r[i] * (1.0 - r[i]);
            d_concat[i] = d_gated[i] * r[i] + dh[i] * (1.0 - z[i]);
        }
        d_concat[hidden..].copy_from_slice(&d_gated[hidden..]);

        grads.w_r.add_outer(&da_r, &cache.concat);
        grads.w_z.add_outer(&da_z, &cache.concat);
        self.w_r.matvec_t_acc(&da_r, &mut d_concat);
        self.w_z.matvec_t_acc(&da_z, &mut d_concat);
        d_concat
    }
}

/// One GRU update: `h = (1−z)∘h_prev + z∘tanh(W_h·[r∘h_prev, x])`.
pub fn gru_step(params: &GruLayerParams, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_len(params.hidden(), h_prev.len())?;
    check_len(params.input(), x.len())?;
    Ok(params.forward(h_prev, x).0)
}

pub const DEFAULT_HIDDEN: usize = 300;
pub const DEFAULT_MAX_STEPS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Hidden size; equals the pretrained embedding dimension since the
    /// initial states are embedding-space vectors.
    pub hidden: usize,
    pub max_steps: usize,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            max_steps: DEFAULT_MAX_STEPS,
            variant: Variant::ATS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderModel {
    pub layer1: GruLayerParams,
    pub layer2: GruLayerParams,
    /// `|V_dec| × hidden`
    pub output_proj: Matrix,
    /// Trainable decoder vocabulary.
    pub vocab: EmbeddingTable,
    pub variant: Variant,
    pub max_steps: usize,
}

/// The three conditioning signals, each of the hidden size.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderInputs {
    pub target_embedding: Vec<f64>,
    pub aligned_context: Vec<f64>,
    pub sense_vector: Vec<f64>,
}

impl DecoderInputs {
    pub fn get(&self, signal: Signal) -> &[f64] {
        match signal {
            Signal::AlignedContext => &self.aligned_context,
            Signal::TargetWord => &self.target_embedding,
            Signal::SenseVector => &self.sense_vector,
        }
    }

    fn get_mut(&mut self, signal: Signal) -> &mut Vec<f64> {
        match signal {
            Signal::AlignedContext => &mut self.aligned_context,
            Signal::TargetWord => &mut self.target_embedding,
            Signal::SenseVector => &mut self.sense_vector,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            target_embedding: vec![0.0; dim],
            aligned_context: vec![0.0; dim],
            sense_vector: vec![0.0; dim],
        }
    }
}

/// `(h¹₀, h²₀, per-step signal)` for the variant.
pub fn init_states(inputs: &DecoderInputs, variant: Variant) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if !variant.slots().contains(&Signal::SenseVector) {
        return Err(Error::InvalidVariant(variant.to_string()));
    }
    let d = inputs.target_embedding.len();
    check_len(d, inputs.aligned_context.len())?;
    check_len(d, inputs.sense_vector.len())?;
    Ok((
        inputs.get(variant.layer1).to_vec(),
        inputs.get(variant.layer2).to_vec(),
        inputs.get(variant.step).to_vec(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

struct StepCache {
    token: usize,
    layer1: GruCache,
    layer2: GruCache,
    h2: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderGrads {
    pub layer1: GruLayerParams,
    pub layer2: GruLayerParams,
    pub output_proj: Matrix,
    pub embeddings: Matrix,
}

impl DecoderGrads {
    pub fn scale(&mut self, s: f64) {
        for (_, g) in self.groups_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn add_assign(&mut self, other: &DecoderGrads) {
        crate::gradcheck::apply_update(self, other, 1.0);
    }
}

impl Parameters for DecoderGrads {
    fn groups(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("layer1.w_r", self.layer1.w_r.as_slice()),
            ("layer1.w_z", self.layer1.w_z.as_slice()),
            ("layer1.w_h", self.layer1.w_h.as_slice()),
            ("layer2.w_r", self.layer2.w_r.as_slice()),
            ("layer2.w_z", self.layer2.w_z.as_slice()),
            ("layer2.w_h", self.layer2.w_h.as_slice()),
            ("output_proj", self.output_proj.as_slice()),
            ("embeddings", self.embeddings.as_slice()),
        ]
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("layer1.w_r", self.layer1.w_r.as_mut_slice()),
            ("layer1.w_z", self.layer1.w_z.as_mut_slice()),
            ("layer1.w_h", self.layer1.w_h.as_mut_slice()),
            ("layer2.w_r", self.layer2.w_r.as_mut_slice()),
            ("layer2.w_z", self.layer2.w_z.as_mut_slice()),
            ("layer2.w_h", self.layer2.w_h.as_mut_slice()),
            ("output_proj", self.output_proj.as_mut_slice()),
            ("embeddings", self.embeddings.as_mut_slice()),
        ]
    }
}

impl Parameters for DecoderModel {
    fn groups(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("layer1.w_r", self.layer1.w_r.as_slice()),
            ("layer1.w_z", self.layer1.w_z.as_slice()),
            ("layer1.w_h", self.layer1.w_h.as_slice()),
            ("layer2.w_r", self.layer2.w_r.as_slice()),
            ("layer2.w_z", self.layer2.w_z.as_slice()),
            ("layer2.w_h", self.layer2.w_h.as_slice()),
            ("output_proj", self.output_proj.as_slice()),
            ("embeddings", self.vocab.vectors().as_slice()),
        ]
    }

    fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("layer1.w_r", self.layer1.w_r.as_mut_slice()),
            ("layer1.w_z", self.layer1.w_z.as_mut_slice()),
            ("layer1.w_h", self.layer1.w_h.as_mut_slice()),
            ("layer2.w_r", self.layer2.w_r.as_mut_slice()),
            ("layer2.w_z", self.layer2.w_z.as_mut_slice()),
            ("layer2.w_h", self.layer2.w_h.as_mut_slice()),
            ("output_proj", self.output_proj.as_mut_slice()),
            ("embeddings", self.vocab.vectors_mut().as_mut_slice()),
        ]
    }
}

/// Result of a teacher-forced pass.
#[derive(Debug, Clone)]
pub struct ForcedPass {
    /// Summed negative log-likelihood.
    pub loss: f64,
    pub steps: usize,
    /// Number of steps whose argmax equals the target token.
    pub correct: usize,
}

impl DecoderModel {
    pub fn new(vocab: EmbeddingTable, config: &DecoderConfig) -> Result<Self> {
        if config.hidden == 0 || config.max_steps == 0 {
            return Err(Error::Config("hidden size and max steps must be positive".into()));
        }
        for special in [BOS, EOS, UNK] {
            if !vocab.contains(special) {
                return Err(Error::Config(format!("decoder vocabulary lacks `{special}`")));
            }
        }
        let hidden = config.hidden;
        let embed = vocab.dim();
        let layer1 = GruLayerParams::new(hidden, embed + hidden, config.seed);
        let layer2 = GruLayerParams::new(hidden, hidden, config.seed.wrapping_add(1));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
        let output_proj = Matrix::uniform(vocab.len(), hidden, 1.0 / (hidden as f64).sqrt(), &mut rng);
        Ok(Self {
            layer1,
            layer2,
            output_proj,
            vocab,
            variant: config.variant,
            max_steps: config.max_steps,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.layer1.validate()?;
        self.layer2.validate()?;
        let h = self.hidden();
        check_len(h, self.layer2.hidden())?;
        check_len(h, self.layer2.input())?;
        check_len(self.vocab.dim() + h, self.layer1.input())?;
        check_len(self.vocab.len(), self.output_proj.rows())?;
        check_len(h, self.output_proj.cols())?;
        for special in [BOS, EOS, UNK] {
            if !self.vocab.contains(special) {
                return Err(Error::Checkpoint(format!("decoder vocabulary lacks `{special}`")));
            }
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.layer1.hidden()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn zero_grads(&self) -> DecoderGrads {
        DecoderGrads {
            layer1: self.layer1.zeros_like(),
            layer2: self.layer2.zeros_like(),
            output_proj: Matrix::zeros(self.output_proj.rows(), self.output_proj.cols()),
            embeddings: Matrix::zeros(self.vocab.len(), self.vocab.dim()),
        }
    }

    fn special(&self, token: &str) -> usize {
        self.vocab.index_of(token).expect("validated special token")
    }

    pub fn bos(&self) -> usize {
        self.special(BOS)
    }

    pub fn eos(&self) -> usize {
        self.special(EOS)
    }

    /// Maps a definition onto vocabulary ids (unknowns → UNK) and appends
    /// EOS, keeping at most `max_steps` ids.
    pub fn target_ids(&self, definition: &[String]) -> Vec<usize> {
        let unk = self.special(UNK);
        let mut ids: Vec<usize> = definition
            .iter()
            .take(self.max_steps.saturating_sub(1))
            .map(|t| self.vocab.index_of(t).unwrap_or(unk))
            .collect();
        ids.push(self.eos());
        ids
    }

    pub fn tokens(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.vocab.word(i).to_string()).collect()
    }

    /// `[embedding(token), signal]`
    pub fn step_input(&self, token: usize, signal: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.vocab.dim() + signal.len());
        x.extend_from_slice(self.vocab.vector(token));
        x.extend_from_slice(signal);
        x
    }

    fn check_inputs(&self, inputs: &DecoderInputs) -> Result<()> {
        let h = self.hidden();
        check_len(h, inputs.target_embedding.len())?;
        check_len(h, inputs.aligned_context.len())?;
        check_len(h, inputs.sense_vector.len())
    }

    pub fn initial_state(&self, inputs: &DecoderInputs) -> Result<(DecoderState, Vec<f64>)> {
        self.check_inputs(inputs)?;
        let (h1, h2, signal) = init_states(inputs, self.variant)?;
        Ok((DecoderState { h1, h2 }, signal))
    }

    /// Layer-1 step, layer-2 step, then the logits over the vocabulary.
    pub fn decode_step(&self, state: &DecoderState, x: &[f64]) -> Result<(DecoderState, Vec<f64>)> {
        check_len(self.layer1.input(), x.len())?;
        let h1 = gru_step(&self.layer1, &state.h1, x)?;
        let h2 = gru_step(&self.layer2, &state.h2, &h1)?;
        let logits = self.output_proj.matvec(&h2)?;
        Ok((DecoderState { h1, h2 }, logits))
    }

    fn run_forced(&self, inputs: &DecoderInputs, target: &[usize]) -> Result<(Vec<StepCache>, Vec<f64>)> {
        if target.is_empty() {
            return Err(Error::EmptyTarget);
        }
        if let Some(&bad) = target.iter().find(|&&t| t >= self.vocab_size()) {
            return Err(Error::Index {
                index: bad,
                len: self.vocab_size(),
            });
        }
        let (state, signal) = self.initial_state(inputs)?;
        let (mut h1, mut h2) = (state.h1, state.h2);
        let mut caches = Vec::with_capacity(target.len());
        let mut prev = self.bos();
        for &y in target {
            let x = self.step_input(prev, &signal);
            let (n1, c1) = self.layer1.forward(&h1, &x);
            let (n2, c2) = self.layer2.forward(&h2, &n1);
            let logits = self.output_proj.matvec(&n2)?;
            caches.push(StepCache {
                token: prev,
                layer1: c1,
                layer2: c2,
                h2: n2.clone(),
                probs: softmax(&logits),
            });
            h1 = n1;
            h2 = n2;
            prev = y;
        }
        Ok((caches, signal))
    }

    /// Teacher-forced summed NLL plus token-level argmax accuracy.
    pub fn forced_pass(&self, inputs: &DecoderInputs, target: &[usize]) -> Result<ForcedPass> {
        if target.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let (state, signal) = self.initial_state(inputs)?;
        let mut state = state;
        let mut prev = self.bos();
        let mut loss = 0.0;
        let mut correct = 0;
        for &y in target {
            if y >= self.vocab_size() {
                return Err(Error::Index {
                    index: y,
                    len: self.vocab_size(),
                });
            }
            let x = self.step_input(prev, &signal);
            let (next, logits) = self.decode_step(&state, &x)?;
            loss -= log_softmax(&logits)[y];
            if argmax(&logits) == y {
                correct += 1;
            }
            state = next;
            prev = y;
        }
        Ok(ForcedPass {
            loss,
            steps: target.len(),
            correct,
        })
    }

    /// Loss, parameter gradients, and gradients for the three input signals.
    pub fn loss_and_gradient(
        &self,
        inputs: &DecoderInputs,
        target: &[usize],
    ) -> Result<(f64, DecoderGrads, DecoderInputs)> {
        let mut grads = self.zero_grads();
        let (loss, input_grads) = self.accumulate_gradient(inputs, target, 1.0, &mut grads)?;
        Ok((loss, grads, input_grads))
    }

    /// Adds `scale ·` the parameter gradient into `grads`; returns the loss
    /// and the (scaled) input-signal gradients.
    pub fn accumulate_gradient(
        &self,
        inputs: &DecoderInputs,
        target: &[usize],
        scale: f64,
        grads: &mut DecoderGrads,
    ) -> Result<(f64, DecoderInputs)> {
        let (caches, _) = self.run_forced(inputs, target)?;
        let hidden = self.hidden();
        let embed = self.vocab.dim();
        let mut loss = 0.0;
        let mut dh1 = vec![0.0; hidden];
        let mut dh2 = vec![0.0; hidden];
        let mut d_signal = vec![0.0; hidden];
        let mut dlogits = vec![0.0; self.vocab_size()];
        for (cache, &y) in caches.iter().zip(target).rev() {
            loss -= cache.probs[y].ln();
            for (d, p) in dlogits.iter_mut().zip(&cache.probs) {
                *d = scale * p;
            }
            dlogits[y] -= scale;
            grads.output_proj.add_outer(&dlogits, &cache.h2);
            self.output_proj.matvec_t_acc(&dlogits, &mut dh2);

            let d2 = self.layer2.backward(&cache.layer2, &dh2, &mut grads.layer2);
            dh2.copy_from_slice(&d2[..hidden]);
            for i in 0..hidden {
                dh1[i] += d2[hidden + i];
            }
            let d1 = self.layer1.backward(&cache.layer1, &dh1, &mut grads.layer1);
            dh1.copy_from_slice(&d1[..hidden]);
            crate::linalg::axpy(1.0, &d1[hidden..hidden + embed], grads.embeddings.row_mut(cache.token));
            crate::linalg::axpy(1.0, &d1[hidden + embed..], &mut d_signal);
        }
        let mut input_grads = DecoderInputs::zeros(hidden);
        crate::linalg::axpy(1.0, &dh1, input_grads.get_mut(self.variant.layer1));
        crate::linalg::axpy(1.0, &dh2, input_grads.get_mut(self.variant.layer2));
        crate::linalg::axpy(1.0, &d_signal, input_grads.get_mut(self.variant.step));
        Ok((loss, input_grads))
    }

    /// Greedy argmax decoding until EOS or `max_steps`; EOS is not returned.
    pub fn greedy_decode(&self, inputs: &DecoderInputs) -> Result<Vec<usize>> {
        let (mut state, signal) = self.initial_state(inputs)?;
        let eos = self.eos();
        let mut prev = self.bos();
        let mut out = Vec::new();
        for _ in 0..self.max_steps {
            let x = self.step_input(prev, &signal);
            let (next, logits) = self.decode_step(&state, &x)?;
            let y = argmax(&logits);
            if y == eos {
                break;
            }
            out.push(y);
            state = next;
            prev = y;
        }
        Ok(out)
    }
}

/// `−Σ_t log p_t(ỹ_t)` with the previous ground-truth token fed at each step.
pub fn teacher_forced_loss(model: &DecoderModel, inputs: &DecoderInputs, target: &[usize]) -> Result<f64> {
    Ok(model.forced_pass(inputs, target)?.loss)
}

pub fn greedy_decode(model: &DecoderModel, inputs: &DecoderInputs) -> Result<Vec<String>> {
    Ok(model.tokens(&model.greedy_decode(inputs)?))
}
