//! The scoring network: problem tower, algorithm tower (encoder, feature
//! selector, embedding table, fusion), cosine head and final MLP, plus the
//! table-free cosine-free generalization variant and the ablations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::embedding_store::TokenEmbeddingSequence;
use crate::nn::{
    embedding_lookup, gumbel_weights, lstm_encode, Activation, BoundDense, BoundLstm, BoundMlp, DenseLayer,
    EmbeddingTable, FirstHidden, GumbelSelector, LstmParams, MlpParams, NnError, SelectorMode,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(AutodiffError),
    #[error("top-k needs 1 <= k <= {dim}, got {k}")]
    BadK { k: usize, dim: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("embedding-table row index required")]
    MissingIndex,
    #[error("algorithm token sequence required")]
    MissingSequence,
    #[error("variant mismatch: {0}")]
    VariantMismatch(String),
}

impl From<AutodiffError> for ModelError {
    fn from(e: AutodiffError) -> Self {
        ModelError::Autodiff(e)
    }
}

impl From<NnError> for ModelError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Autodiff(e) => ModelError::Autodiff(e),
            NnError::BadK { k, dim } => ModelError::BadK { k, dim },
        }
    }
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Predict the normalised log-PAR10 target; select the minimum.
    Regression,
    /// Predict a match logit; select the maximum.
    Classification,
}

/// How the token sequence becomes the `D`-dim algorithm feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// LSTM over the tokens, then a linear map of `(h_last, h_first)`.
    #[default]
    Lstm,
    /// Mean of the token rows; requires `feature_dim == embed_dim`.
    MeanPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Token embedding width `e`.
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    /// Encoder output width `D`.
    pub feature_dim: usize,
    /// Features kept after selection.
    pub top_k: usize,
    /// Shared representation width `m`.
    pub repr_dim: usize,
    pub problem_hidden: Vec<usize>,
    pub algorithm_hidden: Vec<usize>,
    pub score_hidden: Vec<usize>,
    pub activation: Activation,
    /// Fusion weight of the pretrained features against the table row.
    pub alpha: f64,
    pub tau: f64,
    pub loss_mode: LossMode,
    pub encoder: EncoderKind,
    pub first_hidden: FirstHidden,
    pub mlp_bias: bool,
    pub use_algorithm_features: bool,
    pub use_feature_selection: bool,
    pub use_cosine: bool,
    pub use_embedding_table: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            lstm_hidden: 64,
            feature_dim: 256,
            top_k: 64,
            repr_dim: 32,
            problem_hidden: vec![64],
            algorithm_hidden: vec![64],
            score_hidden: vec![32],
            activation: Activation::Relu,
            alpha: 0.5,
            tau: 1.0,
            loss_mode: LossMode::Regression,
            encoder: EncoderKind::Lstm,
            first_hidden: FirstHidden::AfterFirstStep,
            mlp_bias: true,
            use_algorithm_features: true,
            use_feature_selection: true,
            use_cosine: true,
            use_embedding_table: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.embed_dim == 0 || self.feature_dim == 0 || self.lstm_hidden == 0 {
            return bad("embed_dim, feature_dim and lstm_hidden must be positive".into());
        }
        if self.top_k == 0 || self.top_k > self.feature_dim {
            return bad(format!("top_k {} outside 1..={}", self.top_k, self.feature_dim));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.repr_dim == 0 {
            return bad("repr_dim must be positive".into());
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau {} must be positive", self.tau));
        }
        if self.encoder == EncoderKind::MeanPool && self.feature_dim != self.embed_dim {
            return bad("mean_pool encoder needs feature_dim == embed_dim".into());
        }
        if self
            .problem_hidden
            .iter()
            .chain(&self.algorithm_hidden)
            .chain(&self.score_hidden)
            .any(|&h| h == 0)
        {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }

    /// Table-free and cosine-free: can score algorithms never seen in training.
    pub fn is_generalizing(&self) -> bool {
        self.use_algorithm_features && !self.use_embedding_table && !self.use_cosine
    }

    /// Width of the `MLP_S` input.
    pub fn score_input_dim(&self) -> usize {
        match (self.use_algorithm_features, self.use_cosine) {
            (false, _) => self.repr_dim,
            (true, true) => 2 * self.repr_dim + 1,
            (true, false) => 2 * self.repr_dim,
        }
    }

    /// Fusion weight in effect; without a table the pretrained path is used alone.
    pub fn effective_alpha(&self) -> f64 {
        if self.use_embedding_table {
            self.alpha
        } else {
            1.0
        }
    }

    /// The generalization variant of this config.
    pub fn generalizing(&self) -> Self {
        Self {
            use_embedding_table: false,
            use_cosine: false,
            use_algorithm_features: true,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// No algorithm features at all.
    #[serde(rename = "AF")]
    AlgorithmFeatures,
    /// No feature selection.
    #[serde(rename = "FS")]
    FeatureSelection,
    /// No cosine similarity in the head.
    #[serde(rename = "CS")]
    CosineSimilarity,
}

pub fn make_ablation(config: &ModelConfig, which: Ablation) -> ModelConfig {
    let mut c = config.clone();
    match which {
        Ablation::AlgorithmFeatures => {
            c.use_algorithm_features = false;
            c.use_embedding_table = false;
        }
        Ablation::FeatureSelection => c.use_feature_selection = false,
        Ablation::CosineSimilarity => c.use_cosine = false,
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Full width `D` with the Gumbel selector.
    Stage1,
    /// Width `k`: only the selected coordinates, no selector.
    Stage2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub lstm: Option<LstmParams>,
    pub out_linear: Option<DenseLayer>,
}

/// Every learnable tensor plus the bookkeeping needed to use them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub stage: Stage,
    /// Kept coordinates of `F_a` in stage 2, ascending.
    pub selected: Vec<usize>,
    /// Training-time candidates; row order of the embedding table.
    pub algorithm_ids: Vec<String>,
    pub num_problem_features: usize,
    pub encoder: Option<EncoderParams>,
    pub selector: Option<GumbelSelector>,
    pub table: Option<EmbeddingTable>,
    pub mlp_p: MlpParams,
    pub mlp_a: Option<MlpParams>,
    pub mlp_s: MlpParams,
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

impl ModelParams {
    /// Stage-1 model: full width with a selector.
    pub fn init_stage1(
        config: &ModelConfig,
        num_problem_features: usize,
        algorithm_ids: &[String],
        seed: u64,
    ) -> Result<Self> {
        Self::init(
            config,
            num_problem_features,
            algorithm_ids,
            Stage::Stage1,
            Vec::new(),
            seed,
        )
    }

    /// Stage-2 model over the given coordinates of `F_a`.
    pub fn init_stage2(
        config: &ModelConfig,
        num_problem_features: usize,
        algorithm_ids: &[String],
        selected: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        Self::init(
            config,
            num_problem_features,
            algorithm_ids,
            Stage::Stage2,
            selected,
            seed,
        )
    }

    fn init(
        config: &ModelConfig,
        num_problem_features: usize,
        algorithm_ids: &[String],
        stage: Stage,
        selected: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if num_problem_features == 0 {
            return Err(ModelError::InvalidConfig("no problem features".into()));
        }
        if stage == Stage::Stage2 {
            if selected.is_empty() || selected.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ModelError::InvalidConfig(
                    "selected indices must be ascending and non-empty".into(),
                ));
            }
            if let Some(&bad) = selected.iter().find(|&&i| i >= config.feature_dim) {
                return Err(ModelError::BadK {
                    k: bad,
                    dim: config.feature_dim,
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config;
        let act = c.activation;
        let width = match stage {
            Stage::Stage1 => c.feature_dim,
            Stage::Stage2 => selected.len(),
        };
        let algo = c.use_algorithm_features;
        let encoder = algo.then(|| match c.encoder {
            EncoderKind::Lstm => EncoderParams {
                lstm: Some(LstmParams::init(&mut rng, c.embed_dim, c.lstm_hidden)),
                out_linear: Some(DenseLayer::init(
                    &mut rng,
                    2 * c.lstm_hidden,
                    c.feature_dim,
                    Activation::Identity,
                    true,
                )),
            },
            EncoderKind::MeanPool => EncoderParams {
                lstm: None,
                out_linear: None,
            },
        });
        let selector = (algo && stage == Stage::Stage1).then(|| GumbelSelector::new(c.feature_dim, c.tau));
        let table = (algo && c.use_embedding_table).then(|| EmbeddingTable::init(&mut rng, algorithm_ids.len(), width));
        let mlp_p = MlpParams::init(
            &mut rng,
            &dims(num_problem_features, &c.problem_hidden, c.repr_dim),
            act,
            Activation::Identity,
            c.mlp_bias,
        );
        let mlp_a = algo.then(|| {
            MlpParams::init(
                &mut rng,
                &dims(width, &c.algorithm_hidden, c.repr_dim),
                act,
                Activation::Identity,
                c.mlp_bias,
            )
        });
        let mlp_s = MlpParams::init(
            &mut rng,
            &dims(c.score_input_dim(), &c.score_hidden, 1),
            act,
            Activation::Identity,
            c.mlp_bias,
        );
        Ok(Self {
            config: c.clone(),
            stage,
            selected,
            algorithm_ids: algorithm_ids.to_vec(),
            num_problem_features,
            encoder,
            selector,
            table,
            mlp_p,
            mlp_a,
            mlp_s,
        })
    }

    /// Width of the fused algorithm vector fed to `MLP_A`.
    pub fn algorithm_width(&self) -> usize {
        match self.stage {
            Stage::Stage1 => self.config.feature_dim,
            Stage::Stage2 => self.selected.len(),
        }
    }

    pub fn row_of(&self, algorithm_id: &str) -> Option<usize> {
        self.algorithm_ids.iter().position(|a| a == algorithm_id)
    }

    /// Parameters in binding order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        if let Some(e) = &self.encoder {
            if let Some(l) = &e.lstm {
                out.extend(l.tensors());
            }
            if let Some(o) = &e.out_linear {
                out.extend(o.tensors());
            }
        }
        if let Some(s) = &self.selector {
            out.push(&s.logits);
        }
        if let Some(t) = &self.table {
            out.push(&t.weights);
        }
        out.extend(self.mlp_p.tensors());
        if let Some(a) = &self.mlp_a {
            out.extend(a.tensors());
        }
        out.extend(self.mlp_s.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.encoder {
            if let Some(l) = &mut e.lstm {
                out.extend(l.tensors_mut());
            }
            if let Some(o) = &mut e.out_linear {
                out.extend(o.tensors_mut());
            }
        }
        if let Some(s) = &mut self.selector {
            out.push(&mut s.logits);
        }
        if let Some(t) = &mut self.table {
            out.push(&mut t.weights);
        }
        out.extend(self.mlp_p.tensors_mut());
        if let Some(a) = &mut self.mlp_a {
            out.extend(a.tensors_mut());
        }
        out.extend(self.mlp_s.tensors_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    pub fn bind<'a>(&'a self, g: &mut Graph, trainable: bool) -> Forward<'a> {
        let (lstm, out_linear) = match &self.encoder {
            Some(e) => (
                e.lstm.as_ref().map(|l| l.bind(g, trainable)),
                e.out_linear.as_ref().map(|o| o.bind(g, trainable)),
            ),
            None => (None, None),
        };
        let logits = self.selector.as_ref().map(|s| g.tensor(&s.logits, trainable));
        let table = self.table.as_ref().map(|t| g.tensor(&t.weights, trainable));
        let mlp_p = self.mlp_p.bind(g, trainable);
        let mlp_a = self.mlp_a.as_ref().map(|a| a.bind(g, trainable));
        let mlp_s = self.mlp_s.bind(g, trainable);
        Forward {
            params: self,
            lstm,
            out_linear,
            logits,
            table,
            mlp_p,
            mlp_a,
            mlp_s,
        }
    }

    /// Scores one (problem, algorithm) pair in evaluation mode.
    pub fn score_pair(&self, problem: &[f64], seq: Option<&TokenEmbeddingSequence>, row: Option<usize>) -> Result<f64> {
        let mut g = Graph::new();
        let f = self.bind(&mut g, false);
        let vp = f.encode_problem(&mut g, problem)?;
        let va = if self.config.use_algorithm_features {
            let w = f.selector_weights(&mut g, SelectorMode::Eval)?;
            Some(f.encode_algorithm(&mut g, seq, row, w)?)
        } else {
            None
        };
        let s = f.score(&mut g, vp, va)?;
        Ok(g.scalar(s))
    }

    /// Score of the generalization variant: needs only the token sequence.
    pub fn score_g(&self, problem: &[f64], seq: &TokenEmbeddingSequence) -> Result<f64> {
        if !self.config.is_generalizing() {
            return Err(ModelError::VariantMismatch(
                "score_g needs a model without embedding table and cosine head".into(),
            ));
        }
        self.score_pair(problem, Some(seq), None)
    }

    /// Algorithm representations `V_a` in evaluation mode.
    pub fn algorithm_representations(&self, candidates: &[AlgorithmInput<'_>]) -> Result<Vec<Vec<f64>>> {
        if !self.config.use_algorithm_features {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let f = self.bind(&mut g, false);
        let w = f.selector_weights(&mut g, SelectorMode::Eval)?;
        candidates
            .iter()
            .map(|c| {
                let v = f.encode_algorithm(&mut g, c.seq, c.row, w)?;
                Ok(g.value(v).to_vec())
            })
            .collect()
    }

    /// Evaluation-mode vectors fed to `MLP_A`, one per candidate.
    pub fn algorithm_inputs(&self, candidates: &[AlgorithmInput<'_>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let f = self.bind(&mut g, false);
        let w = f.selector_weights(&mut g, SelectorMode::Eval)?;
        candidates
            .iter()
            .map(|c| {
                let v = f.algorithm_input(&mut g, c.seq, c.row, w)?;
                Ok(g.value(v).to_vec())
            })
            .collect()
    }

    /// Evaluation-mode scores, `out[problem][candidate]`.
    pub fn score_matrix(&self, problems: &[Vec<f64>], candidates: &[AlgorithmInput<'_>]) -> Result<Vec<Vec<f64>>> {
        const CHUNK: usize = 256;
        let reprs = self.algorithm_representations(candidates)?;
        let mut out = Vec::with_capacity(problems.len());
        for chunk in problems.chunks(CHUNK) {
            let mut g = Graph::new();
            let f = self.bind(&mut g, false);
            let vas: Vec<Var> = reprs.iter().map(|r| g.vector(r)).collect();
            for p in chunk {
                let vp = f.encode_problem(&mut g, p)?;
                let row = if self.config.use_algorithm_features {
                    vas.iter()
                        .map(|&va| {
                            let s = f.score(&mut g, vp, Some(va))?;
                            Ok(g.scalar(s))
                        })
                        .collect::<Result<Vec<_>>>()?
                } else {
                    let s = f.score(&mut g, vp, None)?;
                    vec![g.scalar(s); candidates.len()]
                };
                out.push(row);
            }
        }
        Ok(out)
    }
}

/// Inputs needed to represent one candidate algorithm.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlgorithmInput<'a> {
    pub seq: Option<&'a TokenEmbeddingSequence>,
    pub row: Option<usize>,
}

/// Parameters bound into a graph.
pub struct Forward<'a> {
    pub params: &'a ModelParams,
    pub lstm: Option<BoundLstm>,
    pub out_linear: Option<BoundDense>,
    pub logits: Option<Var>,
    pub table: Option<Var>,
    pub mlp_p: BoundMlp,
    pub mlp_a: Option<BoundMlp>,
    pub mlp_s: BoundMlp,
}

impl Forward<'_> {
    /// Graph variables in the same order as [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if let Some(l) = &self.lstm {
            l.vars(&mut out);
        }
        if let Some(o) = &self.out_linear {
            o.vars(&mut out);
        }
        out.extend(self.logits);
        out.extend(self.table);
        self.mlp_p.vars(&mut out);
        if let Some(a) = &self.mlp_a {
            a.vars(&mut out);
        }
        self.mlp_s.vars(&mut out);
        out
    }

    /// `V_p = MLP_P(F_p)`.
    pub fn encode_problem(&self, g: &mut Graph, features: &[f64]) -> Result<Var> {
        let x = g.vector(features);
        Ok(self.mlp_p.forward(g, x)?)
    }

    /// Encoder output `F_a` of width `D`.
    pub fn algorithm_features(&self, g: &mut Graph, seq: &TokenEmbeddingSequence) -> Result<Var> {
        let c = &self.params.config;
        match c.encoder {
            EncoderKind::Lstm => {
                let (Some(l), Some(o)) = (&self.lstm, &self.out_linear) else {
                    return Err(ModelError::VariantMismatch("model has no algorithm encoder".into()));
                };
                Ok(lstm_encode(g, l, o, seq, c.first_hidden)?)
            }
            EncoderKind::MeanPool => {
                if seq.dim() != c.feature_dim {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "mean_pool",
                        left: vec![seq.len(), seq.dim()],
                        right: vec![c.feature_dim],
                    }
                    .into());
                }
                Ok(g.vector(&seq.mean_token()))
            }
        }
    }

    /// Selector weights for this pass; `None` outside stage 1.
    pub fn selector_weights(&self, g: &mut Graph, mode: SelectorMode<'_>) -> Result<Option<Var>> {
        match (self.logits, &self.params.selector) {
            (Some(l), Some(sel)) => Ok(Some(gumbel_weights(g, l, sel.tau, mode)?)),
            _ => Ok(None),
        }
    }

    /// Same as [`Forward::selector_weights`] with an explicit temperature.
    pub fn selector_weights_at(&self, g: &mut Graph, tau: f64, mode: SelectorMode<'_>) -> Result<Option<Var>> {
        match self.logits {
            Some(l) => Ok(Some(gumbel_weights(g, l, tau, mode)?)),
            None => Ok(None),
        }
    }

    /// `V_a = MLP_A[alpha F'_a + (1 - alpha) E'_a]`.
    ///
    /// Stage 1 weights all `D` coordinates by `weights`; stage 2 keeps only
    /// the selected ones.
    pub fn encode_algorithm(
        &self,
        g: &mut Graph,
        seq: Option<&TokenEmbeddingSequence>,
        row: Option<usize>,
        weights: Option<Var>,
    ) -> Result<Var> {
        let mlp_a = self
            .mlp_a
            .as_ref()
            .ok_or_else(|| ModelError::VariantMismatch("model has no algorithm tower".into()))?;
        let fused = self.algorithm_input(g, seq, row, weights)?;
        Ok(mlp_a.forward(g, fused)?)
    }

    /// The fused vector fed to `MLP_A`.
    pub fn algorithm_input(
        &self,
        g: &mut Graph,
        seq: Option<&TokenEmbeddingSequence>,
        row: Option<usize>,
        weights: Option<Var>,
    ) -> Result<Var> {
        let seq = seq.ok_or(ModelError::MissingSequence)?;
        let f = self.algorithm_features(g, seq)?;
        self.fuse(g, f, row, weights)
    }

    /// Applies the selector (or the stage-2 gather) to an encoder output and
    /// fuses it with the table row.
    pub fn fuse(&self, g: &mut Graph, f: Var, row: Option<usize>, weights: Option<Var>) -> Result<Var> {
        let p = self.params;
        let f_prime = match p.stage {
            Stage::Stage1 => match weights {
                Some(w) => g.mul(w, f)?,
                None => f,
            },
            Stage::Stage2 => g.gather(f, &p.selected)?,
        };
        let table = self.table.filter(|_| p.config.use_embedding_table);
        Ok(match table {
            Some(table) => {
                let row = row.ok_or(ModelError::MissingIndex)?;
                let e = embedding_lookup(g, table, row)?;
                let alpha = p.config.alpha;
                let a = g.scale(f_prime, alpha);
                let b = g.scale(e, 1.0 - alpha);
                g.add(a, b)?
            }
            None => f_prime,
        })
    }

    /// `MLP_S[concat(V_a, V_p, d)]`, dropping `d` without the cosine head and
    /// `V_a` without algorithm features.
    pub fn score(&self, g: &mut Graph, vp: Var, va: Option<Var>) -> Result<Var> {
        let c = &self.params.config;
        let input = match (c.use_algorithm_features, va) {
            (false, _) => vp,
            (true, None) => return Err(ModelError::MissingSequence),
            (true, Some(va)) if c.use_cosine => {
                let d = g.cosine_similarity(va, vp)?;
                g.concat(&[va, vp, d], 0)?
            }
            (true, Some(va)) => g.concat(&[va, vp], 0)?,
        };
        Ok(self.mlp_s.forward(g, input)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_store::synth_catalog;

    fn small() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            lstm_hidden: 5,
            feature_dim: 6,
            top_k: 3,
            repr_dim: 4,
            problem_hidden: vec![5],
            algorithm_hidden: vec![5],
            score_hidden: vec![4],
            ..Default::default()
        }
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    #[test]
    fn config_validation() {
        assert!(small().validate().is_ok());
        let mut c = small();
        c.top_k = 7;
        assert!(c.validate().is_err());
        c = small();
        c.alpha = 1.5;
        assert!(c.validate().is_err());
        c = small();
        c.encoder = EncoderKind::MeanPool;
        assert!(c.validate().is_err());
        c.feature_dim = 4;
        c.top_k = 2;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn score_input_dims() {
        let c = small();
        let p = ModelParams::init_stage1(&c, 3, &ids(2), 1).unwrap();
        assert_eq!(p.mlp_s.input_dim(), 2 * 4 + 1);
        let cs = make_ablation(&c, Ablation::CosineSimilarity);
        let p = ModelParams::init_stage1(&cs, 3, &ids(2), 1).unwrap();
        assert_eq!(p.mlp_s.input_dim(), 8);
        let af = make_ablation(&c, Ablation::AlgorithmFeatures);
        let p = ModelParams::init_stage1(&af, 3, &ids(2), 1).unwrap();
        assert_eq!(p.mlp_s.input_dim(), 4);
        assert!(p.encoder.is_none() && p.mlp_a.is_none() && p.table.is_none());
        assert!(!make_ablation(&c, Ablation::FeatureSelection).use_feature_selection);
    }

    #[test]
    fn stage_widths() {
        let c = small();
        let s1 = ModelParams::init_stage1(&c, 3, &ids(2), 1).unwrap();
        assert_eq!(s1.table.as_ref().unwrap().width(), 6);
        assert_eq!(s1.mlp_a.as_ref().unwrap().input_dim(), 6);
        let s2 = ModelParams::init_stage2(&c, 3, &ids(2), vec![1, 4, 5], 1).unwrap();
        assert_eq!(s2.table.as_ref().unwrap().width(), 3);
        assert_eq!(s2.mlp_a.as_ref().unwrap().input_dim(), 3);
        assert!(s2.selector.is_none());
        assert!(ModelParams::init_stage2(&c, 3, &ids(2), vec![4, 1], 1).is_err());
        assert!(ModelParams::init_stage2(&c, 3, &ids(2), vec![6], 1).is_err());
    }

    #[test]
    fn zero_weight_problem_tower_gives_bias() {
        let mut p = ModelParams::init_stage1(&small(), 3, &ids(2), 2).unwrap();
        for l in &mut p.mlp_p.layers {
            l.weight.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let last = p.mlp_p.layers.last_mut().unwrap();
        last.bias = Some(Tensor::vector(vec![0.5, -1.0, 2.0, 0.0]));
        let mut g = Graph::new();
        let f = p.bind(&mut g, false);
        let vp = f.encode_problem(&mut g, &[3.0, -2.0, 1.0]).unwrap();
        assert_eq!(g.value(vp), &[0.5, -1.0, 2.0, 0.0]);
    }

    #[test]
    fn problem_tower_hand_computed() {
        let mut c = small();
        c.problem_hidden = vec![];
        c.repr_dim = 2;
        let mut p = ModelParams::init_stage1(&c, 2, &ids(1), 0).unwrap();
        p.mlp_p.layers[0].weight = Tensor::new(vec![2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        p.mlp_p.layers[0].bias = Some(Tensor::vector(vec![0.25, 0.0]));
        let mut g = Graph::new();
        let f = p.bind(&mut g, false);
        let vp = f.encode_problem(&mut g, &[2.0, 4.0]).unwrap();
        // identity output activation: [2 + 8 + 0.25, -2 + 2]
        assert_eq!(g.value(vp), &[10.25, 0.0]);
    }

    #[test]
    fn fusion_extremes() {
        let cat = synth_catalog(&["a0", "a1"], 4, 3, 9);
        let seq0 = cat.get("a0").unwrap();
        let seq1 = cat.get("a1").unwrap();
        let x = [0.3, -1.0, 0.8];

        let mut c = small();
        c.alpha = 1.0;
        let p = ModelParams::init_stage1(&c, 3, &ids(2), 3).unwrap();
        let s0 = p.score_pair(&x, Some(seq0), Some(0)).unwrap();
        let s1 = p.score_pair(&x, Some(seq0), Some(1)).unwrap();
        assert_eq!(s0, s1);

        c.alpha = 0.0;
        let p = ModelParams::init_stage1(&c, 3, &ids(2), 3).unwrap();
        let s0 = p.score_pair(&x, Some(seq0), Some(0)).unwrap();
        let s1 = p.score_pair(&x, Some(seq1), Some(0)).unwrap();
        assert_eq!(s0, s1);
    }

    #[test]
    fn fusion_arithmetic() {
        let mut c = small();
        c.encoder = EncoderKind::MeanPool;
        c.embed_dim = 2;
        c.feature_dim = 2;
        c.top_k = 2;
        c.alpha = 0.5;
        c.algorithm_hidden = vec![];
        c.repr_dim = 2;
        let mut p = ModelParams::init_stage2(&c, 3, &ids(1), vec![0, 1], 0).unwrap();
        p.table.as_mut().unwrap().weights = Tensor::new(vec![1, 2], vec![0.0, 2.0]).unwrap();
        let l = &mut p.mlp_a.as_mut().unwrap().layers[0];
        l.weight = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        l.bias = Some(Tensor::zeros(&[2]));
        let seq = TokenEmbeddingSequence::new("a0", vec![vec![2.0, 0.0]]).unwrap();
        let mut g = Graph::new();
        let f = p.bind(&mut g, false);
        let va = f.encode_algorithm(&mut g, Some(&seq), Some(0), None).unwrap();
        assert_eq!(g.value(va), &[1.0, 1.0]);
    }

    #[test]
    fn missing_inputs() {
        let p = ModelParams::init_stage1(&small(), 3, &ids(2), 3).unwrap();
        let cat = synth_catalog(&["a0"], 4, 2, 1);
        let x = [0.0, 1.0, 2.0];
        assert_eq!(
            p.score_pair(&x, Some(cat.get("a0").unwrap()), None),
            Err(ModelError::MissingIndex)
        );
        assert_eq!(p.score_pair(&x, None, Some(0)), Err(ModelError::MissingSequence));
    }

    #[test]
    fn eval_scores_deterministic() {
        let p = ModelParams::init_stage1(&small(), 3, &ids(2), 4).unwrap();
        let cat = synth_catalog(&["a0"], 4, 2, 1);
        let seq = cat.get("a0").unwrap();
        let x = [0.2, 0.1, -0.3];
        assert_eq!(
            p.score_pair(&x, Some(seq), Some(1)).unwrap(),
            p.score_pair(&x, Some(seq), Some(1)).unwrap()
        );
        let q = ModelParams::init_stage1(&small(), 3, &ids(2), 4).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn zero_weight_head_gives_bias() {
        let mut p = ModelParams::init_stage1(&small(), 3, &ids(2), 5).unwrap();
        for l in &mut p.mlp_s.layers {
            l.weight.values.iter_mut().for_each(|v| *v = 0.0);
        }
        p.mlp_s.layers.last_mut().unwrap().bias = Some(Tensor::vector(vec![0.125]));
        let cat = synth_catalog(&["a0", "a1"], 4, 2, 1);
        for (x, a) in [([1.0, 2.0, 3.0], "a0"), ([-4.0, 0.0, 9.0], "a1")] {
            let s = p.score_pair(&x, Some(cat.get(a).unwrap()), Some(0)).unwrap();
            assert_eq!(s, 0.125);
        }
    }

    #[test]
    fn generalizing_ignores_table() {
        let c = small().generalizing();
        let p = ModelParams::init_stage2(&c, 3, &ids(2), vec![0, 2, 3], 6).unwrap();
        assert!(p.table.is_none());
        let cat = synth_catalog(&["unseen"], 4, 3, 8);
        let seq = cat.get("unseen").unwrap();
        let x = [0.5, 0.5, -0.5];
        let s = p.score_g(&x, seq).unwrap();
        assert!(s.is_finite());
        let mut with_table = p.clone();
        with_table.table = Some(EmbeddingTable {
            weights: Tensor::new(vec![2, 3], vec![9.0; 6]).unwrap(),
        });
        assert_eq!(with_table.score_g(&x, seq).unwrap().to_bits(), s.to_bits());
        assert_eq!(p.score_pair(&x, Some(seq), None).unwrap().to_bits(), s.to_bits());
        let full = ModelParams::init_stage1(&small(), 3, &ids(2), 6).unwrap();
        assert!(matches!(full.score_g(&x, seq), Err(ModelError::VariantMismatch(_))));
    }

    #[test]
    fn stage2_ignores_dropped_coordinates() {
        let mut c = small();
        c.encoder = EncoderKind::MeanPool;
        c.embed_dim = 6;
        let p = ModelParams::init_stage2(&c, 3, &ids(1), vec![1, 3, 4], 7).unwrap();
        let x = [0.1, 0.2, 0.3];
        let base = vec![0.5, -1.0, 0.25, 2.0, -0.75, 1.5];
        let s = p
            .score_pair(
                &x,
                Some(&TokenEmbeddingSequence::new("a0", vec![base.clone()]).unwrap()),
                Some(0),
            )
            .unwrap();
        let mut other = base;
        other[0] = 40.0;
        other[2] = -3.0;
        other[5] = 0.0;
        let t = p
            .score_pair(
                &x,
                Some(&TokenEmbeddingSequence::new("a0", vec![other]).unwrap()),
                Some(0),
            )
            .unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn table_rows_separate_identical_sequences() {
        let p = ModelParams::init_stage1(&small(), 3, &ids(2), 11).unwrap();
        let cat = synth_catalog(&["same"], 4, 3, 2);
        let seq = cat.get("same").unwrap();
        let mut g = Graph::new();
        let f = p.bind(&mut g, false);
        let a = f.encode_algorithm(&mut g, Some(seq), Some(0), None).unwrap();
        let b = f.encode_algorithm(&mut g, Some(seq), Some(1), None).unwrap();
        assert_ne!(g.value(a), g.value(b));
    }

    #[test]
    fn score_matrix_matches_pairwise() {
        let p = ModelParams::init_stage1(&small(), 3, &ids(2), 12).unwrap();
        let cat = synth_catalog(&["a0", "a1"], 4, 3, 2);
        let cands = [
            AlgorithmInput {
                seq: Some(cat.get("a0").unwrap()),
                row: Some(0),
            },
            AlgorithmInput {
                seq: Some(cat.get("a1").unwrap()),
                row: Some(1),
            },
        ];
        let probs = vec![vec![0.1, 0.2, 0.3], vec![-1.0, 0.0, 1.0]];
        let m = p.score_matrix(&probs, &cands).unwrap();
        for (i, x) in probs.iter().enumerate() {
            for (j, c) in cands.iter().enumerate() {
                assert_eq!(m[i][j], p.score_pair(x, c.seq, c.row).unwrap());
            }
        }
    }
}
