//! Trainable building blocks: dense stacks, the LSTM algorithm encoder, the
//! Gumbel-softmax feature selector and the per-algorithm embedding table.
//!
//! Parameters live in plain structs of [`Tensor`]s. For each forward pass they
//! are bound into a [`Graph`] as leaves; the `Bound*` mirrors hold the
//! resulting [`Var`]s in the same order as `tensors()` so gradients can be read
//! back positionally.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::embedding_store::TokenEmbeddingSequence;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("top-k needs 1 <= k <= {dim}, got {k}")]
    BadK { k: usize, dim: usize },
}

type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => x,
        }
    }

    /// 1-Lipschitz and positively homogeneous.
    pub fn is_homogeneous(self) -> bool {
        matches!(self, Activation::Relu | Activation::Identity)
    }
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation.
pub fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let numel = shape.iter().product();
    let values = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor {
        shape: shape.to_vec(),
        values,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `[out, in]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn init(rng: &mut ChaCha8Rng, input: usize, output: usize, activation: Activation, bias: bool) -> Self {
        Self {
            weight: uniform_init(rng, &[output, input], input),
            bias: bias.then(|| Tensor::zeros(&[output])),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundDense {
        BoundDense {
            weight: g.tensor(&self.weight, trainable),
            bias: self.bias.as_ref().map(|b| g.tensor(b, trainable)),
            activation: self.activation,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.weight];
        out.extend(self.bias.as_ref());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.weight];
        out.extend(self.bias.as_mut());
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub weight: Var,
    pub bias: Option<Var>,
    pub activation: Activation,
}

impl BoundDense {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut y = g.matvec(self.weight, x)?;
        if let Some(b) = self.bias {
            y = g.add(y, b)?;
        }
        Ok(self.activation.apply(g, y))
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        out.push(self.weight);
        out.extend(self.bias);
    }
}

/// Multilayer perceptron: a chain of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    /// `dims = [input, hidden..., output]`; hidden layers use `hidden_act`, the
    /// last one `output_act`.
    pub fn init(
        rng: &mut ChaCha8Rng,
        dims: &[usize],
        hidden_act: Activation,
        output_act: Activation,
        bias: bool,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() { output_act } else { hidden_act };
                DenseLayer::init(rng, w[0], w[1], act, bias)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(DenseLayer::output_dim).unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(g, trainable)).collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(DenseLayer::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(DenseLayer::tensors_mut).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub layers: Vec<BoundDense>,
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.layers.iter().try_fold(x, |h, l| l.forward(g, h))
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        for l in &self.layers {
            l.vars(out);
        }
    }
}

/// Plain-value forward pass of an MLP.
pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let xv = g.vector(x);
    let y = b.forward(&mut g, xv)?;
    Ok(g.value(y).to_vec())
}

/// One LSTM gate: `W_x x + W_h h + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// `[hidden, input]`
    pub w_input: Tensor,
    /// `[hidden, hidden]`
    pub w_hidden: Tensor,
    pub bias: Tensor,
}

/// Single-layer LSTM, gates in the order input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub input_gate: GateParams,
    pub forget_gate: GateParams,
    pub candidate: GateParams,
    pub output_gate: GateParams,
}

/// Which hidden state is paired with the final one in the encoder summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FirstHidden {
    /// Hidden state after consuming the first token.
    #[default]
    AfterFirstStep,
    /// The zero state the recurrence starts from.
    Zero,
}

impl LstmParams {
    pub fn init(rng: &mut ChaCha8Rng, input_dim: usize, hidden: usize) -> Self {
        let gate = |rng: &mut ChaCha8Rng, bias: f64| GateParams {
            w_input: uniform_init(rng, &[hidden, input_dim], input_dim),
            w_hidden: uniform_init(rng, &[hidden, hidden], hidden),
            bias: Tensor::vector(vec![bias; hidden]),
        };
        Self {
            input_dim,
            hidden,
            input_gate: gate(rng, 0.0),
            forget_gate: gate(rng, 1.0),
            candidate: gate(rng, 0.0),
            output_gate: gate(rng, 0.0),
        }
    }

    fn gates(&self) -> [&GateParams; 4] {
        [&self.input_gate, &self.forget_gate, &self.candidate, &self.output_gate]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundLstm {
        let gates = self.gates().map(|p| BoundGate {
            w_input: g.tensor(&p.w_input, trainable),
            w_hidden: g.tensor(&p.w_hidden, trainable),
            bias: g.tensor(&p.bias, trainable),
        });
        BoundLstm {
            input_dim: self.input_dim,
            hidden: self.hidden,
            gates,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.gates()
            .into_iter()
            .flat_map(|p| [&p.w_input, &p.w_hidden, &p.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        [
            &mut self.input_gate,
            &mut self.forget_gate,
            &mut self.candidate,
            &mut self.output_gate,
        ]
        .into_iter()
        .flat_map(|p| [&mut p.w_input, &mut p.w_hidden, &mut p.bias])
        .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundGate {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
}

impl BoundGate {
    fn pre_activation(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let a = g.matvec(self.w_input, x)?;
        let b = g.matvec(self.w_hidden, h)?;
        let s = g.add(a, b)?;
        Ok(g.add(s, self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct BoundLstm {
    pub input_dim: usize,
    pub hidden: usize,
    pub gates: [BoundGate; 4],
}

impl BoundLstm {
    /// Runs the recurrence from zero state; returns the hidden state after
    /// every step.
    pub fn run(&self, g: &mut Graph, seq: &TokenEmbeddingSequence) -> Result<Vec<Var>> {
        if seq.dim() != self.input_dim {
            return Err(AutodiffError::ShapeMismatch {
                op: "lstm_encode",
                left: vec![seq.len(), seq.dim()],
                right: vec![self.input_dim],
            }
            .into());
        }
        let tokens: Vec<Var> = (0..seq.len()).map(|t| g.vector(seq.token(t))).collect();
        self.run_tokens(g, &tokens)
    }

    /// [`BoundLstm::run`] over tokens that are already graph nodes.
    pub fn run_tokens(&self, g: &mut Graph, tokens: &[Var]) -> Result<Vec<Var>> {
        let mut h = g.constant(&[self.hidden], vec![0.0; self.hidden])?;
        let mut c = g.constant(&[self.hidden], vec![0.0; self.hidden])?;
        let [ig, fg, cg, og] = self.gates;
        let mut states = Vec::with_capacity(tokens.len());
        for &x in tokens {
            let zi = ig.pre_activation(g, x, h)?;
            let i = g.sigmoid(zi);
            let zf = fg.pre_activation(g, x, h)?;
            let f = g.sigmoid(zf);
            let zc = cg.pre_activation(g, x, h)?;
            let cand = g.tanh(zc);
            let zo = og.pre_activation(g, x, h)?;
            let o = g.sigmoid(zo);
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            c = g.add(keep, write)?;
            let tc = g.tanh(c);
            h = g.mul(o, tc)?;
            states.push(h);
        }
        Ok(states)
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        for gate in &self.gates {
            out.extend([gate.w_input, gate.w_hidden, gate.bias]);
        }
    }
}

/// `F_a = out_linear(concat(h_last, h_first))`.
pub fn lstm_encode(
    g: &mut Graph,
    lstm: &BoundLstm,
    out_linear: &BoundDense,
    seq: &TokenEmbeddingSequence,
    first: FirstHidden,
) -> Result<Var> {
    let states = lstm.run(g, seq)?;
    summarize(g, lstm, out_linear, &states, first)
}

/// [`lstm_encode`] over token nodes.
pub fn lstm_encode_tokens(
    g: &mut Graph,
    lstm: &BoundLstm,
    out_linear: &BoundDense,
    tokens: &[Var],
    first: FirstHidden,
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(AutodiffError::ShapeMismatch {
            op: "lstm_encode",
            left: vec![0],
            right: vec![lstm.input_dim],
        }
        .into());
    }
    let states = lstm.run_tokens(g, tokens)?;
    summarize(g, lstm, out_linear, &states, first)
}

fn summarize(
    g: &mut Graph,
    lstm: &BoundLstm,
    out_linear: &BoundDense,
    states: &[Var],
    first: FirstHidden,
) -> Result<Var> {
    let last = *states.last().expect("sequence has at least one token");
    let head = match first {
        FirstHidden::AfterFirstStep => states[0],
        FirstHidden::Zero => g.constant(&[lstm.hidden], vec![0.0; lstm.hidden])?,
    };
    let summary = g.concat(&[last, head], 0)?;
    out_linear.forward(g, summary)
}

/// Standard Gumbel draws for one selector step.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelNoise {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

impl GumbelNoise {
    pub fn sample(rng: &mut impl Rng, dim: usize) -> Self {
        let gumbel = Gumbel::new(0.0, 1.0).expect("unit scale is valid");
        let plus = (0..dim).map(|_| gumbel.sample(rng)).collect();
        let minus = (0..dim).map(|_| gumbel.sample(rng)).collect();
        Self { plus, minus }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum SelectorMode<'a> {
    Train { noise: &'a GumbelNoise },
    Eval,
}

/// Per-feature gate with selection probability `pi_i = logistic(logit_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GumbelSelector {
    pub logits: Tensor,
    pub tau: f64,
}

impl GumbelSelector {
    pub fn new(dim: usize, tau: f64) -> Self {
        assert!(tau > 0.0, "temperature must be positive");
        Self {
            logits: Tensor::zeros(&[dim]),
            tau,
        }
    }

    pub fn dim(&self) -> usize {
        self.logits.numel()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.logits.values.iter().map(|&t| 1.0 / (1.0 + (-t).exp())).collect()
    }

    /// Selection weights as plain values.
    pub fn weights(&self, mode: SelectorMode<'_>) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let logits = g.tensor(&self.logits, false);
        let w = gumbel_weights(&mut g, logits, self.tau, mode)?;
        Ok(g.value(w).to_vec())
    }
}

/// Relaxed selection weights.
///
/// Training: `exp((ln pi + s+)/tau) / (exp((ln pi + s+)/tau) + exp((ln(1-pi) + s-)/tau))`
/// with fresh Gumbel draws `s+`, `s-`. Evaluation: noise-free at `tau = 1`,
/// which is exactly `pi`.
pub fn gumbel_weights(g: &mut Graph, logits: Var, tau: f64, mode: SelectorMode<'_>) -> Result<Var> {
    match mode {
        SelectorMode::Eval => Ok(g.sigmoid(logits)),
        SelectorMode::Train { noise } => {
            let log_pi = g.log_sigmoid(logits);
            let neg = g.scale(logits, -1.0);
            let log_not_pi = g.log_sigmoid(neg);
            let a = g.offset(log_pi, &noise.plus)?;
            let b = g.offset(log_not_pi, &noise.minus)?;
            let a = g.scale(a, 1.0 / tau);
            let b = g.scale(b, 1.0 / tau);
            let (w, _) = g.softmax_pair(a, b)?;
            Ok(w)
        }
    }
}

/// Indices of the `k` largest selection probabilities, ascending.
///
/// Ranks by logit, which orders identically to `pi` without saturating.
/// Ties go to the lower index.
pub fn select_topk(sel: &GumbelSelector, k: usize) -> Result<Vec<usize>> {
    topk_by_score(&sel.logits.values, k)
}

pub fn topk_by_score(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    let dim = scores.len();
    if k == 0 || k > dim {
        return Err(NnError::BadK { k, dim });
    }
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Learned per-algorithm vectors; row order follows the training candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    /// `[algorithms, width]`
    pub weights: Tensor,
}

impl EmbeddingTable {
    /// Rows are drawn with unit fan-in, i.e. uniform on `(-1, 1)`.
    pub fn init(rng: &mut ChaCha8Rng, algorithms: usize, width: usize) -> Self {
        Self {
            weights: uniform_init(rng, &[algorithms, width], 1),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.weights.cols()
    }
}

pub fn embedding_lookup(g: &mut Graph, table: Var, algo_index: usize) -> Result<Var> {
    Ok(g.row(table, algo_index)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn layer(w: Vec<f64>, shape: [usize; 2], b: Vec<f64>, act: Activation) -> DenseLayer {
        DenseLayer {
            weight: Tensor::new(shape.to_vec(), w).unwrap(),
            bias: Some(Tensor::vector(b)),
            activation: act,
        }
    }

    #[test]
    fn mlp_identity_and_zero_weight() {
        let id = MlpParams {
            layers: vec![layer(
                vec![1.0, 0.0, 0.0, 1.0],
                [2, 2],
                vec![0.0, 0.0],
                Activation::Relu,
            )],
        };
        assert_eq!(mlp_forward(&id, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        let zero = MlpParams {
            layers: vec![layer(vec![0.0; 4], [2, 2], vec![0.3, -0.7], Activation::Identity)],
        };
        assert_eq!(mlp_forward(&zero, &[5.0, -9.0]).unwrap(), vec![0.3, -0.7]);
    }

    #[test]
    fn two_layer_matches_hand_arithmetic() {
        // layer1: [[1, -1], [2, 0.5]] x + [0.5, -3], relu; layer2: [1, 2] h + 0.25
        let net = MlpParams {
            layers: vec![
                layer(vec![1.0, -1.0, 2.0, 0.5], [2, 2], vec![0.5, -3.0], Activation::Relu),
                layer(vec![1.0, 2.0], [1, 2], vec![0.25], Activation::Identity),
            ],
        };
        // x = [3, 1]: pre = [2.5, 3.5] -> relu same -> 2.5 + 7 + 0.25
        assert_eq!(mlp_forward(&net, &[3.0, 1.0]).unwrap(), vec![9.75]);
        // x = [0, 2]: pre = [-1.5, -2] -> relu 0 -> 0.25
        assert_eq!(mlp_forward(&net, &[0.0, 2.0]).unwrap(), vec![0.25]);
    }

    #[test]
    fn mlp_input_shape_checked() {
        let net = MlpParams::init(&mut rng(1), &[3, 4, 1], Activation::Relu, Activation::Identity, true);
        assert!(mlp_forward(&net, &[1.0, 2.0]).is_err());
    }

    fn zero_lstm(input: usize, hidden: usize) -> LstmParams {
        let mut p = LstmParams::init(&mut rng(0), input, hidden);
        for t in p.tensors_mut() {
            t.values.iter_mut().for_each(|v| *v = 0.0);
        }
        p
    }

    fn encode(p: &LstmParams, out: &DenseLayer, seq: &TokenEmbeddingSequence, first: FirstHidden) -> Vec<f64> {
        let mut g = Graph::new();
        let l = p.bind(&mut g, false);
        let o = out.bind(&mut g, false);
        let f = lstm_encode(&mut g, &l, &o, seq, first).unwrap();
        g.value(f).to_vec()
    }

    #[test]
    fn zero_lstm_yields_out_bias() {
        let p = zero_lstm(3, 4);
        let mut out = DenseLayer::init(&mut rng(2), 8, 5, Activation::Identity, true);
        out.bias = Some(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4, 0.5]));
        let seq = TokenEmbeddingSequence::new("a", vec![vec![1.0, -2.0, 0.5]; 3]).unwrap();
        let mut g = Graph::new();
        let l = p.bind(&mut g, false);
        for h in l.run(&mut g, &seq).unwrap() {
            assert!(g.value(h).iter().all(|&v| v == 0.0));
        }
        assert_eq!(
            encode(&p, &out, &seq, FirstHidden::AfterFirstStep),
            vec![0.1, 0.2, 0.3, 0.4, 0.5]
        );
    }

    #[test]
    fn single_token_duplicates_state() {
        let p = LstmParams::init(&mut rng(3), 2, 3);
        let seq = TokenEmbeddingSequence::new("a", vec![vec![0.4, -1.1]]).unwrap();
        let mut g = Graph::new();
        let l = p.bind(&mut g, false);
        let hs = l.run(&mut g, &seq).unwrap();
        assert_eq!(hs.len(), 1);
        let h = g.value(hs[0]).to_vec();
        let out = DenseLayer::init(&mut rng(4), 6, 2, Activation::Identity, true);
        let direct = mlp_forward(
            &MlpParams {
                layers: vec![out.clone()],
            },
            &[h.clone(), h].concat(),
        )
        .unwrap();
        assert_eq!(encode(&p, &out, &seq, FirstHidden::AfterFirstStep), direct);
    }

    #[test]
    fn init_rules() {
        let a = LstmParams::init(&mut rng(9), 3, 4);
        let b = LstmParams::init(&mut rng(9), 3, 4);
        assert_eq!(a, b);
        assert!(a.forget_gate.bias.values.iter().all(|&v| v == 1.0));
        assert!(a.input_gate.bias.values.iter().all(|&v| v == 0.0));
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.input_gate.w_input.values.iter().all(|v| v.abs() < bound));
        let sel = GumbelSelector::new(5, 1.0);
        assert!(sel.probabilities().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn gumbel_symmetric_noise_gives_half() {
        let sel = GumbelSelector::new(3, 0.37);
        let noise = GumbelNoise {
            plus: vec![0.3, -1.2, 2.0],
            minus: vec![0.3, -1.2, 2.0],
        };
        let w = sel.weights(SelectorMode::Train { noise: &noise }).unwrap();
        assert!(w.iter().all(|&x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn gumbel_eval_is_pi() {
        let pis: [f64; 2] = [0.9, 0.2];
        let sel = GumbelSelector {
            logits: Tensor::vector(pis.iter().map(|p| (p / (1.0 - p)).ln()).collect()),
            tau: 0.5,
        };
        let w = sel.weights(SelectorMode::Eval).unwrap();
        for (w, p) in w.iter().zip(pis) {
            assert!((w - p).abs() < 1e-15);
        }
    }

    #[test]
    fn gumbel_weight_and_complement() {
        let mut r = rng(11);
        let sel = GumbelSelector {
            logits: uniform_init(&mut r, &[16], 1),
            tau: 0.7,
        };
        let noise = GumbelNoise::sample(&mut r, 16);
        let mut g = Graph::new();
        let l = g.tensor(&sel.logits, false);
        let lp = g.log_sigmoid(l);
        let nl = g.scale(l, -1.0);
        let lnp = g.log_sigmoid(nl);
        let a = g.offset(lp, &noise.plus).unwrap();
        let b = g.offset(lnp, &noise.minus).unwrap();
        let a = g.scale(a, 1.0 / sel.tau);
        let b = g.scale(b, 1.0 / sel.tau);
        let (w, wc) = g.softmax_pair(a, b).unwrap();
        let w2 = sel.weights(SelectorMode::Train { noise: &noise }).unwrap();
        assert_eq!(g.value(w), w2.as_slice());
        for (x, y) in g.value(w).iter().zip(g.value(wc)) {
            assert!(*x > 0.0 && *x < 1.0);
            assert!((x + y - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn topk_examples() {
        let sel = |pis: &[f64]| GumbelSelector {
            logits: Tensor::vector(pis.iter().map(|p| (p / (1.0 - p)).ln()).collect()),
            tau: 1.0,
        };
        assert_eq!(select_topk(&sel(&[0.9, 0.1, 0.7]), 2).unwrap(), vec![0, 2]);
        assert_eq!(select_topk(&sel(&[0.5, 0.5]), 1).unwrap(), vec![0]);
        assert_eq!(select_topk(&sel(&[0.3, 0.6, 0.2]), 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_topk(&sel(&[0.3]), 0), Err(NnError::BadK { k: 0, dim: 1 }));
        assert_eq!(select_topk(&sel(&[0.3]), 2), Err(NnError::BadK { k: 2, dim: 1 }));
    }

    #[test]
    fn lookup_and_unlooked_rows() {
        let table = EmbeddingTable {
            weights: Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        };
        let mut g = Graph::new();
        let t = g.tensor(&table.weights, true);
        let r = embedding_lookup(&mut g, t, 0).unwrap();
        assert_eq!(g.value(r), &[1.0, 2.0, 3.0]);
        assert!(embedding_lookup(&mut g, t, 2).is_err());
        let sq = g.mul(r, r).unwrap();
        let l = g.sum(sq);
        g.backward(l).unwrap();
        assert_eq!(&g.grad(t)[3..], &[0.0, 0.0, 0.0]);
        assert_eq!(&g.grad(t)[..3], &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn gumbel_gradient_check() {
        let mut r = rng(5);
        let logits = uniform_init(&mut r, &[6], 1);
        let noise = GumbelNoise::sample(&mut r, 6);
        let feats: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let err = grad_check::<_, NnError>(
            |g, x| {
                let w = gumbel_weights(g, x, 0.6, SelectorMode::Train { noise: &noise })?;
                let f = g.vector(&feats);
                let y = g.mul(w, f)?;
                let y = g.tanh(y);
                Ok(g.sum(y))
            },
            &logits,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
