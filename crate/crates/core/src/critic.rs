//! The value network: predicts the terminal embedding reward of a partial
//! caption under the current policy.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{Adam, BoundLinear, BoundLstm, BoundMlp, Linear, LstmCell, LstmState, Mlp, ParamStore};
use crate::embedder::EmbedModel;
use crate::error::{Error, Result};
use crate::numcore::{dot, ParamId, Tape, Tensor, Var};
use crate::policy::PolicyNet;
use crate::sceneworld::{CaptionedExample, EOS, MAX_CAPTION_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueVariant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "hid-VN")]
    HidVn,
    #[serde(rename = "hid-Im-VN")]
    HidImVn,
}

impl ValueVariant {
    pub const ALL: [ValueVariant; 3] = [ValueVariant::Full, ValueVariant::HidVn, ValueVariant::HidImVn];

    pub fn as_str(self) -> &'static str {
        match self {
            ValueVariant::Full => "full",
            ValueVariant::HidVn => "hid-VN",
            ValueVariant::HidImVn => "hid-Im-VN",
        }
    }

    pub fn needs_policy(self) -> bool {
        self != ValueVariant::Full
    }
}

impl fmt::Display for ValueVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ValueVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown value variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueConfig {
    pub variant: ValueVariant,
    pub vocab_len: usize,
    pub feature_dim: usize,
    /// Width of the visual encoder output (full variant).
    pub visual_dim: usize,
    /// Width of the value LSTM, or of the policy hidden state for the
    /// policy-context variants.
    pub hidden: usize,
    pub mlp_hidden: Vec<usize>,
}

impl ValueConfig {
    pub fn new(variant: ValueVariant, vocab_len: usize, feature_dim: usize) -> Self {
        Self {
            variant,
            vocab_len,
            feature_dim,
            visual_dim: 64,
            hidden: 64,
            mlp_hidden: vec![128, 64],
        }
    }

    /// Width of the image part of the MLP input; the policy-hidden-only
    /// variant has none.
    fn image_dim(&self) -> usize {
        match self.variant {
            ValueVariant::Full | ValueVariant::HidImVn => self.visual_dim,
            ValueVariant::HidVn => 0,
        }
    }

    fn mlp_dims(&self) -> Vec<usize> {
        let mut d = vec![self.image_dim() + self.hidden];
        d.extend(&self.mlp_hidden);
        d.push(1);
        d
    }
}

/// A state `(image, w₁…w_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeState {
    pub feature: Vec<f64>,
    pub prefix: Vec<usize>,
}

impl DecodeState {
    pub fn new(feature: &[f64], prefix: &[usize]) -> Self {
        Self {
            feature: feature.to_vec(),
            prefix: prefix.to_vec(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.prefix.last() == Some(&EOS)
    }
}

/// Policy-side representation of a state, used by the policy-context
/// variants: the policy hidden state and the policy visual input `x₀`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyContext {
    pub hidden: Vec<f64>,
    pub image_input: Option<Vec<f64>>,
}

impl PolicyContext {
    pub fn of(policy: &PolicyNet, feature: &[f64], prefix: &[usize]) -> Result<Self> {
        let x0 = policy.image_input(feature)?;
        let mut s = policy.init_from_input(&x0)?;
        for &w in prefix {
            s = policy.advance(&s, w)?;
        }
        Ok(Self {
            hidden: s.h,
            image_input: Some(x0),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ValueNet {
    pub config: ValueConfig,
    pub store: ParamStore,
    vis: Option<Linear>,
    words: Option<ParamId>,
    lstm: Option<LstmCell>,
    mlp: Mlp,
}

impl ValueNet {
    pub fn new(config: ValueConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        if config.variant == ValueVariant::Full {
            Linear::new(&mut store, "value.vis", config.feature_dim, config.visual_dim, true, rng)?;
            store.add_uniform("value.words", &[config.vocab_len, config.hidden], rng)?;
            LstmCell::new(&mut store, "value.lstm", config.hidden, config.hidden, rng)?;
        }
        Mlp::new(&mut store, "value.mlp", &config.mlp_dims(), rng)?;
        Self::from_store(config, store)
    }

    pub fn from_store(config: ValueConfig, store: ParamStore) -> Result<Self> {
        let full = config.variant == ValueVariant::Full;
        let mlp = Mlp::from_store(&store, "value.mlp", config.mlp_hidden.len() + 1)?;
        if mlp.dims() != config.mlp_dims() {
            return Err(Error::InvalidArgument(format!(
                "value MLP widths {:?} do not match the config {:?}",
                mlp.dims(),
                config.mlp_dims()
            )));
        }
        Ok(Self {
            vis: full.then(|| Linear::from_store(&store, "value.vis")).transpose()?,
            words: full.then(|| store.id("value.words")).transpose()?,
            lstm: full.then(|| LstmCell::from_store(&store, "value.lstm")).transpose()?,
            mlp,
            config,
            store,
        })
    }

    pub fn variant(&self) -> ValueVariant {
        self.config.variant
    }

    fn require<'a>(&self, ctx: Option<&'a PolicyContext>) -> Result<&'a PolicyContext> {
        let ctx = ctx.ok_or(Error::MissingPolicyContext(self.variant().as_str()))?;
        if self.variant() == ValueVariant::HidImVn && ctx.image_input.is_none() {
            return Err(Error::MissingPolicyContext(self.variant().as_str()));
        }
        Ok(ctx)
    }

    fn first_layer(&self) -> (&[f64], &[f64], usize) {
        let l = &self.mlp.layers()[0];
        let b = l.bias_id().expect("MLP layers carry biases");
        (self.store.value(l.weight_id()).data(), self.store.value(b).data(), l.in_dim())
    }

    /// `b₁ + W₁[:, image]·image`, the part of the first MLP layer that only
    /// depends on the image.
    pub fn image_part(&self, feature: &[f64], ctx: Option<&PolicyContext>) -> Result<Vec<f64>> {
        let (w, b, cols) = self.first_layer();
        let d = self.config.image_dim();
        let img = match self.variant() {
            ValueVariant::Full => self.vis.as_ref().expect("full variant").forward_values(&self.store, feature)?,
            ValueVariant::HidImVn => self.require(ctx)?.image_input.clone().expect("checked"),
            ValueVariant::HidVn => Vec::new(),
        };
        crate::cells::check_dim("value image input", d, img.len())?;
        Ok(b
            .iter()
            .enumerate()
            .map(|(r, &b)| b + dot(&w[r * cols..r * cols + d], &img))
            .collect())
    }

    /// Finishes an evaluation from the image part and a hidden vector.
    pub fn value_from_hidden(&self, image_part: &[f64], h: &[f64]) -> Result<f64> {
        let (w, _, cols) = self.first_layer();
        let d = self.config.image_dim();
        crate::cells::check_dim("value hidden input", cols - d, h.len())?;
        let first = image_part
            .iter()
            .enumerate()
            .map(|(r, &p)| p + dot(&w[r * cols + d..(r + 1) * cols], h))
            .collect();
        let out = self.mlp.forward_after_first(&self.store, first)?;
        Ok(out[0].tanh())
    }

    /// Own LSTM input projection of a word (full variant).
    pub fn word_projection(&self, w: usize) -> Result<Vec<f64>> {
        let (lstm, words) = self.own_rnn()?;
        if w >= self.config.vocab_len {
            return Err(Error::TokenOutOfRange {
                id: w,
                len: self.config.vocab_len,
            });
        }
        lstm.input_projection(&self.store, self.store.value(words).row(w))
    }

    pub fn projection_table(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.config.vocab_len).map(|w| self.word_projection(w)).collect()
    }

    pub fn own_rnn(&self) -> Result<(&LstmCell, ParamId)> {
        match (&self.lstm, self.words) {
            (Some(l), Some(w)) => Ok((l, w)),
            _ => Err(Error::InvalidArgument(format!(
                "variant {} has no recurrent encoder of its own",
                self.variant()
            ))),
        }
    }

    /// Own LSTM state after reading `prefix` from zeros (full variant).
    pub fn encode_prefix(&self, prefix: &[usize]) -> Result<LstmState> {
        let (lstm, _) = self.own_rnn()?;
        let mut s = LstmState::zeros(self.config.hidden);
        for &w in prefix {
            let zx = self.word_projection(w)?;
            let zh = lstm.hidden_projection(&self.store, &s.h)?;
            s = lstm.combine(&zx, &zh, &s.c);
        }
        Ok(s)
    }

    /// `v_θ(s)`. The policy-context variants read the policy's hidden
    /// state instead of encoding the prefix themselves.
    pub fn evaluate(&self, state: &DecodeState, ctx: Option<&PolicyContext>) -> Result<f64> {
        let img = self.image_part(&state.feature, ctx)?;
        match self.variant() {
            ValueVariant::Full => {
                let s = self.encode_prefix(&state.prefix)?;
                self.value_from_hidden(&img, &s.h)
            }
            _ => self.value_from_hidden(&img, &self.require(ctx)?.hidden),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundValue {
        BoundValue {
            vis: self.vis.as_ref().map(|l| l.bind(tape, &self.store)),
            words: self.words.map(|w| self.store.bind(tape, w)),
            lstm: self.lstm.as_ref().map(|l| l.bind(tape, &self.store)),
            mlp: self.mlp.bind(tape, &self.store),
            variant: self.variant(),
            hidden: self.config.hidden,
        }
    }
}

/// A [`ValueNet`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundValue {
    vis: Option<BoundLinear>,
    words: Option<Var>,
    lstm: Option<BoundLstm>,
    mlp: BoundMlp,
    variant: ValueVariant,
    hidden: usize,
}

impl BoundValue {
    fn head(&self, tape: &mut Tape, img: Option<Var>, h: Var) -> Result<Var> {
        let x = match img {
            Some(i) => tape.concat(&[i, h])?,
            None => h,
        };
        let y = self.mlp.forward(tape, x)?;
        let y = tape.sum(y)?;
        tape.tanh(y)
    }

    /// Values of the states `tokens[..p]` for each `p` in `positions`,
    /// which must be nondecreasing.
    pub fn values_along(
        &self,
        tape: &mut Tape,
        feature: &[f64],
        tokens: &[usize],
        positions: &[usize],
    ) -> Result<Vec<Var>> {
        if self.variant != ValueVariant::Full {
            return Err(Error::MissingPolicyContext(self.variant.as_str()));
        }
        let (vis, words, lstm) = (
            self.vis.as_ref().expect("full"),
            self.words.expect("full"),
            self.lstm.expect("full"),
        );
        let f = tape.constant(Tensor::vector(feature.to_vec()));
        let img = vis.forward(tape, f)?;
        let zero = tape.constant(Tensor::zeros(&[self.hidden]));
        let (mut h, mut c) = (zero, zero);
        let mut read = 0;
        let mut out = Vec::with_capacity(positions.len());
        for &p in positions {
            if p < read || p > tokens.len() {
                return Err(Error::InvalidArgument(format!("bad state position {p}")));
            }
            while read < p {
                let x = tape.row(words, tokens[read])?;
                (h, c) = lstm.step(tape, h, c, x)?;
                read += 1;
            }
            out.push(self.head(tape, Some(img), h)?);
        }
        Ok(out)
    }

    /// Value of a state described by its policy context.
    pub fn value_from_context(&self, tape: &mut Tape, ctx: &PolicyContext) -> Result<Var> {
        let h = tape.constant(Tensor::vector(ctx.hidden.clone()));
        let img = match self.variant {
            ValueVariant::HidVn => None,
            ValueVariant::HidImVn => {
                let x0 = ctx
                    .image_input
                    .clone()
                    .ok_or(Error::MissingPolicyContext(self.variant.as_str()))?;
                Some(tape.constant(Tensor::vector(x0)))
            }
            ValueVariant::Full => return Err(Error::InvalidArgument("full variant reads raw inputs".into())),
        };
        self.head(tape, img, h)
    }
}

/// Terminal reward of a finished caption.
pub trait RewardModel {
    fn reward(&self, feature: &[f64], sentence: &[usize]) -> Result<f64>;
}

impl RewardModel for EmbedModel {
    fn reward(&self, feature: &[f64], sentence: &[usize]) -> Result<f64> {
        EmbedModel::reward(self, feature, sentence)
    }
}

/// Every caption earns the same reward.
#[derive(Clone, Copy, Debug)]
pub struct ConstantReward(pub f64);

impl RewardModel for ConstantReward {
    fn reward(&self, _: &[f64], _: &[usize]) -> Result<f64> {
        Ok(self.0)
    }
}

/// One regression sample: a state given as a prefix length of a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSample {
    pub example: usize,
    pub tokens: Vec<usize>,
    pub position: usize,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValueTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub rollouts_per_example: usize,
    pub max_len: usize,
}

impl Default for ValueTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            rollouts_per_example: 2,
            max_len: MAX_CAPTION_LEN,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValueCurve {
    pub train_mse: Vec<f64>,
    pub heldout_mse: Vec<f64>,
    /// Held-out MSE of always predicting zero.
    pub zero_mse: f64,
    /// Number of rollouts drawn and states regressed, per epoch.
    pub rollouts: Vec<usize>,
    pub states_trained: Vec<usize>,
}

/// Draws `per_example` policy rollouts for every example and keeps one
/// uniformly chosen non-empty state of each.
pub fn sample_value_states(
    policy: &PolicyNet,
    reward: &dyn RewardModel,
    examples: &[CaptionedExample],
    per_example: usize,
    max_len: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ValueSample>> {
    let mut out = Vec::with_capacity(examples.len() * per_example);
    for (i, e) in examples.iter().enumerate() {
        for _ in 0..per_example {
            let r = policy.rollout(&e.feature, rng, max_len, &[])?;
            let reward = reward.reward(&e.feature, &r.tokens)?;
            let position = rng.random_range(1..=r.tokens.len());
            out.push(ValueSample {
                example: i,
                tokens: r.tokens,
                position,
                reward,
            });
        }
    }
    Ok(out)
}

fn context_for(
    value: &ValueNet,
    policy: &PolicyNet,
    feature: &[f64],
    prefix: &[usize],
) -> Result<Option<PolicyContext>> {
    if value.variant().needs_policy() {
        Ok(Some(PolicyContext::of(policy, feature, prefix)?))
    } else {
        Ok(None)
    }
}

/// `v_θ` of a sample's state.
pub fn predict(value: &ValueNet, policy: &PolicyNet, examples: &[CaptionedExample], s: &ValueSample) -> Result<f64> {
    let e = &examples[s.example];
    let prefix = &s.tokens[..s.position];
    let ctx = context_for(value, policy, &e.feature, prefix)?;
    value.evaluate(&DecodeState::new(&e.feature, prefix), ctx.as_ref())
}

pub fn mse(value: &ValueNet, policy: &PolicyNet, examples: &[CaptionedExample], samples: &[ValueSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let d = predict(value, policy, examples, s)? - s.reward;
        total += d * d;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Adds the gradient of `scale · Σ ½(v − r)²` over `samples` to the store
/// and returns `Σ (v − r)²`.
pub fn accumulate_value_grad(
    value: &mut ValueNet,
    policy: &PolicyNet,
    examples: &[CaptionedExample],
    samples: &[ValueSample],
    scale: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = value.bind(&mut tape);
    let mut terms = Vec::with_capacity(samples.len());
    let mut sq = 0.0;
    for s in samples {
        let e = &examples[s.example];
        let v = if value.variant() == ValueVariant::Full {
            bound.values_along(&mut tape, &e.feature, &s.tokens, &[s.position])?[0]
        } else {
            let ctx = PolicyContext::of(policy, &e.feature, &s.tokens[..s.position])?;
            bound.value_from_context(&mut tape, &ctx)?
        };
        let r = tape.constant(Tensor::scalar(s.reward));
        let d = tape.sub(v, r)?;
        sq += tape.scalar(d).powi(2);
        let d2 = tape.mul(d, d)?;
        terms.push(tape.scale(d2, 0.5 * scale)?);
    }
    if let Some(loss) = tape.add_all(&terms)? {
        let grads = tape.backward(loss)?;
        value.store.accumulate(&grads, 1.0)?;
    }
    Ok(sq)
}

/// Regresses the terminal reward of policy rollouts, one random state per
/// rollout, against a frozen policy.
pub fn pretrain_value(
    value: &mut ValueNet,
    policy: &PolicyNet,
    reward: &dyn RewardModel,
    train: &[CaptionedExample],
    heldout: &[CaptionedExample],
    cfg: &ValueTrainConfig,
    rng: &mut impl Rng,
) -> Result<ValueCurve> {
    let adam = Adam::with_lr(cfg.lr);
    let held = sample_value_states(policy, reward, heldout, 1, cfg.max_len, rng)?;
    let mut curve = ValueCurve {
        zero_mse: held.iter().map(|s| s.reward * s.reward).sum::<f64>() / held.len().max(1) as f64,
        ..Default::default()
    };
    for _ in 0..cfg.epochs {
        let samples = sample_value_states(policy, reward, train, cfg.rollouts_per_example, cfg.max_len, rng)?;
        let mut sq = 0.0;
        for chunk in samples.chunks(cfg.batch_size.max(1)) {
            value.store.zero_grads();
            sq += accumulate_value_grad(value, policy, train, chunk, 1.0 / chunk.len() as f64)?;
            value.store.adam_update(&adam)?;
        }
        curve.rollouts.push(samples.len());
        curve.states_trained.push(samples.len());
        curve.train_mse.push(sq / samples.len().max(1) as f64);
        if !held.is_empty() {
            curve.heldout_mse.push(mse(value, policy, heldout, &held)?);
        }
    }
    Ok(curve)
}

/// Predicted and realized reward at the state one step before each
/// rollout ends, `per_example` rollouts per example.
pub fn penultimate_pairs(
    value: &ValueNet,
    policy: &PolicyNet,
    reward: &dyn RewardModel,
    examples: &[CaptionedExample],
    per_example: usize,
    max_len: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut pred, mut real) = (Vec::new(), Vec::new());
    for e in examples {
        for _ in 0..per_example {
            let r = policy.rollout(&e.feature, rng, max_len, &[])?;
            let prefix = &r.tokens[..r.tokens.len() - 1];
            let ctx = context_for(value, policy, &e.feature, prefix)?;
            pred.push(value.evaluate(&DecodeState::new(&e.feature, prefix), ctx.as_ref())?);
            real.push(reward.reward(&e.feature, &r.tokens)?);
        }
    }
    Ok((pred, real))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::check_gradients;
    use crate::policy::PolicyConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(variant: ValueVariant) -> ValueConfig {
        ValueConfig {
            variant,
            vocab_len: 6,
            feature_dim: 4,
            visual_dim: 3,
            hidden: 3,
            mlp_hidden: vec![4, 3],
        }
    }

    fn policy() -> PolicyNet {
        let c = PolicyConfig {
            vocab_len: 6,
            feature_dim: 4,
            hidden: 3,
        };
        PolicyNet::new(c, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
    }

    const F: [f64; 4] = [0.2, -0.7, 0.4, 0.3];

    #[test]
    fn zero_mlp_gives_zero_everywhere() {
        let mut v = ValueNet::new(cfg(ValueVariant::Full), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ids: Vec<_> = v.store.ids().collect();
        for id in ids {
            if v.store.entry(id).name().starts_with("value.mlp") {
                let shape = v.store.value(id).shape().to_vec();
                v.store.set_value(id, Tensor::zeros(&shape)).unwrap();
            }
        }
        for prefix in [&[][..], &[3], &[3, 4, 0]] {
            assert_eq!(v.evaluate(&DecodeState::new(&F, prefix), None).unwrap(), 0.0);
        }
    }

    #[test]
    fn policy_variants_need_context() {
        let p = policy();
        for variant in [ValueVariant::HidVn, ValueVariant::HidImVn] {
            let v = ValueNet::new(cfg(variant), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let st = DecodeState::new(&F, &[3]);
            assert!(matches!(v.evaluate(&st, None), Err(Error::MissingPolicyContext(_))));
            let ctx = PolicyContext::of(&p, &F, &[3]).unwrap();
            let x = v.evaluate(&st, Some(&ctx)).unwrap();
            assert!(x.abs() <= 1.0);
        }
        let v = ValueNet::new(cfg(ValueVariant::HidImVn), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let partial = PolicyContext {
            hidden: vec![0.0; 3],
            image_input: None,
        };
        assert!(v.evaluate(&DecodeState::new(&F, &[]), Some(&partial)).is_err());
    }

    #[test]
    fn tape_and_values_agree() {
        let v = ValueNet::new(cfg(ValueVariant::Full), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let tokens = [3, 5, 4, 0];
        let mut tape = Tape::new();
        let b = v.bind(&mut tape);
        let vars = b.values_along(&mut tape, &F, &tokens, &[0, 1, 4]).unwrap();
        for (var, p) in vars.into_iter().zip([0, 1, 4]) {
            let direct = v.evaluate(&DecodeState::new(&F, &tokens[..p]), None).unwrap();
            assert!((tape.scalar(var) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn value_gradient_matches_finite_differences() {
        let p = policy();
        for variant in ValueVariant::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut v = ValueNet::new(cfg(variant), &mut rng).unwrap();
            v.store.reinit_uniform(0.5, &mut rng);
            let ex = vec![CaptionedExample {
                scene: crate::sceneworld::Scene::random(&mut ChaCha8Rng::seed_from_u64(1)),
                feature: crate::sceneworld::ImageFeature(F.to_vec()),
                references: vec![vec![3, 0]],
            }];
            let samples = vec![
                ValueSample {
                    example: 0,
                    tokens: vec![3, 4, 0],
                    position: 2,
                    reward: 0.7,
                },
                ValueSample {
                    example: 0,
                    tokens: vec![5, 0],
                    position: 1,
                    reward: -0.2,
                },
            ];
            let c = v.config.clone();
            let mut store = v.store.clone();
            let check = check_gradients(
                &mut store,
                |st| {
                    std::mem::swap(&mut v.store, st);
                    let r = accumulate_value_grad(&mut v, &p, &ex, &samples, 1.0);
                    std::mem::swap(&mut v.store, st);
                    r.map(|_| ())
                },
                |st| {
                    let w = ValueNet::from_store(c.clone(), st.clone())?;
                    Ok(0.5 * mse(&w, &p, &ex, &samples)? * samples.len() as f64)
                },
            )
            .unwrap();
            assert!(check.max_relative_error() < 1e-6, "{variant}: {:?}", check.per_param);
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ValueVariant::ALL {
            assert_eq!(v.as_str().parse::<ValueVariant>().unwrap(), v);
        }
        assert!("nope".parse::<ValueVariant>().is_err());
    }
}
