//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use lookahead_caption::decode::SearchModel;
use lookahead_caption::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// BLEU-n written from the textbook definition: clipped n-gram counts
/// pooled over the corpus, uniform geometric mean, brevity penalty against
/// the closest reference length (shorter wins ties).
pub fn bleu_oracle(cands: &[Vec<usize>], refs: &[Vec<Vec<usize>>], n_max: usize) -> f64 {
    let mut matched = vec![0usize; n_max];
    let mut total = vec![0usize; n_max];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, rs) in cands.iter().zip(refs) {
        c_len += c.len();
        let mut best: Option<usize> = None;
        for r in rs {
            let d = r.len().abs_diff(c.len());
            best = match best {
                Some(b) if b.abs_diff(c.len()) < d || (b.abs_diff(c.len()) == d && b <= r.len()) => Some(b),
                _ => Some(r.len()),
            };
        }
        r_len += best.unwrap_or(0);
        for n in 1..=n_max {
            let grams = |s: &[usize]| -> BTreeMap<Vec<usize>, usize> {
                let mut m = BTreeMap::new();
                if s.len() >= n {
                    for i in 0..=s.len() - n {
                        *m.entry(s[i..i + n].to_vec()).or_insert(0) += 1;
                    }
                }
                m
            };
            let cg = grams(c);
            let rgs: Vec<_> = rs.iter().map(|r| grams(r)).collect();
            for (g, k) in &cg {
                let cap = rgs.iter().map(|m| *m.get(g).unwrap_or(&0)).max().unwrap_or(0);
                matched[n - 1] += (*k).min(cap);
                total[n - 1] += k;
            }
        }
    }
    let mut log_sum = 0.0;
    for n in 0..n_max {
        if matched[n] == 0 || total[n] == 0 {
            return 0.0;
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let bp = if c_len > r_len {
        1.0
    } else if c_len == 0 {
        0.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    bp * (log_sum / n_max as f64).exp()
}

/// LCS by memoized recursion, a different algorithm from the table fill.
pub fn lcs_oracle(a: &[usize], b: &[usize]) -> usize {
    fn go(a: &[usize], b: &[usize], i: usize, j: usize, memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut BTreeMap::new())
}

/// Mean over images of the best sentence-level LCS F1 against any reference.
pub fn rouge_oracle(cands: &[Vec<usize>], refs: &[Vec<Vec<usize>>]) -> f64 {
    let mut total = 0.0;
    for (c, rs) in cands.iter().zip(refs) {
        let mut best = 0.0f64;
        for r in rs {
            let l = lcs_oracle(c, r) as f64;
            if l > 0.0 {
                let p = l / c.len() as f64;
                let q = l / r.len() as f64;
                best = best.max(2.0 * p * q / (p + q));
            }
        }
        total += best;
    }
    total / cands.len() as f64
}

/// A search model whose log-probabilities and values are looked up in
/// tables keyed by prefix. Word 0 ends a caption.
#[derive(Clone, Debug)]
pub struct TableModel {
    pub vocab: usize,
    pub logp: BTreeMap<Vec<usize>, Vec<f64>>,
    pub value: BTreeMap<Vec<usize>, f64>,
}

impl TableModel {
    /// Random tables over every prefix up to `max_len`. Logits come from a
    /// small grid so that scores tie often; one word may be illegal.
    pub fn random(seed: u64, vocab: usize, max_len: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut logp = BTreeMap::new();
        let mut value = BTreeMap::new();
        for prefix in all_sequences(vocab, max_len) {
            let mut logits: Vec<f64> = (0..vocab).map(|_| rng.random_range(0..3) as f64 * 0.5).collect();
            if vocab > 2 && rng.random_bool(0.3) {
                logits[rng.random_range(1..vocab)] = f64::NEG_INFINITY;
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            logp.insert(prefix.clone(), logits.iter().map(|l| l - m - z.ln()).collect());
            value.insert(prefix, rng.random_range(-2..=2) as f64 * 0.25);
        }
        Self { vocab, logp, value }
    }
}

/// Every sequence over `0..vocab` of length `0..=max_len`.
pub fn all_sequences(vocab: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &frontier {
            for w in 0..vocab {
                let mut q: Vec<usize> = p.clone();
                q.push(w);
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

impl SearchModel for TableModel {
    type State = Vec<usize>;

    fn initial(&self) -> Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn log_probs(&self, s: &Vec<usize>) -> Result<Vec<f64>> {
        Ok(self.logp[s].clone())
    }

    fn advance(&self, s: &Vec<usize>, w: usize) -> Result<Vec<usize>> {
        let mut t = s.clone();
        t.push(w);
        Ok(t)
    }

    fn extension_values(&self, s: &Vec<usize>, words: &[usize]) -> Result<Vec<f64>> {
        Ok(words
            .iter()
            .map(|&w| {
                let mut t = s.clone();
                t.push(w);
                self.value[&t]
            })
            .collect())
    }
}

/// Lookahead score of a whole sequence, accumulated the way the decoder
/// defines it: `S ← S + λ·log p + (1 − λ)·v` per step, the value term
/// omitted at `λ = 1`.
pub fn sequence_score(m: &TableModel, seq: &[usize], lambda: f64) -> Option<f64> {
    let mut s = 0.0;
    for t in 0..seq.len() {
        let lp = m.logp[&seq[..t].to_vec()][seq[t]];
        if !lp.is_finite() {
            return None;
        }
        s += lambda * lp;
        if lambda < 1.0 {
            s += (1.0 - lambda) * m.value[&seq[..=t].to_vec()];
        }
    }
    Some(s)
}

/// Per-step beams by brute force: at step `t` every sequence of length
/// `t` is enumerated and scored from scratch; the survivors are those whose
/// first `t − 1` words form a live beam entry. Returns, for every step,
/// the kept `(sequence, score)` pairs in rank order.
pub fn brute_force_beams(m: &TableModel, beam: usize, lambda: f64, max_len: usize) -> Vec<Vec<(Vec<usize>, f64)>> {
    let mut live: Vec<Vec<usize>> = vec![Vec::new()];
    let mut finished = 0;
    let mut steps = Vec::new();
    for t in 1..=max_len {
        let mut pool: Vec<(usize, usize, Vec<usize>, f64)> = Vec::new();
        for seq in all_sequences(m.vocab, t).into_iter().filter(|s| s.len() == t) {
            let Some(parent) = live.iter().position(|p| p[..] == seq[..t - 1]) else {
                continue;
            };
            if let Some(score) = sequence_score(m, &seq, lambda) {
                pool.push((parent, seq[t - 1], seq, score));
            }
        }
        pool.sort_by(|a, b| b.3.total_cmp(&a.3).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        pool.truncate(beam);
        live = pool.iter().filter(|p| p.1 != 0).map(|p| p.2.clone()).collect();
        finished += pool.iter().filter(|p| p.1 == 0).count();
        steps.push(pool.into_iter().map(|p| (p.2, p.3)).collect());
        if finished >= beam || live.is_empty() {
            break;
        }
    }
    steps
}

/// Policy-gradient check on a world small enough to enumerate. Legal words
/// are `{0, 3, 4}` and every caption has exactly two words, so there are
/// nine sequences. Returns the exact expectation of the sampled actor
/// gradient `Σ_t ∇log p(a_t | s_t)·(r − v(s_t))` and central differences of
/// `J = Σ p(seq)·r(seq)`, both over the flattened policy parameters.
pub fn micro_world_policy_gradient(seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    use lookahead_caption::critic::{DecodeState, ValueConfig, ValueNet, ValueVariant};
    use lookahead_caption::numcore::gradcheck::{central_difference, EPSILON};
    use lookahead_caption::policy::{PolicyConfig, PolicyNet};
    use lookahead_caption::rl::policy_gradient;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = PolicyNet::new(
        PolicyConfig {
            vocab_len: 5,
            feature_dim: 3,
            hidden: 3,
        },
        &mut rng,
    )?;
    policy.store.reinit_uniform(0.5, &mut rng);
    let mut vc = ValueConfig::new(ValueVariant::Full, 5, 3);
    vc.visual_dim = 2;
    vc.hidden = 2;
    vc.mlp_hidden = vec![3];
    let value = ValueNet::new(vc, &mut rng)?;
    let feature: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();

    let legal = [0usize, 3, 4];
    let mut seqs = Vec::new();
    for a in legal {
        for b in legal {
            seqs.push(vec![a, b]);
        }
    }
    let rewards: Vec<f64> = seqs.iter().map(|_| rng.random_range(-1.0..1.0)).collect();

    let n = policy.store.num_params();
    let mut expected = vec![0.0; n];
    for (seq, &r) in seqs.iter().zip(&rewards) {
        let p = policy.sequence_logprob(&feature, seq)?.exp();
        let weights = (0..seq.len())
            .map(|t| Ok(r - value.evaluate(&DecodeState::new(&feature, &seq[..t]), None)?))
            .collect::<Result<Vec<f64>>>()?;
        let g = policy_gradient(&policy, &feature, seq, &weights)?;
        for (e, x) in expected.iter_mut().zip(g) {
            *e += p * x;
        }
    }

    let flat: Vec<f64> = policy
        .store
        .entries()
        .iter()
        .flat_map(|e| e.value().data().to_vec())
        .collect();
    let ids: Vec<_> = policy.store.ids().collect();
    let mut probe = policy.clone();
    let numeric = central_difference(
        |x| {
            let mut off = 0;
            for &id in &ids {
                let t = probe.store.value_mut(id);
                let k = t.numel();
                t.data_mut().copy_from_slice(&x[off..off + k]);
                off += k;
            }
            let mut j = 0.0;
            for (seq, &r) in seqs.iter().zip(&rewards) {
                j += probe.sequence_logprob(&feature, seq)?.exp() * r;
            }
            Ok(j)
        },
        &flat,
        EPSILON,
    )?;
    Ok((expected, numeric))
}
