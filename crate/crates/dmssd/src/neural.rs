//! Minimal dense policy/value network with exact analytic gradients.
//!
//! Architecture: shared trunk of two 64-unit Tanh layers feeding a 5-logit
//! policy head and a scalar value head. Everything is `f64`; at this scale
//! precision is cheap and makes gradient tests exact.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gridmap::ACTION_COUNT;
use crate::util::crc32;

pub const HIDDEN: usize = 64;

/// Logit overwrite for masked actions; exp(-1e8 - max) underflows to 0.
pub const MASK_LOGIT: f64 = -1e8;

const MODEL_MAGIC: &[u8; 9] = b"DMSSDNET1";

/// One dense layer, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub out_dim: usize,
    pub in_dim: usize,
}

impl DenseLayer {
    fn zeros(out_dim: usize, in_dim: usize) -> DenseLayer {
        DenseLayer { w: vec![0.0; out_dim * in_dim], b: vec![0.0; out_dim], out_dim, in_dim }
    }

    /// Orthogonal-style init: gaussian matrix orthonormalized by Gram-Schmidt
    /// over the shorter side, scaled by `gain`. Biases zero.
    fn orthogonal<R: Rng>(out_dim: usize, in_dim: usize, gain: f64, rng: &mut R) -> DenseLayer {
        let (rows, cols, transpose) = if out_dim >= in_dim {
            (in_dim, out_dim, true)
        } else {
            (out_dim, in_dim, false)
        };
        // rows <= cols: orthonormalize the row vectors.
        let mut m = vec![vec![0.0f64; cols]; rows];
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        for i in 0..rows {
            for j in 0..i {
                let dot: f64 = (0..cols).map(|k| m[i][k] * m[j][k]).sum();
                for k in 0..cols {
                    m[i][k] -= dot * m[j][k];
                }
            }
            let norm: f64 = m[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in m[i].iter_mut() {
                *v *= gain / norm;
            }
        }
        let mut layer = DenseLayer::zeros(out_dim, in_dim);
        for o in 0..out_dim {
            for i in 0..in_dim {
                layer.w[o * in_dim + i] = if transpose { m[i][o] } else { m[o][i] };
            }
        }
        layer
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            out[o] = self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Shared-trunk policy/value network.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValueNet {
    pub input_dim: usize,
    pub n_p: usize,
    trunk1: DenseLayer,
    trunk2: DenseLayer,
    policy_head: DenseLayer,
    value_head: DenseLayer,
}

/// Cached activations from one forward pass, needed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub logits: [f64; ACTION_COUNT],
    pub value: f64,
}

/// Per-parameter gradient accumulator, shaped like the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: [DenseLayer; 4],
}

impl Gradients {
    pub fn zeros(net: &PolicyValueNet) -> Gradients {
        let z = |l: &DenseLayer| DenseLayer::zeros(l.out_dim, l.in_dim);
        Gradients {
            layers: [z(&net.trunk1), z(&net.trunk2), z(&net.policy_head), z(&net.value_head)],
        }
    }

    pub fn reset(&mut self) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = 0.0);
            l.b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v *= s);
            l.b.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Global L2 norm across every parameter gradient.
    pub fn global_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    /// Flat view in the same order as `PolicyValueNet::flat_params`.
    pub fn flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }
}

impl PolicyValueNet {
    /// Fresh network for observations of `2 * n_p + 1` entries.
    pub fn new<R: Rng>(n_p: usize, rng: &mut R) -> PolicyValueNet {
        let input_dim = 2 * n_p + 1;
        PolicyValueNet {
            input_dim,
            n_p,
            trunk1: DenseLayer::orthogonal(HIDDEN, input_dim, 2f64.sqrt(), rng),
            trunk2: DenseLayer::orthogonal(HIDDEN, HIDDEN, 2f64.sqrt(), rng),
            policy_head: DenseLayer::orthogonal(ACTION_COUNT, HIDDEN, 0.01, rng),
            value_head: DenseLayer::orthogonal(1, HIDDEN, 1.0, rng),
        }
    }

    /// All-zero network (tests).
    pub fn zeroed(n_p: usize) -> PolicyValueNet {
        let input_dim = 2 * n_p + 1;
        PolicyValueNet {
            input_dim,
            n_p,
            trunk1: DenseLayer::zeros(HIDDEN, input_dim),
            trunk2: DenseLayer::zeros(HIDDEN, HIDDEN),
            policy_head: DenseLayer::zeros(ACTION_COUNT, HIDDEN),
            value_head: DenseLayer::zeros(1, HIDDEN),
        }
    }

    pub fn forward(&self, obs: &[f64]) -> Result<([f64; ACTION_COUNT], f64)> {
        let cache = self.forward_cached(obs)?;
        Ok((cache.logits, cache.value))
    }

    pub fn forward_cached(&self, obs: &[f64]) -> Result<ForwardCache> {
        if obs.len() != self.input_dim {
            return Err(Error::Contract(format!(
                "observation length {} != input_dim {}",
                obs.len(),
                self.input_dim
            )));
        }
        let mut h1 = vec![0.0; HIDDEN];
        self.trunk1.forward(obs, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = vec![0.0; HIDDEN];
        self.trunk2.forward(&h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut logits = [0.0; ACTION_COUNT];
        self.policy_head.forward(&h2, &mut logits);
        let mut value = [0.0];
        self.value_head.forward(&h2, &mut value);
        Ok(ForwardCache { input: obs.to_vec(), h1, h2, logits, value: value[0] })
    }

    /// Accumulate exact gradients of `dlogits . logits + dvalue * value`
    /// into `grads`, reusing the cached activations.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: &[f64; ACTION_COUNT],
        dvalue: f64,
        grads: &mut Gradients,
    ) {
        let [g1, g2, gp, gv] = &mut grads.layers;
        // Heads.
        let mut dh2 = vec![0.0; HIDDEN];
        for o in 0..ACTION_COUNT {
            let d = dlogits[o];
            gp.b[o] += d;
            for i in 0..HIDDEN {
                gp.w[o * HIDDEN + i] += d * cache.h2[i];
                dh2[i] += d * self.policy_head.w[o * HIDDEN + i];
            }
        }
        gv.b[0] += dvalue;
        for i in 0..HIDDEN {
            gv.w[i] += dvalue * cache.h2[i];
            dh2[i] += dvalue * self.value_head.w[i];
        }
        // Trunk layer 2 (tanh).
        let mut dh1 = vec![0.0; HIDDEN];
        for o in 0..HIDDEN {
            let dz = dh2[o] * (1.0 - cache.h2[o] * cache.h2[o]);
            g2.b[o] += dz;
            for i in 0..HIDDEN {
                g2.w[o * HIDDEN + i] += dz * cache.h1[i];
                dh1[i] += dz * self.trunk2.w[o * HIDDEN + i];
            }
        }
        // Trunk layer 1 (tanh).
        for o in 0..HIDDEN {
            let dz = dh1[o] * (1.0 - cache.h1[o] * cache.h1[o]);
            g1.b[o] += dz;
            for i in 0..self.input_dim {
                g1.w[o * self.input_dim + i] += dz * cache.input[i];
            }
        }
    }

    fn params_mut(&mut self) -> [&mut DenseLayer; 4] {
        [&mut self.trunk1, &mut self.trunk2, &mut self.policy_head, &mut self.value_head]
    }

    fn params(&self) -> [&DenseLayer; 4] {
        [&self.trunk1, &self.trunk2, &self.policy_head, &self.value_head]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat view of every parameter, in fixed layer order (tests, FD oracle).
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for l in self.params_mut() {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = *it.next().expect("flat parameter vector too short");
            }
        }
        assert!(it.next().is_none(), "flat parameter vector too long");
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    // --- model file format ---------------------------------------------

    /// Binary layout: magic, u32 input_dim, u32 n_p, u32 layer count, per
    /// layer u32 out/in dims, then all parameters (w row-major then b) as
    /// little-endian f64, then a CRC-32 trailer over everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_p as u32).to_le_bytes());
        out.extend_from_slice(&4u32.to_le_bytes());
        for l in self.params() {
            out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
            out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
        }
        for l in self.params() {
            for v in l.w.iter().chain(l.b.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PolicyValueNet> {
        let bad = |m: &str| Error::Parse(format!("model file: {m}"));
        if bytes.len() < MODEL_MAGIC.len() + 4 {
            return Err(bad("truncated"));
        }
        if &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if crc32(body) != stored {
            return Err(bad("checksum mismatch"));
        }
        let mut pos = MODEL_MAGIC.len();
        let read_u32 = |pos: &mut usize| -> Result<u32> {
            let end = *pos + 4;
            if end > body.len() {
                return Err(bad("truncated header"));
            }
            let v = u32::from_le_bytes(body[*pos..end].try_into().unwrap());
            *pos = end;
            Ok(v)
        };
        let input_dim = read_u32(&mut pos)? as usize;
        let n_p = read_u32(&mut pos)? as usize;
        let layer_count = read_u32(&mut pos)? as usize;
        if layer_count != 4 || input_dim != 2 * n_p + 1 {
            return Err(bad("unsupported topology"));
        }
        let mut dims = Vec::with_capacity(4);
        for _ in 0..4 {
            let out_dim = read_u32(&mut pos)? as usize;
            let in_dim = read_u32(&mut pos)? as usize;
            dims.push((out_dim, in_dim));
        }
        let expected = [
            (HIDDEN, input_dim),
            (HIDDEN, HIDDEN),
            (ACTION_COUNT, HIDDEN),
            (1, HIDDEN),
        ];
        if dims != expected {
            return Err(bad("unexpected layer dimensions"));
        }
        let mut net = PolicyValueNet::zeroed(n_p);
        for l in net.params_mut() {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                let end = pos + 8;
                if end > body.len() {
                    return Err(bad("truncated parameters"));
                }
                *v = f64::from_le_bytes(body[pos..end].try_into().unwrap());
                pos = end;
            }
        }
        if pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PolicyValueNet> {
        PolicyValueNet::from_bytes(&fs::read(path)?)
    }
}

/// Replace masked logits by `MASK_LOGIT` and softmax the result.
pub fn masked_distribution(
    logits: &[f64; ACTION_COUNT],
    mask: &[bool; ACTION_COUNT],
) -> Result<[f64; ACTION_COUNT]> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::Contract("all actions masked".into()));
    }
    let mut z = [0.0; ACTION_COUNT];
    for i in 0..ACTION_COUNT {
        z[i] = if mask[i] { logits[i] } else { MASK_LOGIT };
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = [0.0; ACTION_COUNT];
    let mut sum = 0.0;
    for i in 0..ACTION_COUNT {
        probs[i] = (z[i] - max).exp();
        sum += probs[i];
    }
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(probs)
}

/// Inverse-CDF sample in fixed action order.
pub fn sample_action<R: Rng>(probs: &[f64; ACTION_COUNT], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Round-off tail: last action with nonzero probability.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(ACTION_COUNT - 1)
}

pub fn argmax_action(probs: &[f64; ACTION_COUNT]) -> usize {
    let mut best = 0;
    for i in 1..ACTION_COUNT {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    best
}

/// Log-probability of `action` and entropy over valid (nonzero) entries.
pub fn log_prob_entropy(probs: &[f64; ACTION_COUNT], action: usize) -> (f64, f64) {
    let logp = probs[action].max(f64::MIN_POSITIVE).ln();
    let entropy = -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
    (logp, entropy)
}

/// Adaptive-moment optimizer state over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct OptimState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(net: &PolicyValueNet) -> OptimState {
        let n = net.param_count();
        OptimState { m: vec![0.0; n], v: vec![0.0; n], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected adaptive-moment update.
pub fn adam_step(net: &mut PolicyValueNet, grads: &Gradients, opt: &mut OptimState, lr: f64) {
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    let mut k = 0;
    let grad_iter: Vec<f64> = grads.values().copied().collect();
    for layer in net.params_mut() {
        for p in layer.w.iter_mut().chain(layer.b.iter_mut()) {
            let g = grad_iter[k];
            opt.m[k] = opt.beta1 * opt.m[k] + (1.0 - opt.beta1) * g;
            opt.v[k] = opt.beta2 * opt.v[k] + (1.0 - opt.beta2) * g * g;
            let m_hat = opt.m[k] / bc1;
            let v_hat = opt.v[k] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + opt.eps);
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = PolicyValueNet::zeroed(3);
        let obs = vec![0.3; net.input_dim];
        let (logits, value) = net.forward(&obs).unwrap();
        assert_eq!(logits, [0.0; ACTION_COUNT]);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn forward_is_deterministic_and_checks_dims() {
        let net = PolicyValueNet::new(2, &mut rng(1));
        let obs = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(net.forward(&obs).unwrap(), net.forward(&obs).unwrap());
        assert!(net.forward(&[0.1]).is_err());
    }

    #[test]
    fn hand_built_tanh_composition() {
        // 1-unit trunk layers with known weights; compare against a hand
        // computation of tanh(w2 * tanh(w1*x + b1) + b2) through the heads.
        let mut net = PolicyValueNet::zeroed(2);
        let x = 0.7;
        let (w1, b1, w2, b2, wp, wv) = (1.3, -0.2, 0.9, 0.05, 0.4, -1.1);
        net.trunk1.w[0] = w1; // unit 0 reads input 0 only
        net.trunk1.b[0] = b1;
        net.trunk2.w[0] = w2; // unit 0 reads h1[0]
        net.trunk2.b[0] = b2;
        net.policy_head.w[0] = wp; // logit 0 reads h2[0]
        net.value_head.w[0] = wv;
        let mut obs = vec![0.0; net.input_dim];
        obs[0] = x;
        let (logits, value) = net.forward(&obs).unwrap();
        let h1 = (w1 * x + b1).tanh();
        let h2 = (w2 * h1 + b2).tanh();
        assert!((logits[0] - wp * h2).abs() < 1e-12);
        assert!((value - wv * h2).abs() < 1e-12);
        assert_eq!(logits[1..], [0.0; 4]);
    }

    #[test]
    fn masked_distribution_examples() {
        let uniform = [0.0; ACTION_COUNT];
        let all = [true; ACTION_COUNT];
        let p = masked_distribution(&uniform, &all).unwrap();
        for v in p {
            assert!((v - 0.2).abs() < 1e-12);
        }

        let mut one_masked = all;
        one_masked[2] = false;
        let p = masked_distribution(&uniform, &one_masked).unwrap();
        assert!(p[2] < 1e-30);
        for (i, v) in p.iter().enumerate() {
            if i != 2 {
                assert!((v - 0.25).abs() < 1e-12);
            }
        }

        let logits = [1.0, 0.0, 0.0, 0.0, 0.0];
        let p = masked_distribution(&logits, &all).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 4.0)).abs() < 1e-12);

        assert!(masked_distribution(&uniform, &[false; ACTION_COUNT]).is_err());
    }

    #[test]
    fn softmax_sums_to_one_and_shift_invariant() {
        let mut r = rng(5);
        for _ in 0..200 {
            let mut logits = [0.0; ACTION_COUNT];
            let mut mask = [false; ACTION_COUNT];
            for i in 0..ACTION_COUNT {
                logits[i] = r.gen_range(-5.0..5.0);
                mask[i] = r.gen_bool(0.7);
            }
            mask[4] = true; // stay always valid
            let p = masked_distribution(&logits, &mask).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let c = r.gen_range(-3.0..3.0);
            let shifted = logits.map(|z| z + c);
            let q = masked_distribution(&shifted, &mask).unwrap();
            for i in 0..ACTION_COUNT {
                assert!((p[i] - q[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampling_and_entropy_examples() {
        let mut r = rng(6);
        let det = [1.0, 0.0, 0.0, 0.0, 0.0];
        for _ in 0..100 {
            assert_eq!(sample_action(&det, &mut r), 0);
        }
        let (_, h) = log_prob_entropy(&det, 0);
        assert_eq!(h, 0.0);

        let uni5 = [0.2; ACTION_COUNT];
        let (_, h) = log_prob_entropy(&uni5, 0);
        assert!((h - 5f64.ln()).abs() < 1e-12);

        let uni4 = [0.25, 0.25, 0.25, 0.25, 0.0];
        let (_, h) = log_prob_entropy(&uni4, 1);
        assert!((h - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn masked_actions_never_sampled() {
        let mut r = rng(7);
        let logits = [2.0, -1.0, 0.5, 0.0, 1.0];
        let mask = [true, false, true, false, true];
        let p = masked_distribution(&logits, &mask).unwrap();
        assert!(p[1] < 1e-30 && p[3] < 1e-30);
        for _ in 0..100_000 {
            let a = sample_action(&p, &mut r);
            assert!(mask[a], "sampled masked action {a}");
        }
    }

    /// Scalar test loss: fixed linear combination of logits and value.
    fn seed_loss(net: &PolicyValueNet, obs: &[f64], dl: &[f64; ACTION_COUNT], dv: f64) -> f64 {
        let (logits, value) = net.forward(obs).unwrap();
        logits.iter().zip(dl).map(|(z, c)| z * c).sum::<f64>() + value * dv
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(8);
        for trial in 0..10 {
            let net = PolicyValueNet::new(2, &mut rng(100 + trial));
            let obs: Vec<f64> = (0..net.input_dim).map(|_| r.gen_range(-1.0..1.0)).collect();
            let mut dl = [0.0; ACTION_COUNT];
            dl.iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
            let dv: f64 = r.gen_range(-1.0..1.0);

            let mut grads = Gradients::zeros(&net);
            let cache = net.forward_cached(&obs).unwrap();
            net.backward(&cache, &dl, dv, &mut grads);
            let analytic: Vec<f64> = grads.values().copied().collect();

            let flat = net.flat_params();
            let h = 1e-5;
            for k in (0..flat.len()).step_by(97) {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let mut fp = flat.clone();
                fp[k] += h;
                plus.set_flat_params(&fp);
                fp[k] -= 2.0 * h;
                minus.set_flat_params(&fp);
                let fd = (seed_loss(&plus, &obs, &dl, dv) - seed_loss(&minus, &obs, &dl, dv))
                    / (2.0 * h);
                let a = analytic[k];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
                assert!(rel < 1e-4, "param {k}: analytic {a}, fd {fd}");
            }
        }
    }

    #[test]
    fn zero_seed_gives_zero_gradients() {
        let net = PolicyValueNet::new(2, &mut rng(3));
        let obs = vec![0.5; net.input_dim];
        let mut grads = Gradients::zeros(&net);
        let cache = net.forward_cached(&obs).unwrap();
        net.backward(&cache, &[0.0; ACTION_COUNT], 0.0, &mut grads);
        assert_eq!(grads.global_norm(), 0.0);
    }

    #[test]
    fn value_head_gradient_independent_of_policy_loss() {
        let net = PolicyValueNet::new(2, &mut rng(4));
        let obs = vec![0.2; net.input_dim];
        let mut grads = Gradients::zeros(&net);
        let cache = net.forward_cached(&obs).unwrap();
        net.backward(&cache, &[1.0, -0.5, 0.2, 0.0, 0.3], 0.0, &mut grads);
        let gv = &grads.layers[3];
        assert!(gv.w.iter().all(|&v| v == 0.0) && gv.b[0] == 0.0);
    }

    #[test]
    fn adam_examples() {
        // Zero gradient at step 1 leaves parameters unchanged.
        let mut net = PolicyValueNet::new(2, &mut rng(9));
        let before = net.flat_params();
        let grads = Gradients::zeros(&net);
        let mut opt = OptimState::new(&net);
        adam_step(&mut net, &grads, &mut opt, 0.001);
        assert_eq!(net.flat_params(), before);

        // Scalar-like check: g=1 everywhere, step 1 moves each param by ~lr.
        let mut net = PolicyValueNet::zeroed(2);
        let mut grads = Gradients::zeros(&net);
        for l in &mut grads.layers {
            l.w.iter_mut().for_each(|v| *v = 1.0);
            l.b.iter_mut().for_each(|v| *v = 1.0);
        }
        let mut opt = OptimState::new(&net);
        adam_step(&mut net, &grads, &mut opt, 0.001);
        let expect = -0.001 * 1.0 / (1.0 + 1e-8);
        for p in net.flat_params() {
            assert!((p - expect).abs() < 1e-12);
        }

        // Constant gradient: per-step delta approaches lr.
        let mut prev = net.flat_params()[0];
        let mut delta = 0.0;
        for _ in 0..200 {
            adam_step(&mut net, &grads, &mut opt, 0.001);
            let cur = net.flat_params()[0];
            delta = prev - cur;
            prev = cur;
        }
        assert!((delta - 0.001).abs() < 1e-5, "per-step delta {delta}");
    }

    #[test]
    fn serialization_round_trip_bit_identical() {
        let net = PolicyValueNet::new(4, &mut rng(10));
        let bytes = net.to_bytes();
        let restored = PolicyValueNet::from_bytes(&bytes).unwrap();
        assert_eq!(net, restored);
        let obs: Vec<f64> = (0..net.input_dim).map(|i| i as f64 * 0.01).collect();
        assert_eq!(net.forward(&obs).unwrap(), restored.forward(&obs).unwrap());
    }

    #[test]
    fn corrupted_model_rejected() {
        let net = PolicyValueNet::new(2, &mut rng(11));
        let mut bytes = net.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        assert!(PolicyValueNet::from_bytes(&bytes).is_err());
        assert!(PolicyValueNet::from_bytes(&bytes[..10]).is_err());
    }
}
