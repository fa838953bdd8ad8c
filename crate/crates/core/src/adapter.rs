//! Dual-branch adapter layer around the prompt attention.
//!
//! The causal branch gates the attention update through a two-layer
//! sigmoid MLP; the auxiliary branch pushes the input through a low-rank
//! bottleneck and a high-pass over the token grid; a learnable scalar
//! blends the two paths. At the documented initialization (zero prompts,
//! zero bottleneck up-projection) the whole layer is exactly the identity
//! map for every fusion value, so training starts from the frozen base.
//!
//! Both a plain-matrix forward and a tape forward are provided; they
//! compose the same kernels in the same order, so their outputs are
//! bitwise equal and the tape gradients describe the deployed math.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{NodeId, ParamId, ParamStore, Tape};
use crate::cap::{self, AttentionMode, CapOutput};
use crate::error::{Error, Result};
use crate::numerics::{
    add_row_broadcast, filter_columns, make_highpass, matmul, sigmoid, sigmoid_map,
    FrequencyMask, Matrix,
};

/// Bottleneck width: one sixteenth of the embedding, rounded up, never 0.
pub fn bottleneck_rank(embed_dim: usize) -> usize {
    embed_dim.div_ceil(16).max(1)
}

/// Layer shape and initialization knobs, shared with the run-config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    pub embed_dim: usize,
    pub prompt_len: usize,
    /// Spectrum cut scoping the tail penalty; `None` resolves per forward
    /// pass to the 90% energy rank.
    pub rank_k: Option<usize>,
    /// High-pass cutoff for the auxiliary branch, in [0, 1].
    pub cutoff: f64,
    /// Token grid height and width; the token count must equal h·w.
    pub h: usize,
    pub w: usize,
    /// Initial raw fusion value; the applied ratio is its logistic squash.
    pub fusion_init: f64,
    /// When set, the auxiliary branch adds its filtered output back onto
    /// the input instead of replacing it.
    pub aux_residual: bool,
    /// When set, prompts start from small Gaussian noise instead of zeros,
    /// trading exact step-0 passthrough for a symmetry-broken start.
    pub random_prompts: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            embed_dim: 32,
            prompt_len: 100,
            rank_k: None,
            cutoff: 0.5,
            h: 4,
            w: 4,
            fusion_init: 0.0,
            aux_residual: false,
            random_prompts: false,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim must be at least 1"));
        }
        if self.prompt_len == 0 {
            return Err(Error::config("prompt_len must be at least 1"));
        }
        if self.h == 0 || self.w == 0 {
            return Err(Error::config("token grid must be at least 1x1"));
        }
        if !self.cutoff.is_finite() || !(0.0..=1.0).contains(&self.cutoff) {
            return Err(Error::config("cutoff must lie in [0, 1]"));
        }
        if !self.fusion_init.is_finite() {
            return Err(Error::config("fusion_init must be finite"));
        }
        Ok(())
    }

    /// Token count implied by the grid.
    pub fn tokens(&self) -> usize {
        self.h * self.w
    }
}

/// Weights of the gating MLP, borrowed from wherever they live.
pub struct CausalBranchParams<'a> {
    pub w1: &'a Matrix,
    pub b1: &'a Matrix,
    pub w2: &'a Matrix,
    pub b2: &'a Matrix,
}

/// Two-layer sigmoid MLP: σ(σ(p̃·w1 + b1)·w2 + b2). Every output entry
/// lies strictly inside (0, 1).
pub fn causal_branch(p_tilde: &Matrix, params: &CausalBranchParams) -> Result<Matrix> {
    let hidden = sigmoid_map(&add_row_broadcast(&matmul(p_tilde, params.w1)?, params.b1)?);
    Ok(sigmoid_map(&add_row_broadcast(&matmul(&hidden, params.w2)?, params.b2)?))
}

/// Bottleneck + high-pass: filter(σ(x·w_down·w_up)) per channel over the
/// h×w token grid. `residual` adds the filtered map back onto the input
/// instead of replacing it.
pub fn aux_branch(
    x: &Matrix,
    w_down: &Matrix,
    w_up: &Matrix,
    mask: &FrequencyMask,
    h: usize,
    w: usize,
    residual: bool,
) -> Result<Matrix> {
    let squeezed = matmul(&matmul(x, w_down)?, w_up)?;
    let x1 = sigmoid_map(&squeezed);
    let filtered = filter_columns(&x1, mask, h, w)?;
    if residual {
        x.add(&filtered)
    } else {
        Ok(filtered)
    }
}

/// Convex blend base + s(alpha)·(prompt_feat − base) with the logistic
/// squash s. Written in difference form so prompt_feat == base returns
/// base exactly, which the init-neutrality guarantee leans on.
pub fn fuse(base: &Matrix, prompt_feat: &Matrix, alpha: f64) -> Result<Matrix> {
    let s = sigmoid(alpha);
    base.add(&prompt_feat.sub(base)?.scale(s))
}

/// Parameter handles for one adapter layer. Ids are registered in a fixed
/// order, so checkpoints and optimizer traversal are reproducible.
#[derive(Debug, Clone)]
pub struct CauvisLayer {
    pub config: AdapterConfig,
    pub mask: Arc<FrequencyMask>,
    pub prompts: ParamId,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub gate_w1: ParamId,
    pub gate_b1: ParamId,
    pub gate_w2: ParamId,
    pub gate_b2: ParamId,
    pub aux_w_down: ParamId,
    pub aux_w_up: ParamId,
    pub alpha: ParamId,
}

/// Plain-matrix forward products, kept for analysis and reporting.
#[derive(Debug, Clone)]
pub struct LayerForward {
    pub x_next: Matrix,
    pub attention: CapOutput,
    pub gate: Matrix,
    pub aux: Matrix,
}

/// Tape forward products: node handles for loss assembly plus the score
/// spectrum snapshot used for rank resolution and metrics.
pub struct TapeForward {
    pub x_node: NodeId,
    pub x_next: NodeId,
    pub scores: NodeId,
    pub tail: NodeId,
    pub k: usize,
    pub sigma: Vec<f64>,
}

impl CauvisLayer {
    /// Registers all layer parameters at the documented initialization:
    /// zero prompts (unless `random_prompts`), Gaussian projections and
    /// gate weights, zero gate biases, Gaussian down-projection, zero
    /// up-projection, fusion at `fusion_init`. The attention projections
    /// carry `proj_lr_mult` as their learning-rate scale.
    pub fn init(
        store: &mut ParamStore,
        config: &AdapterConfig,
        rng: &mut impl Rng,
        proj_lr_mult: f64,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let t = config.prompt_len;
        let r = bottleneck_rank(d);
        let proj = Normal::new(0.0, 1.0 / (d as f64).sqrt())
            .map_err(|e| Error::config(format!("projection init: {e}")))?;
        // Unit-scale prompt rows keep the random-prompt variant's attention
        // live from the first step: near-zero prompts leave the softmax
        // uniform, which hides the prompts from every downstream probe.
        let prompt_noise = Normal::new(0.0, 1.0)
            .map_err(|e| Error::config(format!("prompt init: {e}")))?;
        let mask = Arc::new(make_highpass(config.h, config.w, config.cutoff)?);

        let prompts_value = if config.random_prompts {
            Matrix::from_fn(t, d, |_, _| prompt_noise.sample(rng))
        } else {
            Matrix::zeros(t, d)
        };
        let gaussian = |rows: usize, cols: usize, rng: &mut dyn rand::RngCore| {
            Matrix::from_fn(rows, cols, |_, _| proj.sample(rng))
        };

        let prompts = store.register("prompts", prompts_value, true);
        let w_q = store.register_scaled("w_q", gaussian(d, d, rng), true, proj_lr_mult);
        let w_k = store.register_scaled("w_k", gaussian(d, d, rng), true, proj_lr_mult);
        let w_v = store.register_scaled("w_v", gaussian(d, d, rng), true, proj_lr_mult);
        let gate_w1 = store.register("gate_w1", gaussian(d, d, rng), true);
        let gate_b1 = store.register("gate_b1", Matrix::zeros(1, d), true);
        let gate_w2 = store.register("gate_w2", gaussian(d, d, rng), true);
        let gate_b2 = store.register("gate_b2", Matrix::zeros(1, d), true);
        let aux_w_down = store.register("aux_w_down", gaussian(d, r, rng), true);
        let aux_w_up = store.register("aux_w_up", Matrix::zeros(r, d), true);
        let alpha =
            store.register("alpha", Matrix::new(1, 1, vec![config.fusion_init])?, true);

        Ok(CauvisLayer {
            config: config.clone(),
            mask,
            prompts,
            w_q,
            w_k,
            w_v,
            gate_w1,
            gate_b1,
            gate_w2,
            gate_b2,
            aux_w_down,
            aux_w_up,
            alpha,
        })
    }

    /// Forward pass on plain matrices. `mode` selects the raw or rank-k
    /// filtered score map for the value mix.
    pub fn forward_pure(
        &self,
        store: &ParamStore,
        x: &Matrix,
        mode: AttentionMode,
    ) -> Result<LayerForward> {
        let attention = cap::cap_forward(
            x,
            store.value(self.prompts),
            store.value(self.w_q),
            store.value(self.w_k),
            store.value(self.w_v),
            self.config.rank_k,
            mode,
        )?;
        let gate_params = CausalBranchParams {
            w1: store.value(self.gate_w1),
            b1: store.value(self.gate_b1),
            w2: store.value(self.gate_w2),
            b2: store.value(self.gate_b2),
        };
        let gate = causal_branch(&attention.delta_x, &gate_params)?;
        let gated = gate.hadamard(&attention.delta_x)?;
        let base = x.add(&gated)?;
        let aux = aux_branch(
            x,
            store.value(self.aux_w_down),
            store.value(self.aux_w_up),
            &self.mask,
            self.config.h,
            self.config.w,
            self.config.aux_residual,
        )?;
        // Replace mode rides the aux output on the causal path; residual
        // mode already carries x inside aux, so it fuses directly.
        let prompt_feat = if self.config.aux_residual { aux.clone() } else { base.add(&aux)? };
        let x_next = fuse(&base, &prompt_feat, store.value(self.alpha).get(0, 0))?;
        Ok(LayerForward { x_next, attention, gate, aux })
    }

    /// The same forward on a tape. Always mixes the raw score map (the
    /// penalty cut never truncates the trained path) and returns the tail
    /// node for the loss.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: &Matrix,
    ) -> Result<TapeForward> {
        let x_node = tape.constant(x.clone());
        self.forward_tape_from(tape, store, x_node)
    }

    /// Tape forward continuing from an already-built feature node, for
    /// callers whose input is itself computed on the tape.
    pub fn forward_tape_from(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x_node: NodeId,
    ) -> Result<TapeForward> {
        let d = self.config.embed_dim;
        let p = tape.param(store, self.prompts);
        let w_q = tape.param(store, self.w_q);
        let w_k = tape.param(store, self.w_k);
        let w_v = tape.param(store, self.w_v);
        let q = tape.matmul(x_node, w_q)?;
        let k_proj = tape.matmul(p, w_k)?;
        let v = tape.matmul(p, w_v)?;
        let raw = tape.matmul_nt(q, k_proj)?;
        let scores = tape.scale(raw, 1.0 / (d as f64).sqrt());

        let sigma = crate::numerics::svd(tape.value(scores))?.sigma;
        let k = match self.config.rank_k {
            Some(k) if k > sigma.len() => {
                return Err(Error::config(format!(
                    "rank cut {k} exceeds spectrum length {}",
                    sigma.len()
                )))
            }
            Some(k) => k,
            None => cap::effective_rank(&sigma, 0.9),
        };
        let tail = tape.tail_singular_sum(scores, k)?;

        let attn = tape.row_softmax(scores);
        let delta = tape.matmul(attn, v)?;
        let w1 = tape.param(store, self.gate_w1);
        let b1 = tape.param(store, self.gate_b1);
        let w2 = tape.param(store, self.gate_w2);
        let b2 = tape.param(store, self.gate_b2);
        let h1 = tape.matmul(delta, w1)?;
        let h1b = tape.add_row_broadcast(h1, b1)?;
        let a1 = tape.sigmoid(h1b);
        let h2 = tape.matmul(a1, w2)?;
        let h2b = tape.add_row_broadcast(h2, b2)?;
        let gate = tape.sigmoid(h2b);
        let gated = tape.hadamard(gate, delta)?;
        let base = tape.add(x_node, gated)?;

        let w_down = tape.param(store, self.aux_w_down);
        let w_up = tape.param(store, self.aux_w_up);
        let bd = tape.matmul(x_node, w_down)?;
        let bu = tape.matmul(bd, w_up)?;
        let x1 = tape.sigmoid(bu);
        let filtered =
            tape.spectral_filter(x1, Arc::clone(&self.mask), self.config.h, self.config.w)?;
        let prompt_feat = if self.config.aux_residual {
            tape.add(x_node, filtered)?
        } else {
            tape.add(base, filtered)?
        };

        let diff = tape.sub(prompt_feat, base)?;
        let alpha = tape.param(store, self.alpha);
        let s = tape.sigmoid(alpha);
        let scaled = tape.scale_by_scalar(diff, s)?;
        let x_next = tape.add(base, scaled)?;
        Ok(TapeForward { x_node, x_next, scores, tail, k, sigma })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, STREAM_INIT, STREAM_PROBES};

    fn random(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn small_config() -> AdapterConfig {
        AdapterConfig {
            embed_dim: 6,
            prompt_len: 4,
            rank_k: Some(2),
            cutoff: 0.4,
            h: 2,
            w: 3,
            fusion_init: 0.0,
            ..AdapterConfig::default()
        }
    }

    #[test]
    fn gate_is_exactly_half_at_zero_weights() {
        let d = 3;
        let zero = Matrix::zeros(d, d);
        let bias = Matrix::zeros(1, d);
        let params = CausalBranchParams { w1: &zero, b1: &bias, w2: &zero, b2: &bias };
        let y = causal_branch(&Matrix::zeros(5, d), &params).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.5));
        // Nonzero input changes nothing when all weights are zero.
        let mut rng = stream_rng(40, STREAM_PROBES);
        let y2 = causal_branch(&random(&mut rng, 5, d), &params).unwrap();
        assert!(y2.data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn gate_output_stays_strictly_inside_unit_interval() {
        let mut rng = stream_rng(41, STREAM_PROBES);
        let d = 4;
        for _ in 0..1000 {
            let params_mats = (
                random(&mut rng, d, d).scale(3.0),
                random(&mut rng, 1, d).scale(3.0),
                random(&mut rng, d, d).scale(3.0),
                random(&mut rng, 1, d).scale(3.0),
            );
            let params = CausalBranchParams {
                w1: &params_mats.0,
                b1: &params_mats.1,
                w2: &params_mats.2,
                b2: &params_mats.3,
            };
            let y = causal_branch(&random(&mut rng, 2, d), &params).unwrap();
            assert!(y.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn aux_all_pass_mask_returns_bottleneck_exactly() {
        let mut rng = stream_rng(42, STREAM_PROBES);
        let (d, r) = (4, 2);
        let x = random(&mut rng, 6, d);
        let w_down = random(&mut rng, d, r);
        let w_up = random(&mut rng, r, d);
        let mask = FrequencyMask::all_pass(2, 3);
        let out = aux_branch(&x, &w_down, &w_up, &mask, 2, 3, false).unwrap();
        let want = sigmoid_map(&matmul(&matmul(&x, &w_down).unwrap(), &w_up).unwrap());
        assert_eq!(out.data(), want.data());
    }

    #[test]
    fn aux_zero_up_projection_kills_any_input_exactly() {
        let mut rng = stream_rng(43, STREAM_PROBES);
        let (d, r) = (4, 1);
        let x = random(&mut rng, 6, d);
        let w_down = random(&mut rng, d, r);
        let w_up = Matrix::zeros(r, d);
        let mask = make_highpass(2, 3, 0.3).unwrap();
        // σ of the zero pre-activation is the constant 1/2 map; a
        // DC-killing mask turns that into exact zeros.
        let out = aux_branch(&x, &w_down, &w_up, &mask, 2, 3, false).unwrap();
        assert_eq!(out.max_abs(), 0.0);
        let res = aux_branch(&x, &w_down, &w_up, &mask, 2, 3, true).unwrap();
        assert_eq!(res.data(), x.data());
    }

    #[test]
    fn aux_is_insensitive_to_constant_offsets_at_documented_init() {
        let mut rng = stream_rng(44, STREAM_PROBES);
        let (d, r) = (4, 1);
        let x = random(&mut rng, 6, d);
        let shifted = x.map(|v| v + 0.01);
        let w_down = random(&mut rng, d, r);
        let w_up = Matrix::zeros(r, d);
        let mask = make_highpass(2, 3, 0.3).unwrap();
        let a = aux_branch(&x, &w_down, &w_up, &mask, 2, 3, false).unwrap();
        let b = aux_branch(&shifted, &w_down, &w_up, &mask, 2, 3, false).unwrap();
        assert_eq!(a.max_abs_diff(&b), 0.0);
    }

    #[test]
    fn fuse_limits_mean_and_convexity() {
        let mut rng = stream_rng(45, STREAM_PROBES);
        let base = random(&mut rng, 3, 3);
        let prompt = random(&mut rng, 3, 3);
        let frozen = fuse(&base, &prompt, -30.0).unwrap();
        assert!(frozen.max_abs_diff(&base) <= 1e-9);
        let mean = fuse(&base, &prompt, 0.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = base.get(i, j) + 0.5 * (prompt.get(i, j) - base.get(i, j));
                assert!((mean.get(i, j) - want).abs() <= 1e-15);
            }
        }
        for _ in 0..50 {
            let alpha = rng.gen_range(-6.0..6.0);
            let out = fuse(&base, &prompt, alpha).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let (lo, hi) = (
                        base.get(i, j).min(prompt.get(i, j)),
                        base.get(i, j).max(prompt.get(i, j)),
                    );
                    assert!(out.get(i, j) >= lo && out.get(i, j) <= hi);
                }
            }
        }
    }

    #[test]
    fn layer_is_bitwise_identity_at_documented_init() {
        let mut rng = stream_rng(46, STREAM_INIT);
        for (fusion_init, aux_residual) in
            [(0.0, false), (-3.0, false), (2.5, false), (0.0, true), (1.0, true)]
        {
            let config =
                AdapterConfig { fusion_init, aux_residual, ..small_config() };
            let mut store = ParamStore::new();
            let layer = CauvisLayer::init(&mut store, &config, &mut rng, 1.0).unwrap();
            let x = random(&mut rng, config.tokens(), config.embed_dim);
            let out = layer.forward_pure(&store, &x, AttentionMode::Full).unwrap();
            assert_eq!(
                out.x_next.max_abs_diff(&x),
                0.0,
                "fusion_init {fusion_init}, residual {aux_residual}"
            );
            let mut tape = Tape::new();
            let fwd = layer.forward_tape(&mut tape, &store, &x).unwrap();
            assert_eq!(tape.value(fwd.x_next).max_abs_diff(&x), 0.0);
        }
    }

    #[test]
    fn pure_and_tape_forwards_agree_bitwise_on_random_parameters() {
        let mut rng = stream_rng(47, STREAM_INIT);
        for residual in [false, true] {
            let config = AdapterConfig { aux_residual: residual, ..small_config() };
            let mut store = ParamStore::new();
            let layer = CauvisLayer::init(&mut store, &config, &mut rng, 1.0).unwrap();
            // Randomize every parameter, including the zero-initialized ones.
            let ids: Vec<ParamId> = store.iter().map(|p| p.id).collect();
            for id in ids {
                let shape = store.value(id);
                let fresh = random(&mut rng, shape.rows(), shape.cols()).scale(0.7);
                store.set_value(id, fresh).unwrap();
            }
            let x = random(&mut rng, config.tokens(), config.embed_dim);
            let pure = layer.forward_pure(&store, &x, AttentionMode::Full).unwrap();
            let mut tape = Tape::new();
            let fwd = layer.forward_tape(&mut tape, &store, &x).unwrap();
            assert_eq!(pure.x_next.data(), tape.value(fwd.x_next).data());
            assert_eq!(pure.attention.tail_sum, tape.scalar(fwd.tail).unwrap());
        }
    }

    #[test]
    fn forward_is_finite_for_many_random_inputs() {
        let mut rng = stream_rng(48, STREAM_INIT);
        let config = small_config();
        let mut store = ParamStore::new();
        let layer = CauvisLayer::init(&mut store, &config, &mut rng, 1.0).unwrap();
        let ids: Vec<ParamId> = store.iter().map(|p| p.id).collect();
        for id in ids {
            let shape = store.value(id);
            let fresh = random(&mut rng, shape.rows(), shape.cols());
            store.set_value(id, fresh).unwrap();
        }
        for _ in 0..1000 {
            let x = random(&mut rng, config.tokens(), config.embed_dim).scale(2.0);
            let out = layer.forward_pure(&store, &x, AttentionMode::Full).unwrap();
            assert!(out.x_next.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn token_count_must_match_grid() {
        let mut rng = stream_rng(49, STREAM_INIT);
        let config = small_config();
        let mut store = ParamStore::new();
        let layer = CauvisLayer::init(&mut store, &config, &mut rng, 1.0).unwrap();
        let x = Matrix::zeros(config.tokens() + 1, config.embed_dim);
        assert!(matches!(
            layer.forward_pure(&store, &x, AttentionMode::Full),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn config_validation_and_serde_round_trip() {
        let config = small_config();
        assert!(config.validate().is_ok());
        let text = serde_json::to_string(&config).unwrap();
        let back: AdapterConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
        assert!(serde_json::from_str::<AdapterConfig>(r#"{"embd_dim": 4}"#).is_err());
        let bad = AdapterConfig { cutoff: 1.5, ..small_config() };
        assert!(bad.validate().is_err());
        assert_eq!(bottleneck_rank(32), 2);
        assert_eq!(bottleneck_rank(16), 1);
        assert_eq!(bottleneck_rank(17), 2);
        assert_eq!(bottleneck_rank(1), 1);
    }
}
