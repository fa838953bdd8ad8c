//! The two classifiers under comparison: a frozen random patch embedding
//! with a linear head, and the same backbone with the prompt layer
//! inserted between embedding and head.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterConfig, CauvisLayer, TapeForward};
use crate::autograd::{NodeId, ParamId, ParamStore, Tape};
use crate::cap::AttentionMode;
use crate::error::{Error, Result};
use crate::numerics::{add_row_broadcast, matmul, FrequencyMask, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Baseline,
    Cauvis,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Cauvis => "cauvis",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "cauvis" => Ok(ModelKind::Cauvis),
            other => Err(Error::config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Architecture settings shared by both model kinds.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Patch edge in pixels; the grid splits into (h/patch)x(w/patch)
    /// tokens of patch^2 pixels each.
    pub patch: usize,
    pub classes: usize,
    pub adapter: AdapterConfig,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            patch: 4,
            classes: 2,
            adapter: AdapterConfig {
                prompt_len: 8,
                rank_k: Some(2),
                random_prompts: true,
                ..AdapterConfig::default()
            },
        }
    }
}

impl NetConfig {
    /// The token grid is the adapter's filter grid, so the pixel grid,
    /// patch size, and adapter shape must all agree.
    pub fn validate(&self, grid_h: usize, grid_w: usize) -> Result<()> {
        self.adapter.validate()?;
        if self.patch == 0 {
            return Err(Error::config("patch must be at least 1"));
        }
        if self.classes < 2 {
            return Err(Error::config("need at least 2 classes"));
        }
        if grid_h % self.patch != 0 || grid_w % self.patch != 0 {
            return Err(Error::config(format!(
                "grid {grid_h}x{grid_w} is not divisible by patch {}",
                self.patch
            )));
        }
        let (th, tw) = (grid_h / self.patch, grid_w / self.patch);
        if th != self.adapter.h || tw != self.adapter.w {
            return Err(Error::config(format!(
                "token grid {th}x{tw} but the adapter filters {}x{}",
                self.adapter.h, self.adapter.w
            )));
        }
        Ok(())
    }
}

/// Cuts the pixel grid into non-overlapping patches: one token per patch,
/// flattened row-major, tokens ordered row-major over the patch grid so
/// token r sits at grid position (r / tokens_w, r % tokens_w).
pub fn patchify(pixels: &Matrix, patch: usize) -> Result<Matrix> {
    if patch == 0 || pixels.rows() % patch != 0 || pixels.cols() % patch != 0 {
        return Err(Error::shape(format!(
            "cannot cut {}x{} pixels into {patch}x{patch} patches",
            pixels.rows(),
            pixels.cols()
        )));
    }
    let tw = pixels.cols() / patch;
    let tokens = (pixels.rows() / patch) * tw;
    Ok(Matrix::from_fn(tokens, patch * patch, |r, c| {
        let (ti, tj) = (r / tw, r % tw);
        let (pi, pj) = (c / patch, c % patch);
        pixels.get(ti * patch + pi, tj * patch + pj)
    }))
}

/// One classifier: frozen embedding, optional prompt layer, linear head.
#[derive(Debug)]
pub struct BiasModel {
    pub kind: ModelKind,
    pub net: NetConfig,
    pub embed: ParamId,
    pub layer: Option<CauvisLayer>,
    pub head_w: ParamId,
    pub head_b: ParamId,
    /// Low-band complement of the layer's filter, used by the frequency
    /// loss; present only on the prompt-equipped kind.
    pub low_mask: Option<Arc<FrequencyMask>>,
}

/// Tape handles for one sample's forward pass.
pub struct TapedNet {
    pub x_node: NodeId,
    pub x_next: NodeId,
    pub logits: NodeId,
    pub layer: Option<TapeForward>,
}

impl BiasModel {
    /// Registration order: embedding, then layer parameters, then head.
    /// The embedding is frozen N(0, 1/patch) noise; the head starts at
    /// zero so both kinds begin at chance with identical logits.
    pub fn init(
        store: &mut ParamStore,
        kind: ModelKind,
        net: &NetConfig,
        grid_h: usize,
        grid_w: usize,
        rng: &mut impl Rng,
        proj_lr_mult: f64,
    ) -> Result<BiasModel> {
        net.validate(grid_h, grid_w)?;
        let patch_dim = net.patch * net.patch;
        let d = net.adapter.embed_dim;
        let embed_noise = Normal::new(0.0, 1.0 / (patch_dim as f64).sqrt())
            .map_err(|e| Error::config(format!("embed init: {e}")))?;
        let embed_value = Matrix::from_fn(patch_dim, d, |_, _| embed_noise.sample(rng));
        let embed = store.register("embed", embed_value, false);
        let (layer, low_mask) = match kind {
            ModelKind::Baseline => (None, None),
            ModelKind::Cauvis => {
                let layer = CauvisLayer::init(store, &net.adapter, rng, proj_lr_mult)?;
                let low = Arc::new(layer.mask.complement());
                (Some(layer), Some(low))
            }
        };
        let head_w = store.register("head_w", Matrix::zeros(d, net.classes), true);
        let head_b = store.register("head_b", Matrix::zeros(1, net.classes), true);
        Ok(BiasModel { kind, net: net.clone(), embed, layer, head_w, head_b, low_mask })
    }

    /// Embedded tokens before the prompt layer, off tape.
    pub fn embed_pure(&self, store: &ParamStore, pixels: &Matrix) -> Result<Matrix> {
        let tokens = patchify(pixels, self.net.patch)?;
        matmul(&tokens, store.value(self.embed))
    }

    /// Token features after the (optional) prompt layer, off tape.
    pub fn features_pure(&self, store: &ParamStore, pixels: &Matrix) -> Result<Matrix> {
        let x = self.embed_pure(store, pixels)?;
        match &self.layer {
            None => Ok(x),
            Some(layer) => Ok(layer.forward_pure(store, &x, AttentionMode::Full)?.x_next),
        }
    }

    /// Class logits for one sample, off tape.
    pub fn forward_pure(&self, store: &ParamStore, pixels: &Matrix) -> Result<Matrix> {
        let x_next = self.features_pure(store, pixels)?;
        let n = x_next.rows() as f64;
        let pooled = Matrix::from_fn(1, x_next.cols(), |_, j| {
            (0..x_next.rows()).map(|i| x_next.get(i, j)).sum::<f64>() / n
        });
        let logits = matmul(&pooled, store.value(self.head_w))?;
        add_row_broadcast(&logits, store.value(self.head_b))
    }

    /// The same forward on a tape, returning the handles the loss needs.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        pixels: &Matrix,
    ) -> Result<TapedNet> {
        let tokens = patchify(pixels, self.net.patch)?;
        let tokens_node = tape.constant(tokens);
        let embed_node = tape.param(store, self.embed);
        let x_node = tape.matmul(tokens_node, embed_node)?;
        let (x_next, layer_fwd) = match &self.layer {
            None => (x_node, None),
            Some(layer) => {
                let fwd = layer.forward_tape_from(tape, store, x_node)?;
                (fwd.x_next, Some(fwd))
            }
        };
        let pooled = tape.mean_rows(x_next)?;
        let head_w = tape.param(store, self.head_w);
        let head_b = tape.param(store, self.head_b);
        let product = tape.matmul(pooled, head_w)?;
        let logits = tape.add_row_broadcast(product, head_b)?;
        Ok(TapedNet { x_node, x_next, logits, layer: layer_fwd })
    }
}
