//! Direct-effect path patching between a clean run and a base run.
//!
//! In `direct` mode every block contribution is frozen at its base value
//! except the patched layer, which is taken from the clean run; the final
//! position residual is recomposed and unembedded. In `causal` mode the
//! patched contribution is written into the base stream and the later layers
//! are recomputed.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{add_into, softmax, ActivationCache, ToyResidualModel};
use super::tokenizer::Tokenizer;
use super::{ModelError, Result};
use crate::querygen::{numbered_steps, CommonsenseQuery};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchMode {
    Direct,
    Causal,
}

impl fmt::Display for PatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatchMode::Direct => "direct",
            PatchMode::Causal => "causal",
        })
    }
}

impl FromStr for PatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "direct" => Ok(PatchMode::Direct),
            "causal" => Ok(PatchMode::Causal),
            _ => Err(format!("unknown patch mode `{s}` (expected direct|causal)")),
        }
    }
}

/// Which positions receive the clean contribution. Positions are aligned
/// from the end of each sequence, so `Suffix(k)` patches the last `k` tokens
/// of the base run with the last `k` tokens of the clean run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionPolicy {
    Last,
    Suffix(usize),
}

impl PositionPolicy {
    fn width(self) -> usize {
        match self {
            PositionPolicy::Last => 1,
            PositionPolicy::Suffix(k) => k,
        }
    }

    fn check(self, clean: usize, base: usize) -> Result<usize> {
        let k = self.width();
        if k == 0 || clean < k || base < k {
            return Err(ModelError::LengthMismatch {
                clean,
                base,
                policy: self.to_string(),
            });
        }
        Ok(k)
    }
}

impl fmt::Display for PositionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PositionPolicy::Last => f.write_str("last"),
            PositionPolicy::Suffix(k) => write!(f, "suffix:{k}"),
        }
    }
}

impl FromStr for PositionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "last" {
            return Ok(PositionPolicy::Last);
        }
        s.strip_prefix("suffix:")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k > 0)
            .map(PositionPolicy::Suffix)
            .ok_or_else(|| format!("bad position policy `{s}` (expected last|suffix:<k>)"))
    }
}

/// The two answer tokens whose logit difference is monitored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Readout {
    pub gold: u32,
    pub other: u32,
}

impl Readout {
    pub fn from_letters(tokenizer: &Tokenizer, gold: &str, other: &str) -> Result<Self> {
        let id = |p: &str| tokenizer.token_id(p).ok_or_else(|| ModelError::UnknownPiece(p.to_string()));
        Ok(Self {
            gold: id(gold)?,
            other: id(other)?,
        })
    }

    pub fn logit_diff(&self, logits: &[f64]) -> f64 {
        logits[self.gold as usize] - logits[self.other as usize]
    }

    pub fn gold_prob(&self, logits: &[f64]) -> f64 {
        softmax(logits)[self.gold as usize]
    }
}

/// Components taken from the clean run in a direct-mode set patch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatchSet {
    pub embedding: bool,
    pub layers: Vec<usize>,
}

impl PatchSet {
    pub fn layer(l: usize) -> Self {
        Self {
            embedding: false,
            layers: vec![l],
        }
    }

    pub fn all(n_layers: usize) -> Self {
        Self {
            embedding: true,
            layers: (0..n_layers).collect(),
        }
    }
}

fn check_layer(model: &ToyResidualModel, layer: usize) -> Result<()> {
    if layer >= model.n_layers() {
        return Err(ModelError::LayerOutOfRange {
            layer,
            n_layers: model.n_layers(),
        });
    }
    Ok(())
}

/// Final-position logits with the components in `set` taken from `clean` and
/// everything else frozen at `base`.
pub fn patched_logits_direct(
    model: &ToyResidualModel,
    clean: &ActivationCache,
    base: &ActivationCache,
    set: &PatchSet,
) -> Result<Vec<f64>> {
    for &l in &set.layers {
        check_layer(model, l)?;
    }
    PositionPolicy::Last.check(clean.len(), base.len())?;
    let (c, b) = (clean.last(), base.last());
    // same summation order as the forward pass, so an empty patch is exact
    let mut resid = if set.embedding {
        clean.embedding[c].clone()
    } else {
        base.embedding[b].clone()
    };
    for l in 0..model.n_layers() {
        if set.layers.contains(&l) {
            add_into(&mut resid, &clean.contributions[l][c]);
        } else {
            add_into(&mut resid, &base.contributions[l][b]);
        }
    }
    Ok(model.readout(&resid))
}

/// Base run with layer `layer`'s contribution replaced by the clean one at the
/// policy's positions; layers after it are recomputed.
pub fn patched_logits_causal(
    model: &ToyResidualModel,
    clean: &ActivationCache,
    base: &ActivationCache,
    layer: usize,
    policy: PositionPolicy,
) -> Result<Vec<f64>> {
    check_layer(model, layer)?;
    let k = policy.check(clean.len(), base.len())?;
    let mut resid = base.residual_before(layer);
    let (nc, nb) = (clean.len(), base.len());
    for (p, r) in resid.iter_mut().enumerate() {
        if p + k >= nb {
            add_into(r, &clean.contributions[layer][nc - (nb - p)]);
        } else {
            add_into(r, &base.contributions[layer][p]);
        }
    }
    Ok(model.run_from(layer + 1, &mut resid))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeEntry {
    pub l: usize,
    pub de_logit: f64,
    pub de_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectEffectCurve {
    pub pair_id: String,
    pub mode: PatchMode,
    pub position: String,
    pub layers: Vec<DeEntry>,
}

impl DirectEffectCurve {
    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|e| e.de_logit == 0.0 && e.de_prob == 0.0)
    }

    pub fn peak_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .max_by(|a, b| a.de_logit.abs().total_cmp(&b.de_logit.abs()))
            .map(|e| e.l)
    }
}

pub fn direct_effect(
    model: &ToyResidualModel,
    clean: &ActivationCache,
    base: &ActivationCache,
    layer: usize,
    mode: PatchMode,
    policy: PositionPolicy,
    readout: Readout,
) -> Result<DeEntry> {
    let patched = match mode {
        PatchMode::Direct => {
            policy.check(clean.len(), base.len())?;
            patched_logits_direct(model, clean, base, &PatchSet::layer(layer))?
        }
        PatchMode::Causal => patched_logits_causal(model, clean, base, layer, policy)?,
    };
    Ok(DeEntry {
        l: layer,
        de_logit: readout.logit_diff(&patched) - readout.logit_diff(&base.logits),
        de_prob: readout.gold_prob(&patched) - readout.gold_prob(&base.logits),
    })
}

pub fn sweep_caches(
    model: &ToyResidualModel,
    clean: &ActivationCache,
    base: &ActivationCache,
    mode: PatchMode,
    policy: PositionPolicy,
    readout: Readout,
    pair_id: &str,
) -> Result<DirectEffectCurve> {
    let layers = (0..model.n_layers())
        .into_par_iter()
        .map(|l| direct_effect(model, clean, base, l, mode, policy, readout))
        .collect::<Result<Vec<_>>>()?;
    Ok(DirectEffectCurve {
        pair_id: pair_id.to_string(),
        mode,
        position: policy.to_string(),
        layers,
    })
}

/// Run both prompts and sweep every layer.
pub fn sweep_layers(
    model: &ToyResidualModel,
    clean_prompt: &str,
    base_prompt: &str,
    mode: PatchMode,
    policy: PositionPolicy,
    readout: Readout,
    pair_id: &str,
) -> Result<DirectEffectCurve> {
    let clean = model.forward_text(clean_prompt)?;
    let base = model.forward_text(base_prompt)?;
    sweep_caches(model, &clean, &base, mode, policy, readout, pair_id)
}

/// Layer-wise mean of curves sharing mode, position and depth.
pub fn mean_curve(curves: &[DirectEffectCurve]) -> Result<DirectEffectCurve> {
    let first = curves
        .first()
        .ok_or_else(|| ModelError::IncompatibleCurves("no curves to average".into()))?;
    for c in curves {
        if c.mode != first.mode || c.position != first.position || c.layers.len() != first.layers.len() {
            return Err(ModelError::IncompatibleCurves(format!(
                "`{}` ({} {} x{}) vs `{}` ({} {} x{})",
                first.pair_id,
                first.mode,
                first.position,
                first.layers.len(),
                c.pair_id,
                c.mode,
                c.position,
                c.layers.len()
            )));
        }
    }
    let n = curves.len() as f64;
    let layers = (0..first.layers.len())
        .map(|i| DeEntry {
            l: first.layers[i].l,
            de_logit: curves.iter().map(|c| c.layers[i].de_logit).sum::<f64>() / n,
            de_prob: curves.iter().map(|c| c.layers[i].de_prob).sum::<f64>() / n,
        })
        .collect();
    Ok(DirectEffectCurve {
        pair_id: "mean".into(),
        mode: first.mode,
        position: first.position.clone(),
        layers,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptedPrompt {
    pub text: String,
    /// Byte range of the trajectory steps in the original prompt.
    pub span: Range<usize>,
    /// Byte range of the replacement in `text`.
    pub replaced: Range<usize>,
    pub n_tokens: usize,
}

/// Replace the query's numbered trajectory steps with uniformly drawn word
/// tokens, keeping the token count. The last occurrence is used so n-shot
/// prompts corrupt the target question rather than an exemplar.
pub fn random_corruption(
    tokenizer: &Tokenizer,
    prompt: &str,
    query: &CommonsenseQuery,
    seed: u64,
) -> Result<CorruptedPrompt> {
    let steps = numbered_steps(&query.context_steps);
    let start = prompt
        .rfind(&steps)
        .filter(|_| !steps.is_empty())
        .ok_or_else(|| ModelError::SpanNotFound(query.query_id.clone()))?;
    let span = start..start + steps.len();
    let n_tokens = tokenizer.encode(&steps).len();
    let words = tokenizer.word_ids();
    if words.is_empty() {
        return Err(ModelError::InvalidConfig("tokenizer has no word tokens".into()));
    }
    let mut rng = rng_from_seed(seed);
    let replacement = (0..n_tokens)
        .map(|_| {
            let id = words[rng.random_range(0..words.len() as u32) as usize];
            tokenizer.token(id).expect("word id in range")
        })
        .collect::<Vec<_>>()
        .join(" ");
    let text = format!("{}{}{}", &prompt[..span.start], replacement, &prompt[span.end..]);
    let replaced = span.start..span.start + replacement.len();
    Ok(CorruptedPrompt {
        text,
        span,
        replaced,
        n_tokens,
    })
}
