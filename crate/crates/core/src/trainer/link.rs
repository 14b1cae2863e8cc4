//! Batched two-stage link for the learned path: channel passes, receiver
//! assembly and the reverse-mode pass used when the codec is trained through
//! the frozen separator.

use crate::channel::{ob_stage, st_stage, ChannelMatrix, NoiseSpec, ResourcePlan, SignalBlock, StageTag};
use crate::codec::{merge, SemanticCodec};
use crate::error::Result;
use crate::nn::Tensor;
use crate::separator::{assemble_input, Generator};

/// What each receiver hears: `common[k]` is `[B, C, h, w]` and
/// `prompts[k][j]` is `[B, P, h, w]` from orthogonal block `j`.
pub(crate) struct Received {
    pub common: Vec<Tensor>,
    pub prompts: Vec<Vec<Tensor>>,
}

/// Passes per-user normalized features `[B, E, h, w]` through both stages.
/// Scenario `b` uses `channels[b]` and noise seed `seeds[b]`.
pub(crate) fn transmit(feats: &[Tensor], plan: &ResourcePlan, channels: &[ChannelMatrix], noise: &NoiseSpec, seeds: &[u64]) -> Result<Received> {
    let k = plan.users;
    let b = feats[0].batch();
    let plane = plan.h_feat * plan.w_feat;
    let (p, c) = (plan.private, plan.common);
    let mut common: Vec<Tensor> = (0..k).map(|_| Tensor::zeros(b, c, plan.h_feat, plan.w_feat)).collect();
    let mut prompts: Vec<Vec<Tensor>> = (0..k).map(|_| (0..k).map(|_| Tensor::zeros(b, p, plan.h_feat, plan.w_feat)).collect()).collect();
    for s in 0..b {
        let h = &channels[s];
        if c > 0 {
            let rows: Vec<Vec<f32>> = feats.iter().map(|f| f.sample(s)[p * plane..].to_vec()).collect();
            let y = st_stage(h, &SignalBlock::from_rows(&rows, StageTag::Common)?, noise, seeds[s])?;
            for (rx, t) in common.iter_mut().enumerate() {
                t.sample_mut(s).copy_from_slice(y.row(rx));
            }
        }
        if p > 0 {
            let privates: Vec<Vec<f32>> = feats.iter().map(|f| f.sample(s)[..p * plane].to_vec()).collect();
            let blocks = ob_stage(h, &privates, noise, seeds[s])?;
            for (j, block) in blocks.iter().enumerate() {
                for (rx, row) in prompts.iter_mut().enumerate() {
                    row[j].sample_mut(s).copy_from_slice(block.row(rx));
                }
            }
        }
    }
    Ok(Received { common, prompts })
}

/// Reverse of [`transmit`]: gradients on received parts to gradients on each
/// user's features. Noise is additive, so only the gains matter.
pub(crate) fn transmit_backward(g: &Received, plan: &ResourcePlan, channels: &[ChannelMatrix]) -> Vec<Tensor> {
    let k = plan.users;
    let b = channels.len();
    let plane = plan.h_feat * plan.w_feat;
    let p = plan.private;
    let mut out: Vec<Tensor> = (0..k).map(|_| Tensor::zeros(b, plan.layers, plan.h_feat, plan.w_feat)).collect();
    for s in 0..b {
        for tx in 0..k {
            let dst = out[tx].sample_mut(s);
            for rx in 0..k {
                let gain = channels[s].gain(rx, tx) as f32;
                if gain == 0.0 {
                    continue;
                }
                if plan.common > 0 {
                    for (d, v) in dst[p * plane..].iter_mut().zip(g.common[rx].sample(s)) {
                        *d += gain * v;
                    }
                }
                if p > 0 {
                    for (d, v) in dst[..p * plane].iter_mut().zip(g.prompts[rx][tx].sample(s)) {
                        *d += gain * v;
                    }
                }
            }
        }
    }
    out
}

/// Assembled separator inputs for the given receivers, stacked receiver-major.
pub(crate) fn assemble_receivers(rx: &Received, receivers: &[usize], plan: &ResourcePlan) -> Result<Tensor> {
    let parts = receivers
        .iter()
        .map(|&k| assemble_input(&rx.common[k], &rx.prompts[k], plan).map(|a| a.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::concat_batch(&parts.iter().collect::<Vec<_>>()))
}

/// Receiver `k`'s own slice of a `[.., K·C, ..]` prediction.
pub(crate) fn own_common(pred: &Tensor, k: usize, common: usize) -> Tensor {
    pred.channel_range(k * common, (k + 1) * common)
}

/// Copies samples at `idx` into a new batch.
pub(crate) fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let [_, c, h, w] = t.shape();
    let mut data = Vec::with_capacity(idx.len() * t.sample_len());
    for &i in idx {
        data.extend_from_slice(t.sample(i));
    }
    Tensor::from_vec(idx.len(), c, h, w, data)
}

/// Per-user images or features split from a user-major stack `[K·B, ..]`.
pub(crate) fn unstack(t: &Tensor, users: usize) -> Vec<Tensor> {
    let b = t.batch() / users;
    (0..users).map(|k| t.samples(k * b..(k + 1) * b)).collect()
}

/// How receiver 1 obtains its common estimate at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeparatorMode {
    /// Trained generator output.
    Generator,
    /// Raw received common part, no separation.
    Passthrough,
    /// Oracle: the transmitted common part itself.
    TrueCommon,
}

/// Reconstructions for receiver `k` of every scenario in the batch.
pub(crate) fn receive(
    codec: &SemanticCodec,
    generator: Option<&Generator>,
    plan: &ResourcePlan,
    rx: &Received,
    feats: &[Tensor],
    k: usize,
    mode: SeparatorMode,
) -> Result<Tensor> {
    let own_prompt = &rx.prompts[k][k];
    let b = own_prompt.batch();
    let common_hat = if plan.common == 0 {
        Tensor::zeros(b, 0, plan.h_feat, plan.w_feat)
    } else {
        match mode {
            SeparatorMode::Passthrough => rx.common[k].clone(),
            SeparatorMode::TrueCommon => feats[k].channel_range(plan.private, plan.layers),
            SeparatorMode::Generator => {
                let g = generator.ok_or_else(|| crate::Error::PhaseOrderViolation("separator not trained".into()))?;
                let input = assemble_receivers(rx, &[k], plan)?;
                own_common(&g.net.infer(&input), k, plan.common)
            }
        }
    };
    codec.decode_batch(&merge(&common_hat, own_prompt, plan)?)
}
