use rand::Rng;

use crate::diffcore::{ConvMode, DiffError, Graph, Tensor, Var};
use crate::params::{init_weight, BoundParams, ParamId, ParamStore};

struct GatedLayer {
    dil_w: ParamId,
    dil_b: ParamId,
    res_skip_w: ParamId,
    res_skip_b: ParamId,
    dilation: usize,
}

/// Non-causal gated dilated-convolution stack that maps the conditioning
/// half of the channels to `(raw log-scale, shift)` for the other half.
pub(super) struct Conditioner {
    start_w: ParamId,
    start_b: ParamId,
    layers: Vec<GatedLayer>,
    end_w: ParamId,
    end_b: ParamId,
    half: usize,
    width: usize,
    kernel: usize,
}

impl Conditioner {
    pub(super) fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        half: usize,
        width: usize,
        n_layers: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let start_w = store.add(format!("{prefix}.start.w"), init_weight(rng, width, half, half));
        let start_b = store.add(format!("{prefix}.start.b"), Tensor::zeros(width, 1));
        let layers = (0..n_layers)
            .map(|l| GatedLayer {
                dil_w: store.add(
                    format!("{prefix}.layer{l}.dil.w"),
                    init_weight(rng, 2 * width, width * kernel, width * kernel),
                ),
                dil_b: store.add(format!("{prefix}.layer{l}.dil.b"), Tensor::zeros(2 * width, 1)),
                res_skip_w: store.add(format!("{prefix}.layer{l}.rs.w"), init_weight(rng, 2 * width, width, width)),
                res_skip_b: store.add(format!("{prefix}.layer{l}.rs.b"), Tensor::zeros(2 * width, 1)),
                dilation: 1 << l,
            })
            .collect();
        // zero output layer: the coupling starts as the identity
        let end_w = store.add(format!("{prefix}.end.w"), Tensor::zeros(2 * half, width));
        let end_b = store.add(format!("{prefix}.end.b"), Tensor::zeros(2 * half, 1));
        Conditioner { start_w, start_b, layers, end_w, end_b, half, width, kernel }
    }

    /// Returns `(raw_log_scale, shift)`, each shaped like `x`.
    pub(super) fn forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<(Var, Var), DiffError> {
        let mut h = g.conv1d(x, p[self.start_w], Some(p[self.start_b]), 1, 1, ConvMode::Centered)?;
        let mut skip: Option<Var> = None;
        for layer in &self.layers {
            let a = g.conv1d(h, p[layer.dil_w], Some(p[layer.dil_b]), self.kernel, layer.dilation, ConvMode::Centered)?;
            let filt = g.select_rows(a, 0, 1, self.width)?;
            let gate = g.select_rows(a, self.width, 1, self.width)?;
            let filt = g.tanh(filt)?;
            let gate = g.sigmoid(gate)?;
            let z = g.mul(filt, gate)?;
            let rs = g.conv1d(z, p[layer.res_skip_w], Some(p[layer.res_skip_b]), 1, 1, ConvMode::Centered)?;
            let res = g.select_rows(rs, 0, 1, self.width)?;
            let sk = g.select_rows(rs, self.width, 1, self.width)?;
            h = g.add(h, res)?;
            skip = Some(match skip {
                Some(s) => g.add(s, sk)?,
                None => sk,
            });
        }
        let feat = skip.unwrap_or(h);
        let out = g.conv1d(feat, p[self.end_w], Some(p[self.end_b]), 1, 1, ConvMode::Centered)?;
        let log_s = g.select_rows(out, 0, 1, self.half)?;
        let shift = g.select_rows(out, self.half, 1, self.half)?;
        Ok((log_s, shift))
    }

    pub(super) fn end_params(&self) -> (ParamId, ParamId) {
        (self.end_w, self.end_b)
    }
}
