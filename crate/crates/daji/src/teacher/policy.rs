//! Actor-critic with a privileged encoder. The actor consumes
//! proprioception, the reference stack and the encoded privileged
//! feature; the critic additionally sees the raw privileged vector.

use serde::{Deserialize, Serialize};

use crate::numerics::nn::{apply_mlp, insert_mlp, Activation, BoundParams, ParamStore};
use crate::numerics::{AdamState, Array, RngStream, Tape, Tensor};
use crate::sim::{priv_width, prop_width, OffsetSet, N_JOINTS};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub hidden: usize,
    pub priv_feature: usize,
    pub log_std_init: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig { hidden: 128, priv_feature: 16, log_std_init: -1.2 }
    }
}

#[derive(Debug, Clone)]
pub struct TeacherPolicy {
    pub params: ParamStore,
    pub opt: AdamState,
    pub config: TeacherConfig,
    pub offsets: OffsetSet,
    /// Added to the actor output so the initial policy holds the nominal
    /// crouch instead of pulling every joint to zero.
    pub action_bias: [f64; N_JOINTS],
}

impl TeacherPolicy {
    pub fn new(config: TeacherConfig, offsets: OffsetSet, action_bias: [f64; N_JOINTS], seed: u64) -> Self {
        let mut rng = RngStream::new(seed, 11);
        let mut params = ParamStore::new();
        let p = prop_width();
        let r = offsets.ref_width();
        let v = priv_width();
        let h = config.hidden;
        let f = config.priv_feature;
        insert_mlp(&mut params, "priv", &[v, h, f], &mut rng);
        insert_mlp(&mut params, "actor", &[p + r + f, h, h, N_JOINTS], &mut rng);
        insert_mlp(&mut params, "critic", &[p + r + f + v, h, h, 1], &mut rng);
        // Small initial actor head: start near the bias action.
        for w in params.get_mut("actor.2.w").data.iter_mut() {
            *w *= 0.01;
        }
        params.insert("log_std", Array { shape: vec![N_JOINTS], data: vec![config.log_std_init; N_JOINTS] });
        let opt = AdamState::new(params.arrays());
        TeacherPolicy { params, opt, config, offsets, action_bias }
    }

    pub fn actor_input_width(&self) -> usize {
        prop_width() + self.offsets.ref_width() + self.config.priv_feature
    }

    /// Batched forward pass. Inputs are [B, width] leaves on `tape`;
    /// returns (action mean [B, 6], log_std [6], value [B, 1]).
    pub fn forward(&self, tape: &Tape, bp: &BoundParams, prop: &Tensor, reference: &Tensor, privileged: &Tensor) -> (Tensor, Tensor, Tensor) {
        let feat = apply_mlp(bp, "priv", privileged, 2, Activation::Elu);
        let actor_in = Tensor::concat_last(&[prop.clone(), reference.clone(), feat]);
        let mean_raw = apply_mlp(bp, "actor", &actor_in, 3, Activation::Elu);
        let bias = tape.leaf(&Array { shape: vec![N_JOINTS], data: self.action_bias.to_vec() });
        let mean = mean_raw.add(&bias);
        let log_std = bp.get("log_std").clamp(-4.0, 1.0);
        let critic_in = Tensor::concat_last(&[actor_in, privileged.clone()]);
        let value = apply_mlp(bp, "critic", &critic_in, 3, Activation::Elu);
        (mean, log_std, value)
    }

    /// Deterministic action (Gaussian mean) for a single observation.
    pub fn act_mean(&self, prop: &[f64], reference: &[f64], privileged: &[f64]) -> [f64; N_JOINTS] {
        let tape = Tape::new();
        let bp = BoundParams::bind(&tape, &self.params);
        let p = tape.leaf(&Array { shape: vec![1, prop.len()], data: prop.to_vec() });
        let r = tape.leaf(&Array { shape: vec![1, reference.len()], data: reference.to_vec() });
        let v = tape.leaf(&Array { shape: vec![1, privileged.len()], data: privileged.to_vec() });
        let (mean, _, _) = self.forward(&tape, &bp, &p, &r, &v);
        let mut out = [0.0; N_JOINTS];
        out.copy_from_slice(&mean.value().data);
        out
    }
}

/// Diagonal-Gaussian log density summed over action dims, per row.
pub(crate) fn gaussian_log_prob(actions: &Tensor, mean: &Tensor, log_std: &Tensor) -> Tensor {
    let std = log_std.exp();
    let z = actions.sub(mean).div(&std);
    z.square()
        .scale(-0.5)
        .sub(log_std)
        .add_scalar(-0.5 * (2.0 * std::f64::consts::PI).ln())
        .sum_last()
}

/// Gaussian entropy per row: Σ(log σ + ½ ln 2πe).
pub(crate) fn gaussian_entropy(log_std: &Tensor) -> Tensor {
    log_std.add_scalar(0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln())).sum_last()
}
