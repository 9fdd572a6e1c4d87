use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{he_uniform, NetworkPlan, GN_EPS};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Parameters are trainable leaves.
    Train,
    /// Parameters are constants; forward passes record no graph.
    Infer,
}

/// Parameters of a network built from a plan, in a fixed order with
/// stable names.
#[derive(Debug, Clone)]
pub struct Network {
    plan: NetworkPlan,
    names: Vec<String>,
    params: Vec<Tensor>,
    index: HashMap<String, usize>,
    mode: Mode,
}

struct Builder<'a> {
    rng: &'a mut rng::Prng,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        self.names.push(format!("{name}.weight"));
        self.params.push(he_uniform(self.rng, &[cout, cin, k, k, k]));
        self.names.push(format!("{name}.bias"));
        self.params.push(Tensor::param(&[cout], vec![0.0; cout]).expect("non-empty"));
    }

    fn norm(&mut self, name: &str, c: usize) {
        self.names.push(format!("{name}.gain"));
        self.params.push(Tensor::param(&[c], vec![1.0; c]).expect("non-empty"));
        self.names.push(format!("{name}.bias"));
        self.params.push(Tensor::param(&[c], vec![0.0; c]).expect("non-empty"));
    }
}

/// Builds a network with weights drawn from the `INIT` stream of `seed`.
pub fn build_network(plan: &NetworkPlan, seed: u64) -> Result<Network> {
    plan.validate()?;
    let mut rng = rng::stream(seed, rng::INIT);
    let mut b = Builder {
        rng: &mut rng,
        names: Vec::new(),
        params: Vec::new(),
    };
    let w = plan.widths();
    let mut cin = plan.input_modalities;
    for (l, &c) in w.iter().enumerate() {
        for i in 0..plan.convs_per_stage {
            b.conv(&format!("enc.{l}.conv{i}"), if i == 0 { cin } else { c }, c, 3);
            b.norm(&format!("enc.{l}.norm{i}"), c);
        }
        cin = c;
    }
    for l in (1..w.len()).rev() {
        let c = w[l - 1];
        b.conv(&format!("dec.{l}.up"), w[l], c, 3);
        b.norm(&format!("dec.{l}.upnorm"), c);
        for i in 0..plan.convs_per_stage {
            b.conv(&format!("dec.{l}.conv{i}"), if i == 0 { 2 * c } else { c }, c, 3);
            b.norm(&format!("dec.{l}.norm{i}"), c);
        }
    }
    b.conv("head", w[0], plan.num_classes, 1);
    let (names, params) = (b.names, b.params);
    Ok(Network::assemble(plan.clone(), names, params, Mode::Train))
}

impl Network {
    fn assemble(plan: NetworkPlan, names: Vec<String>, params: Vec<Tensor>, mode: Mode) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self {
            plan,
            names,
            params,
            index,
            mode,
        }
    }

    pub fn plan(&self) -> &NetworkPlan {
        &self.plan
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.params.iter().cloned()).collect()
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.names
            .iter()
            .zip(&self.params)
            .map(|(n, p)| (n.clone(), p.shape().to_vec()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| Error::Internal(format!("no parameter named {name}")))
    }

    /// Same network with replacement tensors (same order and shapes).
    pub fn with_params(&self, params: Vec<Tensor>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::Internal(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((n, old), new) in self.names.iter().zip(&self.params).zip(&params) {
            if old.shape() != new.shape() {
                return Err(Error::Checkpoint(format!(
                    "{n}: expected shape {:?}, got {:?}",
                    old.shape(),
                    new.shape()
                )));
            }
        }
        Ok(Self::assemble(self.plan.clone(), self.names.clone(), params, self.mode))
    }

    /// Constant copy for frozen use.
    pub fn frozen(&self) -> Self {
        let params = self.params.iter().map(Tensor::detach).collect();
        Self::assemble(self.plan.clone(), self.names.clone(), params, Mode::Infer)
    }

    /// Fresh trainable leaves sharing the current values.
    pub fn trainable(&self) -> Self {
        let params = self.params.iter().map(Tensor::detach_param).collect();
        Self::assemble(self.plan.clone(), self.names.clone(), params, Mode::Train)
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for (n, p) in self.names.iter().zip(&self.params) {
            h.update(n.as_bytes());
            for &d in p.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn conv_norm_relu(&self, x: &Tensor, conv: &str, norm: &str, stride: usize) -> Result<Tensor> {
        let w = self.get(&format!("{conv}.weight"))?;
        let pad = w.shape()[2] / 2;
        let y = x.conv3d(w, Some(self.get(&format!("{conv}.bias"))?), [stride; 3], [pad; 3])?;
        self.norm(&y, norm).map(|t| t.relu())
    }

    fn norm(&self, y: &Tensor, norm: &str) -> Result<Tensor> {
        let c = y.shape()[1];
        y.group_norm(
            c,
            self.get(&format!("{norm}.gain"))?,
            self.get(&format!("{norm}.bias"))?,
            GN_EPS,
        )
    }
}

fn check_input(net: &Network, x: &Tensor) -> Result<()> {
    let plan = net.plan();
    let s = x.shape();
    if s.len() != 5 || s[1] != plan.input_modalities {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: s.to_vec(),
            rhs: vec![s.first().copied().unwrap_or(1), plan.input_modalities, 0, 0, 0],
        });
    }
    plan.check_input([s[2], s[3], s[4]])
}

/// Output of every encoder stage (after its blocks, before the next
/// stage's downsampling) for a `[N, M, D, H, W]` input.
pub fn encoder_taps(net: &Network, x: &Tensor) -> Result<Vec<Tensor>> {
    check_input(net, x)?;
    let plan = net.plan();
    let mut taps: Vec<Tensor> = Vec::with_capacity(plan.num_stages());
    let mut h = x.clone();
    for l in 0..plan.num_stages() {
        h = net.conv_norm_relu(&h, &format!("enc.{l}.conv0"), &format!("enc.{l}.norm0"), plan.strides[l])?;
        for i in 1..plan.convs_per_stage {
            if plan.residual_encoder {
                let w = net.get(&format!("enc.{l}.conv{i}.weight"))?;
                let b = net.get(&format!("enc.{l}.conv{i}.bias"))?;
                let y = net.norm(&h.conv3d(w, Some(b), [1; 3], [1; 3])?, &format!("enc.{l}.norm{i}"))?;
                h = h.add(&y)?.relu();
            } else {
                h = net.conv_norm_relu(&h, &format!("enc.{l}.conv{i}"), &format!("enc.{l}.norm{i}"), 1)?;
            }
        }
        taps.push(h.clone());
    }
    Ok(taps)
}

/// Logits `[N, K, D, H, W]` and the encoder taps.
pub fn forward_with_taps(net: &Network, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    let plan = net.plan();
    let taps = encoder_taps(net, x)?;
    let mut h = taps[taps.len() - 1].clone();
    for l in (1..plan.num_stages()).rev() {
        let f = plan.strides[l];
        let up = net.get(&format!("dec.{l}.up.weight"))?;
        let upb = net.get(&format!("dec.{l}.up.bias"))?;
        let u = net.norm(&h.upsample_conv3d([f; 3], up, Some(upb))?, &format!("dec.{l}.upnorm"))?.relu();
        h = Tensor::concat(&[u, taps[l - 1].clone()], 1)?;
        for i in 0..plan.convs_per_stage {
            h = net.conv_norm_relu(&h, &format!("dec.{l}.conv{i}"), &format!("dec.{l}.norm{i}"), 1)?;
        }
    }
    let logits = h.conv3d(net.get("head.weight")?, Some(net.get("head.bias")?), [1; 3], [0; 3])?;
    Ok((logits, taps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{count_params_flops, derive_student_plan};

    fn plan() -> NetworkPlan {
        NetworkPlan {
            channels: vec![8, 16],
            width_factor: 0,
            c_min: 4,
            residual_encoder: true,
            input_modalities: 1,
            num_classes: 3,
            convs_per_stage: 2,
            strides: vec![1, 2],
        }
    }

    #[test]
    fn output_and_tap_shapes() {
        let net = build_network(&plan(), 0).unwrap();
        let x = Tensor::full(&[1, 1, 16, 16, 16], 0.5);
        let (y, taps) = forward_with_taps(&net, &x).unwrap();
        assert_eq!(y.shape(), &[1, 3, 16, 16, 16]);
        assert_eq!(taps[0].shape(), &[1, 8, 16, 16, 16]);
        assert_eq!(taps[1].shape(), &[1, 16, 8, 8, 8]);
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert!(forward_with_taps(&net, &Tensor::zeros(&[1, 1, 5, 8, 8])).is_err());
    }

    #[test]
    fn deterministic_hash() {
        let a = build_network(&plan(), 5).unwrap();
        assert_eq!(a.param_hash(), build_network(&plan(), 5).unwrap().param_hash());
        assert_ne!(a.param_hash(), build_network(&plan(), 6).unwrap().param_hash());
    }

    #[test]
    fn analytic_params_match_built_network() {
        for t in 0..4 {
            for residual in [false, true] {
                let mut p = derive_student_plan(&plan(), t, 4);
                p.residual_encoder = residual;
                let net = build_network(&p, 0).unwrap();
                let c = count_params_flops(&p, [8, 8, 8]).unwrap();
                assert_eq!(c.params as usize, net.num_params(), "t={t}");
            }
        }
    }

    #[test]
    fn frozen_network_records_no_graph() {
        let net = build_network(&plan(), 0).unwrap().frozen();
        let (y, _) = forward_with_taps(&net, &Tensor::full(&[1, 1, 8, 8, 8], 1.0)).unwrap();
        assert!(!y.requires_grad());
        assert_eq!(net.mode(), Mode::Infer);
    }
}
