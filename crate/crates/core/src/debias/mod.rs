//! Adversarial debiasing of embeddings.
//!
//! A trunk `M` maps `d` features to `d/2`. An identity head classifies the
//! trunk output into training subjects. An attribute head sits behind a
//! gradient reversal layer and classifies it into subgroups. One backward pass
//! therefore gives the trunk `∇L_ID − λ∇L_ATT` while each head descends its
//! own loss.
//!
//! `M` ends in an L2 normalization onto a sphere of radius [`TRUNK_RADIUS`].
//! The trunk maximizes a cross-entropy through the reversal layer, and on
//! unbounded features it can do so by inflating their norm until training
//! diverges. On the sphere the heads alone control logit scale.

mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    load_checkpoint, save_checkpoint, softmax_xent, Dense, GradientReversal, L2Normalize, Layer, Mode, Param,
    Parameterized, Relu, Sequential, Tensor2,
};
use crate::rng::{seeded, Rng, Stream};
use crate::scalar::Scalar;

pub use train::{
    embed_set, export_debiased, select_checkpoint, split_validation, train, train_fold,
    write_epoch_csv, Checkpoint, EpochLog, FoldRun, LabeledBatch, TrainConfig, TrainOutcome,
    ValidationSplit, EPOCH_CSV_HEADER,
};

/// Architecture summary stored next to checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebiasShape {
    pub input_dim: usize,
    pub output_dim: usize,
    pub identities: usize,
    pub subgroups: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebiasModel<S> {
    trunk: Sequential<S>,
    identity: Sequential<S>,
    attribute: Sequential<S>,
    shape: DebiasShape,
}

/// Per-batch losses and hit counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss<S> {
    pub l_id: S,
    pub l_att: S,
    pub id_correct: usize,
    pub att_correct: usize,
}

/// Parameter groups of the debias graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Trunk,
    Identity,
    Attribute,
}

/// Radius of the sphere the trunk projects onto. Bounded features keep the
/// reversed attribute loss from growing without limit.
pub const TRUNK_RADIUS: f64 = 8.0;

/// `M = dense(d→d) + ReLU + dense(d→d/2) + radius-r L2 normalization`, `C_ID = dense(d/2→I)`,
/// `C_ATT = GRL(λ) + dense(d/2→K)`, Glorot-initialised from `seed`.
pub fn build_model<S: Scalar>(d: usize, identities: usize, subgroups: usize, lambda: f64, seed: u64) -> Result<DebiasModel<S>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::InvalidArgument(format!("input dimension must be even and positive, got {d}")));
    }
    if identities < 2 || subgroups < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 identities and 2 subgroups, got {identities} and {subgroups}"
        )));
    }
    let mut rng = seeded(seed, Stream::Init);
    let half = d / 2;
    let trunk = Sequential::new(vec![
        Layer::Dense(Dense::glorot(d, d, &mut rng)),
        Layer::Relu(Relu::new()),
        Layer::Dense(Dense::glorot(d, half, &mut rng)),
        Layer::Normalize(L2Normalize::new(S::of(TRUNK_RADIUS))?),
    ]);
    let identity = Sequential::new(vec![Layer::Dense(Dense::glorot(half, identities, &mut rng))]);
    let attribute = Sequential::new(vec![
        Layer::Reversal(GradientReversal::new(S::of(lambda))?),
        Layer::Dense(Dense::glorot(half, subgroups, &mut rng)),
    ]);
    Ok(DebiasModel {
        trunk,
        identity,
        attribute,
        shape: DebiasShape {
            input_dim: d,
            output_dim: half,
            identities,
            subgroups,
            lambda,
        },
    })
}

impl<S: Scalar> DebiasModel<S> {
    pub fn shape(&self) -> DebiasShape {
        self.shape
    }

    pub fn trunk(&self) -> &Sequential<S> {
        &self.trunk
    }

    pub fn identity_head(&self) -> &Sequential<S> {
        &self.identity
    }

    pub fn attribute_head(&self) -> &Sequential<S> {
        &self.attribute
    }

    /// Replaces λ in the reversal layer.
    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        let grl = GradientReversal::new(S::of(lambda))?;
        for layer in self.attribute.layers_mut() {
            if let Layer::Reversal(g) = layer {
                *g = grl;
            }
        }
        self.shape.lambda = lambda;
        Ok(())
    }

    /// Eval-mode trunk output `f_deb = M(x)`.
    pub fn embed(&self, x: &Tensor2<S>) -> Result<Tensor2<S>> {
        x.expect_shape("debias embed", (x.rows(), self.shape.input_dim))?;
        self.trunk.infer(x)
    }

    fn check_labels(&self, x: &Tensor2<S>, ids: &[usize], atts: &[usize]) -> Result<()> {
        x.expect_shape("debias batch", (x.rows(), self.shape.input_dim))?;
        if ids.len() != x.rows() || atts.len() != x.rows() {
            return Err(Error::ShapeMismatch {
                op: "debias batch labels",
                expected: format!("{} labels", x.rows()),
                found: format!("{} identity, {} attribute", ids.len(), atts.len()),
            });
        }
        Ok(())
    }

    /// Losses without touching caches or gradients.
    pub fn evaluate(&self, x: &Tensor2<S>, ids: &[usize], atts: &[usize]) -> Result<BatchLoss<S>> {
        self.check_labels(x, ids, atts)?;
        let h = self.trunk.infer(x)?;
        let id = softmax_xent(&self.identity.infer(&h)?, ids)?;
        let att = softmax_xent(&self.attribute.infer(&h)?, atts)?;
        Ok(BatchLoss {
            l_id: id.loss,
            l_att: att.loss,
            id_correct: id.correct,
            att_correct: att.correct,
        })
    }

    /// Forward and backward pass on one batch, accumulating gradients.
    pub fn forward_backward(
        &mut self,
        x: &Tensor2<S>,
        ids: &[usize],
        atts: &[usize],
        rng: &mut Rng,
    ) -> Result<BatchLoss<S>> {
        self.check_labels(x, ids, atts)?;
        let h = self.trunk.forward(x, Mode::Train, rng)?;
        let id = softmax_xent(&self.identity.forward(&h, Mode::Train, rng)?, ids)?;
        let att = softmax_xent(&self.attribute.forward(&h, Mode::Train, rng)?, atts)?;
        let mut grad_h = self.identity.backward(&id.grad)?;
        grad_h.add_assign(&self.attribute.backward(&att.grad)?)?;
        self.trunk.backward(&grad_h)?;
        Ok(BatchLoss {
            l_id: id.loss,
            l_att: att.loss,
            id_correct: id.correct,
            att_correct: att.correct,
        })
    }

    /// Parameters of the chosen groups, in trunk, identity, attribute order.
    pub fn group_params(&mut self, groups: &[ParamGroup]) -> Vec<Param<'_, S>> {
        let mut out = Vec::new();
        if groups.contains(&ParamGroup::Trunk) {
            out.extend(self.trunk.params());
        }
        if groups.contains(&ParamGroup::Identity) {
            out.extend(self.identity.params());
        }
        if groups.contains(&ParamGroup::Attribute) {
            out.extend(self.attribute.params());
        }
        out
    }

    pub fn save(&self, path: &Path, sidecar: &impl Serialize) -> Result<()> {
        save_checkpoint(
            path,
            &[
                ("trunk", &self.trunk),
                ("identity", &self.identity),
                ("attribute", &self.attribute),
            ],
            sidecar,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let nets = load_checkpoint::<S>(path)?;
        let bad = |m: &str| Error::format(path.display().to_string(), m.to_string());
        let [(n0, trunk), (n1, identity), (n2, attribute)]: [(String, Sequential<S>); 3] =
            nets.try_into().map_err(|_| bad("expected three networks"))?;
        if (n0.as_str(), n1.as_str(), n2.as_str()) != ("trunk", "identity", "attribute") {
            return Err(bad("expected networks trunk, identity, attribute"));
        }
        let lambda = attribute
            .layers()
            .iter()
            .find_map(|l| match l {
                Layer::Reversal(g) => Some(g.lambda().as_f64()),
                _ => None,
            })
            .ok_or_else(|| bad("attribute head lacks a gradient reversal layer"))?;
        let width = |s: &Sequential<S>| s.input_width().zip(s.output_width());
        let (d, half) = width(&trunk).ok_or_else(|| bad("trunk has no dense layer"))?;
        let (_, identities) = width(&identity).ok_or_else(|| bad("identity head has no dense layer"))?;
        let (_, subgroups) = width(&attribute).ok_or_else(|| bad("attribute head has no dense layer"))?;
        Ok(Self {
            trunk,
            identity,
            attribute,
            shape: DebiasShape {
                input_dim: d,
                output_dim: half,
                identities,
                subgroups,
                lambda,
            },
        })
    }
}

impl<S: Scalar> Parameterized<S> for DebiasModel<S> {
    fn params(&mut self) -> Vec<Param<'_, S>> {
        self.group_params(&[ParamGroup::Trunk, ParamGroup::Identity, ParamGroup::Attribute])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradient_check, GradCheckConfig};
    use rand::Rng as _;

    fn batch(rows: usize, d: usize, ids: usize, k: usize, seed: u64) -> (Tensor2<f64>, Vec<usize>, Vec<usize>) {
        let mut rng = seeded(seed, Stream::Labels);
        let x = Tensor2::new(rows, d, (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a = (0..rows).map(|r| r % ids).collect();
        let b = (0..rows).map(|r| (r / 2) % k).collect();
        (x, a, b)
    }

    fn dummy() -> Rng {
        seeded(0, Stream::Dropout)
    }

    #[test]
    fn shapes() {
        let m = build_model::<f64>(64, 128, 8, 1.0, 0).unwrap();
        assert_eq!(m.trunk().output_width(), Some(32));
        assert_eq!(m.identity_head().input_width(), Some(32));
        assert_eq!(m.identity_head().output_width(), Some(128));
        assert_eq!(m.attribute_head().output_width(), Some(8));
        let big = build_model::<f64>(512, 640, 8, 1.0, 0).unwrap();
        assert_eq!(big.trunk().output_width(), Some(256));
        assert!(build_model::<f64>(63, 10, 8, 1.0, 0).is_err());
    }

    #[test]
    fn same_seed_same_init() {
        assert_eq!(
            build_model::<f64>(16, 5, 3, 1.0, 7).unwrap(),
            build_model::<f64>(16, 5, 3, 1.0, 7).unwrap()
        );
        assert_ne!(
            build_model::<f64>(16, 5, 3, 1.0, 7).unwrap(),
            build_model::<f64>(16, 5, 3, 1.0, 8).unwrap()
        );
    }

    #[test]
    fn attribute_grads_do_not_depend_on_lambda() {
        let (x, ids, atts) = batch(12, 10, 4, 3, 1);
        let grads = |lambda: f64| {
            let mut m = build_model::<f64>(10, 4, 3, lambda, 2).unwrap();
            m.forward_backward(&x, &ids, &atts, &mut dummy()).unwrap();
            let att: Vec<Vec<f64>> = m.group_params(&[ParamGroup::Attribute]).iter().map(|p| p.grad.to_vec()).collect();
            let id: Vec<Vec<f64>> = m.group_params(&[ParamGroup::Identity]).iter().map(|p| p.grad.to_vec()).collect();
            let trunk: Vec<Vec<f64>> = m.group_params(&[ParamGroup::Trunk]).iter().map(|p| p.grad.to_vec()).collect();
            (att, id, trunk)
        };
        let (a1, i1, t1) = grads(1.0);
        let (a5, i5, t5) = grads(5.0);
        assert_eq!(a1, a5);
        assert_eq!(i1, i5);
        assert_ne!(t1, t5);
    }

    /// Checks the trunk and identity head against `L_ID − λL_ATT`, and the
    /// attribute head against `L_ATT`.
    struct Groups<'a> {
        model: &'a mut DebiasModel<f64>,
        groups: &'a [ParamGroup],
    }

    impl Parameterized<f64> for Groups<'_> {
        fn params(&mut self) -> Vec<Param<'_, f64>> {
            self.model.group_params(self.groups)
        }
    }

    #[test]
    fn reversed_graph_matches_finite_differences() {
        let (x, ids, atts) = batch(10, 8, 5, 3, 3);
        let lambda = 0.7;
        let mut m = build_model::<f64>(8, 5, 3, lambda, 4).unwrap();
        let config = GradCheckConfig {
            samples_per_tensor: 50,
            ..GradCheckConfig::default()
        };
        let composite = |g: &mut Groups<'_>, with_grad: bool| {
            let l = if with_grad {
                g.model.zero_grad();
                g.model.forward_backward(&x, &ids, &atts, &mut dummy())?
            } else {
                g.model.evaluate(&x, &ids, &atts)?
            };
            Ok(l.l_id - lambda * l.l_att)
        };
        let report = gradient_check(
            &mut Groups {
                model: &mut m,
                groups: &[ParamGroup::Trunk, ParamGroup::Identity],
            },
            composite,
            config,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
        let report = gradient_check(
            &mut Groups {
                model: &mut m,
                groups: &[ParamGroup::Attribute],
            },
            |g, with_grad| {
                let l = if with_grad {
                    g.model.zero_grad();
                    g.model.forward_backward(&x, &ids, &atts, &mut dummy())?
                } else {
                    g.model.evaluate(&x, &ids, &atts)?
                };
                Ok(l.l_att)
            },
            config,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fvnn");
        let m = build_model::<f64>(8, 5, 3, 2.5, 4).unwrap();
        m.save(&path, &m.shape()).unwrap();
        assert_eq!(DebiasModel::<f64>::load(&path).unwrap(), m);
    }
}
