//! End-to-end gradient verification of a micro detector.

use super::{forward_graph, Fusion, ModelConfig, ModelParams};
use crate::autograd::Graph;
use crate::error::Result;
use crate::exec::Exec;
use crate::gradcheck::{finite_diff_grad_with, GradCheckReport};
use crate::mam::AttentionVariant;
use crate::rng::{derive_str, SeedRng};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckSetup {
    pub config: ModelConfig,
    pub frames: usize,
    pub audio_steps: usize,
    pub seed: u64,
    pub h: f64,
    pub min_h: f64,
    pub tolerance: f64,
    /// Take central differences in 64-bit arithmetic even when the analytic
    /// gradient comes from a narrower type.
    pub reference_f64: bool,
}

impl GradCheckSetup {
    /// One clip, four 8×8 frames, eight channels, width sixteen.
    pub fn micro(variant: AttentionVariant, fusion: Fusion) -> Self {
        GradCheckSetup {
            config: ModelConfig {
                frame_size: 8,
                channels: 8,
                audio_raw_dim: 4,
                audio_dim: 8,
                reduction: 4,
                bottleneck_reduction: 4,
                spa_hidden: 4,
                d_model: 16,
                heads: 4,
                ffn_hidden: 32,
                variant,
                fusion,
                ..ModelConfig::default()
            },
            frames: 4,
            audio_steps: 6,
            seed: 2024,
            h: 1e-3,
            min_h: 1e-9,
            tolerance: 1e-6,
            reference_f64: false,
        }
    }

    pub fn micro_f32(variant: AttentionVariant, fusion: Fusion) -> Self {
        GradCheckSetup {
            tolerance: 1e-3,
            reference_f64: true,
            ..Self::micro(variant, fusion)
        }
    }
}

fn inputs(setup: &GradCheckSetup) -> (Tensor<f64>, Tensor<f64>) {
    let cfg = &setup.config;
    let mut rng = SeedRng::new(derive_str(setup.seed, "gradcheck.inputs"));
    let f = cfg.frame_size;
    let v = Tensor::from_fn(&[1, setup.frames, cfg.in_channels, f, f], |_| rng.uniform(0.0, 1.0));
    let a = rng.normal_tensor(&[1, setup.audio_steps, cfg.audio_raw_dim], 1.0);
    (v, a)
}

fn loss_at<F: Real>(
    cfg: &ModelConfig,
    params: &ModelParams<Tensor<F>>,
    v: &Tensor<F>,
    a: &Tensor<F>,
    record: bool,
) -> Result<(Graph<F>, ModelParams<crate::autograd::Var>, crate::autograd::Var)> {
    let mut g = if record { Graph::<F>::new() } else { Graph::inference() };
    let pv = if record { params.bind(&mut g) } else { params.map(|_, t| g.constant(t.clone())) };
    let (vv, av) = (g.constant(v.clone()), g.constant(a.clone()));
    let out = forward_graph(&mut g, cfg, &pv, vv, av)?;
    let l = g.cross_entropy(out.logits, &[1])?;
    Ok((g, pv, l))
}

/// Compares the tape gradient of the cross-entropy loss with central
/// differences for every parameter tensor.
pub fn check_model_gradients<F: Real>(setup: &GradCheckSetup, exec: Exec) -> Result<GradCheckReport> {
    let cfg = setup.config;
    let p64 = ModelParams::<Tensor<f64>>::init_for_gradcheck(&cfg, setup.seed)?;
    let params: ModelParams<Tensor<F>> = p64.cast();
    let (v64, a64) = inputs(setup);
    let (v, a) = (v64.cast::<F>(), a64.cast::<F>());
    let (g, pv, l) = loss_at(&cfg, &params, &v, &a, true)?;
    let grads = g.backward(l)?;
    let mut report = GradCheckReport::new(setup.tolerance);
    let vars = pv.fields();
    for (k, (name, tensor)) in params.fields().into_iter().enumerate() {
        let analytic = grads.get(*vars[k].1).cloned().unwrap_or_else(|| Tensor::zeros(tensor.shape()));
        let numeric: Tensor<F> = if setup.reference_f64 {
            let base = params.cast::<f64>();
            let (v, a) = (v.cast::<f64>(), a.cast::<f64>());
            finite_diff_grad_with(
                exec,
                |t: &Tensor<f64>| {
                    let mut q = base.clone();
                    *q.get_mut(&name).expect("known name") = t.clone();
                    let (g, _, l) = loss_at(&cfg, &q, &v, &a, false).expect("valid micro model");
                    (g.value(l).item(), g.relu_signature())
                },
                &tensor.cast::<f64>(),
                setup.h,
                setup.min_h,
            )
            .cast()
        } else {
            finite_diff_grad_with(
                exec,
                |t: &Tensor<F>| {
                    let mut q = params.clone();
                    *q.get_mut(&name).expect("known name") = t.clone();
                    let (g, _, l) = loss_at(&cfg, &q, &v, &a, false).expect("valid micro model");
                    (g.value(l).item(), g.relu_signature())
                },
                tensor,
                setup.h,
                setup.min_h,
            )
        };
        report.record(&name, &analytic, &numeric);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_model_f64_gradients_match() {
        for (variant, fusion) in [
            (AttentionVariant::Sca, Fusion::Agm),
            (AttentionVariant::CparS, Fusion::Concat),
            (AttentionVariant::Csa, Fusion::VisualOnly),
        ] {
            let report = check_model_gradients::<f64>(&GradCheckSetup::micro(variant, fusion), Exec::Parallel).unwrap();
            assert!(report.passed(), "{variant} {fusion}\n{report}");
        }
    }

    #[test]
    fn micro_model_f32_gradients_match() {
        let setup = GradCheckSetup::micro_f32(AttentionVariant::Sca, Fusion::Agm);
        let report = check_model_gradients::<f32>(&setup, Exec::Parallel).unwrap();
        println!("{report}");
        assert!(report.passed(), "{report}");
    }
}
