//! Complex Elman RNN whose hidden-to-hidden weight is a mesh.

mod checkpoint;
mod model;
pub mod ops;
mod optim;
pub(crate) mod oracle;

pub use checkpoint::{read_model, write_model};
pub use model::{
    EpisodeTrace, GradPath, LearningRates, OptimizerState, RnnConfig, RnnGradients, RnnModel,
    StepStats,
};
pub use ops::{modrelu, modrelu_backward, power, power_backward, softmax_cross_entropy};
pub use optim::{RmsProp, RmsPropConfig};
pub use oracle::tape_gradients;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{normwise_rel_error, oracle_agreement};
    use crate::error::Error;
    use crate::linalg::{ComplexMatrix, RealMatrix};
    use crate::mesh::{mesh_to_matrix, BasicUnit};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_config(seed: u64) -> RnnConfig {
        RnnConfig {
            hidden: 4,
            output: 3,
            layers: 4,
            batch: 5,
            seed,
            ..RnnConfig::default()
        }
    }

    fn pixels(steps: usize, batch: usize, seed: u64) -> RealMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..steps * batch)
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        RealMatrix::from_vec(steps, batch, data).unwrap()
    }

    /// A model with every parameter group away from zero so all gradient
    /// paths are exercised.
    fn perturbed_model(config: RnnConfig) -> RnnModel {
        let mut model = RnnModel::new(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for b in model.b_in_mut() {
            *b = Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        }
        for b in model.b_out_mut() {
            *b = Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        }
        for b in model.b_act_mut() {
            *b = rng.random_range(-0.2..0.2);
        }
        model
    }

    #[test]
    fn dead_activation_gives_bias_logits() {
        let mut model = RnnModel::new(toy_config(1)).unwrap();
        model.w_in_mut().fill(Complex64::new(0.0, 0.0));
        model.b_act_mut().fill(-0.5);
        model.b_out_mut()[0] = Complex64::new(1.0, 1.0);
        let x = pixels(1, 2, 3);
        let mut trace = EpisodeTrace::new(&model, 1, 2);
        let logits = model.forward(&x, &mut trace).unwrap();
        assert_eq!(logits.row(0), &[2.0, 2.0]);
        assert_eq!(logits.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn mesh_preserves_hidden_norm_each_step() {
        let model = perturbed_model(toy_config(2));
        let x = pixels(6, 3, 4);
        let mut trace = EpisodeTrace::new(&model, 6, 3);
        model.forward(&x, &mut trace).unwrap();
        for t in 1..6 {
            let ws = trace.workspace(t);
            let input = ws.slot(0).unwrap();
            let output = ws.slot(model.mesh().num_sweep_layers()).unwrap();
            for c in 0..3 {
                assert!((input.column_norm(c) - output.column_norm(c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fused_matches_tape_on_toy() {
        for (unit, diag) in [(BasicUnit::Psdc, true), (BasicUnit::Dcps, false)] {
            let config = RnnConfig {
                basic_unit: unit,
                with_diag: diag,
                ..toy_config(5)
            };
            let model = perturbed_model(config);
            let x = pixels(3, 5, 6);
            let labels = [0, 2, 1, 1, 0];
            let mut trace = EpisodeTrace::new(&model, 3, 5);
            let (fs, fg) = model.fused_gradients(&x, &labels, &mut trace).unwrap();
            let (ts, tg) = tape_gradients(&model, &x, &labels).unwrap();
            assert!((fs.loss - ts.loss).abs() < 1e-13);
            assert_eq!(fs.correct, ts.correct);
            for ((name, a), (_, b)) in fg.groups().into_iter().zip(tg.groups()) {
                let err = normwise_rel_error(&a, &b);
                assert!(err <= 1e-10, "{name}: {err}");
            }
        }
    }

    /// Perturb every real coordinate of every parameter group and compare
    /// with the fused gradients (complex groups: `dL/dRe = 2·Re(∂L/∂w*)`).
    #[test]
    fn fused_matches_finite_differences() {
        let model = perturbed_model(toy_config(7));
        let x = pixels(3, 4, 8);
        let labels = [1, 0, 2, 1];
        let mut trace = EpisodeTrace::new(&model, 3, 4);
        let (_, g) = model.fused_gradients(&x, &labels, &mut trace).unwrap();
        let loss = |m: &RnnModel| {
            let mut tr = EpisodeTrace::new(m, 3, 4);
            m.fused_gradients(&x, &labels, &mut tr).unwrap().0.loss
        };
        let h = 1e-6;
        let fd = |f: &dyn Fn(&mut RnnModel, f64)| {
            let mut up = model.clone();
            f(&mut up, h);
            let mut dn = model.clone();
            f(&mut dn, -h);
            (loss(&up) - loss(&dn)) / (2.0 * h)
        };
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for k in 0..4 {
            for part in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                numeric.push(fd(&|m, s| m.w_in_mut()[k] += part * s));
                analytic.push(2.0 * (part.conj() * g.w_in[k]).re);
                numeric.push(fd(&|m, s| m.b_in_mut()[k] += part * s));
                analytic.push(2.0 * (part.conj() * g.b_in[k]).re);
                for j in 0..3 {
                    numeric.push(fd(&|m, s| m.w_out_mut()[(j, k)] += part * s));
                    analytic.push(2.0 * (part.conj() * g.w_out[(j, k)]).re);
                }
            }
            numeric.push(fd(&|m, s| m.b_act_mut()[k] += s));
            analytic.push(g.b_act[k]);
        }
        for j in 0..3 {
            numeric.push(fd(&|m, s| m.b_out_mut()[j] += Complex64::new(s, 0.0)));
            analytic.push(2.0 * g.b_out[j].re);
        }
        for k in 0..model.mesh().num_phases() {
            numeric.push(fd(&|m, s| {
                m.mesh_mut()
                    .update_phases(|i, v| if i == k { v + s } else { v })
                    .unwrap()
            }));
            analytic.push(g.phases.as_slice()[k]);
        }
        let report = oracle_agreement(&analytic, &numeric, 1e-5, 1e-8);
        assert!(report.passes(), "{report:?}");
    }

    #[test]
    fn zero_rates_repeat_bit_identically() {
        let mut config = toy_config(3);
        config.rates = LearningRates::zero();
        let mut model = perturbed_model(config);
        let before = model.clone();
        let x = pixels(4, 5, 9);
        let labels = [0, 1, 2, 0, 1];
        let mut trace = EpisodeTrace::new(&model, 4, 5);
        let a = model
            .train_step(&x, &labels, GradPath::Fused, &mut trace)
            .unwrap();
        let b = model
            .train_step(&x, &labels, GradPath::Fused, &mut trace)
            .unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(model.mesh(), before.mesh());
        assert_eq!(model.w_out(), before.w_out());
        assert_eq!(model.b_act(), before.b_act());
    }

    #[test]
    fn one_step_decreases_loss_on_same_batch() {
        for path in [GradPath::Fused, GradPath::Tape] {
            let mut model = perturbed_model(toy_config(11));
            let x = pixels(5, 5, 12);
            let labels = [0, 1, 2, 0, 1];
            let mut trace = EpisodeTrace::new(&model, 5, 5);
            let first = model.train_step(&x, &labels, path, &mut trace).unwrap();
            let (after, _) = model.fused_gradients(&x, &labels, &mut trace).unwrap();
            assert!(
                after.loss < first.loss,
                "{path}: {} -> {}",
                first.loss,
                after.loss
            );
        }
    }

    #[test]
    fn mesh_stays_unitary_through_training() {
        let mut config = toy_config(13);
        config.rates.hidden = 0.05;
        let mut model = perturbed_model(config);
        let x = pixels(4, 5, 14);
        let labels = [0, 1, 2, 0, 1];
        let mut trace = EpisodeTrace::new(&model, 4, 5);
        for _ in 0..20 {
            model
                .train_step(&x, &labels, GradPath::Fused, &mut trace)
                .unwrap();
        }
        assert!(mesh_to_matrix(model.mesh()).unitarity_residual() < 1e-10);
    }

    #[test]
    fn readout_ignores_global_phase() {
        let model = perturbed_model(toy_config(15));
        let mut rotated = model.clone();
        let e = Complex64::cis(0.731);
        rotated.w_out_mut().scale(e);
        for b in rotated.b_out_mut() {
            *b *= e;
        }
        let x = pixels(4, 3, 16);
        let mut trace = EpisodeTrace::new(&model, 4, 3);
        let a = model.forward(&x, &mut trace).unwrap();
        let b = rotated.forward(&x, &mut trace).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
    }

    #[test]
    fn predict_matches_forward() {
        let model = perturbed_model(toy_config(17));
        let x = pixels(5, 6, 18);
        let mut trace = EpisodeTrace::new(&model, 5, 6);
        let a = model.forward(&x, &mut trace).unwrap();
        let mut ws = crate::mesh::SweepWorkspace::new(model.mesh(), 1);
        let b = model.predict(&x, &mut ws).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cotangent_norm_preserved_through_mesh_in_bptt() {
        let model = perturbed_model(toy_config(19));
        let x = pixels(4, 3, 20);
        let mut trace = EpisodeTrace::new(&model, 4, 3);
        model.forward(&x, &mut trace).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g0 = ComplexMatrix::from_fn(4, 3, |_, _| Complex64::new(rng.random(), rng.random()));
        let mut ws = crate::mesh::SweepWorkspace::new(model.mesh(), 3);
        crate::mesh::forward_sweep(model.mesh(), &g0, &mut ws).unwrap();
        let (g1, _) = crate::engine::fused_backward_sweep(model.mesh(), &mut ws, &g0).unwrap();
        assert!((g1.frobenius_norm() - g0.frobenius_norm()).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = perturbed_model(toy_config(23));
        let x = pixels(3, 5, 24);
        let labels = [0, 1, 2, 0, 1];
        let mut trace = EpisodeTrace::new(&model, 3, 5);
        model
            .train_step(&x, &labels, GradPath::Fused, &mut trace)
            .unwrap();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back.w_in(), model.w_in());
        assert_eq!(back.w_out(), model.w_out());
        assert_eq!(back.b_act(), model.b_act());
        assert_eq!(back.optimizer(), model.optimizer());
        assert_eq!(back.config(), model.config());
        assert!(mesh_to_matrix(back.mesh()).max_abs_diff(&mesh_to_matrix(model.mesh())) < 1e-14);
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn checkpoint_rejects_bad_lengths() {
        let model = RnnModel::new(toy_config(25)).unwrap();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let broken = text.replace("B_ACT ", "B_ACT 1.0,");
        assert!(matches!(
            read_model(broken.as_bytes()),
            Err(Error::Checkpoint { .. })
        ));
        let truncated: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            read_model(truncated.as_bytes()),
            Err(Error::Checkpoint { .. })
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let mut model = perturbed_model(toy_config(27));
        model.w_out_mut().as_mut_slice()[0] = Complex64::new(f64::INFINITY, 0.0);
        let x = pixels(2, 5, 28);
        let mut trace = EpisodeTrace::new(&model, 2, 5);
        let err = model
            .train_step(&x, &[0, 1, 2, 0, 1], GradPath::Fused, &mut trace)
            .unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            RnnConfig {
                hidden: 1,
                ..RnnConfig::default()
            },
            RnnConfig {
                output: 1,
                ..RnnConfig::default()
            },
            RnnConfig {
                layers: 0,
                ..RnnConfig::default()
            },
            RnnConfig {
                rates: LearningRates {
                    hidden: -1.0,
                    ..LearningRates::default()
                },
                ..RnnConfig::default()
            },
        ] {
            assert!(matches!(
                RnnModel::new(bad),
                Err(Error::InvalidParameter(_))
            ));
        }
    }
}
