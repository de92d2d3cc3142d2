use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;

use super::units::{dcps_adjoint, phase_derivative, psdc_adjoint};
use super::PhaseGradients;
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::mesh::sweep::{gather, scatter};
use crate::mesh::{BasicUnit, FineLayer, RectangularMesh, SweepWorkspace};

/// Backward through one layer of one column block. `grad` holds `∂L/∂y*`
/// on entry and `∂L/∂x*` on exit; `input`/`output` are the saved
/// activations around the layer.
fn layer_backward(
    layer: &FineLayer,
    phasors: &[Complex64],
    width: usize,
    input: &[Complex64],
    output: &[Complex64],
    grad: &mut [Complex64],
    dphi: &mut [f64],
) {
    if layer.is_diag() {
        for (r, (&e, d)) in phasors.iter().zip(dphi.iter_mut()).enumerate() {
            let rows = r * width..(r + 1) * width;
            let mut acc = 0.0;
            for (g, &y) in grad[rows.clone()].iter_mut().zip(&output[rows]) {
                acc += phase_derivative(y, *g);
                *g *= e.conj();
            }
            *d += acc;
        }
        return;
    }
    let pairs = layer.pairs();
    match layer.basic_unit() {
        BasicUnit::Psdc => {
            for ((&(p, _), &e), d) in pairs.iter().zip(phasors).zip(dphi.iter_mut()) {
                let x1 = &input[p * width..(p + 1) * width];
                let (g1, g2) = grad[p * width..(p + 2) * width].split_at_mut(width);
                let mut acc = 0.0;
                for c in 0..width {
                    let (a, b) = psdc_adjoint(e, g1[c], g2[c]);
                    acc += phase_derivative(x1[c], a);
                    g1[c] = a;
                    g2[c] = b;
                }
                *d += acc;
            }
        }
        BasicUnit::Dcps => {
            for ((&(p, _), &e), d) in pairs.iter().zip(phasors).zip(dphi.iter_mut()) {
                let y1 = &output[p * width..(p + 1) * width];
                let (g1, g2) = grad[p * width..(p + 2) * width].split_at_mut(width);
                let mut acc = 0.0;
                for c in 0..width {
                    acc += phase_derivative(y1[c], g1[c]);
                    let (a, b) = dcps_adjoint(e, g1[c], g2[c]);
                    g1[c] = a;
                    g2[c] = b;
                }
                *d += acc;
            }
        }
    }
}

/// Backward sweep over the activations saved in `ws`.
///
/// `g` holds `∂L/∂y*` for the mesh output on entry and is overwritten with
/// `∂L/∂x*` for the mesh input. Phase derivatives are added to `grads`.
///
/// Within a block, columns are summed left to right; block partial sums are
/// then added to `grads` in block order. Neither order depends on the
/// number of threads.
pub fn fused_backward_into(
    mesh: &RectangularMesh,
    ws: &mut SweepWorkspace,
    g: &mut ComplexMatrix,
    grads: &mut PhaseGradients,
) -> Result<()> {
    ws.check_mesh(mesh)?;
    match ws.stamp {
        None => {
            return Err(Error::Contract(
                "backward without a recorded forward sweep".into(),
            ))
        }
        Some(stamp) if stamp != mesh.fingerprint() => {
            return Err(Error::Contract(
                "mesh phases changed since the forward sweep".into(),
            ))
        }
        _ => {}
    }
    if g.shape() != (ws.n, ws.batch) {
        return Err(Error::Shape(format!(
            "cotangent must be {}x{}, got {:?}",
            ws.n,
            ws.batch,
            g.shape()
        )));
    }
    if grads.len() != mesh.num_phases() {
        return Err(Error::Shape("gradient buffer does not match mesh".into()));
    }
    let started = Instant::now();

    let n = ws.n;
    let phasors = &ws.phasors;
    let offsets = &ws.offsets;
    let layers: Vec<&FineLayer> = mesh.sweep_layers().collect();
    let g_in: &ComplexMatrix = g;
    ws.blocks.par_iter_mut().for_each(|block| {
        let w = block.width;
        let stride = n * w;
        scatter(g_in, block.start, w, &mut block.grad);
        block.dphi.fill(0.0);
        for (j, layer) in layers.iter().enumerate().rev() {
            let k = layer.phases().len();
            let range = offsets[j]..offsets[j] + k;
            layer_backward(
                layer,
                &phasors[range.clone()],
                w,
                &block.acts[j * stride..(j + 1) * stride],
                &block.acts[(j + 1) * stride..(j + 2) * stride],
                &mut block.grad,
                &mut block.dphi[range],
            );
        }
    });
    for block in &ws.blocks {
        gather(&block.grad, block.start, block.width, g);
        for (acc, v) in grads.as_mut_slice().iter_mut().zip(&block.dphi) {
            *acc += v;
        }
    }

    ws.timings.backward_ns += started.elapsed().as_nanos() as u64;
    ws.timings.backward_calls += 1;
    Ok(())
}

/// Returns `(∂L/∂x*, dL/dφ)` given `∂L/∂y*` for the mesh output.
pub fn fused_backward_sweep(
    mesh: &RectangularMesh,
    ws: &mut SweepWorkspace,
    g_out: &ComplexMatrix,
) -> Result<(ComplexMatrix, PhaseGradients)> {
    let mut g = g_out.clone();
    let mut grads = PhaseGradients::zeros(mesh);
    fused_backward_into(mesh, ws, &mut g, &mut grads)?;
    Ok((g, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, forward_sweep, PhaseInit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn missing_forward_is_contract_violation() {
        let mesh = build_mesh(4, 2, BasicUnit::Psdc, false, PhaseInit::Zero).unwrap();
        let mut ws = SweepWorkspace::new(&mesh, 2);
        let g = ComplexMatrix::zeros(4, 2);
        assert!(matches!(
            fused_backward_sweep(&mesh, &mut ws, &g),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn stale_activations_rejected() {
        let mut mesh =
            build_mesh(4, 2, BasicUnit::Psdc, false, PhaseInit::Uniform { seed: 1 }).unwrap();
        let mut ws = SweepWorkspace::new(&mesh, 2);
        let x = ComplexMatrix::identity(4)
            .matmul(&ComplexMatrix::zeros(4, 2))
            .unwrap();
        forward_sweep(&mesh, &x, &mut ws).unwrap();
        mesh.update_phases(|_, v| v + 0.1).unwrap();
        let g = ComplexMatrix::zeros(4, 2);
        assert!(matches!(
            fused_backward_sweep(&mesh, &mut ws, &g),
            Err(Error::Contract(_))
        ));
        ws.invalidate();
        assert!(!ws.is_filled());
    }

    #[test]
    fn identity_phase_mesh_preserves_cotangent_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for unit in [BasicUnit::Psdc, BasicUnit::Dcps] {
            let mesh = build_mesh(6, 5, unit, true, PhaseInit::Zero).unwrap();
            let mut ws = SweepWorkspace::new(&mesh, 3);
            let x = random_matrix(6, 3, &mut rng);
            forward_sweep(&mesh, &x, &mut ws).unwrap();
            let g_out = random_matrix(6, 3, &mut rng);
            let (g_in, _) = fused_backward_sweep(&mesh, &mut ws, &g_out).unwrap();
            assert!((g_in.frobenius_norm() - g_out.frobenius_norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn input_cotangent_is_adjoint_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mesh = build_mesh(7, 9, BasicUnit::Dcps, true, PhaseInit::Uniform { seed: 2 }).unwrap();
        let mut ws = SweepWorkspace::new(&mesh, 5);
        let x = random_matrix(7, 5, &mut rng);
        forward_sweep(&mesh, &x, &mut ws).unwrap();
        let g_out = random_matrix(7, 5, &mut rng);
        let (g_in, _) = fused_backward_sweep(&mesh, &mut ws, &g_out).unwrap();
        let expect = crate::mesh::mesh_to_matrix(&mesh)
            .adjoint()
            .matmul(&g_out)
            .unwrap();
        assert!(g_in.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn gradients_accumulate_and_are_thread_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mesh = build_mesh(
            16,
            10,
            BasicUnit::Psdc,
            true,
            PhaseInit::Uniform { seed: 3 },
        )
        .unwrap();
        let x = random_matrix(16, 37, &mut rng);
        let g_out = random_matrix(16, 37, &mut rng);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut ws = SweepWorkspace::new(&mesh, 37);
                forward_sweep(&mesh, &x, &mut ws).unwrap();
                fused_backward_sweep(&mesh, &mut ws, &g_out).unwrap()
            })
        };
        let (a_in, a) = run(1);
        let (b_in, b) = run(8);
        assert_eq!(a, b);
        assert_eq!(a_in, b_in);

        let mut ws = SweepWorkspace::new(&mesh, 37);
        forward_sweep(&mesh, &x, &mut ws).unwrap();
        let mut twice = PhaseGradients::zeros(&mesh);
        for _ in 0..2 {
            let mut g = g_out.clone();
            fused_backward_into(&mesh, &mut ws, &mut g, &mut twice).unwrap();
        }
        for (t, s) in twice.as_slice().iter().zip(a.as_slice()) {
            assert!((t - 2.0 * s).abs() <= 1e-12 * s.abs().max(1.0));
        }
        assert_eq!(ws.timings.backward_calls, 2);
    }
}
