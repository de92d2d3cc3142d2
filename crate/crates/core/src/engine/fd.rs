use crate::error::{Error, Result};
use crate::mesh::RectangularMesh;

/// Central-difference `dL/dφ` for every phase of `mesh`, in sweep order.
pub fn finite_difference_gradient<F>(loss: F, mesh: &RectangularMesh, step: f64) -> Result<Vec<f64>>
where
    F: Fn(&RectangularMesh) -> Result<f64>,
{
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let base = mesh.phases_flat();
    let mut probe = mesh.clone();
    let mut shifted = base.clone();
    let mut grad = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        shifted[k] = base[k] + step;
        probe.set_phases_flat(&shifted)?;
        let up = loss(&probe)?;
        shifted[k] = base[k] - step;
        probe.set_phases_flat(&shifted)?;
        let down = loss(&probe)?;
        shifted[k] = base[k];
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, BasicUnit, PhaseInit};

    #[test]
    fn recovers_sine_derivative() {
        let mesh = build_mesh(
            2,
            1,
            BasicUnit::Psdc,
            false,
            PhaseInit::Explicit(vec![vec![0.3]]),
        )
        .unwrap();
        let g = finite_difference_gradient(|m| Ok(m.phases_flat()[0].sin()), &mesh, 1e-5).unwrap();
        assert!((g[0] - 0.3f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_step() {
        let mesh = build_mesh(2, 1, BasicUnit::Psdc, false, PhaseInit::Zero).unwrap();
        assert!(finite_difference_gradient(|_| Ok(0.0), &mesh, 0.0).is_err());
    }
}
