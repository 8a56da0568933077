use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::kspace::{BoundaryData, KSpaceSolver};
use crate::models::Model;
use crate::scalar::Real;

fn record_var<'a, T: Real>(g: &mut Graph<'a, T>, data: &BoundaryData<T>) -> Result<Var> {
    Ok(g.constant(Tensor::new(vec![data.n_det(), data.n_time()], data.values().to_vec())?))
}

/// `(1/N) Σ ‖gᵢ − wᵢ‖ / ‖gᵢ‖` on the tape.
fn misfit_on<'a, T: Real>(g: &mut Graph<'a, T>, observed: &[Var], simulated: &[Var]) -> Result<Var> {
    let scale = 1.0 / observed.len() as f64;
    let mut total: Option<Var> = None;
    for (i, (&obs, &sim)) in observed.iter().zip(simulated).enumerate() {
        let norm = g.value(obs).iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormData { index: i });
        }
        let d = g.sub(obs, sim)?;
        let r = g.norm2(d);
        let term = g.scale(r, T::lit(scale / norm));
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))
}

/// Mean relative misfit of paired arrays.
pub fn relative_misfit<T: Real>(observed: &[&[T]], simulated: &[&[T]]) -> Result<f64> {
    if observed.len() != simulated.len() {
        return Err(Error::shape("relative_misfit", "batch sizes differ"));
    }
    let mut g = Graph::new();
    let mut obs = Vec::with_capacity(observed.len());
    let mut sim = Vec::with_capacity(observed.len());
    for (o, s) in observed.iter().zip(simulated) {
        if o.len() != s.len() {
            return Err(Error::shape("relative_misfit", "array sizes differ"));
        }
        obs.push(g.constant(Tensor::new(vec![o.len()], o.to_vec())?));
        sim.push(g.constant(Tensor::new(vec![s.len()], s.to_vec())?));
    }
    let loss = misfit_on(&mut g, &obs, &sim)?;
    Ok(g.value(loss)[0].as_f64())
}

/// Records `W_{M(R(gᵢ))}(R(gᵢ))` for every record of the batch, pairing
/// consecutive records into one two-lane simulation.
fn simulate_batch<'a, T: Real>(
    g: &mut Graph<'a, T>,
    p: &[Var],
    model: &Model<T>,
    solver: &'a KSpaceSolver<T>,
    observed: &[Var],
) -> Result<Vec<Var>> {
    let grid = solver.grid();
    let mut fields = Vec::with_capacity(observed.len());
    for &obs in observed {
        let f_hat = model.recon().forward(g, p, obs)?;
        let speed = model.mapping().speed_field(g, p, f_hat, grid)?;
        fields.push((f_hat, speed));
    }
    let mut out = Vec::with_capacity(observed.len());
    for chunk in fields.chunks(2) {
        match chunk {
            [(fa, sa), (fb, sb)] => out.extend(solver.simulate_pair_on(g, [*fa, *fb], [*sa, *sb])?),
            [(f, s)] => out.push(solver.simulate_on(g, *f, *s)?),
            _ => unreachable!(),
        }
    }
    Ok(out)
}

fn build<'a, T: Real>(
    g: &mut Graph<'a, T>,
    model: &'a Model<T>,
    solver: &'a KSpaceSolver<T>,
    batch: &[&BoundaryData<T>],
) -> Result<(Vec<Var>, Var)> {
    let m = model.config().m;
    if batch.iter().any(|b| b.n_det() != m || b.n_time() != m) {
        return Err(Error::shape("self_supervised_loss", format!("records must be {m} × {m}")));
    }
    let p = model.params().attach(g);
    let observed = batch.iter().map(|b| record_var(g, b)).collect::<Result<Vec<_>>>()?;
    let simulated = simulate_batch(g, &p, model, solver, &observed)?;
    let loss = misfit_on(g, &observed, &simulated)?;
    Ok((p, loss))
}

/// `(1/N) Σ ‖gᵢ − W_M(R(gᵢ))‖ / ‖gᵢ‖` over a batch of records.
pub fn self_supervised_loss<T: Real>(model: &Model<T>, solver: &KSpaceSolver<T>, batch: &[&BoundaryData<T>]) -> Result<f64> {
    let mut g = Graph::new();
    let (_, loss) = build(&mut g, model, solver, batch)?;
    Ok(g.value(loss)[0].as_f64())
}

/// Loss and its gradient with respect to every model parameter, in
/// parameter order.
pub fn loss_and_gradients<T: Real>(
    model: &Model<T>,
    solver: &KSpaceSolver<T>,
    batch: &[&BoundaryData<T>],
) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let (p, loss) = build(&mut g, model, solver, batch)?;
    let value = g.value(loss)[0].as_f64();
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let grads = g.backward(loss)?;
    Ok((value, p.iter().map(|&v| grads.tensor(&g, v)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misfit_matches_hand_arithmetic() {
        let g1: Vec<f64> = (1..=16).map(f64::from).collect();
        let w1: Vec<f64> = g1.iter().map(|v| v + 1.0).collect();
        let mut g2 = vec![0.0; 16];
        g2[0] = 3.0;
        g2[5] = 4.0;
        let w2 = vec![0.0; 16];
        // ‖g1‖² = 1496, ‖g1 − w1‖ = 4; ‖g2‖ = 5 = ‖g2 − w2‖
        let want = 0.5 * (4.0 / 1496f64.sqrt() + 1.0);
        let got = relative_misfit(&[&g1, &g2], &[&w1, &w2]).unwrap();
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        let swapped = relative_misfit(&[&g2, &g1], &[&w2, &w1]).unwrap();
        assert!((swapped - want).abs() <= 1e-12);
    }

    #[test]
    fn zero_norm_record_is_an_error() {
        let z = vec![0.0f64; 16];
        let w = vec![1.0f64; 16];
        assert!(matches!(relative_misfit(&[&z], &[&w]), Err(Error::ZeroNormData { index: 0 })));
    }
}
