use alloc::vec::Vec;

use rand::seq::index;

use super::{BoundParams, Params, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Check at most this many coordinates per tensor (all when `None`).
    pub max_coords: Option<usize>,
    /// Chooses the coordinate subset when `max_coords` applies.
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GradcheckError {
    #[error("function output is not finite")]
    NonFiniteOutput,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn eval<F>(params: &Params, f: &F) -> Result<f64, GradcheckError>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let bound = params.bind_constant(&mut tape);
    let out = match f(&mut tape, &bound) {
        Ok(v) => v,
        Err(TensorError::NonFinite { .. }) => return Err(GradcheckError::NonFiniteOutput),
        Err(e) => return Err(e.into()),
    };
    let v = tape.value(out).get(0, 0);
    if !v.is_finite() {
        return Err(GradcheckError::NonFiniteOutput);
    }
    Ok(v)
}

/// Maximum of `|a − n| / max(1, |a|, |n|)` between tape gradients `a` and
/// central finite differences `n` of the scalar `f` over `params`.
pub fn gradcheck<F>(params: &Params, f: F, cfg: &GradcheckConfig) -> Result<f64, GradcheckError>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = match f(&mut tape, &bound) {
        Ok(v) => v,
        Err(TensorError::NonFinite { .. }) => return Err(GradcheckError::NonFiniteOutput),
        Err(e) => return Err(e.into()),
    };
    let grads = tape.backward(loss)?;

    let mut rng = crate::rng::stream(cfg.seed, 0x6772_6164, 0);
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let n = value.data().len();
        let analytic = grads.get(bound.var(name));
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < n => index::sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = value.data()[i];
            probe.get_mut(name).expect("same keys").data_mut()[i] = orig + cfg.step;
            let plus = eval(&probe, &f)?;
            probe.get_mut(name).expect("same keys").data_mut()[i] = orig - cfg.step;
            let minus = eval(&probe, &f)?;
            probe.get_mut(name).expect("same keys").data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic.map_or(0.0, |g| g.data()[i]);
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
