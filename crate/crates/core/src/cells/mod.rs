//! Recurrent cells, dense layers, parameter storage and Adam.

mod gru;
mod lstm;
mod mlp;
mod params;

pub use gru::{BoundGru, GruCell};
pub use lstm::{BoundLstm, LstmCell, LstmState};
pub(crate) use lstm::check_dim;
pub use mlp::{BoundLinear, BoundMlp, Linear, Mlp};
pub use params::{Adam, ParamEntry, ParamStore, INIT_RANGE};

use crate::error::Result;
use crate::numcore::gradcheck::{relative_error, EPSILON};

/// Per-parameter outcome of a finite-difference check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub per_param: Vec<(String, f64)>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Compares analytic gradients with central differences on every scalar of
/// every parameter in `store`.
///
/// `analytic` must leave the gradient of the loss in the store's gradient
/// slots; `loss` evaluates the loss at the store's current values.
pub fn check_gradients(
    store: &mut ParamStore,
    analytic: impl FnOnce(&mut ParamStore) -> Result<()>,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<GradCheck> {
    store.zero_grads();
    analytic(store)?;
    let ids: Vec<_> = store.ids().collect();
    let mut per_param = Vec::with_capacity(ids.len());
    for id in ids {
        let analytic = store
            .entry(id)
            .grad()
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; store.value(id).numel()]);
        let original = store.value(id).data().to_vec();
        let mut numeric = Vec::with_capacity(original.len());
        for i in 0..original.len() {
            store.value_mut(id).data_mut()[i] = original[i] + EPSILON;
            let plus = loss(store)?;
            store.value_mut(id).data_mut()[i] = original[i] - EPSILON;
            let minus = loss(store)?;
            store.value_mut(id).data_mut()[i] = original[i];
            numeric.push((plus - minus) / (2.0 * EPSILON));
        }
        per_param.push((
            store.entry(id).name().to_string(),
            relative_error(&analytic, &numeric),
        ));
    }
    Ok(GradCheck { per_param })
}
