//! Loss, optimizer, schedule, view sampling and the training loop.

mod adam;
mod config;
mod trainer;
mod views;

pub use adam::Adam;
pub use config::TrainConfig;
pub use trainer::{train_loop, StepLog, TrainBatch, Trainer};
pub use views::{nearest_sources, rank_by_angle, sample_source_target};

use crate::tensor::{Graph, Scalar, Var};
use crate::{Error, Result};

/// Mean over rays and channels of the squared difference.
pub fn mse_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(gt) {
        return Err(Error::Contract(format!(
            "prediction {:?} and target {:?} differ in shape",
            g.shape(pred),
            g.shape(gt)
        )));
    }
    let d = g.sub(pred, gt)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean_all(sq)?)
}
