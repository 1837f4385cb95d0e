//! Small f64 neural-network toolkit with hand-written backpropagation.

mod adam;
pub mod layers;
mod net;

use ndarray::{Array2, Array3, ArrayView2};

pub use adam::{clip_norm, Adam};
pub use net::{ArchConfig, UNet, UNetCache, ValueCache, ValueNet};

/// Stacks `[horizon, features]` trajectories into `[batch, features, horizon]`.
pub fn to_channels(trajs: &[ArrayView2<f64>]) -> Array3<f64> {
    let (h, f) = trajs[0].dim();
    let mut out = Array3::<f64>::zeros((trajs.len(), f, h));
    for (b, t) in trajs.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), b).assign(&t.t());
    }
    out
}

/// Inverse of [`to_channels`] for one batch element.
pub fn from_channels(x: &Array3<f64>, b: usize) -> Array2<f64> {
    x.index_axis(ndarray::Axis(0), b).t().to_owned()
}
