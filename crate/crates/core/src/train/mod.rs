//! Objectives, optimizer, per-scene fitting and the amortized predictor.

mod adam;
mod amortized;
mod fit;
mod loss;
mod net;
mod objective;

pub use adam::{adam_step, AdamConfig, OptimState};
pub use fit::{fit_splatter, initial_pixel, initial_splatter, FitConfig, FitResult};
pub use loss::{
    l2_loss, l2_values, photometric_loss, reg_big, reg_big_grad, reg_small, reg_small_grad,
    LossConfig,
};
pub use objective::{activation_backward, splatter_objective, GridSpec};
pub use amortized::{
    mean_image_psnr, predict_cloud, predictor_psnr, train_predictor, PredictorConfig,
    PredictorResult,
};
pub use net::{
    predictor_backward, predictor_forward, ConvLayer, ForwardTrace, PredictorNet, HIDDEN_CHANNELS,
    LEAKY_SLOPE, SPNT_MAGIC, SPNT_VERSION,
};
