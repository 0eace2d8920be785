//! Procedural scenes, image metrics and file formats used by experiments.

mod gradcheck;
mod io;
mod metrics;
mod scene;

pub(crate) use metrics::ssim_raw;

pub use gradcheck::{check_cloud, run_gradcheck, GradcheckConfig, GradcheckReport, ParamCheck, ParamKind};
pub use io::{image_from_bytes, image_to_bytes, read_imgf, write_imgf, write_png, IMGF_MAGIC};
pub use metrics::{evaluate, mean_image, mse, psnr, ssim, Metrics, SSIM_SIGMA, SSIM_WINDOW};
pub use scene::{
    dataset_seeds, generate_cloud, generate_scene, held_out_count, load_scene, load_scenes,
    look_at_origin, orbit_camera, random_gaussian, save_dataset, save_scene, CameraRecord, Scene,
    View, CAMERA_DISTANCE, HALF_FOV_TAN, MAX_LOG_SCALE, MIN_LOG_SCALE, ORACLE_T_MAX, SCENE_Z_FAR,
    SCENE_Z_NEAR,
};
