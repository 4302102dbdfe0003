//! DDPM machinery: linear noise schedule, ε-prediction network, training,
//! ancestral sampling, and mask-conditioned inpainting.

mod checkpoint;
mod model;
mod sampler;
mod schedule;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use model::{Architecture, EpsilonModel};
pub use sampler::{
    denoise_step, diffuse_to, inpaint, inpaint_batch, regenerate, regenerate_batch, sample, sample_batch, InpaintJob,
};
pub use schedule::{time_embedding, NoiseSchedule, ScheduleSpec};
pub use train::{train, TrainConfig};
