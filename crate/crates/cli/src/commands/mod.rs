pub mod ablate;
pub mod common;
pub mod edit;
pub mod generate;
pub mod train;
pub mod viz;

pub use ablate::{cmd_ablate, AblateOutputs};
pub use edit::{cmd_edit, EditOutputs};
pub use generate::{cmd_generate, GenerateOutputs};
pub use train::{cmd_train, TrainOutputs};
pub use viz::{cmd_viz_attn, VizOutputs};
