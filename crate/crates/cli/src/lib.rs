//! Command implementations behind the `unfold` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use commands::{cmd_ablate, cmd_edit, cmd_generate, cmd_train, cmd_viz_attn};
pub use config::{Command, ConfigMap, RunConfig};
pub use error::CliError;

/// Runs the command named in `cfg`, returning a one-line summary.
pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    if cfg.threads > 0 {
        // Fails harmlessly if the pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    Ok(match cfg.command {
        Command::Generate => format!("wrote {}", cmd_generate(cfg)?.target.display()),
        Command::Edit => format!("wrote {}", cmd_edit(cfg)?.after.display()),
        Command::Train => {
            let o = cmd_train(cfg)?;
            format!("trained to step {}; wrote {}", o.final_step, o.checkpoint.display())
        }
        Command::Ablate => format!("wrote {}", cmd_ablate(cfg)?.summary_csv.display()),
        Command::VizAttn => format!("wrote {} heatmaps", cmd_viz_attn(cfg)?.heatmaps.len()),
    })
}
