//! `ylab` command-line front end: subcommand dispatch, flat key-value
//! configuration, and byte-exact CSV/JSON emission over the core library.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use error::{CliError, CliResult};

/// Parses `argv` and runs the selected subcommand. Help requests print to
/// stdout and succeed; other outcomes follow the exit-code contract
/// (0 success, 1 run failure, 2 usage error) via [`CliError::exit_code`].
pub fn run(argv: &[String]) -> CliResult<()> {
    let registry = commands::registry();
    let env_seed = std::env::var("YLAB_SEED").ok();
    match config::parse(argv, &registry, env_seed.as_deref())? {
        config::ParseOutcome::Help(text) => {
            print!("{text}");
            Ok(())
        }
        config::ParseOutcome::Run(cfg) => commands::dispatch(&cfg),
    }
}
